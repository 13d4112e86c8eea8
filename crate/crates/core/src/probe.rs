//! Frozen-encoder linear readout: feature extraction at every hierarchy
//! level, probe training, accuracy definitions, and embedding export.

use std::io::Write;
use std::path::Path;

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{split_dataset, Dataset, Split};
use crate::error::{Error, Result};
use crate::nn::{forward_bundle, Layer, ModelParams};
use crate::rng::{stream, StreamTag};
use crate::tensor::{Adam, AdamConfig, Graph, Tensor};

/// Images are pushed through the encoder in bounded slices.
const EXTRACT_BATCH: usize = 512;

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Object,
    Lighting,
}

impl Task {
    pub const ALL: [Task; 2] = [Task::Object, Task::Lighting];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Object => "object",
            Task::Lighting => "lighting",
        }
    }

    pub fn parse(s: &str) -> Result<Task> {
        match s {
            "object" => Ok(Task::Object),
            "lighting" => Ok(Task::Lighting),
            other => Err(Error::config(
                "task",
                format!("unknown task {other:?}; valid: object, lighting"),
            )),
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Labels for one image set.
#[derive(Clone, Debug)]
pub struct LabelSet {
    pub object_ids: Vec<usize>,
    pub lighting_bits: Vec<[u8; 24]>,
}

/// One split of images plus labels, kept in memory for probing.
pub struct SplitData {
    pub images: Tensor<f32>,
    pub labels: LabelSet,
}

/// Train/val/test data for the probe pipeline.
pub struct ProbeData {
    pub train: SplitData,
    pub val: SplitData,
    pub test: SplitData,
    pub n_objects: usize,
}

impl ProbeData {
    pub fn from_dataset(ds: &Dataset) -> Result<ProbeData> {
        let (train, val, test) = split_dataset(&ds.manifest);
        let load = |idx: &[usize]| -> Result<SplitData> {
            Ok(SplitData {
                images: ds.load_images(idx)?,
                labels: LabelSet {
                    object_ids: idx.iter().map(|&g| ds.record(g).object_id).collect(),
                    lighting_bits: idx.iter().map(|&g| ds.record(g).label).collect(),
                },
            })
        };
        Ok(ProbeData {
            train: load(&train)?,
            val: load(&val)?,
            test: load(&test)?,
            n_objects: ds.manifest.n_objects,
        })
    }

    pub fn split(&self, split: Split) -> &SplitData {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Frozen features of one split at one layer: [frames, layer width].
pub struct FeatureMatrix {
    pub layer: Layer,
    pub split: Split,
    pub data: Tensor<f32>,
}

/// Run the frozen encoder (and head, for z) over `images` and collect the
/// requested layer. Layer x is the flattened raw pixels.
pub fn extract_features(
    params: &ModelParams,
    layer: Layer,
    split: Split,
    images: &Tensor<f32>,
) -> Result<FeatureMatrix> {
    let n = images.shape()[0];
    let width: usize = images.shape()[1..].iter().product();
    if layer == Layer::X {
        return Ok(FeatureMatrix {
            layer,
            split,
            data: images.clone().reshaped(vec![n, width])?,
        });
    }
    let out_width = layer.width(params.d_z());
    let mut data = vec![0.0f32; n * out_width];
    let mut row = 0usize;
    while row < n {
        let hi = (row + EXTRACT_BATCH).min(n);
        let slice = Tensor::new(
            vec![hi - row, 3, 32, 32],
            images.data()[row * width..hi * width].to_vec(),
        )?;
        let bundle = forward_bundle(params, &slice, layer == Layer::Z)?;
        let feats = bundle.layer(layer)?;
        data[row * out_width..hi * out_width].copy_from_slice(feats.data());
        row = hi;
    }
    Ok(FeatureMatrix {
        layer,
        split,
        data: Tensor::new(vec![n, out_width], data)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            epochs: 200,
            lr: 0.001,
            batch: 600,
            seed: 0,
        }
    }
}

/// A trained linear readout.
#[derive(Clone, Debug)]
pub struct LinearProbe {
    pub task: Task,
    pub weight: Tensor<f32>,
    pub bias: Tensor<f32>,
}

fn one_hot(ids: &[usize], classes: usize) -> Tensor<f32> {
    let mut t = Tensor::zeros(vec![ids.len(), classes]);
    for (r, &c) in ids.iter().enumerate() {
        t.data_mut()[r * classes + c] = 1.0;
    }
    t
}

fn bits_matrix(bits: &[[u8; 24]]) -> Tensor<f32> {
    let mut t = Tensor::zeros(vec![bits.len(), 24]);
    for (r, row) in bits.iter().enumerate() {
        for (c, &b) in row.iter().enumerate() {
            t.data_mut()[r * 24 + c] = b as f32;
        }
    }
    t
}

/// Train one affine readout on frozen features: softmax cross-entropy for
/// the object task (width -> n_objects), binary cross-entropy on the
/// 24-bit code for lighting. AdaM, minibatches reshuffled per epoch,
/// weights start at zero; fully deterministic in `cfg.seed`.
pub fn train_linear_probe(
    features: &FeatureMatrix,
    labels: &LabelSet,
    task: Task,
    n_objects: usize,
    cfg: &ProbeConfig,
) -> Result<LinearProbe> {
    let n = features.data.shape()[0];
    let width = features.data.shape()[1];
    if labels.object_ids.len() != n {
        return Err(Error::shape(
            "train_linear_probe",
            format!("{n} feature rows vs {} labels", labels.object_ids.len()),
        ));
    }
    let out_dim = match task {
        Task::Object => n_objects,
        Task::Lighting => 24,
    };
    let targets_full = match task {
        Task::Object => one_hot(&labels.object_ids, n_objects),
        Task::Lighting => bits_matrix(&labels.lighting_bits),
    };

    let mut weight = Tensor::<f32>::zeros(vec![out_dim, width]);
    let mut bias = Tensor::<f32>::zeros(vec![out_dim]);
    let mut adam = Adam::<f32>::new(
        AdamConfig::with_lr(cfg.lr),
        &[weight.clone(), bias.clone()],
    );

    let batch = cfg.batch.min(n).max(1);
    let iters = n / batch;
    let salt = (features.layer as u64) << 8 | task as u64;
    for epoch in 1..=cfg.epochs {
        let mut rng = stream(cfg.seed, StreamTag::Probe, salt, epoch as u64);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for iter in 0..iters.max(1) {
            let rows = &order[iter * batch..((iter + 1) * batch).min(n)];
            let mut fx = vec![0.0f32; rows.len() * width];
            let mut ty = Tensor::<f32>::zeros(vec![rows.len(), out_dim]);
            for (k, &r) in rows.iter().enumerate() {
                fx[k * width..(k + 1) * width]
                    .copy_from_slice(&features.data.data()[r * width..(r + 1) * width]);
                ty.data_mut()[k * out_dim..(k + 1) * out_dim]
                    .copy_from_slice(&targets_full.data()[r * out_dim..(r + 1) * out_dim]);
            }
            let mut g = Graph::new();
            let w_id = g.leaf(weight.clone(), true);
            let b_id = g.leaf(bias.clone(), true);
            let x_id = g.leaf(Tensor::new(vec![rows.len(), width], fx)?, false);
            let logits = g.affine(x_id, w_id, b_id)?;
            let loss = match task {
                Task::Object => g.softmax_cross_entropy(logits, &ty)?,
                Task::Lighting => g.bce_with_logits(logits, &ty)?,
            };
            g.backward(loss)?;
            let grads = vec![
                g.grad(w_id).expect("weight grad").to_vec(),
                g.grad(b_id).expect("bias grad").to_vec(),
            ];
            let mut tensors = vec![weight, bias];
            adam.step(&mut tensors, &grads)?;
            bias = tensors.pop().unwrap();
            weight = tensors.pop().unwrap();
        }
    }
    Ok(LinearProbe { task, weight, bias })
}

/// Raw affine outputs of a probe on a feature matrix.
pub fn probe_logits(probe: &LinearProbe, features: &FeatureMatrix) -> Tensor<f32> {
    let (n, width) = (features.data.shape()[0], features.data.shape()[1]);
    let out_dim = probe.weight.shape()[0];
    let mut logits = vec![0.0f32; n * out_dim];
    let x = ArrayView2::from_shape((n, width), features.data.data()).expect("x");
    let w = ArrayView2::from_shape((out_dim, width), probe.weight.data()).expect("w");
    let mut o = ArrayViewMut2::from_shape((n, out_dim), &mut logits[..]).expect("o");
    general_mat_mul(1.0, &x, &w.t(), 0.0, &mut o);
    for row in logits.chunks_exact_mut(out_dim) {
        for (v, &b) in row.iter_mut().zip(probe.bias.data()) {
            *v += b;
        }
    }
    Tensor::new(vec![n, out_dim], logits).expect("logits shape")
}

/// Accuracy definitions.
/// Object: fraction of frames whose argmax logit names the right object
/// (first index wins ties). Lighting: sigmoid-threshold each logit at 0.5,
/// a spotlight counts only if all three of its bits match; averaged over
/// all 8 spotlights and all frames. Chance levels: 1/n_objects and 1/8.
pub fn evaluate_probe(
    probe: &LinearProbe,
    features: &FeatureMatrix,
    labels: &LabelSet,
) -> Result<f64> {
    let logits = probe_logits(probe, features);
    let n = logits.shape()[0];
    let out_dim = logits.shape()[1];
    match probe.task {
        Task::Object => {
            if labels.object_ids.len() != n {
                return Err(Error::shape("evaluate_probe", "label count mismatch".to_string()));
            }
            let mut correct = 0usize;
            for (r, &want) in labels.object_ids.iter().enumerate() {
                let row = &logits.data()[r * out_dim..(r + 1) * out_dim];
                let mut best = 0usize;
                for (c, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = c;
                    }
                }
                if best == want {
                    correct += 1;
                }
            }
            Ok(correct as f64 / n as f64)
        }
        Task::Lighting => {
            if labels.lighting_bits.len() != n {
                return Err(Error::shape("evaluate_probe", "label count mismatch".to_string()));
            }
            let mut correct = 0usize;
            for (r, bits) in labels.lighting_bits.iter().enumerate() {
                let row = &logits.data()[r * 24..(r + 1) * 24];
                for light in 0..8 {
                    let ok = (0..3).all(|c| {
                        let predicted = row[3 * light + c] > 0.0; // sigmoid > 0.5
                        predicted == (bits[3 * light + c] == 1)
                    });
                    if ok {
                        correct += 1;
                    }
                }
            }
            Ok(correct as f64 / (8 * n) as f64)
        }
    }
}

/// Train on the train split, evaluate on all three.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub layer: Layer,
    pub task: Task,
    pub seed: u64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
}

pub fn probe_layer_task(
    params: &ModelParams,
    layer: Layer,
    task: Task,
    data: &ProbeData,
    cfg: &ProbeConfig,
) -> Result<(ProbeOutcome, LinearProbe)> {
    let train_f = extract_features(params, layer, Split::Train, &data.train.images)?;
    let probe = train_linear_probe(&train_f, &data.train.labels, task, data.n_objects, cfg)?;
    let train_acc = evaluate_probe(&probe, &train_f, &data.train.labels)?;
    drop(train_f);
    let val_f = extract_features(params, layer, Split::Val, &data.val.images)?;
    let val_acc = evaluate_probe(&probe, &val_f, &data.val.labels)?;
    drop(val_f);
    let test_f = extract_features(params, layer, Split::Test, &data.test.images)?;
    let test_acc = evaluate_probe(&probe, &test_f, &data.test.labels)?;
    Ok((
        ProbeOutcome {
            layer,
            task,
            seed: cfg.seed,
            train_acc,
            val_acc,
            test_acc,
        },
        probe,
    ))
}

/// One row per frame: frame id, object id, the 24 label bits, then the
/// feature vector. Deterministic bytes for a fixed checkpoint.
pub fn export_embeddings(
    params: &ModelParams,
    layer: Layer,
    split: Split,
    data: &SplitData,
    frame_ids: &[usize],
    path: &Path,
) -> Result<()> {
    let features = extract_features(params, layer, split, &data.images)?;
    let n = features.data.shape()[0];
    let width = features.data.shape()[1];
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| Error::io(path, e))?,
    );
    // Header
    let mut line = String::from("frame,object_id,label");
    for i in 0..width {
        line.push_str(&format!(",f{i}"));
    }
    line.push('\n');
    out.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    for r in 0..n {
        let bits: String = data.labels.lighting_bits[r]
            .iter()
            .map(|b| if *b == 1 { '1' } else { '0' })
            .collect();
        let mut line = format!(
            "{},{},{}",
            frame_ids.get(r).copied().unwrap_or(r),
            data.labels.object_ids[r],
            bits
        );
        for v in &features.data.data()[r * width..(r + 1) * width] {
            line.push(',');
            line.push_str(&format!("{v}"));
        }
        line.push('\n');
        out.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_params;
    use rand::Rng;

    /// 50 well-separated clusters: orthogonal-ish centers, tiny noise.
    fn separable_features(n_classes: usize, per_class: usize, width: usize) -> (FeatureMatrix, LabelSet) {
        let mut rng = stream(1, StreamTag::Probe, 7, 7);
        let n = n_classes * per_class;
        let mut data = vec![0.0f32; n * width];
        let mut ids = Vec::with_capacity(n);
        for c in 0..n_classes {
            for k in 0..per_class {
                let r = c * per_class + k;
                data[r * width + (c % width)] = 1.0;
                for v in data[r * width..(r + 1) * width].iter_mut() {
                    *v += (rng.gen::<f64>() as f32 - 0.5) * 0.01;
                }
                ids.push(c);
            }
        }
        (
            FeatureMatrix {
                layer: Layer::H,
                split: Split::Train,
                data: Tensor::new(vec![n, width], data).unwrap(),
            },
            LabelSet {
                object_ids: ids,
                lighting_bits: vec![[0u8; 24]; n],
            },
        )
    }

    #[test]
    fn separable_clusters_reach_perfect_accuracy() {
        let (features, labels) = separable_features(50, 4, 64);
        let cfg = ProbeConfig {
            epochs: 60,
            batch: 50,
            ..Default::default()
        };
        let probe = train_linear_probe(&features, &labels, Task::Object, 50, &cfg).unwrap();
        let acc = evaluate_probe(&probe, &features, &labels).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn lighting_head_width_is_24_and_object_head_matches_classes() {
        let (features, labels) = separable_features(5, 3, 16);
        let cfg = ProbeConfig {
            epochs: 1,
            batch: 5,
            ..Default::default()
        };
        let p = train_linear_probe(&features, &labels, Task::Lighting, 5, &cfg).unwrap();
        assert_eq!(p.weight.shape(), &[24, 16]);
        let p2 = train_linear_probe(&features, &labels, Task::Object, 5, &cfg).unwrap();
        assert_eq!(p2.weight.shape(), &[5, 16]);
    }

    #[test]
    fn object_accuracy_is_scale_invariant_and_chance_behaves() {
        let (features, labels) = separable_features(4, 5, 8);
        let cfg = ProbeConfig {
            epochs: 30,
            batch: 10,
            ..Default::default()
        };
        let mut probe = train_linear_probe(&features, &labels, Task::Object, 4, &cfg).unwrap();
        let a1 = evaluate_probe(&probe, &features, &labels).unwrap();
        for v in probe.weight.data_mut() {
            *v *= 3.5;
        }
        for v in probe.bias.data_mut() {
            *v *= 3.5;
        }
        let a2 = evaluate_probe(&probe, &features, &labels).unwrap();
        assert_eq!(a1, a2, "argmax accuracy ignores positive logit rescaling");
    }

    #[test]
    fn all_off_constant_predictor_scores_the_off_rate() {
        // Zero logits -> all bits predicted 0 -> a light counts as correct
        // exactly when it is off.
        let n = 200;
        let mut rng = stream(5, StreamTag::Probe, 1, 1);
        let mut bits = Vec::with_capacity(n);
        let mut off = 0usize;
        for _ in 0..n {
            let mut b = [0u8; 24];
            for light in 0..8 {
                if rng.gen::<f64>() < 0.5 {
                    for c in 0..3 {
                        b[3 * light + c] = (rng.gen::<u64>() % 2) as u8;
                    }
                    if b[3 * light..3 * light + 3] == [0, 0, 0] {
                        off += 1; // sampled color happened to be the off code
                    }
                } else {
                    off += 1;
                }
            }
            bits.push(b);
        }
        let labels = LabelSet {
            object_ids: vec![0; n],
            lighting_bits: bits,
        };
        let features = FeatureMatrix {
            layer: Layer::H,
            split: Split::Test,
            data: Tensor::zeros(vec![n, 4]),
        };
        let probe = LinearProbe {
            task: Task::Lighting,
            weight: Tensor::zeros(vec![24, 4]),
            bias: Tensor::zeros(vec![24]),
        };
        let acc = evaluate_probe(&probe, &features, &labels).unwrap();
        assert!((acc - off as f64 / (8 * n) as f64).abs() < 1e-12);
    }

    #[test]
    fn perfect_logits_score_one_on_both_tasks() {
        let labels = LabelSet {
            object_ids: vec![0, 1, 2],
            lighting_bits: vec![[1u8; 24], [0u8; 24], {
                let mut b = [0u8; 24];
                b[0] = 1;
                b
            }],
        };
        // A probe whose per-class bias dominates reproduces any desired
        // constant logits; drive both tasks to a perfect score with it.
        let mut obj_probe = LinearProbe {
            task: Task::Object,
            weight: Tensor::zeros(vec![3, 2]),
            bias: Tensor::zeros(vec![3]),
        };
        let _ = &labels;
        // Per-row features select the right class through the weight matrix.
        let mut feat = Tensor::<f32>::zeros(vec![3, 2]);
        feat.data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        obj_probe.weight.data_mut().copy_from_slice(&[10.0, 0.0, 0.0, 10.0, 6.0, 6.0]);
        let obj_feat = FeatureMatrix {
            layer: Layer::X,
            split: Split::Test,
            data: feat,
        };
        assert_eq!(
            evaluate_probe(&obj_probe, &obj_feat, &labels).unwrap(),
            1.0
        );
        let probe = LinearProbe {
            task: Task::Lighting,
            weight: Tensor::zeros(vec![24, 2]),
            bias: Tensor::from_fn(vec![24], |_| 10.0),
        };
        let one_label = LabelSet {
            object_ids: vec![0],
            lighting_bits: vec![[1u8; 24]],
        };
        let one_feat = FeatureMatrix {
            layer: Layer::X,
            split: Split::Test,
            data: Tensor::zeros(vec![1, 2]),
        };
        assert_eq!(evaluate_probe(&probe, &one_feat, &one_label).unwrap(), 1.0);
    }

    #[test]
    fn extraction_is_frozen_and_repeatable() {
        let params = init_params(3, 16);
        let images = Tensor::from_fn(vec![20, 3, 32, 32], |i| ((i * 31) % 256) as f32 / 255.0);
        let before = params.clone();
        let a = extract_features(&params, Layer::H, Split::Test, &images).unwrap();
        let b = extract_features(&params, Layer::H, Split::Test, &images).unwrap();
        assert_eq!(a.data, b.data);
        assert_eq!(params, before, "extraction must not mutate parameters");
        assert_eq!(a.data.shape(), &[20, 84]);

        let x = extract_features(&params, Layer::X, Split::Test, &images).unwrap();
        assert_eq!(x.data.shape(), &[20, 3072]);
        let z = extract_features(&params, Layer::Z, Split::Test, &images).unwrap();
        assert_eq!(z.data.shape(), &[20, 16]);
    }

    #[test]
    fn probe_training_leaves_encoder_untouched() {
        let params = init_params(4, 16);
        let images = Tensor::from_fn(vec![30, 3, 32, 32], |i| ((i * 17) % 100) as f32 / 99.0);
        let labels = LabelSet {
            object_ids: (0..30).map(|i| i % 3).collect(),
            lighting_bits: vec![[0u8; 24]; 30],
        };
        let snapshot = params.clone();
        let features = extract_features(&params, Layer::H, Split::Train, &images).unwrap();
        let cfg = ProbeConfig {
            epochs: 3,
            batch: 10,
            ..Default::default()
        };
        train_linear_probe(&features, &labels, Task::Object, 3, &cfg).unwrap();
        assert_eq!(params, snapshot);
    }

    #[test]
    fn export_is_deterministic_and_well_formed() {
        let params = init_params(6, 8);
        let images = Tensor::from_fn(vec![5, 3, 32, 32], |i| (i % 7) as f32 / 6.0);
        let data = SplitData {
            images,
            labels: LabelSet {
                object_ids: vec![0, 1, 2, 3, 4],
                lighting_bits: vec![[1u8; 24]; 5],
            },
        };
        let dir = std::env::temp_dir().join("cubelight_export_test");
        std::fs::create_dir_all(&dir).unwrap();
        let p1 = dir.join("a.csv");
        let p2 = dir.join("b.csv");
        let ids = vec![100, 101, 102, 103, 104];
        export_embeddings(&params, Layer::H, Split::Test, &data, &ids, &p1).unwrap();
        export_embeddings(&params, Layer::H, Split::Test, &data, &ids, &p2).unwrap();
        let a = std::fs::read(&p1).unwrap();
        let b = std::fs::read(&p2).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 6); // header + 5 rows
        assert_eq!(lines[0].split(',').count(), 3 + 84);
        assert!(lines[1].starts_with("100,0,111111111111111111111111"));
        std::fs::remove_dir_all(dir).ok();
    }
}

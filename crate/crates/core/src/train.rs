//! Self-supervised temporal contrastive training plus the two baselines:
//! color-jitter contrastive and supervised cross-entropy.
//!
//! A batch of 2N images holds N anchors and, at offset +N, their positive
//! partners: the immediate temporal successor (ssl), an independent jitter
//! of the same base render (jitter), or nothing special (supervised, which
//! just consumes 2N labeled images).

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::color::{hsv_to_rgb, rgb_to_hsv};
use crate::dataset::{split_dataset, Dataset};
use crate::error::{Error, Result};
use crate::nn::{
    encoder_graph, init_params, projection_graph, register_params, ModelParams, PARAM_NAMES,
};
use crate::rng::{stream, StreamTag};
use crate::tensor::{Adam, AdamConfig, AdamSnapshot, Checkpoint, Graph, Tensor};

/// Embedding spread below this counts as a representation collapse.
const COLLAPSE_STD: f32 = 1e-6;
/// Norm clamp for cosine similarity during training; an untrained encoder
/// maps all-dark frames to exactly zero embeddings, which must behave as
/// constants rather than abort the run.
const COSINE_EPS: f32 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SslConfig {
    /// Temperature of the contrastive loss.
    pub tau: f64,
    /// Pair count N; the batch holds 2N images.
    pub n_pairs: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub d_z: usize,
    /// Checkpoint every this many epochs (plus epoch 0 and the final one).
    pub checkpoint_every: usize,
    /// Draw anchors with replacement instead of an epoch-wide shuffle.
    pub with_replacement: bool,
}

impl Default for SslConfig {
    fn default() -> Self {
        SslConfig {
            tau: 1.0,
            n_pairs: 300,
            lr: 0.001,
            epochs: 100,
            seed: 0,
            d_z: crate::nn::DEFAULT_D_Z,
            checkpoint_every: 10,
            with_replacement: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JitterConfig {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

impl Default for JitterConfig {
    fn default() -> Self {
        JitterConfig {
            brightness: 0.8,
            contrast: 0.8,
            saturation: 0.8,
            hue: 0.2,
        }
    }
}

impl JitterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hue > 0.5 {
            return Err(Error::config("jitter.hue", "hue strength must be <= 0.5"));
        }
        for (name, v) in [
            ("jitter.brightness", self.brightness),
            ("jitter.contrast", self.contrast),
            ("jitter.saturation", self.saturation),
            ("jitter.hue", self.hue),
        ] {
            if v < 0.0 {
                return Err(Error::config(name, "strength must be nonnegative"));
            }
        }
        Ok(())
    }
}

/// Train-split images in memory, per-object blocks in temporal order.
pub struct TrainData {
    /// [n_train, 3, 32, 32]
    pub images: Tensor<f32>,
    pub object_ids: Vec<usize>,
    pub n_objects: usize,
    pub per_object: usize,
}

impl TrainData {
    pub fn from_dataset(ds: &Dataset) -> Result<TrainData> {
        let (train, _, _) = split_dataset(&ds.manifest);
        let images = ds.load_images(&train)?;
        let object_ids = train.iter().map(|&g| ds.record(g).object_id).collect();
        Ok(TrainData {
            images,
            object_ids,
            n_objects: ds.manifest.n_objects,
            per_object: ds.manifest.splits.train,
        })
    }

    pub fn len(&self) -> usize {
        self.object_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.object_ids.is_empty()
    }

    /// Indices (into the train block) that have a successor inside the
    /// same per-object block: local positions 0 .. per_object-2.
    pub fn eligible_anchors(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|i| (i % self.per_object) + 1 < self.per_object)
            .collect()
    }

    fn image_width(&self) -> usize {
        self.images.shape()[1..].iter().product()
    }

    /// Gather rows into a [k, 3, 32, 32] batch tensor.
    pub fn gather(&self, rows: &[usize]) -> Tensor<f32> {
        let w = self.image_width();
        let src = self.images.data();
        let mut data = vec![0.0f32; rows.len() * w];
        for (dst, &r) in data.chunks_exact_mut(w).zip(rows) {
            dst.copy_from_slice(&src[r * w..(r + 1) * w]);
        }
        Tensor::new(vec![rows.len(), 3, 32, 32], data).expect("gather shape")
    }
}

/// The temporal NT-Xent loss on a full batch of embeddings (row i pairs
/// with row i+N). Builds the same graph ops the trainer differentiates.
pub fn nt_xent_tt_loss<E: crate::tensor::Scalar>(z: &Tensor<E>, tau: f64) -> Result<f64> {
    let mut g = Graph::<E>::new();
    let id = g.leaf(z.clone(), false);
    let s = g.cosine_similarity_matrix(id)?;
    let l = g.nt_xent_from_similarity(s, E::from_f64(tau))?;
    Ok(g.value(l).item().to_f64())
}

/// Random color jitter: brightness, contrast, saturation (factors uniform
/// on [max(0,1-s), 1+s]) and a hue rotation uniform on [-s_h, s_h] turns,
/// applied in a freshly shuffled order per call. Consumes exactly seven
/// draws (3 shuffle + 4 parameters). Output stays in [0,1].
pub fn color_jitter(image: &Tensor<f32>, cfg: &JitterConfig, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let mut order = [0usize, 1, 2, 3];
    // Fisher-Yates needs three draws for four elements.
    for i in (1..4).rev() {
        let j = (rng.gen::<u64>() % (i as u64 + 1)) as usize;
        order.swap(i, j);
    }
    let factor = |rng: &mut ChaCha8Rng, s: f64| {
        let lo = (1.0 - s).max(0.0);
        lo + rng.gen::<f64>() * (1.0 + s - lo)
    };
    let fb = factor(rng, cfg.brightness);
    let fc = factor(rng, cfg.contrast);
    let fs = factor(rng, cfg.saturation);
    let dh = (rng.gen::<f64>() * 2.0 - 1.0) * cfg.hue;

    let plane = image.len() / 3;
    let mut out = image.clone();
    for &step in &order {
        let d = out.data_mut();
        match step {
            0 => {
                for v in d.iter_mut() {
                    *v = (*v * fb as f32).clamp(0.0, 1.0);
                }
            }
            1 => {
                // Blend with the mean gray level (ITU-R 601 luma).
                let mut mean = 0.0f64;
                for i in 0..plane {
                    mean += 0.299 * d[i] as f64 + 0.587 * d[plane + i] as f64
                        + 0.114 * d[2 * plane + i] as f64;
                }
                mean /= plane as f64;
                for v in d.iter_mut() {
                    *v = (fc * *v as f64 + (1.0 - fc) * mean).clamp(0.0, 1.0) as f32;
                }
            }
            2 => {
                for i in 0..plane {
                    let gray = 0.299 * d[i] as f64 + 0.587 * d[plane + i] as f64
                        + 0.114 * d[2 * plane + i] as f64;
                    for c in 0..3 {
                        let v = fs * d[c * plane + i] as f64 + (1.0 - fs) * gray;
                        d[c * plane + i] = v.clamp(0.0, 1.0) as f32;
                    }
                }
            }
            _ => {
                for i in 0..plane {
                    let rgb = [
                        (d[i] as f64).clamp(0.0, 1.0),
                        (d[plane + i] as f64).clamp(0.0, 1.0),
                        (d[2 * plane + i] as f64).clamp(0.0, 1.0),
                    ];
                    let (h, s, v) = rgb_to_hsv(rgb);
                    let rotated = hsv_to_rgb((h + dh).rem_euclid(1.0), s, v)
                        .expect("hsv stays in range");
                    for c in 0..3 {
                        d[c * plane + i] = rotated[c] as f32;
                    }
                }
            }
        }
    }
    out
}

/// One epoch's training record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Largest per-dimension standard deviation of z over the last batch;
    /// absent for runs without a contrastive head.
    pub embedding_std: Option<f64>,
    pub collapsed: bool,
}

#[derive(Clone, Debug)]
pub struct RunSeries {
    pub tag: String,
    pub checkpoints: Vec<(usize, PathBuf)>,
    pub log: Vec<EpochLog>,
    pub collapsed: bool,
}

enum ContrastiveSource<'a> {
    Temporal {
        data: &'a TrainData,
        eligible: Vec<usize>,
    },
    JitterPairs {
        base: &'a Tensor<f32>,
        jitter: &'a JitterConfig,
    },
}

/// SimCLR-TT: anchors drawn without replacement per epoch, positives are
/// immediate temporal successors inside the train block.
pub fn train_ssl(data: &TrainData, cfg: &SslConfig, out_dir: &Path) -> Result<RunSeries> {
    let eligible = data.eligible_anchors();
    let iters = data.len() / (2 * cfg.n_pairs);
    validate_contrastive(cfg, data.len(), eligible.len(), iters)?;
    run_contrastive(
        "ssl",
        ContrastiveSource::Temporal {
            data,
            eligible,
        },
        iters,
        cfg,
        out_dir,
    )
}

/// Color-jitter baseline: positives are two independent jitters of the
/// same reference render; training is otherwise identical (same loss,
/// optimizer, batch size, and updates per epoch as the temporal run on
/// `train_size` frames).
pub fn train_jitter_baseline(
    base_images: &Tensor<f32>,
    train_size: usize,
    jitter: &JitterConfig,
    cfg: &SslConfig,
    out_dir: &Path,
) -> Result<RunSeries> {
    jitter.validate()?;
    if base_images.shape().len() != 4 || base_images.shape()[0] == 0 {
        return Err(Error::shape(
            "train_jitter_baseline",
            format!("want [n_objects,3,32,32] base renders, got {:?}", base_images.shape()),
        ));
    }
    let iters = train_size / (2 * cfg.n_pairs);
    if cfg.tau <= 0.0 {
        return Err(Error::config("tau", "temperature must be positive"));
    }
    if iters == 0 {
        return Err(Error::config(
            "n_pairs",
            format!("batch 2N={} exceeds the train size {train_size}", 2 * cfg.n_pairs),
        ));
    }
    run_contrastive(
        "jitter",
        ContrastiveSource::JitterPairs {
            base: base_images,
            jitter,
        },
        iters,
        cfg,
        out_dir,
    )
}

fn validate_contrastive(
    cfg: &SslConfig,
    train_size: usize,
    eligible: usize,
    iters: usize,
) -> Result<()> {
    if cfg.tau <= 0.0 {
        return Err(Error::config("tau", "temperature must be positive"));
    }
    if cfg.n_pairs == 0 {
        return Err(Error::config("n_pairs", "need at least one pair"));
    }
    if 2 * cfg.n_pairs > train_size || iters == 0 {
        return Err(Error::config(
            "n_pairs",
            format!("batch 2N={} exceeds the train size {train_size}", 2 * cfg.n_pairs),
        ));
    }
    if !cfg.with_replacement && iters * cfg.n_pairs > eligible {
        return Err(Error::config(
            "n_pairs",
            format!(
                "epoch needs {} anchors but only {eligible} frames have successors",
                iters * cfg.n_pairs
            ),
        ));
    }
    Ok(())
}

fn run_contrastive(
    tag: &str,
    source: ContrastiveSource<'_>,
    iters_per_epoch: usize,
    cfg: &SslConfig,
    out_dir: &Path,
) -> Result<RunSeries> {
    let mut params = init_params(cfg.seed, cfg.d_z);
    let mut adam = Adam::<f32>::new(AdamConfig::with_lr(cfg.lr), &params.to_vec());
    let mut series = RunSeries {
        tag: tag.to_string(),
        checkpoints: Vec::new(),
        log: Vec::new(),
        collapsed: false,
    };
    save_checkpoint(tag, &params, &adam, cfg, 0, out_dir, &mut series)?;

    let n = cfg.n_pairs;
    for epoch in 1..=cfg.epochs {
        let mut epoch_loss = 0.0f64;
        let mut last_std = 0.0f64;
        for iter in 0..iters_per_epoch {
            let batch = match &source {
                ContrastiveSource::Temporal { data, eligible } => {
                    let anchors = pick_anchors(cfg, eligible, epoch, iter, iters_per_epoch, n);
                    let mut rows = Vec::with_capacity(2 * n);
                    rows.extend_from_slice(&anchors);
                    rows.extend(anchors.iter().map(|&a| a + 1));
                    data.gather(&rows)
                }
                ContrastiveSource::JitterPairs { base, jitter } => {
                    assemble_jitter_batch(base, jitter, cfg, epoch, iter, n)
                }
            };

            let mut g = Graph::new();
            let pids = register_params(&mut g, &params, true);
            let x = g.leaf(batch, false);
            let nodes = encoder_graph(&mut g, &pids, x)?;
            let z = projection_graph(&mut g, &pids, nodes.h)?;
            let sim = g.cosine_similarity_matrix_clamped(z, COSINE_EPS)?;
            let loss_id = g.nt_xent_from_similarity(sim, cfg.tau as f32)?;
            let loss = g.value(loss_id).item() as f64;
            if !loss.is_finite() {
                let diag = out_dir.join(format!("diagnostic_epoch{epoch:04}_iter{iter:04}.ckpt"));
                save_raw_checkpoint(tag, &params, &adam, cfg, epoch as u32, &diag)?;
                return Err(Error::numeric(
                    "train",
                    format!("non-finite loss at epoch {epoch} iter {iter}; diagnostic checkpoint at {diag:?}"),
                ));
            }
            epoch_loss += loss;
            if iter + 1 == iters_per_epoch {
                last_std = embedding_std(g.value(z));
            }
            g.backward(loss_id)?;
            apply_step(&mut g, &pids, &mut params, &mut adam)?;
        }

        let collapsed = last_std < COLLAPSE_STD as f64;
        series.collapsed |= collapsed;
        series.log.push(EpochLog {
            epoch,
            mean_loss: epoch_loss / iters_per_epoch as f64,
            embedding_std: Some(last_std),
            collapsed,
        });
        if epoch % cfg.checkpoint_every == 0 || epoch == cfg.epochs {
            save_checkpoint(tag, &params, &adam, cfg, epoch as u32, out_dir, &mut series)?;
        }
    }
    Ok(series)
}

fn pick_anchors(
    cfg: &SslConfig,
    eligible: &[usize],
    epoch: usize,
    iter: usize,
    iters_per_epoch: usize,
    n: usize,
) -> Vec<usize> {
    if cfg.with_replacement {
        let mut rng = stream(
            cfg.seed,
            StreamTag::EpochShuffle,
            epoch as u64,
            iter as u64 + 1,
        );
        (0..n)
            .map(|_| eligible[(rng.gen::<u64>() % eligible.len() as u64) as usize])
            .collect()
    } else {
        let mut rng = stream(cfg.seed, StreamTag::EpochShuffle, epoch as u64, 0);
        let mut order = eligible.to_vec();
        order.shuffle(&mut rng);
        let _ = iters_per_epoch;
        order[iter * n..(iter + 1) * n].to_vec()
    }
}

fn assemble_jitter_batch(
    base: &Tensor<f32>,
    jitter: &JitterConfig,
    cfg: &SslConfig,
    epoch: usize,
    iter: usize,
    n: usize,
) -> Tensor<f32> {
    let mut rng = stream(
        cfg.seed,
        StreamTag::Jitter,
        epoch as u64,
        iter as u64,
    );
    let n_objects = base.shape()[0];
    let w: usize = base.shape()[1..].iter().product();
    let mut data = vec![0.0f32; 2 * n * w];
    for i in 0..n {
        let obj = (rng.gen::<u64>() % n_objects as u64) as usize;
        let img = Tensor::new(
            vec![3, 32, 32],
            base.data()[obj * w..(obj + 1) * w].to_vec(),
        )
        .expect("base image shape");
        let a = color_jitter(&img, jitter, &mut rng);
        let b = color_jitter(&img, jitter, &mut rng);
        data[i * w..(i + 1) * w].copy_from_slice(a.data());
        data[(n + i) * w..(n + i + 1) * w].copy_from_slice(b.data());
    }
    Tensor::new(vec![2 * n, 3, 32, 32], data).expect("batch shape")
}

/// Supervised baseline: encoder plus a 50-way affine head trained end to
/// end with cross-entropy on object identity, same optimizer, batch size,
/// and epochs as the contrastive run.
pub fn train_supervised_baseline(
    data: &TrainData,
    cfg: &SslConfig,
    out_dir: &Path,
) -> Result<RunSeries> {
    let batch_size = 2 * cfg.n_pairs;
    let iters = data.len() / batch_size;
    if iters == 0 {
        return Err(Error::config(
            "n_pairs",
            format!("batch {batch_size} exceeds the train size {}", data.len()),
        ));
    }
    let n_classes = data.n_objects;
    let mut params = init_params(cfg.seed, cfg.d_z);
    // Classifier head gets its own deterministic init stream.
    let mut head_w = crate::nn::head_init(cfg.seed, n_classes);
    let mut head_b = Tensor::<f32>::zeros(vec![n_classes]);
    let mut all_params = params.to_vec();
    all_params.push(head_w.clone());
    all_params.push(head_b.clone());
    let mut adam = Adam::<f32>::new(AdamConfig::with_lr(cfg.lr), &all_params);

    let mut series = RunSeries {
        tag: "supervised".to_string(),
        checkpoints: Vec::new(),
        log: Vec::new(),
        collapsed: false,
    };
    let save = |params: &ModelParams,
                head_w: &Tensor<f32>,
                head_b: &Tensor<f32>,
                adam: &Adam<f32>,
                epoch: u32,
                series: &mut RunSeries|
     -> Result<()> {
        let path = out_dir.join(format!("ckpt_epoch{epoch:04}.ckpt"));
        let mut ckpt = checkpoint_from(params, adam, "supervised", cfg.seed, epoch);
        ckpt.params.push(("cls_w".to_string(), head_w.clone()));
        ckpt.params.push(("cls_b".to_string(), head_b.clone()));
        ckpt.save(&path)?;
        series.checkpoints.push((epoch as usize, path));
        Ok(())
    };
    save(&params, &head_w, &head_b, &adam, 0, &mut series)?;

    for epoch in 1..=cfg.epochs {
        let mut rng = stream(cfg.seed, StreamTag::EpochShuffle, epoch as u64, 0);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for iter in 0..iters {
            let rows = &order[iter * batch_size..(iter + 1) * batch_size];
            let batch = data.gather(rows);
            let mut targets = Tensor::<f32>::zeros(vec![batch_size, n_classes]);
            for (r, &row) in rows.iter().enumerate() {
                targets.data_mut()[r * n_classes + data.object_ids[row]] = 1.0;
            }

            let mut g = Graph::new();
            let pids = register_params(&mut g, &params, true);
            let hw = g.leaf(head_w.clone(), true);
            let hb = g.leaf(head_b.clone(), true);
            let x = g.leaf(batch, false);
            let nodes = encoder_graph(&mut g, &pids, x)?;
            let logits = g.affine(nodes.h, hw, hb)?;
            let loss_id = g.softmax_cross_entropy(logits, &targets)?;
            let loss = g.value(loss_id).item() as f64;
            if !loss.is_finite() {
                let diag = out_dir.join(format!("diagnostic_epoch{epoch:04}_iter{iter:04}.ckpt"));
                save_raw_checkpoint("supervised", &params, &adam, cfg, epoch as u32, &diag)?;
                return Err(Error::numeric(
                    "train",
                    format!("non-finite loss at epoch {epoch} iter {iter}"),
                ));
            }
            epoch_loss += loss;
            g.backward(loss_id)?;

            let mut tensors = params.to_vec();
            tensors.push(head_w);
            tensors.push(head_b);
            let mut grads: Vec<Vec<f32>> = Vec::with_capacity(14);
            for &id in pids.ids.iter() {
                grads.push(grad_or_zero(&g, id));
            }
            grads.push(grad_or_zero(&g, hw));
            grads.push(grad_or_zero(&g, hb));
            adam.step(&mut tensors, &grads)?;
            head_b = tensors.pop().unwrap();
            head_w = tensors.pop().unwrap();
            params = ModelParams::from_vec(tensors)?;
        }
        series.log.push(EpochLog {
            epoch,
            mean_loss: epoch_loss / iters as f64,
            embedding_std: None,
            collapsed: false,
        });
        if epoch % cfg.checkpoint_every == 0 || epoch == cfg.epochs {
            save(&params, &head_w, &head_b, &adam, epoch as u32, &mut series)?;
        }
    }
    Ok(series)
}

fn grad_or_zero(g: &Graph<f32>, id: crate::tensor::TensorId) -> Vec<f32> {
    g.grad(id)
        .map(|s| s.to_vec())
        .unwrap_or_else(|| vec![0.0; g.value(id).len()])
}

fn apply_step(
    g: &mut Graph<f32>,
    pids: &crate::nn::ParamIds,
    params: &mut ModelParams,
    adam: &mut Adam<f32>,
) -> Result<()> {
    let mut tensors = params.to_vec();
    let grads: Vec<Vec<f32>> = pids.ids.iter().map(|&id| grad_or_zero(g, id)).collect();
    adam.step(&mut tensors, &grads)?;
    *params = ModelParams::from_vec(tensors)?;
    Ok(())
}

/// Largest per-dimension standard deviation across the batch.
fn embedding_std(z: &Tensor<f32>) -> f64 {
    let (b, d) = (z.shape()[0], z.shape()[1]);
    let mut max_std = 0.0f64;
    for dim in 0..d {
        let mut mean = 0.0f64;
        for r in 0..b {
            mean += z.data()[r * d + dim] as f64;
        }
        mean /= b as f64;
        let mut var = 0.0f64;
        for r in 0..b {
            let v = z.data()[r * d + dim] as f64 - mean;
            var += v * v;
        }
        max_std = max_std.max((var / b as f64).sqrt());
    }
    max_std
}

fn checkpoint_from(
    params: &ModelParams,
    adam: &Adam<f32>,
    tag: &str,
    seed: u64,
    epoch: u32,
) -> Checkpoint {
    let (m, v) = adam.moments();
    Checkpoint {
        tag: tag.to_string(),
        master_seed: seed,
        epoch,
        params: PARAM_NAMES
            .iter()
            .map(|s| s.to_string())
            .zip(params.to_vec())
            .collect(),
        adam: Some(AdamSnapshot {
            t: adam.step_count(),
            m: m.to_vec(),
            v: v.to_vec(),
        }),
    }
}

fn save_checkpoint(
    tag: &str,
    params: &ModelParams,
    adam: &Adam<f32>,
    cfg: &SslConfig,
    epoch: u32,
    out_dir: &Path,
    series: &mut RunSeries,
) -> Result<()> {
    let path = out_dir.join(format!("ckpt_epoch{epoch:04}.ckpt"));
    save_raw_checkpoint(tag, params, adam, cfg, epoch, &path)?;
    series.checkpoints.push((epoch as usize, path));
    Ok(())
}

fn save_raw_checkpoint(
    tag: &str,
    params: &ModelParams,
    adam: &Adam<f32>,
    cfg: &SslConfig,
    epoch: u32,
    path: &Path,
) -> Result<()> {
    checkpoint_from(params, adam, tag, cfg.seed, epoch).save(path)
}

/// Rebuild model parameters from a checkpoint.
pub fn params_from_checkpoint(ckpt: &Checkpoint) -> Result<ModelParams> {
    let tensors: Result<Vec<Tensor<f32>>> = PARAM_NAMES
        .iter()
        .map(|name| ckpt.param(name).cloned())
        .collect();
    ModelParams::from_vec(tensors?)
}

/// Resume state (params + optimizer) for continuing a run bit-exactly.
pub fn optimizer_from_checkpoint(ckpt: &Checkpoint, lr: f64) -> Result<Adam<f32>> {
    let snap = ckpt
        .adam
        .as_ref()
        .ok_or_else(|| Error::Checkpoint("checkpoint has no optimizer state".to_string()))?;
    Ok(Adam::restore(
        AdamConfig::with_lr(lr),
        snap.t,
        snap.m.clone(),
        snap.v.clone(),
    ))
}

//! The encoder f and projection head g, with every intermediate
//! activation exposed for probing.
//!
//! Encoder: conv(6,5,1,0) -> relu -> pool -> conv(16,5,1,0) -> relu ->
//! pool -> flatten -> fc 400->120 -> relu -> fc 120->84 = h.
//! Head: fc 84->128 -> relu -> fc 128->d_z = z.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, StreamTag};
use crate::tensor::{Graph, Tensor, TensorId};

pub const IMAGE_CHANNELS: usize = 3;
pub const IMAGE_SIDE: usize = 32;
/// 3 * 32 * 32 flattened input width.
pub const INPUT_WIDTH: usize = IMAGE_CHANNELS * IMAGE_SIDE * IMAGE_SIDE;
pub const H_WIDTH: usize = 84;
pub const DEFAULT_D_Z: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub conv1_w: Tensor<f32>,
    pub conv1_b: Tensor<f32>,
    pub conv2_w: Tensor<f32>,
    pub conv2_b: Tensor<f32>,
    pub fc3_w: Tensor<f32>,
    pub fc3_b: Tensor<f32>,
    pub fc4_w: Tensor<f32>,
    pub fc4_b: Tensor<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionParams {
    pub hidden_w: Tensor<f32>,
    pub hidden_b: Tensor<f32>,
    pub out_w: Tensor<f32>,
    pub out_b: Tensor<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub projection: ProjectionParams,
}

/// Per-layer feature matrices ([batch, width] each) captured post-pool for
/// conv stages and post-activation for fc3.
#[derive(Clone, Debug)]
pub struct ActivationBundle {
    pub x: Tensor<f32>,
    pub l1: Tensor<f32>,
    pub l2: Tensor<f32>,
    pub l3: Tensor<f32>,
    pub h: Tensor<f32>,
    pub z: Option<Tensor<f32>>,
}

/// Probe tap points through the hierarchy.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    X,
    L1,
    L2,
    L3,
    H,
    Z,
}

impl Layer {
    pub const ALL: [Layer; 6] = [Layer::X, Layer::L1, Layer::L2, Layer::L3, Layer::H, Layer::Z];

    pub fn width(self, d_z: usize) -> usize {
        match self {
            Layer::X => INPUT_WIDTH,
            Layer::L1 => 6 * 14 * 14,
            Layer::L2 => 16 * 5 * 5,
            Layer::L3 => 120,
            Layer::H => H_WIDTH,
            Layer::Z => d_z,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Layer::X => "x",
            Layer::L1 => "l1",
            Layer::L2 => "l2",
            Layer::L3 => "l3",
            Layer::H => "h",
            Layer::Z => "z",
        }
    }

    pub fn parse(s: &str) -> Result<Layer> {
        Layer::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| {
                Error::config(
                    "layer",
                    format!("unknown layer tag {s:?}; valid: x, l1, l2, l3, h, z"),
                )
            })
    }
}

impl std::fmt::Display for Layer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Kaiming-uniform fan-in draw: U(-b, b) with b = sqrt(6 / fan_in).
fn kaiming_uniform(seed: u64, param_idx: u64, shape: Vec<usize>, fan_in: usize) -> Tensor<f32> {
    let mut rng = stream(seed, StreamTag::ParamInit, param_idx, 0);
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| ((rng.gen::<f64>() * 2.0 - 1.0) * bound) as f32)
}

/// Kaiming-uniform weights for an auxiliary affine map, on a stream salted
/// by `salt` so heads never share draws with the model parameters.
pub fn affine_init(seed: u64, salt: u64, out_dim: usize, in_dim: usize) -> Tensor<f32> {
    kaiming_uniform(seed, 100 + salt, vec![out_dim, in_dim], in_dim)
}

/// Classifier head (n_classes x 84) for the supervised baseline.
pub fn head_init(seed: u64, n_classes: usize) -> Tensor<f32> {
    affine_init(seed, 0, n_classes, H_WIDTH)
}

/// Deterministic initialization: Kaiming-uniform weights, zero biases.
pub fn init_params(seed: u64, d_z: usize) -> ModelParams {
    ModelParams {
        encoder: EncoderParams {
            conv1_w: kaiming_uniform(seed, 0, vec![6, 3, 5, 5], 3 * 5 * 5),
            conv1_b: Tensor::zeros(vec![6]),
            conv2_w: kaiming_uniform(seed, 1, vec![16, 6, 5, 5], 6 * 5 * 5),
            conv2_b: Tensor::zeros(vec![16]),
            fc3_w: kaiming_uniform(seed, 2, vec![120, 400], 400),
            fc3_b: Tensor::zeros(vec![120]),
            fc4_w: kaiming_uniform(seed, 3, vec![84, 120], 120),
            fc4_b: Tensor::zeros(vec![84]),
        },
        projection: ProjectionParams {
            hidden_w: kaiming_uniform(seed, 4, vec![128, H_WIDTH], H_WIDTH),
            hidden_b: Tensor::zeros(vec![128]),
            out_w: kaiming_uniform(seed, 5, vec![d_z, 128], 128),
            out_b: Tensor::zeros(vec![d_z]),
        },
    }
}

/// Fixed parameter name/order used by the optimizer and checkpoints.
pub const PARAM_NAMES: [&str; 12] = [
    "conv1_w", "conv1_b", "conv2_w", "conv2_b", "fc3_w", "fc3_b", "fc4_w", "fc4_b",
    "proj_hidden_w", "proj_hidden_b", "proj_out_w", "proj_out_b",
];

impl ModelParams {
    pub fn d_z(&self) -> usize {
        self.projection.out_w.shape()[0]
    }

    pub fn to_vec(&self) -> Vec<Tensor<f32>> {
        vec![
            self.encoder.conv1_w.clone(),
            self.encoder.conv1_b.clone(),
            self.encoder.conv2_w.clone(),
            self.encoder.conv2_b.clone(),
            self.encoder.fc3_w.clone(),
            self.encoder.fc3_b.clone(),
            self.encoder.fc4_w.clone(),
            self.encoder.fc4_b.clone(),
            self.projection.hidden_w.clone(),
            self.projection.hidden_b.clone(),
            self.projection.out_w.clone(),
            self.projection.out_b.clone(),
        ]
    }

    pub fn from_vec(mut v: Vec<Tensor<f32>>) -> Result<ModelParams> {
        if v.len() != 12 {
            return Err(Error::shape(
                "model_params",
                format!("expected 12 tensors, got {}", v.len()),
            ));
        }
        let out_b = v.pop().unwrap();
        let out_w = v.pop().unwrap();
        let hidden_b = v.pop().unwrap();
        let hidden_w = v.pop().unwrap();
        let fc4_b = v.pop().unwrap();
        let fc4_w = v.pop().unwrap();
        let fc3_b = v.pop().unwrap();
        let fc3_w = v.pop().unwrap();
        let conv2_b = v.pop().unwrap();
        let conv2_w = v.pop().unwrap();
        let conv1_b = v.pop().unwrap();
        let conv1_w = v.pop().unwrap();
        Ok(ModelParams {
            encoder: EncoderParams {
                conv1_w,
                conv1_b,
                conv2_w,
                conv2_b,
                fc3_w,
                fc3_b,
                fc4_w,
                fc4_b,
            },
            projection: ProjectionParams {
                hidden_w,
                hidden_b,
                out_w,
                out_b,
            },
        })
    }

    pub fn encoder_param_count(&self) -> usize {
        let e = &self.encoder;
        [
            &e.conv1_w, &e.conv1_b, &e.conv2_w, &e.conv2_b, &e.fc3_w, &e.fc3_b, &e.fc4_w, &e.fc4_b,
        ]
        .iter()
        .map(|t| t.len())
        .sum()
    }
}

/// Leaf ids of all twelve parameters inside one graph.
pub struct ParamIds {
    pub ids: Vec<TensorId>,
}

pub fn register_params(g: &mut Graph<f32>, params: &ModelParams, trainable: bool) -> ParamIds {
    ParamIds {
        ids: params.to_vec().into_iter().map(|t| g.leaf(t, trainable)).collect(),
    }
}

/// Node ids of the encoder taps (post-pool for convs, post-relu for fc3).
pub struct EncoderNodes {
    pub l1: TensorId,
    pub l2: TensorId,
    pub l3: TensorId,
    pub h: TensorId,
}

/// Wire the encoder into a graph. `x` must be [B, 3, 32, 32].
pub fn encoder_graph(g: &mut Graph<f32>, p: &ParamIds, x: TensorId) -> Result<EncoderNodes> {
    let shape = g.value(x).shape().to_vec();
    if shape.len() != 4
        || shape[1] != IMAGE_CHANNELS
        || shape[2] != IMAGE_SIDE
        || shape[3] != IMAGE_SIDE
    {
        return Err(Error::shape(
            "encoder_forward",
            format!("want [B, 3, 32, 32], got {shape:?}"),
        ));
    }
    let c1 = g.conv2d(x, p.ids[0], p.ids[1], 1, 0)?;
    let r1 = g.relu(c1);
    let l1 = g.maxpool2(r1)?;
    let c2 = g.conv2d(l1, p.ids[2], p.ids[3], 1, 0)?;
    let r2 = g.relu(c2);
    let l2 = g.maxpool2(r2)?;
    let flat = g.flatten(l2)?;
    let a3 = g.affine(flat, p.ids[4], p.ids[5])?;
    let l3 = g.relu(a3);
    let h = g.affine(l3, p.ids[6], p.ids[7])?;
    Ok(EncoderNodes { l1, l2, l3, h })
}

/// Wire the projection head: z = out(relu(hidden(h))).
pub fn projection_graph(g: &mut Graph<f32>, p: &ParamIds, h: TensorId) -> Result<TensorId> {
    let a = g.affine(h, p.ids[8], p.ids[9])?;
    let r = g.relu(a);
    g.affine(r, p.ids[10], p.ids[11])
}

/// Evaluation-mode forward returning every probe tap as a [B, width]
/// matrix. Bit-identical across calls for fixed parameters and input.
pub fn forward_bundle(
    params: &ModelParams,
    images: &Tensor<f32>,
    with_z: bool,
) -> Result<ActivationBundle> {
    let batch = images.shape()[0];
    let mut g = Graph::new();
    let p = register_params(&mut g, params, false);
    let x = g.leaf(images.clone(), false);
    let nodes = encoder_graph(&mut g, &p, x)?;
    let z = if with_z {
        Some(projection_graph(&mut g, &p, nodes.h)?)
    } else {
        None
    };

    let as_matrix = |g: &Graph<f32>, id: TensorId| -> Result<Tensor<f32>> {
        let v = g.value(id);
        let width: usize = v.shape()[1..].iter().product();
        v.clone().reshaped(vec![batch, width])
    };

    Ok(ActivationBundle {
        x: as_matrix(&g, x)?,
        l1: as_matrix(&g, nodes.l1)?,
        l2: as_matrix(&g, nodes.l2)?,
        l3: as_matrix(&g, nodes.l3)?,
        h: as_matrix(&g, nodes.h)?,
        z: z.map(|id| as_matrix(&g, id)).transpose()?,
    })
}

impl ActivationBundle {
    pub fn layer(&self, layer: Layer) -> Result<&Tensor<f32>> {
        match layer {
            Layer::X => Ok(&self.x),
            Layer::L1 => Ok(&self.l1),
            Layer::L2 => Ok(&self.l2),
            Layer::L3 => Ok(&self.l3),
            Layer::H => Ok(&self.h),
            Layer::Z => self
                .z
                .as_ref()
                .ok_or_else(|| Error::config("layer", "bundle extracted without z")),
        }
    }
}

/// One line per layer: shape and parameter count. Used by the `inspect`
/// subcommand.
pub fn describe(params: &ModelParams) -> String {
    let e = &params.encoder;
    let p = &params.projection;
    let mut s = String::new();
    let mut row = |name: &str, shape: &[usize], count: usize| {
        s.push_str(&format!("{name:<14} {shape:?}  params {count}\n"));
    };
    row("conv1", e.conv1_w.shape(), e.conv1_w.len() + e.conv1_b.len());
    row("conv2", e.conv2_w.shape(), e.conv2_w.len() + e.conv2_b.len());
    row("fc3", e.fc3_w.shape(), e.fc3_w.len() + e.fc3_b.len());
    row("fc4 (h)", e.fc4_w.shape(), e.fc4_w.len() + e.fc4_b.len());
    row("proj hidden", p.hidden_w.shape(), p.hidden_w.len() + p.hidden_b.len());
    row("proj out (z)", p.out_w.shape(), p.out_w.len() + p.out_b.len());
    s.push_str(&format!(
        "encoder params {}
",
        params.encoder_param_count()
    ));
    s
}

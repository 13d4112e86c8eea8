//! Central finite-difference verification of backward passes, run in f64.

use super::{Graph, Tensor, TensorId};
use crate::error::{Error, Result};

const FD_STEP: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub op: String,
    pub trials: usize,
    pub coords_checked: usize,
    pub max_rel_error: f64,
    /// (trial, input index, coordinate) of the worst disagreement.
    pub worst: (usize, usize, usize),
}

/// Compare analytic gradients against central finite differences
/// (h = 1e-5) on `trials` sampled input sets. `sample` produces the leaf
/// tensors for a trial; `build` wires them into a scalar loss. Exceeding
/// `tolerance` fails with the worst coordinate named.
///
/// Relative error per coordinate: |a - n| / max(|a|, |n|, 1).
pub fn grad_check<S, B>(
    op: &str,
    trials: usize,
    tolerance: f64,
    mut sample: S,
    build: B,
) -> Result<GradCheckReport>
where
    S: FnMut(usize) -> Vec<Tensor<f64>>,
    B: Fn(&mut Graph<f64>, &[TensorId]) -> Result<TensorId>,
{
    let mut report = GradCheckReport {
        op: op.to_string(),
        trials,
        coords_checked: 0,
        max_rel_error: 0.0,
        worst: (0, 0, 0),
    };

    for trial in 0..trials {
        let inputs = sample(trial);

        // Analytic pass.
        let mut graph = Graph::new();
        let ids: Vec<TensorId> = inputs.iter().map(|t| graph.leaf(t.clone(), true)).collect();
        let loss = build(&mut graph, &ids)?;
        if graph.value(loss).len() != 1 {
            return Err(Error::shape("grad_check", "loss must be scalar".to_string()));
        }
        graph.backward(loss)?;
        let analytic: Vec<Vec<f64>> = ids
            .iter()
            .map(|&id| graph.grad(id).map(|g| g.to_vec()).unwrap_or_default())
            .collect();

        let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
            let mut g = Graph::new();
            let ids: Vec<TensorId> = perturbed.iter().map(|t| g.leaf(t.clone(), false)).collect();
            let loss = build(&mut g, &ids)?;
            Ok(g.value(loss).item())
        };

        for (input_idx, input) in inputs.iter().enumerate() {
            for coord in 0..input.len() {
                let mut plus = inputs.clone();
                plus[input_idx].data_mut()[coord] += FD_STEP;
                let mut minus = inputs.clone();
                minus[input_idx].data_mut()[coord] -= FD_STEP;
                let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * FD_STEP);
                let a = analytic
                    .get(input_idx)
                    .and_then(|g| g.get(coord))
                    .copied()
                    .unwrap_or(0.0);
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
                report.coords_checked += 1;
                if rel > report.max_rel_error {
                    report.max_rel_error = rel;
                    report.worst = (trial, input_idx, coord);
                }
            }
        }
    }

    if report.max_rel_error > tolerance {
        let (t, i, c) = report.worst;
        return Err(Error::numeric(
            "grad_check",
            format!(
                "{op}: max relative error {:.3e} > {tolerance:.1e} at trial {t}, input {i}, coordinate {c}",
                report.max_rel_error
            ),
        ));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| lo + rng.gen::<f64>() * (hi - lo))
    }

    /// One-hot loss head so every op under test feeds a scalar.
    fn ce_head(
        g: &mut Graph<f64>,
        logits_2d: TensorId,
        classes: usize,
    ) -> Result<TensorId> {
        let batch = g.value(logits_2d).shape()[0];
        let mut tgt = Tensor::zeros(vec![batch, classes]);
        for r in 0..batch {
            tgt.data_mut()[r * classes + r % classes] = 1.0;
        }
        g.softmax_cross_entropy(logits_2d, &tgt)
    }

    #[test]
    fn linear_op_is_exact_to_float_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let report = grad_check(
            "affine",
            5,
            1e-4,
            |_| {
                vec![
                    rng_tensor(&mut rng, vec![3, 4], -1.0, 1.0),
                    rng_tensor(&mut rng, vec![2, 4], -1.0, 1.0),
                    rng_tensor(&mut rng, vec![2], -0.5, 0.5),
                ]
            },
            |g, ids| {
                let y = g.affine(ids[0], ids[1], ids[2])?;
                ce_head(g, y, 2)
            },
        )
        .unwrap();
        // Linear map + smooth head: errors at finite-difference noise floor.
        assert!(report.max_rel_error < 1e-6, "{}", report.max_rel_error);
    }

    #[test]
    fn conv2d_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        grad_check(
            "conv2d",
            5,
            1e-4,
            |_| {
                vec![
                    rng_tensor(&mut rng, vec![2, 2, 5, 5], -1.0, 1.0),
                    rng_tensor(&mut rng, vec![3, 2, 3, 3], -0.7, 0.7),
                    rng_tensor(&mut rng, vec![3], -0.3, 0.3),
                ]
            },
            |g, ids| {
                let y = g.conv2d(ids[0], ids[1], ids[2], 1, 0)?;
                let f = g.flatten(y)?;
                ce_head(g, f, 27)
            },
        )
        .unwrap();
    }

    #[test]
    fn conv2d_strided_padded_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        grad_check(
            "conv2d_s2p1",
            5,
            1e-4,
            |_| {
                vec![
                    rng_tensor(&mut rng, vec![1, 2, 5, 5], -1.0, 1.0),
                    rng_tensor(&mut rng, vec![2, 2, 3, 3], -0.7, 0.7),
                    rng_tensor(&mut rng, vec![2], -0.3, 0.3),
                ]
            },
            |g, ids| {
                let y = g.conv2d(ids[0], ids[1], ids[2], 2, 1)?;
                let f = g.flatten(y)?;
                ce_head(g, f, 18)
            },
        )
        .unwrap();
    }

    #[test]
    fn maxpool_gradients_away_from_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        grad_check(
            "maxpool2",
            5,
            1e-4,
            // Continuous random input: exact ties have measure zero, and
            // spacing them by > 2h keeps the finite difference off the kink.
            |_| vec![rng_tensor(&mut rng, vec![2, 2, 4, 4], -1.0, 1.0)],
            |g, ids| {
                let y = g.maxpool2(ids[0])?;
                let f = g.flatten(y)?;
                ce_head(g, f, 8)
            },
        )
        .unwrap();
    }

    #[test]
    fn relu_gradients_away_from_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        grad_check(
            "relu",
            5,
            1e-4,
            // Probes at the kink are excluded by sampling away from 0.
            |_| {
                vec![Tensor::from_fn(vec![3, 6], |_| {
                    let v = 0.1 + rng.gen::<f64>();
                    if rng.gen::<bool>() {
                        v
                    } else {
                        -v
                    }
                })]
            },
            |g, ids| {
                let y = g.relu(ids[0]);
                ce_head(g, y, 6)
            },
        )
        .unwrap();
    }

    #[test]
    fn cosine_similarity_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        grad_check(
            "cosine_similarity_matrix",
            5,
            1e-4,
            |_| vec![rng_tensor(&mut rng, vec![4, 3], 0.2, 1.2)],
            |g, ids| {
                let s = g.cosine_similarity_matrix(ids[0])?;
                g.nt_xent_from_similarity(s, 1.0)
            },
        )
        .unwrap();
    }

    #[test]
    fn loss_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        grad_check(
            "softmax_cross_entropy",
            5,
            1e-4,
            |_| vec![rng_tensor(&mut rng, vec![4, 5], -2.0, 2.0)],
            |g, ids| ce_head(g, ids[0], 5),
        )
        .unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        grad_check(
            "bce_with_logits",
            5,
            1e-4,
            |_| vec![rng_tensor(&mut rng, vec![3, 8], -2.0, 2.0)],
            |g, ids| {
                let mut tgt = Tensor::zeros(vec![3, 8]);
                for (i, t) in tgt.data_mut().iter_mut().enumerate() {
                    *t = ((i * 7) % 3 == 0) as u8 as f64;
                }
                g.bce_with_logits(ids[0], &tgt)
            },
        )
        .unwrap();
    }

    #[test]
    fn failure_names_the_worst_coordinate() {
        // A deliberately wrong "loss": build computes bce against target 1
        // analytically but the numeric eval sees a different constant path.
        // Simpler: check that an over-tight tolerance trips the error path.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let err = grad_check(
            "too_tight",
            2,
            1e-18,
            |_| vec![rng_tensor(&mut rng, vec![2, 3], -1.0, 1.0)],
            |g, ids| ce_head(g, ids[0], 3),
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("too_tight") && msg.contains("coordinate"), "{msg}");
    }
}

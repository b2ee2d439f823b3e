//! Weighted binary cross-entropy over negated-pair heads.
//!
//! `L = w1 * (-y ln p) + w0 * (1 - y) * (-ln(1 - p))` per element, with `p`
//! clamped to `[EPS, 1 - EPS]`. The batch loss is the mean over heads of the
//! per-head mean over samples. Sums use pairwise reduction so results are
//! bit-stable for a fixed batch order.

use thiserror::Error;

pub const EPS: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("loss batch is empty")]
    EmptyBatch,
    #[error("loss batch shape mismatch: {0}")]
    Shape(String),
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn clamp_probability(p: f64) -> f64 {
    p.clamp(EPS, 1.0 - EPS)
}

pub fn wbce(y: bool, p: f64, w1: f64, w0: f64) -> f64 {
    let p = clamp_probability(p);
    if y {
        w1 * -p.ln()
    } else {
        w0 * -(1.0 - p).ln()
    }
}

/// `dL/dz` for `p = sigmoid(z)`: `-w1 y (1 - p) + w0 (1 - y) p`.
pub fn wbce_grad_logit(y: bool, z: f64, w1: f64, w0: f64) -> f64 {
    if y {
        -w1 * sigmoid(-z)
    } else {
        w0 * sigmoid(z)
    }
}

pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().fold(0.0, |a, &b| a + b);
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Row-major `batch × heads` targets, probabilities and per-element weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBatch {
    pub batch: usize,
    pub heads: usize,
    pub y: Vec<u8>,
    pub p: Vec<f64>,
    pub w1: Vec<f64>,
    pub w0: Vec<f64>,
}

impl LossBatch {
    pub fn new(
        batch: usize,
        heads: usize,
        y: Vec<u8>,
        p: Vec<f64>,
        w1: Vec<f64>,
        w0: Vec<f64>,
    ) -> Result<Self, LossError> {
        let n = batch * heads;
        for (name, len) in [("y", y.len()), ("p", p.len()), ("w1", w1.len()), ("w0", w0.len())] {
            if len != n {
                return Err(LossError::Shape(format!(
                    "{name} has {len} elements, expected {batch}×{heads}"
                )));
            }
        }
        Ok(Self {
            batch,
            heads,
            y,
            p: p.into_iter().map(clamp_probability).collect(),
            w1,
            w0,
        })
    }
}

fn mean_over_heads_of_sample_means(batch: usize, heads: usize, elem: impl Fn(usize) -> f64) -> f64 {
    let mut column = vec![0.0; batch];
    let head_means: Vec<f64> = (0..heads)
        .map(|h| {
            for (s, c) in column.iter_mut().enumerate() {
                *c = elem(s * heads + h);
            }
            pairwise_sum(&column) / batch as f64
        })
        .collect();
    pairwise_sum(&head_means) / heads as f64
}

pub fn multilabel_loss(batch: &LossBatch) -> Result<f64, LossError> {
    if batch.batch == 0 || batch.heads == 0 {
        return Err(LossError::EmptyBatch);
    }
    Ok(mean_over_heads_of_sample_means(batch.batch, batch.heads, |i| {
        wbce(batch.y[i] == 1, batch.p[i], batch.w1[i], batch.w0[i])
    }))
}

/// Loss and `dLoss/dz` for logits `z`, where the loss is
/// [`multilabel_loss`] of `sigmoid(z)`.
pub fn multilabel_loss_from_logits(
    batch: usize,
    heads: usize,
    y: &[u8],
    z: &[f64],
    w1: &[f64],
    w0: &[f64],
) -> Result<(f64, Vec<f64>), LossError> {
    let p: Vec<f64> = z.iter().map(|&v| sigmoid(v)).collect();
    let lb = LossBatch::new(batch, heads, y.to_vec(), p, w1.to_vec(), w0.to_vec())?;
    let loss = multilabel_loss(&lb)?;
    let scale = 1.0 / (batch * heads) as f64;
    let grad = (0..batch * heads)
        .map(|i| wbce_grad_logit(y[i] == 1, z[i], w1[i], w0[i]) * scale)
        .collect();
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn wbce_examples() {
        assert!((wbce(true, 0.5, 0.5, 0.5) - 0.346_573_590_279_972_6).abs() < 1e-15);
        assert!(wbce(true, 1.0, 1.0, 1.0) < 1e-6);
        assert!((wbce(false, 0.9, 1.0, 1.0) - 2.302_585_092_994_045_5).abs() < 1e-12);
    }

    fn central_difference(y: bool, z: f64, w1: f64, w0: f64, h: f64) -> f64 {
        let f = |z: f64| wbce(y, sigmoid(z), w1, w0);
        (f(z + h) - f(z - h)) / (2.0 * h)
    }

    #[test]
    fn grad_examples() {
        assert_eq!(wbce_grad_logit(true, 0.0, 1.0, 1.0), -0.5);
        assert_eq!(wbce_grad_logit(false, 0.0, 1.0, 1.0), 0.5);
        assert!(wbce_grad_logit(true, 60.0, 1.0, 1.0).abs() < 1e-25);
        assert!((central_difference(true, 0.0, 1.0, 1.0, 1e-5) + 0.5).abs() < 1e-9);
        assert!((central_difference(false, 0.0, 1.0, 1.0, 1e-5) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn grad_matches_finite_differences_on_random_tuples() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..1000 {
            let y = rng.random_bool(0.5);
            let z = rng.random_range(-6.0..6.0);
            let w1 = rng.random_range(0.01..1.0);
            let w0 = rng.random_range(0.01..1.0);
            let analytic = wbce_grad_logit(y, z, w1, w0);
            let fd = central_difference(y, z, w1, w0, 1e-5);
            assert!(close(analytic, fd, 1e-6), "y={y} z={z}: {analytic} vs {fd}");
        }
    }

    #[test]
    fn multilabel_examples() {
        let single = LossBatch::new(1, 1, vec![1], vec![0.3], vec![0.7], vec![0.2]).unwrap();
        assert_eq!(multilabel_loss(&single).unwrap(), wbce(true, 0.3, 0.7, 0.2));

        // two heads whose element losses are 0.2 and 0.4
        let p0 = 1.0 - (-0.2f64).exp();
        let p1 = 1.0 - (-0.4f64).exp();
        let two = LossBatch::new(1, 2, vec![0, 0], vec![p0, p1], vec![1.0; 2], vec![1.0; 2]).unwrap();
        assert!((multilabel_loss(&two).unwrap() - 0.3).abs() < 1e-12);

        let saturated = LossBatch::new(
            2,
            2,
            vec![1, 0, 0, 1],
            vec![1.0, 0.0, 0.0, 1.0],
            vec![1.0; 4],
            vec![1.0; 4],
        )
        .unwrap();
        let l = multilabel_loss(&saturated).unwrap();
        assert!(l > 0.0 && l < 1.1e-7);

        let empty = LossBatch::new(0, 2, vec![], vec![], vec![], vec![]).unwrap();
        assert_eq!(multilabel_loss(&empty), Err(LossError::EmptyBatch));
        assert!(LossBatch::new(1, 2, vec![1], vec![0.5, 0.5], vec![1.0; 2], vec![1.0; 2]).is_err());
    }

    #[test]
    fn averaging_order_is_samples_then_heads() {
        // per-head sample means: head0 mean(a, b), head1 mean(c, d)
        let y = vec![1, 0, 1, 0];
        let p = vec![0.2, 0.3, 0.6, 0.9];
        let w = vec![1.0; 4];
        let lb = LossBatch::new(2, 2, y.clone(), p.clone(), w.clone(), w.clone()).unwrap();
        let e: Vec<f64> = (0..4).map(|i| wbce(y[i] == 1, p[i], 1.0, 1.0)).collect();
        let expected = ((e[0] + e[2]) / 2.0 + (e[1] + e[3]) / 2.0) / 2.0;
        assert!((multilabel_loss(&lb).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn logits_form_gradient_matches_finite_differences() {
        let y = vec![1, 0, 0, 1, 1, 0];
        let z = vec![0.3, -1.2, 2.0, 0.1, -0.7, 0.4];
        let w1 = vec![0.8, 0.6, 0.7, 0.5, 0.9, 0.3];
        let w0 = vec![0.2, 0.4, 0.3, 0.5, 0.1, 0.7];
        let (_, g) = multilabel_loss_from_logits(3, 2, &y, &z, &w1, &w0).unwrap();
        for i in 0..z.len() {
            let h = 1e-5;
            let mut zp = z.clone();
            zp[i] += h;
            let mut zm = z.clone();
            zm[i] -= h;
            let lp = multilabel_loss_from_logits(3, 2, &y, &zp, &w1, &w0).unwrap().0;
            let lm = multilabel_loss_from_logits(3, 2, &y, &zm, &w1, &w0).unwrap().0;
            assert!(close(g[i], (lp - lm) / (2.0 * h), 1e-6));
        }
    }

    proptest! {
        #[test]
        fn unit_weights_reduce_to_plain_bce(y in any::<bool>(), p in 1e-6f64..(1.0 - 1e-6)) {
            let bce = -(if y { p.ln() } else { (1.0 - p).ln() });
            prop_assert!(close(wbce(y, p, 1.0, 1.0), bce, 1e-15));
        }

        #[test]
        fn loss_is_nonnegative(y in any::<bool>(), p in 0.0f64..=1.0, w1 in 0.0f64..2.0, w0 in 0.0f64..2.0) {
            prop_assert!(wbce(y, p, w1, w0) >= 0.0);
        }

        #[test]
        fn loss_and_grad_are_linear_in_weights(y in any::<bool>(), z in -8.0f64..8.0, w1 in 0.0f64..1.0, w0 in 0.0f64..1.0, c in 0.0f64..10.0) {
            let p = sigmoid(z);
            prop_assert!(close(wbce(y, p, c * w1, c * w0), c * wbce(y, p, w1, w0), 1e-14));
            prop_assert!(close(wbce_grad_logit(y, z, c * w1, c * w0), c * wbce_grad_logit(y, z, w1, w0), 1e-14));
        }
    }
}

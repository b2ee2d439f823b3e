//! Class weights and Gaussian weight modifiers for ambiguous pairs.
//!
//! Per head, `w1 = f0 / (f1 + f0)` and `w0 = 1 - w1`, where `f1` and `f0`
//! count the training samples whose target for that head is 1 and 0. For a
//! sample whose pair is `(0,0)`, a modifier `m ~ N(mu, sigma)` (clamped to
//! `[0,1]`) multiplies the positive head's `w0`, and `1 - m` multiplies the
//! negated head's `w0`. A large `mu` trusts an unmentioned finding to be
//! truly absent and discounts the implicit "not negated" zero.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labelcore::{negated_head, positive_head, LabelMatrix, PairState};
use crate::rng;

pub const DEFAULT_SIGMA: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WeightingError {
    #[error("cannot compute class weights with no samples (f1 + f0 = 0)")]
    EmptyClass,
    #[error("sample has contradictory (1,1) labels and cannot be weighted")]
    InvalidSample,
    #[error("invalid modifier config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub w1: f64,
    pub w0: f64,
    pub f1: u64,
    pub f0: u64,
}

pub fn class_weights(f1: u64, f0: u64) -> Result<ClassWeights, WeightingError> {
    let total = f1 + f0;
    if total == 0 {
        return Err(WeightingError::EmptyClass);
    }
    let w1 = f0 as f64 / total as f64;
    Ok(ClassWeights {
        w1,
        w0: 1.0 - w1,
        f1,
        f0,
    })
}

/// Class weights for every head of a label matrix.
pub fn head_class_weights(labels: &LabelMatrix) -> Result<Vec<ClassWeights>, WeightingError> {
    let h = labels.n_heads();
    let mut ones = vec![0u64; h];
    for s in 0..labels.n_samples() {
        for (count, &t) in ones.iter_mut().zip(labels.row(s)) {
            *count += t as u64;
        }
    }
    let n = labels.n_samples() as u64;
    ones.into_iter().map(|f1| class_weights(f1, n - f1)).collect()
}

/// How often a fresh modifier is drawn for an ambiguous `(sample, finding)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Redraw {
    #[default]
    PerStep,
    PerEpoch,
    Once,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModifierConfig {
    pub mu: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub redraw: Redraw,
}

fn default_sigma() -> f64 {
    DEFAULT_SIGMA
}

impl ModifierConfig {
    pub fn new(mu: f64, sigma: f64, seed: u64) -> Result<Self, WeightingError> {
        let cfg = Self {
            mu,
            sigma,
            seed,
            redraw: Redraw::PerStep,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), WeightingError> {
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(WeightingError::InvalidConfig(format!(
                "mu must lie in [0, 1], got {}",
                self.mu
            )));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(WeightingError::InvalidConfig(format!(
                "sigma must be finite and non-negative, got {}",
                self.sigma
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModifierDraw {
    pub m: f64,
    pub m_bar: f64,
}

impl ModifierDraw {
    pub fn fixed(m: f64) -> Self {
        let m = m.clamp(0.0, 1.0);
        Self { m, m_bar: 1.0 - m }
    }
}

pub fn draw_modifier<R: rand::Rng + ?Sized>(cfg: &ModifierConfig, rng: &mut R) -> ModifierDraw {
    if cfg.sigma == 0.0 {
        return ModifierDraw::fixed(cfg.mu);
    }
    let normal = Normal::new(cfg.mu, cfg.sigma).expect("validated sigma");
    ModifierDraw::fixed(normal.sample(rng))
}

/// The draw for one ambiguous `(sample, finding)` at a given step/epoch,
/// from a stream keyed by `(seed, sample, finding, step or epoch)`.
pub fn keyed_draw(cfg: &ModifierConfig, sample_key: u64, finding_id: usize, epoch: u64, step: u64) -> ModifierDraw {
    if cfg.sigma == 0.0 {
        return ModifierDraw::fixed(cfg.mu);
    }
    let time_key = match cfg.redraw {
        Redraw::PerStep => step,
        Redraw::PerEpoch => epoch,
        Redraw::Once => 0,
    };
    let mut r = rng::stream(cfg.seed, &[sample_key, finding_id as u64, time_key]);
    draw_modifier(cfg, &mut r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadWeights {
    pub w1: f64,
    pub w0: f64,
}

impl From<ClassWeights> for HeadWeights {
    fn from(c: ClassWeights) -> Self {
        Self { w1: c.w1, w0: c.w0 }
    }
}

/// Weights for the `(positive, negated)` heads of one pair of one sample.
pub fn effective_weights(
    pair: PairState,
    pos_head: &ClassWeights,
    neg_head: &ClassWeights,
    draw: ModifierDraw,
) -> Result<(HeadWeights, HeadWeights), WeightingError> {
    match pair {
        PairState::Contradiction => Err(WeightingError::InvalidSample),
        PairState::Ambiguous => Ok((
            HeadWeights {
                w1: pos_head.w1,
                w0: pos_head.w0 * draw.m,
            },
            HeadWeights {
                w1: neg_head.w1,
                w0: neg_head.w0 * draw.m_bar,
            },
        )),
        PairState::PositiveExists | PairState::NegationExists => Ok(((*pos_head).into(), (*neg_head).into())),
    }
}

/// Loss weighting scheme for a training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightingMode {
    /// `w1 = w0 = 1` everywhere.
    Unweighted,
    /// Class weights, modifiers disabled (the baseline).
    ClassWeighted,
    /// Class weights with Gaussian modifiers on ambiguous pairs.
    Modified { modifier: ModifierConfig },
}

impl WeightingMode {
    pub fn label(&self) -> String {
        match self {
            WeightingMode::Unweighted => "unweighted".into(),
            WeightingMode::ClassWeighted => "baseline".into(),
            WeightingMode::Modified { modifier } => format!("{}", modifier.mu),
        }
    }
}

/// Per-element `(w1, w0)` for a batch, row-major `rows.len() × 2K`.
pub fn batch_weights(
    mode: &WeightingMode,
    class: &[ClassWeights],
    labels: &LabelMatrix,
    rows: &[usize],
    sample_keys: &[u64],
    epoch: u64,
    step: u64,
) -> Result<(Vec<f64>, Vec<f64>), WeightingError> {
    let h = labels.n_heads();
    let mut w1 = Vec::with_capacity(rows.len() * h);
    let mut w0 = Vec::with_capacity(rows.len() * h);
    for (&s, &key) in rows.iter().zip(sample_keys) {
        for k in 0..labels.n_findings() {
            let pair = labels.pair_state(s, k);
            let (p, n) = match mode {
                WeightingMode::Unweighted => {
                    if pair == PairState::Contradiction {
                        return Err(WeightingError::InvalidSample);
                    }
                    let one = HeadWeights { w1: 1.0, w0: 1.0 };
                    (one, one)
                }
                WeightingMode::ClassWeighted => {
                    if pair == PairState::Contradiction {
                        return Err(WeightingError::InvalidSample);
                    }
                    (class[positive_head(k)].into(), class[negated_head(k)].into())
                }
                WeightingMode::Modified { modifier } => {
                    // non-ambiguous pairs ignore the draw
                    let draw = if pair == PairState::Ambiguous {
                        keyed_draw(modifier, key, k, epoch, step)
                    } else {
                        ModifierDraw::fixed(1.0)
                    };
                    effective_weights(pair, &class[positive_head(k)], &class[negated_head(k)], draw)?
                }
            };
            w1.extend([p.w1, n.w1]);
            w0.extend([p.w0, n.w0]);
        }
    }
    Ok((w1, w0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn class_weight_examples() {
        let c = class_weights(12088, 57920).unwrap();
        assert!((c.w1 - 0.827334).abs() < 1e-6);
        assert!((c.w0 - 0.172666).abs() < 1e-6);
        let s = class_weights(40, 40).unwrap();
        assert_eq!((s.w1, s.w0), (0.5, 0.5));
        let b = class_weights(0, 9).unwrap();
        assert_eq!((b.w1, b.w0), (1.0, 0.0));
        assert_eq!(class_weights(0, 0), Err(WeightingError::EmptyClass));
    }

    #[test]
    fn degenerate_gaussian_returns_mu() {
        let cfg = ModifierConfig::new(0.8, 0.0, 1).unwrap();
        let mut r = rng::Rng::seed_from_u64(3);
        let d = draw_modifier(&cfg, &mut r);
        assert_eq!(d.m, 0.8);
        assert_eq!(d.m_bar, 1.0 - 0.8);
    }

    #[test]
    fn draws_are_clamped_and_complementary() {
        let cfg = ModifierConfig::new(1.0, 0.05, 1).unwrap();
        let mut r = rng::Rng::seed_from_u64(11);
        for _ in 0..100_000 {
            let d = draw_modifier(&cfg, &mut r);
            assert!((0.0..=1.0).contains(&d.m));
            assert!((0.0..=1.0).contains(&d.m_bar));
            assert_eq!(d.m + d.m_bar, 1.0);
        }
    }

    #[test]
    fn effective_weight_examples() {
        let pos = ClassWeights {
            w1: 0.8,
            w0: 0.2,
            f1: 2,
            f0: 8,
        };
        let neg = ClassWeights {
            w1: 0.6,
            w0: 0.4,
            f1: 4,
            f0: 6,
        };
        let (p, n) = effective_weights(PairState::Ambiguous, &pos, &neg, ModifierDraw::fixed(0.8)).unwrap();
        assert!((p.w0 - 0.16).abs() < 1e-15);
        assert!((n.w0 - 0.08).abs() < 1e-15);
        assert_eq!((p.w1, n.w1), (0.8, 0.6));

        let (p, n) = effective_weights(PairState::PositiveExists, &pos, &neg, ModifierDraw::fixed(0.3)).unwrap();
        assert_eq!((p, n), (pos.into(), neg.into()));

        let (p, n) = effective_weights(PairState::Ambiguous, &pos, &neg, ModifierDraw::fixed(0.5)).unwrap();
        assert_eq!((p.w0, n.w0), (0.1, 0.2));

        assert_eq!(
            effective_weights(PairState::Contradiction, &pos, &neg, ModifierDraw::fixed(0.5)),
            Err(WeightingError::InvalidSample)
        );
    }

    #[test]
    fn keyed_draws_replay() {
        let cfg = ModifierConfig::new(0.7, 0.05, 42).unwrap();
        assert_eq!(keyed_draw(&cfg, 5, 1, 0, 9), keyed_draw(&cfg, 5, 1, 0, 9));
        assert_ne!(keyed_draw(&cfg, 5, 1, 0, 9), keyed_draw(&cfg, 5, 1, 0, 10));
        let once = ModifierConfig {
            redraw: Redraw::Once,
            ..cfg
        };
        assert_eq!(keyed_draw(&once, 5, 1, 0, 9), keyed_draw(&once, 5, 1, 3, 10));
        let epoch = ModifierConfig {
            redraw: Redraw::PerEpoch,
            ..cfg
        };
        assert_eq!(keyed_draw(&epoch, 5, 1, 2, 9), keyed_draw(&epoch, 5, 1, 2, 10));
    }

    #[test]
    fn config_validation() {
        assert!(ModifierConfig::new(1.2, 0.05, 0).is_err());
        assert!(ModifierConfig::new(0.5, -0.1, 0).is_err());
        let cfg: ModifierConfig = serde_json::from_str(r#"{"mu":0.8}"#).unwrap();
        assert_eq!(cfg.sigma, DEFAULT_SIGMA);
        assert!(serde_json::from_str::<ModifierConfig>(r#"{"mu":0.8,"sigmaa":1}"#).is_err());
    }

    #[test]
    fn batch_weights_apply_modifiers_only_to_ambiguous_pairs() {
        // sample 0: (1,0); sample 1: (0,0)
        let labels = LabelMatrix::new(vec!["a".into(), "b".into()], 1, vec![1, 0, 0, 0]).unwrap();
        let class = head_class_weights(&labels).unwrap();
        assert_eq!(class[0].f1, 1);
        assert_eq!(class[1].f1, 0);
        let mode = WeightingMode::Modified {
            modifier: ModifierConfig::new(0.8, 0.0, 0).unwrap(),
        };
        let (w1, w0) = batch_weights(&mode, &class, &labels, &[0, 1], &[0, 1], 0, 0).unwrap();
        assert_eq!(w1, vec![0.5, 1.0, 0.5, 1.0]);
        assert_eq!(w0[..2], [0.5, 0.0]);
        assert_eq!(w0[2], 0.5 * 0.8);
        let (_, base) = batch_weights(&WeightingMode::ClassWeighted, &class, &labels, &[0, 1], &[0, 1], 0, 0).unwrap();
        assert_eq!(base, vec![0.5, 0.0, 0.5, 0.0]);
    }
}

//! ROC-AUC, unambiguous-only test filtering, the training loop and the
//! μ-sweep experiment.

mod chart;
mod sweep;
mod train;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Dataset};
use crate::labelcore::{negated_head, positive_head, LabelError, LabelMatrix, PairState};
use crate::models::{Model, ModelError};
use crate::tensor::TensorError;
use crate::weighting::WeightingError;

pub use chart::render_family_svg;
pub use sweep::{mu_sweep, Arm, ArmFailure, HeadFamily, SplitData, SummaryRow, SweepConfig, SweepReport, SweepRow};
pub use train::{train, EpochLog, TrainConfig, TrainLog};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("AUC undefined with {n_pos} positives and {n_neg} negatives")]
    SingleClass { n_pos: usize, n_neg: usize },
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("score {index} is not finite")]
    NonFiniteScore { index: usize },
    #[error("non-finite loss at epoch {epoch}, step {step}: {diagnostic}")]
    NonFiniteLoss {
        epoch: usize,
        step: u64,
        diagnostic: String,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("model has {model} heads, vocabulary needs {vocabulary}")]
    HeadMismatch { model: usize, vocabulary: usize },
    #[error("cannot parse sweep report line {line}: {message}")]
    Report { line: usize, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Weighting(#[from] WeightingError),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

impl EvalError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        EvalError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocResult {
    pub head_id: usize,
    pub auc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

/// Mann–Whitney AUC: the fraction of (positive, negative) pairs ranked
/// correctly, ties counting one half.
///
/// Sorts once and counts `2U` as an integer, so the result is bit-identical
/// to the quadratic pair count.
pub fn roc_auc(head_id: usize, scores: &[f64], labels: &[bool]) -> Result<RocResult, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if let Some(index) = scores.iter().position(|s| !s.is_finite()) {
        return Err(EvalError::NonFiniteScore { index });
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass { n_pos, n_neg });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut twice_u: u128 = 0;
    let mut negs_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut p, mut q) = (0u128, 0u128);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                p += 1;
            } else {
                q += 1;
            }
            j += 1;
        }
        twice_u += 2 * p * negs_below + p * q;
        negs_below += q;
        i = j;
    }
    let auc = twice_u as f64 / (2 * n_pos as u128 * n_neg as u128) as f64;
    Ok(RocResult {
        head_id,
        auc,
        n_pos,
        n_neg,
    })
}

/// Indices of samples whose pair for `finding_id` is `(1,0)` or `(0,1)`.
/// An empty result is logged as a warning.
pub fn filter_unambiguous(labels: &LabelMatrix, finding_id: usize) -> Result<Vec<usize>, EvalError> {
    if finding_id >= labels.n_findings() {
        return Err(LabelError::UnknownFinding(finding_id).into());
    }
    let kept: Vec<usize> = (0..labels.n_samples())
        .filter(|&s| {
            matches!(
                labels.pair_state(s, finding_id),
                PairState::PositiveExists | PairState::NegationExists
            )
        })
        .collect();
    if kept.is_empty() {
        warn!("finding {finding_id}: no unambiguous samples, evaluation skipped");
    }
    Ok(kept)
}

/// One head's evaluation; `result` is `None` when the filtered set was
/// empty or single-class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadEval {
    pub head_id: usize,
    pub head_name: String,
    pub result: Option<RocResult>,
}

/// AUC of every head on the unambiguous samples of its pair, given
/// row-major `N×heads` scores.
pub fn evaluate_scores(
    scores: &[f32],
    labels: &LabelMatrix,
    head_names: &[String],
) -> Result<Vec<HeadEval>, EvalError> {
    let heads = labels.n_heads();
    if scores.len() != labels.n_samples() * heads {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.n_samples() * heads,
        });
    }
    let mut out = Vec::with_capacity(heads);
    for k in 0..labels.n_findings() {
        let kept = filter_unambiguous(labels, k)?;
        for head in [positive_head(k), negated_head(k)] {
            let s: Vec<f64> = kept.iter().map(|&i| scores[i * heads + head] as f64).collect();
            let y: Vec<bool> = kept.iter().map(|&i| labels.row(i)[head] == 1).collect();
            let result = match roc_auc(head, &s, &y) {
                Ok(r) => Some(r),
                Err(EvalError::SingleClass { n_pos, n_neg }) => {
                    if !kept.is_empty() {
                        warn!("head {head}: {n_pos} positives and {n_neg} negatives, AUC skipped");
                    }
                    None
                }
                Err(e) => return Err(e),
            };
            out.push(HeadEval {
                head_id: head,
                head_name: head_names[head].clone(),
                result,
            });
        }
    }
    Ok(out)
}

/// Predicts on every sample of `dataset` and evaluates each head.
pub fn evaluate_model(model: &Model, dataset: &Dataset, batch_size: usize) -> Result<Vec<HeadEval>, EvalError> {
    let labels = dataset.labels()?;
    if model.head_count() != labels.n_heads() {
        return Err(EvalError::HeadMismatch {
            model: model.head_count(),
            vocabulary: labels.n_heads(),
        });
    }
    let idx: Vec<usize> = (0..dataset.len()).collect();
    let scores = if idx.is_empty() {
        Vec::new()
    } else {
        model.predict(&dataset.images_tensor(&idx), batch_size)?
    };
    let names: Vec<String> = (0..labels.n_heads()).map(|h| dataset.vocabulary.head_name(h)).collect();
    evaluate_scores(&scores, &labels, &names)
}

/// Mean AUC over heads with a defined result; `NaN` when there are none.
pub fn mean_auc(evals: &[HeadEval]) -> f64 {
    let v: Vec<f64> = evals.iter().filter_map(|e| e.result.map(|r| r.auc)).collect();
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

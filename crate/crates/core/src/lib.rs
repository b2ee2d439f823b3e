//! Ambiguity-aware class weighting for negated-label multi-label classifiers.

pub mod data;
pub mod eval;
pub mod labelcore;
pub mod loss;
pub mod models;
pub mod rng;
pub mod tensor;
pub mod textlabeler;
pub mod weighting;

pub use data::{Dataset, Sample, SynthConfig};
pub use eval::{mu_sweep, roc_auc, train, RocResult, SweepConfig, SweepReport, TrainConfig};
pub use labelcore::{FindingVocabulary, IngestMode, LabelMatrix, MentionState, PairState};
pub use models::{Model, ModelConfig};
pub use textlabeler::{Labeler, NegationRuleSet, Report};
pub use weighting::{ClassWeights, ModifierConfig, WeightingMode};

//! Synthetic datasets with controlled label ambiguity, splitting,
//! augmentation and file formats.
//!
//! Each sample draws a ground-truth bit per finding, renders the present
//! findings onto a noisy background, and then draws the observed report
//! state from the finding's report policy. Truth stays on the [`Sample`] for
//! audits and is never written to the training manifest.

mod augment;
mod io;

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labelcore::{FindingVocabulary, LabelError, LabelMatrix, MentionState};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;
use crate::textlabeler::{Labeler, NegationRuleSet, Report, TextLabelError};

pub use augment::{augment, AugmentConfig, Transform};
pub use io::{
    level_to_value, load_dataset, load_manifest, load_truth_audit, read_pgm, save_dataset, save_manifest,
    save_manifest_rows, save_truth_audit, value_to_level, write_pgm, Manifest, ManifestRow, MANIFEST_FILE, TRUTH_FILE,
};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid config field `{field}`: {message}")]
    InvalidConfig { field: String, message: String },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("image format: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Text(#[from] TextLabelError),
    #[error("invalid split: {0}")]
    Split(String),
}

impl DataError {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        DataError::InvalidConfig {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.into(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Blob,
    Line,
    Ring,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FindingSpec {
    pub name: String,
    pub shape: ShapeKind,
    pub prevalence: f64,
}

/// Context dependence of negation: when the finding is absent, a report
/// negates it with this probability if the `finding` named here is present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NegationCue {
    pub finding: String,
    pub p_negate_given_absent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportPolicy {
    pub p_affirm_given_present: f64,
    pub p_negate_given_absent: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cue: Option<NegationCue>,
}

impl ReportPolicy {
    pub fn new(p_affirm_given_present: f64, p_negate_given_absent: f64) -> Self {
        Self {
            p_affirm_given_present,
            p_negate_given_absent,
            cue: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub background: f64,
    pub noise_stddev: f64,
    pub amplitude: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            background: 0.3,
            noise_stddev: 0.12,
            amplitude: 0.4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportMode {
    /// States come straight from the report policy.
    #[default]
    Direct,
    /// The policy's states are written as report sentences and re-derived
    /// by the text labeler.
    Text,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub image_size: usize,
    pub findings: Vec<FindingSpec>,
    pub report_policy: Vec<ReportPolicy>,
    pub seed: u64,
    #[serde(default)]
    pub render: RenderConfig,
    #[serde(default)]
    pub report_mode: ReportMode,
}

/// Fraction of samples left unmentioned: `prev (1 - p_aff) + (1 - prev) (1 - p_neg)`.
pub fn nomention_mass(prevalence: f64, p_affirm: f64, p_negate: f64) -> f64 {
    prevalence * (1.0 - p_affirm) + (1.0 - prevalence) * (1.0 - p_negate)
}

/// The `p_negate_given_absent` that yields the target NoMention fraction,
/// if one exists in `[0, 1]`.
pub fn calibrate_p_negate(target: f64, prevalence: f64, p_affirm: f64) -> Option<f64> {
    if prevalence >= 1.0 {
        return None;
    }
    let p = 1.0 - (target - prevalence * (1.0 - p_affirm)) / (1.0 - prevalence);
    (0.0..=1.0).contains(&p).then_some(p)
}

fn check_probability(field: String, p: f64) -> Result<(), DataError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(DataError::config(field, format!("{p} is not a probability in [0, 1]")));
    }
    Ok(())
}

impl SynthConfig {
    /// Three findings whose NoMention fractions are 0.50, 0.23 and 0.66.
    pub fn ambiguity_calibration(n_samples: usize, seed: u64) -> Self {
        let targets = [
            ("consolidation", ShapeKind::Blob, 0.50),
            ("pneumothorax", ShapeKind::Line, 0.23),
            ("pulmonary edema", ShapeKind::Ring, 0.66),
        ];
        let (prevalence, p_affirm) = (0.3, 0.8);
        Self {
            n_samples,
            image_size: 32,
            findings: targets
                .iter()
                .map(|&(name, shape, _)| FindingSpec {
                    name: name.into(),
                    shape,
                    prevalence,
                })
                .collect(),
            report_policy: targets
                .iter()
                .map(|&(_, _, t)| {
                    ReportPolicy::new(
                        p_affirm,
                        calibrate_p_negate(t, prevalence, p_affirm).expect("reachable target"),
                    )
                })
                .collect(),
            seed,
            render: RenderConfig::default(),
            report_mode: ReportMode::Direct,
        }
    }

    /// Two negated pairs where an absent finding is usually only negated
    /// when the other finding is present; otherwise it goes unmentioned.
    pub fn desk_experiment(n_samples: usize, seed: u64) -> Self {
        let policy = |cue: &str| ReportPolicy {
            p_affirm_given_present: 0.9,
            p_negate_given_absent: 0.02,
            cue: Some(NegationCue {
                finding: cue.into(),
                p_negate_given_absent: 0.8,
            }),
        };
        Self {
            n_samples,
            image_size: 32,
            findings: vec![
                FindingSpec {
                    name: "consolidation".into(),
                    shape: ShapeKind::Blob,
                    prevalence: 0.4,
                },
                FindingSpec {
                    name: "pneumothorax".into(),
                    shape: ShapeKind::Line,
                    prevalence: 0.4,
                },
            ],
            report_policy: vec![policy("pneumothorax"), policy("consolidation")],
            seed,
            render: RenderConfig {
                amplitude: 0.35,
                ..RenderConfig::default()
            },
            report_mode: ReportMode::Direct,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.n_samples == 0 {
            return Err(DataError::config("n_samples", "must be positive"));
        }
        if self.image_size < 8 {
            return Err(DataError::config("image_size", "must be at least 8"));
        }
        if self.findings.is_empty() {
            return Err(DataError::config("findings", "at least one finding is required"));
        }
        if self.report_policy.len() != self.findings.len() {
            return Err(DataError::config(
                "report_policy",
                format!(
                    "{} policies for {} findings",
                    self.report_policy.len(),
                    self.findings.len()
                ),
            ));
        }
        for (i, f) in self.findings.iter().enumerate() {
            if f.name.trim().is_empty() {
                return Err(DataError::config(format!("findings[{i}].name"), "empty name"));
            }
            if self.findings[..i].iter().any(|g| g.name == f.name) {
                return Err(DataError::config(
                    format!("findings[{i}].name"),
                    format!("duplicate finding `{}`", f.name),
                ));
            }
            check_probability(format!("findings[{i}].prevalence"), f.prevalence)?;
        }
        for (i, p) in self.report_policy.iter().enumerate() {
            check_probability(
                format!("report_policy[{i}].p_affirm_given_present"),
                p.p_affirm_given_present,
            )?;
            check_probability(
                format!("report_policy[{i}].p_negate_given_absent"),
                p.p_negate_given_absent,
            )?;
            if let Some(cue) = &p.cue {
                check_probability(
                    format!("report_policy[{i}].cue.p_negate_given_absent"),
                    cue.p_negate_given_absent,
                )?;
                match self.findings.iter().position(|f| f.name == cue.finding) {
                    None => {
                        return Err(DataError::config(
                            format!("report_policy[{i}].cue.finding"),
                            format!("unknown finding `{}`", cue.finding),
                        ))
                    }
                    Some(j) if j == i => {
                        return Err(DataError::config(
                            format!("report_policy[{i}].cue.finding"),
                            "a finding cannot cue itself",
                        ))
                    }
                    _ => {}
                }
            }
        }
        let r = &self.render;
        for (field, v) in [("render.background", r.background), ("render.amplitude", r.amplitude)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(DataError::config(field, format!("{v} outside [0, 1]")));
            }
        }
        if !(r.noise_stddev >= 0.0 && r.noise_stddev.is_finite()) {
            return Err(DataError::config(
                "render.noise_stddev",
                "must be finite and non-negative",
            ));
        }
        Ok(())
    }

    pub fn vocabulary(&self) -> Result<FindingVocabulary, DataError> {
        let names: Vec<&str> = self.findings.iter().map(|f| f.name.as_str()).collect();
        Ok(FindingVocabulary::from_names(&names)?)
    }
}

/// Single-channel image with values in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), height * width, "image buffer size");
        Self { height, width, data }
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub sample_id: String,
    pub image: Image,
    /// Ground truth; only for generation audits and diagnostics.
    pub truth: Option<Vec<bool>>,
    pub states: Vec<MentionState>,
    /// Synthetic report body when generated in text mode.
    pub report: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub vocabulary: FindingVocabulary,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_ids(&self) -> Vec<String> {
        self.samples.iter().map(|s| s.sample_id.clone()).collect()
    }

    pub fn labels(&self) -> Result<LabelMatrix, LabelError> {
        let states: Vec<Vec<MentionState>> = self.samples.iter().map(|s| s.states.clone()).collect();
        LabelMatrix::from_states(self.sample_ids(), &states, &self.vocabulary)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            vocabulary: self.vocabulary.clone(),
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    /// `(height, width)` of the first image.
    pub fn image_shape(&self) -> Option<(usize, usize)> {
        self.samples.first().map(|s| (s.image.height, s.image.width))
    }

    /// Stacks the selected images into an `N×1×H×W` tensor.
    pub fn images_tensor(&self, indices: &[usize]) -> Tensor<f32> {
        let (h, w) = self.image_shape().unwrap_or((0, 0));
        let mut data = Vec::with_capacity(indices.len() * h * w);
        for &i in indices {
            data.extend_from_slice(&self.samples[i].image.data);
        }
        Tensor::new(&[indices.len(), 1, h, w], data).expect("images share one shape")
    }

    /// Fraction of samples whose truth is 1, per finding.
    pub fn truth_prevalence(&self) -> Option<Vec<f64>> {
        let k = self.vocabulary.len();
        let mut counts = vec![0usize; k];
        for s in &self.samples {
            let t = s.truth.as_ref()?;
            for (c, &b) in counts.iter_mut().zip(t) {
                *c += b as usize;
            }
        }
        Some(counts.iter().map(|&c| c as f64 / self.len().max(1) as f64).collect())
    }
}

const LABEL_STREAM: u64 = 0;
const IMAGE_STREAM: u64 = 1;

fn sample_stream(seed: u64, index: usize, purpose: u64) -> Rng {
    rng::stream(seed, &[rng::key_of("sample"), index as u64, purpose])
}

pub fn sample_id(index: usize) -> String {
    format!("s{index:06}")
}

/// Generates the dataset; a pure function of the config.
pub fn generate(cfg: &SynthConfig) -> Result<Dataset, DataError> {
    cfg.validate()?;
    let vocabulary = cfg.vocabulary()?;
    let labeler = (cfg.report_mode == ReportMode::Text).then(|| Labeler::new(&vocabulary, NegationRuleSet::default()));
    let cues: Vec<Option<(usize, f64)>> = cfg
        .report_policy
        .iter()
        .map(|p| {
            p.cue.as_ref().map(|c| {
                let j = cfg
                    .findings
                    .iter()
                    .position(|f| f.name == c.finding)
                    .expect("validated");
                (j, c.p_negate_given_absent)
            })
        })
        .collect();
    let mut samples = Vec::with_capacity(cfg.n_samples);
    for i in 0..cfg.n_samples {
        let mut lr = sample_stream(cfg.seed, i, LABEL_STREAM);
        let truth: Vec<bool> = cfg.findings.iter().map(|f| lr.random_bool(f.prevalence)).collect();
        let mut states = Vec::with_capacity(truth.len());
        for (k, p) in cfg.report_policy.iter().enumerate() {
            let state = if truth[k] {
                if lr.random_bool(p.p_affirm_given_present) {
                    MentionState::Affirmed
                } else {
                    MentionState::NoMention
                }
            } else {
                let p_neg = match cues[k] {
                    Some((j, p_cue)) if truth[j] => p_cue,
                    _ => p.p_negate_given_absent,
                };
                if lr.random_bool(p_neg) {
                    MentionState::Negated
                } else {
                    MentionState::NoMention
                }
            };
            states.push(state);
        }
        let (states, report) = match &labeler {
            Some(labeler) => {
                let body = write_report(&vocabulary, &states, &mut lr);
                let labeled = labeler.label(&Report::new(sample_id(i), body.clone())?);
                (labeled, Some(body))
            }
            None => (states, None),
        };
        let image = render_image(cfg, &truth, &mut sample_stream(cfg.seed, i, IMAGE_STREAM));
        samples.push(Sample {
            sample_id: sample_id(i),
            image,
            truth: Some(truth),
            states,
            report,
        });
    }
    Ok(Dataset { vocabulary, samples })
}

/// Writes report sentences expressing the given states.
pub fn write_report(vocab: &FindingVocabulary, states: &[MentionState], rng: &mut Rng) -> String {
    const AFFIRM: [&str; 3] = ["There is {}.", "Findings consistent with {}.", "{} is present."];
    const NEGATE: [&str; 3] = ["No {}.", "There is no evidence of {}.", "Negative for {}."];
    const FILLER: [&str; 3] = [
        "Heart size is normal.",
        "Bony structures are intact.",
        "Lines and tubes are unchanged.",
    ];
    let names = vocab.names();
    let mut sentences = Vec::new();
    let mut negated = Vec::new();
    for (k, s) in states.iter().enumerate() {
        match s {
            MentionState::Affirmed => {
                sentences.push(AFFIRM[rng.random_range(0..AFFIRM.len())].replace("{}", names[k]));
            }
            MentionState::Negated => negated.push(names[k]),
            MentionState::NoMention => {}
        }
    }
    // pairs are joined as "No a or b." to exercise list scope
    for chunk in negated.chunks(2) {
        match chunk {
            [a, b] if rng.random_bool(0.5) => sentences.push(format!("No {a} or {b}.")),
            _ => {
                for n in chunk {
                    sentences.push(NEGATE[rng.random_range(0..NEGATE.len())].replace("{}", n));
                }
            }
        }
    }
    if sentences.is_empty() || rng.random_bool(0.5) {
        sentences.push(FILLER[rng.random_range(0..FILLER.len())].to_string());
    }
    sentences.shuffle(rng);
    let mut body = sentences.join(" ");
    if let Some(first) = body.get(..1) {
        body = first.to_uppercase() + &body[1..];
    }
    body
}

fn render_image(cfg: &SynthConfig, truth: &[bool], rng: &mut Rng) -> Image {
    let s = cfg.image_size;
    let r = &cfg.render;
    let mut img = vec![r.background; s * s];
    if r.noise_stddev > 0.0 {
        let normal = Normal::new(0.0, r.noise_stddev).expect("validated");
        img.iter_mut().for_each(|v| *v += normal.sample(rng));
    }
    for (f, &present) in cfg.findings.iter().zip(truth) {
        if present {
            draw_shape(&mut img, s, f.shape, r.amplitude, rng);
        }
    }
    let data = img.into_iter().map(|v| level_to_value(value_to_level(v))).collect();
    Image::new(s, s, data)
}

fn draw_shape(img: &mut [f64], s: usize, kind: ShapeKind, amp: f64, rng: &mut Rng) {
    let unit = s as f64 / 32.0;
    let margin = 6.0 * unit;
    let cx = rng.random_range(margin..s as f64 - margin);
    let cy = rng.random_range(margin..s as f64 - margin);
    let profile: Box<dyn Fn(f64, f64) -> f64> = match kind {
        ShapeKind::Blob => {
            let r = rng.random_range(2.0..3.5) * unit;
            Box::new(move |dx, dy| (-(dx * dx + dy * dy) / (2.0 * r * r)).exp())
        }
        ShapeKind::Line => {
            let th = rng.random_range(0.0..std::f64::consts::PI);
            let len = rng.random_range(10.0..16.0) * unit;
            let (ux, uy) = (th.cos(), th.sin());
            Box::new(move |dx, dy| {
                let along = dx * ux + dy * uy;
                let across = -dx * uy + dy * ux;
                if along.abs() <= len / 2.0 {
                    (-across * across / 2.0).exp()
                } else {
                    0.0
                }
            })
        }
        ShapeKind::Ring => {
            let r = rng.random_range(4.0..6.0) * unit;
            Box::new(move |dx, dy| {
                let d = (dx * dx + dy * dy).sqrt() - r;
                (-d * d / (2.0 * 0.7 * 0.7)).exp()
            })
        }
    };
    for y in 0..s {
        for x in 0..s {
            img[y * s + x] += amp * profile(x as f64 - cx, y as f64 - cy);
        }
    }
}

/// Disjoint index sets covering `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles `0..n` by seed and cuts it by `fractions`; train and val sizes
/// are rounded, test takes the remainder.
pub fn split(n: usize, fractions: (f64, f64, f64), seed: u64) -> Result<Split, DataError> {
    let (a, b, c) = fractions;
    if [a, b, c].iter().any(|f| !(0.0..=1.0).contains(f)) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(DataError::Split(format!(
            "fractions {fractions:?} must be in [0, 1] and sum to 1"
        )));
    }
    let n_train = (a * n as f64).round() as usize;
    let n_val = ((b * n as f64).round() as usize).min(n - n_train);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, &[rng::key_of("split")]));
    let test = idx.split_off(n_train + n_val);
    let val = idx.split_off(n_train);
    Ok(Split { train: idx, val, test })
}

pub const DEFAULT_SPLIT: (f64, f64, f64) = (0.7, 0.1, 0.2);

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labelcore::PairState;

    fn small(n: usize, seed: u64) -> SynthConfig {
        SynthConfig {
            n_samples: n,
            ..SynthConfig::desk_experiment(n, seed)
        }
    }

    #[test]
    fn full_mention_policy_has_no_ambiguity() {
        let mut cfg = small(300, 1);
        for p in &mut cfg.report_policy {
            *p = ReportPolicy::new(1.0, 1.0);
        }
        let labels = generate(&cfg).unwrap().labels().unwrap();
        for k in 0..2 {
            assert_eq!(labels.ambiguity_rate(k).unwrap(), 0.0);
        }
    }

    #[test]
    fn zero_prevalence_means_absent_truth() {
        let mut cfg = small(300, 2);
        cfg.findings[0].prevalence = 0.0;
        let ds = generate(&cfg).unwrap();
        for s in &ds.samples {
            assert!(!s.truth.as_ref().unwrap()[0]);
            assert!(matches!(s.states[0], MentionState::Negated | MentionState::NoMention));
        }
    }

    #[test]
    fn generation_is_a_pure_function_of_config() {
        let a = generate(&small(50, 3)).unwrap();
        let b = generate(&small(50, 3)).unwrap();
        let c = generate(&small(50, 4)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        // a longer run extends, rather than reshuffles, a shorter one
        let longer = generate(&small(60, 3)).unwrap();
        assert_eq!(&longer.samples[..50], &a.samples[..]);
    }

    #[test]
    fn images_are_quantized_and_in_range() {
        let ds = generate(&small(20, 5)).unwrap();
        for s in &ds.samples {
            assert_eq!((s.image.height, s.image.width), (32, 32));
            for &v in &s.image.data {
                assert!((0.0..=1.0).contains(&v));
                assert_eq!(level_to_value(value_to_level(v as f64)), v);
            }
        }
    }

    #[test]
    fn calibration_helper_inverts_the_mass() {
        for &t in &[0.50, 0.23, 0.66] {
            let p = calibrate_p_negate(t, 0.3, 0.8).unwrap();
            assert!((nomention_mass(0.3, 0.8, p) - t).abs() < 1e-12);
        }
        assert_eq!(calibrate_p_negate(0.01, 0.5, 0.0), None);
    }

    #[test]
    fn cue_changes_negation_rate() {
        let ds = generate(&small(4000, 6)).unwrap();
        let (mut with_cue, mut with_cue_neg, mut without, mut without_neg) = (0, 0, 0, 0);
        for s in &ds.samples {
            let t = s.truth.as_ref().unwrap();
            if !t[0] {
                if t[1] {
                    with_cue += 1;
                    with_cue_neg += (s.states[0] == MentionState::Negated) as usize;
                } else {
                    without += 1;
                    without_neg += (s.states[0] == MentionState::Negated) as usize;
                }
            }
        }
        let a = with_cue_neg as f64 / with_cue as f64;
        let b = without_neg as f64 / without as f64;
        assert!((a - 0.8).abs() < 0.05, "{a}");
        assert!((b - 0.02).abs() < 0.015, "{b}");
    }

    #[test]
    fn text_mode_round_trips_through_the_labeler() {
        let mut cfg = SynthConfig::ambiguity_calibration(400, 7);
        cfg.report_mode = ReportMode::Text;
        let text = generate(&cfg).unwrap();
        cfg.report_mode = ReportMode::Direct;
        let direct = generate(&cfg).unwrap();
        for (t, d) in text.samples.iter().zip(&direct.samples) {
            assert_eq!(t.states, d.states, "{:?}", t.report);
            assert!(t.report.is_some());
        }
    }

    #[test]
    fn config_errors_name_the_field() {
        let mut cfg = small(10, 0);
        cfg.findings[1].prevalence = 1.5;
        match cfg.validate() {
            Err(DataError::InvalidConfig { field, .. }) => assert_eq!(field, "findings[1].prevalence"),
            other => panic!("{other:?}"),
        }
        let mut cfg = small(10, 0);
        cfg.report_policy[0].cue.as_mut().unwrap().finding = "nothing".into();
        assert!(cfg.validate().is_err());
        let json = r#"{"n_samples":1,"image_size":32,"findings":[],"report_policy":[],"seed":0,"extra":1}"#;
        assert!(serde_json::from_str::<SynthConfig>(json).is_err());
    }

    #[test]
    fn split_examples() {
        let s = split(10, DEFAULT_SPLIT, 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (7, 1, 2));
        assert_eq!(s, split(10, DEFAULT_SPLIT, 1).unwrap());
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        let big = split(4000, DEFAULT_SPLIT, 2).unwrap();
        assert_eq!((big.train.len(), big.val.len(), big.test.len()), (2800, 400, 800));
        assert!(split(10, (0.5, 0.5, 0.5), 1).is_err());
    }

    #[test]
    fn labels_never_contain_contradictions() {
        let ds = generate(&small(500, 8)).unwrap();
        let labels = ds.labels().unwrap();
        for s in 0..labels.n_samples() {
            for k in 0..2 {
                assert_ne!(labels.pair_state(s, k), PairState::Contradiction);
            }
        }
    }
}

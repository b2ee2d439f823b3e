//! Finding vocabulary, mention states and negated-pair logic.
//!
//! Every finding owns two sigmoid heads: a positive head (the finding is
//! present) and a negated head (the finding is explicitly ruled out). Heads
//! are interleaved, so finding `k` owns heads `2k` and `2k + 1`. The layout is
//! part of the checkpoint and manifest contracts and must not change.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const DEFAULT_VOCABULARY: &str = include_str!("../data/vocabulary.txt");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabelError {
    #[error("expected {expected} mention states (one per finding), got {got}")]
    VocabularyMismatch { expected: usize, got: usize },
    #[error("unknown finding id {0}")]
    UnknownFinding(usize),
    #[error("unknown finding name `{0}`")]
    UnknownFindingName(String),
    #[error("sample `{sample_id}` has contradictory labels (1,1) for finding `{finding}`")]
    Contradiction { sample_id: String, finding: String },
    #[error("vocabulary line {line}: {message}")]
    VocabularyParse { line: usize, message: String },
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
    #[error("invalid label matrix: {0}")]
    InvalidMatrix(String),
    #[error("unknown mention state `{0}`")]
    UnknownState(String),
    #[error("i/o error reading {path}: {message}")]
    Io { path: String, message: String },
}

/// How a report talks about one finding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MentionState {
    Affirmed,
    Negated,
    NoMention,
}

impl MentionState {
    /// Target bits `(positive head, negated head)`.
    pub fn bits(self) -> (u8, u8) {
        match self {
            MentionState::Affirmed => (1, 0),
            MentionState::Negated => (0, 1),
            MentionState::NoMention => (0, 0),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MentionState::Affirmed => "affirmed",
            MentionState::Negated => "negated",
            MentionState::NoMention => "nomention",
        }
    }

    /// Inverse of [`MentionState::bits`]; `None` for the contradictory pair.
    pub fn from_bits(a: bool, a_bar: bool) -> Option<Self> {
        match (a, a_bar) {
            (true, false) => Some(MentionState::Affirmed),
            (false, true) => Some(MentionState::Negated),
            (false, false) => Some(MentionState::NoMention),
            (true, true) => None,
        }
    }
}

impl fmt::Display for MentionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MentionState {
    type Err = LabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "affirmed" => Ok(MentionState::Affirmed),
            "negated" => Ok(MentionState::Negated),
            "nomention" => Ok(MentionState::NoMention),
            other => Err(LabelError::UnknownState(other.to_string())),
        }
    }
}

/// Interpretation of a `(A, Ā)` bit pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PairState {
    /// `(1, 1)`: both the finding and its negation were asserted.
    Contradiction,
    /// `(1, 0)`
    PositiveExists,
    /// `(0, 1)`
    NegationExists,
    /// `(0, 0)`: the report did not mention the finding.
    Ambiguous,
}

pub fn pair_state(a: bool, a_bar: bool) -> PairState {
    match (a, a_bar) {
        (true, true) => PairState::Contradiction,
        (true, false) => PairState::PositiveExists,
        (false, true) => PairState::NegationExists,
        (false, false) => PairState::Ambiguous,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub id: usize,
    pub canonical_name: String,
    pub synonyms: Vec<String>,
}

/// The closed set of findings a model is trained on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FindingVocabulary {
    findings: Vec<Finding>,
}

impl FindingVocabulary {
    /// Finding ids must be exactly `0..K` (in any order). Synonyms are
    /// lowercased; the canonical name is always added as a synonym.
    pub fn new(mut findings: Vec<Finding>) -> Result<Self, LabelError> {
        if findings.is_empty() {
            return Err(LabelError::InvalidVocabulary("no findings".into()));
        }
        findings.sort_by_key(|f| f.id);
        let mut names = HashSet::new();
        for (expected, finding) in findings.iter_mut().enumerate() {
            if finding.id != expected {
                return Err(LabelError::InvalidVocabulary(format!(
                    "finding ids must be unique and dense from 0; expected id {expected}, found {}",
                    finding.id
                )));
            }
            let canonical = finding.canonical_name.trim().to_string();
            if canonical.is_empty() {
                return Err(LabelError::InvalidVocabulary(format!(
                    "finding {} has an empty name",
                    finding.id
                )));
            }
            if !names.insert(canonical.clone()) {
                return Err(LabelError::InvalidVocabulary(format!(
                    "duplicate finding name `{canonical}`"
                )));
            }
            let mut synonyms: Vec<String> = Vec::new();
            for s in std::iter::once(&canonical).chain(finding.synonyms.iter()) {
                let s = normalize_phrase(s);
                if s.is_empty() {
                    return Err(LabelError::InvalidVocabulary(format!(
                        "finding `{canonical}` has an empty synonym"
                    )));
                }
                if !synonyms.contains(&s) {
                    synonyms.push(s);
                }
            }
            finding.canonical_name = canonical;
            finding.synonyms = synonyms;
        }
        Ok(Self { findings })
    }

    /// Parses `finding_id,canonical_name,syn1|syn2|...` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, LabelError> {
        let mut findings = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.splitn(3, ',');
            let id_part = parts.next().unwrap_or("").trim();
            let name = parts.next().map(str::trim).unwrap_or("");
            let syns = parts.next().map(str::trim).unwrap_or("");
            let id = id_part.parse::<usize>().map_err(|_| LabelError::VocabularyParse {
                line: line_no,
                message: format!("finding id `{id_part}` is not a non-negative integer"),
            })?;
            if name.is_empty() {
                return Err(LabelError::VocabularyParse {
                    line: line_no,
                    message: "missing canonical name".into(),
                });
            }
            let synonyms = if syns.is_empty() {
                Vec::new()
            } else {
                syns.split('|').map(|s| s.trim().to_string()).collect()
            };
            findings.push(Finding {
                id,
                canonical_name: name.to_string(),
                synonyms,
            });
        }
        Self::new(findings)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LabelError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| LabelError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    /// Built-in chest X-ray vocabulary (consolidation, pneumothorax,
    /// pulmonary edema, pleural effusion).
    pub fn builtin() -> Self {
        Self::parse(DEFAULT_VOCABULARY).expect("built-in vocabulary is valid")
    }

    /// Vocabulary with the given names as ids `0..K` and no extra synonyms.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self, LabelError> {
        Self::new(
            names
                .iter()
                .enumerate()
                .map(|(id, n)| Finding {
                    id,
                    canonical_name: n.as_ref().to_string(),
                    synonyms: Vec::new(),
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.findings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn head_count(&self) -> usize {
        2 * self.findings.len()
    }

    pub fn findings(&self) -> &[Finding] {
        &self.findings
    }

    pub fn get(&self, finding_id: usize) -> Result<&Finding, LabelError> {
        self.findings
            .get(finding_id)
            .ok_or(LabelError::UnknownFinding(finding_id))
    }

    pub fn id_of(&self, name: &str) -> Result<usize, LabelError> {
        self.findings
            .iter()
            .position(|f| f.canonical_name == name)
            .ok_or_else(|| LabelError::UnknownFindingName(name.to_string()))
    }

    pub fn names(&self) -> Vec<&str> {
        self.findings.iter().map(|f| f.canonical_name.as_str()).collect()
    }

    /// Human-readable head label, e.g. `pneumothorax` / `no pneumothorax`.
    pub fn head_name(&self, head: usize) -> String {
        let f = &self.findings[head / 2];
        if head % 2 == 0 {
            f.canonical_name.clone()
        } else {
            format!("no {}", f.canonical_name)
        }
    }
}

pub fn positive_head(finding_id: usize) -> usize {
    2 * finding_id
}

pub fn negated_head(finding_id: usize) -> usize {
    2 * finding_id + 1
}

fn normalize_phrase(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Target row of length 2K for one sample.
pub fn encode_targets(states: &[MentionState], vocab: &FindingVocabulary) -> Result<Vec<u8>, LabelError> {
    if states.len() != vocab.len() {
        return Err(LabelError::VocabularyMismatch {
            expected: vocab.len(),
            got: states.len(),
        });
    }
    let mut row = vec![0u8; vocab.head_count()];
    for (k, state) in states.iter().enumerate() {
        let (a, a_bar) = state.bits();
        row[positive_head(k)] = a;
        row[negated_head(k)] = a_bar;
    }
    Ok(row)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub sample_index: usize,
    pub sample_id: String,
    pub finding_id: usize,
}

/// What to do with `(1,1)` pairs in externally supplied labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IngestMode {
    /// Any contradiction is an error naming the sample.
    #[default]
    Strict,
    /// Contradictory samples are dropped and counted.
    Lenient,
}

/// Binary targets, `n_samples × 2K`, row-major.
///
/// The constructor checks shape and binarity only. Data from outside the
/// crate should pass through [`LabelMatrix::ingest`] so contradictory rows
/// are rejected or dropped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMatrix {
    sample_ids: Vec<String>,
    n_findings: usize,
    targets: Vec<u8>,
}

impl LabelMatrix {
    pub fn new(sample_ids: Vec<String>, n_findings: usize, targets: Vec<u8>) -> Result<Self, LabelError> {
        if targets.len() != sample_ids.len() * 2 * n_findings {
            return Err(LabelError::InvalidMatrix(format!(
                "{} samples × {} heads needs {} targets, got {}",
                sample_ids.len(),
                2 * n_findings,
                sample_ids.len() * 2 * n_findings,
                targets.len()
            )));
        }
        if let Some(bad) = targets.iter().find(|&&t| t > 1) {
            return Err(LabelError::InvalidMatrix(format!("target value {bad} is not binary")));
        }
        Ok(Self {
            sample_ids,
            n_findings,
            targets,
        })
    }

    pub fn from_states(
        sample_ids: Vec<String>,
        states: &[Vec<MentionState>],
        vocab: &FindingVocabulary,
    ) -> Result<Self, LabelError> {
        if states.len() != sample_ids.len() {
            return Err(LabelError::InvalidMatrix(format!(
                "{} sample ids but {} state rows",
                sample_ids.len(),
                states.len()
            )));
        }
        let mut targets = Vec::with_capacity(states.len() * vocab.head_count());
        for row in states {
            targets.extend(encode_targets(row, vocab)?);
        }
        Self::new(sample_ids, vocab.len(), targets)
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn n_findings(&self) -> usize {
        self.n_findings
    }

    pub fn n_heads(&self) -> usize {
        2 * self.n_findings
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn row(&self, sample: usize) -> &[u8] {
        let h = self.n_heads();
        &self.targets[sample * h..(sample + 1) * h]
    }

    pub fn targets(&self) -> &[u8] {
        &self.targets
    }

    pub fn pair(&self, sample: usize, finding_id: usize) -> (bool, bool) {
        let row = self.row(sample);
        (row[positive_head(finding_id)] == 1, row[negated_head(finding_id)] == 1)
    }

    pub fn pair_state(&self, sample: usize, finding_id: usize) -> PairState {
        let (a, a_bar) = self.pair(sample, finding_id);
        pair_state(a, a_bar)
    }

    /// Fraction of samples whose pair for `finding_id` is `(0,0)`.
    pub fn ambiguity_rate(&self, finding_id: usize) -> Result<f64, LabelError> {
        if finding_id >= self.n_findings {
            return Err(LabelError::UnknownFinding(finding_id));
        }
        if self.n_samples() == 0 {
            return Ok(0.0);
        }
        let ambiguous = (0..self.n_samples())
            .filter(|&s| self.pair_state(s, finding_id) == PairState::Ambiguous)
            .count();
        Ok(ambiguous as f64 / self.n_samples() as f64)
    }

    /// Every `(sample, finding)` whose pair is `(1,1)`.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for s in 0..self.n_samples() {
            for k in 0..self.n_findings {
                if self.pair_state(s, k) == PairState::Contradiction {
                    out.push(Violation {
                        sample_index: s,
                        sample_id: self.sample_ids[s].clone(),
                        finding_id: k,
                    });
                }
            }
        }
        out
    }

    /// Applies the contradiction policy. Returns the cleaned matrix, the
    /// indices of kept rows and the number of dropped rows.
    pub fn ingest(self, mode: IngestMode, vocab: &FindingVocabulary) -> Result<(Self, Vec<usize>, usize), LabelError> {
        let violations = self.validate();
        if violations.is_empty() {
            let kept = (0..self.n_samples()).collect();
            return Ok((self, kept, 0));
        }
        match mode {
            IngestMode::Strict => {
                let v = &violations[0];
                Err(LabelError::Contradiction {
                    sample_id: v.sample_id.clone(),
                    finding: vocab
                        .get(v.finding_id)
                        .map(|f| f.canonical_name.clone())
                        .unwrap_or_else(|_| v.finding_id.to_string()),
                })
            }
            IngestMode::Lenient => {
                let bad: HashSet<usize> = violations.iter().map(|v| v.sample_index).collect();
                let kept: Vec<usize> = (0..self.n_samples()).filter(|s| !bad.contains(s)).collect();
                let mut ids = Vec::with_capacity(kept.len());
                let mut targets = Vec::with_capacity(kept.len() * self.n_heads());
                for &s in &kept {
                    ids.push(self.sample_ids[s].clone());
                    targets.extend_from_slice(self.row(s));
                }
                log::warn!("dropped {} sample(s) with contradictory (1,1) labels", bad.len());
                let dropped = bad.len();
                Ok((Self::new(ids, self.n_findings, targets)?, kept, dropped))
            }
        }
    }

    /// Sub-matrix with the given rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Self {
        let mut ids = Vec::with_capacity(rows.len());
        let mut targets = Vec::with_capacity(rows.len() * self.n_heads());
        for &s in rows {
            ids.push(self.sample_ids[s].clone());
            targets.extend_from_slice(self.row(s));
        }
        Self {
            sample_ids: ids,
            n_findings: self.n_findings,
            targets,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab(k: usize) -> FindingVocabulary {
        let names: Vec<String> = (0..k).map(|i| format!("finding{i}")).collect();
        FindingVocabulary::from_names(&names).unwrap()
    }

    #[test]
    fn pair_state_covers_all_four_rows() {
        let cases = [
            ((true, true), PairState::Contradiction),
            ((true, false), PairState::PositiveExists),
            ((false, true), PairState::NegationExists),
            ((false, false), PairState::Ambiguous),
        ];
        let mut seen = HashSet::new();
        for ((a, b), expected) in cases {
            assert_eq!(pair_state(a, b), expected);
            seen.insert(pair_state(a, b));
        }
        assert_eq!(seen.len(), 4);
    }

    #[test]
    fn encode_examples() {
        use MentionState::*;
        assert_eq!(encode_targets(&[Affirmed], &vocab(1)).unwrap(), vec![1, 0]);
        assert_eq!(
            encode_targets(&[Negated, NoMention], &vocab(2)).unwrap(),
            vec![0, 1, 0, 0]
        );
        assert_eq!(encode_targets(&[NoMention], &vocab(1)).unwrap(), vec![0, 0]);
        assert_eq!(
            encode_targets(&[Affirmed], &vocab(2)),
            Err(LabelError::VocabularyMismatch { expected: 2, got: 1 })
        );
    }

    #[test]
    fn ambiguity_rate_examples() {
        let m = LabelMatrix::new((0..4).map(|i| i.to_string()).collect(), 1, vec![1, 0, 0, 1, 0, 0, 0, 0]).unwrap();
        assert_eq!(m.ambiguity_rate(0).unwrap(), 0.5);
        assert_eq!(m.ambiguity_rate(1), Err(LabelError::UnknownFinding(1)));

        let none = LabelMatrix::new(vec!["a".into(), "b".into()], 1, vec![1, 0, 0, 1]).unwrap();
        assert_eq!(none.ambiguity_rate(0).unwrap(), 0.0);
        let all = LabelMatrix::new(vec!["a".into(), "b".into()], 1, vec![0; 4]).unwrap();
        assert_eq!(all.ambiguity_rate(0).unwrap(), 1.0);
    }

    #[test]
    fn validate_examples() {
        let one = LabelMatrix::new(vec!["a".into(), "b".into()], 1, vec![1, 1, 0, 1]).unwrap();
        let v = one.validate();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].sample_id, "a");

        let consistent = LabelMatrix::new(vec!["a".into()], 2, vec![1, 0, 0, 1]).unwrap();
        assert!(consistent.validate().is_empty());

        let two = LabelMatrix::new(vec!["a".into()], 2, vec![1, 1, 1, 1]).unwrap();
        assert_eq!(two.validate().len(), 2);
    }

    #[test]
    fn ingest_modes() {
        let v = vocab(1);
        let m = LabelMatrix::new(vec!["a".into(), "b".into()], 1, vec![1, 1, 0, 1]).unwrap();
        match m.clone().ingest(IngestMode::Strict, &v) {
            Err(LabelError::Contradiction { sample_id, .. }) => assert_eq!(sample_id, "a"),
            other => panic!("expected contradiction, got {other:?}"),
        }
        let (clean, kept, dropped) = m.ingest(IngestMode::Lenient, &v).unwrap();
        assert_eq!(dropped, 1);
        assert_eq!(kept, vec![1]);
        assert_eq!(clean.sample_ids(), &["b".to_string()]);
    }

    #[test]
    fn vocabulary_parsing() {
        let v = FindingVocabulary::parse(
            "# comment\n1,Pneumothorax,PTX\n0,consolidation,airspace   opacity|Consolidative change # trailing\n",
        )
        .unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v.get(0).unwrap().canonical_name, "consolidation");
        assert_eq!(
            v.get(0).unwrap().synonyms,
            vec!["consolidation", "airspace opacity", "consolidative change"]
        );
        assert_eq!(v.get(1).unwrap().synonyms, vec!["pneumothorax", "ptx"]);
        assert_eq!(v.head_name(3), "no Pneumothorax");

        assert!(matches!(
            FindingVocabulary::parse("x,foo,bar"),
            Err(LabelError::VocabularyParse { line: 1, .. })
        ));
        assert!(FindingVocabulary::parse("0,a,\n0,b,").is_err());
        assert!(FindingVocabulary::parse("0,a,\n2,b,").is_err());
        assert_eq!(FindingVocabulary::builtin().len(), 4);
    }

    #[test]
    fn head_layout_partitions_heads() {
        let k = 5;
        let mut heads: Vec<usize> = (0..k).flat_map(|f| [positive_head(f), negated_head(f)]).collect();
        heads.sort_unstable();
        assert_eq!(heads, (0..2 * k).collect::<Vec<_>>());
    }

    fn state() -> impl Strategy<Value = MentionState> {
        prop_oneof![
            Just(MentionState::Affirmed),
            Just(MentionState::Negated),
            Just(MentionState::NoMention)
        ]
    }

    proptest! {
        #[test]
        fn encoded_rows_never_contradict(rows in prop::collection::vec(prop::collection::vec(state(), 3), 0..40)) {
            let v = vocab(3);
            let ids = (0..rows.len()).map(|i| i.to_string()).collect();
            let m = LabelMatrix::from_states(ids, &rows, &v).unwrap();
            prop_assert!(m.validate().is_empty());
            for (s, row) in rows.iter().enumerate() {
                for (k, st) in row.iter().enumerate() {
                    let (a, b) = m.pair(s, k);
                    prop_assert_eq!(MentionState::from_bits(a, b), Some(*st));
                }
            }
        }

        #[test]
        fn ambiguity_rate_matches_brute_force(bits in prop::collection::vec(0u8..2, 2..200)) {
            let n = bits.len() / 2;
            prop_assume!(n > 0);
            let targets = bits[..2 * n].to_vec();
            let m = LabelMatrix::new((0..n).map(|i| i.to_string()).collect(), 1, targets.clone()).unwrap();
            let brute = targets.chunks(2).filter(|p| p[0] == 0 && p[1] == 0).count() as f64 / n as f64;
            prop_assert_eq!(m.ambiguity_rate(0).unwrap(), brute);
        }
    }
}

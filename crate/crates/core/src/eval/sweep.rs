//! The μ sweep: a baseline arm and one arm per grid value, repeated over
//! seeds, evaluated per head on the unambiguous test samples.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::{evaluate_model, render_family_svg, train, EvalError, HeadEval, TrainConfig};
use crate::data::{Dataset, Split};
use crate::models::{Model, ModelConfig};
use crate::weighting::{head_class_weights, ModifierConfig, Redraw, WeightingMode, DEFAULT_SIGMA};

/// One training arm of the sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Arm {
    /// Class weights, modifiers disabled.
    Baseline,
    /// No class weights and no modifiers.
    Unweighted,
    Mu(f64),
}

impl Arm {
    pub fn label(&self) -> String {
        match self {
            Arm::Baseline => "baseline".into(),
            Arm::Unweighted => "unweighted".into(),
            Arm::Mu(mu) => format!("{mu}"),
        }
    }

    pub fn mu(&self) -> Option<f64> {
        match self {
            Arm::Mu(mu) => Some(*mu),
            _ => None,
        }
    }
}

impl FromStr for Arm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(Arm::Baseline),
            "unweighted" => Ok(Arm::Unweighted),
            _ => s.parse::<f64>().map(Arm::Mu).map_err(|_| format!("unknown arm `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadFamily {
    Positive,
    Negated,
}

impl HeadFamily {
    pub fn includes(self, head_id: usize) -> bool {
        match self {
            HeadFamily::Positive => head_id % 2 == 0,
            HeadFamily::Negated => head_id % 2 == 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HeadFamily::Positive => "positive",
            HeadFamily::Negated => "negated",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub sigma: f64,
    pub redraw: Redraw,
    pub include_unweighted: bool,
    pub train: TrainConfig,
    pub model: ModelConfig,
    /// Arms trained concurrently; results do not depend on it.
    pub jobs: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            grid: (1..=9).map(|k| k as f64 / 10.0).collect(),
            seeds: vec![0, 1, 2],
            sigma: DEFAULT_SIGMA,
            redraw: Redraw::PerStep,
            include_unweighted: false,
            train: TrainConfig::default(),
            model: ModelConfig::default(),
            jobs: 1,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.grid.is_empty() {
            return Err(EvalError::InvalidConfig("sweep.grid must not be empty".into()));
        }
        if self.seeds.is_empty() {
            return Err(EvalError::InvalidConfig("sweep.seeds must not be empty".into()));
        }
        for &mu in &self.grid {
            ModifierConfig::new(mu, self.sigma, 0)?;
        }
        if self.jobs == 0 {
            return Err(EvalError::InvalidConfig("sweep.jobs must be at least 1".into()));
        }
        self.train.validate()
    }

    /// Arms in report order: baseline, optional unweighted, then the grid.
    pub fn arms(&self) -> Vec<Arm> {
        let mut arms = vec![Arm::Baseline];
        if self.include_unweighted {
            arms.push(Arm::Unweighted);
        }
        arms.extend(self.grid.iter().map(|&mu| Arm::Mu(mu)));
        arms
    }

    fn weighting(&self, arm: Arm, seed: u64) -> WeightingMode {
        match arm {
            Arm::Baseline => WeightingMode::ClassWeighted,
            Arm::Unweighted => WeightingMode::Unweighted,
            Arm::Mu(mu) => WeightingMode::Modified {
                modifier: ModifierConfig {
                    mu,
                    sigma: self.sigma,
                    seed,
                    redraw: self.redraw,
                },
            },
        }
    }
}

/// Train, validation and test datasets for one experiment.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl SplitData {
    pub fn from_split(ds: &Dataset, split: &Split) -> Self {
        Self {
            train: ds.subset(&split.train),
            val: ds.subset(&split.val),
            test: ds.subset(&split.test),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub arm: Arm,
    pub seed: u64,
    pub head_id: usize,
    pub head: String,
    /// `None` when the head could not be evaluated or the arm failed.
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmFailure {
    pub arm: Arm,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub arm: Arm,
    pub head_id: usize,
    pub head: String,
    pub mean: f64,
    /// Sample standard deviation over seeds; zero for a single seed.
    pub stddev: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub head_names: Vec<String>,
    pub rows: Vec<SweepRow>,
    pub failures: Vec<ArmFailure>,
}

const FAILED: &str = "failed";

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

impl SweepReport {
    /// Distinct arms in row order.
    pub fn arms(&self) -> Vec<Arm> {
        let mut out: Vec<Arm> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.arm) {
                out.push(r.arm);
            }
        }
        out
    }

    pub fn seeds(&self) -> Vec<u64> {
        let mut out: Vec<u64> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.seed) {
                out.push(r.seed);
            }
        }
        out
    }

    /// `mu,seed,head,auc`; an empty AUC marks a skipped head and `failed`
    /// marks a failed arm.
    pub fn to_csv(&self) -> String {
        let failed: Vec<(Arm, u64)> = self.failures.iter().map(|f| (f.arm, f.seed)).collect();
        let mut s = String::from("mu,seed,head,auc\n");
        for r in &self.rows {
            let auc = match r.auc {
                Some(a) => format!("{a}"),
                None if failed.contains(&(r.arm, r.seed)) => FAILED.to_string(),
                None => String::new(),
            };
            let _ = writeln!(s, "{},{},{},{}", r.arm.label(), r.seed, r.head, auc);
        }
        s
    }

    /// Parses [`SweepReport::to_csv`] output. Heads are numbered in order of
    /// first appearance, which is the interleaved head order.
    pub fn from_csv(text: &str) -> Result<Self, EvalError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "mu,seed,head,auc")) => {}
            _ => {
                return Err(EvalError::Report {
                    line: 1,
                    message: "expected header mu,seed,head,auc".into(),
                })
            }
        }
        let mut report = SweepReport {
            head_names: Vec::new(),
            rows: Vec::new(),
            failures: Vec::new(),
        };
        for (i, line) in lines {
            let bad = |message: String| EvalError::Report { line: i + 1, message };
            let f: Vec<&str> = line.split(',').collect();
            let [arm, seed, head, auc] = f[..] else {
                return Err(bad(format!("expected 4 fields, found {}", f.len())));
            };
            let arm: Arm = arm.parse().map_err(bad)?;
            let seed: u64 = seed.parse().map_err(|_| bad(format!("bad seed `{seed}`")))?;
            let head_id = match report.head_names.iter().position(|h| h == head) {
                Some(p) => p,
                None => {
                    report.head_names.push(head.to_string());
                    report.head_names.len() - 1
                }
            };
            let auc = match auc {
                "" => None,
                FAILED => {
                    if !report.failures.iter().any(|x| x.arm == arm && x.seed == seed) {
                        report.failures.push(ArmFailure {
                            arm,
                            seed,
                            message: FAILED.into(),
                        });
                    }
                    None
                }
                a => Some(a.parse::<f64>().map_err(|_| bad(format!("bad auc `{a}`")))?),
            };
            report.rows.push(SweepRow {
                arm,
                seed,
                head_id,
                head: head.to_string(),
                auc,
            });
        }
        Ok(report)
    }

    /// Mean and stddev over seeds per `(arm, head)`, skipping undefined AUCs.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut groups: Vec<((Arm, usize), Vec<f64>)> = Vec::new();
        for r in &self.rows {
            let key = (r.arm, r.head_id);
            let pos = match groups.iter().position(|(k, _)| *k == key) {
                Some(p) => p,
                None => {
                    groups.push((key, Vec::new()));
                    groups.len() - 1
                }
            };
            if let Some(a) = r.auc {
                groups[pos].1.push(a);
            }
        }
        groups
            .into_iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|((arm, head_id), v)| {
                let (mean, stddev) = mean_std(&v);
                SummaryRow {
                    arm,
                    head_id,
                    head: self.head_names[head_id].clone(),
                    mean,
                    stddev,
                    n: v.len(),
                }
            })
            .collect()
    }

    /// Mean AUC over the family's heads for one seed.
    pub fn seed_family_mean(&self, arm: Arm, seed: u64, family: HeadFamily) -> Option<f64> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.arm == arm && r.seed == seed && family.includes(r.head_id))
            .filter_map(|r| r.auc)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Mean over seeds of [`SweepReport::seed_family_mean`].
    pub fn family_mean(&self, arm: Arm, family: HeadFamily) -> Option<f64> {
        let v: Vec<f64> = self
            .seeds()
            .into_iter()
            .filter_map(|s| self.seed_family_mean(arm, s, family))
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Grid value with the highest mean AUC across all heads.
    pub fn optimal_mu(&self) -> Option<f64> {
        let mut by_arm: BTreeMap<String, (f64, Vec<f64>)> = BTreeMap::new();
        for s in self.summary() {
            if let Some(mu) = s.arm.mu() {
                by_arm.entry(s.arm.label()).or_insert((mu, Vec::new())).1.push(s.mean);
            }
        }
        by_arm
            .into_values()
            .map(|(mu, v)| (mu, v.iter().sum::<f64>() / v.len() as f64))
            .fold(None, |best: Option<(f64, f64)>, (mu, m)| match best {
                Some((_, bm)) if bm >= m => best,
                _ => Some((mu, m)),
            })
            .map(|(mu, _)| mu)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), EvalError> {
        std::fs::write(path, self.to_csv()).map_err(|e| EvalError::io(path, e))
    }

    /// Writes `auc_positive.svg` and `auc_negated.svg` into `dir`.
    pub fn write_charts(&self, dir: &Path) -> Result<Vec<PathBuf>, EvalError> {
        let mut out = Vec::new();
        for family in [HeadFamily::Positive, HeadFamily::Negated] {
            let path = dir.join(format!("auc_{}.svg", family.name()));
            std::fs::write(&path, render_family_svg(self, family)).map_err(|e| EvalError::io(&path, e))?;
            out.push(path);
        }
        Ok(out)
    }
}

fn run_arm(cfg: &SweepConfig, data: &SplitData, arm: Arm, seed: u64) -> Result<Vec<HeadEval>, EvalError> {
    let heads = data.train.vocabulary.head_count();
    let mut model = Model::build(cfg.model.clone().with_head_count(heads), seed)?;
    let class = head_class_weights(&data.train.labels()?)?;
    let tcfg = TrainConfig {
        seed,
        weighting: cfg.weighting(arm, seed),
        ..cfg.train.clone()
    };
    train(&mut model, &data.train, &data.val, &class, &tcfg)?;
    evaluate_model(&model, &data.test, tcfg.eval_batch_size)
}

/// Trains every `(arm, seed)` and evaluates it on the test split. Arms run
/// on up to `cfg.jobs` threads and are merged in arm-then-seed order, so the
/// report does not depend on scheduling. A failed arm is recorded in
/// `failures` and the sweep continues.
pub fn mu_sweep(data: &SplitData, cfg: &SweepConfig) -> Result<SweepReport, EvalError> {
    cfg.validate()?;
    let vocab = &data.train.vocabulary;
    let head_names: Vec<String> = (0..vocab.head_count()).map(|h| vocab.head_name(h)).collect();
    let jobs: Vec<(Arm, u64)> = cfg
        .arms()
        .into_iter()
        .flat_map(|a| cfg.seeds.iter().map(move |&s| (a, s)))
        .collect();
    type Slot = Option<Result<Vec<HeadEval>, String>>;
    let results: Mutex<Vec<Slot>> = Mutex::new(vec![None; jobs.len()]);
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..cfg.jobs.min(jobs.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(arm, seed)) = jobs.get(i) else { break };
                info!("arm {} seed {seed}: training", arm.label());
                let r = run_arm(cfg, data, arm, seed).map_err(|e| e.to_string());
                results.lock().expect("no poisoned workers")[i] = Some(r);
            });
        }
    });
    let mut report = SweepReport {
        head_names: head_names.clone(),
        rows: Vec::with_capacity(jobs.len() * head_names.len()),
        failures: Vec::new(),
    };
    for ((arm, seed), r) in jobs.into_iter().zip(results.into_inner().expect("no poisoned workers")) {
        match r.expect("every job ran") {
            Ok(evals) => report.rows.extend(evals.into_iter().map(|e| SweepRow {
                arm,
                seed,
                head_id: e.head_id,
                head: e.head_name,
                auc: e.result.map(|r| r.auc),
            })),
            Err(message) => {
                warn!("arm {} seed {seed} failed: {message}", arm.label());
                report
                    .rows
                    .extend(head_names.iter().enumerate().map(|(head_id, h)| SweepRow {
                        arm,
                        seed,
                        head_id,
                        head: h.clone(),
                        auc: None,
                    }));
                report.failures.push(ArmFailure { arm, seed, message });
            }
        }
    }
    Ok(report)
}

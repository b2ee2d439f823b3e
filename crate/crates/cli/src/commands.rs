//! Subcommand implementations.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Deserialize;

use ambiweight::data::{
    generate, load_dataset, save_dataset, save_manifest_rows, split, AugmentConfig, Dataset, ManifestRow, ReportMode,
    SynthConfig, DEFAULT_SPLIT, MANIFEST_FILE,
};
use ambiweight::eval::{
    self, evaluate_model, mean_auc, mu_sweep, HeadEval, HeadFamily, SplitData, SweepConfig, SweepReport, TrainConfig,
};
use ambiweight::labelcore::{FindingVocabulary, IngestMode, MentionState};
use ambiweight::models::{self, CustomNetConfig, Model, ModelConfig, SimpleCnnConfig};
use ambiweight::tensor::gradcheck;
use ambiweight::tensor::optim::AdamConfig;
use ambiweight::textlabeler::{Labeler, NegationRuleSet, Report};
use ambiweight::weighting::{head_class_weights, ModifierConfig, Redraw, WeightingMode, DEFAULT_SIGMA};

use crate::config::{RunConfig, Settings, Source};
use crate::{io_err, Arch, CliError, EvalArgs, GradcheckArgs, LabelArgs, Preset, ReportArgs, SweepArgs, SynthArgs};
use crate::{TrainArgs, TrainingArgs};

fn write_out(out: &mut dyn Write, s: &str) -> Result<(), CliError> {
    out.write_all(s.as_bytes())
        .map_err(|e| CliError::Data(format!("stdout: {e}")))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn required_path(
    settings: &mut Settings,
    name: &str,
    flag: Option<PathBuf>,
    cfg: Option<PathBuf>,
) -> Result<PathBuf, CliError> {
    let src = if flag.is_some() { Source::Flag } else { Source::Config };
    let p = flag
        .or(cfg)
        .ok_or_else(|| CliError::Usage(format!("--{name} is required (flag or `paths.{name}` in the config)")))?;
    settings.record(name, &p, src);
    Ok(p)
}

/// Generation audit: prevalence, state fractions and ambiguity per finding.
pub fn synth_audit(ds: &Dataset) -> Result<String, CliError> {
    let labels = ds.labels().map_err(|e| CliError::Data(e.to_string()))?;
    let prevalence = ds.truth_prevalence();
    let n = ds.len().max(1) as f64;
    let mut s = format!(
        "{:<20} {:>10} {:>9} {:>9} {:>10}\n",
        "finding", "prevalence", "affirmed", "negated", "ambiguous"
    );
    for (k, name) in ds.vocabulary.names().iter().enumerate() {
        let count = |st: MentionState| ds.samples.iter().filter(|x| x.states[k] == st).count() as f64 / n;
        let amb = labels.ambiguity_rate(k).map_err(|e| CliError::Data(e.to_string()))?;
        let prev = prevalence.as_ref().map_or(f64::NAN, |p| p[k]);
        let _ = writeln!(
            s,
            "{:<20} {:>10.4} {:>9.4} {:>9.4} {:>10.4}",
            name,
            prev,
            count(MentionState::Affirmed),
            count(MentionState::Negated),
            amb
        );
    }
    Ok(s)
}

pub fn synth(a: &SynthArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let rc = RunConfig::load_optional(a.config.as_deref())?;
    let mut st = Settings::default();
    let preset = st.pick("preset", a.preset, None, Preset::Desk);
    let base = match (&rc.synth, preset) {
        (Some(s), _) => s.clone(),
        (None, Preset::Desk) => SynthConfig::desk_experiment(1000, 0),
        (None, Preset::Calibration) => SynthConfig::ambiguity_calibration(1000, 0),
    };
    let cfg_n = rc.synth.as_ref().map(|s| s.n_samples);
    let cfg_size = rc.synth.as_ref().map(|s| s.image_size);
    let cfg_text = rc.synth.as_ref().map(|s| s.report_mode == ReportMode::Text);
    let synth = SynthConfig {
        n_samples: st.pick("n", a.n, cfg_n, base.n_samples),
        image_size: st.pick("image_size", a.image_size, cfg_size, base.image_size),
        seed: st.pick("seed", Some(a.seed), rc.seed, 0),
        report_mode: if st.pick("text", a.text.then_some(true), cfg_text, false) {
            ReportMode::Text
        } else {
            ReportMode::Direct
        },
        ..base
    };
    let dir = required_path(&mut st, "out", a.out.clone(), rc.paths.out.clone())?;
    write_out(err, &st.render())?;
    synth.validate()?;
    let ds = generate(&synth)?;
    create_dir(&dir)?;
    save_dataset(&ds, &dir)?;
    let json = serde_json::to_string_pretty(&synth).expect("config serializes");
    write_file(&dir.join("synth_config.json"), &(json + "\n"))?;
    write_out(out, &synth_audit(&ds)?)?;
    info!("wrote {} samples to {}", ds.len(), dir.display());
    Ok(())
}

#[derive(Deserialize)]
struct ReportLine {
    report_id: String,
    body: String,
}

/// Per-finding counts of each mention state.
pub fn label_summary(vocab: &FindingVocabulary, rows: &[ManifestRow]) -> String {
    let mut s = format!(
        "{:<20} {:>8} {:>8} {:>9}\n",
        "finding", "affirmed", "negated", "nomention"
    );
    for (k, name) in vocab.names().iter().enumerate() {
        let c = |st: MentionState| rows.iter().filter(|r| r.states[k] == st).count();
        let _ = writeln!(
            s,
            "{:<20} {:>8} {:>8} {:>9}",
            name,
            c(MentionState::Affirmed),
            c(MentionState::Negated),
            c(MentionState::NoMention)
        );
    }
    s
}

/// Labels every report of a JSON-lines file. Errors name the offending line.
pub fn label_reports(path: &Path, labeler: &Labeler) -> Result<Vec<ManifestRow>, CliError> {
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut rows = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        let at = |m: String| CliError::Data(format!("{}:{}: {m}", path.display(), i + 1));
        if line.trim().is_empty() {
            continue;
        }
        let r: ReportLine = serde_json::from_str(&line).map_err(|e| at(format!("malformed report: {e}")))?;
        let report = Report::new(r.report_id, r.body).map_err(|e| at(e.to_string()))?;
        if !seen.insert(report.report_id.clone()) {
            return Err(at(format!("duplicate report_id `{}`", report.report_id)));
        }
        rows.push(ManifestRow {
            image_path: PathBuf::from(format!("images/{}.pgm", report.report_id)),
            states: labeler.label(&report),
            sample_id: report.report_id,
        });
    }
    Ok(rows)
}

pub fn label(a: &LabelArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let vocab = match &a.vocab {
        Some(p) => FindingVocabulary::load(p).map_err(|e| CliError::Config(e.to_string()))?,
        None => FindingVocabulary::builtin(),
    };
    let mut rules = match &a.rules {
        Some(p) => NegationRuleSet::load_triggers(p).map_err(|e| CliError::Config(e.to_string()))?,
        None => NegationRuleSet::default(),
    };
    if let Some(n) = a.max_scope {
        rules = rules
            .with_max_scope_tokens(n)
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let labeler = Labeler::new(&vocab, rules);
    let rows = label_reports(&a.reports, &labeler)?;
    if rows.is_empty() {
        warn!("{} contains no reports; writing an empty manifest", a.reports.display());
    }
    save_manifest_rows(&vocab, &rows, &a.out)?;
    write_out(out, &label_summary(&vocab, &rows))
}

/// Resolved pieces shared by `train` and `sweep`.
struct Prepared {
    data: SplitData,
    model: ModelConfig,
    train: TrainConfig,
    sigma: f64,
    out: PathBuf,
}

fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(MANIFEST_FILE)
    } else {
        p.to_path_buf()
    }
}

fn prepare(a: &TrainingArgs, rc: &RunConfig, st: &mut Settings) -> Result<Prepared, CliError> {
    let seed = st.pick("seed", Some(a.seed), rc.seed, 0);
    let lenient = st.pick("lenient", a.lenient.then_some(true), rc.hyper.lenient, false);
    let mode = if lenient {
        IngestMode::Lenient
    } else {
        IngestMode::Strict
    };
    let ds = match (&a.data, &rc.paths.data, &rc.synth) {
        (Some(p), _, _) | (None, Some(p), _) => {
            let src = if a.data.is_some() { Source::Flag } else { Source::Config };
            st.record("data", p, src);
            load_dataset(&manifest_path(p), mode)?
        }
        (None, None, Some(s)) => {
            st.record("data", &"generated from config `synth`", Source::Config);
            generate(s)?
        }
        (None, None, None) => {
            return Err(CliError::Usage(
                "--data is required (or `paths.data` / `synth` in the config)".into(),
            ))
        }
    };
    if ds.is_empty() {
        return Err(CliError::Data("dataset has no samples".into()));
    }
    let fractions = st.pick("split", None, rc.hyper.split, DEFAULT_SPLIT);
    let sp = split(ds.len(), fractions, seed)?;
    let (size, _) = ds.image_shape().expect("non-empty");
    let heads = ds.vocabulary.head_count();
    let default_model = match a.arch {
        Some(Arch::SimpleCnn) => ModelConfig::SimpleCnn(SimpleCnnConfig::default()),
        _ => ModelConfig::DbNet(CustomNetConfig::default()),
    };
    let cfg_model = if a.arch.is_some() { None } else { rc.model.clone() };
    let model = st
        .pick("model", a.arch.map(|_| default_model.clone()), cfg_model, default_model)
        .with_head_count(heads)
        .with_input_size(size);
    let augment = if a.no_augment {
        st.record("augment", &"disabled", Source::Flag);
        AugmentConfig::disabled()
    } else {
        st.pick("augment", None, rc.augment.clone(), AugmentConfig::default())
    };
    let defaults = TrainConfig::default();
    let train = TrainConfig {
        epochs: st.pick("epochs", a.epochs, rc.hyper.epochs, defaults.epochs),
        batch_size: st.pick("batch_size", a.batch_size, rc.hyper.batch_size, defaults.batch_size),
        adam: AdamConfig::with_lr(st.pick("lr", a.lr, rc.hyper.lr, defaults.adam.lr)),
        eval_batch_size: st.pick(
            "eval_batch_size",
            None,
            rc.hyper.eval_batch_size,
            defaults.eval_batch_size,
        ),
        augment,
        seed,
        weighting: WeightingMode::ClassWeighted,
    };
    let cfg_sigma = rc.sweep.sigma.or(rc.modifier.map(|m| m.sigma));
    let sigma = st.pick("sigma", a.sigma, cfg_sigma, DEFAULT_SIGMA);
    let out = required_path(st, "out", a.out.clone(), rc.paths.out.clone())?;
    Ok(Prepared {
        data: SplitData::from_split(&ds, &sp),
        model,
        train,
        sigma,
        out,
    })
}

/// `head,auc,n_pos,n_neg`; skipped heads have empty fields.
pub fn eval_table(evals: &[HeadEval]) -> String {
    let mut s = String::from("head,auc,n_pos,n_neg\n");
    for e in evals {
        match e.result {
            Some(r) => {
                let _ = writeln!(s, "{},{},{},{}", e.head_name, r.auc, r.n_pos, r.n_neg);
            }
            None => {
                let _ = writeln!(s, "{},,,", e.head_name);
            }
        }
    }
    s
}

pub fn train(a: &TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let rc = RunConfig::load_optional(a.common.config.as_deref())?;
    let mut st = Settings::default();
    let mut p = prepare(&a.common, &rc, &mut st)?;
    p.train.weighting = if a.unweighted {
        st.record("weighting", &"unweighted", Source::Flag);
        WeightingMode::Unweighted
    } else {
        let cfg_mu = rc.modifier.map(|m| m.mu);
        match st.pick("mu", a.mu.map(Some), cfg_mu.map(Some), None) {
            Some(mu) => WeightingMode::Modified {
                modifier: ModifierConfig {
                    mu,
                    sigma: p.sigma,
                    seed: p.train.seed,
                    redraw: rc.modifier.map_or(Redraw::PerStep, |m| m.redraw),
                },
            },
            None => WeightingMode::ClassWeighted,
        }
    };
    write_out(err, &st.render())?;
    p.train.validate()?;

    let mut model = Model::build(p.model.clone(), p.train.seed)?;
    let labels = p.data.train.labels().map_err(|e| CliError::Data(e.to_string()))?;
    let class = head_class_weights(&labels).map_err(|e| CliError::Data(e.to_string()))?;
    let log = eval::train(&mut model, &p.data.train, &p.data.val, &class, &p.train)?;
    create_dir(&p.out)?;
    model.save(&p.out.join("model"))?;
    write_file(&p.out.join("train_log.csv"), &log.to_csv())?;
    let evals = evaluate_model(&model, &p.data.test, p.train.eval_batch_size)?;
    let table = eval_table(&evals);
    write_file(&p.out.join("test_eval.csv"), &table)?;
    write_test_manifest(&p.data.test, &p.out)?;
    write_out(out, &table)?;
    write_out(out, &format!("mean_auc,{}\n", mean_auc(&evals)))
}

/// Writes the test split as a manifest with absolute image paths so that
/// `eval` can be pointed at it.
fn write_test_manifest(test: &Dataset, dir: &Path) -> Result<(), CliError> {
    let images = dir.join("test_images");
    create_dir(&images)?;
    let images = images.canonicalize().map_err(|e| io_err(&images, e))?;
    let mut rows = Vec::with_capacity(test.len());
    for s in &test.samples {
        let p = images.join(format!("{}.pgm", s.sample_id));
        ambiweight::data::write_pgm(&p, &s.image)?;
        rows.push(ManifestRow {
            sample_id: s.sample_id.clone(),
            image_path: p,
            states: s.states.clone(),
        });
    }
    save_manifest_rows(&test.vocabulary, &rows, &dir.join("test_manifest.csv"))?;
    Ok(())
}

pub fn sweep(a: &SweepArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let rc = RunConfig::load_optional(a.common.config.as_deref())?;
    let mut st = Settings::default();
    let p = prepare(&a.common, &rc, &mut st)?;
    let defaults = SweepConfig::default();
    let grid = st.pick("grid", a.grid.clone(), rc.sweep.grid.clone(), defaults.grid);
    let n_seeds = st.pick("seeds", a.seeds, rc.sweep.seeds, 3);
    let jobs = st.pick("jobs", a.jobs, rc.sweep.jobs, 1);
    let include_unweighted = st.pick(
        "include_unweighted",
        a.unweighted.then_some(true),
        rc.sweep.include_unweighted,
        false,
    );
    write_out(err, &st.render())?;
    if n_seeds == 0 || jobs == 0 {
        return Err(CliError::Config("--seeds and --jobs must be positive".into()));
    }
    let cfg = SweepConfig {
        grid,
        seeds: (0..n_seeds as u64).map(|i| p.train.seed + i).collect(),
        sigma: p.sigma,
        redraw: rc.modifier.map_or(Redraw::PerStep, |m| m.redraw),
        include_unweighted,
        train: p.train,
        model: p.model,
        jobs,
    };
    let report = mu_sweep(&p.data, &cfg)?;
    create_dir(&p.out)?;
    report.write_csv(&p.out.join("report.csv"))?;
    write_file(&p.out.join("summary.csv"), &summary_csv(&report))?;
    report.write_charts(&p.out)?;
    for f in &report.failures {
        warn!("arm {} seed {} failed: {}", f.arm.label(), f.seed, f.message);
    }
    write_out(out, &summary_text(&report))
}

/// `arm,head,mean,stddev,n` per `(arm, head)`.
pub fn summary_csv(r: &SweepReport) -> String {
    let mut s = String::from("arm,head,mean,stddev,n\n");
    for row in r.summary() {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            row.arm.label(),
            row.head,
            row.mean,
            row.stddev,
            row.n
        );
    }
    s
}

/// Human-readable sweep summary: family means per arm and the best μ.
pub fn summary_text(r: &SweepReport) -> String {
    let mut s = format!("{:<12} {:>14} {:>14}\n", "arm", "positive_auc", "negated_auc");
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    for arm in r.arms() {
        let _ = writeln!(
            s,
            "{:<12} {:>14} {:>14}",
            arm.label(),
            fmt(r.family_mean(arm, HeadFamily::Positive)),
            fmt(r.family_mean(arm, HeadFamily::Negated))
        );
    }
    if let Some(mu) = r.optimal_mu() {
        let _ = writeln!(s, "optimal mu: {mu}");
    }
    if !r.failures.is_empty() {
        let _ = writeln!(s, "failed arms: {}", r.failures.len());
    }
    s
}

pub fn eval(a: &EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let model = Model::load(&a.model)?;
    let mode = if a.lenient {
        IngestMode::Lenient
    } else {
        IngestMode::Strict
    };
    let ds = load_dataset(&a.manifest, mode)?;
    let evals = evaluate_model(&model, &ds, a.batch_size)?;
    let table = eval_table(&evals);
    if let Some(p) = &a.out {
        write_file(p, &table)?;
    }
    write_out(out, &table)
}

pub fn gradcheck(a: &GradcheckArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut results = gradcheck::op_suite().map_err(|e| CliError::Numerical(e.to_string()))?;
    results.push(models::end_to_end_check(a.coords, a.seed).map_err(|e| CliError::Numerical(e.to_string()))?);
    let mut failed = 0;
    for r in &results {
        write_out(out, &format!("{r}\n"))?;
        failed += usize::from(!r.passed());
    }
    if failed > 0 {
        return Err(CliError::Numerical(format!("{failed} gradient checks failed")));
    }
    write_out(out, &format!("all {} gradient checks passed\n", results.len()))
}

pub fn report(a: &ReportArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&a.csv).map_err(|e| io_err(&a.csv, e))?;
    let r = SweepReport::from_csv(&text)?;
    let dir = a
        .out
        .clone()
        .unwrap_or_else(|| a.csv.parent().map(Path::to_path_buf).unwrap_or_default());
    create_dir(&dir)?;
    for p in r.write_charts(&dir)? {
        info!("wrote {}", p.display());
    }
    write_file(&dir.join("summary.csv"), &summary_csv(&r))?;
    write_out(out, &summary_text(&r))
}

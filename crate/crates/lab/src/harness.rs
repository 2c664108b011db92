//! Experiment orchestration: warm start, RAPO, evaluation and reports.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rapo_core::dataset::{normalize_mos, seeded_permutation, split_dataset, synth_generate, Dataset, ImageSample};
use rapo_core::metrics::{histogram, mean_entropy, plcc, srcc, Histogram, MetricsReport};
use rapo_core::policy::{warm_start_step, ScorePolicy};
use rapo_core::rapo::{mix_seed, train_with, RunLog, StepReport, TrainState};
use rapo_core::rewards::RewardMode;

use crate::config::{AblationSpec, DatasetSpec, ExperimentConfig, Readout};
use crate::error::{LabError, Result};
use crate::io::{self, Checkpoint, DataFormat};

pub const SUMMARY_FILE: &str = "summary.json";
pub const RUN_LOG_FILE: &str = "run_log.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const HIST_PRED_FILE: &str = "histogram_pred.csv";
pub const HIST_GT_FILE: &str = "histogram_gt.csv";
pub const REPORT_FILE: &str = "report.json";
pub const ABLATION_FILE: &str = "ablation.json";
pub const ABLATION_TABLE_FILE: &str = "ablation.csv";

/// Test-split metrics at one point of training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: u64,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmStartSummary {
    pub epochs: usize,
    /// Mean cross-entropy of each epoch's mini-batches.
    pub epoch_losses: Vec<f64>,
    pub metrics: MetricsReport,
}

/// Files of a run, relative to its output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFiles {
    pub config: String,
    pub run_log: String,
    pub checkpoints: Vec<String>,
    pub predictions: String,
    pub histogram_pred: String,
    pub histogram_gt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub seed: u64,
    pub reward_mode: RewardMode,
    pub steps: u64,
    pub train_size: usize,
    pub test_size: usize,
    pub dim: usize,
    /// Untrained policy on the test split.
    pub initial: MetricsReport,
    pub warm_start: Option<WarmStartSummary>,
    /// Test-split mean entropy of the policy RAPO starts from.
    pub start_entropy: f64,
    pub evaluations: Vec<EvalPoint>,
    #[serde(rename = "final")]
    pub final_metrics: MetricsReport,
    pub files: RunFiles,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub output_dir: PathBuf,
    pub summary: RunSummary,
    pub log: RunLog,
    pub policy: ScorePolicy,
    pub summary_path: PathBuf,
    pub run_log_path: PathBuf,
    pub checkpoint_paths: Vec<PathBuf>,
}

/// Creates `dir` and proves a file can be written there.
pub fn ensure_writable(dir: &Path) -> Result<()> {
    let unwritable = |source| LabError::Unwritable { path: dir.to_path_buf(), source };
    fs::create_dir_all(dir).map_err(unwritable)?;
    let probe = dir.join(".write-probe");
    fs::write(&probe, b"").map_err(unwritable)?;
    fs::remove_file(&probe).map_err(unwritable)
}

/// Normalized dataset described by the config.
pub fn build_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.dataset {
        DatasetSpec::Synthetic { n, d, noise } => Ok(synth_generate(*n, *d, *noise, cfg.seed)?),
        DatasetSpec::File { path, format, raw_min, raw_max } => {
            let format = format.or_else(|| DataFormat::from_path(path)).ok_or_else(|| {
                LabError::Config(format!("cannot infer the format of {}", path.display()))
            })?;
            let raw = io::load_dataset(path, format)?;
            Ok(normalize_mos(&raw, raw_min.unwrap_or(0.0), raw_max.unwrap_or(1.0))?)
        }
    }
}

pub fn predict(policy: &ScorePolicy, samples: &[ImageSample], readout: Readout) -> Result<Vec<f64>> {
    samples
        .iter()
        .map(|s| match readout {
            Readout::Mean => policy.expected_score(&s.features),
            Readout::Argmax => policy.argmax_score(&s.features),
        })
        .collect::<rapo_core::Result<Vec<_>>>()
        .map_err(Into::into)
}

pub fn evaluate(policy: &ScorePolicy, dataset: &Dataset, readout: Readout) -> Result<(MetricsReport, Vec<f64>)> {
    let pred = predict(policy, dataset.samples(), readout)?;
    let report = MetricsReport::from_predictions(&pred, &dataset.mos(), mean_entropy(policy, dataset)?)?;
    Ok((report, pred))
}

fn warm_start(policy: &mut ScorePolicy, train: &Dataset, cfg: &ExperimentConfig) -> Result<Vec<f64>> {
    let ws = &cfg.warm_start;
    let mut losses = Vec::with_capacity(ws.epochs);
    for epoch in 0..ws.epochs {
        let perm = seeded_permutation(train.len(), mix_seed(cfg.seed, 0x3a7e, epoch as u64));
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in perm.chunks(ws.batch) {
            let batch: Vec<ImageSample> = chunk.iter().map(|&i| train.samples()[i].clone()).collect();
            let (next, loss) = warm_start_step(policy, &batch, ws.lr)?;
            *policy = next;
            total += loss;
            batches += 1;
        }
        losses.push(total / batches as f64);
    }
    Ok(losses)
}

/// Runs one experiment end to end and writes its artifacts.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    cfg.validate()?;
    cfg.check_paths()?;
    let out = cfg.output_dir.clone();
    ensure_writable(&out)?;

    let data = build_dataset(cfg)?;
    let (train, test) = split_dataset(&data, cfg.eval.split_ratio, cfg.seed)?;
    let readout = cfg.eval.readout;
    let mut policy = ScorePolicy::init(data.dim(), cfg.policy.hidden, cfg.policy.bins, cfg.seed)?;
    let (initial, _) = evaluate(&policy, &test, readout)?;

    let mut checkpoints = Vec::new();
    let mut save = |policy: &ScorePolicy, name: String, step: u64| -> Result<()> {
        io::save_checkpoint(&out.join(&name), &Checkpoint::new(policy, cfg.seed, step))?;
        checkpoints.push(name);
        Ok(())
    };

    let warm = if cfg.warm_start.epochs > 0 {
        let epoch_losses = warm_start(&mut policy, &train, cfg)?;
        let (metrics, _) = evaluate(&policy, &test, readout)?;
        save(&policy, "checkpoint-warm.json".into(), 0)?;
        Some(WarmStartSummary { epochs: cfg.warm_start.epochs, epoch_losses, metrics })
    } else {
        None
    };
    let start_entropy = mean_entropy(&policy, &test)?;

    let rapo_cfg = rapo_core::rapo::RapoConfig { seed: cfg.seed, ..cfg.rapo.clone() };
    let mut state = TrainState::new(policy);
    let mut evaluations = Vec::new();
    let train_mos = train.mos();
    let cadence = cfg.eval.cadence;
    let last = cfg.steps;
    let log = train_with(&mut state, &train, &rapo_cfg, cfg.steps, |st: &TrainState, report: &mut StepReport| {
        let step = report.step;
        if (cadence > 0 && step.is_multiple_of(cadence)) || step == last {
            let pred = predict(&st.policy, train.samples(), readout)?;
            report.train_plcc = plcc(&pred, &train_mos).ok();
            report.train_srcc = srcc(&pred, &train_mos).ok();
            let (metrics, _) = evaluate(&st.policy, &test, readout)?;
            evaluations.push(EvalPoint { step, metrics });
        }
        if cfg.eval.checkpoint_every > 0 && step.is_multiple_of(cfg.eval.checkpoint_every) && step != last {
            save(&st.policy, format!("checkpoint-{step:06}.json"), step)?;
        }
        Ok::<(), LabError>(())
    })?;
    let policy = state.policy.clone();
    save(&policy, "checkpoint-final.json".into(), state.step)?;

    let (final_metrics, pred) = evaluate(&policy, &test, readout)?;
    let ids: Vec<&str> = test.samples().iter().map(|s| s.id.as_str()).collect();
    let gt = test.mos();
    io::write_predictions(&out.join(PREDICTIONS_FILE), &ids, &pred, &gt)?;
    io::write_histogram(&out.join(HIST_PRED_FILE), &histogram(&pred, cfg.eval.histogram_bins)?)?;
    io::write_histogram(&out.join(HIST_GT_FILE), &histogram(&gt, cfg.eval.histogram_bins)?)?;
    let run_log_path = out.join(RUN_LOG_FILE);
    io::write_run_log(&run_log_path, &log.steps)?;
    let mut snapshot = cfg.clone();
    snapshot.output_dir = PathBuf::from(".");
    fs::write(out.join(CONFIG_FILE), snapshot.to_toml()?).map_err(|e| LabError::io(out.join(CONFIG_FILE), e))?;

    let summary = RunSummary {
        schema_version: crate::config::SCHEMA_VERSION,
        seed: cfg.seed,
        reward_mode: cfg.rapo.reward_mode,
        steps: cfg.steps,
        train_size: train.len(),
        test_size: test.len(),
        dim: data.dim(),
        initial,
        warm_start: warm,
        start_entropy,
        evaluations,
        final_metrics,
        files: RunFiles {
            config: CONFIG_FILE.into(),
            run_log: RUN_LOG_FILE.into(),
            checkpoints: checkpoints.clone(),
            predictions: PREDICTIONS_FILE.into(),
            histogram_pred: HIST_PRED_FILE.into(),
            histogram_gt: HIST_GT_FILE.into(),
        },
    };
    let summary_path = out.join(SUMMARY_FILE);
    io::write_json(&summary_path, &summary)?;
    Ok(RunArtifacts {
        checkpoint_paths: checkpoints.iter().map(|c| out.join(c)).collect(),
        output_dir: out,
        summary,
        log,
        policy,
        summary_path,
        run_log_path,
    })
}

/// Final test metrics of one (mode, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub mode: RewardMode,
    pub seed: u64,
    pub plcc: Option<f64>,
    pub srcc: Option<f64>,
    pub mean_entropy: f64,
    pub start_entropy: f64,
    /// Run directory relative to the ablation root.
    pub dir: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: RewardMode,
    pub seeds: usize,
    /// Seed mean; absent when any seed's correlation is undefined.
    pub plcc: Option<f64>,
    pub srcc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub rows: Vec<AblationRow>,
    pub runs: Vec<AblationRun>,
}

impl AblationSummary {
    pub fn row(&self, mode: RewardMode) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.mode == mode)
    }
}

fn seed_mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let mut n = 0usize;
    let mut acc = 0.0;
    for v in values {
        acc += v?;
        n += 1;
    }
    (n > 0).then(|| acc / n as f64)
}

/// Per-mode seed means, rows in the order of `modes`.
pub fn aggregate(modes: &[RewardMode], runs: &[AblationRun]) -> Vec<AblationRow> {
    modes
        .iter()
        .map(|&mode| {
            let mine = || runs.iter().filter(move |r| r.mode == mode);
            AblationRow {
                mode,
                seeds: mine().count(),
                plcc: seed_mean(mine().map(|r| r.plcc)),
                srcc: seed_mean(mine().map(|r| r.srcc)),
            }
        })
        .collect()
}

fn ablation_run(mode: RewardMode, seed: u64, summary: &RunSummary) -> AblationRun {
    AblationRun {
        mode,
        seed,
        plcc: summary.final_metrics.plcc,
        srcc: summary.final_metrics.srcc,
        mean_entropy: summary.final_metrics.mean_entropy,
        start_entropy: summary.start_entropy,
        dir: format!("{}/seed-{seed}", mode.name()),
    }
}

/// One run per (mode, seed); writes `ablation.json` and `ablation.csv` under
/// the base output directory. The closure sees every finished run.
pub fn run_ablation_with(spec: &AblationSpec, mut on_run: impl FnMut(&RunArtifacts)) -> Result<AblationSummary> {
    spec.validate()?;
    spec.base.check_paths()?;
    let root = spec.base.output_dir.clone();
    ensure_writable(&root)?;
    let mut runs = Vec::new();
    for &mode in &spec.modes {
        for &seed in &spec.seeds {
            let art = run_experiment(&spec.run_config(mode, seed))?;
            runs.push(ablation_run(mode, seed, &art.summary));
            on_run(&art);
        }
    }
    let summary = AblationSummary { rows: aggregate(&spec.modes, &runs), runs };
    write_ablation(&root, &summary)?;
    Ok(summary)
}

pub fn run_ablation(spec: &AblationSpec) -> Result<AblationSummary> {
    run_ablation_with(spec, |_| {})
}

fn write_ablation(root: &Path, summary: &AblationSummary) -> Result<()> {
    io::write_json(&root.join(ABLATION_FILE), summary)?;
    let path = root.join(ABLATION_TABLE_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| LabError::format(&path, e))?;
    let err = |e: csv::Error| LabError::format(&path, e);
    w.write_record(["mode", "seeds", "plcc", "srcc"]).map_err(err)?;
    for r in &summary.rows {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "undefined".into());
        w.write_record([r.mode.name().to_string(), r.seeds.to_string(), f(r.plcc), f(r.srcc)]).map_err(err)?;
    }
    w.flush().map_err(|e| LabError::io(&path, e))
}

/// Rebuilds an ablation summary from the per-run `summary.json` files on disk.
pub fn reaggregate(spec: &AblationSpec) -> Result<AblationSummary> {
    let mut runs = Vec::new();
    for &mode in &spec.modes {
        for &seed in &spec.seeds {
            let dir = spec.run_config(mode, seed).output_dir;
            let summary: RunSummary = io::read_json(&dir.join(SUMMARY_FILE))?;
            runs.push(ablation_run(mode, seed, &summary));
        }
    }
    Ok(AblationSummary { rows: aggregate(&spec.modes, &runs), runs })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub predictions: Vec<f64>,
    pub pred_histogram: Histogram,
    pub gt_histogram: Histogram,
}

/// Scores `dataset` with a saved policy.
pub fn evaluate_checkpoint(checkpoint: &Path, dataset: &Dataset, bins: usize, readout: Readout) -> Result<Evaluation> {
    let (_, policy) = io::load_checkpoint(checkpoint)?;
    if policy.dim() != dataset.dim() {
        return Err(rapo_core::Error::DimensionMismatch { expected: policy.dim(), got: dataset.dim() }.into());
    }
    let (report, predictions) = evaluate(&policy, dataset, readout)?;
    Ok(Evaluation {
        pred_histogram: histogram(&predictions, bins)?,
        gt_histogram: histogram(&dataset.mos(), bins)?,
        report,
        predictions,
    })
}

/// Writes report JSON, the (pred, gt) table and both histograms into `dir`.
pub fn write_evaluation(dir: &Path, dataset: &Dataset, eval: &Evaluation) -> Result<()> {
    ensure_writable(dir)?;
    io::write_json(&dir.join(REPORT_FILE), &eval.report)?;
    let ids: Vec<&str> = dataset.samples().iter().map(|s| s.id.as_str()).collect();
    io::write_predictions(&dir.join(PREDICTIONS_FILE), &ids, &eval.predictions, &dataset.mos())?;
    io::write_histogram(&dir.join(HIST_PRED_FILE), &eval.pred_histogram)?;
    io::write_histogram(&dir.join(HIST_GT_FILE), &eval.gt_histogram)
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use rapo_core::critique::{filter_dataset, CheckPlugin, ConstantCheck, FlagKind, DEFAULT_LEAK_TOLERANCE};
use rapo_core::dataset::{normalize_mos, synth_generate};
use rapo_lab::config::{AblationSpec, ExperimentConfig, Readout};
use rapo_lab::harness::{evaluate_checkpoint, run_ablation, run_experiment, write_evaluation};
use rapo_lab::io::{self, DataFormat};
use rapo_lab::{LabError, Result};

#[derive(Parser)]
#[command(name = "rapo", version, about = "Train, evaluate and ablate categorical score policies with RAPO")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Judge {
    /// Do not run this check.
    Off,
    /// Stub judge that passes every record.
    Pass,
    /// Stub judge that flags every record.
    Flag,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a TOML config.
    Train {
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a reward-mode x seed ablation from a TOML spec.
    Ablate {
        spec: PathBuf,
        /// Replaces the spec's seed list with `seed, seed+1, ...` of the same length.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum)]
        format: Option<DataFormat>,
        /// Raw score range of the dataset; defaults to scores already in [0, 1].
        #[arg(long, requires = "raw_max")]
        raw_min: Option<f64>,
        #[arg(long, requires = "raw_min")]
        raw_max: Option<f64>,
        #[arg(long, default_value_t = 10)]
        bins: usize,
        /// Use the most probable bin instead of the expected score.
        #[arg(long)]
        argmax: bool,
        /// Directory for the report, predictions and histograms.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Screen a critique corpus for score leakage and judge flags.
    Filter {
        corpus: PathBuf,
        #[arg(long, default_value_t = DEFAULT_LEAK_TOLERANCE)]
        tolerance: f64,
        #[arg(long, value_enum, default_value = "off")]
        align: Judge,
        #[arg(long, value_enum, default_value = "off")]
        fact: Judge,
        /// Kept records as JSONL.
        #[arg(long)]
        kept: Option<PathBuf>,
        /// Rejected records with their flags as JSONL.
        #[arg(long)]
        rejected: Option<PathBuf>,
    },
    /// Generate a synthetic dataset.
    Synth {
        #[arg(long, default_value_t = 640)]
        n: usize,
        #[arg(long, default_value_t = 8)]
        d: usize,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        format: Option<DataFormat>,
    },
}

fn format_for(path: &std::path::Path, explicit: Option<DataFormat>) -> Result<DataFormat> {
    explicit
        .or_else(|| DataFormat::from_path(path))
        .ok_or_else(|| LabError::Config(format!("cannot infer the format of {}; pass --format", path.display())))
}

fn print(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json values serialize"));
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, seed, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            let art = run_experiment(&cfg)?;
            print(&json!({
                "output_dir": art.output_dir,
                "summary": art.summary,
            }));
        }
        Command::Ablate { spec, seed } => {
            let mut spec = AblationSpec::load(&spec)?;
            if let Some(s) = seed {
                spec.seeds = (0..spec.seeds.len() as u64).map(|k| s + k).collect();
            }
            let summary = run_ablation(&spec)?;
            print(&json!({ "output_dir": spec.base.output_dir, "rows": summary.rows, "runs": summary.runs }));
        }
        Command::Eval { checkpoint, dataset, format, raw_min, raw_max, bins, argmax, out } => {
            let raw = io::load_dataset(&dataset, format_for(&dataset, format)?)?;
            let data = normalize_mos(&raw, raw_min.unwrap_or(0.0), raw_max.unwrap_or(1.0))?;
            let readout = if argmax { Readout::Argmax } else { Readout::Mean };
            let eval = evaluate_checkpoint(&checkpoint, &data, bins, readout)?;
            if let Some(dir) = &out {
                write_evaluation(dir, &data, &eval)?;
            }
            print(&json!({
                "report": eval.report,
                "histogram_pred": eval.pred_histogram,
                "histogram_gt": eval.gt_histogram,
            }));
        }
        Command::Filter { corpus, tolerance, align, fact, kept, rejected } => {
            let records = io::load_critiques(&corpus)?;
            let judge = |kind: FlagKind, name: &str, j: Judge| match j {
                Judge::Off => None,
                Judge::Pass | Judge::Flag => {
                    Some(ConstantCheck { name: name.into(), kind, verdict: matches!(j, Judge::Flag) })
                }
            };
            let checks: Vec<ConstantCheck> =
                [judge(FlagKind::Align, "align-stub", align), judge(FlagKind::Fact, "fact-stub", fact)]
                    .into_iter()
                    .flatten()
                    .collect();
            let plugins: Vec<&dyn CheckPlugin> = checks.iter().map(|c| c as &dyn CheckPlugin).collect();
            let total = records.len();
            let outcome = filter_dataset(records, &plugins, tolerance);
            if let Some(p) = &kept {
                io::write_jsonl(p, &outcome.kept)?;
            }
            if let Some(p) = &rejected {
                io::write_rejected(p, &outcome.rejected)?;
            }
            let leaked = outcome.rejected.iter().filter(|r| r.flags.leak).count();
            print(&json!({
                "total": total,
                "kept": outcome.kept.len(),
                "rejected": outcome.rejected.len(),
                "leak_flags": leaked,
                "rejected_ids": outcome.rejected.iter().map(|r| r.record.id.as_str()).collect::<Vec<_>>(),
            }));
        }
        Command::Synth { n, d, noise, seed, out, format } => {
            let data = synth_generate(n, d, noise, seed)?;
            io::write_dataset(&out, &data, format_for(&out, format)?)?;
            let mos = data.mos();
            let mean = mos.iter().sum::<f64>() / mos.len() as f64;
            print(&json!({ "path": out, "n": n, "d": d, "noise": noise, "seed": seed, "mos_mean": mean }));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

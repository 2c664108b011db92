//! File formats: datasets (CSV / JSONL), critique corpora, checkpoints,
//! run logs, histograms and JSON reports.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use rapo_core::critique::{CritiqueRecord, Rejected};
use rapo_core::dataset::{Dataset, ImageSample, Provenance};
use rapo_core::metrics::Histogram;
use rapo_core::policy::{Params, ScorePolicy};
use rapo_core::rapo::StepReport;

use crate::error::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Csv,
    Jsonl,
}

impl DataFormat {
    /// Guesses the format from the file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" => Some(Self::Csv),
            "jsonl" | "ndjson" => Some(Self::Jsonl),
            _ => None,
        }
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| LabError::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| LabError::io(path, e))?))
}

fn finish(path: &Path, mut w: BufWriter<File>) -> Result<()> {
    w.flush().map_err(|e| LabError::io(path, e))
}

// Shared row checks; rows are numbered from 1 in data order.
struct RowChecker<'a> {
    path: &'a Path,
    dim: Option<usize>,
    seen: HashSet<String>,
}

impl<'a> RowChecker<'a> {
    fn new(path: &'a Path) -> Self {
        Self { path, dim: None, seen: HashSet::new() }
    }

    fn check(&mut self, row: usize, sample: &ImageSample) -> Result<()> {
        if sample.id.is_empty() {
            return Err(LabError::record(self.path, row, "empty id"));
        }
        if !self.seen.insert(sample.id.clone()) {
            return Err(LabError::record(self.path, row, format!("duplicate id {:?}", sample.id)));
        }
        if !sample.mos.is_finite() || sample.features.iter().any(|x| !x.is_finite()) {
            return Err(LabError::record(self.path, row, "non-finite value"));
        }
        match self.dim {
            None if sample.features.is_empty() => Err(LabError::record(self.path, row, "no features")),
            None => {
                self.dim = Some(sample.features.len());
                Ok(())
            }
            Some(d) if d != sample.features.len() => Err(LabError::record(
                self.path,
                row,
                format!("inconsistent feature length: expected {d}, got {}", sample.features.len()),
            )),
            Some(_) => Ok(()),
        }
    }
}

/// Reads a dataset. Scores are kept as stored; apply `normalize_mos` to raw ones.
pub fn load_dataset(path: &Path, format: DataFormat) -> Result<Dataset> {
    let samples = match format {
        DataFormat::Csv => read_csv_samples(path)?,
        DataFormat::Jsonl => read_jsonl_samples(path)?,
    };
    if samples.is_empty() {
        return Err(LabError::format(path, "no records"));
    }
    Ok(Dataset::new(samples, Provenance::Real, false)?)
}

fn read_csv_samples(path: &Path) -> Result<Vec<ImageSample>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(open(path)?);
    let headers = rdr.headers().map_err(|e| LabError::format(path, e))?.clone();
    if headers.get(0) != Some("id") || headers.get(1) != Some("mos") {
        return Err(LabError::format(path, "header must start with id,mos"));
    }
    let mut checker = RowChecker::new(path);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| LabError::record(path, row, e.to_string()))?;
        let num = |col: usize, name: &str| -> Result<f64> {
            let field = rec.get(col).unwrap_or("");
            if field.is_empty() {
                return Err(LabError::record(path, row, format!("missing {name}")));
            }
            field.parse().map_err(|_| LabError::record(path, row, format!("bad {name} {field:?}")))
        };
        let mos = num(1, "mos")?;
        let features = (2..rec.len().max(headers.len()))
            .map(|c| num(c, headers.get(c).unwrap_or("feature")))
            .collect::<Result<Vec<_>>>()?;
        let sample = ImageSample { id: rec.get(0).unwrap_or("").to_string(), features, mos };
        checker.check(row, &sample)?;
        out.push(sample);
    }
    Ok(out)
}

#[derive(Deserialize)]
struct JsonSample {
    id: String,
    mos: Option<f64>,
    features: Option<Vec<f64>>,
}

fn read_jsonl_samples(path: &Path) -> Result<Vec<ImageSample>> {
    let mut checker = RowChecker::new(path);
    let mut out = Vec::new();
    for (i, line) in BufReader::new(open(path)?).lines().enumerate() {
        let row = i + 1;
        let line = line.map_err(|e| LabError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let js: JsonSample = serde_json::from_str(&line).map_err(|e| LabError::record(path, row, e.to_string()))?;
        let mos = js.mos.ok_or_else(|| LabError::record(path, row, "missing mos"))?;
        let features = js.features.ok_or_else(|| LabError::record(path, row, "missing features"))?;
        let sample = ImageSample { id: js.id, features, mos };
        checker.check(row, &sample)?;
        out.push(sample);
    }
    Ok(out)
}

pub fn write_dataset(path: &Path, dataset: &Dataset, format: DataFormat) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| LabError::io(path, e);
    match format {
        DataFormat::Csv => {
            let mut header = vec!["id".to_string(), "mos".to_string()];
            header.extend((0..dataset.dim()).map(|k| format!("f{k}")));
            writeln!(w, "{}", header.join(",")).map_err(io)?;
            for s in dataset.samples() {
                let mut row = vec![s.id.clone(), s.mos.to_string()];
                row.extend(s.features.iter().map(f64::to_string));
                writeln!(w, "{}", row.join(",")).map_err(io)?;
            }
        }
        DataFormat::Jsonl => {
            for s in dataset.samples() {
                let line = serde_json::json!({ "id": s.id, "mos": s.mos, "features": s.features });
                writeln!(w, "{line}").map_err(io)?;
            }
        }
    }
    finish(path, w)
}

/// Critique corpus, one `{id, critique, hidden_score}` object per line.
/// Extra keys are ignored.
pub fn load_critiques(path: &Path) -> Result<Vec<CritiqueRecord>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(open(path)?).lines().enumerate() {
        let row = i + 1;
        let line = line.map_err(|e| LabError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CritiqueRecord =
            serde_json::from_str(&line).map_err(|e| LabError::record(path, row, e.to_string()))?;
        rec.validate().map_err(|e| LabError::record(path, row, e.to_string()))?;
        if !seen.insert(rec.id.clone()) {
            return Err(LabError::record(path, row, format!("duplicate id {:?}", rec.id)));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = create(path)?;
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| LabError::format(path, e))?;
        writeln!(w, "{line}").map_err(|e| LabError::io(path, e))?;
    }
    finish(path, w)
}

pub fn write_rejected(path: &Path, rejected: &[Rejected]) -> Result<()> {
    write_jsonl(path, rejected)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| LabError::format(path, e))?;
    writeln!(w).map_err(|e| LabError::io(path, e))?;
    finish(path, w)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_reader(BufReader::new(open(path)?)).map_err(|e| LabError::format(path, e))
}

pub const CHECKPOINT_FORMAT: &str = "rapo-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub dim: usize,
    pub hidden: usize,
    pub bins: usize,
    /// Seed of the run that produced the parameters.
    pub seed: u64,
    /// RAPO steps completed; 0 for initial or warm-start checkpoints.
    pub step: u64,
    pub params: Params,
}

impl Checkpoint {
    pub fn new(policy: &ScorePolicy, seed: u64, step: u64) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            dim: policy.dim(),
            hidden: policy.hidden(),
            bins: policy.bins(),
            seed,
            step,
            params: policy.params().clone(),
        }
    }

    pub fn policy(&self) -> rapo_core::Result<ScorePolicy> {
        ScorePolicy::from_params(self.dim, self.hidden, self.bins, self.params.clone())
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    write_json(path, checkpoint)
}

/// Loads and validates a checkpoint; shape or value problems are format errors.
pub fn load_checkpoint(path: &Path) -> Result<(Checkpoint, ScorePolicy)> {
    let ck: Checkpoint = read_json(path)?;
    if ck.format != CHECKPOINT_FORMAT {
        return Err(LabError::format(path, format!("not a checkpoint (format {:?})", ck.format)));
    }
    if ck.version != CHECKPOINT_VERSION {
        return Err(LabError::format(path, format!("unsupported checkpoint version {}", ck.version)));
    }
    let policy = ck.policy().map_err(|e| LabError::format(path, e))?;
    Ok((ck, policy))
}

pub const RUN_LOG_HEADER: [&str; 12] = [
    "step",
    "rank",
    "abs",
    "binary",
    "combined",
    "mean_abs_advantage",
    "kl",
    "clip_fraction",
    "entropy",
    "objective",
    "train_plcc",
    "train_srcc",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_run_log(path: &Path, steps: &[StepReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let err = |e: csv::Error| LabError::format(path, e);
    w.write_record(RUN_LOG_HEADER).map_err(err)?;
    for s in steps {
        w.write_record([
            s.step.to_string(),
            opt(s.mean_rank),
            opt(s.mean_abs),
            opt(s.mean_binary),
            s.mean_reward.to_string(),
            s.mean_abs_advantage.to_string(),
            s.kl.to_string(),
            s.clip_fraction.to_string(),
            s.entropy.to_string(),
            s.objective.to_string(),
            opt(s.train_plcc),
            opt(s.train_srcc),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| LabError::io(path, e))
}

/// Left bin edges with their counts.
pub fn write_histogram(path: &Path, hist: &Histogram) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let err = |e: csv::Error| LabError::format(path, e);
    w.write_record(["edge", "count"]).map_err(err)?;
    for (edge, count) in hist.bin_edges.iter().zip(&hist.counts) {
        w.write_record([edge.to_string(), count.to_string()]).map_err(err)?;
    }
    w.flush().map_err(|e| LabError::io(path, e))
}

pub fn write_predictions(path: &Path, ids: &[&str], pred: &[f64], gt: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let err = |e: csv::Error| LabError::format(path, e);
    w.write_record(["id", "pred", "gt"]).map_err(err)?;
    for ((id, p), g) in ids.iter().zip(pred).zip(gt) {
        w.write_record([id.to_string(), p.to_string(), g.to_string()]).map_err(err)?;
    }
    w.flush().map_err(|e| LabError::io(path, e))
}

/// Reads back `(pred, gt)` columns written by [`write_predictions`].
pub fn read_predictions(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    let (mut pred, mut gt) = (Vec::new(), Vec::new());
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| LabError::record(path, i + 1, e.to_string()))?;
        let num = |c: usize| -> Result<f64> {
            rec.get(c).and_then(|f| f.parse().ok()).ok_or_else(|| LabError::record(path, i + 1, "bad number"))
        };
        pred.push(num(1)?);
        gt.push(num(2)?);
    }
    Ok((pred, gt))
}

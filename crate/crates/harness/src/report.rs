//! Report records and their JSON/CSV encodings.
//!
//! Every record carries `schema_version`; it is bumped whenever a field is
//! renamed, removed or reordered.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use tggbc_core::decoder::{AttentionScale, DecoderConfig};
use tggbc_core::pruner::{Criterion, PruneConfig, PruneTarget, Reduction};
use tggbc_core::workload::PlantedLayout;

use crate::config::{Method, ProfileKind, RunConfig, RunKey};
use crate::error::{HarnessError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub trials_ms: Vec<f64>,
    pub mean_ms: f64,
    pub median_ms: f64,
    /// Sample standard deviation.
    pub std_ms: f64,
}

impl TimingStats {
    pub fn from_trials(trials_ms: Vec<f64>) -> Self {
        let n = trials_ms.len();
        if n == 0 {
            return Self {
                trials_ms,
                mean_ms: f64::NAN,
                median_ms: f64::NAN,
                std_ms: f64::NAN,
            };
        }
        let mean = trials_ms.iter().sum::<f64>() / n as f64;
        let mut sorted = trials_ms.clone();
        sorted.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        let std = if n > 1 {
            (trials_ms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self {
            trials_ms,
            mean_ms: mean,
            median_ms: median,
            std_ms: std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub config: RunConfig,
    pub config_hash: String,
    pub baseline: TimingStats,
    pub pruned: TimingStats,
    /// `1 − pruned mean / baseline mean`.
    pub time_reduction: f64,
    pub flops_before: u64,
    pub flops_after: u64,
    pub flops_reduction: f64,
    pub agreement: f64,
    pub agreement_top_k: usize,
    pub mean_score_deviation: f64,
    /// Keys consumed by each layer of the pruned run.
    pub key_counts: Vec<usize>,
}

/// One flat line per run; the column order is [`CSV_HEADER`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub schema_version: u32,
    pub config_hash: String,
    pub method: Method,
    pub layers: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub num_queries: usize,
    pub num_keys: usize,
    pub num_classes: usize,
    pub ffn_dim: usize,
    pub scale: AttentionScale,
    pub total_prune: usize,
    pub layers_pruned: usize,
    pub top_queries: usize,
    pub criterion: Criterion,
    pub reduction: Reduction,
    pub target: PruneTarget,
    pub query_prune: usize,
    pub seed: u64,
    pub trials: usize,
    pub warmup: usize,
    pub profile: ProfileKind,
    pub planted_keys: Option<usize>,
    pub designated_queries: Option<usize>,
    pub decoy_keys: Option<usize>,
    pub decoy_queries: Option<usize>,
    pub planted_margin: Option<f64>,
    pub baseline_mean_ms: f64,
    pub baseline_median_ms: f64,
    pub pruned_mean_ms: f64,
    pub pruned_median_ms: f64,
    pub time_reduction: f64,
    pub flops_before: u64,
    pub flops_after: u64,
    pub flops_reduction: f64,
    pub agreement: f64,
}

pub const CSV_HEADER: &[&str] = &[
    "schema_version",
    "config_hash",
    "method",
    "layers",
    "embed_dim",
    "heads",
    "num_queries",
    "num_keys",
    "num_classes",
    "ffn_dim",
    "scale",
    "total_prune",
    "layers_pruned",
    "top_queries",
    "criterion",
    "reduction",
    "target",
    "query_prune",
    "seed",
    "trials",
    "warmup",
    "profile",
    "planted_keys",
    "designated_queries",
    "decoy_keys",
    "decoy_queries",
    "planted_margin",
    "baseline_mean_ms",
    "baseline_median_ms",
    "pruned_mean_ms",
    "pruned_median_ms",
    "time_reduction",
    "flops_before",
    "flops_after",
    "flops_reduction",
    "agreement",
];

impl SummaryRow {
    pub fn from_report(r: &BenchReport) -> Self {
        let c = &r.config;
        let (d, p, planted) = (c.decoder, c.prune, c.planted);
        Self {
            schema_version: SCHEMA_VERSION,
            config_hash: r.config_hash.clone(),
            method: c.method,
            layers: d.layers,
            embed_dim: d.embed_dim,
            heads: d.heads,
            num_queries: d.num_queries,
            num_keys: d.num_keys,
            num_classes: d.num_classes,
            ffn_dim: d.ffn_dim,
            scale: d.scale,
            total_prune: p.total_prune,
            layers_pruned: p.layers_pruned,
            top_queries: p.top_queries,
            criterion: p.criterion,
            reduction: p.reduction,
            target: p.target,
            query_prune: p.query_prune,
            seed: c.seed,
            trials: c.trials,
            warmup: c.warmup,
            profile: c.profile,
            planted_keys: planted.map(|l| l.planted_keys),
            designated_queries: planted.map(|l| l.designated_queries),
            decoy_keys: planted.map(|l| l.decoy_keys),
            decoy_queries: planted.map(|l| l.decoy_queries),
            planted_margin: planted.map(|l| l.margin),
            baseline_mean_ms: r.baseline.mean_ms,
            baseline_median_ms: r.baseline.median_ms,
            pruned_mean_ms: r.pruned.mean_ms,
            pruned_median_ms: r.pruned.median_ms,
            time_reduction: r.time_reduction,
            flops_before: r.flops_before,
            flops_after: r.flops_after,
            flops_reduction: r.flops_reduction,
            agreement: r.agreement,
        }
    }

    /// Rebuilds the configuration the row was produced from.
    pub fn key(&self) -> RunKey {
        let planted = match (self.planted_keys, self.designated_queries) {
            (Some(planted_keys), Some(designated_queries)) => Some(PlantedLayout {
                planted_keys,
                designated_queries,
                decoy_keys: self.decoy_keys.unwrap_or(0),
                decoy_queries: self.decoy_queries.unwrap_or(0),
                margin: self.planted_margin.unwrap_or(20.0),
            }),
            _ => None,
        };
        RunKey {
            method: self.method,
            decoder: DecoderConfig {
                layers: self.layers,
                embed_dim: self.embed_dim,
                heads: self.heads,
                num_queries: self.num_queries,
                num_keys: self.num_keys,
                num_classes: self.num_classes,
                ffn_dim: self.ffn_dim,
                scale: self.scale,
            },
            prune: PruneConfig {
                total_prune: self.total_prune,
                layers_pruned: self.layers_pruned,
                top_queries: self.top_queries,
                criterion: self.criterion,
                reduction: self.reduction,
                target: self.target,
                query_prune: self.query_prune,
            },
            seed: self.seed,
            trials: self.trials,
            warmup: self.warmup,
            profile: self.profile,
            planted,
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| HarnessError::io(path, e))
}

/// Writes pretty JSON to `path`, or to stdout when `path` is `None`.
pub fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serialises");
    match path {
        Some(p) => {
            let mut w = create(p)?;
            writeln!(w, "{text}").and_then(|_| w.flush()).map_err(|e| HarnessError::io(p, e))
        }
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::parse(path, e))
}

/// Writes rows with a header line, to `path` or stdout.
pub fn write_csv<T: Serialize>(rows: &[T], path: Option<&Path>) -> Result<()> {
    let sink: Box<dyn Write> = match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout()),
    };
    let shown = path.unwrap_or(Path::new("<stdout>"));
    let mut w = csv::Writer::from_writer(sink);
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(shown, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(shown, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> HarnessError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => HarnessError::io(path, io),
            _ => unreachable!(),
        }
    } else {
        HarnessError::parse(path, e)
    }
}

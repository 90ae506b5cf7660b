use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use tggbc_core::decoder::DecoderConfig;
use tggbc_core::flops::{CostSetting, FlopsBreakdown, GIGA};
use tggbc_core::numerics::Mat;
use tggbc_core::pruner::{Criterion, PruneTarget, Reduction};
use tggbc_core::workload::generate_workload;

use crate::ablation::{read_grid, run_ablation};
use crate::bench::{flops_for, run_bench};
use crate::config::{Format, Method, ProfileKind, RunConfig};
use crate::error::{HarnessError, Result};
use crate::report::{write_csv, write_json, SummaryRow, SCHEMA_VERSION};
use crate::verify::verify;

#[derive(Debug, Parser)]
#[command(name = "tggbc", version, about = "Key pruning benchmarks for transformer decoders")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON file of overrides on the default run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file; stdout when omitted (required for `ablate`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[arg(long, global = true, value_enum)]
    pub profile: Option<ProfileKind>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Time the full decoder against the reduced one.
    Bench,
    /// Sweep a grid of overrides, appending one row per point.
    Ablate {
        /// JSON array of override objects.
        #[arg(long)]
        grid: PathBuf,
    },
    /// Closed-form FLOPs before and after pruning.
    Flops,
    /// Run the built-in invariant checks.
    Verify,
    /// Generate a workload and print its summary.
    Workload,
}

impl Cli {
    pub fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = Some(o.clone());
        }
        if let Some(f) = self.format {
            cfg.format = f;
        }
        if let Some(p) = self.profile {
            cfg.profile = p;
        }
        Ok(cfg)
    }
}

/// Flat cost summary; one CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsRow {
    pub schema_version: u32,
    pub method: Method,
    pub layers: usize,
    pub num_queries: usize,
    pub num_keys: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub total_prune: usize,
    pub layers_pruned: usize,
    pub top_queries: usize,
    pub flops_before: u64,
    pub flops_after: u64,
    pub gflops_before: f64,
    pub gflops_after: f64,
    pub reduction_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsReport {
    #[serde(flatten)]
    pub summary: FlopsRow,
    /// Per-layer terms, for the default class-weighted key pruner.
    pub breakdown: Option<FlopsBreakdown>,
}

pub fn flops_report(cfg: &RunConfig) -> Result<FlopsReport> {
    let (before, after) = flops_for(cfg)?;
    let (d, p) = (cfg.decoder, cfg.prune);
    let default_variant = cfg.method == Method::Tggbc
        && p.criterion == Criterion::WithCls
        && p.target == PruneTarget::Keys
        && p.reduction != Reduction::Mean;
    let breakdown = if default_variant {
        Some(CostSetting::from_configs(&d, &p).breakdown()?)
    } else {
        None
    };
    Ok(FlopsReport {
        summary: FlopsRow {
            schema_version: SCHEMA_VERSION,
            method: cfg.method,
            layers: d.layers,
            num_queries: d.num_queries,
            num_keys: d.num_keys,
            embed_dim: d.embed_dim,
            heads: d.heads,
            total_prune: p.total_prune,
            layers_pruned: p.layers_pruned,
            top_queries: p.top_queries,
            flops_before: before,
            flops_after: after,
            gflops_before: before as f64 / GIGA,
            gflops_after: after as f64 / GIGA,
            reduction_percent: 100.0 * (1.0 - after as f64 / before as f64),
        },
        breakdown,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadRow {
    pub schema_version: u32,
    pub profile: ProfileKind,
    pub seed: u64,
    pub num_queries: usize,
    pub num_keys: usize,
    pub embed_dim: usize,
    pub queries_sha256: String,
    pub keys_sha256: String,
    pub planted_keys: usize,
    pub designated_queries: usize,
    pub decoy_keys: usize,
    pub decoy_queries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSummary {
    #[serde(flatten)]
    pub summary: WorkloadRow,
    pub decoder: DecoderConfig,
    pub planted_key_indices: Vec<usize>,
    pub designated_query_indices: Vec<usize>,
    pub decoy_key_indices: Vec<usize>,
    pub decoy_query_indices: Vec<usize>,
}

fn digest(m: &Mat<f32>) -> String {
    let mut h = Sha256::new();
    for v in m.as_slice() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

pub fn workload_summary(cfg: &RunConfig) -> Result<WorkloadSummary> {
    let w: tggbc_core::Workload = generate_workload(&cfg.decoder, cfg.seed, &cfg.profile())?;
    Ok(WorkloadSummary {
        summary: WorkloadRow {
            schema_version: SCHEMA_VERSION,
            profile: cfg.profile,
            seed: cfg.seed,
            num_queries: w.queries.rows(),
            num_keys: w.keys.rows(),
            embed_dim: w.keys.cols(),
            queries_sha256: digest(&w.queries),
            keys_sha256: digest(&w.keys),
            planted_keys: w.planted_keys.len(),
            designated_queries: w.designated_queries.len(),
            decoy_keys: w.decoy_keys.len(),
            decoy_queries: w.decoy_queries.len(),
        },
        decoder: cfg.decoder,
        planted_key_indices: w.planted_keys,
        designated_query_indices: w.designated_queries,
        decoy_key_indices: w.decoy_keys,
        decoy_query_indices: w.decoy_queries,
    })
}

fn emit<J: Serialize, C: Serialize>(format: Format, out: Option<&Path>, json: &J, csv_rows: &[C]) -> Result<()> {
    match format {
        Format::Json => write_json(json, out),
        Format::Csv => write_csv(csv_rows, out),
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = cli.run_config()?;
    let out = cfg.out.as_deref();
    match &cli.command {
        Command::Bench => {
            let report = run_bench(&cfg)?;
            eprintln!(
                "decoder time {:.1} ms -> {:.1} ms ({:+.2}%), agreement {:.3}",
                report.baseline.mean_ms,
                report.pruned.mean_ms,
                -100.0 * report.time_reduction,
                report.agreement
            );
            emit(cfg.format, out, &report, &[SummaryRow::from_report(&report)])
        }
        Command::Ablate { grid } => {
            let out = out.ok_or_else(|| HarnessError::Config("ablate needs --out to record and resume rows".into()))?;
            let points = read_grid(grid)?;
            let o = run_ablation(&cfg, &points, out, cfg.format)?;
            eprintln!(
                "{} rows written, {} already present, {} invalid",
                o.written.len(),
                o.skipped,
                o.invalid.len()
            );
            Ok(())
        }
        Command::Flops => {
            cfg.validate()?;
            let report = flops_report(&cfg)?;
            emit(cfg.format, out, &report, &[report.summary.clone()])
        }
        Command::Verify => {
            let summary = verify(&cfg);
            print!("{}", summary.render());
            if out.is_some() {
                emit(cfg.format, out, &summary, &summary.checks)?;
            }
            if summary.passed() {
                Ok(())
            } else {
                Err(HarnessError::Verification(summary.failed().join(", ")))
            }
        }
        Command::Workload => {
            cfg.decoder.validate()?;
            if let Some(o) = out {
                crate::config::check_writable(o)?;
            }
            let s = workload_summary(&cfg)?;
            emit(cfg.format, out, &s, &[s.summary.clone()])
        }
    }
}

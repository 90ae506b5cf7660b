//! Decoder-only timing of a full run against a reduced run on one workload.

use std::time::Instant;

use tggbc_core::compare::agreement;
use tggbc_core::decoder::{DecoderOutput, LayerHook};
use tggbc_core::flops::{flops_cross_attention_schedule, flops_decoder_before, pruned_cost};
use tggbc_core::pruner::TgGbcPruner;
use tggbc_core::tome::TomeMerger;
use tggbc_core::workload::build_scenario;
use tggbc_core::Scenario;

use crate::config::{Method, RunConfig};
use crate::error::{HarnessError, Result};
use crate::report::{BenchReport, TimingStats, SCHEMA_VERSION};

/// Runs `f` `warmup` times untimed, then `trials` times timed. Returns the
/// statistics and the output of the last timed call.
pub fn time_trials<R>(
    warmup: usize,
    trials: usize,
    mut f: impl FnMut() -> Result<R>,
) -> Result<(TimingStats, R)> {
    for _ in 0..warmup {
        f()?;
    }
    let mut times = Vec::with_capacity(trials);
    let mut last = None;
    for _ in 0..trials {
        let start = Instant::now();
        let out = f()?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
        last = Some(out);
    }
    let last = last.ok_or_else(|| HarnessError::Config("trials must be at least 1".into()))?;
    Ok((TimingStats::from_trials(times), last))
}

pub fn make_hook(cfg: &RunConfig) -> Result<Option<Box<dyn LayerHook<f32>>>> {
    Ok(match cfg.method {
        Method::Tggbc => Some(Box::new(TgGbcPruner::new(cfg.prune, &cfg.decoder)?)),
        Method::Tome => Some(Box::new(TomeMerger::new(
            cfg.prune.total_prune,
            cfg.prune.layers_pruned,
            &cfg.decoder,
        )?)),
        Method::None => None,
    })
}

/// `(before, after)` FLOPs. Token merging is charged for its
/// cross-attention only.
pub fn flops_for(cfg: &RunConfig) -> Result<(u64, u64)> {
    let d = &cfg.decoder;
    let before = flops_decoder_before(
        d.layers as u64,
        d.num_queries as u64,
        d.num_keys as u64,
        d.embed_dim as u64,
        d.heads as u64,
    )?;
    let after = match cfg.method {
        Method::Tggbc => pruned_cost(d, &cfg.prune)?,
        Method::Tome => flops_cross_attention_schedule(d, cfg.prune.total_prune, cfg.prune.layers_pruned)?,
        Method::None => before,
    };
    Ok((before, after))
}

/// A workload with its unpruned timings, reusable across reduced runs that
/// share the decoder, seed and profile.
pub struct Bench {
    base: RunConfig,
    scenario: Scenario,
    baseline: TimingStats,
    reference: DecoderOutput<f32>,
}

impl Bench {
    pub fn prepare(cfg: &RunConfig) -> Result<Self> {
        let scenario: Scenario = build_scenario(&cfg.decoder, cfg.seed, &cfg.profile())?;
        let (q, k) = (&scenario.workload.queries, &scenario.workload.keys);
        let (baseline, reference) = time_trials(cfg.warmup, cfg.trials, || {
            Ok(scenario.decoder.forward(q, k, None)?)
        })?;
        Ok(Self {
            base: cfg.clone(),
            scenario,
            baseline,
            reference,
        })
    }

    pub fn baseline(&self) -> &TimingStats {
        &self.baseline
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    /// True when `cfg` would produce the same workload and baseline.
    pub fn serves(&self, cfg: &RunConfig) -> bool {
        let (a, b) = (&self.base, cfg);
        a.decoder == b.decoder
            && a.seed == b.seed
            && a.profile() == b.profile()
            && a.trials == b.trials
            && a.warmup == b.warmup
    }

    pub fn run(&self, cfg: &RunConfig) -> Result<BenchReport> {
        if !self.serves(cfg) {
            return Err(HarnessError::Config(
                "run differs from the prepared workload in decoder, seed, profile or trial counts".into(),
            ));
        }
        cfg.validate()?;
        let hook = make_hook(cfg)?;
        let (q, k) = (&self.scenario.workload.queries, &self.scenario.workload.keys);
        let (pruned, output) = time_trials(cfg.warmup, cfg.trials, || {
            Ok(self.scenario.decoder.forward(q, k, hook.as_deref())?)
        })?;
        let top = cfg.prune.effective_top_queries(cfg.decoder.num_queries);
        let agree = agreement(&self.reference, &output, top)?;
        let (flops_before, flops_after) = flops_for(cfg)?;
        Ok(BenchReport {
            schema_version: SCHEMA_VERSION,
            config: cfg.clone(),
            config_hash: cfg.key().hash(),
            time_reduction: 1.0 - pruned.mean_ms / self.baseline.mean_ms,
            baseline: self.baseline.clone(),
            pruned,
            flops_before,
            flops_after,
            flops_reduction: 1.0 - flops_after as f64 / flops_before as f64,
            agreement: agree.fraction,
            agreement_top_k: agree.compared,
            mean_score_deviation: agree.mean_score_deviation,
            key_counts: output.key_counts,
        })
    }
}

pub fn run_bench(cfg: &RunConfig) -> Result<BenchReport> {
    cfg.validate()?;
    Bench::prepare(cfg)?.run(cfg)
}

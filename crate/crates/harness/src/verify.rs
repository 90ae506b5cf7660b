//! Self-checks run by `tggbc verify`.
//!
//! Each check exercises one invariant on small seeded inputs and reports a
//! deterministic one-line detail, so two runs with the same seed print the
//! same summary.

use serde::{Deserialize, Serialize};

use tggbc_core::decoder::{multi_head_attention, AttentionWeights, Decoder, DecoderConfig, LayerHook};
use tggbc_core::flops::{flops_importance, flops_mha, instrumented_decoder_cost, GIGA};
use tggbc_core::numerics::{bottom_indices, derive_seed, gemm_counted, seeded_init, softmax_rows, Mat, OpCounter};
use tggbc_core::pruner::{importance_scores, make_schedule, KeyIndexMap, PruneConfig, TgGbcPruner};
use tggbc_core::tome::{bipartite_soft_matching, merge_limit};
use tggbc_core::workload::{build_scenario, generate_workload, PlantedLayout, Profile};
use tggbc_core::{Error, Scenario, Workload};

use crate::config::RunConfig;
use crate::report::{BenchReport, TimingStats, SCHEMA_VERSION};

type CheckResult = std::result::Result<String, String>;

/// Closed forms under test. Swapping one out lets a test confirm that a
/// wrong constant is caught.
#[derive(Debug, Clone, Copy)]
pub struct CostModel {
    pub mha: fn(u64, u64, u64, u64) -> tggbc_core::Result<u64>,
    pub importance: fn(u64, u64, u64, u64) -> u64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            mha: flops_mha,
            importance: flops_importance,
        }
    }
}

impl CostModel {
    fn after(&self, d: &DecoderConfig, p: &PruneConfig) -> tggbc_core::Result<u64> {
        let s = p.schedule(d)?;
        let keys = s.counts_per_layer(d.num_keys, d.layers);
        let (nq, e, h) = (d.num_queries as u64, d.embed_dim as u64, d.heads as u64);
        let k = p.effective_top_queries(d.num_queries) as u64;
        let mut total = 0;
        for (i, &nk) in keys.iter().enumerate() {
            total += (self.mha)(nq, nk as u64, e, h)?;
            if i < p.layers_pruned {
                total += (self.importance)(nq, nk as u64, h, k);
            }
        }
        Ok(total)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifySummary {
    pub schema_version: u32,
    pub seed: u64,
    pub checks: Vec<Check>,
}

impl VerifySummary {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let status = if c.passed { "PASS" } else { "FAIL" };
            s.push_str(&format!("{status} {:<24} {}\n", c.name, c.detail));
        }
        let passed = self.checks.iter().filter(|c| c.passed).count();
        s.push_str(&format!("{passed}/{} checks passed\n", self.checks.len()));
        s
    }
}

pub fn verify(cfg: &RunConfig) -> VerifySummary {
    verify_with(cfg, &CostModel::default())
}

pub fn verify_with(cfg: &RunConfig, model: &CostModel) -> VerifySummary {
    let seed = cfg.seed;
    let checks: Vec<(&str, Box<dyn Fn() -> CheckResult>)> = vec![
        ("matmul-count", Box::new(move || matmul_count(seed))),
        ("softmax-rows", Box::new(move || softmax_distributions(seed))),
        ("attention-shape", Box::new(move || attention_shape(seed))),
        ("flops-oracle", Box::new(move || flops_oracle(model, seed))),
        ("flops-reference-totals", Box::new(move || reference_totals(model))),
        ("flops-k-insensitivity", Box::new(move || k_insensitivity(model))),
        ("importance-oracle", Box::new(move || importance_oracle(seed))),
        ("bottom-indices-stable", Box::new(move || stable_bottom(seed))),
        ("schedule-law", Box::new(move || schedule_law(seed))),
        ("planted-safety", Box::new(move || planted_safety(seed))),
        ("merge-limit", Box::new(merge_limit_check)),
        ("merge-means", Box::new(move || merge_means(seed))),
        ("workload-determinism", Box::new(move || workload_determinism(seed))),
        ("report-round-trip", Box::new(report_round_trip)),
    ];
    VerifySummary {
        schema_version: SCHEMA_VERSION,
        seed,
        checks: checks
            .into_iter()
            .map(|(name, f)| {
                let (passed, detail) = match f() {
                    Ok(d) => (true, d),
                    Err(d) => (false, d),
                };
                Check {
                    name: name.to_string(),
                    passed,
                    detail,
                }
            })
            .collect(),
    }
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn core<T>(r: tggbc_core::Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn matmul_count(seed: u64) -> CheckResult {
    let mut cases = 0;
    for n in 1..=5 {
        for c in 1..=5 {
            for m in 1..=5 {
                let a: Mat<f64> = seeded_init(n, c, derive_seed(seed, 1), 1.0);
                let b: Mat<f64> = seeded_init(c, m, derive_seed(seed, 2), 1.0);
                let mut out = Mat::zeros(n, m);
                let mut count = OpCounter::new();
                core(gemm_counted(a.view(), b.view(), out.view_mut(), Some(&mut count)))?;
                let (n, m, c) = (n as u64, m as u64, c as u64);
                ensure(
                    count.multiplications == n * m * c && count.additions == n * m * (c - 1),
                    || format!("{n}x{c} by {c}x{m}: {count:?}"),
                )?;
                cases += 1;
            }
        }
    }
    Ok(format!("{cases} shapes"))
}

fn softmax_distributions(seed: u64) -> CheckResult {
    let m: Mat<f64> = seeded_init(16, 40, seed, 200.0);
    let s = softmax_rows(&m, None);
    let worst = s
        .row_iter()
        .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    ensure(worst < 1e-12 && s.is_finite(), || format!("row sum off by {worst:e}"))?;
    Ok(format!("max row-sum error {worst:.1e}"))
}

fn attention_shape(seed: u64) -> CheckResult {
    let w = AttentionWeights::<f32>::seeded(16, seed, 1.0);
    let q = seeded_init(5, 16, derive_seed(seed, 1), 1.0);
    for nk in [1, 3, 64, 4224] {
        let k = seeded_init(nk, 16, derive_seed(seed, nk as u64), 1.0);
        let out = core(multi_head_attention(&q, &k, &k, &w, 4, Default::default(), None))?;
        ensure(out.output.shape() == (5, 16), || format!("N_k={nk}: {:?}", out.output.shape()))?;
    }
    Ok("output 5x16 for N_k in {1, 3, 64, 4224}".into())
}

fn flops_oracle(model: &CostModel, seed: u64) -> CheckResult {
    let mut cases = 0;
    for (e, h) in [(2, 1), (2, 2), (4, 1), (4, 2), (8, 2), (8, 4)] {
        for nq in [1, 3, 6] {
            for nk in [3, 5, 8] {
                let d = DecoderConfig {
                    layers: 2,
                    embed_dim: e,
                    heads: h,
                    num_queries: nq,
                    num_keys: nk,
                    num_classes: 3,
                    ffn_dim: 4,
                    scale: Default::default(),
                };
                let dense = core(instrumented_decoder_cost(&d, None, seed))?.total_flops();
                let want = 2 * core((model.mha)(nq as u64, nk as u64, e as u64, h as u64))?;
                ensure(dense == want, || format!("dense E={e} H={h} N_q={nq} N_k={nk}: counted {dense}, model {want}"))?;
                for n in [1, 2] {
                    let p = PruneConfig::new(nk - 1, n, nq.div_ceil(2));
                    let got = core(instrumented_decoder_cost(&d, Some(&p), seed))?.total_flops();
                    let want = core(model.after(&d, &p))?;
                    ensure(got == want, || {
                        format!("pruned E={e} H={h} N_q={nq} N_k={nk} n={n}: counted {got}, model {want}")
                    })?;
                    cases += 1;
                }
            }
        }
    }
    Ok(format!("{cases} pruned configurations exact"))
}

fn streampetr(num_keys: usize, total_prune: usize, top: usize) -> (DecoderConfig, PruneConfig) {
    (
        DecoderConfig {
            num_keys,
            ..DecoderConfig::streampetr()
        },
        PruneConfig::new(total_prune, 2, top),
    )
}

fn reference_totals(model: &CostModel) -> CheckResult {
    let mut detail = Vec::new();
    for (nk, r, before, after) in [(24000, 21000, 174.91, 61.44), (16896, 12000, 123.55, 58.84)] {
        let (d, p) = streampetr(nk, r, 175);
        let b = 6.0 * core((model.mha)(900, nk as u64, 256, 8))? as f64 / GIGA;
        let a = core(model.after(&d, &p))? as f64 / GIGA;
        ensure((b - before).abs() / before < 0.005, || format!("N_k={nk}: before {b:.2} vs {before}"))?;
        ensure((a - after).abs() / after < 0.005, || format!("N_k={nk}: after {a:.2} vs {after}"))?;
        detail.push(format!("{b:.2}->{a:.2}"));
    }
    Ok(format!("GFLOPs {}", detail.join(", ")))
}

fn k_insensitivity(model: &CostModel) -> CheckResult {
    let mut totals = Vec::new();
    for k in [100, 300, 500, 700, 900] {
        let (d, p) = streampetr(24000, 21000, k);
        totals.push(core(model.after(&d, &p))? as f64);
    }
    let lo = totals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = totals.iter().copied().fold(0.0, f64::max);
    let spread = (hi - lo) / hi;
    ensure(spread < 1e-3, || format!("spread {spread:.2e}"))?;
    Ok(format!("spread {:.4}%", spread * 100.0))
}

fn importance_oracle(seed: u64) -> CheckResult {
    let (h, nq, nk) = (3, 7, 11);
    let mut worst: f64 = 0.0;
    for case in 0..50 {
        let s = derive_seed(seed, case);
        let maps: Vec<Mat<f64>> = (0..h)
            .map(|i| softmax_rows(&seeded_init(nq, nk, derive_seed(s, i), 4.0), None))
            .collect();
        // coarse class scores so ties occur
        let c: Vec<f64> = seeded_init::<f64>(1, nq, derive_seed(s, 9), 1.0)
            .as_slice()
            .iter()
            .map(|x| (x.abs() * 4.0).round() / 4.0)
            .collect();
        let k = 1 + (case as usize % nq);
        let got = core(importance_scores(&maps, &c, k, KeyIndexMap::identity(nk), None))?;
        let mut order: Vec<usize> = (0..nq).collect();
        order.sort_by(|&a, &b| c[b].total_cmp(&c[a]));
        for j in 0..nk {
            let mut want = 0.0;
            for &i in &order[..k] {
                let avg = maps.iter().map(|m| m.get(i, j)).sum::<f64>() / h as f64;
                want += c[i] * avg;
            }
            let err = (got.scores[j] - want).abs() / want.abs().max(1e-300);
            worst = worst.max(if want == 0.0 { got.scores[j].abs() } else { err });
        }
    }
    ensure(worst < 1e-6, || format!("relative error {worst:e}"))?;
    Ok(format!("50 instances, max relative error {worst:.1e}"))
}

fn stable_bottom(seed: u64) -> CheckResult {
    for case in 0..50 {
        let v: Vec<f64> = seeded_init::<f64>(1, 30, derive_seed(seed, case), 1.0)
            .as_slice()
            .iter()
            .map(|x| (x * 3.0).round())
            .collect();
        let count = case as usize % 30;
        let mut order: Vec<usize> = (0..30).collect();
        order.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).expect("finite"));
        let mut want = order[..count].to_vec();
        want.sort_unstable();
        let got = core(bottom_indices(&v, count))?;
        ensure(got == want, || format!("case {case}: {got:?} vs {want:?}"))?;
    }
    Ok("50 vectors with ties".into())
}

fn schedule_law(seed: u64) -> CheckResult {
    let d = DecoderConfig {
        layers: 4,
        embed_dim: 8,
        heads: 2,
        num_queries: 4,
        num_keys: 40,
        num_classes: 3,
        ffn_dim: 8,
        scale: Default::default(),
    };
    let model: Decoder<f32> = core(Decoder::seeded(d, seed))?;
    let w: Workload = core(generate_workload(&d, seed, &Profile::Random))?;
    let mut runs = 0;
    for n in 1..=4 {
        for r in [0, 1, 7, 20, 39] {
            let Ok(hook) = TgGbcPruner::new(PruneConfig::new(r, n, 2), &d) else {
                ensure(n * (r / n) >= 40, || format!("r={r} n={n} rejected"))?;
                continue;
            };
            let out = core(model.forward(&w.queries, &w.keys, Some(&hook as &dyn LayerHook<f32>)))?;
            let left = out.final_keys.rows();
            ensure(left == 40 - n * (r / n), || format!("r={r} n={n}: {left} keys left"))?;
            runs += 1;
        }
    }
    ensure(make_schedule(40, 40, 1, 4).is_err(), || "removing every key accepted".into())?;
    Ok(format!("{runs} runs"))
}

fn planted_safety(seed: u64) -> CheckResult {
    let d = DecoderConfig {
        layers: 3,
        embed_dim: 32,
        heads: 4,
        num_queries: 32,
        num_keys: 256,
        num_classes: 4,
        ffn_dim: 32,
        scale: Default::default(),
    };
    let layout = PlantedLayout {
        planted_keys: 16,
        designated_queries: 4,
        ..PlantedLayout::for_config(&d)
    };
    let s: Scenario = core(build_scenario(&d, seed, &Profile::Planted(layout)))?;
    let hook = core(TgGbcPruner::new(PruneConfig::new(224, 2, 4), &d))?;
    let out = core(s.decoder.forward(&s.workload.queries, &s.workload.keys, Some(&hook as &dyn LayerHook<f32>)))?;
    let lost = s.workload.planted_keys.iter().filter(|k| !out.key_origin.contains(k)).count();
    ensure(lost == 0, || format!("{lost} planted keys pruned"))?;
    Ok(format!("16 planted keys kept, {} keys left", out.final_keys.rows()))
}

fn merge_limit_check() -> CheckResult {
    let keys = Mat::<f32>::zeros(4224, 4);
    match bipartite_soft_matching(&keys, merge_limit(4224) + 1) {
        Err(Error::MergeLimit { limit: 2112, .. }) => Ok("2113 of 4224 rejected".into()),
        other => Err(format!("expected merge limit error, got {:?}", other.map(|(m, _)| m.shape()))),
    }
}

fn merge_means(seed: u64) -> CheckResult {
    let keys: Mat<f64> = seeded_init(21, 6, seed, 1.0);
    let (out, plan) = core(bipartite_soft_matching(&keys, 10))?;
    for (i, prov) in plan.provenance.iter().enumerate() {
        for c in 0..6 {
            let mean = prov.iter().map(|&p| keys.get(p, c)).sum::<f64>() / prov.len() as f64;
            ensure((out.get(i, c) - mean).abs() < 1e-12, || format!("row {i} col {c}"))?;
        }
    }
    Ok(format!("{} rows", out.rows()))
}

fn workload_determinism(seed: u64) -> CheckResult {
    let d = DecoderConfig {
        num_keys: 4224,
        num_queries: 16,
        ..DecoderConfig::streampetr()
    };
    for profile in [Profile::Random, Profile::Planted(PlantedLayout::for_config(&d))] {
        let a: Workload = core(generate_workload(&d, seed, &profile))?;
        let b: Workload = core(generate_workload(&d, seed, &profile))?;
        ensure(a == b, || format!("{profile:?} differs between calls"))?;
    }
    Ok("random and planted".into())
}

fn report_round_trip() -> CheckResult {
    let config = RunConfig::default();
    let report = BenchReport {
        schema_version: SCHEMA_VERSION,
        config_hash: config.key().hash(),
        config,
        baseline: TimingStats::from_trials(vec![10.1, 9.7, 10.4]),
        pruned: TimingStats::from_trials(vec![5.3, 5.1, 5.9]),
        time_reduction: 0.1 / 3.0,
        flops_before: 174_907_195_206,
        flops_after: 61_360_000_001,
        flops_reduction: 2.0 / 3.0,
        agreement: 0.99,
        agreement_top_k: 175,
        mean_score_deviation: 1e-7,
        key_counts: vec![24000, 13500, 3000],
    };
    let text = serde_json::to_string(&report).map_err(|e| e.to_string())?;
    let back: BenchReport = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    ensure(back == report, || "decoded report differs".into())?;
    Ok(format!("{} bytes", text.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_passes_and_is_repeatable() {
        let a = verify(&RunConfig::default());
        assert!(a.passed(), "{}", a.render());
        assert_eq!(a, verify(&RunConfig::default()));
    }

    fn bent_mha(nq: u64, nk: u64, e: u64, h: u64) -> tggbc_core::Result<u64> {
        // slope off by one
        Ok(flops_mha(nq, nk, e, h)? + nk)
    }

    #[test]
    fn corrupted_slope_is_named() {
        let model = CostModel {
            mha: bent_mha,
            ..CostModel::default()
        };
        let s = verify_with(&RunConfig::default(), &model);
        assert!(!s.passed());
        assert!(s.failed().contains(&"flops-oracle"), "{}", s.render());
        assert!(s.render().contains("FAIL flops-oracle"));
    }
}

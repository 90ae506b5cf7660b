//! Synthetic decoder inputs standing in for backbone features.
//!
//! The `random` profile draws i.i.d. queries and keys. The `planted` profile
//! builds a decoder and inputs with known structure: a designated set of
//! queries carries a signal direction `u`, a planted set of keys carries a
//! large multiple of `u`, and the cross-attention projections are chosen so
//! that designated queries put essentially all of their attention on the
//! planted keys. Designated queries also receive the highest classification
//! scores. Optional decoy queries and keys repeat the construction along a
//! second direction `w`, with class scores that are moderate on every class,
//! so that min/mean reductions prefer them over the designated queries.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::decoder::{
    AttentionWeights, ClassifierWeights, Decoder, DecoderConfig, DecoderWeights, FeedForward,
    LayerWeights, NormWeights,
};
use crate::error::{Error, Result};
use crate::numerics::{derive_seed, seeded_init, Mat, Scalar};

/// Sizes and strength of the planted structure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedLayout {
    pub planted_keys: usize,
    pub designated_queries: usize,
    #[serde(default)]
    pub decoy_keys: usize,
    #[serde(default)]
    pub decoy_queries: usize,
    /// Per-head logit advantage of a planted key for a designated query.
    #[serde(default = "default_margin")]
    pub margin: f64,
}

fn default_margin() -> f64 {
    20.0
}

impl PlantedLayout {
    /// One key in sixteen planted, one query in eight designated, no decoys.
    pub fn for_config(config: &DecoderConfig) -> Self {
        Self {
            planted_keys: (config.num_keys / 16).max(1),
            designated_queries: (config.num_queries / 8).max(1),
            decoy_keys: 0,
            decoy_queries: 0,
            margin: default_margin(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Profile {
    Random,
    Planted(PlantedLayout),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Workload<T> {
    pub queries: Mat<T>,
    pub keys: Mat<T>,
    pub planted_keys: Vec<usize>,
    pub designated_queries: Vec<usize>,
    pub decoy_keys: Vec<usize>,
    pub decoy_queries: Vec<usize>,
}

/// A decoder together with inputs built for it.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario<T> {
    pub decoder: Decoder<T>,
    pub workload: Workload<T>,
}

const QUERY_STREAM: u64 = 0x51;
const KEY_STREAM: u64 = 0x4b;
const INDEX_STREAM: u64 = 0x1d;
const WEIGHT_STREAM: u64 = 0x57;

/// Deterministic queries and keys for `config`.
pub fn generate_workload<T: Scalar>(
    config: &DecoderConfig,
    seed: u64,
    profile: &Profile,
) -> Result<Workload<T>> {
    config.validate()?;
    let e = config.embed_dim;
    let unit = (e as f64).sqrt();
    match profile {
        Profile::Random => Ok(Workload {
            queries: seeded_init(config.num_queries, e, derive_seed(seed, QUERY_STREAM), unit),
            keys: seeded_init(config.num_keys, e, derive_seed(seed, KEY_STREAM), unit),
            planted_keys: Vec::new(),
            designated_queries: Vec::new(),
            decoy_keys: Vec::new(),
            decoy_queries: Vec::new(),
        }),
        Profile::Planted(layout) => planted(config, seed, layout),
    }
}

/// Weights matching `profile`: seeded random weights for `random`, the
/// structured weights described in the module docs for `planted`.
pub fn profile_weights<T: Scalar>(
    config: &DecoderConfig,
    seed: u64,
    profile: &Profile,
) -> Result<DecoderWeights<T>> {
    config.validate()?;
    let seed = derive_seed(seed, WEIGHT_STREAM);
    match profile {
        Profile::Random => Ok(DecoderWeights::seeded(config, seed)),
        Profile::Planted(_) => {
            check_planted_width(config)?;
            Ok(planted_weights(config, seed))
        }
    }
}

pub fn build_scenario<T: Scalar>(
    config: &DecoderConfig,
    seed: u64,
    profile: &Profile,
) -> Result<Scenario<T>> {
    let weights = profile_weights(config, seed, profile)?;
    Ok(Scenario {
        decoder: Decoder::new(*config, weights)?,
        workload: generate_workload(config, seed, profile)?,
    })
}

fn check_planted_width(config: &DecoderConfig) -> Result<()> {
    if config.embed_dim < 4 * config.heads {
        return Err(Error::Config(format!(
            "planted profile needs head_dim >= 4, got embed_dim {} over {} heads",
            config.embed_dim, config.heads
        )));
    }
    Ok(())
}

/// Unit signal directions, spread evenly over every head block: within each
/// block `u` sits on offsets 0 and 1, `w` on offsets 2 and 3, with opposite
/// signs so both are zero-mean and survive layer norm unchanged.
#[derive(Debug, Clone, Copy)]
struct Directions {
    heads: usize,
    head_dim: usize,
}

const U: usize = 0;
const W: usize = 2;

impl Directions {
    fn new(config: &DecoderConfig) -> Self {
        Self {
            heads: config.heads,
            head_dim: config.head_dim(),
        }
    }

    fn add<T: Scalar>(&self, row: &mut [T], which: usize, amount: f64) {
        let c = T::of(amount / (2.0 * self.heads as f64).sqrt());
        for h in 0..self.heads {
            let base = h * self.head_dim + which;
            row[base] += c;
            row[base + 1] -= c;
        }
    }

    // Averages each coordinate pair, which removes u, w and their per-head
    // pieces.
    fn project_out<T: Scalar>(&self, row: &mut [T]) {
        for h in 0..self.heads {
            for which in [U, W] {
                let base = h * self.head_dim + which;
                let mean = (row[base] + row[base + 1]) / T::of(2.0);
                row[base] = mean;
                row[base + 1] = mean;
            }
        }
    }

    fn projector<T: Scalar>(&self, e: usize) -> Mat<T> {
        let mut p = Mat::identity(e);
        for h in 0..self.heads {
            for which in [U, W] {
                let base = h * self.head_dim + which;
                for (i, j) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    p.set(base + i, base + j, T::of(0.5));
                }
            }
        }
        p
    }

    fn noise_rows<T: Scalar>(&self, rows: usize, e: usize, seed: u64, std: f64) -> Mat<T> {
        let mut m: Mat<T> = seeded_init(rows, e, seed, std * (e as f64).sqrt());
        for i in 0..rows {
            self.project_out(m.row_mut(i));
        }
        m
    }
}

fn pick_disjoint(rng: &mut SplitMix64, n: usize, first: usize, second: usize) -> (Vec<usize>, Vec<usize>) {
    let mut all = sample(rng, n, first + second).into_vec();
    let mut b = all.split_off(first);
    all.sort_unstable();
    b.sort_unstable();
    (all, b)
}

fn planted<T: Scalar>(config: &DecoderConfig, seed: u64, layout: &PlantedLayout) -> Result<Workload<T>> {
    check_planted_width(config)?;
    let (nq, nk, e) = (config.num_queries, config.num_keys, config.embed_dim);
    if layout.planted_keys + layout.decoy_keys > nk {
        return Err(Error::Config(format!(
            "{} planted and {} decoy keys exceed num_keys {nk}",
            layout.planted_keys, layout.decoy_keys
        )));
    }
    if layout.designated_queries + layout.decoy_queries > nq {
        return Err(Error::Config(format!(
            "{} designated and {} decoy queries exceed num_queries {nq}",
            layout.designated_queries, layout.decoy_queries
        )));
    }
    if layout.planted_keys == 0 || layout.designated_queries == 0 {
        return Err(Error::Config("planted profile needs at least one planted key and designated query".into()));
    }

    let mut rng = SplitMix64::seed_from_u64(derive_seed(seed, INDEX_STREAM));
    let (planted_keys, decoy_keys) = pick_disjoint(&mut rng, nk, layout.planted_keys, layout.decoy_keys);
    let (designated_queries, decoy_queries) =
        pick_disjoint(&mut rng, nq, layout.designated_queries, layout.decoy_queries);

    let dirs = Directions::new(config);
    let sqrt_e = (e as f64).sqrt();
    let mut queries: Mat<T> = dirs.noise_rows(nq, e, derive_seed(seed, QUERY_STREAM), 1.0);
    let quiet: Mat<T> = dirs.noise_rows(nq, e, derive_seed(seed, QUERY_STREAM + 1), 0.1);
    for &q in &designated_queries {
        let row = queries.row_mut(q);
        row.copy_from_slice(quiet.row(q));
        dirs.add(row, U, sqrt_e);
    }
    for &q in &decoy_queries {
        let row = queries.row_mut(q);
        for x in row.iter_mut() {
            *x = *x * T::of(0.7);
        }
        dirs.add(row, W, 0.7 * sqrt_e);
    }

    // a normalised query on u gives each head's score a share of 1/heads, so
    // the key amplitude is scaled up to put the full margin in every head
    let amplitude = layout.margin * config.heads as f64;
    let mut keys: Mat<T> = dirs.noise_rows(nk, e, derive_seed(seed, KEY_STREAM), 1.0);
    for (set, which) in [(&planted_keys, U), (&decoy_keys, W)] {
        for &k in set {
            let row = keys.row_mut(k);
            for x in row.iter_mut() {
                *x = *x * T::of(0.5);
            }
            dirs.add(row, which, amplitude);
        }
    }

    Ok(Workload {
        queries,
        keys,
        planted_keys,
        designated_queries,
        decoy_keys,
        decoy_queries,
    })
}

fn planted_weights<T: Scalar>(config: &DecoderConfig, seed: u64) -> DecoderWeights<T> {
    let e = config.embed_dim;
    let dirs = Directions::new(config);
    let value = dirs.projector(e);
    let layers = (0..config.layers)
        .map(|l| {
            let s = derive_seed(seed, 100 + l as u64);
            LayerWeights {
                self_attn: AttentionWeights::seeded(e, derive_seed(s, 1), 0.05),
                norm_self: NormWeights::unit(e),
                cross_attn: AttentionWeights {
                    w_q: Mat::identity(e),
                    w_k: Mat::identity(e),
                    w_v: value.clone(),
                    w_o: Mat::identity(e),
                },
                norm_cross: NormWeights::unit(e),
                ffn: FeedForward::seeded(e, config.ffn_dim, derive_seed(s, 3), 0.05),
                norm_ffn: NormWeights::unit(e),
            }
        })
        .collect();

    // class 0 reads u, every other class reads w
    let gain = 8.0 / (e as f64).sqrt();
    let mut weight = Mat::zeros(e, config.num_classes);
    let mut bias = vec![T::of(-6.0); config.num_classes];
    bias[0] = T::of(-2.0);
    for c in 0..config.num_classes {
        let mut column = vec![T::zero(); e];
        dirs.add(&mut column, if c == 0 { U } else { W }, gain);
        for (i, v) in column.into_iter().enumerate() {
            weight.set(i, c, v);
        }
    }
    DecoderWeights {
        layers,
        classifier: ClassifierWeights { weight, bias },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pruner::head_average;

    fn cfg() -> DecoderConfig {
        DecoderConfig {
            layers: 3,
            embed_dim: 32,
            heads: 4,
            num_queries: 32,
            num_keys: 256,
            num_classes: 4,
            ffn_dim: 64,
            scale: Default::default(),
        }
    }

    #[test]
    fn same_seed_same_workload() {
        for profile in [Profile::Random, Profile::Planted(PlantedLayout::for_config(&cfg()))] {
            let a: Workload<f32> = generate_workload(&cfg(), 9, &profile).unwrap();
            let b: Workload<f32> = generate_workload(&cfg(), 9, &profile).unwrap();
            assert_eq!(a, b);
            let c: Workload<f32> = generate_workload(&cfg(), 10, &profile).unwrap();
            assert_ne!(a.keys, c.keys);
        }
    }

    #[test]
    fn random_profile_at_smallest_real_key_count() {
        let c = DecoderConfig {
            num_keys: 4224,
            ..cfg()
        };
        let w: Workload<f32> = generate_workload(&c, 1, &Profile::Random).unwrap();
        assert_eq!(w.keys.shape(), (4224, 32));
        assert_eq!(w.queries.shape(), (32, 32));
    }

    #[test]
    fn oversized_plant_is_rejected() {
        let layout = PlantedLayout {
            planted_keys: 257,
            ..PlantedLayout::for_config(&cfg())
        };
        assert!(matches!(
            generate_workload::<f32>(&cfg(), 1, &Profile::Planted(layout)),
            Err(Error::Config(_))
        ));
        let narrow = DecoderConfig {
            embed_dim: 12,
            heads: 4,
            ..cfg()
        };
        assert!(build_scenario::<f32>(&narrow, 1, &Profile::Planted(PlantedLayout::for_config(&narrow))).is_err());
    }

    #[test]
    fn planted_keys_capture_designated_attention_at_first_layer() {
        let layout = PlantedLayout {
            planted_keys: 16,
            designated_queries: 4,
            ..PlantedLayout::for_config(&cfg())
        };
        let s: Scenario<f32> = build_scenario(&cfg(), 3, &Profile::Planted(layout)).unwrap();
        let t = s
            .decoder
            .layer_forward(0, &s.workload.queries, &s.workload.keys, None)
            .unwrap();
        for m in &t.maps {
            for &q in &s.workload.designated_queries {
                let mass: f32 = s.workload.planted_keys.iter().map(|&k| m.get(q, k)).sum();
                assert!(mass > 0.999, "query {q} puts {mass} on planted keys");
            }
        }
        let avg = head_average(&t.maps, None).unwrap();
        assert_eq!(avg.shape(), (32, 256));
        // designated queries carry the highest class-0 scores
        let lowest_designated = s
            .workload
            .designated_queries
            .iter()
            .map(|&q| t.scores.get(q, 0))
            .fold(f32::INFINITY, f32::min);
        for q in 0..32 {
            if !s.workload.designated_queries.contains(&q) {
                assert!(t.scores.get(q, 0) < lowest_designated);
            }
        }
    }
}

use serde::{Deserialize, Serialize};

use crate::decoder::DecoderConfig;
use crate::error::{Error, Result};

/// Default number of top-scoring queries that contribute to key importance.
pub const DEFAULT_TOP_QUERIES: usize = 175;

/// Whether classification scores weight the attention rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Criterion {
    #[default]
    WithCls,
    /// Column sums of the head-averaged map over every query.
    NoCls,
}

/// How a query's class-score vector collapses to one number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reduction {
    #[default]
    Max,
    Mean,
    Min,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PruneTarget {
    #[default]
    Keys,
    Queries,
}

macro_rules! display_kebab {
    ($t:ty { $($v:ident => $s:literal),* $(,)? }) => {
        impl std::fmt::Display for $t {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(match self { $(Self::$v => $s),* })
            }
        }

        impl std::str::FromStr for $t {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok(Self::$v),)*
                    other => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($t), " {:?}"), other
                    ))),
                }
            }
        }
    };
}

display_kebab!(Criterion { WithCls => "with-cls", NoCls => "no-cls" });
display_kebab!(Reduction { Max => "max", Mean => "mean", Min => "min" });
display_kebab!(PruneTarget { Keys => "keys", Queries => "queries" });

/// Pruning parameters: `total_prune` keys (or `query_prune` queries) are
/// removed in equal floor-divided steps after each of the first
/// `layers_pruned` layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PruneConfig {
    pub total_prune: usize,
    pub layers_pruned: usize,
    #[serde(default = "default_top_queries")]
    pub top_queries: usize,
    #[serde(default)]
    pub criterion: Criterion,
    #[serde(default)]
    pub reduction: Reduction,
    #[serde(default)]
    pub target: PruneTarget,
    #[serde(default)]
    pub query_prune: usize,
}

fn default_top_queries() -> usize {
    DEFAULT_TOP_QUERIES
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            total_prune: 0,
            layers_pruned: 1,
            top_queries: DEFAULT_TOP_QUERIES,
            criterion: Criterion::WithCls,
            reduction: Reduction::Max,
            target: PruneTarget::Keys,
            query_prune: 0,
        }
    }
}

impl PruneConfig {
    pub fn new(total_prune: usize, layers_pruned: usize, top_queries: usize) -> Self {
        Self {
            total_prune,
            layers_pruned,
            top_queries,
            ..Self::default()
        }
    }

    /// `k` clamped to `[1, num_queries]`.
    pub fn effective_top_queries(&self, num_queries: usize) -> usize {
        self.top_queries.clamp(1, num_queries.max(1))
    }

    pub fn validate(&self, decoder: &DecoderConfig) -> Result<()> {
        let n = self.layers_pruned;
        if n == 0 || n > decoder.layers {
            return Err(Error::Config(format!(
                "layers_pruned {n} must lie in [1, {}]",
                decoder.layers
            )));
        }
        match self.target {
            PruneTarget::Keys => {
                if n > decoder.num_keys.saturating_sub(1) {
                    return Err(Error::Config(format!(
                        "layers_pruned {n} exceeds num_keys - 1 = {}",
                        decoder.num_keys.saturating_sub(1)
                    )));
                }
                if self.total_prune >= decoder.num_keys {
                    return Err(Error::Config(format!(
                        "total_prune {} must be below num_keys {}",
                        self.total_prune, decoder.num_keys
                    )));
                }
            }
            PruneTarget::Queries => {
                if self.query_prune >= decoder.num_queries {
                    return Err(Error::Config(format!(
                        "query_prune {} must be below num_queries {}",
                        self.query_prune, decoder.num_queries
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn schedule(&self, decoder: &DecoderConfig) -> Result<PruneSchedule> {
        self.validate(decoder)?;
        match self.target {
            PruneTarget::Keys => make_schedule(
                decoder.num_keys,
                self.total_prune,
                self.layers_pruned,
                decoder.layers,
            ),
            PruneTarget::Queries => make_schedule(
                decoder.num_queries,
                self.query_prune,
                self.layers_pruned,
                decoder.layers,
            ),
        }
    }
}

/// Per-layer removal counts; entry `i` applies after layer `i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneSchedule {
    per_layer: Vec<usize>,
}

impl PruneSchedule {
    pub fn per_layer(&self) -> &[usize] {
        &self.per_layer
    }

    pub fn total(&self) -> usize {
        self.per_layer.iter().sum()
    }

    /// Count to remove after `layer`, zero past the last pruning layer.
    pub fn at(&self, layer: usize) -> usize {
        self.per_layer.get(layer).copied().unwrap_or(0)
    }

    /// Items consumed by each of `layers` layers when starting from `initial`.
    pub fn counts_per_layer(&self, initial: usize, layers: usize) -> Vec<usize> {
        let mut n = initial;
        (0..layers)
            .map(|l| {
                let here = n;
                n -= self.at(l);
                here
            })
            .collect()
    }
}

/// `n` equal steps of `⌊r/n⌋`. The total removed is `n·⌊r/n⌋`, which falls
/// short of `r` when `n` does not divide it.
pub fn make_schedule(
    num_items: usize,
    total: usize,
    layers_pruned: usize,
    layers: usize,
) -> Result<PruneSchedule> {
    if layers_pruned == 0 || layers_pruned > layers {
        return Err(Error::Config(format!(
            "layers_pruned {layers_pruned} must lie in [1, {layers}]"
        )));
    }
    let step = total / layers_pruned;
    let removed = step * layers_pruned;
    if removed >= num_items {
        return Err(Error::Schedule {
            removed,
            keys: num_items,
        });
    }
    Ok(PruneSchedule {
        per_layer: vec![step; layers_pruned],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floor_schedule_examples() {
        let s = make_schedule(24000, 21000, 2, 6).unwrap();
        assert_eq!(s.per_layer(), &[10500, 10500]);
        assert_eq!(&s.counts_per_layer(24000, 3), &[24000, 13500, 3000]);

        let s = make_schedule(100, 7, 3, 6).unwrap();
        assert_eq!(s.per_layer(), &[2, 2, 2]);
        assert_eq!(s.total(), 6);

        assert_eq!(make_schedule(6000, 3000, 1, 6).unwrap().per_layer(), &[3000]);

        assert_eq!(
            make_schedule(10, 10, 2, 6).unwrap_err(),
            Error::Schedule { removed: 10, keys: 10 }
        );
        assert!(make_schedule(10, 4, 7, 6).is_err());
    }

    #[test]
    fn streampetr_small_resolution_counts() {
        let s = make_schedule(4224, 2000, 2, 6).unwrap();
        assert_eq!(s.counts_per_layer(4224, 6), vec![4224, 3224, 2224, 2224, 2224, 2224]);
    }

    #[test]
    fn config_validation() {
        let d = DecoderConfig::streampetr();
        assert!(PruneConfig::new(21000, 2, 175).validate(&d).is_ok());
        assert!(PruneConfig::new(24000, 2, 175).validate(&d).is_err());
        assert!(PruneConfig::new(100, 0, 175).validate(&d).is_err());
        assert!(PruneConfig::new(100, 7, 175).validate(&d).is_err());
        assert_eq!(PruneConfig::new(1, 1, 5000).effective_top_queries(900), 900);
        assert_eq!(PruneConfig::new(1, 1, 0).effective_top_queries(900), 1);

        let q = PruneConfig {
            target: PruneTarget::Queries,
            query_prune: 900,
            ..PruneConfig::default()
        };
        assert!(q.validate(&d).is_err());
    }

    #[test]
    fn enum_text_forms_round_trip() {
        for c in [Criterion::WithCls, Criterion::NoCls] {
            assert_eq!(c.to_string().parse::<Criterion>().unwrap(), c);
        }
        for r in [Reduction::Max, Reduction::Mean, Reduction::Min] {
            assert_eq!(r.to_string().parse::<Reduction>().unwrap(), r);
        }
        assert!("median".parse::<Reduction>().is_err());
    }
}

//! Classification-guided key pruning.
//!
//! Keys are ranked by how much attention the most confident queries pay to
//! them; the lowest-ranked keys are dropped between decoder layers. The
//! ablation variants (no class weighting, mean/min reduction) and query
//! pruning share the same machinery.

mod config;
mod hook;
mod scores;

pub use config::{
    make_schedule, Criterion, PruneConfig, PruneSchedule, PruneTarget, Reduction,
    DEFAULT_TOP_QUERIES,
};
pub use hook::TgGbcPruner;
pub use scores::{
    head_average, importance_scores, importance_scores_no_cls, prune_keys, prune_queries,
    reduce_classification, surviving_keys, ImportanceScores, KeyIndexMap,
};

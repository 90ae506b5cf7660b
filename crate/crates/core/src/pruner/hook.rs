use super::{
    importance_scores, importance_scores_no_cls, reduce_classification, Criterion, KeyIndexMap,
    PruneConfig, PruneSchedule, PruneTarget,
};
use crate::decoder::{DecoderConfig, HookAction, HookContext, LayerHook};
use crate::error::Result;
use crate::numerics::{bottom_indices, OpCounter, Scalar};

/// Classification-guided pruning attached after the first `layers_pruned`
/// decoder layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TgGbcPruner {
    config: PruneConfig,
    schedule: PruneSchedule,
}

impl TgGbcPruner {
    pub fn new(config: PruneConfig, decoder: &DecoderConfig) -> Result<Self> {
        let schedule = config.schedule(decoder)?;
        Ok(Self { config, schedule })
    }

    pub fn config(&self) -> &PruneConfig {
        &self.config
    }

    pub fn schedule(&self) -> &PruneSchedule {
        &self.schedule
    }
}

impl<T: Scalar> LayerHook<T> for TgGbcPruner {
    fn after_layer(
        &self,
        ctx: HookContext<'_, T>,
        mut counter: Option<&mut OpCounter>,
    ) -> Result<HookAction<T>> {
        // scoring runs after every pruning layer, even for a zero step
        if ctx.layer >= self.config.layers_pruned {
            return Ok(HookAction::Keep);
        }
        let count = self.schedule.at(ctx.layer);
        let trace = ctx.trace;
        let mode = self.config.reduction;
        let (keys, queries) = match (self.config.target, self.config.criterion) {
            (PruneTarget::Keys, Criterion::WithCls) => {
                let reduced = reduce_classification(&trace.scores, mode, counter.as_deref_mut());
                let k = self.config.effective_top_queries(reduced.len());
                let origin = KeyIndexMap::identity(ctx.keys.rows());
                let scores = importance_scores(&trace.maps, &reduced, k, origin, counter)?;
                (bottom_indices(&scores.scores, count)?, Vec::new())
            }
            (PruneTarget::Keys, Criterion::NoCls) => {
                let origin = KeyIndexMap::identity(ctx.keys.rows());
                let scores = importance_scores_no_cls(&trace.maps, origin, counter)?;
                (bottom_indices(&scores.scores, count)?, Vec::new())
            }
            (PruneTarget::Queries, _) => {
                let reduced = reduce_classification(&trace.scores, mode, counter);
                (Vec::new(), bottom_indices(&reduced, count)?)
            }
        };
        Ok(HookAction::Prune { keys, queries })
    }
}

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use super::{multi_head_attention, ClassifierWeights, DecoderConfig, DecoderWeights, NormWeights};
use crate::error::{Error, Result};
use crate::numerics::{add_row_bias, argmax, layer_norm, matmul, sigmoid, Mat, OpCounter, Scalar};

const LN_EPS: f64 = 1e-5;

/// What one decoder layer exposes to a pruning hook.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace<T> {
    pub layer: usize,
    /// Queries leaving the layer, `N_q' × E`.
    pub queries: Mat<T>,
    /// Cross-attention maps, one `N_q' × N_k'` matrix per head. Emptied after
    /// the hook has run unless [`ForwardOptions::keep_maps`] is set.
    pub maps: Vec<Mat<T>>,
    /// Sigmoid classification scores, `N_q' × N_C`.
    pub scores: Mat<T>,
}

/// Highest-scoring class of one surviving query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Index into the initial query set.
    pub query: usize,
    pub class: usize,
    pub score: f64,
}

/// Read-only state handed to a [`LayerHook`] after a layer finishes.
#[derive(Debug, Clone, Copy)]
pub struct HookContext<'a, T> {
    pub layer: usize,
    pub trace: &'a LayerTrace<T>,
    /// Keys the layer consumed.
    pub keys: &'a Mat<T>,
    /// Original index of each current key.
    pub key_origin: &'a [usize],
}

/// Change a hook requests to the decoder state before the next layer.
#[derive(Debug, Clone, PartialEq)]
pub enum HookAction<T> {
    Keep,
    /// Drop the listed current positions.
    Prune { keys: Vec<usize>, queries: Vec<usize> },
    /// Swap in a new key set (token merging). `origin[i]` is the current
    /// position that row `i` descends from.
    Replace { keys: Mat<T>, origin: Vec<usize> },
}

/// Runs between decoder layers and may shrink the key or query set.
pub trait LayerHook<T: Scalar>: Sync {
    fn after_layer(
        &self,
        ctx: HookContext<'_, T>,
        counter: Option<&mut OpCounter>,
    ) -> Result<HookAction<T>>;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ForwardOptions {
    pub keep_maps: bool,
}

/// Per-layer operation counts for the key-dependent parts of a forward pass.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ForwardCounters {
    /// Cross-attention cost, one entry per layer.
    pub cross_attention: Vec<OpCounter>,
    /// Hook cost, one entry per layer.
    pub hooks: Vec<OpCounter>,
}

impl ForwardCounters {
    pub fn cross_attention_total(&self) -> OpCounter {
        self.cross_attention.iter().copied().sum()
    }

    pub fn hooks_total(&self) -> OpCounter {
        self.hooks.iter().copied().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderOutput<T> {
    pub traces: Vec<LayerTrace<T>>,
    pub predictions: Vec<Prediction>,
    /// Number of keys each layer consumed.
    pub key_counts: Vec<usize>,
    /// Keys left after the final hook.
    pub final_keys: Mat<T>,
    pub key_origin: Vec<usize>,
    /// Original index of each row of the final trace.
    pub query_origin: Vec<usize>,
}

impl<T: Scalar> DecoderOutput<T> {
    pub fn final_trace(&self) -> &LayerTrace<T> {
        self.traces.last().expect("decoder has at least one layer")
    }

    /// Final queries, one row per surviving query.
    pub fn final_queries(&self) -> &Mat<T> {
        &self.final_trace().queries
    }

    pub fn final_scores(&self) -> &Mat<T> {
        &self.final_trace().scores
    }

    /// Row of the final trace holding original query `query`, if it survived.
    pub fn position_of_query(&self, query: usize) -> Option<usize> {
        self.query_origin.iter().position(|&q| q == query)
    }
}

/// Sigmoid scores of the shared affine classification head.
pub fn classification_head<T: Scalar>(
    queries: &Mat<T>,
    head: &ClassifierWeights<T>,
) -> Result<Mat<T>> {
    let mut logits = matmul(queries, &head.weight, None)?;
    add_row_bias(&mut logits, &head.bias)?;
    Ok(logits.map(sigmoid))
}

fn norm<T: Scalar>(x: &Mat<T>, w: &NormWeights<T>) -> Result<Mat<T>> {
    layer_norm(x, &w.gain, &w.bias, T::of(LN_EPS))
}

/// A stack of post-norm decoder layers with immutable weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder<T> {
    config: DecoderConfig,
    weights: DecoderWeights<T>,
}

impl<T: Scalar> Decoder<T> {
    pub fn new(config: DecoderConfig, weights: DecoderWeights<T>) -> Result<Self> {
        config.validate()?;
        weights.check(&config)?;
        Ok(Self { config, weights })
    }

    pub fn seeded(config: DecoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Self::new(config, DecoderWeights::seeded(&config, seed))
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    pub fn weights(&self) -> &DecoderWeights<T> {
        &self.weights
    }

    /// Self-attention, cross-attention over `keys` (also used as values) and
    /// the feed-forward block, each followed by residual add and layer norm,
    /// then the classification head.
    pub fn layer_forward(
        &self,
        layer: usize,
        queries: &Mat<T>,
        keys: &Mat<T>,
        cross_counter: Option<&mut OpCounter>,
    ) -> Result<LayerTrace<T>> {
        let w = self.weights.layers.get(layer).ok_or_else(|| {
            Error::Config(format!("layer {layer} out of range for {} layers", self.config.layers))
        })?;
        let heads = self.config.heads;
        let scale = self.config.scale;

        let sa = multi_head_attention(queries, queries, queries, &w.self_attn, heads, scale, None)?;
        let x = norm(&queries.add(&sa.output)?, &w.norm_self)?;

        let ca = multi_head_attention(&x, keys, keys, &w.cross_attn, heads, scale, cross_counter)?;
        let x = norm(&x.add(&ca.output)?, &w.norm_cross)?;

        let mut hidden = matmul(&x, &w.ffn.w1, None)?;
        add_row_bias(&mut hidden, &w.ffn.b1)?;
        for v in hidden.as_mut_slice() {
            *v = v.max(T::zero());
        }
        let mut ffn = matmul(&hidden, &w.ffn.w2, None)?;
        add_row_bias(&mut ffn, &w.ffn.b2)?;
        let x = norm(&x.add(&ffn)?, &w.norm_ffn)?;

        let scores = classification_head(&x, &self.weights.classifier)?;
        Ok(LayerTrace {
            layer,
            queries: x,
            maps: ca.maps,
            scores,
        })
    }

    pub fn forward(
        &self,
        queries: &Mat<T>,
        keys: &Mat<T>,
        hook: Option<&dyn LayerHook<T>>,
    ) -> Result<DecoderOutput<T>> {
        self.forward_with(queries, keys, hook, ForwardOptions::default(), None)
    }

    /// Runs every layer in order. After each layer the hook (if any) may drop
    /// or replace keys and drop queries; later layers see the reduced sets.
    pub fn forward_with(
        &self,
        queries: &Mat<T>,
        keys: &Mat<T>,
        hook: Option<&dyn LayerHook<T>>,
        options: ForwardOptions,
        mut counters: Option<&mut ForwardCounters>,
    ) -> Result<DecoderOutput<T>> {
        let e = self.config.embed_dim;
        if queries.cols() != e || keys.cols() != e {
            return Err(Error::Shape {
                op: "decoder inputs",
                left: queries.shape(),
                right: keys.shape(),
            });
        }
        if keys.rows() == 0 || queries.rows() == 0 {
            return Err(Error::Empty("decoder needs at least one query and one key"));
        }

        let mut keys: Cow<'_, Mat<T>> = Cow::Borrowed(keys);
        let mut key_origin: Vec<usize> = (0..keys.rows()).collect();
        let mut query_origin: Vec<usize> = (0..queries.rows()).collect();
        let mut current: Cow<'_, Mat<T>> = Cow::Borrowed(queries);
        let mut trace_origin = query_origin.clone();
        let mut traces = Vec::with_capacity(self.config.layers);
        let mut key_counts = Vec::with_capacity(self.config.layers);

        for layer in 0..self.config.layers {
            key_counts.push(keys.rows());
            let mut cross = OpCounter::new();
            let mut trace = self.layer_forward(
                layer,
                &current,
                &keys,
                counters.is_some().then_some(&mut cross),
            )?;
            let mut hook_cost = OpCounter::new();
            let action = match hook {
                Some(h) => h.after_layer(
                    HookContext {
                        layer,
                        trace: &trace,
                        keys: &keys,
                        key_origin: &key_origin,
                    },
                    counters.is_some().then_some(&mut hook_cost),
                )?,
                None => HookAction::Keep,
            };
            if let Some(c) = counters.as_deref_mut() {
                c.cross_attention.push(cross);
                c.hooks.push(hook_cost);
            }

            trace_origin = query_origin.clone();
            let mut next_queries = trace.queries.clone();
            match action {
                HookAction::Keep => {}
                HookAction::Prune {
                    keys: drop_keys,
                    queries: drop_queries,
                } => {
                    let kept = survivors(keys.rows(), &drop_keys, "keys")?;
                    if kept.len() != keys.rows() {
                        keys = Cow::Owned(keys.select_rows(&kept));
                        key_origin = kept.iter().map(|&i| key_origin[i]).collect();
                    }
                    let kept = survivors(next_queries.rows(), &drop_queries, "queries")?;
                    if kept.len() != next_queries.rows() {
                        next_queries = next_queries.select_rows(&kept);
                        query_origin = kept.iter().map(|&i| query_origin[i]).collect();
                    }
                }
                HookAction::Replace {
                    keys: new_keys,
                    origin,
                } => {
                    if new_keys.rows() == 0 || new_keys.cols() != e || origin.len() != new_keys.rows()
                    {
                        return Err(Error::Hook(format!(
                            "replacement keys {:?} with {} origins are invalid",
                            new_keys.shape(),
                            origin.len()
                        )));
                    }
                    if let Some(&bad) = origin.iter().find(|&&o| o >= keys.rows()) {
                        return Err(Error::Hook(format!("origin {bad} out of range")));
                    }
                    key_origin = origin.iter().map(|&o| key_origin[o]).collect();
                    keys = Cow::Owned(new_keys);
                }
            }
            if !options.keep_maps {
                trace.maps = Vec::new();
            }
            traces.push(trace);
            current = Cow::Owned(next_queries);
        }

        let last = traces.last().expect("config guarantees layers >= 1");
        let predictions = last
            .scores
            .row_iter()
            .enumerate()
            .map(|(i, row)| {
                let class = argmax(row).expect("num_classes >= 1");
                Prediction {
                    query: trace_origin[i],
                    class,
                    score: row[class].to_f64().unwrap_or(f64::NAN),
                }
            })
            .collect();
        Ok(DecoderOutput {
            traces,
            predictions,
            key_counts,
            final_keys: keys.into_owned(),
            key_origin,
            query_origin: trace_origin,
        })
    }
}

/// Positions that survive dropping `drop` from `0..n`.
fn survivors(n: usize, drop: &[usize], what: &'static str) -> Result<Vec<usize>> {
    if drop.len() >= n && !drop.is_empty() {
        return Err(Error::Hook(format!(
            "cannot remove {} of {n} {what}; at least one must remain",
            drop.len()
        )));
    }
    let mut flag = vec![true; n];
    for &d in drop {
        match flag.get_mut(d) {
            Some(f) if *f => *f = false,
            Some(_) => return Err(Error::Hook(format!("{what} position {d} listed twice"))),
            None => return Err(Error::Hook(format!("{what} position {d} out of range ({n})"))),
        }
    }
    Ok((0..n).filter(|&i| flag[i]).collect())
}

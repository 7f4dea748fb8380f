//! Training objectives: negative log-likelihood, DPO and SimPO.
//!
//! ```text
//! L_NLL   = −(1/B) Σ_batch log π_θ(y|x)
//! r_DPO   = β [log π_θ(y|x) − log π_ref(y|x)]              (sum over tokens)
//! L_DPO   = −log σ(r_DPO(x, y_w) − r_DPO(x, y_l))
//! r_SimPO = (β/|y|) Σ_i log π_θ(y_i | x, y_<i)              (token mean)
//! L_SimPO = −log σ(r_SimPO(x, y_w) − r_SimPO(x, y_l) − γ)
//! ```
//!
//! Batch losses are means over pairs (or sequences for NLL).

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::kernels::log_sigmoid;
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::ifmodel::{
    encode_graph, loglik_graph, score_sequences, FeatureStore, FreezeMask, ModelDims, ModelParameters, ParamVars, ScoreSpan, StructureFeatures,
    TokenizedSequence,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreferenceHyperparams {
    /// Reward scale β > 0.
    pub beta: f64,
    /// Margin γ ≥ 0 (SimPO only).
    pub gamma: f64,
}

impl Default for PreferenceHyperparams {
    fn default() -> Self {
        Self { beta: 0.1, gamma: 0.1 }
    }
}

impl PreferenceHyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be non-negative, got {}", self.gamma)));
        }
        Ok(())
    }
}

/// A `(winner, loser)` pair of dataset records from the same assay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub winner: usize,
    pub loser: usize,
    pub assay_id: String,
    pub structure_id: String,
    /// `winner.score − loser.score`, always > 0.
    pub score_gap: f64,
}

/// Token streams of one pair, ready for scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct PairExample {
    pub winner: TokenizedSequence,
    pub loser: TokenizedSequence,
}

/// Frozen snapshot of the starting policy. Only shared read access exists.
#[derive(Debug, Clone)]
pub struct ReferenceModel(Arc<ModelParameters>);

impl ReferenceModel {
    pub fn snapshot(params: &ModelParameters) -> Self {
        Self(Arc::new(params.clone()))
    }

    pub fn params(&self) -> &ModelParameters {
        &self.0
    }
}

/// A graph with the policy's parameters bound, encoding each structure at
/// most once.
pub struct PolicyGraph<'a> {
    pub g: Graph,
    pv: ParamVars,
    heads: usize,
    feature_width: usize,
    features: &'a FeatureStore,
    encoded: HashMap<String, Var>,
    span: ScoreSpan,
}

impl<'a> PolicyGraph<'a> {
    /// `mask = None` records every parameter as a constant (no gradients).
    pub fn new(params: &ModelParameters, mask: Option<&FreezeMask>, features: &'a FeatureStore, span: ScoreSpan) -> Self {
        let mut g = Graph::new();
        let pv = params.bind(&mut g, mask);
        Self {
            g,
            pv,
            heads: params.dims.heads,
            feature_width: params.dims.feature_width(),
            features,
            encoded: HashMap::new(),
            span,
        }
    }

    /// Continues an existing graph whose parameter leaves are `pv`.
    pub fn with_vars(g: Graph, pv: ParamVars, dims: &ModelDims, features: &'a FeatureStore, span: ScoreSpan) -> Self {
        Self {
            g,
            pv,
            heads: dims.heads,
            feature_width: dims.feature_width(),
            features,
            encoded: HashMap::new(),
            span,
        }
    }

    pub fn param_vars(&self) -> &ParamVars {
        &self.pv
    }

    fn embeddings(&mut self, structure_id: &str) -> Result<Var> {
        if let Some(v) = self.encoded.get(structure_id) {
            return Ok(*v);
        }
        let f = self
            .features
            .get(structure_id)
            .ok_or_else(|| Error::Data(format!("no features for structure {structure_id}")))?;
        let e = encode_graph(&mut self.g, f, &self.pv, self.feature_width)?;
        self.encoded.insert(structure_id.to_string(), e);
        Ok(e)
    }

    /// `(sum_ll, mean_ll)` nodes for one sequence.
    pub fn loglik(&mut self, seq: &TokenizedSequence) -> Result<(Var, Var)> {
        let e = self.embeddings(&seq.structure_id)?;
        loglik_graph(&mut self.g, e, seq, &self.pv, self.heads, self.span)
    }

    /// Mean-reduced negative log-likelihood over `batch`.
    pub fn nll_loss(&mut self, batch: &[TokenizedSequence]) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::Usage("nll_loss needs a non-empty batch".into()));
        }
        let mut total: Option<Var> = None;
        for s in batch {
            let (sum, _) = self.loglik(s)?;
            total = Some(match total {
                None => sum,
                Some(t) => self.g.add(t, sum)?,
            });
        }
        self.g.scale(total.expect("non-empty"), -1.0 / batch.len() as f64)
    }

    pub fn simpo_reward(&mut self, seq: &TokenizedSequence, hp: &PreferenceHyperparams) -> Result<Var> {
        let (_, mean) = self.loglik(seq)?;
        self.g.scale(mean, hp.beta)
    }

    /// SimPO loss of one pair; also returns the two reward nodes.
    pub fn simpo_loss(&mut self, pair: &PairExample, hp: &PreferenceHyperparams) -> Result<(Var, Var, Var)> {
        let rw = self.simpo_reward(&pair.winner, hp)?;
        let rl = self.simpo_reward(&pair.loser, hp)?;
        let diff = self.g.sub(rw, rl)?;
        let z = self.g.add_const(diff, -hp.gamma)?;
        let ls = self.g.log_sigmoid(z)?;
        Ok((self.g.scale(ls, -1.0)?, rw, rl))
    }

    /// DPO loss of one pair given the reference's sum log-likelihoods of
    /// winner and loser.
    pub fn dpo_loss(
        &mut self,
        pair: &PairExample,
        reference_sums: (f64, f64),
        hp: &PreferenceHyperparams,
    ) -> Result<(Var, Var, Var)> {
        let (sw, _) = self.loglik(&pair.winner)?;
        let (sl, _) = self.loglik(&pair.loser)?;
        let rw = self.g.add_const(sw, -reference_sums.0)?;
        let rw = self.g.scale(rw, hp.beta)?;
        let rl = self.g.add_const(sl, -reference_sums.1)?;
        let rl = self.g.scale(rl, hp.beta)?;
        let diff = self.g.sub(rw, rl)?;
        let ls = self.g.log_sigmoid(diff)?;
        Ok((self.g.scale(ls, -1.0)?, rw, rl))
    }

    /// Mean of scalar loss nodes.
    pub fn mean_of(&mut self, losses: &[Var]) -> Result<Var> {
        let first = *losses
            .first()
            .ok_or_else(|| Error::Usage("empty loss batch".into()))?;
        let mut total = first;
        for &l in &losses[1..] {
            total = self.g.add(total, l)?;
        }
        self.g.scale(total, 1.0 / losses.len() as f64)
    }
}

fn features_for<'f>(features: &'f FeatureStore, seq: &TokenizedSequence) -> Result<&'f StructureFeatures> {
    features
        .get(&seq.structure_id)
        .ok_or_else(|| Error::Data(format!("no features for structure {}", seq.structure_id)))
}

/// `(sum_ll, mean_ll)` of one sequence as plain values.
pub fn loglik_value(
    params: &ModelParameters,
    features: &FeatureStore,
    seq: &TokenizedSequence,
    span: ScoreSpan,
) -> Result<(f64, f64)> {
    let f = features_for(features, seq)?;
    let r = score_sequences(f, std::slice::from_ref(seq), params, span)?[0];
    Ok((r.sum_ll, r.mean_ll))
}

pub fn nll_loss(
    params: &ModelParameters,
    features: &FeatureStore,
    batch: &[TokenizedSequence],
    span: ScoreSpan,
) -> Result<f64> {
    let mut pg = PolicyGraph::new(params, None, features, span);
    let l = pg.nll_loss(batch)?;
    Ok(pg.g.value(l).item())
}

pub fn dpo_reward(
    policy: &ModelParameters,
    reference: &ReferenceModel,
    features: &FeatureStore,
    seq: &TokenizedSequence,
    hp: &PreferenceHyperparams,
    span: ScoreSpan,
) -> Result<f64> {
    let (sp, _) = loglik_value(policy, features, seq, span)?;
    let (sr, _) = loglik_value(reference.params(), features, seq, span)?;
    Ok(hp.beta * (sp - sr))
}

/// `−log σ(r_w − r_l)`.
pub fn dpo_loss_from_rewards(reward_winner: f64, reward_loser: f64) -> f64 {
    -log_sigmoid(reward_winner - reward_loser)
}

pub fn dpo_loss(
    policy: &ModelParameters,
    reference: &ReferenceModel,
    features: &FeatureStore,
    pair: &PairExample,
    hp: &PreferenceHyperparams,
    span: ScoreSpan,
) -> Result<f64> {
    let rw = dpo_reward(policy, reference, features, &pair.winner, hp, span)?;
    let rl = dpo_reward(policy, reference, features, &pair.loser, hp, span)?;
    Ok(dpo_loss_from_rewards(rw, rl))
}

/// `β · mean_ll`; consults no reference model.
pub fn simpo_reward(
    policy: &ModelParameters,
    features: &FeatureStore,
    seq: &TokenizedSequence,
    hp: &PreferenceHyperparams,
    span: ScoreSpan,
) -> Result<f64> {
    let (_, mean) = loglik_value(policy, features, seq, span)?;
    Ok(hp.beta * mean)
}

/// `−log σ(r_w − r_l − γ)`.
pub fn simpo_loss_from_rewards(reward_winner: f64, reward_loser: f64, gamma: f64) -> f64 {
    -log_sigmoid(reward_winner - reward_loser - gamma)
}

pub fn simpo_loss(
    policy: &ModelParameters,
    features: &FeatureStore,
    pair: &PairExample,
    hp: &PreferenceHyperparams,
    span: ScoreSpan,
) -> Result<f64> {
    let rw = simpo_reward(policy, features, &pair.winner, hp, span)?;
    let rl = simpo_reward(policy, features, &pair.loser, hp, span)?;
    Ok(simpo_loss_from_rewards(rw, rl, hp.gamma))
}

/// Fraction of pairs whose winner gets the strictly higher SimPO reward;
/// ties count one half.
pub fn ranking_accuracy_from_rewards(rewards: &[(f64, f64)]) -> Result<f64> {
    if rewards.is_empty() {
        return Err(Error::Undefined("ranking accuracy of an empty pair list".into()));
    }
    let hits: f64 = rewards
        .iter()
        .map(|(w, l)| match w.partial_cmp(l) {
            Some(std::cmp::Ordering::Greater) => 1.0,
            Some(std::cmp::Ordering::Equal) => 0.5,
            _ => 0.0,
        })
        .sum();
    Ok(hits / rewards.len() as f64)
}

pub fn pair_ranking_accuracy(
    policy: &ModelParameters,
    features: &FeatureStore,
    pairs: &[PairExample],
    hp: &PreferenceHyperparams,
    span: ScoreSpan,
) -> Result<f64> {
    let mut rewards = Vec::with_capacity(pairs.len());
    for p in pairs {
        rewards.push((
            simpo_reward(policy, features, &p.winner, hp, span)?,
            simpo_reward(policy, features, &p.loser, hp, span)?,
        ));
    }
    ranking_accuracy_from_rewards(&rewards)
}

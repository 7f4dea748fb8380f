//! Mutable-pool construction and constrained variant sampling.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::StructureFeatures;
use super::model::teacher_forced_rows;
use super::params::ModelParameters;
use super::vocab::{TokenizedSequence, NUM_CANONICAL};
use crate::error::{Error, Result};

/// One admissible position: at least one canonical token beats the
/// wild-type residue under the teacher-forced row.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolEntry {
    pub position: usize,
    pub wildtype_token: usize,
    pub wildtype_logp: f64,
    /// `(token, log p)` for every strictly improving token.
    pub improving: Vec<(usize, f64)>,
}

impl PoolEntry {
    /// Best log-likelihood gain over the wild type.
    pub fn gain(&self) -> f64 {
        self.improving
            .iter()
            .map(|(_, lp)| lp - self.wildtype_logp)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MutablePool {
    pub entries: Vec<PoolEntry>,
}

impl MutablePool {
    pub fn positions(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.position).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// Number of distinct variants with `1..=max_subs` substitutions drawn
    /// from improving tokens (saturating).
    pub fn reachable(&self, max_subs: usize) -> u128 {
        // elementary symmetric polynomials of the per-position choice counts
        let mut e = vec![0u128; max_subs + 1];
        e[0] = 1;
        for entry in &self.entries {
            let c = entry.improving.len() as u128;
            for s in (1..=max_subs).rev() {
                e[s] = e[s].saturating_add(e[s - 1].saturating_mul(c));
            }
        }
        e[1..].iter().fold(0u128, |a, b| a.saturating_add(*b))
    }
}

/// Positions in `region_mask` where some canonical token other than the wild
/// type has strictly higher teacher-forced log-probability.
pub fn mutable_pool(
    features: &StructureFeatures,
    wildtype: &TokenizedSequence,
    region_mask: &[usize],
    params: &ModelParameters,
) -> Result<MutablePool> {
    if let Some(&p) = region_mask.iter().find(|&&p| p >= wildtype.length()) {
        return Err(Error::Sequence(format!(
            "region position {p} outside sequence of length {}",
            wildtype.length()
        )));
    }
    if region_mask.is_empty() {
        return Ok(MutablePool::default());
    }
    let rows = teacher_forced_rows(features, wildtype, params)?;
    let mut positions: Vec<usize> = region_mask.to_vec();
    positions.sort_unstable();
    positions.dedup();
    let mut entries = Vec::new();
    for p in positions {
        let row = rows.row(p);
        let wt = wildtype.tokens[p];
        let wt_lp = row[wt];
        let improving: Vec<(usize, f64)> = (0..NUM_CANONICAL)
            .filter(|&t| t != wt && row[t] > wt_lp)
            .map(|t| (t, row[t]))
            .collect();
        if !improving.is_empty() {
            entries.push(PoolEntry {
                position: p,
                wildtype_token: wt,
                wildtype_logp: wt_lp,
                improving,
            });
        }
    }
    Ok(MutablePool { entries })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationConfig {
    pub max_subs: usize,
    pub n: usize,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            max_subs: 5,
            n: 1500,
            temperature: 1.0,
            seed: 0,
        }
    }
}

/// A substitution `(position, from, to)`.
pub type Mutation = (usize, usize, usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Variant {
    pub tokens: Vec<usize>,
    /// Sorted by position.
    pub mutations: Vec<Mutation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedVariants {
    pub variants: Vec<Variant>,
    /// Fewer than `n` distinct variants were reachable (or found).
    pub exhausted: bool,
}

fn weighted_pick(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

fn apply(wildtype: &[usize], mutations: Vec<Mutation>) -> Variant {
    let mut tokens = wildtype.to_vec();
    for &(p, _, t) in &mutations {
        tokens[p] = t;
    }
    Variant { tokens, mutations }
}

fn enumerate_all(pool: &MutablePool, wildtype: &[usize], max_subs: usize) -> Vec<Variant> {
    fn rec(
        pool: &MutablePool,
        start: usize,
        max_subs: usize,
        current: &mut Vec<Mutation>,
        out: &mut Vec<Vec<Mutation>>,
    ) {
        for i in start..pool.entries.len() {
            let e = &pool.entries[i];
            for &(t, _) in &e.improving {
                current.push((e.position, e.wildtype_token, t));
                out.push(current.clone());
                if current.len() < max_subs {
                    rec(pool, i + 1, max_subs, current, out);
                }
                current.pop();
            }
        }
    }
    let mut all = Vec::new();
    rec(pool, 0, max_subs, &mut Vec::new(), &mut all);
    all.into_iter().map(|m| apply(wildtype, m)).collect()
}

/// Samples up to `n` distinct variants of `wildtype`.
///
/// Each draw picks a substitution count uniformly in `1..=max_subs`, then that
/// many pool positions without replacement with probability proportional to
/// their best log-likelihood gain, then a replacement token per position from
/// the improving tokens with probability `∝ exp(log p / temperature)`.
pub fn generate_variants(wildtype: &TokenizedSequence, pool: &MutablePool, cfg: &GenerationConfig) -> Result<GeneratedVariants> {
    if cfg.max_subs == 0 || cfg.n == 0 {
        return Err(Error::Config("max_subs and n must be at least 1".into()));
    }
    if !(cfg.temperature > 0.0 && cfg.temperature.is_finite()) {
        return Err(Error::Config("temperature must be positive".into()));
    }
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    if pool.reachable(cfg.max_subs) <= cfg.n as u128 {
        let variants = enumerate_all(pool, &wildtype.tokens, cfg.max_subs);
        return Ok(GeneratedVariants {
            exhausted: variants.len() < cfg.n,
            variants,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gains: Vec<f64> = pool.entries.iter().map(PoolEntry::gain).collect();
    let max_s = cfg.max_subs.min(pool.len());
    let mut seen: HashSet<Vec<Mutation>> = HashSet::new();
    let mut variants = Vec::with_capacity(cfg.n);
    let max_attempts = 100 * cfg.n + 1000;
    let mut attempts = 0;
    while variants.len() < cfg.n && attempts < max_attempts {
        attempts += 1;
        let s = rng.random_range(1..=max_s);
        let mut weights = gains.clone();
        let mut chosen = Vec::with_capacity(s);
        for _ in 0..s {
            let i = weighted_pick(&mut rng, &weights);
            weights[i] = 0.0;
            chosen.push(i);
        }
        chosen.sort_unstable();
        let mutations: Vec<Mutation> = chosen
            .into_iter()
            .map(|i| {
                let e = &pool.entries[i];
                let top = e.improving.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
                let w: Vec<f64> = e
                    .improving
                    .iter()
                    .map(|(_, lp)| ((lp - top) / cfg.temperature).exp())
                    .collect();
                let t = e.improving[weighted_pick(&mut rng, &w)].0;
                (e.position, e.wildtype_token, t)
            })
            .collect();
        if seen.insert(mutations.clone()) {
            variants.push(apply(&wildtype.tokens, mutations));
        }
    }
    Ok(GeneratedVariants {
        exhausted: variants.len() < cfg.n,
        variants,
    })
}

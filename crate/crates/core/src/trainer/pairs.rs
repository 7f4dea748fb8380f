//! Within-assay preference pair sampling.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::preference::PreferencePair;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairConfig {
    /// Minimum score gap δ_min between winner and loser.
    pub min_gap: f64,
    /// Optional upper bound on the gap, for fixed-small-gap experiments.
    pub max_gap: Option<f64>,
    /// Cap on pairs drawn per assay.
    pub max_pairs: usize,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self {
            min_gap: 0.2,
            max_gap: None,
            max_pairs: 50_000,
        }
    }
}

impl PairConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_gap >= 0.0) || self.max_gap.is_some_and(|m| !(m >= self.min_gap)) {
            return Err(Error::Config(format!("invalid pair gap bounds {self:?}")));
        }
        Ok(())
    }

    /// Whether a winner/loser score difference qualifies.
    pub fn admits(&self, gap: f64) -> bool {
        gap > 0.0 && gap >= self.min_gap && self.max_gap.is_none_or(|m| gap <= m)
    }
}

/// Draws up to `max_pairs` admissible pairs per (assay, structure) group,
/// uniformly without replacement, from the records in `indices`.
///
/// Output order: groups in dataset assay order, then ascending position in
/// the implicit enumeration (loser ascending by score, winner ascending).
pub fn sample_pairs(ds: &Dataset, indices: &[usize], cfg: &PairConfig, seed: u64) -> Result<Vec<PreferencePair>> {
    cfg.validate()?;
    let mut groups: BTreeMap<(usize, &str), Vec<usize>> = BTreeMap::new();
    let assay_pos: BTreeMap<&str, usize> = ds.assays().keys().enumerate().map(|(i, a)| (a.as_str(), i)).collect();
    for &i in indices {
        let r = ds.record(i);
        groups
            .entry((assay_pos[r.assay_id.as_str()], r.structure_id.as_str()))
            .or_default()
            .push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut empty = Vec::new();
    for (_, mut members) in groups {
        members.sort_by(|&a, &b| {
            ds.record(a)
                .binding_score
                .total_cmp(&ds.record(b).binding_score)
                .then(a.cmp(&b))
        });
        let s: Vec<f64> = members.iter().map(|&i| ds.record(i).binding_score).collect();
        // winners of loser j occupy the contiguous sorted range lo[j]..hi[j]
        let mut ranges = Vec::with_capacity(s.len());
        let mut total = 0usize;
        for j in 0..s.len() {
            let lo = s.partition_point(|&x| {
                let gap = x - s[j];
                gap <= 0.0 || gap < cfg.min_gap
            });
            let hi = match cfg.max_gap {
                Some(m) => s.partition_point(|&x| x - s[j] <= m),
                None => s.len(),
            };
            let count = hi.saturating_sub(lo);
            ranges.push((lo, total));
            total += count;
        }
        let assay = &ds.record(members[0]).assay_id;
        if total == 0 {
            empty.push(assay.clone());
            continue;
        }
        let mut picks: Vec<usize> = if total <= cfg.max_pairs {
            (0..total).collect()
        } else {
            rand::seq::index::sample(&mut rng, total, cfg.max_pairs).into_vec()
        };
        picks.sort_unstable();
        for p in picks {
            // the last loser whose offset is ≤ p owns p; empty ranges that
            // share its offset precede it
            let j = ranges.partition_point(|&(_, off)| off <= p) - 1;
            let (lo, off) = ranges[j];
            let w = lo + (p - off);
            let (wi, li) = (members[w], members[j]);
            let (rw, rl) = (ds.record(wi), ds.record(li));
            out.push(PreferencePair {
                winner: wi,
                loser: li,
                assay_id: rw.assay_id.clone(),
                structure_id: rw.structure_id.clone(),
                score_gap: rw.binding_score - rl.binding_score,
            });
        }
    }
    if out.is_empty() {
        empty.dedup();
        return Err(Error::NoPairs(empty));
    }
    Ok(out)
}

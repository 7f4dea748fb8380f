//! Stage-1 quantile prefilter and Pareto-front extraction.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    HigherBetter,
    LowerBetter,
}

impl Orientation {
    /// Maps a raw value so that larger is always better. Negation is exact.
    pub fn normalize(self, v: f64) -> f64 {
        match self {
            Orientation::HigherBetter => v,
            Orientation::LowerBetter => -v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Stage1,
    Stage2,
    ReportOnly,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricSpec {
    pub name: String,
    pub orientation: Orientation,
    pub stage: Stage,
}

impl MetricSpec {
    pub fn new(name: &str, orientation: Orientation, stage: Stage) -> Self {
        Self {
            name: name.to_string(),
            orientation,
            stage,
        }
    }
}

/// Two prefilter channels, three structure criteria, two report-only
/// channels.
pub fn default_specs() -> Vec<MetricSpec> {
    use Orientation::*;
    use Stage::*;
    vec![
        MetricSpec::new("seq_pll", HigherBetter, Stage1),
        MetricSpec::new("ddg", LowerBetter, Stage1),
        MetricSpec::new("plddt", HigherBetter, Stage2),
        MetricSpec::new("delta_sasa", LowerBetter, Stage2),
        MetricSpec::new("mpnn_ll", HigherBetter, Stage2),
        MetricSpec::new("ptm", HigherBetter, ReportOnly),
        MetricSpec::new("iplddt", HigherBetter, ReportOnly),
    ]
}

pub fn validate_specs(specs: &[MetricSpec]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for s in specs {
        if !seen.insert(s.name.as_str()) {
            return Err(Error::Config(format!("metric {} listed twice", s.name)));
        }
        if s.name == "ddg" && s.orientation != Orientation::LowerBetter {
            return Err(Error::Config("ddg must be lower_better".into()));
        }
    }
    let stage1 = specs.iter().filter(|s| s.stage == Stage::Stage1).count();
    if stage1 != 2 {
        return Err(Error::Config(format!("exactly two stage-1 metrics required, found {stage1}")));
    }
    Ok(())
}

/// Named metric values of one candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub variant_id: String,
    pub values: BTreeMap<String, f64>,
    /// Scorer id per metric.
    pub provenance: BTreeMap<String, String>,
}

impl CandidateScore {
    pub fn new(variant_id: impl Into<String>) -> Self {
        Self {
            variant_id: variant_id.into(),
            values: BTreeMap::new(),
            provenance: BTreeMap::new(),
        }
    }

    fn get(&self, metric: &str) -> Result<f64> {
        self.values
            .get(metric)
            .copied()
            .ok_or_else(|| Error::Data(format!("candidate {} lacks metric {metric}", self.variant_id)))
    }
}

/// Per-channel cut size `⌈q·n⌉` (nearest rank).
pub fn quantile_cut(quantile: f64, n: usize) -> usize {
    // tolerate representation error such as 0.2 * 10 = 2.0000000000000004
    ((quantile * n as f64) - 1e-9).ceil().max(1.0) as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Result {
    /// Survivor indices into the input, ascending.
    pub survivors: Vec<usize>,
    /// Channels on which every candidate tied.
    pub all_tied: Vec<String>,
}

/// Keeps candidates ranked within the top `⌈q·n⌉` on both stage-1
/// channels; candidates tied with the boundary value are kept.
pub fn stage1_filter(cands: &[CandidateScore], specs: &[MetricSpec], quantile: f64) -> Result<Stage1Result> {
    if cands.is_empty() {
        return Err(Error::Data("stage-1 filter received no candidates".into()));
    }
    if !(quantile > 0.0 && quantile <= 1.0) {
        return Err(Error::Config(format!("quantile must be in (0, 1], got {quantile}")));
    }
    let channels: Vec<&MetricSpec> = specs.iter().filter(|s| s.stage == Stage::Stage1).collect();
    if channels.len() != 2 {
        return Err(Error::Config("exactly two stage-1 metrics required".into()));
    }
    let cut = quantile_cut(quantile, cands.len());
    let mut keep = vec![true; cands.len()];
    let mut all_tied = Vec::new();
    for spec in channels {
        let vals: Vec<f64> = cands
            .iter()
            .map(|c| c.get(&spec.name).map(|v| spec.orientation.normalize(v)))
            .collect::<Result<_>>()?;
        let mut sorted = vals.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        if sorted.first() == sorted.last() {
            all_tied.push(spec.name.clone());
        }
        let boundary = sorted[cut - 1];
        for (k, v) in keep.iter_mut().zip(&vals) {
            *k &= *v >= boundary;
        }
    }
    Ok(Stage1Result {
        survivors: keep.iter().enumerate().filter(|(_, &k)| k).map(|(i, _)| i).collect(),
        all_tied,
    })
}

/// Whether normalized vector `a` dominates `b`: `a ≥ b` everywhere and
/// `a > b` somewhere.
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    let mut strict = false;
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return false;
        }
        if x > y {
            strict = true;
        }
    }
    strict
}

/// Non-dominated candidates over `metrics`, ordered by variant id. Exact
/// duplicates are all retained.
pub fn pareto_front(cands: &[CandidateScore], specs: &[MetricSpec], metrics: &[String]) -> Result<Vec<usize>> {
    let orient: Vec<Orientation> = metrics
        .iter()
        .map(|m| {
            specs
                .iter()
                .find(|s| &s.name == m)
                .map(|s| s.orientation)
                .ok_or_else(|| Error::Config(format!("no spec for metric {m}")))
        })
        .collect::<Result<_>>()?;
    let vecs: Vec<Vec<f64>> = cands
        .iter()
        .map(|c| {
            metrics
                .iter()
                .zip(&orient)
                .map(|(m, o)| c.get(m).map(|v| o.normalize(v)))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    // a dominator is lexicographically greater, so it is visited first
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| {
        vecs[b]
            .iter()
            .zip(&vecs[a])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut front: Vec<usize> = Vec::new();
    for i in order {
        if !front.iter().any(|&f| dominates(&vecs[f], &vecs[i])) {
            front.push(i);
        }
    }
    front.sort_by(|&a, &b| cands[a].variant_id.cmp(&cands[b].variant_id).then(a.cmp(&b)));
    Ok(front)
}

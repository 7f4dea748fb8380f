//! Two-stage screening: prefilter on the stage-1 channels, score survivors
//! on the stage-2 channels, then keep the Pareto-optimal panel.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::filter::{pareto_front, stage1_filter, validate_specs, CandidateScore, MetricSpec, Stage};
use super::scorer::{Candidate, ScorerRegistry, ScoringContext};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub specs: Vec<MetricSpec>,
    pub quantile: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            specs: super::filter::default_specs(),
            quantile: 0.2,
        }
    }
}

impl PipelineConfig {
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    fn metrics(&self, stage: Stage) -> Vec<String> {
        self.specs.iter().filter(|s| s.stage == stage).map(|s| s.name.clone()).collect()
    }

    /// Metrics that define the frontier: stage 1 plus stage 2.
    pub fn frontier_metrics(&self) -> Vec<String> {
        let mut m = self.metrics(Stage::Stage1);
        m.extend(self.metrics(Stage::Stage2));
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StageCounts {
    pub input: usize,
    pub stage1_scored: usize,
    pub stage1_survivors: usize,
    pub stage2_scored: usize,
    pub panel: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dropped {
    pub variant_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineResult {
    /// Every candidate that was scored, with whatever metrics it received.
    pub table: Vec<CandidateScore>,
    pub stage1_survivors: Vec<String>,
    /// Pareto-optimal survivors, ordered by variant id; report-only metrics
    /// are attached.
    pub panel: Vec<CandidateScore>,
    pub counts: StageCounts,
    pub dropped: Vec<Dropped>,
    pub flags: Vec<String>,
    pub config_fingerprint: String,
}

/// Runs `metrics` on `cands`, adding values to `table` (aligned with
/// `cands`). Returns the positions that failed any metric with reasons.
fn score_stage(
    cands: &[Candidate],
    table: &mut [CandidateScore],
    metrics: &[String],
    registry: &ScorerRegistry,
    ctx: &ScoringContext,
) -> Result<BTreeMap<usize, String>> {
    let mut failed = BTreeMap::new();
    for m in metrics {
        let scorer = registry.get(m).ok_or_else(|| Error::Scorer {
            scorer: m.clone(),
            msg: "no scorer registered for this metric".into(),
        })?;
        let out = scorer.score(cands, ctx);
        if out.len() != cands.len() {
            return Err(Error::Scorer {
                scorer: scorer.id(),
                msg: format!("returned {} results for {} candidates", out.len(), cands.len()),
            });
        }
        for (i, o) in out.into_iter().enumerate() {
            match o {
                Ok(v) if v.is_finite() => {
                    table[i].values.insert(m.clone(), v);
                    table[i].provenance.insert(m.clone(), scorer.id());
                }
                Ok(v) => {
                    failed.entry(i).or_insert_with(|| format!("{m}: non-finite value {v}"));
                }
                Err(reason) => {
                    failed.entry(i).or_insert_with(|| format!("{m}: {reason}"));
                }
            }
        }
    }
    Ok(failed)
}

pub fn run_pipeline(
    candidates: &[Candidate],
    ctx: &ScoringContext,
    registry: &ScorerRegistry,
    cfg: &PipelineConfig,
) -> Result<PipelineResult> {
    validate_specs(&cfg.specs)?;
    let mut ids = std::collections::HashSet::new();
    if let Some(c) = candidates.iter().find(|c| !ids.insert(c.variant_id.as_str())) {
        return Err(Error::Data(format!("duplicate candidate id {}", c.variant_id)));
    }
    let mut counts = StageCounts {
        input: candidates.len(),
        ..StageCounts::default()
    };
    let mut dropped = Vec::new();
    let mut drop = |cands: &[Candidate], failed: &BTreeMap<usize, String>| {
        for (&i, reason) in failed {
            log::warn!("dropping {}: {reason}", cands[i].variant_id);
            dropped.push(Dropped {
                variant_id: cands[i].variant_id.clone(),
                reason: reason.clone(),
            });
        }
    };

    let mut table: Vec<CandidateScore> = candidates.iter().map(|c| CandidateScore::new(&c.variant_id)).collect();
    let failed1 = score_stage(candidates, &mut table, &cfg.metrics(Stage::Stage1), registry, ctx)?;
    counts.stage1_scored = candidates.len();
    drop(candidates, &failed1);
    let ok1: Vec<usize> = (0..candidates.len()).filter(|i| !failed1.contains_key(i)).collect();
    let mut flags = Vec::new();
    let survivors: Vec<usize> = if ok1.is_empty() {
        Vec::new()
    } else {
        let pool: Vec<CandidateScore> = ok1.iter().map(|&i| table[i].clone()).collect();
        let r = stage1_filter(&pool, &cfg.specs, cfg.quantile)?;
        flags.extend(r.all_tied.iter().map(|m| format!("all_tied:{m}")));
        r.survivors.into_iter().map(|k| ok1[k]).collect()
    };
    counts.stage1_survivors = survivors.len();

    let surv_cands: Vec<Candidate> = survivors.iter().map(|&i| candidates[i].clone()).collect();
    let mut surv_table: Vec<CandidateScore> = survivors.iter().map(|&i| table[i].clone()).collect();
    let mut later = cfg.metrics(Stage::Stage2);
    later.extend(cfg.metrics(Stage::ReportOnly));
    let failed2 = if surv_cands.is_empty() {
        BTreeMap::new()
    } else {
        score_stage(&surv_cands, &mut surv_table, &later, registry, ctx)?
    };
    counts.stage2_scored = surv_cands.len();
    drop(&surv_cands, &failed2);
    for (k, &i) in survivors.iter().enumerate() {
        table[i] = surv_table[k].clone();
    }
    let finalists: Vec<CandidateScore> = (0..surv_table.len())
        .filter(|k| !failed2.contains_key(k))
        .map(|k| surv_table[k].clone())
        .collect();
    let panel: Vec<CandidateScore> = pareto_front(&finalists, &cfg.specs, &cfg.frontier_metrics())?
        .into_iter()
        .map(|k| finalists[k].clone())
        .collect();
    counts.panel = panel.len();
    Ok(PipelineResult {
        stage1_survivors: survivors.iter().map(|&i| candidates[i].variant_id.clone()).collect(),
        table,
        panel,
        counts,
        dropped,
        flags,
        config_fingerprint: cfg.fingerprint(),
    })
}

impl PipelineResult {
    /// `{config_fingerprint, counts, panel: [{variant_id, metrics…}], dropped, flags}`.
    pub fn panel_json(&self) -> Result<String> {
        let panel: Vec<serde_json::Value> = self
            .panel
            .iter()
            .map(|c| {
                let mut obj = serde_json::Map::new();
                obj.insert("variant_id".into(), c.variant_id.clone().into());
                for (k, v) in &c.values {
                    obj.insert(k.clone(), (*v).into());
                }
                serde_json::Value::Object(obj)
            })
            .collect();
        let doc = serde_json::json!({
            "config_fingerprint": self.config_fingerprint,
            "counts": self.counts,
            "panel": panel,
            "dropped": self.dropped,
            "flags": self.flags,
        });
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    /// Long-format `(variant_id, metric, value, scorer)` table of every score.
    pub fn write_scores_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["variant_id", "metric", "value", "scorer"])?;
        for c in &self.table {
            for (m, v) in &c.values {
                w.write_record([c.variant_id.as_str(), m, &v.to_string(), &c.provenance[m]])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let p = dir.join("panel.json");
        std::fs::write(&p, self.panel_json()?).map_err(|e| Error::io(&p, e))?;
        let p = dir.join("scores.csv");
        let f = std::fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
        self.write_scores_csv(std::io::BufWriter::new(f))
    }
}

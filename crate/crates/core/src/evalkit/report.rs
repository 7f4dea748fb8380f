//! Per-assay evaluation report and plot-ready curve files.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{precision_at_k, spearman, PrCurve, RankedRow, RankedTable, RocCurve};
use crate::dataio::{Dataset, ScoreType};
use crate::error::{Error, Result};
use crate::ifmodel::{score_sequences, FeatureStore, ModelParameters, ScoreSpan, SequenceLogLik, TokenizedSequence};

/// Which log-likelihood reduction is used as the model score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelScore {
    #[default]
    MeanLl,
    SumLl,
}

/// Row label of the aggregate line.
pub const AGGREGATE_ID: &str = "mean";

/// Header of the report CSV.
pub const REPORT_HEADER: [&str; 5] = ["assay_id", "n", "spearman", "precision_at_10", "flags"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub assay_id: String,
    pub n: usize,
    pub spearman: Option<f64>,
    pub precision_at_10: Option<f64>,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssayReport {
    pub rows: Vec<ReportRow>,
    /// Unweighted mean over assays with a defined value.
    pub aggregate: ReportRow,
}

/// Scores `indices` of `ds` under `params`, encoding each structure once.
/// Output is aligned with `indices`.
pub fn score_records(
    params: &ModelParameters,
    features: &FeatureStore,
    ds: &Dataset,
    indices: &[usize],
    span: ScoreSpan,
    kind: ModelScore,
) -> Result<Vec<f64>> {
    Ok(record_logliks(params, features, ds, indices, span)?
        .into_iter()
        .map(|s| match kind {
            ModelScore::MeanLl => s.mean_ll,
            ModelScore::SumLl => s.sum_ll,
        })
        .collect())
}

/// Both log-likelihood reductions for `indices`, aligned with `indices`.
pub fn record_logliks(
    params: &ModelParameters,
    features: &FeatureStore,
    ds: &Dataset,
    indices: &[usize],
    span: ScoreSpan,
) -> Result<Vec<SequenceLogLik>> {
    let mut by_structure: BTreeMap<&str, Vec<(usize, TokenizedSequence)>> = BTreeMap::new();
    for (slot, &i) in indices.iter().enumerate() {
        let r = ds.record(i);
        by_structure.entry(r.structure_id.as_str()).or_default().push((slot, r.tokens()?));
    }
    let mut out = vec![
        SequenceLogLik {
            sum_ll: 0.0,
            mean_ll: 0.0
        };
        indices.len()
    ];
    for (sid, items) in by_structure {
        let f = features
            .get(sid)
            .ok_or_else(|| Error::Data(format!("no features for structure {sid}")))?;
        let seqs: Vec<TokenizedSequence> = items.iter().map(|(_, s)| s.clone()).collect();
        let scores = score_sequences(f, &seqs, params, span)?;
        for ((slot, _), s) in items.iter().zip(scores) {
            out[*slot] = s;
        }
    }
    Ok(out)
}

/// Groups `(record index, model score)` pairs into per-assay tables in the
/// dataset's assay order; the wild-type pKd comes from each assay's `WT` row.
pub fn ranked_tables(ds: &Dataset, indices: &[usize], model_scores: &[f64]) -> Result<Vec<RankedTable>> {
    if indices.len() != model_scores.len() {
        return Err(Error::Dimension {
            op: "ranked_tables",
            left: vec![indices.len()],
            right: vec![model_scores.len()],
        });
    }
    let mut grouped: BTreeMap<&str, Vec<RankedRow>> = BTreeMap::new();
    for (&i, &m) in indices.iter().zip(model_scores) {
        let r = ds.record(i);
        grouped.entry(r.assay_id.as_str()).or_default().push(RankedRow {
            variant_id: r.variant_id.clone(),
            model_score: m,
            binding_score: r.binding_score,
            pkd_wildtype: ds.wildtype_score(&r.assay_id),
        });
    }
    let mut out = Vec::new();
    for (assay, idx) in ds.assays() {
        let Some(rows) = grouped.remove(assay.as_str()) else {
            continue;
        };
        out.push(RankedTable {
            assay_id: assay.clone(),
            score_type: ds.record(idx[0]).score_type,
            rows,
        });
    }
    Ok(out)
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// One row per table plus the unweighted-mean aggregate row.
pub fn per_assay_report(tables: &[RankedTable]) -> Result<AssayReport> {
    let mut rows = Vec::with_capacity(tables.len());
    for t in tables {
        t.validate()?;
        let mut flags = Vec::new();
        let n = t.rows.len();
        let (spearman_value, precision) = if n < 2 {
            flags.push("too_few_variants".to_string());
            (None, None)
        } else {
            let model: Vec<f64> = t.rows.iter().map(|r| r.model_score).collect();
            let binding: Vec<f64> = t.rows.iter().map(|r| r.binding_score).collect();
            let rho = match spearman(&model, &binding) {
                Ok(v) => Some(v),
                Err(Error::Undefined(_)) => {
                    flags.push("spearman_undefined".to_string());
                    None
                }
                Err(e) => return Err(e),
            };
            let p = if t.score_type != ScoreType::NegLogKd {
                flags.push("precision_excluded_enrichment".to_string());
                None
            } else if t.rows.iter().any(|r| r.pkd_wildtype.is_none()) {
                flags.push("no_wildtype".to_string());
                None
            } else {
                let p = precision_at_k(t, 10, 10.0)?;
                if p.short {
                    flags.push("fewer_than_10".to_string());
                }
                Some(p.value)
            };
            (rho, p)
        };
        rows.push(ReportRow {
            assay_id: t.assay_id.clone(),
            n,
            spearman: spearman_value,
            precision_at_10: precision,
            flags,
        });
    }
    let aggregate = ReportRow {
        assay_id: AGGREGATE_ID.to_string(),
        n: rows.iter().map(|r| r.n).sum(),
        spearman: mean_defined(rows.iter().map(|r| r.spearman)),
        precision_at_10: mean_defined(rows.iter().map(|r| r.precision_at_10)),
        flags: Vec::new(),
    };
    Ok(AssayReport { rows, aggregate })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl AssayReport {
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(REPORT_HEADER)?;
        for r in self.rows.iter().chain(std::iter::once(&self.aggregate)) {
            w.write_record([
                r.assay_id.clone(),
                r.n.to_string(),
                opt(r.spearman),
                opt(r.precision_at_10),
                r.flags.join(";"),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    /// JSON array of row objects, aggregate last.
    pub fn to_json(&self) -> Result<String> {
        let all: Vec<&ReportRow> = self.rows.iter().chain(std::iter::once(&self.aggregate)).collect();
        Ok(serde_json::to_string_pretty(&all)?)
    }

    pub fn save(&self, csv_path: impl AsRef<Path>, json_path: impl AsRef<Path>) -> Result<()> {
        let p = csv_path.as_ref();
        let f = std::fs::File::create(p).map_err(|e| Error::io(p, e))?;
        self.write_csv(std::io::BufWriter::new(f))?;
        let p = json_path.as_ref();
        std::fs::write(p, self.to_json()?).map_err(|e| Error::io(p, e))
    }
}

/// `threshold,tpr,fpr` rows.
pub fn write_roc_csv<W: std::io::Write>(c: &RocCurve, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["threshold", "tpr", "fpr"])?;
    for i in 0..c.thresholds.len() {
        w.write_record([c.thresholds[i].to_string(), c.tpr[i].to_string(), c.fpr[i].to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// `recall,precision` rows.
pub fn write_pr_csv<W: std::io::Write>(c: &PrCurve, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["recall", "precision"])?;
    for i in 0..c.recall.len() {
        w.write_record([c.recall[i].to_string(), c.precision[i].to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(id: &str, pairs: &[(f64, f64)]) -> RankedTable {
        RankedTable {
            assay_id: id.into(),
            score_type: ScoreType::NegLogKd,
            rows: pairs
                .iter()
                .enumerate()
                .map(|(i, &(m, b))| RankedRow {
                    variant_id: format!("v{i}"),
                    model_score: m,
                    binding_score: b,
                    pkd_wildtype: Some(8.0),
                })
                .collect(),
        }
    }

    #[test]
    fn aggregate_is_unweighted_mean() {
        let a = table("a", &[(1.0, 1.0), (2.0, 2.0), (3.0, 3.0)]);
        let b = table("b", &[(1.0, 2.0), (2.0, 1.0), (3.0, 1.0), (4.0, 2.0)]);
        let r = per_assay_report(&[a.clone(), b]).unwrap();
        assert_eq!(r.rows[0].spearman, Some(1.0));
        assert!(r.rows[1].spearman.unwrap().abs() < 1e-15);
        assert!((r.aggregate.spearman.unwrap() - 0.5).abs() < 1e-15);
        let single = per_assay_report(&[a]).unwrap();
        assert_eq!(single.aggregate.spearman, single.rows[0].spearman);
    }

    #[test]
    fn tiny_assay_is_flagged_with_null_metrics() {
        let r = per_assay_report(&[table("a", &[(1.0, 1.0)])]).unwrap();
        assert_eq!(r.rows[0].spearman, None);
        assert_eq!(r.rows[0].flags, vec!["too_few_variants".to_string()]);
        assert_eq!(r.aggregate.spearman, None);
    }

    #[test]
    fn csv_has_exact_header() {
        let r = per_assay_report(&[table("a", &[(1.0, 1.0), (2.0, 2.0)])]).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("assay_id,n,spearman,precision_at_10,flags\n"));
        assert!(text.contains("\nmean,2,"));
    }
}

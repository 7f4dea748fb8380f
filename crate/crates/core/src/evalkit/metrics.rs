//! Scalar metrics: rank correlation, fold change, precision@k, ROC and PR.

use serde::{Deserialize, Serialize};

use crate::dataio::ScoreType;
use crate::error::{Error, Result};

/// Gas constant in kcal/(mol·K).
pub const GAS_CONSTANT_KCAL: f64 = 1.9872e-3;

/// Fractional ranks (1-based); tied values share the mean of their positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        // positions i..=j (0-based) share rank mean((i+1)..=(j+1))
        let r = (i + j + 2) as f64 / 2.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    // on rank vectors every term is an exact multiple of 1/4, so identical
    // or reversed rankings give exactly ±1
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's ρ: Pearson correlation of fractional ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Dimension {
            op: "spearman",
            left: vec![xs.len()],
            right: vec![ys.len()],
        });
    }
    if xs.len() < 2 {
        return Err(Error::Undefined(format!("spearman needs at least 2 points, got {}", xs.len())));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::domain("spearman", "inputs must be finite"));
    }
    pearson(&average_ranks(xs), &average_ranks(ys))
        .ok_or_else(|| Error::Undefined("spearman is undefined for a constant input".into()))
}

/// `10^(pkd_mut − pkd_wt)`.
pub fn fold_change(pkd_mut: f64, pkd_wt: f64) -> Result<f64> {
    if !pkd_mut.is_finite() || !pkd_wt.is_finite() {
        return Err(Error::domain("fold_change", "pKd values must be finite"));
    }
    Ok(10f64.powf(pkd_mut - pkd_wt))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedRow {
    pub variant_id: String,
    /// Model likelihood score (mean or sum log-likelihood).
    pub model_score: f64,
    pub binding_score: f64,
    pub pkd_wildtype: Option<f64>,
}

/// One assay's rows, ready for ranking metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedTable {
    pub assay_id: String,
    pub score_type: ScoreType,
    pub rows: Vec<RankedRow>,
}

impl RankedTable {
    pub fn validate(&self) -> Result<()> {
        let mut ids = std::collections::HashSet::new();
        for r in &self.rows {
            if !ids.insert(r.variant_id.as_str()) {
                return Err(Error::Data(format!("duplicate variant id {} in {}", r.variant_id, self.assay_id)));
            }
            if !r.binding_score.is_finite() || !r.model_score.is_finite() {
                return Err(Error::Data(format!("non-finite score for {} in {}", r.variant_id, self.assay_id)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionAtK {
    pub value: f64,
    /// Rows actually considered (`min(k, n)`).
    pub considered: usize,
    /// True when the table had fewer than `k` rows.
    pub short: bool,
}

/// Orders rows by model score descending, ties by ascending variant id.
pub fn top_k_order(rows: &[RankedRow]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| {
        rows[b]
            .model_score
            .total_cmp(&rows[a].model_score)
            .then_with(|| rows[a].variant_id.cmp(&rows[b].variant_id))
    });
    order
}

/// Fraction of the top-`k` rows whose fold change over wild type is at least
/// `threshold_fold`.
pub fn precision_at_k(table: &RankedTable, k: usize, threshold_fold: f64) -> Result<PrecisionAtK> {
    if table.score_type != ScoreType::NegLogKd {
        return Err(Error::Data(format!(
            "precision@k refuses assay {}: score type {} cannot express fold change",
            table.assay_id,
            table.score_type.as_str()
        )));
    }
    if k == 0 || table.rows.is_empty() {
        return Err(Error::Undefined("precision@k needs k ≥ 1 and at least one row".into()));
    }
    let order = top_k_order(&table.rows);
    let considered = k.min(order.len());
    let mut hits = 0usize;
    for &i in &order[..considered] {
        let r = &table.rows[i];
        let wt = r
            .pkd_wildtype
            .ok_or_else(|| Error::Data(format!("no wild-type pKd for {} in {}", r.variant_id, table.assay_id)))?;
        if fold_change(r.binding_score, wt)? >= threshold_fold {
            hits += 1;
        }
    }
    Ok(PrecisionAtK {
        value: hits as f64 / considered as f64,
        considered,
        short: considered < k,
    })
}

fn check_binary(labels: &[bool], scores: &[f64], op: &'static str) -> Result<(usize, usize)> {
    if labels.len() != scores.len() {
        return Err(Error::Dimension {
            op,
            left: vec![labels.len()],
            right: vec![scores.len()],
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::domain(op, "scores must be finite"));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    Ok((pos, labels.len() - pos))
}

/// Tie-corrected Mann–Whitney estimate of `P(score⁺ > score⁻)`.
pub fn roc_auc(labels: &[bool], scores: &[f64]) -> Result<f64> {
    let (pos, neg) = check_binary(labels, scores, "roc_auc")?;
    if pos == 0 || neg == 0 {
        return Err(Error::Undefined("roc_auc needs both classes".into()));
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let p = pos as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

/// Operating points at each distinct score threshold, highest first.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RocCurve {
    pub thresholds: Vec<f64>,
    pub tpr: Vec<f64>,
    pub fpr: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PrCurve {
    pub thresholds: Vec<f64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    /// `Σ (R_t − R_{t−1}) · P_t` over thresholds.
    pub average_precision: f64,
    /// Labels were single-class, so recall or precision is degenerate.
    pub flagged: bool,
}

/// Cumulative (threshold, tp, fp) at each distinct score, descending.
fn sweep(labels: &[bool], scores: &[f64]) -> Vec<(f64, usize, usize)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    for (pos, &i) in order.iter().enumerate() {
        if labels[i] {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_tie = order.get(pos + 1).is_none_or(|&j| scores[j] != scores[i]);
        if last_of_tie {
            out.push((scores[i], tp, fp));
        }
    }
    out
}

pub fn roc_curve(labels: &[bool], scores: &[f64]) -> Result<RocCurve> {
    let (pos, neg) = check_binary(labels, scores, "roc_curve")?;
    if pos == 0 || neg == 0 {
        return Err(Error::Undefined("roc_curve needs both classes".into()));
    }
    let mut c = RocCurve {
        thresholds: vec![f64::INFINITY],
        tpr: vec![0.0],
        fpr: vec![0.0],
    };
    for (t, tp, fp) in sweep(labels, scores) {
        c.thresholds.push(t);
        c.tpr.push(tp as f64 / pos as f64);
        c.fpr.push(fp as f64 / neg as f64);
    }
    Ok(c)
}

pub fn pr_curve(labels: &[bool], scores: &[f64]) -> Result<PrCurve> {
    let (pos, neg) = check_binary(labels, scores, "pr_curve")?;
    if labels.is_empty() {
        return Err(Error::Undefined("pr_curve of an empty input".into()));
    }
    let mut c = PrCurve {
        flagged: pos == 0 || neg == 0,
        ..PrCurve::default()
    };
    let mut prev_recall = 0.0;
    for (t, tp, fp) in sweep(labels, scores) {
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = if pos == 0 { 0.0 } else { tp as f64 / pos as f64 };
        c.average_precision += (recall - prev_recall) * precision;
        prev_recall = recall;
        c.thresholds.push(t);
        c.precision.push(precision);
        c.recall.push(recall);
    }
    Ok(c)
}

pub fn average_precision(labels: &[bool], scores: &[f64]) -> Result<f64> {
    Ok(pr_curve(labels, scores)?.average_precision)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermoContext {
    /// kcal/(mol·K).
    pub gas_constant: f64,
    /// Kelvin.
    pub temperature: f64,
}

impl Default for ThermoContext {
    fn default() -> Self {
        Self {
            gas_constant: GAS_CONSTANT_KCAL,
            temperature: 298.15,
        }
    }
}

/// `ΔG ≈ R·T·ln(Kd)` in kcal/mol.
pub fn delta_g_from_kd(kd: f64, ctx: &ThermoContext) -> Result<f64> {
    if !(ctx.temperature > 0.0) {
        return Err(Error::domain("delta_g_from_kd", "temperature must be positive"));
    }
    if !(kd > 0.0 && kd.is_finite()) {
        return Err(Error::domain("delta_g_from_kd", format!("kd must be positive, got {kd}")));
    }
    Ok(ctx.gas_constant * ctx.temperature * kd.ln())
}

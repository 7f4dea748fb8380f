//! Per-residue binding-site (paratope) classifier on frozen embeddings.
//!
//! A two-layer head `p = σ(W₂·tanh(W₁·e + b₁) + b₂)` is trained with masked
//! mean binary cross-entropy while the base model stays untouched.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::dataio::StructureSet;
use crate::error::{Error, Result};
use crate::evalkit::{pr_curve, roc_auc, roc_curve, PrCurve, RocCurve};
use crate::ifmodel::{encode, featurize, ModelParameters, ResidueEmbeddings};
use crate::trainer::{adamw_update, AdamWHyper, Moments};

pub const DEFAULT_HIDDEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParatopeHead {
    /// `d × hidden`.
    pub w1: Tensor,
    pub b1: Tensor,
    /// `hidden × 1`.
    pub w2: Tensor,
    pub b2: Tensor,
}

impl ParatopeHead {
    /// Random first layer, zero second layer: every initial output is 0.5.
    pub fn init(d: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("positive std");
        let w1 = (0..d * hidden).map(|_| normal.sample(&mut rng)).collect();
        Self {
            w1: Tensor::new(vec![d, hidden], w1).expect("shape"),
            b1: Tensor::zeros(&[hidden]),
            w2: Tensor::zeros(&[hidden, 1]),
            b2: Tensor::zeros(&[1]),
        }
    }

    pub fn zeros(d: usize, hidden: usize) -> Self {
        Self {
            w1: Tensor::zeros(&[d, hidden]),
            b1: Tensor::zeros(&[hidden]),
            w2: Tensor::zeros(&[hidden, 1]),
            b2: Tensor::zeros(&[1]),
        }
    }

    pub fn input_width(&self) -> usize {
        self.w1.shape()[0]
    }

    fn tensors(&self) -> [&Tensor; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

/// Records the head on `g`; returns its leaf variables and the `n × 1`
/// logit node.
pub fn head_logits_graph(g: &mut Graph, x: Var, head: &ParatopeHead, trainable: bool) -> Result<([Var; 4], Var)> {
    let width = g.value(x).shape()[1];
    if width != head.input_width() {
        return Err(Error::Dimension {
            op: "head_forward",
            left: g.value(x).shape().to_vec(),
            right: head.w1.shape().to_vec(),
        });
    }
    let vars = head.tensors().map(|t| g.leaf(t.clone(), trainable));
    let h = g.matmul(x, vars[0])?;
    let h = g.add_row(h, vars[1])?;
    let h = g.tanh(h)?;
    let z = g.matmul(h, vars[2])?;
    let z = g.add_row(z, vars[3])?;
    Ok((vars, z))
}

/// Per-residue logits.
pub fn head_logits(emb: &ResidueEmbeddings, head: &ParatopeHead) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let x = g.constant(emb.matrix.clone());
    let (_, z) = head_logits_graph(&mut g, x, head, false)?;
    Ok(g.value(z).data().to_vec())
}

/// Per-residue binding probabilities in (0, 1).
pub fn head_forward(emb: &ResidueEmbeddings, head: &ParatopeHead) -> Result<Vec<f64>> {
    Ok(head_logits(emb, head)?
        .into_iter()
        .map(crate::autodiff::kernels::sigmoid)
        .collect())
}

/// Binary labels for one antibody's residues; unlabeled positions are masked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidueLabels {
    pub labels: Vec<bool>,
    /// `true` where a label is present.
    pub mask: Vec<bool>,
}

impl ResidueLabels {
    pub fn full(labels: Vec<bool>) -> Self {
        let mask = vec![true; labels.len()];
        Self { labels, mask }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Frozen embeddings of one antibody with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEmbeddings {
    pub id: String,
    pub embeddings: ResidueEmbeddings,
    pub labels: ResidueLabels,
}

impl LabeledEmbeddings {
    pub fn new(id: impl Into<String>, embeddings: ResidueEmbeddings, labels: ResidueLabels) -> Result<Self> {
        if labels.labels.len() != embeddings.n() || labels.mask.len() != embeddings.n() {
            return Err(Error::Dimension {
                op: "paratope_labels",
                left: vec![embeddings.n()],
                right: vec![labels.labels.len(), labels.mask.len()],
            });
        }
        Ok(Self {
            id: id.into(),
            embeddings,
            labels,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for HeadTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 1e-2,
            weight_decay: 0.0,
            hidden: DEFAULT_HIDDEN,
            seed: 0,
        }
    }
}

/// Masked mean BCE of `head` over `set`, recorded on `g`.
fn bce_graph(g: &mut Graph, set: &[LabeledEmbeddings], head: &ParatopeHead) -> Result<([Var; 4], Var)> {
    let labeled: usize = set.iter().map(|e| e.labels.mask.iter().filter(|&&m| m).count()).sum();
    if labeled == 0 {
        return Err(Error::Data("no labeled residues".into()));
    }
    let rows: Vec<Vec<f64>> = set
        .iter()
        .flat_map(|e| (0..e.embeddings.n()).map(|i| e.embeddings.matrix.row(i).to_vec()))
        .collect();
    let x = g.constant(Tensor::from_rows(&rows)?);
    let (vars, z) = head_logits_graph(g, x, head, true)?;
    let n = rows.len();
    let (mut pos_w, mut neg_w) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for e in set {
        for (&y, &m) in e.labels.labels.iter().zip(&e.labels.mask) {
            let m = if m { 1.0 } else { 0.0 };
            pos_w.push(if y { m } else { 0.0 });
            neg_w.push(if y { 0.0 } else { m });
        }
    }
    let pos_w = g.constant(Tensor::new(vec![n, 1], pos_w)?);
    let neg_w = g.constant(Tensor::new(vec![n, 1], neg_w)?);
    let ls_pos = g.log_sigmoid(z)?;
    let neg_z = g.scale(z, -1.0)?;
    let ls_neg = g.log_sigmoid(neg_z)?;
    let a = g.mul(ls_pos, pos_w)?;
    let b = g.mul(ls_neg, neg_w)?;
    let both = g.add(a, b)?;
    let total = g.sum(both)?;
    Ok((vars, g.scale(total, -1.0 / labeled as f64)?))
}

/// Masked mean binary cross-entropy.
pub fn bce_loss(set: &[LabeledEmbeddings], head: &ParatopeHead) -> Result<f64> {
    let mut g = Graph::new();
    let (_, l) = bce_graph(&mut g, set, head)?;
    Ok(g.value(l).item())
}

/// Gradient of the BCE loss with respect to `(w1, b1, w2, b2)`.
pub fn bce_gradients(set: &[LabeledEmbeddings], head: &ParatopeHead) -> Result<(f64, [Tensor; 4])> {
    let mut g = Graph::new();
    let (vars, l) = bce_graph(&mut g, set, head)?;
    let grads = g.backward(l)?;
    Ok((g.value(l).item(), vars.map(|v| grads.wrt(v))))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedHead {
    pub head: ParatopeHead,
    /// Loss before each update, then the final loss.
    pub loss_curve: Vec<f64>,
}

/// Full-batch AdamW on the head only. The base model is never touched:
/// callers pass precomputed embeddings.
pub fn train_head(set: &[LabeledEmbeddings], head: ParatopeHead, cfg: &HeadTrainConfig) -> Result<TrainedHead> {
    let (mut pos, mut neg) = (0usize, 0usize);
    for e in set {
        for (&y, &m) in e.labels.labels.iter().zip(&e.labels.mask) {
            if m {
                if y {
                    pos += 1;
                } else {
                    neg += 1;
                }
            }
        }
    }
    if pos == 0 || neg == 0 {
        return Err(Error::Data(format!(
            "paratope training needs both classes, found {pos} positive and {neg} negative residues"
        )));
    }
    let hyper = AdamWHyper {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        ..AdamWHyper::default()
    };
    hyper.validate()?;
    let mut head = head;
    let mut moments: Vec<Moments> = head
        .tensors()
        .map(|t| Moments {
            m: Tensor::zeros(t.shape()),
            v: Tensor::zeros(t.shape()),
        })
        .into();
    let mut curve = Vec::with_capacity(cfg.epochs + 1);
    for step in 1..=cfg.epochs {
        let (loss, grads) = bce_gradients(set, &head)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch: step, batch: 1 });
        }
        curve.push(loss);
        for ((w, g), mo) in head.tensors_mut().into_iter().zip(&grads).zip(&mut moments) {
            adamw_update(w.data_mut(), g.data(), mo, &hyper, step as u64);
        }
    }
    curve.push(bce_loss(set, &head)?);
    Ok(TrainedHead { head, loss_curve: curve })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadEvaluation {
    pub roc: RocCurve,
    pub pr: PrCurve,
    pub roc_auc: f64,
    pub average_precision: f64,
    /// Pooled labels and probabilities over all labeled residues.
    pub labels: Vec<bool>,
    pub scores: Vec<f64>,
}

/// Pools every labeled residue of `set` into one label/score vector and
/// computes global ROC and PR metrics.
pub fn evaluate_head(head: &ParatopeHead, set: &[LabeledEmbeddings]) -> Result<HeadEvaluation> {
    let mut labels = Vec::new();
    let mut scores = Vec::new();
    for e in set {
        let p = head_forward(&e.embeddings, head)?;
        for i in 0..p.len() {
            if e.labels.mask[i] {
                labels.push(e.labels.labels[i]);
                scores.push(p[i]);
            }
        }
    }
    let pr = pr_curve(&labels, &scores)?;
    Ok(HeadEvaluation {
        roc: roc_curve(&labels, &scores)?,
        roc_auc: roc_auc(&labels, &scores)?,
        average_precision: pr.average_precision,
        pr,
        labels,
        scores,
    })
}

/// Residue-level embeddings of each structure under the frozen base model.
pub fn embed_structures(params: &ModelParameters, structures: &StructureSet) -> Result<BTreeMap<String, ResidueEmbeddings>> {
    structures
        .iter()
        .map(|(id, s)| Ok((id.clone(), encode(&featurize(s, params.dims.k_neighbors)?, params)?)))
        .collect()
}

/// One row of the labeled-data CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRow {
    pub antibody_id: String,
    pub chain_id: String,
    pub residue_index: i64,
    pub label: u8,
}

pub const LABEL_HEADER: [&str; 4] = ["antibody_id", "chain_id", "residue_index", "label"];

pub fn load_label_rows(path: impl AsRef<Path>) -> Result<Vec<LabelRow>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(f);
    if rdr.headers()?.iter().ne(LABEL_HEADER.iter().copied()) {
        return Err(Error::Data(format!("{}: header must be {}", path.display(), LABEL_HEADER.join(","))));
    }
    let rows: Vec<LabelRow> = rdr.deserialize().collect::<std::result::Result<_, _>>()?;
    if let Some(r) = rows.iter().find(|r| r.label > 1) {
        return Err(Error::Data(format!("label must be 0 or 1, got {} for {}", r.label, r.antibody_id)));
    }
    Ok(rows)
}

/// Joins label rows onto structures by `(antibody_id, chain_id,
/// residue_index)`. A row that matches no residue is a hard error.
pub fn join_labels(rows: &[LabelRow], structures: &StructureSet) -> Result<BTreeMap<String, ResidueLabels>> {
    let mut out: BTreeMap<String, ResidueLabels> = BTreeMap::new();
    let mut positions: HashMap<&str, HashMap<(&str, i64), usize>> = HashMap::new();
    for r in rows {
        let s = structures
            .get(&r.antibody_id)
            .ok_or_else(|| Error::Data(format!("label references unknown antibody {}", r.antibody_id)))?;
        let pos = positions.entry(s.id.as_str()).or_insert_with(|| {
            s.residues
                .iter()
                .enumerate()
                .map(|(i, res)| ((res.chain_id.as_str(), res.residue_index), i))
                .collect()
        });
        let &i = pos.get(&(r.chain_id.as_str(), r.residue_index)).ok_or_else(|| {
            Error::Data(format!(
                "label ({}, {}, {}) matches no residue",
                r.antibody_id, r.chain_id, r.residue_index
            ))
        })?;
        let entry = out.entry(r.antibody_id.clone()).or_insert_with(|| ResidueLabels {
            labels: vec![false; s.len()],
            mask: vec![false; s.len()],
        });
        if entry.mask[i] {
            return Err(Error::Data(format!(
                "duplicate label for ({}, {}, {})",
                r.antibody_id, r.chain_id, r.residue_index
            )));
        }
        entry.labels[i] = r.label == 1;
        entry.mask[i] = true;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn fixture() -> Vec<LabeledEmbeddings> {
        let rows: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 - 3.5, 1.0, -0.5]).collect();
        let labels: Vec<bool> = (0..8).map(|i| i >= 4).collect();
        vec![LabeledEmbeddings::new(
            "ab",
            ResidueEmbeddings {
                matrix: Tensor::from_rows(&rows).unwrap(),
            },
            ResidueLabels::full(labels),
        )
        .unwrap()]
    }

    #[test]
    fn initial_outputs_are_half_and_bce_is_ln2() {
        let set = fixture();
        let head = ParatopeHead::init(3, 16, 1);
        assert!(head_forward(&set[0].embeddings, &head).unwrap().iter().all(|&p| p == 0.5));
        assert_eq!(bce_loss(&set, &head).unwrap(), LN_2);
        assert!(head_forward(&set[0].embeddings, &ParatopeHead::zeros(3, 4))
            .unwrap()
            .iter()
            .all(|&p| p == 0.5));
    }

    #[test]
    fn width_mismatch_is_dimension_error() {
        let set = fixture();
        let head = ParatopeHead::init(5, 4, 1);
        assert!(matches!(head_forward(&set[0].embeddings, &head), Err(Error::Dimension { .. })));
    }

    #[test]
    fn single_class_refused() {
        let mut set = fixture();
        set[0].labels.labels.iter_mut().for_each(|l| *l = true);
        assert!(train_head(&set, ParatopeHead::init(3, 4, 0), &HeadTrainConfig::default()).is_err());
    }

    #[test]
    fn training_separates() {
        let set = fixture();
        let cfg = HeadTrainConfig {
            epochs: 100,
            hidden: 8,
            ..HeadTrainConfig::default()
        };
        let t = train_head(&set, ParatopeHead::init(3, 8, 0), &cfg).unwrap();
        assert!(t.loss_curve.last().unwrap() < &t.loss_curve[0]);
        let ev = evaluate_head(&t.head, &set).unwrap();
        assert_eq!(ev.roc_auc, 1.0);
    }
}

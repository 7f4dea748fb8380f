//! Rigid-motion invariant per-residue geometry features.
//!
//! Each residue gets `sin`/`cos` of its backbone dihedrals φ, ψ, ω followed by
//! the distances from its CA to the `k` nearest other CAs, ascending.

use std::collections::BTreeMap;

use super::structure::{dihedral, distance, BackboneStructure};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Distance written for missing neighbors when the structure has fewer than
/// `k + 1` residues.
pub const MISSING_NEIGHBOR_DISTANCE: f64 = 999.0;

/// Number of angle features (sin/cos of φ, ψ, ω).
pub const ANGLE_FEATURES: usize = 6;

pub fn feature_width(k: usize) -> usize {
    ANGLE_FEATURES + k
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructureFeatures {
    pub structure_id: String,
    /// `n × (6 + k)` feature matrix.
    pub features: Tensor,
    /// Indices of the `k` nearest residues (by CA distance), nearest first.
    pub neighbors: Vec<Vec<usize>>,
    pub k: usize,
}

impl StructureFeatures {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }
}

/// Backbone dihedrals `(φ, ψ, ω)` in radians per residue; `None` where an
/// angle is undefined (chain terminus or collinear atoms).
pub fn backbone_dihedrals(s: &BackboneStructure) -> Vec<[Option<f64>; 3]> {
    let res = &s.residues;
    (0..res.len())
        .map(|i| {
            let r = &res[i];
            let prev = (i > 0 && res[i - 1].chain_id == r.chain_id).then(|| &res[i - 1]);
            let next = (i + 1 < res.len() && res[i + 1].chain_id == r.chain_id).then(|| &res[i + 1]);
            let phi = prev.and_then(|p| dihedral(p.c, r.n, r.ca, r.c));
            let psi = next.and_then(|q| dihedral(r.n, r.ca, r.c, q.n));
            let omega = next.and_then(|q| dihedral(r.ca, r.c, q.n, q.ca));
            [phi, psi, omega]
        })
        .collect()
}

/// Features of every structure a run touches, keyed by structure id.
pub type FeatureStore = BTreeMap<String, StructureFeatures>;

/// Featurizes each structure once.
pub fn featurize_all<'a>(structures: impl IntoIterator<Item = &'a BackboneStructure>, k: usize) -> Result<FeatureStore> {
    structures
        .into_iter()
        .map(|s| Ok((s.id.clone(), featurize(s, k)?)))
        .collect()
}

pub fn featurize(s: &BackboneStructure, k: usize) -> Result<StructureFeatures> {
    if k == 0 {
        return Err(Error::domain("featurize", "k must be at least 1"));
    }
    let n = s.len();
    if n < 2 {
        return Err(Error::Structure {
            id: s.id.clone(),
            msg: format!("featurize needs at least 2 residues, got {n}"),
        });
    }
    let width = feature_width(k);
    let dihedrals = backbone_dihedrals(s);
    let mut data = Vec::with_capacity(n * width);
    let mut neighbors = Vec::with_capacity(n);
    for i in 0..n {
        for angle in dihedrals[i] {
            match angle {
                Some(a) => data.extend([a.sin(), a.cos()]),
                None => data.extend([0.0, 0.0]),
            }
        }
        let ca = s.residues[i].ca;
        let mut dists: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (distance(ca, s.residues[j].ca), j))
            .collect();
        dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        dists.truncate(k);
        data.extend(dists.iter().map(|d| d.0));
        data.extend(std::iter::repeat_n(MISSING_NEIGHBOR_DISTANCE, k - dists.len()));
        neighbors.push(dists.into_iter().map(|d| d.1).collect());
    }
    Ok(StructureFeatures {
        structure_id: s.id.clone(),
        features: Tensor::matrix(n, width, data)?,
        neighbors,
        k,
    })
}

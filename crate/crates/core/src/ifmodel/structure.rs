//! Backbone coordinates, the structure JSON format, and small geometry helpers.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::vocab::Vocabulary;
use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residue {
    pub chain_id: String,
    pub residue_index: i64,
    pub n: Vec3,
    pub ca: Vec3,
    pub c: Vec3,
    /// One-letter residue identity, when the file carries one.
    pub aa: Option<char>,
}

/// Per-residue N/CA/C coordinates in Å, grouped by chain.
///
/// Chains keep their file order (antibody first, then antigen) and residue
/// indices strictly increase within each chain.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneStructure {
    pub id: String,
    pub residues: Vec<Residue>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResidueJson {
    index: i64,
    #[serde(rename = "N")]
    n: Vec3,
    #[serde(rename = "CA")]
    ca: Vec3,
    #[serde(rename = "C")]
    c: Vec3,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    aa: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChainJson {
    chain_id: String,
    residues: Vec<ResidueJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StructureJson {
    id: String,
    chains: Vec<ChainJson>,
}

impl BackboneStructure {
    pub fn new(id: impl Into<String>, residues: Vec<Residue>) -> Result<Self> {
        let s = Self {
            id: id.into(),
            residues,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.residues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residues.is_empty()
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Structure {
            id: self.id.clone(),
            msg: msg.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen_chains: Vec<&str> = Vec::new();
        for (i, r) in self.residues.iter().enumerate() {
            let new_chain = i == 0 || self.residues[i - 1].chain_id != r.chain_id;
            if new_chain {
                if seen_chains.contains(&r.chain_id.as_str()) {
                    return Err(self.err(format!("chain {} is not contiguous", r.chain_id)));
                }
                seen_chains.push(&r.chain_id);
            } else if self.residues[i - 1].residue_index >= r.residue_index {
                return Err(self.err(format!(
                    "residue indices not increasing in chain {} at {}",
                    r.chain_id, r.residue_index
                )));
            }
            let atoms = [r.n, r.ca, r.c];
            if atoms.iter().flatten().any(|v| !v.is_finite()) {
                return Err(self.err(format!("non-finite coordinate at residue {i}")));
            }
            if r.n == r.ca || r.ca == r.c || r.n == r.c {
                return Err(self.err(format!("coincident atoms at residue {i}")));
            }
        }
        Ok(())
    }

    /// Chain ids in order with their residue counts.
    pub fn chains(&self) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        for r in &self.residues {
            match out.last_mut() {
                Some((id, n)) if *id == r.chain_id => *n += 1,
                _ => out.push((r.chain_id.clone(), 1)),
            }
        }
        out
    }

    /// Residue letters per chain, when every residue has one.
    pub fn chain_sequences(&self) -> Option<Vec<String>> {
        let mut out: Vec<String> = Vec::new();
        for (i, r) in self.residues.iter().enumerate() {
            let aa = r.aa?;
            if i == 0 || self.residues[i - 1].chain_id != r.chain_id {
                out.push(String::new());
            }
            out.last_mut().expect("chain started").push(aa);
        }
        Some(out)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let raw: StructureJson = serde_json::from_str(s)?;
        let vocab = Vocabulary;
        let mut residues = Vec::new();
        for chain in raw.chains {
            for r in chain.residues {
                let aa = match r.aa {
                    None => None,
                    Some(a) => {
                        let mut chars = a.chars();
                        let c = chars.next().filter(|_| chars.next().is_none()).ok_or_else(|| Error::Structure {
                            id: raw.id.clone(),
                            msg: format!("aa {a:?} is not a single letter"),
                        })?;
                        if vocab.index_of(c).is_none() {
                            return Err(Error::Structure {
                                id: raw.id.clone(),
                                msg: format!("aa {c:?} not in vocabulary"),
                            });
                        }
                        Some(c.to_ascii_uppercase())
                    }
                };
                residues.push(Residue {
                    chain_id: chain.chain_id.clone(),
                    residue_index: r.index,
                    n: r.n,
                    ca: r.ca,
                    c: r.c,
                    aa,
                });
            }
        }
        Self::new(raw.id, residues)
    }

    pub fn to_json_string(&self) -> Result<String> {
        let mut chains: Vec<ChainJson> = Vec::new();
        for (i, r) in self.residues.iter().enumerate() {
            if i == 0 || self.residues[i - 1].chain_id != r.chain_id {
                chains.push(ChainJson {
                    chain_id: r.chain_id.clone(),
                    residues: Vec::new(),
                });
            }
            chains.last_mut().expect("chain started").residues.push(ResidueJson {
                index: r.residue_index,
                n: r.n,
                ca: r.ca,
                c: r.c,
                aa: r.aa.map(String::from),
            });
        }
        Ok(serde_json::to_string_pretty(&StructureJson {
            id: self.id.clone(),
            chains,
        })?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string()?).map_err(|e| Error::io(path, e))
    }

    /// Applies `x ↦ R·x + t` to every atom.
    pub fn transformed(&self, rot: &[[f64; 3]; 3], t: Vec3) -> Self {
        let apply = |p: Vec3| -> Vec3 {
            let mut out = t;
            for (i, o) in out.iter_mut().enumerate() {
                *o += rot[i][0] * p[0] + rot[i][1] * p[1] + rot[i][2] * p[2];
            }
            out
        };
        Self {
            id: self.id.clone(),
            residues: self
                .residues
                .iter()
                .map(|r| Residue {
                    n: apply(r.n),
                    ca: apply(r.ca),
                    c: apply(r.c),
                    ..r.clone()
                })
                .collect(),
        }
    }
}

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub(crate) fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn distance(a: Vec3, b: Vec3) -> f64 {
    norm(sub(a, b))
}

/// Relative threshold below which a cross product counts as zero.
const COLLINEAR_EPS: f64 = 1e-10;

/// Signed dihedral angle (radians) of the four points, or `None` when either
/// of the defining triples is collinear.
pub fn dihedral(p0: Vec3, p1: Vec3, p2: Vec3, p3: Vec3) -> Option<f64> {
    let b0 = sub(p1, p0);
    let b1 = sub(p2, p1);
    let b2 = sub(p3, p2);
    let n1 = cross(b0, b1);
    let n2 = cross(b1, b2);
    let l1 = norm(b1);
    if l1 == 0.0
        || norm(n1) <= COLLINEAR_EPS * norm(b0) * l1
        || norm(n2) <= COLLINEAR_EPS * norm(b2) * l1
    {
        return None;
    }
    // IUPAC sign: clockwise rotation of the front bond onto the back bond,
    // viewed along p1 -> p2, is positive
    let m1 = cross(scale(b1, 1.0 / l1), n1);
    let x = dot(n1, n2);
    let y = dot(m1, n2);
    Some(y.atan2(x))
}

/// Places a fourth atom from three predecessors using bond length, bond
/// angle and torsion (all angles in radians).
pub fn place_atom(a: Vec3, b: Vec3, c: Vec3, bond: f64, angle: f64, torsion: f64) -> Vec3 {
    let bc = sub(c, b);
    let bc_n = scale(bc, 1.0 / norm(bc));
    let n = cross(sub(b, a), bc_n);
    let n = scale(n, 1.0 / norm(n));
    let m = cross(n, bc_n);
    let d2 = [
        -bond * angle.cos(),
        bond * angle.sin() * torsion.cos(),
        bond * angle.sin() * torsion.sin(),
    ];
    let d = add(add(scale(bc_n, d2[0]), scale(m, d2[1])), scale(n, d2[2]));
    add(c, d)
}

/// Ideal backbone bond lengths (Å) and angles (degrees).
pub mod ideal {
    pub const N_CA: f64 = 1.458;
    pub const CA_C: f64 = 1.525;
    pub const C_N: f64 = 1.329;
    pub const N_CA_C: f64 = 111.2;
    pub const CA_C_N: f64 = 116.2;
    pub const C_N_CA: f64 = 121.7;
}

/// Builds one chain's N/CA/C coordinates from per-residue `(φ, ψ, ω)` in
/// degrees using ideal bond geometry. The first residue's φ is unused.
pub fn build_chain(torsions: &[(f64, f64, f64)]) -> Vec<(Vec3, Vec3, Vec3)> {
    use ideal::*;
    let rad = f64::to_radians;
    let mut out = Vec::with_capacity(torsions.len());
    if torsions.is_empty() {
        return out;
    }
    let n0 = [0.0, 0.0, 0.0];
    let ca0 = [N_CA, 0.0, 0.0];
    let ang = rad(180.0 - N_CA_C);
    let c0 = add(ca0, [CA_C * ang.cos(), CA_C * ang.sin(), 0.0]);
    out.push((n0, ca0, c0));
    for i in 1..torsions.len() {
        let (pn, pca, pc) = out[i - 1];
        let (_, psi_prev, omega_prev) = torsions[i - 1];
        let (phi, _, _) = torsions[i];
        let n = place_atom(pn, pca, pc, C_N, rad(CA_C_N), rad(psi_prev));
        let ca = place_atom(pca, pc, n, N_CA, rad(C_N_CA), rad(omega_prev));
        let c = place_atom(pc, n, ca, CA_C, rad(N_CA_C), rad(phi));
        out.push((n, ca, c));
    }
    out
}

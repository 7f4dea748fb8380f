//! Synthetic assays with a known ground-truth affinity function.
//!
//! Each assay has a wild-type antibody chain, a fixed antigen chain, and a
//! helix-like two-chain backbone. Hidden per-position energies over the
//! antibody chain plus pairwise contact energies (antibody–antibody pairs
//! inside the mutable region, antibody–antigen pairs within the contact
//! cutoff) define
//!
//! ```text
//! score(y) = 8 − (E(y) − E(wt)) + N(0, noise_sd²)
//! ```
//!
//! so the wild type sits at a pKd of 8 and every unit of score is a 10-fold
//! change in Kd.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::assay::{Dataset, ScoreType, StructureSet, VariantRecord};
use crate::error::{Error, Result};
use crate::ifmodel::structure::{self, build_chain, Residue, Vec3};
use crate::ifmodel::vocab::{AMINO_ACIDS, NUM_CANONICAL};
use crate::ifmodel::{BackboneStructure, Vocabulary};

/// Score assigned to every wild type.
pub const WILDTYPE_SCORE: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticOracleConfig {
    pub seed: u64,
    pub n_assays: usize,
    pub variants_per_assay: usize,
    /// Per-assay sizes; overrides `n_assays`/`variants_per_assay` when set.
    pub assay_sizes: Option<Vec<usize>>,
    /// Antibody chain length.
    pub sequence_length: usize,
    pub antigen_length: usize,
    /// First antibody position of the mutable region.
    pub region_start: usize,
    pub region_length: usize,
    pub max_mutations: usize,
    /// Std-dev of hidden per-position energies.
    pub position_energy_sd: f64,
    /// Std-dev of hidden contact-pair energies.
    pub pair_energy_sd: f64,
    /// CA–CA distance (Å) under which a residue pair is in contact.
    pub contact_cutoff: f64,
    pub noise_sd: f64,
}

impl Default for SyntheticOracleConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_assays: 3,
            variants_per_assay: 2000,
            assay_sizes: None,
            sequence_length: 16,
            antigen_length: 6,
            region_start: 4,
            region_length: 8,
            max_mutations: 4,
            position_energy_sd: 0.6,
            pair_energy_sd: 0.2,
            contact_cutoff: 8.0,
            noise_sd: 0.05,
        }
    }
}

impl SyntheticOracleConfig {
    fn sizes(&self) -> Vec<usize> {
        self.assay_sizes
            .clone()
            .unwrap_or_else(|| vec![self.variants_per_assay; self.n_assays])
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Config("noise_sd must be finite and non-negative".into()));
        }
        if self.sequence_length < 2 || self.antigen_length == 0 {
            return Err(Error::Config("chains too short".into()));
        }
        if self.region_length == 0 || self.region_start + self.region_length > self.sequence_length {
            return Err(Error::Config("mutable region must lie inside the antibody chain".into()));
        }
        if self.max_mutations == 0 || self.max_mutations > self.region_length {
            return Err(Error::Config("max_mutations must be in 1..=region_length".into()));
        }
        if self.sizes().iter().any(|&n| n == 0) {
            return Err(Error::Config("every assay needs at least one variant".into()));
        }
        Ok(())
    }
}

/// Hidden contact term between stream positions `i` and `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactPair {
    pub i: usize,
    pub j: usize,
    /// `weights[a * 20 + b]` for residues `a` at `i` and `b` at `j`.
    pub weights: Vec<f64>,
}

/// Ground truth for one assay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssayOracle {
    pub assay_id: String,
    pub structure_id: String,
    pub wildtype: String,
    pub antigen: String,
    pub region: Vec<usize>,
    /// `position_energy[i][a]` for antibody position `i`, residue `a`.
    pub position_energy: Vec<Vec<f64>>,
    pub contacts: Vec<ContactPair>,
    pub wildtype_energy: f64,
}

impl AssayOracle {
    /// Hidden energy of an antibody chain (antigen fixed to this assay's).
    pub fn energy(&self, heavy: &str) -> Result<f64> {
        let vocab = Vocabulary;
        let mut stream = vocab.encode(heavy)?;
        if stream.len() != self.wildtype.len() {
            return Err(Error::Sequence(format!(
                "expected antibody length {}, got {}",
                self.wildtype.len(),
                stream.len()
            )));
        }
        stream.extend(vocab.encode(&self.antigen)?);
        if stream.iter().any(|&t| t >= NUM_CANONICAL) {
            return Err(Error::Sequence("oracle scores canonical residues only".into()));
        }
        let mut e: f64 = stream
            .iter()
            .zip(&self.position_energy)
            .map(|(&a, row)| row[a])
            .sum();
        for c in &self.contacts {
            e += c.weights[stream[c.i] * NUM_CANONICAL + stream[c.j]];
        }
        Ok(e)
    }

    /// Noise-free binding score.
    pub fn score(&self, heavy: &str) -> Result<f64> {
        Ok(WILDTYPE_SCORE - (self.energy(heavy)? - self.wildtype_energy))
    }
}

/// Ground truth for a whole synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticOracle {
    pub assays: Vec<AssayOracle>,
}

impl SyntheticOracle {
    pub fn assay(&self, id: &str) -> Option<&AssayOracle> {
        self.assays.iter().find(|a| a.assay_id == id)
    }

    pub fn score(&self, assay_id: &str, heavy: &str) -> Result<f64> {
        self.assay(assay_id)
            .ok_or_else(|| Error::Data(format!("unknown assay {assay_id}")))?
            .score(heavy)
    }
}

pub struct SyntheticData {
    pub dataset: Dataset,
    pub structures: StructureSet,
    pub oracle: SyntheticOracle,
}

fn random_seq(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n)
        .map(|_| AMINO_ACIDS[rng.random_range(0..NUM_CANONICAL)] as char)
        .collect()
}

fn jittered_helix(rng: &mut ChaCha8Rng, n: usize) -> Vec<(Vec3, Vec3, Vec3)> {
    let jitter = Normal::new(0.0, 6.0).expect("sd");
    let torsions: Vec<(f64, f64, f64)> = (0..n)
        .map(|_| (-57.0 + jitter.sample(rng), -47.0 + jitter.sample(rng), 180.0))
        .collect();
    build_chain(&torsions)
}

/// Two roughly parallel helices ~9 Å apart: antibody chain `H`, antigen `A`.
fn two_chain_structure(
    rng: &mut ChaCha8Rng,
    id: &str,
    heavy: &str,
    antigen: &str,
) -> Result<BackboneStructure> {
    let h = jittered_helix(rng, heavy.len());
    let a = jittered_helix(rng, antigen.len());
    let axis = structure::sub(h[h.len() - 1].1, h[0].1);
    let axis = structure::scale(axis, 1.0 / structure::norm(axis));
    let helper = if axis[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let perp = structure::cross(axis, helper);
    let perp = structure::scale(perp, 9.0 / structure::norm(perp));
    // centre the antigen helix alongside the middle of the antibody helix
    let mid = h[h.len() / 2].1;
    let a_mid = a[a.len() / 2].1;
    let shift = structure::add(structure::sub(mid, a_mid), perp);

    let mut residues = Vec::with_capacity(heavy.len() + antigen.len());
    for (i, ((n, ca, c), aa)) in h.into_iter().zip(heavy.chars()).enumerate() {
        residues.push(Residue {
            chain_id: "H".into(),
            residue_index: i as i64 + 1,
            n,
            ca,
            c,
            aa: Some(aa),
        });
    }
    for (i, ((n, ca, c), aa)) in a.into_iter().zip(antigen.chars()).enumerate() {
        residues.push(Residue {
            chain_id: "A".into(),
            residue_index: i as i64 + 1,
            n: structure::add(n, shift),
            ca: structure::add(ca, shift),
            c: structure::add(c, shift),
            aa: Some(aa),
        });
    }
    BackboneStructure::new(id, residues)
}

pub fn synth_generate(cfg: &SyntheticOracleConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pos_dist = Normal::new(0.0, cfg.position_energy_sd.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let pair_dist = Normal::new(0.0, cfg.pair_energy_sd.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let noise = Normal::new(0.0, cfg.noise_sd).map_err(|e| Error::Config(e.to_string()))?;
    let region: Vec<usize> = (cfg.region_start..cfg.region_start + cfg.region_length).collect();

    let mut records = Vec::new();
    let mut structures = StructureSet::new();
    let mut oracles = Vec::new();
    for (a, &size) in cfg.sizes().iter().enumerate() {
        let assay_id = format!("assay{a:02}");
        let structure_id = format!("struct{a:02}");
        let wildtype = random_seq(&mut rng, cfg.sequence_length);
        let antigen = random_seq(&mut rng, cfg.antigen_length);
        let st = two_chain_structure(&mut rng, &structure_id, &wildtype, &antigen)?;

        let stream_len = cfg.sequence_length + cfg.antigen_length;
        let position_energy: Vec<Vec<f64>> = (0..stream_len)
            .map(|i| {
                if region.contains(&i) {
                    (0..NUM_CANONICAL).map(|_| pos_dist.sample(&mut rng)).collect()
                } else {
                    vec![0.0; NUM_CANONICAL]
                }
            })
            .collect();
        let mut contacts = Vec::new();
        for &i in &region {
            for j in 0..stream_len {
                let other_region = region.contains(&j);
                let antigen_side = j >= cfg.sequence_length;
                if (other_region && j > i) || antigen_side {
                    let d = structure::distance(st.residues[i].ca, st.residues[j].ca);
                    if d < cfg.contact_cutoff {
                        let weights = (0..NUM_CANONICAL * NUM_CANONICAL)
                            .map(|_| pair_dist.sample(&mut rng))
                            .collect();
                        contacts.push(ContactPair { i, j, weights });
                    }
                }
            }
        }
        let mut oracle = AssayOracle {
            assay_id: assay_id.clone(),
            structure_id: structure_id.clone(),
            wildtype: wildtype.clone(),
            antigen: antigen.clone(),
            region: region.clone(),
            position_energy,
            contacts,
            wildtype_energy: 0.0,
        };
        oracle.wildtype_energy = oracle.energy(&wildtype)?;

        for v in 0..size {
            let (variant_id, heavy) = if v == 0 {
                ("WT".to_string(), wildtype.clone())
            } else {
                let m = rng.random_range(1..=cfg.max_mutations);
                let mut chars: Vec<u8> = wildtype.bytes().collect();
                for k in sample(&mut rng, region.len(), m) {
                    let p = region[k];
                    let old = chars[p];
                    let mut new = old;
                    while new == old {
                        new = AMINO_ACIDS[rng.random_range(0..NUM_CANONICAL)];
                    }
                    chars[p] = new;
                }
                (format!("v{v:05}"), String::from_utf8(chars).expect("ascii"))
            };
            let clean = oracle.score(&heavy)?;
            let score = if cfg.noise_sd > 0.0 { clean + noise.sample(&mut rng) } else { clean };
            records.push(VariantRecord {
                assay_id: assay_id.clone(),
                variant_id,
                heavy_chain_seq: heavy,
                antigen_seq: antigen.clone(),
                binding_score: score,
                score_type: ScoreType::NegLogKd,
                structure_id: structure_id.clone(),
            });
        }
        structures.insert(structure_id, st);
        oracles.push(oracle);
    }
    Ok(SyntheticData {
        dataset: Dataset::new(records)?,
        structures,
        oracle: SyntheticOracle { assays: oracles },
    })
}

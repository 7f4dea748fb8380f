//! Pluggable metric scorers, deterministic surrogates, and ingestion of
//! externally computed scores.
//!
//! Surrogates stand in for sequence-likelihood, binding-energy and
//! structure-prediction tools. Each is a fixed function of the antibody
//! sequence and backbone geometry with hidden weights drawn from a seeded
//! generator:
//!
//! | metric       | definition                                                    |
//! |--------------|---------------------------------------------------------------|
//! | `seq_pll`    | `(1/L) Σ_i c[a_i]`, `c ~ N(0, 1)` per amino acid              |
//! | `ddg`        | `E(mut) − E(wt)`, `E(y) = Σ_i b_i · W[i][a_i]`, `W ~ N(0, 1)` |
//! | `plddt`      | `100 − 5 · Σ_i |u[a_i] − u[wt_i]|`, `u ~ N(0, 1)`             |
//! | `delta_sasa` | `Σ_i s[a_i] / (1 + b_i)`, `s ~ N(0, 1)`                       |
//! | `mpnn_ll`    | `(1/L) Σ_i (p[a_i]·sin φ_i + q[a_i]·cos ψ_i)`, `p, q ~ N(0, 1)` |
//! | `ptm`        | `1 − 0.02 · hamming(y, wt)`                                   |
//! | `iplddt`     | `100 − 3 · Σ_i b_i · |u'[a_i] − u'[wt_i]| / max_j b_j`        |
//!
//! `L` is the antibody length, `a_i` the residue at antibody position `i`,
//! and `b_i` the number of other CA atoms within 10 Å of residue `i`.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ifmodel::structure::distance;
use crate::ifmodel::vocab::NUM_CANONICAL;
use crate::ifmodel::{backbone_dihedrals, BackboneStructure, TokenizedSequence};

/// CA–CA radius for the burial count.
pub const BURIAL_RADIUS: f64 = 10.0;

/// A candidate antibody variant (token stream: antibody then antigen).
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub variant_id: String,
    pub tokens: TokenizedSequence,
}

/// Structure-side inputs shared by every scorer call.
#[derive(Debug, Clone)]
pub struct ScoringContext<'a> {
    pub structure: &'a BackboneStructure,
    pub wildtype: &'a TokenizedSequence,
}

impl ScoringContext<'_> {
    /// Number of other CAs within [`BURIAL_RADIUS`] of each residue.
    pub fn burial(&self) -> Vec<f64> {
        let r = &self.structure.residues;
        (0..r.len())
            .map(|i| {
                (0..r.len())
                    .filter(|&j| j != i && distance(r[i].ca, r[j].ca) < BURIAL_RADIUS)
                    .count() as f64
            })
            .collect()
    }
}

/// Per-candidate outcome: a value or a failure reason.
pub type ScoreOutcome = std::result::Result<f64, String>;

/// Produces one metric for a batch of candidates, deterministically.
pub trait Scorer: Send + Sync {
    /// Identifier recorded as provenance.
    fn id(&self) -> String;
    fn metric(&self) -> &str;
    /// One outcome per candidate, aligned with the input.
    fn score(&self, candidates: &[Candidate], ctx: &ScoringContext) -> Vec<ScoreOutcome>;
}

/// Scorers keyed by the metric they produce.
#[derive(Default)]
pub struct ScorerRegistry {
    scorers: BTreeMap<String, Box<dyn Scorer>>,
}

impl ScorerRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or replaces the scorer for its metric.
    pub fn register(&mut self, scorer: Box<dyn Scorer>) {
        self.scorers.insert(scorer.metric().to_string(), scorer);
    }

    pub fn get(&self, metric: &str) -> Option<&dyn Scorer> {
        self.scorers.get(metric).map(|b| b.as_ref())
    }

    pub fn metrics(&self) -> impl Iterator<Item = &str> {
        self.scorers.keys().map(String::as_str)
    }
}

fn seeded_normals(seed: u64, metric: &str, n: usize) -> Vec<f64> {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(metric.as_bytes());
    let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (0..n).map(|_| normal.sample(&mut rng)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateKind {
    SeqPll,
    Ddg,
    Plddt,
    DeltaSasa,
    MpnnLl,
    Ptm,
    Iplddt,
}

impl SurrogateKind {
    pub const ALL: [SurrogateKind; 7] = [
        SurrogateKind::SeqPll,
        SurrogateKind::Ddg,
        SurrogateKind::Plddt,
        SurrogateKind::DeltaSasa,
        SurrogateKind::MpnnLl,
        SurrogateKind::Ptm,
        SurrogateKind::Iplddt,
    ];

    pub fn metric(self) -> &'static str {
        match self {
            SurrogateKind::SeqPll => "seq_pll",
            SurrogateKind::Ddg => "ddg",
            SurrogateKind::Plddt => "plddt",
            SurrogateKind::DeltaSasa => "delta_sasa",
            SurrogateKind::MpnnLl => "mpnn_ll",
            SurrogateKind::Ptm => "ptm",
            SurrogateKind::Iplddt => "iplddt",
        }
    }
}

/// Deterministic stand-in scorer; see the module table for formulas.
#[derive(Debug, Clone)]
pub struct Surrogate {
    pub kind: SurrogateKind,
    pub seed: u64,
    /// Hidden weights, laid out per kind.
    weights: Vec<f64>,
}

/// Width of the per-position weight table used by `ddg`.
const DDG_POSITIONS: usize = 512;

impl Surrogate {
    pub fn new(kind: SurrogateKind, seed: u64) -> Self {
        let n = match kind {
            SurrogateKind::Ddg => DDG_POSITIONS * NUM_CANONICAL,
            SurrogateKind::MpnnLl => 2 * NUM_CANONICAL,
            _ => NUM_CANONICAL,
        };
        Self {
            kind,
            seed,
            weights: seeded_normals(seed, kind.metric(), n),
        }
    }

    /// Hidden `ddg` weight of amino acid `aa` at antibody position `pos`.
    pub fn ddg_weight(&self, pos: usize, aa: usize) -> f64 {
        assert_eq!(self.kind, SurrogateKind::Ddg);
        self.weights[(pos % DDG_POSITIONS) * NUM_CANONICAL + aa]
    }

    /// Hidden per-amino-acid table (all kinds except `ddg`/`mpnn_ll` use it).
    pub fn table(&self) -> &[f64] {
        &self.weights
    }

    fn aa(t: usize) -> std::result::Result<usize, String> {
        (t < NUM_CANONICAL)
            .then_some(t)
            .ok_or_else(|| format!("non-canonical token {t} in antibody chain"))
    }

    fn energy(&self, ab: &[usize], burial: &[f64]) -> std::result::Result<f64, String> {
        let mut e = 0.0;
        for (i, &t) in ab.iter().enumerate() {
            e += burial[i] * self.ddg_weight(i, Self::aa(t)?);
        }
        Ok(e)
    }

    fn score_one(&self, c: &Candidate, ctx: &ScoringContext, geo: &Geometry) -> ScoreOutcome {
        let ab = &c.tokens.tokens[..c.tokens.antibody_len];
        let wt = &ctx.wildtype.tokens[..ctx.wildtype.antibody_len];
        if ab.len() != wt.len() {
            return Err(format!("antibody length {} differs from wild type {}", ab.len(), wt.len()));
        }
        if ab.len() > geo.burial.len() {
            return Err("antibody longer than the structure".into());
        }
        let l = ab.len() as f64;
        let w = &self.weights;
        Ok(match self.kind {
            SurrogateKind::SeqPll => ab.iter().map(|&t| Self::aa(t).map(|a| w[a])).sum::<std::result::Result<f64, _>>()? / l,
            SurrogateKind::Ddg => self.energy(ab, &geo.burial)? - self.energy(wt, &geo.burial)?,
            SurrogateKind::Plddt => {
                let mut pen = 0.0;
                for (&a, &b) in ab.iter().zip(wt) {
                    pen += (w[Self::aa(a)?] - w[Self::aa(b)?]).abs();
                }
                100.0 - 5.0 * pen
            }
            SurrogateKind::DeltaSasa => {
                let mut s = 0.0;
                for (i, &t) in ab.iter().enumerate() {
                    s += w[Self::aa(t)?] / (1.0 + geo.burial[i]);
                }
                s
            }
            SurrogateKind::MpnnLl => {
                let mut s = 0.0;
                for (i, &t) in ab.iter().enumerate() {
                    let a = Self::aa(t)?;
                    s += w[a] * geo.sin_phi[i] + w[NUM_CANONICAL + a] * geo.cos_psi[i];
                }
                s / l
            }
            SurrogateKind::Ptm => 1.0 - 0.02 * ab.iter().zip(wt).filter(|(a, b)| a != b).count() as f64,
            SurrogateKind::Iplddt => {
                let max_b = geo.burial.iter().cloned().fold(1.0, f64::max);
                let mut pen = 0.0;
                for (i, (&a, &b)) in ab.iter().zip(wt).enumerate() {
                    pen += geo.burial[i] * (w[Self::aa(a)?] - w[Self::aa(b)?]).abs();
                }
                100.0 - 3.0 * pen / max_b
            }
        })
    }
}

struct Geometry {
    burial: Vec<f64>,
    sin_phi: Vec<f64>,
    cos_psi: Vec<f64>,
}

impl Geometry {
    fn of(ctx: &ScoringContext) -> Self {
        let dihed = backbone_dihedrals(ctx.structure);
        Self {
            burial: ctx.burial(),
            sin_phi: dihed.iter().map(|d| d[0].map_or(0.0, f64::sin)).collect(),
            cos_psi: dihed.iter().map(|d| d[1].map_or(0.0, f64::cos)).collect(),
        }
    }
}

impl Scorer for Surrogate {
    fn id(&self) -> String {
        format!("surrogate:{}:seed{}", self.kind.metric(), self.seed)
    }

    fn metric(&self) -> &str {
        self.kind.metric()
    }

    fn score(&self, candidates: &[Candidate], ctx: &ScoringContext) -> Vec<ScoreOutcome> {
        let geo = Geometry::of(ctx);
        candidates.iter().map(|c| self.score_one(c, ctx, &geo)).collect()
    }
}

/// Registry holding all seven surrogates.
pub fn surrogate_scorers(seed: u64) -> ScorerRegistry {
    let mut r = ScorerRegistry::new();
    for k in SurrogateKind::ALL {
        r.register(Box::new(Surrogate::new(k, seed)));
    }
    r
}

/// Values for one metric read from a scores file; candidates without a row
/// fail with a reason.
#[derive(Debug, Clone)]
pub struct ExternalScorer {
    pub metric: String,
    pub source: String,
    pub values: HashMap<String, f64>,
}

impl Scorer for ExternalScorer {
    fn id(&self) -> String {
        format!("external:{}", self.source)
    }

    fn metric(&self) -> &str {
        &self.metric
    }

    fn score(&self, candidates: &[Candidate], _ctx: &ScoringContext) -> Vec<ScoreOutcome> {
        candidates
            .iter()
            .map(|c| {
                self.values
                    .get(&c.variant_id)
                    .copied()
                    .ok_or_else(|| format!("no {} value in {}", self.metric, self.source))
            })
            .collect()
    }
}

#[derive(Debug, Deserialize)]
struct ScoreRow {
    variant_id: String,
    metric: String,
    value: f64,
}

pub const SCORES_HEADER: [&str; 3] = ["variant_id", "metric", "value"];

/// Reads a `(variant_id, metric, value)` CSV into one scorer per metric.
pub fn load_external_scores(path: impl AsRef<Path>) -> Result<Vec<ExternalScorer>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(f);
    if rdr.headers()?.iter().ne(SCORES_HEADER.iter().copied()) {
        return Err(Error::Data(format!("{}: header must be {}", path.display(), SCORES_HEADER.join(","))));
    }
    let mut by_metric: BTreeMap<String, HashMap<String, f64>> = BTreeMap::new();
    for row in rdr.deserialize() {
        let r: ScoreRow = row?;
        if !r.value.is_finite() {
            return Err(Error::Data(format!("non-finite {} for {}", r.metric, r.variant_id)));
        }
        if by_metric.entry(r.metric.clone()).or_default().insert(r.variant_id.clone(), r.value).is_some() {
            return Err(Error::Data(format!("duplicate {} value for {}", r.metric, r.variant_id)));
        }
    }
    Ok(by_metric
        .into_iter()
        .map(|(metric, values)| ExternalScorer {
            metric,
            source: path.display().to_string(),
            values,
        })
        .collect())
}

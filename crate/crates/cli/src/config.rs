//! Per-command JSON configs. Unknown keys are rejected; a missing `seed`
//! takes the global seed (`--seed`, else `PREFOPT_SEED`, else 0).

use std::path::{Path, PathBuf};

use prefopt_core::dataio::{load_assays, load_structures, Dataset, DatasetSplit, SplitManifest, SplitMode, StructureSet, SyntheticOracleConfig};
use prefopt_core::evalkit::ModelScore;
use prefopt_core::ifmodel::{ModelDims, ModelParameters, ScoreSpan};
use prefopt_core::ifmodel::GenerationConfig;
use prefopt_core::paratope::HeadTrainConfig;
use prefopt_core::screening::PipelineConfig;
use prefopt_core::trainer::{Checkpoint, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

/// Reads a config file, fills absent seeds at the listed JSON pointers
/// (`""` is the top level) and resolves relative paths against the config's
/// directory.
pub fn load<T: DeserializeOwned>(path: &Path, seed: u64, seed_slots: &[&str]) -> CliResult<T> {
    let cfg_err = |msg: String| CliError::Config {
        path: path.display().to_string(),
        msg,
    };
    let text = std::fs::read_to_string(path).map_err(|e| cfg_err(e.to_string()))?;
    let mut v: Value = serde_json::from_str(&text).map_err(|e| cfg_err(e.to_string()))?;
    if !v.is_object() {
        return Err(cfg_err("top level must be a JSON object".into()));
    }
    for slot in seed_slots {
        let (parent, key) = slot.rsplit_once('/').expect("seed slot is a JSON pointer");
        if !parent.is_empty() && v.pointer(parent).is_none() {
            let obj = v.as_object_mut().expect("checked above");
            obj.insert(parent[1..].to_string(), Value::Object(Default::default()));
        }
        if let Some(Value::Object(obj)) = v.pointer_mut(parent) {
            obj.entry(key).or_insert(Value::from(seed));
        }
    }
    let cfg: T = serde_json::from_value(v).map_err(|e| cfg_err(e.to_string()))?;
    Ok(cfg)
}

/// Resolves `p` against `base` unless it is absolute.
pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Where model parameters come from: a checkpoint, or a fresh
/// initialization of `dims` with `init_seed` (default: the command seed).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSource {
    pub checkpoint: Option<PathBuf>,
    pub dims: ModelDims,
    pub init_seed: Option<u64>,
}

impl ModelSource {
    pub fn resolve_paths(&mut self, base: &Path) {
        if let Some(c) = &self.checkpoint {
            self.checkpoint = Some(resolve(base, c));
        }
    }

    pub fn load(&self, seed: u64) -> CliResult<ModelParameters> {
        Ok(match &self.checkpoint {
            Some(p) => Checkpoint::load(p)?.params,
            None => ModelParameters::init(self.dims, self.init_seed.unwrap_or(seed))?,
        })
    }
}

/// `--data` layout: `assays.csv` plus a `structures/` directory of JSON
/// backbones.
pub struct DataDir {
    pub root: PathBuf,
}

pub const ASSAYS_FILE: &str = "assays.csv";
pub const STRUCTURES_DIR: &str = "structures";

impl DataDir {
    pub fn assays(&self) -> CliResult<Dataset> {
        Ok(load_assays(self.root.join(ASSAYS_FILE))?)
    }

    pub fn structures(&self) -> CliResult<StructureSet> {
        Ok(load_structures(self.root.join(STRUCTURES_DIR))?)
    }
}

/// Record subset: every record, or one partition of a saved split manifest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Subset {
    pub manifest: Option<PathBuf>,
    /// `train`, `val` or `test`; used only with a manifest.
    pub partition: Option<String>,
}

impl Subset {
    pub fn resolve_paths(&mut self, base: &Path) {
        if let Some(m) = &self.manifest {
            self.manifest = Some(resolve(base, m));
        }
    }

    pub fn indices(&self, ds: &Dataset) -> CliResult<Vec<usize>> {
        let Some(path) = &self.manifest else {
            return Ok((0..ds.len()).collect());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        let m: SplitManifest = serde_json::from_str(&text)?;
        let split = DatasetSplit::from_manifest(&m, ds)?;
        Ok(match self.partition.as_deref().unwrap_or("test") {
            "train" => split.train,
            "val" => split.val,
            "test" => split.test,
            other => {
                return Err(CliError::Config {
                    path: path.display().to_string(),
                    msg: format!("unknown partition {other:?}"),
                })
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub holdout_assays: Vec<String>,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            mode: SplitMode::Supervised,
            holdout_assays: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthCmd {
    pub seed: u64,
    #[serde(default)]
    pub synth: SyntheticOracleConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainCmd {
    pub seed: u64,
    #[serde(default)]
    pub model: ModelSource,
    #[serde(default)]
    pub split: SplitSpec,
    pub train: TrainConfig,
    /// Checkpoint directory of an interrupted run to continue.
    #[serde(default)]
    pub resume_from: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreCmd {
    pub seed: u64,
    #[serde(default)]
    pub model: ModelSource,
    #[serde(default)]
    pub subset: Subset,
    #[serde(default)]
    pub score_span: ScoreSpan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalCmd {
    pub seed: u64,
    /// CSV with `assay_id`, `variant_id` and the score column.
    pub scores: PathBuf,
    #[serde(default = "default_score_column")]
    pub score_column: String,
    #[serde(default)]
    pub subset: Subset,
}

fn default_score_column() -> String {
    match ModelScore::default() {
        ModelScore::MeanLl => "mean_ll".into(),
        ModelScore::SumLl => "sum_ll".into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateCmd {
    pub seed: u64,
    #[serde(default)]
    pub model: ModelSource,
    /// Assay whose wild type and structure seed the generation.
    pub assay_id: String,
    /// Mutable positions (0-based antibody indices); default: whole antibody.
    #[serde(default)]
    pub region: Option<Vec<usize>>,
    pub generation: GenerationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScreenCmd {
    pub seed: u64,
    pub assay_id: String,
    /// Candidates CSV as written by `generate`.
    pub candidates: PathBuf,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    /// `(variant_id, metric, value)` CSV; its metrics replace surrogates.
    #[serde(default)]
    pub external_scores: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParatopeCmd {
    pub seed: u64,
    #[serde(default)]
    pub model: ModelSource,
    /// Residue label CSV.
    pub labels: PathBuf,
    pub head: HeadTrainConfig,
    /// Antibodies held out for evaluation; empty evaluates on the training set.
    #[serde(default)]
    pub eval_ids: Vec<String>,
}

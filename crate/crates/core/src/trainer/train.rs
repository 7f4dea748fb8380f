//! The fine-tuning loop.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::adamw::{adamw_step, clip_global_norm, AdamWHyper, OptimizerState};
use super::checkpoint::{Checkpoint, CheckpointHeader, FORMAT_VERSION};
use super::pairs::{sample_pairs, PairConfig};
use crate::autodiff::Tensor;
use crate::dataio::{Dataset, DatasetSplit};
use crate::error::{Error, Result};
use crate::evalkit::{per_assay_report, ranked_tables, record_logliks};
use crate::ifmodel::{FeatureStore, FreezeMask, ModelParameters, ScoreSpan, SequenceLogLik, TokenizedSequence};
use crate::preference::{
    dpo_loss_from_rewards, ranking_accuracy_from_rewards, simpo_loss_from_rewards, PairExample, PolicyGraph,
    PreferenceHyperparams, PreferencePair, ReferenceModel,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Nll,
    Dpo,
    Simpo,
}

impl Objective {
    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Nll => "nll",
            Objective::Dpo => "dpo",
            Objective::Simpo => "simpo",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "nll" => Some(Objective::Nll),
            "dpo" => Some(Objective::Dpo),
            "simpo" => Some(Objective::Simpo),
            _ => None,
        }
    }
}

/// Learning-rate schedule over the optimizer steps of the whole run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// `lr · (1 − s/S)` at step `s` of `S` total steps.
    Linear,
}

impl LrSchedule {
    /// Multiplier for the 0-based `step` of `total` steps.
    pub fn factor(self, step: u64, total: u64) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Linear => 1.0 - step as f64 / total.max(1) as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub objective: Objective,
    pub epochs: usize,
    pub batch_size: usize,
    pub hp: PreferenceHyperparams,
    pub pairs: PairConfig,
    /// Cap on validation pairs (and on the train subset used for the
    /// per-epoch train ranking accuracy).
    pub eval_max_pairs: usize,
    pub optimizer: AdamWHyper,
    pub lr_schedule: LrSchedule,
    pub freeze_encoder: bool,
    /// Extra parameter names to freeze.
    pub frozen: Vec<String>,
    pub score_span: ScoreSpan,
    /// Optional global-norm gradient clip.
    pub clip_norm: Option<f64>,
    pub seed: u64,
    /// Evaluate on validation every this many epochs (and after the last).
    pub eval_every: usize,
    /// Directory for `last.ckpt` / `best.ckpt`; nothing is written if unset.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Simpo,
            epochs: 3,
            batch_size: 32,
            hp: PreferenceHyperparams::default(),
            pairs: PairConfig::default(),
            eval_max_pairs: 2000,
            optimizer: AdamWHyper::default(),
            lr_schedule: LrSchedule::Constant,
            freeze_encoder: true,
            frozen: Vec::new(),
            score_span: ScoreSpan::Full,
            clip_norm: None,
            seed: 0,
            eval_every: 1,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Config("epochs, batch_size and eval_every must be ≥ 1".into()));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        self.hp.validate()?;
        self.pairs.validate()?;
        self.optimizer.validate()
    }

    /// SHA-256 of the configuration, ignoring fields that do not affect the
    /// trajectory (epoch count and checkpoint location).
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.epochs = 0;
        c.checkpoint_dir = None;
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn freeze_mask(&self, params: &ModelParameters) -> Result<FreezeMask> {
        let mut mask = if self.freeze_encoder {
            FreezeMask::encoder(params)
        } else {
            FreezeMask::none()
        };
        mask.frozen_names.extend(self.frozen.iter().cloned());
        mask.validate(params)?;
        Ok(mask)
    }
}

/// Trainable share of all parameter scalars.
pub fn trainable_fraction(params: &ModelParameters, mask: &FreezeMask) -> f64 {
    let total = params.count(None);
    let trainable: usize = params
        .iter()
        .filter(|p| !mask.is_frozen(&p.name))
        .map(|p| p.tensor.len())
        .sum();
    trainable as f64 / total as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub ranking_acc: Option<f64>,
    pub spearman_mean: Option<f64>,
}

pub const METRICS_HEADER: [&str; 5] = ["epoch", "split", "loss", "ranking_acc", "spearman_mean"];

pub fn write_metrics_csv<W: std::io::Write>(rows: &[MetricsRow], writer: W) -> Result<()> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        w.write_record([r.epoch.to_string(), r.split.clone(), r.loss.to_string(), opt(r.ranking_acc), opt(r.spearman_mean)])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Inputs shared by every epoch.
pub struct TrainData<'a> {
    pub dataset: &'a Dataset,
    pub features: &'a FeatureStore,
    pub split: &'a DatasetSplit,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParameters,
    /// Parameters at the best validation epoch (final ones if validation
    /// never produced a score).
    pub best_params: ModelParameters,
    pub best_epoch: Option<usize>,
    pub best_val: Option<f64>,
    pub optimizer: OptimizerState,
    pub metrics: Vec<MetricsRow>,
    pub trainable_fraction: f64,
    pub train_pairs: usize,
    /// Final checkpoint (also written to `last.ckpt` when configured).
    pub checkpoint: Checkpoint,
}

struct State {
    params: ModelParameters,
    optimizer: OptimizerState,
    reference: Option<ModelParameters>,
    epoch: usize,
    best_val: Option<f64>,
    best_params: Option<ModelParameters>,
    best_epoch: Option<usize>,
}

/// Trains `init` from scratch. For DPO the reference is `init` itself.
pub fn train(init: ModelParameters, data: &TrainData, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mask = cfg.freeze_mask(&init)?;
    let state = State {
        optimizer: OptimizerState::new(&init, &mask, cfg.optimizer),
        reference: (cfg.objective == Objective::Dpo).then(|| init.clone()),
        params: init,
        epoch: 0,
        best_val: None,
        best_params: None,
        best_epoch: None,
    };
    run(state, mask, data, cfg)
}

/// Continues from a checkpoint through `cfg.epochs` total epochs. `best` is
/// the parameter set stored alongside as the best checkpoint, if any.
pub fn resume(
    ck: Checkpoint,
    best: Option<(usize, ModelParameters)>,
    data: &TrainData,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if ck.header.config_fingerprint != cfg.fingerprint() {
        log::warn!("resuming with a configuration that differs from the checkpoint's");
    }
    if ck.header.objective != cfg.objective {
        return Err(Error::Config(format!(
            "checkpoint objective {} differs from configured {}",
            ck.header.objective.as_str(),
            cfg.objective.as_str()
        )));
    }
    let mask = cfg.freeze_mask(&ck.params)?;
    let optimizer = ck
        .optimizer
        .unwrap_or_else(|| OptimizerState::new(&ck.params, &mask, cfg.optimizer));
    if cfg.objective == Objective::Dpo && ck.reference.is_none() {
        return Err(Error::Checkpoint("DPO checkpoint lacks its reference snapshot".into()));
    }
    let (best_epoch, best_params) = match best {
        Some((e, p)) => (Some(e), Some(p)),
        None => (None, None),
    };
    let state = State {
        params: ck.params,
        optimizer,
        reference: ck.reference,
        epoch: ck.header.epoch,
        best_val: ck.header.best_val,
        best_params,
        best_epoch,
    };
    run(state, mask, data, cfg)
}

/// Per-epoch shuffling stream, independent of earlier epochs so that a
/// resumed run replays the same order.
fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(b"epoch");
    h.update(seed.to_le_bytes());
    h.update((epoch as u64).to_le_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

fn subsample(n: usize, cap: usize, seed: u64) -> Vec<usize> {
    if n <= cap {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = rand::seq::index::sample(&mut rng, n, cap).into_vec();
    v.sort_unstable();
    v
}

/// Distinct record indices touched by `pairs`, in ascending order.
fn pair_records(pairs: &[PreferencePair]) -> Vec<usize> {
    let mut v: Vec<usize> = pairs.iter().flat_map(|p| [p.winner, p.loser]).collect();
    v.sort_unstable();
    v.dedup();
    v
}

fn logliks_by_record(
    params: &ModelParameters,
    data: &TrainData,
    records: &[usize],
    span: ScoreSpan,
) -> Result<HashMap<usize, SequenceLogLik>> {
    let scores = record_logliks(params, data.features, data.dataset, records, span)?;
    Ok(records.iter().copied().zip(scores).collect())
}

/// Objective loss and SimPO ranking accuracy of `pairs` from cached scores.
fn pair_metrics(
    pairs: &[PreferencePair],
    scores: &HashMap<usize, SequenceLogLik>,
    reference: Option<&HashMap<usize, SequenceLogLik>>,
    cfg: &TrainConfig,
) -> Result<(f64, f64)> {
    let hp = cfg.hp;
    let mut loss = 0.0;
    let mut rewards = Vec::with_capacity(pairs.len());
    for p in pairs {
        let (w, l) = (scores[&p.winner], scores[&p.loser]);
        loss += match cfg.objective {
            Objective::Nll => -w.sum_ll,
            Objective::Simpo => simpo_loss_from_rewards(hp.beta * w.mean_ll, hp.beta * l.mean_ll, hp.gamma),
            Objective::Dpo => {
                let r = reference.expect("dpo has reference scores");
                dpo_loss_from_rewards(
                    hp.beta * (w.sum_ll - r[&p.winner].sum_ll),
                    hp.beta * (l.sum_ll - r[&p.loser].sum_ll),
                )
            }
        };
        rewards.push((hp.beta * w.mean_ll, hp.beta * l.mean_ll));
    }
    Ok((loss / pairs.len() as f64, ranking_accuracy_from_rewards(&rewards)?))
}

fn run(mut st: State, mask: FreezeMask, data: &TrainData, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let frac = trainable_fraction(&st.params, &mask);
    if frac == 0.0 {
        return Err(Error::RefuseToTrain("every parameter is frozen".into()));
    }
    if data.split.train.is_empty() {
        return Err(Error::RefuseToTrain("training split is empty".into()));
    }
    log::info!(
        "objective={} trainable_fraction={frac} ({} of {} scalars)",
        cfg.objective.as_str(),
        (frac * st.params.count(None) as f64).round(),
        st.params.count(None)
    );
    let ds = data.dataset;
    let pairs = sample_pairs(ds, &data.split.train, &cfg.pairs, cfg.seed)?;
    let tokens: HashMap<usize, TokenizedSequence> = pair_records(&pairs)
        .into_iter()
        .map(|i| Ok((i, ds.record(i).tokens()?)))
        .collect::<Result<_>>()?;
    let examples: Vec<PairExample> = pairs
        .iter()
        .map(|p| PairExample {
            winner: tokens[&p.winner].clone(),
            loser: tokens[&p.loser].clone(),
        })
        .collect();
    let train_eval: Vec<PreferencePair> = subsample(pairs.len(), cfg.eval_max_pairs, cfg.seed ^ 0x7261_696e)
        .into_iter()
        .map(|i| pairs[i].clone())
        .collect();
    let val_pairs = if data.split.val.is_empty() {
        Vec::new()
    } else {
        let vcfg = PairConfig {
            max_pairs: cfg.eval_max_pairs,
            ..cfg.pairs
        };
        match sample_pairs(ds, &data.split.val, &vcfg, cfg.seed ^ 0x7661_6c00) {
            Ok(p) => p,
            Err(Error::NoPairs(_)) => Vec::new(),
            Err(e) => return Err(e),
        }
    };
    let reference = st.reference.as_ref().map(ReferenceModel::snapshot);
    let ref_sums: Option<HashMap<usize, f64>> = match &reference {
        None => None,
        Some(r) => {
            let mut recs = pair_records(&pairs);
            recs.extend(pair_records(&val_pairs));
            recs.extend(pair_records(&train_eval));
            recs.sort_unstable();
            recs.dedup();
            let s = logliks_by_record(r.params(), data, &recs, cfg.score_span)?;
            Some(s.into_iter().map(|(k, v)| (k, v.sum_ll)).collect())
        }
    };
    let ref_scores: Option<HashMap<usize, SequenceLogLik>> = ref_sums.as_ref().map(|m| {
        m.iter()
            .map(|(&k, &v)| (k, SequenceLogLik { sum_ll: v, mean_ll: 0.0 }))
            .collect()
    });

    let mut metrics = Vec::new();
    let trainable: Vec<String> = st.optimizer.trainable_names().map(str::to_string).collect();
    let start = st.epoch;
    let total_steps = (cfg.epochs * examples.len().div_ceil(cfg.batch_size)) as u64;
    for epoch in start..cfg.epochs {
        let mut rng = epoch_rng(cfg.seed, epoch);
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let diverged = || Error::Diverged {
                epoch: epoch + 1,
                batch: b + 1,
            };
            let mut pg = PolicyGraph::new(&st.params, Some(&mask), data.features, cfg.score_span);
            let loss = match cfg.objective {
                Objective::Nll => {
                    let winners: Vec<TokenizedSequence> = chunk.iter().map(|&i| examples[i].winner.clone()).collect();
                    pg.nll_loss(&winners)
                }
                Objective::Simpo => {
                    let mut ls = Vec::with_capacity(chunk.len());
                    for &i in chunk {
                        ls.push(pg.simpo_loss(&examples[i], &cfg.hp)?.0);
                    }
                    pg.mean_of(&ls)
                }
                Objective::Dpo => {
                    let sums = ref_sums.as_ref().expect("dpo reference");
                    let mut ls = Vec::with_capacity(chunk.len());
                    for &i in chunk {
                        let p = &pairs[i];
                        ls.push(pg.dpo_loss(&examples[i], (sums[&p.winner], sums[&p.loser]), &cfg.hp)?.0);
                    }
                    pg.mean_of(&ls)
                }
            };
            let loss = match loss {
                Err(Error::NonFinite { .. }) => return Err(diverged()),
                other => other?,
            };
            let value = pg.g.value(loss).item();
            if !value.is_finite() {
                return Err(diverged());
            }
            let grads = match pg.g.backward(loss) {
                Err(Error::NonFinite { .. }) => return Err(diverged()),
                other => other?,
            };
            let pv = pg.param_vars();
            let mut g: BTreeMap<String, Tensor> = trainable.iter().map(|n| (n.clone(), grads.wrt(pv.var(n)))).collect();
            if let Some(c) = cfg.clip_norm {
                clip_global_norm(&mut g, c);
            }
            st.optimizer.hyper.lr = cfg.optimizer.lr * cfg.lr_schedule.factor(st.optimizer.step, total_steps);
            let stepped = adamw_step(&mut st.params, &g, &mut st.optimizer);
            st.optimizer.hyper.lr = cfg.optimizer.lr;
            stepped?;
            loss_sum += value;
            batches += 1;
        }
        st.epoch = epoch + 1;

        let train_scores = logliks_by_record(&st.params, data, &pair_records(&train_eval), cfg.score_span)?;
        let (_, train_acc) = pair_metrics(&train_eval, &train_scores, ref_scores.as_ref(), cfg)?;
        metrics.push(MetricsRow {
            epoch: st.epoch,
            split: "train".into(),
            loss: loss_sum / batches as f64,
            ranking_acc: Some(train_acc),
            spearman_mean: None,
        });

        let evaluate = st.epoch % cfg.eval_every == 0 || st.epoch == cfg.epochs;
        let mut improved = false;
        if evaluate && !data.split.val.is_empty() {
            let val_scores = record_logliks(&st.params, data.features, ds, &data.split.val, cfg.score_span)?;
            let mean: Vec<f64> = val_scores.iter().map(|s| s.mean_ll).collect();
            let report = per_assay_report(&ranked_tables(ds, &data.split.val, &mean)?)?;
            let rho = report.aggregate.spearman;
            let (val_loss, val_acc) = if val_pairs.is_empty() {
                (f64::NAN, None)
            } else {
                let by_rec: HashMap<usize, SequenceLogLik> =
                    data.split.val.iter().copied().zip(val_scores.iter().copied()).collect();
                let (l, a) = pair_metrics(&val_pairs, &by_rec, ref_scores.as_ref(), cfg)?;
                (l, Some(a))
            };
            metrics.push(MetricsRow {
                epoch: st.epoch,
                split: "val".into(),
                loss: val_loss,
                ranking_acc: val_acc,
                spearman_mean: rho,
            });
            if let Some(r) = rho {
                if st.best_val.is_none_or(|b| r > b) {
                    st.best_val = Some(r);
                    st.best_params = Some(st.params.clone());
                    st.best_epoch = Some(st.epoch);
                    improved = true;
                }
            }
        }

        let ck = checkpoint_of(&st, &mask, cfg);
        if let Some(dir) = &cfg.checkpoint_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            ck.save(dir.join("last.ckpt"))?;
            if improved {
                ck.save(dir.join("best.ckpt"))?;
            }
        }
        log::info!("epoch {} train_loss {}", st.epoch, loss_sum / batches as f64);
    }
    let checkpoint = checkpoint_of(&st, &mask, cfg);
    Ok(TrainOutcome {
        best_params: st.best_params.clone().unwrap_or_else(|| st.params.clone()),
        best_epoch: st.best_epoch,
        best_val: st.best_val,
        params: st.params,
        optimizer: st.optimizer,
        metrics,
        trainable_fraction: frac,
        train_pairs: pairs.len(),
        checkpoint,
    })
}

fn checkpoint_of(st: &State, mask: &FreezeMask, cfg: &TrainConfig) -> Checkpoint {
    Checkpoint {
        header: CheckpointHeader {
            format_version: FORMAT_VERSION,
            dims: st.params.dims,
            frozen: mask.frozen_names.iter().cloned().collect(),
            objective: cfg.objective,
            seed: cfg.seed,
            epoch: st.epoch,
            optimizer_step: st.optimizer.step,
            adamw: st.optimizer.hyper,
            config_fingerprint: cfg.fingerprint(),
            best_val: st.best_val,
        },
        params: st.params.clone(),
        optimizer: Some(st.optimizer.clone()),
        reference: st.reference.clone(),
    }
}

/// Loads `last.ckpt` and, if present, `best.ckpt` from a checkpoint
/// directory, ready for [`resume`].
pub fn load_run(dir: impl AsRef<Path>) -> Result<(Checkpoint, Option<(usize, ModelParameters)>)> {
    let dir = dir.as_ref();
    let last = Checkpoint::load(dir.join("last.ckpt"))?;
    let best_path = dir.join("best.ckpt");
    let best = if best_path.exists() {
        let b = Checkpoint::load(best_path)?;
        Some((b.header.epoch, b.params))
    } else {
        None
    };
    Ok((last, best))
}

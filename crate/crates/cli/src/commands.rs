//! One function per subcommand. Each stages its outputs in the run
//! directory and promotes them only on success.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use prefopt_core::dataio::{
    save_assays, split_supervised, split_zero_shot, synth_generate, Dataset, SplitMode, VariantRecord, SUPERVISED_RATIOS,
};
use prefopt_core::evalkit::{per_assay_report, ranked_tables, record_logliks, score_records, write_pr_csv, write_roc_csv, AssayReport, ModelScore};
use prefopt_core::ifmodel::{featurize, featurize_all, generate_variants, mutable_pool, TokenizedSequence, Vocabulary};
use prefopt_core::paratope::{embed_structures, evaluate_head, join_labels, load_label_rows, train_head, LabeledEmbeddings, ParatopeHead};
use prefopt_core::screening::{load_external_scores, run_pipeline, surrogate_scorers, Candidate, ScoringContext};
use prefopt_core::trainer::{load_run, resume, train, write_metrics_csv, Objective, TrainData};
use serde::Serialize;
use serde_json::json;

use crate::config::{self, DataDir, EvalCmd, GenerateCmd, ParatopeCmd, ScoreCmd, ScreenCmd, SynthCmd, TrainCmd};
use crate::error::{CliError, CliResult};
use crate::rundir::RunDir;

/// Inputs shared by every subcommand.
pub struct Invocation {
    pub config: PathBuf,
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
}

impl Invocation {
    fn data(&self) -> CliResult<DataDir> {
        self.data
            .clone()
            .map(|root| DataDir { root })
            .ok_or(CliError::MissingFlag("data"))
    }

    fn config_dir(&self) -> PathBuf {
        self.config.parent().map(Path::to_path_buf).unwrap_or_default()
    }
}

fn pretty<T: Serialize>(v: &T) -> CliResult<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn csv_bytes<F>(f: F) -> CliResult<Vec<u8>>
where
    F: FnOnce(&mut Vec<u8>) -> prefopt_core::error::Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn save_report(run: &RunDir, stem: &str, report: &AssayReport) -> CliResult<()> {
    report.save(run.stage(&format!("{stem}.csv")), run.stage(&format!("{stem}.json")))?;
    Ok(())
}

fn wildtype_record<'a>(ds: &'a Dataset, assay_id: &str) -> CliResult<&'a VariantRecord> {
    let rows = ds
        .assays()
        .get(assay_id)
        .ok_or_else(|| prefopt_core::error::Error::Data(format!("unknown assay {assay_id}")))?;
    rows.iter()
        .map(|&i| ds.record(i))
        .find(|r| r.is_wildtype())
        .ok_or_else(|| prefopt_core::error::Error::Data(format!("assay {assay_id} has no WT row")).into())
}

pub fn synth(inv: &Invocation) -> CliResult<()> {
    let cfg: SynthCmd = config::load(&inv.config, inv.seed, &["/seed"])?;
    let mut synth_cfg = cfg.synth.clone();
    synth_cfg.seed = cfg.seed;
    let data = synth_generate(&synth_cfg)?;
    let run = RunDir::create(&inv.out)?;
    save_assays(data.dataset.records(), run.stage(config::ASSAYS_FILE))?;
    let sdir = run.stage(config::STRUCTURES_DIR);
    std::fs::create_dir_all(&sdir)?;
    for (id, s) in &data.structures {
        s.save(sdir.join(format!("{id}.json")))?;
    }
    run.write("oracle.json", pretty(&data.oracle)?)?;
    run.write("resolved_config.json", pretty(&SynthCmd { seed: cfg.seed, synth: synth_cfg })?)?;
    log::info!("synth: {} records, {} structures", data.dataset.len(), data.structures.len());
    run.promote()
}

pub fn train_cmd(inv: &Invocation, objective: Objective) -> CliResult<()> {
    let mut cfg: TrainCmd = config::load(&inv.config, inv.seed, &["/seed", "/train/seed"])?;
    let base = inv.config_dir();
    cfg.model.resolve_paths(&base);
    cfg.resume_from = cfg.resume_from.map(|p| config::resolve(&base, &p));
    cfg.train.objective = objective;
    let data = inv.data()?;
    let ds = data.assays()?;
    let structures = data.structures()?;
    let init = cfg.model.load(cfg.seed)?;
    let features = featurize_all(structures.values(), init.dims.k_neighbors)?;
    let split = match cfg.split.mode {
        SplitMode::Supervised => split_supervised(&ds, SUPERVISED_RATIOS, cfg.seed)?,
        SplitMode::ZeroShot => split_zero_shot(&ds, &cfg.split.holdout_assays, cfg.seed)?,
    };
    let run = RunDir::create(&inv.out)?;
    let mut train_cfg = cfg.train.clone();
    train_cfg.checkpoint_dir = Some(run.stage("checkpoints"));
    cfg.train.checkpoint_dir = Some(run.final_path("checkpoints"));

    let td = TrainData {
        dataset: &ds,
        features: &features,
        split: &split,
    };
    let outcome = match &cfg.resume_from {
        Some(dir) => {
            let (ck, best) = load_run(dir)?;
            resume(ck, best, &td, &train_cfg)?
        }
        None => train(init.clone(), &td, &train_cfg)?,
    };

    split.save_manifest(&ds, run.stage("split.json"))?;
    run.write("metrics.csv", csv_bytes(|b| write_metrics_csv(&outcome.metrics, b))?)?;
    if !split.test.is_empty() {
        let scores = score_records(&outcome.best_params, &features, &ds, &split.test, train_cfg.score_span, ModelScore::MeanLl)?;
        let report = per_assay_report(&ranked_tables(&ds, &split.test, &scores)?)?;
        save_report(&run, "test_report", &report)?;
    }
    let summary = json!({
        "objective": objective.as_str(),
        "trainable_fraction": outcome.trainable_fraction,
        "train_pairs": outcome.train_pairs,
        "best_epoch": outcome.best_epoch,
        "best_val": outcome.best_val,
        "encoder_hash_initial": init.hash(Some(prefopt_core::ifmodel::ParamGroup::Encoder)),
        "encoder_hash_final": outcome.params.hash(Some(prefopt_core::ifmodel::ParamGroup::Encoder)),
        "config_fingerprint": train_cfg.fingerprint(),
    });
    run.write("summary.json", pretty(&summary)?)?;
    run.write("resolved_config.json", pretty(&cfg)?)?;
    log::info!(
        "train: objective {} best epoch {:?} best val {:?}",
        objective.as_str(),
        outcome.best_epoch,
        outcome.best_val
    );
    run.promote()
}

pub fn score(inv: &Invocation) -> CliResult<()> {
    let mut cfg: ScoreCmd = config::load(&inv.config, inv.seed, &["/seed"])?;
    let base = inv.config_dir();
    cfg.model.resolve_paths(&base);
    cfg.subset.resolve_paths(&base);
    let data = inv.data()?;
    let ds = data.assays()?;
    let structures = data.structures()?;
    let params = cfg.model.load(cfg.seed)?;
    let features = featurize_all(structures.values(), params.dims.k_neighbors)?;
    let indices = cfg.subset.indices(&ds)?;
    let lls = record_logliks(&params, &features, &ds, &indices, cfg.score_span)?;

    let run = RunDir::create(&inv.out)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["assay_id", "variant_id", "sum_ll", "mean_ll"])?;
    for (&i, ll) in indices.iter().zip(&lls) {
        let r = ds.record(i);
        w.write_record([
            r.assay_id.as_str(),
            r.variant_id.as_str(),
            &format!("{:?}", ll.sum_ll),
            &format!("{:?}", ll.mean_ll),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Args(e.to_string()))?;
    run.write("scores.csv", bytes)?;
    run.write("resolved_config.json", pretty(&cfg)?)?;
    log::info!("score: {} sequences", indices.len());
    run.promote()
}

/// Reads `(assay_id, variant_id) → column` from a score CSV.
fn read_score_column(path: &Path, column: &str) -> CliResult<HashMap<(String, String), f64>> {
    let f = std::fs::File::open(path).map_err(|e| prefopt_core::error::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut rdr = csv::Reader::from_reader(f);
    let header = rdr.headers()?.clone();
    let col = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| {
            prefopt_core::error::Error::Data(format!("{}: missing column {name}", path.display()))
        })
    };
    let (a, v, s) = (col("assay_id")?, col("variant_id")?, col(column)?);
    let mut out = HashMap::new();
    for row in rdr.records() {
        let row = row?;
        let value: f64 = row[s].trim().parse().map_err(|_| {
            prefopt_core::error::Error::Data(format!("{}: bad {column} value {:?}", path.display(), &row[s]))
        })?;
        out.insert((row[a].to_string(), row[v].to_string()), value);
    }
    Ok(out)
}

pub fn eval(inv: &Invocation) -> CliResult<()> {
    let mut cfg: EvalCmd = config::load(&inv.config, inv.seed, &["/seed"])?;
    let base = inv.config_dir();
    cfg.scores = config::resolve(&base, &cfg.scores);
    cfg.subset.resolve_paths(&base);
    let ds = inv.data()?.assays()?;
    let indices = cfg.subset.indices(&ds)?;
    let table = read_score_column(&cfg.scores, &cfg.score_column)?;
    let scores = indices
        .iter()
        .map(|&i| {
            let r = ds.record(i);
            table.get(&(r.assay_id.clone(), r.variant_id.clone())).copied().ok_or_else(|| {
                prefopt_core::error::Error::Data(format!("no score for ({}, {})", r.assay_id, r.variant_id)).into()
            })
        })
        .collect::<CliResult<Vec<f64>>>()?;
    let report = per_assay_report(&ranked_tables(&ds, &indices, &scores)?)?;
    let run = RunDir::create(&inv.out)?;
    save_report(&run, "report", &report)?;
    run.write("resolved_config.json", pretty(&cfg)?)?;
    log::info!("eval: {} assays, mean spearman {:?}", report.rows.len(), report.aggregate.spearman);
    run.promote()
}

/// `A12G` style label of an antibody substitution (1-based position).
fn mutation_label(pos: usize, from: usize, to: usize) -> String {
    let v = Vocabulary;
    format!("{}{}{}", v.symbol(from), pos + 1, v.symbol(to))
}

pub fn generate(inv: &Invocation) -> CliResult<()> {
    let cfg: GenerateCmd = config::load(&inv.config, inv.seed, &["/seed", "/generation/seed"])?;
    let mut cfg = cfg;
    cfg.model.resolve_paths(&inv.config_dir());
    let data = inv.data()?;
    let ds = data.assays()?;
    let structures = data.structures()?;
    let wt_rec = wildtype_record(&ds, &cfg.assay_id)?;
    let structure = structures.get(&wt_rec.structure_id).ok_or_else(|| {
        prefopt_core::error::Error::Data(format!("structure {} not found", wt_rec.structure_id))
    })?;
    let params = cfg.model.load(cfg.seed)?;
    let features = featurize(structure, params.dims.k_neighbors)?;
    let wt = wt_rec.tokens()?;
    let region = cfg.region.clone().unwrap_or_else(|| (0..wt.antibody_len).collect());
    if let Some(&p) = region.iter().find(|&&p| p >= wt.antibody_len) {
        return Err(prefopt_core::error::Error::Sequence(format!("region position {p} is outside the antibody chain")).into());
    }
    let pool = mutable_pool(&features, &wt, &region, &params)?;
    let generated = generate_variants(&wt, &pool, &cfg.generation)?;

    let run = RunDir::create(&inv.out)?;
    let vocab = Vocabulary;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["variant_id", "heavy_chain_seq", "antigen_seq", "mutations"])?;
    for (k, v) in generated.variants.iter().enumerate() {
        let muts: Vec<String> = v.mutations.iter().map(|&(p, a, b)| mutation_label(p, a, b)).collect();
        w.write_record([
            format!("g{:05}", k + 1),
            vocab.decode(&v.tokens[..wt.antibody_len]),
            wt_rec.antigen_seq.clone(),
            muts.join(";"),
        ])?;
    }
    run.write("variants.csv", w.into_inner().map_err(|e| CliError::Args(e.to_string()))?)?;
    let pool_json: Vec<_> = pool
        .entries
        .iter()
        .map(|e| {
            json!({
                "position": e.position,
                "wildtype": vocab.symbol(e.wildtype_token),
                "wildtype_logp": e.wildtype_logp,
                "improving": e.improving.iter().map(|&(t, lp)| json!({"residue": vocab.symbol(t), "logp": lp})).collect::<Vec<_>>(),
            })
        })
        .collect();
    run.write(
        "pool.json",
        pretty(&json!({
            "assay_id": cfg.assay_id,
            "pool": pool_json,
            "generated": generated.variants.len(),
            "exhausted": generated.exhausted,
        }))?,
    )?;
    run.write("resolved_config.json", pretty(&cfg)?)?;
    log::info!("generate: pool of {} positions, {} variants", pool.len(), generated.variants.len());
    run.promote()
}

fn read_candidates(path: &Path, structure_id: &str) -> CliResult<Vec<Candidate>> {
    let f = std::fs::File::open(path).map_err(|e| prefopt_core::error::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut rdr = csv::Reader::from_reader(f);
    let header = rdr.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| prefopt_core::error::Error::Data(format!("{}: missing column {name}", path.display())))
    };
    let (id, heavy, antigen) = (col("variant_id")?, col("heavy_chain_seq")?, col("antigen_seq")?);
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        out.push(Candidate {
            variant_id: row[id].to_string(),
            tokens: TokenizedSequence::from_chains(&row[heavy], &row[antigen], structure_id)?,
        });
    }
    Ok(out)
}

pub fn screen(inv: &Invocation) -> CliResult<()> {
    let mut cfg: ScreenCmd = config::load(&inv.config, inv.seed, &["/seed"])?;
    let base = inv.config_dir();
    cfg.candidates = config::resolve(&base, &cfg.candidates);
    cfg.external_scores = cfg.external_scores.map(|p| config::resolve(&base, &p));
    let data = inv.data()?;
    let ds = data.assays()?;
    let structures = data.structures()?;
    let wt_rec = wildtype_record(&ds, &cfg.assay_id)?;
    let structure = structures.get(&wt_rec.structure_id).ok_or_else(|| {
        prefopt_core::error::Error::Data(format!("structure {} not found", wt_rec.structure_id))
    })?;
    let wt = wt_rec.tokens()?;
    let candidates = read_candidates(&cfg.candidates, &wt_rec.structure_id)?;
    let mut registry = surrogate_scorers(cfg.seed);
    if let Some(p) = &cfg.external_scores {
        for s in load_external_scores(p)? {
            registry.register(Box::new(s));
        }
    }
    let ctx = ScoringContext {
        structure,
        wildtype: &wt,
    };
    let result = run_pipeline(&candidates, &ctx, &registry, &cfg.pipeline)?;
    let run = RunDir::create(&inv.out)?;
    result.save(run.stage(""))?;
    run.write("resolved_config.json", pretty(&cfg)?)?;
    log::info!(
        "screen: {} candidates, {} stage-1 survivors, panel of {}",
        result.counts.input,
        result.counts.stage1_survivors,
        result.counts.panel
    );
    run.promote()
}

pub fn paratope(inv: &Invocation) -> CliResult<()> {
    let mut cfg: ParatopeCmd = config::load(&inv.config, inv.seed, &["/seed", "/head/seed"])?;
    let base = inv.config_dir();
    cfg.model.resolve_paths(&base);
    cfg.labels = config::resolve(&base, &cfg.labels);
    let structures = inv.data()?.structures()?;
    let params = cfg.model.load(cfg.seed)?;
    let hash_before = params.hash(None);
    let labels = join_labels(&load_label_rows(&cfg.labels)?, &structures)?;
    let mut embeddings = embed_structures(&params, &structures)?;
    if let Some(id) = cfg.eval_ids.iter().find(|id| !labels.contains_key(*id)) {
        return Err(prefopt_core::error::Error::Data(format!("eval id {id} has no labels")).into());
    }
    let mut train_set = Vec::new();
    let mut eval_set = Vec::new();
    for (id, l) in labels {
        let emb = embeddings.remove(&id).expect("labels join onto known structures");
        let item = LabeledEmbeddings::new(id.clone(), emb, l)?;
        if cfg.eval_ids.contains(&id) {
            eval_set.push(item);
        } else {
            train_set.push(item);
        }
    }
    let eval_on = if eval_set.is_empty() { &train_set } else { &eval_set };
    let head = ParatopeHead::init(params.dims.d, cfg.head.hidden, cfg.head.seed);
    let trained = train_head(&train_set, head, &cfg.head)?;
    let ev = evaluate_head(&trained.head, eval_on)?;
    let hash_after = params.hash(None);

    let run = RunDir::create(&inv.out)?;
    run.write("head.json", pretty(&trained.head)?)?;
    run.write("roc.csv", csv_bytes(|b| write_roc_csv(&ev.roc, b))?)?;
    run.write("pr.csv", csv_bytes(|b| write_pr_csv(&ev.pr, b))?)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "loss"])?;
    for (e, l) in trained.loss_curve.iter().enumerate() {
        w.write_record([e.to_string(), format!("{l:?}")])?;
    }
    run.write("loss.csv", w.into_inner().map_err(|e| CliError::Args(e.to_string()))?)?;
    let per_id: BTreeMap<&str, usize> = eval_on.iter().map(|e| (e.id.as_str(), e.labels.len())).collect();
    run.write(
        "metrics.json",
        pretty(&json!({
            "roc_auc": ev.roc_auc,
            "average_precision": ev.average_precision,
            "evaluated": per_id,
            "base_model_hash_before": hash_before,
            "base_model_hash_after": hash_after,
        }))?,
    )?;
    run.write("resolved_config.json", pretty(&cfg)?)?;
    log::info!("paratope: roc_auc {} ap {}", ev.roc_auc, ev.average_precision);
    run.promote()
}

//! One function per CLI verb.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scirec::checkpoint::{Checkpoint, CheckpointConfig};
use scirec::corpus::{parse_raw, tokenize, Corpus, FormatManifest, PreprocessOptions};
use scirec::encoder::{EncoderConfig, EncoderKind};
use scirec::evaluator::{
    evaluate_fold, evaluate_tags, grid_cells, make_split, mean_curve, results_table, run_grid, validation_recall,
    CellResult, Fold, GridCell, SplitMode, SplitPlan, DEFAULT_MS, SELECTION_M,
};
use scirec::model::{HybridModel, MultiTaskConfig};
use scirec::trainer::{fit, EvalRecord, FitOutcome, TrainConfig, TrainObserver};
use serde_json::{json, Value};

use crate::config::{GridConfig, RunConfig};
use crate::manifest::RunManifest;
use crate::plot;

pub const OUTPUT_ROOT_ENV: &str = "SCIREC_OUTPUT_ROOT";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const CURVE_FILE: &str = "recall_curve.csv";
pub const SPLIT_FILE: &str = "split.json";

/// Output paths: relative ones resolve against the output root.
pub fn output_path(p: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if p.is_relative() => PathBuf::from(root).join(p),
        _ => p.to_path_buf(),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn load_split(path: &Path) -> Result<SplitPlan> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

// preprocess

pub struct PreprocessArgs {
    pub raw: PathBuf,
    pub format: String,
    pub options: PreprocessOptions,
    pub out: PathBuf,
}

pub fn preprocess(args: &PreprocessArgs) -> Result<()> {
    let format = FormatManifest::resolve(&args.format)?;
    let raw = parse_raw(&args.raw, &format)?;
    info!("{}", raw.summary());
    let corpus = Corpus::preprocess(&raw, &args.options)?;
    let out = output_path(&args.out);
    corpus.save(&out)?;
    let config = json!({ "raw": args.raw, "format": format, "options": args.options, "out": args.out });
    RunManifest::new("preprocess", config, None, &[&args.raw])?.write(&out)?;
    let m = &corpus.manifest;
    println!(
        "{} users, {} items, {} interactions (density {:.5}), {} tags, {} backfilled items, vocabulary {} -> {}",
        m.n_users,
        m.n_items,
        m.n_interactions,
        m.density,
        m.n_tags,
        m.n_backfilled_items,
        m.vocabulary_size,
        out.display()
    );
    Ok(())
}

// split

pub fn split(corpus_dir: &Path, mode: SplitMode, seed: u64, out: &Path) -> Result<()> {
    let corpus = Corpus::load(corpus_dir)?;
    let plan = make_split(&corpus.interactions, mode, seed)?;
    let out = output_path(out);
    write(&out.join(SPLIT_FILE), serde_json::to_string(&plan)? + "\n")?;
    let config = json!({ "corpus": corpus_dir, "mode": mode, "seed": seed });
    RunManifest::new("split", config, Some(seed), &[corpus_dir])?.write(&out)?;
    println!("{mode} split with {} folds -> {}", plan.n_folds, out.join(SPLIT_FILE).display());
    Ok(())
}

// train

/// Saves a checkpoint every time validation recall improves.
struct CheckpointWriter<'a> {
    path: PathBuf,
    template: &'a CheckpointConfig,
}

impl TrainObserver for CheckpointWriter<'_> {
    fn on_improvement(&mut self, model: &HybridModel, record: &EvalRecord) -> scirec::Result<()> {
        let config = CheckpointConfig {
            step: record.step,
            validation_recall: Some(record.recall),
            ..self.template.clone()
        };
        Checkpoint {
            config,
            model: model.clone(),
        }
        .save(&self.path)
    }
}

fn checkpoint_template(corpus: &Corpus, encoder: &EncoderConfig, multitask: &MultiTaskConfig) -> CheckpointConfig {
    CheckpointConfig {
        encoder: encoder.clone(),
        multitask: multitask.clone(),
        n_users: corpus.n_users(),
        n_items: corpus.n_items(),
        n_tags: corpus.n_tags(),
        vocab_size: corpus.vocabulary().len(),
        vocab_hash: corpus.manifest.vocabulary_hash.clone(),
        step: 0,
        validation_recall: None,
    }
}

fn train_fold(
    corpus: &Corpus,
    fold: &Fold,
    encoder: &EncoderConfig,
    multitask: &MultiTaskConfig,
    train: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> scirec::Result<FitOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
    let model = HybridModel::init(
        encoder,
        corpus.vocabulary().len(),
        corpus.n_users(),
        corpus.n_items(),
        corpus.n_tags(),
        &mut rng,
    )?;
    let seqs = &corpus.documents.sequences;
    let data = fold.training_data(seqs, &corpus.interactions, &corpus.tags);
    let mut validate = |m: &HybridModel| validation_recall(m, seqs, fold);
    fit(model, &data, multitask, train, &mut validate, observer)
}

#[derive(Default)]
pub struct TrainOverrides {
    pub max_steps: Option<usize>,
    pub seed: Option<u64>,
    pub lambda: Option<f64>,
    pub encoder: Option<EncoderKind>,
    pub fold: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub serial: bool,
}

pub fn train(config_path: &Path, overrides: &TrainOverrides) -> Result<()> {
    let mut cfg = RunConfig::load(config_path)?;
    if let Some(v) = overrides.max_steps {
        cfg.train.max_steps = v;
        cfg.train.eval_every = cfg.train.eval_every.min(v);
    }
    if let Some(v) = overrides.seed {
        cfg.seed = v;
        cfg.train.seed = v;
    }
    if let Some(v) = overrides.lambda {
        cfg.multitask.lambda = v;
    }
    if let Some(v) = overrides.encoder {
        cfg.encoder.kind = v;
    }
    if let Some(v) = overrides.fold {
        cfg.fold = v;
    }
    if let Some(v) = &overrides.output_dir {
        cfg.output_dir = v.clone();
    }
    if overrides.serial {
        cfg.train.parallel = false;
    }
    cfg.validate()?;

    let corpus = Corpus::load(&cfg.corpus)?;
    if corpus.manifest.options.max_length != cfg.max_length {
        bail!(
            "invalid configuration: max_length is {} but the corpus was truncated at {}",
            cfg.max_length,
            corpus.manifest.options.max_length
        );
    }
    let plan = load_split(&cfg.split)?;
    let fold = plan.fold(&corpus.interactions, cfg.fold)?;
    let out = output_path(&cfg.output_dir);
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let template = checkpoint_template(&corpus, &cfg.encoder, &cfg.multitask);
    let ckpt_path = out.join(CHECKPOINT_FILE);
    let mut writer = CheckpointWriter {
        path: ckpt_path.clone(),
        template: &template,
    };
    let outcome = train_fold(&corpus, &fold, &cfg.encoder, &cfg.multitask, &cfg.train, &mut writer)?;

    // the observer already wrote this model; rewriting keeps the file in
    // step with the returned outcome even if the last write was interrupted
    Checkpoint {
        config: CheckpointConfig {
            step: outcome.best_step,
            validation_recall: Some(outcome.best_recall),
            ..template.clone()
        },
        model: outcome.best_model.clone(),
    }
    .save(&ckpt_path)?;

    let mut log = String::from("event,step,loss,rating_loss,tag_loss,validation_recall,improved\n");
    let mut evals = outcome.evals.iter().peekable();
    for e in &outcome.log {
        writeln!(log, "step,{},{},{},{},,", e.step, e.loss, e.rating_loss, e.tag_loss)?;
        while let Some(r) = evals.next_if(|r| r.step == e.step) {
            writeln!(log, "eval,{},,,,{},{}", r.step, r.recall, r.improved)?;
        }
    }
    write(&out.join(TRAIN_LOG_FILE), log)?;

    let effective = cfg.to_value();
    write(&out.join("config.json"), serde_json::to_string_pretty(&effective)? + "\n")?;
    RunManifest::new("train", effective, Some(cfg.seed), &[config_path, &cfg.corpus, &cfg.split])?.write(&out)?;
    println!(
        "{} steps{}, best validation Recall@{SELECTION_M} {:.4} at step {} -> {}",
        outcome.steps_taken,
        if outcome.stopped_early { " (early stop)" } else { "" },
        outcome.best_recall,
        outcome.best_step,
        ckpt_path.display()
    );
    Ok(())
}

// evaluate

fn load_checked(checkpoint: &Path, corpus: &Corpus) -> Result<Checkpoint> {
    let ck = Checkpoint::load(checkpoint)?;
    ck.check_vocabulary(&corpus.manifest.vocabulary_hash)?;
    let c = &ck.config;
    if (c.n_users, c.n_items, c.n_tags) != (corpus.n_users(), corpus.n_items(), corpus.n_tags()) {
        bail!(
            "checkpoint covers {} users, {} items, {} tags; corpus has {}, {}, {}",
            c.n_users,
            c.n_items,
            c.n_tags,
            corpus.n_users(),
            corpus.n_items(),
            corpus.n_tags()
        );
    }
    Ok(ck)
}

pub fn evaluate(checkpoint: &Path, corpus_dir: &Path, split_path: &Path, fold_index: usize, out: &Path) -> Result<()> {
    let corpus = Corpus::load(corpus_dir)?;
    let ck = load_checked(checkpoint, &corpus)?;
    let plan = load_split(split_path)?;
    let fold = plan.fold(&corpus.interactions, fold_index)?;
    let seqs = &corpus.documents.sequences;
    let curve = evaluate_fold(&ck.model, seqs, &fold, &DEFAULT_MS)?;
    let tag_recall = match fold.mode {
        SplitMode::Cold => Some(evaluate_tags(&ck.model, seqs, &corpus.tags, &fold.test_items, SELECTION_M)?),
        SplitMode::Warm => None,
    };
    let recall_50 = curve.at(SELECTION_M).expect("default cut-offs include 50");

    let out = output_path(out);
    write(&out.join(CURVE_FILE), curve.to_csv()?)?;
    let summary = json!({
        "mode": fold.mode,
        "fold": fold_index,
        "n_users": curve.n_users(),
        "recall_at_50": recall_50,
        "tag_recall_at_50": tag_recall,
    });
    write(&out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    let config = json!({ "checkpoint": checkpoint, "corpus": corpus_dir, "split": split_path, "fold": fold_index });
    RunManifest::new("evaluate", config, None, &[checkpoint, corpus_dir, split_path])?.write(&out)?;

    let tags = tag_recall.map_or(String::new(), |t| format!(", tag Recall@{SELECTION_M} {t:.4}"));
    println!(
        "{} fold {fold_index}: Recall@{SELECTION_M} {recall_50:.4} over {} users{tags}",
        fold.mode,
        curve.n_users()
    );
    Ok(())
}

// recommend

pub fn recommend(checkpoint: &Path, corpus_dir: &Path, user: usize, n: usize, out: &Path) -> Result<()> {
    let corpus = Corpus::load(corpus_dir)?;
    let ck = load_checked(checkpoint, &corpus)?;
    if user >= corpus.n_users() {
        return Err(scirec::Error::IndexOutOfRange {
            kind: "user",
            index: user,
            len: corpus.n_users(),
        }
        .into());
    }
    let seqs: Vec<&[u32]> = corpus.documents.sequences.iter().map(Vec::as_slice).collect();
    let encoded = ck.model.encode_many(&seqs)?;
    let candidates: Vec<(usize, _)> = (0..corpus.n_items()).map(|j| (j, encoded.row(j))).collect();
    let known: HashSet<usize> = corpus.interactions.positives(user).iter().copied().collect();
    let ranked = ck.model.tables.recommend_top_n(user, &candidates, true, n, &known)?;

    let mut table = String::from("rank\titem_id\ttitle\tscore\n");
    for (rank, (j, score)) in ranked.iter().enumerate() {
        let item = &corpus.items[*j];
        writeln!(table, "{}\t{}\t{}\t{score:.6}", rank + 1, item.id, item.title.replace('\t', " "))?;
    }
    let out = output_path(out);
    write(&out.join("recommendations.tsv"), &table)?;
    let config = json!({ "checkpoint": checkpoint, "corpus": corpus_dir, "user": user, "n": n });
    RunManifest::new("recommend", config, None, &[checkpoint, corpus_dir])?.write(&out)?;
    print!("{table}");
    Ok(())
}

// predict-tags

pub fn predict_tags(checkpoint: &Path, corpus_dir: &Path, title: &str, abstract_text: &str, k: usize, out: &Path) -> Result<()> {
    let corpus = Corpus::load(corpus_dir)?;
    let ck = load_checked(checkpoint, &corpus)?;
    let mut tokens = tokenize(title, abstract_text);
    if tokens.is_empty() {
        return Err(scirec::Error::Empty("text after tokenization".into()).into());
    }
    tokens.truncate(corpus.documents.max_length);
    let ids = corpus.vocabulary().encode(&tokens);
    let g = ck.model.encoder.encode(&ids)?;
    let mut probs: Vec<(usize, f64)> = (0..corpus.n_tags())
        .map(|l| Ok((l, ck.model.tables.predict_tag_prob(g.view(), l)?)))
        .collect::<scirec::Result<_>>()?;
    probs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    probs.truncate(k);

    let mut table = String::from("tag\tprobability\n");
    for (l, p) in &probs {
        writeln!(table, "{}\t{p:.6}", corpus.tags.tag_vocab()[*l])?;
    }
    let out = output_path(out);
    write(&out.join("tags.tsv"), &table)?;
    let config = json!({ "checkpoint": checkpoint, "corpus": corpus_dir, "title": title, "abstract": abstract_text, "k": k });
    RunManifest::new("predict-tags", config, None, &[checkpoint, corpus_dir])?.write(&out)?;
    print!("{table}");
    Ok(())
}

// grid

fn cell_slug(c: &GridCell) -> String {
    format!("{}_{}_{}_{}", c.dataset, c.mode, c.max_length, c.encoder)
}

fn run_cell(cfg: &GridConfig, cell: &GridCell, out: &Path) -> scirec::Result<CellResult> {
    let dataset = cfg.datasets.iter().find(|d| d.name == cell.dataset).expect("cells come from the config");
    let dir = dataset.corpus(cell.max_length).ok_or_else(|| {
        scirec::Error::Config(format!("dataset {} has no {}-token corpus", dataset.name, cell.max_length))
    })?;
    let corpus = Corpus::load(dir)?;
    if corpus.manifest.options.max_length != cell.max_length {
        return Err(scirec::Error::Config(format!(
            "{} was truncated at {} tokens, not {}",
            dir.display(),
            corpus.manifest.options.max_length,
            cell.max_length
        )));
    }
    let plan = make_split(&corpus.interactions, cell.mode, cfg.seed)?;
    let encoder = EncoderConfig {
        kind: cell.encoder,
        ..cfg.encoder.clone()
    };
    encoder.validate()?;
    let seqs = &corpus.documents.sequences;
    let mut curves = Vec::new();
    let mut tag_recalls = Vec::new();
    for &f in &cfg.folds {
        info!("grid cell {} fold {f}", cell_slug(cell));
        let fold = plan.fold(&corpus.interactions, f)?;
        let outcome = train_fold(&corpus, &fold, &encoder, &cfg.multitask, &cfg.train, &mut ())?;
        curves.push(evaluate_fold(&outcome.best_model, seqs, &fold, &DEFAULT_MS)?);
        if cell.mode == SplitMode::Cold {
            tag_recalls.push(evaluate_tags(&outcome.best_model, seqs, &corpus.tags, &fold.test_items, SELECTION_M)?);
        }
    }
    let curve = mean_curve(&curves)?;
    let path = out.join(format!("{}.csv", cell_slug(cell)));
    fs::create_dir_all(out).map_err(|e| scirec::Error::Config(format!("creating {}: {e}", out.display())))?;
    fs::write(&path, curve.to_csv()?).map_err(|e| scirec::Error::Config(format!("writing {}: {e}", path.display())))?;
    let tag_recall = (!tag_recalls.is_empty()).then(|| tag_recalls.iter().sum::<f64>() / tag_recalls.len() as f64);
    Ok(CellResult { curve, tag_recall })
}

pub fn grid(config_path: &Path) -> Result<()> {
    let cfg = GridConfig::load(config_path)?;
    cfg.validate()?;
    let names: Vec<String> = cfg.datasets.iter().map(|d| d.name.clone()).collect();
    let cells = grid_cells(&names, &cfg.encoders, &cfg.lengths, &cfg.modes);
    let out = output_path(&cfg.output_dir);
    let rows = run_grid(&cells, &mut |cell| run_cell(&cfg, cell, &out));
    let table = results_table(&rows);
    write(&out.join("results.md"), &table)?;
    write(&out.join("results.json"), serde_json::to_string_pretty(&rows)? + "\n")?;

    let mut inputs: Vec<&Path> = vec![config_path];
    inputs.extend(cfg.datasets.iter().flat_map(|d| [d.corpus_200.as_deref(), d.corpus_400.as_deref()]).flatten());
    let config: Value = serde_json::to_value(&cfg)?;
    RunManifest::new("grid", config, Some(cfg.seed), &inputs)?.write(&out)?;
    print!("{table}");
    let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
    if failed > 0 {
        bail!("{failed} of {} grid cells failed; see {}", rows.len(), out.join("results.md").display());
    }
    Ok(())
}

// export-curves

pub struct LabelledCurve {
    pub label: String,
    pub ms: Vec<usize>,
    pub recalls: Vec<f64>,
}

fn read_curve(label: &str, path: &Path) -> Result<LabelledCurve> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut ms = Vec::new();
    let mut recalls = Vec::new();
    for rec in r.deserialize() {
        let (m, recall, _): (usize, f64, usize) = rec.with_context(|| format!("parsing {}", path.display()))?;
        ms.push(m);
        recalls.push(recall);
    }
    if ms.is_empty() {
        bail!("{} holds no curve rows", path.display());
    }
    Ok(LabelledCurve {
        label: label.to_string(),
        ms,
        recalls,
    })
}

/// `label=path` pairs; a bare path is labelled by its file stem.
pub fn parse_curve_input(spec: &str) -> (String, PathBuf) {
    match spec.split_once('=') {
        Some((label, path)) => (label.to_string(), PathBuf::from(path)),
        None => {
            let path = PathBuf::from(spec);
            let label = path.file_stem().map_or(spec.to_string(), |s| s.to_string_lossy().into_owned());
            (label, path)
        }
    }
}

pub fn export_curves(inputs: &[String], out: &Path, svg: Option<&Path>) -> Result<()> {
    if inputs.is_empty() {
        bail!("no curves given");
    }
    let parsed: Vec<(String, PathBuf)> = inputs.iter().map(|s| parse_curve_input(s)).collect();
    let curves = parsed.iter().map(|(l, p)| read_curve(l, p)).collect::<Result<Vec<_>>>()?;
    if let Some(c) = curves.iter().find(|c| c.ms != curves[0].ms) {
        bail!("curve {} uses different cut-offs from {}", c.label, curves[0].label);
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["M".to_string()];
    header.extend(curves.iter().map(|c| c.label.clone()));
    w.write_record(&header)?;
    for (k, m) in curves[0].ms.iter().enumerate() {
        let mut row = vec![m.to_string()];
        row.extend(curves.iter().map(|c| c.recalls[k].to_string()));
        w.write_record(&row)?;
    }
    let out_path = output_path(out);
    write(&out_path, w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?)?;
    if let Some(svg) = svg {
        write(&output_path(svg), plot::recall_svg(&curves))?;
    }
    let dir = out_path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
    let input_paths: Vec<&Path> = parsed.iter().map(|(_, p)| p.as_path()).collect();
    let config = json!({ "inputs": inputs, "out": out, "svg": svg });
    RunManifest::new("export-curves", config, None, &input_paths)?.write(&dir)?;
    println!("{} curves -> {}", curves.len(), out_path.display());
    Ok(())
}

//! Command-line entry point: synthetic data generation, vocabulary
//! construction, training, prediction, evaluation, retrieval-augmented
//! inference, gradient checking, and prompt-assembly dumps.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/config error, 3 numeric
//! failure.

#![forbid(unsafe_code)]

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, CommandFactory, Parser, Subcommand};

use vix::config::{load_key_values, render_key_values};
use vix::corpus::{
    self, BANK_VERSION, BankSide, ImageBank, Split, SynthConfig, load_ground_truth, load_split_dir,
};
use vix::encoder::{
    Banks, CKPT_VERSION, EncoderParams, embed_batch, load_checkpoint, save_checkpoint,
};
use vix::error::{Error, Result};
use vix::gradcheck::{self, GradCheckConfig};
use vix::linalg::Mat;
use vix::manifest::{RunManifest, TOOL_VERSION};
use vix::metrics::{
    PropensityModel, compute_propensities, label_frequencies, precision_at_k, psp_at_k,
    recall_at_k, render_metric_svg,
};
use vix::prompt::{ImageRef, PrefixSet, PromptMode, Vocab, assemble, assemble_batch, render_slots};
use vix::rai::{RaiConfig, rai_predict_all};
use vix::retrieval::{DEFAULT_BLOCK_SIZE, EmbeddingIndex, PredictionSet};
use vix::trainer::{self, TrainConfig};

/// Gradient-check pass gate on the max relative error.
const GRADCHECK_GATE: f64 = 1e-4;

#[derive(Parser)]
#[command(
    name = "vix",
    about = "Desk-scale multimodal extreme multi-label retrieval",
    disable_version_flag = true
)]
struct Cli {
    /// Print tool and file-format versions.
    #[arg(long)]
    version: bool,

    /// Worker threads (default: machine parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    cmd: Option<Cmd>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a planted-cluster synthetic corpus (train/ and test/).
    GenSynth(GenSynthArgs),
    /// Build a vocabulary file from a split directory's texts.
    BuildVocab(BuildVocabArgs),
    /// Train an encoder and write checkpoints plus logs.
    Train(TrainArgs),
    /// Embed a split and write top-k label predictions.
    Predict(PredictArgs),
    /// Score a prediction file against ground truth.
    Evaluate(EvaluateArgs),
    /// Retrieval-augmented inference over a trained model.
    Rai(RaiArgs),
    /// Compare analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Dump the slot layout of a prompt template on a builtin fixture.
    Assemble(AssembleArgs),
}

#[derive(Args)]
struct GenSynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    queries: usize,
    /// Test queries (default: a quarter of --queries).
    #[arg(long)]
    test_queries: Option<usize>,
    #[arg(long, default_value_t = 500)]
    labels: usize,
    #[arg(long, default_value_t = 50)]
    clusters: usize,
    #[arg(long, default_value_t = 2000)]
    vocab: usize,
    #[arg(long, default_value_t = 10)]
    pos_per_query: usize,
    /// Fraction of queries whose text cannot resolve their cluster.
    #[arg(long, default_value_t = 0.0)]
    ambiguity: f64,
    #[arg(long, default_value_t = 8)]
    image_dim: usize,
    /// Probability that an item gets an image vector.
    #[arg(long, default_value_t = 1.0)]
    image_availability: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct BuildVocabArgs {
    /// Split directory (queries.txt/labels.txt) to read texts from.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 20_000)]
    vocab_max: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Flat key=value config file (`#` comments allowed).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Corpus root (containing train/ and optionally test/) or a single
    /// split directory. Overrides the config file's `data` key.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Override any config key (repeatable), e.g. --set epochs=20.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    mode: Option<String>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Split directory to embed and rank.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
    /// Vocabulary file (default: vocab.tsv next to the checkpoint).
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Prompt/config file (default: train_config.txt next to the checkpoint).
    #[arg(long)]
    train_config: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BLOCK_SIZE)]
    block_size: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    preds: PathBuf,
    /// Ground-truth file for the evaluated split.
    #[arg(long)]
    gt: PathBuf,
    /// Precision/PSP cutoffs, comma-separated.
    #[arg(long, default_value = "1,5")]
    k: String,
    /// Recall cutoffs, comma-separated.
    #[arg(long, default_value = "10,100")]
    recall_k: String,
    #[arg(long = "psp-A", default_value_t = 0.55)]
    psp_a: f64,
    #[arg(long = "psp-B", default_value_t = 1.5)]
    psp_b: f64,
    /// Ground truth to estimate label propensities from (default: --gt).
    #[arg(long)]
    train_gt: Option<PathBuf>,
    /// Write an SVG bar chart of the reported metrics.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args)]
struct RaiArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Training split directory (queries feed the auxiliary search).
    #[arg(long)]
    train: PathBuf,
    /// Split directory to predict for.
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value_t = 0.9)]
    lambda: f64,
    #[arg(long = "temp", default_value_t = 0.05)]
    temperature: f64,
    #[arg(long, default_value_t = 100)]
    k_search: usize,
    /// Mass aggregation per label: sum or max.
    #[arg(long, default_value = "sum")]
    agg: String,
    #[arg(long, default_value_t = 10)]
    output_k: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    train_config: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BLOCK_SIZE)]
    block_size: usize,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 4)]
    d: usize,
    #[arg(long, default_value_t = 3)]
    m: usize,
    #[arg(long, default_value_t = 6)]
    max_len: usize,
    #[arg(long, default_value_t = 8)]
    fixtures: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct AssembleArgs {
    #[arg(long, default_value = "decoder-fused")]
    mode: String,
    #[arg(long, default_value_t = 12)]
    max_len: usize,
    #[arg(long, default_value_t = 2)]
    image_cap: usize,
    /// Write the slot listing here instead of stdout.
    #[arg(long)]
    dump_golden: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let ok = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = e.print();
            return if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    if cli.version {
        println!("vix {TOOL_VERSION}");
        println!("checkpoint format {CKPT_VERSION}");
        println!("image bank format {BANK_VERSION}");
        return ExitCode::SUCCESS;
    }
    let Some(cmd) = cli.cmd else {
        let _ = Cli::command().print_help();
        return ExitCode::from(1);
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        // Ignore failure: the global pool can only be set once.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let started = Instant::now();
    let result = match cmd {
        Cmd::GenSynth(a) => run_gen_synth(&a, started),
        Cmd::BuildVocab(a) => run_build_vocab(&a, started),
        Cmd::Train(a) => run_train(&a, started),
        Cmd::Predict(a) => run_predict(&a, started),
        Cmd::Evaluate(a) => run_evaluate(&a, started),
        Cmd::Rai(a) => run_rai(&a, started),
        Cmd::Gradcheck(a) => run_gradcheck(&a),
        Cmd::Assemble(a) => run_assemble(&a, started),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn pair(k: &str, v: impl ToString) -> (String, String) {
    (k.to_string(), v.to_string())
}

fn shown(p: &Path) -> String {
    p.display().to_string()
}

fn run_gen_synth(a: &GenSynthArgs, started: Instant) -> Result<()> {
    let cfg = SynthConfig {
        num_queries: a.queries,
        num_test_queries: a.test_queries,
        num_labels: a.labels,
        num_clusters: a.clusters,
        vocab_size: a.vocab,
        positives_per_query: a.pos_per_query,
        ambiguity_fraction: a.ambiguity,
        image_dim: a.image_dim,
        image_availability: a.image_availability,
        seed: a.seed,
    };
    let synth = corpus::generate_to_dir(&cfg, &a.out)?;
    let manifest = RunManifest {
        subcommand: "gen-synth".into(),
        seed: a.seed,
        config: vec![
            pair("queries", cfg.num_queries),
            pair("test_queries", synth.test.num_queries()),
            pair("labels", cfg.num_labels),
            pair("clusters", cfg.num_clusters),
            pair("vocab", cfg.vocab_size),
            pair("pos_per_query", cfg.positives_per_query),
            pair("ambiguity", cfg.ambiguity_fraction),
            pair("image_dim", cfg.image_dim),
            pair("image_availability", cfg.image_availability),
        ],
        inputs: vec![],
        outputs: vec![shown(&a.out.join("train")), shown(&a.out.join("test"))],
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    manifest.write(&a.out)?;
    println!(
        "wrote {} train / {} test queries over {} labels to {}",
        synth.train.num_queries(),
        synth.test.num_queries(),
        synth.train.num_labels(),
        a.out.display()
    );
    Ok(())
}

fn run_build_vocab(a: &BuildVocabArgs, started: Instant) -> Result<()> {
    let (ds, _, _) = load_split_dir(&a.data, Split::Test)?;
    let vocab = Vocab::build(
        ds.query_texts
            .iter()
            .map(String::as_str)
            .chain(ds.label_texts.iter().map(String::as_str)),
        a.vocab_max,
        PrefixSet::default(),
    )?;
    vocab.save(&a.out)?;
    let manifest = RunManifest {
        subcommand: "build-vocab".into(),
        seed: 0,
        config: vec![pair("vocab_max", a.vocab_max)],
        inputs: vec![shown(&a.data)],
        outputs: vec![shown(&a.out)],
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    manifest.write_for_file(&a.out)?;
    println!(
        "wrote {}-token vocabulary to {}",
        vocab.size(),
        a.out.display()
    );
    Ok(())
}

/// Resolve `--data`/config-key `data` into train and (optional) test
/// split directories. A directory holding `queries.txt` is itself a
/// split; otherwise it must contain `train/`.
fn resolve_data_dirs(data: &Path) -> Result<(PathBuf, Option<PathBuf>)> {
    if data.join("queries.txt").is_file() {
        return Ok((data.to_path_buf(), None));
    }
    let train = data.join("train");
    if !train.join("queries.txt").is_file() {
        return Err(Error::Data(format!(
            "{} is neither a split directory nor a corpus root with train/",
            data.display()
        )));
    }
    let test = data.join("test");
    let test = if test.join("queries.txt").is_file() {
        Some(test)
    } else {
        None
    };
    Ok((train, test))
}

fn run_train(a: &TrainArgs, started: Instant) -> Result<()> {
    // Merge config sources; later pairs override earlier ones.
    let mut pairs = match &a.config {
        Some(p) => load_key_values(p)?,
        None => Vec::new(),
    };
    for s in &a.set {
        let Some((k, v)) = s.split_once('=') else {
            return Err(Error::Config(format!("--set wants KEY=VALUE, got {s:?}")));
        };
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(seed) = a.seed {
        pairs.push(pair("seed", seed));
    }
    if let Some(epochs) = a.epochs {
        pairs.push(pair("epochs", epochs));
    }
    if let Some(mode) = &a.mode {
        pairs.push(pair("mode", mode));
    }
    // `data` travels with the config file but is not a trainer field.
    let mut data_path: Option<PathBuf> = None;
    pairs.retain(|(k, v)| {
        if k == "data" {
            data_path = Some(PathBuf::from(v));
            false
        } else {
            true
        }
    });
    if let Some(d) = &a.data {
        data_path = Some(d.clone());
    }
    let cfg = TrainConfig::from_pairs(&pairs)?;
    let data = data_path.ok_or_else(|| {
        Error::Config("no training data: pass --data or a `data=` config key".into())
    })?;

    let (train_dir, test_dir) = resolve_data_dirs(&data)?;
    let (ds, query_bank, label_bank) = load_split_dir(&train_dir, Split::Train)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;

    let out = trainer::train_with(
        &ds,
        query_bank.as_ref(),
        label_bank.as_ref(),
        &cfg,
        |epoch, params| save_checkpoint(params, &a.out.join(format!("checkpoint_{epoch:04}.vixp"))),
    )?;

    let ckpt_path = a.out.join("checkpoint_final.vixp");
    save_checkpoint(&out.params, &ckpt_path)?;
    let vocab_path = a.out.join("vocab.tsv");
    out.vocab.save(&vocab_path)?;
    vix::bytes::write_atomic(
        &a.out.join("train_config.txt"),
        render_key_values(&cfg.to_pairs()).as_bytes(),
    )?;
    vix::bytes::write_atomic(
        &a.out.join("train_log.tsv"),
        out.log.epochs_tsv().as_bytes(),
    )?;
    vix::bytes::write_atomic(
        &a.out.join("refresh_log.tsv"),
        out.log.refreshes_tsv().as_bytes(),
    )?;

    // Final metrics come from the reloaded checkpoint so the numbers are
    // reproducible by `predict` + `evaluate` on the same files.
    if let Some(test_dir) = &test_dir {
        let model = load_model(&ckpt_path, None, None)?;
        let (test_ds, test_qb, test_lb) = load_split_dir(test_dir, Split::Test)?;
        let label_embs = embed_texts(
            &model,
            &test_ds.label_texts,
            BankSide::Label,
            test_lb.as_ref(),
        )?;
        let query_embs = embed_texts(
            &model,
            &test_ds.query_texts,
            BankSide::Query,
            test_qb.as_ref(),
        )?;
        let index = EmbeddingIndex::build_dense(label_embs, DEFAULT_BLOCK_SIZE)?;
        let k_depth = 10.min(test_ds.num_labels());
        let preds = index.predict_all(&query_embs, k_depth)?;
        let freqs = label_frequencies(&ds.ground_truth, ds.num_labels())?;
        let pm = compute_propensities(&freqs, ds.num_queries(), 0.55, 1.5)?;
        let rows = metric_rows(&preds, &test_ds.ground_truth, &pm, &[1, 5], &[10], &[1])?;
        let mut tsv = String::from("metric\tvalue\n");
        for (name, value) in &rows {
            tsv.push_str(&format!("{name}\t{value:.6}\n"));
        }
        vix::bytes::write_atomic(&a.out.join("final_metrics.tsv"), tsv.as_bytes())?;
    }

    let mut inputs = vec![shown(&train_dir)];
    if let Some(t) = &test_dir {
        inputs.push(shown(t));
    }
    let manifest = RunManifest {
        subcommand: "train".into(),
        seed: cfg.seed,
        config: cfg.to_pairs(),
        inputs,
        outputs: vec![shown(&a.out)],
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    manifest.write(&a.out)?;

    let last = out.log.epochs.last().expect("at least one epoch");
    println!(
        "trained {} epochs (final loss {:.4}, active {:.3}); wrote {}",
        out.log.epochs.len(),
        last.loss,
        last.active_frac,
        a.out.display()
    );
    Ok(())
}

/// A checkpoint plus the vocabulary and prompt settings it was trained
/// with, as needed to embed new text.
struct Model {
    params: EncoderParams,
    vocab: Vocab,
    prompt: TrainConfig,
}

fn load_model(
    ckpt: &Path,
    vocab_override: Option<&Path>,
    config_override: Option<&Path>,
) -> Result<Model> {
    let params = load_checkpoint(ckpt)?;
    let dir = ckpt
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .to_path_buf();
    let vocab_path = vocab_override.map_or_else(|| dir.join("vocab.tsv"), Path::to_path_buf);
    let config_path =
        config_override.map_or_else(|| dir.join("train_config.txt"), Path::to_path_buf);
    let vocab = Vocab::load(&vocab_path)?;
    let prompt = TrainConfig::from_pairs(&load_key_values(&config_path)?)?;
    if params.vocab_size() != vocab.size() {
        return Err(Error::Data(format!(
            "checkpoint vocabulary size {} does not match {} ({} entries)",
            params.vocab_size(),
            vocab_path.display(),
            vocab.size()
        )));
    }
    if params.d() != prompt.d || params.m() != prompt.m {
        return Err(Error::Data(format!(
            "checkpoint dims d={} m={} do not match config d={} m={}",
            params.d(),
            params.m(),
            prompt.d,
            prompt.m
        )));
    }
    Ok(Model {
        params,
        vocab,
        prompt,
    })
}

fn embed_texts(
    model: &Model,
    texts: &[String],
    side: BankSide,
    bank: Option<&ImageBank>,
) -> Result<Mat> {
    let items: Vec<(u64, &str)> = texts
        .iter()
        .enumerate()
        .map(|(i, t)| (i as u64, t.as_str()))
        .collect();
    let seqs = assemble_batch(
        &items,
        side,
        bank,
        model.prompt.mode,
        model.prompt.max_len,
        model.prompt.image_cap,
        &model.vocab,
    )?;
    let banks = match side {
        BankSide::Query => Banks {
            query: bank,
            label: None,
        },
        BankSide::Label => Banks {
            query: None,
            label: bank,
        },
    };
    embed_batch(&model.params, &seqs, &banks)
}

fn run_predict(a: &PredictArgs, started: Instant) -> Result<()> {
    let model = load_model(&a.ckpt, a.vocab.as_deref(), a.train_config.as_deref())?;
    let (ds, query_bank, label_bank) = load_split_dir(&a.data, Split::Test)?;
    let label_embs = embed_texts(
        &model,
        &ds.label_texts,
        BankSide::Label,
        label_bank.as_ref(),
    )?;
    let query_embs = embed_texts(
        &model,
        &ds.query_texts,
        BankSide::Query,
        query_bank.as_ref(),
    )?;
    let index = EmbeddingIndex::build_dense(label_embs, a.block_size)?;
    let preds = index.predict_all(&query_embs, a.k)?;
    preds.save(&a.out)?;
    let manifest = RunManifest {
        subcommand: "predict".into(),
        seed: model.prompt.seed,
        config: vec![pair("k", a.k), pair("block_size", a.block_size)],
        inputs: vec![shown(&a.ckpt), shown(&a.data)],
        outputs: vec![shown(&a.out)],
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    manifest.write_for_file(&a.out)?;
    println!(
        "wrote top-{} predictions for {} queries to {}",
        a.k,
        ds.num_queries(),
        a.out.display()
    );
    Ok(())
}

fn parse_cutoffs(which: &str, raw: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for piece in raw.split(',') {
        let piece = piece.trim();
        let k: usize = piece
            .parse()
            .map_err(|_| Error::Config(format!("bad {which} cutoff {piece:?}")))?;
        if k == 0 {
            return Err(Error::Config(format!("{which} cutoffs must be >= 1")));
        }
        out.push(k);
    }
    if out.is_empty() {
        return Err(Error::Config(format!("no {which} cutoffs given")));
    }
    Ok(out)
}

/// P@k / R@k / PSP@k rows in report order.
fn metric_rows(
    preds: &PredictionSet,
    gt: &[Vec<usize>],
    pm: &PropensityModel,
    p_ks: &[usize],
    r_ks: &[usize],
    psp_ks: &[usize],
) -> Result<Vec<(String, f64)>> {
    let num_labels = pm.propensities.len();
    let mut rows = Vec::new();
    for &k in p_ks {
        rows.push((format!("P@{k}"), precision_at_k(preds, gt, k, num_labels)?));
    }
    for &k in r_ks {
        rows.push((format!("R@{k}"), recall_at_k(preds, gt, k, num_labels)?));
    }
    for &k in psp_ks {
        rows.push((format!("PSP@{k}"), psp_at_k(preds, gt, pm, k)?));
    }
    Ok(rows)
}

fn run_evaluate(a: &EvaluateArgs, started: Instant) -> Result<()> {
    let preds = PredictionSet::load(&a.preds)?;
    let (gt, num_labels) = load_ground_truth(&a.gt)?;
    let (prop_gt, prop_labels) = match &a.train_gt {
        Some(p) => load_ground_truth(p)?,
        None => (gt.clone(), num_labels),
    };
    if prop_labels != num_labels {
        return Err(Error::Data(format!(
            "label space mismatch: --gt has {num_labels} labels, --train-gt has {prop_labels}"
        )));
    }
    let p_ks = parse_cutoffs("--k", &a.k)?;
    let r_ks = parse_cutoffs("--recall-k", &a.recall_k)?;
    let freqs = label_frequencies(&prop_gt, num_labels)?;
    let pm = compute_propensities(&freqs, prop_gt.len(), a.psp_a, a.psp_b)?;
    let rows = metric_rows(&preds, &gt, &pm, &p_ks, &r_ks, &p_ks)?;
    print!("metric\tvalue\n");
    for (name, value) in &rows {
        println!("{name}\t{value:.6}");
    }
    if let Some(plot) = &a.plot {
        vix::bytes::write_atomic(plot, render_metric_svg(&rows).as_bytes())?;
        let manifest = RunManifest {
            subcommand: "evaluate".into(),
            seed: 0,
            config: vec![
                pair("k", &a.k),
                pair("recall_k", &a.recall_k),
                pair("psp_A", a.psp_a),
                pair("psp_B", a.psp_b),
            ],
            inputs: vec![shown(&a.preds), shown(&a.gt)],
            outputs: vec![shown(plot)],
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        manifest.write_for_file(plot)?;
    }
    Ok(())
}

fn run_rai(a: &RaiArgs, started: Instant) -> Result<()> {
    let model = load_model(&a.ckpt, a.vocab.as_deref(), a.train_config.as_deref())?;
    let (train_ds, train_qb, train_lb) = load_split_dir(&a.train, Split::Train)?;
    let (test_ds, test_qb, _) = load_split_dir(&a.test, Split::Test)?;
    if train_ds.label_texts != test_ds.label_texts {
        return Err(Error::Data(
            "train and test splits disagree on the label set".into(),
        ));
    }
    let label_embs = embed_texts(
        &model,
        &train_ds.label_texts,
        BankSide::Label,
        train_lb.as_ref(),
    )?;
    let trainq_embs = embed_texts(
        &model,
        &train_ds.query_texts,
        BankSide::Query,
        train_qb.as_ref(),
    )?;
    let query_embs = embed_texts(
        &model,
        &test_ds.query_texts,
        BankSide::Query,
        test_qb.as_ref(),
    )?;
    let label_index = EmbeddingIndex::build_dense(label_embs, a.block_size)?;
    let trainq_index = EmbeddingIndex::build_dense(trainq_embs, a.block_size)?;
    let cfg = RaiConfig {
        lambda: a.lambda,
        temperature: a.temperature,
        k_search: a.k_search,
        aggregation: a.agg.parse()?,
        output_k: a.output_k,
    };
    let preds = rai_predict_all(
        &query_embs,
        &label_index,
        &trainq_index,
        &train_ds.ground_truth,
        &cfg,
    )?;
    preds.save(&a.out)?;
    let manifest = RunManifest {
        subcommand: "rai".into(),
        seed: model.prompt.seed,
        config: vec![
            pair("lambda", a.lambda),
            pair("temperature", a.temperature),
            pair("k_search", a.k_search),
            pair("aggregation", &a.agg),
            pair("output_k", a.output_k),
            pair("block_size", a.block_size),
        ],
        inputs: vec![shown(&a.ckpt), shown(&a.train), shown(&a.test)],
        outputs: vec![shown(&a.out)],
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    manifest.write_for_file(&a.out)?;
    println!(
        "wrote retrieval-augmented top-{} predictions for {} queries to {}",
        a.output_k,
        test_ds.num_queries(),
        a.out.display()
    );
    Ok(())
}

fn run_gradcheck(a: &GradcheckArgs) -> Result<()> {
    let cfg = GradCheckConfig {
        d: a.d,
        m: a.m,
        max_len: a.max_len,
        seed: a.seed,
        ..GradCheckConfig::default()
    };
    let report = gradcheck::run(&cfg, a.fixtures)?;
    println!(
        "max relative error {:.3e} over {} fixtures ({} elements)",
        report.max_rel_error, report.fixtures, report.elements_checked
    );
    if report.max_rel_error < GRADCHECK_GATE {
        Ok(())
    } else {
        Err(Error::Numeric(format!(
            "gradient check failed: {:.3e} >= {GRADCHECK_GATE:.0e}",
            report.max_rel_error
        )))
    }
}

fn run_assemble(a: &AssembleArgs, started: Instant) -> Result<()> {
    let mode: PromptMode = a.mode.parse()?;
    let prefixes = PrefixSet::default();
    // Builtin fixture: a three-token text and two query-side images, with
    // the prefix phrases in-vocabulary so they get real token ids.
    let corpus: Vec<String> = prefixes
        .phrases()
        .iter()
        .map(|s| (*s).to_string())
        .chain(std::iter::once("alpha beta gamma".to_string()))
        .collect();
    let vocab = Vocab::build(corpus.iter().map(String::as_str), 64, prefixes.clone())?;
    let tokens = vocab.tokenize("alpha beta gamma");
    let images: Vec<ImageRef> = (0..2.min(a.image_cap))
        .map(|i| ImageRef {
            side: BankSide::Query,
            item: 0,
            ordinal: i as u16,
        })
        .collect();
    let seq = assemble(&tokens, &images, mode, a.max_len, &vocab)?;
    let listing = render_slots(&seq);
    match &a.dump_golden {
        Some(path) => {
            vix::bytes::write_atomic(path, listing.as_bytes())?;
            let manifest = RunManifest {
                subcommand: "assemble".into(),
                seed: 0,
                config: vec![
                    pair("mode", mode.as_str()),
                    pair("max_len", a.max_len),
                    pair("image_cap", a.image_cap),
                ],
                inputs: vec![],
                outputs: vec![shown(path)],
                wall_seconds: started.elapsed().as_secs_f64(),
            };
            manifest.write_for_file(path)?;
            println!("wrote slot listing to {}", path.display());
        }
        None => print!("{listing}"),
    }
    Ok(())
}

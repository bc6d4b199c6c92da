//! Command-line front end. `run` parses arguments, dispatches and maps
//! failures to exit codes: 2 for usage errors and missing inputs, 1 for
//! anything else.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::classify::{
    centroid_distances, confusion_matrix, evaluate, kmeans, parse_predictions, pca_project,
    predictions_csv, EmbeddingSet,
};
use crate::corpus::load_corpus_with;
use crate::encoder::{FusionModel, Pooling, PrecomputedEmbeddings};
use crate::objective::loss_log_csv;
use crate::pipeline::{self, RunConfig};
use crate::synthetic::{self, SynthConfig};

#[derive(Debug, Parser)]
#[command(
    name = "topicfuse",
    version,
    about = "Topic-supervised document embeddings with metadata fusion"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train LDA and write the topic model plus per-document topic targets.
    TrainLda(RunArgs),
    /// Train the fusion model against cached topic targets.
    Train(RunArgs),
    /// Embed every corpus document with a trained model.
    Embed(RunArgs),
    /// Split exemplars and KNN-classify the remaining documents.
    Classify(RunArgs),
    /// Metrics, confusion matrix, 2-D PCA and k-means over-clustering.
    Evaluate(RunArgs),
    /// Macro-F1 for each topic count.
    SweepTopics(SweepArgs),
    /// Macro-F1 for each training-set fraction.
    SweepTrainsize(SweepArgs),
    /// Write a synthetic corpus and schema.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON run configuration; flags given here override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    word_vectors: Option<PathBuf>,
    /// Precomputed text embeddings replacing the trainable text encoder.
    #[arg(long)]
    precomputed: Option<PathBuf>,
    /// Directory for every artifact.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    topics: Option<usize>,
    #[arg(long)]
    lda_iterations: Option<usize>,
    #[arg(long)]
    fold_in_iterations: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    text_dim: Option<usize>,
    #[arg(long)]
    word_dim: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    omega_text: Option<f64>,
    /// Per-field metadata loss weight, `<field>=<w>`; repeatable.
    #[arg(long, value_parser = parse_field_weight)]
    omega_meta: Vec<(String, f64)>,
    #[arg(long)]
    knn_k: Option<usize>,
    #[arg(long)]
    exemplar_fraction: Option<f64>,
    /// k-means cluster count for over-clustering (default: twice the labels).
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_pooling)]
    pooling: Option<Pooling>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated sweep points.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<String>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 500)]
    docs: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Two topics over disjoint vocabulary halves instead of the mixture corpus.
    #[arg(long)]
    disjoint: bool,
}

fn parse_field_weight(s: &str) -> std::result::Result<(String, f64), String> {
    let (field, w) = s
        .split_once('=')
        .ok_or_else(|| format!("expected <field>=<weight>, got `{s}`"))?;
    let w: f64 = w
        .parse()
        .map_err(|e| format!("weight for `{field}`: {e}"))?;
    Ok((field.to_string(), w))
}

fn parse_pooling(s: &str) -> std::result::Result<Pooling, String> {
    s.parse().map_err(|e: crate::Error| e.to_string())
}

/// Marks failures that exit with status 2.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident => $target:ident),* $(,)?) => {
                $(if let Some(v) = self.$field.clone() { c.$target = v; })*
            };
        }
        set!(
            out => out, topics => topics, lda_iterations => lda_iterations,
            fold_in_iterations => fold_in_iterations, beta => beta, text_dim => text_dim,
            word_dim => word_dim, embed_dim => embed_dim, lr => learning_rate,
            batch_size => batch_size, dropout => dropout, omega_text => omega_text,
            knn_k => knn_k, exemplar_fraction => exemplar_fraction, seed => seed, pooling => pooling,
        );
        macro_rules! set_opt {
            ($($field:ident),*) => {
                $(if self.$field.is_some() { c.$field = self.$field.clone(); })*
            };
        }
        set_opt!(
            corpus,
            schema,
            word_vectors,
            precomputed,
            alpha,
            epochs,
            clusters
        );
        for (field, w) in &self.omega_meta {
            c.omega_meta.insert(field.clone(), *w);
        }
        Ok(c)
    }
}

fn require_input(path: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    let p = path
        .clone()
        .ok_or_else(|| usage(format!("--{what} is required")))?;
    if !p.is_file() {
        return Err(usage(format!("{what} file `{}` not found", p.display())));
    }
    Ok(p)
}

fn require_artifact(config: &RunConfig, name: &str, producer: &str) -> Result<PathBuf> {
    let p = config.out_path(name);
    if !p.is_file() {
        return Err(usage(format!(
            "`{}` not found; run `topicfuse {producer}` with the same --out first",
            p.display()
        )));
    }
    Ok(p)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// Files written by the current command, removed again if it fails.
#[derive(Default)]
struct Outputs {
    written: Vec<PathBuf>,
}

impl Outputs {
    fn write(&mut self, path: PathBuf, contents: impl AsRef<[u8]>) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        let tmp = path.with_extension("partial");
        self.written.push(tmp.clone());
        fs::write(&tmp, contents).with_context(|| format!("writing {}", tmp.display()))?;
        fs::rename(&tmp, &path).with_context(|| format!("writing {}", path.display()))?;
        self.written.push(path.clone());
        println!("wrote {}", path.display());
        Ok(())
    }

    fn discard(&self) {
        for p in &self.written {
            let _ = fs::remove_file(p);
        }
    }
}

fn load_corpus(config: &RunConfig) -> Result<crate::corpus::Corpus> {
    require_input(&config.corpus, "corpus")?;
    require_input(&config.schema, "schema")?;
    Ok(config.load_corpus()?)
}

fn cmd_train_lda(config: &RunConfig, out: &mut Outputs) -> Result<()> {
    let corpus = load_corpus(config)?;
    let (fit, targets) = pipeline::fit_topics(&corpus, config, config.topics, |it, ll| {
        if it % 50 == 0 {
            println!("iteration {it:>5}  log-likelihood {ll:.3}");
        }
    })?;
    out.write(
        config.out_path(pipeline::TOPIC_MODEL_FILE),
        serde_json::to_string(&fit.model)?,
    )?;
    out.write(
        config.out_path(pipeline::TARGETS_FILE),
        pipeline::topic_targets_csv(&targets)?,
    )?;
    Ok(())
}

fn cmd_train(config: &RunConfig, out: &mut Outputs) -> Result<()> {
    let corpus = load_corpus(config)?;
    let targets_path = require_artifact(config, pipeline::TARGETS_FILE, "train-lda")?;
    let targets = pipeline::parse_topic_targets(&read(&targets_path)?)?;
    let k = targets.values().next().map_or(0, |t| t.0.len());
    let mut model = pipeline::build_model(&corpus, config, k)?;
    let log = pipeline::fit_model(&mut model, &corpus, targets, config)?;
    for e in &log {
        println!(
            "epoch {:>3}  text {:.6}  total {:.6}",
            e.epoch, e.text_loss, e.total
        );
    }
    let fields: Vec<String> = model.schema.fields.iter().map(|f| f.name.clone()).collect();
    out.write(config.out_path(pipeline::MODEL_FILE), model.to_bytes()?)?;
    out.write(
        config.out_path(pipeline::LOSS_LOG_FILE),
        loss_log_csv(&fields, &log),
    )?;
    Ok(())
}

fn cmd_embed(config: &RunConfig, out: &mut Outputs) -> Result<()> {
    let corpus_path = require_input(&config.corpus, "corpus")?;
    let model_path = require_artifact(config, pipeline::MODEL_FILE, "train")?;
    let mut model = FusionModel::load(&model_path)?;
    if let Some(p) = &config.precomputed {
        model.extend_precomputed(PrecomputedEmbeddings::from_file(p)?)?;
    }
    let corpus = load_corpus_with(&corpus_path, &model.schema, &model.vocabulary)?;
    let set = pipeline::embed_corpus(&model, &corpus)?;
    out.write(config.out_path(pipeline::EMBEDDINGS_FILE), set.to_csv()?)?;
    Ok(())
}

fn load_embeddings(config: &RunConfig) -> Result<EmbeddingSet> {
    let path = require_artifact(config, pipeline::EMBEDDINGS_FILE, "embed")?;
    Ok(EmbeddingSet::from_csv(&read(&path)?)?)
}

fn cmd_classify(config: &RunConfig, out: &mut Outputs) -> Result<()> {
    let set = load_embeddings(config)?;
    let (split, predictions) = pipeline::classify_set(
        &set,
        config.exemplar_fraction,
        config.knn_k,
        config.seeds().seed("split"),
    )?;
    let gold = pipeline::gold_labels(&set, &split.evaluation)?;
    println!(
        "{} exemplars, {} classified with k = {}",
        split.exemplars.len(),
        predictions.len(),
        config.knn_k
    );
    out.write(
        config.out_path(pipeline::PREDICTIONS_FILE),
        predictions_csv(&predictions, &gold)?,
    )?;
    Ok(())
}

fn cmd_evaluate(config: &RunConfig, out: &mut Outputs) -> Result<()> {
    let path = require_artifact(config, pipeline::PREDICTIONS_FILE, "classify")?;
    let (predictions, gold) = parse_predictions(&read(&path)?)?;
    let metrics = evaluate(&predictions, &gold)?;
    let confusion = confusion_matrix(&predictions, &gold)?;
    println!(
        "{:<24} {:>9} {:>9} {:>9} {:>8}",
        "label", "precision", "recall", "f1", "support"
    );
    for c in &metrics.per_class {
        println!(
            "{:<24} {:>9.4} {:>9.4} {:>9.4} {:>8}",
            c.label, c.precision, c.recall, c.f1, c.support
        );
    }
    println!(
        "macro-F1 {:.4}  micro-F1 {:.4}",
        metrics.macro_f1, metrics.micro_f1
    );

    let set = load_embeddings(config)?;
    let pca = pca_project(&set, 2)?;
    let labels: std::collections::BTreeSet<&str> =
        set.labels.iter().flatten().map(String::as_str).collect();
    let k = config
        .clusters
        .unwrap_or(2 * labels.len().max(1))
        .min(set.len());
    let clusters = kmeans(&set, k, config.seeds().seed("kmeans"), 100)?;

    let mut report = serde_json::to_value(&metrics)?;
    report["pca_explained_variance_ratio"] = serde_json::to_value(&pca.explained_variance_ratio)?;
    report["kmeans_clusters"] = k.into();
    report["kmeans_wcss"] = clusters.wcss().into();
    out.write(
        config.out_path(pipeline::METRICS_FILE),
        serde_json::to_string_pretty(&report)?,
    )?;
    out.write(
        config.out_path(pipeline::CONFUSION_FILE),
        confusion.to_csv()?,
    )?;
    out.write(config.out_path(pipeline::PCA_FILE), pca.to_csv(&set)?)?;

    let mut assignments = String::from("doc_id,cluster,label\n");
    for (i, id) in set.ids.iter().enumerate() {
        let label = set.labels[i].as_deref().unwrap_or("");
        assignments.push_str(&format!(
            "{},{},{}\n",
            csv_cell(id),
            clusters.assignments[i],
            csv_cell(label)
        ));
    }
    out.write(config.out_path(pipeline::CLUSTERS_FILE), assignments)?;
    let d = centroid_distances(&clusters.centroids);
    let mut dist = String::from("cluster");
    for c in 0..d.cols() {
        dist.push_str(&format!(",c{c}"));
    }
    dist.push('\n');
    for r in 0..d.rows() {
        dist.push_str(&format!("c{r}"));
        for v in d.row(r) {
            dist.push_str(&format!(",{v}"));
        }
        dist.push('\n');
    }
    out.write(config.out_path(pipeline::CENTROIDS_FILE), dist)?;
    Ok(())
}

fn csv_cell(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn cmd_sweep_topics(config: &RunConfig, values: &[String], out: &mut Outputs) -> Result<()> {
    let ks = values
        .iter()
        .map(|v| {
            v.trim()
                .parse::<usize>()
                .map_err(|e| usage(format!("topic count `{v}`: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let corpus = load_corpus(config)?;
    let rows = pipeline::sweep_topics(&corpus, config, &ks)?;
    for (k, f1) in &rows {
        println!("K = {k:>4}  macro-F1 {f1:.4}");
    }
    out.write(
        config.out_path("sweep_topics.csv"),
        pipeline::sweep_csv("K", &rows),
    )?;
    Ok(())
}

fn cmd_sweep_trainsize(config: &RunConfig, values: &[String], out: &mut Outputs) -> Result<()> {
    let fractions = values
        .iter()
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|e| usage(format!("fraction `{v}`: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let corpus = load_corpus(config)?;
    let rows = pipeline::sweep_trainsize(&corpus, config, &fractions)?;
    for (f, f1) in &rows {
        println!("fraction {f:>6}  macro-F1 {f1:.4}");
    }
    out.write(
        config.out_path("sweep_trainsize.csv"),
        pipeline::sweep_csv("fraction", &rows),
    )?;
    Ok(())
}

fn cmd_synth(args: &SynthArgs, out: &mut Outputs) -> Result<()> {
    let synth = if args.disjoint {
        synthetic::disjoint_two_topic(args.docs, 50, 50, args.seed)?
    } else {
        synthetic::generate(&SynthConfig {
            docs: args.docs,
            seed: args.seed,
            ..SynthConfig::default()
        })?
    };
    let mut text = synth.lines.join("\n");
    text.push('\n');
    out.write(args.out.join("corpus.jsonl"), text)?;
    out.write(
        args.out.join("schema.json"),
        serde_json::to_string_pretty(&synth.schema)?,
    )?;
    Ok(())
}

fn dispatch(command: &Command, out: &mut Outputs) -> Result<()> {
    match command {
        Command::TrainLda(a) => cmd_train_lda(&a.resolve()?, out),
        Command::Train(a) => cmd_train(&a.resolve()?, out),
        Command::Embed(a) => cmd_embed(&a.resolve()?, out),
        Command::Classify(a) => cmd_classify(&a.resolve()?, out),
        Command::Evaluate(a) => cmd_evaluate(&a.resolve()?, out),
        Command::SweepTopics(a) => cmd_sweep_topics(&a.run.resolve()?, &a.values, out),
        Command::SweepTrainsize(a) => cmd_sweep_trainsize(&a.run.resolve()?, &a.values, out),
        Command::Synth(a) => cmd_synth(a, out),
    }
}

/// Runs the CLI on `args` (including the program name) and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let mut out = Outputs::default();
    match dispatch(&cli.command, &mut out) {
        Ok(()) => 0,
        Err(e) => {
            out.discard();
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                2
            } else {
                1
            }
        }
    }
}

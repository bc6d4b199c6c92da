//! End-to-end runs: topic targets, fusion training, embedding, exemplar
//! split and KNN evaluation, plus the topic-count and training-size sweeps.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::classify::{
    csv_err, evaluate, finish_csv, knn_classify, EmbeddingSet, Metrics, Prediction,
};
use crate::corpus::{
    load_corpus, split_exemplars, Corpus, ExemplarSplit, FieldEncoding, MetadataSchema, WordVectors,
};
use crate::encoder::{FusionModel, ModelSpec, Pooling, PrecomputedEmbeddings, TextSource};
use crate::nnkit::{AdamConfig, Matrix};
use crate::objective::{train, EpochLoss, Targets, TrainingConfig};
use crate::seeds::SeedTree;
use crate::topics::{infer_doc_topics, train_lda_with, LdaConfig, LdaFit, TopicDistribution};
use crate::{Error, Result};

/// Every knob of a full run. Unset `epochs` means the corpus-size default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub word_vectors: Option<PathBuf>,
    pub precomputed: Option<PathBuf>,
    pub out: PathBuf,
    pub topics: usize,
    pub lda_iterations: usize,
    pub fold_in_iterations: usize,
    pub alpha: Option<f64>,
    pub beta: f64,
    pub text_dim: usize,
    pub word_dim: usize,
    pub embed_dim: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: Option<usize>,
    pub dropout: f64,
    pub omega_text: f64,
    pub omega_meta: BTreeMap<String, f64>,
    pub knn_k: usize,
    pub exemplar_fraction: f64,
    pub clusters: Option<usize>,
    pub seed: u64,
    pub pooling: Pooling,
}

impl Default for RunConfig {
    fn default() -> Self {
        let spec = ModelSpec::default();
        let train = TrainingConfig::default();
        Self {
            corpus: None,
            schema: None,
            word_vectors: None,
            precomputed: None,
            out: PathBuf::from("out"),
            topics: spec.topics,
            lda_iterations: 500,
            fold_in_iterations: 50,
            alpha: None,
            beta: 0.01,
            text_dim: spec.text_dim,
            word_dim: spec.word_dim,
            embed_dim: spec.embed_dim,
            learning_rate: train.adam.lr,
            batch_size: train.batch_size,
            epochs: None,
            dropout: train.dropout,
            omega_text: train.omega_text,
            omega_meta: BTreeMap::new(),
            knn_k: 10,
            exemplar_fraction: 0.1,
            clusters: None,
            seed: 0,
            pooling: Pooling::UnmaskedMean,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn seeds(&self) -> SeedTree {
        SeedTree::new(self.seed)
    }

    pub fn lda_config(&self, topics: usize) -> LdaConfig {
        LdaConfig {
            topics,
            alpha: self.alpha,
            beta: self.beta,
            iterations: self.lda_iterations,
            seed: self.seeds().seed("lda"),
        }
    }

    pub fn model_spec(&self, topics: usize) -> ModelSpec {
        ModelSpec {
            text_dim: self.text_dim,
            word_dim: self.word_dim,
            embed_dim: self.embed_dim,
            topics,
            dropout: self.dropout,
            pooling: self.pooling,
        }
    }

    pub fn training_config(&self, corpus_size: usize) -> TrainingConfig {
        TrainingConfig {
            omega_text: self.omega_text,
            omega_meta: self.omega_meta.clone(),
            adam: AdamConfig {
                lr: self.learning_rate,
                ..AdamConfig::default()
            },
            batch_size: self.batch_size,
            epochs: self
                .epochs
                .unwrap_or_else(|| TrainingConfig::default_epochs(corpus_size)),
            dropout: self.dropout,
            seed: self.seed,
        }
    }

    fn require(path: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
        path.clone()
            .ok_or_else(|| Error::InvalidArgument(format!("no {what} path given")))
    }

    pub fn load_corpus(&self) -> Result<Corpus> {
        let schema = MetadataSchema::from_file(Self::require(&self.schema, "schema")?)?;
        load_corpus(
            Self::require(&self.corpus, "corpus")?,
            &schema,
            schema.max_tokens,
        )
    }

    pub fn word_vectors(&self, schema: &MetadataSchema) -> Result<Option<WordVectors>> {
        let needed = schema
            .fields
            .iter()
            .any(|f| f.encoding == FieldEncoding::WordVectors);
        match (&self.word_vectors, needed) {
            (Some(p), _) => WordVectors::from_file(p).map(Some),
            (None, true) => Err(Error::InvalidArgument(
                "schema has word_vectors fields but no word-vector file was given".into(),
            )),
            (None, false) => Ok(None),
        }
    }

    pub fn text_source(&self) -> Result<TextSource> {
        Ok(match &self.precomputed {
            Some(p) => TextSource::Precomputed(PrecomputedEmbeddings::from_file(p)?),
            None => TextSource::Trainable,
        })
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

pub const TOPIC_MODEL_FILE: &str = "topics.json";
pub const TARGETS_FILE: &str = "targets.csv";
pub const MODEL_FILE: &str = "model.tfm";
pub const LOSS_LOG_FILE: &str = "loss_log.csv";
pub const EMBEDDINGS_FILE: &str = "embeddings.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const PCA_FILE: &str = "pca.csv";
pub const CLUSTERS_FILE: &str = "clusters.csv";
pub const CENTROIDS_FILE: &str = "centroid_distances.csv";

/// Trains LDA on `corpus` and folds every document back in to obtain its
/// topic target.
pub fn fit_topics<F>(
    corpus: &Corpus,
    config: &RunConfig,
    topics: usize,
    on_sweep: F,
) -> Result<(LdaFit, BTreeMap<String, TopicDistribution>)>
where
    F: FnMut(usize, f64),
{
    let fit = train_lda_with(corpus, &config.lda_config(topics), on_sweep)?;
    let seeds = config.seeds();
    let targets = corpus
        .documents
        .iter()
        .map(|d| {
            let seed = seeds.seed(&format!("fold-in/{}", d.id));
            infer_doc_topics(&fit.model, &d.tokens, config.fold_in_iterations, seed)
                .map(|t| (d.id.clone(), t))
        })
        .collect::<Result<_>>()?;
    Ok((fit, targets))
}

/// `doc_id,t0,...,t{K-1}`
pub fn topic_targets_csv(targets: &BTreeMap<String, TopicDistribution>) -> Result<String> {
    let k = targets.values().next().map_or(0, |t| t.0.len());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["doc_id".to_string()];
    header.extend((0..k).map(|t| format!("t{t}")));
    w.write_record(&header).map_err(csv_err)?;
    for (id, t) in targets {
        let mut rec = vec![id.clone()];
        rec.extend(t.0.iter().map(f64::to_string));
        w.write_record(&rec).map_err(csv_err)?;
    }
    finish_csv(w)
}

pub fn parse_topic_targets(text: &str) -> Result<BTreeMap<String, TopicDistribution>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let k = r.headers().map_err(csv_err)?.len().saturating_sub(1);
    if k < 2 {
        return Err(Error::InvalidArgument(
            "topic targets need at least two topic columns".into(),
        ));
    }
    let mut out = BTreeMap::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let values = rec
            .iter()
            .skip(1)
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|e| Error::InvalidArgument(format!("topic target: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if values.len() != k {
            return Err(Error::Shape(format!(
                "row `{}` has {} topics, expected {k}",
                &rec[0],
                values.len()
            )));
        }
        out.insert(rec[0].to_string(), TopicDistribution(values));
    }
    Ok(out)
}

/// A freshly initialised model for `corpus`, seeded from the `init` stream.
pub fn build_model(corpus: &Corpus, config: &RunConfig, topics: usize) -> Result<FusionModel> {
    let wv = config.word_vectors(&corpus.schema)?;
    let mut rng = config.seeds().rng("init");
    FusionModel::new(
        &config.model_spec(topics),
        &corpus.schema,
        &corpus.vocabulary,
        config.text_source()?,
        wv.as_ref(),
        &mut rng,
    )
}

pub fn fit_model(
    model: &mut FusionModel,
    corpus: &Corpus,
    topic_targets: BTreeMap<String, TopicDistribution>,
    config: &RunConfig,
) -> Result<Vec<EpochLoss>> {
    let targets = Targets::new(topic_targets, corpus);
    train(
        model,
        &corpus.documents,
        &targets,
        &config.training_config(corpus.len()),
    )
}

pub fn embed_corpus(model: &FusionModel, corpus: &Corpus) -> Result<EmbeddingSet> {
    let mut data = Vec::with_capacity(corpus.len() * model.embed_dim());
    for d in &corpus.documents {
        data.extend(model.embed(d)?);
    }
    EmbeddingSet::new(
        corpus.documents.iter().map(|d| d.id.clone()).collect(),
        Matrix::from_vec(corpus.len(), model.embed_dim(), data)?,
        corpus.documents.iter().map(|d| d.label.clone()).collect(),
    )
}

/// Splits labelled rows of `set` into exemplars and queries, then classifies
/// every query against the exemplars.
pub fn classify_set(
    set: &EmbeddingSet,
    fraction: f64,
    k: usize,
    seed: u64,
) -> Result<(ExemplarSplit, Vec<Prediction>)> {
    let docs: Vec<crate::corpus::Document> = set
        .ids
        .iter()
        .zip(&set.labels)
        .map(|(id, label)| crate::corpus::Document {
            id: id.clone(),
            tokens: Vec::new(),
            metadata: Vec::new(),
            label: label.clone(),
        })
        .collect();
    let split = split_exemplars(&docs, fraction, seed)?;
    let exemplars = set.select(&split.exemplars)?;
    let predictions = split
        .evaluation
        .iter()
        .map(|id| {
            let row = set
                .position(id)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown document `{id}`")))?;
            knn_classify(id, set.row(row), &exemplars, k)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((split, predictions))
}

pub fn gold_labels(set: &EmbeddingSet, ids: &[String]) -> Result<BTreeMap<String, String>> {
    ids.iter()
        .map(|id| {
            let i = set
                .position(id)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown document `{id}`")))?;
            let label = set.labels[i]
                .clone()
                .ok_or_else(|| Error::Unlabeled(id.clone()))?;
            Ok((id.clone(), label))
        })
        .collect()
}

/// Outcome of one in-memory run.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub model: FusionModel,
    pub loss_log: Vec<EpochLoss>,
    pub embeddings: EmbeddingSet,
    pub split: ExemplarSplit,
    pub predictions: Vec<Prediction>,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentOptions {
    pub topics: usize,
    /// Share of documents used for LDA and fusion training; evaluation always
    /// covers the full corpus.
    pub train_fraction: f64,
    /// `false` keeps the randomly initialised parameters.
    pub train: bool,
}

/// Picks `round(fraction · n)` training documents (at least one) from the
/// `trainsize` stream, in corpus order. A fraction of 1 keeps every document.
pub fn training_subset(corpus: &Corpus, fraction: f64, seeds: &SeedTree) -> Result<Corpus> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "training fraction {fraction} outside (0, 1]"
        )));
    }
    if fraction == 1.0 {
        return Ok(corpus.clone());
    }
    let n = corpus.len();
    let take = ((fraction * n as f64).round() as usize).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeds.rng("trainsize"));
    let ids: HashSet<&str> = order[..take]
        .iter()
        .map(|&i| corpus.documents[i].id.as_str())
        .collect();
    Ok(corpus.subset(&ids))
}

pub fn run_experiment(
    corpus: &Corpus,
    config: &RunConfig,
    options: ExperimentOptions,
) -> Result<Experiment> {
    let seeds = config.seeds();
    let train_corpus = training_subset(corpus, options.train_fraction, &seeds)?;
    let mut model = build_model(corpus, config, options.topics)?;
    let loss_log = if options.train {
        let (_, targets) = fit_topics(&train_corpus, config, options.topics, |_, _| {})?;
        fit_model(&mut model, &train_corpus, targets, config)?
    } else {
        Vec::new()
    };
    let embeddings = embed_corpus(&model, corpus)?;
    let (split, predictions) = classify_set(
        &embeddings,
        config.exemplar_fraction,
        config.knn_k,
        seeds.seed("split"),
    )?;
    let gold = gold_labels(&embeddings, &split.evaluation)?;
    let metrics = evaluate(&predictions, &gold)?;
    Ok(Experiment {
        model,
        loss_log,
        embeddings,
        split,
        predictions,
        metrics,
    })
}

/// Macro-F1 per topic count, rerunning the full pipeline with the same root
/// seed each time.
pub fn sweep_topics(
    corpus: &Corpus,
    config: &RunConfig,
    topic_counts: &[usize],
) -> Result<Vec<(usize, f64)>> {
    if topic_counts.is_empty() {
        return Err(Error::InvalidArgument("empty sweep list".into()));
    }
    topic_counts
        .iter()
        .map(|&k| {
            let options = ExperimentOptions {
                topics: k,
                train_fraction: 1.0,
                train: true,
            };
            run_experiment(corpus, config, options).map(|e| (k, e.metrics.macro_f1))
        })
        .collect()
}

pub fn sweep_trainsize(
    corpus: &Corpus,
    config: &RunConfig,
    fractions: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if fractions.is_empty() {
        return Err(Error::InvalidArgument("empty sweep list".into()));
    }
    fractions
        .iter()
        .map(|&f| {
            let options = ExperimentOptions {
                topics: config.topics,
                train_fraction: f,
                train: true,
            };
            run_experiment(corpus, config, options).map(|e| (f, e.metrics.macro_f1))
        })
        .collect()
}

pub fn sweep_csv<T: ToString>(key: &str, rows: &[(T, f64)]) -> String {
    let mut out = format!("{key},macro_f1\n");
    for (k, f1) in rows {
        out.push_str(&format!("{},{}\n", k.to_string(), f1));
    }
    out
}

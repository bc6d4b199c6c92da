//! LDA by collapsed Gibbs sampling, and fold-in inference of per-document
//! topic distributions against frozen topic-word counts.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::corpus::{Corpus, PAD, UNK};
use crate::seeds::{rng_from_seed, Rng as SeedRng};
use crate::{Error, Result};

const FORMAT: &str = "topicfuse-lda";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LdaConfig {
    pub topics: usize,
    /// Symmetric document-topic prior; `None` means `50 / K`.
    pub alpha: Option<f64>,
    pub beta: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl LdaConfig {
    pub fn new(topics: usize, seed: u64) -> Self {
        Self {
            topics,
            alpha: None,
            beta: 0.01,
            iterations: 500,
            seed,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(50.0 / self.topics as f64)
    }
}

/// Trained LDA state. Counts are stored word-major (`V × K`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicModel {
    format: String,
    version: u32,
    num_topics: usize,
    alpha: f64,
    beta: f64,
    vocab_size: usize,
    seed: u64,
    word_topic_counts: Vec<u32>,
    topic_totals: Vec<u64>,
}

/// A per-document topic mixture. Entries are positive and sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicDistribution(pub Vec<f64>);

impl TopicDistribution {
    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn argmax(&self) -> usize {
        self.0
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .map_or(0, |(i, _)| i)
    }
}

impl TopicModel {
    pub fn num_topics(&self) -> usize {
        self.num_topics
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn topic_word_count(&self, topic: usize, word: usize) -> u32 {
        self.word_topic_counts[word * self.num_topics + topic]
    }

    pub fn topic_totals(&self) -> &[u64] {
        &self.topic_totals
    }

    pub fn total_tokens(&self) -> u64 {
        self.topic_totals.iter().sum()
    }

    /// Checks non-negativity (by type) and that each topic total equals its
    /// column sum.
    pub fn check_counts(&self) -> Result<()> {
        let k = self.num_topics;
        let mut sums = vec![0u64; k];
        for row in self.word_topic_counts.chunks(k) {
            for (s, &c) in sums.iter_mut().zip(row) {
                *s += u64::from(c);
            }
        }
        if sums != self.topic_totals {
            return Err(Error::Shape(
                "topic totals disagree with word counts".into(),
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: TopicModel = serde_json::from_str(&text)?;
        if model.format != FORMAT || model.version != VERSION {
            return Err(Error::ModelFormat(format!(
                "expected {FORMAT} v{VERSION}, found {} v{}",
                model.format, model.version
            )));
        }
        if model.word_topic_counts.len() != model.vocab_size * model.num_topics
            || model.topic_totals.len() != model.num_topics
        {
            return Err(Error::ModelFormat("count table dimensions".into()));
        }
        model.check_counts()?;
        Ok(model)
    }

    /// Conditional weight of `topic` for `word` given the document's counts.
    #[inline]
    fn weight(&self, doc_count: u32, topic: usize, word: usize, vbeta: f64) -> f64 {
        (f64::from(doc_count) + self.alpha)
            * (f64::from(self.word_topic_counts[word * self.num_topics + topic]) + self.beta)
            / (self.topic_totals[topic] as f64 + vbeta)
    }

    /// `ln p(w | z)` with the topic-word distributions integrated out.
    pub fn log_likelihood(&self) -> f64 {
        let v = self.vocab_size as f64;
        let lg_beta = ln_gamma(self.beta);
        let mut ll = self.num_topics as f64 * ln_gamma(v * self.beta);
        for &c in &self.word_topic_counts {
            if c > 0 {
                ll += ln_gamma(f64::from(c) + self.beta) - lg_beta;
            }
        }
        for &t in &self.topic_totals {
            ll -= ln_gamma(t as f64 + v * self.beta);
        }
        ll
    }
}

fn lda_tokens(tokens: &[u32]) -> Vec<u32> {
    tokens
        .iter()
        .copied()
        .filter(|&t| t != UNK && t != PAD)
        .collect()
}

fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        u -= w;
        if u < 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

/// Collapsed Gibbs sampler over a corpus. Exposed so callers can observe the
/// state between sweeps.
pub struct LdaSampler {
    model: TopicModel,
    docs: Vec<Vec<u32>>,
    assignments: Vec<Vec<u32>>,
    doc_topic: Vec<Vec<u32>>,
    rng: SeedRng,
    trace: Vec<f64>,
    scratch: Vec<f64>,
}

impl LdaSampler {
    pub fn new(corpus: &Corpus, config: &LdaConfig) -> Result<Self> {
        if config.topics < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 topics, got {}",
                config.topics
            )));
        }
        let alpha = config.alpha();
        if !(alpha > 0.0 && config.beta > 0.0) {
            return Err(Error::InvalidArgument(
                "alpha and beta must be positive".into(),
            ));
        }
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let k = config.topics;
        let v = corpus.vocabulary.len();
        let docs: Vec<Vec<u32>> = corpus
            .documents
            .iter()
            .map(|d| lda_tokens(&d.tokens))
            .filter(|t| !t.is_empty())
            .collect();
        if let Some(&bad) = docs.iter().flatten().find(|&&t| t as usize >= v) {
            return Err(Error::TokenOutOfRange {
                id: bad as usize,
                vocab: v,
            });
        }
        let mut model = TopicModel {
            format: FORMAT.into(),
            version: VERSION,
            num_topics: k,
            alpha,
            beta: config.beta,
            vocab_size: v,
            seed: config.seed,
            word_topic_counts: vec![0; v * k],
            topic_totals: vec![0; k],
        };
        let mut rng = rng_from_seed(config.seed);
        let mut assignments = Vec::with_capacity(docs.len());
        let mut doc_topic = Vec::with_capacity(docs.len());
        for doc in &docs {
            let mut counts = vec![0u32; k];
            let z: Vec<u32> = doc
                .iter()
                .map(|&w| {
                    let t = rng.random_range(0..k);
                    counts[t] += 1;
                    model.word_topic_counts[w as usize * k + t] += 1;
                    model.topic_totals[t] += 1;
                    t as u32
                })
                .collect();
            assignments.push(z);
            doc_topic.push(counts);
        }
        Ok(Self {
            model,
            docs,
            assignments,
            doc_topic,
            rng,
            trace: Vec::new(),
            scratch: vec![0.0; k],
        })
    }

    /// One pass over every token; returns the log-likelihood afterwards.
    pub fn sweep(&mut self) -> f64 {
        let k = self.model.num_topics;
        let vbeta = self.model.vocab_size as f64 * self.model.beta;
        for d in 0..self.docs.len() {
            for i in 0..self.docs[d].len() {
                let w = self.docs[d][i] as usize;
                let old = self.assignments[d][i] as usize;
                self.doc_topic[d][old] -= 1;
                self.model.word_topic_counts[w * k + old] -= 1;
                self.model.topic_totals[old] -= 1;

                for t in 0..k {
                    self.scratch[t] = self.model.weight(self.doc_topic[d][t], t, w, vbeta);
                }
                let new = sample_index(&self.scratch, &mut self.rng);

                self.assignments[d][i] = new as u32;
                self.doc_topic[d][new] += 1;
                self.model.word_topic_counts[w * k + new] += 1;
                self.model.topic_totals[new] += 1;
            }
        }
        let ll = self.model.log_likelihood();
        self.trace.push(ll);
        ll
    }

    /// Count conservation: topic-word counts sum to the corpus token count and
    /// each document's topic counts sum to its length.
    pub fn check_invariants(&self) -> Result<()> {
        self.model.check_counts()?;
        let tokens: usize = self.docs.iter().map(Vec::len).sum();
        if self.model.total_tokens() != tokens as u64 {
            return Err(Error::Shape("topic totals do not match token count".into()));
        }
        for (doc, counts) in self.docs.iter().zip(&self.doc_topic) {
            if counts.iter().map(|&c| c as usize).sum::<usize>() != doc.len() {
                return Err(Error::Shape(
                    "document-topic counts do not match length".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn model(&self) -> &TopicModel {
        &self.model
    }

    pub fn token_count(&self) -> usize {
        self.docs.iter().map(Vec::len).sum()
    }

    pub fn trace(&self) -> &[f64] {
        &self.trace
    }

    pub fn finish(self) -> LdaFit {
        LdaFit {
            model: self.model,
            log_likelihood: self.trace,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LdaFit {
    pub model: TopicModel,
    /// Log-likelihood after each sweep.
    pub log_likelihood: Vec<f64>,
}

pub fn train_lda(corpus: &Corpus, config: &LdaConfig) -> Result<LdaFit> {
    train_lda_with(corpus, config, |_, _| {})
}

/// Like [`train_lda`], calling `on_sweep(iteration, log_likelihood)` after
/// every sweep.
pub fn train_lda_with<F>(corpus: &Corpus, config: &LdaConfig, mut on_sweep: F) -> Result<LdaFit>
where
    F: FnMut(usize, f64),
{
    if config.iterations < 1 {
        return Err(Error::InvalidArgument(
            "iterations must be at least 1".into(),
        ));
    }
    let mut sampler = LdaSampler::new(corpus, config)?;
    for it in 0..config.iterations {
        let ll = sampler.sweep();
        on_sweep(it + 1, ll);
    }
    Ok(sampler.finish())
}

/// Fold-in Gibbs sampling of one document against frozen counts. The result
/// averages `(n_dk + α) / (n + Kα)` over the last `max(1, iters / 2)` sweeps.
pub fn infer_doc_topics(
    model: &TopicModel,
    tokens: &[u32],
    fold_in_iters: usize,
    seed: u64,
) -> Result<TopicDistribution> {
    if fold_in_iters < 1 {
        return Err(Error::InvalidArgument(
            "fold-in iterations must be at least 1".into(),
        ));
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= model.vocab_size) {
        return Err(Error::TokenOutOfRange {
            id: bad as usize,
            vocab: model.vocab_size,
        });
    }
    let k = model.num_topics;
    let words = lda_tokens(tokens);
    if words.is_empty() {
        return Ok(TopicDistribution::uniform(k));
    }
    let vbeta = model.vocab_size as f64 * model.beta;
    let mut rng = rng_from_seed(seed);
    let mut counts = vec![0u32; k];
    let mut z: Vec<usize> = words
        .iter()
        .map(|_| {
            let t = rng.random_range(0..k);
            counts[t] += 1;
            t
        })
        .collect();

    let burn = fold_in_iters - (fold_in_iters / 2).max(1);
    let norm = words.len() as f64 + k as f64 * model.alpha;
    let mut acc = vec![0.0; k];
    let mut weights = vec![0.0; k];
    for sweep in 0..fold_in_iters {
        for (i, &w) in words.iter().enumerate() {
            counts[z[i]] -= 1;
            for (t, wt) in weights.iter_mut().enumerate() {
                *wt = model.weight(counts[t], t, w as usize, vbeta);
            }
            let new = sample_index(&weights, &mut rng);
            z[i] = new;
            counts[new] += 1;
        }
        if sweep >= burn {
            for (a, &c) in acc.iter_mut().zip(&counts) {
                *a += (f64::from(c) + model.alpha) / norm;
            }
        }
    }
    let total: f64 = acc.iter().sum();
    Ok(TopicDistribution(
        acc.into_iter().map(|a| a / total).collect(),
    ))
}

/// The `n` most probable word ids per topic, ties broken by ascending id.
pub fn top_words(model: &TopicModel, n: usize) -> Result<Vec<Vec<u32>>> {
    if n < 1 || n > model.vocab_size {
        return Err(Error::InvalidArgument(format!(
            "top-words count {n} outside 1..={}",
            model.vocab_size
        )));
    }
    Ok((0..model.num_topics)
        .map(|t| {
            let mut ids: Vec<u32> = (0..model.vocab_size as u32).collect();
            ids.sort_by(|&a, &b| {
                let ca = f64::from(model.topic_word_count(t, a as usize)) + model.beta;
                let cb = f64::from(model.topic_word_count(t, b as usize)) + model.beta;
                cb.total_cmp(&ca).then(a.cmp(&b))
            });
            ids.truncate(n);
            ids
        })
        .collect())
}

//! Seeded synthetic corpora with known latent structure.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::{FieldEncoding, FieldSpec, MetadataSchema};
use crate::seeds::rng_from_seed;
use crate::{Error, Result};

/// Documents are mixtures of latent topics plus background words. The label
/// is the dominant topic. With probability `tag_signal` a document's `tag`
/// field holds values of its label's tag group; otherwise it holds shared
/// values, or nothing when `noise_tags` is 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub docs: usize,
    pub topics: usize,
    pub words_per_topic: usize,
    pub background_words: usize,
    pub doc_len: usize,
    pub background_share: f64,
    /// Zipf-weighted background words; uniform when false.
    pub zipf_background: bool,
    pub dominant_share: f64,
    /// Share of topic words drawn from a pool common to all topics with the
    /// same index modulo `labels_per_tag_group`, which sit in different tag
    /// groups. Text alone then confuses exactly the labels the tags separate.
    pub shared_word_share: f64,
    pub tag_signal: f64,
    pub tags_per_label: usize,
    /// Labels sharing one tag group; above 1 the tags identify a group of
    /// labels rather than a single label.
    pub labels_per_tag_group: usize,
    pub noise_tags: usize,
    pub max_tags: usize,
    /// Embedding width `D_p` declared for the `tag` field.
    pub tag_dim: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            docs: 500,
            topics: 5,
            words_per_topic: 30,
            background_words: 300,
            doc_len: 50,
            background_share: 0.65,
            zipf_background: true,
            dominant_share: 0.6,
            shared_word_share: 0.6,
            tag_signal: 1.0,
            tags_per_label: 1,
            labels_per_tag_group: 2,
            noise_tags: 0,
            max_tags: 1,
            tag_dim: 50,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub lines: Vec<String>,
    pub schema: MetadataSchema,
}

impl SyntheticCorpus {
    /// Writes `corpus.jsonl` and `schema.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let corpus = dir.join("corpus.jsonl");
        let schema = dir.join("schema.json");
        let mut text = self.lines.join("\n");
        text.push('\n');
        fs::write(&corpus, text).map_err(|e| Error::io(&corpus, e))?;
        fs::write(&schema, serde_json::to_string_pretty(&self.schema)?)
            .map_err(|e| Error::io(&schema, e))?;
        Ok((corpus, schema))
    }

    /// The same corpus with the `tag` field dropped from schema and documents.
    pub fn without_tags(&self) -> Result<SyntheticCorpus> {
        let lines = self
            .lines
            .iter()
            .map(|l| {
                let mut v: serde_json::Value = serde_json::from_str(l)?;
                v["metadata"] = json!({});
                Ok(v.to_string())
            })
            .collect::<Result<_>>()?;
        let mut schema = self.schema.clone();
        schema.fields.retain(|f| f.name != "tag");
        Ok(SyntheticCorpus { lines, schema })
    }
}

fn label(k: usize) -> String {
    format!("label{k}")
}

pub fn generate(config: &SynthConfig) -> Result<SyntheticCorpus> {
    let c = config;
    if c.docs == 0
        || c.topics < 2
        || c.words_per_topic == 0
        || c.doc_len == 0
        || c.max_tags == 0
        || c.tag_dim == 0
        || c.labels_per_tag_group == 0
    {
        return Err(Error::InvalidArgument(
            "synthetic corpus dimensions must be positive".into(),
        ));
    }
    for p in [
        c.background_share,
        c.dominant_share,
        c.shared_word_share,
        c.tag_signal,
    ] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!(
                "probability {p} outside [0, 1]"
            )));
        }
    }
    let mut rng = rng_from_seed(c.seed);
    let background: Vec<(String, f64)> = (0..c.background_words)
        .map(|r| {
            (
                format!("bg{r}"),
                if c.zipf_background {
                    1.0 / (r as f64 + 1.0)
                } else {
                    1.0
                },
            )
        })
        .collect();
    let noise: Vec<String> = (0..c.noise_tags).map(|i| format!("shared{i}")).collect();

    let mut lines = Vec::with_capacity(c.docs);
    for d in 0..c.docs {
        let dominant = d % c.topics;
        let mut words = Vec::with_capacity(c.doc_len);
        for _ in 0..c.doc_len {
            if !background.is_empty() && rng.random::<f64>() < c.background_share {
                let (w, _) = background
                    .choose_weighted(&mut rng, |b| b.1)
                    .map_err(|e| Error::InvalidArgument(e.to_string()))?;
                words.push(w.clone());
                continue;
            }
            let topic = if rng.random::<f64>() < c.dominant_share {
                dominant
            } else {
                rng.random_range(0..c.topics)
            };
            let w = rng.random_range(0..c.words_per_topic);
            if rng.random::<f64>() < c.shared_word_share {
                words.push(format!("s{}w{w}", topic % c.labels_per_tag_group));
            } else {
                words.push(format!("t{topic}w{w}"));
            }
        }
        let n_tags = rng.random_range(1..=c.max_tags);
        let tagged = c.tags_per_label > 0 && rng.random::<f64>() < c.tag_signal;
        let tags: Vec<String> = if tagged {
            (0..n_tags)
                .map(|_| {
                    format!(
                        "tag{}x{}",
                        dominant / c.labels_per_tag_group,
                        rng.random_range(0..c.tags_per_label)
                    )
                })
                .collect()
        } else if noise.is_empty() {
            Vec::new()
        } else {
            (0..n_tags)
                .map(|_| noise[rng.random_range(0..noise.len())].clone())
                .collect()
        };
        lines.push(
            json!({
                "id": format!("doc{d:04}"),
                "text": words.join(" "),
                "metadata": { "tag": tags },
                "label": label(dominant),
            })
            .to_string(),
        );
    }
    let schema = MetadataSchema {
        fields: vec![FieldSpec {
            name: "tag".into(),
            encoding: FieldEncoding::OneHot,
            max_len: c.max_tags,
            embed_dim: c.tag_dim,
            values: Vec::new(),
        }],
        max_tokens: c.doc_len,
        min_count: 1,
    };
    Ok(SyntheticCorpus { lines, schema })
}

/// Two topics over disjoint halves of a `2 · half_vocab` vocabulary; each
/// document draws every token from a single topic, recorded as its label.
pub fn disjoint_two_topic(
    docs: usize,
    doc_len: usize,
    half_vocab: usize,
    seed: u64,
) -> Result<SyntheticCorpus> {
    if docs == 0 || doc_len == 0 || half_vocab == 0 {
        return Err(Error::InvalidArgument(
            "synthetic corpus dimensions must be positive".into(),
        ));
    }
    let mut rng = rng_from_seed(seed);
    let lines = (0..docs)
        .map(|d| {
            let topic = d % 2;
            let text: Vec<String> = (0..doc_len)
                .map(|_| format!("h{topic}w{}", rng.random_range(0..half_vocab)))
                .collect();
            json!({"id": format!("doc{d:04}"), "text": text.join(" "), "label": label(topic)})
                .to_string()
        })
        .collect();
    Ok(SyntheticCorpus {
        lines,
        schema: MetadataSchema {
            fields: Vec::new(),
            max_tokens: doc_len,
            min_count: 1,
        },
    })
}

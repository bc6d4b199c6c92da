#![allow(dead_code)]

use std::path::Path;

use topicfuse::corpus::{load_corpus, Corpus};
use topicfuse::synthetic::{generate, SynthConfig, SyntheticCorpus};

pub fn synth(docs: usize) -> SyntheticCorpus {
    generate(&SynthConfig {
        docs,
        ..Default::default()
    })
    .unwrap()
}

pub fn load(synth: &SyntheticCorpus, dir: &Path) -> Corpus {
    let (path, _) = synth.write(dir).unwrap();
    load_corpus(&path, &synth.schema, synth.schema.max_tokens).unwrap()
}

/// Fraction of documents whose argmax topic agrees with the majority topic of
/// their gold label, after mapping each label to its best topic.
pub fn purity(assigned: &[usize], gold: &[usize], topics: usize) -> f64 {
    let labels = gold.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0usize; labels]; topics];
    for (&t, &g) in assigned.iter().zip(gold) {
        table[t][g] += 1;
    }
    let hits: usize = table
        .iter()
        .map(|row| row.iter().max().copied().unwrap_or(0))
        .sum();
    hits as f64 / assigned.len() as f64
}

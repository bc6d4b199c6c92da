//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::f64::consts::LN_2;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;

use topicfuse::classify::{knn_classify, EmbeddingSet};
use topicfuse::corpus::{
    load_corpus, Corpus, Document, FieldEncoding, FieldSpec, MetadataSchema, MetadataSequence,
    Vocabulary, PAD,
};
use topicfuse::encoder::{FusionModel, ModelSpec, Pooling, TextSource};
use topicfuse::nnkit::{grad_check, Matrix};
use topicfuse::objective::{
    loss_and_gradients, metadata_loss, text_loss, total_loss, Targets, TrainingConfig,
};
use topicfuse::pipeline::{embed_corpus, run_experiment, Experiment, ExperimentOptions, RunConfig};
use topicfuse::seeds::rng_from_seed;
use topicfuse::synthetic::{disjoint_two_topic, generate, SynthConfig, SyntheticCorpus};
use topicfuse::topics::{infer_doc_topics, LdaConfig, LdaSampler, TopicDistribution};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn random_distribution<R: Rng>(k: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|r| r / s).collect()
}

/// D_t=6, D_e=5, K=3, one one_hot field with V=4, L=2, D_p=3.
fn tiny_instance(seed: u64) -> (FusionModel, Vec<Document>, Targets) {
    let mut rng = rng_from_seed(seed);
    let schema = MetadataSchema {
        fields: vec![FieldSpec {
            name: "tags".into(),
            encoding: FieldEncoding::OneHot,
            max_len: 2,
            embed_dim: 3,
            values: ["<unk>", "<pad>", "a", "b"].map(String::from).to_vec(),
        }],
        max_tokens: 8,
        min_count: 1,
    };
    let vocab = Vocabulary::from_tokens(
        ["<unk>", "<pad>", "x", "y", "z"].map(String::from).to_vec(),
        vec![1; 5],
    )
    .unwrap();
    let spec = ModelSpec {
        text_dim: 6,
        word_dim: 4,
        embed_dim: 5,
        topics: 3,
        dropout: 0.0,
        pooling: Pooling::UnmaskedMean,
    };
    let model = FusionModel::new(
        &spec,
        &schema,
        &vocab,
        TextSource::Trainable,
        None,
        &mut rng,
    )
    .unwrap();
    let docs: Vec<Document> = (0..3)
        .map(|i| {
            let tokens = (0..rng.random_range(1..5))
                .map(|_| rng.random_range(2..5))
                .collect();
            let tags: Vec<u32> = (0..rng.random_range(0..3))
                .map(|_| rng.random_range(2..4))
                .collect();
            Document {
                id: format!("d{i}"),
                tokens,
                metadata: vec![MetadataSequence::from_values(&tags, 2)],
                label: None,
            }
        })
        .collect();
    let topics = docs
        .iter()
        .map(|d| {
            (
                d.id.clone(),
                TopicDistribution(random_distribution(3, &mut rng)),
            )
        })
        .collect();
    let corpus = Corpus {
        documents: docs.clone(),
        vocabulary: vocab,
        schema,
    };
    let targets = Targets::new(topics, &corpus);
    (model, docs, targets)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let (model, docs, targets) = tiny_instance(1);
    let config = TrainingConfig {
        omega_text: 0.8,
        omega_meta: [("tags".to_string(), 1.5)].into(),
        dropout: 0.0,
        ..TrainingConfig::default()
    };
    let batch: Vec<&Document> = docs.iter().collect();
    let (_, grads) = loss_and_gradients(&model, &batch, &targets, &config, None).unwrap();
    let blocks: Vec<(String, Vec<f64>)> = model
        .parameters()
        .into_iter()
        .map(|(n, b)| (n, b.to_vec()))
        .collect();
    let mut worst = (0.0f64, String::new());
    for (i, ((name, values), g)) in blocks.iter().zip(grads.blocks()).enumerate() {
        let report = grad_check(
            |p| {
                let mut m = model.clone();
                m.parameters_mut()[i].values.copy_from_slice(p);
                total_loss(&m, &batch, &targets, &config).unwrap().total
            },
            values,
            g,
            1e-5,
            1e-4,
        );
        if report.max_rel_error.is_nan() || report.max_rel_error > worst.0 {
            worst = (report.max_rel_error, name.clone());
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst.0 < 1e-4 && elapsed < Duration::from_secs(60),
        format!(
            "gradient check over {} blocks, max relative error {:.2e} ({}), {:.2}s",
            blocks.len(),
            worst.0,
            worst.1,
            secs(elapsed)
        ),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = rng_from_seed(2);
    let mut kl_worst = 0.0f64;
    for _ in 0..100 {
        let k = rng.random_range(2..20);
        let phi = random_distribution(k, &mut rng);
        kl_worst = kl_worst.max(text_loss(&phi, &phi).unwrap().abs());
    }
    let bce_err = (metadata_loss(&[1.0], &[0.0]).unwrap() - LN_2).abs();

    let mut total_worst = 0.0f64;
    for i in 0..100 {
        let (model, docs, targets) = tiny_instance(1000 + i);
        let omega_text = rng.random_range(0.0..3.0);
        let omega_meta = rng.random_range(0.0..3.0);
        let config = TrainingConfig {
            omega_text,
            omega_meta: [("tags".to_string(), omega_meta)].into(),
            ..TrainingConfig::default()
        };
        let batch: Vec<&Document> = docs.iter().collect();
        let loss = total_loss(&model, &batch, &targets, &config).unwrap();
        let parts = omega_text * loss.text_loss + omega_meta * loss.meta_loss[0];
        total_worst = total_worst.max((loss.total - parts).abs());
    }
    outcome(
        kl_worst <= 1e-12 && bce_err <= 1e-12 && total_worst <= 1e-9,
        format!("max |KL(φ,φ)| {kl_worst:.1e}, |BCE - ln 2| {bce_err:.1e}, max |total - Σ ω·parts| {total_worst:.1e}"),
    )
}

fn load(synth: &SyntheticCorpus, dir: &Path) -> Corpus {
    let (path, _) = synth.write(dir).unwrap();
    load_corpus(&path, &synth.schema, synth.schema.max_tokens).unwrap()
}

fn criterion_3(dir: &Path) -> Outcome {
    let start = Instant::now();
    let corpus = load(&disjoint_two_topic(200, 50, 50, 3).unwrap(), dir);
    let config = LdaConfig {
        iterations: 200,
        ..LdaConfig::new(2, 3)
    };
    let mut sampler = LdaSampler::new(&corpus, &config).unwrap();
    let mut conserved = sampler.check_invariants().is_ok();
    for _ in 0..config.iterations {
        sampler.sweep();
        conserved &= sampler.check_invariants().is_ok();
    }
    let model = sampler.finish().model;
    // Purity: each generating half maps to its majority topic.
    let mut table = [[0usize; 2]; 2];
    for (i, d) in corpus.documents.iter().enumerate() {
        let t = infer_doc_topics(&model, &d.tokens, 50, i as u64)
            .unwrap()
            .argmax();
        table[t][i % 2] += 1;
    }
    let purity = (table[0].iter().max().unwrap() + table[1].iter().max().unwrap()) as f64
        / corpus.len() as f64;
    let elapsed = start.elapsed();
    outcome(
        purity >= 0.95 && conserved && elapsed < Duration::from_secs(120),
        format!(
            "purity {purity:.3}, counts conserved after every sweep: {conserved}, {:.2}s",
            secs(elapsed)
        ),
    )
}

struct Oracle {
    label: String,
    neighbors: Vec<String>,
    distances: Vec<f64>,
}

fn brute_force(
    query_id: &str,
    query: &[f64],
    points: &[(String, String, Vec<f64>)],
    k: usize,
) -> Oracle {
    let mut all: Vec<(f64, &str, &str)> = points
        .iter()
        .filter(|(id, _, _)| id != query_id)
        .map(|(id, label, v)| {
            let d = v
                .iter()
                .zip(query)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            (d, id.as_str(), label.as_str())
        })
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(b.1)));
    all.truncate(k);
    let mut labels: Vec<&str> = all.iter().map(|x| x.2).collect();
    labels.sort();
    labels.dedup();
    let score = |l: &str| -> (usize, f64) {
        let mine: Vec<&(f64, &str, &str)> = all.iter().filter(|x| x.2 == l).collect();
        (mine.len(), mine.iter().map(|x| x.0).sum())
    };
    let mut best = labels[0];
    for &l in &labels[1..] {
        let (c, s) = score(l);
        let (bc, bs) = score(best);
        if c > bc || (c == bc && s < bs) {
            best = l;
        }
    }
    Oracle {
        label: best.to_string(),
        neighbors: all.iter().map(|x| x.1.to_string()).collect(),
        distances: all.iter().map(|x| x.0).collect(),
    }
}

fn criterion_4() -> Outcome {
    let mut rng = rng_from_seed(4);
    let mut agree = 0;
    let total = 1000;
    for _ in 0..total {
        let n = rng.random_range(2..40);
        let dim = rng.random_range(1..8);
        let k = rng.random_range(1..15);
        // Small integer grids produce plenty of exact distance ties.
        let grid = rng.random_bool(0.5);
        let mut ids: Vec<usize> = (0..n).collect();
        ids.shuffle(&mut rng);
        let points: Vec<(String, String, Vec<f64>)> = ids
            .iter()
            .map(|&i| {
                let v = (0..dim)
                    .map(|_| {
                        if grid {
                            f64::from(rng.random_range(-2..3))
                        } else {
                            rng.random_range(-5.0..5.0)
                        }
                    })
                    .collect();
                (format!("e{i}"), format!("L{}", rng.random_range(0..4)), v)
            })
            .collect();
        let (query_id, query) = if rng.random_bool(0.3) {
            let p = &points[rng.random_range(0..n)];
            (p.0.clone(), p.2.clone())
        } else {
            let v = (0..dim)
                .map(|_| {
                    if grid {
                        f64::from(rng.random_range(-2..3))
                    } else {
                        rng.random_range(-5.0..5.0)
                    }
                })
                .collect();
            ("query".to_string(), v)
        };
        let set = EmbeddingSet::new(
            points.iter().map(|p| p.0.clone()).collect(),
            Matrix::from_rows(&points.iter().map(|p| p.2.clone()).collect::<Vec<_>>()).unwrap(),
            points.iter().map(|p| Some(p.1.clone())).collect(),
        )
        .unwrap();
        let got = knn_classify(&query_id, &query, &set, k).unwrap();
        let want = brute_force(&query_id, &query, &points, k);
        let distances_match = got.distances.len() == want.distances.len()
            && got
                .distances
                .iter()
                .zip(&want.distances)
                .all(|(a, b)| (a - b).abs() <= 1e-12);
        if got.neighbors == want.neighbors && distances_match && got.label == want.label {
            agree += 1;
        }
    }
    outcome(
        agree == total,
        format!("{agree}/{total} instances agree with the brute-force oracle"),
    )
}

fn acceptance_config() -> RunConfig {
    RunConfig {
        topics: 10,
        lda_iterations: 500,
        text_dim: 64,
        word_dim: 64,
        embed_dim: 64,
        learning_rate: 1e-3,
        epochs: Some(30),
        knn_k: 10,
        exemplar_fraction: 0.1,
        seed: 1,
        ..Default::default()
    }
}

fn experiment(corpus: &Corpus, config: &RunConfig, topics: usize, train: bool) -> Experiment {
    let options = ExperimentOptions {
        topics,
        train_fraction: 1.0,
        train,
    };
    run_experiment(corpus, config, options).unwrap()
}

struct Synthetic {
    synth: SyntheticCorpus,
    corpus: Corpus,
    full: Experiment,
    full_time: Duration,
}

fn criterion_5(dir: &Path) -> (Outcome, Synthetic) {
    let synth = generate(&SynthConfig::default()).unwrap();
    let corpus = load(&synth, &dir.join("synthetic"));
    let config = acceptance_config();
    let start = Instant::now();
    let full = experiment(&corpus, &config, 10, true);
    let full_time = start.elapsed();
    let frozen = experiment(&corpus, &config, 10, false);
    let (f, z) = (full.metrics.macro_f1, frozen.metrics.macro_f1);
    let same_split = full.split == frozen.split;
    let result = outcome(
        f >= 0.80 && f - z >= 0.10 && same_split && full_time < Duration::from_secs(300),
        format!(
            "{} docs, macro-F1 {f:.3} vs frozen {z:.3} (gap {:.3}), same split: {same_split}, {:.1}s",
            corpus.len(),
            f - z,
            secs(full_time)
        ),
    );
    (
        result,
        Synthetic {
            synth,
            corpus,
            full,
            full_time,
        },
    )
}

fn criterion_6(s: &Synthetic) -> Outcome {
    let config = acceptance_config();
    let mut scores = vec![(10, s.full.metrics.macro_f1)];
    for k in [20, 50] {
        scores.push((k, experiment(&s.corpus, &config, k, true).metrics.macro_f1));
    }
    let best = scores.iter().map(|s| s.1).fold(f64::MIN, f64::max);
    let worst = scores.iter().map(|s| s.1).fold(f64::MAX, f64::min);
    let k2 = experiment(&s.corpus, &config, 2, true).metrics.macro_f1;
    let listing: Vec<String> = scores
        .iter()
        .map(|(k, f)| format!("K={k} {f:.3}"))
        .collect();
    outcome(
        best - worst <= 0.05 && k2 <= best - 0.05,
        format!(
            "{}, spread {:.3}; K=2 {k2:.3} ({:.3} below best)",
            listing.join(", "),
            best - worst,
            best - k2
        ),
    )
}

fn criterion_7(s: &Synthetic, dir: &Path) -> Outcome {
    let ablated = s.synth.without_tags().unwrap();
    let corpus = load(&ablated, &dir.join("ablated"));
    let mut config = acceptance_config();
    config.omega_meta.clear();
    let f = experiment(&corpus, &config, 10, true).metrics.macro_f1;
    let full = s.full.metrics.macro_f1;
    outcome(
        corpus.schema.fields.is_empty() && full - f >= 0.05,
        format!(
            "without the tag field macro-F1 {f:.3} vs full {full:.3} (drop {:.3})",
            full - f
        ),
    )
}

fn repad(corpus: &Corpus, extra: usize) -> Corpus {
    let mut out = corpus.clone();
    for (i, d) in out.documents.iter_mut().enumerate() {
        for seq in &mut d.metadata {
            let n = 1 + (i + extra) % 7;
            seq.values.extend(std::iter::repeat_n(PAD, n));
            seq.mask.extend(std::iter::repeat_n(false, n));
        }
    }
    out
}

fn cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_topicfuse"))
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn cli_pipeline(data: &Path, out: &Path) -> bool {
    let corpus = data.join("corpus.jsonl");
    let schema = data.join("schema.json");
    ["train-lda", "train", "embed", "classify"]
        .iter()
        .all(|cmd| {
            cli(&[
                cmd,
                "--corpus",
                corpus.to_str().unwrap(),
                "--schema",
                schema.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
                "--topics",
                "10",
                "--lda-iterations",
                "500",
                "--text-dim",
                "64",
                "--word-dim",
                "64",
                "--embed-dim",
                "64",
                "--lr",
                "1e-3",
                "--epochs",
                "30",
                "--knn-k",
                "10",
                "--exemplar-fraction",
                "0.1",
                "--seed",
                "1",
            ])
        })
}

fn criterion_8(s: &Synthetic, dir: &Path) -> Outcome {
    let reference = embed_corpus(&s.full.model, &s.corpus).unwrap();
    let padding_ok = (0..3).all(|extra| {
        let again = embed_corpus(&s.full.model, &repad(&s.corpus, extra)).unwrap();
        again.matrix.as_slice() == reference.matrix.as_slice()
    });

    let data = dir.join("synthetic");
    let (a, b) = (dir.join("run_a"), dir.join("run_b"));
    let ran = cli_pipeline(&data, &a) && cli_pipeline(&data, &b);
    let same = |name: &str| match (fs::read(a.join(name)), fs::read(b.join(name))) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    };
    let model_same = ran && same("model.tfm");
    let predictions_same = ran && same("predictions.csv");
    outcome(
        padding_ok && model_same && predictions_same,
        format!(
            "re-padded embeddings bit-identical: {padding_ok}; repeated runs byte-identical: model {model_same}, predictions {predictions_same}"
        ),
    )
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let mut results: BTreeMap<usize, Outcome> = BTreeMap::new();
    results.insert(1, criterion_1());
    results.insert(2, criterion_2());
    results.insert(3, criterion_3(&dir.path().join("disjoint")));
    results.insert(4, criterion_4());
    let (c5, synthetic) = criterion_5(dir.path());
    results.insert(5, c5);
    results.insert(6, criterion_6(&synthetic));
    results.insert(7, criterion_7(&synthetic, dir.path()));
    results.insert(8, criterion_8(&synthetic, dir.path()));

    let names = [
        "",
        "gradient correctness",
        "loss identities",
        "LDA recovery",
        "KNN exactness",
        "end-to-end synthetic classification",
        "topic-size robustness",
        "metadata ablation",
        "padding invariance and determinism",
    ];
    let mut failed = 0;
    for (i, r) in &results {
        let tag = if r.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!r.pass);
        println!("criterion {i} {tag}  {}: {}", names[*i], r.detail);
    }
    println!(
        "acceptance: {}/{} passed (full synthetic run {:.1}s)",
        results.len() - failed,
        results.len(),
        secs(synthetic.full_time)
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

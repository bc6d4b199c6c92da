mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::Rng;

use topicfuse::corpus::{
    Document, FieldEncoding, FieldSpec, MetadataSchema, MetadataSequence, Vocabulary, PAD,
};
use topicfuse::encoder::{
    FusionModel, ModelSpec, Pooling, PrecomputedEmbeddings, TextEncoder, TextSource,
};
use topicfuse::nnkit::Matrix;
use topicfuse::objective::{train, Targets, TrainingConfig};
use topicfuse::seeds::rng_from_seed;
use topicfuse::synthetic::{generate, SynthConfig};
use topicfuse::topics::TopicDistribution;

fn small_spec(pooling: Pooling) -> ModelSpec {
    ModelSpec {
        text_dim: 6,
        word_dim: 5,
        embed_dim: 4,
        topics: 3,
        dropout: 0.1,
        pooling,
    }
}

fn repad(doc: &Document, extra: &[usize]) -> Document {
    let mut out = doc.clone();
    for (seq, &n) in out.metadata.iter_mut().zip(extra) {
        seq.values.extend(std::iter::repeat_n(PAD, n));
        seq.mask.extend(std::iter::repeat_n(false, n));
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn extra_padding_leaves_embedding_bit_identical(
        seed in 0u64..1000,
        doc in 0usize..40,
        extra in prop::collection::vec(0usize..9, 2),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let synth = generate(&SynthConfig { docs: 40, max_tags: 3, tags_per_label: 3, noise_tags: 4, ..Default::default() }).unwrap();
        let corpus = common::load(&synth, dir.path());
        let mut rng = rng_from_seed(seed);
        let model = FusionModel::new(
            &small_spec(Pooling::UnmaskedMean),
            &corpus.schema,
            &corpus.vocabulary,
            TextSource::Trainable,
            None,
            &mut rng,
        ).unwrap();
        let d = &corpus.documents[doc];
        let z = model.embed(d).unwrap();
        let padded = repad(d, &extra);
        prop_assert_eq!(model.embed(&padded).unwrap(), z);
    }
}

fn two_field_schema(first: &str, second: &str) -> MetadataSchema {
    let field = |name: &str, dim: usize, n: usize| FieldSpec {
        name: name.into(),
        encoding: FieldEncoding::OneHot,
        max_len: 3,
        embed_dim: dim,
        values: ["<unk>", "<pad>"]
            .iter()
            .map(|s| s.to_string())
            .chain((0..n).map(|i| format!("{name}{i}")))
            .collect(),
    };
    let make = |name: &str| {
        if name == "a" {
            field("a", 2, 3)
        } else {
            field("b", 3, 4)
        }
    };
    MetadataSchema {
        fields: vec![make(first), make(second)],
        max_tokens: 8,
        min_count: 1,
    }
}

#[test]
fn swapping_schema_fields_with_projection_rows_keeps_z() {
    let vocab = Vocabulary::from_tokens(
        ["<unk>", "<pad>", "x", "y", "z"].map(String::from).to_vec(),
        vec![1; 5],
    )
    .unwrap();
    let schema_ab = two_field_schema("a", "b");
    let spec = small_spec(Pooling::UnmaskedMean);
    let mut rng = rng_from_seed(3);
    let ab = FusionModel::new(
        &spec,
        &schema_ab,
        &vocab,
        TextSource::Trainable,
        None,
        &mut rng,
    )
    .unwrap();

    // Same parameters with the fields listed in the other order: the W_z row
    // blocks for ψ_a and ψ_b trade places.
    let (dt, da, db) = (6, 2, 3);
    let mut ba = ab.clone();
    ba.schema = two_field_schema("b", "a");
    ba.metadata.swap(0, 1);
    ba.w_meta.swap(0, 1);
    let order: Vec<usize> = (0..dt)
        .chain(dt + da..dt + da + db)
        .chain(dt..dt + da)
        .collect();
    let mut w = Matrix::zeros(ab.w_z.rows(), ab.w_z.cols());
    for (new, &old) in order.iter().enumerate() {
        w.row_mut(new).copy_from_slice(ab.w_z.row(old));
    }
    ba.w_z = w;

    let mut rng = rng_from_seed(4);
    for i in 0..20 {
        let tokens: Vec<u32> = (0..rng.random_range(0..6))
            .map(|_| rng.random_range(2..5))
            .collect();
        let a: Vec<u32> = (0..rng.random_range(0..4))
            .map(|_| rng.random_range(2..5))
            .collect();
        let b: Vec<u32> = (0..rng.random_range(0..4))
            .map(|_| rng.random_range(2..6))
            .collect();
        let doc = Document {
            id: format!("d{i}"),
            tokens,
            metadata: vec![
                MetadataSequence::from_values(&a, 3),
                MetadataSequence::from_values(&b, 3),
            ],
            label: None,
        };
        let mut swapped = doc.clone();
        swapped.metadata.swap(0, 1);

        let fwd = ab.forward(&doc, None).unwrap();
        let mut expected = ab.encode_text(&doc).unwrap();
        expected.extend(ab.encode_metadata(&doc, 0).unwrap());
        expected.extend(ab.encode_metadata(&doc, 1).unwrap());
        assert_eq!(fwd.cache.concatenated(), expected.as_slice());

        // Only the summation order inside W_zᵀx changes.
        let z_ba = ba.embed(&swapped).unwrap();
        for (x, y) in fwd.z.iter().zip(&z_ba) {
            assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()), "{x} vs {y}");
        }
    }
}

#[test]
fn precomputed_table_is_never_updated() {
    let dir = tempfile::tempdir().unwrap();
    let synth = common::synth(40);
    let corpus = common::load(&synth, dir.path());
    let mut rng = rng_from_seed(9);
    let table: BTreeMap<String, Vec<f64>> = corpus
        .documents
        .iter()
        .map(|d| {
            (
                d.id.clone(),
                (0..7).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
        })
        .collect();
    let source = TextSource::Precomputed(PrecomputedEmbeddings {
        dim: 7,
        table: table.clone(),
    });
    let mut model = FusionModel::new(
        &small_spec(Pooling::UnmaskedMean),
        &corpus.schema,
        &corpus.vocabulary,
        source,
        None,
        &mut rng,
    )
    .unwrap();
    assert!(model
        .parameters()
        .iter()
        .all(|(name, _)| !name.starts_with("text")));
    let before = model.clone();

    let topics: BTreeMap<String, TopicDistribution> = corpus
        .documents
        .iter()
        .map(|d| (d.id.clone(), TopicDistribution(vec![0.2, 0.3, 0.5])))
        .collect();
    let targets = Targets::new(topics, &corpus);
    let config = TrainingConfig {
        epochs: 2,
        adam: topicfuse::nnkit::AdamConfig {
            lr: 1e-2,
            ..Default::default()
        },
        ..TrainingConfig::default()
    };
    train(&mut model, &corpus.documents, &targets, &config).unwrap();

    match &model.text {
        TextEncoder::Precomputed { dim, table: after } => {
            assert_eq!(*dim, 7);
            assert_eq!(after, &table);
        }
        TextEncoder::Trainable { .. } => panic!("text encoder changed mode"),
    }
    assert_ne!(model.w_z, before.w_z);
    let doc = &corpus.documents[0];
    assert_eq!(model.encode_text(doc).unwrap(), table[&doc.id]);
}

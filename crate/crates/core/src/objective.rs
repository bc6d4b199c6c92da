//! Self-supervised training objective: KL divergence between the LDA topic
//! mixture and a softmax projection of the embedding, plus multi-label BCE
//! reconstruction of each metadata field, combined with per-part weights.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_targets, Corpus, Document, ReconstructionTarget};
use crate::encoder::{FusionGrads, FusionModel};
use crate::nnkit::{sigmoid, softmax, softplus, AdamConfig, AdamState, Matrix};
use crate::seeds::{Rng, SeedTree};
use crate::topics::TopicDistribution;
use crate::{Error, Result};

/// Floor applied to λ inside the logarithm of the KL term.
pub const LAMBDA_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub omega_text: f64,
    /// Per-field weights by field name; absent fields weigh 1.0.
    #[serde(default)]
    pub omega_meta: BTreeMap<String, f64>,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            omega_text: 1.0,
            omega_meta: BTreeMap::new(),
            adam: AdamConfig::default(),
            batch_size: 8,
            epochs: 3,
            dropout: 0.1,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    /// Three epochs for small corpora, one above 5,000 documents.
    pub fn default_epochs(corpus_size: usize) -> usize {
        if corpus_size > 5_000 {
            1
        } else {
            3
        }
    }

    pub fn omega_for(&self, field: &str) -> f64 {
        self.omega_meta.get(field).copied().unwrap_or(1.0)
    }

    pub fn validate(&self, model: &FusionModel) -> Result<()> {
        let metas: Vec<f64> = model
            .schema
            .fields
            .iter()
            .map(|f| self.omega_for(&f.name))
            .collect();
        if self.omega_text < 0.0 || metas.iter().any(|&w| w < 0.0) {
            return Err(Error::InvalidArgument(
                "loss weights must be non-negative".into(),
            ));
        }
        if self.omega_text == 0.0 && metas.iter().all(|&w| w == 0.0) {
            return Err(Error::InvalidArgument(
                "at least one loss weight must be positive".into(),
            ));
        }
        if let Some(name) = self
            .omega_meta
            .keys()
            .find(|n| model.schema.field_index(n).is_none())
        {
            return Err(Error::UnknownField(name.clone()));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidArgument(
                "batch size must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument("dropout must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Batch-mean losses and the per-document intermediates behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub text_loss: f64,
    pub meta_loss: Vec<f64>,
    pub total: f64,
    /// Softmax topic projection per document.
    pub lambda: Vec<Vec<f64>>,
    /// Metadata logits per document and field.
    pub zeta: Vec<Vec<Vec<f64>>>,
}

impl LossBreakdown {
    pub fn recompute_total(&self, omega_text: f64, omega_meta: &[f64]) -> f64 {
        omega_text * self.text_loss
            + self
                .meta_loss
                .iter()
                .zip(omega_meta)
                .map(|(l, w)| w * l)
                .sum::<f64>()
    }
}

/// Cached surrogate targets for every training document.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Targets {
    pub topics: BTreeMap<String, TopicDistribution>,
    pub reconstruction: BTreeMap<String, ReconstructionTarget>,
}

impl Targets {
    /// Pairs topic targets with reconstruction targets built from `corpus`.
    pub fn new(topics: BTreeMap<String, TopicDistribution>, corpus: &Corpus) -> Self {
        let reconstruction = corpus
            .documents
            .iter()
            .map(|d| (d.id.clone(), build_targets(d, &corpus.schema)))
            .collect();
        Self {
            topics,
            reconstruction,
        }
    }

    fn get(&self, id: &str) -> Result<(&TopicDistribution, &ReconstructionTarget)> {
        let phi = self
            .topics
            .get(id)
            .ok_or_else(|| Error::MissingTarget(id.to_string()))?;
        let y = self
            .reconstruction
            .get(id)
            .ok_or_else(|| Error::MissingTarget(id.to_string()))?;
        Ok((phi, y))
    }
}

/// `λ = softmax(W_tᵀ z)`.
pub fn topic_projection(z: &[f64], w_t: &Matrix) -> Result<Vec<f64>> {
    Ok(softmax(&w_t.matvec_t(z)?))
}

/// `Σ_k φ_k ln(φ_k / λ_k)` with `0 ln 0 = 0`.
pub fn text_loss(phi: &[f64], lambda: &[f64]) -> Result<f64> {
    if phi.len() != lambda.len() {
        return Err(Error::Shape(format!(
            "topic target has {} entries, projection {}",
            phi.len(),
            lambda.len()
        )));
    }
    let kl: f64 = phi
        .iter()
        .zip(lambda)
        .filter(|(&p, _)| p > 0.0)
        .map(|(&p, &l)| p * (p / l.max(LAMBDA_FLOOR)).ln())
        .sum();
    Ok(kl.max(0.0))
}

/// Multi-label binary cross-entropy on logits, via softplus.
pub fn metadata_loss(y: &[f64], zeta: &[f64]) -> Result<f64> {
    if y.len() != zeta.len() {
        return Err(Error::Shape(format!(
            "metadata target has {} entries, logits {}",
            y.len(),
            zeta.len()
        )));
    }
    Ok(y.iter()
        .zip(zeta)
        .map(|(&t, &s)| t * softplus(-s) + (1.0 - t) * softplus(s))
        .sum())
}

struct DocLosses {
    text: f64,
    meta: Vec<f64>,
    lambda: Vec<f64>,
    zeta: Vec<Vec<f64>>,
}

/// Evaluates the batch; when `grads` is supplied, accumulates the gradient
/// of the batch-mean objective into it.
fn run_batch(
    model: &FusionModel,
    batch: &[&Document],
    targets: &Targets,
    config: &TrainingConfig,
    mut dropout: Option<&mut Rng>,
    mut grads: Option<&mut FusionGrads>,
) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let omega_meta: Vec<f64> = model
        .schema
        .fields
        .iter()
        .map(|f| config.omega_for(&f.name))
        .collect();
    let scale = 1.0 / batch.len() as f64;
    let mut per_doc = Vec::with_capacity(batch.len());

    for doc in batch {
        let (phi, y) = targets.get(&doc.id)?;
        if phi.0.len() != model.num_topics() {
            return Err(Error::Shape(format!(
                "topic target for `{}` has {} topics, model has {}",
                doc.id,
                phi.0.len(),
                model.num_topics()
            )));
        }
        let forward = match dropout.as_deref_mut() {
            Some(rng) => model.forward_train(doc, rng)?,
            None => model.forward(doc, None)?,
        };
        let z = &forward.z;
        let lambda = topic_projection(z, &model.w_t)?;
        let text = text_loss(&phi.0, &lambda)?;
        let mut meta = Vec::with_capacity(model.w_meta.len());
        let mut zeta = Vec::with_capacity(model.w_meta.len());
        for (w, target) in model.w_meta.iter().zip(&y.fields) {
            let logits = w.matvec_t(z)?;
            meta.push(metadata_loss(target, &logits)?);
            zeta.push(logits);
        }
        if !text.is_finite() || meta.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFiniteLoss(doc.id.clone()));
        }

        if let Some(g) = grads.as_deref_mut() {
            let phi_mass: f64 = phi.0.iter().sum();
            let dlogits: Vec<f64> = lambda
                .iter()
                .zip(&phi.0)
                .map(|(l, p)| config.omega_text * (l * phi_mass - p))
                .collect();
            g.w_t.add_outer(z, &dlogits, scale);
            let mut dz = model.w_t.matvec(&dlogits)?;
            for (p, (logits, target)) in zeta.iter().zip(&y.fields).enumerate() {
                let dzeta: Vec<f64> = logits
                    .iter()
                    .zip(target)
                    .map(|(&s, &t)| omega_meta[p] * (sigmoid(s) - t))
                    .collect();
                g.w_meta[p].add_outer(z, &dzeta, scale);
                for (d, v) in dz.iter_mut().zip(model.w_meta[p].matvec(&dzeta)?) {
                    *d += v;
                }
            }
            model.backward(&forward.cache, &dz, g, scale)?;
        }
        per_doc.push(DocLosses {
            text,
            meta,
            lambda,
            zeta,
        });
    }

    let fields = model.w_meta.len();
    let text_loss = per_doc.iter().map(|d| d.text).sum::<f64>() * scale;
    let meta_loss: Vec<f64> = (0..fields)
        .map(|p| per_doc.iter().map(|d| d.meta[p]).sum::<f64>() * scale)
        .collect();
    let mut breakdown = LossBreakdown {
        text_loss,
        meta_loss,
        total: 0.0,
        lambda: Vec::with_capacity(per_doc.len()),
        zeta: Vec::with_capacity(per_doc.len()),
    };
    breakdown.total = breakdown.recompute_total(config.omega_text, &omega_meta);
    for d in per_doc {
        breakdown.lambda.push(d.lambda);
        breakdown.zeta.push(d.zeta);
    }
    Ok(breakdown)
}

/// Inference-mode (no dropout) batch-mean objective.
pub fn total_loss(
    model: &FusionModel,
    batch: &[&Document],
    targets: &Targets,
    config: &TrainingConfig,
) -> Result<LossBreakdown> {
    run_batch(model, batch, targets, config, None, None)
}

/// Batch-mean objective and its gradient with respect to every trainable
/// block. Dropout is active when `dropout_rng` is given.
pub fn loss_and_gradients(
    model: &FusionModel,
    batch: &[&Document],
    targets: &Targets,
    config: &TrainingConfig,
    dropout_rng: Option<&mut Rng>,
) -> Result<(LossBreakdown, FusionGrads)> {
    let mut grads = model.zero_grads();
    let loss = run_batch(model, batch, targets, config, dropout_rng, Some(&mut grads))?;
    Ok((loss, grads))
}

/// Mean training-mode losses over one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub text_loss: f64,
    pub meta_loss: Vec<f64>,
    pub total: f64,
}

/// Renders `epoch,text_loss,meta_loss_<field>...,total`.
pub fn loss_log_csv(field_names: &[String], log: &[EpochLoss]) -> String {
    let mut out = String::from("epoch,text_loss");
    for f in field_names {
        out.push_str(&format!(",meta_loss_{f}"));
    }
    out.push_str(",total\n");
    for e in log {
        out.push_str(&format!("{},{}", e.epoch, e.text_loss));
        for m in &e.meta_loss {
            out.push_str(&format!(",{m}"));
        }
        out.push_str(&format!(",{}\n", e.total));
    }
    out
}

/// Mini-batch Adam over seeded shuffles of `docs`.
pub fn train(
    model: &mut FusionModel,
    docs: &[Document],
    targets: &Targets,
    config: &TrainingConfig,
) -> Result<Vec<EpochLoss>> {
    config.validate(model)?;
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    for d in docs {
        targets.get(&d.id)?;
    }
    model.dropout = config.dropout;
    let seeds = SeedTree::new(config.seed);
    let mut shuffle_rng = seeds.rng("shuffle");
    let mut dropout_rng = seeds.rng("dropout");
    let sizes: Vec<usize> = model.parameters().iter().map(|(_, b)| b.len()).collect();
    let mut adam = AdamState::new(config.adam, &sizes);
    let fields = model.w_meta.len();

    let mut order: Vec<usize> = (0..docs.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut text_sum = 0.0;
        let mut meta_sum = vec![0.0; fields];
        let mut total_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Document> = chunk.iter().map(|&i| &docs[i]).collect();
            let (loss, grads) =
                loss_and_gradients(model, &batch, targets, config, Some(&mut dropout_rng))?;
            let n = batch.len() as f64;
            text_sum += loss.text_loss * n;
            for (s, l) in meta_sum.iter_mut().zip(&loss.meta_loss) {
                *s += l * n;
            }
            total_sum += loss.total * n;
            let mut params = model.parameters_mut();
            adam.step(&mut params, &grads.blocks())?;
        }
        let n = docs.len() as f64;
        log.push(EpochLoss {
            epoch,
            text_loss: text_sum / n,
            meta_loss: meta_sum.into_iter().map(|s| s / n).collect(),
            total: total_sum / n,
        });
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{FieldEncoding, FieldSpec, MetadataSchema, MetadataSequence, Vocabulary};
    use crate::encoder::{ModelSpec, Pooling, TextSource};
    use crate::nnkit::grad_check;
    use crate::seeds::rng_from_seed;
    use rand::Rng as _;
    use std::f64::consts::LN_2;

    #[test]
    fn kl_identities() {
        assert_eq!(text_loss(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        assert!((text_loss(&[1.0, 0.0], &[0.5, 0.5]).unwrap() - LN_2).abs() < 1e-15);
        assert!(text_loss(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn kl_matches_direct_summation() {
        let mut rng = rng_from_seed(17);
        for _ in 0..50 {
            let mut phi: Vec<f64> = (0..6).map(|_| rng.random_range(0.01..1.0)).collect();
            let mut lam: Vec<f64> = (0..6).map(|_| rng.random_range(0.01..1.0)).collect();
            let (sp, sl): (f64, f64) = (phi.iter().sum(), lam.iter().sum());
            phi.iter_mut().for_each(|p| *p /= sp);
            lam.iter_mut().for_each(|l| *l /= sl);
            // Oracle: cross-entropy minus entropy, each summed separately.
            let cross: f64 = phi.iter().zip(&lam).map(|(p, l)| -p * l.ln()).sum();
            let entropy: f64 = phi.iter().map(|p| -p * p.ln()).sum();
            let got = text_loss(&phi, &lam).unwrap();
            assert!(got >= 0.0);
            assert!((got - (cross - entropy)).abs() < 1e-12);
        }
    }

    #[test]
    fn bce_values() {
        assert!((metadata_loss(&[1.0], &[0.0]).unwrap() - LN_2).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for s in [0.0, 1.0, 5.0, 10.0, 20.0, 40.0] {
            let l = metadata_loss(&[1.0], &[s]).unwrap();
            assert!(l < prev);
            prev = l;
        }
        assert!(prev < 1e-17);
        assert!(metadata_loss(&[1.0, 0.0], &[0.0]).is_err());
    }

    #[test]
    fn bce_matches_naive_form() {
        let mut rng = rng_from_seed(3);
        for _ in 0..100 {
            let y: Vec<f64> = (0..7)
                .map(|_| f64::from(rng.random_range(0..2u8)))
                .collect();
            let z: Vec<f64> = (0..7).map(|_| rng.random_range(-10.0..10.0)).collect();
            let naive: f64 = y
                .iter()
                .zip(&z)
                .map(|(&t, &s)| {
                    let p = 1.0 / (1.0 + (-s).exp());
                    -t * p.ln() - (1.0 - t) * (1.0 - p).ln()
                })
                .sum();
            assert!((metadata_loss(&y, &z).unwrap() - naive).abs() < 1e-9);
        }
    }

    #[test]
    fn projection_properties() {
        let w = Matrix::zeros(4, 3);
        assert_eq!(
            topic_projection(&[1.0, 2.0, 3.0, 4.0], &w).unwrap(),
            vec![1.0 / 3.0; 3]
        );
        assert!(topic_projection(&[1.0], &w).is_err());

        let mut rng = rng_from_seed(8);
        let w =
            Matrix::from_vec(4, 3, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let z: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let logits: Vec<f64> = (0..3)
            .map(|k| (0..4).map(|i| w[(i, k)] * z[i]).sum())
            .collect();
        let denom: f64 = logits.iter().map(|l| l.exp()).sum();
        for (got, l) in topic_projection(&z, &w).unwrap().iter().zip(&logits) {
            assert!((got - l.exp() / denom).abs() < 1e-12);
        }
    }

    pub(crate) fn tiny_instance(
        seed: u64,
        text: TextSource,
        text_dim: usize,
    ) -> (FusionModel, Vec<Document>, Targets) {
        let schema = MetadataSchema {
            fields: vec![FieldSpec {
                name: "tags".into(),
                encoding: FieldEncoding::OneHot,
                max_len: 2,
                embed_dim: 3,
                values: ["<unk>", "<pad>", "a", "b"].map(String::from).to_vec(),
            }],
            max_tokens: 16,
            min_count: 1,
        };
        let vocab = Vocabulary::from_tokens(
            ["<unk>", "<pad>", "x", "y", "z"].map(String::from).to_vec(),
            vec![1; 5],
        )
        .unwrap();
        let spec = ModelSpec {
            text_dim,
            word_dim: 4,
            embed_dim: 5,
            topics: 3,
            dropout: 0.0,
            pooling: Pooling::UnmaskedMean,
        };
        let mut rng = rng_from_seed(seed);
        let model = FusionModel::new(&spec, &schema, &vocab, text, None, &mut rng).unwrap();
        let docs = vec![
            Document {
                id: "a".into(),
                tokens: vec![2, 3, 3],
                metadata: vec![MetadataSequence::from_values(&[2, 3], 2)],
                label: None,
            },
            Document {
                id: "b".into(),
                tokens: vec![4],
                metadata: vec![MetadataSequence::from_values(&[3], 2)],
                label: None,
            },
        ];
        let mut topics = BTreeMap::new();
        for d in &docs {
            let raw: Vec<f64> = (0..3).map(|_| rng.random_range(0.1..1.0)).collect();
            let s: f64 = raw.iter().sum();
            topics.insert(
                d.id.clone(),
                TopicDistribution(raw.iter().map(|r| r / s).collect()),
            );
        }
        let corpus = Corpus {
            documents: docs.clone(),
            vocabulary: vocab,
            schema,
        };
        let targets = Targets::new(topics, &corpus);
        (model, docs, targets)
    }

    fn set_block(model: &mut FusionModel, index: usize, values: &[f64]) {
        model.parameters_mut()[index].values.copy_from_slice(values);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (model, docs, targets) = tiny_instance(5, TextSource::Trainable, 6);
        let config = TrainingConfig {
            omega_text: 0.7,
            omega_meta: [("tags".to_string(), 1.3)].into(),
            ..TrainingConfig::default()
        };
        let batch: Vec<&Document> = docs.iter().collect();
        let (_, grads) = loss_and_gradients(&model, &batch, &targets, &config, None).unwrap();
        let params: Vec<(String, Vec<f64>)> = model
            .parameters()
            .into_iter()
            .map(|(n, b)| (n, b.to_vec()))
            .collect();
        for (i, ((name, values), g)) in params.iter().zip(grads.blocks()).enumerate() {
            let report = grad_check(
                |p| {
                    let mut m = model.clone();
                    set_block(&mut m, i, p);
                    total_loss(&m, &batch, &targets, &config).unwrap().total
                },
                values,
                g,
                1e-5,
                1e-4,
            );
            assert!(report.passed, "{name}: {report:?}");
        }
    }

    #[test]
    fn meta_weights_zero_leaves_text_term() {
        let (model, docs, targets) = tiny_instance(6, TextSource::Trainable, 4);
        let config = TrainingConfig {
            omega_text: 2.0,
            omega_meta: [("tags".to_string(), 0.0)].into(),
            ..TrainingConfig::default()
        };
        let batch: Vec<&Document> = docs.iter().collect();
        let loss = total_loss(&model, &batch, &targets, &config).unwrap();
        assert_eq!(loss.total, 2.0 * loss.text_loss);
        assert!(loss.meta_loss[0] > 0.0);
    }

    #[test]
    fn duplicated_document_keeps_mean() {
        let (model, docs, targets) = tiny_instance(7, TextSource::Trainable, 4);
        let config = TrainingConfig::default();
        let once = total_loss(&model, &[&docs[0]], &targets, &config).unwrap();
        let twice = total_loss(&model, &[&docs[0], &docs[0]], &targets, &config).unwrap();
        assert_eq!(once.total, twice.total);
        assert_eq!(once.text_loss, twice.text_loss);
    }

    #[test]
    fn total_is_sum_of_component_oracles() {
        let (model, docs, targets) = tiny_instance(8, TextSource::Trainable, 4);
        let config = TrainingConfig {
            omega_text: 0.5,
            omega_meta: [("tags".to_string(), 2.0)].into(),
            ..TrainingConfig::default()
        };
        let loss = total_loss(&model, &[&docs[1]], &targets, &config).unwrap();
        let z = model.embed(&docs[1]).unwrap();
        let phi = &targets.topics["b"].0;
        let logits: Vec<f64> = (0..3)
            .map(|k| (0..5).map(|i| model.w_t[(i, k)] * z[i]).sum())
            .collect();
        let lse = logits.iter().map(|l| l.exp()).sum::<f64>().ln();
        let kl: f64 = phi
            .iter()
            .zip(&logits)
            .map(|(p, l)| p * (p.ln() - (l - lse)))
            .sum();
        let y = &targets.reconstruction["b"].fields[0];
        let bce: f64 = (0..4)
            .map(|v| {
                let s: f64 = (0..5).map(|i| model.w_meta[0][(i, v)] * z[i]).sum();
                let p = 1.0 / (1.0 + (-s).exp());
                -y[v] * p.ln() - (1.0 - y[v]) * (1.0 - p).ln()
            })
            .sum();
        assert!((loss.total - (0.5 * kl + 2.0 * bce)).abs() < 1e-12);
    }

    #[test]
    fn missing_target_is_an_error() {
        let (model, mut docs, targets) = tiny_instance(9, TextSource::Trainable, 4);
        docs[0].id = "ghost".into();
        let config = TrainingConfig::default();
        assert!(matches!(
            total_loss(&model, &[&docs[0]], &targets, &config),
            Err(Error::MissingTarget(id)) if id == "ghost"
        ));
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (mut model, docs, targets) = tiny_instance(10, TextSource::Trainable, 4);
        let before = model.clone();
        let config = TrainingConfig {
            adam: AdamConfig {
                lr: 0.0,
                ..AdamConfig::default()
            },
            epochs: 2,
            batch_size: 1,
            ..TrainingConfig::default()
        };
        let log = train(&mut model, &docs, &targets, &config).unwrap();
        assert_eq!(log.len(), 2);
        assert_eq!(model.parameters(), before.parameters());
    }

    #[test]
    fn training_is_seed_deterministic() {
        let (model, docs, targets) = tiny_instance(11, TextSource::Trainable, 4);
        let config = TrainingConfig {
            adam: AdamConfig {
                lr: 1e-2,
                ..AdamConfig::default()
            },
            epochs: 3,
            batch_size: 1,
            seed: 99,
            ..TrainingConfig::default()
        };
        let (mut a, mut b) = (model.clone(), model.clone());
        let la = train(&mut a, &docs, &targets, &config).unwrap();
        let lb = train(&mut b, &docs, &targets, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
        assert_ne!(a, model);
        let csv = loss_log_csv(&["tags".into()], &la);
        assert!(csv.starts_with("epoch,text_loss,meta_loss_tags,total\n"));
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn config_validation() {
        let (model, _, _) = tiny_instance(12, TextSource::Trainable, 4);
        let none = TrainingConfig {
            omega_text: 0.0,
            omega_meta: [("tags".to_string(), 0.0)].into(),
            ..TrainingConfig::default()
        };
        assert!(none.validate(&model).is_err());
        let batch = TrainingConfig {
            batch_size: 0,
            ..TrainingConfig::default()
        };
        assert!(batch.validate(&model).is_err());
        let unknown = TrainingConfig {
            omega_meta: [("nope".to_string(), 1.0)].into(),
            ..TrainingConfig::default()
        };
        assert!(unknown.validate(&model).is_err());
        assert_eq!(TrainingConfig::default_epochs(1_600), 3);
        assert_eq!(TrainingConfig::default_epochs(10_000), 1);
    }
}

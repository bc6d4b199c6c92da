//! Text and metadata encoders and the fusion projection that produces the
//! final document embedding `z = W_zᵀ(φ ⊕ ψ_1 ⊕ … ⊕ ψ_P)`.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    parse_keyed_vectors, Document, FieldEncoding, MetadataSchema, MetadataSequence, Vocabulary,
    WordVectors,
};
use crate::nnkit::{Activation, DenseLayer, Dropout, LayerCache, LayerGradients, Matrix, ParamRef};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"TFUSEMDL";
const FORMAT_VERSION: u32 = 1;

/// How per-position metadata embeddings are averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Divide by the number of unmasked positions (at least one).
    #[default]
    UnmaskedMean,
    /// Divide by the padded sequence length.
    PaperLiteral,
}

impl std::str::FromStr for Pooling {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unmasked_mean" => Ok(Pooling::UnmaskedMean),
            "paper_literal" => Ok(Pooling::PaperLiteral),
            other => Err(Error::InvalidArgument(format!("unknown pooling `{other}`"))),
        }
    }
}

/// Where the text embedding φ comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum TextEncoder {
    /// Vectors produced by an external encoder, looked up by document id and
    /// never updated.
    Precomputed {
        dim: usize,
        table: BTreeMap<String, Vec<f64>>,
    },
    /// Mean of word embeddings followed by a tanh layer and a linear layer.
    Trainable {
        embeddings: Matrix,
        hidden: DenseLayer,
        output: DenseLayer,
    },
}

impl TextEncoder {
    pub fn output_dim(&self) -> usize {
        match self {
            TextEncoder::Precomputed { dim, .. } => *dim,
            TextEncoder::Trainable { output, .. } => output.output_dim(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MetadataInput {
    OneHot,
    /// Fixed per-value input vectors (phrase averages of word vectors).
    WordVectors(Matrix),
}

/// Two tanh layers mapping one metadata value to `embed_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetadataEncoder {
    pub input: MetadataInput,
    pub first: DenseLayer,
    pub second: DenseLayer,
}

impl MetadataEncoder {
    fn forward_value(&self, value: u32) -> Result<(Vec<f64>, LayerCache, LayerCache)> {
        let (h, c1) = match &self.input {
            MetadataInput::OneHot => self.first.forward_one_hot(value as usize)?,
            MetadataInput::WordVectors(table) => {
                if value as usize >= table.rows() {
                    return Err(Error::Shape(format!("metadata value {value} out of range")));
                }
                self.first.forward(table.row(value as usize))?
            }
        };
        let (out, c2) = self.second.forward(&h)?;
        Ok((out, c1, c2))
    }
}

/// Dimensions and options used to build a fresh model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub text_dim: usize,
    pub word_dim: usize,
    pub embed_dim: usize,
    pub topics: usize,
    pub dropout: f64,
    pub pooling: Pooling,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            text_dim: 256,
            word_dim: 300,
            embed_dim: 500,
            topics: 50,
            dropout: 0.1,
            pooling: Pooling::UnmaskedMean,
        }
    }
}

pub enum TextSource {
    Trainable,
    Precomputed(PrecomputedEmbeddings),
}

/// Externally produced text embeddings keyed by document id.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecomputedEmbeddings {
    pub dim: usize,
    pub table: BTreeMap<String, Vec<f64>>,
}

impl PrecomputedEmbeddings {
    /// Reads `D_t` on the first line followed by `doc_id v1 .. vD_t` lines.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let (dim, rows) = parse_keyed_vectors(path, &text)?;
        Ok(Self {
            dim,
            table: rows.into_iter().collect(),
        })
    }
}

/// Every trainable parameter plus the frozen lookup tables, schema and
/// vocabulary needed to embed new documents.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    pub text: TextEncoder,
    pub metadata: Vec<MetadataEncoder>,
    /// `(D_t + Σ D_p) × D_e`
    pub w_z: Matrix,
    /// `D_e × K`
    pub w_t: Matrix,
    /// `D_e × V^p` per field
    pub w_meta: Vec<Matrix>,
    pub dropout: f64,
    pub pooling: Pooling,
    pub schema: MetadataSchema,
    pub vocabulary: Vocabulary,
}

/// Gradient buffers shaped like the trainable parameters of a [`FusionModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct FusionGrads {
    pub text: Option<(Matrix, LayerGradients, LayerGradients)>,
    pub metadata: Vec<(LayerGradients, LayerGradients)>,
    pub w_z: Matrix,
    pub w_t: Matrix,
    pub w_meta: Vec<Matrix>,
}

#[derive(Debug, Clone)]
enum TextCache {
    Frozen,
    Trainable {
        tokens: Vec<u32>,
        hidden: LayerCache,
        output: LayerCache,
    },
}

#[derive(Debug, Clone)]
struct FieldCache {
    positions: Vec<(LayerCache, LayerCache)>,
    denominator: f64,
}

/// Intermediate values of one forward pass, consumed by [`FusionModel::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    text: TextCache,
    fields: Vec<FieldCache>,
    /// Input to the projection, after dropout.
    projected_input: Vec<f64>,
    mask: Option<Vec<f64>>,
}

impl ForwardCache {
    pub fn concatenated(&self) -> &[f64] {
        &self.projected_input
    }
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub z: Vec<f64>,
    pub cache: ForwardCache,
}

impl FusionModel {
    pub fn new<R: Rng + ?Sized>(
        spec: &ModelSpec,
        schema: &MetadataSchema,
        vocabulary: &Vocabulary,
        text: TextSource,
        word_vectors: Option<&WordVectors>,
        rng: &mut R,
    ) -> Result<Self> {
        if !schema.is_finalized() {
            return Err(Error::Schema("schema value sets are not finalized".into()));
        }
        if spec.embed_dim == 0 || spec.topics < 2 {
            return Err(Error::InvalidArgument(
                "embed_dim >= 1 and topics >= 2 required".into(),
            ));
        }
        Dropout::new(spec.dropout)?;
        let text = match text {
            TextSource::Precomputed(p) => {
                if let Some((id, v)) = p.table.iter().find(|(_, v)| v.len() != p.dim) {
                    return Err(Error::Shape(format!(
                        "precomputed embedding `{id}` has {} values, expected {}",
                        v.len(),
                        p.dim
                    )));
                }
                TextEncoder::Precomputed {
                    dim: p.dim,
                    table: p.table,
                }
            }
            TextSource::Trainable => {
                let v = vocabulary.len();
                TextEncoder::Trainable {
                    embeddings: Matrix::glorot_uniform(v, spec.word_dim, v, spec.word_dim, rng),
                    hidden: DenseLayer::init(spec.word_dim, spec.text_dim, Activation::Tanh, rng),
                    output: DenseLayer::init(
                        spec.text_dim,
                        spec.text_dim,
                        Activation::Identity,
                        rng,
                    ),
                }
            }
        };
        let mut metadata = Vec::with_capacity(schema.fields.len());
        for field in &schema.fields {
            let input = match field.encoding {
                FieldEncoding::OneHot => MetadataInput::OneHot,
                FieldEncoding::WordVectors => {
                    let wv = word_vectors.ok_or_else(|| {
                        Error::InvalidArgument(format!(
                            "field `{}` uses word vectors but none were supplied",
                            field.name
                        ))
                    })?;
                    let mut table = Matrix::zeros(field.value_count(), wv.dim);
                    for (i, value) in field.values.iter().enumerate().skip(2) {
                        table.row_mut(i).copy_from_slice(&wv.phrase_vector(value));
                    }
                    MetadataInput::WordVectors(table)
                }
            };
            let in_dim = match &input {
                MetadataInput::OneHot => field.value_count(),
                MetadataInput::WordVectors(t) => t.cols(),
            };
            metadata.push(MetadataEncoder {
                input,
                first: DenseLayer::init(in_dim, field.embed_dim, Activation::Tanh, rng),
                second: DenseLayer::init(field.embed_dim, field.embed_dim, Activation::Tanh, rng),
            });
        }
        let concat = text.output_dim() + schema.fields.iter().map(|f| f.embed_dim).sum::<usize>();
        let w_z = Matrix::glorot_uniform(concat, spec.embed_dim, concat, spec.embed_dim, rng);
        let w_t = Matrix::glorot_uniform(
            spec.embed_dim,
            spec.topics,
            spec.embed_dim,
            spec.topics,
            rng,
        );
        let w_meta = schema
            .fields
            .iter()
            .map(|f| {
                Matrix::glorot_uniform(
                    spec.embed_dim,
                    f.value_count(),
                    spec.embed_dim,
                    f.value_count(),
                    rng,
                )
            })
            .collect();
        Ok(Self {
            text,
            metadata,
            w_z,
            w_t,
            w_meta,
            dropout: spec.dropout,
            pooling: spec.pooling,
            schema: schema.clone(),
            vocabulary: vocabulary.clone(),
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.w_z.cols()
    }

    pub fn num_topics(&self) -> usize {
        self.w_t.cols()
    }

    pub fn text_dim(&self) -> usize {
        self.text.output_dim()
    }

    pub fn concat_dim(&self) -> usize {
        self.w_z.rows()
    }

    /// Adds or replaces precomputed text vectors (for documents not seen at
    /// training time). Fails for a trainable text encoder.
    pub fn extend_precomputed(&mut self, extra: PrecomputedEmbeddings) -> Result<()> {
        match &mut self.text {
            TextEncoder::Precomputed { dim, table } => {
                if extra.dim != *dim {
                    return Err(Error::Shape(format!(
                        "precomputed dimension {} does not match model {dim}",
                        extra.dim
                    )));
                }
                table.extend(extra.table);
                Ok(())
            }
            TextEncoder::Trainable { .. } => Err(Error::InvalidArgument(
                "model has a trainable text encoder".into(),
            )),
        }
    }

    fn text_forward(&self, doc: &Document) -> Result<(Vec<f64>, TextCache)> {
        match &self.text {
            TextEncoder::Precomputed { table, .. } => {
                let phi = table
                    .get(&doc.id)
                    .ok_or_else(|| Error::MissingEmbedding(doc.id.clone()))?;
                Ok((phi.clone(), TextCache::Frozen))
            }
            TextEncoder::Trainable {
                embeddings,
                hidden,
                output,
            } => {
                let mut mean = vec![0.0; embeddings.cols()];
                for &t in &doc.tokens {
                    if t as usize >= embeddings.rows() {
                        return Err(Error::TokenOutOfRange {
                            id: t as usize,
                            vocab: embeddings.rows(),
                        });
                    }
                    for (m, e) in mean.iter_mut().zip(embeddings.row(t as usize)) {
                        *m += e;
                    }
                }
                if !doc.tokens.is_empty() {
                    let n = doc.tokens.len() as f64;
                    mean.iter_mut().for_each(|m| *m /= n);
                }
                let (h, hidden_cache) = hidden.forward(&mean)?;
                let (phi, output_cache) = output.forward(&h)?;
                Ok((
                    phi,
                    TextCache::Trainable {
                        tokens: doc.tokens.clone(),
                        hidden: hidden_cache,
                        output: output_cache,
                    },
                ))
            }
        }
    }

    fn field_forward(
        &self,
        field: usize,
        seq: &MetadataSequence,
    ) -> Result<(Vec<f64>, FieldCache)> {
        let encoder = &self.metadata[field];
        let dim = self.schema.fields[field].embed_dim;
        let denominator = match self.pooling {
            Pooling::UnmaskedMean => seq.active_len().max(1) as f64,
            Pooling::PaperLiteral => seq.values.len().max(1) as f64,
        };
        let mut sum = vec![0.0; dim];
        let mut positions = Vec::new();
        for value in seq.unmasked() {
            let (psi, c1, c2) = encoder.forward_value(value)?;
            for (s, p) in sum.iter_mut().zip(&psi) {
                *s += p;
            }
            positions.push((c1, c2));
        }
        sum.iter_mut().for_each(|s| *s /= denominator);
        Ok((
            sum,
            FieldCache {
                positions,
                denominator,
            },
        ))
    }

    /// φ for one document.
    pub fn encode_text(&self, doc: &Document) -> Result<Vec<f64>> {
        Ok(self.text_forward(doc)?.0)
    }

    /// Pooled ψ_p for one metadata field.
    pub fn encode_metadata(&self, doc: &Document, field: usize) -> Result<Vec<f64>> {
        let seq = doc
            .metadata
            .get(field)
            .ok_or_else(|| Error::Shape(format!("document `{}` lacks field {field}", doc.id)))?;
        Ok(self.field_forward(field, seq)?.0)
    }

    /// Full forward pass. `dropout_mask` multiplies the concatenated vector
    /// and is only supplied in training.
    pub fn forward(&self, doc: &Document, dropout_mask: Option<Vec<f64>>) -> Result<Forward> {
        if doc.metadata.len() != self.metadata.len() {
            return Err(Error::Shape(format!(
                "document `{}` has {} metadata fields, model expects {}",
                doc.id,
                doc.metadata.len(),
                self.metadata.len()
            )));
        }
        let (mut concat, text) = self.text_forward(doc)?;
        let mut fields = Vec::with_capacity(self.metadata.len());
        for (p, seq) in doc.metadata.iter().enumerate() {
            let (psi, cache) = self.field_forward(p, seq)?;
            concat.extend_from_slice(&psi);
            fields.push(cache);
        }
        if let Some(mask) = &dropout_mask {
            if mask.len() != concat.len() {
                return Err(Error::Shape("dropout mask length".into()));
            }
            concat.iter_mut().zip(mask).for_each(|(c, m)| *c *= m);
        }
        let z = self.w_z.matvec_t(&concat)?;
        Ok(Forward {
            z,
            cache: ForwardCache {
                text,
                fields,
                projected_input: concat,
                mask: dropout_mask,
            },
        })
    }

    /// Training-mode forward pass with a freshly sampled dropout mask.
    pub fn forward_train<R: Rng + ?Sized>(&self, doc: &Document, rng: &mut R) -> Result<Forward> {
        let mask = Dropout::new(self.dropout)?.sample_mask(self.concat_dim(), rng);
        self.forward(doc, Some(mask))
    }

    /// Deterministic inference embedding.
    pub fn embed(&self, doc: &Document) -> Result<Vec<f64>> {
        Ok(self.forward(doc, None)?.z)
    }

    /// Accumulates `scale · ∂loss/∂θ` for the encoder and projection given
    /// `∂loss/∂z`.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        dz: &[f64],
        grads: &mut FusionGrads,
        scale: f64,
    ) -> Result<()> {
        grads.w_z.add_outer(&cache.projected_input, dz, scale);
        let mut dconcat = self.w_z.matvec(dz)?;
        if let Some(mask) = &cache.mask {
            dconcat.iter_mut().zip(mask).for_each(|(d, m)| *d *= m);
        }
        let text_dim = self.text_dim();
        let (dphi, mut rest) = dconcat.split_at(text_dim);

        if let (
            TextEncoder::Trainable {
                embeddings,
                hidden,
                output,
            },
            TextCache::Trainable {
                tokens,
                hidden: hc,
                output: oc,
            },
            Some((g_emb, g_hidden, g_output)),
        ) = (&self.text, &cache.text, grads.text.as_mut())
        {
            let delta = output.accumulate(oc, dphi, g_output, scale)?;
            let dh = output.input_gradient(&delta)?;
            let delta = hidden.accumulate(hc, &dh, g_hidden, scale)?;
            let dmean = hidden.input_gradient(&delta)?;
            if !tokens.is_empty() {
                let s = scale / tokens.len() as f64;
                for &t in tokens {
                    debug_assert!((t as usize) < embeddings.rows());
                    for (g, d) in g_emb.row_mut(t as usize).iter_mut().zip(&dmean) {
                        *g += s * d;
                    }
                }
            }
        }

        for ((encoder, fc), (g1, g2)) in self
            .metadata
            .iter()
            .zip(&cache.fields)
            .zip(grads.metadata.iter_mut())
        {
            let dim = encoder.second.output_dim();
            let (dpsi, tail) = rest.split_at(dim);
            rest = tail;
            let upstream: Vec<f64> = dpsi.iter().map(|d| d / fc.denominator).collect();
            for (c1, c2) in &fc.positions {
                let delta = encoder.second.accumulate(c2, &upstream, g2, scale)?;
                let dh = encoder.second.input_gradient(&delta)?;
                encoder.first.accumulate(c1, &dh, g1, scale)?;
            }
        }
        Ok(())
    }

    pub fn zero_grads(&self) -> FusionGrads {
        FusionGrads {
            text: match &self.text {
                TextEncoder::Trainable {
                    embeddings,
                    hidden,
                    output,
                } => Some((
                    Matrix::zeros(embeddings.rows(), embeddings.cols()),
                    LayerGradients::zeros_like(hidden),
                    LayerGradients::zeros_like(output),
                )),
                TextEncoder::Precomputed { .. } => None,
            },
            metadata: self
                .metadata
                .iter()
                .map(|m| {
                    (
                        LayerGradients::zeros_like(&m.first),
                        LayerGradients::zeros_like(&m.second),
                    )
                })
                .collect(),
            w_z: Matrix::zeros(self.w_z.rows(), self.w_z.cols()),
            w_t: Matrix::zeros(self.w_t.rows(), self.w_t.cols()),
            w_meta: self
                .w_meta
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
        }
    }

    fn block_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        if let TextEncoder::Trainable { .. } = self.text {
            for n in [
                "embeddings",
                "hidden.weight",
                "hidden.bias",
                "output.weight",
                "output.bias",
            ] {
                names.push(format!("text.{n}"));
            }
        }
        for f in &self.schema.fields {
            for n in ["first.weight", "first.bias", "second.weight", "second.bias"] {
                names.push(format!("metadata.{}.{n}", f.name));
            }
        }
        names.push("w_z".into());
        names.push("w_t".into());
        for f in &self.schema.fields {
            names.push(format!("w_meta.{}", f.name));
        }
        names
    }

    /// Trainable blocks in a fixed order shared with [`FusionGrads::blocks`].
    pub fn parameters(&self) -> Vec<(String, &[f64])> {
        let mut blocks: Vec<&[f64]> = Vec::new();
        if let TextEncoder::Trainable {
            embeddings,
            hidden,
            output,
        } = &self.text
        {
            blocks.extend([
                embeddings.as_slice(),
                hidden.weight.as_slice(),
                &hidden.bias,
                output.weight.as_slice(),
                &output.bias,
            ]);
        }
        for m in &self.metadata {
            blocks.extend([
                m.first.weight.as_slice(),
                &m.first.bias,
                m.second.weight.as_slice(),
                &m.second.bias,
            ]);
        }
        blocks.push(self.w_z.as_slice());
        blocks.push(self.w_t.as_slice());
        blocks.extend(self.w_meta.iter().map(Matrix::as_slice));
        self.block_names().into_iter().zip(blocks).collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<ParamRef<'_>> {
        let names = self.block_names();
        let mut blocks: Vec<&mut [f64]> = Vec::new();
        if let TextEncoder::Trainable {
            embeddings,
            hidden,
            output,
        } = &mut self.text
        {
            blocks.push(embeddings.as_mut_slice());
            blocks.push(hidden.weight.as_mut_slice());
            blocks.push(&mut hidden.bias);
            blocks.push(output.weight.as_mut_slice());
            blocks.push(&mut output.bias);
        }
        for m in &mut self.metadata {
            blocks.push(m.first.weight.as_mut_slice());
            blocks.push(&mut m.first.bias);
            blocks.push(m.second.weight.as_mut_slice());
            blocks.push(&mut m.second.bias);
        }
        blocks.push(self.w_z.as_mut_slice());
        blocks.push(self.w_t.as_mut_slice());
        blocks.extend(self.w_meta.iter_mut().map(Matrix::as_mut_slice));
        names
            .into_iter()
            .zip(blocks)
            .map(|(name, values)| ParamRef { name, values })
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.parameters()
            .iter()
            .all(|(_, b)| b.iter().all(|x| x.is_finite()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Layout: magic, `u32` version, `u64` header length, JSON header, then
    /// each block's `f64` values little-endian in header order.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut blocks: Vec<(String, usize, usize, &[f64])> = Vec::new();
        let mut precomputed_ids = Vec::new();
        let mut precomputed_data = Vec::new();
        let text_mode = match &self.text {
            TextEncoder::Trainable {
                embeddings,
                hidden,
                output,
            } => {
                blocks.push((
                    "text.embeddings".into(),
                    embeddings.rows(),
                    embeddings.cols(),
                    embeddings.as_slice(),
                ));
                push_layer(&mut blocks, "text.hidden", hidden);
                push_layer(&mut blocks, "text.output", output);
                TextMode::Trainable
            }
            TextEncoder::Precomputed { dim, table } => {
                for (id, v) in table {
                    precomputed_ids.push(id.clone());
                    precomputed_data.extend_from_slice(v);
                }
                TextMode::Precomputed { dim: *dim }
            }
        };
        if !precomputed_ids.is_empty() {
            let dim = self.text_dim();
            blocks.push((
                "text.precomputed".into(),
                precomputed_ids.len(),
                dim,
                &precomputed_data,
            ));
        }
        for (m, f) in self.metadata.iter().zip(&self.schema.fields) {
            if let MetadataInput::WordVectors(t) = &m.input {
                blocks.push((
                    format!("metadata.{}.inputs", f.name),
                    t.rows(),
                    t.cols(),
                    t.as_slice(),
                ));
            }
            push_layer(&mut blocks, &format!("metadata.{}.first", f.name), &m.first);
            push_layer(
                &mut blocks,
                &format!("metadata.{}.second", f.name),
                &m.second,
            );
        }
        blocks.push((
            "w_z".into(),
            self.w_z.rows(),
            self.w_z.cols(),
            self.w_z.as_slice(),
        ));
        blocks.push((
            "w_t".into(),
            self.w_t.rows(),
            self.w_t.cols(),
            self.w_t.as_slice(),
        ));
        for (w, f) in self.w_meta.iter().zip(&self.schema.fields) {
            blocks.push((
                format!("w_meta.{}", f.name),
                w.rows(),
                w.cols(),
                w.as_slice(),
            ));
        }

        let header = ModelHeader {
            text_mode,
            embed_dim: self.embed_dim(),
            topics: self.num_topics(),
            dropout: self.dropout,
            pooling: self.pooling,
            schema: self.schema.clone(),
            vocabulary: self.vocabulary.clone(),
            precomputed_ids,
            blocks: blocks
                .iter()
                .map(|(name, rows, cols, _)| BlockHeader {
                    name: name.clone(),
                    rows: *rows,
                    cols: *cols,
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(header.len() + 64);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, _, _, data) in blocks {
            for x in data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |m: &str| Error::ModelFormat(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(fail("not a topicfuse model file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::ModelFormat(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = &bytes[20..];
        if body.len() < header_len {
            return Err(fail("truncated header"));
        }
        let mut header: ModelHeader = serde_json::from_slice(&body[..header_len])?;
        header.vocabulary.rebuild_index();
        header.schema.validate()?;

        let mut data = &body[header_len..];
        let mut blocks: HashMap<String, Matrix> = HashMap::new();
        for b in &header.blocks {
            let n = b.rows * b.cols;
            if data.len() < n * 8 {
                return Err(fail("truncated parameter data"));
            }
            let values = data[..n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            data = &data[n * 8..];
            blocks.insert(b.name.clone(), Matrix::from_vec(b.rows, b.cols, values)?);
        }
        if !data.is_empty() {
            return Err(fail("trailing bytes after parameter data"));
        }
        let mut take = |name: &str, rows: Option<usize>, cols: Option<usize>| -> Result<Matrix> {
            let m = blocks
                .remove(name)
                .ok_or_else(|| Error::ModelFormat(format!("missing block `{name}`")))?;
            if rows.is_some_and(|r| r != m.rows()) || cols.is_some_and(|c| c != m.cols()) {
                return Err(Error::ModelFormat(format!(
                    "dimension mismatch in `{name}`: stored {}x{}, expected {}x{}",
                    m.rows(),
                    m.cols(),
                    rows.map_or("?".into(), |r| r.to_string()),
                    cols.map_or("?".into(), |c| c.to_string()),
                )));
            }
            Ok(m)
        };

        let text = match header.text_mode {
            TextMode::Trainable => {
                let embeddings = take("text.embeddings", Some(header.vocabulary.len()), None)?;
                let hidden = take_layer(
                    &mut take,
                    "text.hidden",
                    embeddings.cols(),
                    None,
                    Activation::Tanh,
                )?;
                let out_dim = hidden.output_dim();
                let output = take_layer(
                    &mut take,
                    "text.output",
                    out_dim,
                    Some(out_dim),
                    Activation::Identity,
                )?;
                TextEncoder::Trainable {
                    embeddings,
                    hidden,
                    output,
                }
            }
            TextMode::Precomputed { dim } => {
                let mut table = BTreeMap::new();
                if !header.precomputed_ids.is_empty() {
                    let m = take(
                        "text.precomputed",
                        Some(header.precomputed_ids.len()),
                        Some(dim),
                    )?;
                    for (i, id) in header.precomputed_ids.iter().enumerate() {
                        table.insert(id.clone(), m.row(i).to_vec());
                    }
                }
                TextEncoder::Precomputed { dim, table }
            }
        };
        let mut metadata = Vec::new();
        for f in &header.schema.fields {
            let input = match f.encoding {
                FieldEncoding::OneHot => MetadataInput::OneHot,
                FieldEncoding::WordVectors => MetadataInput::WordVectors(take(
                    &format!("metadata.{}.inputs", f.name),
                    Some(f.value_count()),
                    None,
                )?),
            };
            let in_dim = match &input {
                MetadataInput::OneHot => f.value_count(),
                MetadataInput::WordVectors(t) => t.cols(),
            };
            let first = take_layer(
                &mut take,
                &format!("metadata.{}.first", f.name),
                in_dim,
                Some(f.embed_dim),
                Activation::Tanh,
            )?;
            let second = take_layer(
                &mut take,
                &format!("metadata.{}.second", f.name),
                f.embed_dim,
                Some(f.embed_dim),
                Activation::Tanh,
            )?;
            metadata.push(MetadataEncoder {
                input,
                first,
                second,
            });
        }
        let concat = text.output_dim()
            + header
                .schema
                .fields
                .iter()
                .map(|f| f.embed_dim)
                .sum::<usize>();
        let w_z = take("w_z", Some(concat), Some(header.embed_dim))?;
        let w_t = take("w_t", Some(header.embed_dim), Some(header.topics))?;
        let w_meta = header
            .schema
            .fields
            .iter()
            .map(|f| {
                take(
                    &format!("w_meta.{}", f.name),
                    Some(header.embed_dim),
                    Some(f.value_count()),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(extra) = blocks.keys().next() {
            return Err(Error::ModelFormat(format!("unexpected block `{extra}`")));
        }
        let model = FusionModel {
            text,
            metadata,
            w_z,
            w_t,
            w_meta,
            dropout: header.dropout,
            pooling: header.pooling,
            schema: header.schema,
            vocabulary: header.vocabulary,
        };
        if !model.is_finite() {
            return Err(fail("non-finite parameters"));
        }
        Ok(model)
    }
}

impl FusionGrads {
    /// Gradient blocks in the order of [`FusionModel::parameters`].
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        if let Some((emb, hidden, output)) = &self.text {
            out.extend([
                emb.as_slice(),
                hidden.weight.as_slice(),
                &hidden.bias,
                output.weight.as_slice(),
                &output.bias,
            ]);
        }
        for (g1, g2) in &self.metadata {
            out.extend([
                g1.weight.as_slice(),
                &g1.bias,
                g2.weight.as_slice(),
                &g2.bias,
            ]);
        }
        out.push(self.w_z.as_slice());
        out.push(self.w_t.as_slice());
        out.extend(self.w_meta.iter().map(Matrix::as_slice));
        out
    }
}

fn push_layer<'a>(
    blocks: &mut Vec<(String, usize, usize, &'a [f64])>,
    prefix: &str,
    layer: &'a DenseLayer,
) {
    blocks.push((
        format!("{prefix}.weight"),
        layer.weight.rows(),
        layer.weight.cols(),
        layer.weight.as_slice(),
    ));
    blocks.push((format!("{prefix}.bias"), layer.bias.len(), 1, &layer.bias));
}

fn take_layer<F>(
    take: &mut F,
    prefix: &str,
    in_dim: usize,
    out_dim: Option<usize>,
    activation: Activation,
) -> Result<DenseLayer>
where
    F: FnMut(&str, Option<usize>, Option<usize>) -> Result<Matrix>,
{
    let weight = take(&format!("{prefix}.weight"), out_dim, Some(in_dim))?;
    let bias = take(&format!("{prefix}.bias"), Some(weight.rows()), Some(1))?;
    DenseLayer::new(weight, bias.into_vec(), activation)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum TextMode {
    Trainable,
    Precomputed { dim: usize },
}

#[derive(Debug, Serialize, Deserialize)]
struct BlockHeader {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelHeader {
    text_mode: TextMode,
    embed_dim: usize,
    topics: usize,
    dropout: f64,
    pooling: Pooling,
    schema: MetadataSchema,
    vocabulary: Vocabulary,
    precomputed_ids: Vec<String>,
    blocks: Vec<BlockHeader>,
}

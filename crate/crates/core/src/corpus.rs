//! Corpus ingestion: JSON-Lines documents, schema-driven metadata padding,
//! vocabularies, reconstruction targets and exemplar splits.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::seeds::rng_from_seed;
use crate::{Error, Result};

/// Reserved index for unknown tokens and metadata values.
pub const UNK: u32 = 0;
/// Reserved index for padded metadata positions.
pub const PAD: u32 = 1;
pub const UNK_TOKEN: &str = "<unk>";
pub const PAD_TOKEN: &str = "<pad>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldEncoding {
    OneHot,
    WordVectors,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub encoding: FieldEncoding,
    pub max_len: usize,
    pub embed_dim: usize,
    /// Ordered value set; indices 0 and 1 are `<unk>` and `<pad>`. Left empty
    /// in a schema file to have it built from the corpus.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub values: Vec<String>,
}

impl FieldSpec {
    pub fn value_count(&self) -> usize {
        self.values.len()
    }

    pub fn value_index(&self, value: &str) -> u32 {
        self.values
            .iter()
            .position(|v| v == value)
            .map_or(UNK, |i| i as u32)
    }
}

fn default_min_count() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetadataSchema {
    pub fields: Vec<FieldSpec>,
    pub max_tokens: usize,
    #[serde(default = "default_min_count")]
    pub min_count: usize,
}

impl MetadataSchema {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let schema: MetadataSchema = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_tokens == 0 {
            return Err(Error::Schema("max_tokens must be positive".into()));
        }
        let mut seen = HashSet::new();
        for f in &self.fields {
            if !seen.insert(f.name.as_str()) {
                return Err(Error::Schema(format!("duplicate field `{}`", f.name)));
            }
            if f.max_len == 0 || f.embed_dim == 0 {
                return Err(Error::Schema(format!(
                    "field `{}` needs max_len >= 1 and embed_dim >= 1",
                    f.name
                )));
            }
            if !f.values.is_empty()
                && (f.values.len() < 2 || f.values[0] != UNK_TOKEN || f.values[1] != PAD_TOKEN)
            {
                return Err(Error::Schema(format!(
                    "field `{}`: declared values must start with {UNK_TOKEN}, {PAD_TOKEN}",
                    f.name
                )));
            }
        }
        Ok(())
    }

    pub fn field_index(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|f| f.name == name)
    }

    pub fn is_finalized(&self) -> bool {
        self.fields.iter().all(|f| f.values.len() >= 2)
    }

    /// Fills every undeclared value set from the raw documents, in order of
    /// first appearance.
    fn finalize(&mut self, raw: &[RawDocument]) {
        for field in &mut self.fields {
            if !field.values.is_empty() {
                continue;
            }
            field.values = vec![UNK_TOKEN.to_string(), PAD_TOKEN.to_string()];
            let mut seen: HashSet<String> = field.values.iter().cloned().collect();
            for doc in raw {
                if let Some(values) = doc.metadata.get(&field.name) {
                    for v in values.iter().map(|v| normalize_value(v)) {
                        if seen.insert(v.clone()) {
                            field.values.push(v);
                        }
                    }
                }
            }
        }
    }
}

/// Token vocabulary with counts; ids 0 and 1 are reserved.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vocabulary {
    fn reserved() -> Self {
        let mut v = Self {
            tokens: vec![UNK_TOKEN.into(), PAD_TOKEN.into()],
            counts: vec![0, 0],
            index: HashMap::new(),
        };
        v.reindex();
        v
    }

    /// Builds from token streams; tokens seen fewer than `min_count` times
    /// are left out and later map to `<unk>`.
    pub fn build<'a, I>(docs: I, min_count: usize) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut order: Vec<&str> = Vec::new();
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for doc in docs {
            for tok in doc {
                let c = counts.entry(tok.as_str()).or_insert_with(|| {
                    order.push(tok.as_str());
                    0
                });
                *c += 1;
            }
        }
        let mut vocab = Self::reserved();
        for tok in order {
            let c = counts[tok];
            if c as usize >= min_count.max(1) {
                vocab.tokens.push(tok.to_string());
                vocab.counts.push(c);
            } else {
                vocab.counts[UNK as usize] += c;
            }
        }
        vocab.reindex();
        vocab
    }

    pub fn from_tokens(tokens: Vec<String>, counts: Vec<u64>) -> Result<Self> {
        if tokens.len() != counts.len()
            || tokens.len() < 2
            || tokens[0] != UNK_TOKEN
            || tokens[1] != PAD_TOKEN
        {
            return Err(Error::InvalidArgument("malformed vocabulary".into()));
        }
        let mut v = Self {
            tokens,
            counts,
            index: HashMap::new(),
        };
        v.reindex();
        Ok(v)
    }

    fn reindex(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
    }

    /// Restores the lookup table after deserialisation.
    pub fn rebuild_index(&mut self) {
        self.reindex();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn count(&self, id: u32) -> u64 {
        self.counts.get(id as usize).copied().unwrap_or(0)
    }
}

/// A padded metadata sequence: `values.len() == mask.len() == max_len`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetadataSequence {
    pub values: Vec<u32>,
    pub mask: Vec<bool>,
}

impl MetadataSequence {
    pub fn from_values(values: &[u32], max_len: usize) -> Self {
        let used = values.len().min(max_len);
        let mut seq = Self {
            values: vec![PAD; max_len],
            mask: vec![false; max_len],
        };
        seq.values[..used].copy_from_slice(&values[..used]);
        seq.mask[..used].iter_mut().for_each(|m| *m = true);
        seq
    }

    pub fn unmasked(&self) -> impl Iterator<Item = u32> + '_ {
        self.values
            .iter()
            .zip(&self.mask)
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v)
    }

    pub fn active_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub tokens: Vec<u32>,
    /// One sequence per schema field, in schema order.
    pub metadata: Vec<MetadataSequence>,
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub vocabulary: Vocabulary,
    pub schema: MetadataSchema,
}

/// Per-field multi-hot vectors over the field's value set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionTarget {
    pub fields: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
struct RawDocument {
    id: String,
    #[serde(default)]
    text: String,
    #[serde(default)]
    metadata: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    label: Option<String>,
}

/// Lowercases, splits on whitespace and trims non-alphanumeric characters
/// from both ends of each piece (so `#healthyliving` becomes one token).
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|piece| {
            piece
                .trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

fn normalize_value(v: &str) -> String {
    v.trim().to_string()
}

fn read_raw(path: &Path) -> Result<Vec<RawDocument>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: RawDocument = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if !ids.insert(doc.id.clone()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("duplicate document id `{}`", doc.id),
            });
        }
        docs.push(doc);
    }
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(docs)
}

/// Loads a JSON-Lines corpus, building the vocabulary and any undeclared
/// metadata value sets from it.
pub fn load_corpus(
    path: impl AsRef<Path>,
    schema: &MetadataSchema,
    max_tokens: usize,
) -> Result<Corpus> {
    let raw = read_raw(path.as_ref())?;
    let mut schema = schema.clone();
    schema.max_tokens = max_tokens;
    schema.validate()?;
    check_fields(&raw, &schema)?;
    schema.finalize(&raw);
    let token_streams: Vec<Vec<String>> = raw
        .iter()
        .map(|d| truncate(tokenize(&d.text), max_tokens))
        .collect();
    let vocabulary = Vocabulary::build(token_streams.iter().map(Vec::as_slice), schema.min_count);
    let documents = raw
        .iter()
        .zip(&token_streams)
        .map(|(d, toks)| make_document(d, toks, &vocabulary, &schema))
        .collect();
    Ok(Corpus {
        documents,
        vocabulary,
        schema,
    })
}

/// Loads documents against an existing vocabulary and finalized schema, as
/// needed for documents unseen at training time.
pub fn load_corpus_with(
    path: impl AsRef<Path>,
    schema: &MetadataSchema,
    vocabulary: &Vocabulary,
) -> Result<Corpus> {
    if !schema.is_finalized() {
        return Err(Error::Schema("schema value sets are not finalized".into()));
    }
    let raw = read_raw(path.as_ref())?;
    check_fields(&raw, schema)?;
    let documents = raw
        .iter()
        .map(|d| {
            let toks = truncate(tokenize(&d.text), schema.max_tokens);
            make_document(d, &toks, vocabulary, schema)
        })
        .collect();
    Ok(Corpus {
        documents,
        vocabulary: vocabulary.clone(),
        schema: schema.clone(),
    })
}

/// Parses one corpus line against a finalized schema and frozen vocabulary.
pub fn parse_document(
    line: &str,
    schema: &MetadataSchema,
    vocabulary: &Vocabulary,
) -> Result<Document> {
    if !schema.is_finalized() {
        return Err(Error::Schema("schema value sets are not finalized".into()));
    }
    let raw: RawDocument = serde_json::from_str(line)?;
    let raw = [raw];
    check_fields(&raw, schema)?;
    let toks = truncate(tokenize(&raw[0].text), schema.max_tokens);
    Ok(make_document(&raw[0], &toks, vocabulary, schema))
}

fn truncate(mut v: Vec<String>, n: usize) -> Vec<String> {
    v.truncate(n);
    v
}

fn check_fields(raw: &[RawDocument], schema: &MetadataSchema) -> Result<()> {
    for doc in raw {
        for name in doc.metadata.keys() {
            if schema.field_index(name).is_none() {
                return Err(Error::UnknownField(name.clone()));
            }
        }
    }
    Ok(())
}

fn make_document(
    raw: &RawDocument,
    tokens: &[String],
    vocab: &Vocabulary,
    schema: &MetadataSchema,
) -> Document {
    let metadata = schema
        .fields
        .iter()
        .map(|field| {
            let ids: Vec<u32> = raw
                .metadata
                .get(&field.name)
                .map(|vals| {
                    vals.iter()
                        .map(|v| field.value_index(&normalize_value(v)))
                        .collect()
                })
                .unwrap_or_default();
            MetadataSequence::from_values(&ids, field.max_len)
        })
        .collect();
    Document {
        id: raw.id.clone(),
        tokens: tokens.iter().map(|t| vocab.id(t)).collect(),
        metadata,
        label: raw.label.clone(),
    }
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.id == id)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut corpus: Corpus = serde_json::from_str(text)?;
        corpus.vocabulary.rebuild_index();
        Ok(corpus)
    }

    /// Checks that every token id and metadata index is in range.
    pub fn validate(&self) -> Result<()> {
        let v = self.vocabulary.len();
        for doc in &self.documents {
            if let Some(&bad) = doc.tokens.iter().find(|&&t| t as usize >= v) {
                return Err(Error::TokenOutOfRange {
                    id: bad as usize,
                    vocab: v,
                });
            }
            if doc.metadata.len() != self.schema.fields.len() {
                return Err(Error::Shape(format!(
                    "document `{}` metadata arity",
                    doc.id
                )));
            }
            for (seq, field) in doc.metadata.iter().zip(&self.schema.fields) {
                if seq.values.len() != field.max_len || seq.mask.len() != field.max_len {
                    return Err(Error::Shape(format!(
                        "document `{}` field `{}` length",
                        doc.id, field.name
                    )));
                }
                for (&val, &m) in seq.values.iter().zip(&seq.mask) {
                    if (m && val as usize >= field.value_count()) || (!m && val != PAD) {
                        return Err(Error::Shape(format!(
                            "document `{}` field `{}` value {val}",
                            doc.id, field.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Keeps only the documents whose id is in `ids`, preserving order.
    pub fn subset(&self, ids: &HashSet<&str>) -> Corpus {
        Corpus {
            documents: self
                .documents
                .iter()
                .filter(|d| ids.contains(d.id.as_str()))
                .cloned()
                .collect(),
            vocabulary: self.vocabulary.clone(),
            schema: self.schema.clone(),
        }
    }
}

pub fn build_targets(doc: &Document, schema: &MetadataSchema) -> ReconstructionTarget {
    let fields = schema
        .fields
        .iter()
        .zip(&doc.metadata)
        .map(|(field, seq)| {
            let mut y = vec![0.0; field.value_count()];
            for v in seq.unmasked() {
                if let Some(slot) = y.get_mut(v as usize) {
                    *slot = 1.0;
                }
            }
            y
        })
        .collect();
    ReconstructionTarget { fields }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExemplarSplit {
    pub exemplars: Vec<String>,
    pub evaluation: Vec<String>,
}

/// Stratified exemplar selection.
///
/// The exemplar budget `max(1, round(fraction · n))` is shared across labels
/// by largest-remainder rounding; any label with at least two documents then
/// gets at least one exemplar. Both lists keep the input document order.
pub fn split_exemplars(docs: &[Document], fraction: f64, seed: u64) -> Result<ExemplarSplit> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "exemplar fraction {fraction} outside (0, 1)"
        )));
    }
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut by_label: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, d) in docs.iter().enumerate() {
        let label = d
            .label
            .as_deref()
            .ok_or_else(|| Error::Unlabeled(d.id.clone()))?;
        by_label.entry(label).or_default().push(i);
    }

    let n = docs.len();
    let budget = ((fraction * n as f64).round() as usize).max(1);
    let allocation =
        largest_remainder(&by_label.values().map(Vec::len).collect::<Vec<_>>(), budget);

    let mut rng = rng_from_seed(seed);
    let mut chosen = vec![false; n];
    for (members, &take) in by_label.values().zip(&allocation) {
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut rng);
        let take = if members.len() >= 2 {
            take.max(1)
        } else {
            take
        };
        for &i in shuffled.iter().take(take.min(members.len())) {
            chosen[i] = true;
        }
    }
    let (mut exemplars, mut evaluation) = (Vec::new(), Vec::new());
    for (d, c) in docs.iter().zip(chosen) {
        if c {
            exemplars.push(d.id.clone());
        } else {
            evaluation.push(d.id.clone());
        }
    }
    Ok(ExemplarSplit {
        exemplars,
        evaluation,
    })
}

/// Splits `total` across groups proportionally to `sizes`, rounding by
/// largest fractional remainder (ties to the earlier group).
pub fn largest_remainder(sizes: &[usize], total: usize) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    if n == 0 {
        return vec![0; sizes.len()];
    }
    let quotas: Vec<f64> = sizes
        .iter()
        .map(|&s| total as f64 * s as f64 / n as f64)
        .collect();
    let mut alloc: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut left = total.saturating_sub(alloc.iter().sum());
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for i in order {
        if left == 0 {
            break;
        }
        alloc[i] += 1;
        left -= 1;
    }
    alloc
}

/// Dense word vectors keyed by word, as used for `word_vectors` fields.
#[derive(Debug, Clone, PartialEq)]
pub struct WordVectors {
    pub dim: usize,
    pub vectors: HashMap<String, Vec<f64>>,
}

impl WordVectors {
    /// Reads `D` on the first line followed by `word v1 .. vD` lines.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let (dim, rows) = parse_keyed_vectors(path, &text)?;
        Ok(Self {
            dim,
            vectors: rows.into_iter().collect(),
        })
    }

    /// Mean vector of the words in `phrase`; unknown words count as zero.
    pub fn phrase_vector(&self, phrase: &str) -> Vec<f64> {
        let words = tokenize(phrase);
        let mut out = vec![0.0; self.dim];
        if words.is_empty() {
            return out;
        }
        for w in &words {
            if let Some(v) = self.vectors.get(w) {
                for (o, x) in out.iter_mut().zip(v) {
                    *o += x;
                }
            }
        }
        let n = words.len() as f64;
        out.iter_mut().for_each(|x| *x /= n);
        out
    }
}

/// Dimension plus `(key, vector)` rows in file order.
pub type KeyedVectors = (usize, Vec<(String, Vec<f64>)>);

/// Parses a header line holding the dimension followed by `key v1 .. vD`
/// rows. Shared by the word-vector and precomputed-embedding formats.
pub fn parse_keyed_vectors(path: &Path, text: &str) -> Result<KeyedVectors> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        message: "missing dimension header".into(),
    })?;
    let dim: usize = header.trim().parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        message: format!("bad dimension header `{}`", header.trim()),
    })?;
    let mut rows = Vec::new();
    for (i, line) in lines {
        let mut parts = line.split_whitespace();
        let key = parts.next().unwrap_or_default().to_string();
        let values: std::result::Result<Vec<f64>, _> = parts.map(str::parse).collect();
        let values = values.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: format!("bad number: {e}"),
        })?;
        if values.len() != dim {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("expected {dim} values, found {}", values.len()),
            });
        }
        rows.push((key, values));
    }
    Ok((dim, rows))
}

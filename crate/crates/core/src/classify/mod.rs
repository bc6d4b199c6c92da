//! Exemplar KNN classification and the analyses run over embeddings:
//! metrics, confusion matrix, PCA projection and k-means over-clustering.

mod kmeans;
mod metrics;
mod pca;

pub use kmeans::{centroid_distances, kmeans, KMeansResult};
pub use metrics::{confusion_matrix, evaluate, ClassMetrics, ConfusionMatrix, Metrics};
pub use pca::{pca_project, PcaProjection};

use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::nnkit::Matrix;
use crate::{Error, Result};

/// Document embeddings as rows, with optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub ids: Vec<String>,
    pub matrix: Matrix,
    pub labels: Vec<Option<String>>,
}

impl EmbeddingSet {
    pub fn new(ids: Vec<String>, matrix: Matrix, labels: Vec<Option<String>>) -> Result<Self> {
        if ids.len() != matrix.rows() || labels.len() != ids.len() {
            return Err(Error::Shape(format!(
                "{} ids, {} rows, {} labels",
                ids.len(),
                matrix.rows(),
                labels.len()
            )));
        }
        if !matrix.is_finite() {
            return Err(Error::InvalidArgument(
                "embeddings contain non-finite values".into(),
            ));
        }
        Ok(Self {
            ids,
            matrix,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.matrix.row(i)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    /// Rows whose id is in `ids`, in the order given.
    pub fn select(&self, ids: &[String]) -> Result<EmbeddingSet> {
        let index: BTreeMap<&str, usize> = self
            .ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let mut data = Vec::with_capacity(ids.len() * self.dim());
        let mut labels = Vec::with_capacity(ids.len());
        for id in ids {
            let &i = index
                .get(id.as_str())
                .ok_or_else(|| Error::InvalidArgument(format!("unknown document `{id}`")))?;
            data.extend_from_slice(self.row(i));
            labels.push(self.labels[i].clone());
        }
        EmbeddingSet::new(
            ids.to_vec(),
            Matrix::from_vec(ids.len(), self.dim(), data)?,
            labels,
        )
    }

    /// `doc_id,label,e0,e1,...`
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["doc_id".to_string(), "label".to_string()];
        header.extend((0..self.dim()).map(|j| format!("e{j}")));
        w.write_record(&header).map_err(csv_err)?;
        for (i, id) in self.ids.iter().enumerate() {
            let mut rec = vec![id.clone(), self.labels[i].clone().unwrap_or_default()];
            rec.extend(self.row(i).iter().map(f64::to_string));
            w.write_record(&rec).map_err(csv_err)?;
        }
        finish_csv(w)
    }

    pub fn from_csv(text: &str) -> Result<EmbeddingSet> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let dim = r.headers().map_err(csv_err)?.len().saturating_sub(2);
        let (mut ids, mut labels, mut data) = (Vec::new(), Vec::new(), Vec::new());
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            ids.push(rec[0].to_string());
            labels.push(Some(rec[1].to_string()).filter(|l| !l.is_empty()));
            for v in rec.iter().skip(2) {
                data.push(
                    v.parse::<f64>()
                        .map_err(|e| Error::InvalidArgument(e.to_string()))?,
                );
            }
        }
        let n = ids.len();
        EmbeddingSet::new(ids, Matrix::from_vec(n, dim, data)?, labels)
    }
}

/// A KNN decision together with the neighbourhood that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub doc_id: String,
    pub label: String,
    pub neighbors: Vec<String>,
    /// Ascending.
    pub distances: Vec<f64>,
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Exact Euclidean k-nearest-neighbour vote over labelled exemplars.
///
/// Distance ties at the cut-off go to the lexicographically smaller id. The
/// label is the mode of the neighbour labels; tied modes go to the label
/// with the smaller summed distance, then to the lexicographically smaller
/// label. An exemplar whose id equals `query_id` is never its own neighbour.
pub fn knn_classify(
    query_id: &str,
    query: &[f64],
    exemplars: &EmbeddingSet,
    k: usize,
) -> Result<Prediction> {
    if k < 1 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if query.len() != exemplars.dim() {
        return Err(Error::Shape(format!(
            "query has dimension {}, exemplars {}",
            query.len(),
            exemplars.dim()
        )));
    }
    let mut candidates: Vec<(f64, usize)> = Vec::with_capacity(exemplars.len());
    for (i, id) in exemplars.ids.iter().enumerate() {
        if id == query_id {
            continue;
        }
        if exemplars.labels[i].is_none() {
            return Err(Error::Unlabeled(id.clone()));
        }
        candidates.push((euclidean(query, exemplars.row(i)), i));
    }
    if candidates.is_empty() {
        return Err(Error::InvalidArgument(
            "no exemplars to compare against".into(),
        ));
    }
    let by_distance_then_id = |a: &(f64, usize), b: &(f64, usize)| -> Ordering {
        a.0.total_cmp(&b.0)
            .then_with(|| exemplars.ids[a.1].cmp(&exemplars.ids[b.1]))
    };
    let take = k.min(candidates.len());
    if take < candidates.len() {
        candidates.select_nth_unstable_by(take - 1, by_distance_then_id);
        candidates.truncate(take);
    }
    candidates.sort_by(by_distance_then_id);

    let mut votes: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for &(d, i) in &candidates {
        let label = exemplars.labels[i].as_deref().unwrap_or_default();
        let e = votes.entry(label).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += d;
    }
    // BTreeMap iterates labels in ascending order, so `min_by` keeps the
    // smallest label among exact ties.
    let label = votes
        .iter()
        .min_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.total_cmp(&b.1 .1)))
        .map(|(l, _)| l.to_string())
        .unwrap_or_default();

    Ok(Prediction {
        doc_id: query_id.to_string(),
        label,
        neighbors: candidates
            .iter()
            .map(|&(_, i)| exemplars.ids[i].clone())
            .collect(),
        distances: candidates.iter().map(|&(d, _)| d).collect(),
    })
}

/// `doc_id,predicted,gold,neighbor_ids,neighbor_distances`; neighbour lists
/// are `;`-separated.
pub fn predictions_csv(
    predictions: &[Prediction],
    gold: &BTreeMap<String, String>,
) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "doc_id",
        "predicted",
        "gold",
        "neighbor_ids",
        "neighbor_distances",
    ])
    .map_err(csv_err)?;
    for p in predictions {
        let distances: Vec<String> = p.distances.iter().map(f64::to_string).collect();
        w.write_record([
            p.doc_id.as_str(),
            p.label.as_str(),
            gold.get(&p.doc_id).map_or("", String::as_str),
            p.neighbors.join(";").as_str(),
            distances.join(";").as_str(),
        ])
        .map_err(csv_err)?;
    }
    finish_csv(w)
}

/// Reads [`predictions_csv`] output back, returning predictions and the
/// gold labels of rows that have one.
pub fn parse_predictions(text: &str) -> Result<(Vec<Prediction>, BTreeMap<String, String>)> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let (mut predictions, mut gold) = (Vec::new(), BTreeMap::new());
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != 5 {
            return Err(Error::InvalidArgument(format!(
                "prediction row has {} columns, expected 5",
                rec.len()
            )));
        }
        let split = |s: &str| -> Vec<String> {
            if s.is_empty() {
                Vec::new()
            } else {
                s.split(';').map(String::from).collect()
            }
        };
        let distances = split(&rec[4])
            .iter()
            .map(|d| {
                d.parse::<f64>()
                    .map_err(|e| Error::InvalidArgument(format!("distance: {e}")))
            })
            .collect::<Result<_>>()?;
        if !rec[2].is_empty() {
            gold.insert(rec[0].to_string(), rec[2].to_string());
        }
        predictions.push(Prediction {
            doc_id: rec[0].to_string(),
            label: rec[1].to_string(),
            neighbors: split(&rec[3]),
            distances,
        });
    }
    Ok((predictions, gold))
}

pub fn csv_err(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("csv: {e}"))
}

pub fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidArgument(e.to_string()))
}

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::{csv_err, finish_csv, Prediction};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub per_class: Vec<ClassMetrics>,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub accuracy: f64,
    pub count: usize,
}

fn pairs<'a>(
    predictions: &'a [Prediction],
    gold: &'a BTreeMap<String, String>,
) -> Result<Vec<(&'a str, &'a str)>> {
    if predictions.len() != gold.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} gold labels",
            predictions.len(),
            gold.len()
        )));
    }
    predictions
        .iter()
        .map(|p| {
            gold.get(&p.doc_id)
                .map(|g| (g.as_str(), p.label.as_str()))
                .ok_or_else(|| Error::InvalidArgument(format!("no gold label for `{}`", p.doc_id)))
        })
        .collect()
}

/// Per-class precision/recall/F1 over the union of gold and predicted
/// labels, with macro- and micro-averaged F1. Zero denominators give 0.
pub fn evaluate(predictions: &[Prediction], gold: &BTreeMap<String, String>) -> Result<Metrics> {
    let pairs = pairs(predictions, gold)?;
    let labels: BTreeSet<&str> = pairs.iter().flat_map(|&(g, p)| [g, p]).collect();
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let f1 = |p: f64, r: f64| {
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    };

    let (mut tp_all, mut fp_all, mut fn_all) = (0, 0, 0);
    let per_class: Vec<ClassMetrics> = labels
        .iter()
        .map(|&label| {
            let tp = pairs
                .iter()
                .filter(|&&(g, p)| g == label && p == label)
                .count();
            let fp = pairs
                .iter()
                .filter(|&&(g, p)| g != label && p == label)
                .count();
            let fn_ = pairs
                .iter()
                .filter(|&&(g, p)| g == label && p != label)
                .count();
            tp_all += tp;
            fp_all += fp;
            fn_all += fn_;
            let precision = ratio(tp, tp + fp);
            let recall = ratio(tp, tp + fn_);
            ClassMetrics {
                label: label.to_string(),
                precision,
                recall,
                f1: f1(precision, recall),
                support: tp + fn_,
            }
        })
        .collect();
    let macro_f1 = if per_class.is_empty() {
        0.0
    } else {
        per_class.iter().map(|c| c.f1).sum::<f64>() / per_class.len() as f64
    };
    let micro_f1 = f1(
        ratio(tp_all, tp_all + fp_all),
        ratio(tp_all, tp_all + fn_all),
    );
    let correct = pairs.iter().filter(|(g, p)| g == p).count();
    Ok(Metrics {
        per_class,
        macro_f1,
        micro_f1,
        accuracy: ratio(correct, pairs.len()),
        count: pairs.len(),
    })
}

/// Rows are gold labels, columns predicted labels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    /// Header row `gold\predicted,<labels...>`, then one row per gold label.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["gold\\predicted".to_string()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        for (label, row) in self.labels.iter().zip(&self.counts) {
            let mut rec = vec![label.clone()];
            rec.extend(row.iter().map(usize::to_string));
            w.write_record(&rec).map_err(csv_err)?;
        }
        finish_csv(w)
    }
}

pub fn confusion_matrix(
    predictions: &[Prediction],
    gold: &BTreeMap<String, String>,
) -> Result<ConfusionMatrix> {
    let pairs = pairs(predictions, gold)?;
    let labels: Vec<String> = pairs
        .iter()
        .flat_map(|&(g, p)| [g, p])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(String::from)
        .collect();
    let index: BTreeMap<&str, usize> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let mut counts = vec![vec![0; labels.len()]; labels.len()];
    for (g, p) in pairs {
        counts[index[g]][index[p]] += 1;
    }
    Ok(ConfusionMatrix { labels, counts })
}

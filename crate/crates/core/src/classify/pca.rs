use nalgebra::{DMatrix, SymmetricEigen};

use super::EmbeddingSet;
use crate::nnkit::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection {
    /// `n × dims` coordinates of the mean-centred points.
    pub coordinates: Matrix,
    /// `dims × D` unit principal axes.
    pub components: Matrix,
    pub mean: Vec<f64>,
    /// Fraction of total variance per component, non-increasing.
    pub explained_variance_ratio: Vec<f64>,
}

/// Projects mean-centred embeddings onto the leading eigenvectors of their
/// covariance matrix. Each axis is signed so that its largest-magnitude
/// entry is positive.
pub fn pca_project(set: &EmbeddingSet, dims: usize) -> Result<PcaProjection> {
    let (n, d) = (set.len(), set.dim());
    if dims == 0 || dims > d {
        return Err(Error::InvalidArgument(format!(
            "cannot project {d}-dimensional embeddings onto {dims} components"
        )));
    }
    if n < dims + 1 {
        return Err(Error::InvalidArgument(format!(
            "need at least {} points for {dims} components, got {n}",
            dims + 1
        )));
    }
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, x) in mean.iter_mut().zip(set.row(i)) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centred = DMatrix::from_fn(n, d, |i, j| set.matrix[(i, j)] - mean[j]);
    let cov = centred.transpose() * &centred / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();

    let mut components = Matrix::zeros(dims, d);
    let mut explained_variance_ratio = Vec::with_capacity(dims);
    for (c, &idx) in order.iter().take(dims).enumerate() {
        let axis = eig.eigenvectors.column(idx);
        let pivot = axis
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(1.0);
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for j in 0..d {
            components[(c, j)] = sign * axis[j];
        }
        let var = eig.eigenvalues[idx].max(0.0);
        explained_variance_ratio.push(if total > 0.0 { var / total } else { 0.0 });
    }
    let mut coordinates = Matrix::zeros(n, dims);
    for i in 0..n {
        let row = centred.row(i);
        for c in 0..dims {
            coordinates[(i, c)] = (0..d).map(|j| row[j] * components[(c, j)]).sum();
        }
    }
    Ok(PcaProjection {
        coordinates,
        components,
        mean,
        explained_variance_ratio,
    })
}

impl PcaProjection {
    /// `doc_id,x,y,label` using the first two coordinates.
    pub fn to_csv(&self, set: &EmbeddingSet) -> Result<String> {
        if self.coordinates.cols() < 2 {
            return Err(Error::InvalidArgument(
                "need two components for x,y output".into(),
            ));
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["doc_id", "x", "y", "label"])
            .map_err(super::csv_err)?;
        for (i, id) in set.ids.iter().enumerate() {
            w.write_record([
                id.clone(),
                self.coordinates[(i, 0)].to_string(),
                self.coordinates[(i, 1)].to_string(),
                set.labels[i].clone().unwrap_or_default(),
            ])
            .map_err(super::csv_err)?;
        }
        super::finish_csv(w)
    }
}

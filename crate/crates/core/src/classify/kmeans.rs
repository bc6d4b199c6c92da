use rand::Rng;

use super::{euclidean, EmbeddingSet};
use crate::nnkit::Matrix;
use crate::seeds::rng_from_seed;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Matrix,
    /// Within-cluster sum of squares after each assignment step.
    pub wcss_history: Vec<f64>,
    pub iterations: usize,
}

impl KMeansResult {
    pub fn wcss(&self) -> f64 {
        self.wcss_history.last().copied().unwrap_or(0.0)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &Matrix) -> (usize, f64) {
    (0..centroids.rows())
        .map(|c| (c, sq_dist(point, centroids.row(c))))
        .fold(
            (0, f64::INFINITY),
            |best, cur| if cur.1 < best.1 { cur } else { best },
        )
}

/// k-means++ seeding followed by Lloyd iterations until the assignment stops
/// changing or `max_iters` is reached. An empty cluster is moved onto the
/// point farthest from its current centroid.
pub fn kmeans(set: &EmbeddingSet, k: usize, seed: u64, max_iters: usize) -> Result<KMeansResult> {
    let n = set.len();
    if k < 1 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if k > n {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds {n} points"
        )));
    }
    let d = set.dim();
    let mut rng = rng_from_seed(seed);

    let mut centroids = Matrix::zeros(k, d);
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from_slice(set.row(first));
    let mut closest: Vec<f64> = (0..n)
        .map(|i| sq_dist(set.row(i), centroids.row(0)))
        .collect();
    for c in 1..k {
        let total: f64 = closest.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in closest.iter().enumerate() {
                u -= w;
                if u < 0.0 && w > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).copy_from_slice(set.row(pick));
        for (i, cl) in closest.iter_mut().enumerate() {
            *cl = cl.min(sq_dist(set.row(i), centroids.row(c)));
        }
    }

    let mut assignments = vec![usize::MAX; n];
    let mut wcss_history = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iters.max(1) {
        iterations += 1;
        let mut changed = false;
        let mut wcss = 0.0;
        let mut dists = vec![0.0; n];
        for i in 0..n {
            let (c, dist) = nearest(set.row(i), &centroids);
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
            dists[i] = dist;
            wcss += dist;
        }
        wcss_history.push(wcss);
        if !changed && iterations > 1 {
            break;
        }

        let mut sums = Matrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, &c) in assignments.iter().enumerate() {
            counts[c] += 1;
            for (s, x) in sums.row_mut(c).iter_mut().zip(set.row(i)) {
                *s += x;
            }
        }
        let mut taken = vec![false; n];
        for (c, &count) in counts.iter().enumerate() {
            if count > 0 {
                let inv = 1.0 / count as f64;
                for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            } else {
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .unwrap_or(0);
                taken[far] = true;
                centroids.row_mut(c).copy_from_slice(set.row(far));
            }
        }
    }
    Ok(KMeansResult {
        assignments,
        centroids,
        wcss_history,
        iterations,
    })
}

/// Symmetric `k × k` Euclidean distances between centroid rows.
pub fn centroid_distances(centroids: &Matrix) -> Matrix {
    let k = centroids.rows();
    let mut out = Matrix::zeros(k, k);
    for a in 0..k {
        for b in (a + 1)..k {
            let dist = euclidean(centroids.row(a), centroids.row(b));
            out[(a, b)] = dist;
            out[(b, a)] = dist;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn set_from(rows: Vec<Vec<f64>>) -> EmbeddingSet {
        let n = rows.len();
        EmbeddingSet::new(
            (0..n).map(|i| format!("p{i}")).collect(),
            Matrix::from_rows(&rows).unwrap(),
            vec![None; n],
        )
        .unwrap()
    }

    fn blobs(seed: u64) -> (EmbeddingSet, Vec<usize>) {
        let mut rng = rng_from_seed(seed);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut rows = Vec::new();
        let mut truth = Vec::new();
        for (b, centre) in [[-10.0, 0.0, 3.0], [10.0, 5.0, -3.0]].iter().enumerate() {
            for _ in 0..40 {
                rows.push(centre.iter().map(|c| c + noise.sample(&mut rng)).collect());
                truth.push(b);
            }
        }
        (set_from(rows), truth)
    }

    #[test]
    fn one_cluster_per_point() {
        let s = set_from(vec![
            vec![0.0, 1.0],
            vec![2.0, 3.0],
            vec![-1.0, 5.0],
            vec![4.0, 4.0],
        ]);
        let r = kmeans(&s, 4, 7, 20).unwrap();
        assert_eq!(r.wcss(), 0.0);
        let mut a = r.assignments.clone();
        a.sort_unstable();
        a.dedup();
        assert_eq!(a.len(), 4);
    }

    #[test]
    fn separated_blobs_are_recovered() {
        let (s, truth) = blobs(3);
        let r = kmeans(&s, 2, 11, 50).unwrap();
        let agree = r
            .assignments
            .iter()
            .zip(&truth)
            .filter(|(a, t)| a == t)
            .count();
        let purity = agree.max(truth.len() - agree) as f64 / truth.len() as f64;
        assert_eq!(purity, 1.0);
        assert_eq!(r, kmeans(&s, 2, 11, 50).unwrap());
    }

    #[test]
    fn wcss_never_increases() {
        for seed in 0..20 {
            let (s, _) = blobs(seed);
            let r = kmeans(&s, 7, seed, 30).unwrap();
            assert!(
                r.wcss_history.windows(2).all(|w| w[1] <= w[0] + 1e-9),
                "{:?}",
                r.wcss_history
            );
        }
    }

    #[test]
    fn argument_errors() {
        let s = set_from(vec![vec![0.0], vec![1.0]]);
        assert!(kmeans(&s, 0, 0, 10).is_err());
        assert!(kmeans(&s, 3, 0, 10).is_err());
    }

    #[test]
    fn centroid_distance_matrix() {
        let same = Matrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        assert!(centroid_distances(&same)
            .as_slice()
            .iter()
            .all(|&v| v == 0.0));
        let two = Matrix::from_rows(&[vec![0.0, 0.0], vec![3.0, 4.0]]).unwrap();
        let d = centroid_distances(&two);
        assert_eq!((d[(0, 1)], d[(1, 0)], d[(0, 0)]), (5.0, 5.0, 0.0));

        let mut rng = rng_from_seed(5);
        let pts = Matrix::from_vec(
            12,
            4,
            (0..48).map(|_| rng.random_range(-5.0..5.0)).collect(),
        )
        .unwrap();
        let d = centroid_distances(&pts);
        for a in 0..12 {
            for b in 0..12 {
                assert_eq!(d[(a, b)], d[(b, a)]);
                for c in 0..12 {
                    assert!(d[(a, c)] <= d[(a, b)] + d[(b, c)] + 1e-12);
                }
            }
        }
    }
}

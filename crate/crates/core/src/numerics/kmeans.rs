use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ensure_finite, Matrix};
use crate::error::{Error, Result};

const MAX_LLOYD_ITERATIONS: usize = 300;

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    /// k × d
    pub centroids: Matrix,
    /// Within-cluster sum of squares.
    pub wcss: f64,
}

/// Lloyd's k-means over the rows of `points`, best of `restarts` runs.
///
/// Each run is seeded by reservoir-sampling `k` distinct rows with a ChaCha
/// stream derived from `seed`. Ties in nearest-centroid assignment go to the
/// lowest centroid index.
pub fn kmeans(points: &Matrix, k: usize, seed: u64, restarts: usize) -> Result<KMeansResult> {
    let n = points.nrows();
    if k == 0 {
        return Err(Error::InvalidArgument("kmeans needs k >= 1".into()));
    }
    if k > n {
        return Err(Error::InvalidArgument(format!(
            "kmeans with k = {k} > n = {n} points"
        )));
    }
    ensure_finite(points, "kmeans input")?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..restarts.max(1) {
        let init = reservoir_sample(n, k, &mut rng);
        let run = lloyd(points, &init);
        // Strict improvement only, so the earliest restart wins ties.
        if best.as_ref().map_or(true, |b| run.wcss < b.wcss) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Algorithm R: k distinct indices from 0..n, returned in ascending order.
fn reservoir_sample(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut reservoir: Vec<usize> = (0..k).collect();
    for i in k..n {
        let j = rng.random_range(0..=i);
        if j < k {
            reservoir[j] = i;
        }
    }
    reservoir.sort_unstable();
    reservoir
}

fn squared_distance(points: &Matrix, row: usize, centroids: &Matrix, c: usize) -> f64 {
    let mut acc = 0.0;
    for j in 0..points.ncols() {
        let d = points[(row, j)] - centroids[(c, j)];
        acc += d * d;
    }
    acc
}

fn nearest(points: &Matrix, row: usize, centroids: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centroids.nrows() {
        let d = squared_distance(points, row, centroids, c);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn lloyd(points: &Matrix, init: &[usize]) -> KMeansResult {
    let (n, dim) = points.shape();
    let k = init.len();
    let mut centroids = Matrix::zeros(k, dim);
    for (c, &row) in init.iter().enumerate() {
        centroids.set_row(c, &points.row(row));
    }
    let mut labels = vec![usize::MAX; n];

    for _ in 0..MAX_LLOYD_ITERATIONS {
        let mut changed = false;
        let mut dists = vec![0.0; n];
        for i in 0..n {
            let (c, d) = nearest(points, i, &centroids);
            dists[i] = d;
            if labels[i] != c {
                labels[i] = c;
                changed = true;
            }
        }

        let mut sums = Matrix::zeros(k, dim);
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            for j in 0..dim {
                sums[(labels[i], j)] += points[(i, j)];
            }
        }
        // An empty cluster takes over the point farthest from its centroid.
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .filter(|&i| counts[labels[i]] > 1)
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)));
                if let Some(i) = far {
                    let old = labels[i];
                    counts[old] -= 1;
                    for j in 0..dim {
                        sums[(old, j)] -= points[(i, j)];
                        sums[(c, j)] += points[(i, j)];
                    }
                    counts[c] = 1;
                    labels[i] = c;
                    dists[i] = 0.0;
                    changed = true;
                }
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..dim {
                    centroids[(c, j)] = sums[(c, j)] / counts[c] as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }

    let wcss = (0..n)
        .map(|i| squared_distance(points, i, &centroids, labels[i]))
        .sum();
    KMeansResult {
        labels,
        centroids,
        wcss,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn two_clouds(seed: u64) -> (Matrix, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let mut truth = Vec::new();
        let mut m = Matrix::zeros(40, 2);
        for i in 0..40 {
            let cluster = i % 2;
            truth.push(cluster);
            let center = if cluster == 0 { -5.0 } else { 5.0 };
            m[(i, 0)] = center + noise.sample(&mut rng);
            m[(i, 1)] = center + noise.sample(&mut rng);
        }
        (m, truth)
    }

    #[test]
    fn recovers_two_separated_clouds() {
        let (points, truth) = two_clouds(1);
        let res = kmeans(&points, 2, 7, 5).unwrap();
        let flip = res.labels[0] != truth[0];
        for (l, t) in res.labels.iter().zip(&truth) {
            assert_eq!(*l != *t, flip);
        }
    }

    #[test]
    fn k_equals_n_is_exact() {
        let (points, _) = two_clouds(2);
        let res = kmeans(&points, points.nrows(), 0, 1).unwrap();
        assert_eq!(res.wcss, 0.0);
        let mut seen = res.labels.clone();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), points.nrows());
    }

    #[test]
    fn k_one_labels_everything_zero() {
        let (points, _) = two_clouds(3);
        let res = kmeans(&points, 1, 0, 3).unwrap();
        assert!(res.labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn rejects_k_above_n() {
        let points = Matrix::zeros(3, 2);
        assert!(matches!(
            kmeans(&points, 4, 0, 1),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn fixed_seed_is_bit_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let points = Matrix::from_fn(60, 3, |_, _| rng.random_range(-1.0..1.0));
        let a = kmeans(&points, 4, 99, 6).unwrap();
        let b = kmeans(&points, 4, 99, 6).unwrap();
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.wcss.to_bits(), b.wcss.to_bits());
    }
}

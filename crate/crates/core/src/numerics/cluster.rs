//! K-means (k-means++ seeding, Lloyd iterations) and normalized mutual
//! information.

use std::collections::BTreeMap;

use super::matrix::Matrix;
use super::rng::Rng;
use crate::error::{invalid, Result};

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Matrix,
    pub inertia: f64,
    /// Inertia after each Lloyd assignment step.
    pub inertia_history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centroids.rows() {
        let d = sq_dist(point, centroids.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn seed_plus_plus(points: &Matrix, k: usize, rng: &mut Rng) -> Matrix {
    let n = points.rows();
    let mut chosen = vec![rng.below(n)];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), points.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.uniform() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && *d > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            // Every remaining point coincides with a centroid.
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), points.row(next)));
        }
    }
    points.select_rows(&chosen)
}

pub fn kmeans(points: &Matrix, k: usize, rng: &mut Rng, max_iter: usize) -> Result<KMeansResult> {
    let n = points.rows();
    if k == 0 || k > n {
        return invalid(format!("kmeans needs 1 <= k <= n, got k = {k}, n = {n}"));
    }
    let dim = points.cols();
    let mut centroids = seed_plus_plus(points, k, rng);
    let mut assignments = vec![usize::MAX; n];
    let mut history = Vec::new();

    for _ in 0..max_iter.max(1) {
        let mut changed = false;
        let mut inertia = 0.0;
        for i in 0..n {
            let (c, d) = nearest(points.row(i), &centroids);
            inertia += d;
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
        }
        history.push(inertia);
        if !changed {
            break;
        }
        let mut sums = Matrix::zeros(k, dim);
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = assignments[i];
            counts[c] += 1;
            for (s, x) in sums.row_mut(c).iter_mut().zip(points.row(i)) {
                *s += x;
            }
        }
        for c in 0..k {
            // Empty clusters keep their previous centroid.
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            }
        }
    }

    let inertia = (0..n)
        .map(|i| sq_dist(points.row(i), centroids.row(assignments[i])))
        .sum();
    Ok(KMeansResult {
        assignments,
        centroids,
        inertia,
        inertia_history: history,
    })
}

/// Mutual information over the arithmetic mean of the marginal entropies
/// (natural logs). Two single-cluster labelings are identical partitions and
/// score 1.
pub fn nmi(assignments: &[usize], labels: &[usize]) -> Result<f64> {
    if assignments.len() != labels.len() {
        return invalid(format!(
            "nmi length mismatch: {} vs {}",
            assignments.len(),
            labels.len()
        ));
    }
    if assignments.is_empty() {
        return invalid("nmi of empty labelings");
    }
    let n = assignments.len() as f64;
    let mut joint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut ca: BTreeMap<usize, usize> = BTreeMap::new();
    let mut cb: BTreeMap<usize, usize> = BTreeMap::new();
    for (&a, &b) in assignments.iter().zip(labels) {
        *joint.entry((a, b)).or_default() += 1;
        *ca.entry(a).or_default() += 1;
        *cb.entry(b).or_default() += 1;
    }
    let entropy = |counts: &BTreeMap<usize, usize>| -> f64 {
        counts
            .values()
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum()
    };
    let mi: f64 = joint
        .iter()
        .map(|(&(a, b), &c)| {
            let pab = c as f64 / n;
            pab * (pab * n * n / (ca[&a] as f64 * cb[&b] as f64)).ln()
        })
        .sum();
    let denom = 0.5 * (entropy(&ca) + entropy(&cb));
    if denom <= 0.0 {
        return Ok(1.0);
    }
    Ok((mi / denom).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_equals_n_zero_inertia() {
        let p = Matrix::from_rows(&[[0.0, 0.0], [1.0, 0.0], [5.0, 5.0], [2.0, -1.0]]).unwrap();
        let r = kmeans(&p, 4, &mut Rng::new(1), 50).unwrap();
        assert_eq!(r.inertia, 0.0);
        let mut a = r.assignments.clone();
        a.sort();
        assert_eq!(a, vec![0, 1, 2, 3]);
    }

    #[test]
    fn k_one_is_mean() {
        let p = Matrix::from_rows(&[[0.0, 0.0], [2.0, 0.0], [1.0, 3.0]]).unwrap();
        let r = kmeans(&p, 1, &mut Rng::new(1), 50).unwrap();
        assert!((r.centroids[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((r.centroids[(0, 1)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bad_k() {
        let p = Matrix::zeros(3, 2);
        assert!(kmeans(&p, 0, &mut Rng::new(1), 10).is_err());
        assert!(kmeans(&p, 4, &mut Rng::new(1), 10).is_err());
    }

    #[test]
    fn nmi_examples() {
        assert!((nmi(&[1, 1, 0, 0], &[0, 0, 1, 1]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(nmi(&[0, 0, 0, 0], &[0, 0, 1, 1]).unwrap(), 0.0);
        assert_eq!(nmi(&[2, 2, 2], &[0, 0, 0]).unwrap(), 1.0);
        assert!((nmi(&[0, 0, 0, 1], &[0, 0, 1, 1]).unwrap() - 0.343_711).abs() < 1e-5);
        assert!(nmi(&[0], &[0, 1]).is_err());
    }
}

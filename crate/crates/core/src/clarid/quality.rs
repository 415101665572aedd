use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::numerics::{kmeans, nmi, Matrix, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub nmi: f64,
    /// Mean squared distance to the class centroid, per label (ascending).
    pub within_class_variance: Vec<f64>,
    /// Same quantity pooled over all samples.
    pub pooled_within_class_variance: f64,
}

pub fn within_class_variance(features: &Matrix, labels: &[usize]) -> Result<(Vec<f64>, f64)> {
    if features.rows() != labels.len() || labels.is_empty() {
        return invalid("one label per feature row required");
    }
    let classes: Vec<usize> = labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let mut per_class = Vec::with_capacity(classes.len());
    let mut pooled = 0.0;
    for &c in &classes {
        let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        let sub = features.select_rows(&rows);
        let centered = sub.center_columns();
        let ss: f64 = centered.data().iter().map(|v| v * v).sum();
        pooled += ss;
        per_class.push(ss / rows.len() as f64);
    }
    Ok((per_class, pooled / labels.len() as f64))
}

/// K-means with one cluster per label, scored by NMI against the labels.
pub fn feature_quality(features: &Matrix, labels: &[usize], k_clusters: usize, rng: &mut Rng) -> Result<QualityReport> {
    let distinct = labels.iter().collect::<BTreeSet<_>>().len();
    if k_clusters != distinct {
        return invalid(format!("k_clusters = {k_clusters} but labels have {distinct} classes"));
    }
    let km = kmeans(features, k_clusters, rng, 300)?;
    let score = nmi(&km.assignments, labels)?;
    let (per_class, pooled) = within_class_variance(features, labels)?;
    Ok(QualityReport {
        nmi: score,
        within_class_variance: per_class,
        pooled_within_class_variance: pooled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_constant_features() {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..20 {
            let c = i % 2;
            rows.push(if c == 0 { [0.0, 1.0, 2.0] } else { [5.0, -1.0, 0.0] });
            labels.push(c);
        }
        let f = Matrix::from_rows(&rows).unwrap();
        let r = feature_quality(&f, &labels, 2, &mut Rng::new(0)).unwrap();
        assert!((r.nmi - 1.0).abs() < 1e-12);
        assert_eq!(r.within_class_variance, vec![0.0, 0.0]);
    }

    #[test]
    fn cluster_count_must_match_labels() {
        let f = Matrix::zeros(4, 2);
        assert!(feature_quality(&f, &[0, 1, 0, 1], 3, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn label_independent_features_score_low() {
        let mut rng = Rng::new(17);
        let n = 200;
        let f = Matrix::from_vec(n, 4, (0..n * 4).map(|_| rng.normal()).collect()).unwrap();
        let labels: Vec<usize> = (0..n).map(|_| rng.below(2)).collect();
        let r = feature_quality(&f, &labels, 2, &mut rng).unwrap();
        assert!(r.nmi < 0.1, "nmi {}", r.nmi);
    }
}

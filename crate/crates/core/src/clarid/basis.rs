use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::{dot, elbow_index, svd, Matrix};

/// Top right singular vectors of a feature Jacobian, as columns of `v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtraneousBasis {
    /// `input_dim x n`, orthonormal columns.
    pub v: Matrix,
    /// Descending.
    pub sigma: Vec<f64>,
}

impl ExtraneousBasis {
    pub fn n(&self) -> usize {
        self.sigma.len()
    }

    pub fn direction(&self, i: usize) -> Vec<f64> {
        self.v.col(i)
    }
}

pub fn extraneous_directions(j: &Matrix, n: usize) -> Result<ExtraneousBasis> {
    let r = j.rows().min(j.cols());
    if n == 0 || n > r {
        return invalid(format!("n = {n} must lie in 1..={r} for a {:?} Jacobian", j.shape()));
    }
    let s = svd(j)?;
    Ok(ExtraneousBasis {
        v: s.v.leading_cols(n),
        sigma: s.sigma[..n].to_vec(),
    })
}

/// Cumulative explained variance ratio `S_k = Σ_{i<=k} σ_i² / Σ_{j<=n} σ_j²`.
pub fn evr_sequence(basis: &ExtraneousBasis) -> Result<Vec<f64>> {
    if basis.sigma.is_empty() {
        return invalid("empty basis");
    }
    let total: f64 = basis.sigma.iter().map(|s| s * s).sum();
    if total == 0.0 {
        return Err(Error::Degenerate("all singular values are zero".into()));
    }
    let mut acc = 0.0;
    let mut out: Vec<f64> = basis
        .sigma
        .iter()
        .map(|s| {
            acc += s * s;
            acc / total
        })
        .collect();
    *out.last_mut().expect("non-empty") = 1.0;
    Ok(out)
}

/// Number of directions to remove: elbow of the EVR sequence plus one.
pub fn select_k(evr: &[f64]) -> usize {
    if evr.len() < 2 {
        return 1;
    }
    elbow_index(evr).map_or(1, |i| i + 1)
}

/// `(I - V_k V_kᵀ) x`.
pub fn project_out(x: &[f64], basis: &ExtraneousBasis, k: usize) -> Result<Vec<f64>> {
    if k > basis.n() {
        return invalid(format!("k = {k} exceeds the {} available directions", basis.n()));
    }
    if x.len() != basis.v.rows() {
        return invalid("latent dimension does not match the basis");
    }
    let mut out = x.to_vec();
    for i in 0..k {
        let v = basis.direction(i);
        let c = dot(&out, &v);
        for (o, vi) in out.iter_mut().zip(&v) {
            *o -= c * vi;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis(v: &[[f64; 2]], sigma: &[f64]) -> ExtraneousBasis {
        let mut m = Matrix::zeros(2, v.len());
        for (j, col) in v.iter().enumerate() {
            m.set_col(j, col);
        }
        ExtraneousBasis {
            v: m,
            sigma: sigma.to_vec(),
        }
    }

    #[test]
    fn diagonal_jacobian() {
        let j = Matrix::from_rows(&[[5.0, 0.0], [0.0, 1.0]]).unwrap();
        let b = extraneous_directions(&j, 2).unwrap();
        assert_eq!(b.sigma, vec![5.0, 1.0]);
        assert!((b.v[(0, 0)].abs() - 1.0).abs() < 1e-15);
        assert!(extraneous_directions(&j, 3).is_err());
        assert!(extraneous_directions(&j, 0).is_err());
    }

    #[test]
    fn evr_examples() {
        let e = evr_sequence(&basis(&[[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]], &[2.0, 1.0, 1.0])).unwrap();
        let want = [4.0 / 6.0, 5.0 / 6.0, 1.0];
        for (a, b) in e.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        let e = evr_sequence(&basis(&[[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]], &[3.0, 0.0, 0.0])).unwrap();
        assert_eq!(e, vec![1.0, 1.0, 1.0]);
        assert_eq!(evr_sequence(&basis(&[[1.0, 0.0]], &[1.0])).unwrap(), vec![1.0]);
        assert!(matches!(
            evr_sequence(&basis(&[[1.0, 0.0]], &[0.0])),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn select_k_examples() {
        assert_eq!(select_k(&[0.2, 0.8, 0.9, 0.95, 1.0]), 2);
        assert_eq!(select_k(&[0.0, 0.25, 0.5, 0.75, 1.0]), 1);
        assert_eq!(select_k(&[0.0, 1.0, 1.0, 1.0, 1.0]), 2);
        assert_eq!(select_k(&[1.0]), 1);
    }

    #[test]
    fn projection_examples() {
        let b = basis(&[[1.0, 0.0]], &[1.0]);
        assert_eq!(project_out(&[1.0, 0.0], &b, 1).unwrap(), vec![0.0, 0.0]);
        assert_eq!(project_out(&[1.0, 2.0], &b, 0).unwrap(), vec![1.0, 2.0]);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let b = basis(&[[h, h]], &[1.0]);
        let p = project_out(&[2.0, 0.0], &b, 1).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-15 && (p[1] + 1.0).abs() < 1e-15);
        assert!(project_out(&[2.0, 0.0], &b, 2).is_err());
    }
}

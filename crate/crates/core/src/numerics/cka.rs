use super::matrix::Matrix;
use crate::error::{invalid, Error, Result};

/// Linear centered kernel alignment between two feature matrices over the
/// same `b` samples: `‖Ỹᵀ X̃‖²_F / (‖X̃ᵀ X̃‖_F ‖Ỹᵀ Ỹ‖_F)` with column-centered
/// `X̃`, `Ỹ`.
pub fn linear_cka(x: &Matrix, y: &Matrix) -> Result<f64> {
    if x.rows() != y.rows() {
        return invalid(format!("cka row mismatch: {} vs {}", x.rows(), y.rows()));
    }
    if x.rows() < 2 {
        return invalid("cka needs at least two samples");
    }
    let xc = x.center_columns();
    let yc = y.center_columns();
    if xc.frobenius_norm() == 0.0 || yc.frobenius_norm() == 0.0 {
        return Err(Error::Degenerate("cka of constant features".into()));
    }
    let cross = yc.t_matmul(&xc).frobenius_norm();
    let xx = xc.t_matmul(&xc).frobenius_norm();
    let yy = yc.t_matmul(&yc).frobenius_norm();
    Ok((cross * cross / (xx * yy)).clamp(0.0, 1.0))
}

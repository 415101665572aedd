//! Contrastive and CKA distillation objectives, recorded on a [`Tape`] so
//! that values and gradients share one implementation.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::{Matrix, Tape, Var};

/// Upper clamp applied to CKA before `log(1 − CKA)`.
pub const CKA_CLAMP: f64 = 1.0 - 1e-7;

/// `W_ij = 1/|P_i|` over same-class columns `j`; `Σ_j W_ij = 1` per row.
fn align_weights(labels: &[usize]) -> Matrix {
    let b = labels.len();
    let mut w = Matrix::zeros(b, b);
    for i in 0..b {
        let pos: Vec<usize> = (0..b).filter(|&j| labels[j] == labels[i]).collect();
        for &j in &pos {
            w.data_mut()[i * b + j] = 1.0 / pos.len() as f64;
        }
    }
    w
}

/// `W_ij = 1/(|P_i| − 1)` over same-class `j ≠ i`; rows of anchors without
/// positives stay zero, leaving only their denominator.
fn cano_weights(labels: &[usize]) -> Matrix {
    let b = labels.len();
    let mut w = Matrix::zeros(b, b);
    for i in 0..b {
        let pos: Vec<usize> = (0..b).filter(|&j| j != i && labels[j] == labels[i]).collect();
        for &j in &pos {
            w.data_mut()[i * b + j] = 1.0 / pos.len() as f64;
        }
    }
    w
}

/// `(1/b) Σ_i [LSE_i(S) − Σ_j W_ij S_ij]`.
fn weighted_contrast(tape: &mut Tape, sim: Var, weights: Matrix, mask: Option<Vec<bool>>) -> Var {
    let b = weights.rows() as f64;
    let lse = tape.log_sum_exp_rows(sim, mask);
    let lse_sum = tape.sum(lse);
    let w = tape.constant(weights);
    let pos = tape.mul(sim, w);
    let pos_sum = tape.sum(pos);
    let diff = tape.sub(lse_sum, pos_sum);
    tape.scale(diff, 1.0 / b)
}

/// Training-sample features against Canonical Sample features; rows of both
/// inputs must already be unit-norm.
pub fn l_align_tape(tape: &mut Tape, z: Var, z_tilde: Var, labels: &[usize], tau: f64) -> Result<Var> {
    let b = labels.len();
    if b == 0 {
        return invalid("l_align needs a non-empty batch");
    }
    if tape.value(z).rows() != b || tape.value(z_tilde).rows() != b {
        return invalid("l_align: one label per feature row required");
    }
    let zt = tape.transpose(z_tilde);
    let dots = tape.matmul(z, zt);
    let sim = tape.scale(dots, 1.0 / tau);
    Ok(weighted_contrast(tape, sim, align_weights(labels), None))
}

/// Canonical Sample features against each other, self excluded from the
/// denominator. Anchors without same-class partners keep only the
/// denominator term.
pub fn l_cano_tape(tape: &mut Tape, z_tilde: Var, labels: &[usize], tau: f64) -> Result<Var> {
    let b = labels.len();
    if b < 2 {
        return invalid("l_cano needs at least two samples");
    }
    if tape.value(z_tilde).rows() != b {
        return invalid("l_cano: one label per feature row required");
    }
    let zt = tape.transpose(z_tilde);
    let dots = tape.matmul(z_tilde, zt);
    let sim = tape.scale(dots, 1.0 / tau);
    let mask = (0..b * b).map(|k| k / b != k % b).collect();
    Ok(weighted_contrast(tape, sim, cano_weights(labels), Some(mask)))
}

/// Linear CKA between a tape variable and fixed teacher features.
pub fn cka_tape(tape: &mut Tape, x: Var, teacher: &Matrix) -> Result<Var> {
    let xv = tape.value(x);
    if xv.rows() != teacher.rows() || xv.rows() < 2 {
        return invalid("cka: matching row counts of at least two required");
    }
    let ac = teacher.center_columns();
    if xv.center_columns().frobenius_norm() == 0.0 || ac.frobenius_norm() == 0.0 {
        return Err(Error::Degenerate("cka of constant features".into()));
    }
    let aa = ac.t_matmul(&ac).frobenius_norm();
    let xc = tape.center_cols(x);
    let act = tape.constant(ac.transpose());
    let cross = tape.matmul(act, xc);
    let cross_sq = tape.square(cross);
    let num = tape.sum(cross_sq);
    let xct = tape.transpose(xc);
    let xx = tape.matmul(xct, xc);
    let xx_sq = tape.square(xx);
    let xx_ss = tape.sum(xx_sq);
    let xx_norm = tape.sqrt(xx_ss);
    let den = tape.scale(xx_norm, aa);
    Ok(tape.div(num, den))
}

/// `log(1 − min(cka, CKA_CLAMP))`.
fn log_one_minus(tape: &mut Tape, cka: Var) -> Var {
    let c = tape.clamp_max(cka, CKA_CLAMP);
    let neg = tape.scale(c, -1.0);
    let one_minus = tape.offset(neg, 1.0);
    tape.ln(one_minus)
}

pub fn l_dist_tape(tape: &mut Tape, z: Var, z_tilde: Var, teacher: &Matrix, lambda_cka: f64) -> Result<Var> {
    let c1 = cka_tape(tape, z, teacher)?;
    let t1 = log_one_minus(tape, c1);
    let t1 = tape.scale(t1, lambda_cka);
    if lambda_cka == 1.0 {
        return Ok(t1);
    }
    let c2 = cka_tape(tape, z_tilde, teacher)?;
    let t2 = log_one_minus(tape, c2);
    let t2 = tape.scale(t2, 1.0 - lambda_cka);
    Ok(tape.add(t1, t2))
}

/// Mean cross-entropy of `logits` against integer labels.
pub fn cross_entropy_tape(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let (b, c) = tape.value(logits).shape();
    if b == 0 || b != labels.len() {
        return invalid("cross entropy: one label per logit row required");
    }
    let mut onehot = Matrix::zeros(b, c);
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return invalid(format!("label {y} out of range for {c} classes"));
        }
        onehot.data_mut()[i * c + y] = 1.0;
    }
    Ok(weighted_contrast(tape, logits, onehot, None))
}

fn eval(build: impl FnOnce(&mut Tape) -> Result<Var>) -> Result<f64> {
    let mut tape = Tape::new();
    let v = build(&mut tape)?;
    Ok(tape.value(v).item())
}

/// Alignment loss over unit-norm rows `z` (training samples) and `z_tilde`
/// (their Canonical Samples), `z_tilde[j]` sharing the label of row `j`.
pub fn l_align(z: &Matrix, z_tilde: &Matrix, labels: &[usize], tau: f64) -> Result<f64> {
    eval(|t| {
        let a = t.constant(z.clone());
        let b = t.constant(z_tilde.clone());
        l_align_tape(t, a, b, labels, tau)
    })
}

pub fn l_cano(z_tilde: &Matrix, labels: &[usize], tau: f64) -> Result<f64> {
    eval(|t| {
        let a = t.constant(z_tilde.clone());
        l_cano_tape(t, a, labels, tau)
    })
}

pub fn l_dist(z: &Matrix, z_tilde: &Matrix, teacher: &Matrix, lambda_cka: f64) -> Result<f64> {
    eval(|t| {
        let a = t.constant(z.clone());
        let b = t.constant(z_tilde.clone());
        l_dist_tape(t, a, b, teacher, lambda_cka)
    })
}

pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    eval(|t| {
        let a = t.constant(logits.clone());
        cross_entropy_tape(t, a, labels)
    })
}

/// Loss components of one batch. The distillation terms are `None` when
/// the batch carries no CLAReps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub cls: f64,
    pub align: Option<f64>,
    pub cano: Option<f64>,
    pub dist: Option<f64>,
}

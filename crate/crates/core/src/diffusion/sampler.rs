//! DDIM decoding (`F_dec`), deterministic inversion (`F_inv`), classifier-free
//! guidance and two-stage sampling.

use serde::{Deserialize, Serialize};

use super::model::{CdmModel, Condition};
use super::schedule::NoiseSchedule;
use crate::error::{invalid, Error, Result};
use crate::numerics::{Matrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentState {
    pub x: [f64; 2],
    pub t: usize,
    pub cond: Condition,
}

/// Noise predictor seen by the samplers. Implemented by [`CdmModel`]; tests
/// substitute closed-form predictors.
pub trait NoisePredictor: Sync {
    fn predict(&self, x: &Matrix, t: usize, conds: &[Condition]) -> Result<Matrix>;
}

impl NoisePredictor for CdmModel {
    fn predict(&self, x: &Matrix, t: usize, conds: &[Condition]) -> Result<Matrix> {
        self.predict_noise(x, t, conds)
    }
}

/// Guided prediction `ε_∅ + w (ε_c - ε_∅)`. `w = 1` is the plain conditional
/// prediction and `w = 0` the unconditional one; rows conditioned on `∅`
/// ignore `w`.
pub fn guided_noise<P: NoisePredictor + ?Sized>(
    model: &P,
    x: &Matrix,
    t: usize,
    conds: &[Condition],
    cfg_scale: f64,
) -> Result<Matrix> {
    if !(cfg_scale >= 0.0) {
        return invalid("guidance scale must be non-negative");
    }
    if cfg_scale == 1.0 || conds.iter().all(|c| *c == Condition::Null) {
        return model.predict(x, t, conds);
    }
    let uncond = model.predict(x, t, &vec![Condition::Null; conds.len()])?;
    if cfg_scale == 0.0 {
        return Ok(uncond);
    }
    let cond = model.predict(x, t, conds)?;
    let mut out = uncond.clone();
    for i in 0..x.rows() {
        if conds[i] == Condition::Null {
            continue;
        }
        for j in 0..x.cols() {
            out[(i, j)] = uncond[(i, j)] + cfg_scale * (cond[(i, j)] - uncond[(i, j)]);
        }
    }
    Ok(out)
}

/// One DDIM step `t -> s` (`s < t`) for every row:
/// `x_s = √ᾱ_s x̂_0 + √(1-ᾱ_s-ξ²) ε̂ + ξ z`, `x̂_0 = (x_t - √(1-ᾱ_t) ε̂)/√ᾱ_t`.
fn ddim_step(x: &Matrix, eps: &Matrix, t: usize, s: usize, sched: &NoiseSchedule, rng: &mut Rng) -> Matrix {
    let (at, as_) = (sched.alpha_bar(t), sched.alpha_bar(s));
    let xi = sched.xi(t, s);
    let dir = (1.0 - as_ - xi * xi).max(0.0).sqrt();
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            let x0 = (x[(i, j)] - (1.0 - at).sqrt() * eps[(i, j)]) / at.sqrt();
            out[(i, j)] = as_.sqrt() * x0 + dir * eps[(i, j)];
        }
        if xi > 0.0 {
            for j in 0..x.cols() {
                out[(i, j)] += xi * rng.normal();
            }
        }
    }
    out
}

/// Decodes every row from time `from_t` to 0. `cond_at(t)` gives the row
/// conditions used for the step leaving time `t`.
pub fn decode_with<P, F>(
    model: &P,
    sched: &NoiseSchedule,
    x: Matrix,
    from_t: usize,
    cfg_scale: f64,
    rng: &mut Rng,
    cond_at: F,
) -> Result<Matrix>
where
    P: NoisePredictor + ?Sized,
    F: Fn(usize) -> Vec<Condition>,
{
    sched.check_t(from_t)?;
    let times = sched.decode_times(from_t);
    let mut x = x;
    for w in times.windows(2) {
        let (t, s) = (w[0], w[1]);
        let conds = cond_at(t);
        let eps = guided_noise(model, &x, t, &conds, cfg_scale)?;
        x = ddim_step(&x, &eps, t, s, sched, rng);
    }
    if !x.is_finite() {
        return Err(Error::Numerical("decode produced non-finite values".into()));
    }
    Ok(x)
}

pub fn decode_batch<P: NoisePredictor + ?Sized>(
    model: &P,
    sched: &NoiseSchedule,
    x: Matrix,
    t: usize,
    conds: &[Condition],
    cfg_scale: f64,
    rng: &mut Rng,
) -> Result<Matrix> {
    if conds.len() != x.rows() {
        return invalid("one condition per row required");
    }
    decode_with(model, sched, x, t, cfg_scale, rng, |_| conds.to_vec())
}

/// `F_dec`: decode a latent state to data space. A state at `t = 0` is
/// returned unchanged.
pub fn ddim_decode<P: NoisePredictor + ?Sized>(
    state: &LatentState,
    model: &P,
    sched: &NoiseSchedule,
    cfg_scale: f64,
    rng: &mut Rng,
) -> Result<[f64; 2]> {
    let out = decode_batch(
        model,
        sched,
        Matrix::row_vector(&state.x),
        state.t,
        &[state.cond],
        cfg_scale,
        rng,
    )?;
    Ok([out[(0, 0)], out[(0, 1)]])
}

/// Deterministic inversion of every row from 0 up to `target_t`.
///
/// Each step `s -> t` reuses `ε̂(x_s, t)` in place of the unknown `ε̂(x_t, t)`:
/// `x_t = √ᾱ_t x̂_0 + √(1-ᾱ_t) ε̂` with `x̂_0 = (x_s - √(1-ᾱ_s) ε̂)/√ᾱ_s`.
pub fn invert_batch<P: NoisePredictor + ?Sized>(
    model: &P,
    sched: &NoiseSchedule,
    x0: Matrix,
    target_t: usize,
    conds: &[Condition],
) -> Result<Matrix> {
    if sched.ddim_eta != 0.0 {
        return Err(Error::Contract(format!(
            "inversion requires deterministic DDIM (eta = 0), got eta = {}",
            sched.ddim_eta
        )));
    }
    sched.check_t(target_t)?;
    if conds.len() != x0.rows() {
        return invalid("one condition per row required");
    }
    let times = sched.invert_times(target_t);
    let mut x = x0;
    for w in times.windows(2) {
        let (s, t) = (w[0], w[1]);
        let eps = model.predict(&x, t, conds)?;
        let (as_, at) = (sched.alpha_bar(s), sched.alpha_bar(t));
        for i in 0..x.rows() {
            for j in 0..x.cols() {
                let x0_hat = (x[(i, j)] - (1.0 - as_).sqrt() * eps[(i, j)]) / as_.sqrt();
                x[(i, j)] = at.sqrt() * x0_hat + (1.0 - at).sqrt() * eps[(i, j)];
            }
        }
    }
    if !x.is_finite() {
        return Err(Error::Numerical("inversion produced non-finite values".into()));
    }
    Ok(x)
}

/// `F_inv`: invert a data point to `target_t` under `cond`.
pub fn ddim_invert<P: NoisePredictor + ?Sized>(
    x0: [f64; 2],
    target_t: usize,
    cond: Condition,
    model: &P,
    sched: &NoiseSchedule,
) -> Result<LatentState> {
    let out = invert_batch(model, sched, Matrix::row_vector(&x0), target_t, &[cond])?;
    Ok(LatentState {
        x: [out[(0, 0)], out[(0, 1)]],
        t: target_t,
        cond,
    })
}

fn draw_prior(n: usize, rng: &mut Rng) -> Matrix {
    Matrix::from_vec(n, 2, (0..2 * n).map(|_| rng.normal()).collect()).expect("shape")
}

/// `n` samples from `x_T ~ N(0, I)`: steps leaving `t > t_e` use `∅`, the
/// remaining steps use `cond` (with guidance `cfg_scale`).
pub fn two_stage_sample_batch<P: NoisePredictor + ?Sized>(
    n: usize,
    t_e: usize,
    cond: Condition,
    model: &P,
    sched: &NoiseSchedule,
    rng: &mut Rng,
    cfg_scale: f64,
) -> Result<Matrix> {
    sched.check_t(t_e)?;
    let x_t = draw_prior(n, rng);
    decode_with(model, sched, x_t, sched.t_max(), cfg_scale, rng, |t| {
        vec![if t > t_e { Condition::Null } else { cond }; n]
    })
}

pub fn two_stage_sample<P: NoisePredictor + ?Sized>(
    t_e: usize,
    cond: Condition,
    model: &P,
    sched: &NoiseSchedule,
    rng: &mut Rng,
    cfg_scale: f64,
) -> Result<[f64; 2]> {
    let out = two_stage_sample_batch(1, t_e, cond, model, sched, rng, cfg_scale)?;
    Ok([out[(0, 0)], out[(0, 1)]])
}

/// Ordinary sampling with a fixed condition from `x_T ~ N(0, I)`.
pub fn sample_batch<P: NoisePredictor + ?Sized>(
    n: usize,
    cond: Condition,
    model: &P,
    sched: &NoiseSchedule,
    rng: &mut Rng,
    cfg_scale: f64,
) -> Result<Matrix> {
    let x_t = draw_prior(n, rng);
    decode_batch(model, sched, x_t, sched.t_max(), &vec![cond; n], cfg_scale, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Predicts a fixed noise vector everywhere.
    struct ConstantNoise([f64; 2]);

    impl NoisePredictor for ConstantNoise {
        fn predict(&self, x: &Matrix, _t: usize, _c: &[Condition]) -> Result<Matrix> {
            let mut m = Matrix::zeros(x.rows(), 2);
            for i in 0..x.rows() {
                m.row_mut(i).copy_from_slice(&self.0);
            }
            Ok(m)
        }
    }

    /// Returns different predictions for conditional and null rows.
    struct SplitNoise;

    impl NoisePredictor for SplitNoise {
        fn predict(&self, x: &Matrix, _t: usize, conds: &[Condition]) -> Result<Matrix> {
            let mut m = Matrix::zeros(x.rows(), 2);
            for (i, c) in conds.iter().enumerate() {
                let v = if *c == Condition::Null { [0.1, 0.0] } else { [0.3, -0.2] };
                m.row_mut(i).copy_from_slice(&v);
            }
            Ok(m)
        }
    }

    #[test]
    fn decode_from_zero_is_identity() {
        let s = NoiseSchedule::toy_default();
        let st = LatentState {
            x: [1.5, -2.0],
            t: 0,
            cond: Condition::Class(1),
        };
        assert_eq!(ddim_decode(&st, &ConstantNoise([0.3, 0.3]), &s, 1.0, &mut Rng::new(0)).unwrap(), st.x);
    }

    #[test]
    fn single_step_recovers_x0_with_exact_noise() {
        // One DDIM step from t = stride straight to 0.
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02, 100, 0.0).unwrap();
        let eps = [0.7, -1.3];
        let x0 = [4.0, 0.1];
        let xt = super::super::schedule::q_sample(x0, 10, eps, &s).unwrap();
        let st = LatentState {
            x: xt,
            t: 10,
            cond: Condition::Class(1),
        };
        let out = ddim_decode(&st, &ConstantNoise(eps), &s, 1.0, &mut Rng::new(0)).unwrap();
        assert!((out[0] - x0[0]).abs() < 1e-12 && (out[1] - x0[1]).abs() < 1e-12);
    }

    #[test]
    fn zero_noise_inversion_is_closed_form_scaling() {
        let s = NoiseSchedule::toy_default();
        let st = ddim_invert([4.0, 0.2], 800, Condition::Class(1), &ConstantNoise([0.0, 0.0]), &s).unwrap();
        let a = s.alpha_bar(800).sqrt();
        assert!((st.x[0] - 4.0 * a).abs() < 1e-10);
        assert!((st.x[1] - 0.2 * a).abs() < 1e-10);
    }

    #[test]
    fn invert_to_zero_is_identity() {
        let s = NoiseSchedule::toy_default();
        let st = ddim_invert([0.3, -0.1], 0, Condition::Null, &SplitNoise, &s).unwrap();
        assert_eq!(st.x, [0.3, -0.1]);
    }

    #[test]
    fn inversion_needs_deterministic_schedule() {
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02, 100, 0.5).unwrap();
        let r = ddim_invert([0.0, 0.0], 100, Condition::Null, &ConstantNoise([0.0, 0.0]), &s);
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn guidance_endpoints() {
        let x = Matrix::from_rows(&[[0.0, 0.0], [1.0, 1.0]]).unwrap();
        let conds = [Condition::Class(1), Condition::Null];
        let plain = SplitNoise.predict(&x, 5, &conds).unwrap();
        assert_eq!(guided_noise(&SplitNoise, &x, 5, &conds, 1.0).unwrap(), plain);
        let uncond = guided_noise(&SplitNoise, &x, 5, &conds, 0.0).unwrap();
        assert_eq!(uncond.row(0), &[0.1, 0.0]);
        let g3 = guided_noise(&SplitNoise, &x, 5, &conds, 3.0).unwrap();
        assert!((g3[(0, 0)] - 0.7).abs() < 1e-12 && (g3[(0, 1)] + 0.6).abs() < 1e-12);
        assert_eq!(g3.row(1), &[0.1, 0.0]);
        assert!(guided_noise(&SplitNoise, &x, 5, &conds, -1.0).is_err());
    }

    #[test]
    fn two_stage_endpoints() {
        let s = NoiseSchedule::toy_default();
        let c = Condition::Class(1);
        let full = two_stage_sample_batch(4, 1000, c, &SplitNoise, &s, &mut Rng::new(3), 1.0).unwrap();
        let cond = sample_batch(4, c, &SplitNoise, &s, &mut Rng::new(3), 1.0).unwrap();
        assert_eq!(full, cond);
        let none = two_stage_sample_batch(4, 0, c, &SplitNoise, &s, &mut Rng::new(3), 1.0).unwrap();
        let uncond = sample_batch(4, Condition::Null, &SplitNoise, &s, &mut Rng::new(3), 1.0).unwrap();
        assert_eq!(none, uncond);
        assert_ne!(full, none);
    }

    #[test]
    fn stochastic_decode_uses_rng() {
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02, 100, 1.0).unwrap();
        let st = LatentState {
            x: [0.5, 0.5],
            t: 500,
            cond: Condition::Class(0),
        };
        let a = ddim_decode(&st, &SplitNoise, &s, 1.0, &mut Rng::new(1)).unwrap();
        let b = ddim_decode(&st, &SplitNoise, &s, 1.0, &mut Rng::new(2)).unwrap();
        assert_ne!(a, b);
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Variance schedule and DDIM step grid.
///
/// `alpha_bar(t) = ∏_{k<=t} (1 - beta_k)` for `t` in `1..=t_max`, with
/// `alpha_bar(0) = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    t_max: usize,
    /// `beta[t - 1]` is β_t.
    beta: Vec<f64>,
    /// `alpha_bar[t]`, length `t_max + 1`.
    alpha_bar: Vec<f64>,
    pub ddim_eta: f64,
    pub ddim_steps: usize,
}

impl NoiseSchedule {
    pub fn from_betas(beta: Vec<f64>, ddim_steps: usize, ddim_eta: f64) -> Result<Self> {
        if beta.is_empty() {
            return invalid("schedule needs at least one step");
        }
        if beta.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return invalid("every beta must lie in (0, 1)");
        }
        if beta.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("betas must be strictly increasing");
        }
        let t_max = beta.len();
        if ddim_steps == 0 || ddim_steps > t_max {
            return invalid(format!("ddim_steps must be in 1..={t_max}, got {ddim_steps}"));
        }
        if !(ddim_eta >= 0.0) {
            return invalid("ddim eta must be non-negative");
        }
        let mut alpha_bar = Vec::with_capacity(t_max + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for b in &beta {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        Ok(Self {
            t_max,
            beta,
            alpha_bar,
            ddim_eta,
            ddim_steps,
        })
    }

    /// Betas spaced linearly from `beta_start` to `beta_end`.
    pub fn linear(t_max: usize, beta_start: f64, beta_end: f64, ddim_steps: usize, ddim_eta: f64) -> Result<Self> {
        if t_max == 0 {
            return invalid("t_max must be at least 1");
        }
        let beta = if t_max == 1 {
            vec![beta_start]
        } else {
            (0..t_max)
                .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (t_max - 1) as f64)
                .collect()
        };
        Self::from_betas(beta, ddim_steps, ddim_eta)
    }

    /// Linear 1e-4..0.02 over 1000 steps, 100 deterministic DDIM steps.
    pub fn toy_default() -> Self {
        Self::linear(1000, 1e-4, 0.02, 100, 0.0).expect("valid default schedule")
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t > self.t_max {
            return invalid(format!("timestep {t} exceeds t_max {}", self.t_max));
        }
        Ok(())
    }

    /// Spacing of the DDIM grid `{0, stride, 2 stride, ...}`.
    pub fn stride(&self) -> usize {
        self.t_max.div_ceil(self.ddim_steps)
    }

    /// Next grid time strictly below `t` (`t >= 1`).
    pub fn prev_step(&self, t: usize) -> usize {
        let s = self.stride();
        ((t - 1) / s) * s
    }

    /// Decode times from `t` down to 0: `[t, prev(t), ..., 0]`.
    pub fn decode_times(&self, t: usize) -> Vec<usize> {
        let mut times = vec![t];
        let mut cur = t;
        while cur > 0 {
            cur = self.prev_step(cur);
            times.push(cur);
        }
        times
    }

    /// Inversion times from 0 up to `target`: the reverse of `decode_times(target)`.
    pub fn invert_times(&self, target: usize) -> Vec<usize> {
        let mut times = self.decode_times(target);
        times.reverse();
        times
    }

    /// DDIM noise scale for a step `t -> s`.
    pub fn xi(&self, t: usize, s: usize) -> f64 {
        if self.ddim_eta == 0.0 {
            return 0.0;
        }
        let (at, as_) = (self.alpha_bar(t), self.alpha_bar(s));
        self.ddim_eta * ((1.0 - as_) / (1.0 - at)).sqrt() * (1.0 - at / as_).sqrt()
    }
}

/// Closed-form forward diffusion `√ᾱ_t x0 + √(1-ᾱ_t) eps`.
pub fn q_sample(x0: [f64; 2], t: usize, eps: [f64; 2], sched: &NoiseSchedule) -> Result<[f64; 2]> {
    if t == 0 || t > sched.t_max() {
        return invalid(format!("q_sample timestep {t} outside 1..={}", sched.t_max()));
    }
    let a = sched.alpha_bar(t);
    let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
    Ok([sa * x0[0] + sn * eps[0], sa * x0[1] + sn * eps[1]])
}

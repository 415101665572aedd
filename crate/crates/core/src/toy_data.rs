//! Two-class hierarchical 2D generative process.
//!
//! `y ~ Bernoulli(1/2)`, `u ~ U(-0.1, 0.1)`, `eps ~ N(0, 0.01 I)`;
//! `x = (u, 0) + s(y) + eps + (3|eps_y|, 0)` with `s(0) = (0, 0)` and
//! `s(1) = (4, 0)`. The class core is the segment
//! `{(x1, 0) | 4y - 0.1 <= x1 <= 4y + 0.1}`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::numerics::{Matrix, Rng};

pub const NUM_CLASSES: usize = 2;
pub const CORE_HALF_WIDTH: f64 = 0.1;
pub const NOISE_STD: f64 = 0.1;
pub const CLASS_SHIFT: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub x: [f64; 2],
    pub y: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyDataset {
    pub seed: u64,
    pub samples: Vec<LabeledSample>,
}

/// Deterministic map from the latent draws to an observed point.
pub fn generate_point(y: usize, u: f64, eps: [f64; 2]) -> [f64; 2] {
    let shift = CLASS_SHIFT * y as f64;
    [u + shift + eps[0] + 3.0 * eps[1].abs(), eps[1]]
}

fn draw(rng: &mut Rng) -> LabeledSample {
    let y = usize::from(rng.bernoulli(0.5));
    let u = rng.uniform_range(-CORE_HALF_WIDTH, CORE_HALF_WIDTH);
    let eps = [NOISE_STD * rng.normal(), NOISE_STD * rng.normal()];
    LabeledSample {
        x: generate_point(y, u, eps),
        y,
    }
}

/// Draws `n` samples from `rng`. The dataset records `rng.seed()`; the same
/// stream always reproduces the same samples.
pub fn sample_dataset(n: usize, rng: &mut Rng) -> Result<ToyDataset> {
    if n == 0 {
        return invalid("dataset size must be at least 1");
    }
    let samples = (0..n).map(|_| draw(rng)).collect();
    Ok(ToyDataset {
        seed: rng.seed(),
        samples,
    })
}

/// Euclidean distance from `x` to the core segment of class `y`.
pub fn distance_to_core_segment(x: [f64; 2], y: usize) -> Result<f64> {
    if y >= NUM_CLASSES {
        return invalid(format!("class id {y} out of range"));
    }
    let center = CLASS_SHIFT * y as f64;
    let foot = x[0].clamp(center - CORE_HALF_WIDTH, center + CORE_HALF_WIDTH);
    Ok(((x[0] - foot).powi(2) + x[1].powi(2)).sqrt())
}

/// Bayes-optimal decision for the toy model.
pub fn bayes_rule(x: [f64; 2]) -> usize {
    usize::from(x[0] > 0.5 * CLASS_SHIFT)
}

impl ToyDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn points(&self) -> Matrix {
        let data = self.samples.iter().flat_map(|s| s.x).collect();
        Matrix::from_vec(self.samples.len(), 2, data).expect("2 columns per sample")
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.y).collect()
    }

    pub fn of_class(&self, y: usize) -> impl Iterator<Item = (usize, &LabeledSample)> {
        self.samples.iter().enumerate().filter(move |(_, s)| s.y == y)
    }

    /// `x1,x2,label` with six decimals.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x1,x2,label")?;
        for s in &self.samples {
            writeln!(w, "{:.6},{:.6},{}", s.x[0], s.x[1], s.y)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forced_draws() {
        assert_eq!(generate_point(1, 0.0, [0.0, 0.0]), [4.0, 0.0]);
        let x = generate_point(1, 0.1, [0.0, 0.1]);
        assert!((x[0] - 4.4).abs() < 1e-12);
        assert_eq!(x[1], 0.1);
    }

    #[test]
    fn zero_noise_lies_on_segment() {
        let mut rng = Rng::new(5);
        for _ in 0..1000 {
            let u = rng.uniform_range(-0.1, 0.1);
            for y in 0..2 {
                let x = generate_point(y, u, [0.0, 0.0]);
                assert_eq!(distance_to_core_segment(x, y).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn segment_distance_cases() {
        assert_eq!(distance_to_core_segment([4.05, 0.0], 1).unwrap(), 0.0);
        assert!((distance_to_core_segment([4.0, 0.2], 1).unwrap() - 0.2).abs() < 1e-12);
        assert!((distance_to_core_segment([4.3, 0.0], 1).unwrap() - 0.2).abs() < 1e-12);
        assert!(distance_to_core_segment([0.0, 0.0], 2).is_err());
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(sample_dataset(0, &mut Rng::new(1)).is_err());
    }

    #[test]
    fn deterministic_regeneration() {
        let a = sample_dataset(100, &mut Rng::new(9)).unwrap();
        let b = sample_dataset(100, &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empirical_marginals() {
        let d = sample_dataset(10_000, &mut Rng::new(21)).unwrap();
        let ones: Vec<_> = d.of_class(1).map(|(_, s)| s.x).collect();
        let frac = ones.len() as f64 / d.len() as f64;
        assert!((frac - 0.5).abs() <= 0.02, "class-1 fraction {frac}");
        let mean_x2 = ones.iter().map(|x| x[1]).sum::<f64>() / ones.len() as f64;
        assert!(mean_x2.abs() < 0.01, "class-1 mean x2 {mean_x2}");
        let all_x2: Vec<f64> = d.samples.iter().map(|s| s.x[1]).collect();
        let m = all_x2.iter().sum::<f64>() / all_x2.len() as f64;
        let sd = (all_x2.iter().map(|v| (v - m).powi(2)).sum::<f64>() / all_x2.len() as f64).sqrt();
        assert!((sd - 0.1).abs() <= 0.01, "x2 std {sd}");
    }

    #[test]
    fn csv_has_fixed_decimals() {
        let d = ToyDataset {
            seed: 0,
            samples: vec![LabeledSample { x: [4.0, -0.1234567], y: 1 }],
        };
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "x1,x2,label\n4.000000,-0.123457,1\n");
    }
}

use serde::{Deserialize, Serialize};

use crate::diffusion::{two_stage_sample_batch, CdmModel, Condition, NoiseSchedule};
use crate::error::{invalid, Result};
use crate::numerics::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeSearchReport {
    pub grid: Vec<usize>,
    /// Fraction of two-stage samples the rule assigns to their condition.
    pub accuracy: Vec<f64>,
    pub chosen: usize,
    pub tol: f64,
    pub m: usize,
}

/// `{T/10, 2T/10, ..., T}`.
pub fn default_grid(t_max: usize) -> Vec<usize> {
    (1..=10).map(|i| i * t_max / 10).collect()
}

/// Largest grid point whose accuracy is within `tol` of the best.
pub fn saturation_point(grid: &[usize], accuracy: &[f64], tol: f64) -> Result<usize> {
    if grid.is_empty() || grid.len() != accuracy.len() {
        return invalid("grid and accuracy must be non-empty and equally long");
    }
    let best = accuracy.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let idx = accuracy
        .iter()
        .rposition(|&a| a >= best - tol)
        .expect("the maximum itself qualifies");
    Ok(grid[idx])
}

/// Scores two-stage samples (`∅` above `t_e`, class below) with
/// `classifier` for every candidate `t_e`. Each class reuses the same prior
/// draws across candidates, so the curve varies only with `t_e`.
#[allow(clippy::too_many_arguments)]
pub fn find_te(
    model: &CdmModel,
    sched: &NoiseSchedule,
    classifier: &(dyn Fn([f64; 2]) -> usize + Sync),
    grid: &[usize],
    m: usize,
    rng: &Rng,
    tol: f64,
    cfg_scale: f64,
) -> Result<TeSearchReport> {
    if grid.is_empty() {
        return invalid("t_e grid is empty");
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return invalid("t_e grid must be strictly ascending");
    }
    if m == 0 {
        return invalid("m must be at least 1");
    }
    let classes = model.arch.num_classes;
    use rayon::prelude::*;
    let accuracy = grid
        .par_iter()
        .map(|&t_e| -> Result<f64> {
            let mut correct = 0usize;
            for c in 0..classes {
                let mut class_rng = rng.split(c as u64);
                let xs = two_stage_sample_batch(m, t_e, Condition::Class(c), model, sched, &mut class_rng, cfg_scale)?;
                correct += (0..m).filter(|&i| classifier([xs[(i, 0)], xs[(i, 1)]]) == c).count();
            }
            Ok(correct as f64 / (m * classes) as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    let chosen = saturation_point(grid, &accuracy, tol)?;
    Ok(TeSearchReport {
        grid: grid.to_vec(),
        accuracy,
        chosen,
        tol,
        m,
    })
}

impl TeSearchReport {
    /// `t_e,accuracy` rows with six decimals.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t_e,accuracy\n");
        for (t, a) in self.grid.iter().zip(&self.accuracy) {
            s.push_str(&format!("{t},{a:.6}\n"));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saturation_rule() {
        let grid = [200, 400, 600, 800, 1000];
        assert_eq!(saturation_point(&grid, &[0.5, 0.8, 0.95, 0.96, 0.95], 0.02).unwrap(), 1000);
        assert_eq!(saturation_point(&grid, &[0.7; 5], 0.02).unwrap(), 1000);
        assert_eq!(saturation_point(&grid, &[0.5, 0.99, 0.9, 0.8, 0.5], 0.02).unwrap(), 400);
        assert!(saturation_point(&[], &[], 0.02).is_err());
    }

    #[test]
    fn default_grid_spans_schedule() {
        assert_eq!(default_grid(1000), vec![100, 200, 300, 400, 500, 600, 700, 800, 900, 1000]);
    }

    #[test]
    fn empty_grid_rejected() {
        let model = CdmModel::new(Default::default(), &mut Rng::new(0));
        let sched = NoiseSchedule::toy_default();
        let rule = |x: [f64; 2]| usize::from(x[0] > 2.0);
        assert!(find_te(&model, &sched, &rule, &[], 5, &Rng::new(0), 0.02, 1.0).is_err());
    }
}

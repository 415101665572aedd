use serde::{Deserialize, Serialize};

use super::losses::cross_entropy_tape;
use super::student::{argmax_rows, StudentModel};
use crate::error::{invalid, Result};
use crate::numerics::{Matrix, Rng, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// L∞ radius.
    pub epsilon: f64,
    pub steps: usize,
    pub step_size: f64,
    pub random_start: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            steps: 5,
            step_size: 0.05,
            random_start: true,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || self.steps == 0 || !(self.step_size > 0.0) {
            return invalid(format!("invalid attack config {self:?}"));
        }
        Ok(())
    }
}

/// Anything that scores 2D inputs and exposes the input gradient of its
/// summed cross-entropy.
pub trait Classifier {
    fn logits(&self, x: &Matrix) -> Result<Matrix>;

    fn loss_input_grad(&self, x: &Matrix, labels: &[usize]) -> Result<Matrix>;

    fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(x)?))
    }
}

impl Classifier for StudentModel {
    fn logits(&self, x: &Matrix) -> Result<Matrix> {
        StudentModel::logits(self, x)
    }

    fn loss_input_grad(&self, x: &Matrix, labels: &[usize]) -> Result<Matrix> {
        let mut tape = Tape::new();
        let vars = self.constants(&mut tape);
        let xv = tape.leaf(x.clone());
        let (_, logits) = vars.forward(&mut tape, xv);
        let loss = cross_entropy_tape(&mut tape, logits, labels)?;
        let g = tape.backward(loss)?.get(xv);
        // The mean over rows only rescales each row's gradient.
        Ok(g.scale(labels.len() as f64))
    }
}

/// The toy Bayes rule `x₁ > 2` as a classifier with logits
/// `±sharpness (x₁ − 2)`.
#[derive(Debug, Clone, Copy)]
pub struct BayesRule {
    pub sharpness: f64,
}

impl Classifier for BayesRule {
    fn logits(&self, x: &Matrix) -> Result<Matrix> {
        let mut out = Matrix::zeros(x.rows(), 2);
        for i in 0..x.rows() {
            let s = self.sharpness * (x[(i, 0)] - 2.0);
            out.row_mut(i).copy_from_slice(&[-s, s]);
        }
        Ok(out)
    }

    fn loss_input_grad(&self, x: &Matrix, labels: &[usize]) -> Result<Matrix> {
        let logits = self.logits(x)?;
        let mut g = Matrix::zeros(x.rows(), x.cols());
        for i in 0..x.rows() {
            // d/dx₁ of CE with logits (−s, s): (p₁ − [y = 1]) · 2·sharpness.
            let p1 = 1.0 / (1.0 + (logits[(i, 0)] - logits[(i, 1)]).exp());
            let y1 = if labels[i] == 1 { 1.0 } else { 0.0 };
            g.data_mut()[i * x.cols()] = 2.0 * self.sharpness * (p1 - y1);
        }
        Ok(g)
    }

    fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        Ok((0..x.rows()).map(|i| usize::from(x[(i, 0)] > 2.0)).collect())
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// L∞ PGD: optional uniform start in the ε-ball, then signed-gradient ascent
/// on the cross-entropy, projecting back onto the ball after every step.
pub fn pgd_attack<C: Classifier + ?Sized>(
    clf: &C,
    x: &Matrix,
    labels: &[usize],
    atk: &AttackConfig,
    rng: &mut Rng,
) -> Result<Matrix> {
    atk.validate()?;
    if labels.len() != x.rows() {
        return invalid("one label per row required");
    }
    let eps = atk.epsilon;
    let mut adv = x.clone();
    if atk.random_start {
        adv.data_mut().iter_mut().for_each(|v| *v += rng.uniform_range(-eps, eps));
    }
    for _ in 0..atk.steps {
        let g = clf.loss_input_grad(&adv, labels)?;
        for ((a, &gi), &x0) in adv.data_mut().iter_mut().zip(g.data()).zip(x.data()) {
            *a = (*a + atk.step_size * sign(gi)).clamp(x0 - eps, x0 + eps);
        }
    }
    Ok(adv)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub n: usize,
    pub clean_accuracy: f64,
    pub robust_accuracy: Option<f64>,
    pub attack: Option<AttackConfig>,
}

fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    pred.iter().zip(labels).filter(|(p, y)| p == y).count() as f64 / labels.len() as f64
}

pub fn evaluate<C: Classifier + ?Sized>(
    model_name: &str,
    clf: &C,
    x: &Matrix,
    labels: &[usize],
    atk: Option<&AttackConfig>,
    rng: &mut Rng,
) -> Result<MetricsReport> {
    if labels.is_empty() || labels.len() != x.rows() {
        return invalid("evaluation needs one label per row and at least one row");
    }
    let clean_accuracy = accuracy(&clf.predict(x)?, labels);
    let robust_accuracy = match atk {
        Some(a) => {
            let adv = pgd_attack(clf, x, labels, a, rng)?;
            Some(accuracy(&clf.predict(&adv)?, labels))
        }
        None => None,
    };
    Ok(MetricsReport {
        model: model_name.to_string(),
        n: labels.len(),
        clean_accuracy,
        robust_accuracy,
        attack: atk.copied(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fgsm_collapse_on_bayes_rule() {
        let clf = BayesRule { sharpness: 1.0 };
        let x = Matrix::from_rows(&[[2.05, 0.0], [1.9, 0.3]]).unwrap();
        let atk = AttackConfig {
            epsilon: 0.1,
            steps: 1,
            step_size: 0.1,
            random_start: false,
        };
        let adv = pgd_attack(&clf, &x, &[1, 0], &atk, &mut Rng::new(0)).unwrap();
        assert!((adv[(0, 0)] - 1.95).abs() < 1e-12);
        assert!((adv[(1, 0)] - 2.0).abs() < 1e-12);
        assert_eq!(adv[(0, 1)], 0.0);
        assert_eq!(clf.predict(&adv).unwrap(), vec![0, 0]);
    }

    #[test]
    fn bayes_rule_is_perfect_on_core_points() {
        let x = Matrix::from_rows(&[[-0.1, 0.0], [0.1, 0.0], [3.9, 0.0], [4.1, 0.0]]).unwrap();
        let r = evaluate("bayes", &BayesRule { sharpness: 1.0 }, &x, &[0, 0, 1, 1], None, &mut Rng::new(0)).unwrap();
        assert_eq!(r.clean_accuracy, 1.0);
        assert_eq!(r.robust_accuracy, None);
    }

    #[test]
    fn student_gradient_matches_finite_difference() {
        let s = StudentModel::new(Default::default(), &mut Rng::new(4));
        let x = Matrix::from_rows(&[[0.3, -0.2], [3.7, 0.4]]).unwrap();
        let labels = [0, 1];
        let g = s.loss_input_grad(&x, &labels).unwrap();
        let f = |m: &Matrix| crate::cadistill::cross_entropy(&s.logits(m).unwrap(), &labels).unwrap() * 2.0;
        let h = 1e-6;
        for k in 0..4 {
            let mut p = x.clone();
            p.data_mut()[k] += h;
            let mut q = x.clone();
            q.data_mut()[k] -= h;
            let fd = (f(&p) - f(&q)) / (2.0 * h);
            assert!((fd - g.data()[k]).abs() <= 1e-6 * (1.0 + fd.abs()), "{fd} vs {}", g.data()[k]);
        }
    }
}

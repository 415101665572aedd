//! Dense layers shared by the denoiser and the student.

use serde::{Deserialize, Serialize};

use crate::numerics::tape::silu;
use crate::numerics::{Matrix, Rng, Tape, Var};

/// `y = x W + b`, with `W: in x out` and `b: 1 x out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub w: Matrix,
    pub b: Matrix,
}

impl Linear {
    /// Weights and biases uniform in `±1/√fan_in`.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = Matrix::from_vec(
            fan_in,
            fan_out,
            (0..fan_in * fan_out).map(|_| rng.uniform_range(-bound, bound)).collect(),
        )
        .expect("shape");
        let b = Matrix::from_vec(1, fan_out, (0..fan_out).map(|_| rng.uniform_range(-bound, bound)).collect())
            .expect("shape");
        Self { w, b }
    }

    pub fn fan_in(&self) -> usize {
        self.w.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.w.cols()
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        x.matmul(&self.w).add_row_broadcast(&self.b)
    }

    /// Registers `w` and `b` as leaves.
    pub fn leaves(&self, tape: &mut Tape) -> LinearVars {
        LinearVars {
            w: tape.leaf(self.w.clone()),
            b: tape.leaf(self.b.clone()),
        }
    }

    pub fn params_mut(&mut self) -> [&mut Matrix; 2] {
        [&mut self.w, &mut self.b]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LinearVars {
    pub w: Var,
    pub b: Var,
}

impl LinearVars {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let xw = tape.matmul(x, self.w);
        tape.add_row(xw, self.b)
    }
}

pub fn silu_matrix(m: &Matrix) -> Matrix {
    m.map(silu)
}

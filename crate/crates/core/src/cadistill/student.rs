use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, NamedTensor};
use crate::error::{invalid, Result};
use crate::nn::{silu_matrix, Linear, LinearVars};
use crate::numerics::{Matrix, Rng, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudentArch {
    pub input_dim: usize,
    pub hidden: usize,
    pub num_classes: usize,
}

impl Default for StudentArch {
    fn default() -> Self {
        Self {
            input_dim: 2,
            hidden: 64,
            num_classes: 2,
        }
    }
}

/// `input → hidden → hidden → logits` with SiLU; the second hidden layer is
/// the feature layer.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentModel {
    pub arch: StudentArch,
    pub layers: [Linear; 3],
}

#[derive(Debug, Clone, Copy)]
pub struct StudentVars {
    pub layers: [LinearVars; 3],
}

impl StudentVars {
    pub fn all(&self) -> [Var; 6] {
        let [a, b, c] = self.layers;
        [a.w, a.b, b.w, b.b, c.w, c.b]
    }
}

const TENSOR_NAMES: [&str; 6] = ["l0.w", "l0.b", "l1.w", "l1.b", "l2.w", "l2.b"];

impl StudentModel {
    pub fn new(arch: StudentArch, rng: &mut Rng) -> Self {
        Self {
            arch,
            layers: [
                Linear::init(arch.input_dim, arch.hidden, rng),
                Linear::init(arch.hidden, arch.hidden, rng),
                Linear::init(arch.hidden, arch.num_classes, rng),
            ],
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.arch.hidden
    }

    /// `(features, logits)` for each row of `x`.
    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, Matrix)> {
        if x.cols() != self.arch.input_dim {
            return invalid(format!("student expects {} inputs, got {}", self.arch.input_dim, x.cols()));
        }
        let h0 = silu_matrix(&self.layers[0].forward(x));
        let h1 = silu_matrix(&self.layers[1].forward(&h0));
        let logits = self.layers[2].forward(&h1);
        Ok((h1, logits))
    }

    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward(x)?.1)
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(x)?))
    }

    pub fn leaves(&self, tape: &mut Tape) -> StudentVars {
        StudentVars {
            layers: [
                self.layers[0].leaves(tape),
                self.layers[1].leaves(tape),
                self.layers[2].leaves(tape),
            ],
        }
    }

    /// Parameters recorded as constants, for gradients with respect to the
    /// input only.
    pub fn constants(&self, tape: &mut Tape) -> StudentVars {
        let lin = |tape: &mut Tape, l: &Linear| LinearVars {
            w: tape.constant(l.w.clone()),
            b: tape.constant(l.b.clone()),
        };
        StudentVars {
            layers: [
                lin(tape, &self.layers[0]),
                lin(tape, &self.layers[1]),
                lin(tape, &self.layers[2]),
            ],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn params_finite(&self) -> bool {
        self.layers.iter().all(|l| l.w.is_finite() && l.b.is_finite())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mats = self.layers.iter().flat_map(|l| [&l.w, &l.b]);
        Checkpoint::new(
            "student",
            serde_json::to_value(self.arch).expect("arch serializes"),
            TENSOR_NAMES.iter().zip(mats).map(|(n, m)| NamedTensor::from_matrix(n, m)).collect(),
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind("student")?;
        let arch: StudentArch = serde_json::from_value(ck.arch.clone())?;
        let mut model = StudentModel::new(arch, &mut Rng::new(0));
        for (name, slot) in TENSOR_NAMES.iter().zip(model.params_mut()) {
            let m = ck.tensor(name)?;
            if m.shape() != slot.shape() {
                return invalid(format!("tensor {name} has shape {:?}, expected {:?}", m.shape(), slot.shape()));
            }
            *slot = m;
        }
        Ok(model)
    }
}

impl StudentVars {
    /// `(features, logits)` on the tape.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> (Var, Var) {
        let p0 = self.layers[0].forward(tape, x);
        let h0 = tape.silu(p0);
        let p1 = self.layers[1].forward(tape, h0);
        let h1 = tape.silu(p1);
        let logits = self.layers[2].forward(tape, h1);
        (h1, logits)
    }
}

/// Index of the largest entry per row; the first wins ties.
pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    (0..m.rows())
        .map(|i| {
            m.row(i)
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (j, &v)| if v > best.1 { (j, v) } else { best })
                .0
        })
        .collect()
}

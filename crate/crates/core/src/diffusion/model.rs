//! Conditional MLP noise predictor.
//!
//! Input row: `[x (2), time embedding (E), label embedding (E)]`, then two
//! SiLU hidden layers of width `H` and a linear head back to 2 dimensions.
//! Label index `num_classes` is the null condition.

use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, NamedTensor};
use crate::error::{invalid, Error, Result};
use crate::nn::{silu_matrix, Linear, LinearVars};
use crate::numerics::tape::silu_derivative;
use crate::numerics::{Matrix, Rng, Tape, Var};

pub const DATA_DIM: usize = 2;

/// Class condition or the null condition `∅`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Condition {
    Class(usize),
    Null,
}

impl Condition {
    pub fn class(self) -> Option<usize> {
        match self {
            Condition::Class(c) => Some(c),
            Condition::Null => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CdmArch {
    pub hidden: usize,
    pub embed_dim: usize,
    pub num_classes: usize,
    pub t_max: usize,
}

impl Default for CdmArch {
    fn default() -> Self {
        Self {
            hidden: 80,
            embed_dim: 16,
            num_classes: 2,
            t_max: 1000,
        }
    }
}

impl CdmArch {
    pub fn input_width(&self) -> usize {
        DATA_DIM + 2 * self.embed_dim
    }

    pub const NUM_HIDDEN_LAYERS: usize = 2;
}

#[derive(Debug, Clone, PartialEq)]
pub struct CdmModel {
    pub arch: CdmArch,
    pub layers: [Linear; 3],
    /// `(num_classes + 1) x embed_dim`; the last row embeds `∅`.
    pub label_embedding: Matrix,
}

/// Sinusoidal embedding of an integer timestep: sines then cosines over
/// geometrically spaced frequencies.
pub fn timestep_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        out[i] = arg.sin();
        out[half + i] = arg.cos();
    }
    out
}

/// Hidden pre- and post-activations from one forward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    pub pre: [Matrix; 2],
    pub hidden: [Matrix; 2],
    pub output: Matrix,
}

/// Tape handles for the model parameters.
#[derive(Debug, Clone, Copy)]
pub struct CdmVars {
    pub layers: [LinearVars; 3],
    pub label_embedding: Var,
}

impl CdmVars {
    pub fn all(&self) -> [Var; 7] {
        [
            self.layers[0].w,
            self.layers[0].b,
            self.layers[1].w,
            self.layers[1].b,
            self.layers[2].w,
            self.layers[2].b,
            self.label_embedding,
        ]
    }
}

impl CdmModel {
    pub fn new(arch: CdmArch, rng: &mut Rng) -> Self {
        let layers = [
            Linear::init(arch.input_width(), arch.hidden, rng),
            Linear::init(arch.hidden, arch.hidden, rng),
            Linear::init(arch.hidden, DATA_DIM, rng),
        ];
        let rows = arch.num_classes + 1;
        let label_embedding =
            Matrix::from_vec(rows, arch.embed_dim, (0..rows * arch.embed_dim).map(|_| rng.normal()).collect())
                .expect("shape");
        Self {
            arch,
            layers,
            label_embedding,
        }
    }

    pub fn label_index(&self, cond: Condition) -> Result<usize> {
        match cond {
            Condition::Class(c) if c < self.arch.num_classes => Ok(c),
            Condition::Class(c) => invalid(format!("class {c} out of range")),
            Condition::Null => Ok(self.arch.num_classes),
        }
    }

    /// Embedding block `[temb | lemb]` for each row.
    fn conditioning(&self, ts: &[usize], conds: &[Condition]) -> Result<(Matrix, Vec<usize>)> {
        let e = self.arch.embed_dim;
        let mut temb = Matrix::zeros(ts.len(), e);
        for (i, &t) in ts.iter().enumerate() {
            if t > self.arch.t_max {
                return invalid(format!("timestep {t} exceeds model t_max {}", self.arch.t_max));
            }
            temb.row_mut(i).copy_from_slice(&timestep_embedding(t, e));
        }
        let idx = conds.iter().map(|&c| self.label_index(c)).collect::<Result<Vec<_>>>()?;
        Ok((temb, idx))
    }

    /// Inference forward pass for `x: n x 2`.
    pub fn forward(&self, x: &Matrix, ts: &[usize], conds: &[Condition]) -> Result<Activations> {
        if x.cols() != DATA_DIM || ts.len() != x.rows() || conds.len() != x.rows() {
            return invalid("forward: x, ts and conds must agree in length and x must be n x 2");
        }
        let (temb, idx) = self.conditioning(ts, conds)?;
        let input = x.hcat(&temb).hcat(&self.label_embedding.select_rows(&idx));
        let pre0 = self.layers[0].forward(&input);
        let h0 = silu_matrix(&pre0);
        let pre1 = self.layers[1].forward(&h0);
        let h1 = silu_matrix(&pre1);
        let output = self.layers[2].forward(&h1);
        Ok(Activations {
            pre: [pre0, pre1],
            hidden: [h0, h1],
            output,
        })
    }

    /// Predicted noise for each row.
    pub fn predict_noise(&self, x: &Matrix, t: usize, conds: &[Condition]) -> Result<Matrix> {
        Ok(self.forward(x, &vec![t; x.rows()], conds)?.output)
    }

    pub fn leaves(&self, tape: &mut Tape) -> CdmVars {
        CdmVars {
            layers: [
                self.layers[0].leaves(tape),
                self.layers[1].leaves(tape),
                self.layers[2].leaves(tape),
            ],
            label_embedding: tape.leaf(self.label_embedding.clone()),
        }
    }

    /// Differentiable forward pass; returns the `n x 2` noise prediction.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        vars: &CdmVars,
        x: Var,
        ts: &[usize],
        conds: &[Condition],
    ) -> Result<Var> {
        let (temb, idx) = self.conditioning(ts, conds)?;
        let temb = tape.constant(temb);
        let lemb = tape.gather_rows(vars.label_embedding, &idx);
        let input = tape.concat_cols(&[x, temb, lemb]);
        let pre0 = vars.layers[0].forward(tape, input);
        let h0 = tape.silu(pre0);
        let pre1 = vars.layers[1].forward(tape, h0);
        let h1 = tape.silu(pre1);
        Ok(vars.layers[2].forward(tape, h1))
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let [l0, l1, l2] = &mut self.layers;
        let mut out: Vec<&mut Matrix> = Vec::with_capacity(7);
        out.extend(l0.params_mut());
        out.extend(l1.params_mut());
        out.extend(l2.params_mut());
        out.push(&mut self.label_embedding);
        out
    }

    pub fn params_finite(&self) -> bool {
        self.layers.iter().all(|l| l.w.is_finite() && l.b.is_finite()) && self.label_embedding.is_finite()
    }

    fn check_layer(&self, layer: usize) -> Result<()> {
        if layer >= CdmArch::NUM_HIDDEN_LAYERS {
            return invalid(format!(
                "feature layer {layer} out of range (model has {} hidden layers)",
                CdmArch::NUM_HIDDEN_LAYERS
            ));
        }
        Ok(())
    }

    /// Post-activation hidden features of `layer` for each row.
    pub fn features(&self, x: &Matrix, t: usize, conds: &[Condition], layer: usize) -> Result<Matrix> {
        self.check_layer(layer)?;
        let mut acts = self.forward(x, &vec![t; x.rows()], conds)?;
        Ok(std::mem::replace(&mut acts.hidden[layer], Matrix::zeros(0, 0)))
    }

    /// Features of `layer` at a single point and their directional derivative
    /// along `v` with respect to the data coordinates.
    pub fn feature_jvp(
        &self,
        x: [f64; 2],
        t: usize,
        cond: Condition,
        layer: usize,
        v: [f64; 2],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_layer(layer)?;
        let acts = self.forward(&Matrix::row_vector(&x), &[t], &[cond])?;
        // Only the first two input columns depend on x.
        let w0 = &self.layers[0].w;
        let mut dpre: Vec<f64> = (0..self.arch.hidden).map(|j| v[0] * w0[(0, j)] + v[1] * w0[(1, j)]).collect();
        let mut dh: Vec<f64> = dpre
            .iter()
            .zip(acts.pre[0].row(0))
            .map(|(d, p)| d * silu_derivative(*p))
            .collect();
        for l in 1..=layer {
            let w = &self.layers[l].w;
            dpre = (0..w.cols()).map(|j| (0..w.rows()).map(|i| dh[i] * w[(i, j)]).sum()).collect();
            dh = dpre
                .iter()
                .zip(acts.pre[l].row(0))
                .map(|(d, p)| d * silu_derivative(*p))
                .collect();
        }
        if dh.iter().any(|d| !d.is_finite()) || acts.hidden[layer].row(0).iter().any(|h| !h.is_finite()) {
            return Err(Error::Numerical("non-finite activations in Jacobian".into()));
        }
        Ok((acts.hidden[layer].row(0).to_vec(), dh))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let names = ["l0.w", "l0.b", "l1.w", "l1.b", "l2.w", "l2.b", "label_embedding"];
        let mats = [
            &self.layers[0].w,
            &self.layers[0].b,
            &self.layers[1].w,
            &self.layers[1].b,
            &self.layers[2].w,
            &self.layers[2].b,
            &self.label_embedding,
        ];
        Checkpoint::new(
            "cdm",
            serde_json::to_value(self.arch).expect("arch serializes"),
            names.iter().zip(mats).map(|(n, m)| NamedTensor::from_matrix(n, m)).collect(),
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind("cdm")?;
        let arch: CdmArch = serde_json::from_value(ck.arch.clone())?;
        let mut model = CdmModel::new(arch, &mut Rng::new(0));
        let names = ["l0.w", "l0.b", "l1.w", "l1.b", "l2.w", "l2.b", "label_embedding"];
        for (name, slot) in names.iter().zip(model.params_mut()) {
            let m = ck.tensor(name)?;
            if m.shape() != slot.shape() {
                return invalid(format!("tensor {name} has shape {:?}, expected {:?}", m.shape(), slot.shape()));
            }
            *slot = m;
        }
        Ok(model)
    }
}

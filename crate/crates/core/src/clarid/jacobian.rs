use crate::diffusion::{CdmModel, Condition, LatentState};
use crate::error::{invalid, Error, Result};
use crate::numerics::Matrix;

/// A differentiable map from latent coordinates to a feature vector.
pub trait FeatureField {
    fn input_dim(&self) -> usize;

    /// Features at `x` and the directional derivative along `v`.
    fn features_and_jvp(&self, x: &[f64], v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)>;
}

/// Hidden-layer features of the denoiser at a fixed timestep and condition.
pub struct DenoiserFeatures<'a> {
    pub model: &'a CdmModel,
    pub t: usize,
    pub cond: Condition,
    pub layer: usize,
}

impl FeatureField for DenoiserFeatures<'_> {
    fn input_dim(&self) -> usize {
        2
    }

    fn features_and_jvp(&self, x: &[f64], v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.model
            .feature_jvp([x[0], x[1]], self.t, self.cond, self.layer, [v[0], v[1]])
    }
}

/// Exact Jacobian (`feature_dim x input_dim`) from one directional
/// derivative per input coordinate.
pub fn jacobian_of<F: FeatureField + ?Sized>(field: &F, x: &[f64]) -> Result<Matrix> {
    let d = field.input_dim();
    if x.len() != d {
        return invalid(format!("point has {} coordinates, field expects {d}", x.len()));
    }
    let mut columns = Vec::with_capacity(d);
    for j in 0..d {
        let mut e = vec![0.0; d];
        e[j] = 1.0;
        columns.push(field.features_and_jvp(x, &e)?.1);
    }
    let rows = columns[0].len();
    let mut jac = Matrix::zeros(rows, d);
    for (j, col) in columns.iter().enumerate() {
        jac.set_col(j, col);
    }
    if !jac.is_finite() {
        return Err(Error::Numerical("Jacobian has non-finite entries".into()));
    }
    Ok(jac)
}

/// Jacobian of the `layer` features with respect to the latent at `state`.
pub fn jacobian(model: &CdmModel, state: &LatentState, layer: usize) -> Result<Matrix> {
    if state.t == 0 {
        return invalid("Jacobian needs a noisy latent (t >= 1)");
    }
    let field = DenoiserFeatures {
        model,
        t: state.t,
        cond: state.cond,
        layer,
    };
    jacobian_of(&field, &state.x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::CdmArch;
    use crate::numerics::Rng;

    struct LinearField(Matrix);

    impl FeatureField for LinearField {
        fn input_dim(&self) -> usize {
            self.0.cols()
        }

        fn features_and_jvp(&self, x: &[f64], v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
            let f = self.0.matmul(&Matrix::col_vector(x)).into_data();
            let d = self.0.matmul(&Matrix::col_vector(v)).into_data();
            Ok((f, d))
        }
    }

    struct ConstantField;

    impl FeatureField for ConstantField {
        fn input_dim(&self) -> usize {
            2
        }

        fn features_and_jvp(&self, _x: &[f64], _v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
            Ok((vec![1.0, 2.0, 3.0], vec![0.0; 3]))
        }
    }

    #[test]
    fn linear_map_jacobian_is_the_map() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, -4.0], [0.5, 0.0]]).unwrap();
        let j = jacobian_of(&LinearField(a.clone()), &[0.3, 0.7]).unwrap();
        assert_eq!(j, a);
    }

    #[test]
    fn constant_head_has_zero_jacobian() {
        let j = jacobian_of(&ConstantField, &[1.0, 1.0]).unwrap();
        assert_eq!(j, Matrix::zeros(3, 2));
    }

    #[test]
    fn requires_noisy_state() {
        let m = CdmModel::new(CdmArch::default(), &mut Rng::new(0));
        let st = LatentState {
            x: [0.0, 0.0],
            t: 0,
            cond: Condition::Class(0),
        };
        assert!(jacobian(&m, &st, 1).is_err());
    }
}

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::basis::{evr_sequence, extraneous_directions, project_out, select_k, ExtraneousBasis};
use super::jacobian::jacobian;
use crate::diffusion::{ddim_decode, ddim_invert, feature_extract, CdmModel, Condition, LatentState, NoiseSchedule};
use crate::error::{invalid, Result};
use crate::numerics::Rng;
use crate::toy_data::LabeledSample;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClaridConfig {
    /// Projection timestep.
    pub t_e: usize,
    /// Number of extraneous directions considered.
    pub n: usize,
    /// Guidance scale for decoding the projected latent (1 = plain).
    pub cfg_scale: f64,
    /// Feature-extraction timestep.
    pub t_r: usize,
    /// Hidden layer used for both the Jacobian and the Canonical Feature.
    pub layer: usize,
}

impl ClaridConfig {
    /// `n = 2`, last hidden layer, `t_r = T/10`, no guidance.
    pub fn toy(t_e: usize, t_max: usize) -> Self {
        Self {
            t_e,
            n: 2,
            cfg_scale: 1.0,
            t_r: t_max / 10,
            layer: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaRepBundle {
    pub seed_sample_id: usize,
    pub t_e: usize,
    pub k: usize,
    /// Projected latent at `t_e` (the CLARep).
    pub latent: [f64; 2],
    pub canonical_sample: [f64; 2],
    pub canonical_feature: Vec<f64>,
    pub cond: usize,
}

/// Intermediate values of one CLARID run.
#[derive(Debug, Clone)]
pub struct ClaridTrace {
    pub x_te: LatentState,
    pub basis: ExtraneousBasis,
    pub evr: Vec<f64>,
    pub bundle: ClaRepBundle,
}

/// Invert to `t_e`, remove the top-`k` extraneous directions, decode the
/// Canonical Sample, then re-invert it to `t_r` for the Canonical Feature.
/// The model stays conditioned on the sample's class throughout.
pub fn clarid_trace(
    id: usize,
    sample: &LabeledSample,
    model: &CdmModel,
    sched: &NoiseSchedule,
    cfg: &ClaridConfig,
    rng: &mut Rng,
) -> Result<ClaridTrace> {
    if cfg.t_e == 0 || cfg.t_e > sched.t_max() {
        return invalid(format!("t_e = {} must lie in 1..={}", cfg.t_e, sched.t_max()));
    }
    let cond = Condition::Class(sample.y);
    let x_te = ddim_invert(sample.x, cfg.t_e, cond, model, sched)?;
    let jac = jacobian(model, &x_te, cfg.layer)?;
    let basis = extraneous_directions(&jac, cfg.n)?;
    let evr = evr_sequence(&basis)?;
    let k = select_k(&evr);
    let projected = project_out(&x_te.x, &basis, k)?;
    let latent = LatentState {
        x: [projected[0], projected[1]],
        t: cfg.t_e,
        cond,
    };
    let canonical_sample = ddim_decode(&latent, model, sched, cfg.cfg_scale, rng)?;
    let at_tr = ddim_invert(canonical_sample, cfg.t_r, cond, model, sched)?;
    let canonical_feature = feature_extract(&at_tr, model, cfg.layer)?;
    Ok(ClaridTrace {
        x_te,
        basis,
        evr,
        bundle: ClaRepBundle {
            seed_sample_id: id,
            t_e: cfg.t_e,
            k,
            latent: latent.x,
            canonical_sample,
            canonical_feature,
            cond: sample.y,
        },
    })
}

pub fn clarid_pipeline(
    id: usize,
    sample: &LabeledSample,
    model: &CdmModel,
    sched: &NoiseSchedule,
    cfg: &ClaridConfig,
    rng: &mut Rng,
) -> Result<ClaRepBundle> {
    Ok(clarid_trace(id, sample, model, sched, cfg, rng)?.bundle)
}

/// Runs the pipeline over many samples in parallel. Each sample draws from
/// `rng.split(id)`; results keep input order.
pub fn clarid_many(
    samples: &[(usize, LabeledSample)],
    model: &CdmModel,
    sched: &NoiseSchedule,
    cfg: &ClaridConfig,
    rng: &Rng,
) -> Result<Vec<ClaridTrace>> {
    samples
        .par_iter()
        .map(|(id, s)| clarid_trace(*id, s, model, sched, cfg, &mut rng.split(*id as u64)))
        .collect()
}

/// Hidden features of a data point after inversion to `t_r`.
pub fn inverted_features(
    x: [f64; 2],
    cond: Condition,
    model: &CdmModel,
    sched: &NoiseSchedule,
    t_r: usize,
    layer: usize,
) -> Result<Vec<f64>> {
    let st = ddim_invert(x, t_r, cond, model, sched)?;
    feature_extract(&st, model, layer)
}

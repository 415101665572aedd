//! Conditional diffusion core.

mod model;
mod sampler;
mod schedule;
mod train;

pub use model::{timestep_embedding, Activations, CdmArch, CdmModel, CdmVars, Condition, DATA_DIM};
pub use sampler::{
    ddim_decode, ddim_invert, decode_batch, decode_with, guided_noise, invert_batch, sample_batch,
    two_stage_sample, two_stage_sample_batch, LatentState, NoisePredictor,
};
pub use schedule::{q_sample, NoiseSchedule};
pub use train::{ddpm_loss, ddpm_loss_and_grads, draw_batch, train_cdm, DdpmBatch, TrainConfig, TrainLog};

use crate::error::Result;

/// Hidden-layer features at a latent state. Vector inputs need no pooling.
pub fn feature_extract(state: &LatentState, model: &CdmModel, layer: usize) -> Result<Vec<f64>> {
    state_check(state, model)?;
    let f = model.features(
        &crate::numerics::Matrix::row_vector(&state.x),
        state.t,
        &[state.cond],
        layer,
    )?;
    Ok(f.into_data())
}

fn state_check(state: &LatentState, model: &CdmModel) -> Result<()> {
    if state.t > model.arch.t_max {
        return crate::error::invalid(format!("state timestep {} exceeds t_max", state.t));
    }
    Ok(())
}

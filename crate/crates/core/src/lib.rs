//! Toy-scale laboratory for canonical latent representations (CLAReps) of a
//! conditional diffusion model.
//!
//! The crate is layered bottom-up:
//!
//! - [`numerics`]: dense matrices, Jacobi SVD, a matrix-level reverse-mode
//!   tape, Adam, k-means, NMI, linear CKA and the elbow rule.
//! - [`toy_data`]: the two-class hierarchical 2D generative process.
//! - [`diffusion`]: noise schedule, conditional MLP denoiser, DDPM training,
//!   DDIM decoding and inversion, classifier-free guidance.
//! - [`clarid`]: Jacobian extraneous directions, projection, adaptive `k`,
//!   `t_e` search and feature-quality scoring.
//! - [`cadistill`]: student classifier, contrastive/CKA distillation losses,
//!   PGD robustness evaluation.

pub mod cadistill;
pub mod checkpoint;
pub mod clarid;
pub mod diffusion;
pub mod error;
pub mod nn;
pub mod numerics;
pub mod toy_data;

pub use error::{Error, Result};

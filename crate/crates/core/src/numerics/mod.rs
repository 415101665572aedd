//! Linear algebra, randomness, autodiff and statistics primitives.

mod cka;
mod cluster;
mod elbow;
mod matrix;
mod optim;
mod rng;
mod svd;
pub mod tape;

pub use cka::linear_cka;
pub use cluster::{kmeans, nmi, KMeansResult};
pub use elbow::elbow_index;
pub use matrix::{dot, norm, Matrix};
pub use optim::{Adam, Sgd};
pub use rng::{stream, Rng};
pub use svd::{svd, SvdResult};
pub use tape::{Gradients, Tape, Var};

//! Canonical latent representation identification.
//!
//! A data point is inverted to the projection timestep, its dominant
//! extraneous directions are read off the feature Jacobian and removed, and
//! the result is decoded into a Canonical Sample whose re-inverted hidden
//! features serve as the Canonical Feature.

mod basis;
mod jacobian;
mod pipeline;
mod quality;
mod te_search;

pub use basis::{evr_sequence, extraneous_directions, project_out, select_k, ExtraneousBasis};
pub use jacobian::{jacobian, jacobian_of, DenoiserFeatures, FeatureField};
pub use pipeline::{clarid_many, clarid_pipeline, clarid_trace, inverted_features, ClaRepBundle, ClaridConfig, ClaridTrace};
pub use quality::{feature_quality, within_class_variance, QualityReport};
pub use te_search::{default_grid, find_te, saturation_point, TeSearchReport};

//! Motion-prior human pose tracking at desk scale.
//!
//! The crate is organised bottom-up:
//!
//! - [`skeleton`]: articulated kinematic chains, synthetic multi-action motion,
//!   sequence/feature CSV files and the joint-position error metric.
//! - [`latent`]: PCA manifolds, GP regression, GPLVM and GPDM motion priors.
//! - [`mappings`]: tagged GP regressions between spaces (features, latents, poses).
//! - [`transitions`]: transition pairs and synthesized paths between action models.
//! - [`tracker`]: latent-space particle filtering across one or more models.
//! - [`ensemble`]: action-weighted 2D pose estimation, pose merging and
//!   weakly-supervised retraining.
//! - [`harness`]: experiment configuration, A/B experiments, reports and the CLI.

pub mod ensemble;
pub mod error;
pub mod harness;
pub mod latent;
pub mod mappings;
pub mod optim;
pub mod skeleton;
pub mod tracker;
pub mod transitions;

pub use error::{Error, Result};

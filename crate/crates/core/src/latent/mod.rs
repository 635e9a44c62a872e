//! Dimensionality reduction and dynamical motion priors.
//!
//! Linear manifolds come from [`pca_fit`]; nonlinear ones from [`gplvm_fit`]
//! (a GP maps latent points to observations, latents found by MAP) and
//! [`gpdm_fit`], which adds a second GP over latent transitions
//! `x_{t-1} -> x_t`. All GPs share the RBF kernel in [`KernelParams`].

mod gp;
pub(crate) mod gpdm;
pub(crate) mod gplvm;
mod kernel;
mod pca;
pub(crate) mod rows;

pub use gp::{gp_posterior, GpLikelihood, GpPredictor};
pub use gpdm::{dynamics_step, gpdm_fit, gpdm_fit_traced, GpdmModel, GpdmOptions};
pub use gplvm::{
    gplvm_fit, gplvm_fit_traced, latent_to_observation, project_to_latent, FitOptions, FitReport,
    LatentModel, LatentObjective, ObjectiveTerms,
};
pub use kernel::KernelParams;
pub use pca::{pca_fit, pca_project, pca_reconstruct, PcaModel};

use serde::{Deserialize, Serialize};

/// Structured-text model document, discriminated by its `type` field.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelDocument {
    Pca(PcaModel),
    Gplvm(LatentModel),
    Gpdm(GpdmModel),
    GpMapping(crate::mappings::GpMapping),
}

impl ModelDocument {
    pub fn to_json(&self) -> crate::Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> crate::Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

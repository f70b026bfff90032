//! Consistency-bound transforms, their numerical verification, and the
//! instances showing that abstention is needed for such bounds to exist.

pub mod campaign;
pub mod negative;
pub mod transforms;
pub mod verify;

use thiserror::Error;

use crate::distribution::DistributionError;
use crate::hypothesis::HypothesisError;
use crate::losses::LossError;
use crate::risk::RiskError;

pub use campaign::{
    random_bipartite_distribution, random_distribution, random_general_distribution, run_campaign, CampaignResult,
    CampaignRow, CampaignSpec,
};
pub use negative::{negative_construct, negative_report, NegativeRow};
pub use transforms::{gamma_transform, psi_exp, psi_exp_relaxed, psi_transform, GammaVariant};
pub use verify::{
    generic_gamma_transfer, generic_psi_transfer, verify_theorem_bound, BoundReport, BoundVerifier, GapProfile,
    TransferReport,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoundError {
    #[error("bound degenerate: {0}")]
    Degenerate(String),
    #[error("outside domain: {0}")]
    Domain(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
}

impl From<LossError> for BoundError {
    fn from(e: LossError) -> Self {
        BoundError::Risk(RiskError::Loss(e))
    }
}

impl From<HypothesisError> for BoundError {
    fn from(e: HypothesisError) -> Self {
        BoundError::Risk(RiskError::Hypothesis(e))
    }
}

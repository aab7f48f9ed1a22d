//! The diffusion-based mixture-of-experts generator: a shared expert for
//! fundamental propagation patterns, per-environment domain experts, and a
//! router that weights them. Trained with the DDPM objective in two phases
//! (cold start, then joint fine-tuning); sampled with strided DDIM and
//! classifier-free-guidance fusion of the shared and top-1 domain experts.

mod checkpoint;
mod cond;
mod expert;
mod nn;
mod router;
mod sample;
mod schedule;
mod train;

pub use checkpoint::{arch_hash, load_checkpoint, save_checkpoint};
pub use cond::StaticCond;
pub use expert::{denoiser_forward, ExpertParams, COND_CHANNELS, PARAM_COUNT};
pub use router::{route, train_router, RouterParams, RouterTrainConfig};
pub use sample::{
    candidate_seed, cfg_fuse, ddim_reverse, ddim_sample, ddim_timesteps, generate_candidates,
    CandidateSet,
};
pub use schedule::{forward_diffuse, make_schedule, DiffusionSchedule};
pub use train::{
    fine_tune, fused_loss, train_expert, ExpertTrainConfig, FineTuneConfig, TrainItem,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Everything the generator needs at inference time.
#[derive(Debug, Clone, PartialEq)]
pub struct MoEParams {
    pub shared: ExpertParams,
    pub domain_experts: Vec<ExpertParams>,
    pub router: RouterParams,
    pub schedule: DiffusionSchedule,
    /// Guidance scale g of the fusion rule.
    pub guidance: f64,
    pub meta: TrainingMeta,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub shared_epochs: usize,
    pub domain_epochs: usize,
    pub router_epochs: usize,
    pub finetune_epochs: usize,
    pub train_items: usize,
    pub final_loss: f64,
}

impl MoEParams {
    pub fn validate(&self) -> Result<()> {
        if self.domain_experts.is_empty() {
            return Err(Error::InvalidConfig("need at least one domain expert".into()));
        }
        if self.router.n_experts() != self.domain_experts.len() {
            return Err(Error::ArchitectureMismatch(format!(
                "router has {} outputs but there are {} domain experts",
                self.router.n_experts(),
                self.domain_experts.len()
            )));
        }
        for (label, expert) in self.router.labels.iter().zip(&self.domain_experts) {
            if label != &expert.expert_id {
                return Err(Error::ArchitectureMismatch(format!(
                    "router label {:?} does not match expert {:?}",
                    label, expert.expert_id
                )));
            }
        }
        if !self.shared.is_finite()
            || self.domain_experts.iter().any(|e| !e.is_finite())
        {
            return Err(Error::InvalidConfig("non-finite expert weights".into()));
        }
        Ok(())
    }
}

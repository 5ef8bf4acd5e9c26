//! Scene encoder, future-conditioned denoiser, training losses, and the
//! full training step.

pub mod denoiser;
pub mod encoder;
pub mod train;

use crate::nn::tape::{Id, Tape};
use crate::nn::{NnError, Tensor};

pub use denoiser::{predict_noise, DenoiserParams};
pub use encoder::{
    anchor_fractions, bev_targets, encode_bev_tokens, encode_scene, BevHeadParams, EncoderParams,
    ANCHORS_PER_SIDE, NUM_ANCHORS,
};
pub use train::{draw_sample, sample_forward, train_step, Model, ModelConfig, StepLosses, TrainCtx};

#[derive(Debug, thiserror::Error)]
pub enum PlannerError {
    #[error("raster grid of {0} cells is not divisible by the anchor side")]
    BadGrid(usize),
    #[error("diffusion step {s} outside training schedule of {s_train} steps")]
    StepOutOfRange { s: usize, s_train: usize },
    #[error("non-finite loss on scene {scene} (plan {plan}, bev {bev})")]
    NonFiniteLoss { scene: u64, plan: f32, bev: f32 },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    WorldModel(#[from] crate::world_model::WorldModelError),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
}

/// Ablation toggles wiring the runnable model variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationSwitches {
    pub use_wm: bool,
    pub use_wm_to_dit: bool,
    pub use_interact: bool,
    pub force_alpha_one: bool,
    pub use_dspcfg: bool,
    pub use_kinematic_extrap: bool,
}

impl Default for AblationSwitches {
    fn default() -> Self {
        Self {
            use_wm: true,
            use_wm_to_dit: true,
            use_interact: true,
            force_alpha_one: false,
            use_dspcfg: true,
            use_kinematic_extrap: true,
        }
    }
}

impl AblationSwitches {
    pub fn validate(&self) -> Result<(), String> {
        if self.use_wm_to_dit && !self.use_wm {
            return Err("switches.use_wm_to_dit requires switches.use_wm".into());
        }
        if self.use_interact && !self.use_wm {
            return Err("switches.use_interact requires switches.use_wm".into());
        }
        Ok(())
    }

    /// Variant without the latent predictor (and everything downstream).
    pub fn no_world_model() -> Self {
        Self {
            use_wm: false,
            use_wm_to_dit: false,
            use_interact: false,
            ..Self::default()
        }
    }

    /// Trained full model sampled without guidance.
    pub fn no_guidance() -> Self {
        Self { use_dspcfg: false, use_kinematic_extrap: false, ..Self::default() }
    }
}

/// Standard noise-prediction loss: mean squared error over all entries.
pub fn planning_loss(tape: &mut Tape, eps_pred: Id, eps_true: &Tensor) -> Id {
    tape.mse_loss(eps_pred, eps_true)
}

/// Seven-class occupancy cross-entropy over all cells.
pub fn bev_loss(tape: &mut Tape, logits: Id, targets: &[usize]) -> Result<Id, PlannerError> {
    Ok(crate::nn::ops::softmax_cross_entropy(tape, logits, targets)?)
}

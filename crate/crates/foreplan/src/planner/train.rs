//! Model bundle and the full training step: encode, condition, ground,
//! mix, noise, denoise, and the weighted two-term objective.

use std::path::Path;

use rand::Rng;

use crate::env::dataset::SceneRecord;
use crate::geometry::{kinematic_rollout, to_differential, NormStats};
use crate::nn::adam::{adam_step, clip_grad_norm, AdamState};
use crate::nn::checkpoint;
use crate::nn::params::{ParamInit, ParamStore};
use crate::nn::tape::{Id, Tape};
use crate::nn::{NnError, Tensor};
use crate::planner::denoiser::{predict_noise, DenoiserParams};
use crate::planner::encoder::{
    bev_targets, encode_bev_tokens, encode_scene, BevHeadParams, EncoderParams,
};
use crate::planner::{bev_loss, planning_loss, AblationSwitches, PlannerError};
use crate::rng::{normal_tensor, rng_for, Purpose};
use crate::schedules::{sample_condition_source, CondSource, CondSourceDist, NoiseSchedule};
use crate::telemetry;
use crate::world_model::{
    ground_future_latent, predict_future_latent, select_planning_condition, FutureLatent,
    TrajCondition, WorldModelConfig, WorldModelParams,
};

#[derive(Debug, Clone, Copy)]
pub struct ModelConfig {
    pub d: usize,
    pub heads: usize,
    pub k_queries: usize,
    pub wm_layers: usize,
    pub dit_layers: usize,
    pub ffn_width: usize,
    pub horizon: usize,
    pub dt: f32,
    pub s_train: usize,
    pub grid: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 64,
            heads: 4,
            k_queries: 16,
            wm_layers: 4,
            dit_layers: 5,
            ffn_width: 512,
            horizon: 8,
            dt: 0.5,
            s_train: 100,
            grid: 64,
        }
    }
}

/// All learnable components plus the (non-learnable) tokenizer statistics.
#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub wm: WorldModelParams,
    pub enc: EncoderParams,
    pub bev_head: BevHeadParams,
    pub den: DenoiserParams,
    pub stats: NormStats,
}

const STATS_BUFFER: &str = "buffer.norm_stats";

impl Model {
    pub fn init(cfg: &ModelConfig, seed: u64) -> (ParamStore, Model) {
        let mut store = ParamStore::new();
        let mut rng = rng_for(seed, Purpose::Init);
        let mut init = ParamInit::new(&mut store, &mut rng);
        let wm = WorldModelParams::register(
            &mut init,
            WorldModelConfig {
                d: cfg.d,
                heads: cfg.heads,
                k_queries: cfg.k_queries,
                layers: cfg.wm_layers,
                ffn_width: cfg.ffn_width,
                horizon: cfg.horizon,
            },
        );
        let enc = EncoderParams::register(&mut init, cfg.d);
        let bev_head = BevHeadParams::register(&mut init, cfg.d, cfg.grid);
        let den = DenoiserParams::register(
            &mut init,
            cfg.d,
            cfg.heads,
            cfg.dit_layers,
            cfg.ffn_width,
            cfg.horizon,
            cfg.s_train,
        );
        let model =
            Model { cfg: *cfg, wm, enc, bev_head, den, stats: NormStats::identity() };
        (store, model)
    }

    /// Write parameters and the stats buffer into one checkpoint file.
    pub fn save(&self, store: &ParamStore, path: &Path) -> Result<(), NnError> {
        let tensors = store
            .iter_values()
            .map(|(n, t)| (n.to_string(), t.clone()))
            .chain(std::iter::once((
                STATS_BUFFER.to_string(),
                self.stats.to_tensor(),
            )));
        checkpoint::save_named(tensors, path)
    }

    /// Load a checkpoint produced by [`Model::save`] for this config.
    pub fn load(cfg: &ModelConfig, path: &Path) -> Result<(ParamStore, Model), NnError> {
        let (mut store, mut model) = Model::init(cfg, 0);
        let mut tensors = checkpoint::load_named(path)?;
        let stats = tensors
            .remove(STATS_BUFFER)
            .ok_or_else(|| NnError::Checkpoint(format!("missing {STATS_BUFFER}")))?;
        model.stats = NormStats::from_tensor(&stats);
        let expected: Vec<String> = store.names().map(|s| s.to_string()).collect();
        for name in &expected {
            let t = tensors.remove(name).ok_or_else(|| {
                NnError::Checkpoint(format!("checkpoint missing parameter {name}"))
            })?;
            if t.shape != store.value(name).shape {
                return Err(NnError::Checkpoint(format!(
                    "shape mismatch for {name}: file {:?} vs config {:?}",
                    t.shape,
                    store.value(name).shape
                )));
            }
            *store.value_mut(name) = t;
        }
        if let Some((name, _)) = tensors.into_iter().next() {
            return Err(NnError::Checkpoint(format!("unexpected entry {name}")));
        }
        Ok((store, model))
    }
}

/// Training objective context shared across steps.
#[derive(Debug, Clone)]
pub struct TrainCtx {
    pub schedule: NoiseSchedule,
    pub cond: CondSourceDist,
    pub switches: AblationSwitches,
    pub lambda_plan: f32,
    pub lambda_bev: f32,
}

/// Randomness consumed by one sample's training forward.
#[derive(Debug, Clone)]
pub struct SampleDraws {
    pub mode: CondSource,
    pub s: usize,
    pub eps: Tensor,
}

pub fn draw_sample<R: Rng>(rng: &mut R, ctx: &TrainCtx, model: &Model) -> SampleDraws {
    let mode = if ctx.switches.use_wm {
        sample_condition_source(rng, &ctx.cond)
    } else {
        CondSource::Null
    };
    let s = rng.gen_range(1..=model.cfg.s_train);
    let eps = normal_tensor(rng, vec![model.cfg.horizon, 4]);
    SampleDraws { mode, s, eps }
}

pub struct SampleLoss {
    pub total: Id,
    pub plan: Id,
    pub bev: Id,
}

/// One sample's forward pass: scene encoding, conditioning-source pick,
/// latent prediction, optional grounding and annealed mixing, the DDPM
/// forward, noise prediction, and both loss terms.
pub fn sample_forward(
    tape: &mut Tape,
    store: &ParamStore,
    model: &Model,
    ctx: &TrainCtx,
    record: &SceneRecord,
    alpha: f32,
    draws: &SampleDraws,
) -> Result<SampleLoss, PlannerError> {
    let cfg = &model.cfg;
    let z_t = encode_scene(tape, store, &model.enc, &record.raster, &record.status)?;
    let bev_tokens = tape.slice_rows(z_t, 0, crate::planner::NUM_ANCHORS);

    let cond_latent: Option<FutureLatent> = if ctx.switches.use_wm {
        let condition = match draws.mode {
            CondSource::Gt => {
                telemetry::note_expert_conditioning();
                TrajCondition::Tokens(model.wm.tokenize(
                    tape,
                    store,
                    &record.expert,
                    &model.stats,
                )?)
            }
            CondSource::Kin => {
                let kin = kinematic_rollout(&record.status, cfg.dt, cfg.horizon);
                TrajCondition::Tokens(model.wm.tokenize(tape, store, &kin, &model.stats)?)
            }
            CondSource::Null => TrajCondition::Null,
        };
        let z_hat = predict_future_latent(tape, store, &model.wm, z_t, condition)?;
        let alpha_eff = if ctx.switches.force_alpha_one { 1.0 } else { alpha };
        let grounded_available = record.has_future && ctx.switches.use_interact;
        let selected = if grounded_available {
            telemetry::note_future_frame_encode();
            let future = record.future_raster.as_ref().expect("has_future without raster");
            let bank = encode_bev_tokens(tape, store, &model.enc, future)?;
            let grounded = ground_future_latent(tape, store, &model.wm, &z_hat, bank)?;
            select_planning_condition(tape, &z_hat, Some(&grounded), true, alpha_eff)?
        } else {
            select_planning_condition(tape, &z_hat, None, false, alpha_eff)?
        };
        Some(selected)
    } else {
        None
    };

    let a0 = to_differential(&record.expert);
    let a_s = crate::schedules::ddpm_forward(&a0, ctx.schedule.alpha_bar_at(draws.s), &draws.eps);
    let dit_cond = if ctx.switches.use_wm_to_dit {
        cond_latent.map(|c| c.id)
    } else {
        None
    };
    let eps_hat =
        predict_noise(tape, store, &model.den, &a_s.rows, draws.s - 1, z_t, dit_cond)?;
    let plan = planning_loss(tape, eps_hat, &draws.eps);
    let logits = model.bev_head.logits(tape, store, bev_tokens)?;
    let targets = bev_targets(&record.raster)?;
    let bev = bev_loss(tape, logits, &targets)?;
    let total = tape.add_scaled(plan, bev, ctx.lambda_plan, ctx.lambda_bev);
    Ok(SampleLoss { total, plan, bev })
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StepLosses {
    pub total: f64,
    pub plan: f64,
    pub bev: f64,
}

/// One optimizer step over a batch: per-sample backward passes accumulate
/// gradients, which are averaged, clipped, and applied with Adam.
#[allow(clippy::too_many_arguments)]
pub fn train_step<R: Rng>(
    store: &mut ParamStore,
    model: &Model,
    ctx: &TrainCtx,
    batch: &[&SceneRecord],
    alpha: f32,
    rng: &mut R,
    adam: &mut AdamState,
    grad_clip: f32,
) -> Result<StepLosses, PlannerError> {
    assert!(!batch.is_empty(), "empty training batch");
    store.zero_grads();
    let mut sums = StepLosses::default();
    for record in batch {
        let draws = draw_sample(rng, ctx, model);
        let mut tape = Tape::new();
        let loss = sample_forward(&mut tape, store, model, ctx, record, alpha, &draws)?;
        let total = tape.scalar_f64(loss.total);
        if !total.is_finite() {
            return Err(PlannerError::NonFiniteLoss {
                scene: record.id,
                plan: tape.scalar(loss.plan),
                bev: tape.scalar(loss.bev),
            });
        }
        sums.total += total;
        sums.plan += tape.scalar_f64(loss.plan);
        sums.bev += tape.scalar_f64(loss.bev);
        tape.backward(loss.total, store);
    }
    let n = batch.len() as f64;
    store.scale_grads(1.0 / batch.len() as f32);
    if grad_clip > 0.0 {
        clip_grad_norm(store, grad_clip);
    }
    adam_step(store, adam)?;
    Ok(StepLosses { total: sums.total / n, plan: sums.plan / n, bev: sums.bev / n })
}

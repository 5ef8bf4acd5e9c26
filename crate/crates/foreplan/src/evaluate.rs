//! Closed-loop evaluation driver: per-context proposal sampling, scoring,
//! selection, two-stage episodes, and aggregate statistics.

use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::env::dataset::SceneRecord;
use crate::env::episode::{to_world, two_stage_episode, EvalContext, Stage2Config};
use crate::env::expert::expert_from;
use crate::env::raster::{rasterize_bev, RasterConfig};
use crate::env::scenario::Kind;
use crate::geom2d::Vec2;
use crate::geometry::{Pose, Trajectory};
use crate::metrics::{compute_subscores, epdms, pdms, stage2_aggregate, MetricWeights, ScoreInput,
    navhard_score};
use crate::nn::params::ParamStore;
use crate::pfg::{score_and_select, ProposalSet, Sampler, SamplerConfig};
use crate::planner::Model;
use crate::schedules::{build_ddpm_schedule, NoiseSchedule};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Pfg(#[from] crate::pfg::PfgError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
}

/// One planned-and-scored context.
#[derive(Debug, Clone)]
pub struct ContextEval {
    pub selected: Trajectory,
    pub set: ProposalSet,
    pub proposal_subscores: Vec<crate::metrics::Subscores>,
    pub best: usize,
    pub agent: crate::metrics::Subscores,
    pub human: crate::metrics::Subscores,
    pub epdms: f32,
    pub pdms: f32,
}

#[derive(Debug, Clone)]
pub struct SceneEval {
    pub id: u64,
    pub kind: Kind,
    pub stage1: ContextEval,
    pub stage2: Vec<(ContextEval, Vec2)>,
    pub s2: f32,
    pub navhard: f32,
}

#[derive(Debug, Clone, Serialize, Default)]
pub struct SubscoreMeans {
    pub nc: f64,
    pub dac: f64,
    pub ddc: f64,
    pub tlc: f64,
    pub ep: f64,
    pub ttc: f64,
    pub comfort: f64,
    pub lk: f64,
    pub hc: f64,
    pub ec: f64,
}

#[derive(Debug, Clone, Serialize, Default)]
pub struct Aggregates {
    pub scenes: usize,
    pub mean_navhard_epdms: f64,
    pub mean_stage1_epdms: f64,
    pub mean_stage2_epdms: f64,
    pub mean_stage1_pdms: f64,
    pub stage1_subscores: SubscoreMeans,
}

pub struct EvalSetup {
    pub schedule: NoiseSchedule,
    pub sampler_cfg: SamplerConfig,
    pub raster_cfg: RasterConfig,
    pub stage2_cfg: Stage2Config,
    pub sigma: f32,
    pub weights: MetricWeights,
}

impl EvalSetup {
    pub fn from_config(cfg: &RunConfig) -> Result<Self, EvalError> {
        let schedule = build_ddpm_schedule(cfg.model.s_train, cfg.beta_1, cfg.beta_s)
            .map_err(|e| crate::config::ConfigError::Invalid(e.to_string()))?;
        Ok(Self {
            schedule,
            sampler_cfg: SamplerConfig {
                s_sample: cfg.s_sample,
                proposals: cfg.proposals,
                pfg: cfg.pfg,
                deterministic: cfg.deterministic,
                switches: cfg.switches,
            },
            raster_cfg: RasterConfig { cells: cfg.model.grid, cell_m: cfg.cell_m },
            stage2_cfg: Stage2Config { k: cfg.stage2_k, lateral_mag: cfg.stage2_lateral },
            sigma: cfg.stage2_sigma,
            weights: MetricWeights::default(),
        })
    }
}

fn plan_context(
    sampler: &Sampler,
    setup: &EvalSetup,
    scenario_cruise: f32,
    ctx: &EvalContext,
    scene_id: u64,
    ctx_idx: u64,
    sample_seed: u64,
) -> Result<ContextEval, EvalError> {
    let model_cfg = &sampler.model.cfg;
    let raster = rasterize_bev(&ctx.scenario, ctx.start, &setup.raster_cfg);
    let prep = sampler.prepare_scene(&raster, &ctx.status)?;
    let stream_base = (scene_id << 24) | (ctx_idx << 16);
    let mut set = sampler.sample_proposals(&prep, sample_seed, stream_base)?;
    let human = expert_from(
        &ctx.scenario,
        ctx.start,
        ctx.status.vx,
        scenario_cruise,
        model_cfg.horizon,
        model_cfg.dt,
    );
    let mut proposal_subscores = Vec::with_capacity(set.proposals.len());
    let best = score_and_select(&mut set, |traj| {
        let subs = compute_subscores(&ScoreInput {
            scenario: &ctx.scenario,
            start: ctx.start,
            start_speed: (ctx.status.vx, ctx.status.vy),
            plan: traj,
            expert: &human,
            prev_plan: None,
        });
        proposal_subscores.push(subs);
        pdms(&subs, &setup.weights)
    })?;
    let selected = set.proposals[best].trajectory.clone();
    let agent = proposal_subscores[best];
    let human_subs = compute_subscores(&ScoreInput {
        scenario: &ctx.scenario,
        start: ctx.start,
        start_speed: (ctx.status.vx, ctx.status.vy),
        plan: &human,
        expert: &human,
        prev_plan: None,
    });
    let e = epdms(&agent, &human_subs, &setup.weights);
    let p = set.proposals[best].score.unwrap_or(0.0);
    Ok(ContextEval {
        selected,
        set,
        proposal_subscores,
        best,
        agent,
        human: human_subs,
        epdms: e,
        pdms: p,
    })
}

pub fn evaluate_scene(
    store: &ParamStore,
    model: &Model,
    setup: &EvalSetup,
    record: &SceneRecord,
    sample_seed: u64,
) -> Result<SceneEval, EvalError> {
    let scenario = record.scenario();
    let sampler = Sampler {
        store,
        model,
        schedule: &setup.schedule,
        cfg: setup.sampler_cfg,
    };
    let mut stage1: Option<Result<ContextEval, EvalError>> = None;
    let horizon = model.cfg.horizon;
    let dt = model.cfg.dt;
    let (ctx1, _plan1, ctxs) = two_stage_episode(
        |ctx| {
            let ev = plan_context(&sampler, setup, scenario.cruise, ctx, record.id, 0, sample_seed);
            let traj = match &ev {
                Ok(e) => e.selected.clone(),
                Err(_) => Trajectory::new(vec![Pose::new(0.0, 0.0, 0.0); horizon], dt),
            };
            stage1 = Some(ev);
            traj
        },
        &scenario,
        &setup.stage2_cfg,
        horizon,
        dt,
    );
    let stage1 = stage1.expect("stage-1 closure ran")?;
    let mut stage2 = Vec::with_capacity(ctxs.len());
    for (i, ctx) in ctxs.iter().enumerate() {
        let ev = plan_context(
            &sampler,
            setup,
            scenario.cruise,
            ctx,
            record.id,
            i as u64 + 1,
            sample_seed,
        )?;
        stage2.push((ev, ctx.start_point));
    }
    let endpoint = {
        let end = to_world(ctx1.start, stage1.selected.end_pose());
        Vec2::new(end.x, end.y)
    };
    let entries: Vec<(f32, Vec2)> = stage2.iter().map(|(ev, p)| (ev.epdms, *p)).collect();
    let s2 = stage2_aggregate(&entries, endpoint, setup.sigma)?;
    let navhard = navhard_score(stage1.epdms, s2);
    Ok(SceneEval { id: record.id, kind: record.kind, stage1, stage2, s2, navhard })
}

/// Evaluate a split in parallel, results in record order.
pub fn evaluate_split(
    store: &ParamStore,
    model: &Model,
    setup: &EvalSetup,
    records: &[SceneRecord],
    sample_seed: u64,
) -> Result<Vec<SceneEval>, EvalError> {
    records
        .par_iter()
        .map(|rec| evaluate_scene(store, model, setup, rec, sample_seed))
        .collect()
}

pub fn aggregate(results: &[SceneEval]) -> Aggregates {
    let n = results.len().max(1) as f64;
    let mut agg = Aggregates { scenes: results.len(), ..Aggregates::default() };
    for r in results {
        agg.mean_navhard_epdms += r.navhard as f64 / n;
        agg.mean_stage1_epdms += r.stage1.epdms as f64 / n;
        agg.mean_stage2_epdms += r.s2 as f64 / n;
        agg.mean_stage1_pdms += r.stage1.pdms as f64 / n;
        let s = &r.stage1.agent;
        agg.stage1_subscores.nc += s.nc as f64 / n;
        agg.stage1_subscores.dac += s.dac as f64 / n;
        agg.stage1_subscores.ddc += s.ddc as f64 / n;
        agg.stage1_subscores.tlc += s.tlc as f64 / n;
        agg.stage1_subscores.ep += s.ep as f64 / n;
        agg.stage1_subscores.ttc += s.ttc as f64 / n;
        agg.stage1_subscores.comfort += s.comfort as f64 / n;
        agg.stage1_subscores.lk += s.lk as f64 / n;
        agg.stage1_subscores.hc += s.hc as f64 / n;
        agg.stage1_subscores.ec += s.ec as f64 / n;
    }
    agg
}

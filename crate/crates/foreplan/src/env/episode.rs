//! Two-stage evaluation episodes: plan from the true start, then re-plan
//! from perturbed restarts around the stage-1 endpoint with agents advanced
//! by the planning horizon.

use crate::env::scenario::{step_agents, Scenario};
use crate::geom2d::Vec2;
use crate::geometry::{EgoStatus, Pose, Trajectory};

/// One evaluation start: a scenario snapshot (agents at context time), the
/// world-frame plan origin, and the ego status there.
#[derive(Debug, Clone)]
pub struct EvalContext {
    pub scenario: Scenario,
    pub start: Pose,
    pub status: EgoStatus,
    /// World position used by the stage-2 Gaussian weighting.
    pub start_point: Vec2,
}

#[derive(Debug, Clone, Copy)]
pub struct Stage2Config {
    pub k: usize,
    pub lateral_mag: f32,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self { k: 3, lateral_mag: 1.0 }
    }
}

pub fn stage1_context(scenario: &Scenario) -> EvalContext {
    EvalContext {
        scenario: scenario.clone(),
        start: Pose::new(0.0, 0.0, 0.0),
        status: scenario.ego_status(),
        start_point: Vec2::new(0.0, 0.0),
    }
}

/// World-frame pose of an ego-frame plan pose.
pub fn to_world(start: Pose, local: Pose) -> Pose {
    let (c, s) = (start.theta.cos(), start.theta.sin());
    Pose::new(
        start.x + c * local.x - s * local.y,
        start.y + s * local.x + c * local.y,
        start.theta + local.theta,
    )
}

/// Inverse of [`to_world`].
pub fn to_local(start: Pose, world: Pose) -> Pose {
    let (c, s) = (start.theta.cos(), start.theta.sin());
    let dx = world.x - start.x;
    let dy = world.y - start.y;
    Pose::new(c * dx + s * dy, -s * dx + c * dy, world.theta - start.theta)
}

/// Stage-1 context and plan plus `k` stage-2 restart contexts at evenly
/// spaced lateral offsets around the stage-1 endpoint, agents advanced by
/// the full horizon.
pub fn two_stage_episode<F>(
    mut plan: F,
    scenario: &Scenario,
    cfg: &Stage2Config,
    horizon: usize,
    dt: f32,
) -> (EvalContext, Trajectory, Vec<EvalContext>)
where
    F: FnMut(&EvalContext) -> Trajectory,
{
    let ctx1 = stage1_context(scenario);
    let plan1 = plan(&ctx1);
    let end_world = to_world(ctx1.start, plan1.end_pose());
    let end_speed = {
        let n = plan1.poses.len();
        let prev = if n >= 2 {
            plan1.poses[n - 2]
        } else {
            Pose::new(0.0, 0.0, 0.0)
        };
        let last = plan1.end_pose();
        (((last.x - prev.x).powi(2) + (last.y - prev.y).powi(2)).sqrt() / dt).min(15.0)
    };
    let advanced = step_agents(scenario, horizon as f32 * dt);
    let mut contexts = Vec::with_capacity(cfg.k);
    for i in 0..cfg.k {
        let lat = if cfg.k > 1 {
            cfg.lateral_mag * (2.0 * i as f32 / (cfg.k - 1) as f32 - 1.0)
        } else {
            0.0
        };
        let normal = (
            -end_world.theta.sin(),
            end_world.theta.cos(),
        );
        let start = Pose::new(
            end_world.x + lat * normal.0,
            end_world.y + lat * normal.1,
            end_world.theta,
        );
        contexts.push(EvalContext {
            scenario: advanced.clone(),
            start,
            status: EgoStatus {
                vx: end_speed,
                vy: 0.0,
                ax: 0.0,
                ay: 0.0,
                command: scenario.command,
            },
            start_point: Vec2::new(start.x, start.y),
        });
    }
    (ctx1, plan1, contexts)
}

//! Rule-based subscores and score aggregation: per-trajectory subscores,
//! the multiplicative-penalty weighted averages, human-behavior filtering,
//! Gaussian-weighted restart aggregation, and the two-stage product score.
//! Also serves as the proposal scorer during sampling.

use crate::env::scenario::{Scenario, EGO_HALF_LEN, EGO_HALF_WID};
use crate::env::to_world;
use crate::geom2d::{Obb, Vec2};
use crate::geometry::{wrap_angle, Pose, Trajectory};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("no stage-2 entries to aggregate")]
    EmptyEntries,
    #[error("no proposals to select from")]
    EmptyProposals,
    #[error("sigma must be positive, got {0}")]
    BadSigma(f32),
}

const COMFORT_ACCEL: f32 = 4.0;
const COMFORT_JERK: f32 = 8.0;
const TTC_LOOKAHEAD: f32 = 1.0;
const EC_DEVIATION: f32 = 0.5;
const MIN_REF_PROGRESS: f32 = 0.1;

/// Normalized per-trajectory quality terms, all in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Subscores {
    pub nc: f32,
    pub dac: f32,
    pub ddc: f32,
    pub tlc: f32,
    pub ep: f32,
    pub ttc: f32,
    pub comfort: f32,
    pub lk: f32,
    pub hc: f32,
    pub ec: f32,
}

impl Subscores {
    pub fn all_ones() -> Self {
        Self {
            nc: 1.0,
            dac: 1.0,
            ddc: 1.0,
            tlc: 1.0,
            ep: 1.0,
            ttc: 1.0,
            comfort: 1.0,
            lk: 1.0,
            hc: 1.0,
            ec: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MetricWeights {
    pub alpha_ep: f32,
    pub alpha_ttc: f32,
    pub alpha_c: f32,
    pub beta_ep: f32,
    pub beta_ttc: f32,
    pub beta_lk: f32,
    pub beta_hc: f32,
    pub beta_ec: f32,
}

impl Default for MetricWeights {
    fn default() -> Self {
        Self {
            alpha_ep: 5.0,
            alpha_ttc: 5.0,
            alpha_c: 2.0,
            beta_ep: 5.0,
            beta_ttc: 5.0,
            beta_lk: 2.0,
            beta_hc: 2.0,
            beta_ec: 2.0,
        }
    }
}

/// Everything needed to score a plan on a scenario. Plans and the expert
/// reference are in the frame anchored at `start`; agents in `scenario` are
/// at the context's time origin.
#[derive(Debug, Clone, Copy)]
pub struct ScoreInput<'a> {
    pub scenario: &'a Scenario,
    pub start: Pose,
    pub start_speed: (f32, f32),
    pub plan: &'a Trajectory,
    pub expert: &'a Trajectory,
    pub prev_plan: Option<&'a Trajectory>,
}

fn world_points(start: Pose, traj: &Trajectory) -> Vec<Pose> {
    traj.poses.iter().map(|&p| to_world(start, p)).collect()
}

fn ego_box(p: &Pose) -> Obb {
    Obb::new(Vec2::new(p.x, p.y), p.theta, EGO_HALF_LEN, EGO_HALF_WID)
}

fn collides_at(scenario: &Scenario, p: &Pose, t: f32) -> bool {
    let ego = ego_box(p);
    scenario.agents.iter().any(|a| ego.intersects(&a.obb_at(t)))
        || scenario.obstacles.iter().any(|o| ego.intersects(&o.obb))
}

fn route_progress(scenario: &Scenario, start: Pose, world: &[Pose]) -> f32 {
    let route = &scenario.route().center;
    let (s0, _, _) = route.project(Vec2::new(start.x, start.y));
    let mut best = 0.0f32;
    for p in world {
        let (s, _, _) = route.project(Vec2::new(p.x, p.y));
        best = best.max(s - s0);
    }
    best
}

/// Velocity sequence including the context's incoming velocity at index 0.
fn velocities(start: Pose, start_speed: (f32, f32), world: &[Pose], dt: f32) -> Vec<Vec2> {
    let mut v = Vec::with_capacity(world.len() + 1);
    let (c, s) = (start.theta.cos(), start.theta.sin());
    v.push(Vec2::new(
        c * start_speed.0 - s * start_speed.1,
        s * start_speed.0 + c * start_speed.1,
    ));
    let mut prev = Vec2::new(start.x, start.y);
    for p in world {
        let cur = Vec2::new(p.x, p.y);
        v.push(cur.sub(prev).scale(1.0 / dt));
        prev = cur;
    }
    v
}

/// Rule-based subscores of a plan. Binary metrics are exactly 0 or 1; ego
/// progress is the clipped ratio against the expert's progress.
pub fn compute_subscores(input: &ScoreInput) -> Subscores {
    let dt = input.plan.dt;
    let world = world_points(input.start, input.plan);
    let expert_world = world_points(input.start, input.expert);
    let scenario = input.scenario;
    let route = &scenario.route().center;

    let mut nc = 1.0f32;
    let mut dac = 1.0f32;
    let mut ddc = 1.0f32;
    let mut lk = 1.0f32;
    for (k, p) in world.iter().enumerate() {
        let t = (k + 1) as f32 * dt;
        if collides_at(scenario, p, t) {
            nc = 0.0;
        }
        if !scenario.drivable_contains(Vec2::new(p.x, p.y)) {
            dac = 0.0;
        }
        let (_, dist, tangent) = route.project(Vec2::new(p.x, p.y));
        let lane_dir = tangent.y.atan2(tangent.x);
        if wrap_angle(p.theta - lane_dir).abs() > std::f32::consts::FRAC_PI_2 {
            ddc = 0.0;
        }
        if dist > scenario.route().half_width {
            lk = 0.0;
        }
    }

    // Time-to-collision: constant-velocity projection of ego and agents.
    let vels = velocities(input.start, input.start_speed, &world, dt);
    let mut ttc = 1.0f32;
    for (k, p) in world.iter().enumerate() {
        let t = (k + 1) as f32 * dt;
        let v = vels[k + 1];
        let mut tau = dt;
        while tau <= TTC_LOOKAHEAD + 1e-6 {
            let proj = Pose::new(p.x + v.x * tau, p.y + v.y * tau, p.theta);
            let ego = ego_box(&proj);
            if scenario.agents.iter().any(|a| ego.intersects(&a.obb_at(t + tau))) {
                ttc = 0.0;
            }
            tau += dt;
        }
    }

    // Progress along the route centerline relative to the expert.
    let progress = route_progress(scenario, input.start, &world);
    let ref_progress = route_progress(scenario, input.start, &expert_world);
    let ep = if ref_progress < MIN_REF_PROGRESS {
        1.0
    } else {
        (progress / ref_progress).clamp(0.0, 1.0)
    };

    // Comfort: acceleration and jerk magnitudes from finite differences,
    // including the transition from the incoming velocity.
    let mut comfort = 1.0f32;
    let mut accels = Vec::with_capacity(vels.len().saturating_sub(1));
    for w in vels.windows(2) {
        accels.push(w[1].sub(w[0]).scale(1.0 / dt));
    }
    for a in &accels {
        if a.norm() > COMFORT_ACCEL {
            comfort = 0.0;
        }
    }
    for w in accels.windows(2) {
        if w[1].sub(w[0]).scale(1.0 / dt).norm() > COMFORT_JERK {
            comfort = 0.0;
        }
    }

    // Replan consistency over the first half of the horizon.
    let ec = match input.prev_plan {
        None => 1.0,
        Some(prev) => {
            let prev_world = world_points(input.start, prev);
            let half = (world.len() / 2).max(1);
            let mut acc = 0.0f32;
            for k in 0..half.min(prev_world.len()) {
                let d = Vec2::new(world[k].x, world[k].y)
                    .sub(Vec2::new(prev_world[k].x, prev_world[k].y))
                    .norm();
                acc += d;
            }
            if acc / (half as f32) < EC_DEVIATION {
                1.0
            } else {
                0.0
            }
        }
    };

    Subscores { nc, dac, ddc, tlc: 1.0, ep, ttc, comfort, lk, hc: comfort, ec }
}

/// Hard penalties times the weighted soft average.
pub fn pdms(s: &Subscores, w: &MetricWeights) -> f32 {
    let soft = (w.alpha_ep * s.ep + w.alpha_ttc * s.ttc + w.alpha_c * s.comfort)
        / (w.alpha_ep + w.alpha_ttc + w.alpha_c);
    s.nc * s.dac * soft
}

fn filtered(agent: f32, human: f32) -> f32 {
    if human == 0.0 {
        1.0
    } else {
        agent
    }
}

/// Extended score with human-behavior filtering: a binary violation also
/// committed by the reference trajectory is forgiven. Filtering applies to
/// the binary metrics (NC, DAC, DDC, TLC, LK) only.
pub fn epdms(agent: &Subscores, human: &Subscores, w: &MetricWeights) -> f32 {
    let pen = filtered(agent.nc, human.nc)
        * filtered(agent.dac, human.dac)
        * filtered(agent.ddc, human.ddc)
        * filtered(agent.tlc, human.tlc);
    let beta_sum = w.beta_ep + w.beta_ttc + w.beta_lk + w.beta_hc + w.beta_ec;
    let avg = (w.beta_ep * agent.ep
        + w.beta_ttc * agent.ttc
        + w.beta_lk * filtered(agent.lk, human.lk)
        + w.beta_hc * agent.hc
        + w.beta_ec * agent.ec)
        / beta_sum;
    pen * avg
}

/// Gaussian-weighted aggregation of restart scores by distance between each
/// restart point and the stage-1 endpoint.
pub fn stage2_aggregate(
    entries: &[(f32, Vec2)],
    endpoint: Vec2,
    sigma: f32,
) -> Result<f32, MetricsError> {
    if entries.is_empty() {
        return Err(MetricsError::EmptyEntries);
    }
    if sigma <= 0.0 {
        return Err(MetricsError::BadSigma(sigma));
    }
    let mut weights = Vec::with_capacity(entries.len());
    let mut z = 0.0f64;
    for (_, x) in entries {
        let d = x.sub(endpoint).norm() as f64;
        let w = (-d * d / (2.0 * sigma as f64 * sigma as f64)).exp();
        weights.push(w);
        z += w;
    }
    let mut s2 = 0.0f64;
    for ((score, _), w) in entries.iter().zip(&weights) {
        s2 += (w / z) * *score as f64;
    }
    Ok(s2 as f32)
}

/// Product of the original-observation score and the restart aggregate.
pub fn navhard_score(s1: f32, s2: f32) -> f32 {
    s1 * s2
}

/// Argmax over proposal scores; ties break toward the lowest index.
pub fn select_best_index(scores: &[f32]) -> Result<usize, MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::EmptyProposals);
    }
    let mut best = 0usize;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(best)
}

//! Scripted reference driver: pure-pursuit centerline following with
//! yield-to-conflict deceleration.

use crate::env::scenario::Scenario;
use crate::geom2d::Vec2;
use crate::geometry::{wrap_angle, Pose, Trajectory};

const YIELD_RANGE: f32 = 10.0;
const YIELD_LATERAL: f32 = 3.0;
const YIELD_WINDOW: f32 = 4.0;
const BRAKE: f32 = 3.0;
const ACCEL: f32 = 0.75;
const MAX_YAW_RATE: f32 = 0.8;

/// Expert plan from the scenario origin at the scenario cruise speed.
pub fn expert_trajectory(scenario: &Scenario, steps: usize, dt: f32) -> Trajectory {
    expert_from(
        scenario,
        Pose::new(0.0, 0.0, 0.0),
        scenario.cruise,
        scenario.cruise,
        steps,
        dt,
    )
}

/// Pure-pursuit follower along the route centerline from an arbitrary
/// start pose, decelerating to a stop while a predicted agent conflict
/// lies within [`YIELD_RANGE`] ahead (widened by the braking distance at
/// speed). Poses come back in the frame anchored at `start`.
pub fn expert_from(
    scenario: &Scenario,
    start: Pose,
    start_speed: f32,
    cruise: f32,
    steps: usize,
    dt: f32,
) -> Trajectory {
    let route = &scenario.route().center;
    let (mut x, mut y, mut theta) = (start.x, start.y, start.theta);
    let mut v = start_speed.max(0.0);
    let mut poses = Vec::with_capacity(steps);
    for k in 0..steps {
        let t_now = k as f32 * dt;
        // Yield range: 10 m floor, widened by the distance needed to stop
        // from the current speed plus a footprint margin.
        let yield_range = (v * v / (2.0 * BRAKE) + 5.0).max(YIELD_RANGE);
        let heading = Vec2::new(theta.cos(), theta.sin());
        let conflict = scenario.agents.iter().any(|a| {
            let body = a.half_len.max(a.half_wid);
            let mut tau = 0.0f32;
            while tau <= YIELD_WINDOW {
                let pa = a.pos.add(a.vel.scale(t_now + tau));
                let rel = pa.sub(Vec2::new(x, y));
                let ahead = rel.dot(heading);
                let lateral = rel.cross(heading).abs();
                if ahead >= -2.0 - body
                    && ahead <= yield_range + body
                    && lateral <= YIELD_LATERAL + body
                {
                    return true;
                }
                tau += dt;
            }
            false
        });
        if conflict {
            v = (v - BRAKE * dt).max(0.0);
        } else if v > cruise {
            v = (v - BRAKE * dt).max(cruise);
        } else {
            v = (v + ACCEL * dt).min(cruise);
        }
        if v > 1e-6 {
            let (s_here, _, _) = route.project(Vec2::new(x, y));
            let lookahead = (1.0 * v).max(3.0);
            let target = route.point_at(s_here + lookahead);
            let desired = (target.y - y).atan2(target.x - x);
            let dtheta = wrap_angle(desired - theta).clamp(-MAX_YAW_RATE * dt, MAX_YAW_RATE * dt);
            theta = wrap_angle(theta + dtheta);
            x += v * dt * theta.cos();
            y += v * dt * theta.sin();
        }
        poses.push(crate::env::episode::to_local(start, Pose::new(x, y, theta)));
    }
    Trajectory::new(poses, dt)
}

/// Linear interpolation along a trajectory (origin pose implicit at t=0).
pub fn pose_at_time(traj: &Trajectory, start: Pose, t: f32) -> Pose {
    if traj.poses.is_empty() || t <= 0.0 {
        return start;
    }
    let dt = traj.dt;
    let idx = t / dt; // 1-based pose index space
    let lo = idx.floor() as usize;
    let frac = idx - lo as f32;
    let pose_of = |i: usize| -> Pose {
        if i == 0 {
            start
        } else {
            traj.poses[(i - 1).min(traj.poses.len() - 1)]
        }
    };
    let a = pose_of(lo);
    let b = pose_of(lo + 1);
    Pose::new(
        a.x + frac * (b.x - a.x),
        a.y + frac * (b.y - a.y),
        a.theta + frac * wrap_angle(b.theta - a.theta),
    )
}

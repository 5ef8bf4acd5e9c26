//! Trajectory representations and conversions: the differential action
//! space used by the diffusion planner, trajectory tokenization, constant
//! acceleration extrapolation, and normalization statistics.

use rand::Rng;

use crate::nn::blocks::LnParams;
use crate::nn::params::{ParamInit, ParamStore};
use crate::nn::tape::{Id, Tape};
use crate::nn::{NnError, Tensor};

pub const SIGMA_FLOOR: f32 = 1e-3;

#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error("empty trajectory dataset")]
    EmptyDataset,
    #[error("horizon {horizon} exceeds positional table of {table} steps")]
    HorizonExceedsTable { horizon: usize, table: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x: f32,
    pub y: f32,
    pub theta: f32,
}

impl Pose {
    pub fn new(x: f32, y: f32, theta: f32) -> Self {
        Self { x, y, theta: wrap_angle(theta) }
    }
}

/// Wrap an angle to (-pi, pi].
pub fn wrap_angle(theta: f32) -> f32 {
    let two_pi = 2.0 * std::f32::consts::PI;
    let mut t = theta % two_pi;
    if t <= -std::f32::consts::PI {
        t += two_pi;
    } else if t > std::f32::consts::PI {
        t -= two_pi;
    }
    t
}

/// Planned ego motion: `T` future poses at `dt` spacing, starting one step
/// after the (implicit) origin pose.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub poses: Vec<Pose>,
    pub dt: f32,
}

impl Trajectory {
    pub fn new(poses: Vec<Pose>, dt: f32) -> Self {
        Self { poses, dt }
    }

    pub fn horizon(&self) -> usize {
        self.poses.len()
    }

    /// Time of pose index `i` (the first pose sits at `dt`).
    pub fn time_of(&self, i: usize) -> f32 {
        (i + 1) as f32 * self.dt
    }

    pub fn end_pose(&self) -> Pose {
        *self.poses.last().expect("empty trajectory")
    }
}

/// Differential action rows `(dx, dy, sin theta, cos theta)`, the diffusion
/// state space. Rows are in meters / unit circle for decoded data; noisy
/// diffusion samples are unconstrained.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionTensor {
    pub rows: Tensor,
}

impl ActionTensor {
    pub fn new(rows: Tensor) -> Self {
        assert_eq!(rows.shape.len(), 2, "action tensor must be 2-D");
        assert_eq!(rows.shape[1], 4, "action tensor needs 4 columns");
        Self { rows }
    }

    pub fn horizon(&self) -> usize {
        self.rows.shape[0]
    }
}

/// Per-axis differential statistics used by the trajectory tokenizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    pub mu_x: f32,
    pub mu_y: f32,
    pub sigma_x: f32,
    pub sigma_y: f32,
}

impl NormStats {
    pub fn identity() -> Self {
        Self { mu_x: 0.0, mu_y: 0.0, sigma_x: 1.0, sigma_y: 1.0 }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![4], vec![self.mu_x, self.mu_y, self.sigma_x, self.sigma_y]).unwrap()
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        assert_eq!(t.numel(), 4, "norm stats tensor must have 4 entries");
        Self { mu_x: t.data[0], mu_y: t.data[1], sigma_x: t.data[2], sigma_y: t.data[3] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    KeepLane,
    TurnLeft,
    TurnRight,
}

impl Command {
    pub fn one_hot(self) -> [f32; 3] {
        match self {
            Command::KeepLane => [1.0, 0.0, 0.0],
            Command::TurnLeft => [0.0, 1.0, 0.0],
            Command::TurnRight => [0.0, 0.0, 1.0],
        }
    }

    pub fn index(self) -> usize {
        match self {
            Command::KeepLane => 0,
            Command::TurnLeft => 1,
            Command::TurnRight => 2,
        }
    }

    pub fn from_index(i: usize) -> Self {
        match i {
            1 => Command::TurnLeft,
            2 => Command::TurnRight,
            _ => Command::KeepLane,
        }
    }
}

/// Ego kinematic state plus a coarse route command.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoStatus {
    pub vx: f32,
    pub vy: f32,
    pub ax: f32,
    pub ay: f32,
    pub command: Command,
}

impl EgoStatus {
    pub fn features(&self) -> [f32; 7] {
        let oh = self.command.one_hot();
        [self.vx, self.vy, self.ax, self.ay, oh[0], oh[1], oh[2]]
    }
}

/// Absolute poses to differential rows, with the implicit origin pose
/// `x_0 = y_0 = 0`.
pub fn to_differential(traj: &Trajectory) -> ActionTensor {
    let t = traj.horizon();
    let mut data = Vec::with_capacity(t * 4);
    let (mut px, mut py) = (0.0f32, 0.0f32);
    for pose in &traj.poses {
        data.push(pose.x - px);
        data.push(pose.y - py);
        data.push(pose.theta.sin());
        data.push(pose.theta.cos());
        px = pose.x;
        py = pose.y;
    }
    ActionTensor::new(Tensor { shape: vec![t, 4], data })
}

/// Cumulative-sum decode of differential rows back to absolute poses.
/// Heading comes from `atan2(sin, cos)`, which tolerates off-circle inputs;
/// the (0, 0) corner decodes to heading 0.
pub fn cumsum_decode(action: &ActionTensor, dt: f32) -> Trajectory {
    let t = action.horizon();
    let mut poses = Vec::with_capacity(t);
    let (mut x, mut y) = (0.0f32, 0.0f32);
    for k in 0..t {
        x += action.rows.at(k, 0);
        y += action.rows.at(k, 1);
        let theta = action.rows.at(k, 2).atan2(action.rows.at(k, 3));
        poses.push(Pose { x, y, theta });
    }
    Trajectory::new(poses, dt)
}

/// Constant-acceleration extrapolation from the ego status. Degenerate
/// headings (zero instantaneous velocity) hold the previous heading, with
/// 0 at the first step.
pub fn kinematic_rollout(status: &EgoStatus, dt: f32, steps: usize) -> Trajectory {
    assert!(steps >= 1 && dt > 0.0, "rollout needs steps >= 1, dt > 0");
    let mut poses = Vec::with_capacity(steps);
    let mut prev_theta = 0.0f32;
    for k in 1..=steps {
        let tk = k as f32 * dt;
        let x = status.vx * tk + 0.5 * status.ax * tk * tk;
        let y = status.vy * tk + 0.5 * status.ay * tk * tk;
        let ivx = status.vx + status.ax * tk;
        let ivy = status.vy + status.ay * tk;
        let theta = if ivx.abs() < 1e-9 && ivy.abs() < 1e-9 {
            prev_theta
        } else {
            ivy.atan2(ivx)
        };
        prev_theta = theta;
        poses.push(Pose { x, y, theta });
    }
    Trajectory::new(poses, dt)
}

/// Per-axis mean/std over all per-step differentials of a dataset, std
/// floored at [`SIGMA_FLOOR`]. Population statistics.
pub fn compute_norm_stats(dataset: &[Trajectory]) -> Result<NormStats, GeometryError> {
    if dataset.is_empty() || dataset.iter().all(|t| t.poses.is_empty()) {
        return Err(GeometryError::EmptyDataset);
    }
    let mut n = 0u64;
    let (mut sx, mut sy, mut sxx, mut syy) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for traj in dataset {
        let a = to_differential(traj);
        for k in 0..a.horizon() {
            let dx = a.rows.at(k, 0) as f64;
            let dy = a.rows.at(k, 1) as f64;
            sx += dx;
            sy += dy;
            sxx += dx * dx;
            syy += dy * dy;
            n += 1;
        }
    }
    let n = n as f64;
    let mu_x = sx / n;
    let mu_y = sy / n;
    let var_x = (sxx / n - mu_x * mu_x).max(0.0);
    let var_y = (syy / n - mu_y * mu_y).max(0.0);
    Ok(NormStats {
        mu_x: mu_x as f32,
        mu_y: mu_y as f32,
        sigma_x: (var_x.sqrt() as f32).max(SIGMA_FLOOR),
        sigma_y: (var_y.sqrt() as f32).max(SIGMA_FLOOR),
    })
}

/// Normalized differential feature rows `(dx_bar, dy_bar, sin, cos)`.
/// Only the translation columns are normalized.
pub fn normalized_features(traj: &Trajectory, stats: &NormStats) -> Tensor {
    let a = to_differential(traj);
    let t = a.horizon();
    let mut data = Vec::with_capacity(t * 4);
    for k in 0..t {
        data.push((a.rows.at(k, 0) - stats.mu_x) / stats.sigma_x);
        data.push((a.rows.at(k, 1) - stats.mu_y) / stats.sigma_y);
        data.push(a.rows.at(k, 2));
        data.push(a.rows.at(k, 3));
    }
    Tensor { shape: vec![t, 4], data }
}

/// Learned trajectory tokenizer: a 4-to-d projection, a temporal positional
/// table, and a layer norm.
#[derive(Debug, Clone)]
pub struct TokenizerParams {
    pub w: String,
    pub pos: String,
    pub ln: LnParams,
    pub max_t: usize,
}

impl TokenizerParams {
    pub fn register<R: Rng>(
        init: &mut ParamInit<R>,
        prefix: &str,
        d: usize,
        max_t: usize,
    ) -> Self {
        let w = format!("{prefix}.w");
        let pos = format!("{prefix}.pos");
        init.weight(&w, 4, d);
        init.table(&pos, max_t, d);
        let ln = LnParams::register(init, prefix, d);
        Self { w, pos, ln, max_t }
    }
}

/// Token `k` is `LN(W f_k + p_k)` over the normalized feature rows.
pub fn tokenize_trajectory(
    tape: &mut Tape,
    store: &ParamStore,
    traj: &Trajectory,
    stats: &NormStats,
    params: &TokenizerParams,
) -> Result<Id, GeometryError> {
    let t = traj.horizon();
    if t > params.max_t {
        return Err(GeometryError::HorizonExceedsTable { horizon: t, table: params.max_t });
    }
    let feats = tape.constant(normalized_features(traj, stats));
    let w = tape.param(store, &params.w);
    let proj = tape.matmul(feats, w);
    let pos_full = tape.param(store, &params.pos);
    let pos = if t == params.max_t {
        pos_full
    } else {
        tape.slice_rows(pos_full, 0, t)
    };
    let with_pos = tape.add(proj, pos);
    Ok(params.ln.apply(tape, store, with_pos)?)
}

//! Scalar schedules: the DDPM noise schedule, the phase-dependent guidance
//! envelopes, the sigmoid conditioning anneal, and the three-mode
//! conditioning-source draw.

use rand::Rng;

use crate::geometry::ActionTensor;
use crate::nn::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum ScheduleError {
    #[error("invalid beta range [{0}, {1}]")]
    BadBetaRange(f64, f64),
    #[error("conditioning probabilities ({0}, {1}, {2}) do not form a distribution")]
    BadDistribution(f64, f64, f64),
    #[error("invalid schedule config: {0}")]
    BadConfig(String),
}

/// Forward-process noise schedule. `alpha_bar[s]` is the cumulative product
/// up to step `s`, with `alpha_bar[0] = 1` (clean data) by convention.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    pub s_train: usize,
    pub beta: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

/// Linear beta ramp; cumulative products in double precision.
pub fn build_ddpm_schedule(
    s_train: usize,
    beta_1: f64,
    beta_s: f64,
) -> Result<NoiseSchedule, ScheduleError> {
    if s_train < 1 || !(0.0..=1.0).contains(&beta_1) || !(0.0..=1.0).contains(&beta_s) || beta_1 > beta_s
    {
        return Err(ScheduleError::BadBetaRange(beta_1, beta_s));
    }
    let mut beta = Vec::with_capacity(s_train);
    let mut alpha_bar = Vec::with_capacity(s_train + 1);
    alpha_bar.push(1.0);
    let mut prod = 1.0f64;
    for i in 0..s_train {
        let b = if s_train == 1 {
            beta_1
        } else {
            beta_1 + (beta_s - beta_1) * i as f64 / (s_train - 1) as f64
        };
        beta.push(b);
        prod *= 1.0 - b;
        alpha_bar.push(prod);
    }
    Ok(NoiseSchedule { s_train, beta, alpha_bar })
}

impl NoiseSchedule {
    pub fn alpha_bar_at(&self, s: usize) -> f64 {
        self.alpha_bar[s]
    }

    /// Uniformly strided descending noise levels visited during sampling.
    pub fn sample_steps(&self, s_sample: usize) -> Vec<usize> {
        assert!(s_sample >= 1 && s_sample <= self.s_train);
        (1..=s_sample)
            .map(|i| (i * self.s_train) / s_sample)
            .rev()
            .collect()
    }
}

/// `a_s = sqrt(alpha_bar_s) a_0 + sqrt(1 - alpha_bar_s) eps`.
pub fn ddpm_forward(a0: &ActionTensor, alpha_bar_s: f64, eps: &Tensor) -> ActionTensor {
    assert!((0.0..=1.0).contains(&alpha_bar_s), "alpha_bar outside [0, 1]");
    assert_eq!(a0.rows.shape, eps.shape, "noise shape mismatch");
    let ca = alpha_bar_s.sqrt() as f32;
    let ce = (1.0 - alpha_bar_s).sqrt() as f32;
    let data: Vec<f32> = a0
        .rows
        .data
        .iter()
        .zip(&eps.data)
        .map(|(a, e)| ca * a + ce * e)
        .collect();
    ActionTensor::new(Tensor { shape: a0.rows.shape.clone(), data })
}

/// Guidance envelope parameters. The decay and rise envelopes overlap on
/// `(nu, rho)`.
#[derive(Debug, Clone, Copy)]
pub struct PfgConfig {
    pub rho: f32,
    pub nu: f32,
    pub w_max_kin: f32,
    pub w_max_tw: f32,
}

impl Default for PfgConfig {
    fn default() -> Self {
        Self { rho: 0.7, nu: 0.3, w_max_kin: 1.5, w_max_tw: 2.5 }
    }
}

impl PfgConfig {
    pub fn validate(&self) -> Result<(), ScheduleError> {
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(ScheduleError::BadConfig(format!("pfg.rho = {}", self.rho)));
        }
        if !(0.0..1.0).contains(&self.nu) {
            return Err(ScheduleError::BadConfig(format!("pfg.nu = {}", self.nu)));
        }
        if self.nu >= self.rho {
            return Err(ScheduleError::BadConfig(format!(
                "pfg.nu = {} must be below pfg.rho = {}",
                self.nu, self.rho
            )));
        }
        if self.w_max_kin < 0.0 || self.w_max_tw < 0.0 {
            return Err(ScheduleError::BadConfig("negative guidance weight".into()));
        }
        Ok(())
    }
}

/// Decay envelope: `w_max_kin * cos(pi r / (2 rho))` below `rho`, zero above.
pub fn w_kin(r: f32, cfg: &PfgConfig) -> f32 {
    debug_assert!((0.0..=1.0).contains(&r));
    if r < cfg.rho {
        let arg = std::f64::consts::PI * r as f64 / (2.0 * cfg.rho as f64);
        (cfg.w_max_kin as f64 * arg.cos()) as f32
    } else {
        0.0
    }
}

/// Rise envelope: zero up to `nu`, then
/// `w_max_tw / 2 * (1 - cos(pi (r - nu)/(1 - nu)))`, reaching the maximum
/// at `r = 1`.
pub fn w_tw(r: f32, cfg: &PfgConfig) -> f32 {
    debug_assert!((0.0..=1.0).contains(&r));
    if r <= cfg.nu {
        0.0
    } else {
        let frac = (r as f64 - cfg.nu as f64) / (1.0 - cfg.nu as f64);
        let arg = std::f64::consts::PI * frac;
        (cfg.w_max_tw as f64 / 2.0 * (1.0 - arg.cos())) as f32
    }
}

/// Sigmoid conditioning anneal over epochs.
#[derive(Debug, Clone, Copy)]
pub struct AnnealConfig {
    pub beta_slope: f64,
    pub rho_e: f64,
    pub max_epochs: usize,
}

impl AnnealConfig {
    pub fn new(rho_e: f64, max_epochs: usize) -> Self {
        // Default slope: the sigmoid transitions over ~10% of the run.
        Self { beta_slope: 10.0 / (0.1 * max_epochs as f64), rho_e, max_epochs }
    }

    /// Inflection epoch `e0 = rho_e * max_epochs`.
    pub fn e0(&self) -> f64 {
        self.rho_e * self.max_epochs as f64
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        if self.beta_slope <= 0.0 {
            return Err(ScheduleError::BadConfig(format!(
                "anneal.beta_slope = {}",
                self.beta_slope
            )));
        }
        if !(0.0..=1.0).contains(&self.rho_e) {
            return Err(ScheduleError::BadConfig(format!("anneal.rho_e = {}", self.rho_e)));
        }
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `alpha(e) = 1 - sigmoid(beta (e - e0))`: grounded conditioning early,
/// self-predicted late.
pub fn anneal_alpha(e: f64, cfg: &AnnealConfig) -> f64 {
    1.0 - sigmoid(cfg.beta_slope * (e - cfg.e0()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CondSource {
    Gt,
    Kin,
    Null,
}

/// Three-mode conditioning-source probabilities.
#[derive(Debug, Clone, Copy)]
pub struct CondSourceDist {
    pub p_gt: f64,
    pub p_kin: f64,
    pub p_null: f64,
}

impl Default for CondSourceDist {
    fn default() -> Self {
        Self { p_gt: 0.4, p_kin: 0.4, p_null: 0.2 }
    }
}

impl CondSourceDist {
    pub fn validate(&self) -> Result<(), ScheduleError> {
        let sum = self.p_gt + self.p_kin + self.p_null;
        if self.p_gt < 0.0
            || self.p_kin < 0.0
            || self.p_null < 0.0
            || (sum - 1.0).abs() > 1e-9
        {
            return Err(ScheduleError::BadDistribution(self.p_gt, self.p_kin, self.p_null));
        }
        Ok(())
    }
}

/// Categorical draw consuming exactly one RNG value.
pub fn sample_condition_source<R: Rng>(rng: &mut R, dist: &CondSourceDist) -> CondSource {
    let u: f64 = rng.gen();
    if u < dist.p_gt {
        CondSource::Gt
    } else if u < dist.p_gt + dist.p_kin {
        CondSource::Kin
    } else {
        CondSource::Null
    }
}

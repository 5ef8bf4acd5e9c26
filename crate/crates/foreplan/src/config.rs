//! Run configuration: flat `key = value` text with `#` comments, dotted
//! keys per module, defaults in code, and validation that names the
//! offending key.

use std::path::Path;

use crate::planner::{AblationSwitches, ModelConfig};
use crate::schedules::{AnnealConfig, CondSourceDist, PfgConfig};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {reason}")]
    BadValue { key: String, reason: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub train_scenes: usize,
    pub val_scenes: usize,
    pub cell_m: f32,
    pub t_f: f32,
    pub no_future_frac: f32,
    pub beta_1: f64,
    pub beta_s: f64,
    pub s_sample: usize,
    pub pfg: PfgConfig,
    pub anneal_rho_e: f64,
    /// 0 means the default slope (transition over ~10% of the run).
    pub anneal_beta_slope: f64,
    pub cond: CondSourceDist,
    pub lambda_plan: f32,
    pub lambda_bev: f32,
    pub lr: f32,
    pub batch: usize,
    pub epochs: usize,
    pub grad_clip: f32,
    pub proposals: usize,
    pub eval_scenes: usize,
    pub stage2_k: usize,
    pub stage2_lateral: f32,
    pub stage2_sigma: f32,
    pub deterministic: bool,
    pub switches: AblationSwitches,
    pub ablate_variants: Vec<String>,
    pub ablate_k_grid: Vec<usize>,
    pub ablate_t_f_grid: Vec<f32>,
    pub ablate_e0_grid: Vec<f64>,
    pub ablate_eval_seeds: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: ModelConfig::default(),
            train_scenes: 256,
            val_scenes: 100,
            cell_m: 1.0,
            t_f: 1.5,
            no_future_frac: 0.1,
            beta_1: 1e-3,
            beta_s: 0.2,
            s_sample: 20,
            pfg: PfgConfig::default(),
            anneal_rho_e: 0.83,
            anneal_beta_slope: 0.0,
            cond: CondSourceDist::default(),
            lambda_plan: 10.0,
            lambda_bev: 10.0,
            lr: 1e-3,
            batch: 16,
            epochs: 8,
            grad_clip: 1.0,
            proposals: 100,
            eval_scenes: 0,
            stage2_k: 3,
            stage2_lateral: 1.0,
            stage2_sigma: 1.0,
            deterministic: false,
            switches: AblationSwitches::default(),
            ablate_variants: vec!["full".into(), "no_wm".into(), "no_guidance".into()],
            ablate_k_grid: vec![4, 16],
            ablate_t_f_grid: vec![],
            ablate_e0_grid: vec![],
            ablate_eval_seeds: 3,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.trim().parse::<T>().map_err(|_| ConfigError::BadValue {
        key: key.to_string(),
        reason: format!("cannot parse `{value}`"),
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(ConfigError::BadValue {
            key: key.to_string(),
            reason: format!("expected boolean, got `{other}`"),
        }),
    }
}

impl RunConfig {
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "model.d" => self.model.d = parse(key, value)?,
            "model.heads" => self.model.heads = parse(key, value)?,
            "model.k_queries" => self.model.k_queries = parse(key, value)?,
            "model.wm_layers" => self.model.wm_layers = parse(key, value)?,
            "model.dit_layers" => self.model.dit_layers = parse(key, value)?,
            "model.ffn_width" => self.model.ffn_width = parse(key, value)?,
            "model.horizon" => self.model.horizon = parse(key, value)?,
            "model.dt" => self.model.dt = parse(key, value)?,
            "model.s_train" => self.model.s_train = parse(key, value)?,
            "model.grid" => self.model.grid = parse(key, value)?,
            "data.train_scenes" => self.train_scenes = parse(key, value)?,
            "data.val_scenes" => self.val_scenes = parse(key, value)?,
            "data.cell_m" => self.cell_m = parse(key, value)?,
            "data.t_f" => self.t_f = parse(key, value)?,
            "data.no_future_frac" => self.no_future_frac = parse(key, value)?,
            "diffusion.beta_1" => self.beta_1 = parse(key, value)?,
            "diffusion.beta_s" => self.beta_s = parse(key, value)?,
            "diffusion.s_sample" => self.s_sample = parse(key, value)?,
            "pfg.rho" => self.pfg.rho = parse(key, value)?,
            "pfg.nu" => self.pfg.nu = parse(key, value)?,
            "pfg.w_max_kin" => self.pfg.w_max_kin = parse(key, value)?,
            "pfg.w_max_tw" => self.pfg.w_max_tw = parse(key, value)?,
            "anneal.rho_e" => self.anneal_rho_e = parse(key, value)?,
            "anneal.beta_slope" => self.anneal_beta_slope = parse(key, value)?,
            "cond.p_gt" => self.cond.p_gt = parse(key, value)?,
            "cond.p_kin" => self.cond.p_kin = parse(key, value)?,
            "cond.p_null" => self.cond.p_null = parse(key, value)?,
            "loss.lambda_plan" => self.lambda_plan = parse(key, value)?,
            "loss.lambda_bev" => self.lambda_bev = parse(key, value)?,
            "train.lr" => self.lr = parse(key, value)?,
            "train.batch" => self.batch = parse(key, value)?,
            "train.epochs" => self.epochs = parse(key, value)?,
            "train.grad_clip" => self.grad_clip = parse(key, value)?,
            "eval.proposals" => self.proposals = parse(key, value)?,
            "eval.scenes" => self.eval_scenes = parse(key, value)?,
            "eval.stage2_k" => self.stage2_k = parse(key, value)?,
            "eval.stage2_lateral" => self.stage2_lateral = parse(key, value)?,
            "eval.stage2_sigma" => self.stage2_sigma = parse(key, value)?,
            "eval.deterministic" => self.deterministic = parse_bool(key, value)?,
            "switches.use_wm" => self.switches.use_wm = parse_bool(key, value)?,
            "switches.use_wm_to_dit" => self.switches.use_wm_to_dit = parse_bool(key, value)?,
            "switches.use_interact" => self.switches.use_interact = parse_bool(key, value)?,
            "switches.force_alpha_one" => self.switches.force_alpha_one = parse_bool(key, value)?,
            "switches.use_dspcfg" => self.switches.use_dspcfg = parse_bool(key, value)?,
            "switches.use_kinematic_extrap" => {
                self.switches.use_kinematic_extrap = parse_bool(key, value)?
            }
            "ablate.variants" => {
                self.ablate_variants =
                    value.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
            }
            "ablate.k_grid" => {
                self.ablate_k_grid = split_list(key, value)?;
            }
            "ablate.t_f_grid" => {
                self.ablate_t_f_grid = split_list(key, value)?;
            }
            "ablate.e0_grid" => {
                self.ablate_e0_grid = split_list(key, value)?;
            }
            "ablate.eval_seeds" => self.ablate_eval_seeds = parse(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        cfg.merge_text(text)?;
        Ok(cfg)
    }

    pub fn merge_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for raw in text.lines() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Invalid(
                format!("malformed line `{raw}` (expected key = value)"),
            ))?;
            self.apply(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// Effective sigmoid slope for the conditioning anneal.
    pub fn anneal(&self) -> AnnealConfig {
        let mut cfg = AnnealConfig::new(self.anneal_rho_e, self.epochs.max(1));
        if self.anneal_beta_slope > 0.0 {
            cfg.beta_slope = self.anneal_beta_slope;
        }
        cfg
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let m = &self.model;
        if m.d == 0 || m.d % m.heads != 0 {
            return Err(ConfigError::Invalid(format!(
                "model.d = {} must be a positive multiple of model.heads = {}",
                m.d, m.heads
            )));
        }
        if m.grid % crate::planner::ANCHORS_PER_SIDE != 0 {
            return Err(ConfigError::Invalid(format!(
                "model.grid = {} must be divisible by {}",
                m.grid,
                crate::planner::ANCHORS_PER_SIDE
            )));
        }
        if m.horizon == 0 || m.dt <= 0.0 {
            return Err(ConfigError::Invalid(
                "model.horizon and model.dt must be positive".into(),
            ));
        }
        if m.k_queries == 0 || m.wm_layers == 0 || m.dit_layers == 0 || m.ffn_width == 0 {
            return Err(ConfigError::Invalid(
                "model.k_queries / model.wm_layers / model.dit_layers / model.ffn_width must be positive"
                    .into(),
            ));
        }
        crate::schedules::build_ddpm_schedule(m.s_train, self.beta_1, self.beta_s)
            .map_err(|e| ConfigError::Invalid(format!("diffusion.beta_1/beta_s: {e}")))?;
        if self.s_sample == 0 || self.s_sample > m.s_train {
            return Err(ConfigError::Invalid(format!(
                "diffusion.s_sample = {} must be in [1, model.s_train = {}]",
                self.s_sample, m.s_train
            )));
        }
        self.pfg
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("pfg: {e}")))?;
        self.anneal()
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("anneal: {e}")))?;
        self.cond
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("cond: {e}")))?;
        self.switches
            .validate()
            .map_err(ConfigError::Invalid)?;
        if self.batch == 0 || self.epochs == 0 {
            return Err(ConfigError::Invalid(
                "train.batch and train.epochs must be positive".into(),
            ));
        }
        if self.train_scenes == 0 || self.val_scenes == 0 {
            return Err(ConfigError::Invalid(
                "data.train_scenes and data.val_scenes must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.no_future_frac) {
            return Err(ConfigError::Invalid(format!(
                "data.no_future_frac = {} outside [0, 1]",
                self.no_future_frac
            )));
        }
        if self.t_f <= 0.0 {
            return Err(ConfigError::Invalid(format!("data.t_f = {} must be positive", self.t_f)));
        }
        if self.proposals == 0 || self.stage2_k == 0 {
            return Err(ConfigError::Invalid(
                "eval.proposals and eval.stage2_k must be positive".into(),
            ));
        }
        if self.stage2_sigma <= 0.0 {
            return Err(ConfigError::Invalid(format!(
                "eval.stage2_sigma = {} must be positive",
                self.stage2_sigma
            )));
        }
        Ok(())
    }

    /// Full key = value snapshot; parsing it back reproduces this config.
    pub fn to_text(&self) -> String {
        let b = |v: bool| if v { "true" } else { "false" };
        let list_u = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let list_f = |v: &[f32]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let list_d = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        format!(
            "ablate.e0_grid = {}\n\
             ablate.eval_seeds = {}\n\
             ablate.k_grid = {}\n\
             ablate.t_f_grid = {}\n\
             ablate.variants = {}\n\
             anneal.beta_slope = {}\n\
             anneal.rho_e = {}\n\
             cond.p_gt = {}\n\
             cond.p_kin = {}\n\
             cond.p_null = {}\n\
             data.cell_m = {}\n\
             data.no_future_frac = {}\n\
             data.t_f = {}\n\
             data.train_scenes = {}\n\
             data.val_scenes = {}\n\
             diffusion.beta_1 = {}\n\
             diffusion.beta_s = {}\n\
             diffusion.s_sample = {}\n\
             eval.deterministic = {}\n\
             eval.proposals = {}\n\
             eval.scenes = {}\n\
             eval.stage2_k = {}\n\
             eval.stage2_lateral = {}\n\
             eval.stage2_sigma = {}\n\
             loss.lambda_bev = {}\n\
             loss.lambda_plan = {}\n\
             model.d = {}\n\
             model.dit_layers = {}\n\
             model.dt = {}\n\
             model.ffn_width = {}\n\
             model.grid = {}\n\
             model.heads = {}\n\
             model.horizon = {}\n\
             model.k_queries = {}\n\
             model.s_train = {}\n\
             model.wm_layers = {}\n\
             pfg.nu = {}\n\
             pfg.rho = {}\n\
             pfg.w_max_kin = {}\n\
             pfg.w_max_tw = {}\n\
             seed = {}\n\
             switches.force_alpha_one = {}\n\
             switches.use_dspcfg = {}\n\
             switches.use_interact = {}\n\
             switches.use_kinematic_extrap = {}\n\
             switches.use_wm = {}\n\
             switches.use_wm_to_dit = {}\n\
             train.batch = {}\n\
             train.epochs = {}\n\
             train.grad_clip = {}\n\
             train.lr = {}\n",
            list_d(&self.ablate_e0_grid),
            self.ablate_eval_seeds,
            list_u(&self.ablate_k_grid),
            list_f(&self.ablate_t_f_grid),
            self.ablate_variants.join(","),
            self.anneal_beta_slope,
            self.anneal_rho_e,
            self.cond.p_gt,
            self.cond.p_kin,
            self.cond.p_null,
            self.cell_m,
            self.no_future_frac,
            self.t_f,
            self.train_scenes,
            self.val_scenes,
            self.beta_1,
            self.beta_s,
            self.s_sample,
            b(self.deterministic),
            self.proposals,
            self.eval_scenes,
            self.stage2_k,
            self.stage2_lateral,
            self.stage2_sigma,
            self.lambda_bev,
            self.lambda_plan,
            self.model.d,
            self.model.dit_layers,
            self.model.dt,
            self.model.ffn_width,
            self.model.grid,
            self.model.heads,
            self.model.horizon,
            self.model.k_queries,
            self.model.s_train,
            self.model.wm_layers,
            self.pfg.nu,
            self.pfg.rho,
            self.pfg.w_max_kin,
            self.pfg.w_max_tw,
            self.seed,
            b(self.switches.force_alpha_one),
            b(self.switches.use_dspcfg),
            b(self.switches.use_interact),
            b(self.switches.use_kinematic_extrap),
            b(self.switches.use_wm),
            b(self.switches.use_wm_to_dit),
            self.batch,
            self.epochs,
            self.grad_clip,
            self.lr,
        )
    }
}

fn split_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError> {
    let v = value.trim();
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|s| {
            s.trim().parse::<T>().map_err(|_| ConfigError::BadValue {
                key: key.to_string(),
                reason: format!("cannot parse list item `{s}`"),
            })
        })
        .collect()
}

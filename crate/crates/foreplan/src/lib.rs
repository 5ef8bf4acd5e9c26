//! Foresight-conditioned diffusion trajectory planning sandbox.
//!
//! A trajectory-conditioned latent dynamics predictor, a future alignment
//! adapter with annealed conditioning, a future-conditioned diffusion
//! planner with progressive foresight guidance, a synthetic 2-D driving
//! world, and a rule-based scoring engine, all on a minimal differentiable
//! compute kernel.

pub mod cli;
pub mod commands;
pub mod config;
pub mod env;
pub mod evaluate;
pub mod geom2d;
pub mod geometry;
pub mod metrics;
pub mod nn;
pub mod pfg;
pub mod planner;
pub mod rng;
pub mod schedules;
pub mod telemetry;
pub mod world_model;

pub use cli::run_cli;

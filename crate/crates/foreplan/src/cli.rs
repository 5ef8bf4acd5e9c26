//! Command-line front end: gen-data, train, eval, ablate.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::{cmd_ablate, cmd_eval, cmd_gen_data, cmd_train};
use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "foreplan", about = "Foresight-conditioned diffusion trajectory planning sandbox")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration file (key = value lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Proposal count override.
    #[arg(long)]
    proposals: Option<usize>,
    /// Noise-free reverse updates during sampling.
    #[arg(long)]
    deterministic: bool,
    #[arg(long)]
    use_wm: Option<bool>,
    #[arg(long)]
    use_wm_to_dit: Option<bool>,
    #[arg(long)]
    use_interact: Option<bool>,
    #[arg(long)]
    force_alpha_one: Option<bool>,
    #[arg(long)]
    use_dspcfg: Option<bool>,
    #[arg(long)]
    use_kinematic_extrap: Option<bool>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, String> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path).map_err(|e| e.to_string())?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(p) = self.proposals {
            cfg.proposals = p;
        }
        if self.deterministic {
            cfg.deterministic = true;
        }
        if let Some(v) = self.use_wm {
            cfg.switches.use_wm = v;
            if !v {
                cfg.switches.use_wm_to_dit = false;
                cfg.switches.use_interact = false;
            }
        }
        if let Some(v) = self.use_wm_to_dit {
            cfg.switches.use_wm_to_dit = v;
        }
        if let Some(v) = self.use_interact {
            cfg.switches.use_interact = v;
        }
        if let Some(v) = self.force_alpha_one {
            cfg.switches.force_alpha_one = v;
        }
        if let Some(v) = self.use_dspcfg {
            cfg.switches.use_dspcfg = v;
        }
        if let Some(v) = self.use_kinematic_extrap {
            cfg.switches.use_kinematic_extrap = v;
        }
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/val scene datasets.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train the planner; checkpoints per epoch under --out.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory (defaults to <out>/data).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Continue a previous run found in the training directory.
        #[arg(long)]
        resume: bool,
    },
    /// Two-stage closed-loop evaluation of a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Checkpoint path (defaults to <out>/train/model.ckpt).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Sweep the configured ablation grids into one results table.
    Ablate {
        #[command(flatten)]
        common: Common,
    },
}

pub fn run_cli() -> i32 {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenData { common } => common
            .resolve()
            .map_err(CliFailure::Config)
            .and_then(|cfg| {
                cmd_gen_data(&cfg, &common.out.join("data")).map_err(CliFailure::from)
            })
            .map(|_| ()),
        Command::Train { common, data, resume } => {
            common.resolve().map_err(CliFailure::Config).and_then(|cfg| {
                let data_dir = data.clone().unwrap_or_else(|| common.out.join("data"));
                cmd_train(&cfg, &data_dir, &common.out.join("train"), *resume)
                    .map(|report| {
                        println!(
                            "trained {} epochs, {} steps, final loss {:.4}",
                            report.epochs_run, report.steps, report.final_loss
                        );
                    })
                    .map_err(CliFailure::from)
            })
        }
        Command::Eval { common, data, checkpoint } => {
            common.resolve().map_err(CliFailure::Config).and_then(|cfg| {
                let data_dir = data.clone().unwrap_or_else(|| common.out.join("data"));
                let ckpt = checkpoint
                    .clone()
                    .unwrap_or_else(|| common.out.join("train").join("model.ckpt"));
                cmd_eval(&cfg, &data_dir, &ckpt, &common.out.join("eval"))
                    .map(|agg| {
                        println!(
                            "navhard EPDMS {:.4} | stage-1 EPDMS {:.4} | stage-1 PDMS {:.4} ({} scenes)",
                            agg.mean_navhard_epdms,
                            agg.mean_stage1_epdms,
                            agg.mean_stage1_pdms,
                            agg.scenes
                        );
                    })
                    .map_err(CliFailure::from)
            })
        }
        Command::Ablate { common } => common
            .resolve()
            .map_err(CliFailure::Config)
            .and_then(|cfg| cmd_ablate(&cfg, &common.out.join("ablate")).map_err(CliFailure::from)),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

enum CliFailure {
    Config(String),
    Cmd(crate::commands::CmdError),
}

impl From<crate::commands::CmdError> for CliFailure {
    fn from(e: crate::commands::CmdError) -> Self {
        CliFailure::Cmd(e)
    }
}

impl std::fmt::Display for CliFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliFailure::Config(s) => write!(f, "{s}"),
            CliFailure::Cmd(e) => write!(f, "{e}"),
        }
    }
}

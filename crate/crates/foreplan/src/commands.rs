//! Command implementations behind the CLI: dataset generation, training,
//! closed-loop evaluation, and ablation sweeps. Every run snapshots its
//! resolved configuration next to its outputs.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::config::RunConfig;
use crate::env::dataset::{
    generate_records, load_dataset, write_dataset, DatasetConfig, SceneRecord,
};
use crate::env::raster::RasterConfig;
use crate::evaluate::{aggregate, evaluate_split, Aggregates, EvalSetup, SceneEval};
use crate::geometry::compute_norm_stats;
use crate::nn::adam::AdamState;
use crate::nn::checkpoint;
use crate::nn::Tensor;
use crate::planner::{train_step, Model, TrainCtx};
use crate::rng::{mix, stream_rng, Purpose};
use crate::schedules::{anneal_alpha, build_ddpm_schedule};

#[derive(Debug, thiserror::Error)]
pub enum CmdError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Dataset(#[from] crate::env::dataset::DatasetError),
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
    #[error(transparent)]
    Planner(#[from] crate::planner::PlannerError),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error(transparent)]
    Eval(#[from] crate::evaluate::EvalError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Other(String),
}

fn write_snapshot(cfg: &RunConfig, dir: &Path) -> Result<(), CmdError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("run.cfg"), cfg.to_text())?;
    Ok(())
}

fn dataset_config(cfg: &RunConfig) -> DatasetConfig {
    DatasetConfig {
        raster: RasterConfig { cells: cfg.model.grid, cell_m: cfg.cell_m },
        horizon: cfg.model.horizon,
        dt: cfg.model.dt,
        t_f: cfg.t_f,
        no_future_frac: cfg.no_future_frac,
    }
}

fn split_seed(seed: u64, tag: u64) -> u64 {
    mix(seed ^ mix(tag))
}

/// Generate train/val splits plus a manifest of seeds and counts.
pub fn cmd_gen_data(cfg: &RunConfig, out: &Path) -> Result<(), CmdError> {
    cfg.validate()?;
    let ds_cfg = dataset_config(cfg);
    std::fs::create_dir_all(out)?;
    let train_seed = split_seed(cfg.seed, 1);
    let val_seed = split_seed(cfg.seed, 2);
    let train = generate_records(cfg.train_scenes, train_seed, &ds_cfg);
    write_dataset(&train, train_seed, &ds_cfg, &out.join("train"))?;
    let val = generate_records(cfg.val_scenes, val_seed, &ds_cfg);
    write_dataset(&val, val_seed, &ds_cfg, &out.join("val"))?;
    let mut manifest = std::io::BufWriter::new(std::fs::File::create(out.join("manifest.txt"))?);
    writeln!(manifest, "foreplan-manifest v1")?;
    writeln!(manifest, "root_seed {}", cfg.seed)?;
    writeln!(manifest, "train {} {}", cfg.train_scenes, train_seed)?;
    writeln!(manifest, "val {} {}", cfg.val_scenes, val_seed)?;
    drop(manifest);
    write_snapshot(cfg, out)?;
    Ok(())
}

const ADAM_STEP_KEY: &str = "adam.step";

fn save_adam(adam: &AdamState, path: &Path) -> Result<(), CmdError> {
    let tensors = adam
        .moment_tensors()
        .flat_map(|(name, m, v)| {
            vec![
                (format!("m.{name}"), m.clone()),
                (format!("v.{name}"), v.clone()),
            ]
        })
        .chain(std::iter::once((
            ADAM_STEP_KEY.to_string(),
            Tensor::scalar(adam.step as f32),
        )));
    checkpoint::save_named(tensors, path)?;
    Ok(())
}

fn load_adam(lr: f32, path: &Path) -> Result<AdamState, CmdError> {
    let mut tensors = checkpoint::load_named(path)?;
    let mut adam = AdamState::new(lr);
    adam.step = tensors
        .remove(ADAM_STEP_KEY)
        .map(|t| t.data[0] as u64)
        .unwrap_or(0);
    let names: Vec<String> = tensors
        .keys()
        .filter(|k| k.starts_with("m."))
        .map(|k| k[2..].to_string())
        .collect();
    for name in names {
        let m = tensors.remove(&format!("m.{name}")).unwrap();
        let v = tensors
            .remove(&format!("v.{name}"))
            .ok_or_else(|| CmdError::Other(format!("optimizer state missing v.{name}")))?;
        adam.set_moments(&name, m, v);
    }
    Ok(adam)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub steps: usize,
    pub final_loss: f64,
}

fn read_train_state(dir: &Path) -> Option<usize> {
    let text = std::fs::read_to_string(dir.join("train_state.txt")).ok()?;
    text.lines()
        .find_map(|l| l.strip_prefix("epochs_done = "))
        .and_then(|v| v.trim().parse().ok())
}

/// Train for `cfg.epochs` total epochs (resuming skips completed ones),
/// checkpointing per epoch and appending the loss curve.
pub fn cmd_train(
    cfg: &RunConfig,
    data_dir: &Path,
    out: &Path,
    resume: bool,
) -> Result<TrainReport, CmdError> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    let (_, records) = load_dataset(&data_dir.join("train"))?;
    let (mut store, model, mut adam, start_epoch) = if resume {
        let done = read_train_state(out)
            .ok_or_else(|| CmdError::Other(format!("no train state in {}", out.display())))?;
        let (store, model) = Model::load(&cfg.model, &out.join("model.ckpt"))?;
        let adam = load_adam(cfg.lr, &out.join("optim.ckpt"))?;
        (store, model, adam, done)
    } else {
        let (store, mut model) = Model::init(&cfg.model, cfg.seed);
        let experts: Vec<_> = records.iter().map(|r| r.expert.clone()).collect();
        model.stats = compute_norm_stats(&experts)?;
        (store, model, AdamState::new(cfg.lr), 0)
    };
    let ctx = TrainCtx {
        schedule: build_ddpm_schedule(cfg.model.s_train, cfg.beta_1, cfg.beta_s)
            .map_err(|e| CmdError::Other(e.to_string()))?,
        cond: cfg.cond,
        switches: cfg.switches,
        lambda_plan: cfg.lambda_plan,
        lambda_bev: cfg.lambda_bev,
    };
    let anneal = cfg.anneal();
    let curve_path = out.join("curve.csv");
    let mut curve = if start_epoch == 0 {
        let mut f = std::fs::File::create(&curve_path)?;
        writeln!(f, "step,loss_total,loss_plan,loss_bev")?;
        f
    } else {
        std::fs::OpenOptions::new().append(true).open(&curve_path)?
    };
    let steps_per_epoch = records.len().div_ceil(cfg.batch);
    let mut global_step = start_epoch * steps_per_epoch;
    let mut final_loss = 0.0f64;
    for epoch in start_epoch..cfg.epochs {
        let alpha = anneal_alpha(epoch as f64, &anneal) as f32;
        let mut rng = stream_rng(cfg.seed, Purpose::Train, epoch as u64);
        let mut order: Vec<usize> = (0..records.len()).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<&SceneRecord> = chunk.iter().map(|&i| &records[i]).collect();
            let losses = train_step(
                &mut store,
                &model,
                &ctx,
                &batch,
                alpha,
                &mut rng,
                &mut adam,
                cfg.grad_clip,
            )?;
            global_step += 1;
            final_loss = losses.total;
            writeln!(
                curve,
                "{},{:.6},{:.6},{:.6}",
                global_step, losses.total, losses.plan, losses.bev
            )?;
        }
        model.save(&store, &out.join(format!("model_epoch{epoch}.ckpt")))?;
        model.save(&store, &out.join("model.ckpt"))?;
        save_adam(&adam, &out.join("optim.ckpt"))?;
        std::fs::write(
            out.join("train_state.txt"),
            format!("epochs_done = {}\n", epoch + 1),
        )?;
    }
    write_snapshot(cfg, out)?;
    Ok(TrainReport { epochs_run: cfg.epochs - start_epoch, steps: global_step, final_loss })
}

#[derive(Debug, Serialize)]
struct SceneRow {
    id: u64,
    kind: String,
    stage1_epdms: f32,
    stage2_epdms: f32,
    navhard_epdms: f32,
    stage1_pdms: f32,
    agent: crate::metrics::Subscores,
    human: crate::metrics::Subscores,
}

#[derive(Debug, Serialize)]
struct Report {
    scenes: Vec<SceneRow>,
    aggregates: Aggregates,
}

#[derive(Debug, Serialize)]
struct ProposalRow<'a> {
    scene_id: u64,
    proposal_id: u64,
    poses: Vec<[f32; 3]>,
    subscores: &'a crate::metrics::Subscores,
    score: f32,
    selected: bool,
}

fn write_eval_outputs(
    out: &Path,
    results: &[SceneEval],
    records: &[SceneRecord],
) -> Result<Aggregates, CmdError> {
    std::fs::create_dir_all(out.join("plots"))?;
    let agg = aggregate(results);
    let rows: Vec<SceneRow> = results
        .iter()
        .map(|r| SceneRow {
            id: r.id,
            kind: r.kind.name().to_string(),
            stage1_epdms: r.stage1.epdms,
            stage2_epdms: r.s2,
            navhard_epdms: r.navhard,
            stage1_pdms: r.stage1.pdms,
            agent: r.stage1.agent,
            human: r.stage1.human,
        })
        .collect();
    let report = Report { scenes: rows, aggregates: agg.clone() };
    std::fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)?)?;

    let mut proposals = std::io::BufWriter::new(std::fs::File::create(out.join("proposals.jsonl"))?);
    for r in results {
        for (i, p) in r.stage1.set.proposals.iter().enumerate() {
            let row = ProposalRow {
                scene_id: r.id,
                proposal_id: p.stream_id,
                poses: p.trajectory.poses.iter().map(|q| [q.x, q.y, q.theta]).collect(),
                subscores: &r.stage1.proposal_subscores[i],
                score: p.score.unwrap_or(0.0),
                selected: i == r.stage1.best,
            };
            writeln!(proposals, "{}", serde_json::to_string(&row)?)?;
        }
    }
    drop(proposals);

    let mut summary = String::new();
    summary.push_str("scene  kind          s1_epdms  s2_epdms  navhard  s1_pdms\n");
    for r in results {
        summary.push_str(&format!(
            "{:<6} {:<13} {:>8.4}  {:>8.4}  {:>7.4}  {:>7.4}\n",
            r.id,
            r.kind.name(),
            r.stage1.epdms,
            r.s2,
            r.navhard,
            r.stage1.pdms
        ));
    }
    summary.push_str(&format!(
        "\nmean navhard EPDMS  {:.4}\nmean stage-1 EPDMS  {:.4}\nmean stage-2 EPDMS  {:.4}\nmean stage-1 PDMS   {:.4}\n",
        agg.mean_navhard_epdms, agg.mean_stage1_epdms, agg.mean_stage2_epdms, agg.mean_stage1_pdms
    ));
    let s = &agg.stage1_subscores;
    summary.push_str(&format!(
        "subscore means: nc {:.4} dac {:.4} ddc {:.4} tlc {:.4} ep {:.4} ttc {:.4} comfort {:.4} lk {:.4} hc {:.4} ec {:.4}\n",
        s.nc, s.dac, s.ddc, s.tlc, s.ep, s.ttc, s.comfort, s.lk, s.hc, s.ec
    ));
    std::fs::write(out.join("summary.txt"), summary)?;

    // Plot data: expert and selected-plan polylines per scene, plus a score
    // table.
    for (r, rec) in results.iter().zip(records) {
        let mut text = String::new();
        for p in &rec.expert.poses {
            text.push_str(&format!("{} {}\n", p.x, p.y));
        }
        text.push('\n');
        for p in &r.stage1.selected.poses {
            text.push_str(&format!("{} {}\n", p.x, p.y));
        }
        text.push('\n');
        std::fs::write(out.join("plots").join(format!("scene_{:04}.txt", r.id)), text)?;
    }
    let mut scores = String::from("scene\tnavhard_epdms\tstage1_epdms\tstage1_pdms\n");
    for r in results {
        scores.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            r.id, r.navhard, r.stage1.epdms, r.stage1.pdms
        ));
    }
    std::fs::write(out.join("plots").join("scores.txt"), scores)?;
    Ok(agg)
}

/// Two-stage evaluation over the validation split; writes the report,
/// summary table, proposal logs, and plot data.
pub fn cmd_eval(
    cfg: &RunConfig,
    data_dir: &Path,
    ckpt: &Path,
    out: &Path,
) -> Result<Aggregates, CmdError> {
    cfg.validate()?;
    if !ckpt.exists() {
        return Err(CmdError::Other(format!("checkpoint {} not found", ckpt.display())));
    }
    std::fs::create_dir_all(out)?;
    let (_, records) = load_dataset(&data_dir.join("val"))?;
    let records: Vec<SceneRecord> = if cfg.eval_scenes > 0 {
        records.into_iter().take(cfg.eval_scenes).collect()
    } else {
        records
    };
    let (store, model) = Model::load(&cfg.model, ckpt)?;
    let setup = EvalSetup::from_config(cfg)?;
    let sample_seed = crate::rng::derive(cfg.seed, Purpose::Eval);
    let results = evaluate_split(&store, &model, &setup, &records, sample_seed)?;
    let agg = write_eval_outputs(out, &results, &records)?;
    write_snapshot(cfg, out)?;
    Ok(agg)
}

#[derive(Debug, Clone)]
struct Variant {
    name: String,
    cfg: RunConfig,
    /// Variants sharing a training signature reuse the same checkpoint.
    train_sig: String,
}

fn variant_list(base: &RunConfig) -> Result<Vec<Variant>, CmdError> {
    let mut out = Vec::new();
    let mut push = |name: String, cfg: RunConfig| {
        let s = &cfg.switches;
        let sig = format!(
            "wm{}_dit{}_int{}_fa{}_k{}_tf{}_e0{}",
            s.use_wm as u8,
            s.use_wm_to_dit as u8,
            s.use_interact as u8,
            s.force_alpha_one as u8,
            cfg.model.k_queries,
            cfg.t_f,
            cfg.anneal_rho_e
        );
        out.push(Variant { name, cfg, train_sig: sig });
    };
    for name in &base.ablate_variants {
        let mut cfg = base.clone();
        match name.as_str() {
            "full" => {}
            "no_wm" => cfg.switches = crate::planner::AblationSwitches::no_world_model(),
            "no_guidance" => cfg.switches = crate::planner::AblationSwitches::no_guidance(),
            "force_alpha_one" => cfg.switches.force_alpha_one = true,
            other => {
                return Err(CmdError::Other(format!(
                    "unknown ablation variant `{other}` (expected full, no_wm, no_guidance, force_alpha_one)"
                )))
            }
        }
        push(name.clone(), cfg);
    }
    for &k in &base.ablate_k_grid {
        let mut cfg = base.clone();
        cfg.model.k_queries = k;
        push(format!("k{k}"), cfg);
    }
    for &tf in &base.ablate_t_f_grid {
        let mut cfg = base.clone();
        cfg.t_f = tf;
        push(format!("tf{tf}"), cfg);
    }
    for &e0 in &base.ablate_e0_grid {
        let mut cfg = base.clone();
        cfg.anneal_rho_e = e0;
        push(format!("e0{e0}"), cfg);
    }
    Ok(out)
}


/// Sweep the configured variant/hyperparameter grids: train each distinct
/// training signature once, evaluate every variant over the ablation seeds,
/// and emit one row per variant.
pub fn cmd_ablate(cfg: &RunConfig, out: &Path) -> Result<(), CmdError> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    let variants = variant_list(cfg)?;
    if variants.is_empty() {
        return Err(CmdError::Other("empty ablation grid".into()));
    }
    let mut trained: std::collections::BTreeMap<String, PathBuf> = Default::default();
    let mut datasets: std::collections::BTreeMap<String, PathBuf> = Default::default();
    let mut rows = Vec::new();
    for v in &variants {
        v.cfg.validate()?;
        let data_key = format!("tf{}", v.cfg.t_f);
        let data_dir = match datasets.get(&data_key) {
            Some(d) => d.clone(),
            None => {
                let dir = out.join(format!("data_{data_key}"));
                if !dir.join("train").join("index.jsonl").exists() {
                    cmd_gen_data(&v.cfg, &dir)?;
                }
                datasets.insert(data_key.clone(), dir.clone());
                dir
            }
        };
        let ckpt = match trained.get(&v.train_sig) {
            Some(p) => p.clone(),
            None => {
                let dir = out.join(format!("train_{}", v.train_sig));
                let path = dir.join("model.ckpt");
                // Partial sweeps resume: an existing checkpoint is reused.
                if !path.exists() {
                    cmd_train(&v.cfg, &data_dir, &dir, false)?;
                }
                trained.insert(v.train_sig.clone(), path.clone());
                path
            }
        };
        let (_, records) = load_dataset(&data_dir.join("val"))?;
        let records: Vec<SceneRecord> = if v.cfg.eval_scenes > 0 {
            records.into_iter().take(v.cfg.eval_scenes).collect()
        } else {
            records
        };
        let (store, model) = Model::load(&v.cfg.model, &ckpt)?;
        let setup = EvalSetup::from_config(&v.cfg)?;
        let mut means = Vec::new();
        for s in 0..v.cfg.ablate_eval_seeds {
            let sample_seed = crate::rng::derive(mix(cfg.seed ^ mix(s as u64)), Purpose::Eval);
            let results = evaluate_split(&store, &model, &setup, &records, sample_seed)?;
            means.push(aggregate(&results));
        }
        let n = means.len() as f64;
        let navhard = means.iter().map(|a| a.mean_navhard_epdms).sum::<f64>() / n;
        let s1 = means.iter().map(|a| a.mean_stage1_epdms).sum::<f64>() / n;
        let pdms = means.iter().map(|a| a.mean_stage1_pdms).sum::<f64>() / n;
        rows.push(format!(
            "{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}",
            v.name, v.cfg.model.k_queries, v.cfg.t_f, v.cfg.anneal_rho_e, navhard, s1, pdms
        ));
    }
    let mut table = String::from("variant\tk\tt_f\te0\tnavhard_epdms\tstage1_epdms\tstage1_pdms\n");
    for row in rows {
        table.push_str(&row);
        table.push('\n');
    }
    std::fs::write(out.join("ablate.tsv"), table)?;
    write_snapshot(cfg, out)?;
    Ok(())
}

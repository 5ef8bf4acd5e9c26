//! Dataset builder and loader. Layout: a JSONL index (header line with
//! format version, then one record per scene with blob offsets) next to a
//! binary blob of raster class bytes and little-endian f32 trajectories.

use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::expert::{expert_trajectory, pose_at_time};
use crate::env::raster::{rasterize_bev, BevRaster, RasterConfig};
use crate::env::scenario::{generate_scenario, step_agents, Kind, Scenario};
use crate::geometry::{Command, EgoStatus, Pose, Trajectory};
use crate::rng::mix;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("index parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("bad dataset: {0}")]
    Malformed(String),
}

pub const DATASET_FORMAT: &str = "foreplan-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format: String,
    pub version: u32,
    pub n: usize,
    pub grid: usize,
    pub cell_m: f32,
    pub horizon: usize,
    pub dt: f32,
    pub t_f: f32,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IndexRecord {
    id: u64,
    seed: u64,
    kind: String,
    has_future: bool,
    status: [f32; 4],
    command: usize,
    raster_off: u64,
    expert_off: u64,
    future_off: Option<u64>,
}

/// One training/eval scene: privileged raster observation, ego status,
/// expert plan, and (for most scenes) the observation at the future frame.
#[derive(Debug, Clone)]
pub struct SceneRecord {
    pub id: u64,
    pub seed: u64,
    pub kind: Kind,
    pub status: EgoStatus,
    pub raster: BevRaster,
    pub expert: Trajectory,
    pub future_raster: Option<BevRaster>,
    pub has_future: bool,
}

impl SceneRecord {
    /// Rebuild the full scenario; generation is deterministic in (seed, kind).
    pub fn scenario(&self) -> Scenario {
        generate_scenario(self.seed, self.kind)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DatasetConfig {
    pub raster: RasterConfig,
    pub horizon: usize,
    pub dt: f32,
    /// Future-frame lookahead in seconds.
    pub t_f: f32,
    /// Trailing fraction of scenes without a future frame.
    pub no_future_frac: f32,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            raster: RasterConfig::default(),
            horizon: 8,
            dt: 0.5,
            t_f: 1.5,
            no_future_frac: 0.1,
        }
    }
}

/// Generate one scene record in memory.
pub fn make_scene(scene_seed: u64, kind: Kind, cfg: &DatasetConfig, has_future: bool) -> SceneRecord {
    let scenario = generate_scenario(scene_seed, kind);
    let status = scenario.ego_status();
    let origin = Pose::new(0.0, 0.0, 0.0);
    let raster = rasterize_bev(&scenario, origin, &cfg.raster);
    let expert = expert_trajectory(&scenario, cfg.horizon, cfg.dt);
    let future_raster = if has_future {
        let future_scene = step_agents(&scenario, cfg.t_f);
        let future_ego = pose_at_time(&expert, origin, cfg.t_f);
        Some(rasterize_bev(&future_scene, future_ego, &cfg.raster))
    } else {
        None
    };
    SceneRecord {
        id: scene_seed,
        seed: scene_seed,
        kind,
        status,
        raster,
        expert,
        future_raster,
        has_future,
    }
}

/// Deterministic dataset of `n` scenes derived from `seed`. Kinds rotate
/// round-robin; the trailing `no_future_frac` of scenes lack future frames.
pub fn generate_records(n: usize, seed: u64, cfg: &DatasetConfig) -> Vec<SceneRecord> {
    let cutoff = n - (n as f32 * cfg.no_future_frac).round() as usize;
    (0..n)
        .map(|i| {
            let scene_seed = mix(seed ^ mix(i as u64 + 1));
            let kind = Kind::from_index(i);
            let mut rec = make_scene(scene_seed, kind, cfg, i < cutoff);
            rec.id = i as u64;
            rec
        })
        .collect()
}

pub fn write_dataset(
    records: &[SceneRecord],
    seed: u64,
    cfg: &DatasetConfig,
    dir: &Path,
) -> Result<(), DatasetError> {
    std::fs::create_dir_all(dir)?;
    let mut index = std::io::BufWriter::new(std::fs::File::create(dir.join("index.jsonl"))?);
    let mut blob = std::io::BufWriter::new(std::fs::File::create(dir.join("data.blob"))?);
    let meta = DatasetMeta {
        format: DATASET_FORMAT.to_string(),
        version: DATASET_VERSION,
        n: records.len(),
        grid: cfg.raster.cells,
        cell_m: cfg.raster.cell_m,
        horizon: cfg.horizon,
        dt: cfg.dt,
        t_f: cfg.t_f,
        seed,
    };
    writeln!(index, "{}", serde_json::to_string(&meta)?)?;
    let mut off = 0u64;
    for rec in records {
        let raster_off = off;
        blob.write_all(&rec.raster.grid)?;
        off += rec.raster.grid.len() as u64;
        let expert_off = off;
        for p in &rec.expert.poses {
            for v in [p.x, p.y, p.theta] {
                blob.write_all(&v.to_le_bytes())?;
            }
        }
        off += (rec.expert.poses.len() * 12) as u64;
        let future_off = rec.future_raster.as_ref().map(|f| {
            let o = off;
            off += f.grid.len() as u64;
            o
        });
        if let Some(f) = &rec.future_raster {
            blob.write_all(&f.grid)?;
        }
        let row = IndexRecord {
            id: rec.id,
            seed: rec.seed,
            kind: rec.kind.name().to_string(),
            has_future: rec.has_future,
            status: [rec.status.vx, rec.status.vy, rec.status.ax, rec.status.ay],
            command: rec.status.command.index(),
            raster_off,
            expert_off,
            future_off,
        };
        writeln!(index, "{}", serde_json::to_string(&row)?)?;
    }
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<(DatasetMeta, Vec<SceneRecord>), DatasetError> {
    let index = BufReader::new(std::fs::File::open(dir.join("index.jsonl"))?);
    let mut blob = std::fs::File::open(dir.join("data.blob"))?;
    let mut lines = index.lines();
    let header = lines
        .next()
        .ok_or_else(|| DatasetError::Malformed("empty index".into()))??;
    let meta: DatasetMeta = serde_json::from_str(&header)?;
    if meta.format != DATASET_FORMAT || meta.version != DATASET_VERSION {
        return Err(DatasetError::Malformed(format!(
            "unsupported dataset {} v{}",
            meta.format, meta.version
        )));
    }
    let grid_bytes = meta.grid * meta.grid;
    let mut records = Vec::with_capacity(meta.n);
    for line in lines {
        let row: IndexRecord = serde_json::from_str(&line?)?;
        let kind = Kind::from_name(&row.kind)
            .ok_or_else(|| DatasetError::Malformed(format!("unknown kind {}", row.kind)))?;
        let mut raster_grid = vec![0u8; grid_bytes];
        blob.seek(SeekFrom::Start(row.raster_off))?;
        blob.read_exact(&mut raster_grid)?;
        let mut expert_bytes = vec![0u8; meta.horizon * 12];
        blob.seek(SeekFrom::Start(row.expert_off))?;
        blob.read_exact(&mut expert_bytes)?;
        let poses: Vec<Pose> = expert_bytes
            .chunks_exact(12)
            .map(|b| {
                Pose::new(
                    f32::from_le_bytes([b[0], b[1], b[2], b[3]]),
                    f32::from_le_bytes([b[4], b[5], b[6], b[7]]),
                    f32::from_le_bytes([b[8], b[9], b[10], b[11]]),
                )
            })
            .collect();
        let future_raster = match row.future_off {
            Some(o) => {
                let mut g = vec![0u8; grid_bytes];
                blob.seek(SeekFrom::Start(o))?;
                blob.read_exact(&mut g)?;
                Some(BevRaster { cells: meta.grid, cell_m: meta.cell_m, grid: g })
            }
            None => None,
        };
        if row.has_future != future_raster.is_some() {
            return Err(DatasetError::Malformed(format!(
                "scene {}: has_future flag disagrees with stored data",
                row.id
            )));
        }
        records.push(SceneRecord {
            id: row.id,
            seed: row.seed,
            kind,
            status: EgoStatus {
                vx: row.status[0],
                vy: row.status[1],
                ax: row.status[2],
                ay: row.status[3],
                command: Command::from_index(row.command),
            },
            raster: BevRaster { cells: meta.grid, cell_m: meta.cell_m, grid: raster_grid },
            expert: Trajectory::new(poses, meta.dt),
            future_raster,
            has_future: row.has_future,
        });
    }
    Ok((meta, records))
}

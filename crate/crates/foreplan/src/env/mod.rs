//! Synthetic 2-D driving world: scenario generation, agent dynamics,
//! semantic rasterization, a scripted expert, dataset building, and
//! two-stage evaluation episodes.

pub mod dataset;
pub mod episode;
pub mod expert;
pub mod raster;
pub mod scenario;

pub use dataset::{
    generate_records, load_dataset, make_scene, write_dataset, DatasetConfig, DatasetError,
    DatasetMeta, SceneRecord,
};
pub use episode::{stage1_context, to_local, to_world, two_stage_episode, EvalContext, Stage2Config};
pub use expert::{expert_from, expert_trajectory, pose_at_time};
pub use raster::{rasterize_bev, BevRaster, CellClass, RasterConfig, NUM_CLASSES};
pub use scenario::{
    generate_scenario, step_agents, Agent, Kind, Lane, Obstacle, Scenario, EGO_HALF_LEN,
    EGO_HALF_WID, LANE_HALF_WIDTH,
};

//! Ego-centered, heading-aligned semantic rasterization with a fixed
//! class precedence.

use crate::env::scenario::Scenario;
use crate::geom2d::Vec2;
use crate::geometry::Pose;

pub const NUM_CLASSES: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[repr(u8)]
pub enum CellClass {
    Background = 0,
    Road = 1,
    LaneMarking = 2,
    Centerline = 3,
    StaticObstacle = 4,
    Vehicle = 5,
    RouteGoal = 6,
}

#[derive(Debug, Clone, Copy)]
pub struct RasterConfig {
    pub cells: usize,
    pub cell_m: f32,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self { cells: 64, cell_m: 1.0 }
    }
}

/// Dense class-index grid. Row index grows with the ego-forward axis,
/// column index with the ego-left axis; the ego sits at the grid center.
#[derive(Debug, Clone, PartialEq)]
pub struct BevRaster {
    pub cells: usize,
    pub cell_m: f32,
    pub grid: Vec<u8>,
}

impl BevRaster {
    pub fn at(&self, r: usize, c: usize) -> u8 {
        self.grid[r * self.cells + c]
    }

    /// Ego-frame coordinates of a cell center.
    pub fn cell_center(&self, r: usize, c: usize) -> (f32, f32) {
        let half = self.cells as f32 / 2.0;
        (
            (r as f32 + 0.5 - half) * self.cell_m,
            (c as f32 + 0.5 - half) * self.cell_m,
        )
    }
}

/// Highest-precedence class per cell: background < road < lane-marking <
/// centerline < static-obstacle < vehicle < route-goal.
pub fn rasterize_bev(scenario: &Scenario, ego: Pose, cfg: &RasterConfig) -> BevRaster {
    let n = cfg.cells;
    let half = n as f32 / 2.0;
    let (cos_t, sin_t) = (ego.theta.cos(), ego.theta.sin());
    let mut grid = vec![CellClass::Background as u8; n * n];
    for r in 0..n {
        let xe = (r as f32 + 0.5 - half) * cfg.cell_m;
        for c in 0..n {
            let ye = (c as f32 + 0.5 - half) * cfg.cell_m;
            let p = Vec2::new(
                ego.x + cos_t * xe - sin_t * ye,
                ego.y + sin_t * xe + cos_t * ye,
            );
            let mut class = CellClass::Background as u8;
            for lane in &scenario.lanes {
                let d = lane.center.distance_to(p);
                if d <= lane.half_width {
                    class = class.max(if d > lane.half_width - 0.5 {
                        CellClass::LaneMarking as u8
                    } else {
                        CellClass::Road as u8
                    });
                }
                if d <= 0.5 {
                    class = class.max(CellClass::Centerline as u8);
                }
            }
            if scenario.obstacles.iter().any(|o| o.obb.contains(p)) {
                class = class.max(CellClass::StaticObstacle as u8);
            }
            if scenario.agents.iter().any(|a| a.obb_at(0.0).contains(p)) {
                class = class.max(CellClass::Vehicle as u8);
            }
            if p.sub(scenario.goal).norm() <= 1.0 {
                class = class.max(CellClass::RouteGoal as u8);
            }
            grid[r * n + c] = class;
        }
    }
    BevRaster { cells: n, cell_m: cfg.cell_m, grid }
}

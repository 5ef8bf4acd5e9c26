//! Synthetic scenario construction: lane geometry, scripted agents, static
//! obstacles, and a route goal, all deterministic in (seed, kind).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::geom2d::{Obb, Polyline, Vec2};
use crate::geometry::{Command, EgoStatus};
use crate::rng::mix;

pub const EGO_HALF_LEN: f32 = 2.0;
pub const EGO_HALF_WID: f32 = 0.9;
pub const LANE_HALF_WIDTH: f32 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Straight,
    Curve,
    Intersection,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Straight => "straight",
            Kind::Curve => "curve",
            Kind::Intersection => "intersection",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "straight" => Some(Kind::Straight),
            "curve" => Some(Kind::Curve),
            "intersection" => Some(Kind::Intersection),
            _ => None,
        }
    }

    pub fn from_index(i: usize) -> Self {
        match i % 3 {
            0 => Kind::Straight,
            1 => Kind::Curve,
            _ => Kind::Intersection,
        }
    }

    fn tag(self) -> u64 {
        match self {
            Kind::Straight => 0x51,
            Kind::Curve => 0x52,
            Kind::Intersection => 0x53,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Agent {
    pub pos: Vec2,
    pub theta: f32,
    pub vel: Vec2,
    pub half_len: f32,
    pub half_wid: f32,
}

impl Agent {
    /// Footprint after `t` seconds of constant-velocity motion.
    pub fn obb_at(&self, t: f32) -> Obb {
        Obb::new(self.pos.add(self.vel.scale(t)), self.theta, self.half_len, self.half_wid)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Obstacle {
    pub obb: Obb,
}

#[derive(Debug, Clone)]
pub struct Lane {
    pub center: Polyline,
    pub half_width: f32,
}

impl Lane {
    pub fn contains(&self, p: Vec2) -> bool {
        self.center.distance_to(p) <= self.half_width
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub seed: u64,
    pub kind: Kind,
    /// Lane 0 is the ego route.
    pub lanes: Vec<Lane>,
    pub agents: Vec<Agent>,
    pub obstacles: Vec<Obstacle>,
    pub goal: Vec2,
    pub cruise: f32,
    pub command: Command,
}

impl Scenario {
    pub fn route(&self) -> &Lane {
        &self.lanes[0]
    }

    pub fn drivable_contains(&self, p: Vec2) -> bool {
        self.lanes.iter().any(|l| l.contains(p))
    }

    pub fn ego_status(&self) -> EgoStatus {
        EgoStatus { vx: self.cruise, vy: 0.0, ax: 0.0, ay: 0.0, command: self.command }
    }
}

fn line_points(from: Vec2, to: Vec2, step: f32) -> Vec<Vec2> {
    let dir = to.sub(from);
    let len = dir.norm();
    let n = (len / step).ceil() as usize;
    let mut pts = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let t = i as f32 / n as f32;
        pts.push(from.add(dir.scale(t)));
    }
    pts
}

pub fn generate_scenario(seed: u64, kind: Kind) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ mix(kind.tag())));
    let cruise = rng.gen_range(4.0f32..8.0);
    let mut lanes = Vec::new();
    let mut agents: Vec<Agent> = Vec::new();
    let command;

    match kind {
        Kind::Straight => {
            command = Command::KeepLane;
            lanes.push(Lane {
                center: Polyline::new(line_points(
                    Vec2::new(-16.0, 0.0),
                    Vec2::new(80.0, 0.0),
                    2.0,
                )),
                half_width: LANE_HALF_WIDTH,
            });
        }
        Kind::Curve => {
            let radius = rng.gen_range(20.0f32..60.0);
            let left = rng.gen_bool(0.5);
            command = if left { Command::TurnLeft } else { Command::TurnRight };
            let mut pts = line_points(Vec2::new(-16.0, 0.0), Vec2::new(0.0, 0.0), 2.0);
            pts.pop();
            let arc_len = 70.0f32;
            let n = (arc_len / 2.0) as usize;
            for i in 0..=n {
                let s = arc_len * i as f32 / n as f32;
                let phi = s / radius;
                let (x, y) = (radius * phi.sin(), radius * (1.0 - phi.cos()));
                pts.push(Vec2::new(x, if left { y } else { -y }));
            }
            lanes.push(Lane { center: Polyline::new(pts), half_width: LANE_HALF_WIDTH });
        }
        Kind::Intersection => {
            command = Command::KeepLane;
            lanes.push(Lane {
                center: Polyline::new(line_points(
                    Vec2::new(-16.0, 0.0),
                    Vec2::new(60.0, 0.0),
                    2.0,
                )),
                half_width: LANE_HALF_WIDTH,
            });
            let xc = rng.gen_range(18.0f32..30.0);
            lanes.push(Lane {
                center: Polyline::new(line_points(
                    Vec2::new(xc, -40.0),
                    Vec2::new(xc, 40.0),
                    2.0,
                )),
                half_width: LANE_HALF_WIDTH,
            });
            // Crossing agent approaching the conflict point.
            let from_above = rng.gen_bool(0.5);
            let y0 = rng.gen_range(10.0f32..25.0) * if from_above { 1.0 } else { -1.0 };
            let speed = rng.gen_range(3.0f32..6.0);
            let dir = if from_above { -1.0 } else { 1.0 };
            agents.push(Agent {
                pos: Vec2::new(xc, y0),
                theta: dir * std::f32::consts::FRAC_PI_2,
                vel: Vec2::new(0.0, dir * speed),
                half_len: EGO_HALF_LEN,
                half_wid: EGO_HALF_WID,
            });
        }
    }

    let route_len = lanes[0].center.length();
    // Route traffic, spawned at least 10 m of arc ahead of the ego origin
    // (the origin sits 16 m into the route polyline).
    let n_agents = rng.gen_range(0..=3usize);
    for _ in 0..n_agents {
        let s = 16.0 + rng.gen_range(10.0f32..(route_len - 26.0).max(11.0));
        let lat = rng.gen_range(-1.0f32..1.0);
        let speed = rng.gen_range(0.0f32..5.0);
        let p = lanes[0].center.point_at(s);
        let (_, _, tangent) = lanes[0].center.project(p);
        let normal = Vec2::new(-tangent.y, tangent.x);
        let pos = p.add(normal.scale(lat));
        let theta = tangent.y.atan2(tangent.x);
        agents.push(Agent {
            pos,
            theta,
            vel: tangent.scale(speed),
            half_len: EGO_HALF_LEN,
            half_wid: EGO_HALF_WID,
        });
    }

    let mut obstacles = Vec::new();
    let n_obs = rng.gen_range(0..=2usize);
    for _ in 0..n_obs {
        let s = 16.0 + rng.gen_range(8.0f32..(route_len - 24.0).max(9.0));
        let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let lat = side * (LANE_HALF_WIDTH + rng.gen_range(1.0f32..3.5));
        let half_l = rng.gen_range(0.4f32..1.0);
        let half_w = rng.gen_range(0.4f32..1.0);
        let p = lanes[0].center.point_at(s);
        let (_, _, tangent) = lanes[0].center.project(p);
        let normal = Vec2::new(-tangent.y, tangent.x);
        let pos = p.add(normal.scale(lat));
        let theta = tangent.y.atan2(tangent.x);
        obstacles.push(Obstacle { obb: Obb::new(pos, theta, half_l, half_w) });
    }

    let goal = lanes[0].center.point_at(56.0f32.min(route_len - 2.0));

    Scenario { seed, kind, lanes, agents, obstacles, goal, cruise, command }
}

/// Constant-velocity agent advance.
pub fn step_agents(scenario: &Scenario, dt: f32) -> Scenario {
    assert!(dt > 0.0, "step_agents needs dt > 0");
    let mut out = scenario.clone();
    for a in &mut out.agents {
        a.pos = a.pos.add(a.vel.scale(dt));
    }
    out
}

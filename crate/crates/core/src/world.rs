//! Ground-truth simulated factory: floor plan, road network, differential
//! drive robots, scripted dynamic agents, occupancy rasterization, and
//! collision checks.
//!
//! The world is the oracle everything else is judged against. Mutation goes
//! through [`step`] only; agent poses are pure functions of the clock so a
//! snapshot of `WorldState` fully determines the scene.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom2d::{
    convex_distance, convex_overlap_depth, oriented_rect, point_in_convex, polygon_is_ccw,
    polygon_is_convex, P2,
};
use crate::geometry::normalize_angle;
use crate::perception::{Cell, GridSpec, OccupancyGrid};
use crate::Pose2;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("floor plan: {0}")]
    InvalidFloorPlan(String),
    #[error("road network: {0}")]
    InvalidNetwork(String),
    #[error("agent {id}: {msg}")]
    InvalidAgent { id: u32, msg: String },
    #[error("robot {id}: {msg}")]
    InvalidRobot { id: u16, msg: String },
}

/// Convex static obstacle. `height` feeds the marker line-of-sight test:
/// obstacles taller than a marker can hide it from a camera.
#[derive(Debug, Clone)]
pub struct Obstacle {
    pub polygon: Vec<P2>,
    pub height: f64,
}

#[derive(Debug, Clone)]
pub struct FloorPlan {
    pub min: P2,
    pub max: P2,
    pub obstacles: Vec<Obstacle>,
}

impl FloorPlan {
    pub fn empty(min: P2, max: P2) -> Self {
        Self { min, max, obstacles: Vec::new() }
    }

    /// Normalizes obstacle winding to counter-clockwise and checks the
    /// structural invariants.
    pub fn validate(&mut self) -> Result<(), WorldError> {
        if !(self.min.x < self.max.x && self.min.y < self.max.y) {
            return Err(WorldError::InvalidFloorPlan("bounds are empty".into()));
        }
        for (i, ob) in self.obstacles.iter_mut().enumerate() {
            if ob.polygon.len() < 3 {
                return Err(WorldError::InvalidFloorPlan(format!(
                    "obstacle {i} has {} vertices",
                    ob.polygon.len()
                )));
            }
            if !polygon_is_ccw(&ob.polygon) {
                ob.polygon.reverse();
            }
            if !polygon_is_convex(&ob.polygon) {
                return Err(WorldError::InvalidFloorPlan(format!("obstacle {i} is not convex")));
            }
            if ob.height <= 0.0 {
                return Err(WorldError::InvalidFloorPlan(format!("obstacle {i} has no height")));
            }
            for v in &ob.polygon {
                if v.x < self.min.x || v.x > self.max.x || v.y < self.min.y || v.y > self.max.y {
                    return Err(WorldError::InvalidFloorPlan(format!(
                        "obstacle {i} vertex ({}, {}) outside bounds",
                        v.x, v.y
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Directed lane. `length` is the drivable distance and may exceed the
/// straight-line node distance (e.g. marked detours), never undercut it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Edge {
    pub from: u32,
    pub to: u32,
    pub length: f64,
    pub bidirectional: bool,
}

/// Ranked right-of-way classes for intersection zones, highest priority
/// first semantics are owned by the behavior layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PriorityClass {
    Pedestrian,
    Forklift,
    TuggerTrain,
    Amr,
}

#[derive(Debug, Clone)]
pub struct IntersectionZone {
    pub polygon: Vec<P2>,
    /// Ordered best-to-worst; classes absent from the list rank below all
    /// listed ones.
    pub priority: Vec<PriorityClass>,
}

#[derive(Debug, Clone, Default)]
pub struct RoadNetwork {
    pub nodes: BTreeMap<u32, P2>,
    pub edges: Vec<Edge>,
    pub intersections: Vec<IntersectionZone>,
    /// Named stations (pickup, delivery, depot slots) mapped to node ids.
    pub stations: BTreeMap<String, u32>,
}

impl RoadNetwork {
    pub fn validate(&self) -> Result<(), WorldError> {
        for (i, e) in self.edges.iter().enumerate() {
            let a = self
                .nodes
                .get(&e.from)
                .ok_or_else(|| WorldError::InvalidNetwork(format!("edge {i} from unknown node {}", e.from)))?;
            let b = self
                .nodes
                .get(&e.to)
                .ok_or_else(|| WorldError::InvalidNetwork(format!("edge {i} to unknown node {}", e.to)))?;
            let euclid = (b - a).norm();
            if e.length < euclid - 1e-9 {
                return Err(WorldError::InvalidNetwork(format!(
                    "edge {i} length {} shorter than node distance {euclid}",
                    e.length
                )));
            }
        }
        for (name, node) in &self.stations {
            if !self.nodes.contains_key(node) {
                return Err(WorldError::InvalidNetwork(format!(
                    "station {name} references unknown node {node}"
                )));
            }
        }
        for (i, z) in self.intersections.iter().enumerate() {
            if z.polygon.len() < 3 || !polygon_is_convex(&z.polygon) {
                return Err(WorldError::InvalidNetwork(format!("intersection {i} zone is not a convex polygon")));
            }
        }
        Ok(())
    }

    pub fn node(&self, id: u32) -> Option<P2> {
        self.nodes.get(&id).copied()
    }

    /// Directed arc expansion: bidirectional edges yield both directions.
    pub fn arcs(&self) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        self.edges.iter().flat_map(|e| {
            let fwd = (e.from, e.to, e.length);
            let back = e.bidirectional.then_some((e.to, e.from, e.length));
            std::iter::once(fwd).chain(back)
        })
    }

    pub fn station_node(&self, name: &str) -> Option<u32> {
        self.stations.get(name).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RobotMode {
    Autonomous,
    Manual,
}

/// Axle-centered rectangular footprint.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RectFootprint {
    pub length: f64,
    pub width: f64,
}

impl RectFootprint {
    pub fn polygon(&self, pose: &Pose2) -> [P2; 4] {
        oriented_rect(pose.x, pose.y, pose.theta, self.length, self.width)
    }

    pub fn circumradius(&self) -> f64 {
        0.5 * (self.length * self.length + self.width * self.width).sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct RobotState {
    pub id: u16,
    pub pose: Pose2,
    pub v: f64,
    pub omega: f64,
    pub mode: RobotMode,
    pub footprint: RectFootprint,
    /// Mounting height of the fiducial marker above the floor.
    pub marker_height: f64,
    /// Actuator saturation applied to incoming commands.
    pub v_limit: f64,
    pub omega_limit: f64,
}

impl RobotState {
    pub fn footprint_polygon(&self) -> [P2; 4] {
        self.footprint.polygon(&self.pose)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgentKind {
    Pedestrian,
    Forklift,
    TuggerTrain,
}

impl AgentKind {
    pub fn priority_class(self) -> PriorityClass {
        match self {
            AgentKind::Pedestrian => PriorityClass::Pedestrian,
            AgentKind::Forklift => PriorityClass::Forklift,
            AgentKind::TuggerTrain => PriorityClass::TuggerTrain,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScriptPoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

/// Scripted traffic participant. The pose is interpolated from the script,
/// so agents never deviate and never react; they are the uncontrolled part
/// of the scene the fleet must live with.
#[derive(Debug, Clone)]
pub struct DynamicAgent {
    pub id: u32,
    pub kind: AgentKind,
    pub footprint: RectFootprint,
    pub script: Vec<ScriptPoint>,
    pub can_reverse: bool,
    /// If set, the script restarts every `repeat_period` seconds (measured
    /// from the first stamp). Looping scripts should end where they start.
    pub repeat_period: Option<f64>,
}

impl DynamicAgent {
    pub fn validate(&self) -> Result<(), WorldError> {
        let err = |msg: String| WorldError::InvalidAgent { id: self.id, msg };
        if self.script.is_empty() {
            return Err(err("empty script".into()));
        }
        for w in self.script.windows(2) {
            if w[1].t <= w[0].t {
                return Err(err(format!("script stamps not strictly increasing at t={}", w[1].t)));
            }
        }
        if self.kind == AgentKind::TuggerTrain && self.can_reverse {
            return Err(err("tugger trains cannot reverse".into()));
        }
        if let Some(p) = self.repeat_period {
            let span = self.script.last().unwrap().t - self.script[0].t;
            if p < span {
                return Err(err(format!("repeat period {p} shorter than script span {span}")));
            }
        }
        if self.footprint.length <= 0.0 || self.footprint.width <= 0.0 {
            return Err(err("degenerate footprint".into()));
        }
        Ok(())
    }

    /// Piecewise-linear pose at time `t`: hold first pose before the script,
    /// hold last pose after it (within each period when repeating).
    pub fn pose_at(&self, t: f64) -> Pose2 {
        let first = self.script[0];
        let t0 = first.t;
        let t_eff = match self.repeat_period {
            Some(p) if t > t0 => t0 + (t - t0) % p,
            _ => t,
        };
        if t_eff <= t0 {
            return Pose2::new(first.x, first.y, first.theta);
        }
        let last = *self.script.last().unwrap();
        if t_eff >= last.t {
            return Pose2::new(last.x, last.y, last.theta);
        }
        let idx = self.script.partition_point(|sp| sp.t <= t_eff);
        let a = self.script[idx - 1];
        let b = self.script[idx];
        let u = (t_eff - a.t) / (b.t - a.t);
        let theta = a.theta + normalize_angle(b.theta - a.theta) * u;
        Pose2::new(a.x + (b.x - a.x) * u, a.y + (b.y - a.y) * u, theta)
    }

    pub fn footprint_polygon(&self, t: f64) -> [P2; 4] {
        self.footprint.polygon(&self.pose_at(t))
    }
}

#[derive(Debug, Clone)]
pub struct WorldState {
    pub clock: f64,
    pub floorplan: FloorPlan,
    pub road_network: RoadNetwork,
    pub robots: Vec<RobotState>,
    pub agents: Vec<DynamicAgent>,
    /// Single seeded stream for all in-world randomness (sensor noise draws
    /// happen in a fixed documented order).
    pub rng: ChaCha8Rng,
}

impl WorldState {
    pub fn new(
        mut floorplan: FloorPlan,
        road_network: RoadNetwork,
        robots: Vec<RobotState>,
        agents: Vec<DynamicAgent>,
        rng: ChaCha8Rng,
    ) -> Result<Self, WorldError> {
        floorplan.validate()?;
        road_network.validate()?;
        let mut seen = std::collections::BTreeSet::new();
        for r in &robots {
            if !seen.insert(r.id) {
                return Err(WorldError::InvalidRobot { id: r.id, msg: "duplicate id".into() });
            }
            if r.footprint.length <= 0.0 || r.footprint.width <= 0.0 {
                return Err(WorldError::InvalidRobot { id: r.id, msg: "degenerate footprint".into() });
            }
        }
        for a in &agents {
            a.validate()?;
        }
        Ok(Self { clock: 0.0, floorplan, road_network, robots, agents, rng })
    }

    pub fn robot(&self, id: u16) -> Option<&RobotState> {
        self.robots.iter().find(|r| r.id == id)
    }

    pub fn robot_mut(&mut self, id: u16) -> Option<&mut RobotState> {
        self.robots.iter_mut().find(|r| r.id == id)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct VelocityCommand {
    pub robot_id: u16,
    pub v: f64,
    pub omega: f64,
}

/// Advance the world by one fixed step.
///
/// Autonomous robots integrate their (clamped) command by first-order Euler;
/// a robot without a command holds zero velocity. Manual robots are dragged
/// externally and report zero wheel velocity. Agent poses are functions of
/// the clock and need no explicit update.
pub fn step(world: &mut WorldState, commands: &[VelocityCommand], dt: f64) {
    debug_assert!(dt > 0.0, "step needs a positive dt");
    for robot in &mut world.robots {
        match robot.mode {
            RobotMode::Manual => {
                robot.v = 0.0;
                robot.omega = 0.0;
            }
            RobotMode::Autonomous => {
                let (v_cmd, om_cmd) = commands
                    .iter()
                    .find(|c| c.robot_id == robot.id)
                    .map_or((0.0, 0.0), |c| (c.v, c.omega));
                let v = v_cmd.clamp(-robot.v_limit, robot.v_limit);
                let om = om_cmd.clamp(-robot.omega_limit, robot.omega_limit);
                let (sin, cos) = robot.pose.theta.sin_cos();
                robot.pose.x += v * cos * dt;
                robot.pose.y += v * sin * dt;
                robot.pose.theta = normalize_angle(robot.pose.theta + om * dt);
                robot.v = v;
                robot.omega = om;
            }
        }
    }
    world.clock += dt;
}

/// Rasterize the true scene: a cell is Occupied iff its center lies inside
/// any static obstacle, agent footprint, or robot footprint.
pub fn ground_truth_occupancy(world: &WorldState, spec: &GridSpec) -> OccupancyGrid {
    let mut grid = OccupancyGrid::filled(spec.clone(), Cell::Free, world.clock);
    for ob in &world.floorplan.obstacles {
        rasterize_convex(&mut grid, &ob.polygon);
    }
    for agent in &world.agents {
        rasterize_convex(&mut grid, &agent.footprint_polygon(world.clock));
    }
    for robot in &world.robots {
        rasterize_convex(&mut grid, &robot.footprint_polygon());
    }
    grid
}

fn rasterize_convex(grid: &mut OccupancyGrid, poly: &[P2]) {
    let spec = grid.spec.clone();
    let (min, max) = poly_bbox(poly);
    let Some(range) = spec.cell_range(min, max) else { return };
    for iy in range.1 .0..=range.1 .1 {
        for ix in range.0 .0..=range.0 .1 {
            if point_in_convex(spec.center(ix, iy), poly) {
                grid.set(ix, iy, Cell::Occupied);
            }
        }
    }
}

fn poly_bbox(poly: &[P2]) -> (P2, P2) {
    let mut min = P2::new(f64::INFINITY, f64::INFINITY);
    let mut max = P2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in poly {
        min.x = min.x.min(p.x);
        min.y = min.y.min(p.y);
        max.x = max.x.max(p.x);
        max.y = max.y.max(p.y);
    }
    (min, max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntityRef {
    Robot(u16),
    Agent(u32),
    Obstacle(usize),
}

#[derive(Debug, Clone, Copy)]
pub struct Collision {
    pub a: EntityRef,
    pub b: EntityRef,
    pub depth: f64,
}

/// All robot-involving footprint overlaps with penetration depths.
pub fn collision_check(world: &WorldState) -> Vec<Collision> {
    let mut out = Vec::new();
    let robots: Vec<(u16, [P2; 4], f64)> = world
        .robots
        .iter()
        .map(|r| (r.id, r.footprint_polygon(), r.footprint.circumradius()))
        .collect();
    for i in 0..robots.len() {
        for j in i + 1..robots.len() {
            if circle_gap(&robots[i].1, &robots[j].1, robots[i].2 + robots[j].2) {
                continue;
            }
            if let Some(depth) = convex_overlap_depth(&robots[i].1, &robots[j].1) {
                out.push(Collision {
                    a: EntityRef::Robot(robots[i].0),
                    b: EntityRef::Robot(robots[j].0),
                    depth,
                });
            }
        }
    }
    for (id, poly, r) in &robots {
        for agent in &world.agents {
            let ap = agent.footprint_polygon(world.clock);
            if circle_gap(poly, &ap, r + agent.footprint.circumradius()) {
                continue;
            }
            if let Some(depth) = convex_overlap_depth(poly, &ap) {
                out.push(Collision { a: EntityRef::Robot(*id), b: EntityRef::Agent(agent.id), depth });
            }
        }
        for (oi, ob) in world.floorplan.obstacles.iter().enumerate() {
            if let Some(depth) = convex_overlap_depth(poly, &ob.polygon) {
                out.push(Collision { a: EntityRef::Robot(*id), b: EntityRef::Obstacle(oi), depth });
            }
        }
    }
    out
}

fn centroid(poly: &[P2]) -> P2 {
    let mut c = P2::origin();
    for p in poly {
        c.x += p.x;
        c.y += p.y;
    }
    P2::new(c.x / poly.len() as f64, c.y / poly.len() as f64)
}

fn circle_gap(a: &[P2], b: &[P2], radius_sum: f64) -> bool {
    (centroid(b) - centroid(a)).norm() > radius_sum
}

/// Smallest separation between any robot and any other entity, capped at
/// `cap` so distant pairs can be skipped cheaply. Overlap reports 0.
pub fn min_robot_clearance(world: &WorldState, cap: f64) -> f64 {
    let mut min = cap;
    let robots: Vec<(u16, [P2; 4], f64)> = world
        .robots
        .iter()
        .map(|r| (r.id, r.footprint_polygon(), r.footprint.circumradius()))
        .collect();
    let consider = |poly_a: &[P2], ra: f64, poly_b: &[P2], rb: f64, min: &mut f64| {
        let lower = (centroid(poly_b) - centroid(poly_a)).norm() - ra - rb;
        if lower >= *min {
            return;
        }
        let d = convex_distance(poly_a, poly_b);
        if d < *min {
            *min = d;
        }
    };
    for i in 0..robots.len() {
        for j in i + 1..robots.len() {
            consider(&robots[i].1, robots[i].2, &robots[j].1, robots[j].2, &mut min);
        }
    }
    for (_, poly, r) in &robots {
        for agent in &world.agents {
            let ap = agent.footprint_polygon(world.clock);
            consider(poly, *r, &ap, agent.footprint.circumradius(), &mut min);
        }
        for ob in &world.floorplan.obstacles {
            let (c, radius) = poly_circum(&ob.polygon);
            let lower = (c - centroid(poly)).norm() - radius - r;
            if lower >= min {
                continue;
            }
            let d = convex_distance(poly, &ob.polygon);
            if d < min {
                min = d;
            }
        }
    }
    min
}

fn poly_circum(poly: &[P2]) -> (P2, f64) {
    let c = centroid(poly);
    let r = poly.iter().map(|p| (p - c).norm()).fold(0.0, f64::max);
    (c, r)
}

//! Scenario files: one JSON document pins a reproducible run.
//!
//! Everything a run depends on lives here: floor geometry, road network,
//! camera rigging, robot fleet, scripted traffic, the behavior FSM, the
//! task stream, noise magnitudes, link quality, and the dispatch policy.
//! Loading validates the document fully before anything is simulated, so a
//! broken file fails with a pointed diagnostic instead of a mid-run panic.

use std::collections::BTreeMap;
use std::path::Path;

use amrsim_core::behavior::{parse_guard, Action, FsmSpec, Transition};
use amrsim_core::camera::CameraRig;
use amrsim_core::fleet::{RobotSpec, TransportTask};
use amrsim_core::geom2d::P2;
use amrsim_core::motion::MotionProfile;
use amrsim_core::perception::GridSpec;
use amrsim_core::world::{
    AgentKind, DynamicAgent, Edge, FloorPlan, IntersectionZone, Obstacle, PriorityClass,
    RectFootprint, RoadNetwork, RobotMode, RobotState, ScriptPoint, WorldState,
};
use amrsim_core::{Extrinsics, Intrinsics, Pose2};
use nalgebra::Vector3;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("parse error at line {line}, column {column}: {msg}")]
    ParseError { line: usize, column: usize, msg: String },
    #[error("schema error: {0}")]
    SchemaError(String),
    #[error("dangling reference: {0}")]
    DanglingReference(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    pub seed: u64,
    pub duration_s: f64,
    pub dt: f64,
    pub floorplan: FloorplanSpec,
    pub road_network: NetworkSpec,
    pub grid: GridSpec,
    pub cameras: Vec<CameraSpec>,
    pub robots: Vec<RobotEntry>,
    pub agents: Vec<AgentSpec>,
    pub fsm: FsmFile,
    pub tasks: Vec<TaskSpec>,
    pub noise: NoiseSpec,
    pub link: LinkSpec,
    pub scheduler: SchedulerSpec,
    /// Seconds from camera capture to the fix being available cloud-side.
    pub detection_latency_s: f64,
    #[serde(default)]
    pub manual_overrides: Vec<ManualOverrideSpec>,
    /// Require a cell occupied in two consecutive fused frames before it
    /// blocks a corridor; suppresses isolated false-positive flicker.
    pub persistence_filter: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FloorplanSpec {
    pub min: [f64; 2],
    pub max: [f64; 2],
    pub obstacles: Vec<ObstacleSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObstacleSpec {
    pub polygon: Vec<[f64; 2]>,
    pub height: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub nodes: BTreeMap<u32, [f64; 2]>,
    pub edges: Vec<EdgeSpec>,
    pub intersections: Vec<ZoneSpec>,
    pub stations: BTreeMap<String, u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub from: u32,
    pub to: u32,
    /// Lane length in meters; at least the Euclidean node distance.
    pub length: f64,
    pub bidirectional: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZoneSpec {
    pub polygon: Vec<[f64; 2]>,
    pub priority: Vec<PriorityClass>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraSpec {
    pub id: u8,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub position: [f64; 3],
    pub yaw: f64,
    /// Capture offset within the frame period; free-running cameras.
    pub skew: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobotEntry {
    pub id: u16,
    pub start: [f64; 3],
    pub marker_height: f64,
    pub v_limit: f64,
    pub omega_limit: f64,
    pub footprint: FootprintSpec,
    pub profile: ProfileSpec,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FootprintSpec {
    pub length: f64,
    pub width: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ProfileSpec {
    pub v_max: f64,
    pub accel: f64,
    pub decel: f64,
    pub lookahead: f64,
    pub stop_margin: f64,
    pub corridor_half_width: f64,
    pub k_theta: f64,
    pub omega_max: f64,
    pub front_overhang: f64,
    pub unknown_blocks: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentSpec {
    pub id: u32,
    pub kind: AgentKind,
    pub footprint: FootprintSpec,
    pub can_reverse: bool,
    pub repeat_period: Option<f64>,
    pub script: Vec<ScriptPoint>,
}

/// FSM in file form: guards are text in the guard grammar, actions reuse
/// the behavior action vocabulary. Station arguments may be literal station
/// names or the task-relative symbols `@pickup`, `@dropoff`, `@depot`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FsmFile {
    pub states: Vec<String>,
    pub initial: String,
    pub transitions: Vec<TransitionSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransitionSpec {
    pub from: String,
    pub guard: String,
    pub to: String,
    pub actions: Vec<Action>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: u32,
    /// Pickup and delivery stations by name.
    pub a: String,
    pub b: String,
    /// When the task becomes known to the dispatcher.
    pub arrival_s: f64,
    pub window_a: [f64; 2],
    pub window_b: [f64; 2],
    pub service_s: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma_px: f64,
    /// Relative wheel odometry error (1 sigma), e.g. 0.01 for one percent.
    pub odom_frac: f64,
    pub fp_rate: f64,
    pub fn_rate: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LinkSpec {
    pub base_latency_s: f64,
    pub jitter_s: f64,
    pub drop_prob: f64,
    pub allow_reorder: bool,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SchedulerSpec {
    /// First-come-first-served to the longest-idle robot.
    Queue,
    /// Solve the whole task set optimally up front (small instances only).
    Vrptw { lambda_tardiness: f64, hard_windows: bool },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManualOverrideSpec {
    pub robot: u16,
    pub engage_s: f64,
    pub disengage_s: f64,
    /// Externally applied pose track while the robot is in manual mode.
    pub script: Vec<ScriptPoint>,
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ScenarioError::SchemaError(format!("cannot read {}: {e}", path.display())))?;
    parse_scenario(&text)
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let sc: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::ParseError {
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })?;
    sc.validate()?;
    Ok(sc)
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.schema_version != SCENARIO_SCHEMA_VERSION {
            return Err(ScenarioError::SchemaError(format!(
                "schema_version {} is not supported (expected {SCENARIO_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if !(self.dt > 0.0 && self.dt <= 0.2) {
            return Err(ScenarioError::SchemaError(format!("dt {} outside (0, 0.2]", self.dt)));
        }
        if self.duration_s <= 0.0 {
            return Err(ScenarioError::SchemaError("duration_s must be positive".into()));
        }
        self.grid
            .validate()
            .map_err(|e| ScenarioError::SchemaError(format!("grid: {e}")))?;

        let mut cam_ids = std::collections::BTreeSet::new();
        for c in &self.cameras {
            if !cam_ids.insert(c.id) {
                return Err(ScenarioError::SchemaError(format!("duplicate camera id {}", c.id)));
            }
            if c.id == u8::MAX {
                return Err(ScenarioError::SchemaError("camera id 255 is reserved".into()));
            }
            if !(c.skew >= 0.0 && c.skew < self.dt) {
                return Err(ScenarioError::SchemaError(format!(
                    "camera {} skew {} outside [0, dt)",
                    c.id, c.skew
                )));
            }
            if c.position[2] <= 0.0 {
                return Err(ScenarioError::SchemaError(format!("camera {} is not above the floor", c.id)));
            }
        }

        let mut robot_ids = std::collections::BTreeSet::new();
        for r in &self.robots {
            if !robot_ids.insert(r.id) {
                return Err(ScenarioError::SchemaError(format!("duplicate robot id {}", r.id)));
            }
            let p = r.profile.motion_profile();
            if !p.validate() {
                return Err(ScenarioError::SchemaError(format!("robot {} motion profile is invalid", r.id)));
            }
        }

        for t in &self.tasks {
            for (which, name) in [("pickup", &t.a), ("delivery", &t.b)] {
                if !self.road_network.stations.contains_key(name) {
                    return Err(ScenarioError::DanglingReference(format!(
                        "task {} references unknown {which} station `{name}`",
                        t.id
                    )));
                }
            }
            if t.arrival_s < 0.0 || t.service_s < 0.0 {
                return Err(ScenarioError::SchemaError(format!("task {} has negative times", t.id)));
            }
        }

        for m in &self.manual_overrides {
            if !robot_ids.contains(&m.robot) {
                return Err(ScenarioError::DanglingReference(format!(
                    "manual override references unknown robot {}",
                    m.robot
                )));
            }
            if m.engage_s >= m.disengage_s {
                return Err(ScenarioError::SchemaError("manual override window is empty".into()));
            }
        }

        // Guards must parse and the FSM must be structurally sound before
        // the run starts; a typo here is a load error, not a runtime one.
        self.behavior_fsm()?;

        // The remaining structural checks (network, floorplan, agents) are
        // owned by the world layer; surface them as schema errors.
        use rand::SeedableRng;
        self.build_world(ChaCha8Rng::seed_from_u64(0))
            .map(|_| ())
            .map_err(ScenarioError::SchemaError)
    }

    pub fn floorplan(&self) -> FloorPlan {
        FloorPlan {
            min: P2::new(self.floorplan.min[0], self.floorplan.min[1]),
            max: P2::new(self.floorplan.max[0], self.floorplan.max[1]),
            obstacles: self
                .floorplan
                .obstacles
                .iter()
                .map(|o| Obstacle {
                    polygon: o.polygon.iter().map(|p| P2::new(p[0], p[1])).collect(),
                    height: o.height,
                })
                .collect(),
        }
    }

    pub fn network(&self) -> RoadNetwork {
        RoadNetwork {
            nodes: self.road_network.nodes.iter().map(|(&id, p)| (id, P2::new(p[0], p[1]))).collect(),
            edges: self
                .road_network
                .edges
                .iter()
                .map(|e| Edge { from: e.from, to: e.to, length: e.length, bidirectional: e.bidirectional })
                .collect(),
            intersections: self
                .road_network
                .intersections
                .iter()
                .map(|z| IntersectionZone {
                    polygon: z.polygon.iter().map(|p| P2::new(p[0], p[1])).collect(),
                    priority: z.priority.clone(),
                })
                .collect(),
            stations: self.road_network.stations.clone(),
        }
    }

    pub fn build_cameras(&self) -> Result<Vec<CameraRig>, String> {
        let marker_heights: Vec<f64> = self.robots.iter().map(|r| r.marker_height).collect();
        let mut rigs = Vec::with_capacity(self.cameras.len());
        for c in &self.cameras {
            let intr = Intrinsics {
                fx: c.fx,
                fy: c.fy,
                cx: c.cx,
                cy: c.cy,
                width: c.width,
                height: c.height,
            };
            let extr = Extrinsics::top_down(
                Vector3::new(c.position[0], c.position[1], c.position[2]),
                c.yaw,
            );
            let rig = CameraRig::new(c.id, intr, extr, &marker_heights)
                .map_err(|e| format!("camera {}: {e}", c.id))?
                .with_skew(c.skew);
            rigs.push(rig);
        }
        Ok(rigs)
    }

    pub fn build_world(&self, rng: ChaCha8Rng) -> Result<WorldState, String> {
        let robots = self
            .robots
            .iter()
            .map(|r| RobotState {
                id: r.id,
                pose: Pose2::new(r.start[0], r.start[1], r.start[2]),
                v: 0.0,
                omega: 0.0,
                mode: RobotMode::Autonomous,
                footprint: RectFootprint { length: r.footprint.length, width: r.footprint.width },
                marker_height: r.marker_height,
                v_limit: r.v_limit,
                omega_limit: r.omega_limit,
            })
            .collect();
        let agents = self
            .agents
            .iter()
            .map(|a| DynamicAgent {
                id: a.id,
                kind: a.kind,
                footprint: RectFootprint { length: a.footprint.length, width: a.footprint.width },
                script: a.script.clone(),
                can_reverse: a.can_reverse,
                repeat_period: a.repeat_period,
            })
            .collect();
        WorldState::new(self.floorplan(), self.network(), robots, agents, rng).map_err(|e| e.to_string())
    }

    /// Parse guard texts into the executable FSM.
    pub fn behavior_fsm(&self) -> Result<FsmSpec, ScenarioError> {
        let mut transitions = Vec::with_capacity(self.fsm.transitions.len());
        for t in &self.fsm.transitions {
            let guard = parse_guard(&t.guard).map_err(|e| {
                ScenarioError::SchemaError(format!(
                    "guard `{}` on {} -> {}: {e}",
                    t.guard, t.from, t.to
                ))
            })?;
            transitions.push(Transition {
                from: t.from.clone(),
                guard,
                to: t.to.clone(),
                actions: t.actions.clone(),
            });
        }
        let spec = FsmSpec {
            states: self.fsm.states.clone(),
            initial: self.fsm.initial.clone(),
            transitions,
        };
        spec.validate()
            .map_err(|e| ScenarioError::SchemaError(format!("fsm: {e}")))?;
        Ok(spec)
    }

    /// Station index in the solver's numbering: position in name order.
    pub fn station_index(&self, name: &str) -> Option<u16> {
        self.road_network.stations.keys().position(|k| k == name).map(|i| i as u16)
    }

    /// Tasks and robot specs in the fleet layer's station numbering. Robots
    /// start at their nearest station (by start pose), available at zero.
    pub fn fleet_instance(&self) -> Result<(Vec<TransportTask>, Vec<RobotSpec>), ScenarioError> {
        let net = self.network();
        let mut tasks = Vec::with_capacity(self.tasks.len());
        for t in &self.tasks {
            let a = self.station_index(&t.a).ok_or_else(|| {
                ScenarioError::DanglingReference(format!("task {} pickup station `{}`", t.id, t.a))
            })?;
            let b = self.station_index(&t.b).ok_or_else(|| {
                ScenarioError::DanglingReference(format!("task {} delivery station `{}`", t.id, t.b))
            })?;
            tasks.push(TransportTask {
                id: t.id,
                a_station: a,
                b_station: b,
                window_a: (t.window_a[0], t.window_a[1]),
                window_b: (t.window_b[0], t.window_b[1]),
                service_time: t.service_s,
            });
        }
        let mut robots = Vec::with_capacity(self.robots.len());
        for r in &self.robots {
            let start = P2::new(r.start[0], r.start[1]);
            let nearest = net
                .stations
                .values()
                .enumerate()
                .min_by(|(_, &na), (_, &nb)| {
                    let da = (net.node(na).unwrap() - start).norm();
                    let db = (net.node(nb).unwrap() - start).norm();
                    da.total_cmp(&db)
                })
                .map(|(i, _)| i as u16)
                .ok_or_else(|| ScenarioError::SchemaError("network has no stations".into()))?;
            robots.push(RobotSpec { id: r.id, start_station: nearest, available_from: 0.0 });
        }
        Ok((tasks, robots))
    }

    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scenario serializes");
        s.push('\n');
        s
    }
}

impl ProfileSpec {
    pub fn motion_profile(&self) -> MotionProfile {
        MotionProfile {
            v_max: self.v_max,
            accel: self.accel,
            decel: self.decel,
            lookahead: self.lookahead,
            stop_margin: self.stop_margin,
            corridor_half_width: self.corridor_half_width,
            k_theta: self.k_theta,
            omega_max: self.omega_max,
            front_overhang: self.front_overhang,
            unknown_blocks: self.unknown_blocks,
        }
    }
}

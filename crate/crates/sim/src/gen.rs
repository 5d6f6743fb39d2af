//! Shipped scenario generators.
//!
//! Scenarios are generated (not hand-edited) so geometry stays consistent:
//! lane offsets, zone inflation, and camera coverage are all derived from
//! the same constants here. The JSON files under `scenarios/` are the
//! committed output of these functions; a test keeps them in sync.

use std::collections::BTreeMap;

use amrsim_core::behavior::{Action, DEFAULT_PRIORITY};
use amrsim_core::perception::GridSpec;
use amrsim_core::world::{AgentKind, ScriptPoint};
use serde::{Deserialize, Serialize};

use crate::scenario::{
    AgentSpec, CameraSpec, EdgeSpec, FloorplanSpec, FootprintSpec, FsmFile, LinkSpec,
    ManualOverrideSpec, NetworkSpec, NoiseSpec, ObstacleSpec, ProfileSpec, RobotEntry, Scenario,
    SchedulerSpec, TaskSpec, TransitionSpec, ZoneSpec, SCENARIO_SCHEMA_VERSION,
};

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// One-way edge with length derived from node geometry.
fn edge(nodes: &BTreeMap<u32, [f64; 2]>, from: u32, to: u32) -> EdgeSpec {
    EdgeSpec { from, to, length: dist2(nodes[&from], nodes[&to]), bidirectional: false }
}

fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<[f64; 2]> {
    vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]]
}

/// Overhead camera: 4K sensor, ~2800 px focal, which at z = 8 m gives a
/// roughly 11 x 6.2 m floor footprint.
fn cam(id: u8, x: f64, y: f64, z: f64, yaw: f64, skew: f64) -> CameraSpec {
    CameraSpec {
        id,
        fx: 2800.0,
        fy: 2800.0,
        cx: 1920.0,
        cy: 1080.0,
        width: 3840,
        height: 2160,
        position: [x, y, z],
        yaw,
        skew,
    }
}

fn amr_profile() -> ProfileSpec {
    ProfileSpec {
        v_max: 1.5,
        accel: 0.8,
        decel: 1.2,
        lookahead: 1.0,
        stop_margin: 0.6,
        corridor_half_width: 0.55,
        k_theta: 2.5,
        omega_max: 1.8,
        front_overhang: 0.55,
        unknown_blocks: false,
    }
}

fn amr(id: u16, x: f64, y: f64, theta: f64) -> RobotEntry {
    RobotEntry {
        id,
        start: [x, y, theta],
        marker_height: 0.3,
        v_limit: 1.5,
        omega_limit: 1.8,
        footprint: FootprintSpec { length: 1.05, width: 0.65 },
        profile: amr_profile(),
    }
}

fn t(from: &str, guard: &str, to: &str, actions: Vec<Action>) -> TransitionSpec {
    TransitionSpec { from: from.into(), guard: guard.into(), to: to.into(), actions }
}

/// Full task cycle with manual-takeover holds and a depot return. `kitted`
/// doubles as "service dwell complete" at both ends of a transport.
fn fsm_full() -> FsmFile {
    let route = |sym: &str| vec![Action::RequestRoute(sym.into())];
    FsmFile {
        states: [
            "Parked",
            "ToPickup",
            "AwaitKitting",
            "ToDelivery",
            "AwaitUnload",
            "Idle",
            "ToDepot",
            "HoldToPickup",
            "HoldToDelivery",
            "ManualPark",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect(),
        initial: "Parked".into(),
        transitions: vec![
            t("Parked", "manual_mode", "ManualPark", vec![Action::Halt]),
            t("Parked", "task_assigned", "ToPickup", route("@pickup")),
            t("ToPickup", "manual_mode", "HoldToPickup", vec![Action::Halt]),
            t("ToPickup", "at_goal", "AwaitKitting", vec![]),
            t("HoldToPickup", "not manual_mode", "ToPickup", route("@pickup")),
            t("AwaitKitting", "kitted", "ToDelivery", route("@dropoff")),
            t("ToDelivery", "manual_mode", "HoldToDelivery", vec![Action::Halt]),
            t("ToDelivery", "at_goal", "AwaitUnload", vec![]),
            t("HoldToDelivery", "not manual_mode", "ToDelivery", route("@dropoff")),
            t("AwaitUnload", "kitted", "Idle", vec![Action::MarkTaskDone]),
            t("Idle", "task_assigned", "ToPickup", route("@pickup")),
            t("Idle", "timer_elapsed(5)", "ToDepot", route("@depot")),
            t("ToDepot", "task_assigned", "ToPickup", route("@pickup")),
            t("ToDepot", "at_goal", "Parked", vec![]),
            t("ManualPark", "not manual_mode", "Parked", vec![]),
        ],
    }
}

/// Reduced cycle for scenarios without depots or manual takeover: idle
/// robots simply hold position at their last stop.
fn fsm_minimal() -> FsmFile {
    let route = |sym: &str| vec![Action::RequestRoute(sym.into())];
    FsmFile {
        states: ["Parked", "ToPickup", "AwaitKitting", "ToDelivery", "AwaitUnload", "Idle"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        initial: "Parked".into(),
        transitions: vec![
            t("Parked", "task_assigned", "ToPickup", route("@pickup")),
            t("ToPickup", "at_goal", "AwaitKitting", vec![]),
            t("AwaitKitting", "kitted", "ToDelivery", route("@dropoff")),
            t("ToDelivery", "at_goal", "AwaitUnload", vec![]),
            t("AwaitUnload", "kitted", "Idle", vec![Action::MarkTaskDone]),
            t("Idle", "task_assigned", "ToPickup", route("@pickup")),
        ],
    }
}

fn nominal_noise() -> NoiseSpec {
    NoiseSpec { sigma_px: 2.0, odom_frac: 0.01, fp_rate: 0.005, fn_rate: 0.005 }
}

fn nominal_link() -> LinkSpec {
    LinkSpec { base_latency_s: 0.02, jitter_s: 0.02, drop_prob: 0.05, allow_reorder: false }
}

/// The flagship floor: a 55 x 20 m one-way counterclockwise loop (150 m
/// perimeter), kitting on the south run, assembly on the north run, six
/// depot spurs hanging south of the lane, and fifteen ceiling cameras
/// whose coverage deliberately leaves four ~0.5 m blind slivers over the
/// south lane.
fn volvo_geometry() -> (FloorplanSpec, NetworkSpec, GridSpec, Vec<CameraSpec>, Vec<RobotEntry>) {
    let mut nodes: BTreeMap<u32, [f64; 2]> = BTreeMap::new();
    let depot_x = [18.0, 22.0, 26.0, 30.0, 36.0, 40.0];

    nodes.insert(0, [0.0, 0.0]);
    let mut next = 1u32;
    let mut south_chain = vec![0u32];
    let mut spur_attach: Vec<(u32, u32)> = Vec::new();
    for &x in &depot_x {
        let a_in = next;
        nodes.insert(a_in, [x - 0.25, 0.0]);
        let a_out = next + 1;
        nodes.insert(a_out, [x + 0.25, 0.0]);
        next += 2;
        south_chain.push(a_in);
        south_chain.push(a_out);
        spur_attach.push((a_in, a_out));
    }
    let kitting = next;
    nodes.insert(kitting, [45.0, 0.0]);
    let se = next + 1;
    nodes.insert(se, [55.0, 0.0]);
    let ne = next + 2;
    nodes.insert(ne, [55.0, 20.0]);
    let assembly = next + 3;
    nodes.insert(assembly, [10.0, 20.0]);
    let nw = next + 4;
    nodes.insert(nw, [0.0, 20.0]);
    next += 5;
    south_chain.push(kitting);
    south_chain.push(se);

    let mut tips = Vec::new();
    for &x in &depot_x {
        nodes.insert(next, [x, -2.5]);
        tips.push(next);
        next += 1;
    }

    let mut edges = Vec::new();
    for w in south_chain.windows(2) {
        edges.push(edge(&nodes, w[0], w[1]));
    }
    edges.push(edge(&nodes, se, ne));
    edges.push(edge(&nodes, ne, assembly));
    edges.push(edge(&nodes, assembly, nw));
    edges.push(edge(&nodes, nw, 0));
    for (i, &(a_in, a_out)) in spur_attach.iter().enumerate() {
        edges.push(edge(&nodes, a_in, tips[i]));
        edges.push(edge(&nodes, tips[i], a_out));
    }

    let mut stations = BTreeMap::new();
    stations.insert("kitting".to_string(), kitting);
    stations.insert("assembly".to_string(), assembly);
    for (i, &tip) in tips.iter().enumerate() {
        stations.insert(format!("depot{i}"), tip);
    }

    let network = NetworkSpec { nodes, edges, intersections: vec![], stations };

    let obstacles = vec![
        ObstacleSpec { polygon: rect(5.0, 6.0, 15.0, 8.0), height: 3.0 },
        ObstacleSpec { polygon: rect(20.0, 6.0, 30.0, 8.0), height: 3.0 },
        ObstacleSpec { polygon: rect(35.0, 6.0, 45.0, 8.0), height: 3.0 },
        ObstacleSpec { polygon: rect(5.0, 12.0, 15.0, 14.0), height: 3.0 },
        ObstacleSpec { polygon: rect(20.0, 12.0, 30.0, 14.0), height: 3.0 },
        ObstacleSpec { polygon: rect(35.0, 12.0, 45.0, 14.0), height: 3.0 },
    ];
    let floorplan = FloorplanSpec { min: [-4.0, -4.0], max: [59.0, 24.0], obstacles };

    let grid = GridSpec { origin: (-6.0, -6.0), cell_size: 0.05, width: 1340, height: 640 };

    let row_x = [3.5, 15.0, 26.5, 38.0, 49.5];
    let mut cameras = Vec::new();
    for (i, &x) in row_x.iter().enumerate() {
        cameras.push(cam(i as u8, x, -1.0, 8.0, 0.0, 0.025 * (i % 4) as f64));
    }
    for (i, &x) in row_x.iter().enumerate() {
        cameras.push(cam(5 + i as u8, x, 21.0, 8.0, 0.0, 0.025 * ((i + 1) % 4) as f64));
    }
    let sides = [(0.0, 6.0), (0.0, 14.0), (55.0, 6.0), (55.0, 14.0)];
    for (i, &(x, y)) in sides.iter().enumerate() {
        cameras.push(cam(10 + i as u8, x, y, 8.0, std::f64::consts::FRAC_PI_2, 0.025 * (i % 4) as f64));
    }
    cameras.push(cam(14, 27.5, 10.0, 8.0, 0.0, 0.05));

    // Robots park on the depot tips aimed at the outbound attach point.
    let depart = (2.5f64).atan2(0.25);
    let robots = depot_x
        .iter()
        .enumerate()
        .map(|(i, &x)| amr(i as u16, x, -2.5, depart))
        .collect();

    (floorplan, network, grid, cameras, robots)
}

/// Throughput flagship: 6 robots, 150 m loop, ~7 min transport cycle,
/// one kitting-to-assembly task every 415 s for a 16 h day (138 tasks).
pub fn volvo_muffler() -> Scenario {
    let (floorplan, road_network, grid, cameras, robots) = volvo_geometry();
    let tasks = (0..138)
        .map(|k| {
            let arrival = 415.0 * k as f64;
            TaskSpec {
                id: k,
                a: "kitting".into(),
                b: "assembly".into(),
                arrival_s: arrival,
                window_a: [arrival, arrival + 600.0],
                window_b: [arrival, arrival + 900.0],
                service_s: 90.0,
            }
        })
        .collect();
    Scenario {
        schema_version: SCENARIO_SCHEMA_VERSION,
        name: "volvo-muffler".into(),
        seed: 20,
        duration_s: 57600.0,
        dt: 0.1,
        floorplan,
        road_network,
        grid,
        cameras,
        robots,
        agents: vec![],
        fsm: fsm_full(),
        tasks,
        noise: nominal_noise(),
        link: nominal_link(),
        scheduler: SchedulerSpec::Queue,
        detection_latency_s: 0.3,
        manual_overrides: vec![],
        persistence_filter: true,
    }
}

/// Mixed-traffic floor: two AMRs on a 26 x 8 m loop, a pedestrian and a
/// forklift crossing the south lane, and a tugger train cutting straight
/// through both lanes, each crossing wrapped in a priority zone. Agent
/// rest positions sit clear of the lanes so only deliberate crossings
/// interact with the fleet.
pub fn mixed_traffic() -> Scenario {
    let mut nodes: BTreeMap<u32, [f64; 2]> = BTreeMap::new();
    nodes.insert(0, [2.0, 2.0]);
    nodes.insert(1, [24.0, 2.0]); // pickup
    nodes.insert(2, [28.0, 2.0]);
    nodes.insert(3, [28.0, 10.0]);
    nodes.insert(4, [6.0, 10.0]); // dropoff
    nodes.insert(5, [2.0, 10.0]);
    let edges = vec![
        edge(&nodes, 0, 1),
        edge(&nodes, 1, 2),
        edge(&nodes, 2, 3),
        edge(&nodes, 3, 4),
        edge(&nodes, 4, 5),
        edge(&nodes, 5, 0),
    ];
    let mut stations = BTreeMap::new();
    stations.insert("pick".to_string(), 1);
    stations.insert("drop".to_string(), 4);

    // Inflated crossings: +-1.2 m along the lane, 1.3 m across it.
    let zone = |xc: f64, yc: f64| ZoneSpec {
        polygon: rect(xc - 1.2, yc - 1.3, xc + 1.2, yc + 1.3),
        priority: DEFAULT_PRIORITY.to_vec(),
    };
    let intersections = vec![
        zone(8.0, 2.0),  // pedestrian, south lane
        zone(20.0, 2.0), // forklift, south lane
        zone(15.0, 2.0), // tugger, south lane
        zone(15.0, 10.0), // tugger, north lane
    ];

    let road_network = NetworkSpec { nodes, edges, intersections, stations };
    let floorplan = FloorplanSpec {
        min: [0.0, 0.0],
        max: [30.0, 13.5],
        obstacles: vec![
            ObstacleSpec { polygon: rect(4.0, 5.0, 7.0, 7.0), height: 2.5 },
            ObstacleSpec { polygon: rect(23.0, 5.0, 26.0, 7.0), height: 2.5 },
        ],
    };
    let grid = GridSpec { origin: (-6.0, -6.0), cell_size: 0.05, width: 840, height: 480 };

    let mut cameras = Vec::new();
    for (i, x) in [4.0, 12.0, 20.0, 28.0].iter().enumerate() {
        cameras.push(cam(i as u8, *x, 2.0, 7.0, 0.0, 0.025 * (i % 4) as f64));
    }
    for (i, x) in [4.0, 12.0, 20.0, 28.0].iter().enumerate() {
        cameras.push(cam(4 + i as u8, *x, 10.0, 7.0, 0.0, 0.025 * ((i + 1) % 4) as f64));
    }
    for (i, x) in [8.0, 16.0, 24.0].iter().enumerate() {
        cameras.push(cam(8 + i as u8, *x, 6.0, 7.0, 0.0, 0.025 * (i % 4) as f64));
    }
    // The west lane needs its own mid-height camera: the y=6 row starts at
    // x=8 and the lane would otherwise have a fix gap between the rows.
    cameras.push(cam(11, 2.0, 6.0, 7.0, 0.0, 0.025));

    let robots = vec![amr(0, 10.0, 2.0, 0.0), amr(1, 20.0, 10.0, std::f64::consts::PI)];

    let sp = |t: f64, x: f64, y: f64, theta: f64| ScriptPoint { t, x, y, theta };
    let half_pi = std::f64::consts::FRAC_PI_2;
    // Rest positions sit far enough from the zones that a robot already
    // committed into a crossing clears it before the agent reaches the
    // lane: warning distance / agent speed exceeds the worst-case
    // commit-to-clear time of a zone (about 2.5 s).
    let ped_walk = 10.1 / 1.4;
    let fork_walk = 4.3 / 0.6;
    let agents = vec![
        // Pedestrian: crosses the south lane between two rest spots.
        AgentSpec {
            id: 0,
            kind: AgentKind::Pedestrian,
            footprint: FootprintSpec { length: 0.6, width: 0.6 },
            can_reverse: true,
            repeat_period: Some(40.0),
            script: vec![
                sp(0.0, 8.0, -3.8, half_pi),
                sp(6.0, 8.0, -3.8, half_pi),
                sp(6.0 + ped_walk, 8.0, 6.3, half_pi),
                sp(19.5, 8.0, 6.3, -half_pi),
                sp(19.5 + ped_walk, 8.0, -3.8, -half_pi),
            ],
        },
        // Forklift: dips south into the lane, dwells, and backs out.
        AgentSpec {
            id: 1,
            kind: AgentKind::Forklift,
            footprint: FootprintSpec { length: 1.6, width: 1.0 },
            can_reverse: true,
            repeat_period: Some(45.0),
            script: vec![
                sp(0.0, 20.0, 5.5, -half_pi),
                sp(8.0, 20.0, 5.5, -half_pi),
                sp(8.0 + fork_walk, 20.0, 1.2, -half_pi),
                sp(10.0 + fork_walk, 20.0, 1.2, -half_pi),
                sp(10.0 + 2.0 * fork_walk, 20.0, 5.5, -half_pi),
            ],
        },
        // Tugger train: one straight south-to-north pass through both
        // lanes per minute; it enters and leaves outside the floor, so
        // the wrap teleport never happens near traffic, and it idles two
        // seconds at the south end so the crossing flags before it moves.
        AgentSpec {
            id: 2,
            kind: AgentKind::TuggerTrain,
            footprint: FootprintSpec { length: 3.0, width: 1.0 },
            can_reverse: false,
            repeat_period: Some(60.0),
            script: vec![
                sp(0.0, 15.0, -3.0, half_pi),
                sp(2.0, 15.0, -3.0, half_pi),
                sp(20.0, 15.0, 15.0, half_pi),
            ],
        },
    ];

    let tasks = (0..6)
        .map(|k| {
            let arrival = 18.0 * k as f64;
            let (a, b) = if k % 2 == 0 { ("pick", "drop") } else { ("drop", "pick") };
            TaskSpec {
                id: k,
                a: a.into(),
                b: b.into(),
                arrival_s: arrival,
                window_a: [arrival, arrival + 90.0],
                window_b: [arrival, arrival + 150.0],
                service_s: 5.0,
            }
        })
        .collect();

    Scenario {
        schema_version: SCENARIO_SCHEMA_VERSION,
        name: "mixed-traffic".into(),
        seed: 7,
        duration_s: 120.0,
        dt: 0.1,
        floorplan,
        road_network,
        grid,
        cameras,
        robots,
        agents,
        fsm: fsm_minimal(),
        tasks,
        noise: nominal_noise(),
        link: nominal_link(),
        scheduler: SchedulerSpec::Queue,
        detection_latency_s: 0.3,
        manual_overrides: vec![],
        persistence_filter: true,
    }
}

/// Volvo geometry stripped of every noise source: one robot, one task,
/// perfect cameras, lossless link. The localization exactness gate.
pub fn zero_noise() -> Scenario {
    let mut sc = volvo_muffler();
    sc.name = "zero-noise".into();
    sc.seed = 3;
    sc.duration_s = 300.0;
    sc.robots.truncate(1);
    for c in &mut sc.cameras {
        c.skew = 0.0;
    }
    sc.tasks = vec![TaskSpec {
        id: 0,
        a: "kitting".into(),
        b: "assembly".into(),
        arrival_s: 0.0,
        window_a: [0.0, 600.0],
        window_b: [0.0, 900.0],
        service_s: 30.0,
    }];
    sc.noise = NoiseSpec { sigma_px: 0.0, odom_frac: 0.0, fp_rate: 0.0, fn_rate: 0.0 };
    sc.link = LinkSpec { base_latency_s: 0.02, jitter_s: 0.0, drop_prob: 0.0, allow_reorder: false };
    sc
}

/// Two robots driving under nominal noise; the fused-vs-hold comparison
/// scenario.
pub fn loc_noise() -> Scenario {
    let mut sc = volvo_muffler();
    sc.name = "loc-noise".into();
    sc.seed = 11;
    sc.duration_s = 120.0;
    sc.robots.truncate(2);
    sc.tasks = (0..2)
        .map(|k| TaskSpec {
            id: k,
            a: "kitting".into(),
            b: "assembly".into(),
            arrival_s: 10.0 * k as f64,
            window_a: [0.0, 600.0],
            window_b: [0.0, 900.0],
            service_s: 15.0,
        })
        .collect();
    sc
}

/// Degraded-network endurance: 20 % drop, 50 ms jitter, a mid-run manual
/// takeover, ten tasks for two robots.
pub fn chaos() -> Scenario {
    let mut sc = volvo_muffler();
    sc.name = "chaos".into();
    sc.seed = 13;
    sc.duration_s = 3600.0;
    sc.robots.truncate(2);
    sc.tasks = (0..10)
        .map(|k| {
            let arrival = 60.0 * k as f64;
            TaskSpec {
                id: k,
                a: "kitting".into(),
                b: "assembly".into(),
                arrival_s: arrival,
                window_a: [arrival, arrival + 600.0],
                window_b: [arrival, arrival + 900.0],
                service_s: 60.0,
            }
        })
        .collect();
    sc.link = LinkSpec { base_latency_s: 0.02, jitter_s: 0.05, drop_prob: 0.2, allow_reorder: false };
    // Operator freezes robot 0 mid-shift for a minute, then hands it back.
    sc.manual_overrides = vec![ManualOverrideSpec {
        robot: 0,
        engage_s: 1205.3,
        disengage_s: 1261.7,
        script: vec![],
    }];
    sc
}

/// Small fast fixture: one robot, two tasks, two cameras, 30 s. Feeds the
/// golden-output tests and doubles as a quick CLI demo.
pub fn smoke() -> Scenario {
    let mut nodes: BTreeMap<u32, [f64; 2]> = BTreeMap::new();
    nodes.insert(0, [2.0, 2.0]);
    nodes.insert(1, [8.0, 2.0]); // pick
    nodes.insert(2, [10.0, 2.0]);
    nodes.insert(3, [10.0, 6.0]);
    nodes.insert(4, [4.0, 6.0]); // drop
    nodes.insert(5, [2.0, 6.0]);
    let edges = vec![
        edge(&nodes, 0, 1),
        edge(&nodes, 1, 2),
        edge(&nodes, 2, 3),
        edge(&nodes, 3, 4),
        edge(&nodes, 4, 5),
        edge(&nodes, 5, 0),
    ];
    let mut stations = BTreeMap::new();
    stations.insert("pick".to_string(), 1);
    stations.insert("drop".to_string(), 4);
    let road_network = NetworkSpec { nodes, edges, intersections: vec![], stations };
    let floorplan = FloorplanSpec {
        min: [0.0, 0.0],
        max: [12.0, 8.0],
        obstacles: vec![ObstacleSpec { polygon: rect(5.5, 3.6, 7.0, 4.4), height: 2.0 }],
    };
    let grid = GridSpec { origin: (-2.0, -2.0), cell_size: 0.05, width: 320, height: 240 };
    let cameras = vec![cam(0, 4.0, 4.0, 5.0, 0.0, 0.0), cam(1, 8.0, 4.0, 5.0, 0.0, 0.025)];
    let robots = vec![amr(0, 3.0, 2.0, 0.0)];
    let tasks = (0..2)
        .map(|k| {
            let arrival = 2.0 * k as f64;
            let (a, b) = if k % 2 == 0 { ("pick", "drop") } else { ("drop", "pick") };
            TaskSpec {
                id: k,
                a: a.into(),
                b: b.into(),
                arrival_s: arrival,
                window_a: [arrival, arrival + 60.0],
                window_b: [arrival, arrival + 90.0],
                service_s: 3.0,
            }
        })
        .collect();
    Scenario {
        schema_version: SCENARIO_SCHEMA_VERSION,
        name: "smoke".into(),
        seed: 5,
        duration_s: 30.0,
        dt: 0.1,
        floorplan,
        road_network,
        grid,
        cameras,
        robots,
        agents: vec![],
        fsm: fsm_minimal(),
        tasks,
        noise: NoiseSpec { sigma_px: 1.0, odom_frac: 0.01, fp_rate: 0.002, fn_rate: 0.002 },
        link: LinkSpec { base_latency_s: 0.01, jitter_s: 0.01, drop_prob: 0.02, allow_reorder: false },
        scheduler: SchedulerSpec::Queue,
        detection_latency_s: 0.2,
        manual_overrides: vec![],
        persistence_filter: true,
    }
}

/// Standalone dispatch problem for the `solve` command: station-to-station
/// travel seconds, a small fleet, and a task set where first-come
/// assignment pays a tardiness premium the optimum avoids.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveInstance {
    pub schema_version: u32,
    pub travel_seconds: Vec<Vec<f64>>,
    pub robots: Vec<SolveRobot>,
    pub tasks: Vec<SolveTask>,
    pub lambda_tardiness: f64,
    pub hard_windows: bool,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SolveRobot {
    pub id: u16,
    pub start_station: u16,
    pub available_from: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SolveTask {
    pub id: u32,
    pub a_station: u16,
    pub b_station: u16,
    pub window_a: [f64; 2],
    pub window_b: [f64; 2],
    pub service_time: f64,
}

impl SolveInstance {
    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("instance serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let inst: Self = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if inst.schema_version != 1 {
            return Err(format!("unsupported instance schema version {}", inst.schema_version));
        }
        Ok(inst)
    }
}

pub fn bench6() -> SolveInstance {
    let task = |id: u32, a: u16, b: u16, wa: [f64; 2], wb: [f64; 2]| SolveTask {
        id,
        a_station: a,
        b_station: b,
        window_a: wa,
        window_b: wb,
        service_time: 10.0,
    };
    SolveInstance {
        schema_version: 1,
        travel_seconds: vec![
            vec![0.0, 60.0, 45.0, 90.0],
            vec![60.0, 0.0, 90.0, 45.0],
            vec![45.0, 90.0, 0.0, 60.0],
            vec![90.0, 45.0, 60.0, 0.0],
        ],
        robots: vec![
            SolveRobot { id: 0, start_station: 0, available_from: 0.0 },
            SolveRobot { id: 1, start_station: 1, available_from: 0.0 },
        ],
        tasks: vec![
            task(0, 0, 2, [0.0, 50.0], [0.0, 200.0]),
            task(1, 1, 3, [0.0, 50.0], [0.0, 200.0]),
            task(2, 2, 0, [100.0, 220.0], [150.0, 400.0]),
            task(3, 3, 1, [100.0, 220.0], [150.0, 400.0]),
            task(4, 0, 3, [200.0, 420.0], [250.0, 650.0]),
            task(5, 1, 2, [200.0, 420.0], [250.0, 650.0]),
        ],
        lambda_tardiness: 2.0,
        hard_windows: false,
    }
}

/// Every shipped file: (basename, contents).
pub fn all() -> Vec<(&'static str, String)> {
    vec![
        ("smoke.json", smoke().to_json_pretty()),
        ("volvo_muffler.json", volvo_muffler().to_json_pretty()),
        ("mixed_traffic.json", mixed_traffic().to_json_pretty()),
        ("zero_noise.json", zero_noise().to_json_pretty()),
        ("loc_noise.json", loc_noise().to_json_pretty()),
        ("chaos.json", chaos().to_json_pretty()),
        ("bench6.json", bench6().to_json_pretty()),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_shipped_scenario_validates() {
        for sc in [smoke(), volvo_muffler(), mixed_traffic(), zero_noise(), loc_noise(), chaos()] {
            sc.validate().unwrap_or_else(|e| panic!("{} invalid: {e}", sc.name));
        }
    }

    #[test]
    fn volvo_loop_is_150_meters() {
        let sc = volvo_muffler();
        let loop_len: f64 = sc
            .road_network
            .edges
            .iter()
            .filter(|e| {
                // Spur edges hang off the loop; everything else is lane.
                let tip_y = |id: u32| sc.road_network.nodes[&id][1] < -1.0;
                !(tip_y(e.from) || tip_y(e.to))
            })
            .map(|e| e.length)
            .sum();
        assert!((loop_len - 150.0).abs() < 1e-9, "loop length {loop_len}");
        assert_eq!(sc.robots.len(), 6);
        assert_eq!(sc.cameras.len(), 15);
        assert_eq!(sc.tasks.len(), 138);
    }

    #[test]
    fn scenario_json_round_trips() {
        let sc = mixed_traffic();
        let text = sc.to_json_pretty();
        let back = crate::scenario::parse_scenario(&text).unwrap();
        assert_eq!(back.to_json_pretty(), text);
    }

    #[test]
    fn bench_instance_parses_back() {
        let inst = bench6();
        let text = inst.to_json_pretty();
        let back = SolveInstance::from_json(&text).unwrap();
        assert_eq!(back.tasks.len(), 6);
        assert_eq!(back.travel_seconds[0][2], 45.0);
    }
}

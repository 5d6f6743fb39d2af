//! Co-simulation loop: ground-truth world, perception pipeline, cloud
//! control, per-robot links, and robot executors advanced in lockstep.
//!
//! Tick order is part of the determinism contract:
//! manual-override edges, camera observation, marker detections (1 Hz),
//! matured fix delivery, link polling (down then up), cloud control
//! (10 Hz), robot executors, world integration, then odometry, error
//! sampling, and collision/clearance bookkeeping on the post-step state.
//! All randomness comes from labeled substreams of the master seed plus
//! the world stream, drawn at fixed cadence in robot storage order.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand_distr::{Distribution, Normal};

use amrsim_core::fleet::{exact_vrptw, TravelTimeMatrix};
use amrsim_core::localization::{
    fuse, simulate_marker_detections, FusedPoseState, FusionEvent, MarkerFix, OdometrySample,
};
use amrsim_core::netproto::{encode, LinkModel};
use amrsim_core::perception::OccupancyGrid;
use amrsim_core::world::{
    collision_check, min_robot_clearance, step, AgentKind, DynamicAgent, EntityRef, RobotMode,
    VelocityCommand,
};
use amrsim_core::Pose2;

use crate::cloud::{Cloud, CloudEvent, CloudRobotInit, CloudTask};
use crate::logs::{EventLog, TrajectoryLog};
use crate::metrics::{finalize, RunMetrics, Totals, CLEARANCE_CAP};
use crate::pipeline::{GridPairView, PerceptionPipeline};
use crate::robot::RobotAgent;
use crate::scenario::{Scenario, SchedulerSpec};
use crate::seeds;

pub struct RunArtifacts {
    pub metrics: RunMetrics,
    pub events: String,
    pub trajectory: String,
}

struct OverrideRun {
    robot_index: usize,
    engage: f64,
    disengage: f64,
    /// Script carrier; reuses the agent interpolation rules.
    mover: Option<DynamicAgent>,
    engaged: bool,
}

fn entity_key(e: EntityRef) -> (u8, u64) {
    match e {
        EntityRef::Robot(id) => (0, id as u64),
        EntityRef::Agent(id) => (1, id as u64),
        EntityRef::Obstacle(i) => (2, i as u64),
    }
}

fn entity_label(e: EntityRef) -> String {
    match e {
        EntityRef::Robot(id) => format!("robot:{id}"),
        EntityRef::Agent(id) => format!("agent:{id}"),
        EntityRef::Obstacle(i) => format!("obstacle:{i}"),
    }
}

pub fn run_scenario(
    sc: &Scenario,
    seed_override: Option<u64>,
    pipelined: bool,
) -> Result<RunArtifacts, String> {
    sc.validate().map_err(|e| e.to_string())?;
    let seed = seed_override.unwrap_or(sc.seed);
    let dt = sc.dt;

    let mut world = sc.build_world(seeds::substream(seed, "world", 0))?;
    let cameras = sc.build_cameras()?;
    let mut pipeline = PerceptionPipeline::new(
        sc.grid.clone(),
        cameras.clone(),
        &world,
        sc.noise.fp_rate,
        sc.noise.fn_rate,
        seeds::sub_seed(seed, "pixels", 0),
        dt,
    );
    let net = sc.network();
    let fsm = sc.behavior_fsm().map_err(|e| e.to_string())?;

    let cloud_tasks: Vec<CloudTask> = sc
        .tasks
        .iter()
        .map(|t| CloudTask {
            id: t.id,
            pickup_node: sc.road_network.stations[&t.a],
            dropoff_node: sc.road_network.stations[&t.b],
            a_idx: sc.station_index(&t.a).expect("validated station"),
            b_idx: sc.station_index(&t.b).expect("validated station"),
            window_a: (t.window_a[0], t.window_a[1]),
            window_b: (t.window_b[0], t.window_b[1]),
            service: t.service_s,
            arrival: t.arrival_s,
        })
        .collect();

    let planned = match &sc.scheduler {
        SchedulerSpec::Queue => None,
        SchedulerSpec::Vrptw { lambda_tardiness, hard_windows } => {
            let (tasks, robots) = sc.fleet_instance().map_err(|e| e.to_string())?;
            let v_ref = sc
                .robots
                .iter()
                .map(|r| r.profile.v_max)
                .fold(f64::INFINITY, f64::min);
            let ttm = TravelTimeMatrix::from_network(&net, v_ref).map_err(|e| e.to_string())?;
            let schedule = exact_vrptw(&tasks, &robots, &ttm, *lambda_tardiness, *hard_windows)
                .map_err(|e| e.to_string())?;
            let mut per_robot: BTreeMap<u16, Vec<u32>> = BTreeMap::new();
            for route in &schedule.routes {
                per_robot.insert(route.robot_id, route.stops.iter().map(|s| s.task_id).collect());
            }
            Some(per_robot)
        }
    };

    let robot_inits: Vec<CloudRobotInit> = sc
        .robots
        .iter()
        .map(|r| CloudRobotInit {
            id: r.id,
            pose: Pose2::new(r.start[0], r.start[1], r.start[2]),
            footprint: amrsim_core::world::RectFootprint {
                length: r.footprint.length,
                width: r.footprint.width,
            },
            profile: r.profile.motion_profile(),
            depot_node: sc.road_network.stations.get(&format!("depot{}", r.id)).copied(),
        })
        .collect();
    let mut cloud = Cloud::new(fsm, net, robot_inits, cloud_tasks, planned, 0.0)?;

    let mut robots_rt: Vec<RobotAgent> = sc
        .robots
        .iter()
        .map(|r| {
            RobotAgent::new(
                r.id,
                Pose2::new(r.start[0], r.start[1], r.start[2]),
                r.profile.motion_profile(),
                0.0,
            )
        })
        .collect();
    let robot_index: BTreeMap<u16, usize> =
        sc.robots.iter().enumerate().map(|(i, r)| (r.id, i)).collect();

    let mut links_down: Vec<LinkModel> = sc
        .robots
        .iter()
        .map(|r| {
            LinkModel::new(
                sc.link.base_latency_s,
                sc.link.jitter_s,
                sc.link.drop_prob,
                sc.link.allow_reorder,
                seeds::substream(seed, "link-down", r.id as u64),
            )
        })
        .collect();
    let mut links_up: Vec<LinkModel> = sc
        .robots
        .iter()
        .map(|r| {
            LinkModel::new(
                sc.link.base_latency_s,
                sc.link.jitter_s,
                sc.link.drop_prob,
                sc.link.allow_reorder,
                seeds::substream(seed, "link-up", r.id as u64),
            )
        })
        .collect();

    // Metric-side estimators: the same fusion arithmetic as production but
    // fed raw (unquantized) fixes and odometry, plus a hold-last-fix
    // baseline. These gate localization accuracy without wire rounding.
    let mut ref_fused: Vec<FusedPoseState> = sc
        .robots
        .iter()
        .map(|r| FusedPoseState::new(r.id, Pose2::new(r.start[0], r.start[1], r.start[2]), 0.0))
        .collect();
    let mut zoh: Vec<Pose2> = sc
        .robots
        .iter()
        .map(|r| Pose2::new(r.start[0], r.start[1], r.start[2]))
        .collect();

    let mut overrides: Vec<OverrideRun> = Vec::new();
    for ov in &sc.manual_overrides {
        let Some(&ri) = robot_index.get(&ov.robot) else {
            return Err(format!("manual override references unknown robot {}", ov.robot));
        };
        let mover = (!ov.script.is_empty()).then(|| DynamicAgent {
            id: 60000 + ov.robot as u32,
            kind: AgentKind::Forklift,
            footprint: amrsim_core::world::RectFootprint {
                length: sc.robots[ri].footprint.length,
                width: sc.robots[ri].footprint.width,
            },
            script: ov.script.clone(),
            can_reverse: true,
            repeat_period: None,
        });
        overrides.push(OverrideRun {
            robot_index: ri,
            engage: ov.engage_s,
            disengage: ov.disengage_s,
            mover,
            engaged: false,
        });
    }

    let n_ticks = (sc.duration_s / dt).round() as u64;
    let fix_every = ((1.0 / dt).round() as u64).max(1);
    let ctrl_every = ((0.1 / dt).round() as u64).max(1);
    let sec_every = fix_every;
    let persistence = sc.persistence_filter;
    let gauss = Normal::new(0.0, 1.0).expect("unit normal");

    let mut fix_queue: VecDeque<(f64, MarkerFix)> = VecDeque::new();
    let mut totals = Totals::default();
    let mut elog = EventLog::new();
    elog.meta(&sc.name, seed, sc.duration_s, dt, sc.tasks.len() as u64);
    let mut tlog = TrajectoryLog::new();
    let mut collision_pairs: BTreeSet<((u8, u64), (u8, u64))> = BTreeSet::new();
    let mut stale_seen: u64 = 0;
    let mut prev_grid: Option<OccupancyGrid> = None;

    for k in 0..n_ticks {
        let now = world.clock;

        for ov in &mut overrides {
            if !ov.engaged && now + 1e-9 >= ov.engage && now < ov.disengage {
                ov.engaged = true;
                let r = &mut world.robots[ov.robot_index];
                let id = r.id;
                r.mode = RobotMode::Manual;
                r.v = 0.0;
                r.omega = 0.0;
                cloud.set_manual(id, true);
                robots_rt[ov.robot_index].set_manual(true);
                elog.manual_override(now, id, true);
            }
            if ov.engaged && now + 1e-9 >= ov.disengage {
                ov.engaged = false;
                let id = world.robots[ov.robot_index].id;
                world.robots[ov.robot_index].mode = RobotMode::Autonomous;
                cloud.set_manual(id, false);
                robots_rt[ov.robot_index].set_manual(false);
                elog.manual_override(now, id, false);
            }
            if ov.engaged {
                if let Some(mover) = &ov.mover {
                    world.robots[ov.robot_index].pose = mover.pose_at(now);
                }
            }
        }

        pipeline.observe(&world, k);

        if k % fix_every == 0 {
            let fixes = simulate_marker_detections(&mut world, &cameras, sc.noise.sigma_px, now);
            for f in fixes {
                fix_queue.push_back((now + sc.detection_latency_s, f));
            }
        }

        while fix_queue.front().is_some_and(|(due, _)| *due <= now + 1e-9) {
            let (_, fix) = fix_queue.pop_front().expect("front checked");
            if cloud.accept_fix(&fix, now) {
                stale_seen += 1;
                elog.fix_stale(now, fix.robot_id, stale_seen);
            }
            if let Some(&i) = robot_index.get(&fix.robot_id) {
                fuse(&mut ref_fused[i], FusionEvent::Fix(fix));
                zoh[i] = fix.pose;
            }
        }

        for (i, link) in links_down.iter_mut().enumerate() {
            for bytes in link.poll(now) {
                let _ = robots_rt[i].on_downlink(&bytes, now);
            }
        }
        for link in links_up.iter_mut() {
            for bytes in link.poll(now) {
                cloud.accept_uplink(&bytes, now);
            }
        }

        if k % ctrl_every == 0 {
            let ctrl_dt = dt * ctrl_every as f64;
            if pipelined {
                let cur = pipeline.materialize_pipelined(k);
                {
                    let view = GridPairView { cur: &cur, prev: prev_grid.as_ref(), persistence };
                    cloud.control_tick(now, ctrl_dt, &view, &world.agents);
                }
                prev_grid = Some(cur);
            } else {
                let view = pipeline.blocked_view(k, persistence);
                cloud.control_tick(now, ctrl_dt, &view, &world.agents);
            }
            for (rid, header, body) in cloud.drain_outbox() {
                let bytes = encode(&header, &body).map_err(|e| e.to_string())?;
                if let Some(&i) = robot_index.get(&rid) {
                    links_down[i].send(bytes, now);
                }
            }
            for ev in cloud.drain_events() {
                match ev {
                    CloudEvent::TaskAssigned { task, robot } => elog.task_assigned(now, task, robot),
                    CloudEvent::TaskCompleted { task, robot, pickup_tardiness, delivery_tardiness } => {
                        totals.tasks_completed += 1;
                        totals.tardiness_total_s += delivery_tardiness;
                        elog.task_completed(now, task, robot, pickup_tardiness, delivery_tardiness);
                    }
                }
            }
        }

        if k % sec_every == 0 {
            for r in &world.robots {
                let mode = match r.mode {
                    RobotMode::Autonomous => "auto",
                    RobotMode::Manual => "manual",
                };
                tlog.row(now, r.id, r.pose.x, r.pose.y, r.pose.theta, r.v, mode);
            }
        }

        let mut commands = Vec::with_capacity(robots_rt.len());
        for r in &mut robots_rt {
            let (v, omega) = r.command(now, dt);
            commands.push(VelocityCommand { robot_id: r.id, v, omega });
        }
        step(&mut world, &commands, dt);
        let now2 = world.clock;

        for i in 0..world.robots.len() {
            // Two draws per robot per tick, storage order, whether the
            // values matter or not: stream alignment is the contract.
            let g_v: f64 = gauss.sample(&mut world.rng);
            let g_w: f64 = gauss.sample(&mut world.rng);
            let v_meas = world.robots[i].v * (1.0 + sc.noise.odom_frac * g_v);
            let w_meas = world.robots[i].omega * (1.0 + sc.noise.odom_frac * g_w);
            let sample = OdometrySample {
                robot_id: world.robots[i].id,
                dt,
                v_meas,
                omega_meas: w_meas,
                stamp: now2,
            };
            robots_rt[i].apply_own_odometry(sample);
            fuse(&mut ref_fused[i], FusionEvent::Odometry(sample));
            let bytes = robots_rt[i].odometry_datagram(v_meas, w_meas, dt, now2);
            links_up[i].send(bytes, now2);
            if k % sec_every == 0 {
                let bytes = if (k / sec_every) % 2 == 0 {
                    robots_rt[i].status_datagram(now2)
                } else {
                    robots_rt[i].heartbeat_datagram(now2)
                };
                links_up[i].send(bytes, now2);
            }
        }

        for i in 0..world.robots.len() {
            let truth = &world.robots[i].pose;
            let err2 = |p: &Pose2| {
                let (dx, dy) = (p.x - truth.x, p.y - truth.y);
                dx * dx + dy * dy
            };
            totals.pose_sample(
                err2(&ref_fused[i].pose),
                err2(&zoh[i]),
                err2(&robots_rt[i].est.pose),
            );
        }

        let collisions = collision_check(&world);
        let mut current_pairs = BTreeSet::new();
        for c in &collisions {
            let key = (entity_key(c.a), entity_key(c.b));
            current_pairs.insert(key);
            if !collision_pairs.contains(&key) {
                totals.collisions += 1;
                elog.collision(now2, &entity_label(c.a), &entity_label(c.b));
            }
        }
        collision_pairs = current_pairs;
        let clearance = min_robot_clearance(&world, CLEARANCE_CAP);
        if totals.clearance(clearance) {
            elog.clearance_min(now2, clearance);
        }
    }

    totals.stale_fixes = stale_seen;
    totals.dropped_datagrams = links_down
        .iter()
        .chain(links_up.iter())
        .map(|l| l.dropped)
        .sum();
    elog.summary(world.clock, &totals);
    let metrics = finalize(&sc.name, seed, sc.duration_s, sc.tasks.len() as u64, &totals);
    Ok(RunArtifacts { metrics, events: elog.into_string(), trajectory: tlog.into_string() })
}

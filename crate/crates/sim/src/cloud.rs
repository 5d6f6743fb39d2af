//! Cloud-side control stack.
//!
//! The cloud owns everything heavier than wheel control: it fuses a shadow
//! pose per robot from camera fixes and wire odometry, assigns tasks, plans
//! routes, arbitrates intersection zones, sweeps corridors in the fused
//! grid, and streams truncated waypoint plans to the robots. Robots only
//! ever see plans, fixes, stop commands, and task notices; all stop margins
//! are baked into where a plan ends, so a robot braking to its plan end
//! with zero margin lands exactly where the cloud intended.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use amrsim_core::behavior::{
    step_fsm, yield_decision, Action, BehaviorContext, FsmSpec, GuardExpr, Predicate, StopTarget,
    YieldDecision, ZoneOccupant,
};
use amrsim_core::fleet::queue_dispatch;
use amrsim_core::geom2d::{clip_segment_to_convex, convex_overlap_depth, oriented_rect, P2};
use amrsim_core::localization::{fuse, FusedPoseState, FusionEvent, MarkerFix, OdometrySample};
use amrsim_core::motion::{lookahead_target, MotionProfile, TrackerState, GRID_FRESHNESS};
use amrsim_core::netproto::{decode, Header, MessageBody, WirePoint, MAX_WAYPOINTS};
use amrsim_core::perception::{corridor_clear, OccupancyQuery};
use amrsim_core::planning::{astar, nearest_entry, PlanningError, RoutePlan};
use amrsim_core::world::{DynamicAgent, IntersectionZone, RectFootprint, RoadNetwork};
use amrsim_core::Pose2;

use crate::pipeline::MaskedView;

/// Arrival detection: this close to the route end, this slow, counts as at
/// the goal.
const AT_GOAL_DIST: f64 = 0.3;
const AT_GOAL_SPEED: f64 = 0.05;
/// Extra gap between a waiting robot's nose and a zone boundary.
const ZONE_PAD: f64 = 0.15;
/// Extra gap on top of the stop margin when braking for a blockage.
const BLOCK_PAD: f64 = 0.1;
/// Self-footprint mask inflation; covers rasterization and pixel-mapping
/// quantization around the robot's own body.
const MASK_PAD: f64 = 0.12;
/// The shadow pose trails the true pose by the odometry wire delay, so a
/// moving robot's nose pokes out ahead of a mask centered on the shadow.
/// The mask is stretched forward by speed times this allowance.
const MASK_LEAD: f64 = 0.25;
/// Between fixes the shadow also drifts sideways (heading mismatch times
/// distance), so the mask pad grows isotropically with speed too.
const MASK_SLIP: f64 = 0.15;
/// Mask pad growth per metre travelled since the last accepted fix; the
/// shadow drifts on raw odometry between fixes and the mask must keep
/// covering the body it is hiding.
const MASK_DRIFT: f64 = 0.10;
/// Upper bound on the drift term of the mask pad.
const MASK_DRIFT_CAP: f64 = 0.30;
/// Corridor sweep length beyond the braking distance plus lookahead.
const BLOCK_EXTRA: f64 = 3.0;
/// Zone arbitration engages within braking distance plus this.
const APPROACH_EXTRA: f64 = 5.0;
/// Agents are predicted this many seconds ahead when checking zones.
const PRED_T: f64 = 3.0;
/// Plans are refreshed at least this often even when nothing changed.
const RESEND_PERIOD: f64 = 1.0;
/// A stop target moving less than this does not trigger a resend.
const STOP_DELTA: f64 = 0.05;
/// A robot silent for this long is stopped and its plan withheld.
const WATCH_SILENCE: f64 = 2.5;
/// Fix capture times are padded by this before shadow fusion so odometry
/// stamped from microsecond wire timestamps can never replay the sample
/// that the fix pose already contains.
const CAPTURE_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudTask {
    pub id: u32,
    pub pickup_node: u32,
    pub dropoff_node: u32,
    /// Station indices as carried on the wire in task notices.
    pub a_idx: u16,
    pub b_idx: u16,
    pub window_a: (f64, f64),
    pub window_b: (f64, f64),
    pub service: f64,
    pub arrival: f64,
}

#[derive(Debug, Clone)]
struct ActiveTask {
    task: CloudTask,
    pickup_arrival: Option<f64>,
    dropoff_arrival: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CloudEvent {
    TaskAssigned { task: u32, robot: u16 },
    TaskCompleted { task: u32, robot: u16, pickup_tardiness: f64, delivery_tardiness: f64 },
}

pub struct CloudRobotInit {
    pub id: u16,
    pub pose: Pose2,
    pub footprint: RectFootprint,
    pub profile: MotionProfile,
    pub depot_node: Option<u32>,
}

struct CloudRobot {
    id: u16,
    shadow: FusedPoseState,
    footprint: RectFootprint,
    profile: MotionProfile,
    depot_node: Option<u32>,
    fsm_state: String,
    time_in_state: f64,
    task: Option<ActiveTask>,
    tracker: Option<TrackerState>,
    /// Zone crossing intervals (zone index, enter, exit) of the current
    /// route, ascending.
    crossings: Vec<(usize, f64, f64)>,
    goal_node: Option<u32>,
    halted: bool,
    manual: bool,
    last_wire_v: f64,
    last_wire_omega: f64,
    /// Odometry distance accumulated since the last accepted fix; a proxy
    /// for how far the shadow may have drifted from the body.
    dist_since_fix: f64,
    /// Zone currently being waited on. Latched so that a stop that
    /// overshoots the line a little keeps waiting instead of flipping to
    /// committed and driving into occupied space.
    zone_wait: Option<usize>,
    last_heard: f64,
    last_plan_sent: f64,
    last_stop_s: f64,
    route_generation: u64,
    sent_generation: u64,
    seq: u32,
    lost_stop_sent: f64,
}

enum Dispatch {
    /// Arrived tasks queue FIFO; the longest-idle robot takes the oldest.
    Queue { pending: VecDeque<u32> },
    /// Precomputed per-robot task orders (from the optimal solver).
    Planned { per_robot: BTreeMap<u16, VecDeque<u32>> },
}

pub struct Cloud {
    pub fsm: FsmSpec,
    pub net: RoadNetwork,
    robots: Vec<CloudRobot>,
    tasks: BTreeMap<u32, CloudTask>,
    /// Task ids in arrival order, released into the dispatcher over time.
    by_arrival: Vec<u32>,
    next_release: usize,
    dispatch: Dispatch,
    idle_queue: VecDeque<u16>,
    /// States from which a task assignment can fire, derived from the FSM.
    dispatch_states: BTreeSet<String>,
    outbox: Vec<(u16, Header, MessageBody)>,
    events: Vec<CloudEvent>,
    pub stale_fix_count: u64,
}

impl Cloud {
    pub fn new(
        fsm: FsmSpec,
        net: RoadNetwork,
        robots: Vec<CloudRobotInit>,
        mut tasks: Vec<CloudTask>,
        planned: Option<BTreeMap<u16, Vec<u32>>>,
        now: f64,
    ) -> Result<Self, String> {
        fsm.validate().map_err(|e| e.to_string())?;
        for t in &fsm.transitions {
            for a in &t.actions {
                if let Action::RequestRoute(arg) = a {
                    match arg.as_str() {
                        "@pickup" | "@dropoff" => {}
                        "@depot" => {
                            for r in &robots {
                                if r.depot_node.is_none() {
                                    return Err(format!(
                                        "fsm routes to @depot but robot {} has no depot station",
                                        r.id
                                    ));
                                }
                            }
                        }
                        name => {
                            if !net.stations.contains_key(name) {
                                return Err(format!("fsm routes to unknown station `{name}`"));
                            }
                        }
                    }
                }
            }
        }

        let dispatch_states: BTreeSet<String> = fsm
            .transitions
            .iter()
            .filter(|t| mentions_task_assigned(&t.guard))
            .map(|t| t.from.clone())
            .collect();

        tasks.sort_by(|a, b| a.arrival.total_cmp(&b.arrival).then(a.id.cmp(&b.id)));
        let by_arrival: Vec<u32> = tasks.iter().map(|t| t.id).collect();
        let task_map: BTreeMap<u32, CloudTask> = tasks.into_iter().map(|t| (t.id, t)).collect();

        let dispatch = match planned {
            Some(per_robot) => Dispatch::Planned {
                per_robot: per_robot.into_iter().map(|(k, v)| (k, v.into())).collect(),
            },
            None => Dispatch::Queue { pending: VecDeque::new() },
        };

        let initial = fsm.initial.clone();
        let cloud_robots: Vec<CloudRobot> = robots
            .into_iter()
            .map(|r| CloudRobot {
                id: r.id,
                shadow: FusedPoseState::new(r.id, r.pose, now),
                footprint: r.footprint,
                profile: r.profile,
                depot_node: r.depot_node,
                fsm_state: initial.clone(),
                time_in_state: 0.0,
                task: None,
                tracker: None,
                crossings: Vec::new(),
                goal_node: None,
                halted: false,
                manual: false,
                last_wire_v: 0.0,
                last_wire_omega: 0.0,
                dist_since_fix: 0.0,
                zone_wait: None,
                last_heard: now,
                last_plan_sent: f64::NEG_INFINITY,
                last_stop_s: f64::NAN,
                route_generation: 0,
                sent_generation: 0,
                seq: 0,
                lost_stop_sent: f64::NEG_INFINITY,
            })
            .collect();

        let idle_queue = cloud_robots
            .iter()
            .filter(|r| dispatch_states.contains(&r.fsm_state))
            .map(|r| r.id)
            .collect();

        Ok(Self {
            fsm,
            net,
            robots: cloud_robots,
            tasks: task_map,
            by_arrival,
            next_release: 0,
            dispatch,
            idle_queue,
            dispatch_states,
            outbox: Vec::new(),
            events: Vec::new(),
            stale_fix_count: 0,
        })
    }

    fn robot_index(&self, id: u16) -> Option<usize> {
        self.robots.iter().position(|r| r.id == id)
    }

    /// A localization fix became available cloud-side: fold it into the
    /// shadow estimate and forward it to the robot. True when the fix was
    /// older than one already fused (and therefore ignored).
    pub fn accept_fix(&mut self, fix: &MarkerFix, now: f64) -> bool {
        let Some(i) = self.robot_index(fix.robot_id) else { return false };
        let before = self.robots[i].shadow.stale_fix_count;
        let mut padded = *fix;
        padded.capture_time += CAPTURE_SLACK;
        fuse(&mut self.robots[i].shadow, FusionEvent::Fix(padded));
        let stale = self.robots[i].shadow.stale_fix_count > before;
        self.stale_fix_count += self.robots[i].shadow.stale_fix_count - before;
        if !stale {
            self.robots[i].dist_since_fix = 0.0;
        }

        let r = &mut self.robots[i];
        let body = MessageBody::PoseFix {
            x_mm: (fix.pose.x * 1000.0).round() as i32,
            y_mm: (fix.pose.y * 1000.0).round() as i32,
            theta_urad: (fix.pose.theta * 1e6).round() as i32,
            // Ceil: the robot prunes odometry stamped at or before this, so
            // the wire capture time must never round below the true one.
            capture_time_us: (fix.capture_time * 1e6).ceil() as u64,
        };
        let header = Header { robot_id: r.id, seq: r.seq, timestamp_us: (now * 1e6).round() as u64 };
        r.seq += 1;
        self.outbox.push((r.id, header, body));
        stale
    }

    /// Datagram arriving from a robot over its uplink.
    pub fn accept_uplink(&mut self, bytes: &[u8], _now: f64) {
        let Ok((header, body)) = decode(bytes) else { return };
        let Some(i) = self.robot_index(header.robot_id) else { return };
        let r = &mut self.robots[i];
        let stamp = header.timestamp_us as f64 / 1e6;
        r.last_heard = stamp.max(r.last_heard);
        match body {
            MessageBody::OdometryReport { v_mms, omega_mrads, dt_us } => {
                let sample = OdometrySample {
                    robot_id: r.id,
                    dt: dt_us as f64 / 1e6,
                    v_meas: v_mms as f64 / 1000.0,
                    omega_meas: omega_mrads as f64 / 1000.0,
                    stamp,
                };
                r.last_wire_v = sample.v_meas;
                r.last_wire_omega = sample.omega_meas;
                r.dist_since_fix += (sample.v_meas * sample.dt).abs();
                fuse(&mut r.shadow, FusionEvent::Odometry(sample));
            }
            MessageBody::StatusReport { .. } | MessageBody::Heartbeat => {}
            _ => {}
        }
    }

    pub fn set_manual(&mut self, robot: u16, engaged: bool) {
        if let Some(i) = self.robot_index(robot) {
            self.robots[i].manual = engaged;
        }
    }

    pub fn shadow_pose(&self, robot: u16) -> Option<Pose2> {
        self.robot_index(robot).map(|i| self.robots[i].shadow.pose)
    }

    pub fn fsm_state_code(&self, robot: u16) -> u8 {
        self.robot_index(robot)
            .and_then(|i| self.fsm.states.iter().position(|s| *s == self.robots[i].fsm_state))
            .map(|p| p as u8)
            .unwrap_or(u8::MAX)
    }

    pub fn drain_outbox(&mut self) -> Vec<(u16, Header, MessageBody)> {
        std::mem::take(&mut self.outbox)
    }

    pub fn drain_events(&mut self) -> Vec<CloudEvent> {
        std::mem::take(&mut self.events)
    }

    /// Ten-hertz supervisory tick.
    pub fn control_tick(
        &mut self,
        now: f64,
        dt: f64,
        view: &impl OccupancyQuery,
        agents: &[DynamicAgent],
    ) {
        self.release_arrivals(now);
        self.assign_tasks(now);

        // Shadow poses and zone geometry for everyone first; arbitration
        // needs a consistent snapshot across robots.
        for i in 0..self.robots.len() {
            let r = &mut self.robots[i];
            if let Some(tr) = &mut r.tracker {
                let (_, progress) =
                    lookahead_target(&tr.route, &r.shadow.pose, r.profile.lookahead, tr.progress_arclength);
                tr.progress_arclength = progress;
            }
        }
        let zone_snapshot = self.zone_snapshot(now, dt, agents);

        for i in 0..self.robots.len() {
            self.robot_tick(i, now, dt, view, &zone_snapshot);
        }
    }

    fn release_arrivals(&mut self, now: f64) {
        while self.next_release < self.by_arrival.len() {
            let id = self.by_arrival[self.next_release];
            if self.tasks[&id].arrival > now {
                break;
            }
            if let Dispatch::Queue { pending } = &mut self.dispatch {
                pending.push_back(id);
            }
            self.next_release += 1;
        }
    }

    fn assign_tasks(&mut self, now: f64) {
        loop {
            let mut assigned = false;
            match &mut self.dispatch {
                Dispatch::Queue { pending } => {
                    if !pending.is_empty() && !self.idle_queue.is_empty() {
                        let robot = queue_dispatch(&mut self.idle_queue).expect("queue checked");
                        let task_id = pending.pop_front().expect("pending checked");
                        let i = self.robots.iter().position(|r| r.id == robot).expect("known robot");
                        let task = self.tasks[&task_id];
                        self.robots[i].task =
                            Some(ActiveTask { task, pickup_arrival: None, dropoff_arrival: None });
                        self.events.push(CloudEvent::TaskAssigned { task: task_id, robot });
                        let r = &mut self.robots[i];
                        let header =
                            Header { robot_id: r.id, seq: r.seq, timestamp_us: (now * 1e6).round() as u64 };
                        r.seq += 1;
                        self.outbox.push((
                            r.id,
                            header,
                            MessageBody::TaskAssign {
                                task_id,
                                a_station: task.a_idx,
                                b_station: task.b_idx,
                            },
                        ));
                        assigned = true;
                    }
                }
                Dispatch::Planned { per_robot } => {
                    // Each robot follows its own precomputed order as soon
                    // as it is idle and the next task has arrived.
                    let mut pick: Option<(u16, u32)> = None;
                    for &rid in self.idle_queue.iter() {
                        if let Some(q) = per_robot.get(&rid) {
                            if let Some(&tid) = q.front() {
                                if self.tasks[&tid].arrival <= now {
                                    pick = Some((rid, tid));
                                    break;
                                }
                            }
                        }
                    }
                    if let Some((rid, tid)) = pick {
                        per_robot.get_mut(&rid).expect("picked above").pop_front();
                        self.idle_queue.retain(|&x| x != rid);
                        let i = self.robots.iter().position(|r| r.id == rid).expect("known robot");
                        let task = self.tasks[&tid];
                        self.robots[i].task =
                            Some(ActiveTask { task, pickup_arrival: None, dropoff_arrival: None });
                        self.events.push(CloudEvent::TaskAssigned { task: tid, robot: rid });
                        let r = &mut self.robots[i];
                        let header =
                            Header { robot_id: r.id, seq: r.seq, timestamp_us: (now * 1e6).round() as u64 };
                        r.seq += 1;
                        self.outbox.push((
                            r.id,
                            header,
                            MessageBody::TaskAssign {
                                task_id: tid,
                                a_station: task.a_idx,
                                b_station: task.b_idx,
                            },
                        ));
                        assigned = true;
                    }
                }
            }
            if !assigned {
                break;
            }
        }
    }

    /// Per-zone occupancy and approach snapshot for this tick.
    fn zone_snapshot(&self, now: f64, dt: f64, agents: &[DynamicAgent]) -> Vec<Vec<ZoneOccupant>> {
        let zones = &self.net.intersections;
        let mut per_zone: Vec<Vec<ZoneOccupant>> = vec![Vec::new(); zones.len()];

        for r in &self.robots {
            let poly = r.footprint.polygon(&r.shadow.pose);
            let horizon = approach_horizon(r.last_wire_v, &r.profile);
            for (zi, zone) in zones.iter().enumerate() {
                let mut involved = convex_overlap_depth(&poly, &zone.polygon).is_some();
                if !involved {
                    if let Some(tr) = &r.tracker {
                        let p = tr.progress_arclength;
                        involved = r.crossings.iter().any(|&(z, s0, s1)| {
                            z == zi && s1 > p && s0 - p <= horizon
                        });
                    }
                }
                if involved {
                    per_zone[zi].push(ZoneOccupant {
                        class: amrsim_core::world::PriorityClass::Amr,
                        robot_id: Some(r.id),
                    });
                }
            }
        }

        // Perceived external traffic: last frame's pose plus a constant
        // velocity reach. Class comes with the track.
        let t_obs = (now - dt).max(0.0);
        let t_prev = (now - 2.0 * dt).max(0.0);
        for a in agents {
            let pose = a.pose_at(t_obs);
            let prev = a.pose_at(t_prev);
            let (vx, vy) = if dt > 0.0 && t_obs > t_prev {
                ((pose.x - prev.x) / dt, (pose.y - prev.y) / dt)
            } else {
                (0.0, 0.0)
            };
            let reach = Pose2::new(pose.x + vx * PRED_T, pose.y + vy * PRED_T, pose.theta);
            let now_poly = a.footprint.polygon(&pose);
            let reach_poly = a.footprint.polygon(&reach);
            for (zi, zone) in zones.iter().enumerate() {
                if convex_overlap_depth(&now_poly, &zone.polygon).is_some()
                    || convex_overlap_depth(&reach_poly, &zone.polygon).is_some()
                    || path_crosses_zone(&pose, &reach, &zone.polygon)
                {
                    per_zone[zi].push(ZoneOccupant { class: a.kind.priority_class(), robot_id: None });
                }
            }
        }
        per_zone
    }

    fn robot_tick(
        &mut self,
        i: usize,
        now: f64,
        dt: f64,
        view: &impl OccupancyQuery,
        zone_snapshot: &[Vec<ZoneOccupant>],
    ) {
        // Lost-link safety: a silent robot gets a standing stop order.
        if now - self.robots[i].last_heard > WATCH_SILENCE
            && now - self.robots[i].lost_stop_sent >= RESEND_PERIOD
            && !self.robots[i].manual
        {
            self.robots[i].lost_stop_sent = now;
            self.push_message(i, now, MessageBody::StopCommand);
        }

        let (zone_stop, intersection_free, zone_wait) = self.zone_decision(i, zone_snapshot);
        self.robots[i].zone_wait = zone_wait;
        let (path_clear, block_stop) = self.corridor_decision(i, now, view);

        let (at_goal, goal_reached_node) = {
            let r = &self.robots[i];
            match (&r.tracker, r.goal_node) {
                (Some(tr), Some(node)) => {
                    let done = tr.route.total_length - tr.progress_arclength <= AT_GOAL_DIST
                        && r.last_wire_v.abs() <= AT_GOAL_SPEED;
                    (done, done.then_some(node))
                }
                _ => (false, None),
            }
        };

        // Arrival bookkeeping feeds tardiness metrics.
        if let Some(node) = goal_reached_node {
            let r = &mut self.robots[i];
            if let Some(active) = &mut r.task {
                if node == active.task.pickup_node && active.pickup_arrival.is_none() {
                    active.pickup_arrival = Some(now);
                } else if node == active.task.dropoff_node
                    && active.pickup_arrival.is_some()
                    && active.dropoff_arrival.is_none()
                {
                    active.dropoff_arrival = Some(now);
                }
            }
        }

        let ctx = {
            let r = &self.robots[i];
            BehaviorContext {
                path_clear,
                at_goal,
                kitted: r
                    .task
                    .as_ref()
                    .map(|t| r.time_in_state >= t.task.service)
                    .unwrap_or(false),
                intersection_free,
                task_assigned: r.task.is_some(),
                manual_mode: r.manual,
                time_in_state: r.time_in_state,
            }
        };

        let (next_state, actions) = step_fsm(&self.robots[i].fsm_state, &self.fsm, &ctx);
        if next_state != self.robots[i].fsm_state {
            self.robots[i].fsm_state = next_state;
            self.robots[i].time_in_state = 0.0;
        } else {
            self.robots[i].time_in_state += dt;
        }
        for action in actions {
            self.apply_action(i, now, &action);
        }
        self.update_idle_membership(i);

        // Stream the plan: route truncated at the nearest stop reason.
        let r = &self.robots[i];
        if r.manual || r.halted || now - r.last_heard > WATCH_SILENCE {
            return;
        }
        let Some(tr) = &r.tracker else { return };
        let progress = tr.progress_arclength;
        let mut stop_s = tr.route.total_length;
        if let Some(s) = tr.stop_target {
            stop_s = stop_s.min(s);
        }
        if let Some(s) = zone_stop {
            stop_s = stop_s.min(s);
        }
        if let Some(s) = block_stop {
            stop_s = stop_s.min(s);
        }
        stop_s = stop_s.max(progress);

        let generation_changed = r.route_generation != r.sent_generation;
        let moved = (stop_s - r.last_stop_s).abs() > STOP_DELTA || r.last_stop_s.is_nan();
        let due = now - r.last_plan_sent >= RESEND_PERIOD;
        if !(generation_changed || moved || due) {
            return;
        }
        let points = plan_points(&tr.route, progress, stop_s, r.profile.v_max);
        if points.is_empty() {
            return;
        }
        let gen = r.route_generation;
        self.robots[i].last_plan_sent = now;
        self.robots[i].last_stop_s = stop_s;
        self.robots[i].sent_generation = gen;
        self.push_message(i, now, MessageBody::WaypointPlan { points });
    }

    /// Earliest zone-imposed stop for robot `i`, whether every zone ahead
    /// is free to take, and the zone the robot is now waiting on.
    fn zone_decision(
        &self,
        i: usize,
        snapshot: &[Vec<ZoneOccupant>],
    ) -> (Option<f64>, bool, Option<usize>) {
        let r = &self.robots[i];
        let Some(tr) = &r.tracker else { return (None, true, None) };
        let progress = tr.progress_arclength;
        let horizon = approach_horizon(r.last_wire_v, &r.profile);
        let mut stop: Option<f64> = None;
        let mut free = true;
        let mut wait: Option<usize> = None;
        for &(zi, s0, s1) in &r.crossings {
            if s1 <= progress {
                continue;
            }
            let latched = r.zone_wait == Some(zi);
            if !latched {
                if progress + r.profile.front_overhang >= s0 {
                    // Nose already across the line: committed, keep going.
                    continue;
                }
                if s0 - progress > horizon {
                    break;
                }
            }
            let zone = &self.net.intersections[zi];
            if yield_decision(r.id, zone, &snapshot[zi]) == YieldDecision::Wait {
                let s = (s0 - r.profile.front_overhang - ZONE_PAD).max(progress);
                // A stop line closer than the braking distance cannot be
                // honored; slowing onto it and then creeping through is
                // worse than clearing the zone at speed, so commit. No
                // latency slack here: a stop that lands a little past the
                // line is held by the latch, while slack would turn distant
                // fast approaches into slow, long exposures in the zone.
                let brake = r.last_wire_v * r.last_wire_v / (2.0 * r.profile.decel);
                if !latched && s - progress < brake {
                    continue;
                }
                free = false;
                wait = wait.or(Some(zi));
                stop = Some(stop.map_or(s, |cur: f64| cur.min(s)));
            }
        }
        (stop, free, wait)
    }

    /// Corridor sweep against the fused grid, masked around the robot's own
    /// body. Returns (path_clear, stop arclength if any).
    fn corridor_decision(
        &self,
        i: usize,
        now: f64,
        view: &impl OccupancyQuery,
    ) -> (bool, Option<f64>) {
        let r = &self.robots[i];
        let Some(tr) = &r.tracker else { return (true, None) };
        if now - view.stamp() > GRID_FRESHNESS {
            // No fresh grid, no motion.
            return (false, Some(tr.progress_arclength));
        }
        let pose = &r.shadow.pose;
        let lead = r.last_wire_v.abs() * MASK_LEAD;
        let pad = MASK_PAD
            + r.last_wire_v.abs() * MASK_SLIP
            + (r.dist_since_fix * MASK_DRIFT).min(MASK_DRIFT_CAP);
        // While turning, the shadow heading trails too; widen the mask to
        // the oriented bounding box of the body swept through that error.
        let dth = (r.last_wire_omega.abs() * MASK_LEAD).min(0.6);
        let (sin_d, cos_d) = dth.sin_cos();
        let (hl, hw) = (0.5 * r.footprint.length, 0.5 * r.footprint.width);
        let mask = oriented_rect(
            pose.x + 0.5 * lead * pose.theta.cos(),
            pose.y + 0.5 * lead * pose.theta.sin(),
            pose.theta,
            2.0 * (hl * cos_d + hw * sin_d) + 2.0 * pad + lead,
            2.0 * (hw * cos_d + hl * sin_d) + 2.0 * pad,
        );
        let masked = MaskedView { inner: view, mask: mask.clone() };
        let horizon = r.last_wire_v * r.last_wire_v / (2.0 * r.profile.decel)
            + r.profile.lookahead
            + BLOCK_EXTRA;
        let (clear, blocked) = corridor_clear(
            &masked,
            &tr.route.polyline,
            &tr.route.cumulative_arclength,
            tr.progress_arclength,
            horizon,
            r.profile.corridor_half_width,
            r.profile.unknown_blocks,
        );
        let stop = blocked.map(|s| {
            (s - r.profile.stop_margin - BLOCK_PAD - r.profile.front_overhang)
                .max(tr.progress_arclength)
        });
        if std::env::var_os("AMRSIM_TRACE").is_some() {
            if let Some(s_hit) = blocked {
                use amrsim_core::perception::{Cell, OccupancyQuery as _};
                let pt = tr.route.point_at(s_hit);
                let mut cells = Vec::new();
                let mut gx = pt.x - 0.8;
                while gx <= pt.x + 0.8 {
                    let mut gy = pt.y - 0.8;
                    while gy <= pt.y + 0.8 {
                        if masked.cell_at_point(P2::new(gx, gy)) == Cell::Occupied {
                            cells.push(((gx * 100.0).round() / 100.0, (gy * 100.0).round() / 100.0));
                        }
                        gy += 0.05;
                    }
                    gx += 0.05;
                }
                eprintln!(
                    "TRACE r{} t={:.1} prog={:.2} s_hit={:.2} hitpt=({:.2},{:.2}) shadow=({:.3},{:.3},{:.3}) v_wire={:.2} cells={:?}",
                    r.id, now, tr.progress_arclength, s_hit, pt.x, pt.y,
                    pose.x, pose.y, pose.theta, r.last_wire_v,
                    &cells[..cells.len().min(12)]
                );
            }
        }
        (clear, stop)
    }

    fn apply_action(&mut self, i: usize, now: f64, action: &Action) {
        match action {
            Action::RequestRoute(arg) => {
                let goal = {
                    let r = &self.robots[i];
                    match arg.as_str() {
                        "@pickup" => r.task.as_ref().map(|t| t.task.pickup_node),
                        "@dropoff" => r.task.as_ref().map(|t| t.task.dropoff_node),
                        "@depot" => r.depot_node,
                        name => self.net.stations.get(name).copied(),
                    }
                };
                let Some(goal) = goal else { return };
                let pose = self.robots[i].shadow.pose;
                match route_from_pose(&self.net, &pose, goal) {
                    Ok(route) => {
                        let crossings = zone_crossings(&route, &self.net.intersections);
                        let r = &mut self.robots[i];
                        r.tracker = Some(TrackerState::new(route));
                        r.crossings = crossings;
                        r.goal_node = Some(goal);
                        r.halted = false;
                        r.route_generation += 1;
                        r.last_stop_s = f64::NAN;
                    }
                    Err(_) => {
                        // Unroutable request: halt in place and surface the
                        // robot as idle so the operator notices.
                        let r = &mut self.robots[i];
                        r.tracker = None;
                        r.goal_node = None;
                    }
                }
            }
            Action::SetStopAt(target) => {
                let stop = {
                    let r = &self.robots[i];
                    match (target, &r.tracker) {
                        (StopTarget::Arclength(s), Some(_)) => Some(*s),
                        (StopTarget::Station(name), Some(tr)) => {
                            self.net.stations.get(name).and_then(|node| {
                                tr.route
                                    .node_ids
                                    .iter()
                                    .position(|n| n == node)
                                    .map(|idx| route_cum_at_node(&tr.route, idx))
                            })
                        }
                        _ => None,
                    }
                };
                if let (Some(s), Some(tr)) = (stop, self.robots[i].tracker.as_mut()) {
                    tr.set_stop_target(Some(s));
                }
            }
            Action::Resume => {
                let r = &mut self.robots[i];
                if let Some(tr) = &mut r.tracker {
                    tr.set_stop_target(None);
                }
                r.halted = false;
            }
            Action::Halt => {
                self.robots[i].halted = true;
                self.push_message(i, now, MessageBody::StopCommand);
            }
            Action::MarkTaskDone => {
                let r = &mut self.robots[i];
                if let Some(active) = r.task.take() {
                    let pickup_tardiness = active
                        .pickup_arrival
                        .map(|t| (t - active.task.window_a.1).max(0.0))
                        .unwrap_or(0.0);
                    let delivery_tardiness = active
                        .dropoff_arrival
                        .or(Some(now))
                        .map(|t| (t - active.task.window_b.1).max(0.0))
                        .unwrap_or(0.0);
                    let id = r.id;
                    let task_id = active.task.id;
                    self.events.push(CloudEvent::TaskCompleted {
                        task: task_id,
                        robot: id,
                        pickup_tardiness,
                        delivery_tardiness,
                    });
                }
            }
        }
    }

    /// Keep the idle queue in sync with dispatchability: a robot enters
    /// when it can take a task and leaves when it no longer can. Queue
    /// position encodes idle seniority.
    fn update_idle_membership(&mut self, i: usize) {
        let r = &self.robots[i];
        let eligible =
            r.task.is_none() && !r.manual && self.dispatch_states.contains(&r.fsm_state);
        let present = self.idle_queue.contains(&r.id);
        if eligible && !present {
            self.idle_queue.push_back(r.id);
        } else if !eligible && present {
            let id = r.id;
            self.idle_queue.retain(|&x| x != id);
        }
    }

    fn push_message(&mut self, i: usize, now: f64, body: MessageBody) {
        let r = &mut self.robots[i];
        let header = Header { robot_id: r.id, seq: r.seq, timestamp_us: (now * 1e6).round() as u64 };
        r.seq += 1;
        self.outbox.push((r.id, header, body));
    }
}

fn mentions_task_assigned(g: &GuardExpr) -> bool {
    match g {
        GuardExpr::Pred(Predicate::TaskAssigned) => true,
        GuardExpr::Pred(_) | GuardExpr::TimerElapsed(_) => false,
        GuardExpr::Not(e) => mentions_task_assigned(e),
        GuardExpr::And(a, b) | GuardExpr::Or(a, b) => {
            mentions_task_assigned(a) || mentions_task_assigned(b)
        }
    }
}

fn approach_horizon(v: f64, profile: &MotionProfile) -> f64 {
    v * v / (2.0 * profile.decel) + profile.lookahead + APPROACH_EXTRA
}

/// Arclength of the idx-th node of a route built from nodes. For routes
/// with a mid-edge entry prefix the node list is shorter than the
/// polyline; index from the tail.
fn route_cum_at_node(route: &RoutePlan, idx: usize) -> f64 {
    let offset = route.polyline.len() - route.node_ids.len();
    route.cumulative_arclength[offset + idx]
}

/// Whether the straight track from `a` to `b` cuts through the polygon.
fn path_crosses_zone(a: &Pose2, b: &Pose2, poly: &[P2]) -> bool {
    clip_segment_to_convex(P2::new(a.x, a.y), P2::new(b.x, b.y), poly).is_some()
}

/// Route from an arbitrary pose: project onto the nearest lane, ride that
/// lane to its end node, then follow the network.
pub fn route_from_pose(net: &RoadNetwork, pose: &Pose2, goal: u32) -> Result<RoutePlan, PlanningError> {
    let entry = nearest_entry(net, pose)?;
    let lane_len = net
        .arcs()
        .filter(|&(f, t, _)| f == entry.from && t == entry.to)
        .map(|(_, _, l)| l)
        .min_by(f64::total_cmp)
        .expect("entry lane exists");
    let remainder = lane_len - entry.arclength_on_edge;
    let tail = astar(net, entry.to, goal)?;
    if remainder <= 1e-9 {
        return Ok(tail);
    }
    let mut polyline = Vec::with_capacity(tail.polyline.len() + 1);
    polyline.push(entry.point);
    polyline.extend_from_slice(&tail.polyline);
    let mut cumulative = Vec::with_capacity(tail.cumulative_arclength.len() + 1);
    cumulative.push(0.0);
    for c in &tail.cumulative_arclength {
        cumulative.push(remainder + c);
    }
    let total_length = *cumulative.last().expect("non-empty");
    Ok(RoutePlan { node_ids: tail.node_ids, polyline, total_length, cumulative_arclength: cumulative })
}

/// Zone crossing intervals (zone index, enter s, exit s) along a route,
/// sorted by entry arclength.
pub fn zone_crossings(route: &RoutePlan, zones: &[IntersectionZone]) -> Vec<(usize, f64, f64)> {
    let mut out: Vec<(usize, f64, f64)> = Vec::new();
    for (zi, zone) in zones.iter().enumerate() {
        let mut intervals: Vec<(f64, f64)> = Vec::new();
        for w in 0..route.polyline.len().saturating_sub(1) {
            let (sa, sb) = (route.cumulative_arclength[w], route.cumulative_arclength[w + 1]);
            if sb - sa < 1e-12 {
                continue;
            }
            if let Some((t0, t1)) =
                clip_segment_to_convex(route.polyline[w], route.polyline[w + 1], &zone.polygon)
            {
                intervals.push((sa + t0 * (sb - sa), sa + t1 * (sb - sa)));
            }
        }
        intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
        // Merge contiguous pieces (a crossing usually spans several
        // polyline segments).
        for (s0, s1) in intervals {
            match out.last_mut() {
                Some((z, _, e)) if *z == zi && s0 <= *e + 1e-9 => *e = e.max(s1),
                _ => out.push((zi, s0, s1)),
            }
        }
    }
    out.sort_by(|a, b| a.1.total_cmp(&b.1));
    out
}

/// Waypoints of the route slice [from_s, stop_s], quantized for the wire.
/// Intermediate vertices keep the path shape; the final point carries a
/// zero target speed. Long slices are cut at the datagram's waypoint cap
/// and extended by a later resend.
pub fn plan_points(route: &RoutePlan, from_s: f64, stop_s: f64, v_max: f64) -> Vec<WirePoint> {
    let from_s = from_s.clamp(0.0, route.total_length);
    let stop_s = stop_s.clamp(from_s, route.total_length);
    let v_mms = (v_max * 1000.0).round() as i16;
    let mut pts: Vec<WirePoint> = Vec::new();
    let push = |p: P2, v: i16, pts: &mut Vec<WirePoint>| {
        let wp = WirePoint {
            x_mm: (p.x * 1000.0).round() as i32,
            y_mm: (p.y * 1000.0).round() as i32,
            v_mms: v,
        };
        if pts.last() != Some(&wp) {
            pts.push(wp);
        }
    };
    push(route.point_at(from_s), v_mms, &mut pts);
    for (i, &c) in route.cumulative_arclength.iter().enumerate() {
        if c > from_s + 1e-9 && c < stop_s - 1e-9 {
            if pts.len() >= MAX_WAYPOINTS - 1 {
                break;
            }
            push(route.polyline[i], v_mms, &mut pts);
        }
    }
    push(route.point_at(stop_s), 0, &mut pts);
    if pts.len() == 1 {
        // Degenerate slice: a single point still forms a valid hold-here
        // plan for the wire format.
        pts[0].v_mms = 0;
    }
    pts
}

#[cfg(test)]
mod tests {
    use super::*;
    use amrsim_core::world::Edge;

    fn grid_net() -> RoadNetwork {
        // 0 -> 1 -> 2 in a line, one-way, 5 m apart.
        let mut net = RoadNetwork::default();
        for (id, x) in [(0u32, 0.0f64), (1, 5.0), (2, 10.0)] {
            net.nodes.insert(id, P2::new(x, 0.0));
        }
        net.edges.push(Edge { from: 0, to: 1, length: 5.0, bidirectional: false });
        net.edges.push(Edge { from: 1, to: 2, length: 5.0, bidirectional: false });
        net.stations.insert("a".into(), 0);
        net.stations.insert("b".into(), 2);
        net
    }

    #[test]
    fn mid_lane_entry_rides_the_lane_out() {
        let net = grid_net();
        let route = route_from_pose(&net, &Pose2::new(2.0, 0.4, 0.0), 2).unwrap();
        assert_eq!(route.polyline[0], P2::new(2.0, 0.0), "entry is the lane projection");
        assert!((route.total_length - 8.0).abs() < 1e-9, "3 m to node 1 plus 5 m to node 2");
        assert_eq!(route.node_ids, vec![1, 2]);
    }

    #[test]
    fn plan_points_quantize_and_terminate_with_zero_speed() {
        let net = grid_net();
        let route = astar(&net, 0, 2).unwrap();
        let pts = plan_points(&route, 1.0, 8.5, 1.5);
        assert_eq!(pts.first().unwrap().x_mm, 1000);
        assert_eq!(pts.last().unwrap().x_mm, 8500);
        assert_eq!(pts.last().unwrap().v_mms, 0);
        assert!(pts.iter().take(pts.len() - 1).all(|p| p.v_mms == 1500));
        // The mid vertex at node 1 is kept.
        assert!(pts.iter().any(|p| p.x_mm == 5000));
    }

    #[test]
    fn crossings_find_the_zone_interval() {
        let net = grid_net();
        let route = astar(&net, 0, 2).unwrap();
        let zone = IntersectionZone {
            polygon: vec![
                P2::new(6.0, -1.0),
                P2::new(8.0, -1.0),
                P2::new(8.0, 1.0),
                P2::new(6.0, 1.0),
            ],
            priority: vec![],
        };
        let c = zone_crossings(&route, &[zone]);
        assert_eq!(c.len(), 1);
        let (zi, s0, s1) = c[0];
        assert_eq!(zi, 0);
        assert!((s0 - 6.0).abs() < 1e-9 && (s1 - 8.0).abs() < 1e-9);
    }
}

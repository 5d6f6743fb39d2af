//! Fleet management: transport task intake, the deployed FIFO dispatch
//! discipline, and an exact small-instance scheduler for the routing/
//! scheduling problem with time windows (travel plus weighted tardiness).
//!
//! Timeline model shared by every evaluator here: a robot travels to the
//! pickup, waits if it arrives before the window opens, is late if it
//! arrives after the window closes (linear tardiness), serves, then repeats
//! at the delivery. Waiting is free; only travel and tardiness are scored.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::planning::{astar, station_node, PlanningError};
use crate::world::RoadNetwork;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FleetError {
    #[error("no idle robot available")]
    NoIdleRobot,
    #[error("no assignment satisfies all hard time windows")]
    Infeasible,
    #[error("schedule references unknown task {0}")]
    UnknownTask(u32),
    #[error("unknown station index {0}")]
    UnknownStation(u16),
    #[error("station {from} cannot reach station {to}")]
    Unreachable { from: u16, to: u16 },
    #[error("instance: {0}")]
    BadInstance(String),
}

/// One transport order: move goods from station A to station B within the
/// given arrival windows, spending `service_time` at each stop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransportTask {
    pub id: u32,
    pub a_station: u16,
    pub b_station: u16,
    pub window_a: (f64, f64),
    pub window_b: (f64, f64),
    pub service_time: f64,
}

impl TransportTask {
    pub fn validate(&self) -> Result<(), FleetError> {
        if self.a_station == self.b_station {
            return Err(FleetError::BadInstance(format!("task {} has A == B", self.id)));
        }
        if self.window_a.0 > self.window_a.1 || self.window_b.0 > self.window_b.1 {
            return Err(FleetError::BadInstance(format!("task {} has an inverted window", self.id)));
        }
        if self.service_time < 0.0 {
            return Err(FleetError::BadInstance(format!("task {} has negative service time", self.id)));
        }
        Ok(())
    }
}

/// Solver view of a robot: where and when it becomes available.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotSpec {
    pub id: u16,
    pub start_station: u16,
    pub available_from: f64,
}

/// Station-to-station travel seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct TravelTimeMatrix {
    pub n: usize,
    seconds: Vec<f64>,
}

impl TravelTimeMatrix {
    pub fn new(n: usize, seconds: Vec<f64>) -> Result<Self, FleetError> {
        if seconds.len() != n * n {
            return Err(FleetError::BadInstance(format!("matrix needs {} entries", n * n)));
        }
        for i in 0..n {
            if seconds[i * n + i] != 0.0 {
                return Err(FleetError::BadInstance("matrix diagonal must be zero".into()));
            }
        }
        if seconds.iter().any(|&s| s < 0.0 || !s.is_finite()) {
            return Err(FleetError::BadInstance("matrix entries must be finite and non-negative".into()));
        }
        Ok(Self { n, seconds })
    }

    /// Derive travel times from shortest routes at cruise speed.
    pub fn from_network(net: &RoadNetwork, v_max: f64) -> Result<Self, FleetError> {
        let n = net.stations.len();
        let mut seconds = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let from = station_node(net, i as u16).map_err(|_| FleetError::UnknownStation(i as u16))?;
                let to = station_node(net, j as u16).map_err(|_| FleetError::UnknownStation(j as u16))?;
                match astar(net, from, to) {
                    Ok(plan) => seconds[i * n + j] = plan.total_length / v_max,
                    Err(PlanningError::NoRoute { .. }) => {
                        return Err(FleetError::Unreachable { from: i as u16, to: j as u16 })
                    }
                    Err(e) => return Err(FleetError::BadInstance(e.to_string())),
                }
            }
        }
        Self::new(n, seconds)
    }

    pub fn get(&self, from: u16, to: u16) -> f64 {
        self.seconds[from as usize * self.n + to as usize]
    }

    pub fn check_station(&self, s: u16) -> Result<(), FleetError> {
        if (s as usize) < self.n {
            Ok(())
        } else {
            Err(FleetError::UnknownStation(s))
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { n: self.n, seconds: self.seconds.iter().map(|s| s * factor).collect() }
    }
}

/// FIFO dispatch as deployed: the robot idle longest takes the next task.
/// Buffering tasks while no robot is idle is the caller's loop.
pub fn queue_dispatch(idle_queue: &mut VecDeque<u16>) -> Result<u16, FleetError> {
    idle_queue.pop_front().ok_or(FleetError::NoIdleRobot)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannedStop {
    pub task_id: u32,
    /// Raw arrival times (before any in-window waiting) at A and B.
    pub arrival_a: f64,
    pub arrival_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotSchedule {
    pub robot_id: u16,
    pub stops: Vec<PlannedStop>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub routes: Vec<RobotSchedule>,
    /// Total travel time plus lambda-weighted tardiness.
    pub objective: f64,
}

/// Outcome of serving one task from a given (station, time) state.
struct LegOutcome {
    arrival_a: f64,
    arrival_b: f64,
    travel: f64,
    tardiness: f64,
    done_time: f64,
}

fn serve_task(pos: u16, time: f64, task: &TransportTask, ttm: &TravelTimeMatrix) -> LegOutcome {
    let t1 = ttm.get(pos, task.a_station);
    let arrival_a = time + t1;
    let service_start_a = arrival_a.max(task.window_a.0);
    let tard_a = (arrival_a - task.window_a.1).max(0.0);
    let depart_a = service_start_a + task.service_time;

    let t2 = ttm.get(task.a_station, task.b_station);
    let arrival_b = depart_a + t2;
    let service_start_b = arrival_b.max(task.window_b.0);
    let tard_b = (arrival_b - task.window_b.1).max(0.0);
    let done_time = service_start_b + task.service_time;

    LegOutcome { arrival_a, arrival_b, travel: t1 + t2, tardiness: tard_a + tard_b, done_time }
}

/// Globally optimal assignment and per-robot ordering by branch-and-bound.
///
/// Enumeration is canonical (robot 0's full ordered sequence, then robot 1's
/// from the remaining tasks, and so on), so every schedule structure is
/// visited exactly once; partial cost only grows, which makes pruning
/// against the incumbent exact. With hard windows, any late arrival cuts the
/// branch and exhausting the tree yields Infeasible.
pub fn exact_vrptw(
    tasks: &[TransportTask],
    robots: &[RobotSpec],
    ttm: &TravelTimeMatrix,
    lambda_tardiness: f64,
    hard_windows: bool,
) -> Result<Schedule, FleetError> {
    if tasks.len() > 8 || robots.len() > 3 {
        return Err(FleetError::BadInstance(
            "exactness bound: at most 8 tasks and 3 robots".into(),
        ));
    }
    if robots.is_empty() && !tasks.is_empty() {
        return Err(FleetError::BadInstance("tasks but no robots".into()));
    }
    for t in tasks {
        t.validate()?;
        ttm.check_station(t.a_station)?;
        ttm.check_station(t.b_station)?;
    }
    for r in robots {
        ttm.check_station(r.start_station)?;
    }

    struct Search<'a> {
        tasks: &'a [TransportTask],
        robots: &'a [RobotSpec],
        ttm: &'a TravelTimeMatrix,
        lambda: f64,
        hard: bool,
        best_cost: f64,
        best: Option<Vec<Vec<usize>>>,
        seqs: Vec<Vec<usize>>,
    }

    impl Search<'_> {
        fn run(&mut self, robot: usize, pos: u16, time: f64, remaining: u32, cost: f64) {
            if cost >= self.best_cost {
                return;
            }
            if robot == self.robots.len() {
                if remaining == 0 {
                    self.best_cost = cost;
                    self.best = Some(self.seqs.clone());
                }
                return;
            }
            // Close this robot's sequence and move on.
            let next = self.robots.get(robot + 1);
            let (npos, ntime) = next.map_or((0, 0.0), |r| (r.start_station, r.available_from));
            self.run(robot + 1, npos, ntime, remaining, cost);
            // Or extend it with any remaining task.
            for i in 0..self.tasks.len() {
                if remaining & (1 << i) == 0 {
                    continue;
                }
                let leg = serve_task(pos, time, &self.tasks[i], self.ttm);
                if self.hard && leg.tardiness > 0.0 {
                    continue;
                }
                let ncost = cost + leg.travel + self.lambda * leg.tardiness;
                self.seqs[robot].push(i);
                self.run(robot, self.tasks[i].b_station, leg.done_time, remaining & !(1 << i), ncost);
                self.seqs[robot].pop();
            }
        }
    }

    let mut search = Search {
        tasks,
        robots,
        ttm,
        lambda: lambda_tardiness,
        hard: hard_windows,
        best_cost: f64::INFINITY,
        best: None,
        seqs: vec![Vec::new(); robots.len()],
    };
    if robots.is_empty() {
        return Ok(Schedule { routes: Vec::new(), objective: 0.0 });
    }
    search.run(0, robots[0].start_station, robots[0].available_from, full_mask(tasks.len()), 0.0);

    let Some(best) = search.best else { return Err(FleetError::Infeasible) };
    Ok(build_schedule(&best, tasks, robots, ttm, lambda_tardiness))
}

fn full_mask(n: usize) -> u32 {
    if n == 0 {
        0
    } else {
        (1u32 << n) - 1
    }
}

fn build_schedule(
    seqs: &[Vec<usize>],
    tasks: &[TransportTask],
    robots: &[RobotSpec],
    ttm: &TravelTimeMatrix,
    lambda: f64,
) -> Schedule {
    let mut routes = Vec::new();
    let mut objective = 0.0;
    for (r, seq) in seqs.iter().enumerate() {
        let spec = robots[r];
        let mut pos = spec.start_station;
        let mut time = spec.available_from;
        let mut stops = Vec::new();
        for &i in seq {
            let leg = serve_task(pos, time, &tasks[i], ttm);
            stops.push(PlannedStop {
                task_id: tasks[i].id,
                arrival_a: leg.arrival_a,
                arrival_b: leg.arrival_b,
            });
            objective += leg.travel + lambda * leg.tardiness;
            pos = tasks[i].b_station;
            time = leg.done_time;
        }
        routes.push(RobotSchedule { robot_id: spec.id, stops });
    }
    Schedule { routes, objective }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopKind {
    Pickup,
    Delivery,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopReport {
    pub robot_id: u16,
    pub task_id: u32,
    pub kind: StopKind,
    pub station: u16,
    pub arrival: f64,
    pub waiting: f64,
    pub tardiness: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    pub stops: Vec<StopReport>,
    pub total_travel: f64,
    pub total_tardiness: f64,
    /// Travel + lambda-weighted tardiness recomputed from scratch.
    pub objective: f64,
}

/// Recompute a schedule's timeline forward and report every stop with its
/// waiting and window violation. A solver schedule must re-verify to the
/// same objective.
pub fn schedule_feasibility(
    schedule: &Schedule,
    tasks: &[TransportTask],
    robots: &[RobotSpec],
    ttm: &TravelTimeMatrix,
    lambda_tardiness: f64,
) -> Result<FeasibilityReport, FleetError> {
    let mut stops = Vec::new();
    let mut total_travel = 0.0;
    let mut total_tardiness = 0.0;
    for route in &schedule.routes {
        let spec = robots
            .iter()
            .find(|r| r.id == route.robot_id)
            .ok_or(FleetError::BadInstance(format!("schedule for unknown robot {}", route.robot_id)))?;
        ttm.check_station(spec.start_station)?;
        let mut pos = spec.start_station;
        let mut time = spec.available_from;
        for stop in &route.stops {
            let task = tasks
                .iter()
                .find(|t| t.id == stop.task_id)
                .ok_or(FleetError::UnknownTask(stop.task_id))?;
            ttm.check_station(task.a_station)?;
            ttm.check_station(task.b_station)?;
            let leg = serve_task(pos, time, task, ttm);
            stops.push(StopReport {
                robot_id: route.robot_id,
                task_id: task.id,
                kind: StopKind::Pickup,
                station: task.a_station,
                arrival: leg.arrival_a,
                waiting: (task.window_a.0 - leg.arrival_a).max(0.0),
                tardiness: (leg.arrival_a - task.window_a.1).max(0.0),
            });
            stops.push(StopReport {
                robot_id: route.robot_id,
                task_id: task.id,
                kind: StopKind::Delivery,
                station: task.b_station,
                arrival: leg.arrival_b,
                waiting: (task.window_b.0 - leg.arrival_b).max(0.0),
                tardiness: (leg.arrival_b - task.window_b.1).max(0.0),
            });
            total_travel += leg.travel;
            total_tardiness += leg.tardiness;
            pos = task.b_station;
            time = leg.done_time;
        }
    }
    Ok(FeasibilityReport {
        stops,
        total_travel,
        total_tardiness,
        objective: total_travel + lambda_tardiness * total_tardiness,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueueOutcome {
    pub objective: f64,
    /// (task_id, robot_id) in dispatch order.
    pub assignments: Vec<(u32, u16)>,
}

/// Simulate FIFO dispatch under the solver's timeline model so the two
/// disciplines are comparable: tasks go, in arrival order, to the robot
/// idle longest; a robot re-enters the queue when its delivery completes.
pub fn queue_objective(
    tasks: &[TransportTask],
    robots: &[RobotSpec],
    ttm: &TravelTimeMatrix,
    lambda_tardiness: f64,
) -> Result<QueueOutcome, FleetError> {
    if robots.is_empty() {
        return Err(FleetError::NoIdleRobot);
    }
    struct R {
        id: u16,
        pos: u16,
        free_at: f64,
    }
    let mut state: Vec<R> =
        robots.iter().map(|r| R { id: r.id, pos: r.start_station, free_at: r.available_from }).collect();
    let mut idle: VecDeque<usize> = (0..state.len()).collect();
    // Busy robots keyed by completion time; ties release in robot order.
    let mut busy: Vec<usize> = Vec::new();
    let mut objective = 0.0;
    let mut assignments = Vec::new();
    for task in tasks {
        task.validate()?;
        ttm.check_station(task.a_station)?;
        ttm.check_station(task.b_station)?;
        if idle.is_empty() {
            busy.sort_by(|&a, &b| {
                state[a].free_at.total_cmp(&state[b].free_at).then(state[a].id.cmp(&state[b].id))
            });
            let next = busy.remove(0);
            idle.push_back(next);
        }
        let ri = idle.pop_front().ok_or(FleetError::NoIdleRobot)?;
        let r = &state[ri];
        let leg = serve_task(r.pos, r.free_at, task, ttm);
        objective += leg.travel + lambda_tardiness * leg.tardiness;
        assignments.push((task.id, r.id));
        state[ri].pos = task.b_station;
        state[ri].free_at = leg.done_time;
        busy.push(ri);
    }
    Ok(QueueOutcome { objective, assignments })
}

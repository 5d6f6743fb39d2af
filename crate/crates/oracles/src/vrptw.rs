//! Exhaustive reference for the task-scheduling objective: try every
//! robot-to-task assignment and every per-robot ordering, score each route
//! with an explicit forward clock, and keep the minimum. Exponential on
//! purpose; callers keep instances to a handful of tasks.

/// Task in oracle form: pickup station, delivery station, the two arrival
/// windows, and per-stop service seconds.
#[derive(Debug, Clone, Copy)]
pub struct Task {
    pub a: usize,
    pub b: usize,
    pub window_a: (f64, f64),
    pub window_b: (f64, f64),
    pub service: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct Robot {
    pub start: usize,
    pub available_from: f64,
}

fn route_cost(
    robot: Robot,
    order: &[usize],
    tasks: &[Task],
    travel: &dyn Fn(usize, usize) -> f64,
    lambda: f64,
    hard: bool,
) -> Option<f64> {
    let mut at = robot.start;
    let mut clock = robot.available_from;
    let mut cost = 0.0;
    for &ti in order {
        let t = tasks[ti];
        for (station, window) in [(t.a, t.window_a), (t.b, t.window_b)] {
            let hop = travel(at, station);
            clock += hop;
            cost += hop;
            if clock > window.1 {
                if hard {
                    return None;
                }
                cost += lambda * (clock - window.1);
            }
            if clock < window.0 {
                clock = window.0;
            }
            clock += t.service;
            at = station;
        }
    }
    Some(cost)
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.is_empty() {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for (i, &head) in items.iter().enumerate() {
        let mut rest = items.to_vec();
        rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

/// Minimum achievable objective, or None if hard windows rule out every
/// schedule. Robots are independent once tasks are assigned, so each
/// robot's subset is ordered optimally in isolation.
pub fn enumerate_optimum(
    tasks: &[Task],
    robots: &[Robot],
    travel: &dyn Fn(usize, usize) -> f64,
    lambda: f64,
    hard: bool,
) -> Option<f64> {
    assert!(tasks.len() <= 5 && robots.len() <= 3, "oracle bound exceeded");
    if tasks.is_empty() {
        return Some(0.0);
    }
    if robots.is_empty() {
        return None;
    }
    let m = robots.len();
    let mut best: Option<f64> = None;
    // Assignment counter in base m: digit i names the robot serving task i.
    let total = m.pow(tasks.len() as u32);
    for code in 0..total {
        let mut digits = code;
        let mut subsets: Vec<Vec<usize>> = vec![Vec::new(); m];
        for ti in 0..tasks.len() {
            subsets[digits % m].push(ti);
            digits /= m;
        }
        let mut assignment_cost = 0.0;
        let mut feasible = true;
        for (r, subset) in subsets.iter().enumerate() {
            let mut robot_best: Option<f64> = None;
            for order in permutations(subset) {
                if let Some(c) = route_cost(robots[r], &order, tasks, travel, lambda, hard) {
                    robot_best = Some(robot_best.map_or(c, |b: f64| b.min(c)));
                }
            }
            match robot_best {
                Some(c) => assignment_cost += c,
                None => {
                    feasible = false;
                    break;
                }
            }
        }
        if feasible {
            best = Some(best.map_or(assignment_cost, |b: f64| b.min(assignment_cost)));
        }
    }
    best
}

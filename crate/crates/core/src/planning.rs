//! Static route planning over the road network. Robots never leave their
//! assigned route, so planning is a pure graph problem: A* over directed
//! lanes with a Euclidean heuristic (admissible because lane lengths are at
//! least the straight-line node distance).

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use thiserror::Error;

use crate::fleet::TransportTask;
use crate::geom2d::{project_on_segment, P2};
use crate::world::RoadNetwork;
use crate::Pose2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanningError {
    #[error("no route from node {from} to node {to}")]
    NoRoute { from: u32, to: u32 },
    #[error("unknown node {0}")]
    UnknownNode(u32),
    #[error("unknown station index {0}")]
    UnknownStation(u16),
    #[error("network has no edges")]
    EmptyNetwork,
}

/// A concrete route: visited nodes, their positions, and the arclength
/// parameterization used by tracking and corridor sweeps. The cumulative
/// arclength follows lane lengths, which may exceed straight-line segment
/// lengths; within a segment the parameterization is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutePlan {
    pub node_ids: Vec<u32>,
    pub polyline: Vec<P2>,
    pub total_length: f64,
    pub cumulative_arclength: Vec<f64>,
}

impl RoutePlan {
    pub fn from_nodes(net: &RoadNetwork, node_ids: Vec<u32>) -> Result<Self, PlanningError> {
        let mut polyline = Vec::with_capacity(node_ids.len());
        for &id in &node_ids {
            polyline.push(net.node(id).ok_or(PlanningError::UnknownNode(id))?);
        }
        let mut cumulative = vec![0.0];
        for w in node_ids.windows(2) {
            let len = arc_length(net, w[0], w[1])
                .ok_or(PlanningError::NoRoute { from: w[0], to: w[1] })?;
            cumulative.push(cumulative.last().unwrap() + len);
        }
        let total_length = *cumulative.last().unwrap();
        Ok(Self { node_ids, polyline, total_length, cumulative_arclength: cumulative })
    }

    pub fn end_point(&self) -> P2 {
        *self.polyline.last().expect("route has at least one node")
    }

    /// Point at a given arclength, clamped to the route.
    pub fn point_at(&self, s: f64) -> P2 {
        let cum = &self.cumulative_arclength;
        if self.polyline.len() == 1 || s <= 0.0 {
            return self.polyline[0];
        }
        if s >= self.total_length {
            return self.end_point();
        }
        let i = cum.partition_point(|&c| c <= s).min(cum.len() - 1);
        let (sa, sb) = (cum[i - 1], cum[i]);
        let t = if sb > sa { (s - sa) / (sb - sa) } else { 0.0 };
        self.polyline[i - 1] + (self.polyline[i] - self.polyline[i - 1]) * t
    }
}

/// Cheapest directed lane between two adjacent nodes (parallel lanes allowed).
fn arc_length(net: &RoadNetwork, from: u32, to: u32) -> Option<f64> {
    net.arcs()
        .filter(|&(a, b, _)| a == from && b == to)
        .map(|(_, _, l)| l)
        .min_by(f64::total_cmp)
}

/// Strict-weak-order key for f64 priorities (all values finite here).
#[derive(Debug, Clone, Copy, PartialEq)]
struct Pri(f64);

impl Eq for Pri {}

impl PartialOrd for Pri {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pri {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Shortest route by total lane length, respecting lane directions.
/// Expansion order is deterministic: lowest f, then lowest g, then lowest
/// node id, so equal-cost ties always resolve the same way.
pub fn astar(net: &RoadNetwork, start: u32, goal: u32) -> Result<RoutePlan, PlanningError> {
    if !net.nodes.contains_key(&start) {
        return Err(PlanningError::UnknownNode(start));
    }
    let goal_pos = net.node(goal).ok_or(PlanningError::UnknownNode(goal))?;
    if start == goal {
        return RoutePlan::from_nodes(net, vec![start]);
    }

    let mut adjacency: BTreeMap<u32, Vec<(u32, f64)>> = BTreeMap::new();
    for (a, b, len) in net.arcs() {
        adjacency.entry(a).or_default().push((b, len));
    }
    for nbrs in adjacency.values_mut() {
        nbrs.sort_by(|x, y| x.0.cmp(&y.0).then(x.1.total_cmp(&y.1)));
    }

    let h = |n: u32| (net.node(n).unwrap() - goal_pos).norm();
    let mut g: BTreeMap<u32, f64> = BTreeMap::new();
    let mut parent: BTreeMap<u32, u32> = BTreeMap::new();
    let mut heap = BinaryHeap::new();
    g.insert(start, 0.0);
    heap.push(Reverse((Pri(h(start)), Pri(0.0), start)));

    while let Some(Reverse((_, Pri(gn), node))) = heap.pop() {
        if gn > g[&node] {
            continue;
        }
        if node == goal {
            let mut ids = vec![goal];
            let mut cur = goal;
            while let Some(&p) = parent.get(&cur) {
                ids.push(p);
                cur = p;
            }
            ids.reverse();
            return RoutePlan::from_nodes(net, ids);
        }
        if let Some(nbrs) = adjacency.get(&node) {
            for &(next, len) in nbrs {
                let cand = gn + len;
                if g.get(&next).is_none_or(|&cur| cand < cur) {
                    g.insert(next, cand);
                    parent.insert(next, node);
                    heap.push(Reverse((Pri(cand + h(next)), Pri(cand), next)));
                }
            }
        }
    }
    Err(PlanningError::NoRoute { from: start, to: goal })
}

/// Closest directed lane to a pose: where a robot rejoins the network after
/// manual driving.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntryPoint {
    pub from: u32,
    pub to: u32,
    pub point: P2,
    /// Distance along the lane (in lane-length parameterization).
    pub arclength_on_edge: f64,
}

pub fn nearest_entry(net: &RoadNetwork, pose: &Pose2) -> Result<EntryPoint, PlanningError> {
    let p = P2::new(pose.x, pose.y);
    let mut best: Option<(f64, EntryPoint)> = None;
    for (from, to, len) in net.arcs() {
        let (a, b) = (net.node(from).unwrap(), net.node(to).unwrap());
        let (t, point) = project_on_segment(p, a, b);
        let dist = (p - point).norm();
        let entry = EntryPoint { from, to, point, arclength_on_edge: t * len };
        let better = match &best {
            None => true,
            Some((bd, be)) => {
                dist < *bd || (dist == *bd && (from, to) < (be.from, be.to))
            }
        };
        if better {
            best = Some((dist, entry));
        }
    }
    best.map(|(_, e)| e).ok_or(PlanningError::EmptyNetwork)
}

/// Route a task: drive to the pickup station, then to the delivery station,
/// as one continuous plan.
pub fn route_for_task(
    net: &RoadNetwork,
    robot_node: u32,
    task: &TransportTask,
) -> Result<RoutePlan, PlanningError> {
    let a = station_node(net, task.a_station)?;
    let b = station_node(net, task.b_station)?;
    let leg1 = astar(net, robot_node, a)?;
    let leg2 = astar(net, a, b)?;
    let mut ids = leg1.node_ids;
    ids.extend_from_slice(&leg2.node_ids[1..]);
    RoutePlan::from_nodes(net, ids)
}

/// Resolve a station index (stations enumerated in name order) to its node.
pub fn station_node(net: &RoadNetwork, index: u16) -> Result<u32, PlanningError> {
    net.stations
        .values()
        .nth(index as usize)
        .copied()
        .ok_or(PlanningError::UnknownStation(index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::Edge;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn net(nodes: &[(u32, f64, f64)], edges: &[(u32, u32, f64, bool)]) -> RoadNetwork {
        let mut n = RoadNetwork::default();
        for &(id, x, y) in nodes {
            n.nodes.insert(id, P2::new(x, y));
        }
        for &(from, to, length, bidirectional) in edges {
            n.edges.push(Edge { from, to, length, bidirectional });
        }
        n.validate().unwrap();
        n
    }

    #[test]
    fn trivial_route_is_a_single_node() {
        let n = net(&[(1, 0.0, 0.0), (2, 1.0, 0.0)], &[(1, 2, 1.0, true)]);
        let plan = astar(&n, 1, 1).unwrap();
        assert_eq!(plan.node_ids, vec![1]);
        assert_eq!(plan.total_length, 0.0);
        assert_eq!(plan.cumulative_arclength, vec![0.0]);
    }

    #[test]
    fn detour_beats_expensive_direct_edge() {
        let n = net(
            &[(1, 0.0, 0.0), (2, 1.0, 0.0), (3, 2.0, 0.0)],
            &[(1, 2, 1.0, false), (2, 3, 1.0, false), (1, 3, 3.0, false)],
        );
        let plan = astar(&n, 1, 3).unwrap();
        assert_eq!(plan.node_ids, vec![1, 2, 3]);
        assert_relative_eq!(plan.total_length, 2.0);
        assert_eq!(plan.cumulative_arclength, vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn unreachable_goal_is_no_route() {
        let n = net(&[(1, 0.0, 0.0), (2, 1.0, 0.0), (3, 5.0, 0.0)], &[(1, 2, 1.0, true)]);
        assert_eq!(astar(&n, 1, 3).unwrap_err(), PlanningError::NoRoute { from: 1, to: 3 });
        assert_eq!(astar(&n, 1, 9).unwrap_err(), PlanningError::UnknownNode(9));
    }

    #[test]
    fn one_way_lanes_are_respected() {
        let n = net(
            &[(1, 0.0, 0.0), (2, 1.0, 0.0), (3, 0.5, 1.0)],
            &[(1, 2, 1.0, false), (2, 3, 1.2, false), (3, 1, 1.2, false)],
        );
        // Going back against the one-way lane requires the loop.
        let plan = astar(&n, 2, 1).unwrap();
        assert_eq!(plan.node_ids, vec![2, 3, 1]);
    }

    #[test]
    fn equal_cost_diamond_resolves_to_the_lower_id_branch() {
        let n = net(
            &[(1, 0.0, 0.0), (2, 1.0, 1.0), (3, 1.0, -1.0), (4, 2.0, 0.0)],
            &[(1, 2, 1.5, false), (1, 3, 1.5, false), (2, 4, 1.5, false), (3, 4, 1.5, false)],
        );
        let plan = astar(&n, 1, 4).unwrap();
        assert_eq!(plan.node_ids, vec![1, 2, 4]);
    }

    #[test]
    fn matches_dijkstra_on_seeded_random_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for case in 0..25 {
            let n_nodes = rng.gen_range(5..=50u32);
            let mut nodes = Vec::new();
            for id in 0..n_nodes {
                nodes.push((id, rng.gen_range(-30.0..30.0), rng.gen_range(-30.0..30.0)));
            }
            let mut edges = Vec::new();
            for _ in 0..rng.gen_range(n_nodes..=4 * n_nodes) {
                let a = rng.gen_range(0..n_nodes);
                let b = rng.gen_range(0..n_nodes);
                if a == b {
                    continue;
                }
                let pa = P2::new(nodes[a as usize].1, nodes[a as usize].2);
                let pb = P2::new(nodes[b as usize].1, nodes[b as usize].2);
                let len = (pb - pa).norm() * rng.gen_range(1.0..1.5) + 1e-9;
                edges.push((a, b, len, rng.gen_bool(0.5)));
            }
            let network = net(&nodes, &edges);
            let arcs: Vec<(u32, u32, f64)> = network.arcs().collect();
            for _ in 0..4 {
                let s = rng.gen_range(0..n_nodes);
                let t = rng.gen_range(0..n_nodes);
                let oracle = amrsim_oracles::dijkstra::shortest_path_cost(&arcs, s, t);
                match astar(&network, s, t) {
                    Ok(plan) => {
                        let oracle = oracle.unwrap_or_else(|| panic!("case {case}: oracle disagrees on reachability"));
                        assert!(
                            (plan.total_length - oracle).abs() < 1e-9,
                            "case {case}: astar {} vs dijkstra {oracle}",
                            plan.total_length
                        );
                    }
                    Err(PlanningError::NoRoute { .. }) => assert!(oracle.is_none(), "case {case}"),
                    Err(e) => panic!("case {case}: {e}"),
                }
            }
        }
    }

    #[test]
    fn cumulative_arclength_is_strictly_increasing() {
        let n = net(
            &[(1, 0.0, 0.0), (2, 4.0, 0.0), (3, 4.0, 3.0)],
            &[(1, 2, 4.0, true), (2, 3, 3.5, true)],
        );
        let plan = astar(&n, 1, 3).unwrap();
        for w in plan.cumulative_arclength.windows(2) {
            assert!(w[1] > w[0]);
        }
        assert_relative_eq!(plan.total_length, 7.5);
        assert_relative_eq!(*plan.cumulative_arclength.last().unwrap(), plan.total_length);
        // Lane length 3.5 exceeds the 3.0 straight line; the parameterization
        // follows lane length.
        let mid = plan.point_at(4.0 + 1.75);
        assert_relative_eq!(mid.x, 4.0);
        assert_relative_eq!(mid.y, 1.5);
    }

    #[test]
    fn entry_projects_onto_the_nearest_lane() {
        let n = net(
            &[(1, 0.0, 0.0), (2, 10.0, 0.0), (3, 0.0, 5.0), (4, 10.0, 5.0)],
            &[(1, 2, 10.0, false), (3, 4, 10.0, false)],
        );
        let e = nearest_entry(&n, &Pose2::new(5.0, 1.0, 0.0)).unwrap();
        assert_eq!((e.from, e.to), (1, 2));
        assert_relative_eq!(e.point.x, 5.0);
        assert_relative_eq!(e.point.y, 0.0);
        assert_relative_eq!(e.arclength_on_edge, 5.0);
        // Exactly on node 1: its outgoing lane at arclength 0.
        let e = nearest_entry(&n, &Pose2::new(0.0, 0.0, 0.0)).unwrap();
        assert_eq!((e.from, e.to), (1, 2));
        assert_relative_eq!(e.arclength_on_edge, 0.0);
        // Equidistant between the two lanes: lower (from, to) pair wins.
        let e = nearest_entry(&n, &Pose2::new(5.0, 2.5, 0.0)).unwrap();
        assert_eq!((e.from, e.to), (1, 2));
        assert!(nearest_entry(&RoadNetwork::default(), &Pose2::origin()).is_err());
    }

    #[test]
    fn task_route_concatenates_legs_without_duplicate_junction() {
        let mut n = net(
            &[(1, 0.0, 0.0), (2, 5.0, 0.0), (3, 10.0, 0.0)],
            &[(1, 2, 5.0, true), (2, 3, 5.0, true)],
        );
        n.stations.insert("delivery".into(), 3);
        n.stations.insert("pickup".into(), 2);
        // Station indices follow name order: delivery = 0, pickup = 1.
        let task = crate::fleet::TransportTask {
            id: 1,
            a_station: 1,
            b_station: 0,
            window_a: (0.0, f64::INFINITY),
            window_b: (0.0, f64::INFINITY),
            service_time: 0.0,
        };
        let plan = route_for_task(&n, 1, &task).unwrap();
        assert_eq!(plan.node_ids, vec![1, 2, 3]);
        // Robot already at the pickup: plan equals the single leg.
        let plan = route_for_task(&n, 2, &task).unwrap();
        assert_eq!(plan.node_ids, vec![2, 3]);
        let unknown = crate::fleet::TransportTask { a_station: 7, ..task };
        assert_eq!(route_for_task(&n, 1, &unknown).unwrap_err(), PlanningError::UnknownStation(7));
    }

    #[test]
    fn task_route_cost_matches_concatenated_dijkstra() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..10 {
            let mut nodes = Vec::new();
            for id in 0..6u32 {
                nodes.push((id, rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)));
            }
            let mut edges = Vec::new();
            for a in 0..6u32 {
                for b in 0..6u32 {
                    if a != b && rng.gen_bool(0.6) {
                        let pa = P2::new(nodes[a as usize].1, nodes[a as usize].2);
                        let pb = P2::new(nodes[b as usize].1, nodes[b as usize].2);
                        edges.push((a, b, (pb - pa).norm() + 0.01, false));
                    }
                }
            }
            let mut network = net(&nodes, &edges);
            network.stations.insert("a".into(), 2);
            network.stations.insert("b".into(), 4);
            let task = crate::fleet::TransportTask {
                id: 0,
                a_station: 0,
                b_station: 1,
                window_a: (0.0, f64::INFINITY),
                window_b: (0.0, f64::INFINITY),
                service_time: 0.0,
            };
            let arcs: Vec<(u32, u32, f64)> = network.arcs().collect();
            let leg1 = amrsim_oracles::dijkstra::shortest_path_cost(&arcs, 0, 2);
            let leg2 = amrsim_oracles::dijkstra::shortest_path_cost(&arcs, 2, 4);
            match route_for_task(&network, 0, &task) {
                Ok(plan) => {
                    let expect = leg1.unwrap() + leg2.unwrap();
                    assert!((plan.total_length - expect).abs() < 1e-9);
                }
                Err(PlanningError::NoRoute { .. }) => {
                    assert!(leg1.is_none() || leg2.is_none());
                }
                Err(e) => panic!("{e}"),
            }
        }
    }
}

//! Textbook Dijkstra over a directed arc list, with a linear scan instead of
//! a priority queue so it shares nothing with the routing implementation.

/// Cheapest cost from `from` to `to`, or None if unreachable. Node ids are
/// arbitrary u32 values; arcs are (from, to, cost) with cost >= 0.
pub fn shortest_path_cost(arcs: &[(u32, u32, f64)], from: u32, to: u32) -> Option<f64> {
    use std::collections::BTreeMap;
    let mut dist: BTreeMap<u32, f64> = BTreeMap::new();
    let mut done: BTreeMap<u32, bool> = BTreeMap::new();
    for &(a, b, _) in arcs {
        dist.entry(a).or_insert(f64::INFINITY);
        dist.entry(b).or_insert(f64::INFINITY);
        done.entry(a).or_insert(false);
        done.entry(b).or_insert(false);
    }
    dist.insert(from, 0.0);
    done.entry(from).or_insert(false);
    done.entry(to).or_insert(false);
    dist.entry(to).or_insert(f64::INFINITY);

    loop {
        // Linear extraction of the cheapest unfinished node.
        let mut best: Option<(u32, f64)> = None;
        for (&n, &d) in &dist {
            if !done[&n] && d.is_finite() && best.map_or(true, |(_, bd)| d < bd) {
                best = Some((n, d));
            }
        }
        let Some((node, d)) = best else { break };
        if node == to {
            return Some(d);
        }
        done.insert(node, true);
        for &(a, b, c) in arcs {
            if a == node {
                let nd = d + c;
                let e = dist.entry(b).or_insert(f64::INFINITY);
                if nd < *e {
                    *e = nd;
                }
                done.entry(b).or_insert(false);
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::shortest_path_cost;

    #[test]
    fn picks_the_cheaper_detour() {
        let arcs = [(0, 1, 5.0), (0, 2, 1.0), (2, 1, 1.0)];
        assert_eq!(shortest_path_cost(&arcs, 0, 1), Some(2.0));
    }

    #[test]
    fn unreachable_is_none() {
        let arcs = [(0, 1, 1.0)];
        assert_eq!(shortest_path_cost(&arcs, 1, 0), None);
    }

    #[test]
    fn source_equals_target_is_zero() {
        assert_eq!(shortest_path_cost(&[(0, 1, 1.0)], 0, 0), Some(0.0));
    }
}

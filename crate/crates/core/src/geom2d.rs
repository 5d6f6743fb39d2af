//! Plain 2-D helpers shared by the world model, planner, and perception:
//! segment projections, convex polygon containment, overlap, and distance.

use nalgebra::{Point2, Vector2};

pub type P2 = Point2<f64>;
pub type V2 = Vector2<f64>;

pub fn dist(a: P2, b: P2) -> f64 {
    (b - a).norm()
}

/// Closest point on segment ab to p, returned as (parameter in [0,1], point).
pub fn project_on_segment(p: P2, a: P2, b: P2) -> (f64, P2) {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 <= 0.0 {
        return (0.0, a);
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (t, a + ab * t)
}

pub fn segment_distance(p: P2, a: P2, b: P2) -> f64 {
    dist(p, project_on_segment(p, a, b).1)
}

fn cross(o: P2, a: P2, b: P2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Inclusive containment for a convex polygon in counter-clockwise order.
pub fn point_in_convex(p: P2, poly: &[P2]) -> bool {
    if poly.len() < 3 {
        return false;
    }
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        if cross(a, b, p) < 0.0 {
            return false;
        }
    }
    true
}

pub fn polygon_is_ccw(poly: &[P2]) -> bool {
    let mut area = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        area += a.x * b.y - b.x * a.y;
    }
    area > 0.0
}

pub fn polygon_is_convex(poly: &[P2]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        if cross(poly[i], poly[(i + 1) % n], poly[(i + 2) % n]) < -1e-12 {
            return false;
        }
    }
    true
}

fn axes_of(poly: &[P2], out: &mut Vec<V2>) {
    for i in 0..poly.len() {
        let e = poly[(i + 1) % poly.len()] - poly[i];
        let n = V2::new(-e.y, e.x);
        let len = n.norm();
        if len > 1e-12 {
            out.push(n / len);
        }
    }
}

fn project_extent(poly: &[P2], axis: V2) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for p in poly {
        let d = p.coords.dot(&axis);
        lo = lo.min(d);
        hi = hi.max(d);
    }
    (lo, hi)
}

/// Separating-axis overlap test for convex polygons. Returns the minimum
/// translation depth when the polygons overlap, `None` when separated.
pub fn convex_overlap_depth(a: &[P2], b: &[P2]) -> Option<f64> {
    let mut axes = Vec::with_capacity(a.len() + b.len());
    axes_of(a, &mut axes);
    axes_of(b, &mut axes);
    let mut depth = f64::INFINITY;
    for axis in axes {
        let (a_lo, a_hi) = project_extent(a, axis);
        let (b_lo, b_hi) = project_extent(b, axis);
        let overlap = a_hi.min(b_hi) - a_lo.max(b_lo);
        if overlap < 0.0 {
            return None;
        }
        depth = depth.min(overlap);
    }
    Some(depth)
}

/// Distance between convex polygons; zero when they touch or overlap.
pub fn convex_distance(a: &[P2], b: &[P2]) -> f64 {
    if convex_overlap_depth(a, b).is_some() {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for i in 0..a.len() {
        for j in 0..b.len() {
            let (p0, p1) = (a[i], a[(i + 1) % a.len()]);
            let (q0, q1) = (b[j], b[(j + 1) % b.len()]);
            best = best.min(segment_segment_distance(p0, p1, q0, q1));
        }
    }
    best
}

fn segment_segment_distance(p0: P2, p1: P2, q0: P2, q1: P2) -> f64 {
    if segments_intersect(p0, p1, q0, q1) {
        return 0.0;
    }
    segment_distance(p0, q0, q1)
        .min(segment_distance(p1, q0, q1))
        .min(segment_distance(q0, p0, p1))
        .min(segment_distance(q1, p0, p1))
}

pub fn segments_intersect(p0: P2, p1: P2, q0: P2, q1: P2) -> bool {
    let d1 = cross(q0, q1, p0);
    let d2 = cross(q0, q1, p1);
    let d3 = cross(p0, p1, q0);
    let d4 = cross(p0, p1, q1);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on = |d: f64, a: P2, b: P2, p: P2| {
        d == 0.0
            && p.x >= a.x.min(b.x)
            && p.x <= a.x.max(b.x)
            && p.y >= a.y.min(b.y)
            && p.y <= a.y.max(b.y)
    };
    on(d1, q0, q1, p0) || on(d2, q0, q1, p1) || on(d3, p0, p1, q0) || on(d4, p0, p1, q1)
}

/// Parameter interval [t0, t1] of segment ab lying inside a CCW convex
/// polygon (half-plane clipping), or `None` if the segment misses it.
pub fn clip_segment_to_convex(a: P2, b: P2, poly: &[P2]) -> Option<(f64, f64)> {
    if poly.len() < 3 {
        return None;
    }
    let d = b - a;
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for i in 0..poly.len() {
        let e0 = poly[i];
        let e1 = poly[(i + 1) % poly.len()];
        // Inward normal of a CCW edge.
        let n = V2::new(-(e1.y - e0.y), e1.x - e0.x);
        let denom = n.dot(&d);
        let num = n.dot(&(e0 - a));
        if denom.abs() < 1e-15 {
            // Parallel edge: the whole segment is on one side. num is the
            // edge-to-start offset along the inward normal, negated.
            if num > 0.0 {
                return None;
            }
            continue;
        }
        let t = num / denom;
        if denom > 0.0 {
            t0 = t0.max(t);
        } else {
            t1 = t1.min(t);
        }
        if t0 > t1 {
            return None;
        }
    }
    Some((t0, t1))
}

/// Corners of an oriented rectangle centered on (x, y), counter-clockwise.
pub fn oriented_rect(x: f64, y: f64, theta: f64, length: f64, width: f64) -> [P2; 4] {
    let (s, c) = theta.sin_cos();
    let hl = length / 2.0;
    let hw = width / 2.0;
    let corner = |lx: f64, ly: f64| P2::new(x + c * lx - s * ly, y + s * lx + c * ly);
    [corner(-hl, -hw), corner(hl, -hw), corner(hl, hw), corner(-hl, hw)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_projection_clamps_to_endpoints() {
        let a = P2::new(0.0, 0.0);
        let b = P2::new(2.0, 0.0);
        assert_eq!(project_on_segment(P2::new(-1.0, 1.0), a, b).0, 0.0);
        assert_eq!(project_on_segment(P2::new(3.0, 1.0), a, b).0, 1.0);
        let (t, p) = project_on_segment(P2::new(0.5, 2.0), a, b);
        assert!((t - 0.25).abs() < 1e-12 && (p.y - 0.0).abs() < 1e-12);
    }

    #[test]
    fn convex_containment_is_inclusive_on_edges() {
        let sq = [P2::new(0.0, 0.0), P2::new(1.0, 0.0), P2::new(1.0, 1.0), P2::new(0.0, 1.0)];
        assert!(point_in_convex(P2::new(0.5, 0.5), &sq));
        assert!(point_in_convex(P2::new(0.0, 0.5), &sq));
        assert!(!point_in_convex(P2::new(-0.01, 0.5), &sq));
    }

    #[test]
    fn identical_rectangles_overlap_by_their_width() {
        let a = oriented_rect(1.0, 2.0, 0.3, 0.9, 0.6);
        let depth = convex_overlap_depth(&a, &a.clone()).unwrap();
        assert!((depth - 0.6).abs() < 1e-9);
    }

    #[test]
    fn segment_clipping_finds_the_crossing_interval() {
        let sq = [P2::new(1.0, -1.0), P2::new(3.0, -1.0), P2::new(3.0, 1.0), P2::new(1.0, 1.0)];
        // Crosses the square between x = 1 and x = 3 on a length-4 segment.
        let (t0, t1) = clip_segment_to_convex(P2::new(0.0, 0.0), P2::new(4.0, 0.0), &sq).unwrap();
        assert!((t0 - 0.25).abs() < 1e-12 && (t1 - 0.75).abs() < 1e-12);
        // Entirely inside.
        let (t0, t1) = clip_segment_to_convex(P2::new(1.5, 0.0), P2::new(2.5, 0.0), &sq).unwrap();
        assert!((t0, t1) == (0.0, 1.0));
        // Misses above; parallel to the top edge.
        assert!(clip_segment_to_convex(P2::new(0.0, 2.0), P2::new(4.0, 2.0), &sq).is_none());
    }

    #[test]
    fn offset_unit_squares_overlap_by_the_remainder() {
        let a = oriented_rect(0.0, 0.0, 0.0, 1.0, 1.0);
        let b = oriented_rect(0.9, 0.0, 0.0, 1.0, 1.0);
        let depth = convex_overlap_depth(&a, &b).unwrap();
        assert!((depth - 0.1).abs() < 1e-9);
        let c = oriented_rect(2.5, 0.0, 0.0, 1.0, 1.0);
        assert!(convex_overlap_depth(&a, &c).is_none());
        assert!((convex_distance(&a, &c) - 1.5).abs() < 1e-9);
    }
}

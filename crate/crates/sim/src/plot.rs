//! Deterministic SVG rendering of a scenario and recorded trajectories.
//!
//! Every coordinate is formatted with three decimals so identical inputs
//! produce byte-identical files on any platform.

use std::fmt::Write as _;

use crate::logs::TrajectoryRow;
use crate::scenario::Scenario;

const SCALE: f64 = 20.0; // px per meter
const MARGIN: f64 = 1.5; // meters of breathing room around the floor

const ROBOT_COLORS: [&str; 8] =
    ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];

struct Frame {
    min_x: f64,
    max_y: f64,
    width_px: f64,
    height_px: f64,
}

impl Frame {
    fn new(sc: &Scenario) -> Self {
        let min_x = sc.floorplan.min[0] - MARGIN;
        let min_y = sc.floorplan.min[1] - MARGIN;
        let max_x = sc.floorplan.max[0] + MARGIN;
        let max_y = sc.floorplan.max[1] + MARGIN;
        Frame {
            min_x,
            max_y,
            width_px: (max_x - min_x) * SCALE,
            height_px: (max_y - min_y) * SCALE,
        }
    }

    // SVG y grows downward, world y grows upward.
    fn x(&self, wx: f64) -> f64 {
        (wx - self.min_x) * SCALE
    }

    fn y(&self, wy: f64) -> f64 {
        (self.max_y - wy) * SCALE
    }

    fn pt(&self, wx: f64, wy: f64) -> String {
        format!("{:.3},{:.3}", self.x(wx), self.y(wy))
    }
}

fn polygon_points(f: &Frame, poly: &[[f64; 2]]) -> String {
    poly.iter().map(|p| f.pt(p[0], p[1])).collect::<Vec<_>>().join(" ")
}

/// Render the floor, infrastructure, and per-robot paths into an SVG
/// document. Camera footprints come from projecting the segmentation
/// stream's corner pixels onto the floor plane.
pub fn render_svg(sc: &Scenario, rows: &[TrajectoryRow]) -> Result<String, String> {
    let f = Frame::new(sc);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.3}\" height=\"{:.3}\" viewBox=\"0 0 {:.3} {:.3}\">",
        f.width_px, f.height_px, f.width_px, f.height_px
    );
    let _ = writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"#fafafa\"/>");

    // Camera coverage, painted first so everything else sits on top.
    let rigs = sc.build_cameras()?;
    for rig in &rigs {
        let w = rig.intrinsics_low.width as f64;
        let h = rig.intrinsics_low.height as f64;
        let corners = [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)];
        let mut quad = Vec::with_capacity(4);
        for c in corners {
            let (x, y) = rig
                .floor_hom_low
                .pixel_to_ground(c)
                .map_err(|e| format!("camera {} footprint: {e}", rig.id))?;
            quad.push([x, y]);
        }
        let _ = writeln!(
            s,
            "<polygon points=\"{}\" fill=\"#fff3c4\" fill-opacity=\"0.45\" stroke=\"#d4b106\" stroke-width=\"0.5\"/>",
            polygon_points(&f, &quad)
        );
    }

    let _ = writeln!(
        s,
        "<rect x=\"{:.3}\" y=\"{:.3}\" width=\"{:.3}\" height=\"{:.3}\" fill=\"none\" stroke=\"#333333\" stroke-width=\"2\"/>",
        f.x(sc.floorplan.min[0]),
        f.y(sc.floorplan.max[1]),
        (sc.floorplan.max[0] - sc.floorplan.min[0]) * SCALE,
        (sc.floorplan.max[1] - sc.floorplan.min[1]) * SCALE
    );

    for ob in &sc.floorplan.obstacles {
        let _ = writeln!(
            s,
            "<polygon points=\"{}\" fill=\"#b0b0b0\" stroke=\"#606060\" stroke-width=\"1\"/>",
            polygon_points(&f, &ob.polygon)
        );
    }

    for z in &sc.road_network.intersections {
        let _ = writeln!(
            s,
            "<polygon points=\"{}\" fill=\"#ffd8a8\" fill-opacity=\"0.5\" stroke=\"#e8590c\" stroke-width=\"1\" stroke-dasharray=\"4 3\"/>",
            polygon_points(&f, &z.polygon)
        );
    }

    for e in &sc.road_network.edges {
        let a = sc.road_network.nodes[&e.from];
        let b = sc.road_network.nodes[&e.to];
        let _ = writeln!(
            s,
            "<line x1=\"{:.3}\" y1=\"{:.3}\" x2=\"{:.3}\" y2=\"{:.3}\" stroke=\"#4d4d4d\" stroke-width=\"1.2\"/>",
            f.x(a[0]),
            f.y(a[1]),
            f.x(b[0]),
            f.y(b[1])
        );
        // Direction tick at the midpoint.
        let mx = (a[0] + b[0]) / 2.0;
        let my = (a[1] + b[1]) / 2.0;
        let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        if len > 1e-9 {
            let ux = (b[0] - a[0]) / len;
            let uy = (b[1] - a[1]) / len;
            let tip = [mx + 0.25 * ux, my + 0.25 * uy];
            let left = [mx - 0.15 * uy, my + 0.15 * ux];
            let right = [mx + 0.15 * uy, my - 0.15 * ux];
            let _ = writeln!(
                s,
                "<polygon points=\"{} {} {}\" fill=\"#4d4d4d\"/>",
                f.pt(tip[0], tip[1]),
                f.pt(left[0], left[1]),
                f.pt(right[0], right[1])
            );
        }
    }

    for (name, node) in &sc.road_network.stations {
        let p = sc.road_network.nodes[node];
        let _ = writeln!(
            s,
            "<circle cx=\"{:.3}\" cy=\"{:.3}\" r=\"4\" fill=\"#2f9e44\"/>",
            f.x(p[0]),
            f.y(p[1])
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.3}\" y=\"{:.3}\" font-size=\"10\" font-family=\"sans-serif\" fill=\"#2b8a3e\">{name}</text>",
            f.x(p[0]) + 6.0,
            f.y(p[1]) - 4.0
        );
    }

    // One polyline per robot, in robot-id order.
    let mut ids: Vec<u16> = rows.iter().map(|r| r.robot).collect();
    ids.sort_unstable();
    ids.dedup();
    for id in ids {
        let pts: Vec<String> = rows
            .iter()
            .filter(|r| r.robot == id)
            .map(|r| f.pt(r.x, r.y))
            .collect();
        if pts.is_empty() {
            continue;
        }
        let color = ROBOT_COLORS[id as usize % ROBOT_COLORS.len()];
        let _ = writeln!(
            s,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" stroke-opacity=\"0.85\"/>",
            pts.join(" ")
        );
        let _ = writeln!(
            s,
            "<circle cx=\"{}\" r=\"3\" fill=\"{color}\"/>",
            pts[0].replace(',', "\" cy=\"")
        );
    }

    s.push_str("</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rendering_is_deterministic_and_complete() {
        let sc = crate::gen::smoke();
        let rows = vec![
            TrajectoryRow { t: 0.0, robot: 0, x: 3.0, y: 2.0, theta: 0.0, v: 0.0 },
            TrajectoryRow { t: 1.0, robot: 0, x: 3.5, y: 2.0, theta: 0.0, v: 0.5 },
        ];
        let a = render_svg(&sc, &rows).unwrap();
        let b = render_svg(&sc, &rows).unwrap();
        assert_eq!(a, b);
        assert!(a.starts_with("<svg "));
        assert!(a.ends_with("</svg>\n"));
        // Two cameras, one obstacle, six edges, one robot track.
        assert_eq!(a.matches("#fff3c4").count(), 2);
        assert_eq!(a.matches("<line ").count(), 6);
        assert!(a.contains("polyline"));
        assert!(a.contains("pick"));
        assert!(a.contains("drop"));
    }

    #[test]
    fn empty_trajectory_still_renders_the_floor() {
        let sc = crate::gen::smoke();
        let svg = render_svg(&sc, &[]).unwrap();
        assert!(!svg.contains("polyline"));
        assert!(svg.contains("</svg>"));
    }
}

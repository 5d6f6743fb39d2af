//! Robot localization: fiducial marker detection through the ceiling
//! cameras, unicycle dead reckoning from wheel odometry, and the
//! rebase-and-replay fusion of the two.
//!
//! Fusion keeps a short odometry history; an absolute fix (which arrives
//! late, the detector is slow) anchors the pose at its capture time and the
//! buffered samples replay on top. With noiseless inputs this reproduces
//! ground truth exactly, which is the property the whole scheme is chosen
//! for. Integration is explicit Euler, matching the plant model, so replay
//! introduces no scheme mismatch.

use std::collections::VecDeque;

use nalgebra::Vector3;
use rand_distr::{Distribution, Normal};

use crate::camera::CameraRig;
use crate::geom2d::{clip_segment_to_convex, dist, P2};
use crate::geometry::{estimate_marker_pose, marker_corners_local, project_point};
use crate::world::{Obstacle, WorldState};
use crate::Pose2;

/// Physical edge length of the square marker on every robot's roof.
pub const MARKER_EDGE: f64 = 0.3;
/// Odometry kept for replay; fixes older than this cannot anchor anything.
pub const ODOM_BUFFER_HORIZON: f64 = 10.0;

/// Absolute pose observation recovered from one camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkerFix {
    pub robot_id: u16,
    pub pose: Pose2,
    /// When the frame was captured, not when the fix arrived.
    pub capture_time: f64,
    pub camera_id: u8,
    /// Provenance metadata: the pixel noise the detection was made under.
    pub corner_pixel_noise_sigma: f64,
}

/// One wheel-odometry integration interval, stamped at its end.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdometrySample {
    pub robot_id: u16,
    pub dt: f64,
    pub v_meas: f64,
    pub omega_meas: f64,
    pub stamp: f64,
}

#[derive(Debug, Clone)]
pub struct FusedPoseState {
    pub robot_id: u16,
    pub pose: Pose2,
    pub last_fix_time: f64,
    /// Samples stamped after `last_fix_time`, time-ordered.
    pub odom_buffer: VecDeque<OdometrySample>,
    /// Fixes dropped for arriving out of order; surfaced in run metrics.
    pub stale_fix_count: u64,
}

impl FusedPoseState {
    pub fn new(robot_id: u16, pose: Pose2, now: f64) -> Self {
        Self { robot_id, pose, last_fix_time: now, odom_buffer: VecDeque::new(), stale_fix_count: 0 }
    }
}

/// Explicit Euler step of the unicycle model, matching the plant exactly.
pub fn dead_reckon(pose: &Pose2, s: &OdometrySample) -> Pose2 {
    debug_assert!(s.dt > 0.0);
    let (sin, cos) = pose.theta.sin_cos();
    Pose2::new(
        pose.x + s.v_meas * cos * s.dt,
        pose.y + s.v_meas * sin * s.dt,
        pose.theta + s.omega_meas * s.dt,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub enum FusionEvent {
    Fix(MarkerFix),
    Odometry(OdometrySample),
}

/// Advance the fused estimate by one event.
///
/// Odometry integrates forward and is buffered. A fix rebases: the pose
/// restarts from the fix and every buffered sample after its capture time
/// replays on top. Fixes at or before `last_fix_time` leave the state
/// untouched (duplicates are no-ops, older ones count as stale).
pub fn fuse(state: &mut FusedPoseState, event: FusionEvent) {
    match event {
        FusionEvent::Odometry(s) => {
            debug_assert_eq!(s.robot_id, state.robot_id);
            if s.stamp <= state.last_fix_time {
                return;
            }
            if let Some(back) = state.odom_buffer.back() {
                debug_assert!(s.stamp > back.stamp, "odometry must arrive in order");
            }
            state.pose = dead_reckon(&state.pose, &s);
            state.odom_buffer.push_back(s);
            let floor = s.stamp - ODOM_BUFFER_HORIZON;
            while state.odom_buffer.front().is_some_and(|f| f.stamp < floor) {
                state.odom_buffer.pop_front();
            }
        }
        FusionEvent::Fix(fix) => {
            debug_assert_eq!(fix.robot_id, state.robot_id);
            if fix.capture_time < state.last_fix_time {
                state.stale_fix_count += 1;
                return;
            }
            if fix.capture_time == state.last_fix_time {
                return;
            }
            while state.odom_buffer.front().is_some_and(|f| f.stamp <= fix.capture_time) {
                state.odom_buffer.pop_front();
            }
            let mut pose = fix.pose;
            for s in &state.odom_buffer {
                pose = dead_reckon(&pose, s);
            }
            state.pose = pose;
            state.last_fix_time = fix.capture_time;
        }
    }
}

/// True iff a static obstacle interrupts the camera-to-marker sight line.
/// The ray is checked in 2.5-D: where its ground track crosses an obstacle
/// footprint, the obstacle must stay below the ray.
fn occluded(obstacles: &[Obstacle], camera: Vector3<f64>, marker: Vector3<f64>) -> bool {
    let a = P2::new(camera.x, camera.y);
    let b = P2::new(marker.x, marker.y);
    for obs in obstacles {
        let Some((t0, t1)) = clip_segment_to_convex(a, b, &obs.polygon) else { continue };
        if t1 - t0 < 1e-12 {
            continue;
        }
        let z_at = |t: f64| camera.z + (marker.z - camera.z) * t;
        let ray_min = z_at(t0).min(z_at(t1));
        if obs.height >= ray_min {
            return true;
        }
    }
    false
}

/// One localization sweep over the full-resolution streams.
///
/// For each robot whose marker center is in view of at least one camera
/// with clear line of sight, exactly one fix is produced, from the covering
/// camera closest on the ground (ties to the lower id). True corners are
/// projected, i.i.d. Gaussian pixel noise is added from the world's seeded
/// stream (robots in storage order keep draws reproducible), and the pose
/// comes back through the marker-height homography. Implausible corner
/// geometry after noise drops the detection, same as a real misdetection.
pub fn simulate_marker_detections(
    world: &mut WorldState,
    cameras: &[CameraRig],
    noise_sigma_px: f64,
    clock: f64,
) -> Vec<MarkerFix> {
    let mut fixes = Vec::new();
    let noise = if noise_sigma_px > 0.0 {
        Some(Normal::new(0.0, noise_sigma_px).expect("sigma is finite and non-negative"))
    } else {
        None
    };
    for ri in 0..world.robots.len() {
        let robot = world.robots[ri].clone();
        let center = Vector3::new(robot.pose.x, robot.pose.y, robot.marker_height);
        let mut best: Option<(f64, usize)> = None;
        for (ci, cam) in cameras.iter().enumerate() {
            let Ok((u, v)) = project_point(&cam.intrinsics_high, &cam.extrinsics, center) else {
                continue;
            };
            if !cam.intrinsics_high.contains_pixel((u, v)) {
                continue;
            }
            if occluded(&world.floorplan.obstacles, cam.position3(), center) {
                continue;
            }
            let d = dist(cam.ground_position(), P2::new(center.x, center.y));
            let better = match best {
                None => true,
                Some((bd, bi)) => d < bd || (d == bd && cam.id < cameras[bi].id),
            };
            if better {
                best = Some((d, ci));
            }
        }
        let Some((_, ci)) = best else { continue };
        let cam = &cameras[ci];
        let Some(hom) = cam.marker_hom(robot.marker_height) else { continue };

        let mut corners_px = [(0.0, 0.0); 4];
        let mut all_projected = true;
        for (i, (lx, ly)) in marker_corners_local(MARKER_EDGE).into_iter().enumerate() {
            let (wx, wy) = robot.pose.transform_point((lx, ly));
            match project_point(&cam.intrinsics_high, &cam.extrinsics, Vector3::new(wx, wy, robot.marker_height)) {
                Ok(px) => corners_px[i] = px,
                Err(_) => {
                    all_projected = false;
                    break;
                }
            }
        }
        if !all_projected {
            continue;
        }
        if let Some(n) = &noise {
            for c in &mut corners_px {
                c.0 += n.sample(&mut world.rng);
                c.1 += n.sample(&mut world.rng);
            }
        }
        if let Ok(pose) = estimate_marker_pose(&corners_px, hom, MARKER_EDGE) {
            fixes.push(MarkerFix {
                robot_id: robot.id,
                pose,
                capture_time: clock,
                camera_id: cam.id,
                corner_pixel_noise_sigma: noise_sigma_px,
            });
        }
    }
    fixes
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{
        DynamicAgent, Edge, FloorPlan, RectFootprint, RoadNetwork, RobotMode, RobotState, WorldState,
    };
    use crate::{Extrinsics, Intrinsics};
    use amrsim_oracles::unicycle::closed_form_arc;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;
    use std::f64::consts::FRAC_PI_2;

    fn sample(stamp: f64, dt: f64, v: f64, omega: f64) -> OdometrySample {
        OdometrySample { robot_id: 1, dt, v_meas: v, omega_meas: omega, stamp }
    }

    #[test]
    fn dead_reckoning_integrates_the_unicycle() {
        let p = dead_reckon(&Pose2::new(0.0, 0.0, 0.0), &sample(1.0, 1.0, 1.0, 0.0));
        assert_relative_eq!(p.x, 1.0);
        assert_relative_eq!(p.y, 0.0);
        let p = dead_reckon(&Pose2::new(0.0, 0.0, FRAC_PI_2), &sample(1.0, 1.0, 1.0, 0.0));
        assert_relative_eq!(p.x, 0.0, epsilon = 1e-12);
        assert_relative_eq!(p.y, 1.0);
    }

    #[test]
    fn chained_euler_approaches_the_closed_form_arc() {
        let mut pose = Pose2::new(0.0, 0.0, 0.0);
        for k in 0..100 {
            pose = dead_reckon(&pose, &sample(0.01 * (k + 1) as f64, 0.01, 1.0, 1.0));
        }
        let (x, y, theta) = closed_form_arc(1.0, 1.0, 1.0);
        assert!((pose.x - x).hypot(pose.y - y) < 0.02, "Euler drift too large");
        assert!((pose.theta - theta).abs() < 1e-9);
    }

    #[test]
    fn fix_then_odometry_walks_forward() {
        let mut st = FusedPoseState::new(1, Pose2::new(9.0, 9.0, 1.0), -1.0);
        fuse(
            &mut st,
            FusionEvent::Fix(MarkerFix {
                robot_id: 1,
                pose: Pose2::new(0.0, 0.0, 0.0),
                capture_time: 0.0,
                camera_id: 0,
                corner_pixel_noise_sigma: 0.0,
            }),
        );
        for k in 1..=10 {
            fuse(&mut st, FusionEvent::Odometry(sample(0.1 * k as f64, 0.1, 1.0, 0.0)));
        }
        assert_relative_eq!(st.pose.x, 1.0, epsilon = 1e-12);
        assert_relative_eq!(st.pose.y, 0.0);
    }

    /// Ground truth integrated with the same commands the estimator hears;
    /// a fix that arrives late must rebase onto the truth exactly.
    #[test]
    fn late_fix_replay_reproduces_ground_truth_exactly() {
        let dt = 0.1;
        let cmd = |k: usize| (0.4 + 0.03 * k as f64, (0.25 * k as f64).sin());
        let mut truth = vec![Pose2::new(0.0, 0.0, 0.3)];
        for k in 0..12 {
            let (v, om) = cmd(k);
            truth.push(dead_reckon(truth.last().unwrap(), &sample((k + 1) as f64 * dt, dt, v, om)));
        }

        let mut st = FusedPoseState::new(1, truth[0], 0.0);
        for k in 0..12 {
            let (v, om) = cmd(k);
            fuse(&mut st, FusionEvent::Odometry(sample((k + 1) as f64 * dt, dt, v, om)));
            if k == 7 {
                // Fix captured at t = 0.5 shows up 0.3 s later, mid-motion.
                fuse(
                    &mut st,
                    FusionEvent::Fix(MarkerFix {
                        robot_id: 1,
                        pose: truth[5],
                        capture_time: 5.0 * dt,
                        camera_id: 0,
                        corner_pixel_noise_sigma: 0.0,
                    }),
                );
            }
        }
        assert_relative_eq!(st.pose.x, truth[12].x, epsilon = 1e-12);
        assert_relative_eq!(st.pose.y, truth[12].y, epsilon = 1e-12);
        assert_relative_eq!(st.pose.theta, truth[12].theta, epsilon = 1e-12);
    }

    #[test]
    fn stale_and_duplicate_fixes_leave_state_untouched() {
        let mut st = FusedPoseState::new(1, Pose2::new(0.0, 0.0, 0.0), 0.0);
        let fix = |t: f64, x: f64| {
            FusionEvent::Fix(MarkerFix {
                robot_id: 1,
                pose: Pose2::new(x, 0.0, 0.0),
                capture_time: t,
                camera_id: 0,
                corner_pixel_noise_sigma: 0.0,
            })
        };
        fuse(&mut st, fix(0.5, 2.0));
        assert_relative_eq!(st.pose.x, 2.0);
        let snapshot = st.pose;
        fuse(&mut st, fix(0.3, 7.0));
        assert_eq!(st.pose, snapshot, "older fix must be dropped");
        assert_eq!(st.stale_fix_count, 1);
        fuse(&mut st, fix(0.5, 7.0));
        assert_eq!(st.pose, snapshot, "duplicate capture time is a no-op");
        assert_eq!(st.stale_fix_count, 1);
    }

    #[test]
    fn odometry_buffer_stays_within_the_horizon() {
        let mut st = FusedPoseState::new(1, Pose2::new(0.0, 0.0, 0.0), 0.0);
        for k in 1..=150 {
            fuse(&mut st, FusionEvent::Odometry(sample(k as f64 * 0.1, 0.1, 0.5, 0.0)));
        }
        let span = st.odom_buffer.back().unwrap().stamp - st.odom_buffer.front().unwrap().stamp;
        assert!(span <= ODOM_BUFFER_HORIZON + 1e-9, "buffer spans {span} s");
        assert!(st.odom_buffer.len() >= 99, "horizon should retain ~100 samples");
    }

    fn overhead_rig(id: u8, x: f64, y: f64) -> CameraRig {
        let intr = Intrinsics { fx: 1000.0, fy: 1000.0, cx: 1920.0, cy: 1080.0, width: 3840, height: 2160 };
        let extr = Extrinsics::top_down(Vector3::new(x, y, 8.0), 0.0);
        CameraRig::new(id, intr, extr, &[0.3]).unwrap()
    }

    fn test_world(robots: Vec<RobotState>, obstacles: Vec<Obstacle>) -> WorldState {
        let mut plan = FloorPlan::empty(P2::new(-50.0, -50.0), P2::new(50.0, 50.0));
        plan.obstacles = obstacles;
        let net = RoadNetwork {
            nodes: BTreeMap::from([(1, P2::new(0.0, 0.0)), (2, P2::new(1.0, 0.0))]),
            edges: vec![Edge { from: 1, to: 2, length: 1.0, bidirectional: true }],
            intersections: vec![],
            stations: BTreeMap::new(),
        };
        WorldState::new(plan, net, robots, Vec::<DynamicAgent>::new(), ChaCha8Rng::seed_from_u64(7))
            .unwrap()
    }

    fn robot_at(x: f64, y: f64, theta: f64) -> RobotState {
        RobotState {
            id: 1,
            pose: Pose2::new(x, y, theta),
            v: 0.0,
            omega: 0.0,
            mode: RobotMode::Autonomous,
            footprint: RectFootprint { length: 0.9, width: 0.6 },
            marker_height: 0.3,
            v_limit: 1.5,
            omega_limit: 2.0,
        }
    }

    #[test]
    fn noiseless_detection_recovers_the_true_pose() {
        let mut world = test_world(vec![robot_at(1.0, 0.5, 0.7)], vec![]);
        let cams = [overhead_rig(0, 0.0, 0.0)];
        let fixes = simulate_marker_detections(&mut world, &cams, 0.0, 3.0);
        assert_eq!(fixes.len(), 1);
        let f = &fixes[0];
        assert_eq!((f.robot_id, f.camera_id), (1, 0));
        assert_relative_eq!(f.capture_time, 3.0);
        assert_relative_eq!(f.pose.x, 1.0, epsilon = 1e-9);
        assert_relative_eq!(f.pose.y, 0.5, epsilon = 1e-9);
        assert_relative_eq!(f.pose.theta, 0.7, epsilon = 1e-9);
    }

    #[test]
    fn out_of_view_robots_yield_no_fix() {
        // Ground half-extent at marker height is (8-0.3)*1920/1000 = 14.8 m.
        let mut world = test_world(vec![robot_at(30.0, 0.0, 0.0)], vec![]);
        let cams = [overhead_rig(0, 0.0, 0.0)];
        assert!(simulate_marker_detections(&mut world, &cams, 0.0, 0.0).is_empty());
    }

    #[test]
    fn tall_obstacles_occlude_the_sight_line() {
        let wall = |h: f64| Obstacle {
            polygon: vec![
                P2::new(4.0, -1.0),
                P2::new(5.0, -1.0),
                P2::new(5.0, 1.0),
                P2::new(4.0, 1.0),
            ],
            height: h,
        };
        // Camera at the origin, robot at x = 10: the ray crosses the wall
        // at x in [4, 5], where its height is 8 - 7.7*(5/10) = 4.15 m.
        let mut world = test_world(vec![robot_at(10.0, 0.0, 0.0)], vec![wall(5.0)]);
        let cams = [overhead_rig(0, 0.0, 0.0)];
        assert!(simulate_marker_detections(&mut world, &cams, 0.0, 0.0).is_empty());

        let mut world = test_world(vec![robot_at(10.0, 0.0, 0.0)], vec![wall(4.0)]);
        assert_eq!(simulate_marker_detections(&mut world, &cams, 0.0, 0.0).len(), 1);
    }

    #[test]
    fn nearest_covering_camera_wins() {
        let mut world = test_world(vec![robot_at(3.0, 0.0, 0.0)], vec![]);
        let cams = [overhead_rig(0, 0.0, 0.0), overhead_rig(1, 4.0, 0.0)];
        let fixes = simulate_marker_detections(&mut world, &cams, 0.0, 0.0);
        assert_eq!(fixes.len(), 1);
        assert_eq!(fixes[0].camera_id, 1);
    }

    /// Ground resolution is Z/f = 8 mm per pixel; sigma = 2 px of corner
    /// noise must keep the recovered center within 3x(2*8/1000) m RMS.
    #[test]
    fn pixel_noise_translates_to_bounded_ground_error() {
        let mut world = test_world(vec![robot_at(0.5, 0.2, 0.3)], vec![]);
        let cams = [overhead_rig(0, 0.0, 0.0)];
        let mut sq_sum = 0.0;
        let mut n = 0;
        for _ in 0..1000 {
            for f in simulate_marker_detections(&mut world, &cams, 2.0, 0.0) {
                sq_sum += (f.pose.x - 0.5).powi(2) + (f.pose.y - 0.2).powi(2);
                n += 1;
            }
        }
        assert!(n >= 950, "noise rejected too many detections ({n}/1000)");
        let rms = (sq_sum / n as f64).sqrt();
        assert!(rms <= 3.0 * (2.0 * 8.0 / 1000.0), "position RMS {rms} m");
        assert!(rms > 1e-4, "noise should actually perturb the fix");
    }
}

//! Low-level driving: lookahead point tracking with heading-error feedback,
//! kinematic ramp speed profiles, and corridor-based obstacle stops. Robots
//! never steer around obstacles; they brake on their route.

use thiserror::Error;

use crate::geom2d::{dist, project_on_segment, P2};
use crate::geometry::normalize_angle;
use crate::perception::{corridor_clear, OccupancyQuery};
use crate::planning::RoutePlan;
use crate::Pose2;

/// A grid older than this (relative to the control clock) means the
/// perception pipeline is down and driving on it is unsafe.
pub const GRID_FRESHNESS: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum MotionError {
    #[error("lookahead target coincides with the robot position")]
    CoincidentTarget,
    #[error("occupancy grid is stale (age {age_s} s)")]
    StaleGrid { age_s: f64 },
}

/// Driving envelope of one robot. Geometry and gains are per-robot scenario
/// data; `front_overhang` is the bumper-to-axle distance consumers use to
/// pad stop targets so clearance is measured at the footprint edge.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct MotionProfile {
    pub v_max: f64,
    pub accel: f64,
    pub decel: f64,
    pub lookahead: f64,
    pub stop_margin: f64,
    pub corridor_half_width: f64,
    pub k_theta: f64,
    pub omega_max: f64,
    pub front_overhang: f64,
    /// Whether Unknown cells block the corridor (conservative default).
    pub unknown_blocks: bool,
}

impl MotionProfile {
    pub fn validate(&self) -> bool {
        self.v_max > 0.0
            && self.accel > 0.0
            && self.decel > 0.0
            && self.lookahead >= 1.0
            && self.stop_margin > 0.0
            && self.corridor_half_width > 0.0
            && self.k_theta > 0.0
            && self.omega_max > 0.0
            && self.front_overhang >= 0.0
    }
}

/// Per-robot tracking state for one route.
#[derive(Debug, Clone)]
pub struct TrackerState {
    pub route: RoutePlan,
    pub progress_arclength: f64,
    /// Behavior-imposed stop (station service, yield, halt) as an arclength.
    pub stop_target: Option<f64>,
    /// Last commanded speed; the ramp integrates from here.
    pub last_v: f64,
}

impl TrackerState {
    pub fn new(route: RoutePlan) -> Self {
        Self { route, progress_arclength: 0.0, stop_target: None, last_v: 0.0 }
    }

    /// Stops never move behind current progress (that would mean reversing).
    pub fn set_stop_target(&mut self, target: Option<f64>) {
        self.stop_target = target.map(|s| s.max(self.progress_arclength));
    }
}

/// Progress and steering target on a route.
///
/// Progress is the arclength of the route point nearest to the pose,
/// restricted to not fall behind `min_progress`: on self-approaching routes
/// the projection must not snap back to an earlier pass. The target sits
/// `lookahead` meters further along (clamped to the route end).
pub fn lookahead_target(
    route: &RoutePlan,
    pose: &Pose2,
    lookahead: f64,
    min_progress: f64,
) -> (P2, f64) {
    let p = P2::new(pose.x, pose.y);
    let cum = &route.cumulative_arclength;
    if route.polyline.len() < 2 {
        return (route.polyline[0], 0.0);
    }
    let floor = min_progress.clamp(0.0, route.total_length);
    let mut best: Option<(f64, f64)> = None;
    for i in 0..route.polyline.len() - 1 {
        let (sa, sb) = (cum[i], cum[i + 1]);
        if sb <= floor || sb - sa < 1e-12 {
            continue;
        }
        let (a, b) = (route.polyline[i], route.polyline[i + 1]);
        let t_min = ((floor - sa) / (sb - sa)).clamp(0.0, 1.0);
        let (t_raw, _) = project_on_segment(p, a, b);
        let t = t_raw.max(t_min);
        let point = a + (b - a) * t;
        let d = dist(p, point);
        let s = sa + t * (sb - sa);
        if best.is_none_or(|(bd, bs)| d < bd || (d == bd && s < bs)) {
            best = Some((d, s));
        }
    }
    let progress = best.map_or(floor, |(_, s)| s).max(floor);
    let target = route.point_at((progress + lookahead).min(route.total_length));
    (target, progress)
}

/// Heading-error feedback: rotate toward the target, clamped to the
/// actuator's rate limit.
pub fn heading_command(
    pose: &Pose2,
    target: P2,
    k_theta: f64,
    omega_max: f64,
) -> Result<f64, MotionError> {
    let dx = target.x - pose.x;
    let dy = target.y - pose.y;
    if dx.hypot(dy) < 1e-9 {
        return Err(MotionError::CoincidentTarget);
    }
    let error = normalize_angle(dy.atan2(dx) - pose.theta);
    Ok((k_theta * error).clamp(-omega_max, omega_max))
}

/// Ramp speed: accelerate toward v_max but never exceed the kinematic
/// braking envelope for the remaining stopping distance.
pub fn speed_command(v_current: f64, dist_to_stop: f64, profile: &MotionProfile, dt: f64) -> f64 {
    debug_assert!(dist_to_stop >= 0.0);
    let ramp = v_current + profile.accel * dt;
    let brake = (2.0 * profile.decel * (dist_to_stop - profile.stop_margin).max(0.0)).sqrt();
    ramp.min(profile.v_max).min(brake).max(0.0)
}

/// One control tick: track the route, sweep the corridor ahead, and emit
/// (v, omega). The corridor horizon covers the current braking distance plus
/// the lookahead; anything further cannot force a stop yet.
///
/// `now` is the control clock the grid stamp is checked against; a stale
/// grid aborts the tick and the caller must command a stop.
pub fn drive_tick(
    tracker: &mut TrackerState,
    pose: &Pose2,
    grid: &impl OccupancyQuery,
    profile: &MotionProfile,
    dt: f64,
    now: f64,
) -> Result<(f64, f64), MotionError> {
    let age = now - grid.stamp();
    if age > GRID_FRESHNESS {
        return Err(MotionError::StaleGrid { age_s: age });
    }
    let (target, progress) =
        lookahead_target(&tracker.route, pose, profile.lookahead, tracker.progress_arclength);
    tracker.progress_arclength = progress;

    let horizon = tracker.last_v * tracker.last_v / (2.0 * profile.decel) + profile.lookahead;
    let (_, blocked) = corridor_clear(
        grid,
        &tracker.route.polyline,
        &tracker.route.cumulative_arclength,
        progress,
        horizon,
        profile.corridor_half_width,
        profile.unknown_blocks,
    );

    let mut dist_to_stop = tracker.route.total_length - progress;
    if let Some(s) = tracker.stop_target {
        dist_to_stop = dist_to_stop.min(s - progress);
    }
    if let Some(s) = blocked {
        dist_to_stop = dist_to_stop.min(s - progress);
    }
    dist_to_stop = dist_to_stop.max(0.0);

    let v = speed_command(tracker.last_v, dist_to_stop, profile, dt);
    let omega = match heading_command(pose, target, profile.k_theta, profile.omega_max) {
        Ok(w) => w,
        // At the route end the target collapses onto the robot; hold heading.
        Err(MotionError::CoincidentTarget) => 0.0,
        Err(e) => return Err(e),
    };
    tracker.last_v = v;
    Ok((v, omega))
}

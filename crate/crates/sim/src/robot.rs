//! Robot-side executor.
//!
//! Deliberately thin: fuse downlinked pose fixes with the robot's own raw
//! odometry, track the most recent waypoint plan with pure-pursuit plus a
//! braking envelope, and stop when told to or when the cloud goes silent.
//! The plan end is the stop point; every safety margin was already baked
//! in cloud-side, so the executor brakes to the end with zero margin.

use amrsim_core::localization::{fuse, FusedPoseState, FusionEvent, MarkerFix, OdometrySample};
use amrsim_core::motion::{heading_command, lookahead_target, speed_command, MotionProfile, TrackerState};
use amrsim_core::netproto::{decode, encode, Header, MessageBody, NetError};
use amrsim_core::planning::RoutePlan;
use amrsim_core::geom2d::{dist, P2};
use amrsim_core::Pose2;

/// No plan or stop message for this long means the link is gone: brake.
const WATCH_SILENCE: f64 = 2.5;

/// Steering dead zone: a pursuit target closer than this carries no usable
/// bearing (a hold plan's single point sits at the robot itself), so the
/// heading is held instead of chased.
const HOLD_RADIUS: f64 = 0.25;

pub struct RobotAgent {
    pub id: u16,
    /// Onboard estimate: downlinked fixes plus raw local odometry.
    pub est: FusedPoseState,
    profile: MotionProfile,
    /// Executor profile: scenario profile with the stop margin zeroed and
    /// the cruise speed capped at the plan's commanded speed.
    exec: MotionProfile,
    plan: Option<TrackerState>,
    halted: bool,
    manual: bool,
    last_downlink: f64,
    last_v: f64,
    seq: u32,
    pub task: Option<u32>,
    pub fix_count: u64,
}

impl RobotAgent {
    pub fn new(id: u16, pose: Pose2, profile: MotionProfile, now: f64) -> Self {
        let mut exec = profile;
        exec.stop_margin = 0.0;
        Self {
            id,
            est: FusedPoseState::new(id, pose, now),
            profile,
            exec,
            plan: None,
            halted: false,
            manual: false,
            last_downlink: now,
            last_v: 0.0,
            seq: 0,
            task: None,
            fix_count: 0,
        }
    }

    pub fn set_manual(&mut self, engaged: bool) {
        self.manual = engaged;
        if engaged {
            self.plan = None;
            self.last_v = 0.0;
        }
    }

    pub fn has_plan(&self) -> bool {
        self.plan.is_some()
    }

    pub fn is_halted(&self) -> bool {
        self.halted
    }

    /// Datagram arriving over the downlink.
    pub fn on_downlink(&mut self, bytes: &[u8], now: f64) -> Result<(), NetError> {
        let (_header, body) = decode(bytes)?;
        self.last_downlink = now;
        match body {
            MessageBody::PoseFix { x_mm, y_mm, theta_urad, capture_time_us } => {
                let fix = MarkerFix {
                    robot_id: self.id,
                    pose: Pose2::new(
                        x_mm as f64 / 1000.0,
                        y_mm as f64 / 1000.0,
                        theta_urad as f64 / 1e6,
                    ),
                    capture_time: capture_time_us as f64 / 1e6,
                    camera_id: 0,
                    corner_pixel_noise_sigma: 0.0,
                };
                fuse(&mut self.est, FusionEvent::Fix(fix));
                self.fix_count += 1;
            }
            MessageBody::WaypointPlan { points } => {
                let mut polyline: Vec<P2> = Vec::with_capacity(points.len());
                let mut cruise = f64::INFINITY;
                for p in &points {
                    let pt = P2::new(p.x_mm as f64 / 1000.0, p.y_mm as f64 / 1000.0);
                    if polyline.last() != Some(&pt) {
                        polyline.push(pt);
                    }
                    if p.v_mms > 0 {
                        cruise = cruise.min(p.v_mms as f64 / 1000.0);
                    }
                }
                let mut cumulative = Vec::with_capacity(polyline.len());
                let mut s = 0.0;
                for (i, p) in polyline.iter().enumerate() {
                    if i > 0 {
                        s += dist(polyline[i - 1], *p);
                    }
                    cumulative.push(s);
                }
                let route = RoutePlan {
                    node_ids: Vec::new(),
                    polyline,
                    total_length: s,
                    cumulative_arclength: cumulative,
                };
                self.exec.v_max = if cruise.is_finite() {
                    cruise.min(self.profile.v_max)
                } else {
                    self.profile.v_max
                };
                self.plan = Some(TrackerState::new(route));
                self.halted = false;
            }
            MessageBody::StopCommand => {
                self.halted = true;
                self.plan = None;
            }
            MessageBody::TaskAssign { task_id, .. } => {
                self.task = Some(task_id);
            }
            _ => {}
        }
        Ok(())
    }

    /// Raw local odometry; this never crosses the wire.
    pub fn apply_own_odometry(&mut self, sample: OdometrySample) {
        fuse(&mut self.est, FusionEvent::Odometry(sample));
    }

    /// One wheel-control tick: (v, omega).
    pub fn command(&mut self, now: f64, dt: f64) -> (f64, f64) {
        if self.manual {
            self.last_v = 0.0;
            return (0.0, 0.0);
        }
        let lost = self.plan.is_some() && now - self.last_downlink > WATCH_SILENCE;
        if self.halted || lost || self.plan.is_none() {
            let v = (self.last_v - self.profile.decel * dt).max(0.0);
            self.last_v = v;
            return (v, 0.0);
        }
        let tr = self.plan.as_mut().expect("checked above");
        let pose = &self.est.pose;
        let (target, progress) =
            lookahead_target(&tr.route, pose, self.profile.lookahead, tr.progress_arclength);
        tr.progress_arclength = progress;
        let dist_to_stop = (tr.route.total_length - progress).max(0.0);
        let v = speed_command(self.last_v, dist_to_stop, &self.exec, dt);
        let omega = if dist(P2::new(pose.x, pose.y), target) < HOLD_RADIUS {
            0.0
        } else {
            heading_command(pose, target, self.profile.k_theta, self.profile.omega_max)
                .unwrap_or(0.0)
        };
        self.last_v = v;
        (v, omega)
    }

    /// Encode a wheel odometry increment for the uplink. The raw sample
    /// stays onboard; the wire carries quantized values.
    pub fn odometry_datagram(&mut self, v: f64, omega: f64, dt: f64, stamp: f64) -> Vec<u8> {
        let header = Header {
            robot_id: self.id,
            seq: self.seq,
            timestamp_us: (stamp * 1e6).round() as u64,
        };
        self.seq += 1;
        let body = MessageBody::OdometryReport {
            v_mms: (v * 1000.0).round() as i16,
            omega_mrads: (omega * 1000.0).round() as i16,
            dt_us: (dt * 1e6).round() as u32,
        };
        encode(&header, &body).expect("odometry report fits a datagram")
    }

    pub fn status_datagram(&mut self, now: f64) -> Vec<u8> {
        let header = Header {
            robot_id: self.id,
            seq: self.seq,
            timestamp_us: (now * 1e6).round() as u64,
        };
        self.seq += 1;
        let mode = if self.manual { 1 } else { 0 };
        let fsm_state = if self.halted {
            2
        } else if self.plan.is_some() {
            1
        } else {
            0
        };
        let body = MessageBody::StatusReport { mode, fsm_state, battery_pct: 100 };
        encode(&header, &body).expect("status report fits a datagram")
    }

    pub fn heartbeat_datagram(&mut self, now: f64) -> Vec<u8> {
        let header = Header {
            robot_id: self.id,
            seq: self.seq,
            timestamp_us: (now * 1e6).round() as u64,
        };
        self.seq += 1;
        encode(&header, &MessageBody::Heartbeat).expect("heartbeat fits a datagram")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use amrsim_core::netproto::WirePoint;

    fn profile() -> MotionProfile {
        MotionProfile {
            v_max: 1.5,
            accel: 0.8,
            decel: 1.2,
            lookahead: 0.8,
            stop_margin: 0.5,
            corridor_half_width: 0.6,
            k_theta: 2.5,
            omega_max: 1.8,
            front_overhang: 0.55,
            unknown_blocks: false,
        }
    }

    fn plan_datagram(points: Vec<WirePoint>) -> Vec<u8> {
        let header = Header { robot_id: 3, seq: 0, timestamp_us: 0 };
        encode(&header, &MessageBody::WaypointPlan { points }).unwrap()
    }

    #[test]
    fn plan_receipt_drives_toward_the_first_waypoint() {
        let mut r = RobotAgent::new(3, Pose2::new(0.0, 0.0, 0.0), profile(), 0.0);
        let bytes = plan_datagram(vec![
            WirePoint { x_mm: 0, y_mm: 0, v_mms: 1500 },
            WirePoint { x_mm: 5000, y_mm: 0, v_mms: 1500 },
            WirePoint { x_mm: 10000, y_mm: 0, v_mms: 0 },
        ]);
        r.on_downlink(&bytes, 0.0).unwrap();
        let (v, omega) = r.command(0.1, 0.1);
        assert!((v - 0.08).abs() < 1e-12, "ramps from standstill at accel*dt");
        assert!(omega.abs() < 1e-9, "already aligned with the plan");
    }

    #[test]
    fn stop_command_ramps_down_and_discards_the_plan() {
        let mut r = RobotAgent::new(3, Pose2::new(0.0, 0.0, 0.0), profile(), 0.0);
        let bytes = plan_datagram(vec![
            WirePoint { x_mm: 0, y_mm: 0, v_mms: 1500 },
            WirePoint { x_mm: 9000, y_mm: 0, v_mms: 0 },
        ]);
        r.on_downlink(&bytes, 0.0).unwrap();
        r.last_v = 1.2;
        let header = Header { robot_id: 3, seq: 1, timestamp_us: 100_000 };
        let stop = encode(&header, &MessageBody::StopCommand).unwrap();
        r.on_downlink(&stop, 0.1).unwrap();
        assert!(!r.has_plan());
        let (v, _) = r.command(0.2, 0.1);
        assert!((v - (1.2 - 1.2 * 0.1)).abs() < 1e-12, "decelerates at the profile rate");
    }

    #[test]
    fn silence_past_the_watchdog_brakes_mid_plan() {
        let mut r = RobotAgent::new(3, Pose2::new(0.0, 0.0, 0.0), profile(), 0.0);
        let bytes = plan_datagram(vec![
            WirePoint { x_mm: 0, y_mm: 0, v_mms: 1500 },
            WirePoint { x_mm: 50000, y_mm: 0, v_mms: 0 },
        ]);
        r.on_downlink(&bytes, 0.0).unwrap();
        r.last_v = 1.5;
        let (v_ok, _) = r.command(2.0, 0.1);
        assert!(v_ok > 1.0, "link fresh: keeps cruising");
        r.last_v = 1.5;
        let (v_lost, _) = r.command(2.7, 0.1);
        assert!((v_lost - (1.5 - 1.2 * 0.1)).abs() < 1e-12, "watchdog expired: braking");
    }

    #[test]
    fn wire_fix_snaps_the_estimate() {
        let mut r = RobotAgent::new(3, Pose2::new(0.0, 0.0, 0.0), profile(), 0.0);
        let header = Header { robot_id: 3, seq: 0, timestamp_us: 500_000 };
        let fix = MessageBody::PoseFix {
            x_mm: 2500,
            y_mm: -1250,
            theta_urad: 785_398,
            capture_time_us: 400_000,
        };
        let bytes = encode(&header, &fix).unwrap();
        r.on_downlink(&bytes, 0.5).unwrap();
        assert!((r.est.pose.x - 2.5).abs() < 1e-9);
        assert!((r.est.pose.y + 1.25).abs() < 1e-9);
        assert_eq!(r.fix_count, 1);
    }
}

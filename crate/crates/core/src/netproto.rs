//! Cloud/robot datagram protocol, the lossy-link simulation, and the
//! last-write-wins shared-state store.
//!
//! The wire format is normative and byte-exact, little-endian throughout:
//!
//! ```text
//! offset  size  field
//!      0     4  magic, ASCII "RAIL"
//!      4     1  version = 1
//!      5     1  msg_type
//!      6     2  robot_id u16
//!      8     4  seq u32
//!     12     8  timestamp_us u64
//!     20     2  payload_len u16
//!     22     n  payload (see message bodies)
//! ```
//!
//! msg_type: 1 PoseFix, 2 OdometryReport, 3 WaypointPlan, 4 StatusReport,
//! 5 Heartbeat, 6 TaskAssign, 7 StopCommand. A datagram never exceeds 1400
//! bytes, so nothing fragments; long plans are chunked by the sender.
//! There are no acks: loss is tolerated by periodically re-sending state.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::collections::BinaryHeap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"RAIL";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 22;
pub const MAX_DATAGRAM: usize = 1400;
/// Sender-side chunking bound for WaypointPlan.
pub const MAX_WAYPOINTS: usize = 100;
/// Fixed-point positions must cover the floorplan: |x| <= 2e6 mm (2 km).
pub const MAX_ABS_MM: i32 = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum NetError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(u8),
    #[error("truncated datagram: need {needed} bytes, got {got}")]
    Truncated { needed: usize, got: usize },
    #[error("payload length mismatch: header declares {declared}, body has {got}")]
    LengthMismatch { declared: usize, got: usize },
    #[error("unknown message type {0}")]
    UnknownMsgType(u8),
    #[error("value out of fixed-point range: {0}")]
    RangeOverflow(&'static str),
    #[error("key not present in the shared store")]
    KeyMissing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub robot_id: u16,
    pub seq: u32,
    pub timestamp_us: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WirePoint {
    pub x_mm: i32,
    pub y_mm: i32,
    pub v_mms: i16,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum MessageBody {
    /// Camera localization result for one robot, cloud to robot.
    PoseFix { x_mm: i32, y_mm: i32, theta_urad: i32, capture_time_us: u64 },
    /// Wheel odometry increment, robot to cloud.
    OdometryReport { v_mms: i16, omega_mrads: i16, dt_us: u32 },
    /// Route polyline with target speeds, cloud to robot.
    WaypointPlan { points: Vec<WirePoint> },
    StatusReport { mode: u8, fsm_state: u8, battery_pct: u8 },
    Heartbeat,
    TaskAssign { task_id: u32, a_station: u16, b_station: u16 },
    StopCommand,
}

impl MessageBody {
    pub fn msg_type(&self) -> u8 {
        match self {
            Self::PoseFix { .. } => 1,
            Self::OdometryReport { .. } => 2,
            Self::WaypointPlan { .. } => 3,
            Self::StatusReport { .. } => 4,
            Self::Heartbeat => 5,
            Self::TaskAssign { .. } => 6,
            Self::StopCommand => 7,
        }
    }
}

fn check_mm(v: i32, what: &'static str) -> Result<(), NetError> {
    if v.abs() > MAX_ABS_MM {
        Err(NetError::RangeOverflow(what))
    } else {
        Ok(())
    }
}

pub fn encode(header: &Header, body: &MessageBody) -> Result<Vec<u8>, NetError> {
    let mut payload = Vec::new();
    match body {
        MessageBody::PoseFix { x_mm, y_mm, theta_urad, capture_time_us } => {
            check_mm(*x_mm, "pose x")?;
            check_mm(*y_mm, "pose y")?;
            payload.extend_from_slice(&x_mm.to_le_bytes());
            payload.extend_from_slice(&y_mm.to_le_bytes());
            payload.extend_from_slice(&theta_urad.to_le_bytes());
            payload.extend_from_slice(&capture_time_us.to_le_bytes());
        }
        MessageBody::OdometryReport { v_mms, omega_mrads, dt_us } => {
            payload.extend_from_slice(&v_mms.to_le_bytes());
            payload.extend_from_slice(&omega_mrads.to_le_bytes());
            payload.extend_from_slice(&dt_us.to_le_bytes());
        }
        MessageBody::WaypointPlan { points } => {
            if points.is_empty() || points.len() > MAX_WAYPOINTS {
                return Err(NetError::RangeOverflow("waypoint count"));
            }
            payload.push(points.len() as u8);
            for p in points {
                check_mm(p.x_mm, "waypoint x")?;
                check_mm(p.y_mm, "waypoint y")?;
                payload.extend_from_slice(&p.x_mm.to_le_bytes());
                payload.extend_from_slice(&p.y_mm.to_le_bytes());
                payload.extend_from_slice(&p.v_mms.to_le_bytes());
            }
        }
        MessageBody::StatusReport { mode, fsm_state, battery_pct } => {
            payload.extend_from_slice(&[*mode, *fsm_state, *battery_pct]);
        }
        MessageBody::Heartbeat | MessageBody::StopCommand => {}
        MessageBody::TaskAssign { task_id, a_station, b_station } => {
            payload.extend_from_slice(&task_id.to_le_bytes());
            payload.extend_from_slice(&a_station.to_le_bytes());
            payload.extend_from_slice(&b_station.to_le_bytes());
        }
    }
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(body.msg_type());
    out.extend_from_slice(&header.robot_id.to_le_bytes());
    out.extend_from_slice(&header.seq.to_le_bytes());
    out.extend_from_slice(&header.timestamp_us.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u16).to_le_bytes());
    out.extend_from_slice(&payload);
    debug_assert!(out.len() <= MAX_DATAGRAM);
    Ok(out)
}

fn le_u16(b: &[u8]) -> u16 {
    u16::from_le_bytes([b[0], b[1]])
}
fn le_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes([b[0], b[1], b[2], b[3]])
}
fn le_u64(b: &[u8]) -> u64 {
    u64::from_le_bytes(b[..8].try_into().unwrap())
}
fn le_i16(b: &[u8]) -> i16 {
    i16::from_le_bytes([b[0], b[1]])
}
fn le_i32(b: &[u8]) -> i32 {
    i32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

/// Total over arbitrary bytes: any input yields a message or a typed error.
pub fn decode(bytes: &[u8]) -> Result<(Header, MessageBody), NetError> {
    if bytes.len() < 4 {
        return Err(NetError::Truncated { needed: HEADER_LEN, got: bytes.len() });
    }
    if bytes[..4] != MAGIC {
        return Err(NetError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(NetError::Truncated { needed: HEADER_LEN, got: bytes.len() });
    }
    if bytes[4] != VERSION {
        return Err(NetError::UnsupportedVersion(bytes[4]));
    }
    let msg_type = bytes[5];
    let header = Header {
        robot_id: le_u16(&bytes[6..8]),
        seq: le_u32(&bytes[8..12]),
        timestamp_us: le_u64(&bytes[12..20]),
    };
    let declared = le_u16(&bytes[20..22]) as usize;
    if declared > MAX_DATAGRAM - HEADER_LEN {
        return Err(NetError::LengthMismatch { declared, got: bytes.len() - HEADER_LEN });
    }
    if bytes.len() < HEADER_LEN + declared {
        return Err(NetError::Truncated { needed: HEADER_LEN + declared, got: bytes.len() });
    }
    if bytes.len() > HEADER_LEN + declared {
        return Err(NetError::LengthMismatch { declared, got: bytes.len() - HEADER_LEN });
    }
    let p = &bytes[HEADER_LEN..];
    let expect = |n: usize| -> Result<(), NetError> {
        if p.len() == n {
            Ok(())
        } else {
            Err(NetError::LengthMismatch { declared: n, got: p.len() })
        }
    };
    let body = match msg_type {
        1 => {
            expect(20)?;
            MessageBody::PoseFix {
                x_mm: le_i32(&p[0..4]),
                y_mm: le_i32(&p[4..8]),
                theta_urad: le_i32(&p[8..12]),
                capture_time_us: le_u64(&p[12..20]),
            }
        }
        2 => {
            expect(8)?;
            MessageBody::OdometryReport {
                v_mms: le_i16(&p[0..2]),
                omega_mrads: le_i16(&p[2..4]),
                dt_us: le_u32(&p[4..8]),
            }
        }
        3 => {
            if p.is_empty() {
                return Err(NetError::LengthMismatch { declared: 1, got: 0 });
            }
            let count = p[0] as usize;
            if count == 0 || count > MAX_WAYPOINTS || p.len() != 1 + 10 * count {
                return Err(NetError::LengthMismatch { declared: 1 + 10 * count, got: p.len() });
            }
            let points = (0..count)
                .map(|i| {
                    let q = &p[1 + 10 * i..];
                    WirePoint { x_mm: le_i32(&q[0..4]), y_mm: le_i32(&q[4..8]), v_mms: le_i16(&q[8..10]) }
                })
                .collect();
            MessageBody::WaypointPlan { points }
        }
        4 => {
            expect(3)?;
            MessageBody::StatusReport { mode: p[0], fsm_state: p[1], battery_pct: p[2] }
        }
        5 => {
            expect(0)?;
            MessageBody::Heartbeat
        }
        6 => {
            expect(8)?;
            MessageBody::TaskAssign {
                task_id: le_u32(&p[0..4]),
                a_station: le_u16(&p[4..6]),
                b_station: le_u16(&p[6..8]),
            }
        }
        7 => {
            expect(0)?;
            MessageBody::StopCommand
        }
        t => return Err(NetError::UnknownMsgType(t)),
    };
    Ok((header, body))
}

/// Quantize a pose to wire fixed point: millimeters and microradians.
/// Round-tripping loses at most half of one quantum on each axis.
pub fn pose_to_fix(x: f64, y: f64, theta: f64, capture_time_us: u64) -> Result<MessageBody, NetError> {
    let to_mm = |v: f64, what: &'static str| -> Result<i32, NetError> {
        let mm = (v * 1000.0).round();
        if !mm.is_finite() || mm.abs() > MAX_ABS_MM as f64 {
            return Err(NetError::RangeOverflow(what));
        }
        Ok(mm as i32)
    };
    let theta_urad = (crate::geometry::normalize_angle(theta) * 1e6).round() as i32;
    Ok(MessageBody::PoseFix {
        x_mm: to_mm(x, "pose x")?,
        y_mm: to_mm(y, "pose y")?,
        theta_urad,
        capture_time_us,
    })
}

pub fn fix_to_pose(x_mm: i32, y_mm: i32, theta_urad: i32) -> (f64, f64, f64) {
    (x_mm as f64 / 1000.0, y_mm as f64 / 1000.0, theta_urad as f64 / 1e6)
}

#[derive(Debug, Clone)]
struct Pending {
    deliver_at: f64,
    seq: u64,
    bytes: Vec<u8>,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Pending {}
impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed so the BinaryHeap pops the earliest delivery first.
        other
            .deliver_at
            .total_cmp(&self.deliver_at)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// One direction of one wireless channel: latency, jitter, loss, and
/// optional reordering. Monotonicity (`allow_reorder = false`) is enforced
/// per link instance, so use one instance per sender.
#[derive(Debug, Clone)]
pub struct LinkModel {
    pub base_latency: f64,
    pub jitter: f64,
    pub drop_prob: f64,
    pub allow_reorder: bool,
    rng: ChaCha8Rng,
    queue: BinaryHeap<Pending>,
    next_seq: u64,
    last_scheduled: f64,
    pub dropped: u64,
}

impl LinkModel {
    pub fn new(
        base_latency: f64,
        jitter: f64,
        drop_prob: f64,
        allow_reorder: bool,
        rng: ChaCha8Rng,
    ) -> Self {
        assert!(base_latency >= 0.0 && jitter >= 0.0, "negative link timing");
        assert!((0.0..1.0).contains(&drop_prob) || drop_prob == 1.0, "drop_prob outside [0,1]");
        Self {
            base_latency,
            jitter,
            drop_prob,
            allow_reorder,
            rng,
            queue: BinaryHeap::new(),
            next_seq: 0,
            last_scheduled: f64::NEG_INFINITY,
        dropped: 0,
        }
    }

    pub fn send(&mut self, datagram: Vec<u8>, now: f64) {
        if self.drop_prob > 0.0 && self.rng.gen_bool(self.drop_prob) {
            self.dropped += 1;
            return;
        }
        let noise = if self.jitter > 0.0 {
            self.rng.gen_range(-self.jitter..=self.jitter)
        } else {
            0.0
        };
        let mut at = (now + self.base_latency + noise).max(now);
        if !self.allow_reorder {
            at = at.max(self.last_scheduled);
            self.last_scheduled = at;
        }
        self.queue.push(Pending { deliver_at: at, seq: self.next_seq, bytes: datagram });
        self.next_seq += 1;
    }

    /// Everything due by `now`, earliest first; FIFO within equal times.
    pub fn poll(&mut self, now: f64) -> Vec<Vec<u8>> {
        let mut out = Vec::new();
        while let Some(p) = self.queue.peek() {
            if p.deliver_at > now {
                break;
            }
            out.push(self.queue.pop().unwrap().bytes);
        }
        out
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }
}

/// Cloud-side key/value blackboard; every write carries its source
/// timestamp and the freshest write wins, ties going to the later arrival.
#[derive(Debug, Clone, Default)]
pub struct SharedStateStore {
    map: BTreeMap<String, (Vec<u8>, u64)>,
}

impl SharedStateStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&mut self, key: &str, value: Vec<u8>, timestamp_us: u64) {
        match self.map.get(key) {
            Some(&(_, existing)) if existing > timestamp_us => {}
            _ => {
                self.map.insert(key.to_string(), (value, timestamp_us));
            }
        }
    }

    pub fn get(&self, key: &str) -> Result<(&[u8], u64), NetError> {
        self.map
            .get(key)
            .map(|(v, t)| (v.as_slice(), *t))
            .ok_or(NetError::KeyMissing)
    }

    /// Consistent point-in-time copy, detached from later writes.
    pub fn snapshot(&self) -> BTreeMap<String, (Vec<u8>, u64)> {
        self.map.clone()
    }
}

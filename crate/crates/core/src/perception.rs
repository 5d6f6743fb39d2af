//! Floor occupancy pipeline: simulated per-camera binary segmentation,
//! homography projection onto a shared grid, ownership-based fusion into one
//! global map, and corridor sweeps over it.
//!
//! Pixel noise comes from a keyed counter generator rather than a sequential
//! stream: every (camera, frame, pixel) triple has a value that does not
//! depend on evaluation order, so a consumer may materialize whole frames or
//! evaluate single cells lazily and see bit-identical results.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{CameraRig, SEG_HEIGHT, SEG_WIDTH};
use crate::geom2d::{project_on_segment, segment_distance, P2};
use crate::geometry::GeometryError;
use crate::world::{ground_truth_occupancy, WorldState};
use crate::Homography;

#[derive(Debug, Error)]
pub enum PerceptionError {
    #[error("partial grids and ownership must share one grid spec")]
    MismatchedSpec,
    #[error("grid file header: {0}")]
    BadHeader(String),
    #[error("grid file payload: {0}")]
    BadPayload(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Cell {
    Free = 0,
    Occupied = 1,
    Unknown = 2,
}

impl Cell {
    pub fn from_bits(b: u8) -> Option<Cell> {
        match b {
            0 => Some(Cell::Free),
            1 => Some(Cell::Occupied),
            2 => Some(Cell::Unknown),
            _ => None,
        }
    }
}

/// Geometry of a dense floor grid. `origin` is the world position of the
/// lower-left corner of cell (0, 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: (f64, f64),
    pub cell_size: f64,
    pub width: u32,
    pub height: u32,
}

impl GridSpec {
    /// Desk-scale guard: dense grids beyond this are a configuration error.
    pub const MAX_CELLS: u64 = 40_000_000;

    pub fn validate(&self) -> Result<(), PerceptionError> {
        if self.cell_size <= 0.0 {
            return Err(PerceptionError::BadHeader("cell_size must be positive".into()));
        }
        if (self.width as u64) * (self.height as u64) > Self::MAX_CELLS {
            return Err(PerceptionError::BadHeader("grid exceeds the desk-scale cell bound".into()));
        }
        Ok(())
    }

    /// Smallest grid with this cell size whose cells cover [min, max].
    pub fn covering(min: P2, max: P2, cell_size: f64) -> Self {
        let width = ((max.x - min.x) / cell_size).ceil().max(1.0) as u32;
        let height = ((max.y - min.y) / cell_size).ceil().max(1.0) as u32;
        Self { origin: (min.x, min.y), cell_size, width, height }
    }

    pub fn len(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, ix: u32, iy: u32) -> usize {
        debug_assert!(ix < self.width && iy < self.height);
        iy as usize * self.width as usize + ix as usize
    }

    pub fn cell_of_point(&self, p: P2) -> Option<(u32, u32)> {
        let fx = (p.x - self.origin.0) / self.cell_size;
        let fy = (p.y - self.origin.1) / self.cell_size;
        if fx < 0.0 || fy < 0.0 {
            return None;
        }
        let (ix, iy) = (fx.floor() as u64, fy.floor() as u64);
        if ix < self.width as u64 && iy < self.height as u64 {
            Some((ix as u32, iy as u32))
        } else {
            None
        }
    }

    pub fn center(&self, ix: u32, iy: u32) -> P2 {
        P2::new(
            self.origin.0 + (ix as f64 + 0.5) * self.cell_size,
            self.origin.1 + (iy as f64 + 0.5) * self.cell_size,
        )
    }

    /// Inclusive cell index ranges intersecting the bbox, None if disjoint.
    pub fn cell_range(&self, min: P2, max: P2) -> Option<((u32, u32), (u32, u32))> {
        let lo_x = ((min.x - self.origin.0) / self.cell_size).floor().max(0.0);
        let lo_y = ((min.y - self.origin.1) / self.cell_size).floor().max(0.0);
        let hi_x = ((max.x - self.origin.0) / self.cell_size).floor().min(self.width as f64 - 1.0);
        let hi_y = ((max.y - self.origin.1) / self.cell_size).floor().min(self.height as f64 - 1.0);
        if lo_x > hi_x || lo_y > hi_y {
            return None;
        }
        Some(((lo_x as u32, hi_x as u32), (lo_y as u32, hi_y as u32)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub spec: GridSpec,
    pub cells: Vec<Cell>,
    pub stamp: f64,
}

impl OccupancyGrid {
    pub fn filled(spec: GridSpec, cell: Cell, stamp: f64) -> Self {
        let n = spec.len();
        Self { spec, cells: vec![cell; n], stamp }
    }

    pub fn get(&self, ix: u32, iy: u32) -> Cell {
        self.cells[self.spec.index(ix, iy)]
    }

    pub fn set(&mut self, ix: u32, iy: u32, cell: Cell) {
        let i = self.spec.index(ix, iy);
        self.cells[i] = cell;
    }
}

/// Read access to an occupancy field. Implemented by the dense grid and by
/// lazy views that compute cells on demand; corridor sweeps only need this.
pub trait OccupancyQuery {
    fn spec(&self) -> &GridSpec;
    fn stamp(&self) -> f64;
    /// State of an in-bounds cell.
    fn cell(&self, ix: u32, iy: u32) -> Cell;

    /// State at a world point; outside the grid is Unknown.
    fn cell_at_point(&self, p: P2) -> Cell {
        match self.spec().cell_of_point(p) {
            Some((ix, iy)) => self.cell(ix, iy),
            None => Cell::Unknown,
        }
    }
}

impl OccupancyQuery for OccupancyGrid {
    fn spec(&self) -> &GridSpec {
        &self.spec
    }

    fn stamp(&self) -> f64 {
        self.stamp
    }

    fn cell(&self, ix: u32, iy: u32) -> Cell {
        self.get(ix, iy)
    }
}

/// One camera's binary mask, pinned to the low-resolution stream size.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationFrame {
    pub camera_id: u8,
    pub capture_time: f64,
    bits: Vec<u64>,
}

impl SegmentationFrame {
    pub const WIDTH: u32 = SEG_WIDTH;
    pub const HEIGHT: u32 = SEG_HEIGHT;

    pub fn new_empty(camera_id: u8, capture_time: f64) -> Self {
        let words = (Self::WIDTH as usize * Self::HEIGHT as usize).div_ceil(64);
        Self { camera_id, capture_time, bits: vec![0; words] }
    }

    pub fn get(&self, u: u32, v: u32) -> bool {
        let i = Self::pixel_index(u, v) as usize;
        (self.bits[i / 64] >> (i % 64)) & 1 == 1
    }

    pub fn set(&mut self, u: u32, v: u32, occupied: bool) {
        let i = Self::pixel_index(u, v) as usize;
        if occupied {
            self.bits[i / 64] |= 1 << (i % 64);
        } else {
            self.bits[i / 64] &= !(1 << (i % 64));
        }
    }

    pub fn pixel_index(u: u32, v: u32) -> u32 {
        debug_assert!(u < Self::WIDTH && v < Self::HEIGHT);
        v * Self::WIDTH + u
    }

    pub fn count_occupied(&self) -> u32 {
        self.bits.iter().map(|w| w.count_ones()).sum()
    }
}

/// Keyed per-pixel noise source for one frame. Successive frames use fresh
/// keys; values are reproducible and independent of query order.
#[derive(Debug, Clone, Copy)]
pub struct PixelNoise {
    key: u64,
}

impl PixelNoise {
    pub fn for_frame(stream_seed: u64, camera_id: u8, frame_index: u64) -> Self {
        let key = mix64(mix64(mix64(stream_seed) ^ camera_id as u64) ^ frame_index);
        Self { key }
    }

    /// Uniform draw in [0, 1) for one pixel of this frame.
    pub fn uniform(&self, pixel_index: u32) -> f64 {
        let z = mix64(self.key ^ ((pixel_index as u64) << 1 | 1));
        (z >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Oracle-plus-noise segmentation against an already rasterized truth grid.
///
/// A pixel's true label is whether its center's ground projection lands in
/// an occupied truth cell (pixels projecting off the grid count as free);
/// each pixel then flips independently at fp_rate/fn_rate. `clock` is the
/// frame's nominal tick; the stamp adds the camera's skew.
pub fn simulate_segmentation_from_truth(
    truth: &OccupancyGrid,
    camera: &CameraRig,
    fp_rate: f64,
    fn_rate: f64,
    noise: &PixelNoise,
    clock: f64,
) -> SegmentationFrame {
    debug_assert!((0.0..=1.0).contains(&fp_rate) && (0.0..=1.0).contains(&fn_rate));
    let mut frame = SegmentationFrame::new_empty(camera.id, clock + camera.skew);
    for v in 0..SegmentationFrame::HEIGHT {
        for u in 0..SegmentationFrame::WIDTH {
            let occupied = pixel_label(truth, camera, fp_rate, fn_rate, noise, u, v);
            if occupied {
                frame.set(u, v, true);
            }
        }
    }
    frame
}

/// Single-pixel evaluation shared by frame materialization and lazy views.
pub fn pixel_label(
    truth: &impl OccupancyQuery,
    camera: &CameraRig,
    fp_rate: f64,
    fn_rate: f64,
    noise: &PixelNoise,
    u: u32,
    v: u32,
) -> bool {
    let base = match camera.floor_hom_low.pixel_to_ground((u as f64 + 0.5, v as f64 + 0.5)) {
        Ok((x, y)) => match truth.spec().cell_of_point(P2::new(x, y)) {
            Some((ix, iy)) => truth.cell(ix, iy) == Cell::Occupied,
            None => false,
        },
        Err(_) => false,
    };
    let draw = noise.uniform(SegmentationFrame::pixel_index(u, v));
    if base {
        !(draw < fn_rate)
    } else {
        draw < fp_rate
    }
}

/// Segment the current world through one camera: rasterizes ground truth on
/// `spec`, then labels every pixel and applies the noise flips.
pub fn simulate_segmentation(
    world: &WorldState,
    spec: &GridSpec,
    camera: &CameraRig,
    fp_rate: f64,
    fn_rate: f64,
    noise: &PixelNoise,
) -> SegmentationFrame {
    let truth = ground_truth_occupancy(world, spec);
    simulate_segmentation_from_truth(&truth, camera, fp_rate, fn_rate, noise, world.clock)
}

/// Cells of a grid whose centers land on a camera's low-resolution sensor.
#[derive(Debug, Clone)]
pub struct CameraCoverage {
    pub camera_id: u8,
    pub cells: Vec<u32>,
}

pub fn build_coverage(camera: &CameraRig, spec: &GridSpec) -> CameraCoverage {
    let mut cells = Vec::new();
    for iy in 0..spec.height {
        for ix in 0..spec.width {
            if camera.covers_floor_point(spec.center(ix, iy)) {
                cells.push(spec.index(ix, iy) as u32);
            }
        }
    }
    CameraCoverage { camera_id: camera.id, cells }
}

/// Back-project a mask onto the grid: each covered cell takes the mask value
/// at the pixel its center maps to; everything else is Unknown.
pub fn project_mask_to_grid(
    frame: &SegmentationFrame,
    floor_homography: &Homography,
    spec: &GridSpec,
    coverage: &CameraCoverage,
) -> Result<OccupancyGrid, GeometryError> {
    let mut out = OccupancyGrid::filled(spec.clone(), Cell::Unknown, frame.capture_time);
    for &cell in &coverage.cells {
        let ix = cell % spec.width;
        let iy = cell / spec.width;
        let (u, v) = floor_homography.ground_to_pixel((spec.center(ix, iy).x, spec.center(ix, iy).y))?;
        let (pu, pv) = (u.floor(), v.floor());
        if pu < 0.0
            || pv < 0.0
            || pu >= SegmentationFrame::WIDTH as f64
            || pv >= SegmentationFrame::HEIGHT as f64
        {
            continue;
        }
        let occupied = frame.get(pu as u32, pv as u32);
        out.cells[cell as usize] = if occupied { Cell::Occupied } else { Cell::Free };
    }
    Ok(out)
}

/// Which camera each cell trusts: the covering camera whose ground position
/// is horizontally closest to the cell center, ties to the lowest id.
#[derive(Debug, Clone)]
pub struct CameraOwnership {
    pub spec: GridSpec,
    owner: Vec<u8>,
}

const NO_OWNER: u8 = u8::MAX;

impl CameraOwnership {
    pub fn build(spec: &GridSpec, cameras: &[CameraRig]) -> Self {
        let mut owner = vec![NO_OWNER; spec.len()];
        for iy in 0..spec.height {
            for ix in 0..spec.width {
                let c = spec.center(ix, iy);
                let mut best: Option<(f64, u8)> = None;
                for cam in cameras {
                    debug_assert_ne!(cam.id, NO_OWNER, "camera id 255 is reserved");
                    if !cam.covers_floor_point(c) {
                        continue;
                    }
                    let d = (cam.ground_position() - c).norm();
                    let key = (d, cam.id);
                    if best.map_or(true, |b| key < b) {
                        best = Some(key);
                    }
                }
                if let Some((_, id)) = best {
                    owner[spec.index(ix, iy)] = id;
                }
            }
        }
        Self { spec: spec.clone(), owner }
    }

    pub fn owner(&self, ix: u32, iy: u32) -> Option<u8> {
        let o = self.owner[self.spec.index(ix, iy)];
        (o != NO_OWNER).then_some(o)
    }

    pub fn owner_by_index(&self, cell: usize) -> Option<u8> {
        let o = self.owner[cell];
        (o != NO_OWNER).then_some(o)
    }
}

/// Fuse per-camera partial grids into the global map: every cell copies its
/// owning camera's value; ownerless cells (or cells whose owner produced no
/// partial) are Unknown. Stamp is the newest partial capture time.
pub fn fuse_global(
    partials: &BTreeMap<u8, OccupancyGrid>,
    ownership: &CameraOwnership,
) -> Result<OccupancyGrid, PerceptionError> {
    for p in partials.values() {
        if p.spec != ownership.spec {
            return Err(PerceptionError::MismatchedSpec);
        }
    }
    let stamp = partials.values().map(|p| p.stamp).fold(f64::NEG_INFINITY, f64::max);
    let mut out = OccupancyGrid::filled(ownership.spec.clone(), Cell::Unknown, stamp);
    let mut table: [Option<&OccupancyGrid>; 256] = [None; 256];
    for (&id, grid) in partials {
        table[id as usize] = Some(grid);
    }
    for i in 0..out.cells.len() {
        if let Some(id) = ownership.owner_by_index(i) {
            if let Some(partial) = table[id as usize] {
                out.cells[i] = partial.cells[i];
            }
        }
    }
    Ok(out)
}

/// Sweep a corridor of `half_width` along the path from `from_arclength` for
/// `length` meters. A cell blocks when Occupied (or Unknown, if
/// `unknown_blocks`) and its center lies within half_width of the swept
/// polyline piece. Returns (clear, first blockage arclength).
pub fn corridor_clear(
    grid: &impl OccupancyQuery,
    polyline: &[P2],
    cumulative: &[f64],
    from_arclength: f64,
    length: f64,
    half_width: f64,
    unknown_blocks: bool,
) -> (bool, Option<f64>) {
    debug_assert!(half_width > 0.0);
    debug_assert_eq!(polyline.len(), cumulative.len());
    if polyline.len() < 2 || length <= 0.0 {
        return (true, None);
    }
    let total = *cumulative.last().unwrap();
    let s0 = from_arclength.clamp(0.0, total);
    let s1 = (from_arclength + length).clamp(0.0, total);
    if s1 <= s0 {
        return (true, None);
    }

    let spec = grid.spec();
    let pad = half_width + spec.cell_size;
    // Walk in bounded chunks so bbox scans stay tight on long segments, and
    // stop as soon as no later chunk can improve the first blockage.
    const CHUNK: f64 = 2.0;
    let mut best: Option<f64> = None;
    'segments: for i in 0..polyline.len() - 1 {
        let (sa, sb) = (cumulative[i], cumulative[i + 1]);
        if sb <= s0 || sa >= s1 || sb - sa < 1e-12 {
            continue;
        }
        let dir = (polyline[i + 1] - polyline[i]) / (sb - sa);
        let lo = s0.max(sa);
        let hi = s1.min(sb);
        let mut c0 = lo;
        while c0 < hi {
            if let Some(b) = best {
                if c0 >= b {
                    break 'segments;
                }
            }
            let c1 = (c0 + CHUNK).min(hi);
            let a = polyline[i] + dir * (c0 - sa);
            let b = polyline[i] + dir * (c1 - sa);
            let min = P2::new(a.x.min(b.x) - pad, a.y.min(b.y) - pad);
            let max = P2::new(a.x.max(b.x) + pad, a.y.max(b.y) + pad);
            if let Some(((x0, x1), (y0, y1))) = spec.cell_range(min, max) {
                for iy in y0..=y1 {
                    for ix in x0..=x1 {
                        let center = spec.center(ix, iy);
                        if segment_distance(center, a, b) > half_width {
                            continue;
                        }
                        let cell = grid.cell(ix, iy);
                        let blocks = cell == Cell::Occupied || (unknown_blocks && cell == Cell::Unknown);
                        if !blocks {
                            continue;
                        }
                        let (t, _) = project_on_segment(center, a, b);
                        let s = (c0 + t * (c1 - c0)).clamp(s0, s1);
                        if best.map_or(true, |b| s < b) {
                            best = Some(s);
                        }
                    }
                }
            }
            c0 = c1;
        }
    }
    (best.is_none(), best)
}

const GRID_MAGIC: &str = "occupancy-grid v1";

/// Write a grid as a text header plus base64 payload, 2 bits per cell in
/// row-major order, least-significant pair first within each byte.
pub fn write_grid<W: Write>(grid: &OccupancyGrid, w: &mut W) -> io::Result<()> {
    writeln!(w, "{GRID_MAGIC}")?;
    writeln!(w, "origin {} {}", grid.spec.origin.0, grid.spec.origin.1)?;
    writeln!(w, "cell_size {}", grid.spec.cell_size)?;
    writeln!(w, "size {} {}", grid.spec.width, grid.spec.height)?;
    writeln!(w, "stamp {}", grid.stamp)?;
    let mut bytes = vec![0u8; grid.cells.len().div_ceil(4)];
    for (i, &c) in grid.cells.iter().enumerate() {
        bytes[i / 4] |= (c as u8) << (2 * (i % 4));
    }
    writeln!(w, "data {}", BASE64.encode(&bytes))
}

pub fn read_grid<R: BufRead>(r: &mut R) -> Result<OccupancyGrid, PerceptionError> {
    let mut lines = r.lines();
    let mut next = |what: &str| -> Result<String, PerceptionError> {
        lines
            .next()
            .transpose()?
            .ok_or_else(|| PerceptionError::BadHeader(format!("missing {what} line")))
    };
    let magic = next("magic")?;
    if magic.trim() != GRID_MAGIC {
        return Err(PerceptionError::BadHeader(format!("bad magic {magic:?}")));
    }
    let origin = parse_fields::<f64>(&next("origin")?, "origin", 2)?;
    let cell_size = parse_fields::<f64>(&next("cell_size")?, "cell_size", 1)?[0];
    let size = parse_fields::<u32>(&next("size")?, "size", 2)?;
    let stamp = parse_fields::<f64>(&next("stamp")?, "stamp", 1)?[0];
    let data_line = next("data")?;
    let payload = data_line
        .strip_prefix("data ")
        .ok_or_else(|| PerceptionError::BadHeader("missing data prefix".into()))?;

    let spec = GridSpec { origin: (origin[0], origin[1]), cell_size, width: size[0], height: size[1] };
    spec.validate()?;
    let bytes = BASE64
        .decode(payload.trim())
        .map_err(|e| PerceptionError::BadPayload(format!("base64: {e}")))?;
    let n = spec.len();
    if bytes.len() != n.div_ceil(4) {
        return Err(PerceptionError::BadPayload(format!(
            "expected {} payload bytes, got {}",
            n.div_ceil(4),
            bytes.len()
        )));
    }
    let mut cells = Vec::with_capacity(n);
    for i in 0..n {
        let bits = (bytes[i / 4] >> (2 * (i % 4))) & 0b11;
        cells.push(
            Cell::from_bits(bits)
                .ok_or_else(|| PerceptionError::BadPayload(format!("invalid cell value {bits} at {i}")))?,
        );
    }
    // Padding bits past the last cell must be zero.
    for i in n..bytes.len() * 4 {
        if (bytes[i / 4] >> (2 * (i % 4))) & 0b11 != 0 {
            return Err(PerceptionError::BadPayload("nonzero padding".into()));
        }
    }
    Ok(OccupancyGrid { spec, cells, stamp })
}

fn parse_fields<T: std::str::FromStr>(
    line: &str,
    key: &str,
    count: usize,
) -> Result<Vec<T>, PerceptionError> {
    let rest = line
        .strip_prefix(key)
        .ok_or_else(|| PerceptionError::BadHeader(format!("expected {key} line, got {line:?}")))?;
    let vals: Result<Vec<T>, _> = rest.split_whitespace().map(str::parse).collect();
    match vals {
        Ok(v) if v.len() == count => Ok(v),
        Ok(v) => Err(PerceptionError::BadHeader(format!(
            "{key}: expected {count} fields, got {}",
            v.len()
        ))),
        Err(_) => Err(PerceptionError::BadHeader(format!("{key}: unparseable fields in {line:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::CameraRig;
    use crate::geometry::CameraExtrinsics;
    use crate::world::{FloorPlan, Obstacle, RoadNetwork, WorldState};
    use crate::Intrinsics;
    use nalgebra::Vector3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn test_spec() -> GridSpec {
        GridSpec { origin: (-8.0, -4.5), cell_size: 0.05, width: 320, height: 180 }
    }

    fn overhead_rig(id: u8, x: f64, y: f64) -> CameraRig {
        // 16 m x 9 m footprint from 8 m up at the low resolution.
        let intr = Intrinsics { fx: 1920.0, fy: 1920.0, cx: 1920.0, cy: 1080.0, width: 3840, height: 2160 };
        let extr = CameraExtrinsics::top_down(Vector3::new(x, y, 8.0), 0.0);
        CameraRig::new(id, intr, extr, &[]).unwrap()
    }

    fn empty_world() -> WorldState {
        WorldState::new(
            FloorPlan::empty(P2::new(-20.0, -20.0), P2::new(20.0, 20.0)),
            RoadNetwork::default(),
            vec![],
            vec![],
            ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap()
    }

    fn block_world(cx: f64, cy: f64, half: f64) -> WorldState {
        let mut w = empty_world();
        w.floorplan.obstacles.push(Obstacle {
            polygon: vec![
                P2::new(cx - half, cy - half),
                P2::new(cx + half, cy - half),
                P2::new(cx + half, cy + half),
                P2::new(cx - half, cy + half),
            ],
            height: 2.0,
        });
        w
    }

    #[test]
    fn keyed_noise_is_order_independent_and_keyed() {
        let n = PixelNoise::for_frame(42, 3, 17);
        let forward: Vec<f64> = (0..100).map(|i| n.uniform(i)).collect();
        let backward: Vec<f64> = (0..100).rev().map(|i| n.uniform(i)).collect();
        for (i, b) in backward.iter().rev().enumerate() {
            assert_eq!(forward[i].to_bits(), b.to_bits());
        }
        let other = PixelNoise::for_frame(42, 3, 18);
        assert_ne!(n.uniform(0).to_bits(), other.uniform(0).to_bits());
        let mean: f64 = forward.iter().sum::<f64>() / 100.0;
        assert!((mean - 0.5).abs() < 0.15);
    }

    #[test]
    fn empty_scene_zero_rates_gives_empty_mask() {
        let w = empty_world();
        let cam = overhead_rig(0, 0.0, 0.0);
        let noise = PixelNoise::for_frame(1, 0, 0);
        let frame = simulate_segmentation(&w, &test_spec(), &cam, 0.0, 0.0, &noise);
        assert_eq!(frame.count_occupied(), 0);
    }

    #[test]
    fn certain_false_positives_fill_the_mask() {
        let w = empty_world();
        let cam = overhead_rig(0, 0.0, 0.0);
        let noise = PixelNoise::for_frame(1, 0, 0);
        let frame = simulate_segmentation(&w, &test_spec(), &cam, 1.0, 0.0, &noise);
        assert_eq!(frame.count_occupied(), SegmentationFrame::WIDTH * SegmentationFrame::HEIGHT);
    }

    #[test]
    fn false_positive_fraction_is_binomial() {
        let w = empty_world();
        let cam = overhead_rig(0, 0.0, 0.0);
        let n_px = (SegmentationFrame::WIDTH * SegmentationFrame::HEIGHT) as f64;
        let p = 0.01;
        let sigma = (p * (1.0 - p) / n_px).sqrt();
        for frame_index in 0..5 {
            let noise = PixelNoise::for_frame(99, 0, frame_index);
            let frame = simulate_segmentation(&w, &test_spec(), &cam, p, 0.0, &noise);
            let frac = frame.count_occupied() as f64 / n_px;
            assert!((frac - p).abs() <= 3.0 * sigma, "fraction {frac} out of band on frame {frame_index}");
        }
    }

    #[test]
    fn capture_time_carries_camera_skew() {
        let mut w = empty_world();
        w.clock = 12.3;
        let cam = overhead_rig(0, 0.0, 0.0).with_skew(0.04);
        let noise = PixelNoise::for_frame(1, 0, 0);
        let frame = simulate_segmentation(&w, &test_spec(), &cam, 0.0, 0.0, &noise);
        assert!((frame.capture_time - 12.34).abs() < 1e-12);
    }

    #[test]
    fn projection_marks_covered_cells_and_leaves_rest_unknown() {
        let spec = GridSpec { origin: (-12.0, -6.0), cell_size: 0.05, width: 480, height: 240 };
        let cam = overhead_rig(0, 0.0, 0.0);
        let coverage = build_coverage(&cam, &spec);
        assert!(!coverage.cells.is_empty());
        assert!(coverage.cells.len() < spec.len(), "coverage should not fill a grid wider than the fov");
        let frame = SegmentationFrame::new_empty(0, 1.0);
        let grid = project_mask_to_grid(&frame, &cam.floor_hom_low, &spec, &coverage).unwrap();
        let mut covered = vec![false; spec.len()];
        for &c in &coverage.cells {
            covered[c as usize] = true;
        }
        for (i, &c) in grid.cells.iter().enumerate() {
            assert_eq!(c, if covered[i] { Cell::Free } else { Cell::Unknown });
        }
        assert_eq!(grid.stamp, 1.0);
    }

    #[test]
    fn single_occupied_pixel_projects_to_its_footprint_cells() {
        let spec = test_spec();
        let cam = overhead_rig(0, 0.0, 0.0);
        let coverage = build_coverage(&cam, &spec);
        // One pixel covers 2.5 cm of floor, half a cell, so not every pixel
        // contains a cell center; a 2x2 pixel block spans one full cell and
        // must hit at least one.
        let mut hits = 0usize;
        for (u, v) in [(250u32, 100u32), (251, 100), (250, 101), (251, 101)] {
            let mut frame = SegmentationFrame::new_empty(0, 0.0);
            frame.set(u, v, true);
            let grid = project_mask_to_grid(&frame, &cam.floor_hom_low, &spec, &coverage).unwrap();
            let expected = amrsim_oracles::projection::cells_hitting_pixel(
                |x, y| cam.floor_hom_low.ground_to_pixel((x, y)).ok(),
                (spec.origin.0, spec.origin.1),
                spec.cell_size,
                (spec.width, spec.height),
                (u, v),
            );
            for iy in 0..spec.height {
                for ix in 0..spec.width {
                    let occ = grid.get(ix, iy) == Cell::Occupied;
                    assert_eq!(occ, expected.contains(&(ix, iy)), "pixel ({u},{v}) cell ({ix},{iy})");
                }
            }
            hits += expected.len();
        }
        assert!(hits > 0, "a full-cell pixel block covers at least one cell center");
    }

    #[test]
    fn ownership_partitions_and_breaks_ties_low() {
        let spec = GridSpec { origin: (-10.0, -4.0), cell_size: 0.05, width: 400, height: 160 };
        let cams = vec![overhead_rig(1, -4.0, 0.0), overhead_rig(0, 4.0, 0.0)];
        let own = CameraOwnership::build(&spec, &cams);
        for iy in 0..spec.height {
            for ix in 0..spec.width {
                let c = spec.center(ix, iy);
                let covering: Vec<u8> =
                    cams.iter().filter(|cam| cam.covers_floor_point(c)).map(|cam| cam.id).collect();
                match own.owner(ix, iy) {
                    None => assert!(covering.is_empty()),
                    Some(id) => {
                        assert!(covering.contains(&id));
                        let da = (c - P2::new(-4.0, 0.0)).norm();
                        let db = (c - P2::new(4.0, 0.0)).norm();
                        if covering.len() == 2 {
                            if (da - db).abs() < 1e-12 {
                                assert_eq!(id, 0, "tie must go to the lowest camera id");
                            } else if da < db {
                                assert_eq!(id, 1);
                            } else {
                                assert_eq!(id, 0);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn fusion_copies_owner_and_ignores_non_owner() {
        let spec = GridSpec { origin: (-10.0, -4.0), cell_size: 0.05, width: 400, height: 160 };
        let cams = vec![overhead_rig(0, -4.0, 0.0), overhead_rig(1, 4.0, 0.0)];
        let own = CameraOwnership::build(&spec, &cams);
        // Near camera (owner) says Free, far camera says Occupied in the
        // overlap: owner wins, so the fused cell is Free.
        let mut partials = BTreeMap::new();
        partials.insert(0, OccupancyGrid::filled(spec.clone(), Cell::Free, 1.0));
        partials.insert(1, OccupancyGrid::filled(spec.clone(), Cell::Occupied, 2.0));
        let fused = fuse_global(&partials, &own).unwrap();
        assert_eq!(fused.stamp, 2.0);
        let probe = spec.cell_of_point(P2::new(-3.0, 0.0)).unwrap();
        assert_eq!(own.owner(probe.0, probe.1), Some(0));
        assert_eq!(fused.get(probe.0, probe.1), Cell::Free);
        let probe_far = spec.cell_of_point(P2::new(3.0, 0.0)).unwrap();
        assert_eq!(own.owner(probe_far.0, probe_far.1), Some(1));
        assert_eq!(fused.get(probe_far.0, probe_far.1), Cell::Occupied);
        // Mutating a non-owner's partial never changes an owned cell.
        partials.get_mut(&1).unwrap().cells[spec.index(probe.0, probe.1)] = Cell::Occupied;
        let fused2 = fuse_global(&partials, &own).unwrap();
        assert_eq!(fused2.get(probe.0, probe.1), Cell::Free);
    }

    #[test]
    fn fusion_with_no_cameras_is_all_unknown() {
        let spec = test_spec();
        let own = CameraOwnership::build(&spec, &[]);
        let fused = fuse_global(&BTreeMap::new(), &own).unwrap();
        assert!(fused.cells.iter().all(|&c| c == Cell::Unknown));
    }

    #[test]
    fn fusion_rejects_mismatched_specs() {
        let spec = test_spec();
        let own = CameraOwnership::build(&spec, &[]);
        let mut other = test_spec();
        other.width += 1;
        let mut partials = BTreeMap::new();
        partials.insert(0u8, OccupancyGrid::filled(other, Cell::Free, 0.0));
        assert!(matches!(fuse_global(&partials, &own), Err(PerceptionError::MismatchedSpec)));
    }

    #[test]
    fn single_camera_fusion_equals_its_partial_on_coverage() {
        let spec = test_spec();
        let cam = overhead_rig(0, 0.0, 0.0);
        let own = CameraOwnership::build(&spec, std::slice::from_ref(&cam));
        let coverage = build_coverage(&cam, &spec);
        let w = block_world(1.0, 0.5, 0.5);
        let noise = PixelNoise::for_frame(7, 0, 0);
        let frame = simulate_segmentation(&w, &spec, &cam, 0.0, 0.0, &noise);
        let partial = project_mask_to_grid(&frame, &cam.floor_hom_low, &spec, &coverage).unwrap();
        let mut partials = BTreeMap::new();
        partials.insert(0u8, partial.clone());
        let fused = fuse_global(&partials, &own).unwrap();
        assert_eq!(fused.cells, partial.cells);
    }

    #[test]
    fn perfect_perception_matches_truth_off_boundaries() {
        let spec = test_spec();
        let cams = vec![overhead_rig(0, -3.0, 0.0), overhead_rig(1, 3.0, 0.0)];
        let own = CameraOwnership::build(&spec, &cams);
        let w = block_world(0.8, -0.4, 0.7);
        let truth = ground_truth_occupancy(&w, &spec);
        let mut partials = BTreeMap::new();
        for cam in &cams {
            let coverage = build_coverage(cam, &spec);
            let noise = PixelNoise::for_frame(5, cam.id, 0);
            let frame = simulate_segmentation(&w, &spec, cam, 0.0, 0.0, &noise);
            partials.insert(cam.id, project_mask_to_grid(&frame, &cam.floor_hom_low, &spec, &coverage).unwrap());
        }
        let fused = fuse_global(&partials, &own).unwrap();
        let mut checked = 0u32;
        for iy in 0..spec.height {
            for ix in 0..spec.width {
                if own.owner(ix, iy).is_none() || near_boundary(&truth, ix, iy) {
                    continue;
                }
                assert_eq!(fused.get(ix, iy), truth.get(ix, iy), "cell ({ix},{iy})");
                checked += 1;
            }
        }
        assert!(checked > 10_000, "identity check covered too few cells ({checked})");
    }

    fn near_boundary(truth: &OccupancyGrid, ix: u32, iy: u32) -> bool {
        let me = truth.get(ix, iy);
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let (nx, ny) = (ix as i64 + dx, iy as i64 + dy);
                if nx < 0 || ny < 0 || nx >= truth.spec.width as i64 || ny >= truth.spec.height as i64 {
                    continue;
                }
                if truth.get(nx as u32, ny as u32) != me {
                    return true;
                }
            }
        }
        false
    }

    fn straight_path() -> (Vec<P2>, Vec<f64>) {
        (vec![P2::new(-6.0, 0.0), P2::new(6.0, 0.0)], vec![0.0, 12.0])
    }

    #[test]
    fn empty_corridor_is_clear() {
        let grid = OccupancyGrid::filled(test_spec(), Cell::Free, 0.0);
        let (poly, cum) = straight_path();
        assert_eq!(corridor_clear(&grid, &poly, &cum, 0.0, 12.0, 0.6, true), (true, None));
    }

    #[test]
    fn blockage_three_meters_ahead_is_located() {
        let mut grid = OccupancyGrid::filled(test_spec(), Cell::Free, 0.0);
        let (ix, iy) = grid.spec.cell_of_point(P2::new(-3.0, 0.0)).unwrap();
        grid.set(ix, iy, Cell::Occupied);
        let (poly, cum) = straight_path();
        let (clear, at) = corridor_clear(&grid, &poly, &cum, 0.0, 12.0, 0.6, true);
        assert!(!clear);
        let at = at.unwrap();
        assert!((at - 3.0).abs() <= grid.spec.cell_size, "blockage reported at {at}");
    }

    #[test]
    fn lateral_cells_beyond_half_width_do_not_block() {
        let mut grid = OccupancyGrid::filled(test_spec(), Cell::Free, 0.0);
        let (ix, iy) = grid.spec.cell_of_point(P2::new(-3.0, 0.7)).unwrap();
        grid.set(ix, iy, Cell::Occupied);
        let (poly, cum) = straight_path();
        assert_eq!(corridor_clear(&grid, &poly, &cum, 0.0, 12.0, 0.6, true), (true, None));
        let (clear, _) = corridor_clear(&grid, &poly, &cum, 0.0, 12.0, 0.8, true);
        assert!(!clear);
    }

    #[test]
    fn unknown_policy_flag_controls_blocking() {
        let mut grid = OccupancyGrid::filled(test_spec(), Cell::Free, 0.0);
        let (ix, iy) = grid.spec.cell_of_point(P2::new(0.0, 0.0)).unwrap();
        grid.set(ix, iy, Cell::Unknown);
        let (poly, cum) = straight_path();
        let (clear, at) = corridor_clear(&grid, &poly, &cum, 0.0, 12.0, 0.6, true);
        assert!(!clear && at.is_some());
        assert_eq!(corridor_clear(&grid, &poly, &cum, 0.0, 12.0, 0.6, false), (true, None));
    }

    #[test]
    fn sweep_respects_the_arclength_window() {
        let mut grid = OccupancyGrid::filled(test_spec(), Cell::Free, 0.0);
        let (ix, iy) = grid.spec.cell_of_point(P2::new(-3.0, 0.0)).unwrap();
        grid.set(ix, iy, Cell::Occupied);
        let (poly, cum) = straight_path();
        // Blockage sits at arclength 3; a window starting past it is clear.
        let (clear, _) = corridor_clear(&grid, &poly, &cum, 4.0, 8.0, 0.6, true);
        assert!(clear);
        let (clear, _) = corridor_clear(&grid, &poly, &cum, 0.0, 2.0, 0.6, true);
        assert!(clear);
    }

    #[test]
    fn corridor_follows_bent_paths() {
        let mut grid = OccupancyGrid::filled(test_spec(), Cell::Free, 0.0);
        let (ix, iy) = grid.spec.cell_of_point(P2::new(2.0, 2.0)).unwrap();
        grid.set(ix, iy, Cell::Occupied);
        let poly = vec![P2::new(-4.0, 0.0), P2::new(2.0, 0.0), P2::new(2.0, 3.0)];
        let cum = vec![0.0, 6.0, 9.0];
        let (clear, at) = corridor_clear(&grid, &poly, &cum, 0.0, 9.0, 0.5, true);
        assert!(!clear);
        assert!((at.unwrap() - 8.0).abs() <= grid.spec.cell_size);
    }

    #[test]
    fn grid_file_round_trips() {
        let mut grid = OccupancyGrid::filled(
            GridSpec { origin: (-1.25, 3.5), cell_size: 0.05, width: 37, height: 23 },
            Cell::Free,
            123.456789,
        );
        let noise = PixelNoise::for_frame(3, 0, 0);
        for i in 0..grid.cells.len() {
            let d = noise.uniform(i as u32);
            grid.cells[i] = if d < 0.3 {
                Cell::Occupied
            } else if d < 0.5 {
                Cell::Unknown
            } else {
                Cell::Free
            };
        }
        let mut buf = Vec::new();
        write_grid(&grid, &mut buf).unwrap();
        let back = read_grid(&mut buf.as_slice()).unwrap();
        assert_eq!(back, grid);
    }

    #[test]
    fn grid_reader_rejects_malformed_input() {
        let grid = OccupancyGrid::filled(
            GridSpec { origin: (0.0, 0.0), cell_size: 0.05, width: 4, height: 4 },
            Cell::Free,
            0.0,
        );
        let mut buf = Vec::new();
        write_grid(&grid, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();

        let bad_magic = text.replace("occupancy-grid v1", "occupancy-grid v9");
        assert!(matches!(read_grid(&mut bad_magic.as_bytes()), Err(PerceptionError::BadHeader(_))));

        let bad_b64 = text.replace("data ", "data !!!");
        assert!(matches!(read_grid(&mut bad_b64.as_bytes()), Err(PerceptionError::BadPayload(_))));

        // Cell value 3 (0b11) is not a valid state.
        let mut lines: Vec<&str> = text.lines().collect();
        let forged = format!("data {}", BASE64.encode([0b1111_1111u8, 0, 0, 0]));
        let last = lines.len() - 1;
        lines[last] = &forged;
        let forged_text = lines.join("\n");
        assert!(matches!(read_grid(&mut forged_text.as_bytes()), Err(PerceptionError::BadPayload(_))));

        let truncated: String = text.lines().take(3).collect::<Vec<_>>().join("\n");
        assert!(matches!(read_grid(&mut truncated.as_bytes()), Err(PerceptionError::BadHeader(_))));
    }
}

//! Segmentation runtime for the run loop.
//!
//! The reference chain (rasterize truth, label every pixel of every camera,
//! back-project each mask, fuse by ownership) touches every covered pixel
//! every frame, which a 16 hour shift cannot afford. This module computes
//! the identical fused grid lazily: per cell the owning camera, the pixel
//! its center maps to, and the truth cell that pixel's center looks at are
//! all static, so they are resolved once. A query then only needs the truth
//! occupancy at the frame's content tick plus the keyed noise draw for that
//! pixel. `materialize` evaluates every cell eagerly and must stay bitwise
//! equal to the reference chain; a test holds the two together.
//!
//! Dynamic truth is a ring of three tick overlays over a static obstacle
//! bitmap: a fused query at tick k reads content from k (in-phase cameras)
//! or k-1 (skewed cameras capture late, their frame is processed with the
//! next batch), and the persistence filter additionally looks one frame
//! back.

use amrsim_core::camera::CameraRig;
use amrsim_core::geom2d::{point_in_convex, P2};
use amrsim_core::perception::{
    build_coverage, fuse_global, project_mask_to_grid, simulate_segmentation_from_truth,
    CameraOwnership, Cell, GridSpec, OccupancyGrid, OccupancyQuery, PixelNoise, SegmentationFrame,
};
use amrsim_core::world::{ground_truth_occupancy, WorldState};

const NO_CAM: u8 = u8::MAX;
const OFF_GRID: u32 = u32::MAX;
const RING: usize = 3;

/// One tick's dynamic occupancy as a clearable bitset. Membership tests are
/// a bit probe; clearing walks only what was written.
struct Overlay {
    tick: u64,
    bits: Vec<u64>,
    written: Vec<u32>,
}

impl Overlay {
    fn new(cells: usize) -> Self {
        Self { tick: u64::MAX, bits: vec![0; cells.div_ceil(64)], written: Vec::new() }
    }

    fn reset(&mut self, tick: u64) {
        for &c in &self.written {
            self.bits[c as usize / 64] &= !(1 << (c % 64));
        }
        self.written.clear();
        self.tick = tick;
    }

    fn set(&mut self, cell: u32) {
        let (w, b) = (cell as usize / 64, cell % 64);
        if self.bits[w] >> b & 1 == 0 {
            self.bits[w] |= 1 << b;
            self.written.push(cell);
        }
    }

    fn test(&self, cell: u32) -> bool {
        self.bits[cell as usize / 64] >> (cell % 64) & 1 == 1
    }
}

pub struct PerceptionPipeline {
    pub spec: GridSpec,
    pub cameras: Vec<CameraRig>,
    pub ownership: CameraOwnership,
    /// Seconds between segmentation frames (the run loop's control period).
    pub frame_period: f64,
    pub fp_rate: f64,
    pub fn_rate: f64,
    pix_seed: u64,
    /// Per cell: index into `cameras` of the owner, NO_CAM if uncovered.
    map_owner: Vec<u8>,
    /// Per cell: the owner's low-res pixel index its center maps to.
    map_pixel: Vec<u32>,
    /// Per cell: truth cell observed by that pixel's center, OFF_GRID if
    /// the pixel looks past the grid (such pixels read as free).
    map_truth: Vec<u32>,
    /// Cells owned by each camera, for pipelined materialization.
    owned_cells: Vec<Vec<u32>>,
    static_bits: Vec<u64>,
    ring: Vec<Overlay>,
}

impl PerceptionPipeline {
    pub fn new(
        spec: GridSpec,
        cameras: Vec<CameraRig>,
        world: &WorldState,
        fp_rate: f64,
        fn_rate: f64,
        pix_seed: u64,
        frame_period: f64,
    ) -> Self {
        let ownership = CameraOwnership::build(&spec, &cameras);
        let cells = spec.len();

        let mut static_bits = vec![0u64; cells.div_ceil(64)];
        for ob in &world.floorplan.obstacles {
            rasterize(&spec, &ob.polygon, |c| static_bits[c as usize / 64] |= 1 << (c % 64));
        }

        let mut map_owner = vec![NO_CAM; cells];
        let mut map_pixel = vec![0u32; cells];
        let mut map_truth = vec![OFF_GRID; cells];
        let mut owned_cells = vec![Vec::new(); cameras.len()];
        for iy in 0..spec.height {
            for ix in 0..spec.width {
                let i = spec.index(ix, iy);
                let Some(id) = ownership.owner_by_index(i) else { continue };
                let cam_idx = cameras.iter().position(|c| c.id == id).expect("owner is a known camera");
                let cam = &cameras[cam_idx];
                let center = spec.center(ix, iy);
                let Ok((u, v)) = cam.floor_hom_low.ground_to_pixel((center.x, center.y)) else {
                    continue;
                };
                let (pu, pv) = (u.floor(), v.floor());
                if pu < 0.0
                    || pv < 0.0
                    || pu >= SegmentationFrame::WIDTH as f64
                    || pv >= SegmentationFrame::HEIGHT as f64
                {
                    continue;
                }
                map_owner[i] = cam_idx as u8;
                map_pixel[i] = SegmentationFrame::pixel_index(pu as u32, pv as u32);
                if let Ok((gx, gy)) = cam.floor_hom_low.pixel_to_ground((pu + 0.5, pv + 0.5)) {
                    if let Some((tx, ty)) = spec.cell_of_point(P2::new(gx, gy)) {
                        map_truth[i] = spec.index(tx, ty) as u32;
                    }
                }
                owned_cells[cam_idx].push(i as u32);
            }
        }

        let ring = (0..RING).map(|_| Overlay::new(cells)).collect();
        Self {
            spec,
            cameras,
            ownership,
            frame_period,
            fp_rate,
            fn_rate,
            pix_seed,
            map_owner,
            map_pixel,
            map_truth,
            owned_cells,
            static_bits,
            ring,
        }
    }

    /// Record the dynamic footprints for one tick. Must be called every
    /// tick, in order, before any query for that tick.
    pub fn observe(&mut self, world: &WorldState, tick: u64) {
        let slot = (tick % RING as u64) as usize;
        self.ring[slot].reset(tick);
        let spec = self.spec.clone();
        for robot in &world.robots {
            let poly = robot.footprint_polygon();
            rasterize(&spec, &poly, |c| self.ring[slot].set(c));
        }
        for agent in &world.agents {
            let poly = agent.footprint_polygon(world.clock);
            rasterize(&spec, &poly, |c| self.ring[slot].set(c));
        }
    }

    fn truth_at(&self, cell: u32, tick: u64) -> bool {
        if self.static_bits[cell as usize / 64] >> (cell % 64) & 1 == 1 {
            return true;
        }
        let slot = &self.ring[(tick % RING as u64) as usize];
        debug_assert_eq!(slot.tick, tick, "overlay ring does not hold tick {tick}");
        slot.test(cell)
    }

    /// Content tick feeding a camera's contribution to the fused grid at
    /// `tick`: skewed cameras capture after the batch cutoff, so their
    /// frame lands in the next fusion.
    fn content_tick(&self, cam_idx: usize, tick: u64) -> Option<u64> {
        if self.cameras[cam_idx].skew > 0.0 {
            tick.checked_sub(1)
        } else {
            Some(tick)
        }
    }

    /// Fused value of one cell at one tick, identical to the reference
    /// segment-project-fuse chain.
    pub fn fused_cell(&self, cell: usize, tick: u64) -> Cell {
        let owner = self.map_owner[cell];
        if owner == NO_CAM {
            return Cell::Unknown;
        }
        let Some(content) = self.content_tick(owner as usize, tick) else {
            return Cell::Unknown;
        };
        let truth_occ = match self.map_truth[cell] {
            OFF_GRID => false,
            tc => self.truth_at(tc, content),
        };
        let cam = &self.cameras[owner as usize];
        let noise = PixelNoise::for_frame(self.pix_seed, cam.id, content);
        let draw = noise.uniform(self.map_pixel[cell]);
        let occupied = if truth_occ { !(draw < self.fn_rate) } else { draw < self.fp_rate };
        if occupied {
            Cell::Occupied
        } else {
            Cell::Free
        }
    }

    /// Capture time of the newest frame fused at `tick`.
    pub fn stamp_at(&self, tick: u64) -> f64 {
        let mut stamp = f64::NEG_INFINITY;
        for (i, cam) in self.cameras.iter().enumerate() {
            if let Some(content) = self.content_tick(i, tick) {
                stamp = stamp.max(content as f64 * self.frame_period + cam.skew);
            }
        }
        stamp
    }

    pub fn fused_view(&self, tick: u64) -> FusedView<'_> {
        FusedView { pipe: self, tick, stamp: self.stamp_at(tick) }
    }

    /// The view corridor sweeps run against: optionally requires two
    /// consecutive occupied frames before a cell blocks.
    pub fn blocked_view(&self, tick: u64, persistence: bool) -> BlockedView<'_> {
        BlockedView { pipe: self, tick, persistence, stamp: self.stamp_at(tick) }
    }

    pub fn materialize(&self, tick: u64) -> OccupancyGrid {
        let mut out = OccupancyGrid::filled(self.spec.clone(), Cell::Unknown, self.stamp_at(tick));
        for i in 0..self.spec.len() {
            out.cells[i] = self.fused_cell(i, tick);
        }
        out
    }

    /// Concurrent materialization: one worker per camera over its owned
    /// cells, merged in ascending camera id order. Ownership makes the
    /// writes disjoint, so the result is bitwise equal to `materialize`.
    pub fn materialize_pipelined(&self, tick: u64) -> OccupancyGrid {
        let mut out = OccupancyGrid::filled(self.spec.clone(), Cell::Unknown, self.stamp_at(tick));
        let mut parts: Vec<(u8, Vec<(u32, Cell)>)> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..self.cameras.len())
                .map(|ci| {
                    scope.spawn(move || {
                        let values: Vec<(u32, Cell)> = self.owned_cells[ci]
                            .iter()
                            .map(|&c| (c, self.fused_cell(c as usize, tick)))
                            .collect();
                        (self.cameras[ci].id, values)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("camera worker")).collect()
        });
        parts.sort_by_key(|(id, _)| *id);
        for (_, values) in parts {
            for (c, v) in values {
                out.cells[c as usize] = v;
            }
        }
        out
    }
}

fn rasterize(spec: &GridSpec, poly: &[P2], mut set: impl FnMut(u32)) {
    let mut min = P2::new(f64::INFINITY, f64::INFINITY);
    let mut max = P2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in poly {
        min.x = min.x.min(p.x);
        min.y = min.y.min(p.y);
        max.x = max.x.max(p.x);
        max.y = max.y.max(p.y);
    }
    let Some(((x0, x1), (y0, y1))) = spec.cell_range(min, max) else { return };
    for iy in y0..=y1 {
        for ix in x0..=x1 {
            if point_in_convex(spec.center(ix, iy), poly) {
                set(spec.index(ix, iy) as u32);
            }
        }
    }
}

pub struct FusedView<'a> {
    pipe: &'a PerceptionPipeline,
    tick: u64,
    stamp: f64,
}

impl OccupancyQuery for FusedView<'_> {
    fn spec(&self) -> &GridSpec {
        &self.pipe.spec
    }

    fn stamp(&self) -> f64 {
        self.stamp
    }

    fn cell(&self, ix: u32, iy: u32) -> Cell {
        self.pipe.fused_cell(self.pipe.spec.index(ix, iy), self.tick)
    }
}

pub struct BlockedView<'a> {
    pipe: &'a PerceptionPipeline,
    tick: u64,
    persistence: bool,
    stamp: f64,
}

impl OccupancyQuery for BlockedView<'_> {
    fn spec(&self) -> &GridSpec {
        &self.pipe.spec
    }

    fn stamp(&self) -> f64 {
        self.stamp
    }

    fn cell(&self, ix: u32, iy: u32) -> Cell {
        let i = self.pipe.spec.index(ix, iy);
        let cur = self.pipe.fused_cell(i, self.tick);
        if !self.persistence || self.tick == 0 || cur != Cell::Occupied {
            return cur;
        }
        // A fresh occupied reading only blocks once confirmed; an Unknown
        // history stays conservative.
        if self.pipe.fused_cell(i, self.tick - 1) == Cell::Free {
            Cell::Free
        } else {
            Cell::Occupied
        }
    }
}

/// Same confirmation rule over eagerly materialized grids (pipelined mode).
pub struct GridPairView<'a> {
    pub cur: &'a OccupancyGrid,
    pub prev: Option<&'a OccupancyGrid>,
    pub persistence: bool,
}

impl OccupancyQuery for GridPairView<'_> {
    fn spec(&self) -> &GridSpec {
        &self.cur.spec
    }

    fn stamp(&self) -> f64 {
        self.cur.stamp
    }

    fn cell(&self, ix: u32, iy: u32) -> Cell {
        let cur = self.cur.get(ix, iy);
        let (Some(prev), true, Cell::Occupied) = (self.prev, self.persistence, cur) else {
            return cur;
        };
        if prev.get(ix, iy) == Cell::Free {
            Cell::Free
        } else {
            Cell::Occupied
        }
    }
}

/// Hides one robot's own footprint from its corridor sweep. The cloud knows
/// where the robot is; without the mask the sweep would trip on the cells
/// the robot itself occupies.
pub struct MaskedView<'a, Q: OccupancyQuery> {
    pub inner: &'a Q,
    pub mask: [P2; 4],
}

impl<Q: OccupancyQuery> OccupancyQuery for MaskedView<'_, Q> {
    fn spec(&self) -> &GridSpec {
        self.inner.spec()
    }

    fn stamp(&self) -> f64 {
        self.inner.stamp()
    }

    fn cell(&self, ix: u32, iy: u32) -> Cell {
        if point_in_convex(self.spec().center(ix, iy), &self.mask) {
            return Cell::Free;
        }
        self.inner.cell(ix, iy)
    }
}

/// Reference fusion for one tick: the full per-camera chain from the truth
/// grids at the content ticks. Quadratic in pixels; tests only.
pub fn reference_fused(
    pipe: &PerceptionPipeline,
    truth_by_tick: &dyn Fn(u64) -> OccupancyGrid,
    tick: u64,
) -> OccupancyGrid {
    let mut partials = std::collections::BTreeMap::new();
    for (ci, cam) in pipe.cameras.iter().enumerate() {
        let Some(content) = pipe.content_tick(ci, tick) else { continue };
        let truth = truth_by_tick(content);
        let noise = PixelNoise::for_frame(pipe.pix_seed, cam.id, content);
        let frame = simulate_segmentation_from_truth(
            &truth,
            cam,
            pipe.fp_rate,
            pipe.fn_rate,
            &noise,
            content as f64 * pipe.frame_period,
        );
        let coverage = build_coverage(cam, &pipe.spec);
        let partial = project_mask_to_grid(&frame, &cam.floor_hom_low, &pipe.spec, &coverage)
            .expect("reference projection");
        partials.insert(cam.id, partial);
    }
    fuse_global(&partials, &pipe.ownership).expect("reference fusion")
}

/// Snapshot of the truth grid the reference path needs per content tick.
pub fn record_truth(world: &WorldState, spec: &GridSpec) -> OccupancyGrid {
    ground_truth_occupancy(world, spec)
}

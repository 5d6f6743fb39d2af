//! Forward-projection oracle for mask back-projection: instead of mapping
//! mask pixels onto cells, project every cell center into the image and
//! collect the cells that land inside a given pixel.

use std::collections::BTreeSet;

/// Cells (ix, iy) whose centers project into integer pixel `(u, v)`.
/// `ground_to_pixel` returns continuous pixel coordinates or None when the
/// point does not project.
pub fn cells_hitting_pixel(
    ground_to_pixel: impl Fn(f64, f64) -> Option<(f64, f64)>,
    origin: (f64, f64),
    cell_size: f64,
    grid_dims: (u32, u32),
    pixel: (u32, u32),
) -> BTreeSet<(u32, u32)> {
    let mut out = BTreeSet::new();
    for iy in 0..grid_dims.1 {
        for ix in 0..grid_dims.0 {
            let x = origin.0 + (ix as f64 + 0.5) * cell_size;
            let y = origin.1 + (iy as f64 + 0.5) * cell_size;
            if let Some((u, v)) = ground_to_pixel(x, y) {
                if u >= 0.0 && v >= 0.0 && u.floor() as u32 == pixel.0 && v.floor() as u32 == pixel.1 {
                    out.insert((ix, iy));
                }
            }
        }
    }
    out
}

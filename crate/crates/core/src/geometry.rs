//! Camera geometry: pinhole projection, ground-plane homographies, and
//! fiducial marker pose recovery.
//!
//! Conventions: world frame is right-handed with z up; the camera frame has
//! z along the optical axis so depth is the camera-frame z coordinate.
//! Pixel coordinates follow the usual image convention (u right, v down).
//! Headings are normalized to (-pi, pi].

use nalgebra::{Matrix3, SMatrix, Vector3};
use thiserror::Error;

use crate::{s, Scalar};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("point at or behind the camera (depth {depth})")]
    NonPositiveDepth { depth: f64 },
    #[error("camera center lies on the target plane")]
    DegeneratePlane,
    #[error("homogeneous point at infinity")]
    PointAtInfinity,
    #[error("need at least 4 correspondences, got {got}")]
    InsufficientPoints { got: usize },
    #[error("correspondences do not determine a homography")]
    DegenerateConfiguration,
    #[error("homography is not invertible")]
    SingularHomography,
    #[error("marker corners inconsistent with marker size {expected_m} m")]
    ImplausibleMarker { expected_m: f64 },
}

/// Wrap an angle to (-pi, pi].
pub fn normalize_angle<T: Scalar>(a: T) -> T {
    let pi = T::pi();
    let two_pi = T::two_pi();
    let m = pi - a;
    let k = (m / two_pi).floor();
    pi - (m - k * two_pi)
}

/// Planar pose: position plus heading, heading always in (-pi, pi].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose2D<T: Scalar> {
    pub x: T,
    pub y: T,
    pub theta: T,
}

impl<T: Scalar> Pose2D<T> {
    pub fn new(x: T, y: T, theta: T) -> Self {
        Self { x, y, theta: normalize_angle(theta) }
    }

    pub fn origin() -> Self {
        Self { x: T::zero(), y: T::zero(), theta: T::zero() }
    }

    /// Apply `local`, expressed in this pose's frame, after this pose.
    pub fn compose(&self, local: &Pose2D<T>) -> Pose2D<T> {
        let (sin, cos) = self.theta.sin_cos();
        Pose2D::new(
            self.x + cos * local.x - sin * local.y,
            self.y + sin * local.x + cos * local.y,
            self.theta + local.theta,
        )
    }

    /// Map a point from this pose's local frame into the world frame.
    pub fn transform_point(&self, p: (T, T)) -> (T, T) {
        let (sin, cos) = self.theta.sin_cos();
        (self.x + cos * p.0 - sin * p.1, self.y + sin * p.0 + cos * p.1)
    }

    pub fn position(&self) -> (T, T) {
        (self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics<T: Scalar> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: u32,
    pub height: u32,
}

impl<T: Scalar> CameraIntrinsics<T> {
    pub fn contains_pixel(&self, (u, v): (T, T)) -> bool {
        u >= T::zero()
            && v >= T::zero()
            && u < T::from_u32(self.width).unwrap()
            && v < T::from_u32(self.height).unwrap()
    }

    /// Same lens imaged at a different resolution.
    pub fn scaled(&self, width: u32, height: u32) -> Self {
        let sx = s::<T>(width as f64) / s::<T>(self.width as f64);
        let sy = s::<T>(height as f64) / s::<T>(self.height as f64);
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
        }
    }
}

/// Rigid camera mount: `rotation` maps world directions into the camera
/// frame, `position` is the optical center in world coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraExtrinsics<T: Scalar> {
    pub position: Vector3<T>,
    pub rotation: Matrix3<T>,
}

impl<T: Scalar> CameraExtrinsics<T> {
    /// Ceiling mount looking straight down. With yaw = 0 the image u axis
    /// runs along world +x and v runs along world -y, keeping the camera
    /// frame right-handed with depth increasing toward the floor.
    pub fn top_down(position: Vector3<T>, yaw: T) -> Self {
        let (sin, cos) = yaw.sin_cos();
        let rotation = Matrix3::new(
            cos,
            sin,
            T::zero(),
            sin,
            -cos,
            T::zero(),
            T::zero(),
            T::zero(),
            -T::one(),
        );
        Self { position, rotation }
    }
}

const MIN_DEPTH: f64 = 1e-9;

/// Pinhole projection of a world point into pixel coordinates.
pub fn project_point<T: Scalar>(
    intrinsics: &CameraIntrinsics<T>,
    extrinsics: &CameraExtrinsics<T>,
    p_world: Vector3<T>,
) -> Result<(T, T), GeometryError> {
    let pc = extrinsics.rotation * (p_world - extrinsics.position);
    let depth = pc.z;
    if depth <= s(MIN_DEPTH) {
        return Err(GeometryError::NonPositiveDepth { depth: depth.to_subset().unwrap_or(0.0) });
    }
    Ok((
        intrinsics.cx + intrinsics.fx * pc.x / depth,
        intrinsics.cy + intrinsics.fy * pc.y / depth,
    ))
}

/// Invertible map between pixels and a horizontal world plane.
///
/// `h` takes homogeneous pixels to plane coordinates; the cached inverse
/// goes the other way. Built once per camera and plane height.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundHomography<T: Scalar> {
    h: Matrix3<T>,
    h_inv: Option<Matrix3<T>>,
    pub plane_height: T,
}

impl<T: Scalar> GroundHomography<T> {
    pub fn from_matrix(h: Matrix3<T>, plane_height: T) -> Self {
        let h_inv = h.try_inverse();
        Self { h, h_inv, plane_height }
    }

    pub fn matrix(&self) -> &Matrix3<T> {
        &self.h
    }

    /// Pixel to world coordinates on the plane.
    pub fn pixel_to_ground(&self, (u, v): (T, T)) -> Result<(T, T), GeometryError> {
        apply_homography(&self.h, (u, v))
    }

    /// World plane coordinates to pixel.
    pub fn ground_to_pixel(&self, (x, y): (T, T)) -> Result<(T, T), GeometryError> {
        let inv = self.h_inv.as_ref().ok_or(GeometryError::SingularHomography)?;
        apply_homography(inv, (x, y))
    }
}

fn apply_homography<T: Scalar>(h: &Matrix3<T>, (a, b): (T, T)) -> Result<(T, T), GeometryError> {
    let p = h * Vector3::new(a, b, T::one());
    let scale = h.camax();
    if p.z.abs() <= scale * s(1e-12) {
        return Err(GeometryError::PointAtInfinity);
    }
    Ok((p.x / p.z, p.y / p.z))
}

/// Closed-form pixel-to-plane homography for a calibrated camera and the
/// horizontal plane z = `plane_height`.
pub fn ground_homography<T: Scalar>(
    intrinsics: &CameraIntrinsics<T>,
    extrinsics: &CameraExtrinsics<T>,
    plane_height: T,
) -> Result<GroundHomography<T>, GeometryError> {
    let r = &extrinsics.rotation;
    let t = r * extrinsics.position;
    // Column for the plane offset: points (x, y, plane_height) map through
    // x*r1 + y*r2 + (plane_height*r3 - R*C).
    let c3 = r.column(2) * plane_height - t;
    let m = Matrix3::from_columns(&[r.column(0).into(), r.column(1).into(), c3]);
    let k = Matrix3::new(
        intrinsics.fx,
        T::zero(),
        intrinsics.cx,
        T::zero(),
        intrinsics.fy,
        intrinsics.cy,
        T::zero(),
        T::zero(),
        T::one(),
    );
    let plane_to_pixel = k * m;
    let h = plane_to_pixel.try_inverse().ok_or(GeometryError::DegeneratePlane)?;
    Ok(GroundHomography { h, h_inv: Some(plane_to_pixel), plane_height })
}

/// Estimate the pixel-to-plane homography from point correspondences by the
/// direct linear transform with Hartley normalization.
pub fn solve_homography_dlt<T: Scalar>(
    correspondences: &[((T, T), (T, T))],
    plane_height: T,
) -> Result<GroundHomography<T>, GeometryError> {
    let n = correspondences.len();
    if n < 4 {
        return Err(GeometryError::InsufficientPoints { got: n });
    }
    let pixels: Vec<(T, T)> = correspondences.iter().map(|c| c.0).collect();
    let planes: Vec<(T, T)> = correspondences.iter().map(|c| c.1).collect();
    let (t_px, px_n) = hartley_normalize(&pixels);
    let (t_pl, pl_n) = hartley_normalize(&planes);

    // Rows of the DLT system for plane ~ H * pixel, accumulated as A^T A so
    // the null vector comes from a fixed-size symmetric eigenproblem.
    let mut ata = SMatrix::<T, 9, 9>::zeros();
    let mut add_row = |row: [T; 9]| {
        for i in 0..9 {
            for j in 0..9 {
                ata[(i, j)] += row[i] * row[j];
            }
        }
    };
    for k in 0..n {
        let (u, v) = px_n[k];
        let (x, y) = pl_n[k];
        let z = T::zero();
        let o = T::one();
        add_row([z, z, z, -u, -v, -o, y * u, y * v, y]);
        add_row([u, v, o, z, z, z, -x * u, -x * v, -x]);
    }

    let eig = ata.symmetric_eigen();
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).expect("finite eigenvalues")
    });
    let max_ev = eig.eigenvalues[order[8]].max(s(1e-300));
    if eig.eigenvalues[order[1]] <= max_ev * s(1e-16) {
        // Two (near-)null directions: the points cannot pin down H.
        return Err(GeometryError::DegenerateConfiguration);
    }
    let hv = eig.eigenvectors.column(order[0]);
    let h_n = Matrix3::new(hv[0], hv[1], hv[2], hv[3], hv[4], hv[5], hv[6], hv[7], hv[8]);
    let t_pl_inv = t_pl.try_inverse().expect("normalization transform invertible");
    let h = t_pl_inv * h_n * t_px;
    Ok(GroundHomography::from_matrix(h, plane_height))
}

fn hartley_normalize<T: Scalar>(pts: &[(T, T)]) -> (Matrix3<T>, Vec<(T, T)>) {
    let n = s::<T>(pts.len() as f64);
    let mut cx = T::zero();
    let mut cy = T::zero();
    for p in pts {
        cx += p.0;
        cy += p.1;
    }
    cx /= n;
    cy /= n;
    let mut mean_dist = T::zero();
    for p in pts {
        mean_dist += ((p.0 - cx) * (p.0 - cx) + (p.1 - cy) * (p.1 - cy)).sqrt();
    }
    mean_dist /= n;
    let scale = if mean_dist > T::zero() { s::<T>(std::f64::consts::SQRT_2) / mean_dist } else { T::one() };
    let t = Matrix3::new(
        scale,
        T::zero(),
        -scale * cx,
        T::zero(),
        scale,
        -scale * cy,
        T::zero(),
        T::zero(),
        T::one(),
    );
    let out = pts.iter().map(|p| ((p.0 - cx) * scale, (p.1 - cy) * scale)).collect();
    (t, out)
}

/// Square marker corners in the marker frame, counter-clockwise starting at
/// (-s/2, -s/2). Corner 0 -> corner 1 is the marker's +x edge.
pub fn marker_corners_local<T: Scalar>(size: T) -> [(T, T); 4] {
    let h = size / s(2.0);
    [(-h, -h), (h, -h), (h, h), (-h, h)]
}

const MARKER_EDGE_TOLERANCE: f64 = 0.25;

/// Recover a marker's planar pose from its four corner pixels.
///
/// Corners must arrive in the fixed marker order. Each projected edge is
/// checked against the physical marker size; a deviation beyond 25 %
/// indicates a misdetection and is rejected rather than averaged away.
pub fn estimate_marker_pose<T: Scalar>(
    corners_px: &[(T, T); 4],
    homography: &GroundHomography<T>,
    marker_size: T,
) -> Result<Pose2D<T>, GeometryError> {
    let mut g = [(T::zero(), T::zero()); 4];
    for (i, c) in corners_px.iter().enumerate() {
        g[i] = homography.pixel_to_ground(*c)?;
    }
    let tol = s::<T>(MARKER_EDGE_TOLERANCE) * marker_size;
    for i in 0..4 {
        let a = g[i];
        let b = g[(i + 1) % 4];
        let len = ((b.0 - a.0) * (b.0 - a.0) + (b.1 - a.1) * (b.1 - a.1)).sqrt();
        if (len - marker_size).abs() > tol {
            return Err(GeometryError::ImplausibleMarker {
                expected_m: marker_size.to_subset().unwrap_or(0.0),
            });
        }
    }
    let quarter = s::<T>(0.25);
    let cx = (g[0].0 + g[1].0 + g[2].0 + g[3].0) * quarter;
    let cy = (g[0].1 + g[1].1 + g[2].1 + g[3].1) * quarter;
    let theta = (g[1].1 - g[0].1).atan2(g[1].0 - g[0].0);
    Ok(Pose2D::new(cx, cy, theta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn overhead_camera() -> (CameraIntrinsics<f64>, CameraExtrinsics<f64>) {
        let intr = CameraIntrinsics { fx: 1000.0, fy: 1000.0, cx: 1920.0, cy: 1080.0, width: 3840, height: 2160 };
        let extr = CameraExtrinsics::top_down(Vector3::new(0.0, 0.0, 8.0), 0.0);
        (intr, extr)
    }

    #[test]
    fn projects_floor_point_off_axis() {
        let (intr, extr) = overhead_camera();
        let (u, v) = project_point(&intr, &extr, Vector3::new(0.8, 0.0, 0.0)).unwrap();
        assert_relative_eq!(u, 2020.0, epsilon = 1e-9);
        assert_relative_eq!(v, 1080.0, epsilon = 1e-9);
    }

    #[test]
    fn rejects_point_behind_camera() {
        let (intr, extr) = overhead_camera();
        let err = project_point(&intr, &extr, Vector3::new(0.0, 0.0, 9.0)).unwrap_err();
        assert!(matches!(err, GeometryError::NonPositiveDepth { .. }));
        // Exactly at the optical center is also rejected.
        let err = project_point(&intr, &extr, Vector3::new(0.0, 0.0, 8.0)).unwrap_err();
        assert!(matches!(err, GeometryError::NonPositiveDepth { .. }));
    }

    #[test]
    fn homography_round_trips_pixel_and_ground() {
        let (intr, extr) = overhead_camera();
        let hom = ground_homography(&intr, &extr, 0.0).unwrap();
        let (x, y) = hom.pixel_to_ground((2020.0, 1080.0)).unwrap();
        assert_relative_eq!(x, 0.8, epsilon = 1e-9);
        assert_relative_eq!(y, 0.0, epsilon = 1e-9);
        let (u, v) = hom.ground_to_pixel((0.8, 0.0)).unwrap();
        assert_relative_eq!(u, 2020.0, epsilon = 1e-9);
        assert_relative_eq!(v, 1080.0, epsilon = 1e-9);
    }

    #[test]
    fn homography_rejects_plane_through_camera() {
        let (intr, extr) = overhead_camera();
        let err = ground_homography(&intr, &extr, 8.0).unwrap_err();
        assert_eq!(err, GeometryError::DegeneratePlane);
    }

    #[test]
    fn homography_matches_projection_at_marker_height() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let intr = CameraIntrinsics {
                fx: rng.gen_range(800.0..3000.0),
                fy: rng.gen_range(800.0..3000.0),
                cx: 1920.0,
                cy: 1080.0,
                width: 3840,
                height: 2160,
            };
            let extr = CameraExtrinsics::top_down(
                Vector3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(4.0..10.0)),
                rng.gen_range(-3.0..3.0),
            );
            let h = rng.gen_range(0.0..1.0);
            let hom = ground_homography(&intr, &extr, h).unwrap();
            let p = (extr.position.x + rng.gen_range(-2.0..2.0), extr.position.y + rng.gen_range(-2.0..2.0));
            let px = project_point(&intr, &extr, Vector3::new(p.0, p.1, h)).unwrap();
            let back = hom.pixel_to_ground(px).unwrap();
            assert_relative_eq!(back.0, p.0, epsilon = 1e-8);
            assert_relative_eq!(back.1, p.1, epsilon = 1e-8);
        }
    }

    #[test]
    fn dlt_recovers_homography_to_reprojection_tolerance() {
        let (intr, extr) = overhead_camera();
        let hom = ground_homography(&intr, &extr, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for npts in [4usize, 6, 12] {
            let mut corr = Vec::new();
            for _ in 0..npts {
                let g = (rng.gen_range(-6.0..6.0), rng.gen_range(-4.0..4.0));
                let px = hom.ground_to_pixel(g).unwrap();
                corr.push((px, g));
            }
            let est = solve_homography_dlt(&corr, 0.0).unwrap();
            for _ in 0..20 {
                let g = (rng.gen_range(-6.0..6.0), rng.gen_range(-4.0..4.0));
                let px = hom.ground_to_pixel(g).unwrap();
                let got = est.pixel_to_ground(px).unwrap();
                let err = ((got.0 - g.0).powi(2) + (got.1 - g.1).powi(2)).sqrt();
                assert!(err <= 1e-6, "reprojection error {err} with {npts} points");
            }
        }
    }

    #[test]
    fn dlt_rejects_degenerate_configurations() {
        assert!(matches!(
            solve_homography_dlt::<f64>(&[((0.0, 0.0), (0.0, 0.0)); 3], 0.0),
            Err(GeometryError::InsufficientPoints { got: 3 })
        ));
        // Collinear points leave the solution ambiguous.
        let corr: Vec<((f64, f64), (f64, f64))> =
            (0..6).map(|i| ((i as f64, 2.0 * i as f64), (i as f64, 2.0 * i as f64))).collect();
        assert_eq!(solve_homography_dlt(&corr, 0.0).unwrap_err(), GeometryError::DegenerateConfiguration);
    }

    #[test]
    fn marker_pose_recovers_known_pose() {
        let (intr, extr) = overhead_camera();
        let hom = ground_homography(&intr, &extr, 0.3).unwrap();
        let truth = Pose2D::new(1.25, -0.75, 0.6);
        let mut px = [(0.0, 0.0); 4];
        for (i, c) in marker_corners_local(0.1).iter().enumerate() {
            let w = truth.transform_point(*c);
            px[i] = hom.ground_to_pixel(w).unwrap();
        }
        let est = estimate_marker_pose(&px, &hom, 0.1).unwrap();
        assert_relative_eq!(est.x, truth.x, epsilon = 1e-9);
        assert_relative_eq!(est.y, truth.y, epsilon = 1e-9);
        assert_relative_eq!(est.theta, truth.theta, epsilon = 1e-9);
    }

    #[test]
    fn marker_pose_is_equivariant_under_marker_motion() {
        let (intr, extr) = overhead_camera();
        let hom = ground_homography(&intr, &extr, 0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..100 {
            let truth = Pose2D::new(
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.2..3.2),
            );
            let mut px = [(0.0, 0.0); 4];
            for (i, c) in marker_corners_local(0.1).iter().enumerate() {
                px[i] = hom.ground_to_pixel(truth.transform_point(*c)).unwrap();
            }
            let est = estimate_marker_pose(&px, &hom, 0.1).unwrap();
            assert_relative_eq!(est.x, truth.x, epsilon = 1e-8);
            assert_relative_eq!(est.y, truth.y, epsilon = 1e-8);
            assert_relative_eq!(normalize_angle(est.theta - truth.theta), 0.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn marker_pose_rejects_wrong_scale() {
        let (intr, extr) = overhead_camera();
        let hom = ground_homography(&intr, &extr, 0.3).unwrap();
        let truth = Pose2D::new(0.0, 0.0, 0.0);
        let mut px = [(0.0, 0.0); 4];
        // Corners of a marker 40 % larger than declared.
        for (i, c) in marker_corners_local(0.14).iter().enumerate() {
            px[i] = hom.ground_to_pixel(truth.transform_point(*c)).unwrap();
        }
        assert!(matches!(
            estimate_marker_pose(&px, &hom, 0.1),
            Err(GeometryError::ImplausibleMarker { .. })
        ));
    }

    #[test]
    fn angle_normalization_lands_in_half_open_interval() {
        use std::f64::consts::PI;
        assert_relative_eq!(normalize_angle(PI), PI);
        assert_relative_eq!(normalize_angle(-PI), PI);
        assert_relative_eq!(normalize_angle(3.0 * PI), PI);
        assert_relative_eq!(normalize_angle(-6.0), 2.0 * PI - 6.0, epsilon = 1e-12);
        for k in -8..=8 {
            let a = 0.7 + k as f64 * 2.0 * PI;
            assert_relative_eq!(normalize_angle(a), 0.7, epsilon = 1e-9);
        }
    }

    #[test]
    fn generic_layer_accepts_f32() {
        let intr = CameraIntrinsics::<f32> { fx: 500.0, fy: 500.0, cx: 320.0, cy: 180.0, width: 640, height: 360 };
        let extr = CameraExtrinsics::top_down(Vector3::new(0.0f32, 0.0, 8.0), 0.0);
        let (u, _v) = project_point(&intr, &extr, Vector3::new(0.8f32, 0.0, 0.0)).unwrap();
        assert!((u - 370.0).abs() < 1e-3);
        let hom = ground_homography(&intr, &extr, 0.0).unwrap();
        let (x, y) = hom.pixel_to_ground((370.0f32, 180.0)).unwrap();
        assert!((x - 0.8).abs() < 1e-4 && y.abs() < 1e-4);
    }
}

//! Core library for a camera-infrastructure AMR fleet simulator.
//!
//! The deployment model: ceiling cameras observe a factory floor, a central
//! stack localizes robots by fiducial marker, segments the floor into an
//! occupancy grid, schedules transport tasks, plans routes on a fixed road
//! network, and drives each robot over a lossy datagram link. Robots carry
//! no sensors beyond wheel odometry.
//!
//! Math that is independent of grids and wire formats (camera geometry,
//! pose algebra, motion primitives) is generic over the scalar type; the
//! crate root exports `f64` aliases which the rest of the system uses.

pub mod behavior;
pub mod camera;
pub mod fleet;
pub mod geom2d;
pub mod geometry;
pub mod localization;
pub mod motion;
pub mod netproto;
pub mod perception;
pub mod planning;
pub mod world;

/// Scalar bound for the generic math layer. `f32` and `f64` both qualify.
pub trait Scalar: nalgebra::RealField + num_traits::FromPrimitive + Copy {}
impl<T> Scalar for T where T: nalgebra::RealField + num_traits::FromPrimitive + Copy {}

/// Concrete scalar used by the system layer.
pub type Real = f64;

pub type Pose2 = geometry::Pose2D<Real>;
pub type Intrinsics = geometry::CameraIntrinsics<Real>;
pub type Extrinsics = geometry::CameraExtrinsics<Real>;
pub type Homography = geometry::GroundHomography<Real>;

/// Convert an `f64` literal into the generic scalar. Panics only if the
/// target type cannot represent ordinary constants, which no `Scalar` fails.
pub(crate) fn s<T: Scalar>(v: f64) -> T {
    T::from_f64(v).expect("scalar conversion")
}

//! Assembled ceiling camera: one physical unit serving two streams, a
//! high-resolution low-rate stream for marker localization and a
//! low-resolution high-rate stream for floor segmentation.

use nalgebra::Vector3;

use crate::geom2d::P2;
use crate::geometry::{ground_homography, GeometryError};
use crate::{Extrinsics, Homography, Intrinsics};

/// Low-resolution stream dimensions. Segmentation frames are pinned to this.
pub const SEG_WIDTH: u32 = 640;
pub const SEG_HEIGHT: u32 = 360;

#[derive(Debug, Clone)]
pub struct CameraRig {
    pub id: u8,
    pub intrinsics_high: Intrinsics,
    pub intrinsics_low: Intrinsics,
    pub extrinsics: Extrinsics,
    /// Pixel-to-floor map for the low-resolution stream at z = 0.
    pub floor_hom_low: Homography,
    /// High-resolution pixel-to-plane maps per marker mounting height.
    marker_homs_high: Vec<(f64, Homography)>,
    /// Capture offset of the low-resolution stream within its frame period,
    /// modeling free-running unsynchronized cameras.
    pub skew: f64,
}

impl CameraRig {
    pub fn new(
        id: u8,
        intrinsics_high: Intrinsics,
        extrinsics: Extrinsics,
        marker_heights: &[f64],
    ) -> Result<Self, GeometryError> {
        let intrinsics_low = intrinsics_high.scaled(SEG_WIDTH, SEG_HEIGHT);
        let floor_hom_low = ground_homography(&intrinsics_low, &extrinsics, 0.0)?;
        let mut marker_homs_high = Vec::new();
        for &h in marker_heights {
            if !marker_homs_high.iter().any(|(e, _)| close(*e, h)) {
                marker_homs_high.push((h, ground_homography(&intrinsics_high, &extrinsics, h)?));
            }
        }
        Ok(Self {
            id,
            intrinsics_high,
            intrinsics_low,
            extrinsics,
            floor_hom_low,
            marker_homs_high,
            skew: 0.0,
        })
    }

    pub fn with_skew(mut self, skew: f64) -> Self {
        self.skew = skew;
        self
    }

    pub fn marker_hom(&self, height: f64) -> Option<&Homography> {
        self.marker_homs_high.iter().find(|(h, _)| close(*h, height)).map(|(_, hom)| hom)
    }

    /// Optical center projected to the floor; "closest camera" distances are
    /// measured from here.
    pub fn ground_position(&self) -> P2 {
        P2::new(self.extrinsics.position.x, self.extrinsics.position.y)
    }

    pub fn height(&self) -> f64 {
        self.extrinsics.position.z
    }

    /// Whether a floor point lands on the low-resolution sensor.
    pub fn covers_floor_point(&self, p: P2) -> bool {
        match self.floor_hom_low.ground_to_pixel((p.x, p.y)) {
            Ok(px) => self.intrinsics_low.contains_pixel(px),
            Err(_) => false,
        }
    }

    pub fn position3(&self) -> Vector3<f64> {
        self.extrinsics.position
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-9
}

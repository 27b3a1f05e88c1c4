//! Fixed pinhole camera looking down `+z` at a body placed `distance` mm away.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vec3;
use crate::scalar::Real;

/// Points closer than this to the camera plane (mm) are rejected.
pub const NEAR_PLANE_MM: f64 = 1.0;

pub const DEFAULT_IMAGE_SIZE: usize = 512;
pub const DEFAULT_DISTANCE_MM: f64 = 4000.0;
/// Calibrated once so the rest-pose desk model (seed 0, 400 vertices) spans
/// 440 px vertically.
pub const DEFAULT_FOCAL_PX: f64 = 1008.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Camera<T> {
    pub focal: T,
    pub cx: T,
    pub cy: T,
    pub distance: T,
    pub width: usize,
    pub height: usize,
}

/// A pixel position `(u, v)`: column, then row.
pub type Point2<T> = [T; 2];

impl<T: Real> Camera<T> {
    pub fn new(focal: T, cx: T, cy: T, distance: T, width: usize, height: usize) -> Result<Self> {
        let cam = Camera { focal, cx, cy, distance, width, height };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        let inside = |c: T, size: usize| c >= T::zero() && c <= T::of_usize(size);
        if !(self.focal > T::zero()) || !self.focal.is_finite() {
            return Err(Error::InvalidArgument(format!("focal length must be positive, got {}", self.focal)));
        }
        if !(self.distance > T::zero()) || !self.distance.is_finite() {
            return Err(Error::InvalidArgument(format!("body distance must be positive, got {}", self.distance)));
        }
        if self.width == 0 || self.height == 0 || !inside(self.cx, self.width) || !inside(self.cy, self.height) {
            return Err(Error::InvalidArgument("principal point must lie inside a non-empty image".into()));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> Camera<U> {
        let c = |x: T| U::of(x.to_f64_lossy());
        Camera {
            focal: c(self.focal),
            cx: c(self.cx),
            cy: c(self.cy),
            distance: c(self.distance),
            width: self.width,
            height: self.height,
        }
    }

    fn depth(&self, p: &Vec3<T>, index: usize) -> Result<T> {
        let z = p.z() + self.distance;
        if z > T::of(NEAR_PLANE_MM) {
            Ok(z)
        } else {
            Err(Error::BehindCamera { index, depth: z.to_f64_lossy() })
        }
    }

    pub fn project_point(&self, p: &Vec3<T>) -> Result<Point2<T>> {
        let z = self.depth(p, 0)?;
        Ok([self.focal * p.x() / z + self.cx, self.focal * p.y() / z + self.cy])
    }

    pub fn project(&self, points: &[Vec3<T>]) -> Result<Vec<Point2<T>>> {
        points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let z = self.depth(p, i)?;
                Ok([self.focal * p.x() / z + self.cx, self.focal * p.y() / z + self.cy])
            })
            .collect()
    }

    /// `∂(u, v)/∂(x, y, z)` at `p`, rows `u` and `v`.
    pub fn jacobian(&self, p: &Vec3<T>) -> Result<[[T; 3]; 2]> {
        let z = self.depth(p, 0)?;
        let s = self.focal / z;
        Ok([[s, T::zero(), -s * p.x() / z], [T::zero(), s, -s * p.y() / z]])
    }

    /// Pulls pixel-space gradients back to the 3D points.
    pub fn project_backward(&self, points: &[Vec3<T>], d_pixels: &[Point2<T>]) -> Result<Vec<Vec3<T>>> {
        points
            .iter()
            .zip(d_pixels)
            .enumerate()
            .map(|(i, (p, g))| {
                let z = self.depth(p, i)?;
                let s = self.focal / z;
                Ok(Vec3::new(s * g[0], s * g[1], -s * (g[0] * p.x() + g[1] * p.y()) / z))
            })
            .collect()
    }
}

/// 512×512 image, principal point at the centre, body 4 m away.
pub fn default_camera<T: Real>() -> Camera<T> {
    let half = T::of_usize(DEFAULT_IMAGE_SIZE) / T::of(2.0);
    Camera {
        focal: T::of(DEFAULT_FOCAL_PX),
        cx: half,
        cy: half,
        distance: T::of(DEFAULT_DISTANCE_MM),
        width: DEFAULT_IMAGE_SIZE,
        height: DEFAULT_IMAGE_SIZE,
    }
}

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::field::{Aabb, Vec3};
use crate::error::{Error, Result};

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn add_scaled(a: Vec3, b: Vec3, s: f64) -> Vec3 {
    [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]]
}

pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn normalize(a: Vec3) -> Vec3 {
    let n = dot(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Pinhole camera looking from `position` towards `look_at`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: Vec3,
    pub look_at: Vec3,
    /// Vertical field of view in degrees.
    pub fov_y_deg: f64,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit length.
    pub dir: Vec3,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        let axis = sub(self.look_at, self.position);
        if !(dot(axis, axis) > 0.0) || self.position.iter().chain(&self.look_at).any(|v| !v.is_finite()) {
            return Err(Error::usage("camera position and look-at point must differ"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::usage("camera resolution must be at least 1"));
        }
        if !(self.fov_y_deg > 0.0 && self.fov_y_deg < 180.0) {
            return Err(Error::usage("field of view must lie in (0, 180) degrees"));
        }
        Ok(())
    }

    /// Unit optical axis.
    pub fn forward(&self) -> Vec3 {
        normalize(sub(self.look_at, self.position))
    }

    /// Right and up vectors of the image plane; world `+z` is up unless the
    /// camera looks along it.
    fn basis(&self) -> (Vec3, Vec3, Vec3) {
        let f = self.forward();
        let world_up = if f[2].abs() > 0.999 { [0.0, 1.0, 0.0] } else { [0.0, 0.0, 1.0] };
        let right = normalize(cross(f, world_up));
        let up = cross(right, f);
        (f, right, up)
    }

    /// Ray through the centre of pixel `(x, y)`, row 0 at the top.
    pub fn ray(&self, x: usize, y: usize) -> Ray {
        let (f, right, up) = self.basis();
        let tan = (self.fov_y_deg.to_radians() * 0.5).tan();
        let aspect = self.width as f64 / self.height as f64;
        let u = (2.0 * (x as f64 + 0.5) / self.width as f64 - 1.0) * tan * aspect;
        let v = (1.0 - 2.0 * (y as f64 + 0.5) / self.height as f64) * tan;
        let d = [0, 1, 2].map(|a| f[a] + u * right[a] + v * up[a]);
        Ray {
            origin: self.position,
            dir: normalize(d),
        }
    }
}

/// Axis-aligned region Ω in the target field's frame and the point of the
/// source frame where its centre is placed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiBox {
    pub region: Aabb,
    pub placed_center: Vec3,
}

impl RoiBox {
    /// Shift from source-frame points to target-frame points.
    pub fn to_target(&self) -> Vec3 {
        sub(self.region.center(), self.placed_center)
    }

    /// Ω placed in the source frame.
    pub fn placed(&self) -> Aabb {
        self.region.translated(sub(self.placed_center, self.region.center()))
    }
}

/// Intrinsics and distance range for random training views.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoseSampler {
    pub radius: (f64, f64),
    pub fov_y_deg: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for PoseSampler {
    fn default() -> Self {
        Self {
            radius: (2.5, 3.5),
            fov_y_deg: 40.0,
            width: 64,
            height: 64,
        }
    }
}

/// A camera at a point uniformly distributed in the spherical shell
/// `r_min ≤ |p − c| ≤ r_max` around the placed-Ω centroid `c`, aimed at `c`.
pub fn sample_pose<R: Rng>(rng: &mut R, roi: &RoiBox, sampler: &PoseSampler) -> Result<Camera> {
    let (r_min, r_max) = sampler.radius;
    if !(r_min > 0.0 && r_min <= r_max && r_max.is_finite()) {
        return Err(Error::usage("pose radius range must satisfy 0 < r_min <= r_max"));
    }
    let z: f64 = rng.random_range(-1.0..=1.0);
    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let s = (1.0 - z * z).max(0.0).sqrt();
    let dir = [s * phi.cos(), s * phi.sin(), z];
    let u: f64 = rng.random();
    let r = (r_min.powi(3) + u * (r_max.powi(3) - r_min.powi(3))).cbrt();
    let c = roi.placed_center;
    let cam = Camera {
        position: add_scaled(c, dir, r),
        look_at: c,
        fov_y_deg: sampler.fov_y_deg,
        width: sampler.width,
        height: sampler.height,
    };
    cam.validate()?;
    Ok(cam)
}

//! Procedural scene files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::blend::RadianceSchedule;
use super::camera::RoiBox;
use super::field::{Aabb, Vec3, VoxelRadianceField};
use crate::error::{Error, Result};
use crate::guidance::GuidanceMode;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Primitive {
    Sphere {
        center: Vec3,
        radius: f64,
        density: f64,
        color: Vec3,
    },
    Box {
        min: Vec3,
        max: Vec3,
        density: f64,
        color: Vec3,
    },
    /// Box whose colour alternates between two values on a square lattice
    /// in x and y.
    Checker {
        min: Vec3,
        max: Vec3,
        density: f64,
        color_a: Vec3,
        color_b: Vec3,
        cell: f64,
    },
}

impl Primitive {
    /// Density and colour at `p`, if inside.
    fn sample(&self, p: Vec3) -> Option<(f64, Vec3)> {
        match *self {
            Primitive::Sphere {
                center,
                radius,
                density,
                color,
            } => {
                let d2: f64 = (0..3).map(|a| (p[a] - center[a]).powi(2)).sum();
                (d2 <= radius * radius).then_some((density, color))
            }
            Primitive::Box { min, max, density, color } => Aabb { min, max }.contains(p).then_some((density, color)),
            Primitive::Checker {
                min,
                max,
                density,
                color_a,
                color_b,
                cell,
            } => Aabb { min, max }.contains(p).then(|| {
                let parity = ((p[0] / cell).floor() + (p[1] / cell).floor()) as i64;
                (density, if parity.rem_euclid(2) == 0 { color_a } else { color_b })
            }),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Primitive::Sphere { radius, density, .. } => radius > 0.0 && density >= 0.0,
            Primitive::Box { min, max, density, .. } => Aabb::new(min, max).is_ok() && density >= 0.0,
            Primitive::Checker {
                min, max, density, cell, ..
            } => Aabb::new(min, max).is_ok() && density >= 0.0 && cell > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid primitive {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub resolution: usize,
    pub bounds: Aabb,
    /// Later primitives overwrite earlier ones.
    #[serde(default)]
    pub primitives: Vec<Primitive>,
}

impl FieldSpec {
    /// Voxelizes the primitives at the grid nodes. Empty nodes get raw
    /// density 0 and black.
    pub fn build<T: Scalar>(&self) -> Result<VoxelRadianceField<T>> {
        for p in &self.primitives {
            p.validate()?;
        }
        let r = self.resolution;
        let mut field = VoxelRadianceField::new([r, r, r], self.bounds)?;
        for node in 0..field.num_nodes() {
            let pos = field.node_position(node);
            if let Some((density, color)) = self.primitives.iter().rev().find_map(|p| p.sample(pos)) {
                field.density[node] = T::of(density);
                for c in 0..3 {
                    field.color[3 * node + c] = T::of(color[c].clamp(0.0, 1.0));
                }
            }
        }
        Ok(field)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiSpec {
    pub min: Vec3,
    pub max: Vec3,
    pub placed_center: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlendSpec {
    pub mode: GuidanceMode,
    pub lambda: f64,
    pub seed: u64,
    pub schedule: RadianceSchedule,
}

impl Default for BlendSpec {
    fn default() -> Self {
        Self {
            mode: GuidanceMode::default(),
            lambda: 1.0,
            seed: 0,
            schedule: RadianceSchedule::default(),
        }
    }
}

/// Source and target fields, the ROI and training settings, as read from a
/// TOML scene file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadianceScene {
    pub source: FieldSpec,
    pub target: FieldSpec,
    pub roi: RoiSpec,
    #[serde(default)]
    pub blend: BlendSpec,
}

impl RadianceScene {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("scene file: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// A sphere set into the top of a box standing on a checker floor.
    pub fn sphere_in_box() -> Self {
        Self::from_toml_str(include_str!("../../assets/sphere_in_box.toml")).expect("bundled scene parses")
    }

    pub fn roi_box(&self) -> Result<RoiBox> {
        Ok(RoiBox {
            region: Aabb::new(self.roi.min, self.roi.max)?,
            placed_center: self.roi.placed_center,
        })
    }

    pub fn fields<T: Scalar>(&self) -> Result<(VoxelRadianceField<T>, VoxelRadianceField<T>)> {
        Ok((self.source.build()?, self.target.build()?))
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub type Vec3 = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self> {
        let b = Self { min, max };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if (0..3).any(|a| !(self.min[a].is_finite() && self.max[a].is_finite() && self.min[a] < self.max[a])) {
            return Err(Error::usage("box bounds must be finite with min < max on every axis"));
        }
        Ok(())
    }

    pub fn center(&self) -> Vec3 {
        [0, 1, 2].map(|a| 0.5 * (self.min[a] + self.max[a]))
    }

    pub fn size(&self) -> Vec3 {
        [0, 1, 2].map(|a| self.max[a] - self.min[a])
    }

    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        self.contains(other.min) && self.contains(other.max)
    }

    pub fn translated(&self, by: Vec3) -> Aabb {
        Aabb {
            min: [0, 1, 2].map(|a| self.min[a] + by[a]),
            max: [0, 1, 2].map(|a| self.max[a] + by[a]),
        }
    }

    /// Parameter interval where `origin + t · dir` is inside the box, if any.
    pub fn intersect(&self, origin: Vec3, dir: Vec3) -> Option<(f64, f64)> {
        let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
        for a in 0..3 {
            if dir[a] == 0.0 {
                if origin[a] < self.min[a] || origin[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[a];
            let (mut n, mut f) = ((self.min[a] - origin[a]) * inv, (self.max[a] - origin[a]) * inv);
            if n > f {
                std::mem::swap(&mut n, &mut f);
            }
            t0 = t0.max(n);
            t1 = t1.min(f);
        }
        (t0 < t1).then_some((t0, t1))
    }
}

/// Trilinear stencil: eight node indices and weights.
#[derive(Debug, Clone, Copy, Default)]
pub struct Stencil {
    pub index: [usize; 8],
    pub weight: [f64; 8],
}

/// Dense voxel grid of raw densities and RGB colours. Nodes sit on a regular
/// lattice spanning the bounds corner to corner; density is `max(0, raw)`
/// and everything is zero outside the bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelRadianceField<T> {
    resolution: [usize; 3],
    bounds: Aabb,
    /// Pre-activation density per node, x fastest.
    pub density: Vec<T>,
    /// Three colour channels per node, in `[0, 1]`.
    pub color: Vec<T>,
}

impl<T: Scalar> VoxelRadianceField<T> {
    pub fn new(resolution: [usize; 3], bounds: Aabb) -> Result<Self> {
        bounds.validate()?;
        if resolution.iter().any(|&r| r < 2) {
            return Err(Error::config("voxel resolution must be at least 2 per axis"));
        }
        let n = resolution.iter().product::<usize>();
        Ok(Self {
            resolution,
            bounds,
            density: vec![T::zero(); n],
            color: vec![T::zero(); 3 * n],
        })
    }

    pub fn resolution(&self) -> [usize; 3] {
        self.resolution
    }

    pub fn bounds(&self) -> &Aabb {
        &self.bounds
    }

    pub fn num_nodes(&self) -> usize {
        self.density.len()
    }

    pub fn node_index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.resolution[1] + j) * self.resolution[0] + i
    }

    pub fn node_position(&self, node: usize) -> Vec3 {
        let [rx, ry, _] = self.resolution;
        let ijk = [node % rx, (node / rx) % ry, node / (rx * ry)];
        [0, 1, 2].map(|a| {
            self.bounds.min[a] + (self.bounds.max[a] - self.bounds.min[a]) * ijk[a] as f64 / (self.resolution[a] - 1) as f64
        })
    }

    /// `None` outside the bounds.
    pub fn stencil(&self, p: Vec3) -> Option<Stencil> {
        if !self.bounds.contains(p) {
            return None;
        }
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let n = self.resolution[a];
            let u = (p[a] - self.bounds.min[a]) / (self.bounds.max[a] - self.bounds.min[a]) * (n - 1) as f64;
            let i = (u.floor().max(0.0) as usize).min(n - 2);
            base[a] = i;
            frac[a] = u - i as f64;
        }
        let mut s = Stencil::default();
        for c in 0..8 {
            let (dx, dy, dz) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
            s.index[c] = self.node_index(base[0] + dx, base[1] + dy, base[2] + dz);
            s.weight[c] = (if dx == 1 { frac[0] } else { 1.0 - frac[0] })
                * (if dy == 1 { frac[1] } else { 1.0 - frac[1] })
                * (if dz == 1 { frac[2] } else { 1.0 - frac[2] });
        }
        Some(s)
    }

    /// Interpolated raw density and colour; zeros outside the bounds.
    pub fn raw_at(&self, p: Vec3) -> (f64, Vec3) {
        match self.stencil(p) {
            Some(s) => self.raw_with(&s),
            None => (0.0, [0.0; 3]),
        }
    }

    pub fn raw_with(&self, s: &Stencil) -> (f64, Vec3) {
        let mut raw = 0.0;
        let mut c = [0.0; 3];
        for k in 0..8 {
            let (i, w) = (s.index[k], s.weight[k]);
            raw += w * self.density[i].f64();
            for (ch, cv) in c.iter_mut().enumerate() {
                *cv += w * self.color[3 * i + ch].f64();
            }
        }
        (raw, c)
    }

    /// Density `max(0, raw)` and colour at a world point.
    pub fn query(&self, p: Vec3) -> (f64, Vec3) {
        let (raw, c) = self.raw_at(p);
        (raw.max(0.0), c)
    }

    pub fn all_finite(&self) -> bool {
        self.density.iter().chain(&self.color).all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> VoxelRadianceField<U> {
        VoxelRadianceField {
            resolution: self.resolution,
            bounds: self.bounds,
            density: self.density.iter().map(|v| U::of(v.f64())).collect(),
            color: self.color.iter().map(|v| U::of(v.f64())).collect(),
        }
    }

    /// Nodes whose position lies in `region` (closed box).
    pub fn nodes_in(&self, region: &Aabb) -> Vec<usize> {
        (0..self.num_nodes())
            .filter(|&n| region.contains(self.node_position(n)))
            .collect()
    }

    /// Flat parameter vector: densities, then colours.
    pub fn params(&self) -> Vec<T> {
        self.density.iter().chain(&self.color).copied().collect()
    }

    pub fn set_params(&mut self, params: &[T]) {
        let n = self.num_nodes();
        self.density.copy_from_slice(&params[..n]);
        self.color.copy_from_slice(&params[n..]);
    }

    /// Raw little-endian f32 dump: a `NPVF1` line, a header line
    /// `rx ry rz minx miny minz maxx maxy maxz`, then densities and colours.
    pub fn to_bytes(&self) -> Vec<u8> {
        let b = &self.bounds;
        let mut out = format!(
            "NPVF1\n{} {} {} {} {} {} {} {} {}\n",
            self.resolution[0], self.resolution[1], self.resolution[2], b.min[0], b.min[1], b.min[2], b.max[0], b.max[1], b.max[2]
        )
        .into_bytes();
        for v in self.density.iter().chain(&self.color) {
            out.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        }
        out
    }
}

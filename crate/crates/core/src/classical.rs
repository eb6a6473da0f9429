//! Discrete Poisson image editing on the pixel grid.
//!
//! Unknowns are the pixels of the placed region Ω in the source frame. The
//! 4-connected ring of pixels around Ω carries Dirichlet values taken from
//! the source, grid spacing is one pixel, and the five-point system is solved
//! per channel by Jacobi-preconditioned conjugate gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guidance::GuidanceMode;
use crate::raster::{to_pixel, Raster};
use crate::scalar::Scalar;

/// Relative-residual tolerance used by [`pie_blend`].
pub const PIE_TOLERANCE: f64 = 1e-8;

/// Boolean raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::usage(format!(
                "mask data has {} entries for a {width}x{height} raster",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Pixels with `x0 <= x < x1` and `y0 <= y < y1`.
    pub fn rect(width: usize, height: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        let data = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x0..x1).contains(&x) && (y0..y1).contains(&y)))
            .collect();
        Self {
            width,
            height,
            data,
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self::rect(width, height, 0, 0, width, height)
    }

    /// Set where the first channel is at least one half.
    pub fn from_raster<T: Scalar>(raster: &Raster<T>) -> Self {
        let c = raster.channels();
        Self {
            width: raster.width(),
            height: raster.height(),
            data: raster.data().chunks(c).map(|p| p[0].f64() >= 0.5).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

/// A target-frame mask placed into the source frame by an integer shift.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskRegion {
    mask: Mask,
    offset: [i64; 2],
    width: usize,
    height: usize,
    placed: Vec<bool>,
    interior: Vec<usize>,
    boundary: Vec<usize>,
}

impl MaskRegion {
    /// Target pixel `(x, y)` lands on source pixel `(x + offset[0], y + offset[1])`.
    ///
    /// The placed region must be non-empty and keep at least one pixel of
    /// margin to every edge of the `source_width × source_height` raster.
    pub fn new(mask: Mask, offset: [i64; 2], source_width: usize, source_height: usize) -> Result<Self> {
        let (w, h) = (source_width, source_height);
        let mut placed = vec![false; w * h];
        let mut interior = Vec::new();
        for ty in 0..mask.height {
            for tx in 0..mask.width {
                if !mask.get(tx, ty) {
                    continue;
                }
                let sx = tx as i64 + offset[0];
                let sy = ty as i64 + offset[1];
                if sx < 1 || sy < 1 || sx > w as i64 - 2 || sy > h as i64 - 2 {
                    return Err(Error::usage(format!(
                        "offset ({}, {}) puts mask pixel ({tx}, {ty}) within one pixel of the source edge or outside it",
                        offset[0], offset[1]
                    )));
                }
                placed[sy as usize * w + sx as usize] = true;
            }
        }
        if placed.iter().all(|&b| !b) {
            return Err(Error::usage("blend region is empty"));
        }
        for (i, &inside) in placed.iter().enumerate() {
            if inside {
                interior.push(i);
            }
        }
        let boundary = (0..w * h)
            .filter(|&i| {
                let (x, y) = (i % w, i / w);
                !placed[i]
                    && ((x > 0 && placed[i - 1])
                        || (x + 1 < w && placed[i + 1])
                        || (y > 0 && placed[i - w])
                        || (y + 1 < h && placed[i + w]))
            })
            .collect();
        Ok(Self {
            mask,
            offset,
            width: w,
            height: h,
            placed,
            interior,
            boundary,
        })
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn offset(&self) -> [i64; 2] {
        self.offset
    }

    pub fn source_width(&self) -> usize {
        self.width
    }

    pub fn source_height(&self) -> usize {
        self.height
    }

    /// Ω as source-frame pixel indices `y * width + x`, ascending.
    pub fn interior(&self) -> &[usize] {
        &self.interior
    }

    /// ∂Ω, the 4-connected exterior ring, as ascending pixel indices.
    pub fn boundary(&self) -> &[usize] {
        &self.boundary
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        self.placed[y * self.width + x]
    }

    /// Ω indicator in the source frame.
    pub fn placed(&self) -> &[bool] {
        &self.placed
    }

    /// The shift in normalized coordinates; equals the pixel offset when the
    /// target and source rasters have the same size.
    pub fn normalized_offset(&self) -> [f64; 2] {
        [
            2.0 * self.offset[0] as f64 / self.width as f64,
            2.0 * self.offset[1] as f64 / self.height as f64,
        ]
    }

    /// Bilinear interpolation of the Ω indicator at a normalized source-frame
    /// point, with nodes at pixel centres and clamping beyond the outer ones.
    pub fn membership(&self, x: f64, y: f64) -> f64 {
        let axis = |u: f64, n: usize| {
            let p = to_pixel(u, n).clamp(0.0, (n - 1) as f64);
            let i = (p.floor() as usize).min(n.saturating_sub(2));
            (i, p - i as f64)
        };
        let (ix, fx) = axis(x, self.width);
        let (iy, fy) = axis(y, self.height);
        let at = |xx: usize, yy: usize| {
            let xx = xx.min(self.width - 1);
            let yy = yy.min(self.height - 1);
            if self.placed[yy * self.width + xx] {
                1.0
            } else {
                0.0
            }
        };
        (1.0 - fy) * ((1.0 - fx) * at(ix, iy) + fx * at(ix + 1, iy))
            + fy * ((1.0 - fx) * at(ix, iy + 1) + fx * at(ix + 1, iy + 1))
    }

    pub fn is_inside(&self, x: f64, y: f64) -> bool {
        self.membership(x, y) >= 0.5
    }

    /// Pixels outside Ω whose centre lies within `radius` pixels of an Ω
    /// pixel centre.
    pub fn band(&self, radius: f64) -> Vec<usize> {
        let r = radius.ceil() as i64;
        let (w, h) = (self.width as i64, self.height as i64);
        (0..self.width * self.height)
            .filter(|&i| {
                if self.placed[i] {
                    return false;
                }
                let (x, y) = ((i % self.width) as i64, (i / self.width) as i64);
                (-r..=r).any(|dy| {
                    (-r..=r).any(|dx| {
                        let (nx, ny) = (x + dx, y + dy);
                        nx >= 0
                            && ny >= 0
                            && nx < w
                            && ny < h
                            && ((dx * dx + dy * dy) as f64) <= radius * radius
                            && self.placed[(ny * w + nx) as usize]
                    })
                })
            })
            .collect()
    }
}

/// Per-pixel vectors or scalars on a raster with unit spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteField {
    pub width: usize,
    pub height: usize,
    pub components: usize,
    pub data: Vec<f64>,
}

impl DiscreteField {
    pub fn zeros(width: usize, height: usize, components: usize) -> Self {
        Self {
            width,
            height,
            components,
            data: vec![0.0; width * height * components],
        }
    }

    /// Scalar field `f(x, y)`.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let data = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self {
            width,
            height,
            components: 1,
            data,
        }
    }

    /// One channel of a raster.
    pub fn channel<T: Scalar>(raster: &Raster<T>, c: usize) -> Self {
        Self::from_fn(raster.width(), raster.height(), |x, y| raster.get(x, y, c).f64())
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, k: usize) -> f64 {
        self.data[(y * self.width + x) * self.components + k]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, k: usize, v: f64) {
        self.data[(y * self.width + x) * self.components + k] = v;
    }
}

/// Forward difference along `axis`; zero on the last column or row.
fn forward_difference<T: Scalar>(img: &Raster<T>, x: usize, y: usize, c: usize, axis: usize) -> f64 {
    let (nx, ny) = if axis == 0 { (x + 1, y) } else { (x, y + 1) };
    if nx >= img.width() || ny >= img.height() {
        return 0.0;
    }
    img.get(nx, ny, c).f64() - img.get(x, y, c).f64()
}

fn check_inputs<T: Scalar>(source: &Raster<T>, target: &Raster<T>, region: &MaskRegion) -> Result<()> {
    if source.width() != region.width || source.height() != region.height {
        return Err(Error::usage("region was built for a different source size"));
    }
    if target.width() != region.mask.width || target.height() != region.mask.height {
        return Err(Error::usage("mask and target sizes differ"));
    }
    if source.channels() != target.channels() {
        return Err(Error::usage("source and target have different channel counts"));
    }
    if !source.is_finite() || !target.is_finite() {
        return Err(Error::usage("rasters must be finite"));
    }
    Ok(())
}

/// Discrete guidance `v` for one channel over the whole source frame.
///
/// Gradients are forward differences; the target is read at the source pixel
/// minus the offset and contributes zero where that falls off the target.
pub fn guidance_field<T: Scalar>(
    source: &Raster<T>,
    target: &Raster<T>,
    region: &MaskRegion,
    mode: GuidanceMode,
    channel: usize,
) -> Result<DiscreteField> {
    check_inputs(source, target, region)?;
    mode.validate()?;
    let (w, h) = (source.width(), source.height());
    let [ox, oy] = region.offset;
    let mut v = DiscreteField::zeros(w, h, 2);
    for y in 0..h {
        for x in 0..w {
            let tx = x as i64 - ox;
            let ty = y as i64 - oy;
            let in_target = tx >= 0 && ty >= 0 && (tx as usize) < target.width() && (ty as usize) < target.height();
            for axis in 0..2 {
                let gs = forward_difference(source, x, y, channel, axis);
                let gt = if in_target {
                    forward_difference(target, tx as usize, ty as usize, channel, axis)
                } else {
                    0.0
                };
                v.set(x, y, axis, mode.combine(gs, gt).0);
            }
        }
    }
    Ok(v)
}

/// Backward-difference divergence of a 2-vector field at one pixel.
fn divergence_at(v: &DiscreteField, x: usize, y: usize) -> f64 {
    let dx = v.get(x, y, 0) - if x > 0 { v.get(x - 1, y, 0) } else { 0.0 };
    let dy = v.get(x, y, 1) - if y > 0 { v.get(x, y - 1, 1) } else { 0.0 };
    dx + dy
}

/// Divergence of the guidance field over Ω, one scalar field per channel
/// (zero outside Ω).
pub fn build_rhs<T: Scalar>(
    source: &Raster<T>,
    target: &Raster<T>,
    region: &MaskRegion,
    mode: GuidanceMode,
) -> Result<Vec<DiscreteField>> {
    (0..source.channels())
        .map(|c| {
            let v = guidance_field(source, target, region, mode, c)?;
            let mut div = DiscreteField::zeros(region.width, region.height, 1);
            for &i in &region.interior {
                let (x, y) = (i % region.width, i / region.width);
                div.data[i] = divergence_at(&v, x, y);
            }
            Ok(div)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirichletSolution {
    /// The boundary field with Ω overwritten by the solution.
    pub field: DiscreteField,
    /// `‖b − Ax‖ / ‖b‖` at exit (zero when `b = 0`).
    pub relative_residual: f64,
    pub iterations: usize,
    /// False when `max_iter` ran out first; the field is still the last iterate.
    pub converged: bool,
}

/// Solves `Δ_h f = rhs` on Ω with `f = boundary` on ∂Ω.
pub fn solve_dirichlet(
    rhs: &DiscreteField,
    boundary: &DiscreteField,
    region: &MaskRegion,
    tol: f64,
    max_iter: usize,
) -> Result<DirichletSolution> {
    let (w, h) = (region.width, region.height);
    for (f, name) in [(rhs, "rhs"), (boundary, "boundary")] {
        if f.width != w || f.height != h || f.components != 1 {
            return Err(Error::usage(format!("{name} must be a scalar field of the source size")));
        }
        if f.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::usage(format!("{name} is not finite")));
        }
    }
    if !(tol > 0.0) {
        return Err(Error::usage("solver tolerance must be positive"));
    }
    let n = region.interior.len();
    let mut unknown = vec![usize::MAX; w * h];
    for (k, &i) in region.interior.iter().enumerate() {
        unknown[i] = k;
    }
    let neighbours = |i: usize| {
        let (x, y) = (i % w, i / w);
        [
            (x > 0).then(|| i - 1),
            (x + 1 < w).then(|| i + 1),
            (y > 0).then(|| i - w),
            (y + 1 < h).then(|| i + w),
        ]
    };

    // 4 f_q - Σ_{n ∈ Ω} f_n = Σ_{n ∈ ∂Ω} b_n - rhs_q
    let mut b = vec![0.0; n];
    for (k, &i) in region.interior.iter().enumerate() {
        let mut s = -rhs.data[i];
        for j in neighbours(i).into_iter().flatten() {
            if unknown[j] == usize::MAX {
                s += boundary.data[j];
            }
        }
        b[k] = s;
    }
    let apply = |x: &[f64], out: &mut [f64]| {
        for (k, &i) in region.interior.iter().enumerate() {
            let mut s = 4.0 * x[k];
            for j in neighbours(i).into_iter().flatten() {
                if unknown[j] != usize::MAX {
                    s -= x[unknown[j]];
                }
            }
            out[k] = s;
        }
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    let b_norm = dot(&b, &b).sqrt();
    let mut x = vec![0.0; n];
    let mut iterations = 0;
    let mut relative_residual = 0.0;
    if b_norm > 0.0 {
        // Jacobi: the diagonal is 4 everywhere.
        let precondition = |r: &[f64], z: &mut [f64]| {
            for (z, r) in z.iter_mut().zip(r) {
                *z = 0.25 * r;
            }
        };
        let mut r = b.clone();
        let mut z = vec![0.0; n];
        precondition(&r, &mut z);
        let mut p = z.clone();
        let mut ap = vec![0.0; n];
        let mut rz = dot(&r, &z);
        relative_residual = 1.0;
        while iterations < max_iter {
            apply(&p, &mut ap);
            let alpha = rz / dot(&p, &ap);
            for k in 0..n {
                x[k] += alpha * p[k];
                r[k] -= alpha * ap[k];
            }
            iterations += 1;
            relative_residual = dot(&r, &r).sqrt() / b_norm;
            if relative_residual <= tol {
                break;
            }
            precondition(&r, &mut z);
            let rz_next = dot(&r, &z);
            let beta = rz_next / rz;
            rz = rz_next;
            for k in 0..n {
                p[k] = z[k] + beta * p[k];
            }
        }
    }
    let mut field = boundary.clone();
    for (k, &i) in region.interior.iter().enumerate() {
        field.data[i] = x[k];
    }
    Ok(DirichletSolution {
        field,
        relative_residual,
        iterations,
        converged: relative_residual <= tol,
    })
}

/// Solver statistics for one channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub relative_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct PieBlend<T> {
    pub image: Raster<T>,
    pub channels: Vec<SolveStats>,
}

impl<T> PieBlend<T> {
    pub fn converged(&self) -> bool {
        self.channels.iter().all(|c| c.converged)
    }
}

/// Classical Poisson blend composited over the source. Pixels outside Ω are
/// copied from the source unchanged; inside values are not clamped.
pub fn pie_blend<T: Scalar>(
    source: &Raster<T>,
    target: &Raster<T>,
    region: &MaskRegion,
    mode: GuidanceMode,
) -> Result<PieBlend<T>> {
    let rhs = build_rhs(source, target, region, mode)?;
    let mut image = source.clone();
    let max_iter = 1000.max(4 * region.interior.len());
    let mut channels = Vec::with_capacity(rhs.len());
    for (c, rhs) in rhs.iter().enumerate() {
        let boundary = DiscreteField::channel(source, c);
        let sol = solve_dirichlet(rhs, &boundary, region, PIE_TOLERANCE, max_iter)?;
        for &i in &region.interior {
            let (x, y) = (i % region.width, i / region.width);
            image.set(x, y, c, T::of(sol.field.data[i]));
        }
        channels.push(SolveStats {
            relative_residual: sol.relative_residual,
            iterations: sol.iterations,
            converged: sol.converged,
        });
    }
    Ok(PieBlend { image, channels })
}

//! Quadrature volume rendering and the ROI-restricted triplet renderer.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::camera::{add_scaled, Camera, Ray, RoiBox};
use super::field::{Stencil, Vec3, VoxelRadianceField};
use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::scalar::Scalar;

/// Default ε of the colour mix.
pub const MIX_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Sampling {
    pub samples: usize,
    /// Fixed `(t_n, t_f)`; `None` clips each ray to the field bounds.
    pub range: Option<(f64, f64)>,
    /// Seed for stratified offsets; `None` takes bin midpoints.
    pub jitter: Option<u64>,
}

impl Default for Sampling {
    fn default() -> Self {
        Self {
            samples: 64,
            range: None,
            jitter: None,
        }
    }
}

impl Sampling {
    fn validate(&self) -> Result<()> {
        if self.samples < 2 {
            return Err(Error::usage("need at least 2 samples per ray"));
        }
        if let Some((tn, tf)) = self.range {
            if !(tn.is_finite() && tf.is_finite() && tn < tf) {
                return Err(Error::usage("sampling range needs t_n < t_f"));
            }
        }
        Ok(())
    }

    /// Sample distances and the common spacing, or `None` for a ray that
    /// misses the bounds.
    fn ray_samples(&self, ray: &Ray, bounds: &super::Aabb, rng: &mut Option<StdRng>) -> Option<(Vec<f64>, f64)> {
        let (tn, tf) = match self.range {
            Some(r) => r,
            None => {
                let (a, b) = bounds.intersect(ray.origin, ray.dir)?;
                (a.max(0.0), b)
            }
        };
        if tf <= tn {
            return None;
        }
        let delta = (tf - tn) / self.samples as f64;
        let ts = (0..self.samples)
            .map(|i| {
                let u = match rng {
                    Some(r) => r.random::<f64>(),
                    None => 0.5,
                };
                tn + (i as f64 + u) * delta
            })
            .collect();
        Some((ts, delta))
    }
}

/// `Σ T_i (1 − exp(−σ_i δ_i)) c_i` with `T_i = exp(−Σ_{j<i} σ_j δ_j)`.
pub fn composite(sigma: &[f64], color: &[Vec3], delta: &[f64]) -> Vec3 {
    let mut out = [0.0; 3];
    let mut optical = 0.0f64;
    for ((&s, c), &d) in sigma.iter().zip(color).zip(delta) {
        let w = (-optical).exp() * (1.0 - (-s * d).exp());
        for ch in 0..3 {
            out[ch] += w * c[ch];
        }
        optical += s * d;
    }
    out
}

/// Density mix `max(0, μ σ_G + φ σ_T)` over pre-activation values.
pub fn blend_sigma(sigma_g: f64, sigma_t: f64, mu: f64, phi: f64) -> f64 {
    (mu * sigma_g + phi * sigma_t).max(0.0)
}

/// Opacity-weighted colour mix `(μ c_G α_G + φ c_T α_T) / (ε + μ α_G + φ α_T)`.
pub fn blend_color(c_g: Vec3, alpha_g: f64, c_t: Vec3, alpha_t: f64, mu: f64, phi: f64, eps: f64) -> Vec3 {
    let d = eps + mu * alpha_g + phi * alpha_t;
    [0, 1, 2].map(|ch| (mu * c_g[ch] * alpha_g + phi * c_t[ch] * alpha_t) / d)
}

fn alpha(raw: f64, delta: f64) -> f64 {
    1.0 - (-raw.max(0.0) * delta).exp()
}

pub fn render<T: Scalar>(field: &VoxelRadianceField<T>, cam: &Camera, sampling: &Sampling) -> Result<Raster<T>> {
    cam.validate()?;
    sampling.validate()?;
    field.bounds().validate()?;
    let mut rng = sampling.jitter.map(StdRng::seed_from_u64);
    let mut img = Raster::zeros(cam.width, cam.height, 3);
    let n = sampling.samples;
    let mut sigma = vec![0.0; n];
    let mut color = vec![[0.0; 3]; n];
    for y in 0..cam.height {
        for x in 0..cam.width {
            let ray = cam.ray(x, y);
            let Some((ts, delta)) = sampling.ray_samples(&ray, field.bounds(), &mut rng) else {
                continue;
            };
            for (i, &t) in ts.iter().enumerate() {
                (sigma[i], color[i]) = field.query(add_scaled(ray.origin, ray.dir, t));
            }
            let c = composite(&sigma, &color, &vec![delta; n]);
            for ch in 0..3 {
                img.set(x, y, ch, T::of(c[ch]));
            }
        }
    }
    Ok(img)
}

/// Images rendered under identical rays, plus the per-pixel indicator of
/// rays with at least one sample inside the placed Ω.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiRender<T> {
    pub source: Raster<T>,
    pub target: Raster<T>,
    pub blend: Raster<T>,
    pub hits: Vec<bool>,
}

/// One sample of the blend inside the placed Ω, kept for the reverse pass.
struct InsideSample {
    stencil: Stencil,
    raw_g: f64,
    c_g: Vec3,
    raw_t: f64,
}

struct RaySamples {
    delta: f64,
    /// Blend density and colour per sample.
    sigma: Vec<f64>,
    color: Vec<Vec3>,
    inside: Vec<Option<InsideSample>>,
    source: Vec3,
    target: Vec3,
    hit: bool,
}

/// The fields and mixing weights of a triplet render.
pub struct RoiScene<'a, T> {
    pub source: &'a VoxelRadianceField<T>,
    pub target: &'a VoxelRadianceField<T>,
    pub blend: &'a VoxelRadianceField<T>,
    pub roi: &'a RoiBox,
    pub mu: f64,
    pub phi: f64,
    pub eps: f64,
}

impl<T: Scalar> RoiScene<'_, T> {
    pub fn validate(&self) -> Result<()> {
        validate_roi(self.source, self.target, self.roi)?;
        if self.blend.resolution() != self.source.resolution() || self.blend.bounds() != self.source.bounds() {
            return Err(Error::usage("blend field must share the source grid"));
        }
        if !(self.mu.is_finite() && self.phi.is_finite() && self.eps > 0.0) {
            return Err(Error::usage("mix weights must be finite and ε positive"));
        }
        Ok(())
    }

    fn march(&self, ray: &Ray, sampling: &Sampling, rng: &mut Option<StdRng>) -> Option<RaySamples> {
        let (ts, delta) = sampling.ray_samples(ray, self.source.bounds(), rng)?;
        let placed = self.roi.placed();
        let shift = self.roi.to_target();
        let n = ts.len();
        let mut s_sigma = Vec::with_capacity(n);
        let mut s_color = Vec::with_capacity(n);
        let mut t_sigma = Vec::with_capacity(n);
        let mut t_color = Vec::with_capacity(n);
        let mut out = RaySamples {
            delta,
            sigma: Vec::with_capacity(n),
            color: Vec::with_capacity(n),
            inside: Vec::with_capacity(n),
            source: [0.0; 3],
            target: [0.0; 3],
            hit: false,
        };
        for &t in &ts {
            let p = add_scaled(ray.origin, ray.dir, t);
            let (ss, sc) = self.source.query(p);
            s_sigma.push(ss);
            s_color.push(sc);
            if !placed.contains(p) {
                t_sigma.push(0.0);
                t_color.push([0.0; 3]);
                out.sigma.push(ss);
                out.color.push(sc);
                out.inside.push(None);
                continue;
            }
            out.hit = true;
            let q = add_scaled(p, shift, 1.0);
            let (raw_t, c_t) = self.target.raw_at(q);
            t_sigma.push(raw_t.max(0.0));
            t_color.push(c_t);
            let stencil = self.blend.stencil(p).expect("placed Ω lies inside the bounds");
            let (raw_g, c_g) = self.blend.raw_with(&stencil);
            out.sigma.push(blend_sigma(raw_g, raw_t, self.mu, self.phi));
            out.color.push(blend_color(
                c_g,
                alpha(raw_g, delta),
                c_t,
                alpha(raw_t, delta),
                self.mu,
                self.phi,
                self.eps,
            ));
            out.inside.push(Some(InsideSample {
                stencil,
                raw_g,
                c_g,
                raw_t,
            }));
        }
        let deltas = vec![delta; n];
        out.source = composite(&s_sigma, &s_color, &deltas);
        out.target = composite(&t_sigma, &t_color, &deltas);
        Some(out)
    }

    pub fn render(&self, cam: &Camera, sampling: &Sampling) -> Result<RoiRender<T>> {
        self.validate()?;
        cam.validate()?;
        sampling.validate()?;
        let mut rng = sampling.jitter.map(StdRng::seed_from_u64);
        let (w, h) = (cam.width, cam.height);
        let mut r = RoiRender {
            source: Raster::zeros(w, h, 3),
            target: Raster::zeros(w, h, 3),
            blend: Raster::zeros(w, h, 3),
            hits: vec![false; w * h],
        };
        for y in 0..h {
            for x in 0..w {
                let Some(s) = self.march(&cam.ray(x, y), sampling, &mut rng) else {
                    continue;
                };
                let g = if s.hit {
                    composite(&s.sigma, &s.color, &vec![s.delta; s.sigma.len()])
                } else {
                    s.source
                };
                r.hits[y * w + x] = s.hit;
                for ch in 0..3 {
                    r.source.set(x, y, ch, T::of(s.source[ch]));
                    r.target.set(x, y, ch, T::of(s.target[ch]));
                    r.blend.set(x, y, ch, T::of(g[ch]));
                }
            }
        }
        Ok(r)
    }

    /// Renders the triplet, calls `adjoint` with it to get `∂L/∂I_G`
    /// (`h × w × 3`, row-major) and accumulates `∂L/∂params` of the blend
    /// field into `grad` (densities, then colours).
    pub fn render_backward(
        &self,
        cam: &Camera,
        sampling: &Sampling,
        adjoint: impl FnOnce(&RoiRender<T>) -> Vec<f64>,
        grad: &mut [f64],
    ) -> Result<RoiRender<T>> {
        // Replays the identical jitter stream on the second march.
        let rendered = self.render(cam, sampling)?;
        let adj = adjoint(&rendered);
        let nodes = self.blend.num_nodes();
        let mut rng = sampling.jitter.map(StdRng::seed_from_u64);
        for y in 0..cam.height {
            for x in 0..cam.width {
                let Some(s) = self.march(&cam.ray(x, y), sampling, &mut rng) else {
                    continue;
                };
                let base = 3 * (y * cam.width + x);
                let g = [adj[base], adj[base + 1], adj[base + 2]];
                if !s.hit || g == [0.0; 3] {
                    continue;
                }
                self.backward_ray(&s, g, nodes, grad);
            }
        }
        Ok(rendered)
    }

    fn backward_ray(&self, s: &RaySamples, g: Vec3, nodes: usize, grad: &mut [f64]) {
        let n = s.sigma.len();
        let d = s.delta;
        let mut trans: Vec<f64> = Vec::with_capacity(n + 1);
        let mut weight = Vec::with_capacity(n);
        let mut optical = 0.0f64;
        for &sig in &s.sigma {
            let t = (-optical).exp();
            trans.push(t);
            weight.push(t * (1.0 - (-sig * d).exp()));
            optical += sig * d;
        }
        trans.push((-optical).exp());
        // Σ_{k>i} w_k c_k, filled from the back.
        let mut suffix = [0.0; 3];
        for i in (0..n).rev() {
            let c = s.color[i];
            if let Some(inside) = &s.inside[i] {
                let t_next = trans[i] * (-s.sigma[i] * d).exp();
                let dsigma: f64 = (0..3).map(|ch| g[ch] * d * (t_next * c[ch] - suffix[ch])).sum();
                let dcolor = [0, 1, 2].map(|ch| g[ch] * weight[i]);
                self.backward_sample(inside, d, c, dsigma, dcolor, nodes, grad);
            }
            for ch in 0..3 {
                suffix[ch] += weight[i] * c[ch];
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backward_sample(&self, s: &InsideSample, d: f64, c: Vec3, dsigma: f64, dcolor: Vec3, nodes: usize, grad: &mut [f64]) {
        let (mu, phi) = (self.mu, self.phi);
        let z = mu * s.raw_g + phi * s.raw_t;
        let mut draw = if z >= 0.0 { dsigma * mu } else { 0.0 };
        let alpha_g = alpha(s.raw_g, d);
        let denom = self.eps + mu * alpha_g + phi * alpha(s.raw_t, d);
        if s.raw_g >= 0.0 {
            let dalpha = d * (-s.raw_g * d).exp();
            draw += (0..3).map(|ch| dcolor[ch] * mu * (s.c_g[ch] - c[ch]) / denom).sum::<f64>() * dalpha;
        }
        let dcg = [0, 1, 2].map(|ch| dcolor[ch] * mu * alpha_g / denom);
        for k in 0..8 {
            let (node, w) = (s.stencil.index[k], s.stencil.weight[k]);
            grad[node] += w * draw;
            for ch in 0..3 {
                grad[nodes + 3 * node + ch] += w * dcg[ch];
            }
        }
    }
}

pub fn validate_roi<T: Scalar>(source: &VoxelRadianceField<T>, target: &VoxelRadianceField<T>, roi: &RoiBox) -> Result<()> {
    roi.region.validate()?;
    if !target.bounds().contains_box(&roi.region) {
        return Err(Error::usage("ROI box must lie inside the target bounds"));
    }
    if !source.bounds().contains_box(&roi.placed()) {
        return Err(Error::usage("placed ROI box must lie inside the source bounds"));
    }
    Ok(())
}

/// Triplet render with colour-mix ε fixed at [`MIX_EPSILON`].
#[allow(clippy::too_many_arguments)]
pub fn render_roi<T: Scalar>(
    source: &VoxelRadianceField<T>,
    target: &VoxelRadianceField<T>,
    blend: &VoxelRadianceField<T>,
    cam: &Camera,
    roi: &RoiBox,
    mu: f64,
    phi: f64,
    sampling: &Sampling,
) -> Result<RoiRender<T>> {
    RoiScene {
        source,
        target,
        blend,
        roi,
        mu,
        phi,
        eps: MIX_EPSILON,
    }
    .render(cam, sampling)
}

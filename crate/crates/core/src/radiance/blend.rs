//! Training a blend field from rendered triplets.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::camera::{sample_pose, Camera, PoseSampler, RoiBox};
use super::field::VoxelRadianceField;
use super::render::{validate_roi, RoiRender, RoiScene, Sampling, MIX_EPSILON};
use crate::error::{Error, Result};
use crate::guidance::GuidanceMode;
use crate::optim::{Adam, Schedule};
use crate::scalar::Scalar;
use crate::solver::MetricsTrace;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadianceSchedule {
    pub optimizer: Schedule,
    pub poses: PoseSampler,
    pub samples: usize,
    pub eps: f64,
    pub log_every: usize,
}

impl Default for RadianceSchedule {
    fn default() -> Self {
        Self {
            optimizer: Schedule {
                steps: 1500,
                lr: 0.05,
                lr_min: 1e-4,
                grid_lr_scale: 1.0,
            },
            poses: PoseSampler::default(),
            samples: 64,
            eps: MIX_EPSILON,
            log_every: 10,
        }
    }
}

/// Density and colour mix weights implied by a guidance mode: the affine
/// weights themselves, or `(1, 1)` in max mode.
pub fn mix_weights(mode: GuidanceMode) -> (f64, f64) {
    match mode {
        GuidanceMode::Affine { mu, phi } => (mu, phi),
        GuidanceMode::MaxMagnitude => (1.0, 1.0),
    }
}

/// Image-plane losses of one rendered triplet and `∂L/∂I_G`.
#[derive(Debug, Clone)]
pub struct ImageLoss {
    pub l_grad: f64,
    pub l_color: f64,
    pub adjoint: Vec<f64>,
}

/// The 2D losses on a rendered triplet, with the rays that reach the placed
/// Ω as the region. `L_grad` averages, over region pixels, the squared
/// forward-difference residual against guidance built from the source and
/// target renders; `L_color` averages the squared difference from the source
/// render over the remaining pixels. Adjoint is of `L_grad + λ L_color`.
pub fn image_loss<T: Scalar>(r: &RoiRender<T>, mode: GuidanceMode, lambda: f64) -> ImageLoss {
    let (w, h) = (r.blend.width(), r.blend.height());
    let mut adjoint = vec![0.0; w * h * 3];
    let inside = r.hits.iter().filter(|&&b| b).count();
    let outside = w * h - inside;
    let val = |img: &crate::raster::Raster<T>, x: usize, y: usize, c: usize| img.get(x, y, c).f64();
    let mut l_grad = 0.0;
    let mut l_color = 0.0;
    for y in 0..h {
        for x in 0..w {
            let here = y * w + x;
            if !r.hits[here] {
                if outside > 0 {
                    for c in 0..3 {
                        let d = val(&r.blend, x, y, c) - val(&r.source, x, y, c);
                        l_color += d * d / outside as f64;
                        adjoint[3 * here + c] += lambda * 2.0 * d / outside as f64;
                    }
                }
                continue;
            }
            for (nx, ny) in [(x + 1, y), (x, y + 1)] {
                if nx >= w || ny >= h {
                    continue;
                }
                let there = ny * w + nx;
                for c in 0..3 {
                    let fd = |img| val(img, nx, ny, c) - val(img, x, y, c);
                    let (v, _) = mode.combine(fd(&r.source), fd(&r.target));
                    let res = fd(&r.blend) - v;
                    l_grad += res * res / inside as f64;
                    let a = 2.0 * res / inside as f64;
                    adjoint[3 * there + c] += a;
                    adjoint[3 * here + c] -= a;
                }
            }
        }
    }
    ImageLoss { l_grad, l_color, adjoint }
}

/// Image losses averaged over `cams`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_views<T: Scalar>(
    source: &VoxelRadianceField<T>,
    target: &VoxelRadianceField<T>,
    blend: &VoxelRadianceField<T>,
    roi: &RoiBox,
    mode: GuidanceMode,
    lambda: f64,
    cams: &[Camera],
    sampling: &Sampling,
) -> Result<(f64, f64)> {
    let (mu, phi) = mix_weights(mode);
    let scene = RoiScene {
        source,
        target,
        blend,
        roi,
        mu,
        phi,
        eps: MIX_EPSILON,
    };
    let (mut g, mut c) = (0.0, 0.0);
    for cam in cams {
        let loss = image_loss(&scene.render(cam, sampling)?, mode, lambda);
        g += loss.l_grad;
        c += loss.l_color;
    }
    let n = cams.len().max(1) as f64;
    Ok((g / n, c / n))
}

#[derive(Debug, Clone)]
pub struct RadianceOutcome<T> {
    pub field: VoxelRadianceField<T>,
    pub trace: MetricsTrace,
}

/// Clones the source into a blend field and trains the voxels inside the
/// placed Ω on random views aimed at its centre.
pub fn blend_radiance<T: Scalar>(
    source: &VoxelRadianceField<T>,
    target: &VoxelRadianceField<T>,
    roi: &RoiBox,
    mode: GuidanceMode,
    lambda: f64,
    schedule: &RadianceSchedule,
    seed: u64,
) -> Result<RadianceOutcome<T>> {
    mode.validate()?;
    validate_roi(source, target, roi)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::usage("λ must be finite and non-negative"));
    }
    if !(source.all_finite() && target.all_finite()) {
        return Err(Error::usage("fields must have finite parameters"));
    }
    let (mu, phi) = mix_weights(mode);
    let mut g = source.clone();
    let nodes = g.num_nodes();
    let placed_nodes = g.nodes_in(&roi.placed());
    let trainable: Vec<usize> = placed_nodes
        .iter()
        .copied()
        .chain(placed_nodes.iter().flat_map(|&n| (0..3).map(move |c| nodes + 3 * n + c)))
        .collect();
    let color_range = nodes..4 * nodes;
    let mut params = g.params();
    let mut opt = Adam::new(params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = MetricsTrace::new(lambda);
    let mut grad = vec![0.0; params.len()];
    let steps = schedule.optimizer.steps;
    for step in 0..steps {
        let cam = sample_pose(&mut rng, roi, &schedule.poses)?;
        let sampling = Sampling {
            samples: schedule.samples,
            range: None,
            jitter: Some(seed ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
        };
        grad.iter_mut().for_each(|v| *v = 0.0);
        let mut losses = (0.0, 0.0);
        let scene = RoiScene {
            source,
            target,
            blend: &g,
            roi,
            mu,
            phi,
            eps: schedule.eps,
        };
        scene.render_backward(
            &cam,
            &sampling,
            |r| {
                let l = image_loss(r, mode, lambda);
                losses = (l.l_grad, l.l_color);
                l.adjoint
            },
            &mut grad,
        )?;
        let total = losses.0 + lambda * losses.1;
        if step % schedule.log_every.max(1) == 0 || step + 1 == steps {
            trace.push(step, losses.0, losses.1);
        }
        if !total.is_finite() || trainable.iter().any(|&i| !grad[i].is_finite()) {
            return Err(Error::Diverged {
                step,
                last_good: Some(g.to_bytes()),
            });
        }
        opt.step_indices(&mut params, &grad, schedule.optimizer.lr_at(step), &trainable);
        for &i in &trainable {
            if color_range.contains(&i) {
                params[i] = T::of(params[i].f64().clamp(0.0, 1.0));
            }
        }
        if trainable.iter().any(|&i| !params[i].is_finite()) {
            return Err(Error::Diverged {
                step,
                last_good: Some(g.to_bytes()),
            });
        }
        g.set_params(&params);
    }
    Ok(RadianceOutcome { field: g, trace })
}

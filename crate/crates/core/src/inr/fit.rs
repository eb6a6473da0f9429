//! Fitting a model to a raster by regression on pixel centres.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CoordBatch, InrModel, LossKind};
use crate::error::{Error, Result};
use crate::metrics::psnr_from_mse;
use crate::optim::{Adam, Schedule};
use crate::raster::Raster;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub schedule: Schedule,
    /// Pixels per step; `None` trains on the full raster every step.
    pub batch: Option<usize>,
    /// PSNR is recorded every `log_every` steps and after the last step.
    pub log_every: usize,
    pub seed: u64,
    /// Stop at the first logged step reaching this PSNR.
    pub target_psnr: Option<f64>,
    /// Train on uniformly jittered points inside the sampled pixel cells
    /// against the bilinear interpolant of the raster, instead of on pixel
    /// centres. Constrains the model between centres.
    pub jitter: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            schedule: Schedule {
                steps: 2000,
                lr: 2e-3,
                lr_min: 1e-6,
                grid_lr_scale: 10.0,
            },
            batch: Some(4096),
            log_every: 50,
            seed: 0,
            target_psnr: None,
            jitter: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome<T> {
    pub model: InrModel<T>,
    /// `(step, PSNR in dB)` over the full raster.
    pub psnr_trace: Vec<(usize, f64)>,
}

impl<T> FitOutcome<T> {
    pub fn final_psnr(&self) -> f64 {
        self.psnr_trace.last().map_or(f64::NAN, |p| p.1)
    }
}

/// Adam with cosine-annealed step size on the mean squared colour error at
/// pixel centres.
pub fn fit_image<T: Scalar>(
    model: InrModel<T>,
    image: &Raster<T>,
    opts: &FitOptions,
) -> Result<FitOutcome<T>> {
    let arch = model.arch();
    if arch.input_dim != 2 || arch.output_dim != image.channels() {
        return Err(Error::usage(format!(
            "a {}-channel raster needs a 2-d input, {}-d output model",
            image.channels(),
            image.channels()
        )));
    }
    if image
        .data()
        .iter()
        .any(|v| !(v.f64() >= 0.0 && v.f64() <= 1.0))
    {
        return Err(Error::usage("image values must lie in [0, 1]"));
    }
    let mut model = model;
    let pixels = image.width() * image.height();
    let channels = image.channels();
    let all_coords = CoordBatch::<T>::from_points(&image.pixel_centers());
    let batch = opts.batch.unwrap_or(pixels).min(pixels);
    let grid = model.grid_range();
    let mut adam = Adam::new(model.num_params());
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut trace = Vec::new();
    let log_every = opts.log_every.max(1);
    let full_psnr = |m: &InrModel<T>| -> Result<f64> {
        let mse = m.loss(LossKind::ValueMatch, &all_coords, image.data(), &[1.0, 1.0])?;
        Ok(psnr_from_mse(mse / channels as f64))
    };

    for step in 0..opts.schedule.steps {
        let (loss, grad) = if opts.jitter {
            let picks = sample(&mut rng, pixels, batch);
            let (w, h) = (image.width(), image.height());
            let mut coords = Vec::with_capacity(batch * 2);
            let mut targets = vec![T::zero(); batch * channels];
            for (k, p) in picks.iter().enumerate() {
                let x = -1.0 + 2.0 * ((p % w) as f64 + rng.random::<f64>()) / w as f64;
                let y = -1.0 + 2.0 * ((p / w) as f64 + rng.random::<f64>()) / h as f64;
                image.sample_bilinear(x, y, &mut targets[k * channels..(k + 1) * channels]);
                coords.push(T::of(x));
                coords.push(T::of(y));
            }
            model.param_gradient(LossKind::ValueMatch, &CoordBatch::new(2, coords)?, &targets)
        } else if batch == pixels {
            model.param_gradient(LossKind::ValueMatch, &all_coords, image.data())
        } else {
            let picks = sample(&mut rng, pixels, batch);
            let mut coords = Vec::with_capacity(batch * 2);
            let mut targets = Vec::with_capacity(batch * channels);
            for p in picks.iter() {
                coords.extend_from_slice(all_coords.point(p));
                targets.extend_from_slice(&image.data()[p * channels..(p + 1) * channels]);
            }
            model.param_gradient(LossKind::ValueMatch, &CoordBatch::new(2, coords)?, &targets)
        }
        .map_err(|e| match e {
            Error::Numeric { .. } => Error::Diverged {
                step,
                last_good: Some(model.to_checkpoint_bytes()),
            },
            other => other,
        })?;

        if step % log_every == 0 {
            let psnr = if batch == pixels && !opts.jitter {
                psnr_from_mse(loss / channels as f64)
            } else {
                full_psnr(&model)?
            };
            trace.push((step, psnr));
            if opts.target_psnr.is_some_and(|t| psnr >= t) {
                return Ok(FitOutcome {
                    model,
                    psnr_trace: trace,
                });
            }
        }

        let lr = opts.schedule.lr_at(step);
        let grid_lr = lr * opts.schedule.grid_lr_scale;
        adam.step(model.params_mut(), grad.as_slice(), |i| match &grid {
            Some(r) if r.contains(&i) => grid_lr,
            _ => lr,
        });
        if !model.all_finite() {
            return Err(Error::Diverged {
                step,
                last_good: None,
            });
        }
    }
    trace.push((opts.schedule.steps, full_psnr(&model)?));
    Ok(FitOutcome {
        model,
        psnr_trace: trace,
    })
}

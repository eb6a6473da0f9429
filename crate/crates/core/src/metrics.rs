//! Fidelity and Poisson-residual metrics.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::classical::{guidance_field, DiscreteField, MaskRegion};
use crate::error::{Error, Result};
use crate::guidance::GuidanceMode;
use crate::inr::InrModel;
use crate::raster::Raster;
use crate::scalar::Scalar;

/// Reported for identical inputs instead of an infinite PSNR.
pub const PSNR_CAP_DB: f64 = 99.0;

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
    }
}

/// `10 log10(1 / MSE)` over every sample of two equally shaped rasters.
pub fn psnr<T: Scalar>(a: &Raster<T>, b: &Raster<T>) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::usage(format!(
            "psnr of {}×{}×{} and {}×{}×{} rasters",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    let n = a.data().len().max(1) as f64;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x.f64() - y.f64()).powi(2))
        .sum::<f64>()
        / n;
    Ok(psnr_from_mse(mse))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverTag {
    Pie,
    Neural,
}

impl fmt::Display for SolverTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverTag::Pie => "pie",
            SolverTag::Neural => "neural",
        })
    }
}

/// Per-pixel Poisson residuals of a blended raster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    /// Mean over Ω pixels of `Σ_channels ‖∇blend − v‖²`, forward differences.
    pub grad: f64,
    /// Mean over background pixels of `Σ_channels (blend − source)²`.
    pub color: f64,
    pub mode: GuidanceMode,
    pub solver: SolverTag,
    /// PSNR of the blend against the source over the background.
    pub psnr_background: f64,
}

/// Residual metrics of `blend` against the discrete guidance built from
/// `source` and `target`.
pub fn residual_metrics<T: Scalar>(
    blend: &Raster<T>,
    source: &Raster<T>,
    target: &Raster<T>,
    region: &MaskRegion,
    mode: GuidanceMode,
    solver: SolverTag,
) -> Result<ResidualReport> {
    if !blend.same_shape(source) {
        return Err(Error::usage("blend and source frames differ"));
    }
    if !blend.is_finite() {
        return Err(Error::numeric("blend contains non-finite values", None));
    }
    let (w, h, channels) = (source.width(), source.height(), source.channels());
    let mut grad_sum = 0.0;
    for c in 0..channels {
        let v = guidance_field(source, target, region, mode, c)?;
        let b = DiscreteField::channel(blend, c);
        for &i in region.interior() {
            let (x, y) = (i % w, i / w);
            // Ω keeps a one-pixel margin, so both forward neighbours exist.
            let gx = b.get(x + 1, y, 0) - b.get(x, y, 0);
            let gy = b.get(x, y + 1, 0) - b.get(x, y, 0);
            grad_sum += (gx - v.get(x, y, 0)).powi(2) + (gy - v.get(x, y, 1)).powi(2);
        }
    }
    let placed = region.placed();
    let mut color_sum = 0.0;
    let mut background = 0usize;
    for i in 0..w * h {
        if placed[i] {
            continue;
        }
        background += 1;
        for c in 0..channels {
            let k = i * channels + c;
            color_sum += (blend.data()[k].f64() - source.data()[k].f64()).powi(2);
        }
    }
    let color = if background == 0 {
        0.0
    } else {
        color_sum / background as f64
    };
    Ok(ResidualReport {
        grad: grad_sum / region.interior().len() as f64,
        color,
        mode,
        solver,
        psnr_background: psnr_from_mse(color / channels as f64),
    })
}

/// [`residual_metrics`] of a model evaluated at the source's pixel centres.
pub fn residual_metrics_inr<T: Scalar>(
    blend: &InrModel<T>,
    source: &Raster<T>,
    target: &Raster<T>,
    region: &MaskRegion,
    mode: GuidanceMode,
    solver: SolverTag,
) -> Result<ResidualReport> {
    if blend.arch().output_dim != source.channels() {
        return Err(Error::usage("model and source channel counts differ"));
    }
    let raster = blend.rasterize(source.width(), source.height())?;
    residual_metrics(&raster, source, target, region, mode, solver)
}

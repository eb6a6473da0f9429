//! Finite-difference derivative backend, kept for cross-checking the exact
//! directional-derivative pass.

use super::{CoordBatch, InrModel};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Central-difference stencil evaluated along a set of directions.
///
/// With several `offsets` the estimates are combined by Richardson-style
/// averaging weights supplied by the caller; the default is a single step.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDifference {
    /// Step sizes `h` of the symmetric stencils `(f(x+hd) - f(x-hd)) / 2h`.
    pub offsets: Vec<f64>,
    /// Weight of each stencil in the combined estimate; must sum to one.
    pub weights: Vec<f64>,
    /// Unit directions; the default is the input axes.
    pub directions: Vec<Vec<f64>>,
}

impl FiniteDifference {
    pub fn axis_aligned(dim: usize, h: f64) -> Self {
        Self {
            offsets: vec![h],
            weights: vec![1.0],
            directions: (0..dim)
                .map(|a| (0..dim).map(|j| if j == a { 1.0 } else { 0.0 }).collect())
                .collect(),
        }
    }

    /// Fourth-order combination of steps `h` and `2h`.
    pub fn richardson(dim: usize, h: f64) -> Self {
        Self {
            offsets: vec![h, 2.0 * h],
            weights: vec![4.0 / 3.0, -1.0 / 3.0],
            ..Self::axis_aligned(dim, h)
        }
    }

    /// Directional derivatives, `n × output_dim × directions` row-major.
    /// The model is evaluated in `f64` regardless of its storage type.
    pub fn derivatives<T: Scalar>(
        &self,
        model: &InrModel<T>,
        batch: &CoordBatch<T>,
    ) -> Result<Vec<f64>> {
        let dim = batch.dim();
        if self.offsets.len() != self.weights.len() || self.offsets.is_empty() {
            return Err(Error::usage("one weight per stencil offset"));
        }
        if self.directions.iter().any(|d| d.len() != dim) {
            return Err(Error::usage("direction dimension does not match the batch"));
        }
        let wide = model.cast::<f64>();
        let out = model.arch().output_dim;
        let n = batch.len();
        let nd = self.directions.len();
        let mut result = vec![0.0; n * out * nd];
        for (&h, &w) in self.offsets.iter().zip(&self.weights) {
            for (k, dir) in self.directions.iter().enumerate() {
                let shifted = |sign: f64| -> Result<Vec<f64>> {
                    let pts: Vec<f64> = (0..n)
                        .flat_map(|i| {
                            batch
                                .point(i)
                                .iter()
                                .zip(dir)
                                .map(move |(x, d)| x.f64() + sign * h * d)
                        })
                        .collect();
                    wide.evaluate(&CoordBatch::new(dim, pts)?)
                };
                let plus = shifted(1.0)?;
                let minus = shifted(-1.0)?;
                for i in 0..n {
                    for o in 0..out {
                        let j = i * out + o;
                        result[(i * out + o) * nd + k] += w * (plus[j] - minus[j]) / (2.0 * h);
                    }
                }
            }
        }
        Ok(result)
    }
}

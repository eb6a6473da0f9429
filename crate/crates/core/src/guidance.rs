//! Guiding vector fields built from the gradients of a source and a target.
//!
//! The same per-component rule serves both the discrete baseline, which
//! feeds it forward differences, and the neural solver, which feeds it exact
//! derivatives of the fitted fields.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inr::{CoordBatch, InrModel};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum GuidanceMode {
    /// Per pixel, axis and channel, the component of larger magnitude.
    /// Ties keep the source.
    MaxMagnitude,
    /// `mu · ∇source + phi · ∇target`.
    Affine { mu: f64, phi: f64 },
}

impl Default for GuidanceMode {
    fn default() -> Self {
        GuidanceMode::Affine { mu: 1.0, phi: 1.0 }
    }
}

impl GuidanceMode {
    pub fn affine(mu: f64, phi: f64) -> Result<Self> {
        let mode = GuidanceMode::Affine { mu, phi };
        mode.validate()?;
        Ok(mode)
    }

    pub fn validate(&self) -> Result<()> {
        if let GuidanceMode::Affine { mu, phi } = *self {
            if !mu.is_finite() || !phi.is_finite() {
                return Err(Error::config("affine guidance weights must be finite"));
            }
            if mu == 0.0 && phi == 0.0 {
                return Err(Error::config("affine guidance needs a nonzero weight"));
            }
        }
        Ok(())
    }

    /// Combines one gradient component of each image. The flag is true when
    /// max mode picked the target.
    #[inline]
    pub fn combine(&self, source: f64, target: f64) -> (f64, bool) {
        match *self {
            GuidanceMode::MaxMagnitude => {
                if target.abs() > source.abs() {
                    (target, true)
                } else {
                    (source, false)
                }
            }
            GuidanceMode::Affine { mu, phi } => (mu * source + phi * target, false),
        }
    }
}

impl fmt::Display for GuidanceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GuidanceMode::MaxMagnitude => f.write_str("max"),
            GuidanceMode::Affine { mu, phi } => write!(f, "affine:{mu},{phi}"),
        }
    }
}

impl FromStr for GuidanceMode {
    type Err = Error;

    /// Accepts `max` or `affine:MU,PHI`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "max" {
            return Ok(GuidanceMode::MaxMagnitude);
        }
        let bad = || Error::usage(format!("guidance mode `{s}` is not `max` or `affine:MU,PHI`"));
        let weights = s.strip_prefix("affine:").ok_or_else(bad)?;
        let (mu, phi) = weights.split_once(',').ok_or_else(bad)?;
        let mu: f64 = mu.trim().parse().map_err(|_| bad())?;
        let phi: f64 = phi.trim().parse().map_err(|_| bad())?;
        GuidanceMode::affine(mu, phi).map_err(|e| Error::usage(e.to_string()))
    }
}

impl TryFrom<String> for GuidanceMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<GuidanceMode> for String {
    fn from(m: GuidanceMode) -> String {
        m.to_string()
    }
}

/// Guidance at one source-frame coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceSample {
    pub coord: Vec<f64>,
    /// `channels × dim`, row-major, in normalized-coordinate units.
    pub v: Vec<f64>,
    /// Max mode only: per component, whether the target was chosen.
    pub from_target: Option<Vec<bool>>,
}

/// Flat guidance `n × channels × dim` plus, in max mode, the choice flags.
pub(crate) fn guidance_values<T: Scalar>(
    source: &InrModel<T>,
    target: &InrModel<T>,
    coords: &CoordBatch<T>,
    offset: &[f64],
    mode: GuidanceMode,
) -> Result<(Vec<f64>, Vec<bool>)> {
    mode.validate()?;
    let dim = coords.dim();
    if offset.len() != dim {
        return Err(Error::usage(format!("offset is {}-d, coordinates are {dim}-d", offset.len())));
    }
    if source.arch().output_dim != target.arch().output_dim {
        return Err(Error::usage("source and target have different channel counts"));
    }
    let mut shifted = Vec::with_capacity(coords.as_slice().len());
    for (k, &x) in coords.as_slice().iter().enumerate() {
        let xs = x.f64();
        let xt = xs - offset[k % dim];
        if !(-1.0..=1.0).contains(&xs) || !(-1.0..=1.0).contains(&xt) {
            return Err(Error::usage(format!(
                "coordinate {} maps outside [-1, 1] in the source or target frame",
                k / dim
            )));
        }
        shifted.push(T::of(xt));
    }
    let js = source.spatial_jacobian(coords)?;
    let jt = target.spatial_jacobian(&CoordBatch::new(dim, shifted)?)?;
    let mut v = Vec::with_capacity(js.data.len());
    let mut flags = Vec::new();
    for (a, b) in js.data.iter().zip(&jt.data) {
        let (value, picked) = mode.combine(a.f64(), b.f64());
        v.push(value);
        if mode == GuidanceMode::MaxMagnitude {
            flags.push(picked);
        }
    }
    Ok((v, flags))
}

/// Guidance from the derivatives of fitted source and target fields.
///
/// `coords` are in the source frame; the target is queried at
/// `coord - offset`, so `offset` is the normalized translation that carries
/// the target's region onto its placement in the source.
pub fn guidance_at<T: Scalar>(
    source: &InrModel<T>,
    target: &InrModel<T>,
    coords: &CoordBatch<T>,
    offset: &[f64],
    mode: GuidanceMode,
) -> Result<Vec<GuidanceSample>> {
    let (v, flags) = guidance_values(source, target, coords, offset, mode)?;
    let per = source.arch().output_dim * coords.dim();
    Ok((0..coords.len())
        .map(|i| GuidanceSample {
            coord: coords.point(i).iter().map(|c| c.f64()).collect(),
            v: v[i * per..(i + 1) * per].to_vec(),
            from_target: (!flags.is_empty()).then(|| flags[i * per..(i + 1) * per].to_vec()),
        })
        .collect())
}

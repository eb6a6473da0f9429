//! Continuous coordinate networks (INRs).
//!
//! A model maps a point of `[-1, 1]^d` to an output vector through an
//! optional learnable grid encoding, a stack of activated affine layers and
//! a final affine read-out. Spatial derivatives are exact: every layer
//! carries the value together with one directional derivative per input
//! axis. Parameter gradients of the two supported objectives are computed by
//! a hand-written reverse sweep over that same forward pass.

mod checkpoint;
mod encoding;
mod finite_diff;
mod fit;
mod network;

use ndarray::{ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{pixel_centers, Raster};
use crate::scalar::Scalar;

pub use checkpoint::CHECKPOINT_MAGIC;
pub use finite_diff::FiniteDifference;
pub use fit::{fit_image, FitOptions, FitOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    /// `sin(ω · (Wx + b))` hidden layers.
    Sine { omega: f64 },
    /// ReLU hidden layers fed by a sinusoidal positional encoding with
    /// `num_frequencies` octaves per input axis.
    ReluPe { num_frequencies: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Encoding {
    None,
    /// Dense table of learnable latents, one per node of a regular grid whose
    /// nodes sit at pixel centres; off-node queries interpolate n-linearly.
    Grid {
        resolution: Vec<usize>,
        latent_dim: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub encoding: Encoding,
}

impl ArchSpec {
    /// Sine network with a grid encoding sized to a `width × height` raster.
    pub fn image(width: usize, height: usize) -> Self {
        Self {
            input_dim: 2,
            output_dim: 3,
            hidden: vec![64, 64, 64],
            activation: Activation::Sine { omega: 30.0 },
            encoding: Encoding::Grid {
                resolution: vec![width, height],
                latent_dim: 2,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::config("input and output dimensions must be at least 1"));
        }
        if let Some(w) = self.hidden.iter().position(|&w| w == 0) {
            return Err(Error::config(format!("hidden layer {w} has zero width")));
        }
        match self.activation {
            Activation::Sine { omega } if !(omega.is_finite() && omega > 0.0) => {
                return Err(Error::config(format!("sine frequency must be positive, got {omega}")))
            }
            Activation::ReluPe { .. } if matches!(self.encoding, Encoding::Grid { .. }) => {
                return Err(Error::config(
                    "positional encoding and grid encoding are mutually exclusive",
                ))
            }
            _ => {}
        }
        if let Encoding::Grid {
            resolution,
            latent_dim,
        } = &self.encoding
        {
            if resolution.len() != self.input_dim {
                return Err(Error::config(format!(
                    "grid has {} axes for a {}-d input",
                    resolution.len(),
                    self.input_dim
                )));
            }
            if resolution.iter().any(|&r| r < 2) {
                return Err(Error::config("grid resolution must be at least 2 per axis"));
            }
            if *latent_dim == 0 {
                return Err(Error::config("grid latent dimension must be at least 1"));
            }
        }
        Ok(())
    }

    /// Width of the vector fed to the first affine layer.
    pub fn encoded_dim(&self) -> usize {
        match (&self.encoding, self.activation) {
            (Encoding::Grid { latent_dim, .. }, _) => *latent_dim,
            (Encoding::None, Activation::ReluPe { num_frequencies }) => {
                self.input_dim * (1 + 2 * num_frequencies)
            }
            (Encoding::None, Activation::Sine { .. }) => self.input_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LayerLayout {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: usize,
    pub bias: usize,
    pub activated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct GridLayout {
    pub offset: usize,
    pub resolution: Vec<usize>,
    pub latent_dim: usize,
    pub nodes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub grid: Option<GridLayout>,
    pub layers: Vec<LayerLayout>,
    pub total: usize,
}

impl Layout {
    /// Parameter order: grid table (node-major, x fastest), then per layer the
    /// row-major `fan_out × fan_in` weights followed by the bias.
    fn of(arch: &ArchSpec) -> Self {
        let mut offset = 0;
        let grid = match &arch.encoding {
            Encoding::Grid {
                resolution,
                latent_dim,
            } => {
                let nodes: usize = resolution.iter().product();
                let g = GridLayout {
                    offset,
                    resolution: resolution.clone(),
                    latent_dim: *latent_dim,
                    nodes,
                };
                offset += nodes * latent_dim;
                Some(g)
            }
            Encoding::None => None,
        };
        let mut widths = vec![arch.encoded_dim()];
        widths.extend(&arch.hidden);
        widths.push(arch.output_dim);
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for (i, pair) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let weights = offset;
            let bias = weights + fan_in * fan_out;
            offset = bias + fan_out;
            layers.push(LayerLayout {
                fan_in,
                fan_out,
                weights,
                bias,
                activated: i + 1 < widths.len() - 1,
            });
        }
        Layout {
            grid,
            layers,
            total: offset,
        }
    }
}

/// Points in the normalized domain `[-1, 1]^dim`, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordBatch<T> {
    dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> CoordBatch<T> {
    pub fn new(dim: usize, data: Vec<T>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::usage(format!(
                "{} coordinates do not split into {dim}-d points",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::usage(format!("coordinate {} is not finite", i / dim)));
        }
        Ok(Self { dim, data })
    }

    pub fn from_points<const D: usize>(points: &[[f64; D]]) -> Self {
        Self {
            dim: D,
            data: points.iter().flatten().map(|&v| T::of(v)).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn point(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub(crate) fn view(&self) -> ArrayView2<'_, T> {
        ArrayView2::from_shape((self.len(), self.dim), &self.data).expect("flat batch shape")
    }
}

/// Per-point `output_dim × input_dim` derivative arrays, row-major per point.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobians<T> {
    pub output_dim: usize,
    pub input_dim: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Jacobians<T> {
    pub fn len(&self) -> usize {
        self.data.len() / (self.output_dim * self.input_dim)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn point(&self, i: usize) -> ArrayView2<'_, T> {
        let m = self.output_dim * self.input_dim;
        ArrayView2::from_shape((self.output_dim, self.input_dim), &self.data[i * m..(i + 1) * m])
            .expect("jacobian shape")
    }

    /// `∂ output[o] / ∂ x[axis]` at point `i`.
    #[inline]
    pub fn get(&self, i: usize, o: usize, axis: usize) -> T {
        self.data[(i * self.output_dim + o) * self.input_dim + axis]
    }
}

/// Derivatives of a scalar objective with respect to every model parameter,
/// laid out exactly like [`InrModel::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradient {
    data: Vec<f64>,
}

impl ParamGradient {
    pub fn zeros(n: usize) -> Self {
        Self { data: vec![0.0; n] }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `self += alpha · other`
    pub fn axpy(&mut self, alpha: f64, other: &ParamGradient) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// The two regression kernels a model can be trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Mean squared Euclidean distance between outputs and target vectors.
    ValueMatch,
    /// Mean squared Frobenius distance between spatial Jacobians and target
    /// `output_dim × input_dim` arrays.
    GradientMatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InrModel<T> {
    arch: ArchSpec,
    layout: Layout,
    params: Vec<T>,
}

impl<T: Scalar> InrModel<T> {
    /// Seeded initialization. Sine networks use the frequency-aware uniform
    /// scheme (first layer `±1/fan_in`, later layers `±sqrt(6/fan_in)/ω`);
    /// ReLU networks use He-uniform weights and zero biases. Grid latents
    /// start at their node coordinates so the untrained model behaves like
    /// the plain coordinate network.
    pub fn init(arch: ArchSpec, seed: u64) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::of(&arch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![T::zero(); layout.total];

        if let Some(g) = &layout.grid {
            for node in 0..g.nodes {
                let mut rest = node;
                for j in 0..g.latent_dim {
                    let v = if j < g.resolution.len() {
                        let r = g.resolution[j];
                        let k = rest % r;
                        rest /= r;
                        crate::raster::pixel_center(k, r)
                    } else {
                        rng.random_range(-1.0..1.0)
                    };
                    params[g.offset + node * g.latent_dim + j] = T::of(v);
                }
            }
        }

        for (l, layer) in layout.layers.iter().enumerate() {
            let fan_in = layer.fan_in as f64;
            let (w_bound, b_bound) = match arch.activation {
                Activation::Sine { omega } => {
                    let w = if l == 0 {
                        1.0 / fan_in
                    } else {
                        (6.0 / fan_in).sqrt() / omega
                    };
                    (w, 1.0 / fan_in.sqrt())
                }
                Activation::ReluPe { .. } => ((6.0 / fan_in).sqrt(), 0.0),
            };
            for p in &mut params[layer.weights..layer.bias] {
                *p = T::of(rng.random_range(-w_bound..=w_bound));
            }
            if b_bound > 0.0 {
                for p in &mut params[layer.bias..layer.bias + layer.fan_out] {
                    *p = T::of(rng.random_range(-b_bound..=b_bound));
                }
            }
        }
        Ok(Self {
            arch,
            layout,
            params,
        })
    }

    pub fn from_params(arch: ArchSpec, params: Vec<T>) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::of(&arch);
        if params.len() != layout.total {
            return Err(Error::config(format!(
                "architecture needs {} parameters, got {}",
                layout.total,
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::numeric("non-finite parameter", None));
        }
        Ok(Self {
            arch,
            layout,
            params,
        })
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn num_layers(&self) -> usize {
        self.layout.layers.len()
    }

    /// Parameter index range of the grid table, if the model has one.
    pub fn grid_range(&self) -> Option<std::ops::Range<usize>> {
        self.layout
            .grid
            .as_ref()
            .map(|g| g.offset..g.offset + g.nodes * g.latent_dim)
    }

    pub fn weights(&self, layer: usize) -> ArrayView2<'_, T> {
        let l = &self.layout.layers[layer];
        ArrayView2::from_shape((l.fan_out, l.fan_in), &self.params[l.weights..l.bias])
            .expect("layer shape")
    }

    pub fn bias(&self, layer: usize) -> ArrayView1<'_, T> {
        let l = &self.layout.layers[layer];
        ArrayView1::from(&self.params[l.bias..l.bias + l.fan_out])
    }

    /// Overwrites one affine layer.
    pub fn set_layer(&mut self, layer: usize, weights: &[T], bias: &[T]) -> Result<()> {
        let l = self
            .layout
            .layers
            .get(layer)
            .ok_or_else(|| Error::usage(format!("no layer {layer}")))?
            .clone();
        if weights.len() != l.fan_in * l.fan_out || bias.len() != l.fan_out {
            return Err(Error::usage(format!(
                "layer {layer} is {}×{}",
                l.fan_out, l.fan_in
            )));
        }
        self.params[l.weights..l.bias].copy_from_slice(weights);
        self.params[l.bias..l.bias + l.fan_out].copy_from_slice(bias);
        Ok(())
    }

    /// Latent stored at grid node `node` (flat, x fastest).
    pub fn grid_latent(&self, node: usize) -> Option<&[T]> {
        let g = self.layout.grid.as_ref()?;
        let start = g.offset + node * g.latent_dim;
        self.params.get(start..start + g.latent_dim)
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Same parameters in another scalar type.
    pub fn cast<U: Scalar>(&self) -> InrModel<U> {
        InrModel {
            arch: self.arch.clone(),
            layout: self.layout.clone(),
            params: self.params.iter().map(|p| U::of(p.f64())).collect(),
        }
    }

    fn check_dim(&self, batch: &CoordBatch<T>) -> Result<()> {
        if batch.dim() != self.arch.input_dim {
            return Err(Error::usage(format!(
                "batch is {}-d, model expects {}-d input",
                batch.dim(),
                self.arch.input_dim
            )));
        }
        Ok(())
    }

    /// One `output_dim` vector per coordinate, flattened.
    pub fn evaluate(&self, batch: &CoordBatch<T>) -> Result<Vec<T>> {
        self.check_dim(batch)?;
        let out = network::evaluate(self, batch.view(), false).values;
        if let Some(i) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(
                "non-finite model output",
                Some(i / self.arch.output_dim),
            ));
        }
        Ok(out)
    }

    /// Exact spatial Jacobians by directional-derivative propagation, one
    /// direction per input axis.
    ///
    /// ReLU layers use the right derivative at a kink (`d relu(0) = 1`); grid
    /// encodings use the cell on the positive side of a node, except at the
    /// last node of an axis, and report zero derivative where a query is
    /// clamped outside the node range.
    pub fn spatial_jacobian(&self, batch: &CoordBatch<T>) -> Result<Jacobians<T>> {
        self.check_dim(batch)?;
        let out = network::evaluate(self, batch.view(), true);
        if let Some(i) = out.jacobians.iter().position(|v| !v.is_finite()) {
            let per = self.arch.output_dim * self.arch.input_dim;
            return Err(Error::numeric("non-finite spatial derivative", Some(i / per)));
        }
        Ok(Jacobians {
            output_dim: self.arch.output_dim,
            input_dim: self.arch.input_dim,
            data: out.jacobians,
        })
    }

    /// Evaluates a 2-d model at every pixel centre of a `width × height` raster.
    pub fn rasterize(&self, width: usize, height: usize) -> Result<Raster<T>> {
        if self.arch.input_dim != 2 {
            return Err(Error::usage("only 2-d models rasterize"));
        }
        let values = self.evaluate(&CoordBatch::from_points(&pixel_centers(width, height)))?;
        Raster::from_vec(width, height, self.arch.output_dim, values)
    }

    /// Values and Jacobians from a single pass.
    pub fn evaluate_with_jacobian(&self, batch: &CoordBatch<T>) -> Result<(Vec<T>, Jacobians<T>)> {
        self.check_dim(batch)?;
        let out = network::evaluate(self, batch.view(), true);
        Ok((
            out.values,
            Jacobians {
                output_dim: self.arch.output_dim,
                input_dim: self.arch.input_dim,
                data: out.jacobians,
            },
        ))
    }

    /// Loss and its exact parameter gradient for one objective kernel.
    ///
    /// `targets` holds `output_dim` values per coordinate for
    /// [`LossKind::ValueMatch`] and `output_dim × input_dim` values (row-major)
    /// for [`LossKind::GradientMatch`].
    pub fn param_gradient(
        &self,
        kind: LossKind,
        coords: &CoordBatch<T>,
        targets: &[T],
    ) -> Result<(f64, ParamGradient)> {
        let ones = vec![1.0; self.arch.input_dim];
        self.param_gradient_scaled(kind, coords, targets, &ones)
    }

    /// As [`param_gradient`](Self::param_gradient), with the Jacobian's column
    /// `a` multiplied by `axis_scale[a]` before comparison. Used to express
    /// derivatives in pixel units rather than normalized units.
    pub fn param_gradient_scaled(
        &self,
        kind: LossKind,
        coords: &CoordBatch<T>,
        targets: &[T],
        axis_scale: &[f64],
    ) -> Result<(f64, ParamGradient)> {
        self.check_dim(coords)?;
        if coords.is_empty() {
            return Err(Error::usage("parameter gradient needs at least one target"));
        }
        if axis_scale.len() != self.arch.input_dim {
            return Err(Error::usage("one axis scale per input dimension"));
        }
        let per = match kind {
            LossKind::ValueMatch => self.arch.output_dim,
            LossKind::GradientMatch => self.arch.output_dim * self.arch.input_dim,
        };
        if targets.len() != coords.len() * per {
            return Err(Error::usage(format!(
                "expected {per} target values per coordinate, got {} for {} coordinates",
                targets.len(),
                coords.len()
            )));
        }
        let (loss, grad) = network::param_gradient(self, kind, coords.view(), targets, axis_scale);
        if !loss.is_finite() || !grad.is_finite() {
            return Err(Error::numeric("non-finite loss or gradient", None));
        }
        Ok((loss, grad))
    }

    /// Mean-squared loss without the gradient.
    pub fn loss(
        &self,
        kind: LossKind,
        coords: &CoordBatch<T>,
        targets: &[T],
        axis_scale: &[f64],
    ) -> Result<f64> {
        self.check_dim(coords)?;
        if coords.is_empty() {
            return Err(Error::usage("loss needs at least one target"));
        }
        let n = coords.len() as f64;
        let sum: f64 = match kind {
            LossKind::ValueMatch => {
                let out = self.evaluate(coords)?;
                out.iter()
                    .zip(targets)
                    .map(|(o, t)| (o.f64() - t.f64()).powi(2))
                    .sum()
            }
            LossKind::GradientMatch => {
                let jac = self.spatial_jacobian(coords)?;
                let d = self.arch.input_dim;
                jac.data
                    .iter()
                    .zip(targets)
                    .enumerate()
                    .map(|(k, (j, t))| (axis_scale[k % d] * j.f64() - t.f64()).powi(2))
                    .sum()
            }
        };
        Ok(sum / n)
    }
}

/// Deterministic model for `(arch, seed)`.
pub fn init_model<T: Scalar>(arch: ArchSpec, seed: u64) -> Result<InrModel<T>> {
    InrModel::init(arch, seed)
}

#[cfg(test)]
mod tests;

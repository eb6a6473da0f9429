//! Batched forward pass with directional derivatives and the matching
//! reverse sweep.
//!
//! Activations are stacked row-wise: for a chunk of `n` points and `d` input
//! axes the first `n` rows carry values and each following block of `n` rows
//! carries the derivative along one axis. One matrix product per layer then
//! advances values and derivatives together.

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

use super::encoding::{encode, grid_backward, GridCache};
use super::{Activation, InrModel, LossKind, ParamGradient};
use crate::scalar::Scalar;

/// Points per chunk. Fixed so that reductions always happen in the same order.
pub(crate) const CHUNK: usize = 1024;

pub(crate) struct Evaluation<T> {
    pub values: Vec<T>,
    /// `n × output_dim × input_dim`, empty unless requested.
    pub jacobians: Vec<T>,
}

struct Pass<T> {
    n: usize,
    grid: Option<GridCache<T>>,
    inputs: Vec<Array2<T>>,
    pre: Vec<Array2<T>>,
    /// Activation derivative at the value rows of each hidden layer.
    slope: Vec<Array2<T>>,
    output: Array2<T>,
}

fn forward<T: Scalar>(model: &InrModel<T>, coords: ArrayView2<'_, T>, tangents: bool) -> Pass<T> {
    let n = coords.nrows();
    let (mut x, grid) = encode(model, coords, tangents);
    let layers = &model.layout.layers;
    let mut inputs = Vec::with_capacity(layers.len());
    let mut pre = Vec::with_capacity(layers.len());
    let mut slope = Vec::with_capacity(layers.len());
    for (l, layer) in layers.iter().enumerate() {
        let mut p = x.dot(&model.weights(l).t());
        let bias = model.bias(l);
        for mut row in p.slice_mut(s![..n, ..]).rows_mut() {
            row.zip_mut_with(&bias, |v, &b| *v = *v + b);
        }
        inputs.push(x);
        if !layer.activated {
            return Pass {
                n,
                grid,
                inputs,
                pre,
                slope,
                output: p,
            };
        }
        let (z, d) = activate(model.arch().activation, &p, n);
        pre.push(p);
        slope.push(d);
        x = z;
    }
    unreachable!("the read-out layer is never activated")
}

fn activate<T: Scalar>(act: Activation, p: &Array2<T>, n: usize) -> (Array2<T>, Array2<T>) {
    let pv = p.slice(s![..n, ..]);
    let mut z = Array2::<T>::zeros(p.raw_dim());
    let mut d = Array2::<T>::zeros(pv.raw_dim());
    match act {
        Activation::Sine { omega } => {
            let w = T::of(omega);
            Zip::from(z.slice_mut(s![..n, ..]))
                .and(&mut d)
                .and(&pv)
                .for_each(|z, d, &p| {
                    let (sn, cs) = (w * p).sin_cos();
                    *z = sn;
                    *d = w * cs;
                });
        }
        Activation::ReluPe { .. } => {
            Zip::from(z.slice_mut(s![..n, ..]))
                .and(&mut d)
                .and(&pv)
                .for_each(|z, d, &p| {
                    // Right derivative at the kink.
                    if p >= T::zero() {
                        *z = p;
                        *d = T::one();
                    } else {
                        *z = T::zero();
                        *d = T::zero();
                    }
                });
        }
    }
    let blocks = p.nrows() / n;
    for b in 1..blocks {
        let rows = s![b * n..(b + 1) * n, ..];
        Zip::from(z.slice_mut(rows))
            .and(p.slice(rows))
            .and(&d)
            .for_each(|z, &p, &d| *z = d * p);
    }
    (z, d)
}

/// Reverse sweep from the adjoint of the stacked output into `grad`.
fn backward<T: Scalar>(model: &InrModel<T>, pass: &Pass<T>, mut adj: Array2<T>, grad: &mut [f64]) {
    let n = pass.n;
    let layers = &model.layout.layers;
    for l in (0..layers.len()).rev() {
        let layer = &layers[l];
        let pbar = if layer.activated {
            hidden_adjoint(
                model.arch().activation,
                &adj,
                &pass.pre[l],
                &pass.slope[l],
                &pass.inputs[l + 1],
                n,
            )
        } else {
            adj
        };
        let gw = pbar.t().dot(&pass.inputs[l]);
        for (g, v) in grad[layer.weights..layer.bias].iter_mut().zip(gw.iter()) {
            *g += v.f64();
        }
        let gb = pbar.slice(s![..n, ..]).sum_axis(Axis(0));
        for (g, v) in grad[layer.bias..layer.bias + layer.fan_out]
            .iter_mut()
            .zip(gb.iter())
        {
            *g += v.f64();
        }
        if l == 0 && pass.grid.is_none() {
            return;
        }
        adj = pbar.dot(&model.weights(l));
    }
    if let (Some(grid), Some(cache)) = (&model.layout.grid, &pass.grid) {
        let d = model.arch().input_dim;
        grid_backward(grid, cache, &adj, n, d, grad);
    }
}

/// Adjoint of a hidden layer's pre-activation given the adjoint of its output.
///
/// For `z = σ(p)` and `t_a = σ'(p) · q_a` (with `q_a` the pre-activation
/// derivative block) the value rows also collect `t̄_a · σ''(p) · q_a`.
fn hidden_adjoint<T: Scalar>(
    act: Activation,
    adj: &Array2<T>,
    pre: &Array2<T>,
    slope: &Array2<T>,
    out: &Array2<T>,
    n: usize,
) -> Array2<T> {
    let mut pbar = Array2::<T>::zeros(adj.raw_dim());
    let blocks = adj.nrows() / n;
    Zip::from(pbar.slice_mut(s![..n, ..]))
        .and(adj.slice(s![..n, ..]))
        .and(slope)
        .for_each(|pb, &a, &d| *pb = a * d);
    for b in 1..blocks {
        let rows = s![b * n..(b + 1) * n, ..];
        Zip::from(pbar.slice_mut(rows))
            .and(adj.slice(rows))
            .and(slope)
            .for_each(|pb, &a, &d| *pb = a * d);
        if let Activation::Sine { omega } = act {
            let w2 = T::of(omega * omega);
            let (mut values, _) = pbar.view_mut().split_at(Axis(0), n);
            Zip::from(&mut values)
                .and(adj.slice(rows))
                .and(pre.slice(rows))
                .and(out.slice(s![..n, ..]))
                .for_each(|pb, &a, &q, &sn| *pb = *pb - a * w2 * sn * q);
        }
    }
    pbar
}

pub(crate) fn evaluate<T: Scalar>(
    model: &InrModel<T>,
    coords: ArrayView2<'_, T>,
    jacobians: bool,
) -> Evaluation<T> {
    let (total, d) = coords.dim();
    let out_dim = model.arch().output_dim;
    let mut values = Vec::with_capacity(total * out_dim);
    let mut jac = Vec::with_capacity(if jacobians { total * out_dim * d } else { 0 });
    let mut start = 0;
    while start < total {
        let end = (start + CHUNK).min(total);
        let pass = forward(model, coords.slice(s![start..end, ..]), jacobians);
        let n = end - start;
        values.extend(pass.output.slice(s![..n, ..]).iter().copied());
        if jacobians {
            for i in 0..n {
                for o in 0..out_dim {
                    for a in 0..d {
                        jac.push(pass.output[[(1 + a) * n + i, o]]);
                    }
                }
            }
        }
        start = end;
    }
    Evaluation {
        values,
        jacobians: jac,
    }
}

pub(crate) fn param_gradient<T: Scalar>(
    model: &InrModel<T>,
    kind: LossKind,
    coords: ArrayView2<'_, T>,
    targets: &[T],
    axis_scale: &[f64],
) -> (f64, ParamGradient) {
    let (total, d) = coords.dim();
    let out_dim = model.arch().output_dim;
    let norm = 1.0 / total as f64;
    let mut grad = ParamGradient::zeros(model.num_params());
    let mut loss = 0.0;
    let mut start = 0;
    while start < total {
        let end = (start + CHUNK).min(total);
        let n = end - start;
        let pass = forward(
            model,
            coords.slice(s![start..end, ..]),
            kind == LossKind::GradientMatch,
        );
        let mut adj = Array2::<T>::zeros(pass.output.raw_dim());
        match kind {
            LossKind::ValueMatch => {
                for i in 0..n {
                    for o in 0..out_dim {
                        let r = pass.output[[i, o]].f64() - targets[(start + i) * out_dim + o].f64();
                        loss += r * r;
                        adj[[i, o]] = T::of(2.0 * r * norm);
                    }
                }
            }
            LossKind::GradientMatch => {
                for i in 0..n {
                    for o in 0..out_dim {
                        for (a, &scale) in axis_scale.iter().enumerate() {
                            let row = (1 + a) * n + i;
                            let target = targets[((start + i) * out_dim + o) * d + a].f64();
                            let r = scale * pass.output[[row, o]].f64() - target;
                            loss += r * r;
                            adj[[row, o]] = T::of(2.0 * r * scale * norm);
                        }
                    }
                }
            }
        }
        backward(model, &pass, adj, grad.as_mut_slice());
        start = end;
    }
    (loss * norm, grad)
}

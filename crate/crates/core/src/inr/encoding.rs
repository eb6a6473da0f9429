//! Input encodings: identity, sinusoidal positional encoding, and the
//! interpolated latent grid.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2};

use super::{Activation, GridLayout, InrModel};
use crate::scalar::Scalar;

/// Corner indices, interpolation weights and their coordinate derivatives for
/// every query of a batch.
pub(crate) struct GridCache<T> {
    pub corners: usize,
    pub index: Vec<usize>,
    pub weight: Vec<T>,
    /// `corners × dim` per query.
    pub dweight: Vec<T>,
}

struct AxisCell {
    base: usize,
    frac: f64,
    /// `d frac / d x`, zero where the query is clamped.
    slope: f64,
}

fn locate(x: f64, resolution: usize) -> AxisCell {
    let r = resolution as f64;
    let u = (x + 1.0) * 0.5 * r - 0.5;
    let last = resolution - 1;
    if u < 0.0 {
        AxisCell {
            base: 0,
            frac: 0.0,
            slope: 0.0,
        }
    } else if u > last as f64 {
        AxisCell {
            base: last - 1,
            frac: 1.0,
            slope: 0.0,
        }
    } else {
        let base = (u.floor() as usize).min(last - 1);
        AxisCell {
            base,
            frac: u - base as f64,
            slope: 0.5 * r,
        }
    }
}

/// Interpolation stencil of a single query.
pub(crate) fn grid_stencil(
    grid: &GridLayout,
    x: &[f64],
    index: &mut Vec<usize>,
    weight: &mut Vec<f64>,
    dweight: &mut Vec<f64>,
) {
    let d = grid.resolution.len();
    let cells: Vec<AxisCell> = x
        .iter()
        .zip(&grid.resolution)
        .map(|(&xi, &r)| locate(xi, r))
        .collect();
    for corner in 0..(1usize << d) {
        let mut node = 0;
        let mut stride = 1;
        let mut w = 1.0;
        for (j, cell) in cells.iter().enumerate() {
            let bit = (corner >> j) & 1;
            node += (cell.base + bit) * stride;
            stride *= grid.resolution[j];
            w *= if bit == 1 { cell.frac } else { 1.0 - cell.frac };
        }
        index.push(node);
        weight.push(w);
        for a in 0..d {
            let mut dw = cells[a].slope * if (corner >> a) & 1 == 1 { 1.0 } else { -1.0 };
            for (j, cell) in cells.iter().enumerate() {
                if j != a {
                    dw *= if (corner >> j) & 1 == 1 {
                        cell.frac
                    } else {
                        1.0 - cell.frac
                    };
                }
            }
            dweight.push(dw);
        }
    }
}

/// Encodes `coords` (`n × d`) into the stacked layout used by the network:
/// rows `0..n` hold values, rows `(1 + a)·n..(2 + a)·n` the derivative with
/// respect to input axis `a` (present only when `tangents`).
pub(crate) fn encode<T: Scalar>(
    model: &InrModel<T>,
    coords: ArrayView2<'_, T>,
    tangents: bool,
) -> (Array2<T>, Option<GridCache<T>>) {
    let (n, d) = coords.dim();
    let k = if tangents { 1 + d } else { 1 };
    let arch = model.arch();
    match (&model.layout.grid, arch.activation) {
        (Some(grid), _) => {
            let latent = grid.latent_dim;
            let corners = 1usize << d;
            let mut index = Vec::with_capacity(n * corners);
            let mut wf = Vec::with_capacity(n * corners);
            let mut dwf = Vec::with_capacity(n * corners * d);
            let mut x = vec![0.0; d];
            for i in 0..n {
                for (j, xj) in x.iter_mut().enumerate() {
                    *xj = coords[[i, j]].f64();
                }
                grid_stencil(grid, &x, &mut index, &mut wf, &mut dwf);
            }
            let weight: Vec<T> = wf.iter().map(|&v| T::of(v)).collect();
            let dweight: Vec<T> = dwf.iter().map(|&v| T::of(v)).collect();
            let table = &model.params[grid.offset..grid.offset + grid.nodes * latent];
            let mut out = Array2::<T>::zeros((k * n, latent));
            for i in 0..n {
                for c in 0..corners {
                    let node = index[i * corners + c];
                    let lat = &table[node * latent..(node + 1) * latent];
                    let w = weight[i * corners + c];
                    for (m, &l) in lat.iter().enumerate() {
                        out[[i, m]] = out[[i, m]] + w * l;
                    }
                    if tangents {
                        for a in 0..d {
                            let dw = dweight[(i * corners + c) * d + a];
                            for (m, &l) in lat.iter().enumerate() {
                                let r = (1 + a) * n + i;
                                out[[r, m]] = out[[r, m]] + dw * l;
                            }
                        }
                    }
                }
            }
            (
                out,
                Some(GridCache {
                    corners,
                    index,
                    weight,
                    dweight,
                }),
            )
        }
        (None, Activation::ReluPe { num_frequencies }) => {
            let width = d * (1 + 2 * num_frequencies);
            let mut out = Array2::<T>::zeros((k * n, width));
            for i in 0..n {
                for j in 0..d {
                    let xj = coords[[i, j]].f64();
                    out[[i, j]] = coords[[i, j]];
                    if tangents {
                        out[[(1 + j) * n + i, j]] = T::one();
                    }
                    for f in 0..num_frequencies {
                        let freq = (1u64 << f) as f64 * PI;
                        let col = d + 2 * (f * d + j);
                        let (s, c) = (freq * xj).sin_cos();
                        out[[i, col]] = T::of(s);
                        out[[i, col + 1]] = T::of(c);
                        if tangents {
                            let r = (1 + j) * n + i;
                            out[[r, col]] = T::of(freq * c);
                            out[[r, col + 1]] = T::of(-freq * s);
                        }
                    }
                }
            }
            (out, None)
        }
        (None, Activation::Sine { .. }) => {
            let mut out = Array2::<T>::zeros((k * n, d));
            out.slice_mut(ndarray::s![..n, ..]).assign(&coords);
            if tangents {
                for a in 0..d {
                    for i in 0..n {
                        out[[(1 + a) * n + i, a]] = T::one();
                    }
                }
            }
            (out, None)
        }
    }
}

/// Scatters the adjoint of the stacked encoding into the grid-table gradient.
pub(crate) fn grid_backward<T: Scalar>(
    grid: &GridLayout,
    cache: &GridCache<T>,
    adjoint: &Array2<T>,
    n: usize,
    d: usize,
    grad: &mut [f64],
) {
    let latent = grid.latent_dim;
    let tangents = adjoint.nrows() > n;
    let corners = cache.corners;
    for i in 0..n {
        for c in 0..corners {
            let node = cache.index[i * corners + c];
            let w = cache.weight[i * corners + c].f64();
            let base = grid.offset + node * latent;
            for m in 0..latent {
                let mut g = w * adjoint[[i, m]].f64();
                if tangents {
                    for a in 0..d {
                        let dw = cache.dweight[(i * corners + c) * d + a].f64();
                        g += dw * adjoint[[(1 + a) * n + i, m]].f64();
                    }
                }
                grad[base + m] += g;
            }
        }
    }
}

//! Finite differences and low-pass filtering along the axes of a tensor grid.
//!
//! Interior nodes use centred stencils; nodes near an edge use one-sided
//! stencils of the same width, so every row is exact for polynomials of degree
//! below the stencil width.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::TensorGrid;

/// Accuracy order of the first-derivative stencils on label axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum Stencil {
    Second,
    Fourth,
}

impl Stencil {
    pub fn order(self) -> usize {
        match self {
            Stencil::Second => 2,
            Stencil::Fourth => 4,
        }
    }

    /// Number of points in each stencil row.
    pub fn width(self) -> usize {
        self.order() + 1
    }

    /// Nodes on each side that a centred row reaches.
    pub fn half_width(self) -> usize {
        self.order() / 2
    }
}

impl TryFrom<u32> for Stencil {
    type Error = String;
    fn try_from(v: u32) -> Result<Self, String> {
        match v {
            2 => Ok(Stencil::Second),
            4 => Ok(Stencil::Fourth),
            _ => Err(format!("stencil order must be 2 or 4, got {v}")),
        }
    }
}

impl From<Stencil> for u32 {
    fn from(s: Stencil) -> u32 {
        s.order() as u32
    }
}

/// Fornberg's recursion: weights for the `m`-th derivative at `z` from samples at `x`.
pub fn fd_weights(z: f64, x: &[f64], m: usize) -> Vec<f64> {
    let n = x.len();
    let mut c = vec![vec![0.0; m + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = x[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = x[i] - z;
        for j in 0..i {
            let c3 = x[i] - x[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[m]).collect()
}

/// First-derivative rows for every position within a window, unit spacing.
#[derive(Debug, Clone)]
struct Rows {
    width: usize,
    /// `weights[offset]` differentiates at window point `offset`.
    weights: Vec<Vec<f64>>,
}

impl Rows {
    fn first_derivative(stencil: Stencil) -> Self {
        let width = stencil.width();
        let pts: Vec<f64> = (0..width).map(|i| i as f64).collect();
        let weights = (0..width).map(|o| fd_weights(o as f64, &pts, 1)).collect();
        Rows { width, weights }
    }
}

/// Window start and offset of node index `i` on an axis of length `n`.
#[inline]
fn window(i: usize, n: usize, width: usize) -> (usize, usize) {
    let half = width / 2;
    let start = i.saturating_sub(half).min(n - width);
    (start, i - start)
}

/// Derivative of a scalar node field along `axis`.
pub fn derivative(grid: &TensorGrid, field: &[f64], axis: usize, stencil: Stencil) -> Vec<f64> {
    let mut out = vec![0.0; field.len()];
    derivative_into(grid, field, axis, stencil, &mut out);
    out
}

pub fn derivative_into(grid: &TensorGrid, field: &[f64], axis: usize, stencil: Stencil, out: &mut [f64]) {
    debug_assert_eq!(field.len(), grid.len());
    let rows = Rows::first_derivative(stencil);
    let ax = grid.axis(axis);
    let n = ax.len;
    let stride = grid.stride(axis);
    let inv_h = 1.0 / ax.step;
    assert!(n >= rows.width, "axis {axis} shorter than stencil");
    out.par_iter_mut().enumerate().for_each(|(node, o)| {
        let i = (node / stride) % n;
        let (start, offset) = window(i, n, rows.width);
        let base = node - i * stride + start * stride;
        let w = &rows.weights[offset];
        let mut s = 0.0;
        for (j, wj) in w.iter().enumerate() {
            s += wj * field[base + j * stride];
        }
        *o = s * inv_h;
    });
}

/// Explicit low-pass filter of even order `2p` along `axis`.
///
/// Each node is corrected by `strength * (-1)^p delta^(2p) f / 4^p`, which damps the
/// grid-scale mode by `1 - strength` and leaves polynomials of degree below `2p`
/// untouched (including at the edges, where the difference window is shifted inward).
pub fn filter_along(grid: &TensorGrid, field: &mut [f64], axis: usize, order: usize, strength: f64) {
    let p = order / 2;
    let width = 2 * p + 1;
    let ax = grid.axis(axis);
    let n = ax.len;
    if n < width || strength == 0.0 {
        return;
    }
    let stride = grid.stride(axis);
    let binom: Vec<f64> = (0..width)
        .map(|k| {
            let c = binomial(2 * p, k) as f64;
            if k % 2 == 0 {
                c
            } else {
                -c
            }
        })
        .collect();
    let scale = strength * if p % 2 == 0 { 1.0 } else { -1.0 } / 4f64.powi(p as i32);
    let src = field.to_vec();
    field.par_iter_mut().enumerate().for_each(|(node, f)| {
        let i = (node / stride) % n;
        let start = i.saturating_sub(p).min(n - width);
        let base = node - i * stride + start * stride;
        let mut d = 0.0;
        for (k, b) in binom.iter().enumerate() {
            d += b * src[base + k * stride];
        }
        *f -= scale * d;
    });
}

fn binomial(n: usize, k: usize) -> u64 {
    (0..k).fold(1u64, |acc, i| acc * (n - i) as u64 / (i as u64 + 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Axis;

    fn grid1(n: usize, lo: f64, hi: f64) -> TensorGrid {
        TensorGrid::new(vec![Axis::new(lo, hi, n)])
    }

    #[test]
    fn fornberg_reproduces_textbook_rows() {
        let w = fd_weights(2.0, &[0.0, 1.0, 2.0, 3.0, 4.0], 1);
        let want = [1.0 / 12.0, -2.0 / 3.0, 0.0, 2.0 / 3.0, -1.0 / 12.0];
        for (a, b) in w.iter().zip(want) {
            assert!((a - b).abs() < 1e-14);
        }
        let w = fd_weights(0.0, &[0.0, 1.0, 2.0, 3.0, 4.0], 1);
        let want = [-25.0 / 12.0, 4.0, -3.0, 4.0 / 3.0, -0.25];
        for (a, b) in w.iter().zip(want) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn exact_for_low_degree_polynomials() {
        let g = grid1(9, -1.0, 2.0);
        let f: Vec<f64> = g.axis(0).coords().map(|x| 1.0 - 2.0 * x + 0.5 * x.powi(4)).collect();
        let d = derivative(&g, &f, 0, Stencil::Fourth);
        for (i, x) in g.axis(0).coords().enumerate() {
            assert!((d[i] - (-2.0 + 2.0 * x.powi(3))).abs() < 1e-12);
        }
        let f: Vec<f64> = g.axis(0).coords().map(|x| 3.0 * x * x).collect();
        let d = derivative(&g, &f, 0, Stencil::Second);
        for (i, x) in g.axis(0).coords().enumerate() {
            assert!((d[i] - 6.0 * x).abs() < 1e-12);
        }
    }

    #[test]
    fn observed_order_matches_stencil() {
        for stencil in [Stencil::Second, Stencil::Fourth] {
            let mut errs = vec![];
            for n in [41, 81, 161] {
                let g = grid1(n, 0.0, 2.0);
                let f: Vec<f64> = g.axis(0).coords().map(|x| (1.3 * x).sin()).collect();
                let d = derivative(&g, &f, 0, stencil);
                let e = g
                    .axis(0)
                    .coords()
                    .zip(&d)
                    .map(|(x, di)| (di - 1.3 * (1.3 * x).cos()).abs())
                    .fold(0.0, f64::max);
                errs.push(e);
            }
            for w in errs.windows(2) {
                let order = (w[0] / w[1]).log2();
                assert!((order - stencil.order() as f64).abs() < 0.3, "{stencil:?}: {order}");
            }
        }
    }

    #[test]
    fn derivative_along_second_axis() {
        let g = TensorGrid::new(vec![Axis::new(0.0, 1.0, 6), Axis::new(-1.0, 1.0, 7)]);
        let f: Vec<f64> = (0..g.len())
            .map(|n| {
                let x = g.coords(n);
                x[0] * x[1] * x[1]
            })
            .collect();
        let d = derivative(&g, &f, 1, Stencil::Fourth);
        for n in 0..g.len() {
            let x = g.coords(n);
            assert!((d[n] - 2.0 * x[0] * x[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn filter_keeps_smooth_fields_and_kills_checkerboard() {
        let g = grid1(21, -1.0, 1.0);
        let mut f: Vec<f64> = g.axis(0).coords().map(|x| 2.0 + x - 0.3 * x.powi(5)).collect();
        let before = f.clone();
        filter_along(&g, &mut f, 0, 6, 1.0);
        for (a, b) in f.iter().zip(&before) {
            assert!((a - b).abs() < 1e-12);
        }
        let mut c: Vec<f64> = (0..21).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        filter_along(&g, &mut c, 0, 6, 1.0);
        // interior grid-scale mode removed entirely
        assert!(c[10].abs() < 1e-12);
    }
}

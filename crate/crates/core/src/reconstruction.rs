//! From trajectories back to the wavefunction.
//!
//! `psi(x,t) = sqrt(rho0 / J) exp(i S / hbar)` evaluated at the label `a(x,t)` whose
//! trajectory passes through `x`. The label is found by Newton iteration on the
//! multilinear interpolant of `q(a)`; amplitude and phase are then interpolated
//! with cubic Lagrange polynomials on the label grid.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lagrangian::{self, EngineConfig};
use crate::linalg;
use crate::model::{LabelGrid, PhysicalSystem, SpatialGrid, TrajectoryField, WavefunctionField};

pub const MAX_NEWTON_ITERATIONS: usize = 50;
/// Inversion residual tolerance relative to the size of the label domain.
pub const RELATIVE_RESIDUAL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InversionStatus {
    Converged,
    Outside,
    NotConverged,
}

/// Labels `a(x,t)` for every node of a spatial grid.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseMap {
    pub t: f64,
    pub dim: usize,
    /// D values per spatial node; meaningful only where `status` is `Converged`.
    pub labels: Vec<f64>,
    pub status: Vec<InversionStatus>,
    pub residuals: Vec<f64>,
}

impl InverseMap {
    pub fn converged_count(&self) -> usize {
        self.status.iter().filter(|s| **s == InversionStatus::Converged).count()
    }
}

/// Where the reconstructed phase is pinned.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Gauge {
    /// Reference point; defaults to the current position of the central label.
    pub point: Option<Vec<f64>>,
    /// Phase (radians) assigned at the reference point.
    pub phase: f64,
}

/// Weights of the 4-point Lagrange polynomial through nodes 0..3 at `s`.
fn lagrange4(s: f64) -> [f64; 4] {
    [
        -(s - 1.0) * (s - 2.0) * (s - 3.0) / 6.0,
        s * (s - 2.0) * (s - 3.0) / 2.0,
        -s * (s - 1.0) * (s - 3.0) / 2.0,
        s * (s - 1.0) * (s - 2.0) / 6.0,
    ]
}

/// Precomputed trajectory data for evaluating the reconstructed wavefunction.
#[derive(Debug, Clone)]
pub struct Reconstructor {
    grid: LabelGrid,
    t: f64,
    dim: usize,
    hbar: f64,
    positions: Vec<f64>,
    matrices: Vec<f64>,
    /// `ln(rho0 / J)` per node.
    log_density: Vec<f64>,
    action: Vec<f64>,
    velocities: Vec<f64>,
    phase_offset: f64,
    floor: f64,
    tolerance: f64,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Reconstructor {
    pub fn new(
        field: &TrajectoryField,
        grid: &LabelGrid,
        system: &PhysicalSystem,
        cfg: &EngineConfig,
        gauge: &Gauge,
    ) -> Result<Self> {
        let defo = lagrangian::deformation(field, grid, cfg)?;
        let log_density: Vec<f64> =
            field.log_rho0.iter().zip(&defo.jacobian).map(|(lr, j)| lr - j.ln()).collect();
        let max_rho0 = field.rho0.iter().copied().fold(0.0, f64::max);
        let lower: Vec<f64> = grid.axes().iter().map(|a| a.start).collect();
        let upper: Vec<f64> = grid.axes().iter().map(|a| a.end()).collect();
        let extent = lower.iter().zip(&upper).map(|(l, u)| u - l).fold(0.0, f64::max);
        let mut rec = Reconstructor {
            grid: grid.clone(),
            t: field.t,
            dim: field.dim,
            hbar: system.hbar,
            positions: field.positions.clone(),
            matrices: defo.matrices,
            log_density,
            action: field.action.clone(),
            velocities: field.velocities.clone(),
            phase_offset: 0.0,
            floor: cfg.density_floor * max_rho0,
            tolerance: RELATIVE_RESIDUAL * extent,
            lower,
            upper,
        };
        let reference = match &gauge.point {
            None => rec.action[grid.center_node()],
            Some(x) => {
                let a = rec.invert(x)?;
                rec.interpolate_label_field(&a).1
            }
        };
        rec.phase_offset = gauge.phase * system.hbar - reference;
        Ok(rec)
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    /// Multilinear interpolation of `q` and of the deformation matrix at label `a`.
    pub fn forward(&self, a: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim;
        let mut base = 0usize;
        let mut frac = vec![0.0; d];
        for (k, ax) in self.grid.axes().iter().enumerate() {
            let u = ((a[k] - ax.start) / ax.step).clamp(0.0, (ax.len - 1) as f64);
            let i = (u.floor() as usize).min(ax.len - 2);
            frac[k] = u - i as f64;
            base += i * self.grid.stride(k);
        }
        let mut q = vec![0.0; d];
        let mut f = vec![0.0; d * d];
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut node = base;
            for k in 0..d {
                if corner >> k & 1 == 1 {
                    w *= frac[k];
                    node += self.grid.stride(k);
                } else {
                    w *= 1.0 - frac[k];
                }
            }
            if w == 0.0 {
                continue;
            }
            for i in 0..d {
                q[i] += w * self.positions[node * d + i];
            }
            for (fi, mi) in f.iter_mut().zip(&self.matrices[node * d * d..(node + 1) * d * d]) {
                *fi += w * mi;
            }
        }
        (q, f)
    }

    fn residual(&self, a: &[f64], x: &[f64]) -> (Vec<f64>, f64, Vec<f64>) {
        let (q, f) = self.forward(a);
        let r: Vec<f64> = q.iter().zip(x).map(|(q, x)| q - x).collect();
        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        (r, norm, f)
    }

    fn nearest_node(&self, x: &[f64]) -> usize {
        let d = self.dim;
        let mut best = (f64::INFINITY, 0);
        for (node, q) in self.positions.chunks_exact(d).enumerate() {
            let dist: f64 = q.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            if dist < best.0 {
                best = (dist, node);
            }
        }
        best.1
    }

    /// Label whose trajectory passes through `x` at the current time.
    pub fn invert(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.invert_with_residual(x).map(|(a, _)| a)
    }

    fn invert_with_residual(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        let d = self.dim;
        let mut a = self.grid.coords(self.nearest_node(x));
        let mut pinned = 0;
        let mut last = f64::INFINITY;
        for _ in 0..MAX_NEWTON_ITERATIONS {
            let (r, norm, f) = self.residual(&a, x);
            if norm < self.tolerance {
                return Ok((a, norm));
            }
            last = norm;
            let Some(step) = linalg::solve(&f, d, &r) else { break };
            let mut clamped = false;
            for k in 0..d {
                let next = a[k] - step[k];
                a[k] = next.clamp(self.lower[k], self.upper[k]);
                clamped |= a[k] != next;
            }
            pinned = if clamped { pinned + 1 } else { 0 };
            if pinned >= 3 {
                return Err(Error::OutsideCongruence(x.to_vec()));
            }
        }
        if d == 1 {
            return self.bisect(x);
        }
        Err(Error::NoConvergence { point: x.to_vec(), residual: last })
    }

    /// Monotone one-dimensional fallback.
    fn bisect(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        let (mut lo, mut hi) = (self.lower[0], self.upper[0]);
        let g = |a: f64| self.forward(&[a]).0[0] - x[0];
        let (glo, ghi) = (g(lo), g(hi));
        if glo > self.tolerance || ghi < -self.tolerance {
            return Err(Error::OutsideCongruence(x.to_vec()));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let gm = g(mid);
            if gm.abs() < self.tolerance {
                return Ok((vec![mid], gm.abs()));
            }
            if gm < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Err(Error::NoConvergence { point: x.to_vec(), residual: g(0.5 * (lo + hi)).abs() })
    }

    /// Tensor-product 4-point Lagrange weights at label `a`.
    fn label_stencil(&self, a: &[f64]) -> Vec<(usize, f64)> {
        let mut stencil = vec![(0usize, 1.0f64)];
        for (k, ax) in self.grid.axes().iter().enumerate() {
            let u = (a[k] - ax.start) / ax.step;
            let start = (u.floor() as i64 - 1).clamp(0, ax.len as i64 - 4) as usize;
            let w = lagrange4(u - start as f64);
            let stride = self.grid.stride(k);
            stencil = stencil
                .iter()
                .flat_map(|&(node, wn)| (0..4).map(move |j| (node + (start + j) * stride, wn * w[j])))
                .collect();
        }
        stencil
    }

    /// Cubic interpolation of `(ln(rho0/J), S)` at label `a`.
    fn interpolate_label_field(&self, a: &[f64]) -> (f64, f64) {
        let mut l = 0.0;
        let mut s = 0.0;
        for (node, w) in self.label_stencil(a) {
            l += w * self.log_density[node];
            s += w * self.action[node];
        }
        (l, s)
    }

    /// Cubic interpolation of the trajectory velocity at label `a`.
    pub fn velocity_at_label(&self, a: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut v = vec![0.0; d];
        for (node, w) in self.label_stencil(a) {
            for (vi, ni) in v.iter_mut().zip(&self.velocities[node * d..(node + 1) * d]) {
                *vi += w * ni;
            }
        }
        v
    }

    /// Wavefunction at a label.
    pub fn psi_at_label(&self, a: &[f64]) -> Complex64 {
        let (l, s) = self.interpolate_label_field(a);
        if l.exp() <= self.floor {
            return Complex64::new(0.0, 0.0);
        }
        Complex64::from_polar((0.5 * l).exp(), (s + self.phase_offset) / self.hbar)
    }

    /// Wavefunction at a configuration point.
    pub fn psi_at(&self, x: &[f64]) -> Result<Complex64> {
        let a = self.invert(x)?;
        Ok(self.psi_at_label(&a))
    }

    pub fn inverse_map(&self, spatial: &SpatialGrid) -> InverseMap {
        let d = self.dim;
        let results: Vec<(InversionStatus, Vec<f64>, f64)> = (0..spatial.len())
            .into_par_iter()
            .map(|node| {
                let x = spatial.coords(node);
                match self.invert_with_residual(&x) {
                    Ok((a, r)) => (InversionStatus::Converged, a, r),
                    Err(Error::OutsideCongruence(_)) => (InversionStatus::Outside, vec![f64::NAN; d], f64::NAN),
                    Err(Error::NoConvergence { residual, .. }) => {
                        (InversionStatus::NotConverged, vec![f64::NAN; d], residual)
                    }
                    Err(_) => (InversionStatus::NotConverged, vec![f64::NAN; d], f64::NAN),
                }
            })
            .collect();
        let mut map = InverseMap {
            t: self.t,
            dim: d,
            labels: Vec::with_capacity(spatial.len() * d),
            status: Vec::with_capacity(spatial.len()),
            residuals: Vec::with_capacity(spatial.len()),
        };
        for (s, a, r) in results {
            map.status.push(s);
            map.labels.extend(a);
            map.residuals.push(r);
        }
        map
    }

    /// Reconstructed wavefunction on `spatial`; points outside the image of the
    /// label grid carry no probability and are set to zero.
    pub fn wavefunction(&self, spatial: &SpatialGrid) -> Result<(WavefunctionField, InverseMap)> {
        let map = self.inverse_map(spatial);
        if let Some(node) = map.status.iter().position(|s| *s == InversionStatus::NotConverged) {
            return Err(Error::NoConvergence { point: spatial.coords(node), residual: map.residuals[node] });
        }
        let d = self.dim;
        let values = (0..spatial.len())
            .map(|node| match map.status[node] {
                InversionStatus::Converged => self.psi_at_label(&map.labels[node * d..(node + 1) * d]),
                _ => Complex64::new(0.0, 0.0),
            })
            .collect();
        Ok((WavefunctionField { t: self.t, grid: spatial.clone(), values }, map))
    }

    /// Hybrid function of particle `r`: its own coordinates free at `x_r`, every
    /// other particle placed on its trajectory with label `a`.
    pub fn hybrid_phi(&self, r: usize, particle_dim: usize, x_r: &[f64], a: &[f64]) -> Result<Complex64> {
        let (mut x, _) = self.forward(a);
        x[r * particle_dim..(r + 1) * particle_dim].copy_from_slice(x_r);
        self.psi_at(&x)
    }

    /// `(1/n) sum_r phi_r(x_r, a(x))`.
    pub fn symmetric_hybrid_psi(&self, x: &[f64], particles: usize) -> Result<Complex64> {
        let a = self.invert(x)?;
        let pd = self.dim / particles;
        let mut sum = Complex64::new(0.0, 0.0);
        for r in 0..particles {
            sum += self.hybrid_phi(r, pd, &x[r * pd..(r + 1) * pd], &a)?;
        }
        Ok(sum / particles as f64)
    }
}

pub fn invert_label_map(
    field: &TrajectoryField,
    grid: &LabelGrid,
    system: &PhysicalSystem,
    cfg: &EngineConfig,
    x: &[f64],
) -> Result<Vec<f64>> {
    Reconstructor::new(field, grid, system, cfg, &Gauge::default())?.invert(x)
}

pub fn reconstruct_wavefunction(
    field: &TrajectoryField,
    grid: &LabelGrid,
    system: &PhysicalSystem,
    cfg: &EngineConfig,
    spatial: &SpatialGrid,
    gauge: &Gauge,
) -> Result<WavefunctionField> {
    Reconstructor::new(field, grid, system, cfg, gauge)?.wavefunction(spatial).map(|(psi, _)| psi)
}

/// Wavefunction along the congruence, `sqrt(rho0/J) exp(iS/hbar)` per label node.
pub fn alocal_psi(
    field: &TrajectoryField,
    grid: &LabelGrid,
    system: &PhysicalSystem,
    cfg: &EngineConfig,
) -> Result<Vec<Complex64>> {
    let defo = lagrangian::deformation(field, grid, cfg)?;
    Ok(field
        .rho0
        .iter()
        .zip(&defo.jacobian)
        .zip(&field.action)
        .map(|((r, j), s)| Complex64::from_polar((r / j).sqrt(), s / system.hbar))
        .collect())
}

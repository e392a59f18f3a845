//! Trajectory-picture propagator.
//!
//! The congruence `q(a,t)` is advanced by the quantum Newton law
//! `m q'' = -d(V + V_Q)/dq`, with every configuration-space derivative obtained
//! from label-space differences through the deformation matrix and its adjugate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{LabelGrid, PhysicalSystem, PotentialSpec, TrajectoryField};
use crate::stencil::{self, Stencil};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    pub dt: f64,
    pub stencil: Stencil,
    /// Relative density below which the quantum force is frozen to zero,
    /// measured against the maximum of `rho0`.
    pub density_floor: f64,
    pub jacobian_floor: f64,
    /// Order of the low-pass filter applied to `q`, `v` and `S` after each step;
    /// two above the stencil order when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filter_order: Option<usize>,
    /// Damping of the grid-scale mode per `filter_interval` of time; 0 disables the filter.
    pub filter_strength: f64,
    /// Time over which the filter acts at full strength. Shorter steps filter
    /// proportionally less, so the smoothing applied per unit time does not depend on `dt`.
    pub filter_interval: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            dt: 1e-3,
            stencil: Stencil::Fourth,
            density_floor: 1e-10,
            jacobian_floor: 1e-8,
            filter_order: None,
            filter_strength: 1.0,
            filter_interval: 1e-3,
        }
    }
}

impl EngineConfig {
    pub fn with_dt(dt: f64) -> Self {
        EngineConfig { dt, ..Self::default() }
    }

    pub fn filter_order(&self) -> usize {
        self.filter_order.unwrap_or(self.stencil.order() + 2)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Validation(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.density_floor >= 0.0 && self.density_floor < 1.0) {
            return Err(Error::Validation("density_floor must lie in [0, 1)".into()));
        }
        if !(self.jacobian_floor >= 0.0) {
            return Err(Error::Validation("jacobian_floor must be non-negative".into()));
        }
        let order = self.filter_order();
        if order % 2 != 0 || order < 2 {
            return Err(Error::Validation("filter_order must be an even number >= 2".into()));
        }
        if !(0.0..=1.0).contains(&self.filter_strength) {
            return Err(Error::Validation("filter_strength must lie in [0, 1]".into()));
        }
        if !(self.filter_interval > 0.0 && self.filter_interval.is_finite()) {
            return Err(Error::Validation("filter_interval must be positive".into()));
        }
        Ok(())
    }
}

/// Deformation matrix `F_ik = dq_i/da_k`, its determinant and adjugate at every node.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationState {
    pub dim: usize,
    /// Row-major D x D block per node.
    pub matrices: Vec<f64>,
    pub jacobian: Vec<f64>,
    /// Row-major D x D block per node, `F * adj = J * I`.
    pub adjugate: Vec<f64>,
}

impl DeformationState {
    pub fn matrix(&self, node: usize) -> &[f64] {
        let dd = self.dim * self.dim;
        &self.matrices[node * dd..(node + 1) * dd]
    }

    pub fn adjugate_at(&self, node: usize) -> &[f64] {
        let dd = self.dim * self.dim;
        &self.adjugate[node * dd..(node + 1) * dd]
    }

    /// Largest `|F adj - J I|` relative to `max(|J|, 1)` over all nodes.
    pub fn adjugate_defect(&self) -> f64 {
        let d = self.dim;
        (0..self.jacobian.len())
            .map(|node| {
                let f = self.matrix(node);
                let adj = self.adjugate_at(node);
                let j = self.jacobian[node];
                let mut worst = 0.0f64;
                for r in 0..d {
                    for c in 0..d {
                        let p: f64 = (0..d).map(|k| f[r * d + k] * adj[k * d + c]).sum();
                        let want = if r == c { j } else { 0.0 };
                        worst = worst.max((p - want).abs());
                    }
                }
                worst / j.abs().max(1.0)
            })
            .fold(0.0, f64::max)
    }
}

fn component(flat: &[f64], dim: usize, i: usize) -> Vec<f64> {
    flat.iter().skip(i).step_by(dim).copied().collect()
}

/// Deformation state of an arbitrary position array on the label grid.
pub fn deformation_of(
    positions: &[f64],
    grid: &LabelGrid,
    cfg: &EngineConfig,
    t: f64,
) -> Result<DeformationState> {
    let d = grid.ndim();
    let n = grid.len();
    let dd = d * d;
    let mut matrices = vec![0.0; n * dd];
    let mut column = vec![0.0; n];
    for i in 0..d {
        let qi = component(positions, d, i);
        for k in 0..d {
            stencil::derivative_into(grid, &qi, k, cfg.stencil, &mut column);
            for (node, v) in column.iter().enumerate() {
                matrices[node * dd + i * d + k] = *v;
            }
        }
    }
    let mut jacobian = vec![0.0; n];
    let mut adjugate = vec![0.0; n * dd];
    jacobian
        .par_iter_mut()
        .zip(adjugate.par_chunks_mut(dd))
        .zip(matrices.par_chunks(dd))
        .for_each(|((j, adj), f)| {
            *j = linalg::determinant(f, d);
            linalg::adjugate(f, d, adj);
        });
    if let Some(node) = jacobian.iter().position(|&j| !(j > cfg.jacobian_floor)) {
        return Err(Error::JacobianCollapse { node, time: t, jacobian: jacobian[node] });
    }
    Ok(DeformationState { dim: d, matrices, jacobian, adjugate })
}

pub fn deformation(field: &TrajectoryField, grid: &LabelGrid, cfg: &EngineConfig) -> Result<DeformationState> {
    field.check_shape(grid)?;
    deformation_of(&field.positions, grid, cfg, field.t)
}

/// Configuration-space gradient `df/dq_i = J^-1 adj_ji df/da_j`, D values per node.
pub fn grad_config(f: &[f64], defo: &DeformationState, grid: &LabelGrid, cfg: &EngineConfig) -> Vec<f64> {
    let d = defo.dim;
    let n = grid.len();
    let label_grads: Vec<Vec<f64>> = (0..d).map(|j| stencil::derivative(grid, f, j, cfg.stencil)).collect();
    let mut out = vec![0.0; n * d];
    out.par_chunks_mut(d).enumerate().for_each(|(node, g)| {
        let adj = defo.adjugate_at(node);
        let inv_j = 1.0 / defo.jacobian[node];
        for (i, gi) in g.iter_mut().enumerate() {
            let mut s = 0.0;
            for (j, lg) in label_grads.iter().enumerate() {
                s += adj[j * d + i] * lg[node];
            }
            *gi = s * inv_j;
        }
    });
    out
}

/// `rho(q(a,t), t) = rho0(a) / J(a,t)`.
pub fn transported_density(defo: &DeformationState, rho0: &[f64]) -> Vec<f64> {
    rho0.iter().zip(&defo.jacobian).map(|(r, j)| r / j).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantumPotential {
    pub values: Vec<f64>,
    /// D values per node; zero where the transported density is below the floor.
    pub gradient: Vec<f64>,
}

/// Quantum potential and its configuration gradient.
///
/// Evaluated through `u = ln sqrt(rho)` as
/// `V_Q = -sum_k (hbar^2 / 2 m_k) (d_k d_k u + (d_k u)^2)`, which equals
/// `-(hbar^2/2m) lap(sqrt rho) / sqrt rho` summed over particle blocks.
pub fn quantum_potential(
    defo: &DeformationState,
    field: &TrajectoryField,
    grid: &LabelGrid,
    system: &PhysicalSystem,
    cfg: &EngineConfig,
) -> QuantumPotential {
    let d = defo.dim;
    let n = grid.len();
    let u: Vec<f64> = field
        .log_rho0
        .iter()
        .zip(&defo.jacobian)
        .map(|(lr, j)| 0.5 * (lr - j.ln()))
        .collect();
    let grad_u = grad_config(&u, defo, grid, cfg);
    let mut values = vec![0.0; n];
    for k in 0..d {
        let coef = system.hbar * system.hbar / (2.0 * system.mass_of(k));
        let gk = component(&grad_u, d, k);
        let ggk = grad_config(&gk, defo, grid, cfg);
        for node in 0..n {
            values[node] -= coef * (ggk[node * d + k] + gk[node] * gk[node]);
        }
    }
    let mut gradient = grad_config(&values, defo, grid, cfg);
    if cfg.density_floor > 0.0 {
        let max_rho0 = field.rho0.iter().copied().fold(0.0, f64::max);
        let floor = cfg.density_floor * max_rho0;
        for node in 0..n {
            if field.rho0[node] / defo.jacobian[node] <= floor {
                gradient[node * d..(node + 1) * d].fill(0.0);
            }
        }
    }
    QuantumPotential { values, gradient }
}

/// Time derivatives of one stage: `(dv/dt, dS/dt)`.
fn rates(
    positions: &[f64],
    velocities: &[f64],
    t: f64,
    base: &TrajectoryField,
    grid: &LabelGrid,
    system: &PhysicalSystem,
    pot: &PotentialSpec,
    cfg: &EngineConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = grid.ndim();
    let defo = deformation_of(positions, grid, cfg, t)?;
    let stage = TrajectoryField { t, positions: positions.to_vec(), ..base.clone() };
    let qp = quantum_potential(&defo, &stage, grid, system, cfg);
    let masses: Vec<f64> = (0..d).map(|k| system.mass_of(k)).collect();
    let n = grid.len();
    let mut accel = vec![0.0; n * d];
    let mut lagrangian = vec![0.0; n];
    accel
        .par_chunks_mut(d)
        .zip(lagrangian.par_iter_mut())
        .enumerate()
        .for_each_init(
            || vec![0.0; d],
            |grad, (node, (acc, lag))| {
                let q = &positions[node * d..(node + 1) * d];
                let v = &velocities[node * d..(node + 1) * d];
                let vc = pot.evaluate_into(q, t, grad);
                let mut kinetic = 0.0;
                for k in 0..d {
                    acc[k] = -(grad[k] + qp.gradient[node * d + k]) / masses[k];
                    kinetic += 0.5 * masses[k] * v[k] * v[k];
                }
                *lag = kinetic - vc - qp.values[node];
            },
        );
    Ok((accel, lagrangian))
}

/// Acceleration `-(1/m)(dV/dq + dV_Q/dq)` at every node, D values per node.
pub fn acceleration(
    field: &TrajectoryField,
    grid: &LabelGrid,
    system: &PhysicalSystem,
    pot: &PotentialSpec,
    cfg: &EngineConfig,
) -> Result<Vec<f64>> {
    field.check_shape(grid)?;
    rates(&field.positions, &field.velocities, field.t, field, grid, system, pot, cfg).map(|(a, _)| a)
}

fn axpy(x: &[f64], h: f64, y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(a, b)| a + h * b).collect()
}

fn rk4_step_dt(
    field: &TrajectoryField,
    grid: &LabelGrid,
    system: &PhysicalSystem,
    pot: &PotentialSpec,
    cfg: &EngineConfig,
    dt: f64,
) -> Result<TrajectoryField> {
    let t = field.t;
    let q0 = &field.positions;
    let v0 = &field.velocities;
    let (a1, l1) = rates(q0, v0, t, field, grid, system, pot, cfg)?;
    let q2 = axpy(q0, dt / 2.0, v0);
    let v2 = axpy(v0, dt / 2.0, &a1);
    let (a2, l2) = rates(&q2, &v2, t + dt / 2.0, field, grid, system, pot, cfg)?;
    let q3 = axpy(q0, dt / 2.0, &v2);
    let v3 = axpy(v0, dt / 2.0, &a2);
    let (a3, l3) = rates(&q3, &v3, t + dt / 2.0, field, grid, system, pot, cfg)?;
    let q4 = axpy(q0, dt, &v3);
    let v4 = axpy(v0, dt, &a3);
    let (a4, l4) = rates(&q4, &v4, t + dt, field, grid, system, pot, cfg)?;

    let w = dt / 6.0;
    let combine = |x: &[f64], k1: &[f64], k2: &[f64], k3: &[f64], k4: &[f64]| -> Vec<f64> {
        (0..x.len()).map(|i| x[i] + w * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect()
    };
    let mut positions = combine(q0, v0, &v2, &v3, &v4);
    let mut velocities = combine(v0, &a1, &a2, &a3, &a4);
    let mut action = combine(&field.action, &l1, &l2, &l3, &l4);

    let strength = cfg.filter_strength * (dt / cfg.filter_interval).min(1.0);
    if strength > 0.0 {
        let d = grid.ndim();
        for flat in [&mut positions, &mut velocities] {
            for i in 0..d {
                let mut c = component(flat, d, i);
                for axis in 0..d {
                    stencil::filter_along(grid, &mut c, axis, cfg.filter_order(), strength);
                }
                for (node, v) in c.into_iter().enumerate() {
                    flat[node * d + i] = v;
                }
            }
        }
        for axis in 0..d {
            stencil::filter_along(grid, &mut action, axis, cfg.filter_order(), strength);
        }
    }

    Ok(TrajectoryField { t: t + dt, positions, velocities, action, ..field.clone() })
}

/// One classical fourth-order Runge-Kutta step of `(q, v, S)`.
pub fn rk4_step(
    field: &TrajectoryField,
    grid: &LabelGrid,
    system: &PhysicalSystem,
    pot: &PotentialSpec,
    cfg: &EngineConfig,
) -> Result<TrajectoryField> {
    field.check_shape(grid)?;
    rk4_step_dt(field, grid, system, pot, cfg, cfg.dt)
}

/// Number of steps to reach `t_final` and the length of the last one.
pub fn step_plan(t_final: f64, dt: f64) -> (usize, f64) {
    let ratio = t_final / dt;
    let whole = ratio.round();
    if (ratio - whole).abs() <= 1e-9 * ratio.max(1.0) {
        (whole as usize, dt)
    } else {
        let full = ratio.floor() as usize;
        (full + 1, t_final - full as f64 * dt)
    }
}

/// Propagate from `field.t` to `t_final`, calling `observe` after every step.
///
/// Step times are computed as `t0 + k dt` so that long runs do not accumulate
/// round-off in `t`.
pub fn propagate(
    mut field: TrajectoryField,
    grid: &LabelGrid,
    system: &PhysicalSystem,
    pot: &PotentialSpec,
    cfg: &EngineConfig,
    t_final: f64,
    mut observe: impl FnMut(usize, &TrajectoryField) -> Result<()>,
) -> Result<TrajectoryField> {
    cfg.validate()?;
    field.check_shape(grid)?;
    let t0 = field.t;
    let (steps, last) = step_plan(t_final - t0, cfg.dt);
    for s in 0..steps {
        let h = if s + 1 == steps { last } else { cfg.dt };
        field = rk4_step_dt(&field, grid, system, pot, cfg, h)?;
        field.t = if s + 1 == steps { t_final } else { t0 + (s + 1) as f64 * cfg.dt };
        observe(s + 1, &field)?;
    }
    Ok(field)
}

/// Accumulated action `S(a,t)`; the phase of the wavefunction along the congruence.
pub fn action_field(field: &TrajectoryField) -> &[f64] {
    &field.action
}

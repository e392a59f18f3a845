//! Shared data model: grids, physical parameters, initial states, potentials
//! and the two state pictures (trajectory field and wavefunction field).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::ops::Deref;

use crate::error::{Error, Result};
use crate::linalg;

/// Minimum number of points along any label axis (width of the widest stencil).
pub const MIN_AXIS_POINTS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalSystem {
    pub particles: usize,
    pub dim: usize,
    pub masses: Vec<f64>,
    #[serde(default = "unit")]
    pub hbar: f64,
}

fn unit() -> f64 {
    1.0
}

impl PhysicalSystem {
    pub fn new(particles: usize, dim: usize, masses: Vec<f64>, hbar: f64) -> Result<Self> {
        let s = PhysicalSystem { particles, dim, masses, hbar };
        s.validate()?;
        Ok(s)
    }

    pub fn single(dim: usize, mass: f64) -> Self {
        PhysicalSystem { particles: 1, dim, masses: vec![mass], hbar: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 {
            return Err(Error::Validation("particle count must be at least 1".into()));
        }
        if !(1..=3).contains(&self.dim) {
            return Err(Error::Validation(format!("spatial dimension {} outside 1..=3", self.dim)));
        }
        if self.masses.len() != self.particles {
            return Err(Error::Validation(format!(
                "expected {} masses, got {}",
                self.particles,
                self.masses.len()
            )));
        }
        if self.masses.iter().any(|&m| !(m > 0.0) || !m.is_finite()) {
            return Err(Error::Validation("masses must be positive".into()));
        }
        if !(self.hbar > 0.0) || !self.hbar.is_finite() {
            return Err(Error::Validation("hbar must be positive".into()));
        }
        Ok(())
    }

    /// Total configuration dimension n*d.
    pub fn config_dim(&self) -> usize {
        self.particles * self.dim
    }

    /// Particle owning configuration component `k`.
    pub fn particle_of(&self, k: usize) -> usize {
        k / self.dim
    }

    /// Mass attached to configuration component `k`.
    pub fn mass_of(&self, k: usize) -> f64 {
        self.masses[self.particle_of(k)]
    }

    /// Configuration components belonging to particle `r`.
    pub fn block(&self, r: usize) -> std::ops::Range<usize> {
        r * self.dim..(r + 1) * self.dim
    }
}

/// One uniformly spaced axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub start: f64,
    pub step: f64,
    pub len: usize,
}

impl Axis {
    pub fn new(start: f64, end: f64, len: usize) -> Self {
        assert!(len >= 2, "axis needs at least two points");
        Axis { start, step: (end - start) / (len - 1) as f64, len }
    }

    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        self.start + self.step * i as f64
    }

    pub fn end(&self) -> f64 {
        self.coord(self.len - 1)
    }

    pub fn coords(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len).map(move |i| self.coord(i))
    }
}

/// Tensor-product grid, flattened row-major (axis 0 slowest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<Axis>", into = "Vec<Axis>")]
pub struct TensorGrid {
    axes: Vec<Axis>,
    strides: Vec<usize>,
}

impl From<Vec<Axis>> for TensorGrid {
    fn from(axes: Vec<Axis>) -> Self {
        TensorGrid::new(axes)
    }
}

impl From<TensorGrid> for Vec<Axis> {
    fn from(g: TensorGrid) -> Self {
        g.axes
    }
}

impl TensorGrid {
    pub fn new(axes: Vec<Axis>) -> Self {
        let mut strides = vec![1; axes.len()];
        for k in (0..axes.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * axes[k + 1].len;
        }
        TensorGrid { axes, strides }
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn axis(&self, k: usize) -> &Axis {
        &self.axes[k]
    }

    pub fn ndim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stride(&self, k: usize) -> usize {
        self.strides[k]
    }

    /// Position of `node` along axis `k`.
    #[inline]
    pub fn index_along(&self, node: usize, k: usize) -> usize {
        (node / self.strides[k]) % self.axes[k].len
    }

    pub fn multi_index(&self, node: usize) -> Vec<usize> {
        (0..self.ndim()).map(|k| self.index_along(node, k)).collect()
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn coords_into(&self, node: usize, out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.axes[k].coord(self.index_along(node, k));
        }
    }

    pub fn coords(&self, node: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.ndim()];
        self.coords_into(node, &mut x);
        x
    }

    /// Product of the axis spacings.
    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(|a| a.step).product()
    }

    /// True if the node has at least `margin` neighbours on both sides along every axis.
    pub fn is_interior(&self, node: usize, margin: usize) -> bool {
        (0..self.ndim()).all(|k| {
            let i = self.index_along(node, k);
            i >= margin && i + margin < self.axes[k].len
        })
    }

    /// Node closest to the middle of the grid.
    pub fn center_node(&self) -> usize {
        let idx: Vec<usize> = self.axes.iter().map(|a| a.len / 2).collect();
        self.flat_index(&idx)
    }
}

/// Grid of trajectory labels (initial positions).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "TensorGrid", into = "TensorGrid")]
pub struct LabelGrid(TensorGrid);

impl From<TensorGrid> for LabelGrid {
    fn from(g: TensorGrid) -> Self {
        LabelGrid(g)
    }
}

impl From<LabelGrid> for TensorGrid {
    fn from(g: LabelGrid) -> Self {
        g.0
    }
}

impl Deref for LabelGrid {
    type Target = TensorGrid;
    fn deref(&self) -> &TensorGrid {
        &self.0
    }
}

impl LabelGrid {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        for (k, a) in axes.iter().enumerate() {
            if a.len < MIN_AXIS_POINTS {
                return Err(Error::Validation(format!(
                    "label axis {k} has {} points, need at least {MIN_AXIS_POINTS}",
                    a.len
                )));
            }
            if !(a.step > 0.0) || !a.step.is_finite() {
                return Err(Error::Validation(format!("label axis {k} spacing must be positive")));
            }
        }
        Ok(LabelGrid(TensorGrid::new(axes)))
    }
}

/// Spatial grid on which wavefunctions live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "TensorGrid", into = "TensorGrid")]
pub struct SpatialGrid(TensorGrid);

impl From<TensorGrid> for SpatialGrid {
    fn from(g: TensorGrid) -> Self {
        SpatialGrid(g)
    }
}

impl From<SpatialGrid> for TensorGrid {
    fn from(g: SpatialGrid) -> Self {
        g.0
    }
}

impl Deref for SpatialGrid {
    type Target = TensorGrid;
    fn deref(&self) -> &TensorGrid {
        &self.0
    }
}

impl SpatialGrid {
    pub fn new(axes: Vec<Axis>) -> Self {
        SpatialGrid(TensorGrid::new(axes))
    }

    /// Periodic-friendly grid: `len` points on `[lo, hi)` along each axis.
    pub fn periodic(bounds: &[(f64, f64)], len: usize) -> Self {
        SpatialGrid::new(
            bounds
                .iter()
                .map(|&(lo, hi)| Axis { start: lo, step: (hi - lo) / len as f64, len })
                .collect(),
        )
    }
}

/// Gaussian initial state with linear phase.
///
/// `rho0(x) = sqrt(det A / (2 pi)^D) exp(-(x-mu)^T A (x-mu) / 2)`, `S0(x) = p . (x - mu)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianStateSpec {
    pub center: Vec<f64>,
    pub momentum: Vec<f64>,
    /// Row-major D x D inverse covariance.
    pub inverse_covariance: Vec<f64>,
}

impl GaussianStateSpec {
    pub fn new(center: Vec<f64>, momentum: Vec<f64>, inverse_covariance: Vec<f64>) -> Result<Self> {
        let s = GaussianStateSpec { center, momentum, inverse_covariance };
        s.validate()?;
        Ok(s)
    }

    /// Isotropic 1D packet of width `sigma` at rest.
    pub fn gaussian_1d(center: f64, sigma: f64, momentum: f64) -> Self {
        GaussianStateSpec {
            center: vec![center],
            momentum: vec![momentum],
            inverse_covariance: vec![1.0 / (sigma * sigma)],
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if n == 0 {
            return Err(Error::Validation("state has zero dimension".into()));
        }
        if self.momentum.len() != n || self.inverse_covariance.len() != n * n {
            return Err(Error::Validation(format!(
                "state arrays inconsistent with dimension {n}"
            )));
        }
        if !linalg::is_symmetric(&self.inverse_covariance, n, 1e-12) {
            return Err(Error::Validation("inverse-covariance not symmetric".into()));
        }
        if linalg::cholesky(&self.inverse_covariance, n).is_none() {
            return Err(Error::Validation("inverse-covariance not positive definite".into()));
        }
        Ok(())
    }

    /// Check that the dimension matches the system.
    pub fn validate_for(&self, system: &PhysicalSystem) -> Result<()> {
        self.validate()?;
        if self.dim() != system.config_dim() {
            return Err(Error::Validation(format!(
                "state dimension {} does not match configuration dimension {}",
                self.dim(),
                system.config_dim()
            )));
        }
        Ok(())
    }

    fn quadratic_form(&self, x: &[f64]) -> f64 {
        let n = self.dim();
        let a = &self.inverse_covariance;
        let mut q = 0.0;
        for i in 0..n {
            let di = x[i] - self.center[i];
            for j in 0..n {
                q += di * a[i * n + j] * (x[j] - self.center[j]);
            }
        }
        q
    }

    pub fn log_normalization(&self) -> f64 {
        let n = self.dim();
        let det = linalg::determinant(&self.inverse_covariance, n);
        0.5 * det.ln() - 0.5 * n as f64 * (2.0 * PI).ln()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        self.log_normalization() - 0.5 * self.quadratic_form(x)
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        self.log_density(x).exp()
    }

    pub fn phase(&self, x: &[f64]) -> f64 {
        self.momentum.iter().zip(x.iter().zip(&self.center)).map(|(p, (xi, mi))| p * (xi - mi)).sum()
    }

    /// `psi0 = sqrt(rho0) exp(i S0 / hbar)`.
    pub fn psi(&self, x: &[f64], hbar: f64) -> Complex64 {
        Complex64::from_polar((0.5 * self.log_density(x)).exp(), self.phase(x) / hbar)
    }

    /// Covariance matrix (inverse of A).
    pub fn covariance(&self) -> Vec<f64> {
        linalg::inverse(&self.inverse_covariance, self.dim()).expect("validated positive definite")
    }

    /// Standard deviation of the marginal along axis `k`.
    pub fn marginal_sigma(&self, k: usize) -> f64 {
        self.covariance()[k * self.dim() + k].sqrt()
    }

    /// True when every cross-particle block of A vanishes.
    pub fn is_factorized(&self, system: &PhysicalSystem) -> bool {
        let n = self.dim();
        (0..n).all(|i| {
            (0..n).all(|j| {
                system.particle_of(i) == system.particle_of(j) || self.inverse_covariance[i * n + j] == 0.0
            })
        })
    }
}

/// Initial data at a set of label points.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialData {
    pub rho0: Vec<f64>,
    pub log_rho0: Vec<f64>,
    pub s0: Vec<f64>,
    /// D values per point.
    pub v0: Vec<f64>,
}

/// Evaluate `rho0`, `S0` and the initial velocity `v0_k = (1/m_k) dS0/da_k = p_k / m_k`
/// at every point of a flat `points` array (D values per point).
pub fn eval_initial_data(spec: &GaussianStateSpec, system: &PhysicalSystem, points: &[f64]) -> InitialData {
    let d = spec.dim();
    let count = points.len() / d;
    let mut out = InitialData {
        rho0: Vec::with_capacity(count),
        log_rho0: Vec::with_capacity(count),
        s0: Vec::with_capacity(count),
        v0: Vec::with_capacity(count * d),
    };
    for x in points.chunks_exact(d) {
        let lr = spec.log_density(x);
        out.log_rho0.push(lr);
        out.rho0.push(lr.exp());
        out.s0.push(spec.phase(x));
        out.v0.extend((0..d).map(|k| spec.momentum[k] / system.mass_of(k)));
    }
    out
}

/// Label grid centred on the packet, covering the region where each marginal of
/// `rho0` exceeds `cutoff` times its maximum.
pub fn build_label_grid(
    spec: &GaussianStateSpec,
    system: &PhysicalSystem,
    cutoff: f64,
    points_per_axis: &[usize],
) -> Result<LabelGrid> {
    if !(cutoff > 0.0 && cutoff < 1.0) {
        return Err(Error::Validation(format!("cutoff {cutoff} outside (0, 1)")));
    }
    label_grid_with_reach(spec, system, (-2.0 * cutoff.ln()).sqrt(), points_per_axis)
}

/// Label grid spanning `center +- reach * sigma_k` along every axis.
pub fn label_grid_with_reach(
    spec: &GaussianStateSpec,
    system: &PhysicalSystem,
    reach: f64,
    points_per_axis: &[usize],
) -> Result<LabelGrid> {
    spec.validate_for(system)?;
    if !(reach > 0.0 && reach.is_finite()) {
        return Err(Error::Validation(format!("label reach {reach} must be positive")));
    }
    let d = spec.dim();
    let counts: Vec<usize> = match points_per_axis.len() {
        1 => vec![points_per_axis[0]; d],
        n if n == d => points_per_axis.to_vec(),
        n => {
            return Err(Error::Validation(format!("{n} point counts given for {d} axes")));
        }
    };
    let axes = (0..d)
        .map(|k| {
            let half = spec.marginal_sigma(k) * reach;
            Axis::new(spec.center[k] - half, spec.center[k] + half, counts[k])
        })
        .collect();
    LabelGrid::new(axes)
}

/// A single additive term of the classical potential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialTerm {
    Free,
    /// `V = x^T K x / 2 + b . x`
    Quadratic {
        stiffness: Vec<f64>,
        #[serde(default)]
        linear: Vec<f64>,
    },
    /// Gaussian bump on one particle, switched on for `t_on <= t <= t_off`.
    Kick {
        particle: usize,
        center: Vec<f64>,
        width: f64,
        strength: f64,
        t_on: f64,
        t_off: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PotentialSpec {
    pub terms: Vec<PotentialTerm>,
}

impl PotentialSpec {
    pub fn free() -> Self {
        PotentialSpec { terms: vec![PotentialTerm::Free] }
    }

    pub fn quadratic(stiffness: Vec<f64>, linear: Vec<f64>) -> Self {
        PotentialSpec { terms: vec![PotentialTerm::Quadratic { stiffness, linear }] }
    }

    /// Isotropic harmonic trap `m omega^2 |x|^2 / 2` for a single particle.
    pub fn harmonic(dim: usize, mass: f64, omega: f64) -> Self {
        let mut k = vec![0.0; dim * dim];
        for i in 0..dim {
            k[i * dim + i] = mass * omega * omega;
        }
        Self::quadratic(k, vec![])
    }

    pub fn with(mut self, term: PotentialTerm) -> Self {
        self.terms.push(term);
        self
    }

    /// Same potential with every kick removed.
    pub fn without_kicks(&self) -> Self {
        PotentialSpec {
            terms: self.terms.iter().filter(|t| !matches!(t, PotentialTerm::Kick { .. })).cloned().collect(),
        }
    }

    pub fn has_kick(&self) -> bool {
        self.terms.iter().any(|t| matches!(t, PotentialTerm::Kick { .. }))
    }

    pub fn validate(&self, system: &PhysicalSystem) -> Result<()> {
        let n = system.config_dim();
        for term in &self.terms {
            match term {
                PotentialTerm::Free => {}
                PotentialTerm::Quadratic { stiffness, linear } => {
                    if stiffness.len() != n * n {
                        return Err(Error::Validation(format!(
                            "stiffness must have {} entries, got {}",
                            n * n,
                            stiffness.len()
                        )));
                    }
                    if !linalg::is_symmetric(stiffness, n, 1e-12) {
                        return Err(Error::Validation("stiffness matrix not symmetric".into()));
                    }
                    if !linear.is_empty() && linear.len() != n {
                        return Err(Error::Validation(format!("linear term must have {n} entries")));
                    }
                }
                PotentialTerm::Kick { particle, center, width, t_on, t_off, .. } => {
                    if *particle >= system.particles {
                        return Err(Error::Validation(format!("kick targets missing particle {particle}")));
                    }
                    if center.len() != system.dim {
                        return Err(Error::Validation(format!(
                            "kick center must have {} components",
                            system.dim
                        )));
                    }
                    if !(*width > 0.0) {
                        return Err(Error::Validation("kick width must be positive".into()));
                    }
                    if !(t_on < t_off) {
                        return Err(Error::Validation("kick interval must satisfy t_on < t_off".into()));
                    }
                }
            }
        }
        Ok(())
    }

    /// True if the potential is a sum of single-particle terms.
    pub fn is_separable(&self, system: &PhysicalSystem) -> bool {
        let n = system.config_dim();
        self.terms.iter().all(|t| match t {
            PotentialTerm::Quadratic { stiffness, .. } => (0..n).all(|i| {
                (0..n).all(|j| system.particle_of(i) == system.particle_of(j) || stiffness[i * n + j] == 0.0)
            }),
            _ => true,
        })
    }

    /// Potential energy and its gradient at configuration point `x` (gradient added into `grad`).
    pub fn evaluate_into(&self, x: &[f64], t: f64, grad: &mut [f64]) -> f64 {
        let n = x.len();
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut v = 0.0;
        for term in &self.terms {
            match term {
                PotentialTerm::Free => {}
                PotentialTerm::Quadratic { stiffness, linear } => {
                    for i in 0..n {
                        let kx: f64 = (0..n).map(|j| stiffness[i * n + j] * x[j]).sum();
                        let b = linear.get(i).copied().unwrap_or(0.0);
                        v += 0.5 * x[i] * kx + b * x[i];
                        grad[i] += kx + b;
                    }
                }
                PotentialTerm::Kick { particle, center, width, strength, t_on, t_off } => {
                    if t < *t_on || t > *t_off {
                        continue;
                    }
                    let d = center.len();
                    let base = particle * d;
                    let r2: f64 = (0..d).map(|i| (x[base + i] - center[i]).powi(2)).sum();
                    let bump = strength * (-r2 / (2.0 * width * width)).exp();
                    v += bump;
                    for i in 0..d {
                        grad[base + i] -= bump * (x[base + i] - center[i]) / (width * width);
                    }
                }
            }
        }
        v
    }

    pub fn evaluate(&self, x: &[f64], t: f64) -> (f64, Vec<f64>) {
        let mut g = vec![0.0; x.len()];
        let v = self.evaluate_into(x, t, &mut g);
        (v, g)
    }
}

/// Trajectory picture of the state: one trajectory per label node.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryField {
    pub t: f64,
    /// Configuration dimension D.
    pub dim: usize,
    /// Positions `q(a,t)`, D values per node.
    pub positions: Vec<f64>,
    /// Velocities `dq/dt`, D values per node.
    pub velocities: Vec<f64>,
    /// Action accumulated along each trajectory, starting from `S0`.
    pub action: Vec<f64>,
    pub rho0: Vec<f64>,
    pub log_rho0: Vec<f64>,
    pub s0: Vec<f64>,
    pub v0: Vec<f64>,
}

impl TrajectoryField {
    /// Field at t = 0: `q(a, 0) = a` exactly.
    pub fn initial(grid: &LabelGrid, spec: &GaussianStateSpec, system: &PhysicalSystem) -> Result<Self> {
        spec.validate_for(system)?;
        let d = grid.ndim();
        if d != spec.dim() {
            return Err(Error::Validation("label grid and state dimensions differ".into()));
        }
        let mut positions = vec![0.0; grid.len() * d];
        for (node, q) in positions.chunks_exact_mut(d).enumerate() {
            grid.coords_into(node, q);
        }
        let init = eval_initial_data(spec, system, &positions);
        Ok(TrajectoryField {
            t: 0.0,
            dim: d,
            velocities: init.v0.clone(),
            action: init.s0.clone(),
            positions,
            rho0: init.rho0,
            log_rho0: init.log_rho0,
            s0: init.s0,
            v0: init.v0,
        })
    }

    pub fn node_count(&self) -> usize {
        self.rho0.len()
    }

    pub fn position(&self, node: usize) -> &[f64] {
        &self.positions[node * self.dim..(node + 1) * self.dim]
    }

    pub fn velocity(&self, node: usize) -> &[f64] {
        &self.velocities[node * self.dim..(node + 1) * self.dim]
    }

    /// Component `i` of the positions as a scalar node field.
    pub fn position_component(&self, i: usize) -> Vec<f64> {
        self.positions.iter().skip(i).step_by(self.dim).copied().collect()
    }

    pub fn velocity_component(&self, i: usize) -> Vec<f64> {
        self.velocities.iter().skip(i).step_by(self.dim).copied().collect()
    }

    pub fn check_shape(&self, grid: &LabelGrid) -> Result<()> {
        let n = grid.len();
        let ok = self.dim == grid.ndim()
            && self.positions.len() == n * self.dim
            && self.velocities.len() == n * self.dim
            && self.action.len() == n
            && self.rho0.len() == n
            && self.log_rho0.len() == n
            && self.s0.len() == n
            && self.v0.len() == n * self.dim;
        if ok {
            Ok(())
        } else {
            Err(Error::Validation("trajectory field shape does not match label grid".into()))
        }
    }
}

/// Wavefunction picture of the state on a spatial tensor grid.
#[derive(Debug, Clone, PartialEq)]
pub struct WavefunctionField {
    pub t: f64,
    pub grid: SpatialGrid,
    pub values: Vec<Complex64>,
}

impl WavefunctionField {
    pub fn from_fn(grid: SpatialGrid, t: f64, f: impl Fn(&[f64]) -> Complex64) -> Self {
        let mut x = vec![0.0; grid.ndim()];
        let values = (0..grid.len())
            .map(|node| {
                grid.coords_into(node, &mut x);
                f(&x)
            })
            .collect();
        WavefunctionField { t, grid, values }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.values.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.grid.cell_volume()
    }

    pub fn normalize(&mut self) {
        let s = self.norm_sqr().sqrt();
        if s > 0.0 {
            self.values.iter_mut().for_each(|z| *z /= s);
        }
    }

    pub fn density(&self) -> Vec<f64> {
        self.values.iter().map(|z| z.norm_sqr()).collect()
    }

    /// `<self|other>` on the shared grid.
    pub fn inner(&self, other: &WavefunctionField) -> Complex64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a.conj() * b).sum::<Complex64>()
            * self.grid.cell_volume()
    }

    /// L2 distance after aligning the global phase of `other` to `self`.
    pub fn distance_up_to_phase(&self, other: &WavefunctionField) -> f64 {
        let overlap = self.inner(other).norm();
        (self.norm_sqr() + other.norm_sqr() - 2.0 * overlap).max(0.0).sqrt()
    }

    /// Plain L2 distance.
    pub fn distance(&self, other: &WavefunctionField) -> f64 {
        let s: f64 = self.values.iter().zip(&other.values).map(|(a, b)| (a - b).norm_sqr()).sum();
        (s * self.grid.cell_volume()).sqrt()
    }

    /// L2 norm of the density difference.
    pub fn density_distance(&self, other: &WavefunctionField) -> f64 {
        let s: f64 =
            self.values.iter().zip(&other.values).map(|(a, b)| (a.norm_sqr() - b.norm_sqr()).powi(2)).sum();
        (s * self.grid.cell_volume()).sqrt()
    }
}

//! Reference solutions in the wavefunction picture: a split-step Fourier
//! propagator, closed-form packets, and Bohmian paths integrated from `psi`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GaussianStateSpec, PhysicalSystem, PotentialSpec, SpatialGrid, WavefunctionField};

/// Largest boundary amplitude tolerated by the periodic kinetic step.
pub const BOUNDARY_TOLERANCE: f64 = 1e-8;

/// Angular wavenumbers of the discrete Fourier modes on an axis.
fn wavenumbers(len: usize, step: f64) -> Vec<f64> {
    let dk = 2.0 * PI / (len as f64 * step);
    (0..len).map(|j| if j < len.div_ceil(2) { j as f64 } else { j as f64 - len as f64 } * dk).collect()
}

struct AxisPlan {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    k: Vec<f64>,
}

/// Strang-split propagator `e^{-iV dt/2} e^{-iT dt} e^{-iV dt/2}` on a periodic grid.
pub struct SpectralPropagator {
    grid: SpatialGrid,
    system: PhysicalSystem,
    dt: f64,
    plans: Vec<AxisPlan>,
    /// Kinetic phase per axis, indexed by mode.
    kinetic: Vec<Vec<Complex64>>,
}

impl SpectralPropagator {
    pub fn new(grid: SpatialGrid, system: PhysicalSystem, dt: f64) -> Result<Self> {
        if grid.ndim() != system.config_dim() {
            return Err(Error::Validation("spatial grid dimension differs from configuration dimension".into()));
        }
        let mut planner = FftPlanner::new();
        let mut plans = Vec::new();
        let mut kinetic = Vec::new();
        for (axis, ax) in grid.axes().iter().enumerate() {
            let k = wavenumbers(ax.len, ax.step);
            let m = system.mass_of(axis);
            kinetic.push(k.iter().map(|k| Complex64::from_polar(1.0, -system.hbar * k * k * dt / (2.0 * m))).collect());
            plans.push(AxisPlan { forward: planner.plan_fft_forward(ax.len), inverse: planner.plan_fft_inverse(ax.len), k });
        }
        Ok(SpectralPropagator { grid, system, dt, plans, kinetic })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    fn potential_phase(&self, psi: &mut [Complex64], pot: &PotentialSpec, t: f64, h: f64) {
        let hbar = self.system.hbar;
        let grid = &self.grid;
        psi.par_iter_mut().enumerate().for_each_init(
            || (vec![0.0; grid.ndim()], vec![0.0; grid.ndim()]),
            |(x, g), (node, z)| {
                grid.coords_into(node, x);
                let v = pot.evaluate_into(x, t, g);
                *z *= Complex64::from_polar(1.0, -v * h / hbar);
            },
        );
    }

    /// Apply `f(mode)` along every line of `axis` in the Fourier domain.
    fn along_axis(&self, psi: &mut [Complex64], axis: usize, weights: &[Complex64]) {
        let plan = &self.plans[axis];
        let n = self.grid.axis(axis).len;
        let stride = self.grid.stride(axis);
        let total = psi.len();
        let lines: Vec<usize> = (0..total).filter(|node| (node / stride) % n == 0).collect();
        let scale = 1.0 / n as f64;
        let updated: Vec<Vec<Complex64>> = lines
            .par_iter()
            .map(|&base| {
                let mut buf: Vec<Complex64> = (0..n).map(|i| psi[base + i * stride]).collect();
                plan.forward.process(&mut buf);
                for (b, w) in buf.iter_mut().zip(weights) {
                    *b *= w * scale;
                }
                plan.inverse.process(&mut buf);
                buf
            })
            .collect();
        for (base, buf) in lines.iter().zip(updated) {
            for (i, z) in buf.into_iter().enumerate() {
                psi[base + i * stride] = z;
            }
        }
    }

    /// Advance `psi` by one step; the potential is sampled at the midpoint time.
    pub fn step(&self, psi: &mut WavefunctionField, pot: &PotentialSpec) -> Result<()> {
        let t_mid = psi.t + 0.5 * self.dt;
        self.potential_phase(&mut psi.values, pot, t_mid, 0.5 * self.dt);
        for axis in 0..self.grid.ndim() {
            self.along_axis(&mut psi.values, axis, &self.kinetic[axis]);
        }
        self.potential_phase(&mut psi.values, pot, t_mid, 0.5 * self.dt);
        psi.t += self.dt;
        let amp = boundary_amplitude(psi);
        if amp > BOUNDARY_TOLERANCE {
            return Err(Error::BoundaryLeak { time: psi.t, amplitude: amp });
        }
        Ok(())
    }

    /// Spectral derivative of `psi` along `axis`.
    pub fn gradient(&self, values: &[Complex64], axis: usize) -> Vec<Complex64> {
        let mut out = values.to_vec();
        let n = self.grid.axis(axis).len;
        let ik: Vec<Complex64> = self.plans[axis]
            .k
            .iter()
            .enumerate()
            // the unpaired Nyquist mode has no well-defined derivative
            .map(|(j, k)| if n % 2 == 0 && j == n / 2 { Complex64::new(0.0, 0.0) } else { Complex64::new(0.0, *k) })
            .collect();
        self.along_axis(&mut out, axis, &ik);
        out
    }
}

/// Single step with a freshly planned propagator.
pub fn spectral_step(psi: &WavefunctionField, system: &PhysicalSystem, pot: &PotentialSpec, dt: f64) -> Result<WavefunctionField> {
    let prop = SpectralPropagator::new(psi.grid.clone(), system.clone(), dt)?;
    let mut out = psi.clone();
    prop.step(&mut out, pot)?;
    Ok(out)
}

/// Largest `|psi|` over nodes on the faces of the grid.
pub fn boundary_amplitude(psi: &WavefunctionField) -> f64 {
    let grid = &psi.grid;
    (0..grid.len())
        .filter(|&node| (0..grid.ndim()).any(|k| {
            let i = grid.index_along(node, k);
            i == 0 || i + 1 == grid.axis(k).len
        }))
        .map(|node| psi.values[node].norm())
        .fold(0.0, f64::max)
}

/// Closed-form one-dimensional packets used as oracles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AnalyticSolution {
    /// Free Gaussian of width `sigma` centred at `center` with momentum `momentum`.
    FreeGaussian { center: f64, momentum: f64, sigma: f64, mass: f64, hbar: f64 },
    /// Ground-state-width packet displaced to `x0` in the well `m omega^2 x^2 / 2`.
    Coherent { x0: f64, omega: f64, mass: f64, hbar: f64 },
}

impl AnalyticSolution {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            AnalyticSolution::FreeGaussian { sigma, mass, hbar, .. } => sigma > 0.0 && mass > 0.0 && hbar > 0.0,
            AnalyticSolution::Coherent { omega, mass, hbar, .. } => omega > 0.0 && mass > 0.0 && hbar > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!("invalid analytic solution parameters {self:?}")))
        }
    }

    /// Recognise which closed form, if any, matches a one-dimensional scenario.
    pub fn for_scenario(system: &PhysicalSystem, spec: &GaussianStateSpec, pot: &PotentialSpec) -> Option<Self> {
        use crate::model::PotentialTerm;
        if system.config_dim() != 1 {
            return None;
        }
        let (mass, hbar) = (system.masses[0], system.hbar);
        let a = spec.inverse_covariance[0];
        let sigma = (1.0 / a).sqrt();
        let mut stiffness = 0.0;
        for term in &pot.terms {
            match term {
                PotentialTerm::Free => {}
                PotentialTerm::Quadratic { stiffness: k, linear } => {
                    if linear.iter().any(|b| *b != 0.0) {
                        return None;
                    }
                    stiffness += k[0];
                }
                PotentialTerm::Kick { .. } => return None,
            }
        }
        if stiffness == 0.0 {
            return Some(AnalyticSolution::FreeGaussian {
                center: spec.center[0],
                momentum: spec.momentum[0],
                sigma,
                mass,
                hbar,
            });
        }
        let omega = (stiffness / mass).sqrt();
        let ground = hbar / (2.0 * mass * omega);
        if stiffness > 0.0 && spec.momentum[0] == 0.0 && ((sigma * sigma - ground) / ground).abs() < 1e-12 {
            return Some(AnalyticSolution::Coherent { x0: spec.center[0], omega, mass, hbar });
        }
        None
    }

    /// Width growth `sqrt(1 + (hbar t / 2 m sigma^2)^2)` of the free packet.
    fn spread(sigma: f64, mass: f64, hbar: f64, t: f64) -> f64 {
        let tau = hbar * t / (2.0 * mass * sigma * sigma);
        (1.0 + tau * tau).sqrt()
    }

    /// Position at time `t` of the trajectory that started at `a`.
    pub fn trajectory(&self, a: f64, t: f64) -> f64 {
        match *self {
            AnalyticSolution::FreeGaussian { center, momentum, sigma, mass, hbar } => {
                center + momentum / mass * t + (a - center) * Self::spread(sigma, mass, hbar, t)
            }
            AnalyticSolution::Coherent { x0, omega, .. } => a + x0 * ((omega * t).cos() - 1.0),
        }
    }

    /// Bohmian velocity field `v(x, t)`.
    pub fn velocity(&self, x: f64, t: f64) -> f64 {
        match *self {
            AnalyticSolution::FreeGaussian { center, momentum, sigma, mass, hbar } => {
                let rate = hbar / (2.0 * mass * sigma * sigma);
                let tau = rate * t;
                let xi = x - center - momentum / mass * t;
                momentum / mass + xi * tau * rate / (1.0 + tau * tau)
            }
            AnalyticSolution::Coherent { x0, omega, .. } => -x0 * omega * (omega * t).sin(),
        }
    }

    pub fn psi(&self, x: f64, t: f64) -> Complex64 {
        let i = Complex64::i();
        match *self {
            AnalyticSolution::FreeGaussian { center, momentum, sigma, mass, hbar } => {
                let tau = hbar * t / (2.0 * mass * sigma * sigma);
                let w = Complex64::new(1.0, tau);
                let xi = x - center - momentum / mass * t;
                let energy = momentum * momentum / (2.0 * mass);
                let norm = (2.0 * PI * sigma * sigma).powf(-0.25);
                norm / w.sqrt()
                    * (-(xi * xi) / (4.0 * sigma * sigma * w) + i * (momentum * (x - center) - energy * t) / hbar).exp()
            }
            AnalyticSolution::Coherent { x0, omega, mass, hbar } => {
                let xc = x0 * (omega * t).cos();
                let pc = -mass * omega * x0 * (omega * t).sin();
                let norm = (mass * omega / (PI * hbar)).powf(0.25);
                let d = x - xc;
                let arg = -mass * omega * d * d / (2.0 * hbar) + i * (pc * x / hbar - omega * t / 2.0 - pc * xc / (2.0 * hbar));
                norm * arg.exp()
            }
        }
    }

    pub fn wavefunction(&self, grid: &SpatialGrid, t: f64) -> WavefunctionField {
        WavefunctionField::from_fn(grid.clone(), t, |x| self.psi(x[0], t))
    }
}

/// Closed-form state at `t`: `psi` on `grid` and the trajectory map.
pub fn analytic_state(
    solution: &AnalyticSolution,
    grid: &SpatialGrid,
    t: f64,
) -> Result<(WavefunctionField, impl Fn(f64) -> f64)> {
    solution.validate()?;
    let s = *solution;
    Ok((s.wavefunction(grid, t), move |a| s.trajectory(a, t)))
}

/// Four-point Lagrange weights at fractional offset `s` in `[0, 1)` from node 0,
/// for nodes at offsets -1, 0, 1, 2.
fn cubic_weights(s: f64) -> [f64; 4] {
    [
        -s * (s - 1.0) * (s - 2.0) / 6.0,
        (s + 1.0) * (s - 1.0) * (s - 2.0) / 2.0,
        -(s + 1.0) * s * (s - 2.0) / 2.0,
        (s + 1.0) * s * (s - 1.0) / 6.0,
    ]
}

/// Tensor-product cubic interpolation stencil at `x` on a periodic grid.
fn cubic_stencil(grid: &SpatialGrid, x: &[f64]) -> Vec<(usize, f64)> {
    let d = grid.ndim();
    let mut per_axis = Vec::with_capacity(d);
    for (k, ax) in grid.axes().iter().enumerate() {
        let u = (x[k] - ax.start) / ax.step;
        let i0 = u.floor();
        let w = cubic_weights(u - i0);
        let n = ax.len as i64;
        let idx: Vec<(usize, f64)> = (0..4)
            .map(|j| ((((i0 as i64 - 1 + j as i64) % n + n) % n) as usize, w[j]))
            .collect();
        per_axis.push(idx);
    }
    let mut out = vec![(0usize, 1.0f64)];
    for (k, pts) in per_axis.iter().enumerate() {
        let stride = grid.stride(k);
        out = out
            .iter()
            .flat_map(|&(node, w)| pts.iter().map(move |&(i, wi)| (node + i * stride, w * wi)))
            .collect();
    }
    out
}

/// `psi` and its spectral gradient, ready for interpolation.
pub struct VelocityField {
    pub t: f64,
    grid: SpatialGrid,
    values: Vec<Complex64>,
    gradients: Vec<Vec<Complex64>>,
    masses: Vec<f64>,
    hbar: f64,
    floor: f64,
}

impl VelocityField {
    /// `density_floor` is relative to the largest `|psi|^2` on the grid.
    pub fn new(psi: &WavefunctionField, prop: &SpectralPropagator, density_floor: f64) -> Self {
        let gradients = (0..psi.grid.ndim()).map(|k| prop.gradient(&psi.values, k)).collect();
        let max = psi.values.iter().map(|z| z.norm_sqr()).fold(0.0, f64::max);
        VelocityField {
            t: psi.t,
            grid: psi.grid.clone(),
            values: psi.values.clone(),
            gradients,
            masses: (0..psi.grid.ndim()).map(|k| prop.system.mass_of(k)).collect(),
            hbar: prop.system.hbar,
            floor: density_floor * max,
        }
    }

    /// Interpolated `(psi, grad psi)` at `x`.
    fn sample(&self, x: &[f64]) -> (Complex64, Vec<Complex64>) {
        let st = cubic_stencil(&self.grid, x);
        let psi = st.iter().map(|&(n, w)| self.values[n] * w).sum();
        let grad = self.gradients.iter().map(|g| st.iter().map(|&(n, w)| g[n] * w).sum()).collect();
        (psi, grad)
    }

    /// Full configuration velocity `(hbar/m) Im(grad psi / psi)` at `x`.
    pub fn velocity(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (psi, grad) = self.sample(x);
        velocity_from(psi, &grad, &self.masses, self.hbar, self.floor, x)
    }
}

fn velocity_from(psi: Complex64, grad: &[Complex64], masses: &[f64], hbar: f64, floor: f64, x: &[f64]) -> Result<Vec<f64>> {
    let density = psi.norm_sqr();
    if !(density > floor) {
        return Err(Error::NodeProximity { point: x.to_vec(), density });
    }
    Ok(grad.iter().zip(masses).map(|(g, m)| hbar / m * (g / psi).im).collect())
}

/// Velocity of particle `r` at configuration point `x`.
pub fn bohm_velocity(field: &VelocityField, x: &[f64], r: usize, dim: usize) -> Result<Vec<f64>> {
    let v = field.velocity(x)?;
    Ok(v[r * dim..(r + 1) * dim].to_vec())
}

/// Snapshots of `psi` at uniformly spaced times `t0 + k dt`.
#[derive(Debug, Clone)]
pub struct PsiHistory {
    pub dt: f64,
    pub snapshots: Vec<WavefunctionField>,
}

impl PsiHistory {
    /// Run the spectral propagator from `psi0`, recording every `stride`-th step.
    pub fn record(
        psi0: WavefunctionField,
        prop: &SpectralPropagator,
        pot: &PotentialSpec,
        steps: usize,
        stride: usize,
    ) -> Result<Self> {
        let mut psi = psi0;
        let t0 = psi.t;
        let mut snapshots = vec![psi.clone()];
        for s in 1..=steps {
            prop.step(&mut psi, pot)?;
            psi.t = t0 + s as f64 * prop.dt;
            if s % stride == 0 {
                snapshots.push(psi.clone());
            }
        }
        Ok(PsiHistory { dt: prop.dt * stride as f64, snapshots })
    }

    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.t).collect()
    }
}

/// Bohmian probes advanced snapshot by snapshot.
///
/// Classical RK4 with one step per snapshot interval; `psi` and its gradient at the
/// half step are the average of the neighbouring snapshots.
pub struct ProbeTracker {
    here: VelocityField,
    pub positions: Vec<Vec<f64>>,
}

impl ProbeTracker {
    pub fn new(psi: &WavefunctionField, prop: &SpectralPropagator, density_floor: f64, starts: &[Vec<f64>]) -> Self {
        ProbeTracker { here: VelocityField::new(psi, prop, density_floor), positions: starts.to_vec() }
    }

    pub fn time(&self) -> f64 {
        self.here.t
    }

    /// Move every probe to the time of `next`.
    pub fn advance(&mut self, next: &WavefunctionField, prop: &SpectralPropagator, density_floor: f64) -> Result<()> {
        let there = VelocityField::new(next, prop, density_floor);
        let here = &self.here;
        let h = there.t - here.t;
        let floor = here.floor.max(there.floor);
        let mid = |x: &[f64]| -> Result<Vec<f64>> {
            let (p0, g0) = here.sample(x);
            let (p1, g1) = there.sample(x);
            let grad: Vec<Complex64> = g0.iter().zip(&g1).map(|(a, b)| (a + b) * 0.5).collect();
            velocity_from((p0 + p1) * 0.5, &grad, &here.masses, here.hbar, floor, x)
        };
        let stepped: Result<Vec<Vec<f64>>> = self
            .positions
            .par_iter()
            .map(|x| {
                let k1 = here.velocity(x)?;
                let x2: Vec<f64> = x.iter().zip(&k1).map(|(a, k)| a + 0.5 * h * k).collect();
                let k2 = mid(&x2)?;
                let x3: Vec<f64> = x.iter().zip(&k2).map(|(a, k)| a + 0.5 * h * k).collect();
                let k3 = mid(&x3)?;
                let x4: Vec<f64> = x.iter().zip(&k3).map(|(a, k)| a + h * k).collect();
                let k4 = there.velocity(&x4)?;
                Ok((0..x.len()).map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect())
            })
            .collect();
        self.positions = stepped?;
        self.here = there;
        Ok(())
    }
}

/// Integrate Bohmian paths from several starting points through a recorded history.
///
/// Returns, for every start, the sampled path (one configuration point per snapshot).
pub fn integrate_eulerian_trajectories(
    history: &PsiHistory,
    prop: &SpectralPropagator,
    starts: &[Vec<f64>],
    density_floor: f64,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let mut paths: Vec<Vec<Vec<f64>>> = starts.iter().map(|x| vec![x.clone()]).collect();
    let Some(first) = history.snapshots.first() else {
        return Ok(paths);
    };
    let mut tracker = ProbeTracker::new(first, prop, density_floor, starts);
    for next in &history.snapshots[1..] {
        tracker.advance(next, prop, density_floor)?;
        for (path, x) in paths.iter_mut().zip(&tracker.positions) {
            path.push(x.clone());
        }
    }
    Ok(paths)
}

/// Single-start convenience wrapper returning the path of particle `r`.
pub fn integrate_eulerian_trajectory(
    history: &PsiHistory,
    prop: &SpectralPropagator,
    start: &[f64],
    r: usize,
    dim: usize,
    density_floor: f64,
) -> Result<Vec<Vec<f64>>> {
    let paths = integrate_eulerian_trajectories(history, prop, &[start.to_vec()], density_floor)?;
    Ok(paths[0].iter().map(|x| x[r * dim..(r + 1) * dim].to_vec()).collect())
}

/// Power-of-two spatial grid covering `[center - half, center + half)` on every axis.
pub fn oracle_grid(centers: &[f64], half_widths: &[f64], points: usize) -> SpatialGrid {
    let bounds: Vec<(f64, f64)> = centers.iter().zip(half_widths).map(|(c, h)| (c - h, c + h)).collect();
    SpatialGrid::periodic(&bounds, points.next_power_of_two())
}

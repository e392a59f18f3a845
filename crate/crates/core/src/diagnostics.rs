//! Quantitative checks that tie the trajectory picture to the wavefunction picture.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lagrangian::{self, EngineConfig};
use crate::model::{GaussianStateSpec, LabelGrid, PhysicalSystem, PotentialSpec, TrajectoryField, WavefunctionField};
use crate::reconstruction::{InverseMap, InversionStatus, Reconstructor};
use crate::stencil;

/// Per-node residual of the first-order (momentum) form of the dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstOrderResidual {
    /// D values per node.
    pub residual: Vec<f64>,
    /// `rho0`-weighted RMS over interior nodes.
    pub rms: f64,
}

/// `R_k = sum_i m_i v_i dq_i/da_k - m_k v0_k - d(S - S0)/da_k`.
pub fn first_order_residual(
    field: &TrajectoryField,
    grid: &LabelGrid,
    system: &PhysicalSystem,
    cfg: &EngineConfig,
) -> Result<FirstOrderResidual> {
    let d = field.dim;
    let defo = lagrangian::deformation(field, grid, cfg)?;
    let ds: Vec<f64> = field.action.iter().zip(&field.s0).map(|(s, s0)| s - s0).collect();
    let grads: Vec<Vec<f64>> = (0..d).map(|k| stencil::derivative(grid, &ds, k, cfg.stencil)).collect();
    let n = grid.len();
    let mut residual = vec![0.0; n * d];
    let margin = cfg.stencil.half_width();
    let (mut num, mut den) = (0.0, 0.0);
    for node in 0..n {
        let f = defo.matrix(node);
        let v = field.velocity(node);
        let mut sq = 0.0;
        for k in 0..d {
            let momentum: f64 = (0..d).map(|i| system.mass_of(i) * v[i] * f[i * d + k]).sum();
            let r = momentum - system.mass_of(k) * field.v0[node * d + k] - grads[k][node];
            residual[node * d + k] = r;
            sq += r * r;
        }
        if grid.is_interior(node, margin) {
            num += field.rho0[node] * sq;
            den += field.rho0[node];
        }
    }
    Ok(FirstOrderResidual { residual, rms: if den > 0.0 { (num / den).sqrt() } else { 0.0 } })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conservation {
    /// Largest `|J rho - rho0| / rho0` over nodes and snapshots.
    pub node_drift: f64,
    /// `|norm - 1|` of each reconstructed wavefunction.
    pub norm_drift: Vec<f64>,
    pub max_norm_drift: f64,
}

/// Largest relative deviation of `J * (rho0 / J)` from `rho0` at one time.
pub fn node_conservation_drift(field: &TrajectoryField, grid: &LabelGrid, cfg: &EngineConfig) -> Result<f64> {
    let defo = lagrangian::deformation(field, grid, cfg)?;
    let rho = lagrangian::transported_density(&defo, &field.rho0);
    Ok(rho
        .iter()
        .zip(&defo.jacobian)
        .zip(&field.rho0)
        .map(|((r, j), r0)| (r * j - r0).abs() / r0)
        .fold(0.0, f64::max))
}

pub fn conservation_check(
    history: &[TrajectoryField],
    grid: &LabelGrid,
    cfg: &EngineConfig,
    reconstructions: &[WavefunctionField],
) -> Result<Conservation> {
    let mut node_drift = 0.0f64;
    for f in history {
        node_drift = node_drift.max(node_conservation_drift(f, grid, cfg)?);
    }
    let norm_drift: Vec<f64> = reconstructions.iter().map(|p| (p.norm_sqr() - 1.0).abs()).collect();
    let max_norm_drift = norm_drift.iter().copied().fold(0.0, f64::max);
    Ok(Conservation { node_drift, norm_drift, max_norm_drift })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Independence {
    /// `chi[r][s]`: max Frobenius norm of `dq_r/da_s` over interior nodes.
    pub chi: Vec<Vec<f64>>,
    pub max_cross: f64,
    pub factorization_residual: f64,
}

/// Cross-sensitivities between particles and the `rho0` factorization residual.
pub fn independence_metrics(
    field: &TrajectoryField,
    grid: &LabelGrid,
    system: &PhysicalSystem,
    spec: &GaussianStateSpec,
    cfg: &EngineConfig,
) -> Result<Independence> {
    let n = system.particles;
    let d = field.dim;
    let defo = lagrangian::deformation(field, grid, cfg)?;
    let margin = cfg.stencil.half_width();
    let mut chi = vec![vec![0.0; n]; n];
    for node in (0..grid.len()).filter(|&node| grid.is_interior(node, margin)) {
        let f = defo.matrix(node);
        for r in 0..n {
            for s in 0..n {
                let frob: f64 = system
                    .block(r)
                    .flat_map(|i| system.block(s).map(move |k| (i, k)))
                    .map(|(i, k)| f[i * d + k] * f[i * d + k])
                    .sum::<f64>()
                    .sqrt();
                chi[r][s] = f64::max(chi[r][s], frob);
            }
        }
    }
    let max_cross = (0..n)
        .flat_map(|r| (0..n).filter(move |&s| s != r).map(move |s| (r, s)))
        .map(|(r, s)| chi[r][s])
        .fold(0.0, f64::max);
    Ok(Independence { chi, max_cross, factorization_residual: factorization_residual(spec, system) })
}

/// Four-point rectangle test of `rho0(a) rho0(a') = rho0(mix) rho0(mix')`, where the
/// mixed points exchange particle `r`'s coordinate block between `a` and `a'`.
pub fn factorization_residual(spec: &GaussianStateSpec, system: &PhysicalSystem) -> f64 {
    let d = spec.dim();
    let peak = spec.density(&spec.center);
    let offsets = [-1.0, 0.0, 1.0];
    let sigma: Vec<f64> = (0..d).map(|k| spec.marginal_sigma(k)).collect();
    let point = |r: usize, own: f64, rest: f64| -> Vec<f64> {
        (0..d)
            .map(|k| spec.center[k] + sigma[k] * if system.particle_of(k) == r { own } else { rest })
            .collect()
    };
    let mut worst = 0.0f64;
    for r in 0..system.particles {
        for &x in &offsets {
            for &x2 in &offsets {
                for &y in &offsets {
                    for &y2 in &offsets {
                        let lhs = spec.density(&point(r, x, y)) * spec.density(&point(r, x2, y2));
                        let rhs = spec.density(&point(r, x, y2)) * spec.density(&point(r, x2, y));
                        worst = worst.max((lhs - rhs).abs() / (peak * peak));
                    }
                }
            }
        }
    }
    worst
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonlocalityProbe {
    /// Largest displacement of the watched particle's trajectories caused by the kick.
    pub max_displacement: f64,
    /// Time the kick switches on.
    pub kick_on: f64,
    /// First step time at which the watched particle responded, if it did.
    pub first_response: Option<f64>,
}

impl NonlocalityProbe {
    /// Delay between switching the kick on and the first observed response.
    pub fn latency(&self) -> Option<f64> {
        self.first_response.map(|t| t - self.kick_on)
    }
}

/// Run the scenario with and without its kick terms in lockstep and record how far
/// the trajectories of particle `watched` move apart.
#[allow(clippy::too_many_arguments)]
pub fn nonlocality_probe(
    initial: &TrajectoryField,
    grid: &LabelGrid,
    system: &PhysicalSystem,
    kicked: &PotentialSpec,
    cfg: &EngineConfig,
    t_final: f64,
    watched: usize,
) -> Result<NonlocalityProbe> {
    let plain = kicked.without_kicks();
    let kick_on = kicked
        .terms
        .iter()
        .filter_map(|t| match t {
            crate::model::PotentialTerm::Kick { t_on, .. } => Some(*t_on),
            _ => None,
        })
        .fold(f64::INFINITY, f64::min);
    let d = initial.dim;
    let block = system.block(watched);
    let (steps, last) = lagrangian::step_plan(t_final - initial.t, cfg.dt);
    let mut a = initial.clone();
    let mut b = initial.clone();
    let mut probe = NonlocalityProbe { max_displacement: 0.0, kick_on, first_response: None };
    for s in 0..steps {
        let h = if s + 1 == steps { last } else { cfg.dt };
        let step_cfg = EngineConfig { dt: h, ..cfg.clone() };
        a = lagrangian::rk4_step(&a, grid, system, kicked, &step_cfg)?;
        b = lagrangian::rk4_step(&b, grid, system, &plain, &step_cfg)?;
        let mut here = 0.0f64;
        for node in 0..grid.len() {
            for i in block.clone() {
                here = here.max((a.positions[node * d + i] - b.positions[node * d + i]).abs());
            }
        }
        if here > 0.0 && probe.first_response.is_none() {
            probe.first_response = Some(a.t);
        }
        probe.max_displacement = probe.max_displacement.max(here);
    }
    Ok(probe)
}

/// Node that labels the exchanged configuration `(b, a)` of the label `(a, b)`.
fn exchanged_nodes(grid: &LabelGrid, system: &PhysicalSystem) -> Result<Vec<usize>> {
    if system.particles != 2 {
        return Err(Error::Validation("exchange symmetry needs exactly two particles".into()));
    }
    let pd = system.dim;
    for k in 0..pd {
        if grid.axis(k) != grid.axis(pd + k) {
            return Err(Error::GridNotExchangeSymmetric(0, 1));
        }
    }
    Ok((0..grid.len())
        .map(|node| {
            let mut idx = grid.multi_index(node);
            let (x, y) = idx.split_at_mut(pd);
            x.swap_with_slice(y);
            grid.flat_index(&idx)
        })
        .collect())
}

/// `max |q_1(a,b,t) - q_2(b,a,t)|` using exact index transposition.
pub fn exchange_symmetry_residual(field: &TrajectoryField, grid: &LabelGrid, system: &PhysicalSystem) -> Result<f64> {
    let swap = exchanged_nodes(grid, system)?;
    let pd = system.dim;
    let d = field.dim;
    let mut worst = 0.0f64;
    for (node, &other) in swap.iter().enumerate() {
        for k in 0..pd {
            let q1 = field.positions[node * d + k];
            let q2 = field.positions[other * d + pd + k];
            worst = worst.max((q1 - q2).abs());
        }
    }
    Ok(worst)
}

/// Root-mean-square distance between engine paths and oracle paths (same probes,
/// same sample times).
pub fn trajectory_rmse(engine: &[Vec<Vec<f64>>], oracle: &[Vec<Vec<f64>>]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (pe, po) in engine.iter().zip(oracle) {
        for (xe, xo) in pe.iter().zip(po) {
            for (a, b) in xe.iter().zip(xo) {
                sum += (a - b) * (a - b);
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        (sum / count as f64).sqrt()
    }
}

/// Largest antisymmetric part of the momentum gradient `m_i dv_i/dq_j` over interior
/// nodes whose transported density exceeds `relative_floor` times the peak.
///
/// A single-valued phase makes this matrix a Hessian of `S`, hence symmetric.
pub fn velocity_curl_residual(
    field: &TrajectoryField,
    grid: &LabelGrid,
    system: &PhysicalSystem,
    cfg: &EngineConfig,
    relative_floor: f64,
) -> Result<f64> {
    let d = field.dim;
    if d < 2 {
        return Ok(0.0);
    }
    let defo = lagrangian::deformation(field, grid, cfg)?;
    let grads: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            let p: Vec<f64> = field.velocity_component(i).iter().map(|v| v * system.mass_of(i)).collect();
            lagrangian::grad_config(&p, &defo, grid, cfg)
        })
        .collect();
    let rho = lagrangian::transported_density(&defo, &field.rho0);
    let peak = rho.iter().copied().fold(0.0, f64::max);
    let margin = cfg.stencil.half_width();
    let mut worst = 0.0f64;
    for node in 0..grid.len() {
        if !grid.is_interior(node, margin) || rho[node] < relative_floor * peak {
            continue;
        }
        for i in 0..d {
            for j in 0..i {
                worst = worst.max(0.5 * (grads[i][node * d + j] - grads[j][node * d + i]).abs());
            }
        }
    }
    Ok(worst)
}

/// Largest `|symmetric hybrid - direct reconstruction|` over converged nodes of a map.
pub fn hybrid_identity_residual(rec: &Reconstructor, map: &InverseMap, spatial: &crate::model::SpatialGrid, particles: usize) -> Result<f64> {
    let d = map.dim;
    let mut worst = 0.0f64;
    for node in 0..spatial.len() {
        if map.status[node] != InversionStatus::Converged {
            continue;
        }
        let x = spatial.coords(node);
        let direct = rec.psi_at_label(&map.labels[node * d..(node + 1) * d]);
        let sym = match rec.symmetric_hybrid_psi(&x, particles) {
            Ok(z) => z,
            // hybrid arguments can leave the congruence near its edge
            Err(Error::OutsideCongruence(_)) => continue,
            Err(e) => return Err(e),
        };
        worst = worst.max((sym - direct).norm());
    }
    Ok(worst)
}

/// Density-weighted RMS of `m_k v_k(a(x)) - hbar d(arg psi)/dx_k`, with the phase
/// derivative taken by central differences of the reconstructed wavefunction.
pub fn phase_gradient_residual(
    rec: &Reconstructor,
    map: &InverseMap,
    psi: &WavefunctionField,
    system: &PhysicalSystem,
) -> f64 {
    let spatial = &psi.grid;
    let d = map.dim;
    let ok = |node: usize| map.status[node] == InversionStatus::Converged && psi.values[node].norm_sqr() > 0.0;
    let (mut num, mut den) = (0.0, 0.0);
    for node in 0..spatial.len() {
        if !spatial.is_interior(node, 1) || !ok(node) {
            continue;
        }
        let neighbours: Vec<(usize, usize)> =
            (0..d).map(|k| (node + spatial.stride(k), node - spatial.stride(k))).collect();
        if neighbours.iter().any(|&(p, m)| !ok(p) || !ok(m)) {
            continue;
        }
        let v = rec.velocity_at_label(&map.labels[node * d..(node + 1) * d]);
        let weight = psi.values[node].norm_sqr();
        for (k, &(p, m)) in neighbours.iter().enumerate() {
            let slope = (psi.values[p] * psi.values[m].conj()).arg() / (2.0 * spatial.axis(k).step);
            let r = system.mass_of(k) * v[k] - system.hbar * slope;
            num += weight * r * r;
        }
        den += weight;
    }
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        0.0
    }
}

/// `rho0`-weighted standard deviation of every position component.
pub fn congruence_width(field: &TrajectoryField) -> Vec<f64> {
    let d = field.dim;
    let total: f64 = field.rho0.iter().sum();
    (0..d)
        .map(|i| {
            let q = field.position_component(i);
            let mean = q.iter().zip(&field.rho0).map(|(q, w)| q * w).sum::<f64>() / total;
            let var = q.iter().zip(&field.rho0).map(|(q, w)| w * (q - mean) * (q - mean)).sum::<f64>() / total;
            var.sqrt()
        })
        .collect()
}

/// Largest `| |Psi|^2 J - rho0 | / rho0` of the alocal wavefunction over label nodes.
pub fn alocal_identity_residual(
    field: &TrajectoryField,
    grid: &LabelGrid,
    system: &PhysicalSystem,
    cfg: &EngineConfig,
) -> Result<f64> {
    let psi = crate::reconstruction::alocal_psi(field, grid, system, cfg)?;
    let defo = lagrangian::deformation(field, grid, cfg)?;
    Ok(psi
        .iter()
        .zip(&defo.jacobian)
        .zip(&field.rho0)
        .map(|((z, j), r0)| (z.norm_sqr() * j - r0).abs() / r0)
        .fold(0.0, f64::max))
}

/// Which side of the threshold a metric must fall on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    #[default]
    Below,
    Above,
}

impl Bound {
    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Bound::Below => value < threshold,
            Bound::Above => value > threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub value: f64,
    pub threshold: f64,
    pub bound: Bound,
    pub pass: bool,
    pub scenario: String,
    /// Label points per axis.
    pub resolution: Vec<usize>,
    /// Time at which the value was attained.
    pub time: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub metrics: BTreeMap<String, Metric>,
    /// Values recorded alongside the checks but not tested against a threshold.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub info: BTreeMap<String, f64>,
}

impl DiagnosticReport {
    pub fn passed(&self) -> bool {
        self.metrics.values().all(|m| m.pass)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.metrics.iter().filter(|(_, m)| !m.pass).map(|(k, _)| k.as_str()).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Axis;

    #[test]
    fn residual_vanishes_at_start_and_detects_corruption() {
        let system = PhysicalSystem::single(1, 1.0);
        let spec = GaussianStateSpec::gaussian_1d(0.0, 1.0, 0.5);
        let grid = LabelGrid::new(vec![Axis::new(-6.0, 6.0, 61)]).unwrap();
        let mut field = TrajectoryField::initial(&grid, &spec, &system).unwrap();
        let cfg = EngineConfig::default();
        let r = first_order_residual(&field, &grid, &system, &cfg).unwrap();
        assert!(r.rms < 1e-14);
        for (node, s) in field.action.iter_mut().enumerate() {
            *s += 1e-2 * grid.coords(node)[0];
        }
        let r = first_order_residual(&field, &grid, &system, &cfg).unwrap();
        assert!((r.rms - 1e-2).abs() < 1e-12);
    }

    #[test]
    fn factorization_residual_separates_product_and_entangled() {
        let system = PhysicalSystem::new(2, 1, vec![1.0, 1.0], 1.0).unwrap();
        let product = GaussianStateSpec::new(vec![0.0; 2], vec![0.0; 2], vec![1.0, 0.0, 0.0, 2.0]).unwrap();
        assert!(factorization_residual(&product, &system) < 1e-15);
        let entangled = GaussianStateSpec::new(vec![0.0; 2], vec![0.0; 2], vec![1.0, 0.5, 0.5, 1.0]).unwrap();
        assert!(factorization_residual(&entangled, &system) > 1e-2);
    }

    #[test]
    fn exchange_residual_on_initial_field_is_zero() {
        let system = PhysicalSystem::new(2, 1, vec![1.0, 1.0], 1.0).unwrap();
        let spec = GaussianStateSpec::new(vec![0.0; 2], vec![0.0; 2], vec![1.0, 0.3, 0.3, 1.0]).unwrap();
        let grid = LabelGrid::new(vec![Axis::new(-3.0, 3.0, 9), Axis::new(-3.0, 3.0, 9)]).unwrap();
        let field = TrajectoryField::initial(&grid, &spec, &system).unwrap();
        assert_eq!(exchange_symmetry_residual(&field, &grid, &system).unwrap(), 0.0);
        let lopsided = LabelGrid::new(vec![Axis::new(-3.0, 3.0, 9), Axis::new(-2.0, 3.0, 9)]).unwrap();
        let field = TrajectoryField::initial(&lopsided, &spec, &system).unwrap();
        assert!(matches!(
            exchange_symmetry_residual(&field, &lopsided, &system),
            Err(Error::GridNotExchangeSymmetric(0, 1))
        ));
    }

    #[test]
    fn report_json_shape() {
        let mut report = DiagnosticReport::default();
        report.metrics.insert(
            "norm_drift".into(),
            Metric {
                value: 1e-5,
                threshold: 1e-3,
                bound: Bound::Below,
                pass: true,
                scenario: "s".into(),
                resolution: vec![201],
                time: 2.0,
                dt: 1e-3,
            },
        );
        let v: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(v["metrics"]["norm_drift"]["pass"], true);
        assert_eq!(v["metrics"]["norm_drift"]["resolution"][0], 201);
        assert!(report.passed());
    }
}

//! Scenario files, run orchestration and artifact emission.
//!
//! A scenario is a JSON document describing the system, the initial packet, the
//! potential, the label grid, the engine settings and the checks to evaluate.
//! [`run_scenario`] propagates the congruence, optionally advances the spectral
//! oracle in lockstep, samples every enabled check at each snapshot and writes
//! the CSV and JSON artifacts.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{self, Bound, DiagnosticReport, Metric};
use crate::error::{Error, Result};
use crate::eulerian::{self, AnalyticSolution, ProbeTracker, SpectralPropagator};
use crate::lagrangian::{self, EngineConfig};
use crate::model::{
    label_grid_with_reach, GaussianStateSpec, LabelGrid, PhysicalSystem, PotentialSpec, PotentialTerm, SpatialGrid,
    TrajectoryField, WavefunctionField,
};
use crate::reconstruction::{Gauge, Reconstructor};

/// Scenarios shipped with the crate, by id.
pub const BUNDLED: &[(&str, &str)] = &[
    ("free_gaussian", include_str!("../scenarios/free_gaussian.json")),
    ("coherent_state", include_str!("../scenarios/coherent_state.json")),
    ("coupled_product", include_str!("../scenarios/coupled_product.json")),
    ("coupled_entangled", include_str!("../scenarios/coupled_entangled.json")),
    ("entangled_kick", include_str!("../scenarios/entangled_kick.json")),
    ("identical_symmetrized", include_str!("../scenarios/identical_symmetrized.json")),
];

pub fn bundled(id: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(name, _)| *name == id).map(|(_, text)| *text)
}

fn one() -> usize {
    1
}

fn six() -> f64 {
    6.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelGridSpec {
    /// Points per axis; a single value applies to every axis.
    pub points: Vec<usize>,
    /// Half-width of the label box in marginal standard deviations.
    #[serde(default = "six")]
    pub cutoff_sigmas: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSpec {
    pub enabled: bool,
    /// Spatial points per axis, rounded up to a power of two.
    pub points: Option<usize>,
    /// Half-width of the spatial box per axis, centred on the packet.
    pub half_width: Option<Vec<f64>>,
    /// Number of labels followed by both pictures.
    pub probes: usize,
}

impl Default for OracleSpec {
    fn default() -> Self {
        OracleSpec { enabled: false, points: None, half_width: None, probes: 9 }
    }
}

/// Named diagnostic checks a scenario can request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    /// Max error of `q(a,t)` against the closed form, relative to the packet scale.
    TrajectoryError,
    /// Max absolute error of `q(a,t)` against the closed form.
    TrajectoryDeviation,
    /// Max change of the `rho0`-weighted congruence width, in units of the initial sigma.
    CongruenceWidth,
    FirstOrderResidual,
    NodeConservation,
    NormDrift,
    RoundTrip,
    ReconstructionError,
    DensityError,
    PhaseGradient,
    OracleTrajectoryRmse,
    CurlResidual,
    CrossSensitivity,
    FactorizationResidual,
    Nonlocality,
    ExchangeSymmetry,
    HybridIdentity,
    AlocalIdentity,
}

impl Check {
    pub const ALL: [Check; 18] = [
        Check::TrajectoryError,
        Check::TrajectoryDeviation,
        Check::CongruenceWidth,
        Check::FirstOrderResidual,
        Check::NodeConservation,
        Check::NormDrift,
        Check::RoundTrip,
        Check::ReconstructionError,
        Check::DensityError,
        Check::PhaseGradient,
        Check::OracleTrajectoryRmse,
        Check::CurlResidual,
        Check::CrossSensitivity,
        Check::FactorizationResidual,
        Check::Nonlocality,
        Check::ExchangeSymmetry,
        Check::HybridIdentity,
        Check::AlocalIdentity,
    ];

    pub fn name(self) -> String {
        serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default()
    }

    fn needs_oracle(self) -> bool {
        matches!(self, Check::ReconstructionError | Check::DensityError | Check::OracleTrajectoryRmse)
    }

    fn needs_reconstruction(self) -> bool {
        matches!(
            self,
            Check::NormDrift
                | Check::RoundTrip
                | Check::ReconstructionError
                | Check::DensityError
                | Check::PhaseGradient
                | Check::HybridIdentity
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSpec {
    pub check: Check,
    pub threshold: f64,
    #[serde(default)]
    pub bound: Bound,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Trajectories,
    Wavefunction,
}

fn all_formats() -> Vec<Format> {
    vec![Format::Trajectories, Format::Wavefunction]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Artifact directory; the CLI falls back to `out/<id>`.
    #[serde(default)]
    pub directory: Option<PathBuf>,
    /// CSV artifacts to write; `report.json` and `manifest.json` are always written.
    #[serde(default = "all_formats")]
    pub formats: Vec<Format>,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec { directory: None, formats: all_formats() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub id: String,
    pub system: PhysicalSystem,
    pub state: GaussianStateSpec,
    #[serde(default)]
    pub potential: PotentialSpec,
    pub grid: LabelGridSpec,
    #[serde(default)]
    pub engine: EngineConfig,
    pub t_final: f64,
    /// Engine steps between snapshots.
    #[serde(default = "one")]
    pub snapshot_stride: usize,
    #[serde(default)]
    pub oracle: OracleSpec,
    #[serde(default)]
    pub gauge: Gauge,
    #[serde(default)]
    pub diagnostics: Vec<CheckSpec>,
    #[serde(default)]
    pub outputs: OutputSpec,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() || !self.id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(invalid(format!("scenario id {:?} must be non-empty [A-Za-z0-9_-]", self.id)));
        }
        self.system.validate()?;
        self.state.validate_for(&self.system)?;
        self.potential.validate(&self.system)?;
        self.engine.validate()?;
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(invalid("t_final must be positive"));
        }
        if self.snapshot_stride == 0 {
            return Err(invalid("snapshot_stride must be at least 1"));
        }
        if !(self.grid.cutoff_sigmas > 0.0) {
            return Err(invalid("grid.cutoff_sigmas must be positive"));
        }
        self.label_grid()?;
        if self.oracle.probes < 9 {
            return Err(invalid("oracle.probes must be at least 9"));
        }
        if let Some(p) = self.oracle.points {
            if p < 8 {
                return Err(invalid("oracle.points must be at least 8"));
            }
        }
        if let Some(h) = &self.oracle.half_width {
            if h.len() != self.state.dim() || h.iter().any(|w| !(*w > 0.0)) {
                return Err(invalid("oracle.half_width needs one positive value per axis"));
            }
        }
        let mut seen = Vec::new();
        for spec in &self.diagnostics {
            let c = spec.check;
            if seen.contains(&c) {
                return Err(invalid(format!("check {} listed twice", c.name())));
            }
            seen.push(c);
            if !(spec.threshold >= 0.0 && spec.threshold.is_finite()) {
                return Err(invalid(format!("check {} needs a finite non-negative threshold", c.name())));
            }
            self.applicable(c)?;
        }
        Ok(())
    }

    fn applicable(&self, c: Check) -> Result<()> {
        let n = self.system.particles;
        let why = match c {
            Check::TrajectoryError | Check::TrajectoryDeviation if self.analytic().is_none() => {
                Some("a closed-form solution (one-dimensional free or coherent packet)")
            }
            c if c.needs_oracle() && !self.oracle.enabled => Some("oracle.enabled"),
            Check::CrossSensitivity | Check::FactorizationResidual if n < 2 => Some("at least two particles"),
            Check::Nonlocality if n < 2 || !self.potential.has_kick() => Some("two particles and a kick term"),
            Check::ExchangeSymmetry
                if n != 2 || self.system.masses[0] != self.system.masses[1] =>
            {
                Some("two particles of equal mass")
            }
            _ => None,
        };
        match why {
            Some(w) => Err(invalid(format!("check {} requires {w}", c.name()))),
            None => Ok(()),
        }
    }

    pub fn analytic(&self) -> Option<AnalyticSolution> {
        AnalyticSolution::for_scenario(&self.system, &self.state, &self.potential)
    }

    pub fn label_grid(&self) -> Result<LabelGrid> {
        label_grid_with_reach(&self.state, &self.system, self.grid.cutoff_sigmas, &self.grid.points)
    }

    /// Spatial grid shared by the oracle and the reconstruction.
    pub fn spatial_grid(&self) -> SpatialGrid {
        let d = self.state.dim();
        let half = match &self.oracle.half_width {
            Some(h) => h.clone(),
            None => (0..d)
                .map(|k| {
                    let sigma = self.state.marginal_sigma(k);
                    let m = self.system.mass_of(k);
                    let tau = self.system.hbar * self.t_final / (2.0 * m * sigma * sigma);
                    let spread = (1.0 + tau * tau).sqrt();
                    (self.grid.cutoff_sigmas + 4.0) * sigma * spread + (self.state.momentum[k] / m).abs() * self.t_final
                })
                .collect(),
        };
        let points = self.oracle.points.unwrap_or(match d {
            1 => 1024,
            2 => 128,
            _ => 32,
        });
        eulerian::oracle_grid(&self.state.center, &half, points)
    }

    pub fn steps(&self) -> usize {
        lagrangian::step_plan(self.t_final, self.engine.dt).0
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

/// Parse and validate a scenario document.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let scenario: Scenario = serde_json::from_str(text).map_err(|e| {
        let full = e.to_string();
        let message = full.rsplit_once(" at line ").map_or(full.as_str(), |(m, _)| m).to_owned();
        Error::Parse { location: format!("line {}, column {}", e.line(), e.column()), message }
    })?;
    scenario.validate()?;
    Ok(scenario)
}

/// Load a scenario from a file path, or by id from the bundled set.
pub fn load_scenario(source: &str) -> Result<Scenario> {
    let path = Path::new(source);
    if path.exists() {
        return parse_scenario(&fs::read_to_string(path)?);
    }
    match bundled(source) {
        Some(text) => parse_scenario(text),
        None => Err(Error::Io(format!("{source}: no such file or bundled scenario"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Passed,
    DiagnosticsFailed,
    NumericalAbort,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Passed => 0,
            RunStatus::DiagnosticsFailed => 1,
            RunStatus::NumericalAbort => 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub report: DiagnosticReport,
    /// Numerical failure that stopped the run early.
    pub abort: Option<Error>,
    pub wall_time: f64,
    pub artifacts: Vec<PathBuf>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    scenario: &'a Scenario,
    engine_version: &'static str,
    wall_time_s: f64,
    status: RunStatus,
    partial: bool,
    error: Option<String>,
    label_points: Vec<usize>,
    spatial_points: Vec<usize>,
    threads: usize,
    artifacts: Vec<String>,
}

struct Oracle {
    prop: SpectralPropagator,
    psi: WavefunctionField,
    tracker: ProbeTracker,
}

/// Worst sample of a check so far.
#[derive(Clone, Copy)]
struct Sample {
    value: f64,
    time: f64,
}

struct Run<'a> {
    s: &'a Scenario,
    analytic: Option<AnalyticSolution>,
    spatial: SpatialGrid,
    wanted: Vec<Check>,
    samples: BTreeMap<Check, Sample>,
    info: BTreeMap<String, f64>,
    oracle: Option<Oracle>,
    probes: Vec<usize>,
    engine_paths: Vec<Vec<Vec<f64>>>,
    oracle_paths: Vec<Vec<Vec<f64>>>,
    width0: Vec<f64>,
    trajectories: Option<csv::Writer<File>>,
    out: Option<PathBuf>,
    artifacts: Vec<PathBuf>,
    snapshot: usize,
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

impl<'a> Run<'a> {
    fn wants(&self, c: Check) -> bool {
        self.wanted.contains(&c)
    }

    fn record(&mut self, c: Check, value: f64, time: f64) {
        if !self.wants(c) {
            return;
        }
        let entry = self.samples.entry(c).or_insert(Sample { value, time });
        if value > entry.value || value.is_nan() {
            *entry = Sample { value, time };
        }
    }

    fn needs_reconstruction(&self) -> bool {
        self.wanted.iter().any(|c| c.needs_reconstruction())
            || (self.out.is_some() && self.s.outputs.formats.contains(&Format::Wavefunction))
    }

    fn observe(&mut self, field: &TrajectoryField, grid: &LabelGrid, last: bool) -> Result<()> {
        let s = self.s;
        let t = field.t;
        let (system, cfg) = (&s.system, &s.engine);
        let d = field.dim;
        let defo = lagrangian::deformation(field, grid, cfg)?;

        if let Some(w) = self.trajectories.as_mut() {
            let mut row = Vec::with_capacity(5 + 3 * d);
            for node in 0..grid.len() {
                row.clear();
                row.push(self.snapshot.to_string());
                row.push(num(t));
                row.push(node.to_string());
                row.extend(grid.coords(node).into_iter().map(num));
                row.extend(field.position(node).iter().copied().map(num));
                row.extend(field.velocity(node).iter().copied().map(num));
                row.push(num(defo.jacobian[node]));
                row.push(num(field.action[node]));
                w.write_record(&row).map_err(csv_error)?;
            }
        }

        if let Some(sol) = self.analytic {
            let centre = sol.trajectory(s.state.center[0], t);
            let width = (sol.trajectory(s.state.center[0] + s.state.marginal_sigma(0), t) - centre).abs();
            let (mut abs, mut rel) = (0.0f64, 0.0f64);
            for (a, q) in grid.axis(0).coords().zip(&field.positions) {
                let exact = sol.trajectory(a, t);
                let err = (q - exact).abs();
                abs = abs.max(err);
                rel = rel.max(err / (exact - centre).abs().max(width));
            }
            self.record(Check::TrajectoryError, rel, t);
            self.record(Check::TrajectoryDeviation, abs, t);
        }
        if self.wants(Check::CongruenceWidth) {
            let w = diagnostics::congruence_width(field);
            let change = (0..d)
                .map(|k| (w[k] - self.width0[k]).abs() / s.state.marginal_sigma(k))
                .fold(0.0, f64::max);
            self.record(Check::CongruenceWidth, change, t);
        }
        if self.wants(Check::FirstOrderResidual) {
            let r = diagnostics::first_order_residual(field, grid, system, cfg)?;
            self.record(Check::FirstOrderResidual, r.rms, t);
        }
        if self.wants(Check::NodeConservation) {
            let drift = diagnostics::node_conservation_drift(field, grid, cfg)?;
            self.record(Check::NodeConservation, drift, t);
        }
        if self.wants(Check::AlocalIdentity) {
            let r = diagnostics::alocal_identity_residual(field, grid, system, cfg)?;
            self.record(Check::AlocalIdentity, r, t);
        }
        if self.wants(Check::CurlResidual) {
            let c = diagnostics::velocity_curl_residual(field, grid, system, cfg, 1e-6)?;
            self.record(Check::CurlResidual, c, t);
        }
        if self.wants(Check::CrossSensitivity) {
            let ind = diagnostics::independence_metrics(field, grid, system, &s.state, cfg)?;
            self.record(Check::CrossSensitivity, ind.max_cross, t);
        }
        if self.wants(Check::ExchangeSymmetry) {
            let r = diagnostics::exchange_symmetry_residual(field, grid, system)?;
            self.record(Check::ExchangeSymmetry, r, t);
        }

        self.engine_paths.push(self.probes.iter().map(|&n| field.position(n).to_vec()).collect());
        if let Some(o) = &self.oracle {
            self.oracle_paths.push(o.tracker.positions.clone());
        }

        if self.needs_reconstruction() {
            self.reconstruct(field, grid, last)?;
        }
        self.snapshot += 1;
        Ok(())
    }

    fn reconstruct(&mut self, field: &TrajectoryField, grid: &LabelGrid, last: bool) -> Result<()> {
        let s = self.s;
        let t = field.t;
        let rec = Reconstructor::new(field, grid, &s.system, &s.engine, &s.gauge)?;
        let (psi, map) = rec.wavefunction(&self.spatial)?;
        self.record(Check::NormDrift, (psi.norm_sqr() - 1.0).abs(), t);
        if self.wants(Check::PhaseGradient) {
            self.record(Check::PhaseGradient, diagnostics::phase_gradient_residual(&rec, &map, &psi, &s.system), t);
        }
        if self.snapshot == 0 && self.wants(Check::RoundTrip) {
            let exact = WavefunctionField::from_fn(self.spatial.clone(), t, |x| s.state.psi(x, s.system.hbar));
            let worst = (0..psi.values.len())
                .filter(|&n| map.status[n] == crate::reconstruction::InversionStatus::Converged)
                .map(|n| (psi.values[n] - exact.values[n]).norm())
                .fold(0.0, f64::max);
            self.record(Check::RoundTrip, worst, t);
        }
        if let Some(o) = &self.oracle {
            let err = psi.distance_up_to_phase(&o.psi);
            let derr = psi.density_distance(&o.psi);
            self.record(Check::ReconstructionError, err, t);
            self.record(Check::DensityError, derr, t);
        }
        if last && self.wants(Check::HybridIdentity) {
            let r = diagnostics::hybrid_identity_residual(&rec, &map, &self.spatial, s.system.particles)?;
            self.record(Check::HybridIdentity, r, t);
        }
        if let Some(dir) = self.out.clone() {
            if s.outputs.formats.contains(&Format::Wavefunction) {
                self.write_wavefunction(&dir, &psi)?;
            }
        }
        Ok(())
    }

    fn write_wavefunction(&mut self, dir: &Path, psi: &WavefunctionField) -> Result<()> {
        let path = dir.join(format!("wavefunction_{}.csv", self.snapshot));
        let mut w = csv::Writer::from_path(&path).map_err(csv_error)?;
        let d = psi.grid.ndim();
        let mut header: Vec<String> = (0..d).map(|k| format!("x_{k}")).collect();
        header.extend(["re_reconstructed", "im_reconstructed"].map(String::from));
        if self.oracle.is_some() {
            header.extend(["re_oracle", "im_oracle"].map(String::from));
        }
        w.write_record(&header).map_err(csv_error)?;
        let mut x = vec![0.0; d];
        for node in 0..psi.grid.len() {
            psi.grid.coords_into(node, &mut x);
            let mut row: Vec<String> = x.iter().copied().map(num).collect();
            let z = psi.values[node];
            row.push(num(z.re));
            row.push(num(z.im));
            if let Some(o) = &self.oracle {
                let z: Complex64 = o.psi.values[node];
                row.push(num(z.re));
                row.push(num(z.im));
            }
            w.write_record(&row).map_err(csv_error)?;
        }
        w.flush()?;
        self.artifacts.push(path);
        Ok(())
    }

    /// Advance the oracle to the engine's time.
    fn step_oracle(&mut self, t: f64) -> Result<()> {
        if let Some(o) = self.oracle.as_mut() {
            let h = t - o.psi.t;
            if (h - o.prop.dt()).abs() <= 1e-9 * o.prop.dt() {
                o.prop.step(&mut o.psi, &self.s.potential)?;
            } else {
                let short = SpectralPropagator::new(self.spatial.clone(), self.s.system.clone(), h)?;
                short.step(&mut o.psi, &self.s.potential)?;
            }
            o.psi.t = t;
            o.tracker.advance(&o.psi, &o.prop, self.s.engine.density_floor)?;
        }
        Ok(())
    }

    fn finish_checks(&mut self, grid: &LabelGrid, initial: &TrajectoryField, completed: bool) -> Result<()> {
        let s = self.s;
        if self.wants(Check::FactorizationResidual) {
            self.record(Check::FactorizationResidual, diagnostics::factorization_residual(&s.state, &s.system), 0.0);
        }
        if !completed {
            return Ok(());
        }
        if self.wants(Check::OracleTrajectoryRmse) && !self.oracle_paths.is_empty() {
            let rmse = diagnostics::trajectory_rmse(&self.engine_paths, &self.oracle_paths);
            self.record(Check::OracleTrajectoryRmse, rmse, s.t_final);
        }
        if self.wants(Check::Nonlocality) {
            let kicked = s
                .potential
                .terms
                .iter()
                .find_map(|t| match t {
                    PotentialTerm::Kick { particle, .. } => Some(*particle),
                    _ => None,
                })
                .unwrap_or(0);
            let watched = (kicked + 1) % s.system.particles;
            let probe =
                diagnostics::nonlocality_probe(initial, grid, &s.system, &s.potential, &s.engine, s.t_final, watched)?;
            self.record(Check::Nonlocality, probe.max_displacement, s.t_final);
            if let Some(l) = probe.latency() {
                self.info.insert("nonlocality_latency".into(), l);
            }
        }
        Ok(())
    }

    /// Metrics of an aborted run are all marked failed: none was sampled to `t_final`.
    fn report(&self, grid: &LabelGrid, aborted_at: Option<f64>) -> DiagnosticReport {
        let s = self.s;
        let resolution: Vec<usize> = grid.axes().iter().map(|a| a.len).collect();
        let mut report = DiagnosticReport { info: self.info.clone(), ..Default::default() };
        if let Some(t) = aborted_at {
            report.info.insert("aborted_at".into(), t);
        }
        for spec in &s.diagnostics {
            let Some(sample) = self.samples.get(&spec.check) else { continue };
            report.metrics.insert(
                spec.check.name(),
                Metric {
                    value: sample.value,
                    threshold: spec.threshold,
                    bound: spec.bound,
                    pass: aborted_at.is_none() && spec.bound.holds(sample.value, spec.threshold),
                    scenario: s.id.clone(),
                    resolution: resolution.clone(),
                    time: sample.time,
                    dt: s.engine.dt,
                },
            );
        }
        report
    }
}

/// Labels followed by both pictures: a lattice of nodes within two marginal
/// sigmas of the centre, at least `count` in total.
pub fn probe_nodes(grid: &LabelGrid, spec: &GaussianStateSpec, count: usize) -> Vec<usize> {
    let d = grid.ndim();
    let per_axis = (1..).find(|m: &usize| m.pow(d as u32) >= count).unwrap_or(1);
    let offsets: Vec<f64> = if per_axis == 1 {
        vec![0.0]
    } else {
        (0..per_axis).map(|i| -2.0 + 4.0 * i as f64 / (per_axis - 1) as f64).collect()
    };
    let mut nodes = Vec::new();
    for flat in 0..per_axis.pow(d as u32) {
        let mut idx = vec![0usize; d];
        let mut rest = flat;
        for k in (0..d).rev() {
            let ax = grid.axis(k);
            let target = spec.center[k] + offsets[rest % per_axis] * spec.marginal_sigma(k);
            idx[k] = (((target - ax.start) / ax.step).round().max(0.0) as usize).min(ax.len - 1);
            rest /= per_axis;
        }
        let node = grid.flat_index(&idx);
        if !nodes.contains(&node) {
            nodes.push(node);
        }
    }
    nodes
}

/// Run a scenario. With `out` set, artifacts are written to that directory;
/// without it only the diagnostics are evaluated.
///
/// Numerical failures end the run early with [`RunStatus::NumericalAbort`];
/// only I/O and configuration problems surface as `Err`.
pub fn run_scenario(s: &Scenario, out: Option<&Path>) -> Result<RunOutcome> {
    s.validate()?;
    let clock = Instant::now();
    let grid = s.label_grid()?;
    let spatial = s.spatial_grid();
    let initial = TrajectoryField::initial(&grid, &s.state, &s.system)?;
    let probes = probe_nodes(&grid, &s.state, s.oracle.probes);

    let trajectories = match out {
        Some(dir) if s.outputs.formats.contains(&Format::Trajectories) => {
            fs::create_dir_all(dir)?;
            let mut w = csv::Writer::from_path(dir.join("trajectories.csv")).map_err(csv_error)?;
            let d = grid.ndim();
            let mut header = vec!["snapshot".to_string(), "t".into(), "node".into()];
            for prefix in ["a", "q", "v"] {
                header.extend((0..d).map(|k| format!("{prefix}_{k}")));
            }
            header.extend(["J".to_string(), "S".into()]);
            w.write_record(&header).map_err(csv_error)?;
            Some(w)
        }
        Some(dir) => {
            fs::create_dir_all(dir)?;
            None
        }
        None => None,
    };

    let mut run = Run {
        s,
        analytic: s.analytic(),
        spatial: spatial.clone(),
        wanted: s.diagnostics.iter().map(|c| c.check).collect(),
        samples: BTreeMap::new(),
        info: BTreeMap::new(),
        oracle: None,
        probes: probes.clone(),
        engine_paths: Vec::new(),
        oracle_paths: Vec::new(),
        width0: diagnostics::congruence_width(&initial),
        trajectories,
        out: out.map(Path::to_path_buf),
        artifacts: Vec::new(),
        snapshot: 0,
    };

    let outcome = (|| -> Result<()> {
        if s.oracle.enabled {
            let prop = SpectralPropagator::new(spatial.clone(), s.system.clone(), s.engine.dt)?;
            let psi = WavefunctionField::from_fn(spatial.clone(), 0.0, |x| s.state.psi(x, s.system.hbar));
            let starts: Vec<Vec<f64>> = probes.iter().map(|&n| grid.coords(n)).collect();
            let tracker = ProbeTracker::new(&psi, &prop, s.engine.density_floor, &starts);
            run.oracle = Some(Oracle { prop, psi, tracker });
        }
        run.observe(&initial, &grid, false)?;
        let steps = s.steps();
        lagrangian::propagate(initial.clone(), &grid, &s.system, &s.potential, &s.engine, s.t_final, |step, f| {
            run.step_oracle(f.t)?;
            if step % s.snapshot_stride == 0 || step == steps {
                run.observe(f, &grid, step == steps)?;
            }
            Ok(())
        })?;
        Ok(())
    })();

    let abort = match outcome {
        Ok(()) => None,
        Err(e) if e.is_numerical() => Some(e),
        Err(e) => return Err(e),
    };
    let abort = match (abort, run.finish_checks(&grid, &initial, true)) {
        (None, Err(e)) if e.is_numerical() => Some(e),
        (_, Err(e)) if !e.is_numerical() => return Err(e),
        (a, _) => a,
    };

    if let Some(mut w) = run.trajectories.take() {
        w.flush()?;
        run.artifacts.insert(0, out.expect("writer implies directory").join("trajectories.csv"));
    }
    let aborted_at = abort.as_ref().map(|e| match e {
        Error::JacobianCollapse { time, .. } | Error::BoundaryLeak { time, .. } => *time,
        _ => f64::NAN,
    });
    let report = run.report(&grid, aborted_at);
    let status = if abort.is_some() {
        RunStatus::NumericalAbort
    } else if report.passed() && report.metrics.len() == s.diagnostics.len() {
        RunStatus::Passed
    } else {
        RunStatus::DiagnosticsFailed
    };
    let wall_time = clock.elapsed().as_secs_f64();
    let mut artifacts = run.artifacts;
    if let Some(dir) = out {
        let report_path = dir.join("report.json");
        fs::write(&report_path, report.to_json())?;
        artifacts.push(report_path);
        let manifest_path = dir.join("manifest.json");
        let manifest = Manifest {
            scenario: s,
            engine_version: env!("CARGO_PKG_VERSION"),
            wall_time_s: wall_time,
            status,
            partial: abort.is_some(),
            error: abort.as_ref().map(|e| e.to_string()),
            label_points: grid.axes().iter().map(|a| a.len).collect(),
            spatial_points: spatial.axes().iter().map(|a| a.len).collect(),
            threads: rayon::current_num_threads(),
            artifacts: artifacts
                .iter()
                .filter_map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()))
                .collect(),
        };
        fs::write(&manifest_path, serde_json::to_string_pretty(&manifest).expect("manifest serializes"))?;
        artifacts.push(manifest_path);
    }
    Ok(RunOutcome { status, report, abort, wall_time, artifacts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceLevel {
    pub dt: f64,
    pub points: usize,
    pub spacing: f64,
    /// Max `|q - q_exact|` over label nodes at `t_final`.
    pub max_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub levels: Vec<ConvergenceLevel>,
    /// Slope of `ln error` against `ln dt` over the levels sharing a label count.
    pub temporal_order: Option<f64>,
    /// Slope of `ln error` against `ln spacing` over the levels sharing a step.
    pub spatial_order: Option<f64>,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn fit_order(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() < 2 || x.iter().chain(y).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    Some(sxy / sxx)
}

/// Largest group of levels that agree on `key`, provided it varies in the other parameter.
fn largest_group<K: PartialEq + Copy>(levels: &[ConvergenceLevel], key: impl Fn(&ConvergenceLevel) -> K) -> Vec<&ConvergenceLevel> {
    let mut best: Vec<&ConvergenceLevel> = Vec::new();
    for l in levels {
        let group: Vec<&ConvergenceLevel> = levels.iter().filter(|m| key(m) == key(l)).collect();
        if group.len() > best.len() {
            best = group;
        }
    }
    best
}

/// Run the scenario at every `(dt, points)` level against its closed form and fit
/// temporal and spatial orders.
pub fn convergence_study(s: &Scenario, levels: &[(f64, usize)]) -> Result<ConvergenceTable> {
    if levels.len() < 3 {
        return Err(invalid("a convergence study needs at least three levels"));
    }
    let sol = s.analytic().ok_or_else(|| invalid("convergence study needs a closed-form solution"))?;
    let rows: Result<Vec<ConvergenceLevel>> = levels
        .iter()
        .map(|&(dt, points)| {
            let mut level = s.clone();
            level.engine.dt = dt;
            level.grid.points = vec![points];
            level.engine.validate()?;
            let grid = level.label_grid()?;
            let field = TrajectoryField::initial(&grid, &level.state, &level.system)?;
            let end = lagrangian::propagate(field, &grid, &level.system, &level.potential, &level.engine, s.t_final, |_, _| {
                Ok(())
            })?;
            let max_error = grid
                .axis(0)
                .coords()
                .zip(&end.positions)
                .map(|(a, q)| (q - sol.trajectory(a, s.t_final)).abs())
                .fold(0.0, f64::max);
            Ok(ConvergenceLevel { dt, points, spacing: grid.axis(0).step, max_error })
        })
        .collect();
    let levels = rows?;
    let temporal = largest_group(&levels, |l| l.points);
    let spatial = largest_group(&levels, |l| l.dt.to_bits());
    let fit = |group: &[&ConvergenceLevel], x: fn(&ConvergenceLevel) -> f64| {
        let xs: Vec<f64> = group.iter().map(|l| x(l)).collect();
        let ys: Vec<f64> = group.iter().map(|l| l.max_error).collect();
        fit_order(&xs, &ys)
    };
    Ok(ConvergenceTable {
        temporal_order: fit(&temporal, |l| l.dt),
        spatial_order: fit(&spatial, |l| l.spacing),
        levels,
    })
}

/// Write the study as CSV: one `level` row per run, then the fitted orders.
pub fn write_convergence_csv(table: &ConvergenceTable, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(["kind", "dt", "points", "spacing", "value"]).map_err(csv_error)?;
    for l in &table.levels {
        w.write_record(["level".into(), num(l.dt), l.points.to_string(), num(l.spacing), num(l.max_error)])
            .map_err(csv_error)?;
    }
    for (kind, order) in [("temporal_order", table.temporal_order), ("spatial_order", table.spatial_order)] {
        let value = order.map_or_else(|| "nan".to_string(), num);
        w.write_record([kind.to_string(), String::new(), String::new(), String::new(), value]).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "id": "tiny",
        "system": {"particles": 1, "dim": 1, "masses": [1.0]},
        "state": {"center": [0.0], "momentum": [0.0], "inverse_covariance": [1.0]},
        "grid": {"points": [41]},
        "t_final": 0.01
    }"#;

    #[test]
    fn minimal_document_takes_defaults() {
        let s = parse_scenario(MINIMAL).unwrap();
        assert_eq!(s.system.hbar, 1.0);
        assert_eq!(s.engine.dt, 1e-3);
        assert_eq!(s.engine.stencil, crate::Stencil::Fourth);
        assert_eq!(s.snapshot_stride, 1);
        assert!(s.potential.terms.is_empty());
    }

    #[test]
    fn every_check_has_a_distinct_name() {
        let names: std::collections::BTreeSet<String> = Check::ALL.iter().map(|c| c.name()).collect();
        assert_eq!(names.len(), Check::ALL.len());
        assert!(names.contains("oracle_trajectory_rmse"));
    }

    #[test]
    fn probes_cover_two_sigma_lattice() {
        let system = PhysicalSystem::single(1, 1.0);
        let spec = GaussianStateSpec::gaussian_1d(0.0, 1.0, 0.0);
        let grid = label_grid_with_reach(&spec, &system, 6.0, &[201]).unwrap();
        let nodes = probe_nodes(&grid, &spec, 9);
        assert_eq!(nodes.len(), 9);
        let half = 0.5 * grid.axis(0).step;
        assert!((grid.coords(nodes[0])[0] + 2.0).abs() <= half);
        assert!((grid.coords(nodes[8])[0] - 2.0).abs() <= half);
    }

    #[test]
    fn slope_of_power_law() {
        let x = [0.1, 0.05, 0.025];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powi(4)).collect();
        assert!((fit_order(&x, &y).unwrap() - 4.0).abs() < 1e-12);
        assert_eq!(fit_order(&x, &[1.0, 0.0, 1.0]), None);
    }
}

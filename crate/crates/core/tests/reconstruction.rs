use num_complex::Complex64;
use qtraj::diagnostics;
use qtraj::eulerian::{oracle_grid, AnalyticSolution, SpectralPropagator};
use qtraj::lagrangian::{self, EngineConfig};
use qtraj::model::{Axis, GaussianStateSpec, LabelGrid, PhysicalSystem, PotentialSpec, TrajectoryField};
use qtraj::reconstruction::{alocal_psi, invert_label_map, Gauge, InversionStatus, Reconstructor};
use qtraj::Error;

fn packet(momentum: f64) -> (PhysicalSystem, GaussianStateSpec, LabelGrid) {
    let system = PhysicalSystem::single(1, 1.0);
    let spec = GaussianStateSpec::gaussian_1d(0.0, 1.0, momentum);
    let grid = LabelGrid::new(vec![Axis::new(-6.0, 6.0, 201)]).unwrap();
    (system, spec, grid)
}

fn evolve(momentum: f64, t_final: f64) -> (PhysicalSystem, LabelGrid, TrajectoryField) {
    let (system, spec, grid) = packet(momentum);
    let field = TrajectoryField::initial(&grid, &spec, &system).unwrap();
    let cfg = EngineConfig::default();
    let out = lagrangian::propagate(field, &grid, &system, &PotentialSpec::free(), &cfg, t_final, |_, _| Ok(())).unwrap();
    (system, grid, out)
}

#[test]
fn inverse_of_identity_and_dilation() {
    let (system, spec, grid) = packet(0.0);
    let cfg = EngineConfig::default();
    let mut field = TrajectoryField::initial(&grid, &spec, &system).unwrap();
    for x in [-3.1, 0.0, 0.45, 5.2] {
        let a = invert_label_map(&field, &grid, &system, &cfg, &[x]).unwrap();
        assert!((a[0] - x).abs() < 1e-12);
    }
    field.positions.iter_mut().for_each(|q| *q *= 2.0);
    for x in [-9.0, 0.3, 7.7] {
        let a = invert_label_map(&field, &grid, &system, &cfg, &[x]).unwrap();
        assert!((a[0] - x / 2.0).abs() < 1e-12);
    }
    assert!(matches!(
        invert_label_map(&field, &grid, &system, &cfg, &[12.5]),
        Err(Error::OutsideCongruence(_))
    ));
}

#[test]
fn spread_packet_inverts_to_scaled_labels() {
    let (system, grid, field) = evolve(0.0, 2.0);
    let rec = Reconstructor::new(&field, &grid, &system, &EngineConfig::default(), &Gauge::default()).unwrap();
    for x in [-7.0, -2.5, 0.0, 1.0, 4.2] {
        let a = rec.invert(&[x]).unwrap();
        assert!((a[0] - x / 2f64.sqrt()).abs() < 1e-6, "x = {x}: {a:?}");
    }
}

#[test]
fn initial_round_trip() {
    let (system, spec, grid) = packet(0.7);
    let field = TrajectoryField::initial(&grid, &spec, &system).unwrap();
    let spatial = oracle_grid(&[0.0], &[5.5], 256);
    let gauge = Gauge { point: Some(vec![0.0]), phase: 0.0 };
    let rec = Reconstructor::new(&field, &grid, &system, &EngineConfig::default(), &gauge).unwrap();
    let (psi, map) = rec.wavefunction(&spatial).unwrap();
    assert_eq!(map.converged_count(), spatial.len());
    let worst = psi
        .values
        .iter()
        .enumerate()
        .map(|(node, z)| (z - spec.psi(&spatial.coords(node), 1.0)).norm())
        .fold(0.0, f64::max);
    assert!(worst < 1e-8, "{worst:e}");
}

#[test]
fn reconstruction_matches_spectral_solver() {
    let (system, grid, field) = evolve(0.4, 1.0);
    let spatial = oracle_grid(&[0.0], &[14.0], 512);
    let solution = AnalyticSolution::FreeGaussian { center: 0.0, momentum: 0.4, sigma: 1.0, mass: 1.0, hbar: 1.0 };
    let prop = SpectralPropagator::new(spatial.clone(), system.clone(), 1e-3).unwrap();
    let mut oracle = solution.wavefunction(&spatial, 0.0);
    for _ in 0..1000 {
        prop.step(&mut oracle, &PotentialSpec::free()).unwrap();
    }
    let rec = Reconstructor::new(&field, &grid, &system, &EngineConfig::default(), &Gauge::default()).unwrap();
    let (psi, map) = rec.wavefunction(&spatial).unwrap();
    let err = psi.distance_up_to_phase(&oracle);
    assert!(err < 1e-2, "{err:e}");
    assert!((psi.norm_sqr() - 1.0).abs() < 1e-3);
    let grad = diagnostics::phase_gradient_residual(&rec, &map, &psi, &system);
    assert!(grad < 1e-3, "{grad:e}");
}

#[test]
fn gauge_point_fixes_the_phase() {
    let (system, grid, field) = evolve(0.4, 1.0);
    let gauge = Gauge { point: Some(vec![1.3]), phase: 0.25 };
    let rec = Reconstructor::new(&field, &grid, &system, &EngineConfig::default(), &gauge).unwrap();
    assert!((rec.psi_at(&[1.3]).unwrap().arg() - 0.25).abs() < 1e-12);
}

#[test]
fn alocal_representation() {
    let (system, spec, grid) = packet(0.0);
    let cfg = EngineConfig::default();
    let field = TrajectoryField::initial(&grid, &spec, &system).unwrap();
    let psi0 = alocal_psi(&field, &grid, &system, &cfg).unwrap();
    for (node, a) in grid.axis(0).coords().enumerate() {
        assert!((psi0[node] - spec.psi(&[a], 1.0)).norm() < 1e-14);
    }

    let (_, _, field) = evolve(0.0, 2.0);
    let psi = alocal_psi(&field, &grid, &system, &cfg).unwrap();
    let defo = lagrangian::deformation(&field, &grid, &cfg).unwrap();
    for node in 0..grid.len() {
        let back = psi[node].norm_sqr() * defo.jacobian[node];
        assert!((back - field.rho0[node]).abs() <= 4.0 * f64::EPSILON * field.rho0[node]);
    }
    let exact = AnalyticSolution::FreeGaussian { center: 0.0, momentum: 0.0, sigma: 1.0, mass: 1.0, hbar: 1.0 };
    let centre = grid.center_node();
    let align = exact.psi(field.positions[centre], 2.0) / psi[centre];
    let align = align / align.norm();
    let worst = (0..grid.len())
        .map(|node| (psi[node] * align - exact.psi(field.positions[node], 2.0)).norm())
        .fold(0.0, f64::max);
    assert!(worst < 1e-3, "{worst:e}");
}

fn two_body(inverse_covariance: Vec<f64>, stiffness: Vec<f64>) -> (PhysicalSystem, LabelGrid, TrajectoryField, EngineConfig) {
    let system = PhysicalSystem::new(2, 1, vec![1.0, 1.0], 1.0).unwrap();
    let spec = GaussianStateSpec::new(vec![0.0, 0.0], vec![0.3, -0.2], inverse_covariance).unwrap();
    let grid = qtraj::model::label_grid_with_reach(&spec, &system, 6.0, &[41, 41]).unwrap();
    let field = TrajectoryField::initial(&grid, &spec, &system).unwrap();
    let cfg = EngineConfig { density_floor: 0.0, filter_order: Some(4), ..EngineConfig::default() };
    let pot = PotentialSpec::quadratic(stiffness, vec![0.0, 0.0]);
    let out = lagrangian::propagate(field, &grid, &system, &pot, &cfg, 1.0, |_, _| Ok(())).unwrap();
    (system, grid, out, cfg)
}

#[test]
fn product_state_hybrids_factor() {
    let (system, grid, field, cfg) = two_body(vec![1.0, 0.0, 0.0, 2.0], vec![1.0, 0.0, 0.0, 1.5]);
    let rec = Reconstructor::new(&field, &grid, &system, &cfg, &Gauge::default()).unwrap();
    let labels = [[0.2, -0.4], [-0.5, 0.3], [0.9, 0.1]];
    // A product wavefunction makes phi_1(x1, a) / phi_1(x1, b) independent of x1.
    let ratio = |x1: f64| rec.hybrid_phi(0, 1, &[x1], &labels[0]).unwrap() / rec.hybrid_phi(0, 1, &[x1], &labels[1]).unwrap();
    let reference = ratio(0.3);
    for x1 in [-1.0, 0.0, 0.8] {
        let r = ratio(x1);
        assert!((r - reference).norm() / reference.norm() < 1e-6, "{r} vs {reference}");
    }
    let a = labels[2];
    let (q, _) = rec.forward(&a);
    let on = rec.hybrid_phi(0, 1, &q[..1], &a).unwrap();
    assert!((on - rec.psi_at_label(&a)).norm() < 1e-12);
}

#[test]
fn symmetric_hybrid_is_the_wavefunction() {
    let (system, grid, field, cfg) = two_body(vec![1.0, 0.5, 0.5, 1.0], vec![1.0, 0.3, 0.3, 1.0]);
    let rec = Reconstructor::new(&field, &grid, &system, &cfg, &Gauge::default()).unwrap();
    let spatial = oracle_grid(&[0.3, -0.2], &[3.0, 3.0], 16);
    let (psi, map) = rec.wavefunction(&spatial).unwrap();
    let mut checked = 0;
    for node in 0..spatial.len() {
        if map.status[node] != InversionStatus::Converged {
            continue;
        }
        let x = spatial.coords(node);
        let sym = rec.symmetric_hybrid_psi(&x, 2).unwrap();
        assert!((sym - psi.values[node]).norm() < 1e-8);
        checked += 1;
    }
    assert!(checked > spatial.len() / 2);
    let residual = diagnostics::hybrid_identity_residual(&rec, &map, &spatial, 2).unwrap();
    assert!(residual < 1e-8);
    let zero = Complex64::new(0.0, 0.0);
    assert!(psi.values.iter().zip(&map.status).all(|(z, s)| *s == InversionStatus::Converged || *z == zero));
}

use std::f64::consts::PI;

use qtraj::eulerian::{
    self, bohm_velocity, integrate_eulerian_trajectories, integrate_eulerian_trajectory, oracle_grid, AnalyticSolution,
    PsiHistory, SpectralPropagator, VelocityField,
};
use qtraj::model::{PhysicalSystem, PotentialSpec};

fn unit_free() -> AnalyticSolution {
    AnalyticSolution::FreeGaussian { center: 0.0, momentum: 0.0, sigma: 1.0, mass: 1.0, hbar: 1.0 }
}

fn coherent() -> AnalyticSolution {
    AnalyticSolution::Coherent { x0: 1.0, omega: 1.0, mass: 1.0, hbar: 1.0 }
}

#[test]
fn unitary_over_ten_thousand_steps() {
    let grid = oracle_grid(&[0.0], &[16.0], 512);
    let system = PhysicalSystem::single(1, 1.0);
    let prop = SpectralPropagator::new(grid.clone(), system, 1e-4).unwrap();
    let mut psi = unit_free().wavefunction(&grid, 0.0);
    psi.normalize();
    let pot = PotentialSpec::harmonic(1, 1.0, 0.5);
    for _ in 0..10_000 {
        prop.step(&mut psi, &pot).unwrap();
    }
    assert!((psi.norm_sqr() - 1.0).abs() < 1e-12, "{:e}", psi.norm_sqr() - 1.0);
}

#[test]
fn spectral_matches_closed_forms() {
    let system = PhysicalSystem::single(1, 1.0);
    let cases = [
        (unit_free(), PotentialSpec::free(), 2.0, 20.0),
        (coherent(), PotentialSpec::harmonic(1, 1.0, 1.0), PI, 10.0),
    ];
    for (solution, pot, t_final, half) in cases {
        let grid = oracle_grid(&[0.0], &[half], 1024);
        let dt = 1e-3;
        let prop = SpectralPropagator::new(grid.clone(), system.clone(), dt).unwrap();
        let mut psi = solution.wavefunction(&grid, 0.0);
        let (steps, last) = qtraj::lagrangian::step_plan(t_final, dt);
        for s in 0..steps {
            if s + 1 == steps && (last - dt).abs() > 0.0 {
                let short = SpectralPropagator::new(grid.clone(), system.clone(), last).unwrap();
                short.step(&mut psi, &pot).unwrap();
            } else {
                prop.step(&mut psi, &pot).unwrap();
            }
        }
        let (exact, map) = eulerian::analytic_state(&solution, &grid, t_final).unwrap();
        let err = exact.distance_up_to_phase(&psi);
        assert!(err < 1e-6, "{solution:?}: {err:e}");
        assert!((map(0.0) - solution.trajectory(0.0, t_final)).abs() == 0.0);
    }
}

#[test]
fn closed_form_spot_values() {
    assert!((unit_free().trajectory(1.0, 2.0) - 2f64.sqrt()).abs() < 1e-15);
    assert!((coherent().trajectory(0.0, PI) + 2.0).abs() < 1e-15);
    for s in [unit_free(), coherent()] {
        assert_eq!(s.trajectory(0.7, 0.0), 0.7);
    }
}

#[test]
fn velocity_of_spreading_packet() {
    let grid = oracle_grid(&[0.0], &[16.0], 512);
    let system = PhysicalSystem::single(1, 1.0);
    let prop = SpectralPropagator::new(grid.clone(), system, 1e-3).unwrap();
    let at_rest = VelocityField::new(&unit_free().wavefunction(&grid, 0.0), &prop, 1e-12);
    assert!(bohm_velocity(&at_rest, &[0.8], 0, 1).unwrap()[0].abs() < 1e-12);

    let moving = AnalyticSolution::FreeGaussian { center: 0.0, momentum: 0.3, sigma: 1.0, mass: 1.0, hbar: 1.0 };
    let field = VelocityField::new(&moving.wavefunction(&grid, 0.0), &prop, 1e-12);
    let v = bohm_velocity(&field, &[0.8], 0, 1).unwrap()[0];
    assert!((v - 0.3).abs() < 1e-6, "{v}");

    let field = VelocityField::new(&unit_free().wavefunction(&grid, 1.0), &prop, 1e-12);
    let v = bohm_velocity(&field, &[1.0], 0, 1).unwrap()[0];
    assert!((v - 0.2).abs() < 1e-6, "{v}");
}

#[test]
fn far_tail_is_a_node() {
    let grid = oracle_grid(&[0.0], &[16.0], 512);
    let system = PhysicalSystem::single(1, 1.0);
    let prop = SpectralPropagator::new(grid.clone(), system, 1e-3).unwrap();
    let field = VelocityField::new(&unit_free().wavefunction(&grid, 0.0), &prop, 1e-10);
    assert!(matches!(bohm_velocity(&field, &[9.0], 0, 1), Err(qtraj::Error::NodeProximity { .. })));
}

fn history(solution: AnalyticSolution, pot: &PotentialSpec, t_final: f64, half: f64) -> (PsiHistory, SpectralPropagator) {
    let grid = oracle_grid(&[0.0], &[half], 512);
    let dt = t_final / 2000.0;
    let prop = SpectralPropagator::new(grid.clone(), PhysicalSystem::single(1, 1.0), dt).unwrap();
    let h = PsiHistory::record(solution.wavefunction(&grid, 0.0), &prop, pot, 2000, 10).unwrap();
    (h, prop)
}

#[test]
fn bohmian_paths_follow_closed_forms() {
    let cases = [
        (unit_free(), PotentialSpec::free(), 2.0, 16.0, 1.0),
        (coherent(), PotentialSpec::harmonic(1, 1.0, 1.0), 2.0 * PI, 10.0, 0.5),
    ];
    for (solution, pot, t_final, half, a) in cases {
        let (h, prop) = history(solution, &pot, t_final, half);
        let path = integrate_eulerian_trajectory(&h, &prop, &[a], 0, 1, 1e-12).unwrap();
        let worst = path
            .iter()
            .zip(h.times())
            .map(|(x, t)| (x[0] - solution.trajectory(a, t)).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-3, "{solution:?}: {worst:e}");
    }
}

#[test]
fn stationary_probe_stays_put() {
    let ground = AnalyticSolution::Coherent { x0: 0.0, omega: 1.0, mass: 1.0, hbar: 1.0 };
    let (h, prop) = history(ground, &PotentialSpec::harmonic(1, 1.0, 1.0), 2.0, 10.0);
    let path = integrate_eulerian_trajectory(&h, &prop, &[0.7], 0, 1, 1e-12).unwrap();
    let drift = path.iter().map(|x| (x[0] - 0.7).abs()).fold(0.0, f64::max);
    assert!(drift < 1e-6, "{drift:e}");
}

#[test]
fn oracle_paths_never_cross() {
    let pot = PotentialSpec::harmonic(1, 1.0, 1.3);
    let (h, prop) = history(unit_free(), &pot, 3.0, 12.0);
    let starts: Vec<Vec<f64>> = (-8..=8).map(|i| vec![i as f64 * 0.3]).collect();
    let paths = integrate_eulerian_trajectories(&h, &prop, &starts, 1e-12).unwrap();
    for k in 0..h.snapshots.len() {
        for w in paths.windows(2) {
            assert!(w[0][k][0] < w[1][k][0]);
        }
    }
}

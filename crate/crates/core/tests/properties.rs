use proptest::prelude::*;
use qtraj::lagrangian::{self, EngineConfig};
use qtraj::linalg;
use qtraj::model::{
    build_label_grid, eval_initial_data, label_grid_with_reach, GaussianStateSpec, PhysicalSystem, PotentialSpec, PotentialTerm,
    TrajectoryField,
};
use qtraj::runner;

fn kicked_pair() -> PotentialSpec {
    PotentialSpec::quadratic(vec![1.0, 0.3, 0.3, 2.0], vec![0.1, -0.4]).with(PotentialTerm::Kick {
        particle: 1,
        center: vec![0.5],
        width: 0.8,
        strength: 1.5,
        t_on: 0.0,
        t_off: 1.0,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn potential_gradient_matches_central_differences(x in -3.0f64..3.0, y in -3.0f64..3.0, t in 0.0f64..1.0) {
        let pot = kicked_pair();
        let (_, grad) = pot.evaluate(&[x, y], t);
        let h = 1e-5;
        for k in 0..2 {
            let mut up = [x, y];
            let mut down = [x, y];
            up[k] += h;
            down[k] -= h;
            let fd = (pot.evaluate(&up, t).0 - pot.evaluate(&down, t).0) / (2.0 * h);
            prop_assert!((grad[k] - fd).abs() <= 1e-6 * grad[k].abs().max(1.0), "k {}: {} vs {}", k, grad[k], fd);
        }
    }

    #[test]
    fn initial_velocity_is_the_phase_gradient(
        p in prop::collection::vec(-2.0f64..2.0, 2),
        m in prop::collection::vec(0.5f64..3.0, 2),
        a in prop::collection::vec(-2.0f64..2.0, 2),
    ) {
        let system = PhysicalSystem::new(2, 1, m.clone(), 1.0).unwrap();
        let spec = GaussianStateSpec::new(vec![0.1, -0.2], p, vec![1.0, 0.4, 0.4, 1.5]).unwrap();
        let data = eval_initial_data(&spec, &system, &a);
        let h = 1e-4;
        for k in 0..2 {
            let mut up = a.clone();
            let mut down = a.clone();
            up[k] += h;
            down[k] -= h;
            let fd = (spec.phase(&up) - spec.phase(&down)) / (2.0 * h) / m[k];
            prop_assert!((data.v0[k] - fd).abs() <= 1e-8 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn adjugate_inverts_up_to_the_determinant(n in 1usize..=4, entries in prop::collection::vec(-2.0f64..2.0, 16)) {
        let m = &entries[..n * n];
        let mut adj = vec![0.0; n * n];
        linalg::adjugate(m, n, &mut adj);
        let det = linalg::determinant(m, n);
        let scale = m.iter().fold(1.0f64, |s, v| s.max(v.abs())).powi(n as i32);
        for i in 0..n {
            for l in 0..n {
                let prod: f64 = (0..n).map(|j| m[i * n + j] * adj[j * n + l]).sum();
                let want = if i == l { det } else { 0.0 };
                prop_assert!((prod - want).abs() <= 1e-10 * scale.max(1.0));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn normalization_on_six_sigma_grid(sigma in 0.3f64..3.0, center in -5.0f64..5.0) {
        let system = PhysicalSystem::single(1, 1.0);
        let spec = GaussianStateSpec::gaussian_1d(center, sigma, 0.0);
        let grid = build_label_grid(&spec, &system, (-18.0f64).exp(), &[201]).unwrap();
        let field = TrajectoryField::initial(&grid, &spec, &system).unwrap();
        let mass: f64 = field.rho0.iter().sum::<f64>() * grid.cell_volume();
        prop_assert!(mass > 1.0 - 1e-3 && mass <= 1.0 + 1e-12, "{}", mass);
    }

    #[test]
    fn boost_translates_the_congruence(p in -1.5f64..1.5) {
        let system = PhysicalSystem::single(1, 1.0);
        let cfg = EngineConfig { dt: 2e-3, ..EngineConfig::default() };
        let rest = GaussianStateSpec::gaussian_1d(0.0, 1.0, 0.0);
        let moving = GaussianStateSpec::gaussian_1d(0.0, 1.0, p);
        let grid = label_grid_with_reach(&rest, &system, 6.0, &[101]).unwrap();
        let pot = PotentialSpec::free();
        let t = 0.5;
        let a = lagrangian::propagate(TrajectoryField::initial(&grid, &rest, &system).unwrap(), &grid, &system, &pot, &cfg, t, |_, _| Ok(())).unwrap();
        let b = lagrangian::propagate(TrajectoryField::initial(&grid, &moving, &system).unwrap(), &grid, &system, &pot, &cfg, t, |_, _| Ok(())).unwrap();
        let ja = lagrangian::deformation(&a, &grid, &cfg).unwrap().jacobian;
        let jb = lagrangian::deformation(&b, &grid, &cfg).unwrap().jacobian;
        for node in 0..grid.len() {
            prop_assert!((b.positions[node] - a.positions[node] - p * t).abs() < 1e-8);
            prop_assert!((ja[node] - jb[node]).abs() < 1e-8);
        }
    }

    #[test]
    fn scenario_survives_serialization(
        dt in 1e-4f64..1e-2,
        t_final in 0.1f64..3.0,
        stride in 1usize..50,
        points in 11usize..301,
        threshold in 1e-9f64..1.0,
    ) {
        let mut s = runner::parse_scenario(runner::bundled("free_gaussian").unwrap()).unwrap();
        s.engine.dt = dt;
        s.t_final = t_final;
        s.snapshot_stride = stride;
        s.grid.points = vec![points];
        s.diagnostics[0].threshold = threshold;
        let back = runner::parse_scenario(&s.to_json()).unwrap();
        prop_assert_eq!(back, s);
    }
}

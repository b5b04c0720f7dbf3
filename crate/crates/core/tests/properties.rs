use proptest::prelude::*;

use riccati_nav::observability::{pe_margin, SampledSystem};
use riccati_nav::observer::{reconstruct_attitude, Variant};
use riccati_nav::simulator::{run_truth, Environment, NoiseSpec, TrajectorySpec};
use riccati_nav::so3::{rotation_angle_error, Rotation, Vec3};

fn unit() -> impl Strategy<Value = Vec3> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
        .prop_filter("away from zero", |(x, y, z)| x * x + y * y + z * z > 1e-2)
        .prop_map(|(x, y, z)| Vec3::new(x, y, z).normalize())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pe_margin_lies_in_unit_band(samples in prop::collection::vec(unit(), 11..40)) {
        let dt = 0.1;
        let delta = dt * (samples.len() - 1) as f64;
        let mu = pe_margin(&samples, 0.0, dt, 0.0, delta).unwrap();
        // The averaged projector has trace 2, so its smallest eigenvalue is
        // at most 2/3.
        prop_assert!(mu > -1e-12 && mu <= 2.0 / 3.0 + 1e-12);
    }

    #[test]
    fn reconstruction_is_exact_for_consistent_inputs(phi in (-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64)) {
        let env = Environment::default();
        let r = Rotation::from_rotation_vector(&Vec3::new(phi.0, phi.1, phi.2));
        let est = reconstruct_attitude(&r.inverse_transform(&env.g_i), &r.inverse_transform(&env.m_i), &env).unwrap();
        prop_assert!(rotation_angle_error(&est.rotation, &r) < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn gramian_is_symmetric_psd(seed in 0u64..1000, start in 0usize..4) {
        let frames = run_truth(&TrajectorySpec::random(seed), &Environment::default(), &NoiseSpec::noiseless(), 4.0, 5e-3).unwrap();
        let sys = SampledSystem::from_truth(&frames, Variant::Full).unwrap();
        let t = start as f64 * 0.5;
        let report = sys.gramian(t, 2.0).unwrap();
        prop_assert!((&report.w - report.w.transpose()).abs().max() < 1e-12);
        prop_assert!(report.min_eig > -1e-9);
        let back = sys.transition_matrix(t, t + 2.0).unwrap() * sys.transition_matrix(t + 2.0, t).unwrap();
        prop_assert!((back - nalgebra::DMatrix::identity(12, 12)).abs().max() < 1e-8);
    }
}

use hclm_scaling_memory::*;
use proptest::prelude::*;

proptest! {
    #[test]
    fn overlap_is_odd(z in prop::collection::vec(-1.0..1.0f64, 16), seed in 0u64..1000) {
        let xi = random_patterns(1, 16, seed).remove(0);
        let neg: Vec<f64> = z.iter().map(|v| -v).collect();
        prop_assert_eq!(overlap(&neg, &xi).unwrap(), -overlap(&z, &xi).unwrap());
    }

    #[test]
    fn sequential_updates_never_raise_energy(seed in 0u64..500, load in 0.05..0.4f64) {
        let n = 60;
        let p = ((load * n as f64).round() as usize).max(1);
        let model = hebbian_store(&random_patterns(p, n, seed)).unwrap();
        let z0 = flip_bits(&model.patterns[0], 0.3, seed).unwrap();
        let traj = run_dynamics(&model, &z0, 10, DynamicsMode::Sequential).unwrap();
        for w in traj.windows(2) {
            prop_assert!(model.energy(&w[1]) <= model.energy(&w[0]) + 1e-12);
        }
    }

    #[test]
    fn recovery_summaries_are_ordered(seed in 0u64..500, load in 0.02..0.5f64) {
        let proto = MemoryProtocol { n: 50, horizon: 12, ..Default::default() };
        let t = memory_trial(load, seed, &proto).unwrap();
        prop_assert!(t.m_final <= t.m_max);
        prop_assert!((0.0..=1.0).contains(&t.e_mem));
    }
}

#[test]
fn synchronous_updates_settle_or_two_cycle() {
    // the synchronous map has period at most 2 once settled
    let model = hebbian_store(&random_patterns(30, 100, 4)).unwrap();
    let z0 = flip_bits(&model.patterns[0], 0.2, 4).unwrap();
    let traj = run_dynamics(&model, &z0, 200, DynamicsMode::SyncSign).unwrap();
    let end = &traj[traj.len() - 1];
    assert!(*end == traj[traj.len() - 3]);
}

#[test]
fn fixed_point_stays_put() {
    let model = hebbian_store(&random_patterns(3, 100, 2)).unwrap();
    let start: Vec<f64> = model.patterns[0].iter().map(|&v| f64::from(v)).collect();
    let traj = run_dynamics(&model, &start, 3, DynamicsMode::SyncSign).unwrap();
    assert!(traj[1..].iter().all(|z| *z == traj[1]));
}

#[test]
fn generalized_force_matches_analytic_gradient() {
    let n = 30;
    let xi = random_patterns(1, n, 8).remove(0);
    let model = hebbian_store(std::slice::from_ref(&xi)).unwrap();
    let z0 = flip_bits(&xi, 0.3, 1).unwrap();
    let traj = run_dynamics(&model, &z0, 4, DynamicsMode::TanhOde { gain: 2.0, dt: 0.2 }).unwrap();
    let dot = |z: &[f64]| z.iter().zip(&xi).map(|(a, &b)| a * f64::from(b)).sum::<f64>();
    let u = |z: &[f64]| (dot(z) / n as f64).tanh();
    // grad = (1 - u^2) xi / N, norm = (1 - u^2) / sqrt(N)
    let analytic = traj[..4]
        .iter()
        .map(|z| (1.0 - u(z).powi(2)) / (n as f64).sqrt())
        .sum::<f64>()
        / 4.0;
    let fd = memory_force_with(&traj, 4, u, 1e-6).unwrap();
    assert!((fd - analytic).abs() <= 1e-6 * analytic.max(1e-12), "{fd} {analytic}");
    let linear = memory_force_with(&traj, 4, |z| overlap(z, &xi).unwrap(), 1e-6).unwrap();
    assert!((linear - memory_force(&traj, &xi, 4).unwrap()).abs() < 1e-8);
}

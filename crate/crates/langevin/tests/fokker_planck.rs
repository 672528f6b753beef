use hclm_langevin::*;

fn initial_conditions(lo: f64, hi: f64, m: usize) -> Vec<DensityGrid> {
    let bump = |c: f64, s: f64| move |x: f64| (-(x - c) * (x - c) / (2.0 * s * s)).exp();
    vec![
        DensityGrid::from_fn(lo, hi, m, bump(1.0, 0.3)).unwrap(),
        DensityGrid::from_fn(lo, hi, m, bump(-1.5, 0.5)).unwrap(),
        DensityGrid::from_fn(lo, hi, m, |x| bump(-1.0, 0.2)(x) + 0.5 * bump(1.2, 0.4)(x)).unwrap(),
        DensityGrid::from_fn(lo, hi, m, |x| if x.abs() < 2.0 { 1.0 } else { 1e-6 }).unwrap(),
        DensityGrid::from_fn(lo, hi, m, bump(0.0, 1.5)).unwrap(),
    ]
}

#[test]
fn mass_is_conserved_over_ten_thousand_steps() {
    let pot = DoubleWell::default();
    let g = DensityGrid::from_fn(-3.0, 3.0, 200, |x| (-(x - 1.0) * (x - 1.0)).exp()).unwrap();
    let dt = 0.5 * stability_limit(&g, &pot, 0.5).unwrap();
    let (end, rows) = fp_run(&g, &pot, 0.5, dt, 10_000, 1000).unwrap();
    assert!((end.mass() - 1.0).abs() <= 1e-9);
    assert!(rows.iter().all(|r| (r.mass - 1.0).abs() <= 1e-9));
    assert!(end.rho.iter().all(|r| *r >= 0.0));
}

#[test]
fn free_energy_never_rises() {
    let quad = Quadratic::default();
    let dw = DoubleWell::default();
    let pots: [&dyn Potential; 2] = [&quad, &dw];
    for pot in pots {
        for beta in [0.3, 1.0] {
            for g in initial_conditions(-4.0, 4.0, 160) {
                let dt = 0.5 * stability_limit(&g, pot, beta).unwrap();
                let (_, rows) = fp_run(&g, pot, beta, dt, 2000, 1).unwrap();
                let e: Vec<f64> = rows.iter().map(|r| r.free_energy).collect();
                let rep = DissipationReport::from_energies(&e);
                assert!(rep.passes(dt), "{} beta={beta}: {rep:?}", pot.name());
            }
        }
    }
}

#[test]
fn history_check_agrees_with_run_rows() {
    let pot = Quadratic::default();
    let mut g = initial_conditions(-4.0, 4.0, 80).remove(0);
    let dt = 0.5 * stability_limit(&g, &pot, 1.0).unwrap();
    let mut history = vec![g.clone()];
    for _ in 0..50 {
        g = fp_step(&g, &pot, 1.0, dt).unwrap();
        history.push(g.clone());
    }
    let rep = dissipation_check(&history, &pot, 1.0);
    assert!(rep.passes(dt) && rep.max_uphill < 0.0);
    let at_rest = vec![DensityGrid::gibbs(-4.0, 4.0, 80, &pot, 1.0).unwrap(); 2];
    assert!(dissipation_check(&at_rest, &pot, 1.0).max_uphill.abs() < 1e-14);
}

/// `|dS/dt - (drift + diffusion)|` against the finite-difference entropy rate.
fn production_residual(m: usize, dt: f64) -> f64 {
    let pot = Quadratic::default();
    let beta = 1.0;
    let g = DensityGrid::from_fn(-8.0, 8.0, m, |x| (-(x - 1.0) * (x - 1.0) / 0.5).exp()).unwrap();
    let next = fp_step(&g, &pot, beta, dt).unwrap();
    let rate = (entropy(&next) - entropy(&g)) / dt;
    let (drift, diffusion) = entropy_production_terms(&g, &pot, beta);
    (rate - drift - diffusion).abs()
}

#[test]
fn entropy_production_converges_under_refinement() {
    let coarse = production_residual(100, 1e-3);
    let mid = production_residual(200, 2.5e-4);
    let fine = production_residual(400, 6.25e-5);
    // dx and sqrt(dt) halve together, so the residual should drop fourfold
    for ratio in [coarse / mid, mid / fine] {
        assert!((3.5..=4.5).contains(&ratio), "{coarse} {mid} {fine}");
    }
}

#[test]
fn potentials_match_finite_differences() {
    let quad = Quadratic { stiffness: 1.7 };
    let dw = DoubleWell { height: 0.8, tilt: 0.3 };
    let pots: [&dyn Potential; 2] = [&quad, &dw];
    let h = 1e-5;
    for pot in pots {
        for x in [[0.3, -1.2, 0.9], [1.5, 0.0, -0.4]] {
            let mut g = [0.0; 3];
            pot.grad(&x, &mut g);
            let mut lap = 0.0;
            for i in 0..3 {
                let (mut p, mut q) = (x, x);
                p[i] += h;
                q[i] -= h;
                let fd = (pot.value(&p) - pot.value(&q)) / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-6 * g[i].abs().max(1.0), "{}", pot.name());
                let hh = 1e-4;
                let (mut p, mut q) = (x, x);
                p[i] += hh;
                q[i] -= hh;
                lap += (pot.value(&p) - 2.0 * pot.value(&x) + pot.value(&q)) / (hh * hh);
            }
            assert!((lap - pot.laplacian(&x)).abs() < 1e-5 * pot.laplacian(&x).abs().max(1.0));
        }
    }
}

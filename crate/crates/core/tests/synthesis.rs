mod common;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mflqj::builtin::{self, MarketParams};
use mflqj::equivalence::{pullback_riccati, shift_weights};
use mflqj::linalg::max_abs_diff;
use mflqj::riccati::solve_riccati;
use mflqj::simulation::{euler_expected_cost, simulate_paths, solve_mean_ode, Control};
use mflqj::synthesis::{adjoint_representation, optimal_value, stationarity_residual, synthesize_feedback};

#[test]
fn asset_liability_gains_follow_the_portfolio_formula() {
    let params = MarketParams::default();
    let prob = builtin::example_5_4(&params, 400).unwrap();
    let sol = solve_riccati(&prob, 1).unwrap();
    let law = synthesize_feedback(&prob, &sol).unwrap();
    let c = prob.coefficients_at_node(0);
    for k in 0..prob.grid.len() {
        let (p, pi) = (sol.p.node(k), sol.pi.node(k));
        let sigma = c.d.transpose() * p * &c.d;
        let inv = sigma.clone().try_inverse().unwrap();
        let k0 = &inv * (c.b.transpose() * p + c.d.transpose() * p * &c.c);
        let k1 = &inv * (c.b.transpose() * pi + c.d.transpose() * p * &c.c);
        let scale = 1.0 + k0.amax().max(k1.amax());
        assert!(max_abs_diff(law.k0.node(k), &k0) <= 1e-10 * scale, "node {k}");
        assert!(max_abs_diff(law.k1.node(k), &k1) <= 1e-10 * scale, "node {k}");
    }
}

#[test]
fn zero_weights_give_zero_gains() {
    let prob = common::zero_problem(2, 2, 20);
    let sol = solve_riccati(&prob, 1).unwrap();
    let law = synthesize_feedback(&prob, &sol).unwrap();
    let tr = adjoint_representation(&prob, &sol).unwrap();
    for k in 0..prob.grid.len() {
        assert_eq!(law.k0.node(k).amax(), 0.0);
        assert_eq!(law.k1.node(k).amax(), 0.0);
        assert_eq!(tr.z.centered.node(k).amax(), 0.0);
        assert_eq!(tr.z.mean.node(k).amax(), 0.0);
    }
}

// The mean gains are those of the general representation. Each has the
// opposite sign of the closed-form display, and only these signs make the
// mean stationarity condition vanish, which the last assertion checks.
#[test]
fn closed_form_adjoint_gains() {
    let delta = 1.0;
    let prob = builtin::example_5_1(1.0, delta, 400).unwrap();
    let sol = solve_riccati(&prob, 1).unwrap();
    let tr = adjoint_representation(&prob, &sol).unwrap();
    let fbar = prob.jumps.atoms[0].f_bar.node(0)[(0, 0)];
    for (k, t) in prob.grid.nodes().enumerate() {
        let d = 2.0 - 2.0 * t + delta;
        assert!((tr.y.centered.node(k)[(0, 0)] - 2.0).abs() <= 1e-10);
        assert!((tr.y.mean.node(k)[(0, 0)] - delta / d).abs() <= 1e-8);
        assert!((tr.z.centered.node(k)[(0, 0)] + 2.0).abs() <= 1e-10);
        assert!((tr.z.mean.node(k)[(0, 0)] + 2.0 / d).abs() <= 1e-8);
        assert!((tr.r[0].mean.node(k)[(0, 0)] + 2.0 * fbar / d).abs() <= 1e-8);
        // (R + R_bar) u + (B + B_bar) Y + (D + D_bar) Z + rate F_bar r on the mean.
        let rate = prob.jumps.atoms[0].rate;
        let mean_u = -1.0 / d;
        let station = -2.0 * mean_u
            + 2.0 * tr.y.mean.node(k)[(0, 0)]
            + tr.z.mean.node(k)[(0, 0)]
            + rate * fbar * tr.r[0].mean.node(k)[(0, 0)];
        assert!(station.abs() <= 1e-7, "{station}");
    }
}

#[test]
fn terminal_adjoint_gains_on_random_definite_problems() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prob = common::random_problem(&mut rng, 2, 2, 1, 50, true);
        let sol = solve_riccati(&prob, 1).unwrap();
        let tr = adjoint_representation(&prob, &sol).unwrap();
        let last = prob.grid.steps();
        assert_eq!(tr.y.centered.node(last), &prob.weights.g);
        assert_eq!(tr.y.mean.node(last), &(&prob.weights.g + &prob.weights.g_bar));
    }
}

#[test]
fn value_is_homogeneous_of_degree_two() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let prob = common::random_problem(&mut rng, 3, 2, 1, 40, true);
    let sol = solve_riccati(&prob, 1).unwrap();
    let x = DVector::from_vec(vec![0.3, -1.2, 0.8]);
    let v = optimal_value(&sol, &x);
    for a in [-2.0, 0.5, 3.0] {
        let va = optimal_value(&sol, &(&x * a));
        assert!((va - a * a * v).abs() <= 1e-14 * (1.0 + va.abs()));
    }
}

// The closed-loop state of this example has heavy tails: at 1e5 paths the
// sample cost sits 3.3 reported standard errors below its expectation. The
// oracle is the exact expectation of the same Euler estimator, whose bias
// must shrink at first order.
#[test]
fn fbsde_value_matches_the_expected_cost() {
    let gap = |steps: usize| {
        let prob = builtin::example_5_3(1.0, steps).unwrap();
        let shift = builtin::example_5_3_shift(prob.grid).unwrap();
        let shifted = prob.with_weights(shift_weights(&prob, &shift).unwrap()).unwrap();
        let sol = pullback_riccati(&prob, &solve_riccati(&shifted, 1).unwrap(), &shift).unwrap();
        let value = optimal_value(&sol, &prob.x0);
        let ctl = Control::feedback(synthesize_feedback(&prob, &sol).unwrap());
        let mean = solve_mean_ode(&prob, &ctl).unwrap();
        let expected = euler_expected_cost(&prob, &ctl, &mean, &prob.weights).unwrap();
        ((expected - value).abs(), value)
    };
    let (coarse, value) = gap(250);
    let (fine, _) = gap(500);
    assert!(fine <= 0.01 * value.abs(), "{fine} {value}");
    assert!(coarse / fine >= 1.7, "{coarse} {fine}");
}

#[test]
fn stationarity_separates_optimal_and_zero_controls() {
    let prob = builtin::example_5_1(1.0, 1.0, 200).unwrap();
    let sol = solve_riccati(&prob, 1).unwrap();
    let tr = adjoint_representation(&prob, &sol).unwrap();
    let opt = Control::feedback(synthesize_feedback(&prob, &sol).unwrap());
    let ens = simulate_paths(&prob, &opt, &solve_mean_ode(&prob, &opt).unwrap(), 4, 100).unwrap();
    assert!(stationarity_residual(&prob, &ens, &tr).unwrap() <= 1e-8);
    let zero = Control::zero();
    let ens = simulate_paths(&prob, &zero, &solve_mean_ode(&prob, &zero).unwrap(), 4, 100).unwrap();
    assert!(stationarity_residual(&prob, &ens, &tr).unwrap() > 0.01);

    let zp = common::zero_problem(1, 1, 20);
    let zs = solve_riccati(&zp, 1).unwrap();
    let ztr = adjoint_representation(&zp, &zs).unwrap();
    let ens = simulate_paths(&zp, &zero, &solve_mean_ode(&zp, &zero).unwrap(), 4, 10).unwrap();
    assert_eq!(stationarity_residual(&zp, &ens, &ztr).unwrap(), 0.0);
}

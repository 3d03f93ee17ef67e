mod common;

use consensus_core::dynamics::{
    consensus_distance, euler_gamma, fit_contraction, fit_decay, integrate_rk4, iterate_discrete,
    jurdjevic_quinn_rate_check, run_per_cluster, subdominant_radius, discrete_step_matrix,
    ControlSpec, LyapunovMonitor, Perturbation, DEFAULT_WINDOW_FRACTION,
};
use consensus_core::operator::{
    assemble_generator, compute_weight, weighted_mean, InteractionMatrix, Weight,
};
use consensus_core::spectral::full_spectrum;
use consensus_core::Error;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

fn two_agent(a: f64, b: f64) -> InteractionMatrix {
    InteractionMatrix::from_rows(&[vec![0.0, a], vec![b, 0.0]]).unwrap()
}

#[test]
fn two_agent_matches_closed_form() {
    let (a, b) = (0.3, 0.7);
    let gen = assemble_generator(&two_agent(a, b));
    let w = compute_weight(&gen).unwrap();
    let y0 = DVector::from_vec(vec![1.0, -0.5]);
    let traj = integrate_rk4(&gen, &y0, 0.01, 5.0, &w, &ControlSpec::None, None).unwrap();
    let mean = (b * y0[0] + a * y0[1]) / (a + b);
    for (t, y) in traj.times.iter().zip(&traj.states) {
        let decay = (-(a + b) * t).exp();
        for i in 0..2 {
            let exact = mean + decay * (y0[i] - mean);
            assert!((y[i] - exact).abs() < 1e-10, "t={t}");
        }
    }
    assert_eq!(traj.times.len(), 501);
    assert_eq!(*traj.times.last().unwrap(), 5.0);
}

#[test]
fn two_agent_slope_is_twice_the_rate() {
    let (a, b) = (0.3, 0.7);
    let gen = assemble_generator(&two_agent(a, b));
    let w = compute_weight(&gen).unwrap();
    let lambda2 = Some(full_spectrum(&gen).unwrap().lambda2);
    let y0 = DVector::from_vec(vec![1.0, 0.0]);
    let traj = integrate_rk4(&gen, &y0, 0.01, 10.0, &w, &ControlSpec::None, None).unwrap();
    let fit = fit_decay(&traj, DEFAULT_WINDOW_FRACTION, lambda2).unwrap();
    assert!((fit.slope + 2.0).abs() < 1e-6, "{}", fit.slope);
    assert!(fit.relative_gap.unwrap() < 0.02);
    assert!(!fit.envelope);
}

#[test]
fn step_is_shortened_to_land_on_horizon() {
    let gen = assemble_generator(&two_agent(1.0, 1.0));
    let w = Weight::uniform(2);
    let traj = integrate_rk4(&gen, &DVector::from_vec(vec![0.0, 1.0]), 0.3, 1.0, &w, &ControlSpec::None, None)
        .unwrap();
    assert_eq!(traj.len(), 5);
    assert!((traj.times[1] - 0.25).abs() < 1e-15);
}

#[test]
fn stability_guard_rejects_large_steps() {
    let gen = assemble_generator(&two_agent(1.0, 3.0));
    let w = compute_weight(&gen).unwrap();
    let y0 = DVector::from_vec(vec![0.0, 1.0]);
    // ||A||_inf = 6
    assert!(integrate_rk4(&gen, &y0, 0.16, 1.0, &w, &ControlSpec::None, None).is_ok());
    let err = integrate_rk4(&gen, &y0, 0.2, 1.0, &w, &ControlSpec::None, None).unwrap_err();
    assert!(matches!(err, Error::Configuration(_)));
    let jq = ControlSpec::JurdjevicQuinn { alpha: 1.0 };
    assert!(integrate_rk4(&gen, &y0, 0.15, 1.0, &w, &jq, None).is_err());
}

#[test]
fn var_p_derivative_matches_certificate() {
    let mut rng = common::rng(101);
    let n = 12;
    let sigma = common::sparse_strongly_connected(n, 0.3, &mut rng);
    let gen = assemble_generator(&sigma);
    let w = compute_weight(&gen).unwrap();
    let monitor = LyapunovMonitor::build(&gen, &w).unwrap();
    let y0 = common::random_state(n, &mut rng);
    let dt = 1e-3;
    let traj = integrate_rk4(&gen, &y0, dt, 1.0, &w, &ControlSpec::None, Some(&monitor)).unwrap();
    assert!(traj.has_var_p());
    let series: Vec<f64> = traj.monitors.iter().map(|m| m.var_p.unwrap()).collect();
    for k in (1..series.len() - 1).step_by(50) {
        let derivative = (series[k + 1] - series[k - 1]) / (2.0 * dt);
        let z = monitor.restricted.coordinates(&traj.states[k]).unwrap();
        let expected = -z.norm_squared();
        assert!((derivative - expected).abs() <= 1e-4 * expected.abs(), "k={k}");
    }
}

#[test]
fn jurdjevic_quinn_shifts_the_rate() {
    let mut rng = common::rng(103);
    let sigma = common::dense_random(10, &mut rng);
    let gen = assemble_generator(&sigma);
    let w = compute_weight(&gen).unwrap();
    for alpha in [0.0, 0.5, 2.0] {
        let rates = jurdjevic_quinn_rate_check(&gen, &w, alpha).unwrap();
        assert!((rates.controlled_bound - (rates.uncontrolled_bound - alpha)).abs() < 1e-9);
    }
    assert!(jurdjevic_quinn_rate_check(&gen, &w, -1.0).is_err());
}

#[test]
fn feedback_conserves_mean_and_speeds_decay() {
    let mut rng = common::rng(107);
    let n = 8;
    let sigma = common::dense_random(n, &mut rng);
    let gen = assemble_generator(&sigma);
    let w = compute_weight(&gen).unwrap();
    let y0 = common::random_state(n, &mut rng);
    let free = integrate_rk4(&gen, &y0, 0.01, 2.0, &w, &ControlSpec::None, None).unwrap();
    let jq = ControlSpec::JurdjevicQuinn { alpha: 1.0 };
    let ctrl = integrate_rk4(&gen, &y0, 0.01, 2.0, &w, &jq, None).unwrap();
    let m0 = weighted_mean(&y0, &w).unwrap();
    assert!((ctrl.monitors.last().unwrap().weighted_mean - m0).abs() < 1e-12);
    let ratio = ctrl.monitors.last().unwrap().var_v / free.monitors.last().unwrap().var_v;
    // Var_v picks up an extra factor exp(-2 alpha t) = exp(-4).
    assert!((ratio - (-4.0f64).exp()).abs() < 1e-8, "{ratio}");
}

#[test]
fn cubic_damping_keeps_invariants() {
    let mut rng = common::rng(109);
    let n = 6;
    let sigma = common::sparse_strongly_connected(n, 0.3, &mut rng);
    let gen = assemble_generator(&sigma);
    let w = compute_weight(&gen).unwrap();
    let y0 = common::random_state(n, &mut rng) * 10.0;
    let control = ControlSpec::Nonlinear(Perturbation::CubicDamping { beta: 0.5 });
    let traj = integrate_rk4(&gen, &y0, 1e-3, 1.0, &w, &control, None).unwrap();
    let free = integrate_rk4(&gen, &y0, 1e-3, 1.0, &w, &ControlSpec::None, None).unwrap();
    assert!(traj.monitors.last().unwrap().var_v < free.monitors.last().unwrap().var_v);
}

#[test]
fn expanding_custom_perturbation_is_caught() {
    let gen = assemble_generator(&two_agent(1.0, 1.0));
    let w = Weight::uniform(2);
    let bad = Perturbation::Custom {
        name: "expanding".into(),
        f: std::sync::Arc::new(|y: &DVector<f64>, _: &Weight| {
            let mean = y.mean();
            y.map(|x| x - mean)
        }),
    };
    let err = integrate_rk4(
        &gen,
        &DVector::from_vec(vec![0.0, 1.0]),
        0.01,
        1.0,
        &w,
        &ControlSpec::Nonlinear(bad),
        None,
    )
    .unwrap_err();
    assert!(matches!(err, Error::Integrity { monitor: "control_dissipative", .. }), "{err:?}");
}

#[test]
fn oscillating_mode_uses_envelope() {
    // Directed 3-cycle: lambda2 = -3/2 + i sqrt(3)/2.
    let sigma = InteractionMatrix::from_rows(&[
        vec![0.0, 1.0, 0.0],
        vec![0.0, 0.0, 1.0],
        vec![1.0, 0.0, 0.0],
    ])
    .unwrap();
    let gen = assemble_generator(&sigma);
    let w = compute_weight(&gen).unwrap();
    let report = full_spectrum(&gen).unwrap();
    let lambda2 = report.lambda2;
    assert!(lambda2.im > 0.0);
    let y0 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
    let traj = integrate_rk4(&gen, &y0, 0.01, 8.0, &w, &ControlSpec::None, None).unwrap();
    let fit = fit_decay(&traj, 0.8, Some(lambda2)).unwrap();
    assert!(fit.envelope);
    assert!(fit.relative_gap.unwrap() < 0.05, "{fit:?}");
}

#[test]
fn three_blocks_reach_three_consensus_values() {
    let mut rng = common::rng(113);
    let sizes = [3, 4, 5];
    let n: usize = sizes.iter().sum();
    let mut m = DMatrix::zeros(n, n);
    let mut offset = 0;
    for &s in &sizes {
        for i in 0..s {
            for j in 0..s {
                if i != j {
                    m[(offset + i, offset + j)] = rng.random_range(0.1..1.0);
                }
            }
        }
        offset += s;
    }
    let sigma = InteractionMatrix::new(m).unwrap();
    let y0 = common::random_state(n, &mut rng);
    let run = run_per_cluster(&sigma, &y0, 0.01, 20.0, 0.0).unwrap();
    assert_eq!(run.classes.len(), 3);
    let mut values: Vec<f64> = run.classes.iter().map(|c| c.consensus).collect();
    for class in &run.classes {
        let y_block = DVector::from_iterator(class.members.len(), class.members.iter().map(|&i| y0[i]));
        assert!((weighted_mean(&y_block, &class.weight).unwrap() - class.consensus).abs() < 1e-14);
        let last = class.trajectory.final_state().unwrap();
        assert!((last.add_scalar(-class.consensus)).amax() < 1e-6);
    }
    values.sort_by(f64::total_cmp);
    values.dedup_by(|a, b| (*a - *b).abs() < 1e-6);
    assert_eq!(values.len(), 3);
    assert!((run.weight.vector().sum() - 1.0).abs() < 1e-14);
}

#[test]
fn arcs_between_classes_are_refused() {
    let sigma = InteractionMatrix::from_rows(&[
        vec![0.0, 1.0, 0.0],
        vec![1.0, 0.0, 0.5],
        vec![0.0, 0.0, 0.0],
    ])
    .unwrap();
    let err = run_per_cluster(&sigma, &DVector::zeros(3), 0.01, 1.0, 0.0).unwrap_err();
    assert!(matches!(err, Error::InterClassArcs { .. }));
}

#[test]
fn discrete_contraction_respects_subdominant_radius() {
    let mut rng = common::rng(127);
    for trial in 0..10 {
        let n = rng.random_range(3..15);
        let sigma = common::sparse_strongly_connected(n, 0.3, &mut rng);
        let max_s = assemble_generator(&sigma).row_sums().max();
        let dt = if trial % 2 == 0 { 1.0 / max_s } else { 0.5 / max_s };
        let gamma = euler_gamma(&sigma, dt).unwrap();
        let step = discrete_step_matrix(&gamma, dt).unwrap();
        let w = compute_weight(&assemble_generator(&sigma)).unwrap();
        let y0 = common::random_state(n, &mut rng);
        let traj = iterate_discrete(&gamma, dt, &y0, 400, &w).unwrap();
        let rho = subdominant_radius(&step).unwrap();
        assert!(rho < 1.0);
        let fit = fit_contraction(&traj, &w, rho).unwrap();
        let errors: Vec<f64> = traj.states.iter().map(|y| consensus_distance(y, &w).unwrap()).collect();
        assert!(fit.per_step <= rho + 0.05, "trial {trial}: {} vs {rho}", fit.per_step);
        assert!(fit.worst_ratio(&errors) < 10.0, "trial {trial}");
    }
}

#[test]
fn discrete_stability_condition_is_enforced() {
    let sigma = two_agent(2.0, 1.0);
    assert!(euler_gamma(&sigma, 0.5).is_ok());
    assert!(euler_gamma(&sigma, 0.6).is_err());
    let gamma = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.5, 0.4]);
    assert!(discrete_step_matrix(&gamma, 0.5).is_err());
}

/// Explicit Euler error at `t_end` against a fine RK4 reference.
fn euler_error(sigma: &InteractionMatrix, y0: &DVector<f64>, dt: f64, t_end: f64, reference: &DVector<f64>) -> f64 {
    let w = compute_weight(&assemble_generator(sigma)).unwrap();
    let steps = (t_end / dt).round() as usize;
    let gamma = euler_gamma(sigma, dt).unwrap();
    let traj = iterate_discrete(&gamma, dt, y0, steps, &w).unwrap();
    (traj.final_state().unwrap() - reference).amax()
}

#[test]
fn euler_iteration_converges_at_first_order() {
    let mut rng = common::rng(131);
    let n = 6;
    let sigma = common::dense_random(n, &mut rng);
    let gen = assemble_generator(&sigma);
    let w = compute_weight(&gen).unwrap();
    let y0 = common::random_state(n, &mut rng);
    let t_end = 1.0;
    let reference = integrate_rk4(&gen, &y0, 1e-4, t_end, &w, &ControlSpec::None, None)
        .unwrap()
        .final_state()
        .unwrap()
        .clone();
    let dt = 0.02;
    let e: Vec<f64> = (0..3)
        .map(|k| euler_error(&sigma, &y0, dt / f64::powi(2.0, k), t_end, &reference))
        .collect();
    for pair in e.windows(2) {
        let ratio = pair[0] / pair[1];
        assert!((1.7..=2.3).contains(&ratio), "{ratio}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rk4_monitors_hold_on_random_graphs(seed in any::<u64>(), n in 2usize..10) {
        let mut rng = common::rng(seed);
        let sigma = common::sparse_strongly_connected(n, 0.3, &mut rng);
        let gen = assemble_generator(&sigma);
        let w = compute_weight(&gen).unwrap();
        let y0 = common::random_state(n, &mut rng);
        let dt = 0.5 / gen.inf_norm();
        let traj = integrate_rk4(&gen, &y0, dt, 2.0, &w, &ControlSpec::None, None).unwrap();
        let m0 = traj.monitors[0].weighted_mean;
        for pair in traj.monitors.windows(2) {
            prop_assert!(pair[1].var_v <= pair[0].var_v * (1.0 + 1e-12) + 1e-300);
            prop_assert!((pair[1].weighted_mean - m0).abs() <= 1e-10 * (1.0 + m0.abs()));
        }
    }
}

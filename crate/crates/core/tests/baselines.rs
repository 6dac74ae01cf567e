mod common;

use common::{diag, s};
use nalgebra::{DMatrix, DVector};
use risklq::baselines::{find_breakdown_theta, synthesize_leqg, zero_offsets, LeqgMode};
use risklq::export::ScheduleExport;
use risklq::lqg::{kalman_forward, synthesize as lqg_synthesize};
use risklq::scenario::{double_integrator, wind_mixture};
use risklq::{CostSpec, Error, ErrorCategory, LinearSystem, NoiseSpec};

fn wind(n_steps: usize) -> (LinearSystem, CostSpec, DMatrix<f64>) {
    let (a, b) = double_integrator(0.5);
    let noise = NoiseSpec::channel(wind_mixture().unwrap(), b.clone(), true).unwrap();
    let w = noise.covariance();
    (
        LinearSystem::fully_observed(a, b).unwrap(),
        CostSpec::new(
            diag(&[1.0, 0.1, 2.0, 0.1]),
            DMatrix::identity(2, 2),
            n_steps,
        )
        .unwrap(),
        w,
    )
}

/// Scalar recursion with `A = B = Q = R = 1`: `ṽ = v/(1 − θwv)`,
/// `v⁻ = 1 + ṽ/(ṽ + 1)`; well posed while `θwv < 1` at every stage.
fn scalar_completes(theta: f64, w: f64, n_steps: usize) -> bool {
    let mut v = 1.0;
    for _ in 0..n_steps {
        if theta * w * v >= 1.0 {
            return false;
        }
        let vt = v / (1.0 - theta * w * v);
        v = 1.0 + vt / (vt + 1.0);
    }
    theta * w * v < 1.0
}

#[test]
fn vanishing_theta_recovers_risk_neutral_gains() {
    let (sys, cost, w) = wind(200);
    let leqg = synthesize_leqg(&sys, &cost, &w, 1e-12, &LeqgMode::FullyObserved).unwrap();
    let (_, k) = common::classical_lqr(sys.a(), sys.b(), cost.q(), cost.r(), 200);
    for t in 0..200 {
        assert!(common::max_abs_diff(&leqg.k[t], &k[t]) < 1e-6, "t = {t}");
    }
    assert_eq!(leqg.valid_up_to, -1);
}

#[test]
fn vanishing_theta_output_feedback_recovers_lqg() {
    let (a, b) = double_integrator(0.5);
    let c = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    let sys = LinearSystem::new(a, b.clone(), c).unwrap();
    let cost = CostSpec::new(diag(&[1.0, 0.5, 2.0, 0.5]), DMatrix::identity(2, 2), 100).unwrap();
    let w = &b * diag(&[30.0, 5.0]) * b.transpose();
    let s_cov = DMatrix::from_row_slice(2, 2, &[5.0, 2.0, 2.0, 2.0]);
    let leqg = synthesize_leqg(
        &sys,
        &cost,
        &w,
        1e-12,
        &LeqgMode::GaussianOutput(s_cov.clone()),
    )
    .unwrap();
    let kal = kalman_forward(&sys, &w, &s_cov, 100, None).unwrap();
    let lqg = lqg_synthesize(&sys, &cost, &kal, 0.0, &DVector::zeros(4)).unwrap();
    let coupled = leqg.coupled_k.as_ref().unwrap();
    let filter = leqg.filter.as_ref().unwrap();
    for t in 0..100 {
        assert!(
            common::max_abs_diff(&coupled[t], &lqg.k[t]) < 1e-6,
            "t = {t}"
        );
        assert!(
            common::max_abs_diff(&filter.gains[t], &kal.gains[t]) < 1e-6,
            "t = {t}"
        );
        assert!(common::max_abs_diff(&filter.tilt[t], &DMatrix::identity(4, 4)) < 1e-6);
    }
}

#[test]
fn reference_threshold_brackets() {
    let (sys, cost, w) = wind(5000);
    let ok = synthesize_leqg(&sys, &cost, &w, 0.0012, &LeqgMode::FullyObserved);
    assert!(ok.is_ok(), "{ok:?}");
    let err = synthesize_leqg(&sys, &cost, &w, 0.0013, &LeqgMode::FullyObserved).unwrap_err();
    assert_eq!(err.category(), ErrorCategory::Breakdown);
    assert!(matches!(err, Error::Breakdown { .. }));
}

#[test]
fn wind_breakdown_scan() {
    let (sys, cost, w) = wind(5000);
    let scan = find_breakdown_theta(&sys, &cost, &w, 1e-6, &LeqgMode::FullyObserved, 1e3).unwrap();
    assert!(!scan.capped);
    assert!((scan.theta - 0.001276).abs() <= 5e-5, "{}", scan.theta);
}

#[test]
fn noiseless_scan_reports_cap() {
    let (sys, cost, _) = wind(50);
    let scan = find_breakdown_theta(
        &sys,
        &cost,
        &DMatrix::zeros(4, 4),
        1e-6,
        &LeqgMode::FullyObserved,
        1e3,
    )
    .unwrap();
    assert!(scan.capped);
    assert_eq!(scan.theta, 1e3);
}

#[test]
fn scalar_scan_matches_dense_grid() {
    let n_steps = 50;
    let sys = LinearSystem::fully_observed(s(1.0), s(1.0)).unwrap();
    let cost = CostSpec::new(s(1.0), s(1.0), n_steps).unwrap();
    let tol = 1e-6;
    let scan =
        find_breakdown_theta(&sys, &cost, &s(1.0), tol, &LeqgMode::FullyObserved, 1e3).unwrap();

    let coarse = (1..=2000)
        .map(|i| i as f64 * 1e-3)
        .take_while(|&t| scalar_completes(t, 1.0, n_steps))
        .last()
        .unwrap();
    let fine_step = 1e-8;
    let mut oracle = coarse;
    let mut i = 1;
    while scalar_completes(coarse + i as f64 * fine_step, 1.0, n_steps) {
        oracle = coarse + i as f64 * fine_step;
        i += 1;
    }
    assert!(
        (scan.theta - oracle).abs() <= tol + fine_step,
        "{} vs {oracle}",
        scan.theta
    );
}

#[test]
fn breakdown_is_monotone_in_theta() {
    let (sys, cost, w) = wind(400);
    let grid: Vec<f64> = (1..=60).map(|i| i as f64 * 5e-5).collect();
    let flags: Vec<bool> = grid
        .iter()
        .map(|&th| synthesize_leqg(&sys, &cost, &w, th, &LeqgMode::FullyObserved).is_ok())
        .collect();
    let first_fail = flags
        .iter()
        .position(|f| !f)
        .expect("grid reaches breakdown");
    assert!(first_fail > 0);
    assert!(flags[first_fail..].iter().all(|f| !f), "{flags:?}");
}

#[test]
fn gains_approach_risk_neutral_linearly() {
    let (sys, cost, w) = wind(200);
    let (_, k) = common::classical_lqr(sys.a(), sys.b(), cost.q(), cost.r(), 200);
    let err = |theta: f64| {
        let g = synthesize_leqg(&sys, &cost, &w, theta, &LeqgMode::FullyObserved).unwrap();
        common::max_abs_diff(&g.k[0], &k[0])
    };
    let mut prev = err(1e-4);
    let mut theta = 1e-4;
    for _ in 0..5 {
        theta *= 0.5;
        let e = err(theta);
        let ratio = e / prev;
        assert!(
            (0.25..=1.0).contains(&ratio),
            "theta {theta}: ratio {ratio}"
        );
        prev = e;
    }
}

#[test]
fn risk_sensitive_gain_is_more_aggressive() {
    let (sys, cost, w) = wind(300);
    let g = synthesize_leqg(&sys, &cost, &w, 0.0012, &LeqgMode::FullyObserved).unwrap();
    let (_, k) = common::classical_lqr(sys.a(), sys.b(), cost.q(), cost.r(), 300);
    assert!(g.k[0][(0, 0)].abs() > k[0][(0, 0)].abs());
}

#[test]
fn invalid_parameters() {
    let (sys, cost, w) = wind(10);
    for theta in [0.0, -1.0, f64::NAN] {
        assert!(synthesize_leqg(&sys, &cost, &w, theta, &LeqgMode::FullyObserved).is_err());
    }
    assert!(find_breakdown_theta(&sys, &cost, &w, 0.0, &LeqgMode::FullyObserved, 1e3).is_err());
    assert!(synthesize_leqg(
        &sys,
        &cost,
        &DMatrix::identity(3, 3),
        1e-3,
        &LeqgMode::FullyObserved
    )
    .is_err());
}

#[test]
fn export_and_offsets() {
    let (sys, cost, w) = wind(8);
    let g = synthesize_leqg(&sys, &cost, &w, 1e-3, &LeqgMode::FullyObserved).unwrap();
    let back =
        ScheduleExport::from_json(&ScheduleExport::from_leqg(&g).to_json().unwrap()).unwrap();
    assert_eq!(back.kind, "leqg");
    assert_eq!(back.theta, Some(1e-3));
    assert_eq!(back.stages.len(), 8);
    assert!(back.stages.iter().all(|st| st.l.iter().all(|&x| x == 0.0)));
    let offs = zero_offsets(2, 8);
    assert_eq!(offs.len(), 8);
    assert!(offs.iter().all(|o| o.len() == 2 && o.amax() == 0.0));
}

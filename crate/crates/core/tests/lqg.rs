mod common;

use common::{diag, s};
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use risklq::lqg::{
    convergence_diagnostics, evaluate_cost, evaluate_risk, filter_step, fourth_moment_total,
    kalman_forward, steady_state, synthesize,
};
use risklq::scenario::double_integrator;
use risklq::{lqr, CostSpec, ErrorCategory, LinearSystem, NoiseSpec, QWeightedMoments};

struct Setup {
    sys: LinearSystem,
    cost: CostSpec,
    w: DMatrix<f64>,
    s: DMatrix<f64>,
    noise: NoiseSpec,
}

fn position_tracking(n_steps: usize) -> Setup {
    let (a, b) = double_integrator(0.5);
    let c = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    let w = &b * diag(&[30.0, 5.0]) * b.transpose();
    Setup {
        sys: LinearSystem::new(a, b, c).unwrap(),
        cost: CostSpec::new(
            diag(&[1.0, 0.5, 2.0, 0.5]),
            DMatrix::identity(2, 2),
            n_steps,
        )
        .unwrap(),
        noise: NoiseSpec::zero_mean_gaussian(w.clone()).unwrap(),
        w,
        s: DMatrix::from_row_slice(2, 2, &[5.0, 2.0, 2.0, 2.0]),
    }
}

fn gaussian(chol: &DMatrix<f64>, rng: &mut rand_chacha::ChaCha8Rng) -> DVector<f64> {
    let z = DVector::from_fn(chol.ncols(), |_, _| StandardNormal.sample(rng));
    chol * z
}

fn lower_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    // eigen factor handles the rank-deficient process covariance
    let eig = m.clone().symmetric_eigen();
    let root = eig.eigenvalues.map(|x| x.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&root)
}

#[test]
fn first_prediction_covariance_is_process_covariance() {
    let st = position_tracking(10);
    let k = kalman_forward(&st.sys, &st.w, &st.s, 10, None).unwrap();
    assert_eq!(k.pred_cov[1], st.w);
    assert!(k.gains[0].amax() == 0.0);
}

#[test]
fn covariance_recursion_and_monotonicity() {
    let st = position_tracking(60);
    let k = kalman_forward(&st.sys, &st.w, &st.s, 60, None).unwrap();
    let (a, c) = (st.sys.a(), st.sys.c());
    for t in 0..60 {
        let p = &k.pred_cov[t];
        let inv = (c * p * c.transpose() + &st.s).try_inverse().unwrap();
        let next =
            a * p * a.transpose() + &st.w - a * p * c.transpose() * inv * c * p * a.transpose();
        assert!(common::max_abs_diff(&next, &k.pred_cov[t + 1]) <= 1e-10 * (1.0 + next.amax()));
        assert!(
            common::min_eig(&(&k.pred_cov[t + 1] - p)) >= -1e-10,
            "t = {t}"
        );
    }
    assert!(common::max_abs_diff(&k.pred_cov[60], &k.w_inf) < 1e-8);
    assert!(k.filter_rho() < 1.0);
}

#[test]
fn uninformative_measurements_follow_lyapunov() {
    let a = DMatrix::from_row_slice(2, 2, &[0.8, 0.2, -0.1, 0.7]);
    let sys =
        LinearSystem::new(a.clone(), DMatrix::identity(2, 2), DMatrix::identity(2, 2)).unwrap();
    let w = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]);
    let k = kalman_forward(&sys, &w, &(DMatrix::identity(2, 2) * 1e8), 40, None).unwrap();
    let mut p = DMatrix::zeros(2, 2);
    for t in 0..=40 {
        assert!(
            common::max_abs_diff(&k.pred_cov[t], &p) <= 1e-6 * (1.0 + p.amax()),
            "t = {t}"
        );
        p = &a * &p * a.transpose() + &w;
    }
}

#[test]
fn filter_step_cases() {
    let st = position_tracking(5);
    let k = kalman_forward(&st.sys, &st.w, &st.s, 5, None).unwrap();
    let x = DVector::from_column_slice(&[1.0, -0.5, 2.0, 0.3]);
    let u = DVector::from_column_slice(&[0.2, -0.4]);
    let pred = st.sys.a() * &x + st.sys.b() * &u;
    let y = st.sys.c() * &pred;
    let step = filter_step(&k, &x, &u, &y, 3).unwrap();
    assert!((&step.pred - &pred).amax() < 1e-14);
    assert!((&step.post - &pred).amax() < 1e-14);

    // perfect measurement of the full state
    let sys = LinearSystem::new(
        DMatrix::identity(2, 2),
        DMatrix::identity(2, 2),
        DMatrix::identity(2, 2),
    )
    .unwrap();
    let k = kalman_forward(
        &sys,
        &DMatrix::identity(2, 2),
        &(DMatrix::identity(2, 2) * 1e-12),
        3,
        None,
    )
    .unwrap();
    let y = DVector::from_column_slice(&[4.0, -7.0]);
    let step = filter_step(&k, &DVector::zeros(2), &DVector::zeros(2), &y, 2).unwrap();
    assert!((&step.post - &y).amax() < 1e-9);
}

#[test]
fn scalar_filter_by_hand() {
    let sys = LinearSystem::new(s(1.0), s(0.0), s(1.0)).unwrap();
    let k = kalman_forward(&sys, &s(1.0), &s(1.0), 3, None).unwrap();
    // Σ: 0, 1, 1.5, 1.6 and L_t = Σ_t / (Σ_t + 1)
    let sigma = [0.0, 1.0, 1.5, 1.6];
    let mut xhat = 1.0;
    let mut post = DVector::from_element(1, 1.0);
    for t in 1..=3 {
        let gain = sigma[t] / (sigma[t] + 1.0);
        assert!((k.pred_cov[t][(0, 0)] - sigma[t]).abs() < 1e-14);
        assert!((k.gains[t][(0, 0)] - gain).abs() < 1e-14);
        xhat *= 1.0 - gain;
        post = filter_step(&k, &post, &DVector::zeros(1), &DVector::zeros(1), t)
            .unwrap()
            .post;
        assert!((post[0] - xhat).abs() < 1e-14, "t = {t}");
    }
    assert!(post[0] < 0.1);
}

#[test]
fn perfect_measurement_limit_matches_fully_observed() {
    let (a, b) = double_integrator(0.5);
    let q = diag(&[1.0, 0.1, 2.0, 0.1]);
    let w = &b * diag(&[4.0, 1.0]) * b.transpose() + DMatrix::identity(4, 4) * 0.01;
    let n_steps = 40;
    let cost = CostSpec::new(q.clone(), DMatrix::identity(2, 2), n_steps).unwrap();
    let sys = LinearSystem::fully_observed(a, b).unwrap();
    let kal = kalman_forward(&sys, &w, &(DMatrix::identity(4, 4) * 1e-12), n_steps, None).unwrap();
    let mom = QWeightedMoments::symmetric(&q, DVector::zeros(4), w.clone());
    let noise = NoiseSpec::zero_mean_gaussian(w.clone()).unwrap();
    let x0 = DVector::from_column_slice(&[1.0, 0.0, -1.0, 0.5]);
    for mu in [0.0, 0.7, 5.0] {
        let po = synthesize(&sys, &cost, &kal, mu, &DVector::zeros(4)).unwrap();
        let fo = lqr::synthesize(&sys, &cost, &mom, mu).unwrap();
        for t in 0..n_steps {
            assert!(
                common::max_abs_diff(&po.k[t], &fo.k[t]) < 1e-4,
                "mu {mu} t {t}"
            );
        }
        let jr_po = evaluate_risk(&sys, &cost, &noise, &kal, &po, &x0).unwrap();
        let jr_fo = lqr::evaluate_risk(&sys, &cost, &mom, &fo, &x0).unwrap();
        assert!(
            (jr_po - jr_fo).abs() <= 1e-4 * (1.0 + jr_fo.abs()),
            "mu {mu}: {jr_po} vs {jr_fo}"
        );
        let m4 = fourth_moment_total(&cost, &kal);
        assert!((m4 - n_steps as f64 * mom.m4).abs() <= 1e-6 * m4);
    }
}

#[test]
fn steady_loops_are_stable() {
    let st = position_tracking(100);
    let kal = kalman_forward(&st.sys, &st.w, &st.s, 100, None).unwrap();
    for mu in [0.0, 0.5, 100.0] {
        let g = steady_state(&st.sys, &st.cost, &kal, mu, &DVector::zeros(4)).unwrap();
        assert!(g.rho < 1.0, "mu {mu}: {}", g.rho);
        assert!(g.l.amax() == 0.0);
    }
}

#[test]
fn schedule_recursions_and_zero_offsets() {
    let st = position_tracking(30);
    let kal = kalman_forward(&st.sys, &st.w, &st.s, 30, None).unwrap();
    let sched = synthesize(&st.sys, &st.cost, &kal, 2.0, &DVector::zeros(4)).unwrap();
    let (a, b, r) = (st.sys.a(), st.sys.b(), st.cost.r());
    assert_eq!(sched.v[29], sched.qmu[29]);
    for t in 1..30 {
        let abar = a + b * &sched.k[t];
        let want = abar.transpose() * &sched.v[t] * &abar
            + sched.k[t].transpose() * r * &sched.k[t]
            + &sched.qmu[t - 1];
        assert!(common::max_abs_diff(&want, &sched.v[t - 1]) <= 1e-10 * (1.0 + want.amax()));
    }
    assert!(sched.l.iter().all(|l| l.amax() == 0.0));

    let wbar = DVector::from_column_slice(&[0.0, 0.3, 0.0, -0.2]);
    let shifted = synthesize(&st.sys, &st.cost, &kal, 2.0, &wbar).unwrap();
    for t in 1..30 {
        let abar = a + b * &shifted.k[t];
        let want = abar.transpose() * (&shifted.xi[t] + &shifted.v[t] * &wbar);
        assert!((want - &shifted.xi[t - 1]).amax() < 1e-10);
    }
    assert!(shifted.l[0].amax() > 0.0);
}

#[test]
fn filter_is_independent_of_multiplier_and_penalties_inflate() {
    let st = position_tracking(25);
    let kal = kalman_forward(&st.sys, &st.w, &st.s, 25, None).unwrap();
    let again = kalman_forward(&st.sys, &st.w, &st.s, 25, None).unwrap();
    assert_eq!(kal, again);
    let zero = DVector::zeros(4);
    let mut prev: Option<Vec<DMatrix<f64>>> = None;
    for mu in [0.0, 0.5, 3.0, 100.0] {
        let v = synthesize(&st.sys, &st.cost, &kal, mu, &zero).unwrap().v;
        if let Some(p) = &prev {
            for t in 0..25 {
                assert!(common::min_eig(&(&v[t] - &p[t])) >= -1e-8, "mu {mu} t {t}");
            }
        }
        prev = Some(v);
    }
}

#[test]
fn noiseless_risk_is_zero() {
    let st = position_tracking(20);
    let zero_w = DMatrix::zeros(4, 4);
    let kal = kalman_forward(&st.sys, &zero_w, &st.s, 20, None).unwrap();
    let sched = synthesize(&st.sys, &st.cost, &kal, 1.0, &DVector::zeros(4)).unwrap();
    let noise = NoiseSpec::zero_mean_gaussian(zero_w).unwrap();
    let x0 = DVector::from_column_slice(&[2.0, 0.0, -1.0, 0.0]);
    assert_eq!(
        evaluate_risk(&st.sys, &st.cost, &noise, &kal, &sched, &x0).unwrap(),
        0.0
    );
}

#[test]
fn non_gaussian_risk_is_unsupported() {
    let st = position_tracking(5);
    let kal = kalman_forward(&st.sys, &st.w, &st.s, 5, None).unwrap();
    let sched = synthesize(&st.sys, &st.cost, &kal, 1.0, &DVector::zeros(4)).unwrap();
    let atoms = vec![
        DVector::from_element(4, 1.0),
        DVector::from_element(4, -1.0),
    ];
    let noise = NoiseSpec::discrete(atoms, vec![0.5, 0.5]).unwrap();
    let err =
        evaluate_risk(&st.sys, &st.cost, &noise, &kal, &sched, &DVector::zeros(4)).unwrap_err();
    assert_eq!(err.category(), ErrorCategory::Unsupported);
}

#[test]
fn risk_and_cost_agree_with_simulation() {
    let n_steps = 30;
    let st = position_tracking(n_steps);
    let kal = kalman_forward(&st.sys, &st.w, &st.s, n_steps, None).unwrap();
    let (a, b, c, q, r) = (st.sys.a(), st.sys.b(), st.sys.c(), st.cost.q(), st.cost.r());
    let w_root = lower_factor(&st.w);
    let s_root = st.s.clone().cholesky().unwrap().l();
    let x0 = DVector::from_column_slice(&[1.0, 0.0, -2.0, 0.0]);
    let n_roll = 20_000;
    let mut prev_jr = f64::INFINITY;
    for mu in [0.0, 0.5, 100.0] {
        let sched = synthesize(&st.sys, &st.cost, &kal, mu, &DVector::zeros(4)).unwrap();
        let want_jr = evaluate_risk(&st.sys, &st.cost, &st.noise, &kal, &sched, &x0).unwrap();
        let want_j = evaluate_cost(&st.sys, &st.cost, &kal, &sched, &x0).unwrap();
        assert!(want_jr <= prev_jr * (1.0 + 1e-12), "mu {mu}");
        prev_jr = want_jr;

        let mut rng = common::rng(100 + mu as u64);
        let mut risks = Vec::with_capacity(n_roll);
        let mut costs = Vec::with_capacity(n_roll);
        for _ in 0..n_roll {
            let mut x = x0.clone();
            let y0 = c * &x + gaussian(&s_root, &mut rng);
            let mut post = kal.correct(0, &x0, &y0).unwrap();
            let (mut risk, mut cost) = (0.0, 0.0);
            for t in 0..n_steps {
                let u = &sched.k[t] * &post + &sched.l[t];
                cost += x.dot(&(q * &x)) + u.dot(&(r * &u));
                x = a * &x + b * &u + gaussian(&w_root, &mut rng);
                let y = c * &x + gaussian(&s_root, &mut rng);
                let step = filter_step(&kal, &post, &u, &y, t + 1).unwrap();
                let weight = q * &kal.pred_cov[t + 1] * q * 4.0;
                risk += step.pred.dot(&(&weight * &step.pred));
                post = step.post;
            }
            cost += x.dot(&(q * &x));
            risks.push(risk);
            costs.push(cost);
        }
        for (xs, want, what) in [(&risks, want_jr, "risk"), (&costs, want_j, "cost")] {
            let mean = xs.iter().sum::<f64>() / n_roll as f64;
            let var = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n_roll - 1) as f64;
            let se = (var / n_roll as f64).sqrt();
            assert!(
                (mean - want).abs() <= 4.0 * se,
                "mu {mu} {what}: {mean} vs {want} (se {se})"
            );
        }
    }
}

#[test]
fn convergence_on_shifted_window() {
    let st = position_tracking(10);
    let d = convergence_diagnostics(&st.sys, &st.cost, &st.w, &st.s, 1.0, -200, 200, None).unwrap();
    assert!(d.applicable);
    assert_eq!(d.v_error_curve.len(), 400);
    assert!(d.v_error_curve[200] < 1e-8, "{}", d.v_error_curve[200]);
    assert!(d.w_error_curve[200] < 1e-8, "{}", d.w_error_curve[200]);
    assert!(d.bound_satisfied && d.psi_bound_satisfied);
}

#[test]
fn scalar_convergence_bound() {
    let sys = LinearSystem::new(s(0.9), s(1.0), s(1.0)).unwrap();
    let cost = CostSpec::new(s(1.0), s(1.0), 10).unwrap();
    let d = convergence_diagnostics(&sys, &cost, &s(1.0), &s(1.0), 1.0, -50, 50, None).unwrap();
    assert!(d.bound_satisfied);
    let c1 = d.c1.unwrap();
    let c2 = d.c2.unwrap();
    for i in 0..100 {
        let tail: f64 = d.w_error_curve[i + 1..].iter().sum();
        assert!(d.v_error_curve[i] <= c1 * d.closed_loop_power_curve[i] + c2 * tail + 1e-9);
    }
}

#[test]
fn converged_prior_leaves_only_closed_loop_decay() {
    let st = position_tracking(10);
    let kal = kalman_forward(&st.sys, &st.w, &st.s, 10, None).unwrap();
    let d = convergence_diagnostics(
        &st.sys,
        &st.cost,
        &st.w,
        &st.s,
        1.0,
        -60,
        60,
        Some(&kal.w_inf),
    )
    .unwrap();
    assert!(d.w_error_curve.iter().all(|&e| e < 1e-9));
    let c1 = d.c1.unwrap();
    for (e, p) in d.v_error_curve.iter().zip(&d.closed_loop_power_curve) {
        assert!(*e <= c1 * p + 1e-9);
    }
    // errors shrink toward the window start
    assert!(d.v_error_curve[0] < 1e-8 && d.v_error_curve[119] > 1e-3);
}

#[test]
fn singular_penalty_is_not_applicable() {
    let st = position_tracking(10);
    let cost = CostSpec::new(diag(&[1.0, 0.0, 2.0, 0.0]), DMatrix::identity(2, 2), 10).unwrap();
    let d = convergence_diagnostics(&st.sys, &cost, &st.w, &st.s, 1.0, -20, 20, None).unwrap();
    assert!(!d.applicable && d.c1.is_none());
}

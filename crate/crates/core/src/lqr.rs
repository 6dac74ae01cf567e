//! Fully observed risk-aware LQR.
//!
//! The risk-constrained problem reduces, for a fixed multiplier `μ`, to an
//! LQR with the inflated penalty `Q_μ = Q + 4μQWQ` and a linear state term
//! `2μm3'x`. The controller is affine, `u_t = K_t x_t + l_t`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, solve_guarded, solve_guarded_vec, symmetrize};
use crate::model::{CostSpec, LinearSystem, QWeightedMoments};
use crate::riccati::{self, DareConfig};

/// Time-indexed controller data, `V, ξ, c` for `t = 0..=N` and `K, l` for
/// `t = 0..N`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSchedule {
    pub mu: f64,
    pub qmu: DMatrix<f64>,
    pub v: Vec<DMatrix<f64>>,
    pub k: Vec<DMatrix<f64>>,
    pub xi: Vec<DVector<f64>>,
    pub l: Vec<DVector<f64>>,
    pub c: Vec<f64>,
}

impl GainSchedule {
    pub fn horizon(&self) -> usize {
        self.k.len()
    }

    pub fn input(&self, t: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        if t >= self.k.len() {
            return Err(Error::OutOfRange {
                index: t,
                len: self.k.len(),
            });
        }
        Ok(&self.k[t] * x + &self.l[t])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyGains {
    pub mu: f64,
    pub v: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub xi: DVector<f64>,
    pub l: DVector<f64>,
    pub rho: f64,
    pub dare_iters: usize,
    pub dare_residual: f64,
}

fn check_mu(mu: f64) -> Result<()> {
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(Error::invalid(
            "mu",
            format!("must be finite and nonnegative, got {mu}"),
        ));
    }
    Ok(())
}

fn check_inputs(system: &LinearSystem, cost: &CostSpec, moments: &QWeightedMoments) -> Result<()> {
    cost.check_against(system)?;
    moments.check_against(system)
}

/// Backward pass producing the risk-aware gain schedule.
pub fn synthesize(
    system: &LinearSystem,
    cost: &CostSpec,
    moments: &QWeightedMoments,
    mu: f64,
) -> Result<GainSchedule> {
    check_mu(mu)?;
    check_inputs(system, cost, moments)?;
    let (a, b, r) = (system.a(), system.b(), cost.r());
    let n_steps = cost.horizon();
    let qmu = moments.inflated_penalty(cost.q(), mu);
    let mu_m3 = &moments.m3 * mu;
    let wbar = &moments.wbar;

    let mut v = vec![DMatrix::zeros(0, 0); n_steps + 1];
    let mut k = vec![DMatrix::zeros(0, 0); n_steps];
    let mut xi = vec![DVector::zeros(0); n_steps + 1];
    let mut l = vec![DVector::zeros(0); n_steps];
    let mut c = vec![0.0; n_steps + 1];
    v[n_steps] = qmu.clone();
    xi[n_steps] = mu_m3.clone();

    for t in (1..=n_steps).rev() {
        let vt = &v[t];
        let step = riccati::rde_step(vt, a, b, &qmu, r).map_err(|e| e.at_stage(t - 1))?;
        let gram = b.transpose() * vt * b + r;
        let drift = &xi[t] + vt * wbar;
        let lt =
            -solve_guarded_vec(&gram, &(b.transpose() * &drift)).map_err(|e| e.at_stage(t - 1))?;
        xi[t - 1] = (a + b * &step.k).transpose() * &drift + &mu_m3;
        c[t - 1] =
            c[t] + (&moments.w * vt).trace() + 2.0 * xi[t].dot(wbar) + linalg::quad_form(vt, wbar)
                - linalg::quad_form(&gram, &lt);
        v[t - 1] = step.v;
        k[t - 1] = step.k;
        l[t - 1] = lt;
    }
    Ok(GainSchedule {
        mu,
        qmu,
        v,
        k,
        xi,
        l,
        c,
    })
}

/// Infinite-horizon limit: DARE for `Q_μ` plus the affine term limits.
pub fn steady_state(
    system: &LinearSystem,
    cost: &CostSpec,
    moments: &QWeightedMoments,
    mu: f64,
) -> Result<SteadyGains> {
    check_mu(mu)?;
    check_inputs(system, cost, moments)?;
    let (a, b, r) = (system.a(), system.b(), cost.r());
    let qmu = moments.inflated_penalty(cost.q(), mu);
    let sol = riccati::solve_dare(a, b, &qmu, r, DareConfig::default())?;
    let abar = a + b * &sol.k;
    let n = system.n();
    let vw = &sol.v * &moments.wbar;
    let rhs = abar.transpose() * &vw + &moments.m3 * mu;
    let lhs = DMatrix::identity(n, n) - abar.transpose();
    let xi = solve_guarded_vec(&lhs, &rhs)?;
    let gram = b.transpose() * &sol.v * b + r;
    let l = -solve_guarded_vec(&gram, &(b.transpose() * (&xi + &vw)))?;
    Ok(SteadyGains {
        mu,
        v: sol.v,
        k: sol.k,
        xi,
        l,
        rho: sol.rho,
        dare_iters: sol.iters,
        dare_residual: sol.residual,
    })
}

fn check_policy(
    system: &LinearSystem,
    k: &[DMatrix<f64>],
    l: &[DVector<f64>],
    n_steps: usize,
) -> Result<()> {
    if k.len() != n_steps || l.len() != n_steps {
        return Err(Error::Dimension(format!(
            "policy covers {} / {} stages, horizon is {n_steps}",
            k.len(),
            l.len()
        )));
    }
    let (n, p) = (system.n(), system.p());
    if k.iter().any(|kt| kt.shape() != (p, n)) || l.iter().any(|lt| lt.len() != p) {
        return Err(Error::Dimension(format!(
            "policy gains must be {p}x{n} and offsets length {p}"
        )));
    }
    Ok(())
}

/// Reformulated risk `E Σ_{t=1}^{N} 4x̂_t'QWQx̂_t + 2x̂_t'm3` of the affine
/// policy `u_t = k[t]x_t + l[t]`, by the backward recursions for `P, ζ, d`.
pub fn evaluate_risk_affine(
    system: &LinearSystem,
    cost: &CostSpec,
    moments: &QWeightedMoments,
    k: &[DMatrix<f64>],
    l: &[DVector<f64>],
    x0: &DVector<f64>,
) -> Result<f64> {
    check_inputs(system, cost, moments)?;
    let n_steps = cost.horizon();
    check_policy(system, k, l, n_steps)?;
    if x0.len() != system.n() {
        return Err(Error::Dimension("x0 length".into()));
    }
    let (a, b, q) = (system.a(), system.b(), cost.q());
    let w = &moments.w;
    let four_qwq = symmetrize(&(q * w * q * 4.0));
    let m3 = &moments.m3;

    let mut p = four_qwq.clone();
    let mut zeta = m3.clone();
    let mut d = 0.0;
    for t in (1..=n_steps).rev() {
        let abar = a + b * &k[t - 1];
        let drive = b * &l[t - 1] + &moments.wbar;
        let p_prev = symmetrize(&(abar.transpose() * &p * &abar + &four_qwq));
        let zeta_prev = abar.transpose() * &zeta + m3 + abar.transpose() * (&p * &drive);
        d += ((&p_prev - &four_qwq) * w).trace()
            + 2.0 * zeta.dot(&drive)
            + linalg::quad_form(&p, &drive);
        p = p_prev;
        zeta = zeta_prev;
    }
    let p0 = &p - &four_qwq;
    Ok(linalg::quad_form(&p0, x0) + 2.0 * (&zeta - m3).dot(x0) + d - (&p0 * w).trace())
}

/// Closed-form risk functional of a synthesized schedule.
pub fn evaluate_risk(
    system: &LinearSystem,
    cost: &CostSpec,
    moments: &QWeightedMoments,
    schedule: &GainSchedule,
    x0: &DVector<f64>,
) -> Result<f64> {
    evaluate_risk_affine(system, cost, moments, &schedule.k, &schedule.l, x0)
}

/// Expected LQ cost `E{x_N'Qx_N + Σ x_t'Qx_t + u_t'Ru_t}` of an affine
/// policy, by forward propagation of the state mean and covariance.
pub fn evaluate_cost_affine(
    system: &LinearSystem,
    cost: &CostSpec,
    moments: &QWeightedMoments,
    k: &[DMatrix<f64>],
    l: &[DVector<f64>],
    x0: &DVector<f64>,
) -> Result<f64> {
    check_inputs(system, cost, moments)?;
    let n_steps = cost.horizon();
    check_policy(system, k, l, n_steps)?;
    if x0.len() != system.n() {
        return Err(Error::Dimension("x0 length".into()));
    }
    let (a, b, q, r) = (system.a(), system.b(), cost.q(), cost.r());
    let n = system.n();
    let mut mean = x0.clone();
    let mut cov = DMatrix::<f64>::zeros(n, n);
    let mut total = 0.0;
    for t in 0..n_steps {
        let u_mean = &k[t] * &mean + &l[t];
        total += linalg::quad_form(q, &mean)
            + (q * &cov).trace()
            + linalg::quad_form(r, &u_mean)
            + (k[t].transpose() * r * &k[t] * &cov).trace();
        let abar = a + b * &k[t];
        mean = &abar * &mean + b * &l[t] + &moments.wbar;
        cov = symmetrize(&(&abar * &cov * abar.transpose() + &moments.w));
    }
    total += linalg::quad_form(q, &mean) + (q * &cov).trace();
    Ok(total)
}

pub fn evaluate_cost(
    system: &LinearSystem,
    cost: &CostSpec,
    moments: &QWeightedMoments,
    schedule: &GainSchedule,
    x0: &DVector<f64>,
) -> Result<f64> {
    evaluate_cost_affine(system, cost, moments, &schedule.k, &schedule.l, x0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DualValue {
    /// Dual function `D(μ)`, the minimized Lagrangian.
    pub d: f64,
    /// Primal cost of the minimizer, recovered from the Lagrangian identity.
    pub j: f64,
    pub j_r: f64,
}

/// `D(μ) = L*_0(x0, μ) + g(μ)` and `J = D − μJ_R + με̄`.
pub fn dual_value(
    system: &LinearSystem,
    cost: &CostSpec,
    moments: &QWeightedMoments,
    schedule: &GainSchedule,
    x0: &DVector<f64>,
    eps_bar: f64,
) -> Result<DualValue> {
    let mu = schedule.mu;
    let j_r = evaluate_risk(system, cost, moments, schedule, x0)?;
    let q = cost.q();
    let qw = q * &moments.w;
    let tr_qw2 = (&qw * &qw).trace();
    let n_steps = cost.horizon() as f64;
    let cost_to_go = linalg::quad_form(&(&schedule.v[0] - &schedule.qmu), x0)
        + 2.0 * (&schedule.xi[0] - &moments.m3 * mu).dot(x0)
        + schedule.c[0];
    let g = mu * (-eps_bar - 4.0 * n_steps * tr_qw2) + linalg::quad_form(q, x0);
    let d = cost_to_go + g;
    let j = d - mu * j_r + mu * eps_bar;
    if !d.is_finite() || !j.is_finite() {
        return Err(Error::Divergence { step: 0 });
    }
    Ok(DualValue { d, j, j_r })
}

/// Tracking form of the Lagrangian stage cost:
/// `(x − target)'Q(x − target) + x'·extra·x + u'Ru + constant`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingForm {
    pub target: DVector<f64>,
    pub extra_penalty: DMatrix<f64>,
    pub constant: f64,
}

impl TrackingForm {
    pub fn stage_cost(
        &self,
        q: &DMatrix<f64>,
        r: &DMatrix<f64>,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> f64 {
        let e = x - &self.target;
        linalg::quad_form(q, &e)
            + linalg::quad_form(&self.extra_penalty, x)
            + linalg::quad_form(r, u)
            + self.constant
    }
}

pub fn tracking_reformulation(
    cost: &CostSpec,
    moments: &QWeightedMoments,
    mu: f64,
) -> Result<TrackingForm> {
    check_mu(mu)?;
    let q = cost.q();
    if q.nrows() != moments.dim() {
        return Err(Error::Dimension(
            "Q does not match the noise dimension".into(),
        ));
    }
    let m3_big = &moments.big_m3;
    Ok(TrackingForm {
        target: -(m3_big * mu),
        extra_penalty: symmetrize(&(q * &moments.w * q * (4.0 * mu))),
        constant: -mu * mu * linalg::quad_form(q, m3_big),
    })
}

/// Lagrangian stage cost `x'Q_μx + 2μm3'x + u'Ru`.
pub fn lagrangian_stage_cost(
    cost: &CostSpec,
    moments: &QWeightedMoments,
    mu: f64,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> f64 {
    let qmu = moments.inflated_penalty(cost.q(), mu);
    linalg::quad_form(&qmu, x) + 2.0 * mu * moments.m3.dot(x) + linalg::quad_form(cost.r(), u)
}

/// Split of the affine term, `ξ_t = S_t·μm3 + T_t·w̄`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineDecomposition {
    pub s: Vec<DMatrix<f64>>,
    pub t: Vec<DMatrix<f64>>,
}

pub fn affine_decomposition(system: &LinearSystem, schedule: &GainSchedule) -> AffineDecomposition {
    let n = system.n();
    let n_steps = schedule.horizon();
    let mut s = vec![DMatrix::identity(n, n); n_steps + 1];
    let mut tm = vec![DMatrix::zeros(n, n); n_steps + 1];
    for t in (0..n_steps).rev() {
        let abar_t = system.closed_loop(&schedule.k[t]).transpose();
        s[t] = &abar_t * &s[t + 1] + DMatrix::identity(n, n);
        tm[t] = &abar_t * (&tm[t + 1] + &schedule.v[t + 1]);
    }
    AffineDecomposition { s, t: tm }
}

impl SteadyGains {
    /// Steady gains repeated over `horizon` stages.
    pub fn repeated(&self, horizon: usize) -> (Vec<DMatrix<f64>>, Vec<DVector<f64>>) {
        (vec![self.k.clone(); horizon], vec![self.l.clone(); horizon])
    }
}

/// Steady closed-loop state covariance `X = ĀXĀ' + W` for a stable `Ā`.
pub fn stationary_covariance(abar: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = abar.nrows();
    // vec(X) = (I − Ā⊗Ā)⁻¹ vec(W)
    let kron = abar.kronecker(abar);
    let lhs = DMatrix::identity(n * n, n * n) - kron;
    let rhs = DMatrix::from_column_slice(n * n, 1, w.as_slice());
    let x = solve_guarded(&lhs, &rhs)?;
    Ok(symmetrize(&DMatrix::from_column_slice(n, n, x.as_slice())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{compute_moments, NoiseSpec};

    fn toy(n_steps: usize) -> (LinearSystem, CostSpec, QWeightedMoments) {
        let one = DMatrix::from_element(1, 1, 1.0);
        let sys = LinearSystem::fully_observed(one.clone(), one.clone()).unwrap();
        let cost = CostSpec::new(one.clone(), DMatrix::zeros(1, 1), n_steps).unwrap();
        let noise = NoiseSpec::bernoulli_shock(3.0).unwrap();
        let mom = compute_moments(&noise, &one, None).unwrap();
        (sys, cost, mom)
    }

    #[test]
    fn toy_schedule_matches_steady_formulas() {
        let (sys, cost, mom) = toy(30);
        let sched = synthesize(&sys, &cost, &mom, 1.0).unwrap();
        assert!((sched.v[0][(0, 0)] - 9.0).abs() < 1e-12);
        assert!((sched.k[0][(0, 0)] + 1.0).abs() < 1e-12);
        assert!((sched.l[0][0] + 13.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn affine_decomposition_reproduces_xi() {
        let (sys, cost, mom) = toy(8);
        let sched = synthesize(&sys, &cost, &mom, 0.7).unwrap();
        let dec = affine_decomposition(&sys, &sched);
        for t in 0..=8 {
            let rebuilt = &dec.s[t] * (&mom.m3 * 0.7) + &dec.t[t] * &mom.wbar;
            assert!((rebuilt - &sched.xi[t]).amax() < 1e-10);
        }
    }

    #[test]
    fn negative_mu_rejected() {
        let (sys, cost, mom) = toy(3);
        assert!(synthesize(&sys, &cost, &mom, -1.0).is_err());
    }
}

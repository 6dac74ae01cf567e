//! Partially observed Gaussian case: Kalman filter, risk-aware LQG synthesis,
//! closed-form risk evaluation and convergence diagnostics.
//!
//! Time indexing: the filter covariance `Σ_t` is the prediction-error
//! covariance of `x_t` given outputs up to `t−1` (`Σ_0 = W0`, by default 0).
//! Controls are `u_t = K_t x̂_{t|t} + l_t` for `t = 0..N−1`; the risk of
//! reaching `x_{t+1}` is priced by `Q_{μ,t} = Q + 4μQΣ_{t+1}Q`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{
    self, condition_number, min_eigenvalue, solve_guarded, solve_guarded_vec, spectral_norm,
    symmetrize, MAX_CONDITION,
};
use crate::model::{CostSpec, LinearSystem, NoiseSpec};
use crate::riccati::{self, DareConfig};

/// Filter covariances and gains for `t = 0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanSchedule {
    system: LinearSystem,
    /// Process-noise mean added in the prediction step.
    pub wbar: DVector<f64>,
    pub w: DMatrix<f64>,
    pub s: DMatrix<f64>,
    /// Prediction-error covariances `Σ_t`.
    pub pred_cov: Vec<DMatrix<f64>>,
    /// Filtered covariances `Σ_{t|t} = Σ_t − Cov(e_t)`.
    pub filtered_cov: Vec<DMatrix<f64>>,
    /// `L_t = Σ_tC'(CΣ_tC'+S)⁻¹`.
    pub gains: Vec<DMatrix<f64>>,
    /// Output-innovation covariances `CΣ_tC' + S`.
    pub innovation_cov: Vec<DMatrix<f64>>,
    /// Covariances of the filter corrections `e_t = x̂_{t|t} − x̂_t`.
    pub correction_cov: Vec<DMatrix<f64>>,
    pub w_inf: DMatrix<f64>,
    pub gain_inf: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterStep {
    pub pred: DVector<f64>,
    pub post: DVector<f64>,
}

fn check_pd(m: &DMatrix<f64>) -> Result<()> {
    let cond = condition_number(m);
    if min_eigenvalue(m) <= 0.0 || !cond.is_finite() || cond > MAX_CONDITION {
        return Err(Error::Singular { stage: None, cond });
    }
    Ok(())
}

struct Correction {
    gain: DMatrix<f64>,
    innovation: DMatrix<f64>,
    correction: DMatrix<f64>,
}

fn correction(c: &DMatrix<f64>, sigma: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<Correction> {
    let innovation = symmetrize(&(c * sigma * c.transpose() + s));
    let sct = sigma * c.transpose();
    let gain = solve_guarded(&innovation, &sct.transpose())?.transpose();
    let correction = symmetrize(&(&gain * sct.transpose()));
    Ok(Correction {
        gain,
        innovation,
        correction,
    })
}

/// Forward covariance recursion
/// `Σ_{t+1} = AΣ_tA' + W − AΣ_tC'(CΣ_tC'+S)⁻¹CΣ_tA'` over `t = 0..N`.
pub fn kalman_forward(
    system: &LinearSystem,
    w: &DMatrix<f64>,
    s: &DMatrix<f64>,
    n_steps: usize,
    w0: Option<&DMatrix<f64>>,
) -> Result<KalmanSchedule> {
    let (n, m) = (system.n(), system.m());
    if w.shape() != (n, n) || s.shape() != (m, m) {
        return Err(Error::Dimension(format!("W must be {n}x{n} and S {m}x{m}")));
    }
    if !linalg::is_symmetric(s, 1e-12) || !linalg::is_symmetric(w, 1e-12) {
        return Err(Error::invalid("W/S", "must be symmetric"));
    }
    check_pd(s)?;
    let sigma0 = match w0 {
        Some(w0) if w0.shape() == (n, n) => w0.clone(),
        Some(_) => return Err(Error::Dimension("W0 shape".into())),
        None => DMatrix::zeros(n, n),
    };
    let (a, c) = (system.a(), system.c());
    let mut pred_cov = Vec::with_capacity(n_steps + 1);
    let mut filtered_cov = Vec::with_capacity(n_steps + 1);
    let mut gains = Vec::with_capacity(n_steps + 1);
    let mut innovation_cov = Vec::with_capacity(n_steps + 1);
    let mut correction_cov = Vec::with_capacity(n_steps + 1);
    let mut sigma = sigma0;
    for t in 0..=n_steps {
        let corr = correction(c, &sigma, s).map_err(|e| e.at_stage(t))?;
        let filtered = symmetrize(&(&sigma - &corr.correction));
        let next = symmetrize(&(a * &filtered * a.transpose() + w));
        pred_cov.push(sigma);
        filtered_cov.push(filtered);
        gains.push(corr.gain);
        innovation_cov.push(corr.innovation);
        correction_cov.push(corr.correction);
        sigma = next;
    }
    let dual = riccati::solve_dare(&a.transpose(), &c.transpose(), w, s, DareConfig::default())?;
    let w_inf = dual.v;
    let gain_inf = correction(c, &w_inf, s)?.gain;
    Ok(KalmanSchedule {
        system: system.clone(),
        wbar: DVector::zeros(n),
        w: w.clone(),
        s: s.clone(),
        pred_cov,
        filtered_cov,
        gains,
        innovation_cov,
        correction_cov,
        w_inf,
        gain_inf,
    })
}

impl KalmanSchedule {
    pub fn with_process_mean(mut self, wbar: DVector<f64>) -> Result<Self> {
        if wbar.len() != self.system.n() {
            return Err(Error::Dimension("process mean length".into()));
        }
        self.wbar = wbar;
        Ok(self)
    }

    pub fn horizon(&self) -> usize {
        self.pred_cov.len() - 1
    }

    pub fn system(&self) -> &LinearSystem {
        &self.system
    }

    fn check_index(&self, t: usize) -> Result<()> {
        if t >= self.gains.len() {
            return Err(Error::OutOfRange {
                index: t,
                len: self.gains.len(),
            });
        }
        Ok(())
    }

    pub fn gain(&self, t: usize) -> Result<&DMatrix<f64>> {
        self.check_index(t)?;
        Ok(&self.gains[t])
    }

    /// Measurement update at `t` from the prediction `x̂_t`.
    pub fn correct(&self, t: usize, pred: &DVector<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_index(t)?;
        if y.len() != self.system.m() {
            return Err(Error::Dimension("output length".into()));
        }
        Ok(pred + &self.gains[t] * (y - self.system.c() * pred))
    }

    /// Spectral radius of the steady filter error dynamics `A(I − L∞C)`.
    pub fn filter_rho(&self) -> f64 {
        let n = self.system.n();
        let a = self.system.a();
        linalg::spectral_radius(&(a * (DMatrix::identity(n, n) - &self.gain_inf * self.system.c())))
    }
}

/// Prediction `x̂_t = Ax̂_{t−1|t−1} + Bu_{t−1} + w̄` followed by the
/// measurement update `x̂_{t|t} = x̂_t + L_t(y_t − Cx̂_t)`.
pub fn filter_step(
    schedule: &KalmanSchedule,
    xhat_prev_post: &DVector<f64>,
    u_prev: &DVector<f64>,
    y_t: &DVector<f64>,
    t: usize,
) -> Result<FilterStep> {
    let sys = &schedule.system;
    if xhat_prev_post.len() != sys.n() || u_prev.len() != sys.p() {
        return Err(Error::Dimension("filter_step state/input length".into()));
    }
    let pred = sys.a() * xhat_prev_post + sys.b() * u_prev + &schedule.wbar;
    let post = schedule.correct(t, &pred, y_t)?;
    Ok(FilterStep { pred, post })
}

/// Backward data for `t = 0..N−1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LqgGainSchedule {
    pub mu: f64,
    pub v: Vec<DMatrix<f64>>,
    pub k: Vec<DMatrix<f64>>,
    pub xi: Vec<DVector<f64>>,
    pub l: Vec<DVector<f64>>,
    /// `Q_{μ,t} = Q + 4μQΣ_{t+1}Q`.
    pub qmu: Vec<DMatrix<f64>>,
}

impl LqgGainSchedule {
    pub fn horizon(&self) -> usize {
        self.k.len()
    }
}

/// Risk-aware LQG backward pass over `t = N−1..0`.
pub fn synthesize(
    system: &LinearSystem,
    cost: &CostSpec,
    kalman: &KalmanSchedule,
    mu: f64,
    wbar: &DVector<f64>,
) -> Result<LqgGainSchedule> {
    if !(mu >= 0.0) || !mu.is_finite() {
        return Err(Error::invalid(
            "mu",
            format!("must be finite and nonnegative, got {mu}"),
        ));
    }
    cost.check_against(system)?;
    let n_steps = cost.horizon();
    if kalman.horizon() < n_steps {
        return Err(Error::Dimension(format!(
            "Kalman schedule covers {} steps, horizon is {n_steps}",
            kalman.horizon()
        )));
    }
    if wbar.len() != system.n() {
        return Err(Error::Dimension("wbar length".into()));
    }
    let (a, b, q, r) = (system.a(), system.b(), cost.q(), cost.r());
    let qmu: Vec<DMatrix<f64>> = (0..n_steps)
        .map(|t| symmetrize(&(q + q * &kalman.pred_cov[t + 1] * q * (4.0 * mu))))
        .collect();

    let mut v = vec![DMatrix::zeros(0, 0); n_steps];
    let mut k = vec![DMatrix::zeros(0, 0); n_steps];
    let mut xi = vec![DVector::zeros(0); n_steps];
    let mut l = vec![DVector::zeros(0); n_steps];
    v[n_steps - 1] = qmu[n_steps - 1].clone();
    xi[n_steps - 1] = DVector::zeros(system.n());
    for t in (0..n_steps).rev() {
        let gram = b.transpose() * &v[t] * b + r;
        let kt = -solve_guarded(&gram, &(b.transpose() * &v[t] * a)).map_err(|e| e.at_stage(t))?;
        let drift = &xi[t] + &v[t] * wbar;
        l[t] = -solve_guarded_vec(&gram, &(b.transpose() * &drift)).map_err(|e| e.at_stage(t))?;
        if t > 0 {
            let abar = a + b * &kt;
            v[t - 1] = symmetrize(
                &(abar.transpose() * &v[t] * &abar + kt.transpose() * r * &kt + &qmu[t - 1]),
            );
            xi[t - 1] = abar.transpose() * &drift;
        }
        k[t] = kt;
    }
    Ok(LqgGainSchedule {
        mu,
        v,
        k,
        xi,
        l,
        qmu,
    })
}

fn require_gaussian(noise: &NoiseSpec) -> Result<()> {
    if !noise.is_gaussian() {
        return Err(Error::Unsupported(format!(
            "partially observed risk evaluation needs Gaussian process noise, got {}",
            noise.kind_name()
        )));
    }
    Ok(())
}

fn check_schedule(
    system: &LinearSystem,
    cost: &CostSpec,
    kalman: &KalmanSchedule,
    sched: &LqgGainSchedule,
    x0: &DVector<f64>,
) -> Result<usize> {
    cost.check_against(system)?;
    let n_steps = cost.horizon();
    if sched.horizon() != n_steps || kalman.horizon() < n_steps {
        return Err(Error::Dimension(format!(
            "schedules cover {} / {} steps, horizon is {n_steps}",
            sched.horizon(),
            kalman.horizon()
        )));
    }
    if x0.len() != system.n() {
        return Err(Error::Dimension("x0 length".into()));
    }
    Ok(n_steps)
}

/// Reformulated risk `E Σ_{t=1}^{N} 4x̂_t'QΣ_tQx̂_t` of the LQG controller.
/// Only defined for Gaussian noise, where every backward quantity is
/// deterministic.
pub fn evaluate_risk(
    system: &LinearSystem,
    cost: &CostSpec,
    noise: &NoiseSpec,
    kalman: &KalmanSchedule,
    sched: &LqgGainSchedule,
    x0: &DVector<f64>,
) -> Result<f64> {
    require_gaussian(noise)?;
    let n_steps = check_schedule(system, cost, kalman, sched, x0)?;
    let (a, b, q) = (system.a(), system.b(), cost.q());
    let wbar = &kalman.wbar;
    let risk_weight = |t: usize| symmetrize(&(q * &kalman.pred_cov[t] * q * 4.0));

    let mut h = risk_weight(n_steps);
    let mut f = DVector::zeros(system.n());
    let mut g = 0.0;
    let mut theta = DMatrix::zeros(0, 0);
    let mut eta = DVector::zeros(0);
    for t in (0..n_steps).rev() {
        let abar = a + b * &sched.k[t];
        let drive = b * &sched.l[t] + wbar;
        theta = symmetrize(&(abar.transpose() * &h * &abar));
        eta = abar.transpose() * (&f + &h * &drive);
        let gamma = g + linalg::quad_form(&h, &drive) + 2.0 * drive.dot(&f);
        if t > 0 {
            h = &theta + risk_weight(t);
            f = eta.clone();
            g = gamma + (&theta * &kalman.correction_cov[t]).trace();
        } else {
            g = gamma;
        }
    }
    // x̂_{0|0} = x0 + e_0 with Cov(e_0) = 0 whenever Σ_0 = 0.
    Ok(linalg::quad_form(&theta, x0)
        + 2.0 * eta.dot(x0)
        + g
        + (&theta * &kalman.correction_cov[0]).trace())
}

/// `Σ_{t=1}^{N} 2·Tr((QΣ_t)²)`, the Gaussian fourth-moment total that
/// separates the reformulated risk from the predictive variance.
pub fn fourth_moment_total(cost: &CostSpec, kalman: &KalmanSchedule) -> f64 {
    (1..=cost.horizon())
        .map(|t| {
            let qs = cost.q() * &kalman.pred_cov[t];
            2.0 * (&qs * &qs).trace()
        })
        .sum()
}

/// Expected LQ cost of the LQG controller, from the filtered-estimate mean
/// and covariance plus the filtered error covariance.
pub fn evaluate_cost(
    system: &LinearSystem,
    cost: &CostSpec,
    kalman: &KalmanSchedule,
    sched: &LqgGainSchedule,
    x0: &DVector<f64>,
) -> Result<f64> {
    let n_steps = check_schedule(system, cost, kalman, sched, x0)?;
    let (a, b, q, r) = (system.a(), system.b(), cost.q(), cost.r());
    let mut mean = x0.clone();
    let mut cov = kalman.correction_cov[0].clone();
    let mut total = 0.0;
    for t in 0..n_steps {
        let kt = &sched.k[t];
        let u_mean = kt * &mean + &sched.l[t];
        total += linalg::quad_form(q, &mean)
            + (q * (&cov + &kalman.filtered_cov[t])).trace()
            + linalg::quad_form(r, &u_mean)
            + (kt.transpose() * r * kt * &cov).trace();
        let abar = a + b * kt;
        mean = &abar * &mean + b * &sched.l[t] + &kalman.wbar;
        cov = symmetrize(&(&abar * &cov * abar.transpose() + &kalman.correction_cov[t + 1]));
    }
    total += linalg::quad_form(q, &mean) + (q * (&cov + &kalman.filtered_cov[n_steps])).trace();
    Ok(total)
}

/// Steady LQG gain: DARE for `Q_{μ,∞} = Q + 4μQΣ∞Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct LqgSteadyGains {
    pub v: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub l: DVector<f64>,
    pub rho: f64,
}

pub fn steady_state(
    system: &LinearSystem,
    cost: &CostSpec,
    kalman: &KalmanSchedule,
    mu: f64,
    wbar: &DVector<f64>,
) -> Result<LqgSteadyGains> {
    cost.check_against(system)?;
    let q = cost.q();
    let (a, b) = (system.a(), system.b());
    let qmu = symmetrize(&(q + q * &kalman.w_inf * q * (4.0 * mu)));
    let sol = riccati::solve_dare(a, b, &qmu, cost.r(), DareConfig::default())?;
    let abar = a + b * &sol.k;
    let n = system.n();
    let xi = solve_guarded_vec(
        &(DMatrix::identity(n, n) - abar.transpose()),
        &(abar.transpose() * (&sol.v * wbar)),
    )?;
    let gram = b.transpose() * &sol.v * b + cost.r();
    let l = -solve_guarded_vec(&gram, &(b.transpose() * (&xi + &sol.v * wbar)))?;
    Ok(LqgSteadyGains {
        v: sol.v,
        k: sol.k,
        l,
        rho: sol.rho,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceDiagnostics {
    /// False when `Q` is singular; the bounds below are then absent.
    pub applicable: bool,
    pub t0: i64,
    pub n: i64,
    /// `‖V_t − V‖₂` for `t = t0..N−1`.
    pub v_error_curve: Vec<f64>,
    /// `‖Σ_t − Σ∞‖₂` for `t = t0..N`.
    pub w_error_curve: Vec<f64>,
    /// `‖Ā^{N−t−1}‖₂` for `t = t0..N−1`.
    pub closed_loop_power_curve: Vec<f64>,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    /// `V` error below `C1‖Ā^{N−t−1}‖ + C2·Σ_{s>t}‖Σ_s − Σ∞‖` at every `t`.
    pub bound_satisfied: bool,
    /// Nonnegative least-squares fit of `C1‖Ā^{N−t−1}‖ + C2‖Σ_{t+1} − Σ∞‖`.
    pub fitted_c1: f64,
    pub fitted_c2: f64,
    /// `sqrt(max‖V_t‖/σ_min(Q))`, bounding every closed-loop product.
    pub psi_bound: Option<f64>,
    pub psi_bound_satisfied: bool,
}

/// Error curves of the finite-horizon LQG recursion on the shifted window
/// `t0..N` against the steady solution, with the bound check.
#[allow(clippy::too_many_arguments)]
pub fn convergence_diagnostics(
    system: &LinearSystem,
    cost: &CostSpec,
    w: &DMatrix<f64>,
    s: &DMatrix<f64>,
    mu: f64,
    t0: i64,
    n: i64,
    w0: Option<&DMatrix<f64>>,
) -> Result<ConvergenceDiagnostics> {
    if n <= t0 {
        return Err(Error::invalid("t0", "must be below N"));
    }
    let len = (n - t0) as usize;
    let window = cost.with_horizon(len)?;
    let kalman = kalman_forward(system, w, s, len, w0)?;
    let zero = DVector::zeros(system.n());
    let sched = synthesize(system, &window, &kalman, mu, &zero)?;
    let steady = steady_state(system, &window, &kalman, mu, &zero)?;
    let abar = system.closed_loop(&steady.k);

    let v_err: Vec<f64> = riccati::distance_curve(&sched.v, &steady.v);
    let w_err: Vec<f64> = riccati::distance_curve(&kalman.pred_cov, &kalman.w_inf);
    // powers Ā^{N−t−1}, index i = t − t0 runs 0..len
    let mut powers = vec![0.0; len];
    let mut pw = DMatrix::identity(system.n(), system.n());
    for i in (0..len).rev() {
        powers[i] = spectral_norm(&pw);
        pw = &pw * &abar;
    }

    let q = cost.q();
    let sigma_min = min_eigenvalue(q);
    let q_scale = spectral_norm(q);
    let applicable = sigma_min > 1e-12 * q_scale.max(1.0);
    let v_norm = spectral_norm(&steady.v);

    // tail sums Σ_{s=t+1}^{N} ‖Σ_s − Σ∞‖
    let mut tail = vec![0.0; len];
    let mut acc = 0.0;
    for i in (0..len).rev() {
        acc += w_err[i + 1];
        tail[i] = acc;
    }

    let (c1, c2, bound_satisfied, psi_bound, psi_ok) = if applicable {
        let c1 = v_norm.powf(1.5) / sigma_min.sqrt();
        let c2 = 4.0 * mu * q_scale * q_scale * v_norm / sigma_min;
        let slack = 1e-9 * (1.0 + v_norm);
        let ok = (0..len).all(|i| v_err[i] <= c1 * powers[i] + c2 * tail[i] + slack);

        let v_max = sched.v.iter().map(spectral_norm).fold(v_norm, f64::max);
        let psi = (v_max / sigma_min).sqrt();
        let mut prod = DMatrix::identity(system.n(), system.n());
        let mut psi_ok = true;
        for t in 0..len {
            prod = system.closed_loop(&sched.k[t]) * &prod;
            psi_ok &= spectral_norm(&prod) <= psi * (1.0 + 1e-9);
        }
        (Some(c1), Some(c2), ok, Some(psi), psi_ok)
    } else {
        (None, None, false, None, false)
    };

    let next_w: Vec<f64> = (0..len).map(|i| w_err[i + 1]).collect();
    let (fitted_c1, fitted_c2) = nnls2(&powers, &next_w, &v_err);

    Ok(ConvergenceDiagnostics {
        applicable,
        t0,
        n,
        v_error_curve: v_err,
        w_error_curve: w_err,
        closed_loop_power_curve: powers,
        c1,
        c2,
        bound_satisfied,
        fitted_c1,
        fitted_c2,
        psi_bound,
        psi_bound_satisfied: psi_ok,
    })
}

/// Two-variable nonnegative least squares `min ‖c1·a + c2·b − y‖`.
fn nnls2(a: &[f64], b: &[f64], y: &[f64]) -> (f64, f64) {
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, z)| x * z).sum::<f64>();
    let (aa, bb, ab) = (dot(a, a), dot(b, b), dot(a, b));
    let (ay, by) = (dot(a, y), dot(b, y));
    let loss = |c1: f64, c2: f64| {
        a.iter()
            .zip(b)
            .zip(y)
            .map(|((x, z), t)| (c1 * x + c2 * z - t).powi(2))
            .sum::<f64>()
    };
    let mut candidates = vec![(0.0, 0.0)];
    if aa > 0.0 {
        candidates.push(((ay / aa).max(0.0), 0.0));
    }
    if bb > 0.0 {
        candidates.push((0.0, (by / bb).max(0.0)));
    }
    let det = aa * bb - ab * ab;
    if det > 1e-300 {
        let c1 = (ay * bb - by * ab) / det;
        let c2 = (by * aa - ay * ab) / det;
        if c1 >= 0.0 && c2 >= 0.0 {
            candidates.push((c1, c2));
        }
    }
    candidates
        .into_iter()
        .min_by(|x, y| loss(x.0, x.1).total_cmp(&loss(y.0, y.1)))
        .unwrap_or((0.0, 0.0))
}

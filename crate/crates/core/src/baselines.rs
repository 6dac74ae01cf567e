//! Risk-sensitive exponential-cost (LEQG) baseline.
//!
//! Fully observed recursion, from `V_N = Q`:
//! `Ṽ = V(I − θWV)⁻¹`, `K = −(B'ṼB+R)⁻¹B'ṼA`,
//! `V⁻ = Q + A'ṼA − A'ṼB(B'ṼB+R)⁻¹B'ṼA`.
//! The recursion is well posed while `θ·λ_max(W^{1/2}VW^{1/2}) < 1`.
//!
//! The output-feedback variant pairs this with a θ-tilted covariance filter
//! and the usual coupling factor; it reduces to LQG as `θ → 0`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, inverse_guarded, psd_sqrt, symmetrize};
use crate::model::{CostSpec, LinearSystem};
use crate::riccati;

#[derive(Debug, Clone, PartialEq)]
pub enum LeqgMode {
    FullyObserved,
    GaussianOutput(DMatrix<f64>),
}

/// Output-feedback filter data for `t = 0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct LeqgFilter {
    /// Gains `L_t` applied to `y_t − Cx̌_t`.
    pub gains: Vec<DMatrix<f64>>,
    /// Tilt `(I − θΣ_{t|t}Q)⁻¹` applied after the update.
    pub tilt: Vec<DMatrix<f64>>,
    /// Tilted filtered covariances.
    pub tilted_cov: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeqgGains {
    pub theta: f64,
    /// `V_t` for `t = 0..=N`.
    pub v: Vec<DMatrix<f64>>,
    /// `K_t` for `t = 0..N`, acting on the state (or on the tilted estimate).
    pub k: Vec<DMatrix<f64>>,
    /// Backward stage at which the recursion broke down, or −1.
    pub valid_up_to: i64,
    pub filter: Option<LeqgFilter>,
    /// Effective output-feedback gains `K_t(I − θΣ̃_t(V_t − Q))⁻¹`.
    pub coupled_k: Option<Vec<DMatrix<f64>>>,
}

fn check_theta(theta: f64) -> Result<()> {
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(Error::invalid(
            "theta",
            format!("must be finite and positive, got {theta}"),
        ));
    }
    Ok(())
}

/// `θ·λ_max(F'MF)` for a symmetric square root `F`.
fn tilt_level(theta: f64, root: &DMatrix<f64>, m: &DMatrix<f64>) -> f64 {
    theta
        * linalg::sym_eigenvalues(&(root * m * root))
            .last()
            .copied()
            .unwrap_or(0.0)
}

/// Backward LEQG recursion over the horizon of `cost`.
pub fn synthesize_leqg(
    system: &LinearSystem,
    cost: &CostSpec,
    w: &DMatrix<f64>,
    theta: f64,
    mode: &LeqgMode,
) -> Result<LeqgGains> {
    check_theta(theta)?;
    cost.check_against(system)?;
    let n = system.n();
    if w.shape() != (n, n) {
        return Err(Error::Dimension(format!("W must be {n}x{n}")));
    }
    let (a, b, q, r) = (system.a(), system.b(), cost.q(), cost.r());
    let n_steps = cost.horizon();
    let w_root = psd_sqrt(w);
    let eye = DMatrix::<f64>::identity(n, n);

    let mut v = vec![DMatrix::zeros(0, 0); n_steps + 1];
    let mut k = vec![DMatrix::zeros(0, 0); n_steps];
    v[n_steps] = q.clone();
    for t in (1..=n_steps).rev() {
        if tilt_level(theta, &w_root, &v[t]) >= 1.0 {
            return Err(Error::Breakdown { stage: t, theta });
        }
        let vt = symmetrize(
            &(&v[t] * inverse_guarded(&(&eye - w * &v[t] * theta)).map_err(|e| e.at_stage(t))?),
        );
        let step = riccati::rde_step(&vt, a, b, q, r).map_err(|e| e.at_stage(t - 1))?;
        v[t - 1] = step.v;
        k[t - 1] = step.k;
    }
    if tilt_level(theta, &w_root, &v[0]) >= 1.0 {
        return Err(Error::Breakdown { stage: 0, theta });
    }

    let (filter, coupled_k) = match mode {
        LeqgMode::FullyObserved => (None, None),
        LeqgMode::GaussianOutput(s) => {
            let filter = leqg_filter(system, cost, w, s, theta)?;
            let mut coupled = Vec::with_capacity(n_steps);
            for t in 0..n_steps {
                let sig = &filter.tilted_cov[t];
                let coupling = &eye - sig * (&v[t] - q) * theta;
                let level = linalg::spectral_radius(&(sig * (&v[t] - q) * theta));
                if level >= 1.0 {
                    return Err(Error::Breakdown { stage: t, theta });
                }
                coupled.push(&k[t] * inverse_guarded(&coupling).map_err(|e| e.at_stage(t))?);
            }
            (Some(filter), Some(coupled))
        }
    };
    Ok(LeqgGains {
        theta,
        v,
        k,
        valid_up_to: -1,
        filter,
        coupled_k,
    })
}

/// Covariance-form filter with the θ-tilt, forward over `t = 0..=N`.
fn leqg_filter(
    system: &LinearSystem,
    cost: &CostSpec,
    w: &DMatrix<f64>,
    s: &DMatrix<f64>,
    theta: f64,
) -> Result<LeqgFilter> {
    let (a, c, q) = (system.a(), system.c(), cost.q());
    let n = system.n();
    if s.shape() != (system.m(), system.m()) {
        return Err(Error::Dimension("S shape".into()));
    }
    let eye = DMatrix::<f64>::identity(n, n);
    let q_root = psd_sqrt(q);
    let n_steps = cost.horizon();
    let mut pi = DMatrix::<f64>::zeros(n, n);
    let mut gains = Vec::with_capacity(n_steps + 1);
    let mut tilt = Vec::with_capacity(n_steps + 1);
    let mut tilted_cov = Vec::with_capacity(n_steps + 1);
    for t in 0..=n_steps {
        let innov = symmetrize(&(c * &pi * c.transpose() + s));
        let pct = &pi * c.transpose();
        let gain = linalg::solve_guarded(&innov, &pct.transpose())
            .map_err(|e| e.at_stage(t))?
            .transpose();
        let sigma = symmetrize(&(&pi - &gain * pct.transpose()));
        if tilt_level(theta, &q_root, &sigma) >= 1.0 {
            return Err(Error::Breakdown { stage: t, theta });
        }
        let tl = inverse_guarded(&(&eye - &sigma * q * theta)).map_err(|e| e.at_stage(t))?;
        let sig_t = symmetrize(&(&tl * &sigma));
        pi = symmetrize(&(a * &sig_t * a.transpose() + w));
        gains.push(gain);
        tilt.push(tl);
        tilted_cov.push(sig_t);
    }
    Ok(LeqgFilter {
        gains,
        tilt,
        tilted_cov,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BreakdownScan {
    pub theta: f64,
    /// True when no breakdown occurred below the search cap.
    pub capped: bool,
    pub iters: usize,
}

pub const THETA_FLOOR: f64 = 1e-12;
pub const DEFAULT_THETA_CAP: f64 = 1e3;

/// Largest `θ` (within `tol`) for which the recursion completes over the
/// horizon of `cost`.
pub fn find_breakdown_theta(
    system: &LinearSystem,
    cost: &CostSpec,
    w: &DMatrix<f64>,
    tol: f64,
    mode: &LeqgMode,
    cap: f64,
) -> Result<BreakdownScan> {
    if !(tol > 0.0) || !(cap > THETA_FLOOR) {
        return Err(Error::Config(
            "breakdown scan needs tol > 0 and cap > 1e-12".into(),
        ));
    }
    let completes = |theta: f64| -> Result<bool> {
        match synthesize_leqg(system, cost, w, theta, mode) {
            Ok(_) => Ok(true),
            Err(Error::Breakdown { .. }) => Ok(false),
            Err(e) => Err(e),
        }
    };
    if !completes(THETA_FLOOR)? {
        return Err(Error::Assumption(
            "exponential-cost recursion breaks down even at theta = 1e-12".into(),
        ));
    }
    let mut iters = 0;
    let mut lo = THETA_FLOOR;
    let mut hi = THETA_FLOOR;
    loop {
        let next = (hi * 10.0).min(cap);
        iters += 1;
        if completes(next)? {
            lo = next;
            if next >= cap {
                return Ok(BreakdownScan {
                    theta: cap,
                    capped: true,
                    iters,
                });
            }
            hi = next;
        } else {
            hi = next;
            break;
        }
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        iters += 1;
        if completes(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(BreakdownScan {
        theta: lo,
        capped: false,
        iters,
    })
}

/// Gains as an affine policy with zero offsets (the baseline ignores `w̄`).
pub fn zero_offsets(p: usize, n_steps: usize) -> Vec<DVector<f64>> {
    vec![DVector::zeros(p); n_steps]
}

//! Riccati difference steps, DARE fixed points and the difference identity.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, solve_guarded, spectral_norm, spectral_radius, symmetrize};

pub const DEFAULT_DARE_TOL: f64 = 1e-12;
pub const DEFAULT_DARE_MAX_ITERS: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiStepResult {
    pub v: DMatrix<f64>,
    pub k: DMatrix<f64>,
}

/// One backward step `V = A'V⁺A + Q − A'V⁺B(B'V⁺B+R)⁻¹B'V⁺A`, with the gain
/// `K = −(B'V⁺B+R)⁻¹B'V⁺A`.
pub fn rde_step(
    v_next: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q_stage: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<RiccatiStepResult> {
    let n = a.nrows();
    if v_next.shape() != (n, n) || q_stage.shape() != (n, n) || b.nrows() != n {
        return Err(Error::Dimension("rde_step operand shapes".into()));
    }
    if r.shape() != (b.ncols(), b.ncols()) {
        return Err(Error::Dimension("R does not match B".into()));
    }
    let btv = b.transpose() * v_next;
    let gram = &btv * b + r;
    let k = -solve_guarded(&gram, &(&btv * a))?;
    // A'V⁺A + A'V⁺B·K equals the subtracted form since K solves the normal equations.
    let v = a.transpose() * v_next * a + q_stage + a.transpose() * btv.transpose() * &k;
    Ok(RiccatiStepResult {
        v: symmetrize(&v),
        k,
    })
}

/// Backward pass over stage penalties: `q_seq[t]` is added when forming
/// `V_t`, `v_terminal` is `V_N`. Returns `(V_0..V_N, K_0..K_{N−1})` where
/// `K_t` is computed from `V_{t+1}`.
pub fn backward_pass(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q_seq: &[DMatrix<f64>],
    r: &DMatrix<f64>,
    v_terminal: &DMatrix<f64>,
) -> Result<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> {
    let n_steps = q_seq.len();
    let mut v = vec![DMatrix::zeros(0, 0); n_steps + 1];
    let mut k = vec![DMatrix::zeros(0, 0); n_steps];
    v[n_steps] = v_terminal.clone();
    for t in (0..n_steps).rev() {
        let step = rde_step(&v[t + 1], a, b, &q_seq[t], r).map_err(|e| e.at_stage(t))?;
        v[t] = step.v;
        k[t] = step.k;
    }
    Ok((v, k))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DareConfig {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for DareConfig {
    fn default() -> Self {
        Self {
            tol: DEFAULT_DARE_TOL,
            max_iters: DEFAULT_DARE_MAX_ITERS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DareSolution {
    #[serde(skip)]
    pub v: DMatrix<f64>,
    #[serde(skip)]
    pub k: DMatrix<f64>,
    pub rho: f64,
    pub iters: usize,
    /// `‖V − map(V)‖₂ / (1 + ‖V‖₂)` at the returned `V`.
    pub residual: f64,
}

/// Stabilizing DARE solution by backward iteration from `V = Q`.
pub fn solve_dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    config: DareConfig,
) -> Result<DareSolution> {
    let mut v = q.clone();
    let mut residual = f64::INFINITY;
    for iter in 1..=config.max_iters {
        let step = rde_step(&v, a, b, q, r)?;
        residual = spectral_norm(&(&step.v - &v)) / (1.0 + spectral_norm(&v));
        if !residual.is_finite() {
            break;
        }
        v = step.v;
        if residual <= config.tol {
            let fin = rde_step(&v, a, b, q, r)?;
            let residual = spectral_norm(&(&fin.v - &v)) / (1.0 + spectral_norm(&v));
            let rho = spectral_radius(&(a + b * &fin.k));
            return Ok(DareSolution {
                v,
                k: fin.k,
                rho,
                iters: iter,
                residual,
            });
        }
    }
    Err(Error::NonConvergence {
        iters: config.max_iters,
        residual,
    })
}

/// Largest violation of the Riccati difference identity
/// `V_{t−1} − V̄_{t−1} = (A+BL_t)'(V_t − V̄_t)(A+BK_t) + Q_{t−1} − Q̄_{t−1}`
/// along two trajectories produced by [`backward_pass`].
///
/// Indexing follows [`backward_pass`]: `k_seq[t−1]` and `l_seq[t−1]` are the
/// gains computed from `v_seq[t]` and `vbar_seq[t]`, and `q_seq[t−1]` is the
/// penalty added when forming `v_seq[t−1]`.
#[allow(clippy::too_many_arguments)]
pub fn riccati_difference_identity(
    v_seq: &[DMatrix<f64>],
    vbar_seq: &[DMatrix<f64>],
    k_seq: &[DMatrix<f64>],
    l_seq: &[DMatrix<f64>],
    q_seq: &[DMatrix<f64>],
    qbar_seq: &[DMatrix<f64>],
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> Result<f64> {
    let n_steps = k_seq.len();
    if v_seq.len() != n_steps + 1
        || vbar_seq.len() != n_steps + 1
        || l_seq.len() != n_steps
        || q_seq.len() < n_steps
        || qbar_seq.len() < n_steps
    {
        return Err(Error::Dimension(format!(
            "sequence lengths: V {}, V̄ {}, K {}, L {}, Q {}, Q̄ {}",
            v_seq.len(),
            vbar_seq.len(),
            k_seq.len(),
            l_seq.len(),
            q_seq.len(),
            qbar_seq.len()
        )));
    }
    let mut worst = 0.0_f64;
    for t in 1..=n_steps {
        let lhs = &v_seq[t - 1] - &vbar_seq[t - 1];
        let rhs = (a + b * &l_seq[t - 1]).transpose()
            * (&v_seq[t] - &vbar_seq[t])
            * (a + b * &k_seq[t - 1])
            + &q_seq[t - 1]
            - &qbar_seq[t - 1];
        worst = worst.max(spectral_norm(&(lhs - rhs)));
    }
    Ok(worst)
}

/// `‖V_t − V_∞‖₂` along a trajectory.
pub fn distance_curve(v_seq: &[DMatrix<f64>], v_inf: &DMatrix<f64>) -> Vec<f64> {
    v_seq
        .iter()
        .map(|v| linalg::spectral_norm(&(v - v_inf)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    #[test]
    fn zero_terminal_returns_stage_penalty() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        let b = DMatrix::from_column_slice(2, 1, &[0.125, 0.5]);
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let out = rde_step(&DMatrix::zeros(2, 2), &a, &b, &q, &s(1.0)).unwrap();
        assert!(linalg::max_abs_entry(&(out.v - q)) < 1e-15);
        assert!(linalg::max_abs_entry(&out.k) < 1e-15);
    }

    #[test]
    fn deadbeat_fixed_points() {
        let out = rde_step(&s(1.0), &s(1.0), &s(1.0), &s(1.0), &s(0.0)).unwrap();
        assert!((out.v[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((out.k[(0, 0)] + 1.0).abs() < 1e-15);
        let out = rde_step(&s(9.0), &s(1.0), &s(1.0), &s(9.0), &s(0.0)).unwrap();
        assert!((out.v[(0, 0)] - 9.0).abs() < 1e-12);
        assert!((out.k[(0, 0)] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn singular_gram_names_stage() {
        let q = vec![s(1.0); 3];
        let err = backward_pass(&s(1.0), &s(0.0), &q, &s(0.0), &s(1.0)).unwrap_err();
        assert!(
            matches!(err, Error::Singular { stage: Some(2), .. }),
            "{err}"
        );
    }

    #[test]
    fn dare_deadbeat() {
        let sol = solve_dare(&s(1.0), &s(1.0), &s(1.0), &s(0.0), DareConfig::default()).unwrap();
        assert!((sol.v[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((sol.k[(0, 0)] + 1.0).abs() < 1e-12);
        assert!(sol.rho < 1e-12);
    }

    #[test]
    fn dare_reports_non_convergence() {
        let cfg = DareConfig {
            tol: 1e-12,
            max_iters: 3,
        };
        let err = solve_dare(&s(0.99), &s(1.0), &s(1.0), &s(100.0), cfg).unwrap_err();
        assert!(matches!(err, Error::NonConvergence { iters: 3, .. }));
    }
}

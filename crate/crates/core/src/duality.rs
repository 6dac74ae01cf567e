//! Risk budget to multiplier: `ε ↔ ε̄` translation, bisection for `μ*`,
//! optimality certificates and the feasibility-threshold probe.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lqg::{self, KalmanSchedule};
use crate::lqr;
use crate::model::{CostSpec, LinearSystem, NoiseSpec, QWeightedMoments};

#[derive(Debug, Clone)]
pub enum Mode {
    Lqr,
    /// Output feedback with the filter schedule for the measurement noise.
    Lqg(Box<KalmanSchedule>),
}

/// One risk-constrained problem instance.
#[derive(Debug, Clone)]
pub struct RiskProblem {
    pub system: LinearSystem,
    pub cost: CostSpec,
    pub noise: NoiseSpec,
    pub moments: QWeightedMoments,
    pub x0: DVector<f64>,
    pub mode: Mode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Evaluation {
    pub mu: f64,
    pub j: f64,
    pub j_r: f64,
}

impl RiskProblem {
    pub fn lqr(
        system: LinearSystem,
        cost: CostSpec,
        noise: NoiseSpec,
        moments: QWeightedMoments,
        x0: DVector<f64>,
    ) -> Result<Self> {
        cost.check_against(&system)?;
        moments.check_against(&system)?;
        if x0.len() != system.n() {
            return Err(Error::Dimension("x0 length".into()));
        }
        Ok(Self {
            system,
            cost,
            noise,
            moments,
            x0,
            mode: Mode::Lqr,
        })
    }

    /// Output-feedback problem; the filter is built from the noise
    /// covariance and the measurement covariance `s`.
    pub fn lqg(
        system: LinearSystem,
        cost: CostSpec,
        noise: NoiseSpec,
        moments: QWeightedMoments,
        s: &DMatrix<f64>,
        x0: DVector<f64>,
    ) -> Result<Self> {
        let mut p = Self::lqr(system, cost, noise, moments, x0)?;
        let kalman = lqg::kalman_forward(&p.system, &p.moments.w, s, p.cost.horizon(), None)?
            .with_process_mean(p.moments.wbar.clone())?;
        p.mode = Mode::Lqg(Box::new(kalman));
        Ok(p)
    }

    pub fn horizon(&self) -> usize {
        self.cost.horizon()
    }

    /// `ε̄ = ε − Σ_t m4_t`.
    pub fn eps_bar(&self, eps: f64) -> f64 {
        match &self.mode {
            Mode::Lqr => eps_to_eps_bar(eps, &self.moments, self.horizon()),
            Mode::Lqg(k) => eps - lqg::fourth_moment_total(&self.cost, k),
        }
    }

    /// Inverse of [`RiskProblem::eps_bar`].
    pub fn eps_from_eps_bar(&self, eps_bar: f64) -> f64 {
        eps_bar - self.eps_bar(0.0)
    }

    /// Expected cost and reformulated risk of the optimal policy for `μ`.
    pub fn evaluate(&self, mu: f64) -> Result<Evaluation> {
        let (j, j_r) = match &self.mode {
            Mode::Lqr => {
                let sched = lqr::synthesize(&self.system, &self.cost, &self.moments, mu)?;
                (
                    lqr::evaluate_cost(&self.system, &self.cost, &self.moments, &sched, &self.x0)?,
                    lqr::evaluate_risk(&self.system, &self.cost, &self.moments, &sched, &self.x0)?,
                )
            }
            Mode::Lqg(kalman) => {
                let sched =
                    lqg::synthesize(&self.system, &self.cost, kalman, mu, &self.moments.wbar)?;
                (
                    lqg::evaluate_cost(&self.system, &self.cost, kalman, &sched, &self.x0)?,
                    lqg::evaluate_risk(
                        &self.system,
                        &self.cost,
                        &self.noise,
                        kalman,
                        &sched,
                        &self.x0,
                    )?,
                )
            }
        };
        if !j.is_finite() || !j_r.is_finite() {
            return Err(Error::Divergence { step: 0 });
        }
        Ok(Evaluation { mu, j, j_r })
    }

    /// Evaluations over a grid of multipliers, in grid order.
    pub fn evaluate_grid(&self, mus: &[f64]) -> Result<Vec<Evaluation>> {
        mus.par_iter().map(|&mu| self.evaluate(mu)).collect()
    }
}

/// `ε̄ = ε − N·m4` for time-invariant moments.
pub fn eps_to_eps_bar(eps: f64, moments: &QWeightedMoments, horizon: usize) -> f64 {
    eps - horizon as f64 * moments.m4
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BisectionConfig {
    pub mu_max: f64,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for BisectionConfig {
    fn default() -> Self {
        Self {
            mu_max: 1e8,
            tol: 1e-8,
            max_iters: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BisectionStatus {
    Interior,
    BoundaryZero,
    Infeasible,
}

/// The three optimality conditions for `(u*(μ*), μ*)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Certificates {
    /// The policy minimizes the Lagrangian; true whenever synthesis succeeded.
    pub lagrangian_minimized: bool,
    pub primal_feasible: bool,
    pub complementary_slackness: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BisectionResult {
    pub mu_star: f64,
    pub j: f64,
    pub j_r: f64,
    pub eps: f64,
    pub eps_bar: f64,
    pub status: BisectionStatus,
    /// `|μ*·(J_R − ε̄)|`.
    pub cs_residual: f64,
    pub iters: usize,
    pub certificates: Certificates,
}

fn result(
    eval: Evaluation,
    eps: f64,
    eps_bar: f64,
    status: BisectionStatus,
    iters: usize,
    tol: f64,
) -> BisectionResult {
    let slack = tol * (1.0 + eps_bar.abs());
    let cs = (eval.mu * (eval.j_r - eps_bar)).abs();
    let feasible = eval.j_r <= eps_bar + slack;
    BisectionResult {
        mu_star: eval.mu,
        j: eval.j,
        j_r: eval.j_r,
        eps,
        eps_bar,
        status,
        cs_residual: cs,
        iters,
        certificates: Certificates {
            lagrangian_minimized: true,
            primal_feasible: feasible,
            complementary_slackness: cs <= slack * eval.mu.max(1.0),
        },
    }
}

/// Smallest `μ ≥ 0` whose optimal policy meets `J_R ≤ ε̄`, exploiting the
/// monotone decrease of `J_R` in `μ`.
pub fn bisect(problem: &RiskProblem, eps: f64, config: BisectionConfig) -> Result<BisectionResult> {
    if !(config.mu_max > 0.0) || !(config.tol > 0.0) || config.max_iters == 0 {
        return Err(Error::Config(
            "bisection needs mu_max > 0, tol > 0, max_iters > 0".into(),
        ));
    }
    if !eps.is_finite() {
        return Err(Error::invalid("eps", "must be finite"));
    }
    let eps_bar = problem.eps_bar(eps);
    let slack = config.tol * (1.0 + eps_bar.abs());

    let at_zero = problem.evaluate(0.0)?;
    if at_zero.j_r <= eps_bar {
        return Ok(result(
            at_zero,
            eps,
            eps_bar,
            BisectionStatus::BoundaryZero,
            0,
            config.tol,
        ));
    }
    let at_max = problem.evaluate(config.mu_max)?;
    if at_max.j_r > eps_bar {
        return Ok(result(
            at_max,
            eps,
            eps_bar,
            BisectionStatus::Infeasible,
            0,
            config.tol,
        ));
    }

    // geometric bracket expansion keeps the interval tight for small μ*
    let mut iters = 0;
    let mut lo = 0.0;
    let mut hi_eval = at_max;
    let mut probe = 1.0_f64.min(config.mu_max);
    while probe < config.mu_max {
        iters += 1;
        let e = problem.evaluate(probe)?;
        if e.j_r <= eps_bar {
            hi_eval = e;
            break;
        }
        lo = probe;
        probe *= 10.0;
    }
    if probe >= config.mu_max {
        hi_eval = at_max;
    }

    // also push the complementary-slackness product below tol when the
    // arithmetic allows; the loop exits once the bracket stops shrinking
    let done = |e: &Evaluation| {
        let gap = (e.j_r - eps_bar).abs();
        gap <= slack && e.mu * gap <= config.tol
    };
    let mut hi = hi_eval.mu;
    while !done(&hi_eval) && iters < config.max_iters {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        iters += 1;
        let e = problem.evaluate(mid)?;
        if e.j_r <= eps_bar {
            hi = mid;
            hi_eval = e;
        } else {
            lo = mid;
        }
    }
    if (hi_eval.j_r - eps_bar).abs() > slack {
        return Err(Error::NonConvergence {
            iters,
            residual: (hi_eval.j_r - eps_bar).abs(),
        });
    }
    Ok(result(
        hi_eval,
        eps,
        eps_bar,
        BisectionStatus::Interior,
        iters,
        config.tol,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfimumEstimate {
    /// `J_R` at the largest probe; an upper estimate of the infimum of `ε̄`.
    pub eps_bar_inf_estimate: f64,
    pub mu_probe: f64,
    pub probes: Vec<Evaluation>,
    /// Successive probes agree within `1e-6` relative.
    pub reliable: bool,
}

pub const INFIMUM_PROBES: [f64; 3] = [1e6, 1e7, 1e8];

/// Large-`μ` probe of the smallest achievable reformulated risk.
pub fn eps_infimum_estimate(problem: &RiskProblem) -> Result<InfimumEstimate> {
    let probes = problem.evaluate_grid(&INFIMUM_PROBES)?;
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1.0);
    let reliable = probes.windows(2).all(|w| close(w[0].j_r, w[1].j_r));
    let last = probes[probes.len() - 1];
    Ok(InfimumEstimate {
        eps_bar_inf_estimate: last.j_r,
        mu_probe: last.mu,
        probes,
        reliable,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::compute_moments;

    fn toy(n_steps: usize) -> RiskProblem {
        let one = DMatrix::from_element(1, 1, 1.0);
        let sys = LinearSystem::fully_observed(one.clone(), one.clone()).unwrap();
        let cost = CostSpec::new(one.clone(), DMatrix::zeros(1, 1), n_steps).unwrap();
        let noise = NoiseSpec::bernoulli_shock(3.0).unwrap();
        let mom = compute_moments(&noise, &one, None).unwrap();
        RiskProblem::lqr(sys, cost, noise, mom, DVector::zeros(1)).unwrap()
    }

    #[test]
    fn toy_eps_bar_shift() {
        let p = toy(7);
        assert!((p.eps_bar(10.0) - (10.0 - 14.0)).abs() < 1e-12);
    }

    #[test]
    fn generous_budget_is_boundary_zero() {
        let p = toy(5);
        let j_r0 = p.evaluate(0.0).unwrap().j_r;
        let eps = j_r0 + 1.0 + 5.0 * 2.0;
        let r = bisect(&p, eps, BisectionConfig::default()).unwrap();
        assert_eq!(r.status, BisectionStatus::BoundaryZero);
        assert_eq!(r.mu_star, 0.0);
    }
}

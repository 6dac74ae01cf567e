//! Seeded closed-loop Monte Carlo.
//!
//! Process noise `w_t` (`t = 1..=N`) is drawn from stream `(seed, t,
//! Process)` and measurement noise `v_t` from `(seed, t, Measurement)`, so
//! every controller run with the same seed sees the same noise.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::baselines::LeqgFilter;
use crate::error::{Error, Result};
use crate::linalg;
use crate::lqg::KalmanSchedule;
use crate::model::{CostSpec, LinearSystem, NoiseSampler, NoiseSpec};
use crate::rng::Channel;

/// States beyond this magnitude are reported as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e150;

#[derive(Debug, Clone, PartialEq)]
pub enum AffineGains {
    TimeVarying {
        k: Vec<DMatrix<f64>>,
        l: Vec<DVector<f64>>,
    },
    Stationary {
        k: DMatrix<f64>,
        l: DVector<f64>,
    },
}

impl AffineGains {
    pub fn horizon(&self) -> Option<usize> {
        match self {
            AffineGains::TimeVarying { k, .. } => Some(k.len()),
            AffineGains::Stationary { .. } => None,
        }
    }

    fn input(&self, t: usize, x: &DVector<f64>) -> DVector<f64> {
        match self {
            AffineGains::TimeVarying { k, l } => &k[t] * x + &l[t],
            AffineGains::Stationary { k, l } => k * x + l,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Estimator {
    /// Time-varying Kalman gains.
    Kalman(KalmanSchedule),
    /// A constant filter gain.
    SteadyKalman(DMatrix<f64>),
    /// θ-tilted filter of the output-feedback exponential baseline.
    Leqg(LeqgFilter),
}

impl Estimator {
    fn horizon(&self) -> Option<usize> {
        match self {
            Estimator::Kalman(k) => Some(k.horizon()),
            Estimator::SteadyKalman(_) => None,
            Estimator::Leqg(f) => Some(f.gains.len() - 1),
        }
    }

    fn correct(
        &self,
        t: usize,
        c: &DMatrix<f64>,
        pred: &DVector<f64>,
        y: &DVector<f64>,
    ) -> DVector<f64> {
        let innov = y - c * pred;
        match self {
            Estimator::Kalman(k) => pred + &k.gains[t] * innov,
            Estimator::SteadyKalman(l) => pred + l * innov,
            Estimator::Leqg(f) => &f.tilt[t] * (pred + &f.gains[t] * innov),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ControlLaw {
    StateFeedback(AffineGains),
    OutputFeedback {
        estimator: Estimator,
        gains: AffineGains,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Controller {
    pub id: String,
    pub law: ControlLaw,
}

impl Controller {
    pub fn state_feedback(id: impl Into<String>, gains: AffineGains) -> Self {
        Self {
            id: id.into(),
            law: ControlLaw::StateFeedback(gains),
        }
    }

    pub fn output_feedback(
        id: impl Into<String>,
        estimator: Estimator,
        gains: AffineGains,
    ) -> Self {
        Self {
            id: id.into(),
            law: ControlLaw::OutputFeedback { estimator, gains },
        }
    }

    fn horizon(&self) -> Option<usize> {
        match &self.law {
            ControlLaw::StateFeedback(g) => g.horizon(),
            ControlLaw::OutputFeedback { estimator, gains } => {
                match (estimator.horizon(), gains.horizon()) {
                    (Some(a), Some(b)) => Some(a.min(b)),
                    (a, b) => a.or(b),
                }
            }
        }
    }
}

/// One closed-loop run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub controller_id: String,
    pub seed: u64,
    /// `x_0..x_N`.
    pub states: Vec<DVector<f64>>,
    /// `u_0..u_{N−1}`.
    pub inputs: Vec<DVector<f64>>,
    /// `w_1..w_N`; `process_noise[t−1] = w_t`.
    pub process_noise: Vec<DVector<f64>>,
    /// `y_0..y_{N−1}` under output feedback.
    pub outputs: Vec<DVector<f64>>,
    /// `v_0..v_{N−1}` under output feedback.
    pub measurement_noise: Vec<DVector<f64>>,
    /// Predictions `x̂_0..x̂_N` under output feedback.
    pub predictions: Vec<DVector<f64>>,
    /// Updated estimates `x̂_{0|0}..x̂_{N−1|N−1}` under output feedback.
    pub filtered: Vec<DVector<f64>>,
    /// `x_t'Qx_t` for `t = 0..=N`.
    pub stage_state_penalty: Vec<f64>,
    /// `u_t'Ru_t` for `t = 0..N`.
    pub stage_input_penalty: Vec<f64>,
}

impl SimulationTrace {
    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    pub fn total_cost(&self) -> f64 {
        self.stage_state_penalty.iter().sum::<f64>() + self.stage_input_penalty.iter().sum::<f64>()
    }

    /// Output innovations `y_t − Cx̂_t`.
    pub fn innovations(&self, c: &DMatrix<f64>) -> Vec<DVector<f64>> {
        self.outputs
            .iter()
            .zip(&self.predictions)
            .map(|(y, p)| y - c * p)
            .collect()
    }

    /// CSV columns: `t, x1..xn, u1..up, y1..ym, xhat1..xhatn, xpost1..xpostn,
    /// state_penalty, input_penalty`. Absent entries are left empty.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let n = self.states[0].len();
        let p = self.inputs.first().map_or(0, |u| u.len());
        let m = self.outputs.first().map_or(0, |y| y.len());
        let est = if self.predictions.is_empty() { 0 } else { n };
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=p).map(|i| format!("u{i}")));
        header.extend((1..=m).map(|i| format!("y{i}")));
        header.extend((1..=est).map(|i| format!("xhat{i}")));
        header.extend((1..=est).map(|i| format!("xpost{i}")));
        header.push("state_penalty".into());
        header.push("input_penalty".into());
        writeln!(out, "{}", header.join(","))?;
        let fmt_vec = |v: Option<&DVector<f64>>, d: usize| -> Vec<String> {
            match v {
                Some(v) => v.iter().map(|x| format!("{x:e}")).collect(),
                None => vec![String::new(); d],
            }
        };
        for t in 0..self.states.len() {
            let mut row = vec![t.to_string()];
            row.extend(fmt_vec(Some(&self.states[t]), n));
            row.extend(fmt_vec(self.inputs.get(t), p));
            row.extend(fmt_vec(self.outputs.get(t), m));
            row.extend(fmt_vec(self.predictions.get(t), est));
            row.extend(fmt_vec(self.filtered.get(t), est));
            row.push(format!("{:e}", self.stage_state_penalty[t]));
            row.push(
                self.stage_input_penalty
                    .get(t)
                    .map_or(String::new(), |x| format!("{x:e}")),
            );
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Plant, cost and noise samplers shared by many rollouts.
#[derive(Debug, Clone)]
pub struct Simulator {
    system: LinearSystem,
    cost: CostSpec,
    process: NoiseSampler,
    measurement: Option<NoiseSampler>,
    wbar: DVector<f64>,
    x0: DVector<f64>,
    horizon: usize,
}

impl Simulator {
    /// `measurement_cov` is the Gaussian measurement covariance `S`; it is
    /// required for output-feedback controllers.
    pub fn new(
        system: &LinearSystem,
        cost: &CostSpec,
        noise: &NoiseSpec,
        measurement_cov: Option<&DMatrix<f64>>,
        x0: &DVector<f64>,
        horizon: usize,
    ) -> Result<Self> {
        cost.check_against(system)?;
        if noise.dim() != system.n() || x0.len() != system.n() {
            return Err(Error::Dimension(
                "noise and x0 must have dimension n".into(),
            ));
        }
        if horizon == 0 {
            return Err(Error::invalid("horizon", "must be at least 1"));
        }
        let measurement = match measurement_cov {
            Some(s) => Some(NoiseSpec::zero_mean_gaussian(s.clone())?.sampler()),
            None => None,
        };
        if measurement_cov.is_some_and(|s| s.nrows() != system.m()) {
            return Err(Error::Dimension("S must be m x m".into()));
        }
        Ok(Self {
            system: system.clone(),
            cost: cost.clone(),
            process: noise.sampler(),
            measurement,
            wbar: noise.mean(),
            x0: x0.clone(),
            horizon,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn system(&self) -> &LinearSystem {
        &self.system
    }

    pub fn rollout(&self, controller: &Controller, seed: u64) -> Result<SimulationTrace> {
        if let Some(h) = controller.horizon() {
            if h < self.horizon {
                return Err(Error::Dimension(format!(
                    "controller '{}' covers {h} steps, simulation needs {}",
                    controller.id, self.horizon
                )));
            }
        }
        let sys = &self.system;
        let (a, b, c) = (sys.a(), sys.b(), sys.c());
        let (q, r) = (self.cost.q(), self.cost.r());
        let n_steps = self.horizon;
        let mut tr = SimulationTrace {
            controller_id: controller.id.clone(),
            seed,
            states: Vec::with_capacity(n_steps + 1),
            inputs: Vec::with_capacity(n_steps),
            process_noise: Vec::with_capacity(n_steps),
            outputs: Vec::new(),
            measurement_noise: Vec::new(),
            predictions: Vec::new(),
            filtered: Vec::new(),
            stage_state_penalty: Vec::with_capacity(n_steps + 1),
            stage_input_penalty: Vec::with_capacity(n_steps),
        };
        let mut x = self.x0.clone();
        // prior mean of x_0 is x0 itself
        let mut pred = self.x0.clone();
        for t in 0..n_steps {
            tr.stage_state_penalty.push(linalg::quad_form(q, &x));
            let u = match &controller.law {
                ControlLaw::StateFeedback(g) => g.input(t, &x),
                ControlLaw::OutputFeedback { estimator, gains } => {
                    let meas = self.measurement.as_ref().ok_or_else(|| {
                        Error::Config(format!(
                            "controller '{}' needs a measurement covariance",
                            controller.id
                        ))
                    })?;
                    let v = meas.sample_at(seed, t as u64, Channel::Measurement);
                    let y = c * &x + &v;
                    let post = estimator.correct(t, c, &pred, &y);
                    let u = gains.input(t, &post);
                    tr.outputs.push(y);
                    tr.measurement_noise.push(v);
                    tr.predictions.push(pred.clone());
                    pred = a * &post + b * &u + &self.wbar;
                    tr.filtered.push(post);
                    u
                }
            };
            tr.stage_input_penalty.push(linalg::quad_form(r, &u));
            let w = self.process.sample_at(seed, t as u64 + 1, Channel::Process);
            let next = a * &x + b * &u + &w;
            if next
                .iter()
                .any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT)
            {
                return Err(Error::Divergence { step: t + 1 });
            }
            tr.states.push(std::mem::replace(&mut x, next));
            tr.inputs.push(u);
            tr.process_noise.push(w);
        }
        tr.stage_state_penalty.push(linalg::quad_form(q, &x));
        tr.states.push(x);
        if matches!(controller.law, ControlLaw::OutputFeedback { .. }) {
            tr.predictions.push(pred);
        }
        Ok(tr)
    }
}

/// Free-function form of [`Simulator::rollout`].
#[allow(clippy::too_many_arguments)]
pub fn rollout(
    system: &LinearSystem,
    cost: &CostSpec,
    controller: &Controller,
    noise: &NoiseSpec,
    measurement_cov: Option<&DMatrix<f64>>,
    x0: &DVector<f64>,
    horizon: usize,
    seed: u64,
) -> Result<SimulationTrace> {
    Simulator::new(system, cost, noise, measurement_cov, x0, horizon)?.rollout(controller, seed)
}

/// Model-based conditional law of `x_t` given the information at `t−1`.
#[derive(Debug, Clone)]
pub enum PredictiveModel {
    /// Mean `Ax_{t−1} + Bu_{t−1} + w̄`, covariance `W`.
    FullyObserved { wbar: DVector<f64>, w: DMatrix<f64> },
    /// Kalman prediction rebuilt from the recorded outputs, covariance `Σ_t`.
    Kalman(KalmanSchedule),
}

/// `Σ_{t=1}^{N} Δ_t²` with `Δ_t = x_t'Qx_t − E(x_t'Qx_t | info at t−1)`.
pub fn trace_predictive_sum(
    trace: &SimulationTrace,
    system: &LinearSystem,
    cost: &CostSpec,
    model: &PredictiveModel,
) -> Result<f64> {
    let (a, b, q) = (system.a(), system.b(), cost.q());
    let n_steps = trace.horizon();
    let mut total = 0.0;
    match model {
        PredictiveModel::FullyObserved { wbar, w } => {
            let tr_qw = (q * w).trace();
            for t in 1..=n_steps {
                let pred = a * &trace.states[t - 1] + b * &trace.inputs[t - 1] + wbar;
                let d = trace.stage_state_penalty[t] - linalg::quad_form(q, &pred) - tr_qw;
                total += d * d;
            }
        }
        PredictiveModel::Kalman(kalman) => {
            if trace.outputs.len() < n_steps {
                return Err(Error::invalid(
                    "trace",
                    "output-feedback predictive variance needs recorded outputs",
                ));
            }
            if kalman.horizon() < n_steps {
                return Err(Error::Dimension(
                    "Kalman schedule shorter than trace".into(),
                ));
            }
            let mut pred = trace.states[0].clone();
            for t in 1..=n_steps {
                let post = kalman.correct(t - 1, &pred, &trace.outputs[t - 1])?;
                pred = a * post + b * &trace.inputs[t - 1] + &kalman.wbar;
                let d = trace.stage_state_penalty[t]
                    - linalg::quad_form(q, &pred)
                    - (q * &kalman.pred_cov[t]).trace();
                total += d * d;
            }
        }
    }
    Ok(total)
}

/// A sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            mean,
            std_error: (var / n).sqrt(),
        }
    }
}

pub fn estimate_predictive_variance(
    traces: &[SimulationTrace],
    system: &LinearSystem,
    cost: &CostSpec,
    model: &PredictiveModel,
) -> Result<Estimate> {
    if traces.is_empty() {
        return Err(Error::invalid("traces", "need at least one trace"));
    }
    let sums = traces
        .iter()
        .map(|t| trace_predictive_sum(t, system, cost, model))
        .collect::<Result<Vec<_>>>()?;
    Ok(Estimate::from_samples(&sums))
}

#[derive(Debug, Clone)]
pub struct EnsembleConfig {
    pub n_rollouts: usize,
    pub base_seed: u64,
    pub tail_thresholds: Vec<f64>,
    pub quantile_levels: Vec<f64>,
    /// Number of points kept in each exported CDF.
    pub cdf_points: usize,
    pub predictive: Option<PredictiveModel>,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            n_rollouts: 1,
            base_seed: 0,
            tail_thresholds: Vec::new(),
            quantile_levels: Vec::new(),
            cdf_points: 512,
            predictive: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleStats {
    pub controller_id: String,
    pub n_rollouts: usize,
    pub total_cost: Estimate,
    pub mean_state_penalty: f64,
    pub mean_input_penalty: f64,
    /// `(threshold, P(x'Qx ≤ threshold))` pooled over time and rollouts.
    pub state_cdf: Vec<(f64, f64)>,
    pub input_cdf: Vec<(f64, f64)>,
    /// `(τ, P(x'Qx > τ))` for the requested thresholds.
    pub tail_probs: Vec<(f64, f64)>,
    /// `(level, quantile)` of the pooled state penalties.
    pub state_quantiles: Vec<(f64, f64)>,
    pub predictive_variance: Option<Estimate>,
}

struct RolloutSummary {
    total: f64,
    state: Vec<f64>,
    input: Vec<f64>,
    predictive: Option<f64>,
}

/// Pooled empirical CDF reduced to at most `points` steps.
pub fn empirical_cdf(values: &[f64], points: usize) -> Vec<(f64, f64)> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let len = sorted.len();
    if len == 0 || points == 0 {
        return Vec::new();
    }
    let k = points.min(len);
    (1..=k)
        .map(|i| {
            let idx = i * len / k - 1;
            (sorted[idx], (idx + 1) as f64 / len as f64)
        })
        .collect()
}

pub fn tail_probability(values: &[f64], tau: f64) -> f64 {
    values.iter().filter(|&&x| x > tau).count() as f64 / values.len() as f64
}

/// Lower empirical quantile.
pub fn quantile(values: &[f64], level: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let idx = ((level * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    sorted[idx]
}

/// Per-controller statistics over `n_rollouts` CRN-paired runs; rollout `i`
/// of every controller uses seed `base_seed + i`. A diverging controller
/// reports its error without affecting the others.
pub fn ensemble(
    sim: &Simulator,
    controllers: &[Controller],
    config: &EnsembleConfig,
) -> Result<Vec<(String, Result<EnsembleStats>)>> {
    if config.n_rollouts == 0 {
        return Err(Error::invalid("n_rollouts", "must be at least 1"));
    }
    Ok(controllers
        .iter()
        .map(|c| (c.id.clone(), controller_stats(sim, c, config)))
        .collect())
}

fn controller_stats(
    sim: &Simulator,
    controller: &Controller,
    config: &EnsembleConfig,
) -> Result<EnsembleStats> {
    let cost = &sim.cost;
    let summaries = (0..config.n_rollouts as u64)
        .into_par_iter()
        .map(|i| {
            let tr = sim.rollout(controller, config.base_seed.wrapping_add(i))?;
            let predictive = match &config.predictive {
                Some(m) => Some(trace_predictive_sum(&tr, &sim.system, cost, m)?),
                None => None,
            };
            Ok(RolloutSummary {
                total: tr.total_cost(),
                state: tr.stage_state_penalty,
                input: tr.stage_input_penalty,
                predictive,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let totals: Vec<f64> = summaries.iter().map(|s| s.total).collect();
    let state: Vec<f64> = summaries
        .iter()
        .flat_map(|s| s.state.iter().copied())
        .collect();
    let input: Vec<f64> = summaries
        .iter()
        .flat_map(|s| s.input.iter().copied())
        .collect();
    let predictive = if config.predictive.is_some() {
        let xs: Vec<f64> = summaries.iter().filter_map(|s| s.predictive).collect();
        Some(Estimate::from_samples(&xs))
    } else {
        None
    };
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(EnsembleStats {
        controller_id: controller.id.clone(),
        n_rollouts: config.n_rollouts,
        total_cost: Estimate::from_samples(&totals),
        mean_state_penalty: mean(&state),
        mean_input_penalty: mean(&input),
        state_cdf: empirical_cdf(&state, config.cdf_points),
        input_cdf: empirical_cdf(&input, config.cdf_points),
        tail_probs: config
            .tail_thresholds
            .iter()
            .map(|&tau| (tau, tail_probability(&state, tau)))
            .collect(),
        state_quantiles: config
            .quantile_levels
            .iter()
            .map(|&lvl| (lvl, quantile(&state, lvl)))
            .collect(),
        predictive_variance: predictive,
    })
}

/// Two-column CSV `threshold,probability`.
pub fn write_cdf_csv<W: Write>(cdf: &[(f64, f64)], mut out: W) -> std::io::Result<()> {
    writeln!(out, "threshold,probability")?;
    for (x, p) in cdf {
        writeln!(out, "{x:e},{p:e}")?;
    }
    Ok(())
}

/// Lag-`k` sample autocorrelation of a scalar series.
pub fn autocorrelation(xs: &[f64], lag: usize) -> f64 {
    let n = xs.len();
    if n <= lag + 1 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    if var == 0.0 {
        return 0.0;
    }
    let cov: f64 = (lag..n)
        .map(|t| (xs[t] - mean) * (xs[t - lag] - mean))
        .sum();
    cov / var
}

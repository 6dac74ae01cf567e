use nalgebra::{DMatrix, DVector};
use risklq::baselines::{self, LeqgMode};
use risklq::duality::{self, BisectionConfig, BisectionStatus, Mode as ProblemMode, RiskProblem};
use risklq::export::ScheduleExport;
use risklq::lqg::{self, KalmanSchedule};
use risklq::sim::{
    self, AffineGains, Controller, EnsembleConfig, Estimator, PredictiveModel, Simulator,
};
use risklq::{linalg, lqr, Error, McConfig, QWeightedMoments, Scenario};
use serde::Serialize;
use serde_json::{json, Value};

use crate::output::{config_hash, label, rows, vec, Sink};
use crate::{BisectArgs, BreakdownArgs, CliError, Common, Mode, SimulateArgs, SynthesizeArgs};

pub const DEFAULT_SCENARIO: &str = "builtin:double_integrator_wind";

pub fn load_scenario(common: &Common, default: &str) -> Result<Scenario, CliError> {
    let spec = common.scenario.as_deref().unwrap_or(default);
    let sc = Scenario::resolve(spec)?;
    Ok(match common.horizon {
        Some(h) => sc.with_horizon(h)?,
        None => sc,
    })
}

pub fn open_sink<A: Serialize>(
    command: &str,
    args: &A,
    common: &Common,
    sc: &Scenario,
) -> Result<Sink, CliError> {
    let hash = config_hash(command, args, sc.file())?;
    Sink::new(&common.out, hash, common.seed)
}

pub fn moments(sc: &Scenario, common: &Common) -> Result<QWeightedMoments, CliError> {
    let mc = McConfig {
        samples: common.mc_samples,
        seed: common.seed,
    };
    Ok(risklq::compute_moments(&sc.noise, sc.cost.q(), Some(mc))?)
}

pub fn measurement(sc: &Scenario) -> Result<&DMatrix<f64>, CliError> {
    sc.measurement.as_ref().ok_or_else(|| {
        Error::Config(format!(
            "scenario '{}' has no [measurement] section; output feedback needs S",
            sc.name
        ))
        .into()
    })
}

fn require_theta(theta: Option<f64>) -> Result<f64, CliError> {
    theta.ok_or_else(|| Error::Config("mode leqg needs --theta".into()).into())
}

fn leqg_mode(sc: &Scenario, mode: Mode) -> LeqgMode {
    match (mode, &sc.measurement) {
        (Mode::Lqr, _) | (_, None) => LeqgMode::FullyObserved,
        (_, Some(s)) => LeqgMode::GaussianOutput(s.clone()),
    }
}

pub fn problem(sc: &Scenario, mom: QWeightedMoments, mode: Mode) -> Result<RiskProblem, CliError> {
    let (sys, cost, noise, x0) = (
        sc.system.clone(),
        sc.cost.clone(),
        sc.noise.clone(),
        sc.x0.clone(),
    );
    Ok(match mode {
        Mode::Lqr => RiskProblem::lqr(sys, cost, noise, mom, x0)?,
        Mode::Lqg => RiskProblem::lqg(sys, cost, noise, mom, measurement(sc)?, x0)?,
        Mode::Leqg => {
            return Err(Error::Unsupported("this command needs mode lqr or lqg".into()).into())
        }
    })
}

fn kalman(sc: &Scenario, mom: &QWeightedMoments) -> Result<KalmanSchedule, CliError> {
    Ok(lqg::kalman_forward(
        &sc.system,
        &mom.w,
        measurement(sc)?,
        sc.cost.horizon(),
        None,
    )?
    .with_process_mean(mom.wbar.clone())?)
}

pub fn leqg_controller(sc: &Scenario, mode: Mode, theta: f64) -> Result<Controller, CliError> {
    let lm = leqg_mode(sc, mode);
    let g = baselines::synthesize_leqg(&sc.system, &sc.cost, &sc.noise.covariance(), theta, &lm)?;
    let zeros = baselines::zero_offsets(sc.system.p(), sc.cost.horizon());
    let id = label("leqg_theta_", theta);
    Ok(match (g.filter, g.coupled_k) {
        (Some(f), Some(k)) => Controller::output_feedback(
            id,
            Estimator::Leqg(f),
            AffineGains::TimeVarying { k, l: zeros },
        ),
        _ => Controller::state_feedback(id, AffineGains::TimeVarying { k: g.k, l: zeros }),
    })
}

/// Risk-aware controllers for every `μ`, plus the baseline when `theta` is
/// given. Returns the filter schedule used under output feedback.
pub fn controllers(
    sc: &Scenario,
    mom: &QWeightedMoments,
    mode: Mode,
    mus: &[f64],
    theta: Option<f64>,
) -> Result<(Vec<Controller>, Option<KalmanSchedule>), CliError> {
    let mut out = Vec::new();
    let mut filter = None;
    match mode {
        Mode::Lqr => {
            for &mu in mus {
                let s = lqr::synthesize(&sc.system, &sc.cost, mom, mu)?;
                out.push(Controller::state_feedback(
                    label("mu_", mu),
                    AffineGains::TimeVarying { k: s.k, l: s.l },
                ));
            }
        }
        Mode::Lqg => {
            let kf = kalman(sc, mom)?;
            for &mu in mus {
                let s = lqg::synthesize(&sc.system, &sc.cost, &kf, mu, &mom.wbar)?;
                out.push(Controller::output_feedback(
                    label("mu_", mu),
                    Estimator::Kalman(kf.clone()),
                    AffineGains::TimeVarying { k: s.k, l: s.l },
                ));
            }
            filter = Some(kf);
        }
        Mode::Leqg => {
            require_theta(theta)?;
        }
    }
    if let Some(theta) = theta {
        out.push(leqg_controller(sc, mode, theta)?);
    }
    Ok((out, filter))
}

fn assumption_check(
    sc: &Scenario,
    mode: Mode,
) -> Result<(risklq::AssumptionReport, Vec<String>), CliError> {
    let s = match mode {
        Mode::Lqr => None,
        Mode::Lqg => Some(measurement(sc)?),
        Mode::Leqg => sc.measurement.as_ref(),
    };
    let report = risklq::validate_assumptions(&sc.system, &sc.cost, &sc.noise.covariance(), s)?;
    // stabilizability and a definite measurement covariance are hard
    // requirements; the rest only void the stability guarantee
    if !report.ab_stabilizable {
        return Err(Error::Assumption("(A,B) not stabilizable".into()).into());
    }
    if report.s_positive_definite == Some(false) {
        return Err(Error::Assumption("S not positive definite".into()).into());
    }
    let warnings = report.failures().into_iter().map(String::from).collect();
    Ok((report, warnings))
}

fn write_schedule(sink: &mut Sink, name: &str, mut export: ScheduleExport) -> Result<(), CliError> {
    export.provenance = Some(sink.provenance.clone());
    let text = export.to_json()?;
    sink.raw(name, text.as_bytes())
}

pub fn synthesize(args: &SynthesizeArgs) -> Result<(), CliError> {
    let common = &args.common;
    let sc = load_scenario(common, DEFAULT_SCENARIO)?;
    let mut sink = open_sink("synthesize", args, common, &sc)?;
    let (report, warnings) = assumption_check(&sc, common.mode)?;
    let sys = &sc.system;
    let mut results = Vec::new();
    match common.mode {
        Mode::Leqg => {
            let theta = require_theta(args.theta)?;
            let lm = leqg_mode(&sc, common.mode);
            let g = baselines::synthesize_leqg(sys, &sc.cost, &sc.noise.covariance(), theta, &lm)?;
            let k0 = g.coupled_k.as_ref().unwrap_or(&g.k)[0].clone();
            let file = format!("schedule_{}.json", label("theta_", theta));
            write_schedule(&mut sink, &file, ScheduleExport::from_leqg(&g))?;
            results.push(json!({
                "theta": theta,
                "schedule_file": file,
                "initial_gain": rows(&k0),
                "rho": linalg::spectral_radius(&sys.closed_loop(&k0)),
            }));
        }
        mode => {
            let mom = moments(&sc, common)?;
            let prob = problem(&sc, mom.clone(), mode)?;
            for (i, &mu) in args.mu.iter().enumerate() {
                let eval = prob.evaluate(mu)?;
                let file = format!("schedule_{i}_{}.json", label("mu_", mu));
                let steady = match &prob.mode {
                    ProblemMode::Lqr => {
                        let s = lqr::synthesize(sys, &sc.cost, &mom, mu)?;
                        write_schedule(&mut sink, &file, ScheduleExport::from_lqr(&s))?;
                        let st = lqr::steady_state(sys, &sc.cost, &mom, mu)?;
                        json!({
                            "K": rows(&st.k), "l": vec(&st.l), "V": rows(&st.v), "rho": st.rho,
                            "dare_iters": st.dare_iters, "dare_residual": st.dare_residual,
                        })
                    }
                    ProblemMode::Lqg(kf) => {
                        let s = lqg::synthesize(sys, &sc.cost, kf, mu, &mom.wbar)?;
                        write_schedule(&mut sink, &file, ScheduleExport::from_lqg(&s))?;
                        let st = lqg::steady_state(sys, &sc.cost, kf, mu, &mom.wbar)?;
                        json!({
                            "K": rows(&st.k), "l": vec(&st.l), "V": rows(&st.v), "rho": st.rho,
                            "filter_gain": rows(&kf.gain_inf), "filter_rho": kf.filter_rho(),
                        })
                    }
                };
                results.push(json!({
                    "mu": mu,
                    "schedule_file": file,
                    "expected_cost": eval.j,
                    "risk": eval.j_r,
                    "steady": steady,
                }));
            }
        }
    }
    sink.json(
        "synthesize.json",
        &json!({
            "command": "synthesize",
            "scenario": sc.name,
            "mode": common.mode,
            "horizon": sc.cost.horizon(),
            "assumptions": report,
            "warnings": warnings,
            "results": results,
        }),
    )
}

pub fn bisect(args: &BisectArgs) -> Result<(), CliError> {
    let common = &args.common;
    let sc = load_scenario(common, DEFAULT_SCENARIO)?;
    let mut sink = open_sink("bisect", args, common, &sc)?;
    let prob = problem(&sc, moments(&sc, common)?, common.mode)?;
    let cfg = BisectionConfig {
        mu_max: args.mu_max,
        tol: args.tol,
        max_iters: args.max_iters,
    };
    let res = duality::bisect(&prob, args.eps, cfg)?;
    let infimum = if res.status == BisectionStatus::Infeasible {
        Some(duality::eps_infimum_estimate(&prob)?)
    } else {
        None
    };
    sink.json(
        "bisect.json",
        &json!({
            "command": "bisect",
            "scenario": sc.name,
            "mode": common.mode,
            "horizon": sc.cost.horizon(),
            "config": cfg,
            "result": res,
            "infimum": infimum,
        }),
    )?;
    if res.status == BisectionStatus::Infeasible {
        return Err(Error::Infeasible(format!(
            "risk at mu = {} is {} > eps_bar = {}",
            res.mu_star, res.j_r, res.eps_bar
        ))
        .into());
    }
    Ok(())
}

pub fn evaluate_risk(args: &SynthesizeArgs) -> Result<(), CliError> {
    let common = &args.common;
    let sc = load_scenario(common, DEFAULT_SCENARIO)?;
    let mut sink = open_sink("evaluate-risk", args, common, &sc)?;
    let mom = moments(&sc, common)?;
    let rows_out: Vec<Value> = match common.mode {
        Mode::Leqg => {
            if sc.measurement.is_some() {
                return Err(Error::Unsupported(
                    "closed-form risk of the output-feedback exponential baseline".into(),
                )
                .into());
            }
            let theta = require_theta(args.theta)?;
            let g = baselines::synthesize_leqg(
                &sc.system,
                &sc.cost,
                &mom.w,
                theta,
                &LeqgMode::FullyObserved,
            )?;
            let l = baselines::zero_offsets(sc.system.p(), sc.cost.horizon());
            let j = lqr::evaluate_cost_affine(&sc.system, &sc.cost, &mom, &g.k, &l, &sc.x0)?;
            let j_r = lqr::evaluate_risk_affine(&sc.system, &sc.cost, &mom, &g.k, &l, &sc.x0)?;
            let total_m4 = sc.cost.horizon() as f64 * mom.m4;
            vec![
                json!({ "theta": theta, "expected_cost": j, "risk": j_r, "predictive_variance": j_r + total_m4 }),
            ]
        }
        mode => {
            let prob = problem(&sc, mom, mode)?;
            let offset = prob.eps_from_eps_bar(0.0);
            prob.evaluate_grid(&args.mu)?
                .into_iter()
                .map(|e| {
                    json!({
                        "mu": e.mu, "expected_cost": e.j, "risk": e.j_r,
                        "predictive_variance": e.j_r + offset,
                    })
                })
                .collect()
        }
    };
    sink.json(
        "evaluate_risk.json",
        &json!({
            "command": "evaluate-risk",
            "scenario": sc.name,
            "mode": common.mode,
            "horizon": sc.cost.horizon(),
            "evaluations": rows_out,
        }),
    )
}

pub fn simulator(sc: &Scenario, mode: Mode) -> Result<Simulator, CliError> {
    let s = match mode {
        Mode::Lqr => None,
        Mode::Lqg => Some(measurement(sc)?),
        Mode::Leqg => sc.measurement.as_ref(),
    };
    Ok(Simulator::new(
        &sc.system,
        &sc.cost,
        &sc.noise,
        s,
        &sc.x0,
        sc.cost.horizon(),
    )?)
}

pub fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let common = &args.common;
    let sc = load_scenario(common, DEFAULT_SCENARIO)?;
    let mut sink = open_sink("simulate", args, common, &sc)?;
    let mom = moments(&sc, common)?;
    let (ctrls, filter) = controllers(&sc, &mom, common.mode, &args.mu, args.theta)?;
    let sim = simulator(&sc, common.mode)?;
    let predictive = match (common.mode, filter) {
        (Mode::Lqr, _) => Some(PredictiveModel::FullyObserved {
            wbar: mom.wbar.clone(),
            w: mom.w.clone(),
        }),
        (_, Some(kf)) => Some(PredictiveModel::Kalman(kf)),
        (Mode::Leqg, None) if sc.measurement.is_none() => Some(PredictiveModel::FullyObserved {
            wbar: mom.wbar.clone(),
            w: mom.w.clone(),
        }),
        _ => None,
    };
    let cfg = EnsembleConfig {
        n_rollouts: args.rollouts,
        base_seed: common.seed,
        quantile_levels: vec![0.5, 0.9, 0.95, 0.99],
        predictive,
        ..EnsembleConfig::default()
    };
    let stats = sim::ensemble(&sim, &ctrls, &cfg)?;
    let mut first_error = None;
    let mut summary = Vec::new();
    for ((id, res), ctrl) in stats.into_iter().zip(&ctrls) {
        match res {
            Ok(st) => {
                let trace = sim.rollout(ctrl, common.seed)?;
                sink.csv(&format!("trace_{id}.csv"), |w| trace.write_csv(w))?;
                sink.csv(&format!("cdf_state_{id}.csv"), |w| {
                    sim::write_cdf_csv(&st.state_cdf, w)
                })?;
                sink.csv(&format!("cdf_input_{id}.csv"), |w| {
                    sim::write_cdf_csv(&st.input_cdf, w)
                })?;
                summary.push(json!({ "controller": id, "stats": st }));
            }
            Err(e) => {
                let err = CliError::Lib(e);
                let (category, _) = err.category();
                summary.push(json!({
                    "controller": id,
                    "error": { "category": category, "message": err.to_string() },
                }));
                first_error.get_or_insert(err);
            }
        }
    }
    sink.json(
        "simulate.json",
        &json!({
            "command": "simulate",
            "scenario": sc.name,
            "mode": common.mode,
            "horizon": sc.cost.horizon(),
            "rollouts": args.rollouts,
            "seeds": { "first": common.seed, "count": args.rollouts },
            "controllers": summary,
        }),
    )?;
    match first_error {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

pub fn breakdown_scan(args: &BreakdownArgs) -> Result<(), CliError> {
    let common = &args.common;
    let sc = load_scenario(common, DEFAULT_SCENARIO)?;
    let mut sink = open_sink("breakdown-scan", args, common, &sc)?;
    let lm = match common.mode {
        Mode::Lqg => LeqgMode::GaussianOutput(measurement(&sc)?.clone()),
        mode => leqg_mode(&sc, mode),
    };
    let scan = baselines::find_breakdown_theta(
        &sc.system,
        &sc.cost,
        &sc.noise.covariance(),
        args.tol,
        &lm,
        args.theta,
    )?;
    sink.json(
        "breakdown.json",
        &json!({
            "command": "breakdown-scan",
            "scenario": sc.name,
            "output_feedback": matches!(lm, LeqgMode::GaussianOutput(_)),
            "horizon": sc.cost.horizon(),
            "tol": args.tol,
            "cap": args.theta,
            "scan": scan,
        }),
    )
}

/// Zero-mean, zero-covariance Gaussian of dimension `n`.
pub fn zero_noise(n: usize) -> Result<risklq::NoiseSpec, CliError> {
    Ok(risklq::NoiseSpec::gaussian(
        DVector::zeros(n),
        DMatrix::zeros(n, n),
    )?)
}

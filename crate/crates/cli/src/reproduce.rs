//! Figure bundles: single CRN trajectory per controller, plot-ready CSV.

use std::io::Write;

use risklq::sim::{self, SimulationTrace};
use risklq::Error;
use serde_json::json;

use crate::commands::{controllers, load_scenario, moments, open_sink, simulator, zero_noise};
use crate::{CliError, Mode, ReproduceArgs};

struct Figure {
    scenario: &'static str,
    mode: Mode,
    mus: &'static [f64],
    theta: Option<f64>,
}

const FIGURES: [&str; 5] = ["fig2", "fig3", "fig4", "fig5", "fig6"];

fn figure(id: &str) -> Result<Figure, CliError> {
    let fully_observed = Figure {
        scenario: "builtin:double_integrator_wind",
        mode: Mode::Lqr,
        mus: &[1.0],
        theta: Some(0.0012),
    };
    Ok(match id {
        "fig2" | "fig3" | "fig4" => fully_observed,
        "fig5" => Figure {
            scenario: "builtin:double_integrator_lqg",
            mode: Mode::Lqg,
            mus: &[1.0],
            theta: Some(1e-3),
        },
        "fig6" => Figure {
            scenario: "builtin:double_integrator_lqg",
            mode: Mode::Lqg,
            mus: &[0.5, 100.0],
            theta: None,
        },
        other => {
            return Err(Error::Config(format!(
                "unknown figure '{other}' (known: {})",
                FIGURES.join(", ")
            ))
            .into())
        }
    })
}

fn columns(
    w: &mut Vec<u8>,
    traces: &[SimulationTrace],
    fields: &[(&str, fn(&SimulationTrace, usize) -> Option<f64>)],
) -> std::io::Result<()> {
    let mut header = vec!["t".to_string()];
    for (name, _) in fields {
        header.extend(traces.iter().map(|t| format!("{name}_{}", t.controller_id)));
    }
    writeln!(w, "{}", header.join(","))?;
    let len = traces.first().map_or(0, |t| t.states.len());
    for t in 0..len {
        let mut row = vec![t.to_string()];
        for (_, get) in fields {
            row.extend(
                traces
                    .iter()
                    .map(|tr| get(tr, t).map_or(String::new(), |x| format!("{x:e}"))),
            );
        }
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

fn cdf_long(w: &mut Vec<u8>, series: &[(String, Vec<f64>)]) -> std::io::Result<()> {
    writeln!(w, "controller,threshold,probability")?;
    for (id, xs) in series {
        for (x, p) in sim::empirical_cdf(xs, xs.len()) {
            writeln!(w, "{id},{x:e},{p:e}")?;
        }
    }
    Ok(())
}

fn state_penalty(tr: &SimulationTrace, t: usize) -> Option<f64> {
    tr.stage_state_penalty.get(t).copied()
}

fn position(tr: &SimulationTrace, t: usize) -> Option<f64> {
    tr.states.get(t).map(|x| x[0])
}

fn first_input(tr: &SimulationTrace, t: usize) -> Option<f64> {
    tr.inputs.get(t).map(|u| u[0])
}

pub fn run(args: &ReproduceArgs) -> Result<(), CliError> {
    let fig = figure(&args.figure)?;
    let common = &args.common;
    let mut sc = load_scenario(common, fig.scenario)?;
    if args.zero_noise {
        sc = sc.with_noise(zero_noise(sc.system.n())?)?;
    }
    let mut sink = open_sink(&format!("reproduce {}", args.figure), args, common, &sc)?;
    let mom = moments(&sc, common)?;
    let mut mus = vec![0.0];
    mus.extend(
        args.mu
            .as_deref()
            .unwrap_or(fig.mus)
            .iter()
            .filter(|&&m| m != 0.0),
    );
    let theta = args.theta.or(fig.theta);
    let (ctrls, _) = controllers(&sc, &mom, fig.mode, &mus, theta)?;
    let sim = simulator(&sc, fig.mode)?;
    let traces = ctrls
        .iter()
        .map(|c| sim.rollout(c, common.seed))
        .collect::<risklq::Result<Vec<_>>>()?;

    let name = args.figure.as_str();
    match name {
        "fig2" | "fig5" => {
            sink.csv(&format!("{name}.csv"), |w| {
                columns(w, &traces, &[("state_penalty", state_penalty)])
            })?;
        }
        "fig4" => {
            sink.csv("fig4.csv", |w| {
                columns(w, &traces, &[("x1", position), ("u1", first_input)])
            })?;
        }
        "fig3" => {
            let series: Vec<_> = traces
                .iter()
                .map(|t| (t.controller_id.clone(), t.stage_state_penalty.clone()))
                .collect();
            sink.csv("fig3.csv", |w| cdf_long(w, &series))?;
        }
        _ => {
            let state: Vec<_> = traces
                .iter()
                .map(|t| (t.controller_id.clone(), t.stage_state_penalty.clone()))
                .collect();
            let input: Vec<_> = traces
                .iter()
                .map(|t| (t.controller_id.clone(), t.stage_input_penalty.clone()))
                .collect();
            sink.csv("fig6_state.csv", |w| cdf_long(w, &state))?;
            sink.csv("fig6_input.csv", |w| cdf_long(w, &input))?;
        }
    }

    // tail probabilities at the risk-neutral quantiles
    let reference = &traces[0].stage_state_penalty;
    let taus: Vec<(f64, f64)> = [0.95, 0.99]
        .iter()
        .map(|&lvl| (lvl, sim::quantile(reference, lvl)))
        .collect();
    let summary: Vec<_> = traces
        .iter()
        .map(|t| {
            let n = t.stage_input_penalty.len() as f64;
            json!({
                "controller": t.controller_id,
                "seed": t.seed,
                "mean_state_penalty": t.stage_state_penalty.iter().sum::<f64>()
                    / t.stage_state_penalty.len() as f64,
                "mean_input_penalty": t.stage_input_penalty.iter().sum::<f64>() / n,
                "tail_at_reference_quantiles": taus
                    .iter()
                    .map(|&(lvl, tau)| json!({
                        "level": lvl, "threshold": tau,
                        "probability": sim::tail_probability(&t.stage_state_penalty, tau),
                    }))
                    .collect::<Vec<_>>(),
            })
        })
        .collect();
    let files = sink.files().to_vec();
    sink.json(
        &format!("{name}.json"),
        &json!({
            "command": "reproduce",
            "figure": name,
            "scenario": sc.name,
            "horizon": sc.cost.horizon(),
            "zero_noise": args.zero_noise,
            "mus": mus,
            "theta": theta,
            "seed": common.seed,
            "files": files,
            "controllers": summary,
        }),
    )
}

//! JSON gain-schedule format for external controllers.
//!
//! ```json
//! { "format": "risklq-gain-schedule", "version": 1, "kind": "lqr",
//!   "mu": 1.0, "theta": null, "n": 4, "p": 2,
//!   "stages": [ { "t": 0, "K": [[...], [...]], "l": [...], "V": [[...], ...] }, ... ] }
//! ```
//!
//! Matrices are lists of rows. At stage `t` the controller applies
//! `u_t = K·x_t + l` (to the filtered estimate under output feedback); `V` is
//! the cost-to-go matrix paired with that stage.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::baselines::LeqgGains;
use crate::error::{Error, Result};
use crate::linalg::{matrix_from_rows, matrix_to_rows};
use crate::lqg::LqgGainSchedule;
use crate::lqr::GainSchedule;
use crate::sim::AffineGains;

pub const FORMAT_TAG: &str = "risklq-gain-schedule";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageExport {
    pub t: usize,
    #[serde(rename = "K")]
    pub k: Vec<Vec<f64>>,
    pub l: Vec<f64>,
    #[serde(rename = "V")]
    pub v: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleExport {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub mu: Option<f64>,
    pub theta: Option<f64>,
    pub n: usize,
    pub p: usize,
    pub stages: Vec<StageExport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

/// Identifies the run that produced an artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
}

fn stage(t: usize, k: &DMatrix<f64>, l: &DVector<f64>, v: &DMatrix<f64>) -> StageExport {
    StageExport {
        t,
        k: matrix_to_rows(k),
        l: l.iter().copied().collect(),
        v: matrix_to_rows(v),
    }
}

fn header(kind: &str, mu: Option<f64>, theta: Option<f64>, k: &[DMatrix<f64>]) -> ScheduleExport {
    let (p, n) = k.first().map_or((0, 0), |k| k.shape());
    ScheduleExport {
        format: FORMAT_TAG.into(),
        version: FORMAT_VERSION,
        kind: kind.into(),
        mu,
        theta,
        n,
        p,
        stages: Vec::with_capacity(k.len()),
        provenance: None,
    }
}

impl ScheduleExport {
    /// Stage `t` carries `K_t, l_t` and `V_{t+1}`, the matrix they were
    /// computed from.
    pub fn from_lqr(s: &GainSchedule) -> Self {
        let mut out = header("lqr", Some(s.mu), None, &s.k);
        out.stages = (0..s.horizon())
            .map(|t| stage(t, &s.k[t], &s.l[t], &s.v[t + 1]))
            .collect();
        out
    }

    pub fn from_lqg(s: &LqgGainSchedule) -> Self {
        let mut out = header("lqg", Some(s.mu), None, &s.k);
        out.stages = (0..s.horizon())
            .map(|t| stage(t, &s.k[t], &s.l[t], &s.v[t]))
            .collect();
        out
    }

    pub fn from_leqg(g: &LeqgGains) -> Self {
        let gains = g.coupled_k.as_ref().unwrap_or(&g.k);
        let mut out = header("leqg", None, Some(g.theta), gains);
        let zero = DVector::zeros(out.p);
        out.stages = (0..gains.len())
            .map(|t| stage(t, &gains[t], &zero, &g.v[t + 1]))
            .collect();
        out
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let out: Self =
            serde_json::from_str(text).map_err(|e| Error::parse("schedule", e.to_string()))?;
        if out.format != FORMAT_TAG {
            return Err(Error::parse("format", format!("expected '{FORMAT_TAG}'")));
        }
        for (i, s) in out.stages.iter().enumerate() {
            let rows_ok = s.k.len() == out.p && s.k.iter().all(|r| r.len() == out.n);
            if s.t != i || !rows_ok || s.l.len() != out.p {
                return Err(Error::parse(
                    format!("stages[{i}]"),
                    "inconsistent shape or index",
                ));
            }
        }
        Ok(out)
    }

    /// The affine policy encoded by the stages.
    pub fn gains(&self) -> AffineGains {
        AffineGains::TimeVarying {
            k: self.stages.iter().map(|s| matrix_from_rows(&s.k)).collect(),
            l: self
                .stages
                .iter()
                .map(|s| DVector::from_column_slice(&s.l))
                .collect(),
        }
    }
}

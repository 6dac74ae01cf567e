//! Scenario files (TOML) and the built-in catalog.
//!
//! ```toml
//! name = "example"
//! [system]
//! n = 2
//! p = 1
//! A = [1.0, 0.5, 0.0, 1.0]      # row-major, n*n entries
//! B = [0.125, 0.5]              # n*p
//! # m = 1, C = [1.0, 0.0]      # optional, defaults to C = I
//! [cost]
//! Q = [1.0, 0.0, 0.0, 1.0]
//! R = [1.0]
//! horizon = 100
//! x0 = [0.0, 0.0]               # optional, defaults to zero
//! [noise]
//! kind = "gaussian"             # or discrete / gaussian_mixture / channel
//! mean = [0.0, 0.0]
//! cov = [1.0, 0.0, 0.0, 1.0]
//! [measurement]                 # optional; enables output feedback
//! S = [1.0]
//! ```
//!
//! `discrete` takes `atoms` (list of vectors) and `probs`; `gaussian_mixture`
//! takes `weights`, `means` and `covs` (each cov row-major); `channel` takes
//! an `[noise.inner]` table, a row-major `G` of shape `n × dim(inner)` and an
//! optional `center` flag that removes the inner mean.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CostSpec, LinearSystem, NoiseSpec};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub name: String,
    pub system: SystemFile,
    pub cost: CostFile,
    pub noise: NoiseFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measurement: Option<MeasurementFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SystemFile {
    pub n: usize,
    pub p: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(rename = "A")]
    pub a: Vec<f64>,
    #[serde(rename = "B")]
    pub b: Vec<f64>,
    #[serde(rename = "C", default, skip_serializing_if = "Option::is_none")]
    pub c: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CostFile {
    #[serde(rename = "Q")]
    pub q: Vec<f64>,
    #[serde(rename = "R")]
    pub r: Vec<f64>,
    pub horizon: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MeasurementFile {
    #[serde(rename = "S")]
    pub s: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseFile {
    Gaussian {
        mean: Vec<f64>,
        cov: Vec<f64>,
    },
    Discrete {
        atoms: Vec<Vec<f64>>,
        probs: Vec<f64>,
    },
    GaussianMixture {
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        covs: Vec<Vec<f64>>,
    },
    Channel {
        inner: Box<NoiseFile>,
        #[serde(rename = "G")]
        g: Vec<f64>,
        #[serde(default)]
        center: bool,
    },
}

/// A fully validated problem instance.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub system: LinearSystem,
    pub cost: CostSpec,
    pub noise: NoiseSpec,
    /// Measurement-noise covariance `S`; present for output-feedback problems.
    pub measurement: Option<DMatrix<f64>>,
    pub x0: DVector<f64>,
    file: ScenarioFile,
}

fn matrix(field: &str, data: &[f64], rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    if data.len() != rows * cols {
        return Err(Error::parse(
            field,
            format!(
                "expected {} entries ({rows}x{cols} row-major), got {}",
                rows * cols,
                data.len()
            ),
        ));
    }
    if let Some(i) = data.iter().position(|x| !x.is_finite()) {
        return Err(Error::parse(field, format!("entry {i} is not finite")));
    }
    Ok(DMatrix::from_row_slice(rows, cols, data))
}

fn vector(field: &str, data: &[f64], len: usize) -> Result<DVector<f64>> {
    if data.len() != len {
        return Err(Error::parse(
            field,
            format!("expected {len} entries, got {}", data.len()),
        ));
    }
    Ok(DVector::from_column_slice(data))
}

fn noise_from_file(field: &str, f: &NoiseFile, dim: usize) -> Result<NoiseSpec> {
    match f {
        NoiseFile::Gaussian { mean, cov } => NoiseSpec::gaussian(
            vector(&format!("{field}.mean"), mean, dim)?,
            matrix(&format!("{field}.cov"), cov, dim, dim)?,
        ),
        NoiseFile::Discrete { atoms, probs } => {
            let atoms = atoms
                .iter()
                .enumerate()
                .map(|(i, a)| vector(&format!("{field}.atoms[{i}]"), a, dim))
                .collect::<Result<Vec<_>>>()?;
            NoiseSpec::discrete(atoms, probs.clone())
        }
        NoiseFile::GaussianMixture {
            weights,
            means,
            covs,
        } => {
            let means = means
                .iter()
                .enumerate()
                .map(|(i, m)| vector(&format!("{field}.means[{i}]"), m, dim))
                .collect::<Result<Vec<_>>>()?;
            let covs = covs
                .iter()
                .enumerate()
                .map(|(i, c)| matrix(&format!("{field}.covs[{i}]"), c, dim, dim))
                .collect::<Result<Vec<_>>>()?;
            NoiseSpec::mixture(weights.clone(), means, covs)
        }
        NoiseFile::Channel { inner, g, center } => {
            if dim == 0 || g.len() % dim != 0 {
                return Err(Error::parse(
                    format!("{field}.G"),
                    format!("expected a multiple of {dim} entries, got {}", g.len()),
                ));
            }
            let q = g.len() / dim;
            let gain = matrix(&format!("{field}.G"), g, dim, q)?;
            let inner = noise_from_file(&format!("{field}.inner"), inner, q)?;
            NoiseSpec::channel(inner, gain, *center)
        }
    }
}

fn noise_to_file(spec: &NoiseSpec) -> NoiseFile {
    let flat = |m: &DMatrix<f64>| -> Vec<f64> { m.transpose().iter().copied().collect() };
    let vec = |v: &DVector<f64>| -> Vec<f64> { v.iter().copied().collect() };
    match spec {
        NoiseSpec::Gaussian { mean, cov } => NoiseFile::Gaussian {
            mean: vec(mean),
            cov: flat(cov),
        },
        NoiseSpec::Discrete { atoms, probs } => NoiseFile::Discrete {
            atoms: atoms.iter().map(vec).collect(),
            probs: probs.clone(),
        },
        NoiseSpec::GaussianMixture {
            weights,
            means,
            covs,
        } => NoiseFile::GaussianMixture {
            weights: weights.clone(),
            means: means.iter().map(vec).collect(),
            covs: covs.iter().map(flat).collect(),
        },
        NoiseSpec::Channel {
            inner,
            gain,
            center,
        } => NoiseFile::Channel {
            inner: Box::new(noise_to_file(inner)),
            g: flat(gain),
            center: *center,
        },
    }
}

impl Scenario {
    pub fn from_file(file: ScenarioFile) -> Result<Self> {
        let s = &file.system;
        if s.n == 0 || s.p == 0 {
            return Err(Error::parse("system", "n and p must be positive"));
        }
        let a = matrix("system.A", &s.a, s.n, s.n)?;
        let b = matrix("system.B", &s.b, s.n, s.p)?;
        let c = match (&s.c, s.m) {
            (Some(c), Some(m)) => matrix("system.C", c, m, s.n)?,
            (Some(_), None) => return Err(Error::parse("system.m", "required when C is given")),
            (None, Some(m)) if m != s.n => {
                return Err(Error::parse("system.C", "required when m differs from n"))
            }
            (None, _) => DMatrix::identity(s.n, s.n),
        };
        let system = LinearSystem::new(a, b, c)?;

        let q = matrix("cost.Q", &file.cost.q, s.n, s.n)?;
        let r = matrix("cost.R", &file.cost.r, s.p, s.p)?;
        let cost = CostSpec::new(q, r, file.cost.horizon)?;
        let x0 = match &file.cost.x0 {
            Some(x) => vector("cost.x0", x, s.n)?,
            None => DVector::zeros(s.n),
        };
        let noise = noise_from_file("noise", &file.noise, s.n)?;
        let measurement = match &file.measurement {
            Some(mf) => Some(matrix("measurement.S", &mf.s, system.m(), system.m())?),
            None => None,
        };
        Ok(Self {
            name: file.name.clone(),
            system,
            cost,
            noise,
            measurement,
            x0,
            file,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ScenarioFile =
            toml::from_str(text).map_err(|e| Error::parse("scenario", e.to_string()))?;
        Self::from_file(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// `builtin:NAME` or a path to a TOML file.
    pub fn resolve(spec: &str) -> Result<Self> {
        match spec.strip_prefix("builtin:") {
            Some(name) => Self::builtin(name),
            None => Self::load(spec),
        }
    }

    pub fn builtin(name: &str) -> Result<Self> {
        let (system, cost, noise, measurement) = match name {
            "double_integrator_wind" => {
                let (a, b) = double_integrator(0.5);
                (
                    LinearSystem::fully_observed(a, b.clone())?,
                    CostSpec::new(diag(&[1.0, 0.1, 2.0, 0.1]), DMatrix::identity(2, 2), 5000)?,
                    NoiseSpec::channel(wind_mixture()?, b, true)?,
                    None,
                )
            }
            "double_integrator_wind_gaussian" => {
                let (a, b) = double_integrator(0.5);
                (
                    LinearSystem::fully_observed(a, b.clone())?,
                    CostSpec::new(diag(&[1.0, 0.1, 2.0, 0.1]), DMatrix::identity(2, 2), 5000)?,
                    NoiseSpec::channel(
                        NoiseSpec::zero_mean_gaussian(diag(&[436.0, 5.0]))?,
                        b,
                        false,
                    )?,
                    None,
                )
            }
            "double_integrator_lqg" => {
                let (a, b) = double_integrator(0.5);
                let c = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
                (
                    LinearSystem::new(a, b.clone(), c)?,
                    CostSpec::new(diag(&[1.0, 0.5, 2.0, 0.5]), DMatrix::identity(2, 2), 3000)?,
                    NoiseSpec::channel(
                        NoiseSpec::zero_mean_gaussian(diag(&[30.0, 5.0]))?,
                        b,
                        false,
                    )?,
                    Some(DMatrix::from_row_slice(2, 2, &[5.0, 2.0, 2.0, 2.0])),
                )
            }
            "toy_bernoulli" => (
                LinearSystem::fully_observed(
                    DMatrix::from_element(1, 1, 1.0),
                    DMatrix::from_element(1, 1, 1.0),
                )?,
                CostSpec::new(
                    DMatrix::from_element(1, 1, 1.0),
                    DMatrix::from_element(1, 1, 0.0),
                    20,
                )?,
                NoiseSpec::bernoulli_shock(3.0)?,
                None,
            ),
            other => {
                return Err(Error::Config(format!(
                    "unknown builtin scenario '{other}' (known: {})",
                    BUILTIN_NAMES.join(", ")
                )))
            }
        };
        let x0 = DVector::zeros(system.n());
        Ok(Self::assemble(name, system, cost, noise, measurement, x0))
    }

    /// Build a scenario from in-memory parts.
    pub fn assemble(
        name: &str,
        system: LinearSystem,
        cost: CostSpec,
        noise: NoiseSpec,
        measurement: Option<DMatrix<f64>>,
        x0: DVector<f64>,
    ) -> Self {
        let flat = |m: &DMatrix<f64>| -> Vec<f64> { m.transpose().iter().copied().collect() };
        let file = ScenarioFile {
            name: name.to_string(),
            system: SystemFile {
                n: system.n(),
                p: system.p(),
                m: Some(system.m()),
                a: flat(system.a()),
                b: flat(system.b()),
                c: Some(flat(system.c())),
            },
            cost: CostFile {
                q: flat(cost.q()),
                r: flat(cost.r()),
                horizon: cost.horizon(),
                x0: Some(x0.iter().copied().collect()),
            },
            noise: noise_to_file(&noise),
            measurement: measurement.as_ref().map(|s| MeasurementFile { s: flat(s) }),
        };
        Self {
            name: name.to_string(),
            system,
            cost,
            noise,
            measurement,
            x0,
            file,
        }
    }

    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        let mut out = self.clone();
        out.cost = self.cost.with_horizon(horizon)?;
        out.file.cost.horizon = horizon;
        Ok(out)
    }

    pub fn with_noise(&self, noise: NoiseSpec) -> Result<Self> {
        if noise.dim() != self.system.n() {
            return Err(Error::Dimension(format!(
                "noise dimension {} does not match n = {}",
                noise.dim(),
                self.system.n()
            )));
        }
        let mut out = self.clone();
        out.file.noise = noise_to_file(&noise);
        out.noise = noise;
        Ok(out)
    }

    /// The serializable description, suitable for hashing.
    pub fn file(&self) -> &ScenarioFile {
        &self.file
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(&self.file).map_err(|e| Error::Config(e.to_string()))
    }
}

pub const BUILTIN_NAMES: [&str; 4] = [
    "double_integrator_wind",
    "double_integrator_wind_gaussian",
    "double_integrator_lqg",
    "toy_bernoulli",
];

fn diag(d: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(d))
}

/// Planar double integrator sampled with period `ts`; inputs are the two
/// accelerations.
pub fn double_integrator(ts: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    #[rustfmt::skip]
    let a = DMatrix::from_row_slice(4, 4, &[
        1.0, ts, 0.0, 0.0,
        0.0, 1.0, 0.0, 0.0,
        0.0, 0.0, 1.0, ts,
        0.0, 0.0, 0.0, 1.0,
    ]);
    #[rustfmt::skip]
    let b = DMatrix::from_row_slice(4, 2, &[
        ts * ts / 2.0, 0.0,
        ts, 0.0,
        0.0, ts * ts / 2.0,
        0.0, ts,
    ]);
    (a, b)
}

/// Two-dimensional wind force: a bimodal gust direction
/// `0.8·N(30, 30) + 0.2·N(80, 60)` and an independent weak `N(0, 5)` axis.
pub fn wind_mixture() -> Result<NoiseSpec> {
    NoiseSpec::mixture(
        vec![0.8, 0.2],
        vec![
            DVector::from_column_slice(&[30.0, 0.0]),
            DVector::from_column_slice(&[80.0, 0.0]),
        ],
        vec![diag(&[30.0, 5.0]), diag(&[60.0, 5.0])],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_matrix_names_the_field() {
        let text = r#"
            [system]
            n = 2
            p = 1
            A = [1.0, 0.5, 0.0]
            B = [0.0, 1.0]
            [cost]
            Q = [1.0, 0.0, 0.0, 1.0]
            R = [1.0]
            horizon = 10
            [noise]
            kind = "gaussian"
            mean = [0.0, 0.0]
            cov = [1.0, 0.0, 0.0, 1.0]
        "#;
        let err = Scenario::from_toml_str(text).unwrap_err();
        assert!(err.to_string().contains("system.A"), "{err}");
    }

    #[test]
    fn builtins_round_trip_through_toml() {
        for name in BUILTIN_NAMES {
            let s = Scenario::builtin(name).unwrap();
            let back = Scenario::from_toml_str(&s.to_toml().unwrap()).unwrap();
            assert_eq!(back.system, s.system);
            assert_eq!(back.noise, s.noise);
            assert_eq!(back.measurement, s.measurement);
        }
    }
}

//! Plant, cost and noise descriptions, plus the Q-weighted noise moments
//! that every downstream recursion consumes.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{self, Channel};

const SYM_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;
const PROB_TOL: f64 = 1e-12;

/// Relative singular-value threshold for the PBH rank tests.
pub const PBH_REL_TOL: f64 = 1e-9;

pub const DEFAULT_MC_SAMPLES: usize = 1_000_000;
pub const MIN_MC_SAMPLES: usize = 10_000;

/// Time-invariant plant `x⁺ = Ax + Bu + w`, `y = Cx + v`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || !a.is_square() {
            return Err(Error::Dimension(format!(
                "A must be square and non-empty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "B must be {n}xp with p >= 1, got {}x{}",
                b.nrows(),
                b.ncols()
            )));
        }
        if c.ncols() != n || c.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "C must be mx{n} with m >= 1, got {}x{}",
                c.nrows(),
                c.ncols()
            )));
        }
        for (name, m) in [("A", &a), ("B", &b), ("C", &c)] {
            if m.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(name, "entries must be finite"));
            }
        }
        Ok(Self { a, b, c })
    }

    /// Full-state measurement, `C = I`.
    pub fn fully_observed(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        Self::new(a, b, DMatrix::identity(n, n))
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    pub fn p(&self) -> usize {
        self.b.ncols()
    }
    pub fn m(&self) -> usize {
        self.c.nrows()
    }

    pub fn closed_loop(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        &self.a + &self.b * k
    }

    pub fn with_output(&self, c: DMatrix<f64>) -> Result<Self> {
        Self::new(self.a.clone(), self.b.clone(), c)
    }
}

/// Quadratic cost `x_N'Qx_N + Σ x_t'Qx_t + u_t'Ru_t` over horizon `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    horizon: usize,
}

impl CostSpec {
    /// `R ⪰ 0` is accepted here; invertibility of `B'VB + R` is checked per
    /// stage during synthesis.
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>, horizon: usize) -> Result<Self> {
        check_sym_psd("Q", &q)?;
        check_sym_psd("R", &r)?;
        if horizon == 0 {
            return Err(Error::invalid("horizon", "must be at least 1"));
        }
        Ok(Self { q, r, horizon })
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }
    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        Self::new(self.q.clone(), self.r.clone(), horizon)
    }

    pub(crate) fn check_against(&self, system: &LinearSystem) -> Result<()> {
        if self.q.nrows() != system.n() {
            return Err(Error::Dimension(format!(
                "Q is {}x{}, system has n = {}",
                self.q.nrows(),
                self.q.ncols(),
                system.n()
            )));
        }
        if self.r.nrows() != system.p() {
            return Err(Error::Dimension(format!(
                "R is {}x{}, system has p = {}",
                self.r.nrows(),
                self.r.ncols(),
                system.p()
            )));
        }
        Ok(())
    }
}

fn check_sym_psd(name: &str, m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() || m.nrows() == 0 {
        return Err(Error::Dimension(format!(
            "{name} must be square and non-empty"
        )));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid(name, "entries must be finite"));
    }
    if !linalg::is_symmetric(m, SYM_TOL) {
        return Err(Error::invalid(name, "must be symmetric"));
    }
    if !linalg::is_psd(m, PSD_TOL) {
        return Err(Error::invalid(
            name,
            format!(
                "must be PSD (min eigenvalue {:.3e})",
                linalg::min_eigenvalue(m)
            ),
        ));
    }
    Ok(())
}

/// Distribution of an i.i.d. noise sequence.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSpec {
    Gaussian {
        mean: DVector<f64>,
        cov: DMatrix<f64>,
    },
    Discrete {
        atoms: Vec<DVector<f64>>,
        probs: Vec<f64>,
    },
    GaussianMixture {
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        covs: Vec<DMatrix<f64>>,
    },
    /// `w = G·d`, or `w = G·(d − E d)` when `center` is set.
    Channel {
        inner: Box<NoiseSpec>,
        gain: DMatrix<f64>,
        center: bool,
    },
}

impl NoiseSpec {
    pub fn gaussian(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let s = NoiseSpec::Gaussian { mean, cov };
        s.validate()?;
        Ok(s)
    }

    pub fn zero_mean_gaussian(cov: DMatrix<f64>) -> Result<Self> {
        Self::gaussian(DVector::zeros(cov.nrows()), cov)
    }

    pub fn discrete(atoms: Vec<DVector<f64>>, probs: Vec<f64>) -> Result<Self> {
        let s = NoiseSpec::Discrete { atoms, probs };
        s.validate()?;
        Ok(s)
    }

    pub fn mixture(
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        covs: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let s = NoiseSpec::GaussianMixture {
            weights,
            means,
            covs,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn channel(inner: NoiseSpec, gain: DMatrix<f64>, center: bool) -> Result<Self> {
        let s = NoiseSpec::Channel {
            inner: Box::new(inner),
            gain,
            center,
        };
        s.validate()?;
        Ok(s)
    }

    /// Scalar two-point shock: `beta` with probability `1/beta`, else 0.
    pub fn bernoulli_shock(beta: f64) -> Result<Self> {
        if beta <= 1.0 {
            return Err(Error::invalid("beta", "must exceed 1"));
        }
        Self::discrete(
            vec![DVector::from_element(1, beta), DVector::zeros(1)],
            vec![1.0 / beta, 1.0 - 1.0 / beta],
        )
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            NoiseSpec::Gaussian { mean, cov } => {
                if cov.nrows() != mean.len() {
                    return Err(Error::Dimension("gaussian mean/cov size".into()));
                }
                check_sym_psd("noise.cov", cov)
            }
            NoiseSpec::Discrete { atoms, probs } => {
                if atoms.is_empty() || atoms.len() != probs.len() {
                    return Err(Error::invalid(
                        "noise.probs",
                        "need one probability per atom and at least one atom",
                    ));
                }
                let d = atoms[0].len();
                if d == 0 || atoms.iter().any(|a| a.len() != d) {
                    return Err(Error::Dimension(
                        "discrete atoms must share a dimension".into(),
                    ));
                }
                check_probabilities("noise.probs", probs)
            }
            NoiseSpec::GaussianMixture {
                weights,
                means,
                covs,
            } => {
                if weights.is_empty() || weights.len() != means.len() || means.len() != covs.len() {
                    return Err(Error::invalid(
                        "noise.weights",
                        "weights, means and covs must have equal non-zero length",
                    ));
                }
                let d = means[0].len();
                if d == 0 || means.iter().any(|m| m.len() != d) {
                    return Err(Error::Dimension(
                        "mixture means must share a dimension".into(),
                    ));
                }
                for (i, c) in covs.iter().enumerate() {
                    if c.nrows() != d {
                        return Err(Error::Dimension(format!("mixture cov {i} size")));
                    }
                    check_sym_psd(&format!("noise.covs[{i}]"), c)?;
                }
                check_probabilities("noise.weights", weights)
            }
            NoiseSpec::Channel { inner, gain, .. } => {
                inner.validate()?;
                if gain.ncols() != inner.dim() || gain.nrows() == 0 {
                    return Err(Error::Dimension(format!(
                        "channel gain is {}x{}, inner noise has dimension {}",
                        gain.nrows(),
                        gain.ncols(),
                        inner.dim()
                    )));
                }
                if gain.iter().any(|x| !x.is_finite()) {
                    return Err(Error::invalid("noise.G", "entries must be finite"));
                }
                Ok(())
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            NoiseSpec::Gaussian { mean, .. } => mean.len(),
            NoiseSpec::Discrete { atoms, .. } => atoms[0].len(),
            NoiseSpec::GaussianMixture { means, .. } => means[0].len(),
            NoiseSpec::Channel { gain, .. } => gain.nrows(),
        }
    }

    pub fn mean(&self) -> DVector<f64> {
        match self {
            NoiseSpec::Gaussian { mean, .. } => mean.clone(),
            NoiseSpec::Discrete { atoms, probs } => weighted_mean(atoms, probs),
            NoiseSpec::GaussianMixture { weights, means, .. } => weighted_mean(means, weights),
            NoiseSpec::Channel {
                inner,
                gain,
                center,
            } => {
                if *center {
                    DVector::zeros(gain.nrows())
                } else {
                    gain * inner.mean()
                }
            }
        }
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        match self {
            NoiseSpec::Gaussian { cov, .. } => cov.clone(),
            NoiseSpec::Discrete { atoms, probs } => {
                let mu = weighted_mean(atoms, probs);
                let d = mu.len();
                atoms
                    .iter()
                    .zip(probs)
                    .fold(DMatrix::zeros(d, d), |acc, (a, &p)| {
                        let e = a - &mu;
                        acc + &e * e.transpose() * p
                    })
            }
            NoiseSpec::GaussianMixture {
                weights,
                means,
                covs,
            } => {
                let mu = weighted_mean(means, weights);
                let d = mu.len();
                let mut acc = DMatrix::zeros(d, d);
                for ((w, m), c) in weights.iter().zip(means).zip(covs) {
                    let e = m - &mu;
                    acc += (c + &e * e.transpose()) * *w;
                }
                acc
            }
            NoiseSpec::Channel { inner, gain, .. } => {
                linalg::symmetrize(&(gain * inner.covariance() * gain.transpose()))
            }
        }
    }

    /// Gaussian, or a linear image of a Gaussian.
    pub fn is_gaussian(&self) -> bool {
        match self {
            NoiseSpec::Gaussian { .. } => true,
            NoiseSpec::Channel { inner, .. } => inner.is_gaussian(),
            _ => false,
        }
    }

    /// Whether every absolute moment is provably finite. All supported kinds
    /// qualify (light-tailed or finitely supported); kept as a query so new
    /// kinds must answer it.
    pub fn has_all_moments(&self) -> bool {
        match self {
            NoiseSpec::Gaussian { .. }
            | NoiseSpec::Discrete { .. }
            | NoiseSpec::GaussianMixture { .. } => true,
            NoiseSpec::Channel { inner, .. } => inner.has_all_moments(),
        }
    }

    pub fn sampler(&self) -> NoiseSampler {
        NoiseSampler::new(self)
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            NoiseSpec::Gaussian { .. } => "gaussian",
            NoiseSpec::Discrete { .. } => "discrete",
            NoiseSpec::GaussianMixture { .. } => "gaussian_mixture",
            NoiseSpec::Channel { .. } => "channel",
        }
    }
}

fn check_probabilities(field: &str, p: &[f64]) -> Result<()> {
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::invalid(field, "entries must be nonnegative"));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > PROB_TOL {
        return Err(Error::invalid(field, format!("must sum to 1, got {total}")));
    }
    Ok(())
}

fn weighted_mean(points: &[DVector<f64>], weights: &[f64]) -> DVector<f64> {
    points
        .iter()
        .zip(weights)
        .fold(DVector::zeros(points[0].len()), |acc, (x, &w)| acc + x * w)
}

/// Precomputed draw machinery for a [`NoiseSpec`].
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    kind: SamplerKind,
}

#[derive(Debug, Clone)]
enum SamplerKind {
    Gaussian {
        mean: DVector<f64>,
        factor: DMatrix<f64>,
    },
    Discrete {
        atoms: Vec<DVector<f64>>,
        cumulative: Vec<f64>,
    },
    Mixture {
        cumulative: Vec<f64>,
        means: Vec<DVector<f64>>,
        factors: Vec<DMatrix<f64>>,
    },
    Channel {
        inner: Box<NoiseSampler>,
        gain: DMatrix<f64>,
        offset: DVector<f64>,
    },
}

fn cumulative(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    p.iter()
        .map(|&x| {
            acc += x;
            acc
        })
        .collect()
}

fn pick(cumulative: &[f64], u: f64) -> usize {
    cumulative
        .iter()
        .position(|&c| u < c)
        .unwrap_or(cumulative.len() - 1)
}

impl NoiseSampler {
    fn new(spec: &NoiseSpec) -> Self {
        let kind = match spec {
            NoiseSpec::Gaussian { mean, cov } => SamplerKind::Gaussian {
                mean: mean.clone(),
                factor: linalg::psd_sqrt(cov),
            },
            NoiseSpec::Discrete { atoms, probs } => SamplerKind::Discrete {
                atoms: atoms.clone(),
                cumulative: cumulative(probs),
            },
            NoiseSpec::GaussianMixture {
                weights,
                means,
                covs,
            } => SamplerKind::Mixture {
                cumulative: cumulative(weights),
                means: means.clone(),
                factors: covs.iter().map(linalg::psd_sqrt).collect(),
            },
            NoiseSpec::Channel {
                inner,
                gain,
                center,
            } => SamplerKind::Channel {
                inner: Box::new(NoiseSampler::new(inner)),
                gain: gain.clone(),
                offset: if *center {
                    -(gain * inner.mean())
                } else {
                    DVector::zeros(gain.nrows())
                },
            },
        };
        Self { kind }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        match &self.kind {
            SamplerKind::Gaussian { mean, factor } => {
                mean + factor * standard_normal(rng, mean.len())
            }
            SamplerKind::Discrete { atoms, cumulative } => {
                atoms[pick(cumulative, rng.random::<f64>())].clone()
            }
            SamplerKind::Mixture {
                cumulative,
                means,
                factors,
            } => {
                let k = pick(cumulative, rng.random::<f64>());
                &means[k] + &factors[k] * standard_normal(rng, means[k].len())
            }
            SamplerKind::Channel {
                inner,
                gain,
                offset,
            } => gain * inner.sample(rng) + offset,
        }
    }

    /// The draw stored at address `(seed, index, channel)`.
    pub fn sample_at(&self, seed: u64, index: u64, channel: Channel) -> DVector<f64> {
        self.sample(&mut rng::stream(seed, index, channel))
    }
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.sample(StandardNormal))
}

/// Deterministic i.i.d. draws; sample `i` lives at stream address `i`.
pub fn sample_noise(noise: &NoiseSpec, seed: u64, count: usize) -> Result<Vec<DVector<f64>>> {
    if count == 0 {
        return Err(Error::invalid("count", "must be at least 1"));
    }
    let sampler = noise.sampler();
    Ok((0..count as u64)
        .map(|i| sampler.sample_at(seed, i, Channel::Process))
        .collect())
}

/// Monte-Carlo settings for moments without a closed form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct McConfig {
    pub samples: usize,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            samples: DEFAULT_MC_SAMPLES,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "path", rename_all = "snake_case")]
pub enum MomentSource {
    Analytic,
    MonteCarlo {
        samples: usize,
        seed: u64,
        /// Standard errors of the entries of `M3`.
        std_error_big_m3: Vec<f64>,
        std_error_m4: f64,
    },
}

/// Noise moments contracted with the state penalty `Q`.
///
/// With `δ = w − w̄`: `W = E δδ'`, `M3 = 2E{δδ'Qδ}`, `m3 = Q·M3`,
/// `m4 = E{(δ'Qδ − Tr QW)²}`.
#[derive(Debug, Clone, PartialEq)]
pub struct QWeightedMoments {
    pub wbar: DVector<f64>,
    pub w: DMatrix<f64>,
    pub m3: DVector<f64>,
    pub big_m3: DVector<f64>,
    pub m4: f64,
    pub source: MomentSource,
}

impl QWeightedMoments {
    /// Moments of a noise with the given mean and covariance and zero
    /// third-order term, e.g. any Gaussian.
    pub fn symmetric(q: &DMatrix<f64>, wbar: DVector<f64>, w: DMatrix<f64>) -> Self {
        let n = wbar.len();
        Self {
            m4: gaussian_m4(q, &w),
            wbar,
            w,
            m3: DVector::zeros(n),
            big_m3: DVector::zeros(n),
            source: MomentSource::Analytic,
        }
    }

    pub fn dim(&self) -> usize {
        self.wbar.len()
    }

    /// `Q + 4μ·QWQ`.
    pub fn inflated_penalty(&self, q: &DMatrix<f64>, mu: f64) -> DMatrix<f64> {
        linalg::symmetrize(&(q + q * &self.w * q * (4.0 * mu)))
    }

    pub(crate) fn check_against(&self, system: &LinearSystem) -> Result<()> {
        if self.dim() != system.n() {
            return Err(Error::Dimension(format!(
                "noise moments have dimension {}, system has n = {}",
                self.dim(),
                system.n()
            )));
        }
        Ok(())
    }
}

/// Fourth-moment term of a Gaussian: `2·Tr((QW)²)`.
pub fn gaussian_m4(q: &DMatrix<f64>, w: &DMatrix<f64>) -> f64 {
    let qw = q * w;
    2.0 * (&qw * &qw).trace()
}

/// Mean, covariance and Q-weighted third/fourth moments of `noise`.
///
/// Gaussian and discrete kinds (and channels over them) are exact; Gaussian
/// mixtures are estimated by seeded Monte Carlo.
pub fn compute_moments(
    noise: &NoiseSpec,
    q: &DMatrix<f64>,
    mc: Option<McConfig>,
) -> Result<QWeightedMoments> {
    if q.nrows() != noise.dim() || !q.is_square() {
        return Err(Error::Dimension(format!(
            "Q is {}x{}, noise has dimension {}",
            q.nrows(),
            q.ncols(),
            noise.dim()
        )));
    }
    let mc = mc.unwrap_or_default();
    if mc.samples < MIN_MC_SAMPLES {
        return Err(Error::Config(format!(
            "Monte-Carlo moment estimation needs at least {MIN_MC_SAMPLES} samples, got {}",
            mc.samples
        )));
    }
    let wbar = noise.mean();
    let w = noise.covariance();
    let (big_m3, m4, source) = higher_moments(noise, q, mc);
    Ok(QWeightedMoments {
        m3: q * &big_m3,
        wbar,
        w,
        big_m3,
        m4: m4.max(0.0),
        source,
    })
}

fn higher_moments(
    noise: &NoiseSpec,
    q: &DMatrix<f64>,
    mc: McConfig,
) -> (DVector<f64>, f64, MomentSource) {
    match noise {
        NoiseSpec::Gaussian { cov, .. } => (
            DVector::zeros(cov.nrows()),
            gaussian_m4(q, cov),
            MomentSource::Analytic,
        ),
        NoiseSpec::Discrete { atoms, probs } => {
            let mu = weighted_mean(atoms, probs);
            let tr = (q * noise.covariance()).trace();
            let mut big_m3 = DVector::zeros(mu.len());
            let mut m4 = 0.0;
            for (a, &p) in atoms.iter().zip(probs) {
                let d = a - &mu;
                let s = linalg::quad_form(q, &d);
                big_m3 += &d * (2.0 * p * s);
                m4 += p * (s - tr) * (s - tr);
            }
            (big_m3, m4, MomentSource::Analytic)
        }
        NoiseSpec::GaussianMixture { .. } => monte_carlo_moments(noise, q, mc),
        NoiseSpec::Channel { inner, gain, .. } => {
            let q_inner = linalg::symmetrize(&(gain.transpose() * q * gain));
            let (m3_inner, m4, source) = higher_moments(inner, &q_inner, mc);
            let source = match source {
                MomentSource::MonteCarlo {
                    samples,
                    seed,
                    std_error_big_m3,
                    std_error_m4,
                } => {
                    // standard errors of a linear image: propagate through |G|
                    let se_in = DVector::from_vec(std_error_big_m3);
                    let se = gain.abs() * se_in;
                    MomentSource::MonteCarlo {
                        samples,
                        seed,
                        std_error_big_m3: se.iter().copied().collect(),
                        std_error_m4,
                    }
                }
                analytic => analytic,
            };
            (gain * m3_inner, m4, source)
        }
    }
}

fn monte_carlo_moments(
    noise: &NoiseSpec,
    q: &DMatrix<f64>,
    mc: McConfig,
) -> (DVector<f64>, f64, MomentSource) {
    let sampler = noise.sampler();
    let mu = noise.mean();
    let tr = (q * noise.covariance()).trace();
    let d = mu.len();
    let n = mc.samples as f64;

    let mut sum3 = DVector::<f64>::zeros(d);
    let mut sumsq3 = DVector::<f64>::zeros(d);
    let mut sum4 = 0.0;
    let mut sumsq4 = 0.0;
    for i in 0..mc.samples as u64 {
        let delta = sampler.sample_at(mc.seed, i, Channel::MomentEstimate) - &mu;
        let s = linalg::quad_form(q, &delta);
        let x3 = &delta * (2.0 * s);
        sumsq3 += x3.component_mul(&x3);
        sum3 += x3;
        let x4 = (s - tr) * (s - tr);
        sum4 += x4;
        sumsq4 += x4 * x4;
    }
    let mean3 = &sum3 / n;
    let se3: Vec<f64> = (0..d)
        .map(|i| ((sumsq3[i] / n - mean3[i] * mean3[i]).max(0.0) / (n - 1.0)).sqrt())
        .collect();
    let mean4 = sum4 / n;
    let se4 = ((sumsq4 / n - mean4 * mean4).max(0.0) / (n - 1.0)).sqrt();
    (
        mean3,
        mean4,
        MomentSource::MonteCarlo {
            samples: mc.samples,
            seed: mc.seed,
            std_error_big_m3: se3,
            std_error_m4: se4,
        },
    )
}

/// Outcome of the structural checks behind the stability guarantees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AssumptionReport {
    pub ab_stabilizable: bool,
    pub aq_detectable: bool,
    pub r_positive_definite: bool,
    /// Present only when a measurement covariance was supplied.
    pub ac_detectable: Option<bool>,
    pub aw_stabilizable: Option<bool>,
    pub s_positive_definite: Option<bool>,
}

impl AssumptionReport {
    /// Hypotheses for the fully-observed stability result.
    pub fn lqr_ok(&self) -> bool {
        self.ab_stabilizable && self.aq_detectable && self.r_positive_definite
    }

    /// Hypotheses for the output-feedback stability result.
    pub fn lqg_ok(&self) -> bool {
        self.lqr_ok()
            && self.ac_detectable == Some(true)
            && self.aw_stabilizable == Some(true)
            && self.s_positive_definite == Some(true)
    }

    pub fn failures(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !self.ab_stabilizable {
            out.push("(A,B) not stabilizable");
        }
        if !self.aq_detectable {
            out.push("(A,Q^1/2) not detectable");
        }
        if !self.r_positive_definite {
            out.push("R not positive definite");
        }
        if self.ac_detectable == Some(false) {
            out.push("(A,C) not detectable");
        }
        if self.aw_stabilizable == Some(false) {
            out.push("(A,W^1/2) not stabilizable");
        }
        if self.s_positive_definite == Some(false) {
            out.push("S not positive definite");
        }
        out
    }
}

fn positive_definite(m: &DMatrix<f64>) -> bool {
    let ev = linalg::sym_eigenvalues(m);
    let max = ev.last().copied().unwrap_or(0.0).abs().max(1.0);
    ev.first().is_some_and(|&l| l > 1e-12 * max)
}

/// PBH-based checks of stabilizability/detectability and definiteness.
///
/// `(A, Q^{1/2})` is tested through `Q` itself: both share a kernel, so the
/// PBH ranks coincide. Likewise for `W`.
pub fn validate_assumptions(
    system: &LinearSystem,
    cost: &CostSpec,
    w: &DMatrix<f64>,
    s: Option<&DMatrix<f64>>,
) -> Result<AssumptionReport> {
    cost.check_against(system)?;
    if w.nrows() != system.n() || !w.is_square() {
        return Err(Error::Dimension(format!("W must be {0}x{0}", system.n())));
    }
    if let Some(s) = s {
        if s.nrows() != system.m() || !s.is_square() {
            return Err(Error::Dimension(format!("S must be {0}x{0}", system.m())));
        }
    }
    let a = system.a();
    Ok(AssumptionReport {
        ab_stabilizable: linalg::pbh_stabilizable(a, system.b(), PBH_REL_TOL),
        aq_detectable: linalg::pbh_detectable(a, cost.q(), PBH_REL_TOL),
        r_positive_definite: positive_definite(cost.r()),
        ac_detectable: s.map(|_| linalg::pbh_detectable(a, system.c(), PBH_REL_TOL)),
        aw_stabilizable: s.map(|_| linalg::pbh_stabilizable(a, w, PBH_REL_TOL)),
        s_positive_definite: s.map(positive_definite),
    })
}

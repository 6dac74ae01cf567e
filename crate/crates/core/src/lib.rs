//! Risk-constrained linear-quadratic control.
//!
//! Synthesis of LQR and LQG controllers that trade expected cost against the
//! predictive variance of the state penalty, with closed-form risk evaluation,
//! dual bisection over the multiplier, an LEQG baseline and a seeded
//! Monte-Carlo engine.

pub mod baselines;
pub mod duality;
pub mod error;
pub mod export;
pub mod linalg;
pub mod lqg;
pub mod lqr;
pub mod model;
pub mod riccati;
pub mod rng;
pub mod scenario;
pub mod sim;

pub use error::{Error, ErrorCategory, Result};
pub use model::{
    compute_moments, sample_noise, validate_assumptions, AssumptionReport, CostSpec, LinearSystem,
    McConfig, MomentSource, NoiseSpec, QWeightedMoments,
};
pub use scenario::Scenario;

//! True marginal outcome probabilities and marginal effects, computed by
//! Monte Carlo integration over the covariate distribution, and the solver
//! that finds the treatment coefficient inducing a target marginal odds ratio.
//!
//! All routines reuse one covariate sample across both arms (and across all
//! candidate coefficients in the solver), so contrasts are free of independent
//! Monte Carlo jitter and the solver objective is deterministic and monotone.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dgm::{DgmError, ScenarioConfig, Study};
use crate::linmod::Family;
use crate::stats::{expit, logit};

/// Default number of covariate draws for calibration-grade integrals.
pub const DEFAULT_CALIBRATION_DRAWS: usize = 1_000_000;

/// Default tolerance on |log OR - log target| for the coefficient solver.
pub const DEFAULT_SOLVE_TOL: f64 = 1e-4;

/// Smallest draw count accepted for the Monte Carlo path.
pub const MIN_DRAWS: usize = 10_000;

const BETA_T_BRACKET: (f64, f64) = (-20.0, 20.0);
const MAX_BISECTION_ITERATIONS: usize = 200;

#[derive(Debug, Error)]
pub enum CalibrateError {
    #[error(transparent)]
    Config(#[from] DgmError),
    #[error("family mismatch: {0}")]
    FamilyMismatch(String),
    #[error("need at least {MIN_DRAWS} draws for Monte Carlo integration, got {0}")]
    TooFewDraws(usize),
    #[error("target marginal odds ratio must be positive, got {0}")]
    InvalidTarget(f64),
    #[error("target log odds ratio {target:.4} is outside the reachable range [{lo:.4}, {hi:.4}] for the treatment coefficient bracket")]
    BracketFailure { target: f64, lo: f64, hi: f64 },
    #[error("bisection did not reach tolerance after {0} iterations")]
    NoConvergence(usize),
}

/// Calibrated truth for one study of a binary-outcome scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginalTruth {
    pub p_active: f64,
    pub p_control: f64,
    pub marginal_log_or: f64,
    pub mc_draws: usize,
    /// Delta-method standard error of `marginal_log_or`; the correlation from
    /// shared draws is conservatively ignored.
    pub mc_se: f64,
}

/// One fixed covariate sample, reduced to the pieces of the linear predictor
/// that do and do not interact with treatment.
struct CovariateSample {
    /// beta0 + sum_k beta_k x_k per draw.
    base: Vec<f64>,
    /// sum_k beta_xt_k x_k per draw (all zeros without interactions).
    interaction: Vec<f64>,
}

impl CovariateSample {
    fn draw(config: &ScenarioConfig, study: Study, draws: usize, rng: &mut impl Rng) -> Self {
        let has_interaction = config.beta_interaction.iter().any(|b| *b != 0.0);
        let mut base = Vec::with_capacity(draws);
        let mut interaction = Vec::with_capacity(draws);
        for _ in 0..draws {
            let mut eta = config.beta0;
            let mut ix = 0.0;
            for (k, spec) in config.covariates.iter().enumerate() {
                let z: f64 = rng.sample(StandardNormal);
                let x = spec.mean(study) + spec.sd * z;
                eta += config.beta_cov[k] * x;
                if has_interaction {
                    ix += config.interaction(k) * x;
                }
            }
            base.push(eta);
            interaction.push(ix);
        }
        CovariateSample { base, interaction }
    }

    /// Mean and sample variance of expit over the draws for a given arm.
    fn arm_probability(&self, beta_t: Option<f64>) -> (f64, f64) {
        let n = self.base.len() as f64;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for (b, ix) in self.base.iter().zip(&self.interaction) {
            let eta = match beta_t {
                Some(bt) => b + bt + ix,
                None => *b,
            };
            let p = expit(eta);
            sum += p;
            sumsq += p * p;
        }
        let mean = sum / n;
        let var = (sumsq / n - mean * mean).max(0.0) * n / (n - 1.0);
        (mean, var)
    }
}

fn require_logistic(config: &ScenarioConfig, what: &str) -> Result<(), CalibrateError> {
    if config.family != Family::Logistic {
        return Err(CalibrateError::FamilyMismatch(format!(
            "{what} requires the logistic family"
        )));
    }
    Ok(())
}

fn require_draws(draws: usize) -> Result<(), CalibrateError> {
    if draws < MIN_DRAWS {
        return Err(CalibrateError::TooFewDraws(draws));
    }
    Ok(())
}

/// Exact marginal outcome mean for the linear family: the integral collapses
/// to the linear predictor evaluated at the covariate means.
pub fn analytic_marginal_mean(
    config: &ScenarioConfig,
    study: Study,
    treated: bool,
) -> Result<f64, CalibrateError> {
    config.validate()?;
    if config.family != Family::Linear {
        return Err(CalibrateError::FamilyMismatch(
            "the analytic marginal mean is only exact for the linear family".into(),
        ));
    }
    let means: Vec<f64> = config.covariates.iter().map(|c| c.mean(study)).collect();
    Ok(config.linear_predictor(&means, treated))
}

/// Marginal outcome probability (logistic) or mean (linear) for one arm.
///
/// The logistic path is a Monte Carlo integral over `draws` covariate draws;
/// the linear path returns the closed form without simulation.
pub fn marginal_probability(
    config: &ScenarioConfig,
    study: Study,
    treated: bool,
    draws: usize,
    rng: &mut impl Rng,
) -> Result<f64, CalibrateError> {
    config.validate()?;
    match config.family {
        Family::Linear => analytic_marginal_mean(config, study, treated),
        Family::Logistic => {
            require_draws(draws)?;
            let sample = CovariateSample::draw(config, study, draws, rng);
            let (p, _) = sample.arm_probability(treated.then_some(config.beta_t));
            Ok(p)
        }
    }
}

/// True marginal log odds ratio (active vs common comparator) in `study`,
/// with both arm probabilities integrated over the same covariate draws.
pub fn true_marginal_log_or(
    config: &ScenarioConfig,
    study: Study,
    draws: usize,
    rng: &mut impl Rng,
) -> Result<MarginalTruth, CalibrateError> {
    config.validate()?;
    require_logistic(config, "true_marginal_log_or")?;
    require_draws(draws)?;

    let sample = CovariateSample::draw(config, study, draws, rng);
    let (p_active, var_active) = sample.arm_probability(Some(config.beta_t));
    let (p_control, var_control) = sample.arm_probability(None);
    let marginal_log_or = logit(p_active) - logit(p_control);

    let n = draws as f64;
    let logit_var = |p: f64, var: f64| var / n / (p * (1.0 - p)).powi(2);
    let mc_se = (logit_var(p_active, var_active) + logit_var(p_control, var_control)).sqrt();

    Ok(MarginalTruth {
        p_active,
        p_control,
        marginal_log_or,
        mc_draws: draws,
        mc_se,
    })
}

/// True marginal mean difference for the linear family. Collapsibility makes
/// it equal to the conditional effect whenever interactions are zero,
/// whatever the covariate means are.
pub fn true_marginal_mean_difference(
    config: &ScenarioConfig,
    study: Study,
) -> Result<f64, CalibrateError> {
    let active = analytic_marginal_mean(config, study, true)?;
    let control = analytic_marginal_mean(config, study, false)?;
    Ok(active - control)
}

/// Solves for the treatment coefficient that induces `target_or` as the
/// marginal odds ratio in `study`, ignoring `config.beta_t`.
///
/// One covariate sample is drawn up front and reused for every candidate, so
/// the objective is deterministic and strictly increasing in the coefficient;
/// bisection on the bracket [-20, 20] is then exact up to `tolerance`.
pub fn solve_treatment_coefficient(
    config: &ScenarioConfig,
    study: Study,
    target_or: f64,
    draws: usize,
    tolerance: f64,
    rng: &mut impl Rng,
) -> Result<f64, CalibrateError> {
    config.validate()?;
    require_logistic(config, "solve_treatment_coefficient")?;
    require_draws(draws)?;
    if !(target_or.is_finite() && target_or > 0.0) {
        return Err(CalibrateError::InvalidTarget(target_or));
    }

    let sample = CovariateSample::draw(config, study, draws, rng);
    let (p_control, _) = sample.arm_probability(None);
    let objective = |bt: f64| {
        let (p_active, _) = sample.arm_probability(Some(bt));
        logit(p_active) - logit(p_control)
    };

    let target = target_or.ln();
    let (mut lo, mut hi) = BETA_T_BRACKET;
    let f_lo = objective(lo);
    let f_hi = objective(hi);
    if target < f_lo || target > f_hi {
        return Err(CalibrateError::BracketFailure {
            target,
            lo: f_lo,
            hi: f_hi,
        });
    }

    for _ in 0..MAX_BISECTION_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        let f_mid = objective(mid);
        if (f_mid - target).abs() <= tolerance {
            return Ok(mid);
        }
        if f_mid < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(CalibrateError::NoConvergence(MAX_BISECTION_ITERATIONS))
}

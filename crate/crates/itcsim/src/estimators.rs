//! Anchored indirect-comparison estimators: Bucher, matching-adjusted
//! indirect comparison (MAIC), and parametric G-computation, plus bootstrap
//! standard errors, variance summation, and Wald intervals.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::dgm::TrialData;
use crate::linmod::{
    fit_linear, fit_logistic, predict_mean, solve_cholesky, DesignData, Family, FitSettings,
    GlmFit, LinmodError,
};
use crate::stats::{logit, mean, sample_sd, z_975};
use crate::stream::bootstrap_rng;

const MAIC_MAX_ITERATIONS: usize = 100;
const MAIC_ALPHA_DIVERGED: f64 = 50.0;
/// Preferred per-component imbalance of the weighted means.
const MAIC_BALANCE_TOL: f64 = 1e-8;
/// Contractual imbalance bound, accepted when line-search progress stalls at
/// float resolution.
const MAIC_BALANCE_ACCEPT: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum EstimatorError {
    /// The weight solver cannot balance the requested means: target outside
    /// the sample hull, diverging coefficients, or residual imbalance.
    #[error("insufficient covariate overlap for weighting: {0}")]
    NoOverlap(String),
    /// A 2x2 cell count of zero makes the log odds ratio infinite.
    #[error("degenerate arm: {0}")]
    DegenerateArm(String),
    #[error("fewer than two bootstrap resamples succeeded ({0} requested)")]
    BootstrapFailed(usize),
    #[error(transparent)]
    Fit(#[from] LinmodError),
    #[error("invalid estimator input: {0}")]
    Input(String),
}

/// The three anchored comparison methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Bucher,
    Maic,
    Gcomp,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Bucher, Method::Maic, Method::Gcomp];

    pub fn name(self) -> &'static str {
        match self {
            Method::Bucher => "bucher",
            Method::Maic => "maic",
            Method::Gcomp => "gcomp",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.name() == s)
    }

    fn stream_id(self) -> u64 {
        match self {
            Method::Bucher => 0,
            Method::Maic => 1,
            Method::Gcomp => 2,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Method-of-moments balancing weights for the active trial.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    /// Coefficient per balanced covariate.
    pub alpha: Vec<f64>,
    /// One positive weight per subject, exp((x_i - target)' alpha).
    pub weights: Vec<f64>,
    /// Effective sample size (sum w)^2 / sum w^2.
    pub ess: f64,
}

/// Point estimate with bootstrap (or closed-form) standard error and a
/// Wald-type 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EffectEstimate {
    pub method: Method,
    pub delta_hat: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub bootstrap_failures: usize,
}

impl EffectEstimate {
    pub fn new(method: Method, delta_hat: f64, se: f64, bootstrap_failures: usize) -> Self {
        let half = z_975() * se;
        EffectEstimate {
            method,
            delta_hat,
            se,
            ci_low: delta_hat - half,
            ci_high: delta_hat + half,
            bootstrap_failures,
        }
    }

    pub fn covers(&self, truth: f64) -> bool {
        self.ci_low <= truth && truth <= self.ci_high
    }
}

/// Everything the covariate-adjusted estimators need besides the two trials.
#[derive(Debug, Clone, Copy)]
pub struct EstimatorSettings {
    pub family: Family,
    pub fit: FitSettings,
    /// Master seed of the simulation run; resample streams derive from it.
    pub master_seed: u64,
    /// Replicate index within the run.
    pub replicate: u64,
    /// Number of bootstrap resamples. Zero disables the bootstrap and leaves
    /// the standard error at zero (point estimate only).
    pub resamples: usize,
}

impl EstimatorSettings {
    pub fn new(family: Family, master_seed: u64, replicate: u64, resamples: usize) -> Self {
        EstimatorSettings {
            family,
            fit: FitSettings::default(),
            master_seed,
            replicate,
            resamples,
        }
    }
}

/// Solves the method-of-moments weights that balance the active-trial
/// covariate means onto `target_means`.
///
/// Newton iterations on the convex objective Q(alpha) = sum_i exp(d_i'alpha),
/// d_i = x_i - target, with step-halving. Divergence (alpha norm beyond 50 or
/// 100 iterations) and targets outside the componentwise sample range are
/// reported as [`EstimatorError::NoOverlap`].
pub fn maic_weights(
    s1_covariates: ArrayView2<'_, f64>,
    s2_target_means: &[f64],
) -> Result<WeightSet, EstimatorError> {
    maic_weights_from(s1_covariates, s2_target_means, None)
}

fn maic_weights_from(
    x: ArrayView2<'_, f64>,
    target: &[f64],
    warm_start: Option<&[f64]>,
) -> Result<WeightSet, EstimatorError> {
    let (n, k) = x.dim();
    if target.len() != k {
        return Err(EstimatorError::Input(format!(
            "{k} covariate columns but {} target means",
            target.len()
        )));
    }
    if n < 2 {
        return Err(EstimatorError::Input("need at least two subjects".into()));
    }

    // Convex-hull surrogate: each target mean must lie strictly inside the
    // observed range of its covariate.
    for j in 0..k {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..n {
            lo = lo.min(x[(i, j)]);
            hi = hi.max(x[(i, j)]);
        }
        if !(target[j] > lo && target[j] < hi) {
            return Err(EstimatorError::NoOverlap(format!(
                "target mean {} for covariate {j} is outside the sample range [{lo}, {hi}]",
                target[j]
            )));
        }
    }

    // centered covariates, contiguous row-major
    let mut centered = Vec::with_capacity(n * k);
    for i in 0..n {
        for (j, t) in target.iter().enumerate() {
            centered.push(x[(i, j)] - t);
        }
    }

    let objective = |alpha: &[f64], weights: &mut Vec<f64>| -> f64 {
        weights.clear();
        let mut q = 0.0;
        for row in centered.chunks_exact(k) {
            let e: f64 = row.iter().zip(alpha).map(|(d, a)| d * a).sum();
            let w = e.exp();
            weights.push(w);
            q += w;
        }
        q
    };

    let mut alpha = warm_start.map_or_else(|| vec![0.0; k], <[f64]>::to_vec);
    let mut weights = Vec::with_capacity(n);
    let mut q = objective(&alpha, &mut weights);
    if !q.is_finite() {
        alpha = vec![0.0; k];
        q = objective(&alpha, &mut weights);
    }

    for iteration in 0..=MAIC_MAX_ITERATIONS {
        let sum_w: f64 = weights.iter().sum();
        let mut grad = vec![0.0; k];
        let mut hessian = vec![0.0; k * k];
        for (i, row) in centered.chunks_exact(k).enumerate() {
            let w = weights[i];
            for j in 0..k {
                let wx = w * row[j];
                grad[j] += wx;
                for l in j..k {
                    hessian[j * k + l] += wx * row[l];
                }
            }
        }
        let imbalance = grad.iter().map(|g| (g / sum_w).abs()).fold(0.0, f64::max);
        let finish = |alpha: Vec<f64>, weights: Vec<f64>| {
            let ess = sum_w * sum_w / weights.iter().map(|w| w * w).sum::<f64>();
            Ok(WeightSet {
                alpha,
                weights,
                ess,
            })
        };
        if imbalance <= MAIC_BALANCE_TOL {
            return finish(alpha, weights);
        }
        if iteration == MAIC_MAX_ITERATIONS {
            break;
        }

        let hessian = Array2::from_shape_fn((k, k), |(j, l)| {
            if j <= l {
                hessian[j * k + l]
            } else {
                hessian[l * k + j]
            }
        });
        let step = solve_cholesky(&hessian, &grad, 1e-12)
            .map_err(|_| EstimatorError::NoOverlap("singular weighting Hessian".into()))?;

        let mut accepted = false;
        let mut scale = 1.0;
        let mut cand_weights = Vec::with_capacity(n);
        for _ in 0..30 {
            let cand: Vec<f64> = alpha
                .iter()
                .zip(&step)
                .map(|(a, s)| a - scale * s)
                .collect();
            let cand_q = objective(&cand, &mut cand_weights);
            if cand_q.is_finite() && cand_q < q {
                alpha = cand;
                q = cand_q;
                std::mem::swap(&mut weights, &mut cand_weights);
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            // Objective changes fell below float resolution; the contractual
            // balance bound decides whether this point is usable.
            if imbalance <= MAIC_BALANCE_ACCEPT {
                return finish(alpha, weights);
            }
            return Err(EstimatorError::NoOverlap(format!(
                "weight objective stalled with imbalance {imbalance:.3e}"
            )));
        }
        if alpha.iter().map(|a| a * a).sum::<f64>().sqrt() > MAIC_ALPHA_DIVERGED {
            return Err(EstimatorError::NoOverlap(
                "weight coefficients diverged".into(),
            ));
        }
    }
    Err(EstimatorError::NoOverlap(format!(
        "weight solver did not balance within {MAIC_MAX_ITERATIONS} iterations"
    )))
}

/// Simple (outcome on treatment) regression design for one trial.
fn two_group_design(
    treatment: &[u8],
    outcome: &[f64],
    weights: Option<Vec<f64>>,
) -> Result<DesignData, EstimatorError> {
    let n = treatment.len();
    let mut x = Array2::zeros((n, 2));
    for i in 0..n {
        x[(i, 0)] = 1.0;
        x[(i, 1)] = treatment[i] as f64;
    }
    Ok(DesignData::new(x, outcome.to_vec(), weights)?)
}

fn fit_simple(
    treatment: &[u8],
    outcome: &[f64],
    weights: Option<Vec<f64>>,
    family: Family,
    fit: &FitSettings,
) -> Result<GlmFit, EstimatorError> {
    let design = two_group_design(treatment, outcome, weights)?;
    let fitted = match family {
        Family::Logistic => fit_logistic(&design, fit)?,
        Family::Linear => fit_linear(&design, fit)?,
    };
    Ok(fitted)
}

fn column_means(x: ArrayView2<'_, f64>) -> Vec<f64> {
    (0..x.ncols())
        .map(|j| x.column(j).mean().unwrap_or(0.0))
        .collect()
}

/// Weights rescaled to mean one; leaves regression coefficients unchanged and
/// keeps the weighted score on the same scale as an unweighted fit.
fn normalized(weights: &[f64]) -> Vec<f64> {
    let m = mean(weights);
    weights.iter().map(|w| w / m).collect()
}

struct Resample {
    covariates: Array2<f64>,
    treatment: Vec<u8>,
    outcome: Vec<f64>,
}

fn draw_resample(trial: &TrialData, rng: &mut impl Rng) -> Resample {
    let n = trial.n_subjects();
    let k = trial.covariates.ncols();
    let mut covariates = Array2::zeros((n, k));
    let mut treatment = Vec::with_capacity(n);
    let mut outcome = Vec::with_capacity(n);
    for row in 0..n {
        let i = rng.random_range(0..n);
        for j in 0..k {
            covariates[(row, j)] = trial.covariates[(i, j)];
        }
        treatment.push(trial.treatment[i]);
        outcome.push(trial.outcome[i]);
    }
    Resample {
        covariates,
        treatment,
        outcome,
    }
}

/// Runs `point` over `resamples` bootstrap draws of `s1`, collecting the
/// resample estimates in index order. Failed resamples are dropped and
/// counted.
fn bootstrap_se<F>(
    s1: &TrialData,
    settings: &EstimatorSettings,
    method: Method,
    point: F,
) -> Result<(f64, usize), EstimatorError>
where
    F: Fn(&Resample) -> Result<f64, EstimatorError>,
{
    if settings.resamples == 0 {
        return Ok((0.0, 0));
    }
    let mut estimates = Vec::with_capacity(settings.resamples);
    let mut failures = 0;
    for b in 0..settings.resamples {
        let mut rng = bootstrap_rng(
            settings.master_seed,
            settings.replicate,
            method.stream_id(),
            b as u64,
        );
        let resample = draw_resample(s1, &mut rng);
        match point(&resample) {
            Ok(delta) => estimates.push(delta),
            Err(_) => failures += 1,
        }
    }
    if estimates.len() < 2 {
        return Err(EstimatorError::BootstrapFailed(settings.resamples));
    }
    Ok((sample_sd(&estimates), failures))
}

/// MAIC estimate of the active-vs-comparator effect in the S=1 trial,
/// transported to the S=2 covariate means.
///
/// The point estimate is the treatment coefficient of a weighted simple
/// regression on the S=1 data. The bootstrap resamples S=1 subjects with
/// replacement and re-estimates the weights inside every resample.
pub fn maic_estimate(
    s1: &TrialData,
    s2: &TrialData,
    settings: &EstimatorSettings,
) -> Result<EffectEstimate, EstimatorError> {
    let target = column_means(s2.covariates.view());
    let full = maic_weights(s1.covariates.view(), &target)?;
    let fit = fit_simple(
        &s1.treatment,
        &s1.outcome,
        Some(normalized(&full.weights)),
        settings.family,
        &settings.fit,
    )?;
    let delta = fit.coefficients[1];

    let (se, failures) = bootstrap_se(s1, settings, Method::Maic, |resample| {
        let ws = maic_weights_from(resample.covariates.view(), &target, Some(&full.alpha))?;
        let fit = fit_simple(
            &resample.treatment,
            &resample.outcome,
            Some(normalized(&ws.weights)),
            settings.family,
            &settings.fit,
        )?;
        Ok(fit.coefficients[1])
    })?;

    Ok(EffectEstimate::new(Method::Maic, delta, se, failures))
}

/// Design matrix [intercept, covariates..., treatment] for the outcome model.
fn outcome_model_design(covariates: ArrayView2<'_, f64>, treatment: &[u8]) -> Array2<f64> {
    let (n, k) = covariates.dim();
    let mut x = Array2::zeros((n, k + 2));
    for i in 0..n {
        x[(i, 0)] = 1.0;
        for j in 0..k {
            x[(i, 1 + j)] = covariates[(i, j)];
        }
        x[(i, k + 1)] = treatment[i] as f64;
    }
    x
}

/// Counterfactual prediction design for every S=2 subject under one arm.
fn counterfactual_design(covariates: ArrayView2<'_, f64>, treated: bool) -> Array2<f64> {
    let (n, k) = covariates.dim();
    let mut x = Array2::zeros((n, k + 2));
    for i in 0..n {
        x[(i, 0)] = 1.0;
        for j in 0..k {
            x[(i, 1 + j)] = covariates[(i, j)];
        }
        x[(i, k + 1)] = if treated { 1.0 } else { 0.0 };
    }
    x
}

fn gcomp_point(
    covariates: ArrayView2<'_, f64>,
    treatment: &[u8],
    outcome: &[f64],
    s2_covariates: ArrayView2<'_, f64>,
    family: Family,
    fit_settings: &FitSettings,
) -> Result<f64, EstimatorError> {
    let design = DesignData::unweighted(outcome_model_design(covariates, treatment), outcome.to_vec())?;
    let fit = match family {
        Family::Logistic => fit_logistic(&design, fit_settings)?,
        Family::Linear => fit_linear(&design, fit_settings)?,
    };
    let p_active = mean(&predict_mean(&fit, counterfactual_design(s2_covariates, true).view())?);
    let p_control = mean(&predict_mean(
        &fit,
        counterfactual_design(s2_covariates, false).view(),
    )?);
    Ok(match family {
        Family::Logistic => logit(p_active) - logit(p_control),
        Family::Linear => p_active - p_control,
    })
}

/// Parametric G-computation: outcome model fitted to S=1 (treatment plus
/// covariate main effects), counterfactual predictions averaged over the
/// S=2 sample, and the marginal contrast taken on the linear predictor scale.
/// The bootstrap resamples the S=1 data only; S=2 covariates stay fixed.
pub fn gcomp_estimate(
    s1: &TrialData,
    s2: &TrialData,
    settings: &EstimatorSettings,
) -> Result<EffectEstimate, EstimatorError> {
    let delta = gcomp_point(
        s1.covariates.view(),
        &s1.treatment,
        &s1.outcome,
        s2.covariates.view(),
        settings.family,
        &settings.fit,
    )?;
    let (se, failures) = bootstrap_se(s1, settings, Method::Gcomp, |resample| {
        gcomp_point(
            resample.covariates.view(),
            &resample.treatment,
            &resample.outcome,
            s2.covariates.view(),
            settings.family,
            &settings.fit,
        )
    })?;
    Ok(EffectEstimate::new(Method::Gcomp, delta, se, failures))
}

/// Unadjusted two-group contrast within one trial with its model-based
/// standard error: closed-form 2x2 information for binary outcomes, pooled
/// residual variance for continuous ones. Depends on nothing outside `trial`.
pub fn bucher_arm_estimate(
    trial: &TrialData,
    family: Family,
) -> Result<(f64, f64), EstimatorError> {
    match family {
        Family::Logistic => {
            let mut cells = [0.0f64; 4]; // [active events, active non, common events, common non]
            for i in 0..trial.n_subjects() {
                let y = trial.outcome[i];
                if y != 0.0 && y != 1.0 {
                    return Err(EstimatorError::Input(
                        "binary contrast on non-binary outcomes".into(),
                    ));
                }
                let idx = if trial.treatment[i] == 1 { 0 } else { 2 } + if y == 1.0 { 0 } else { 1 };
                cells[idx] += 1.0;
            }
            let [a, b, c, d] = cells;
            if a == 0.0 || b == 0.0 || c == 0.0 || d == 0.0 {
                return Err(EstimatorError::DegenerateArm(format!(
                    "zero cell in 2x2 table [{a}, {b}, {c}, {d}]"
                )));
            }
            let delta = logit(a / (a + b)) - logit(c / (c + d));
            let se = (1.0 / a + 1.0 / b + 1.0 / c + 1.0 / d).sqrt();
            Ok((delta, se))
        }
        Family::Linear => {
            let (mut s1, mut n1, mut s0, mut n0) = (0.0, 0.0, 0.0, 0.0);
            for i in 0..trial.n_subjects() {
                if trial.treatment[i] == 1 {
                    s1 += trial.outcome[i];
                    n1 += 1.0;
                } else {
                    s0 += trial.outcome[i];
                    n0 += 1.0;
                }
            }
            if n1 == 0.0 || n0 == 0.0 {
                return Err(EstimatorError::DegenerateArm("empty arm".into()));
            }
            let (m1, m0) = (s1 / n1, s0 / n0);
            let mut rss = 0.0;
            for i in 0..trial.n_subjects() {
                let fitted = if trial.treatment[i] == 1 { m1 } else { m0 };
                rss += (trial.outcome[i] - fitted).powi(2);
            }
            let sigma2 = rss / (n1 + n0 - 2.0);
            let se = (sigma2 * (1.0 / n1 + 1.0 / n0)).sqrt();
            Ok((m1 - m0, se))
        }
    }
}

/// Bucher-method effect for one trial packaged as an [`EffectEstimate`].
pub fn bucher_estimate(trial: &TrialData, family: Family) -> Result<EffectEstimate, EstimatorError> {
    let (delta, se) = bucher_arm_estimate(trial, family)?;
    Ok(EffectEstimate::new(Method::Bucher, delta, se, 0))
}

/// Anchored comparison of two within-trial effects against the shared
/// comparator: point estimates subtract, variances add, and the interval is
/// Wald-type with an evaluated normal quantile.
pub fn indirect_comparison(ac: &EffectEstimate, bc: &EffectEstimate) -> EffectEstimate {
    EffectEstimate::new(
        ac.method,
        ac.delta_hat - bc.delta_hat,
        (ac.se * ac.se + bc.se * bc.se).sqrt(),
        ac.bootstrap_failures + bc.bootstrap_failures,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgm::{generate_trial, ScenarioConfig, Study, TrialData};
    use crate::stream::{calibration_rng, trial_rng};
    use ndarray::Array2;
    use rand::Rng;

    // ---- 1-D weight oracle: coarse grid plus golden-section refinement ----

    fn golden_section_alpha(values: &[f64], target: f64) -> f64 {
        let q = |alpha: f64| -> f64 { values.iter().map(|v| ((v - target) * alpha).exp()).sum() };
        let (mut lo, mut hi) = (-5.0, 5.0);
        // coarse scan to bracket the minimum
        let mut best = (q(lo), lo);
        let mut t = lo;
        while t <= hi {
            let v = q(t);
            if v < best.0 {
                best = (v, t);
            }
            t += 1e-3;
        }
        lo = best.1 - 2e-3;
        hi = best.1 + 2e-3;
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let a = hi - phi * (hi - lo);
            let b = lo + phi * (hi - lo);
            if q(a) < q(b) {
                hi = b;
            } else {
                lo = a;
            }
        }
        0.5 * (lo + hi)
    }

    fn weighted_mean(values: &[f64], weights: &[f64]) -> f64 {
        let sw: f64 = weights.iter().sum();
        values
            .iter()
            .zip(weights)
            .map(|(v, w)| v * w)
            .sum::<f64>()
            / sw
    }

    #[test]
    fn one_covariate_weights_match_golden_section_oracle() {
        let values = [-1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0];
        let target = 0.5;
        let oracle = golden_section_alpha(&values, target);
        // closed form for this instance: exp(2 alpha) = 3
        assert!((oracle - 3f64.ln() / 2.0).abs() < 1e-6, "oracle {oracle}");

        let mut x = Array2::zeros((10, 1));
        for (i, v) in values.iter().enumerate() {
            x[(i, 0)] = *v;
        }
        let ws = maic_weights(x.view(), &[target]).unwrap();
        assert!((ws.alpha[0] - oracle).abs() < 1e-5);
        assert!((weighted_mean(&values, &ws.weights) - target).abs() < 1e-6);
    }

    #[test]
    fn already_balanced_sample_gets_unit_weights() {
        let mut x = Array2::zeros((6, 2));
        let vals = [
            [1.0, -1.0],
            [-1.0, 1.0],
            [2.0, 0.5],
            [-2.0, -0.5],
            [0.5, 2.0],
            [-0.5, -2.0],
        ];
        for (i, row) in vals.iter().enumerate() {
            x[(i, 0)] = row[0];
            x[(i, 1)] = row[1];
        }
        let ws = maic_weights(x.view(), &[0.0, 0.0]).unwrap();
        assert_eq!(ws.alpha, vec![0.0, 0.0]);
        assert!(ws.weights.iter().all(|w| *w == 1.0));
        assert_eq!(ws.ess, 6.0);
    }

    #[test]
    fn weighted_means_balance_within_tolerance_on_random_problems() {
        let mut rng = calibration_rng(21, 40);
        for case in 0..30 {
            let n = 50 + (case % 4) * 25;
            let k = 1 + case % 3;
            let x = Array2::from_shape_fn((n, k), |_| rng.random::<f64>() * 4.0 - 2.0);
            let target: Vec<f64> = (0..k).map(|_| rng.random::<f64>() - 0.5).collect();
            let ws = maic_weights(x.view(), &target).unwrap();
            for j in 0..k {
                let col: Vec<f64> = x.column(j).to_vec();
                let wm = weighted_mean(&col, &ws.weights);
                assert!(
                    (wm - target[j]).abs() <= 1e-6,
                    "case {case} covariate {j}: weighted mean {wm} vs target {}",
                    target[j]
                );
            }
            assert!(ws.ess >= 1.0 && ws.ess <= n as f64 + 1e-9);
            assert!(ws.weights.iter().all(|w| *w > 0.0 && w.is_finite()));
        }
    }

    #[test]
    fn objective_is_minimal_at_returned_alpha() {
        let mut rng = calibration_rng(22, 41);
        let x = Array2::from_shape_fn((80, 3), |_| rng.random::<f64>() * 2.0 - 1.0);
        let target = [0.2, -0.1, 0.3];
        let ws = maic_weights(x.view(), &target).unwrap();
        let q = |alpha: &[f64]| -> f64 {
            (0..80)
                .map(|i| {
                    (0..3)
                        .map(|j| (x[(i, j)] - target[j]) * alpha[j])
                        .sum::<f64>()
                        .exp()
                })
                .sum()
        };
        let q_star = q(&ws.alpha);
        for _ in 0..50 {
            let mut delta = [0.0; 3];
            let mut norm = 0.0;
            for d in delta.iter_mut() {
                *d = rng.random::<f64>() - 0.5;
                norm += *d * *d;
            }
            let norm = norm.sqrt();
            let perturbed: Vec<f64> = ws
                .alpha
                .iter()
                .zip(&delta)
                .map(|(a, d)| a + 0.01 * d / norm)
                .collect();
            assert!(q(&perturbed) >= q_star);
        }
    }

    #[test]
    fn target_outside_sample_range_is_no_overlap() {
        let mut x = Array2::zeros((5, 1));
        for i in 0..5 {
            x[(i, 0)] = i as f64; // range [0, 4]
        }
        match maic_weights(x.view(), &[7.0]) {
            Err(EstimatorError::NoOverlap(_)) => {}
            other => panic!("expected NoOverlap, got {other:?}"),
        }
    }

    /// Paper-scenario weights at a fixed seed: the covariate shift is severe
    /// enough that the effective sample size collapses. Measured once from
    /// this engine and frozen as a regression bound.
    #[test]
    fn paper_scenario_effective_sample_size_collapses() {
        let config = ScenarioConfig::paper_logistic();
        let s1 = generate_trial(&config, Study::S1, &mut trial_rng(1, 0, 0)).unwrap();
        let s2 = generate_trial(&config, Study::S2, &mut trial_rng(1, 0, 1)).unwrap();
        let ws = maic_weights(
            s1.covariates.view(),
            &column_means(s2.covariates.view()),
        )
        .unwrap();
        let n = s1.n_subjects() as f64;
        assert!(ws.ess > 1.0);
        assert!(
            ws.ess < 0.35 * n,
            "ess {} not severely reduced relative to n {n}",
            ws.ess
        );
    }

    // ---- Bucher ----

    fn trial_from_cells(a: usize, b: usize, c: usize, d: usize) -> TrialData {
        let n = a + b + c + d;
        let mut treatment = Vec::with_capacity(n);
        let mut outcome = Vec::with_capacity(n);
        for (count, t, y) in [(a, 1, 1.0), (b, 1, 0.0), (c, 0, 1.0), (d, 0, 0.0)] {
            for _ in 0..count {
                treatment.push(t);
                outcome.push(y);
            }
        }
        TrialData {
            study: Study::S1,
            covariates: Array2::zeros((n, 1)),
            treatment,
            outcome,
        }
    }

    #[test]
    fn symmetric_table_has_zero_effect() {
        let trial = trial_from_cells(25, 25, 25, 25);
        let (delta, se) = bucher_arm_estimate(&trial, Family::Logistic).unwrap();
        assert_eq!(delta, 0.0);
        assert!((se - 0.4).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_two_by_two() {
        let trial = trial_from_cells(60, 40, 40, 60);
        let (delta, se) = bucher_arm_estimate(&trial, Family::Logistic).unwrap();
        assert!((delta - 0.810_930_216_216_328_8).abs() < 1e-12);
        assert!((se - (2.0f64 / 60.0 + 2.0 / 40.0).sqrt()).abs() < 1e-12);
        assert!((se - 0.2887).abs() < 1e-4);
    }

    #[test]
    fn matches_simple_logistic_fit() {
        let config = ScenarioConfig::paper_logistic();
        let trial = generate_trial(
            &ScenarioConfig {
                n_per_study: 400,
                ..config
            },
            Study::S1,
            &mut trial_rng(4, 0, 0),
        )
        .unwrap();
        let (delta, _) = bucher_arm_estimate(&trial, Family::Logistic).unwrap();
        let fit = fit_simple(
            &trial.treatment,
            &trial.outcome,
            None,
            Family::Logistic,
            &FitSettings::default(),
        )
        .unwrap();
        assert!((delta - fit.coefficients[1]).abs() < 1e-8);
    }

    #[test]
    fn zero_cell_is_degenerate() {
        let trial = trial_from_cells(0, 50, 25, 25);
        assert!(matches!(
            bucher_arm_estimate(&trial, Family::Logistic),
            Err(EstimatorError::DegenerateArm(_))
        ));
    }

    #[test]
    fn linear_contrast_matches_hand_computation() {
        let trial = TrialData {
            study: Study::S2,
            covariates: Array2::zeros((6, 1)),
            treatment: vec![1, 1, 1, 0, 0, 0],
            outcome: vec![3.0, 5.0, 4.0, 1.0, 2.0, 3.0],
        };
        let (delta, se) = bucher_arm_estimate(&trial, Family::Linear).unwrap();
        assert!((delta - 2.0).abs() < 1e-12);
        // pooled variance: rss = 2 + 2 = 4 over n-2 = 4 dof, se = sqrt(1*(2/3))
        assert!((se - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        let fit = fit_simple(
            &trial.treatment,
            &trial.outcome,
            None,
            Family::Linear,
            &FitSettings::default(),
        )
        .unwrap();
        assert!((delta - fit.coefficients[1]).abs() < 1e-12);
    }

    #[test]
    fn depends_only_on_its_own_trial() {
        let trial = trial_from_cells(30, 20, 25, 25);
        let first = bucher_arm_estimate(&trial, Family::Logistic).unwrap();
        // nothing else enters the signature; a second call is bit-identical
        let second = bucher_arm_estimate(&trial, Family::Logistic).unwrap();
        assert_eq!(first, second);
    }

    // ---- indirect comparison ----

    #[test]
    fn cancellation_and_variance_summation() {
        let ac = EffectEstimate::new(Method::Bucher, 0.9, 0.1, 0);
        let bc = EffectEstimate::new(Method::Bucher, 0.9, 0.1, 0);
        let combined = indirect_comparison(&ac, &bc);
        assert_eq!(combined.delta_hat, 0.0);
        assert!((combined.se - 0.02f64.sqrt()).abs() < 1e-12);
        assert!((combined.ci_low + 0.277).abs() < 5e-4);
        assert!((combined.ci_high - 0.277).abs() < 5e-4);
    }

    #[test]
    fn structural_bias_of_unadjusted_comparison() {
        let ac = EffectEstimate::new(Method::Bucher, 0.693, 0.05, 0);
        let bc = EffectEstimate::new(Method::Bucher, 0.900, 0.05, 0);
        let combined = indirect_comparison(&ac, &bc);
        assert!((combined.delta_hat + 0.207).abs() < 1e-12);
    }

    #[test]
    fn swapping_sides_negates_the_estimate() {
        let ac = EffectEstimate::new(Method::Gcomp, 0.4, 0.07, 1);
        let bc = EffectEstimate::new(Method::Gcomp, 0.1, 0.03, 0);
        let fwd = indirect_comparison(&ac, &bc);
        let rev = indirect_comparison(&bc, &ac);
        assert_eq!(fwd.delta_hat, -rev.delta_hat);
        assert_eq!(fwd.se, rev.se);
        assert_eq!(fwd.bootstrap_failures, rev.bootstrap_failures);
    }

    // ---- G-computation ----

    fn tiny_pair() -> (TrialData, TrialData) {
        // six S=1 subjects with one binary covariate; the two single-subject
        // cells pull in opposite directions, so the [1, x, t] MLE is finite
        let mut x1 = Array2::zeros((6, 1));
        for (i, v) in [0.0, 0.0, 1.0, 1.0, 1.0, 0.0].iter().enumerate() {
            x1[(i, 0)] = *v;
        }
        let s1 = TrialData {
            study: Study::S1,
            covariates: x1,
            treatment: vec![1, 1, 0, 0, 1, 0],
            outcome: vec![1.0, 0.0, 1.0, 0.0, 1.0, 1.0],
        };
        let mut x2 = Array2::zeros((4, 1));
        for (i, v) in [1.0, 0.0, 1.0, 1.0].iter().enumerate() {
            x2[(i, 0)] = *v;
        }
        let s2 = TrialData {
            study: Study::S2,
            covariates: x2,
            treatment: vec![1, 0, 1, 0],
            outcome: vec![1.0, 0.0, 1.0, 0.0],
        };
        (s1, s2)
    }

    #[test]
    fn small_sample_marginals_match_exhaustive_averaging() {
        let (s1, s2) = tiny_pair();
        let settings = EstimatorSettings::new(Family::Logistic, 1, 0, 0);
        let estimate = gcomp_estimate(&s1, &s2, &settings).unwrap();

        // hand route: fit, then average expit over the four S=2 subjects
        let design = DesignData::unweighted(
            outcome_model_design(s1.covariates.view(), &s1.treatment),
            s1.outcome.clone(),
        )
        .unwrap();
        let fit = fit_logistic(&design, &FitSettings::default()).unwrap();
        let [b0, bx, bt] = [fit.coefficients[0], fit.coefficients[1], fit.coefficients[2]];
        let mut p1 = 0.0;
        let mut p0 = 0.0;
        for i in 0..4 {
            let x = s2.covariates[(i, 0)];
            p1 += crate::stats::expit(b0 + bx * x + bt) / 4.0;
            p0 += crate::stats::expit(b0 + bx * x) / 4.0;
        }
        let by_hand = logit(p1) - logit(p0);
        assert!(
            (estimate.delta_hat - by_hand).abs() < 1e-10,
            "gcomp {} vs hand {by_hand}",
            estimate.delta_hat
        );
    }

    #[test]
    fn linear_family_collapses_to_the_fitted_coefficient() {
        let config = ScenarioConfig {
            n_per_study: 500,
            ..ScenarioConfig::paper_linear()
        };
        let s1 = generate_trial(&config, Study::S1, &mut trial_rng(6, 0, 0)).unwrap();
        let s2 = generate_trial(&config, Study::S2, &mut trial_rng(6, 0, 1)).unwrap();
        let settings = EstimatorSettings::new(Family::Linear, 6, 0, 0);
        let estimate = gcomp_estimate(&s1, &s2, &settings).unwrap();

        let design = DesignData::unweighted(
            outcome_model_design(s1.covariates.view(), &s1.treatment),
            s1.outcome.clone(),
        )
        .unwrap();
        let fit = fit_linear(&design, &FitSettings::default()).unwrap();
        let bt = *fit.coefficients.last().unwrap();
        assert!(
            (estimate.delta_hat - bt).abs() < 1e-10,
            "delta {} vs coefficient {bt}",
            estimate.delta_hat
        );
    }

    #[test]
    fn binary_family_attenuates_the_conditional_coefficient() {
        let config = ScenarioConfig::paper_logistic();
        let s1 = generate_trial(&config, Study::S1, &mut trial_rng(7, 0, 0)).unwrap();
        let s2 = generate_trial(&config, Study::S2, &mut trial_rng(7, 0, 1)).unwrap();
        let settings = EstimatorSettings::new(Family::Logistic, 7, 0, 0);
        let estimate = gcomp_estimate(&s1, &s2, &settings).unwrap();

        let design = DesignData::unweighted(
            outcome_model_design(s1.covariates.view(), &s1.treatment),
            s1.outcome.clone(),
        )
        .unwrap();
        let fit = fit_logistic(&design, &FitSettings::default()).unwrap();
        let bt = *fit.coefficients.last().unwrap();
        assert!(
            estimate.delta_hat.abs() < bt.abs(),
            "marginal {} should be attenuated vs conditional {bt}",
            estimate.delta_hat
        );
    }

    // ---- bootstrap behavior ----

    #[test]
    fn bootstrap_is_deterministic_given_the_stream_key() {
        let config = ScenarioConfig {
            n_per_study: 300,
            ..ScenarioConfig::paper_logistic()
        };
        let s1 = generate_trial(&config, Study::S1, &mut trial_rng(8, 3, 0)).unwrap();
        let s2 = generate_trial(&config, Study::S2, &mut trial_rng(8, 3, 1)).unwrap();
        let settings = EstimatorSettings::new(Family::Logistic, 8, 3, 50);
        let a = maic_estimate(&s1, &s2, &settings).unwrap();
        let b = maic_estimate(&s1, &s2, &settings).unwrap();
        assert_eq!(a, b);
        assert!(a.se > 0.0);

        let other = EstimatorSettings {
            replicate: 4,
            ..settings
        };
        let c = maic_estimate(&s1, &s2, &other).unwrap();
        assert_eq!(a.delta_hat, c.delta_hat); // the point estimate ignores the seed
        assert_ne!(a.se, c.se);
    }

    #[test]
    fn failed_resamples_are_counted_not_fatal() {
        // Rare events: many resamples produce a zero-event arm, which the
        // two-group fit rejects as separation.
        let mut treatment = vec![1u8; 12];
        treatment[6..].fill(0);
        let outcome = vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let mut x1 = Array2::zeros((12, 1));
        for i in 0..12 {
            x1[(i, 0)] = (i as f64 - 5.5) / 5.0;
        }
        let s1 = TrialData {
            study: Study::S1,
            covariates: x1,
            treatment,
            outcome,
        };
        let mut x2 = Array2::zeros((4, 1));
        for i in 0..4 {
            x2[(i, 0)] = (i as f64 - 1.5) * 0.01;
        }
        let s2 = TrialData {
            study: Study::S2,
            covariates: x2,
            treatment: vec![1, 1, 0, 0],
            outcome: vec![1.0, 0.0, 1.0, 0.0],
        };
        let settings = EstimatorSettings::new(Family::Logistic, 9, 0, 200);
        let estimate = maic_estimate(&s1, &s2, &settings).unwrap();
        assert!(
            estimate.bootstrap_failures > 0,
            "expected some degenerate resamples"
        );
        assert!(estimate.se.is_finite() && estimate.se > 0.0);
    }

    #[test]
    fn effect_estimate_interval_brackets_the_point() {
        let e = EffectEstimate::new(Method::Maic, 0.25, 0.1, 0);
        assert!(e.ci_low <= e.delta_hat && e.delta_hat <= e.ci_high);
        assert!((e.ci_high - e.delta_hat - z_975() * 0.1).abs() < 1e-12);
        assert!(e.covers(0.25));
        assert!(!e.covers(1.0));
    }
}

//! Generalized linear model fitting: logistic and linear families, optionally
//! weighted, plus the score/likelihood primitives the estimators depend on.
//!
//! Logistic fits use Newton-Raphson on the canonical link (IRLS) with
//! step-halving whenever a step would decrease the log-likelihood. Linear fits
//! solve the weighted normal equations directly. Both work on a design whose
//! columns are internally scaled to unit Euclidean norm, so the gradient
//! tolerance and the pivot tolerance are scale-free.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{expit, softplus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Logistic,
    Linear,
}

#[derive(Debug, Error)]
pub enum LinmodError {
    /// Iteration limit hit or steps stopped improving the likelihood while the
    /// gradient is still large. With clean designs this signals
    /// quasi-separation: the MLE drifts to infinity.
    #[error("fit did not converge after {iterations} iterations (scaled gradient sup-norm {gradient_norm:.3e}); possible quasi-separation")]
    NonConvergence {
        iterations: usize,
        gradient_norm: f64,
    },
    #[error("normal-equations matrix is singular within pivot tolerance")]
    SingularDesign,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid design data: {0}")]
    InvalidData(String),
}

/// Tolerances and iteration limits for the fitters.
#[derive(Debug, Clone, Copy)]
pub struct FitSettings {
    /// Convergence threshold on the sup-norm of the score after scaling
    /// design columns to unit norm.
    pub gradient_tol: f64,
    pub max_iterations: usize,
    /// Maximum number of times a Newton step is halved before giving up.
    pub max_step_halvings: usize,
    /// Relative pivot threshold below which the Cholesky factorization of the
    /// normal-equations matrix is declared singular.
    pub pivot_tol: f64,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings {
            gradient_tol: 1e-8,
            max_iterations: 50,
            max_step_halvings: 10,
            pivot_tol: 1e-12,
        }
    }
}

/// A regression problem: response, design matrix (including any intercept
/// column), and optional per-subject weights.
#[derive(Debug, Clone)]
pub struct DesignData {
    features: Array2<f64>,
    response: Vec<f64>,
    weights: Option<Vec<f64>>,
}

impl DesignData {
    pub fn new(
        features: Array2<f64>,
        response: Vec<f64>,
        weights: Option<Vec<f64>>,
    ) -> Result<Self, LinmodError> {
        let n = features.nrows();
        if n == 0 || features.ncols() == 0 {
            return Err(LinmodError::InvalidData("empty design".into()));
        }
        if response.len() != n {
            return Err(LinmodError::DimensionMismatch(format!(
                "{} feature rows but {} responses",
                n,
                response.len()
            )));
        }
        if !features.iter().all(|v| v.is_finite()) || !response.iter().all(|v| v.is_finite()) {
            return Err(LinmodError::InvalidData(
                "non-finite value in design".into(),
            ));
        }
        if let Some(w) = &weights {
            if w.len() != n {
                return Err(LinmodError::DimensionMismatch(format!(
                    "{} feature rows but {} weights",
                    n,
                    w.len()
                )));
            }
            if !w.iter().all(|v| v.is_finite() && *v >= 0.0) {
                return Err(LinmodError::InvalidData(
                    "weights must be finite and non-negative".into(),
                ));
            }
            if w.iter().filter(|v| **v > 0.0).count() < 2 {
                return Err(LinmodError::InvalidData(
                    "need at least two rows with positive weight".into(),
                ));
            }
        }
        Ok(DesignData {
            features,
            response,
            weights,
        })
    }

    pub fn unweighted(features: Array2<f64>, response: Vec<f64>) -> Result<Self, LinmodError> {
        Self::new(features, response, None)
    }

    pub fn n_rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_regressors(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    /// Weight of row `i` (1.0 when no weights were supplied).
    pub fn weight(&self, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[i])
    }

    fn check_binary_response(&self) -> Result<(), LinmodError> {
        if self.response.iter().any(|y| *y != 0.0 && *y != 1.0) {
            return Err(LinmodError::InvalidData(
                "logistic family requires responses exactly 0 or 1".into(),
            ));
        }
        Ok(())
    }
}

/// A fitted model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GlmFit {
    pub coefficients: Vec<f64>,
    pub family: Family,
    pub converged: bool,
    pub iterations: usize,
    /// Sup-norm of the score at the returned coefficients, after scaling
    /// design columns to unit norm.
    pub final_gradient_norm: f64,
    /// Weighted binomial log-likelihood for the logistic family; profiled
    /// Gaussian log-likelihood for the linear family.
    pub log_likelihood: f64,
}

/// Contiguous row-major copy/view of a feature matrix for the hot loops.
fn feature_rows(features: &Array2<f64>) -> std::borrow::Cow<'_, [f64]> {
    match features.as_slice() {
        Some(s) => std::borrow::Cow::Borrowed(s),
        None => std::borrow::Cow::Owned(features.iter().copied().collect()),
    }
}

#[inline]
fn dot(row: &[f64], beta: &[f64]) -> f64 {
    row.iter().zip(beta).map(|(x, b)| x * b).sum()
}

/// Weighted binomial log-likelihood at `beta`.
pub fn logistic_log_likelihood(data: &DesignData, beta: &[f64]) -> f64 {
    let rows = feature_rows(&data.features);
    loglik_slice(&rows, &data.response, data.weights.as_deref(), beta)
}

fn loglik_slice(rows: &[f64], response: &[f64], weights: Option<&[f64]>, beta: &[f64]) -> f64 {
    let p = beta.len();
    let mut ll = 0.0;
    for (i, row) in rows.chunks_exact(p).enumerate() {
        let eta = dot(row, beta);
        let w = weights.map_or(1.0, |w| w[i]);
        ll += w * (response[i] * eta - softplus(eta));
    }
    ll
}

/// Weighted score vector (gradient of the binomial log-likelihood) at `beta`:
/// one component per regressor, unscaled.
pub fn logistic_score(data: &DesignData, beta: &[f64]) -> Vec<f64> {
    let rows = feature_rows(&data.features);
    score_slice(&rows, &data.response, data.weights.as_deref(), beta)
}

fn score_slice(rows: &[f64], response: &[f64], weights: Option<&[f64]>, beta: &[f64]) -> Vec<f64> {
    let p = beta.len();
    let mut score = vec![0.0; p];
    for (i, row) in rows.chunks_exact(p).enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        let resid = w * (response[i] - expit(dot(row, beta)));
        for (s, x) in score.iter_mut().zip(row) {
            *s += resid * x;
        }
    }
    score
}

/// Fits that converge only because residuals vanish under expit are
/// separation drift: the score criterion is met once |eta| exceeds about
/// 18.4 + ln(n)/2, whatever the sample size. Real fits with at least one
/// event and one non-event per covariate pattern stay below |logit(p)|,
/// which needs p < 4e-8 to cross this line.
const ETA_SATURATION: f64 = 17.0;

/// One fused pass: log-likelihood, score, maximum |eta|, and (optionally) the
/// information matrix at `beta`.
fn logistic_state(
    rows: &[f64],
    response: &[f64],
    weights: Option<&[f64]>,
    beta: &[f64],
    info: Option<&mut [f64]>,
) -> (f64, Vec<f64>, f64) {
    let p = beta.len();
    let mut loglik = 0.0;
    let mut score = vec![0.0; p];
    let mut max_eta = 0.0f64;
    if let Some(info) = info {
        info.fill(0.0);
        for (i, row) in rows.chunks_exact(p).enumerate() {
            let eta = dot(row, beta);
            let mu = expit(eta);
            let w = weights.map_or(1.0, |w| w[i]);
            loglik += w * (response[i] * eta - softplus(eta));
            max_eta = max_eta.max(eta.abs());
            let resid = w * (response[i] - mu);
            let wl = w * mu * (1.0 - mu);
            for j in 0..p {
                score[j] += resid * row[j];
                let wx = wl * row[j];
                for l in j..p {
                    info[j * p + l] += wx * row[l];
                }
            }
        }
    } else {
        for (i, row) in rows.chunks_exact(p).enumerate() {
            let eta = dot(row, beta);
            let w = weights.map_or(1.0, |w| w[i]);
            loglik += w * (response[i] * eta - softplus(eta));
            max_eta = max_eta.max(eta.abs());
            let resid = w * (response[i] - expit(eta));
            for (s, x) in score.iter_mut().zip(row) {
                *s += resid * x;
            }
        }
    }
    (loglik, score, max_eta)
}

fn mirror_upper(info: &[f64], p: usize) -> Array2<f64> {
    Array2::from_shape_fn((p, p), |(j, l)| {
        if j <= l {
            info[j * p + l]
        } else {
            info[l * p + j]
        }
    })
}

/// Maximum-likelihood logistic regression via IRLS with step-halving.
///
/// Quasi-separated data is reported as [`LinmodError::NonConvergence`] rather
/// than returned as a fit with drifting coefficients.
pub fn fit_logistic(data: &DesignData, settings: &FitSettings) -> Result<GlmFit, LinmodError> {
    data.check_binary_response()?;
    let p = data.n_regressors();
    let norms = column_norms(&data.features)?;
    let rows = feature_rows(&data.features);
    let response = data.response.as_slice();
    let weights = data.weights.as_deref();

    let mut beta = vec![0.0; p];
    let mut info = vec![0.0; p * p];
    let (mut loglik, mut score, mut max_eta) =
        logistic_state(&rows, response, weights, &beta, Some(&mut info));
    let mut grad_norm = scaled_sup_norm(&score, &norms);
    let mut iterations = 0;
    let mut converged = grad_norm <= settings.gradient_tol;

    while !converged && iterations < settings.max_iterations {
        if !grad_norm.is_finite() || !loglik.is_finite() {
            return Err(LinmodError::NonConvergence {
                iterations,
                gradient_norm: grad_norm,
            });
        }
        // A singular information matrix on the first iteration means the
        // design itself is rank-deficient; after successful steps it means
        // the working weights have collapsed, which is how separation drift
        // surfaces.
        let delta = match solve_cholesky(&mirror_upper(&info, p), &score, settings.pivot_tol) {
            Ok(d) => d,
            Err(LinmodError::SingularDesign) if iterations > 0 => {
                return Err(LinmodError::NonConvergence {
                    iterations,
                    gradient_norm: grad_norm,
                })
            }
            Err(e) => return Err(e),
        };

        let mut accepted = false;
        let mut scale = 1.0;
        for _ in 0..=settings.max_step_halvings {
            let cand: Vec<f64> = beta
                .iter()
                .zip(&delta)
                .map(|(b, d)| b + scale * d)
                .collect();
            let cand_ll = loglik_slice(&rows, response, weights, &cand);
            if cand_ll.is_finite() && cand_ll > loglik {
                beta = cand;
                loglik = cand_ll;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        iterations += 1;
        if !accepted {
            // Near the optimum the likelihood gain of a step falls below
            // float resolution; let the score decide on the full step instead.
            let cand: Vec<f64> = beta.iter().zip(&delta).map(|(b, d)| b + d).collect();
            let cand_score = score_slice(&rows, response, weights, &cand);
            let cand_norm = scaled_sup_norm(&cand_score, &norms);
            let cand_ll = loglik_slice(&rows, response, weights, &cand);
            let slack = loglik.abs().max(1.0) * 1e-12;
            if !(cand_norm.is_finite() && cand_norm < grad_norm && cand_ll >= loglik - slack) {
                converged = grad_norm <= settings.gradient_tol;
                break;
            }
            beta = cand;
        }
        let state = logistic_state(&rows, response, weights, &beta, Some(&mut info));
        loglik = state.0;
        score = state.1;
        max_eta = state.2;
        grad_norm = scaled_sup_norm(&score, &norms);
        converged = grad_norm <= settings.gradient_tol;
    }

    // A zero score reached only by saturating fitted probabilities is the
    // float shadow of an infinite MLE: treat it as separation, not success.
    if !converged || max_eta > ETA_SATURATION {
        return Err(LinmodError::NonConvergence {
            iterations,
            gradient_norm: grad_norm,
        });
    }

    // One polishing Newton step: quadratic convergence makes the remaining
    // score essentially zero, which downstream exactness checks rely on.
    if let Ok(delta) = solve_cholesky(&mirror_upper(&info, p), &score, settings.pivot_tol) {
        let cand: Vec<f64> = beta.iter().zip(&delta).map(|(b, d)| b + d).collect();
        let (cand_ll, cand_score, cand_eta) =
            logistic_state(&rows, response, weights, &cand, None);
        let cand_norm = scaled_sup_norm(&cand_score, &norms);
        if cand_norm.is_finite()
            && cand_norm < grad_norm
            && cand_ll.is_finite()
            && cand_eta <= ETA_SATURATION
        {
            beta = cand;
            grad_norm = cand_norm;
            loglik = cand_ll;
        }
    }

    Ok(GlmFit {
        coefficients: beta,
        family: Family::Logistic,
        converged: true,
        iterations,
        final_gradient_norm: grad_norm,
        log_likelihood: loglik,
    })
}

/// Weighted least squares via the normal equations.
pub fn fit_linear(data: &DesignData, settings: &FitSettings) -> Result<GlmFit, LinmodError> {
    let p = data.n_regressors();
    let norms = column_norms(&data.features)?;
    let rows = feature_rows(&data.features);
    let weights = data.weights.as_deref();

    let mut gram = vec![0.0; p * p];
    let mut xtwy = vec![0.0; p];
    for (i, row) in rows.chunks_exact(p).enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        let wy = w * data.response[i];
        for j in 0..p {
            let wx = w * row[j];
            xtwy[j] += wy * row[j];
            for l in j..p {
                gram[j * p + l] += wx * row[l];
            }
        }
    }
    let beta = solve_cholesky(&mirror_upper(&gram, p), &xtwy, settings.pivot_tol)?;

    let mut weighted_rss = 0.0;
    let mut sum_w = 0.0;
    let mut score = vec![0.0; p];
    for (i, row) in rows.chunks_exact(p).enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        let resid = data.response[i] - dot(row, &beta);
        weighted_rss += w * resid * resid;
        sum_w += w;
        for (s, x) in score.iter_mut().zip(row) {
            *s += w * resid * x;
        }
    }
    let grad_norm = scaled_sup_norm(&score, &norms);
    let sigma2 = (weighted_rss / sum_w).max(f64::MIN_POSITIVE);
    let loglik = -0.5 * sum_w * ((2.0 * std::f64::consts::PI * sigma2).ln() + 1.0);

    Ok(GlmFit {
        coefficients: beta,
        family: Family::Linear,
        converged: true,
        iterations: 1,
        final_gradient_norm: grad_norm,
        log_likelihood: loglik,
    })
}

/// Mean response per row of `features`: expit of the linear predictor for the
/// logistic family, the linear predictor itself for the linear family.
pub fn predict_mean(fit: &GlmFit, features: ArrayView2<'_, f64>) -> Result<Vec<f64>, LinmodError> {
    if features.ncols() != fit.coefficients.len() {
        return Err(LinmodError::DimensionMismatch(format!(
            "{} feature columns but {} coefficients",
            features.ncols(),
            fit.coefficients.len()
        )));
    }
    let collected;
    let rows: &[f64] = match features.as_slice() {
        Some(s) => s,
        None => {
            collected = features.iter().copied().collect::<Vec<f64>>();
            &collected
        }
    };
    let p = fit.coefficients.len();
    let mut out = Vec::with_capacity(features.nrows());
    for row in rows.chunks_exact(p) {
        let eta = dot(row, &fit.coefficients);
        out.push(match fit.family {
            Family::Logistic => expit(eta),
            Family::Linear => eta,
        });
    }
    Ok(out)
}

fn column_norms(x: &Array2<f64>) -> Result<Vec<f64>, LinmodError> {
    let mut norms = Vec::with_capacity(x.ncols());
    for col in x.columns() {
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(LinmodError::SingularDesign);
        }
        norms.push(norm);
    }
    Ok(norms)
}

fn scaled_sup_norm(score: &[f64], norms: &[f64]) -> f64 {
    score
        .iter()
        .zip(norms)
        .map(|(s, n)| (s / n).abs())
        .fold(0.0, f64::max)
}

/// Solves `a x = b` for symmetric positive-definite `a` by Cholesky
/// factorization, scaling to unit diagonal first so the pivot tolerance is
/// relative. Never falls back to a pseudo-inverse.
pub(crate) fn solve_cholesky(
    a: &Array2<f64>,
    b: &[f64],
    pivot_tol: f64,
) -> Result<Vec<f64>, LinmodError> {
    let p = a.nrows();
    let mut scale = vec![0.0; p];
    for j in 0..p {
        let d = a[(j, j)];
        if !(d.is_finite() && d > 0.0) {
            return Err(LinmodError::SingularDesign);
        }
        scale[j] = d.sqrt();
    }

    // Cholesky of the correlation-like matrix a_jk / (scale_j scale_k).
    let mut l = vec![0.0; p * p];
    for j in 0..p {
        for k in j..p {
            let mut v = a[(k, j)] / (scale[k] * scale[j]);
            for m in 0..j {
                v -= l[k * p + m] * l[j * p + m];
            }
            if k == j {
                if !v.is_finite() || v <= pivot_tol {
                    return Err(LinmodError::SingularDesign);
                }
                l[j * p + j] = v.sqrt();
            } else {
                l[k * p + j] = v / l[j * p + j];
            }
        }
    }

    // Forward then back substitution on the scaled system.
    let mut y: Vec<f64> = (0..p).map(|j| b[j] / scale[j]).collect();
    for j in 0..p {
        for m in 0..j {
            y[j] -= l[j * p + m] * y[m];
        }
        y[j] /= l[j * p + j];
    }
    for j in (0..p).rev() {
        for m in (j + 1)..p {
            y[j] -= l[m * p + j] * y[m];
        }
        y[j] /= l[j * p + j];
    }
    // Undo the diagonal scaling only once the solve is complete.
    for j in 0..p {
        y[j] /= scale[j];
    }
    Ok(y)
}

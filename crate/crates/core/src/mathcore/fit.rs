//! Weighted straight-line regression and the two escape-time models.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Result of a weighted least-squares line fit `y = a + b x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit<T> {
    pub intercept: T,
    pub slope: T,
    /// Minimised `Σ w_i (y_i − a − b x_i)²`.
    pub chi_squared: T,
    /// Standard errors treating `w_i` as inverse variances.
    pub intercept_stderr: T,
    pub slope_stderr: T,
}

impl<T: Scalar> LineFit<T> {
    pub fn predict(&self, x: T) -> T {
        self.intercept + self.slope * x
    }
}

/// Minimises `Σ w_i (y_i − a − b x_i)²` in closed form.
pub fn weighted_linfit<T: Scalar>(xs: &[T], ys: &[T], weights: &[T]) -> Result<LineFit<T>> {
    let n = xs.len();
    if ys.len() != n || weights.len() != n {
        return Err(Error::Dimension(format!(
            "fit inputs have lengths {n}, {}, {}",
            ys.len(),
            weights.len()
        )));
    }
    if n < 3 {
        return Err(Error::Dimension(format!("fit needs at least 3 points, got {n}")));
    }
    if let Some(w) = weights.iter().find(|w| !(**w > T::zero() && w.is_finite())) {
        return Err(Error::Validation(format!("fit weights must be positive, got {w}")));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Validation("fit data must be finite".into()));
    }

    let sw: T = weights.iter().copied().sum();
    let xbar = xs.iter().zip(weights).map(|(&x, &w)| w * x).sum::<T>() / sw;
    let ybar = ys.iter().zip(weights).map(|(&y, &w)| w * y).sum::<T>() / sw;
    let (mut sxx, mut sxy) = (T::zero(), T::zero());
    for ((&x, &y), &w) in xs.iter().zip(ys).zip(weights) {
        sxx += w * (x - xbar) * (x - xbar);
        sxy += w * (x - xbar) * (y - ybar);
    }
    let spread = xs.iter().fold(T::zero(), |m, &x| m.max((x - xs[0]).abs()));
    if sxx <= T::zero() || spread <= T::epsilon() * xs[0].abs().max(T::one()) {
        return Err(Error::SingularDesign("all abscissae are identical".into()));
    }
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let chi_squared = xs
        .iter()
        .zip(ys)
        .zip(weights)
        .map(|((&x, &y), &w)| {
            let r = y - intercept - slope * x;
            w * r * r
        })
        .sum();
    let slope_var = T::one() / sxx;
    let intercept_var = T::one() / sw + xbar * xbar / sxx;
    Ok(LineFit {
        intercept,
        slope,
        chi_squared,
        intercept_stderr: intercept_var.sqrt(),
        slope_stderr: slope_var.sqrt(),
    })
}

/// Functional form of an escape-time model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// `log τ = a + b log γ`.
    PowerLaw,
    /// `log τ = a + b γ`.
    KramersExponential,
}

impl ModelKind {
    /// Regressor for this model at dissipation `gamma`.
    pub fn abscissa<T: Scalar>(self, gamma: T) -> T {
        match self {
            ModelKind::PowerLaw => gamma.ln(),
            ModelKind::KramersExponential => gamma,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::PowerLaw => "power_law",
            ModelKind::KramersExponential => "kramers_exponential",
        }
    }
}

/// Number of fitted coefficients in every model.
pub const MODEL_COEFFICIENTS: usize = 2;

/// A fitted escape-time model in log-time space.
///
/// Kramers parameters (barrier, curvature, attempt time) appear only through
/// the composite intercept and slope and are not separated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport<T> {
    pub model_kind: ModelKind,
    pub intercept: T,
    pub slope: T,
    pub intercept_stderr: T,
    pub slope_stderr: T,
    pub chi_squared: T,
    /// `χ² + 2k` with `k` = [`MODEL_COEFFICIENTS`].
    pub aic: T,
    /// Per-point `(observed, fitted)` values of `log τ`.
    pub point_residuals: Vec<(T, T)>,
}

impl<T: Scalar> FitReport<T> {
    /// Predicted escape time (not its logarithm) at dissipation `gamma`.
    pub fn predict_tau(&self, gamma: T) -> T {
        (self.intercept + self.slope * self.model_kind.abscissa(gamma)).exp()
    }
}

/// How per-point weights are derived from seed statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// `w = (mean/std)²`, the inverse variance of `log τ` to first order.
    #[default]
    RelativeError,
    /// Ordinary least squares.
    Unit,
}

/// Fits `model` to per-level mean escape times.
///
/// `stds` is only consulted for [`Weighting::RelativeError`]; a level with a
/// zero standard deviation makes the whole fit fall back to unit weights.
pub fn fit_escape_model<T: Scalar>(
    model: ModelKind,
    gammas: &[T],
    means: &[T],
    stds: &[T],
    weighting: Weighting,
) -> Result<FitReport<T>> {
    if gammas.len() != means.len() || (weighting == Weighting::RelativeError && stds.len() != means.len()) {
        return Err(Error::Dimension("escape fit inputs differ in length".into()));
    }
    if let Some(m) = means.iter().find(|m| !(**m > T::zero())) {
        return Err(Error::Validation(format!("escape times must be positive, got {m}")));
    }
    if model == ModelKind::PowerLaw && gammas.iter().any(|g| !(*g > T::zero())) {
        return Err(Error::Validation("power-law fit needs gamma > 0".into()));
    }
    let xs: Vec<T> = gammas.iter().map(|&g| model.abscissa(g)).collect();
    let ys: Vec<T> = means.iter().map(|m| m.ln()).collect();
    let weights: Vec<T> = match weighting {
        Weighting::RelativeError if stds.iter().all(|s| *s > T::zero()) => means
            .iter()
            .zip(stds)
            .map(|(&m, &s)| (m / s) * (m / s))
            .collect(),
        _ => vec![T::one(); xs.len()],
    };
    let line = weighted_linfit(&xs, &ys, &weights)?;
    let point_residuals = xs.iter().zip(&ys).map(|(&x, &y)| (y, line.predict(x))).collect();
    Ok(FitReport {
        model_kind: model,
        intercept: line.intercept,
        slope: line.slope,
        intercept_stderr: line.intercept_stderr,
        slope_stderr: line.slope_stderr,
        chi_squared: line.chi_squared,
        aic: line.chi_squared + T::of_usize(2 * MODEL_COEFFICIENTS),
        point_residuals,
    })
}

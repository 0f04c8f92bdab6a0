//! Passive isotropic Gaussian-mixture probe with a shared learned precision.
//!
//! The probe owns `K` prototype means and `log β`. Its negative log-likelihood
//! is the full per-sample mean
//!
//! ```text
//! NLL = mean_z [ −LSE_k(−β/2 ‖z − μ_k‖²) + log K + d/2 log 2π − d/2 log β ]
//! ```
//!
//! whose `−d/2 log β` term keeps the learned precision finite.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathcore::{covariance, squared_distance, sym_eigen, DenseMatrix};
use crate::scalar::Scalar;

/// The probe's learnable state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmProbeState<T> {
    /// `K x d` prototype means, one per row.
    pub means: DenseMatrix<T>,
    pub log_precision: T,
}

/// Probe hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub k_probe: usize,
    pub lr_means: f64,
    pub lr_logbeta: f64,
    pub log_beta_init: f64,
    /// Prototype jitter scale; `None` means `1e-3 · sqrt(λ_max)` of the data.
    pub init_spread: Option<f64>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            k_probe: 10,
            lr_means: 5e-3,
            lr_logbeta: 1e-2,
            log_beta_init: -2.5,
            init_spread: None,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_probe == 0 {
            return Err(Error::Config("k_probe must be at least 1".into()));
        }
        for (name, lr) in [("lr_means", self.lr_means), ("lr_logbeta", self.lr_logbeta)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {lr}")));
            }
        }
        if !self.log_beta_init.is_finite() {
            return Err(Error::Config("log_beta_init must be finite".into()));
        }
        if let Some(s) = self.init_spread {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("init_spread must be non-negative, got {s}")));
            }
        }
        Ok(())
    }
}

/// One sample of a criticality trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalityReading {
    pub step: usize,
    pub log_beta: f64,
    /// `+∞` when the latent covariance is degenerate.
    pub log_beta_c: f64,
    pub log_ratio: f64,
    pub nc1: Option<f64>,
    pub order_parameter: f64,
}

impl CriticalityReading {
    pub fn new(step: usize, log_beta: f64, log_beta_c: f64, nc1: Option<f64>, order_parameter: f64) -> Self {
        Self {
            step,
            log_beta,
            log_beta_c,
            log_ratio: log_beta - log_beta_c,
            nc1,
            order_parameter,
        }
    }

    /// True when the latent covariance had no positive eigenvalue.
    pub fn degenerate(&self) -> bool {
        self.log_beta_c == f64::INFINITY
    }
}

/// Analytic gradient of the NLL.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeGradient<T> {
    pub means: DenseMatrix<T>,
    /// `∂NLL/∂log β`.
    pub log_beta: T,
}

impl<T: Scalar> GmmProbeState<T> {
    pub fn new(means: DenseMatrix<T>, log_precision: T) -> Result<Self> {
        if means.rows() == 0 || means.cols() == 0 {
            return Err(Error::Validation("probe needs K >= 1 and d >= 1".into()));
        }
        if !log_precision.is_finite() {
            return Err(Error::Validation("log precision must be finite".into()));
        }
        Ok(Self {
            means,
            log_precision,
        })
    }

    /// All `k` prototypes placed exactly at `center`.
    pub fn collapsed(center: &[T], k: usize, log_precision: T) -> Result<Self> {
        let rows = vec![center.to_vec(); k];
        Self::new(DenseMatrix::from_rows(&rows)?, log_precision)
    }

    /// Prototypes at the sample mean plus isotropic Gaussian jitter.
    pub fn near_symmetric<R: Rng + ?Sized>(
        samples: &DenseMatrix<T>,
        config: &ProbeConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let spread = match config.init_spread {
            Some(s) => T::of(s),
            None => {
                let lam = sym_eigen(&covariance(samples)?)?.max();
                T::of(1e-3) * lam.max(T::zero()).sqrt()
            }
        };
        let center = samples.column_means();
        let mut state = Self::collapsed(&center, config.k_probe, T::of(config.log_beta_init))?;
        for x in state.means.as_mut_slice() {
            let g: f64 = StandardNormal.sample(rng);
            *x += spread * T::of(g);
        }
        Ok(state)
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.means.rows()
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.means.cols()
    }

    #[inline]
    pub fn beta(&self) -> T {
        self.log_precision.exp()
    }

    /// Returns `Err` if the sample dimension differs from the probe's.
    fn check_samples(&self, samples: &DenseMatrix<T>) -> Result<()> {
        if samples.cols() != self.d() {
            return Err(Error::Dimension(format!(
                "samples have dimension {}, probe has {}",
                samples.cols(),
                self.d()
            )));
        }
        if samples.rows() == 0 {
            return Err(Error::Dimension("empty sample set".into()));
        }
        Ok(())
    }
}

/// `1/λ_max(cov)`.
pub fn beta_c<T: Scalar>(cov: &DenseMatrix<T>) -> Result<T> {
    let lam = sym_eigen(cov)?.max();
    if !(lam > T::zero()) {
        return Err(Error::DegenerateCovariance {
            lambda_max: lam.as_f64(),
        });
    }
    Ok(T::one() / lam)
}

/// Fills `logits` with `−β/2 ‖z − μ_k‖²` and `dist` with `‖z − μ_k‖²`,
/// returning the log-sum-exp of the logits.
fn row_logits<T: Scalar>(state: &GmmProbeState<T>, z: &[T], logits: &mut [T], dist: &mut [T]) -> T {
    let half_beta = state.beta() * T::of(0.5);
    let mut peak = T::neg_infinity();
    for k in 0..state.k() {
        let d2 = squared_distance(z, state.means.row(k));
        dist[k] = d2;
        logits[k] = -half_beta * d2;
        peak = peak.max(logits[k]);
    }
    let s: T = logits.iter().map(|&l| (l - peak).exp()).sum();
    peak + s.ln()
}

/// Full per-sample mean negative log-likelihood.
pub fn nll<T: Scalar>(state: &GmmProbeState<T>, samples: &DenseMatrix<T>) -> Result<T> {
    state.check_samples(samples)?;
    let k = state.k();
    let d = T::of_usize(state.d());
    let mut logits = vec![T::zero(); k];
    let mut dist = vec![T::zero(); k];
    let mut total = T::zero();
    for z in samples.row_iter() {
        total -= row_logits(state, z, &mut logits, &mut dist);
    }
    let n = T::of_usize(samples.rows());
    let half_d = d * T::of(0.5);
    Ok(total / n + T::of_usize(k).ln() + half_d * (T::TAU()).ln() - half_d * state.log_precision)
}

/// `N x K` posterior `p(k|z) = softmax_k(−β/2 ‖z − μ_k‖²)`.
pub fn responsibilities<T: Scalar>(
    state: &GmmProbeState<T>,
    samples: &DenseMatrix<T>,
) -> Result<DenseMatrix<T>> {
    state.check_samples(samples)?;
    let k = state.k();
    let mut out = DenseMatrix::zeros(samples.rows(), k);
    let mut dist = vec![T::zero(); k];
    for (i, z) in samples.row_iter().enumerate() {
        let row = out.row_mut(i);
        let lse = row_logits(state, z, row, &mut dist);
        for p in row.iter_mut() {
            *p = (*p - lse).exp();
        }
    }
    Ok(out)
}

/// Analytic gradient of [`nll`] with respect to the means and `log β`.
pub fn gradients<T: Scalar>(state: &GmmProbeState<T>, samples: &DenseMatrix<T>) -> Result<ProbeGradient<T>> {
    state.check_samples(samples)?;
    let (k, d) = (state.k(), state.d());
    let beta = state.beta();
    let mut logits = vec![T::zero(); k];
    let mut dist = vec![T::zero(); k];
    let mut g_means = DenseMatrix::zeros(k, d);
    let mut weighted_dist = T::zero();
    for z in samples.row_iter() {
        let lse = row_logits(state, z, &mut logits, &mut dist);
        for j in 0..k {
            let p = (logits[j] - lse).exp();
            weighted_dist += p * dist[j];
            let mu = state.means.row(j);
            for (g, (&za, &ma)) in g_means.row_mut(j).iter_mut().zip(z.iter().zip(mu)) {
                *g += p * (za - ma);
            }
        }
    }
    let n = T::of_usize(samples.rows());
    let scale = -beta / n;
    for g in g_means.as_mut_slice() {
        *g *= scale;
    }
    // ∂NLL/∂β = E[Σ_k p_k ‖z−μ_k‖²/2] − d/(2β); the chain rule multiplies by β.
    let d_beta = T::of(0.5) * weighted_dist / n - T::of_usize(d) / (T::of(2.0) * beta);
    let g_log_beta = d_beta * beta;
    if !g_log_beta.is_finite() || g_means.as_slice().iter().any(|g: &T| !g.is_finite()) {
        return Err(Error::NumericalOverflow { beta: beta.as_f64() });
    }
    Ok(ProbeGradient {
        means: g_means,
        log_beta: g_log_beta,
    })
}

/// One plain gradient-descent step on both the means and `log β`.
pub fn grad_step<T: Scalar>(
    state: &GmmProbeState<T>,
    batch: &DenseMatrix<T>,
    config: &ProbeConfig,
) -> Result<GmmProbeState<T>> {
    let g = gradients(state, batch)?;
    let lr_m = T::of(config.lr_means);
    let mut next = state.clone();
    for (m, &gm) in next.means.as_mut_slice().iter_mut().zip(g.means.as_slice()) {
        *m -= lr_m * gm;
    }
    next.log_precision -= T::of(config.lr_logbeta) * g.log_beta;
    Ok(next)
}

/// Gradient step on the means only, at the state's current (fixed) precision.
pub fn means_step<T: Scalar>(state: &mut GmmProbeState<T>, batch: &DenseMatrix<T>, lr: T) -> Result<()> {
    let g = gradients(state, batch)?;
    for (m, &gm) in state.means.as_mut_slice().iter_mut().zip(g.means.as_slice()) {
        *m -= lr * gm;
    }
    Ok(())
}

/// Root-mean-square prototype distance from the prototype centroid.
pub fn order_parameter<T: Scalar>(state: &GmmProbeState<T>) -> T {
    let centroid = state.means.column_means();
    let total: T = state
        .means
        .row_iter()
        .map(|m| squared_distance(m, &centroid))
        .sum();
    (total / T::of_usize(state.k())).sqrt()
}

/// Principal eigenvector of the prototype scatter, or `None` if the
/// prototypes coincide.
pub fn split_direction<T: Scalar>(state: &GmmProbeState<T>) -> Option<Vec<T>> {
    if state.k() < 2 {
        return None;
    }
    let cov = covariance(&state.means).ok()?;
    let spec = sym_eigen(&cov).ok()?;
    if !(spec.max() > T::zero()) {
        return None;
    }
    Some(spec.eigenvector(0))
}

/// `log β_c` of a batch of latents, or `+∞` if their covariance is degenerate.
pub fn latent_log_beta_c<T: Scalar>(latents: &DenseMatrix<T>) -> Result<f64> {
    match beta_c(&covariance(latents)?) {
        Ok(bc) => Ok(bc.as_f64().ln()),
        Err(Error::DegenerateCovariance { .. }) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

/// One detached probe step against `latents`, followed by a reading.
///
/// The latents are borrowed immutably: nothing computed here can flow back to
/// whatever produced them.
pub fn probe_step<T: Scalar>(
    state: &GmmProbeState<T>,
    latents: &DenseMatrix<T>,
    config: &ProbeConfig,
    step: usize,
) -> Result<(GmmProbeState<T>, CriticalityReading)> {
    let next = grad_step(state, latents, config)?;
    let log_beta_c = latent_log_beta_c(latents)?;
    let reading = CriticalityReading::new(
        step,
        next.log_precision.as_f64(),
        log_beta_c,
        None,
        order_parameter(&next).as_f64(),
    );
    Ok((next, reading))
}

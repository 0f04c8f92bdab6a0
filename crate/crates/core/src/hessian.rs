//! Hessian of the probe NLL with respect to the prototype means at the
//! symmetric collapsed state (all `μ_k` equal to the data mean).
//!
//! Coordinates are ordered `(k, a) ↦ k·d + a`. In closed form
//!
//! ```text
//! H[(k,a),(l,b)] = (β/K) δ_kl δ_ab − (β²/K)(δ_kl − 1/K) Σ_ab
//! ```
//!
//! which splits into a symmetric channel with eigenvalue `β/K` (multiplicity
//! `d`) and anti-symmetric channels `λ⊥_i = (β/K)(1 − β σ_i²)`, each
//! `(K − 1)`-fold degenerate in component space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm_probe::{nll, GmmProbeState};
use crate::mathcore::{covariance, sym_eigen, DenseMatrix};
use crate::scalar::Scalar;

/// Largest `K·d` for which dense assembly is offered.
pub const MAX_DENSE_DIM: usize = 4096;

/// Bisection tolerance in β for crossing scans.
pub const CROSSING_TOLERANCE: f64 = 1e-6;

/// One anti-symmetric channel of the collapsed-state Hessian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AntisymmetricChannel<T> {
    /// `λ⊥_i = (β/K)(1 − β σ_i²)`.
    pub eigenvalue: T,
    /// `σ_i²`.
    pub spatial_eigenvalue: T,
    /// `K − 1`.
    pub degeneracy: usize,
}

/// Description of the unstable subspace once `λ⊥_1 < 0`: the principal
/// spatial direction tensored with any zero-sum vector in component space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnstableDirection<T> {
    /// Principal spatial eigenvector, when the covariance was supplied.
    pub spatial_direction: Option<Vec<T>>,
    /// Dimension of the zero-sum component subspace (`K − 1`).
    pub component_subspace_dim: usize,
}

/// Closed-form channel decomposition of the collapsed-state Hessian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpectrum<T> {
    pub beta: T,
    pub k: usize,
    /// `β/K`, with multiplicity `d`.
    pub symmetric_eigenvalue: T,
    pub symmetric_degeneracy: usize,
    /// Sorted by descending `σ_i²`, so the first entry is the softest.
    pub antisymmetric: Vec<AntisymmetricChannel<T>>,
    pub unstable: Option<UnstableDirection<T>>,
}

impl<T: Scalar> ChannelSpectrum<T> {
    /// Lowest anti-symmetric eigenvalue `λ⊥_1`, if `K ≥ 2`.
    pub fn lowest_antisymmetric(&self) -> Option<T> {
        (self.k >= 2).then(|| self.antisymmetric.first().map(|c| c.eigenvalue)).flatten()
    }

    /// Every eigenvalue with multiplicity, sorted descending.
    pub fn multiset(&self) -> Vec<T> {
        let mut all = vec![self.symmetric_eigenvalue; self.symmetric_degeneracy];
        for c in &self.antisymmetric {
            all.extend(std::iter::repeat_n(c.eigenvalue, c.degeneracy));
        }
        all.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
        all
    }

    pub fn is_stable(&self) -> bool {
        self.multiset().iter().all(|&l| l > T::zero())
    }
}

fn validate_beta<T: Scalar>(beta: T) -> Result<()> {
    if !(beta > T::zero() && beta.is_finite()) {
        return Err(Error::Validation(format!("beta must be positive, got {beta}")));
    }
    Ok(())
}

/// Dense `(K·d) x (K·d)` Hessian at the collapsed state.
pub fn analytic_hessian<T: Scalar>(beta: T, k: usize, cov: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    validate_beta(beta)?;
    cov.validate_symmetric()?;
    if k == 0 {
        return Err(Error::Validation("K must be at least 1".into()));
    }
    let d = cov.rows();
    let n = k * d;
    if n > MAX_DENSE_DIM {
        return Err(Error::Validation(format!(
            "dense Hessian of dimension {n} exceeds {MAX_DENSE_DIM}; use channel_spectrum"
        )));
    }
    let kf = T::of_usize(k);
    let diag = beta / kf;
    let coupling = beta * beta / kf;
    let inv_k = T::one() / kf;
    let mut h = DenseMatrix::zeros(n, n);
    for kk in 0..k {
        for ll in 0..k {
            let delta_kl = if kk == ll { T::one() } else { T::zero() };
            let factor = coupling * (delta_kl - inv_k);
            for a in 0..d {
                for b in 0..d {
                    let mut v = -factor * cov[(a, b)];
                    if kk == ll && a == b {
                        v += diag;
                    }
                    h[(kk * d + a, ll * d + b)] = v;
                }
            }
        }
    }
    Ok(h)
}

/// Closed-form spectrum from spatial eigenvalues sorted descending.
pub fn channel_spectrum<T: Scalar>(beta: T, k: usize, spatial_eigs: &[T]) -> Result<ChannelSpectrum<T>> {
    validate_beta(beta)?;
    if k == 0 {
        return Err(Error::Validation("K must be at least 1".into()));
    }
    if spatial_eigs.iter().any(|s| *s < T::zero()) {
        return Err(Error::Validation("spatial eigenvalues must be non-negative".into()));
    }
    if spatial_eigs.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::Validation("spatial eigenvalues must be sorted descending".into()));
    }
    let kf = T::of_usize(k);
    let antisymmetric: Vec<_> = if k >= 2 {
        spatial_eigs
            .iter()
            .map(|&s2| AntisymmetricChannel {
                eigenvalue: beta / kf * (T::one() - beta * s2),
                spatial_eigenvalue: s2,
                degeneracy: k - 1,
            })
            .collect()
    } else {
        Vec::new()
    };
    let unstable = antisymmetric
        .first()
        .filter(|c| c.eigenvalue < T::zero())
        .map(|_| UnstableDirection {
            spatial_direction: None,
            component_subspace_dim: k - 1,
        });
    Ok(ChannelSpectrum {
        beta,
        k,
        symmetric_eigenvalue: beta / kf,
        symmetric_degeneracy: spatial_eigs.len(),
        antisymmetric,
        unstable,
    })
}

/// [`channel_spectrum`] from a covariance, filling in the unstable spatial
/// direction.
pub fn channel_spectrum_from_cov<T: Scalar>(beta: T, k: usize, cov: &DenseMatrix<T>) -> Result<ChannelSpectrum<T>> {
    let spec = sym_eigen(cov)?;
    // Round-off can leave tiny negative eigenvalues on PSD input.
    let eigs: Vec<T> = spec.eigenvalues.iter().map(|&l| l.max(T::zero())).collect();
    let mut out = channel_spectrum(beta, k, &eigs)?;
    if let Some(u) = out.unstable.as_mut() {
        u.spatial_direction = Some(spec.eigenvector(0));
    }
    Ok(out)
}

/// Central-difference Hessian of [`nll`] over the mean coordinates.
///
/// The step along data axis `a` is `1e-4 · sqrt(Σ_aa)`.
pub fn numerical_hessian<T: Scalar>(state: &GmmProbeState<T>, samples: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    let (k, d) = (state.k(), state.d());
    if samples.cols() != d {
        return Err(Error::Dimension(format!(
            "samples have dimension {}, probe has {d}",
            samples.cols()
        )));
    }
    let n = k * d;
    if n > MAX_DENSE_DIM {
        return Err(Error::Validation(format!("Hessian dimension {n} exceeds {MAX_DENSE_DIM}")));
    }
    let cov = covariance(samples)?;
    let centre = samples.column_means();
    let scale = cov.diagonal().into_iter().fold(T::zero(), T::max).sqrt().max(T::one());
    let tol = T::of(1e-9) * scale;
    for row in state.means.row_iter() {
        if row.iter().zip(&centre).any(|(&m, &c)| (m - c).abs() > tol) {
            return Err(Error::Precondition(
                "numerical Hessian requires every mean at the sample mean".into(),
            ));
        }
    }
    let steps: Vec<T> = (0..n)
        .map(|i| {
            let s = cov[(i % d, i % d)].sqrt();
            T::of(1e-4) * if s > T::zero() { s } else { T::one() }
        })
        .collect();

    let mut probe = state.clone();
    let mut eval = |shifts: &[(usize, T)]| -> Result<T> {
        for &(i, h) in shifts {
            probe.means.as_mut_slice()[i] += h;
        }
        let v = nll(&probe, samples);
        for &(i, h) in shifts {
            probe.means.as_mut_slice()[i] -= h;
        }
        v
    };

    let f0 = eval(&[])?;
    let mut h = DenseMatrix::zeros(n, n);
    for i in 0..n {
        let hi = steps[i];
        let fp = eval(&[(i, hi)])?;
        let fm = eval(&[(i, -hi)])?;
        h[(i, i)] = (fp - (f0 + f0) + fm) / (hi * hi);
        for j in (i + 1)..n {
            let hj = steps[j];
            let fpp = eval(&[(i, hi), (j, hj)])?;
            let fpm = eval(&[(i, hi), (j, -hj)])?;
            let fmp = eval(&[(i, -hi), (j, hj)])?;
            let fmm = eval(&[(i, -hi), (j, -hj)])?;
            let v = (fpp - fpm - fmp + fmm) / (T::of(4.0) * hi * hj);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    h.symmetrized()
}

/// Result of a β scan for the lowest-eigenvalue zero crossing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingReport<T> {
    pub beta_critical_numeric: T,
    /// `1/λ_max(Σ)`.
    pub beta_critical_analytic: T,
    /// `(β, lowest eigenvalue)` sorted by β.
    pub scan_points: Vec<(T, T)>,
}

impl<T: Scalar> CrossingReport<T> {
    pub fn absolute_error(&self) -> T {
        (self.beta_critical_numeric - self.beta_critical_analytic).abs()
    }

    pub fn sign_changes(&self) -> usize {
        self.scan_points
            .windows(2)
            .filter(|w| (w[0].1 > T::zero()) != (w[1].1 > T::zero()))
            .count()
    }
}

const GRID_POINTS: usize = 41;

/// Scans `lowest(β)` on a grid over the bracket, then bisects its zero.
fn bisect_crossing<T: Scalar>(
    beta_lo: T,
    beta_hi: T,
    beta_critical_analytic: T,
    mut lowest: impl FnMut(T) -> Result<T>,
) -> Result<CrossingReport<T>> {
    validate_beta(beta_lo)?;
    validate_beta(beta_hi)?;
    let bracket_err = || Error::Bracket {
        lo: beta_lo.as_f64(),
        hi: beta_hi.as_f64(),
    };
    if beta_lo >= beta_hi {
        return Err(bracket_err());
    }
    let mut scan = Vec::with_capacity(GRID_POINTS + 64);
    for i in 0..GRID_POINTS {
        let b = beta_lo + (beta_hi - beta_lo) * T::of_usize(i) / T::of_usize(GRID_POINTS - 1);
        scan.push((b, lowest(b)?));
    }
    let positive = |v: T| v > T::zero();
    if !positive(scan[0].1) || positive(scan[GRID_POINTS - 1].1) {
        return Err(bracket_err());
    }
    let cell = scan
        .windows(2)
        .position(|w| positive(w[0].1) && !positive(w[1].1))
        .ok_or_else(bracket_err)?;
    let (mut lo, mut hi) = (scan[cell].0, scan[cell + 1].0);
    let tol = T::of(CROSSING_TOLERANCE);
    while hi - lo > tol {
        let mid = (lo + hi) * T::of(0.5);
        let v = lowest(mid)?;
        scan.push((mid, v));
        if positive(v) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    scan.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    Ok(CrossingReport {
        beta_critical_numeric: (lo + hi) * T::of(0.5),
        beta_critical_analytic,
        scan_points: scan,
    })
}

/// Locates the zero of the lowest eigenvalue of the assembled analytic
/// Hessian inside `[beta_lo, beta_hi]`.
pub fn find_crossing<T: Scalar>(k: usize, cov: &DenseMatrix<T>, beta_lo: T, beta_hi: T) -> Result<CrossingReport<T>> {
    let lam = sym_eigen(cov)?.max();
    let analytic = if lam > T::zero() { T::one() / lam } else { T::infinity() };
    bisect_crossing(beta_lo, beta_hi, analytic, |b| {
        Ok(sym_eigen(&analytic_hessian(b, k, cov)?)?.min())
    })
}

/// Same scan on the finite-difference Hessian of the NLL itself, with all `k`
/// prototypes at the sample mean.
pub fn find_crossing_numerical<T: Scalar>(
    k: usize,
    samples: &DenseMatrix<T>,
    beta_lo: T,
    beta_hi: T,
) -> Result<CrossingReport<T>> {
    let cov = covariance(samples)?;
    let lam = sym_eigen(&cov)?.max();
    let analytic = if lam > T::zero() { T::one() / lam } else { T::infinity() };
    let centre = samples.column_means();
    bisect_crossing(beta_lo, beta_hi, analytic, |b| {
        let state = GmmProbeState::collapsed(&centre, k, b.ln())?;
        Ok(sym_eigen(&numerical_hessian(&state, samples)?)?.min())
    })
}

/// Critical temperature `T_c = 2 λ_max` in the deterministic-annealing
/// convention, where `β = 2/T`.
pub fn annealing_critical_temperature<T: Scalar>(cov: &DenseMatrix<T>) -> Result<T> {
    Ok(T::of(2.0) * sym_eigen(cov)?.max())
}

/// Converts an annealing temperature to this crate's precision.
pub fn beta_from_annealing_temperature<T: Scalar>(temperature: T) -> T {
    T::of(2.0) / temperature
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn two_by_two_example() {
        let h = analytic_hessian(1.0, 2, &DenseMatrix::from_diagonal(&[1.0])).unwrap();
        for &v in h.as_slice() {
            assert_abs_diff_eq!(v, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn zero_covariance_gives_scaled_identity() {
        let h = analytic_hessian(3.0, 3, &DenseMatrix::<f64>::zeros(2, 2)).unwrap();
        assert_eq!(h, DenseMatrix::identity(6).scaled(1.0));
    }

    #[test]
    fn channel_examples() {
        let s = channel_spectrum(1.0, 2, &[1.0]).unwrap();
        assert_eq!(s.lowest_antisymmetric(), Some(0.0));
        let s = channel_spectrum(2.0, 2, &[1.0]).unwrap();
        assert_eq!(s.lowest_antisymmetric(), Some(-1.0));
        assert!(s.unstable.is_some());
        let s = channel_spectrum(0.5 / 3.0, 4, &[3.0, 2.0, 0.5]).unwrap();
        assert!(s.antisymmetric.iter().all(|c| c.eigenvalue > 0.0));
        assert!(s.is_stable());
        assert!(channel_spectrum(1.0, 2, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn single_component_has_no_antisymmetric_channel() {
        let s = channel_spectrum(2.0, 1, &[5.0, 1.0]).unwrap();
        assert!(s.antisymmetric.is_empty());
        assert_eq!(s.multiset(), vec![2.0, 2.0]);
    }

    #[test]
    fn crossing_on_identity() {
        let r = find_crossing(3, &DenseMatrix::<f64>::identity(2), 0.1, 10.0).unwrap();
        assert_abs_diff_eq!(r.beta_critical_numeric, 1.0, epsilon = 1e-4);
        assert_eq!(r.sign_changes(), 1);
    }

    #[test]
    fn crossing_requires_a_sign_change() {
        let r = find_crossing(2, &DenseMatrix::<f64>::identity(2), 2.0, 3.0);
        assert!(matches!(r, Err(Error::Bracket { .. })));
        let r = find_crossing(1, &DenseMatrix::<f64>::identity(2), 0.1, 3.0);
        assert!(matches!(r, Err(Error::Bracket { .. })));
    }

    #[test]
    fn annealing_convention_round_trip() {
        let cov = DenseMatrix::from_diagonal(&[5.0, 1.0]);
        let t = annealing_critical_temperature(&cov).unwrap();
        assert_abs_diff_eq!(beta_from_annealing_temperature(t), 0.2, epsilon = 1e-14);
    }

    #[test]
    fn numerical_hessian_rejects_split_state() {
        let z = DenseMatrix::from_rows(&[vec![0.0], vec![1.0], vec![3.0]]).unwrap();
        let s = GmmProbeState::new(DenseMatrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap(), 0.0).unwrap();
        assert!(matches!(numerical_hessian(&s, &z), Err(Error::Precondition(_))));
    }
}

//! Descriptive statistics, covariance and rank correlation.

use super::matrix::DenseMatrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub fn mean<T: Scalar>(xs: &[T]) -> Option<T> {
    if xs.is_empty() {
        return None;
    }
    Some(xs.iter().copied().sum::<T>() / T::of_usize(xs.len()))
}

/// Sample standard deviation (divisor `n - 1`).
pub fn sample_std<T: Scalar>(xs: &[T]) -> Option<T> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs)?;
    let ss: T = xs.iter().map(|&x| (x - m) * (x - m)).sum();
    Some((ss / T::of_usize(xs.len() - 1)).sqrt())
}

/// Median of the finite values; `None` if there are none.
pub fn median<T: Scalar>(xs: &[T]) -> Option<T> {
    let mut v: Vec<T> = xs.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite values are ordered"));
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) * T::of(0.5)
    })
}

/// Mean-centred covariance of an `N x d` sample matrix with divisor `N`.
pub fn covariance<T: Scalar>(samples: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    let n = samples.rows();
    if n < 2 {
        return Err(Error::Dimension(format!(
            "covariance needs at least 2 samples, got {n}"
        )));
    }
    let d = samples.cols();
    let mean = samples.column_means();
    let mut cov = DenseMatrix::zeros(d, d);
    let mut centred = vec![T::zero(); d];
    for row in samples.row_iter() {
        for ((c, &x), &m) in centred.iter_mut().zip(row).zip(&mean) {
            *c = x - m;
        }
        for a in 0..d {
            let ca = centred[a];
            for b in a..d {
                cov[(a, b)] += ca * centred[b];
            }
        }
    }
    let inv_n = T::one() / T::of_usize(n);
    for a in 0..d {
        for b in a..d {
            let v = cov[(a, b)] * inv_n;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    Ok(cov)
}

/// Ranks starting at 1, with tied values sharing their average rank.
pub fn average_ranks<T: Scalar>(xs: &[T]) -> Vec<T> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&i, &j| xs[i].partial_cmp(&xs[j]).unwrap_or(std::cmp::Ordering::Equal));
    let mut ranks = vec![T::zero(); xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) share rank ((i+1) + (j+1)) / 2.
        let r = T::of_usize(i + j + 2) * T::of(0.5);
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson product-moment correlation.
pub fn pearson<T: Scalar>(xs: &[T], ys: &[T]) -> Result<T> {
    if xs.len() != ys.len() {
        return Err(Error::Dimension(format!(
            "correlation of sequences with lengths {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::Dimension("correlation needs at least 2 points".into()));
    }
    let mx = mean(xs).unwrap_or_else(T::zero);
    let my = mean(ys).unwrap_or_else(T::zero);
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == T::zero() || syy == T::zero() {
        return Err(Error::UndefinedCorrelation("constant input sequence".into()));
    }
    let r = sxy / (sxx * syy).sqrt();
    Ok(r.max(-T::one()).min(T::one()))
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman<T: Scalar>(xs: &[T], ys: &[T]) -> Result<T> {
    if xs.len() != ys.len() {
        return Err(Error::Dimension(format!(
            "spearman of sequences with lengths {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 3 {
        return Err(Error::Dimension(format!(
            "spearman needs at least 3 points, got {}",
            xs.len()
        )));
    }
    pearson(&average_ranks(xs), &average_ranks(ys))
}

/// One-sided exact sign-test p-value `P(X >= positives)` for
/// `X ~ Binomial(n, 1/2)`, where `n` counts the non-zero observations.
pub fn sign_test_p_value(values: &[f64]) -> f64 {
    let positives = values.iter().filter(|&&v| v > 0.0).count();
    let n = values.iter().filter(|&&v| v != 0.0).count();
    binomial_upper_tail_half(n, positives)
}

fn binomial_upper_tail_half(n: usize, k: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n {
        return 0.0;
    }
    let ln_half_n = n as f64 * std::f64::consts::LN_2;
    // ln C(n, i) built up incrementally from ln C(n, 0) = 0.
    let mut ln_c = 0.0;
    let mut terms = Vec::with_capacity(n + 1 - k);
    for i in 0..=n {
        if i > 0 {
            ln_c += ((n - i + 1) as f64).ln() - (i as f64).ln();
        }
        if i >= k {
            terms.push(ln_c - ln_half_n);
        }
    }
    let peak = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = terms.iter().map(|t| (t - peak).exp()).sum();
    (peak + s.ln()).exp().min(1.0)
}

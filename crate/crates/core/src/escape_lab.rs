//! Escape-time measurement over dissipation sweeps and the power-law versus
//! Kramers model comparison.
//!
//! The tilt strength `γ` of a sweep is carried in [`SdeConfig::coupling`].

use std::io::Read;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathcore::{fit_escape_model, mean, sample_std, FitReport, ModelKind, Weighting};
use crate::scalar::Scalar;
use crate::sde::{integrate_scalar, tilted_drift, SdeConfig};

/// Upstream potential `U(ε)` whose gradient tilts the normal form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TiltPotential {
    /// `U = 0`.
    #[default]
    Null,
    /// `U = −½ c ε²`; for `c > 0` the drift `−γU′ = γcε` adds linear
    /// destabilisation, so the saddle's growth rate becomes `μ + γc`.
    Quadratic { curvature: f64 },
    /// `U = −h ε`, a constant bias `γh` in the drift.
    Linear { bias: f64 },
}

impl TiltPotential {
    /// The default sweep tilt `U = −½ε²`.
    pub fn builtin() -> Self {
        TiltPotential::Quadratic { curvature: 1.0 }
    }

    pub fn value<T: Scalar>(&self, eps: T) -> T {
        match *self {
            TiltPotential::Null => T::zero(),
            TiltPotential::Quadratic { curvature } => -T::of(0.5 * curvature) * eps * eps,
            TiltPotential::Linear { bias } => -T::of(bias) * eps,
        }
    }

    pub fn derivative<T: Scalar>(&self, eps: T) -> T {
        match *self {
            TiltPotential::Null => T::zero(),
            TiltPotential::Quadratic { curvature } => -T::of(curvature) * eps,
            TiltPotential::Linear { bias } => -T::of(bias),
        }
    }

    /// `U″(0)`.
    pub fn curvature_at_origin(&self) -> f64 {
        match *self {
            TiltPotential::Quadratic { curvature } => -curvature,
            _ => 0.0,
        }
    }

    /// Largest central-difference mismatch between `U′` and `U` over `points`.
    pub fn derivative_mismatch(&self, points: &[f64]) -> f64 {
        let h = 1e-5;
        points
            .iter()
            .map(|&x| {
                let fd = (self.value(x + h) - self.value(x - h)) / (2.0 * h);
                (fd - self.derivative(x)).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// One `(γ, seed)` escape measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EscapeObservation {
    pub gamma: f64,
    pub seed: u64,
    /// First step with `|ε| ≥ threshold`; `None` when censored.
    pub tau: Option<usize>,
    pub horizon: usize,
}

impl EscapeObservation {
    pub fn censored(&self) -> bool {
        self.tau.is_none()
    }
}

/// Runs one simulation until `|ε| ≥ threshold` or `horizon` steps elapse.
pub fn measure_escape(
    config: &SdeConfig,
    tilt: &TiltPotential,
    threshold: f64,
    horizon: usize,
) -> Result<EscapeObservation> {
    let eps_star = config
        .fixed_point()
        .ok_or_else(|| Error::Config("escape needs growth_rate > 0".into()))?;
    if !(threshold > config.init_scale && threshold < eps_star) {
        return Err(Error::Config(format!(
            "threshold {threshold} must lie in (init_scale, eps*) = ({}, {eps_star})",
            config.init_scale
        )));
    }
    let mut run = config.clone();
    run.steps = horizon;
    run.record_path = false;
    let drift = tilted_drift::<f64>(&run, tilt);
    let (_, hit) = integrate_scalar(&run, drift, Some(threshold))?;
    Ok(EscapeObservation {
        gamma: config.coupling,
        seed: config.seed,
        tau: hit,
        horizon,
    })
}

/// Deterministic escape time `∫ dε / drift(ε)` from `from` to `to`, in time
/// units, by adaptive Simpson quadrature. `None` if the drift vanishes or
/// changes sign on the way.
pub fn deterministic_escape_time(config: &SdeConfig, tilt: &TiltPotential, from: f64, to: f64) -> Option<f64> {
    let drift = tilted_drift::<f64>(config, tilt);
    let (a, b) = (from.min(to), from.max(to));
    let samples = 64;
    let sign = drift(from).signum();
    for i in 0..=samples {
        let x = a + (b - a) * i as f64 / samples as f64;
        let f = drift(x);
        if f == 0.0 || f.signum() != sign {
            return None;
        }
    }
    let g = |x: f64| 1.0 / drift(x);
    let t = adaptive_simpson(&g, from, to, 1e-10, 50);
    (t.is_finite() && t > 0.0).then_some(t)
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: usize) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &impl Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: usize,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    recurse(f, a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, depth)
}

/// Closed-form escape time of the untilted deterministic pitchfork from
/// `eps0` to `threshold` (both below `sqrt(μ/α)`), in time units.
pub fn pitchfork_escape_time(mu: f64, alpha: f64, eps0: f64, threshold: f64) -> f64 {
    let (e2, t2) = (eps0 * eps0, threshold * threshold);
    (t2 * (mu - alpha * e2) / (e2 * (mu - alpha * t2))).ln() / (2.0 * mu)
}

/// Statistics of one dissipation level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub gamma: f64,
    pub n_seeds: usize,
    pub n_escaped: usize,
    /// Over escaped seeds only.
    pub tau_mean: Option<f64>,
    /// Sample standard deviation over escaped seeds.
    pub tau_std: Option<f64>,
}

impl LevelSummary {
    pub fn escape_fraction(&self) -> f64 {
        if self.n_seeds == 0 {
            0.0
        } else {
            self.n_escaped as f64 / self.n_seeds as f64
        }
    }

    /// Eligible for model fitting: `γ > 0` and every seed escaped.
    pub fn fittable(&self) -> bool {
        self.gamma > 0.0 && self.n_seeds > 0 && self.n_escaped == self.n_seeds && self.tau_mean.is_some_and(|m| m > 0.0)
    }
}

/// Per-level statistics plus both model fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub levels: Vec<LevelSummary>,
    pub power_law: FitReport<f64>,
    pub kramers: FitReport<f64>,
    /// `kramers.aic − power_law.aic`; positive favours the power law.
    pub delta_aic: f64,
    pub weighting: Weighting,
}

impl SweepSummary {
    /// Effective power-law exponent `p` in `τ ∝ γ^{−p}`.
    pub fn power_law_exponent(&self) -> f64 {
        -self.power_law.slope
    }
}

/// Groups observations by `γ` (ascending) into level statistics.
pub fn summarize(observations: &[EscapeObservation]) -> Vec<LevelSummary> {
    let mut sorted = observations.to_vec();
    sorted.sort_by(|a, b| a.gamma.total_cmp(&b.gamma).then(a.seed.cmp(&b.seed)));
    let mut out: Vec<LevelSummary> = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let g = sorted[i].gamma;
        let group: Vec<&EscapeObservation> = sorted[i..].iter().take_while(|o| o.gamma == g).collect();
        let taus: Vec<f64> = group.iter().filter_map(|o| o.tau).map(|t| t as f64).collect();
        out.push(LevelSummary {
            gamma: g,
            n_seeds: group.len(),
            n_escaped: taus.len(),
            tau_mean: mean(&taus),
            tau_std: sample_std(&taus),
        });
        i += group.len();
    }
    out
}

/// Fits both models to the fittable levels; censored or partially escaped
/// levels are reported but never enter `χ²`.
pub fn fit_escape_models(levels: &[LevelSummary], weighting: Weighting) -> Result<SweepSummary> {
    let usable: Vec<&LevelSummary> = levels.iter().filter(|l| l.fittable()).collect();
    if usable.len() < 3 {
        return Err(Error::NoFit(format!(
            "{} uncensored levels with gamma > 0; at least 3 are needed",
            usable.len()
        )));
    }
    let gammas: Vec<f64> = usable.iter().map(|l| l.gamma).collect();
    let means: Vec<f64> = usable.iter().map(|l| l.tau_mean.unwrap_or(f64::NAN)).collect();
    let stds: Vec<f64> = usable.iter().map(|l| l.tau_std.unwrap_or(0.0)).collect();
    let power_law = fit_escape_model(ModelKind::PowerLaw, &gammas, &means, &stds, weighting)?;
    let kramers = fit_escape_model(ModelKind::KramersExponential, &gammas, &means, &stds, weighting)?;
    Ok(SweepSummary {
        levels: levels.to_vec(),
        delta_aic: kramers.aic - power_law.aic,
        power_law,
        kramers,
        weighting,
    })
}

/// A dissipation sweep on the tilted normal form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub gammas: Vec<f64>,
    pub seeds_per_gamma: usize,
    /// Base simulator parameters; `coupling` and `seed` are overwritten per cell.
    pub config: SdeConfig,
    pub tilt: TiltPotential,
    pub threshold: f64,
    pub horizon: usize,
    /// Run `γ = 0` cells without noise, so that they probe the bare saddle.
    pub noise_free_control: bool,
    pub base_seed: u64,
}

impl SweepPlan {
    /// The default sweep: `μ = α = 1e-4` (so `ε* = 1`), `D = 1e-6`,
    /// `σ₀ = 0.01`, `dt = 0.01`, threshold `ε*/2`, horizon `10⁶` steps and
    /// the built-in tilt over `γ ∈ {0, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0}`.
    pub fn builtin() -> Self {
        let config = SdeConfig {
            growth_rate: 1e-4,
            alpha: 1e-4,
            coupling: 0.0,
            noise_intensity: 1e-6,
            dt: 0.01,
            steps: 1_000_000,
            modes: 1,
            dim: 1,
            init_scale: 0.01,
            seed: 0,
            initial_condition: crate::sde::InitialCondition::Constant,
            record_path: false,
        };
        Self {
            gammas: vec![0.0, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0],
            seeds_per_gamma: 3,
            threshold: 0.5 * config.fixed_point().unwrap_or(1.0),
            config,
            tilt: TiltPotential::builtin(),
            horizon: 1_000_000,
            noise_free_control: true,
            base_seed: 0,
        }
    }

    fn cell_config(&self, gamma: f64, seed_index: usize) -> SdeConfig {
        let mut c = self.config.clone();
        c.coupling = gamma;
        c.seed = self.base_seed.wrapping_add(seed_index as u64);
        c.record_path = false;
        if gamma == 0.0 && self.noise_free_control {
            c.noise_intensity = 0.0;
        }
        c
    }
}

/// Measures every `(γ, seed)` cell in parallel; results are ordered by `γ`
/// then seed regardless of scheduling.
pub fn collect_observations(plan: &SweepPlan) -> Result<Vec<EscapeObservation>> {
    if plan.seeds_per_gamma == 0 {
        return Err(Error::Config("seeds_per_gamma must be at least 1".into()));
    }
    if let Some(g) = plan.gammas.iter().find(|g| !(**g >= 0.0 && g.is_finite())) {
        return Err(Error::Config(format!("gamma must be non-negative, got {g}")));
    }
    let cells: Vec<(f64, usize)> = plan
        .gammas
        .iter()
        .flat_map(|&g| (0..plan.seeds_per_gamma).map(move |s| (g, s)))
        .collect();
    let mut out = cells
        .par_iter()
        .map(|&(g, s)| measure_escape(&plan.cell_config(g, s), &plan.tilt, plan.threshold, plan.horizon))
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.gamma.total_cmp(&b.gamma).then(a.seed.cmp(&b.seed)));
    Ok(out)
}

/// Full sweep: measure, summarise and fit. Fails with [`Error::NoFit`] when
/// fewer than three levels escaped in every seed.
pub fn run_sweep(plan: &SweepPlan, weighting: Weighting) -> Result<SweepSummary> {
    let obs = collect_observations(plan)?;
    fit_escape_models(&summarize(&obs), weighting)
}

#[derive(Debug, Deserialize)]
struct LevelRecord {
    gamma: f64,
    tau_mean: Option<f64>,
    tau_std: Option<f64>,
    n_seeds: usize,
    censored: bool,
}

/// Reads levels from a CSV with header `gamma,tau_mean,tau_std,n_seeds,censored`.
pub fn read_levels_csv<R: Read>(reader: R) -> Result<Vec<LevelSummary>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    for col in ["gamma", "tau_mean", "tau_std", "n_seeds", "censored"] {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::Validation(format!("escape CSV is missing column `{col}`")));
        }
    }
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        let r: LevelRecord = rec?;
        if !r.censored && r.tau_mean.is_none() {
            return Err(Error::Validation(format!("uncensored level gamma = {} has no tau_mean", r.gamma)));
        }
        out.push(LevelSummary {
            gamma: r.gamma,
            n_seeds: r.n_seeds,
            n_escaped: if r.censored { 0 } else { r.n_seeds },
            tau_mean: if r.censored { None } else { r.tau_mean },
            tau_std: if r.censored { None } else { r.tau_std },
        });
    }
    Ok(out)
}

/// Writes levels in the format read by [`read_levels_csv`].
pub fn write_levels_csv<W: std::io::Write>(levels: &[LevelSummary], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["gamma", "tau_mean", "tau_std", "n_seeds", "censored"])?;
    for l in levels {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        w.write_record([
            l.gamma.to_string(),
            opt(l.tau_mean),
            opt(l.tau_std),
            l.n_seeds.to_string(),
            (l.n_escaped == 0).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Bundled seed-averaged escape times of the six-level dissipation sweep
/// (plus the censored `γ = 0` control).
pub const TABLE5_CSV: &str = include_str!("../fixtures/table5.csv");

pub fn table5_levels() -> Result<Vec<LevelSummary>> {
    read_levels_csv(TABLE5_CSV.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn tilt_derivatives_are_consistent() {
        let pts: Vec<f64> = (-20..=20).map(|i| i as f64 * 0.1).collect();
        for t in [
            TiltPotential::Null,
            TiltPotential::builtin(),
            TiltPotential::Quadratic { curvature: -2.5 },
            TiltPotential::Linear { bias: 0.3 },
        ] {
            assert!(t.derivative_mismatch(&pts) < 1e-8);
        }
    }

    #[test]
    fn closed_form_matches_quadrature() {
        let c = SdeConfig {
            growth_rate: 0.1,
            alpha: 0.1,
            ..SdeConfig::default()
        };
        let q = deterministic_escape_time(&c, &TiltPotential::Null, 0.01, 0.5).unwrap();
        assert_relative_eq!(q, pitchfork_escape_time(0.1, 0.1, 0.01, 0.5), max_relative = 1e-8);
    }

    #[test]
    fn threshold_must_be_between_scale_and_fixed_point() {
        let c = SdeConfig {
            init_scale: 0.01,
            ..SdeConfig::default()
        };
        assert!(matches!(measure_escape(&c, &TiltPotential::Null, 2.0, 10), Err(Error::Config(_))));
        assert!(matches!(measure_escape(&c, &TiltPotential::Null, 0.005, 10), Err(Error::Config(_))));
    }

    #[test]
    fn saddle_at_rest_never_escapes() {
        let c = SdeConfig {
            growth_rate: 1e-6,
            alpha: 1e-6,
            init_scale: 0.0,
            initial_condition: crate::sde::InitialCondition::Constant,
            ..SdeConfig::default()
        };
        let o = measure_escape(&c, &TiltPotential::builtin(), 0.5, 10_000).unwrap();
        assert!(o.censored());
    }

    #[test]
    fn levels_round_trip_through_csv() {
        let levels = table5_levels().unwrap();
        let mut buf = Vec::new();
        write_levels_csv(&levels, &mut buf).unwrap();
        assert_eq!(read_levels_csv(buf.as_slice()).unwrap(), levels);
    }

    #[test]
    fn missing_column_is_rejected() {
        let r = read_levels_csv("gamma,tau_mean\n0.1,5\n".as_bytes());
        assert!(matches!(r, Err(Error::Validation(_))));
    }

    #[test]
    fn all_censored_gives_no_fit() {
        let obs: Vec<EscapeObservation> = (0..3)
            .map(|s| EscapeObservation {
                gamma: 0.0,
                seed: s,
                tau: None,
                horizon: 10,
            })
            .collect();
        assert!(matches!(fit_escape_models(&summarize(&obs), Weighting::RelativeError), Err(Error::NoFit(_))));
    }
}

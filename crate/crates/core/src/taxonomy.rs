//! Four-shape classification of `(log β/β_c, NC1)` trajectories.
//!
//! The classifier works purely on sample indices, so it is invariant to any
//! affine rescaling of time and to monotone reindexing of the steps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::escape_lab::{deterministic_escape_time, TiltPotential};
use crate::experiments::TrajectoryLog;
use crate::gmm_probe::CriticalityReading;
use crate::mathcore::pearson;
use crate::sde::{simulate_tilted_langevin, InitialCondition, SdeConfig};

/// Minimum number of readings for a classification or axis reading.
pub const MIN_SAMPLES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ShapeClass {
    FullV,
    FoldBack,
    DelayedEscape,
    NoArc,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 4] = [Self::FullV, Self::FoldBack, Self::DelayedEscape, Self::NoArc];

    pub fn name(self) -> &'static str {
        match self {
            Self::FullV => "full_v",
            Self::FoldBack => "fold_back",
            Self::DelayedEscape => "delayed_escape",
            Self::NoArc => "no_arc",
        }
    }
}

impl std::fmt::Display for ShapeClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ShapeClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown shape class `{s}`")))
    }
}

/// The quantities the decision procedure looked at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeEvidence {
    /// Pearson correlation of `log10 NC1` with `log β/β_c` on the descent leg.
    pub descent_corr: f64,
    /// Sign of the descent-leg slope of `log10 NC1` against `log β/β_c`.
    pub descent_sign: i8,
    /// `(descent onset − crossing) / (samples − 1)`.
    pub plateau_fraction: f64,
    /// Whole-trajectory correlation of `log β/β_c` with `log10 NC1`.
    pub decoupling_corr: f64,
    /// Drop of `log β/β_c` from its peak to the final reading.
    pub fold_magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub class: ShapeClass,
    pub evidence: ShapeEvidence,
    /// No crossing was found in an arc-shaped log, e.g. a truncated
    /// pre-critical run; the class is then a best guess from the slope.
    pub indeterminate: bool,
    pub crossing_index: Option<usize>,
    pub descent_onset: Option<usize>,
}

/// Decision thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyConfig {
    /// `|corr| <` this over the whole log means no arc.
    pub decoupling_threshold: f64,
    /// Plateau fraction at or above which the escape counts as delayed.
    pub plateau_threshold: f64,
    /// NC1 drop below its running peak, in decades, that marks the descent.
    pub descent_decades: f64,
    /// NC1 within this many decades of its running peak is still "at peak".
    pub peak_band: f64,
    /// Minimum fold of `log β/β_c` for the descent leg to start at its peak.
    pub fold_min: f64,
    pub fold_min_points: usize,
}

impl Default for TaxonomyConfig {
    fn default() -> Self {
        Self {
            decoupling_threshold: 0.5,
            plateau_threshold: 0.1,
            descent_decades: 0.5,
            peak_band: 0.1,
            fold_min: 0.2,
            fold_min_points: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialCriticality {
    Sub,
    Super,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateOrdering {
    BetaLeads,
    BetaCLeads,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DissipationRegime {
    Normal,
    Low,
}

/// The three binary kinematic axes of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisReading {
    pub initial_criticality: InitialCriticality,
    pub rate_ordering: RateOrdering,
    pub dissipation_regime: DissipationRegime,
}

struct Channels {
    ratio: Vec<f64>,
    log_nc1: Vec<f64>,
}

fn channels(log: &TrajectoryLog) -> Result<Channels> {
    if log.len() < MIN_SAMPLES {
        return Err(Error::Validation(format!(
            "classification needs at least {MIN_SAMPLES} readings, got {}",
            log.len()
        )));
    }
    let mut ratio = Vec::with_capacity(log.len());
    let mut log_nc1 = Vec::with_capacity(log.len());
    for r in &log.readings {
        let nc = r
            .nc1
            .ok_or_else(|| Error::Validation(format!("reading at step {} has no NC1 value", r.step)))?;
        if !(nc > 0.0 && nc.is_finite() && r.log_ratio.is_finite()) {
            return Err(Error::Validation(format!(
                "reading at step {} needs finite log_ratio and positive NC1",
                r.step
            )));
        }
        ratio.push(r.log_ratio);
        log_nc1.push(nc.log10());
    }
    Ok(Channels { ratio, log_nc1 })
}

/// Index where NC1 was last at its running peak before the first sustained
/// drop of `descent_decades` below that peak.
fn descent_onset(log_nc1: &[f64], config: &TaxonomyConfig) -> Option<usize> {
    let n = log_nc1.len();
    let sustain = (n / 50).max(3);
    let mut peak = Vec::with_capacity(n);
    let mut p = f64::NEG_INFINITY;
    for &v in log_nc1 {
        p = p.max(v);
        peak.push(p);
    }
    let below = |s: usize| log_nc1[s] <= peak[s] - config.descent_decades;
    let drop = (0..n).find(|&t| (t..(t + sustain).min(n)).all(below))?;
    (0..=drop).rev().find(|&s| log_nc1[s] >= peak[s] - config.peak_band)
}

fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map_or(0, |(i, _)| i)
}

/// Runs the three-step decision procedure.
pub fn classify(log: &TrajectoryLog, config: &TaxonomyConfig) -> Result<Classification> {
    let ch = channels(log)?;
    let n = ch.ratio.len();
    let decoupling_corr = pearson(&ch.ratio, &ch.log_nc1).unwrap_or(0.0);

    let crossing = ch.ratio.iter().position(|&r| r >= 0.0);
    let onset = descent_onset(&ch.log_nc1, config);
    let span = (n - 1) as f64;
    let plateau_fraction = match (crossing, onset) {
        (Some(c), Some(o)) => (o as f64 - c as f64) / span,
        // Crossed but never collapsed within the horizon.
        (Some(c), None) => (n - 1 - c) as f64 / span,
        (None, _) => 0.0,
    };

    let ratio_peak = argmax(&ch.ratio);
    let fold_magnitude = ch.ratio[ratio_peak] - ch.ratio[n - 1];
    let leg_start = if fold_magnitude >= config.fold_min && n - ratio_peak >= config.fold_min_points {
        ratio_peak
    } else {
        argmax(&ch.log_nc1)
    };
    let leg_start = if n - leg_start < 3 { 0 } else { leg_start };
    let (lx, ly) = (&ch.ratio[leg_start..], &ch.log_nc1[leg_start..]);
    let descent_corr = pearson(lx, ly).unwrap_or(0.0);
    let descent_sign: i8 = if descent_corr > 0.0 { 1 } else { -1 };

    let evidence = ShapeEvidence {
        descent_corr,
        descent_sign,
        plateau_fraction,
        decoupling_corr,
        fold_magnitude,
    };
    let slope_class = if descent_sign < 0 { ShapeClass::FullV } else { ShapeClass::FoldBack };
    let class = if decoupling_corr.abs() < config.decoupling_threshold {
        ShapeClass::NoArc
    } else if crossing.is_some() && plateau_fraction >= config.plateau_threshold {
        ShapeClass::DelayedEscape
    } else {
        slope_class
    };
    Ok(Classification {
        class,
        evidence,
        indeterminate: class != ShapeClass::NoArc && crossing.is_none(),
        crossing_index: crossing,
        descent_onset: onset,
    })
}

/// Reads the three kinematic axes of a log.
pub fn axis_reading(log: &TrajectoryLog, config: &TaxonomyConfig) -> Result<AxisReading> {
    let ch = channels(log)?;
    let c = classify(log, config)?;
    let start = c.crossing_index.unwrap_or(0);
    let (mut up, mut down) = (0usize, 0usize);
    for w in ch.ratio[start..].windows(2) {
        if w[1] > w[0] {
            up += 1;
        } else if w[1] < w[0] {
            down += 1;
        }
    }
    Ok(AxisReading {
        initial_criticality: if ch.ratio[0] >= 0.0 {
            InitialCriticality::Super
        } else {
            InitialCriticality::Sub
        },
        rate_ordering: if up >= down {
            RateOrdering::BetaLeads
        } else {
            RateOrdering::BetaCLeads
        },
        dissipation_regime: if c.evidence.plateau_fraction >= config.plateau_threshold {
            DissipationRegime::Low
        } else {
            DissipationRegime::Normal
        },
    })
}

// ---------------------------------------------------------------------------
// Synthetic regimes
// ---------------------------------------------------------------------------

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn assemble(name: &str, seed: u64, ratio: &[f64], log_nc1: &[f64]) -> Result<TrajectoryLog> {
    let mut log = TrajectoryLog::new(name, seed);
    for (i, (&r, &l)) in ratio.iter().zip(log_nc1).enumerate() {
        log.push(CriticalityReading {
            step: i,
            log_beta: f64::NAN,
            log_beta_c: f64::NAN,
            log_ratio: r,
            nc1: Some(10f64.powf(l)),
            order_parameter: f64::NAN,
        })?;
    }
    Ok(log)
}

/// NC1 that rises slightly until `peak` (a fraction of the horizon), then
/// falls by `depth` decades with a concave-to-linear profile.
fn arc_nc1(u: f64, peak: f64, rise: f64, depth: f64, power: f64) -> f64 {
    if u <= peak {
        -rise * (peak - u) / peak.max(1e-9)
    } else {
        -depth * ((u - peak) / (1.0 - peak)).powf(power)
    }
}

/// Ratio rising through zero; NC1 peaks at the crossing then collapses.
pub fn synth_full_v(seed: u64) -> Result<TrajectoryLog> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(150..=400);
    let cross = rng.random_range(0.15..0.35);
    let span = rng.random_range(3.0..8.0);
    let peak = cross + rng.random_range(-0.02..0.03);
    let (depth, power) = (rng.random_range(2.0..3.0), rng.random_range(0.5..1.0));
    let mut ratio = Vec::with_capacity(n);
    let mut nc = Vec::with_capacity(n);
    for i in 0..n {
        let u = i as f64 / (n - 1) as f64;
        ratio.push(span * (u - cross) + 0.02 * gauss(&mut rng));
        nc.push(arc_nc1(u, peak, 0.3, depth, power) + 0.03 * gauss(&mut rng));
    }
    assemble("synthetic_full_v", seed, &ratio, &nc)
}

/// NC1 climbs with the ratio, peaks just before the ratio's early overshoot,
/// then both fall together as the ratio folds back.
pub fn synth_fold_back(seed: u64) -> Result<TrajectoryLog> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(150..=400);
    let start = -rng.random_range(0.1..0.4);
    let top = rng.random_range(3.0..8.0);
    let fold_at: f64 = rng.random_range(0.04..0.10);
    let fold = rng.random_range(0.5..0.75) * top;
    let width: f64 = rng.random_range(0.2..0.5);
    let peak = fold_at * rng.random_range(0.6..0.85);
    let rise = rng.random_range(1.5..2.5);
    let (depth, power) = (rng.random_range(1.5..3.0), rng.random_range(0.4..0.8));
    let norm = 1.0 - (-(1.0 - fold_at) / width).exp();
    let mut ratio = Vec::with_capacity(n);
    let mut nc = Vec::with_capacity(n);
    for i in 0..n {
        let u = i as f64 / (n - 1) as f64;
        let r = if u <= fold_at {
            start + (top - start) * u / fold_at
        } else {
            top - fold * (1.0 - (-(u - fold_at) / width).exp()) / norm
        };
        ratio.push(r + 0.02 * gauss(&mut rng));
        nc.push(arc_nc1(u, peak, rise, depth, power) + 0.03 * gauss(&mut rng));
    }
    assemble("synthetic_fold_back", seed, &ratio, &nc)
}

/// NC1 moves independently of the ratio: its correlation with the ratio is
/// pinned below the decoupling threshold.
pub fn synth_no_arc(seed: u64) -> Result<TrajectoryLog> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(150..=400);
    let target = rng.random_range(-0.4..0.4);
    let span = rng.random_range(2.0..6.0);
    let offset = rng.random_range(0.1..0.4);
    let ratio: Vec<f64> = (0..n)
        .map(|i| span * (i as f64 / (n - 1) as f64 - offset) + 0.02 * gauss(&mut rng))
        .collect();
    // A smooth random wiggle, made exactly orthogonal to the ratio.
    let waves: Vec<(f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.random_range(0.5..4.0),
                rng.random_range(0.0..std::f64::consts::TAU),
                gauss(&mut rng),
            )
        })
        .collect();
    let mut wiggle: Vec<f64> = (0..n)
        .map(|i| {
            let u = i as f64 / (n - 1) as f64;
            waves.iter().map(|(f, p, a)| a * (std::f64::consts::TAU * f * u + p).sin()).sum()
        })
        .collect();
    let standardize = |v: &mut Vec<f64>| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter_mut().for_each(|x| *x -= m);
        let s = (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt().max(1e-12);
        v.iter_mut().for_each(|x| *x /= s);
    };
    let mut zr = ratio.clone();
    standardize(&mut zr);
    standardize(&mut wiggle);
    let proj = zr.iter().zip(&wiggle).map(|(a, b)| a * b).sum::<f64>() / n as f64;
    wiggle.iter_mut().zip(&zr).for_each(|(w, r)| *w -= proj * r);
    standardize(&mut wiggle);
    let scale = rng.random_range(0.3..1.0);
    let nc: Vec<f64> = zr
        .iter()
        .zip(&wiggle)
        .map(|(r, w)| scale * (target * r + (1.0 - target * target).sqrt() * w))
        .collect();
    assemble("synthetic_no_arc", seed, &ratio, &nc)
}

/// Supercritical from the start; the order parameter of a weakly tilted
/// pitchfork sits near zero for a plateau lasting `plateau` of the horizon
/// before escaping, and NC1 collapses when it does.
pub fn synth_delayed_escape(seed: u64) -> Result<TrajectoryLog> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plateau = rng.random_range(0.25..0.6);
    delayed_escape_log(seed, plateau, rng.random_range(150..=400), &mut rng)
}

fn delayed_escape_log(seed: u64, plateau: f64, n: usize, rng: &mut ChaCha8Rng) -> Result<TrajectoryLog> {
    let tilt = TiltPotential::builtin();
    let mut config = SdeConfig {
        growth_rate: 0.05,
        alpha: 0.05,
        coupling: rng.random_range(0.0..0.02),
        noise_intensity: 1e-8,
        dt: 0.05,
        steps: 1,
        modes: 1,
        dim: 1,
        init_scale: 1e-4,
        seed,
        initial_condition: InitialCondition::Constant,
        record_path: true,
    };
    let tau = deterministic_escape_time(&config, &tilt, config.init_scale, 0.2)
        .ok_or_else(|| Error::Precondition("tilted pitchfork does not escape".into()))?;
    config.steps = ((tau / plateau) / config.dt).ceil() as usize;
    let run = simulate_tilted_langevin::<f64>(&config, &tilt)?;
    let path = &run.path_samples;
    let depth = rng.random_range(1.5..3.0);
    let slope = rng.random_range(0.5..2.0);
    let mut ratio = Vec::with_capacity(n);
    let mut nc = Vec::with_capacity(n);
    for i in 0..n {
        let u = i as f64 / (n - 1) as f64;
        let eps = path[((path.len() - 1) as f64 * u).round() as usize].state[0];
        ratio.push(0.02 + slope * u + 0.005 * gauss(rng).abs());
        nc.push(-depth * (eps * eps).min(1.0) + 0.03 * gauss(rng));
    }
    assemble("synthetic_delayed_escape", seed, &ratio, &nc)
}

/// A seeded synthetic log from the defining kinematics of `class`.
pub fn synthesize(class: ShapeClass, seed: u64) -> Result<TrajectoryLog> {
    match class {
        ShapeClass::FullV => synth_full_v(seed),
        ShapeClass::FoldBack => synth_fold_back(seed),
        ShapeClass::DelayedEscape => synth_delayed_escape(seed),
        ShapeClass::NoArc => synth_no_arc(seed),
    }
}

/// Bundled synthetic logs matching the reference shape statistics of the
/// three reference runs (sparse autoencoder, CIFAR-100 fold-back, rotation
/// control). They are synthesized, not recorded.
pub const EXEMPLAR_SAE_CSV: &str = include_str!("../fixtures/exemplar_sae_full_v.csv");
pub const EXEMPLAR_CIFAR100_CSV: &str = include_str!("../fixtures/exemplar_cifar100_fold_back.csv");
pub const EXEMPLAR_ROTATION_CSV: &str = include_str!("../fixtures/exemplar_rotation_no_arc.csv");

/// `(name, csv, expected class)` for every bundled exemplar.
pub fn exemplars() -> [(&'static str, &'static str, ShapeClass); 3] {
    [
        ("sae", EXEMPLAR_SAE_CSV, ShapeClass::FullV),
        ("cifar100", EXEMPLAR_CIFAR100_CSV, ShapeClass::FoldBack),
        ("rotation", EXEMPLAR_ROTATION_CSV, ShapeClass::NoArc),
    ]
}

pub fn load_exemplar(csv: &str) -> Result<TrajectoryLog> {
    TrajectoryLog::read_csv(csv.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regimes_recovered() {
        for class in ShapeClass::ALL {
            for seed in 0..20 {
                let log = synthesize(class, seed).unwrap();
                let c = classify(&log, &TaxonomyConfig::default()).unwrap();
                assert_eq!(c.class, class, "seed {seed}: {:?}", c.evidence);
            }
        }
    }

    #[test]
    fn short_log_rejected() {
        let mut log = synth_full_v(0).unwrap();
        log.readings.truncate(10);
        assert!(matches!(classify(&log, &TaxonomyConfig::default()), Err(Error::Validation(_))));
    }

    #[test]
    fn missing_nc1_rejected() {
        let mut log = synth_full_v(0).unwrap();
        log.readings[3].nc1 = None;
        assert!(classify(&log, &TaxonomyConfig::default()).is_err());
    }

    #[test]
    fn truncated_precritical_run_is_indeterminate() {
        let log = synth_full_v(1).unwrap();
        let mut pre = log.clone();
        pre.readings.retain(|r| r.log_ratio < -0.1);
        // Replace NC1 with a shape correlated to the ratio so it is not NoArc.
        for r in &mut pre.readings {
            r.nc1 = Some(10f64.powf(-r.log_ratio));
        }
        let c = classify(&pre, &TaxonomyConfig::default()).unwrap();
        assert!(c.indeterminate);
    }

    #[test]
    fn axes_of_delayed_escape() {
        let log = synth_delayed_escape(3).unwrap();
        let a = axis_reading(&log, &TaxonomyConfig::default()).unwrap();
        assert_eq!(a.initial_criticality, InitialCriticality::Super);
        assert_eq!(a.dissipation_regime, DissipationRegime::Low);
        assert_eq!(a.rate_ordering, RateOrdering::BetaLeads);
    }
}

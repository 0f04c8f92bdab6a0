//! Euler–Maruyama simulators for the pitchfork normal form, the tilted
//! Langevin escape problem and the coupled K-mode dynamics.
//!
//! Noise follows `⟨η(t)η(t′)⟩ = 2D δ(t − t′)`, so every coordinate receives
//! an increment `sqrt(2D·dt)·N(0, 1)` per step. Randomness comes from
//! `ChaCha8Rng::seed_from_u64(seed)`, with normals drawn through
//! `rand_distr::StandardNormal` (ziggurat). Draw order is: initial state,
//! reference direction, then per-step noise in row-major order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::escape_lab::TiltPotential;
use crate::mathcore::{dot, normalized, sign_test_p_value, spearman, DenseMatrix};
use crate::scalar::Scalar;

/// Upper bound on `dt · max(|μ|, α ε*², γ K)`.
pub const STABILITY_LIMIT: f64 = 0.2;

/// Maximum number of states kept in a recorded path, besides the initial one.
pub const MAX_RECORDED_STATES: usize = 2000;

/// How the initial perturbation `ε_k(0)` is drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitialCondition {
    /// Every coordinate i.i.d. `N(0, σ₀²)`.
    #[default]
    Gaussian,
    /// Uniformly random direction with norm exactly `σ₀`.
    FixedNorm,
    /// Every coordinate equal to `σ₀`.
    Constant,
    /// Explicit row-major `K x d` values.
    Explicit(Vec<f64>),
}

/// Parameters shared by all three simulators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdeConfig {
    /// `μ = β − β_c`.
    pub growth_rate: f64,
    /// Cubic self-saturation `α > 0`.
    pub alpha: f64,
    /// Inter-mode coupling, or the tilt strength for the tilted simulator.
    pub coupling: f64,
    /// `D ≥ 0`.
    pub noise_intensity: f64,
    pub dt: f64,
    pub steps: usize,
    /// `K`.
    pub modes: usize,
    /// `d`.
    pub dim: usize,
    /// `σ₀`.
    pub init_scale: f64,
    pub seed: u64,
    #[serde(default)]
    pub initial_condition: InitialCondition,
    /// Whether to keep the decimated path.
    #[serde(default = "default_true")]
    pub record_path: bool,
}

fn default_true() -> bool {
    true
}

impl Default for SdeConfig {
    fn default() -> Self {
        Self {
            growth_rate: 0.1,
            alpha: 0.1,
            coupling: 0.0,
            noise_intensity: 0.0,
            dt: 0.05,
            steps: 2000,
            modes: 1,
            dim: 1,
            init_scale: 0.01,
            seed: 0,
            initial_condition: InitialCondition::Gaussian,
            record_path: true,
        }
    }
}

impl SdeConfig {
    /// The coupled-mode parameters used for the persistence verification:
    /// `K = 200`, `d = 10`, `μ = α = 0.1`, `γ = 1e-3`, `D = 1e-5`,
    /// `dt = 0.05`, 2000 steps, `σ₀ = 0.05`.
    pub fn appendix_d3(seed: u64) -> Self {
        Self {
            growth_rate: 0.10,
            alpha: 0.10,
            coupling: 1e-3,
            noise_intensity: 1e-5,
            dt: 0.05,
            steps: 2000,
            modes: 200,
            dim: 10,
            init_scale: 0.05,
            seed,
            initial_condition: InitialCondition::Gaussian,
            record_path: true,
        }
    }

    /// `ε* = sqrt(μ/α)`, defined only for `μ > 0`.
    pub fn fixed_point(&self) -> Option<f64> {
        (self.growth_rate > 0.0).then(|| (self.growth_rate / self.alpha).sqrt())
    }

    pub fn horizon_time(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("growth_rate", self.growth_rate),
            ("alpha", self.alpha),
            ("coupling", self.coupling),
            ("noise_intensity", self.noise_intensity),
            ("dt", self.dt),
            ("init_scale", self.init_scale),
        ];
        if let Some((name, v)) = finite.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Config(format!("{name} must be finite, got {v}")));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.coupling < 0.0 {
            return Err(Error::Config(format!("coupling must be non-negative, got {}", self.coupling)));
        }
        if self.noise_intensity < 0.0 {
            return Err(Error::Config(format!(
                "noise_intensity must be non-negative, got {}",
                self.noise_intensity
            )));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.init_scale < 0.0 {
            return Err(Error::Config("init_scale must be non-negative".into()));
        }
        if self.modes == 0 || self.dim == 0 {
            return Err(Error::Config("modes and dim must be at least 1".into()));
        }
        if let InitialCondition::Explicit(v) = &self.initial_condition {
            if v.len() != self.modes * self.dim {
                return Err(Error::Config(format!(
                    "explicit initial condition has {} values, expected {}",
                    v.len(),
                    self.modes * self.dim
                )));
            }
        }
        let saturation = self.fixed_point().map_or(0.0, |e| self.alpha * e * e);
        let rate = self
            .growth_rate
            .abs()
            .max(saturation)
            .max(self.coupling * self.modes as f64);
        if self.dt * rate > STABILITY_LIMIT {
            return Err(Error::Config(format!(
                "stability guard violated: dt·rate = {:.3e} > {STABILITY_LIMIT}",
                self.dt * rate
            )));
        }
        Ok(())
    }

    fn require_scalar(&self) -> Result<()> {
        if self.modes != 1 || self.dim != 1 {
            return Err(Error::Config(format!(
                "scalar simulator needs modes = dim = 1, got {}x{}",
                self.modes, self.dim
            )));
        }
        Ok(())
    }
}

/// One recorded state of a path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSample<T> {
    pub step: usize,
    pub time: f64,
    /// Row-major `K x d` state.
    pub state: Vec<T>,
}

/// Output of any simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdeRunResult<T> {
    /// Decimated path; recorded times are strictly increasing.
    pub path_samples: Vec<PathSample<T>>,
    pub initial_state: DenseMatrix<T>,
    pub final_state: DenseMatrix<T>,
    /// Unit direction per mode; `None` for a zero-magnitude mode.
    pub initial_directions: Vec<Option<Vec<T>>>,
    pub final_directions: Vec<Option<Vec<T>>>,
    /// Random unit reference for projection statistics.
    pub reference_direction: Vec<T>,
    pub seed: u64,
    /// Number of integrator steps actually taken.
    pub steps_taken: usize,
}

impl<T: Scalar> SdeRunResult<T> {
    /// Final value of a scalar simulation.
    pub fn final_scalar(&self) -> T {
        self.final_state.as_slice()[0]
    }
}

fn directions<T: Scalar>(m: &DenseMatrix<T>) -> Vec<Option<Vec<T>>> {
    m.row_iter().map(normalized).collect()
}

fn draw_normal<T: Scalar>(rng: &mut ChaCha8Rng) -> T {
    let g: f64 = StandardNormal.sample(rng);
    T::of(g)
}

fn initial_state<T: Scalar>(config: &SdeConfig, rng: &mut ChaCha8Rng) -> Result<DenseMatrix<T>> {
    let (k, d) = (config.modes, config.dim);
    let s0 = config.init_scale;
    let data: Vec<T> = match &config.initial_condition {
        InitialCondition::Gaussian => (0..k * d).map(|_| T::of(s0) * draw_normal::<T>(rng)).collect(),
        InitialCondition::FixedNorm => {
            let mut out = Vec::with_capacity(k * d);
            for _ in 0..k {
                let dir = random_unit::<T>(d, rng);
                out.extend(dir.into_iter().map(|x| x * T::of(s0)));
            }
            out
        }
        InitialCondition::Constant => vec![T::of(s0); k * d],
        InitialCondition::Explicit(v) => v.iter().map(|&x| T::of(x)).collect(),
    };
    DenseMatrix::from_vec(k, d, data)
}

fn random_unit<T: Scalar>(d: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    loop {
        let v: Vec<T> = (0..d).map(|_| draw_normal(rng)).collect();
        if let Some(u) = normalized(&v) {
            return u;
        }
    }
}

/// Records every `stride`-th state plus the last one.
struct Recorder<T> {
    enabled: bool,
    stride: usize,
    dt: f64,
    samples: Vec<PathSample<T>>,
}

impl<T: Scalar> Recorder<T> {
    fn new(config: &SdeConfig) -> Self {
        Self {
            enabled: config.record_path,
            stride: config.steps.div_ceil(MAX_RECORDED_STATES).max(1),
            dt: config.dt,
            samples: Vec::new(),
        }
    }

    fn offer(&mut self, step: usize, state: &[T]) {
        if self.enabled && step.is_multiple_of(self.stride) {
            self.push(step, state);
        }
    }

    fn push(&mut self, step: usize, state: &[T]) {
        if self.samples.last().is_some_and(|s| s.step >= step) {
            return;
        }
        self.samples.push(PathSample {
            step,
            time: step as f64 * self.dt,
            state: state.to_vec(),
        });
    }

    fn finish(mut self, step: usize, state: &[T]) -> Vec<PathSample<T>> {
        if self.enabled {
            self.push(step, state);
        }
        self.samples
    }
}

/// Integrates a scalar SDE `dε = drift(ε) dt + sqrt(2D) dW`, stopping early
/// once `|ε| ≥ stop` (if given). Returns the run and the stopping step.
pub(crate) fn integrate_scalar<T: Scalar>(
    config: &SdeConfig,
    drift: impl Fn(T) -> T,
    stop: Option<T>,
) -> Result<(SdeRunResult<T>, Option<usize>)> {
    config.validate()?;
    config.require_scalar()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init = initial_state::<T>(config, &mut rng)?;
    let reference = random_unit::<T>(1, &mut rng);
    let dt = T::of(config.dt);
    let amp = T::of((2.0 * config.noise_intensity * config.dt).sqrt());
    let noisy = config.noise_intensity > 0.0;

    let mut eps = init.as_slice()[0];
    let mut rec = Recorder::new(config);
    rec.offer(0, &[eps]);
    let mut hit = None;
    let mut n = 0;
    while n < config.steps {
        let mut next = eps + drift(eps) * dt;
        if noisy {
            next += amp * draw_normal::<T>(&mut rng);
        }
        eps = next;
        n += 1;
        if !eps.is_finite() {
            return Err(Error::Diverged { step: n });
        }
        rec.offer(n, &[eps]);
        if let Some(th) = stop {
            if eps.abs() >= th {
                hit = Some(n);
                break;
            }
        }
    }
    let final_state = DenseMatrix::from_vec(1, 1, vec![eps])?;
    Ok((
        SdeRunResult {
            path_samples: rec.finish(n, &[eps]),
            initial_directions: directions(&init),
            final_directions: directions(&final_state),
            initial_state: init,
            final_state,
            reference_direction: reference,
            seed: config.seed,
            steps_taken: n,
        },
        hit,
    ))
}

/// `ε̇ = με − αε³ + η`.
pub fn simulate_pitchfork_1d<T: Scalar>(config: &SdeConfig) -> Result<SdeRunResult<T>> {
    simulate_tilted_langevin(config, &TiltPotential::Null)
}

/// `ε̇ = με − αε³ − γU′(ε) + η` with `γ` taken from `config.coupling`.
pub fn simulate_tilted_langevin<T: Scalar>(config: &SdeConfig, tilt: &TiltPotential) -> Result<SdeRunResult<T>> {
    let drift = tilted_drift::<T>(config, tilt);
    integrate_scalar(config, drift, None).map(|(r, _)| r)
}

/// Drift of the tilted scalar system.
pub fn tilted_drift<T: Scalar>(config: &SdeConfig, tilt: &TiltPotential) -> impl Fn(T) -> T {
    let mu = T::of(config.growth_rate);
    let alpha = T::of(config.alpha);
    let gamma = T::of(config.coupling);
    let tilt = tilt.clone();
    move |e: T| mu * e - alpha * e * e * e - gamma * tilt.derivative(e)
}

/// `V_eff(ε) = −½με² + ¼αε⁴ + γU(ε)`, whose negative gradient is the drift.
pub fn effective_potential<T: Scalar>(config: &SdeConfig, tilt: &TiltPotential, eps: T) -> T {
    let mu = T::of(config.growth_rate);
    let alpha = T::of(config.alpha);
    let gamma = T::of(config.coupling);
    let e2 = eps * eps;
    -T::of(0.5) * mu * e2 + T::of(0.25) * alpha * e2 * e2 + gamma * tilt.value(eps)
}

/// `ε̇_k = με_k − α‖ε_k‖²ε_k − γ Σ_{j≠k} (ε_jᵀε_k) ε_j + η_k`.
pub fn simulate_coupled_modes<T: Scalar>(config: &SdeConfig) -> Result<SdeRunResult<T>> {
    config.validate()?;
    if config.dim < 2 {
        return Err(Error::Config(format!("coupled modes need dim >= 2, got {}", config.dim)));
    }
    let (k, d) = (config.modes, config.dim);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init = initial_state::<T>(config, &mut rng)?;
    let reference = random_unit::<T>(d, &mut rng);

    let dt = T::of(config.dt);
    let mu = T::of(config.growth_rate);
    let alpha = T::of(config.alpha);
    let gamma = T::of(config.coupling);
    let amp = T::of((2.0 * config.noise_intensity * config.dt).sqrt());
    let noisy = config.noise_intensity > 0.0;
    let coupled = config.coupling > 0.0 && k > 1;

    let mut e = init.as_slice().to_vec();
    let mut drift = vec![T::zero(); k * d];
    let mut gram = vec![T::zero(); k * k];
    let mut rec = Recorder::new(config);
    rec.offer(0, &e);

    for n in 1..=config.steps {
        for i in 0..k {
            let ei = &e[i * d..(i + 1) * d];
            let r2 = dot(ei, ei);
            let g = mu - alpha * r2;
            for (o, &x) in drift[i * d..(i + 1) * d].iter_mut().zip(ei) {
                *o = g * x;
            }
        }
        if coupled {
            for i in 0..k {
                let ei = &e[i * d..(i + 1) * d];
                for j in i..k {
                    let v = dot(ei, &e[j * d..(j + 1) * d]);
                    gram[i * k + j] = v;
                    gram[j * k + i] = v;
                }
            }
            for i in 0..k {
                let out = &mut drift[i * d..(i + 1) * d];
                for j in 0..k {
                    if j == i {
                        continue;
                    }
                    let c = gamma * gram[i * k + j];
                    for (o, &x) in out.iter_mut().zip(&e[j * d..(j + 1) * d]) {
                        *o -= c * x;
                    }
                }
            }
        }
        for (x, &f) in e.iter_mut().zip(&drift) {
            *x += f * dt;
        }
        if noisy {
            for x in e.iter_mut() {
                *x += amp * draw_normal::<T>(&mut rng);
            }
        }
        if e.iter().any(|x| !x.is_finite()) {
            return Err(Error::Diverged { step: n });
        }
        rec.offer(n, &e);
    }
    let final_state = DenseMatrix::from_vec(k, d, e.clone())?;
    Ok(SdeRunResult {
        path_samples: rec.finish(config.steps, &e),
        initial_directions: directions(&init),
        final_directions: directions(&final_state),
        initial_state: init,
        final_state,
        reference_direction: reference,
        seed: config.seed,
        steps_taken: config.steps,
    })
}

/// Directional persistence of a multi-mode run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistenceStats<T> {
    /// `d_k(0)ᵀ d_k(T)` for every mode that kept a non-zero magnitude.
    pub cosines: Vec<T>,
    /// Modes excluded because their initial or final magnitude was zero.
    pub excluded_modes: Vec<usize>,
    /// `(⟨ε_k(0), r⟩, ⟨ε_k(T), r⟩)` per mode.
    pub projections: Vec<(T, T)>,
    /// Spearman correlation of the projection pairs across modes.
    pub spearman: T,
    pub mean_cosine: T,
    /// One-sided sign-test p-value for `mean cosine > 0`.
    pub sign_test_p: f64,
}

/// Per-mode cosines and the projection Spearman statistic against `reference`.
pub fn persistence_stats<T: Scalar>(run: &SdeRunResult<T>, reference: &[T]) -> Result<PersistenceStats<T>> {
    let d = run.final_state.cols();
    if reference.len() != d {
        return Err(Error::Dimension(format!(
            "reference has length {}, state dimension is {d}",
            reference.len()
        )));
    }
    let mut cosines = Vec::new();
    let mut excluded = Vec::new();
    for (i, (a, b)) in run.initial_directions.iter().zip(&run.final_directions).enumerate() {
        match (a, b) {
            (Some(a), Some(b)) => cosines.push(dot(a, b)),
            _ => excluded.push(i),
        }
    }
    let projections: Vec<(T, T)> = run
        .initial_state
        .row_iter()
        .zip(run.final_state.row_iter())
        .map(|(a, b)| (dot(a, reference), dot(b, reference)))
        .collect();
    let xs: Vec<T> = projections.iter().map(|p| p.0).collect();
    let ys: Vec<T> = projections.iter().map(|p| p.1).collect();
    let rho = spearman(&xs, &ys)?;
    let mean_cosine = if cosines.is_empty() {
        T::nan()
    } else {
        cosines.iter().copied().sum::<T>() / T::of_usize(cosines.len())
    };
    let as_f64: Vec<f64> = cosines.iter().map(|c| c.as_f64()).collect();
    Ok(PersistenceStats {
        sign_test_p: sign_test_p_value(&as_f64),
        cosines,
        excluded_modes: excluded,
        projections,
        spearman: rho,
        mean_cosine,
    })
}

/// Closed-form angular-persistence budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PersistencePrediction {
    /// `σ* = σ₀ / sqrt(D/μ)`; `+∞` when `D = 0`.
    pub sigma_star: f64,
    /// Radial saturation time `(1/μ) ln(σ* sqrt(μ/(αD)))`.
    pub tau_r: f64,
    /// `r*²/(2(d−1)D)`; `+∞` when `D = 0`.
    pub t_rand: f64,
    /// Growth-phase contribution `(d−1)/σ*² · (1 − e^{−2μτ_r})`.
    pub growth_term: f64,
    /// Saturation contribution `2(d−1)D·(T − τ_r)/r*²`.
    pub saturation_term: f64,
    pub theta_sq: f64,
    /// `1 − Θ²/2`.
    pub expected_cosine: f64,
    /// Set once the saturation term exceeds 1 (`T ≫ T_rand`).
    pub randomized_regime: bool,
}

/// Predicted angular spread `Θ²(T)` at the run horizon `T = steps·dt`.
///
/// `σ₀` is read as the initial mode norm `‖ε_k(0)‖`.
pub fn predict_persistence(config: &SdeConfig) -> Result<PersistencePrediction> {
    let mu = config.growth_rate;
    if !(mu > 0.0) {
        return Err(Error::Precondition(format!("persistence needs growth_rate > 0, got {mu}")));
    }
    let (alpha, dn, d) = (config.alpha, config.noise_intensity, config.dim as f64);
    let r_star_sq = mu / alpha;
    let horizon = config.horizon_time();
    if dn == 0.0 {
        return Ok(PersistencePrediction {
            sigma_star: f64::INFINITY,
            tau_r: f64::INFINITY,
            t_rand: f64::INFINITY,
            growth_term: 0.0,
            saturation_term: 0.0,
            theta_sq: 0.0,
            expected_cosine: 1.0,
            randomized_regime: false,
        });
    }
    let sigma_star = config.init_scale / (dn / mu).sqrt();
    let tau_r = (sigma_star * (mu / (alpha * dn)).sqrt()).ln() / mu;
    let t_rand = r_star_sq / (2.0 * (d - 1.0) * dn);
    let growth_term = (d - 1.0) / (sigma_star * sigma_star) * (1.0 - (-2.0 * mu * tau_r).exp());
    let saturation_term = 2.0 * (d - 1.0) * dn * (horizon - tau_r).max(0.0) / r_star_sq;
    let theta_sq = growth_term + saturation_term;
    Ok(PersistencePrediction {
        sigma_star,
        tau_r,
        t_rand,
        growth_term,
        saturation_term,
        theta_sq,
        expected_cosine: 1.0 - theta_sq / 2.0,
        randomized_regime: saturation_term > 1.0,
    })
}

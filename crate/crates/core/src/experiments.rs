//! Synthetic datasets, the NC1 metric, trajectory logs and the toy
//! experiment suite: forward split, unimodal control, reverse traversal,
//! hierarchical splitting and the endogenous crossing of a co-evolving
//! autoencoder.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm_probe::{
    beta_c, grad_step, latent_log_beta_c, means_step, order_parameter, split_direction, CriticalityReading,
    GmmProbeState, ProbeConfig,
};
use crate::mathcore::{covariance, dot, median, squared_distance, sym_eigen, DenseMatrix};

/// Exact CSV header of a serialised [`TrajectoryLog`].
pub const CSV_HEADER: [&str; 6] = ["step", "log_beta", "log_beta_c", "log_ratio", "nc1", "order_parameter"];

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Bimodal,
    Unimodal,
    Hierarchical,
}

/// How a dataset was generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorDescriptor {
    pub kind: GeneratorKind,
    /// Component centres, indexed by label.
    pub centers: Vec<Vec<f64>>,
    /// Isotropic standard deviation per component.
    pub scales: Vec<f64>,
    pub seed: u64,
}

/// Samples with ground-truth component labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub samples: DenseMatrix<f64>,
    pub labels: Vec<usize>,
    pub descriptor: GeneratorDescriptor,
}

impl SyntheticDataset {
    pub fn n_components(&self) -> usize {
        self.descriptor.centers.len()
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_components()];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    pub fn covariance(&self) -> Result<DenseMatrix<f64>> {
        covariance(&self.samples)
    }

    pub fn beta_c(&self) -> Result<f64> {
        beta_c(&self.covariance()?)
    }

    /// Principal axis of the sample covariance.
    pub fn principal_axis(&self) -> Result<Vec<f64>> {
        Ok(sym_eigen(&self.covariance()?)?.eigenvector(0))
    }

    /// The same samples centred and whitened, so that the sample covariance
    /// is the identity up to rounding. Labels and descriptor are kept.
    pub fn whitened(&self) -> Result<Self> {
        let spec = sym_eigen(&self.covariance()?)?;
        let floor = 1e-12 * spec.max();
        if let Some(l) = spec.eigenvalues.iter().find(|l| !(**l > floor)) {
            return Err(Error::Validation(format!("cannot whiten: covariance eigenvalue {l:e}")));
        }
        let d = self.samples.cols();
        let mut w = DenseMatrix::zeros(d, d);
        for (i, &l) in spec.eigenvalues.iter().enumerate() {
            let v = spec.eigenvector(i);
            for r in 0..d {
                for c in 0..d {
                    w.row_mut(r)[c] += v[r] * v[c] / l.sqrt();
                }
            }
        }
        let mean = self.samples.column_means();
        let centred = DenseMatrix::from_rows(
            &self
                .samples
                .row_iter()
                .map(|row| row.iter().zip(&mean).map(|(x, m)| x - m).collect())
                .collect::<Vec<_>>(),
        )?;
        Ok(Self {
            samples: centred.matmul(&w)?,
            labels: self.labels.clone(),
            descriptor: self.descriptor.clone(),
        })
    }
}

/// Equal-weight mixture `±(separation, 0, …)` with unit-free isotropic spread.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BimodalParams {
    pub n: usize,
    pub separation: f64,
    pub std: f64,
}

impl Default for BimodalParams {
    fn default() -> Self {
        Self {
            n: 2000,
            separation: 2.0,
            std: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnimodalParams {
    pub n: usize,
    pub dim: usize,
    pub std: f64,
}

impl Default for UnimodalParams {
    fn default() -> Self {
        Self { n: 2000, dim: 2, std: 1.0 }
    }
}

/// Four super-clusters at `(±S/2, ±S/2)`, each holding two sub-clusters at
/// `±s/2` along the first axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HierarchicalParams {
    pub n: usize,
    pub super_spacing: f64,
    pub sub_spacing: f64,
    pub std: f64,
}

impl Default for HierarchicalParams {
    fn default() -> Self {
        Self {
            n: 1000,
            super_spacing: 8.0,
            sub_spacing: 2.0,
            std: 0.5,
        }
    }
}

fn check_scale(std: f64, n: usize) -> Result<()> {
    if !(std > 0.0 && std.is_finite()) {
        return Err(Error::Validation(format!("component scale must be positive, got {std}")));
    }
    if n < 2 {
        return Err(Error::Validation(format!("need at least 2 samples, got {n}")));
    }
    Ok(())
}

fn sample_mixture(centers: &[Vec<f64>], std: f64, n: usize, rng: &mut ChaCha8Rng) -> Result<(DenseMatrix<f64>, Vec<usize>)> {
    let d = centers[0].len();
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let l = rng.random_range(0..centers.len());
        labels.push(l);
        for &c in &centers[l] {
            let g: f64 = StandardNormal.sample(rng);
            data.push(c + std * g);
        }
    }
    Ok((DenseMatrix::from_vec(n, d, data)?, labels))
}

fn check_distinct(centers: &[Vec<f64>]) -> Result<()> {
    if centers.iter().all(|c| c == &centers[0]) {
        return Err(Error::Validation("all mixture centres coincide".into()));
    }
    Ok(())
}

pub fn gen_bimodal(params: &BimodalParams, seed: u64) -> Result<SyntheticDataset> {
    check_scale(params.std, params.n)?;
    let centers = vec![vec![-params.separation, 0.0], vec![params.separation, 0.0]];
    check_distinct(&centers)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (samples, labels) = sample_mixture(&centers, params.std, params.n, &mut rng)?;
    Ok(SyntheticDataset {
        samples,
        labels,
        descriptor: GeneratorDescriptor {
            kind: GeneratorKind::Bimodal,
            scales: vec![params.std; 2],
            centers,
            seed,
        },
    })
}

pub fn gen_unimodal(params: &UnimodalParams, seed: u64) -> Result<SyntheticDataset> {
    check_scale(params.std, params.n)?;
    if params.dim == 0 {
        return Err(Error::Validation("dimension must be at least 1".into()));
    }
    let centers = vec![vec![0.0; params.dim]];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (samples, labels) = sample_mixture(&centers, params.std, params.n, &mut rng)?;
    Ok(SyntheticDataset {
        samples,
        labels,
        descriptor: GeneratorDescriptor {
            kind: GeneratorKind::Unimodal,
            scales: vec![params.std],
            centers,
            seed,
        },
    })
}

/// Labels are `2·super + sub`, so `label / 2` is the super-cluster.
pub fn gen_hierarchical(params: &HierarchicalParams, seed: u64) -> Result<SyntheticDataset> {
    check_scale(params.std, params.n)?;
    let (big, small) = (params.super_spacing / 2.0, params.sub_spacing / 2.0);
    let supers = [[-big, -big], [-big, big], [big, -big], [big, big]];
    let mut centers = Vec::with_capacity(8);
    for s in supers {
        centers.push(vec![s[0] - small, s[1]]);
        centers.push(vec![s[0] + small, s[1]]);
    }
    check_distinct(&centers)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (samples, labels) = sample_mixture(&centers, params.std, params.n, &mut rng)?;
    Ok(SyntheticDataset {
        samples,
        labels,
        descriptor: GeneratorDescriptor {
            kind: GeneratorKind::Hierarchical,
            scales: vec![params.std; 8],
            centers,
            seed,
        },
    })
}

/// Pooled within-group covariance `(1/N) Σ_g Σ_{i∈g} (z_i − m_g)(z_i − m_g)ᵀ`.
pub fn within_group_covariance(samples: &DenseMatrix<f64>, groups: &[usize]) -> Result<DenseMatrix<f64>> {
    let (n, d) = (samples.rows(), samples.cols());
    if groups.len() != n {
        return Err(Error::Dimension(format!("{} labels for {n} samples", groups.len())));
    }
    let g = groups.iter().copied().max().map_or(0, |m| m + 1);
    let mut means = vec![vec![0.0; d]; g];
    let mut counts = vec![0usize; g];
    for (row, &l) in samples.row_iter().zip(groups) {
        counts[l] += 1;
        for (m, &x) in means[l].iter_mut().zip(row) {
            *m += x;
        }
    }
    for (m, &c) in means.iter_mut().zip(&counts) {
        if c > 0 {
            m.iter_mut().for_each(|v| *v /= c as f64);
        }
    }
    let mut w = DenseMatrix::zeros(d, d);
    for (row, &l) in samples.row_iter().zip(groups) {
        for a in 0..d {
            let da = row[a] - means[l][a];
            for b in a..d {
                w[(a, b)] += da * (row[b] - means[l][b]);
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = w[(a, b)] / n as f64;
            w[(a, b)] = v;
            w[(b, a)] = v;
        }
    }
    Ok(w)
}

/// `(β_c^(1), β_c^(2))`: the inverse top eigenvalues of the total covariance
/// and of the pooled within-super-cluster covariance.
pub fn hierarchical_critical_points(dataset: &SyntheticDataset) -> Result<(f64, f64)> {
    let supers: Vec<usize> = dataset.labels.iter().map(|l| l / 2).collect();
    let bc1 = beta_c(&dataset.covariance()?)?;
    let bc2 = beta_c(&within_group_covariance(&dataset.samples, &supers)?)?;
    Ok((bc1, bc2))
}

// ---------------------------------------------------------------------------
// NC1
// ---------------------------------------------------------------------------

/// Scalar form of the within/between scatter ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nc1Variant {
    /// `tr(Σ_W) / tr(Σ_B)`.
    #[default]
    TraceRatio,
    /// `tr(Σ_W Σ_B†) / C`.
    PseudoInverse,
}

/// `tr(Σ_W)/tr(Σ_B)` with `Σ_W` the pooled within-class covariance and `Σ_B`
/// the covariance of the class means about their average.
pub fn nc1(latents: &DenseMatrix<f64>, labels: &[usize]) -> Result<f64> {
    nc1_with(latents, labels, Nc1Variant::TraceRatio)
}

pub fn nc1_with(latents: &DenseMatrix<f64>, labels: &[usize], variant: Nc1Variant) -> Result<f64> {
    let (n, d) = (latents.rows(), latents.cols());
    if labels.len() != n {
        return Err(Error::Dimension(format!("{} labels for {n} samples", labels.len())));
    }
    let g = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; g];
    for &l in labels {
        counts[l] += 1;
    }
    let present: Vec<usize> = (0..g).filter(|&c| counts[c] > 0).collect();
    if present.len() < 2 {
        return Err(Error::UndefinedMetric("NC1 needs at least two classes".into()));
    }
    if present.iter().any(|&c| counts[c] < 2) {
        return Err(Error::UndefinedMetric("every class needs at least two samples".into()));
    }
    let sw = within_group_covariance(latents, labels)?;
    let mut means = vec![vec![0.0; d]; g];
    for (row, &l) in latents.row_iter().zip(labels) {
        for (m, &x) in means[l].iter_mut().zip(row) {
            *m += x;
        }
    }
    for &c in &present {
        means[c].iter_mut().for_each(|v| *v /= counts[c] as f64);
    }
    let classes = present.len() as f64;
    let mut centre = vec![0.0; d];
    for &c in &present {
        for (o, &m) in centre.iter_mut().zip(&means[c]) {
            *o += m / classes;
        }
    }
    let mut sb: DenseMatrix<f64> = DenseMatrix::zeros(d, d);
    for &c in &present {
        for a in 0..d {
            for b in 0..d {
                sb[(a, b)] += (means[c][a] - centre[a]) * (means[c][b] - centre[b]) / classes;
            }
        }
    }
    let tb = sb.trace();
    let scale = sw.trace().abs().max(tb.abs()).max(f64::MIN_POSITIVE);
    if tb <= 1e-14 * scale {
        return Err(Error::UndefinedMetric("between-class scatter is zero".into()));
    }
    match variant {
        Nc1Variant::TraceRatio => Ok(sw.trace() / tb),
        Nc1Variant::PseudoInverse => {
            let spec = sym_eigen(&sb)?;
            let cutoff = 1e-10 * spec.max();
            let mut acc = 0.0;
            for i in 0..d {
                let l = spec.eigenvalues[i];
                if l > cutoff {
                    let v = spec.eigenvector(i);
                    acc += dot(&v, &sw.matvec(&v)?) / l;
                }
            }
            Ok(acc / classes)
        }
    }
}

// ---------------------------------------------------------------------------
// Trajectory logs
// ---------------------------------------------------------------------------

/// A flagged violation of one of the endogenous-crossing hypotheses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisFailure {
    /// First step of the later averaging window.
    pub step: usize,
    pub hypothesis: String,
    pub detail: String,
}

/// Ordered criticality readings plus run metadata.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub experiment: String,
    pub config_hash: String,
    pub seed: u64,
    pub readings: Vec<CriticalityReading>,
}

impl TrajectoryLog {
    pub fn new(experiment: impl Into<String>, seed: u64) -> Self {
        Self {
            experiment: experiment.into(),
            config_hash: String::new(),
            seed,
            readings: Vec::new(),
        }
    }

    /// Appends a reading; steps must be strictly increasing.
    pub fn push(&mut self, reading: CriticalityReading) -> Result<()> {
        if let Some(last) = self.readings.last() {
            if reading.step <= last.step {
                return Err(Error::Validation(format!(
                    "trajectory steps must increase: {} after {}",
                    reading.step, last.step
                )));
            }
        }
        self.readings.push(reading);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.readings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.readings.is_empty()
    }

    pub fn log_ratios(&self) -> Vec<f64> {
        self.readings.iter().map(|r| r.log_ratio).collect()
    }

    pub fn order_parameters(&self) -> Vec<f64> {
        self.readings.iter().map(|r| r.order_parameter).collect()
    }

    pub fn steps(&self) -> Vec<usize> {
        self.readings.iter().map(|r| r.step).collect()
    }

    /// First index with `log β ≥ log β_c`.
    pub fn crossing_index(&self) -> Option<usize> {
        self.readings.iter().position(|r| r.log_ratio >= 0.0)
    }

    /// Writes `#`-prefixed comment lines, the fixed header and one row per
    /// reading. Absent NC1 values become empty fields.
    pub fn write_csv<W: Write>(&self, mut writer: W, comments: &[String]) -> Result<()> {
        for c in comments {
            writeln!(writer, "# {c}")?;
        }
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(CSV_HEADER)?;
        for r in &self.readings {
            w.write_record([
                r.step.to_string(),
                fmt_f64(r.log_beta),
                fmt_f64(r.log_beta_c),
                fmt_f64(r.log_ratio),
                r.nc1.map(fmt_f64).unwrap_or_default(),
                fmt_f64(r.order_parameter),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the format produced by [`TrajectoryLog::write_csv`]. The
    /// `log_ratio` column is taken as given; empty `log_beta`/`log_beta_c`
    /// fields are allowed when `log_ratio` is present.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let idx = |name: &str| headers.iter().position(|h| h == name);
        let mut cols = [0usize; 6];
        for (slot, name) in cols.iter_mut().zip(CSV_HEADER) {
            *slot = idx(name)
                .ok_or_else(|| Error::Validation(format!("trajectory CSV is missing column `{name}`")))?;
        }
        let mut log = TrajectoryLog::new("imported", 0);
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let field = |c: usize| rec.get(cols[c]).unwrap_or("");
            let num = |c: usize| -> Result<Option<f64>> {
                let s = field(c);
                if s.is_empty() {
                    return Ok(None);
                }
                s.parse::<f64>()
                    .map(Some)
                    .map_err(|_| Error::Validation(format!("row {}: `{s}` in column `{}` is not a number", line + 1, CSV_HEADER[c])))
            };
            let step: usize = field(0)
                .parse()
                .map_err(|_| Error::Validation(format!("row {}: invalid step `{}`", line + 1, field(0))))?;
            let log_ratio = num(3)?.ok_or_else(|| Error::Validation(format!("row {}: empty log_ratio", line + 1)))?;
            log.push(CriticalityReading {
                step,
                log_beta: num(1)?.unwrap_or(f64::NAN),
                log_beta_c: num(2)?.unwrap_or(f64::NAN),
                log_ratio,
                nc1: num(4)?,
                order_parameter: num(5)?.unwrap_or(f64::NAN),
            })?;
        }
        Ok(log)
    }
}

fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:e}")
    } else {
        x.to_string()
    }
}

// ---------------------------------------------------------------------------
// Activation detection
// ---------------------------------------------------------------------------

/// Flags the first index where the order parameter stays above `factor`
/// times its baseline for `consecutive` readings.
///
/// The baseline at index `t` is the median of earlier pre-critical readings
/// (`log_ratio < 0`) once at least `min_history` exist, otherwise the median
/// of all earlier readings. A decaying pre-critical signal therefore never
/// triggers; only a genuine rise does.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivationDetector {
    pub factor: f64,
    pub consecutive: usize,
    pub min_history: usize,
}

impl Default for ActivationDetector {
    fn default() -> Self {
        Self {
            factor: 10.0,
            consecutive: 5,
            min_history: 10,
        }
    }
}

impl ActivationDetector {
    pub fn detect(&self, values: &[f64], log_ratios: &[f64]) -> Option<usize> {
        let run = self.consecutive.max(1);
        let mut pre = Vec::new();
        let mut all = Vec::new();
        for t in 0..values.len() {
            if t >= self.min_history && t + run <= values.len() {
                let baseline = if pre.len() >= self.min_history {
                    median(&pre)
                } else {
                    median(&all)
                };
                if let Some(b) = baseline {
                    let threshold = self.factor * b;
                    if values[t..t + run].iter().all(|&v| v > threshold) {
                        return Some(t);
                    }
                }
            }
            all.push(values[t]);
            if log_ratios.get(t).is_some_and(|&r| r < 0.0) {
                pre.push(values[t]);
            }
        }
        None
    }
}

// ---------------------------------------------------------------------------
// Forward split (bimodal / unimodal)
// ---------------------------------------------------------------------------

/// Per-step prototype update for externally annealed runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealStep {
    /// Means learning rate, or `η` in `lr = η/β` when precision-scaled.
    pub lr: f64,
    /// Isotropic prototype noise amplitude per step, in units of the data
    /// length scale `sqrt(λ_max)` (or `sqrt(1/β)` when precision-scaled).
    pub noise: f64,
    pub precision_scaled: bool,
}

impl AnnealStep {
    fn apply<R: Rng>(&self, state: &mut GmmProbeState<f64>, data: &DenseMatrix<f64>, length: f64, rng: &mut R) -> Result<()> {
        let beta = state.beta();
        let (lr, amp) = if self.precision_scaled {
            (self.lr / beta, self.noise * (1.0 / beta).sqrt())
        } else {
            (self.lr, self.noise * length)
        };
        means_step(state, data, lr)?;
        if amp > 0.0 {
            for m in state.means.as_mut_slice() {
                let g: f64 = StandardNormal.sample(rng);
                *m += amp * g;
            }
        }
        Ok(())
    }
}

/// How β evolves during a forward run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BetaSchedule {
    /// β is a learned parameter trained jointly with the means.
    Learned { steps: usize },
    /// β/β_c swept geometrically, one prototype update per level.
    Geometric {
        from_ratio: f64,
        to_ratio: f64,
        levels: usize,
        step: AnnealStep,
    },
}

/// Outcome of a forward split run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardSplitResult {
    pub log: TrajectoryLog,
    pub beta_c: f64,
    pub activation_index: Option<usize>,
    /// `β*/β_c` at activation.
    pub activation_ratio: Option<f64>,
    pub split_direction: Option<Vec<f64>>,
    pub principal_axis: Vec<f64>,
    /// Angle between split direction and principal axis, sign-invariant.
    pub split_angle_deg: Option<f64>,
    pub final_order_parameter: f64,
    pub final_state: GmmProbeState<f64>,
}

/// Angle in degrees between two directions, ignoring sign.
pub fn axis_angle_deg(a: &[f64], b: &[f64]) -> f64 {
    let c = dot(a, b).abs() / (dot(a, a) * dot(b, b)).sqrt();
    c.min(1.0).acos().to_degrees()
}

fn probe_rng(seed: u64) -> ChaCha8Rng {
    // A stream distinct from any data or encoder stream with the same seed.
    ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15)
}

/// Trains a near-symmetric probe while β rises, logging every step.
pub fn run_forward_split(
    dataset: &SyntheticDataset,
    probe: &ProbeConfig,
    schedule: &BetaSchedule,
    detector: &ActivationDetector,
    seed: u64,
) -> Result<ForwardSplitResult> {
    probe.validate()?;
    let data = &dataset.samples;
    let cov = dataset.covariance()?;
    let spec = sym_eigen(&cov)?;
    let bc = beta_c(&cov)?;
    let log_bc = bc.ln();
    let length = spec.max().sqrt();
    let mut rng = probe_rng(seed);
    let mut state = GmmProbeState::near_symmetric(data, probe, &mut rng)?;
    let mut log = TrajectoryLog::new("forward_split", seed);

    match schedule {
        BetaSchedule::Learned { steps } => {
            for t in 0..*steps {
                state = grad_step(&state, data, probe)?;
                log.push(CriticalityReading::new(
                    t,
                    state.log_precision,
                    log_bc,
                    None,
                    order_parameter(&state),
                ))?;
            }
        }
        BetaSchedule::Geometric {
            from_ratio,
            to_ratio,
            levels,
            step,
        } => {
            for (t, x) in geometric_levels(*from_ratio, *to_ratio, *levels)?.into_iter().enumerate() {
                state.log_precision = log_bc + x.ln();
                step.apply(&mut state, data, length, &mut rng)?;
                log.push(CriticalityReading::new(
                    t,
                    state.log_precision,
                    log_bc,
                    None,
                    order_parameter(&state),
                ))?;
            }
        }
    }

    let activation_index = detector.detect(&log.order_parameters(), &log.log_ratios());
    let activation_ratio = activation_index.map(|i| log.readings[i].log_ratio.exp());
    let principal_axis = spec.eigenvector(0);
    let split = split_direction(&state);
    let split_angle_deg = split.as_ref().map(|s| axis_angle_deg(s, &principal_axis));
    Ok(ForwardSplitResult {
        final_order_parameter: order_parameter(&state),
        log,
        beta_c: bc,
        activation_index,
        activation_ratio,
        split_direction: split,
        principal_axis,
        split_angle_deg,
        final_state: state,
    })
}

/// `levels` ratios spaced geometrically from `from` to `to` inclusive.
pub fn geometric_levels(from: f64, to: f64, levels: usize) -> Result<Vec<f64>> {
    if !(from > 0.0 && to > 0.0 && from.is_finite() && to.is_finite()) {
        return Err(Error::Config(format!("schedule ratios must be positive, got {from} and {to}")));
    }
    if levels < 2 {
        return Err(Error::Config("a schedule needs at least 2 levels".into()));
    }
    let (a, b) = (from.ln(), to.ln());
    Ok((0..levels)
        .map(|i| (a + (b - a) * i as f64 / (levels - 1) as f64).exp())
        .collect())
}

/// Learned-β forward protocol used by the bimodal split and unimodal
/// control: `K = 8`, large means step, default `lr_β` and `log β₀`.
pub fn forward_probe_config() -> ProbeConfig {
    ProbeConfig {
        k_probe: 8,
        lr_means: 8.0,
        lr_logbeta: 1e-2,
        log_beta_init: -2.5,
        init_spread: None,
    }
}

/// Bimodal-versus-unimodal order-parameter ratio after `steps` learned-β
/// updates with identical probe settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub steps: usize,
    pub bimodal_order_parameter: f64,
    pub unimodal_order_parameter: f64,
    pub bimodal_ratio: f64,
    pub unimodal_ratio: f64,
    pub gap_ratio: f64,
}

pub fn order_parameter_gap(
    bimodal: &SyntheticDataset,
    unimodal: &SyntheticDataset,
    probe: &ProbeConfig,
    steps: usize,
    seed: u64,
) -> Result<GapReport> {
    let schedule = BetaSchedule::Learned { steps };
    let det = ActivationDetector::default();
    let b = run_forward_split(bimodal, probe, &schedule, &det, seed)?;
    let u = run_forward_split(unimodal, probe, &schedule, &det, seed)?;
    let last_ratio = |r: &ForwardSplitResult| r.log.readings.last().map_or(f64::NAN, |x| x.log_ratio.exp());
    Ok(GapReport {
        steps,
        bimodal_order_parameter: b.final_order_parameter,
        unimodal_order_parameter: u.final_order_parameter,
        bimodal_ratio: last_ratio(&b),
        unimodal_ratio: last_ratio(&u),
        gap_ratio: b.final_order_parameter / u.final_order_parameter,
    })
}

// ---------------------------------------------------------------------------
// Reverse traversal
// ---------------------------------------------------------------------------

/// Descending β/β_c levels for the merge leg, each relaxed for
/// `inner_steps` prototype updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReverseOptions {
    pub ratios: Vec<f64>,
    pub inner_steps: usize,
    pub step: AnnealStep,
    /// Merge once the order parameter drops below this fraction of its value
    /// at the first level.
    pub merge_fraction: f64,
}

impl Default for ReverseOptions {
    /// Coarse geometric spacing far from criticality and 0.5% spacing across
    /// `β/β_c ∈ [0.8, 1.3]`.
    fn default() -> Self {
        let mut ratios = geometric_levels(3.0, 1.3, 16).unwrap_or_default();
        ratios.pop();
        let fine = ((1.3f64 / 0.8).ln() / 1.005f64.ln()).round() as usize;
        let mut mid = geometric_levels(1.3, 0.8, fine + 1).unwrap_or_default();
        mid.pop();
        ratios.extend(mid);
        ratios.extend(geometric_levels(0.8, 0.5, 8).unwrap_or_default());
        Self {
            ratios,
            inner_steps: 150,
            step: AnnealStep {
                lr: 8.0,
                noise: 1e-4,
                precision_scaled: false,
            },
            merge_fraction: 0.1,
        }
    }
}

/// Outcome of a merge leg.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReverseResult {
    /// One reading per level, taken after relaxation.
    pub log: TrajectoryLog,
    pub beta_c: f64,
    /// Order parameter at the first (most supercritical) level.
    pub plateau: f64,
    /// `β/β_c` of the first level below `merge_fraction · plateau`.
    pub merge_ratio: Option<f64>,
    /// `|merge_ratio − 1|`.
    pub tracking_error: Option<f64>,
    /// Order parameter at the lowest level as a fraction of the plateau.
    pub final_fraction: f64,
}

/// Anneals β down through `options.ratios`, re-training the means at each
/// level, starting from a split probe.
pub fn run_reverse_traversal(
    dataset: &SyntheticDataset,
    trained: &GmmProbeState<f64>,
    options: &ReverseOptions,
    seed: u64,
) -> Result<ReverseResult> {
    if options.ratios.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Config("reverse ratios must be strictly descending".into()));
    }
    if options.ratios.is_empty() {
        return Err(Error::Config("reverse schedule is empty".into()));
    }
    let data = &dataset.samples;
    let cov = dataset.covariance()?;
    let spec = sym_eigen(&cov)?;
    let bc = beta_c(&cov)?;
    let log_bc = bc.ln();
    let length = spec.max().sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5851_F42D_4C95_7F2D);
    let mut state = trained.clone();
    let mut log = TrajectoryLog::new("reverse_traversal", seed);
    for (i, &x) in options.ratios.iter().enumerate() {
        state.log_precision = log_bc + x.ln();
        for _ in 0..options.inner_steps.max(1) {
            options.step.apply(&mut state, data, length, &mut rng)?;
        }
        log.push(CriticalityReading::new(
            i,
            state.log_precision,
            log_bc,
            None,
            order_parameter(&state),
        ))?;
    }
    let ops = log.order_parameters();
    let plateau = ops[0];
    let merge = ops.iter().position(|&o| o < options.merge_fraction * plateau);
    let merge_ratio = merge.map(|i| options.ratios[i]);
    Ok(ReverseResult {
        tracking_error: merge_ratio.map(|x| (x - 1.0).abs()),
        merge_ratio,
        final_fraction: ops[ops.len() - 1] / plateau,
        plateau,
        beta_c: bc,
        log,
    })
}

/// Largest relative gap between forward and reverse order parameters over
/// the reverse levels with `β/β_c ≥ min_ratio`, interpolating the forward
/// curve linearly in `log(β/β_c)`.
pub fn branch_overlap_error(forward: &TrajectoryLog, reverse: &TrajectoryLog, min_ratio: f64) -> Option<f64> {
    let mut fwd: Vec<(f64, f64)> = forward.readings.iter().map(|r| (r.log_ratio, r.order_parameter)).collect();
    fwd.sort_by(|a, b| a.0.total_cmp(&b.0));
    let interp = |x: f64| -> Option<f64> {
        let i = fwd.partition_point(|p| p.0 < x);
        if i == 0 || i >= fwd.len() {
            return None;
        }
        let (a, b) = (fwd[i - 1], fwd[i]);
        let w = if b.0 > a.0 { (x - a.0) / (b.0 - a.0) } else { 0.0 };
        Some(a.1 + w * (b.1 - a.1))
    };
    let lmin = min_ratio.ln();
    reverse
        .readings
        .iter()
        .filter(|r| r.log_ratio >= lmin)
        .filter_map(|r| interp(r.log_ratio).map(|f| (f - r.order_parameter).abs() / r.order_parameter))
        .reduce(f64::max)
}

/// Forward anneal settings used ahead of the merge leg.
pub fn reverse_forward_schedule() -> BetaSchedule {
    BetaSchedule::Geometric {
        from_ratio: 0.5,
        to_ratio: 3.0,
        levels: 1000,
        step: AnnealStep {
            lr: 8.0,
            noise: 1e-4,
            precision_scaled: false,
        },
    }
}

/// Forward split followed by the merge leg on the same dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReverseExperiment {
    pub forward: ForwardSplitResult,
    pub reverse: ReverseResult,
    /// Forward-vs-reverse mismatch on the equilibrium branch (`β/β_c ≥ 1.6`).
    pub overlap_error: Option<f64>,
    /// Reverse order parameter at `β = 0.5 β_c` relative to the plateau.
    pub fraction_at_half: f64,
}

pub fn run_reverse_experiment(
    dataset: &SyntheticDataset,
    probe: &ProbeConfig,
    forward_schedule: &BetaSchedule,
    options: &ReverseOptions,
    seed: u64,
) -> Result<ReverseExperiment> {
    let forward = run_forward_split(dataset, probe, forward_schedule, &ActivationDetector::default(), seed)?;
    let reverse = run_reverse_traversal(dataset, &forward.final_state, options, seed)?;
    let overlap_error = branch_overlap_error(&forward.log, &reverse.log, 1.6);
    let half = reverse
        .log
        .readings
        .iter()
        .min_by(|a, b| (a.log_ratio - 0.5f64.ln()).abs().total_cmp(&(b.log_ratio - 0.5f64.ln()).abs()))
        .map_or(f64::NAN, |r| r.order_parameter / reverse.plateau);
    Ok(ReverseExperiment {
        forward,
        reverse,
        overlap_error,
        fraction_at_half: half,
    })
}

// ---------------------------------------------------------------------------
// Hierarchy
// ---------------------------------------------------------------------------

/// Anneal from `from_ratio · β_c^(1)` to `to_ratio · β_c^(2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HierarchyOptions {
    pub k: usize,
    pub steps: usize,
    pub from_ratio: f64,
    pub to_ratio: f64,
    pub step: AnnealStep,
}

impl Default for HierarchyOptions {
    fn default() -> Self {
        Self {
            k: 8,
            steps: 4000,
            from_ratio: 0.5,
            to_ratio: 2.5,
            step: AnnealStep {
                lr: 1.0,
                noise: 1e-3,
                precision_scaled: true,
            },
        }
    }
}

/// One detected activation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivationEvent {
    pub index: usize,
    pub beta: f64,
    /// Analytic critical precision this event is compared against.
    pub target_beta_c: f64,
}

impl ActivationEvent {
    pub fn ratio(&self) -> f64 {
        self.beta / self.target_beta_c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyResult {
    /// Readings against `β_c^(1)` with the global order parameter.
    pub log: TrajectoryLog,
    /// RMS spread of prototypes within their nearest super-cluster.
    pub secondary_order_parameter: Vec<f64>,
    pub beta_c1: f64,
    pub beta_c2: f64,
    /// Super-cluster split, then sub-cluster split (either may be missing).
    pub first_event: Option<ActivationEvent>,
    pub second_event: Option<ActivationEvent>,
    /// Nearest sub-cluster centre for every final prototype.
    pub assignment: Vec<usize>,
    /// Every sub-cluster holds exactly one prototype (the 2+2+2+2 tessellation).
    pub balanced: bool,
}

impl HierarchyResult {
    pub fn event_count(&self) -> usize {
        usize::from(self.first_event.is_some()) + usize::from(self.second_event.is_some())
    }
}

fn group_means(data: &DenseMatrix<f64>, labels: &[usize], groups: usize) -> Vec<Vec<f64>> {
    let d = data.cols();
    let mut sums = vec![vec![0.0; d]; groups];
    let mut counts = vec![0usize; groups];
    for (row, &l) in data.row_iter().zip(labels) {
        counts[l] += 1;
        for (s, &x) in sums[l].iter_mut().zip(row) {
            *s += x;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|v| *v /= c as f64);
        }
    }
    sums
}

fn nearest(point: &[f64], centres: &[Vec<f64>]) -> usize {
    centres
        .iter()
        .enumerate()
        .min_by(|a, b| squared_distance(point, a.1).total_cmp(&squared_distance(point, b.1)))
        .map_or(0, |(i, _)| i)
}

fn within_group_spread(state: &GmmProbeState<f64>, centres: &[Vec<f64>]) -> f64 {
    let groups: Vec<usize> = state.means.row_iter().map(|m| nearest(m, centres)).collect();
    let d = state.d();
    let mut total = 0.0;
    for g in 0..centres.len() {
        let members: Vec<&[f64]> = state
            .means
            .row_iter()
            .zip(&groups)
            .filter(|(_, &gg)| gg == g)
            .map(|(m, _)| m)
            .collect();
        if members.is_empty() {
            continue;
        }
        let mut c = vec![0.0; d];
        for m in &members {
            for (o, &x) in c.iter_mut().zip(*m) {
                *o += x / members.len() as f64;
            }
        }
        total += members.iter().map(|m| squared_distance(m, &c)).sum::<f64>();
    }
    (total / state.k() as f64).sqrt()
}

/// Anneals a K-prototype probe through both levels of a hierarchical dataset
/// and detects the two activation events.
pub fn run_hierarchical(
    dataset: &SyntheticDataset,
    options: &HierarchyOptions,
    detector: &ActivationDetector,
    seed: u64,
) -> Result<HierarchyResult> {
    if dataset.descriptor.kind != GeneratorKind::Hierarchical {
        return Err(Error::Validation("hierarchical run needs a hierarchical dataset".into()));
    }
    let data = &dataset.samples;
    let (bc1, bc2) = hierarchical_critical_points(dataset)?;
    let supers: Vec<usize> = dataset.labels.iter().map(|l| l / 2).collect();
    let super_centres = group_means(data, &supers, 4);
    let sub_centres = group_means(data, &dataset.labels, 8);
    let length = (1.0 / bc1).sqrt();

    let probe = ProbeConfig {
        k_probe: options.k,
        init_spread: Some(1e-3 * length),
        ..ProbeConfig::default()
    };
    let mut rng = probe_rng(seed);
    let mut state = GmmProbeState::near_symmetric(data, &probe, &mut rng)?;
    let betas = geometric_levels(options.from_ratio * bc1, options.to_ratio * bc2, options.steps)?;
    let mut log = TrajectoryLog::new("hierarchy", seed);
    let mut secondary = Vec::with_capacity(betas.len());
    let mut secondary_ratio = Vec::with_capacity(betas.len());
    for (t, &b) in betas.iter().enumerate() {
        state.log_precision = b.ln();
        options.step.apply(&mut state, data, length, &mut rng)?;
        log.push(CriticalityReading::new(t, b.ln(), bc1.ln(), None, order_parameter(&state)))?;
        secondary.push(within_group_spread(&state, &super_centres));
        secondary_ratio.push((b / bc2).ln());
    }
    let first_event = detector
        .detect(&log.order_parameters(), &log.log_ratios())
        .map(|i| ActivationEvent {
            index: i,
            beta: betas[i],
            target_beta_c: bc1,
        });
    // The sub-cluster split is sought only after the super-cluster split.
    let start = first_event.map_or(0, |e| e.index + 1);
    let second_event = detector
        .detect(&secondary[start..], &secondary_ratio[start..])
        .map(|i| ActivationEvent {
            index: start + i,
            beta: betas[start + i],
            target_beta_c: bc2,
        });
    let assignment: Vec<usize> = state.means.row_iter().map(|m| nearest(m, &sub_centres)).collect();
    let mut counts = [0usize; 8];
    for &a in &assignment {
        counts[a] += 1;
    }
    Ok(HierarchyResult {
        log,
        secondary_order_parameter: secondary,
        beta_c1: bc1,
        beta_c2: bc2,
        first_event,
        second_event,
        balanced: counts.iter().all(|&c| c == 1),
        assignment,
    })
}

// ---------------------------------------------------------------------------
// Endogenous crossing
// ---------------------------------------------------------------------------

/// Linear autoencoder `x ↦ W_dec W_enc x` trained on mean squared
/// reconstruction error by plain gradient descent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyEncoderState {
    /// `d_lat x d_in`.
    pub encoder: DenseMatrix<f64>,
    /// `d_in x d_lat`.
    pub decoder: DenseMatrix<f64>,
    pub lr: f64,
    pub step: usize,
}

impl ToyEncoderState {
    /// Weights i.i.d. `N(0, init_scale²)`.
    pub fn new<R: Rng>(d_in: usize, d_lat: usize, init_scale: f64, lr: f64, rng: &mut R) -> Result<Self> {
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    let g: f64 = StandardNormal.sample(rng);
                    init_scale * g
                })
                .collect()
        };
        let encoder = DenseMatrix::from_vec(d_lat, d_in, draw(d_lat * d_in))?;
        let decoder = DenseMatrix::from_vec(d_in, d_lat, draw(d_in * d_lat))?;
        Ok(Self {
            encoder,
            decoder,
            lr,
            step: 0,
        })
    }

    /// `N x d_lat` latents `X W_encᵀ`.
    pub fn latents(&self, x: &DenseMatrix<f64>) -> Result<DenseMatrix<f64>> {
        x.matmul(&self.encoder.transpose())
    }

    /// Mean squared reconstruction error per sample.
    pub fn loss(&self, x: &DenseMatrix<f64>) -> Result<f64> {
        let z = self.latents(x)?;
        let r = z.matmul(&self.decoder.transpose())?.sub(x)?;
        Ok(r.as_slice().iter().map(|v| v * v).sum::<f64>() / x.rows() as f64)
    }

    /// One gradient step; returns the pre-step loss.
    pub fn train_step(&mut self, x: &DenseMatrix<f64>) -> Result<f64> {
        let n = x.rows() as f64;
        let z = self.latents(x)?;
        let r = z.matmul(&self.decoder.transpose())?.sub(x)?;
        let loss = r.as_slice().iter().map(|v| v * v).sum::<f64>() / n;
        // ∂L/∂W_dec = (2/N) Rᵀ Z ; ∂L/∂W_enc = (2/N) (R W_dec)ᵀ X.
        let g_dec = r.transpose().matmul(&z)?.scaled(2.0 / n);
        let g_enc = r.matmul(&self.decoder)?.transpose().matmul(x)?.scaled(2.0 / n);
        self.decoder = self.decoder.sub(&g_dec.scaled(self.lr))?;
        self.encoder = self.encoder.sub(&g_enc.scaled(self.lr))?;
        self.step += 1;
        Ok(loss)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndogenousOptions {
    pub steps: usize,
    pub encoder_lr: f64,
    pub weight_init: f64,
    pub latent_dim: usize,
    pub probe: ProbeConfig,
    /// Window for the monotonicity audit of β(t) and β_c(t).
    pub audit_window: usize,
    /// Relative change between block means tolerated by the audit.
    pub audit_tolerance: f64,
}

impl Default for EndogenousOptions {
    fn default() -> Self {
        Self {
            steps: 1500,
            encoder_lr: 0.02,
            weight_init: 0.1,
            latent_dim: 2,
            probe: forward_probe_config(),
            audit_window: 100,
            audit_tolerance: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndogenousResult {
    pub log: TrajectoryLog,
    /// `β(0) − β_c(0)`.
    pub delta0: f64,
    pub crossing_step: Option<usize>,
    pub activation_step: Option<usize>,
    pub hypothesis_failures: Vec<HypothesisFailure>,
    pub final_loss: f64,
    pub loss_trace: Vec<f64>,
}

/// Alternates an encoder reconstruction step with a detached probe step on
/// the fresh latents, logging β(t), β_c(t), NC1 and the order parameter.
pub fn run_endogenous(dataset: &SyntheticDataset, options: &EndogenousOptions, seed: u64) -> Result<EndogenousResult> {
    options.probe.validate()?;
    let x = &dataset.samples;
    let mut enc_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut encoder = ToyEncoderState::new(x.cols(), options.latent_dim, options.weight_init, options.encoder_lr, &mut enc_rng)?;
    let z0 = encoder.latents(x)?;
    let mut probe_rng = probe_rng(seed);
    let mut state = GmmProbeState::near_symmetric(&z0, &options.probe, &mut probe_rng)?;
    let delta0 = state.beta() - latent_log_beta_c(&z0)?.exp();

    let mut log = TrajectoryLog::new("endogenous", seed);
    let mut losses = Vec::with_capacity(options.steps);
    for t in 0..options.steps {
        let loss = encoder.train_step(x)?;
        if !loss.is_finite() {
            return Err(Error::Aborted {
                step: t,
                reason: "encoder reconstruction loss is not finite".into(),
                partial: Box::new(log),
            });
        }
        losses.push(loss);
        let z = encoder.latents(x)?;
        state = match grad_step(&state, &z, &options.probe) {
            Ok(s) => s,
            Err(e) => {
                return Err(Error::Aborted {
                    step: t,
                    reason: e.to_string(),
                    partial: Box::new(log),
                })
            }
        };
        let log_bc = latent_log_beta_c(&z)?;
        let nc = nc1(&z, &dataset.labels).ok();
        log.push(CriticalityReading::new(t, state.log_precision, log_bc, nc, order_parameter(&state)))?;
    }
    let crossing_step = log.crossing_index().map(|i| log.readings[i].step);
    let activation_step = ActivationDetector::default()
        .detect(&log.order_parameters(), &log.log_ratios())
        .map(|i| log.readings[i].step);
    let hypothesis_failures = audit_hypotheses(&log, options.audit_window, options.audit_tolerance);
    Ok(EndogenousResult {
        final_loss: encoder.loss(x)?,
        log,
        delta0,
        crossing_step,
        activation_step,
        hypothesis_failures,
        loss_trace: losses,
    })
}

/// Checks that β(t) is non-decreasing and β_c(t) non-increasing between
/// consecutive `window`-step block averages, up to a relative `tolerance`.
pub fn audit_hypotheses(log: &TrajectoryLog, window: usize, tolerance: f64) -> Vec<HypothesisFailure> {
    let window = window.max(1);
    let blocks = |f: &dyn Fn(&CriticalityReading) -> f64| -> Vec<(usize, f64)> {
        log.readings
            .chunks(window)
            .filter(|c| c.len() == window)
            .map(|c| (c[0].step, c.iter().map(f).sum::<f64>() / window as f64))
            .collect()
    };
    let beta = blocks(&|r| r.log_beta.exp());
    let beta_c = blocks(&|r| r.log_beta_c.exp());
    let mut out = Vec::new();
    for w in beta.windows(2) {
        if w[1].1 < w[0].1 * (1.0 - tolerance) {
            out.push(HypothesisFailure {
                step: w[1].0,
                hypothesis: "beta_non_decreasing".into(),
                detail: format!("block mean fell from {:.6e} to {:.6e}", w[0].1, w[1].1),
            });
        }
    }
    for w in beta_c.windows(2) {
        if w[1].1 > w[0].1 * (1.0 + tolerance) {
            out.push(HypothesisFailure {
                step: w[1].0,
                hypothesis: "beta_c_non_increasing".into(),
                detail: format!("block mean rose from {:.6e} to {:.6e}", w[0].1, w[1].1),
            });
        }
    }
    out
}

/// `log β_c` traces of detached probes of different sizes on the same
/// endogenous run; the encoder never sees the probe, so they coincide.
pub fn k_probe_log_beta_c_traces(
    dataset: &SyntheticDataset,
    options: &EndogenousOptions,
    ks: &[usize],
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    ks.iter()
        .map(|&k| {
            let mut o = options.clone();
            o.probe.k_probe = k;
            Ok(run_endogenous(dataset, &o, seed)?
                .log
                .readings
                .iter()
                .map(|r| r.log_beta_c)
                .collect())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn whitened_covariance_is_identity() {
        let ds = gen_bimodal(&BimodalParams::default(), 4).unwrap();
        let w = ds.whitened().unwrap();
        let cov = w.covariance().unwrap();
        assert!(cov.sub(&DenseMatrix::identity(2)).unwrap().max_abs() < 1e-12);
        assert!((w.beta_c().unwrap() - 1.0).abs() < 1e-12);
        assert!(w.samples.column_means().iter().all(|m| m.abs() < 1e-12));
    }

    #[test]
    fn bimodal_top_eigenvalue() {
        let ds = gen_bimodal(
            &BimodalParams {
                n: 10_000,
                ..BimodalParams::default()
            },
            1,
        )
        .unwrap();
        let lam = 1.0 / ds.beta_c().unwrap();
        assert_abs_diff_eq!(lam, 5.0, epsilon = 0.15);
    }

    #[test]
    fn unimodal_beta_c_near_one() {
        let ds = gen_unimodal(
            &UnimodalParams {
                n: 10_000,
                ..UnimodalParams::default()
            },
            2,
        )
        .unwrap();
        assert_abs_diff_eq!(ds.beta_c().unwrap(), 1.0, epsilon = 0.05);
    }

    #[test]
    fn hierarchy_levels_are_separated() {
        let ds = gen_hierarchical(&HierarchicalParams::default(), 3).unwrap();
        let (b1, b2) = hierarchical_critical_points(&ds).unwrap();
        assert!(b2 / b1 > 2.0);
    }

    #[test]
    fn degenerate_centres_rejected() {
        let p = BimodalParams {
            separation: 0.0,
            ..BimodalParams::default()
        };
        assert!(matches!(gen_bimodal(&p, 0), Err(Error::Validation(_))));
        let h = HierarchicalParams {
            super_spacing: 0.0,
            sub_spacing: 0.0,
            ..HierarchicalParams::default()
        };
        assert!(gen_hierarchical(&h, 0).is_err());
    }

    #[test]
    fn nc1_examples() {
        let pts = DenseMatrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0], vec![3.0, 1.0], vec![3.0, 1.0]]).unwrap();
        assert_eq!(nc1(&pts, &[0, 0, 1, 1]).unwrap(), 0.0);
        assert!(matches!(nc1(&pts, &[0, 0, 0, 0]), Err(Error::UndefinedMetric(_))));
        assert!(matches!(nc1(&pts, &[0, 1, 1, 1]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn detector_ignores_decay_and_finds_rise() {
        let mut v: Vec<f64> = (0..50).map(|i| 1e-3 * 0.9f64.powi(i)).collect();
        v.extend((0..50).map(|i| 1e-5 * 1.3f64.powi(i)));
        let ratios: Vec<f64> = (0..100).map(|i| if i < 50 { -1.0 } else { 1.0 }).collect();
        let t = ActivationDetector::default().detect(&v, &ratios).unwrap();
        assert!(t > 50);
        let flat = vec![1.0; 100];
        assert_eq!(ActivationDetector::default().detect(&flat, &ratios), None);
    }

    #[test]
    fn csv_round_trip() {
        let mut log = TrajectoryLog::new("t", 0);
        log.push(CriticalityReading::new(0, -2.5, 0.1, None, 1e-3)).unwrap();
        log.push(CriticalityReading::new(5, -2.0, f64::INFINITY, Some(0.25), 0.5)).unwrap();
        let mut buf = Vec::new();
        log.write_csv(&mut buf, &["version 0".into()]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("step,log_beta,log_beta_c,log_ratio,nc1,order_parameter\n"));
        let back = TrajectoryLog::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.readings, log.readings);
    }

    #[test]
    fn steps_must_increase() {
        let mut log = TrajectoryLog::new("t", 0);
        log.push(CriticalityReading::new(3, 0.0, 0.0, None, 0.0)).unwrap();
        assert!(log.push(CriticalityReading::new(3, 0.0, 0.0, None, 0.0)).is_err());
    }

    #[test]
    fn encoder_gradient_matches_finite_difference() {
        let ds = gen_bimodal(&BimodalParams { n: 50, ..BimodalParams::default() }, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let enc = ToyEncoderState::new(2, 2, 0.3, 0.1, &mut rng).unwrap();
        let mut stepped = enc.clone();
        stepped.train_step(&ds.samples).unwrap();
        let analytic = enc.encoder.sub(&stepped.encoder).unwrap().scaled(1.0 / enc.lr);
        let h = 1e-6;
        for i in 0..4 {
            let mut p = enc.clone();
            p.encoder.as_mut_slice()[i] += h;
            let mut m = enc.clone();
            m.encoder.as_mut_slice()[i] -= h;
            let fd = (p.loss(&ds.samples).unwrap() - m.loss(&ds.samples).unwrap()) / (2.0 * h);
            assert_abs_diff_eq!(fd, analytic.as_slice()[i], epsilon = 1e-6);
        }
    }
}

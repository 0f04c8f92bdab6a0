//! One function per subcommand. Per-seed work runs in parallel and writes its
//! own files; summaries are merged afterwards on the calling thread.

use std::io::Write;
use std::path::Path;

use betacrit::escape_lab::{
    collect_observations, fit_escape_models, read_levels_csv, summarize, table5_levels, write_levels_csv,
    LevelSummary, SweepPlan, SweepSummary, TiltPotential,
};
use betacrit::experiments::{
    gen_bimodal, gen_hierarchical, gen_unimodal, run_endogenous, run_forward_split, run_hierarchical,
    run_reverse_experiment, ActivationDetector, AnnealStep, BetaSchedule, BimodalParams, EndogenousOptions,
    HierarchicalParams, HierarchyOptions, HypothesisFailure, ReverseOptions, SyntheticDataset, TrajectoryLog,
    UnimodalParams,
};
use betacrit::gmm_probe::{GmmProbeState, ProbeConfig};
use betacrit::hessian::{analytic_hessian, find_crossing, find_crossing_numerical, numerical_hessian};
use betacrit::mathcore::Weighting;
use betacrit::sde::{
    persistence_stats, predict_persistence, simulate_coupled_modes, simulate_pitchfork_1d, InitialCondition,
    PersistencePrediction, SdeConfig,
};
use betacrit::taxonomy::{
    axis_reading, classify, exemplars, load_exemplar, synthesize, AxisReading, ShapeClass, ShapeEvidence, TaxonomyConfig,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::output::{opt, LineChart, OutputDir};

/// Everything a subcommand needs.
pub struct Context {
    pub config: RunConfig,
    pub out: OutputDir,
    pub seeds: Vec<u64>,
}

fn per_seed<T: Send>(seeds: &[u64], f: impl Fn(u64) -> Result<T> + Sync) -> Result<Vec<T>> {
    seeds.par_iter().map(|&s| f(s)).collect()
}

fn probe_config(c: &RunConfig) -> ProbeConfig {
    ProbeConfig {
        k_probe: c.usize("probe.k_probe"),
        lr_means: c.f64("probe.lr_means"),
        lr_logbeta: c.f64("probe.lr_logbeta"),
        log_beta_init: c.f64("probe.log_beta_init"),
        init_spread: None,
    }
}

fn bimodal(c: &RunConfig, n: usize, seed: u64) -> Result<SyntheticDataset> {
    let params = BimodalParams {
        n,
        separation: c.f64("data.separation"),
        std: c.f64("data.std"),
    };
    Ok(gen_bimodal(&params, seed)?)
}

fn write_log(ctx: &Context, name: &str, log: &TrajectoryLog) -> Result<()> {
    let mut log = log.clone();
    log.config_hash = ctx.out.config_hash().to_string();
    let mut comments = ctx.out.comments();
    comments.push(format!("experiment: {}, seed: {}", log.experiment, log.seed));
    let mut f = ctx.out.create_file(name)?;
    log.write_csv(&mut f, &comments)?;
    f.flush().map_err(|e| CliError::io(ctx.out.path(name), e))
}

fn trajectory_chart(title: &str, log: &TrajectoryLog) -> LineChart {
    let steps = log.steps();
    let mut chart = LineChart::new(title, "step", "order parameter")
        .log_y()
        .series("order parameter", steps.iter().map(|&s| s as f64).zip(log.order_parameters()).collect());
    if let Some(i) = log.crossing_index() {
        chart = chart.marker(steps[i] as f64, "β = β_c");
    }
    chart
}

// ---------------------------------------------------------------------------
// calibrate
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct CalibrationSeed {
    seed: u64,
    beta_c_analytic: f64,
    crossing_analytic_hessian: f64,
    crossing_finite_difference: f64,
    max_abs_error: f64,
    /// Largest entry gap between finite-difference and analytic Hessians at
    /// β/β_c ∈ {0.5, 1, 1.5}.
    hessian_max_entry_gap: f64,
}

fn calibration_data(c: &RunConfig, seed: u64) -> Result<SyntheticDataset> {
    let unimodal = || {
        gen_unimodal(
            &UnimodalParams {
                n: c.usize("data.n"),
                dim: c.usize("data.dim"),
                std: c.f64("data.std"),
            },
            seed,
        )
    };
    match c.str("calibrate.source") {
        "bimodal" => bimodal(c, c.usize("data.n"), seed),
        "unimodal" => Ok(unimodal()?),
        "identity" => Ok(unimodal()?.whitened()?),
        other => Err(CliError::Config(format!(
            "`calibrate.source` must be bimodal, unimodal or identity, got `{other}`"
        ))),
    }
}

pub fn calibrate(ctx: &Context) -> Result<()> {
    let c = &ctx.config;
    let (k, lo, hi) = (c.usize("calibrate.k"), c.f64("calibrate.beta_lo"), c.f64("calibrate.beta_hi"));
    let rows = per_seed(&ctx.seeds, |seed| {
        let ds = calibration_data(c, seed)?;
        let cov = ds.covariance()?;
        let analytic = find_crossing(k, &cov, lo, hi)?;
        let numeric = find_crossing_numerical(k, &ds.samples, lo, hi)?;
        let bc = analytic.beta_critical_analytic;
        let centre = ds.samples.column_means();
        let mut gap: f64 = 0.0;
        for x in [0.5, 1.0, 1.5] {
            let state = GmmProbeState::collapsed(&centre, k, (x * bc).ln())?;
            let fd = numerical_hessian(&state, &ds.samples)?;
            gap = gap.max(fd.sub(&analytic_hessian(x * bc, k, &cov)?)?.max_abs());
        }
        let mut scan = analytic.scan_points.clone();
        scan.sort_by(|a, b| a.0.total_cmp(&b.0));
        let table: Vec<Vec<String>> = scan.iter().map(|(b, v)| vec![b.to_string(), v.to_string()]).collect();
        ctx.out
            .write_table(&format!("calibrate_scan_seed{seed}.csv"), &["beta", "lowest_eigenvalue"], &table)?;
        let chart = LineChart::new(&format!("Lowest Hessian eigenvalue, seed {seed}"), "β", "λ_min")
            .series("λ_min(H)", scan)
            .marker(bc, "1/λ_max");
        ctx.out.write_svg(&format!("calibrate_scan_seed{seed}.svg"), &chart)?;
        Ok(CalibrationSeed {
            seed,
            beta_c_analytic: bc,
            crossing_analytic_hessian: analytic.beta_critical_numeric,
            crossing_finite_difference: numeric.beta_critical_numeric,
            max_abs_error: analytic.absolute_error().max(numeric.absolute_error()),
            hessian_max_entry_gap: gap,
        })
    })?;
    for r in &rows {
        println!(
            "seed {}: β_c = {:.6}, analytic-Hessian crossing {:.6}, finite-difference crossing {:.6}, Hessian entry gap {:.2e}",
            r.seed, r.beta_c_analytic, r.crossing_analytic_hessian, r.crossing_finite_difference, r.hessian_max_entry_gap
        );
    }
    ctx.out.write_json("calibrate_summary.json", &rows)
}

// ---------------------------------------------------------------------------
// toy
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct ForwardSeed {
    seed: u64,
    beta_c: f64,
    activation_index: Option<usize>,
    activation_ratio: Option<f64>,
    split_angle_deg: Option<f64>,
    final_order_parameter: f64,
    final_ratio: f64,
}

fn forward(ctx: &Context, name: &str, make: impl Fn(u64) -> Result<SyntheticDataset> + Sync) -> Result<()> {
    let c = &ctx.config;
    let probe = ProbeConfig {
        k_probe: c.usize("toy.k_probe"),
        lr_means: c.f64("toy.lr_means"),
        ..probe_config(c)
    };
    let schedule = BetaSchedule::Learned {
        steps: c.usize("toy.steps"),
    };
    let rows = per_seed(&ctx.seeds, |seed| {
        let ds = make(seed)?;
        let r = run_forward_split(&ds, &probe, &schedule, &ActivationDetector::default(), seed)?;
        write_log(ctx, &format!("toy_{name}_seed{seed}.csv"), &r.log)?;
        ctx.out.write_svg(
            &format!("toy_{name}_seed{seed}.svg"),
            &trajectory_chart(&format!("{name} probe, seed {seed}"), &r.log),
        )?;
        Ok(ForwardSeed {
            seed,
            beta_c: r.beta_c,
            activation_index: r.activation_index,
            activation_ratio: r.activation_ratio,
            split_angle_deg: r.split_angle_deg,
            final_order_parameter: r.final_order_parameter,
            final_ratio: r.log.readings.last().map_or(f64::NAN, |x| x.log_ratio.exp()),
        })
    })?;
    for r in &rows {
        println!(
            "seed {}: activation at β/β_c = {}, final order parameter {:.3e}",
            r.seed,
            r.activation_ratio.map_or("none".into(), |x| format!("{x:.3}")),
            r.final_order_parameter
        );
    }
    ctx.out.write_json(&format!("toy_{name}_summary.json"), &rows)
}

pub fn toy_bimodal(ctx: &Context) -> Result<()> {
    let c = &ctx.config;
    forward(ctx, "bimodal", |seed| bimodal(c, c.usize("data.n"), seed))
}

pub fn toy_unimodal(ctx: &Context) -> Result<()> {
    let c = &ctx.config;
    let params = UnimodalParams {
        n: c.usize("data.n"),
        dim: c.usize("data.dim"),
        std: c.f64("data.std"),
    };
    forward(ctx, "unimodal", |seed| Ok(gen_unimodal(&params, seed)?))
}

#[derive(Serialize)]
struct ReverseSeed {
    seed: u64,
    forward_activation_ratio: Option<f64>,
    plateau: f64,
    merge_ratio: Option<f64>,
    reverse_tracking_error: Option<f64>,
    overlap_error: Option<f64>,
    fraction_at_half: f64,
}

pub fn toy_reverse(ctx: &Context) -> Result<()> {
    let c = &ctx.config;
    let step = AnnealStep {
        lr: c.f64("reverse.lr"),
        noise: c.f64("reverse.noise"),
        precision_scaled: false,
    };
    let schedule = BetaSchedule::Geometric {
        from_ratio: 0.5,
        to_ratio: 3.0,
        levels: c.usize("reverse.forward_levels"),
        step,
    };
    let options = ReverseOptions {
        inner_steps: c.usize("reverse.inner_steps"),
        step,
        merge_fraction: c.f64("reverse.merge_fraction"),
        ..ReverseOptions::default()
    };
    let probe = ProbeConfig {
        k_probe: c.usize("reverse.k"),
        ..probe_config(c)
    };
    let rows = per_seed(&ctx.seeds, |seed| {
        let ds = bimodal(c, c.usize("reverse.n"), seed)?;
        let r = run_reverse_experiment(&ds, &probe, &schedule, &options, seed)?;
        write_log(ctx, &format!("toy_reverse_seed{seed}_forward.csv"), &r.forward.log)?;
        write_log(ctx, &format!("toy_reverse_seed{seed}_reverse.csv"), &r.reverse.log)?;
        let branch = |log: &TrajectoryLog| -> Vec<(f64, f64)> {
            log.readings.iter().map(|x| (x.log_ratio.exp(), x.order_parameter)).collect()
        };
        let chart = LineChart::new(&format!("Split and merge branches, seed {seed}"), "β/β_c", "order parameter")
            .log_y()
            .series("forward", branch(&r.forward.log))
            .series("reverse", branch(&r.reverse.log))
            .marker(1.0, "β_c");
        ctx.out.write_svg(&format!("toy_reverse_seed{seed}.svg"), &chart)?;
        Ok(ReverseSeed {
            seed,
            forward_activation_ratio: r.forward.activation_ratio,
            plateau: r.reverse.plateau,
            merge_ratio: r.reverse.merge_ratio,
            reverse_tracking_error: r.reverse.tracking_error,
            overlap_error: r.overlap_error,
            fraction_at_half: r.fraction_at_half,
        })
    })?;
    for r in &rows {
        println!(
            "seed {}: split at β/β_c = {}, merge at β/β_c = {}",
            r.seed,
            r.forward_activation_ratio.map_or("none".into(), |x| format!("{x:.3}")),
            r.merge_ratio.map_or("none".into(), |x| format!("{x:.4}"))
        );
    }
    ctx.out.write_json("toy_reverse_summary.json", &rows)
}

#[derive(Serialize)]
struct HierarchySeed {
    seed: u64,
    beta_c1: f64,
    beta_c2: f64,
    first_event_ratio: Option<f64>,
    second_event_ratio: Option<f64>,
    event_count: usize,
    balanced: bool,
    assignment: Vec<usize>,
}

pub fn toy_hierarchy(ctx: &Context) -> Result<()> {
    let c = &ctx.config;
    let params = HierarchicalParams {
        n: c.usize("hierarchy.n"),
        super_spacing: c.f64("hierarchy.super_spacing"),
        sub_spacing: c.f64("hierarchy.sub_spacing"),
        std: c.f64("hierarchy.std"),
    };
    let options = HierarchyOptions {
        k: c.usize("hierarchy.k"),
        steps: c.usize("hierarchy.steps"),
        from_ratio: c.f64("hierarchy.from_ratio"),
        to_ratio: c.f64("hierarchy.to_ratio"),
        step: AnnealStep {
            lr: c.f64("hierarchy.eta"),
            noise: c.f64("hierarchy.noise"),
            precision_scaled: true,
        },
    };
    let rows = per_seed(&ctx.seeds, |seed| {
        let ds = gen_hierarchical(&params, seed)?;
        let r = run_hierarchical(&ds, &options, &ActivationDetector::default(), seed)?;
        write_log(ctx, &format!("toy_hierarchy_seed{seed}.csv"), &r.log)?;
        let betas: Vec<f64> = r.log.readings.iter().map(|x| x.log_beta.exp()).collect();
        let chart = LineChart::new(&format!("Hierarchical split, seed {seed}"), "β", "order parameter")
            .log_y()
            .series("global", betas.iter().copied().zip(r.log.order_parameters()).collect())
            .series("within super-cluster", betas.iter().copied().zip(r.secondary_order_parameter.iter().copied()).collect())
            .marker(r.beta_c1, "β_c(1)")
            .marker(r.beta_c2, "β_c(2)");
        ctx.out.write_svg(&format!("toy_hierarchy_seed{seed}.svg"), &chart)?;
        Ok(HierarchySeed {
            seed,
            beta_c1: r.beta_c1,
            beta_c2: r.beta_c2,
            first_event_ratio: r.first_event.map(|e| e.ratio()),
            second_event_ratio: r.second_event.map(|e| e.ratio()),
            event_count: r.event_count(),
            balanced: r.balanced,
            assignment: r.assignment.clone(),
        })
    })?;
    for r in &rows {
        println!(
            "seed {}: {} activation events, ratios {:?} / {:?}, balanced {}",
            r.seed, r.event_count, r.first_event_ratio, r.second_event_ratio, r.balanced
        );
    }
    ctx.out.write_json("toy_hierarchy_summary.json", &rows)
}

#[derive(Serialize)]
struct EndogenousSeed {
    seed: u64,
    delta0: f64,
    crossing_step: Option<usize>,
    activation_step: Option<usize>,
    final_loss: f64,
    hypothesis_failures: Vec<HypothesisFailure>,
}

pub fn toy_endogenous(ctx: &Context) -> Result<()> {
    let c = &ctx.config;
    let options = EndogenousOptions {
        steps: c.usize("endogenous.steps"),
        encoder_lr: c.f64("endogenous.encoder_lr"),
        weight_init: c.f64("endogenous.weight_init"),
        probe: probe_config(c),
        audit_window: c.usize("endogenous.audit_window"),
        audit_tolerance: c.f64("endogenous.audit_tolerance"),
        ..EndogenousOptions::default()
    };
    let rows = per_seed(&ctx.seeds, |seed| {
        let ds = bimodal(c, c.usize("endogenous.n"), seed)?;
        let r = match run_endogenous(&ds, &options, seed) {
            Ok(r) => r,
            Err(betacrit::Error::Aborted { step, reason, partial }) => {
                write_log(ctx, &format!("toy_endogenous_seed{seed}.partial.csv"), &partial)?;
                return Err(betacrit::Error::Aborted { step, reason, partial }.into());
            }
            Err(e) => return Err(e.into()),
        };
        write_log(ctx, &format!("toy_endogenous_seed{seed}.csv"), &r.log)?;
        let mut chart = trajectory_chart(&format!("Endogenous crossing, seed {seed}"), &r.log);
        if let Some(a) = r.activation_step {
            chart = chart.marker(a as f64, "activation");
        }
        let nc1: Vec<(f64, f64)> = r
            .log
            .readings
            .iter()
            .filter_map(|x| x.nc1.map(|v| (x.step as f64, v)))
            .collect();
        ctx.out.write_svg(&format!("toy_endogenous_seed{seed}.svg"), &chart.series("NC1", nc1))?;
        for f in &r.hypothesis_failures {
            eprintln!("warning: seed {seed}: {} violated at step {}: {}", f.hypothesis, f.step, f.detail);
        }
        Ok(EndogenousSeed {
            seed,
            delta0: r.delta0,
            crossing_step: r.crossing_step,
            activation_step: r.activation_step,
            final_loss: r.final_loss,
            hypothesis_failures: r.hypothesis_failures,
        })
    })?;
    for r in &rows {
        println!(
            "seed {}: β(0) − β_c(0) = {:.3}, crossing at step {:?}, activation at step {:?}",
            r.seed, r.delta0, r.crossing_step, r.activation_step
        );
    }
    ctx.out.write_json("toy_endogenous_summary.json", &rows)
}

// ---------------------------------------------------------------------------
// sde
// ---------------------------------------------------------------------------

fn sde_config(c: &RunConfig, seed: u64) -> Result<SdeConfig> {
    let initial_condition = match c.str("sde.initial_condition") {
        "gaussian" => InitialCondition::Gaussian,
        "fixed_norm" => InitialCondition::FixedNorm,
        "constant" => InitialCondition::Constant,
        other => {
            return Err(CliError::Config(format!(
                "`sde.initial_condition` must be gaussian, fixed_norm or constant, got `{other}`"
            )))
        }
    };
    Ok(SdeConfig {
        growth_rate: c.f64("sde.growth_rate"),
        alpha: c.f64("sde.alpha"),
        coupling: c.f64("sde.coupling"),
        noise_intensity: c.f64("sde.noise_intensity"),
        dt: c.f64("sde.dt"),
        steps: c.usize("sde.steps"),
        modes: c.usize("sde.modes"),
        dim: c.usize("sde.dim"),
        init_scale: c.f64("sde.init_scale"),
        seed,
        initial_condition,
        record_path: true,
    })
}

#[derive(Serialize)]
struct PitchforkSeed {
    seed: u64,
    initial: f64,
    final_value: f64,
    fixed_point: Option<f64>,
}

pub fn sde_pitchfork(ctx: &Context) -> Result<()> {
    let rows = per_seed(&ctx.seeds, |seed| {
        let config = sde_config(&ctx.config, seed)?;
        let run = simulate_pitchfork_1d::<f64>(&config)?;
        let path: Vec<(f64, f64)> = run.path_samples.iter().map(|p| (p.time, p.state[0])).collect();
        let table: Vec<Vec<String>> = run
            .path_samples
            .iter()
            .map(|p| vec![p.step.to_string(), p.time.to_string(), p.state[0].to_string()])
            .collect();
        ctx.out
            .write_table(&format!("sde_pitchfork_seed{seed}.csv"), &["step", "time", "epsilon"], &table)?;
        let mut chart = LineChart::new(&format!("Pitchfork normal form, seed {seed}"), "time", "ε").series("ε(t)", path);
        if let Some(e) = config.fixed_point() {
            chart = chart.series("ε*", vec![(0.0, e), (config.horizon_time(), e)]);
        }
        ctx.out.write_svg(&format!("sde_pitchfork_seed{seed}.svg"), &chart)?;
        Ok(PitchforkSeed {
            seed,
            initial: run.initial_state.as_slice()[0],
            final_value: run.final_scalar(),
            fixed_point: config.fixed_point(),
        })
    })?;
    for r in &rows {
        println!("seed {}: ε(0) = {:.4e}, ε(T) = {:.6}", r.seed, r.initial, r.final_value);
    }
    ctx.out.write_json("sde_pitchfork_summary.json", &rows)
}

#[derive(Serialize)]
struct CoupledSeed {
    seed: u64,
    spearman: f64,
    mean_cosine: f64,
    sign_test_p: f64,
    excluded_modes: Vec<usize>,
}

#[derive(Serialize)]
struct CoupledSummary {
    prediction: Option<PersistencePrediction>,
    mean_spearman: f64,
    seeds: Vec<CoupledSeed>,
}

pub fn sde_coupled(ctx: &Context) -> Result<()> {
    let seeds = per_seed(&ctx.seeds, |seed| {
        let mut config = sde_config(&ctx.config, seed)?;
        config.record_path = false;
        let run = simulate_coupled_modes::<f64>(&config)?;
        let stats = persistence_stats(&run, &run.reference_direction)?;
        let mut cosines = stats.cosines.iter();
        let table: Vec<Vec<String>> = stats
            .projections
            .iter()
            .enumerate()
            .map(|(k, (a, b))| {
                let cos = if stats.excluded_modes.contains(&k) { None } else { cosines.next().copied() };
                vec![k.to_string(), a.to_string(), b.to_string(), opt(cos)]
            })
            .collect();
        ctx.out.write_table(
            &format!("sde_coupled_seed{seed}.csv"),
            &["mode", "initial_projection", "final_projection", "cosine"],
            &table,
        )?;
        Ok(CoupledSeed {
            seed,
            spearman: stats.spearman,
            mean_cosine: stats.mean_cosine,
            sign_test_p: stats.sign_test_p,
            excluded_modes: stats.excluded_modes,
        })
    })?;
    let prediction = predict_persistence(&sde_config(&ctx.config, 0)?).ok();
    for s in &seeds {
        println!(
            "seed {}: Spearman ρ = {:.4}, mean cosine {:.4}, sign-test p = {:.2e}",
            s.seed, s.spearman, s.mean_cosine, s.sign_test_p
        );
    }
    if let Some(p) = &prediction {
        println!("predicted mean cosine {:.4}", p.expected_cosine);
    }
    let summary = CoupledSummary {
        mean_spearman: seeds.iter().map(|s| s.spearman).sum::<f64>() / seeds.len() as f64,
        prediction,
        seeds,
    };
    ctx.out.write_json("sde_coupled_summary.json", &summary)
}

// ---------------------------------------------------------------------------
// escape
// ---------------------------------------------------------------------------

fn weighting(c: &RunConfig) -> Result<Weighting> {
    match c.str("escape.weighting") {
        "relative_error" => Ok(Weighting::RelativeError),
        "unit" => Ok(Weighting::Unit),
        other => Err(CliError::Config(format!(
            "`escape.weighting` must be relative_error or unit, got `{other}`"
        ))),
    }
}

fn sweep_plan(c: &RunConfig, base_seed: u64) -> SweepPlan {
    let horizon = c.usize("escape.horizon");
    let config = SdeConfig {
        growth_rate: c.f64("escape.growth_rate"),
        alpha: c.f64("escape.alpha"),
        coupling: 0.0,
        noise_intensity: c.f64("escape.noise_intensity"),
        dt: c.f64("escape.dt"),
        steps: horizon,
        modes: 1,
        dim: 1,
        init_scale: c.f64("escape.init_scale"),
        seed: base_seed,
        initial_condition: InitialCondition::Constant,
        record_path: false,
    };
    SweepPlan {
        gammas: c.f64_list("escape.gammas"),
        seeds_per_gamma: c.usize("escape.seeds_per_gamma"),
        config,
        tilt: TiltPotential::Quadratic {
            curvature: c.f64("escape.tilt_curvature"),
        },
        threshold: c.f64("escape.threshold"),
        horizon,
        noise_free_control: c.bool("escape.noise_free_control"),
        base_seed,
    }
}

#[derive(Serialize)]
struct EscapeReport {
    levels: Vec<LevelSummary>,
    fit: Option<SweepSummary>,
    power_law_exponent: Option<f64>,
    warning: Option<String>,
}

fn write_levels(ctx: &Context, name: &str, levels: &[LevelSummary]) -> Result<()> {
    let mut f = ctx.out.create_file(name)?;
    for c in ctx.out.comments() {
        writeln!(f, "# {c}").map_err(|e| CliError::io(ctx.out.path(name), e))?;
    }
    write_levels_csv(levels, &mut f)?;
    f.flush().map_err(|e| CliError::io(ctx.out.path(name), e))
}

fn escape_chart(levels: &[LevelSummary], fit: Option<&SweepSummary>) -> LineChart {
    let observed: Vec<(f64, f64)> = levels
        .iter()
        .filter(|l| l.gamma > 0.0)
        .filter_map(|l| l.tau_mean.map(|t| (l.gamma, t)))
        .collect();
    let mut chart = LineChart::new("Escape time versus dissipation", "γ", "mean τ").log_y().series("observed", observed);
    if let Some(fit) = fit {
        let gammas: Vec<f64> = levels.iter().filter(|l| l.fittable()).map(|l| l.gamma).collect();
        let (lo, hi) = (gammas.iter().copied().fold(f64::INFINITY, f64::min), gammas.iter().copied().fold(0.0, f64::max));
        let grid: Vec<f64> = (0..=50).map(|i| lo + (hi - lo) * i as f64 / 50.0).collect();
        chart = chart
            .series("power law", grid.iter().map(|&g| (g, fit.power_law.predict_tau(g))).collect())
            .series("exponential", grid.iter().map(|&g| (g, fit.kramers.predict_tau(g))).collect());
    }
    chart
}

fn print_fit(fit: &SweepSummary) {
    let (p, k) = (&fit.power_law, &fit.kramers);
    println!(
        "power law:   log τ = {:.4} {:+.4} log γ, χ² = {:.4}, AIC = {:.4}",
        p.intercept, p.slope, p.chi_squared, p.aic
    );
    println!(
        "exponential: log τ = {:.4} {:+.4} / γ,    χ² = {:.4}, AIC = {:.4}",
        k.intercept, k.slope, k.chi_squared, k.aic
    );
    println!("ΔAIC (exponential − power law) = {:.4}", fit.delta_aic);
}

pub fn escape_sweep(ctx: &Context) -> Result<()> {
    let plan = sweep_plan(&ctx.config, ctx.seeds[0]);
    let weighting = weighting(&ctx.config)?;
    let observations = collect_observations(&plan)?;
    let rows: Vec<Vec<String>> = observations
        .iter()
        .map(|o| {
            vec![
                o.gamma.to_string(),
                o.seed.to_string(),
                o.tau.map(|t| t.to_string()).unwrap_or_default(),
                o.horizon.to_string(),
                o.censored().to_string(),
            ]
        })
        .collect();
    ctx.out
        .write_table("escape_observations.csv", &["gamma", "seed", "tau", "horizon", "censored"], &rows)?;
    let levels = summarize(&observations);
    write_levels(ctx, "escape_levels.csv", &levels)?;
    for l in &levels {
        println!(
            "γ = {:<6} escaped {}/{}, mean τ {}",
            l.gamma,
            l.n_escaped,
            l.n_seeds,
            l.tau_mean.map_or("censored".into(), |t| format!("{t:.1}"))
        );
    }
    let (fit, warning) = match fit_escape_models(&levels, weighting) {
        Ok(fit) => (Some(fit), None),
        Err(betacrit::Error::NoFit(msg)) => {
            let w = format!("no model fit: {msg}");
            eprintln!("warning: {w}");
            (None, Some(w))
        }
        Err(e) => return Err(e.into()),
    };
    if let Some(fit) = &fit {
        print_fit(fit);
    }
    ctx.out.write_svg("escape_tau.svg", &escape_chart(&levels, fit.as_ref()))?;
    let report = EscapeReport {
        power_law_exponent: fit.as_ref().map(SweepSummary::power_law_exponent),
        levels,
        fit,
        warning,
    };
    ctx.out.write_json("escape_summary.json", &report)
}

pub fn escape_fit(ctx: &Context, input: Option<&Path>) -> Result<()> {
    let levels = match input {
        Some(path) => read_levels_csv(std::fs::File::open(path).map_err(|e| CliError::io(path, e))?)?,
        None => table5_levels()?,
    };
    let fit = fit_escape_models(&levels, weighting(&ctx.config)?)?;
    print_fit(&fit);
    ctx.out.write_svg("escape_fit.svg", &escape_chart(&levels, Some(&fit)))?;
    let report = EscapeReport {
        power_law_exponent: Some(fit.power_law_exponent()),
        levels,
        fit: Some(fit),
        warning: None,
    };
    ctx.out.write_json("escape_fit.json", &report)
}

// ---------------------------------------------------------------------------
// classify
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct ClassifiedLog {
    source: String,
    class: &'static str,
    expected: Option<&'static str>,
    indeterminate: bool,
    crossing_index: Option<usize>,
    descent_onset: Option<usize>,
    evidence: ShapeEvidence,
    axes: Option<AxisReading>,
}

fn taxonomy_config(c: &RunConfig) -> TaxonomyConfig {
    TaxonomyConfig {
        decoupling_threshold: c.f64("taxonomy.decoupling_threshold"),
        plateau_threshold: c.f64("taxonomy.plateau_threshold"),
        descent_decades: c.f64("taxonomy.descent_decades"),
        peak_band: c.f64("taxonomy.peak_band"),
        fold_min: c.f64("taxonomy.fold_min"),
        fold_min_points: c.usize("taxonomy.fold_min_points"),
    }
}

pub fn classify_logs(ctx: &Context, inputs: &[std::path::PathBuf], synthesize_class: Option<&str>) -> Result<()> {
    let config = taxonomy_config(&ctx.config);
    let mut logs: Vec<(String, TrajectoryLog, Option<&'static str>)> = Vec::new();
    if let Some(name) = synthesize_class {
        let class: ShapeClass = name.parse()?;
        for &seed in &ctx.seeds {
            let log = synthesize(class, seed)?;
            let file = format!("synthetic_{}_seed{seed}.csv", class.name());
            write_log(ctx, &file, &log)?;
            logs.push((file, log, Some(class.name())));
        }
    } else if inputs.is_empty() {
        for (name, csv, class) in exemplars() {
            logs.push((format!("exemplar:{name}"), load_exemplar(csv)?, Some(class.name())));
        }
    }
    for path in inputs {
        let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
        logs.push((path.display().to_string(), TrajectoryLog::read_csv(file)?, None));
    }
    let mut out = Vec::new();
    for (source, log, expected) in logs {
        let c = classify(&log, &config)?;
        println!(
            "{source}: {}{} (descent corr {:+.3}, whole-log corr {:+.3}, plateau {:.3})",
            c.class.name(),
            if c.indeterminate { " [indeterminate]" } else { "" },
            c.evidence.descent_corr,
            c.evidence.decoupling_corr,
            c.evidence.plateau_fraction
        );
        out.push(ClassifiedLog {
            source,
            class: c.class.name(),
            expected,
            indeterminate: c.indeterminate,
            crossing_index: c.crossing_index,
            descent_onset: c.descent_onset,
            evidence: c.evidence,
            axes: axis_reading(&log, &config).ok(),
        });
    }
    ctx.out.write_json("classification.json", &out)
}

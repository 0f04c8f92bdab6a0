//! Acceptance suite: one pass/fail line per criterion, each with a runtime
//! budget. Exits non-zero if any criterion fails.

use std::time::{Duration, Instant};

use betacrit::escape_lab::{fit_escape_models, run_sweep, summarize, collect_observations, table5_levels, SweepPlan};
use betacrit::experiments::{
    gen_bimodal, gen_hierarchical, run_endogenous, run_forward_split, run_hierarchical,
    run_reverse_traversal, reverse_forward_schedule, ActivationDetector, BimodalParams, EndogenousOptions,
    HierarchicalParams, HierarchyOptions, ReverseOptions,
};
use betacrit::gmm_probe::{
    gradients, latent_log_beta_c, nll, probe_step, responsibilities, GmmProbeState, ProbeConfig,
};
use betacrit::hessian::{analytic_hessian, channel_spectrum, find_crossing, find_crossing_numerical, numerical_hessian};
use betacrit::mathcore::{covariance, sym_eigen, DenseMatrix, Weighting};
use betacrit::sde::{persistence_stats, simulate_coupled_modes, SdeConfig};
use betacrit::taxonomy::{classify, exemplars, load_exemplar, synthesize, ShapeClass, TaxonomyConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<String, String>;

/// `(number, name, runtime budget, check)`.
type Criterion = (u8, &'static str, Duration, fn() -> Outcome);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DenseMatrix<f64> {
    let v = (0..rows * cols)
        .map(|_| {
            let g: f64 = StandardNormal.sample(rng);
            scale * g
        })
        .collect();
    DenseMatrix::from_vec(rows, cols, v).unwrap()
}

fn hessian_calibration() -> Outcome {
    let mut worst_crossing: f64 = 0.0;
    let mut worst_entry: f64 = 0.0;
    for seed in 0..3 {
        let ds = gen_bimodal(&BimodalParams::default(), seed).map_err(|e| e.to_string())?;
        let cov = covariance(&ds.samples).map_err(|e| e.to_string())?;
        let analytic = find_crossing(2, &cov, 0.05, 1.0).map_err(|e| e.to_string())?;
        let numeric = find_crossing_numerical(2, &ds.samples, 0.05, 1.0).map_err(|e| e.to_string())?;
        worst_crossing = worst_crossing.max(analytic.absolute_error()).max(numeric.absolute_error());
        let bc = analytic.beta_critical_analytic;
        for x in [0.5, 1.0, 1.5] {
            let state = GmmProbeState::collapsed(&ds.samples.column_means(), 2, f64::ln(x * bc)).unwrap();
            let fd = numerical_hessian(&state, &ds.samples).map_err(|e| e.to_string())?;
            let exact = analytic_hessian(x * bc, 2, &cov).map_err(|e| e.to_string())?;
            worst_entry = worst_entry.max(fd.sub(&exact).unwrap().max_abs());
        }
    }
    check(
        worst_crossing <= 1e-4 && worst_entry <= 1e-4,
        format!("max |β_c error| {worst_crossing:.2e}, max Hessian entry gap {worst_entry:.2e} over 3 seeds"),
    )
}

fn channel_spectrum_agreement() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let k = rng.random_range(1..=6);
        let d = rng.random_range(1..=10);
        let a = gaussian(&mut rng, d, d, 1.0);
        let cov = a.matmul(&a.transpose()).unwrap().scaled(1.0 / d as f64);
        let beta = rng.random_range(0.01..3.0);
        let dense = sym_eigen(&analytic_hessian(beta, k, &cov).unwrap()).map_err(|e| e.to_string())?;
        let spatial = sym_eigen(&cov).map_err(|e| e.to_string())?.eigenvalues;
        let closed = channel_spectrum(beta, k, &spatial).map_err(|e| e.to_string())?.multiset();
        if closed.len() != dense.len() {
            return Err(format!("multiplicity mismatch: {} vs {}", closed.len(), dense.len()));
        }
        for (x, y) in dense.eigenvalues.iter().zip(&closed) {
            worst = worst.max((x - y).abs());
        }
    }
    check(worst <= 1e-9, format!("max eigenvalue gap {worst:.2e} over 100 instances"))
}

fn coupled_mode_lottery() -> Outcome {
    let mut rhos = Vec::new();
    for seed in 0..5 {
        let run = simulate_coupled_modes::<f64>(&SdeConfig::appendix_d3(seed)).map_err(|e| e.to_string())?;
        let stats = persistence_stats(&run, &run.reference_direction).map_err(|e| e.to_string())?;
        rhos.push(stats.spearman);
    }
    let mean = rhos.iter().sum::<f64>() / rhos.len() as f64;
    let min = rhos.iter().copied().fold(f64::INFINITY, f64::min);
    check(
        (0.93..=0.97).contains(&mean) && min > 0.90,
        format!("mean ρ {mean:.4}, min ρ {min:.4}, seeds {rhos:.4?}"),
    )
}

fn table5_refit() -> Outcome {
    let fit = fit_escape_models(&table5_levels().map_err(|e| e.to_string())?, Weighting::RelativeError)
        .map_err(|e| e.to_string())?;
    let (p, k) = (&fit.power_law, &fit.kramers);
    let ok = (p.intercept - 9.11).abs() <= 0.01
        && (p.slope + 1.225).abs() <= 0.005
        && (p.chi_squared - 1.52).abs() <= 0.02
        && (p.aic - 5.52).abs() <= 0.02
        && (k.intercept - 11.65).abs() <= 0.02
        && (k.slope + 2.631).abs() <= 0.01
        && (k.chi_squared - 20.78).abs() <= 0.1
        && (fit.delta_aic - 19.26).abs() <= 0.1;
    check(
        ok,
        format!(
            "power law ({:.4}, {:.4}, χ² {:.4}, AIC {:.4}); Kramers ({:.4}, {:.4}, χ² {:.4}); ΔAIC {:.4}",
            p.intercept, p.slope, p.chi_squared, p.aic, k.intercept, k.slope, k.chi_squared, fit.delta_aic
        ),
    )
}

fn escape_monotonicity() -> Outcome {
    let plan = SweepPlan::builtin();
    let levels = summarize(&collect_observations(&plan).map_err(|e| e.to_string())?);
    let zero = levels.iter().find(|l| l.gamma == 0.0).ok_or("no γ = 0 level")?;
    let positive: Vec<_> = levels.iter().filter(|l| l.gamma > 0.0).collect();
    let means: Option<Vec<f64>> = positive
        .iter()
        .map(|l| (l.n_escaped == l.n_seeds).then_some(l.tau_mean).flatten())
        .collect();
    let means = means.ok_or("a γ > 0 level has censored seeds")?;
    let decreasing = means.windows(2).all(|w| w[1] < w[0]);
    let fit = run_sweep(&plan, Weighting::RelativeError).map_err(|e| e.to_string())?;
    let p = fit.power_law_exponent();
    check(
        positive.len() == 6 && decreasing && zero.n_escaped == 0 && p.abs() >= 0.9,
        format!(
            "mean τ {means:.0?} over γ {:?}; γ=0 escaped {}/{}; exponent {p:.3}",
            positive.iter().map(|l| l.gamma).collect::<Vec<_>>(),
            zero.n_escaped,
            zero.n_seeds
        ),
    )
}

fn endogenous_crossing() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in 0..5 {
        let ds = gen_bimodal(&BimodalParams { n: 1000, ..Default::default() }, seed).map_err(|e| e.to_string())?;
        let r = run_endogenous(&ds, &EndogenousOptions::default(), seed).map_err(|e| e.to_string())?;
        let good = r.delta0 < 0.0
            && r.crossing_step.is_some()
            && matches!((r.crossing_step, r.activation_step), (Some(c), Some(a)) if a >= c);
        ok &= good;
        lines.push(format!(
            "seed {seed}: Δ(0) {:.2}, crossing {:?}, activation {:?}",
            r.delta0, r.crossing_step, r.activation_step
        ));
    }
    check(ok, lines.join("; "))
}

fn reverse_traversal() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    let probe = ProbeConfig {
        k_probe: 8,
        ..ProbeConfig::default()
    };
    for seed in 0..3 {
        let ds = gen_bimodal(&BimodalParams { n: 1000, ..Default::default() }, seed).map_err(|e| e.to_string())?;
        let fwd = run_forward_split(&ds, &probe, &reverse_forward_schedule(), &ActivationDetector::default(), seed)
            .map_err(|e| e.to_string())?;
        let rev = run_reverse_traversal(&ds, &fwd.final_state, &ReverseOptions::default(), seed)
            .map_err(|e| e.to_string())?;
        let overshoot = fwd.activation_ratio;
        let good = rev.tracking_error.is_some_and(|e| e <= 0.04)
            && overshoot.is_some_and(|x| (1.0..=1.6).contains(&x));
        ok &= good;
        lines.push(format!(
            "seed {seed}: merge β/β_c {:.4?}, overshoot {:.3?}",
            rev.merge_ratio, overshoot
        ));
    }
    check(ok, lines.join("; "))
}

fn hierarchy() -> Outcome {
    let mut lines = Vec::new();
    let (mut events_ok, mut balanced) = (true, 0);
    for seed in 0..3 {
        let ds = gen_hierarchical(&HierarchicalParams::default(), seed).map_err(|e| e.to_string())?;
        let r = run_hierarchical(&ds, &HierarchyOptions::default(), &ActivationDetector::default(), seed)
            .map_err(|e| e.to_string())?;
        let within = |e: Option<betacrit::experiments::ActivationEvent>| e.is_some_and(|e| (e.ratio() - 1.0).abs() <= 0.35);
        events_ok &= r.event_count() == 2 && within(r.first_event) && within(r.second_event);
        balanced += usize::from(r.balanced);
        lines.push(format!(
            "seed {seed}: β/β_c⁽¹⁾ {:.3?}, β/β_c⁽²⁾ {:.3?}, 2+2+2+2 {}",
            r.first_event.map(|e| e.ratio()),
            r.second_event.map(|e| e.ratio()),
            r.balanced
        ));
    }
    check(events_ok && balanced >= 2, lines.join("; "))
}

fn probe_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    let mut stochastic = true;
    for _ in 0..50 {
        let (k, d, n) = (rng.random_range(2..=6), rng.random_range(1..=5), rng.random_range(5..=40));
        let z = gaussian(&mut rng, n, d, 1.5);
        let state = GmmProbeState::new(gaussian(&mut rng, k, d, 1.0), rng.random_range(-1.5..1.0)).unwrap();
        let g = gradients(&state, &z).map_err(|e| e.to_string())?;
        let h = 1e-5;
        let fd = |perturb: &dyn Fn(&mut GmmProbeState<f64>, f64)| {
            let (mut p, mut m) = (state.clone(), state.clone());
            perturb(&mut p, h);
            perturb(&mut m, -h);
            (nll(&p, &z).unwrap() - nll(&m, &z).unwrap()) / (2.0 * h)
        };
        let mut num = Vec::with_capacity(k * d + 1);
        for i in 0..k * d {
            num.push(fd(&|s: &mut GmmProbeState<f64>, e| s.means.as_mut_slice()[i] += e));
        }
        num.push(fd(&|s: &mut GmmProbeState<f64>, e| s.log_precision += e));
        let ana: Vec<f64> = g.means.as_slice().iter().copied().chain([g.log_beta]).collect();
        let scale = num.iter().map(|x| x.abs()).fold(1e-8, f64::max);
        worst = worst.max(ana.iter().zip(&num).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale);
        let p = responsibilities(&state, &z).map_err(|e| e.to_string())?;
        stochastic &= p.row_iter().all(|r| (r.iter().sum::<f64>() - 1.0).abs() < 1e-12 && r.iter().all(|&x| x >= 0.0));
    }
    let z = gaussian(&mut rng, 500, 3, 2.0);
    let reference = latent_log_beta_c(&z).map_err(|e| e.to_string())?;
    let mut invariant = true;
    for k in [2, 4, 8, 10, 32] {
        let config = ProbeConfig {
            k_probe: k,
            ..ProbeConfig::default()
        };
        let state = GmmProbeState::near_symmetric(&z, &config, &mut rng).map_err(|e| e.to_string())?;
        let (_, reading) = probe_step(&state, &z, &config, 0).map_err(|e| e.to_string())?;
        invariant &= reading.log_beta_c.to_bits() == reference.to_bits();
    }
    check(
        worst <= 1e-5 && stochastic && invariant,
        format!("max relative gradient error {worst:.2e}; row-stochastic {stochastic}; K-invariant bit-exact {invariant}"),
    )
}

fn taxonomy_recovery() -> Outcome {
    let config = TaxonomyConfig::default();
    let mut rates = Vec::new();
    for class in ShapeClass::ALL {
        let mut hits = 0;
        for seed in 0..200 {
            let log = synthesize(class, 10_000 + seed).map_err(|e| e.to_string())?;
            hits += usize::from(classify(&log, &config).map_err(|e| e.to_string())?.class == class);
        }
        rates.push((class, hits));
    }
    let mut exemplar_ok = true;
    let mut got = Vec::new();
    for (name, csv, expected) in exemplars() {
        let c = classify(&load_exemplar(csv).map_err(|e| e.to_string())?, &config).map_err(|e| e.to_string())?;
        exemplar_ok &= c.class == expected;
        got.push(format!("{name}→{}", c.class));
    }
    check(
        rates.iter().all(|&(_, h)| h >= 190) && exemplar_ok,
        format!(
            "recovery {}; exemplars {}",
            rates.iter().map(|(c, h)| format!("{c} {h}/200")).collect::<Vec<_>>().join(", "),
            got.join(", ")
        ),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "Hessian calibration", Duration::from_secs(10), hessian_calibration),
        (2, "channel spectrum", Duration::from_secs(30), channel_spectrum_agreement),
        (3, "coupled-mode lottery", Duration::from_secs(60), coupled_mode_lottery),
        (4, "escape-table refit", Duration::from_secs(1), table5_refit),
        (5, "escape monotonicity", Duration::from_secs(300), escape_monotonicity),
        (6, "endogenous crossing", Duration::from_secs(60), endogenous_crossing),
        (7, "reverse traversal", Duration::from_secs(60), reverse_traversal),
        (8, "hierarchy", Duration::from_secs(120), hierarchy),
        (9, "probe correctness", Duration::from_secs(30), probe_properties),
        (10, "taxonomy", Duration::from_secs(30), taxonomy_recovery),
    ];
    let mut failures = 0;
    for (id, name, budget, run) in criteria {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let (pass, detail) = match outcome {
            Ok(d) if elapsed <= budget => (true, d),
            Ok(d) => (false, format!("{d}; over runtime budget {budget:?}")),
            Err(d) => (false, d),
        };
        failures += usize::from(!pass);
        println!(
            "criterion {id:>2} {name}: {} [{:.2}s] {detail}",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}

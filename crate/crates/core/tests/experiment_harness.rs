use approx::assert_abs_diff_eq;
use betacrit::experiments::{
    audit_hypotheses, axis_angle_deg, gen_bimodal, gen_hierarchical, gen_unimodal, geometric_levels,
    hierarchical_critical_points, k_probe_log_beta_c_traces, nc1, nc1_with, run_endogenous, within_group_covariance,
    ActivationDetector, BimodalParams, EndogenousOptions, HierarchicalParams, Nc1Variant, TrajectoryLog,
    UnimodalParams, CSV_HEADER,
};
use betacrit::gmm_probe::CriticalityReading;
use betacrit::mathcore::DenseMatrix;
use betacrit::Error;
use proptest::prelude::*;

#[test]
fn csv_header_is_exact() {
    let log = TrajectoryLog::new("x", 1);
    let mut buf = Vec::new();
    log.write_csv(&mut buf, &[]).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), format!("{}\n", CSV_HEADER.join(",")));
}

#[test]
fn nc1_of_two_point_classes_by_hand() {
    // Class means (0,0) and (4,0); each class has within-variance 1 along y.
    // tr Σ_W = 1, Σ_B has (2² + 2²)/2 = 4 on x, so NC1 = 1/4.
    let z = DenseMatrix::from_rows(&[
        vec![0.0, 1.0],
        vec![0.0, -1.0],
        vec![4.0, 1.0],
        vec![4.0, -1.0],
    ])
    .unwrap();
    assert_abs_diff_eq!(nc1(&z, &[0, 0, 1, 1]).unwrap(), 0.25, epsilon = 1e-15);
    // Σ_B† has 1/4 on x; Σ_W is diag(0, 1); tr(Σ_W Σ_B†)/C = 0.
    assert_abs_diff_eq!(nc1_with(&z, &[0, 0, 1, 1], Nc1Variant::PseudoInverse).unwrap(), 0.0, epsilon = 1e-15);
}

#[test]
fn nc1_is_scale_and_label_permutation_invariant() {
    let ds = gen_hierarchical(&HierarchicalParams::default(), 4).unwrap();
    let base = nc1(&ds.samples, &ds.labels).unwrap();
    assert_abs_diff_eq!(nc1(&ds.samples.scaled(3.7), &ds.labels).unwrap(), base, epsilon = 1e-12);
    let permuted: Vec<usize> = ds.labels.iter().map(|l| 7 - l).collect();
    assert_abs_diff_eq!(nc1(&ds.samples, &permuted).unwrap(), base, epsilon = 1e-12);
}

#[test]
fn pooled_within_covariance_of_separated_blobs() {
    let ds = gen_hierarchical(&HierarchicalParams { n: 20_000, ..Default::default() }, 2).unwrap();
    let w = within_group_covariance(&ds.samples, &ds.labels).unwrap();
    assert_abs_diff_eq!(w[(0, 0)], 0.25, epsilon = 0.01);
    assert_abs_diff_eq!(w[(1, 1)], 0.25, epsilon = 0.01);
    // Within a super-cluster the ±1 sub-offsets add 1 to the x variance.
    let (bc1, bc2) = hierarchical_critical_points(&ds).unwrap();
    assert_abs_diff_eq!(1.0 / bc2, 1.25, epsilon = 0.03);
    assert_abs_diff_eq!(1.0 / bc1, 16.0 + 1.25, epsilon = 0.4);
}

#[test]
fn generators_reject_bad_parameters() {
    assert!(matches!(
        gen_unimodal(&UnimodalParams { std: 0.0, ..Default::default() }, 0),
        Err(Error::Validation(_))
    ));
    assert!(gen_bimodal(&BimodalParams { n: 1, ..Default::default() }, 0).is_err());
    assert!(geometric_levels(1.0, 2.0, 1).is_err());
}

#[test]
fn probe_size_never_changes_endogenous_beta_c() {
    let ds = gen_bimodal(&BimodalParams { n: 300, ..Default::default() }, 6).unwrap();
    let options = EndogenousOptions { steps: 200, ..Default::default() };
    let traces = k_probe_log_beta_c_traces(&ds, &options, &[2, 4, 8, 16], 6).unwrap();
    for t in &traces[1..] {
        assert!(t.iter().zip(&traces[0]).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

#[test]
fn endogenous_run_logs_every_step_with_nc1() {
    let ds = gen_bimodal(&BimodalParams { n: 400, ..Default::default() }, 1).unwrap();
    let r = run_endogenous(&ds, &EndogenousOptions { steps: 120, ..Default::default() }, 1).unwrap();
    assert_eq!(r.log.len(), 120);
    assert!(r.log.readings.iter().all(|x| x.nc1.is_some()));
    assert!(r.loss_trace.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
}

#[test]
fn diverging_encoder_aborts_with_partial_log() {
    let ds = gen_bimodal(&BimodalParams { n: 200, ..Default::default() }, 1).unwrap();
    let options = EndogenousOptions {
        steps: 400,
        encoder_lr: 5.0,
        ..Default::default()
    };
    match run_endogenous(&ds, &options, 1) {
        Err(Error::Aborted { step, partial, .. }) => assert_eq!(partial.len(), step),
        other => panic!("expected abort, got {other:?}"),
    }
}

#[test]
fn audit_flags_a_falling_precision() {
    let mut log = TrajectoryLog::new("audit", 0);
    for t in 0..300 {
        let log_beta = if t < 200 { 0.01 * t as f64 } else { 0.0 };
        log.push(CriticalityReading::new(t, log_beta, 0.0, None, 0.0)).unwrap();
    }
    let failures = audit_hypotheses(&log, 100, 1e-3);
    assert_eq!(failures.len(), 1);
    assert_eq!(failures[0].step, 200);
    assert_eq!(failures[0].hypothesis, "beta_non_decreasing");
}

#[test]
fn axis_angle_ignores_sign() {
    assert_abs_diff_eq!(axis_angle_deg(&[1.0, 0.0], &[-2.0, 0.0]), 0.0, epsilon = 1e-12);
    assert_abs_diff_eq!(axis_angle_deg(&[1.0, 0.0], &[0.0, 3.0]), 90.0, epsilon = 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trajectory_csv_round_trips(values in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0, prop::option::of(1e-6f64..1e3), 0.0f64..10.0), 1..40)) {
        let mut log = TrajectoryLog::new("prop", 3);
        for (i, (lb, lbc, nc, op)) in values.into_iter().enumerate() {
            log.push(CriticalityReading::new(3 * i + 1, lb, lbc, nc, op)).unwrap();
        }
        let mut buf = Vec::new();
        log.write_csv(&mut buf, &["comment".to_string()]).unwrap();
        let back = TrajectoryLog::read_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back.readings, log.readings);
    }

    #[test]
    fn detector_is_scale_invariant(scale in 1e-6f64..1e6, onset in 20usize..80) {
        let values: Vec<f64> = (0..100).map(|t| if t < onset { 1.0 + 0.01 * (t % 3) as f64 } else { 50.0 }).collect();
        let ratios: Vec<f64> = (0..100).map(|t| t as f64 - onset as f64 + 0.5).collect();
        let det = ActivationDetector::default();
        let scaled: Vec<f64> = values.iter().map(|v| v * scale).collect();
        prop_assert_eq!(det.detect(&values, &ratios), Some(onset));
        prop_assert_eq!(det.detect(&scaled, &ratios), Some(onset));
    }
}

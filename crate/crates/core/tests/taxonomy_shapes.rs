use betacrit::experiments::TrajectoryLog;
use betacrit::taxonomy::{
    axis_reading, classify, exemplars, load_exemplar, synthesize, InitialCriticality, RateOrdering, ShapeClass,
    TaxonomyConfig,
};
use proptest::prelude::*;

#[test]
fn exemplars_classify_as_labelled() {
    for (name, csv, expected) in exemplars() {
        let c = classify(&load_exemplar(csv).unwrap(), &TaxonomyConfig::default()).unwrap();
        assert_eq!(c.class, expected, "{name}: {:?}", c.evidence);
        assert!(!c.indeterminate);
    }
}

#[test]
fn exemplars_carry_reference_statistics() {
    let config = TaxonomyConfig::default();
    let sae = classify(&load_exemplar(exemplars()[0].1).unwrap(), &config).unwrap();
    assert!((sae.evidence.descent_corr + 0.97).abs() < 0.01);
    let c100_log = load_exemplar(exemplars()[1].1).unwrap();
    let c100 = classify(&c100_log, &config).unwrap();
    assert!((c100.evidence.descent_corr - 0.90).abs() < 0.01);
    let peak = c100_log
        .readings
        .iter()
        .max_by(|a, b| a.log_ratio.total_cmp(&b.log_ratio))
        .unwrap();
    assert_eq!(peak.step, 35);
    assert!((peak.log_ratio - 7.09).abs() < 0.01);
    assert!((c100_log.readings.last().unwrap().log_ratio - 3.68).abs() < 0.01);
    let rot = classify(&load_exemplar(exemplars()[2].1).unwrap(), &config).unwrap();
    assert!((rot.evidence.decoupling_corr + 0.48).abs() < 0.01);
}

#[test]
fn fold_back_axes() {
    let log = load_exemplar(exemplars()[1].1).unwrap();
    let a = axis_reading(&log, &TaxonomyConfig::default()).unwrap();
    assert_eq!(a.initial_criticality, InitialCriticality::Sub);
    assert_eq!(a.rate_ordering, RateOrdering::BetaCLeads);
}

#[test]
fn class_names_round_trip() {
    for c in ShapeClass::ALL {
        assert_eq!(c.name().parse::<ShapeClass>().unwrap(), c);
    }
    assert!("v_shape".parse::<ShapeClass>().is_err());
}

fn restep(log: &TrajectoryLog, map: impl Fn(usize) -> usize) -> TrajectoryLog {
    let mut out = log.clone();
    for (i, r) in out.readings.iter_mut().enumerate() {
        r.step = map(i);
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn classification_ignores_time_axis(seed in 0u64..1000, class_idx in 0usize..4, a in 1usize..1000, b in 0usize..10_000, gaps in prop::collection::vec(1usize..50, 400)) {
        let log = synthesize(ShapeClass::ALL[class_idx], seed).unwrap();
        let config = TaxonomyConfig::default();
        let base = classify(&log, &config).unwrap();
        let affine = classify(&restep(&log, |i| b + a * i), &config).unwrap();
        let mut cum = vec![0usize];
        for g in &gaps { cum.push(cum.last().unwrap() + g); }
        let monotone = classify(&restep(&log, |i| cum[i]), &config).unwrap();
        prop_assert_eq!(affine.class, base.class);
        prop_assert_eq!(monotone.class, base.class);
        prop_assert_eq!(affine.evidence, base.evidence);
    }
}

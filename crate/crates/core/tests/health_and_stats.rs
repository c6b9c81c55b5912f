use qeaes_core::entropy_source::{open_source, BitSupply, SourceDescriptor, SourceHandle};
use qeaes_core::health::{
    check_batch, estimate_min_entropy, guard_stream, EventLog, HealthPolicy, LogAction, Verdict,
};
use qeaes_core::stats_suite::{ent_metrics, nist, nist_subset, NistTest};
use qeaes_core::BitBuf;

fn sim(seed: u64, bias: f64) -> SourceHandle {
    open_source(&SourceDescriptor::simulated(seed, bias)).unwrap()
}

#[test]
fn healthy_batches_pass_at_default_alpha() {
    let policy = HealthPolicy::default();
    let mut src = sim(31, 0.5);
    let mut fails = 0;
    for id in 0..1000 {
        let raw = src.draw_bits(policy.batch_bits).unwrap();
        if check_batch(&raw.bits, &policy, id).unwrap().verdict == Verdict::Fail {
            fails += 1;
        }
    }
    // expected 1000 * 2 * 1e-6 = 0.002
    assert!(fails <= 1, "{fails} failures");
}

#[test]
fn false_positive_rate_within_poisson_bound() {
    let policy = HealthPolicy {
        alpha: 1e-3,
        ..HealthPolicy::default()
    };
    let mut src = sim(32, 0.5);
    let k = 10_000;
    let mut fails = 0;
    for id in 0..k {
        let raw = src.draw_bits(policy.batch_bits).unwrap();
        if check_batch(&raw.bits, &policy, id).unwrap().verdict == Verdict::Fail {
            fails += 1;
        }
    }
    // two p-value checks: mean 20, 5-sigma Poisson bound
    let mean = k as f64 * 2.0 * policy.alpha;
    assert!((fails as f64) <= mean + 5.0 * mean.sqrt(), "{fails} failures");
}

#[test]
fn stuck_source_detected_within_one_batch() {
    for bias in [0.0, 1.0] {
        let log = EventLog::in_memory();
        let mut g = guard_stream(sim(1, bias), HealthPolicy::default(), None, log.clone()).unwrap();
        assert!(g.draw_bits(1).is_err());
        assert_eq!(g.reports().len(), 1);
        assert_eq!(log.count_action(LogAction::Abort), 1);
    }
}

#[test]
fn guarded_output_is_auditable() {
    let log = EventLog::in_memory();
    let mut g = guard_stream(sim(1, 1.0), HealthPolicy::default(), Some(sim(2, 0.5)), log.clone()).unwrap();
    g.draw_bits(65_536 * 5 + 17).unwrap();
    let records = log.records();
    for id in g.emitted_batches() {
        let rec = records
            .iter()
            .find(|r| r.batch_id == *id && r.check == "batch")
            .unwrap();
        assert_eq!(rec.verdict, Verdict::Pass);
        assert_eq!(rec.action, LogAction::Emit);
    }
    assert!(!g.emitted_batches().contains(&0));
}

#[test]
fn min_entropy_of_biased_sample() {
    let raw = sim(41, 0.6).draw_bits(1_000_000).unwrap();
    let est = estimate_min_entropy(&raw.bits).unwrap();
    // -log2(0.6) = 0.736966; sd of p_hat is 4.9e-4, i.e. ~0.0012 in h
    assert!((est.h_min_per_bit - 0.736_965_594_166_206).abs() < 0.01);
}

#[test]
fn nist_pvalues_are_uniform_over_500_samples() {
    let mut src = sim(51, 0.5);
    let samples: Vec<BitBuf> = (0..500)
        .map(|_| src.draw_bits(nist::MIN_SAMPLE_BITS).unwrap().bits)
        .collect();
    let report = nist_subset(&samples).unwrap();
    for test in NistTest::ALL {
        let ps: Vec<f64> = report.outcome(test).p_values.iter().map(|(_, p)| *p).collect();
        let d = nist::ks_uniform_statistic(&ps);
        assert!(d < nist::ks_critical_1pct(ps.len()), "{}: D = {d}", test.name());
    }
}

#[test]
fn nist_pass_rate_band() {
    let mut src = sim(52, 0.5);
    let samples: Vec<BitBuf> = (0..100)
        .map(|_| src.draw_bits(nist::MIN_SAMPLE_BITS).unwrap().bits)
        .collect();
    let report = nist_subset(&samples).unwrap();
    for t in &report.tests {
        assert!(t.pass_rate >= 0.96, "{}: {}", t.test.name(), t.pass_rate);
        assert!(t.p_values.iter().all(|(_, p)| (0.0..=1.0).contains(p)));
    }
}

#[test]
fn ent_on_simulated_source() {
    let mut buf = vec![0u8; 4 << 20];
    sim(61, 0.5).fill_bytes(&mut buf).unwrap();
    let r = ent_metrics(&buf).unwrap();
    assert!(r.bits_per_byte > 7.999);
    assert!(r.serial_correlation.unwrap().abs() < 0.002);
    assert!(r.pi_error_pct < 1.0);
    assert!(r.chi_square_p > 1e-4 && r.chi_square_p < 0.9999);
}

use fw_core::analytics::ablation::{ablate, filter_bundle, EvidenceFilter, ReplayContext};
use fw_core::analytics::corpus::planted_ablation_corpus;
use fw_core::analytics::stats::McNemarMethod;
use fw_core::backends::{Sampling, Script, SimulatedChat};
use fw_core::evidence::ScoringConfig;
use fw_core::exec::Execution;

fn run(execution: Execution, method: McNemarMethod) -> fw_core::analytics::ablation::AblationReport {
    let scoring = ScoringConfig::default();
    let ctx = ReplayContext { scoring: &scoring, sampling: Sampling::default(), endpoint: "reasoner", execution };
    let judge = SimulatedChat::new(Script::default());
    ablate(
        &planted_ablation_corpus(),
        &[EvidenceFilter::SourceAOnly, EvidenceFilter::SourceBOnly],
        &judge,
        &ctx,
        0.05,
        method,
    )
}

#[test]
fn planted_discordance_is_recovered() {
    let report = run(Execution::Parallel, McNemarMethod::Exact);
    assert_eq!(report.n, 1000);
    assert!((report.baseline_accuracy - 0.766).abs() < 1e-12);
    let a = &report.results[0];
    assert_eq!((a.b, a.c, a.n_d), (76, 33, 109));
    assert!((a.delta_pp - -4.3).abs() < 1e-9);
    assert!(a.p_value < 0.001);
    assert_eq!(a.adjusted_threshold, 0.025);
    assert!(a.significant);
    let b = &report.results[1];
    assert_eq!((b.b, b.c, b.n_d), (71, 39, 110));
    assert!((b.delta_pp - -3.2).abs() < 1e-9);
    assert!((0.0025..=0.0035).contains(&b.p_value));
    assert!(b.significant);
    let md = report.to_markdown();
    assert!(md.contains("| source A only |"));
}

#[test]
fn execution_mode_and_method_do_not_change_counts() {
    let seq = run(Execution::Sequential, McNemarMethod::ChiSquare);
    let par = run(Execution::Parallel, McNemarMethod::Exact);
    for (x, y) in seq.results.iter().zip(&par.results) {
        assert_eq!((x.b, x.c), (y.b, y.c));
        assert!((x.p_value - y.p_value).abs() < 1e-3);
    }
}

#[test]
fn filtering_drops_only_the_other_source() {
    let r = &planted_ablation_corpus()[0];
    let a = filter_bundle(&r.bundle, EvidenceFilter::SourceAOnly);
    assert!(a.observations.iter().all(|o| o.source.as_str() == "source_a"));
    assert!(a.items.iter().all(|i| i.origin.source().is_none_or(|s| s.as_str() == "source_a")));
    assert_eq!(filter_bundle(&r.bundle, EvidenceFilter::Both), r.bundle);
}

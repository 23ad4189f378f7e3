use fw_core::analytics::corpus::{paper_stats_corpus, planted_ablation_corpus};
use fw_core::analytics::records::{parse_records, write_record};
use fw_core::analytics::rubrics::{rubrics_score, RubricsJudgment};
use fw_core::analytics::tables::analyze;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

mod support;
use support::{analytics_as_recount, random_corpus, recount};

fn pct(t: &fw_core::analytics::tables::Table, label: &str) -> f64 {
    t.row(label).unwrap().percent()
}

#[test]
fn constructed_corpus_reproduces_the_published_tables() {
    let records = paper_stats_corpus();
    assert_eq!(records.len(), 1000);
    let a = analyze(&records);
    let got: Vec<f64> = ["unanimous", "majority", "conflicting", "overall"].iter().map(|l| pct(&a.agreement, l)).collect();
    assert_eq!(got, vec![94.5, 83.2, 58.0, 76.9]);
    assert_eq!(pct(&a.calibration, ">=0.80"), 91.1);
    assert_eq!(pct(&a.calibration, "0.60-0.79"), 74.4);
    assert_eq!(pct(&a.calibration, "0.40-0.59"), 39.4);
    assert_eq!(pct(&a.corroboration, ">=6"), 86.2);
    assert_eq!(pct(&a.corroboration, "0"), 53.8);
    assert_eq!((a.overrides.n_overridden, a.overrides.n_considered), (85, 1000));
    assert!((a.overrides.fraction - 0.085).abs() < 1e-12);
    assert_eq!(analytics_as_recount(&records), recount(&records));
}

#[test]
fn randomized_corpora_match_the_recount() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let records = random_corpus(&mut rng, 200);
        assert_eq!(analytics_as_recount(&records), recount(&records));
    }
}

#[test]
fn recount_survives_a_records_file_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let records = random_corpus(&mut rng, 100);
    let mut buf = Vec::new();
    for r in &records {
        write_record(&mut buf, r).unwrap();
    }
    let back = parse_records(buf.as_slice()).unwrap().records;
    assert_eq!(recount(&back), recount(&records));
}

#[test]
fn planted_corpus_is_well_formed() {
    let records = planted_ablation_corpus();
    assert_eq!(records.len(), 1000);
    assert!(records.iter().all(|r| r.answer.as_deref() == Some("A")));
    assert!(records.iter().all(|r| r.bundle.observations.iter().all(|o| o.tentative_prediction.is_some())));
}

#[test]
fn analysis_text_and_csv_list_every_band() {
    let a = analyze(&paper_stats_corpus());
    let text = a.to_text();
    assert!(text.contains("Overrides: 85/1000 = 8.5%"));
    let csv = a.to_csv();
    assert_eq!(csv.lines().count(), 1 + 4 + 4 + 3 + 1);
}

proptest! {
    #[test]
    fn wrong_answers_score_zero(verdicts in prop::collection::vec(any::<bool>(), 0..12)) {
        let j = RubricsJudgment::new("s", verdicts.clone(), false);
        prop_assert_eq!(j.score, 0.0);
        prop_assert_eq!(rubrics_score(&j), 0.0);
        let right = RubricsJudgment::new("s", verdicts.clone(), true);
        let expect = if verdicts.is_empty() { 0.0 } else { verdicts.iter().filter(|v| **v).count() as f64 / verdicts.len() as f64 };
        prop_assert_eq!(right.score, expect);
        prop_assert!((0.0..=1.0).contains(&right.score));
    }
}

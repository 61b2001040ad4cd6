use std::collections::HashMap;

use confalign::adapters::{TokenSequence, MASK_ID};
use confalign::confidence::*;
use proptest::prelude::*;

/// Looks up a fixed probability per token id and checks the mask contract.
struct TableScorer(HashMap<u32, f64>);

impl MaskedScorer for TableScorer {
    fn name(&self) -> &str {
        "table"
    }

    fn score(&self, context: &TokenSequence, position: usize, original: u32) -> f64 {
        assert_eq!(context.body()[position], MASK_ID);
        assert_eq!(context.body().iter().filter(|&&t| t == MASK_ID).count(), 1);
        self.0[&original]
    }
}

fn table(pairs: &[(u32, f64)]) -> TableScorer {
    TableScorer(pairs.iter().cloned().collect())
}

fn seq(ids: &[u32]) -> TokenSequence {
    TokenSequence::from_body(ids).unwrap()
}

#[test]
fn hand_averages() {
    assert_eq!(confidence_score(&seq(&[10]), &table(&[(10, 0.8)])).unwrap(), 0.8);
    assert_eq!(confidence_score(&seq(&[10, 11]), &table(&[(10, 1.0), (11, 1.0)])).unwrap(), 1.0);
    let c = confidence_score(&seq(&[10, 11]), &table(&[(10, 0.2), (11, 0.6)])).unwrap();
    assert!((c - 0.4).abs() < 1e-15);
}

#[test]
fn zero_scores_clamp_to_the_floor_and_bad_scorers_are_caught() {
    assert_eq!(confidence_score(&seq(&[3]), &table(&[(3, 0.0)])).unwrap(), CONFIDENCE_FLOOR);
    let err = confidence_score(&seq(&[3]), &table(&[(3, 1.5)])).unwrap_err();
    assert_eq!(err.kind(), "contract");
}

#[test]
fn unigram_hand_count() {
    // a = 3, b = 4 within a vocabulary of 5, so N = 3 and V = 5
    let s = fit_toy_scorer(&[seq(&[3, 3, 4])], 5).unwrap();
    assert_eq!(s.probability(3), 3.0 / 8.0);
    assert_eq!(s.probability(4), 2.0 / 8.0);
    assert_eq!(s.probability(0), 1.0 / 8.0);
    let empty = fit_toy_scorer(&[], 4).unwrap();
    assert!((0..4).all(|i| empty.probability(i) == 0.25));
}

#[test]
fn unigram_rejects_out_of_vocabulary_corpus() {
    assert_eq!(fit_toy_scorer(&[seq(&[9])], 5).unwrap_err().kind(), "vocabulary");
}

#[test]
fn uniform_scorer_gives_one_over_v() {
    let u = UniformScorer::new(256).unwrap();
    for body in [vec![3u32], vec![4, 5, 6], vec![200; 17]] {
        assert_eq!(confidence_score(&seq(&body), &u).unwrap(), 1.0 / 256.0);
    }
}

#[test]
fn registry_builds_by_name_and_reports_unknown_names() {
    let corpus = vec![seq(&[3, 3, 4])];
    assert_eq!(build_scorer("unigram", 8, &corpus).unwrap().name(), "unigram");
    assert_eq!(build_scorer("uniform", 8, &corpus).unwrap().name(), "uniform");
    let err = build_scorer("bert", 8, &corpus).err().unwrap();
    assert_eq!(err.kind(), "unknown-strategy");
    assert!(err.to_string().contains("unigram"));
}

#[test]
fn parallel_scoring_keeps_input_order() {
    let scorer = fit_toy_scorer(&[seq(&[3, 3, 3, 4, 5])], 16).unwrap();
    let sentences: Vec<TokenSequence> = (0..500).map(|i| seq(&[3 + (i % 13) as u32, 3])).collect();
    let par = score_all(&sentences, &scorer).unwrap();
    let serial: Vec<f64> = sentences.iter().map(|s| confidence_score(s, &scorer).unwrap()).collect();
    assert_eq!(par, serial);
}

#[test]
fn tokenizer_rules() {
    assert_eq!(tokenize("Cystic DUCT, clipped!", 256), tokenize("cystic duct clipped", 256));
    assert_eq!(tokenize("  ", 256), Vec::<u32>::new());
    assert_eq!(tokenize("naïve", 256), vec![confalign::adapters::UNK_ID]);
    assert!(tokenize("the gallbladder is retracted", 256).iter().all(|&t| (3..256).contains(&t)));
    assert_eq!(encode_caption("...", 256).unwrap_err().kind(), "domain");
}

#[test]
fn batch_mean_rescale() {
    let c = rescale(&[0.1, 0.3], Rescale::BatchMean, 1e-6);
    assert!((c[0] - 0.5).abs() < 1e-15 && c[1] == 1.0);
    assert_eq!(rescale(&[0.1, 0.3], Rescale::None, 1e-6), vec![0.1, 0.3]);
    assert_eq!("batch-mean".parse::<Rescale>().unwrap(), Rescale::BatchMean);
}

#[test]
fn report_round_trip() {
    let recs = vec![
        ConfidenceRecord { clip_id: "a".into(), token_count: 3, confidence: 0.25 },
        ConfidenceRecord { clip_id: "b".into(), token_count: 1, confidence: 1e-6 },
    ];
    let mut buf = Vec::new();
    write_report(&mut buf, &recs).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert_eq!(text.lines().next().unwrap(), r#"{"clip_id":"a","token_count":3,"confidence":0.25}"#);
    assert_eq!(read_report(buf.as_slice()).unwrap(), recs);
}

fn probs() -> impl Strategy<Value = Vec<(u32, f64)>> {
    prop::collection::vec(0.0f64..=1.0, 1..12).prop_map(|ps| ps.into_iter().enumerate().map(|(i, p)| (3 + i as u32, p)).collect())
}

proptest! {
    #[test]
    fn context_free_scores_ignore_token_order(pairs in probs(), rot in 0usize..12) {
        let s = table(&pairs);
        let ids: Vec<u32> = pairs.iter().map(|p| p.0).collect();
        let mut shuffled = ids.clone();
        shuffled.rotate_left(rot % ids.len());
        let a = confidence_score(&seq(&ids), &s).unwrap();
        let b = confidence_score(&seq(&shuffled), &s).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!(a > 0.0 && a <= 1.0);
    }

    #[test]
    fn raising_one_probability_raises_confidence(pairs in probs(), which in 0usize..12, bump in 0.01f64..0.5) {
        let k = which % pairs.len();
        let ids: Vec<u32> = pairs.iter().map(|p| p.0).collect();
        prop_assume!(pairs[k].1 + bump <= 1.0);
        let mut higher = pairs.clone();
        higher[k].1 += bump;
        let before = confidence_score(&seq(&ids), &table(&pairs)).unwrap();
        let after = confidence_score(&seq(&ids), &table(&higher)).unwrap();
        prop_assume!(before > CONFIDENCE_FLOOR);
        prop_assert!(after > before);
    }

    #[test]
    fn unigram_probabilities_sum_to_one(corpus in prop::collection::vec(prop::collection::vec(0u32..32, 1..8), 0..10)) {
        let seqs: Vec<TokenSequence> = corpus.iter().map(|b| seq(b)).collect();
        let s = fit_toy_scorer(&seqs, 32).unwrap();
        let total: f64 = (0..32).map(|i| s.probability(i)).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }
}

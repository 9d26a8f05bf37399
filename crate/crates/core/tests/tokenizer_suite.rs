use held_core::tokenizer_compat::{
    align_tokens, exact_match_rate, parse_record_line, pearson, vocab_jaccard, IngestOptions, TokenizationRecord,
    VocabSet,
};

fn rec(spans: &[(usize, usize)]) -> TokenizationRecord {
    TokenizationRecord::from_spans("t", spans).unwrap()
}

fn vocab(id: &str, toks: &[&str]) -> VocabSet {
    VocabSet::new(id, toks.iter().map(|s| s.to_string())).unwrap()
}

#[test]
fn alignment_worked_examples() {
    let same = rec(&[(0, 3), (3, 4), (4, 9)]);
    assert_eq!(align_tokens(&same, &same).unwrap().pairs, vec![(0, 0), (1, 1), (2, 2)]);
    assert_eq!(exact_match_rate(&same, &same).unwrap(), 1.0);

    // A ends (2, 5, 9), B ends (5, 9); spans agree on the tokens ending at 5 and 9.
    let a = rec(&[(0, 2), (2, 5), (5, 9)]);
    let b = rec(&[(2, 5), (5, 9)]);
    let al = align_tokens(&a, &b).unwrap();
    assert_eq!(al.pairs, vec![(0, 0), (1, 0), (2, 1)]);
    assert_eq!(al.dropped, 0);
    assert!((exact_match_rate(&a, &b).unwrap() - 2.0 / 3.0).abs() < 1e-15);

    let a = rec(&[(5, 9)]);
    let b = rec(&[(0, 2), (2, 5)]);
    let al = align_tokens(&a, &b).unwrap();
    assert!(al.pairs.is_empty());
    assert_eq!(al.dropped, 1);

    let a = rec(&[(0, 1), (1, 3), (3, 6)]);
    let b = rec(&[(0, 2), (2, 4), (4, 7)]);
    assert_eq!(exact_match_rate(&a, &b).unwrap(), 0.0);
}

#[test]
fn whitespace_tokenizer_offsets() {
    let text = "the cat sat";
    let mut spans = Vec::new();
    let mut at = 0;
    for w in text.split(' ') {
        spans.push((at, at + w.len()));
        at += w.len() + 1;
    }
    assert_eq!(spans, vec![(0, 3), (4, 7), (8, 11)]);
    let line = r#"{"text_id":"x","tokens":[["<s>",0,0],["the",0,3],["cat",4,7],["sat",8,11]]}"#;
    let r = parse_record_line(line, &IngestOptions::with_common_specials()).unwrap();
    assert_eq!(r.tokens.iter().map(|t| (t.start, t.end)).collect::<Vec<_>>(), spans);
}

#[test]
fn jaccard_worked_examples() {
    let abc = vocab("a", &["a", "b", "c"]);
    assert_eq!(vocab_jaccard(&abc, &abc), 1.0);
    assert_eq!(vocab_jaccard(&abc, &vocab("d", &["x", "y"])), 0.0);
    assert_eq!(vocab_jaccard(&abc, &vocab("b", &["b", "c", "d"])), 0.5);
}

#[test]
fn pearson_on_linear_data() {
    let xs: Vec<f64> = (0..50).map(|i| f64::from(i) * 0.37 - 3.0).collect();
    let up: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
    let down: Vec<f64> = xs.iter().map(|x| -x).collect();
    assert!((pearson(&xs, &up).unwrap() - 1.0).abs() <= 1e-12);
    assert!((pearson(&xs, &down).unwrap() + 1.0).abs() <= 1e-12);
}

/// (Jaccard, exact match, judge score, both models ≥ 2B) for every pair in
/// the published compatibility table.
pub const TABLE: [(f64, f64, f64, bool); 29] = [
    (1.000, 1.000, 4.68, true),
    (0.643, 0.925, 4.47, true),
    (0.643, 0.925, 4.43, true),
    (0.999, 1.000, 4.35, true),
    (0.643, 0.925, 4.31, true),
    (0.382, 0.637, 4.21, true),
    (0.316, 0.672, 4.13, true),
    (1.000, 1.000, 4.07, true),
    (0.643, 0.925, 3.99, true),
    (0.316, 0.672, 3.94, true),
    (0.643, 0.925, 3.90, true),
    (0.067, 0.151, 1.89, true),
    (0.316, 0.672, 1.86, true),
    (0.057, 0.238, 1.79, true),
    (0.057, 0.238, 1.73, true),
    (0.063, 0.227, 1.68, true),
    (0.063, 0.227, 1.31, true),
    (0.061, 0.151, 1.13, true),
    (1.000, 1.000, 1.83, false),
    (0.643, 0.925, 1.53, false),
    (0.643, 0.925, 1.18, false),
    (0.643, 0.925, 1.17, false),
    (1.000, 1.000, 1.06, false),
    (0.069, 0.226, 1.04, false),
    (1.000, 1.000, 1.03, false),
    (0.069, 0.226, 1.03, false),
    (0.057, 0.238, 1.02, false),
    (0.063, 0.227, 1.01, false),
    (0.063, 0.227, 1.00, false),
];

#[test]
fn table_correlation_on_large_pairs() {
    let large: Vec<_> = TABLE.iter().filter(|r| r.3).collect();
    assert_eq!(large.len(), 18);
    let jac: Vec<f64> = large.iter().map(|r| r.0).collect();
    let exact: Vec<f64> = large.iter().map(|r| r.1).collect();
    let score: Vec<f64> = large.iter().map(|r| r.2).collect();
    let r_jac = pearson(&jac, &score).unwrap();
    assert!((r_jac - 0.82).abs() <= 0.1, "{r_jac}");
    let r_exact = pearson(&exact, &score).unwrap();
    assert!(r_exact > r_jac, "{r_exact} vs {r_jac}");
    // Including the small-model pairs washes the relation out.
    let all_j: Vec<f64> = TABLE.iter().map(|r| r.0).collect();
    let all_s: Vec<f64> = TABLE.iter().map(|r| r.2).collect();
    assert!(pearson(&all_j, &all_s).unwrap() < r_jac);
}

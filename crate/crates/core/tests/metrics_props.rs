use std::collections::HashMap;

use nlr_eval::metrics::{
    self, cosine_tf, lcs_len, rouge_l, rouge_n, score_tokens, tokenize, MetricKind, ScorerRegistry,
};
use nlr_eval::TokenSequence;
use proptest::prelude::*;

fn seq(tokens: &[&str]) -> TokenSequence {
    tokens.iter().map(|t| t.to_string()).collect()
}

fn words() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d"]), 0..=8)
        .prop_map(|v| v.into_iter().map(String::from).collect())
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<Vec<String>, usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for i in 0..=tokens.len() - n {
            *m.entry(tokens[i..i + n].to_vec()).or_insert(0) += 1;
        }
    }
    m
}

fn prf(overlap: usize, n_cand: usize, n_ref: usize) -> (f64, f64, f64) {
    let r = if n_ref == 0 {
        0.0
    } else {
        overlap as f64 / n_ref as f64
    };
    let p = if n_cand == 0 {
        0.0
    } else {
        overlap as f64 / n_cand as f64
    };
    let f = if r == 0.0 || p == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    };
    (r, p, f)
}

fn naive_rouge_n(c: &[String], r: &[String], n: usize) -> (f64, f64, f64) {
    let (cc, rc) = (ngram_counts(c, n), ngram_counts(r, n));
    let overlap: usize = cc
        .iter()
        .map(|(g, k)| (*k).min(*rc.get(g).unwrap_or(&0)))
        .sum();
    prf(overlap, cc.values().sum(), rc.values().sum())
}

fn is_subsequence(needle: &[&String], hay: &[String]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|n| it.any(|h| h == *n))
}

/// Longest common subsequence by enumerating every subsequence of `a`.
fn exhaustive_lcs(a: &[String], b: &[String]) -> usize {
    (0u32..1 << a.len())
        .filter_map(|mask| {
            let sub: Vec<&String> = (0..a.len())
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| &a[i])
                .collect();
            is_subsequence(&sub, b).then_some(sub.len())
        })
        .max()
        .unwrap_or(0)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn rouge_matches_naive_counting(c in words(), r in words()) {
        let (cs, rs): (TokenSequence, TokenSequence) = (c.iter().cloned().collect(), r.iter().cloned().collect());
        for n in 1..=2 {
            let got = rouge_n(&cs, &rs, n);
            let (er, ep, ef) = naive_rouge_n(&c, &r, n);
            prop_assert!(close(got.recall, er) && close(got.precision, ep) && close(got.f1, ef), "n={n} {got:?}");
        }
        let l = exhaustive_lcs(&c, &r);
        prop_assert_eq!(lcs_len(&c, &r), l);
        let got = rouge_l(&cs, &rs);
        let (er, ep, ef) = prf(l, c.len(), r.len());
        prop_assert!(close(got.recall, er) && close(got.precision, ep) && close(got.f1, ef));
    }

    #[test]
    fn swapping_swaps_recall_and_precision(c in words(), r in words()) {
        let (cs, rs): (TokenSequence, TokenSequence) = (c.into_iter().collect(), r.into_iter().collect());
        for n in 1..=2 {
            let (a, b) = (rouge_n(&cs, &rs, n), rouge_n(&rs, &cs, n));
            prop_assert_eq!(a.recall, b.precision);
            prop_assert_eq!(a.precision, b.recall);
            prop_assert!(close(a.f1, b.f1));
        }
        prop_assert!(close(cosine_tf(&cs, &rs), cosine_tf(&rs, &cs)));
    }

    #[test]
    fn lcs_recall_never_exceeds_unigram_recall(c in words(), r in words()) {
        let (cs, rs): (TokenSequence, TokenSequence) = (c.into_iter().collect(), r.into_iter().collect());
        prop_assert!(rouge_l(&cs, &rs).recall <= rouge_n(&cs, &rs, 1).recall + 1e-15);
        prop_assert!(lcs_len(cs.tokens(), rs.tokens()) <= cs.len().min(rs.len()));
    }

    #[test]
    fn builtin_values_in_unit_interval(a in "[a-dA-D .,%]{0,40}", b in "[a-dA-D .,%]{0,40}") {
        let (ta, tb) = (tokenize(&a), tokenize(&b));
        for kind in MetricKind::builtins() {
            let v = score_tokens(&kind, &ta, &tb).unwrap();
            prop_assert!((0.0..=1.0).contains(&v), "{kind} = {v}");
        }
    }

    #[test]
    fn self_score_is_one(a in "[a-z]{1,6}( [a-z]{1,6}){0,8}") {
        let reg = ScorerRegistry::new();
        for kind in MetricKind::builtins() {
            // a single token has no bigrams
            if matches!(kind, MetricKind::Rouge2(_)) && tokenize(&a).len() < 2 {
                continue;
            }
            let v = metrics::score(&kind, &a, &a, &reg).unwrap().value;
            prop_assert!(close(v, 1.0), "{kind} = {v}");
        }
    }

    #[test]
    fn case_does_not_matter(a in "[a-zA-Z ]{0,30}", b in "[a-zA-Z ]{0,30}") {
        for kind in MetricKind::builtins() {
            let lower = score_tokens(&kind, &tokenize(&a.to_lowercase()), &tokenize(&b.to_lowercase()));
            let upper = score_tokens(&kind, &tokenize(&a.to_uppercase()), &tokenize(&b));
            prop_assert_eq!(lower, upper);
        }
    }
}

#[test]
fn worked_rouge1_example() {
    let p = rouge_n(
        &seq(&["the", "cat"]),
        &seq(&["the", "cat", "sat", "on", "the", "mat"]),
        1,
    );
    assert!(close(p.recall, 2.0 / 6.0));
    assert!(close(p.precision, 1.0));
    assert!(close(p.f1, 0.5));
}

#[test]
fn punctuation_and_case_are_normalized() {
    let a = tokenize("Revenue rose 3.5%, to $12.");
    let b = tokenize("revenue ROSE 3.5% to $12");
    assert_eq!(a, b);
    assert_eq!(score_tokens(&MetricKind::DEFAULT, &a, &b), Some(1.0));
}

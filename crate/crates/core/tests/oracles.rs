use std::collections::HashMap;

use proptest::prelude::*;
use rand::Rng;

use perprob::lm::{lm_generate, lm_score, LmShape, ReferenceLm};
use perprob::seed::rng_from_seed;
use perprob::text::{build_vocab, build_vocab_limited, tokenize, SPECIALS};
use perprob::{sequence_avg_logprob, sequence_ppl, summarize_dataset, Extended, Role, TokenScoreSequence};

fn random_sequence(rng: &mut impl Rng, i: usize, inf_rate: f64) -> TokenScoreSequence {
    let n = rng.gen_range(1..40);
    let lps: Vec<f64> = (0..n)
        .map(|_| {
            if rng.gen_bool(inf_rate) {
                f64::NEG_INFINITY
            } else {
                -rng.gen_range(0.0..12.0)
            }
        })
        .collect();
    TokenScoreSequence::from_raw(format!("s{i}"), "m", Role::Other, (0..n as u32).collect(), &lps).unwrap()
}

#[test]
fn summary_matches_a_direct_computation() {
    let mut rng = rng_from_seed(42);
    let seqs: Vec<_> = (0..100).map(|i| random_sequence(&mut rng, i, 0.01)).collect();

    let mut lambdas = Vec::new();
    let mut infinite = 0;
    for s in &seqs {
        let raw: Vec<f64> = s.logprobs.iter().map(|l| l.finite().unwrap_or(f64::NEG_INFINITY)).collect();
        if raw.iter().any(|v| v.is_infinite()) {
            infinite += 1;
        } else {
            lambdas.push(raw.iter().sum::<f64>() / raw.len() as f64);
        }
    }
    assert!(infinite > 0 && infinite < 100, "fixture should mix finite and infinite");
    let mean_l = lambdas.iter().sum::<f64>() / lambdas.len() as f64;
    let mean_p = lambdas.iter().map(|l| (-l).exp()).sum::<f64>() / lambdas.len() as f64;
    let mut sorted = lambdas.clone();
    sorted.sort_by(f64::total_cmp);
    let median_l = sorted[(sorted.len() - 1) / 2];
    let mut ppls: Vec<f64> = lambdas.iter().map(|l| (-l).exp()).collect();
    ppls.sort_by(f64::total_cmp);
    let median_p = ppls[(ppls.len() - 1) / 2];

    let s = summarize_dataset(&seqs).unwrap();
    assert_eq!(s.count_total, 100);
    assert_eq!(s.count_infinite, infinite);
    assert!((s.inf_rate - infinite as f64 / 100.0).abs() < 1e-15);
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.abs().max(1.0);
    assert!(close(s.mean_lambda_finite.unwrap(), mean_l));
    assert!(close(s.mean_ppl_finite.unwrap(), mean_p));
    assert!(close(s.median_lambda_finite.unwrap(), median_l));
    assert!(close(s.median_ppl_finite.unwrap(), median_p));
}

#[test]
fn infinite_sequences_have_infinite_ppl() {
    let mut rng = rng_from_seed(3);
    for i in 0..200 {
        let s = random_sequence(&mut rng, i, 0.05);
        let l = sequence_avg_logprob(&s).unwrap();
        let p = sequence_ppl(&s).unwrap();
        match l {
            Extended::Finite(v) => assert!(((-v).exp() - p.to_f64()).abs() <= 1e-9 * p.to_f64()),
            Extended::NegInf => assert_eq!(p, Extended::PosInf),
            Extended::PosInf => panic!("λ cannot be +inf"),
        }
    }
}

#[test]
fn vocabulary_equals_a_brute_force_count() {
    let mut rng = rng_from_seed(9);
    let words: Vec<String> = (0..300).map(|i| format!("t{}", i * 7 % 301)).collect();
    let corpus: Vec<String> = (0..1000)
        .map(|_| {
            let n = rng.gen_range(3..15);
            (0..n)
                .map(|_| {
                    // skewed draw so that counts spread out
                    let u: f64 = rng.gen();
                    words[((u * u) * words.len() as f64) as usize].clone()
                })
                .collect::<Vec<_>>()
                .join(if rng.gen_bool(0.1) { ", " } else { " " })
        })
        .collect();

    let mut counts: HashMap<String, usize> = HashMap::new();
    for doc in &corpus {
        for tok in tokenize(doc) {
            *counts.entry(tok).or_default() += 1;
        }
    }
    for min_count in [1, 3, 20] {
        let mut expected: Vec<(String, usize)> =
            counts.iter().filter(|(_, &c)| c >= min_count).map(|(t, &c)| (t.clone(), c)).collect();
        expected.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let vocab = build_vocab(&corpus, min_count).unwrap();
        let got: Vec<&str> = vocab.tokens().iter().map(String::as_str).collect();
        assert_eq!(&got[..3], &SPECIALS);
        let want: Vec<&str> = expected.iter().map(|(t, _)| t.as_str()).collect();
        assert_eq!(&got[3..], &want[..], "min_count {min_count}");

        let cap = 50.min(vocab.len() - 1);
        let capped = build_vocab_limited(&corpus, min_count, Some(cap)).unwrap();
        assert_eq!(capped.tokens(), &vocab.tokens()[..cap]);
    }
}

#[test]
fn uniform_logits_sample_every_token_equally() {
    let v = 10;
    let lm = ReferenceLm::zeros(v, LmShape::default()).unwrap();
    let n = 10_000;
    let mut counts = vec![0usize; v];
    for i in 0..n {
        let t = lm_generate(&lm, &[], 1, 1.0, i as u64).unwrap();
        counts[t[0] as usize] += 1;
    }
    let p = 1.0 / v as f64;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    for (t, &c) in counts.iter().enumerate() {
        let z = (c as f64 - n as f64 * p) / sigma;
        assert!(z.abs() <= 3.0, "token {t}: count {c}, z = {z:.2}");
    }
}

#[test]
fn scoring_depends_on_token_order() {
    let lm = {
        let mut lm = ReferenceLm::init(30, LmShape::default(), 5).unwrap();
        for w in lm.output_weights.iter_mut() {
            *w *= 40.0;
        }
        lm
    };
    let seq: Vec<u32> = vec![4, 9, 17, 3, 22, 8];
    let rev: Vec<u32> = seq.iter().rev().copied().collect();
    let a = sequence_avg_logprob(&lm_score(&lm, &seq, "a", "m", Role::Other).unwrap()).unwrap();
    let b = sequence_avg_logprob(&lm_score(&lm, &rev, "b", "m", Role::Other).unwrap()).unwrap();
    assert_ne!(a, b);
}

proptest! {
    #[test]
    fn lower_median_is_order_free(mut lps in prop::collection::vec(-20.0..0.0f64, 1..40)) {
        let seqs: Vec<_> = lps
            .iter()
            .enumerate()
            .map(|(i, &l)| TokenScoreSequence::from_raw(format!("s{i}"), "m", Role::Other, vec![0], &[l]).unwrap())
            .collect();
        let s = summarize_dataset(&seqs).unwrap();
        lps.sort_by(f64::total_cmp);
        prop_assert_eq!(s.median_lambda_finite, Some(lps[(lps.len() - 1) / 2]));
    }
}

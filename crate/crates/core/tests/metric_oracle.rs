//! BLEU and NIST against NLTK-generated values and a naive re-implementation.

use std::collections::BTreeMap;

use mds_core::metrics::{bleu_n, nist};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

#[derive(Deserialize)]
struct Case {
    candidates: Vec<Vec<String>>,
    references: Vec<Vec<String>>,
    bleu: [f64; 4],
    nist: f64,
}

fn fixture() -> Vec<Case> {
    serde_json::from_str(include_str!("fixtures/metric_oracle.json")).unwrap()
}

#[test]
fn matches_nltk_fixture() {
    let cases = fixture();
    assert_eq!(cases.len(), 20);
    for (i, c) in cases.iter().enumerate() {
        for n in 1..=4 {
            let got = bleu_n(&c.candidates, &c.references, n).unwrap();
            assert!((got - c.bleu[n - 1]).abs() < 1e-4, "case {i} bleu{n}: {got} vs {}", c.bleu[n - 1]);
        }
        let got = nist(&c.candidates, &c.references).unwrap();
        assert!((got - c.nist).abs() < 1e-3, "case {i} nist: {got} vs {}", c.nist);
    }
}

// Straight from the definitions, with n-grams keyed by joined strings.
fn grams(s: &[String], n: usize) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for i in 0..(s.len() + 1).saturating_sub(n) {
        *m.entry(s[i..i + n].join(" ")).or_insert(0) += 1;
    }
    m
}

fn naive_bleu(c: &[Vec<String>], r: &[Vec<String>], n: usize) -> f64 {
    let mut prod = 1.0;
    for k in 1..=n {
        let mut hit = 0.0;
        let mut all = 0.0;
        for i in 0..c.len() {
            let rg = grams(&r[i], k);
            for (g, cnt) in grams(&c[i], k) {
                hit += cnt.min(*rg.get(&g).unwrap_or(&0)) as f64;
                all += cnt as f64;
            }
        }
        if hit == 0.0 {
            return 0.0;
        }
        prod *= hit / all;
    }
    let lc: usize = c.iter().map(|x| x.len()).sum();
    let lr: usize = r.iter().map(|x| x.len()).sum();
    let bp = if lc > lr { 1.0 } else { f64::exp(1.0 - lr as f64 / lc as f64) };
    bp * prod.powf(1.0 / n as f64)
}

fn naive_nist(c: &[Vec<String>], r: &[Vec<String>]) -> f64 {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let words: usize = r.iter().map(|x| x.len()).sum();
    for s in r {
        for k in 1..=5 {
            for (g, cnt) in grams(s, k) {
                *counts.entry(g).or_insert(0) += cnt;
            }
        }
    }
    let mut total = 0.0;
    for k in 1..=5 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..c.len() {
            let rg = grams(&r[i], k);
            for (g, cnt) in grams(&c[i], k) {
                den += cnt as f64;
                let m = cnt.min(*rg.get(&g).unwrap_or(&0));
                if m > 0 {
                    let parts: Vec<&str> = g.split(' ').collect();
                    let prefix = if k == 1 { words } else { counts[&parts[..k - 1].join(" ")] };
                    num += m as f64 * (prefix as f64 / counts[&g] as f64).ln() / std::f64::consts::LN_2;
                }
            }
        }
        if den > 0.0 {
            total += num / den;
        }
    }
    let lc: f64 = c.iter().map(|x| x.len() as f64).sum();
    let ratio = lc / words as f64;
    let penalty = if ratio >= 1.0 {
        1.0
    } else if ratio <= 0.0 {
        0.0
    } else {
        let b = (0.5f64).ln() / (1.5f64).ln().powi(2);
        (b * ratio.ln() * ratio.ln()).exp()
    };
    total * penalty
}

fn random_corpus(rng: &mut ChaCha8Rng) -> (Vec<Vec<String>>, Vec<Vec<String>>) {
    let words = ["a", "b", "c", "d", "e", "f"];
    let mut c = Vec::new();
    let mut r = Vec::new();
    for _ in 0..rng.gen_range(1..6) {
        let refs: Vec<String> = (0..rng.gen_range(1..12)).map(|_| words[rng.gen_range(0..6)].to_string()).collect();
        let keep = rng.gen_range(1..14);
        let cand: Vec<String> = refs
            .iter()
            .map(|w| if rng.gen_bool(0.75) { w.clone() } else { words[rng.gen_range(0..6)].to_string() })
            .take(keep)
            .collect();
        c.push(cand);
        r.push(refs);
    }
    (c, r)
}

#[test]
fn matches_naive_definitions() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..200 {
        let (c, r) = random_corpus(&mut rng);
        for n in 1..=4 {
            let (a, b) = (bleu_n(&c, &r, n).unwrap(), naive_bleu(&c, &r, n));
            assert!((a - b).abs() < 1e-12, "{a} {b}");
        }
        let (a, b) = (nist(&c, &r).unwrap(), naive_nist(&c, &r));
        assert!((a - b).abs() < 1e-9, "{a} {b}");
    }
}

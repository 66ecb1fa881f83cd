#![allow(dead_code)]

use mtdistill_core::corpus::Segment;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Brute-force chrF: every substring of every length is counted by linear
/// search, no hashing, no shared code with the library.
pub fn chrf_oracle(hyp: &str, reference: &str, max_order: usize, beta: f64) -> f64 {
    let h: String = hyp.chars().filter(|c| !c.is_whitespace()).collect();
    let r: String = reference.chars().filter(|c| !c.is_whitespace()).collect();
    let h: Vec<char> = h.chars().collect();
    let r: Vec<char> = r.chars().collect();
    let grams = |s: &[char], n: usize| -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        if s.len() < n {
            return out;
        }
        for i in 0..=s.len() - n {
            let g: String = s[i..i + n].iter().collect();
            match out.iter_mut().find(|(k, _)| *k == g) {
                Some(e) => e.1 += 1,
                None => out.push((g, 1)),
            }
        }
        out
    };
    let mut ps = Vec::new();
    let mut rs = Vec::new();
    for n in 1..=max_order {
        let rg = grams(&r, n);
        let rt: usize = rg.iter().map(|x| x.1).sum();
        if rt == 0 {
            continue;
        }
        let hg = grams(&h, n);
        let ht: usize = hg.iter().map(|x| x.1).sum();
        let mut m = 0;
        for (g, c) in &hg {
            if let Some((_, rc)) = rg.iter().find(|(k, _)| k == g) {
                m += (*c).min(*rc);
            }
        }
        ps.push(if ht == 0 { 0.0 } else { m as f64 / ht as f64 });
        rs.push(m as f64 / rt as f64);
    }
    let p = ps.iter().sum::<f64>() / ps.len() as f64;
    let rc = rs.iter().sum::<f64>() / rs.len() as f64;
    let b2 = beta * beta;
    if p == 0.0 && rc == 0.0 {
        return 0.0;
    }
    100.0 * (1.0 + b2) * p * rc / (b2 * p + rc)
}

/// Random string over a small alphabet so that n-gram overlaps are common.
pub fn random_text(rng: &mut ChaCha8Rng, min: usize, max: usize) -> String {
    const ALPHABET: &[char] = &['a', 'b', 'c', 'd', 'e', ' ', 'x', 'é', '.'];
    loop {
        let len = rng.gen_range(min..=max);
        let s: String = (0..len).map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())]).collect();
        if min == 0 || s.chars().any(|c| !c.is_whitespace()) {
            return s;
        }
    }
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const WORDS: &[&str] = &[
    "the", "river", "quietly", "carried", "old", "boats", "toward", "a", "city", "of", "glass", "and", "noise",
    "children", "watched", "from", "bridges", "while", "bells", "rang",
];

pub fn segments(n: usize, seed: u64) -> Vec<Segment> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let len = r.gen_range(3..12);
            let text = (0..len).map(|_| WORDS[r.gen_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ") + ".";
            Segment {
                id: format!("en-{i:07}"),
                char_count: text.chars().count(),
                token_count: len + 1,
                text,
                lang: "en".into(),
                oversize: false,
            }
        })
        .collect()
}

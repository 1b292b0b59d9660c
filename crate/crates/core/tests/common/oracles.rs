//! Reference implementations for the metric tests.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Longest common subsequence by enumerating every subsequence of `a`.
pub fn brute_force_lcs(a: &[String], b: &[String]) -> usize {
    let is_subseq = |pick: &[&String]| {
        let mut it = b.iter();
        pick.iter().all(|x| it.any(|y| y == *x))
    };
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let pick: Vec<&String> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| &a[i]).collect();
        if pick.len() > best && is_subseq(&pick) {
            best = pick.len();
        }
    }
    best
}

pub fn oracle_rouge(r: &[String], c: &[String], beta: f64) -> f64 {
    let l = brute_force_lcs(r, c) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let p = l / c.len() as f64;
    let rc = l / r.len() as f64;
    (1.0 + beta * beta) * p * rc / (rc + beta * beta * p)
}

pub fn random_tokens(rng: &mut ChaCha8Rng, vocab: &[&str]) -> Vec<String> {
    let n = rng.gen_range(0..=12);
    (0..n).map(|_| vocab[rng.gen_range(0..vocab.len())].to_string()).collect()
}

pub fn direct_cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    dot / (na.sqrt() * nb.sqrt())
}

pub type Counts = (usize, usize, usize, usize, usize, usize);

/// Ten confusions worked out by hand:
/// (tp, fp, tn, fn, unknown_real, unknown_fake) → (acc, fake F1, macro F1).
pub fn confusion_cases() -> [(Counts, (f64, f64, f64)); 10] {
    [
        ((3, 1, 5, 1, 0, 0), (0.8, 0.75, (0.75 + 10.0 / 12.0) / 2.0)),
        ((10, 0, 0, 0, 0, 0), (1.0, 1.0, 0.5)),
        ((0, 0, 10, 0, 0, 0), (1.0, 0.0, 0.5)),
        ((5, 5, 0, 0, 0, 0), (0.5, 10.0 / 15.0, 10.0 / 30.0)),
        ((0, 0, 0, 0, 3, 3), (0.0, 0.0, 0.0)),
        ((4, 0, 4, 0, 1, 1), (0.8, 8.0 / 9.0, 8.0 / 9.0)),
        ((1, 2, 3, 4, 0, 0), (0.4, 2.0 / 8.0, (2.0 / 8.0 + 6.0 / 12.0) / 2.0)),
        ((2, 0, 0, 2, 0, 0), (0.5, 4.0 / 6.0, 2.0 / 6.0)),
        ((6, 1, 2, 1, 0, 0), (0.8, 12.0 / 14.0, (12.0 / 14.0 + 4.0 / 6.0) / 2.0)),
        ((96, 252, 748, 4, 0, 0), (844.0 / 1100.0, 192.0 / 448.0, (192.0 / 448.0 + 1496.0 / 1752.0) / 2.0)),
    ]
}

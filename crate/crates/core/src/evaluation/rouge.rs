pub const DEFAULT_BETA: f64 = 1.2;

/// Lowercase, split on Unicode whitespace, strip trailing punctuation.
/// Tokens that are pure punctuation are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.trim_end_matches(|c: char| c.is_ascii_punctuation() || is_unicode_punct(c)))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn is_unicode_punct(c: char) -> bool {
    matches!(c, '\u{2018}'..='\u{201f}' | '\u{2026}' | '\u{3002}' | '\u{ff0c}' | '\u{ff01}' | '\u{ff1f}')
}

/// Length of the longest common subsequence under case-insensitive
/// token equality.
pub fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let a: Vec<String> = a.iter().map(|s| s.as_ref().to_lowercase()).collect();
    let b: Vec<String> = b.iter().map(|s| s.as_ref().to_lowercase()).collect();
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in &a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS F-measure `(1+β²)PR / (R + β²P)` with `P = LCS/|cand|`,
/// `R = LCS/|ref|`. Zero if either side is empty or nothing is shared.
pub fn rouge_l<S: AsRef<str>>(reference: &[S], candidate: &[S], beta: f64) -> f64 {
    let lcs = lcs_len(reference, candidate);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / candidate.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    let b2 = beta * beta;
    (1.0 + b2) * p * r / (r + b2 * p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer() {
        assert_eq!(
            tokenize("The Cat, sat on the MAT.  Really?!"),
            vec!["the", "cat", "sat", "on", "the", "mat", "really"]
        );
        assert_eq!(tokenize(" ... "), Vec::<String>::new());
        assert_eq!(tokenize("over-smoothed \"skin\""), vec!["over-smoothed", "\"skin"]);
    }

    #[test]
    fn identity_and_disjoint() {
        let x = tokenize("warped text on the sign");
        assert_eq!(rouge_l(&x, &x, DEFAULT_BETA), 1.0);
        assert_eq!(rouge_l(&tokenize("a b c"), &tokenize("d e f"), DEFAULT_BETA), 0.0);
        assert_eq!(rouge_l(&tokenize(""), &tokenize("a"), DEFAULT_BETA), 0.0);
    }

    #[test]
    fn cat_on_mat() {
        let r = tokenize("the cat sat on the mat");
        let c = tokenize("the cat on mat");
        assert_eq!(lcs_len(&r, &c), 4);
        // P = 1, R = 2/3: 2.44 * (2/3) / (2/3 + 1.44) = 4.88 / 6.32.
        assert!((rouge_l(&r, &c, 1.2) - 4.88 / 6.32).abs() < 1e-15);
    }

    #[test]
    fn case_insensitive_comparison() {
        assert_eq!(lcs_len(&["The", "CAT"], &["the", "cat"]), 2);
    }
}

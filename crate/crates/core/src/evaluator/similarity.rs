//! Normalized Levenshtein similarity and threshold matching.

/// Levenshtein edit distance over Unicode scalar values, two-row dynamic
/// programming.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut curr: Vec<usize> = vec![0; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        curr[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let cost = usize::from(ca != cb);
            curr[j + 1] = (prev[j] + cost).min(prev[j + 1] + 1).min(curr[j] + 1);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// Similarity ratio: `1 - levenshtein(a, b) / max(|a|, |b|)`, with two empty
/// strings defined as identical (1.0).
pub fn similarity(a: &str, b: &str) -> f64 {
    let la = a.chars().count();
    let lb = b.chars().count();
    let max = la.max(lb);
    if max == 0 {
        return 1.0;
    }
    1.0 - levenshtein(a, b) as f64 / max as f64
}

/// True when the prediction clears the threshold against at least one
/// accepted diagnosis. Inputs must already be normalized.
///
/// Panics on an empty truth list; the corpus invariant guarantees at least
/// one accepted diagnosis per pair.
pub fn is_match(prediction: &str, truths: &[String], threshold: f64) -> bool {
    assert!(
        !truths.is_empty(),
        "is_match called with an empty ground-truth list"
    );
    truths
        .iter()
        .any(|t| similarity(prediction, t) >= threshold)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_one() {
        assert_eq!(similarity("hypertension", "hypertension"), 1.0);
        assert_eq!(similarity("", ""), 1.0);
    }

    #[test]
    fn hypertension_vs_hypertensive() {
        // Wagner-Fischer oracle: distance 2 over max length 12.
        assert_eq!(levenshtein("hypertension", "hypertensive"), 2);
        let s = similarity("hypertension", "hypertensive");
        assert!((s - 10.0 / 12.0).abs() < 1e-12, "got {s}");
    }

    #[test]
    fn dissimilar_strings_fall_below_threshold() {
        // Oracle: distance 10 over max 12 -> 0.1667
        assert!(similarity("hypertension", "anemia") < 0.60);
        // Oracle: distance 10 over max 18 -> 0.4444
        assert!(similarity("hypertension", "gastric distension") < 0.60);
    }

    #[test]
    fn empty_vs_nonempty() {
        assert_eq!(levenshtein("", "abc"), 3);
        assert_eq!(similarity("", "abc"), 0.0);
    }

    #[test]
    fn match_against_any_truth() {
        let truths = vec!["congestive heart failure".to_string()];
        assert!(is_match("congestive heart failure", &truths, 0.60));
        assert!(!is_match("hypertension", &["gastric distension".to_string()], 0.60));
        // Threshold zero accepts anything.
        assert!(is_match("xyz", &truths, 0.0));
    }

    #[test]
    #[should_panic(expected = "empty ground-truth list")]
    fn empty_truths_is_a_contract_violation() {
        is_match("x", &[], 0.6);
    }

    #[test]
    fn multibyte_chars_count_as_single_edits() {
        assert_eq!(levenshtein("ác", "áóc"), 1);
    }
}

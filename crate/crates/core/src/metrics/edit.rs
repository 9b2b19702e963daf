//! Levenshtein distance over arbitrary symbol sequences.

/// Unit-cost edit distance between two sequences, two-row DP.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Distance divided by the longer length; 0 for two empty sequences.
pub fn normalized_levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        0.0
    } else {
        levenshtein(a, b) as f64 / longest as f64
    }
}

/// Edit distance over Unicode scalar values.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    levenshtein(&a, &b)
}

pub fn normalized_edit_distance(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    normalized_levenshtein(&a, &b)
}

/// Seal recognition score: normalized edit distance, lower is better.
pub fn seal_ned(pred: &str, gt: &str) -> f64 {
    normalized_edit_distance(pred, gt)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(edit_distance("abc", "abc"), 0);
        assert_eq!(normalized_edit_distance("abc", "abc"), 0.0);
        assert_eq!(edit_distance("kitten", "sitting"), 3);
        assert_eq!(normalized_edit_distance("kitten", "sitting"), 3.0 / 7.0);
        assert_eq!(edit_distance("", "abc"), 3);
        assert_eq!(normalized_edit_distance("", "abc"), 1.0);
        assert_eq!(normalized_edit_distance("", ""), 0.0);
    }

    #[test]
    fn seal_examples() {
        assert_eq!(seal_ned("合同专用章", "合同专用章"), 0.0);
        assert_eq!(seal_ned("北京印章", "北京印张"), 0.25);
        assert_eq!(seal_ned("", "印"), 1.0);
    }

    #[test]
    fn counts_scalars_not_bytes() {
        assert_eq!(edit_distance("é", "e"), 1);
        assert_eq!(edit_distance("日本", "日本語"), 1);
    }
}

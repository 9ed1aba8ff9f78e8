//! Ratcliff/Obershelp similarity over characters.
//!
//! Behaves like a `SequenceMatcher` with no junk predicate and the popularity
//! heuristic turned off. The ratio is order-sensitive, so batch diversity uses
//! [`symmetric_ratio`], the mean of both orders.

use std::ops::Range;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchBlock {
    pub a_start: usize,
    pub b_start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimilarityRatio(f64);

impl SimilarityRatio {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Longest block of contiguous elements shared by `a[a_range]` and `b[b_range]`.
///
/// Among blocks of equal length the one starting earliest in `a` wins, then
/// the one starting earliest in `b`. With no common element the returned block
/// has length 0 and starts at the range starts.
pub fn longest_matching_block<T: PartialEq>(
    a: &[T],
    b: &[T],
    a_range: Range<usize>,
    b_range: Range<usize>,
) -> MatchBlock {
    let mut best = MatchBlock {
        a_start: a_range.start,
        b_start: b_range.start,
        len: 0,
    };
    if a_range.is_empty() || b_range.is_empty() {
        return best;
    }
    let width = b_range.len();
    // run[j + 1] = length of the common run ending at a[i], b[b_range.start + j]
    let mut prev = vec![0usize; width + 1];
    let mut curr = vec![0usize; width + 1];
    for i in a_range {
        for (j, bj) in b[b_range.clone()].iter().enumerate() {
            curr[j + 1] = if a[i] == *bj {
                let k = prev[j] + 1;
                if k > best.len {
                    best = MatchBlock {
                        a_start: i + 1 - k,
                        b_start: b_range.start + j + 1 - k,
                        len: k,
                    };
                }
                k
            } else {
                0
            };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    best
}

/// Total matched elements of the recursive longest-block decomposition.
pub fn matched_elements<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut total = 0;
    let mut pending = vec![(0..a.len(), 0..b.len())];
    while let Some((ar, br)) = pending.pop() {
        let block = longest_matching_block(a, b, ar.clone(), br.clone());
        if block.len == 0 {
            continue;
        }
        total += block.len;
        let (a_end, b_end) = (block.a_start + block.len, block.b_start + block.len);
        if ar.start < block.a_start && br.start < block.b_start {
            pending.push((ar.start..block.a_start, br.start..block.b_start));
        }
        if a_end < ar.end && b_end < br.end {
            pending.push((a_end..ar.end, b_end..br.end));
        }
    }
    total
}

/// `2·M / (|a| + |b|)` over characters; 1.0 when both strings are empty.
pub fn ratio(a: &str, b: &str) -> SimilarityRatio {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let total = a.len() + b.len();
    if total == 0 {
        return SimilarityRatio(1.0);
    }
    SimilarityRatio(2.0 * matched_elements(&a, &b) as f64 / total as f64)
}

/// Mean of `ratio(a, b)` and `ratio(b, a)`.
pub fn symmetric_ratio(a: &str, b: &str) -> f64 {
    (ratio(a, b).value() + ratio(b, a).value()) / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Enumerates every (i, j, len) and keeps the lexicographically first longest.
    fn brute_block(a: &[char], b: &[char]) -> MatchBlock {
        let mut best = MatchBlock {
            a_start: 0,
            b_start: 0,
            len: 0,
        };
        for i in 0..a.len() {
            for j in 0..b.len() {
                let mut k = 0;
                while i + k < a.len() && j + k < b.len() && a[i + k] == b[j + k] {
                    k += 1;
                }
                if k > best.len {
                    best = MatchBlock {
                        a_start: i,
                        b_start: j,
                        len: k,
                    };
                }
            }
        }
        best
    }

    fn chars(s: &str) -> Vec<char> {
        s.chars().collect()
    }

    #[test]
    fn block_examples() {
        let (a, b) = (chars("abcd"), chars("bcde"));
        assert_eq!(
            brute_block(&a, &b),
            MatchBlock {
                a_start: 1,
                b_start: 0,
                len: 3
            }
        );
        assert_eq!(
            longest_matching_block(&a, &b, 0..4, 0..4),
            MatchBlock {
                a_start: 1,
                b_start: 0,
                len: 3
            }
        );
        let (x, y) = (chars("xx"), chars("yy"));
        assert_eq!(longest_matching_block(&x, &y, 0..2, 0..2).len, 0);
        let q = chars("q");
        assert_eq!(
            longest_matching_block(&q, &q, 0..1, 0..1),
            MatchBlock {
                a_start: 0,
                b_start: 0,
                len: 1
            }
        );
    }

    #[test]
    fn block_respects_ranges() {
        let (a, b) = (chars("abcabc"), chars("xxabc"));
        let block = longest_matching_block(&a, &b, 1..6, 0..5);
        assert_eq!(
            block,
            MatchBlock {
                a_start: 3,
                b_start: 2,
                len: 3
            }
        );
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(ratio("abcd", "bcde").value(), 0.75);
        assert_eq!(ratio("ab", "cd").value(), 0.0);
        assert_eq!(ratio("", "").value(), 1.0);
        assert_eq!(ratio("", "abc").value(), 0.0);
        assert_eq!(ratio("hello there", "hello there").value(), 1.0);
    }

    #[test]
    fn ratio_is_order_sensitive() {
        // blocks chosen from `a` differ depending on which side is `a`
        let (a, b) = ("tide", "diet");
        assert_ne!(ratio(a, b), ratio(b, a));
        assert_eq!(symmetric_ratio(a, b), symmetric_ratio(b, a));
    }

    proptest! {
        #[test]
        fn block_matches_brute_force(a in "[abc]{0,10}", b in "[abc]{0,10}") {
            let (a, b) = (chars(&a), chars(&b));
            let fast = longest_matching_block(&a, &b, 0..a.len(), 0..b.len());
            let slow = brute_block(&a, &b);
            prop_assert_eq!(fast.len, slow.len);
            if slow.len > 0 {
                prop_assert_eq!(fast, slow);
            }
        }

        #[test]
        fn ratio_bounded(a in "\\PC{0,20}", b in "\\PC{0,20}") {
            let r = ratio(&a, &b).value();
            prop_assert!((0.0..=1.0).contains(&r));
            prop_assert_eq!(ratio(&a, &a).value(), 1.0);
            let s = symmetric_ratio(&a, &b);
            prop_assert_eq!(s, symmetric_ratio(&b, &a));
        }
    }
}

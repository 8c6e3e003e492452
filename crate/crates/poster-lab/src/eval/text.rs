//! Text-accuracy metrics: normalized edit-distance similarity, line
//! alignment, and sentence accuracy.

use super::OcrLine;
use crate::layout::Layout;

/// Levenshtein distance with unit-cost insert/delete/substitute.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Normalized edit-distance similarity: 1 - lev / max(len). 1 is a perfect
/// match; two empty strings compare as a perfect match.
pub fn ned(pred: &str, gt: &str) -> f64 {
    let denom = pred.chars().count().max(gt.chars().count());
    if denom == 0 {
        return 1.0;
    }
    1.0 - levenshtein(pred, gt) as f64 / denom as f64
}

/// Greedy IoU matching of predicted lines against ground truth. Each side
/// matches at most once and only with positive IoU. The result has one entry
/// per ground-truth line: `(Some(pred_idx), gt_idx)` or `(None, gt_idx)`.
pub fn align_lines(pred: &[OcrLine], gt: &Layout) -> Vec<(Option<usize>, usize)> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (pi, p) in pred.iter().enumerate() {
        for (gi, g) in gt.lines.iter().enumerate() {
            let iou = p.box_.iou(&g.box_);
            if iou > 0.0 {
                pairs.push((iou, pi, gi));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut pred_used = vec![false; pred.len()];
    let mut gt_match: Vec<Option<usize>> = vec![None; gt.lines.len()];
    for (_, pi, gi) in pairs {
        if !pred_used[pi] && gt_match[gi].is_none() {
            pred_used[pi] = true;
            gt_match[gi] = Some(pi);
        }
    }
    gt_match.into_iter().enumerate().map(|(gi, m)| (m, gi)).collect()
}

/// Fraction of ground-truth lines whose matched prediction is byte-identical.
pub fn sentence_acc(pred: &[OcrLine], gt: &Layout, alignment: &[(Option<usize>, usize)]) -> f64 {
    if gt.lines.is_empty() {
        return 1.0;
    }
    let exact = alignment
        .iter()
        .filter(|(p, g)| p.is_some_and(|pi| pred[pi].text == gt.lines[*g].content))
        .count();
    exact as f64 / gt.lines.len() as f64
}

/// Mean per-line NED over ground-truth lines; unmatched lines score 0.
pub fn mean_ned(pred: &[OcrLine], gt: &Layout, alignment: &[(Option<usize>, usize)]) -> f64 {
    if gt.lines.is_empty() {
        return 1.0;
    }
    let total: f64 = alignment
        .iter()
        .map(|(p, g)| match p {
            Some(pi) => ned(&pred[*pi].text, &gt.lines[*g].content),
            None => 0.0,
        })
        .sum();
    total / gt.lines.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{BBox, Orientation, TextLine};

    /// Brute-force edit distance enumerating all edit scripts recursively.
    /// Independent of the DP implementation above.
    pub fn brute_force_edit_distance(a: &[char], b: &[char]) -> usize {
        match (a.split_first(), b.split_first()) {
            (None, _) => b.len(),
            (_, None) => a.len(),
            (Some((ca, ra)), Some((cb, rb))) => {
                let del = brute_force_edit_distance(ra, b) + 1;
                let ins = brute_force_edit_distance(a, rb) + 1;
                let sub = brute_force_edit_distance(ra, rb) + usize::from(ca != cb);
                del.min(ins).min(sub)
            }
        }
    }

    #[test]
    fn ned_basic_values() {
        assert_eq!(ned("ABC", "ABC"), 1.0);
        assert_eq!(ned("", "ABC"), 0.0);
        assert!((ned("ABD", "ABC") - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn ned_matches_brute_force_on_short_strings() {
        let alphabet = ['A', 'B', 'C'];
        let mut strings: Vec<Vec<char>> = vec![vec![]];
        for _ in 0..4 {
            let mut next = Vec::new();
            for s in &strings {
                for &c in &alphabet {
                    let mut t = s.clone();
                    t.push(c);
                    next.push(t);
                }
            }
            strings.extend(next.iter().cloned().filter(|s| s.len() <= 4));
            strings = strings.into_iter().collect();
        }
        strings.sort();
        strings.dedup();
        for a in &strings {
            for b in &strings {
                let sa: String = a.iter().collect();
                let sb: String = b.iter().collect();
                assert_eq!(
                    levenshtein(&sa, &sb),
                    brute_force_edit_distance(a, b),
                    "{sa:?} vs {sb:?}"
                );
            }
        }
    }

    #[test]
    fn ned_is_symmetric_for_nonempty() {
        for (a, b) in [("AB", "BA"), ("ABC", "C"), ("AAA", "AB")] {
            assert_eq!(ned(a, b), ned(b, a));
        }
    }

    fn gt_layout(boxes: &[(f64, f64, f64, f64, &str)]) -> Layout {
        Layout {
            lines: boxes
                .iter()
                .map(|&(x_l, y_t, x_r, y_b, content)| TextLine {
                    content: content.to_string(),
                    box_: BBox { x_l, y_t, x_r, y_b },
                    orientation: Orientation::Horizontal,
                })
                .collect(),
            canvas: (48, 48),
        }
    }

    fn pred_line(x_l: f64, y_t: f64, x_r: f64, y_b: f64, text: &str) -> OcrLine {
        OcrLine { text: text.to_string(), box_: BBox { x_l, y_t, x_r, y_b }, score: 1.0 }
    }

    #[test]
    fn identical_boxes_align_by_identity() {
        let gt = gt_layout(&[(0.1, 0.1, 0.4, 0.2, "AA"), (0.1, 0.5, 0.4, 0.6, "BB")]);
        let pred = vec![
            pred_line(0.1, 0.1, 0.4, 0.2, "AA"),
            pred_line(0.1, 0.5, 0.4, 0.6, "BB"),
        ];
        let al = align_lines(&pred, &gt);
        assert_eq!(al, vec![(Some(0), 0), (Some(1), 1)]);
        assert_eq!(sentence_acc(&pred, &gt, &al), 1.0);
        assert_eq!(mean_ned(&pred, &gt, &al), 1.0);
    }

    #[test]
    fn no_predictions_leaves_gt_unmatched() {
        let gt = gt_layout(&[(0.1, 0.1, 0.4, 0.2, "AA")]);
        let al = align_lines(&[], &gt);
        assert_eq!(al, vec![(None, 0)]);
        assert_eq!(sentence_acc(&[], &gt, &al), 0.0);
        assert_eq!(mean_ned(&[], &gt, &al), 0.0);
    }

    #[test]
    fn alignment_follows_iou_not_list_order() {
        let gt = gt_layout(&[(0.1, 0.1, 0.4, 0.2, "AA"), (0.6, 0.6, 0.9, 0.7, "BB")]);
        // Predictions listed in the opposite spatial order.
        let pred = vec![
            pred_line(0.6, 0.6, 0.9, 0.7, "BB"),
            pred_line(0.1, 0.1, 0.4, 0.2, "AA"),
        ];
        let al = align_lines(&pred, &gt);
        assert_eq!(al, vec![(Some(1), 0), (Some(0), 1)]);
        assert_eq!(sentence_acc(&pred, &gt, &al), 1.0);
    }

    #[test]
    fn partial_sentence_acc_counts_exact_lines() {
        let gt = gt_layout(&[
            (0.1, 0.1, 0.4, 0.2, "AA"),
            (0.1, 0.4, 0.4, 0.5, "BB"),
            (0.1, 0.7, 0.4, 0.8, "CC"),
        ]);
        let pred = vec![
            pred_line(0.1, 0.1, 0.4, 0.2, "AA"),
            pred_line(0.1, 0.4, 0.4, 0.5, "BX"),
            pred_line(0.1, 0.7, 0.4, 0.8, "CC"),
        ];
        let al = align_lines(&pred, &gt);
        assert!((sentence_acc(&pred, &gt, &al) - 2.0 / 3.0).abs() < 1e-12);
    }
}

//! Ordered tree edit distance (Zhang–Shasha) and table similarity built on it.

use crate::metrics::edit::normalized_edit_distance;
use crate::table::{NodeLabel, TableNode, TableTree};

/// Trees larger than this are scored with the row-signature approximation.
pub const EXACT_NODE_LIMIT: usize = 5000;

struct PostOrder<'a, T> {
    nodes: Vec<&'a T>,
    leftmost: Vec<usize>,
    keyroots: Vec<usize>,
}

impl<'a, T> PostOrder<'a, T> {
    fn new(root: &'a T, children: &impl Fn(&'a T) -> &'a [T]) -> Self {
        let mut nodes = Vec::new();
        let mut leftmost = Vec::new();
        // iterative post-order: (node, next child index, leftmost leaf so far)
        let mut stack: Vec<(&'a T, usize, usize)> = vec![(root, 0, usize::MAX)];
        while let Some(top) = stack.last_mut() {
            let kids = children(top.0);
            if top.1 < kids.len() {
                let child = &kids[top.1];
                top.1 += 1;
                stack.push((child, 0, usize::MAX));
            } else {
                let (node, _, lm) = stack.pop().expect("non-empty");
                let idx = nodes.len();
                let lm = if lm == usize::MAX { idx } else { lm };
                nodes.push(node);
                leftmost.push(lm);
                if let Some(parent) = stack.last_mut() {
                    if parent.2 == usize::MAX {
                        parent.2 = lm;
                    }
                }
            }
        }
        // keyroot: highest node for each distinct leftmost leaf
        let mut seen = vec![false; nodes.len()];
        let mut keyroots = Vec::new();
        for i in (0..nodes.len()).rev() {
            if !seen[leftmost[i]] {
                seen[leftmost[i]] = true;
                keyroots.push(i);
            }
        }
        keyroots.reverse();
        Self {
            nodes,
            leftmost,
            keyroots,
        }
    }
}

/// Ordered tree edit distance with unit insert/delete cost and the given
/// rename cost.
pub fn tree_edit_distance<'a, T>(
    a: &'a T,
    b: &'a T,
    children: impl Fn(&'a T) -> &'a [T],
    rename: impl Fn(&T, &T) -> f64,
) -> f64 {
    let ta = PostOrder::new(a, &children);
    let tb = PostOrder::new(b, &children);
    let (na, nb) = (ta.nodes.len(), tb.nodes.len());
    let mut td = vec![0.0f64; na * nb];
    let mut fd = vec![0.0f64; (na + 1) * (nb + 1)];

    for &i in &ta.keyroots {
        for &j in &tb.keyroots {
            let (li, lj) = (ta.leftmost[i], tb.leftmost[j]);
            let rows = i - li + 2;
            let cols = j - lj + 2;
            let at = |r: usize, c: usize| r * cols + c;
            fd[at(0, 0)] = 0.0;
            for r in 1..rows {
                fd[at(r, 0)] = fd[at(r - 1, 0)] + 1.0;
            }
            for c in 1..cols {
                fd[at(0, c)] = fd[at(0, c - 1)] + 1.0;
            }
            for r in 1..rows {
                let x = li + r - 1;
                for c in 1..cols {
                    let y = lj + c - 1;
                    let del = fd[at(r - 1, c)] + 1.0;
                    let ins = fd[at(r, c - 1)] + 1.0;
                    if ta.leftmost[x] == li && tb.leftmost[y] == lj {
                        let ren = fd[at(r - 1, c - 1)] + rename(ta.nodes[x], tb.nodes[y]);
                        let v = del.min(ins).min(ren);
                        fd[at(r, c)] = v;
                        td[x * nb + y] = v;
                    } else {
                        let pr = ta.leftmost[x] - li;
                        let pc = tb.leftmost[y] - lj;
                        let sub = fd[at(pr, pc)] + td[x * nb + y];
                        fd[at(r, c)] = del.min(ins).min(sub);
                    }
                }
            }
        }
    }
    td[(na - 1) * nb + (nb - 1)]
}

/// Rename cost between table nodes.
pub fn table_rename_cost(a: &TableNode, b: &TableNode, structure_only: bool) -> f64 {
    if a.label != b.label {
        return 1.0;
    }
    if !a.label.is_cell() {
        return 0.0;
    }
    if a.colspan != b.colspan || a.rowspan != b.rowspan {
        return 1.0;
    }
    if structure_only {
        0.0
    } else {
        normalized_edit_distance(&a.text, &b.text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TedsScore {
    pub score: f64,
    /// True when the row-signature fallback was used.
    pub approximate: bool,
}

/// Table similarity: `1 - TED / max(|pred|, |gt|)`.
pub fn teds(pred: &TableTree, gt: &TableTree, structure_only: bool) -> TedsScore {
    let (np, ng) = (pred.node_count(), gt.node_count());
    let largest = np.max(ng);
    if largest > EXACT_NODE_LIMIT {
        let dist = approximate_distance(pred, gt, structure_only);
        return TedsScore {
            score: (1.0 - dist / largest as f64).clamp(0.0, 1.0),
            approximate: true,
        };
    }
    let dist = tree_edit_distance(
        &pred.root,
        &gt.root,
        |n: &TableNode| n.children.as_slice(),
        |a, b| table_rename_cost(a, b, structure_only),
    );
    TedsScore {
        score: (1.0 - dist / largest as f64).clamp(0.0, 1.0),
        approximate: false,
    }
}

/// Row-level alignment: rows with identical signatures align for free,
/// everything else is deleted and reinserted. An upper bound on the exact
/// distance.
fn approximate_distance(pred: &TableTree, gt: &TableTree, structure_only: bool) -> f64 {
    let sig = |row: &TableNode| -> (u64, usize) {
        use std::collections::hash_map::DefaultHasher;
        use std::hash::{Hash, Hasher};
        let mut h = DefaultHasher::new();
        for c in &row.children {
            c.label.as_str().hash(&mut h);
            (c.colspan, c.rowspan).hash(&mut h);
            if !structure_only {
                c.text.hash(&mut h);
            }
        }
        (h.finish(), row.size())
    };
    let rp: Vec<(u64, usize)> = pred.rows().into_iter().map(sig).collect();
    let rg: Vec<(u64, usize)> = gt.rows().into_iter().map(sig).collect();
    let mut prev: Vec<f64> = std::iter::once(0.0)
        .chain(rg.iter().scan(0.0, |acc, r| {
            *acc += r.1 as f64;
            Some(*acc)
        }))
        .collect();
    for a in &rp {
        let mut cur = vec![prev[0] + a.1 as f64; rg.len() + 1];
        for (j, b) in rg.iter().enumerate() {
            let keep = if a.0 == b.0 { prev[j] } else { f64::INFINITY };
            cur[j + 1] = keep
                .min(prev[j + 1] + a.1 as f64)
                .min(cur[j] + b.1 as f64);
        }
        prev = cur;
    }
    let rows_p: usize = rp.iter().map(|r| r.1).sum();
    let rows_g: usize = rg.iter().map(|r| r.1).sum();
    let other_p = pred.node_count() - rows_p;
    let other_g = gt.node_count() - rows_g;
    prev[rg.len()] + other_p.abs_diff(other_g) as f64
}

/// Counts nodes of each structural label; handy for reports.
pub fn label_histogram(tree: &TableTree) -> [usize; 6] {
    fn walk(n: &TableNode, acc: &mut [usize; 6]) {
        let slot = match n.label {
            NodeLabel::Table => 0,
            NodeLabel::Thead => 1,
            NodeLabel::Tbody => 2,
            NodeLabel::Tr => 3,
            NodeLabel::Td => 4,
            NodeLabel::Th => 5,
        };
        acc[slot] += 1;
        n.children.iter().for_each(|c| walk(c, acc));
    }
    let mut acc = [0; 6];
    walk(&tree.root, &mut acc);
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn td(t: &str) -> TableNode {
        TableNode::cell(NodeLabel::Td, t)
    }

    fn table(rows: Vec<Vec<TableNode>>) -> TableTree {
        TableTree::new(
            TableNode::new(NodeLabel::Table).with_children(
                rows.into_iter()
                    .map(|r| TableNode::new(NodeLabel::Tr).with_children(r))
                    .collect(),
            ),
        )
    }

    #[test]
    fn identical_is_one() {
        let t = table(vec![vec![td("a"), td("b")], vec![td("c"), td("d")]]);
        assert_eq!(teds(&t, &t, false).score, 1.0);
        assert_eq!(teds(&t, &t, true).score, 1.0);
    }

    #[test]
    fn extra_cell() {
        let a = table(vec![vec![td("a")]]);
        let b = table(vec![vec![td("a"), td("b")]]);
        assert!((teds(&a, &b, false).score - 0.75).abs() < 1e-12);
        assert!((teds(&b, &a, false).score - 0.75).abs() < 1e-12);
    }

    #[test]
    fn content_versus_structure() {
        let a = table(vec![vec![td("abc"), td("x"), td("y")]]);
        let b = table(vec![vec![td("abd"), td("x"), td("y")]]);
        assert_eq!(teds(&a, &b, true).score, 1.0);
        let s = teds(&a, &b, false).score;
        assert!((s - (1.0 - (1.0 / 3.0) / 5.0)).abs() < 1e-12, "{s}");
        assert!((s - 0.9333).abs() < 1e-4);
    }

    #[test]
    fn span_and_label_mismatch_cost_one() {
        let a = td("x").with_spans(2, 1);
        assert_eq!(table_rename_cost(&a, &td("x"), true), 1.0);
        assert_eq!(table_rename_cost(&TableNode::cell(NodeLabel::Th, "x"), &td("x"), false), 1.0);
        assert_eq!(
            table_rename_cost(&TableNode::new(NodeLabel::Tr), &TableNode::new(NodeLabel::Tr), false),
            0.0
        );
    }

    #[test]
    fn approximation_flagged_for_huge_tables() {
        let rows: Vec<Vec<TableNode>> = (0..1300).map(|i| vec![td(&i.to_string()), td("v"), td("w")]).collect();
        let big = table(rows.clone());
        assert!(big.node_count() > EXACT_NODE_LIMIT);
        let r = teds(&big, &big, false);
        assert!(r.approximate);
        assert_eq!(r.score, 1.0);
        let mut fewer = rows;
        fewer.pop();
        let r = teds(&table(fewer), &big, true);
        assert!(r.approximate);
        assert!((r.score - (1.0 - 4.0 / big.node_count() as f64)).abs() < 1e-12);
    }

    #[test]
    fn histogram() {
        let t = table(vec![vec![td("a"), td("b")]]);
        assert_eq!(label_histogram(&t), [1, 0, 0, 1, 2, 0]);
    }
}

//! Reference implementations written from the textbook definitions, kept
//! deliberately naive so they share no code paths with the library.
#![allow(dead_code)]

use std::collections::HashMap;

use docparse_core::table::{NodeLabel, TableNode};

/// Levenshtein distance by plain recursion over the last symbols.
pub fn edit_recursive<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    match (a.split_last(), b.split_last()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) => {
            let sub = edit_recursive(ra, rb) + usize::from(x != y);
            let del = edit_recursive(ra, b) + 1;
            let ins = edit_recursive(a, rb) + 1;
            sub.min(del).min(ins)
        }
    }
}

/// Same recursion as [`edit_recursive`] with each (prefix, prefix) pair
/// evaluated once.
pub fn edit_memo<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    fn go<T: PartialEq>(a: &[T], b: &[T], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == 0 {
            return j;
        }
        if j == 0 {
            return i;
        }
        if let Some(&d) = memo.get(&(i, j)) {
            return d;
        }
        let sub = go(a, b, i - 1, j - 1, memo) + usize::from(a[i - 1] != b[j - 1]);
        let del = go(a, b, i - 1, j, memo) + 1;
        let ins = go(a, b, i, j - 1, memo) + 1;
        let d = sub.min(del).min(ins);
        memo.insert((i, j), d);
        d
    }
    go(a, b, a.len(), b.len(), &mut HashMap::new())
}

pub fn ned_recursive(a: &str, b: &str) -> f64 {
    let (a, b): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
    let m = a.len().max(b.len());
    if m == 0 {
        0.0
    } else {
        edit_recursive(&a, &b) as f64 / m as f64
    }
}

/// Every string of length `0..=max_len` over `alphabet`.
pub fn all_strings(alphabet: &[char], max_len: usize) -> Vec<String> {
    let mut out = vec![String::new()];
    let mut frontier = vec![String::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for &c in alphabet {
                let mut t = s.clone();
                t.push(c);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Plain ordered tree used by the oracle.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Shape(pub Vec<Shape>);

impl Shape {
    pub fn size(&self) -> usize {
        1 + self.0.iter().map(Shape::size).sum::<usize>()
    }
}

/// All ordered tree shapes with exactly `n` nodes.
pub fn shapes(n: usize) -> Vec<Shape> {
    forests(n - 1).into_iter().map(Shape).collect()
}

/// All ordered forests with exactly `n` nodes.
fn forests(n: usize) -> Vec<Vec<Shape>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    // first tree takes k nodes, the rest of the forest n - k
    for k in 1..=n {
        for first in shapes(k) {
            for rest in forests(n - k) {
                let mut f = vec![first.clone()];
                f.extend(rest);
                out.push(f);
            }
        }
    }
    out
}

/// Shapes with 1..=max nodes. For max = 6 this is 1+1+2+5+14+42 = 65.
pub fn shape_family(max: usize) -> Vec<Shape> {
    (1..=max).flat_map(shapes).collect()
}

/// Three labelings of a shape into table nodes.
pub fn label_shape(shape: &Shape, scheme: usize) -> TableNode {
    fn go(s: &Shape, scheme: usize, depth: usize, counter: &mut usize) -> TableNode {
        let i = *counter;
        *counter += 1;
        let mut node = match scheme {
            0 => TableNode::cell(NodeLabel::Td, "a"),
            1 => match depth {
                0 => TableNode::new(NodeLabel::Table),
                1 => TableNode::new(NodeLabel::Tr),
                _ => TableNode::cell(NodeLabel::Td, "a"),
            },
            _ => {
                let label = if i % 4 == 3 { NodeLabel::Th } else { NodeLabel::Td };
                TableNode::cell(label, ["a", "ab", "b"][i % 3])
            }
        };
        node.children = s.0.iter().map(|c| go(c, scheme, depth + 1, counter)).collect();
        node
    }
    go(shape, scheme, 0, &mut 0)
}

fn oracle_rename(a: &TableNode, b: &TableNode, structure_only: bool) -> f64 {
    let cell = |n: &TableNode| matches!(n.label, NodeLabel::Td | NodeLabel::Th);
    if a.label != b.label {
        1.0
    } else if !cell(a) {
        0.0
    } else if (a.colspan, a.rowspan) != (b.colspan, b.rowspan) {
        1.0
    } else if structure_only {
        0.0
    } else {
        ned_recursive(&a.text, &b.text)
    }
}

fn forest_size(f: &[TableNode]) -> usize {
    f.iter().map(|t| 1 + forest_size(&t.children)).sum()
}

/// Removes the rightmost root, promoting its children.
fn drop_root(f: &[TableNode]) -> Vec<TableNode> {
    let (last, rest) = f.split_last().expect("non-empty");
    let mut out = rest.to_vec();
    out.extend(last.children.iter().cloned());
    out
}

fn key(f: &[TableNode]) -> String {
    fn enc(n: &TableNode, s: &mut String) {
        s.push_str(n.label.as_str());
        s.push(':');
        s.push_str(&n.text);
        s.push('(');
        n.children.iter().for_each(|c| enc(c, s));
        s.push(')');
    }
    let mut s = String::new();
    f.iter().for_each(|n| enc(n, &mut s));
    s
}

/// Forest edit distance from the recursive definition: delete the
/// rightmost root of either forest, or match the two rightmost trees.
#[derive(Default)]
pub struct ForestOracle {
    memo: HashMap<(String, String, bool), f64>,
}

impl ForestOracle {
    pub fn distance(&mut self, f: &[TableNode], g: &[TableNode], structure_only: bool) -> f64 {
        if f.is_empty() {
            return forest_size(g) as f64;
        }
        if g.is_empty() {
            return forest_size(f) as f64;
        }
        let k = (key(f), key(g), structure_only);
        if let Some(&d) = self.memo.get(&k) {
            return d;
        }
        let (v, fr) = f.split_last().expect("non-empty");
        let (w, gr) = g.split_last().expect("non-empty");
        let del = self.distance(&drop_root(f), g, structure_only) + 1.0;
        let ins = self.distance(f, &drop_root(g), structure_only) + 1.0;
        let matched = self.distance(fr, gr, structure_only)
            + self.distance(&v.children, &w.children, structure_only)
            + oracle_rename(v, w, structure_only);
        let d = del.min(ins).min(matched);
        self.memo.insert(k, d);
        d
    }

    /// Similarity clamped to [0, 1]; the raw ratio goes negative when the
    /// distance exceeds the larger tree, e.g. for mismatched roots.
    pub fn teds(&mut self, a: &TableNode, b: &TableNode, structure_only: bool) -> f64 {
        let d = self.distance(std::slice::from_ref(a), std::slice::from_ref(b), structure_only);
        let n = forest_size(std::slice::from_ref(a)).max(forest_size(std::slice::from_ref(b)));
        (1.0 - d / n as f64).clamp(0.0, 1.0)
    }
}

/// Direct evaluation of the allocation formula for one cluster.
pub fn allocation_oracle(scores: &[f64], sizes: &[usize], budget: usize, alpha: f64, beta: f64) -> Vec<usize> {
    let denom: f64 = scores.iter().map(|s| (s + alpha).powf(beta)).sum();
    scores
        .iter()
        .zip(sizes)
        .map(|(s, &c)| {
            let share = (s + alpha).powf(beta) / denom * budget as f64;
            (share.floor() as usize).min(c)
        })
        .collect()
}

/// Every permutation of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out.sort();
    out
}

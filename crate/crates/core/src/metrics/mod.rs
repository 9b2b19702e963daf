//! Evaluation metrics: edit distances, table similarity, reading order,
//! spotting accuracy, seal NED and the weighted overall score.

pub mod edit;
pub mod eval;
pub mod geometry;
pub mod ted;

use serde::{Deserialize, Serialize};

use crate::model::{Category, PageDocument, Polygon};
use crate::spotting::PixelInstance;

pub use eval::{evaluate_documents, evaluate_page, evaluate_spotting, EvalOptions, EvaluationReport, MetricReport, PageReport};
pub use edit::{edit_distance, levenshtein, normalized_edit_distance, normalized_levenshtein, seal_ned};
pub use geometry::{greedy_match, polygon_iou, GeometryError};
pub use ted::{teds, tree_edit_distance, TedsScore};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;
pub const WEIGHT_TOLERANCE: f64 = 1e-9;
/// Label carried by the formula score in every report.
pub const FORMULA_METRIC_LABEL: &str = "formula_proxy (non-CDM)";

/// Categories left out of reading-order (and text) scoring by default.
pub const DEFAULT_ORDER_EXCLUDED: [Category; 5] = [
    Category::Header,
    Category::Footer,
    Category::HeaderImage,
    Category::FooterImage,
    Category::VisionFootnote,
];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("weights must sum to 1 (got {0})")]
    WeightSum(f64),
    #[error("weights must be non-negative and finite")]
    WeightValue,
    #[error("expected 3 weights (text, formula, table), got {0}")]
    WeightCount(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverallWeights {
    pub text: f64,
    pub formula: f64,
    pub table: f64,
}

impl Default for OverallWeights {
    fn default() -> Self {
        Self {
            text: 1.0 / 3.0,
            formula: 1.0 / 3.0,
            table: 1.0 / 3.0,
        }
    }
}

impl OverallWeights {
    pub fn new(text: f64, formula: f64, table: f64) -> Result<Self, MetricError> {
        let w = Self { text, formula, table };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), MetricError> {
        let parts = [self.text, self.formula, self.table];
        if parts.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(MetricError::WeightValue);
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_TOLERANCE {
            return Err(MetricError::WeightSum(sum));
        }
        Ok(())
    }

    /// Parses `w1,w2,w3`.
    pub fn parse_list(s: &str) -> Result<Self, MetricError> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|_| MetricError::WeightValue))
            .collect::<Result<_, _>>()?;
        match parts[..] {
            [t, f, tb] => Self::new(t, f, tb),
            _ => Err(MetricError::WeightCount(parts.len())),
        }
    }
}

/// `100 * (w_text * (1 - text_edit) + w_formula * formula + w_table * table)`.
pub fn overall(text_edit: f64, formula_proxy: f64, table_teds: f64, weights: &OverallWeights) -> Result<f64, MetricError> {
    weights.validate()?;
    let score = weights.text * (1.0 - text_edit) + weights.formula * formula_proxy + weights.table * table_teds;
    Ok((100.0 * score).clamp(0.0, 100.0))
}

/// Splits LaTeX into commands (`\frac`, `\,`), braces and single-character
/// atoms; whitespace separates but is not a token.
pub fn latex_tokens(src: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut chars = src.chars().peekable();
    while let Some(c) = chars.next() {
        if c.is_whitespace() {
            continue;
        }
        if c == '\\' {
            let mut tok = String::from('\\');
            match chars.peek() {
                Some(n) if n.is_ascii_alphabetic() => {
                    while let Some(&n) = chars.peek() {
                        if !n.is_ascii_alphabetic() {
                            break;
                        }
                        tok.push(n);
                        chars.next();
                    }
                }
                Some(_) => tok.push(chars.next().expect("peeked")),
                None => {}
            }
            out.push(tok);
        } else {
            out.push(c.to_string());
        }
    }
    out
}

/// Token-level normalized edit similarity between two LaTeX sources. A
/// stand-in for rendering-based formula metrics; not comparable to them.
pub fn formula_proxy(pred: &str, gt: &str) -> f64 {
    1.0 - normalized_levenshtein(&latex_tokens(pred), &latex_tokens(gt))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// `(prediction index, ground-truth index, IoU)`
    pub pairs: Vec<(usize, usize, f64)>,
    pub unmatched_pred: Vec<usize>,
    pub unmatched_gt: Vec<usize>,
}

impl MatchResult {
    pub fn compute(pred: &[Polygon], gt: &[Polygon], threshold: f64) -> Self {
        let pairs = greedy_match(pred, gt, threshold);
        let mut used_p = vec![false; pred.len()];
        let mut used_g = vec![false; gt.len()];
        for &(i, j, _) in &pairs {
            used_p[i] = true;
            used_g[j] = true;
        }
        Self {
            pairs,
            unmatched_pred: (0..pred.len()).filter(|&i| !used_p[i]).collect(),
            unmatched_gt: (0..gt.len()).filter(|&j| !used_g[j]).collect(),
        }
    }
}

/// Normalized edit distance between the ground-truth reading sequence and
/// the prediction's sequence of matched elements. Elements are matched by
/// greedy polygon IoU; unmatched ground truth stays in the reference
/// sequence without a counterpart.
pub fn reading_order_edit(pred: &PageDocument, gt: &PageDocument, iou_threshold: f64, excluded: &[Category]) -> f64 {
    fn keep<'a>(p: &'a PageDocument, excluded: &[Category]) -> Vec<&'a crate::model::LayoutElement> {
        let mut v: Vec<_> = p.elements.iter().filter(|e| !excluded.contains(&e.category)).collect();
        v.sort_by_key(|e| (e.order, e.id));
        v
    }
    let gt_els = keep(gt, excluded);
    let pred_els = keep(pred, excluded);
    let gt_polys: Vec<Polygon> = gt_els.iter().map(|e| e.polygon.clone()).collect();
    let pred_polys: Vec<Polygon> = pred_els.iter().map(|e| e.polygon.clone()).collect();
    let m = greedy_match(&pred_polys, &gt_polys, iou_threshold);

    let mut gt_of_pred = vec![None; pred_els.len()];
    for &(i, j, _) in &m {
        gt_of_pred[i] = Some(j);
    }
    // both lists are already in reading order, so positions are the symbols
    let gt_seq: Vec<usize> = (0..gt_els.len()).collect();
    let pred_seq: Vec<usize> = gt_of_pred.into_iter().flatten().collect();
    normalized_levenshtein(&pred_seq, &gt_seq)
}

/// Per matched pair `1 - NED(text)`, unmatched instances score 0, divided by
/// the larger list size. Two empty lists score 1.
pub fn spotting_accuracy(pred: &[PixelInstance], gt: &[PixelInstance], iou_threshold: f64) -> (f64, MatchResult) {
    let to_poly = |i: &PixelInstance| Polygon::new(i.quad.to_vec());
    let pp: Vec<Polygon> = pred.iter().map(to_poly).collect();
    let gp: Vec<Polygon> = gt.iter().map(to_poly).collect();
    let m = MatchResult::compute(&pp, &gp, iou_threshold);
    let denom = pred.len().max(gt.len());
    if denom == 0 {
        return (1.0, m);
    }
    let total: f64 = m
        .pairs
        .iter()
        .map(|&(i, j, _)| 1.0 - normalized_edit_distance(&pred[i].text, &gt[j].text))
        .sum();
    (total / denom as f64, m)
}

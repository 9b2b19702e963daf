//! Markdown and structured output from ordered, recognized pages.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::model::{Category, ContentKind, LayoutElement, PageDocument, Warning};
use crate::table::{normalize_ws, NodeLabel, TableNode, TableTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssembleOptions {
    pub include_decorative_markdown: bool,
    pub merge_tables: bool,
}

impl Default for AssembleOptions {
    fn default() -> Self {
        Self {
            include_decorative_markdown: false,
            merge_tables: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub category: Category,
    pub kind: Option<ContentKind>,
    pub value: String,
    pub page_index: u32,
    pub element_id: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heading_level: Option<u8>,
    /// Markdown placeholder locating an image or chart on its page.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub placeholder: Option<String>,
    /// `(page, element id)` of every fragment of a merged table.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub merged_from: Option<Vec<(u32, u32)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeDecision {
    pub tail_page: u32,
    pub head_page: u32,
    pub tail_columns: usize,
    pub head_columns: usize,
    pub header_duplicated: bool,
    pub accepted: bool,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssembledDocument {
    pub markdown: String,
    pub structured: Vec<Block>,
    pub merges: Vec<MergeDecision>,
    pub warnings: Vec<Warning>,
}

impl AssembledDocument {
    /// One JSON object per merge decision, for audit logs.
    pub fn merges_jsonl(&self) -> String {
        self.merges
            .iter()
            .map(|m| serde_json::to_string(m).expect("plain data") + "\n")
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MergeError {
    #[error("malformed table fragment: {0}")]
    Malformed(String),
}

fn numbering() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(\d+(?:\.\d+)*)\.?(?:\s|$)").expect("valid regex"))
}

/// Level for a single heading, or `None` for non-heading categories.
pub fn heading_level(category: Category, text: &str) -> Option<u8> {
    match category {
        Category::DocTitle => Some(1),
        Category::ParagraphTitle => Some(match numbering().captures(text.trim_start()) {
            Some(c) => (1 + c[1].split('.').count()).min(6) as u8,
            None => 2,
        }),
        _ => None,
    }
}

pub fn heading_levels(blocks: &[(Category, &str)]) -> Vec<Option<u8>> {
    blocks.iter().map(|(c, t)| heading_level(*c, t)).collect()
}

fn header_cells(row: &TableNode) -> Vec<(String, u32, u32)> {
    row.children
        .iter()
        .filter(|c| c.label.is_cell())
        .map(|c| (normalize_ws(&c.text), c.colspan, c.rowspan))
        .collect()
}

fn take_rows(node: &TableNode, out: &mut Vec<TableNode>) {
    for child in &node.children {
        if child.label == NodeLabel::Tr {
            out.push(child.clone());
        } else if !child.label.is_cell() {
            take_rows(child, out);
        }
    }
}

/// Joins a table continued across a page break. Accepted only when both
/// fragments have the same effective column count; a head whose first row
/// repeats the tail's first row cell for cell loses that row.
pub fn merge_tables(tail: &TableTree, head: &TableTree) -> Result<(MergeDecision, Option<TableTree>), MergeError> {
    if tail.row_count() == 0 {
        return Err(MergeError::Malformed("tail has no rows".into()));
    }
    if head.row_count() == 0 {
        return Err(MergeError::Malformed("head has no rows".into()));
    }
    let (tc, hc) = (tail.column_count(), head.column_count());
    let mut decision = MergeDecision {
        tail_page: 0,
        head_page: 0,
        tail_columns: tc,
        head_columns: hc,
        header_duplicated: false,
        accepted: false,
        reason: String::new(),
    };
    if tc != hc {
        decision.reason = format!("column count mismatch {tc}≠{hc}");
        return Ok((decision, None));
    }
    let mut rows = Vec::new();
    take_rows(&head.root, &mut rows);
    let duplicated = header_cells(tail.rows()[0]) == header_cells(&rows[0]);
    if duplicated {
        rows.remove(0);
    }
    let mut merged = tail.root.clone();
    let target = match merged.children.iter().rposition(|c| c.label == NodeLabel::Tbody) {
        Some(i) => &mut merged.children[i],
        None => &mut merged,
    };
    target.children.extend(rows);
    decision.header_duplicated = duplicated;
    decision.accepted = true;
    decision.reason = if duplicated {
        "equal column counts; duplicate header dropped".into()
    } else {
        "equal column counts".into()
    };
    Ok((decision, Some(TableTree::new(merged))))
}

fn placeholder(el: &LayoutElement, page: u32) -> String {
    let pts = serde_json::to_string(&el.polygon.points).expect("plain data");
    format!("![{}](page={page};polygon={pts})", el.category)
}

struct Pending {
    block: Block,
    tree: Option<TableTree>,
}

/// Emits elements in `(page_index, order)` sequence. Input element order
/// within a page is irrelevant.
pub fn assemble(pages: &[PageDocument], opts: &AssembleOptions) -> AssembledDocument {
    let mut sorted: Vec<&PageDocument> = pages.iter().collect();
    sorted.sort_by_key(|p| p.page_index);
    let mut warnings = Vec::new();
    let mut merges = Vec::new();
    let mut out: Vec<Pending> = Vec::new();
    // index into `out` of the previous page's last body block, if a table
    let mut open_table: Option<usize> = None;

    for page in sorted {
        let p = page.page_index;
        let ordered = page.ordered();
        let first_body = ordered.iter().position(|e| !e.category.is_decorative());
        let last_body = ordered.iter().rposition(|e| !e.category.is_decorative());
        let mut carried = open_table.take();
        for (pos, el) in ordered.iter().enumerate() {
            let expected = ContentKind::expected_for(el.category);
            let (mut kind, value) = match &el.content {
                Some(c) => (Some(c.kind), c.value.clone()),
                None => (None, String::new()),
            };
            if let Some(k) = kind {
                if k != expected {
                    warnings.push(Warning {
                        page_index: Some(p),
                        message: format!(
                            "element {}: {} content on a {} element, emitted as plain text",
                            el.id,
                            k.as_str(),
                            el.category
                        ),
                    });
                    kind = Some(ContentKind::PlainText);
                }
            } else if !el.category.is_visual() {
                warnings.push(Warning {
                    page_index: Some(p),
                    message: format!("element {} ({}) has no content", el.id, el.category),
                });
            }
            let visual = el.category.is_visual().then(|| placeholder(el, p));
            let tree = match kind {
                Some(ContentKind::TableHtml) => match TableTree::parse(&value) {
                    Ok(t) => Some(t),
                    Err(e) => {
                        warnings.push(Warning {
                            page_index: Some(p),
                            message: format!("element {}: unparseable table ({e})", el.id),
                        });
                        None
                    }
                },
                _ => None,
            };

            if opts.merge_tables && Some(pos) == first_body {
                if let (Some(prev), Some(head)) = (carried.take(), tree.as_ref()) {
                    let prev_page = out[prev].block.page_index;
                    let tail = out[prev].tree.as_ref().expect("open tables carry a tree");
                    match merge_tables(tail, head) {
                        Ok((mut d, merged)) => {
                            d.tail_page = prev_page;
                            d.head_page = p;
                            if let Some(m) = merged {
                                let target = &mut out[prev];
                                target.block.value = m.to_html();
                                target.block.merged_from.get_or_insert_with(|| vec![(prev_page, target.block.element_id)]).push((p, el.id));
                                target.tree = Some(m);
                                merges.push(d);
                                if Some(pos) == last_body {
                                    open_table = Some(prev);
                                }
                                continue;
                            }
                            merges.push(d);
                        }
                        Err(e) => warnings.push(Warning {
                            page_index: Some(p),
                            message: format!("table merge skipped: {e}"),
                        }),
                    }
                }
            }

            let heading = heading_level(el.category, &value);
            out.push(Pending {
                block: Block {
                    category: el.category,
                    kind,
                    value,
                    page_index: p,
                    element_id: el.id,
                    heading_level: heading,
                    placeholder: visual,
                    merged_from: None,
                },
                tree,
            });
            if Some(pos) == last_body && out.last().is_some_and(|b| b.tree.is_some()) {
                open_table = Some(out.len() - 1);
            }
        }
        carried.take();
    }

    let structured: Vec<Block> = out.into_iter().map(|p| p.block).collect();
    let markdown = structured
        .iter()
        .filter(|b| opts.include_decorative_markdown || !b.category.is_decorative())
        .filter_map(render)
        .collect::<Vec<_>>()
        .join("\n\n");
    AssembledDocument {
        markdown,
        structured,
        merges,
        warnings,
    }
}

fn render(b: &Block) -> Option<String> {
    if let Some(ph) = &b.placeholder {
        return Some(if b.value.is_empty() {
            ph.clone()
        } else {
            format!("{ph}\n\n{}", b.value)
        });
    }
    if b.value.is_empty() {
        return None;
    }
    if let Some(level) = b.heading_level {
        return Some(format!("{} {}", "#".repeat(level as usize), b.value.trim()));
    }
    Some(match (b.category, b.kind) {
        (Category::DisplayFormula, Some(ContentKind::FormulaLatex)) => format!("$$\n{}\n$$", b.value),
        (Category::InlineFormula, Some(ContentKind::FormulaLatex)) => format!("${}$", b.value),
        _ => b.value.clone(),
    })
}

//! Table trees parsed from table HTML.
//!
//! Only the structural tags (`table`, `thead`, `tbody`, `tr`, `td`, `th`)
//! become nodes. Any other markup inside a cell contributes its text; `<br>`
//! becomes a space. Omitted `</td>`/`</tr>` end tags are closed implicitly
//! the way browsers do.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TableError {
    #[error("no <table> element found")]
    NoTable,
    #[error("unclosed <table>")]
    Unclosed,
    #[error("unexpected </{tag}> at byte {offset}")]
    UnexpectedClose { tag: String, offset: usize },
    #[error("<{tag}> outside of {expected} at byte {offset}")]
    Misplaced {
        tag: String,
        expected: &'static str,
        offset: usize,
    },
    #[error("nested tables are not supported (byte {0})")]
    Nested(usize),
    #[error("invalid {attr}={value:?} at byte {offset}")]
    BadSpan {
        attr: &'static str,
        value: String,
        offset: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeLabel {
    Table,
    Thead,
    Tbody,
    Tr,
    Td,
    Th,
}

impl NodeLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeLabel::Table => "table",
            NodeLabel::Thead => "thead",
            NodeLabel::Tbody => "tbody",
            NodeLabel::Tr => "tr",
            NodeLabel::Td => "td",
            NodeLabel::Th => "th",
        }
    }

    pub fn is_cell(self) -> bool {
        matches!(self, NodeLabel::Td | NodeLabel::Th)
    }

    fn from_tag(tag: &str) -> Option<Self> {
        Some(match tag {
            "table" => NodeLabel::Table,
            "thead" => NodeLabel::Thead,
            "tbody" => NodeLabel::Tbody,
            "tr" => NodeLabel::Tr,
            "td" => NodeLabel::Td,
            "th" => NodeLabel::Th,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableNode {
    pub label: NodeLabel,
    pub colspan: u32,
    pub rowspan: u32,
    /// Whitespace-normalized cell text; empty for non-cell nodes.
    pub text: String,
    pub children: Vec<TableNode>,
}

impl TableNode {
    pub fn new(label: NodeLabel) -> Self {
        Self {
            label,
            colspan: 1,
            rowspan: 1,
            text: String::new(),
            children: Vec::new(),
        }
    }

    pub fn cell(label: NodeLabel, text: &str) -> Self {
        Self {
            text: normalize_ws(text),
            ..Self::new(label)
        }
    }

    pub fn with_children(mut self, children: Vec<TableNode>) -> Self {
        self.children = children;
        self
    }

    pub fn with_spans(mut self, colspan: u32, rowspan: u32) -> Self {
        self.colspan = colspan;
        self.rowspan = rowspan;
        self
    }

    pub fn size(&self) -> usize {
        1 + self.children.iter().map(TableNode::size).sum::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableTree {
    pub root: TableNode,
}

impl TableTree {
    pub fn new(root: TableNode) -> Self {
        Self { root }
    }

    pub fn parse(html: &str) -> Result<Self, TableError> {
        Parser::new(html).run()
    }

    pub fn node_count(&self) -> usize {
        self.root.size()
    }

    /// All `tr` nodes in document order, across `thead`/`tbody`.
    pub fn rows(&self) -> Vec<&TableNode> {
        let mut out = Vec::new();
        collect_rows(&self.root, &mut out);
        out
    }

    pub fn row_count(&self) -> usize {
        self.rows().len()
    }

    /// Effective number of grid columns after colspan and rowspan expansion.
    pub fn column_count(&self) -> usize {
        let rows = self.rows();
        // carry[c] = remaining rows covered by a rowspan in column c
        let mut carry: Vec<u32> = Vec::new();
        let mut widest = 0;
        for row in rows {
            let mut col = 0usize;
            let mut next = carry.iter().map(|c| c.saturating_sub(1)).collect::<Vec<_>>();
            for cell in row.children.iter().filter(|c| c.label.is_cell()) {
                while col < carry.len() && carry[col] > 0 {
                    col += 1;
                }
                let span = cell.colspan.max(1) as usize;
                if next.len() < col + span {
                    next.resize(col + span, 0);
                }
                for slot in next.iter_mut().skip(col).take(span) {
                    *slot = (*slot).max(cell.rowspan.max(1) - 1);
                }
                col += span;
            }
            let occupied = carry
                .iter()
                .rposition(|&c| c > 0)
                .map_or(0, |p| p + 1)
                .max(col);
            widest = widest.max(occupied);
            carry = next;
        }
        widest
    }

    pub fn to_html(&self) -> String {
        let mut out = String::new();
        write_node(&self.root, &mut out);
        out
    }
}

fn collect_rows<'a>(node: &'a TableNode, out: &mut Vec<&'a TableNode>) {
    for child in &node.children {
        if child.label == NodeLabel::Tr {
            out.push(child);
        } else if !child.label.is_cell() {
            collect_rows(child, out);
        }
    }
}

fn write_node(node: &TableNode, out: &mut String) {
    let tag = node.label.as_str();
    out.push('<');
    out.push_str(tag);
    if node.colspan > 1 {
        let _ = write!(out, " colspan=\"{}\"", node.colspan);
    }
    if node.rowspan > 1 {
        let _ = write!(out, " rowspan=\"{}\"", node.rowspan);
    }
    out.push('>');
    if node.label.is_cell() {
        out.push_str(&escape(&node.text));
    }
    for child in &node.children {
        write_node(child, out);
    }
    let _ = write!(out, "</{tag}>");
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn decode_entities(s: &str) -> String {
    if !s.contains('&') {
        return s.to_string();
    }
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(pos) = rest.find('&') {
        out.push_str(&rest[..pos]);
        rest = &rest[pos..];
        let decoded = rest.find(';').filter(|&e| e <= 10).and_then(|end| {
            let name = &rest[1..end];
            let ch = match name {
                "amp" => Some('&'),
                "lt" => Some('<'),
                "gt" => Some('>'),
                "quot" => Some('"'),
                "apos" => Some('\''),
                "nbsp" => Some(' '),
                _ if name.starts_with("#x") || name.starts_with("#X") => {
                    u32::from_str_radix(&name[2..], 16).ok().and_then(char::from_u32)
                }
                _ if name.starts_with('#') => name[1..].parse().ok().and_then(char::from_u32),
                _ => None,
            };
            ch.map(|c| (c, end))
        });
        match decoded {
            Some((c, end)) => {
                out.push(c);
                rest = &rest[end + 1..];
            }
            None => {
                out.push('&');
                rest = &rest[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

enum Token<'a> {
    Open {
        name: String,
        attrs: &'a str,
        self_closing: bool,
    },
    Close(String),
    Text(&'a str),
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Self { src, pos: 0 }
    }

    fn next_token(&mut self) -> Option<(usize, Token<'a>)> {
        let rest = &self.src[self.pos..];
        if rest.is_empty() {
            return None;
        }
        let start = self.pos;
        if let Some(body) = rest.strip_prefix("<!--") {
            let end = body.find("-->").map_or(rest.len(), |e| e + 4 + 3);
            self.pos += end;
            return Some((start, Token::Text("")));
        }
        if rest.starts_with('<') {
            if let Some(end) = rest.find('>') {
                let inner = &rest[1..end];
                let tag_start = inner.trim_start();
                let first = tag_start.chars().next();
                if matches!(first, Some(c) if c.is_ascii_alphabetic() || c == '/' || c == '!') {
                    self.pos += end + 1;
                    if let Some(name) = tag_start.strip_prefix('/') {
                        return Some((start, Token::Close(name.trim().to_ascii_lowercase())));
                    }
                    if tag_start.starts_with('!') {
                        return Some((start, Token::Text("")));
                    }
                    let self_closing = tag_start.ends_with('/');
                    let body = tag_start.trim_end_matches('/');
                    let name_end = body
                        .find(|c: char| c.is_whitespace())
                        .unwrap_or(body.len());
                    return Some((
                        start,
                        Token::Open {
                            name: body[..name_end].to_ascii_lowercase(),
                            attrs: &body[name_end..],
                            self_closing,
                        },
                    ));
                }
            }
            // a lone '<' is text
            let next = rest.strip_prefix('<').and_then(|r| r.find('<')).map_or(rest.len(), |p| p + 1);
            self.pos += next;
            return Some((start, Token::Text(&rest[..next])));
        }
        let end = rest.find('<').unwrap_or(rest.len());
        self.pos += end;
        Some((start, Token::Text(&rest[..end])))
    }

    fn run(mut self) -> Result<TableTree, TableError> {
        // stack of open structural nodes; stack[0] is the root table once seen
        let mut stack: Vec<TableNode> = Vec::new();
        let mut cell_text = String::new();
        let mut done: Option<TableNode> = None;

        while let Some((offset, tok)) = self.next_token() {
            if done.is_some() {
                break;
            }
            match tok {
                Token::Text(t) => {
                    if matches!(stack.last(), Some(n) if n.label.is_cell()) {
                        cell_text.push_str(t);
                    }
                }
                Token::Open {
                    name,
                    attrs,
                    self_closing,
                } => {
                    let Some(label) = NodeLabel::from_tag(&name) else {
                        if name == "br" && matches!(stack.last(), Some(n) if n.label.is_cell()) {
                            cell_text.push(' ');
                        }
                        continue;
                    };
                    let in_table = !stack.is_empty();
                    match label {
                        NodeLabel::Table if in_table => return Err(TableError::Nested(offset)),
                        NodeLabel::Table => {}
                        _ if !in_table => {
                            return Err(TableError::Misplaced {
                                tag: name,
                                expected: "a table",
                                offset,
                            })
                        }
                        NodeLabel::Thead | NodeLabel::Tbody => {
                            close_until(&mut stack, &mut cell_text, |l| l == NodeLabel::Table);
                        }
                        NodeLabel::Tr => {
                            close_until(&mut stack, &mut cell_text, |l| {
                                matches!(l, NodeLabel::Table | NodeLabel::Thead | NodeLabel::Tbody)
                            });
                        }
                        NodeLabel::Td | NodeLabel::Th => {
                            close_until(&mut stack, &mut cell_text, |l| {
                                matches!(
                                    l,
                                    NodeLabel::Tr | NodeLabel::Table | NodeLabel::Thead | NodeLabel::Tbody
                                )
                            });
                            if stack.last().map(|n| n.label) != Some(NodeLabel::Tr) {
                                return Err(TableError::Misplaced {
                                    tag: name,
                                    expected: "a row",
                                    offset,
                                });
                            }
                        }
                    }
                    let mut node = TableNode::new(label);
                    if label.is_cell() {
                        node.colspan = span_attr(attrs, "colspan", offset)?;
                        node.rowspan = span_attr(attrs, "rowspan", offset)?;
                    }
                    stack.push(node);
                    if self_closing {
                        pop_into_parent(&mut stack, &mut cell_text, &mut done);
                    }
                }
                Token::Close(name) => {
                    let Some(label) = NodeLabel::from_tag(&name) else {
                        continue;
                    };
                    if !stack.iter().any(|n| n.label == label) {
                        return Err(TableError::UnexpectedClose { tag: name, offset });
                    }
                    while let Some(top) = stack.last().map(|n| n.label) {
                        pop_into_parent(&mut stack, &mut cell_text, &mut done);
                        if top == label {
                            break;
                        }
                    }
                }
            }
        }
        match done {
            Some(root) => Ok(TableTree { root }),
            None if stack.is_empty() => Err(TableError::NoTable),
            None => Err(TableError::Unclosed),
        }
    }
}

fn close_until(stack: &mut Vec<TableNode>, cell_text: &mut String, keep: impl Fn(NodeLabel) -> bool) {
    let mut sink = None;
    while let Some(top) = stack.last() {
        if keep(top.label) {
            break;
        }
        pop_into_parent(stack, cell_text, &mut sink);
    }
}

fn pop_into_parent(stack: &mut Vec<TableNode>, cell_text: &mut String, done: &mut Option<TableNode>) {
    let Some(mut node) = stack.pop() else { return };
    if node.label.is_cell() {
        node.text = normalize_ws(&decode_entities(cell_text));
        cell_text.clear();
    }
    match stack.last_mut() {
        Some(parent) => parent.children.push(node),
        None => *done = Some(node),
    }
}

fn span_attr(attrs: &str, name: &'static str, offset: usize) -> Result<u32, TableError> {
    let lower = attrs.to_ascii_lowercase();
    let mut search = 0;
    while let Some(pos) = lower[search..].find(name) {
        let at = search + pos;
        search = at + name.len();
        let boundary_ok = at == 0 || !lower.as_bytes()[at - 1].is_ascii_alphanumeric();
        let rest = lower[search..].trim_start();
        if !boundary_ok || !rest.starts_with('=') {
            continue;
        }
        let value = rest[1..].trim_start();
        let raw: String = if let Some(q) = value.strip_prefix(['"', '\'']) {
            q.chars().take_while(|&c| c != '"' && c != '\'').collect()
        } else {
            value.chars().take_while(|c| !c.is_whitespace()).collect()
        };
        return match raw.trim().parse::<u32>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(TableError::BadSpan {
                attr: name,
                value: raw,
                offset,
            }),
        };
    }
    Ok(1)
}

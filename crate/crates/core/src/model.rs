//! Shared domain model: pages, layout elements, content payloads and the
//! ground-truth / prediction file schema.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::io::write_atomic;
use crate::table::TableTree;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("unknown category label {0:?}")]
    UnknownCategory(String),
    #[error("unknown content kind {0:?}")]
    UnknownContentKind(String),
    #[error("schema violation at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("non-finite coordinate at {0}")]
    NonFinite(String),
    #[error("invalid polygon at {path}: {message}")]
    Polygon { path: String, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
}

macro_rules! categories {
    ($($variant:ident => $label:literal),+ $(,)?) => {
        /// One of the 25 layout categories.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum Category {
            $($variant),+
        }

        impl Category {
            pub const ALL: [Category; 25] = [$(Category::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $(Category::$variant => $label),+
                }
            }
        }

        impl FromStr for Category {
            type Err = ModelError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($label => Ok(Category::$variant),)+
                    other => Err(ModelError::UnknownCategory(other.to_string())),
                }
            }
        }
    };
}

categories! {
    ParagraphTitle => "paragraph_title",
    Image => "image",
    Text => "text",
    Number => "number",
    Abstract => "abstract",
    Content => "content",
    FigureTitle => "figure_title",
    DisplayFormula => "display_formula",
    Table => "table",
    Reference => "reference",
    DocTitle => "doc_title",
    Footnote => "footnote",
    Header => "header",
    Algorithm => "algorithm",
    Footer => "footer",
    Seal => "seal",
    Chart => "chart",
    FormulaNumber => "formula_number",
    AsideText => "aside_text",
    ReferenceContent => "reference_content",
    HeaderImage => "header_image",
    FooterImage => "footer_image",
    InlineFormula => "inline_formula",
    VerticalText => "vertical_text",
    VisionFootnote => "vision_footnote",
}

impl Category {
    /// Page furniture that carries no body content.
    pub fn is_decorative(self) -> bool {
        matches!(
            self,
            Category::Header | Category::Footer | Category::HeaderImage | Category::FooterImage
        )
    }

    pub fn is_formula(self) -> bool {
        matches!(self, Category::DisplayFormula | Category::InlineFormula)
    }

    pub fn is_visual(self) -> bool {
        matches!(
            self,
            Category::Image | Category::Chart | Category::HeaderImage | Category::FooterImage
        )
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Category {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Category {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContentKind {
    PlainText,
    TableHtml,
    FormulaLatex,
    ChartTable,
    SealText,
}

impl ContentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ContentKind::PlainText => "plain_text",
            ContentKind::TableHtml => "table_html",
            ContentKind::FormulaLatex => "formula_latex",
            ContentKind::ChartTable => "chart_table",
            ContentKind::SealText => "seal_text",
        }
    }

    /// The payload kind a category is expected to carry.
    pub fn expected_for(category: Category) -> ContentKind {
        match category {
            Category::Table => ContentKind::TableHtml,
            Category::DisplayFormula | Category::InlineFormula => ContentKind::FormulaLatex,
            Category::Chart => ContentKind::ChartTable,
            Category::Seal => ContentKind::SealText,
            _ => ContentKind::PlainText,
        }
    }
}

impl FromStr for ContentKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "plain_text" => Ok(ContentKind::PlainText),
            "table_html" => Ok(ContentKind::TableHtml),
            "formula_latex" => Ok(ContentKind::FormulaLatex),
            "chart_table" => Ok(ContentKind::ChartTable),
            "seal_text" => Ok(ContentKind::SealText),
            other => Err(ModelError::UnknownContentKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentPayload {
    pub kind: ContentKind,
    pub value: String,
}

impl ContentPayload {
    pub fn new(kind: ContentKind, value: impl Into<String>) -> Self {
        Self {
            kind,
            value: value.into(),
        }
    }

    pub fn text(value: impl Into<String>) -> Self {
        Self::new(ContentKind::PlainText, value)
    }
}

/// Region geometry in pixels. Two points are an axis-aligned box shorthand
/// (top-left, bottom-right); otherwise the vertices of a polygon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polygon {
    pub points: Vec<[f64; 2]>,
}

impl Polygon {
    pub fn new(points: Vec<[f64; 2]>) -> Self {
        Self { points }
    }

    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self::new(vec![[x0, y0], [x1, y1]])
    }

    pub fn is_box(&self) -> bool {
        self.points.len() == 2
    }

    /// Vertex list with the 2-point shorthand expanded to TL, TR, BR, BL.
    pub fn vertices(&self) -> Vec<[f64; 2]> {
        if let [[x0, y0], [x1, y1]] = self.points[..] {
            vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]]
        } else {
            self.points.clone()
        }
    }

    pub fn check(&self, path: &str) -> Result<(), ModelError> {
        for (i, p) in self.points.iter().enumerate() {
            if !p[0].is_finite() || !p[1].is_finite() {
                return Err(ModelError::NonFinite(format!("{path}[{i}]")));
            }
        }
        match self.points.len() {
            0 | 1 => Err(ModelError::Polygon {
                path: path.to_string(),
                message: format!("{} points; need 2 (box) or at least 3", self.points.len()),
            }),
            2 => {
                let [tl, br] = [self.points[0], self.points[1]];
                if tl[0] > br[0] {
                    Err(ModelError::Polygon {
                        path: path.to_string(),
                        message: format!("x_TL > x_BR ({} > {})", tl[0], br[0]),
                    })
                } else if tl[1] > br[1] {
                    Err(ModelError::Polygon {
                        path: path.to_string(),
                        message: format!("y_TL > y_BR ({} > {})", tl[1], br[1]),
                    })
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutElement {
    pub id: u32,
    pub category: Category,
    pub polygon: Polygon,
    pub confidence: f64,
    pub order: u32,
    pub content: Option<ContentPayload>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageDocument {
    pub page_index: u32,
    pub width_px: u32,
    pub height_px: u32,
    pub elements: Vec<LayoutElement>,
}

impl PageDocument {
    pub fn new(page_index: u32, width_px: u32, height_px: u32) -> Self {
        Self {
            page_index,
            width_px,
            height_px,
            elements: Vec::new(),
        }
    }

    /// Elements sorted by reading-order rank, ties by id.
    pub fn ordered(&self) -> Vec<&LayoutElement> {
        let mut out: Vec<&LayoutElement> = self.elements.iter().collect();
        out.sort_by_key(|e| (e.order, e.id));
        out
    }
}

/// Top-level file container.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub pages: Vec<PageDocument>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Warning {
    pub page_index: Option<u32>,
    pub message: String,
}

impl Warning {
    fn page(page_index: u32, message: impl Into<String>) -> Self {
        Self {
            page_index: Some(page_index),
            message: message.into(),
        }
    }
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.page_index {
            Some(p) => write!(f, "page {p}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

const DOC_FIELDS: &[&str] = &["pages"];
const PAGE_FIELDS: &[&str] = &["page_index", "width_px", "height_px", "elements"];
const ELEMENT_FIELDS: &[&str] = &["id", "category", "polygon", "confidence", "order", "content"];
const CONTENT_FIELDS: &[&str] = &["kind", "value"];

/// Documents parsed from a ground-truth or prediction file together with
/// everything noticed (and clamped) on the way in.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub pages: Vec<PageDocument>,
    pub warnings: Vec<Warning>,
}

pub fn load_document(path: impl AsRef<Path>) -> Result<Loaded, ModelError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_document(&text)
}

pub fn parse_document(text: &str) -> Result<Loaded, ModelError> {
    let value: Value = serde_json::from_str(text)?;
    document_from_value(&value)
}

pub fn document_from_value(value: &Value) -> Result<Loaded, ModelError> {
    let mut warnings = Vec::new();
    let root = as_object(value, "$")?;
    unknown_fields(root, DOC_FIELDS, "$", None, &mut warnings);
    let pages_v = root.get("pages").ok_or_else(|| missing("$", "pages"))?;
    let pages_arr = pages_v.as_array().ok_or_else(|| wrong_type("$.pages", "array"))?;

    let mut pages = Vec::with_capacity(pages_arr.len());
    for (pi, pv) in pages_arr.iter().enumerate() {
        let ppath = format!("$.pages[{pi}]");
        let mut page = parse_page(pv, &ppath, &mut warnings)?;
        warnings.extend(validate_page(&mut page));
        pages.push(page);
    }
    for w in &warnings {
        tracing::warn!("{w}");
    }
    Ok(Loaded { pages, warnings })
}

fn parse_page(v: &Value, path: &str, warnings: &mut Vec<Warning>) -> Result<PageDocument, ModelError> {
    let obj = as_object(v, path)?;
    let page_index = get_u32(obj, "page_index", path)?;
    unknown_fields(obj, PAGE_FIELDS, path, Some(page_index), warnings);
    let width_px = get_u32(obj, "width_px", path)?;
    let height_px = get_u32(obj, "height_px", path)?;
    if width_px == 0 || height_px == 0 {
        return Err(ModelError::Schema {
            path: path.to_string(),
            message: "page dimensions must be positive".into(),
        });
    }
    let elems_v = obj.get("elements").ok_or_else(|| missing(path, "elements"))?;
    let elems = elems_v
        .as_array()
        .ok_or_else(|| wrong_type(&format!("{path}.elements"), "array"))?;
    let mut elements = Vec::with_capacity(elems.len());
    for (ei, ev) in elems.iter().enumerate() {
        let epath = format!("{path}.elements[{ei}]");
        elements.push(parse_element(ev, &epath, page_index, warnings)?);
    }
    Ok(PageDocument {
        page_index,
        width_px,
        height_px,
        elements,
    })
}

fn parse_element(
    v: &Value,
    path: &str,
    page_index: u32,
    warnings: &mut Vec<Warning>,
) -> Result<LayoutElement, ModelError> {
    let obj = as_object(v, path)?;
    unknown_fields(obj, ELEMENT_FIELDS, path, Some(page_index), warnings);
    let id = get_u32(obj, "id", path)?;
    let category: Category = obj
        .get("category")
        .ok_or_else(|| missing(path, "category"))?
        .as_str()
        .ok_or_else(|| wrong_type(&format!("{path}.category"), "string"))?
        .parse()?;

    let poly_path = format!("{path}.polygon");
    let poly_v = obj.get("polygon").ok_or_else(|| missing(path, "polygon"))?;
    let pts = poly_v.as_array().ok_or_else(|| wrong_type(&poly_path, "array"))?;
    let mut points = Vec::with_capacity(pts.len());
    for (i, p) in pts.iter().enumerate() {
        let ppath = format!("{poly_path}[{i}]");
        let pair = p.as_array().ok_or_else(|| wrong_type(&ppath, "[x, y]"))?;
        if pair.len() != 2 {
            return Err(wrong_type(&ppath, "[x, y]"));
        }
        let x = pair[0].as_f64().ok_or_else(|| wrong_type(&ppath, "number"))?;
        let y = pair[1].as_f64().ok_or_else(|| wrong_type(&ppath, "number"))?;
        points.push([x, y]);
    }
    let polygon = Polygon::new(points);
    polygon.check(&poly_path)?;

    let confidence = obj
        .get("confidence")
        .ok_or_else(|| missing(path, "confidence"))?
        .as_f64()
        .ok_or_else(|| wrong_type(&format!("{path}.confidence"), "number"))?;
    if !confidence.is_finite() {
        return Err(ModelError::NonFinite(format!("{path}.confidence")));
    }
    let order = get_u32(obj, "order", path)?;

    let content = match obj.get("content") {
        None | Some(Value::Null) => None,
        Some(c) => {
            let cpath = format!("{path}.content");
            let cobj = as_object(c, &cpath)?;
            unknown_fields(cobj, CONTENT_FIELDS, &cpath, Some(page_index), warnings);
            let kind: ContentKind = cobj
                .get("kind")
                .ok_or_else(|| missing(&cpath, "kind"))?
                .as_str()
                .ok_or_else(|| wrong_type(&format!("{cpath}.kind"), "string"))?
                .parse()?;
            let value = cobj
                .get("value")
                .ok_or_else(|| missing(&cpath, "value"))?
                .as_str()
                .ok_or_else(|| wrong_type(&format!("{cpath}.value"), "string"))?
                .to_string();
            Some(ContentPayload { kind, value })
        }
    };

    Ok(LayoutElement {
        id,
        category,
        polygon,
        confidence,
        order,
        content,
    })
}

/// Checks page invariants, clamping out-of-bounds vertices in place.
/// Returns an empty list iff nothing was wrong.
pub fn validate_page(page: &mut PageDocument) -> Vec<Warning> {
    let mut warnings = Vec::new();
    let (w, h) = (page.width_px as f64, page.height_px as f64);
    let pidx = page.page_index;

    let mut seen = HashSet::new();
    for el in &mut page.elements {
        if !seen.insert(el.id) {
            warnings.push(Warning::page(pidx, format!("duplicate element id {}", el.id)));
        }
        for (vi, p) in el.polygon.points.iter_mut().enumerate() {
            let clamped = [p[0].clamp(0.0, w), p[1].clamp(0.0, h)];
            if clamped != *p {
                warnings.push(Warning::page(
                    pidx,
                    format!(
                        "element {} vertex {vi} ({}, {}) clamped to ({}, {})",
                        el.id, p[0], p[1], clamped[0], clamped[1]
                    ),
                ));
                *p = clamped;
            }
        }
        if !(0.0..=1.0).contains(&el.confidence) {
            warnings.push(Warning::page(
                pidx,
                format!("element {} confidence {} outside [0,1]", el.id, el.confidence),
            ));
        }
        if let Some(c) = &el.content {
            if c.kind == ContentKind::TableHtml {
                if let Err(e) = TableTree::parse(&c.value) {
                    warnings.push(Warning::page(
                        pidx,
                        format!("element {} table_html does not parse: {e}", el.id),
                    ));
                }
            }
        }
    }

    let n = page.elements.len();
    let mut orders: Vec<u32> = page.elements.iter().map(|e| e.order).collect();
    orders.sort_unstable();
    if orders.iter().enumerate().any(|(i, &o)| o as usize != i) {
        warnings.push(Warning::page(
            pidx,
            format!("order values are not a permutation of 0..{n}"),
        ));
    }
    warnings
}

/// Canonical serialized form used for saving; reloading it yields the
/// same bytes.
pub fn to_canonical_json(pages: &[PageDocument]) -> String {
    let doc = DocumentRef { pages };
    let mut s = serde_json::to_string_pretty(&doc).expect("documents always serialize");
    s.push('\n');
    s
}

#[derive(Serialize)]
struct DocumentRef<'a> {
    pages: &'a [PageDocument],
}

pub fn save_document(path: impl AsRef<Path>, pages: &[PageDocument]) -> Result<(), ModelError> {
    let path = path.as_ref();
    write_atomic(path, to_canonical_json(pages).as_bytes()).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn as_object<'a>(v: &'a Value, path: &str) -> Result<&'a serde_json::Map<String, Value>, ModelError> {
    v.as_object().ok_or_else(|| wrong_type(path, "object"))
}

fn get_u32(obj: &serde_json::Map<String, Value>, key: &str, path: &str) -> Result<u32, ModelError> {
    let v = obj.get(key).ok_or_else(|| missing(path, key))?;
    v.as_u64()
        .and_then(|n| u32::try_from(n).ok())
        .ok_or_else(|| wrong_type(&format!("{path}.{key}"), "non-negative integer"))
}

fn missing(path: &str, key: &str) -> ModelError {
    ModelError::Schema {
        path: path.to_string(),
        message: format!("missing field {key:?}"),
    }
}

fn wrong_type(path: &str, expected: &str) -> ModelError {
    ModelError::Schema {
        path: path.to_string(),
        message: format!("expected {expected}"),
    }
}

fn unknown_fields(
    obj: &serde_json::Map<String, Value>,
    known: &[&str],
    path: &str,
    page_index: Option<u32>,
    warnings: &mut Vec<Warning>,
) {
    for key in obj.keys() {
        if !known.contains(&key.as_str()) {
            warnings.push(Warning {
                page_index,
                message: format!("ignoring unknown field {path}.{key}"),
            });
        }
    }
}

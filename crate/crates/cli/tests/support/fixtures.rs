#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use docparse_core::model::{save_document, Category, ContentKind, ContentPayload, LayoutElement, PageDocument, Polygon};

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_docparse"));
    c.env_remove("DOCPARSE_SERVER").env("DOCPARSE_LOG", "error");
    c
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn docparse")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn el(id: u32, order: u32, category: Category, y: f64, value: Option<&str>) -> LayoutElement {
    LayoutElement {
        id,
        category,
        polygon: Polygon::rect(40.0, y, 760.0, y + 60.0),
        confidence: 0.95,
        order,
        content: value.map(|v| ContentPayload::new(ContentKind::expected_for(category), v)),
    }
}

/// Mixed-content pages; geometry is top-to-bottom by id while reading order
/// is not, and the table on page 1 continues onto page 2.
pub fn synthetic_gt(pages: u32) -> Vec<PageDocument> {
    (0..pages)
        .map(|p| {
            let mut page = PageDocument::new(p, 800, 1100);
            let mut items: Vec<(Category, Option<String>)> = vec![
                (Category::Header, Some(format!("Running head {p}"))),
                (Category::ParagraphTitle, Some(format!("{}. Section {p}", p + 1))),
                (Category::Text, Some(format!("Body text of page {p} with several words."))),
                (Category::DisplayFormula, Some(format!("x_{p} = \\frac{{a}}{{b + {p}}}"))),
                (Category::Image, None),
                (Category::Footer, Some(format!("{}", p + 1))),
            ];
            if p == 0 {
                items.insert(1, (Category::DocTitle, Some("A Synthetic Report".into())));
            }
            if p == 1 {
                items.push((
                    Category::Table,
                    Some("<table><tr><th>k</th><th>v</th><th>n</th></tr><tr><td>a</td><td>1</td><td>x</td></tr></table>".into()),
                ));
            }
            if p == 2 {
                items.insert(
                    1,
                    (
                        Category::Table,
                        Some("<table><tr><th>k</th><th>v</th><th>n</th></tr><tr><td>b</td><td>2</td><td>y</td></tr></table>".into()),
                    ),
                );
            }
            let n = items.len() as u32;
            for (i, (cat, value)) in items.into_iter().enumerate() {
                let i = i as u32;
                // swap the middle pair so geometry and reading order differ
                let order = match i {
                    2 if n > 4 => 3,
                    3 if n > 4 => 2,
                    _ => i,
                };
                page.elements.push(el(i, order, cat, 20.0 + 150.0 * f64::from(i), value.as_deref()));
            }
            page
        })
        .collect()
}

pub fn write_gt(dir: &Path, name: &str, pages: u32) -> PathBuf {
    let path = dir.join(name);
    save_document(&path, &synthetic_gt(pages)).expect("write gt");
    path
}

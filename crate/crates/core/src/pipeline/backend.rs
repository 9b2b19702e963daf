//! Stage backends: a seeded latency mock and a ground-truth playback.

use std::collections::BTreeMap;
use std::time::Duration;

use async_trait::async_trait;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{Category, ContentPayload, LayoutElement, PageDocument, Polygon};
use crate::reading_order::{order_from_margin_matrix, RelationMatrix};

/// What the runtime knows about a page before layout analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageDescriptor {
    pub page_id: u64,
    pub page_index: u32,
    pub width_px: u32,
    pub height_px: u32,
}

/// One region handed to recognition. Backends do their own cropping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementDescriptor {
    pub page_id: u64,
    pub page_index: u32,
    pub element_id: u32,
    pub category: Category,
    pub polygon: Polygon,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayoutOutput {
    pub elements: Vec<LayoutElement>,
    /// When present, the runtime derives reading order from it by voting.
    pub relations: Option<RelationMatrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recognized {
    pub content: Option<ContentPayload>,
    pub tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct BackendError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Prepare,
    Layout,
    Recognize,
}

#[async_trait]
pub trait Backend: Send + Sync {
    async fn prepare(&self, page: PageDescriptor) -> Result<PageDescriptor, BackendError> {
        Ok(page)
    }

    async fn layout(&self, page: &PageDescriptor) -> Result<LayoutOutput, BackendError>;

    /// Results must be positionally aligned with `batch`.
    async fn recognize(&self, batch: &[ElementDescriptor]) -> Result<Vec<Recognized>, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockConfig {
    pub prep_ms: f64,
    pub layout_ms: f64,
    /// Fixed cost of one recognition call.
    pub recog_batch_ms: f64,
    /// Additional cost per element in the call.
    pub recog_item_ms: f64,
    /// Uniform extra latency in `[0, jitter_ms)` per call.
    pub jitter_ms: f64,
    pub seed: u64,
    pub blocks_per_page: u32,
    pub tokens_per_block: u64,
    /// Pages listed here fail at layout.
    pub fail_pages: Vec<u64>,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            prep_ms: 0.0,
            layout_ms: 0.0,
            recog_batch_ms: 0.0,
            recog_item_ms: 0.0,
            jitter_ms: 0.0,
            seed: 0,
            blocks_per_page: 1,
            tokens_per_block: 16,
            fail_pages: Vec::new(),
        }
    }
}

impl MockConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("prep_ms", self.prep_ms),
            ("layout_ms", self.layout_ms),
            ("recog_batch_ms", self.recog_batch_ms),
            ("recog_item_ms", self.recog_item_ms),
            ("jitter_ms", self.jitter_ms),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        Ok(())
    }
}

/// Synthetic backend whose latencies are fixed plus a jitter drawn from a
/// generator keyed on (seed, page, stage), so results do not depend on
/// scheduling.
#[derive(Debug, Clone)]
pub struct MockBackend {
    cfg: MockConfig,
}

impl MockBackend {
    pub fn new(cfg: MockConfig) -> Result<Self, String> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn pages(count: u64) -> Vec<PageDescriptor> {
        (0..count)
            .map(|i| PageDescriptor {
                page_id: i,
                page_index: i as u32,
                width_px: 1000,
                height_px: 1400,
            })
            .collect()
    }

    fn delay(&self, base_ms: f64, page: u64, stage: Stage) -> Duration {
        let jitter = if self.cfg.jitter_ms > 0.0 {
            let key = self.cfg.seed ^ page.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ ((stage as u64) << 56);
            ChaCha8Rng::seed_from_u64(key).random::<f64>() * self.cfg.jitter_ms
        } else {
            0.0
        };
        Duration::from_secs_f64((base_ms + jitter) / 1000.0)
    }
}

async fn pause(d: Duration) {
    if !d.is_zero() {
        tokio::time::sleep(d).await;
    }
}

#[async_trait]
impl Backend for MockBackend {
    async fn prepare(&self, page: PageDescriptor) -> Result<PageDescriptor, BackendError> {
        pause(self.delay(self.cfg.prep_ms, page.page_id, Stage::Prepare)).await;
        Ok(page)
    }

    async fn layout(&self, page: &PageDescriptor) -> Result<LayoutOutput, BackendError> {
        pause(self.delay(self.cfg.layout_ms, page.page_id, Stage::Layout)).await;
        if self.cfg.fail_pages.contains(&page.page_id) {
            return Err(BackendError(format!("mock layout failure on page {}", page.page_id)));
        }
        let n = self.cfg.blocks_per_page;
        let h = f64::from(page.height_px) / f64::from(n.max(1));
        let elements = (0..n)
            .map(|i| LayoutElement {
                id: i,
                category: Category::Text,
                polygon: Polygon::rect(50.0, h * f64::from(i) + 5.0, f64::from(page.width_px) - 50.0, h * f64::from(i + 1) - 5.0),
                confidence: 1.0,
                order: i,
                content: None,
            })
            .collect();
        Ok(LayoutOutput {
            elements,
            relations: None,
        })
    }

    async fn recognize(&self, batch: &[ElementDescriptor]) -> Result<Vec<Recognized>, BackendError> {
        let base = self.cfg.recog_batch_ms + self.cfg.recog_item_ms * batch.len() as f64;
        let key = batch.first().map_or(0, |e| e.page_id << 16 | u64::from(e.element_id));
        pause(self.delay(base, key, Stage::Recognize)).await;
        Ok(batch
            .iter()
            .map(|e| Recognized {
                content: Some(ContentPayload::text(format!("page {} block {}", e.page_index, e.element_id))),
                tokens: self.cfg.tokens_per_block,
            })
            .collect())
    }
}

/// Replays ground truth. Layout returns the GT elements without content;
/// recognition returns the GT content verbatim.
#[derive(Debug, Clone)]
pub struct PlaybackBackend {
    pages: BTreeMap<u32, PageDocument>,
    keep_order: bool,
    use_relations: bool,
}

impl PlaybackBackend {
    pub fn new(gt: Vec<PageDocument>) -> Self {
        Self {
            pages: gt.into_iter().map(|p| (p.page_index, p)).collect(),
            keep_order: true,
            use_relations: false,
        }
    }

    /// Strip GT ranks; with `use_relations` the layout stage instead emits
    /// a margin relation matrix encoding the GT order.
    pub fn strip_order(mut self, use_relations: bool) -> Self {
        self.keep_order = false;
        self.use_relations = use_relations;
        self
    }

    pub fn descriptors(&self) -> Vec<PageDescriptor> {
        self.pages
            .values()
            .enumerate()
            .map(|(i, p)| PageDescriptor {
                page_id: i as u64,
                page_index: p.page_index,
                width_px: p.width_px,
                height_px: p.height_px,
            })
            .collect()
    }

    fn page(&self, index: u32) -> Result<&PageDocument, BackendError> {
        self.pages
            .get(&index)
            .ok_or_else(|| BackendError(format!("page {index} not found in ground truth")))
    }
}

#[async_trait]
impl Backend for PlaybackBackend {
    async fn layout(&self, page: &PageDescriptor) -> Result<LayoutOutput, BackendError> {
        let gt = self.page(page.page_index)?;
        let mut elements: Vec<LayoutElement> = gt
            .elements
            .iter()
            .map(|e| LayoutElement {
                content: None,
                ..e.clone()
            })
            .collect();
        let mut relations = None;
        if !self.keep_order {
            if self.use_relations {
                let mut perm: Vec<usize> = (0..elements.len()).collect();
                perm.sort_by_key(|&i| (elements[i].order, elements[i].id));
                relations = Some(order_from_margin_matrix(&perm, 4.0).map_err(|e| BackendError(e.to_string()))?);
            }
            elements.iter_mut().for_each(|e| e.order = 0);
        }
        Ok(LayoutOutput { elements, relations })
    }

    async fn recognize(&self, batch: &[ElementDescriptor]) -> Result<Vec<Recognized>, BackendError> {
        batch
            .iter()
            .map(|d| {
                let page = self.page(d.page_index)?;
                let el = page.elements.iter().find(|e| e.id == d.element_id).ok_or_else(|| {
                    BackendError(format!("element {} not found on page {}", d.element_id, d.page_index))
                })?;
                let tokens = el.content.as_ref().map_or(0, |c| c.value.chars().count() as u64);
                Ok(Recognized {
                    content: el.content.clone(),
                    tokens,
                })
            })
            .collect()
    }
}

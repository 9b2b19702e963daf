//! Three-stage parsing runtime: prepare -> layout -> recognize.
//!
//! Each stage is its own task joined to the next by a bounded channel.
//! Recognition pools elements from consecutive pages and launches batches by
//! size or age; up to `recognition_workers` batches run at once. Output is
//! re-sequenced by page id. All timing goes through `tokio::time`, so a
//! runtime started with a paused clock runs on virtual time.

pub mod backend;
pub mod batching;
pub mod stats;

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tokio::sync::{mpsc, Semaphore};
use tokio::time::Instant;

pub use backend::{
    Backend, BackendError, ElementDescriptor, LayoutOutput, MockBackend, MockConfig, PageDescriptor, PlaybackBackend,
    Recognized, Stage,
};
pub use batching::{batch_collect, simulate_batching, BatchDecision, BatchPolicy, LaunchEvent};
pub use stats::RunStats;

use crate::model::PageDocument;
use crate::reading_order::vote;

pub const DEFAULT_QUEUE_CAPACITY: usize = 64;
pub const DEFAULT_RECOGNITION_WORKERS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionMode {
    #[default]
    Pipelined,
    /// One page at a time through all three stages; the baseline.
    Sequential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeConfig {
    pub policy: BatchPolicy,
    pub queue_capacity: usize,
    pub recognition_workers: usize,
    pub mode: ExecutionMode,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        Self {
            policy: BatchPolicy::default(),
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            recognition_workers: DEFAULT_RECOGNITION_WORKERS,
            mode: ExecutionMode::Pipelined,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RuntimeError {
    #[error("invalid runtime configuration: {0}")]
    Config(String),
    #[error("runtime: {0}")]
    Io(#[from] std::io::Error),
}

impl RuntimeConfig {
    pub fn validate(&self) -> Result<(), RuntimeError> {
        if self.policy.capacity == 0 {
            return Err(RuntimeError::Config("batch_capacity must be at least 1".into()));
        }
        if self.queue_capacity == 0 {
            return Err(RuntimeError::Config("queue_capacity must be at least 1".into()));
        }
        if self.recognition_workers == 0 {
            return Err(RuntimeError::Config("recognition_workers must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageResult {
    pub page_id: u64,
    pub page_index: u32,
    #[serde(flatten)]
    pub outcome: PageOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PageOutcome {
    Parsed(PageDocument),
    Failed(String),
}

impl PageResult {
    pub fn page(&self) -> Option<&PageDocument> {
        match &self.outcome {
            PageOutcome::Parsed(p) => Some(p),
            PageOutcome::Failed(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub pages: Vec<PageResult>,
    pub stats: RunStats,
}

#[derive(Debug)]
struct Failure {
    page_id: u64,
    page_index: u32,
    error: String,
}

type Item<T> = Result<T, Failure>;

enum Done {
    Page(u64, PageDocument),
    Failed(Failure),
    Batch {
        members: Vec<(u64, u32)>,
        result: Result<Vec<Recognized>, String>,
        busy: Duration,
    },
}

/// Runs every page through the configured backend. Page ids are
/// reassigned to the input position so they are dense and unique.
pub async fn run(
    pages: Vec<PageDescriptor>,
    backend: Arc<dyn Backend>,
    cfg: &RuntimeConfig,
) -> Result<RunOutput, RuntimeError> {
    cfg.validate()?;
    let pages: Vec<PageDescriptor> = pages
        .into_iter()
        .enumerate()
        .map(|(i, p)| PageDescriptor { page_id: i as u64, ..p })
        .collect();
    match cfg.mode {
        ExecutionMode::Pipelined => Ok(run_pipelined(pages, backend, cfg).await),
        ExecutionMode::Sequential => Ok(run_sequential(pages, backend, cfg).await),
    }
}

/// Runs `run` on a fresh single-threaded runtime. With `simulated` the
/// runtime's clock starts paused and jumps straight to the next timer
/// whenever every task is idle.
pub fn run_blocking(
    pages: Vec<PageDescriptor>,
    backend: Arc<dyn Backend>,
    cfg: &RuntimeConfig,
    simulated: bool,
) -> Result<RunOutput, RuntimeError> {
    let rt = tokio::runtime::Builder::new_current_thread()
        .enable_time()
        .start_paused(simulated)
        .build()?;
    rt.block_on(run(pages, backend, cfg))
}

fn finish_layout(page: &PageDescriptor, out: LayoutOutput) -> Result<PageDocument, String> {
    let mut elements = out.elements;
    if let Some(rel) = out.relations {
        if rel.n() != elements.len() {
            return Err(format!(
                "relation matrix is {0}x{0} for {1} elements",
                rel.n(),
                elements.len()
            ));
        }
        let order = vote(&rel).map_err(|e| e.to_string())?;
        for (el, pos) in elements.iter_mut().zip(order.positions()) {
            el.order = pos as u32;
        }
    }
    Ok(PageDocument {
        page_index: page.page_index,
        width_px: page.width_px,
        height_px: page.height_px,
        elements,
    })
}

fn descriptors(page_id: u64, doc: &PageDocument) -> Vec<ElementDescriptor> {
    doc.elements
        .iter()
        .map(|e| ElementDescriptor {
            page_id,
            page_index: doc.page_index,
            element_id: e.id,
            category: e.category,
            polygon: e.polygon.clone(),
        })
        .collect()
}

async fn run_pipelined(pages: Vec<PageDescriptor>, backend: Arc<dyn Backend>, cfg: &RuntimeConfig) -> RunOutput {
    let start = Instant::now();
    let cap = cfg.queue_capacity;
    let (tx_in, mut rx_in) = mpsc::channel::<PageDescriptor>(cap);
    let (tx_prep, mut rx_prep) = mpsc::channel::<Item<PageDescriptor>>(cap);
    let (tx_layout, mut rx_layout) = mpsc::channel::<Item<(u64, PageDocument)>>(cap);
    let (tx_done, mut rx_done) = mpsc::unbounded_channel::<Done>();
    let total_pages = pages.len();

    let feeder = tokio::spawn(async move {
        for p in pages {
            if tx_in.send(p).await.is_err() {
                break;
            }
        }
    });

    let b = backend.clone();
    let prep = tokio::spawn(async move {
        let (mut busy, mut calls) = (Duration::ZERO, 0u64);
        while let Some(page) = rx_in.recv().await {
            let (id, index) = (page.page_id, page.page_index);
            let t0 = Instant::now();
            let r = b.prepare(page).await;
            busy += t0.elapsed();
            calls += 1;
            let item = r.map_err(|e| Failure {
                page_id: id,
                page_index: index,
                error: format!("prepare: {e}"),
            });
            if tx_prep.send(item).await.is_err() {
                break;
            }
        }
        (busy, calls)
    });

    let b = backend.clone();
    let layout = tokio::spawn(async move {
        let (mut busy, mut calls) = (Duration::ZERO, 0u64);
        while let Some(item) = rx_prep.recv().await {
            let out = match item {
                Err(f) => Err(f),
                Ok(page) => {
                    let t0 = Instant::now();
                    let r = b.layout(&page).await;
                    busy += t0.elapsed();
                    calls += 1;
                    r.map_err(|e| format!("layout: {e}"))
                        .and_then(|o| finish_layout(&page, o))
                        .map_err(|error| Failure {
                            page_id: page.page_id,
                            page_index: page.page_index,
                            error,
                        })
                        .map(|doc| (page.page_id, doc))
                }
            };
            if tx_layout.send(out).await.is_err() {
                break;
            }
        }
        (busy, calls)
    });

    let policy = cfg.policy;
    let workers = Arc::new(Semaphore::new(cfg.recognition_workers));
    let b = backend.clone();
    let recog = tokio::spawn(async move {
        let mut queue: VecDeque<(ElementDescriptor, Duration)> = VecDeque::new();
        let mut histogram: BTreeMap<usize, u64> = BTreeMap::new();
        let mut max_wait = Duration::ZERO;
        let mut calls = 0u64;
        let mut handles = Vec::new();
        let mut open = true;
        loop {
            let now = start.elapsed();
            let times: Vec<Duration> = queue.iter().map(|(_, t)| *t).collect();
            let decision = if open {
                batch_collect(&times, &policy, now)
            } else if queue.is_empty() {
                break;
            } else {
                BatchDecision::Launch(queue.len().min(policy.capacity))
            };
            let msg = match decision {
                BatchDecision::Launch(n) => {
                    let permit = workers.clone().acquire_owned().await.expect("semaphore open");
                    let launched = start.elapsed();
                    let batch: Vec<ElementDescriptor> = queue
                        .drain(..n)
                        .map(|(d, t)| {
                            max_wait = max_wait.max(launched.saturating_sub(t));
                            d
                        })
                        .collect();
                    *histogram.entry(n).or_default() += 1;
                    calls += 1;
                    let (b, tx) = (b.clone(), tx_done.clone());
                    handles.push(tokio::spawn(async move {
                        let t0 = Instant::now();
                        let r = b.recognize(&batch).await;
                        let busy = t0.elapsed();
                        drop(permit);
                        let result = match r {
                            Ok(v) if v.len() == batch.len() => Ok(v),
                            Ok(v) => Err(format!("recognize returned {} results for {} inputs", v.len(), batch.len())),
                            Err(e) => Err(format!("recognize: {e}")),
                        };
                        let members = batch.iter().map(|d| (d.page_id, d.element_id)).collect();
                        let _ = tx.send(Done::Batch { members, result, busy });
                    }));
                    continue;
                }
                BatchDecision::WaitUntil(t) => {
                    // arrivals at the deadline join the batch, as in the simulator
                    tokio::select! {
                        biased;
                        m = rx_layout.recv() => m,
                        _ = tokio::time::sleep_until(start + t) => continue,
                    }
                }
                BatchDecision::Idle => rx_layout.recv().await,
            };
            match msg {
                None => open = false,
                Some(Err(f)) => {
                    let _ = tx_done.send(Done::Failed(f));
                }
                Some(Ok((id, doc))) => {
                    let arrived = start.elapsed();
                    queue.extend(descriptors(id, &doc).into_iter().map(|d| (d, arrived)));
                    let _ = tx_done.send(Done::Page(id, doc));
                }
            }
        }
        drop(tx_done);
        for h in handles {
            let _ = h.await;
        }
        (histogram, max_wait, calls)
    });

    // collector: completes pages as their elements come back
    struct Pending {
        doc: PageDocument,
        slots: HashMap<u32, usize>,
        remaining: usize,
        error: Option<String>,
    }
    let mut pending: HashMap<u64, Pending> = HashMap::new();
    let mut ready: BTreeMap<u64, PageResult> = BTreeMap::new();
    let mut emitted: Vec<PageResult> = Vec::with_capacity(total_pages);
    let mut next_id = 0u64;
    let mut stats = RunStats::default();
    let mut recog_busy = Duration::ZERO;

    let mut complete = |id: u64, result: PageResult, ready: &mut BTreeMap<u64, PageResult>| {
        ready.insert(id, result);
        while let Some(r) = ready.remove(&next_id) {
            emitted.push(r);
            next_id += 1;
        }
    };

    while let Some(done) = rx_done.recv().await {
        match done {
            Done::Failed(f) => {
                let r = PageResult {
                    page_id: f.page_id,
                    page_index: f.page_index,
                    outcome: PageOutcome::Failed(f.error),
                };
                complete(f.page_id, r, &mut ready);
            }
            Done::Page(id, doc) => {
                if doc.elements.is_empty() {
                    let r = PageResult {
                        page_id: id,
                        page_index: doc.page_index,
                        outcome: PageOutcome::Parsed(doc),
                    };
                    complete(id, r, &mut ready);
                } else {
                    let slots = doc.elements.iter().enumerate().map(|(i, e)| (e.id, i)).collect();
                    let remaining = doc.elements.len();
                    pending.insert(
                        id,
                        Pending {
                            doc,
                            slots,
                            remaining,
                            error: None,
                        },
                    );
                }
            }
            Done::Batch { members, result, busy } => {
                recog_busy += busy;
                stats.items += members.len() as u64;
                for (k, (page_id, element_id)) in members.into_iter().enumerate() {
                    let Some(p) = pending.get_mut(&page_id) else { continue };
                    match &result {
                        Ok(outs) => {
                            if let Some(&slot) = p.slots.get(&element_id) {
                                p.doc.elements[slot].content = outs[k].content.clone();
                            }
                            stats.tokens += outs[k].tokens;
                        }
                        Err(e) => {
                            p.error.get_or_insert_with(|| e.clone());
                        }
                    }
                    p.remaining -= 1;
                    if p.remaining == 0 {
                        let p = pending.remove(&page_id).expect("present");
                        let outcome = match p.error {
                            Some(e) => PageOutcome::Failed(e),
                            None => PageOutcome::Parsed(p.doc.clone()),
                        };
                        let r = PageResult {
                            page_id,
                            page_index: p.doc.page_index,
                            outcome,
                        };
                        complete(page_id, r, &mut ready);
                    }
                }
            }
        }
    }

    let _ = feeder.await;
    let (prep_busy, prep_calls) = prep.await.unwrap_or_default();
    let (layout_busy, layout_calls) = layout.await.unwrap_or_default();
    let (histogram, max_wait, recog_calls) = recog.await.unwrap_or_default();
    let total = start.elapsed();

    stats.pages = emitted.len() as u64;
    stats.failed = emitted.iter().filter(|r| r.page().is_none()).count() as u64;
    stats.stage_busy_s.prepare_s = prep_busy.as_secs_f64();
    stats.stage_busy_s.layout_s = layout_busy.as_secs_f64();
    stats.stage_busy_s.recognize_s = recog_busy.as_secs_f64();
    stats.backend_calls.prepare = prep_calls;
    stats.backend_calls.layout = layout_calls;
    stats.backend_calls.recognize = recog_calls;
    stats.batch_histogram = histogram;
    stats.max_queue_wait_s = max_wait.as_secs_f64();
    stats.finish(total.as_secs_f64());
    RunOutput { pages: emitted, stats }
}

async fn run_sequential(pages: Vec<PageDescriptor>, backend: Arc<dyn Backend>, cfg: &RuntimeConfig) -> RunOutput {
    let start = Instant::now();
    let mut stats = RunStats::default();
    let mut busy = [Duration::ZERO; 3];
    let mut out = Vec::with_capacity(pages.len());
    for page in pages {
        let (id, index) = (page.page_id, page.page_index);
        let result = async {
            let t0 = Instant::now();
            let page = backend.prepare(page).await.map_err(|e| format!("prepare: {e}"));
            busy[0] += t0.elapsed();
            stats.backend_calls.prepare += 1;
            let page = page?;
            let t0 = Instant::now();
            let layout = backend.layout(&page).await.map_err(|e| format!("layout: {e}"));
            busy[1] += t0.elapsed();
            stats.backend_calls.layout += 1;
            let mut doc = finish_layout(&page, layout?)?;
            let descs = descriptors(id, &doc);
            for (chunk_no, chunk) in descs.chunks(cfg.policy.capacity).enumerate() {
                let t0 = Instant::now();
                let r = backend.recognize(chunk).await;
                busy[2] += t0.elapsed();
                stats.backend_calls.recognize += 1;
                stats.record_batch(chunk.len());
                stats.items += chunk.len() as u64;
                let r = r.map_err(|e| format!("recognize: {e}"))?;
                if r.len() != chunk.len() {
                    return Err(format!("recognize returned {} results for {} inputs", r.len(), chunk.len()));
                }
                let base = chunk_no * cfg.policy.capacity;
                for (k, rec) in r.into_iter().enumerate() {
                    doc.elements[base + k].content = rec.content;
                    stats.tokens += rec.tokens;
                }
            }
            Ok(doc)
        }
        .await;
        out.push(PageResult {
            page_id: id,
            page_index: index,
            outcome: match result {
                Ok(doc) => PageOutcome::Parsed(doc),
                Err(e) => PageOutcome::Failed(e),
            },
        });
    }
    stats.pages = out.len() as u64;
    stats.failed = out.iter().filter(|r| r.page().is_none()).count() as u64;
    stats.stage_busy_s.prepare_s = busy[0].as_secs_f64();
    stats.stage_busy_s.layout_s = busy[1].as_secs_f64();
    stats.stage_busy_s.recognize_s = busy[2].as_secs_f64();
    stats.finish(start.elapsed().as_secs_f64());
    RunOutput { pages: out, stats }
}

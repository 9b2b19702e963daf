//! Request and response bodies shared by the HTTP service, its client and
//! the in-process CLI path, together with the operations that serve them.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::assembler::{assemble, AssembleOptions, AssembledDocument};
use crate::config::{BackendConfig, ConfigError, PipelineSection};
use crate::metrics::{evaluate_documents, evaluate_spotting, EvalOptions, EvaluationReport, MetricError, OverallWeights};
use crate::model::{validate_page, PageDocument};
use crate::pipeline::{
    run_blocking, Backend, BatchPolicy, ExecutionMode, MockBackend, MockConfig, PageDescriptor, PageResult,
    PlaybackBackend, RunStats, RuntimeConfig, RuntimeError,
};
use crate::spotting::{DecodeOptions, SpottingRecord};
use crate::uacs::{
    allocate, flag_unstable, kmeans, uncertainty, ClusterAssignment, EmbeddingSet, PlanError, SamplingPlan,
    UnstableReport, DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_MAX_ITER, DEFAULT_SAMPLES_PER_CLUSTER,
};

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("{0}")]
    Invalid(String),
}

impl ApiError {
    /// Whether the caller supplied a bad request, as opposed to a failure
    /// while executing a valid one.
    pub fn is_usage(&self) -> bool {
        !matches!(self, ApiError::Runtime(RuntimeError::Io(_)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseRequest {
    pub backend: BackendConfig,
    #[serde(default)]
    pub pipeline: PipelineSection,
    /// Ground truth replayed by the playback backend.
    #[serde(default)]
    pub ground_truth: Vec<PageDocument>,
    /// Page indices to parse; all ground-truth pages when absent.
    #[serde(default)]
    pub pages: Option<Vec<u32>>,
    /// Synthetic page count for the mock backend.
    #[serde(default)]
    pub page_count: Option<u64>,
    #[serde(default)]
    pub assemble: AssembleOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseResponse {
    pub document: AssembledDocument,
    pub pages: Vec<PageResult>,
    pub stats: RunStats,
}

impl ParseResponse {
    pub fn parsed_pages(&self) -> Vec<PageDocument> {
        self.pages.iter().filter_map(|p| p.page().cloned()).collect()
    }
}

pub const DEFAULT_MOCK_PAGES: u64 = 10;

pub fn parse(req: &ParseRequest) -> Result<ParseResponse, ApiError> {
    let rt = req.pipeline.runtime()?;
    let (backend, descriptors): (Arc<dyn Backend>, Vec<PageDescriptor>) = match &req.backend {
        BackendConfig::Mock(m) => {
            let backend = MockBackend::new(m.clone()).map_err(ApiError::Invalid)?;
            (Arc::new(backend), MockBackend::pages(req.page_count.unwrap_or(DEFAULT_MOCK_PAGES)))
        }
        BackendConfig::Playback(p) => {
            if req.ground_truth.is_empty() {
                return Err(ApiError::Invalid("playback backend needs ground-truth pages".into()));
            }
            let mut gt = req.ground_truth.clone();
            gt.iter_mut().for_each(|page| {
                validate_page(page);
            });
            let mut backend = PlaybackBackend::new(gt);
            if !p.keep_order {
                backend = backend.strip_order(p.use_relations);
            }
            let mut descriptors = backend.descriptors();
            if let Some(wanted) = &req.pages {
                // unknown indices are kept so the backend reports them
                let known: BTreeMap<u32, PageDescriptor> =
                    descriptors.drain(..).map(|d| (d.page_index, d)).collect();
                descriptors = wanted
                    .iter()
                    .map(|&i| {
                        known.get(&i).cloned().unwrap_or(PageDescriptor {
                            page_id: 0,
                            page_index: i,
                            width_px: 1,
                            height_px: 1,
                        })
                    })
                    .collect();
            }
            (Arc::new(backend), descriptors)
        }
    };
    let out = run_blocking(descriptors, backend, &rt, req.pipeline.simulated_clock)?;
    let parsed: Vec<PageDocument> = out.pages.iter().filter_map(|p| p.page().cloned()).collect();
    let document = assemble(&parsed, &req.assemble);
    Ok(ParseResponse {
        document,
        pages: out.pages,
        stats: out.stats,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRequest {
    pub gt: Vec<PageDocument>,
    pub pred: Vec<PageDocument>,
    #[serde(default)]
    pub weights: Option<OverallWeights>,
    #[serde(default)]
    pub iou_threshold: Option<f64>,
    #[serde(default)]
    pub spotting_gt: Vec<SpottingRecord>,
    #[serde(default)]
    pub spotting_pred: Vec<SpottingRecord>,
}

pub fn evaluate(req: &EvalRequest) -> Result<EvaluationReport, ApiError> {
    let mut opts = EvalOptions::default();
    if let Some(w) = req.weights {
        w.validate()?;
        opts.weights = w;
    }
    if let Some(t) = req.iou_threshold {
        if !(0.0..=1.0).contains(&t) {
            return Err(ApiError::Invalid(format!("iou threshold {t} outside [0, 1]")));
        }
        opts.iou_threshold = t;
    }
    let mut gt = req.gt.clone();
    let mut pred = req.pred.clone();
    let mut notes = Vec::new();
    for (label, pages) in [("gt", &mut gt), ("pred", &mut pred)] {
        for page in pages.iter_mut() {
            notes.extend(validate_page(page).into_iter().map(|w| format!("{label}: {w}")));
        }
    }
    let mut report = evaluate_documents(&pred, &gt, &opts)?;
    report.warnings.splice(0..0, notes);
    if !req.spotting_gt.is_empty() {
        let (acc, images) = evaluate_spotting(
            &req.spotting_pred,
            &req.spotting_gt,
            opts.iou_threshold,
            DecodeOptions::default(),
        );
        report.summary.spotting_accuracy = acc;
        report.spotting = images;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRequest {
    pub ids: Vec<String>,
    pub vectors: Vec<Vec<f32>>,
    pub rollouts: HashMap<String, Vec<String>>,
    pub k: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    pub budget: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_samples")]
    pub samples_per_cluster: usize,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub redistribute: bool,
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}
fn default_beta() -> f64 {
    DEFAULT_BETA
}
fn default_samples() -> usize {
    DEFAULT_SAMPLES_PER_CLUSTER
}
fn default_max_iter() -> usize {
    DEFAULT_MAX_ITER
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResponse {
    #[serde(flatten)]
    pub plan: SamplingPlan,
    pub labels: Vec<usize>,
    pub inertia: f64,
    pub rollout_count: usize,
}

pub fn plan(req: &PlanRequest) -> Result<PlanResponse, ApiError> {
    let data = EmbeddingSet::new(req.ids.clone(), req.vectors.clone())?;
    let clusters: ClusterAssignment = kmeans(&data, req.k, req.seed, req.max_iter)?;
    let scores = uncertainty(&req.rollouts, &data.ids, &clusters, req.samples_per_cluster, req.seed)?;
    let plan = allocate(
        &scores.per_cluster,
        &clusters.sizes(),
        req.budget,
        req.alpha,
        req.beta,
        req.redistribute,
    )?;
    Ok(PlanResponse {
        plan,
        labels: clusters.labels,
        inertia: clusters.inertia,
        rollout_count: scores.rollout_count,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnstableRequest {
    pub low: BTreeMap<String, u32>,
    pub high: BTreeMap<String, u32>,
    pub delta: u32,
}

pub fn unstable(req: &UnstableRequest) -> Result<UnstableReport, ApiError> {
    if req.delta == 0 {
        return Err(ApiError::Invalid("delta must be positive".into()));
    }
    Ok(flag_unstable(&req.low, &req.high, req.delta)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRequest {
    pub pages: u64,
    /// Per-page prepare and layout latency, and per-batch recognition
    /// latency, in milliseconds.
    pub stage_latency_ms: [f64; 3],
    pub batch_capacity: usize,
    pub max_wait_ms: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub jitter_ms: f64,
    #[serde(default = "one")]
    pub blocks_per_page: u32,
    #[serde(default = "default_workers")]
    pub recognition_workers: usize,
    #[serde(default = "default_queue")]
    pub queue_capacity: usize,
}

fn one() -> u32 {
    1
}
fn default_workers() -> usize {
    crate::pipeline::DEFAULT_RECOGNITION_WORKERS
}
fn default_queue() -> usize {
    crate::pipeline::DEFAULT_QUEUE_CAPACITY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub pipelined: RunStats,
    pub sequential: RunStats,
    pub speedup: f64,
}

/// Runs the mock workload twice on virtual time: pipelined and sequential.
pub fn bench(req: &BenchRequest) -> Result<BenchReport, ApiError> {
    let [prep, layout, recog] = req.stage_latency_ms;
    let mock = MockConfig {
        prep_ms: prep,
        layout_ms: layout,
        recog_batch_ms: recog,
        recog_item_ms: 0.0,
        jitter_ms: req.jitter_ms,
        seed: req.seed,
        blocks_per_page: req.blocks_per_page,
        ..MockConfig::default()
    };
    let backend: Arc<dyn Backend> = Arc::new(MockBackend::new(mock).map_err(ApiError::Invalid)?);
    let policy = BatchPolicy::new(req.batch_capacity, Duration::from_millis(req.max_wait_ms)).map_err(ApiError::Invalid)?;
    let mut rt = RuntimeConfig {
        policy,
        queue_capacity: req.queue_capacity,
        recognition_workers: req.recognition_workers,
        mode: ExecutionMode::Pipelined,
    };
    let pipelined = run_blocking(MockBackend::pages(req.pages), backend.clone(), &rt, true)?.stats;
    rt.mode = ExecutionMode::Sequential;
    let sequential = run_blocking(MockBackend::pages(req.pages), backend, &rt, true)?.stats;
    let speedup = if sequential.pages_per_s > 0.0 {
        pipelined.pages_per_s / sequential.pages_per_s
    } else {
        0.0
    };
    Ok(BenchReport {
        pipelined,
        sequential,
        speedup,
    })
}

/// Parses `a,b,c` into three non-negative latencies.
pub fn parse_latencies(spec: &str) -> Result<[f64; 3], ApiError> {
    let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(ApiError::Invalid(format!("expected three latencies a,b,c, got {spec:?}")));
    }
    let mut out = [0.0; 3];
    for (slot, p) in out.iter_mut().zip(parts) {
        let v: f64 = p.parse().map_err(|_| ApiError::Invalid(format!("bad latency {p:?}")))?;
        if !(v >= 0.0 && v.is_finite()) {
            return Err(ApiError::Invalid(format!("latency must be non-negative, got {p}")));
        }
        *slot = v;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latency_spec() {
        assert_eq!(parse_latencies("10,20,15").unwrap(), [10.0, 20.0, 15.0]);
        assert!(parse_latencies("10,20").is_err());
        assert!(parse_latencies("10,-1,3").is_err());
        assert!(parse_latencies("a,b,c").is_err());
    }

    #[test]
    fn bench_is_seed_independent_without_jitter() {
        let mut req = BenchRequest {
            pages: 20,
            stage_latency_ms: [10.0, 20.0, 15.0],
            batch_capacity: 1,
            max_wait_ms: 0,
            seed: 1,
            jitter_ms: 0.0,
            blocks_per_page: 1,
            recognition_workers: 2,
            queue_capacity: 64,
        };
        let a = bench(&req).unwrap();
        req.seed = 99;
        assert_eq!(a, bench(&req).unwrap());
    }
}

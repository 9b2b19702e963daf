use std::sync::Arc;
use std::time::Duration;

use docparse_core::metrics::{evaluate_documents, EvalOptions};
use docparse_core::model::{Category, ContentPayload, LayoutElement, PageDocument, Polygon};
use docparse_core::pipeline::{
    run_blocking, Backend, BatchPolicy, ExecutionMode, MockBackend, MockConfig, PlaybackBackend, RunOutput,
    RuntimeConfig,
};
use proptest::prelude::*;

fn cfg(capacity: usize, wait_ms: u64) -> RuntimeConfig {
    RuntimeConfig {
        policy: BatchPolicy::new(capacity, Duration::from_millis(wait_ms)).unwrap(),
        ..RuntimeConfig::default()
    }
}

fn mock(m: MockConfig) -> Arc<dyn Backend> {
    Arc::new(MockBackend::new(m).unwrap())
}

fn latencies(a: f64, b: f64, c: f64) -> MockConfig {
    MockConfig {
        prep_ms: a,
        layout_ms: b,
        recog_batch_ms: c,
        ..MockConfig::default()
    }
}

fn simulate(pages: u64, backend: Arc<dyn Backend>, cfg: &RuntimeConfig) -> RunOutput {
    run_blocking(MockBackend::pages(pages), backend, cfg, true).unwrap()
}

#[test]
fn zero_pages() {
    let out = simulate(0, mock(MockConfig::default()), &cfg(4, 10));
    assert!(out.pages.is_empty());
    assert_eq!(out.stats.pages, 0);
    assert_eq!(out.stats.pages_per_s, 0.0);
    assert_eq!(out.stats.tokens_per_s, 0.0);
}

#[test]
fn pipelining_reaches_bottleneck_rate() {
    let backend = mock(latencies(10.0, 20.0, 15.0));
    let piped = simulate(100, backend.clone(), &cfg(1, 0)).stats;
    let mut seq_cfg = cfg(1, 0);
    seq_cfg.mode = ExecutionMode::Sequential;
    let seq = simulate(100, backend, &seq_cfg).stats;
    // bottleneck model: first page 10 + 20 + 15 ms, then one page per 20 ms
    let expected = 100.0 / 2.025;
    assert!((piped.pages_per_s - expected).abs() < 0.01 * expected, "{}", piped.pages_per_s);
    assert!((seq.pages_per_s - 1000.0 / 45.0).abs() < 0.01, "{}", seq.pages_per_s);
    assert!(piped.pages_per_s >= 0.9 * 50.0);
    assert!(piped.pages_per_s >= 1.8 * seq.pages_per_s);
}

#[test]
fn batching_cuts_backend_calls() {
    let m = MockConfig {
        recog_batch_ms: 5.0,
        ..MockConfig::default()
    };
    let b8 = simulate(64, mock(m.clone()), &cfg(8, 50)).stats;
    let b1 = simulate(64, mock(m), &cfg(1, 50)).stats;
    assert_eq!(b8.backend_calls.recognize, 8);
    assert_eq!(b1.backend_calls.recognize, 64);
    assert_eq!(b8.batch_histogram.get(&8), Some(&8));
}

#[test]
fn zero_latency_sanity_ceiling() {
    let out = run_blocking(MockBackend::pages(100), mock(MockConfig::default()), &cfg(16, 5), false).unwrap();
    assert_eq!(out.pages.len(), 100);
    assert!(out.stats.total_time_s < 2.0);
}

#[test]
fn same_seed_same_stats() {
    let m = MockConfig {
        jitter_ms: 7.0,
        seed: 42,
        blocks_per_page: 3,
        ..latencies(2.0, 4.0, 3.0)
    };
    let a = simulate(30, mock(m.clone()), &cfg(4, 5)).stats;
    let b = simulate(30, mock(m), &cfg(4, 5)).stats;
    assert_eq!(a.batch_histogram, b.batch_histogram);
    assert_eq!(a, b);
}

#[test]
fn failures_are_recorded_and_run_continues() {
    let m = MockConfig {
        fail_pages: vec![3, 7],
        ..latencies(1.0, 1.0, 1.0)
    };
    let out = simulate(10, mock(m), &cfg(4, 5));
    assert_eq!(out.pages.len(), 10);
    assert_eq!(out.stats.failed, 2);
    let failed: Vec<u64> = out.pages.iter().filter(|p| p.page().is_none()).map(|p| p.page_id).collect();
    assert_eq!(failed, vec![3, 7]);
}

fn gt_pages() -> Vec<PageDocument> {
    (0..3u32)
        .map(|p| {
            let mut page = PageDocument::new(p, 800, 1000);
            // geometry deliberately disagrees with reading order
            for (id, order) in [(0u32, 2u32), (1, 0), (2, 3), (3, 1)] {
                page.elements.push(LayoutElement {
                    id,
                    category: Category::Text,
                    polygon: Polygon::rect(10.0, 100.0 * f64::from(id) + 10.0, 700.0, 100.0 * f64::from(id) + 90.0),
                    confidence: 0.9,
                    order,
                    content: Some(ContentPayload::text(format!("p{p} e{id}"))),
                });
            }
            page
        })
        .collect()
}

fn parsed(out: &RunOutput) -> Vec<PageDocument> {
    out.pages.iter().map(|p| p.page().expect("parsed").clone()).collect()
}

#[test]
fn playback_identity() {
    let gt = gt_pages();
    let backend = PlaybackBackend::new(gt.clone());
    let pages = backend.descriptors();
    let out = run_blocking(pages, Arc::new(backend), &cfg(3, 1), false).unwrap();
    assert_eq!(parsed(&out), gt);
    let r = evaluate_documents(&parsed(&out), &gt, &EvalOptions::default()).unwrap();
    assert_eq!(r.summary.overall, 100.0);
    assert_eq!(r.summary.reading_order_edit, 0.0);
}

#[test]
fn playback_order_rebuilt_from_relations() {
    let gt = gt_pages();
    let backend = PlaybackBackend::new(gt.clone()).strip_order(true);
    let pages = backend.descriptors();
    let out = run_blocking(pages, Arc::new(backend), &cfg(3, 1), false).unwrap();
    assert_eq!(parsed(&out), gt);
    let r = evaluate_documents(&parsed(&out), &gt, &EvalOptions::default()).unwrap();
    assert_eq!(r.summary.reading_order_edit, 0.0);
}

#[test]
fn playback_stripped_without_relations_loses_order() {
    let gt = gt_pages();
    let backend = PlaybackBackend::new(gt.clone()).strip_order(false);
    let pages = backend.descriptors();
    let out = run_blocking(pages, Arc::new(backend), &cfg(3, 1), false).unwrap();
    let r = evaluate_documents(&parsed(&out), &gt, &EvalOptions::default()).unwrap();
    assert!(r.summary.reading_order_edit > 0.0);
}

#[test]
fn playback_missing_page_is_named() {
    let backend = PlaybackBackend::new(gt_pages());
    let mut pages = backend.descriptors();
    pages[1].page_index = 7;
    let out = run_blocking(pages, Arc::new(backend), &cfg(3, 1), false).unwrap();
    assert_eq!(out.stats.failed, 1);
    match &out.pages[1].outcome {
        docparse_core::pipeline::PageOutcome::Failed(msg) => assert!(msg.contains("page 7"), "{msg}"),
        other => panic!("{other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn delivery_order_and_batch_bounds(
        pages in 0u64..40,
        prep in 0.0f64..5.0, layout in 0.0f64..5.0, recog in 0.0f64..8.0,
        jitter in 0.0f64..4.0, seed in any::<u64>(),
        capacity in 1usize..6, wait in 0u64..12,
        queue in 1usize..4, workers in 1usize..3,
    ) {
        let m = MockConfig { jitter_ms: jitter, seed, ..latencies(prep, layout, recog) };
        let rt = RuntimeConfig {
            policy: BatchPolicy::new(capacity, Duration::from_millis(wait)).unwrap(),
            queue_capacity: queue,
            recognition_workers: workers,
            mode: ExecutionMode::Pipelined,
        };
        let out = simulate(pages, mock(m), &rt);
        let ids: Vec<u64> = out.pages.iter().map(|p| p.page_id).collect();
        prop_assert_eq!(ids, (0..pages).collect::<Vec<_>>());
        prop_assert!(out.stats.batch_histogram.keys().all(|&b| b <= capacity));
        prop_assert_eq!(out.stats.batched_items(), out.stats.items);
        prop_assert_eq!(out.stats.items, pages);
        // one service time of the slowest possible batch on top of max_wait,
        // plus the timer's 1 ms rounding
        let bound = (wait as f64 + recog + jitter + 1.0) / 1000.0 + 1e-9;
        prop_assert!(out.stats.max_queue_wait_s <= bound, "{} > {}", out.stats.max_queue_wait_s, bound);
    }
}

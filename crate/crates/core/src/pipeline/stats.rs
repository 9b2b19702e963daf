use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageBusy {
    pub prepare_s: f64,
    pub layout_s: f64,
    pub recognize_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BackendCalls {
    pub prepare: u64,
    pub layout: u64,
    pub recognize: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub total_time_s: f64,
    pub pages_per_s: f64,
    pub tokens_per_s: f64,
    pub pages: u64,
    pub failed: u64,
    pub tokens: u64,
    pub items: u64,
    pub stage_busy_s: StageBusy,
    pub backend_calls: BackendCalls,
    /// Batch size -> number of launched batches of that size.
    pub batch_histogram: BTreeMap<usize, u64>,
    /// Longest time any element spent queued before its batch launched.
    pub max_queue_wait_s: f64,
}

impl RunStats {
    /// Fills the rate fields; both are 0 when nothing ran.
    pub fn finish(&mut self, total_time_s: f64) {
        self.total_time_s = total_time_s;
        if self.pages == 0 || total_time_s <= 0.0 {
            self.pages_per_s = 0.0;
            self.tokens_per_s = 0.0;
        } else {
            self.pages_per_s = self.pages as f64 / total_time_s;
            self.tokens_per_s = self.tokens as f64 / total_time_s;
        }
    }

    pub fn batched_items(&self) -> u64 {
        self.batch_histogram.iter().map(|(&size, &n)| size as u64 * n).sum()
    }

    pub fn record_batch(&mut self, size: usize) {
        *self.batch_histogram.entry(size).or_default() += 1;
    }
}

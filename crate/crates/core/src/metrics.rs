//! Per-task and per-run measurement: transfer windows, moved bytes, link
//! utilization and stall attribution.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("cannot compute utilization over a zero-cycle window")]
    ZeroWindow,
    #[error("transfer never started (no first-issue cycle recorded)")]
    NeverStarted,
}

/// Why a frontend made no progress on a given cycle.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StallBreakdown {
    /// Reader or writer lost bank arbitration for every lane it offered.
    pub bank_conflict: u64,
    /// Reader stalled because the stream buffer had no credit.
    pub buffer_full: u64,
    /// Beat ready but the link lane was owned by another stream.
    pub link_backpressure: u64,
    /// Cycles spent before the data phase opened (setup and grant wait).
    pub cfg_phase: u64,
}

impl StallBreakdown {
    pub fn total(&self) -> u64 {
        self.bank_conflict + self.buffer_full + self.link_backpressure + self.cfg_phase
    }
}

/// Measurements for one transfer (or one batch observed end to end).
#[derive(Debug, Default, Clone, Serialize, Deserialize)]
pub struct Metrics {
    /// Cycle the first configuration beat (or local task start) issued.
    pub start_cycle: Option<u64>,
    /// Cycle the last destination word write was granted.
    pub end_cycle: Option<u64>,
    /// Payload bytes written at the destination.
    pub bytes_moved: u64,
    /// Link beats that carried payload data.
    pub data_beats: u64,
    /// Link beats spent on configuration, grant and finish signaling.
    pub ctrl_beats: u64,
    pub stalls: StallBreakdown,
}

impl Metrics {
    pub fn record_start(&mut self, cycle: u64) {
        if self.start_cycle.is_none() {
            self.start_cycle = Some(cycle);
        }
    }

    pub fn record_end(&mut self, cycle: u64) {
        self.end_cycle = Some(self.end_cycle.map_or(cycle, |e| e.max(cycle)));
    }

    /// Transfer window in cycles: first issue through last destination write,
    /// inclusive.
    pub fn window_cycles(&self) -> Result<u64, MetricsError> {
        let s = self.start_cycle.ok_or(MetricsError::NeverStarted)?;
        let e = self.end_cycle.ok_or(MetricsError::ZeroWindow)?;
        Ok(e - s + 1)
    }

    /// Achieved fraction of the link's peak bandwidth over the window.
    pub fn utilization(&self, beat_bytes: u64) -> Result<f64, MetricsError> {
        compute_utilization(self.bytes_moved, self.window_cycles()?, beat_bytes)
    }

    /// Destination words written per cycle over the window.
    pub fn words_per_cycle(&self, word_bytes: u64) -> Result<f64, MetricsError> {
        let w = self.window_cycles()?;
        if w == 0 {
            return Err(MetricsError::ZeroWindow);
        }
        Ok(self.bytes_moved as f64 / word_bytes as f64 / w as f64)
    }
}

/// Utilization = bytes moved / (cycles x bytes per cycle at full width).
pub fn compute_utilization(bytes: u64, cycles: u64, beat_bytes: u64) -> Result<f64, MetricsError> {
    if cycles == 0 {
        return Err(MetricsError::ZeroWindow);
    }
    Ok(bytes as f64 / (cycles as f64 * beat_bytes as f64))
}

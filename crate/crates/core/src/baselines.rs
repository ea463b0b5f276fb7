//! Reference cost models the streaming engine is measured against:
//!
//! * a software loop on a host core programming a chain of 2-D DMA
//!   descriptors (with a slow-core and a fast-core setup cost, serialized
//!   or pipelined against the transfers), and
//! * a local reshape unit that first copies the operand over the link
//!   unchanged and then rewrites it in destination memory.
//!
//! Both are closed-form: they count link beats and per-descriptor overhead
//! rather than simulating cycle by cycle, which is how such baselines are
//! conventionally budgeted.

use crate::config::BaselineConfig;
use crate::layout::LayoutSpec;

/// Descriptor decomposition of one layout transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DescriptorStats {
    /// 2-D descriptors needed to express the transform.
    pub descriptors: u64,
    /// Link transactions per descriptor; strided sides pay one transaction
    /// per row fragment, contiguous sides coalesce into full beats.
    pub beats_per_descriptor: u64,
    /// Total payload bytes.
    pub bytes: u64,
}

impl DescriptorStats {
    pub fn total_beats(&self) -> u64 {
        self.descriptors * self.beats_per_descriptor
    }
}

/// Contiguous run length, in bytes, that a layout offers within one row of
/// an `rows x cols` element matrix.
fn run_bytes(layout: LayoutSpec, cols: u64, elem: u64) -> u64 {
    match layout {
        LayoutSpec::RowMajor => cols * elem,
        LayoutSpec::Tiled { tn, .. } => tn * elem,
    }
}

/// Decomposes a layout transform into the 2-D descriptors a software DMA
/// loop would issue. A matched pair of layouts collapses to one contiguous
/// descriptor. Otherwise each descriptor covers an 8-row slab of the
/// widest run both layouts keep contiguous, with strided addressing on
/// each side.
pub fn descriptor_stats(
    src: LayoutSpec,
    dst: LayoutSpec,
    rows: u64,
    cols: u64,
    elem: u64,
    beat_bytes: u64,
) -> DescriptorStats {
    let bytes = rows * cols * elem;
    if src == dst {
        return DescriptorStats {
            descriptors: 1,
            beats_per_descriptor: bytes.div_ceil(beat_bytes),
            bytes,
        };
    }
    let rows_per_desc = 8u64.min(rows);
    let run = run_bytes(src, cols, elem).min(run_bytes(dst, cols, elem));
    let descriptors = (rows / rows_per_desc) * (cols * elem / run);
    let desc_bytes = rows_per_desc * run;
    // One transaction per row fragment on a strided side; a side whose
    // whole descriptor footprint is contiguous coalesces into beats. The
    // engine overlaps its read and write streams, so the slower side
    // bounds each descriptor.
    let side_txns = |layout: LayoutSpec| -> u64 {
        if run_bytes(layout, cols, elem) >= desc_bytes {
            desc_bytes.div_ceil(beat_bytes)
        } else {
            rows_per_desc * run.div_ceil(beat_bytes)
        }
    };
    DescriptorStats {
        descriptors,
        beats_per_descriptor: side_txns(src).max(side_txns(dst)),
        bytes,
    }
}

/// Cycles for the software descriptor loop: every descriptor pays its
/// setup before any data moves, unless setup is pipelined behind the
/// previous descriptor's transfer, in which case only the first setup is
/// exposed.
pub fn sw_loop_cycles(stats: &DescriptorStats, setup: u64, pipelined: bool) -> u64 {
    if pipelined {
        setup + stats.total_beats()
    } else {
        stats.descriptors * (setup + stats.beats_per_descriptor)
    }
}

/// Cycles for the copy-then-reshape unit: the operand crosses the link
/// contiguously (one beat per `beat_bytes`), then the local unit rewrites
/// it with `reshape_passes` memory passes at `reshape_throughput_words`
/// words per cycle.
pub fn accel_reshape_cycles(
    bytes: u64,
    word_bytes: u64,
    beat_bytes: u64,
    base: &BaselineConfig,
) -> u64 {
    let link = bytes.div_ceil(beat_bytes);
    let words = bytes.div_ceil(word_bytes);
    link + base.reshape_passes * words.div_ceil(base.reshape_throughput_words)
}

/// The three reference points for one transform, in cycles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BaselineCycles {
    /// Slow-core software loop, serialized setup.
    pub sw_slow: u64,
    /// Fast-core software loop, serialized setup.
    pub sw_fast: u64,
    /// Fast-core software loop with setup pipelined behind transfers.
    pub sw_pipelined: u64,
    /// Copy link-contiguously, reshape locally.
    pub accel: u64,
}

#[allow(clippy::too_many_arguments)]
pub fn baseline_cycles(
    src: LayoutSpec,
    dst: LayoutSpec,
    rows: u64,
    cols: u64,
    elem: u64,
    word_bytes: u64,
    beat_bytes: u64,
    base: &BaselineConfig,
) -> BaselineCycles {
    let stats = descriptor_stats(src, dst, rows, cols, elem, beat_bytes);
    BaselineCycles {
        sw_slow: sw_loop_cycles(&stats, base.sw_setup_slow, false),
        sw_fast: sw_loop_cycles(&stats, base.sw_setup_fast, false),
        sw_pipelined: sw_loop_cycles(&stats, base.sw_setup_fast, true),
        accel: accel_reshape_cycles(rows * cols * elem, word_bytes, beat_bytes, base),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const T88: LayoutSpec = LayoutSpec::Tiled { tm: 8, tn: 8 };
    const T832: LayoutSpec = LayoutSpec::Tiled { tm: 8, tn: 32 };

    #[test]
    fn matched_layouts_need_one_descriptor() {
        // 64 KiB row-major to row-major: one contiguous descriptor, one
        // beat per 64 bytes.
        let s = descriptor_stats(LayoutSpec::RowMajor, LayoutSpec::RowMajor, 128, 512, 1, 64);
        assert_eq!(s.descriptors, 1);
        assert_eq!(s.beats_per_descriptor, 1024);
        assert_eq!(sw_loop_cycles(&s, 400, false), 400 + 1024);
    }

    #[test]
    fn row_major_to_tiled_needs_one_descriptor_per_tile() {
        let s = descriptor_stats(LayoutSpec::RowMajor, T88, 512, 512, 1, 64);
        assert_eq!(s.descriptors, 4096, "one per 8x8 tile");
        // Eight strided 8-byte row fragments against one contiguous
        // 64-byte tile: the strided side dominates.
        assert_eq!(s.beats_per_descriptor, 8);
    }

    #[test]
    fn tiled_pair_splits_on_the_narrower_run() {
        let s = descriptor_stats(T88, T832, 256, 256, 1, 64);
        assert_eq!(s.descriptors, (256 / 8) * (256 / 8));
        assert_eq!(s.beats_per_descriptor, 8);
    }

    #[test]
    fn pipelined_issue_exposes_one_setup() {
        let s = descriptor_stats(LayoutSpec::RowMajor, T88, 512, 512, 1, 64);
        assert_eq!(sw_loop_cycles(&s, 20, true), 20 + 4096 * 8);
    }

    #[test]
    fn reshape_unit_pays_link_plus_two_passes() {
        let base = BaselineConfig::default();
        let bytes = 512 * 512;
        assert_eq!(
            accel_reshape_cycles(bytes, 8, 64, &base),
            4096 + 2 * 4096,
            "4096 link beats plus two 8-words-per-cycle passes"
        );
    }

    #[test]
    fn reference_points_keep_their_expected_ordering() {
        let base = BaselineConfig::default();
        let b = baseline_cycles(LayoutSpec::RowMajor, T88, 512, 512, 1, 8, 64, &base);
        assert!(
            b.sw_slow > b.sw_fast && b.sw_fast > b.sw_pipelined && b.sw_pipelined > b.accel,
            "{b:?}"
        );
    }
}

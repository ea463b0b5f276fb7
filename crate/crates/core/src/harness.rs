//! Benchmark harness: single measured transfers with a bit-exact reference
//! check, layout-transform sweeps with CSV output, the KV-cache transfer
//! scenarios, and seeded random task sets with an analytic completion
//! bound.

use crate::backend::XdmaCfg;
use crate::config::{ConfigError, SocConfig};
use crate::controller::{encode_csr, padded, ControllerError};
use crate::layout::{
    transform_pattern_pair, transpose_pattern_pair, AffinePattern, LayoutError, LayoutSpec,
};
use crate::mem::MemError;
use crate::metrics::StallBreakdown;
use crate::oracle::{ref_transform, ref_transpose};
use crate::plugin::{memset_ctrl, PluginChain};
use crate::sim::{SimError, Soc};
use crate::trace::Trace;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Mem(#[from] MemError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error("destination mismatch at byte {offset}: expected {expected:#04x}, got {got:#04x}")]
    OracleMismatch { offset: u64, expected: u8, got: u8 },
    #[error("unknown layout name {0:?} (expected mn, m8n8, m8n16 or m8n32)")]
    UnknownLayout(String),
    #[error("grid file: {0}")]
    GridFile(#[from] toml::de::Error),
    #[error("workload needs {need} bytes but a cluster holds {have}")]
    TooLarge { need: u64, have: u64 },
    #[error(
        "cluster {cluster} image diverges from the replay at byte {offset}: \
         expected {expected:#04x}, got {got:#04x}"
    )]
    ImageMismatch {
        cluster: usize,
        offset: u64,
        expected: u8,
        got: u8,
    },
    #[error("plugin chain replay stalled: no stage accepts input or yields output")]
    ReplayStall,
    #[error("task {0:#x} never completed")]
    Incomplete(u64),
}

/// One measured transfer, always cluster 0 to cluster 1 over the link.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Workload {
    /// Contiguous word copy.
    Copy { words: u64 },
    /// Layout transform of a `rows x cols` element matrix.
    Transform {
        src: LayoutSpec,
        dst: LayoutSpec,
        rows: u64,
        cols: u64,
        elem: u64,
    },
    /// Matrix transpose. Byte elements stream tile-walking patterns through
    /// the in-stream tile flip; word-wide elements use pure patterns.
    Transpose { rows: u64, cols: u64, elem: u64 },
}

impl Workload {
    pub fn bytes(&self) -> u64 {
        match *self {
            Workload::Copy { words } => words * 8,
            Workload::Transform { rows, cols, elem, .. } => rows * cols * elem,
            Workload::Transpose { rows, cols, elem } => rows * cols * elem,
        }
    }

    /// Source/destination stream patterns plus the reader plugin controls.
    fn patterns(
        &self,
        word: u64,
    ) -> Result<(AffinePattern, AffinePattern, Vec<u64>), HarnessError> {
        match *self {
            Workload::Copy { words } => Ok((
                AffinePattern::contiguous(words, word),
                AffinePattern::contiguous(words, word),
                vec![],
            )),
            Workload::Transform { src, dst, rows, cols, elem } => {
                let (sp, dp) = transform_pattern_pair(src, dst, rows, cols, elem, word)?;
                Ok((sp, dp, vec![]))
            }
            Workload::Transpose { rows, cols, elem } if elem == word => {
                let sp = AffinePattern::new(vec![rows, cols], vec![(cols * word) as i64, word as i64])?;
                let dp = AffinePattern::contiguous(rows * cols, word);
                Ok((sp, dp, vec![]))
            }
            Workload::Transpose { rows, cols, elem } => {
                let (sp, dp) = transpose_pattern_pair(rows, cols, elem, word)?;
                Ok((sp, dp, vec![1]))
            }
        }
    }

    /// Reference destination image for a given source image.
    fn expected(&self, src_img: &[u8]) -> Vec<u8> {
        match *self {
            Workload::Copy { .. } => src_img.to_vec(),
            Workload::Transform { src, dst, rows, cols, elem } => ref_transform(
                src.as_ref_layout(),
                dst.as_ref_layout(),
                rows as usize,
                cols as usize,
                elem as usize,
                src_img,
            ),
            Workload::Transpose { rows, cols, elem } => {
                let layout = if elem == 8 {
                    crate::oracle::RefLayout::RowMajor
                } else {
                    crate::oracle::RefLayout::Tiled { tm: 8, tn: 8 }
                };
                ref_transpose(layout, layout, rows as usize, cols as usize, elem as usize, src_img)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub seed: u64,
    /// Override both stream-buffer depths.
    pub dbuf: Option<usize>,
    pub trace: bool,
    pub cycle_budget: u64,
    /// Compare the destination image against the reference permutation.
    pub check: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            seed: 1,
            dbuf: None,
            trace: false,
            cycle_budget: 50_000_000,
            check: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub cycles: u64,
    pub window_cycles: u64,
    pub bytes: u64,
    pub utilization: f64,
    pub words_per_cycle: f64,
    pub data_beats: u64,
    pub ctrl_beats: u64,
    pub stalls: StallBreakdown,
    pub trace: Option<Trace>,
}

/// Runs one workload on a fresh system and measures its transfer window.
pub fn run_workload(
    base: &SocConfig,
    w: &Workload,
    opt: &RunOptions,
) -> Result<RunReport, HarnessError> {
    let mut cfg = base.clone();
    if let Some(d) = opt.dbuf {
        cfg.dbuf_src = d;
        cfg.dbuf_dst = d;
    }
    let bytes = w.bytes();
    if bytes > cfg.mem_size {
        return Err(HarnessError::TooLarge { need: bytes, have: cfg.mem_size });
    }
    let (sp, dp, reader_ctrl) = w.patterns(cfg.word_bytes())?;
    let src_base = cfg.mem_base_addrs[0];
    let dst_base = cfg.mem_base_addrs[1];
    let mut soc = Soc::new(cfg)?;
    if opt.trace {
        soc.enable_trace();
    }
    soc.mem_mut(0).fill_random(src_base, bytes, opt.seed)?;
    let task = XdmaCfg {
        task_id: soc.next_task_id(0),
        src_cluster: 0,
        dst_cluster: 1,
        src_base,
        dst_base,
        src_pattern: Some(sp),
        dst_pattern: Some(dp),
        reader_ctrl,
        writer_ctrl: vec![],
    };
    soc.submit(0, task)?;
    let cycles = soc.run_until_idle(opt.cycle_budget)?;
    if opt.check {
        let src_img = soc.mem(0).dump_image(src_base, bytes)?;
        let want = w.expected(&src_img);
        let got = soc.mem(1).dump_image(dst_base, bytes)?;
        if let Some(off) = want.iter().zip(&got).position(|(a, b)| a != b) {
            return Err(HarnessError::OracleMismatch {
                offset: off as u64,
                expected: want[off],
                got: got[off],
            });
        }
    }
    let beat_bytes = soc.cfg.beat_bytes();
    let word_bytes = soc.cfg.word_bytes();
    Ok(RunReport {
        cycles,
        window_cycles: soc.metrics.window_cycles().unwrap_or(0),
        bytes: soc.metrics.bytes_moved,
        utilization: soc.metrics.utilization(beat_bytes).unwrap_or(0.0),
        words_per_cycle: soc.metrics.words_per_cycle(word_bytes).unwrap_or(0.0),
        data_beats: soc.metrics.data_beats,
        ctrl_beats: soc.metrics.ctrl_beats,
        stalls: soc.metrics.stalls,
        trace: soc.trace.enabled.then(|| std::mem::take(&mut soc.trace)),
    })
}

// ---------------------------------------------------------------------
// Layout-transform sweep
// ---------------------------------------------------------------------

pub fn parse_layout(name: &str) -> Result<LayoutSpec, HarnessError> {
    match name.to_ascii_lowercase().as_str() {
        "mn" => Ok(LayoutSpec::RowMajor),
        "m8n8" => Ok(LayoutSpec::Tiled { tm: 8, tn: 8 }),
        "m8n16" => Ok(LayoutSpec::Tiled { tm: 8, tn: 16 }),
        "m8n32" => Ok(LayoutSpec::Tiled { tm: 8, tn: 32 }),
        _ => Err(HarnessError::UnknownLayout(name.to_string())),
    }
}

pub fn layout_name(l: LayoutSpec) -> String {
    match l {
        LayoutSpec::RowMajor => "mn".to_string(),
        LayoutSpec::Tiled { tm, tn } => format!("m{tm}n{tn}"),
    }
}

/// Serialized sweep description (TOML).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFile {
    pub layouts: Vec<String>,
    /// Keep src == dst pairs in the sweep (off by default: they measure
    /// plain copies, not transforms).
    #[serde(default)]
    pub include_identity: bool,
    pub sizes: Vec<(u64, u64)>,
    pub dbufs: Vec<usize>,
    #[serde(default = "default_elem")]
    pub elem_bytes: u64,
}

fn default_elem() -> u64 {
    1
}

#[derive(Debug, Clone)]
pub struct SweepGrid {
    pub pairs: Vec<(LayoutSpec, LayoutSpec)>,
    pub sizes: Vec<(u64, u64)>,
    pub dbufs: Vec<usize>,
    pub elem: u64,
}

impl SweepGrid {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let f: GridFile = toml::from_str(text)?;
        let layouts: Vec<LayoutSpec> = f
            .layouts
            .iter()
            .map(|s| parse_layout(s))
            .collect::<Result<_, _>>()?;
        let mut pairs = Vec::new();
        for &a in &layouts {
            for &b in &layouts {
                if a != b || f.include_identity {
                    pairs.push((a, b));
                }
            }
        }
        Ok(SweepGrid {
            pairs,
            sizes: f.sizes,
            dbufs: f.dbufs,
            elem: f.elem_bytes,
        })
    }

    pub fn points(&self) -> usize {
        self.pairs.len() * self.sizes.len()
    }
}

/// The desk-scale sweep: every ordered pair of distinct layouts over six
/// matrix shapes, at each stream-buffer depth.
pub fn desk_grid() -> SweepGrid {
    SweepGrid::from_toml(DESK_GRID_TOML).expect("built-in grid parses")
}

pub const DESK_GRID_TOML: &str = r#"
layouts = ["mn", "m8n8", "m8n16", "m8n32"]
sizes = [[32, 32], [64, 64], [128, 128], [256, 256], [64, 128], [128, 64]]
dbufs = [3, 5, 9]
elem_bytes = 1
"#;

/// The full-scale sweep grid shipped alongside (8x8 shapes per pair).
pub const FULL_GRID_TOML: &str = r#"
layouts = ["mn", "m8n8", "m8n16", "m8n32"]
sizes = [
    [32, 32], [32, 64], [32, 96], [32, 128], [32, 160], [32, 192], [32, 224], [32, 256],
    [64, 32], [64, 64], [64, 96], [64, 128], [64, 160], [64, 192], [64, 224], [64, 256],
    [96, 32], [96, 64], [96, 96], [96, 128], [96, 160], [96, 192], [96, 224], [96, 256],
    [128, 32], [128, 64], [128, 96], [128, 128], [128, 160], [128, 192], [128, 224], [128, 256],
    [160, 32], [160, 64], [160, 96], [160, 128], [160, 160], [160, 192], [160, 224], [160, 256],
    [192, 32], [192, 64], [192, 96], [192, 128], [192, 160], [192, 192], [192, 224], [192, 256],
    [224, 32], [224, 64], [224, 96], [224, 128], [224, 160], [224, 192], [224, 224], [224, 256],
    [256, 32], [256, 64], [256, 96], [256, 128], [256, 160], [256, 192], [256, 224], [256, 256],
]
dbufs = [3, 5, 9]
elem_bytes = 1
"#;

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub src: LayoutSpec,
    pub dst: LayoutSpec,
    pub rows: u64,
    pub cols: u64,
    /// One entry per swept buffer depth, grid order.
    pub utils: Vec<f64>,
    pub cycles: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub dbufs: Vec<usize>,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    /// Mean link utilization across all points at depth index `i`.
    pub fn avg_util(&self, i: usize) -> f64 {
        let n = self.rows.len() as f64;
        self.rows.iter().map(|r| r.utils[i]).sum::<f64>() / n
    }

    /// Standard deviation of utilization across points at depth index `i`.
    pub fn util_stddev(&self, i: usize) -> f64 {
        let mean = self.avg_util(i);
        let n = self.rows.len() as f64;
        (self.rows.iter().map(|r| (r.utils[i] - mean).powi(2)).sum::<f64>() / n).sqrt()
    }

    /// Stable CSV rendering: identical input, identical bytes.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("src_layout,dst_layout,rows,cols");
        for d in &self.dbufs {
            write!(out, ",util_d{d}").unwrap();
        }
        for d in &self.dbufs {
            write!(out, ",cycles_d{d}").unwrap();
        }
        out.push('\n');
        for r in &self.rows {
            write!(
                out,
                "{},{},{},{}",
                layout_name(r.src),
                layout_name(r.dst),
                r.rows,
                r.cols
            )
            .unwrap();
            for u in &r.utils {
                write!(out, ",{u:.6}").unwrap();
            }
            for c in &r.cycles {
                write!(out, ",{c}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Runs the whole grid; points run in parallel but results keep grid order.
pub fn run_sweep(base: &SocConfig, grid: &SweepGrid, seed: u64) -> Result<SweepResult, HarnessError> {
    let mut points = Vec::with_capacity(grid.points());
    for &(src, dst) in &grid.pairs {
        for &(rows, cols) in &grid.sizes {
            points.push((src, dst, rows, cols));
        }
    }
    let rows: Result<Vec<SweepRow>, HarnessError> = points
        .par_iter()
        .map(|&(src, dst, rows, cols)| {
            let w = Workload::Transform { src, dst, rows, cols, elem: grid.elem };
            let mut utils = Vec::with_capacity(grid.dbufs.len());
            let mut cycles = Vec::with_capacity(grid.dbufs.len());
            for &d in &grid.dbufs {
                let opt = RunOptions { seed, dbuf: Some(d), ..RunOptions::default() };
                let rep = run_workload(base, &w, &opt)?;
                utils.push(rep.utilization);
                cycles.push(rep.window_cycles);
            }
            Ok(SweepRow { src, dst, rows, cols, utils, cycles })
        })
        .collect();
    Ok(SweepResult { dbufs: grid.dbufs.clone(), rows: rows? })
}

// ---------------------------------------------------------------------
// KV-cache transfer scenarios
// ---------------------------------------------------------------------

/// The five KV-cache movement stages: two prefill-shape transforms and
/// three decode-time transposed loads of growing context length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KvStage {
    Prefill1,
    Prefill2,
    Load1,
    Load2,
    Load3,
}

impl KvStage {
    pub const ALL: [KvStage; 5] =
        [KvStage::Prefill1, KvStage::Prefill2, KvStage::Load1, KvStage::Load2, KvStage::Load3];

    pub fn name(self) -> &'static str {
        match self {
            KvStage::Prefill1 => "prefill1",
            KvStage::Prefill2 => "prefill2",
            KvStage::Load1 => "load1",
            KvStage::Load2 => "load2",
            KvStage::Load3 => "load3",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Default matrix shape (rows grow with context length on loads).
    pub fn default_shape(self) -> (u64, u64) {
        match self {
            KvStage::Prefill1 | KvStage::Prefill2 => (2048, 512),
            KvStage::Load1 => (2048, 512),
            KvStage::Load2 => (4096, 512),
            KvStage::Load3 => (8192, 512),
        }
    }

    pub fn workload(self, rows: u64, cols: u64) -> Workload {
        let t88 = LayoutSpec::Tiled { tm: 8, tn: 8 };
        match self {
            KvStage::Prefill1 => {
                Workload::Transform { src: t88, dst: LayoutSpec::RowMajor, rows, cols, elem: 1 }
            }
            KvStage::Prefill2 => {
                Workload::Transform { src: LayoutSpec::RowMajor, dst: t88, rows, cols, elem: 1 }
            }
            KvStage::Load1 | KvStage::Load2 | KvStage::Load3 => {
                Workload::Transpose { rows, cols, elem: 1 }
            }
        }
    }
}

// ---------------------------------------------------------------------
// Random task sets
// ---------------------------------------------------------------------

/// One host submission: which controller, when, and what.
#[derive(Debug, Clone)]
pub struct ScheduledTask {
    pub submit_at: u64,
    pub home: usize,
    pub cfg: XdmaCfg,
}

/// Bump allocator over each cluster's scratchpad, for carving
/// non-overlapping task windows.
struct Carver {
    next: Vec<u64>,
    limit: Vec<u64>,
}

impl Carver {
    fn new(cfg: &SocConfig) -> Self {
        Carver {
            next: cfg.mem_base_addrs.clone(),
            limit: cfg
                .mem_base_addrs
                .iter()
                .map(|b| b + cfg.mem_size)
                .collect(),
        }
    }

    fn alloc(&mut self, cluster: usize, bytes: u64) -> Option<u64> {
        let aligned = bytes.div_ceil(64) * 64;
        let at = self.next[cluster];
        if at + aligned > self.limit[cluster] {
            return None;
        }
        self.next[cluster] = at + aligned;
        Some(at)
    }
}

/// Draws a random schedule of 1..=6 tasks: mixed local/remote endpoints,
/// contiguous/strided/blocked patterns, an occasional generator-only task,
/// random initiators and staggered submission times. Returns the schedule
/// sorted by submission cycle.
pub fn random_task_set(cfg: &SocConfig, seed: u64) -> Vec<ScheduledTask> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut carver = Carver::new(cfg);
    let n_tasks = rng.random_range(1..=6);
    let word = cfg.word_bytes();
    let mut out = Vec::new();
    let mut submit_at = 0u64;
    for i in 0..n_tasks {
        let src_cluster = rng.random_range(0..cfg.num_clusters);
        let dst_cluster = rng.random_range(0..cfg.num_clusters);
        let words = 8 * rng.random_range(1..=64) as u64; // 8..=512 words
        let generator = rng.random_range(0..8) == 0;
        // Destination: contiguous or word-strided.
        let (dst_pattern, dst_extent) = if rng.random_bool(0.7) {
            (AffinePattern::contiguous(words, word), words * word)
        } else {
            let stride = word * rng.random_range(2..=4) as u64;
            (
                AffinePattern::new(vec![words], vec![stride as i64]).unwrap(),
                words * stride,
            )
        };
        let Some(dst_base) = carver.alloc(dst_cluster, dst_extent) else { break };
        let (src_pattern, src_base, writer_ctrl) = if generator {
            (None, 0u64, vec![memset_ctrl((i as u8) << 4 | 0x5, words as u32)])
        } else {
            let (p, extent) = match rng.random_range(0..3) {
                0 => (AffinePattern::contiguous(words, word), words * word),
                1 => {
                    let stride = word * rng.random_range(2..=4) as u64;
                    (
                        AffinePattern::new(vec![words], vec![stride as i64]).unwrap(),
                        words * stride,
                    )
                }
                _ => {
                    let inner = 8u64;
                    let outer = words / inner;
                    let row = word * rng.random_range(8..=16) as u64;
                    (
                        AffinePattern::new(
                            vec![outer, inner],
                            vec![row as i64, word as i64],
                        )
                        .unwrap(),
                        outer * row,
                    )
                }
            };
            let Some(base) = carver.alloc(src_cluster, extent) else { break };
            (Some(p), base, vec![])
        };
        let home = rng.random_range(0..cfg.num_clusters);
        submit_at += rng.random_range(0..60) as u64;
        out.push(ScheduledTask {
            submit_at,
            home,
            cfg: XdmaCfg {
                task_id: (home as u64) << 32 | i as u64,
                src_cluster: if generator { home } else { src_cluster },
                dst_cluster,
                src_base,
                dst_base,
                src_pattern,
                dst_pattern: Some(dst_pattern),
                reader_ctrl: vec![],
                writer_ctrl,
            },
        });
    }
    out
}

/// Worst-case completion bound for a schedule: every word pays full link
/// latency with no overlap, plus per-task handshake and drain allowances.
pub fn analytic_bound(cfg: &SocConfig, tasks: &[ScheduledTask]) -> u64 {
    let total_words: u64 = tasks.iter().map(|t| t.cfg.dst_words()).sum();
    let last_submit = tasks.iter().map(|t| t.submit_at).max().unwrap_or(0);
    last_submit + total_words * (1 + cfg.axi_latency) + 300 * tasks.len() as u64 + 1000
}

/// Plays a schedule against a fresh system, retrying FIFO-full submissions
/// on later cycles, and returns the cycle count at idle. Fails if the
/// analytic bound is exceeded.
pub fn run_task_set(cfg: &SocConfig, tasks: &[ScheduledTask]) -> Result<u64, HarnessError> {
    let bound = analytic_bound(cfg, tasks);
    let mut soc = Soc::new(cfg.clone())?;
    let mut pending: std::collections::VecDeque<ScheduledTask> =
        tasks.iter().cloned().collect();
    while !(pending.is_empty() && soc.idle()) {
        if soc.cycle() > bound {
            return Err(SimError::CycleBudget { budget: bound }.into());
        }
        while pending.front().is_some_and(|t| t.submit_at <= soc.cycle()) {
            let t = pending.front().expect("checked").clone();
            match soc.submit(t.home, t.cfg.clone()) {
                Ok(()) => {
                    pending.pop_front();
                }
                Err(SimError::Controller(
                    crate::controller::ControllerError::FifoFull(_),
                )) => break, // retry after stepping
                Err(e) => return Err(e.into()),
            }
        }
        soc.step()?;
    }
    Ok(soc.cycle())
}

// ---------------------------------------------------------------------
// Task files and verified schedule playback
// ---------------------------------------------------------------------

/// One transfer in a task file. Cluster endpoints are derived from the base
/// addresses; omitting the source side makes the task generator-only (the
/// writer chain must then produce the stream, e.g. via a memset control
/// word).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskEntry {
    /// Earliest submission cycle.
    #[serde(default)]
    pub submit_at: u64,
    /// Submitting controller. Defaults to the source cluster (destination
    /// cluster for generator tasks).
    #[serde(default)]
    pub home: Option<usize>,
    #[serde(default)]
    pub src_base: Option<u64>,
    pub dst_base: u64,
    /// Innermost dimension first, counts in words.
    #[serde(default)]
    pub src_bounds: Vec<u64>,
    /// Signed byte strides, innermost first.
    #[serde(default)]
    pub src_strides: Vec<i64>,
    pub dst_bounds: Vec<u64>,
    pub dst_strides: Vec<i64>,
    #[serde(default)]
    pub reader_ctrl: Vec<u64>,
    #[serde(default)]
    pub writer_ctrl: Vec<u64>,
}

impl TaskEntry {
    /// Resolves addresses to clusters and builds the submission.
    pub fn to_scheduled(&self, cfg: &SocConfig) -> Result<ScheduledTask, HarnessError> {
        let unknown =
            |a: u64| HarnessError::Sim(SimError::Controller(ControllerError::UnknownCluster(a)));
        let dst_cluster = cfg
            .cluster_of_addr(self.dst_base)
            .ok_or_else(|| unknown(self.dst_base))?;
        let (src_pattern, src_cluster, src_base) = match self.src_base {
            Some(base) => {
                let c = cfg.cluster_of_addr(base).ok_or_else(|| unknown(base))?;
                let p = AffinePattern::new(self.src_bounds.clone(), self.src_strides.clone())?;
                (Some(p), c, base)
            }
            None => (None, self.home.unwrap_or(dst_cluster), 0),
        };
        let dst_pattern = AffinePattern::new(self.dst_bounds.clone(), self.dst_strides.clone())?;
        let home = self.home.unwrap_or(src_cluster);
        Ok(ScheduledTask {
            submit_at: self.submit_at,
            home,
            cfg: XdmaCfg {
                task_id: 0, // assigned at submission
                src_cluster,
                dst_cluster,
                src_base,
                dst_base: self.dst_base,
                src_pattern,
                dst_pattern: Some(dst_pattern),
                reader_ctrl: self.reader_ctrl.clone(),
                writer_ctrl: self.writer_ctrl.clone(),
            },
        })
    }
}

/// A TOML schedule: `[[tasks]]` entries, played in file order.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskFile {
    pub tasks: Vec<TaskEntry>,
}

impl TaskFile {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_schedule(&self, cfg: &SocConfig) -> Result<Vec<ScheduledTask>, HarnessError> {
        self.tasks.iter().map(|t| t.to_scheduled(cfg)).collect()
    }
}

/// Plays a schedule on a live system through the CSR register path,
/// retrying FIFO-full submissions on later cycles, then steps until idle.
/// Returns the assigned task ids in submission order.
pub fn play_schedule(
    soc: &mut Soc,
    tasks: &[ScheduledTask],
    budget: u64,
) -> Result<Vec<u64>, HarnessError> {
    let mut ids = Vec::with_capacity(tasks.len());
    let mut pending: std::collections::VecDeque<&ScheduledTask> = tasks.iter().collect();
    let start = soc.cycle();
    while !(pending.is_empty() && soc.idle()) {
        if soc.cycle() - start > budget {
            return Err(SimError::CycleBudget { budget }.into());
        }
        while pending
            .front()
            .is_some_and(|t| t.submit_at <= soc.cycle() - start)
        {
            let t = pending.front().expect("checked");
            let writes = encode_csr(&t.cfg).map_err(SimError::from)?;
            match soc.submit_csr(t.home, &writes) {
                Ok(id) => {
                    ids.push(id);
                    pending.pop_front();
                }
                Err(SimError::Controller(ControllerError::FifoFull(_))) => break,
                Err(e) => return Err(e.into()),
            }
        }
        soc.step()?;
    }
    Ok(ids)
}

/// Pushes `input` through a plugin chain functionally (no cycle costs) and
/// collects the full output stream.
fn pump_chain(mut chain: PluginChain, input: &[u64]) -> Result<Vec<u64>, HarnessError> {
    if chain.is_empty() {
        return Ok(input.to_vec());
    }
    let want = chain.output_len(input.len() as u64).map_err(SimError::from)? as usize;
    let mut out = Vec::with_capacity(want);
    let mut fed = 0;
    while out.len() < want {
        let mut progress = false;
        while fed < input.len() && chain.can_accept() {
            chain.push(input[fed]);
            fed += 1;
            progress = true;
        }
        chain.tick();
        while let Some(w) = chain.pop_ready() {
            out.push(w);
            progress = true;
        }
        if !progress {
            return Err(HarnessError::ReplayStall);
        }
    }
    chain.finish_input().map_err(SimError::from)?;
    Ok(out)
}

/// Applies one task to the shadow images: gather source words, run both
/// plugin chains functionally, scatter to the destination.
fn replay_task(
    cfg: &SocConfig,
    task: &XdmaCfg,
    shadow: &mut [Vec<u8>],
) -> Result<(), HarnessError> {
    let src_words: Vec<u64> = match &task.src_pattern {
        Some(p) => {
            let img = &shadow[task.src_cluster];
            let base = (task.src_base - cfg.mem_base_addrs[task.src_cluster]) as i64;
            p.iter_offsets()
                .map(|off| {
                    let at = (base + off) as usize;
                    u64::from_le_bytes(img[at..at + 8].try_into().expect("word"))
                })
                .collect()
        }
        None => Vec::new(),
    };
    let reader = PluginChain::build(
        &cfg.ext_src,
        &padded(&task.reader_ctrl, cfg.ext_src.len()),
        cfg.nchan_src,
    )
    .map_err(SimError::from)?;
    let mid = pump_chain(reader, &src_words)?;
    let writer = PluginChain::build(
        &cfg.ext_dst,
        &padded(&task.writer_ctrl, cfg.ext_dst.len()),
        cfg.nchan_dst,
    )
    .map_err(SimError::from)?;
    let out = pump_chain(writer, &mid)?;
    let dstp = task.dst_pattern.as_ref().expect("destination validated");
    let img = &mut shadow[task.dst_cluster];
    let base = (task.dst_base - cfg.mem_base_addrs[task.dst_cluster]) as i64;
    for (off, w) in dstp.iter_offsets().zip(&out) {
        let at = (base + off) as usize;
        img[at..at + 8].copy_from_slice(&w.to_le_bytes());
    }
    Ok(())
}

/// Outcome of [`verify_schedule`].
#[derive(Debug, Clone, Copy)]
pub struct VerifyReport {
    pub tasks: usize,
    pub cycles: u64,
}

/// Runs a schedule against scratchpads pre-filled from `seed`, then checks
/// every cluster image against a functional replay of the tasks applied in
/// completion order. Schedules whose tasks race on overlapping regions are
/// not replayable; keep concurrently live windows disjoint.
pub fn verify_schedule(
    cfg: &SocConfig,
    tasks: &[ScheduledTask],
    seed: u64,
    budget: u64,
) -> Result<VerifyReport, HarnessError> {
    let mut soc = Soc::new(cfg.clone())?;
    let mut shadow = Vec::with_capacity(cfg.num_clusters);
    for c in 0..cfg.num_clusters {
        let base = cfg.mem_base_addrs[c];
        soc.mem_mut(c)
            .fill_random(base, cfg.mem_size, seed.wrapping_add(c as u64))?;
        shadow.push(soc.mem(c).dump_image(base, cfg.mem_size)?);
    }
    let ids = play_schedule(&mut soc, tasks, budget)?;
    let mut order: Vec<(u64, usize)> = Vec::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        let done = *soc
            .completed
            .get(id)
            .ok_or(HarnessError::Incomplete(*id))?;
        order.push((done, i));
    }
    order.sort_unstable();
    for (_, i) in order {
        replay_task(cfg, &tasks[i].cfg, &mut shadow)?;
    }
    for (c, sh) in shadow.iter().enumerate() {
        let img = soc.mem(c).dump_image(cfg.mem_base_addrs[c], cfg.mem_size)?;
        if img != *sh {
            let off = img
                .iter()
                .zip(sh)
                .position(|(a, b)| a != b)
                .expect("images differ");
            return Err(HarnessError::ImageMismatch {
                cluster: c,
                offset: off as u64,
                expected: sh[off],
                got: img[off],
            });
        }
    }
    Ok(VerifyReport {
        tasks: tasks.len(),
        cycles: soc.cycle(),
    })
}

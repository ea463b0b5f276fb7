//! Half-unit controller: CSR instruction decoding, task validation, config
//! routing and the in-order task FIFO.
//!
//! A host programs one task as a stream of 32-bit CSR writes ending in a
//! commit. The controller decodes that into an [`XdmaCfg`], validates it
//! against the system config, and routes each half to the cluster owning the
//! addressed memory: local halves go onto that frontend's task FIFO, remote
//! halves travel as serialized cfg beats. When neither half is local, the
//! whole cfg is forwarded to the source cluster's controller, which routes
//! it again from there.

use crate::backend::XdmaCfg;
use crate::config::SocConfig;
use crate::frontend::Role;
use crate::layout::{AffinePattern, LayoutError};
use crate::plugin::{PluginChain, PluginError};
use std::collections::VecDeque;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ControllerError {
    #[error("missing field {0}")]
    MissingField(&'static str),
    #[error("instruction stream ended without a commit write")]
    NoCommit,
    #[error("{side} pattern has {got} dimensions but the frontend supports {max}")]
    DimBudget {
        side: &'static str,
        got: usize,
        max: usize,
    },
    #[error("address {0:#x} is not in any cluster's memory range")]
    UnknownCluster(u64),
    #[error("{side} pattern reaches {addr:#x}, outside its cluster's memory")]
    PatternRange { side: &'static str, addr: u64 },
    #[error("task FIFO full (depth {0}); submission backpressured")]
    FifoFull(usize),
    #[error("task produces {produced} words but the destination pattern consumes {expected}")]
    WordMismatch { produced: u64, expected: u64 },
    #[error("empty task: no words produced and none consumed")]
    EmptyTask,
    #[error(transparent)]
    Plugin(#[from] PluginError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error("{what} {value:#x} does not fit the 32-bit CSR encoding")]
    CsrOverflow { what: &'static str, value: u64 },
}

/// One CSR write: register index and value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CsrWrite {
    pub index: u16,
    pub value: u32,
}

// CSR register map (32-bit registers).
pub const CSR_SRC_BASE_LO: u16 = 0x00;
pub const CSR_SRC_BASE_HI: u16 = 0x01;
pub const CSR_DST_BASE_LO: u16 = 0x02;
pub const CSR_DST_BASE_HI: u16 = 0x03;
pub const CSR_SRC_NDIMS: u16 = 0x04;
pub const CSR_DST_NDIMS: u16 = 0x05;
pub const CSR_READER_CTRL_COUNT: u16 = 0x06;
pub const CSR_WRITER_CTRL_COUNT: u16 = 0x07;
/// `0x10 + i`: source bound of dimension `i` (innermost first).
pub const CSR_SRC_BOUND: u16 = 0x10;
/// `0x20 + i`: source stride of dimension `i`, signed bytes.
pub const CSR_SRC_STRIDE: u16 = 0x20;
pub const CSR_DST_BOUND: u16 = 0x30;
pub const CSR_DST_STRIDE: u16 = 0x40;
/// `0x50 + 2i` / `0x50 + 2i + 1`: reader plugin ctrl word i, lo/hi halves.
pub const CSR_READER_CTRL: u16 = 0x50;
pub const CSR_WRITER_CTRL: u16 = 0x60;
pub const CSR_COMMIT: u16 = 0x7F;

const MAX_CSR_DIMS: usize = 16;
const MAX_CSR_CTRLS: usize = 8;

/// Encodes a cfg as the CSR write stream that reproduces it (commit last).
pub fn encode_csr(cfg: &XdmaCfg) -> Result<Vec<CsrWrite>, ControllerError> {
    let mut w = Vec::new();
    let mut push = |index: u16, value: u32| w.push(CsrWrite { index, value });
    push(CSR_SRC_BASE_LO, cfg.src_base as u32);
    push(CSR_SRC_BASE_HI, (cfg.src_base >> 32) as u32);
    push(CSR_DST_BASE_LO, cfg.dst_base as u32);
    push(CSR_DST_BASE_HI, (cfg.dst_base >> 32) as u32);
    for (side, pat, bound_reg, stride_reg, ndims_reg) in [
        ("src", &cfg.src_pattern, CSR_SRC_BOUND, CSR_SRC_STRIDE, CSR_SRC_NDIMS),
        ("dst", &cfg.dst_pattern, CSR_DST_BOUND, CSR_DST_STRIDE, CSR_DST_NDIMS),
    ] {
        // An absent half (e.g. a generator-only task with no source stream)
        // encodes as zero dimensions.
        let Some(pat) = pat else {
            push(ndims_reg, 0);
            continue;
        };
        push(ndims_reg, pat.ndims() as u32);
        for (i, (&b, &s)) in pat.bounds.iter().zip(&pat.strides).enumerate() {
            if b > u32::MAX as u64 {
                return Err(ControllerError::CsrOverflow {
                    what: "bound",
                    value: b,
                });
            }
            if s > i32::MAX as i64 || s < i32::MIN as i64 {
                return Err(ControllerError::CsrOverflow {
                    what: "stride",
                    value: s as u64,
                });
            }
            push(bound_reg + i as u16, b as u32);
            push(stride_reg + i as u16, s as i32 as u32);
        }
        let _ = side;
    }
    push(CSR_READER_CTRL_COUNT, cfg.reader_ctrl.len() as u32);
    push(CSR_WRITER_CTRL_COUNT, cfg.writer_ctrl.len() as u32);
    for (i, &c) in cfg.reader_ctrl.iter().enumerate() {
        push(CSR_READER_CTRL + 2 * i as u16, c as u32);
        push(CSR_READER_CTRL + 2 * i as u16 + 1, (c >> 32) as u32);
    }
    for (i, &c) in cfg.writer_ctrl.iter().enumerate() {
        push(CSR_WRITER_CTRL + 2 * i as u16, c as u32);
        push(CSR_WRITER_CTRL + 2 * i as u16 + 1, (c >> 32) as u32);
    }
    push(CSR_COMMIT, 1);
    Ok(w)
}

/// Decodes a CSR write stream (through its commit) into a cfg with the
/// given fresh task id, for the controller on cluster `home`. Fields written
/// twice take the last value; required fields are reported by name when
/// missing. A side with zero dimensions is an absent half (e.g. a
/// generator-only task with no source stream); its address is ignored and
/// the degenerate endpoint runs at `home`.
pub fn decode_csr(
    writes: &[CsrWrite],
    soc: &SocConfig,
    home: usize,
    task_id: u64,
) -> Result<XdmaCfg, ControllerError> {
    let mut regs = std::collections::BTreeMap::new();
    let mut committed = false;
    for w in writes {
        if w.index == CSR_COMMIT {
            committed = true;
            break;
        }
        regs.insert(w.index, w.value);
    }
    if !committed {
        return Err(ControllerError::NoCommit);
    }
    let get = |idx: u16| regs.get(&idx).copied();
    let require = |idx: u16, name: &'static str| get(idx).ok_or(ControllerError::MissingField(name));

    let read_pattern = |ndims: usize,
                        bound_reg: u16,
                        stride_reg: u16,
                        max: usize,
                        side: &'static str|
     -> Result<AffinePattern, ControllerError> {
        if ndims > max.min(MAX_CSR_DIMS) {
            return Err(ControllerError::DimBudget {
                side,
                got: ndims,
                max,
            });
        }
        let mut bounds = Vec::with_capacity(ndims);
        let mut strides = Vec::with_capacity(ndims);
        for i in 0..ndims {
            bounds.push(require(bound_reg + i as u16, "pattern bound")? as u64);
            strides.push(require(stride_reg + i as u16, "pattern stride")? as i32 as i64);
        }
        Ok(AffinePattern::new(bounds, strides)?)
    };

    let src_nd = require(CSR_SRC_NDIMS, "src_ndims")? as usize;
    let dst_nd = require(CSR_DST_NDIMS, "dst_ndims")? as usize;
    let src_base = if src_nd > 0 {
        (require(CSR_SRC_BASE_LO, "src_base")? as u64)
            | ((get(CSR_SRC_BASE_HI).unwrap_or(0) as u64) << 32)
    } else {
        0
    };
    let dst_base = if dst_nd > 0 {
        (require(CSR_DST_BASE_LO, "dst_base")? as u64)
            | ((get(CSR_DST_BASE_HI).unwrap_or(0) as u64) << 32)
    } else {
        0
    };
    let src_pattern = if src_nd > 0 {
        Some(read_pattern(src_nd, CSR_SRC_BOUND, CSR_SRC_STRIDE, soc.dim_src, "src")?)
    } else {
        None
    };
    let dst_pattern = if dst_nd > 0 {
        Some(read_pattern(dst_nd, CSR_DST_BOUND, CSR_DST_STRIDE, soc.dim_dst, "dst")?)
    } else {
        None
    };

    let read_ctrls = |count_reg: u16, base_reg: u16| -> Vec<u64> {
        let n = (get(count_reg).unwrap_or(0) as usize).min(MAX_CSR_CTRLS);
        (0..n)
            .map(|i| {
                let lo = get(base_reg + 2 * i as u16).unwrap_or(0) as u64;
                let hi = get(base_reg + 2 * i as u16 + 1).unwrap_or(0) as u64;
                lo | (hi << 32)
            })
            .collect()
    };

    let src_cluster = if src_pattern.is_some() {
        soc.cluster_of_addr(src_base)
            .ok_or(ControllerError::UnknownCluster(src_base))?
    } else {
        home
    };
    let dst_cluster = if dst_pattern.is_some() {
        soc.cluster_of_addr(dst_base)
            .ok_or(ControllerError::UnknownCluster(dst_base))?
    } else {
        home
    };

    Ok(XdmaCfg {
        task_id,
        src_cluster,
        dst_cluster,
        src_base,
        dst_base,
        src_pattern,
        dst_pattern,
        reader_ctrl: read_ctrls(CSR_READER_CTRL_COUNT, CSR_READER_CTRL),
        writer_ctrl: read_ctrls(CSR_WRITER_CTRL_COUNT, CSR_WRITER_CTRL),
    })
}

/// Full-task validation: pattern alignment and range, dimension budgets, and
/// word-count conservation through the plugin chains.
pub fn validate_task(cfg: &XdmaCfg, soc: &SocConfig) -> Result<(), ControllerError> {
    let word = soc.word_bytes();
    for (side, base, pat, max_dims, cluster) in [
        ("src", cfg.src_base, &cfg.src_pattern, soc.dim_src, cfg.src_cluster),
        ("dst", cfg.dst_base, &cfg.dst_pattern, soc.dim_dst, cfg.dst_cluster),
    ] {
        let Some(pat) = pat else { continue };
        pat.check(max_dims, word)?;
        if base % word != 0 {
            return Err(ControllerError::PatternRange { side, addr: base });
        }
        let (lo, hi) = pat.offset_extent();
        let (clo, chi) = soc.cluster_range(cluster);
        let first = base.wrapping_add_signed(lo);
        let last = base.wrapping_add_signed(hi);
        if first < clo || last + word > chi {
            return Err(ControllerError::PatternRange {
                side,
                addr: if first < clo { first } else { last },
            });
        }
    }
    // A task with nothing to write moves zero bytes.
    if cfg.dst_pattern.is_none() {
        return Err(ControllerError::EmptyTask);
    }
    // Words out of the reader chain must match what the writer chain needs
    // to satisfy the destination pattern.
    let reader_chain = PluginChain::build(&soc.ext_src, &padded(&cfg.reader_ctrl, soc.ext_src.len()), soc.nchan_src)?;
    let writer_chain = PluginChain::build(&soc.ext_dst, &padded(&cfg.writer_ctrl, soc.ext_dst.len()), soc.nchan_dst)?;
    let produced = writer_chain.output_len(reader_chain.output_len(cfg.src_words())?)?;
    let expected = cfg.dst_words();
    if produced != expected {
        return Err(ControllerError::WordMismatch { produced, expected });
    }
    if produced == 0 && expected == 0 && cfg.src_words() == 0 {
        return Err(ControllerError::EmptyTask);
    }
    Ok(())
}

/// Pads a ctrl list with zeros (disabled) to the chain's stage count, so
/// tasks may omit trailing disabled stages.
pub fn padded(ctrl: &[u64], stages: usize) -> Vec<u64> {
    let mut v = ctrl.to_vec();
    v.resize(stages.max(v.len()), 0);
    v
}

/// Where one task's halves must go, from the point of view of the
/// controller at `home`.
#[derive(Debug, PartialEq)]
pub enum RoutedHalf {
    /// Half executes on this cluster's frontend.
    Local { role: Role, half: XdmaCfg },
    /// Half belongs to a remote cluster; send as cfg beats.
    Remote { to_cluster: usize, half: XdmaCfg },
    /// Neither half is local: forward the whole cfg to the source cluster's
    /// controller and let it route.
    Forward { to_cluster: usize, cfg: XdmaCfg },
}

pub fn route(cfg: &XdmaCfg, home: usize) -> Vec<RoutedHalf> {
    let src_local = cfg.src_cluster == home;
    let dst_local = cfg.dst_cluster == home;
    if !src_local && !dst_local {
        return vec![RoutedHalf::Forward {
            to_cluster: cfg.src_cluster,
            cfg: cfg.clone(),
        }];
    }
    let mut out = Vec::new();
    if src_local {
        out.push(RoutedHalf::Local {
            role: Role::Reader,
            half: cfg.reader_half(),
        });
    } else {
        out.push(RoutedHalf::Remote {
            to_cluster: cfg.src_cluster,
            half: cfg.reader_half(),
        });
    }
    if dst_local {
        out.push(RoutedHalf::Local {
            role: Role::Writer,
            half: cfg.writer_half(),
        });
    } else {
        out.push(RoutedHalf::Remote {
            to_cluster: cfg.dst_cluster,
            half: cfg.writer_half(),
        });
    }
    out
}

/// Bounded in-order task queue for one frontend.
pub struct TaskFifo {
    depth: usize,
    q: VecDeque<XdmaCfg>,
}

impl TaskFifo {
    pub fn new(depth: usize) -> Self {
        TaskFifo {
            depth,
            q: VecDeque::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn push(&mut self, cfg: XdmaCfg) -> Result<(), ControllerError> {
        if self.q.len() == self.depth {
            return Err(ControllerError::FifoFull(self.depth));
        }
        self.q.push_back(cfg);
        Ok(())
    }

    pub fn peek(&self) -> Option<&XdmaCfg> {
        self.q.front()
    }

    pub fn pop(&mut self) -> Option<XdmaCfg> {
        self.q.pop_front()
    }

    /// Queued entries, oldest first, for scoreboard-style dispatch scans.
    pub fn iter(&self) -> impl Iterator<Item = &XdmaCfg> {
        self.q.iter()
    }

    /// Removes the entry at queue position `i` (0 = oldest).
    pub fn remove(&mut self, i: usize) -> Option<XdmaCfg> {
        self.q.remove(i)
    }
}

/// Task-id allocator: ids carry the issuing cluster in the high half and a
/// per-controller sequence below, so ids are unique across clusters and
/// dispatch order is visible in the id.
pub fn make_task_id(cluster: usize, seq: u64) -> u64 {
    ((cluster as u64) << 32) | (seq & 0xFFFF_FFFF)
}

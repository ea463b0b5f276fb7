//! Tunnel backend: task configuration records, their versioned wire
//! encoding, beat packing/unpacking, MMIO message addressing and the
//! per-task tunnel state machine.
//!
//! Everything crossing the link is a write beat aimed at one of four MMIO
//! mailbox addresses per cluster (cfg, data, grant, finish). A transfer runs
//! in two phases: the configuration phase delivers the serialized task to
//! the remote half-unit, which replies with a single grant beat once its
//! frontend is dispatched; the data phase then streams packed beats with the
//! lane locked to the task (circuit switching) until a finish beat releases
//! it.

use crate::layout::AffinePattern;
use crate::trace::BeatKind;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CFG_WIRE_VERSION: u8 = 1;

/// Flags byte of the wire header.
const FLAG_PLUGIN_SECTION: u8 = 1 << 0;
const FLAG_SRC_HALF: u8 = 1 << 1;
const FLAG_DST_HALF: u8 = 1 << 2;

const HEADER_BYTES: usize = 32;
const DIM_BYTES: usize = 16;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BackendError {
    #[error("cfg encodes {got} bytes, exceeding the {max}-byte wire maximum")]
    CfgTooLarge { got: usize, max: usize },
    #[error("malformed cfg bytes: {0}")]
    Malformed(String),
    #[error("unsupported cfg wire version {0}")]
    WireVersion(u8),
    #[error("beat kind '{kind}' illegal in tunnel state {state:?}")]
    ProtocolViolation { kind: BeatKind, state: TunnelState },
    #[error("address {0:#x} is not a message mailbox")]
    NotMailbox(u64),
}

/// One DMA task: where to read, where to write, and the per-stage plugin
/// control words for each side.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct XdmaCfg {
    pub task_id: u64,
    pub src_cluster: usize,
    pub dst_cluster: usize,
    pub src_base: u64,
    pub dst_base: u64,
    /// Reader pattern; `None` in a routed half-cfg that only carries the
    /// writer side.
    pub src_pattern: Option<AffinePattern>,
    /// Writer pattern; `None` in a reader-only half-cfg.
    pub dst_pattern: Option<AffinePattern>,
    pub reader_ctrl: Vec<u64>,
    pub writer_ctrl: Vec<u64>,
}

impl XdmaCfg {
    pub fn is_local(&self) -> bool {
        self.src_cluster == self.dst_cluster
    }

    /// Words the source pattern produces (0 for an absent half).
    pub fn src_words(&self) -> u64 {
        self.src_pattern.as_ref().map_or(0, |p| p.word_count())
    }

    pub fn dst_words(&self) -> u64 {
        self.dst_pattern.as_ref().map_or(0, |p| p.word_count())
    }

    /// Copy carrying only the reader half (for routing to the source
    /// cluster).
    pub fn reader_half(&self) -> XdmaCfg {
        XdmaCfg {
            dst_pattern: None,
            writer_ctrl: Vec::new(),
            ..self.clone()
        }
    }

    /// Copy carrying only the writer half.
    pub fn writer_half(&self) -> XdmaCfg {
        XdmaCfg {
            src_pattern: None,
            reader_ctrl: Vec::new(),
            ..self.clone()
        }
    }
}

fn push_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn read_u64(b: &[u8], at: usize) -> Result<u64, BackendError> {
    b.get(at..at + 8)
        .map(|s| u64::from_le_bytes(s.try_into().unwrap()))
        .ok_or_else(|| BackendError::Malformed(format!("truncated at byte {at}")))
}

/// Encoded size of a cfg on the wire.
pub fn cfg_wire_bytes(cfg: &XdmaCfg) -> usize {
    let dims = cfg.src_pattern.as_ref().map_or(0, |p| p.ndims())
        + cfg.dst_pattern.as_ref().map_or(0, |p| p.ndims());
    let mut n = HEADER_BYTES + dims * DIM_BYTES;
    if !cfg.reader_ctrl.is_empty() || !cfg.writer_ctrl.is_empty() {
        n += 8 + 8 * (cfg.reader_ctrl.len() + cfg.writer_ctrl.len());
    }
    n
}

/// Maximum wire size given a dimension budget (both halves at `max_dims`
/// plus a full plugin section of 8 stages per side).
pub fn cfg_wire_max(max_dims: usize) -> usize {
    HEADER_BYTES + 2 * max_dims * DIM_BYTES + 8 + 8 * 16
}

/// Serializes a cfg into its little-endian wire layout:
///
/// ```text
/// 0  task_id: u64          16 src_base: u64
/// 8  src_cluster: u8       24 dst_base: u64
/// 9  dst_cluster: u8       32 src dims: (bound u64, stride i64) x src_ndims
/// 10 flags: u8                dst dims: (bound u64, stride i64) x dst_ndims
/// 11 version: u8              plugin section (if flags bit 0):
/// 12 word_bytes: u8             reader count u16, writer count u16, pad u32,
/// 13 src_ndims: u8              ctrl words u64 x (reader + writer)
/// 14 dst_ndims: u8
/// 15 reserved: u8
/// ```
pub fn serialize_cfg(cfg: &XdmaCfg, word_bytes: u64, max_dims: usize) -> Result<Vec<u8>, BackendError> {
    let size = cfg_wire_bytes(cfg);
    let max = cfg_wire_max(max_dims);
    if size > max {
        return Err(BackendError::CfgTooLarge { got: size, max });
    }
    let mut flags = 0u8;
    let has_plugins = !cfg.reader_ctrl.is_empty() || !cfg.writer_ctrl.is_empty();
    if has_plugins {
        flags |= FLAG_PLUGIN_SECTION;
    }
    if cfg.src_pattern.is_some() {
        flags |= FLAG_SRC_HALF;
    }
    if cfg.dst_pattern.is_some() {
        flags |= FLAG_DST_HALF;
    }
    let mut out = Vec::with_capacity(size);
    push_u64(&mut out, cfg.task_id);
    out.push(cfg.src_cluster as u8);
    out.push(cfg.dst_cluster as u8);
    out.push(flags);
    out.push(CFG_WIRE_VERSION);
    out.push(word_bytes as u8);
    out.push(cfg.src_pattern.as_ref().map_or(0, |p| p.ndims()) as u8);
    out.push(cfg.dst_pattern.as_ref().map_or(0, |p| p.ndims()) as u8);
    out.push(0);
    push_u64(&mut out, cfg.src_base);
    push_u64(&mut out, cfg.dst_base);
    for pat in [&cfg.src_pattern, &cfg.dst_pattern].into_iter().flatten() {
        for (b, s) in pat.bounds.iter().zip(&pat.strides) {
            push_u64(&mut out, *b);
            push_u64(&mut out, *s as u64);
        }
    }
    if has_plugins {
        out.extend_from_slice(&(cfg.reader_ctrl.len() as u16).to_le_bytes());
        out.extend_from_slice(&(cfg.writer_ctrl.len() as u16).to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        for w in cfg.reader_ctrl.iter().chain(&cfg.writer_ctrl) {
            push_u64(&mut out, *w);
        }
    }
    debug_assert_eq!(out.len(), size);
    Ok(out)
}

pub fn deserialize_cfg(b: &[u8]) -> Result<XdmaCfg, BackendError> {
    if b.len() < HEADER_BYTES {
        return Err(BackendError::Malformed(format!(
            "only {} header bytes",
            b.len()
        )));
    }
    if b[11] != CFG_WIRE_VERSION {
        return Err(BackendError::WireVersion(b[11]));
    }
    let flags = b[10];
    let src_ndims = b[13] as usize;
    let dst_ndims = b[14] as usize;
    let mut at = HEADER_BYTES;
    let mut read_pattern = |n: usize| -> Result<AffinePattern, BackendError> {
        let mut bounds = Vec::with_capacity(n);
        let mut strides = Vec::with_capacity(n);
        for _ in 0..n {
            bounds.push(read_u64(b, at)?);
            strides.push(read_u64(b, at + 8)? as i64);
            at += DIM_BYTES;
        }
        AffinePattern::new(bounds, strides)
            .map_err(|e| BackendError::Malformed(e.to_string()))
    };
    let src_pattern = if flags & FLAG_SRC_HALF != 0 {
        Some(read_pattern(src_ndims)?)
    } else {
        None
    };
    let dst_pattern = if flags & FLAG_DST_HALF != 0 {
        Some(read_pattern(dst_ndims)?)
    } else {
        None
    };
    let (mut reader_ctrl, mut writer_ctrl) = (Vec::new(), Vec::new());
    if flags & FLAG_PLUGIN_SECTION != 0 {
        let rc = u16::from_le_bytes(
            b.get(at..at + 2)
                .ok_or_else(|| BackendError::Malformed("truncated plugin counts".into()))?
                .try_into()
                .unwrap(),
        ) as usize;
        let wc = u16::from_le_bytes(b[at + 2..at + 4].try_into().unwrap()) as usize;
        at += 8;
        for _ in 0..rc {
            reader_ctrl.push(read_u64(b, at)?);
            at += 8;
        }
        for _ in 0..wc {
            writer_ctrl.push(read_u64(b, at)?);
            at += 8;
        }
    }
    Ok(XdmaCfg {
        task_id: read_u64(b, 0)?,
        src_cluster: b[8] as usize,
        dst_cluster: b[9] as usize,
        src_base: read_u64(b, 16)?,
        dst_base: read_u64(b, 24)?,
        src_pattern,
        dst_pattern,
        reader_ctrl,
        writer_ctrl,
    })
}

/// MMIO mailbox region: one page per cluster, one slot per message kind.
pub const MAILBOX_BASE: u64 = 0xF000_0000;
const MAILBOX_STRIDE: u64 = 0x100;

pub fn mailbox_addr(cluster: usize, kind: BeatKind) -> u64 {
    let slot = match kind {
        BeatKind::Cfg => 0x00,
        BeatKind::Data => 0x40,
        BeatKind::Grant => 0x80,
        BeatKind::Finish => 0xC0,
    };
    MAILBOX_BASE + cluster as u64 * MAILBOX_STRIDE + slot
}

pub fn mailbox_decode(addr: u64) -> Result<(usize, BeatKind), BackendError> {
    if addr < MAILBOX_BASE {
        return Err(BackendError::NotMailbox(addr));
    }
    let off = addr - MAILBOX_BASE;
    let cluster = (off / MAILBOX_STRIDE) as usize;
    let kind = match off % MAILBOX_STRIDE {
        0x00 => BeatKind::Cfg,
        0x40 => BeatKind::Data,
        0x80 => BeatKind::Grant,
        0xC0 => BeatKind::Finish,
        _ => return Err(BackendError::NotMailbox(addr)),
    };
    Ok((cluster, kind))
}

/// One link transfer: a write of up to `W_AXI` bits at a mailbox address.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Beat {
    pub kind: BeatKind,
    pub task_id: u64,
    pub from_cluster: usize,
    pub to_cluster: usize,
    pub dest_mmio: u64,
    pub payload: Vec<u8>,
    /// Stream words carried (data beats; the final beat may be partial).
    pub valid_words: u8,
}

impl Beat {
    pub fn control(kind: BeatKind, task_id: u64, from: usize, to: usize) -> Beat {
        Beat {
            kind,
            task_id,
            from_cluster: from,
            to_cluster: to,
            dest_mmio: mailbox_addr(to, kind),
            payload: task_id.to_le_bytes().to_vec(),
            valid_words: 0,
        }
    }
}

/// Splits serialized cfg bytes into cfg beats bound for `to_cluster`.
pub fn cfg_beats(
    cfg: &XdmaCfg,
    to_cluster: usize,
    from_cluster: usize,
    beat_bytes: usize,
    word_bytes: u64,
    max_dims: usize,
) -> Result<Vec<Beat>, BackendError> {
    let bytes = serialize_cfg(cfg, word_bytes, max_dims)?;
    Ok(bytes
        .chunks(beat_bytes)
        .map(|chunk| Beat {
            kind: BeatKind::Cfg,
            task_id: cfg.task_id,
            from_cluster,
            to_cluster,
            dest_mmio: mailbox_addr(to_cluster, BeatKind::Cfg),
            payload: chunk.to_vec(),
            valid_words: 0,
        })
        .collect())
}

/// Reassembles cfg beats (in delivery order) into the decoded cfg.
#[derive(Default)]
pub struct CfgAssembler {
    buf: Vec<u8>,
}

impl CfgAssembler {
    /// Feeds one cfg beat; returns the decoded cfg once the encoding is
    /// complete.
    pub fn feed(&mut self, payload: &[u8]) -> Result<Option<XdmaCfg>, BackendError> {
        self.buf.extend_from_slice(payload);
        if self.buf.len() < HEADER_BYTES {
            return Ok(None);
        }
        let flags = self.buf[10];
        let dims = self.buf[13] as usize + self.buf[14] as usize;
        let mut need = HEADER_BYTES + dims * DIM_BYTES;
        if flags & FLAG_PLUGIN_SECTION != 0 {
            if self.buf.len() < need + 8 {
                return Ok(None);
            }
            let rc = u16::from_le_bytes(self.buf[need..need + 2].try_into().unwrap()) as usize;
            let wc =
                u16::from_le_bytes(self.buf[need + 2..need + 4].try_into().unwrap()) as usize;
            need += 8 + 8 * (rc + wc);
        }
        if self.buf.len() < need {
            return Ok(None);
        }
        let cfg = deserialize_cfg(&self.buf[..need])?;
        self.buf.clear();
        Ok(Some(cfg))
    }
}

/// Packs stream words into outgoing data beats through a two-beat staging
/// buffer, and unpacks arriving beats back into words on the consumer side.
pub struct BeatStaging {
    beat_words: usize,
    words: std::collections::VecDeque<u64>,
    capacity: usize,
}

impl BeatStaging {
    pub fn new(beat_words: usize) -> Self {
        BeatStaging {
            beat_words,
            words: std::collections::VecDeque::new(),
            capacity: 2 * beat_words,
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn room(&self) -> usize {
        self.capacity - self.words.len()
    }

    pub fn push_word(&mut self, w: u64) {
        assert!(self.room() > 0, "staging overflow");
        self.words.push_back(w);
    }

    pub fn pop_word(&mut self) -> Option<u64> {
        self.words.pop_front()
    }

    /// Producer side: builds the next data beat if a full beat is staged, or
    /// a partial tail beat when `tail` says no more words are coming.
    pub fn launch_beat(
        &mut self,
        task_id: u64,
        from: usize,
        to: usize,
        tail: bool,
    ) -> Option<Beat> {
        let n = if self.words.len() >= self.beat_words {
            self.beat_words
        } else if tail && !self.words.is_empty() {
            self.words.len()
        } else {
            return None;
        };
        let mut payload = Vec::with_capacity(self.beat_words * 8);
        for _ in 0..n {
            payload.extend_from_slice(&self.words.pop_front().unwrap().to_le_bytes());
        }
        payload.resize(self.beat_words * 8, 0);
        Some(Beat {
            kind: BeatKind::Data,
            task_id,
            from_cluster: from,
            to_cluster: to,
            dest_mmio: mailbox_addr(to, BeatKind::Data),
            payload,
            valid_words: n as u8,
        })
    }

    /// Consumer side: accepts a delivered data beat if the whole payload
    /// fits.
    pub fn try_accept_beat(&mut self, beat: &Beat) -> bool {
        let n = beat.valid_words as usize;
        if self.room() < n {
            return false;
        }
        for i in 0..n {
            let w = u64::from_le_bytes(beat.payload[i * 8..i * 8 + 8].try_into().unwrap());
            self.words.push_back(w);
        }
        true
    }
}

/// Tunnel phase of one task at one endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TunnelState {
    Idle,
    /// Configuration sent (or received); waiting for the grant.
    CfgSent,
    /// Grant exchanged; the data phase may open.
    Granted,
    /// Data beats in flight; the lane belongs to this task.
    Streaming,
    /// All words produced; trailing beats and finish still draining.
    Draining,
    Finished,
}

impl TunnelState {
    /// Checks a state-machine step, returning the new state or a protocol
    /// violation.
    pub fn advance(self, kind: BeatKind) -> Result<TunnelState, BackendError> {
        use TunnelState::*;
        let next = match (self, kind) {
            (Idle, BeatKind::Cfg) | (CfgSent, BeatKind::Cfg) => CfgSent,
            (CfgSent, BeatKind::Grant) => Granted,
            (Granted, BeatKind::Data) | (Streaming, BeatKind::Data) => Streaming,
            (Granted, BeatKind::Finish)
            | (Streaming, BeatKind::Finish)
            | (Draining, BeatKind::Finish) => Finished,
            (state, kind) => return Err(BackendError::ProtocolViolation { kind, state }),
        };
        Ok(next)
    }
}

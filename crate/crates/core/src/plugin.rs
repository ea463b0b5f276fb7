//! In-stream extension plugins.
//!
//! A plugin chain sits between a streamer frontend and its stream buffer:
//! after the reader on the producer side, before the writer on the consumer
//! side. Each stage is a word-in/word-out state machine with its own
//! buffering; the chain host moves words across each stage boundary with at
//! most `nchan` handshakes per boundary per cycle, so an enabled stage adds
//! one register stage of latency but sustains full width.
//!
//! Every stage is configured per task by one 64-bit control word; bit 0
//! enables the stage (disabled stages are bypassed entirely).

use std::collections::VecDeque;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PluginError {
    #[error("unknown plugin id '{0}'")]
    Unknown(String),
    #[error("plugin chain has {stages} stages but {ctrls} control words were given")]
    CtrlCountMismatch { stages: usize, ctrls: usize },
    #[error("memset count must be >= 1 when the stage is enabled")]
    MemsetZeroCount,
    #[error("transpose stream ended mid-tile ({0} words left in a partial tile)")]
    PartialTile(usize),
    #[error("chain would emit {produced} words but the pattern expects {expected}")]
    LengthMismatch { produced: u64, expected: u64 },
}

pub const PLUGIN_IDS: [&str; 3] = ["identity", "transpose", "memset"];

pub fn is_known_plugin(id: &str) -> bool {
    PLUGIN_IDS.contains(&id)
}

/// Control word accessors shared by all stages.
pub fn ctrl_enabled(ctrl: u64) -> bool {
    ctrl & 1 != 0
}

/// Builds a memset control word: enabled, filling `count` words with `byte`
/// replicated across each word.
pub fn memset_ctrl(byte: u8, count: u32) -> u64 {
    1 | (u64::from(byte) << 8) | (u64::from(count) << 32)
}

/// One word-stream transform stage.
pub trait StreamPlugin {
    fn id(&self) -> &'static str;
    /// Applies the per-task control word. Called once at task start.
    fn configure(&mut self, ctrl: u64) -> Result<(), PluginError>;
    /// Words the stage will emit for `input` incoming words, used to check a
    /// task's chain against its destination pattern before it runs.
    fn output_len(&self, input: u64) -> Result<u64, PluginError>;
    /// Whether one more input word can be pushed this cycle.
    fn can_accept(&self) -> bool;
    fn push(&mut self, word: u64);
    /// Pops the next output word if one is ready.
    fn pop(&mut self) -> Option<u64>;
    /// Output words ready to pop right now, without popping.
    fn ready_len(&self) -> usize;
    /// Signals that no further input will arrive for this task.
    fn finish_input(&mut self) -> Result<(), PluginError>;
}

/// Pass-through stage with a one-word register.
#[derive(Default)]
pub struct IdentityPlugin {
    slot: Option<u64>,
}

impl StreamPlugin for IdentityPlugin {
    fn id(&self) -> &'static str {
        "identity"
    }

    fn configure(&mut self, _ctrl: u64) -> Result<(), PluginError> {
        self.slot = None;
        Ok(())
    }

    fn output_len(&self, input: u64) -> Result<u64, PluginError> {
        Ok(input)
    }

    fn can_accept(&self) -> bool {
        self.slot.is_none()
    }

    fn push(&mut self, word: u64) {
        debug_assert!(self.slot.is_none());
        self.slot = Some(word);
    }

    fn pop(&mut self) -> Option<u64> {
        self.slot.take()
    }

    fn ready_len(&self) -> usize {
        usize::from(self.slot.is_some())
    }

    fn finish_input(&mut self) -> Result<(), PluginError> {
        Ok(())
    }
}

const TILE_WORDS: usize = 8;

/// 8x8-byte in-stream tile transpose with a fill/drain double buffer: eight
/// words fill one tile, then the flipped tile drains while the next fills.
#[derive(Default)]
pub struct TransposePlugin {
    fill: Vec<u64>,
    drain: VecDeque<u64>,
}

/// Transposes an 8x8 byte tile held as eight little-endian words (word r =
/// matrix row r).
fn flip_tile(rows: &[u64]) -> [u64; TILE_WORDS] {
    let mut out = [0u64; TILE_WORDS];
    for (r, row) in rows.iter().enumerate() {
        for (c, o) in out.iter_mut().enumerate() {
            let byte = (row >> (8 * c)) & 0xFF;
            *o |= byte << (8 * r);
        }
    }
    out
}

impl TransposePlugin {
    fn try_flip(&mut self) {
        if self.fill.len() == TILE_WORDS && self.drain.is_empty() {
            self.drain.extend(flip_tile(&self.fill));
            self.fill.clear();
        }
    }
}

impl StreamPlugin for TransposePlugin {
    fn id(&self) -> &'static str {
        "transpose"
    }

    fn configure(&mut self, _ctrl: u64) -> Result<(), PluginError> {
        self.fill.clear();
        self.drain.clear();
        Ok(())
    }

    fn output_len(&self, input: u64) -> Result<u64, PluginError> {
        if !input.is_multiple_of(TILE_WORDS as u64) {
            return Err(PluginError::PartialTile((input % TILE_WORDS as u64) as usize));
        }
        Ok(input)
    }

    fn can_accept(&self) -> bool {
        self.fill.len() < TILE_WORDS
    }

    fn push(&mut self, word: u64) {
        debug_assert!(self.can_accept());
        self.fill.push(word);
        self.try_flip();
    }

    fn pop(&mut self) -> Option<u64> {
        let w = self.drain.pop_front();
        self.try_flip();
        w
    }

    fn ready_len(&self) -> usize {
        self.drain.len()
    }

    fn finish_input(&mut self) -> Result<(), PluginError> {
        if self.fill.is_empty() {
            Ok(())
        } else {
            Err(PluginError::PartialTile(self.fill.len()))
        }
    }
}

/// Word source: ignores its input stream (which must be empty) and emits
/// `count` copies of a fill word. Control word layout: bit 0 enable,
/// bits 8..16 fill byte, bits 32..64 word count.
#[derive(Default)]
pub struct MemsetPlugin {
    word: u64,
    remaining: u64,
}

impl StreamPlugin for MemsetPlugin {
    fn id(&self) -> &'static str {
        "memset"
    }

    fn configure(&mut self, ctrl: u64) -> Result<(), PluginError> {
        let byte = (ctrl >> 8) & 0xFF;
        let count = ctrl >> 32;
        if count == 0 {
            return Err(PluginError::MemsetZeroCount);
        }
        self.word = byte * 0x0101_0101_0101_0101;
        self.remaining = count;
        Ok(())
    }

    fn output_len(&self, input: u64) -> Result<u64, PluginError> {
        // The generator replaces the stream rather than transforming it.
        Ok(self.remaining + input)
    }

    fn can_accept(&self) -> bool {
        false
    }

    fn push(&mut self, _word: u64) {
        unreachable!("memset stage never accepts input");
    }

    fn pop(&mut self) -> Option<u64> {
        if self.remaining > 0 {
            self.remaining -= 1;
            Some(self.word)
        } else {
            None
        }
    }

    fn ready_len(&self) -> usize {
        self.remaining as usize
    }

    fn finish_input(&mut self) -> Result<(), PluginError> {
        Ok(())
    }
}

pub fn build_plugin(id: &str) -> Result<Box<dyn StreamPlugin>, PluginError> {
    match id {
        "identity" => Ok(Box::<IdentityPlugin>::default()),
        "transpose" => Ok(Box::<TransposePlugin>::default()),
        "memset" => Ok(Box::<MemsetPlugin>::default()),
        other => Err(PluginError::Unknown(other.to_string())),
    }
}

/// An installed plugin chain with this task's enabled stages.
pub struct PluginChain {
    stages: Vec<Box<dyn StreamPlugin>>,
    /// Handshake budget per stage boundary per cycle.
    nchan: usize,
}

impl PluginChain {
    /// Instantiates the chain `ext` with one control word per stage.
    /// Disabled stages are dropped at build time (hardware bypass).
    pub fn build(ext: &[String], ctrls: &[u64], nchan: usize) -> Result<Self, PluginError> {
        if ext.len() != ctrls.len() {
            return Err(PluginError::CtrlCountMismatch {
                stages: ext.len(),
                ctrls: ctrls.len(),
            });
        }
        let mut stages = Vec::new();
        for (id, &ctrl) in ext.iter().zip(ctrls) {
            if !ctrl_enabled(ctrl) {
                continue;
            }
            let mut p = build_plugin(id)?;
            p.configure(ctrl)?;
            stages.push(p);
        }
        Ok(PluginChain { stages, nchan })
    }

    /// Chain with no enabled stages: words pass straight through.
    pub fn empty(nchan: usize) -> Self {
        PluginChain {
            stages: Vec::new(),
            nchan,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    /// Words the whole chain emits for `input` incoming words.
    pub fn output_len(&self, input: u64) -> Result<u64, PluginError> {
        let mut n = input;
        for s in &self.stages {
            n = s.output_len(n)?;
        }
        Ok(n)
    }

    /// Moves words across internal stage boundaries (downstream first, so a
    /// word needs one cycle per enabled stage). The frontends handle the
    /// outermost boundaries via [`Self::can_accept`]/[`Self::push`]/
    /// [`Self::pop_ready`]. Call once per cycle before those.
    pub fn tick(&mut self) {
        if self.stages.len() < 2 {
            return;
        }
        for i in (0..self.stages.len() - 1).rev() {
            for _ in 0..self.nchan {
                if !self.stages[i + 1].can_accept() {
                    break;
                }
                match self.stages[i].pop() {
                    Some(w) => self.stages[i + 1].push(w),
                    None => break,
                }
            }
        }
    }

    /// Whether the first stage can take one more word this cycle.
    pub fn can_accept(&self) -> bool {
        match self.stages.first() {
            Some(s) => s.can_accept(),
            None => true,
        }
    }

    pub fn push(&mut self, word: u64) {
        debug_assert!(!self.stages.is_empty());
        self.stages[0].push(word);
    }

    /// Pops one finished word from the last stage, if ready.
    pub fn pop_ready(&mut self) -> Option<u64> {
        self.stages.last_mut().and_then(|s| s.pop())
    }

    /// Words the last stage could pop right now.
    pub fn ready_len(&self) -> usize {
        self.stages.last().map_or(0, |s| s.ready_len())
    }

    pub fn finish_input(&mut self) -> Result<(), PluginError> {
        for s in &mut self.stages {
            s.finish_input()?;
        }
        Ok(())
    }
}

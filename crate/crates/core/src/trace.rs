//! Beat-level trace collection and protocol-order checking.
//!
//! Every beat delivery (and optionally departure) on the inter-cluster link
//! can be recorded. Per task, delivered beats must follow the tunnel
//! protocol: one or more configuration beats, exactly one grant, any number
//! of data beats, then exactly one finish.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

/// What a link beat carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BeatKind {
    Cfg,
    Grant,
    Data,
    Finish,
}

impl fmt::Display for BeatKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BeatKind::Cfg => "cfg",
            BeatKind::Grant => "grant",
            BeatKind::Data => "data",
            BeatKind::Finish => "finish",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceKind {
    /// Beat entered the link.
    Departed,
    /// Beat arrived and was accepted at its destination.
    Delivered,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceEvent {
    pub cycle: u64,
    pub kind: TraceKind,
    pub beat: BeatKind,
    pub task_id: u64,
    pub from_cluster: usize,
    pub to_cluster: usize,
    /// Link lane (direction) the beat used.
    pub lane: usize,
    pub payload_bytes: u64,
}

/// Append-only event log. Recording can be disabled to keep long sweeps
/// allocation-free; the protocol checker then simply sees no events.
#[derive(Debug, Default, Clone)]
pub struct Trace {
    pub enabled: bool,
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn new(enabled: bool) -> Self {
        Trace {
            enabled,
            events: Vec::new(),
        }
    }

    pub fn record(&mut self, ev: TraceEvent) {
        if self.enabled {
            self.events.push(ev);
        }
    }

    /// Delivered beat kinds of each task, in delivery order.
    pub fn delivered_kinds(&self) -> BTreeMap<u64, Vec<BeatKind>> {
        let mut per_task: BTreeMap<u64, Vec<BeatKind>> = BTreeMap::new();
        for ev in &self.events {
            if ev.kind == TraceKind::Delivered {
                per_task.entry(ev.task_id).or_default().push(ev.beat);
            }
        }
        per_task
    }

    /// Checks that every task's delivered beats follow
    /// `cfg+ grant data* finish`.
    pub fn check_protocol_order(&self) -> Result<(), String> {
        for (task, kinds) in self.delivered_kinds() {
            check_task_sequence(task, &kinds)?;
        }
        Ok(())
    }

    /// Writes the log as JSON lines.
    pub fn write_jsonl<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        for ev in &self.events {
            serde_json::to_writer(&mut w, ev)?;
            writeln!(w)?;
        }
        Ok(())
    }

    /// Checks circuit switching: from a task's grant to its finish, the link
    /// direction its stream occupies carries no other task's data beats.
    /// (Single control beats — the opposite tunnel's cfg/grant/finish — may
    /// interleave; they are how full-duplex setup crosses a busy link.)
    pub fn check_circuit_exclusivity(&self) -> Result<(), String> {
        struct Window {
            dir: Option<(usize, usize)>,
            grant_idx: Option<usize>,
            finish_idx: Option<usize>,
        }
        let delivered: Vec<&TraceEvent> = self
            .events
            .iter()
            .filter(|e| e.kind == TraceKind::Delivered)
            .collect();
        let mut windows: BTreeMap<u64, Window> = BTreeMap::new();
        for (i, ev) in delivered.iter().enumerate() {
            let w = windows.entry(ev.task_id).or_insert(Window {
                dir: None,
                grant_idx: None,
                finish_idx: None,
            });
            match ev.beat {
                BeatKind::Grant if w.grant_idx.is_none() => w.grant_idx = Some(i),
                BeatKind::Data => w.dir = Some((ev.from_cluster, ev.to_cluster)),
                BeatKind::Finish => {
                    w.finish_idx = Some(i);
                    // Zero-length streams reveal their direction only here.
                    w.dir.get_or_insert((ev.from_cluster, ev.to_cluster));
                }
                _ => {}
            }
        }
        for (task, w) in &windows {
            let (Some(dir), Some(g), Some(f)) = (w.dir, w.grant_idx, w.finish_idx) else {
                continue;
            };
            for ev in &delivered[g + 1..f] {
                if (ev.from_cluster, ev.to_cluster) == dir
                    && ev.beat == BeatKind::Data
                    && ev.task_id != *task
                {
                    return Err(format!(
                        "task {task:#x}: foreign data beat of task {:#x} on lane {}->{} inside its grant..finish window",
                        ev.task_id, dir.0, dir.1
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Validates one task's delivered-beat sequence against
/// `cfg+ grant data* finish`.
pub fn check_task_sequence(task: u64, kinds: &[BeatKind]) -> Result<(), String> {
    #[derive(PartialEq)]
    enum St {
        Cfg(usize),
        Granted,
        Done,
    }
    let mut st = St::Cfg(0);
    for (i, k) in kinds.iter().enumerate() {
        st = match (st, k) {
            (St::Cfg(n), BeatKind::Cfg) => St::Cfg(n + 1),
            (St::Cfg(n), BeatKind::Grant) if n >= 1 => St::Granted,
            (St::Granted, BeatKind::Data) => St::Granted,
            (St::Granted, BeatKind::Finish) => St::Done,
            (_, k) => {
                return Err(format!(
                    "task {task:#x}: beat {i} is '{k}', violating cfg+ grant data* finish"
                ))
            }
        };
    }
    match st {
        St::Done => Ok(()),
        St::Cfg(0) => Err(format!("task {task:#x}: no beats delivered")),
        St::Cfg(_) => Err(format!("task {task:#x}: ended before grant")),
        St::Granted => Err(format!("task {task:#x}: ended without finish")),
    }
}

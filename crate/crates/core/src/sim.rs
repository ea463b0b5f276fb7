//! The cycle engine: every cluster's memory, controller, frontends, plugin
//! chains and beat staging advanced in lockstep over the shared link model.
//!
//! Each cycle runs five phases:
//!
//! A. Link delivery — at most one ready beat per direction is taken, if its
//!    receiver can absorb it (cfg assembly space, data staging room). A
//!    refused beat blocks the lane head: link backpressure.
//! B. Beat launch — producer-side staging packs full (or final partial)
//!    data beats and offers them to the link.
//! C. Controllers — parked configs retry, cfg beats go out, task FIFOs
//!    dispatch to idle frontends, grants are issued (locking the data
//!    direction), finish beats close drained streams.
//! D. Frontends — per cluster, bank arbitration resets and both frontends
//!    tick; precedence alternates by cycle parity except for a paired local
//!    task, where the reader feeds the writer in the same cycle.
//! E. The link arbitrates: one departure per direction, first come, first
//!    served.
//!
//! Remote transfers follow a two-phase circuit-switched tunnel. When the
//! source is local to the submitting controller, the writer half travels as
//! cfg beats and the destination grants once its writer frontend dispatches
//! (push). When only the destination is local, the reader half is sent on
//! writer dispatch and the producer grants on the data direction itself
//! (pull). When neither is local, the whole cfg is forwarded to the source
//! cluster's controller, which re-routes it as a push. Purely local tasks
//! run through an in-cluster pipe with no link traffic at all.

use crate::backend::{cfg_beats, BackendError, Beat, BeatStaging, CfgAssembler, XdmaCfg};
use crate::config::SocConfig;
use crate::controller::{
    decode_csr, make_task_id, padded, route, validate_task, ControllerError, CsrWrite, RoutedHalf,
    TaskFifo,
};
use crate::frontend::{AddressGenerator, CycleReport, FrontendState, Role, WordSink, WordSource};
use crate::interconnect::Interconnect;
use crate::mem::{BankArbiter, ClusterMemory, MemError};
use crate::metrics::{Metrics, StallBreakdown};
use crate::plugin::{PluginChain, PluginError};
use crate::trace::{BeatKind, Trace, TraceEvent, TraceKind};
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use thiserror::Error;

/// Master id of a cluster's control engine on the link.
pub const MASTER_CTRL: usize = 0;
/// Master id of a cluster's data path on the link.
pub const MASTER_DATA: usize = 1;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Mem(#[from] MemError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Plugin(#[from] PluginError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("protocol fault: {0}")]
    Protocol(String),
    #[error("cycle budget of {budget} exhausted before the system went idle")]
    CycleBudget { budget: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ReaderPhase {
    /// Remote pull: this producer owes the consumer a grant.
    SendGrant,
    Streaming,
}

/// Active reader half: source frontend, post-read plugin chain, and the
/// stream's destination.
struct ReaderLane {
    task_id: u64,
    /// Absent for a generator-only task (nothing to read).
    fe: Option<FrontendState>,
    chain: PluginChain,
    dest: usize,
    local: bool,
    phase: ReaderPhase,
    /// Words the chain will hand downstream over the whole task.
    out_words: u64,
    /// Words handed downstream so far (into staging or the local writer).
    delivered: u64,
}

/// Active writer half: pre-write plugin chain and destination frontend.
struct WriterLane {
    task_id: u64,
    fe: FrontendState,
    chain: PluginChain,
    from: usize,
    local: bool,
    /// Push consumer: owes the producer a grant once dispatched.
    grant_duty: bool,
    grant_sent: bool,
    /// Producer finished (finish beat delivered, or local reader done).
    finish_seen: bool,
}

struct Cluster {
    mem: ClusterMemory,
    arb: BankArbiter,
    reader_fifo: TaskFifo,
    writer_fifo: TaskFifo,
    /// Task ids whose half arrived over the link (they owe/await grants
    /// differently from locally submitted halves).
    from_wire: BTreeSet<u64>,
    /// Pull tasks: reader-half cfg held until the local writer dispatches.
    pull_sends: BTreeMap<u64, (usize, XdmaCfg)>,
    /// Cfg reassembly, one stream per source cluster.
    asm: BTreeMap<usize, CfgAssembler>,
    /// Assembled cfg that found its task FIFO full; blocks further cfg
    /// beats from that source until it fits.
    inbox_hold: BTreeMap<usize, XdmaCfg>,
    /// Outgoing cfg beats, per destination, sent one per cycle.
    outbox: BTreeMap<usize, VecDeque<Beat>>,
    /// Grants that arrived before their reader dispatched.
    granted: BTreeSet<u64>,
    reader: Option<ReaderLane>,
    writer: Option<WriterLane>,
    /// Outgoing data beat packer (producer side).
    tx: BeatStaging,
    /// Incoming data beat unpacker (consumer side).
    rx: BeatStaging,
    /// Task whose words currently occupy `rx`.
    rx_task: Option<u64>,
    /// Word queue from a local reader to its paired writer.
    pipe: VecDeque<u64>,
    pipe_cap: usize,
}

impl Cluster {
    fn new(cfg: &SocConfig, index: usize) -> Self {
        Cluster {
            mem: ClusterMemory::new(cfg, index),
            arb: BankArbiter::new(cfg.num_banks),
            reader_fifo: TaskFifo::new(cfg.task_fifo_depth),
            writer_fifo: TaskFifo::new(cfg.task_fifo_depth),
            from_wire: BTreeSet::new(),
            pull_sends: BTreeMap::new(),
            asm: BTreeMap::new(),
            inbox_hold: BTreeMap::new(),
            outbox: BTreeMap::new(),
            granted: BTreeSet::new(),
            reader: None,
            writer: None,
            tx: BeatStaging::new(cfg.beat_words() as usize),
            rx: BeatStaging::new(cfg.beat_words() as usize),
            rx_task: None,
            pipe: VecDeque::new(),
            pipe_cap: 2 * cfg.beat_words() as usize,
        }
    }

    fn idle(&self) -> bool {
        self.reader.is_none()
            && self.writer.is_none()
            && self.reader_fifo.is_empty()
            && self.writer_fifo.is_empty()
            && self.pull_sends.is_empty()
            && self.inbox_hold.is_empty()
            && self.granted.is_empty()
            && self.outbox.values().all(|q| q.is_empty())
            && self.tx.is_empty()
            && self.rx.is_empty()
            && self.pipe.is_empty()
    }
}

/// The simulated system: clusters plus the link, advanced cycle by cycle.
pub struct Soc {
    pub cfg: SocConfig,
    clusters: Vec<Cluster>,
    pub interconnect: Interconnect,
    pub trace: Trace,
    pub metrics: Metrics,
    /// Completion cycle of each finished task (destination side done).
    pub completed: BTreeMap<u64, u64>,
    cycle: u64,
    next_seq: Vec<u64>,
}

impl Soc {
    pub fn new(cfg: SocConfig) -> Result<Self, crate::config::ConfigError> {
        cfg.validate()?;
        let clusters = (0..cfg.num_clusters).map(|i| Cluster::new(&cfg, i)).collect();
        let interconnect = Interconnect::new(cfg.num_clusters, cfg.axi_latency);
        let next_seq = vec![0; cfg.num_clusters];
        Ok(Soc {
            cfg,
            clusters,
            interconnect,
            trace: Trace::new(false),
            metrics: Metrics::default(),
            completed: BTreeMap::new(),
            cycle: 0,
            next_seq,
        })
    }

    pub fn enable_trace(&mut self) {
        self.trace.enabled = true;
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn mem(&self, cluster: usize) -> &ClusterMemory {
        &self.clusters[cluster].mem
    }

    pub fn mem_mut(&mut self, cluster: usize) -> &mut ClusterMemory {
        &mut self.clusters[cluster].mem
    }

    /// Allocates the next task id for a submission via cluster `home`.
    pub fn next_task_id(&mut self, home: usize) -> u64 {
        let id = make_task_id(home, self.next_seq[home]);
        self.next_seq[home] += 1;
        id
    }

    /// Host-side task submission through the controller on `home`. Fails
    /// with FIFO backpressure when the needed queues are full (resubmit
    /// after stepping), or with a validation error for a malformed task.
    pub fn submit(&mut self, home: usize, task: XdmaCfg) -> Result<(), SimError> {
        validate_task(&task, &self.cfg)?;
        let routed = route(&task, home);
        // All-or-nothing: check FIFO capacity before any side effect.
        let depth = self.cfg.task_fifo_depth;
        let cl = &self.clusters[home];
        let mut need_r = 0;
        let mut need_w = 0;
        for r in &routed {
            match r {
                RoutedHalf::Local { role: Role::Reader, .. } => need_r += 1,
                RoutedHalf::Local { role: Role::Writer, .. } => need_w += 1,
                _ => {}
            }
        }
        if cl.reader_fifo.len() + need_r > depth {
            return Err(ControllerError::FifoFull(depth).into());
        }
        if cl.writer_fifo.len() + need_w > depth {
            return Err(ControllerError::FifoFull(depth).into());
        }
        let beat_bytes = self.cfg.beat_bytes() as usize;
        let word = self.cfg.word_bytes();
        let max_dims = self.cfg.dim_src.max(self.cfg.dim_dst);
        let cl = &mut self.clusters[home];
        for r in routed {
            match r {
                RoutedHalf::Local { role: Role::Reader, half } => {
                    cl.reader_fifo.push(half)?;
                }
                RoutedHalf::Local { role: Role::Writer, half } => {
                    cl.writer_fifo.push(half)?;
                }
                RoutedHalf::Remote { to_cluster, half } => {
                    if half.src_pattern.is_some() {
                        // Pull: hold the reader half until our writer
                        // dispatches, so one incoming stream exists at a
                        // time.
                        cl.pull_sends.insert(half.task_id, (to_cluster, half));
                    } else {
                        let beats = cfg_beats(&half, to_cluster, home, beat_bytes, word, max_dims)?;
                        cl.outbox.entry(to_cluster).or_default().extend(beats);
                    }
                }
                RoutedHalf::Forward { to_cluster, cfg } => {
                    let beats = cfg_beats(&cfg, to_cluster, home, beat_bytes, word, max_dims)?;
                    cl.outbox.entry(to_cluster).or_default().extend(beats);
                }
            }
        }
        Ok(())
    }

    /// Decodes a CSR write stream on `home` and submits the task.
    pub fn submit_csr(&mut self, home: usize, writes: &[CsrWrite]) -> Result<u64, SimError> {
        let id = self.next_task_id(home);
        let task = decode_csr(writes, &self.cfg, home, id)?;
        self.submit(home, task)?;
        Ok(id)
    }

    /// Nothing queued, active, staged, or in flight anywhere.
    pub fn idle(&self) -> bool {
        self.clusters.iter().all(|c| c.idle()) && self.interconnect.idle()
    }

    /// Steps until idle, failing once `budget` cycles elapse (deadlock /
    /// livelock guard). Returns the cycles consumed.
    pub fn run_until_idle(&mut self, budget: u64) -> Result<u64, SimError> {
        let start = self.cycle;
        while !self.idle() {
            if self.cycle - start >= budget {
                return Err(SimError::CycleBudget { budget });
            }
            self.step()?;
        }
        Ok(self.cycle - start)
    }

    /// Advances the whole system by one cycle.
    pub fn step(&mut self) -> Result<(), SimError> {
        let Soc {
            cfg,
            clusters,
            interconnect,
            trace,
            metrics,
            completed,
            cycle,
            ..
        } = self;
        let now = *cycle;
        let n = cfg.num_clusters;
        let beat_words = cfg.beat_words() as usize;
        let word_bytes = cfg.word_bytes();

        // ---- Phase A: link deliveries -------------------------------
        for (to, cl) in clusters.iter_mut().enumerate() {
            for from in 0..n {
                if from == to {
                    continue;
                }
                let Some(head) = interconnect.ready_beat(from, to, now) else {
                    continue;
                };
                let (kind, task, words) = (head.kind, head.task_id, head.valid_words);
                let accept = match kind {
                    BeatKind::Cfg => !cl.inbox_hold.contains_key(&from),
                    BeatKind::Data => {
                        cl.rx.room() >= words as usize
                            && cl.rx_task.is_none_or(|t| t == task)
                    }
                    BeatKind::Grant | BeatKind::Finish => true,
                };
                if !accept {
                    metrics.stalls.link_backpressure += 1;
                    continue;
                }
                let beat = interconnect.take_ready(from, to, now).expect("peeked above");
                trace.record(TraceEvent {
                    cycle: now,
                    kind: TraceKind::Delivered,
                    beat: kind,
                    task_id: task,
                    from_cluster: from,
                    to_cluster: to,
                    lane: from * n + to,
                    payload_bytes: beat.payload.len() as u64,
                });
                match kind {
                    BeatKind::Cfg => {
                        if let Some(full) = cl.asm.entry(from).or_default().feed(&beat.payload)? {
                            if !enqueue_wire_cfg(cl, cfg, to, &full)? {
                                cl.inbox_hold.insert(from, full);
                            }
                        }
                    }
                    BeatKind::Data => {
                        let ok = cl.rx.try_accept_beat(&beat);
                        debug_assert!(ok, "room checked before take");
                        cl.rx_task = Some(task);
                    }
                    BeatKind::Grant => {
                        // A pull consumer's writer is already waiting on the
                        // announced stream; a push producer banks the grant
                        // until its reader half dispatches.
                        if !cl.writer.as_ref().is_some_and(|w| w.task_id == task) {
                            cl.granted.insert(task);
                        }
                    }
                    BeatKind::Finish => match &mut cl.writer {
                        Some(w) if w.task_id == task => w.finish_seen = true,
                        _ => {
                            return Err(SimError::Protocol(format!(
                                "finish for task {task:#x} without an active writer"
                            )))
                        }
                    },
                }
            }
        }

        // ---- Phase B: data beat launches ----------------------------
        for (home, cl) in clusters.iter_mut().enumerate() {
            let Some(r) = &cl.reader else { continue };
            if r.local || r.phase != ReaderPhase::Streaming {
                continue;
            }
            let tail = r.delivered == r.out_words;
            if cl.tx.len() < beat_words && !(tail && !cl.tx.is_empty()) {
                continue;
            }
            if interconnect.has_waiting(home, r.dest, MASTER_DATA) {
                metrics.stalls.link_backpressure += 1;
                continue;
            }
            let beat = cl
                .tx
                .launch_beat(r.task_id, home, r.dest, tail)
                .expect("launch checked");
            let ok = interconnect.submit(now, MASTER_DATA, beat);
            debug_assert!(ok, "waiting slot checked");
        }

        // ---- Phase C: controllers -----------------------------------
        for (home, cl) in clusters.iter_mut().enumerate() {
            // Parked configs retry for FIFO space.
            let parked: Vec<usize> = cl.inbox_hold.keys().copied().collect();
            for src in parked {
                let full = cl.inbox_hold.remove(&src).expect("key listed");
                if !enqueue_wire_cfg(cl, cfg, home, &full)? {
                    cl.inbox_hold.insert(src, full);
                }
            }

            // One outgoing cfg beat per destination per cycle.
            for (&dest, q) in cl.outbox.iter_mut() {
                if q.front().is_none() {
                    continue;
                }
                if interconnect.has_waiting(home, dest, MASTER_CTRL) {
                    metrics.stalls.cfg_phase += 1;
                    continue;
                }
                let beat = q.pop_front().expect("front checked");
                let ok = interconnect.submit(now, MASTER_CTRL, beat);
                debug_assert!(ok);
                metrics.record_start(now);
            }

            // Dispatch: a scoreboard over the task queue picks the oldest
            // entry whose prerequisites hold. A push reader half waits for
            // its grant *in the queue*, never on the frontend, so a
            // frontend is only ever held by a task that can make progress;
            // crossed push/pull acquisition between two clusters would
            // otherwise deadlock.
            if cl.reader.is_none() {
                let mut pick: Option<(usize, Option<usize>)> = None;
                for (i, h) in cl.reader_fifo.iter().enumerate() {
                    let local = h.src_cluster == home && h.dst_cluster == home;
                    if local {
                        if cl.writer.is_none() {
                            if let Some(wi) =
                                cl.writer_fifo.iter().position(|w| w.task_id == h.task_id)
                            {
                                pick = Some((i, Some(wi)));
                                break;
                            }
                        }
                    } else if cl.from_wire.contains(&h.task_id) || cl.granted.contains(&h.task_id)
                    {
                        pick = Some((i, None));
                        break;
                    }
                }
                match pick {
                    Some((i, Some(wi))) => {
                        let rh = cl.reader_fifo.remove(i).expect("scanned");
                        let wh = cl.writer_fifo.remove(wi).expect("scanned");
                        cl.reader = Some(make_reader_lane(cfg, home, rh, false, &mut cl.granted)?);
                        cl.writer = Some(make_writer_lane(cfg, home, wh, false)?);
                        metrics.record_start(now);
                    }
                    Some((i, None)) => {
                        let rh = cl.reader_fifo.remove(i).expect("scanned");
                        let fw = cl.from_wire.remove(&rh.task_id);
                        cl.reader = Some(make_reader_lane(cfg, home, rh, fw, &mut cl.granted)?);
                    }
                    None => {}
                }
            }
            if cl.writer.is_none() {
                let pick = cl
                    .writer_fifo
                    .iter()
                    .position(|h| !(h.src_cluster == home && h.dst_cluster == home));
                if let Some(i) = pick {
                    let wh = cl.writer_fifo.remove(i).expect("scanned");
                    let task = wh.task_id;
                    let fw = cl.from_wire.remove(&task);
                    cl.writer = Some(make_writer_lane(cfg, home, wh, fw)?);
                    if let Some((to, half)) = cl.pull_sends.remove(&task) {
                        let beats = cfg_beats(
                            &half,
                            to,
                            home,
                            cfg.beat_bytes() as usize,
                            word_bytes,
                            cfg.dim_src.max(cfg.dim_dst),
                        )?;
                        cl.outbox.entry(to).or_default().extend(beats);
                    }
                }
            }

            // Push consumer grants its producer once dispatched, reserving
            // the data direction.
            if let Some(w) = &mut cl.writer {
                if w.grant_duty
                    && !w.grant_sent
                    && !w.local
                    && interconnect.lock_owner(w.from, home).is_none()
                    && !interconnect.has_waiting(home, w.from, MASTER_CTRL)
                {
                    let beat = Beat::control(BeatKind::Grant, w.task_id, home, w.from);
                    let ok = interconnect.submit(now, MASTER_CTRL, beat);
                    debug_assert!(ok);
                    interconnect.lock_lane(w.from, home, w.task_id);
                    w.grant_sent = true;
                }
            }
            // Pull producer grants on the data direction it is about to use.
            if let Some(r) = &mut cl.reader {
                if r.phase == ReaderPhase::SendGrant
                    && !r.local
                    && interconnect.lock_owner(home, r.dest).is_none()
                    && !interconnect.has_waiting(home, r.dest, MASTER_CTRL)
                {
                    let beat = Beat::control(BeatKind::Grant, r.task_id, home, r.dest);
                    let ok = interconnect.submit(now, MASTER_CTRL, beat);
                    debug_assert!(ok);
                    interconnect.lock_lane(home, r.dest, r.task_id);
                    r.phase = ReaderPhase::Streaming;
                }
            }

            // A fully drained reader closes its stream.
            let reader_done = cl.reader.as_ref().is_some_and(|r| {
                r.phase == ReaderPhase::Streaming
                    && r.delivered == r.out_words
                    && r.fe.as_ref().is_none_or(|f| f.reader_complete())
            });
            if reader_done {
                let r = cl.reader.as_mut().expect("checked");
                if r.local {
                    r.chain.finish_input()?;
                    let w = cl.writer.as_mut().ok_or_else(|| {
                        SimError::Protocol(format!(
                            "local reader of task {:#x} lost its paired writer",
                            r.task_id
                        ))
                    })?;
                    w.finish_seen = true;
                    cl.reader = None;
                } else if cl.tx.is_empty()
                    && !interconnect.has_waiting(home, r.dest, MASTER_DATA)
                {
                    r.chain.finish_input()?;
                    let beat = Beat::control(BeatKind::Finish, r.task_id, home, r.dest);
                    let ok = interconnect.submit(now, MASTER_DATA, beat);
                    debug_assert!(ok);
                    cl.reader = None;
                }
            }
        }

        // ---- Phase D: frontends -------------------------------------
        for cl in clusters.iter_mut() {
            cl.arb.reset();
            let local_pair = match (&cl.reader, &cl.writer) {
                (Some(r), Some(w)) => r.local && r.task_id == w.task_id,
                _ => false,
            };
            let reader_first = local_pair || now % 2 == 0;
            for phase in 0..2 {
                let do_reader = (phase == 0) == reader_first;
                if do_reader {
                    match &mut cl.reader {
                        Some(r) if r.phase == ReaderPhase::Streaming => {
                            tick_reader_side(
                                r,
                                &cl.mem,
                                &mut cl.arb,
                                &mut cl.tx,
                                &mut cl.pipe,
                                cl.pipe_cap,
                                cl.writer.as_mut(),
                                cfg.nchan_src,
                                &mut metrics.stalls,
                            )?;
                        }
                        Some(_) => metrics.stalls.cfg_phase += 1,
                        None if !cl.reader_fifo.is_empty() => metrics.stalls.cfg_phase += 1,
                        None => {}
                    }
                } else if let Some(w) = &mut cl.writer {
                    let rep = tick_writer_side(
                        w,
                        &mut cl.mem,
                        &mut cl.arb,
                        &mut cl.rx,
                        &mut cl.pipe,
                        cfg.nchan_dst,
                        &mut metrics.stalls,
                    )?;
                    if rep.granted > 0 {
                        metrics.record_end(now);
                        metrics.bytes_moved += rep.granted as u64 * word_bytes;
                    }
                }
            }
            // Writer teardown: everything written and the producer closed.
            let writer_done = cl
                .writer
                .as_ref()
                .is_some_and(|w| w.finish_seen && w.fe.writer_complete());
            if writer_done {
                let mut w = cl.writer.take().expect("checked");
                w.chain.finish_input()?;
                debug_assert!(w.local || cl.rx.is_empty(), "undrained staging at teardown");
                completed.insert(w.task_id, now);
                cl.rx_task = None;
            }
        }

        // ---- Phase E: link arbitration ------------------------------
        for dep in interconnect.arbitrate(now) {
            trace.record(TraceEvent {
                cycle: now,
                kind: TraceKind::Departed,
                beat: dep.kind,
                task_id: dep.task_id,
                from_cluster: dep.from,
                to_cluster: dep.to,
                lane: dep.from * n + dep.to,
                payload_bytes: dep.payload_bytes,
            });
            match dep.kind {
                BeatKind::Data => metrics.data_beats += 1,
                _ => metrics.ctrl_beats += 1,
            }
        }
        *cycle += 1;
        Ok(())
    }
}

/// Handles a cfg assembled off the wire: a half goes onto its task FIFO, a
/// forwarded full cfg is routed again from here. Returns false if FIFO
/// space is missing (caller parks it; cfg beats from that source stall).
fn enqueue_wire_cfg(
    cl: &mut Cluster,
    soc: &SocConfig,
    home: usize,
    cfg: &XdmaCfg,
) -> Result<bool, SimError> {
    if cfg.src_pattern.is_some() && cfg.dst_pattern.is_some() {
        // Forwarded whole cfg: this cluster owns the source side.
        validate_task(cfg, soc)?;
        let routed = route(cfg, home);
        let mut need_r = 0;
        let mut need_w = 0;
        for r in &routed {
            match r {
                RoutedHalf::Local { role: Role::Reader, .. } => need_r += 1,
                RoutedHalf::Local { role: Role::Writer, .. } => need_w += 1,
                _ => {}
            }
        }
        if cl.reader_fifo.len() + need_r > soc.task_fifo_depth
            || cl.writer_fifo.len() + need_w > soc.task_fifo_depth
        {
            return Ok(false);
        }
        for r in routed {
            match r {
                RoutedHalf::Local { role: Role::Reader, half } => cl.reader_fifo.push(half)?,
                RoutedHalf::Local { role: Role::Writer, half } => cl.writer_fifo.push(half)?,
                RoutedHalf::Remote { to_cluster, half } => {
                    debug_assert!(
                        half.src_pattern.is_none(),
                        "forwarded cfg re-routes as a push"
                    );
                    let beats = cfg_beats(
                        &half,
                        to_cluster,
                        home,
                        soc.beat_bytes() as usize,
                        soc.word_bytes(),
                        soc.dim_src.max(soc.dim_dst),
                    )?;
                    cl.outbox.entry(to_cluster).or_default().extend(beats);
                }
                RoutedHalf::Forward { .. } => {
                    return Err(SimError::Protocol(
                        "forwarded cfg forwarded again".to_string(),
                    ))
                }
            }
        }
        return Ok(true);
    }
    // A single half: reader halves queue on the reader FIFO, writer halves
    // on the writer FIFO.
    if cfg.src_pattern.is_some() {
        if cl.reader_fifo.push(cfg.clone()).is_err() {
            return Ok(false);
        }
    } else if cl.writer_fifo.push(cfg.clone()).is_err() {
        return Ok(false);
    }
    cl.from_wire.insert(cfg.task_id);
    Ok(true)
}

fn make_reader_lane(
    soc: &SocConfig,
    home: usize,
    half: XdmaCfg,
    from_wire: bool,
    granted: &mut BTreeSet<u64>,
) -> Result<ReaderLane, SimError> {
    let chain = PluginChain::build(
        &soc.ext_src,
        &padded(&half.reader_ctrl, soc.ext_src.len()),
        soc.nchan_src,
    )?;
    let out_words = chain.output_len(half.src_words())?;
    let fe = half.src_pattern.as_ref().map(|p| {
        FrontendState::new_reader(
            AddressGenerator::new(half.src_base, p.clone()),
            soc.dbuf_src,
            soc.nchan_src,
        )
    });
    let local = half.dst_cluster == home;
    let phase = if local {
        ReaderPhase::Streaming
    } else if from_wire {
        ReaderPhase::SendGrant
    } else if granted.remove(&half.task_id) {
        ReaderPhase::Streaming
    } else {
        return Err(SimError::Protocol(format!(
            "push reader of task {:#x} dispatched before its grant",
            half.task_id
        )));
    };
    Ok(ReaderLane {
        task_id: half.task_id,
        fe,
        chain,
        dest: half.dst_cluster,
        local,
        phase,
        out_words,
        delivered: 0,
    })
}

fn make_writer_lane(
    soc: &SocConfig,
    home: usize,
    half: XdmaCfg,
    grant_duty: bool,
) -> Result<WriterLane, SimError> {
    let chain = PluginChain::build(
        &soc.ext_dst,
        &padded(&half.writer_ctrl, soc.ext_dst.len()),
        soc.nchan_dst,
    )?;
    let pattern = half.dst_pattern.clone().ok_or_else(|| {
        SimError::Protocol(format!("writer half of task {:#x} has no pattern", half.task_id))
    })?;
    let fe = FrontendState::new_writer(
        AddressGenerator::new(half.dst_base, pattern),
        soc.dbuf_dst,
        soc.nchan_dst,
    );
    Ok(WriterLane {
        task_id: half.task_id,
        fe,
        chain,
        from: half.src_cluster,
        local: half.src_cluster == home,
        grant_duty,
        grant_sent: false,
        finish_seen: false,
    })
}

/// Where a reader lane's finished words go this cycle.
enum Down<'a> {
    /// Remote: the outgoing beat packer.
    Tx(&'a mut BeatStaging),
    /// Local with a writer-side chain: straight into that chain.
    WChain(&'a mut PluginChain, usize),
    /// Local without one: the in-cluster pipe.
    Pipe(&'a mut VecDeque<u64>, usize),
}

impl Down<'_> {
    fn room(&self) -> usize {
        match self {
            Down::Tx(st) => st.room(),
            Down::WChain(c, budget) => {
                if *budget > 0 && c.can_accept() {
                    *budget
                } else {
                    0
                }
            }
            Down::Pipe(p, cap) => cap.saturating_sub(p.len()),
        }
    }

    fn accept(&mut self, w: u64) {
        match self {
            Down::Tx(st) => st.push_word(w),
            Down::WChain(c, budget) => {
                c.push(w);
                *budget -= 1;
            }
            Down::Pipe(p, _) => p.push_back(w),
        }
    }
}

/// Reader-frontend sink going straight downstream (no reader chain),
/// counting delivered words against the shared outflow budget.
struct DownSink<'a, 'b> {
    down: &'a mut Down<'b>,
    delivered: &'a mut u64,
    budget: &'a mut usize,
}

impl WordSink for DownSink<'_, '_> {
    fn room(&self) -> usize {
        (*self.budget).min(self.down.room())
    }

    fn accept(&mut self, word: u64) {
        self.down.accept(word);
        *self.delivered += 1;
        *self.budget -= 1;
    }
}

/// Reader-frontend sink into the reader's own chain.
struct ChainInlet<'a> {
    chain: &'a mut PluginChain,
    budget: usize,
}

impl WordSink for ChainInlet<'_> {
    fn room(&self) -> usize {
        if self.budget > 0 && self.chain.can_accept() {
            self.budget
        } else {
            0
        }
    }

    fn accept(&mut self, word: u64) {
        self.chain.push(word);
        self.budget -= 1;
    }
}

struct StagingSource<'a>(&'a mut BeatStaging);

impl WordSource for StagingSource<'_> {
    fn available(&self) -> usize {
        self.0.len()
    }
    fn pull(&mut self) -> Option<u64> {
        self.0.pop_word()
    }
}

struct PipeSource<'a>(&'a mut VecDeque<u64>);

impl WordSource for PipeSource<'_> {
    fn available(&self) -> usize {
        self.0.len()
    }
    fn pull(&mut self) -> Option<u64> {
        self.0.pop_front()
    }
}

struct ChainSource<'a>(&'a mut PluginChain);

impl WordSource for ChainSource<'_> {
    fn available(&self) -> usize {
        self.0.ready_len()
    }
    fn pull(&mut self) -> Option<u64> {
        self.0.pop_ready()
    }
}

#[allow(clippy::too_many_arguments)]
fn tick_reader_side(
    r: &mut ReaderLane,
    mem: &ClusterMemory,
    arb: &mut BankArbiter,
    tx: &mut BeatStaging,
    pipe: &mut VecDeque<u64>,
    pipe_cap: usize,
    writer: Option<&mut WriterLane>,
    nchan: usize,
    stalls: &mut StallBreakdown,
) -> Result<(), MemError> {
    let mut down = if r.local {
        let w = writer.expect("local reader is always paired");
        if w.chain.is_empty() {
            Down::Pipe(pipe, pipe_cap)
        } else {
            Down::WChain(&mut w.chain, nchan)
        }
    } else {
        Down::Tx(tx)
    };

    // Chain output boundary: finished words move downstream, then the chain
    // shifts internally.
    if !r.chain.is_empty() {
        let mut budget = nchan;
        while budget > 0 && down.room() > 0 {
            match r.chain.pop_ready() {
                Some(w) => {
                    down.accept(w);
                    r.delivered += 1;
                    budget -= 1;
                }
                None => break,
            }
        }
        r.chain.tick();
    }

    // Frontend outflow: buffered words first (they are oldest), then the
    // tick itself, sharing one handshake budget.
    let mut out_budget = nchan;
    let Some(fe) = r.fe.as_mut() else {
        return Ok(());
    };
    while out_budget > 0 && !fe.buffer.is_empty() {
        if r.chain.is_empty() {
            if down.room() == 0 {
                break;
            }
            let w = fe.buffer.pop().expect("non-empty");
            down.accept(w);
            r.delivered += 1;
        } else {
            if !r.chain.can_accept() {
                break;
            }
            let w = fe.buffer.pop().expect("non-empty");
            r.chain.push(w);
        }
        out_budget -= 1;
    }

    let report = if r.chain.is_empty() {
        let mut sink = DownSink {
            down: &mut down,
            delivered: &mut r.delivered,
            budget: &mut out_budget,
        };
        fe.reader_tick(mem, arb, Some(&mut sink))?
    } else {
        let mut sink = ChainInlet {
            chain: &mut r.chain,
            budget: out_budget,
        };
        fe.reader_tick(mem, arb, Some(&mut sink))?
    };
    stalls.bank_conflict += report.conflicted as u64;
    if report.issued == 0 && report.occupancy == fe.buffer.capacity() {
        stalls.buffer_full += 1;
    }
    Ok(())
}

fn tick_writer_side(
    w: &mut WriterLane,
    mem: &mut ClusterMemory,
    arb: &mut BankArbiter,
    rx: &mut BeatStaging,
    pipe: &mut VecDeque<u64>,
    nchan: usize,
    stalls: &mut StallBreakdown,
) -> Result<CycleReport, MemError> {
    w.chain.tick();
    // Feed the chain from incoming staging (remote only; a local reader
    // pushes into the chain directly).
    if !w.chain.is_empty() && !w.local {
        let mut budget = nchan;
        while budget > 0 && w.chain.can_accept() {
            match rx.pop_word() {
                Some(word) => {
                    w.chain.push(word);
                    budget -= 1;
                }
                None => break,
            }
        }
    }
    let report = if !w.chain.is_empty() {
        let mut src = ChainSource(&mut w.chain);
        w.fe.writer_tick(mem, arb, Some(&mut src))?
    } else if w.local {
        let mut src = PipeSource(pipe);
        w.fe.writer_tick(mem, arb, Some(&mut src))?
    } else {
        let mut src = StagingSource(rx);
        w.fe.writer_tick(mem, arb, Some(&mut src))?
    };
    stalls.bank_conflict += report.conflicted as u64;
    Ok(report)
}

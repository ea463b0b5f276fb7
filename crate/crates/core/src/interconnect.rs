//! Inter-cluster link model: one lane per ordered cluster pair, each moving
//! at most one beat per cycle with a fixed traversal latency.
//!
//! Masters submit beats during a cycle; at cycle end the lane admits the
//! waiting beat with the earliest submission stamp (ties to the lower master
//! id) into its latency pipeline — first come, first served. A lane can be
//! locked to one task for circuit switching: while locked, foreign *data*
//! beats wait with their original stamp, so the direction's bandwidth
//! belongs to the owning stream. Single control beats (cfg, grant, finish)
//! still interleave — they are how the opposite direction's tunnel gets set
//! up, and blocking them would serialize full-duplex traffic. The lock
//! releases itself when the owner's finish beat departs, which keeps any
//! parked beat strictly behind the finish in the delivery pipeline.
//!
//! Delivery is in submission order. The receiver may hold a delivered-ready
//! beat (e.g. full staging); the head then blocks the lane, which is exactly
//! link backpressure.

use crate::backend::Beat;
use crate::trace::BeatKind;
use std::collections::{BTreeMap, VecDeque};

/// Summary of one admitted beat, for trace recording.
#[derive(Debug, Clone, Copy)]
pub struct Departure {
    pub from: usize,
    pub to: usize,
    pub task_id: u64,
    pub kind: crate::trace::BeatKind,
    pub payload_bytes: u64,
}

struct Waiting {
    stamp: u64,
    master: usize,
    beat: Beat,
}

#[derive(Default)]
struct Lane {
    waiting: Vec<Waiting>,
    /// (deliver_at, beat), in admission order.
    pipeline: VecDeque<(u64, Beat)>,
    lock: Option<u64>,
}

pub struct Interconnect {
    latency: u64,
    lanes: BTreeMap<(usize, usize), Lane>,
}

impl Interconnect {
    pub fn new(num_clusters: usize, latency: u64) -> Self {
        let mut lanes = BTreeMap::new();
        for a in 0..num_clusters {
            for b in 0..num_clusters {
                if a != b {
                    lanes.insert((a, b), Lane::default());
                }
            }
        }
        Interconnect { latency, lanes }
    }

    fn lane(&self, from: usize, to: usize) -> &Lane {
        self.lanes.get(&(from, to)).expect("lane exists")
    }

    fn lane_mut(&mut self, from: usize, to: usize) -> &mut Lane {
        self.lanes.get_mut(&(from, to)).expect("lane exists")
    }

    /// Whether `master` already has a beat waiting for admission on the
    /// `from`->`to` lane (one outstanding submission per master per lane).
    pub fn has_waiting(&self, from: usize, to: usize, master: usize) -> bool {
        self.lane(from, to).waiting.iter().any(|w| w.master == master)
    }

    /// Offers a beat for admission. Returns false (and drops nothing — the
    /// caller keeps the beat) if this master already has one waiting here.
    pub fn submit(&mut self, cycle: u64, master: usize, beat: Beat) -> bool {
        if self.has_waiting(beat.from_cluster, beat.to_cluster, master) {
            return false;
        }
        let lane = self.lane_mut(beat.from_cluster, beat.to_cluster);
        lane.waiting.push(Waiting {
            stamp: cycle,
            master,
            beat,
        });
        true
    }

    /// End-of-cycle arbitration: each lane admits at most one waiting beat
    /// (earliest stamp, lowest master id; foreign data beats excluded while
    /// locked) into the latency pipeline. Returns what departed.
    pub fn arbitrate(&mut self, cycle: u64) -> Vec<Departure> {
        let latency = self.latency;
        let mut departed = Vec::new();
        for (&(from, to), lane) in self.lanes.iter_mut() {
            let mut best: Option<usize> = None;
            for (i, w) in lane.waiting.iter().enumerate() {
                if let Some(owner) = lane.lock {
                    if w.beat.task_id != owner && w.beat.kind == BeatKind::Data {
                        continue;
                    }
                }
                let better = match best {
                    None => true,
                    Some(j) => {
                        (w.stamp, w.master) < (lane.waiting[j].stamp, lane.waiting[j].master)
                    }
                };
                if better {
                    best = Some(i);
                }
            }
            if let Some(i) = best {
                let w = lane.waiting.remove(i);
                if lane.lock == Some(w.beat.task_id) && w.beat.kind == BeatKind::Finish {
                    lane.lock = None;
                }
                departed.push(Departure {
                    from,
                    to,
                    task_id: w.beat.task_id,
                    kind: w.beat.kind,
                    payload_bytes: w.beat.payload.len() as u64,
                });
                lane.pipeline.push_back((cycle + latency, w.beat));
            }
        }
        departed
    }

    /// The beat ready for delivery on a lane this cycle, if any.
    pub fn ready_beat(&self, from: usize, to: usize, cycle: u64) -> Option<&Beat> {
        self.lane(from, to)
            .pipeline
            .front()
            .filter(|(at, _)| *at <= cycle)
            .map(|(_, b)| b)
    }

    /// Removes and returns the ready head beat. Not calling this leaves the
    /// beat at the head, blocking everything behind it (backpressure).
    pub fn take_ready(&mut self, from: usize, to: usize, cycle: u64) -> Option<Beat> {
        let lane = self.lane_mut(from, to);
        if lane.pipeline.front().is_some_and(|(at, _)| *at <= cycle) {
            lane.pipeline.pop_front().map(|(_, b)| b)
        } else {
            None
        }
    }

    /// Reserves a direction for `task` (circuit switching).
    pub fn lock_lane(&mut self, from: usize, to: usize, task: u64) {
        let lane = self.lane_mut(from, to);
        debug_assert!(lane.lock.is_none(), "lane already locked");
        lane.lock = Some(task);
    }

    /// Releases a direction after the owning task's finish beat departs.
    pub fn unlock_lane(&mut self, from: usize, to: usize, task: u64) {
        let lane = self.lane_mut(from, to);
        debug_assert_eq!(lane.lock, Some(task), "unlock by non-owner");
        lane.lock = None;
    }

    pub fn lock_owner(&self, from: usize, to: usize) -> Option<u64> {
        self.lane(from, to).lock
    }

    /// True when no beat is waiting or in flight anywhere.
    pub fn idle(&self) -> bool {
        self.lanes
            .values()
            .all(|l| l.waiting.is_empty() && l.pipeline.is_empty())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::BeatKind;

    fn data_beat(task: u64, from: usize, to: usize) -> Beat {
        Beat {
            kind: BeatKind::Data,
            task_id: task,
            from_cluster: from,
            to_cluster: to,
            dest_mmio: crate::backend::mailbox_addr(to, BeatKind::Data),
            payload: vec![0u8; 64],
            valid_words: 8,
        }
    }

    #[test]
    fn beat_arrives_after_exactly_the_link_latency() {
        let mut ic = Interconnect::new(2, 4);
        assert!(ic.submit(10, 0, data_beat(1, 0, 1)));
        ic.arbitrate(10);
        for c in 10..14 {
            assert!(ic.ready_beat(0, 1, c).is_none(), "early at {c}");
        }
        assert!(ic.ready_beat(0, 1, 14).is_some());
        assert_eq!(ic.take_ready(0, 1, 14).unwrap().task_id, 1);
    }

    #[test]
    fn back_to_back_beats_sustain_one_per_cycle() {
        let mut ic = Interconnect::new(2, 4);
        for c in 10..13 {
            assert!(ic.submit(c, 0, data_beat(1, 0, 1)));
            ic.arbitrate(c);
        }
        for c in 14..17 {
            assert!(ic.take_ready(0, 1, c).is_some(), "missing beat at {c}");
        }
        assert!(ic.idle());
    }

    #[test]
    fn same_cycle_tie_goes_to_lower_master_id() {
        let mut ic = Interconnect::new(2, 4);
        assert!(ic.submit(5, 1, data_beat(11, 0, 1)));
        assert!(ic.submit(5, 0, data_beat(10, 0, 1)));
        let d = ic.arbitrate(5);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].task_id, 10);
        let d = ic.arbitrate(6);
        assert_eq!(d[0].task_id, 11);
    }

    #[test]
    fn sustained_contention_alternates_masters() {
        let mut ic = Interconnect::new(2, 4);
        let mut admitted = Vec::new();
        for c in 0..8u64 {
            // Each master re-offers as soon as its slot frees.
            for m in 0..2 {
                if !ic.has_waiting(0, 1, m) {
                    ic.submit(c, m, data_beat(100 + m as u64, 0, 1));
                }
            }
            for dep in ic.arbitrate(c) {
                admitted.push(dep.task_id);
            }
        }
        assert_eq!(admitted, vec![100, 101, 100, 101, 100, 101, 100, 101]);
    }

    #[test]
    fn one_waiting_slot_per_master() {
        let mut ic = Interconnect::new(2, 4);
        assert!(ic.submit(0, 0, data_beat(1, 0, 1)));
        assert!(!ic.submit(0, 0, data_beat(2, 0, 1)), "slot occupied");
        ic.arbitrate(0);
        assert!(ic.submit(1, 0, data_beat(2, 0, 1)));
    }

    #[test]
    fn locked_lane_admits_only_the_owner() {
        let mut ic = Interconnect::new(2, 4);
        ic.lock_lane(0, 1, 7);
        assert!(ic.submit(0, 0, data_beat(9, 0, 1)));
        assert!(ic.submit(0, 1, data_beat(7, 0, 1)));
        let d = ic.arbitrate(0);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].task_id, 7, "owner bypasses earlier-stamped stranger");
        assert!(ic.arbitrate(1).is_empty(), "stranger stays parked");
        ic.unlock_lane(0, 1, 7);
        let d = ic.arbitrate(2);
        assert_eq!(d[0].task_id, 9, "parked beat admitted after unlock");
    }

    #[test]
    fn control_beats_interleave_on_a_locked_lane() {
        // A locked direction excludes foreign data, but a foreign grant
        // (the opposite tunnel's setup) still crosses it.
        let mut ic = Interconnect::new(2, 4);
        ic.lock_lane(0, 1, 7);
        assert!(ic.submit(0, 0, Beat::control(BeatKind::Grant, 9, 0, 1)));
        assert!(ic.submit(0, 1, data_beat(7, 0, 1)));
        let d = ic.arbitrate(0);
        assert_eq!(d.len(), 1);
        assert_eq!((d[0].task_id, d[0].kind), (9, BeatKind::Grant));
        assert_eq!(ic.arbitrate(1)[0].task_id, 7, "owner data follows");
    }

    #[test]
    fn finish_departure_releases_the_lock() {
        let mut ic = Interconnect::new(2, 4);
        ic.lock_lane(0, 1, 7);
        assert!(ic.submit(0, 0, data_beat(9, 0, 1)));
        assert!(ic.submit(0, 1, Beat::control(BeatKind::Finish, 7, 0, 1)));
        let d = ic.arbitrate(0);
        assert_eq!((d[0].task_id, d[0].kind), (7, BeatKind::Finish));
        assert!(ic.lock_owner(0, 1).is_none(), "finish departure unlocks");
        assert_eq!(ic.arbitrate(1)[0].task_id, 9, "parked data follows finish");
    }

    #[test]
    fn held_delivery_blocks_the_lane_head() {
        let mut ic = Interconnect::new(2, 4);
        ic.submit(0, 0, data_beat(1, 0, 1));
        ic.arbitrate(0);
        ic.submit(1, 0, data_beat(2, 0, 1));
        ic.arbitrate(1);
        // Receiver ignores the ready beat at cycles 4-6 (e.g. staging full).
        for c in 4..7 {
            assert_eq!(ic.ready_beat(0, 1, c).unwrap().task_id, 1);
        }
        assert_eq!(ic.take_ready(0, 1, 7).unwrap().task_id, 1);
        assert_eq!(ic.take_ready(0, 1, 7).unwrap().task_id, 2, "backlog drains");
    }

    #[test]
    fn directions_are_independent_lanes() {
        let mut ic = Interconnect::new(2, 4);
        ic.submit(0, 0, data_beat(1, 0, 1));
        ic.submit(0, 0, data_beat(2, 1, 0));
        ic.arbitrate(0);
        assert!(ic.take_ready(0, 1, 4).is_some());
        assert!(ic.take_ready(1, 0, 4).is_some());
    }

    #[test]
    fn per_master_order_is_preserved() {
        let mut ic = Interconnect::new(2, 4);
        let mut got = Vec::new();
        let mut next = 0u64;
        for c in 0..20u64 {
            if !ic.has_waiting(0, 1, 0) && next < 5 {
                ic.submit(c, 0, data_beat(next, 0, 1));
                next += 1;
            }
            ic.arbitrate(c);
            if let Some(b) = ic.take_ready(0, 1, c) {
                got.push(b.task_id);
            }
        }
        assert_eq!(got, vec![0, 1, 2, 3, 4]);
    }
}

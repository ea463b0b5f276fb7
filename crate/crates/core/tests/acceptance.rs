//! End-to-end acceptance gate. Each test is one promised property of the
//! simulator, prints a single summary line with its measured numbers, and
//! fails loudly if the property does not hold.

use rayon::prelude::*;
use std::collections::BTreeMap;
use std::sync::OnceLock;
use xdma_sim::backend::XdmaCfg;
use xdma_sim::baselines::baseline_cycles;
use xdma_sim::config::SocConfig;
use xdma_sim::harness::{
    analytic_bound, desk_grid, random_task_set, run_sweep, run_task_set, run_workload, KvStage,
    RunOptions, SweepResult, Workload,
};
use xdma_sim::layout::{AffinePattern, LayoutSpec};
use xdma_sim::sim::Soc;

const LAYOUTS: [LayoutSpec; 4] = [
    LayoutSpec::RowMajor,
    LayoutSpec::Tiled { tm: 8, tn: 8 },
    LayoutSpec::Tiled { tm: 8, tn: 16 },
    LayoutSpec::Tiled { tm: 8, tn: 32 },
];

/// The standard desk-scale sweep, shared by the utilization, spread and
/// determinism tests.
fn sweep() -> &'static SweepResult {
    static SWEEP: OnceLock<SweepResult> = OnceLock::new();
    SWEEP.get_or_init(|| run_sweep(&SocConfig::default(), &desk_grid(), 7).expect("sweep runs"))
}

fn report(line: std::fmt::Arguments) {
    println!("acceptance: {line}: pass");
}

fn copy_task(s: &mut Soc, home: usize, src: u64, dst: u64, words: u64) -> XdmaCfg {
    XdmaCfg {
        task_id: s.next_task_id(home),
        src_cluster: s.cfg.cluster_of_addr(src).unwrap(),
        dst_cluster: s.cfg.cluster_of_addr(dst).unwrap(),
        src_base: src,
        dst_base: dst,
        src_pattern: Some(AffinePattern::contiguous(words, 8)),
        dst_pattern: Some(AffinePattern::contiguous(words, 8)),
        reader_ctrl: vec![],
        writer_ctrl: vec![],
    }
}

#[test]
fn c01_layout_transforms_are_bit_exact() {
    let cfg = SocConfig::default();
    let mut runs = 0u32;
    for src in LAYOUTS {
        for dst in LAYOUTS {
            for rows in [32u64, 64, 128] {
                for cols in [32u64, 64, 128] {
                    let w = Workload::Transform { src, dst, rows, cols, elem: 1 };
                    run_workload(&cfg, &w, &RunOptions::default()).unwrap_or_else(|e| {
                        panic!("{src:?} -> {dst:?} at {rows}x{cols}: {e}")
                    });
                    runs += 1;
                }
            }
        }
    }
    report(format_args!(
        "c01 destination image matches the reference permutation on all {runs} layout-pair runs"
    ));
}

#[test]
fn c02_large_contiguous_copy_saturates_the_link() {
    let cfg = SocConfig::default();
    let rep = run_workload(&cfg, &Workload::Copy { words: 8192 }, &RunOptions::default())
        .expect("copy runs");
    assert!(
        rep.utilization >= 0.95,
        "utilization {:.4} under the 0.95 floor",
        rep.utilization
    );
    report(format_args!(
        "c02 64 KiB contiguous copy sustains {:.4} link utilization (floor 0.95)",
        rep.utilization
    ));
}

#[test]
fn c03_deeper_stream_buffers_raise_average_utilization() {
    let s = sweep();
    assert_eq!(s.dbufs, vec![3, 5, 9]);
    let (u3, u5, u9) = (s.avg_util(0), s.avg_util(1), s.avg_util(2));
    assert!(
        u9 >= u5 && u5 >= u3,
        "averages not monotone in depth: {u3:.4} {u5:.4} {u9:.4}"
    );
    let r93 = u9 / u3;
    let r95 = u9 / u5;
    assert!(
        (1.2..=2.5).contains(&r93),
        "depth-9/depth-3 ratio {r93:.4} outside [1.2, 2.5]"
    );
    assert!(
        (1.0..=1.3).contains(&r95),
        "depth-9/depth-5 ratio {r95:.4} outside [1.0, 1.3]"
    );
    report(format_args!(
        "c03 sweep average utilization rises with buffer depth \
         ({u3:.4} / {u5:.4} / {u9:.4}; 9:3 = {r93:.3}, 9:5 = {r95:.3})"
    ));
}

#[test]
fn c04_hardware_reshape_beats_every_software_baseline() {
    let cfg = SocConfig::default();
    let (src, dst) = (LAYOUTS[0], LAYOUTS[1]);
    let (rows, cols) = (512u64, 512u64);
    let rep = run_workload(
        &cfg,
        &Workload::Transform { src, dst, rows, cols, elem: 1 },
        &RunOptions::default(),
    )
    .expect("reshape runs");
    let b = baseline_cycles(
        src,
        dst,
        rows,
        cols,
        1,
        cfg.word_bytes(),
        cfg.beat_bytes(),
        &cfg.baselines,
    );
    let x = rep.window_cycles as f64;
    let vs_slow = b.sw_slow as f64 / x;
    let vs_fast = b.sw_fast as f64 / x;
    let vs_accel = b.accel as f64 / x;
    assert!(vs_slow >= 50.0, "speedup over slow-core loop {vs_slow:.1} < 50");
    assert!(vs_fast >= 5.0, "speedup over fast-core loop {vs_fast:.1} < 5");
    assert!(
        (1.5..=3.5).contains(&vs_accel),
        "speedup over copy-then-reshape {vs_accel:.2} outside [1.5, 3.5]"
    );
    assert!(
        b.sw_slow > b.sw_fast
            && b.sw_fast > b.sw_pipelined
            && b.sw_pipelined as f64 > x,
        "cost ordering broken: {} / {} / {} / {}",
        b.sw_slow,
        b.sw_fast,
        b.sw_pipelined,
        rep.window_cycles
    );
    report(format_args!(
        "c04 512x512 reshape window {} cycles: {vs_slow:.1}x slow loop, \
         {vs_fast:.1}x fast loop, {vs_accel:.2}x copy-then-reshape, ordering holds",
        rep.window_cycles
    ));
}

#[test]
fn c05_kv_transfer_time_scales_with_context_length() {
    let cfg = SocConfig::default();
    let mut windows: BTreeMap<&str, u64> = BTreeMap::new();
    for st in KvStage::ALL {
        let (rows, cols) = st.default_shape();
        let rep = run_workload(&cfg, &st.workload(rows, cols), &RunOptions::default())
            .unwrap_or_else(|e| panic!("stage {}: {e}", st.name()));
        windows.insert(st.name(), rep.window_cycles);
    }
    let l1 = windows["load1"] as f64;
    let r2 = windows["load2"] as f64 / l1;
    let r3 = windows["load3"] as f64 / l1;
    assert!(
        (1.95..=2.05).contains(&r2),
        "2x context ratio {r2:.4} outside [1.95, 2.05]"
    );
    assert!(
        (3.90..=4.10).contains(&r3),
        "4x context ratio {r3:.4} outside [3.90, 4.10]"
    );
    report(format_args!(
        "c05 cache-load window scales with context length \
         (loads {} / {} / {} cycles; ratios {r2:.3} and {r3:.3})",
        windows["load1"], windows["load2"], windows["load3"]
    ));
}

#[test]
fn c06_shallow_buffers_spread_utilization_wider() {
    let s = sweep();
    let (d3, d9) = (s.util_stddev(0), s.util_stddev(2));
    assert!(
        d3 > d9,
        "depth-3 spread {d3:.4} not above depth-9 spread {d9:.4}"
    );
    report(format_args!(
        "c06 utilization spread shrinks with depth (stddev {d3:.4} at 3 vs {d9:.4} at 9)"
    ));
}

#[test]
fn c07_random_schedules_finish_within_the_analytic_bound() {
    let cfg = SocConfig::default();
    let failures: Vec<u64> = (0..1000u64)
        .into_par_iter()
        .filter_map(|seed| {
            let tasks = random_task_set(&cfg, seed);
            let bound = analytic_bound(&cfg, &tasks);
            match run_task_set(&cfg, &tasks) {
                Ok(cycles) => (cycles > bound).then_some(seed),
                Err(_) => Some(seed),
            }
        })
        .collect();
    assert!(failures.is_empty(), "seeds past the bound: {failures:?}");
    report(format_args!(
        "c07 1000 seeded random schedules all completed within their analytic bound"
    ));
}

#[test]
fn c08_duplex_streams_keep_near_solo_completion_times() {
    let words = 8192u64;
    let solo = {
        let mut s = Soc::new(SocConfig::default()).unwrap();
        s.mem_mut(0).fill_random(0x1000_0000, words * 8, 41).unwrap();
        let t = copy_task(&mut s, 0, 0x1000_0000, 0x1100_0000, words);
        let id = t.task_id;
        s.submit(0, t).unwrap();
        s.run_until_idle(200_000).unwrap();
        s.completed[&id]
    };
    let mut s = Soc::new(SocConfig::default()).unwrap();
    s.mem_mut(0).fill_random(0x1000_0000, words * 8, 41).unwrap();
    s.mem_mut(1).fill_random(0x1102_0000, words * 8, 43).unwrap();
    let t1 = copy_task(&mut s, 0, 0x1000_0000, 0x1100_0000, words);
    let t2 = copy_task(&mut s, 1, 0x1102_0000, 0x1002_0000, words);
    let (id1, id2) = (t1.task_id, t2.task_id);
    s.submit(0, t1).unwrap();
    s.submit(1, t2).unwrap();
    s.run_until_idle(200_000).unwrap();
    let worst = s.completed[&id1].max(s.completed[&id2]);
    assert!(
        worst as f64 <= solo as f64 * 1.10,
        "duplex completion {worst} exceeds 110% of solo {solo}"
    );
    report(format_args!(
        "c08 opposing streams finish in {worst} cycles vs {solo} solo (within 110%)"
    ));
}

#[test]
fn c09_sweep_output_is_deterministic() {
    let a = sweep().to_csv();
    let b = run_sweep(&SocConfig::default(), &desk_grid(), 7)
        .expect("sweep runs")
        .to_csv();
    assert!(a == b, "two identically seeded sweeps produced different CSV");
    report(format_args!(
        "c09 identically seeded sweeps emit byte-identical CSV ({} bytes)",
        a.len()
    ));
}

#[test]
fn c10_link_traffic_follows_the_tunnel_protocol() {
    // A traced transform (push with plugins active on the writer side).
    let cfg = SocConfig::default();
    let rep = run_workload(
        &cfg,
        &Workload::Transform {
            src: LAYOUTS[0],
            dst: LAYOUTS[1],
            rows: 64,
            cols: 64,
            elem: 1,
        },
        &RunOptions { trace: true, ..RunOptions::default() },
    )
    .expect("transform runs");
    let tr = rep.trace.expect("trace recorded");
    tr.check_protocol_order().unwrap();
    tr.check_circuit_exclusivity().unwrap();
    let traced_tasks = tr.delivered_kinds().len();
    assert!(traced_tasks >= 1);

    // A concurrent push / pull / generator mix on one pair of clusters.
    let mut s = Soc::new(cfg.clone()).unwrap();
    s.enable_trace();
    s.mem_mut(0).fill_random(0x1000_0000, 32768, 61).unwrap();
    s.mem_mut(1).fill_random(0x1101_0000, 32768, 67).unwrap();
    let push = copy_task(&mut s, 0, 0x1000_0000, 0x1100_0000, 4096);
    let pull = copy_task(&mut s, 0, 0x1101_0000, 0x1001_0000, 4096);
    let gen = XdmaCfg {
        task_id: s.next_task_id(1),
        src_cluster: 1,
        dst_cluster: 0,
        src_base: 0,
        dst_base: 0x1002_0000,
        src_pattern: None,
        dst_pattern: Some(AffinePattern::contiguous(256, 8)),
        reader_ctrl: vec![],
        writer_ctrl: vec![xdma_sim::plugin::memset_ctrl(0x5A, 256)],
    };
    s.submit(0, push).unwrap();
    s.submit(0, pull).unwrap();
    s.submit(1, gen).unwrap();
    s.run_until_idle(200_000).unwrap();
    s.trace.check_protocol_order().unwrap();
    s.trace.check_circuit_exclusivity().unwrap();
    let mixed_tasks = s.trace.delivered_kinds().len();
    assert_eq!(mixed_tasks, 3);

    // A forwarded task (initiator owns neither endpoint).
    let cfg3 = SocConfig {
        num_clusters: 3,
        mem_base_addrs: vec![0x1000_0000, 0x1100_0000, 0x1200_0000],
        ..SocConfig::default()
    };
    let mut s3 = Soc::new(cfg3).unwrap();
    s3.enable_trace();
    s3.mem_mut(0).fill_random(0x1000_0000, 8192, 71).unwrap();
    let fwd = copy_task(&mut s3, 2, 0x1000_0000, 0x1100_0000, 1024);
    s3.submit(2, fwd).unwrap();
    s3.run_until_idle(200_000).unwrap();
    s3.trace.check_protocol_order().unwrap();
    s3.trace.check_circuit_exclusivity().unwrap();

    report(format_args!(
        "c10 every traced task follows cfg+ grant data* finish with an exclusive \
         data window ({} push/pull/generator tasks plus transform and forward runs)",
        mixed_tasks
    ));
}

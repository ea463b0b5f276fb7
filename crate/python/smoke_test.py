#!/usr/bin/env python3
"""Smoke test for the xdma_sim_py extension module.

Build the module first, then run this script:

    cargo build -p xdma-sim-py --release --features extension-module
    python3 python/smoke_test.py

The script stages the built library under an importable name, then walks
the whole Python surface: configuration, a live simulator with CSR-path
submission and protocol checking, the measured workloads, a small sweep,
the baseline cost models, and task-file playback with replay verification.
"""

import pathlib
import shutil
import sys
import sysconfig
import tempfile

REPO = pathlib.Path(__file__).resolve().parent.parent


def import_module():
    candidates = [
        REPO / "target" / "release" / "libxdma_sim_py.so",
        REPO / "target" / "debug" / "libxdma_sim_py.so",
    ]
    built = next((p for p in candidates if p.exists()), None)
    if built is None:
        sys.exit(
            "no built module found; run "
            "`cargo build -p xdma-sim-py --release --features extension-module`"
        )
    stage = pathlib.Path(tempfile.mkdtemp(prefix="xdma_sim_py_"))
    suffix = sysconfig.get_config_var("EXT_SUFFIX") or ".so"
    shutil.copy2(built, stage / f"xdma_sim_py{suffix}")
    sys.path.insert(0, str(stage))
    import xdma_sim_py

    return xdma_sim_py


def main():
    x = import_module()

    # Configuration: defaults, TOML round trip, knob access.
    cfg = x.Config()
    assert cfg.num_clusters == 2
    assert cfg.beat_bytes == 64 and cfg.word_bytes == 8
    text = cfg.to_toml()
    cfg2 = x.Config.from_toml(text)
    assert cfg2.to_toml() == text
    cfg2.dbuf_src = 3
    assert cfg2.dbuf_src == 3
    print(f"config: {cfg!r}")

    # A live simulator: push a 4 KiB copy and a generator fill, then check
    # the destination images and the link protocol.
    soc = x.Soc(cfg)
    soc.enable_trace()
    base0, base1 = cfg.mem_base_addrs
    soc.fill_random(0, base0, 4096, seed=42)
    t_copy = soc.submit_task(
        dst_base=base1,
        dst_bounds=[512],
        dst_strides=[8],
        src_base=base0,
        src_bounds=[512],
        src_strides=[8],
    )
    t_fill = soc.submit_task(
        dst_base=base1 + 0x2000,
        dst_bounds=[64],
        dst_strides=[8],
        writer_ctrl=[(64 << 32) | (0xA5 << 8) | 1],
        home=0,
    )
    cycles = soc.run_until_idle()
    done = soc.completed()
    assert set(done) == {t_copy, t_fill}, done
    assert soc.read_mem(0, base0, 4096) == soc.read_mem(1, base1, 4096)
    assert soc.read_mem(1, base1 + 0x2000, 512) == b"\xa5" * 512
    soc.check_protocol()
    m = soc.metrics()
    assert m["bytes_moved"] == 4096 + 512
    print(f"soc: {cycles} cycles, metrics {m}")

    # Measured workloads with the built-in bit-exactness check.
    copy = x.run_copy(cfg, words=8192)
    assert copy["utilization"] >= 0.95, copy
    reshape = x.run_transform(cfg, "mn", "m8n8", rows=128, cols=128)
    transpose = x.run_transpose(cfg, rows=64, cols=64)
    print(
        f"copy util {copy['utilization']:.4f}, "
        f"reshape window {reshape['window_cycles']}, "
        f"transpose window {transpose['window_cycles']}"
    )

    # Buffer-depth effect on a conflicting transform.
    shallow = x.run_transform(cfg, "mn", "m8n8", rows=128, cols=128, dbuf=3)
    assert shallow["window_cycles"] >= reshape["window_cycles"]

    # One KV-cache stage at a reduced shape.
    kv = x.kv_stage(cfg, "load1", rows=256, cols=512)
    assert kv["bytes"] == 256 * 512
    print(f"kv load1 (256x512): window {kv['window_cycles']} cycles")

    # Baseline cost models.
    b = x.baseline_cycles(cfg, "mn", "m8n8", rows=512, cols=512)
    assert b["sw_slow"] > b["sw_fast"] > b["sw_pipelined"] > b["accel"]
    print(f"baselines: {b}")

    # A small sweep straight from a grid description.
    grid = """
layouts = ["mn", "m8n8"]
sizes = [[32, 32], [64, 64]]
dbufs = [3, 9]
"""
    csv = x.run_sweep(cfg, grid)
    lines = csv.strip().splitlines()
    assert lines[0] == "src_layout,dst_layout,rows,cols,util_d3,util_d9,cycles_d3,cycles_d9"
    assert len(lines) == 1 + 2 * 2, csv
    assert csv == x.run_sweep(cfg, grid), "sweep must be deterministic"
    assert x.desk_grid_toml() and x.full_grid_toml()
    print(f"sweep: {len(lines) - 1} rows")

    # Task-file playback and functional replay verification.
    tasks = (REPO / "configs" / "tasks_demo.toml").read_text()
    played = x.run_task_file(cfg, tasks)
    assert len(played["completed"]) == 4, played
    verified = x.verify_task_file(cfg, tasks)
    assert verified["tasks"] == 4
    print(f"task file: {played['cycles']} cycles, replay verified")

    print("smoke test passed")


if __name__ == "__main__":
    main()

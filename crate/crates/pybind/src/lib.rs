//! Python bindings: the system configuration, a live simulator handle with
//! CSR-path task submission, and one-call wrappers for the measured
//! workloads, sweeps and baseline cost models.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};
use std::fmt::Display;
use xdma_sim::controller::encode_csr;
use xdma_sim::harness::{
    self, KvStage, RunOptions, RunReport, ScheduledTask, SweepGrid, TaskEntry, TaskFile, Workload,
};
use xdma_sim::sim;
use xdma_sim::SocConfig;

fn value_err(e: impl Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// Full system description: cluster count and memory map, bank and link
/// geometry, streamer depths and the installed plugin chains.
#[pyclass(name = "Config", skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: SocConfig,
}

#[pymethods]
impl PyConfig {
    /// The default two-cluster system.
    #[new]
    fn new() -> Self {
        PyConfig { inner: SocConfig::default() }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(PyConfig { inner: SocConfig::from_toml_str(text).map_err(value_err)? })
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml_string().map_err(runtime_err)
    }

    #[getter]
    fn num_clusters(&self) -> usize {
        self.inner.num_clusters
    }

    #[getter]
    fn mem_base_addrs(&self) -> Vec<u64> {
        self.inner.mem_base_addrs.clone()
    }

    #[getter]
    fn mem_size(&self) -> u64 {
        self.inner.mem_size
    }

    #[getter]
    fn get_dbuf_src(&self) -> usize {
        self.inner.dbuf_src
    }

    #[setter]
    fn set_dbuf_src(&mut self, v: usize) {
        self.inner.dbuf_src = v;
    }

    #[getter]
    fn get_dbuf_dst(&self) -> usize {
        self.inner.dbuf_dst
    }

    #[setter]
    fn set_dbuf_dst(&mut self, v: usize) {
        self.inner.dbuf_dst = v;
    }

    #[getter]
    fn get_axi_latency(&self) -> u64 {
        self.inner.axi_latency
    }

    #[setter]
    fn set_axi_latency(&mut self, v: u64) {
        self.inner.axi_latency = v;
    }

    #[getter]
    fn word_bytes(&self) -> u64 {
        self.inner.word_bytes()
    }

    #[getter]
    fn beat_bytes(&self) -> u64 {
        self.inner.beat_bytes()
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(clusters={}, mem={}KiB, beat={}B, latency={}, dbuf={}/{})",
            self.inner.num_clusters,
            self.inner.mem_size / 1024,
            self.inner.beat_bytes(),
            self.inner.axi_latency,
            self.inner.dbuf_src,
            self.inner.dbuf_dst,
        )
    }
}

/// A live simulator: submit tasks over the CSR path, step cycles, and
/// inspect memories, metrics and the link trace.
#[pyclass(name = "Soc", unsendable)]
struct PySoc {
    inner: sim::Soc,
}

#[pymethods]
impl PySoc {
    #[new]
    fn new(config: &PyConfig) -> PyResult<Self> {
        Ok(PySoc { inner: sim::Soc::new(config.inner.clone()).map_err(value_err)? })
    }

    /// Start recording every link beat (departures and deliveries).
    fn enable_trace(&mut self) {
        self.inner.enable_trace();
    }

    /// Seed `len` bytes at `addr` in one cluster's scratchpad.
    fn fill_random(&mut self, cluster: usize, addr: u64, len: u64, seed: u64) -> PyResult<()> {
        self.inner.mem_mut(cluster).fill_random(addr, len, seed).map_err(value_err)
    }

    fn read_mem<'py>(
        &self,
        py: Python<'py>,
        cluster: usize,
        addr: u64,
        len: u64,
    ) -> PyResult<Bound<'py, PyBytes>> {
        let img = self.inner.mem(cluster).dump_image(addr, len).map_err(value_err)?;
        Ok(PyBytes::new(py, &img))
    }

    fn write_mem(&mut self, cluster: usize, addr: u64, data: &[u8]) -> PyResult<()> {
        self.inner.mem_mut(cluster).load_image(addr, data).map_err(value_err)
    }

    /// Submit one transfer; returns its task id. Cluster endpoints are
    /// derived from the base addresses; omit the source side for a
    /// generator-only task. Bounds count words (innermost first), strides
    /// are signed bytes.
    #[pyo3(signature = (
        dst_base, dst_bounds, dst_strides,
        src_base=None, src_bounds=vec![], src_strides=vec![],
        reader_ctrl=vec![], writer_ctrl=vec![], home=None, submit_at=0,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn submit_task(
        &mut self,
        dst_base: u64,
        dst_bounds: Vec<u64>,
        dst_strides: Vec<i64>,
        src_base: Option<u64>,
        src_bounds: Vec<u64>,
        src_strides: Vec<i64>,
        reader_ctrl: Vec<u64>,
        writer_ctrl: Vec<u64>,
        home: Option<usize>,
        submit_at: u64,
    ) -> PyResult<u64> {
        let entry = TaskEntry {
            submit_at,
            home,
            src_base,
            dst_base,
            src_bounds,
            src_strides,
            dst_bounds,
            dst_strides,
            reader_ctrl,
            writer_ctrl,
        };
        let st = entry.to_scheduled(&self.inner.cfg).map_err(value_err)?;
        let writes = encode_csr(&st.cfg).map_err(value_err)?;
        self.inner.submit_csr(st.home, &writes).map_err(value_err)
    }

    /// Advance `n` cycles.
    #[pyo3(signature = (n=1))]
    fn step(&mut self, n: u64) -> PyResult<()> {
        for _ in 0..n {
            self.inner.step().map_err(runtime_err)?;
        }
        Ok(())
    }

    /// Step until nothing is queued, active or in flight; returns the
    /// cycles consumed. Fails once `budget` cycles elapse.
    #[pyo3(signature = (budget=50_000_000))]
    fn run_until_idle(&mut self, budget: u64) -> PyResult<u64> {
        self.inner.run_until_idle(budget).map_err(runtime_err)
    }

    #[getter]
    fn cycle(&self) -> u64 {
        self.inner.cycle()
    }

    fn idle(&self) -> bool {
        self.inner.idle()
    }

    /// Completion cycle of every finished task, keyed by task id.
    fn completed<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        for (id, cycle) in &self.inner.completed {
            d.set_item(id, cycle)?;
        }
        Ok(d)
    }

    fn metrics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let m = &self.inner.metrics;
        let d = PyDict::new(py);
        d.set_item("bytes_moved", m.bytes_moved)?;
        d.set_item("data_beats", m.data_beats)?;
        d.set_item("ctrl_beats", m.ctrl_beats)?;
        d.set_item("window_cycles", m.window_cycles().ok())?;
        d.set_item(
            "utilization",
            m.utilization(self.inner.cfg.beat_bytes()).ok(),
        )?;
        let s = PyDict::new(py);
        s.set_item("bank_conflict", m.stalls.bank_conflict)?;
        s.set_item("buffer_full", m.stalls.buffer_full)?;
        s.set_item("link_backpressure", m.stalls.link_backpressure)?;
        s.set_item("cfg_phase", m.stalls.cfg_phase)?;
        d.set_item("stalls", s)?;
        Ok(d)
    }

    /// The recorded link trace as JSON lines.
    fn trace_jsonl(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        self.inner.trace.write_jsonl(&mut buf).map_err(runtime_err)?;
        String::from_utf8(buf).map_err(runtime_err)
    }

    /// Raises if any traced task strays from `cfg+ grant data* finish` or
    /// if a foreign data beat crosses a granted stream's link direction.
    fn check_protocol(&self) -> PyResult<()> {
        self.inner.trace.check_protocol_order().map_err(value_err)?;
        self.inner.trace.check_circuit_exclusivity().map_err(value_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Soc(cycle={}, completed={}, idle={})",
            self.inner.cycle(),
            self.inner.completed.len(),
            self.inner.idle()
        )
    }
}

fn report_dict<'py>(py: Python<'py>, rep: &RunReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("cycles", rep.cycles)?;
    d.set_item("window_cycles", rep.window_cycles)?;
    d.set_item("bytes", rep.bytes)?;
    d.set_item("utilization", rep.utilization)?;
    d.set_item("words_per_cycle", rep.words_per_cycle)?;
    d.set_item("data_beats", rep.data_beats)?;
    d.set_item("ctrl_beats", rep.ctrl_beats)?;
    let s = PyDict::new(py);
    s.set_item("bank_conflict", rep.stalls.bank_conflict)?;
    s.set_item("buffer_full", rep.stalls.buffer_full)?;
    s.set_item("link_backpressure", rep.stalls.link_backpressure)?;
    s.set_item("cfg_phase", rep.stalls.cfg_phase)?;
    d.set_item("stalls", s)?;
    Ok(d)
}

fn run_one<'py>(
    py: Python<'py>,
    config: &PyConfig,
    w: Workload,
    seed: u64,
    dbuf: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let opt = RunOptions { seed, dbuf, ..RunOptions::default() };
    let rep = harness::run_workload(&config.inner, &w, &opt).map_err(runtime_err)?;
    report_dict(py, &rep)
}

/// Measure a contiguous word copy from cluster 0 to cluster 1.
#[pyfunction]
#[pyo3(signature = (config, words, seed=1, dbuf=None))]
fn run_copy<'py>(
    py: Python<'py>,
    config: &PyConfig,
    words: u64,
    seed: u64,
    dbuf: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    run_one(py, config, Workload::Copy { words }, seed, dbuf)
}

/// Measure a layout transform (layouts: "mn", "m8n8", "m8n16", "m8n32"),
/// checked bit-exactly against the reference permutation.
#[pyfunction]
#[pyo3(signature = (config, src_layout, dst_layout, rows, cols, elem=1, seed=1, dbuf=None))]
#[allow(clippy::too_many_arguments)]
fn run_transform<'py>(
    py: Python<'py>,
    config: &PyConfig,
    src_layout: &str,
    dst_layout: &str,
    rows: u64,
    cols: u64,
    elem: u64,
    seed: u64,
    dbuf: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let src = harness::parse_layout(src_layout).map_err(value_err)?;
    let dst = harness::parse_layout(dst_layout).map_err(value_err)?;
    run_one(py, config, Workload::Transform { src, dst, rows, cols, elem }, seed, dbuf)
}

/// Measure a matrix transpose (byte elements run the in-stream tile flip).
#[pyfunction]
#[pyo3(signature = (config, rows, cols, elem=1, seed=1, dbuf=None))]
fn run_transpose<'py>(
    py: Python<'py>,
    config: &PyConfig,
    rows: u64,
    cols: u64,
    elem: u64,
    seed: u64,
    dbuf: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    run_one(py, config, Workload::Transpose { rows, cols, elem }, seed, dbuf)
}

/// Run a layout-transform sweep from a grid description (TOML) and return
/// the result table as CSV.
#[pyfunction]
#[pyo3(signature = (config, grid_toml, seed=7))]
fn run_sweep(config: &PyConfig, grid_toml: &str, seed: u64) -> PyResult<String> {
    let grid = SweepGrid::from_toml(grid_toml).map_err(value_err)?;
    let result = harness::run_sweep(&config.inner, &grid, seed).map_err(runtime_err)?;
    Ok(result.to_csv())
}

/// The built-in desk-scale sweep grid (TOML).
#[pyfunction]
fn desk_grid_toml() -> &'static str {
    harness::DESK_GRID_TOML
}

/// The built-in full sweep grid (TOML, 768 points).
#[pyfunction]
fn full_grid_toml() -> &'static str {
    harness::FULL_GRID_TOML
}

/// Run one KV-cache stage (prefill1, prefill2, load1, load2, load3).
#[pyfunction]
#[pyo3(signature = (config, stage, rows=None, cols=None, seed=1))]
fn kv_stage<'py>(
    py: Python<'py>,
    config: &PyConfig,
    stage: &str,
    rows: Option<u64>,
    cols: Option<u64>,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let st = KvStage::parse(stage).ok_or_else(|| value_err(format!("unknown stage {stage:?}")))?;
    let (dr, dc) = st.default_shape();
    run_one(
        py,
        config,
        st.workload(rows.unwrap_or(dr), cols.unwrap_or(dc)),
        seed,
        None,
    )
}

/// Software and accelerator baseline cycle counts for one layout transform.
#[pyfunction]
#[pyo3(signature = (config, src_layout, dst_layout, rows, cols, elem=1))]
fn baseline_cycles<'py>(
    py: Python<'py>,
    config: &PyConfig,
    src_layout: &str,
    dst_layout: &str,
    rows: u64,
    cols: u64,
    elem: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let src = harness::parse_layout(src_layout).map_err(value_err)?;
    let dst = harness::parse_layout(dst_layout).map_err(value_err)?;
    let cfg = &config.inner;
    let b = xdma_sim::baselines::baseline_cycles(
        src,
        dst,
        rows,
        cols,
        elem,
        cfg.word_bytes(),
        cfg.beat_bytes(),
        &cfg.baselines,
    );
    let d = PyDict::new(py);
    d.set_item("sw_slow", b.sw_slow)?;
    d.set_item("sw_fast", b.sw_fast)?;
    d.set_item("sw_pipelined", b.sw_pipelined)?;
    d.set_item("accel", b.accel)?;
    Ok(d)
}

fn parse_schedule(config: &PyConfig, tasks_toml: &str) -> PyResult<Vec<ScheduledTask>> {
    let file = TaskFile::from_toml(tasks_toml).map_err(value_err)?;
    file.to_schedule(&config.inner).map_err(value_err)
}

/// Play a task schedule (TOML text) on a fresh system and return its
/// completion cycle map and metrics.
#[pyfunction]
#[pyo3(signature = (config, tasks_toml, seed=1, budget=50_000_000))]
fn run_task_file<'py>(
    py: Python<'py>,
    config: &PyConfig,
    tasks_toml: &str,
    seed: u64,
    budget: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let tasks = parse_schedule(config, tasks_toml)?;
    let cfg = &config.inner;
    let mut soc = sim::Soc::new(cfg.clone()).map_err(value_err)?;
    for c in 0..cfg.num_clusters {
        soc.mem_mut(c)
            .fill_random(cfg.mem_base_addrs[c], cfg.mem_size, seed.wrapping_add(c as u64))
            .map_err(value_err)?;
    }
    let ids = harness::play_schedule(&mut soc, &tasks, budget).map_err(runtime_err)?;
    let d = PyDict::new(py);
    d.set_item("cycles", soc.cycle())?;
    let done = PyDict::new(py);
    for id in &ids {
        done.set_item(id, soc.completed[id])?;
    }
    d.set_item("completed", done)?;
    d.set_item("bytes_moved", soc.metrics.bytes_moved)?;
    d.set_item("data_beats", soc.metrics.data_beats)?;
    d.set_item("ctrl_beats", soc.metrics.ctrl_beats)?;
    Ok(d)
}

/// Play a task schedule, then check every scratchpad against a functional
/// replay of the tasks. Raises on any divergence.
#[pyfunction]
#[pyo3(signature = (config, tasks_toml, seed=1, budget=50_000_000))]
fn verify_task_file<'py>(
    py: Python<'py>,
    config: &PyConfig,
    tasks_toml: &str,
    seed: u64,
    budget: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let tasks = parse_schedule(config, tasks_toml)?;
    let rep = harness::verify_schedule(&config.inner, &tasks, seed, budget).map_err(runtime_err)?;
    let d = PyDict::new(py);
    d.set_item("tasks", rep.tasks)?;
    d.set_item("cycles", rep.cycles)?;
    Ok(d)
}

#[pymodule]
fn xdma_sim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PySoc>()?;
    m.add_function(wrap_pyfunction!(run_copy, m)?)?;
    m.add_function(wrap_pyfunction!(run_transform, m)?)?;
    m.add_function(wrap_pyfunction!(run_transpose, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(desk_grid_toml, m)?)?;
    m.add_function(wrap_pyfunction!(full_grid_toml, m)?)?;
    m.add_function(wrap_pyfunction!(kv_stage, m)?)?;
    m.add_function(wrap_pyfunction!(baseline_cycles, m)?)?;
    m.add_function(wrap_pyfunction!(run_task_file, m)?)?;
    m.add_function(wrap_pyfunction!(verify_task_file, m)?)?;
    Ok(())
}

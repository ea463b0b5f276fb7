//! Command-line front door: play task schedules, run layout-transform
//! sweeps and the KV-cache scenarios, or verify a schedule bit-exactly
//! against a functional replay.

use clap::{Args, Parser, Subcommand};
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use xdma_sim::harness::{
    play_schedule, run_sweep, run_workload, verify_schedule, KvStage, RunOptions, SweepGrid,
    TaskFile,
};
use xdma_sim::sim::Soc;
use xdma_sim::SocConfig;

#[derive(Parser)]
#[command(
    name = "xdma-sim",
    about = "Cycle-level simulator for a distributed, circuit-switched DMA architecture",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct RunArgs {
    /// System description (TOML).
    config: PathBuf,
    /// Task schedule (TOML, `[[tasks]]` entries).
    tasks: PathBuf,
    /// Write the beat-level link trace as JSON lines.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write per-task completion rows as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Seed for the initial scratchpad contents.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Abort if the system is still busy after this many cycles.
    #[arg(long, default_value_t = 50_000_000)]
    cycle_budget: u64,
}

#[derive(Args)]
struct SweepArgs {
    /// System description (TOML).
    config: PathBuf,
    /// Sweep grid description (TOML).
    grid: PathBuf,
    /// Write the result table here instead of stdout.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Seed for per-point scratchpad contents.
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct KvArgs {
    /// System description (TOML).
    config: PathBuf,
    /// Run a single stage (prefill1, prefill2, load1, load2, load3).
    #[arg(long)]
    stage: Option<String>,
    /// Override the matrix row count.
    #[arg(long)]
    rows: Option<u64>,
    /// Override the matrix column count.
    #[arg(long)]
    cols: Option<u64>,
    /// Write one CSV row per stage.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Seed for the source matrix contents.
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Subcommand)]
enum Cmd {
    /// Play a task schedule and report cycle counts and link metrics.
    Run(RunArgs),
    /// Play a task schedule, then check every scratchpad against a
    /// functional replay of the tasks. Exits nonzero on any divergence.
    Verify(RunArgs),
    /// Run a layout-transform sweep over a grid file and emit CSV.
    Sweep(SweepArgs),
    /// Run the KV-cache transfer stages and report their windows.
    Kvcache(KvArgs),
    /// Print the default system description as TOML (a starting point for
    /// custom configurations).
    Config,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run(a) => run(&a),
        Cmd::Verify(a) => verify(&a),
        Cmd::Sweep(a) => sweep(&a),
        Cmd::Kvcache(a) => kvcache(&a),
        Cmd::Config => SocConfig::default()
            .to_toml_string()
            .map(|t| print!("{t}"))
            .map_err(|e| e.to_string()),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(path: &PathBuf) -> Result<SocConfig, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    SocConfig::from_toml_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn load_tasks(path: &PathBuf, cfg: &SocConfig) -> Result<Vec<xdma_sim::harness::ScheduledTask>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let file = TaskFile::from_toml(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    file.to_schedule(cfg).map_err(|e| e.to_string())
}

fn run(a: &RunArgs) -> Result<(), String> {
    let cfg = load_config(&a.config)?;
    let tasks = load_tasks(&a.tasks, &cfg)?;
    let mut soc = Soc::new(cfg.clone()).map_err(|e| e.to_string())?;
    if a.trace.is_some() {
        soc.enable_trace();
    }
    for c in 0..cfg.num_clusters {
        soc.mem_mut(c)
            .fill_random(cfg.mem_base_addrs[c], cfg.mem_size, a.seed.wrapping_add(c as u64))
            .map_err(|e| e.to_string())?;
    }
    let ids = play_schedule(&mut soc, &tasks, a.cycle_budget).map_err(|e| e.to_string())?;

    println!("tasks completed : {}", ids.len());
    println!("cycles          : {}", soc.cycle());
    if let Ok(w) = soc.metrics.window_cycles() {
        println!("transfer window : {w}");
    }
    println!("bytes moved     : {}", soc.metrics.bytes_moved);
    println!("link data beats : {}", soc.metrics.data_beats);
    println!("link ctrl beats : {}", soc.metrics.ctrl_beats);
    if let Ok(u) = soc.metrics.utilization(cfg.beat_bytes()) {
        println!("link utilization: {u:.4}");
    }
    let st = soc.metrics.stalls;
    println!(
        "stalls          : {} bank-conflict, {} buffer-full, {} link-backpressure, {} setup",
        st.bank_conflict, st.buffer_full, st.link_backpressure, st.cfg_phase
    );
    for (i, id) in ids.iter().enumerate() {
        println!(
            "  task {id:#012x}: submitted >= cycle {}, completed at cycle {}",
            tasks[i].submit_at, soc.completed[id]
        );
    }

    if let Some(path) = &a.csv {
        let mut out = String::from("task_id,home,src_cluster,dst_cluster,words,submit_at,completed_at\n");
        for (i, id) in ids.iter().enumerate() {
            let t = &tasks[i];
            writeln!(
                out,
                "{id:#x},{},{},{},{},{},{}",
                t.home,
                t.cfg.src_cluster,
                t.cfg.dst_cluster,
                t.cfg.dst_words(),
                t.submit_at,
                soc.completed[id]
            )
            .expect("string write");
        }
        fs::write(path, out).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    if let Some(path) = &a.trace {
        let f = fs::File::create(path).map_err(|e| format!("{}: {e}", path.display()))?;
        soc.trace
            .write_jsonl(std::io::BufWriter::new(f))
            .map_err(|e| format!("{}: {e}", path.display()))?;
    }
    Ok(())
}

fn verify(a: &RunArgs) -> Result<(), String> {
    let cfg = load_config(&a.config)?;
    let tasks = load_tasks(&a.tasks, &cfg)?;
    let rep = verify_schedule(&cfg, &tasks, a.seed, a.cycle_budget).map_err(|e| e.to_string())?;
    println!(
        "verified: {} tasks, {} cycles, every cluster image matches the functional replay",
        rep.tasks, rep.cycles
    );
    Ok(())
}

fn sweep(a: &SweepArgs) -> Result<(), String> {
    let cfg = load_config(&a.config)?;
    let text = fs::read_to_string(&a.grid).map_err(|e| format!("{}: {e}", a.grid.display()))?;
    let grid = SweepGrid::from_toml(&text).map_err(|e| e.to_string())?;
    let result = run_sweep(&cfg, &grid, a.seed).map_err(|e| e.to_string())?;
    let csv = result.to_csv();
    match &a.csv {
        Some(path) => {
            fs::write(path, &csv).map_err(|e| format!("{}: {e}", path.display()))?;
            for (i, d) in result.dbufs.iter().enumerate() {
                println!(
                    "depth {d}: average utilization {:.4} (stddev {:.4})",
                    result.avg_util(i),
                    result.util_stddev(i)
                );
            }
            println!("{} rows -> {}", result.rows.len(), path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn kvcache(a: &KvArgs) -> Result<(), String> {
    let cfg = load_config(&a.config)?;
    let stages: Vec<KvStage> = match &a.stage {
        Some(name) => {
            vec![KvStage::parse(name).ok_or_else(|| format!("unknown stage {name:?}"))?]
        }
        None => KvStage::ALL.to_vec(),
    };
    let opt = RunOptions { seed: a.seed, ..RunOptions::default() };
    let mut csv = String::from("stage,rows,cols,bytes,window_cycles,utilization\n");
    let mut windows = Vec::new();
    for st in &stages {
        let (dr, dc) = st.default_shape();
        let (rows, cols) = (a.rows.unwrap_or(dr), a.cols.unwrap_or(dc));
        let w = st.workload(rows, cols);
        let rep = run_workload(&cfg, &w, &opt).map_err(|e| format!("stage {}: {e}", st.name()))?;
        println!(
            "{:<9} {:>5} x {:<4} {:>9} bytes  window {:>7} cycles  utilization {:.4}",
            st.name(),
            rows,
            cols,
            rep.bytes,
            rep.window_cycles,
            rep.utilization
        );
        writeln!(
            csv,
            "{},{rows},{cols},{},{},{:.6}",
            st.name(),
            rep.bytes,
            rep.window_cycles,
            rep.utilization
        )
        .expect("string write");
        windows.push((*st, rep.window_cycles));
    }
    let find = |s: KvStage| windows.iter().find(|(k, _)| *k == s).map(|(_, w)| *w);
    if let (Some(l1), Some(l2), Some(l3)) =
        (find(KvStage::Load1), find(KvStage::Load2), find(KvStage::Load3))
    {
        println!(
            "load scaling: 2x context -> {:.3}x, 4x context -> {:.3}x",
            l2 as f64 / l1 as f64,
            l3 as f64 / l1 as f64
        );
    }
    if let Some(path) = &a.csv {
        fs::write(path, csv).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    Ok(())
}

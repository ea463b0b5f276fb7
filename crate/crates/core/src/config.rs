//! System configuration: cluster memory geometry, link parameters, streamer
//! frontend sizing, plugin chains and baseline cost-model constants.
//!
//! Configs are stored as TOML with a `schema_version` field. Every invariant
//! violation is reported through [`ConfigError`] naming the offending field.

use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error reading config: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config serialize error: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("unsupported schema_version {0} (expected {SCHEMA_VERSION})")]
    SchemaVersion(u32),
    #[error("axi_width_bits ({axi}) is not a multiple of bank_word_bits ({word})")]
    AxiWidthNotMultiple { axi: u32, word: u32 },
    #[error("bank_word_bits ({0}) is not a multiple of 8")]
    WordBitsNotByteMultiple(u32),
    #[error("mem_size ({mem}) is not a multiple of num_banks * word_bytes ({row})")]
    MemSizeNotMultiple { mem: u64, row: u64 },
    #[error("{field} must be >= 1")]
    MustBePositive { field: &'static str },
    #[error("buffer depth must be >= 1 ({field} = 0)")]
    BufferDepthZero { field: &'static str },
    #[error("num_clusters ({clusters}) does not match mem_base_addrs length ({bases})")]
    ClusterBaseMismatch { clusters: usize, bases: usize },
    #[error("cluster {a} range overlaps cluster {b} range")]
    ClusterOverlap { a: usize, b: usize },
    #[error("mem_base_addrs[{0}] is not word aligned")]
    BaseNotAligned(usize),
    #[error("unknown plugin id '{0}' in ext list")]
    UnknownPlugin(String),
}

/// Cost-model constants for the software-loop and reshape-accelerator
/// baselines. These are calibration parameters, not measurements; defaults
/// are documented in the README.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    /// Per-descriptor host setup cost for the slow-core software loop
    /// (address computation + several MMIO register writes + polling).
    pub sw_setup_slow: u64,
    /// Per-descriptor host setup cost for the fast-core software loop.
    pub sw_setup_fast: u64,
    /// When true, descriptor setup overlaps the previous descriptor's data
    /// movement (only one setup charged); default is fully serialized issue.
    pub sw_pipelined: bool,
    /// Local transform throughput of the reshape accelerator, words/cycle.
    pub reshape_throughput_words: u64,
    /// Memory passes the reshape accelerator needs per transform (read+write).
    pub reshape_passes: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            sw_setup_slow: 400,
            sw_setup_fast: 20,
            sw_pipelined: false,
            reshape_throughput_words: 8,
            reshape_passes: 2,
        }
    }
}

/// Full system description for one simulation instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SocConfig {
    pub schema_version: u32,
    /// Number of clusters, each hosting one DMA half-unit pair.
    pub num_clusters: usize,
    /// Scratchpad base byte address of each cluster (one entry per cluster).
    pub mem_base_addrs: Vec<u64>,
    /// Scratchpad size in bytes per cluster.
    pub mem_size: u64,
    /// Banks per cluster scratchpad.
    pub num_banks: usize,
    /// Width of one bank word in bits.
    pub bank_word_bits: u32,
    /// Link (and beat) width in bits.
    pub axi_width_bits: u32,
    /// Link traversal latency in cycles.
    pub axi_latency: u64,
    /// Maximum affine dimensions supported by the source-side streamer.
    pub dim_src: usize,
    /// Maximum affine dimensions supported by the destination-side streamer.
    pub dim_dst: usize,
    /// Reader stream-buffer depth in words.
    pub dbuf_src: usize,
    /// Writer stream-buffer depth in words.
    pub dbuf_dst: usize,
    /// Parallel memory channels of the reader frontend.
    pub nchan_src: usize,
    /// Parallel memory channels of the writer frontend.
    pub nchan_dst: usize,
    /// Ordered plugin chain installed after the reader (producer side).
    pub ext_src: Vec<String>,
    /// Ordered plugin chain installed before the writer (consumer side).
    pub ext_dst: Vec<String>,
    /// Task FIFO depth of each half-unit dispatcher.
    pub task_fifo_depth: usize,
    pub baselines: BaselineConfig,
}

impl Default for SocConfig {
    fn default() -> Self {
        SocConfig {
            schema_version: SCHEMA_VERSION,
            num_clusters: 2,
            mem_base_addrs: vec![0x1000_0000, 0x1100_0000],
            mem_size: 4 * 1024 * 1024,
            num_banks: 32,
            bank_word_bits: 64,
            axi_width_bits: 512,
            axi_latency: 4,
            dim_src: 6,
            dim_dst: 6,
            dbuf_src: 9,
            dbuf_dst: 9,
            nchan_src: 8,
            nchan_dst: 8,
            ext_src: vec!["transpose".to_string()],
            ext_dst: vec!["memset".to_string()],
            task_fifo_depth: 8,
            baselines: BaselineConfig::default(),
        }
    }
}

impl SocConfig {
    /// Bank word size in bytes.
    pub fn word_bytes(&self) -> u64 {
        u64::from(self.bank_word_bits) / 8
    }

    /// Beat payload size in bytes (one link transfer).
    pub fn beat_bytes(&self) -> u64 {
        u64::from(self.axi_width_bits) / 8
    }

    /// Words carried by one full beat.
    pub fn beat_words(&self) -> u64 {
        self.beat_bytes() / self.word_bytes()
    }

    /// Address range `[base, base+size)` of a cluster's scratchpad.
    pub fn cluster_range(&self, cluster: usize) -> (u64, u64) {
        let base = self.mem_base_addrs[cluster];
        (base, base + self.mem_size)
    }

    /// Cluster whose scratchpad contains `addr`, if any.
    pub fn cluster_of_addr(&self, addr: u64) -> Option<usize> {
        self.mem_base_addrs
            .iter()
            .position(|&b| addr >= b && addr < b + self.mem_size)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::SchemaVersion(self.schema_version));
        }
        if self.bank_word_bits == 0 || !self.bank_word_bits.is_multiple_of(8) {
            return Err(ConfigError::WordBitsNotByteMultiple(self.bank_word_bits));
        }
        if self.axi_width_bits == 0 || !self.axi_width_bits.is_multiple_of(self.bank_word_bits) {
            return Err(ConfigError::AxiWidthNotMultiple {
                axi: self.axi_width_bits,
                word: self.bank_word_bits,
            });
        }
        if self.num_clusters == 0 {
            return Err(ConfigError::MustBePositive {
                field: "num_clusters",
            });
        }
        if self.num_banks == 0 {
            return Err(ConfigError::MustBePositive { field: "num_banks" });
        }
        let row = self.num_banks as u64 * self.word_bytes();
        if self.mem_size == 0 || !self.mem_size.is_multiple_of(row) {
            return Err(ConfigError::MemSizeNotMultiple {
                mem: self.mem_size,
                row,
            });
        }
        for (field, v) in [("dim_src", self.dim_src), ("dim_dst", self.dim_dst)] {
            if v == 0 {
                return Err(ConfigError::MustBePositive { field });
            }
        }
        for (field, v) in [("dbuf_src", self.dbuf_src), ("dbuf_dst", self.dbuf_dst)] {
            if v == 0 {
                return Err(ConfigError::BufferDepthZero { field });
            }
        }
        for (field, v) in [
            ("nchan_src", self.nchan_src),
            ("nchan_dst", self.nchan_dst),
            ("task_fifo_depth", self.task_fifo_depth),
        ] {
            if v == 0 {
                return Err(ConfigError::MustBePositive { field });
            }
        }
        if self.mem_base_addrs.len() != self.num_clusters {
            return Err(ConfigError::ClusterBaseMismatch {
                clusters: self.num_clusters,
                bases: self.mem_base_addrs.len(),
            });
        }
        for (i, &b) in self.mem_base_addrs.iter().enumerate() {
            if b % self.word_bytes() != 0 {
                return Err(ConfigError::BaseNotAligned(i));
            }
        }
        for a in 0..self.num_clusters {
            for b in (a + 1)..self.num_clusters {
                let (a0, a1) = self.cluster_range(a);
                let (b0, b1) = self.cluster_range(b);
                if a0 < b1 && b0 < a1 {
                    return Err(ConfigError::ClusterOverlap { a, b });
                }
            }
        }
        for id in self.ext_src.iter().chain(self.ext_dst.iter()) {
            if !crate::plugin::is_known_plugin(id) {
                return Err(ConfigError::UnknownPlugin(id.clone()));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: SocConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path<P: AsRef<Path>>(path: P) -> Result<Self, ConfigError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<(), ConfigError> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }
}

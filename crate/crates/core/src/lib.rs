//! Cycle-level simulator for a distributed DMA architecture built around
//! per-cluster DMA half-units that cooperate over circuit-switched virtual
//! tunnels on an AXI-style interconnect.
//!
//! Each cluster owns a banked scratchpad memory, a reader and a writer
//! streamer frontend with N-D affine address generation, an optional chain of
//! streaming plugins, and a backend endpoint that encapsulates every transfer
//! as write beats (cfg / grant / data / finish) on point-to-point links.
//!
//! The crate also provides software-DMA baseline cost models and a benchmark
//! harness that reproduces link-utilization sweeps and KV-cache style layout
//! transformation scenarios at desk scale.

pub mod backend;
pub mod baselines;
pub mod config;
pub mod controller;
pub mod frontend;
pub mod harness;
pub mod interconnect;
pub mod layout;
pub mod mem;
pub mod metrics;
pub mod oracle;
pub mod plugin;
pub mod sim;
pub mod trace;

pub use config::SocConfig;
pub use layout::{AffinePattern, LayoutSpec};
pub use metrics::Metrics;

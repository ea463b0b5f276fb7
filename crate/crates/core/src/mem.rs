//! Banked cluster scratchpad.
//!
//! Words are interleaved across banks at word granularity: consecutive words
//! live in consecutive banks, wrapping at `num_banks`. Each bank serves one
//! word access per cycle; [`BankArbiter`] resolves a cycle's requests in
//! priority order. Backdoor byte access (for loading and checking images)
//! bypasses banking entirely.

use crate::config::SocConfig;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MemError {
    #[error("address {addr:#x} outside cluster {cluster} range [{lo:#x}, {hi:#x})")]
    OutOfRange {
        cluster: usize,
        addr: u64,
        lo: u64,
        hi: u64,
    },
    #[error("address {addr:#x} not aligned to the {word}-byte word size")]
    Misaligned { addr: u64, word: u64 },
}

/// One cluster's scratchpad.
pub struct ClusterMemory {
    cluster: usize,
    base: u64,
    data: Vec<u8>,
    num_banks: usize,
    word_bytes: u64,
}

impl ClusterMemory {
    pub fn new(cfg: &SocConfig, cluster: usize) -> Self {
        ClusterMemory {
            cluster,
            base: cfg.mem_base_addrs[cluster],
            data: vec![0u8; cfg.mem_size as usize],
            num_banks: cfg.num_banks,
            word_bytes: cfg.word_bytes(),
        }
    }

    pub fn base(&self) -> u64 {
        self.base
    }

    pub fn size(&self) -> u64 {
        self.data.len() as u64
    }

    pub fn contains(&self, addr: u64) -> bool {
        addr >= self.base && addr < self.base + self.size()
    }

    fn check_range(&self, addr: u64, len: u64) -> Result<usize, MemError> {
        if addr < self.base || addr + len > self.base + self.size() {
            return Err(MemError::OutOfRange {
                cluster: self.cluster,
                addr,
                lo: self.base,
                hi: self.base + self.size(),
            });
        }
        Ok((addr - self.base) as usize)
    }

    fn check_word(&self, addr: u64) -> Result<usize, MemError> {
        if !addr.is_multiple_of(self.word_bytes) {
            return Err(MemError::Misaligned {
                addr,
                word: self.word_bytes,
            });
        }
        self.check_range(addr, self.word_bytes)
    }

    /// Bank serving the word at `addr`.
    pub fn bank_of(&self, addr: u64) -> Result<usize, MemError> {
        let off = self.check_word(addr)?;
        Ok((off as u64 / self.word_bytes) as usize % self.num_banks)
    }

    pub fn read_word(&self, addr: u64) -> Result<u64, MemError> {
        let off = self.check_word(addr)?;
        let mut b = [0u8; 8];
        b.copy_from_slice(&self.data[off..off + 8]);
        Ok(u64::from_le_bytes(b))
    }

    pub fn write_word(&mut self, addr: u64, word: u64) -> Result<(), MemError> {
        let off = self.check_word(addr)?;
        self.data[off..off + 8].copy_from_slice(&word.to_le_bytes());
        Ok(())
    }

    /// Backdoor read of a byte range (test/CLI access, not a modeled port).
    pub fn dump_image(&self, addr: u64, len: u64) -> Result<Vec<u8>, MemError> {
        let off = self.check_range(addr, len)?;
        Ok(self.data[off..off + len as usize].to_vec())
    }

    /// Backdoor write of a byte image.
    pub fn load_image(&mut self, addr: u64, img: &[u8]) -> Result<(), MemError> {
        let off = self.check_range(addr, img.len() as u64)?;
        self.data[off..off + img.len()].copy_from_slice(img);
        Ok(())
    }

    /// Fills a byte range with deterministic pseudo-random data.
    pub fn fill_random(&mut self, addr: u64, len: u64, seed: u64) -> Result<(), MemError> {
        let off = self.check_range(addr, len)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.fill_bytes(&mut self.data[off..off + len as usize]);
        Ok(())
    }
}

/// Identifies one memory access request within a cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BankRequest {
    /// Requesting port, used only for reporting grants back.
    pub port: usize,
    pub addr: u64,
    pub bank: usize,
}

/// Single-cycle bank arbiter: requests are offered in priority order and a
/// bank serves only its first requester.
#[derive(Default)]
pub struct BankArbiter {
    claimed: Vec<bool>,
}

impl BankArbiter {
    pub fn new(num_banks: usize) -> Self {
        BankArbiter {
            claimed: vec![false; num_banks],
        }
    }

    /// Starts a new cycle.
    pub fn reset(&mut self) {
        self.claimed.fill(false);
    }

    /// Attempts to claim `bank`; returns false if it already served a higher
    /// priority request this cycle.
    pub fn try_claim(&mut self, bank: usize) -> bool {
        if self.claimed[bank] {
            false
        } else {
            self.claimed[bank] = true;
            true
        }
    }
}

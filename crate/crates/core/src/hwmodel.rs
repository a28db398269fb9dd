//! Overlay configuration, dot-product-unit arithmetic and matrix buffers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Design-time parameters of one overlay instance plus the two timing
/// calibration constants used by the simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HwConfig {
    /// DPA rows (number of LHS matrix buffers).
    pub dm: usize,
    /// DPA columns (number of RHS matrix buffers).
    pub dn: usize,
    /// DPU input width in bits; also the matrix-buffer word width.
    pub dk: usize,
    pub bm: usize,
    pub bn: usize,
    /// Result buffer depth, in accumulator snapshots.
    pub br: usize,
    /// Accumulator width in bits.
    pub acc_bits: u32,
    /// Main memory read channel width in bits.
    pub read_bits: usize,
    /// Main memory write channel width in bits.
    pub write_bits: usize,
    pub fclk_mhz: f64,
    pub exec_overhead_cycles: u64,
    pub dma_setup_cycles: u64,
}

impl Default for HwConfig {
    fn default() -> Self {
        Self::instance(1).expect("instance 1 exists")
    }
}

/// `(Dm, Dk, Dn)` of the six characterised instances.
pub const INSTANCE_DIMS: [(usize, usize, usize); 6] = [
    (8, 64, 8),
    (8, 128, 8),
    (8, 256, 8),
    (4, 256, 4),
    (8, 256, 4),
    (4, 512, 4),
];

impl HwConfig {
    pub const DEFAULT_ACC_BITS: u32 = 32;
    pub const DEFAULT_EXEC_OVERHEAD: u64 = 16;
    pub const DEFAULT_DMA_SETUP: u64 = 10;

    /// A config with the given array shape and the default buffer, channel
    /// and timing parameters (1024-deep input buffers, 2 result slots,
    /// 32-bit accumulators, 64-bit channels, 200 MHz).
    pub fn with_dims(dm: usize, dk: usize, dn: usize) -> Self {
        Self {
            dm,
            dn,
            dk,
            bm: 1024,
            bn: 1024,
            br: 2,
            acc_bits: Self::DEFAULT_ACC_BITS,
            read_bits: 64,
            write_bits: 64,
            fclk_mhz: 200.0,
            exec_overhead_cycles: Self::DEFAULT_EXEC_OVERHEAD,
            dma_setup_cycles: Self::DEFAULT_DMA_SETUP,
        }
    }

    /// Runtime-characterised instance `#1..=#6`.
    pub fn instance(n: usize) -> Option<Self> {
        let (dm, dk, dn) = *INSTANCE_DIMS.get(n.checked_sub(1)?)?;
        Some(Self::with_dims(dm, dk, dn))
    }

    pub fn num_buffers(&self) -> usize {
        self.dm + self.dn
    }

    /// 64-bit limbs per matrix-buffer word.
    pub fn limbs_per_word(&self) -> usize {
        self.dk.div_ceil(64)
    }

    pub fn word_bytes(&self) -> usize {
        self.dk / 8
    }

    /// Bytes per accumulator when written to main memory.
    pub fn result_elem_bytes(&self) -> usize {
        (self.acc_bits as usize).div_ceil(8)
    }

    /// Depth of buffer `index` (LHS buffers first, then RHS).
    pub fn buffer_depth(&self, index: usize) -> usize {
        if index < self.dm {
            self.bm
        } else {
            self.bn
        }
    }

    /// Binary operations the DPA performs per cycle.
    pub fn ops_per_cycle(&self) -> u64 {
        2 * (self.dm * self.dn * self.dk) as u64
    }

    /// Parses the flat `key = value` config format. Unknown keys are errors;
    /// missing keys keep the [`HwConfig::with_dims`] defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigParseError> {
        let mut cfg = Self::with_dims(1, 64, 1);
        let mut seen = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigParseError {
                line: lineno + 1,
                message: format!("expected key=value, got {line:?}"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| ConfigParseError {
                line: lineno + 1,
                message: format!("invalid {what} value {value:?} for {key}"),
            };
            macro_rules! int {
                ($field:expr) => {
                    $field = value.parse().map_err(|_| bad("integer"))?
                };
            }
            match key {
                "Dm" => int!(cfg.dm),
                "Dn" => int!(cfg.dn),
                "Dk" => int!(cfg.dk),
                "Bm" => int!(cfg.bm),
                "Bn" => int!(cfg.bn),
                "Br" => int!(cfg.br),
                "A" => int!(cfg.acc_bits),
                "F" => int!(cfg.read_bits),
                "R" => int!(cfg.write_bits),
                "fclk_mhz" => cfg.fclk_mhz = value.parse().map_err(|_| bad("number"))?,
                "exec_overhead_cycles" => int!(cfg.exec_overhead_cycles),
                "dma_setup_cycles" => int!(cfg.dma_setup_cycles),
                _ => {
                    return Err(ConfigParseError {
                        line: lineno + 1,
                        message: format!("unknown key {key:?}"),
                    })
                }
            }
            if seen.contains(&key.to_string()) {
                return Err(ConfigParseError {
                    line: lineno + 1,
                    message: format!("duplicate key {key:?}"),
                });
            }
            seen.push(key.to_string());
        }
        Ok(cfg)
    }
}

impl FromStr for HwConfig {
    type Err = ConfigParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl fmt::Display for HwConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Dm = {}", self.dm)?;
        writeln!(f, "Dn = {}", self.dn)?;
        writeln!(f, "Dk = {}", self.dk)?;
        writeln!(f, "Bm = {}", self.bm)?;
        writeln!(f, "Bn = {}", self.bn)?;
        writeln!(f, "Br = {}", self.br)?;
        writeln!(f, "A = {}", self.acc_bits)?;
        writeln!(f, "F = {}", self.read_bits)?;
        writeln!(f, "R = {}", self.write_bits)?;
        writeln!(f, "fclk_mhz = {}", self.fclk_mhz)?;
        writeln!(f, "exec_overhead_cycles = {}", self.exec_overhead_cycles)?;
        writeln!(f, "dma_setup_cycles = {}", self.dma_setup_cycles)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("config line {line}: {message}")]
pub struct ConfigParseError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigReport {
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
}

impl ConfigReport {
    pub fn is_valid(&self) -> bool {
        self.errors.is_empty()
    }
}

pub fn validate_config(cfg: &HwConfig) -> ConfigReport {
    let mut rep = ConfigReport::default();
    let dims = [
        ("Dm", cfg.dm),
        ("Dn", cfg.dn),
        ("Dk", cfg.dk),
        ("Bm", cfg.bm),
        ("Bn", cfg.bn),
        ("Br", cfg.br),
        ("F", cfg.read_bits),
        ("R", cfg.write_bits),
    ];
    for (name, v) in dims {
        if v == 0 {
            rep.errors.push(format!("{name} must be at least 1"));
        }
    }
    if cfg.dk % 8 != 0 {
        rep.errors.push(format!("Dk = {} is not a multiple of 8", cfg.dk));
    }
    if cfg.acc_bits == 0 || cfg.acc_bits > 64 {
        rep.errors
            .push(format!("A = {} outside 1..=64", cfg.acc_bits));
    }
    for (name, v) in [("F", cfg.read_bits), ("R", cfg.write_bits)] {
        if v != 0 && (!v.is_power_of_two() || v < 8) {
            rep.errors
                .push(format!("{name} = {v} must be a power of two of at least 8"));
        }
    }
    if !(cfg.fclk_mhz.is_finite() && cfg.fclk_mhz > 0.0) {
        rep.errors.push(format!("fclk_mhz = {} must be positive", cfg.fclk_mhz));
    }
    if cfg.dk > cfg.read_bits.saturating_mul(cfg.bm.min(cfg.bn)) {
        rep.warnings.push(format!(
            "Dk = {} exceeds F * buffer depth; fetch cannot keep the array fed",
            cfg.dk
        ));
    }
    rep
}

/// Peak binary GOPS: `2 * Dm * Dn * Dk * fclk`.
pub fn peak_gops(cfg: &HwConfig) -> f64 {
    cfg.ops_per_cycle() as f64 * cfg.fclk_mhz / 1e3
}

/// Sign-extends the low `bits` bits of `v`.
pub fn wrap_to_width(v: i64, bits: u32) -> i64 {
    if bits >= 64 {
        v
    } else {
        let shift = 64 - bits;
        (v << shift) >> shift
    }
}

/// A-bit two's-complement accumulator of one DPU.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DpuState {
    pub acc: i64,
}

/// One DPU cycle: AND, popcount, shift, optional negate, accumulate with
/// wraparound at `acc_bits`.
pub fn dpu_step(
    state: DpuState,
    lhs: &[u64],
    rhs: &[u64],
    shift: u32,
    negate: bool,
    reset: bool,
    acc_bits: u32,
) -> DpuState {
    debug_assert_eq!(lhs.len(), rhs.len());
    let pop: u64 = lhs
        .iter()
        .zip(rhs)
        .map(|(a, b)| (a & b).count_ones() as u64)
        .sum();
    accumulate(state, pop, shift, negate, reset, acc_bits)
}

pub(crate) fn accumulate(
    state: DpuState,
    pop: u64,
    shift: u32,
    negate: bool,
    reset: bool,
    acc_bits: u32,
) -> DpuState {
    let contrib = if shift >= 64 { 0 } else { (pop << shift) as i64 };
    let contrib = if negate { contrib.wrapping_neg() } else { contrib };
    let base = if reset { 0 } else { state.acc };
    DpuState {
        acc: wrap_to_width(base.wrapping_add(contrib), acc_bits),
    }
}

/// `Dm` LHS and `Dn` RHS buffers of `Dk`-bit words, addressed
/// `0..Dm + Dn` with LHS buffers first.
#[derive(Debug, Clone)]
pub struct MatrixBufferSet {
    depths: Vec<usize>,
    limbs_per_word: usize,
    storage: Vec<Vec<u64>>,
}

impl MatrixBufferSet {
    pub fn new(cfg: &HwConfig) -> Self {
        let limbs = cfg.limbs_per_word();
        let depths: Vec<usize> = (0..cfg.num_buffers()).map(|b| cfg.buffer_depth(b)).collect();
        let storage = depths.iter().map(|d| vec![0u64; d * limbs]).collect();
        Self {
            depths,
            limbs_per_word: limbs,
            storage,
        }
    }

    pub fn num_buffers(&self) -> usize {
        self.depths.len()
    }

    pub fn depth(&self, buffer: usize) -> usize {
        self.depths[buffer]
    }

    pub fn word(&self, buffer: usize, addr: usize) -> &[u64] {
        let l = self.limbs_per_word;
        &self.storage[buffer][addr * l..(addr + 1) * l]
    }

    pub fn write_word(&mut self, buffer: usize, addr: usize, limbs: &[u64]) {
        let l = self.limbs_per_word;
        self.storage[buffer][addr * l..(addr + 1) * l].copy_from_slice(limbs);
    }

    /// Contiguous words `[addr, addr + count)` of one buffer, flattened.
    pub fn words(&self, buffer: usize, addr: usize, count: usize) -> &[u64] {
        let l = self.limbs_per_word;
        &self.storage[buffer][addr * l..(addr + count) * l]
    }
}

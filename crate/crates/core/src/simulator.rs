//! Cycle-level simulation of the fetch / execute / result pipeline.
//!
//! A single global clock advances all three stages once per tick, in the
//! fixed order fetch, execute, result. A token signalled in cycle `c`
//! becomes visible to `Wait` in cycle `c + 1`, so the outcome never depends
//! on the order stages are visited within a cycle.
//!
//! Timing:
//! - `Wait` and `Signal` occupy their stage for one cycle.
//! - `RunFetch` / `RunResult` cost, per contiguous DRAM burst,
//!   `dma_setup_cycles + ceil(bits / channel_width)`.
//! - `RunExecute` costs `num_reads + exec_overhead_cycles`.
//!
//! Each `Signal` on `execute_to_result` snapshots the accumulator array into
//! the result buffer (`Br` slots). `RunResult` writes the oldest snapshot and
//! frees its slot when the write completes.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bitplane::IntMatrix;
use crate::hwmodel::{dpu_step, peak_gops, DpuState, HwConfig, MatrixBufferSet};
use crate::isa::{
    validate, ExecuteRun, FetchRun, Instruction, Program, ResultRun, Stage, TokenQueueId,
    ValidationReport,
};
use crate::scheduler::{self, MatMulDescriptor, ScheduleError};

/// Byte-addressable main memory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MainMemory {
    bytes: Vec<u8>,
}

impl MainMemory {
    pub fn new(size: usize) -> Self {
        Self {
            bytes: vec![0; size],
        }
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Self { bytes }
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    fn range(&self, addr: u64, len: u64) -> Option<std::ops::Range<usize>> {
        let end = addr.checked_add(len)?;
        (end <= self.bytes.len() as u64).then(|| addr as usize..end as usize)
    }

    pub fn read(&self, addr: u64, len: u64) -> Option<&[u8]> {
        self.range(addr, len).map(|r| &self.bytes[r])
    }

    pub fn write(&mut self, addr: u64, data: &[u8]) -> Option<()> {
        let r = self.range(addr, data.len() as u64)?;
        self.bytes[r].copy_from_slice(data);
        Some(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageStats {
    pub busy: u64,
    pub stalled_on_wait: u64,
    pub idle: u64,
    pub instructions: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimStats {
    pub total_cycles: u64,
    pub fetch: StageStats,
    pub execute: StageStats,
    pub result: StageStats,
    /// Tokens signalled per queue, indexed like [`TokenQueueId::ALL`].
    pub tokens_produced: [u64; 4],
    pub tokens_consumed: [u64; 4],
    pub run_fetch: u64,
    pub run_execute: u64,
    pub run_result: u64,
    pub bytes_read: u64,
    pub bytes_written: u64,
    /// Binary operations performed by the DPA (`2 * Dm * Dn * Dk` per read).
    pub binary_ops: u64,
    pub achieved_gops: f64,
    pub peak_gops: f64,
    pub efficiency: f64,
}

impl SimStats {
    pub fn stage(&self, stage: Stage) -> &StageStats {
        match stage {
            Stage::Fetch => &self.fetch,
            Stage::Execute => &self.execute,
            Stage::Result => &self.result,
        }
    }

    fn stage_mut(&mut self, stage: Stage) -> &mut StageStats {
        match stage {
            Stage::Fetch => &mut self.fetch,
            Stage::Execute => &mut self.execute,
            Stage::Result => &mut self.result,
        }
    }

    /// True when every queue's produced and consumed counts match.
    pub fn tokens_balanced(&self) -> bool {
        self.tokens_produced == self.tokens_consumed
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSnapshot {
    pub stage: Stage,
    pub pc: usize,
    pub stream_len: usize,
    pub waiting_on: Option<TokenQueueId>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("program failed validation: {}", .0.violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidProgram(ValidationReport),
    #[error("deadlock at cycle {cycle}: {}", fmt_pcs(.stages))]
    Deadlock {
        cycle: u64,
        stages: Vec<StageSnapshot>,
    },
    #[error("{stage}[{index}] at cycle {cycle}: access of {len} bytes at {addr:#x} outside {size}-byte memory")]
    MemoryFault {
        cycle: u64,
        stage: Stage,
        index: usize,
        addr: u64,
        len: u64,
        size: usize,
    },
    #[error("cycle {cycle}: fetch[{fetch_index}] writes buffer {buffer} words {lo}..{hi} while execute[{execute_index}] reads them")]
    BufferConflict {
        cycle: u64,
        fetch_index: usize,
        execute_index: usize,
        buffer: usize,
        lo: usize,
        hi: usize,
    },
    #[error("execute[{index}] at cycle {cycle}: result buffer already holds {depth} snapshots")]
    ResultBufferOverflow { cycle: u64, index: usize, depth: usize },
    #[error("result[{index}] at cycle {cycle}: no accumulator snapshot to write")]
    ResultBufferEmpty { cycle: u64, index: usize },
}

fn fmt_pcs(stages: &[StageSnapshot]) -> String {
    stages
        .iter()
        .map(|s| match s.waiting_on {
            Some(q) => format!("{} pc={}/{} waiting on {}", s.stage, s.pc, s.stream_len, q.name()),
            None => format!("{} pc={}/{}", s.stage, s.pc, s.stream_len),
        })
        .collect::<Vec<_>>()
        .join(", ")
}

fn dma_cycles(bursts: &[(u64, u64)], width_bits: usize, setup: u64) -> u64 {
    bursts
        .iter()
        .map(|&(_, bytes)| setup + (bytes * 8).div_ceil(width_bits as u64))
        .sum()
}

enum Active {
    Fetch {
        index: usize,
        remaining: u64,
        extents: Vec<(usize, usize, usize)>,
        words: Vec<(usize, usize, Vec<u64>)>,
    },
    Execute {
        index: usize,
        remaining: u64,
        run: ExecuteRun,
    },
    Result {
        remaining: u64,
    },
}

struct StageState {
    stage: Stage,
    pc: usize,
    active: Option<Active>,
    waiting_on: Option<TokenQueueId>,
}

struct Machine<'a> {
    cfg: &'a HwConfig,
    program: &'a Program,
    mem: MainMemory,
    buffers: MatrixBufferSet,
    acc: Vec<DpuState>,
    snapshots: VecDeque<Vec<i64>>,
    tokens: [u64; 4],
    stats: SimStats,
    cycle: u64,
}

impl<'a> Machine<'a> {
    fn fetch_words(&self, index: usize, run: &FetchRun) -> Result<Vec<(usize, usize, Vec<u64>)>, SimError> {
        let wb = self.cfg.word_bytes();
        let limbs = self.cfg.limbs_per_word();
        let mut stream = Vec::with_capacity(run.total_bytes() as usize);
        for (addr, len) in run.bursts() {
            let data = self.mem.read(addr, len).ok_or(SimError::MemoryFault {
                cycle: self.cycle,
                stage: Stage::Fetch,
                index,
                addr,
                len,
                size: self.mem.len(),
            })?;
            stream.extend_from_slice(data);
        }
        Ok(stream
            .chunks_exact(wb)
            .enumerate()
            .map(|(w, bytes)| {
                let mut word = vec![0u64; limbs];
                for (b, byte) in bytes.iter().enumerate() {
                    word[b / 8] |= (*byte as u64) << (8 * (b % 8));
                }
                let (buf, addr) = run.destination(w);
                (buf, addr, word)
            })
            .collect())
    }

    fn run_execute(&mut self, run: &ExecuteRun) {
        let (dm, dn) = (self.cfg.dm, self.cfg.dn);
        let bits = self.cfg.acc_bits;
        for t in 0..run.num_reads {
            for r in 0..dm {
                let lhs = self.buffers.word(r, run.lhs_offset + t);
                for c in 0..dn {
                    let rhs = self.buffers.word(dm + c, run.rhs_offset + t);
                    let reset = run.acc_reset && t == 0;
                    let cell = &mut self.acc[r * dn + c];
                    *cell = dpu_step(*cell, lhs, rhs, run.shift, run.negate, reset, bits);
                }
            }
        }
        self.stats.binary_ops += run.num_reads as u64 * self.cfg.ops_per_cycle();
    }

    fn write_result(&mut self, index: usize, run: &ResultRun, snap: &[i64]) -> Result<(), SimError> {
        let eb = self.cfg.result_elem_bytes();
        let base = run.dram_base + run.offset;
        for r in 0..run.rows {
            let mut row = Vec::with_capacity(run.cols * eb);
            for c in 0..run.cols {
                row.extend_from_slice(&snap[r * self.cfg.dn + c].to_le_bytes()[..eb]);
            }
            let addr = base + r as u64 * run.row_stride;
            self.mem.write(addr, &row).ok_or(SimError::MemoryFault {
                cycle: self.cycle,
                stage: Stage::Result,
                index,
                addr,
                len: row.len() as u64,
                size: self.mem.len(),
            })?;
            self.stats.bytes_written += row.len() as u64;
        }
        Ok(())
    }

    fn check_conflict(&self, fetch: &Active, execute: &Active) -> Result<(), SimError> {
        let (
            Active::Fetch {
                index: fi, extents, ..
            },
            Active::Execute { index: ei, run, .. },
        ) = (fetch, execute)
        else {
            return Ok(());
        };
        for &(buf, lo, hi) in extents {
            let read_lo = if buf < self.cfg.dm { run.lhs_offset } else { run.rhs_offset };
            let read_hi = read_lo + run.num_reads;
            if lo < read_hi && read_lo < hi {
                return Err(SimError::BufferConflict {
                    cycle: self.cycle,
                    fetch_index: *fi,
                    execute_index: *ei,
                    buffer: buf,
                    lo: lo.max(read_lo),
                    hi: hi.min(read_hi),
                });
            }
        }
        Ok(())
    }

    /// Advances one stage by one cycle. Returns whether it made progress and
    /// any tokens it signalled.
    fn step_stage(&mut self, st: &mut StageState, pending: &mut [u64; 4]) -> Result<bool, SimError> {
        let stream = self.program.stream(st.stage);
        st.waiting_on = None;
        if st.active.is_none() {
            let Some(ins) = stream.get(st.pc) else {
                self.stats.stage_mut(st.stage).idle += 1;
                return Ok(false);
            };
            let index = st.pc;
            match *ins {
                Instruction::Wait(q) => {
                    if self.tokens[q.index()] == 0 {
                        st.waiting_on = Some(q);
                        self.stats.stage_mut(st.stage).stalled_on_wait += 1;
                        return Ok(false);
                    }
                    self.tokens[q.index()] -= 1;
                    self.stats.tokens_consumed[q.index()] += 1;
                }
                Instruction::Signal(q) => {
                    if q == TokenQueueId::ExecuteToResult {
                        if self.snapshots.len() >= self.cfg.br {
                            return Err(SimError::ResultBufferOverflow {
                                cycle: self.cycle,
                                index,
                                depth: self.cfg.br,
                            });
                        }
                        self.snapshots.push_back(self.acc.iter().map(|s| s.acc).collect());
                    }
                    pending[q.index()] += 1;
                    self.stats.tokens_produced[q.index()] += 1;
                }
                Instruction::RunFetch(run) => {
                    let cost = dma_cycles(&run.bursts(), self.cfg.read_bits, self.cfg.dma_setup_cycles);
                    let words = self.fetch_words(index, &run)?;
                    self.stats.bytes_read += run.total_bytes();
                    self.stats.run_fetch += 1;
                    st.active = Some(Active::Fetch {
                        index,
                        remaining: cost,
                        extents: run.write_extents(self.cfg.word_bytes()),
                        words,
                    });
                }
                Instruction::RunExecute(run) => {
                    self.run_execute(&run);
                    self.stats.run_execute += 1;
                    st.active = Some(Active::Execute {
                        index,
                        remaining: run.num_reads as u64 + self.cfg.exec_overhead_cycles,
                        run,
                    });
                }
                Instruction::RunResult(run) => {
                    let snap = self
                        .snapshots
                        .front()
                        .cloned()
                        .ok_or(SimError::ResultBufferEmpty {
                            cycle: self.cycle,
                            index,
                        })?;
                    self.write_result(index, &run, &snap)?;
                    self.stats.run_result += 1;
                    let cost = dma_cycles(
                        &run.bursts(self.cfg.result_elem_bytes()),
                        self.cfg.write_bits,
                        self.cfg.dma_setup_cycles,
                    );
                    st.active = Some(Active::Result { remaining: cost });
                }
            }
            st.pc += 1;
            self.stats.stage_mut(st.stage).instructions += 1;
            if st.active.is_none() {
                self.stats.stage_mut(st.stage).busy += 1;
                return Ok(true);
            }
        }
        // an instruction is in flight: burn one cycle of it
        self.stats.stage_mut(st.stage).busy += 1;
        let done = match st.active.as_mut().expect("active instruction") {
            Active::Fetch { remaining, .. }
            | Active::Execute { remaining, .. }
            | Active::Result { remaining } => {
                *remaining -= 1;
                *remaining == 0
            }
        };
        if done {
            match st.active.take().expect("active instruction") {
                Active::Fetch { words, .. } => {
                    for (buf, addr, word) in &words {
                        self.buffers.write_word(*buf, *addr, word);
                    }
                }
                Active::Result { .. } => {
                    self.snapshots.pop_front();
                }
                Active::Execute { .. } => {}
            }
        }
        Ok(true)
    }

    fn finished(&self, st: &StageState) -> bool {
        st.active.is_none() && st.pc >= self.program.stream(st.stage).len()
    }
}

/// Runs `program` to completion on a fresh overlay instance.
pub fn simulate(
    cfg: &HwConfig,
    program: &Program,
    mem: MainMemory,
) -> Result<(SimStats, MainMemory), SimError> {
    // token-balance lint entries carry no index; a program that fails it
    // is left to the deadlock detector, which reports where each stage stopped
    let mut report = validate(program, cfg);
    report.violations.retain(|v| v.index.is_some());
    if !report.is_empty() {
        return Err(SimError::InvalidProgram(report));
    }
    let mut m = Machine {
        cfg,
        program,
        mem,
        buffers: MatrixBufferSet::new(cfg),
        acc: vec![DpuState::default(); cfg.dm * cfg.dn],
        snapshots: VecDeque::new(),
        tokens: [0; 4],
        stats: SimStats::default(),
        cycle: 0,
    };
    let mut stages: Vec<StageState> = Stage::ALL
        .into_iter()
        .map(|stage| StageState {
            stage,
            pc: 0,
            active: None,
            waiting_on: None,
        })
        .collect();

    while !stages.iter().all(|s| m.finished(s)) {
        let mut pending = [0u64; 4];
        let mut progress = false;
        for i in 0..stages.len() {
            let was_idle = stages[i].active.is_none();
            progress |= m.step_stage(&mut stages[i], &mut pending)?;
            if was_idle && stages[i].active.is_some() {
                let (f, e) = (&stages[0].active, &stages[1].active);
                if let (Some(f), Some(e)) = (f, e) {
                    m.check_conflict(f, e)?;
                }
            }
        }
        if !progress {
            return Err(SimError::Deadlock {
                cycle: m.cycle,
                stages: stages
                    .iter()
                    .map(|s| StageSnapshot {
                        stage: s.stage,
                        pc: s.pc,
                        stream_len: program.stream(s.stage).len(),
                        waiting_on: s.waiting_on,
                    })
                    .collect(),
            });
        }
        for (t, p) in m.tokens.iter_mut().zip(pending) {
            *t += p;
        }
        m.cycle += 1;
    }

    let mut stats = m.stats;
    stats.total_cycles = m.cycle;
    stats.peak_gops = peak_gops(cfg);
    if stats.total_cycles > 0 {
        let secs = stats.total_cycles as f64 / (cfg.fclk_mhz * 1e6);
        stats.achieved_gops = stats.binary_ops as f64 / secs / 1e9;
        stats.efficiency = stats.binary_ops as f64 / (cfg.ops_per_cycle() * stats.total_cycles) as f64;
    }
    Ok((stats, m.mem))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyPoint {
    pub k: usize,
    pub cycles: u64,
    pub efficiency: f64,
}

/// Execute-only program for an `m x k x n` matmul at `lbits x rbits`,
/// reading whatever the buffers hold. Each output tile issues one
/// `RunExecute` per bit-plane pair and per buffer-sized slice of `k`.
pub fn execute_only_program(cfg: &HwConfig, m: usize, n: usize, k: usize, lbits: u32, rbits: u32) -> Program {
    let words = k.div_ceil(cfg.dk).max(1);
    let depth = cfg.bm.min(cfg.bn).max(1);
    let tiles = m.div_ceil(cfg.dm) * n.div_ceil(cfg.dn);
    let mut execute = Vec::new();
    for _ in 0..tiles {
        let mut first = true;
        for j in 0..rbits {
            for i in 0..lbits {
                let mut start = 0;
                while start < words {
                    let reads = depth.min(words - start);
                    execute.push(Instruction::RunExecute(ExecuteRun {
                        lhs_offset: 0,
                        rhs_offset: 0,
                        num_reads: reads,
                        shift: i + j,
                        negate: false,
                        acc_reset: first,
                    }));
                    first = false;
                    start += reads;
                }
            }
        }
    }
    Program {
        execute,
        ..Default::default()
    }
}

/// Execute-stage efficiency against `k` with operands assumed resident and
/// result writes ignored.
pub fn efficiency_sweep(
    cfg: &HwConfig,
    m: usize,
    n: usize,
    ks: &[usize],
    bits: (u32, u32),
) -> Result<Vec<EfficiencyPoint>, SimError> {
    ks.par_iter()
        .map(|&k| {
            let prog = execute_only_program(cfg, m, n, k, bits.0, bits.1);
            let (stats, _) = simulate(cfg, &prog, MainMemory::new(0))?;
            Ok(EfficiencyPoint {
                k,
                cycles: stats.total_cycles,
                efficiency: stats.efficiency,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultibitPoint {
    pub lbits: u32,
    pub rbits: u32,
    pub bit_product: u32,
    pub cycles: u64,
    /// `lbits * rbits * cycles(1, 1)`.
    pub projected: u64,
    pub oracle_match: bool,
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Full compiled runs (overlapped schedule) of an `m x k x n` matmul at each
/// `(w, a)` precision, on seeded random unsigned operands.
pub fn multibit_sweep(
    cfg: &HwConfig,
    m: usize,
    n: usize,
    k: usize,
    pairs: &[(u32, u32)],
    seed: u64,
) -> Result<Vec<MultibitPoint>, SweepError> {
    let run = |w: u32, a: u32| -> Result<(u64, bool), SweepError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((w as u64) << 32 | a as u64));
        let lhs = IntMatrix::random(&mut rng, m, k, w, false).expect("valid bitwidth");
        let rhs = IntMatrix::random(&mut rng, k, n, a, false).expect("valid bitwidth");
        let desc = MatMulDescriptor::for_operands(&lhs, &rhs)?;
        let compiled = scheduler::compile_overlapped(&desc, cfg)?;
        let mem = compiled.image.build_memory(&lhs, &rhs)?;
        let (stats, mem) = simulate(cfg, &compiled.program, mem)?;
        let got = compiled.image.read_result(&mem)?;
        let want = crate::gemm::matmul_oracle(&lhs, &rhs).expect("shapes agree");
        Ok((stats.total_cycles, got == want))
    };
    let (base, _) = run(1, 1)?;
    pairs
        .par_iter()
        .map(|&(w, a)| {
            let (cycles, ok) = run(w, a)?;
            Ok(MultibitPoint {
                lbits: w,
                rbits: a,
                bit_product: w * a,
                cycles,
                projected: (w * a) as u64 * base,
                oracle_match: ok,
            })
        })
        .collect()
}

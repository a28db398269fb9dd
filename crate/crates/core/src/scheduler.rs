//! Compiles a matmul workload into a main-memory image and three instruction
//! streams.
//!
//! Operands are stored bit-plane by bit-plane, each plane row-major with
//! rows packed into `Dk`-bit words and zero-padded to whole words. The RHS is
//! stored transposed so both operands stream along `k`. Row counts are padded
//! to whole DPA tiles with zero rows, which contribute nothing under AND and
//! popcount.
//!
//! The result is tiled into `Dm x Dn` blocks. `k` is cut into chunks of at
//! most half a matrix buffer, and each tile runs one execute pass per
//! `(chunk, j, i)` with the LHS plane innermost. Matrix buffers are divided
//! into chunk-sized slots; which block lives in which slot is decided ahead
//! of time with furthest-next-use eviction, so operand blocks are reused
//! across passes and tiles whenever they are still resident.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bitplane::{decompose, IntMatrix};
use crate::gemm::ResultMatrix;
use crate::hwmodel::{validate_config, wrap_to_width, HwConfig};
use crate::isa::{ExecuteRun, FetchRun, Instruction, Program, ResultRun, TokenQueueId};
use crate::simulator::MainMemory;

/// Largest main memory the layout may occupy.
pub const MEMORY_CAPACITY: u64 = 1 << 30;

/// Widest operand the compiled flows accept.
pub const MAX_COMPILED_BITS: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatMulDescriptor {
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub lbits: u32,
    pub rbits: u32,
    pub lsigned: bool,
    pub rsigned: bool,
}

impl MatMulDescriptor {
    pub fn for_operands(lhs: &IntMatrix, rhs: &IntMatrix) -> Result<Self, ScheduleError> {
        if lhs.cols() != rhs.rows() {
            return Err(ScheduleError::OperandMismatch(format!(
                "lhs is {}x{} but rhs is {}x{}",
                lhs.rows(),
                lhs.cols(),
                rhs.rows(),
                rhs.cols()
            )));
        }
        Ok(Self {
            m: lhs.rows(),
            k: lhs.cols(),
            n: rhs.cols(),
            lbits: lhs.bits(),
            rbits: rhs.bits(),
            lsigned: lhs.signed(),
            rsigned: rhs.signed(),
        })
    }

    fn check(&self) -> Result<(), ScheduleError> {
        if self.m == 0 || self.k == 0 || self.n == 0 {
            return Err(ScheduleError::InvalidDescriptor(format!(
                "dimensions {}x{}x{} must be at least 1",
                self.m, self.k, self.n
            )));
        }
        for (name, b) in [("lbits", self.lbits), ("rbits", self.rbits)] {
            if !(1..=MAX_COMPILED_BITS).contains(&b) {
                return Err(ScheduleError::InvalidDescriptor(format!(
                    "{name} = {b} outside 1..={MAX_COMPILED_BITS}"
                )));
            }
        }
        Ok(())
    }

    /// Every `(i, j)` plane pair.
    pub fn all_planes(&self) -> PlaneSet {
        (0..self.lbits)
            .flat_map(|i| (0..self.rbits).map(move |j| (i, j)))
            .collect()
    }
}

/// Bit-plane pairs `(i, j)` to compute, LHS plane first.
pub type PlaneSet = BTreeSet<(u32, u32)>;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("invalid workload: {0}")]
    InvalidDescriptor(String),
    #[error("invalid hardware config: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error("operands do not match the workload: {0}")]
    OperandMismatch(String),
    #[error("plane pair ({0}, {1}) outside the operand bit widths")]
    PlaneOutOfRange(u32, u32),
    #[error("memory image needs {needed} bytes, more than the {capacity}-byte capacity")]
    FootprintOverflow { needed: u64, capacity: u64 },
    #[error("results up to {bound} in magnitude do not fit {acc_bits}-bit accumulators")]
    AccumulatorOverflow { bound: u128, acc_bits: u32 },
    #[error("memory holds {got} bytes but the image needs {needed}")]
    MemoryTooSmall { needed: u64, got: u64 },
}

fn align_up(x: u64, a: u64) -> u64 {
    x.div_ceil(a) * a
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// One operand's bit planes in main memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperandRegion {
    pub base: u64,
    pub planes: usize,
    /// Stored rows per plane, padded to a multiple of the tile height.
    pub rows: usize,
    pub row_stride: u64,
    pub plane_stride: u64,
}

impl OperandRegion {
    pub fn plane_addr(&self, plane: usize) -> u64 {
        self.base + plane as u64 * self.plane_stride
    }

    pub fn row_addr(&self, plane: usize, row: usize) -> u64 {
        self.plane_addr(plane) + row as u64 * self.row_stride
    }

    pub fn end(&self) -> u64 {
        self.plane_addr(self.planes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultRegion {
    pub base: u64,
    pub rows: usize,
    pub cols: usize,
    pub row_stride: u64,
    pub elem_bytes: usize,
    pub acc_bits: u32,
}

impl ResultRegion {
    pub fn elem_addr(&self, row: usize, col: usize) -> u64 {
        self.base + row as u64 * self.row_stride + (col * self.elem_bytes) as u64
    }

    pub fn end(&self) -> u64 {
        self.base + self.rows as u64 * self.row_stride
    }
}

/// Placement of both operands and the result in main memory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryImage {
    pub desc: MatMulDescriptor,
    pub word_bytes: usize,
    /// Buffer words per operand row (`ceil(k / Dk)`).
    pub words_per_row: usize,
    pub lhs: OperandRegion,
    pub rhs: OperandRegion,
    pub result: ResultRegion,
    pub total_bytes: u64,
}

/// Lays out `desc` for `cfg`: LHS planes, then transposed RHS planes, then
/// the result, each region aligned to the wider of the channel width and the
/// buffer word.
pub fn layout(desc: &MatMulDescriptor, cfg: &HwConfig) -> Result<MemoryImage, ScheduleError> {
    desc.check()?;
    check_config(cfg)?;
    let wb = cfg.word_bytes() as u64;
    let chan = (cfg.read_bits.max(cfg.write_bits) / 8) as u64;
    let align = chan / gcd(chan, wb) * wb;
    let words = desc.k.div_ceil(cfg.dk);
    let row_stride = align_up(words as u64 * wb, align);
    let region = |base: u64, planes: u32, rows: usize, tile: usize| {
        let rows = rows.div_ceil(tile) * tile;
        OperandRegion {
            base,
            planes: planes as usize,
            rows,
            row_stride,
            plane_stride: rows as u64 * row_stride,
        }
    };
    let lhs = region(0, desc.lbits, desc.m, cfg.dm);
    let rhs = region(align_up(lhs.end(), align), desc.rbits, desc.n, cfg.dn);
    let eb = cfg.result_elem_bytes();
    let result = ResultRegion {
        base: align_up(rhs.end(), align),
        rows: desc.m,
        cols: desc.n,
        row_stride: (desc.n * eb) as u64,
        elem_bytes: eb,
        acc_bits: cfg.acc_bits,
    };
    let total_bytes = align_up(result.end(), align);
    if total_bytes > MEMORY_CAPACITY {
        return Err(ScheduleError::FootprintOverflow {
            needed: total_bytes,
            capacity: MEMORY_CAPACITY,
        });
    }
    Ok(MemoryImage {
        desc: *desc,
        word_bytes: wb as usize,
        words_per_row: words,
        lhs,
        rhs,
        result,
        total_bytes,
    })
}

impl MemoryImage {
    /// A zeroed memory of `total_bytes` holding the packed operand planes.
    pub fn build_memory(&self, lhs: &IntMatrix, rhs: &IntMatrix) -> Result<MainMemory, ScheduleError> {
        let d = &self.desc;
        let shape = |name: &str, m: &IntMatrix, rows, cols, bits, signed| {
            if (m.rows(), m.cols(), m.bits(), m.signed()) != (rows, cols, bits, signed) {
                Err(ScheduleError::OperandMismatch(format!(
                    "{name} is {}x{} {}-bit {}, workload expects {rows}x{cols} {bits}-bit {}",
                    m.rows(),
                    m.cols(),
                    m.bits(),
                    if m.signed() { "signed" } else { "unsigned" },
                    if signed { "signed" } else { "unsigned" },
                )))
            } else {
                Ok(())
            }
        };
        shape("lhs", lhs, d.m, d.k, d.lbits, d.lsigned)?;
        shape("rhs", rhs, d.k, d.n, d.rbits, d.rsigned)?;
        let mut mem = MainMemory::new(self.total_bytes as usize);
        let row_len = self.words_per_row * self.word_bytes;
        for (region, tensor) in [(&self.lhs, decompose(lhs)), (&self.rhs, decompose(&rhs.transpose()))] {
            for (i, plane) in tensor.planes().iter().enumerate() {
                for r in 0..plane.rows() {
                    mem.write(region.row_addr(i, r), &plane.row_bytes(r, row_len))
                        .expect("layout fits its own image");
                }
            }
        }
        Ok(mem)
    }

    /// Reads the `m x n` result, sign-extending each element from the
    /// accumulator width.
    pub fn read_result(&self, mem: &MainMemory) -> Result<ResultMatrix, ScheduleError> {
        let r = &self.result;
        if (mem.len() as u64) < r.end() {
            return Err(ScheduleError::MemoryTooSmall {
                needed: r.end(),
                got: mem.len() as u64,
            });
        }
        let mut out = ResultMatrix::zeros(r.rows, r.cols);
        for row in 0..r.rows {
            for col in 0..r.cols {
                let bytes = mem
                    .read(r.elem_addr(row, col), r.elem_bytes as u64)
                    .expect("checked above");
                let mut buf = [0u8; 8];
                buf[..bytes.len()].copy_from_slice(bytes);
                out.elems[row * r.cols + col] = wrap_to_width(i64::from_le_bytes(buf), r.acc_bits);
            }
        }
        Ok(out)
    }
}

/// Tiling, chunking and pass order of a compiled matmul.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilePlan {
    pub tiles_m: usize,
    pub tiles_n: usize,
    pub words_per_row: usize,
    /// Buffer words per `k` chunk (the last chunk may be shorter).
    pub chunk_words: usize,
    pub num_chunks: usize,
    pub lhs_slots: usize,
    pub rhs_slots: usize,
    /// Tile rows and columns visited together before moving on.
    pub group_rows: usize,
    pub group_cols: usize,
    /// Output tiles `(tile_row, tile_col)` in execution order.
    pub order: Vec<(usize, usize)>,
    /// Plane pairs `(i, j)` in pass order within a chunk.
    pub pairs: Vec<(u32, u32)>,
}

impl TilePlan {
    pub fn new(desc: &MatMulDescriptor, cfg: &HwConfig, active: &PlaneSet) -> Result<Self, ScheduleError> {
        desc.check()?;
        check_config(cfg)?;
        if let Some(&(i, j)) = active.iter().find(|(i, j)| *i >= desc.lbits || *j >= desc.rbits) {
            return Err(ScheduleError::PlaneOutOfRange(i, j));
        }
        let words = desc.k.div_ceil(cfg.dk);
        let chunk = words.min((cfg.bm / 2).min(cfg.bn / 2).max(1));
        let num_chunks = words.div_ceil(chunk);
        let (tiles_m, tiles_n) = (desc.m.div_ceil(cfg.dm), desc.n.div_ceil(cfg.dn));
        let (lhs_slots, rhs_slots) = (cfg.bm / chunk, cfg.bn / chunk);
        let group = |slots: usize, planes: u32, tiles: usize| {
            ((slots / 2) / (planes as usize * num_chunks)).clamp(1, tiles)
        };
        let group_rows = group(lhs_slots, desc.lbits, tiles_m);
        let group_cols = group(rhs_slots, desc.rbits, tiles_n);
        let col_groups = tiles_n.div_ceil(group_cols);
        let mut order = Vec::with_capacity(tiles_m * tiles_n);
        for (rg, row0) in (0..tiles_m).step_by(group_rows).enumerate() {
            let mut cgs: Vec<usize> = (0..col_groups).collect();
            if rg % 2 == 1 {
                cgs.reverse();
            }
            for cg in cgs {
                let col0 = cg * group_cols;
                for ti in row0..(row0 + group_rows).min(tiles_m) {
                    for tj in col0..(col0 + group_cols).min(tiles_n) {
                        order.push((ti, tj));
                    }
                }
            }
        }
        let mut pairs: Vec<(u32, u32)> = active.iter().copied().collect();
        pairs.sort_by_key(|&(i, j)| (j, i));
        Ok(Self {
            tiles_m,
            tiles_n,
            words_per_row: words,
            chunk_words: chunk,
            num_chunks,
            lhs_slots,
            rhs_slots,
            group_rows,
            group_cols,
            order,
            pairs,
        })
    }

    pub fn chunk_len(&self, c: usize) -> usize {
        self.chunk_words.min(self.words_per_row - c * self.chunk_words)
    }

    pub fn passes_per_tile(&self) -> usize {
        self.num_chunks * self.pairs.len()
    }

    fn passes(&self) -> Vec<Pass> {
        let mut out = Vec::with_capacity(self.order.len() * self.passes_per_tile());
        for (t, &(ti, tj)) in self.order.iter().enumerate() {
            let start = out.len();
            for c in 0..self.num_chunks {
                for &(i, j) in &self.pairs {
                    out.push(Pass {
                        tile: t,
                        ti,
                        tj,
                        chunk: c,
                        i,
                        j,
                        first: out.len() == start,
                        last: false,
                    });
                }
            }
            if out.len() > start {
                out.last_mut().expect("non-empty").last = true;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
struct Pass {
    tile: usize,
    ti: usize,
    tj: usize,
    chunk: usize,
    i: u32,
    j: u32,
    first: bool,
    last: bool,
}

/// `(tile row or column, plane, chunk)` of one operand.
type Block = (usize, u32, usize);

#[derive(Debug, Clone, Copy)]
struct Fetch {
    block: Block,
    slot: usize,
    /// Last pass that used the block this fetch overwrites.
    release: Option<usize>,
}

/// Slot of every pass plus the fetches that fill slots, found by evicting
/// the resident block whose next use is furthest away (never-again first,
/// then the least recently used).
fn assign_slots(blocks: &[Block], slots: usize) -> (Vec<usize>, Vec<Option<Fetch>>) {
    let mut next_use = vec![usize::MAX; blocks.len()];
    let mut seen: HashMap<Block, usize> = HashMap::new();
    for (q, b) in blocks.iter().enumerate().rev() {
        if let Some(&n) = seen.get(b) {
            next_use[q] = n;
        }
        seen.insert(*b, q);
    }
    // per slot: (block, last use)
    let mut state: Vec<Option<(Block, usize)>> = vec![None; slots];
    let mut where_is: HashMap<Block, usize> = HashMap::new();
    let mut slot_of = Vec::with_capacity(blocks.len());
    let mut fetches = Vec::with_capacity(blocks.len());
    for (q, b) in blocks.iter().enumerate() {
        if let Some(&s) = where_is.get(b) {
            state[s] = Some((*b, q));
            slot_of.push(s);
            fetches.push(None);
            continue;
        }
        let s = match state.iter().position(Option::is_none) {
            Some(s) => s,
            None => (0..slots)
                .max_by_key(|&s| {
                    let (_, last) = state[s].expect("all slots full");
                    (next_use[last], std::cmp::Reverse(last))
                })
                .expect("at least one slot"),
        };
        let release = state[s].map(|(old, last)| {
            where_is.remove(&old);
            last
        });
        state[s] = Some((*b, q));
        where_is.insert(*b, s);
        slot_of.push(s);
        fetches.push(Some(Fetch {
            block: *b,
            slot: s,
            release,
        }));
    }
    (slot_of, fetches)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScheduleMode {
    /// Stages hand off strictly in turn; nothing overlaps.
    Sequential,
    /// Fetch runs ahead of execute into free slots and result writes
    /// drain in the background.
    Overlapped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompiledMatMul {
    pub program: Program,
    pub image: MemoryImage,
    pub plan: TilePlan,
    pub mode: ScheduleMode,
}

fn check_config(cfg: &HwConfig) -> Result<(), ScheduleError> {
    let rep = validate_config(cfg);
    if rep.is_valid() {
        Ok(())
    } else {
        Err(ScheduleError::InvalidConfig(rep.errors))
    }
}

/// Worst-case magnitude of any result element: `k * (2^l - 1) * (2^r - 1)`,
/// which also bounds every partial sum over a subset of plane pairs.
fn check_accumulator(desc: &MatMulDescriptor, cfg: &HwConfig) -> Result<(), ScheduleError> {
    let bound = desc.k as u128 * ((1u128 << desc.lbits) - 1) * ((1u128 << desc.rbits) - 1);
    if cfg.acc_bits < 64 && bound >= 1u128 << (cfg.acc_bits - 1) {
        return Err(ScheduleError::AccumulatorOverflow {
            bound,
            acc_bits: cfg.acc_bits,
        });
    }
    Ok(())
}

pub fn compile_sequential(desc: &MatMulDescriptor, cfg: &HwConfig) -> Result<CompiledMatMul, ScheduleError> {
    compile(desc, cfg, &desc.all_planes(), ScheduleMode::Sequential)
}

pub fn compile_overlapped(desc: &MatMulDescriptor, cfg: &HwConfig) -> Result<CompiledMatMul, ScheduleError> {
    compile(desc, cfg, &desc.all_planes(), ScheduleMode::Overlapped)
}

/// Compiles only the plane pairs in `active`. The result is the bit-serial
/// sum restricted to those pairs; an empty set yields an empty program and
/// a zero result.
pub fn precision_skip(
    desc: &MatMulDescriptor,
    cfg: &HwConfig,
    active: &PlaneSet,
    mode: ScheduleMode,
) -> Result<CompiledMatMul, ScheduleError> {
    compile(desc, cfg, active, mode)
}

fn compile(
    desc: &MatMulDescriptor,
    cfg: &HwConfig,
    active: &PlaneSet,
    mode: ScheduleMode,
) -> Result<CompiledMatMul, ScheduleError> {
    let image = layout(desc, cfg)?;
    let plan = TilePlan::new(desc, cfg, active)?;
    check_accumulator(desc, cfg)?;
    let passes = plan.passes();
    let lhs_blocks: Vec<Block> = passes.iter().map(|p| (p.ti, p.i, p.chunk)).collect();
    let rhs_blocks: Vec<Block> = passes.iter().map(|p| (p.tj, p.j, p.chunk)).collect();
    let (lslot, lfetch) = assign_slots(&lhs_blocks, plan.lhs_slots);
    let (rslot, rfetch) = assign_slots(&rhs_blocks, plan.rhs_slots);

    let cw = plan.chunk_words;
    let wb = image.word_bytes as u64;
    let fetch_run = |f: &Fetch, region: &OperandRegion, tile_rows: usize, buf_start: usize| {
        let (t, plane, c) = f.block;
        let len = plan.chunk_len(c);
        FetchRun {
            dram_base: region.row_addr(plane as usize, t * tile_rows) + (c * cw) as u64 * wb,
            block_size: len as u64 * wb,
            block_offset: region.row_stride,
            num_blocks: tile_rows as u64,
            buf_offset: f.slot * cw,
            buf_start,
            buf_range: tile_rows,
            words_per_buffer: len,
        }
    };

    // passes after which execute hands a slot back to fetch
    let releases: BTreeSet<usize> = lfetch.iter().chain(&rfetch).flatten().filter_map(|f| f.release).collect();
    let rank: HashMap<usize, usize> = releases.iter().enumerate().map(|(r, &q)| (q, r + 1)).collect();

    let tiles = plan.order.len();
    let res = &image.result;
    let mut p = Program::default();
    let mut consumed = 0;
    for (q, pass) in passes.iter().enumerate() {
        let fetches: Vec<Instruction> = [
            lfetch[q].map(|f| fetch_run(&f, &image.lhs, cfg.dm, 0)),
            rfetch[q].map(|f| fetch_run(&f, &image.rhs, cfg.dn, cfg.dm)),
        ]
        .into_iter()
        .flatten()
        .map(Instruction::RunFetch)
        .collect();
        if !fetches.is_empty() {
            match mode {
                ScheduleMode::Overlapped => {
                    let need = [lfetch[q], rfetch[q]]
                        .iter()
                        .flatten()
                        .filter_map(|f| f.release)
                        .map(|u| rank[&u])
                        .max()
                        .unwrap_or(0);
                    while consumed < need {
                        p.fetch.push(Instruction::Wait(TokenQueueId::ExecuteToFetch));
                        consumed += 1;
                    }
                }
                ScheduleMode::Sequential => {
                    p.execute.push(Instruction::Signal(TokenQueueId::ExecuteToFetch));
                    p.fetch.push(Instruction::Wait(TokenQueueId::ExecuteToFetch));
                }
            }
            p.fetch.extend(fetches);
            p.fetch.push(Instruction::Signal(TokenQueueId::FetchToExecute));
            p.execute.push(Instruction::Wait(TokenQueueId::FetchToExecute));
        }
        let (sl, sr) = (
            if desc.lsigned && pass.i + 1 == desc.lbits { -1 } else { 1 },
            if desc.rsigned && pass.j + 1 == desc.rbits { -1 } else { 1 },
        );
        p.execute.push(Instruction::RunExecute(ExecuteRun {
            lhs_offset: lslot[q] * cw,
            rhs_offset: rslot[q] * cw,
            num_reads: plan.chunk_len(pass.chunk),
            shift: pass.i + pass.j,
            negate: sl * sr < 0,
            acc_reset: pass.first,
        }));
        if mode == ScheduleMode::Overlapped && releases.contains(&q) {
            p.execute.push(Instruction::Signal(TokenQueueId::ExecuteToFetch));
        }
        if pass.last {
            let t = pass.tile;
            let overlapped = mode == ScheduleMode::Overlapped;
            if overlapped && t >= cfg.br {
                p.execute.push(Instruction::Wait(TokenQueueId::ResultToExecute));
            }
            p.execute.push(Instruction::Signal(TokenQueueId::ExecuteToResult));
            if !overlapped {
                p.execute.push(Instruction::Wait(TokenQueueId::ResultToExecute));
            }
            let (r0, c0) = (pass.ti * cfg.dm, pass.tj * cfg.dn);
            p.result.push(Instruction::Wait(TokenQueueId::ExecuteToResult));
            p.result.push(Instruction::RunResult(ResultRun {
                dram_base: res.base,
                offset: res.elem_addr(r0, c0) - res.base,
                row_stride: res.row_stride,
                rows: cfg.dm.min(desc.m - r0),
                cols: cfg.dn.min(desc.n - c0),
            }));
            if !overlapped || t + cfg.br < tiles {
                p.result.push(Instruction::Signal(TokenQueueId::ResultToExecute));
            }
        }
    }
    Ok(CompiledMatMul {
        program: p,
        image,
        plan,
        mode,
    })
}

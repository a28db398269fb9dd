//! Overlay instruction set, static validation and the textual program format.
//!
//! Each pipeline stage runs its own in-order instruction stream. Stages
//! synchronize only through four payload-free token queues:
//! `Signal` pushes a token, `Wait` blocks until one is available and pops it.
//!
//! Text format, one instruction per line:
//!
//! ```text
//! [fetch]
//! fetch RUNFETCH dram_base=0x0 block_size=8 block_offset=8 num_blocks=2 buf_offset=0 buf_start=0 buf_range=2 words_per_buffer=1
//! fetch SIGNAL queue=fetch_to_execute
//! [execute]
//! execute WAIT queue=fetch_to_execute
//! execute RUNEXECUTE lhs_offset=0 rhs_offset=0 num_reads=1 shift=0 negate=0 acc_reset=1
//! [result]
//! ```
//!
//! Addresses (`dram_base`, `offset`) are hex with a `0x` prefix; everything
//! else is decimal. `#` starts a comment.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hwmodel::HwConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Fetch,
    Execute,
    Result,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Fetch, Stage::Execute, Stage::Result];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Fetch => "fetch",
            Stage::Execute => "execute",
            Stage::Result => "result",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        Stage::ALL.into_iter().find(|st| st.name() == s).ok_or(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenQueueId {
    FetchToExecute,
    ExecuteToFetch,
    ExecuteToResult,
    ResultToExecute,
}

impl TokenQueueId {
    pub const ALL: [TokenQueueId; 4] = [
        TokenQueueId::FetchToExecute,
        TokenQueueId::ExecuteToFetch,
        TokenQueueId::ExecuteToResult,
        TokenQueueId::ResultToExecute,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// The stage allowed to `Signal` this queue.
    pub fn producer(self) -> Stage {
        match self {
            TokenQueueId::FetchToExecute => Stage::Fetch,
            TokenQueueId::ExecuteToFetch | TokenQueueId::ExecuteToResult => Stage::Execute,
            TokenQueueId::ResultToExecute => Stage::Result,
        }
    }

    /// The stage allowed to `Wait` on this queue.
    pub fn consumer(self) -> Stage {
        match self {
            TokenQueueId::ExecuteToFetch => Stage::Fetch,
            TokenQueueId::FetchToExecute | TokenQueueId::ResultToExecute => Stage::Execute,
            TokenQueueId::ExecuteToResult => Stage::Result,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TokenQueueId::FetchToExecute => "fetch_to_execute",
            TokenQueueId::ExecuteToFetch => "execute_to_fetch",
            TokenQueueId::ExecuteToResult => "execute_to_result",
            TokenQueueId::ResultToExecute => "result_to_execute",
        }
    }
}

impl FromStr for TokenQueueId {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        TokenQueueId::ALL.into_iter().find(|q| q.name() == s).ok_or(())
    }
}

/// DMA read from main memory into the matrix buffers.
///
/// The byte stream `num_blocks` blocks of `block_size` bytes, spaced
/// `block_offset` apart, is cut into `Dk`-bit words. Words are written
/// `words_per_buffer` at a time into buffers `buf_start..buf_start+buf_range`
/// in rotation; each full rotation advances the write address by
/// `words_per_buffer`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchRun {
    pub dram_base: u64,
    pub block_size: u64,
    pub block_offset: u64,
    pub num_blocks: u64,
    pub buf_offset: usize,
    pub buf_start: usize,
    pub buf_range: usize,
    pub words_per_buffer: usize,
}

impl FetchRun {
    pub fn total_bytes(&self) -> u64 {
        self.num_blocks.saturating_mul(self.block_size)
    }

    pub fn num_words(&self, word_bytes: usize) -> usize {
        (self.total_bytes() / word_bytes as u64) as usize
    }

    /// Destination `(buffer, address)` of stream word `w`.
    pub fn destination(&self, w: usize) -> (usize, usize) {
        let group = w / self.words_per_buffer;
        let buffer = self.buf_start + group % self.buf_range;
        let addr = self.buf_offset
            + (group / self.buf_range) * self.words_per_buffer
            + w % self.words_per_buffer;
        (buffer, addr)
    }

    /// Per-buffer half-open address ranges written by this run.
    pub fn write_extents(&self, word_bytes: usize) -> Vec<(usize, usize, usize)> {
        let words = self.num_words(word_bytes);
        if words == 0 || self.words_per_buffer == 0 || self.buf_range == 0 {
            return Vec::new();
        }
        let mut out = Vec::new();
        for k in 0..self.buf_range.min(words.div_ceil(self.words_per_buffer)) {
            // last stream word that lands in buffer buf_start + k
            let groups = words.div_ceil(self.words_per_buffer);
            let last_group = k + ((groups - 1 - k) / self.buf_range) * self.buf_range;
            let last_word = ((last_group + 1) * self.words_per_buffer).min(words) - 1;
            let (_, hi) = self.destination(last_word);
            out.push((self.buf_start + k, self.buf_offset, hi + 1));
        }
        out
    }

    /// Contiguous DRAM bursts as `(address, bytes)`. Abutting blocks merge
    /// into a single burst.
    pub fn bursts(&self) -> Vec<(u64, u64)> {
        if self.num_blocks == 0 || self.block_size == 0 {
            return Vec::new();
        }
        if self.block_offset == self.block_size || self.num_blocks == 1 {
            return vec![(self.dram_base, self.total_bytes())];
        }
        (0..self.num_blocks)
            .map(|b| (self.dram_base + b * self.block_offset, self.block_size))
            .collect()
    }
}

/// `num_reads` DPA steps reading LHS words `lhs_offset..` and RHS words
/// `rhs_offset..`, each contribution shifted left by `shift` and negated when
/// `negate` is set. `acc_reset` clears the accumulators before the first step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecuteRun {
    pub lhs_offset: usize,
    pub rhs_offset: usize,
    pub num_reads: usize,
    pub shift: u32,
    pub negate: bool,
    pub acc_reset: bool,
}

/// Writes the oldest result-buffer snapshot to main memory. Row `r`,
/// column `c` of the tile lands at `dram_base + offset + r * row_stride +
/// c * elem_bytes`; only the leading `rows x cols` block is written.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultRun {
    pub dram_base: u64,
    pub offset: u64,
    pub row_stride: u64,
    pub rows: usize,
    pub cols: usize,
}

impl ResultRun {
    pub fn bursts(&self, elem_bytes: usize) -> Vec<(u64, u64)> {
        let row_bytes = (self.cols * elem_bytes) as u64;
        let start = self.dram_base + self.offset;
        if self.rows == 0 || row_bytes == 0 {
            return Vec::new();
        }
        if self.rows == 1 || self.row_stride == row_bytes {
            return vec![(start, row_bytes * self.rows as u64)];
        }
        (0..self.rows as u64)
            .map(|r| (start + r * self.row_stride, row_bytes))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Instruction {
    Wait(TokenQueueId),
    Signal(TokenQueueId),
    RunFetch(FetchRun),
    RunExecute(ExecuteRun),
    RunResult(ResultRun),
}

impl Instruction {
    /// Whether `stage` may execute this instruction.
    pub fn legal_in(&self, stage: Stage) -> bool {
        match self {
            Instruction::Wait(q) => q.consumer() == stage,
            Instruction::Signal(q) => q.producer() == stage,
            Instruction::RunFetch(_) => stage == Stage::Fetch,
            Instruction::RunExecute(_) => stage == Stage::Execute,
            Instruction::RunResult(_) => stage == Stage::Result,
        }
    }

    pub fn is_run(&self) -> bool {
        matches!(
            self,
            Instruction::RunFetch(_) | Instruction::RunExecute(_) | Instruction::RunResult(_)
        )
    }

    fn opcode(&self) -> &'static str {
        match self {
            Instruction::Wait(_) => "WAIT",
            Instruction::Signal(_) => "SIGNAL",
            Instruction::RunFetch(_) => "RUNFETCH",
            Instruction::RunExecute(_) => "RUNEXECUTE",
            Instruction::RunResult(_) => "RUNRESULT",
        }
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.opcode())?;
        match self {
            Instruction::Wait(q) | Instruction::Signal(q) => write!(f, " queue={}", q.name()),
            Instruction::RunFetch(r) => write!(
                f,
                " dram_base={:#x} block_size={} block_offset={} num_blocks={} buf_offset={} buf_start={} buf_range={} words_per_buffer={}",
                r.dram_base,
                r.block_size,
                r.block_offset,
                r.num_blocks,
                r.buf_offset,
                r.buf_start,
                r.buf_range,
                r.words_per_buffer
            ),
            Instruction::RunExecute(r) => write!(
                f,
                " lhs_offset={} rhs_offset={} num_reads={} shift={} negate={} acc_reset={}",
                r.lhs_offset,
                r.rhs_offset,
                r.num_reads,
                r.shift,
                r.negate as u8,
                r.acc_reset as u8
            ),
            Instruction::RunResult(r) => write!(
                f,
                " dram_base={:#x} offset={:#x} row_stride={} rows={} cols={}",
                r.dram_base, r.offset, r.row_stride, r.rows, r.cols
            ),
        }
    }
}

/// Three per-stage instruction streams.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Program {
    pub fetch: Vec<Instruction>,
    pub execute: Vec<Instruction>,
    pub result: Vec<Instruction>,
}

impl Program {
    pub fn stream(&self, stage: Stage) -> &[Instruction] {
        match stage {
            Stage::Fetch => &self.fetch,
            Stage::Execute => &self.execute,
            Stage::Result => &self.result,
        }
    }

    pub fn stream_mut(&mut self, stage: Stage) -> &mut Vec<Instruction> {
        match stage {
            Stage::Fetch => &mut self.fetch,
            Stage::Execute => &mut self.execute,
            Stage::Result => &mut self.result,
        }
    }

    pub fn len(&self) -> usize {
        self.fetch.len() + self.execute.len() + self.result.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn serialize(&self) -> String {
        self.to_string()
    }

    pub fn parse(text: &str) -> Result<Self, ParseError> {
        parse(text)
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for stage in Stage::ALL {
            writeln!(f, "[{stage}]")?;
            for ins in self.stream(stage) {
                writeln!(f, "{stage} {ins}")?;
            }
        }
        Ok(())
    }
}

impl FromStr for Program {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("line {line}{}: {message}", .field.as_ref().map(|f| format!(", field `{f}`")).unwrap_or_default())]
pub struct ParseError {
    pub line: usize,
    pub field: Option<String>,
    pub message: String,
}

struct Fields<'a> {
    line: usize,
    pairs: Vec<(&'a str, &'a str)>,
}

impl<'a> Fields<'a> {
    fn err(&self, field: Option<&str>, message: impl Into<String>) -> ParseError {
        ParseError {
            line: self.line,
            field: field.map(str::to_string),
            message: message.into(),
        }
    }

    fn raw(&self, key: &str) -> Result<&'a str, ParseError> {
        self.pairs
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| self.err(Some(key), "missing field"))
    }

    fn uint(&self, key: &str) -> Result<u64, ParseError> {
        let v = self.raw(key)?;
        v.parse()
            .map_err(|_| self.err(Some(key), format!("expected decimal integer, got {v:?}")))
    }

    fn addr(&self, key: &str) -> Result<u64, ParseError> {
        let v = self.raw(key)?;
        v.strip_prefix("0x")
            .and_then(|h| u64::from_str_radix(h, 16).ok())
            .ok_or_else(|| self.err(Some(key), format!("expected 0x-prefixed hex, got {v:?}")))
    }

    fn usize(&self, key: &str) -> Result<usize, ParseError> {
        self.uint(key).map(|v| v as usize)
    }

    fn flag(&self, key: &str) -> Result<bool, ParseError> {
        match self.raw(key)? {
            "0" => Ok(false),
            "1" => Ok(true),
            v => Err(self.err(Some(key), format!("expected 0 or 1, got {v:?}"))),
        }
    }

    fn queue(&self) -> Result<TokenQueueId, ParseError> {
        let v = self.raw("queue")?;
        v.parse()
            .map_err(|_| self.err(Some("queue"), format!("unknown queue {v:?}")))
    }

    fn expect_only(&self, keys: &[&str]) -> Result<(), ParseError> {
        for (k, _) in &self.pairs {
            if !keys.contains(k) {
                return Err(self.err(Some(k), "unexpected field"));
            }
        }
        for (i, (k, _)) in self.pairs.iter().enumerate() {
            if self.pairs[..i].iter().any(|(p, _)| p == k) {
                return Err(self.err(Some(k), "duplicate field"));
            }
        }
        Ok(())
    }
}

fn parse_instruction(line: usize, opcode: &str, rest: &[&str]) -> Result<Instruction, ParseError> {
    let mut pairs = Vec::with_capacity(rest.len());
    for tok in rest {
        let (k, v) = tok.split_once('=').ok_or_else(|| ParseError {
            line,
            field: None,
            message: format!("expected key=value, got {tok:?}"),
        })?;
        pairs.push((k, v));
    }
    let f = Fields { line, pairs };
    let ins = match opcode {
        "WAIT" => {
            f.expect_only(&["queue"])?;
            Instruction::Wait(f.queue()?)
        }
        "SIGNAL" => {
            f.expect_only(&["queue"])?;
            Instruction::Signal(f.queue()?)
        }
        "RUNFETCH" => {
            f.expect_only(&[
                "dram_base",
                "block_size",
                "block_offset",
                "num_blocks",
                "buf_offset",
                "buf_start",
                "buf_range",
                "words_per_buffer",
            ])?;
            Instruction::RunFetch(FetchRun {
                dram_base: f.addr("dram_base")?,
                block_size: f.uint("block_size")?,
                block_offset: f.uint("block_offset")?,
                num_blocks: f.uint("num_blocks")?,
                buf_offset: f.usize("buf_offset")?,
                buf_start: f.usize("buf_start")?,
                buf_range: f.usize("buf_range")?,
                words_per_buffer: f.usize("words_per_buffer")?,
            })
        }
        "RUNEXECUTE" => {
            f.expect_only(&["lhs_offset", "rhs_offset", "num_reads", "shift", "negate", "acc_reset"])?;
            let shift = f.uint("shift")?;
            Instruction::RunExecute(ExecuteRun {
                lhs_offset: f.usize("lhs_offset")?,
                rhs_offset: f.usize("rhs_offset")?,
                num_reads: f.usize("num_reads")?,
                shift: u32::try_from(shift)
                    .map_err(|_| f.err(Some("shift"), "shift out of range"))?,
                negate: f.flag("negate")?,
                acc_reset: f.flag("acc_reset")?,
            })
        }
        "RUNRESULT" => {
            f.expect_only(&["dram_base", "offset", "row_stride", "rows", "cols"])?;
            Instruction::RunResult(ResultRun {
                dram_base: f.addr("dram_base")?,
                offset: f.addr("offset")?,
                row_stride: f.uint("row_stride")?,
                rows: f.usize("rows")?,
                cols: f.usize("cols")?,
            })
        }
        other => {
            return Err(ParseError {
                line,
                field: None,
                message: format!("unknown opcode {other:?}"),
            })
        }
    };
    Ok(ins)
}

/// Parses the textual program format. Section headers are optional; when
/// present, each instruction's stage prefix must match its section.
pub fn parse(text: &str) -> Result<Program, ParseError> {
    let mut prog = Program::default();
    let mut section: Option<Stage> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            section = Some(name.trim().parse().map_err(|_| ParseError {
                line,
                field: None,
                message: format!("unknown section {name:?}"),
            })?);
            continue;
        }
        let toks: Vec<&str> = content.split_whitespace().collect();
        let stage: Stage = toks[0].parse().map_err(|_| ParseError {
            line,
            field: None,
            message: format!("unknown stage {:?}", toks[0]),
        })?;
        if section.is_some_and(|s| s != stage) {
            return Err(ParseError {
                line,
                field: None,
                message: format!("{stage} instruction inside [{}] section", section.unwrap()),
            });
        }
        let opcode = toks.get(1).ok_or_else(|| ParseError {
            line,
            field: None,
            message: "missing opcode".into(),
        })?;
        let ins = parse_instruction(line, opcode, &toks[2..])?;
        prog.stream_mut(stage).push(ins);
    }
    Ok(prog)
}

pub fn serialize(p: &Program) -> String {
    p.to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub stage: Stage,
    /// Index within the stage's stream; `None` for whole-program findings.
    pub index: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.index {
            Some(i) => write!(f, "{}[{}]: {}", self.stage, i, self.message),
            None => write!(f, "{}: {}", self.stage, self.message),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

fn check_fetch(r: &FetchRun, cfg: &HwConfig, out: &mut Vec<String>) {
    let wb = cfg.word_bytes().max(1) as u64;
    if r.num_blocks == 0 || r.block_size == 0 {
        out.push("empty transfer".into());
    }
    if r.block_size % wb != 0 {
        out.push(format!("block_size {} is not a whole number of {wb}-byte words", r.block_size));
    }
    if r.dram_base % wb != 0 {
        out.push(format!("dram_base {:#x} not aligned to {wb} bytes", r.dram_base));
    }
    if r.num_blocks > 1 && r.block_offset % wb != 0 {
        out.push(format!("block_offset {} not aligned to {wb} bytes", r.block_offset));
    }
    if r.words_per_buffer == 0 || r.buf_range == 0 {
        out.push("buf_range and words_per_buffer must be at least 1".into());
        return;
    }
    if r.buf_start.saturating_add(r.buf_range) > cfg.num_buffers() {
        out.push(format!(
            "buffers {}..{} exceed the {} available",
            r.buf_start,
            r.buf_start + r.buf_range,
            cfg.num_buffers()
        ));
        return;
    }
    for (buf, _, end) in r.write_extents(wb as usize) {
        if end > cfg.buffer_depth(buf) {
            out.push(format!(
                "writes buffer {buf} up to word {} beyond depth {}",
                end - 1,
                cfg.buffer_depth(buf)
            ));
        }
    }
}

fn check_execute(r: &ExecuteRun, cfg: &HwConfig, out: &mut Vec<String>) {
    if r.num_reads == 0 {
        out.push("num_reads must be at least 1".into());
    }
    if r.lhs_offset.saturating_add(r.num_reads) > cfg.bm {
        out.push(format!(
            "LHS reads {}..{} exceed depth Bm = {}",
            r.lhs_offset,
            r.lhs_offset + r.num_reads,
            cfg.bm
        ));
    }
    if r.rhs_offset.saturating_add(r.num_reads) > cfg.bn {
        out.push(format!(
            "RHS reads {}..{} exceed depth Bn = {}",
            r.rhs_offset,
            r.rhs_offset + r.num_reads,
            cfg.bn
        ));
    }
    if r.shift >= cfg.acc_bits {
        out.push(format!("shift {} not below accumulator width {}", r.shift, cfg.acc_bits));
    }
}

fn check_result(r: &ResultRun, cfg: &HwConfig, out: &mut Vec<String>) {
    let eb = cfg.result_elem_bytes().max(1) as u64;
    if r.rows == 0 || r.cols == 0 || r.rows > cfg.dm || r.cols > cfg.dn {
        out.push(format!(
            "tile {}x{} outside 1..={} x 1..={}",
            r.rows, r.cols, cfg.dm, cfg.dn
        ));
    }
    if r.dram_base.wrapping_add(r.offset) % eb != 0 {
        out.push(format!(
            "address {:#x} not aligned to {eb}-byte elements",
            r.dram_base.wrapping_add(r.offset)
        ));
    }
    if r.rows > 1 && r.row_stride < (r.cols as u64).saturating_mul(eb) {
        out.push(format!("row_stride {} overlaps rows of {} bytes", r.row_stride, r.cols as u64 * eb));
    }
    if r.rows > 1 && r.row_stride % eb != 0 {
        out.push(format!("row_stride {} not aligned to {eb}-byte elements", r.row_stride));
    }
}

/// Checks every instruction against `cfg` and lints the token balance.
/// Never fails; an empty report means the program is well formed.
pub fn validate(p: &Program, cfg: &HwConfig) -> ValidationReport {
    let mut violations = Vec::new();
    let mut signals = [0usize; 4];
    let mut waits = [0usize; 4];
    for stage in Stage::ALL {
        for (i, ins) in p.stream(stage).iter().enumerate() {
            let mut msgs = Vec::new();
            if !ins.legal_in(stage) {
                msgs.push(format!("{} is not legal in the {stage} stage", ins.opcode()));
            } else {
                match ins {
                    Instruction::Wait(q) => waits[q.index()] += 1,
                    Instruction::Signal(q) => signals[q.index()] += 1,
                    Instruction::RunFetch(r) => check_fetch(r, cfg, &mut msgs),
                    Instruction::RunExecute(r) => check_execute(r, cfg, &mut msgs),
                    Instruction::RunResult(r) => check_result(r, cfg, &mut msgs),
                }
            }
            violations.extend(msgs.into_iter().map(|message| Violation {
                stage,
                index: Some(i),
                message,
            }));
        }
    }
    for q in TokenQueueId::ALL {
        if waits[q.index()] > signals[q.index()] {
            violations.push(Violation {
                stage: q.consumer(),
                index: None,
                message: format!(
                    "{} waits on {} but only {} signals: guaranteed deadlock",
                    waits[q.index()],
                    q.name(),
                    signals[q.index()]
                ),
            });
        }
    }
    ValidationReport { violations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use TokenQueueId::*;

    fn exec(num_reads: usize) -> Instruction {
        Instruction::RunExecute(ExecuteRun {
            lhs_offset: 0,
            rhs_offset: 0,
            num_reads,
            shift: 0,
            negate: false,
            acc_reset: true,
        })
    }

    #[test]
    fn empty_program_has_three_sections() {
        let text = Program::default().serialize();
        assert_eq!(text, "[fetch]\n[execute]\n[result]\n");
        assert_eq!(parse(&text).unwrap(), Program::default());
    }

    #[test]
    fn unknown_opcode() {
        let err = parse("fetch JUMP to=0").unwrap_err();
        assert_eq!(err.line, 1);
        assert!(err.message.contains("JUMP"));
    }

    #[test]
    fn malformed_field_reports_line_and_field() {
        let text = "[execute]\nexecute WAIT queue=fetch_to_execute\nexecute RUNEXECUTE lhs_offset=0 rhs_offset=x num_reads=1 shift=0 negate=0 acc_reset=1\n";
        let err = parse(text).unwrap_err();
        assert_eq!(err.line, 3);
        assert_eq!(err.field.as_deref(), Some("rhs_offset"));
        let err = parse("result RUNRESULT dram_base=10 offset=0x0 row_stride=8 rows=1 cols=1").unwrap_err();
        assert_eq!(err.field.as_deref(), Some("dram_base"));
        let err = parse("[fetch]\nexecute WAIT queue=fetch_to_execute").unwrap_err();
        assert_eq!(err.line, 2);
        let err = parse("fetch SIGNAL queue=fetch_to_execute extra=1").unwrap_err();
        assert_eq!(err.field.as_deref(), Some("extra"));
    }

    #[test]
    fn stage_legality() {
        let cfg = HwConfig::with_dims(2, 64, 2);
        let mut p = Program::default();
        p.fetch.push(Instruction::Wait(ExecuteToResult));
        let rep = validate(&p, &cfg);
        assert_eq!(rep.violations.len(), 1);
        assert_eq!(rep.violations[0].index, Some(0));
        assert!(Instruction::Wait(ExecuteToFetch).legal_in(Stage::Fetch));
        assert!(!Instruction::Signal(ExecuteToFetch).legal_in(Stage::Fetch));
        assert!(Instruction::Wait(ResultToExecute).legal_in(Stage::Execute));
        assert!(Instruction::Signal(ResultToExecute).legal_in(Stage::Result));
        assert!(!exec(1).legal_in(Stage::Result));
    }

    #[test]
    fn execute_bounds() {
        let mut cfg = HwConfig::with_dims(2, 64, 2);
        cfg.bm = 4;
        let p = Program {
            execute: vec![exec(5)],
            ..Default::default()
        };
        assert_eq!(validate(&p, &cfg).violations.len(), 1);
        let p = Program {
            execute: vec![exec(4)],
            ..Default::default()
        };
        assert!(validate(&p, &cfg).is_empty());
    }

    #[test]
    fn fetch_extents() {
        let r = FetchRun {
            dram_base: 0,
            block_size: 16,
            block_offset: 16,
            num_blocks: 5,
            buf_offset: 3,
            buf_start: 1,
            buf_range: 3,
            words_per_buffer: 2,
        };
        // 10 words of 8 bytes in groups of 2 over buffers 1,2,3
        assert_eq!(r.destination(0), (1, 3));
        assert_eq!(r.destination(3), (2, 4));
        assert_eq!(r.destination(6), (1, 5));
        assert_eq!(r.destination(9), (2, 6));
        assert_eq!(r.write_extents(8), vec![(1, 3, 7), (2, 3, 7), (3, 3, 5)]);
        let mut cfg = HwConfig::with_dims(2, 64, 2);
        cfg.bm = 8;
        cfg.bn = 6;
        let p = Program {
            fetch: vec![Instruction::RunFetch(r)],
            ..Default::default()
        };
        let rep = validate(&p, &cfg);
        assert_eq!(rep.violations.len(), 1, "{rep:?}");
        assert!(rep.violations[0].message.contains("buffer 2"));
    }

    #[test]
    fn token_balance_lint() {
        let cfg = HwConfig::with_dims(2, 64, 2);
        let p = Program {
            execute: vec![Instruction::Wait(FetchToExecute), Instruction::Wait(FetchToExecute)],
            fetch: vec![Instruction::Signal(FetchToExecute)],
            ..Default::default()
        };
        let rep = validate(&p, &cfg);
        assert_eq!(rep.violations.len(), 1);
        assert_eq!(rep.violations[0].index, None);
    }

    #[test]
    fn bursts_merge_contiguous_blocks() {
        let mut r = FetchRun {
            dram_base: 64,
            block_size: 32,
            block_offset: 32,
            num_blocks: 4,
            buf_offset: 0,
            buf_start: 0,
            buf_range: 4,
            words_per_buffer: 4,
        };
        assert_eq!(r.bursts(), vec![(64, 128)]);
        r.block_offset = 128;
        assert_eq!(r.bursts().len(), 4);
        let res = ResultRun {
            dram_base: 0,
            offset: 16,
            row_stride: 64,
            rows: 3,
            cols: 4,
        };
        assert_eq!(res.bursts(4), vec![(16, 16), (80, 16), (144, 16)]);
    }

    pub(crate) fn arb_instruction() -> impl Strategy<Value = Instruction> {
        let queue = prop::sample::select(TokenQueueId::ALL.to_vec());
        prop_oneof![
            queue.clone().prop_map(Instruction::Wait),
            queue.prop_map(Instruction::Signal),
            (any::<u64>(), any::<u64>(), any::<u64>(), any::<u64>(), 0..1usize << 20, 0..64usize, 1..64usize, 1..4096usize)
                .prop_map(|(a, b, c, d, e, f, g, h)| Instruction::RunFetch(FetchRun {
                    dram_base: a,
                    block_size: b,
                    block_offset: c,
                    num_blocks: d,
                    buf_offset: e,
                    buf_start: f,
                    buf_range: g,
                    words_per_buffer: h,
                })),
            (0..1usize << 20, 0..1usize << 20, 0..1usize << 20, 0..64u32, any::<bool>(), any::<bool>())
                .prop_map(|(a, b, c, d, e, f)| Instruction::RunExecute(ExecuteRun {
                    lhs_offset: a,
                    rhs_offset: b,
                    num_reads: c,
                    shift: d,
                    negate: e,
                    acc_reset: f,
                })),
            (any::<u64>(), any::<u64>(), any::<u64>(), 0..64usize, 0..64usize).prop_map(|(a, b, c, d, e)| {
                Instruction::RunResult(ResultRun {
                    dram_base: a,
                    offset: b,
                    row_stride: c,
                    rows: d,
                    cols: e,
                })
            }),
        ]
    }

    pub(crate) fn arb_program() -> impl Strategy<Value = Program> {
        let stream = || proptest::collection::vec(arb_instruction(), 0..12);
        (stream(), stream(), stream()).prop_map(|(f, e, r)| {
            let keep = |s: Stage, v: Vec<Instruction>| v.into_iter().filter(|i| i.legal_in(s)).collect();
            Program {
                fetch: keep(Stage::Fetch, f),
                execute: keep(Stage::Execute, e),
                result: keep(Stage::Result, r),
            }
        })
    }

    proptest! {
        #[test]
        fn text_roundtrip(p in arb_program()) {
            prop_assert_eq!(parse(&serialize(&p)).unwrap(), p);
        }
    }
}

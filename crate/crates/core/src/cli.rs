//! The `bitserial` command-line front end.
//!
//! Every subcommand writes machine-readable output (JSON or CSV) to stdout.
//! Exit status is 0 on success, 1 on any error and 3 when a simulated or
//! reference result disagrees with the integer oracle.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bitplane::IntMatrix;
use crate::costmodel::{self, Budget, CostConstants, DseRanges};
use crate::gemm::{count_binary_ops, matmul_bitserial, matmul_oracle, matmul_plane_pairs, ResultMatrix};
use crate::hwmodel::{validate_config, HwConfig};
use crate::isa::Program;
use crate::scheduler::{precision_skip, MatMulDescriptor, MemoryImage, PlaneSet, ScheduleMode};
use crate::simulator::{efficiency_sweep, multibit_sweep, simulate, MainMemory, SimStats};

pub const EXIT_ERROR: i32 = 1;
pub const EXIT_MISMATCH: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "bitserial", version, about = "Bit-serial matrix multiplication overlay toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Multiply two matrices with the bit-serial reference and check the oracle.
    Gemm(GemmArgs),
    /// Write a random matrix file.
    Gen(GenArgs),
    /// Compile a matmul into a program and a memory manifest.
    Compile(CompileArgs),
    /// Run a program on the cycle-level simulator and report statistics.
    Simulate(SimulateArgs),
    /// LUT / BRAM / GOPS estimate of a hardware config, as JSON.
    Estimate(EstimateArgs),
    /// Enumerate array shapes within a resource budget, as CSV.
    Dse(DseArgs),
    /// Parameter sweeps, as CSV.
    #[command(subcommand)]
    Sweep(SweepKind),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Hardware config file (`key = value` lines).
    #[arg(long)]
    pub cfg: Option<PathBuf>,
    /// Use runtime instance 1..=6 instead of a config file.
    #[arg(long, conflicts_with = "cfg")]
    pub instance: Option<usize>,
}

impl ConfigArgs {
    fn load(&self, default_instance: usize) -> Result<HwConfig, CliError> {
        let cfg = match (&self.cfg, self.instance) {
            (Some(p), _) => HwConfig::parse(&read_text(p)?).map_err(|e| CliError::msg(format!("{}: {e}", p.display())))?,
            (None, n) => {
                let n = n.unwrap_or(default_instance);
                HwConfig::instance(n).ok_or_else(|| CliError::msg(format!("no instance #{n}; choose 1..=6")))?
            }
        };
        let rep = validate_config(&cfg);
        if !rep.is_valid() {
            return Err(CliError::msg(format!("invalid config: {}", rep.errors.join("; "))));
        }
        for w in &rep.warnings {
            eprintln!("warning: {w}");
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct OperandArgs {
    /// LHS bitwidth.
    #[arg(long, default_value_t = 2)]
    pub lbits: u32,
    /// RHS bitwidth.
    #[arg(long, default_value_t = 2)]
    pub rbits: u32,
    #[arg(long)]
    pub lsigned: bool,
    #[arg(long)]
    pub rsigned: bool,
}

#[derive(Debug, Args)]
pub struct GemmArgs {
    /// LHS matrix: a matrix file, or text rows of integers.
    pub lhs: PathBuf,
    /// RHS matrix: a matrix file, or text rows of integers.
    pub rhs: PathBuf,
    #[command(flatten)]
    pub operands: OperandArgs,
    /// Write the result as text rows.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub rows: usize,
    #[arg(long)]
    pub cols: usize,
    #[arg(long, default_value_t = 2)]
    pub bits: u32,
    #[arg(long)]
    pub signed: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompileArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub operands: OperandArgs,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Take the LHS from a file instead of generating it.
    #[arg(long)]
    pub lhs: Option<PathBuf>,
    #[arg(long)]
    pub rhs: Option<PathBuf>,
    /// Seed for generated operands.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Overlap fetch, execute and result (default: sequential).
    #[arg(long)]
    pub overlap: bool,
    /// Compute only these plane pairs, e.g. `1:1,0:1`.
    #[arg(long)]
    pub planes: Option<String>,
    /// Output prefix; writes `<out>.prog` and `<out>.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Program text file.
    pub program: PathBuf,
    /// Memory manifest written by `compile`; without it memory starts empty.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Hardware config (defaults to the manifest's, else instance 1).
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Cost constants file.
    #[arg(long)]
    pub constants: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DseArgs {
    /// Template for everything but the array shape.
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub constants: Option<PathBuf>,
    #[arg(long, default_value_t = costmodel::Z7020_LUTS)]
    pub lut: f64,
    #[arg(long, default_value_t = costmodel::Z7020_BRAMS)]
    pub bram: f64,
    /// Main-memory bandwidth budget in GB/s.
    #[arg(long, default_value_t = f64::INFINITY)]
    pub bandwidth: f64,
    #[arg(long, value_delimiter = ',')]
    pub dm: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub dk: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub dn: Option<Vec<usize>>,
}

#[derive(Debug, Subcommand)]
pub enum SweepKind {
    /// Execute-stage efficiency against k: instance,Dm,Dk,Dn,k,cycles,efficiency
    Efficiency {
        #[arg(long, value_delimiter = ',', default_values_t = vec![1, 2, 3])]
        instances: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![128, 256, 512, 1024, 2048, 4096, 8192, 16384, 32768, 65536])]
        k: Vec<usize>,
    },
    /// Runtime against operand precision: k,w,a,bit_product,cycles,projected,oracle_match
    Multibit {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_values_t = vec![2048, 16384])]
        k: Vec<usize>,
        #[arg(long, default_value_t = 8)]
        m: usize,
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long, default_value_t = 4)]
        max_bits: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Array shapes under the default device budget (same columns as `dse`).
    Dse(DseArgs),
}

#[derive(Debug)]
pub struct CliError(pub String);

impl CliError {
    fn msg(s: impl Into<String>) -> Self {
        Self(s.into())
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CliError {}

macro_rules! from_display {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                Self(e.to_string())
            }
        }
    )*};
}

from_display!(
    std::io::Error,
    serde_json::Error,
    crate::bitplane::BitplaneError,
    crate::bitplane::MatrixFileError,
    crate::gemm::GemmError,
    crate::isa::ParseError,
    crate::scheduler::ScheduleError,
    crate::simulator::SimError,
    crate::simulator::SweepError,
    crate::costmodel::DseError,
    crate::costmodel::ConstantsParseError
);

fn read_text(p: &Path) -> Result<String, CliError> {
    fs::read_to_string(p).map_err(|e| CliError::msg(format!("{}: {e}", p.display())))
}

fn write_file(p: &Path, data: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(p, data).map_err(|e| CliError::msg(format!("{}: {e}", p.display())))
}

/// Parses whitespace- or comma-separated integer rows; `#` starts a comment.
pub fn parse_text_matrix(text: &str, bits: u32, signed: bool) -> Result<IntMatrix, CliError> {
    let mut rows: Vec<Vec<i64>> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("");
        let row = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<i64>()
                    .map_err(|_| CliError::msg(format!("line {}: {t:?} is not an integer", i + 1)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if !row.is_empty() {
            rows.push(row);
        }
    }
    if let Some(r) = rows.iter().position(|r| r.len() != rows[0].len()) {
        return Err(CliError::msg(format!(
            "row {} has {} elements, expected {}",
            r + 1,
            rows[r].len(),
            rows[0].len()
        )));
    }
    Ok(IntMatrix::from_rows(&rows, bits, signed)?)
}

/// Reads a matrix file, or a text matrix interpreted with `bits`/`signed`.
pub fn load_matrix(p: &Path, bits: u32, signed: bool) -> Result<IntMatrix, CliError> {
    let bytes = fs::read(p).map_err(|e| CliError::msg(format!("{}: {e}", p.display())))?;
    if bytes.starts_with(crate::bitplane::MATRIX_MAGIC) {
        IntMatrix::read_from(bytes.as_slice()).map_err(|e| CliError::msg(format!("{}: {e}", p.display())))
    } else {
        let text = String::from_utf8(bytes).map_err(|_| CliError::msg(format!("{}: not a matrix file", p.display())))?;
        parse_text_matrix(&text, bits, signed).map_err(|e| CliError::msg(format!("{}: {e}", p.display())))
    }
}

fn result_text(r: &ResultMatrix) -> String {
    r.to_rows()
        .iter()
        .map(|row| row.iter().map(i64::to_string).collect::<Vec<_>>().join(" ") + "\n")
        .collect()
}

/// `i:j` pairs separated by commas; an empty string is the empty set.
pub fn parse_planes(s: &str) -> Result<PlaneSet, CliError> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            let (i, j) = t
                .split_once(':')
                .ok_or_else(|| CliError::msg(format!("plane pair {t:?} is not of the form i:j")))?;
            let p = |v: &str| v.trim().parse::<u32>().map_err(|_| CliError::msg(format!("bad plane index in {t:?}")));
            Ok((p(i)?, p(j)?))
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GemmReport {
    pub rows: usize,
    pub cols: usize,
    pub result: Vec<Vec<i64>>,
    pub binary_ops: u64,
    pub oracle_match: bool,
}

/// Everything `simulate` needs besides the program.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config: HwConfig,
    pub mode: ScheduleMode,
    /// Plane pairs computed; `None` means all of them.
    pub planes: Option<Vec<(u32, u32)>>,
    pub image: MemoryImage,
    pub lhs: IntMatrix,
    pub rhs: IntMatrix,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub workload: Option<MatMulDescriptor>,
    pub config: HwConfig,
    pub stats: SimStats,
    /// `None` when no manifest was given.
    pub oracle_match: Option<bool>,
    pub wall_clock_ms: f64,
}

fn revalidate(m: &IntMatrix) -> Result<IntMatrix, CliError> {
    Ok(IntMatrix::new(m.rows(), m.cols(), m.bits(), m.signed(), m.elems().to_vec())?)
}

fn cost_constants(p: &Option<PathBuf>) -> Result<CostConstants, CliError> {
    match p {
        Some(p) => CostConstants::parse(&read_text(p)?).map_err(|e| CliError::msg(format!("{}: {e}", p.display()))),
        None => Ok(CostConstants::default()),
    }
}

fn run_dse(a: &DseArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let template = a.config.load(1)?;
    let defaults = DseRanges::default();
    let ranges = DseRanges {
        dm: a.dm.clone().unwrap_or(defaults.dm),
        dk: a.dk.clone().unwrap_or(defaults.dk),
        dn: a.dn.clone().unwrap_or(defaults.dn),
    };
    let budget = Budget {
        lut: a.lut,
        bram: a.bram,
        bandwidth_gbps: a.bandwidth,
    };
    let rows = costmodel::dse_enumerate(&budget, &ranges, &template, &cost_constants(&a.constants)?)?;
    out.write_all(costmodel::dse_csv(&rows).as_bytes())?;
    Ok(0)
}

/// Runs one parsed command, writing its report to `out`. Returns the exit
/// status on completion.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<i32, CliError> {
    match cli.command {
        Command::Gemm(a) => {
            let o = &a.operands;
            let lhs = load_matrix(&a.lhs, o.lbits, o.lsigned)?;
            let rhs = load_matrix(&a.rhs, o.rbits, o.rsigned)?;
            let got = matmul_bitserial(&lhs, &rhs)?;
            let ok = got == matmul_oracle(&lhs, &rhs)?;
            if let Some(p) = &a.out {
                write_file(p, result_text(&got))?;
            }
            let ops = count_binary_ops(
                lhs.rows() as u64,
                lhs.cols() as u64,
                rhs.cols() as u64,
                lhs.bits() as u64,
                rhs.bits() as u64,
            );
            let report = GemmReport {
                rows: got.rows,
                cols: got.cols,
                result: got.to_rows(),
                binary_ops: ops.binary_ops,
                oracle_match: ok,
            };
            writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
            Ok(if ok { 0 } else { EXIT_MISMATCH })
        }
        Command::Gen(a) => {
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            let m = IntMatrix::random(&mut rng, a.rows, a.cols, a.bits, a.signed)?;
            write_file(&a.out, m.to_bytes())?;
            Ok(0)
        }
        Command::Compile(a) => {
            let cfg = a.config.load(1)?;
            let o = &a.operands;
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            let need = |v: Option<usize>, name: &str| v.ok_or_else(|| CliError::msg(format!("--{name} is required without an operand file")));
            let lhs = match &a.lhs {
                Some(p) => load_matrix(p, o.lbits, o.lsigned)?,
                None => IntMatrix::random(&mut rng, need(a.m, "m")?, need(a.k, "k")?, o.lbits, o.lsigned)?,
            };
            let rhs = match &a.rhs {
                Some(p) => load_matrix(p, o.rbits, o.rsigned)?,
                None => IntMatrix::random(&mut rng, lhs.cols(), need(a.n, "n")?, o.rbits, o.rsigned)?,
            };
            let desc = MatMulDescriptor::for_operands(&lhs, &rhs)?;
            let planes = a.planes.as_deref().map(parse_planes).transpose()?;
            let mode = if a.overlap { ScheduleMode::Overlapped } else { ScheduleMode::Sequential };
            let active = planes.clone().unwrap_or_else(|| desc.all_planes());
            let compiled = precision_skip(&desc, &cfg, &active, mode)?;
            let prefix = a.out.display().to_string();
            let manifest = Manifest {
                config: cfg,
                mode,
                planes: planes.map(|p| p.into_iter().collect()),
                image: compiled.image,
                lhs,
                rhs,
            };
            write_file(Path::new(&format!("{prefix}.prog")), compiled.program.serialize())?;
            write_file(Path::new(&format!("{prefix}.json")), serde_json::to_string_pretty(&manifest)?)?;
            writeln!(
                out,
                "{}",
                serde_json::json!({
                    "program": format!("{prefix}.prog"),
                    "manifest": format!("{prefix}.json"),
                    "instructions": compiled.program.len(),
                    "tiles": compiled.plan.order.len(),
                    "chunks": compiled.plan.num_chunks,
                    "memory_bytes": manifest.image.total_bytes,
                })
            )?;
            Ok(0)
        }
        Command::Simulate(a) => {
            let program = Program::parse(&read_text(&a.program)?)
                .map_err(|e| CliError::msg(format!("{}: {e}", a.program.display())))?;
            let manifest: Option<Manifest> = match &a.manifest {
                Some(p) => Some(serde_json::from_str(&read_text(p)?).map_err(|e| CliError::msg(format!("{}: {e}", p.display())))?),
                None => None,
            };
            let cfg = match (&manifest, a.config.cfg.is_some() || a.config.instance.is_some()) {
                (Some(m), false) => m.config.clone(),
                _ => a.config.load(1)?,
            };
            let (mem, expect) = match &manifest {
                Some(m) => {
                    let (lhs, rhs) = (revalidate(&m.lhs)?, revalidate(&m.rhs)?);
                    let want = match &m.planes {
                        Some(p) => {
                            let set: PlaneSet = p.iter().copied().collect();
                            matmul_plane_pairs(&lhs, &rhs, |i, j| set.contains(&(i as u32, j as u32)))?
                        }
                        None => matmul_oracle(&lhs, &rhs)?,
                    };
                    (m.image.build_memory(&lhs, &rhs)?, Some((&m.image, want)))
                }
                None => (MainMemory::new(0), None),
            };
            let start = Instant::now();
            let (stats, mem) =
                simulate(&cfg, &program, mem).map_err(|e| CliError::msg(format!("simulation failed: {e}")))?;
            let wall = start.elapsed().as_secs_f64() * 1e3;
            let oracle_match = match expect {
                Some((image, want)) => Some(image.read_result(&mem)? == want),
                None => None,
            };
            let report = RunReport {
                workload: manifest.as_ref().map(|m| m.image.desc),
                config: cfg,
                stats,
                oracle_match,
                wall_clock_ms: wall,
            };
            writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
            Ok(if oracle_match == Some(false) { EXIT_MISMATCH } else { 0 })
        }
        Command::Estimate(a) => {
            let cfg = a.config.load(1)?;
            let e = costmodel::estimate(&cfg, &cost_constants(&a.constants)?);
            writeln!(out, "{}", serde_json::to_string_pretty(&e)?)?;
            Ok(0)
        }
        Command::Dse(a) => run_dse(&a, out),
        Command::Sweep(SweepKind::Dse(a)) => run_dse(&a, out),
        Command::Sweep(SweepKind::Efficiency { instances, k }) => {
            writeln!(out, "instance,Dm,Dk,Dn,k,cycles,efficiency")?;
            for i in instances {
                let cfg = HwConfig::instance(i).ok_or_else(|| CliError::msg(format!("no instance #{i}")))?;
                for p in efficiency_sweep(&cfg, cfg.dm, cfg.dn, &k, (1, 1))? {
                    writeln!(out, "{i},{},{},{},{},{},{:.6}", cfg.dm, cfg.dk, cfg.dn, p.k, p.cycles, p.efficiency)?;
                }
            }
            Ok(0)
        }
        Command::Sweep(SweepKind::Multibit { config, k, m, n, max_bits, seed }) => {
            let cfg = config.load(2)?;
            let pairs: Vec<(u32, u32)> = (1..=max_bits).flat_map(|w| (1..=max_bits).map(move |a| (w, a))).collect();
            writeln!(out, "k,w,a,bit_product,cycles,projected,oracle_match")?;
            let mut all_ok = true;
            for kk in k {
                for p in multibit_sweep(&cfg, m, n, kk, &pairs, seed)? {
                    all_ok &= p.oracle_match;
                    writeln!(out, "{kk},{},{},{},{},{},{}", p.lbits, p.rbits, p.bit_product, p.cycles, p.projected, p.oracle_match)?;
                }
            }
            Ok(if all_ok { 0 } else { EXIT_MISMATCH })
        }
    }
}

/// Parses `args` and runs the command, printing errors to stderr.
pub fn main_with<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli, out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

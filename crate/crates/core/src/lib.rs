//! Bit-serial integer matrix multiplication on a configurable FPGA overlay.
//!
//! - [`bitplane`]: integer matrices and their binary bit-plane decomposition
//! - [`gemm`]: bit-serial reference GEMM and the integer oracle
//! - [`isa`]: the three-stage instruction set and its text format
//! - [`hwmodel`]: overlay configuration, DPU arithmetic, matrix buffers
//! - [`simulator`]: cycle-level simulation of fetch, execute and result
//! - [`scheduler`]: memory layout and instruction scheduling for a matmul
//! - [`costmodel`]: LUT / BRAM estimates and design-space exploration
//! - [`cli`]: the `bitserial` command-line front end

pub mod bitplane;
pub mod cli;
pub mod costmodel;
pub mod gemm;
pub mod hwmodel;
pub mod isa;
pub mod scheduler;
pub mod simulator;

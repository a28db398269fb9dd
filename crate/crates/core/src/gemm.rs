//! Reference bit-serial GEMM, a plain integer oracle, and binary-op counting.
//!
//! The bit-serial path computes `L * R` as a weighted sum of binary matrix
//! products between bit planes. Each binary product is an AND followed by a
//! popcount over packed rows of `L^[i]` and packed rows of `R^[j]` transposed.
//! Accumulation is exact 64-bit arithmetic; accumulator wraparound at the
//! hardware width is modelled only in [`crate::hwmodel`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bitplane::{decompose, plane_sign, IntMatrix};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GemmError {
    #[error("inner dimensions differ: lhs is {lhs_rows}x{lhs_cols}, rhs is {rhs_rows}x{rhs_cols}")]
    DimensionMismatch {
        lhs_rows: usize,
        lhs_cols: usize,
        rhs_rows: usize,
        rhs_cols: usize,
    },
    #[error("word sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultMatrix {
    pub rows: usize,
    pub cols: usize,
    pub elems: Vec<i64>,
}

impl ResultMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            elems: vec![0; rows * cols],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> i64 {
        self.elems[row * self.cols + col]
    }

    pub fn to_rows(&self) -> Vec<Vec<i64>> {
        self.elems.chunks(self.cols.max(1)).map(<[i64]>::to_vec).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCount {
    pub binary_ops: u64,
}

fn check_dims(a: &IntMatrix, b: &IntMatrix) -> Result<(), GemmError> {
    if a.cols() != b.rows() {
        return Err(GemmError::DimensionMismatch {
            lhs_rows: a.rows(),
            lhs_cols: a.cols(),
            rhs_rows: b.rows(),
            rhs_cols: b.cols(),
        });
    }
    Ok(())
}

/// Textbook integer matmul in 64-bit arithmetic.
pub fn matmul_oracle(a: &IntMatrix, b: &IntMatrix) -> Result<ResultMatrix, GemmError> {
    check_dims(a, b)?;
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = ResultMatrix::zeros(m, n);
    for r in 0..m {
        for c in 0..n {
            out.elems[r * n + c] = (0..k).map(|d| a.get(r, d) * b.get(d, c)).sum();
        }
    }
    Ok(out)
}

/// `sum_i popcount(a_i & b_i)`.
pub fn binary_dot(a: &[u64], b: &[u64]) -> Result<u64, GemmError> {
    if a.len() != b.len() {
        return Err(GemmError::LengthMismatch(a.len(), b.len()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x & y).count_ones() as u64).sum())
}

/// Bit-serial matmul: `sum_{i,j} sgnL(i) * sgnR(j) * 2^(i+j) * (L^[i] . R^[j])`.
pub fn matmul_bitserial(lhs: &IntMatrix, rhs: &IntMatrix) -> Result<ResultMatrix, GemmError> {
    matmul_plane_pairs(lhs, rhs, |_, _| true)
}

/// The bit-serial sum restricted to the plane pairs `(i, j)` accepted by
/// `keep`.
pub fn matmul_plane_pairs(
    lhs: &IntMatrix,
    rhs: &IntMatrix,
    keep: impl Fn(usize, usize) -> bool,
) -> Result<ResultMatrix, GemmError> {
    check_dims(lhs, rhs)?;
    let (m, n) = (lhs.rows(), rhs.cols());
    let lp = decompose(lhs);
    // rows of the transposed rhs are the columns of R
    let rp = decompose(&rhs.transpose());
    let (l, r) = (lp.num_planes(), rp.num_planes());
    let mut out = ResultMatrix::zeros(m, n);
    for i in 0..l {
        for j in (0..r).filter(|&j| keep(i, j)) {
            let sgn_l = plane_sign(i, l, lhs.signed());
            let sgn_r = plane_sign(j, r, rhs.signed());
            let weight = sgn_l * sgn_r * (1i64 << (i + j));
            let (lpl, rpl) = (lp.plane(i), rp.plane(j));
            for row in 0..m {
                for col in 0..n {
                    let dot = binary_dot(lpl.row_words(row), rpl.row_words(col))?;
                    out.elems[row * n + col] += weight * dot as i64;
                }
            }
        }
    }
    Ok(out)
}

/// Binary operations for a dense `m x k x n` matmul at `l x r` bits, counting
/// an n-element binary dot product as `2n` operations.
pub fn count_binary_ops(m: u64, k: u64, n: u64, l: u64, r: u64) -> OpCount {
    OpCount {
        binary_ops: 2 * m * k * n * l * r,
    }
}

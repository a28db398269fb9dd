//! Integer matrices and their decomposition into weighted binary bit planes.
//!
//! An `l`-bit matrix is the weighted sum of `l` binary matrices, where plane
//! `i` carries weight `2^i`. For two's-complement inputs the most significant
//! plane carries weight `-2^(l-1)` instead. Planes are stored bit-packed in
//! 64-bit words, one padded run of words per row, so a row dot product is an
//! AND followed by a popcount.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest supported element bitwidth.
pub const MAX_BITS: u32 = 32;

/// Magic bytes at the start of a matrix file.
pub const MATRIX_MAGIC: &[u8; 4] = b"BISM";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BitplaneError {
    #[error("bitwidth {0} outside 1..={MAX_BITS}")]
    InvalidBitwidth(u32),
    #[error("expected {expected} elements for the declared shape, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("element {value} at ({row}, {col}) does not fit in {bits} {} bits", if *.signed { "signed" } else { "unsigned" })]
    OutOfRange {
        row: usize,
        col: usize,
        value: i64,
        bits: u32,
        signed: bool,
    },
}

#[derive(Debug, Error)]
pub enum MatrixFileError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic {0:?}, expected \"BISM\"")]
    BadMagic([u8; 4]),
    #[error("signed flag must be 0 or 1, got {0}")]
    BadSignedFlag(u32),
    #[error(transparent)]
    Invalid(#[from] BitplaneError),
}

/// Inclusive value range of a `bits`-wide integer.
pub fn value_range(bits: u32, signed: bool) -> (i64, i64) {
    if signed {
        (-(1i64 << (bits - 1)), (1i64 << (bits - 1)) - 1)
    } else {
        (0, (1i64 << bits) - 1)
    }
}

/// Dense row-major integer matrix with a declared bitwidth and signedness.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntMatrix {
    rows: usize,
    cols: usize,
    bits: u32,
    signed: bool,
    elems: Vec<i64>,
}

impl IntMatrix {
    pub fn new(
        rows: usize,
        cols: usize,
        bits: u32,
        signed: bool,
        elems: Vec<i64>,
    ) -> Result<Self, BitplaneError> {
        if bits == 0 || bits > MAX_BITS {
            return Err(BitplaneError::InvalidBitwidth(bits));
        }
        if elems.len() != rows * cols {
            return Err(BitplaneError::ShapeMismatch {
                expected: rows * cols,
                got: elems.len(),
            });
        }
        let (lo, hi) = value_range(bits, signed);
        if let Some(idx) = elems.iter().position(|v| *v < lo || *v > hi) {
            return Err(BitplaneError::OutOfRange {
                row: idx / cols.max(1),
                col: idx % cols.max(1),
                value: elems[idx],
                bits,
                signed,
            });
        }
        Ok(Self {
            rows,
            cols,
            bits,
            signed,
            elems,
        })
    }

    /// Builds a matrix from nested rows. All rows must have equal length.
    pub fn from_rows<R: AsRef<[i64]>>(
        rows: &[R],
        bits: u32,
        signed: bool,
    ) -> Result<Self, BitplaneError> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut elems = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(BitplaneError::ShapeMismatch {
                    expected: rows.len() * cols,
                    got: elems.len() + r.len(),
                });
            }
            elems.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, bits, signed, elems)
    }

    pub fn zeros(rows: usize, cols: usize, bits: u32, signed: bool) -> Result<Self, BitplaneError> {
        Self::new(rows, cols, bits, signed, vec![0; rows * cols])
    }

    /// Uniformly random matrix over the full value range.
    pub fn random<G: rand::Rng + ?Sized>(
        rng: &mut G,
        rows: usize,
        cols: usize,
        bits: u32,
        signed: bool,
    ) -> Result<Self, BitplaneError> {
        if bits == 0 || bits > MAX_BITS {
            return Err(BitplaneError::InvalidBitwidth(bits));
        }
        let (lo, hi) = value_range(bits, signed);
        let elems = (0..rows * cols).map(|_| rng.gen_range(lo..=hi)).collect();
        Self::new(rows, cols, bits, signed, elems)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn signed(&self) -> bool {
        self.signed
    }

    pub fn elems(&self) -> &[i64] {
        &self.elems
    }

    pub fn get(&self, row: usize, col: usize) -> i64 {
        self.elems[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[i64] {
        &self.elems[row * self.cols..(row + 1) * self.cols]
    }

    /// Largest absolute value representable at this bitwidth.
    pub fn max_magnitude(&self) -> i64 {
        let (lo, hi) = value_range(self.bits, self.signed);
        lo.abs().max(hi)
    }

    pub fn transpose(&self) -> IntMatrix {
        let mut elems = Vec::with_capacity(self.elems.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                elems.push(self.get(r, c));
            }
        }
        IntMatrix {
            rows: self.cols,
            cols: self.rows,
            bits: self.bits,
            signed: self.signed,
            elems,
        }
    }

    /// Writes the matrix in the little-endian `BISM` container format.
    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(MATRIX_MAGIC)?;
        for field in [self.rows as u32, self.cols as u32, self.bits, self.signed as u32] {
            w.write_all(&field.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.elems.len() * 8);
        for v in &self.elems {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, MatrixFileError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MATRIX_MAGIC {
            return Err(MatrixFileError::BadMagic(magic));
        }
        let mut header = [0u32; 4];
        for field in header.iter_mut() {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *field = u32::from_le_bytes(b);
        }
        let [rows, cols, bits, signed] = header;
        let signed = match signed {
            0 => false,
            1 => true,
            other => return Err(MatrixFileError::BadSignedFlag(other)),
        };
        let n = rows as usize * cols as usize;
        let mut raw = vec![0u8; n * 8];
        r.read_exact(&mut raw)?;
        let elems = raw
            .chunks_exact(8)
            .map(|c| i64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(Self::new(rows as usize, cols as usize, bits, signed, elems)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }
}

/// Standard transpose.
pub fn transpose(m: &IntMatrix) -> IntMatrix {
    m.transpose()
}

/// Bit-packed binary matrix. Each row occupies `words_per_row` 64-bit words;
/// bit `c` of a row lives in word `c / 64` at position `c % 64`. Bits past
/// `cols` are always zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitMatrix {
    rows: usize,
    cols: usize,
    words_per_row: usize,
    data: Vec<u64>,
}

impl BitMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        let words_per_row = cols.div_ceil(64);
        Self {
            rows,
            cols,
            words_per_row,
            data: vec![0; rows * words_per_row],
        }
    }

    /// Builds a binary matrix from 0/1 rows; any nonzero counts as a set bit.
    pub fn from_rows<R: AsRef<[u8]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut m = Self::zeros(rows.len(), cols);
        for (r, row) in rows.iter().enumerate() {
            for (c, &b) in row.as_ref().iter().enumerate() {
                m.set(r, c, b != 0);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn words_per_row(&self) -> usize {
        self.words_per_row
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        let w = self.data[row * self.words_per_row + col / 64];
        (w >> (col % 64)) & 1 == 1
    }

    pub fn set(&mut self, row: usize, col: usize, bit: bool) {
        let w = &mut self.data[row * self.words_per_row + col / 64];
        let mask = 1u64 << (col % 64);
        if bit {
            *w |= mask;
        } else {
            *w &= !mask;
        }
    }

    pub fn row_words(&self, row: usize) -> &[u64] {
        &self.data[row * self.words_per_row..(row + 1) * self.words_per_row]
    }

    /// Row bits as little-endian bytes (bit `c` at byte `c / 8`, bit `c % 8`),
    /// zero-extended or truncated to `len` bytes.
    pub fn row_bytes(&self, row: usize, len: usize) -> Vec<u8> {
        let mut out: Vec<u8> = self
            .row_words(row)
            .iter()
            .flat_map(|w| w.to_le_bytes())
            .collect();
        out.resize(len, 0);
        out
    }

    pub fn count_ones(&self) -> u64 {
        self.data.iter().map(|w| w.count_ones() as u64).sum()
    }
}

/// Weighted binary decomposition of an [`IntMatrix`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitPlaneTensor {
    rows: usize,
    cols: usize,
    signed: bool,
    planes: Vec<BitMatrix>,
}

impl BitPlaneTensor {
    pub fn from_planes(planes: Vec<BitMatrix>, signed: bool) -> Result<Self, BitplaneError> {
        let bits = planes.len() as u32;
        if bits == 0 || bits > MAX_BITS {
            return Err(BitplaneError::InvalidBitwidth(bits));
        }
        let (rows, cols) = (planes[0].rows(), planes[0].cols());
        if let Some(p) = planes.iter().find(|p| p.rows() != rows || p.cols() != cols) {
            return Err(BitplaneError::ShapeMismatch {
                expected: rows * cols,
                got: p.rows() * p.cols(),
            });
        }
        Ok(Self {
            rows,
            cols,
            signed,
            planes,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn signed(&self) -> bool {
        self.signed
    }

    pub fn num_planes(&self) -> usize {
        self.planes.len()
    }

    pub fn plane(&self, i: usize) -> &BitMatrix {
        &self.planes[i]
    }

    pub fn planes(&self) -> &[BitMatrix] {
        &self.planes
    }

    /// Sign of plane `i`: -1 for the MSB plane of a signed tensor, else +1.
    pub fn plane_sign(&self, i: usize) -> i64 {
        plane_sign(i, self.planes.len(), self.signed)
    }

    /// Signed weight of plane `i`.
    pub fn weight(&self, i: usize) -> i64 {
        self.plane_sign(i) << i
    }
}

pub(crate) fn plane_sign(i: usize, planes: usize, signed: bool) -> i64 {
    if signed && i + 1 == planes {
        -1
    } else {
        1
    }
}

/// Splits `m` into `m.bits()` binary planes of its two's-complement (or
/// unsigned) encoding.
pub fn decompose(m: &IntMatrix) -> BitPlaneTensor {
    let mut planes = vec![BitMatrix::zeros(m.rows, m.cols); m.bits as usize];
    for r in 0..m.rows {
        for c in 0..m.cols {
            let v = m.get(r, c) as u64;
            for (i, plane) in planes.iter_mut().enumerate() {
                if (v >> i) & 1 == 1 {
                    plane.set(r, c, true);
                }
            }
        }
    }
    BitPlaneTensor {
        rows: m.rows,
        cols: m.cols,
        signed: m.signed,
        planes,
    }
}

/// Inverse of [`decompose`].
pub fn reconstruct(t: &BitPlaneTensor) -> IntMatrix {
    let mut elems = vec![0i64; t.rows * t.cols];
    for (i, plane) in t.planes.iter().enumerate() {
        let w = t.weight(i);
        for r in 0..t.rows {
            for c in 0..t.cols {
                if plane.get(r, c) {
                    elems[r * t.cols + c] += w;
                }
            }
        }
    }
    IntMatrix {
        rows: t.rows,
        cols: t.cols,
        bits: t.planes.len() as u32,
        signed: t.signed,
        elems,
    }
}

/// A binary matrix re-packed into words of `word_bits` bits, the width of
/// one matrix-buffer entry. Each word is held as `limbs_per_word` 64-bit
/// limbs, least significant first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedBuffer {
    word_bits: usize,
    words_per_row: usize,
    limbs_per_word: usize,
    rows: usize,
    limbs: Vec<u64>,
}

impl PackedBuffer {
    pub fn word_bits(&self) -> usize {
        self.word_bits
    }

    pub fn words_per_row(&self) -> usize {
        self.words_per_row
    }

    pub fn limbs_per_word(&self) -> usize {
        self.limbs_per_word
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn num_words(&self) -> usize {
        self.rows * self.words_per_row
    }

    /// Word `index` in row-major word order.
    pub fn word(&self, index: usize) -> &[u64] {
        let l = self.limbs_per_word;
        &self.limbs[index * l..(index + 1) * l]
    }

    /// Words `[row * words_per_row, (row + 1) * words_per_row)` flattened.
    pub fn row(&self, row: usize) -> &[u64] {
        let n = self.words_per_row * self.limbs_per_word;
        &self.limbs[row * n..(row + 1) * n]
    }
}

/// Packs `plane` into `word_bits`-wide words, zero-padding each row to a
/// whole number of words.
pub fn pack_plane(plane: &BitMatrix, word_bits: usize) -> PackedBuffer {
    assert!(word_bits >= 1, "word_bits must be at least 1");
    let words_per_row = plane.cols().div_ceil(word_bits);
    let limbs_per_word = word_bits.div_ceil(64);
    let mut limbs = vec![0u64; plane.rows() * words_per_row * limbs_per_word];
    for r in 0..plane.rows() {
        for c in 0..plane.cols() {
            if plane.get(r, c) {
                let word = r * words_per_row + c / word_bits;
                let bit = c % word_bits;
                limbs[word * limbs_per_word + bit / 64] |= 1u64 << (bit % 64);
            }
        }
    }
    PackedBuffer {
        word_bits,
        words_per_row,
        limbs_per_word,
        rows: plane.rows(),
        limbs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn example_lhs() -> IntMatrix {
        IntMatrix::from_rows(&[[2, 0], [1, 3]], 2, false).unwrap()
    }

    #[test]
    fn decompose_example_lhshs() {
        let t = decompose(&example_lhs());
        assert_eq!(t.num_planes(), 2);
        assert_eq!(t.plane(1), &BitMatrix::from_rows(&[[1, 0], [0, 1]]));
        assert_eq!(t.plane(0), &BitMatrix::from_rows(&[[0, 0], [1, 1]]));
    }

    #[test]
    fn reconstruct_example_rhs_planes() {
        let planes = vec![
            BitMatrix::from_rows(&[[0, 1], [1, 0]]),
            BitMatrix::from_rows(&[[0, 0], [0, 1]]),
        ];
        let t = BitPlaneTensor::from_planes(planes, false).unwrap();
        let r = reconstruct(&t);
        assert_eq!(r.elems(), &[0, 1, 1, 2]);
    }

    #[test]
    fn zero_matrix_has_zero_planes() {
        for bits in [1, 3, 8, 32] {
            let t = decompose(&IntMatrix::zeros(3, 3, bits, true).unwrap());
            assert_eq!(t.num_planes(), bits as usize);
            assert!(t.planes().iter().all(|p| p.count_ones() == 0));
        }
    }

    #[test]
    fn signed_minus_two() {
        let m = IntMatrix::from_rows(&[[-2]], 2, true).unwrap();
        let t = decompose(&m);
        assert!(t.plane(1).get(0, 0));
        assert!(!t.plane(0).get(0, 0));
        assert_eq!(t.weight(1), -2);
        assert_eq!(t.weight(0), 1);
        assert_eq!(reconstruct(&t), m);
    }

    #[test]
    fn single_plane_unsigned_is_identity() {
        let plane = BitMatrix::from_rows(&[[1, 0, 1], [0, 1, 1]]);
        let t = BitPlaneTensor::from_planes(vec![plane], false).unwrap();
        assert_eq!(reconstruct(&t).elems(), &[1, 0, 1, 0, 1, 1]);
    }

    #[test]
    fn out_of_range_rejected() {
        let err = IntMatrix::from_rows(&[[0, 4]], 2, false).unwrap_err();
        assert!(matches!(err, BitplaneError::OutOfRange { col: 1, value: 4, .. }));
        assert!(IntMatrix::from_rows(&[[-3]], 2, true).is_err());
        assert!(IntMatrix::from_rows(&[[-1]], 2, false).is_err());
        assert!(IntMatrix::from_rows(&[[2]], 2, true).is_err());
        assert_eq!(
            IntMatrix::zeros(1, 1, 33, false).unwrap_err(),
            BitplaneError::InvalidBitwidth(33)
        );
        assert!(IntMatrix::new(2, 2, 4, false, vec![0; 3]).is_err());
    }

    #[test]
    fn full_32_bit_range() {
        let m = IntMatrix::from_rows(&[[i32::MIN as i64, i32::MAX as i64]], 32, true).unwrap();
        assert_eq!(reconstruct(&decompose(&m)), m);
        let u = IntMatrix::from_rows(&[[u32::MAX as i64, 0]], 32, false).unwrap();
        assert_eq!(reconstruct(&decompose(&u)), u);
    }

    #[test]
    fn transpose_cases() {
        let m = IntMatrix::from_rows(&[[1, 2], [3, 4]], 4, false).unwrap();
        assert_eq!(transpose(&m).elems(), &[1, 3, 2, 4]);
        let row = IntMatrix::from_rows(&[[1, 2, 3]], 4, false).unwrap();
        let col = transpose(&row);
        assert_eq!((col.rows(), col.cols()), (3, 1));
        assert_eq!(transpose(&col), row);
    }

    #[test]
    fn pack_direct_placement() {
        let p = pack_plane(&BitMatrix::from_rows(&[[1, 0, 1]]), 8);
        assert_eq!(p.num_words(), 1);
        assert_eq!(p.word(0), &[0b0000_0101]);
    }

    #[test]
    fn pack_all_ones_64() {
        let p = pack_plane(&BitMatrix::from_rows(&[[1u8; 64], [1u8; 64]]), 64);
        assert_eq!(p.num_words(), 2);
        assert_eq!(p.word(0), &[u64::MAX]);
        assert_eq!(p.word(1), &[u64::MAX]);
    }

    #[test]
    fn pack_seventy_bits_pads_with_zeros() {
        let bits: Vec<u8> = (0..70).map(|c| (c % 3 == 0) as u8).collect();
        let plane = BitMatrix::from_rows(&[bits.clone()]);
        let p = pack_plane(&plane, 64);
        assert_eq!(p.words_per_row(), 2);
        for (c, &b) in bits.iter().enumerate() {
            let w = p.word(c / 64)[0];
            assert_eq!((w >> (c % 64)) & 1, b as u64, "bit {c}");
        }
        // positions 6..64 of the second word are padding
        assert_eq!(p.word(1)[0] >> 6, 0);
    }

    #[test]
    fn pack_wide_words_use_multiple_limbs() {
        let mut plane = BitMatrix::zeros(1, 300);
        plane.set(0, 130, true);
        plane.set(0, 299, true);
        let p = pack_plane(&plane, 256);
        assert_eq!(p.limbs_per_word(), 4);
        assert_eq!(p.words_per_row(), 2);
        assert_eq!(p.word(0), &[0, 0, 1 << 2, 0]);
        assert_eq!(p.word(1), &[1 << 43, 0, 0, 0]);
    }

    #[test]
    fn row_bytes_are_little_endian_bits() {
        let mut plane = BitMatrix::zeros(1, 20);
        plane.set(0, 0, true);
        plane.set(0, 9, true);
        plane.set(0, 19, true);
        assert_eq!(plane.row_bytes(0, 4), vec![0x01, 0x02, 0x08, 0x00]);
    }

    #[test]
    fn exhaustive_roundtrip_small() {
        for bits in 1..=4u32 {
            for signed in [false, true] {
                let (lo, hi) = value_range(bits, signed);
                let vals: Vec<i64> = (lo..=hi).collect();
                for a in &vals {
                    for b in &vals {
                        for c in &vals {
                            for d in &vals {
                                let m = IntMatrix::new(2, 2, bits, signed, vec![*a, *b, *c, *d])
                                    .unwrap();
                                assert_eq!(reconstruct(&decompose(&m)), m);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn matrix_file_rejects_bad_magic() {
        let mut bytes = example_lhs().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(
            IntMatrix::read_from(&bytes[..]),
            Err(MatrixFileError::BadMagic(_))
        ));
        let mut bytes = example_lhs().to_bytes();
        bytes[16] = 7;
        assert!(matches!(
            IntMatrix::read_from(&bytes[..]),
            Err(MatrixFileError::BadSignedFlag(7))
        ));
    }

    #[test]
    fn matrix_file_layout() {
        let bytes = example_lhs().to_bytes();
        assert_eq!(&bytes[..4], b"BISM");
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &2u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &0u32.to_le_bytes());
        assert_eq!(bytes.len(), 20 + 4 * 8);
        assert_eq!(&bytes[20..28], &2i64.to_le_bytes());
    }

    fn arb_matrix(max_dim: usize, max_bits: u32) -> impl Strategy<Value = IntMatrix> {
        (1..=max_dim, 1..=max_dim, 1..=max_bits, any::<bool>()).prop_flat_map(
            |(rows, cols, bits, signed)| {
                let (lo, hi) = value_range(bits, signed);
                proptest::collection::vec(lo..=hi, rows * cols).prop_map(move |elems| {
                    IntMatrix::new(rows, cols, bits, signed, elems).unwrap()
                })
            },
        )
    }

    proptest! {
        #[test]
        fn roundtrip_random(m in arb_matrix(32, 8)) {
            let t = decompose(&m);
            prop_assert_eq!(t.num_planes(), m.bits() as usize);
            prop_assert_eq!(reconstruct(&t), m);
        }

        #[test]
        fn plane_bits_match_encoding(m in arb_matrix(8, 5)) {
            let t = decompose(&m);
            for r in 0..m.rows() {
                for c in 0..m.cols() {
                    let enc = m.get(r, c) as u64;
                    for i in 0..t.num_planes() {
                        prop_assert_eq!(t.plane(i).get(r, c), (enc >> i) & 1 == 1);
                    }
                }
            }
            for i in 0..t.num_planes() {
                let msb = i + 1 == t.num_planes();
                prop_assert_eq!(t.weight(i) < 0, msb && m.signed());
            }
        }

        #[test]
        fn padding_never_counted(m in arb_matrix(6, 1), word_bits in 1usize..200) {
            let plane = decompose(&m).plane(0).clone();
            let packed = pack_plane(&plane, word_bits);
            let ones = vec![u64::MAX; packed.limbs_per_word()];
            let counted: u64 = (0..packed.num_words())
                .map(|i| packed.word(i).iter().zip(&ones).map(|(a, b)| (a & b).count_ones() as u64).sum::<u64>())
                .sum();
            prop_assert_eq!(counted, plane.count_ones());
        }

        #[test]
        fn file_roundtrip(m in arb_matrix(12, 32)) {
            let back = IntMatrix::read_from(&m.to_bytes()[..]).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}

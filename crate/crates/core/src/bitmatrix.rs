//! Column-major binary matrices.
//!
//! Column `j` occupies `ceil(m/8)` contiguous bytes; row `r` lives at byte
//! `r / 8`, bit `r % 8` (LSB first). Unused high bits of the last byte in a
//! column are always zero, so two equal matrices have equal byte images.

use rand::{Rng, RngCore};

use crate::error::{Error, Result};

#[derive(Clone, PartialEq, Eq)]
pub struct BitMatrix {
    rows: usize,
    cols: usize,
    col_bytes: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for BitMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "BitMatrix({}x{})", self.rows, self.cols)
    }
}

/// Mask of the valid bits in the last byte of a column.
fn last_byte_mask(rows: usize) -> u8 {
    match rows % 8 {
        0 => 0xff,
        r => (1u8 << r) - 1,
    }
}

impl BitMatrix {
    fn check_dims(rows: usize, cols: usize) -> Result<()> {
        if rows == 0 || cols == 0 {
            return Err(Error::DimensionMismatch(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        Ok(())
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::filled(rows, cols, false)
    }

    pub fn filled(rows: usize, cols: usize, bit: bool) -> Result<Self> {
        Self::check_dims(rows, cols)?;
        let col_bytes = rows.div_ceil(8);
        let mut m = BitMatrix {
            rows,
            cols,
            col_bytes,
            data: vec![if bit { 0xff } else { 0 }; col_bytes * cols],
        };
        m.clear_padding();
        Ok(m)
    }

    pub fn random<R: RngCore + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Result<Self> {
        let mut m = Self::zeros(rows, cols)?;
        rng.fill_bytes(&mut m.data);
        m.clear_padding();
        Ok(m)
    }

    /// Decodes the wire image: `cols` columns of `ceil(rows/8)` bytes each.
    pub fn from_bytes(rows: usize, cols: usize, bytes: Vec<u8>) -> Result<Self> {
        Self::check_dims(rows, cols)?;
        let col_bytes = rows.div_ceil(8);
        if bytes.len() != col_bytes * cols {
            return Err(Error::DimensionMismatch(format!(
                "expected {} bytes for a {rows}x{cols} matrix, got {}",
                col_bytes * cols,
                bytes.len()
            )));
        }
        let m = BitMatrix {
            rows,
            cols,
            col_bytes,
            data: bytes,
        };
        if !m.is_canonical() {
            return Err(Error::protocol("matrix has nonzero padding bits"));
        }
        Ok(m)
    }

    /// Builds a matrix from column images; padding bits are cleared.
    pub fn from_columns(rows: usize, columns: &[Vec<u8>]) -> Result<Self> {
        let mut m = Self::zeros(rows, columns.len())?;
        for (j, col) in columns.iter().enumerate() {
            if col.len() != m.col_bytes {
                return Err(Error::DimensionMismatch(format!(
                    "column {j} has {} bytes, expected {}",
                    col.len(),
                    m.col_bytes
                )));
            }
            m.column_mut(j).copy_from_slice(col);
        }
        m.clear_padding();
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn column_bytes(&self) -> usize {
        self.col_bytes
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.data
    }

    pub fn column(&self, j: usize) -> &[u8] {
        &self.data[j * self.col_bytes..(j + 1) * self.col_bytes]
    }

    fn column_mut(&mut self, j: usize) -> &mut [u8] {
        &mut self.data[j * self.col_bytes..(j + 1) * self.col_bytes]
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        debug_assert!(row < self.rows && col < self.cols);
        (self.data[col * self.col_bytes + row / 8] >> (row % 8)) & 1 == 1
    }

    pub fn set(&mut self, row: usize, col: usize, bit: bool) {
        assert!(row < self.rows && col < self.cols, "({row}, {col}) out of range");
        let byte = &mut self.data[col * self.col_bytes + row / 8];
        let mask = 1u8 << (row % 8);
        if bit {
            *byte |= mask;
        } else {
            *byte &= !mask;
        }
    }

    /// Number of one bits in column `j`.
    pub fn column_weight(&self, j: usize) -> u32 {
        self.column(j).iter().map(|b| b.count_ones()).sum()
    }

    /// True when every padding bit is zero.
    pub fn is_canonical(&self) -> bool {
        let mask = last_byte_mask(self.rows);
        (0..self.cols).all(|j| self.data[(j + 1) * self.col_bytes - 1] & !mask == 0)
    }

    fn clear_padding(&mut self) {
        let mask = last_byte_mask(self.rows);
        if mask == 0xff {
            return;
        }
        for j in 0..self.cols {
            self.data[(j + 1) * self.col_bytes - 1] &= mask;
        }
    }

    fn same_shape(&self, other: &BitMatrix) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }

    fn check_choice(&self, s: &ChoiceString) -> Result<()> {
        if s.len() != self.cols {
            return Err(Error::DimensionMismatch(format!(
                "choice string has {} bits, matrix has {} columns",
                s.len(),
                self.cols
            )));
        }
        Ok(())
    }

    pub fn xor(&self, other: &BitMatrix) -> Result<BitMatrix> {
        let mut out = self.clone();
        out.xor_assign(other)?;
        Ok(out)
    }

    pub fn xor_assign(&mut self, other: &BitMatrix) -> Result<()> {
        self.same_shape(other)?;
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a ^= b);
        Ok(())
    }

    /// Column `j` of the result is `a_j` when `s[j] = 0` and `b_j` otherwise.
    pub fn mux(a: &BitMatrix, b: &BitMatrix, s: &ChoiceString) -> Result<BitMatrix> {
        a.same_shape(b)?;
        a.check_choice(s)?;
        let mut out = a.clone();
        for (j, bit) in s.iter().enumerate() {
            if bit {
                out.column_mut(j).copy_from_slice(b.column(j));
            }
        }
        Ok(out)
    }

    /// Column `j` is kept when `s[j] = 1` and zeroed otherwise.
    pub fn mask_columns(&self, s: &ChoiceString) -> Result<BitMatrix> {
        self.check_choice(s)?;
        let mut out = self.clone();
        for (j, bit) in s.iter().enumerate() {
            if !bit {
                out.column_mut(j).fill(0);
            }
        }
        Ok(out)
    }

    /// Selects row `v[j]` from each column `j`, packed LSB-first.
    pub fn gather(&self, v: &IndexVector) -> Result<Vec<u8>> {
        if v.len() != self.cols {
            return Err(Error::DimensionMismatch(format!(
                "index vector has {} entries, matrix has {} columns",
                v.len(),
                self.cols
            )));
        }
        let mut out = vec![0u8; self.cols.div_ceil(8)];
        for (j, &r) in v.as_slice().iter().enumerate() {
            let r = r as usize;
            if r >= self.rows {
                return Err(Error::IndexOutOfRange {
                    column: j,
                    index: r as u32,
                    rows: self.rows,
                });
            }
            let bit = (self.data[j * self.col_bytes + r / 8] >> (r % 8)) & 1;
            out[j / 8] |= bit << (j % 8);
        }
        Ok(out)
    }
}

/// The `w` OT choice bits of one receiving party.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChoiceString {
    bits: Vec<bool>,
}

impl ChoiceString {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        ChoiceString { bits }
    }

    pub fn zeros(w: usize) -> Self {
        ChoiceString { bits: vec![false; w] }
    }

    pub fn ones(w: usize) -> Self {
        ChoiceString { bits: vec![true; w] }
    }

    pub fn random<R: Rng + ?Sized>(w: usize, rng: &mut R) -> Self {
        ChoiceString {
            bits: (0..w).map(|_| rng.gen()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, j: usize) -> bool {
        self.bits[j]
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        self.bits.iter().copied()
    }
}

/// Per-element row selector `v`, one row index per column.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexVector {
    idx: Vec<u32>,
}

impl IndexVector {
    pub fn new(idx: Vec<u32>) -> Self {
        IndexVector { idx }
    }

    pub fn len(&self) -> usize {
        self.idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idx.is_empty()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.idx
    }
}

/// Hamming weight of a packed bit string.
pub fn weight(bits: &[u8]) -> u32 {
    bits.iter().map(|b| b.count_ones()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    #[test]
    fn filled_layout() {
        let m = BitMatrix::filled(8, 2, true).unwrap();
        assert_eq!(m.as_bytes(), &[0xff, 0xff]);
        let m = BitMatrix::filled(3, 1, true).unwrap();
        assert_eq!(m.as_bytes(), &[0x07]);
        assert!(BitMatrix::filled(0, 3, true).is_err());
        assert!(BitMatrix::filled(3, 0, true).is_err());
    }

    #[test]
    fn ones_xor_ones_is_zero() {
        let a = BitMatrix::filled(13, 5, true).unwrap();
        assert_eq!(a.xor(&a).unwrap(), BitMatrix::zeros(13, 5).unwrap());
    }

    #[test]
    fn random_is_seeded() {
        let a = BitMatrix::random(77, 9, &mut rng(1)).unwrap();
        let b = BitMatrix::random(77, 9, &mut rng(1)).unwrap();
        let c = BitMatrix::random(77, 9, &mut rng(2)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.is_canonical());
    }

    #[test]
    fn random_column_weight_statistics() {
        // Each column weight ~ Binomial(256, 1/2): mean 128, sd 8.
        let mut r = rng(7);
        let trials = 10_000;
        let total: u64 = (0..trials)
            .map(|_| BitMatrix::random(256, 1, &mut r).unwrap().column_weight(0) as u64)
            .sum();
        let mean = total as f64 / trials as f64;
        let se = 8.0 / (trials as f64).sqrt();
        assert!((mean - 128.0).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn xor_with_single_zero_per_column() {
        let (m, w) = (20, 6);
        let a = BitMatrix::random(m, w, &mut rng(3)).unwrap();
        let mut d = BitMatrix::filled(m, w, true).unwrap();
        let zero_rows = [0usize, 5, 19, 7, 7, 12];
        for (j, &r) in zero_rows.iter().enumerate() {
            d.set(r, j, false);
        }
        let x = a.xor(&d).unwrap();
        for j in 0..w {
            for r in 0..m {
                let same = x.get(r, j) == a.get(r, j);
                assert_eq!(same, r == zero_rows[j], "({r},{j})");
            }
        }
    }

    #[test]
    fn mux_extremes_and_reference() {
        let mut r = rng(4);
        let a = BitMatrix::random(33, 10, &mut r).unwrap();
        let b = BitMatrix::random(33, 10, &mut r).unwrap();
        assert_eq!(BitMatrix::mux(&a, &b, &ChoiceString::zeros(10)).unwrap(), a);
        assert_eq!(BitMatrix::mux(&a, &b, &ChoiceString::ones(10)).unwrap(), b);
        let s = ChoiceString::random(10, &mut r);
        let out = BitMatrix::mux(&a, &b, &s).unwrap();
        for j in 0..10 {
            for row in 0..33 {
                let want = if s.get(j) { b.get(row, j) } else { a.get(row, j) };
                assert_eq!(out.get(row, j), want);
            }
        }
        assert!(BitMatrix::mux(&a, &b, &ChoiceString::zeros(9)).is_err());
    }

    #[test]
    fn mask_extremes() {
        let d = BitMatrix::random(9, 4, &mut rng(5)).unwrap();
        assert_eq!(d.mask_columns(&ChoiceString::zeros(4)).unwrap(), BitMatrix::zeros(9, 4).unwrap());
        assert_eq!(d.mask_columns(&ChoiceString::ones(4)).unwrap(), d);
        assert!(d.mask_columns(&ChoiceString::ones(5)).is_err());
    }

    /// Every m, w <= 8, every choice string, a handful of (A, D) pairs.
    #[test]
    fn mux_mask_identity_exhaustive_small() {
        let mut r = rng(6);
        for m in 1..=8 {
            for w in 1..=8 {
                for _ in 0..4 {
                    let a = BitMatrix::random(m, w, &mut r).unwrap();
                    let d = BitMatrix::random(m, w, &mut r).unwrap();
                    let ad = a.xor(&d).unwrap();
                    for pattern in 0u32..(1 << w) {
                        let s = ChoiceString::from_bits((0..w).map(|j| pattern >> j & 1 == 1).collect());
                        let lhs = BitMatrix::mux(&a, &ad, &s).unwrap();
                        let rhs = a.xor(&d.mask_columns(&s).unwrap()).unwrap();
                        assert_eq!(lhs, rhs);
                    }
                }
            }
        }
    }

    #[test]
    fn gather_basics() {
        let ones = BitMatrix::filled(10, 12, true).unwrap();
        let v = IndexVector::new((0..12).map(|j| (j * 3 % 10) as u32).collect());
        assert_eq!(ones.gather(&v).unwrap(), vec![0xff, 0x0f]);

        let mut single = BitMatrix::zeros(10, 12).unwrap();
        single.set(4, 7, true);
        let hit = IndexVector::new(vec![4; 12]);
        let miss = IndexVector::new(vec![5; 12]);
        let g = single.gather(&hit).unwrap();
        assert_eq!(weight(&g), 1);
        assert_eq!(g, vec![0x80, 0x00]);
        assert_eq!(weight(&single.gather(&miss).unwrap()), 0);

        assert!(matches!(
            single.gather(&IndexVector::new(vec![10; 12])),
            Err(Error::IndexOutOfRange { .. })
        ));
        assert!(single.gather(&IndexVector::new(vec![0; 11])).is_err());
    }

    #[test]
    fn from_bytes_rejects_dirty_padding() {
        assert!(BitMatrix::from_bytes(3, 1, vec![0x0f]).is_err());
        assert!(BitMatrix::from_bytes(3, 2, vec![0x07]).is_err());
        let m = BitMatrix::from_bytes(3, 2, vec![0x07, 0x01]).unwrap();
        assert!(m.get(0, 1) && !m.get(1, 1));
    }

    fn arb_matrix(m: usize, w: usize) -> impl Strategy<Value = BitMatrix> {
        any::<u64>().prop_map(move |seed| BitMatrix::random(m, w, &mut rng(seed)).unwrap())
    }

    fn arb_triple() -> impl Strategy<Value = (BitMatrix, BitMatrix, BitMatrix, ChoiceString)> {
        (1usize..200, 1usize..40).prop_flat_map(|(m, w)| {
            (
                arb_matrix(m, w),
                arb_matrix(m, w),
                arb_matrix(m, w),
                proptest::collection::vec(any::<bool>(), w).prop_map(ChoiceString::from_bits),
            )
        })
    }

    proptest! {
        #[test]
        fn xor_group_laws((a, b, c, _s) in arb_triple()) {
            let zero = BitMatrix::zeros(a.rows(), a.cols()).unwrap();
            prop_assert_eq!(a.xor(&b).unwrap(), b.xor(&a).unwrap());
            prop_assert_eq!(a.xor(&b).unwrap().xor(&c).unwrap(), a.xor(&b.xor(&c).unwrap()).unwrap());
            prop_assert_eq!(a.xor(&zero).unwrap(), a.clone());
            prop_assert_eq!(a.xor(&b).unwrap().xor(&b).unwrap(), a.clone());
            prop_assert!(a.xor(&b).unwrap().is_canonical());
        }

        #[test]
        fn mux_mask_identity((a, d, _c, s) in arb_triple()) {
            let lhs = BitMatrix::mux(&a, &a.xor(&d).unwrap(), &s).unwrap();
            let rhs = a.xor(&d.mask_columns(&s).unwrap()).unwrap();
            prop_assert!(lhs.is_canonical());
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn gather_is_linear((a, b, _c, _s) in arb_triple(), seed in any::<u64>()) {
            let mut r = rng(seed);
            let v = IndexVector::new((0..a.cols()).map(|_| r.gen_range(0..a.rows() as u32)).collect());
            let lhs = a.xor(&b).unwrap().gather(&v).unwrap();
            let ga = a.gather(&v).unwrap();
            let gb = b.gather(&v).unwrap();
            let rhs: Vec<u8> = ga.iter().zip(&gb).map(|(x, y)| x ^ y).collect();
            prop_assert_eq!(lhs, rhs);
        }
    }
}

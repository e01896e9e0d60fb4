//! Exact arithmetic in the ring Z_{2^l} with a two's-complement fixed-point
//! encoding of reals.
//!
//! Everything the two-party protocol exchanges lives in this ring: values are
//! `l`-bit words, addition and multiplication wrap, and a real number `x` is
//! carried as `round(x * 2^f)` for `f` fractional bits. A product of two
//! encoded values is double-scaled (`2f` fractional bits) until [`truncate`]
//! shifts it back down.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ring width and fixed-point scale shared by both parties.
///
/// `ring_bits` is the word size l (32 or 64); `frac_bits` is the number of
/// fractional bits f in the encoding. `f < l/2` keeps one product of two
/// encoded values from wrapping for inputs bounded by `2^((l - 2f - 2)/2)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedPointConfig {
    ring_bits: u32,
    frac_bits: u32,
}

impl FixedPointConfig {
    pub fn new(ring_bits: u32, frac_bits: u32) -> Result<Self> {
        if ring_bits != 32 && ring_bits != 64 {
            return Err(Error::Config(format!(
                "ring width must be 32 or 64 bits, got {ring_bits}"
            )));
        }
        if frac_bits == 0 || frac_bits * 2 >= ring_bits {
            return Err(Error::Config(format!(
                "fractional bits must satisfy 0 < f < {}/2, got {frac_bits}",
                ring_bits
            )));
        }
        Ok(Self {
            ring_bits,
            frac_bits,
        })
    }

    pub fn ring_bits(self) -> u32 {
        self.ring_bits
    }

    pub fn frac_bits(self) -> u32 {
        self.frac_bits
    }

    /// Bitmask selecting the low l bits.
    pub fn mask(self) -> u64 {
        u64::MAX >> (64 - self.ring_bits)
    }

    /// Bytes per serialized ring word.
    pub fn word_bytes(self) -> usize {
        self.ring_bits as usize / 8
    }

    /// 2^f as a float, the encoding scale.
    pub fn scale(self) -> f64 {
        (1u64 << self.frac_bits) as f64
    }

    /// Signed (two's complement) interpretation of a raw word.
    pub fn signed(self, raw: u64) -> i64 {
        if self.ring_bits == 64 {
            raw as i64
        } else {
            ((raw & self.mask()) as u32) as i32 as i64
        }
    }

    /// Reduce a signed value into the ring.
    pub fn from_signed(self, v: i64) -> u64 {
        (v as u64) & self.mask()
    }

    pub fn wrap_add(self, a: u64, b: u64) -> u64 {
        a.wrapping_add(b) & self.mask()
    }

    pub fn wrap_sub(self, a: u64, b: u64) -> u64 {
        a.wrapping_sub(b) & self.mask()
    }

    pub fn wrap_mul(self, a: u64, b: u64) -> u64 {
        a.wrapping_mul(b) & self.mask()
    }
}

impl Default for FixedPointConfig {
    /// l = 64, f = 20: ratings in [0, 5] and latent factors well below 2^10
    /// leave room for sums of up to 2^22 products without wrapping.
    fn default() -> Self {
        Self {
            ring_bits: 64,
            frac_bits: 20,
        }
    }
}

/// One element of Z_{2^l}, stored as the raw unsigned word.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct RingElem(pub u64);

/// Encode a real as `round(x * 2^f)` in the ring, rounding half away from zero.
pub fn encode_fixed(x: f64, cfg: FixedPointConfig) -> Result<RingElem> {
    if !x.is_finite() {
        return Err(Error::Overflow(format!("cannot encode non-finite {x}")));
    }
    let limit = ((1u128 << (cfg.ring_bits - cfg.frac_bits - 1)) as f64).min(f64::MAX);
    if x.abs() >= limit {
        return Err(Error::Overflow(format!(
            "|{x}| exceeds representable range {limit}"
        )));
    }
    // f64::round is round-half-away-from-zero, which keeps the encoding
    // symmetric around zero.
    let scaled = (x * cfg.scale()).round();
    let half = (1u128 << (cfg.ring_bits - 1)) as f64;
    if scaled >= half || scaled < -half {
        return Err(Error::Overflow(format!(
            "{x} rounds outside the signed ring range"
        )));
    }
    Ok(RingElem(cfg.from_signed(scaled as i64)))
}

/// Inverse of [`encode_fixed`]: signed interpretation divided by 2^f.
pub fn decode_fixed(e: RingElem, cfg: FixedPointConfig) -> f64 {
    cfg.signed(e.0) as f64 / cfg.scale()
}

/// Rescale a double-scaled value (a product of two encodings) back to single
/// scale: arithmetic shift right by f, i.e. floor division of the signed value.
pub fn truncate(e: RingElem, cfg: FixedPointConfig) -> RingElem {
    RingElem(cfg.from_signed(cfg.signed(e.0) >> cfg.frac_bits))
}

/// Dense row-major matrix over Z_{2^l}.
///
/// The invariant `raw < 2^l` holds for every entry; all operations re-reduce.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RingMatrix {
    rows: usize,
    cols: usize,
    data: Vec<u64>,
}

impl RingMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> u64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_raw(rows: usize, cols: usize, data: Vec<u64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Identity scaled by `diag` (so `identity_scaled(n, 2^f)` encodes the
    /// real identity matrix).
    pub fn identity_scaled(n: usize, diag: u64) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { diag } else { 0 })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> RingElem {
        RingElem(self.data[r * self.cols + c])
    }

    pub fn set(&mut self, r: usize, c: usize, e: RingElem) {
        self.data[r * self.cols + c] = e.0;
    }

    pub fn raw(&self) -> &[u64] {
        &self.data
    }

    pub fn add(&self, other: &Self, cfg: FixedPointConfig) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.zip_with(other, |a, b| cfg.wrap_add(a, b))
    }

    pub fn sub(&self, other: &Self, cfg: FixedPointConfig) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.zip_with(other, |a, b| cfg.wrap_sub(a, b))
    }

    /// Entry-wise multiplication by the ring constant 2.
    pub fn double(&self, cfg: FixedPointConfig) -> Self {
        let data = self.data.iter().map(|&a| cfg.wrap_add(a, a)).collect();
        Self {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    fn zip_with(&self, other: &Self, f: impl Fn(u64, u64) -> u64) -> Self {
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    /// Exact wrapping matrix product.
    ///
    /// Accumulating in wrapping u64 and masking once per entry is sound for
    /// l = 32 as well, since reduction mod 2^64 followed by mod 2^32 equals
    /// reduction mod 2^32.
    pub fn matmul(&self, other: &Self, cfg: FixedPointConfig) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let (x, y, z) = (self.rows, self.cols, other.cols);
        let mut out = vec![0u64; x * z];
        for i in 0..x {
            for k in 0..y {
                let a = self.data[i * y + k];
                if a == 0 {
                    continue;
                }
                let lhs = &other.data[k * z..(k + 1) * z];
                let dst = &mut out[i * z..(i + 1) * z];
                for (o, &b) in dst.iter_mut().zip(lhs) {
                    *o = o.wrapping_add(a.wrapping_mul(b));
                }
            }
        }
        let mask = cfg.mask();
        if mask != u64::MAX {
            for o in &mut out {
                *o &= mask;
            }
        }
        Ok(Self {
            rows: x,
            cols: z,
            data: out,
        })
    }

    /// Dense x sparse product; cost O(x * nnz).
    pub fn matmul_sparse(&self, other: &SparseRingMatrix, cfg: FixedPointConfig) -> Result<Self> {
        if self.cols != other.rows() {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows,
                self.cols,
                other.rows(),
                other.cols()
            )));
        }
        let (x, y, z) = (self.rows, self.cols, other.cols());
        let mut out = vec![0u64; x * z];
        for k in 0..y {
            for &(c, v) in other.row(k) {
                if v == 0 {
                    continue;
                }
                for i in 0..x {
                    let a = self.data[i * y + k];
                    out[i * z + c as usize] =
                        out[i * z + c as usize].wrapping_add(a.wrapping_mul(v));
                }
            }
        }
        let mask = cfg.mask();
        if mask != u64::MAX {
            for o in &mut out {
                *o &= mask;
            }
        }
        Ok(Self {
            rows: x,
            cols: z,
            data: out,
        })
    }

    /// Encode a real matrix entry-wise.
    pub fn encode(m: &nalgebra::DMatrix<f64>, cfg: FixedPointConfig) -> Result<Self> {
        let mut out = Self::zeros(m.nrows(), m.ncols());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                out.set(r, c, encode_fixed(m[(r, c)], cfg)?);
            }
        }
        Ok(out)
    }

    /// Decode every entry at single scale.
    pub fn decode(&self, cfg: FixedPointConfig) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(self.rows, self.cols, |r, c| {
            decode_fixed(self.get(r, c), cfg)
        })
    }

    /// Truncate every entry (double scale -> single scale).
    pub fn truncate(&self, cfg: FixedPointConfig) -> Self {
        let data = self
            .data
            .iter()
            .map(|&raw| cfg.from_signed(cfg.signed(raw) >> cfg.frac_bits))
            .collect();
        Self {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    /// Split columns alternately. Indexing is 1-based as fixed for the whole
    /// protocol: "odd" takes the first, third, ... columns.
    pub fn odd_even_cols(&self) -> (Self, Self) {
        assert!(self.cols % 2 == 0, "column split requires an even width");
        let half = self.cols / 2;
        let mut odd = Self::zeros(self.rows, half);
        let mut even = Self::zeros(self.rows, half);
        for r in 0..self.rows {
            for k in 0..half {
                odd.data[r * half + k] = self.data[r * self.cols + 2 * k];
                even.data[r * half + k] = self.data[r * self.cols + 2 * k + 1];
            }
        }
        (odd, even)
    }

    /// Row analogue of [`Self::odd_even_cols`]: "odd" takes the first row.
    pub fn odd_even_rows(&self) -> (Self, Self) {
        assert!(self.rows % 2 == 0, "row split requires an even height");
        let half = self.rows / 2;
        let mut odd = Self::zeros(half, self.cols);
        let mut even = Self::zeros(half, self.cols);
        for k in 0..half {
            let o = &self.data[2 * k * self.cols..(2 * k + 1) * self.cols];
            let e = &self.data[(2 * k + 1) * self.cols..(2 * k + 2) * self.cols];
            odd.data[k * self.cols..(k + 1) * self.cols].copy_from_slice(o);
            even.data[k * self.cols..(k + 1) * self.cols].copy_from_slice(e);
        }
        (odd, even)
    }

    /// Append one zero column.
    pub fn pad_col(&self) -> Self {
        let mut out = Self::zeros(self.rows, self.cols + 1);
        for r in 0..self.rows {
            out.data[r * (self.cols + 1)..r * (self.cols + 1) + self.cols]
                .copy_from_slice(&self.data[r * self.cols..(r + 1) * self.cols]);
        }
        out
    }

    /// Append one zero row.
    pub fn pad_row(&self) -> Self {
        let mut data = self.data.clone();
        data.extend(std::iter::repeat_n(0, self.cols));
        Self {
            rows: self.rows + 1,
            cols: self.cols,
            data,
        }
    }

    /// Wire format: two u32 little-endian dims, then rows*cols little-endian
    /// l-bit words in row-major order.
    pub fn to_bytes(&self, cfg: FixedPointConfig) -> Vec<u8> {
        let w = cfg.word_bytes();
        let mut out = Vec::with_capacity(8 + self.data.len() * w);
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.cols as u32).to_le_bytes());
        for &v in &self.data {
            out.extend_from_slice(&v.to_le_bytes()[..w]);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], cfg: FixedPointConfig) -> Result<Self> {
        let w = cfg.word_bytes();
        if bytes.len() < 8 {
            return Err(Error::MalformedFrame(
                "matrix blob shorter than header".into(),
            ));
        }
        let rows = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let need = 8 + rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(w))
            .ok_or_else(|| Error::MalformedFrame("matrix dims overflow".into()))?;
        if bytes.len() != need {
            return Err(Error::MalformedFrame(format!(
                "matrix blob for {rows}x{cols} should be {need} bytes, got {}",
                bytes.len()
            )));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for chunk in bytes[8..].chunks_exact(w) {
            let mut word = [0u8; 8];
            word[..w].copy_from_slice(chunk);
            data.push(u64::from_le_bytes(word));
        }
        Ok(Self { rows, cols, data })
    }

    /// Serialized size of the dense blob.
    pub fn byte_len(rows: usize, cols: usize, cfg: FixedPointConfig) -> usize {
        8 + rows * cols * cfg.word_bytes()
    }
}

/// Sparse matrix over the ring, rows stored as sorted (col, value) lists.
///
/// The entry list is structural: an explicitly stored zero still counts
/// toward nnz and is serialized, which is what keeps masked-share supports
/// independent of the masked values.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SparseRingMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<Vec<(u32, u64)>>,
}

impl SparseRingMatrix {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            entries: vec![Vec::new(); rows],
        }
    }

    pub fn from_rows(rows: usize, cols: usize, entries: Vec<Vec<(u32, u64)>>) -> Result<Self> {
        if entries.len() != rows {
            return Err(Error::Dimension(format!(
                "sparse matrix expects {rows} rows, got {}",
                entries.len()
            )));
        }
        for row in &entries {
            for &(c, _) in row {
                if c as usize >= cols {
                    return Err(Error::Dimension(format!(
                        "sparse column {c} out of range for width {cols}"
                    )));
                }
            }
        }
        let mut m = Self {
            rows,
            cols,
            entries,
        };
        for row in &mut m.entries {
            row.sort_unstable_by_key(|&(c, _)| c);
        }
        Ok(m)
    }

    pub fn from_dense(m: &RingMatrix) -> Self {
        let mut out = Self::new(m.rows(), m.cols());
        for r in 0..m.rows() {
            for c in 0..m.cols() {
                let v = m.get(r, c).0;
                if v != 0 {
                    out.entries[r].push((c as u32, v));
                }
            }
        }
        out
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[(u32, u64)] {
        &self.entries[r]
    }

    pub fn push(&mut self, r: usize, c: u32, v: u64) {
        self.entries[r].push((c, v));
    }

    pub fn sort_rows(&mut self) {
        for row in &mut self.entries {
            row.sort_unstable_by_key(|&(c, _)| c);
        }
    }

    pub fn nnz(&self) -> usize {
        self.entries.iter().map(Vec::len).sum()
    }

    pub fn row_nnz(&self, r: usize) -> usize {
        self.entries[r].len()
    }

    pub fn to_dense(&self) -> RingMatrix {
        let mut out = RingMatrix::zeros(self.rows, self.cols);
        for (r, row) in self.entries.iter().enumerate() {
            for &(c, v) in row {
                out.set(r, c as usize, RingElem(v));
            }
        }
        out
    }

    /// Append one structurally empty row.
    pub fn pad_row(&self) -> Self {
        let mut entries = self.entries.clone();
        entries.push(Vec::new());
        Self {
            rows: self.rows + 1,
            cols: self.cols,
            entries,
        }
    }

    /// Row split with the same 1-based odd/even convention as the dense type.
    pub fn odd_even_rows(&self) -> (Self, Self) {
        assert!(self.rows % 2 == 0, "row split requires an even height");
        let half = self.rows / 2;
        let mut odd = Vec::with_capacity(half);
        let mut even = Vec::with_capacity(half);
        for k in 0..half {
            odd.push(self.entries[2 * k].clone());
            even.push(self.entries[2 * k + 1].clone());
        }
        (
            Self {
                rows: half,
                cols: self.cols,
                entries: odd,
            },
            Self {
                rows: half,
                cols: self.cols,
                entries: even,
            },
        )
    }

    /// Entry-wise difference keeping the structural union of both supports.
    pub fn sub_structural(&self, other: &Self, cfg: FixedPointConfig) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut entries = Vec::with_capacity(self.rows);
        for r in 0..self.rows {
            let mut row = Vec::with_capacity(self.entries[r].len() + other.entries[r].len());
            let (a, b) = (&self.entries[r], &other.entries[r]);
            let (mut i, mut j) = (0, 0);
            while i < a.len() || j < b.len() {
                match (a.get(i), b.get(j)) {
                    (Some(&(ca, va)), Some(&(cb, vb))) if ca == cb => {
                        row.push((ca, cfg.wrap_sub(va, vb)));
                        i += 1;
                        j += 1;
                    }
                    (Some(&(ca, va)), Some(&(cb, _))) if ca < cb => {
                        row.push((ca, va));
                        i += 1;
                    }
                    (Some(_), Some(&(cb, vb))) => {
                        row.push((cb, cfg.wrap_sub(0, vb)));
                        j += 1;
                    }
                    (Some(&(ca, va)), None) => {
                        row.push((ca, va));
                        i += 1;
                    }
                    (None, Some(&(cb, vb))) => {
                        row.push((cb, cfg.wrap_sub(0, vb)));
                        j += 1;
                    }
                    (None, None) => unreachable!(),
                }
            }
            entries.push(row);
        }
        Self {
            rows: self.rows,
            cols: self.cols,
            entries,
        }
    }

    /// Wire format: dims as two u32, nnz as u32, then (row u32, col u32,
    /// l-bit word) triples.
    pub fn to_bytes(&self, cfg: FixedPointConfig) -> Vec<u8> {
        let w = cfg.word_bytes();
        let nnz = self.nnz();
        let mut out = Vec::with_capacity(12 + nnz * (8 + w));
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.cols as u32).to_le_bytes());
        out.extend_from_slice(&(nnz as u32).to_le_bytes());
        for (r, row) in self.entries.iter().enumerate() {
            for &(c, v) in row {
                out.extend_from_slice(&(r as u32).to_le_bytes());
                out.extend_from_slice(&c.to_le_bytes());
                out.extend_from_slice(&v.to_le_bytes()[..w]);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], cfg: FixedPointConfig) -> Result<Self> {
        let w = cfg.word_bytes();
        if bytes.len() < 12 {
            return Err(Error::MalformedFrame(
                "sparse blob shorter than header".into(),
            ));
        }
        let rows = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let nnz = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let need = 12 + nnz * (8 + w);
        if bytes.len() != need {
            return Err(Error::MalformedFrame(format!(
                "sparse blob with {nnz} entries should be {need} bytes, got {}",
                bytes.len()
            )));
        }
        let mut m = Self::new(rows, cols);
        for chunk in bytes[12..].chunks_exact(8 + w) {
            let r = u32::from_le_bytes(chunk[0..4].try_into().unwrap()) as usize;
            let c = u32::from_le_bytes(chunk[4..8].try_into().unwrap());
            let mut word = [0u8; 8];
            word[..w].copy_from_slice(&chunk[8..]);
            if r >= rows || c as usize >= cols {
                return Err(Error::MalformedFrame(format!(
                    "sparse entry ({r},{c}) outside {rows}x{cols}"
                )));
            }
            m.entries[r].push((c, u64::from_le_bytes(word)));
        }
        m.sort_rows();
        Ok(m)
    }

    /// Serialized size of a sparse blob with the given entry count.
    pub fn byte_len(nnz: usize, cfg: FixedPointConfig) -> usize {
        12 + nnz * (8 + cfg.word_bytes())
    }
}

/// Dense-or-sparse payload for matrices crossing the wire; the social party
/// decides the representation privately, so the receiver must handle both.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MatrixData {
    Dense(RingMatrix),
    Sparse(SparseRingMatrix),
}

impl MatrixData {
    pub fn rows(&self) -> usize {
        match self {
            MatrixData::Dense(m) => m.rows(),
            MatrixData::Sparse(m) => m.rows(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            MatrixData::Dense(m) => m.cols(),
            MatrixData::Sparse(m) => m.cols(),
        }
    }

    pub fn to_dense(&self) -> RingMatrix {
        match self {
            MatrixData::Dense(m) => m.clone(),
            MatrixData::Sparse(m) => m.to_dense(),
        }
    }

    /// Left-multiply by a dense matrix.
    pub fn left_mul(&self, lhs: &RingMatrix, cfg: FixedPointConfig) -> Result<RingMatrix> {
        match self {
            MatrixData::Dense(m) => lhs.matmul(m, cfg),
            MatrixData::Sparse(m) => lhs.matmul_sparse(m, cfg),
        }
    }
}

impl From<RingMatrix> for MatrixData {
    fn from(m: RingMatrix) -> Self {
        MatrixData::Dense(m)
    }
}

impl From<SparseRingMatrix> for MatrixData {
    fn from(m: SparseRingMatrix) -> Self {
        MatrixData::Sparse(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn cfg64() -> FixedPointConfig {
        FixedPointConfig::default()
    }

    fn cfg(l: u32, f: u32) -> FixedPointConfig {
        FixedPointConfig::new(l, f).unwrap()
    }

    #[test]
    fn encode_known_values() {
        let c = cfg(64, 16);
        assert_eq!(encode_fixed(1.5, c).unwrap().0, 98304);
        assert_eq!(encode_fixed(-1.0, c).unwrap().0, u64::MAX - 65536 + 1);
        let c20 = cfg(64, 20);
        // round(0.1 * 2^20) = round(104857.6)
        assert_eq!(encode_fixed(0.1, c20).unwrap().0, 104858);
    }

    #[test]
    fn decode_known_values() {
        let c = cfg(64, 16);
        assert_eq!(decode_fixed(RingElem(98304), c), 1.5);
        assert_eq!(decode_fixed(RingElem(u64::MAX - 65535), c), -1.0);
        let c20 = cfg(64, 20);
        let x = 3.14159;
        let err = (decode_fixed(encode_fixed(x, c20).unwrap(), c20) - x).abs();
        assert!(err <= 2f64.powi(-21), "round-trip error {err}");
    }

    #[test]
    fn encode_rejects_out_of_range() {
        let c = cfg(64, 20);
        // limit is 2^43
        assert!(encode_fixed(2f64.powi(43), c).is_err());
        assert!(encode_fixed(f64::NAN, c).is_err());
        assert!(encode_fixed(2f64.powi(42), c).is_ok());
    }

    #[test]
    fn truncate_examples() {
        let c = cfg(64, 16);
        let a = encode_fixed(1.5, c).unwrap();
        let b = encode_fixed(2.0, c).unwrap();
        let prod = RingElem(c.wrap_mul(a.0, b.0));
        assert_eq!(truncate(prod, c), encode_fixed(3.0, c).unwrap());
        // positive underflow floors to zero
        assert_eq!(truncate(RingElem(1), c).0, 0);
        let c20 = cfg(64, 20);
        let p = encode_fixed(0.3, c20).unwrap();
        let q = encode_fixed(0.7, c20).unwrap();
        let got = decode_fixed(truncate(RingElem(c20.wrap_mul(p.0, q.0)), c20), c20);
        assert!((got - 0.21).abs() <= 2f64.powi(-19));
    }

    #[test]
    fn matmul_identity_and_zero() {
        let c = cfg64();
        let x = RingMatrix::from_fn(3, 3, |r, col| (r * 7 + col * 13 + 1) as u64);
        let id = RingMatrix::identity_scaled(3, 1);
        assert_eq!(id.matmul(&x, c).unwrap(), x);
        let z = RingMatrix::zeros(3, 3);
        assert_eq!(z.matmul(&x, c).unwrap(), z);
    }

    #[test]
    fn matmul_matches_bigint_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        for _ in 0..20 {
            let a = RingMatrix::from_fn(2, 2, |_, _| rng.gen());
            let b = RingMatrix::from_fn(2, 2, |_, _| rng.gen());
            let got = a.matmul(&b, cfg64()).unwrap();
            for i in 0..2 {
                for j in 0..2 {
                    let exact: u128 = (0..2)
                        .map(|k| a.get(i, k).0 as u128 * b.get(k, j).0 as u128)
                        .fold(0u128, |acc, v| acc.wrapping_add(v));
                    assert_eq!(got.get(i, j).0, (exact % (1u128 << 64)) as u64);
                }
            }
        }
    }

    #[test]
    fn matmul_mod_2_32() {
        let c = cfg(32, 8);
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        for _ in 0..20 {
            let a = RingMatrix::from_fn(3, 4, |_, _| rng.gen::<u64>() & c.mask());
            let b = RingMatrix::from_fn(4, 2, |_, _| rng.gen::<u64>() & c.mask());
            let got = a.matmul(&b, c).unwrap();
            for i in 0..3 {
                for j in 0..2 {
                    let exact: u128 = (0..4)
                        .map(|k| a.get(i, k).0 as u128 * b.get(k, j).0 as u128)
                        .sum();
                    assert_eq!(got.get(i, j).0, (exact % (1u128 << 32)) as u64);
                }
            }
        }
    }

    #[test]
    fn matmul_dimension_mismatch() {
        let a = RingMatrix::zeros(2, 3);
        let b = RingMatrix::zeros(2, 3);
        assert!(a.matmul(&b, cfg64()).is_err());
    }

    #[test]
    fn sparse_matmul_agrees_with_dense() {
        let c = cfg64();
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        for _ in 0..10 {
            let a = RingMatrix::from_fn(4, 6, |_, _| rng.gen());
            let dense =
                RingMatrix::from_fn(6, 5, |_, _| if rng.gen_bool(0.3) { rng.gen() } else { 0 });
            let sparse = SparseRingMatrix::from_dense(&dense);
            assert_eq!(
                a.matmul(&dense, c).unwrap(),
                a.matmul_sparse(&sparse, c).unwrap()
            );
        }
    }

    #[test]
    fn dense_bytes_roundtrip_both_widths() {
        for c in [cfg(64, 20), cfg(32, 8)] {
            let mut rng = ChaCha20Rng::seed_from_u64(10);
            let m = RingMatrix::from_fn(3, 5, |_, _| rng.gen::<u64>() & c.mask());
            let bytes = m.to_bytes(c);
            assert_eq!(bytes.len(), RingMatrix::byte_len(3, 5, c));
            assert_eq!(RingMatrix::from_bytes(&bytes, c).unwrap(), m);
        }
    }

    #[test]
    fn sparse_bytes_roundtrip_keeps_structural_zeros() {
        let c = cfg64();
        let mut m = SparseRingMatrix::new(3, 4);
        m.push(0, 1, 42);
        m.push(0, 3, 0); // structural zero survives the round trip
        m.push(2, 0, 7);
        m.sort_rows();
        let bytes = m.to_bytes(c);
        assert_eq!(bytes.len(), SparseRingMatrix::byte_len(3, c));
        let back = SparseRingMatrix::from_bytes(&bytes, c).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.nnz(), 3);
    }

    #[test]
    fn odd_even_split_is_one_based() {
        let m = RingMatrix::from_fn(2, 4, |r, c| (r * 4 + c) as u64);
        let (odd, even) = m.odd_even_cols();
        // first (1-based odd) columns are 0-based indices 0 and 2
        assert_eq!(odd.get(0, 0).0, 0);
        assert_eq!(odd.get(0, 1).0, 2);
        assert_eq!(even.get(0, 0).0, 1);
        assert_eq!(even.get(0, 1).0, 3);
        let (ro, re) = m.odd_even_cols();
        assert_eq!(ro, odd);
        assert_eq!(re, even);
    }

    #[test]
    fn truncate_single_product_error_bound() {
        let c = cfg(64, 20);
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for _ in 0..2000 {
            let x: f64 = rng.gen_range(-1.0..1.0);
            let y: f64 = rng.gen_range(-1.0..1.0);
            let ex = encode_fixed(x, c).unwrap();
            let ey = encode_fixed(y, c).unwrap();
            let got = decode_fixed(truncate(RingElem(c.wrap_mul(ex.0, ey.0)), c), c);
            assert!(
                (got - x * y).abs() <= 2f64.powi(-19),
                "x={x} y={y} got={got}"
            );
        }
    }

    proptest! {
        #[test]
        fn ring_laws_hold(a in any::<u64>(), b in any::<u64>(), c in any::<u64>()) {
            for fp in [cfg(64, 20), cfg(32, 8)] {
                let (a, b, c) = (a & fp.mask(), b & fp.mask(), c & fp.mask());
                prop_assert_eq!(fp.wrap_add(fp.wrap_add(a, b), c), fp.wrap_add(a, fp.wrap_add(b, c)));
                prop_assert_eq!(fp.wrap_add(a, b), fp.wrap_add(b, a));
                prop_assert_eq!(fp.wrap_mul(a, b), fp.wrap_mul(b, a));
                prop_assert_eq!(
                    fp.wrap_mul(a, fp.wrap_add(b, c)),
                    fp.wrap_add(fp.wrap_mul(a, b), fp.wrap_mul(a, c))
                );
            }
        }

        #[test]
        fn encode_decode_roundtrip(x in -1000.0f64..1000.0) {
            let c = FixedPointConfig::default();
            let back = decode_fixed(encode_fixed(x, c).unwrap(), c);
            prop_assert!((back - x).abs() <= 2f64.powi(-(c.frac_bits() as i32) - 1));
        }

        #[test]
        fn encode_is_injective_on_grid(a in -100000i64..100000, b in -100000i64..100000) {
            // distinct values at least one encoding step apart map to distinct words
            let c = FixedPointConfig::default();
            prop_assume!(a != b);
            let xa = a as f64 / c.scale();
            let xb = b as f64 / c.scale();
            prop_assert_ne!(encode_fixed(xa, c).unwrap(), encode_fixed(xb, c).unwrap());
        }
    }

    #[test]
    fn bad_configs_rejected() {
        assert!(FixedPointConfig::new(48, 10).is_err());
        assert!(FixedPointConfig::new(64, 32).is_err());
        assert!(FixedPointConfig::new(64, 0).is_err());
        assert!(FixedPointConfig::new(32, 15).is_ok());
    }
}

//! Bit-packed binary columns.
//!
//! Every variable in the pipeline is binary, so matrices are stored column-major
//! with 64 rows per word. Pairwise counts (and therefore phi, mutual information
//! and covariance) reduce to popcounts over AND-ed words.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitColumn {
    words: Vec<u64>,
    len: usize,
}

impl BitColumn {
    pub fn zeros(len: usize) -> Self {
        Self {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn from_bools<I: IntoIterator<Item = bool>>(bits: I) -> Self {
        let mut words = Vec::new();
        let mut len = 0;
        for b in bits {
            if len % 64 == 0 {
                words.push(0);
            }
            if b {
                *words.last_mut().unwrap() |= 1 << (len % 64);
            }
            len += 1;
        }
        Self { words, len }
    }

    pub fn from_u8(values: &[u8]) -> Self {
        Self::from_bools(values.iter().map(|&v| v != 0))
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        (self.words[i >> 6] >> (i & 63)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        let mask = 1u64 << (i & 63);
        if value {
            self.words[i >> 6] |= mask;
        } else {
            self.words[i >> 6] &= !mask;
        }
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Number of rows where both columns are 1.
    pub fn and_count(&self, other: &BitColumn) -> usize {
        debug_assert_eq!(self.len, other.len);
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }

    /// Number of rows where the columns differ.
    pub fn xor_count(&self, other: &BitColumn) -> usize {
        debug_assert_eq!(self.len, other.len);
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum()
    }

    pub fn mean(&self) -> f64 {
        self.count_ones() as f64 / self.len as f64
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.iter().map(u8::from).collect()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.iter().map(|b| if b { 1.0 } else { 0.0 }).collect()
    }

    /// Gather the given rows into a new column.
    pub fn gather(&self, rows: &[usize]) -> BitColumn {
        BitColumn::from_bools(rows.iter().map(|&r| self.get(r)))
    }
}

/// Column-major N×m binary matrix.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryMatrix {
    rows: usize,
    columns: Vec<BitColumn>,
}

impl BinaryMatrix {
    pub fn from_columns(rows: usize, columns: Vec<BitColumn>) -> Result<Self> {
        for c in &columns {
            check_len(rows, c.len())?;
        }
        Ok(Self { rows, columns })
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        let mut columns = vec![BitColumn::zeros(n); m];
        for (i, row) in rows.iter().enumerate() {
            check_len(m, row.len())?;
            for (j, &v) in row.iter().enumerate() {
                if v != 0 {
                    columns[j].set(i, true);
                }
            }
        }
        Ok(Self { rows: n, columns })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.columns.len()
    }

    #[inline]
    pub fn column(&self, j: usize) -> &BitColumn {
        &self.columns[j]
    }

    pub fn columns(&self) -> &[BitColumn] {
        &self.columns
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.columns[col].get(row)
    }

    pub fn row(&self, row: usize) -> Vec<u8> {
        self.columns.iter().map(|c| u8::from(c.get(row))).collect()
    }

    /// Keep the listed columns, in the listed order.
    pub fn select_columns(&self, cols: &[usize]) -> Result<BinaryMatrix> {
        let mut out = Vec::with_capacity(cols.len());
        for &j in cols {
            if j >= self.cols() {
                return Err(Error::DimensionMismatch {
                    expected: self.cols(),
                    found: j,
                });
            }
            out.push(self.columns[j].clone());
        }
        Ok(BinaryMatrix {
            rows: self.rows,
            columns: out,
        })
    }

    /// Pack each row's bits into an integer code (bit j = column j).
    pub fn row_codes(&self) -> Result<Vec<u32>> {
        if self.cols() > 32 {
            return Err(Error::TooLarge {
                cells: 1u128 << self.cols().min(127),
                limit: 1u128 << 32,
            });
        }
        let mut codes = vec![0u32; self.rows];
        for (j, col) in self.columns.iter().enumerate() {
            for (i, code) in codes.iter_mut().enumerate() {
                if col.get(i) {
                    *code |= 1 << j;
                }
            }
        }
        Ok(codes)
    }

    /// Headerless CSV of 0/1 values, one row per line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut line = String::with_capacity(self.cols() * 2);
        for i in 0..self.rows {
            line.clear();
            for (j, col) in self.columns.iter().enumerate() {
                if j > 0 {
                    line.push(',');
                }
                line.push(if col.get(i) { '1' } else { '0' });
            }
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
        Ok(())
    }
}

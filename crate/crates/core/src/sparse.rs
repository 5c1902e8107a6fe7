//! Compressed sparse row storage.
//!
//! [`Pattern`] is a boolean support (used for the distance-k layers), and
//! [`CsrMatrix`] a real-valued matrix (operators and feature matrices). Column
//! indices within a row are always sorted ascending and unique.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::dense::Matrix;
use crate::error::{Error, Result};

/// Rows at or above this size use the parallel kernels. Per-row results never
/// depend on scheduling, so both paths are bitwise identical.
const PAR_ROWS: usize = 2048;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pattern {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
}

impl Pattern {
    pub fn empty(n: usize) -> Self {
        Pattern {
            n,
            indptr: vec![0; n + 1],
            indices: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Pattern {
            n,
            indptr: (0..=n).collect(),
            indices: (0..n as u32).collect(),
        }
    }

    /// Build from per-row column lists; each list must be sorted and unique.
    pub fn from_rows(rows: Vec<Vec<u32>>) -> Self {
        let n = rows.len();
        let mut indptr = Vec::with_capacity(n + 1);
        indptr.push(0);
        let total = rows.iter().map(Vec::len).sum();
        let mut indices = Vec::with_capacity(total);
        for r in rows {
            debug_assert!(r.windows(2).all(|w| w[0] < w[1]));
            indices.extend_from_slice(&r);
            indptr.push(indices.len());
        }
        Pattern { n, indptr, indices }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.indices[self.indptr[i]..self.indptr[i + 1]]
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.row(i).binary_search(&(j as u32)).is_ok()
    }

    /// All stored `(i, j)` pairs in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| self.row(i).iter().map(move |&j| (i, j as usize)))
    }

    /// Keep only the entries for which `keep(i, j)` holds.
    pub fn filter(&self, keep: impl Fn(usize, usize) -> bool + Sync) -> Pattern {
        let rows: Vec<Vec<u32>> = (0..self.n)
            .into_par_iter()
            .map(|i| {
                self.row(i)
                    .iter()
                    .copied()
                    .filter(|&j| keep(i, j as usize))
                    .collect()
            })
            .collect();
        Pattern::from_rows(rows)
    }

    pub fn is_subset_of(&self, other: &Pattern) -> bool {
        self.n == other.n && self.entries().all(|(i, j)| other.contains(i, j))
    }

    pub fn is_symmetric(&self) -> bool {
        self.entries().all(|(i, j)| self.contains(j, i))
    }

    pub fn to_matrix(&self, value: f64) -> CsrMatrix {
        CsrMatrix {
            nrows: self.n,
            ncols: self.n,
            indptr: self.indptr.clone(),
            indices: self.indices.clone(),
            values: vec![value; self.indices.len()],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        CsrMatrix {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Pattern::identity(n).to_matrix(1.0)
    }

    /// Build from unordered triplets. Duplicate coordinates are summed.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); nrows];
        for &(i, j, v) in triplets {
            if i >= nrows {
                return Err(Error::NodeOutOfRange { index: i, n: nrows });
            }
            if j >= ncols {
                return Err(Error::Shape(format!("column {j} >= {ncols}")));
            }
            rows[i].push((j as u32, v));
        }
        Ok(Self::from_row_entries(nrows, ncols, rows))
    }

    /// Build from per-row `(column, value)` lists in any order; duplicates summed.
    pub fn from_row_entries(nrows: usize, ncols: usize, rows: Vec<Vec<(u32, f64)>>) -> Self {
        let mut indptr = Vec::with_capacity(nrows + 1);
        indptr.push(0);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for mut r in rows {
            r.sort_by_key(|&(j, _)| j);
            let start = indices.len();
            for (j, v) in r {
                if indices.len() > start && *indices.last().unwrap() == j {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(j);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    pub fn from_dense(m: &Matrix) -> Self {
        let rows = (0..m.rows())
            .map(|i| {
                m.row(i)
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(j, &v)| (j as u32, v))
                    .collect()
            })
            .collect();
        Self::from_row_entries(m.rows(), m.cols(), rows)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let r = self.indptr[i]..self.indptr[i + 1];
        (&self.indices[r.clone()], &self.values[r])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&(j as u32)).map_or(0.0, |k| vals[k])
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            let (c, v) = self.row(i);
            c.iter().zip(v).map(move |(&j, &x)| (i, j as usize, x))
        })
    }

    pub fn pattern(&self) -> Pattern {
        assert_eq!(self.nrows, self.ncols);
        Pattern {
            n: self.nrows,
            indptr: self.indptr.clone(),
            indices: self.indices.clone(),
        }
    }

    /// First `(i, j)` where `M_ij != M_ji` bitwise, if any.
    pub fn asymmetry(&self) -> Option<(usize, usize)> {
        if self.nrows != self.ncols {
            return Some((self.nrows, self.ncols));
        }
        self.triplets()
            .find(|&(i, j, v)| self.get(j, i).to_bits() != v.to_bits())
            .map(|(i, j, _)| (i, j))
    }

    pub fn is_symmetric(&self) -> bool {
        self.asymmetry().is_none()
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            m[(i, j)] = v;
        }
        m
    }

    pub fn row_abs_sums(&self) -> Vec<f64> {
        (0..self.nrows)
            .map(|i| self.row(i).1.iter().map(|v| v.abs()).sum())
            .collect()
    }

    /// `y = M x`.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        let row_dot = |i: usize| {
            let (c, v) = self.row(i);
            c.iter()
                .zip(v)
                .map(|(&j, &a)| a * x[j as usize])
                .sum::<f64>()
        };
        if self.nrows >= PAR_ROWS {
            y.par_iter_mut()
                .enumerate()
                .for_each(|(i, yi)| *yi = row_dot(i));
        } else {
            y.iter_mut()
                .enumerate()
                .for_each(|(i, yi)| *yi = row_dot(i));
        }
    }

    /// `M · B` for dense `B`.
    pub fn mul_dense(&self, b: &Matrix) -> Result<Matrix> {
        if b.rows() != self.ncols {
            return Err(Error::Shape(format!(
                "sparse {}x{} times dense {}x{}",
                self.nrows,
                self.ncols,
                b.rows(),
                b.cols()
            )));
        }
        let w = b.cols();
        let mut out = Matrix::zeros(self.nrows, w);
        let fill = |i: usize, o: &mut [f64]| {
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                for (dst, &bv) in o.iter_mut().zip(b.row(j as usize)) {
                    *dst += a * bv;
                }
            }
        };
        if w == 0 {
            return Ok(out);
        }
        if self.nrows >= PAR_ROWS {
            out.as_mut_slice()
                .par_chunks_mut(w)
                .enumerate()
                .for_each(|(i, o)| fill(i, o));
        } else {
            out.as_mut_slice()
                .chunks_mut(w)
                .enumerate()
                .for_each(|(i, o)| fill(i, o));
        }
        Ok(out)
    }

    /// `Mᵀ · B` for dense `B`, accumulated in row order.
    pub fn t_mul_dense(&self, b: &Matrix) -> Result<Matrix> {
        if b.rows() != self.nrows {
            return Err(Error::Shape(format!(
                "sparse transpose {}x{} times dense {}x{}",
                self.ncols,
                self.nrows,
                b.rows(),
                b.cols()
            )));
        }
        let w = b.cols();
        let mut out = Matrix::zeros(self.ncols, w);
        for i in 0..self.nrows {
            let (c, v) = self.row(i);
            let bi = b.row(i);
            for (&j, &a) in c.iter().zip(v) {
                for (dst, &bv) in out.row_mut(j as usize).iter_mut().zip(bi) {
                    *dst += a * bv;
                }
            }
        }
        Ok(out)
    }

    /// Scale every stored value: `M_ij ← f(i, j, M_ij)`.
    pub fn map_entries(&self, f: impl Fn(usize, usize, f64) -> f64) -> CsrMatrix {
        let mut out = self.clone();
        for i in 0..self.nrows {
            for k in self.indptr[i]..self.indptr[i + 1] {
                out.values[k] = f(i, self.indices[k] as usize, self.values[k]);
            }
        }
        out
    }

    /// Divide each row by its sum; all-zero rows are left untouched.
    pub fn row_normalized(&self) -> CsrMatrix {
        let sums: Vec<f64> = (0..self.nrows)
            .map(|i| self.row(i).1.iter().sum())
            .collect();
        self.map_entries(|i, _, v| if sums[i] != 0.0 { v / sums[i] } else { v })
    }

    /// Write as `"i j value"` lines after a `"rows cols nnz"` header.
    pub fn write_triplets(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        let io = |e| Error::io(path, e);
        writeln!(w, "{} {} {}", self.nrows, self.ncols, self.nnz()).map_err(io)?;
        for (i, j, v) in self.triplets() {
            writeln!(w, "{i} {j} {v}").map_err(io)?;
        }
        w.flush().map_err(io)
    }

    /// Read the triplet format produced by [`CsrMatrix::write_triplets`].
    pub fn read_triplets(path: &Path) -> Result<CsrMatrix> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = std::io::BufReader::new(f);
        let perr = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = reader.lines().enumerate();
        let (rows, cols, nnz) = loop {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| perr(0, "missing header".into()))?;
            let line = line.map_err(|e| Error::io(path, e))?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let h: Vec<usize> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| perr(ln + 1, format!("bad header: {e}")))?;
            if h.len() != 3 {
                return Err(perr(ln + 1, "header must be `rows cols nnz`".into()));
            }
            break (h[0], h[1], h[2]);
        };
        let mut trip = Vec::with_capacity(nnz);
        for (ln, line) in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace();
            let (Some(a), Some(b), Some(c), None) = (it.next(), it.next(), it.next(), it.next())
            else {
                return Err(perr(ln + 1, "expected `i j value`".into()));
            };
            let i: usize = a.parse().map_err(|e| perr(ln + 1, format!("{e}")))?;
            let j: usize = b.parse().map_err(|e| perr(ln + 1, format!("{e}")))?;
            let v: f64 = c.parse().map_err(|e| perr(ln + 1, format!("{e}")))?;
            if i >= rows {
                return Err(Error::NodeOutOfRange { index: i, n: rows });
            }
            if j >= cols {
                return Err(perr(ln + 1, format!("column {j} >= {cols}")));
            }
            trip.push((i, j, v));
        }
        if trip.len() != nnz {
            return Err(perr(
                0,
                format!("header declares {nnz} entries, found {}", trip.len()),
            ));
        }
        CsrMatrix::from_triplets(rows, cols, &trip)
    }
}

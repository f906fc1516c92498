//! Compressed sparse row matrices.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

/// Header line of the coordinate text format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CooHeader {
    pub rows: usize,
    pub cols: usize,
    pub nnz: usize,
}

impl CsrMatrix {
    /// Builds from raw CSR arrays, checking that column indices are strictly
    /// increasing within each row.
    pub fn from_parts(
        n_rows: usize,
        n_cols: usize,
        offsets: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if offsets.len() != n_rows + 1 || offsets[0] != 0 {
            return Err(Error::InvalidArgument("row offsets have the wrong length".into()));
        }
        if indices.len() != values.len() || *offsets.last().unwrap() != indices.len() {
            return Err(Error::InvalidArgument("offsets inconsistent with nnz".into()));
        }
        for row in 0..n_rows {
            let (a, b) = (offsets[row], offsets[row + 1]);
            if a > b {
                return Err(Error::InvalidArgument(format!("row {row}: decreasing offsets")));
            }
            let cols = &indices[a..b];
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidArgument(format!(
                    "row {row}: column indices not strictly increasing"
                )));
            }
            if cols.last().is_some_and(|&c| c >= n_cols) {
                return Err(Error::IndexOutOfRange(format!("row {row}: column >= {n_cols}")));
            }
        }
        Ok(Self { n_rows, n_cols, offsets, indices, values })
    }

    /// Duplicate coordinates are summed.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        if let Some(&(i, j, _)) = triplets.iter().find(|t| t.0 >= n_rows || t.1 >= n_cols) {
            return Err(Error::IndexOutOfRange(format!(
                "entry ({i}, {j}) outside {n_rows}x{n_cols}"
            )));
        }
        triplets.sort_unstable_by_key(|t| (t.0, t.1));
        let mut offsets = vec![0usize; n_rows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in triplets {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            offsets[i + 1] += 1;
            indices.push(j);
            values.push(v);
            last = Some((i, j));
        }
        for i in 0..n_rows {
            offsets[i + 1] += offsets[i];
        }
        Ok(Self { n_rows, n_cols, offsets, indices, values })
    }

    /// Keeps the entries of `dense` for which `keep` holds.
    pub fn from_dense<F: Fn(usize, usize, f64) -> bool>(dense: &DMatrix<f64>, keep: F) -> Self {
        let (n_rows, n_cols) = dense.shape();
        let mut offsets = Vec::with_capacity(n_rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        offsets.push(0);
        for i in 0..n_rows {
            for j in 0..n_cols {
                let v = dense[(i, j)];
                if keep(i, j, v) {
                    indices.push(j);
                    values.push(v);
                }
            }
            offsets.push(indices.len());
        }
        Self { n_rows, n_cols, offsets, indices, values }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            offsets: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn rows(&self) -> usize {
        self.n_rows
    }
    pub fn cols(&self) -> usize {
        self.n_cols
    }
    pub fn nnz(&self) -> usize {
        self.values.len()
    }
    pub fn density(&self) -> f64 {
        self.nnz() as f64 / (self.n_rows as f64 * self.n_cols as f64)
    }
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.offsets[i], self.offsets[i + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    /// Stored value, or zero for a structural zero.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).map_or(0.0, |k| vals[k])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rows.min(self.n_cols)).map(|i| self.get(i, i)).collect()
    }

    /// `y = A x`, parallel over rows.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n_cols);
        assert_eq!(y.len(), self.n_rows);
        y.par_iter_mut().enumerate().for_each(|(i, yi)| {
            let (cols, vals) = self.row(i);
            *yi = cols.iter().zip(vals).map(|(&j, v)| v * x[j]).sum();
        });
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_rows, self.n_cols);
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// Same pattern and values (within `tol`) as the transpose.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.n_rows != self.n_cols {
            return false;
        }
        (0..self.n_rows).all(|i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).all(|(&j, &v)| {
                let (tc, tv) = self.row(j);
                tc.binary_search(&i).is_ok_and(|k| (tv[k] - v).abs() <= tol)
            })
        })
    }

    /// Rows and columns `[r0, r0 + nr) x [c0, c0 + nc)`.
    pub fn submatrix(&self, r0: usize, c0: usize, nr: usize, nc: usize) -> Result<Self> {
        if r0 + nr > self.n_rows || c0 + nc > self.n_cols {
            return Err(Error::IndexOutOfRange("submatrix exceeds matrix bounds".into()));
        }
        let mut offsets = Vec::with_capacity(nr + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        offsets.push(0);
        for i in r0..r0 + nr {
            let (cols, vals) = self.row(i);
            let lo = cols.partition_point(|&j| j < c0);
            let hi = cols.partition_point(|&j| j < c0 + nc);
            indices.extend(cols[lo..hi].iter().map(|j| j - c0));
            values.extend_from_slice(&vals[lo..hi]);
            offsets.push(indices.len());
        }
        Ok(Self { n_rows: nr, n_cols: nc, offsets, indices, values })
    }

    /// Coordinate text: a JSON header line `{rows, cols, nnz}` followed by
    /// 0-based `row col value` lines.
    pub fn write_coo<W: Write>(&self, out: W) -> Result<()> {
        let mut out = BufWriter::new(out);
        let header = CooHeader { rows: self.n_rows, cols: self.n_cols, nnz: self.nnz() };
        writeln!(out, "{}", serde_json::to_string(&header)?)?;
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&j, v) in cols.iter().zip(vals) {
                writeln!(out, "{i} {j} {v:e}")?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_coo<R: Read>(input: R) -> Result<Self> {
        let mut lines = BufReader::new(input).lines();
        let first = lines.next().ok_or_else(|| Error::Parse("empty matrix file".into()))??;
        let header: CooHeader = serde_json::from_str(&first)?;
        let mut triplets = Vec::with_capacity(header.nnz);
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = || Error::Parse(format!("line {}: expected `row col value`", lineno + 2));
            let mut parts = line.split_whitespace();
            let i: usize = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let j: usize = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let v: f64 = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            if parts.next().is_some() {
                return Err(bad());
            }
            triplets.push((i, j, v));
        }
        if triplets.len() != header.nnz {
            return Err(Error::Parse(format!(
                "header declares {} entries, found {}",
                header.nnz,
                triplets.len()
            )));
        }
        let m = Self::from_triplets(header.rows, header.cols, triplets)?;
        if m.nnz() != header.nnz {
            return Err(Error::Parse("duplicate coordinates in matrix file".into()));
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> CsrMatrix {
        CsrMatrix::from_triplets(
            3,
            4,
            vec![(2, 3, 5.0), (0, 1, 2.0), (0, 0, 1.0), (2, 0, -1.0), (0, 1, 0.5)],
        )
        .unwrap()
    }

    #[test]
    fn triplets_sorted_and_summed() {
        let m = sample();
        assert_eq!(m.nnz(), 4);
        assert_eq!(m.offsets(), &[0, 2, 2, 4]);
        assert_eq!(m.get(0, 1), 2.5);
        assert_eq!(m.get(1, 1), 0.0);
        assert!(CsrMatrix::from_triplets(2, 2, vec![(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn from_parts_checks_order() {
        assert!(CsrMatrix::from_parts(1, 3, vec![0, 2], vec![2, 1], vec![1.0, 1.0]).is_err());
        assert!(CsrMatrix::from_parts(1, 3, vec![0, 2], vec![0, 3], vec![1.0, 1.0]).is_err());
        assert!(CsrMatrix::from_parts(1, 3, vec![0, 2], vec![0, 2], vec![1.0, 1.0]).is_ok());
    }

    #[test]
    fn matvec_matches_dense() {
        let m = sample();
        let x = [1.0, -2.0, 3.0, 0.5];
        let mut y = [0.0; 3];
        m.matvec(&x, &mut y);
        let dy = m.to_dense() * nalgebra::DVector::from_column_slice(&x);
        for i in 0..3 {
            assert_eq!(y[i], dy[i]);
        }
    }

    #[test]
    fn symmetry_and_submatrix() {
        let d = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 3.0, 4.0, 0.0, 4.0, 5.0]);
        let m = CsrMatrix::from_dense(&d, |_, _, v| v != 0.0);
        assert!(m.is_symmetric(0.0));
        assert!(!sample().is_symmetric(1.0));
        let s = m.submatrix(1, 1, 2, 2).unwrap();
        assert_eq!(s.to_dense(), d.view((1, 1), (2, 2)).into_owned());
        assert_eq!(m.diagonal(), vec![2.0, 3.0, 5.0]);
        assert!(m.submatrix(2, 2, 2, 1).is_err());
    }

    #[test]
    fn coo_round_trip() {
        let m = sample();
        let mut buf = Vec::new();
        m.write_coo(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(r#"{"rows":3,"cols":4,"nnz":4}"#));
        assert_eq!(CsrMatrix::read_coo(buf.as_slice()).unwrap(), m);
        let truncated = text.lines().take(3).collect::<Vec<_>>().join("\n");
        assert!(CsrMatrix::read_coo(truncated.as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn dense_round_trip(vals in proptest::collection::vec(-3i32..3, 20)) {
            let d = DMatrix::from_iterator(4, 5, vals.into_iter().map(f64::from));
            let m = CsrMatrix::from_dense(&d, |_, _, v| v != 0.0);
            prop_assert_eq!(m.to_dense(), d.clone());
            let mut buf = Vec::new();
            m.write_coo(&mut buf).unwrap();
            prop_assert_eq!(CsrMatrix::read_coo(buf.as_slice()).unwrap(), m);
        }
    }
}

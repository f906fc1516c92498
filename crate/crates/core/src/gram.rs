//! Pair vectorization, the sparse kernel Gram matrix `J`, the block Khatri-Rao
//! covariance Gram `H = S (J * J) S^T` and dense reference assemblies.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::kernel::ZonalKernel;
use crate::solver::LinearOperator;
use crate::sparse::CsrMatrix;
use crate::sphere::{dot, SphericalPoint};

/// Default relative sparsification threshold for `J`.
pub const DEFAULT_THRESHOLD: f64 = 0.01;

/// Off-diagonal pair layout for `n` replicates of `r` samples each.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VectorizationSpec {
    n: usize,
    r: usize,
}

impl VectorizationSpec {
    pub fn new(n: usize, r: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("n must be at least 1".into()));
        }
        if r < 2 {
            return Err(Error::InvalidArgument(format!("pairs need r >= 2, got {r}")));
        }
        Ok(Self { n, r })
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn r(&self) -> usize {
        self.r
    }
    /// `L = n r (r - 1)`.
    pub fn len(&self) -> usize {
        self.n * self.r * (self.r - 1)
    }
    pub fn is_empty(&self) -> bool {
        false
    }
    /// `n r^2`, the dimension before the diagonal pairs are removed.
    pub fn full_len(&self) -> usize {
        self.n * self.r * self.r
    }
}

/// 1-based `l = (i-1) r (r-1) + (k-1)(r-1) + j - 1{j > k}`.
pub fn vec_index(i: usize, j: usize, k: usize, spec: &VectorizationSpec) -> Result<usize> {
    let r = spec.r;
    if i == 0 || i > spec.n || j == 0 || j > r || k == 0 || k > r {
        return Err(Error::IndexOutOfRange(format!(
            "({i}, {j}, {k}) outside n = {}, r = {r}",
            spec.n
        )));
    }
    if j == k {
        return Err(Error::InvalidArgument(format!("diagonal pair j = k = {j} has no index")));
    }
    Ok((i - 1) * r * (r - 1) + (k - 1) * (r - 1) + j - usize::from(j > k))
}

/// Inverse of [`vec_index`].
pub fn inv_vec_index(l: usize, spec: &VectorizationSpec) -> Result<(usize, usize, usize)> {
    if l == 0 || l > spec.len() {
        return Err(Error::IndexOutOfRange(format!("index {l} outside [1, {}]", spec.len())));
    }
    let r = spec.r;
    let l0 = l - 1;
    let i = 1 + l0 / (r * (r - 1));
    let m = l0 % (r * (r - 1));
    let k = 1 + m / (r - 1);
    let h = m % (r - 1);
    let j = h + 1 + usize::from(h + 1 >= k);
    Ok((i, j, k))
}

/// 0-based offset of pair `(j, k)`, `j != k`, inside one replicate's block.
#[inline]
fn pair_offset(j: usize, k: usize, r: usize) -> usize {
    k * (r - 1) + j - usize::from(j > k)
}

fn constant_r(locations: &[Vec<SphericalPoint>]) -> Result<usize> {
    let r = locations.first().map(Vec::len).ok_or(Error::EmptyInput("no replicates"))?;
    if r == 0 {
        return Err(Error::EmptyInput("replicates have no samples"));
    }
    if locations.iter().any(|l| l.len() != r) {
        return Err(Error::RaggedReplicates);
    }
    Ok(r)
}

/// `J_{(p,g),(q,h)} = psi(<u_pg, u_qh>)`, entries with `|psi| < threshold_frac psi(1)`
/// dropped. Diagonal entries are always stored.
pub fn build_j(
    locations: &[Vec<SphericalPoint>],
    kernel: &ZonalKernel,
    threshold_frac: f64,
) -> Result<CsrMatrix> {
    if !(threshold_frac >= 0.0 && threshold_frac.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "threshold must be finite and >= 0, got {threshold_frac}"
        )));
    }
    let r = constant_r(locations)?;
    let points: Vec<SphericalPoint> = locations.iter().flatten().copied().collect();
    let m = points.len();
    let cut = threshold_frac * kernel.at_one().abs();
    let rows: Vec<(Vec<usize>, Vec<f64>)> = (0..m)
        .into_par_iter()
        .map(|a| {
            let mut cols = Vec::new();
            let mut vals = Vec::new();
            for (b, pb) in points.iter().enumerate() {
                let v = if a == b { kernel.at_one() } else { kernel.eval(dot(&points[a], pb)) };
                if a == b || v.abs() >= cut {
                    cols.push(b);
                    vals.push(v);
                }
            }
            (cols, vals)
        })
        .collect();
    debug_assert_eq!(m % r, 0);
    let mut offsets = Vec::with_capacity(m + 1);
    offsets.push(0);
    let mut indices = Vec::new();
    let mut values = Vec::new();
    for (c, v) in rows {
        indices.extend(c);
        values.extend(v);
        offsets.push(indices.len());
    }
    CsrMatrix::from_parts(m, m, offsets, indices, values)
}

/// Dense `r x r` blocks of `J`, `None` where a block has no stored entry.
#[derive(Debug, Clone)]
pub struct BlockGram {
    n: usize,
    r: usize,
    blocks: Vec<Option<Box<[f64]>>>,
}

impl BlockGram {
    pub fn from_csr(j: &CsrMatrix, r: usize) -> Result<Self> {
        if r == 0 || j.rows() != j.cols() || !j.rows().is_multiple_of(r) {
            return Err(Error::DimensionMismatch { expected: r, got: j.rows() });
        }
        let n = j.rows() / r;
        let mut blocks: Vec<Option<Box<[f64]>>> = vec![None; n * n];
        for row in 0..j.rows() {
            let (p, g) = (row / r, row % r);
            let (cols, vals) = j.row(row);
            for (&col, &v) in cols.iter().zip(vals) {
                let (q, h) = (col / r, col % r);
                let block = blocks[p * n + q].get_or_insert_with(|| vec![0.0; r * r].into());
                block[g * r + h] = v;
            }
        }
        Ok(Self { n, r, blocks })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn r(&self) -> usize {
        self.r
    }
    /// Row-major block `J_pq`.
    pub fn block(&self, p: usize, q: usize) -> Option<&[f64]> {
        self.blocks[p * self.n + q].as_deref()
    }
    pub fn nonzero_blocks(&self) -> usize {
        self.blocks.iter().filter(|b| b.is_some()).count()
    }
}

/// Number of stored entries of `H` for a thresholded `J`, without assembling it:
/// per block, `nnz^2 - sum row_count^2 - sum col_count^2 + nnz`.
pub fn h_nnz(j: &CsrMatrix, r: usize) -> Result<u64> {
    let blocks = BlockGram::from_csr(j, r)?;
    let n = blocks.n;
    let mut total = 0u64;
    for p in 0..n {
        for q in 0..n {
            let Some(b) = blocks.block(p, q) else { continue };
            let mut row_cnt = vec![0u64; r];
            let mut col_cnt = vec![0u64; r];
            let mut nnz = 0u64;
            for g in 0..r {
                for h in 0..r {
                    if b[g * r + h] != 0.0 || (p == q && g == h) {
                        row_cnt[g] += 1;
                        col_cnt[h] += 1;
                        nnz += 1;
                    }
                }
            }
            let sq = |c: &[u64]| c.iter().map(|x| x * x).sum::<u64>();
            total += nnz * nnz + nnz - sq(&row_cnt) - sq(&col_cnt);
        }
    }
    Ok(total)
}

/// `H = S (J * J) S^T`: entry `((p,j,k), (q,j',k'))` is `J_pq[j,j'] J_pq[k,k']`,
/// diagonal pairs `j = k` removed. Rows follow [`vec_index`] order.
pub fn build_h_sparse(j: &CsrMatrix, spec: &VectorizationSpec) -> Result<CsrMatrix> {
    let (n, r) = (spec.n, spec.r);
    if j.rows() != n * r || j.cols() != n * r {
        return Err(Error::DimensionMismatch { expected: n * r, got: j.rows() });
    }
    let blocks = BlockGram::from_csr(j, r)?;
    let per = r * (r - 1);
    // Each replicate p owns a contiguous run of r(r-1) rows.
    let row_blocks: Vec<Vec<(Vec<usize>, Vec<f64>)>> = (0..n)
        .into_par_iter()
        .map(|p| {
            let mut rows = Vec::with_capacity(per);
            for k in 0..r {
                for jj in (0..r).filter(|&jj| jj != k) {
                    let mut cols = Vec::new();
                    let mut vals = Vec::new();
                    for q in 0..n {
                        let Some(b) = blocks.block(p, q) else { continue };
                        for k2 in 0..r {
                            let bk = b[k * r + k2];
                            if bk == 0.0 {
                                continue;
                            }
                            for j2 in (0..r).filter(|&j2| j2 != k2) {
                                let bj = b[jj * r + j2];
                                if bj != 0.0 {
                                    cols.push(q * per + pair_offset(j2, k2, r));
                                    vals.push(bj * bk);
                                }
                            }
                        }
                    }
                    rows.push((cols, vals));
                }
            }
            rows
        })
        .collect();
    let mut offsets = Vec::with_capacity(spec.len() + 1);
    offsets.push(0);
    let mut indices = Vec::new();
    let mut values = Vec::new();
    for (c, v) in row_blocks.into_iter().flatten() {
        indices.extend(c);
        values.extend(v);
        offsets.push(indices.len());
    }
    CsrMatrix::from_parts(spec.len(), spec.len(), offsets, indices, values)
}

/// Mean-estimator Gram: `psi(<u_a, u_b>) / sqrt(r_a r_b)` over all samples.
pub fn build_mean_gram(dataset: &Dataset, kernel: &ZonalKernel) -> DMatrix<f64> {
    let (pts, scale): (Vec<SphericalPoint>, Vec<f64>) = dataset
        .replicates()
        .iter()
        .flat_map(|rep| {
            let s = 1.0 / (rep.len() as f64).sqrt();
            rep.locations.iter().map(move |u| (*u, s))
        })
        .unzip();
    let m = pts.len();
    let mut g = DMatrix::zeros(m, m);
    for a in 0..m {
        for b in 0..=a {
            let v = kernel.eval(dot(&pts[a], &pts[b])) * scale[a] * scale[b];
            g[(a, b)] = v;
            g[(b, a)] = v;
        }
    }
    g
}

/// Ordered off-diagonal pairs `(replicate, j, k)` in [`vec_index`] order,
/// replicate by replicate.
pub fn offdiagonal_pairs(r_list: &[usize]) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for (i, &r) in r_list.iter().enumerate() {
        for k in 0..r {
            for j in (0..r).filter(|&j| j != k) {
                out.push((i, j, k));
            }
        }
    }
    out
}

/// Dense second-moment Gram with `1 / sqrt(r_1 (r_1 - 1) r_2 (r_2 - 1))` weights;
/// valid for unequal replicate sizes.
pub fn build_h_general(dataset: &Dataset, kernel: &ZonalKernel) -> Result<DMatrix<f64>> {
    dataset.require_pairs()?;
    let reps = dataset.replicates();
    let pairs = offdiagonal_pairs(&dataset.r_list());
    let norm: Vec<f64> = reps
        .iter()
        .map(|rep| {
            let r = rep.len() as f64;
            1.0 / (r * (r - 1.0)).sqrt()
        })
        .collect();
    let len = pairs.len();
    let rows: Vec<Vec<f64>> = (0..len)
        .into_par_iter()
        .map(|a| {
            let (p, j1, k1) = pairs[a];
            let (u1, v1) = (&reps[p].locations[j1], &reps[p].locations[k1]);
            pairs
                .iter()
                .map(|&(q, j2, k2)| {
                    let (u2, v2) = (&reps[q].locations[j2], &reps[q].locations[k2]);
                    kernel.eval(dot(u1, u2)) * kernel.eval(dot(v1, v2)) * norm[p] * norm[q]
                })
                .collect()
        })
        .collect();
    Ok(DMatrix::from_fn(len, len, |a, b| rows[a][b]))
}

/// Which pairs a [`KhatriRaoOperator`] acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairLayout {
    /// `(U_ij, U_ik)`, `j != k`, in [`vec_index`] order.
    OffDiagonal,
    /// `(U_{t+h,j}, U_{t,k})` for `t < n - h` and all `j, k`, index `t r^2 + k r + j`.
    Lag(usize),
}

impl PairLayout {
    pub fn len(&self, n: usize, r: usize) -> usize {
        match *self {
            PairLayout::OffDiagonal => n * r * (r - 1),
            PairLayout::Lag(h) => n.saturating_sub(h) * r * r,
        }
    }

    /// `(left replicate, j, right replicate, k)` for every pair, in index order.
    pub fn pairs(&self, n: usize, r: usize) -> Vec<(usize, usize, usize, usize)> {
        match *self {
            PairLayout::OffDiagonal => offdiagonal_pairs(&vec![r; n])
                .into_iter()
                .map(|(i, j, k)| (i, j, i, k))
                .collect(),
            PairLayout::Lag(h) => {
                let mut out = Vec::with_capacity(self.len(n, r));
                for t in 0..n.saturating_sub(h) {
                    for k in 0..r {
                        for j in 0..r {
                            out.push((t + h, j, t, k));
                        }
                    }
                }
                out
            }
        }
    }
}

/// Matrix-free `H + ridge I` on the pair space of a [`PairLayout`].
///
/// For pair blocks `B_s` (r x r, `B[j,k]`) the product is
/// `Y_t = sum_s J_{t+h,s+h} B_s J_{t,s}^T`, with `h = 0` and diagonals
/// zeroed for the off-diagonal layout. An optional mask restricts the system to
/// the active pairs; inactive coordinates are decoupled with unit diagonal.
pub struct KhatriRaoOperator<'a> {
    gram: &'a BlockGram,
    layout: PairLayout,
    ridge: f64,
    mask: Option<&'a [bool]>,
}

impl<'a> KhatriRaoOperator<'a> {
    pub fn new(gram: &'a BlockGram, layout: PairLayout, ridge: f64) -> Result<Self> {
        if let PairLayout::Lag(h) = layout {
            if h >= gram.n {
                return Err(Error::InsufficientData(format!(
                    "lag {h} needs more than {} replicates",
                    gram.n
                )));
            }
        }
        if gram.r < 2 && layout == PairLayout::OffDiagonal {
            return Err(Error::InvalidArgument("pairs need r >= 2".into()));
        }
        Ok(Self { gram, layout, ridge, mask: None })
    }

    pub fn with_mask(mut self, mask: &'a [bool]) -> Result<Self> {
        if mask.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: mask.len() });
        }
        self.mask = Some(mask);
        Ok(self)
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    fn lag(&self) -> usize {
        match self.layout {
            PairLayout::OffDiagonal => 0,
            PairLayout::Lag(h) => h,
        }
    }

    fn blocks_len(&self) -> usize {
        self.gram.n - self.lag()
    }

    /// Pair vector to `r x r` row-major blocks `B[j,k]`.
    fn scatter(&self, x: &[f64]) -> Vec<f64> {
        let r = self.gram.r;
        let mut out = vec![0.0; self.blocks_len() * r * r];
        match self.layout {
            PairLayout::OffDiagonal => {
                let per = r * (r - 1);
                for (t, chunk) in x.chunks_exact(per).enumerate() {
                    let b = &mut out[t * r * r..(t + 1) * r * r];
                    for k in 0..r {
                        for j in (0..r).filter(|&j| j != k) {
                            b[j * r + k] = chunk[pair_offset(j, k, r)];
                        }
                    }
                }
            }
            PairLayout::Lag(_) => {
                for (t, chunk) in x.chunks_exact(r * r).enumerate() {
                    let b = &mut out[t * r * r..(t + 1) * r * r];
                    for k in 0..r {
                        for j in 0..r {
                            b[j * r + k] = chunk[k * r + j];
                        }
                    }
                }
            }
        }
        out
    }

    fn gather(&self, t: usize, block: &[f64], y: &mut [f64]) {
        let r = self.gram.r;
        match self.layout {
            PairLayout::OffDiagonal => {
                let per = r * (r - 1);
                let out = &mut y[t * per..(t + 1) * per];
                for k in 0..r {
                    for j in (0..r).filter(|&j| j != k) {
                        out[pair_offset(j, k, r)] = block[j * r + k];
                    }
                }
            }
            PairLayout::Lag(_) => {
                let out = &mut y[t * r * r..(t + 1) * r * r];
                for k in 0..r {
                    for j in 0..r {
                        out[k * r + j] = block[j * r + k];
                    }
                }
            }
        }
    }

    /// `y = H x` without ridge or mask.
    pub fn apply_gram(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.dim());
        assert_eq!(y.len(), self.dim());
        let r = self.gram.r;
        let h = self.lag();
        let nb = self.blocks_len();
        let b = self.scatter(x);
        let out: Vec<Vec<f64>> = (0..nb)
            .into_par_iter()
            .map(|t| {
                let mut acc = vec![0.0; r * r];
                let mut tmp = vec![0.0; r * r];
                for s in 0..nb {
                    let (Some(a), Some(c)) =
                        (self.gram.block(t + h, s + h), self.gram.block(t, s))
                    else {
                        continue;
                    };
                    let bs = &b[s * r * r..(s + 1) * r * r];
                    // tmp = A B_s
                    tmp.iter_mut().for_each(|v| *v = 0.0);
                    for i in 0..r {
                        let trow = &mut tmp[i * r..(i + 1) * r];
                        for l in 0..r {
                            let ail = a[i * r + l];
                            if ail != 0.0 {
                                let brow = &bs[l * r..(l + 1) * r];
                                for (tv, bv) in trow.iter_mut().zip(brow) {
                                    *tv += ail * bv;
                                }
                            }
                        }
                    }
                    // acc += tmp C^T
                    for i in 0..r {
                        let trow = &tmp[i * r..(i + 1) * r];
                        for kk in 0..r {
                            let crow = &c[kk * r..(kk + 1) * r];
                            acc[i * r + kk] +=
                                trow.iter().zip(crow).map(|(u, v)| u * v).sum::<f64>();
                        }
                    }
                }
                acc
            })
            .collect();
        for (t, block) in out.iter().enumerate() {
            self.gather(t, block, y);
        }
    }
}

impl LinearOperator for KhatriRaoOperator<'_> {
    fn dim(&self) -> usize {
        self.layout.len(self.gram.n, self.gram.r)
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        match self.mask {
            None => {
                self.apply_gram(x, y);
                for (yi, xi) in y.iter_mut().zip(x) {
                    *yi += self.ridge * xi;
                }
            }
            Some(mask) => {
                let xm: Vec<f64> =
                    x.iter().zip(mask).map(|(v, &m)| if m { *v } else { 0.0 }).collect();
                self.apply_gram(&xm, y);
                for ((yi, xi), &m) in y.iter_mut().zip(x).zip(mask) {
                    *yi = if m { *yi + self.ridge * xi } else { *xi };
                }
            }
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        let r = self.gram.r;
        let h = self.lag();
        let pairs = self.layout.pairs(self.gram.n, r);
        pairs
            .iter()
            .enumerate()
            .map(|(idx, &(_, j, t, k))| {
                if self.mask.is_some_and(|m| !m[idx]) {
                    return 1.0;
                }
                let a = self.gram.block(t + h, t + h).map_or(0.0, |b| b[j * r + j]);
                let c = self.gram.block(t, t).map_or(0.0, |b| b[k * r + k]);
                a * c + self.ridge
            })
            .collect()
    }
}

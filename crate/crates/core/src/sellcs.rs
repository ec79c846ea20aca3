//! SELL-C-σ sparse storage.
//!
//! Rows are sorted by descending length inside scopes of `sigma` consecutive
//! rows, then cut into chunks of `c` rows. Each chunk is padded to its longest
//! row and stored column-wise: entry `j` of the row in slot `r` of chunk `k`
//! sits at `chunk_offset[k] + j * c + r`. Padding has value 0 and column 0.
//!
//! `SELL-1-1` is plain CRS, `SELL-n-1` (one chunk) is ELLPACK.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use crate::densemat::{MatMut, MatRef};
use crate::error::{invalid, Error, Result};
use crate::index::{to_lidx, Gidx, Lidx};
use crate::par::{self, SharedMut};
use crate::scalar::Scalar;

const MIN_BLOCK_ROWS: usize = 256;
const MIN_BLOCK_CHUNKS: usize = 16;

/// Chunk height `c` and sorting scope `sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SellParams {
    c: usize,
    sigma: usize,
}

impl SellParams {
    pub fn new(c: usize, sigma: usize) -> Result<Self> {
        if c == 0 || sigma == 0 {
            return Err(invalid(format!("SELL-{c}-{sigma}: C and sigma must be positive")));
        }
        if sigma != 1 && !sigma.is_multiple_of(c) {
            return Err(invalid(format!("SELL-{c}-{sigma}: sigma must be 1 or a multiple of C")));
        }
        Ok(Self { c, sigma })
    }

    /// Plain CRS layout.
    pub fn crs() -> Self {
        Self { c: 1, sigma: 1 }
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn sigma(&self) -> usize {
        self.sigma
    }
}

impl fmt::Display for SellParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SELL-{}-{}", self.c, self.sigma)
    }
}

/// Row permutation: `perm[old] = new`, `inv[new] = old`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    pub perm: Vec<usize>,
    pub inv: Vec<usize>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Self { perm: (0..n).collect(), inv: (0..n).collect() }
    }

    pub fn is_identity(&self) -> bool {
        self.inv.iter().enumerate().all(|(i, &v)| i == v)
    }
}

/// Stable descending sort of row lengths inside each scope of `sigma` rows.
/// The last scope may be shorter and is sorted on its own.
pub fn sigma_permutation(rowlens: &[usize], sigma: usize) -> Permutation {
    let n = rowlens.len();
    let mut inv: Vec<usize> = (0..n).collect();
    if sigma > 1 {
        for scope in inv.chunks_mut(sigma) {
            scope.sort_by(|&a, &b| rowlens[b].cmp(&rowlens[a]));
        }
    }
    let mut perm = vec![0; n];
    for (new, &old) in inv.iter().enumerate() {
        perm[old] = new;
    }
    Permutation { perm, inv }
}

/// Row-wise access to a sparse matrix.
///
/// `row` must be pure: the same row always yields the same entries.
pub trait RowSource<S>: Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    /// Upper bound on the entries of any row.
    fn max_rowlen(&self) -> usize;
    /// Replaces the contents of `cols` and `vals` with the entries of `row`.
    fn row(&self, row: Gidx, cols: &mut Vec<Gidx>, vals: &mut Vec<S>);
}

/// A [`RowSource`] backed by a closure.
pub struct FnRowSource<F> {
    nrows: usize,
    ncols: usize,
    max_rowlen: usize,
    f: F,
}

impl<F> FnRowSource<F> {
    pub fn new(nrows: usize, ncols: usize, max_rowlen: usize, f: F) -> Self {
        Self { nrows, ncols, max_rowlen, f }
    }
}

impl<S, F> RowSource<S> for FnRowSource<F>
where
    F: Fn(Gidx, &mut Vec<Gidx>, &mut Vec<S>) + Sync,
{
    fn nrows(&self) -> usize {
        self.nrows
    }
    fn ncols(&self) -> usize {
        self.ncols
    }
    fn max_rowlen(&self) -> usize {
        self.max_rowlen
    }
    fn row(&self, row: Gidx, cols: &mut Vec<Gidx>, vals: &mut Vec<S>) {
        cols.clear();
        vals.clear();
        (self.f)(row, cols, vals)
    }
}

/// Compressed row storage.
#[derive(Debug, Clone, PartialEq)]
pub struct CrsData<S> {
    pub nrows: usize,
    pub ncols: usize,
    pub rowptr: Vec<i64>,
    pub col: Vec<i64>,
    pub val: Vec<S>,
}

impl<S: Scalar> CrsData<S> {
    /// Checks the structural invariants.
    pub fn new(nrows: usize, ncols: usize, rowptr: Vec<i64>, col: Vec<i64>, val: Vec<S>) -> Result<Self> {
        let crs = Self { nrows, ncols, rowptr, col, val };
        crs.validate()?;
        Ok(crs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rowptr.len() != self.nrows + 1 || self.rowptr[0] != 0 {
            return Err(invalid("rowptr must have nrows+1 entries starting at 0"));
        }
        if self.rowptr.windows(2).any(|w| w[0] > w[1]) {
            return Err(invalid("rowptr must be non-decreasing"));
        }
        let nnz = *self.rowptr.last().unwrap() as usize;
        if self.col.len() != nnz || self.val.len() != nnz {
            return Err(invalid(format!(
                "rowptr ends at {nnz}, but col/val have {}/{} entries",
                self.col.len(),
                self.val.len()
            )));
        }
        for i in 0..self.nrows {
            let cols = &self.col[self.row_range(i)];
            if let Some(&c) = cols.iter().find(|&&c| c < 0 || c as usize >= self.ncols) {
                return Err(Error::InvalidColumn { row: i, col: c, ncols: self.ncols });
            }
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(invalid(format!("columns of row {i} are not strictly increasing")));
            }
        }
        Ok(())
    }

    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, entries: &[(usize, usize, S)]) -> Result<Self> {
        let mut rows: Vec<BTreeMap<usize, S>> = vec![BTreeMap::new(); nrows];
        for &(i, j, v) in entries {
            if i >= nrows || j >= ncols {
                return Err(Error::InvalidColumn { row: i, col: j as i64, ncols });
            }
            *rows[i].entry(j).or_insert_with(S::zero) += v;
        }
        let mut rowptr = vec![0i64];
        let (mut col, mut val) = (Vec::new(), Vec::new());
        for r in rows {
            for (j, v) in r {
                col.push(j as i64);
                val.push(v);
            }
            rowptr.push(col.len() as i64);
        }
        Ok(Self { nrows, ncols, rowptr, col, val })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            rowptr: (0..=n as i64).collect(),
            col: (0..n as i64).collect(),
            val: vec![S::one(); n],
        }
    }

    pub fn nnz(&self) -> usize {
        self.val.len()
    }

    pub fn row_range(&self, i: usize) -> Range<usize> {
        self.rowptr[i] as usize..self.rowptr[i + 1] as usize
    }

    pub fn rowlens(&self) -> Vec<usize> {
        self.rowptr.windows(2).map(|w| (w[1] - w[0]) as usize).collect()
    }

    /// Dense row-major copy, for small test matrices.
    pub fn to_dense(&self) -> Vec<Vec<S>> {
        let mut d = vec![vec![S::zero(); self.ncols]; self.nrows];
        for (i, row) in d.iter_mut().enumerate() {
            for k in self.row_range(i) {
                row[self.col[k] as usize] += self.val[k];
            }
        }
        d
    }
}

impl<S: Scalar> RowSource<S> for CrsData<S> {
    fn nrows(&self) -> usize {
        self.nrows
    }
    fn ncols(&self) -> usize {
        self.ncols
    }
    fn max_rowlen(&self) -> usize {
        self.rowptr.windows(2).map(|w| (w[1] - w[0]) as usize).max().unwrap_or(0)
    }
    fn row(&self, row: Gidx, cols: &mut Vec<Gidx>, vals: &mut Vec<S>) {
        let r = self.row_range(row as usize);
        cols.clear();
        vals.clear();
        cols.extend_from_slice(&self.col[r.clone()]);
        vals.extend_from_slice(&self.val[r]);
    }
}

/// Replaceable operator slot: computes the plain product `A x` into the
/// output (rows in original order), bypassing the stored arrays.
pub type MatrixFreeOp<S> = Arc<dyn Fn(&MatRef<'_, S>, &mut MatMut<'_, S>) -> Result<()> + Send + Sync>;

/// Summary of the storage overhead.
#[derive(Debug, Clone, PartialEq)]
pub struct StorageStats {
    pub beta: f64,
    pub bytes_total: usize,
    /// Chunk length -> number of chunks.
    pub chunk_hist: BTreeMap<usize, usize>,
}

/// Sparse matrix in SELL-C-σ layout.
#[derive(Clone)]
pub struct SellMatrix<S> {
    nrows: usize,
    ncols: usize,
    nrows_padded: usize,
    nnz: usize,
    params: SellParams,
    chunk_len: Vec<Lidx>,
    chunk_offset: Vec<i64>,
    /// Row lengths in permuted order.
    rowlen: Vec<Lidx>,
    val: Vec<S>,
    col: Vec<Lidx>,
    perm: Permutation,
    beta: f64,
    operator: Option<MatrixFreeOp<S>>,
}

impl<S> fmt::Debug for SellMatrix<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SellMatrix")
            .field("nrows", &self.nrows)
            .field("ncols", &self.ncols)
            .field("nnz", &self.nnz)
            .field("params", &self.params)
            .field("beta", &self.beta)
            .field("matrix_free", &self.operator.is_some())
            .finish_non_exhaustive()
    }
}

struct RowBuf<S> {
    cols: Vec<Gidx>,
    vals: Vec<S>,
}

impl<S: Scalar> SellMatrix<S> {
    /// Builds from all rows of `source`.
    pub fn build(source: &impl RowSource<S>, params: SellParams) -> Result<Self> {
        let ncols = source.ncols();
        Self::build_mapped(source, 0..source.nrows(), ncols, params, Some)
    }

    pub fn from_crs(crs: &CrsData<S>, params: SellParams) -> Result<Self> {
        Self::build(crs, params)
    }

    /// Builds from the rows `rows` of `source`, keeping the entries whose
    /// column `map` sends to `Some(local column)`; other entries are dropped.
    /// Local columns must lie in `0..ncols`.
    pub fn build_mapped<F>(
        source: &impl RowSource<S>,
        rows: Range<usize>,
        ncols: usize,
        params: SellParams,
        map: F,
    ) -> Result<Self>
    where
        F: Fn(Gidx) -> Option<Gidx> + Sync,
    {
        if rows.end > source.nrows() {
            return Err(invalid(format!("rows {rows:?} outside 0..{}", source.nrows())));
        }
        to_lidx(ncols)?;
        let nrows = rows.len();
        let c = params.c;
        let max_rowlen = source.max_rowlen();
        let src_ncols = source.ncols();

        let fetch = |i: usize, buf: &mut RowBuf<S>| -> Result<()> {
            let g = rows.start + i;
            source.row(g as Gidx, &mut buf.cols, &mut buf.vals);
            if buf.cols.len() != buf.vals.len() {
                return Err(invalid(format!("row {g}: {} columns but {} values", buf.cols.len(), buf.vals.len())));
            }
            if buf.cols.len() > max_rowlen {
                return Err(Error::RowTooLong { row: g, len: buf.cols.len(), max: max_rowlen });
            }
            let mut keep = 0;
            for k in 0..buf.cols.len() {
                let gc = buf.cols[k];
                if gc < 0 || gc as usize >= src_ncols {
                    return Err(Error::InvalidColumn { row: g, col: gc, ncols: src_ncols });
                }
                if let Some(lc) = map(gc) {
                    if lc < 0 || lc as usize >= ncols {
                        return Err(Error::InvalidColumn { row: g, col: lc, ncols });
                    }
                    buf.cols[keep] = lc;
                    buf.vals[keep] = buf.vals[k];
                    keep += 1;
                }
            }
            buf.cols.truncate(keep);
            buf.vals.truncate(keep);
            Ok(())
        };
        let new_buf = || RowBuf { cols: Vec::with_capacity(max_rowlen), vals: Vec::with_capacity(max_rowlen) };

        // pass 1: row lengths
        let parts = par::map_blocks(nrows, MIN_BLOCK_ROWS, |range| -> Result<Vec<usize>> {
            let mut buf = new_buf();
            range
                .map(|i| {
                    fetch(i, &mut buf)?;
                    Ok(buf.cols.len())
                })
                .collect()
        });
        let mut rowlens = Vec::with_capacity(nrows);
        for p in parts {
            rowlens.extend(p?);
        }

        let perm = sigma_permutation(&rowlens, params.sigma);
        let nchunks = nrows.div_ceil(c);
        let nrows_padded = nchunks * c;
        let mut rowlen = vec![0 as Lidx; nrows_padded];
        for (new, &old) in perm.inv.iter().enumerate() {
            rowlen[new] = to_lidx(rowlens[old])?;
        }
        let chunk_len: Vec<Lidx> =
            (0..nchunks).map(|k| rowlen[k * c..(k + 1) * c].iter().copied().max().unwrap_or(0)).collect();
        let mut chunk_offset = Vec::with_capacity(nchunks + 1);
        chunk_offset.push(0i64);
        for &l in &chunk_len {
            chunk_offset.push(chunk_offset.last().unwrap() + (l as i64) * c as i64);
        }
        let total = *chunk_offset.last().unwrap() as usize;
        let nnz: usize = rowlens.iter().sum();

        // pass 2: entries, chunks written independently
        let mut val = vec![S::zero(); total];
        let mut col = vec![0 as Lidx; total];
        let vp = SharedMut::new(&mut val);
        let cp = SharedMut::new(&mut col);
        let parts = par::map_blocks(nchunks, MIN_BLOCK_CHUNKS, |chunks| -> Result<()> {
            let mut buf = new_buf();
            for k in chunks {
                let off = chunk_offset[k] as usize;
                for r in 0..c {
                    let new = k * c + r;
                    if new >= nrows {
                        break;
                    }
                    fetch(perm.inv[new], &mut buf)?;
                    if buf.cols.len() != rowlen[new] as usize {
                        return Err(invalid(format!("row {} is not pure", rows.start + perm.inv[new])));
                    }
                    for (j, (&lc, &v)) in buf.cols.iter().zip(&buf.vals).enumerate() {
                        let idx = off + j * c + r;
                        // SAFETY: idx lies inside chunk k, which only this worker writes.
                        unsafe {
                            *vp.get(idx) = v;
                            *cp.get(idx) = lc as Lidx;
                        }
                    }
                }
            }
            Ok(())
        });
        for p in parts {
            p?;
        }

        let beta = if total == 0 { 1.0 } else { nnz as f64 / total as f64 };
        Ok(Self {
            nrows,
            ncols,
            nrows_padded,
            nnz,
            params,
            chunk_len,
            chunk_offset,
            rowlen,
            val,
            col,
            perm,
            beta,
            operator: None,
        })
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nrows_padded(&self) -> usize {
        self.nrows_padded
    }

    pub fn nnz(&self) -> usize {
        self.nnz
    }

    pub fn params(&self) -> SellParams {
        self.params
    }

    pub fn nchunks(&self) -> usize {
        self.chunk_len.len()
    }

    pub fn chunk_len(&self) -> &[Lidx] {
        &self.chunk_len
    }

    pub fn chunk_offset(&self) -> &[i64] {
        &self.chunk_offset
    }

    /// Row lengths in storage (permuted) order, padded rows included.
    pub fn rowlen(&self) -> &[Lidx] {
        &self.rowlen
    }

    pub fn val(&self) -> &[S] {
        &self.val
    }

    pub fn col(&self) -> &[Lidx] {
        &self.col
    }

    /// `row_perm()[old] = new`.
    pub fn row_perm(&self) -> &[usize] {
        &self.perm.perm
    }

    /// `row_perm_inv()[new] = old`.
    pub fn row_perm_inv(&self) -> &[usize] {
        &self.perm.inv
    }

    /// Fraction of stored slots that hold nonzeros.
    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn set_operator(&mut self, op: Option<MatrixFreeOp<S>>) {
        self.operator = op;
    }

    pub fn operator(&self) -> Option<&MatrixFreeOp<S>> {
        self.operator.as_ref()
    }

    /// Replaces the values, keeping the layout. `source` must have the pattern
    /// the matrix was built from.
    pub fn update_values(&mut self, source: &CrsData<S>) -> Result<()> {
        if source.nrows != self.nrows {
            return Err(Error::PatternMismatch(format!("{} rows, expected {}", source.nrows, self.nrows)));
        }
        let c = self.params.c;
        let mut val = self.val.clone();
        for (new, &old) in self.perm.inv.iter().enumerate() {
            let range = source.row_range(old);
            let len = self.rowlen[new] as usize;
            if range.len() != len {
                return Err(Error::PatternMismatch(format!("row {old} has {} entries, expected {len}", range.len())));
            }
            let base = self.chunk_offset[new / c] as usize + new % c;
            for (j, k) in range.enumerate() {
                let idx = base + j * c;
                if source.col[k] != self.col[idx] as i64 {
                    return Err(Error::PatternMismatch(format!("row {old}, entry {j}: column {}", source.col[k])));
                }
                val[idx] = source.val[k];
            }
        }
        self.val = val;
        Ok(())
    }

    /// Unpermuted CRS with the original within-row order.
    pub fn to_crs(&self) -> CrsData<S> {
        let c = self.params.c;
        let mut rowptr = Vec::with_capacity(self.nrows + 1);
        rowptr.push(0i64);
        let mut col = Vec::with_capacity(self.nnz);
        let mut val = Vec::with_capacity(self.nnz);
        for old in 0..self.nrows {
            let new = self.perm.perm[old];
            let base = self.chunk_offset[new / c] as usize + new % c;
            for j in 0..self.rowlen[new] as usize {
                col.push(self.col[base + j * c] as i64);
                val.push(self.val[base + j * c]);
            }
            rowptr.push(col.len() as i64);
        }
        CrsData { nrows: self.nrows, ncols: self.ncols, rowptr, col, val }
    }

    /// Beta, total bytes and a histogram of chunk lengths. Bookkeeping counts
    /// the chunk offsets (8 B), chunk lengths, row lengths and both
    /// permutation vectors (4 B each).
    pub fn storage_stats(&self) -> StorageStats {
        let slots = self.val.len();
        let bookkeeping = 8 * self.chunk_offset.len() + 4 * (self.chunk_len.len() + self.rowlen.len() + 2 * self.nrows);
        let mut chunk_hist = BTreeMap::new();
        for &l in &self.chunk_len {
            *chunk_hist.entry(l as usize).or_insert(0) += 1;
        }
        StorageStats { beta: self.beta, bytes_total: (S::BYTES + 4) * slots + bookkeeping, chunk_hist }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn example() -> CrsData<f64> {
        CrsData::from_triplets(
            4,
            4,
            &[(0, 0, 1.0), (1, 0, 2.0), (1, 1, 3.0), (2, 2, 4.0), (3, 1, 5.0), (3, 2, 6.0), (3, 3, 7.0)],
        )
        .unwrap()
    }

    #[test]
    fn params_validation() {
        assert!(SellParams::new(0, 1).is_err());
        assert!(SellParams::new(4, 6).is_err());
        assert!(SellParams::new(4, 1).is_ok());
        assert!(SellParams::new(4, 8).is_ok());
        assert_eq!(SellParams::new(32, 1).unwrap().to_string(), "SELL-32-1");
    }

    #[test]
    fn sigma_sort() {
        assert_eq!(sigma_permutation(&[1, 2, 1, 3], 4).inv, vec![3, 1, 0, 2]);
        assert!(sigma_permutation(&[1, 2, 1, 3], 1).is_identity());
        assert!(sigma_permutation(&[2; 7], 4).is_identity());
        // scopes are never crossed, the short tail scope is sorted alone
        let p = sigma_permutation(&[1, 5, 2, 9, 3], 2);
        assert_eq!(p.inv, vec![1, 0, 3, 2, 4]);
        for (old, &new) in p.perm.iter().enumerate() {
            assert_eq!(p.inv[new], old);
        }
    }

    #[test]
    fn manual_layout() {
        let m = SellMatrix::from_crs(&example(), SellParams::new(2, 4).unwrap()).unwrap();
        assert_eq!(m.row_perm_inv(), &[3, 1, 0, 2]);
        assert_eq!(m.chunk_len(), &[3, 1]);
        assert_eq!(m.chunk_offset(), &[0, 6, 8]);
        assert_eq!(m.val(), &[5.0, 2.0, 6.0, 3.0, 7.0, 0.0, 1.0, 4.0]);
        assert_eq!(m.col(), &[1, 0, 2, 1, 3, 0, 0, 2]);
        assert_eq!(m.beta(), 0.875);

        let m = SellMatrix::from_crs(&example(), SellParams::new(2, 1).unwrap()).unwrap();
        assert_eq!(m.chunk_len(), &[2, 3]);
        assert_eq!(m.beta(), 0.7);
        assert_eq!(m.storage_stats().chunk_hist, BTreeMap::from([(2, 1), (3, 1)]));
    }

    #[test]
    fn identity_and_crs_special_case() {
        let id = CrsData::<f64>::identity(8);
        let m = SellMatrix::from_crs(&id, SellParams::new(4, 1).unwrap()).unwrap();
        assert!(m.chunk_len().iter().all(|&l| l == 1));
        assert_eq!(m.beta(), 1.0);
        assert!(m.perm.is_identity());

        // padding rows of a partial last chunk count as empty slots
        let m = SellMatrix::from_crs(&CrsData::<f64>::identity(5), SellParams::new(4, 1).unwrap()).unwrap();
        assert_eq!(m.nrows_padded(), 8);
        assert_eq!(m.beta(), 0.625);

        let a = example();
        let m = SellMatrix::from_crs(&a, SellParams::crs()).unwrap();
        assert_eq!(m.chunk_offset(), a.rowptr.as_slice());
        assert_eq!(m.val(), a.val.as_slice());
        assert_eq!(m.col().iter().map(|&c| c as i64).collect::<Vec<_>>(), a.col);
    }

    #[test]
    fn crs_round_trip_and_empty_rows() {
        let a = example();
        let m = SellMatrix::from_crs(&a, SellParams::new(2, 4).unwrap()).unwrap();
        assert_eq!(m.to_crs(), a);

        let e = CrsData::from_triplets(3, 3, &[(0, 1, 2.0), (2, 0, 1.0)]).unwrap();
        let back = SellMatrix::from_crs(&e, SellParams::new(2, 2).unwrap()).unwrap().to_crs();
        assert_eq!(back.rowptr, vec![0, 1, 1, 2]);
        assert_eq!(back, e);
    }

    #[test]
    fn value_updates() {
        let a = example();
        let mut m = SellMatrix::from_crs(&a, SellParams::new(2, 4).unwrap()).unwrap();
        let before = m.val().to_vec();
        m.update_values(&a).unwrap();
        assert_eq!(m.val(), before.as_slice());

        let mut doubled = a.clone();
        doubled.val.iter_mut().for_each(|v| *v *= 2.0);
        let cols = m.col().to_vec();
        m.update_values(&doubled).unwrap();
        assert_eq!(m.val(), before.iter().map(|v| v * 2.0).collect::<Vec<_>>().as_slice());
        assert_eq!(m.col(), cols.as_slice());

        let mut t: Vec<_> = (0..4)
            .flat_map(|i| a.row_range(i).map(move |k| (i, k)))
            .map(|(i, k)| (i, a.col[k] as usize, a.val[k]))
            .collect();
        t.push((0, 3, 1.0));
        let extra = CrsData::from_triplets(4, 4, &t).unwrap();
        assert!(matches!(m.update_values(&extra), Err(Error::PatternMismatch(_))));
    }

    #[test]
    fn construction_errors() {
        let bad_col = FnRowSource::new(2, 2, 2, |r: Gidx, c: &mut Vec<Gidx>, v: &mut Vec<f64>| {
            c.push(r * 2);
            v.push(1.0);
        });
        assert!(matches!(
            SellMatrix::build(&bad_col, SellParams::crs()),
            Err(Error::InvalidColumn { row: 1, col: 2, .. })
        ));
        let too_long = FnRowSource::new(2, 2, 1, |_r: Gidx, c: &mut Vec<Gidx>, v: &mut Vec<f64>| {
            c.extend([0, 1]);
            v.extend([1.0, 1.0]);
        });
        assert!(matches!(SellMatrix::build(&too_long, SellParams::crs()), Err(Error::RowTooLong { .. })));
    }
}

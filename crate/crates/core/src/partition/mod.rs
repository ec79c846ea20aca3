//! Row-wise distribution of a sparse matrix over simulated ranks.
//!
//! Each rank owns a contiguous block of rows and the same block of entries of
//! the input and output vectors. Its rows are split into a local part, whose
//! columns it owns, and a remote part referencing halo columns owned by other
//! ranks. Halo columns are renumbered densely in ascending (owner, global
//! column) order so that the values received from one neighbor form one
//! contiguous block.

mod dist;
mod transport;

use std::ops::Range;

use crate::error::{invalid, shape, Result};
use crate::index::Gidx;
use crate::scalar::Scalar;
use crate::sellcs::{RowSource, SellMatrix, SellParams};

pub use dist::{allreduce_sum, dist_spmv, halo_exchange, halo_finish, halo_start, HaloPending, OverlapMode};
pub use transport::{InProcess, MessageRecord, Recording, RecvRequest, Tag, Transport, TransportError, TAG_HALO, TAG_REDUCE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WeightMode {
    ByRows,
    ByNnz,
}

/// Relative work share of each rank.
#[derive(Debug, Clone, PartialEq)]
pub struct RankWeights {
    weights: Vec<f64>,
    mode: WeightMode,
}

impl RankWeights {
    pub fn new(weights: Vec<f64>, mode: WeightMode) -> Result<Self> {
        if weights.is_empty() {
            return Err(invalid("at least one rank weight is needed"));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(invalid(format!("rank weights must be positive, got {w}")));
        }
        Ok(Self { weights, mode })
    }

    pub fn equal(nranks: usize, mode: WeightMode) -> Result<Self> {
        Self::new(vec![1.0; nranks], mode)
    }

    /// Parses colon-separated weights such as `1:2.75`.
    pub fn parse(s: &str, mode: WeightMode) -> Result<Self> {
        let w = s
            .split(':')
            .map(|t| t.trim().parse::<f64>().map_err(|_| invalid(format!("bad weight {t:?} in {s:?}"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(w, mode)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mode(&self) -> WeightMode {
        self.mode
    }

    pub fn nranks(&self) -> usize {
        self.weights.len()
    }
}

/// Contiguous row ranges per rank. Columns are distributed the same way.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionPlan {
    row_offset: Vec<usize>,
}

impl PartitionPlan {
    /// Plan from explicit offsets: starts at 0, strictly increasing.
    pub fn from_offsets(row_offset: Vec<usize>) -> Result<Self> {
        if row_offset.len() < 2 || row_offset[0] != 0 || row_offset.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid(format!("row offsets {row_offset:?} must start at 0 and increase strictly")));
        }
        Ok(Self { row_offset })
    }

    pub fn nranks(&self) -> usize {
        self.row_offset.len() - 1
    }

    /// Global row count.
    pub fn n(&self) -> usize {
        *self.row_offset.last().unwrap()
    }

    pub fn row_offset(&self) -> &[usize] {
        &self.row_offset
    }

    pub fn range(&self, rank: usize) -> Range<usize> {
        self.row_offset[rank]..self.row_offset[rank + 1]
    }

    /// Rank owning a global row (or column).
    pub fn owner(&self, row: usize) -> usize {
        self.row_offset.partition_point(|&o| o <= row) - 1
    }
}

/// Splits `n` rows into one contiguous range per weight.
///
/// `ByRows` places boundary `i` at `n * cumweight_i / total` rounded half up.
/// `ByNnz` places it at the shortest prefix of rows whose nonzero count reaches
/// the same share of all nonzeros. Every rank gets at least one row: interior
/// boundaries are raised to one past their predecessor, then lowered so that
/// enough rows remain for the ranks after them.
pub fn compute_partition(n: usize, rowlens: Option<&[usize]>, weights: &RankWeights) -> Result<PartitionPlan> {
    let k = weights.nranks();
    if n == 0 {
        return Err(invalid("cannot partition an empty matrix"));
    }
    if k > n {
        return Err(invalid(format!("{k} ranks but only {n} rows")));
    }
    let total: f64 = weights.weights.iter().sum();
    let mut cum = 0.0;
    let shares: Vec<f64> = weights.weights[..k - 1]
        .iter()
        .map(|w| {
            cum += w;
            cum / total
        })
        .collect();

    let mut off = Vec::with_capacity(k + 1);
    off.push(0);
    match weights.mode {
        WeightMode::ByRows => {
            off.extend(shares.iter().map(|s| ((n as f64 * s + 0.5).floor() as usize).min(n)));
        }
        WeightMode::ByNnz => {
            let rl = rowlens.ok_or_else(|| invalid("ByNnz partitioning needs row lengths"))?;
            if rl.len() != n {
                return Err(shape(format!("{} row lengths for {n} rows", rl.len())));
            }
            let mut prefix = Vec::with_capacity(n + 1);
            prefix.push(0usize);
            for &l in rl {
                prefix.push(prefix.last().unwrap() + l);
            }
            let nnz = prefix[n] as f64;
            off.extend(shares.iter().map(|s| {
                let target = nnz * s;
                prefix.partition_point(|&p| (p as f64) < target).min(n)
            }));
        }
    }
    off.push(n);
    for i in 1..k {
        off[i] = off[i].max(off[i - 1] + 1);
    }
    for i in (1..k).rev() {
        off[i] = off[i].min(n - (k - i)).min(off[i + 1] - 1);
    }
    PartitionPlan::from_offsets(off)
}

/// One rank's rows split into local and remote parts.
#[derive(Debug, Clone)]
pub struct SplitMatrix<S> {
    rank: usize,
    nranks: usize,
    rows: Range<usize>,
    local: SellMatrix<S>,
    remote: SellMatrix<S>,
    full: SellMatrix<S>,
    halo_map: Vec<(usize, Gidx)>,
    recv_offsets: Vec<usize>,
    send_lists: Vec<Vec<usize>>,
}

impl<S: Scalar> SplitMatrix<S> {
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn nranks(&self) -> usize {
        self.nranks
    }

    /// Global rows (and owned columns) of this rank.
    pub fn rows(&self) -> Range<usize> {
        self.rows.clone()
    }

    pub fn nlocal(&self) -> usize {
        self.rows.len()
    }

    pub fn nhalo(&self) -> usize {
        self.halo_map.len()
    }

    /// Entries with owned columns, in local column numbering.
    pub fn local(&self) -> &SellMatrix<S> {
        &self.local
    }

    /// Entries with halo columns, in compressed column numbering.
    pub fn remote(&self) -> &SellMatrix<S> {
        &self.remote
    }

    /// All entries over `nlocal + nhalo` columns: owned columns first, then
    /// halo columns.
    pub fn full(&self) -> &SellMatrix<S> {
        &self.full
    }

    /// `(owner rank, global column)` per compressed halo index.
    pub fn halo_map(&self) -> &[(usize, Gidx)] {
        &self.halo_map
    }

    /// Global column of a compressed halo index.
    pub fn decompress(&self, compressed: usize) -> Option<Gidx> {
        self.halo_map.get(compressed).map(|h| h.1)
    }

    /// Halo entries received from each rank.
    pub fn recv_counts(&self) -> Vec<usize> {
        self.recv_offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Compressed halo indices received from `rank`.
    pub fn recv_range(&self, rank: usize) -> Range<usize> {
        self.recv_offsets[rank]..self.recv_offsets[rank + 1]
    }

    /// Local rows sent to each rank, ascending.
    pub fn send_lists(&self) -> &[Vec<usize>] {
        &self.send_lists
    }

    /// Overlapped execution could keep a second result buffer so the remote
    /// part is added to a finished local result; this implementation
    /// accumulates in place and never needs one.
    pub fn overlap_needs_result_copy(&self) -> bool {
        false
    }
}

/// Builds the split matrix of `rank`. The source must be square with the
/// plan's row count; `params` applies to all parts.
pub fn split_local_remote<S: Scalar>(
    source: &impl RowSource<S>,
    plan: &PartitionPlan,
    rank: usize,
    params: SellParams,
) -> Result<SplitMatrix<S>> {
    let n = plan.n();
    if source.nrows() != n || source.ncols() != n {
        return Err(shape(format!(
            "source is {}x{}, plan covers {n} rows and columns",
            source.nrows(),
            source.ncols()
        )));
    }
    if rank >= plan.nranks() {
        return Err(invalid(format!("rank {rank} outside 0..{}", plan.nranks())));
    }
    let k = plan.nranks();
    let rows = plan.range(rank);
    let (lo, hi) = (rows.start as Gidx, rows.end as Gidx);
    let nloc = rows.len();

    let mut cols = Vec::new();
    let mut vals = Vec::new();
    let mut halo: Vec<Gidx> = Vec::new();
    for g in rows.clone() {
        source.row(g as Gidx, &mut cols, &mut vals);
        for &c in &cols {
            if c < 0 || c as usize >= n {
                return Err(crate::Error::InvalidColumn { row: g, col: c, ncols: n });
            }
            if c < lo || c >= hi {
                halo.push(c);
            }
        }
    }
    // owners are ordered like columns, so column order is (owner, column) order
    halo.sort_unstable();
    halo.dedup();
    let halo_map: Vec<(usize, Gidx)> = halo.iter().map(|&c| (plan.owner(c as usize), c)).collect();
    let mut recv_offsets = vec![0usize; k + 1];
    for &(o, _) in &halo_map {
        recv_offsets[o + 1] += 1;
    }
    for r in 0..k {
        recv_offsets[r + 1] += recv_offsets[r];
    }

    let compressed = |c: Gidx| halo.binary_search(&c).ok().map(|p| p as Gidx);
    let local = SellMatrix::build_mapped(source, rows.clone(), nloc, params, |c| {
        (c >= lo && c < hi).then_some(c - lo)
    })?;
    let remote = SellMatrix::build_mapped(source, rows.clone(), halo.len(), params, |c| {
        if c >= lo && c < hi {
            None
        } else {
            compressed(c)
        }
    })?;
    let full = SellMatrix::build_mapped(source, rows.clone(), nloc + halo.len(), params, |c| {
        if c >= lo && c < hi {
            Some(c - lo)
        } else {
            compressed(c).map(|h| h + nloc as Gidx)
        }
    })?;

    // rows of mine that other ranks reference, found by scanning their rows
    let mut send_lists = vec![Vec::new(); k];
    for (r, list) in send_lists.iter_mut().enumerate() {
        if r == rank {
            continue;
        }
        for g in plan.range(r) {
            source.row(g as Gidx, &mut cols, &mut vals);
            list.extend(cols.iter().filter(|&&c| c >= lo && c < hi).map(|&c| (c - lo) as usize));
        }
        list.sort_unstable();
        list.dedup();
    }

    Ok(SplitMatrix { rank, nranks: k, rows, local, remote, full, halo_map, recv_offsets, send_lists })
}

/// Split matrices of all ranks.
pub fn split_all<S: Scalar>(
    source: &impl RowSource<S>,
    plan: &PartitionPlan,
    params: SellParams,
) -> Result<Vec<SplitMatrix<S>>> {
    (0..plan.nranks()).map(|r| split_local_remote(source, plan, r, params)).collect()
}

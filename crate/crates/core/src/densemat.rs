//! Dense matrices and block vectors.
//!
//! A [`DenseMat`] owns an aligned buffer stored row- or column-major. Views
//! ([`MatRef`], [`MatMut`]) borrow a buffer and address a sub-block of it:
//! a *compact* view covers contiguous rows and columns, a *scattered* view
//! picks an increasing set of columns out of a contiguous row range. Writes
//! through a mutable view land in the parent buffer.
//!
//! Element `(i, j)` of any matrix lives at
//! `offset + i * row_step + col_pos(j) * col_step` where
//! `(row_step, col_step)` is `(stride, 1)` for row-major and `(1, stride)` for
//! column-major storage.

use std::ops::Range;
use std::sync::Arc;

use aligned_vec::{AVec, ConstAlign};

use crate::error::{invalid, shape, Error, Result};
use crate::index::BuildConfig;
use crate::par::{self, SharedMut};
use crate::scalar::Scalar;

/// Byte alignment of owned buffers (one cache line, wide enough for AVX-512).
pub const ALIGN: usize = 64;

type Buf<S> = AVec<S, ConstAlign<ALIGN>>;

const MIN_BLOCK_ROWS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StorageOrder {
    RowMajor,
    ColMajor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViewKind {
    Owned,
    CompactView,
    ScatteredView,
}

/// Column selection of a view: a contiguous range or strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColSel {
    Range(Range<usize>),
    List(Vec<usize>),
}

impl From<Range<usize>> for ColSel {
    fn from(r: Range<usize>) -> Self {
        ColSel::Range(r)
    }
}

impl From<Vec<usize>> for ColSel {
    fn from(v: Vec<usize>) -> Self {
        ColSel::List(v)
    }
}

impl From<&[usize]> for ColSel {
    fn from(v: &[usize]) -> Self {
        ColSel::List(v.to_vec())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    nrows: usize,
    ncols: usize,
    order: StorageOrder,
    stride: usize,
    offset: usize,
    /// Physical column positions of a scattered view.
    cols: Option<Arc<[usize]>>,
    kind: ViewKind,
}

impl Layout {
    fn dense(nrows: usize, ncols: usize, order: StorageOrder, stride: usize, kind: ViewKind) -> Self {
        Layout { nrows, ncols, order, stride, offset: 0, cols: None, kind }
    }

    #[inline]
    fn row_step(&self) -> usize {
        match self.order {
            StorageOrder::RowMajor => self.stride,
            StorageOrder::ColMajor => 1,
        }
    }

    #[inline]
    fn col_step(&self) -> usize {
        match self.order {
            StorageOrder::RowMajor => 1,
            StorageOrder::ColMajor => self.stride,
        }
    }

    #[inline]
    fn col_pos(&self, j: usize) -> usize {
        match &self.cols {
            Some(c) => c[j],
            None => j,
        }
    }

    #[inline]
    fn index(&self, i: usize, j: usize) -> usize {
        self.offset + i * self.row_step() + self.col_pos(j) * self.col_step()
    }

    fn col_offsets(&self) -> Vec<usize> {
        (0..self.ncols).map(|j| self.col_pos(j) * self.col_step()).collect()
    }

    /// One past the largest physical index touched.
    fn extent(&self) -> usize {
        if self.nrows == 0 || self.ncols == 0 {
            return self.offset;
        }
        self.index(self.nrows - 1, self.ncols - 1) + 1
    }

    fn leading_extent(&self) -> usize {
        match self.order {
            StorageOrder::RowMajor => self.ncols,
            StorageOrder::ColMajor => self.nrows,
        }
    }

    fn sub(&self, rows: Range<usize>, sel: &ColSel) -> Result<Layout> {
        if rows.start >= rows.end || rows.end > self.nrows {
            return Err(invalid(format!("row range {rows:?} outside 0..{}", self.nrows)));
        }
        let picked: Vec<usize> = match sel {
            ColSel::Range(r) => {
                if r.start >= r.end || r.end > self.ncols {
                    return Err(invalid(format!("column range {r:?} outside 0..{}", self.ncols)));
                }
                r.clone().collect()
            }
            ColSel::List(list) => {
                if list.is_empty() {
                    return Err(invalid("empty column selection"));
                }
                if list.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(invalid("column selection must be strictly increasing"));
                }
                if *list.last().unwrap() >= self.ncols {
                    return Err(invalid(format!("column {} outside 0..{}", list.last().unwrap(), self.ncols)));
                }
                list.clone()
            }
        };
        let positions: Vec<usize> = picked.iter().map(|&j| self.col_pos(j)).collect();
        let contiguous = positions.windows(2).all(|w| w[1] == w[0] + 1);
        let row_offset = self.offset + rows.start * self.row_step();
        let mut lay = Layout {
            nrows: rows.len(),
            ncols: positions.len(),
            order: self.order,
            stride: self.stride,
            offset: row_offset,
            cols: None,
            kind: ViewKind::CompactView,
        };
        if contiguous {
            lay.offset += positions[0] * self.col_step();
        } else {
            lay.cols = Some(positions.into());
            lay.kind = ViewKind::ScatteredView;
        }
        Ok(lay)
    }
}

/// Read-only matrix view.
#[derive(Debug, Clone)]
pub struct MatRef<'a, S> {
    data: &'a [S],
    lay: Layout,
}

/// Mutable matrix view.
#[derive(Debug)]
pub struct MatMut<'a, S> {
    data: &'a mut [S],
    lay: Layout,
}

/// Owned dense matrix.
#[derive(Debug, Clone)]
pub struct DenseMat<S> {
    buf: Buf<S>,
    lay: Layout,
}

/// Anything that can be viewed as a read-only matrix.
pub trait AsMatRef<S> {
    fn mat_ref(&self) -> MatRef<'_, S>;
}

/// Anything that can be viewed as a mutable matrix.
pub trait AsMatMut<S>: AsMatRef<S> {
    fn mat_mut(&mut self) -> MatMut<'_, S>;
}

impl<S> AsMatRef<S> for DenseMat<S> {
    fn mat_ref(&self) -> MatRef<'_, S> {
        MatRef { data: self.buf.as_slice(), lay: self.lay.clone() }
    }
}

impl<S> AsMatMut<S> for DenseMat<S> {
    fn mat_mut(&mut self) -> MatMut<'_, S> {
        MatMut { data: self.buf.as_mut_slice(), lay: self.lay.clone() }
    }
}

impl<S> AsMatRef<S> for MatRef<'_, S> {
    fn mat_ref(&self) -> MatRef<'_, S> {
        MatRef { data: self.data, lay: self.lay.clone() }
    }
}

impl<S> AsMatRef<S> for MatMut<'_, S> {
    fn mat_ref(&self) -> MatRef<'_, S> {
        MatRef { data: self.data, lay: self.lay.clone() }
    }
}

impl<S> AsMatMut<S> for MatMut<'_, S> {
    fn mat_mut(&mut self) -> MatMut<'_, S> {
        MatMut { data: self.data, lay: self.lay.clone() }
    }
}

macro_rules! shape_accessors {
    () => {
        pub fn nrows(&self) -> usize {
            self.lay.nrows
        }
        pub fn ncols(&self) -> usize {
            self.lay.ncols
        }
        pub fn order(&self) -> StorageOrder {
            self.lay.order
        }
        pub fn stride(&self) -> usize {
            self.lay.stride
        }
        pub fn view_kind(&self) -> ViewKind {
            self.lay.kind
        }
        pub fn is_scattered(&self) -> bool {
            self.lay.kind == ViewKind::ScatteredView
        }
        pub fn shape(&self) -> (usize, usize) {
            (self.lay.nrows, self.lay.ncols)
        }
    };
}

impl<'a, S: Scalar> MatRef<'a, S> {
    shape_accessors!();

    pub fn get(&self, i: usize, j: usize) -> S {
        assert!(i < self.lay.nrows && j < self.lay.ncols, "({i}, {j}) out of bounds");
        self.data[self.lay.index(i, j)]
    }

    pub fn view(&self, rows: Range<usize>, cols: impl Into<ColSel>) -> Result<MatRef<'a, S>> {
        Ok(MatRef { data: self.data, lay: self.lay.sub(rows, &cols.into())? })
    }

    /// Owned copy with the same storage order and logical contents.
    pub fn compact_clone(&self) -> Result<DenseMat<S>> {
        self.to_order(self.lay.order).or_else(|_| {
            let mut out = DenseMat::create(self.nrows(), self.ncols(), self.order())?;
            copy_into(&mut out.mat_mut(), self);
            Ok(out)
        })
    }

    /// Owned copy in `order`. Scattered views must be compacted first.
    pub fn to_order(&self, order: StorageOrder) -> Result<DenseMat<S>> {
        if self.is_scattered() {
            return Err(Error::ScatteredView);
        }
        let mut out = DenseMat::create(self.nrows(), self.ncols(), order)?;
        copy_into(&mut out.mat_mut(), self);
        Ok(out)
    }

    pub fn to_rows(&self) -> Vec<Vec<S>> {
        (0..self.nrows()).map(|i| (0..self.ncols()).map(|j| self.get(i, j)).collect()).collect()
    }

    /// Column `j` as a vector.
    pub fn col_vec(&self, j: usize) -> Vec<S> {
        (0..self.nrows()).map(|i| self.get(i, j)).collect()
    }

    pub(crate) fn raw(&self) -> RawRef<'a, S> {
        RawRef {
            data: self.data,
            offset: self.lay.offset,
            row_step: self.lay.row_step(),
            col_off: self.lay.col_offsets(),
        }
    }

    pub(crate) fn data_ptr_range(&self) -> Range<*const S> {
        self.data.as_ptr_range()
    }
}

impl<'a, S: Scalar> MatMut<'a, S> {
    shape_accessors!();

    pub fn get(&self, i: usize, j: usize) -> S {
        assert!(i < self.lay.nrows && j < self.lay.ncols, "({i}, {j}) out of bounds");
        self.data[self.lay.index(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: S) {
        assert!(i < self.lay.nrows && j < self.lay.ncols, "({i}, {j}) out of bounds");
        let idx = self.lay.index(i, j);
        self.data[idx] = v;
    }

    pub fn view_mut(self, rows: Range<usize>, cols: impl Into<ColSel>) -> Result<MatMut<'a, S>> {
        let lay = self.lay.sub(rows, &cols.into())?;
        Ok(MatMut { data: self.data, lay })
    }

    pub fn fill(&mut self, v: S) {
        let nrows = self.lay.nrows;
        let raw = self.raw_mut();
        for i in 0..nrows {
            let base = raw.offset + i * raw.row_step;
            for &co in &raw.col_off {
                raw.data[base + co] = v;
            }
        }
    }

    pub fn copy_from(&mut self, src: &impl AsMatRef<S>) -> Result<()> {
        let src = src.mat_ref();
        if src.shape() != self.shape() {
            return Err(shape(format!("copy {:?} into {:?}", src.shape(), self.shape())));
        }
        copy_into(self, &src);
        Ok(())
    }

    pub(crate) fn raw_mut(&mut self) -> RawMut<'_, S> {
        RawMut {
            offset: self.lay.offset,
            row_step: self.lay.row_step(),
            col_off: self.lay.col_offsets(),
            data: self.data,
        }
    }
}

/// Flattened addressing of a view, for kernels.
pub(crate) struct RawRef<'a, S> {
    pub data: &'a [S],
    pub offset: usize,
    pub row_step: usize,
    pub col_off: Vec<usize>,
}

pub(crate) struct RawMut<'a, S> {
    pub data: &'a mut [S],
    pub offset: usize,
    pub row_step: usize,
    pub col_off: Vec<usize>,
}

impl<S> RawRef<'_, S> {
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> usize {
        self.offset + i * self.row_step + self.col_off[j]
    }
}

impl<S> RawMut<'_, S> {
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> usize {
        self.offset + i * self.row_step + self.col_off[j]
    }
}

fn copy_into<S: Scalar>(dst: &mut MatMut<'_, S>, src: &MatRef<'_, S>) {
    let s = src.raw();
    let d = dst.raw_mut();
    for i in 0..src.nrows() {
        for j in 0..src.ncols() {
            d.data[d.at(i, j)] = s.data[s.at(i, j)];
        }
    }
}

impl<S: Scalar> DenseMat<S> {
    shape_accessors!();

    /// Zero matrix whose row count is padded to the largest compiled chunk height.
    pub fn create(nrows: usize, ncols: usize, order: StorageOrder) -> Result<Self> {
        Self::create_padded(nrows, ncols, order, BuildConfig::compiled().max_chunk_height())
    }

    /// Zero matrix with the row count of the buffer padded to a multiple of `row_pad`.
    pub fn create_padded(nrows: usize, ncols: usize, order: StorageOrder, row_pad: usize) -> Result<Self> {
        if nrows == 0 || ncols == 0 {
            return Err(invalid(format!("dimensions must be positive, got {nrows}x{ncols}")));
        }
        Self::alloc(nrows, ncols, order, row_pad)
    }

    /// Like `create_padded` but allows empty matrices (halo buffers of ranks
    /// without remote entries).
    pub(crate) fn alloc(nrows: usize, ncols: usize, order: StorageOrder, row_pad: usize) -> Result<Self> {
        let row_pad = row_pad.max(1);
        let padded = nrows.div_ceil(row_pad) * row_pad;
        let (stride, len) = match order {
            StorageOrder::RowMajor => (ncols, padded.checked_mul(ncols)),
            StorageOrder::ColMajor => (padded, padded.checked_mul(ncols)),
        };
        let len = len.ok_or(Error::Alloc(usize::MAX))?;
        let mut buf: Buf<S> = AVec::new(ALIGN);
        buf.try_reserve_exact(len).map_err(|_| Error::Alloc(len))?;
        buf.resize(len, S::zero());
        Ok(DenseMat { buf, lay: Layout::dense(nrows, ncols, order, stride, ViewKind::Owned) })
    }

    pub fn from_fn(nrows: usize, ncols: usize, order: StorageOrder, mut f: impl FnMut(usize, usize) -> S) -> Result<Self> {
        let mut m = Self::create(nrows, ncols, order)?;
        for i in 0..nrows {
            for j in 0..ncols {
                let idx = m.lay.index(i, j);
                m.buf[idx] = f(i, j);
            }
        }
        Ok(m)
    }

    /// Builds a matrix from row slices; all rows must have the same length.
    pub fn from_rows<R: AsRef<[S]>>(rows: &[R], order: StorageOrder) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        if rows.iter().any(|r| r.as_ref().len() != ncols) {
            return Err(shape("ragged rows"));
        }
        Self::from_fn(nrows, ncols, order, |i, j| rows[i].as_ref()[j])
    }

    /// Column vector from a slice.
    pub fn from_col(values: &[S]) -> Result<Self> {
        Self::from_fn(values.len(), 1, StorageOrder::ColMajor, |i, _| values[i])
    }

    pub fn get(&self, i: usize, j: usize) -> S {
        assert!(i < self.lay.nrows && j < self.lay.ncols, "({i}, {j}) out of bounds");
        self.buf[self.lay.index(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: S) {
        assert!(i < self.lay.nrows && j < self.lay.ncols, "({i}, {j}) out of bounds");
        let idx = self.lay.index(i, j);
        self.buf[idx] = v;
    }

    /// Whole physical buffer, padding included.
    pub fn raw_buffer(&self) -> &[S] {
        self.buf.as_slice()
    }

    pub fn as_ptr(&self) -> *const S {
        self.buf.as_ptr()
    }

    pub fn view(&self, rows: Range<usize>, cols: impl Into<ColSel>) -> Result<MatRef<'_, S>> {
        self.mat_ref().view(rows, cols)
    }

    pub fn view_mut(&mut self, rows: Range<usize>, cols: impl Into<ColSel>) -> Result<MatMut<'_, S>> {
        self.mat_mut().view_mut(rows, cols)
    }

    pub fn to_rows(&self) -> Vec<Vec<S>> {
        self.mat_ref().to_rows()
    }

    pub fn col_vec(&self, j: usize) -> Vec<S> {
        self.mat_ref().col_vec(j)
    }

    /// Changes the physical layout, keeping the logical contents.
    ///
    /// The padded row count is preserved, so converting back restores the
    /// original buffer bit for bit.
    pub fn convert_order_in_place(&mut self, order: StorageOrder) -> Result<()> {
        if order == self.lay.order {
            return Ok(());
        }
        let (nrows, ncols) = self.shape();
        let padded = self.buf.len() / ncols;
        let old = self.mat_ref().raw();
        let (stride, row_step, col_step) = match order {
            StorageOrder::RowMajor => (ncols, ncols, 1),
            StorageOrder::ColMajor => (padded, 1, padded),
        };
        let mut buf: Buf<S> = AVec::new(ALIGN);
        buf.try_reserve_exact(self.buf.len()).map_err(|_| Error::Alloc(self.buf.len()))?;
        buf.resize(self.buf.len(), S::zero());
        // padding rows are zero in both layouts, only live rows move
        for i in 0..nrows {
            for j in 0..ncols {
                buf[i * row_step + j * col_step] = old.data[old.at(i, j)];
            }
        }
        self.buf = buf;
        self.lay = Layout::dense(nrows, ncols, order, stride, ViewKind::Owned);
        Ok(())
    }
}

/// Non-owning matrix over caller memory (alignment is not checked).
pub fn view_plain<S: Scalar>(
    buffer: &[S],
    nrows: usize,
    ncols: usize,
    stride: usize,
    order: StorageOrder,
) -> Result<MatRef<'_, S>> {
    let lay = plain_layout(buffer.len(), nrows, ncols, stride, order)?;
    Ok(MatRef { data: buffer, lay })
}

pub fn view_plain_mut<S: Scalar>(
    buffer: &mut [S],
    nrows: usize,
    ncols: usize,
    stride: usize,
    order: StorageOrder,
) -> Result<MatMut<'_, S>> {
    let lay = plain_layout(buffer.len(), nrows, ncols, stride, order)?;
    Ok(MatMut { data: buffer, lay })
}

fn plain_layout(len: usize, nrows: usize, ncols: usize, stride: usize, order: StorageOrder) -> Result<Layout> {
    if nrows == 0 || ncols == 0 {
        return Err(invalid("dimensions must be positive"));
    }
    let lay = Layout::dense(nrows, ncols, order, stride, ViewKind::CompactView);
    if stride < lay.leading_extent() {
        return Err(invalid(format!("stride {stride} smaller than leading extent {}", lay.leading_extent())));
    }
    let slow = match order {
        StorageOrder::RowMajor => nrows,
        StorageOrder::ColMajor => ncols,
    };
    if len < stride * slow {
        return Err(invalid(format!("buffer of {len} elements, layout needs {}", stride * slow)));
    }
    debug_assert!(lay.extent() <= len);
    Ok(lay)
}

fn check_same_shape<S: Scalar>(y: &MatMut<'_, S>, x: &MatRef<'_, S>) -> Result<()> {
    if y.shape() != x.shape() {
        return Err(shape(format!("{:?} vs {:?}", y.shape(), x.shape())));
    }
    Ok(())
}

/// Applies `f(j, x_ij, y_ij) -> new y_ij` to all elements, parallel over row blocks.
fn zip_apply<S: Scalar>(y: &mut MatMut<'_, S>, x: Option<&MatRef<'_, S>>, f: impl Fn(usize, S, S) -> S + Sync) {
    let (nrows, ncols) = y.shape();
    let xr = x.map(|x| x.raw());
    let yr = y.raw_mut();
    let ptr = SharedMut::new(yr.data);
    let (off, rs, col_off) = (yr.offset, yr.row_step, yr.col_off);
    par::map_blocks(nrows, MIN_BLOCK_ROWS, |rows| {
        for i in rows {
            for j in 0..ncols {
                let xv = xr.as_ref().map_or(S::zero(), |x| x.data[x.at(i, j)]);
                // SAFETY: a valid layout maps distinct (i, j) to distinct
                // in-bounds indices, and row blocks are disjoint.
                unsafe {
                    let p = ptr.get(off + i * rs + col_off[j]);
                    *p = f(j, xv, *p);
                }
            }
        }
    });
}

/// `y <- alpha * x + beta * y` (axpy is `beta = 1`).
pub fn axpby<S: Scalar>(y: &mut impl AsMatMut<S>, x: &impl AsMatRef<S>, alpha: S, beta: S) -> Result<()> {
    let mut y = y.mat_mut();
    let x = x.mat_ref();
    check_same_shape(&y, &x)?;
    zip_apply(&mut y, Some(&x), |_, xv, yv| alpha * xv + beta * yv);
    Ok(())
}

/// Per-column `y_j <- alphas[j] * x_j + betas[j] * y_j`.
pub fn vaxpby<S: Scalar>(y: &mut impl AsMatMut<S>, x: &impl AsMatRef<S>, alphas: &[S], betas: &[S]) -> Result<()> {
    let mut y = y.mat_mut();
    let x = x.mat_ref();
    check_same_shape(&y, &x)?;
    if alphas.len() != y.ncols() || betas.len() != y.ncols() {
        return Err(shape(format!(
            "scalar lists of length {}/{} for {} columns",
            alphas.len(),
            betas.len(),
            y.ncols()
        )));
    }
    zip_apply(&mut y, Some(&x), |j, xv, yv| alphas[j] * xv + betas[j] * yv);
    Ok(())
}

pub fn scal<S: Scalar>(x: &mut impl AsMatMut<S>, factor: S) -> Result<()> {
    let mut x = x.mat_mut();
    zip_apply(&mut x, None, |_, _, v| factor * v);
    Ok(())
}

pub fn vscal<S: Scalar>(x: &mut impl AsMatMut<S>, factors: &[S]) -> Result<()> {
    let mut x = x.mat_mut();
    if factors.len() != x.ncols() {
        return Err(shape(format!("{} factors for {} columns", factors.len(), x.ncols())));
    }
    zip_apply(&mut x, None, |j, _, v| factors[j] * v);
    Ok(())
}

/// Column-wise inner products `sum_i conj(a_ij) * b_ij`.
pub fn dot<S: Scalar>(a: &impl AsMatRef<S>, b: &impl AsMatRef<S>) -> Result<Vec<S>> {
    let a = a.mat_ref();
    let b = b.mat_ref();
    if a.shape() != b.shape() {
        return Err(shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let (ar, br) = (a.raw(), b.raw());
    let ncols = a.ncols();
    let partials = par::map_blocks(a.nrows(), MIN_BLOCK_ROWS, |rows| {
        let mut acc = vec![S::zero(); ncols];
        for i in rows {
            for (j, s) in acc.iter_mut().enumerate() {
                *s += ar.data[ar.at(i, j)].conj() * br.data[br.at(i, j)];
            }
        }
        acc
    });
    let mut out = vec![S::zero(); ncols];
    for p in partials {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    Ok(out)
}

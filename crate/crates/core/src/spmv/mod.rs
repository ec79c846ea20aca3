//! Fused sparse matrix (multiple) vector multiplication.
//!
//! One call computes
//!
//! ```text
//! y = alpha * (A - gamma I) x + beta * y
//! ```
//!
//! and optionally the column-wise dots `<y,y>`, `<x,y>`, `<x,x>` of the new
//! `y` and the chained update `z = delta * z + eta * y`, all in a single pass
//! over the matrix.
//!
//! Kernels are picked through a cascade that loses specialization step by
//! step until a compiled variant is found; the fully generic kernel always
//! exists.

mod dispatch;
pub(crate) mod kernels;

use std::fmt;

use bitflags::bitflags;

use crate::densemat::{AsMatMut, AsMatRef, DenseMat, MatMut, MatRef, StorageOrder};
use crate::error::{invalid, shape, Error, Result};
use crate::index::BuildConfig;
use crate::par::{self, SharedMut};
use crate::partition::SplitMatrix;
use crate::scalar::Scalar;
use crate::sellcs::{SellMatrix, SellParams};
use kernels::{ChunkArgs, ChunkFn};

const MIN_BLOCK_CHUNKS: usize = 64;

bitflags! {
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
    pub struct SpmvFlags: u32 {
        /// `y = ... + beta * y`; without it `y` is overwritten.
        const AXPBY = 1 << 0;
        /// Subtract `gamma * x` with one shift for all columns.
        const SHIFT = 1 << 1;
        /// Subtract `gamma[v] * x` per column.
        const VSHIFT = 1 << 2;
        const DOT_YY = 1 << 3;
        const DOT_XY = 1 << 4;
        const DOT_XX = 1 << 5;
        /// `z = delta * z + eta * y`.
        const CHAIN_AXPBY = 1 << 6;

        const DOTS = Self::DOT_YY.bits() | Self::DOT_XY.bits() | Self::DOT_XX.bits();
    }
}

/// Options of a fused SpMV.
pub struct SpmvOpts<'a, S> {
    pub flags: SpmvFlags,
    pub alpha: S,
    pub beta: S,
    /// One value for `SHIFT`, one per column for `VSHIFT`.
    pub gamma: Vec<S>,
    pub delta: S,
    pub eta: S,
    pub z: Option<MatMut<'a, S>>,
    /// `3 * width` entries: `<y,y>`, then `<x,y>`, then `<x,x>`.
    pub dot: Option<&'a mut [S]>,
}

impl<S: Scalar> Default for SpmvOpts<'_, S> {
    fn default() -> Self {
        Self {
            flags: SpmvFlags::empty(),
            alpha: S::one(),
            beta: S::zero(),
            gamma: Vec::new(),
            delta: S::zero(),
            eta: S::one(),
            z: None,
            dot: None,
        }
    }
}

impl<'a, S: Scalar> SpmvOpts<'a, S> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn alpha(mut self, alpha: S) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn axpby(mut self, beta: S) -> Self {
        self.flags |= SpmvFlags::AXPBY;
        self.beta = beta;
        self
    }

    pub fn shift(mut self, gamma: S) -> Self {
        self.flags |= SpmvFlags::SHIFT;
        self.gamma = vec![gamma];
        self
    }

    pub fn vshift(mut self, gamma: Vec<S>) -> Self {
        self.flags |= SpmvFlags::VSHIFT;
        self.gamma = gamma;
        self
    }

    /// Requests the dots in `which` (a subset of [`SpmvFlags::DOTS`]).
    pub fn dots(mut self, which: SpmvFlags, buf: &'a mut [S]) -> Self {
        self.flags |= which & SpmvFlags::DOTS;
        self.dot = Some(buf);
        self
    }

    pub fn chain(mut self, z: MatMut<'a, S>, delta: S, eta: S) -> Self {
        self.flags |= SpmvFlags::CHAIN_AXPBY;
        self.z = Some(z);
        self.delta = delta;
        self.eta = eta;
        self
    }

    fn validate(&self, w: usize, y_shape: (usize, usize)) -> Result<()> {
        let f = self.flags;
        if f.contains(SpmvFlags::SHIFT | SpmvFlags::VSHIFT) {
            return Err(invalid("SHIFT and VSHIFT are mutually exclusive"));
        }
        if f.contains(SpmvFlags::SHIFT) && self.gamma.is_empty() {
            return Err(invalid("SHIFT needs a gamma value"));
        }
        if f.contains(SpmvFlags::VSHIFT) && self.gamma.len() != w {
            return Err(shape(format!("VSHIFT needs {w} gamma values, got {}", self.gamma.len())));
        }
        if f.intersects(SpmvFlags::DOTS) {
            match &self.dot {
                None => return Err(invalid("dot flags set without a dot buffer")),
                Some(d) if d.len() < 3 * w => {
                    return Err(shape(format!("dot buffer needs {} entries, got {}", 3 * w, d.len())))
                }
                _ => {}
            }
        }
        if f.contains(SpmvFlags::CHAIN_AXPBY) {
            match &self.z {
                None => return Err(invalid("CHAIN_AXPBY set without z")),
                Some(z) if z.shape() != y_shape => {
                    return Err(shape(format!("z is {:?}, y is {:?}", z.shape(), y_shape)))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Per-column shift, if any.
    fn shifts(&self, w: usize) -> Option<Vec<S>> {
        if self.flags.contains(SpmvFlags::SHIFT) {
            Some(vec![self.gamma[0]; w])
        } else if self.flags.contains(SpmvFlags::VSHIFT) {
            Some(self.gamma.clone())
        } else {
            None
        }
    }
}

/// A kernel dimension: specialized for one value or generic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dim {
    Exact(usize),
    Generic,
}

impl fmt::Display for Dim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dim::Exact(v) => write!(f, "{v}"),
            Dim::Generic => f.write_str("*"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct KernelVariant {
    pub chunk_height: Dim,
    pub block_width: Dim,
    /// Needs rows of `x` to be contiguous (row-major or width 1).
    pub vectorized: bool,
}

impl KernelVariant {
    pub const FALLBACK: KernelVariant =
        KernelVariant { chunk_height: Dim::Generic, block_width: Dim::Generic, vectorized: false };

    /// Every variant compiled into this build for chunk height `c` and width
    /// `w`, most specialized first.
    pub fn candidates(c: usize, w: usize) -> Vec<KernelVariant> {
        let cfg = BuildConfig::compiled();
        let (hc, hw) = (cfg.has_chunk_height(c), cfg.has_block_width(w));
        let v = |ch, bw, vectorized| KernelVariant { chunk_height: ch, block_width: bw, vectorized };
        let (ec, ew) = (Dim::Exact(c), Dim::Exact(w));
        let all = [
            (hc && hw, v(ec, ew, true)),
            (hc, v(ec, Dim::Generic, true)),
            (hc && hw, v(ec, ew, false)),
            (hc, v(ec, Dim::Generic, false)),
            (hw, v(Dim::Generic, ew, false)),
            (true, KernelVariant::FALLBACK),
        ];
        all.into_iter().filter(|(ok, _)| *ok).map(|(_, k)| k).collect()
    }
}

impl fmt::Display for KernelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = if self.vectorized { "vectorized" } else { "plain" };
        write!(f, "C={} width={} {kind}", self.chunk_height, self.block_width)
    }
}

/// Most specialized variant of the cascade that `config` provides.
pub fn select_kernel(params: SellParams, block_width: usize, order: StorageOrder, config: &BuildConfig) -> KernelVariant {
    let c = params.c();
    let contiguous = order == StorageOrder::RowMajor || block_width == 1;
    let hc = config.has_chunk_height(c);
    let hw = config.has_block_width(block_width);
    let (ec, ew) = (Dim::Exact(c), Dim::Exact(block_width));
    let v = |chunk_height, block_width, vectorized| KernelVariant { chunk_height, block_width, vectorized };
    match (hc, hw, contiguous) {
        (true, true, true) => v(ec, ew, true),
        (true, false, true) => v(ec, Dim::Generic, true),
        (true, true, false) => v(ec, ew, false),
        (true, false, false) => v(ec, Dim::Generic, false),
        (false, true, _) => v(Dim::Generic, ew, false),
        (false, false, _) => KernelVariant::FALLBACK,
    }
}

fn resolve<S: Scalar>(v: KernelVariant, c: usize, w: usize, contiguous: bool) -> Result<ChunkFn<S>> {
    let unavailable = || Error::KernelUnavailable(v.to_string());
    if matches!(v.chunk_height, Dim::Exact(vc) if vc != c) || matches!(v.block_width, Dim::Exact(vw) if vw != w) {
        return Err(invalid(format!("variant {v} does not fit C={c} width={w}")));
    }
    if v.vectorized && !contiguous {
        return Err(invalid(format!("variant {v} needs contiguous rows of x")));
    }
    let k = match (v.chunk_height, v.block_width, v.vectorized) {
        (Dim::Exact(c), Dim::Exact(w), true) => dispatch::fixed_vec(c, w),
        (Dim::Exact(c), Dim::Generic, true) => dispatch::height_vec(c),
        (Dim::Exact(c), Dim::Exact(w), false) => dispatch::fixed_plain(c, w),
        (Dim::Exact(c), Dim::Generic, false) => dispatch::height_plain(c),
        (Dim::Generic, Dim::Exact(w), false) => dispatch::width_plain(w),
        (Dim::Generic, Dim::Generic, false) => Some(kernels::plain_any::<S> as ChunkFn<S>),
        (Dim::Generic, _, true) => None,
    };
    k.ok_or_else(unavailable)
}

/// Which parts of the fused epilogue a call applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Stage {
    /// Everything.
    Full,
    /// Shift and `beta * y`, no dots, no chained update.
    Local,
    /// `y += alpha * A x`, then dots and chained update.
    Remote,
}

/// `y = alpha (A - gamma I) x + beta y` with optional dots and chained update.
///
/// `x` needs `A.ncols()` rows, `y` needs `A.nrows()` rows. `x` and `y` must not
/// overlap.
pub fn spmv<S: Scalar>(
    y: &mut impl AsMatMut<S>,
    a: &SellMatrix<S>,
    x: &impl AsMatRef<S>,
    opts: &mut SpmvOpts<'_, S>,
) -> Result<KernelVariant> {
    let x = x.mat_ref();
    let mut y = y.mat_mut();
    if x.nrows() != a.ncols() {
        return Err(shape(format!("x has {} rows, A has {} columns", x.nrows(), a.ncols())));
    }
    spmv_core(&mut y, a, &x, None, opts, Stage::Full, None)
}

/// Like [`spmv`] but forces a kernel variant (which must be compiled in).
pub fn spmv_with_variant<S: Scalar>(
    y: &mut impl AsMatMut<S>,
    a: &SellMatrix<S>,
    x: &impl AsMatRef<S>,
    opts: &mut SpmvOpts<'_, S>,
    variant: KernelVariant,
) -> Result<KernelVariant> {
    let x = x.mat_ref();
    let mut y = y.mat_mut();
    if x.nrows() != a.ncols() {
        return Err(shape(format!("x has {} rows, A has {} columns", x.nrows(), a.ncols())));
    }
    spmv_core(&mut y, a, &x, None, opts, Stage::Full, Some(variant))
}

/// SpMV with the local part of a rank only, skipping the halo exchange.
/// The result is not the global product when the rank has remote entries.
pub fn spmv_pseudo_nocomm<S: Scalar>(
    y: &mut impl AsMatMut<S>,
    sm: &SplitMatrix<S>,
    x: &impl AsMatRef<S>,
    opts: &mut SpmvOpts<'_, S>,
) -> Result<KernelVariant> {
    spmv(y, sm.local(), x, opts)
}

fn overlaps<S>(a: std::ops::Range<*const S>, b: std::ops::Range<*const S>) -> bool {
    a.start < b.end && b.start < a.end
}

/// Shared driver. `x_diag` supplies the rows used for shifts and dots when
/// they are not the first rows of `x` (distributed remote stage).
pub(crate) fn spmv_core<S: Scalar>(
    y: &mut MatMut<'_, S>,
    a: &SellMatrix<S>,
    x: &MatRef<'_, S>,
    x_diag: Option<&MatRef<'_, S>>,
    opts: &mut SpmvOpts<'_, S>,
    stage: Stage,
    forced: Option<KernelVariant>,
) -> Result<KernelVariant> {
    let w = y.ncols();
    let n = a.nrows();
    if y.nrows() != n {
        return Err(shape(format!("y has {} rows, A has {n}", y.nrows())));
    }
    if x.ncols() != w {
        return Err(shape(format!("x has {} columns, y has {w}", x.ncols())));
    }
    if x.nrows() < a.ncols() {
        return Err(shape(format!("x has {} rows, A has {} columns", x.nrows(), a.ncols())));
    }
    opts.validate(w, y.shape())?;
    let y_ptrs = y.mat_ref().data_ptr_range();
    if overlaps(x.data_ptr_range(), y_ptrs.clone()) {
        return Err(invalid("x and y overlap"));
    }
    if let Some(z) = &opts.z {
        let zp = z.mat_ref().data_ptr_range();
        if opts.flags.contains(SpmvFlags::CHAIN_AXPBY) && (overlaps(zp.clone(), y_ptrs) || overlaps(zp, x.data_ptr_range())) {
            return Err(invalid("z overlaps x or y"));
        }
    }

    let flags = opts.flags;
    let (apply_shift, apply_beta, apply_post) = match stage {
        Stage::Full => (true, flags.contains(SpmvFlags::AXPBY), true),
        Stage::Local => (true, flags.contains(SpmvFlags::AXPBY), false),
        Stage::Remote => (false, false, true),
    };
    let gamma = if apply_shift { opts.shifts(w) } else { None };
    let dots = if apply_post { flags & SpmvFlags::DOTS } else { SpmvFlags::empty() };
    let chain = apply_post && flags.contains(SpmvFlags::CHAIN_AXPBY);
    let need_diag = gamma.is_some() || dots.intersects(SpmvFlags::DOT_XY | SpmvFlags::DOT_XX);
    let x_diag = match x_diag {
        Some(d) => Some(d.clone()),
        None if need_diag && n > 0 => {
            if x.nrows() < n {
                return Err(shape(format!("shift/dots need {n} rows of x, got {}", x.nrows())));
            }
            Some(x.view(0..n, 0..w)?)
        }
        None => None,
    };
    if let Some(d) = &x_diag {
        if need_diag && (d.nrows() < n || d.ncols() != w) {
            return Err(shape("diagonal block of x does not match y"));
        }
    }

    let xr = x.raw();
    let contiguous = xr.col_off.iter().enumerate().all(|(v, &o)| o == v);
    let c = a.params().c();
    let order = if contiguous { StorageOrder::RowMajor } else { StorageOrder::ColMajor };
    let variant = forced.unwrap_or_else(|| select_kernel(a.params(), w, order, BuildConfig::compiled()));
    let kernel = resolve::<S>(variant, c, w, contiguous)?;

    let yraw = y.raw_mut();
    let y_ptr = SharedMut::new(yraw.data);
    let (y_off, y_rs, y_co) = (yraw.offset, yraw.row_step, yraw.col_off);
    let zinfo = match (&mut opts.z, chain) {
        (Some(z), true) => {
            let zr = z.raw_mut();
            Some((SharedMut::new(zr.data), zr.offset, zr.row_step, zr.col_off))
        }
        _ => None,
    };
    let dr = x_diag.as_ref().map(|d| d.raw());
    let epi = Epilogue {
        alpha: opts.alpha,
        beta: if apply_beta { Some(opts.beta) } else { None },
        accumulate: stage == Stage::Remote,
        gamma,
        dots,
        delta: opts.delta,
        eta: opts.eta,
    };

    // one epilogue application for original row `i` with product row `p`
    let finish = |i: usize, p: &[S], part: &mut [S]| {
        for v in 0..w {
            let xd = dr.as_ref().map_or(S::zero(), |d| d.data[d.at(i, v)]);
            let mut t = p[v];
            if let Some(g) = &epi.gamma {
                t -= g[v] * xd;
            }
            let yi = y_off + i * y_rs + y_co[v];
            // SAFETY: every original row is finished by exactly one worker.
            let yv = unsafe {
                let slot = y_ptr.get(yi);
                let mut yv = epi.alpha * t;
                if epi.accumulate {
                    yv += *slot;
                } else if let Some(b) = epi.beta {
                    yv += b * *slot;
                }
                *slot = yv;
                yv
            };
            if !epi.dots.is_empty() {
                if epi.dots.contains(SpmvFlags::DOT_YY) {
                    part[v] += yv.conj() * yv;
                }
                if epi.dots.contains(SpmvFlags::DOT_XY) {
                    part[w + v] += xd.conj() * yv;
                }
                if epi.dots.contains(SpmvFlags::DOT_XX) {
                    part[2 * w + v] += xd.conj() * xd;
                }
            }
            if let Some((zp, zo, zrs, zco)) = &zinfo {
                // SAFETY: as for y.
                unsafe {
                    let slot = zp.get(zo + i * zrs + zco[v]);
                    *slot = epi.delta * *slot + epi.eta * yv;
                }
            }
        }
    };

    let partials: Vec<Vec<S>> = if let Some(op) = a.operator() {
        let mut prod = DenseMat::create_padded(n.max(1), w, StorageOrder::RowMajor, 1)?;
        if n > 0 {
            let mut pm = prod.view_mut(0..n, 0..w)?;
            op(x, &mut pm)?;
        }
        let pr = prod.raw_buffer();
        par::map_blocks(n, MIN_BLOCK_CHUNKS, |rows| {
            let mut part = vec![S::zero(); 3 * w];
            for i in rows {
                finish(i, &pr[i * w..(i + 1) * w], &mut part);
            }
            part
        })
    } else {
        let inv = a.row_perm_inv();
        let (chunk_len, chunk_off) = (a.chunk_len(), a.chunk_offset());
        let (val, col) = (a.val(), a.col());
        let xa = &xr;
        par::map_blocks(a.nchunks(), MIN_BLOCK_CHUNKS, |chunks| {
            let mut part = vec![S::zero(); 3 * w];
            let mut acc = vec![S::zero(); c * w];
            for k in chunks {
                let off = chunk_off[k] as usize;
                let end = chunk_off[k + 1] as usize;
                let args = ChunkArgs {
                    val: &val[off..end],
                    col: &col[off..end],
                    len: chunk_len[k] as usize,
                    c,
                    w,
                    x: xa.data,
                    x_off: xa.offset,
                    x_rs: xa.row_step,
                    x_co: &xa.col_off,
                };
                kernel(&args, &mut acc);
                for r in 0..c {
                    let new = k * c + r;
                    if new >= n {
                        break;
                    }
                    finish(inv[new], &acc[r * w..(r + 1) * w], &mut part);
                }
            }
            part
        })
    };

    if !dots.is_empty() {
        let buf = opts.dot.as_deref_mut().expect("validated");
        let mut total = vec![S::zero(); 3 * w];
        for p in partials {
            for (t, v) in total.iter_mut().zip(p) {
                *t += v;
            }
        }
        for (seg, flag) in [SpmvFlags::DOT_YY, SpmvFlags::DOT_XY, SpmvFlags::DOT_XX].into_iter().enumerate() {
            if dots.contains(flag) {
                buf[seg * w..(seg + 1) * w].copy_from_slice(&total[seg * w..(seg + 1) * w]);
            }
        }
    }
    Ok(variant)
}

struct Epilogue<S> {
    alpha: S,
    beta: Option<S>,
    accumulate: bool,
    gamma: Option<Vec<S>>,
    dots: SpmvFlags,
    delta: S,
    eta: S,
}

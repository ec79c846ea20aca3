//! Tall-and-skinny dense kernels.
//!
//! * `tsmttsm`: `X = alpha * V^H W + beta * X` (block inner product)
//! * `tsmm`: `W = alpha * V X + beta * W`
//! * `tsmm_inplace`: `V = alpha * V X + beta * V`
//!
//! `V` and `W` have many rows, `X` is a small matrix replicated on every rank.
//! [`gemm`] routes to these kernels when the operand shapes allow it.

use crate::densemat::{AsMatMut, AsMatRef, MatRef};
use crate::error::{invalid, shape, Result};
use crate::index::BuildConfig;
use crate::par::{self, SharedMut};
use crate::scalar::{CompensatedAcc, Scalar};

/// Largest dimension of a small matrix.
pub const SMALL_DIM: usize = 64;

const MIN_BLOCK_ROWS: usize = 1024;

pub(crate) type RowKernel<S> = fn(&[S], &[S], &mut [S]);

#[allow(clippy::needless_range_loop, clippy::erasing_op, clippy::identity_op)]
mod fixed {
    use super::RowKernel;
    use crate::scalar::Scalar;

    include!(concat!(env!("OUT_DIR"), "/tsm_dispatch.rs"));
}

fn tsmttsm_row_generic<S: Scalar>(vrow: &[S], wrow: &[S], acc: &mut [S]) {
    let m = vrow.len();
    for (b, &wv) in wrow.iter().enumerate() {
        for (a, &v) in vrow.iter().enumerate() {
            acc[a + b * m] += v.conj() * wv;
        }
    }
}

fn tsmm_row_generic<S: Scalar>(vrow: &[S], x: &[S], out: &mut [S]) {
    let m = vrow.len();
    for (b, o) in out.iter_mut().enumerate() {
        let mut s = S::zero();
        for (a, &v) in vrow.iter().enumerate() {
            s += v * x[a + b * m];
        }
        *o = s;
    }
}

/// Whether a fixed-width kernel exists for `k` columns.
pub fn has_fixed_width(k: usize) -> bool {
    BuildConfig::compiled().has_block_width(k)
}

fn small_check(rows: usize, cols: usize, what: &str) -> Result<()> {
    if rows > SMALL_DIM || cols > SMALL_DIM {
        return Err(shape(format!("{what} is {rows}x{cols}, small matrices are limited to {SMALL_DIM}")));
    }
    Ok(())
}

/// Column-major copy of a small matrix.
fn small_colmajor<S: Scalar>(x: &MatRef<'_, S>) -> Vec<S> {
    let (m, k) = x.shape();
    let mut out = Vec::with_capacity(m * k);
    for b in 0..k {
        for a in 0..m {
            out.push(x.get(a, b));
        }
    }
    out
}

fn gather_row<S: Scalar>(m: &crate::densemat::RawRef<'_, S>, i: usize, out: &mut [S]) {
    for (j, o) in out.iter_mut().enumerate() {
        *o = m.data[m.at(i, j)];
    }
}

/// `X = alpha * V^H W + beta * X`. With `kahan` the sums over the long
/// dimension are compensated (and products carry their rounding error).
pub fn tsmttsm<S: Scalar>(
    x: &mut impl AsMatMut<S>,
    v: &impl AsMatRef<S>,
    w: &impl AsMatRef<S>,
    alpha: S,
    beta: S,
    kahan: bool,
) -> Result<()> {
    tsmttsm_impl(x, v, w, alpha, beta, kahan, true)
}

/// [`tsmttsm`] without the fixed-width kernels.
pub fn tsmttsm_generic<S: Scalar>(
    x: &mut impl AsMatMut<S>,
    v: &impl AsMatRef<S>,
    w: &impl AsMatRef<S>,
    alpha: S,
    beta: S,
) -> Result<()> {
    tsmttsm_impl(x, v, w, alpha, beta, false, false)
}

fn tsmttsm_impl<S: Scalar>(
    x: &mut impl AsMatMut<S>,
    v: &impl AsMatRef<S>,
    w: &impl AsMatRef<S>,
    alpha: S,
    beta: S,
    kahan: bool,
    allow_fixed: bool,
) -> Result<()> {
    let (v, w) = (v.mat_ref(), w.mat_ref());
    let mut x = x.mat_mut();
    let (n, m) = v.shape();
    let k = w.ncols();
    if w.nrows() != n || x.shape() != (m, k) {
        return Err(shape(format!("X {:?} = V^H {:?} W {:?}", x.shape(), v.shape(), w.shape())));
    }
    small_check(m, k, "X")?;

    let mut sums = vec![S::zero(); m * k];
    if alpha != S::zero() {
        let (vr, wr) = (v.raw(), w.raw());
        if kahan {
            let parts = par::map_blocks(n, MIN_BLOCK_ROWS, |rows| {
                let mut acc = vec![S::Acc::default(); m * k];
                let (mut vb, mut wb) = (vec![S::zero(); m], vec![S::zero(); k]);
                for i in rows {
                    gather_row(&vr, i, &mut vb);
                    gather_row(&wr, i, &mut wb);
                    for (b, &wv) in wb.iter().enumerate() {
                        for (a, &vv) in vb.iter().enumerate() {
                            acc[a + b * m].add_conj_prod(vv, wv);
                        }
                    }
                }
                acc
            });
            let mut total = vec![S::Acc::default(); m * k];
            for p in &parts {
                for (t, q) in total.iter_mut().zip(p) {
                    t.merge(q);
                }
            }
            for (s, t) in sums.iter_mut().zip(&total) {
                *s = t.value();
            }
        } else {
            let kernel: RowKernel<S> = match allow_fixed.then(|| fixed::tsmttsm_fixed::<S>(k)).flatten() {
                Some(f) => f,
                None => tsmttsm_row_generic::<S>,
            };
            let parts = par::map_blocks(n, MIN_BLOCK_ROWS, |rows| {
                let mut acc = vec![S::zero(); m * k];
                let (mut vb, mut wb) = (vec![S::zero(); m], vec![S::zero(); k]);
                for i in rows {
                    gather_row(&vr, i, &mut vb);
                    gather_row(&wr, i, &mut wb);
                    kernel(&vb, &wb, &mut acc);
                }
                acc
            });
            for p in parts {
                for (s, q) in sums.iter_mut().zip(p) {
                    *s += q;
                }
            }
        }
    }
    for b in 0..k {
        for a in 0..m {
            let old = x.get(a, b);
            let new = if beta == S::zero() { alpha * sums[a + b * m] } else { alpha * sums[a + b * m] + beta * old };
            x.set(a, b, new);
        }
    }
    Ok(())
}

/// `W = alpha * V X + beta * W`. `V` and `W` must not overlap.
pub fn tsmm<S: Scalar>(
    w: &mut impl AsMatMut<S>,
    v: &impl AsMatRef<S>,
    x: &impl AsMatRef<S>,
    alpha: S,
    beta: S,
) -> Result<()> {
    tsmm_impl(w, v, x, alpha, beta, true)
}

/// [`tsmm`] without the fixed-width kernels.
pub fn tsmm_generic<S: Scalar>(
    w: &mut impl AsMatMut<S>,
    v: &impl AsMatRef<S>,
    x: &impl AsMatRef<S>,
    alpha: S,
    beta: S,
) -> Result<()> {
    tsmm_impl(w, v, x, alpha, beta, false)
}

fn tsmm_impl<S: Scalar>(
    w: &mut impl AsMatMut<S>,
    v: &impl AsMatRef<S>,
    x: &impl AsMatRef<S>,
    alpha: S,
    beta: S,
    allow_fixed: bool,
) -> Result<()> {
    let (v, x) = (v.mat_ref(), x.mat_ref());
    let mut w = w.mat_mut();
    let (n, m) = v.shape();
    let k = x.ncols();
    if x.nrows() != m || w.shape() != (n, k) {
        return Err(shape(format!("W {:?} = V {:?} X {:?}", w.shape(), v.shape(), x.shape())));
    }
    small_check(m, k, "X")?;
    let (a, b) = (v.data_ptr_range(), w.mat_ref().data_ptr_range());
    if a.start < b.end && b.start < a.end {
        return Err(invalid("V and W overlap; use tsmm_inplace"));
    }
    let xs = small_colmajor(&x);
    let kernel: RowKernel<S> = match allow_fixed.then(|| fixed::tsmm_fixed::<S>(k)).flatten() {
        Some(f) => f,
        None => tsmm_row_generic::<S>,
    };
    let vr = v.raw();
    let wr = w.raw_mut();
    let (off, rs, co) = (wr.offset, wr.row_step, wr.col_off);
    let wp = SharedMut::new(wr.data);
    par::map_blocks(n, MIN_BLOCK_ROWS, |rows| {
        let (mut vb, mut out) = (vec![S::zero(); m], vec![S::zero(); k]);
        for i in rows {
            gather_row(&vr, i, &mut vb);
            if alpha != S::zero() {
                kernel(&vb, &xs, &mut out);
            }
            for (b, &o) in out.iter().enumerate() {
                // SAFETY: rows are disjoint between workers and W is a valid layout.
                unsafe {
                    let p = wp.get(off + i * rs + co[b]);
                    *p = if beta == S::zero() { alpha * o } else { alpha * o + beta * *p };
                }
            }
        }
    });
    Ok(())
}

/// `V = alpha * V X + beta * V` for square `X`.
pub fn tsmm_inplace<S: Scalar>(v: &mut impl AsMatMut<S>, x: &impl AsMatRef<S>, alpha: S, beta: S) -> Result<()> {
    let x = x.mat_ref();
    let mut v = v.mat_mut();
    let (n, m) = v.shape();
    if x.shape() != (m, m) {
        return Err(shape(format!("X must be {m}x{m}, got {:?}", x.shape())));
    }
    small_check(m, m, "X")?;
    let xs = small_colmajor(&x);
    let kernel: RowKernel<S> = fixed::tsmm_fixed::<S>(m).unwrap_or(tsmm_row_generic::<S>);
    let vr = v.raw_mut();
    let (off, rs, co) = (vr.offset, vr.row_step, vr.col_off);
    let vp = SharedMut::new(vr.data);
    par::map_blocks(n, MIN_BLOCK_ROWS, |rows| {
        let (mut vb, mut out) = (vec![S::zero(); m], vec![S::zero(); m]);
        for i in rows {
            // SAFETY: each row is read and then written by one worker only.
            unsafe {
                for (j, b) in vb.iter_mut().enumerate() {
                    *b = *vp.get(off + i * rs + co[j]);
                }
                if alpha != S::zero() {
                    kernel(&vb, &xs, &mut out);
                }
                for (j, &o) in out.iter().enumerate() {
                    let p = vp.get(off + i * rs + co[j]);
                    *p = if beta == S::zero() { alpha * o } else { alpha * o + beta * vb[j] };
                }
            }
        }
    });
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trans {
    No,
    T,
    /// Conjugate transpose.
    ConjT,
}

/// Kernel a [`gemm`] call was routed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GemmPath {
    Tsmttsm,
    Tsmm,
    Reference,
}

fn op_shape(m: &MatRef<'_, impl Scalar>, t: Trans) -> (usize, usize) {
    match t {
        Trans::No => m.shape(),
        _ => (m.ncols(), m.nrows()),
    }
}

fn op_get<S: Scalar>(m: &MatRef<'_, S>, t: Trans, i: usize, j: usize) -> S {
    match t {
        Trans::No => m.get(i, j),
        Trans::T => m.get(j, i),
        Trans::ConjT => m.get(j, i).conj(),
    }
}

fn tall_skinny<S: Scalar>(m: &MatRef<'_, S>) -> bool {
    m.shape().1 <= SMALL_DIM && m.shape().0 > SMALL_DIM
}

fn small<S: Scalar>(m: &MatRef<'_, S>) -> bool {
    m.shape().0 <= SMALL_DIM && m.shape().1 <= SMALL_DIM
}

/// `C = alpha * op(A) op(B) + beta * C`, routed to the tall-skinny kernels
/// when the shapes fit and to a plain triple loop otherwise.
pub fn gemm<S: Scalar>(
    c: &mut impl AsMatMut<S>,
    a: &impl AsMatRef<S>,
    b: &impl AsMatRef<S>,
    alpha: S,
    beta: S,
    trans_a: Trans,
    trans_b: Trans,
) -> Result<GemmPath> {
    let (a, b) = (a.mat_ref(), b.mat_ref());
    let mut c = c.mat_mut();
    let (p, q) = op_shape(&a, trans_a);
    let (q2, r) = op_shape(&b, trans_b);
    if q != q2 || c.shape() != (p, r) {
        return Err(shape(format!("C {:?} = op(A) {:?} op(B) {:?}", c.shape(), (p, q), (q2, r))));
    }
    let herm = trans_a == Trans::ConjT || (trans_a == Trans::T && !S::VALUE_TYPE.is_complex());
    if herm && trans_b == Trans::No && tall_skinny(&a) && b.ncols() <= SMALL_DIM {
        tsmttsm(&mut c, &a, &b, alpha, beta, false)?;
        return Ok(GemmPath::Tsmttsm);
    }
    let (ap, cp) = (a.data_ptr_range(), c.mat_ref().data_ptr_range());
    let disjoint = ap.end <= cp.start || cp.end <= ap.start;
    if trans_a == Trans::No && trans_b == Trans::No && tall_skinny(&a) && small(&b) && disjoint {
        tsmm(&mut c, &a, &b, alpha, beta)?;
        return Ok(GemmPath::Tsmm);
    }
    gemm_reference(&mut c, &a, &b, alpha, beta, trans_a, trans_b);
    Ok(GemmPath::Reference)
}

fn gemm_reference<S: Scalar>(
    c: &mut crate::densemat::MatMut<'_, S>,
    a: &MatRef<'_, S>,
    b: &MatRef<'_, S>,
    alpha: S,
    beta: S,
    ta: Trans,
    tb: Trans,
) {
    let (p, q) = op_shape(a, ta);
    let r = op_shape(b, tb).1;
    let mut out = vec![S::zero(); p * r];
    for i in 0..p {
        for j in 0..r {
            let mut s = S::zero();
            for l in 0..q {
                s += op_get(a, ta, i, l) * op_get(b, tb, l, j);
            }
            out[i * r + j] = s;
        }
    }
    for i in 0..p {
        for j in 0..r {
            let new = if beta == S::zero() { alpha * out[i * r + j] } else { alpha * out[i * r + j] + beta * c.get(i, j) };
            c.set(i, j, new);
        }
    }
}

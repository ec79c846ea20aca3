//! Chunk kernels that are not generated per `(C, width)` pair.
//!
//! Every kernel computes the plain product of one chunk with the block vector
//! `x` and writes it to `acc[r * w + v]` (row slot `r`, column `v`).

use crate::index::Lidx;
use crate::scalar::Scalar;

/// One chunk of a SELL matrix together with the addressing of `x`.
pub(crate) struct ChunkArgs<'a, S> {
    /// Values of the chunk, starting at its offset.
    pub val: &'a [S],
    pub col: &'a [Lidx],
    /// Chunk length (entries per row slot).
    pub len: usize,
    /// Chunk height.
    pub c: usize,
    /// Block width.
    pub w: usize,
    pub x: &'a [S],
    pub x_off: usize,
    /// Distance between consecutive rows of `x`.
    pub x_rs: usize,
    /// Offset of column `v` within a row of `x`.
    pub x_co: &'a [usize],
}

pub(crate) type ChunkFn<S> = fn(&ChunkArgs<'_, S>, &mut [S]);

/// Fixed chunk height, any width, rows of `x` contiguous.
pub(crate) fn vec_c<S: Scalar, const C: usize>(a: &ChunkArgs<'_, S>, acc: &mut [S]) {
    let w = a.w;
    let acc = &mut acc[..C * w];
    acc.fill(S::zero());
    for j in 0..a.len {
        let vals = &a.val[j * C..(j + 1) * C];
        let cols = &a.col[j * C..(j + 1) * C];
        for (r, (&v, &c)) in vals.iter().zip(cols).enumerate() {
            let base = a.x_off + c as usize * a.x_rs;
            let xr = &a.x[base..base + w];
            for (d, &xv) in acc[r * w..(r + 1) * w].iter_mut().zip(xr) {
                *d += v * xv;
            }
        }
    }
}

/// Fixed chunk height, any width, arbitrary column offsets.
pub(crate) fn plain_c<S: Scalar, const C: usize>(a: &ChunkArgs<'_, S>, acc: &mut [S]) {
    let w = a.w;
    let acc = &mut acc[..C * w];
    acc.fill(S::zero());
    for j in 0..a.len {
        for r in 0..C {
            let v = a.val[j * C + r];
            let base = a.x_off + a.col[j * C + r] as usize * a.x_rs;
            for (d, &co) in acc[r * w..(r + 1) * w].iter_mut().zip(a.x_co) {
                *d += v * a.x[base + co];
            }
        }
    }
}

/// Any chunk height, fixed width.
pub(crate) fn plain_w<S: Scalar, const W: usize>(a: &ChunkArgs<'_, S>, acc: &mut [S]) {
    let c = a.c;
    let acc = &mut acc[..c * W];
    acc.fill(S::zero());
    let mut co = [0usize; W];
    co.copy_from_slice(&a.x_co[..W]);
    for j in 0..a.len {
        for r in 0..c {
            let v = a.val[j * c + r];
            let base = a.x_off + a.col[j * c + r] as usize * a.x_rs;
            let dst = &mut acc[r * W..(r + 1) * W];
            for k in 0..W {
                dst[k] += v * a.x[base + co[k]];
            }
        }
    }
}

/// The fallback that always applies.
pub(crate) fn plain_any<S: Scalar>(a: &ChunkArgs<'_, S>, acc: &mut [S]) {
    let (c, w) = (a.c, a.w);
    let acc = &mut acc[..c * w];
    acc.fill(S::zero());
    for j in 0..a.len {
        for r in 0..c {
            let v = a.val[j * c + r];
            let base = a.x_off + a.col[j * c + r] as usize * a.x_rs;
            for (d, &co) in acc[r * w..(r + 1) * w].iter_mut().zip(a.x_co) {
                *d += v * a.x[base + co];
            }
        }
    }
}

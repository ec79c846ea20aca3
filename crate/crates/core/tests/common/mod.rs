//! Test-side oracles: plain triple loops over dense or triplet data that share
//! no code with the library kernels.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sellkit::{Complex64, CrsData, DenseMat, Scalar, StorageOrder};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Triplets of a random `n x m` matrix with about `density * n * m` entries.
pub fn random_triplets(r: &mut ChaCha8Rng, n: usize, m: usize, density: f64) -> Vec<(usize, usize, f64)> {
    let mut t = Vec::new();
    for i in 0..n {
        for j in 0..m {
            if r.random_bool(density) {
                t.push((i, j, r.random_range(-1.0..1.0)));
            }
        }
    }
    t
}

/// Random matrix whose row lengths vary strongly (some empty rows, a few long
/// ones) so σ-sorting has something to do.
pub fn random_crs(r: &mut ChaCha8Rng, n: usize, m: usize, max_density: f64) -> CrsData<f64> {
    let mut t = Vec::new();
    for i in 0..n {
        let d = r.random_range(0.0..max_density) * if r.random_bool(0.1) { 4.0 } else { 1.0 };
        for j in 0..m {
            if r.random_bool(d.min(1.0)) {
                t.push((i, j, r.random_range(-1.0..1.0)));
            }
        }
    }
    CrsData::from_triplets(n, m, &t).unwrap()
}

pub fn complexify(r: &mut ChaCha8Rng, a: &CrsData<f64>) -> CrsData<Complex64> {
    let val = a.val.iter().map(|&v| Complex64::new(v, r.random_range(-1.0..1.0))).collect();
    CrsData::new(a.nrows, a.ncols, a.rowptr.clone(), a.col.clone(), val).unwrap()
}

/// Dense row-major copy of a CRS matrix, built from the raw arrays.
pub fn dense_of<S: Scalar>(a: &CrsData<S>) -> Vec<Vec<S>> {
    let mut d = vec![vec![S::zero(); a.ncols]; a.nrows];
    for i in 0..a.nrows {
        for k in a.rowptr[i] as usize..a.rowptr[i + 1] as usize {
            d[i][a.col[k] as usize] += a.val[k];
        }
    }
    d
}

/// `A x` for a block of columns given as rows of `x`.
pub fn matmul<S: Scalar>(a: &[Vec<S>], x: &[Vec<S>]) -> Vec<Vec<S>> {
    let w = x.first().map_or(0, |r| r.len());
    a.iter()
        .map(|row| {
            (0..w)
                .map(|v| row.iter().zip(x).fold(S::zero(), |acc, (aij, xr)| acc + *aij * xr[v]))
                .collect()
        })
        .collect()
}

pub fn random_block(r: &mut ChaCha8Rng, n: usize, w: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..w).map(|_| r.random_range(-1.0..1.0)).collect()).collect()
}

pub fn random_cblock(r: &mut ChaCha8Rng, n: usize, w: usize) -> Vec<Vec<Complex64>> {
    (0..n)
        .map(|_| (0..w).map(|_| Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0))).collect())
        .collect()
}

pub fn mat<S: Scalar>(rows: &[Vec<S>], order: StorageOrder) -> DenseMat<S> {
    DenseMat::from_rows(rows, order).unwrap()
}

/// `|a - b| <= eps * (1 + |b|)` elementwise, with a readable failure.
pub fn assert_close<S: Scalar>(got: &[Vec<S>], want: &[Vec<S>], eps: f64, what: &str) {
    assert_eq!(got.len(), want.len(), "{what}: row count");
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        assert_eq!(g.len(), w.len(), "{what}: width of row {i}");
        for (v, (a, b)) in g.iter().zip(w).enumerate() {
            let err = (*a - *b).modulus();
            let tol = eps * (1.0 + b.modulus());
            assert!(err <= tol, "{what}: ({i},{v}) got {a:?} want {b:?} (err {err:e})");
        }
    }
}

pub fn close<S: Scalar>(a: S, b: S, eps: f64) -> bool {
    (a - b).modulus() <= eps * (1.0 + b.modulus())
}

/// Conjugated column dots `sum_i conj(a[i][v]) * b[i][v]`.
pub fn col_dots<S: Scalar>(a: &[Vec<S>], b: &[Vec<S>]) -> Vec<S> {
    let w = a.first().map_or(0, |r| r.len());
    (0..w).map(|v| a.iter().zip(b).fold(S::zero(), |acc, (x, y)| acc + x[v].conj() * y[v])).collect()
}

//! Benchmark workloads shared by the criterion benches and the
//! informational report.

use std::fmt::Write as _;
use std::time::Instant;

use sellkit::spmv::spmv_with_variant;
use sellkit::{CrsData, DenseMat, KernelVariant, SellMatrix, SellParams, SpmvOpts, StorageOrder};

/// Five-point Laplacian on a `g x g` grid, assembled straight into CRS arrays.
pub fn lap2d(g: usize) -> CrsData<f64> {
    let n = g * g;
    let mut rowptr = Vec::with_capacity(n + 1);
    let mut col = Vec::with_capacity(5 * n);
    let mut val = Vec::with_capacity(5 * n);
    rowptr.push(0i64);
    for i in 0..g {
        for j in 0..g {
            let row = i * g + j;
            if i > 0 {
                col.push((row - g) as i64);
                val.push(-1.0);
            }
            if j > 0 {
                col.push((row - 1) as i64);
                val.push(-1.0);
            }
            col.push(row as i64);
            val.push(4.0);
            if j + 1 < g {
                col.push((row + 1) as i64);
                val.push(-1.0);
            }
            if i + 1 < g {
                col.push((row + g) as i64);
                val.push(-1.0);
            }
            rowptr.push(col.len() as i64);
        }
    }
    CrsData::new(n, n, rowptr, col, val).expect("valid laplacian")
}

/// `n x w` block with a smooth deterministic fill.
pub fn block(n: usize, w: usize, order: StorageOrder) -> DenseMat<f64> {
    DenseMat::from_fn(n, w, order, |i, v| 1.0 + ((i * 7 + v * 3) % 11) as f64 * 0.125).expect("positive shape")
}

/// Size of the largest CPU cache reported by sysfs, 32 MiB when unknown.
pub fn llc_bytes() -> usize {
    let mut best = 0;
    for idx in 0..8 {
        let path = format!("/sys/devices/system/cpu/cpu0/cache/index{idx}/size");
        let Ok(s) = std::fs::read_to_string(path) else { continue };
        let s = s.trim();
        let (num, mult) = match s.chars().last() {
            Some('K') => (&s[..s.len() - 1], 1 << 10),
            Some('M') => (&s[..s.len() - 1], 1 << 20),
            _ => (s, 1),
        };
        if let Ok(v) = num.parse::<usize>() {
            best = best.max(v * mult);
        }
    }
    if best == 0 {
        32 << 20
    } else {
        best
    }
}

/// Bytes of matrix data an SpMV streams: one value and one 4-byte index per
/// stored slot.
pub fn matrix_bytes(m: &SellMatrix<f64>) -> usize {
    m.val().len() * (8 + 4)
}

/// Best-of-`reps` wall time of `f` in seconds.
pub fn best_time(reps: usize, mut f: impl FnMut()) -> f64 {
    f();
    (0..reps.max(1))
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_secs_f64()
        })
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone)]
pub struct ReportConfig {
    /// Smallest matrix footprint, in bytes.
    pub min_matrix_bytes: usize,
    pub chunk_height: usize,
    pub reps: usize,
}

impl Default for ReportConfig {
    /// A matrix of at least four times the last-level cache.
    fn default() -> Self {
        Self { min_matrix_bytes: 4 * llc_bytes(), chunk_height: 32, reps: 5 }
    }
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub llc_bytes: usize,
    pub matrix_bytes: usize,
    pub nrows: usize,
    pub nnz: usize,
    pub format: String,
    /// Gflop/s of one width-4 SpMMV.
    pub spmmv4: f64,
    /// Gflop/s of four width-1 SpMVs over the same vectors.
    pub spmv_x4: f64,
    /// Gflop/s of width 4 on the most specialized compiled kernel.
    pub specialized: f64,
    pub specialized_name: String,
    /// Gflop/s of width 4 on the generic kernel.
    pub generic: f64,
}

impl BenchReport {
    pub fn spmmv_speedup(&self) -> f64 {
        self.spmmv4 / self.spmv_x4
    }

    pub fn specialization_gain(&self) -> f64 {
        self.specialized / self.generic
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let mb = |b: usize| b as f64 / (1 << 20) as f64;
        let _ = writeln!(s, "# SpMMV benchmark report");
        let _ = writeln!(s);
        let _ = writeln!(s, "last-level cache: {:.1} MiB", mb(self.llc_bytes));
        let _ = writeln!(
            s,
            "matrix: lap2d, {} rows, {} nonzeros, {}, {:.1} MiB ({:.1}x cache)",
            self.nrows,
            self.nnz,
            self.format,
            mb(self.matrix_bytes),
            self.matrix_bytes as f64 / self.llc_bytes as f64
        );
        let _ = writeln!(s);
        let _ = writeln!(s, "| run | Gflop/s |");
        let _ = writeln!(s, "|---|---|");
        let _ = writeln!(s, "| SpMMV width 4 | {:.3} |", self.spmmv4);
        let _ = writeln!(s, "| 4 x SpMV width 1 | {:.3} |", self.spmv_x4);
        let _ = writeln!(s, "| width 4, kernel {} | {:.3} |", self.specialized_name, self.specialized);
        let _ = writeln!(s, "| width 4, generic kernel | {:.3} |", self.generic);
        let _ = writeln!(s);
        let verdict = |ok: bool| if ok { "met" } else { "not met" };
        let _ = writeln!(
            s,
            "SpMMV / 4 x SpMV = {:.2} (target >= 1.2: {})",
            self.spmmv_speedup(),
            verdict(self.spmmv_speedup() >= 1.2)
        );
        let _ = writeln!(
            s,
            "specialized / generic = {:.2} (target >= 1.0: {})",
            self.specialization_gain(),
            verdict(self.specialization_gain() >= 1.0)
        );
        s
    }
}

/// Measures SpMMV against repeated SpMV and a specialized width-4 kernel
/// against the generic one, on a Laplacian that does not fit in cache.
pub fn run_report(cfg: &ReportConfig) -> sellkit::Result<BenchReport> {
    let c = cfg.chunk_height;
    // lap2d has just under 5 nonzeros per row, 12 bytes each
    let g = ((cfg.min_matrix_bytes as f64 / 60.0).sqrt().ceil() as usize).max(8);
    let mut grid = g;
    let (m, crs_nnz) = loop {
        let a = lap2d(grid);
        let m = SellMatrix::from_crs(&a, SellParams::new(c, 1)?)?;
        if matrix_bytes(&m) >= cfg.min_matrix_bytes {
            break (m, a.nnz());
        }
        grid += grid / 10 + 1;
    };
    let n = m.nrows();
    let flops4 = 2.0 * crs_nnz as f64 * 4.0;
    let gf = |secs: f64| flops4 / secs / 1e9;

    let x4 = block(n, 4, StorageOrder::RowMajor);
    let mut y4 = DenseMat::create(n, 4, StorageOrder::RowMajor)?;
    let t_mm = best_time(cfg.reps, || {
        sellkit::spmv(&mut y4, &m, &x4, &mut SpmvOpts::new()).expect("spmmv");
    });

    let xs: Vec<DenseMat<f64>> = (0..4).map(|_| block(n, 1, StorageOrder::ColMajor)).collect();
    let mut ys: Vec<DenseMat<f64>> = (0..4).map(|_| DenseMat::create(n, 1, StorageOrder::ColMajor)).collect::<Result<_, _>>()?;
    let t_x4 = best_time(cfg.reps, || {
        for (x, y) in xs.iter().zip(ys.iter_mut()) {
            sellkit::spmv(y, &m, x, &mut SpmvOpts::new()).expect("spmv");
        }
    });

    let best = KernelVariant::candidates(c, 4)[0];
    let t_spec = best_time(cfg.reps, || {
        spmv_with_variant(&mut y4, &m, &x4, &mut SpmvOpts::new(), best).expect("specialized");
    });
    let t_gen = best_time(cfg.reps, || {
        spmv_with_variant(&mut y4, &m, &x4, &mut SpmvOpts::new(), KernelVariant::FALLBACK).expect("generic");
    });

    Ok(BenchReport {
        llc_bytes: llc_bytes(),
        matrix_bytes: matrix_bytes(&m),
        nrows: n,
        nnz: crs_nnz,
        format: format!("SELL-{c}-1"),
        spmmv4: gf(t_mm),
        spmv_x4: gf(t_x4),
        specialized: gf(t_spec),
        specialized_name: best.to_string(),
        generic: gf(t_gen),
    })
}

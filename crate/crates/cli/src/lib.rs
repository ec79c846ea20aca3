//! `spmvbench`: builds a SELL-C-σ matrix, runs SpMV on simulated ranks and
//! prints per-region performance.
//!
//! ```text
//! spmvbench -v -m matrix.mtx -f SELL-32-1 -w 1:2.75 -s nocomm
//! ```

use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Barrier, Mutex};
use std::time::Instant;

use clap::{Parser, ValueEnum};
use sellkit::partition::{halo_exchange, split_all};
use sellkit::perfmodel::{nominal_spmv_flops, RegionStats};
use sellkit::{
    compute_partition, dist_spmv, spmv, CrsData, DenseMat, FnRowSource, InProcess, OverlapMode, Pool, PoolConfig,
    RankWeights, SellMatrix, SellParams, SpmvOpts, SplitMatrix, StorageOrder, Tolerance, WeightMode,
};

pub const REGION: &str = "spmv (GF/s)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Variant {
    /// Exchange the halo in every iteration.
    Default,
    /// Exchange once up front, then compute without communication.
    Nocomm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Nooverlap,
    Naive,
    Task,
}

#[derive(Debug, Clone, Parser)]
#[command(name = "spmvbench", about = "SELL-C-sigma SpMV benchmark")]
pub struct BenchArgs {
    /// Matrix Market file, or a binary CRS file (any other extension).
    #[arg(short = 'm', long = "matrix", conflicts_with = "generate")]
    pub matrix: Option<PathBuf>,
    /// Built-in matrix instead of a file: `identity:N` or `lap2d:N` (N x N grid).
    #[arg(short = 'g', long = "gen")]
    pub generate: Option<String>,
    /// Storage format, `SELL-<C>-<sigma>` or `CRS`.
    #[arg(short = 'f', long = "format", default_value = "SELL-32-1")]
    pub format: String,
    #[arg(short = 'v', long = "verbose")]
    pub verbose: bool,
    /// Colon-separated work weights, one per rank.
    #[arg(short = 'w', long = "weights")]
    pub weights: Option<String>,
    /// Weight rows by nonzeros instead of by row count.
    #[arg(long = "by-nnz")]
    pub by_nnz: bool,
    #[arg(short = 's', long = "spmv", value_enum, default_value = "default")]
    pub variant: Variant,
    #[arg(short = 'n', long = "iterations", default_value_t = 100)]
    pub iterations: usize,
    /// Number of simulated ranks; defaults to the number of weights.
    #[arg(long = "ranks")]
    pub ranks: Option<usize>,
    #[arg(long = "mode", value_enum, default_value = "nooverlap")]
    pub mode: Mode,
    /// Block vector width.
    #[arg(long = "width", default_value_t = 1)]
    pub width: usize,
}

impl BenchArgs {
    pub fn params(&self) -> Result<SellParams, CliError> {
        parse_format(&self.format)
    }

    pub fn nranks(&self) -> usize {
        self.ranks.unwrap_or_else(|| self.weights.as_ref().map_or(1, |w| w.split(':').count()))
    }

    pub fn rank_weights(&self) -> Result<RankWeights, CliError> {
        let mode = if self.by_nnz { WeightMode::ByNnz } else { WeightMode::ByRows };
        let w = match &self.weights {
            Some(s) => RankWeights::parse(s, mode).map_err(|e| CliError::Usage(e.to_string()))?,
            None => RankWeights::equal(self.nranks(), mode).map_err(|e| CliError::Usage(e.to_string()))?,
        };
        if w.nranks() != self.nranks() {
            return Err(CliError::Usage(format!("{} weights for {} ranks", w.nranks(), self.nranks())));
        }
        Ok(w)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CliError {
    /// `--help` or `--version`; not a failure.
    Info(String),
    Usage(String),
    Io(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Info(_) => 0,
            CliError::Usage(_) => 1,
            CliError::Io(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Info(s) => f.write_str(s),
            CliError::Usage(s) => write!(f, "usage error: {s}"),
            CliError::Io(s) => write!(f, "io error: {s}"),
            CliError::Numeric(s) => write!(f, "numeric failure: {s}"),
        }
    }
}

impl std::error::Error for CliError {}

/// `SELL-<C>-<sigma>` (case-insensitive) or `CRS`.
pub fn parse_format(s: &str) -> Result<SellParams, CliError> {
    let bad = || CliError::Usage(format!("malformed format {s:?}, expected SELL-<C>-<sigma>"));
    if s.eq_ignore_ascii_case("crs") {
        return Ok(SellParams::crs());
    }
    let parts: Vec<&str> = s.split('-').collect();
    let [head, c, sigma] = parts.as_slice() else { return Err(bad()) };
    if !head.eq_ignore_ascii_case("sell") {
        return Err(bad());
    }
    let c: usize = c.parse().map_err(|_| bad())?;
    let sigma: usize = sigma.parse().map_err(|_| bad())?;
    SellParams::new(c, sigma).map_err(|e| CliError::Usage(e.to_string()))
}

pub fn parse_args<I, T>(argv: I) -> Result<BenchArgs, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = BenchArgs::try_parse_from(argv).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => CliError::Info(e.to_string()),
        _ => CliError::Usage(e.to_string()),
    })?;
    args.params()?;
    if args.matrix.is_none() && args.generate.is_none() {
        return Err(CliError::Usage("one of -m or --gen is required".into()));
    }
    if args.iterations == 0 {
        return Err(CliError::Usage("need at least one iteration".into()));
    }
    if args.width == 0 {
        return Err(CliError::Usage("width must be positive".into()));
    }
    if args.nranks() == 0 {
        return Err(CliError::Usage("need at least one rank".into()));
    }
    args.rank_weights()?;
    Ok(args)
}

/// Measures the duration of one benchmark iteration.
pub trait Timer: Send {
    fn start(&mut self);
    /// Seconds since the matching `start`.
    fn stop(&mut self) -> f64;
}

#[derive(Debug)]
pub struct MonotonicTimer(Instant);

impl Default for MonotonicTimer {
    fn default() -> Self {
        Self(Instant::now())
    }
}

impl Timer for MonotonicTimer {
    fn start(&mut self) {
        self.0 = Instant::now();
    }

    fn stop(&mut self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

/// Replays a fixed list of durations, cyclically.
#[derive(Debug, Clone)]
pub struct FakeTimer {
    durations: Vec<f64>,
    next: usize,
}

impl FakeTimer {
    pub fn new(durations: Vec<f64>) -> Self {
        assert!(!durations.is_empty() && durations.iter().all(|d| *d > 0.0));
        Self { durations, next: 0 }
    }
}

impl Timer for FakeTimer {
    fn start(&mut self) {}

    fn stop(&mut self) -> f64 {
        let d = self.durations[self.next % self.durations.len()];
        self.next += 1;
        d
    }
}

/// Everything a run takes from its surroundings.
pub struct RunEnv {
    pub timer: Box<dyn Timer>,
    /// Rank count the perf warning compares against.
    pub suggested_ranks: usize,
    /// PUs handed to each rank's task pool in task mode.
    pub pus_per_rank: usize,
}

impl RunEnv {
    /// Monotonic clock; one suggested rank per NUMA node.
    pub fn system(nranks: usize) -> Self {
        let cfg = PoolConfig::from_env();
        Self {
            timer: Box::new(MonotonicTimer::default()),
            suggested_ranks: cfg.numa_nodes(),
            pus_per_rank: (cfg.npus / nranks.max(1)).max(2),
        }
    }

    pub fn fake(durations: Vec<f64>, suggested_ranks: usize) -> Self {
        Self { timer: Box::new(FakeTimer::new(durations)), suggested_ranks, pus_per_rank: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Outcome {
    pub stdout: String,
    pub stderr: String,
    pub code: i32,
}

/// Parses `argv` and runs the benchmark.
pub fn run<I, T>(argv: I, env: &mut RunEnv) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let mut out = Outcome::default();
    let args = match parse_args(argv) {
        Ok(a) => a,
        Err(CliError::Info(s)) => {
            out.stdout = s;
            return out;
        }
        Err(e) => {
            out.stderr = format!("{e}\n");
            out.code = e.exit_code();
            return out;
        }
    };
    match run_bench(&args, env, &mut out.stderr) {
        Ok(regions) => out.stdout = format_table(&regions),
        Err(e) => {
            let _ = writeln!(out.stderr, "{e}");
            out.code = e.exit_code();
        }
    }
    out
}

/// Three significant digits with a signed two-digit exponent: `1.64e+01`.
pub fn sci(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    let s = format!("{v:.2e}");
    let (mant, exp) = s.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mant}e{sign}{:02}", exp.abs())
}

pub fn format_table(regions: &[RegionStats]) -> String {
    let wname = regions.iter().map(|r| r.name().len()).max().unwrap_or(0).max("Region".len()).max(11);
    let mut s = String::new();
    let header = format!("{:<wname$} | Calls |    P_max | P_skip10", "Region");
    let _ = writeln!(s, "{header}");
    let _ = writeln!(s, "{}", "-".repeat(header.len()));
    for r in regions {
        let pmax = r.p_max().map_or_else(|| "n/a".to_string(), sci);
        let skip = r.p_skip10().map_or_else(|_| "n/a".to_string(), sci);
        let _ = writeln!(s, "{:<wname$} | {:>5} | {:>8} | {:>8}", r.name(), r.ncalls(), pmax, skip);
    }
    s
}

/// `identity:N` or `lap2d:N`, assembled through a row callback.
pub fn generate(spec: &str) -> Result<CrsData<f64>, CliError> {
    let bad = || CliError::Usage(format!("unknown generator {spec:?}, expected identity:N or lap2d:N"));
    let (kind, n) = spec.split_once(':').ok_or_else(bad)?;
    let n: usize = n.parse().map_err(|_| bad())?;
    if n == 0 {
        return Err(bad());
    }
    let built = match kind {
        "identity" => {
            let src = FnRowSource::new(n, n, 1, |row: i64, cols: &mut Vec<i64>, vals: &mut Vec<f64>| {
                cols.push(row);
                vals.push(1.0);
            });
            SellMatrix::build(&src, SellParams::crs())
        }
        "lap2d" => {
            let g = n as i64;
            let src = FnRowSource::new(n * n, n * n, 5, move |row: i64, cols: &mut Vec<i64>, vals: &mut Vec<f64>| {
                let (i, j) = (row / g, row % g);
                for (di, dj, v) in [(-1, 0, -1.0), (0, -1, -1.0), (0, 0, 4.0), (0, 1, -1.0), (1, 0, -1.0)] {
                    let (a, b) = (i + di, j + dj);
                    if (0..g).contains(&a) && (0..g).contains(&b) {
                        cols.push(a * g + b);
                        vals.push(v);
                    }
                }
            });
            SellMatrix::build(&src, SellParams::crs())
        }
        _ => return Err(bad()),
    };
    built.map(|m| m.to_crs()).map_err(|e| CliError::Numeric(e.to_string()))
}

fn load(args: &BenchArgs) -> Result<CrsData<f64>, CliError> {
    if let Some(g) = &args.generate {
        return generate(g);
    }
    let path = args.matrix.as_ref().expect("checked by parse_args");
    let res = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("mtx")) {
        sellkit::io::read_matrix_market(path)
    } else {
        sellkit::io::read_binary_crs(path)
    };
    res.map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn input_block(n: usize, w: usize) -> DenseMat<f64> {
    DenseMat::from_fn(n, w, StorageOrder::RowMajor, |i, v| 1.0 + i as f64 / n as f64 + v as f64).expect("positive shape")
}

/// Local input rows followed by the halo, for the communication-free variant.
fn extended_input(sm: &SplitMatrix<f64>, x: &DenseMat<f64>, transport: &InProcess) -> sellkit::Result<DenseMat<f64>> {
    let halo = halo_exchange(sm, x, transport)?;
    let n = sm.nlocal();
    DenseMat::from_fn(n + sm.nhalo(), x.ncols(), StorageOrder::RowMajor, |i, v| {
        if i < n {
            x.get(i, v)
        } else {
            halo.get(i - n, v)
        }
    })
}

/// Runs the benchmark and returns the measured regions. Warnings and verbose
/// information go to `log`.
pub fn run_bench(args: &BenchArgs, env: &mut RunEnv, log: &mut String) -> Result<Vec<RegionStats>, CliError> {
    let params = args.params()?;
    let k = args.nranks();
    let weights = args.rank_weights()?;
    if args.verbose && k != env.suggested_ranks {
        let _ = writeln!(log, "[GHOST] PERFWARNING: The number of MPI ranks ({k}) on this node is not optimal!");
        let _ = writeln!(
            log,
            "                     Suggested number: {0} ({0} NUMA domain{1})",
            env.suggested_ranks,
            if env.suggested_ranks == 1 { "" } else { "s" }
        );
    }
    let a = load(args)?;
    if a.nrows != a.ncols {
        return Err(CliError::Io(format!("matrix is {}x{}, spmvbench needs a square matrix", a.nrows, a.ncols)));
    }
    if a.nrows < k {
        return Err(CliError::Usage(format!("{k} ranks for {} rows", a.nrows)));
    }
    let plan = compute_partition(a.nrows, Some(&a.rowlens()), &weights).map_err(|e| CliError::Usage(e.to_string()))?;
    let parts = split_all(&a, &plan, params).map_err(|e| CliError::Numeric(e.to_string()))?;
    if args.verbose {
        let c = params.c();
        let _ = writeln!(log, "matrix: {} rows, {} nonzeros, SELL-{c}-{}", a.nrows, a.nnz(), params.sigma());
        for sm in &parts {
            let _ = writeln!(
                log,
                "rank {}: rows {}..{}, {} halo columns, beta {:.4}",
                sm.rank(),
                sm.rows().start,
                sm.rows().end,
                sm.nhalo(),
                sm.full().beta()
            );
        }
    }

    let w = args.width;
    let x = input_block(a.nrows, w);
    let transport = InProcess::new(k);
    let barrier = Barrier::new(k + 1);
    let failed = AtomicBool::new(false);
    let errors: Mutex<Vec<String>> = Mutex::default();
    let flops = nominal_spmv_flops(a.nnz(), w);
    let mut stats = RegionStats::new(REGION);
    let iters = args.iterations;
    let pus = env.pus_per_rank;
    let timer = &mut env.timer;

    let ys: Vec<Option<DenseMat<f64>>> = std::thread::scope(|s| {
        let handles: Vec<_> = parts
            .iter()
            .map(|sm| {
                let (x, transport, barrier, failed, errors) = (&x, &transport, &barrier, &failed, &errors);
                s.spawn(move || -> Option<DenseMat<f64>> {
                    let rows = sm.rows();
                    let xl = DenseMat::from_fn(rows.len(), w, StorageOrder::RowMajor, |i, v| x.get(rows.start + i, v)).ok()?;
                    let mut y = DenseMat::create(rows.len(), w, StorageOrder::RowMajor).ok()?;
                    let pool = (args.mode == Mode::Task).then(|| Pool::new(PoolConfig::new(pus)));
                    let fail = |e: String| {
                        failed.store(true, Ordering::SeqCst);
                        errors.lock().unwrap().push(format!("rank {}: {e}", sm.rank()));
                    };
                    let pool = match pool.transpose() {
                        Ok(p) => p,
                        Err(e) => {
                            fail(e.to_string());
                            None
                        }
                    };
                    // a failed setup must still run the barriers below
                    let ext = match args.variant {
                        Variant::Nocomm if !failed.load(Ordering::SeqCst) => {
                            extended_input(sm, &xl, transport).map_err(|e| fail(e.to_string())).ok()
                        }
                        _ => None,
                    };
                    for _ in 0..iters {
                        barrier.wait();
                        if !failed.load(Ordering::SeqCst) {
                            let res = match (args.variant, &ext, &pool) {
                                (Variant::Nocomm, Some(ext), _) => spmv(&mut y, sm.full(), ext, &mut SpmvOpts::new()).map(|_| ()),
                                (Variant::Nocomm, None, _) => Ok(()),
                                (Variant::Default, _, pool) => {
                                    let mode = match (args.mode, pool) {
                                        (Mode::Nooverlap, _) => OverlapMode::NoOverlap,
                                        (Mode::Naive, _) => OverlapMode::NaiveOverlap,
                                        (Mode::Task, Some(p)) => OverlapMode::TaskOverlap(p),
                                        (Mode::Task, None) => OverlapMode::NoOverlap,
                                    };
                                    dist_spmv(&mut y, sm, &xl, &mut SpmvOpts::new(), mode, transport)
                                }
                            };
                            if let Err(e) = res {
                                fail(e.to_string());
                            }
                        }
                        barrier.wait();
                    }
                    (!failed.load(Ordering::SeqCst)).then_some(y)
                })
            })
            .collect();
        for _ in 0..iters {
            barrier.wait();
            timer.start();
            barrier.wait();
            let secs = timer.stop();
            stats.record(flops / secs / 1e9);
        }
        handles.into_iter().map(|h| h.join().unwrap_or(None)).collect()
    });

    let errs = errors.into_inner().unwrap();
    if !errs.is_empty() {
        return Err(CliError::Numeric(errs.join("; ")));
    }
    // check the assembled result against a serial CRS product
    let reference = SellMatrix::from_crs(&a, SellParams::crs()).map_err(|e| CliError::Numeric(e.to_string()))?;
    let mut want = DenseMat::create(a.nrows, w, StorageOrder::RowMajor).map_err(|e| CliError::Numeric(e.to_string()))?;
    spmv(&mut want, &reference, &x, &mut SpmvOpts::new()).map_err(|e| CliError::Numeric(e.to_string()))?;
    let tol = Tolerance::for_type::<f64>();
    for (sm, y) in parts.iter().zip(&ys) {
        let y = y.as_ref().ok_or_else(|| CliError::Numeric(format!("rank {} produced no result", sm.rank())))?;
        for i in 0..sm.nlocal() {
            for v in 0..w {
                let (got, exp) = (y.get(i, v), want.get(sm.rows().start + i, v));
                if !got.is_finite() || !tol.close(got, exp) {
                    return Err(CliError::Numeric(format!("row {} column {v}: {got} vs {exp}", sm.rows().start + i)));
                }
            }
        }
    }
    Ok(vec![stats])
}

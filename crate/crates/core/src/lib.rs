//! Sparse linear-algebra building blocks.
//!
//! - [`sellcs`]: SELL-C-σ storage built from row callbacks or CRS arrays.
//! - [`densemat`]: block vectors in row- or column-major order, with views.
//! - [`spmv`]: fused `y = alpha (A - gamma I) x + beta y` with dots and a
//!   chained update.
//! - [`tsm`]: tall-skinny dense products.
//! - [`partition`]: row-wise distribution, halo exchange and distributed SpMV
//!   over simulated ranks.
//! - [`taskpool`]: PU-reserving task scheduler.
//! - [`io`]: Matrix Market and binary CRS files.
//! - [`perfmodel`]: code balance and roofline estimates.
//!
//! ```
//! use sellkit::{spmv, CrsData, DenseMat, SellMatrix, SellParams, SpmvOpts, StorageOrder};
//!
//! let crs = CrsData::from_triplets(2, 2, &[(0, 0, 2.0), (1, 0, 1.0), (1, 1, 3.0)]).unwrap();
//! let a = SellMatrix::from_crs(&crs, SellParams::new(2, 1).unwrap()).unwrap();
//! let x = DenseMat::from_col(&[1.0, 1.0]).unwrap();
//! let mut y = DenseMat::create(2, 1, StorageOrder::ColMajor).unwrap();
//! spmv(&mut y, &a, &x, &mut SpmvOpts::new()).unwrap();
//! assert_eq!(y.col_vec(0), vec![2.0, 4.0]);
//! ```

mod error;

pub mod densemat;
pub mod index;
pub mod io;
pub mod par;
pub mod partition;
pub mod perfmodel;
pub mod scalar;
pub mod sellcs;
pub mod spmv;
pub mod taskpool;
pub mod tsm;

pub use densemat::{axpby, dot, scal, vaxpby, vscal, AsMatMut, AsMatRef, DenseMat, MatMut, MatRef, StorageOrder, ViewKind};
pub use error::{Error, Result};
pub use index::{BuildConfig, Gidx, Lidx, Tolerance};
pub use partition::{
    compute_partition, dist_spmv, split_local_remote, InProcess, OverlapMode, PartitionPlan, RankWeights, Recording,
    SplitMatrix, Transport, WeightMode,
};
pub use scalar::{Complex32, Complex64, Real, Scalar, ValueType};
pub use sellcs::{CrsData, FnRowSource, RowSource, SellMatrix, SellParams};
pub use spmv::{spmv, KernelVariant, SpmvFlags, SpmvOpts};
pub use taskpool::{Pool, PoolConfig, PoolHandle, TaskFlags, TaskSpec};
pub use tsm::{gemm, tsmm, tsmm_inplace, tsmttsm, Trans};

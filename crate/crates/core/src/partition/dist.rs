//! Halo exchange and distributed SpMV.

use crate::densemat::{AsMatMut, AsMatRef, DenseMat, MatRef, StorageOrder};
use crate::error::{shape, Result};
use crate::scalar::Scalar;
use crate::spmv::{spmv_core, SpmvFlags, SpmvOpts, Stage};
use crate::taskpool::{PoolHandle, TaskSpec};

use super::transport::{RecvRequest, Transport, TransportError, TAG_HALO, TAG_REDUCE};
use super::SplitMatrix;

/// How communication and computation are arranged.
#[derive(Clone, Copy)]
pub enum OverlapMode<'p> {
    /// Exchange the halo, then one SpMV over all columns.
    NoOverlap,
    /// Post the exchange, compute the local part, complete the exchange,
    /// then add the remote part.
    NaiveOverlap,
    /// A one-PU task drives the exchange while a task on the remaining PUs
    /// computes the local part; the remote part follows on the calling task.
    TaskOverlap(&'p PoolHandle),
}

/// Receives posted by [`halo_start`].
pub struct HaloPending {
    width: usize,
    nhalo: usize,
    recvs: Vec<(usize, RecvRequest)>,
}

/// Sends this rank's halo contributions and posts its receives.
pub fn halo_start<S: Scalar>(
    sm: &SplitMatrix<S>,
    x_local: &impl AsMatRef<S>,
    transport: &dyn Transport,
) -> Result<HaloPending> {
    let x = x_local.mat_ref();
    if x.nrows() != sm.nlocal() {
        return Err(shape(format!("x has {} rows, rank owns {}", x.nrows(), sm.nlocal())));
    }
    let w = x.ncols();
    let me = sm.rank();
    for (dst, list) in sm.send_lists().iter().enumerate() {
        if list.is_empty() {
            continue;
        }
        let mut buf = Vec::with_capacity(list.len() * w * S::BYTES);
        for &i in list {
            for v in 0..w {
                x.get(i, v).write_le(&mut buf);
            }
        }
        transport.post_send(me, dst, TAG_HALO, buf)?;
    }
    let mut recvs = Vec::new();
    for (src, count) in sm.recv_counts().into_iter().enumerate() {
        if count > 0 {
            recvs.push((src, transport.post_recv(me, src, TAG_HALO)?));
        }
    }
    Ok(HaloPending { width: w, nhalo: sm.nhalo(), recvs })
}

/// Completes the receives and returns the `nhalo x width` halo block.
pub fn halo_finish<S: Scalar>(
    sm: &SplitMatrix<S>,
    pending: HaloPending,
    transport: &dyn Transport,
) -> Result<DenseMat<S>> {
    let w = pending.width;
    let mut halo = DenseMat::alloc(pending.nhalo, w, StorageOrder::RowMajor, 1)?;
    for (src, req) in pending.recvs {
        let data = transport.complete(req)?;
        let range = sm.recv_range(src);
        if data.len() != range.len() * w * S::BYTES {
            return Err(TransportError::Malformed(format!(
                "rank {src} sent {} bytes, expected {}",
                data.len(),
                range.len() * w * S::BYTES
            ))
            .into());
        }
        for (k, h) in range.enumerate() {
            for v in 0..w {
                let at = (k * w + v) * S::BYTES;
                halo.set(h, v, S::read_le(&data[at..at + S::BYTES]));
            }
        }
    }
    Ok(halo)
}

/// Fetches the halo values of `x` in compressed order.
pub fn halo_exchange<S: Scalar>(
    sm: &SplitMatrix<S>,
    x_local: &impl AsMatRef<S>,
    transport: &dyn Transport,
) -> Result<DenseMat<S>> {
    let p = halo_start(sm, x_local, transport)?;
    halo_finish(sm, p, transport)
}

/// Sums `values` over all ranks; every rank gets the same result, summed in
/// rank order.
pub fn allreduce_sum<S: Scalar>(transport: &dyn Transport, rank: usize, values: &mut [S]) -> Result<()> {
    let k = transport.nranks();
    if k <= 1 {
        return Ok(());
    }
    let mut buf = Vec::with_capacity(values.len() * S::BYTES);
    for v in values.iter() {
        v.write_le(&mut buf);
    }
    for dst in (0..k).filter(|&d| d != rank) {
        transport.post_send(rank, dst, TAG_REDUCE, buf.clone())?;
    }
    let mut sum = vec![S::zero(); values.len()];
    for src in 0..k {
        if src == rank {
            for (s, v) in sum.iter_mut().zip(values.iter()) {
                *s += *v;
            }
            continue;
        }
        let data = transport.complete(transport.post_recv(rank, src, TAG_REDUCE)?)?;
        if data.len() != buf.len() {
            return Err(TransportError::Malformed(format!("reduce message of {} bytes", data.len())).into());
        }
        for (j, s) in sum.iter_mut().enumerate() {
            *s += S::read_le(&data[j * S::BYTES..(j + 1) * S::BYTES]);
        }
    }
    values.copy_from_slice(&sum);
    Ok(())
}

fn local_opts<'b, S: Scalar>(opts: &SpmvOpts<'_, S>) -> SpmvOpts<'b, S> {
    SpmvOpts {
        flags: opts.flags - SpmvFlags::DOTS - SpmvFlags::CHAIN_AXPBY,
        alpha: opts.alpha,
        beta: opts.beta,
        gamma: opts.gamma.clone(),
        delta: opts.delta,
        eta: opts.eta,
        z: None,
        dot: None,
    }
}

fn reduce_dots<S: Scalar>(opts: &mut SpmvOpts<'_, S>, w: usize, transport: &dyn Transport, rank: usize) -> Result<()> {
    let flags = opts.flags;
    let Some(dot) = opts.dot.as_deref_mut() else { return Ok(()) };
    for (seg, f) in [SpmvFlags::DOT_YY, SpmvFlags::DOT_XY, SpmvFlags::DOT_XX].into_iter().enumerate() {
        if flags.contains(f) {
            allreduce_sum(transport, rank, &mut dot[seg * w..(seg + 1) * w])?;
        }
    }
    Ok(())
}

/// Distributed `y = alpha (A - gamma I) x + beta y` for the rows of one rank,
/// with the options of [`crate::spmv::spmv`]. Dots are global. All ranks must
/// call this collectively with the same options.
pub fn dist_spmv<S: Scalar>(
    y: &mut impl AsMatMut<S>,
    sm: &SplitMatrix<S>,
    x_local: &impl AsMatRef<S>,
    opts: &mut SpmvOpts<'_, S>,
    mode: OverlapMode<'_>,
    transport: &dyn Transport,
) -> Result<()> {
    let x = x_local.mat_ref();
    let mut y = y.mat_mut();
    let n = sm.nlocal();
    if x.nrows() != n {
        return Err(shape(format!("x has {} rows, rank owns {n}", x.nrows())));
    }
    let w = x.ncols();
    match mode {
        OverlapMode::NoOverlap => {
            let halo = halo_exchange(sm, &x, transport)?;
            let mut ext = DenseMat::alloc(n + sm.nhalo(), w, StorageOrder::RowMajor, 1)?;
            for i in 0..n {
                for v in 0..w {
                    ext.set(i, v, x.get(i, v));
                }
            }
            for h in 0..sm.nhalo() {
                for v in 0..w {
                    ext.set(n + h, v, halo.get(h, v));
                }
            }
            spmv_core(&mut y, sm.full(), &ext.mat_ref(), None, opts, Stage::Full, None)?;
        }
        OverlapMode::NaiveOverlap => {
            let pending = halo_start(sm, &x, transport)?;
            spmv_core(&mut y, sm.local(), &x, None, opts, Stage::Local, None)?;
            let halo = halo_finish(sm, pending, transport)?;
            spmv_core(&mut y, sm.remote(), &halo.mat_ref(), Some(&x), opts, Stage::Remote, None)?;
        }
        OverlapMode::TaskOverlap(pool) => {
            let run = |y: &mut crate::densemat::MatMut<'_, S>, opts: &mut SpmvOpts<'_, S>| -> Result<()> {
                let halo = task_overlap_local(pool, y, sm, &x, opts, transport)?;
                spmv_core(y, sm.remote(), &halo.mat_ref(), Some(&x), opts, Stage::Remote, None)?;
                Ok(())
            };
            if pool.current_task().is_some() {
                run(&mut y, opts)?;
            } else {
                // the overlap tasks are children of a task holding the whole pool
                let npus = pool.npus();
                pool.scope(|s| -> Result<()> {
                    let yr = &mut y;
                    let or = &mut *opts;
                    let parent = s.create(TaskSpec::new(npus), move || run(yr, or));
                    pool.enqueue(&parent)?;
                    parent.join()?
                })?;
            }
        }
    }
    reduce_dots(opts, w, transport, sm.rank())
}

/// Runs the halo exchange and the local part as two concurrent child tasks.
fn task_overlap_local<S: Scalar>(
    pool: &PoolHandle,
    y: &mut crate::densemat::MatMut<'_, S>,
    sm: &SplitMatrix<S>,
    x: &MatRef<'_, S>,
    opts: &SpmvOpts<'_, S>,
    transport: &dyn Transport,
) -> Result<DenseMat<S>> {
    let compute_pus = pool.npus().saturating_sub(1).max(1);
    let mut lopts = local_opts(opts);
    pool.scope(|s| -> Result<DenseMat<S>> {
        let comm = s.create(TaskSpec::new(1), || halo_exchange(sm, x, transport));
        let yr = &mut *y;
        let lo = &mut lopts;
        let local = s.create(TaskSpec::new(compute_pus), move || {
            pool.install(|| spmv_core(yr, sm.local(), x, None, lo, Stage::Local, None))
        });
        pool.enqueue_ids(&[comm.id(), local.id()])?;
        let halo = comm.join()??;
        local.join()??;
        Ok(halo)
    })
}

//! Randomized task sets for the pool and a replay checker for their traces.
//! Shared by the core tests and the acceptance target.
#![allow(dead_code)]

use std::collections::{HashMap, HashSet};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sellkit::taskpool::{EventKind, TaskHandle, TaskId, TraceEvent};
use sellkit::{Pool, PoolConfig, PoolHandle, TaskFlags, TaskSpec};

#[derive(Clone, Debug)]
pub struct Meta {
    pub spec: TaskSpec,
    pub parent: Option<TaskId>,
}

fn reserves(spec: &TaskSpec) -> usize {
    if spec.flags.contains(TaskFlags::NOT_PIN) {
        0
    } else {
        spec.nthreads
    }
}

/// Replays `trace` and reports the first violated invariant.
///
/// PUs are held by at most one task; a child may only take PUs its running
/// parent lends it, and gets them back on finish. A task starts only after all
/// its dependencies finished. A task may not start while an earlier-queued
/// task of the same or higher priority was ready and would have fit.
pub fn check_trace(trace: &[TraceEvent], meta: &HashMap<TaskId, Meta>, layout: &[usize]) -> Result<(), String> {
    let npus = layout.len();
    let mut owner: Vec<Option<TaskId>> = vec![None; npus];
    let mut held: HashMap<TaskId, Vec<usize>> = HashMap::new();
    let mut lent: HashMap<TaskId, Vec<usize>> = HashMap::new();
    let mut queued: Vec<TaskId> = Vec::new();
    let mut running: HashSet<TaskId> = HashSet::new();
    let mut finished: HashSet<TaskId> = HashSet::new();
    let mut checked: HashSet<TaskId> = HashSet::new();
    let mut last_ts = 0;

    let lender = |t: TaskId, running: &HashSet<TaskId>| -> Option<TaskId> {
        let p = meta[&t].parent?;
        (running.contains(&p) && !meta[&p].spec.flags.contains(TaskFlags::NOT_ALLOW_CHILD)).then_some(p)
    };
    let fits = |t: TaskId, owner: &[Option<TaskId>], running: &HashSet<TaskId>| -> bool {
        let spec = &meta[&t].spec;
        let l = lender(t, running);
        let strict = spec.flags.contains(TaskFlags::NUMA_NODE_STRICT);
        let avail = (0..npus)
            .filter(|&p| owner[p].is_none() || owner[p] == l)
            .filter(|&p| !strict || spec.numanode.is_none_or(|n| layout[p] == n))
            .count();
        avail >= reserves(spec)
    };

    for ev in trace {
        if ev.ts <= last_ts {
            return Err(format!("timestamp {} not increasing", ev.ts));
        }
        last_ts = ev.ts;
        let t = ev.task;
        let m = meta.get(&t).ok_or_else(|| format!("unknown task {t}"))?;
        // scheduling-order check, before the task takes anything
        if matches!(ev.kind, EventKind::Lend | EventKind::Start) && checked.insert(t) {
            let pos = queued.iter().position(|&q| q == t).ok_or_else(|| format!("task {t} started unqueued"))?;
            for d in &m.spec.depends {
                if !finished.contains(d) {
                    return Err(format!("task {t} started before dependency {d} finished"));
                }
            }
            let high = m.spec.flags.contains(TaskFlags::PRIO_HIGH);
            for (i, &u) in queued.iter().enumerate() {
                if u == t {
                    continue;
                }
                let uh = meta[&u].spec.flags.contains(TaskFlags::PRIO_HIGH);
                let ahead = (uh && !high) || (uh == high && i < pos);
                let ready = meta[&u].spec.depends.iter().all(|d| finished.contains(d));
                if ahead && ready && fits(u, &owner, &running) {
                    return Err(format!("task {t} started while {u} was ahead of it and fit"));
                }
            }
            queued.remove(pos);
        }
        match ev.kind {
            EventKind::Enqueue => queued.push(t),
            EventKind::Lend => {
                let p = ev.peer.ok_or("lend without parent")?;
                if Some(p) != lender(t, &running) {
                    return Err(format!("task {t} borrowed from {p}, which may not lend"));
                }
                for &pu in &ev.pus {
                    if owner[pu] != Some(p) {
                        return Err(format!("task {t} borrowed PU {pu} not held by {p}"));
                    }
                    owner[pu] = Some(t);
                }
                lent.insert(t, ev.pus.clone());
            }
            EventKind::Start => {
                if ev.pus.len() != reserves(&m.spec) {
                    return Err(format!("task {t} got {} PUs, asked for {}", ev.pus.len(), reserves(&m.spec)));
                }
                for &pu in &ev.pus {
                    if pu >= npus {
                        return Err(format!("PU {pu} out of range"));
                    }
                    if owner[pu].is_some_and(|o| o != t) {
                        return Err(format!("PU {pu} given to {t} while held by {:?}", owner[pu]));
                    }
                    if owner[pu] == Some(t) && !lent.get(&t).is_some_and(|l| l.contains(&pu)) {
                        return Err(format!("PU {pu} held twice by {t}"));
                    }
                    if m.spec.flags.contains(TaskFlags::NUMA_NODE_STRICT) && m.spec.numanode.is_some_and(|n| layout[pu] != n) {
                        return Err(format!("task {t} got PU {pu} off its strict node"));
                    }
                    owner[pu] = Some(t);
                }
                held.insert(t, ev.pus.clone());
                running.insert(t);
            }
            EventKind::Finish => {
                if !running.remove(&t) {
                    return Err(format!("task {t} finished without running"));
                }
                let h = held.remove(&t).unwrap_or_default();
                if h != ev.pus {
                    return Err(format!("task {t} released {:?}, held {h:?}", ev.pus));
                }
                let l = lent.remove(&t).unwrap_or_default();
                for &pu in &h {
                    owner[pu] = if l.contains(&pu) { m.parent } else { None };
                }
                finished.insert(t);
            }
        }
    }
    if !queued.is_empty() || !running.is_empty() {
        return Err(format!("tasks left over: queued {queued:?}, running {running:?}"));
    }
    Ok(())
}

/// Runs a random task set on a fresh pool and checks its trace.
/// Returns the number of tasks that ran.
pub fn run_random_taskset(seed: u64) -> Result<usize, String> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let npus = r.random_range(1..=8);
    let split = r.random_range(0..=npus);
    let layout: Vec<usize> = (0..npus).map(|p| usize::from(p >= split)).collect();
    let pool = Pool::new(PoolConfig::new(npus).with_numa_layout(layout.clone())).map_err(|e| e.to_string())?;
    let on_node = |n: usize| layout.iter().filter(|&&l| l == n).count();

    let meta: Arc<Mutex<HashMap<TaskId, Meta>>> = Arc::default();
    let children: Arc<Mutex<Vec<TaskHandle<()>>>> = Arc::default();
    let ntop = r.random_range(1..=40);
    let mut handles: Vec<TaskHandle<()>> = Vec::new();
    for i in 0..ntop {
        let mut flags = TaskFlags::empty();
        for f in [TaskFlags::PRIO_HIGH, TaskFlags::NOT_ALLOW_CHILD, TaskFlags::NOT_PIN] {
            if r.random_bool(0.25) {
                flags |= f;
            }
        }
        let mut spec = TaskSpec::new(r.random_range(1..=npus));
        if r.random_bool(0.3) {
            let node = r.random_range(0..2);
            spec = spec.numanode(node);
            if r.random_bool(0.5) && on_node(node) >= spec.nthreads {
                flags |= TaskFlags::NUMA_NODE_STRICT;
            }
        }
        spec = spec.flags(flags);
        if i > 0 {
            let nd = r.random_range(0..=3.min(i));
            let deps: HashSet<TaskId> = (0..nd).map(|_| handles[r.random_range(0..i)].id()).collect();
            spec = spec.depends_on(deps);
        }
        let sleep = Duration::from_micros(r.random_range(0..1500));
        let nchild = if r.random_bool(0.3) { r.random_range(1..=2) } else { 0 };
        let child_specs: Vec<(TaskSpec, Duration)> = (0..nchild)
            .map(|_| {
                let f = if r.random_bool(0.3) { TaskFlags::PRIO_HIGH } else { TaskFlags::empty() };
                (TaskSpec::new(r.random_range(1..=spec.nthreads)).flags(f), Duration::from_micros(r.random_range(0..800)))
            })
            .collect();
        let ph: PoolHandle = pool.handle();
        let (meta2, children2) = (Arc::clone(&meta), Arc::clone(&children));
        let allow = !flags.contains(TaskFlags::NOT_ALLOW_CHILD);
        let h = pool.create(spec.clone(), move || {
            std::thread::sleep(sleep);
            let me = ph.current_task();
            for (cs, cd) in child_specs {
                // hold the lock across spawn so the checker sees the metadata
                // of every task that appears in the trace
                let mut mg = meta2.lock().unwrap();
                let c = ph.create(cs.clone(), move || std::thread::sleep(cd));
                mg.insert(c.id(), Meta { spec: cs, parent: me });
                drop(mg);
                if ph.enqueue(&c).is_err() {
                    let _ = ph.destroy(c.id());
                    continue;
                }
                if allow {
                    // a lending parent can always host its own child
                    c.join().unwrap();
                } else {
                    children2.lock().unwrap().push(c);
                }
            }
        });
        meta.lock().unwrap().insert(h.id(), Meta { spec, parent: None });
        pool.enqueue(&h).map_err(|e| format!("enqueue of top-level task failed: {e}"))?;
        handles.push(h);
    }
    for h in handles {
        h.join().map_err(|e| e.to_string())?;
    }
    let rest: Vec<TaskHandle<()>> = std::mem::take(&mut *children.lock().unwrap());
    for c in rest {
        c.join().map_err(|e| e.to_string())?;
    }
    let trace = pool.trace();
    let meta = meta.lock().unwrap();
    let ran: HashSet<TaskId> = trace.iter().filter(|e| e.kind == EventKind::Finish).map(|e| e.task).collect();
    check_trace(&trace, &meta, &layout)?;
    Ok(ran.len())
}

/// Start and finish timestamps of the overlap tasks of one task-mode SpMV on
/// a 4-PU pool, as `(pus, start, finish)` for the communication and the local
/// task.
pub fn task_overlap_lifetimes(trace: &[TraceEvent]) -> Result<[(usize, u64, u64); 2], String> {
    let children: Vec<TaskId> = trace.iter().filter(|e| e.kind == EventKind::Lend).map(|e| e.task).collect();
    let life = |t: TaskId| -> Option<(usize, u64, u64)> {
        let s = trace.iter().find(|e| e.task == t && e.kind == EventKind::Start)?;
        let f = trace.iter().find(|e| e.task == t && e.kind == EventKind::Finish)?;
        Some((s.pus.len(), s.ts, f.ts))
    };
    let mut lives: Vec<(usize, u64, u64)> = children.iter().filter_map(|&t| life(t)).collect();
    lives.sort();
    match lives.as_slice() {
        [a, b] => Ok([*a, *b]),
        other => Err(format!("expected two lent children, found {other:?}")),
    }
}

//! Affinity-aware task pool.
//!
//! A pool manages a set of processing units (PUs) in a bitmap. A task asks for
//! a number of PUs and runs only once it has reserved them exclusively, its
//! dependencies have finished and (for strict NUMA placement) the PUs sit on
//! the requested node. Shepherd threads owned by the pool pick up scheduled
//! tasks and run their callbacks.
//!
//! A task created from inside another task becomes its child. Unless the
//! parent was created with [`TaskFlags::NOT_ALLOW_CHILD`], children may occupy
//! PUs of their parent, which is presumed to be waiting for them.
//!
//! Scheduling decisions are appended to a trace with logical timestamps that
//! tests replay to check exclusivity, dependency order and priorities.

use std::any::Any;
use std::cell::RefCell;
use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;
use std::marker::PhantomData;
use std::ops::Deref;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};

use bitflags::bitflags;
use thiserror::Error;

pub type TaskId = u64;

/// Environment variable capping the number of PUs of [`PoolConfig::from_env`].
pub const NPUS_ENV: &str = "SELLKIT_NPUS";

bitflags! {
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
    pub struct TaskFlags: u32 {
        /// Considered before all normal-priority waiting tasks.
        const PRIO_HIGH = 1 << 0;
        /// Only PUs of the requested NUMA node qualify.
        const NUMA_NODE_STRICT = 1 << 1;
        /// Children may not use this task's PUs.
        const NOT_ALLOW_CHILD = 1 << 2;
        /// Runs without reserving PUs.
        const NOT_PIN = 1 << 3;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskState {
    Created,
    Enqueued,
    Running,
    Finished,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TaskError {
    #[error("invalid pool configuration: {0}")]
    InvalidConfig(String),
    #[error("task needs {requested} PUs but at most {available} can ever be reserved")]
    Capacity { requested: usize, available: usize },
    #[error("task {0} is unknown")]
    UnknownTask(TaskId),
    #[error("task {task} is {state:?}, operation needs {expected}")]
    BadState { task: TaskId, state: TaskState, expected: &'static str },
    #[error("dependency {0} has not been enqueued")]
    DependencyNotEnqueued(TaskId),
    #[error("task {0} panicked")]
    Panicked(TaskId),
    #[error("the pool was shut down before the task ran")]
    Shutdown,
    #[error("not called from inside a task")]
    NotInTask,
}

/// Sets the OS affinity of the calling thread to a PU set.
pub type PinHook = Arc<dyn Fn(&[usize]) + Send + Sync>;

#[derive(Clone)]
pub struct PoolConfig {
    pub npus: usize,
    /// NUMA node of each PU.
    pub numa_layout: Vec<usize>,
    /// Initial number of shepherd threads; more are started on demand.
    pub nshepherds: usize,
    pub pin_hook: Option<PinHook>,
}

impl std::fmt::Debug for PoolConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PoolConfig")
            .field("npus", &self.npus)
            .field("numa_layout", &self.numa_layout)
            .field("nshepherds", &self.nshepherds)
            .field("pin_hook", &self.pin_hook.is_some())
            .finish()
    }
}

impl PoolConfig {
    /// `npus` PUs on a single NUMA node.
    pub fn new(npus: usize) -> Self {
        Self { npus, numa_layout: vec![0; npus], nshepherds: npus.max(1), pin_hook: None }
    }

    pub fn with_numa_layout(mut self, layout: Vec<usize>) -> Self {
        self.numa_layout = layout;
        self
    }

    pub fn with_shepherds(mut self, n: usize) -> Self {
        self.nshepherds = n;
        self
    }

    pub fn with_pin_hook(mut self, hook: PinHook) -> Self {
        self.pin_hook = Some(hook);
        self
    }

    /// All logical CPUs of the process, capped by `SELLKIT_NPUS`, with NUMA
    /// labels from sysfs where available.
    pub fn from_env() -> Self {
        let mut npus = thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
        if let Some(cap) = std::env::var(NPUS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
            npus = npus.min(cap.max(1));
        }
        let layout = sysfs_numa_layout(npus).unwrap_or_else(|| vec![0; npus]);
        Self::new(npus).with_numa_layout(layout)
    }

    pub fn numa_nodes(&self) -> usize {
        let mut nodes = self.numa_layout.clone();
        nodes.sort_unstable();
        nodes.dedup();
        nodes.len().max(1)
    }

    fn validate(&self) -> Result<(), TaskError> {
        if self.npus == 0 {
            return Err(TaskError::InvalidConfig("npus must be at least 1".into()));
        }
        if self.numa_layout.len() != self.npus {
            return Err(TaskError::InvalidConfig(format!(
                "numa layout has {} entries for {} PUs",
                self.numa_layout.len(),
                self.npus
            )));
        }
        Ok(())
    }
}

fn parse_cpulist(s: &str) -> Vec<usize> {
    let mut out = Vec::new();
    for part in s.trim().split(',').filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                if let (Ok(a), Ok(b)) = (a.parse::<usize>(), b.parse::<usize>()) {
                    out.extend(a..=b);
                }
            }
            None => out.extend(part.parse::<usize>()),
        }
    }
    out
}

fn sysfs_numa_layout(npus: usize) -> Option<Vec<usize>> {
    let dir = std::fs::read_dir("/sys/devices/system/node").ok()?;
    let mut layout = vec![0; npus];
    let mut found = false;
    for entry in dir.flatten() {
        let name = entry.file_name().to_string_lossy().to_string();
        let Some(node) = name.strip_prefix("node").and_then(|n| n.parse::<usize>().ok()) else { continue };
        let Ok(list) = std::fs::read_to_string(entry.path().join("cpulist")) else { continue };
        for cpu in parse_cpulist(&list) {
            if cpu < npus {
                layout[cpu] = node;
                found = true;
            }
        }
    }
    found.then_some(layout)
}

/// A [`PinHook`] that binds the calling thread to the CPUs with the PU numbers.
pub fn affinity_pin_hook() -> PinHook {
    Arc::new(|pus: &[usize]| {
        #[cfg(target_os = "linux")]
        // SAFETY: cpu_set_t is plain data, initialized by CPU_ZERO before use.
        unsafe {
            let mut set: libc::cpu_set_t = std::mem::zeroed();
            libc::CPU_ZERO(&mut set);
            for &p in pus {
                libc::CPU_SET(p, &mut set);
            }
            libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &set);
        }
        #[cfg(not(target_os = "linux"))]
        let _ = pus;
    })
}

/// Resource request of a task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSpec {
    pub nthreads: usize,
    pub numanode: Option<usize>,
    pub flags: TaskFlags,
    pub depends: Vec<TaskId>,
}

impl TaskSpec {
    pub fn new(nthreads: usize) -> Self {
        Self { nthreads, numanode: None, flags: TaskFlags::empty(), depends: Vec::new() }
    }

    pub fn numanode(mut self, node: usize) -> Self {
        self.numanode = Some(node);
        self
    }

    pub fn flags(mut self, flags: TaskFlags) -> Self {
        self.flags = flags;
        self
    }

    pub fn depends_on(mut self, deps: impl IntoIterator<Item = TaskId>) -> Self {
        self.depends.extend(deps);
        self
    }

    fn reserves(&self) -> usize {
        if self.flags.contains(TaskFlags::NOT_PIN) {
            0
        } else {
            self.nthreads
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    Enqueue,
    /// PUs moved from a running parent to a child that is about to start.
    Lend,
    Start,
    /// PUs released; lent PUs go back to the parent.
    Finish,
}

impl EventKind {
    fn name(self) -> &'static str {
        match self {
            EventKind::Enqueue => "enqueue",
            EventKind::Lend => "lend",
            EventKind::Start => "start",
            EventKind::Finish => "finish",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub kind: EventKind,
    pub task: TaskId,
    pub pus: Vec<usize>,
    /// Logical timestamp, strictly increasing over the trace.
    pub ts: u64,
    /// Parent for `Lend` events.
    pub peer: Option<TaskId>,
}

type Job = Box<dyn FnOnce() + Send + 'static>;

struct TaskRec {
    state: TaskState,
    spec: TaskSpec,
    parent: Option<TaskId>,
    pus: Vec<usize>,
    borrowed: Vec<usize>,
    job: Option<Job>,
}

struct State {
    owner: Vec<Option<TaskId>>,
    tasks: HashMap<TaskId, TaskRec>,
    high: VecDeque<TaskId>,
    normal: VecDeque<TaskId>,
    runnable: VecDeque<TaskId>,
    next_id: TaskId,
    clock: u64,
    trace: Vec<TraceEvent>,
    idle: usize,
    shutdown: bool,
}

impl State {
    fn event(&mut self, kind: EventKind, task: TaskId, pus: Vec<usize>, peer: Option<TaskId>) {
        self.clock += 1;
        self.trace.push(TraceEvent { kind, task, pus, ts: self.clock, peer });
    }

    fn rec(&self, id: TaskId) -> Result<&TaskRec, TaskError> {
        self.tasks.get(&id).ok_or(TaskError::UnknownTask(id))
    }

    /// Parent whose PUs a child may take.
    fn lender(&self, t: &TaskRec) -> Option<TaskId> {
        let p = t.parent?;
        let pr = self.tasks.get(&p)?;
        (pr.state == TaskState::Running && !pr.spec.flags.contains(TaskFlags::NOT_ALLOW_CHILD)).then_some(p)
    }

    fn try_reserve(&self, id: TaskId, layout: &[usize]) -> Option<(Vec<usize>, Vec<usize>)> {
        let t = &self.tasks[&id];
        let n = t.spec.reserves();
        if n == 0 {
            return Some((Vec::new(), Vec::new()));
        }
        let lender = self.lender(t);
        let strict = t.spec.flags.contains(TaskFlags::NUMA_NODE_STRICT);
        let mut cands: Vec<(usize, usize, usize)> = Vec::new(); // (group, node rank, pu)
        for (pu, owner) in self.owner.iter().enumerate() {
            let group = match owner {
                Some(o) if Some(*o) == lender => 0,
                None => 1,
                _ => continue,
            };
            let on_node = t.spec.numanode.is_none_or(|node| layout[pu] == node);
            if strict && !on_node {
                continue;
            }
            cands.push((group, usize::from(!on_node), pu));
        }
        if cands.len() < n {
            return None;
        }
        cands.sort_unstable();
        let taken: Vec<(usize, usize, usize)> = cands.into_iter().take(n).collect();
        let pus: Vec<usize> = {
            let mut p: Vec<usize> = taken.iter().map(|c| c.2).collect();
            p.sort_unstable();
            p
        };
        let mut borrowed: Vec<usize> = taken.iter().filter(|c| c.0 == 0).map(|c| c.2).collect();
        borrowed.sort_unstable();
        Some((pus, borrowed))
    }

    /// PUs a task could ever obtain, given the ancestors that hold PUs while
    /// waiting for it.
    fn capacity(&self, t: &TaskRec, layout: &[usize]) -> usize {
        let strict_node = t.spec.numanode.filter(|_| t.spec.flags.contains(TaskFlags::NUMA_NODE_STRICT));
        let lender = self.lender(t);
        let mut blocked = vec![false; self.owner.len()];
        let mut anc = t.parent;
        while let Some(a) = anc {
            let Some(rec) = self.tasks.get(&a) else { break };
            if rec.state == TaskState::Running && Some(a) != lender {
                for &p in &rec.pus {
                    blocked[p] = true;
                }
            }
            anc = rec.parent;
        }
        (0..self.owner.len())
            .filter(|&p| !blocked[p] && strict_node.is_none_or(|n| layout[p] == n))
            .count()
    }
}

struct Inner {
    id: usize,
    cfg: PoolConfig,
    state: Mutex<State>,
    work_cv: Condvar,
    done_cv: Condvar,
    threads: Mutex<Vec<JoinHandle<()>>>,
    rayon_pools: Mutex<HashMap<usize, Arc<rayon::ThreadPool>>>,
}

static NEXT_POOL: AtomicUsize = AtomicUsize::new(1);

thread_local! {
    /// (pool id, task id, reserved PU count) of the callbacks running on this thread.
    static CURRENT: RefCell<Vec<(usize, TaskId, usize)>> = const { RefCell::new(Vec::new()) };
}

/// Cloneable access to a pool.
#[derive(Clone)]
pub struct PoolHandle {
    inner: Arc<Inner>,
}

/// Owning pool; shuts down when dropped.
pub struct Pool {
    handle: PoolHandle,
}

impl Deref for Pool {
    type Target = PoolHandle;
    fn deref(&self) -> &PoolHandle {
        &self.handle
    }
}

impl Drop for Pool {
    fn drop(&mut self) {
        self.handle.shutdown();
    }
}

impl Pool {
    pub fn new(cfg: PoolConfig) -> Result<Self, TaskError> {
        cfg.validate()?;
        let inner = Arc::new(Inner {
            id: NEXT_POOL.fetch_add(1, Ordering::Relaxed),
            state: Mutex::new(State {
                owner: vec![None; cfg.npus],
                tasks: HashMap::new(),
                high: VecDeque::new(),
                normal: VecDeque::new(),
                runnable: VecDeque::new(),
                next_id: 1,
                clock: 0,
                trace: Vec::new(),
                idle: 0,
                shutdown: false,
            }),
            work_cv: Condvar::new(),
            done_cv: Condvar::new(),
            threads: Mutex::new(Vec::new()),
            rayon_pools: Mutex::new(HashMap::new()),
            cfg,
        });
        for _ in 0..inner.cfg.nshepherds.max(1) {
            spawn_shepherd(&inner);
        }
        Ok(Pool { handle: PoolHandle { inner } })
    }

    pub fn handle(&self) -> PoolHandle {
        self.handle.clone()
    }
}

fn spawn_shepherd(inner: &Arc<Inner>) {
    let i2 = Arc::clone(inner);
    let h = thread::Builder::new()
        .name(format!("shepherd-{}", inner.id))
        .spawn(move || shepherd(i2))
        .expect("spawning shepherd thread");
    inner.threads.lock().unwrap().push(h);
}

fn shepherd(inner: Arc<Inner>) {
    loop {
        let (id, job, pus, pin) = {
            let mut st = inner.state.lock().unwrap();
            loop {
                if let Some(id) = st.runnable.pop_front() {
                    let rec = st.tasks.get_mut(&id).unwrap();
                    let pin = !rec.spec.flags.contains(TaskFlags::NOT_PIN);
                    break (id, rec.job.take(), rec.pus.clone(), pin);
                }
                if st.shutdown {
                    return;
                }
                st.idle += 1;
                st = inner.work_cv.wait(st).unwrap();
                st.idle -= 1;
            }
        };
        if pin && !pus.is_empty() {
            if let Some(hook) = &inner.cfg.pin_hook {
                hook(&pus);
            }
        }
        CURRENT.with(|c| c.borrow_mut().push((inner.id, id, pus.len())));
        if let Some(job) = job {
            job();
        }
        CURRENT.with(|c| c.borrow_mut().pop());
        finish(&inner, id);
    }
}

fn finish(inner: &Arc<Inner>, id: TaskId) {
    let mut st = inner.state.lock().unwrap();
    let (pus, borrowed, parent) = {
        let rec = st.tasks.get_mut(&id).unwrap();
        rec.state = TaskState::Finished;
        (std::mem::take(&mut rec.pus), std::mem::take(&mut rec.borrowed), rec.parent)
    };
    for &p in &pus {
        st.owner[p] = if borrowed.contains(&p) { parent } else { None };
    }
    st.event(EventKind::Finish, id, pus, None);
    kick(inner, &mut st);
    inner.done_cv.notify_all();
}

/// Schedules every waiting task that can run now, in priority order, and makes
/// sure enough shepherds are around to pick them up.
fn kick(inner: &Arc<Inner>, st: &mut MutexGuard<'_, State>) {
    let order: Vec<TaskId> = st.high.iter().chain(st.normal.iter()).copied().collect();
    let mut started = Vec::new();
    for id in order {
        let deps_done = st.tasks[&id]
            .spec
            .depends
            .iter()
            .all(|d| st.tasks.get(d).is_none_or(|r| r.state == TaskState::Finished));
        if !deps_done {
            continue;
        }
        let Some((pus, borrowed)) = st.try_reserve(id, &inner.cfg.numa_layout) else { continue };
        for &p in &pus {
            st.owner[p] = Some(id);
        }
        let parent = st.tasks[&id].parent;
        if !borrowed.is_empty() {
            st.event(EventKind::Lend, id, borrowed.clone(), parent);
        }
        st.event(EventKind::Start, id, pus.clone(), None);
        let rec = st.tasks.get_mut(&id).unwrap();
        rec.state = TaskState::Running;
        rec.pus = pus;
        rec.borrowed = borrowed;
        st.runnable.push_back(id);
        started.push(id);
    }
    if started.is_empty() {
        return;
    }
    st.high.retain(|t| !started.contains(t));
    st.normal.retain(|t| !started.contains(t));
    let missing = st.runnable.len().saturating_sub(st.idle);
    for _ in 0..missing {
        spawn_shepherd(inner);
    }
    inner.work_cv.notify_all();
}

/// Handle to a task and its result slot.
pub struct TaskHandle<R> {
    id: TaskId,
    pool: PoolHandle,
    slot: Arc<Mutex<Option<std::thread::Result<R>>>>,
}

impl<R> TaskHandle<R> {
    pub fn id(&self) -> TaskId {
        self.id
    }

    pub fn state(&self) -> TaskState {
        self.pool.state(self.id).expect("handle refers to a live task")
    }

    fn take(&self) -> Result<R, TaskError> {
        self.pool.wait_id(self.id)?;
        match self.slot.lock().unwrap().take() {
            Some(Ok(r)) => Ok(r),
            Some(Err(_)) => Err(TaskError::Panicked(self.id)),
            None => Err(TaskError::Shutdown),
        }
    }

    /// Blocks until the task finished and returns its result.
    pub fn join(self) -> Result<R, TaskError> {
        self.take()
    }
}

impl<R: Clone> TaskHandle<R> {
    /// Blocks until the task finished and returns a copy of its result; any
    /// number of threads may wait on the same task.
    pub fn wait(&self) -> Result<R, TaskError> {
        self.pool.wait_id(self.id)?;
        match &*self.slot.lock().unwrap() {
            Some(Ok(r)) => Ok(r.clone()),
            Some(Err(_)) => Err(TaskError::Panicked(self.id)),
            None => Err(TaskError::Shutdown),
        }
    }
}

impl<R> Clone for TaskHandle<R> {
    fn clone(&self) -> Self {
        Self { id: self.id, pool: self.pool.clone(), slot: Arc::clone(&self.slot) }
    }
}

fn wrap<'a, R: Send + 'a>(
    f: impl FnOnce() -> R + Send + 'a,
) -> (Box<dyn FnOnce() + Send + 'a>, Arc<Mutex<Option<std::thread::Result<R>>>>) {
    let slot: Arc<Mutex<Option<std::thread::Result<R>>>> = Arc::new(Mutex::new(None));
    let s2 = Arc::clone(&slot);
    let job = Box::new(move || {
        let r: Result<R, Box<dyn Any + Send>> = catch_unwind(AssertUnwindSafe(f));
        *s2.lock().unwrap() = Some(r);
    });
    (job, slot)
}

impl PoolHandle {
    pub fn config(&self) -> &PoolConfig {
        &self.inner.cfg
    }

    pub fn npus(&self) -> usize {
        self.inner.cfg.npus
    }

    pub fn numa_node_of(&self, pu: usize) -> Option<usize> {
        self.inner.cfg.numa_layout.get(pu).copied()
    }

    /// Current holder of each PU.
    pub fn pumap(&self) -> Vec<Option<TaskId>> {
        self.inner.state.lock().unwrap().owner.clone()
    }

    pub fn busy_pus(&self) -> usize {
        self.pumap().iter().filter(|o| o.is_some()).count()
    }

    pub fn state(&self, id: TaskId) -> Result<TaskState, TaskError> {
        Ok(self.inner.state.lock().unwrap().rec(id)?.state)
    }

    /// PUs held by a task (empty unless running).
    pub fn task_pus(&self, id: TaskId) -> Result<Vec<usize>, TaskError> {
        Ok(self.inner.state.lock().unwrap().rec(id)?.pus.clone())
    }

    fn create_job(&self, spec: TaskSpec, job: Job) -> TaskId {
        let parent = self.current_task();
        let mut st = self.inner.state.lock().unwrap();
        let id = st.next_id;
        st.next_id += 1;
        st.tasks.insert(
            id,
            TaskRec { state: TaskState::Created, spec, parent, pus: Vec::new(), borrowed: Vec::new(), job: Some(job) },
        );
        id
    }

    /// Creates a task in state `Created`. Called from inside a task, the new
    /// task becomes its child.
    pub fn create<R, F>(&self, spec: TaskSpec, f: F) -> TaskHandle<R>
    where
        R: Send + 'static,
        F: FnOnce() -> R + Send + 'static,
    {
        let (job, slot) = wrap(f);
        let id = self.create_job(spec, job);
        TaskHandle { id, pool: self.clone(), slot }
    }

    pub fn enqueue<R>(&self, task: &TaskHandle<R>) -> Result<(), TaskError> {
        self.enqueue_ids(&[task.id])
    }

    /// Enqueues several tasks atomically: they are considered by the same
    /// scheduling pass.
    pub fn enqueue_ids(&self, ids: &[TaskId]) -> Result<(), TaskError> {
        let mut st = self.inner.state.lock().unwrap();
        if st.shutdown {
            return Err(TaskError::Shutdown);
        }
        for (k, &id) in ids.iter().enumerate() {
            let rec = st.rec(id)?;
            if rec.state != TaskState::Created || ids[..k].contains(&id) {
                return Err(TaskError::BadState { task: id, state: rec.state, expected: "Created" });
            }
            for &d in &rec.spec.depends {
                let ok = ids[..k].contains(&d) || st.rec(d).is_ok_and(|r| r.state != TaskState::Created);
                if !ok {
                    return Err(TaskError::DependencyNotEnqueued(d));
                }
            }
            let need = rec.spec.reserves();
            let cap = st.capacity(rec, &self.inner.cfg.numa_layout);
            if need > cap {
                return Err(TaskError::Capacity { requested: need, available: cap });
            }
        }
        for &id in ids {
            let rec = st.tasks.get_mut(&id).unwrap();
            rec.state = TaskState::Enqueued;
            if rec.spec.flags.contains(TaskFlags::PRIO_HIGH) {
                st.high.push_back(id);
            } else {
                st.normal.push_back(id);
            }
            st.event(EventKind::Enqueue, id, Vec::new(), None);
        }
        kick(&self.inner, &mut st);
        Ok(())
    }

    /// Creates a child of the calling task and enqueues it.
    pub fn spawn_child<R, F>(&self, spec: TaskSpec, f: F) -> Result<TaskHandle<R>, TaskError>
    where
        R: Send + 'static,
        F: FnOnce() -> R + Send + 'static,
    {
        if self.current_task().is_none() {
            return Err(TaskError::NotInTask);
        }
        let t = self.create(spec, f);
        if let Err(e) = self.enqueue(&t) {
            let _ = self.destroy(t.id);
            return Err(e);
        }
        Ok(t)
    }

    fn wait_id(&self, id: TaskId) -> Result<(), TaskError> {
        let mut st = self.inner.state.lock().unwrap();
        loop {
            match st.rec(id)?.state {
                TaskState::Finished => return Ok(()),
                TaskState::Created => {
                    return Err(TaskError::BadState { task: id, state: TaskState::Created, expected: "Enqueued" })
                }
                _ => st = self.inner.done_cv.wait(st).unwrap(),
            }
        }
    }

    /// Task whose callback runs on the calling thread, if it belongs to this pool.
    pub fn current_task(&self) -> Option<TaskId> {
        CURRENT.with(|c| c.borrow().iter().rev().find(|e| e.0 == self.inner.id).map(|e| e.1))
    }

    /// Releases a task that is not queued or running.
    pub fn destroy(&self, id: TaskId) -> Result<(), TaskError> {
        let job = {
            let mut st = self.inner.state.lock().unwrap();
            let rec = st.tasks.get_mut(&id).ok_or(TaskError::UnknownTask(id))?;
            match rec.state {
                TaskState::Enqueued | TaskState::Running => {
                    return Err(TaskError::BadState { task: id, state: rec.state, expected: "Created or Finished" })
                }
                TaskState::Created => {
                    // never ran: counts as finished for anything depending on it
                    rec.state = TaskState::Finished;
                    rec.job.take()
                }
                TaskState::Finished => rec.job.take(),
            }
        };
        drop(job);
        self.inner.done_cv.notify_all();
        Ok(())
    }

    /// Stops the shepherds after the scheduled tasks ran. Waiting tasks are
    /// dropped and their waiters get [`TaskError::Shutdown`]. Idempotent.
    pub fn shutdown(&self) {
        let dropped: Vec<Job> = {
            let mut guard = self.inner.state.lock().unwrap();
            let st = &mut *guard;
            st.shutdown = true;
            let waiting: Vec<TaskId> = st.high.drain(..).chain(st.normal.drain(..)).collect();
            waiting
                .into_iter()
                .filter_map(|id| {
                    let rec = st.tasks.get_mut(&id).unwrap();
                    rec.state = TaskState::Finished;
                    rec.job.take()
                })
                .collect()
        };
        drop(dropped);
        self.inner.work_cv.notify_all();
        self.inner.done_cv.notify_all();
        let me = thread::current().id();
        let handles: Vec<JoinHandle<()>> = std::mem::take(&mut *self.inner.threads.lock().unwrap());
        for h in handles {
            if h.thread().id() != me {
                let _ = h.join();
            }
        }
    }

    pub fn trace(&self) -> Vec<TraceEvent> {
        self.inner.state.lock().unwrap().trace.clone()
    }

    pub fn clear_trace(&self) {
        self.inner.state.lock().unwrap().trace.clear();
    }

    /// One line per event: `event task pus ts`, PU sets comma separated (`-`
    /// when empty), lend events followed by `from=<parent>`.
    pub fn trace_log(&self) -> String {
        let mut s = String::new();
        for e in self.trace() {
            let pus = if e.pus.is_empty() {
                "-".to_string()
            } else {
                e.pus.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(",")
            };
            write!(s, "{} {} {} {}", e.kind.name(), e.task, pus, e.ts).unwrap();
            if let Some(p) = e.peer {
                write!(s, " from={p}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    /// Runs `f` on a worker team as wide as the PU reservation of the calling
    /// task (all PUs outside of a task).
    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        let n = CURRENT
            .with(|c| c.borrow().iter().rev().find(|e| e.0 == self.inner.id).map(|e| e.2))
            .unwrap_or(self.inner.cfg.npus)
            .max(1);
        let pool = {
            let mut pools = self.inner.rayon_pools.lock().unwrap();
            Arc::clone(pools.entry(n).or_insert_with(|| {
                Arc::new(rayon::ThreadPoolBuilder::new().num_threads(n).build().expect("building worker team"))
            }))
        };
        pool.install(f)
    }

    /// Runs `f` with a [`Scope`] whose tasks may borrow from the caller. All
    /// enqueued tasks of the scope have finished when this returns.
    pub fn scope<'env, F, T>(&self, f: F) -> T
    where
        F: for<'scope> FnOnce(&'scope Scope<'scope, 'env>) -> T,
    {
        let scope = Scope { pool: self.clone(), ids: Mutex::new(Vec::new()), _scope: PhantomData, _env: PhantomData };
        struct Guard<'a, 's, 'e>(&'a Scope<'s, 'e>);
        impl Drop for Guard<'_, '_, '_> {
            fn drop(&mut self) {
                self.0.settle();
            }
        }
        let guard = Guard(&scope);
        let out = f(&scope);
        drop(guard);
        out
    }
}

/// Task creation for callbacks that borrow from the enclosing stack frame.
pub struct Scope<'scope, 'env: 'scope> {
    pool: PoolHandle,
    ids: Mutex<Vec<TaskId>>,
    _scope: PhantomData<&'scope mut &'scope ()>,
    _env: PhantomData<&'env mut &'env ()>,
}

impl<'scope, 'env> Scope<'scope, 'env> {
    pub fn pool(&self) -> &PoolHandle {
        &self.pool
    }

    pub fn create<R, F>(&'scope self, spec: TaskSpec, f: F) -> TaskHandle<R>
    where
        R: Send + 'scope,
        F: FnOnce() -> R + Send + 'scope,
    {
        let (job, slot) = wrap(f);
        // SAFETY: `settle` runs before the scope ends and either waits for the
        // task to finish or drops the job unrun, so nothing borrowed by the
        // job is used after 'scope.
        let job: Job = unsafe { std::mem::transmute::<Box<dyn FnOnce() + Send + 'scope>, Job>(job) };
        let id = self.pool.create_job(spec, job);
        self.ids.lock().unwrap().push(id);
        TaskHandle { id, pool: self.pool.clone(), slot }
    }

    fn settle(&self) {
        let ids = std::mem::take(&mut *self.ids.lock().unwrap());
        for id in ids {
            match self.pool.state(id) {
                Ok(TaskState::Created) => {
                    let _ = self.pool.destroy(id);
                }
                Ok(_) => {
                    let _ = self.pool.wait_id(id);
                }
                Err(_) => {}
            }
        }
    }
}

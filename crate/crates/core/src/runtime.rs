//! Execution runtimes for incident workflows.
//!
//! Workflows are written as straight-line code that calls [`Runtime::sleep`]
//! to wait and [`Runtime::spawn`] to start side tasks. Three runtimes back
//! that contract:
//!
//! * [`LiveRuntime`]: wall clock, OS threads. Used by `serve`.
//! * [`SimRuntime`]: discrete-event simulation. Every task runs on its own
//!   thread but only one thread holds the baton at a time; the next task to
//!   run is the one with the smallest `(wake time, sequence)` pair, so runs
//!   are reproducible bit for bit. Simulated time only advances once every
//!   task runnable at the current instant has yielded.
//! * [`ManualRuntime`]: single-threaded stepping. `sleep` advances the clock
//!   and `spawn` runs the job inline.
//!
//! Code running under [`SimRuntime`] must not block on anything other than
//! the runtime's own primitives (sleep, join, semaphores); holding a std
//! mutex across a yield point would stall the whole simulation.

use std::cell::Cell;
use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet, VecDeque};
use std::panic::{self, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use crate::time::Timestamp;

pub type Job = Box<dyn FnOnce() + Send + 'static>;

pub trait Runtime: Send + Sync {
    fn now(&self) -> Timestamp;
    fn sleep(&self, ms: i64);
    fn spawn(&self, name: &str, job: Job) -> Task;
    fn join(&self, task: &Task);
    fn semaphore(&self, permits: usize) -> Arc<dyn Semaphore>;
}

pub trait Semaphore: Send + Sync {
    fn acquire(&self);
    fn release(&self);
}

/// Handle to a spawned task.
#[derive(Clone)]
pub struct Task {
    inner: Arc<TaskInner>,
}

struct TaskInner {
    id: u64,
    done: AtomicBool,
    signal: Mutex<bool>,
    cv: Condvar,
}

impl Task {
    fn new(id: u64) -> Self {
        Task {
            inner: Arc::new(TaskInner {
                id,
                done: AtomicBool::new(false),
                signal: Mutex::new(false),
                cv: Condvar::new(),
            }),
        }
    }

    pub fn is_finished(&self) -> bool {
        self.inner.done.load(Ordering::SeqCst)
    }

    fn mark_done(&self) {
        self.inner.done.store(true, Ordering::SeqCst);
        let mut g = self.inner.signal.lock().unwrap();
        *g = true;
        self.inner.cv.notify_all();
    }

    fn wait_done(&self) {
        let mut g = self.inner.signal.lock().unwrap();
        while !*g {
            g = self.inner.cv.wait(g).unwrap();
        }
    }
}

// ---------------------------------------------------------------------------
// Manual

/// Inline runtime for deterministic single-stepping.
pub struct ManualRuntime {
    now: Mutex<Timestamp>,
}

impl ManualRuntime {
    pub fn new(start: Timestamp) -> Self {
        ManualRuntime { now: Mutex::new(start) }
    }

    pub fn set(&self, t: Timestamp) {
        *self.now.lock().unwrap() = t;
    }
}

impl Runtime for ManualRuntime {
    fn now(&self) -> Timestamp {
        *self.now.lock().unwrap()
    }

    fn sleep(&self, ms: i64) {
        let mut now = self.now.lock().unwrap();
        *now = now.plus_ms(ms.max(0));
    }

    fn spawn(&self, _name: &str, job: Job) -> Task {
        let task = Task::new(0);
        job();
        task.mark_done();
        task
    }

    fn join(&self, _task: &Task) {}

    fn semaphore(&self, _permits: usize) -> Arc<dyn Semaphore> {
        Arc::new(NoopSemaphore)
    }
}

struct NoopSemaphore;

impl Semaphore for NoopSemaphore {
    fn acquire(&self) {}
    fn release(&self) {}
}

// ---------------------------------------------------------------------------
// Live

/// Wall-clock runtime backed by OS threads.
#[derive(Default)]
pub struct LiveRuntime;

impl LiveRuntime {
    pub fn new() -> Self {
        LiveRuntime
    }
}

impl Runtime for LiveRuntime {
    fn now(&self) -> Timestamp {
        let ms = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as i64).unwrap_or(0);
        Timestamp(ms)
    }

    fn sleep(&self, ms: i64) {
        if ms > 0 {
            thread::sleep(Duration::from_millis(ms as u64));
        }
    }

    fn spawn(&self, name: &str, job: Job) -> Task {
        let task = Task::new(0);
        let handle = task.clone();
        let spawned = thread::Builder::new().name(name.to_string()).spawn(move || {
            let _ = panic::catch_unwind(AssertUnwindSafe(job));
            handle.mark_done();
        });
        if spawned.is_err() {
            task.mark_done();
        }
        task
    }

    fn join(&self, task: &Task) {
        task.wait_done();
    }

    fn semaphore(&self, permits: usize) -> Arc<dyn Semaphore> {
        Arc::new(LiveSemaphore { avail: Mutex::new(permits), cv: Condvar::new() })
    }
}

struct LiveSemaphore {
    avail: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore for LiveSemaphore {
    fn acquire(&self) {
        let mut g = self.avail.lock().unwrap();
        while *g == 0 {
            g = self.cv.wait(g).unwrap();
        }
        *g -= 1;
    }

    fn release(&self) {
        *self.avail.lock().unwrap() += 1;
        self.cv.notify_one();
    }
}

// ---------------------------------------------------------------------------
// Simulation

thread_local! {
    static CURRENT_TASK: Cell<Option<u64>> = const { Cell::new(None) };
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("simulation task panicked: {0}")]
    TaskPanicked(String),
    #[error("simulation deadlocked with {0} blocked task(s)")]
    Deadlock(usize),
}

struct Baton {
    go: Mutex<bool>,
    cv: Condvar,
}

impl Baton {
    fn new() -> Arc<Self> {
        Arc::new(Baton { go: Mutex::new(false), cv: Condvar::new() })
    }

    fn give(&self) {
        let mut g = self.go.lock().unwrap();
        *g = true;
        self.cv.notify_one();
    }

    fn take(&self) {
        let mut g = self.go.lock().unwrap();
        while !*g {
            g = self.cv.wait(g).unwrap();
        }
        *g = false;
    }
}

struct SemState {
    avail: usize,
    waiters: VecDeque<u64>,
}

struct SimState {
    now: i64,
    seq: u64,
    next_id: u64,
    ready: BinaryHeap<Reverse<(i64, u64, u64)>>,
    batons: HashMap<u64, Arc<Baton>>,
    handles: HashMap<u64, Task>,
    joiners: HashMap<u64, Vec<u64>>,
    finished: HashSet<u64>,
    live: usize,
    semaphores: Vec<SemState>,
    failure: Option<SimError>,
    halted: bool,
}

struct SimShared {
    state: Mutex<SimState>,
    idle: Condvar,
}

/// Deterministic discrete-event runtime.
#[derive(Clone)]
pub struct SimRuntime {
    shared: Arc<SimShared>,
}

impl SimRuntime {
    pub fn new(start: Timestamp) -> Self {
        SimRuntime {
            shared: Arc::new(SimShared {
                state: Mutex::new(SimState {
                    now: start.0,
                    seq: 0,
                    next_id: 1,
                    ready: BinaryHeap::new(),
                    batons: HashMap::new(),
                    handles: HashMap::new(),
                    joiners: HashMap::new(),
                    finished: HashSet::new(),
                    live: 0,
                    semaphores: Vec::new(),
                    failure: None,
                    halted: false,
                }),
                idle: Condvar::new(),
            }),
        }
    }

    /// Runs `main` as the root task and blocks until every task spawned
    /// (transitively) has finished.
    pub fn run<F>(&self, main: F) -> Result<(), SimError>
    where
        F: FnOnce() + Send + 'static,
    {
        self.spawn("sim-main", Box::new(main));
        let mut st = self.shared.state.lock().unwrap();
        dispatch(&mut st);
        while !(st.live == 0 || st.halted) {
            st = self.shared.idle.wait(st).unwrap();
        }
        match st.failure.take() {
            Some(err) => Err(err),
            None => Ok(()),
        }
    }

    fn current() -> u64 {
        CURRENT_TASK.with(|c| c.get()).expect("SimRuntime primitive called outside a simulation task")
    }

    fn park(&self, me: u64, mut st: std::sync::MutexGuard<'_, SimState>) {
        let baton = st.batons.get(&me).cloned().expect("unknown task");
        let halted = dispatch(&mut st);
        if halted {
            self.shared.idle.notify_all();
        }
        drop(st);
        baton.take();
    }
}

/// Hands the baton to the next ready task. Returns true when the simulation
/// can make no further progress.
fn dispatch(st: &mut SimState) -> bool {
    match st.ready.pop() {
        Some(Reverse((t, _, id))) => {
            st.now = st.now.max(t);
            if let Some(b) = st.batons.get(&id) {
                b.give();
            }
            false
        }
        None => {
            if st.live > 0 && st.failure.is_none() {
                st.failure = Some(SimError::Deadlock(st.live));
            }
            st.halted = true;
            true
        }
    }
}

impl Runtime for SimRuntime {
    fn now(&self) -> Timestamp {
        Timestamp(self.shared.state.lock().unwrap().now)
    }

    fn sleep(&self, ms: i64) {
        let me = Self::current();
        let mut st = self.shared.state.lock().unwrap();
        let wake = st.now + ms.max(0);
        let seq = st.seq;
        st.seq += 1;
        st.ready.push(Reverse((wake, seq, me)));
        self.park(me, st);
    }

    fn spawn(&self, name: &str, job: Job) -> Task {
        let mut st = self.shared.state.lock().unwrap();
        let id = st.next_id;
        st.next_id += 1;
        let seq = st.seq;
        st.seq += 1;
        let now = st.now;
        st.ready.push(Reverse((now, seq, id)));
        let baton = Baton::new();
        st.batons.insert(id, baton.clone());
        let task = Task::new(id);
        st.handles.insert(id, task.clone());
        st.live += 1;
        drop(st);

        let shared = self.shared.clone();
        let handle = task.clone();
        let builder = thread::Builder::new().name(format!("sim-{name}-{id}"));
        builder
            .spawn(move || {
                CURRENT_TASK.with(|c| c.set(Some(id)));
                baton.take();
                let outcome = panic::catch_unwind(AssertUnwindSafe(job));
                let mut st = shared.state.lock().unwrap();
                if let Err(payload) = outcome {
                    let msg = payload
                        .downcast_ref::<String>()
                        .cloned()
                        .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                        .unwrap_or_else(|| "unknown panic".into());
                    if st.failure.is_none() {
                        st.failure = Some(SimError::TaskPanicked(msg));
                    }
                }
                st.finished.insert(id);
                st.live -= 1;
                st.batons.remove(&id);
                st.handles.remove(&id);
                handle.mark_done();
                let now = st.now;
                for waiter in st.joiners.remove(&id).unwrap_or_default() {
                    let seq = st.seq;
                    st.seq += 1;
                    st.ready.push(Reverse((now, seq, waiter)));
                }
                if st.live == 0 {
                    st.halted = true;
                    shared.idle.notify_all();
                } else if dispatch(&mut st) {
                    shared.idle.notify_all();
                }
            })
            .expect("failed to spawn simulation thread");
        task
    }

    fn join(&self, task: &Task) {
        if task.is_finished() {
            return;
        }
        let me = Self::current();
        let mut st = self.shared.state.lock().unwrap();
        if st.finished.contains(&task.inner.id) || task.is_finished() {
            return;
        }
        st.joiners.entry(task.inner.id).or_default().push(me);
        self.park(me, st);
    }

    fn semaphore(&self, permits: usize) -> Arc<dyn Semaphore> {
        let mut st = self.shared.state.lock().unwrap();
        st.semaphores.push(SemState { avail: permits, waiters: VecDeque::new() });
        let index = st.semaphores.len() - 1;
        Arc::new(SimSemaphore { rt: self.clone(), index })
    }
}

struct SimSemaphore {
    rt: SimRuntime,
    index: usize,
}

impl Semaphore for SimSemaphore {
    fn acquire(&self) {
        let me = SimRuntime::current();
        let mut st = self.rt.shared.state.lock().unwrap();
        let sem = &mut st.semaphores[self.index];
        if sem.avail > 0 {
            sem.avail -= 1;
            return;
        }
        sem.waiters.push_back(me);
        self.rt.park(me, st);
    }

    fn release(&self) {
        let mut st = self.rt.shared.state.lock().unwrap();
        let next = st.semaphores[self.index].waiters.pop_front();
        match next {
            Some(waiter) => {
                let now = st.now;
                let seq = st.seq;
                st.seq += 1;
                st.ready.push(Reverse((now, seq, waiter)));
            }
            None => st.semaphores[self.index].avail += 1,
        }
    }
}

//! One-shot timers on a single thread.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TimerId(u64);

type Callback = Box<dyn FnOnce() + Send>;

#[derive(Default)]
struct State {
    heap: BinaryHeap<Reverse<(Instant, TimerId)>>,
    pending: HashMap<TimerId, Callback>,
    next_id: u64,
    stop: bool,
}

pub struct TimerService {
    state: Arc<(Mutex<State>, Condvar)>,
    thread: Mutex<Option<JoinHandle<()>>>,
}

impl TimerService {
    pub fn start() -> Self {
        let state = Arc::new((Mutex::new(State::default()), Condvar::new()));
        let thread = {
            let state = Arc::clone(&state);
            std::thread::Builder::new()
                .name("rule-timers".into())
                .spawn(move || timer_loop(state))
                .expect("spawn timer thread")
        };
        TimerService {
            state,
            thread: Mutex::new(Some(thread)),
        }
    }

    /// Runs `callback` on the timer thread at `at`.
    pub fn schedule(&self, at: Instant, callback: impl FnOnce() + Send + 'static) -> TimerId {
        let (lock, cvar) = &*self.state;
        let mut state = lock.lock();
        state.next_id += 1;
        let id = TimerId(state.next_id);
        state.heap.push(Reverse((at, id)));
        state.pending.insert(id, Box::new(callback));
        cvar.notify_one();
        id
    }

    /// True if the timer had not fired yet.
    pub fn cancel(&self, id: TimerId) -> bool {
        self.state.0.lock().pending.remove(&id).is_some()
    }

    pub fn pending(&self) -> usize {
        self.state.0.lock().pending.len()
    }

    pub fn shutdown(&self) {
        {
            let (lock, cvar) = &*self.state;
            lock.lock().stop = true;
            cvar.notify_all();
        }
        if let Some(handle) = self.thread.lock().take() {
            let _ = handle.join();
        }
    }
}

impl Drop for TimerService {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn timer_loop(state: Arc<(Mutex<State>, Condvar)>) {
    let (lock, cvar) = &*state;
    let mut guard = lock.lock();
    loop {
        if guard.stop {
            return;
        }
        let now = Instant::now();
        match guard.heap.peek().copied() {
            Some(Reverse((at, id))) if at <= now => {
                guard.heap.pop();
                if let Some(callback) = guard.pending.remove(&id) {
                    drop(guard);
                    callback();
                    guard = lock.lock();
                }
            }
            Some(Reverse((at, _))) => {
                cvar.wait_for(&mut guard, at - now);
            }
            None => {
                cvar.wait_for(&mut guard, Duration::from_secs(3600));
            }
        }
    }
}

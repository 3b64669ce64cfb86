//! Push-triggered evaluation: the cache forwards every update of a rule's
//! datasources to the rule's own loop, which evaluates once every symbol
//! has fresh data.

use std::thread::JoinHandle;

use crossbeam::channel::{bounded, Receiver, Select, Sender};

use crate::dsb::PushMessage;
use crate::matcher::{Ist, MatchFunction, Sample};

/// Handle on a running push loop.
pub struct PushLoop {
    stop: Sender<()>,
    thread: Option<JoinHandle<()>>,
}

impl PushLoop {
    /// Spawns the loop. `queues` pairs each symbol with the receiver the
    /// cache pushes that symbol's datasource into.
    pub fn spawn(
        mf: MatchFunction,
        queues: Vec<(String, Receiver<PushMessage>)>,
    ) -> std::io::Result<Self> {
        let (stop, stop_rx) = bounded(1);
        let name = format!("push-rule-{}", mf.rule_id());
        let thread = std::thread::Builder::new()
            .name(name)
            .spawn(move || run_push_loop(mf, queues, stop_rx))?;
        Ok(PushLoop {
            stop,
            thread: Some(thread),
        })
    }

    /// Signals the loop and waits for it to exit. Its queues are dropped
    /// before this returns.
    pub fn stop(mut self) {
        self.halt();
    }

    fn halt(&mut self) {
        let _ = self.stop.try_send(());
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }
}

impl Drop for PushLoop {
    fn drop(&mut self) {
        self.halt();
    }
}

/// Waits on the rule's queues, keeping only the latest sample per symbol,
/// and evaluates when every symbol has one it has not used yet.
pub fn run_push_loop(
    mf: MatchFunction,
    queues: Vec<(String, Receiver<PushMessage>)>,
    stop: Receiver<()>,
) {
    let mut pending: Vec<Option<Sample>> = vec![None; queues.len()];
    loop {
        let mut select = Select::new();
        let stop_op = select.recv(&stop);
        for (_, rx) in &queues {
            select.recv(rx);
        }
        let op = select.select();
        let index = op.index();
        if index == stop_op {
            let _ = op.recv(&stop);
            break;
        }
        let slot = index - 1;
        match op.recv(&queues[slot].1) {
            Ok(message) => {
                pending[slot] = Some(Sample {
                    value: message.value,
                    session: message.session,
                });
            }
            Err(_) => break,
        }
        if pending.iter().all(Option::is_some) {
            let mut ist = Ist::new();
            for ((symbol, _), sample) in queues.iter().zip(pending.iter_mut()) {
                ist.insert(symbol.clone(), sample.take().expect("checked above"));
            }
            mf.evaluate(&ist);
        }
    }
    log::debug!("push loop for rule {} stopped", mf.rule_id());
}

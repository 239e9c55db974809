use std::collections::hash_map::DefaultHasher;
use std::collections::{HashMap, HashSet, VecDeque};
use std::hash::{Hash, Hasher};
use std::io::{BufRead, BufWriter, Write};
use std::sync::atomic::Ordering;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::time::{Duration, Instant};

use super::config::ServiceConfig;
use super::stats::ServiceStats;
use crate::error::{Error, Result};
use crate::model::{Direction, Utterance};
use crate::num::Scalar;
use crate::pipeline::{CallProcessor, Detector};
use crate::protocol::{
    CallEndEvent, CallStartEvent, DecisionRecord, ErrorRecord, FinalRecord, InputEvent, OutputEvent,
    UtteranceEvent,
};

/// Closed call ids remembered per worker, to reject late events.
const TOMBSTONES_PER_WORKER: usize = 100_000;
/// How often idle workers look for sessions to evict.
const SWEEP_INTERVAL: Duration = Duration::from_millis(500);

enum Work {
    Start(CallStartEvent),
    Utterance(UtteranceEvent, Duration),
    End(CallEndEvent),
}

/// Bounded set of closed call ids.
#[derive(Default)]
struct Tombstones {
    set: HashSet<String>,
    order: VecDeque<String>,
}

impl Tombstones {
    fn contains(&self, call_id: &str) -> bool {
        self.set.contains(call_id)
    }

    fn insert(&mut self, call_id: String) {
        if self.set.insert(call_id.clone()) {
            self.order.push_back(call_id);
            if self.order.len() > TOMBSTONES_PER_WORKER {
                if let Some(old) = self.order.pop_front() {
                    self.set.remove(&old);
                }
            }
        }
    }
}

struct Session<'d, T> {
    processor: CallProcessor<'d, T>,
    last_seen: Instant,
}

/// Shared read-only detector plus counters. Events for one call are handled
/// in order by a single worker; different calls run in parallel.
#[derive(Debug)]
pub struct Engine<T> {
    detector: Detector<T>,
    config: ServiceConfig,
    stats: ServiceStats,
}

fn error_event(call_id: Option<&str>, message: impl Into<String>) -> OutputEvent {
    OutputEvent::Error(ErrorRecord { call_id: call_id.map(str::to_string), message: message.into() })
}

fn shard(call_id: &str, n: usize) -> usize {
    let mut h = DefaultHasher::new();
    call_id.hash(&mut h);
    (h.finish() % n as u64) as usize
}

impl<T: Scalar> Engine<T> {
    pub fn new(detector: Detector<T>, config: ServiceConfig) -> Result<Self> {
        config.validate()?;
        Ok(Engine { detector, config, stats: ServiceStats::default() })
    }

    /// Loads rules and model named by the config.
    pub fn from_config(config: ServiceConfig) -> Result<Self> {
        let detector = config.build_detector()?;
        Engine::new(detector, config)
    }

    pub fn detector(&self) -> &Detector<T> {
        &self.detector
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn stats(&self) -> &ServiceStats {
        &self.stats
    }

    /// Processes one event stream until end of input. Output lines for one
    /// call keep their order; lines of different calls may interleave.
    /// Calls still open at end of input are closed and reported as evicted.
    pub fn serve_stream<R: BufRead, W: Write + Send>(&self, input: R, output: W) -> Result<()> {
        let workers = self.config.worker_count();
        std::thread::scope(|scope| {
            let (out_tx, out_rx) = mpsc::channel::<OutputEvent>();
            let writer = scope.spawn(move || -> Result<()> {
                let mut out = BufWriter::new(output);
                for event in out_rx {
                    out.write_all(event.to_line().as_bytes())?;
                    out.write_all(b"\n")?;
                    out.flush()?;
                }
                Ok(())
            });

            let mut queues: Vec<Sender<Work>> = Vec::with_capacity(workers);
            for _ in 0..workers {
                let (tx, rx) = mpsc::channel();
                queues.push(tx);
                let out = out_tx.clone();
                scope.spawn(move || self.worker(rx, out));
            }

            let read = self.read_loop(input, &queues, &out_tx);
            drop(queues);
            drop(out_tx);
            let written = writer.join().expect("writer thread panicked");
            read.and(written)
        })
    }

    fn read_loop<R: BufRead>(&self, input: R, queues: &[Sender<Work>], out: &Sender<OutputEvent>) -> Result<()> {
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let received = Instant::now();
            let event: InputEvent = match serde_json::from_str(&line) {
                Ok(e) => e,
                Err(e) => {
                    self.stats.errors.fetch_add(1, Ordering::Relaxed);
                    let _ = out.send(error_event(None, format!("line {}: {e}", i + 1)));
                    continue;
                }
            };
            let (call_id, work) = match event {
                InputEvent::CallStart(e) => (e.call_id.clone(), Work::Start(e)),
                InputEvent::Utterance(e) => (e.call_id.clone(), Work::Utterance(e, received.elapsed())),
                InputEvent::CallEnd(e) => (e.call_id.clone(), Work::End(e)),
                InputEvent::Gold(_) => continue,
                InputEvent::Stats => {
                    let _ = out.send(OutputEvent::Stats(self.stats.snapshot()));
                    continue;
                }
            };
            queues[shard(&call_id, queues.len())]
                .send(work)
                .map_err(|_| Error::State("worker stopped".into()))?;
        }
        Ok(())
    }

    fn worker(&self, rx: Receiver<Work>, out: Sender<OutputEvent>) {
        let mut sessions: HashMap<String, Session<'_, T>> = HashMap::new();
        let mut tombstones = Tombstones::default();
        let idle = self.config.idle_timeout();
        let mut last_sweep = Instant::now();

        loop {
            let work = match rx.recv_timeout(SWEEP_INTERVAL) {
                Ok(w) => Some(w),
                Err(RecvTimeoutError::Timeout) => None,
                Err(RecvTimeoutError::Disconnected) => break,
            };
            let now = Instant::now();
            if let Some(work) = work {
                let events = self.handle(work, &mut sessions, &mut tombstones);
                for e in events {
                    if matches!(e, OutputEvent::Error(_)) {
                        self.stats.errors.fetch_add(1, Ordering::Relaxed);
                    }
                    let _ = out.send(e);
                }
            }
            if now.duration_since(last_sweep) >= SWEEP_INTERVAL {
                last_sweep = now;
                let stale: Vec<String> = sessions
                    .iter()
                    .filter(|(_, s)| now.duration_since(s.last_seen) >= idle)
                    .map(|(id, _)| id.clone())
                    .collect();
                for id in stale {
                    log::info!("evicting idle call {id}");
                    let s = sessions.remove(&id).expect("listed above");
                    let _ = out.send(self.evict(s));
                    tombstones.insert(id);
                }
            }
        }
        for (id, s) in sessions.drain() {
            log::info!("input ended with call {id} still open");
            let _ = out.send(self.evict(s));
        }
    }

    fn evict(&self, mut s: Session<'_, T>) -> OutputEvent {
        self.stats.active_sessions.fetch_sub(1, Ordering::Relaxed);
        self.stats.sessions_evicted.fetch_add(1, Ordering::Relaxed);
        let call_id = s.processor.call_id().to_string();
        match s.processor.close() {
            Ok(d) => OutputEvent::FinalDecision(FinalRecord {
                call_id,
                decision: d.as_ref().map(DecisionRecord::from_decision),
            }),
            Err(e) => error_event(Some(&call_id), e.to_string()),
        }
    }

    fn open<'s, 'd>(
        &'d self,
        sessions: &'s mut HashMap<String, Session<'d, T>>,
        tombstones: &Tombstones,
        call_id: &str,
        direction: Direction,
    ) -> std::result::Result<&'s mut Session<'d, T>, Box<OutputEvent>> {
        if tombstones.contains(call_id) {
            return Err(Box::new(error_event(Some(call_id), format!("call {call_id} is already closed"))));
        }
        if !sessions.contains_key(call_id) {
            let active = self.stats.active_sessions.fetch_add(1, Ordering::Relaxed);
            if active as usize >= self.config.max_sessions {
                self.stats.active_sessions.fetch_sub(1, Ordering::Relaxed);
                return Err(Box::new(error_event(
                    Some(call_id),
                    format!("session limit of {} reached", self.config.max_sessions),
                )));
            }
            self.stats.sessions_opened.fetch_add(1, Ordering::Relaxed);
            sessions.insert(
                call_id.to_string(),
                Session { processor: self.detector.processor(call_id, direction), last_seen: Instant::now() },
            );
        }
        let s = sessions.get_mut(call_id).expect("inserted above");
        s.processor.learn_direction(direction);
        s.last_seen = Instant::now();
        Ok(s)
    }

    fn handle<'d>(
        &'d self,
        work: Work,
        sessions: &mut HashMap<String, Session<'d, T>>,
        tombstones: &mut Tombstones,
    ) -> Vec<OutputEvent> {
        match work {
            Work::Start(e) => match self.open(sessions, tombstones, &e.call_id, e.direction) {
                Ok(_) => vec![],
                Err(err) => vec![*err],
            },
            Work::Utterance(e, parse_time) => {
                let started = Instant::now();
                let direction = e.direction.unwrap_or_default();
                let s = match self.open(sessions, tombstones, &e.call_id, direction) {
                    Ok(s) => s,
                    Err(err) => return vec![*err],
                };
                let result = Utterance::new(e.call_id.as_str(), e.index, e.side, e.start_time_s, e.text)
                    .and_then(|u| s.processor.process(&u));
                let elapsed = parse_time + started.elapsed();
                self.stats.utterances.fetch_add(1, Ordering::Relaxed);
                self.stats.latency.record(elapsed);
                if elapsed > self.config.deadline() {
                    self.stats.overruns.fetch_add(1, Ordering::Relaxed);
                    log::warn!("call {}: utterance {} took {elapsed:?}", e.call_id, e.index);
                }
                match result {
                    Ok(Some(d)) => vec![OutputEvent::PurposeUpdate(DecisionRecord::from_decision(&d))],
                    Ok(None) => vec![],
                    Err(err) => vec![error_event(Some(&e.call_id), err.to_string())],
                }
            }
            Work::End(e) => {
                let Some(mut s) = sessions.remove(&e.call_id) else {
                    let message = if tombstones.contains(&e.call_id) {
                        format!("call {} is already closed", e.call_id)
                    } else {
                        format!("call {} has no open session", e.call_id)
                    };
                    return vec![error_event(Some(&e.call_id), message)];
                };
                self.stats.active_sessions.fetch_sub(1, Ordering::Relaxed);
                self.stats.sessions_closed.fetch_add(1, Ordering::Relaxed);
                let out = match s.processor.close() {
                    Ok(d) => OutputEvent::FinalDecision(FinalRecord {
                        call_id: e.call_id.clone(),
                        decision: d.as_ref().map(DecisionRecord::from_decision),
                    }),
                    Err(err) => error_event(Some(&e.call_id), err.to_string()),
                };
                tombstones.insert(e.call_id);
                vec![out]
            }
        }
    }
}

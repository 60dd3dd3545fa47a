//! Client for external trainer processes speaking the `nas-eval/1` protocol.
//!
//! The worker writes a handshake line, then answers one JSON request per line:
//!
//! ```text
//! worker → {"protocol":"nas-eval/1","name":"..."}
//! engine → {"id":1,"genotype":[...24 ints],"partitioning":0,"fold":2,"seed":5}
//! worker → {"id":1,"score":0.7213}   or   {"id":1,"error":"message"}
//! ```

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::EvaluatorError;
use crate::evaluation::{Evaluator, TrainingUnit};
use crate::search_space::Genotype;

pub const PROTOCOL_VERSION: &str = "nas-eval/1";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(3600);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Handshake {
    pub protocol: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub genotype: Genotype,
    pub partitioning: u32,
    pub fold: u8,
    pub seed: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// A line-oriented duplex channel to one worker.
pub trait Transport: Send {
    fn send(&mut self, line: &str) -> Result<(), EvaluatorError>;
    /// Next line from the worker; `Ok(None)` once the worker has exited.
    fn recv(&mut self, timeout: Duration) -> Result<Option<String>, EvaluatorError>;
}

/// Worker subprocess talking over its stdin/stdout.
pub struct ProcessTransport {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<String>,
}

impl ProcessTransport {
    pub fn spawn(program: &str, args: &[String]) -> Result<Self, EvaluatorError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| EvaluatorError::Io(format!("cannot start {program}: {e}")))?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines().map_while(Result::ok) {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(ProcessTransport { child, stdin, lines })
    }
}

impl Transport for ProcessTransport {
    fn send(&mut self, line: &str) -> Result<(), EvaluatorError> {
        writeln!(self.stdin, "{line}")
            .and_then(|_| self.stdin.flush())
            .map_err(|e| EvaluatorError::Io(e.to_string()))
    }

    fn recv(&mut self, timeout: Duration) -> Result<Option<String>, EvaluatorError> {
        match self.lines.recv_timeout(timeout) {
            Ok(line) => Ok(Some(line)),
            Err(RecvTimeoutError::Timeout) => Err(EvaluatorError::Timeout(timeout)),
            Err(RecvTimeoutError::Disconnected) => Ok(None),
        }
    }
}

impl Drop for ProcessTransport {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

type Handler = Box<dyn FnMut(&str) -> Option<Vec<String>> + Send>;

/// In-process worker stand-in. The handler receives each request line and
/// returns the lines the worker would write, or `None` to simulate an exit.
pub struct InProcessTransport {
    handler: Handler,
    outbox: VecDeque<String>,
    closed: bool,
}

impl InProcessTransport {
    pub fn new(greeting: impl IntoIterator<Item = String>, handler: impl FnMut(&str) -> Option<Vec<String>> + Send + 'static) -> Self {
        InProcessTransport { handler: Box::new(handler), outbox: greeting.into_iter().collect(), closed: false }
    }

    /// A worker that answers every request with `score_fn` under the standard handshake.
    pub fn serving(name: &str, score_fn: impl Fn(&Request) -> Result<f64, String> + Send + 'static) -> Self {
        let hello = serde_json::to_string(&Handshake { protocol: PROTOCOL_VERSION.into(), name: name.into() }).unwrap();
        Self::new([hello], move |line| {
            let reply = match serde_json::from_str::<Request>(line) {
                Ok(req) => match score_fn(&req) {
                    Ok(score) => Response { id: req.id, score: Some(score), error: None },
                    Err(msg) => Response { id: req.id, score: None, error: Some(msg) },
                },
                Err(e) => Response { id: 0, score: None, error: Some(e.to_string()) },
            };
            Some(vec![serde_json::to_string(&reply).unwrap()])
        })
    }
}

impl Transport for InProcessTransport {
    fn send(&mut self, line: &str) -> Result<(), EvaluatorError> {
        if self.closed {
            return Err(EvaluatorError::Io("worker has exited".into()));
        }
        match (self.handler)(line) {
            Some(lines) => self.outbox.extend(lines),
            None => self.closed = true,
        }
        Ok(())
    }

    fn recv(&mut self, timeout: Duration) -> Result<Option<String>, EvaluatorError> {
        match self.outbox.pop_front() {
            Some(line) => Ok(Some(line)),
            None if self.closed => Ok(None),
            None => Err(EvaluatorError::Timeout(timeout)),
        }
    }
}

/// One handshaken connection with at most one request in flight.
pub struct Connection {
    transport: Box<dyn Transport>,
    worker_name: String,
    next_id: u64,
    timeout: Duration,
}

fn worker_exited() -> EvaluatorError {
    EvaluatorError::Io("worker exited".into())
}

impl Connection {
    pub fn open(mut transport: Box<dyn Transport>, timeout: Duration) -> Result<Self, EvaluatorError> {
        let line = transport.recv(timeout)?.ok_or_else(worker_exited)?;
        let hello: Handshake = serde_json::from_str(&line)
            .map_err(|e| EvaluatorError::Protocol(format!("bad handshake {line:?}: {e}")))?;
        if hello.protocol != PROTOCOL_VERSION {
            return Err(EvaluatorError::Protocol(format!("unsupported protocol {:?}", hello.protocol)));
        }
        Ok(Connection { transport, worker_name: hello.name, next_id: 1, timeout })
    }

    pub fn worker_name(&self) -> &str {
        &self.worker_name
    }

    pub fn evaluate(&mut self, unit: &TrainingUnit) -> Result<f64, EvaluatorError> {
        let id = self.next_id;
        self.next_id += 1;
        let request = Request {
            id,
            genotype: unit.genotype,
            partitioning: unit.slot.partitioning,
            fold: unit.slot.fold,
            seed: unit.slot.seed,
        };
        self.transport.send(&serde_json::to_string(&request).expect("request serializes"))?;
        let line = self.transport.recv(self.timeout)?.ok_or_else(worker_exited)?;
        let response: Response = serde_json::from_str(&line)
            .map_err(|e| EvaluatorError::Protocol(format!("malformed response {line:?}: {e}")))?;
        if response.id != id {
            return Err(EvaluatorError::Protocol(format!("response id {} does not match request id {id}", response.id)));
        }
        match (response.score, response.error) {
            (_, Some(msg)) => Err(EvaluatorError::Failure(msg)),
            (Some(score), None) if (0.0..=1.0).contains(&score) => Ok(score),
            (Some(score), None) => Err(EvaluatorError::Protocol(format!("score {score} outside [0, 1]"))),
            (None, None) => Err(EvaluatorError::Protocol(format!("response {id} has neither score nor error"))),
        }
    }
}

type TransportFactory = Box<dyn Fn() -> Result<Box<dyn Transport>, EvaluatorError> + Send + Sync>;

/// A pool of worker connections; units of one batch are spread across them.
pub struct ExternalEvaluator {
    factory: TransportFactory,
    slots: Vec<Mutex<Option<Connection>>>,
    timeout: Duration,
}

impl ExternalEvaluator {
    pub fn new(
        factory: impl Fn() -> Result<Box<dyn Transport>, EvaluatorError> + Send + Sync + 'static,
        workers: usize,
        timeout: Duration,
    ) -> Self {
        ExternalEvaluator {
            factory: Box::new(factory),
            slots: (0..workers.max(1)).map(|_| Mutex::new(None)).collect(),
            timeout,
        }
    }

    /// Pool of `workers` subprocesses running `program args...`.
    pub fn command(program: String, args: Vec<String>, workers: usize, timeout: Duration) -> Self {
        Self::new(
            move || ProcessTransport::spawn(&program, &args).map(|t| Box::new(t) as Box<dyn Transport>),
            workers,
            timeout,
        )
    }

    pub fn workers(&self) -> usize {
        self.slots.len()
    }

    fn connect(&self) -> Result<Connection, EvaluatorError> {
        Connection::open((self.factory)()?, self.timeout)
    }

    /// Evaluates on one slot, reconnecting once if the worker has gone away.
    fn evaluate_on(&self, slot: &Mutex<Option<Connection>>, unit: &TrainingUnit) -> Result<f64, EvaluatorError> {
        let mut guard = slot.lock().unwrap_or_else(|p| p.into_inner());
        for attempt in 0..2 {
            if guard.is_none() {
                *guard = Some(self.connect()?);
            }
            match guard.as_mut().expect("connected").evaluate(unit) {
                Err(EvaluatorError::Io(msg)) => {
                    *guard = None;
                    if attempt == 1 {
                        return Err(EvaluatorError::Io(msg));
                    }
                }
                Err(e) => {
                    // the connection state is unknown after a protocol error or timeout
                    if !matches!(e, EvaluatorError::Failure(_)) {
                        *guard = None;
                    }
                    return Err(e);
                }
                Ok(score) => return Ok(score),
            }
        }
        unreachable!("loop returns on the second attempt")
    }
}

impl Evaluator for ExternalEvaluator {
    fn score(&self, unit: &TrainingUnit) -> Result<f64, EvaluatorError> {
        let slot = self.slots.iter().find(|s| !matches!(s.try_lock(), Err(std::sync::TryLockError::WouldBlock)));
        self.evaluate_on(slot.unwrap_or(&self.slots[0]), unit)
    }

    fn score_batch(&self, units: &[TrainingUnit]) -> Result<Vec<f64>, EvaluatorError> {
        let n = self.slots.len().min(units.len());
        if n <= 1 {
            return units.iter().map(|u| self.evaluate_on(&self.slots[0], u)).collect();
        }
        let mut results: Vec<Option<Result<f64, EvaluatorError>>> = vec![None; units.len()];
        thread::scope(|scope| {
            let handles: Vec<_> = (0..n)
                .map(|w| {
                    let slot = &self.slots[w];
                    scope.spawn(move || {
                        (w..units.len())
                            .step_by(n)
                            .map(|i| (i, self.evaluate_on(slot, &units[i])))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (i, r) in h.join().expect("worker thread panicked") {
                    results[i] = Some(r);
                }
            }
        });
        results.into_iter().map(|r| r.expect("every unit is assigned")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::UnitSlot;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn unit(seed: u32) -> TrainingUnit {
        TrainingUnit { genotype: Genotype::zeros(), slot: UnitSlot { partitioning: 0, fold: 2, seed } }
    }

    fn hello() -> String {
        r#"{"protocol":"nas-eval/1","name":"mock"}"#.to_string()
    }

    fn scripted(reply: &'static str) -> Box<dyn Transport> {
        Box::new(InProcessTransport::new([hello()], move |_| Some(vec![reply.to_string()])))
    }

    fn connection_at_id(transport: Box<dyn Transport>, id: u64) -> Connection {
        let mut c = Connection::open(transport, Duration::from_secs(1)).unwrap();
        c.next_id = id;
        c
    }

    #[test]
    fn happy_path() {
        let mut c = connection_at_id(scripted(r#"{"id":7,"score":0.81}"#), 7);
        assert_eq!(c.worker_name(), "mock");
        assert_eq!(c.evaluate(&unit(5)), Ok(0.81));
    }

    #[test]
    fn request_wire_format() {
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = seen.clone();
        let t = InProcessTransport::new([hello()], move |line| {
            log.lock().unwrap().push(line.to_string());
            Some(vec![r#"{"id":1,"score":0.5}"#.to_string()])
        });
        let mut c = Connection::open(Box::new(t), Duration::from_secs(1)).unwrap();
        c.evaluate(&unit(5)).unwrap();
        assert_eq!(
            seen.lock().unwrap()[0],
            r#"{"id":1,"genotype":[0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0,0],"partitioning":0,"fold":2,"seed":5}"#
        );
    }

    #[test]
    fn mismatched_id_is_protocol_error() {
        let mut c = connection_at_id(scripted(r#"{"id":8,"score":0.81}"#), 7);
        assert!(matches!(c.evaluate(&unit(5)), Err(EvaluatorError::Protocol(_))));
    }

    #[test]
    fn worker_error_is_failure() {
        let mut c = connection_at_id(scripted(r#"{"id":7,"error":"oom"}"#), 7);
        assert_eq!(c.evaluate(&unit(5)), Err(EvaluatorError::Failure("oom".into())));
    }

    #[test]
    fn malformed_lines_are_protocol_errors() {
        let mut c = connection_at_id(scripted("not json"), 1);
        assert!(matches!(c.evaluate(&unit(5)), Err(EvaluatorError::Protocol(_))));
        let mut c = connection_at_id(scripted(r#"{"id":1}"#), 1);
        assert!(matches!(c.evaluate(&unit(5)), Err(EvaluatorError::Protocol(_))));
        let bad_hello = InProcessTransport::new([r#"{"protocol":"nas-eval/2","name":"x"}"#.to_string()], |_| None);
        assert!(matches!(Connection::open(Box::new(bad_hello), Duration::from_secs(1)), Err(EvaluatorError::Protocol(_))));
    }

    #[test]
    fn silent_worker_times_out() {
        let t = InProcessTransport::new([hello()], |_| Some(vec![]));
        let mut c = Connection::open(Box::new(t), Duration::from_millis(5)).unwrap();
        assert_eq!(c.evaluate(&unit(1)), Err(EvaluatorError::Timeout(Duration::from_millis(5))));
    }

    #[test]
    fn pool_reconnects_after_worker_exit() {
        let spawned = Arc::new(AtomicUsize::new(0));
        let counter = spawned.clone();
        let pool = ExternalEvaluator::new(
            move || {
                counter.fetch_add(1, Ordering::SeqCst);
                let mut served = 0;
                let t = InProcessTransport::new([hello()], move |line| {
                    served += 1;
                    if served > 2 {
                        return None;
                    }
                    let req: Request = serde_json::from_str(line).unwrap();
                    Some(vec![format!(r#"{{"id":{},"score":{}}}"#, req.id, req.seed as f64 / 100.0)])
                });
                Ok(Box::new(t) as Box<dyn Transport>)
            },
            1,
            Duration::from_secs(1),
        );
        let scores: Vec<f64> = (0..5).map(|s| pool.score(&unit(s)).unwrap()).collect();
        assert_eq!(scores, vec![0.0, 0.01, 0.02, 0.03, 0.04]);
        assert_eq!(spawned.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn batch_spreads_over_workers_and_keeps_order() {
        let pool = ExternalEvaluator::new(
            || Ok(Box::new(InProcessTransport::serving("w", |r| Ok(r.seed as f64 / 1000.0))) as Box<dyn Transport>),
            4,
            Duration::from_secs(1),
        );
        let units: Vec<_> = (0..15).map(unit).collect();
        let scores = pool.score_batch(&units).unwrap();
        assert_eq!(scores, (0..15).map(|s| s as f64 / 1000.0).collect::<Vec<_>>());
    }

    #[test]
    fn batch_surfaces_worker_failure() {
        let pool = ExternalEvaluator::new(
            || {
                Ok(Box::new(InProcessTransport::serving("w", |r| {
                    if r.seed == 3 {
                        Err("oom".into())
                    } else {
                        Ok(0.5)
                    }
                })) as Box<dyn Transport>)
            },
            2,
            Duration::from_secs(1),
        );
        let units: Vec<_> = (0..5).map(unit).collect();
        assert_eq!(pool.score_batch(&units), Err(EvaluatorError::Failure("oom".into())));
    }
}

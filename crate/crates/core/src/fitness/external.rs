//! Client side of the evaluator wire protocol.
//!
//! Requests and responses are single JSON objects, one per line, over a
//! byte stream: the standard streams of a spawned process or a TCP socket.
//! A reader thread routes each response to the waiting request by `id`, so
//! several requests may be in flight on one stream.

use super::{Backend, BackendError, BackendReply, EvalRequest, Source};
use crate::config::TrainBudget;
use crate::genome::ImageShape;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

/// Overrides the configured evaluator command; run through `sh -c`.
pub const BACKEND_CMD_ENV: &str = "EVOLEN_BACKEND_CMD";

/// Where the external evaluator lives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalSettings {
    /// Program and arguments to spawn.
    #[serde(default)]
    pub command: Option<Vec<String>>,
    /// `host:port` of a listening evaluator.
    #[serde(default)]
    pub address: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_seconds: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
}

fn default_timeout() -> f64 {
    86_400.0
}

fn default_retries() -> u32 {
    1
}

impl ExternalSettings {
    pub fn command(argv: &[&str]) -> Self {
        ExternalSettings {
            command: Some(argv.iter().map(|s| s.to_string()).collect()),
            address: None,
            timeout_seconds: default_timeout(),
            max_retries: default_retries(),
        }
    }

    pub fn address(addr: &str) -> Self {
        ExternalSettings {
            command: None,
            address: Some(addr.to_string()),
            timeout_seconds: default_timeout(),
            max_retries: default_retries(),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration, max_retries: u32) -> Self {
        self.timeout_seconds = timeout.as_secs_f64();
        self.max_retries = max_retries;
        self
    }
}

/// One request line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub id: String,
    pub genome: serde_json::Value,
    pub input_shape: ImageShape,
    pub num_classes: u32,
    pub budget: TrainBudget,
    pub seed: u64,
}

impl WireRequest {
    /// Compact JSON with sorted keys, without the trailing newline.
    pub fn to_line(&self) -> String {
        serde_json::to_value(self).expect("request serializes").to_string()
    }
}

/// One response line. Unknown fields are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResponse {
    pub id: String,
    pub status: ResponseStatus,
    #[serde(default)]
    pub fitness: Option<f64>,
    #[serde(default)]
    pub loss: Option<f64>,
    #[serde(default)]
    pub num_params: Option<u64>,
    #[serde(default)]
    pub wall_seconds: Option<f64>,
    #[serde(default)]
    pub message: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseStatus {
    Ok,
    Error,
}

type Waiter = mpsc::Sender<Result<EvalResponse, BackendError>>;

#[derive(Default)]
struct Pending {
    waiters: HashMap<String, Waiter>,
    /// Ids given up on after a timeout; late answers to them are dropped.
    abandoned: HashSet<String>,
    closed: Option<String>,
}

impl Pending {
    fn fail_all(&mut self, err: BackendError) {
        for (_, w) in self.waiters.drain() {
            let _ = w.send(Err(err.clone()));
        }
    }
}

pub struct ExternalBackend {
    settings: ExternalSettings,
    identity: String,
    writer: Mutex<Box<dyn Write + Send>>,
    pending: Arc<Mutex<Pending>>,
    child: Option<Mutex<Child>>,
    counter: AtomicU64,
}

impl ExternalBackend {
    /// Spawns or connects to the evaluator described by `settings`. The
    /// [`BACKEND_CMD_ENV`] variable, when set, replaces the endpoint.
    pub fn connect(settings: ExternalSettings) -> Result<Self, BackendError> {
        if let Ok(cmd) = std::env::var(BACKEND_CMD_ENV) {
            if !cmd.trim().is_empty() {
                let argv = vec!["sh".to_string(), "-c".to_string(), cmd];
                return Self::spawn(ExternalSettings {
                    command: Some(argv),
                    address: None,
                    ..settings
                });
            }
        }
        match (&settings.command, &settings.address) {
            (Some(_), None) => Self::spawn(settings),
            (None, Some(addr)) => {
                let stream =
                    TcpStream::connect(addr).map_err(|e| BackendError::Unavailable(format!("connect {addr}: {e}")))?;
                let reader = stream
                    .try_clone()
                    .map_err(|e| BackendError::Unavailable(e.to_string()))?;
                let identity = format!("external-tcp:{addr}");
                Ok(Self::from_streams(settings, identity, Box::new(stream), reader, None))
            }
            _ => Err(BackendError::Unavailable(
                "external backend needs exactly one of `command` or `address`".into(),
            )),
        }
    }

    fn spawn(settings: ExternalSettings) -> Result<Self, BackendError> {
        let argv = settings.command.clone().unwrap_or_default();
        let (program, args) = argv
            .split_first()
            .ok_or_else(|| BackendError::Unavailable("empty evaluator command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| BackendError::Unavailable(format!("spawn {program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let identity = format!("external-cmd:{}", argv.join(" "));
        Ok(Self::from_streams(
            settings,
            identity,
            Box::new(stdin),
            stdout,
            Some(child),
        ))
    }

    fn from_streams<R: Read + Send + 'static>(
        settings: ExternalSettings,
        identity: String,
        writer: Box<dyn Write + Send>,
        reader: R,
        child: Option<Child>,
    ) -> Self {
        let pending = Arc::new(Mutex::new(Pending::default()));
        let routes = pending.clone();
        thread::spawn(move || route_responses(BufReader::new(reader), routes));
        ExternalBackend {
            settings,
            identity,
            writer: Mutex::new(writer),
            pending,
            child: child.map(Mutex::new),
            counter: AtomicU64::new(0),
        }
    }

    fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.settings.timeout_seconds.max(0.0))
    }

    fn send(&self, request: &WireRequest) -> Result<mpsc::Receiver<Result<EvalResponse, BackendError>>, BackendError> {
        let (tx, rx) = mpsc::channel();
        {
            let mut pending = self.pending.lock().unwrap();
            if let Some(reason) = &pending.closed {
                return Err(BackendError::Unavailable(reason.clone()));
            }
            pending.waiters.insert(request.id.clone(), tx);
        }
        let line = request.to_line();
        let mut w = self.writer.lock().unwrap();
        let written = writeln!(w, "{line}").and_then(|_| w.flush());
        if let Err(e) = written {
            self.pending.lock().unwrap().waiters.remove(&request.id);
            return Err(BackendError::Unavailable(format!("write failed: {e}")));
        }
        Ok(rx)
    }

    /// Sends one request and waits for its response, resending after a
    /// timeout at most `max_retries` times.
    pub fn request(&self, mut request: WireRequest) -> Result<EvalResponse, BackendError> {
        let base = format!("r{}", self.counter.fetch_add(1, Ordering::Relaxed));
        for attempt in 0..=self.settings.max_retries {
            request.id = if attempt == 0 {
                base.clone()
            } else {
                format!("{base}.{attempt}")
            };
            let rx = self.send(&request)?;
            match rx.recv_timeout(self.timeout()) {
                Ok(result) => return result,
                Err(RecvTimeoutError::Timeout) => {
                    let mut pending = self.pending.lock().unwrap();
                    pending.waiters.remove(&request.id);
                    pending.abandoned.insert(request.id.clone());
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(BackendError::Unavailable("response channel closed".into()))
                }
            }
        }
        Err(BackendError::Timeout(self.timeout()))
    }
}

fn route_responses<R: BufRead>(reader: R, pending: Arc<Mutex<Pending>>) {
    for line in reader.lines() {
        let line = match line {
            Ok(l) => l,
            Err(e) => {
                let mut p = pending.lock().unwrap();
                p.closed = Some(format!("read failed: {e}"));
                p.fail_all(BackendError::Unavailable(format!("read failed: {e}")));
                return;
            }
        };
        if line.trim().is_empty() {
            continue;
        }
        let mut p = pending.lock().unwrap();
        match serde_json::from_str::<EvalResponse>(&line) {
            Ok(resp) => {
                if let Some(w) = p.waiters.remove(&resp.id) {
                    let _ = w.send(Ok(resp));
                } else if !p.abandoned.remove(&resp.id) {
                    let msg = format!("response with unknown id `{}`", resp.id);
                    p.fail_all(BackendError::Protocol(msg));
                }
            }
            Err(e) => p.fail_all(BackendError::Protocol(format!("malformed response: {e}"))),
        }
    }
    let mut p = pending.lock().unwrap();
    p.closed = Some("evaluator closed its output".into());
    p.fail_all(BackendError::Unavailable("evaluator closed its output".into()));
}

impl Backend for ExternalBackend {
    fn source(&self) -> Source {
        Source::External
    }

    fn identity(&self) -> String {
        self.identity.clone()
    }

    fn evaluate(&self, request: &EvalRequest<'_>) -> Result<BackendReply, BackendError> {
        let wire = WireRequest {
            id: String::new(),
            genome: serde_json::to_value(request.genome).expect("genome serializes"),
            input_shape: request.task.input_shape,
            num_classes: request.task.num_classes,
            budget: request.budget.clone(),
            seed: request.seed,
        };
        let resp = self.request(wire)?;
        match resp.status {
            ResponseStatus::Error => Ok(BackendReply {
                fitness: 0.0,
                loss: None,
                num_params: resp.num_params.unwrap_or(request.num_params),
                eval_seconds: resp.wall_seconds.unwrap_or(0.0),
                error: Some(resp.message.unwrap_or_else(|| "evaluator reported an error".into())),
            }),
            ResponseStatus::Ok => {
                let fitness = resp
                    .fitness
                    .ok_or_else(|| BackendError::Protocol(format!("response `{}` has no fitness", resp.id)))?;
                if !(0.0..=1.0).contains(&fitness) {
                    return Err(BackendError::Protocol(format!(
                        "fitness {fitness} outside [0, 1] in response `{}`",
                        resp.id
                    )));
                }
                if let Some(loss) = resp.loss {
                    if loss.is_nan() || loss < 0.0 {
                        return Err(BackendError::Protocol(format!(
                            "negative loss in response `{}`",
                            resp.id
                        )));
                    }
                }
                Ok(BackendReply {
                    fitness,
                    loss: resp.loss,
                    num_params: resp.num_params.unwrap_or(request.num_params),
                    eval_seconds: resp.wall_seconds.unwrap_or(0.0),
                    error: None,
                })
            }
        }
    }
}

impl Drop for ExternalBackend {
    fn drop(&mut self) {
        if let Some(child) = &self.child {
            let mut child = child.lock().unwrap();
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

//! Client side of the line-delimited JSON scoring protocol.
//!
//! The scorer speaks first with a handshake line
//! `{"hello": name, "version": v, "max_batch": m}`. The client then sends
//! requests `{"id":u64,"query":str,"passage":str}`, one per line, and reads
//! back `{"id":u64,"score":f64}` lines. Within a batch responses may come in
//! any order. Ids are assigned by the client and increase strictly over the
//! life of a connection.

use std::collections::HashMap;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{PassageScorer, Result, ScoreInput, ScorerError};
use crate::corpus::Query;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScorerInfo {
    pub name: String,
    pub version: String,
    pub max_batch: usize,
}

#[derive(Serialize)]
struct Request<'a> {
    id: u64,
    query: &'a str,
    passage: &'a str,
}

#[derive(Deserialize)]
struct Response {
    id: u64,
    #[serde(default)]
    score: Option<f64>,
    #[serde(default)]
    error: Option<String>,
}

pub struct ExternalScorer {
    info: ScorerInfo,
    writer: Box<dyn Write + Send>,
    lines: Receiver<io::Result<String>>,
    child: Option<Child>,
    next_id: u64,
    timeout: Duration,
    broken: Option<String>,
}

impl std::fmt::Debug for ExternalScorer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalScorer")
            .field("info", &self.info)
            .field("next_id", &self.next_id)
            .field("broken", &self.broken)
            .finish()
    }
}

fn spawn_line_reader<R: Read + Send + 'static>(reader: R) -> Receiver<io::Result<String>> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut reader = BufReader::new(reader);
        loop {
            let mut line = String::new();
            match reader.read_line(&mut line) {
                Ok(0) => break,
                Ok(_) => {
                    let trimmed = line.trim_end_matches(['\n', '\r']).to_string();
                    if tx.send(Ok(trimmed)).is_err() {
                        break;
                    }
                }
                Err(e) => {
                    let _ = tx.send(Err(e));
                    break;
                }
            }
        }
    });
    rx
}

fn parse_handshake(line: &str) -> Result<ScorerInfo> {
    let bad = || ScorerError::ProtocolViolation(format!("bad handshake line {line:?}"));
    let value: Value = serde_json::from_str(line).map_err(|_| bad())?;
    let name = value.get("hello").and_then(Value::as_str).ok_or_else(bad)?;
    let version = match value.get("version") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        _ => return Err(bad()),
    };
    let max_batch = value
        .get("max_batch")
        .and_then(Value::as_u64)
        .filter(|&m| m >= 1)
        .ok_or_else(bad)?;
    Ok(ScorerInfo {
        name: name.to_string(),
        version,
        max_batch: usize::try_from(max_batch).unwrap_or(usize::MAX),
    })
}

impl ExternalScorer {
    /// Runs `cmd` through `sh -c` and talks to it over its standard streams.
    pub fn spawn(cmd: &str, timeout: Duration) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(format!("exec {cmd}"))
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| ScorerError::ScorerUnavailable(format!("cannot start {cmd:?}: {e}")))?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        let mut scorer = Self::from_streams(stdout, stdin, timeout);
        match &mut scorer {
            Ok(s) => s.child = Some(child),
            Err(_) => {
                let _ = child.kill();
                let _ = child.wait();
            }
        }
        scorer
    }

    pub fn connect(addr: &str, timeout: Duration) -> Result<Self> {
        let unavailable = |e: io::Error| ScorerError::ScorerUnavailable(format!("{addr}: {e}"));
        let target = addr
            .to_socket_addrs()
            .map_err(unavailable)?
            .next()
            .ok_or_else(|| ScorerError::ScorerUnavailable(format!("{addr}: no address")))?;
        let stream = TcpStream::connect_timeout(&target, timeout).map_err(unavailable)?;
        let _ = stream.set_nodelay(true);
        let reader = stream.try_clone().map_err(unavailable)?;
        Self::from_streams(reader, stream, timeout)
    }

    /// Performs the handshake over an arbitrary pair of streams.
    pub fn from_streams<R, W>(reader: R, writer: W, timeout: Duration) -> Result<Self>
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        let lines = spawn_line_reader(reader);
        let first = match lines.recv_timeout(timeout) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => return Err(ScorerError::ProtocolViolation(e.to_string())),
            Err(RecvTimeoutError::Timeout) => return Err(ScorerError::Timeout(timeout)),
            Err(RecvTimeoutError::Disconnected) => {
                return Err(ScorerError::ScorerUnavailable(
                    "scorer closed its output before the handshake".into(),
                ))
            }
        };
        let info = parse_handshake(&first)?;
        Ok(ExternalScorer {
            info,
            writer: Box::new(io::BufWriter::new(writer)),
            lines,
            child: None,
            next_id: 1,
            timeout,
            broken: None,
        })
    }

    pub fn info(&self) -> &ScorerInfo {
        &self.info
    }

    fn fail<T>(&mut self, err: ScorerError) -> Result<T> {
        self.broken = Some(err.to_string());
        Err(err)
    }

    fn send_batch(&mut self, query: &str, passages: &[ScoreInput<'_>]) -> Result<Vec<f64>> {
        let first_id = self.next_id;
        let mut buf = Vec::new();
        for (i, p) in passages.iter().enumerate() {
            let request = Request {
                id: first_id + i as u64,
                query,
                passage: p.text,
            };
            serde_json::to_writer(&mut buf, &request).expect("request serializes");
            buf.push(b'\n');
        }
        self.next_id += passages.len() as u64;
        if let Err(e) = self
            .writer
            .write_all(&buf)
            .and_then(|_| self.writer.flush())
        {
            return self.fail(ScorerError::ScorerUnavailable(format!("write failed: {e}")));
        }

        let mut pending: HashMap<u64, usize> = (0..passages.len())
            .map(|i| (first_id + i as u64, i))
            .collect();
        let mut scores = vec![f64::NAN; passages.len()];
        let deadline = Instant::now() + self.timeout;
        while !pending.is_empty() {
            let remaining = deadline.saturating_duration_since(Instant::now());
            let line = match self.lines.recv_timeout(remaining) {
                Ok(Ok(line)) => line,
                Ok(Err(e)) => return self.fail(ScorerError::ProtocolViolation(e.to_string())),
                Err(RecvTimeoutError::Timeout) => {
                    let t = self.timeout;
                    return self.fail(ScorerError::Timeout(t));
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return self.fail(ScorerError::ScorerUnavailable(
                        "scorer closed its output".into(),
                    ))
                }
            };
            let response: Response = match serde_json::from_str(&line) {
                Ok(r) => r,
                Err(_) => {
                    return self.fail(ScorerError::ProtocolViolation(format!(
                        "unparseable response {line:?}"
                    )))
                }
            };
            let Some(slot) = pending.remove(&response.id) else {
                return self.fail(ScorerError::ProtocolViolation(format!(
                    "unexpected response id {}",
                    response.id
                )));
            };
            if let Some(err) = response.error {
                return self.fail(ScorerError::ProtocolViolation(format!(
                    "scorer rejected request {}: {err}",
                    response.id
                )));
            }
            match response.score {
                Some(s) if s.is_finite() && (0.0..=1.0).contains(&s) => scores[slot] = s,
                other => {
                    return self.fail(ScorerError::ProtocolViolation(format!(
                        "score {other:?} for request {} is not in [0,1]",
                        response.id
                    )))
                }
            }
        }
        Ok(scores)
    }
}

impl PassageScorer for ExternalScorer {
    fn score_batch(&mut self, query: &Query, passages: &[ScoreInput<'_>]) -> Result<Vec<f64>> {
        if let Some(reason) = &self.broken {
            return Err(ScorerError::ScorerUnavailable(format!(
                "connection unusable after earlier failure: {reason}"
            )));
        }
        let mut out = Vec::with_capacity(passages.len());
        for chunk in passages.chunks(self.info.max_batch) {
            out.extend(self.send_batch(&query.text, chunk)?);
        }
        Ok(out)
    }
}

impl Drop for ExternalScorer {
    fn drop(&mut self) {
        let _ = self.writer.flush();
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

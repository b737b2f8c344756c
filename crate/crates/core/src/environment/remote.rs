//! Client for external scoring services.
//!
//! Wire format: one JSON object per line in each direction.
//!
//! ```text
//! -> {"op":"hello"}
//! <- {"name":"...","domains":["spatial"]}
//! -> {"op":"score","id":1,"domain":"spatial","width":W,"height":H,"data":"<base64>"}
//! <- {"id":1,"cover_confidence":0.73}
//! ```
//!
//! `data` is the base64 (standard alphabet, padded) encoding of the row-major
//! matrix as little-endian `f32`. A response carrying `"error"`, a mismatched
//! id or an out-of-range confidence is a protocol violation.

use std::io::{self, BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::Serialize;
use serde_json::Value;

use crate::media::{Domain, PixelMatrix};

use super::{EnvError, EnvScore, Environment};

pub const SCORE_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RemoteSpec {
    /// Shell command whose stdin/stdout carry the protocol.
    Exec(String),
    /// `host:port` of a listening service.
    Tcp(String),
}

impl FromStr for RemoteSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(cmd) = s.strip_prefix("exec:") {
            Ok(Self::Exec(cmd.to_string()))
        } else if let Some(addr) = s.strip_prefix("tcp:") {
            Ok(Self::Tcp(addr.to_string()))
        } else {
            Err(format!("remote environment must be exec:<cmd> or tcp:<host:port>, got {s:?}"))
        }
    }
}

#[derive(Serialize)]
struct HelloRequest {
    op: &'static str,
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    op: &'static str,
    id: u64,
    domain: Domain,
    width: u32,
    height: u32,
    data: &'a str,
}

/// Base64 of the image's row-major little-endian `f32` samples.
pub fn encode_payload(img: &PixelMatrix) -> String {
    let mut raw = Vec::with_capacity(img.len() * 4);
    for v in img.data() {
        raw.extend_from_slice(&v.to_le_bytes());
    }
    STANDARD.encode(raw)
}

pub fn decode_payload(data: &str, width: usize, height: usize, domain: Domain) -> Result<PixelMatrix, EnvError> {
    let raw = STANDARD.decode(data).map_err(|e| EnvError::Protocol(format!("bad base64: {e}")))?;
    if raw.len() != width * height * 4 {
        return Err(EnvError::Protocol(format!(
            "payload has {} bytes, expected {}",
            raw.len(),
            width * height * 4
        )));
    }
    let values = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    PixelMatrix::new(width, height, domain, values).map_err(|e| EnvError::Protocol(e.to_string()))
}

/// One `score` request line, without the trailing newline.
pub fn score_request_line(id: u64, img: &PixelMatrix) -> String {
    let data = encode_payload(img);
    serde_json::to_string(&ScoreRequest {
        op: "score",
        id,
        domain: img.domain(),
        width: img.width() as u32,
        height: img.height() as u32,
        data: &data,
    })
    .expect("request serializes")
}

pub struct RemoteEnv {
    writer: Box<dyn Write + Send>,
    lines: Receiver<io::Result<String>>,
    child: Option<Child>,
    next_id: u64,
    timeout: Duration,
    name: String,
    domains: Vec<Domain>,
}

impl RemoteEnv {
    pub fn connect(spec: &RemoteSpec) -> Result<Self, EnvError> {
        Self::connect_with_timeout(spec, SCORE_TIMEOUT)
    }

    pub fn connect_with_timeout(spec: &RemoteSpec, timeout: Duration) -> Result<Self, EnvError> {
        let (writer, reader, child): (Box<dyn Write + Send>, Box<dyn io::Read + Send>, Option<Child>) = match spec {
            RemoteSpec::Exec(cmd) => {
                let mut child = Command::new("sh")
                    .arg("-c")
                    .arg(cmd)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .spawn()?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                (Box::new(stdin), Box::new(stdout), Some(child))
            }
            RemoteSpec::Tcp(addr) => {
                let stream = TcpStream::connect(addr)?;
                stream.set_nodelay(true)?;
                let read_half = stream.try_clone()?;
                (Box::new(stream), Box::new(read_half), None)
            }
        };
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(reader).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        let mut env = Self {
            writer,
            lines: rx,
            child,
            next_id: 1,
            timeout,
            name: String::new(),
            domains: Vec::new(),
        };
        env.hello()?;
        Ok(env)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn domains(&self) -> &[Domain] {
        &self.domains
    }

    fn send(&mut self, line: &str) -> Result<(), EnvError> {
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()?;
        Ok(())
    }

    fn receive(&mut self) -> Result<Value, EnvError> {
        let line = match self.lines.recv_timeout(self.timeout) {
            Ok(line) => line?,
            Err(RecvTimeoutError::Timeout) => return Err(EnvError::Timeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => {
                return Err(EnvError::Remote("connection closed".into()));
            }
        };
        serde_json::from_str(&line).map_err(|e| EnvError::Protocol(format!("malformed response {line:?}: {e}")))
    }

    fn hello(&mut self) -> Result<(), EnvError> {
        self.send(&serde_json::to_string(&HelloRequest { op: "hello" }).expect("hello serializes"))?;
        let reply = self.receive()?;
        let name = reply
            .get("name")
            .and_then(Value::as_str)
            .ok_or_else(|| EnvError::Protocol("hello response lacks a name".into()))?;
        let domains = reply
            .get("domains")
            .and_then(Value::as_array)
            .ok_or_else(|| EnvError::Protocol("hello response lacks domains".into()))?;
        self.name = name.to_string();
        self.domains = domains
            .iter()
            .filter_map(|d| match d.as_str() {
                Some("spatial") => Some(Domain::Spatial),
                Some("jpeg") => Some(Domain::Jpeg),
                _ => None,
            })
            .collect();
        Ok(())
    }

    pub fn score(&mut self, img: &PixelMatrix) -> Result<EnvScore, EnvError> {
        if !self.domains.contains(&img.domain()) {
            return Err(EnvError::UnscorableDomain(img.domain()));
        }
        let id = self.next_id;
        self.next_id += 1;
        self.send(&score_request_line(id, img))?;
        let reply = self.receive()?;
        if let Some(err) = reply.get("error") {
            return Err(EnvError::Protocol(format!("server error: {err}")));
        }
        match reply.get("id").and_then(Value::as_u64) {
            Some(got) if got == id => {}
            other => return Err(EnvError::Protocol(format!("expected id {id}, got {other:?}"))),
        }
        let value = reply
            .get("cover_confidence")
            .and_then(Value::as_f64)
            .ok_or_else(|| EnvError::Protocol("response lacks cover_confidence".into()))?;
        EnvScore::new(value).map_err(|_| EnvError::Protocol(format!("confidence {value} outside [0, 1]")))
    }
}

impl Environment for RemoteEnv {
    fn cover_confidence(&mut self, img: &PixelMatrix) -> Result<EnvScore, EnvError> {
        self.score(img)
    }
}

impl Drop for RemoteEnv {
    fn drop(&mut self) {
        if let Some(child) = self.child.as_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

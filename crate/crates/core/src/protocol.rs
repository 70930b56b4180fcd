//! Newline-delimited JSON wire protocol exposing an [`Environment`] to other
//! processes, plus a matching client.
//!
//! On connect the server writes `{"protocol":"bedwarden-env-1"}`. Each request
//! line is an object with a `cmd` field (`spec`, `reset`, `step`, `render`,
//! `close`) and gets exactly one response line. Failures produce
//! `{"error":"..."}` and leave the session open.

use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::thread;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::env::{ActionIndex, EnvSpec, Environment, Info, Observation, StepResult};

pub const PROTOCOL_VERSION: &str = "bedwarden-env-1";

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("expected protocol {PROTOCOL_VERSION:?}, server announced {0:?}")]
    Version(String),
    #[error("server error: {0}")]
    Remote(String),
    #[error("connection closed")]
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "lowercase")]
pub enum Request {
    Spec,
    Reset {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Step {
        action: usize,
    },
    Render,
    Close,
}

#[derive(Serialize)]
struct ObsReply<'a> {
    obs: &'a [f64],
}

#[derive(Serialize, Deserialize)]
struct StepReply {
    obs: Vec<f64>,
    reward: f64,
    terminal: bool,
    info: Info,
}

fn error_line(message: impl std::fmt::Display) -> String {
    json!({ "error": message.to_string() }).to_string()
}

/// Serves one session over `reader`/`writer` until `close` or end of input.
pub fn serve_session<E, R, W>(env: &mut E, reader: R, mut writer: W) -> io::Result<()>
where
    E: Environment + ?Sized,
    R: BufRead,
    W: Write,
{
    writeln!(writer, "{}", json!({ "protocol": PROTOCOL_VERSION }))?;
    writer.flush()?;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (reply, close) = handle_line(env, &line);
        writeln!(writer, "{reply}")?;
        writer.flush()?;
        if close {
            break;
        }
    }
    Ok(())
}

/// Response line for one request line, and whether the session should end.
pub fn handle_line<E: Environment + ?Sized>(env: &mut E, line: &str) -> (String, bool) {
    let request: Request = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(e) => return (error_line(format!("malformed request: {e}")), false),
    };
    match request {
        Request::Spec => (
            serde_json::to_string(env.spec()).expect("spec serialises"),
            false,
        ),
        Request::Reset { seed } => {
            let obs = env.reset(seed);
            (
                to_line(&ObsReply {
                    obs: obs.as_slice(),
                }),
                false,
            )
        }
        Request::Step { action } => match env.step(ActionIndex(action)) {
            Ok(r) => (
                to_line(&StepReply {
                    obs: r.observation.0,
                    reward: r.reward,
                    terminal: r.terminal,
                    info: r.info,
                }),
                false,
            ),
            Err(e) => (error_line(e), false),
        },
        Request::Render => (json!({ "render": env.render() }).to_string(), false),
        Request::Close => (json!({ "closed": true }).to_string(), true),
    }
}

fn to_line<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("reply serialises")
}

/// Serves stdin/stdout as a single session.
pub fn serve_stdio<E: Environment + ?Sized>(env: &mut E) -> io::Result<()> {
    let stdin = io::stdin();
    let stdout = io::stdout();
    serve_session(env, stdin.lock(), BufWriter::new(stdout.lock()))
}

/// Accepts connections forever, one thread and one fresh environment per
/// connection.
pub fn serve_tcp<E, F>(listener: TcpListener, make_env: F) -> io::Result<()>
where
    E: Environment + Send + 'static,
    F: Fn() -> E + Send + Sync + 'static,
{
    let make_env = std::sync::Arc::new(make_env);
    for stream in listener.incoming() {
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                log::warn!("accept failed: {e}");
                continue;
            }
        };
        let make_env = make_env.clone();
        thread::spawn(move || {
            let peer = stream.peer_addr().ok();
            let result = stream.try_clone().and_then(|read_half| {
                let mut env = make_env();
                serve_session(&mut env, BufReader::new(read_half), BufWriter::new(stream))
            });
            if let Err(e) = result {
                log::warn!("session {peer:?} ended with error: {e}");
            }
        });
    }
    Ok(())
}

/// Client side of the protocol.
pub struct RemoteEnv<R: BufRead, W: Write> {
    reader: R,
    writer: W,
    spec: EnvSpec,
}

impl RemoteEnv<BufReader<TcpStream>, BufWriter<TcpStream>> {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, ProtocolError> {
        let stream = TcpStream::connect(addr)?;
        let read_half = stream.try_clone()?;
        Self::handshake(BufReader::new(read_half), BufWriter::new(stream))
    }
}

impl<R: BufRead, W: Write> RemoteEnv<R, W> {
    /// Consumes the version announcement and caches the spec.
    pub fn handshake(mut reader: R, writer: W) -> Result<Self, ProtocolError> {
        let hello = read_value(&mut reader)?;
        let version = hello
            .get("protocol")
            .and_then(Value::as_str)
            .unwrap_or_default();
        if version != PROTOCOL_VERSION {
            return Err(ProtocolError::Version(version.to_string()));
        }
        let mut env = Self {
            reader,
            writer,
            spec: EnvSpec::new(vec![], 0),
        };
        let spec = env.call(&Request::Spec)?;
        env.spec =
            serde_json::from_value(spec).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
        Ok(env)
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn call(&mut self, request: &Request) -> Result<Value, ProtocolError> {
        writeln!(self.writer, "{}", to_line(request))?;
        self.writer.flush()?;
        let reply = read_value(&mut self.reader)?;
        if let Some(msg) = reply.get("error").and_then(Value::as_str) {
            return Err(ProtocolError::Remote(msg.to_string()));
        }
        Ok(reply)
    }

    pub fn reset(&mut self, seed: Option<u64>) -> Result<Observation, ProtocolError> {
        let reply = self.call(&Request::Reset { seed })?;
        let obs = reply
            .get("obs")
            .cloned()
            .ok_or_else(|| ProtocolError::Malformed("reset reply lacks obs".into()))?;
        serde_json::from_value(obs).map_err(|e| ProtocolError::Malformed(e.to_string()))
    }

    pub fn step(&mut self, action: ActionIndex) -> Result<StepResult, ProtocolError> {
        let reply = self.call(&Request::Step { action: action.0 })?;
        let r: StepReply =
            serde_json::from_value(reply).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
        Ok(StepResult {
            observation: Observation(r.obs),
            reward: r.reward,
            terminal: r.terminal,
            info: r.info,
        })
    }

    pub fn render(&mut self) -> Result<String, ProtocolError> {
        let reply = self.call(&Request::Render)?;
        reply
            .get("render")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| ProtocolError::Malformed("render reply lacks text".into()))
    }

    pub fn close(mut self) -> Result<(), ProtocolError> {
        self.call(&Request::Close).map(|_| ())
    }
}

fn read_value<R: BufRead>(reader: &mut R) -> Result<Value, ProtocolError> {
    let mut line = String::new();
    if reader.read_line(&mut line)? == 0 {
        return Err(ProtocolError::Closed);
    }
    serde_json::from_str(&line).map_err(|e| ProtocolError::Malformed(e.to_string()))
}

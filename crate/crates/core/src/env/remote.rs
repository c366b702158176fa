//! JSON-lines adapter for remote environments.
//!
//! One message per line, UTF-8, over a child process's stdio or a TCP
//! stream. Values never contain raw newlines (JSON escaping handles that)
//! and unknown fields are ignored on both sides.
//!
//! ```text
//! -> {"cmd":"hello"}                    <- {"hello":{"env":"<name>","deterministic":true}}
//! -> {"cmd":"reset","config":{...}}     <- {"observation":"...","done":false}
//! -> {"cmd":"step","action":"..."}      <- {"observation":"...","reward":0.0,"done":false,"valid_action":true}
//! -> {"cmd":"close"}                    <- {"ok":true}
//! ```
//!
//! The handshake carries the remote's determinism declaration. Rollback
//! restoration is reset-and-replay, so the episode controller refuses to
//! roll back against remotes that declare `deterministic: false`.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::env::{EnvObservation, Environment};
use crate::error::EnvError;

const TCP_READ_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Serialize)]
#[serde(tag = "cmd", rename_all = "lowercase")]
enum Request<'a> {
    Hello,
    Reset { config: &'a serde_json::Value },
    Step { action: &'a str },
    Close,
}

#[derive(Debug, Deserialize)]
struct HelloReply {
    hello: HelloBody,
}

#[derive(Debug, Deserialize)]
struct HelloBody {
    env: String,
    deterministic: bool,
}

#[derive(Debug, Deserialize)]
struct ResetReply {
    observation: String,
}

#[derive(Debug, Deserialize)]
struct StepReply {
    observation: String,
    #[serde(default)]
    reward: f64,
    #[serde(default)]
    done: bool,
    #[serde(default = "default_true")]
    valid_action: bool,
}

fn default_true() -> bool {
    true
}

/// Client side of the wire protocol; implements [`Environment`].
pub struct RemoteEnv {
    reader: BufReader<Box<dyn Read + Send>>,
    writer: Box<dyn Write + Send>,
    child: Option<Child>,
    env_name: String,
    deterministic: bool,
    lines_received: u64,
}

impl RemoteEnv {
    /// Connect over TCP and perform the handshake.
    pub fn connect_tcp(addr: &str) -> Result<Self, EnvError> {
        let stream = TcpStream::connect(addr)
            .map_err(|e| EnvError::Transport(format!("connect {addr}: {e}")))?;
        stream
            .set_read_timeout(Some(TCP_READ_TIMEOUT))
            .map_err(|e| EnvError::Transport(e.to_string()))?;
        let reader = stream
            .try_clone()
            .map_err(|e| EnvError::Transport(e.to_string()))?;
        Self::from_stream(Box::new(reader), Box::new(stream), None)
    }

    /// Spawn `program args...` and speak the protocol over its stdio.
    pub fn spawn(program: &str, args: &[String]) -> Result<Self, EnvError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| EnvError::Transport(format!("spawn {program}: {e}")))?;
        let stdout = child
            .stdout
            .take()
            .ok_or_else(|| EnvError::Transport("child stdout unavailable".into()))?;
        let stdin = child
            .stdin
            .take()
            .ok_or_else(|| EnvError::Transport("child stdin unavailable".into()))?;
        Self::from_stream(Box::new(stdout), Box::new(stdin), Some(child))
    }

    /// Wrap an already-open byte stream and perform the handshake.
    pub fn from_stream(
        reader: Box<dyn Read + Send>,
        writer: Box<dyn Write + Send>,
        child: Option<Child>,
    ) -> Result<Self, EnvError> {
        let mut env = Self {
            reader: BufReader::new(reader),
            writer,
            child,
            env_name: String::new(),
            deterministic: false,
            lines_received: 0,
        };
        env.send(&Request::Hello)?;
        let reply: HelloReply = env.receive()?;
        env.env_name = reply.hello.env;
        env.deterministic = reply.hello.deterministic;
        Ok(env)
    }

    pub fn env_name(&self) -> &str {
        &self.env_name
    }

    fn send<T: Serialize>(&mut self, message: &T) -> Result<(), EnvError> {
        let line = serde_json::to_string(message)
            .map_err(|e| EnvError::Transport(format!("encode: {e}")))?;
        self.writer
            .write_all(line.as_bytes())
            .and_then(|_| self.writer.write_all(b"\n"))
            .and_then(|_| self.writer.flush())
            .map_err(|e| EnvError::Transport(format!("write: {e}")))
    }

    fn receive<T: for<'de> Deserialize<'de>>(&mut self) -> Result<T, EnvError> {
        let mut line = String::new();
        let read = self
            .reader
            .read_line(&mut line)
            .map_err(|e| EnvError::Transport(format!("read: {e}")))?;
        if read == 0 {
            return Err(EnvError::Transport("connection closed by remote".into()));
        }
        self.lines_received += 1;
        serde_json::from_str(line.trim_end()).map_err(|e| EnvError::ProtocolViolation {
            line: self.lines_received,
            message: e.to_string(),
        })
    }
}

impl Environment for RemoteEnv {
    fn reset(&mut self, config: &serde_json::Value) -> Result<String, EnvError> {
        self.send(&Request::Reset { config })?;
        let reply: ResetReply = self.receive()?;
        Ok(reply.observation)
    }

    fn step(&mut self, action: &str) -> Result<EnvObservation, EnvError> {
        self.send(&Request::Step { action })?;
        let reply: StepReply = self.receive()?;
        Ok(EnvObservation {
            text: reply.observation,
            reward: reply.reward,
            done: reply.done,
            valid_action: reply.valid_action,
        })
    }

    fn is_deterministic(&self) -> bool {
        self.deterministic
    }
}

impl Drop for RemoteEnv {
    fn drop(&mut self) {
        // Await the close acknowledgement so the peer's final write lands.
        if self.send(&Request::Close).is_ok() {
            let _: Result<serde_json::Value, _> = self.receive();
        }
        if let Some(child) = self.child.as_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Serve `env` over the wire protocol until the peer sends `close` or the
/// stream ends. This is the loopback server used by tests and by the
/// `serve-env-example` CLI command.
pub fn serve_env<E: Environment>(
    env: &mut E,
    name: &str,
    reader: impl Read,
    writer: &mut impl Write,
) -> Result<(), EnvError> {
    let reader = BufReader::new(reader);
    for line in reader.lines() {
        let line = line.map_err(|e| EnvError::Transport(format!("read: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let request: serde_json::Value = match serde_json::from_str(&line) {
            Ok(value) => value,
            Err(e) => {
                write_line(writer, &serde_json::json!({"error": format!("invalid json: {e}")}))?;
                continue;
            }
        };
        let reply = match request.get("cmd").and_then(|c| c.as_str()) {
            Some("hello") => {
                serde_json::json!({"hello": {"env": name, "deterministic": env.is_deterministic()}})
            }
            Some("reset") => {
                let config = request.get("config").cloned().unwrap_or(serde_json::Value::Null);
                match env.reset(&config) {
                    Ok(observation) => {
                        serde_json::json!({"observation": observation, "done": false})
                    }
                    Err(e) => serde_json::json!({"error": e.to_string()}),
                }
            }
            Some("step") => {
                let action = request.get("action").and_then(|a| a.as_str()).unwrap_or("");
                match env.step(action) {
                    Ok(obs) => serde_json::json!({
                        "observation": obs.text,
                        "reward": obs.reward,
                        "done": obs.done,
                        "valid_action": obs.valid_action,
                    }),
                    Err(e) => serde_json::json!({"error": e.to_string()}),
                }
            }
            Some("close") => {
                write_line(writer, &serde_json::json!({"ok": true}))?;
                return Ok(());
            }
            other => serde_json::json!({"error": format!("unsupported cmd {other:?}")}),
        };
        write_line(writer, &reply)?;
    }
    Ok(())
}

fn write_line(writer: &mut impl Write, value: &serde_json::Value) -> Result<(), EnvError> {
    let line = serde_json::to_string(value)
        .map_err(|e| EnvError::Transport(format!("encode: {e}")))?;
    writer
        .write_all(line.as_bytes())
        .and_then(|_| writer.write_all(b"\n"))
        .and_then(|_| writer.flush())
        .map_err(|e| EnvError::Transport(format!("write: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Game24Env;
    use std::net::TcpListener;

    fn spawn_loopback() -> (std::thread::JoinHandle<()>, String) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        let handle = std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let reader = stream.try_clone().unwrap();
            let mut writer = stream;
            let mut env = Game24Env::new();
            serve_env(&mut env, "game24", reader, &mut writer).unwrap();
        });
        (handle, addr)
    }

    #[test]
    fn loopback_round_trip() {
        let (handle, addr) = spawn_loopback();
        let mut remote = RemoteEnv::connect_tcp(&addr).unwrap();
        assert_eq!(remote.env_name(), "game24");
        assert!(remote.is_deterministic());

        let obs0 = remote
            .reset(&serde_json::json!({"numbers": [1, 2, 10, 13]}))
            .unwrap();
        assert_eq!(obs0, "# Here is the task:\nInput: 1 2 10 13");

        let obs = remote.step("13 - 10 = 3").unwrap();
        assert_eq!(obs.text, "numbers left: 1 2 3");
        assert!(obs.valid_action);

        drop(remote);
        handle.join().unwrap();
    }

    #[test]
    fn malformed_reply_names_the_line() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        let handle = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut buf = String::new();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            reader.read_line(&mut buf).unwrap();
            stream
                .write_all(b"{\"hello\":{\"env\":\"x\",\"deterministic\":true}}\n")
                .unwrap();
            buf.clear();
            reader.read_line(&mut buf).unwrap();
            stream.write_all(b"this is not json\n").unwrap();
        });
        let mut remote = RemoteEnv::connect_tcp(&addr).unwrap();
        let err = remote.reset(&serde_json::Value::Null).unwrap_err();
        match err {
            EnvError::ProtocolViolation { line, .. } => assert_eq!(line, 2),
            other => panic!("expected protocol violation, got {other}"),
        }
        handle.join().unwrap();
    }
}

//! Line-delimited JSON messages over TCP. See docs/protocol.md.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;

use serde::{Deserialize, Serialize};

use crate::environment::{EpisodeConfig, EpisodeResult};
use crate::error::{Error, Result};

pub const PROTOCOL_VERSION: &str = "musclerun-wire/1";
/// Longest accepted message line, bytes.
pub const MAX_LINE: usize = 1 << 20;

/// Error codes carried by `error` messages.
pub mod codes {
    pub const AUTH: &str = "auth_error";
    pub const BUDGET: &str = "budget_exhausted";
    pub const PROTOCOL: &str = "protocol_error";
    pub const TIMEOUT: &str = "timeout";
    pub const VERSION: &str = "version_mismatch";
    pub const INTERNAL: &str = "internal_error";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecSummary {
    pub name: String,
    pub episodes: usize,
    pub difficulty: u8,
    pub max_obstacles: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Message {
    /// Client opens with `token`; the server answers with `spec` and the
    /// remaining budget.
    Hello {
        version: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        token: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        spec: Option<SpecSummary>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        budget_remaining: Option<u32>,
    },
    Reset {
        episode: usize,
        config: EpisodeConfig,
    },
    Observation {
        #[serde(with = "lossless")]
        observation: Vec<f64>,
    },
    Action {
        #[serde(with = "lossless")]
        action: Vec<f64>,
    },
    StepResult {
        #[serde(with = "lossless")]
        observation: Vec<f64>,
        reward: f64,
        done: bool,
    },
    EpisodeDone {
        episode: usize,
        result: EpisodeResult,
    },
    EvaluationDone {
        rewards: Vec<f64>,
        score: f64,
    },
    Error {
        code: String,
        message: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        offending_seq: Option<u64>,
    },
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Hello { .. } => "hello",
            Message::Reset { .. } => "reset",
            Message::Observation { .. } => "observation",
            Message::Action { .. } => "action",
            Message::StepResult { .. } => "step_result",
            Message::EpisodeDone { .. } => "episode_done",
            Message::EvaluationDone { .. } => "evaluation_done",
            Message::Error { .. } => "error",
        }
    }

    pub fn error(code: &str, message: impl Into<String>, offending_seq: Option<u64>) -> Self {
        Message::Error { code: code.into(), message: message.into(), offending_seq }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub seq: u64,
    #[serde(flatten)]
    pub message: Message,
}

impl Envelope {
    pub fn encode(&self) -> String {
        let mut s = serde_json::to_string(self).expect("messages always serialize");
        s.push('\n');
        s
    }

    pub fn decode(line: &str) -> Result<Self> {
        Ok(serde_json::from_str(line.trim_end_matches(['\r', '\n']))?)
    }
}

/// Float vectors as JSON numbers in shortest round-trip form; non-finite
/// entries become the strings "NaN", "inf" and "-inf".
mod lossless {
    use serde::de::Error as _;
    use serde::ser::SerializeSeq;
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Float {
        Number(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(v.len()))?;
        for x in v {
            if x.is_finite() {
                seq.serialize_element(x)?;
            } else if x.is_nan() {
                seq.serialize_element("NaN")?;
            } else if *x > 0.0 {
                seq.serialize_element("inf")?;
            } else {
                seq.serialize_element("-inf")?;
            }
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<Float>::deserialize(d)?
            .into_iter()
            .map(|f| match f {
                Float::Number(x) => Ok(x),
                Float::Text(t) => match t.as_str() {
                    "NaN" => Ok(f64::NAN),
                    "inf" => Ok(f64::INFINITY),
                    "-inf" => Ok(f64::NEG_INFINITY),
                    other => Err(D::Error::custom(format!("\"{other}\" is not a number"))),
                },
            })
            .collect()
    }
}

/// Why a receive failed.
#[derive(Debug)]
pub enum RecvError {
    Closed,
    TimedOut,
    /// The line could not be decoded; carries the sequence number if one was readable.
    Malformed {
        seq: Option<u64>,
        reason: String,
    },
    Io(std::io::Error),
}

/// One side of a session: numbers outgoing messages and checks that
/// incoming sequence numbers strictly increase.
pub struct Channel {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    next_seq: u64,
    last_seen: Option<u64>,
}

impl Channel {
    pub fn new(stream: TcpStream) -> Result<Self> {
        stream.set_nodelay(true)?;
        Ok(Self { reader: BufReader::new(stream.try_clone()?), writer: stream, next_seq: 1, last_seen: None })
    }

    pub fn stream(&self) -> &TcpStream {
        &self.writer
    }

    pub fn send(&mut self, message: Message) -> Result<u64> {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.writer.write_all(Envelope { seq, message }.encode().as_bytes())?;
        self.writer.flush()?;
        Ok(seq)
    }

    pub fn recv(&mut self) -> std::result::Result<Envelope, RecvError> {
        let mut line = String::new();
        let n = (&mut self.reader).take(MAX_LINE as u64 + 1).read_line(&mut line).map_err(|e| match e.kind() {
            std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut => RecvError::TimedOut,
            _ => RecvError::Io(e),
        })?;
        if n == 0 {
            return Err(RecvError::Closed);
        }
        if n > MAX_LINE || !line.ends_with('\n') {
            return Err(RecvError::Malformed { seq: None, reason: "message line too long or truncated".into() });
        }
        let env = Envelope::decode(&line).map_err(|e| RecvError::Malformed {
            seq: serde_json::from_str::<serde_json::Value>(&line).ok().and_then(|v| v.get("seq")?.as_u64()),
            reason: e.to_string(),
        })?;
        if self.last_seen.is_some_and(|last| env.seq <= last) {
            return Err(RecvError::Malformed {
                seq: Some(env.seq),
                reason: format!("sequence number {} does not increase", env.seq),
            });
        }
        self.last_seen = Some(env.seq);
        Ok(env)
    }

    /// Receive for clients: remote errors and transport failures become [`Error`].
    pub fn expect(&mut self) -> Result<Message> {
        match self.recv() {
            Ok(Envelope { message: Message::Error { code, message, .. }, .. }) => Err(Error::Remote { code, message }),
            Ok(env) => Ok(env.message),
            Err(RecvError::Closed) => Err(Error::ProtocolMisuse("server closed the connection".into())),
            Err(RecvError::TimedOut) => Err(Error::Remote { code: codes::TIMEOUT.into(), message: "no reply".into() }),
            Err(RecvError::Malformed { reason, .. }) => Err(Error::Parse(reason)),
            Err(RecvError::Io(e)) => Err(e.into()),
        }
    }
}

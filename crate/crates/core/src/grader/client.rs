use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::environment::{EpisodeResult, Observation, Policy, OBSERVATION_SIZE};
use crate::error::{Error, Result};

use super::protocol::{Channel, Message, SpecSummary, PROTOCOL_VERSION};

/// Environment variable holding the default submission token.
pub const TOKEN_ENV: &str = "MUSCLERUN_TOKEN";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteEvaluation {
    pub spec: SpecSummary,
    pub results: Vec<EpisodeResult>,
    /// Per-seed rewards and their mean, as reported by the server.
    pub rewards: Vec<f64>,
    pub score: f64,
}

fn unexpected(m: &Message, wanted: &str) -> Error {
    Error::ProtocolMisuse(format!("expected {wanted}, server sent {}", m.kind()))
}

fn observation(v: Vec<f64>) -> Result<Observation> {
    v.try_into()
        .map_err(|v: Vec<f64>| Error::Parse(format!("observation has {} values, expected {OBSERVATION_SIZE}", v.len())))
}

/// Runs a full remote evaluation. A dropped connection aborts the
/// evaluation; the server has already charged the budget.
pub fn client_run(addr: impl ToSocketAddrs, token: &str, policy: &mut dyn Policy) -> Result<RemoteEvaluation> {
    let stream = TcpStream::connect(addr)?;
    stream.set_read_timeout(Some(Duration::from_secs(120)))?;
    let mut ch = Channel::new(stream)?;
    ch.send(Message::Hello {
        version: PROTOCOL_VERSION.into(),
        token: Some(token.into()),
        spec: None,
        budget_remaining: None,
    })?;
    let spec = match ch.expect()? {
        Message::Hello { spec: Some(spec), budget_remaining, .. } => {
            log::info!("evaluating on \"{}\", {} submissions left today", spec.name, budget_remaining.unwrap_or(0));
            spec
        }
        m => return Err(unexpected(&m, "hello")),
    };
    let mut results = Vec::with_capacity(spec.episodes);
    loop {
        match ch.expect()? {
            Message::Reset { .. } => {}
            Message::EvaluationDone { rewards, score } => {
                return Ok(RemoteEvaluation { spec, results, rewards, score });
            }
            m => return Err(unexpected(&m, "reset or evaluation_done")),
        }
        let mut obs = match ch.expect()? {
            Message::Observation { observation: o } => observation(o)?,
            m => return Err(unexpected(&m, "observation")),
        };
        let mut step = 0;
        loop {
            let action = policy.act(step, &obs);
            ch.send(Message::Action { action })?;
            step += 1;
            match ch.expect()? {
                Message::StepResult { observation: o, done, .. } => {
                    obs = observation(o)?;
                    if done {
                        break;
                    }
                }
                m => return Err(unexpected(&m, "step_result")),
            }
        }
        match ch.expect()? {
            Message::EpisodeDone { result, .. } => results.push(result),
            m => return Err(unexpected(&m, "episode_done")),
        }
    }
}

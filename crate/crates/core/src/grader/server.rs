use std::collections::{HashMap, HashSet};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use crate::environment::{Environment, ACTION_SIZE};
use crate::error::{Error, Result};

use super::leaderboard::{Leaderboard, LeaderboardEntry};
use super::protocol::{codes, Channel, Envelope, Message, RecvError, PROTOCOL_VERSION};
use super::spec::{aggregate, EvaluationSpec};

pub const DEFAULT_IDLE_TIMEOUT: Duration = Duration::from_secs(60);
pub const DEFAULT_BUDGET: u32 = 5;
const DAY_MS: u64 = 86_400_000;

/// Wall clock in Unix milliseconds; replaceable in tests.
pub type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64))
}

/// Evaluations started per token and UTC day.
pub struct Budget {
    per_day: u32,
    used: Mutex<HashMap<(String, u64), u32>>,
}

impl Budget {
    pub fn new(per_day: u32) -> Self {
        Self { per_day, used: Mutex::new(HashMap::new()) }
    }

    /// Charges one evaluation; `None` when the day's allowance is spent.
    pub fn try_consume(&self, token: &str, now_ms: u64) -> Option<u32> {
        let mut used = self.used.lock().unwrap_or_else(|e| e.into_inner());
        let n = used.entry((token.to_string(), now_ms / DAY_MS)).or_insert(0);
        if *n >= self.per_day {
            return None;
        }
        *n += 1;
        Some(self.per_day - *n)
    }
}

#[derive(Clone)]
pub struct ServerConfig {
    pub spec: EvaluationSpec,
    pub budget: u32,
    pub leaderboard: PathBuf,
    pub tokens: HashSet<String>,
    pub idle_timeout: Duration,
    pub environment: Environment,
    pub clock: Clock,
}

impl ServerConfig {
    pub fn new(spec: EvaluationSpec, leaderboard: PathBuf, tokens: impl IntoIterator<Item = String>) -> Self {
        Self {
            spec,
            budget: DEFAULT_BUDGET,
            leaderboard,
            tokens: tokens.into_iter().collect(),
            idle_timeout: DEFAULT_IDLE_TIMEOUT,
            environment: Environment::default_runner(),
            clock: system_clock(),
        }
    }
}

struct Shared {
    cfg: ServerConfig,
    budget: Budget,
    board: Leaderboard,
    stop: AtomicBool,
}

pub struct Server {
    listener: TcpListener,
    shared: Arc<Shared>,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs, cfg: ServerConfig) -> Result<Self> {
        cfg.spec.validate()?;
        if cfg.tokens.is_empty() {
            return Err(Error::InvalidArgument("server needs at least one token".into()));
        }
        let board = Leaderboard::open(&cfg.leaderboard)?;
        let listener = TcpListener::bind(addr)?;
        let budget = Budget::new(cfg.budget);
        Ok(Self { listener, shared: Arc::new(Shared { cfg, budget, board, stop: AtomicBool::new(false) }) })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    /// Accepts sessions until shut down, one thread each.
    pub fn run(self) -> Result<()> {
        for stream in self.listener.incoming() {
            if self.shared.stop.load(Ordering::SeqCst) {
                break;
            }
            match stream {
                Ok(s) => {
                    let shared = self.shared.clone();
                    std::thread::spawn(move || session(&shared, s));
                }
                Err(e) => log::warn!("accept failed: {e}"),
            }
        }
        Ok(())
    }

    pub fn spawn(self) -> Result<ServerHandle> {
        let addr = self.local_addr()?;
        let shared = self.shared.clone();
        let thread = std::thread::spawn(move || self.run());
        Ok(ServerHandle { addr, shared, thread: Some(thread) })
    }
}

/// A server running on a background thread.
pub struct ServerHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    thread: Option<JoinHandle<Result<()>>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) -> Result<()> {
        self.stop()
    }

    fn stop(&mut self) -> Result<()> {
        self.shared.stop.store(true, Ordering::SeqCst);
        // Wake the accept loop.
        let _ = TcpStream::connect(self.addr);
        match self.thread.take() {
            Some(t) => t.join().unwrap_or_else(|_| Err(Error::ProtocolMisuse("server thread panicked".into()))),
            None => Ok(()),
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        let _ = self.stop();
    }
}

enum End {
    /// Send this error, then close.
    Reply(Message),
    Quiet(String),
}

fn receive(ch: &mut Channel) -> std::result::Result<Envelope, End> {
    ch.recv().map_err(|e| match e {
        RecvError::Closed => End::Quiet("client closed the connection".into()),
        RecvError::TimedOut => End::Reply(Message::error(codes::TIMEOUT, "session idle too long", None)),
        RecvError::Malformed { seq, reason } => End::Reply(Message::error(codes::PROTOCOL, reason, seq)),
        RecvError::Io(e) => End::Quiet(e.to_string()),
    })
}

fn send(ch: &mut Channel, m: Message) -> std::result::Result<(), End> {
    ch.send(m).map(|_| ()).map_err(|e| End::Quiet(e.to_string()))
}

fn session(shared: &Shared, stream: TcpStream) {
    let peer = stream.peer_addr().map_or_else(|_| "?".to_string(), |a| a.to_string());
    if shared.stop.load(Ordering::SeqCst) {
        return;
    }
    let mut ch = match stream
        .set_read_timeout(Some(shared.cfg.idle_timeout))
        .map_err(Error::from)
        .and_then(|_| Channel::new(stream))
    {
        Ok(ch) => ch,
        Err(e) => return log::warn!("{peer}: {e}"),
    };
    match run_session(shared, &mut ch) {
        Ok(()) => log::info!("{peer}: evaluation complete"),
        Err(End::Reply(m)) => {
            log::info!("{peer}: closing with {m:?}");
            let _ = ch.send(m);
        }
        Err(End::Quiet(why)) => log::info!("{peer}: {why}"),
    }
}

fn run_session(shared: &Shared, ch: &mut Channel) -> std::result::Result<(), End> {
    let cfg = &shared.cfg;
    let hello = receive(ch)?;
    let token = match hello.message {
        Message::Hello { version, token, .. } => {
            if version != PROTOCOL_VERSION {
                return Err(End::Reply(Message::error(
                    codes::VERSION,
                    format!("server speaks {PROTOCOL_VERSION}, client sent {version}"),
                    Some(hello.seq),
                )));
            }
            match token {
                Some(t) if cfg.tokens.contains(&t) => t,
                _ => return Err(End::Reply(Message::error(codes::AUTH, "unknown token", Some(hello.seq)))),
            }
        }
        other => {
            return Err(End::Reply(Message::error(
                codes::PROTOCOL,
                format!("expected hello, got {}", other.kind()),
                Some(hello.seq),
            )))
        }
    };
    let remaining = shared.budget.try_consume(&token, (cfg.clock)()).ok_or_else(|| {
        End::Reply(Message::error(codes::BUDGET, format!("{} evaluations per day", cfg.budget), None))
    })?;
    send(
        ch,
        Message::Hello {
            version: PROTOCOL_VERSION.into(),
            token: None,
            spec: Some(cfg.spec.summary()),
            budget_remaining: Some(remaining),
        },
    )?;

    let mut env = cfg.environment.clone();
    let mut rewards = Vec::with_capacity(cfg.spec.seeds.len());
    for (episode, ep_cfg) in cfg.spec.configs().enumerate() {
        let obs = env.reset(ep_cfg).map_err(|e| End::Reply(Message::error(codes::INTERNAL, e.to_string(), None)))?;
        send(ch, Message::Reset { episode, config: ep_cfg })?;
        send(ch, Message::Observation { observation: obs.to_vec() })?;
        loop {
            let env_msg = receive(ch)?;
            let seq = env_msg.seq;
            let action = match env_msg.message {
                Message::Action { action } => action,
                other => {
                    return Err(End::Reply(Message::error(
                        codes::PROTOCOL,
                        format!("expected action, got {}", other.kind()),
                        Some(seq),
                    )))
                }
            };
            validate_action(&action).map_err(|why| End::Reply(Message::error(codes::PROTOCOL, why, Some(seq))))?;
            let out =
                env.step(&action).map_err(|e| End::Reply(Message::error(codes::INTERNAL, e.to_string(), Some(seq))))?;
            send(
                ch,
                Message::StepResult { observation: out.observation.to_vec(), reward: out.reward, done: out.done },
            )?;
            if out.done {
                break;
            }
        }
        let result = env.result().expect("episode finished");
        rewards.push(result.reward);
        send(ch, Message::EpisodeDone { episode, result })?;
    }
    let score = aggregate(&rewards);
    let entry = LeaderboardEntry {
        token,
        timestamp_ms: (cfg.clock)(),
        spec: cfg.spec.name.clone(),
        rewards: rewards.clone(),
        score,
        protocol: PROTOCOL_VERSION.into(),
    };
    if let Err(e) = shared.board.append(&entry) {
        log::error!("leaderboard write failed: {e}");
        return Err(End::Reply(Message::error(codes::INTERNAL, "leaderboard unavailable", None)));
    }
    send(ch, Message::EvaluationDone { rewards, score })
}

/// The grader accepts only complete actions with every value in [0, 1].
fn validate_action(action: &[f64]) -> std::result::Result<(), String> {
    if action.len() != ACTION_SIZE {
        return Err(format!("action needs {ACTION_SIZE} values, got {}", action.len()));
    }
    match action.iter().position(|a| !(0.0..=1.0).contains(a)) {
        Some(i) => Err(format!("action[{i}] = {} is outside [0, 1]", action[i])),
        None => Ok(()),
    }
}

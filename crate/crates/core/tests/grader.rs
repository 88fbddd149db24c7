use std::net::{SocketAddr, TcpStream};
use std::path::Path;
use std::thread;
use std::time::Duration;

use musclerun_core::environment::{Environment, Observation, Policy, ACTION_SIZE};
use musclerun_core::grader::leaderboard::read_entries;
use musclerun_core::grader::protocol::{Channel, Message};
use musclerun_core::grader::*;
use musclerun_core::Error;

const TOKEN: &str = "alice";

fn small_spec() -> EvaluationSpec {
    EvaluationSpec { name: "loopback".into(), seeds: vec![3, 17, 20170717], difficulty: 2, max_obstacles: 10 }
}

fn start(dir: &Path, tune: impl FnOnce(&mut ServerConfig)) -> ServerHandle {
    let mut cfg = ServerConfig::new(small_spec(), dir.join("board.jsonl"), [TOKEN.to_string(), "bob".to_string()]);
    tune(&mut cfg);
    Server::bind("127.0.0.1:0", cfg).unwrap().spawn().unwrap()
}

/// Observation-dependent so that any transport distortion changes the result.
struct Reactive(f64);

impl Policy for Reactive {
    fn act(&mut self, step: usize, obs: &Observation) -> Vec<f64> {
        (0..ACTION_SIZE)
            .map(|m| (0.3 + 0.2 * (step as f64 * self.0 + m as f64).sin() + 0.5 * obs[8]).clamp(0.0, 1.0))
            .collect()
    }
}

fn remote_code(e: Error) -> String {
    match e {
        Error::Remote { code, .. } => code,
        other => panic!("expected a remote error, got {other:?}"),
    }
}

fn handshake(addr: SocketAddr, token: &str) -> Channel {
    let mut ch = Channel::new(TcpStream::connect(addr).unwrap()).unwrap();
    ch.send(Message::Hello {
        version: PROTOCOL_VERSION.into(),
        token: Some(token.into()),
        spec: None,
        budget_remaining: None,
    })
    .unwrap();
    ch
}

#[test]
fn remote_scores_equal_local_scores() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path(), |_| {});
    let remote = client_run(server.addr(), TOKEN, &mut Reactive(0.05)).unwrap();
    let local = evaluate_local(&Environment::default_runner(), &mut Reactive(0.05), &small_spec()).unwrap();
    assert_eq!(remote.rewards.len(), 3);
    for (r, l) in remote.rewards.iter().zip(&local.rewards) {
        assert!((r - l).abs() <= 1e-9, "{r} vs {l}");
    }
    assert_eq!(remote.results, local.results);
    assert!((remote.score - local.score).abs() <= 1e-9);

    let text = std::fs::read_to_string(dir.path().join("board.jsonl")).unwrap();
    let entries = read_entries(&text);
    assert_eq!(entries.len(), 1);
    assert_eq!(entries[0].token, TOKEN);
    assert_eq!(entries[0].rewards, remote.rewards);
    server.shutdown().unwrap();
}

#[test]
fn budget_rejects_the_sixth_submission() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path(), |c| {
        c.spec.seeds.truncate(1);
    });
    for _ in 0..5 {
        client_run(server.addr(), TOKEN, &mut Reactive(0.1)).unwrap();
    }
    let e = client_run(server.addr(), TOKEN, &mut Reactive(0.1)).unwrap_err();
    assert_eq!(remote_code(e), "budget_exhausted");
    // Budgets are per token.
    client_run(server.addr(), "bob", &mut Reactive(0.1)).unwrap();
    assert_eq!(leaderboard_report(&dir.path().join("board.jsonl"), 10).unwrap().len(), 2);
}

#[test]
fn concurrent_sessions_are_isolated() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path(), |_| {});
    let addr = server.addr();
    let handles: Vec<_> = [0.02, 0.07, 0.2, 0.5]
        .into_iter()
        .enumerate()
        .map(|(i, w)| {
            thread::spawn(move || {
                let token = if i % 2 == 0 { "alice" } else { "bob" };
                (w, client_run(addr, token, &mut Reactive(w)).unwrap())
            })
        })
        .collect();
    for h in handles {
        let (w, remote) = h.join().unwrap();
        let local = evaluate_local(&Environment::default_runner(), &mut Reactive(w), &small_spec()).unwrap();
        assert_eq!(remote.rewards, local.rewards, "policy {w}");
    }
}

#[test]
fn short_action_is_a_protocol_error() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path(), |_| {});
    let mut ch = handshake(server.addr(), TOKEN);
    assert!(matches!(ch.expect().unwrap(), Message::Hello { spec: Some(_), .. }));
    assert!(matches!(ch.expect().unwrap(), Message::Reset { episode: 0, .. }));
    assert!(matches!(ch.expect().unwrap(), Message::Observation { .. }));
    ch.send(Message::Action { action: vec![0.1; 17] }).unwrap();
    assert_eq!(remote_code(ch.expect().unwrap_err()), "protocol_error");
}

#[test]
fn out_of_range_action_is_a_protocol_error() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path(), |_| {});
    let mut ch = handshake(server.addr(), TOKEN);
    for _ in 0..3 {
        ch.expect().unwrap();
    }
    let mut a = vec![0.1; ACTION_SIZE];
    a[5] = f64::NAN;
    ch.send(Message::Action { action: a }).unwrap();
    assert_eq!(remote_code(ch.expect().unwrap_err()), "protocol_error");
}

#[test]
fn unknown_token_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path(), |_| {});
    let e = client_run(server.addr(), "mallory", &mut Reactive(0.1)).unwrap_err();
    assert_eq!(remote_code(e), "auth_error");
    assert!(leaderboard_report(&dir.path().join("board.jsonl"), 10).unwrap().is_empty());
}

#[test]
fn version_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path(), |_| {});
    let mut ch = Channel::new(TcpStream::connect(server.addr()).unwrap()).unwrap();
    ch.send(Message::Hello {
        version: "musclerun-wire/0".into(),
        token: Some(TOKEN.into()),
        spec: None,
        budget_remaining: None,
    })
    .unwrap();
    assert_eq!(remote_code(ch.expect().unwrap_err()), "version_mismatch");
}

#[test]
fn idle_session_times_out() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path(), |c| c.idle_timeout = Duration::from_millis(200));
    let mut ch = handshake(server.addr(), TOKEN);
    for _ in 0..3 {
        ch.expect().unwrap();
    }
    thread::sleep(Duration::from_millis(600));
    assert_eq!(remote_code(ch.expect().unwrap_err()), "timeout");
}

#[test]
fn abandoned_session_still_costs_budget() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path(), |c| c.budget = 1);
    {
        let mut ch = handshake(server.addr(), TOKEN);
        assert!(matches!(ch.expect().unwrap(), Message::Hello { budget_remaining: Some(0), .. }));
    }
    let e = client_run(server.addr(), TOKEN, &mut Reactive(0.1)).unwrap_err();
    assert_eq!(remote_code(e), "budget_exhausted");
}

//! Remote evaluation: wire protocol, server, client, budgets and leaderboard.

pub mod client;
pub mod leaderboard;
pub mod protocol;
pub mod server;
pub mod spec;

pub use client::{client_run, RemoteEvaluation, TOKEN_ENV};
pub use leaderboard::{leaderboard_report, Leaderboard, LeaderboardEntry};
pub use protocol::PROTOCOL_VERSION;
pub use server::{Server, ServerConfig, ServerHandle};
pub use spec::{aggregate, evaluate_local, Evaluation, EvaluationSpec};

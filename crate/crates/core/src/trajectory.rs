//! Per-control-step trajectory log, stored as CSV with a metadata line.
//!
//! ```text
//! # musclerun-log/1 seed=42 difficulty=1 max_obstacles=3 lambda=1e-7 body_weight=735.75
//! step,time,pelvis_x,...,obs_obstacle_radius
//! ```
//!
//! Floats are written in shortest round-trip form, so reading a log back
//! recovers every value bit for bit. Record 0 holds the state right after
//! reset with zero excitations and zero reward.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::environment::{
    Environment, EpisodeConfig, EpisodeResult, Observation, Policy, ACTION_SIZE, OBSERVATION_LABELS, OBSERVATION_SIZE,
};
use crate::error::{Error, Result};
use crate::model::profile;

pub const LOG_VERSION: &str = "musclerun-log/1";

#[derive(Debug, Clone, PartialEq)]
pub struct LogMeta {
    pub config: EpisodeConfig,
    pub lambda: f64,
    /// Used by strike detection, N.
    pub body_weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub step: usize,
    pub time: f64,
    pub q: Vec<f64>,
    pub qdot: Vec<f64>,
    pub activations: Vec<f64>,
    /// Excitations applied to reach this record.
    pub excitations: Vec<f64>,
    /// Vertical contact force on the right and left foot.
    pub grf: [f64; 2],
    pub reward: f64,
    pub observation: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub meta: LogMeta,
    pub coordinate_names: Vec<String>,
    pub muscle_names: Vec<String>,
    pub records: Vec<LogRecord>,
}

const COLUMNS: usize = 2 + 2 * profile::DOF + 2 * ACTION_SIZE + 3 + OBSERVATION_SIZE;

fn fmt(v: f64) -> String {
    format!("{v:?}")
}

impl TrajectoryLog {
    pub fn new(meta: LogMeta, coordinate_names: Vec<String>, muscle_names: Vec<String>) -> Self {
        Self { meta, coordinate_names, muscle_names, records: Vec::new() }
    }

    /// Header row in column order.
    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["step".to_string(), "time".to_string()];
        h.extend(self.coordinate_names.iter().cloned());
        h.extend(self.coordinate_names.iter().map(|n| format!("{n}_speed")));
        h.extend(self.muscle_names.iter().map(|n| format!("act_{n}")));
        h.extend(self.muscle_names.iter().map(|n| format!("exc_{n}")));
        h.extend(["grf_r", "grf_l", "reward"].map(String::from));
        h.extend(OBSERVATION_LABELS.iter().map(|n| format!("obs_{n}")));
        h
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let c = &self.meta.config;
        writeln!(
            out,
            "# {LOG_VERSION} seed={} difficulty={} max_obstacles={} lambda={} body_weight={}",
            c.seed,
            c.difficulty,
            c.max_obstacles,
            fmt(self.meta.lambda),
            fmt(self.meta.body_weight)
        )?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.header()).map_err(csv_error)?;
        for r in &self.records {
            let mut row = vec![r.step.to_string(), fmt(r.time)];
            for v in r.q.iter().chain(&r.qdot).chain(&r.activations).chain(&r.excitations) {
                row.push(fmt(*v));
            }
            row.extend([fmt(r.grf[0]), fmt(r.grf[1]), fmt(r.reward)]);
            row.extend(r.observation.iter().map(|v| fmt(*v)));
            w.write_record(&row).map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(f))
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::read(text.as_bytes())
    }

    pub fn read<R: BufRead>(mut input: R) -> Result<Self> {
        let mut first = String::new();
        input.read_line(&mut first)?;
        let meta = parse_meta(first.trim_end())?;
        let mut rdr = csv::Reader::from_reader(input);
        let header = rdr.headers().map_err(csv_error)?.clone();
        if header.len() != COLUMNS {
            return Err(Error::Parse(format!("log header has {} columns, expected {COLUMNS}", header.len())));
        }
        let n = profile::DOF;
        let coordinate_names: Vec<String> = header.iter().skip(2).take(n).map(String::from).collect();
        let muscle_names: Vec<String> = header
            .iter()
            .skip(2 + 2 * n)
            .take(ACTION_SIZE)
            .map(|h| h.strip_prefix("act_").unwrap_or(h).to_string())
            .collect();
        let mut log = TrajectoryLog::new(meta, coordinate_names, muscle_names);
        if log.header().iter().ne(header.iter()) {
            return Err(Error::Parse("log header does not match the documented column order".into()));
        }
        for (line, row) in rdr.records().enumerate() {
            let row = row.map_err(csv_error)?;
            let vals = row
                .iter()
                .skip(1)
                .map(|s| s.parse::<f64>().map_err(|_| Error::Parse(format!("record {line}: bad number \"{s}\""))))
                .collect::<Result<Vec<f64>>>()?;
            let step = row[0].parse().map_err(|_| Error::Parse(format!("record {line}: bad step \"{}\"", &row[0])))?;
            let mut it = vals.into_iter();
            let mut take = |k: usize| it.by_ref().take(k).collect::<Vec<f64>>();
            let time = take(1)[0];
            let q = take(n);
            let qdot = take(n);
            let activations = take(ACTION_SIZE);
            let excitations = take(ACTION_SIZE);
            let rest = take(3);
            let observation = take(OBSERVATION_SIZE);
            log.records.push(LogRecord {
                step,
                time,
                q,
                qdot,
                activations,
                excitations,
                grf: [rest[0], rest[1]],
                reward: rest[2],
                observation,
            });
        }
        Ok(log)
    }

    /// Excitations of records 1.., one row per control step.
    pub fn actions(&self) -> Vec<Vec<f64>> {
        self.records.iter().skip(1).map(|r| r.excitations.clone()).collect()
    }

    /// Sample period of the log, s.
    pub fn dt(&self) -> Option<f64> {
        match self.records.as_slice() {
            [a, b, ..] => Some(b.time - a.time),
            _ => None,
        }
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Parse(format!("csv: {e}"))
}

fn parse_meta(line: &str) -> Result<LogMeta> {
    let rest = line
        .strip_prefix("# ")
        .and_then(|l| l.strip_prefix(LOG_VERSION))
        .ok_or_else(|| Error::Parse(format!("log must start with \"# {LOG_VERSION}\"")))?;
    let mut seed = None;
    let mut difficulty = None;
    let mut max_obstacles = None;
    let mut lambda = None;
    let mut body_weight = None;
    for kv in rest.split_whitespace() {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Parse(format!("bad metadata item \"{kv}\"")))?;
        let bad = || Error::Parse(format!("bad metadata value \"{kv}\""));
        match k {
            "seed" => seed = Some(v.parse().map_err(|_| bad())?),
            "difficulty" => difficulty = Some(v.parse().map_err(|_| bad())?),
            "max_obstacles" => max_obstacles = Some(v.parse().map_err(|_| bad())?),
            "lambda" => lambda = Some(v.parse().map_err(|_| bad())?),
            "body_weight" => body_weight = Some(v.parse().map_err(|_| bad())?),
            _ => log::warn!("ignoring unknown log metadata \"{k}\""),
        }
    }
    let missing = |k: &str| Error::Parse(format!("log metadata lacks \"{k}\""));
    Ok(LogMeta {
        config: EpisodeConfig::new(
            seed.ok_or_else(|| missing("seed"))?,
            difficulty.ok_or_else(|| missing("difficulty"))?,
            max_obstacles.ok_or_else(|| missing("max_obstacles"))?,
        )?,
        lambda: lambda.ok_or_else(|| missing("lambda"))?,
        body_weight: body_weight.ok_or_else(|| missing("body_weight"))?,
    })
}

fn snapshot(env: &Environment, observation: &Observation, reward: f64) -> LogRecord {
    let s = env.state().expect("episode is active");
    LogRecord {
        step: env.steps(),
        time: s.time,
        q: s.q.clone(),
        qdot: s.qdot.clone(),
        activations: s.activations.clone(),
        excitations: env.last_excitations().expect("episode is active").to_vec(),
        grf: env.last_grf().expect("episode is active"),
        reward,
        observation: observation.to_vec(),
    }
}

/// Runs one episode and records every control step.
impl std::fmt::Display for TrajectoryLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut buf = Vec::new();
        self.write(&mut buf).map_err(|_| std::fmt::Error)?;
        f.write_str(&String::from_utf8_lossy(&buf))
    }
}

pub fn record_episode(
    env: &mut Environment,
    cfg: EpisodeConfig,
    policy: &mut dyn Policy,
) -> Result<(EpisodeResult, TrajectoryLog)> {
    let mut obs = env.reset(cfg)?;
    let model = env.model().clone();
    let meta = LogMeta { config: cfg, lambda: env.lambda(), body_weight: model.definition().body_weight() };
    let muscles = model.definition().muscles.iter().map(|m| m.name.clone()).collect();
    let mut log = TrajectoryLog::new(meta, model.coordinate_names().to_vec(), muscles);
    log.records.push(snapshot(env, &obs, 0.0));
    loop {
        let action = policy.act(env.steps(), &obs);
        let out = env.step(&action)?;
        obs = out.observation;
        log.records.push(snapshot(env, &obs, out.reward));
        if out.done {
            return Ok((env.result().expect("episode finished"), log));
        }
    }
}

/// Re-simulates the logged actions and reports the first record that differs.
pub fn replay(env: &Environment, log: &TrajectoryLog) -> Result<ReplayReport> {
    let mut script = crate::environment::ScriptedPolicy { actions: log.actions() };
    let mut env = env.clone().with_lambda(log.meta.lambda);
    let (result, fresh) = record_episode(&mut env, log.meta.config, &mut script)?;
    let first_mismatch = fresh
        .records
        .iter()
        .zip(&log.records)
        .position(|(a, b)| a != b)
        .or_else(|| (fresh.records.len() != log.records.len()).then(|| fresh.records.len().min(log.records.len())));
    Ok(ReplayReport { result, records: fresh.records.len(), first_mismatch })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub result: EpisodeResult,
    pub records: usize,
    /// Index of the first record that differs from the stored log.
    pub first_mismatch: Option<usize>,
}

impl ReplayReport {
    pub fn verified(&self) -> bool {
        self.first_mismatch.is_none()
    }
}

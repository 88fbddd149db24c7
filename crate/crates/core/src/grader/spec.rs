use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::environment::{Environment, EpisodeConfig, EpisodeResult, Policy};
use crate::error::{Error, Result};

use super::protocol::SpecSummary;

/// Seeds and course parameters every submission is scored on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSpec {
    pub name: String,
    pub seeds: Vec<u64>,
    pub difficulty: u8,
    pub max_obstacles: usize,
}

impl EvaluationSpec {
    /// Three-seed spec of the first round.
    pub fn open_stage() -> Self {
        Self { name: "open-stage".into(), seeds: vec![20170717, 20170814, 20170911], difficulty: 2, max_obstacles: 10 }
    }

    /// Ten-seed spec of the final round.
    pub fn playoff() -> Self {
        Self {
            name: "playoff".into(),
            seeds: (0..10).map(|i| 20171106 + 7919 * i).collect(),
            difficulty: 2,
            max_obstacles: 10,
        }
    }

    pub fn named(name: &str) -> Option<Self> {
        match name {
            "open-stage" => Some(Self::open_stage()),
            "playoff" => Some(Self::playoff()),
            _ => None,
        }
    }

    /// A shipped spec name, or a path to a TOML spec file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if let Some(s) = Self::named(name_or_path) {
            return Ok(s);
        }
        let text = std::fs::read_to_string(Path::new(name_or_path))?;
        let spec: Self = toml::from_str(&text).map_err(|e| Error::Parse(format!("spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidArgument("evaluation spec needs at least one seed".into()));
        }
        for cfg in self.configs() {
            cfg.validate()?;
        }
        Ok(())
    }

    pub fn configs(&self) -> impl Iterator<Item = EpisodeConfig> + '_ {
        self.seeds.iter().map(|&seed| EpisodeConfig {
            seed,
            difficulty: self.difficulty,
            max_obstacles: self.max_obstacles,
        })
    }

    pub fn summary(&self) -> SpecSummary {
        SpecSummary {
            name: self.name.clone(),
            episodes: self.seeds.len(),
            difficulty: self.difficulty,
            max_obstacles: self.max_obstacles,
        }
    }
}

/// Mean over seeds.
pub fn aggregate(rewards: &[f64]) -> f64 {
    rewards.iter().sum::<f64>() / rewards.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub rewards: Vec<f64>,
    pub results: Vec<EpisodeResult>,
    pub score: f64,
}

/// Scores `policy` on every seed of `spec` in process.
pub fn evaluate_local(env: &Environment, policy: &mut dyn Policy, spec: &EvaluationSpec) -> Result<Evaluation> {
    spec.validate()?;
    let mut env = env.clone();
    let mut results = Vec::with_capacity(spec.seeds.len());
    for cfg in spec.configs() {
        results.push(env.run_episode(cfg, policy)?);
    }
    let rewards: Vec<f64> = results.iter().map(|r| r.reward).collect();
    Ok(Evaluation { score: aggregate(&rewards), rewards, results })
}

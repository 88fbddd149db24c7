//! Single-session throughput measurement.

use std::time::Instant;

use serde::Serialize;

use crate::dynamics::{SUBSTEPS_PER_CONTROL, SUBSTEP_DT};
use crate::environment::{Environment, EpisodeConfig, Policy};
use crate::error::Result;

pub const INTEGRATOR: &str = "symplectic Euler, momentum form, fixed step";

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub episodes: usize,
    pub control_steps: usize,
    pub substeps: usize,
    pub seconds: f64,
    pub steps_per_second: f64,
    pub substep_dt: f64,
    pub substeps_per_control: usize,
    pub integrator: &'static str,
}

/// Runs `episodes` episodes on seeds 0.. and times them.
pub fn bench(env: &Environment, episodes: usize, cfg: EpisodeConfig, policy: &mut dyn Policy) -> Result<BenchReport> {
    let mut env = env.clone();
    let mut steps = 0;
    let start = Instant::now();
    for seed in 0..episodes as u64 {
        steps += env.run_episode(EpisodeConfig { seed, ..cfg }, policy)?.steps_taken;
    }
    let seconds = start.elapsed().as_secs_f64();
    Ok(BenchReport {
        episodes,
        control_steps: steps,
        substeps: steps * SUBSTEPS_PER_CONTROL,
        seconds,
        steps_per_second: steps as f64 / seconds.max(f64::MIN_POSITIVE),
        substep_dt: SUBSTEP_DT,
        substeps_per_control: SUBSTEPS_PER_CONTROL,
        integrator: INTEGRATOR,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::ZeroPolicy;

    #[test]
    fn report_counts_substeps() {
        let r = bench(&Environment::default_runner(), 2, EpisodeConfig::default(), &mut ZeroPolicy).unwrap();
        assert_eq!(r.substeps, r.control_steps * 50);
        assert_eq!(r.substep_dt, 2e-4);
        assert!(r.control_steps > 0 && r.steps_per_second > 0.0);
    }
}

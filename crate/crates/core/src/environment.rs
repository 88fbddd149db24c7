//! Reset/step running environment with seeded obstacle courses.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::contact::{self, Obstacle};
use crate::dynamics::{forward_kinematics, CompiledModel, Kinematics, SimOptions, SimState, Simulator, CONTROL_DT};
use crate::error::{Error, Result};
use crate::model::profile;
use crate::rng::{SplitMix64, MAX_SEED};

pub const OBSERVATION_SIZE: usize = 41;
pub const ACTION_SIZE: usize = 18;
pub const MAX_STEPS: usize = 1000;
/// Pelvis height below which the runner counts as fallen, m.
pub const FALL_HEIGHT: f64 = 0.65;
pub const DEFAULT_LAMBDA: f64 = 1e-7;
/// Reported distance when no obstacle lies ahead.
pub const NO_OBSTACLE_DISTANCE: f64 = 100.0;
pub const DEFAULT_MAX_OBSTACLES: usize = 3;

pub type Observation = [f64; OBSERVATION_SIZE];

/// Observation slot names, in order.
pub const OBSERVATION_LABELS: [&str; OBSERVATION_SIZE] = [
    "pelvis_rotation",
    "pelvis_x",
    "pelvis_y",
    "pelvis_rotation_speed",
    "pelvis_vx",
    "pelvis_vy",
    "hip_r",
    "knee_r",
    "ankle_r",
    "hip_l",
    "knee_l",
    "ankle_l",
    "hip_r_speed",
    "knee_r_speed",
    "ankle_r_speed",
    "hip_l_speed",
    "knee_l_speed",
    "ankle_l_speed",
    "com_x",
    "com_y",
    "com_vx",
    "com_vy",
    "head_x",
    "head_y",
    "pelvis_pos_x",
    "pelvis_pos_y",
    "torso_x",
    "torso_y",
    "toes_l_x",
    "toes_l_y",
    "toes_r_x",
    "toes_r_y",
    "talus_l_x",
    "talus_l_y",
    "talus_r_x",
    "talus_r_y",
    "psoas_strength_r",
    "psoas_strength_l",
    "obstacle_distance",
    "obstacle_y",
    "obstacle_radius",
];

const OBSERVED_STATIONS: [&str; 7] = ["head", "pelvis", "torso", "toes_l", "toes_r", "talus_l", "talus_r"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeConfig {
    pub seed: u64,
    pub difficulty: u8,
    pub max_obstacles: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self { seed: 0, difficulty: 0, max_obstacles: DEFAULT_MAX_OBSTACLES }
    }
}

impl EpisodeConfig {
    pub fn new(seed: u64, difficulty: u8, max_obstacles: usize) -> Result<Self> {
        let cfg = Self { seed, difficulty, max_obstacles };
        cfg.validate()?;
        Ok(cfg)
    }

    /// A config with a seed drawn from process entropy.
    pub fn with_random_seed(difficulty: u8, max_obstacles: usize) -> Result<Self> {
        use std::hash::{BuildHasher, Hasher};
        let mut h = std::collections::hash_map::RandomState::new().build_hasher();
        h.write_u128(
            std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_nanos()).unwrap_or(0),
        );
        Self::new(h.finish() & MAX_SEED, difficulty, max_obstacles)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seed > MAX_SEED {
            return Err(Error::InvalidArgument(format!("seed must be below 2^63, got {}", self.seed)));
        }
        if self.difficulty > 2 {
            return Err(Error::InvalidArgument(format!("difficulty must be 0, 1 or 2, got {}", self.difficulty)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleCourse {
    pub obstacles: Vec<Obstacle>,
    pub psoas_scale_r: f64,
    pub psoas_scale_l: f64,
}

impl ObstacleCourse {
    /// First obstacle whose center lies strictly ahead of `x`.
    pub fn next_after(&self, x: f64) -> Option<&Obstacle> {
        self.obstacles.iter().find(|o| o.x > x)
    }
}

/// Three positions U(1, 5) sorted, then gaps U(2, 4); per obstacle
/// `y ~ U(-0.25, 0.25)` and `r = 0.05 + Exp(0.05)`; at difficulty 2 psoas
/// scales U(0.5, 1) for the right then the left leg.
pub fn generate_obstacles(cfg: &EpisodeConfig) -> ObstacleCourse {
    let mut course = ObstacleCourse { obstacles: Vec::new(), psoas_scale_r: 1.0, psoas_scale_l: 1.0 };
    if cfg.difficulty == 0 {
        return course;
    }
    let mut rng = SplitMix64::new(cfg.seed);
    let mut xs: Vec<f64> = (0..cfg.max_obstacles.min(3)).map(|_| rng.uniform(1.0, 5.0)).collect();
    xs.sort_by(f64::total_cmp);
    while xs.len() < cfg.max_obstacles {
        let last = xs[xs.len() - 1];
        xs.push(last + rng.uniform(2.0, 4.0));
    }
    for x in xs {
        let y = rng.uniform(-0.25, 0.25);
        let r = 0.05 + rng.exponential(0.05);
        course.obstacles.push(Obstacle { x, y, r });
    }
    if cfg.difficulty == 2 {
        course.psoas_scale_r = rng.uniform(0.5, 1.0);
        course.psoas_scale_l = rng.uniform(0.5, 1.0);
    }
    course
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    TimeLimit,
    Fell,
    Diverged,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::TimeLimit => "time_limit",
            Termination::Fell => "fell",
            Termination::Diverged => "diverged",
        }
    }
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Termination {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "time_limit" => Ok(Termination::TimeLimit),
            "fell" => Ok(Termination::Fell),
            "diverged" => Ok(Termination::Diverged),
            other => Err(Error::Parse(format!("unknown termination \"{other}\""))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub step: usize,
    pub time: f64,
    pub pelvis_x: f64,
    /// `∫√L dt` over this step's window.
    pub ligament_integral: f64,
    /// Window-mean vertical contact force on the right and left foot, N.
    pub grf: [f64; 2],
    pub max_penetration: f64,
    pub clamped_fibers: usize,
    pub termination: Option<Termination>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diverged: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub final_x: f64,
    pub ligament_integral: f64,
    pub reward: f64,
    pub steps_taken: usize,
    pub termination: Termination,
}

/// Maps observations to excitations.
pub trait Policy {
    fn act(&mut self, step: usize, observation: &Observation) -> Vec<f64>;
}

impl<F: FnMut(usize, &Observation) -> Vec<f64>> Policy for F {
    fn act(&mut self, step: usize, observation: &Observation) -> Vec<f64> {
        self(step, observation)
    }
}

/// Every muscle relaxed.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPolicy;

impl Policy for ZeroPolicy {
    fn act(&mut self, _: usize, _: &Observation) -> Vec<f64> {
        vec![0.0; ACTION_SIZE]
    }
}

/// Replays a fixed table of excitations, then all zeros.
#[derive(Debug, Clone, Default)]
pub struct ScriptedPolicy {
    pub actions: Vec<Vec<f64>>,
}

impl ScriptedPolicy {
    /// One line of 18 comma-separated excitations per control step. Blank
    /// lines and lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut actions = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row = line
                .split(',')
                .map(|v| {
                    v.trim().parse::<f64>().map_err(|_| Error::Parse(format!("line {}: bad value \"{v}\"", i + 1)))
                })
                .collect::<Result<Vec<f64>>>()?;
            if row.len() != ACTION_SIZE {
                return Err(Error::Parse(format!("line {}: {} values, expected {ACTION_SIZE}", i + 1, row.len())));
            }
            actions.push(row);
        }
        Ok(Self { actions })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for a in &self.actions {
            let row: Vec<String> = a.iter().map(|v| format!("{v:?}")).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }
}

impl Policy for ScriptedPolicy {
    fn act(&mut self, step: usize, _: &Observation) -> Vec<f64> {
        self.actions.get(step).cloned().unwrap_or_else(|| vec![0.0; ACTION_SIZE])
    }
}

/// The same excitation on every muscle.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPolicy(pub f64);

impl Policy for ConstantPolicy {
    fn act(&mut self, _: usize, _: &Observation) -> Vec<f64> {
        vec![self.0; ACTION_SIZE]
    }
}

#[derive(Debug, Clone)]
struct Episode {
    cfg: EpisodeConfig,
    course: ObstacleCourse,
    sim: Simulator,
    state: SimState,
    steps: usize,
    pelvis_x: f64,
    ligament_integral: f64,
    reward_sum: f64,
    termination: Option<Termination>,
    observation: Observation,
    last_excitations: Vec<f64>,
    last_grf: [f64; 2],
}

/// One running session: strict reset/step ordering.
#[derive(Debug, Clone)]
pub struct Environment {
    model: Arc<CompiledModel>,
    lambda: f64,
    pelvis_station: usize,
    stations: [usize; 7],
    feet: [usize; 2],
    episode: Option<Episode>,
}

impl Environment {
    /// The model must have the competition profile and the observed stations.
    pub fn new(model: Arc<CompiledModel>) -> Result<Self> {
        let def = model.definition();
        if def.dof() != profile::DOF || def.muscles.len() != ACTION_SIZE {
            return Err(Error::Topology(format!(
                "environment needs {} coordinates and {ACTION_SIZE} muscles",
                profile::DOF
            )));
        }
        for name in ["iliopsoas_r", "iliopsoas_l"] {
            if def.muscle_index(name).is_none() {
                return Err(Error::Topology(format!("missing muscle \"{name}\", scaled at difficulty 2")));
            }
        }
        let mut stations = [0; 7];
        for (slot, name) in stations.iter_mut().zip(OBSERVED_STATIONS) {
            *slot = model.station_index(name).ok_or_else(|| Error::Topology(format!("missing station \"{name}\"")))?;
        }
        let foot = |name: &str| model.stations()[model.station_index(name).expect("checked above")].body;
        let feet = [foot("talus_r"), foot("talus_l")];
        Ok(Self { pelvis_station: stations[1], stations, feet, lambda: DEFAULT_LAMBDA, model, episode: None })
    }

    /// Environment on the shipped default runner.
    pub fn default_runner() -> Self {
        Self::new(CompiledModel::default_runner()).expect("default model has the competition profile")
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn model(&self) -> &Arc<CompiledModel> {
        &self.model
    }

    fn episode(&self) -> Result<&Episode> {
        self.episode.as_ref().ok_or_else(|| Error::ProtocolMisuse("reset has not been called".into()))
    }

    pub fn config(&self) -> Option<&EpisodeConfig> {
        self.episode.as_ref().map(|e| &e.cfg)
    }

    pub fn course(&self) -> Option<&ObstacleCourse> {
        self.episode.as_ref().map(|e| &e.course)
    }

    pub fn state(&self) -> Option<&SimState> {
        self.episode.as_ref().map(|e| &e.state)
    }

    pub fn steps(&self) -> usize {
        self.episode.as_ref().map_or(0, |e| e.steps)
    }

    pub fn is_done(&self) -> bool {
        self.episode.as_ref().is_some_and(|e| e.termination.is_some())
    }

    pub fn observation(&self) -> Option<&Observation> {
        self.episode.as_ref().map(|e| &e.observation)
    }

    /// Excitations applied in the last step, after clamping.
    pub fn last_excitations(&self) -> Option<&[f64]> {
        self.episode.as_ref().map(|e| e.last_excitations.as_slice())
    }

    /// Vertical contact force on the right and left foot: the window mean
    /// after a step, or the instantaneous value right after reset.
    pub fn last_grf(&self) -> Option<[f64; 2]> {
        self.episode.as_ref().map(|e| e.last_grf)
    }

    /// Model used for an episode: iliopsoas strength scaled per leg.
    fn episode_model(&self, course: &ObstacleCourse) -> Result<Arc<CompiledModel>> {
        if course.psoas_scale_r == 1.0 && course.psoas_scale_l == 1.0 {
            return Ok(self.model.clone());
        }
        let mut def = self.model.definition().clone();
        for m in &mut def.muscles {
            match m.name.as_str() {
                "iliopsoas_r" => m.f_max_iso *= course.psoas_scale_r,
                "iliopsoas_l" => m.f_max_iso *= course.psoas_scale_l,
                _ => {}
            }
        }
        Ok(Arc::new(CompiledModel::new(def)?))
    }

    pub fn reset(&mut self, cfg: EpisodeConfig) -> Result<Observation> {
        cfg.validate()?;
        let course = generate_obstacles(&cfg);
        let model = self.episode_model(&course)?;
        let state = SimState::initial(&model);
        let sim = Simulator::new(model, course.obstacles.clone(), SimOptions::default());
        let kin = forward_kinematics(sim.model(), &state);
        let observation = self.observe(&state, &kin, &course);
        let last_grf = self.instant_grf(&sim, &kin);
        self.episode = Some(Episode {
            pelvis_x: kin.stations[self.pelvis_station].position.x,
            cfg,
            course,
            sim,
            state,
            steps: 0,
            ligament_integral: 0.0,
            reward_sum: 0.0,
            termination: None,
            observation,
            last_excitations: vec![0.0; ACTION_SIZE],
            last_grf,
        });
        Ok(observation)
    }

    fn instant_grf(&self, sim: &Simulator, kin: &Kinematics) -> [f64; 2] {
        let model = sim.model();
        let samples = contact::collide(model, kin, sim.obstacles(), &model.definition().contact_params);
        let mut grf = [0.0; 2];
        for c in samples {
            let body = model.spheres()[c.sphere].body;
            for (side, &foot) in self.feet.iter().enumerate() {
                if body == foot {
                    grf[side] += c.force.y;
                }
            }
        }
        grf
    }

    /// Advances one 10 ms control step. Actions are clamped to [0, 1]; a
    /// non-finite entry ends the episode as diverged without advancing.
    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if action.len() != ACTION_SIZE {
            return Err(Error::InvalidArgument(format!("action needs {ACTION_SIZE} values, got {}", action.len())));
        }
        let ep = self.episode()?;
        if ep.termination.is_some() {
            return Err(Error::ProtocolMisuse("episode is over; call reset".into()));
        }
        let excitations: Vec<f64> = action.iter().map(|a| a.clamp(0.0, 1.0)).collect();
        let advanced = if action.iter().all(|a| a.is_finite()) {
            ep.sim.advance_control_step(&ep.state, &excitations)
        } else {
            Err(Error::Diverged { coordinate: "action".into(), value: f64::NAN })
        };

        let feet = self.feet;
        let pelvis_station = self.pelvis_station;
        let lambda = self.lambda;
        let ep = self.episode.as_mut().expect("checked above");
        let mut info = StepInfo {
            step: ep.steps,
            time: ep.state.time,
            pelvis_x: ep.pelvis_x,
            ligament_integral: 0.0,
            grf: [0.0; 2],
            max_penetration: 0.0,
            clamped_fibers: 0,
            termination: None,
            diverged: None,
        };
        let reward = match advanced {
            Ok((state, telemetry)) => {
                let model = ep.sim.model();
                let kin = forward_kinematics(model, &state);
                let x = kin.stations[pelvis_station].position.x;
                let increment = (x - ep.pelvis_x) - lambda * telemetry.ligament_integral;
                for (i, f) in telemetry.mean_vertical_force.iter().enumerate() {
                    let body = model.spheres()[i].body;
                    for (side, &foot) in feet.iter().enumerate() {
                        if body == foot {
                            info.grf[side] += f;
                        }
                    }
                }
                info.ligament_integral = telemetry.ligament_integral;
                info.max_penetration = telemetry.max_penetration.iter().copied().fold(0.0, f64::max);
                info.clamped_fibers = telemetry.clamped_fibers;
                ep.steps += 1;
                ep.ligament_integral += telemetry.ligament_integral;
                ep.pelvis_x = x;
                ep.state = state;
                ep.last_excitations = excitations;
                ep.last_grf = info.grf;
                if kin.stations[pelvis_station].position.y < FALL_HEIGHT {
                    ep.termination = Some(Termination::Fell);
                } else if ep.steps >= MAX_STEPS {
                    ep.termination = Some(Termination::TimeLimit);
                }
                increment
            }
            Err(Error::Diverged { coordinate, value }) => {
                log::warn!("episode diverged at step {}: {coordinate} = {value}", ep.steps);
                info.diverged = Some(coordinate);
                ep.termination = Some(Termination::Diverged);
                0.0
            }
            Err(e) => return Err(e),
        };
        ep.reward_sum += reward;
        info.step = ep.steps;
        info.time = ep.state.time;
        info.pelvis_x = ep.pelvis_x;
        info.termination = ep.termination;
        let ep = self.episode.as_ref().expect("checked above");
        let kin = forward_kinematics(ep.sim.model(), &ep.state);
        let observation = self.observe(&ep.state, &kin, &ep.course);
        let ep = self.episode.as_mut().expect("checked above");
        ep.observation = observation;
        Ok(StepOutcome { observation, reward, done: ep.termination.is_some(), info })
    }

    /// Totals so far; `None` before reset or while the episode is running.
    pub fn result(&self) -> Option<EpisodeResult> {
        let ep = self.episode.as_ref()?;
        let termination = ep.termination?;
        Some(EpisodeResult {
            final_x: ep.pelvis_x,
            ligament_integral: ep.ligament_integral,
            reward: ep.pelvis_x - self.lambda * ep.ligament_integral,
            steps_taken: ep.steps,
            termination,
        })
    }

    /// Sum of per-step reward increments so far.
    pub fn reward_sum(&self) -> f64 {
        self.episode.as_ref().map_or(0.0, |e| e.reward_sum)
    }

    /// Fills the 41-slot observation.
    pub fn observe(&self, state: &SimState, kin: &Kinematics, course: &ObstacleCourse) -> Observation {
        let mut o = [0.0; OBSERVATION_SIZE];
        let pelvis = &kin.stations[self.pelvis_station];
        o[0] = state.q[2];
        o[1] = pelvis.position.x;
        o[2] = pelvis.position.y;
        o[3] = state.qdot[2];
        o[4] = pelvis.velocity.x;
        o[5] = pelvis.velocity.y;
        o[6..12].copy_from_slice(&state.q[3..9]);
        o[12..18].copy_from_slice(&state.qdot[3..9]);
        o[18] = kin.com.x;
        o[19] = kin.com.y;
        o[20] = kin.com_velocity.x;
        o[21] = kin.com_velocity.y;
        for (i, &s) in self.stations.iter().enumerate() {
            o[22 + 2 * i] = kin.stations[s].position.x;
            o[23 + 2 * i] = kin.stations[s].position.y;
        }
        o[36] = course.psoas_scale_r;
        o[37] = course.psoas_scale_l;
        match course.next_after(pelvis.position.x) {
            Some(ob) => {
                o[38] = ob.x - pelvis.position.x;
                o[39] = ob.y;
                o[40] = ob.r;
            }
            None => o[38] = NO_OBSTACLE_DISTANCE,
        }
        o
    }

    /// Runs one full episode under `policy`.
    pub fn run_episode(&mut self, cfg: EpisodeConfig, policy: &mut dyn Policy) -> Result<EpisodeResult> {
        let mut obs = self.reset(cfg)?;
        loop {
            let action = policy.act(self.steps(), &obs);
            let out = self.step(&action)?;
            obs = out.observation;
            if out.done {
                return Ok(self.result().expect("episode finished"));
            }
        }
    }
}

/// Simulated time covered by `steps` control steps.
pub fn episode_time(steps: usize) -> f64 {
    steps as f64 * CONTROL_DT
}

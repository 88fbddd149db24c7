//! Musculoskeletal model schema, validation and the shipped default runner.
//!
//! Model files are TOML documents tagged with [`MODEL_VERSION`]. All
//! cross references (joint parents, muscle path bodies, ligament joints,
//! contact sphere bodies) are by name and are resolved during validation.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::contact::ContactParams;
use crate::error::{Error, Result};
use crate::muscle::MuscleCurves;

pub const MODEL_VERSION: &str = "musclerun-model/1";

/// Parent name used by the root joint.
pub const GROUND: &str = "ground";

const DEFAULT_MODEL_TOML: &str = include_str!("../data/default_model.toml");

/// Topology of the competition runner: 7 bodies, 9 DOF, 18 muscles.
pub mod profile {
    pub const BODIES: usize = 7;
    pub const DOF: usize = 9;
    pub const REVOLUTE_JOINTS: usize = 6;
    pub const MUSCLES: usize = 18;
    pub const CONTACT_SPHERES: usize = 4;
    pub const LIGAMENTS: usize = 6;
    pub const F_MAX_ISO_MIN: f64 = 557.0;
    pub const F_MAX_ISO_MAX: f64 = 9594.0;
    pub const STATIONS: [&str; 7] = ["head", "pelvis", "torso", "toes_l", "toes_r", "talus_l", "talus_r"];
}

pub type Vec2 = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodyDef {
    pub name: String,
    /// kg
    pub mass: f64,
    /// Planar rotational inertia about the COM, kg·m².
    pub inertia_zz: f64,
    pub com_offset: Vec2,
    #[serde(default)]
    pub attached_contact_spheres: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointKind {
    /// Two translations and one rotation relative to the parent.
    PlanarFree,
    Revolute,
}

impl JointKind {
    pub fn dof(self) -> usize {
        match self {
            JointKind::PlanarFree => 3,
            JointKind::Revolute => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointDef {
    pub name: String,
    pub parent: String,
    pub child: String,
    pub kind: JointKind,
    pub anchor_parent: Vec2,
    pub anchor_child: Vec2,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathPoint {
    pub body: String,
    pub point: Vec2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MuscleDef {
    pub name: String,
    pub f_max_iso: f64,
    pub optimal_fiber_length: f64,
    pub tendon_slack_length: f64,
    pub pennation_angle_at_optimal: f64,
    /// Optimal fiber lengths per second.
    pub max_contraction_velocity: f64,
    pub path: Vec<PathPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LigamentDef {
    pub joint: String,
    pub engage_angle_lo: f64,
    pub engage_angle_hi: f64,
    pub stiffness_scale: f64,
    pub exponent_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactSphereDef {
    pub id: String,
    pub body: String,
    pub center: Vec2,
    pub radius: f64,
}

/// Named point on a body reported in kinematics and observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationDef {
    pub name: String,
    pub body: String,
    pub point: Vec2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivationParams {
    pub tau_act: f64,
    pub tau_deact: f64,
    /// Activation of every muscle at episode reset.
    pub baseline: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TendonMode {
    Rigid,
    Compliant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TendonParams {
    pub mode: TendonMode,
    /// Linear tendon stiffness beyond slack, in F_max-iso per slack length.
    pub stiffness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDefinition {
    pub version: String,
    pub name: String,
    /// World gravity vector, m/s².
    pub gravity: Vec2,
    /// Sum of segment masses, kg. Checked on load.
    pub total_mass: f64,
    /// Generalized coordinates of the reset pose.
    pub initial_pose: Vec<f64>,
    pub activation: ActivationParams,
    pub tendon: TendonParams,
    pub curves: MuscleCurves,
    pub contact_params: ContactParams,
    pub bodies: Vec<BodyDef>,
    pub joints: Vec<JointDef>,
    pub muscles: Vec<MuscleDef>,
    pub ligaments: Vec<LigamentDef>,
    pub contact_spheres: Vec<ContactSphereDef>,
    pub stations: Vec<StationDef>,
}

/// Departure from the default 7-body/9-DOF/18-muscle profile.
#[derive(Debug, Clone, PartialEq)]
pub struct TopologyIssue(pub String);

impl std::fmt::Display for TopologyIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl ModelDefinition {
    pub fn dof(&self) -> usize {
        self.joints.iter().map(|j| j.kind.dof()).sum()
    }

    pub fn body_index(&self, name: &str) -> Option<usize> {
        self.bodies.iter().position(|b| b.name == name)
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn muscle_index(&self, name: &str) -> Option<usize> {
        self.muscles.iter().position(|m| m.name == name)
    }

    pub fn mass_sum(&self) -> f64 {
        self.bodies.iter().map(|b| b.mass).sum()
    }

    /// Body weight magnitude, N.
    pub fn body_weight(&self) -> f64 {
        self.mass_sum() * self.gravity[0].hypot(self.gravity[1])
    }

    /// Checks every schema invariant and returns departures from the default
    /// profile. Invariant violations are errors; profile departures are not.
    pub fn validate(&self) -> Result<Vec<TopologyIssue>> {
        if self.version != MODEL_VERSION {
            return Err(Error::schema("version", format!("expected \"{MODEL_VERSION}\", found \"{}\"", self.version)));
        }
        finite_all("gravity", &self.gravity)?;

        let act = &self.activation;
        positive("activation.tau_act", act.tau_act)?;
        positive("activation.tau_deact", act.tau_deact)?;
        if !(0.0..=1.0).contains(&act.baseline) {
            return Err(Error::schema("activation.baseline", "must lie in [0, 1]"));
        }
        positive("tendon.stiffness", self.tendon.stiffness)?;
        self.curves.validate()?;
        self.contact_params.validate()?;

        let mut bodies = HashSet::new();
        for (i, b) in self.bodies.iter().enumerate() {
            let at = format!("bodies[{i}]");
            if b.name == GROUND || !bodies.insert(b.name.as_str()) {
                return Err(Error::schema(format!("{at}.name"), format!("duplicate or reserved name \"{}\"", b.name)));
            }
            positive(&format!("{at}.mass"), b.mass)?;
            positive(&format!("{at}.inertia_zz"), b.inertia_zz)?;
            finite_all(&format!("{at}.com_offset"), &b.com_offset)?;
        }
        let mass = self.mass_sum();
        if (mass - self.total_mass).abs() > 1e-9 * self.total_mass.abs().max(1.0) {
            return Err(Error::schema(
                "total_mass",
                format!("documented {} kg but segments sum to {mass} kg", self.total_mass),
            ));
        }

        self.validate_joints(&bodies)?;
        if self.initial_pose.len() != self.dof() {
            return Err(Error::schema(
                "initial_pose",
                format!("expected {} coordinates, found {}", self.dof(), self.initial_pose.len()),
            ));
        }
        finite_all("initial_pose", &self.initial_pose)?;

        let mut names = HashSet::new();
        for (i, m) in self.muscles.iter().enumerate() {
            let at = format!("muscles[{i}]");
            if !names.insert(m.name.as_str()) {
                return Err(Error::schema(format!("{at}.name"), "duplicate muscle name"));
            }
            positive(&format!("{at}.f_max_iso"), m.f_max_iso)?;
            positive(&format!("{at}.optimal_fiber_length"), m.optimal_fiber_length)?;
            positive(&format!("{at}.tendon_slack_length"), m.tendon_slack_length)?;
            positive(&format!("{at}.max_contraction_velocity"), m.max_contraction_velocity)?;
            let alpha = m.pennation_angle_at_optimal;
            if !(0.0..std::f64::consts::FRAC_PI_2).contains(&alpha) {
                return Err(Error::schema(format!("{at}.pennation_angle_at_optimal"), "must lie in [0, pi/2)"));
            }
            if m.path.len() < 2 {
                return Err(Error::schema(format!("{at}.path"), "needs at least 2 points"));
            }
            for (k, p) in m.path.iter().enumerate() {
                if !bodies.contains(p.body.as_str()) {
                    return Err(Error::schema(format!("{at}.path[{k}].body"), format!("unknown body \"{}\"", p.body)));
                }
                finite_all(&format!("{at}.path[{k}].point"), &p.point)?;
            }
        }

        let mut ligament_joints = HashSet::new();
        for (i, l) in self.ligaments.iter().enumerate() {
            let at = format!("ligaments[{i}]");
            match self.joints.iter().find(|j| j.name == l.joint) {
                Some(j) if j.kind == JointKind::Revolute => {}
                Some(_) => return Err(Error::schema(format!("{at}.joint"), "ligaments need a revolute joint")),
                None => return Err(Error::schema(format!("{at}.joint"), format!("unknown joint \"{}\"", l.joint))),
            }
            if !ligament_joints.insert(l.joint.as_str()) {
                return Err(Error::schema(format!("{at}.joint"), "joint already has a ligament"));
            }
            if !(l.engage_angle_lo < l.engage_angle_hi) {
                return Err(Error::schema(format!("{at}.engage_angle_lo"), "must be below engage_angle_hi"));
            }
            positive(&format!("{at}.stiffness_scale"), l.stiffness_scale)?;
            if !(l.exponent_rate.is_finite() && l.exponent_rate >= 0.0) {
                return Err(Error::schema(format!("{at}.exponent_rate"), "must be finite and >= 0"));
            }
        }

        let mut spheres = HashSet::new();
        for (i, s) in self.contact_spheres.iter().enumerate() {
            let at = format!("contact_spheres[{i}]");
            if !spheres.insert(s.id.as_str()) {
                return Err(Error::schema(format!("{at}.id"), "duplicate sphere id"));
            }
            if !bodies.contains(s.body.as_str()) {
                return Err(Error::schema(format!("{at}.body"), format!("unknown body \"{}\"", s.body)));
            }
            positive(&format!("{at}.radius"), s.radius)?;
            finite_all(&format!("{at}.center"), &s.center)?;
        }
        for (i, b) in self.bodies.iter().enumerate() {
            for (k, id) in b.attached_contact_spheres.iter().enumerate() {
                let at = format!("bodies[{i}].attached_contact_spheres[{k}]");
                match self.contact_spheres.iter().find(|s| &s.id == id) {
                    None => return Err(Error::schema(at, format!("unknown sphere \"{id}\""))),
                    Some(s) if s.body != b.name => {
                        return Err(Error::schema(at, format!("sphere \"{id}\" belongs to \"{}\"", s.body)))
                    }
                    _ => {}
                }
            }
        }

        let mut stations = HashSet::new();
        for (i, s) in self.stations.iter().enumerate() {
            let at = format!("stations[{i}]");
            if !stations.insert(s.name.as_str()) {
                return Err(Error::schema(format!("{at}.name"), "duplicate station name"));
            }
            if !bodies.contains(s.body.as_str()) {
                return Err(Error::schema(format!("{at}.body"), format!("unknown body \"{}\"", s.body)));
            }
        }

        Ok(self.profile_issues())
    }

    fn validate_joints(&self, bodies: &HashSet<&str>) -> Result<()> {
        let mut names = HashSet::new();
        let mut child_of: HashMap<&str, &str> = HashMap::new();
        let mut roots = 0;
        for (i, j) in self.joints.iter().enumerate() {
            let at = format!("joints[{i}]");
            if !names.insert(j.name.as_str()) {
                return Err(Error::schema(format!("{at}.name"), "duplicate joint name"));
            }
            if j.parent != GROUND && !bodies.contains(j.parent.as_str()) {
                return Err(Error::schema(format!("{at}.parent"), format!("unknown body \"{}\"", j.parent)));
            }
            if !bodies.contains(j.child.as_str()) {
                return Err(Error::schema(format!("{at}.child"), format!("unknown body \"{}\"", j.child)));
            }
            if child_of.insert(j.child.as_str(), j.parent.as_str()).is_some() {
                return Err(Error::schema(format!("{at}.child"), "body has two parent joints"));
            }
            finite_all(&format!("{at}.anchor_parent"), &j.anchor_parent)?;
            finite_all(&format!("{at}.anchor_child"), &j.anchor_child)?;
            match j.kind {
                JointKind::PlanarFree => {
                    if j.parent != GROUND {
                        return Err(Error::schema(
                            format!("{at}.parent"),
                            "the planar_free joint must attach to ground",
                        ));
                    }
                    roots += 1;
                }
                JointKind::Revolute => {
                    if j.parent == GROUND {
                        return Err(Error::schema(format!("{at}.parent"), "revolute joints must attach to a body"));
                    }
                    if let Some([lo, hi]) = j.range {
                        if !(lo < hi) {
                            return Err(Error::schema(format!("{at}.range"), "min must be below max"));
                        }
                    }
                }
            }
        }
        if roots != 1 {
            return Err(Error::schema("joints", format!("expected one planar_free joint, found {roots}")));
        }
        for b in bodies {
            // Walk to ground; a cycle or dangling body never gets there.
            let mut cur = *b;
            let mut hops = 0;
            while cur != GROUND {
                cur = match child_of.get(cur) {
                    Some(p) => p,
                    None => return Err(Error::schema("joints", format!("body \"{b}\" has no parent joint"))),
                };
                hops += 1;
                if hops > bodies.len() {
                    return Err(Error::schema("joints", format!("cycle through body \"{b}\"")));
                }
            }
        }
        Ok(())
    }

    fn profile_issues(&self) -> Vec<TopologyIssue> {
        let mut out = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                out.push(TopologyIssue(msg));
            }
        };
        check(
            self.bodies.len() == profile::BODIES,
            format!("expected {} bodies, found {}", profile::BODIES, self.bodies.len()),
        );
        let revolute = self.joints.iter().filter(|j| j.kind == JointKind::Revolute).count();
        check(
            revolute == profile::REVOLUTE_JOINTS,
            format!("expected {} revolute joints, found {revolute}", profile::REVOLUTE_JOINTS),
        );
        check(self.dof() == profile::DOF, format!("expected {} DOF, found {}", profile::DOF, self.dof()));
        check(
            self.muscles.len() == profile::MUSCLES,
            format!("expected {} muscles, found {}", profile::MUSCLES, self.muscles.len()),
        );
        check(
            self.contact_spheres.len() == profile::CONTACT_SPHERES,
            format!("expected {} contact spheres, found {}", profile::CONTACT_SPHERES, self.contact_spheres.len()),
        );
        check(
            self.ligaments.len() == profile::LIGAMENTS,
            format!("expected {} ligaments, found {}", profile::LIGAMENTS, self.ligaments.len()),
        );
        for m in &self.muscles {
            check(
                (profile::F_MAX_ISO_MIN..=profile::F_MAX_ISO_MAX).contains(&m.f_max_iso),
                format!("muscle \"{}\" f_max_iso {} outside [557, 9594] N", m.name, m.f_max_iso),
            );
        }
        for s in profile::STATIONS {
            check(self.stations.iter().any(|st| st.name == s), format!("missing station \"{s}\""));
        }
        out
    }
}

fn positive(path: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::schema(path, format!("must be finite and > 0, found {v}")))
    }
}

fn finite_all(path: &str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::schema(path, "values must be finite"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strictness {
    /// Profile departures are logged and returned.
    #[default]
    Lenient,
    /// Profile departures are errors.
    Strict,
}

/// Parses and validates a model document, returning any profile departures.
pub fn load_model_with(document: &str, strictness: Strictness) -> Result<(ModelDefinition, Vec<TopologyIssue>)> {
    let model: ModelDefinition = toml::from_str(document).map_err(|e| {
        let path = e.span().map(|s| format!("bytes {}..{}", s.start, s.end)).unwrap_or_default();
        Error::schema(path, e.message().to_string())
    })?;
    let issues = model.validate()?;
    if strictness == Strictness::Strict && !issues.is_empty() {
        let joined: Vec<String> = issues.iter().map(|i| i.0.clone()).collect();
        return Err(Error::Topology(joined.join("; ")));
    }
    for issue in &issues {
        log::warn!("model \"{}\": {issue}", model.name);
    }
    Ok((model, issues))
}

pub fn load_model(document: &str) -> Result<ModelDefinition> {
    load_model_with(document, Strictness::Lenient).map(|(m, _)| m)
}

pub fn load_model_file(path: &std::path::Path) -> Result<ModelDefinition> {
    load_model(&std::fs::read_to_string(path)?)
}

/// Canonical serialization: sorted keys, shortest round-trip floats.
pub fn save_model(m: &ModelDefinition) -> String {
    let value = toml::Value::try_from(m).expect("model definitions always serialize");
    toml::to_string(&value).expect("toml values always serialize")
}

/// The shipped planar runner (75 kg, 1.8 m adult).
pub fn default_model() -> ModelDefinition {
    load_model_with(DEFAULT_MODEL_TOML, Strictness::Strict).map(|(m, _)| m).expect("embedded default model is valid")
}

/// Raw text of the embedded default model file.
pub fn default_model_document() -> &'static str {
    DEFAULT_MODEL_TOML
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_model_has_competition_topology() {
        let m = default_model();
        assert_eq!(m.bodies.len(), 7);
        assert_eq!(m.dof(), 9);
        assert_eq!(m.muscles.len(), 18);
        assert_eq!(m.contact_spheres.len(), 4);
        assert!(m.validate().unwrap().is_empty());
    }

    #[test]
    fn muscle_forces_span_documented_range() {
        let m = default_model();
        for mu in &m.muscles {
            assert!((557.0..=9594.0).contains(&mu.f_max_iso), "{}", mu.name);
        }
        let lo = m.muscles.iter().map(|x| x.f_max_iso).fold(f64::INFINITY, f64::min);
        let hi = m.muscles.iter().map(|x| x.f_max_iso).fold(0.0, f64::max);
        assert_eq!((lo, hi), (557.0, 9594.0));
    }

    #[test]
    fn total_mass_matches_segments() {
        let m = default_model();
        // 50.85 + 2 * (7.5 + 3.4875 + 1.0875)
        assert!((m.mass_sum() - 75.0).abs() < 1e-12);
        assert_eq!(m.total_mass, 75.0);
    }

    #[test]
    fn default_model_is_deterministic() {
        assert_eq!(default_model(), default_model());
    }

    #[test]
    fn unknown_body_in_muscle_path_is_rejected() {
        let doc = default_model_document().replacen("body = \"femur_r\"", "body = \"femur_x\"", 1);
        let err = load_model(&doc).unwrap_err();
        match err {
            Error::Schema { path, message } => {
                assert!(message.contains("femur_x"), "{message}");
                assert!(!path.is_empty());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_field_is_schema_error() {
        let doc = default_model_document().replacen("total_mass = 75.0", "", 1);
        assert!(matches!(load_model(&doc), Err(Error::Schema { .. })));
    }

    #[test]
    fn total_mass_mismatch_is_rejected() {
        let doc = default_model_document().replacen("total_mass = 75.0", "total_mass = 80.0", 1);
        let err = load_model(&doc).unwrap_err();
        assert!(matches!(err, Error::Schema { ref path, .. } if path == "total_mass"), "{err}");
    }

    #[test]
    fn topology_departure_only_fatal_when_strict() {
        let mut m = default_model();
        m.muscles.pop();
        let text = save_model(&m);
        let (loaded, issues) = load_model_with(&text, Strictness::Lenient).unwrap();
        assert_eq!(loaded.muscles.len(), 17);
        assert_eq!(issues.len(), 1);
        assert!(matches!(load_model_with(&text, Strictness::Strict), Err(Error::Topology(_))));
    }

    #[test]
    fn dof_departure_reported() {
        let mut m = default_model();
        let idx = m.joints.iter().position(|j| j.name == "ankle_l").unwrap();
        m.joints.remove(idx);
        // foot_l now has no parent: structural, always fatal
        assert!(m.validate().is_err());
    }

    #[test]
    fn save_round_trips_and_is_canonical() {
        let m = default_model();
        let a = save_model(&m);
        let b = save_model(&m);
        assert_eq!(a, b);
        assert_eq!(load_model(&a).unwrap(), m);
    }

    #[test]
    fn editing_mass_changes_one_line() {
        let m = default_model();
        let mut edited = m.clone();
        edited.bodies[1].mass += 0.5;
        let a = save_model(&m);
        let b = save_model(&edited);
        assert_eq!(a.lines().count(), b.lines().count());
        let diff: Vec<_> = a.lines().zip(b.lines()).filter(|(x, y)| x != y).collect();
        assert_eq!(diff.len(), 1, "{diff:?}");
        assert_eq!(diff[0], ("mass = 7.5", "mass = 8.0"));
    }

    #[test]
    fn pennation_out_of_range_rejected() {
        let mut m = default_model();
        m.muscles[0].pennation_angle_at_optimal = std::f64::consts::FRAC_PI_2;
        assert!(m.validate().is_err());
    }

    #[test]
    fn inverted_ligament_band_rejected() {
        let mut m = default_model();
        let l = &mut m.ligaments[0];
        std::mem::swap(&mut l.engage_angle_lo, &mut l.engage_angle_hi);
        assert!(m.validate().is_err());
    }
}

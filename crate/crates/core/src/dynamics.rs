//! Planar articulated rigid-body dynamics.
//!
//! The skeleton is a tree rooted at a planar free joint (x, y, rotation) with
//! revolute joints below it. Every body rotates in the plane, so a point `p`
//! on body `b` has the Jacobian column `z x (p - C_k)` for each rotational
//! coordinate `k` on the path from the root to `b`, where `C_k` is the joint
//! center, and the unit axes for the two root translations.
//!
//! Equations of motion are `M(q) qddot + c(q, qdot) = tau`, where `tau`
//! collects every applied generalized force including gravity. `M` comes from
//! composite-rigid-body accumulation and `c` from a velocity-product pass.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Vector2};

use crate::contact::{self, ContactSample, Obstacle};
use crate::error::{Error, Result};
use crate::model::{profile, JointKind, LigamentDef, ModelDefinition, TendonMode, GROUND};
use crate::muscle::{self, MuscleForce, MuscleState};

pub type V2 = Vector2<f64>;

/// Control decision period, s.
pub const CONTROL_DT: f64 = 0.010;
pub const SUBSTEPS_PER_CONTROL: usize = 50;
/// Integrator step, s.
pub const SUBSTEP_DT: f64 = CONTROL_DT / SUBSTEPS_PER_CONTROL as f64;
/// Any state entry beyond this magnitude aborts the simulation.
pub const DIVERGENCE_LIMIT: f64 = 1e6;
/// Fixed-point refinements of the velocity used in `dT/dq`.
const MOMENTUM_PASSES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DofKind {
    TranslateX,
    TranslateY,
    Rotate,
}

#[derive(Debug, Clone)]
struct CompiledBody {
    parent: Option<usize>,
    /// First coordinate of the joint that attaches this body.
    dof: usize,
    kind: JointKind,
    anchor_parent: V2,
    anchor_child: V2,
    mass: f64,
    inertia: f64,
    com: V2,
    /// Coordinates moving this body, root first.
    chain: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct CompiledSphere {
    pub body: usize,
    pub center: V2,
    pub radius: f64,
}

#[derive(Debug, Clone)]
pub struct CompiledStation {
    pub name: String,
    pub body: usize,
    pub point: V2,
}

#[derive(Debug, Clone)]
pub struct CompiledLigament {
    pub dof: usize,
    pub def: LigamentDef,
}

/// A validated model with names resolved to indices.
#[derive(Debug, Clone)]
pub struct CompiledModel {
    def: ModelDefinition,
    bodies: Vec<CompiledBody>,
    order: Vec<usize>,
    dof_kinds: Vec<DofKind>,
    dof_body: Vec<usize>,
    coordinate_names: Vec<String>,
    muscle_paths: Vec<Vec<(usize, V2)>>,
    spheres: Vec<CompiledSphere>,
    stations: Vec<CompiledStation>,
    ligaments: Vec<CompiledLigament>,
    total_mass: f64,
}

fn v2(a: [f64; 2]) -> V2 {
    V2::new(a[0], a[1])
}

/// `z x r`
#[inline]
fn perp(r: V2) -> V2 {
    V2::new(-r.y, r.x)
}

#[inline]
fn cross(a: V2, b: V2) -> f64 {
    a.x * b.y - a.y * b.x
}

#[inline]
fn rotate(angle: f64, v: V2) -> V2 {
    let (s, c) = angle.sin_cos();
    V2::new(c * v.x - s * v.y, s * v.x + c * v.y)
}

impl CompiledModel {
    pub fn new(def: ModelDefinition) -> Result<Self> {
        def.validate()?;
        let body_idx = |name: &str| def.body_index(name).expect("validated reference");

        let n = def.bodies.len();
        let mut joint_of = vec![usize::MAX; n];
        let mut dof_of_joint = Vec::with_capacity(def.joints.len());
        let mut dof_kinds = Vec::new();
        let mut dof_body = Vec::new();
        let mut coordinate_names = Vec::new();
        for (j, jd) in def.joints.iter().enumerate() {
            let child = body_idx(&jd.child);
            joint_of[child] = j;
            dof_of_joint.push(dof_kinds.len());
            match jd.kind {
                JointKind::PlanarFree => {
                    dof_kinds.extend([DofKind::TranslateX, DofKind::TranslateY, DofKind::Rotate]);
                    dof_body.extend([child; 3]);
                    for suffix in ["x", "y", "rotation"] {
                        coordinate_names.push(format!("{}_{suffix}", jd.child));
                    }
                }
                JointKind::Revolute => {
                    dof_kinds.push(DofKind::Rotate);
                    dof_body.push(child);
                    coordinate_names.push(jd.name.clone());
                }
            }
        }

        let mut bodies: Vec<CompiledBody> = (0..n)
            .map(|b| {
                let jd = &def.joints[joint_of[b]];
                let bd = &def.bodies[b];
                CompiledBody {
                    parent: (jd.parent != GROUND).then(|| body_idx(&jd.parent)),
                    dof: dof_of_joint[joint_of[b]],
                    kind: jd.kind,
                    anchor_parent: v2(jd.anchor_parent),
                    anchor_child: v2(jd.anchor_child),
                    mass: bd.mass,
                    inertia: bd.inertia_zz,
                    com: v2(bd.com_offset),
                    chain: Vec::new(),
                }
            })
            .collect();

        // Parents before children.
        let mut order = Vec::with_capacity(n);
        let mut placed = vec![false; n];
        while order.len() < n {
            for b in 0..n {
                if !placed[b] && bodies[b].parent.is_none_or(|p| placed[p]) {
                    placed[b] = true;
                    order.push(b);
                }
            }
        }
        for &b in &order {
            let mut chain = match bodies[b].parent {
                Some(p) => bodies[p].chain.clone(),
                None => Vec::new(),
            };
            chain.extend(bodies[b].dof..bodies[b].dof + bodies[b].kind.dof());
            bodies[b].chain = chain;
        }

        let muscle_paths =
            def.muscles.iter().map(|m| m.path.iter().map(|p| (body_idx(&p.body), v2(p.point))).collect()).collect();
        let spheres = def
            .contact_spheres
            .iter()
            .map(|s| CompiledSphere { body: body_idx(&s.body), center: v2(s.center), radius: s.radius })
            .collect();
        let stations = def
            .stations
            .iter()
            .map(|s| CompiledStation { name: s.name.clone(), body: body_idx(&s.body), point: v2(s.point) })
            .collect();
        let ligaments = def
            .ligaments
            .iter()
            .map(|l| CompiledLigament {
                dof: dof_of_joint[def.joint_index(&l.joint).expect("validated reference")],
                def: l.clone(),
            })
            .collect();
        let total_mass = def.mass_sum();
        Ok(Self {
            def,
            bodies,
            order,
            dof_kinds,
            dof_body,
            coordinate_names,
            muscle_paths,
            spheres,
            stations,
            ligaments,
            total_mass,
        })
    }

    /// Compiles and additionally requires the 7-body/9-DOF/18-muscle profile.
    pub fn new_strict(def: ModelDefinition) -> Result<Self> {
        let issues = def.validate()?;
        if !issues.is_empty() {
            let joined: Vec<String> = issues.into_iter().map(|i| i.0).collect();
            return Err(Error::Topology(joined.join("; ")));
        }
        Self::new(def)
    }

    pub fn default_runner() -> Arc<Self> {
        Arc::new(Self::new(crate::model::default_model()).expect("default model compiles"))
    }

    pub fn definition(&self) -> &ModelDefinition {
        &self.def
    }

    pub fn dof(&self) -> usize {
        self.dof_kinds.len()
    }

    pub fn dof_kinds(&self) -> &[DofKind] {
        &self.dof_kinds
    }

    pub fn coordinate_names(&self) -> &[String] {
        &self.coordinate_names
    }

    pub fn muscle_paths(&self) -> &[Vec<(usize, V2)>] {
        &self.muscle_paths
    }

    pub fn spheres(&self) -> &[CompiledSphere] {
        &self.spheres
    }

    pub fn stations(&self) -> &[CompiledStation] {
        &self.stations
    }

    pub fn station_index(&self, name: &str) -> Option<usize> {
        self.stations.iter().position(|s| s.name == name)
    }

    pub fn ligaments(&self) -> &[CompiledLigament] {
        &self.ligaments
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn body_count(&self) -> usize {
        self.bodies.len()
    }

    pub fn body_mass(&self, body: usize) -> f64 {
        self.bodies[body].mass
    }

    pub fn body_inertia(&self, body: usize) -> f64 {
        self.bodies[body].inertia
    }

    /// Coordinates that move `body`, root first.
    pub fn body_chain(&self, body: usize) -> &[usize] {
        &self.bodies[body].chain
    }

    pub fn gravity(&self) -> V2 {
        v2(self.def.gravity)
    }

    /// Body owning a coordinate.
    pub fn dof_body(&self, dof: usize) -> usize {
        self.dof_body[dof]
    }

    /// Adds `J(p)^T f` for a world point `p` fixed on `body` to `out`.
    pub fn add_point_force(&self, kin: &Kinematics, body: usize, p: &V2, f: &V2, out: &mut [f64]) {
        for &k in &self.bodies[body].chain {
            out[k] += match self.dof_kinds[k] {
                DofKind::TranslateX => f.x,
                DofKind::TranslateY => f.y,
                DofKind::Rotate => cross(p - kin.centers[k], *f),
            };
        }
    }

    /// Jacobian of a world point fixed on `body`, one column per coordinate.
    pub fn point_jacobian(&self, kin: &Kinematics, body: usize, p: &V2) -> Vec<V2> {
        let mut cols = vec![V2::zeros(); self.dof()];
        for &k in &self.bodies[body].chain {
            cols[k] = match self.dof_kinds[k] {
                DofKind::TranslateX => V2::new(1.0, 0.0),
                DofKind::TranslateY => V2::new(0.0, 1.0),
                DofKind::Rotate => perp(p - kin.centers[k]),
            };
        }
        cols
    }
}

/// Full simulation state.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub q: Vec<f64>,
    pub qdot: Vec<f64>,
    pub activations: Vec<f64>,
    /// Used only in compliant-tendon mode.
    pub fiber_lengths: Vec<f64>,
    pub time: f64,
}

impl SimState {
    /// All coordinates and velocities zero, activations at zero.
    pub fn zero(model: &CompiledModel) -> Self {
        let nm = model.definition().muscles.len();
        let mut s = Self {
            q: vec![0.0; model.dof()],
            qdot: vec![0.0; model.dof()],
            activations: vec![0.0; nm],
            fiber_lengths: vec![0.0; nm],
            time: 0.0,
        };
        s.fiber_lengths = rigid_fiber_lengths(model, &s);
        s
    }

    /// The model's documented reset pose at rest with baseline activation.
    pub fn initial(model: &CompiledModel) -> Self {
        let def = model.definition();
        let mut s = Self::zero(model);
        s.q.copy_from_slice(&def.initial_pose);
        s.activations.fill(def.activation.baseline);
        s.fiber_lengths = rigid_fiber_lengths(model, &s);
        s
    }

    /// At rest in pose `q` with zero activation.
    pub fn at_pose(model: &CompiledModel, q: &[f64]) -> Self {
        let mut s = Self::zero(model);
        s.q.copy_from_slice(q);
        s.fiber_lengths = rigid_fiber_lengths(model, &s);
        s
    }

    pub fn check(&self, model: &CompiledModel) -> Result<()> {
        let nm = model.definition().muscles.len();
        if self.q.len() != model.dof() || self.qdot.len() != model.dof() {
            return Err(Error::InvalidArgument(format!("state needs {} coordinates", model.dof())));
        }
        if self.activations.len() != nm || self.fiber_lengths.len() != nm {
            return Err(Error::InvalidArgument(format!("state needs {nm} muscle entries")));
        }
        let finite =
            self.q.iter().chain(&self.qdot).chain(&self.activations).chain(&self.fiber_lengths).all(|v| v.is_finite());
        if !finite || !self.time.is_finite() || self.time < 0.0 {
            return Err(Error::InvalidArgument("state entries must be finite, time >= 0".into()));
        }
        if self.activations.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::InvalidArgument("activations must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

fn rigid_fiber_lengths(model: &CompiledModel, state: &SimState) -> Vec<f64> {
    let kin = forward_kinematics(model, state);
    model
        .definition()
        .muscles
        .iter()
        .enumerate()
        .map(|(i, md)| {
            let mut scratch = vec![0.0; model.dof()];
            let l = muscle::accumulate_path(model, &kin, i, 0.0, &mut scratch);
            ((l - md.tendon_slack_length) / md.pennation_angle_at_optimal.cos()).max(0.01 * md.optimal_fiber_length)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyKinematics {
    /// World position of the body frame origin.
    pub origin: V2,
    pub angle: f64,
    pub com: V2,
    /// COM velocity.
    pub velocity: V2,
    pub angular_velocity: f64,
    pub origin_velocity: V2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationKinematics {
    pub position: V2,
    pub velocity: V2,
}

/// World-frame poses and velocities.
#[derive(Debug, Clone, PartialEq)]
pub struct Kinematics {
    pub bodies: Vec<BodyKinematics>,
    /// Same order as the model's stations.
    pub stations: Vec<StationKinematics>,
    pub com: V2,
    pub com_velocity: V2,
    /// World rotation center of each coordinate (unused for translations).
    centers: Vec<V2>,
}

impl Kinematics {
    pub fn world_point(&self, body: usize, local: V2) -> V2 {
        let b = &self.bodies[body];
        b.origin + rotate(b.angle, local)
    }

    /// Velocity of the material point of `body` currently at world `p`.
    pub fn point_velocity(&self, body: usize, p: &V2) -> V2 {
        let b = &self.bodies[body];
        b.origin_velocity + perp(p - b.origin) * b.angular_velocity
    }

    pub fn joint_center(&self, dof: usize) -> V2 {
        self.centers[dof]
    }

    /// Translational plus rotational kinetic energy.
    pub fn kinetic_energy(&self, model: &CompiledModel) -> f64 {
        self.bodies
            .iter()
            .enumerate()
            .map(|(i, b)| {
                0.5 * model.body_mass(i) * b.velocity.norm_squared()
                    + 0.5 * model.body_inertia(i) * b.angular_velocity * b.angular_velocity
            })
            .sum()
    }

    /// Gravitational potential energy relative to the world origin.
    pub fn potential_energy(&self, model: &CompiledModel) -> f64 {
        let g = model.gravity();
        -self.bodies.iter().enumerate().map(|(i, b)| model.body_mass(i) * g.dot(&b.com)).sum::<f64>()
    }
}

/// Composes the chain from the root outward.
pub fn forward_kinematics(model: &CompiledModel, state: &SimState) -> Kinematics {
    let q = &state.q;
    let qd = &state.qdot;
    let zero = BodyKinematics {
        origin: V2::zeros(),
        angle: 0.0,
        com: V2::zeros(),
        velocity: V2::zeros(),
        angular_velocity: 0.0,
        origin_velocity: V2::zeros(),
    };
    let mut bodies = vec![zero; model.bodies.len()];
    let mut centers = vec![V2::zeros(); model.dof()];
    for &b in &model.order {
        let cb = &model.bodies[b];
        let k = cb.dof;
        let (joint, joint_vel, angle, omega) = match cb.kind {
            JointKind::PlanarFree => {
                let base = match cb.parent {
                    Some(p) => bodies[p].origin + rotate(bodies[p].angle, cb.anchor_parent),
                    None => cb.anchor_parent,
                };
                let c = base + V2::new(q[k], q[k + 1]);
                centers[k + 2] = c;
                (c, V2::new(qd[k], qd[k + 1]), q[k + 2], qd[k + 2])
            }
            JointKind::Revolute => {
                let p = &bodies[cb.parent.expect("revolute joints have a parent")];
                let j = p.origin + rotate(p.angle, cb.anchor_parent);
                let vj = p.origin_velocity + perp(j - p.origin) * p.angular_velocity;
                centers[k] = j;
                (j, vj, p.angle + q[k], p.angular_velocity + qd[k])
            }
        };
        let origin = joint - rotate(angle, cb.anchor_child);
        let origin_velocity = joint_vel + perp(origin - joint) * omega;
        let com = origin + rotate(angle, cb.com);
        let velocity = origin_velocity + perp(com - origin) * omega;
        bodies[b] = BodyKinematics { origin, angle, com, velocity, angular_velocity: omega, origin_velocity };
    }
    let mut com = V2::zeros();
    let mut com_velocity = V2::zeros();
    for (i, b) in bodies.iter().enumerate() {
        com += b.com * model.bodies[i].mass;
        com_velocity += b.velocity * model.bodies[i].mass;
    }
    com /= model.total_mass;
    com_velocity /= model.total_mass;
    let stations = model
        .stations
        .iter()
        .map(|s| {
            let b = &bodies[s.body];
            let position = b.origin + rotate(b.angle, s.point);
            let velocity = b.origin_velocity + perp(position - b.origin) * b.angular_velocity;
            StationKinematics { position, velocity }
        })
        .collect();
    Kinematics { bodies, stations, com, com_velocity, centers }
}

/// Mass, first moment and rotational inertia of a body subtree, taken about
/// a reference point `r0` to keep magnitudes small far from the origin.
#[derive(Debug, Clone, Copy)]
struct Composite {
    mass: f64,
    moment: V2,
    inertia: f64,
}

/// Joint-space inertia matrix by composite-rigid-body accumulation.
pub fn mass_matrix(model: &CompiledModel, state: &SimState) -> DMatrix<f64> {
    let kin = forward_kinematics(model, state);
    mass_matrix_at(model, &kin)
}

pub(crate) fn mass_matrix_at(model: &CompiledModel, kin: &Kinematics) -> DMatrix<f64> {
    let n = model.dof();
    let r0 = kin.centers[model.bodies[model.order[0]].dof + 2];
    let mut comp: Vec<Composite> = model
        .bodies
        .iter()
        .zip(&kin.bodies)
        .map(|(cb, bk)| {
            let c = bk.com - r0;
            Composite { mass: cb.mass, moment: c * cb.mass, inertia: cb.inertia + cb.mass * c.norm_squared() }
        })
        .collect();
    for &b in model.order.iter().rev() {
        if let Some(p) = model.bodies[b].parent {
            let child = comp[b];
            let parent = &mut comp[p];
            parent.mass += child.mass;
            parent.moment += child.moment;
            parent.inertia += child.inertia;
        }
    }

    let mut m = DMatrix::zeros(n, n);
    for l in 0..n {
        let s = comp[model.dof_body[l]];
        for &k in &model.bodies[model.dof_body[l]].chain {
            if model.dof_body[k] == model.dof_body[l] && k > l {
                continue;
            }
            let v = composite_entry(model, kin, r0, &s, k, l);
            m[(k, l)] = v;
            m[(l, k)] = v;
        }
    }
    m
}

fn composite_entry(model: &CompiledModel, kin: &Kinematics, r0: V2, s: &Composite, k: usize, l: usize) -> f64 {
    use DofKind::*;
    let center = |d: usize| kin.centers[d] - r0;
    match (model.dof_kinds[k], model.dof_kinds[l]) {
        (TranslateX, TranslateX) | (TranslateY, TranslateY) => s.mass,
        (TranslateX, TranslateY) | (TranslateY, TranslateX) => 0.0,
        (TranslateX, Rotate) => -(s.moment.y - s.mass * center(l).y),
        (Rotate, TranslateX) => -(s.moment.y - s.mass * center(k).y),
        (TranslateY, Rotate) => s.moment.x - s.mass * center(l).x,
        (Rotate, TranslateY) => s.moment.x - s.mass * center(k).x,
        (Rotate, Rotate) => {
            let (ck, cl) = (center(k), center(l));
            s.inertia - s.moment.dot(&ck) - s.moment.dot(&cl) + s.mass * ck.dot(&cl)
        }
    }
}

/// Projects per-body COM force vectors onto the coordinates:
/// `out_k = sum_b (d c_b / d q_k) . f_b`.
fn project_com_forces(model: &CompiledModel, kin: &Kinematics, forces: &[V2]) -> Vec<f64> {
    let r0 = kin.centers[model.bodies[model.order[0]].dof + 2];
    let mut f_sum: Vec<V2> = forces.to_vec();
    let mut torque: Vec<f64> = kin.bodies.iter().zip(forces).map(|(b, f)| cross(b.com - r0, *f)).collect();
    for &b in model.order.iter().rev() {
        if let Some(p) = model.bodies[b].parent {
            let (fb, tb) = (f_sum[b], torque[b]);
            f_sum[p] += fb;
            torque[p] += tb;
        }
    }
    (0..model.dof())
        .map(|k| {
            let b = model.dof_body[k];
            match model.dof_kinds[k] {
                DofKind::TranslateX => f_sum[b].x,
                DofKind::TranslateY => f_sum[b].y,
                DofKind::Rotate => torque[b] - cross(kin.centers[k] - r0, f_sum[b]),
            }
        })
        .collect()
}

/// Coriolis and centrifugal terms `c(q, qdot)`.
pub fn velocity_product_forces(model: &CompiledModel, kin: &Kinematics) -> Vec<f64> {
    // Body COM accelerations with qddot = 0: only centripetal terms survive.
    let mut origin_acc = vec![V2::zeros(); model.bodies.len()];
    let mut inertial = vec![V2::zeros(); model.bodies.len()];
    for &b in &model.order {
        let cb = &model.bodies[b];
        let bk = &kin.bodies[b];
        let w2 = bk.angular_velocity * bk.angular_velocity;
        let joint_acc = match cb.parent {
            Some(p) => {
                let pk = &kin.bodies[p];
                let j = pk.origin + rotate(pk.angle, cb.anchor_parent);
                origin_acc[p] - (j - pk.origin) * (pk.angular_velocity * pk.angular_velocity)
            }
            None => V2::zeros(),
        };
        let joint = match cb.kind {
            JointKind::PlanarFree => kin.centers[cb.dof + 2],
            JointKind::Revolute => kin.centers[cb.dof],
        };
        origin_acc[b] = joint_acc - (bk.origin - joint) * w2;
        let com_acc = origin_acc[b] - (bk.com - bk.origin) * w2;
        inertial[b] = com_acc * cb.mass;
    }
    project_com_forces(model, kin, &inertial)
}

/// Generalized gravity forces.
pub fn gravity_forces(model: &CompiledModel, kin: &Kinematics) -> Vec<f64> {
    let g = model.gravity();
    let weights: Vec<V2> = model.bodies.iter().map(|b| g * b.mass).collect();
    project_com_forces(model, kin, &weights)
}

/// Applied generalized forces by source. The total is their elementwise sum.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizedForces {
    pub muscle: Vec<f64>,
    pub ligament: Vec<f64>,
    pub contact: Vec<f64>,
    pub gravity: Vec<f64>,
}

impl GeneralizedForces {
    pub fn zeros(n: usize) -> Self {
        Self { muscle: vec![0.0; n], ligament: vec![0.0; n], contact: vec![0.0; n], gravity: vec![0.0; n] }
    }

    pub fn tau(&self) -> Vec<f64> {
        (0..self.muscle.len()).map(|i| self.muscle[i] + self.ligament[i] + self.contact[i] + self.gravity[i]).collect()
    }
}

/// Coordinates to hold fixed; an empty mask locks nothing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DofMask(pub Vec<bool>);

impl DofMask {
    pub fn is_locked(&self, k: usize) -> bool {
        self.0.get(k).copied().unwrap_or(false)
    }

    /// Locks every coordinate except `free`.
    pub fn all_but(n: usize, free: &[usize]) -> Self {
        Self((0..n).map(|k| !free.contains(&k)).collect())
    }
}

/// Solves `M qddot = tau - c` over the unlocked coordinates; locked
/// coordinates get zero acceleration.
pub fn forward_dynamics(model: &CompiledModel, state: &SimState, tau: &GeneralizedForces) -> Vec<f64> {
    let kin = forward_kinematics(model, state);
    forward_dynamics_at(model, &kin, &tau.tau(), &DofMask::default())
}

pub fn forward_dynamics_locked(
    model: &CompiledModel,
    state: &SimState,
    tau: &GeneralizedForces,
    locked: &DofMask,
) -> Vec<f64> {
    let kin = forward_kinematics(model, state);
    forward_dynamics_at(model, &kin, &tau.tau(), locked)
}

pub(crate) fn forward_dynamics_at(model: &CompiledModel, kin: &Kinematics, tau: &[f64], locked: &DofMask) -> Vec<f64> {
    let c = velocity_product_forces(model, kin);
    let rhs: Vec<f64> = tau.iter().zip(&c).map(|(t, c)| t - c).collect();
    ReducedInertia::new(model, kin, locked).solve(&rhs)
}

/// Cholesky factor of the mass matrix restricted to unlocked coordinates.
struct ReducedInertia {
    n: usize,
    free: Vec<usize>,
    full: DMatrix<f64>,
    factor: Option<nalgebra::linalg::Cholesky<f64, nalgebra::Dyn>>,
}

impl ReducedInertia {
    fn new(model: &CompiledModel, kin: &Kinematics, locked: &DofMask) -> Self {
        let full = mass_matrix_at(model, kin);
        let free: Vec<usize> = (0..model.dof()).filter(|&k| !locked.is_locked(k)).collect();
        let factor = (!free.is_empty()).then(|| {
            DMatrix::from_fn(free.len(), free.len(), |i, j| full[(free[i], free[j])])
                .cholesky()
                .expect("mass matrix is symmetric positive definite")
        });
        Self { n: model.dof(), free, full, factor }
    }

    /// Solves over the free block; locked entries of the result are zero.
    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        if let Some(f) = &self.factor {
            let b = DVector::from_iterator(self.free.len(), self.free.iter().map(|&k| rhs[k]));
            let x = f.solve(&b);
            for (i, &k) in self.free.iter().enumerate() {
                out[k] = x[i];
            }
        }
        out
    }

    /// `M qdot` over the free block.
    fn momentum(&self, qdot: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for &k in &self.free {
            out[k] = self.free.iter().map(|&l| self.full[(k, l)] * qdot[l]).sum();
        }
        out
    }
}

/// Partial derivative of kinetic energy with respect to each coordinate at
/// fixed `qdot`. For a rotation about center `C` this equals
/// `(sum of subtree momenta) x v_C`; translations do not enter `T`.
pub fn kinetic_energy_gradient(model: &CompiledModel, kin: &Kinematics) -> Vec<f64> {
    let mut momentum: Vec<V2> = kin.bodies.iter().zip(&model.bodies).map(|(b, cb)| b.velocity * cb.mass).collect();
    for &b in model.order.iter().rev() {
        if let Some(p) = model.bodies[b].parent {
            let mb = momentum[b];
            momentum[p] += mb;
        }
    }
    (0..model.dof())
        .map(|k| match model.dof_kinds[k] {
            DofKind::Rotate => {
                let b = model.dof_body[k];
                let vc = kin.point_velocity(b, &kin.centers[k]);
                cross(momentum[b], vc)
            }
            _ => 0.0,
        })
        .collect()
}

/// Force sources and constraints used by the integrator.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    pub muscles: bool,
    pub ligaments: bool,
    pub contact: bool,
    pub gravity: bool,
    pub locked: DofMask,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { muscles: true, ligaments: true, contact: true, gravity: true, locked: DofMask::default() }
    }
}

impl SimOptions {
    /// Gravity only: no muscles, ligaments or contact.
    pub fn passive() -> Self {
        Self { muscles: false, ligaments: false, contact: false, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubstepTelemetry {
    pub forces: GeneralizedForces,
    pub ligament_torques: Vec<f64>,
    /// `L = sum of squared ligament torques`.
    pub ligament_load: f64,
    pub contacts: Vec<ContactSample>,
    pub max_penetration: f64,
    pub muscle_forces: Vec<MuscleForce>,
    pub clamped_fibers: usize,
    pub equilibrium_fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepTelemetry {
    /// Rectangle-rule integral of `sqrt(L)` over the window, N·m·s.
    pub ligament_integral: f64,
    /// Vertical contact force per sphere, averaged over the window.
    pub mean_vertical_force: Vec<f64>,
    /// Contact force per sphere at the last substep.
    pub final_contact_force: Vec<V2>,
    /// Deepest penetration in each substep.
    pub max_penetration: Vec<f64>,
    pub clamped_fibers: usize,
    pub equilibrium_fallbacks: usize,
    pub substeps: usize,
}

/// Fixed-step simulator for one model and obstacle set.
#[derive(Debug, Clone)]
pub struct Simulator {
    model: Arc<CompiledModel>,
    obstacles: Vec<Obstacle>,
    options: SimOptions,
}

impl Simulator {
    pub fn new(model: Arc<CompiledModel>, obstacles: Vec<Obstacle>, options: SimOptions) -> Self {
        Self { model, obstacles, options }
    }

    pub fn model(&self) -> &Arc<CompiledModel> {
        &self.model
    }

    pub fn obstacles(&self) -> &[Obstacle] {
        &self.obstacles
    }

    pub fn options(&self) -> &SimOptions {
        &self.options
    }

    /// Evaluates every force source at `state`.
    pub fn forces(&self, state: &SimState, kin: &Kinematics) -> SubstepTelemetry {
        let model = &*self.model;
        let def = model.definition();
        let n = model.dof();
        let mut forces = GeneralizedForces::zeros(n);

        if self.options.gravity {
            forces.gravity = gravity_forces(model, kin);
        }

        let mut muscle_forces = Vec::new();
        let mut clamped_fibers = 0;
        let mut equilibrium_fallbacks = 0;
        if self.options.muscles {
            let geometry = muscle::muscle_geometry(model, kin, &state.qdot);
            muscle_forces = def
                .muscles
                .iter()
                .zip(&geometry)
                .enumerate()
                .map(|(i, (md, g))| {
                    let s = MuscleState {
                        activation: state.activations[i],
                        fiber_length: state.fiber_lengths[i],
                        mtu_length: g.length,
                        mtu_velocity: g.velocity,
                    };
                    let rigid = muscle::muscle_force(md, &s, &def.curves);
                    if def.tendon.mode == TendonMode::Rigid {
                        return rigid;
                    }
                    let cos_a = md.pennation_angle_at_optimal.cos();
                    let v_norm = g.velocity / cos_a / (md.max_contraction_velocity * md.optimal_fiber_length);
                    let eq =
                        muscle::solve_tendon_equilibrium(md, &def.tendon, g.length, s.activation, v_norm, &def.curves);
                    if eq.fallback {
                        equilibrium_fallbacks += 1;
                        return rigid;
                    }
                    let tendon = muscle::tendon_curve_force(md, &def.tendon, g.length, eq.fiber_length);
                    MuscleForce { muscle: tendon / cos_a, tendon, fiber_length: eq.fiber_length, clamped: false }
                })
                .collect();
            clamped_fibers = muscle_forces.iter().filter(|f| f.clamped).count();
            forces.muscle = muscle::apply_muscle_forces(model, &geometry, &muscle_forces);
        }

        let mut ligament_torques = Vec::with_capacity(model.ligaments.len());
        if self.options.ligaments {
            for lig in &model.ligaments {
                let t = contact::ligament_torque(state.q[lig.dof], &lig.def);
                forces.ligament[lig.dof] += t;
                ligament_torques.push(t);
            }
        } else {
            ligament_torques.resize(model.ligaments.len(), 0.0);
        }
        let ligament_load = contact::ligament_load(&ligament_torques);

        let mut contacts = Vec::new();
        if self.options.contact {
            contacts = contact::collide(model, kin, &self.obstacles, &def.contact_params);
            for c in &contacts {
                let body = model.spheres[c.sphere].body;
                model.add_point_force(kin, body, &c.point, &c.force, &mut forces.contact);
            }
        }
        let max_penetration = contacts.iter().map(|c| c.penetration).fold(0.0, f64::max);

        SubstepTelemetry {
            forces,
            ligament_torques,
            ligament_load,
            contacts,
            max_penetration,
            muscle_forces,
            clamped_fibers,
            equilibrium_fallbacks,
        }
    }

    /// One semi-implicit Euler step of length `h`.
    pub fn integrate_substep(
        &self,
        state: &SimState,
        excitations: &[f64],
        h: f64,
    ) -> Result<(SimState, SubstepTelemetry)> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidArgument(format!("step size must be > 0, got {h}")));
        }
        let model = &*self.model;
        let def = model.definition();
        if excitations.len() != def.muscles.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} excitations, got {}",
                def.muscles.len(),
                excitations.len()
            )));
        }
        let kin = forward_kinematics(model, state);
        let telemetry = self.forces(state, &kin);
        let tau = telemetry.forces.tau();
        let locked = &self.options.locked;

        // Symplectic Euler on generalized momentum p = M(q) qdot:
        //   p' = p + h (tau + dT/dq),  q' = q + h M(q)^-1 p',  qdot' = M(q')^-1 p'.
        // dT/dq is taken at the updated velocity, found by fixed-point passes.
        let inertia = ReducedInertia::new(model, &kin, locked);
        let p0 = inertia.momentum(&state.qdot);
        let mut probe = state.clone();
        let mut p1 = p0.clone();
        let mut grad_kin = kinetic_energy_gradient(model, &kin);
        for pass in 0..=MOMENTUM_PASSES {
            for k in 0..model.dof() {
                p1[k] = if locked.is_locked(k) { 0.0 } else { p0[k] + h * (tau[k] + grad_kin[k]) };
            }
            probe.qdot = inertia.solve(&p1);
            if pass < MOMENTUM_PASSES {
                grad_kin = kinetic_energy_gradient(model, &forward_kinematics(model, &probe));
            }
        }

        let mut next = state.clone();
        for k in 0..model.dof() {
            next.q[k] += h * probe.qdot[k];
        }
        let kin_next = forward_kinematics(model, &next);
        next.qdot = ReducedInertia::new(model, &kin_next, locked).solve(&p1);
        let act = &def.activation;
        for (a, &e) in next.activations.iter_mut().zip(excitations) {
            *a = muscle::activation_step(*a, e.clamp(0.0, 1.0), h, act.tau_act, act.tau_deact);
        }
        if self.options.muscles && def.tendon.mode == TendonMode::Compliant {
            for (l, f) in next.fiber_lengths.iter_mut().zip(&telemetry.muscle_forces) {
                *l = f.fiber_length;
            }
        }
        next.time = state.time + h;
        check_divergence(model, &next)?;
        Ok((next, telemetry))
    }

    /// Holds `excitations` (clamped to [0, 1]) for one 10 ms control period of
    /// 50 substeps.
    pub fn advance_control_step(&self, state: &SimState, excitations: &[f64]) -> Result<(SimState, StepTelemetry)> {
        self.advance(state, excitations, SUBSTEPS_PER_CONTROL)
    }

    /// Covers one control period with `substeps` equal steps.
    pub fn advance(&self, state: &SimState, excitations: &[f64], substeps: usize) -> Result<(SimState, StepTelemetry)> {
        if excitations.iter().any(|e| !e.is_finite()) {
            return Err(Error::InvalidArgument("excitations must be finite".into()));
        }
        let clamped: Vec<f64> = excitations.iter().map(|e| e.clamp(0.0, 1.0)).collect();
        let h = CONTROL_DT / substeps as f64;
        let ns = self.model.spheres.len();
        let mut telemetry = StepTelemetry {
            ligament_integral: 0.0,
            mean_vertical_force: vec![0.0; ns],
            final_contact_force: vec![V2::zeros(); ns],
            max_penetration: Vec::with_capacity(substeps),
            clamped_fibers: 0,
            equilibrium_fallbacks: 0,
            substeps,
        };
        let mut cur = state.clone();
        for i in 0..substeps {
            let (next, sub) = self.integrate_substep(&cur, &clamped, h)?;
            telemetry.ligament_integral += h * sub.ligament_load.sqrt();
            telemetry.max_penetration.push(sub.max_penetration);
            telemetry.clamped_fibers += sub.clamped_fibers;
            telemetry.equilibrium_fallbacks += sub.equilibrium_fallbacks;
            let last = i + 1 == substeps;
            if last {
                telemetry.final_contact_force.fill(V2::zeros());
            }
            for c in &sub.contacts {
                telemetry.mean_vertical_force[c.sphere] += c.force.y / substeps as f64;
                if last {
                    telemetry.final_contact_force[c.sphere] += c.force;
                }
            }
            cur = next;
        }
        cur.time = state.time + CONTROL_DT;
        Ok((cur, telemetry))
    }
}

fn check_divergence(model: &CompiledModel, s: &SimState) -> Result<()> {
    let names = model.coordinate_names();
    for (k, (&q, &qd)) in s.q.iter().zip(&s.qdot).enumerate() {
        if !(q.abs() <= DIVERGENCE_LIMIT) {
            return Err(Error::Diverged { coordinate: names[k].clone(), value: q });
        }
        if !(qd.abs() <= DIVERGENCE_LIMIT) {
            return Err(Error::Diverged { coordinate: format!("{}_speed", names[k]), value: qd });
        }
    }
    for (i, &l) in s.fiber_lengths.iter().enumerate() {
        if !(l.abs() <= DIVERGENCE_LIMIT) {
            let name = &model.definition().muscles[i].name;
            return Err(Error::Diverged { coordinate: format!("{name}_fiber_length"), value: l });
        }
    }
    Ok(())
}

/// Checks that a definition has the competition profile.
pub fn is_competition_profile(def: &ModelDefinition) -> bool {
    def.dof() == profile::DOF && def.muscles.len() == profile::MUSCLES
}

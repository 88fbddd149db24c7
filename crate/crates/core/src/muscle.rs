//! Hill-type musculotendon actuators.
//!
//! Force generation follows
//! `F_muscle = F_max_iso * (a * f_active(l) * f_velocity(v) + f_passive(l))`
//! with `F_tendon = F_muscle * cos(alpha)`. Activation lags excitation through
//! a first-order system that is advanced with its exact exponential solution.

use serde::{Deserialize, Serialize};

use crate::dynamics::{CompiledModel, Kinematics};
use crate::error::{Error, Result};
use crate::model::{MuscleDef, TendonParams};

/// Normalized force-length and force-velocity curves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MuscleCurves {
    /// Width `gamma` of the Gaussian active force-length curve.
    pub active_width: f64,
    /// Passive exponential shape factor `k_pe`.
    pub passive_shape: f64,
    /// Passive strain at which the curve reaches one, `eps0`.
    pub passive_strain: f64,
    /// Force asymptote under fast lengthening.
    pub eccentric_plateau: f64,
    /// Curvature `A_f` of the concentric Hill hyperbola.
    pub concentric_curvature: f64,
}

impl Default for MuscleCurves {
    fn default() -> Self {
        Self {
            active_width: 0.45,
            passive_shape: 4.0,
            passive_strain: 0.6,
            eccentric_plateau: 1.4,
            concentric_curvature: 0.25,
        }
    }
}

impl MuscleCurves {
    pub fn validate(&self) -> Result<()> {
        let ok = self.active_width > 0.0
            && self.passive_shape > 0.0
            && self.passive_strain > 0.0
            && self.eccentric_plateau >= 1.0
            && self.concentric_curvature > 0.0
            && [
                self.active_width,
                self.passive_shape,
                self.passive_strain,
                self.eccentric_plateau,
                self.concentric_curvature,
            ]
            .iter()
            .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::schema("curves", "curve constants out of range"))
        }
    }

    /// Gaussian active force-length relation, peak 1 at `l = 1`.
    pub fn f_active(&self, l: f64) -> f64 {
        let d = l - 1.0;
        (-(d * d) / self.active_width).exp()
    }

    /// Exponential passive force-length relation, zero at and below `l = 1`.
    pub fn f_passive(&self, l: f64) -> f64 {
        if l <= 1.0 {
            return 0.0;
        }
        let k = self.passive_shape;
        ((k * (l - 1.0) / self.passive_strain).exp() - 1.0) / (k.exp() - 1.0)
    }

    /// Force-velocity multiplier. `v` is fiber velocity in units of maximum
    /// contraction velocity; negative is shortening.
    ///
    /// Shortening follows the Hill hyperbola `(1 + v) / (1 - v / A_f)`, which
    /// reaches zero at `v = -1`. Lengthening rises toward the eccentric plateau
    /// with slope matched to the concentric branch at `v = 0`.
    pub fn f_velocity(&self, v: f64) -> f64 {
        let af = self.concentric_curvature;
        if v <= -1.0 {
            0.0
        } else if v <= 0.0 {
            (1.0 + v) / (1.0 - v / af)
        } else {
            let fm = self.eccentric_plateau;
            let c = (fm - 1.0) / (1.0 + 1.0 / af);
            (fm * v + c) / (v + c)
        }
    }
}

/// Exact first-order activation update over `h` seconds with constant excitation.
pub fn activation_step(a: f64, e: f64, h: f64, tau_act: f64, tau_deact: f64) -> f64 {
    let tau = if e > a { tau_act } else { tau_deact };
    let next = e + (a - e) * (-h / tau).exp();
    next.clamp(0.0, 1.0)
}

/// Instantaneous state of one musculotendon unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuscleState {
    pub activation: f64,
    /// Fiber length, m. Only read in compliant-tendon mode.
    pub fiber_length: f64,
    pub mtu_length: f64,
    pub mtu_velocity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuscleForce {
    pub muscle: f64,
    pub tendon: f64,
    pub fiber_length: f64,
    /// Fiber length fell below 1% of optimal and was clamped.
    pub clamped: bool,
}

const MIN_FIBER_FRACTION: f64 = 0.01;

fn fiber_force(md: &MuscleDef, curves: &MuscleCurves, a: f64, l_norm: f64, v_norm: f64) -> f64 {
    md.f_max_iso * (a * curves.f_active(l_norm) * curves.f_velocity(v_norm) + curves.f_passive(l_norm))
}

/// Rigid-tendon musculotendon force.
pub fn muscle_force(md: &MuscleDef, s: &MuscleState, curves: &MuscleCurves) -> MuscleForce {
    let cos_a = md.pennation_angle_at_optimal.cos();
    let min_len = MIN_FIBER_FRACTION * md.optimal_fiber_length;
    let raw = (s.mtu_length - md.tendon_slack_length) / cos_a;
    let (fiber_length, clamped) = if raw <= min_len { (min_len, true) } else { (raw, false) };
    let l_norm = fiber_length / md.optimal_fiber_length;
    let v_norm = s.mtu_velocity / cos_a / (md.max_contraction_velocity * md.optimal_fiber_length);
    let f = fiber_force(md, curves, s.activation, l_norm, v_norm);
    MuscleForce { muscle: f, tendon: (f * cos_a).max(0.0), fiber_length, clamped }
}

/// Tendon force from the linear tendon curve at a given fiber length.
pub fn tendon_curve_force(md: &MuscleDef, tendon: &TendonParams, mtu_length: f64, fiber_length: f64) -> f64 {
    let cos_a = md.pennation_angle_at_optimal.cos();
    let stretch = mtu_length - fiber_length * cos_a - md.tendon_slack_length;
    if stretch <= 0.0 {
        0.0
    } else {
        tendon.stiffness * md.f_max_iso * stretch / md.tendon_slack_length
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Equilibrium {
    pub fiber_length: f64,
    pub residual: f64,
    pub iterations: usize,
    /// No sign change was found; the rigid-tendon length was returned.
    pub fallback: bool,
}

const EQUILIBRIUM_TOL: f64 = 1e-6;
const EQUILIBRIUM_MAX_ITER: usize = 100;

/// Compliant-tendon fiber length balancing tendon and projected fiber force.
///
/// `fiber_velocity_norm` scales the active term; pass 0 for a static solve.
pub fn solve_tendon_equilibrium(
    md: &MuscleDef,
    tendon: &TendonParams,
    mtu_length: f64,
    activation: f64,
    fiber_velocity_norm: f64,
    curves: &MuscleCurves,
) -> Equilibrium {
    let cos_a = md.pennation_angle_at_optimal.cos();
    let l_opt = md.optimal_fiber_length;
    let residual = |lf: f64| {
        tendon_curve_force(md, tendon, mtu_length, lf)
            - fiber_force(md, curves, activation, lf / l_opt, fiber_velocity_norm) * cos_a
    };
    let tol = EQUILIBRIUM_TOL * md.f_max_iso;
    let rigid = (mtu_length - md.tendon_slack_length) / cos_a;
    let lo0 = MIN_FIBER_FRACTION * l_opt;
    let fallback = |r: f64| Equilibrium { fiber_length: rigid.max(lo0), residual: r, iterations: 0, fallback: true };
    if rigid <= lo0 {
        return fallback(residual(lo0));
    }
    let (mut lo, mut hi) = (lo0, rigid);
    let (r_lo, r_hi) = (residual(lo), residual(hi));
    if r_hi.abs() < tol {
        return Equilibrium { fiber_length: hi, residual: r_hi, iterations: 0, fallback: false };
    }
    if r_lo.abs() < tol {
        return Equilibrium { fiber_length: lo, residual: r_lo, iterations: 0, fallback: false };
    }
    if r_lo.signum() == r_hi.signum() {
        return fallback(r_hi);
    }
    let lo_positive = r_lo > 0.0;
    let mut mid = 0.5 * (lo + hi);
    let mut r_mid = residual(mid);
    let mut iterations = 1;
    while r_mid.abs() >= tol && iterations < EQUILIBRIUM_MAX_ITER {
        if (r_mid > 0.0) == lo_positive {
            lo = mid;
        } else {
            hi = mid;
        }
        mid = 0.5 * (lo + hi);
        r_mid = residual(mid);
        iterations += 1;
    }
    Equilibrium { fiber_length: mid, residual: r_mid, iterations, fallback: false }
}

/// Polyline length of a muscle path and its gradient with respect to `q`.
pub fn mtu_length_and_jacobian(model: &CompiledModel, kin: &Kinematics, muscle: usize) -> (f64, Vec<f64>) {
    let mut jac = vec![0.0; model.dof()];
    let length = accumulate_path(model, kin, muscle, 1.0, &mut jac);
    (length, jac)
}

/// Adds `scale * dL/dq` to `out` and returns the path length.
pub(crate) fn accumulate_path(
    model: &CompiledModel,
    kin: &Kinematics,
    muscle: usize,
    scale: f64,
    out: &mut [f64],
) -> f64 {
    let path = &model.muscle_paths()[muscle];
    let mut length = 0.0;
    let (mut prev_body, mut prev) = (path[0].0, kin.world_point(path[0].0, path[0].1));
    for &(body, local) in &path[1..] {
        let p = kin.world_point(body, local);
        let d = p - prev;
        let seg = d.norm();
        length += seg;
        if seg > 0.0 {
            let u = d * (scale / seg);
            model.add_point_force(kin, body, &p, &u, out);
            model.add_point_force(kin, prev_body, &prev, &-u, out);
        }
        prev_body = body;
        prev = p;
    }
    length
}

/// Per-muscle geometry sampled at one kinematic state.
#[derive(Debug, Clone, PartialEq)]
pub struct MuscleGeometry {
    pub length: f64,
    pub velocity: f64,
    pub jacobian: Vec<f64>,
}

pub fn muscle_geometry(model: &CompiledModel, kin: &Kinematics, qdot: &[f64]) -> Vec<MuscleGeometry> {
    (0..model.definition().muscles.len())
        .map(|i| {
            let (length, jacobian) = mtu_length_and_jacobian(model, kin, i);
            let velocity = jacobian.iter().zip(qdot).map(|(j, v)| j * v).sum();
            MuscleGeometry { length, velocity, jacobian }
        })
        .collect()
}

/// Generalized forces of all muscles: `tau = sum_i -dL_i/dq * F_tendon_i`.
pub fn apply_muscle_forces(model: &CompiledModel, geometry: &[MuscleGeometry], forces: &[MuscleForce]) -> Vec<f64> {
    let mut tau = vec![0.0; model.dof()];
    for (g, f) in geometry.iter().zip(forces) {
        for (t, j) in tau.iter_mut().zip(&g.jacobian) {
            *t -= j * f.tendon;
        }
    }
    tau
}

//! Compliant contact and ligament springs.
//!
//! Contact spheres on the feet interact with the ground half-plane `y <= 0`
//! and with obstacle spheres through the Hunt-Crossley law
//! `F = k * x^n * (1 + 1.5 * c * xdot)`, floored at zero. Tangential
//! friction is regularized: `-mu * F_n * tanh(v_t / v_ref)`.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::dynamics::{CompiledModel, Kinematics};
use crate::error::{Error, Result};
use crate::model::LigamentDef;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactParams {
    /// N/m^exponent
    pub stiffness: f64,
    pub exponent: f64,
    /// s/m
    pub dissipation: f64,
    pub friction: f64,
    /// Tangential speed at which friction reaches ~76% of its bound, m/s.
    pub slip_velocity: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        Self { stiffness: 2.5e6, exponent: 1.5, dissipation: 1.0, friction: 0.9, slip_velocity: 0.1 }
    }
}

impl ContactParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.stiffness, self.exponent, self.dissipation, self.friction, self.slip_velocity]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::schema("contact_params", "values must be finite"));
        }
        if self.stiffness <= 0.0 {
            return Err(Error::schema("contact_params.stiffness", "must be > 0"));
        }
        if self.exponent <= 0.0 {
            return Err(Error::schema("contact_params.exponent", "must be > 0"));
        }
        if self.dissipation < 0.0 {
            return Err(Error::schema("contact_params.dissipation", "must be >= 0"));
        }
        if self.friction < 0.0 {
            return Err(Error::schema("contact_params.friction", "must be >= 0"));
        }
        if self.slip_velocity <= 0.0 {
            return Err(Error::schema("contact_params.slip_velocity", "must be > 0"));
        }
        Ok(())
    }
}

/// Ground-fixed obstacle sphere. `y` is the center's height above ground.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub x: f64,
    pub y: f64,
    pub r: f64,
}

/// Hunt-Crossley normal force for penetration `x` growing at rate `xdot`.
pub fn hunt_crossley_normal(x: f64, xdot: f64, p: &ContactParams) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let f = p.stiffness * x.powf(p.exponent) * (1.0 + 1.5 * p.dissipation * xdot);
    f.max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Counterpart {
    Ground,
    Obstacle(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactSample {
    /// Index into the model's contact spheres.
    pub sphere: usize,
    pub counterpart: Counterpart,
    pub penetration: f64,
    pub penetration_rate: f64,
    /// Force on the sphere's body, world frame.
    pub force: Vector2<f64>,
    pub point: Vector2<f64>,
    pub normal_force: f64,
}

fn sample(
    kin: &Kinematics,
    body: usize,
    sphere: usize,
    counterpart: Counterpart,
    center: Vector2<f64>,
    radius: f64,
    normal: Vector2<f64>,
    depth: f64,
    p: &ContactParams,
) -> ContactSample {
    // Force acts midway through the overlap along the normal.
    let point = center - normal * (radius - 0.5 * depth);
    let v = kin.point_velocity(body, &point);
    let vn = v.dot(&normal);
    let rate = -vn;
    let fn_ = hunt_crossley_normal(depth, rate, p);
    let tangent = Vector2::new(normal.y, -normal.x);
    let vt = v.dot(&tangent);
    let ft = -p.friction * fn_ * (vt / p.slip_velocity).tanh();
    ContactSample {
        sphere,
        counterpart,
        penetration: depth,
        penetration_rate: rate,
        force: normal * fn_ + tangent * ft,
        point,
        normal_force: fn_,
    }
}

/// One sample per penetrating (sphere, counterpart) pair.
pub fn collide(
    model: &CompiledModel,
    kin: &Kinematics,
    obstacles: &[Obstacle],
    p: &ContactParams,
) -> Vec<ContactSample> {
    let mut out = Vec::new();
    for (i, s) in model.spheres().iter().enumerate() {
        let c = kin.world_point(s.body, s.center);
        let ground_depth = s.radius - c.y;
        if ground_depth > 0.0 {
            out.push(sample(kin, s.body, i, Counterpart::Ground, c, s.radius, Vector2::new(0.0, 1.0), ground_depth, p));
        }
        for (k, o) in obstacles.iter().enumerate() {
            let d = c - Vector2::new(o.x, o.y);
            let dist = d.norm();
            let depth = s.radius + o.r - dist;
            if depth > 0.0 && dist > 0.0 {
                out.push(sample(kin, s.body, i, Counterpart::Obstacle(k), c, s.radius, d / dist, depth, p));
            }
        }
    }
    out
}

/// Exponential rotational spring engaged outside `[lo, hi]`.
pub fn ligament_torque(theta: f64, lig: &LigamentDef) -> f64 {
    if theta > lig.engage_angle_hi {
        -lig.stiffness_scale * (lig.exponent_rate * (theta - lig.engage_angle_hi)).exp_m1()
    } else if theta < lig.engage_angle_lo {
        lig.stiffness_scale * (lig.exponent_rate * (lig.engage_angle_lo - theta)).exp_m1()
    } else {
        0.0
    }
}

/// Sum of squared ligament torques, `L(t)`.
pub fn ligament_load(torques: &[f64]) -> f64 {
    torques.iter().map(|t| t * t).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lig() -> LigamentDef {
        LigamentDef {
            joint: "knee_r".into(),
            engage_angle_lo: -1.0,
            engage_angle_hi: 0.5,
            stiffness_scale: 2.0,
            exponent_rate: 5.0,
        }
    }

    #[test]
    fn zero_penetration_is_forceless() {
        let p = ContactParams::default();
        assert_eq!(hunt_crossley_normal(0.0, 3.0, &p), 0.0);
        assert_eq!(hunt_crossley_normal(-0.01, 3.0, &p), 0.0);
    }

    #[test]
    fn static_penetration_formula() {
        let p = ContactParams { stiffness: 1e6, ..ContactParams::default() };
        assert!((hunt_crossley_normal(0.01, 0.0, &p) - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn no_adhesion_under_fast_separation() {
        let p = ContactParams::default();
        assert_eq!(hunt_crossley_normal(0.01, -100.0, &p), 0.0);
    }

    #[test]
    fn force_continuous_at_contact_onset() {
        let p = ContactParams::default();
        let f = hunt_crossley_normal(1e-12, 1.0, &p);
        assert!(f < 1e-8);
    }

    #[test]
    fn ligament_band_is_disengaged() {
        let l = lig();
        for k in 0..=150 {
            let theta = -1.0 + k as f64 * 0.01;
            assert_eq!(ligament_torque(theta.min(0.5), &l), 0.0);
        }
    }

    #[test]
    fn ligament_formula() {
        let l = lig();
        let t = ligament_torque(0.6, &l);
        let expected = -2.0 * (0.5f64.exp() - 1.0);
        assert!((t - expected).abs() < 1e-12);
        assert!((t + 1.297_442_541_400_256).abs() < 1e-9);
        assert!(ligament_torque(-1.1, &l) > 0.0);
    }

    #[test]
    fn ligament_continuous_at_edges() {
        let l = lig();
        assert!(ligament_torque(0.5 + 1e-12, &l).abs() < 1e-10);
        assert!(ligament_torque(-1.0 - 1e-12, &l).abs() < 1e-10);
    }

    #[test]
    fn ligament_load_definition() {
        assert_eq!(ligament_load(&[0.0; 6]), 0.0);
        assert_eq!(ligament_load(&[3.0, 0.0, 0.0, 0.0, 0.0, 0.0]), 9.0);
        assert_eq!(ligament_load(&[1.0, -2.0, 0.0, 0.0, 0.0, 0.0]), 5.0);
    }
}

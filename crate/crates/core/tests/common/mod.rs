#![allow(dead_code)]

use std::sync::Arc;

use musclerun_core::dynamics::{forward_kinematics, CompiledModel, SimOptions, SimState, Simulator};
use nalgebra::{DMatrix, DVector};

/// Generalized force on every coordinate at rest with zero activation.
pub fn rest_tau(sim: &Simulator, s: &SimState) -> Vec<f64> {
    let kin = forward_kinematics(sim.model(), s);
    sim.forces(s, &kin).forces.tau()
}

fn symmetric(model: &CompiledModel, u: &[f64]) -> SimState {
    let mut q = vec![0.0; model.dof()];
    q[1] = u[0];
    q[2] = u[1];
    for side in 0..2 {
        q[3 + 3 * side..6 + 3 * side].copy_from_slice(&u[2..5]);
    }
    SimState::at_pose(model, &q)
}

/// Symmetric crouch with both feet flat on the ground where every
/// generalized force vanishes, found by Newton iteration.
pub fn balanced_crouch(model: &Arc<CompiledModel>) -> SimState {
    let sim = Simulator::new(model.clone(), vec![], SimOptions::default());
    let mut u = vec![-0.5881, -0.6473, 2.2769, -2.5368, 0.2772];
    let residual = |u: &[f64]| -> DVector<f64> {
        let t = rest_tau(&sim, &symmetric(model, u));
        DVector::from_column_slice(&t[1..6])
    };
    for _ in 0..30 {
        let r = residual(&u);
        if r.amax() < 1e-9 {
            break;
        }
        let mut j = DMatrix::zeros(5, 5);
        for k in 0..5 {
            let h = 1e-7;
            let mut up = u.clone();
            up[k] += h;
            let mut dn = u.clone();
            dn[k] -= h;
            j.set_column(k, &((residual(&up) - residual(&dn)) / (2.0 * h)));
        }
        let du = j.lu().solve(&(-r)).expect("nonsingular equilibrium Jacobian");
        for k in 0..5 {
            u[k] += du[k];
        }
    }
    let s = symmetric(model, &u);
    assert!(rest_tau(&sim, &s)[1..].iter().all(|t| t.abs() < 1e-6), "crouch solve did not converge");
    s
}

/// Total vertical contact force, N.
pub fn vertical_contact_force(sim: &Simulator, s: &SimState) -> f64 {
    let m = sim.model();
    let kin = forward_kinematics(m, s);
    musclerun_core::contact::collide(m, &kin, sim.obstacles(), &m.definition().contact_params)
        .iter()
        .map(|c| c.force.y)
        .sum()
}

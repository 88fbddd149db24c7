mod common;

use musclerun_core::dynamics::{CompiledModel, SimOptions, Simulator};

#[test]
fn balanced_crouch_holds_body_weight_for_two_seconds() {
    let model = CompiledModel::default_runner();
    let bw = model.definition().body_weight();
    let sim = Simulator::new(model.clone(), vec![], SimOptions::default());
    let mut s = common::balanced_crouch(&model);
    let zero = vec![0.0; 18];
    for _ in 0..200 {
        s = sim.advance_control_step(&s, &zero).unwrap().0;
    }
    let f = common::vertical_contact_force(&sim, &s);
    println!("vertical contact force after 2 s: {f:.3} N, body weight {bw:.3} N");
    assert!((f - bw).abs() <= 0.02 * bw, "{f} vs {bw}");
}

#[test]
fn crouch_has_feet_on_ground() {
    let model = CompiledModel::default_runner();
    let sim = Simulator::new(model.clone(), vec![], SimOptions::default());
    let s = common::balanced_crouch(&model);
    let tau = common::rest_tau(&sim, &s);
    assert!(tau.iter().all(|t| t.abs() < 1e-6));
    assert!(common::vertical_contact_force(&sim, &s) > 0.0);
}

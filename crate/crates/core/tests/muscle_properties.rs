use musclerun_core::dynamics::{forward_kinematics, CompiledModel, SimState};
use musclerun_core::muscle::{activation_step, mtu_length_and_jacobian, muscle_force, MuscleState};
use musclerun_core::rng::SplitMix64;
use proptest::prelude::*;

fn random_pose(rng: &mut SplitMix64, model: &CompiledModel) -> SimState {
    let mut s = SimState::initial(model);
    s.q[0] = rng.uniform(-2.0, 2.0);
    s.q[1] = rng.uniform(-0.3, 0.1);
    s.q[2] = rng.uniform(-0.5, 0.5);
    for side in 0..2 {
        s.q[3 + 3 * side] = rng.uniform(-0.3, 1.8);
        s.q[4 + 3 * side] = rng.uniform(-2.0, 0.1);
        s.q[5 + 3 * side] = rng.uniform(-0.7, 0.5);
    }
    s
}

#[test]
fn moment_arms_match_central_differences() {
    let model = CompiledModel::default_runner();
    let mut rng = SplitMix64::new(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let s = random_pose(&mut rng, &model);
        let kin = forward_kinematics(&model, &s);
        for m in 0..model.definition().muscles.len() {
            let (_, jac) = mtu_length_and_jacobian(&model, &kin, m);
            let fd: Vec<f64> = (0..model.dof())
                .map(|k| {
                    let h = 1e-6;
                    let mut p = s.clone();
                    p.q[k] += h;
                    let mut n = s.clone();
                    n.q[k] -= h;
                    let lp = mtu_length_and_jacobian(&model, &forward_kinematics(&model, &p), m).0;
                    let ln = mtu_length_and_jacobian(&model, &forward_kinematics(&model, &n), m).0;
                    (lp - ln) / (2.0 * h)
                })
                .collect();
            let err = jac.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale = fd.iter().map(|b| b * b).sum::<f64>().sqrt();
            worst = worst.max(err / scale);
        }
    }
    println!("worst relative moment-arm error {worst:.2e}");
    assert!(worst < 1e-5, "{worst}");
}

#[test]
fn tendon_force_is_projected_fiber_force() {
    let model = CompiledModel::default_runner();
    let def = model.definition();
    let mut rng = SplitMix64::new(7);
    for _ in 0..1000 {
        let md = &def.muscles[(rng.next_u64() % def.muscles.len() as u64) as usize];
        let s = MuscleState {
            activation: rng.next_f64(),
            fiber_length: md.optimal_fiber_length,
            mtu_length: md.tendon_slack_length + md.optimal_fiber_length * rng.uniform(0.4, 1.6),
            mtu_velocity: md.optimal_fiber_length * md.max_contraction_velocity * rng.uniform(-1.2, 1.2),
        };
        let f = muscle_force(md, &s, &def.curves);
        let expected = f.muscle * md.pennation_angle_at_optimal.cos();
        assert!((f.tendon - expected).abs() <= 1e-12 * expected.abs().max(1.0), "{} vs {expected}", f.tendon);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn activation_matches_exponential(a in 0.0..=1.0f64, e in 0.0..=1.0f64, h in 1e-5..0.05f64) {
        let tau = if e > a { 0.01 } else { 0.04 };
        let exact = e + (a - e) * (-h / tau).exp();
        prop_assert!((activation_step(a, e, h, 0.01, 0.04) - exact).abs() <= 1e-12);
    }

    #[test]
    fn activation_stays_in_unit_interval(a in 0.0..=1.0f64, e in 0.0..=1.0f64, h in 0.0..1.0f64) {
        let next = activation_step(a, e, h, 0.01, 0.04);
        prop_assert!((0.0..=1.0).contains(&next));
        prop_assert!((next - e).abs() <= (a - e).abs() + 1e-15);
    }
}

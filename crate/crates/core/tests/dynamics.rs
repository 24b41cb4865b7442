use grading_core::config::Config;
use grading_core::dynamics::{
    apply_forward_grading, apply_in_place, apply_reverse, apply_rotate, velocity, wrap_angle, DozerState,
    LowLevelAction,
};
use grading_core::heightmap::{add_pile, DozerPose, GaussianPile, HeightMap};
use proptest::prelude::*;

fn setup() -> (DozerState, HeightMap, HeightMap) {
    let cfg = Config::default();
    let flat = HeightMap::new_flat(160, 160, cfg.cell_size, 0.0).unwrap();
    let world = add_pile(&flat, &GaussianPile::new((4.0, 4.0), (0.4, 0.4), 0.3, 0.0).unwrap());
    (DozerState::new(DozerPose::new(2.0, 4.0, 0.0), cfg.dynamics()), world, flat)
}

fn total(s: &DozerState, m: &HeightMap, spilled: f64) -> f64 {
    m.volume() + s.blade_load + spilled
}

#[test]
fn rotation_and_reverse_leave_terrain_alone() {
    let (s, m, _) = setup();
    let r = apply_rotate(&s, &m, 1.0);
    assert_eq!(r.new_map, m);
    assert!((r.new_state.pose.heading - 1.0).abs() < 1e-15);
    assert!((r.duration - 1.0 / s.params.omega).abs() < 1e-12);
    let b = apply_reverse(&s, &m, 0.5).unwrap();
    assert_eq!(b.new_map, m);
    assert!((b.new_state.pose.x - 1.5).abs() < 1e-12);
}

#[test]
fn pushing_through_a_pile_moves_soil_forward() {
    let (s, m, target) = setup();
    let out = apply_forward_grading(&s, &m, &target, 3.0).unwrap();
    assert!(out.moved_volume > 0.0);
    assert!((out.new_state.pose.x - 5.0).abs() < 1e-9);
    // the pile center is cut down to the target
    let (r, c) = m.cell_at(4.0, 4.0).unwrap();
    assert!(out.new_map.get(r, c) < m.get(r, c));
    let conserved = (total(&out.new_state, &out.new_map, out.spilled_out) - total(&s, &m, 0.0)).abs();
    assert!(conserved < 1e-9 * m.volume());
}

#[test]
fn leaving_the_map_is_an_error_without_side_effects() {
    let (s, m, target) = setup();
    assert!(apply_forward_grading(&s, &m, &target, 100.0).is_err());
    assert!(apply_reverse(&s, &m, 100.0).is_err());
}

#[test]
fn loaded_blade_slows_down() {
    let (mut s, _, _) = setup();
    let empty = velocity(&s);
    s.blade_load = s.params.blade_capacity;
    let full = velocity(&s);
    assert!(full < empty);
    assert!(full >= s.params.v_min);
    assert!(empty <= s.params.v_max);
}

#[test]
fn wrap_angle_range() {
    for a in [-10.0, -3.2, 0.0, 3.2, 7.0, 100.0] {
        let w = wrap_angle(a);
        assert!(w > -std::f64::consts::PI - 1e-12 && w <= std::f64::consts::PI + 1e-12);
        assert!(((a - w) / std::f64::consts::TAU - ((a - w) / std::f64::consts::TAU).round()).abs() < 1e-9);
    }
}

fn action() -> impl Strategy<Value = LowLevelAction> {
    prop_oneof![
        (-3.0f64..3.0).prop_map(LowLevelAction::Rotate),
        (0.0f64..1.5).prop_map(LowLevelAction::Forward),
        (0.0f64..0.8).prop_map(LowLevelAction::Reverse),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn volume_is_conserved_on_every_step(actions in prop::collection::vec(action(), 1..40)) {
        let (mut s, mut m, target) = setup();
        let reference = total(&s, &m, 0.0);
        let mut spilled = 0.0;
        for a in actions {
            let (s0, m0) = (s, m.clone());
            match apply_in_place(&mut s, &mut m, &target, a) {
                Ok(acc) => {
                    spilled += acc.spilled_out;
                    prop_assert!(acc.duration >= 0.0);
                    prop_assert!(acc.spilled_out >= 0.0);
                }
                Err(_) => {
                    // an out-of-map move is rejected; restore and carry on
                    s = s0;
                    m = m0;
                }
            }
            let drift = (total(&s, &m, spilled) - reference).abs() / reference;
            prop_assert!(drift <= 1e-9, "drift {drift}");
            prop_assert!(s.blade_load >= -1e-15);
        }
    }

    #[test]
    fn graded_terrain_never_drops_below_target(d in 0.1f64..3.0, heading in -0.4f64..0.4) {
        let (mut s, m, target) = setup();
        s.pose.heading = heading;
        let out = apply_forward_grading(&s, &m, &target, d).unwrap();
        for (h, t) in out.new_map.values().iter().zip(target.values()) {
            prop_assert!(*h >= t - 1e-12);
        }
    }
}

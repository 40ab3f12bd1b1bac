use proptest::prelude::*;
use tbc_core::rigid_body::{clamp_input, drone_derivative, integrate_step, DroneInput, DroneParams, DroneState, UnitQuaternion, Vec3};
use tbc_core::safety_filter::regulation_lambda;
use tbc_core::safety_sets::{h_box, h_pair, h_world_at, BoxRegion, SphereObstacle, World};
use tbc_core::tbc_policies::{
    backup_controller, smooth_transition, tbc_evaluate, velocity_controller, BackupGains, ManeuverTemplate, TbcTiming,
    VelocityCommand,
};

fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn quat() -> impl Strategy<Value = UnitQuaternion> {
    (vec3(1.0), -3.0..3.0f64).prop_map(|(axis, angle)| {
        UnitQuaternion::from_axis_angle(axis.try_normalize(1e-6).unwrap_or(Vec3::Z), angle)
    })
}

fn state() -> impl Strategy<Value = DroneState> {
    (vec3(4.0), quat(), vec3(5.0), vec3(3.0)).prop_map(|(p, q, v, w)| DroneState { p: p + Vec3::new(0.0, 0.0, 5.0), q, v, w })
}

fn input() -> impl Strategy<Value = DroneInput> {
    (0.0..20.0f64, vec3(10.0)).prop_map(|(t, w)| DroneInput::new(t, w))
}

fn world() -> World {
    World::new(BoxRegion::new(Vec3::new(0.0, 0.0, 5.0), Vec3::new(5.0, 5.0, 5.0)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn dynamics_are_affine_in_the_input(x in state(), a in input(), b in input(), s in 0.0..1.0f64) {
        let p = DroneParams::default();
        let mixed = drone_derivative(&x, &a.lerp(b, s), &p).to_array();
        let da = drone_derivative(&x, &a, &p).to_array();
        let db = drone_derivative(&x, &b, &p).to_array();
        for i in 0..13 {
            let expect = da[i] * (1.0 - s) + db[i] * s;
            prop_assert!((mixed[i] - expect).abs() <= 1e-9 * (1.0 + expect.abs()), "component {i}");
        }
    }

    #[test]
    fn integration_keeps_unit_quaternion(x in state(), u in input()) {
        let y = integrate_step(&x, &u, 0.01, &DroneParams::default());
        prop_assert!((y.q.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lambda_is_monotone_and_bounded(h1 in -3.0..3.0f64, h2 in -3.0..3.0f64, beta in 0.01..100.0f64) {
        let (lo, hi) = if h1 <= h2 { (h1, h2) } else { (h2, h1) };
        let (a, b) = (regulation_lambda(lo, beta), regulation_lambda(hi, beta));
        prop_assert!(a <= b);
        prop_assert!((0.0..1.0).contains(&a) && (0.0..1.0).contains(&b));
        prop_assert_eq!(a == 0.0, lo <= 0.0);
    }

    #[test]
    fn pair_barrier_is_symmetric(a in vec3(10.0), b in vec3(10.0), r in 0.01..1.0f64) {
        prop_assert_eq!(h_pair(a, b, r).to_bits(), h_pair(b, a, r).to_bits());
    }

    #[test]
    fn policies_stay_within_actuator_limits(x in state(), v in vec3(6.0), tau in 0.0..2.0f64) {
        let p = DroneParams::default();
        let g = BackupGains::default();
        let w = world();
        let timing = TbcTiming::new(0.5, 0.2, 2.0);
        let ok = |u: DroneInput| u == clamp_input(u, &p) && u.thrust.is_finite();
        prop_assert!(ok(velocity_controller(&x, &VelocityCommand::new(v, 0.3), &p, &g)));
        prop_assert!(ok(backup_controller(&x, &w, &p, &g)));
        for m in [ManeuverTemplate::CarryOn, ManeuverTemplate::evade_up(1.0, 2.0)] {
            let kind = m.instantiate(&x, VelocityCommand::new(v, 0.0));
            prop_assert!(ok(tbc_evaluate(&kind, &x, tau, &w, &timing, &p, &g)));
        }
    }

    #[test]
    fn blend_is_lipschitz_in_tau(a in input(), b in input(), t1 in 0.0..2.0f64, t2 in 0.0..2.0f64) {
        let timing = TbcTiming::new(0.5, 0.2, 2.0);
        let (u1, u2) = (smooth_transition(a, b, t1, &timing), smooth_transition(a, b, t2, &timing));
        let bound = a.max_abs_diff(&b) / timing.smoothing * (t1 - t2).abs();
        prop_assert!(u1.max_abs_diff(&u2) <= bound + 1e-9);
    }
}

/// Sign oracle for the safe-set barrier against an explicit membership test.
#[test]
fn world_barrier_sign_matches_membership() {
    use rand::{Rng, SeedableRng};
    let obs = SphereObstacle { center: Vec3::new(1.0, 0.0, 4.0), radius: 1.0 };
    let w = world().with_obstacle(obs);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let mut sample = |r: f64| Vec3::new(rng.gen_range(-r..r), rng.gen_range(-r..r), rng.gen_range(-r..r));
    for _ in 0..10_000 {
        let p = sample(6.0) + Vec3::new(0.0, 0.0, 5.0);
        let other = sample(6.0) + Vec3::new(0.0, 0.0, 5.0);
        let inside = w.geofence.contains(p)
            && (p - obs.center).norm() >= obs.radius + w.agent_radius
            && (p - other).norm() >= 2.0 * w.agent_radius;
        let h = h_world_at(p, &w, &[other]);
        // Skip points within rounding distance of a boundary.
        if h.abs() < 1e-9 {
            continue;
        }
        assert_eq!(h >= 0.0, inside, "p = {p:?}, other = {other:?}, h = {h}");
    }
}

#[test]
fn box_barrier_is_zero_on_faces() {
    let b = BoxRegion::new(Vec3::new(1.0, 2.0, 3.0), Vec3::new(2.0, 3.0, 4.0));
    assert_eq!(h_box(Vec3::new(3.0, 2.0, 3.0), &b), 0.0);
    assert!(h_box(Vec3::new(1.0, 2.0, 3.0), &b) > 0.0);
    assert!(h_box(Vec3::new(1.0, 5.5, 3.0), &b) < 0.0);
}

/// From 3 m/s at the center of a 10 m box, the backup controller reaches the
/// backup set within the horizon and never leaves the box.
#[test]
fn backup_stops_within_horizon_from_three_metres_per_second() {
    let w = world();
    let p = DroneParams::default();
    let g = BackupGains::default();
    for dir in [Vec3::X, -Vec3::Y, Vec3::Z, -Vec3::Z, Vec3::new(1.0, 1.0, 0.0) / 2f64.sqrt()] {
        let mut x = DroneState::at_rest(w.geofence.center).with_velocity(dir * 3.0);
        let mut stopped_at = None;
        for k in 1..=200 {
            x = integrate_step(&x, &backup_controller(&x, &w, &p, &g), 0.01, &p);
            assert!(w.geofence.contains(x.p), "left the box heading {dir:?}");
            if x.v.norm() <= w.v_stop && stopped_at.is_none() {
                stopped_at = Some(k);
            }
        }
        assert!(stopped_at.is_some(), "not stopped within 2 s heading {dir:?}: {}", x.v.norm());
    }
}

#[test]
fn backup_keeps_slow_interior_states_slow() {
    use rand::{Rng, SeedableRng};
    let w = world();
    let p = DroneParams::default();
    let g = BackupGains::default();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let pos = Vec3::new(rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0), rng.gen_range(1.0..9.0));
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let mut x = DroneState::at_rest(pos).with_velocity(v.try_normalize(1e-9).unwrap_or(Vec3::X) * 0.1);
        for _ in 0..1000 {
            x = integrate_step(&x, &backup_controller(&x, &w, &p, &g), 0.01, &p);
            assert!(x.v.norm() <= 0.15, "speed {} from {pos:?}", x.v.norm());
        }
    }
}

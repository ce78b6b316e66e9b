mod common;

use common::quarter_circle;
use dmpc_core::path_geometry::{fit_path_spline, PathSpline, Waypoint};
use dmpc_core::scenario::load_scenario;
use dmpc_core::Error;
use proptest::prelude::*;
use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::path::PathBuf;

const R: f64 = 20.0;

fn straight(n: usize, dx: f64, dy: f64) -> PathSpline {
    let w: Vec<_> = (0..n).map(|k| Waypoint::new(k as f64 * dx, k as f64 * dy)).collect();
    fit_path_spline(&w).unwrap()
}

#[test]
fn collinear_waypoints_give_a_line() {
    let p = straight(4, 10.0, 0.0);
    for k in 0..=300 {
        let s = k as f64 * 0.1;
        let (x, y) = p.eval_position(s);
        assert!((x - s).abs() <= 1e-9 && y.abs() <= 1e-9, "s={s}: ({x}, {y})");
        assert!(p.eval_curvature(s).unwrap().abs() <= 1e-9);
        assert!(p.eval_heading(s).unwrap().abs() <= 1e-12);
    }
    assert_eq!(p.eval_position(0.0), (0.0, 0.0));
    let (x, y) = p.eval_position(5.0);
    assert!((x - 5.0).abs() < 1e-9 && y.abs() < 1e-9);
    let (x, y) = p.eval_position(p.s_max() + 10.0);
    assert!((x - 40.0).abs() < 1e-9 && y.abs() < 1e-9);
}

#[test]
fn north_bound_heading() {
    let p = straight(6, 0.0, 3.0);
    for s in [0.0, 4.2, 15.0] {
        assert!((p.eval_heading(s).unwrap() - FRAC_PI_2).abs() < 1e-12);
    }
}

#[test]
fn too_few_and_degenerate_waypoints() {
    let three = [Waypoint::new(0.0, 0.0), Waypoint::new(1.0, 0.0), Waypoint::new(2.0, 0.0)];
    assert!(matches!(fit_path_spline(&three), Err(Error::TooFewWaypoints(3))));
    let dup = [
        Waypoint::new(0.0, 0.0),
        Waypoint::new(1.0, 0.0),
        Waypoint::new(1.0, 0.0),
        Waypoint::new(2.0, 0.0),
    ];
    assert!(matches!(fit_path_spline(&dup), Err(Error::DegenerateWaypoints { index: 1 })));
}

#[test]
fn quarter_circle_positions_match_circle() {
    let p = fit_path_spline(&quarter_circle(R, true)).unwrap();
    let n = 2000;
    for k in 0..=n {
        let s = p.s_max() * k as f64 / n as f64;
        let (x, y) = p.eval_position(s);
        let radial = (x.hypot(y) - R).abs();
        assert!(radial < 1e-3, "s={s}: off circle by {radial}");
    }
}

#[test]
fn quarter_circle_curvature_sign_and_size() {
    let worst = common::circle_curvature_error(R).unwrap();
    assert!(worst < 5e-3, "curvature error {worst}");
}

#[test]
fn quarter_circle_heading_sweeps_right_angle() {
    let p = fit_path_spline(&quarter_circle(R, true)).unwrap();
    let mut prev = p.eval_heading(0.0).unwrap();
    let start = prev;
    for k in 1..=400 {
        let psi = p.eval_heading(p.s_max() * k as f64 / 400.0).unwrap();
        assert!(psi > prev, "heading not increasing at sample {k}");
        prev = psi;
    }
    assert!((prev - start - FRAC_PI_2).abs() < 1e-3);
    assert!((start - FRAC_PI_2).abs() < 1e-3);
}

#[test]
fn second_derivative_continuous_across_knots() {
    let p = fit_path_spline(&quarter_circle(R, true)).unwrap();
    let params = p.waypoint_params().to_vec();
    let h = 1e-6;
    for &t in &params[1..params.len() - 1] {
        let a = p.derivatives(t - h);
        let b = p.derivatives(t + h);
        for (name, da, db) in [("pos", a.pos, b.pos), ("d1", a.d1, b.d1), ("d2", a.d2, b.d2)] {
            for c in 0..2 {
                let scale = da[c].abs().max(db[c].abs()).max(1e-2);
                assert!(
                    (da[c] - db[c]).abs() <= 1e-4 * scale,
                    "{name}[{c}] jumps at knot {t}: {} vs {}",
                    da[c],
                    db[c]
                );
            }
        }
    }
}

fn scenario_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/paper_scenario.toml")
}

/// Arc length of the fitted curve by composite Simpson on the tangent norm.
fn arc_length(p: &PathSpline) -> f64 {
    let n = 20_000;
    let h = p.s_max() / n as f64;
    let speed = |s: f64| {
        let d = p.derivatives(s).d1;
        d[0].hypot(d[1])
    };
    let mut sum = speed(0.0) + speed(p.s_max());
    for k in 1..n {
        sum += speed(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    sum * h / 3.0
}

#[test]
fn scenario_paths_arc_length_fidelity() {
    let sc = load_scenario(&scenario_path()).unwrap();
    for a in &sc.agents {
        let p = fit_path_spline(&a.waypoint_list()).unwrap();
        let len = arc_length(&p);
        let rel = (len - p.s_max()).abs() / p.s_max();
        assert!(rel <= 0.01, "agent {}: arc length {len} vs s_max {}", a.id, p.s_max());
        for (w, &t) in p.waypoints().iter().zip(p.waypoint_params()) {
            let (x, y) = p.eval_position(t);
            assert!((x - w.x_g).abs() <= 1e-9 && (y - w.y_g).abs() <= 1e-9);
        }
    }
}

fn random_walk() -> impl Strategy<Value = Vec<Waypoint>> {
    walk(0.5..5.0, 1.2)
}

/// Short segments after sharp turns make the interpolant loop back on itself,
/// so heading continuity is only claimed for road-like polylines.
fn road_walk() -> impl Strategy<Value = Vec<Waypoint>> {
    walk(1.0..4.0, 0.6)
}

fn walk(len: std::ops::Range<f64>, max_turn: f64) -> impl Strategy<Value = Vec<Waypoint>> {
    prop::collection::vec((len, -max_turn..max_turn), 4..40).prop_map(|steps| {
        let (mut x, mut y, mut heading) = (0.0, 0.0, 0.0);
        let mut pts = vec![Waypoint::new(x, y)];
        for (len, turn) in steps.into_iter().skip(1) {
            heading += turn;
            x += len * f64::cos(heading);
            y += len * f64::sin(heading);
            pts.push(Waypoint::new(x, y));
        }
        pts
    })
}

proptest! {
    #[test]
    fn interpolates_every_waypoint(pts in random_walk()) {
        let p = fit_path_spline(&pts).unwrap();
        prop_assert_eq!(p.eval_position(0.0), (pts[0].x_g, pts[0].y_g));
        let scale = pts.iter().fold(1.0f64, |m, w| m.max(w.x_g.abs()).max(w.y_g.abs()));
        for (w, &t) in pts.iter().zip(p.waypoint_params()) {
            let (x, y) = p.eval_position(t);
            prop_assert!((x - w.x_g).abs() <= 1e-9 * scale && (y - w.y_g).abs() <= 1e-9 * scale);
        }
        prop_assert!(p.knots().windows(2).all(|k| k[0] <= k[1]));
    }

    #[test]
    fn heading_is_continuous(pts in road_walk()) {
        let p = fit_path_spline(&pts).unwrap();
        let n = 400;
        let mut prev = p.sample(0.0).psi;
        for k in 1..=n {
            let s = p.s_max() * k as f64 / n as f64;
            let psi = p.sample(s).psi;
            let jump = (psi - prev + PI).rem_euclid(TAU) - PI;
            prop_assert!(jump.abs() < 0.5, "jump {} -> {} at {}", prev, psi, s);
            prev = psi;
        }
    }
}

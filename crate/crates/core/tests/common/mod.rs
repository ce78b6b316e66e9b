//! Independent oracles shared by the integration tests and the acceptance
//! runner. Every check returns `Err` with a description instead of panicking
//! so the runner can report it.
#![allow(dead_code, clippy::needless_range_loop)]

use dmpc_core::collision::{overlap_area, AgentGeometry, Box2D, Pose2D, SafetyParams};
use dmpc_core::kinematics::{continuous_matrices, discretize_exact, AgentDynamicsParams, AgentState, DiscreteModel};
use dmpc_core::ocp::{AgentLimits, ConflictTrajectory, CostWeights, OcpProblem, PreviewConstraint};
use dmpc_core::panoc::{panoc_solve, project_box, BoxSet, SolverConfig};
use dmpc_core::path_geometry::{fit_path_spline, PathSpline, Waypoint};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check<T = ()> = Result<T, String>;

// ---------------------------------------------------------------- geometry

pub fn bx(lx: f64, ly: f64, ux: f64, uy: f64) -> Box2D {
    Box2D {
        lower: [lx, ly],
        upper: [ux, uy],
    }
}

/// Grid points with spacing `h` inside both intervals, scanned over `[from, to]`.
fn count_axis(from: f64, to: f64, h: f64, a: (f64, f64), b: (f64, f64)) -> u64 {
    let n = ((to - from) / h).ceil() as u64;
    let mut c = 0;
    for k in 0..n {
        let p = from + (k as f64 + 0.5) * h;
        if p >= a.0 && p <= a.1 && p >= b.0 && p <= b.1 {
            c += 1;
        }
    }
    c
}

/// Grid raster of the intersection of two axis-aligned boxes. A grid point
/// lies in an axis-aligned box iff each coordinate lies in its interval, so
/// the 2D count is the product of the per-axis counts.
pub fn raster_area(a: &Box2D, b: &Box2D, h: f64) -> f64 {
    // scanning the smaller box is enough: the intersection lies inside it
    let area = |r: &Box2D| (r.upper[0] - r.lower[0]) * (r.upper[1] - r.lower[1]);
    let dom = if area(a) < area(b) { a } else { b };
    let cx = count_axis(dom.lower[0], dom.upper[0], h, (a.lower[0], a.upper[0]), (b.lower[0], b.upper[0]));
    let cy = count_axis(dom.lower[1], dom.upper[1], h, (a.lower[1], a.upper[1]), (b.lower[1], b.upper[1]));
    (cx * cy) as f64 * h * h
}

pub fn random_box(rng: &mut ChaCha8Rng, centre: f64, max_size: f64) -> Box2D {
    let cx = rng.gen_range(-centre..centre);
    let cy = rng.gen_range(-centre..centre);
    let w = rng.gen_range(0.2..max_size);
    let hgt = rng.gen_range(0.2..max_size);
    bx(cx - w / 2.0, cy - hgt / 2.0, cx + w / 2.0, cy + hgt / 2.0)
}

/// Overlap area against the raster on `pairs` random pairs, to 1% (absolute
/// 1e-4 m^2 for slivers). Returns how many pairs overlapped.
pub fn overlap_vs_raster(pairs: usize, seed: u64) -> Check<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut overlapping = 0;
    for _ in 0..pairs {
        let region = random_box(&mut rng, 6.0, 30.0);
        let other = random_box(&mut rng, 6.0, 7.0);
        let a = overlap_area(&region, &other).area;
        let r = raster_area(&region, &other, 1e-5);
        if (a > 0.0) != (r > 0.0) || (a - r).abs() > (0.01 * a).max(1e-4) {
            return Err(format!("{region:?} {other:?}: {a} vs raster {r}"));
        }
        overlapping += usize::from(a > 0.0);
    }
    Ok(overlapping)
}

/// Quarter circle of radius `r` about the origin sampled at 1 m of arc,
/// starting at `(r, 0)` and turning left (counter-clockwise) or right.
pub fn quarter_circle(r: f64, left: bool) -> Vec<Waypoint> {
    let n = (r * std::f64::consts::FRAC_PI_2).floor() as usize;
    let mut pts: Vec<Waypoint> = (0..=n)
        .map(|k| {
            let t = k as f64 / r;
            let y = r * t.sin();
            Waypoint::new(r * t.cos(), if left { y } else { -y })
        })
        .collect();
    pts.push(Waypoint::new(0.0, if left { r } else { -r }));
    pts
}

/// Largest curvature error against `1/r` over the whole fitted arc.
pub fn circle_curvature_error(r: f64) -> Check<f64> {
    let mut worst = 0.0f64;
    for (left, sign) in [(true, 1.0), (false, -1.0)] {
        let p = fit_path_spline(&quarter_circle(r, left)).map_err(|e| e.to_string())?;
        for k in 0..=500 {
            let s = p.s_max() * k as f64 / 500.0;
            let kappa = p.eval_curvature(s).map_err(|e| e.to_string())?;
            worst = worst.max((kappa - sign / r).abs());
        }
    }
    Ok(worst)
}

/// Random polyline with turns of up to 1.2 rad per segment.
pub fn random_walk(rng: &mut ChaCha8Rng) -> Vec<Waypoint> {
    let n = rng.gen_range(4..40);
    let (mut x, mut y, mut heading) = (0.0, 0.0, 0.0);
    let mut pts = vec![Waypoint::new(x, y)];
    for _ in 1..n {
        heading += rng.gen_range(-1.2..1.2);
        let len = rng.gen_range(0.5..5.0);
        x += len * f64::cos(heading);
        y += len * f64::sin(heading);
        pts.push(Waypoint::new(x, y));
    }
    pts
}

/// Largest waypoint interpolation error over `cases` random polylines.
pub fn spline_waypoint_error(cases: usize, seed: u64) -> Check<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let pts = random_walk(&mut rng);
        let p = fit_path_spline(&pts).map_err(|e| e.to_string())?;
        for (w, &t) in pts.iter().zip(p.waypoint_params()) {
            let (x, y) = p.eval_position(t);
            worst = worst.max((x - w.x_g).abs()).max((y - w.y_g).abs());
        }
    }
    Ok(worst)
}

// -------------------------------------------------------------- kinematics

/// Classic RK4 on `x' = A x + B u` with a fixed step.
pub fn rk4_flow(a: &[[f64; 3]; 3], b: &[f64; 3], x0: [f64; 3], u: f64, t_end: f64, h: f64) -> [f64; 3] {
    let f = |x: [f64; 3]| {
        let mut dx = [0.0; 3];
        for i in 0..3 {
            dx[i] = a[i][0] * x[0] + a[i][1] * x[1] + a[i][2] * x[2] + b[i] * u;
        }
        dx
    };
    let add = |x: [f64; 3], k: [f64; 3], c: f64| [x[0] + c * k[0], x[1] + c * k[1], x[2] + c * k[2]];
    let steps = (t_end / h).round() as usize;
    let h = t_end / steps as f64;
    let mut x = x0;
    for _ in 0..steps {
        let k1 = f(x);
        let k2 = f(add(x, k1, h / 2.0));
        let k3 = f(add(x, k2, h / 2.0));
        let k4 = f(add(x, k3, h));
        for i in 0..3 {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    x
}

/// Columns of `A_d` from unit initial states with `u = 0`, and `B_d` from
/// zero state with `u = 1`.
pub fn rk4_model(t_ax: f64, ts: f64) -> ([[f64; 3]; 3], [f64; 3]) {
    let (a, b) = continuous_matrices(&AgentDynamicsParams::new(t_ax, ts).unwrap());
    let mut ad = [[0.0; 3]; 3];
    for j in 0..3 {
        let mut e = [0.0; 3];
        e[j] = 1.0;
        let col = rk4_flow(&a, &b, e, 0.0, ts, 1e-6);
        for i in 0..3 {
            ad[i][j] = col[i];
        }
    }
    (ad, rk4_flow(&a, &b, [0.0; 3], 1.0, ts, 1e-6))
}

/// Largest entry error of the exact discretization against RK4 over a grid
/// of time constants and sampling times.
pub fn discretization_vs_rk4() -> Check<f64> {
    let mut worst = 0.0f64;
    for t_ax in [0.1, 0.3, 1.0] {
        for ts in [0.01, 0.1, 1.0] {
            let (a, b) = continuous_matrices(&AgentDynamicsParams::new(t_ax, ts).map_err(|e| e.to_string())?);
            let m = discretize_exact(&a, &b, ts);
            let (ad, bd) = rk4_model(t_ax, ts);
            for i in 0..3 {
                for j in 0..3 {
                    worst = worst.max((m.a[i][j] - ad[i][j]).abs());
                }
                worst = worst.max((m.b[i] - bd[i]).abs());
            }
        }
    }
    Ok(worst)
}

// ------------------------------------------------------------------ solver

/// `0.5 u'Hu + c'u` with `H = M'M + mu I` over a random box.
pub struct Qp {
    pub h: Vec<Vec<f64>>,
    pub c: Vec<f64>,
    pub bounds: BoxSet,
}

impl Qp {
    pub fn random(rng: &mut ChaCha8Rng, n: usize) -> Self {
        let m: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let mu = rng.gen_range(0.01..1.0);
        let mut h = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                h[i][j] = (0..n).map(|k| m[k][i] * m[k][j]).sum::<f64>() + if i == j { mu } else { 0.0 };
            }
        }
        let c = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let lower: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..0.0)).collect();
        let upper = lower.iter().map(|l| l + rng.gen_range(0.1..3.0)).collect();
        Self {
            h,
            c,
            bounds: BoxSet::new(lower, upper),
        }
    }

    pub fn eval(&self, u: &[f64], g: &mut [f64]) -> f64 {
        let mut f = 0.0;
        for i in 0..u.len() {
            g[i] = self.c[i] + (0..u.len()).map(|j| self.h[i][j] * u[j]).sum::<f64>();
            f += u[i] * (0.5 * (g[i] - self.c[i]) + self.c[i]);
        }
        f
    }

    /// Largest eigenvalue by power iteration.
    pub fn lipschitz(&self) -> f64 {
        let n = self.c.len();
        let mut x = vec![1.0; n];
        let mut lam = 0.0;
        for _ in 0..2000 {
            let y: Vec<f64> = (0..n).map(|i| (0..n).map(|j| self.h[i][j] * x[j]).sum()).collect();
            lam = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            x = y.iter().map(|v| v / lam).collect();
        }
        lam
    }

    /// Plain projected gradient with step `1/L`.
    pub fn oracle(&self) -> Vec<f64> {
        let n = self.c.len();
        let step = 1.0 / (1.01 * self.lipschitz());
        let mut u = project_box(&vec![0.0; n], &self.bounds);
        let mut g = vec![0.0; n];
        for _ in 0..500_000 {
            self.eval(&u, &mut g);
            let next = project_box(&u.iter().zip(&g).map(|(a, b)| a - step * b).collect::<Vec<_>>(), &self.bounds);
            let moved = next.iter().zip(&u).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            u = next;
            if moved < 1e-14 {
                break;
            }
        }
        u
    }
}

pub fn tight() -> SolverConfig {
    SolverConfig {
        tolerance: 1e-10,
        max_iterations: 5000,
        record_fbe: true,
        ..SolverConfig::default()
    }
}

/// PANOC against the projected-gradient oracle on `cases` random QPs, to
/// 1e-6 per coordinate, with a monotone envelope. Returns the largest error.
pub fn qp_vs_projected_gradient(cases: usize, seed: u64) -> Check<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let n = rng.gen_range(2..=20);
        let qp = Qp::random(&mut rng, n);
        let expect = qp.oracle();
        let start: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let out = panoc_solve(|u, g| qp.eval(u, g), &qp.bounds, &start, &tight());
        if !out.diagnostics.converged || !qp.bounds.contains(&out.u) {
            return Err(format!("case {case}: not converged or outside the box"));
        }
        for i in 0..n {
            let e = (out.u[i] - expect[i]).abs();
            if e > 1e-6 {
                return Err(format!("case {case} u[{i}]: {} vs {}", out.u[i], expect[i]));
            }
            worst = worst.max(e);
        }
        // convex and smooth: the envelope must never go up
        if out.diagnostics.fbe_increases != 0 {
            return Err(format!("case {case}: {} envelope increases", out.diagnostics.fbe_increases));
        }
        for &(before, after) in &out.diagnostics.fbe_log {
            if after > before + 1e-9 * before.abs().max(1.0) {
                return Err(format!("case {case}: envelope {before} -> {after}"));
            }
        }
    }
    Ok(worst)
}

// --------------------------------------------------------------------- ocp

pub const N: usize = 15;
pub const TS: f64 = 0.1;
pub const T_AX: f64 = 0.3;

pub fn limits() -> AgentLimits {
    AgentLimits {
        a_x_min: -7.0,
        a_x_max: 4.0,
        v_max: 15.0,
        a_y_max: 3.5,
        a_tot_max: 7.0,
    }
}

pub fn safety() -> SafetyParams {
    SafetyParams {
        d_front: 2.0,
        d_rear: 2.0,
        d_left: 1.0,
        d_right: 1.0,
        t_gap_x: 1.0,
        t_gap_y: 1.0,
    }
}

/// Straight approach into a left turn of radius 12 m.
pub fn turning_path() -> PathSpline {
    let mut w: Vec<Waypoint> = (0..10).map(|k| Waypoint::new(-40.0 + 4.0 * k as f64, 0.0)).collect();
    for k in 0..=12 {
        let t = k as f64 * std::f64::consts::FRAC_PI_2 / 12.0;
        w.push(Waypoint::new(12.0 * t.sin(), 12.0 - 12.0 * t.cos()));
    }
    for k in 1..8 {
        w.push(Waypoint::new(12.0, 12.0 + 4.0 * k as f64));
    }
    fit_path_spline(&w).unwrap()
}

pub fn base_problem(path: &PathSpline, x0: AgentState, v_ref: f64) -> OcpProblem<'_> {
    OcpProblem::new(
        DiscreteModel::from_params(&AgentDynamicsParams::new(T_AX, TS).unwrap()),
        path,
        CostWeights { q: 1.0, q_n: 5.0, r: 10.0 },
        limits(),
        AgentGeometry::new(5.0, 2.0),
        safety(),
        x0,
        N,
        v_ref,
        Vec::new(),
        None,
        100.0,
    )
    .unwrap()
}

pub fn central_difference(p: &OcpProblem, u: &[f64], h: f64) -> Vec<f64> {
    let mut g = vec![0.0; u.len()];
    let mut w = u.to_vec();
    for i in 0..u.len() {
        w[i] = u[i] + h;
        let fp = p.penalty_cost(&w);
        w[i] = u[i] - h;
        let fm = p.penalty_cost(&w);
        w[i] = u[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Analytic penalized gradient against central differences at `points`
/// random points with every constraint family present, to 1e-5 of the
/// gradient scale. Draws near a hinge kink are skipped and redrawn.
/// Returns how many checked points had an active collision term.
pub fn gradient_vs_finite_differences(points: usize, seed: u64) -> Check<usize> {
    let path = turning_path();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut checked, mut with_overlap, mut tries) = (0, 0, 0);
    while checked < points {
        tries += 1;
        if tries >= 20 * points {
            return Err(format!("only {checked} of {tries} draws away from kinks"));
        }
        let s0 = rng.gen_range(0.0..45.0);
        let x0 = AgentState::new(rng.gen_range(-3.0..3.0), rng.gen_range(3.0..16.0), s0);
        let mut p = base_problem(&path, x0, rng.gen_range(5.0..15.0));
        let u: Vec<f64> = (0..N).map(|_| rng.gen_range(-7.0..4.0)).collect();
        // one vehicle crossing close to the planned positions, one far away
        let xs = p.rollout(&u);
        let mut near = Vec::with_capacity(N + 1);
        for x in &xs {
            let (px, py) = path.eval_position(x[2]);
            near.push(Pose2D::new(
                px + rng.gen_range(-6.0..6.0),
                py + rng.gen_range(-6.0..6.0),
                rng.gen_range(-3.2..3.2),
                rng.gen_range(0.0..12.0),
            ));
        }
        p.conflicts.push(ConflictTrajectory {
            id: 2,
            geometry: AgentGeometry::new(4.5, 1.8),
            poses: near,
        });
        p.conflicts.push(ConflictTrajectory {
            id: 3,
            geometry: AgentGeometry::new(5.0, 2.0),
            poses: vec![Pose2D::new(200.0, 200.0, 0.0, 5.0); N + 1],
        });
        let s_n = xs[N][2];
        p.preview = Some(PreviewConstraint {
            s_stop: s_n - rng.gen_range(0.0..4.0),
            s_cr_out: s_n + rng.gen_range(0.5..6.0),
        });
        p.beta = (0..p.num_constraints()).map(|_| rng.gen_range(1.0..1e3)).collect();
        if p.kink_margin(&u) < 1e-4 {
            continue;
        }
        checked += 1;
        if p.residuals(&u).eq.iter().any(|&h| h > 0.0) {
            with_overlap += 1;
        }
        let mut g = vec![0.0; N];
        let phi = p.cost_and_grad(&u, &mut g);
        if (phi - p.penalty_cost(&u)).abs() > 1e-12 * phi.abs().max(1.0) {
            return Err(format!("cost mismatch {phi} vs {}", p.penalty_cost(&u)));
        }
        let fd = central_difference(&p, &u, 1e-6);
        let scale = g.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for i in 0..N {
            if (g[i] - fd[i]).abs() > 1e-5 * scale {
                return Err(format!("u[{i}]: analytic {} vs fd {} (scale {scale})", g[i], fd[i]));
            }
        }
    }
    Ok(with_overlap)
}

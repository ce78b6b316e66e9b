//! Cubic B-spline paths mapping the path coordinate `s` to global pose.
//!
//! Waypoints are interpolated with a not-a-knot cubic in B-spline form, with
//! parameter values assigned by cumulative chord length so that `s` tracks
//! arc length closely. Heading and curvature are derived from the first and
//! second derivatives of the position spline. Outside `[0, s_max]` the path
//! continues linearly along the end tangent.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

const DEGREE: usize = 3;
const MIN_TANGENT: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub x_g: f64,
    pub y_g: f64,
}

impl Waypoint {
    pub const fn new(x_g: f64, y_g: f64) -> Self {
        Self { x_g, y_g }
    }
}

/// Scalar B-spline `sum_i c_i B_{i,p}(t)` on a clamped knot vector.
#[derive(Debug, Clone)]
struct BSpline {
    degree: usize,
    knots: Vec<f64>,
    coefs: Vec<f64>,
}

impl BSpline {
    /// Index `k` with `knots[k] <= t < knots[k+1]`, restricted to the valid
    /// spans `degree..=n-1`; the right end maps into the last span.
    fn span(&self, t: f64) -> usize {
        let p = self.degree;
        let n = self.coefs.len();
        if t >= self.knots[n] {
            return n - 1;
        }
        if t <= self.knots[p] {
            return p;
        }
        // first index in knots[p+1..=n] that is > t, minus one
        let slice = &self.knots[p + 1..=n];
        p + slice.partition_point(|&k| k <= t)
    }

    /// de Boor's algorithm.
    fn eval(&self, t: f64) -> f64 {
        let p = self.degree;
        if p == 0 {
            return self.coefs[self.span(t)];
        }
        let k = self.span(t);
        let mut d = [0.0; DEGREE + 1];
        d[..=p].copy_from_slice(&self.coefs[k - p..=k]);
        for r in 1..=p {
            for j in (r..=p).rev() {
                let i = j + k - p;
                let left = self.knots[i];
                let right = self.knots[i + 1 + p - r];
                let alpha = (t - left) / (right - left);
                d[j] = (1.0 - alpha) * d[j - 1] + alpha * d[j];
            }
        }
        d[p]
    }

    fn derivative(&self) -> BSpline {
        let p = self.degree;
        assert!(p > 0);
        let n = self.coefs.len();
        let coefs = (0..n - 1)
            .map(|i| {
                let dt = self.knots[i + p + 1] - self.knots[i + 1];
                if dt > 0.0 {
                    p as f64 * (self.coefs[i + 1] - self.coefs[i]) / dt
                } else {
                    0.0
                }
            })
            .collect();
        BSpline {
            degree: p - 1,
            knots: self.knots[1..self.knots.len() - 1].to_vec(),
            coefs,
        }
    }
}

/// Nonzero basis values `B_{k-p..=k, p}(t)` for span `k` (Cox–de Boor).
fn basis_functions(knots: &[f64], p: usize, k: usize, t: f64) -> [f64; DEGREE + 1] {
    let mut n = [0.0; DEGREE + 1];
    let mut left = [0.0; DEGREE + 1];
    let mut right = [0.0; DEGREE + 1];
    n[0] = 1.0;
    for j in 1..=p {
        left[j] = t - knots[k + 1 - j];
        right[j] = knots[k + j] - t;
        let mut saved = 0.0;
        for r in 0..j {
            let tmp = n[r] / (right[r + 1] + left[j - r]);
            n[r] = saved + right[r + 1] * tmp;
            saved = left[j - r] * tmp;
        }
        n[j] = saved;
    }
    n
}

/// Position and the first three parametric derivatives at one `s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathDerivatives {
    pub pos: [f64; 2],
    pub d1: [f64; 2],
    pub d2: [f64; 2],
    pub d3: [f64; 2],
}

/// Pose quantities the optimal control problem needs at one `s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSample {
    pub x: f64,
    pub y: f64,
    pub dx_ds: f64,
    pub dy_ds: f64,
    pub psi: f64,
    pub dpsi_ds: f64,
    pub kappa: f64,
    pub dkappa_ds: f64,
}

#[derive(Debug, Clone)]
pub struct PathSpline {
    x: BSpline,
    y: BSpline,
    dx: [BSpline; 3],
    dy: [BSpline; 3],
    params: Vec<f64>,
    /// Unwrapped reference heading per knot span, used to keep `psi`
    /// on a continuous branch.
    span_heading: Vec<f64>,
    span_start: Vec<f64>,
    waypoints: Vec<Waypoint>,
}

/// Fits a cubic interpolating spline with chord-length parameterization.
pub fn fit_path_spline(waypoints: &[Waypoint]) -> Result<PathSpline> {
    if waypoints.len() < DEGREE + 1 {
        return Err(Error::TooFewWaypoints(waypoints.len()));
    }
    let mut params = Vec::with_capacity(waypoints.len());
    params.push(0.0);
    for (i, w) in waypoints.windows(2).enumerate() {
        let chord = (w[1].x_g - w[0].x_g).hypot(w[1].y_g - w[0].y_g);
        if !(chord > 0.0) {
            return Err(Error::DegenerateWaypoints { index: i });
        }
        params.push(params[i] + chord);
    }
    fit_path_spline_with_params(waypoints, &params)
}

/// Fits the interpolating cubic through `waypoints` at the given strictly
/// increasing parameter values (`params[0]` should be 0).
pub fn fit_path_spline_with_params(waypoints: &[Waypoint], params: &[f64]) -> Result<PathSpline> {
    let n = waypoints.len();
    if n < DEGREE + 1 {
        return Err(Error::TooFewWaypoints(n));
    }
    if params.len() != n {
        return Err(Error::InvalidParameter(format!(
            "{} parameter values for {} waypoints",
            params.len(),
            n
        )));
    }
    for (i, w) in params.windows(2).enumerate() {
        if !(w[1] > w[0]) {
            return Err(Error::DegenerateWaypoints { index: i });
        }
    }
    if waypoints.iter().any(|w| !w.x_g.is_finite() || !w.y_g.is_finite()) {
        return Err(Error::InvalidParameter("non-finite waypoint".into()));
    }

    // not-a-knot: interior knots are params[2..n-2]
    let (t0, tn) = (params[0], params[n - 1]);
    let mut knots = Vec::with_capacity(n + DEGREE + 1);
    knots.extend([t0; DEGREE + 1]);
    knots.extend_from_slice(&params[2..n - 2]);
    knots.extend([tn; DEGREE + 1]);

    let probe = BSpline {
        degree: DEGREE,
        knots: knots.clone(),
        coefs: vec![0.0; n],
    };
    let mut colloc = DMatrix::<f64>::zeros(n, n);
    for (row, &t) in params.iter().enumerate() {
        let k = probe.span(t);
        let b = basis_functions(&knots, DEGREE, k, t);
        for (j, &bj) in b.iter().enumerate() {
            colloc[(row, k - DEGREE + j)] = bj;
        }
    }
    let lu = colloc.lu();
    let rhs_x = DVector::from_iterator(n, waypoints.iter().map(|w| w.x_g));
    let rhs_y = DVector::from_iterator(n, waypoints.iter().map(|w| w.y_g));
    let cx = lu
        .solve(&rhs_x)
        .ok_or_else(|| Error::InvalidParameter("singular interpolation system".into()))?;
    let cy = lu
        .solve(&rhs_y)
        .ok_or_else(|| Error::InvalidParameter("singular interpolation system".into()))?;

    let x = BSpline {
        degree: DEGREE,
        knots: knots.clone(),
        coefs: cx.iter().copied().collect(),
    };
    let y = BSpline {
        degree: DEGREE,
        knots,
        coefs: cy.iter().copied().collect(),
    };
    let dx1 = x.derivative();
    let dx2 = dx1.derivative();
    let dx3 = dx2.derivative();
    let dy1 = y.derivative();
    let dy2 = dy1.derivative();
    let dy3 = dy2.derivative();

    let mut spline = PathSpline {
        x,
        y,
        dx: [dx1, dx2, dx3],
        dy: [dy1, dy2, dy3],
        params: params.to_vec(),
        span_heading: Vec::new(),
        span_start: Vec::new(),
        waypoints: waypoints.to_vec(),
    };
    spline.build_heading_reference()?;
    Ok(spline)
}

impl PathSpline {
    fn build_heading_reference(&mut self) -> Result<()> {
        let mut starts = Vec::new();
        let mut refs: Vec<f64> = Vec::new();
        let knots = &self.x.knots;
        for w in knots.windows(2) {
            if w[1] > w[0] {
                let mid = 0.5 * (w[0] + w[1]);
                let d = self.raw_first_derivative(mid);
                if d[0].hypot(d[1]) < MIN_TANGENT {
                    return Err(Error::SingularTangent(mid));
                }
                let raw = d[1].atan2(d[0]);
                let psi = match refs.last() {
                    Some(&prev) => unwrap_near(raw, prev),
                    None => raw,
                };
                starts.push(w[0]);
                refs.push(psi);
            }
        }
        self.span_start = starts;
        self.span_heading = refs;
        Ok(())
    }

    fn raw_first_derivative(&self, s: f64) -> [f64; 2] {
        [self.dx[0].eval(s), self.dy[0].eval(s)]
    }

    pub fn s_max(&self) -> f64 {
        *self.params.last().unwrap()
    }

    /// Parameter values assigned to the fitted waypoints.
    pub fn waypoint_params(&self) -> &[f64] {
        &self.params
    }

    pub fn waypoints(&self) -> &[Waypoint] {
        &self.waypoints
    }

    pub fn knots(&self) -> &[f64] {
        &self.x.knots
    }

    /// Position and derivatives, with linear extrapolation outside the domain.
    pub fn derivatives(&self, s: f64) -> PathDerivatives {
        let s_max = self.s_max();
        let (edge, over) = if s > s_max {
            (s_max, s - s_max)
        } else if s < 0.0 {
            (0.0, s)
        } else {
            let pos = [self.x.eval(s), self.y.eval(s)];
            return PathDerivatives {
                pos,
                d1: [self.dx[0].eval(s), self.dy[0].eval(s)],
                d2: [self.dx[1].eval(s), self.dy[1].eval(s)],
                d3: [self.dx[2].eval(s), self.dy[2].eval(s)],
            };
        };
        let p = [self.x.eval(edge), self.y.eval(edge)];
        let d1 = self.raw_first_derivative(edge);
        PathDerivatives {
            pos: [p[0] + over * d1[0], p[1] + over * d1[1]],
            d1,
            d2: [0.0; 2],
            d3: [0.0; 2],
        }
    }

    pub fn eval_position(&self, s: f64) -> (f64, f64) {
        let d = self.derivatives(s);
        (d.pos[0], d.pos[1])
    }

    fn reference_heading(&self, s: f64) -> f64 {
        let idx = self.span_start.partition_point(|&t| t <= s).saturating_sub(1);
        self.span_heading[idx]
    }

    pub fn eval_heading(&self, s: f64) -> Result<f64> {
        let d = self.derivatives(s);
        if d.d1[0].hypot(d.d1[1]) < MIN_TANGENT {
            return Err(Error::SingularTangent(s));
        }
        Ok(unwrap_near(d.d1[1].atan2(d.d1[0]), self.reference_heading(s)))
    }

    pub fn eval_curvature(&self, s: f64) -> Result<f64> {
        let d = self.derivatives(s);
        let sp2 = d.d1[0] * d.d1[0] + d.d1[1] * d.d1[1];
        if sp2.sqrt() < MIN_TANGENT {
            return Err(Error::SingularTangent(s));
        }
        Ok((d.d1[0] * d.d2[1] - d.d1[1] * d.d2[0]) / (sp2 * sp2.sqrt()))
    }

    /// Everything the optimizer needs at `s`, including `d psi/ds` and
    /// `d kappa/ds`. The tangent norm is floored instead of failing.
    pub fn sample(&self, s: f64) -> PathSample {
        let d = self.derivatives(s);
        let [xp, yp] = d.d1;
        let [xpp, ypp] = d.d2;
        let [xppp, yppp] = d.d3;
        let sp2 = (xp * xp + yp * yp).max(MIN_TANGENT * MIN_TANGENT);
        let sp = sp2.sqrt();
        let sp3 = sp2 * sp;
        let cross = xp * ypp - yp * xpp;
        let dot = xp * xpp + yp * ypp;
        let kappa = cross / sp3;
        let dkappa_ds = (xp * yppp - yp * xppp) / sp3 - 3.0 * cross * dot / (sp3 * sp2);
        PathSample {
            x: d.pos[0],
            y: d.pos[1],
            dx_ds: xp,
            dy_ds: yp,
            psi: unwrap_near(yp.atan2(xp), self.reference_heading(s)),
            dpsi_ds: cross / sp2,
            kappa,
            dkappa_ds,
        }
    }

    /// Closest path parameter to `(x, y)` and the distance to it, searching
    /// `[s_lo, s_hi]` (may extend past the domain).
    pub fn project(&self, x: f64, y: f64, s_lo: f64, s_hi: f64) -> (f64, f64) {
        let dist2 = |s: f64| {
            let (px, py) = self.eval_position(s);
            (px - x).powi(2) + (py - y).powi(2)
        };
        let coarse = 1.0;
        let steps = ((s_hi - s_lo) / coarse).ceil().max(1.0) as usize;
        let mut best = (s_lo, dist2(s_lo));
        for i in 1..=steps {
            let s = (s_lo + i as f64 * coarse).min(s_hi);
            let d = dist2(s);
            if d < best.1 {
                best = (s, d);
            }
        }
        // golden-section refinement around the best coarse sample
        let (mut a, mut b) = ((best.0 - coarse).max(s_lo), (best.0 + coarse).min(s_hi));
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let mut c = b - g * (b - a);
        let mut d = a + g * (b - a);
        let (mut fc, mut fd) = (dist2(c), dist2(d));
        for _ in 0..60 {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - g * (b - a);
                fc = dist2(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + g * (b - a);
                fd = dist2(d);
            }
        }
        let s = 0.5 * (a + b);
        (s, dist2(s).sqrt())
    }
}

/// Shifts `angle` by a multiple of 2π so it lies within π of `reference`.
pub fn unwrap_near(angle: f64, reference: f64) -> f64 {
    angle + 2.0 * PI * ((reference - angle) / (2.0 * PI)).round()
}

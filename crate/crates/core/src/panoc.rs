//! Box-constrained PANOC with an L-BFGS direction, plus the quadratic
//! penalty outer loop.

use crate::ocp::OcpProblem;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

/// Per-coordinate bounds `lower <= u <= upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSet {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxSet {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        debug_assert_eq!(lower.len(), upper.len());
        debug_assert!(lower.iter().zip(&upper).all(|(l, u)| l <= u));
        Self { lower, upper }
    }

    pub fn uniform(n: usize, lower: f64, upper: f64) -> Self {
        Self::new(vec![lower; n], vec![upper; n])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        u.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, h))| l <= v && v <= h)
    }
}

pub fn project_box(u: &[f64], b: &BoxSet) -> Vec<f64> {
    u.iter()
        .zip(b.lower.iter().zip(&b.upper))
        .map(|(&v, (&l, &h))| v.max(l).min(h))
        .collect()
}

/// `T(u) = proj(u - gamma * grad)`
fn forward_backward(u: &[f64], grad: &[f64], gamma: f64, b: &BoxSet, out: &mut [f64]) {
    for i in 0..u.len() {
        out[i] = (u[i] - gamma * grad[i]).max(b.lower[i]).min(b.upper[i]);
    }
}

fn fbe_from_parts(phi: f64, grad: &[f64], u: &[f64], t: &[f64], gamma: f64) -> f64 {
    let mut lin = 0.0;
    let mut sq = 0.0;
    for i in 0..u.len() {
        let d = t[i] - u[i];
        lin += grad[i] * d;
        sq += d * d;
    }
    phi + lin + sq / (2.0 * gamma)
}

/// Forward-backward envelope `phi_gamma(u)` given `phi(u)` and its gradient.
pub fn fbe_value(u: &[f64], phi: f64, grad: &[f64], gamma: f64, b: &BoxSet) -> f64 {
    let mut t = vec![0.0; u.len()];
    forward_backward(u, grad, gamma, b, &mut t);
    fbe_from_parts(phi, grad, u, &t, gamma)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Termination threshold on `||u - T(u)||_inf / gamma`.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub lbfgs_memory: usize,
    /// Relative finite-difference step for the initial Lipschitz estimate.
    pub lipschitz_delta: f64,
    /// `gamma = lipschitz_safety / L`.
    pub lipschitz_safety: f64,
    pub line_search_shrink: f64,
    pub sufficient_decrease: f64,
    /// Smallest line-search parameter before falling back to `tau = 0`.
    pub min_tau: f64,
    /// Keep every accepted `(fbe_before, fbe_after)` pair.
    pub record_fbe: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-4,
            max_iterations: 500,
            lbfgs_memory: 10,
            lipschitz_delta: 1e-6,
            lipschitz_safety: 0.95,
            line_search_shrink: 0.5,
            sufficient_decrease: 1e-6,
            min_tau: 1.0 / (1u64 << 20) as f64,
            record_fbe: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PanocDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    /// `||u - T(u)||_inf / gamma` at the last iterate.
    pub residual: f64,
    pub gamma: f64,
    /// Steps where the line search underflowed and `tau = 0` was taken.
    pub line_search_stalls: usize,
    /// Accepted steps whose envelope value went up (beyond rounding slack).
    pub fbe_increases: usize,
    pub fbe_log: Vec<(f64, f64)>,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanocOutcome {
    pub u: Vec<f64>,
    pub cost: f64,
    pub diagnostics: PanocDiagnostics,
}

/// Limited-memory inverse Hessian estimate of the fixed-point residual map.
struct Lbfgs {
    memory: usize,
    s: VecDeque<Vec<f64>>,
    y: VecDeque<Vec<f64>>,
    rho: VecDeque<f64>,
    alpha: Vec<f64>,
}

impl Lbfgs {
    fn new(memory: usize) -> Self {
        Self {
            memory: memory.max(1),
            s: VecDeque::new(),
            y: VecDeque::new(),
            rho: VecDeque::new(),
            alpha: vec![0.0; memory.max(1)],
        }
    }

    fn reset(&mut self) {
        self.s.clear();
        self.y.clear();
        self.rho.clear();
    }

    /// Stores the pair unless the curvature condition fails.
    fn update(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy = dot(&s, &y);
        let ss = dot(&s, &s);
        let yy = dot(&y, &y);
        if !(sy > 1e-12 * (ss * yy).sqrt()) || !sy.is_finite() {
            return;
        }
        if self.s.len() == self.memory {
            self.s.pop_back();
            self.y.pop_back();
            self.rho.pop_back();
        }
        self.s.push_front(s);
        self.y.push_front(y);
        self.rho.push_front(1.0 / sy);
    }

    /// Overwrites `q` with `H q` (two-loop recursion, newest pair first).
    fn apply(&mut self, q: &mut [f64]) {
        let m = self.s.len();
        if m == 0 {
            return;
        }
        for i in 0..m {
            let a = self.rho[i] * dot(&self.s[i], q);
            self.alpha[i] = a;
            axpy(-a, &self.y[i], q);
        }
        let h0 = dot(&self.s[0], &self.y[0]) / dot(&self.y[0], &self.y[0]);
        for v in q.iter_mut() {
            *v *= h0;
        }
        for i in (0..m).rev() {
            let b = self.rho[i] * dot(&self.y[i], q);
            axpy(self.alpha[i] - b, &self.s[i], q);
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Minimises `f` over the box starting from `u_init`.
///
/// `f(u, grad)` returns the cost and writes the gradient. The returned point
/// is the last forward-backward step, so it lies in the box exactly.
pub fn panoc_solve<F>(mut f: F, bounds: &BoxSet, u_init: &[f64], cfg: &SolverConfig) -> PanocOutcome
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = u_init.len();
    let mut diag = PanocDiagnostics::default();
    let mut eval = |u: &[f64], g: &mut [f64], diag: &mut PanocDiagnostics| {
        diag.evaluations += 1;
        f(u, g)
    };

    let mut u = project_box(u_init, bounds);
    let mut grad = vec![0.0; n];
    let mut phi = eval(&u, &mut grad, &mut diag);

    // Lipschitz estimate from a finite-difference probe
    let delta = cfg.lipschitz_delta * (1.0 + norm2(&u));
    let probe: Vec<f64> = u.iter().map(|v| v + delta).collect();
    let mut g_probe = vec![0.0; n];
    eval(&probe, &mut g_probe, &mut diag);
    let dg: Vec<f64> = g_probe.iter().zip(&grad).map(|(a, b)| a - b).collect();
    let mut lip = (norm2(&dg) / (delta * (n as f64).sqrt())).max(1e-6);
    let mut gamma = cfg.lipschitz_safety / lip;

    let mut lbfgs = Lbfgs::new(cfg.lbfgs_memory);
    let mut t = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut g_t = vec![0.0; n];
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;

    let mut u_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut t_new = vec![0.0; n];
    let mut d = vec![0.0; n];

    loop {
        // forward-backward step with a descent-lemma check on gamma
        let phi_t = loop {
            forward_backward(&u, &grad, gamma, bounds, &mut t);
            for i in 0..n {
                r[i] = u[i] - t[i];
            }
            let phi_t = eval(&t, &mut g_t, &mut diag);
            let rr = dot(&r, &r);
            let bound = phi - dot(&grad, &r) + 0.5 * lip * rr;
            if phi_t <= bound + 1e-12 * phi.abs().max(1.0) || rr == 0.0 {
                break phi_t;
            }
            lip *= 2.0;
            gamma *= 0.5;
            lbfgs.reset();
            prev = None;
        };

        diag.residual = norm_inf(&r) / gamma;
        diag.gamma = gamma;
        if diag.residual <= cfg.tolerance {
            diag.converged = true;
            return PanocOutcome {
                u: t,
                cost: phi_t,
                diagnostics: diag,
            };
        }
        if diag.iterations >= cfg.max_iterations {
            return PanocOutcome {
                u: t,
                cost: phi_t,
                diagnostics: diag,
            };
        }
        diag.iterations += 1;

        let rr = dot(&r, &r);
        let fbe = phi - dot(&grad, &r) + rr / (2.0 * gamma);

        if let Some((u_prev, r_prev)) = prev.take() {
            let s: Vec<f64> = u.iter().zip(&u_prev).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = r.iter().zip(&r_prev).map(|(a, b)| a - b).collect();
            lbfgs.update(s, y);
        }
        d.copy_from_slice(&r);
        lbfgs.apply(&mut d);
        for v in d.iter_mut() {
            *v = -*v;
        }

        let threshold = fbe - cfg.sufficient_decrease / gamma * rr;
        let mut tau = 1.0;
        let (fbe_new, phi_new) = loop {
            if tau < cfg.min_tau {
                // projected-gradient step; the descent lemma guarantees decrease
                diag.line_search_stalls += 1;
                u_new.copy_from_slice(&t);
                g_new.copy_from_slice(&g_t);
                forward_backward(&u_new, &g_new, gamma, bounds, &mut t_new);
                let fbe_t = fbe_from_parts(phi_t, &g_new, &u_new, &t_new, gamma);
                break (fbe_t, phi_t);
            }
            for i in 0..n {
                u_new[i] = u[i] - (1.0 - tau) * r[i] + tau * d[i];
            }
            let phi_c = eval(&u_new, &mut g_new, &mut diag);
            forward_backward(&u_new, &g_new, gamma, bounds, &mut t_new);
            let fbe_c = fbe_from_parts(phi_c, &g_new, &u_new, &t_new, gamma);
            if fbe_c <= threshold {
                break (fbe_c, phi_c);
            }
            tau *= cfg.line_search_shrink;
        };

        if fbe_new > fbe + 1e-12 * fbe.abs().max(1.0) {
            diag.fbe_increases += 1;
        }
        if cfg.record_fbe {
            diag.fbe_log.push((fbe, fbe_new));
        }

        prev = Some((std::mem::replace(&mut u, u_new.clone()), r.clone()));
        grad.copy_from_slice(&g_new);
        phi = phi_new;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    /// Bound on `psi_s / beta_s` for every constraint.
    pub tolerance: f64,
    pub initial_weight: f64,
    pub escalation: f64,
    pub max_outer_iterations: usize,
    /// Inner tolerance while constraints are still being enforced.
    pub inner_tolerance: f64,
    /// Inner tolerance of the final pass.
    pub final_inner_tolerance: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-4,
            initial_weight: 100.0,
            escalation: 10.0,
            max_outer_iterations: 10,
            inner_tolerance: 1e-3,
            final_inner_tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolverStatus {
    Converged,
    /// Constraints satisfied, but the last inner solve hit its iteration cap.
    MaxInnerReached,
    MaxOuterReached,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverResult {
    pub u: Vec<f64>,
    pub status: SolverStatus,
    pub inner_iterations: usize,
    pub outer_iterations: usize,
    pub fixed_point_residual: f64,
    /// `max_s psi_s / beta_s` at `u`.
    pub max_constraint_residual: f64,
    pub line_search_stalls: usize,
    pub fbe_increases: usize,
    pub fbe_log: Vec<(f64, f64)>,
}

/// A problem whose soft constraints are enforced through per-constraint
/// quadratic penalty weights.
pub trait PenalizedProblem {
    fn bounds(&self) -> BoxSet;
    fn cost_and_grad(&self, u: &[f64], grad: &mut [f64]) -> f64;
    /// `psi_s / beta_s` for every constraint, aligned with [`Self::weights_mut`].
    fn normalized_penalties(&self, u: &[f64]) -> Vec<f64>;
    fn weights_mut(&mut self) -> &mut [f64];
}

impl PenalizedProblem for OcpProblem<'_> {
    fn bounds(&self) -> BoxSet {
        let (l, u) = self.input_bounds();
        BoxSet::new(l, u)
    }

    fn cost_and_grad(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        OcpProblem::cost_and_grad(self, u, grad)
    }

    fn normalized_penalties(&self, u: &[f64]) -> Vec<f64> {
        self.residuals(u).normalized_penalties()
    }

    fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.beta
    }
}

/// Solves with escalating weights until every `psi_s / beta_s` is below the
/// tolerance, warm-starting each inner solve from the previous iterate.
pub fn penalty_outer_loop<P: PenalizedProblem>(
    problem: &mut P,
    u_warm: &[f64],
    pcfg: &PenaltyConfig,
    scfg: &SolverConfig,
) -> SolverResult {
    problem.weights_mut().fill(pcfg.initial_weight);
    let bounds = problem.bounds();
    let mut u = project_box(u_warm, &bounds);
    let mut result = SolverResult {
        u: u.clone(),
        status: SolverStatus::MaxOuterReached,
        inner_iterations: 0,
        outer_iterations: 0,
        fixed_point_residual: f64::INFINITY,
        max_constraint_residual: f64::INFINITY,
        line_search_stalls: 0,
        fbe_increases: 0,
        fbe_log: Vec::new(),
    };
    let absorb = |result: &mut SolverResult, out: &PanocOutcome| {
        let d = &out.diagnostics;
        result.inner_iterations += d.iterations;
        result.line_search_stalls += d.line_search_stalls;
        result.fbe_increases += d.fbe_increases;
        result.fbe_log.extend_from_slice(&d.fbe_log);
        result.fixed_point_residual = d.residual;
    };

    let inner = SolverConfig {
        tolerance: pcfg.inner_tolerance,
        ..*scfg
    };
    for outer in 1..=pcfg.max_outer_iterations {
        let out = {
            let p = &*problem;
            panoc_solve(|x, g| p.cost_and_grad(x, g), &bounds, &u, &inner)
        };
        absorb(&mut result, &out);
        result.outer_iterations = outer;
        u = out.u;
        let viol = problem.normalized_penalties(&u);
        result.max_constraint_residual = viol.iter().copied().fold(0.0, f64::max);
        result.u = u.clone();

        if viol.iter().all(|&v| v < pcfg.tolerance) {
            let last = SolverConfig {
                tolerance: pcfg.final_inner_tolerance,
                ..*scfg
            };
            let polished = {
                let p = &*problem;
                panoc_solve(|x, g| p.cost_and_grad(x, g), &bounds, &u, &last)
            };
            let viol_p = problem.normalized_penalties(&polished.u);
            let max_p = viol_p.iter().copied().fold(0.0, f64::max);
            if max_p < pcfg.tolerance {
                absorb(&mut result, &polished);
                result.u = polished.u;
                result.max_constraint_residual = max_p;
                result.status = if polished.diagnostics.converged {
                    SolverStatus::Converged
                } else {
                    SolverStatus::MaxInnerReached
                };
            } else {
                result.inner_iterations += polished.diagnostics.iterations;
                result.status = if out.diagnostics.converged {
                    SolverStatus::Converged
                } else {
                    SolverStatus::MaxInnerReached
                };
            }
            return result;
        }

        for (b, v) in problem.weights_mut().iter_mut().zip(&viol) {
            if *v >= pcfg.tolerance {
                *b *= pcfg.escalation;
            }
        }
    }
    result
}

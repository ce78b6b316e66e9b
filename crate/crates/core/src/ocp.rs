//! One agent's penalised optimal control problem at a single time step.
//!
//! The decision variable is the input sequence `u_0..u_{N-1}`; states are
//! eliminated through the linear rollout. Every soft constraint carries its
//! own penalty weight. Weights are stored flat: first the inequalities, five
//! per horizon step `j = 1..N`, then one collision equality per (conflict,
//! step), then the preview equality if present.

use crate::collision::{pairwise_overlap, AgentGeometry, Pose2D, SafetyParams};
use crate::coordination::AgentId;
use crate::error::{Error, Result};
use crate::kinematics::{rollout_into, AgentState, DiscreteModel};
use crate::path_geometry::{PathSample, PathSpline};
use crate::scalar::{measure_switch_margin, Dual2, Scalar, Switch};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Inequalities per horizon step.
pub const INEQ_PER_STEP: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub q: f64,
    pub q_n: f64,
    pub r: f64,
}

impl CostWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.q, self.q_n, self.r].iter().all(|w| w.is_finite() && *w > 0.0) {
            Ok(())
        } else {
            Err(Error::Validation(format!("cost weights must be positive: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentLimits {
    pub a_x_min: f64,
    pub a_x_max: f64,
    pub v_max: f64,
    pub a_y_max: f64,
    pub a_tot_max: f64,
}

impl AgentLimits {
    pub fn validate(&self) -> Result<()> {
        let ok = self.a_x_min < 0.0
            && self.a_x_max > 0.0
            && self.v_max > 0.0
            && self.a_y_max > 0.0
            && self.a_tot_max > 0.0
            && [self.a_x_min, self.a_x_max, self.v_max, self.a_y_max, self.a_tot_max]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!("invalid limits: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IneqKind {
    VelocityMax,
    VelocityMin,
    LateralPos,
    LateralNeg,
    FrictionCircle,
}

impl IneqKind {
    pub const ALL: [IneqKind; INEQ_PER_STEP] = [
        IneqKind::VelocityMax,
        IneqKind::VelocityMin,
        IneqKind::LateralPos,
        IneqKind::LateralNeg,
        IneqKind::FrictionCircle,
    ];
}

/// What a flat constraint index refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintId {
    Ineq { kind: IneqKind, step: usize },
    Collision { agent: AgentId, step: usize },
    Preview,
}

pub fn stage_cost(x: &AgentState, u: f64, v_ref: f64, w: &CostWeights) -> f64 {
    let dv = x.v - v_ref;
    w.q * dv * dv + w.r * u * u
}

pub fn terminal_cost(x: &AgentState, v_ref: f64, w: &CostWeights) -> f64 {
    let dv = x.v - v_ref;
    w.q_n * dv * dv
}

/// Received trajectory of a conflicting agent, aligned so that `poses[j]`
/// is its predicted pose at `k + j` (`poses[0]` is unused by the constraints).
#[derive(Debug, Clone, PartialEq)]
pub struct ConflictTrajectory {
    pub id: AgentId,
    pub geometry: AgentGeometry,
    pub poses: Vec<Pose2D>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreviewConstraint {
    /// Critical-region exit after the liveness rule (0 when released).
    pub s_cr_out: f64,
    pub s_stop: f64,
}

/// Raw constraint values in the flat layout described in the module docs:
/// `g` (feasible when `<= 0`) and `h` (feasible when `= 0`).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConstraintResiduals {
    pub ineq: Vec<f64>,
    pub eq: Vec<f64>,
}

impl ConstraintResiduals {
    /// `psi_s / beta_s` for every constraint, inequalities first.
    pub fn normalized_penalties(&self) -> Vec<f64> {
        self.ineq
            .iter()
            .map(|g| {
                let p = g.max(0.0);
                p * p
            })
            .chain(self.eq.iter().map(|h| h * h))
            .collect()
    }

    pub fn max_normalized_penalty(&self) -> f64 {
        self.normalized_penalties().into_iter().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct OcpProblem<'a> {
    pub model: DiscreteModel,
    pub path: &'a PathSpline,
    pub weights: CostWeights,
    pub limits: AgentLimits,
    pub geometry: AgentGeometry,
    pub safety: SafetyParams,
    pub x0: AgentState,
    pub horizon: usize,
    /// `v_ref[j]`, `j = 0..=N`.
    pub v_ref: Vec<f64>,
    /// `v_max[j]`, `j = 0..=N` (index 0 unused).
    pub v_max: Vec<f64>,
    pub conflicts: Vec<ConflictTrajectory>,
    pub preview: Option<PreviewConstraint>,
    /// Penalty weights in the flat layout.
    pub beta: Vec<f64>,
}

impl<'a> OcpProblem<'a> {
    /// Problem with constant references and limits and uniform weights.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: DiscreteModel,
        path: &'a PathSpline,
        weights: CostWeights,
        limits: AgentLimits,
        geometry: AgentGeometry,
        safety: SafetyParams,
        x0: AgentState,
        horizon: usize,
        v_ref: f64,
        conflicts: Vec<ConflictTrajectory>,
        preview: Option<PreviewConstraint>,
        beta0: f64,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be at least 1".into()));
        }
        for c in &conflicts {
            if c.poses.len() != horizon + 1 {
                return Err(Error::InvalidParameter(format!(
                    "trajectory of agent {} has {} samples, expected {}",
                    c.id,
                    c.poses.len(),
                    horizon + 1
                )));
            }
        }
        let mut p = Self {
            model,
            path,
            weights,
            limits,
            geometry,
            safety,
            x0,
            horizon,
            v_ref: vec![v_ref; horizon + 1],
            v_max: vec![limits.v_max; horizon + 1],
            conflicts,
            preview,
            beta: Vec::new(),
        };
        p.beta = vec![beta0; p.num_constraints()];
        Ok(p)
    }

    pub fn num_ineq(&self) -> usize {
        INEQ_PER_STEP * self.horizon
    }

    pub fn num_eq(&self) -> usize {
        self.conflicts.len() * self.horizon + usize::from(self.preview.is_some())
    }

    pub fn num_constraints(&self) -> usize {
        self.num_ineq() + self.num_eq()
    }

    pub fn constraint_id(&self, index: usize) -> ConstraintId {
        let n = self.horizon;
        if index < self.num_ineq() {
            return ConstraintId::Ineq {
                kind: IneqKind::ALL[index % INEQ_PER_STEP],
                step: index / INEQ_PER_STEP + 1,
            };
        }
        let e = index - self.num_ineq();
        if e < self.conflicts.len() * n {
            ConstraintId::Collision {
                agent: self.conflicts[e / n].id,
                step: e % n + 1,
            }
        } else {
            ConstraintId::Preview
        }
    }

    pub fn input_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (
            vec![self.limits.a_x_min; self.horizon],
            vec![self.limits.a_x_max; self.horizon],
        )
    }

    pub fn rollout(&self, u: &[f64]) -> Vec<[f64; 3]> {
        let mut xs = Vec::with_capacity(self.horizon + 1);
        rollout_into(&self.model, self.x0.to_array(), u, &mut xs);
        xs
    }

    /// Tracking objective without penalties.
    pub fn objective(&self, u: &[f64]) -> f64 {
        let xs = self.rollout(u);
        self.objective_of(u, &xs)
    }

    fn objective_of(&self, u: &[f64], xs: &[[f64; 3]]) -> f64 {
        let n = self.horizon;
        let w = &self.weights;
        let mut j_cost = 0.0;
        for j in 0..n {
            j_cost += stage_cost(&AgentState::from_array(xs[j]), u[j], self.v_ref[j], w);
        }
        j_cost + terminal_cost(&AgentState::from_array(xs[n]), self.v_ref[n], w)
    }

    /// Own pose at step `j` with partials with respect to `(s, v)`.
    fn own_pose<S: Scalar>(sample: &PathSample, v: f64) -> ([S; 2], S, S) {
        (
            [
                S::with_partials(sample.x, [sample.dx_ds, 0.0]),
                S::with_partials(sample.y, [sample.dy_ds, 0.0]),
            ],
            S::with_partials(sample.psi, [sample.dpsi_ds, 0.0]),
            S::with_partials(v, [0.0, 1.0]),
        )
    }

    fn overlap_at<S: Scalar>(&self, sample: &PathSample, v: f64, other: &Pose2D, geom_l: &AgentGeometry) -> S {
        let (xy, psi, vv) = Self::own_pose::<S>(sample, v);
        pairwise_overlap(
            xy,
            psi,
            vv,
            &self.geometry,
            &self.safety,
            [S::cst(other.x_g), S::cst(other.y_g)],
            S::cst(other.psi),
            S::cst(other.v),
            geom_l,
        )
        .area
    }

    fn preview_value<S: Scalar>(pc: &PreviewConstraint, s_n: S) -> S {
        (S::cst(pc.s_cr_out) - s_n).pos() * (s_n - S::cst(pc.s_stop)).pos()
    }

    fn ineq_values(&self, sample: &PathSample, x: [f64; 3], j: usize) -> [f64; INEQ_PER_STEP] {
        let [a_x, v, _] = x;
        let a_y = sample.kappa * v * v;
        let l = &self.limits;
        [
            v - self.v_max[j],
            -v,
            a_y - l.a_y_max,
            -a_y - l.a_y_max,
            a_x * a_x + a_y * a_y - l.a_tot_max * l.a_tot_max,
        ]
    }

    /// Penalised cost; writes its gradient when `grad` is given and the raw
    /// residuals when `res` is given.
    fn evaluate(&self, u: &[f64], grad: Option<&mut [f64]>, res: Option<&mut ConstraintResiduals>) -> f64 {
        let n = self.horizon;
        debug_assert_eq!(u.len(), n);
        let xs = self.rollout(u);
        let w = &self.weights;
        let mut phi = self.objective_of(u, &xs);
        let want_grad = grad.is_some();
        let mut lam = vec![[0.0f64; 3]; n + 1];
        if want_grad {
            for j in 1..n {
                lam[j][1] += 2.0 * w.q * (xs[j][1] - self.v_ref[j]);
            }
            lam[n][1] += 2.0 * w.q_n * (xs[n][1] - self.v_ref[n]);
        }
        let mut res = res;
        if let Some(r) = res.as_deref_mut() {
            r.ineq.clear();
            r.eq.clear();
            r.eq.resize(self.num_eq(), 0.0);
        }

        let n_ineq = self.num_ineq();
        for j in 1..=n {
            let x = xs[j];
            let sample = self.path.sample(x[2]);
            let g = self.ineq_values(&sample, x, j);
            if let Some(r) = res.as_deref_mut() {
                r.ineq.extend_from_slice(&g);
            }
            for (m, &gm) in g.iter().enumerate() {
                if gm <= 0.0 {
                    continue;
                }
                let b = self.beta[(j - 1) * INEQ_PER_STEP + m];
                phi += b * gm * gm;
                if want_grad {
                    let c = 2.0 * b * gm;
                    let [a_x, v, _] = x;
                    let a_y = sample.kappa * v * v;
                    let day_dv = 2.0 * sample.kappa * v;
                    let day_ds = sample.dkappa_ds * v * v;
                    let l = &mut lam[j];
                    match IneqKind::ALL[m] {
                        IneqKind::VelocityMax => l[1] += c,
                        IneqKind::VelocityMin => l[1] -= c,
                        IneqKind::LateralPos => {
                            l[1] += c * day_dv;
                            l[2] += c * day_ds;
                        }
                        IneqKind::LateralNeg => {
                            l[1] -= c * day_dv;
                            l[2] -= c * day_ds;
                        }
                        IneqKind::FrictionCircle => {
                            l[0] += c * 2.0 * a_x;
                            l[1] += c * 2.0 * a_y * day_dv;
                            l[2] += c * 2.0 * a_y * day_ds;
                        }
                    }
                }
            }

            for (ci, conf) in self.conflicts.iter().enumerate() {
                let idx = ci * n + (j - 1);
                let other = &conf.poses[j];
                let h = if want_grad {
                    let a: Dual2 = self.overlap_at(&sample, x[1], other, &conf.geometry);
                    if a.v != 0.0 {
                        let c = 2.0 * self.beta[n_ineq + idx] * a.v;
                        lam[j][2] += c * a.d[0];
                        lam[j][1] += c * a.d[1];
                    }
                    a.v
                } else {
                    self.overlap_at::<f64>(&sample, x[1], other, &conf.geometry)
                };
                phi += self.beta[n_ineq + idx] * h * h;
                if let Some(r) = res.as_deref_mut() {
                    r.eq[idx] = h;
                }
            }
        }

        if let Some(pc) = &self.preview {
            let idx = self.conflicts.len() * n;
            let b = self.beta[n_ineq + idx];
            let s_n = Dual2::new(xs[n][2], [1.0, 0.0]);
            let h = Self::preview_value(pc, s_n);
            phi += b * h.v * h.v;
            if want_grad {
                lam[n][2] += 2.0 * b * h.v * h.d[0];
            }
            if let Some(r) = res {
                r.eq[idx] = h.v;
            }
        }

        if let Some(grad) = grad {
            let bd = self.model.b;
            let mut mu = lam[n];
            for j in (0..n).rev() {
                if j + 1 < n {
                    let t = self.model.transpose_apply(mu);
                    mu = [lam[j + 1][0] + t[0], lam[j + 1][1] + t[1], lam[j + 1][2] + t[2]];
                }
                grad[j] = 2.0 * w.r * u[j] + bd[0] * mu[0] + bd[1] * mu[1] + bd[2] * mu[2];
            }
        }
        phi
    }

    pub fn penalty_cost(&self, u: &[f64]) -> f64 {
        self.evaluate(u, None, None)
    }

    /// Penalised cost and its gradient.
    pub fn cost_and_grad(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        self.evaluate(u, Some(grad), None)
    }

    pub fn residuals(&self, u: &[f64]) -> ConstraintResiduals {
        let mut r = ConstraintResiduals::default();
        self.evaluate(u, None, Some(&mut r));
        r
    }

    /// Distance from `u` to the nearest nonsmooth point of the penalised
    /// cost, measured in the arguments of the max/min operations.
    pub fn kink_margin(&self, u: &[f64]) -> f64 {
        let xs = self.rollout(u);
        let mut margin = f64::INFINITY;
        for j in 1..=self.horizon {
            let sample = self.path.sample(xs[j][2]);
            for g in self.ineq_values(&sample, xs[j], j) {
                margin = margin.min(g.abs());
            }
            for conf in &self.conflicts {
                let (_, m) = measure_switch_margin(|| {
                    self.overlap_at::<Switch>(&sample, xs[j][1], &conf.poses[j], &conf.geometry)
                });
                margin = margin.min(m);
            }
        }
        if let Some(pc) = &self.preview {
            let (_, m) = measure_switch_margin(|| Self::preview_value(pc, Switch(xs[self.horizon][2])));
            margin = margin.min(m);
        }
        margin
    }
}

/// Inequality residuals of a state trajectory; `x_traj[0]` is the current
/// state and is not constrained.
pub fn inequality_residuals(x_traj: &[AgentState], limits: &AgentLimits, spline: &PathSpline) -> Vec<[f64; INEQ_PER_STEP]> {
    x_traj
        .iter()
        .skip(1)
        .map(|x| {
            let kappa = spline.sample(x.s).kappa;
            let a_y = kappa * x.v * x.v;
            [
                x.v - limits.v_max,
                -x.v,
                a_y - limits.a_y_max,
                -a_y - limits.a_y_max,
                x.a_x * x.a_x + a_y * a_y - limits.a_tot_max * limits.a_tot_max,
            ]
        })
        .collect()
}

/// Overlap areas `A^{i,l}_{k+j|k}` for every active conflict and `j = 1..N`.
///
/// `active` lists the conflicting agents; each must have an entry in
/// `received`, aligned as in [`ConflictTrajectory`].
#[allow(clippy::too_many_arguments)]
pub fn ca_residuals(
    x_traj: &[AgentState],
    spline: &PathSpline,
    geometry: &AgentGeometry,
    safety: &SafetyParams,
    active: &[AgentId],
    received: &BTreeMap<AgentId, ConflictTrajectory>,
) -> Result<BTreeMap<AgentId, Vec<f64>>> {
    let mut out = BTreeMap::new();
    for &l in active {
        let traj = received.get(&l).ok_or(Error::MissingTrajectory(l))?;
        let areas = x_traj
            .iter()
            .enumerate()
            .skip(1)
            .map(|(j, x)| {
                let smp = spline.sample(x.s);
                let other = &traj.poses[j];
                pairwise_overlap(
                    [smp.x, smp.y],
                    smp.psi,
                    x.v,
                    geometry,
                    safety,
                    [other.x_g, other.y_g],
                    other.psi,
                    other.v,
                    &traj.geometry,
                )
                .area
            })
            .collect();
        out.insert(l, areas);
    }
    Ok(out)
}

pub fn penalty_cost(u: &[f64], problem: &OcpProblem) -> f64 {
    problem.penalty_cost(u)
}

pub fn grad_penalty_cost(u: &[f64], problem: &OcpProblem) -> Vec<f64> {
    let mut g = vec![0.0; u.len()];
    problem.cost_and_grad(u, &mut g);
    g
}

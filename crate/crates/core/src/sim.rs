//! Closed-loop simulation with a one-step-delayed trajectory exchange.
//!
//! At step `k` every agent builds its problem from its measured state and
//! the messages stamped `k - 1`, all agents solve, the first inputs are
//! applied, and the new messages replace the mailbox in one swap.

use crate::collision::{
    box_separation, footprint_overlap, heading_unit_vector, overapprox_box_of, safety_distances,
    safety_region_corners, AgentGeometry, Pose2D,
};
use crate::coordination::{
    compute_conflict_sets, liveness_update, preview_applies, preview_constraint_value, region_of,
    static_ahead_sets, AgentId, AgentSnapshot, ConflictCase, PriorityMap, RegionTag,
};
use crate::error::{Error, Result};
use crate::kinematics::{AgentState, DiscreteModel};
use crate::ocp::{ConflictTrajectory, OcpProblem, PreviewConstraint};
use crate::panoc::{penalty_outer_loop, SolverResult, SolverStatus};
use crate::path_geometry::{fit_path_spline, PathSpline};
use crate::scenario::{AgentConfig, ScenarioConfig};
use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

/// Footprint overlap below this is treated as touching.
pub const COLLISION_AREA_EPS: f64 = 1e-9;

/// Planned trajectory broadcast by one agent; element `j` is its prediction
/// for time `k + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryMessage {
    pub sender: AgentId,
    pub k: usize,
    pub x_g: Vec<f64>,
    pub y_g: Vec<f64>,
    pub psi: Vec<f64>,
    pub v: Vec<f64>,
}

impl TrajectoryMessage {
    pub fn len(&self) -> usize {
        self.x_g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_g.is_empty()
    }

    pub fn pose(&self, j: usize) -> Pose2D {
        Pose2D::new(self.x_g[j], self.y_g[j], self.psi[j], self.v[j])
    }

    pub fn from_poses(sender: AgentId, k: usize, poses: &[Pose2D]) -> Self {
        Self {
            sender,
            k,
            x_g: poses.iter().map(|p| p.x_g).collect(),
            y_g: poses.iter().map(|p| p.y_g).collect(),
            psi: poses.iter().map(|p| p.psi).collect(),
            v: poses.iter().map(|p| p.v).collect(),
        }
    }
}

/// Re-indexes a message from step `k - 1` for step `k`: the first sample
/// is dropped and the last pose is advanced by `v_N * T_s` along its heading.
pub fn message_shift(msg: &TrajectoryMessage, horizon: usize, sampling_time: f64) -> Vec<Pose2D> {
    debug_assert_eq!(msg.len(), horizon + 1);
    let mut out: Vec<Pose2D> = (1..=horizon).map(|j| msg.pose(j)).collect();
    let last = msg.pose(horizon);
    let step = last.v * sampling_time;
    out.push(Pose2D::new(
        last.x_g + step * last.psi.cos(),
        last.y_g + step * last.psi.sin(),
        last.psi,
        last.v,
    ));
    out
}

/// Constant-velocity straight-line prediction from a single pose.
pub fn constant_velocity_prediction(pose: &Pose2D, horizon: usize, sampling_time: f64) -> Vec<Pose2D> {
    (0..=horizon)
        .map(|j| {
            let d = pose.v * sampling_time * j as f64;
            Pose2D::new(pose.x_g + d * pose.psi.cos(), pose.y_g + d * pose.psi.sin(), pose.psi, pose.v)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveDiagnostics {
    pub status: SolverStatus,
    pub inner_iterations: usize,
    pub outer_iterations: usize,
    pub fixed_point_residual: f64,
    /// `max_s psi_s / beta_s` at the applied solution.
    pub max_constraint_residual: f64,
    pub line_search_stalls: usize,
    pub fbe_increases: usize,
    /// The warm-started solve failed and the braking restart was kept.
    pub restarted: bool,
    pub solve_time_ms: f64,
}

/// Input sequence taking `v0` to `v_target` within the horizon. The lag has
/// unit gain, so holding `a` for `dv / a` seconds delivers `dv` in full.
fn speed_change_guess(v0: f64, v_target: f64, n: usize, ts: f64, a_min: f64, a_max: f64) -> Vec<f64> {
    let dv = v_target - v0;
    let a = (dv / (0.8 * n as f64 * ts)).clamp(a_min, a_max);
    if a == 0.0 {
        return vec![0.0; n];
    }
    let on = (dv / a / ts).round() as usize;
    (0..n).map(|j| if j < on { a } else { 0.0 }).collect()
}

/// Everything logged for one agent at one step. Poses and overlaps refer to
/// the measured state at `k`, before `u` is applied.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub agent: AgentId,
    pub state: AgentState,
    pub pose: Pose2D,
    pub u: f64,
    pub region: RegionTag,
    pub case: ConflictCase,
    pub active: Vec<AgentId>,
    pub prioritized_active: Vec<AgentId>,
    pub diagnostics: SolveDiagnostics,
    /// Raw preview residual `h` of the applied plan, when imposed.
    pub preview_residual: Option<f64>,
    /// `s_cr_out` after the liveness rule.
    pub effective_s_cr_out: f64,
    /// Predicted `s` at the end of the horizon.
    pub planned_s_end: f64,
    /// Signed distance between this agent's safety region and the bounding
    /// box of every agent in its active set.
    pub region_separation: Vec<(AgentId, f64)>,
    /// Exact footprint overlap with every other agent.
    pub footprint_overlap: Vec<(AgentId, f64)>,
}

/// One entry per step, each holding one record per agent.
pub type Trace = Vec<Vec<StepRecord>>;

/// Static per-agent data derived from the scenario.
#[derive(Debug, Clone)]
pub struct AgentRuntime {
    pub cfg: AgentConfig,
    pub path: PathSpline,
    pub model: DiscreteModel,
}

impl AgentRuntime {
    pub fn pose(&self, state: &AgentState) -> Pose2D {
        let smp = self.path.sample(state.s);
        Pose2D::new(smp.x, smp.y, smp.psi, state.v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub k: usize,
    pub states: Vec<AgentState>,
    /// Messages stamped `k - 1`; empty at `k = 0`.
    pub mailbox: BTreeMap<AgentId, TrajectoryMessage>,
    pub warm_start: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub scenario: ScenarioConfig,
    pub agents: Vec<AgentRuntime>,
    pub priorities: PriorityMap,
    pub ahead_static: Vec<BTreeSet<AgentId>>,
}

impl Simulation {
    pub fn new(scenario: ScenarioConfig) -> Result<Self> {
        scenario.validate()?;
        let ts = scenario.global.sampling_time;
        let agents = scenario
            .agents
            .iter()
            .map(|a| {
                Ok(AgentRuntime {
                    path: fit_path_spline(&a.waypoint_list())?,
                    model: DiscreteModel::from_params(&a.dynamics(ts)),
                    cfg: a.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let priorities = scenario.priorities()?;
        let mut sim = Self {
            scenario,
            agents,
            priorities,
            ahead_static: Vec::new(),
        };
        let world = sim.initial_world();
        let poses = sim.poses(&world.states);
        sim.ahead_static = static_ahead_sets(&sim.snapshots(&world.states, &poses), &sim.scenario.global.lane);
        Ok(sim)
    }

    pub fn initial_world(&self) -> WorldState {
        let n = self.scenario.global.horizon;
        WorldState {
            k: 0,
            states: self.agents.iter().map(|a| a.cfg.initial_state()).collect(),
            mailbox: BTreeMap::new(),
            warm_start: vec![vec![0.0; n]; self.agents.len()],
        }
    }

    fn poses(&self, states: &[AgentState]) -> Vec<Pose2D> {
        self.agents.iter().zip(states).map(|(a, x)| a.pose(x)).collect()
    }

    fn snapshots<'s>(&'s self, states: &[AgentState], poses: &[Pose2D]) -> Vec<AgentSnapshot<'s>> {
        self.agents
            .iter()
            .zip(states.iter().zip(poses))
            .map(|(a, (x, p))| AgentSnapshot {
                id: a.cfg.id,
                s: x.s,
                pose: *p,
                path: &a.path,
                regions: &a.cfg.regions,
            })
            .collect()
    }

    /// Predicted poses of `other` for steps `k..=k+N` as seen at `k`.
    fn received_poses(&self, world: &WorldState, other: usize, poses: &[Pose2D]) -> Vec<Pose2D> {
        let g = &self.scenario.global;
        let id = self.agents[other].cfg.id;
        match world.mailbox.get(&id) {
            Some(msg) => message_shift(msg, g.horizon, g.sampling_time),
            None => constant_velocity_prediction(&poses[other], g.horizon, g.sampling_time),
        }
    }

    /// Builds agent `index`'s problem at the world's current step.
    pub fn build_problem<'s>(
        &'s self,
        world: &WorldState,
        index: usize,
    ) -> Result<(OcpProblem<'s>, crate::coordination::ConflictSets, Option<PreviewConstraint>)> {
        let poses = self.poses(&world.states);
        let snaps = self.snapshots(&world.states, &poses);
        let mut sets = compute_conflict_sets(&snaps, &self.priorities, &self.ahead_static, &self.scenario.global.lane);
        let sets = sets.swap_remove(index);
        let a = &self.agents[index];
        let g = &self.scenario.global;
        let x = world.states[index];

        let mut conflicts = Vec::with_capacity(sets.active.len());
        for &l in &sets.active {
            let other = self
                .agents
                .iter()
                .position(|r| r.cfg.id == l)
                .ok_or(Error::MissingTrajectory(l))?;
            conflicts.push(ConflictTrajectory {
                id: l,
                geometry: self.agents[other].cfg.geometry(),
                poses: self.received_poses(world, other, &poses),
            });
        }
        let preview = preview_applies(x.s, &a.cfg.regions).then(|| PreviewConstraint {
            s_cr_out: liveness_update(&sets.prioritized_active, a.cfg.regions.s_cr_out),
            s_stop: a.cfg.regions.s_stop,
        });
        let problem = OcpProblem::new(
            a.model,
            &a.path,
            a.cfg.weights,
            a.cfg.limits,
            a.cfg.geometry(),
            a.cfg.safety,
            x,
            g.horizon,
            a.cfg.v_ref,
            conflicts,
            preview,
            g.penalty.initial_weight,
        )?;
        Ok((problem, sets, preview))
    }

    /// Advances the world by one step.
    pub fn step(&self, world: &WorldState) -> Result<(WorldState, Vec<StepRecord>)> {
        let g = &self.scenario.global;
        let n = g.horizon;
        let pcfg = g.penalty_config();
        let poses = self.poses(&world.states);
        let snaps = self.snapshots(&world.states, &poses);
        let all_sets = compute_conflict_sets(&snaps, &self.priorities, &self.ahead_static, &g.lane);

        let mut next = WorldState {
            k: world.k + 1,
            states: Vec::with_capacity(self.agents.len()),
            mailbox: BTreeMap::new(),
            warm_start: Vec::with_capacity(self.agents.len()),
        };
        let mut records = Vec::with_capacity(self.agents.len());

        for (i, a) in self.agents.iter().enumerate() {
            let id = a.cfg.id;
            let x = world.states[i];
            let (mut problem, sets, preview) = self.build_problem(world, i)?;
            debug_assert_eq!(sets, all_sets[i]);

            let started = Instant::now();
            let mut result = penalty_outer_loop(&mut problem, &world.warm_start[i], &pcfg, &g.solver);
            let mut restarted = false;
            if result.status == SolverStatus::MaxOuterReached {
                // the warm start can sit in a basin with no feasible point; retry from
                // a stop and from a speed-up, keeping the cheapest converged plan
                let lim = &a.cfg.limits;
                let guesses = [
                    speed_change_guess(x.v, 0.0, n, g.sampling_time, lim.a_x_min, lim.a_x_max),
                    speed_change_guess(x.v, lim.v_max, n, g.sampling_time, lim.a_x_min, lim.a_x_max),
                ];
                let rank = |r: &SolverResult, p: &OcpProblem| match r.status {
                    SolverStatus::Converged => (0, p.objective(&r.u)),
                    _ => (1, r.max_constraint_residual),
                };
                let mut spent = result.inner_iterations;
                let mut best = rank(&result, &problem);
                for guess in &guesses {
                    let alt = penalty_outer_loop(&mut problem, guess, &pcfg, &g.solver);
                    spent += alt.inner_iterations;
                    let r = rank(&alt, &problem);
                    if r.0 < best.0 || (r.0 == best.0 && r.1 < best.1) {
                        best = r;
                        result = alt;
                        restarted = true;
                    }
                }
                result.inner_iterations = spent;
            }
            let solve_time_ms = started.elapsed().as_secs_f64() * 1e3;
            if result.u.iter().any(|v| !v.is_finite()) {
                return Err(Error::SolverFailure {
                    agent: id,
                    step: world.k,
                    reason: "non-finite input sequence".into(),
                });
            }

            let xs = problem.rollout(&result.u);
            let plan: Vec<Pose2D> = xs
                .iter()
                .map(|s| a.pose(&AgentState::from_array(*s)))
                .collect();
            next.mailbox.insert(id, TrajectoryMessage::from_poses(id, world.k, &plan));
            next.states.push(AgentState::from_array(a.model.step(x.to_array(), result.u[0])));
            let mut warm = result.u[1..].to_vec();
            warm.push(result.u[n - 1]);
            next.warm_start.push(warm);

            let s_end = xs[n][2];
            let preview_residual = preview.map(|pc| preview_constraint_value(s_end, pc.s_cr_out, pc.s_stop));
            let effective_s_cr_out = liveness_update(&sets.prioritized_active, a.cfg.regions.s_cr_out);

            let region_separation = sets
                .active
                .iter()
                .map(|&l| {
                    let m = self.agents.iter().position(|r| r.cfg.id == l).unwrap();
                    (l, safety_region_separation(&poses[i], &a.cfg, &poses[m], &self.agents[m].cfg.geometry()))
                })
                .collect();
            let footprint = self
                .agents
                .iter()
                .enumerate()
                .filter(|(m, _)| *m != i)
                .map(|(m, b)| {
                    (
                        b.cfg.id,
                        footprint_overlap(&poses[i], &a.cfg.geometry(), &poses[m], &b.cfg.geometry()),
                    )
                })
                .collect();

            records.push(StepRecord {
                k: world.k,
                agent: id,
                state: x,
                pose: poses[i],
                u: result.u[0],
                region: region_of(x.s, &a.cfg.regions),
                case: sets.case,
                active: sets.active.iter().copied().collect(),
                prioritized_active: sets.prioritized_active.iter().copied().collect(),
                diagnostics: SolveDiagnostics {
                    status: result.status,
                    inner_iterations: result.inner_iterations,
                    outer_iterations: result.outer_iterations,
                    fixed_point_residual: result.fixed_point_residual,
                    max_constraint_residual: result.max_constraint_residual,
                    line_search_stalls: result.line_search_stalls,
                    fbe_increases: result.fbe_increases,
                    restarted,
                    solve_time_ms,
                },
                preview_residual,
                effective_s_cr_out,
                planned_s_end: s_end,
                region_separation,
                footprint_overlap: footprint,
            });
        }
        Ok((next, records))
    }

    /// Runs `n_steps` steps from the initial conditions. On a step error the
    /// records gathered so far are returned with it.
    pub fn run(&self, n_steps: usize) -> std::result::Result<Trace, (Trace, Error)> {
        self.run_with(n_steps, |_, _| {})
    }

    /// [`Simulation::run`] with a callback after every step.
    pub fn run_with(
        &self,
        n_steps: usize,
        mut on_step: impl FnMut(usize, &[StepRecord]),
    ) -> std::result::Result<Trace, (Trace, Error)> {
        let mut world = self.initial_world();
        let mut trace = Vec::with_capacity(n_steps);
        for _ in 0..n_steps {
            match self.step(&world) {
                Ok((next, records)) => {
                    on_step(world.k, &records);
                    trace.push(records);
                    world = next;
                }
                Err(e) => return Err((trace, e)),
            }
        }
        Ok(trace)
    }
}

/// Signed distance between agent `i`'s safety region and agent `l`'s
/// over-approximating box, in `i`'s body frame.
pub fn safety_region_separation(pose_i: &Pose2D, cfg_i: &AgentConfig, pose_l: &Pose2D, geom_l: &AgentGeometry) -> f64 {
    let n_psi = heading_unit_vector(pose_i.psi, pose_l.psi);
    let d = safety_distances(pose_i.v, pose_l.v, n_psi, &cfg_i.safety);
    let region = safety_region_corners(&cfg_i.geometry(), &d);
    box_separation(&region, &overapprox_box_of(pose_l, geom_l, pose_i))
}

pub fn run(scenario: &ScenarioConfig, n_steps: usize) -> Result<Trace> {
    Simulation::new(scenario.clone())?.run(n_steps).map_err(|(_, e)| e)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Collision {
    pub k: usize,
    pub i: AgentId,
    pub l: AgentId,
    pub area: f64,
}

/// Exact footprint intersections for every step and unordered pair.
pub fn detect_actual_collision(trace: &[Vec<StepRecord>], geometries: &BTreeMap<AgentId, AgentGeometry>) -> Vec<Collision> {
    let mut out = Vec::new();
    for step in trace {
        for (a, ra) in step.iter().enumerate() {
            for rb in &step[a + 1..] {
                let (Some(ga), Some(gb)) = (geometries.get(&ra.agent), geometries.get(&rb.agent)) else {
                    continue;
                };
                let area = footprint_overlap(&ra.pose, ga, &rb.pose, gb);
                if area > COLLISION_AREA_EPS {
                    out.push(Collision {
                        k: ra.k,
                        i: ra.agent,
                        l: rb.agent,
                        area,
                    });
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msg(poses: &[Pose2D]) -> TrajectoryMessage {
        TrajectoryMessage::from_poses(1, 0, poses)
    }

    #[test]
    fn speed_change_guess_settles_near_target() {
        let m = DiscreteModel::from_params(&crate::kinematics::AgentDynamicsParams::new(0.3, 0.1).unwrap());
        for (v0, target) in [(14.0, 0.0), (8.0, 15.0), (0.5, 0.0), (10.0, 10.0)] {
            let u = speed_change_guess(v0, target, 50, 0.1, -7.0, 4.0);
            assert!(u.iter().all(|a| (-7.0..=4.0).contains(a)));
            let xs = crate::kinematics::rollout(&m, AgentState::new(0.0, v0, 0.0), &u);
            let v_end = xs[50].v;
            assert!((v_end - target).abs() < 0.5, "{v0} -> {target}: ended at {v_end}");
            let lo = v0.min(target) - 0.5;
            let hi = v0.max(target) + 0.5;
            assert!(xs.iter().all(|x| (lo..=hi).contains(&x.v)));
        }
    }

    #[test]
    fn shift_stationary_sender() {
        let p = Pose2D::new(3.0, 4.0, 1.0, 0.0);
        let shifted = message_shift(&msg(&[p; 6]), 5, 0.1);
        assert_eq!(shifted, vec![p; 6]);
    }

    #[test]
    fn shift_constant_velocity_line() {
        let poses: Vec<Pose2D> = (0..=5).map(|j| Pose2D::new(j as f64, 0.0, 0.0, 10.0)).collect();
        let shifted = message_shift(&msg(&poses), 5, 0.1);
        assert_eq!(shifted.len(), 6);
        assert_eq!(shifted[0], poses[1]);
        assert!((shifted[5].x_g - 6.0).abs() < 1e-12);
    }

    #[test]
    fn cold_start_prediction() {
        let p = Pose2D::new(0.0, 0.0, std::f64::consts::FRAC_PI_2, 8.0);
        let pred = constant_velocity_prediction(&p, 50, 0.1);
        assert_eq!(pred.len(), 51);
        assert!((pred[50].y_g - 40.0).abs() < 1e-12);
        assert!(pred[50].x_g.abs() < 1e-12);
    }
}

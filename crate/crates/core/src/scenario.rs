//! Scenario files: TOML with a `[global]` table and one `[[agent]]` block
//! per vehicle.

use crate::collision::{AgentGeometry, SafetyParams};
use crate::coordination::{AgentId, LaneConfig, PriorityMap, RegionBoundaries};
use crate::error::{Error, Result};
use crate::kinematics::{AgentDynamicsParams, AgentState};
use crate::ocp::{AgentLimits, CostWeights};
use crate::panoc::{PenaltyConfig, SolverConfig};
use crate::path_geometry::{fit_path_spline, Waypoint};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::Path;

/// Penalty-loop settings other than the constraint tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PenaltySettings {
    pub initial_weight: f64,
    pub escalation: f64,
    pub max_outer_iterations: usize,
    pub inner_tolerance: f64,
    pub final_inner_tolerance: f64,
}

impl Default for PenaltySettings {
    fn default() -> Self {
        let p = PenaltyConfig::default();
        Self {
            initial_weight: p.initial_weight,
            escalation: p.escalation,
            max_outer_iterations: p.max_outer_iterations,
            inner_tolerance: p.inner_tolerance,
            final_inner_tolerance: p.final_inner_tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlobalConfig {
    pub sampling_time: f64,
    pub horizon: usize,
    /// `epsilon_s`: bound on `psi_s / beta_s`.
    pub constraint_tolerance: f64,
    #[serde(default)]
    pub lane: LaneConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub penalty: PenaltySettings,
}

impl GlobalConfig {
    pub fn penalty_config(&self) -> PenaltyConfig {
        let p = &self.penalty;
        PenaltyConfig {
            tolerance: self.constraint_tolerance,
            initial_weight: p.initial_weight,
            escalation: p.escalation,
            max_outer_iterations: p.max_outer_iterations,
            inner_tolerance: p.inner_tolerance,
            final_inner_tolerance: p.final_inner_tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub id: AgentId,
    /// Crossing rank; 1 is the highest priority.
    pub priority: u32,
    pub drivetrain_time_constant: f64,
    pub length: f64,
    pub width: f64,
    pub v_ref: f64,
    pub initial_velocity: f64,
    #[serde(default)]
    pub initial_acceleration: f64,
    #[serde(default)]
    pub initial_s: f64,
    pub limits: AgentLimits,
    pub weights: CostWeights,
    pub safety: SafetyParams,
    pub regions: RegionBoundaries,
    /// Path waypoints `[x_g, y_g]` in metres.
    pub waypoints: Vec<[f64; 2]>,
}

impl AgentConfig {
    pub fn geometry(&self) -> AgentGeometry {
        AgentGeometry::new(self.length, self.width)
    }

    pub fn dynamics(&self, sampling_time: f64) -> AgentDynamicsParams {
        AgentDynamicsParams {
            drivetrain_time_constant: self.drivetrain_time_constant,
            sampling_time,
        }
    }

    pub fn initial_state(&self) -> AgentState {
        AgentState::new(self.initial_acceleration, self.initial_velocity, self.initial_s)
    }

    pub fn waypoint_list(&self) -> Vec<Waypoint> {
        self.waypoints.iter().map(|&[x, y]| Waypoint::new(x, y)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub global: GlobalConfig,
    #[serde(rename = "agent")]
    pub agents: Vec<AgentConfig>,
}

impl ScenarioConfig {
    pub fn priorities(&self) -> Result<PriorityMap> {
        PriorityMap::new(self.agents.iter().map(|a| (a.id, a.priority)))
    }

    pub fn agent(&self, id: AgentId) -> Option<&AgentConfig> {
        self.agents.iter().find(|a| a.id == id)
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.global;
        if !(g.sampling_time.is_finite() && g.sampling_time > 0.0) {
            return invalid(format!("sampling_time must be positive, got {}", g.sampling_time));
        }
        if g.horizon == 0 {
            return invalid("horizon must be at least 1".into());
        }
        if !(g.constraint_tolerance > 0.0) {
            return invalid("constraint_tolerance must be positive".into());
        }
        let s = &g.solver;
        if !(s.tolerance > 0.0) || s.lbfgs_memory == 0 || !(s.line_search_shrink > 0.0 && s.line_search_shrink < 1.0) {
            return invalid(format!("invalid solver settings: {s:?}"));
        }
        let p = &g.penalty;
        if !(p.escalation > 1.0) || !(p.initial_weight > 0.0) || p.max_outer_iterations == 0 {
            return invalid(format!("invalid penalty settings: {p:?}"));
        }
        if self.agents.is_empty() {
            return invalid("scenario has no agents".into());
        }
        let mut ids = BTreeSet::new();
        for a in &self.agents {
            if !ids.insert(a.id) {
                return invalid(format!("agent id {} is used twice", a.id));
            }
            self.validate_agent(a)
                .map_err(|e| Error::Validation(format!("agent {}: {}", a.id, strip(e))))?;
        }
        self.priorities()?;
        Ok(())
    }

    fn validate_agent(&self, a: &AgentConfig) -> Result<()> {
        a.dynamics(self.global.sampling_time).validate()?;
        if !(a.length > 0.0 && a.width > 0.0) {
            return invalid("length and width must be positive".into());
        }
        let sp = &a.safety;
        if [sp.d_front, sp.d_rear, sp.d_left, sp.d_right, sp.t_gap_x, sp.t_gap_y]
            .iter()
            .any(|v| !(*v >= 0.0 && v.is_finite()))
        {
            return invalid("safety parameters must be non-negative".into());
        }
        a.limits.validate()?;
        a.weights.validate()?;
        a.regions.validate()?;
        if !(a.v_ref.is_finite() && a.v_ref >= 0.0 && a.initial_velocity.is_finite()) {
            return invalid("velocities must be finite and v_ref non-negative".into());
        }
        fit_path_spline(&a.waypoint_list())?;
        Ok(())
    }
}

fn invalid(msg: String) -> Result<()> {
    Err(Error::Validation(msg))
}

fn strip(e: Error) -> String {
    match e {
        Error::Validation(m) | Error::InvalidParameter(m) => m,
        other => other.to_string(),
    }
}

fn parse_error(text: &str, e: toml::de::Error) -> Error {
    Error::Parse {
        line: e.span().map_or(0, |sp| text[..sp.start].matches('\n').count() + 1),
        message: e.message().to_string(),
    }
}

/// Parses and validates a scenario.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig> {
    let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| parse_error(text, e))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    parse_scenario(&text)
}

pub fn serialize_scenario(cfg: &ScenarioConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::Validation(format!("cannot serialise scenario: {e}")))
}

/// Measured states of every agent at one step, for single-solve debugging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepState {
    pub k: usize,
    #[serde(rename = "agent")]
    pub agents: Vec<AgentStateEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentStateEntry {
    pub id: AgentId,
    pub a_x: f64,
    pub v: f64,
    pub s: f64,
}

pub fn parse_step_state(text: &str) -> Result<StepState> {
    toml::from_str(text).map_err(|e| parse_error(text, e))
}

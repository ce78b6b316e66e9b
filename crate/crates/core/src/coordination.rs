//! Intersection regions, priorities and conflict sets.

use crate::collision::Pose2D;
use crate::error::{Error, Result};
use crate::path_geometry::{unwrap_near, PathSpline};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

pub type AgentId = u32;

/// Region limits along one agent's own path coordinate, in metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionBoundaries {
    pub s_icr_in: f64,
    pub s_bs_in: f64,
    pub s_stop: f64,
    pub s_cr_in: f64,
    pub s_cr_out: f64,
    pub s_icr_out: f64,
}

impl RegionBoundaries {
    /// Defaults around a given critical region: control region 50 m before
    /// and 20 m after it, brake-safe region 20 m before it, stop line 2 m
    /// before it.
    pub fn around_critical_region(s_cr_in: f64, s_cr_out: f64) -> Self {
        Self {
            s_icr_in: s_cr_in - 50.0,
            s_bs_in: s_cr_in - 20.0,
            s_stop: s_cr_in - 2.0,
            s_cr_in,
            s_cr_out,
            s_icr_out: s_cr_out + 20.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let seq = [
            ("s_icr_in", self.s_icr_in),
            ("s_bs_in", self.s_bs_in),
            ("s_stop", self.s_stop),
            ("s_cr_in", self.s_cr_in),
            ("s_cr_out", self.s_cr_out),
            ("s_icr_out", self.s_icr_out),
        ];
        if let Some((name, _)) = seq.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Validation(format!("{name} is not finite")));
        }
        for w in seq.windows(2) {
            let (a, b) = (w[0], w[1]);
            // the stop line must lie strictly before the critical region
            let ok = if a.0 == "s_stop" { a.1 < b.1 } else { a.1 <= b.1 };
            if !ok {
                return Err(Error::Validation(format!(
                    "region boundaries out of order: {} = {} vs {} = {}",
                    a.0, a.1, b.0, b.1
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RegionTag {
    OutsideBefore,
    /// Inside the control region, before the brake-safe region.
    Approach,
    Bsr,
    Cr,
    InsideAfterCr,
    OutsideAfter,
}

impl RegionTag {
    pub fn inside_icr(self) -> bool {
        matches!(self, Self::Approach | Self::Bsr | Self::Cr | Self::InsideAfterCr)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::OutsideBefore => "outside_before",
            Self::Approach => "approach",
            Self::Bsr => "bsr",
            Self::Cr => "cr",
            Self::InsideAfterCr => "inside_after_cr",
            Self::OutsideAfter => "outside_after",
        }
    }
}

impl fmt::Display for RegionTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Left-closed, right-open classification.
pub fn region_of(s: f64, b: &RegionBoundaries) -> RegionTag {
    if s < b.s_icr_in {
        RegionTag::OutsideBefore
    } else if s < b.s_bs_in {
        RegionTag::Approach
    } else if s < b.s_cr_in {
        RegionTag::Bsr
    } else if s < b.s_cr_out {
        RegionTag::Cr
    } else if s < b.s_icr_out {
        RegionTag::InsideAfterCr
    } else {
        RegionTag::OutsideAfter
    }
}

/// Time-invariant crossing ranks; 1 is the highest priority.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PriorityMap {
    ranks: BTreeMap<AgentId, u32>,
}

impl PriorityMap {
    pub fn new(ranks: impl IntoIterator<Item = (AgentId, u32)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        let mut seen = BTreeSet::new();
        for (id, rank) in ranks {
            if map.insert(id, rank).is_some() {
                return Err(Error::Validation(format!("agent {id} has two priorities")));
            }
            if !seen.insert(rank) {
                return Err(Error::Validation(format!("priority rank {rank} is assigned twice")));
            }
        }
        Ok(Self { ranks: map })
    }

    pub fn rank(&self, id: AgentId) -> Option<u32> {
        self.ranks.get(&id).copied()
    }

    pub fn agents(&self) -> impl Iterator<Item = AgentId> + '_ {
        self.ranks.keys().copied()
    }
}

/// Agents with a strictly higher priority (lower rank) than `i`.
pub fn prioritized_conflict_set(i: AgentId, gamma: &PriorityMap) -> BTreeSet<AgentId> {
    let Some(own) = gamma.rank(i) else {
        return BTreeSet::new();
    };
    gamma.ranks.iter().filter(|(_, &r)| r < own).map(|(&l, _)| l).collect()
}

/// Same-lane membership thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaneConfig {
    /// Maximum centreline offset for two agents to share a lane.
    pub half_lane_width: f64,
    /// Maximum heading difference for two agents to share a lane.
    pub heading_tolerance: f64,
    /// How far behind the front agent the rear agent may be.
    pub lookback: f64,
}

impl Default for LaneConfig {
    fn default() -> Self {
        Self {
            half_lane_width: 1.75,
            heading_tolerance: std::f64::consts::FRAC_PI_6,
            lookback: 120.0,
        }
    }
}

/// Measured state of one agent at time `k`, as seen by the coordinator.
#[derive(Debug, Clone, Copy)]
pub struct AgentSnapshot<'a> {
    pub id: AgentId,
    pub s: f64,
    pub pose: Pose2D,
    pub path: &'a PathSpline,
    pub regions: &'a RegionBoundaries,
}

/// Whether `front` drives in the same lane as and ahead of `rear`.
///
/// The rear agent is projected onto the front agent's path; the offset must
/// be below half a lane width, the headings must agree and the projection
/// must lie behind the front agent.
pub fn same_lane_ahead(front: &AgentSnapshot, rear: &AgentSnapshot, lane: &LaneConfig) -> bool {
    let lo = front.s - lane.lookback;
    let (s_proj, dist) = front.path.project(rear.pose.x_g, rear.pose.y_g, lo, front.s);
    if dist >= lane.half_lane_width || s_proj >= front.s || s_proj <= lo {
        return false;
    }
    let psi_lane = front.path.sample(s_proj).psi;
    (unwrap_near(rear.pose.psi, psi_lane) - psi_lane).abs() < lane.heading_tolerance
}

/// `A_c,ahead` for every agent, fixed from the initial snapshot.
pub fn static_ahead_sets(agents: &[AgentSnapshot], lane: &LaneConfig) -> Vec<BTreeSet<AgentId>> {
    agents
        .iter()
        .map(|rear| {
            agents
                .iter()
                .filter(|front| front.id != rear.id && same_lane_ahead(front, rear, lane))
                .map(|front| front.id)
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConflictCase {
    /// Inside the control region, critical region not yet passed.
    A,
    /// Inside the control region, critical region passed.
    B,
    /// Outside the control region.
    C,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConflictSets {
    pub case: ConflictCase,
    pub prioritized: BTreeSet<AgentId>,
    /// Higher-priority agents that have not yet left their own critical region.
    pub prioritized_active: BTreeSet<AgentId>,
    pub ahead_static: BTreeSet<AgentId>,
    pub ahead_dynamic: BTreeSet<AgentId>,
    pub active: BTreeSet<AgentId>,
}

fn case_of(tag: RegionTag) -> ConflictCase {
    match tag {
        RegionTag::Approach | RegionTag::Bsr | RegionTag::Cr => ConflictCase::A,
        RegionTag::InsideAfterCr => ConflictCase::B,
        RegionTag::OutsideBefore | RegionTag::OutsideAfter => ConflictCase::C,
    }
}

/// Conflict sets of every agent from one consistent snapshot.
///
/// `ahead_static[n]` belongs to `agents[n]`. An agent `l` that currently
/// drives ahead of `i` in the same lane enters `i`'s dynamic set only if `l`
/// does not already constrain itself against `i`; this keeps every pair's
/// constraint in exactly one problem.
pub fn compute_conflict_sets(
    agents: &[AgentSnapshot],
    gamma: &PriorityMap,
    ahead_static: &[BTreeSet<AgentId>],
    lane: &LaneConfig,
) -> Vec<ConflictSets> {
    let left_cr: BTreeMap<AgentId, bool> =
        agents.iter().map(|a| (a.id, a.s >= a.regions.s_cr_out)).collect();

    let mut sets: Vec<ConflictSets> = agents
        .iter()
        .zip(ahead_static)
        .map(|(a, stat)| {
            let case = case_of(region_of(a.s, a.regions));
            let prioritized = prioritized_conflict_set(a.id, gamma);
            let prioritized_active = prioritized
                .iter()
                .copied()
                .filter(|l| !left_cr.get(l).copied().unwrap_or(true))
                .collect::<BTreeSet<_>>();
            let mut active = stat.clone();
            match case {
                ConflictCase::A => active.extend(&prioritized),
                ConflictCase::B => active.extend(&prioritized_active),
                ConflictCase::C => {}
            }
            ConflictSets {
                case,
                prioritized,
                prioritized_active,
                ahead_static: stat.clone(),
                ahead_dynamic: BTreeSet::new(),
                active,
            }
        })
        .collect();

    // a same-lane follower already holds the pair; its leader drops it
    let ids: Vec<AgentId> = agents.iter().map(|a| a.id).collect();
    for (n, set) in sets.iter_mut().enumerate() {
        set.active
            .retain(|l| set.ahead_static.contains(l) || !ids.iter().zip(ahead_static).any(|(m, st)| m == l && st.contains(&ids[n])));
    }

    let base: Vec<BTreeSet<AgentId>> = sets.iter().map(|c| c.active.clone()).collect();
    for (n, rear) in agents.iter().enumerate() {
        for (m, front) in agents.iter().enumerate() {
            if n == m || base[n].contains(&front.id) || base[m].contains(&rear.id) {
                continue;
            }
            if same_lane_ahead(front, rear, lane) {
                sets[n].ahead_dynamic.insert(front.id);
                sets[n].active.insert(front.id);
            }
        }
    }
    sets
}

/// Conflict sets of agent `agents[index]`; see [`compute_conflict_sets`].
pub fn active_conflict_set(
    index: usize,
    agents: &[AgentSnapshot],
    gamma: &PriorityMap,
    ahead_static: &[BTreeSet<AgentId>],
    lane: &LaneConfig,
) -> ConflictSets {
    compute_conflict_sets(agents, gamma, ahead_static, lane).swap_remove(index)
}

/// Critical-region exit the preview constraint must reach; zero once every
/// higher-priority agent has left its critical region.
pub fn liveness_update(prioritized_active: &BTreeSet<AgentId>, s_cr_out: f64) -> f64 {
    if prioritized_active.is_empty() {
        0.0
    } else {
        s_cr_out
    }
}

/// The minimum-preview constraint is imposed while in the brake-safe region.
pub fn preview_applies(s: f64, b: &RegionBoundaries) -> bool {
    b.s_bs_in <= s && s < b.s_cr_in
}

/// `[s_cr_out - s_N]+ * [s_N - s_stop]+`: zero iff the horizon end clears the
/// critical region or stays behind the stop line.
pub fn preview_constraint_value(s_n: f64, effective_s_cr_out: f64, s_stop: f64) -> f64 {
    (effective_s_cr_out - s_n).max(0.0) * (s_n - s_stop).max(0.0)
}

//! CSV trace output and run summaries.

use crate::sim::{StepRecord, Trace};
use crate::panoc::SolverStatus;
use serde::Serialize;
use std::io::{self, Write};

pub const TRACE_HEADER: &str =
    "k,t,agent,x_g,y_g,psi,v,a_x,u,s,region,active,solve_time_ms,inner_iters,outer_iters,max_residual";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TraceOptions {
    /// Write measured solve times. Off by default so identical runs give
    /// identical bytes; the column then holds zeros.
    pub wall_clock: bool,
}

/// Nine significant digits in scientific notation.
fn num(v: f64) -> String {
    format!("{v:.8e}")
}

fn row(r: &StepRecord, sampling_time: f64, opts: &TraceOptions) -> String {
    let active = r.active.iter().map(u32::to_string).collect::<Vec<_>>().join(";");
    let time = if opts.wall_clock { r.diagnostics.solve_time_ms } else { 0.0 };
    [
        r.k.to_string(),
        num(r.k as f64 * sampling_time),
        r.agent.to_string(),
        num(r.pose.x_g),
        num(r.pose.y_g),
        num(r.pose.psi),
        num(r.state.v),
        num(r.state.a_x),
        num(r.u),
        num(r.state.s),
        r.region.to_string(),
        active,
        num(time),
        r.diagnostics.inner_iterations.to_string(),
        r.diagnostics.outer_iterations.to_string(),
        num(r.diagnostics.max_constraint_residual),
    ]
    .join(",")
}

/// Writes the header and one row per (step, agent); returns bytes written.
pub fn write_trace<W: Write>(trace: &Trace, sampling_time: f64, dest: &mut W, opts: &TraceOptions) -> io::Result<usize> {
    let mut written = 0;
    let mut put = |line: &str| -> io::Result<()> {
        dest.write_all(line.as_bytes())?;
        dest.write_all(b"\n")?;
        written += line.len() + 1;
        Ok(())
    };
    put(TRACE_HEADER)?;
    for step in trace {
        for r in step {
            put(&row(r, sampling_time, opts))?;
        }
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingSummary {
    pub count: usize,
    pub min_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
    pub mean_ms: f64,
}

impl TimingSummary {
    pub fn from_samples(samples: &[f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let mut v = samples.to_vec();
        v.sort_by(f64::total_cmp);
        let pick = |q: f64| v[((v.len() - 1) as f64 * q).round() as usize];
        Some(Self {
            count: v.len(),
            min_ms: v[0],
            median_ms: pick(0.5),
            p95_ms: pick(0.95),
            max_ms: v[v.len() - 1],
            mean_ms: v.iter().sum::<f64>() / v.len() as f64,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentSummary {
    pub agent: u32,
    pub min_v: f64,
    pub max_v: f64,
    pub final_s: f64,
    pub final_region: String,
    pub timing: Option<TimingSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub steps: usize,
    pub collisions: usize,
    pub min_region_separation: Option<f64>,
    pub converged_solves: usize,
    pub max_inner_solves: usize,
    pub max_outer_solves: usize,
    pub timing: Option<TimingSummary>,
    pub agents: Vec<AgentSummary>,
}

pub fn summarize(trace: &Trace, collisions: usize) -> RunSummary {
    let mut agents: Vec<AgentSummary> = Vec::new();
    let mut per_agent_times: Vec<Vec<f64>> = Vec::new();
    let mut all_times = Vec::new();
    let mut min_sep: Option<f64> = None;
    let (mut conv, mut inner, mut outer) = (0, 0, 0);
    for step in trace {
        for r in step {
            let idx = match agents.iter().position(|a| a.agent == r.agent) {
                Some(i) => i,
                None => {
                    agents.push(AgentSummary {
                        agent: r.agent,
                        min_v: f64::INFINITY,
                        max_v: f64::NEG_INFINITY,
                        final_s: 0.0,
                        final_region: String::new(),
                        timing: None,
                    });
                    per_agent_times.push(Vec::new());
                    agents.len() - 1
                }
            };
            let a = &mut agents[idx];
            a.min_v = a.min_v.min(r.state.v);
            a.max_v = a.max_v.max(r.state.v);
            a.final_s = r.state.s;
            a.final_region = r.region.to_string();
            per_agent_times[idx].push(r.diagnostics.solve_time_ms);
            all_times.push(r.diagnostics.solve_time_ms);
            for &(_, d) in &r.region_separation {
                min_sep = Some(min_sep.map_or(d, |m| m.min(d)));
            }
            match r.diagnostics.status {
                SolverStatus::Converged => conv += 1,
                SolverStatus::MaxInnerReached => inner += 1,
                SolverStatus::MaxOuterReached => outer += 1,
            }
        }
    }
    for (a, t) in agents.iter_mut().zip(&per_agent_times) {
        a.timing = TimingSummary::from_samples(t);
    }
    RunSummary {
        steps: trace.len(),
        collisions,
        min_region_separation: min_sep,
        converged_solves: conv,
        max_inner_solves: inner,
        max_outer_solves: outer,
        timing: TimingSummary::from_samples(&all_times),
        agents,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_trace_is_header_only() {
        let mut buf = Vec::new();
        let n = write_trace(&Vec::new(), 0.1, &mut buf, &TraceOptions::default()).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{TRACE_HEADER}\n"));
        assert_eq!(n, TRACE_HEADER.len() + 1);
    }

    #[test]
    fn number_format_has_nine_digits() {
        assert_eq!(num(14.0), "1.40000000e1");
        assert_eq!(num(-0.000123456789), "-1.23456789e-4");
    }

    #[test]
    fn timing_quantiles() {
        let t = TimingSummary::from_samples(&[3.0, 1.0, 2.0]).unwrap();
        assert_eq!((t.min_ms, t.median_ms, t.max_ms), (1.0, 2.0, 3.0));
        assert!(TimingSummary::from_samples(&[]).is_none());
    }
}

//! `dmpc`: run, validate and debug intersection scenarios.
//!
//! Exit codes: 0 on success, 1 for unreadable or invalid input, 2 when a
//! solve fails.

use clap::{Parser, Subcommand};
use dmpc_core::collision::AgentGeometry;
use dmpc_core::kinematics::AgentState;
use dmpc_core::panoc::penalty_outer_loop;
use dmpc_core::scenario::{load_scenario, parse_step_state, ScenarioConfig};
use dmpc_core::sim::{detect_actual_collision, Simulation, Trace, WorldState};
use dmpc_core::trace::{summarize, write_trace, TraceOptions};
use dmpc_core::Error;
use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_SOLVER: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "dmpc", version, about = "Distributed MPC intersection simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a scenario and write trace.csv and summary.json.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 300)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
        /// Write measured solve times into the trace (breaks byte-identical reruns).
        #[arg(long)]
        wall_clock: bool,
        /// Suppress progress output.
        #[arg(long)]
        quiet: bool,
    },
    /// Parse and validate a scenario.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Solve one agent's problem from a given set of measured states.
    SolveOnce {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        agent: u32,
        #[arg(long)]
        step_state: PathBuf,
    },
}

/// Runs the CLI with the given arguments (including the program name).
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    match cli.command {
        Command::Run {
            scenario,
            steps,
            out,
            wall_clock,
            quiet,
        } => cmd_run(&scenario, steps, &out, wall_clock, quiet),
        Command::Validate { scenario } => match load(&scenario) {
            Ok(cfg) => {
                println!("{}: ok ({} agents)", scenario.display(), cfg.agents.len());
                EXIT_OK
            }
            Err(code) => code,
        },
        Command::SolveOnce {
            scenario,
            agent,
            step_state,
        } => cmd_solve_once(&scenario, agent, &step_state),
    }
}

fn load(path: &Path) -> Result<ScenarioConfig, i32> {
    load_scenario(path).map_err(|e| {
        match &e {
            Error::Io(_) => eprintln!("error: cannot read scenario {e}"),
            _ => eprintln!("error: {}: {e}", path.display()),
        }
        EXIT_INVALID
    })
}

fn write_outputs(trace: &Trace, cfg: &ScenarioConfig, out: &Path, wall_clock: bool) -> std::io::Result<usize> {
    fs::create_dir_all(out)?;
    let mut w = BufWriter::new(fs::File::create(out.join("trace.csv"))?);
    write_trace(trace, cfg.global.sampling_time, &mut w, &TraceOptions { wall_clock })?;
    w.flush()?;
    let geoms: BTreeMap<u32, AgentGeometry> = cfg.agents.iter().map(|a| (a.id, a.geometry())).collect();
    let collisions = detect_actual_collision(trace, &geoms);
    let summary = summarize(trace, collisions.len());
    let json = serde_json::to_string_pretty(&summary).map_err(std::io::Error::other)?;
    fs::write(out.join("summary.json"), json + "\n")?;
    Ok(collisions.len())
}

fn cmd_run(scenario: &Path, steps: usize, out: &Path, wall_clock: bool, quiet: bool) -> i32 {
    let cfg = match load(scenario) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let sim = match Simulation::new(cfg.clone()) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };
    let result = sim.run_with(steps, |k, _| {
        if !quiet && (k + 1) % 50 == 0 {
            eprintln!("step {}/{steps}", k + 1);
        }
    });
    let (trace, failure) = match result {
        Ok(t) => (t, None),
        Err((t, e)) => (t, Some(e)),
    };
    match write_outputs(&trace, &cfg, out, wall_clock) {
        Ok(collisions) if !quiet => eprintln!(
            "wrote {} steps to {} ({collisions} footprint collisions)",
            trace.len(),
            out.display()
        ),
        Ok(_) => {}
        Err(e) => {
            eprintln!("error: cannot write outputs to {}: {e}", out.display());
            return EXIT_INVALID;
        }
    }
    match failure {
        Some(e) => {
            eprintln!("error: {e}");
            EXIT_SOLVER
        }
        None => EXIT_OK,
    }
}

fn cmd_solve_once(scenario: &Path, agent: u32, step_state: &Path) -> i32 {
    let cfg = match load(scenario) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let state = match fs::read_to_string(step_state).map_err(Error::from).and_then(|t| parse_step_state(&t)) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {}: {e}", step_state.display());
            return EXIT_INVALID;
        }
    };
    let sim = match Simulation::new(cfg.clone()) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };
    let mut world: WorldState = sim.initial_world();
    world.k = state.k;
    for entry in &state.agents {
        match sim.agents.iter().position(|a| a.cfg.id == entry.id) {
            Some(i) => world.states[i] = AgentState::new(entry.a_x, entry.v, entry.s),
            None => {
                eprintln!("error: step state names unknown agent {}", entry.id);
                return EXIT_INVALID;
            }
        }
    }
    let Some(index) = sim.agents.iter().position(|a| a.cfg.id == agent) else {
        eprintln!("error: scenario has no agent {agent}");
        return EXIT_INVALID;
    };
    let (mut problem, sets, preview) = match sim.build_problem(&world, index) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_SOLVER;
        }
    };
    let n = cfg.global.horizon;
    let r = penalty_outer_loop(&mut problem, &vec![0.0; n], &cfg.global.penalty_config(), &cfg.global.solver);
    if r.u.iter().any(|v| !v.is_finite()) {
        eprintln!("error: solver returned a non-finite input sequence");
        return EXIT_SOLVER;
    }
    let xs = problem.rollout(&r.u);
    println!("agent {agent} at k = {}", state.k);
    println!("case {:?}, active {:?}, preview {:?}", sets.case, sets.active, preview);
    println!(
        "status {:?}, outer {}, inner {}, fixed-point residual {:.3e}, max psi/beta {:.3e}",
        r.status, r.outer_iterations, r.inner_iterations, r.fixed_point_residual, r.max_constraint_residual
    );
    println!("u0 = {:.6}, v_N = {:.4}, s_N = {:.4}", r.u[0], xs[n][1], xs[n][2]);
    EXIT_OK
}

//! `thermal-cbf`: synthesize barrier fields, run closed-loop episodes,
//! benchmark the solver pipeline and run the oracle sweeps.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 solver failure,
//! 4 episode failed (goal missed or collision), 5 verification failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use thermal_cbf::bench::{run_bench, BenchConfig};
use thermal_cbf::cbf_field::{synthesize_unchecked, FieldSidecar, SynthesisParams};
use thermal_cbf::krylov::{SolverConfig, SolverKind};
use thermal_cbf::laplace_system::{assemble, index_unknowns};
use thermal_cbf::mapgen::trial_rng;
use thermal_cbf::ogm::{classify_regions, distance_transform, inflate, load_pgm};
use thermal_cbf::sim_harness::{metrics, run_episode_with, write_episode, write_field_dump, Scenario};
use thermal_cbf::verify::{run_verify, Fault, VerifyConfig};
use thermal_cbf::{Error, Point2};

const EXIT_USAGE: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_EPISODE: u8 = 4;
const EXIT_VERIFY: u8 = 5;

#[derive(Parser)]
#[command(name = "thermal-cbf", version, about = "Control barrier functions from occupancy grids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a barrier field from a PGM occupancy map.
    Synth(SynthArgs),
    /// Run a closed-loop navigation episode.
    Simulate(SimulateArgs),
    /// Time synthesis on random maps.
    Bench(BenchArgs),
    /// Cross-check the solvers against reference solutions on random maps.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Occupancy map (PGM, P2 or P5; dark pixels are occupied).
    #[arg(long)]
    map: PathBuf,
    /// Cell edge length in meters.
    #[arg(long, default_value_t = 0.01)]
    cell_size: f64,
    /// Obstacle temperature magnitude.
    #[arg(long, default_value_t = 1.0)]
    a: f64,
    /// Safe temperature.
    #[arg(long, default_value_t = 1.0)]
    b: f64,
    /// Safety margin in meters.
    #[arg(long, default_value_t = 0.15)]
    delta: f64,
    /// Inflation radius in meters.
    #[arg(long, default_value_t = 0.0)]
    robot_radius: f64,
    #[arg(long, default_value = "gmres")]
    solver: SolverKind,
    /// Relative residual target.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Iteration cap (default min(10 N, 20000)).
    #[arg(long)]
    max_iters: Option<usize>,
    /// GMRES restart length.
    #[arg(long, default_value_t = 50)]
    restart: usize,
    /// Occupied below this gray level (default maxval / 2).
    #[arg(long)]
    threshold: Option<f64>,
    /// World x of the center of cell (0, 0).
    #[arg(long, default_value_t = 0.0)]
    origin_x: f64,
    /// World y of the center of cell (0, 0).
    #[arg(long, default_value_t = 0.0)]
    origin_y: f64,
    /// Field CSV output.
    #[arg(long)]
    out: PathBuf,
    /// Stats and metadata JSON output.
    #[arg(long)]
    stats: PathBuf,
    /// Also write the linear system as `<prefix>.mtx` and `<prefix>.rhs`.
    #[arg(long)]
    dump_system: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario JSON.
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Seed for --randomize.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Replace the scenario's obstacles with this many random ones.
    #[arg(long)]
    randomize: Option<usize>,
    /// Write every synthesized field under `<out-dir>/fields/`.
    #[arg(long)]
    dump_fields: bool,
    /// Override the scenario's step cap.
    #[arg(long)]
    max_steps: Option<usize>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(2..))]
    size: u64,
    #[arg(long, default_value_t = 5)]
    obstacles: usize,
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
    trials: u64,
    #[arg(long, default_value = "gmres")]
    solver: SolverKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Safety margin in meters.
    #[arg(long, default_value_t = 0.15)]
    delta: f64,
    /// Directory for bench_rows.csv and bench_summary.json.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    /// Largest transition region handed to the dense solver.
    #[arg(long, default_value_t = 500, value_parser = clap::value_parser!(u64).range(1..))]
    max_n: u64,
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Allowed max-abs deviation from the dense solution.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Report JSON output.
    #[arg(long, default_value = "verify_report.json")]
    out: PathBuf,
    /// Failing instances are written here.
    #[arg(long, default_value = "verify_replay.json")]
    replay: PathBuf,
    #[arg(long, hide = true)]
    inject_fault: Option<Fault>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("THERMAL_CBF_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Simulate(a) => simulate(a),
        Command::Bench(a) => bench(a),
        Command::Verify(a) => verify(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

fn write(path: &Path, contents: &str) -> Result<(), Error> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}

#[derive(Serialize)]
struct SynthReport {
    converged: bool,
    solver: SolverKind,
    iterations: usize,
    final_relative_residual: f64,
    n_unknowns: usize,
    #[serde(flatten)]
    field: FieldSidecar,
}

fn synth(args: SynthArgs) -> Result<u8, Error> {
    let map = load_pgm(&args.map, args.cell_size, Point2::new(args.origin_x, args.origin_y), args.threshold)?;
    let params = SynthesisParams {
        a: args.a,
        b_val: args.b,
        delta_m: args.delta,
        robot_radius_m: args.robot_radius,
        solver: args.solver,
        solver_cfg: SolverConfig {
            tol: args.tol,
            max_iters: args.max_iters,
            restart: args.restart,
        },
    };
    let field = synthesize_unchecked(&map, &params)?;
    let stats = *field.stats();
    write(&args.out, &field.to_csv())?;
    let report = SynthReport {
        converged: stats.solve.converged,
        solver: args.solver,
        iterations: stats.solve.iterations,
        final_relative_residual: stats.solve.final_relative_residual,
        n_unknowns: stats.n_unknowns,
        field: field.sidecar(),
    };
    write(&args.stats, &to_json(&report))?;

    if let Some(prefix) = &args.dump_system {
        let inflated = inflate(&map, args.robot_radius)?;
        let labels = classify_regions(&inflated, &distance_transform(&inflated), args.delta)?;
        let sys = assemble(&labels, &index_unknowns(&labels), params.boundary_values())?;
        write(&prefix.with_extension("mtx"), &sys.to_matrix_market())?;
        write(&prefix.with_extension("rhs"), &sys.rhs_to_text())?;
    }

    eprintln!(
        "{} unknowns, {} iterations, residual {:.3e}, assembly {:.2} ms, solve {:.2} ms",
        stats.n_unknowns,
        stats.solve.iterations,
        stats.solve.final_relative_residual,
        stats.inflate_ms + stats.assembly_ms,
        stats.solve_ms
    );
    if stats.solve.converged {
        Ok(0)
    } else {
        eprintln!("error: solver did not reach tol {:e}", args.tol);
        Ok(EXIT_SOLVER)
    }
}

fn simulate(args: SimulateArgs) -> Result<u8, Error> {
    let mut scn = Scenario::load(&args.scenario)?;
    if let Some(count) = args.randomize {
        scn.randomize_obstacles(&mut trial_rng(args.seed, 0), count);
    }
    if let Some(max_steps) = args.max_steps {
        scn.max_steps = max_steps;
    }
    let dump_dir = args.out_dir.clone();
    let log = run_episode_with(&scn, |step, field| {
        if args.dump_fields {
            write_field_dump(&dump_dir, step, field)?;
        }
        Ok(())
    })?;
    let m = metrics(&log, &scn);
    write_episode(&args.out_dir, &log, &m)?;
    println!("{}", to_json(&m).trim_end());
    if m.success() {
        Ok(0)
    } else {
        eprintln!(
            "episode failed: {}/{} goals, {} collisions, termination {:?}",
            m.goals_reached, m.goals_total, m.collisions, m.termination
        );
        Ok(EXIT_EPISODE)
    }
}

fn bench(args: BenchArgs) -> Result<u8, Error> {
    let cfg = BenchConfig {
        size: args.size as usize,
        obstacles: args.obstacles,
        trials: args.trials as usize,
        seed: args.seed,
        solver: args.solver,
        delta_m: args.delta,
    };
    let report = run_bench(&cfg)?;
    write(&args.out_dir.join("bench_rows.csv"), &report.rows_csv())?;
    write(&args.out_dir.join("bench_summary.json"), &to_json(&report.summary))?;
    let s = &report.summary;
    let r = &s.reference;
    println!("trials            {}", s.trials);
    println!("occupied cells    mean {:.2} (reference {:.2})", s.mean_occupied_cells, r.occupied_cells);
    println!(
        "transition cells  mean {:.2}, median {:.1} (reference {:.2})",
        s.mean_transition_cells, s.median_transition_cells, r.transition_cells
    );
    for (name, spread, reference) in [
        ("assembly ms", s.assembly_ms, r.assembly_ms),
        ("solve ms", s.solve_ms, r.solve_ms),
        ("total ms", s.total_ms, r.total_ms),
    ] {
        println!(
            "{name:<17} median {:.3}, mean {:.3}, p95 {:.3} (reference {:.2})",
            spread.median, spread.mean, spread.p95, reference
        );
    }
    if s.non_converged > 0 {
        eprintln!("error: {} of {} solves did not converge", s.non_converged, s.trials);
        return Ok(EXIT_SOLVER);
    }
    Ok(0)
}

fn verify(args: VerifyArgs) -> Result<u8, Error> {
    let cfg = VerifyConfig {
        max_n: args.max_n as usize,
        trials: args.trials as usize,
        seed: args.seed,
        tol: args.tol,
        fault: args.inject_fault,
        ..Default::default()
    };
    let report = run_verify(&cfg)?;
    for c in &report.checks {
        let verdict = if c.failed == 0 { "PASS" } else { "FAIL" };
        let what = if c.check == thermal_cbf::verify::Check::MaxPrinciple {
            "min margin"
        } else {
            "worst"
        };
        println!(
            "{verdict} {:<18} {}/{} {what} {:.3e}",
            serde_json::to_value(c.check).expect("check name").as_str().unwrap_or_default(),
            c.passed,
            c.passed + c.failed,
            c.worst
        );
    }
    write(&args.out, &to_json(&report))?;
    if report.passed() {
        return Ok(0);
    }
    write(&args.replay, &to_json(&report.failures))?;
    eprintln!(
        "error: {} failing instances; replay data in {}",
        report.failures.len(),
        args.replay.display()
    );
    Ok(EXIT_VERIFY)
}

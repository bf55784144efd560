use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use mflqj::builtin::{ExampleId, MarketParams};
use mflqj::equivalence::{canonical_shift, pullback_riccati, shift_weights};
use mflqj::io::{self, paths_table};
use mflqj::problem::{check_assumption_s, Problem, DEFAULT_EIG_TOL};
use mflqj::riccati::{riccati_residual, solve_riccati};
use mflqj::simulation::{simulate_paths, simulate_summary, solve_mean_ode, Control};
use mflqj::synthesis::{adjoint_representation, optimal_value, synthesize_feedback};
use mflqj::verify::{emit_report, emit_sweep, market_sweep, run_example, RunConfig};

/// Indefinite mean-field LQ control with jumps.
#[derive(Parser)]
#[command(name = "mflqj", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Grid intervals M (regrids a problem file).
    #[arg(long = "grid")]
    grid: Option<usize>,
    /// RK4 steps per grid interval.
    #[arg(long, default_value_t = 1)]
    substeps: usize,
    /// Output directory for CSV, JSON and SVG files.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ControlKind {
    Optimal,
    Zero,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the Riccati pair and synthesize the feedback law.
    Solve {
        file: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Check the standard definiteness assumption on the cost weights.
    CheckS {
        file: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Required lower bound for R and R + R_bar.
        #[arg(long, default_value_t = 1e-8)]
        alpha0: f64,
        #[arg(long, default_value_t = DEFAULT_EIG_TOL)]
        eig_tol: f64,
    },
    /// Shift the cost weights by (H, K) and solve through the shifted problem.
    Shift {
        file: PathBuf,
        /// Shift file, or `canonical` for H = P, K = Pi.
        #[arg(long)]
        shift: String,
        #[command(flatten)]
        common: Common,
    },
    /// Monte Carlo cost of a control.
    Simulate {
        file: PathBuf,
        #[arg(long, value_enum, default_value_t = ControlKind::Optimal)]
        control: ControlKind,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 100_000)]
        paths: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Run the verification pipeline of a built-in example (5.1 to 5.4).
    VerifyExample {
        id: String,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 100_000)]
        paths: usize,
        /// Jump parameter of example 5.1.
        #[arg(long, default_value_t = 1.0)]
        delta: f64,
        /// Horizon T.
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
        /// Random directions of the optimality perturbation test (0 skips it).
        #[arg(long, default_value_t = 8)]
        directions: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Asset-liability parameter sweep of the optimal holding along the mean.
    Sweep {
        /// JSON object of market parameter overrides, or `5.4` for defaults.
        file: String,
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[command(flatten)]
        common: Common,
    },
}

fn load(file: &Path, common: &Common) -> Result<io::ProblemFile> {
    io::read_problem_file(file, common.grid).with_context(|| format!("reading {}", file.display()))
}

fn out_dir(common: &Common) -> Result<Option<&Path>> {
    if let Some(d) = &common.out {
        fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
    }
    Ok(common.out.as_deref())
}

fn solve(file: &Path, common: &Common) -> Result<()> {
    let pf = load(file, common)?;
    let problem = &pf.problem;
    let sol = solve_riccati(problem, common.substeps)?;
    let law = synthesize_feedback(problem, &sol)?;
    let (rp, rpi) = riccati_residual(problem, &sol)?;
    println!("grid: T = {}, M = {}", problem.grid.horizon(), problem.grid.steps());
    println!("optimal value: {}", optimal_value(&sol, &problem.x0));
    println!("max condition number: {:e}", sol.stats.max_condition);
    println!("residual: P {rp:e}, Pi {rpi:e}");
    if let Some(dir) = out_dir(common)? {
        io::write_table(dir.join("riccati.csv"), &io::riccati_table(&sol))?;
        io::write_table(dir.join("gains.csv"), &io::gains_table(&law))?;
        let triple = adjoint_representation(problem, &sol)?;
        io::write_table(dir.join("adjoint.csv"), &io::adjoint_table(&triple))?;
    }
    Ok(())
}

fn check_s(file: &Path, common: &Common, alpha0: f64, eig_tol: f64) -> Result<()> {
    let pf = load(file, common)?;
    let problem = &pf.problem;
    let report = check_assumption_s(&problem.weights, &problem.grid, alpha0, eig_tol);
    println!("original weights: {}", serde_json::to_string_pretty(&report)?);
    if let Some(shift) = &pf.shift {
        let w = shift_weights(problem, shift)?;
        let shifted = check_assumption_s(&w, &problem.grid, alpha0, eig_tol);
        println!("shifted weights: {}", serde_json::to_string_pretty(&shifted)?);
    }
    Ok(())
}

fn shift(file: &Path, spec: &str, common: &Common) -> Result<()> {
    let pf = load(file, common)?;
    let problem = &pf.problem;
    let sh = if spec == "canonical" {
        let sol = solve_riccati(problem, common.substeps)?;
        canonical_shift(problem, &sol)?
    } else {
        let text = fs::read_to_string(spec).with_context(|| format!("reading {spec}"))?;
        io::parse_shift(&text, problem)?
    };
    let w = shift_weights(problem, &sh)?;
    let report = check_assumption_s(&w, &problem.grid, 1e-8, DEFAULT_EIG_TOL);
    println!("shifted weights satisfy the assumption: {} (alpha0 = {})", report.pass, report.alpha0);
    println!("shifted G: {:?}", w.g.as_slice());
    println!("shifted G + G_bar: {:?}", (&w.g + &w.g_bar).as_slice());
    let shifted = Problem::clone(problem).with_weights(w.clone())?;
    match solve_riccati(&shifted, common.substeps) {
        Ok(ssol) => {
            let pulled = pullback_riccati(problem, &ssol, &sh)?;
            let (rp, rpi) = riccati_residual(problem, &pulled)?;
            println!("pulled-back residual against the original problem: P {rp:e}, Pi {rpi:e}");
            println!("optimal value: {}", optimal_value(&pulled, &problem.x0));
            if let Some(dir) = out_dir(common)? {
                io::write_table(dir.join("riccati.csv"), &io::riccati_table(&pulled))?;
            }
        }
        Err(e) => println!("shifted problem not solvable: {e}"),
    }
    if let Some(dir) = out_dir(common)? {
        let table = paths_table(&[
            ("Q", &w.q),
            ("Q_bar", &w.q_bar),
            ("S", &w.s),
            ("S_bar", &w.s_bar),
            ("R", &w.r),
            ("R_bar", &w.r_bar),
        ]);
        io::write_table(dir.join("shifted_weights.csv"), &table)?;
    }
    Ok(())
}

fn simulate(file: &Path, kind: ControlKind, seed: u64, paths: usize, common: &Common) -> Result<()> {
    let pf = load(file, common)?;
    let problem = &pf.problem;
    let control = match kind {
        ControlKind::Optimal => {
            let sol = solve_riccati(problem, common.substeps)?;
            Control::feedback(synthesize_feedback(problem, &sol)?)
        }
        ControlKind::Zero => Control::zero(),
    };
    let mean = solve_mean_ode(problem, &control)?;
    let sum = simulate_summary(problem, &control, &mean, seed, paths, &[&problem.weights])?;
    let est = sum.estimate(0);
    println!("cost mean: {}", est.mean);
    println!("standard error: {}", est.standard_error);
    println!("paths: {}", est.paths);
    println!("steps: {}", problem.grid.steps());
    println!("seed: {seed}");
    println!("ensemble mean vs mean ODE, max z-score: {}", sum.mean_consistency());
    if let Some(dir) = out_dir(common)? {
        io::write_table(dir.join("mean.csv"), &io::mean_table(&mean))?;
        let ens = simulate_paths(problem, &control, &mean, seed, paths.min(20))?;
        io::write_table(dir.join("paths.csv"), &io::ensemble_table(&ens, 20))?;
    }
    Ok(())
}

fn verify(id: &str, cfg: &RunConfig, common: &Common) -> Result<bool> {
    let id = ExampleId::parse(id)?;
    let report = run_example(id, cfg)?;
    print!("{}", report.summary());
    if let Some(dir) = &common.out {
        emit_report(&report, dir)?;
    }
    Ok(report.pass)
}

fn sweep(file: &str, param: &str, values: &[f64], common: &Common) -> Result<()> {
    let base = if file == "5.4" {
        MarketParams::default()
    } else {
        let text = fs::read_to_string(file).with_context(|| format!("reading {file}"))?;
        io::parse_market_params(&text)?
    };
    let steps = common.grid.unwrap_or(1000);
    let sw = market_sweep(&base, param, values, steps, common.substeps)?;
    let table = sw.table();
    println!("{}", table.headers.join(","));
    let stride = (table.rows.len() / 10).max(1);
    for row in table.rows.iter().step_by(stride) {
        println!("{}", row.iter().map(f64::to_string).collect::<Vec<_>>().join(","));
    }
    if let Some(dir) = &common.out {
        emit_sweep(&sw, dir, &format!("sweep_{param}"))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Solve { file, common } => solve(&file, &common)?,
        Command::CheckS {
            file,
            common,
            alpha0,
            eig_tol,
        } => check_s(&file, &common, alpha0, eig_tol)?,
        Command::Shift {
            file,
            shift: spec,
            common,
        } => shift(&file, &spec, &common)?,
        Command::Simulate {
            file,
            control,
            seed,
            paths,
            common,
        } => simulate(&file, control, seed, paths, &common)?,
        Command::VerifyExample {
            id,
            seed,
            paths,
            delta,
            horizon,
            directions,
            common,
        } => {
            if paths < 2 {
                bail!("--paths must be at least 2");
            }
            let cfg = RunConfig {
                horizon,
                steps: common.grid.unwrap_or(1000),
                substeps: common.substeps,
                paths,
                seed,
                delta,
                directions,
                ..RunConfig::default()
            };
            return verify(&id, &cfg, &common);
        }
        Command::Sweep {
            file,
            param,
            values,
            common,
        } => sweep(&file, &param, &values, &common)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use deltapmp::reference::{demo_case, CaseReport, DEMO_CASES, DISCREPANCY_TOLERANCE};
use deltapmp::{
    fit_model, run_delta, solve_partition_with, DeltaConfig, Error, FitOptions, PartitionSolution, SolveOptions,
};

use config::{KeyArgs, RunConfig};

const EXIT_INVALID: u8 = 1;
const EXIT_NOT_CONVERGED: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;

#[derive(Parser)]
#[command(name = "deltapmp", version, about = "Data-driven time-optimal control by partition refinement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a piecewise-linear model and write model.csv
    Fit(RunArgs),
    /// Fit and solve one partition; writes model.csv and schedule.csv
    Solve(RunArgs),
    /// Run the refinement loop; writes trace.csv, schedule.csv and model.csv
    Delta(RunArgs),
    /// Recompute the built-in cases and compare with their published totals
    Demo {
        /// Case name, or all cases when omitted
        name: Option<String>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Flat key = value config file; flags override its keys
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[command(flatten)]
    keys: KeyArgs,
}

fn exit_code(err: &Error) -> u8 {
    match err.root() {
        e if e.is_infeasible() => EXIT_INFEASIBLE,
        Error::ShootingNonConvergence { .. } => EXIT_NOT_CONVERGED,
        _ => EXIT_INVALID,
    }
}

fn solve_options(cfg: &RunConfig) -> SolveOptions {
    SolveOptions {
        fit: FitOptions {
            allow_negative: cfg.allow_negative,
        },
        weights: cfg.weights,
        ..SolveOptions::default()
    }
}

fn report_solution(sol: &PartitionSolution, step: f64) -> Result<(), Error> {
    for (ps, (k, start, end)) in sol.piece_solutions.iter().zip(sol.piece_windows()) {
        let u: Vec<String> = ps
            .u_schedule
            .segments()
            .iter()
            .map(|s| format!("{:?}", s.u.as_slice()))
            .collect();
        println!(
            "piece {k}: [{start:.6}, {end:.6}] T = {:.6} u = {} H = {:.6}",
            ps.transfer_time,
            if u.is_empty() { "-".into() } else { u.join(" -> ") },
            ps.hamiltonian
        );
    }
    let steps = (sol.total_time / step).ceil().max(1.0) as usize;
    let end = sol.simulate(steps.div_ceil(sol.piece_solutions.len().max(1)))?;
    let goal = sol.model.pieces().last().map(|p| p.anchor().clone());
    println!("total time {:.6}", sol.total_time);
    if let Some(goal) = goal {
        let miss = end.as_slice().iter().zip(goal.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        println!("replayed end state {:?} (goal miss {miss:.2e})", end.as_slice());
    }
    Ok(())
}

fn cmd_fit(cfg: &RunConfig, out: &Path) -> Result<u8, Error> {
    let record = cfg.record()?;
    let part = cfg.partition(&record, cfg.single_pieces(&record))?;
    let model = fit_model(&record, &part, solve_options(cfg).fit)?;
    output::write_model(out, &model)?;
    for (k, p) in model.pieces().iter().enumerate() {
        println!("piece {k}: [{:.6}, {:.6}] A = {} B = {}", p.t_start(), p.t_end(), p.a(), p.b());
    }
    println!("wrote {}", out.join("model.csv").display());
    Ok(0)
}

fn cmd_solve(cfg: &RunConfig, out: &Path) -> Result<u8, Error> {
    let record = cfg.record()?;
    let part = cfg.partition(&record, cfg.single_pieces(&record))?;
    let sol = solve_partition_with(&record, &part, &cfg.bounds(&record), &solve_options(cfg))?;
    output::write_model(out, &sol.model)?;
    output::write_schedule(out, &sol)?;
    report_solution(&sol, cfg.step)?;
    Ok(0)
}

fn cmd_delta(cfg: &RunConfig, out: &Path) -> Result<u8, Error> {
    let record = cfg.record()?;
    let mut dc = DeltaConfig::new(cfg.delta, cfg.bounds(&record));
    dc.max_refinements = cfg.max_refinements;
    dc.strategy = cfg.strategy;
    dc.initial_pieces = cfg.initial_n;
    dc.horizon = cfg.horizon;
    dc.initial_partition = Some(cfg.partition(&record, cfg.initial_n)?);
    dc.solve = solve_options(cfg);
    let res = run_delta(&record, &dc)?;
    output::write_trace(out, &res.trace)?;
    output::write_schedule(out, &res.final_solution)?;
    output::write_model(out, &res.final_solution.model)?;
    for it in &res.trace {
        let gap = it.gap.map(|g| format!("{g:.3e}")).unwrap_or_else(|| "-".into());
        println!(
            "m = {} N = {} total = {:.6} eq7 = {:.6} eq8 = {:.6} gap = {gap}",
            it.m, it.pieces, it.total_time, it.eq7_score, it.eq8_score
        );
    }
    report_solution(&res.final_solution, cfg.step)?;
    if res.converged {
        println!("converged: gap <= {}", cfg.delta);
        Ok(0)
    } else {
        eprintln!(
            "not converged after {} partitions (delta = {})",
            res.trace.len(),
            cfg.delta
        );
        Ok(EXIT_NOT_CONVERGED)
    }
}

fn print_report(r: &CaseReport) {
    let diff = (r.computed - r.published).abs();
    let status = if r.flagged { "MISMATCH" } else { "ok" };
    let pieces: Vec<String> = r.piece_times.iter().map(|t| format!("{t:.4}")).collect();
    println!(
        "{:<16} {:>10.6} {:>10} {:>9.4}  {:<8} {}",
        r.name,
        r.computed,
        r.published,
        diff,
        status,
        pieces.join(" + ")
    );
}

fn cmd_demo(name: Option<&str>) -> Result<u8, Error> {
    let cases: Vec<_> = match name {
        None | Some("all") => DEMO_CASES.iter().collect(),
        Some(n) => vec![demo_case(n).ok_or_else(|| {
            let known: Vec<_> = DEMO_CASES.iter().map(|c| c.name).collect();
            Error::InvalidInput(format!("unknown demo '{n}'; expected one of {}", known.join(", ")))
        })?],
    };
    println!(
        "{:<16} {:>10} {:>10} {:>9}  {:<8} piece times",
        "case", "computed", "published", "|diff|", "status"
    );
    let mut flagged = 0;
    for case in cases {
        let (_, report) = case.solve()?;
        print_report(&report);
        flagged += usize::from(report.flagged);
    }
    if flagged > 0 {
        println!(
            "{flagged} case(s) differ from the published total by more than {DISCREPANCY_TOLERANCE}; computed values are reported unchanged"
        );
    }
    Ok(0)
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Demo { name } => cmd_demo(name.as_deref()),
        Command::Fit(a) => cmd_fit(&RunConfig::load(a.config.as_deref(), &a.keys)?, &a.out),
        Command::Solve(a) => cmd_solve(&RunConfig::load(a.config.as_deref(), &a.keys)?, &a.out),
        Command::Delta(a) => cmd_delta(&RunConfig::load(a.config.as_deref(), &a.keys)?, &a.out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

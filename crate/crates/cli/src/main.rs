//! `torus-mfe`: two-point blow-up solutions of the mean field equation on flat tori.
//!
//! Exit codes: 0 all selected checks pass, 1 a check failed (or the
//! configuration is invalid), 2 a solver did not converge, 3 the grid cannot
//! resolve the bubble core.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use torus_mfe::diagnostics::{emit_report, CheckEntry, Verdict, VerificationReport};
use torus_mfe::MfeError;

use commands::Outcome;
use config::{parse_config, EpsSpec, RunConfig};
use output::RunDir;

const GIT_DESCRIBE: &str = env!("MFE_GIT_DESCRIBE");

#[derive(Parser)]
#[command(
    name = "torus-mfe",
    version,
    about = "Mean field equation on flat tori: Green's function, two-bubble ansatz, Newton-Krylov solver and diagnostics"
)]
struct Cli {
    /// TOML run configuration (defaults: square torus, pair = diag, n = 512).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `eps`; a comma-separated list runs a branch.
    #[arg(long, global = true, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    #[arg(long, global = true)]
    n: Option<usize>,
    /// w1half, w2half or diag.
    #[arg(long, global = true)]
    pair: Option<String>,
    /// Base directory for run artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: MFE_JOBS, else all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Green's function utilities.
    Green {
        #[command(subcommand)]
        action: GreenAction,
    },
    /// Expansion defects, residual bounds and energy of the ansatz.
    Ansatz {
        /// Build at this λ instead of the λ selected by each ε.
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Newton solve from the ansatz at each ε.
    Solve,
    /// Continuation along the ε list; writes branch.csv.
    Branch,
    /// Verification experiments.
    Verify {
        #[command(subcommand)]
        what: VerifyWhat,
    },
    /// Print a report.json and exit with its verdict.
    Report {
        /// Run directory or report file.
        path: PathBuf,
    },
    /// Full pipeline: branch, asymptotics, and the experiments enabled in [checks].
    Run,
}

#[derive(Subcommand)]
enum GreenAction {
    /// G, R, ∇G and ∇²G at lattice coordinates (s, t).
    Eval {
        #[arg(allow_negative_numbers = true)]
        s: f64,
        #[arg(allow_negative_numbers = true)]
        t: f64,
    },
    /// Series against the spectral oracle, symmetries and half-period criticality.
    Selftest,
    /// Critical points of G from a k×k seed grid.
    Critical {
        #[arg(long, default_value_t = 8)]
        seeds: usize,
    },
}

#[derive(Subcommand)]
enum VerifyWhat {
    Asymptotics,
    Uniqueness {
        /// All three half-period pairs.
        #[arg(long)]
        all_pairs: bool,
    },
    Halftorus,
}

fn exit_code(e: &MfeError) -> u8 {
    match e {
        MfeError::Resolution(_) => 3,
        MfeError::Divergence { .. } | MfeError::LinearSolver(_) | MfeError::Eigen(_) | MfeError::NotBlownUp(_) => 2,
        _ => 1,
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, MfeError> {
    let mut cfg = match &cli.config {
        Some(path) => parse_config(&std::fs::read_to_string(path)?)?,
        None => RunConfig::default(),
    };
    if let Some(eps) = &cli.eps {
        cfg.eps = if eps.len() == 1 { EpsSpec::One(eps[0]) } else { EpsSpec::Many(eps.clone()) };
    }
    if let Some(n) = cli.n {
        cfg.n = n;
    }
    if let Some(p) = &cli.pair {
        cfg.pair = p.clone();
    }
    if let Some(o) = &cli.out {
        cfg.output = o.to_string_lossy().into_owned();
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn jobs(cfg: &RunConfig) -> usize {
    if cfg.jobs > 0 {
        return cfg.jobs;
    }
    std::env::var("MFE_JOBS").ok().and_then(|v| v.parse().ok()).filter(|&j| j > 0).unwrap_or(0)
}

fn print_entry(e: &CheckEntry) {
    let tag = match e.verdict {
        Verdict::Pass => "PASS",
        Verdict::Fail => "FAIL",
        Verdict::Inconclusive => "INCONCLUSIVE",
        Verdict::Info => "INFO",
    };
    println!(
        "{tag:<12} {:<44} measured {:<12.6e} predicted {:<12.6e} ratio {:.4}{}",
        e.name,
        e.measured,
        e.predicted,
        e.ratio,
        if e.note.is_empty() { String::new() } else { format!("  [{}]", e.note) }
    );
}

/// Writes the report, prints the entries and maps the outcome to an exit code.
fn finish(cfg: &RunConfig, dir: &RunDir, out: Outcome) -> ExitCode {
    let (report, text) = emit_report(&out.entries, GIT_DESCRIBE, &cfg.hash());
    for e in &report.checks {
        print_entry(e);
    }
    if let Err(e) = dir.write_text("report.json", &text) {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    println!("artifacts: {}", dir.path().display());
    if let Some(e) = &out.error {
        eprintln!("error: {e}");
        return ExitCode::from(exit_code(e));
    }
    ExitCode::from(if report.all_passed() { 0 } else { 1 })
}

fn report_command(path: &std::path::Path) -> ExitCode {
    let file = if path.is_dir() { path.join("report.json") } else { path.to_path_buf() };
    let parsed = std::fs::read_to_string(&file).map_err(MfeError::from).and_then(|t| VerificationReport::parse(&t));
    match parsed {
        Ok(r) => {
            println!("git {}  config {}", r.git_describe, r.config_hash);
            for e in &r.checks {
                print_entry(e);
            }
            ExitCode::from(if r.all_passed() { 0 } else { 1 })
        }
        Err(e) => {
            eprintln!("error: {}: {e}", file.display());
            ExitCode::from(1)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Command::Report { path } = &cli.command {
        return report_command(path);
    }
    let cfg = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code(&e));
        }
    };
    let threads = jobs(&cfg);
    if threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    if let Command::Green { action: GreenAction::Eval { s, t } } = &cli.command {
        return match commands::green_eval(&cfg, *s, *t) {
            Ok(json) => {
                println!("{json}");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(exit_code(&e))
            }
        };
    }
    let needs_solution = !matches!(cli.command, Command::Green { .. } | Command::Ansatz { lambda: Some(_) });
    if needs_solution {
        if let Err(e) = cfg.check_resolution() {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code(&e));
        }
    }
    let dir = match RunDir::create(std::path::Path::new(&cfg.output)) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if let Err(e) = dir.write_text("config.echo", &cfg.echo()) {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }

    let out = match &cli.command {
        Command::Green { action: GreenAction::Selftest } => commands::green_selftest(&cfg),
        Command::Green { action: GreenAction::Critical { seeds } } => match commands::green_critical(&cfg, *seeds) {
            Ok((table, out)) => {
                print!("{table}");
                match dir.write_text("critical.csv", &table) {
                    Ok(_) => out,
                    Err(e) => Outcome { entries: out.entries, error: Some(e) },
                }
            }
            Err(e) => Outcome { entries: vec![], error: Some(e) },
        },
        Command::Ansatz { lambda } => commands::ansatz(&cfg, &dir, *lambda),
        Command::Solve => commands::solve(&cfg, &dir).1,
        Command::Branch => commands::branch(&cfg, &dir).2,
        Command::Verify { what: VerifyWhat::Asymptotics } => commands::asymptotics(&cfg, &dir).1,
        Command::Verify { what: VerifyWhat::Uniqueness { all_pairs } } => {
            let mut c = cfg.clone();
            c.checks.uniqueness_all_pairs |= *all_pairs;
            commands::uniqueness(&c)
        }
        Command::Verify { what: VerifyWhat::Halftorus } => {
            let (recs, mut out) = commands::solve(&cfg, &dir);
            if out.error.is_none() {
                let h = commands::halftorus(&cfg, &recs);
                out.entries.extend(h.entries);
                out.error = h.error;
            }
            out
        }
        Command::Run => commands::run_all(&cfg, &dir),
        Command::Green { action: GreenAction::Eval { .. } } | Command::Report { .. } => unreachable!("handled above"),
    };
    finish(&cfg, &dir, out)
}

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cev_hedge::config::ExperimentConfig;
use cev_hedge::experiments::{self, CheckStatus};
use cev_hedge::hedging::{simulate_hedge, trace_path, write_trace_csv};
use cev_hedge::pricing::PriceSurface;
use cev_hedge::rng::with_threads;
use cev_hedge::Error;

/// Optimal hedging under CEV dynamics with quadratic illiquidity costs.
#[derive(Parser)]
#[command(name = "cevhedge", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand)]
enum Command {
    /// Price and delta table over the configured grid.
    Price,
    /// Solve the HJB coefficient system and dump the fields.
    Solve,
    /// Monte-Carlo cost report of one strategy.
    Simulate,
    /// ε-asymptotics sweep of the naive and optimal policies.
    Sweep,
    /// Run the invariant suite at reduced sizes.
    Validate,
}

#[derive(Args)]
struct Common {
    /// Config file (flat `key = value` TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// optimal | naive | zero | delta
    #[arg(long, global = true)]
    strategy: Option<String>,
    /// Comma-separated ε values for `sweep`.
    #[arg(long, global = true, value_delimiter = ',')]
    eps_list: Option<Vec<f64>>,
    /// Ratio exponent: report ψ/ε^{k/2}.
    #[arg(long, global = true)]
    k: Option<u32>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidInput(_) | Error::Domain(_) | Error::Io(_) => 2,
        Error::Numerical(_) | Error::OutOfGrid(_) => 3,
        Error::Convergence { .. } => 4,
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::parse("")?,
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(t) = common.threads {
        cfg.threads = t;
    }
    if let Some(s) = &common.strategy {
        cfg.strategy = s.clone();
    }
    if let Some(list) = &common.eps_list {
        cfg.eps_list = list.clone();
    }
    if let Some(k) = common.k {
        cfg.k = vec![k];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Error> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json(dir: &Path, name: &str, json: &str) -> Result<(), Error> {
    let mut f = create(dir, name)?;
    f.write_all(json.as_bytes())?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

fn run(cli: &Cli) -> Result<ExitCode, Error> {
    let cfg = load_config(&cli.common)?;
    let out = &cli.common.out;
    with_threads(cfg.threads, || match cli.command {
        Command::Price => {
            let params = cfg.params();
            let surface = PriceSurface::build(&cfg.option()?, &params, cfg.grid()?)?;
            let mut f = create(out, "price.csv")?;
            surface.write_csv(&mut f)?;
            f.flush()?;
            println!(
                "q(0, {}) = {:.6}, theta = {:.6}; wrote {}",
                cfg.s0,
                surface.q.interpolate(0.0, cfg.s0)?,
                surface.theta.interpolate(0.0, cfg.s0)?,
                out.join("price.csv").display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Solve => {
            let sol = experiments::solve_config(&cfg)?;
            let mut f = create(out, "fields.csv")?;
            sol.write_csv(&mut f)?;
            f.flush()?;
            let report = serde_json::json!({
                "format": "cevhedge-solve-report/1",
                "report": sol.report,
                "value_at_start": sol.value(cfg.h0, cfg.s0, 0.0)?,
            });
            write_json(
                out,
                "solve_report.json",
                &serde_json::to_string_pretty(&report).unwrap(),
            )?;
            println!(
                "converged in {} iterations, gap {:.3e}; V(H0, S0, 0) = {:.6}",
                sol.report.iterations,
                sol.report.gap,
                sol.value(cfg.h0, cfg.s0, 0.0)?
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Simulate => {
            let params = cfg.params();
            let (solution, surface) = if cfg.strategy == "optimal" {
                let sol = experiments::solve_config(&cfg)?;
                let surface = sol.surface.clone();
                (Some(sol), surface)
            } else {
                (
                    None,
                    PriceSurface::build(&cfg.option()?, &params, cfg.grid()?)?,
                )
            };
            let strategy = experiments::strategy_from_name(&cfg.strategy, &cfg, solution.as_ref())?;
            let setup = experiments::market_setup(&cfg, params, std::sync::Arc::new(surface))?;
            let report = simulate_hedge(&strategy, &setup)?;
            write_json(out, "cost_report.json", &report.to_json())?;
            if cfg.trace {
                let rows = trace_path(&strategy, &setup, 0)?;
                let mut f = create(out, "trace.csv")?;
                write_trace_csv(&mut f, &rows)?;
                f.flush()?;
            }
            println!(
                "{}: psi = {:.6} ± {:.6} (tracking {:.6}, liquidity {:.6})",
                report.strategy,
                report.psi.mean,
                report.psi.std_error,
                report.tracking_term.mean,
                report.liquidity_term.mean
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep => {
            let result = experiments::sweep(&cfg, &cfg.eps_list, &cfg.k)?;
            let mut f = create(out, "sweep.csv")?;
            result.write_csv(&mut f)?;
            f.flush()?;
            let json = serde_json::json!({ "format": "cevhedge-sweep/1", "result": result });
            write_json(
                out,
                "sweep.json",
                &serde_json::to_string_pretty(&json).unwrap(),
            )?;
            for r in &result.rows {
                println!(
                    "eps = {:<8e} V = {:.6}  psi_naive = {:.6} ± {:.6}  ratios {:?}",
                    r.eps, r.v_opt, r.psi_naive.mean, r.psi_naive.std_error, r.ratio_k
                );
                for w in &r.warnings {
                    eprintln!("warning (eps = {}): {w}", r.eps);
                }
            }
            match result.decay_slope {
                Some(s) => println!("decay slope of ln psi_naive vs eps^-1/2: {s:.6}"),
                None => println!("decay slope: not available (fewer than two eps values)"),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate => {
            let summary = experiments::validate(&cfg)?;
            let json = serde_json::json!({ "format": "cevhedge-validate/1", "summary": summary });
            write_json(
                out,
                "validate.json",
                &serde_json::to_string_pretty(&json).unwrap(),
            )?;
            for c in &summary.checks {
                let tag = match c.status {
                    CheckStatus::Pass => "PASS",
                    CheckStatus::Fail => "FAIL",
                    CheckStatus::Inconclusive => "INCONCLUSIVE",
                };
                println!("{tag:<12} {:<20} {}", c.name, c.detail);
                if c.status == CheckStatus::Inconclusive {
                    eprintln!("warning: {} inconclusive ({})", c.name, c.detail);
                }
            }
            Ok(if summary.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

//! `cenreg`: run experiments, Fisher summaries, the self-check suite and
//! the throughput benchmark.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure
//! (including failed checks or a missed throughput floor), 4 I/O error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use cenreg::checks::run_checks;
use cenreg::fisher::crb_trace;
use cenreg::nalgebra::DMatrix;
use cenreg::sim::{format_report, monte_carlo_delta, parse_config, run_experiment, write_outputs};
use cenreg::throughput::measure_throughput;
use cenreg::{Error, ErrorCategory, Experiment};
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "cenreg", version, about = "Online efficient estimation for censored regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set horizon=500` or
    /// `--set estimator.mu_floor=0`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory; results go to `<out>/<hash>-seed<seed>/`.
    #[arg(long, default_value = "results", global = true)]
    out: PathBuf,
    /// Master seed; overrides the configuration's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads: a count or `auto`.
    #[arg(long, default_value = "auto", global = true)]
    threads: Threads,
    /// Print the full report to standard output.
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the Monte Carlo experiment and write curves, report and resolved config.
    Run,
    /// Monte Carlo Fisher information and the C-R bound at the horizon.
    Fisher,
    /// Run the invariant suite; exits 3 if any check fails.
    Check,
    /// Two-step update throughput at m = 2, 10, 50.
    Bench {
        /// Updates timed per dimension.
        #[arg(long, default_value_t = 50_000)]
        steps: usize,
        /// Required updates per second at m = 10; exits 3 below it.
        #[arg(long)]
        floor: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy)]
struct Threads(usize);

impl FromStr for Threads {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "auto" {
            return Ok(Threads(0));
        }
        match s.parse::<usize>() {
            Ok(n) if n > 0 => Ok(Threads(n)),
            _ => Err(format!("expected a positive count or `auto`, got `{s}`")),
        }
    }
}

enum Failure {
    Lib(Error),
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Lib(e)) => {
            let (label, code) = match e.category() {
                ErrorCategory::Config => ("config", 2),
                ErrorCategory::Numeric => ("numeric", 3),
                ErrorCategory::Io => ("io", 4),
            };
            eprintln!("error [{label}]: {e}");
            ExitCode::from(code)
        }
        Err(Failure::Numeric(msg)) => {
            eprintln!("error [numeric]: {msg}");
            ExitCode::from(3)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), Failure> {
    let c = &cli.common;
    match &cli.command {
        Command::Run => cmd_run(c),
        Command::Fisher => cmd_fisher(c),
        Command::Check => cmd_check(c),
        Command::Bench { steps, floor } => cmd_bench(*steps, *floor),
    }
}

fn load(c: &Common) -> Result<Experiment, Error> {
    let path = c
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("this command needs --config <file>".into()))?;
    let mut overrides = c.overrides.clone();
    if let Some(seed) = c.seed {
        overrides.push(format!("seed={seed}"));
    }
    let config = parse_config(path, &overrides)?;
    Experiment::new(config)
}

fn cmd_run(c: &Common) -> Result<(), Failure> {
    let exp = load(c)?;
    let result = run_experiment(&exp, c.threads.0)?;
    let dir = write_outputs(&c.out, &exp, &result)?;
    if c.verbose {
        print!("{}", format_report(&result.report(&exp)));
    } else {
        let curves = &result.curves;
        let last = curves.k.len() - 1;
        println!("horizon            {}", curves.k[last]);
        println!("median error       {:.4e}", curves.err_alg1[last]);
        println!("k * MSE            {:.4e}", curves.mse_alg1[last]);
        println!("k * C-R bound      {:.4e}", curves.crb[last]);
        println!("efficiency ratio   {:.4}", result.efficiency_ratio());
        if !result.failures.is_empty() {
            println!("failed replications {}", result.failures.len());
        }
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_fisher(c: &Common) -> Result<(), Failure> {
    let exp = load(c)?;
    let deltas = monte_carlo_delta(&exp, c.threads.0)?;
    let n = exp.config.horizon as f64;
    let mut kv = vec![
        ("config_hash".to_string(), exp.config.hash()),
        ("seed".into(), exp.config.seed.to_string()),
        ("horizon".into(), exp.config.horizon.to_string()),
        ("replications".into(), exp.config.replications.to_string()),
    ];
    let mut total = 0.0;
    for (j, d) in deltas.iter().enumerate() {
        let tr = crb_trace(&d.mean)?;
        total += tr;
        kv.push((format!("column_{j}_delta"), matrix_row_major(&d.mean)));
        kv.push((format!("column_{j}_delta_std_error"), matrix_row_major(&d.std_error)));
        kv.push((format!("column_{j}_trace_inverse"), format!("{tr:e}")));
    }
    kv.push(("trace_inverse".into(), format!("{total:e}")));
    kv.push(("crb_scaled".into(), format!("{:e}", n * total)));
    let text = format_report(&kv);
    let dir = c.out.join(exp.config.dir_name());
    write(&dir, "fisher.txt", &text)?;
    write(&dir, "config.toml", &exp.config.to_toml())?;
    if c.verbose {
        print!("{text}");
    } else {
        println!("trace of Delta^-1  {total:.4e}");
        println!("k * C-R bound      {:.4e}", n * total);
    }
    println!("wrote {}", dir.display());
    Ok(())
}

/// Rows separated by `;`, entries by spaces.
fn matrix_row_major(m: &DMatrix<f64>) -> String {
    m.row_iter()
        .map(|r| r.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" "))
        .collect::<Vec<_>>()
        .join("; ")
}

fn write(dir: &Path, name: &str, text: &str) -> Result<(), Error> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), text)?;
    Ok(())
}

fn cmd_check(c: &Common) -> Result<(), Failure> {
    let outcomes = run_checks(c.seed.unwrap_or(0));
    let mut failed = 0;
    for o in &outcomes {
        failed += !o.passed as usize;
        println!(
            "{} {} ({}) [{:.2} s]",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.detail,
            o.seconds
        );
    }
    println!("{} of {} checks passed", outcomes.len() - failed, outcomes.len());
    if failed > 0 {
        return Err(Failure::Numeric(format!("{failed} checks failed")));
    }
    Ok(())
}

fn cmd_bench(steps: usize, floor: Option<f64>) -> Result<(), Failure> {
    let mut at_ten = None;
    for m in [2, 10, 50] {
        let t = measure_throughput(m, steps, 1)?;
        println!("m = {m:>2}: {:.3e} updates/s ({} updates in {:.3} s)", t.updates_per_second, t.steps, t.seconds);
        if m == 10 {
            at_ten = Some(t.updates_per_second);
        }
    }
    if let (Some(floor), Some(rate)) = (floor, at_ten) {
        if rate < floor {
            return Err(Failure::Numeric(format!("{rate:.3e} updates/s at m = 10 is below the floor {floor:.3e}")));
        }
        println!("m = 10 meets the floor of {floor:.3e} updates/s");
    }
    Ok(())
}

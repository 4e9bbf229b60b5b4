use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use storage_reliability_cli::experiments::{
    kernel_supported, run_blackout_experiments, run_kernel, run_simulate, run_solve, run_value_of_storage_sweep,
    run_verify,
};
use storage_reliability_cli::{exit, Config, OutputDir, Overrides, SweepKind};

#[derive(Parser)]
#[command(name = "storage-reliability", version, about = "Storage withdrawal policies under compound-Poisson shocks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Value iteration: value, cost and policy tables.
    Solve(Common),
    /// Kernel function and break-points for a strictly convex stage cost.
    Kernel(Common),
    /// Monte Carlo cost and blackout statistics.
    Simulate(Common),
    /// Value-of-storage or blackout sweep from the [sweep] section.
    Sweep(Common),
    /// Structural checks on the solved instance.
    Verify(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "s-bar")]
    s_bar: Option<f64>,
    #[arg(long = "q-rate")]
    q_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> anyhow::Result<(Config, OutputDir)> {
        let mut cfg = Config::load(&self.config)?;
        cfg.apply(&Overrides { s_bar: self.s_bar, q_rate: self.q_rate, seed: self.seed })?;
        let out = OutputDir::create(&self.out, &cfg)?;
        Ok((cfg, out))
    }
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("STORAGE_RELIABILITY_THREADS") {
        let n: usize = v.parse().with_context(|| format!("STORAGE_RELIABILITY_THREADS={v}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    configure_threads()?;
    Ok(match cli.command {
        Command::Solve(c) => {
            let (cfg, out) = c.load()?;
            let o = run_solve(&cfg, Some(&out))?;
            let v = &o.solution.value;
            eprintln!("{:?} after {} iterations, residual {:e}", v.status, v.iteration_count, v.sup_norm_residual);
            if o.converged() { exit::OK } else { exit::NOT_CONVERGED }
        }
        Command::Kernel(c) => {
            let (cfg, out) = c.load()?;
            if !kernel_supported(&cfg.cost) {
                anyhow::bail!("the kernel representation needs a strictly convex stage cost");
            }
            let o = run_kernel(&cfg, Some(&out))?;
            eprintln!("b0 = {}, b1 = {}, collapse deviation {:e}", o.kernel.b0, o.kernel.b1, o.collapse.sup_deviation);
            if o.solve.converged() { exit::OK } else { exit::NOT_CONVERGED }
        }
        Command::Simulate(c) => {
            let (cfg, out) = c.load()?;
            let r = run_simulate(&cfg, Some(&out))?;
            eprintln!("discounted cost {} ± {}", r.discounted_cost, r.stderr);
            exit::OK
        }
        Command::Sweep(c) => {
            let (cfg, out) = c.load()?;
            match cfg.sweep.as_ref().map(|s| s.kind) {
                Some(SweepKind::ValueOfStorage) => {
                    let rows = run_value_of_storage_sweep(&cfg, Some(&out))?;
                    if rows.iter().all(|r| r.converged) { exit::OK } else { exit::NOT_CONVERGED }
                }
                Some(SweepKind::Blackout) => {
                    let rep = run_blackout_experiments(&cfg, Some(&out))?;
                    let ok = rep.tail_vs_s_bar.iter().chain(&rep.tail_vs_volatility).all(|p| p.converged);
                    if ok { exit::OK } else { exit::NOT_CONVERGED }
                }
                None => anyhow::bail!("configuration has no [sweep] section"),
            }
        }
        Command::Verify(c) => {
            let (cfg, out) = c.load()?;
            let o = run_verify(&cfg, Some(&out))?;
            for f in o.report.failures() {
                eprintln!("FAILED {}: worst violation {:e} > tolerance {:e}", f.claim, f.worst_violation, f.tolerance);
            }
            if !o.report.all_pass() {
                exit::VERIFY_FAILED
            } else if !o.solve.converged() {
                exit::NOT_CONVERGED
            } else {
                exit::OK
            }
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::ERROR as u8)
        }
    }
}

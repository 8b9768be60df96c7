use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use exmm::harness::{self, Format, MixedConfig, StatsReport, WorkloadConfig};
use exmm::multiqueue::Variant;

#[derive(Parser)]
#[command(name = "exmm", version, about = "External-memory multimap simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment: warmup inserts, then alternating insert/remove.
    Run(RunArgs),
    /// Run every config in a JSON array, one after another.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Write all reports here as a JSON array (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Toy-scale soak: random mixed operations checked against an oracle,
    /// with structural audits.
    Audit(AuditArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value = "deamortized")]
    variant: Variant,
    #[arg(long, default_value_t = 0.99)]
    alpha: f64,
    #[arg(long, default_value_t = 3.0)]
    beta: f64,
    #[arg(long, default_value_t = 5.0)]
    gamma: f64,
    #[arg(long, default_value_t = 4096)]
    block_bytes: usize,
    #[arg(long, default_value_t = 512 * 1024)]
    cache_bytes: usize,
    #[arg(long, default_value_t = 0.07)]
    epsilon: f64,
    #[arg(long, default_value_t = 1 << 20)]
    universe: usize,
    #[arg(long, default_value_t = 1 << 20)]
    warmup: u64,
    #[arg(long, default_value_t = 8 << 20)]
    alternating: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Audit and check against the oracle every N operations (0 = off).
    #[arg(long, default_value_t = 0)]
    audit_every: u64,
    #[arg(long, default_value_t = 1 << 14)]
    load_every: u64,
    /// Report output (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: Format,
    /// Also write the load series as CSV.
    #[arg(long)]
    load_out: Option<PathBuf>,
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long, default_value = "deamortized")]
    variant: Variant,
    #[arg(long, default_value_t = 3.0)]
    beta: f64,
    #[arg(long, default_value_t = 4.0)]
    gamma: f64,
    #[arg(long, default_value_t = 144)]
    block_bytes: usize,
    /// Cache size in blocks.
    #[arg(long, default_value_t = 4)]
    cache_blocks: usize,
    #[arg(long, default_value_t = 512)]
    universe: usize,
    #[arg(long, default_value_t = 100_000)]
    ops: u64,
    #[arg(long, default_value_t = 1)]
    first_seed: u64,
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[arg(long, default_value_t = 1)]
    audit_every: u64,
}

fn write_out(path: Option<&Path>, text: &str) -> Result<(), String> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| format!("{}: {e}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn summary(r: &StatsReport) -> String {
    let all = r.class("all").unwrap();
    let cheap = r.class("le15").unwrap();
    format!(
        "{:?} alpha={} beta={} gamma={} seed={}: mean {:.3} max {} le15 {:.3}% steady load {:.4}",
        r.config.variant,
        r.config.alpha,
        r.config.beta,
        r.config.gamma,
        r.config.seed,
        all.mean,
        all.max,
        cheap.pct_ops,
        r.steady_load
    )
}

fn run(a: RunArgs) -> Result<(), String> {
    let cfg = WorkloadConfig {
        variant: a.variant,
        alpha: a.alpha,
        beta: a.beta,
        gamma: a.gamma,
        block_bytes: a.block_bytes,
        cache_bytes: a.cache_bytes,
        epsilon: a.epsilon,
        universe: a.universe,
        warmup: a.warmup,
        alternating: a.alternating,
        seed: a.seed,
        audit_every: a.audit_every,
        load_every: a.load_every,
        ..WorkloadConfig::default()
    };
    let report = harness::run_experiment(&cfg).map_err(|e| e.to_string())?;
    eprintln!("{}", summary(&report));
    write_out(a.out.as_deref(), &harness::export(&report, a.format))?;
    if let Some(p) = a.load_out {
        write_out(Some(&p), &harness::load_csv(&report.load_series))?;
    }
    Ok(())
}

fn sweep(config: &Path, out: Option<&Path>) -> Result<(), String> {
    let text = std::fs::read_to_string(config).map_err(|e| format!("{}: {e}", config.display()))?;
    let cfgs: Vec<WorkloadConfig> = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", config.display()))?;
    let mut reports = Vec::with_capacity(cfgs.len());
    for cfg in &cfgs {
        let r = harness::run_experiment(cfg).map_err(|e| e.to_string())?;
        eprintln!("{}", summary(&r));
        reports.push(r);
    }
    write_out(out, &serde_json::to_string_pretty(&reports).map_err(|e| e.to_string())?)
}

fn audit(a: AuditArgs) -> Result<(), String> {
    for seed in a.first_seed..a.first_seed + a.seeds {
        let cfg = MixedConfig {
            variant: a.variant,
            beta: a.beta,
            gamma: a.gamma,
            block_bytes: a.block_bytes,
            cache_bytes: a.cache_blocks * a.block_bytes,
            universe: a.universe,
            ops: a.ops,
            seed,
            audit_every: a.audit_every,
            ..MixedConfig::default()
        };
        let r = harness::run_mixed(&cfg).map_err(|e| format!("seed {seed}: {e}"))?;
        println!(
            "seed {seed}: {} ops, {} audits, {} pairs left, max reads {}",
            r.ops,
            r.audits,
            r.final_pairs,
            r.max_reads()
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run(a) => run(a),
        Cmd::Sweep { config, out } => sweep(&config, out.as_deref()),
        Cmd::Audit(a) => audit(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("exmm: {e}");
            ExitCode::FAILURE
        }
    }
}

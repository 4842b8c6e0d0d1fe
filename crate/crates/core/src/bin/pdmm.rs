//! Benchmark CLI: `pdmm run` solves one configuration over a seed list,
//! `pdmm compare` runs several configurations on a shared instance, and
//! `pdmm gen` writes a synthetic instance file.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pdmm::cli::{self, ProblemSpec, RunConfig, SamplerKind, StopKind, Variant};
use pdmm::problems::Instance;

#[derive(Parser)]
#[command(name = "pdmm", version, about = "Randomized multi-block splitting solvers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one configuration, one solve per seed.
    Run(RunArgs),
    /// Run several config files on the same instance and tabulate results.
    Compare(CompareArgs),
    /// Generate a synthetic instance file.
    Gen(GenArgs),
}

#[derive(Args, Clone)]
struct ProblemArgs {
    /// Problem kind: toy-qp | rpca | grouplasso.
    #[arg(long)]
    problem: Option<String>,
    /// Load a saved instance file instead of generating data.
    #[arg(long)]
    instance: Option<PathBuf>,
    /// Seed for synthetic data generation.
    #[arg(long)]
    data_seed: Option<u64>,
    /// Rows of the observed matrix (rpca) or of the design (grouplasso).
    #[arg(long)]
    m: Option<usize>,
    /// Columns of the observed matrix (rpca).
    #[arg(long)]
    n: Option<usize>,
    /// Rank of the planted low-rank component (rpca).
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    gamma2: Option<f64>,
    #[arg(long)]
    gamma3: Option<f64>,
    /// Number of groups (grouplasso).
    #[arg(long)]
    groups: Option<usize>,
    #[arg(long)]
    group_size: Option<usize>,
    #[arg(long)]
    overlap: Option<usize>,
}

impl ProblemArgs {
    fn build(&self) -> Result<Option<ProblemSpec>, String> {
        if let Some(path) = &self.instance {
            return Ok(Some(ProblemSpec::InstanceFile { path: path.clone() }));
        }
        let Some(kind) = &self.problem else { return Ok(None) };
        let seed = self.data_seed.unwrap_or(0);
        let spec = match kind.as_str() {
            "toy-qp" => ProblemSpec::ToyQp {
                row_sizes: vec![3, 3],
                col_sizes: vec![4; 5],
                density: 0.7,
                data_seed: seed,
                zero_rhs: false,
            },
            "rpca" => ProblemSpec::Rpca {
                m: self.m.unwrap_or(100),
                n: self.n.unwrap_or(200),
                rank: self.rank.unwrap_or(10),
                data_seed: seed,
                gamma2: self.gamma2,
                gamma3: self.gamma3,
            },
            "grouplasso" => ProblemSpec::GroupLasso {
                m: self.m.unwrap_or(200),
                groups: self.groups.unwrap_or(10),
                group_size: self.group_size.unwrap_or(20),
                overlap: self.overlap.unwrap_or(2),
                data_seed: seed,
            },
            other => {
                return Err(format!(
                    "unknown problem {other:?}; expected toy-qp|rpca|grouplasso"
                ))
            }
        };
        Ok(Some(spec))
    }
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; command-line flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    problem: ProblemArgs,
    /// Solver variant: pdmm | sadmm | pjadmm | rdbcd | gsadmm-ref.
    #[arg(long)]
    variant: Option<String>,
    /// Primal blocks updated per iteration (default: all).
    #[arg(long = "K")]
    k: Option<usize>,
    /// Dual blocks updated per iteration (rdbcd only).
    #[arg(long = "K-I")]
    k_dual: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    /// Comma-separated per-block proximal weights.
    #[arg(long)]
    eta: Option<String>,
    /// Block sampling: uniform | cyclic.
    #[arg(long)]
    sampler: Option<String>,
    #[arg(long)]
    tol: Option<f64>,
    /// Stopping rule: xy-change | primal-residual.
    #[arg(long)]
    stop: Option<String>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Seed list: "1..10", "3", or "1,4,9".
    #[arg(long)]
    seeds: Option<String>,
    /// Track the Lyapunov distance (needs a problem with a reference point).
    #[arg(long)]
    track_h: bool,
    /// Write zeros in the time column so identical runs are byte-identical.
    #[arg(long)]
    zero_time: bool,
    /// Worker threads for block updates (also via PDMM_THREADS).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Two or more TOML run configurations sharing a problem instance.
    #[arg(long, required = true, num_args = 2..)]
    config: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long)]
    out: PathBuf,
}

fn parse_list(text: &str) -> Result<Vec<f64>, String> {
    text.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| format!("bad number {s:?}")))
        .collect()
}

fn build_run_config(args: &RunArgs) -> Result<RunConfig, String> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("{}: {e}", path.display()))?;
            RunConfig::from_toml(&text).map_err(|e| e.to_string())?
        }
        None => {
            let problem = args
                .problem
                .build()?
                .ok_or("either --config or --problem/--instance is required")?;
            let variant: Variant = args
                .variant
                .as_deref()
                .ok_or("--variant is required without --config")?
                .parse()
                .map_err(|e: pdmm::Error| e.to_string())?;
            let out = args.out.clone().ok_or("--out is required without --config")?;
            RunConfig::new(problem, variant, out)
        }
    };
    // Flags override the file.
    if let Some(spec) = args.problem.build()? {
        cfg.problem = spec;
    }
    if let Some(v) = &args.variant {
        cfg.variant = v.parse().map_err(|e: pdmm::Error| e.to_string())?;
    }
    if let Some(k) = args.k {
        cfg.k = Some(k);
    }
    if let Some(kd) = args.k_dual {
        cfg.k_dual = Some(kd);
    }
    if let Some(rho) = args.rho {
        cfg.rho = rho;
    }
    if let Some(eta) = &args.eta {
        cfg.eta = Some(parse_list(eta)?);
    }
    if let Some(s) = &args.sampler {
        cfg.sampler = s.parse::<SamplerKind>().map_err(|e| e.to_string())?;
    }
    if let Some(tol) = args.tol {
        cfg.tol = tol;
    }
    if let Some(stop) = &args.stop {
        cfg.stop = match stop.as_str() {
            "xy-change" => StopKind::XyChange,
            "primal-residual" => StopKind::PrimalResidual,
            other => return Err(format!("unknown stop rule {other:?}")),
        };
    }
    if let Some(mi) = args.max_iter {
        cfg.max_iter = mi;
    }
    if let Some(seeds) = &args.seeds {
        cfg.seeds = cli::parse_seeds(seeds).map_err(|e| e.to_string())?;
    }
    if args.track_h {
        cfg.track_h = true;
    }
    if args.zero_time {
        cfg.zero_time = true;
    }
    if let Some(t) = args.threads {
        cfg.threads = Some(t);
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => {
            let cfg = match build_run_config(&args) {
                Ok(cfg) => cfg,
                Err(msg) => {
                    eprintln!("error: {msg}");
                    return ExitCode::from(2);
                }
            };
            match cli::run(&cfg) {
                Ok(summary) => {
                    println!(
                        "{}: {} seed(s), mean iterations {:.1}, mean objective {:.8e}",
                        summary.variant.as_str(),
                        summary.seeds.len(),
                        summary.mean_iterations,
                        summary.mean_final_objective
                    );
                    println!("traces and summary.json written to {}", cfg.out_dir.display());
                    if summary.all_converged {
                        ExitCode::SUCCESS
                    } else {
                        eprintln!("warning: not every seed reached the tolerance");
                        ExitCode::FAILURE
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            }
        }
        Command::Compare(args) => {
            let mut configs = Vec::new();
            for path in &args.config {
                let text = match std::fs::read_to_string(path) {
                    Ok(t) => t,
                    Err(e) => {
                        eprintln!("error: {}: {e}", path.display());
                        return ExitCode::from(2);
                    }
                };
                match RunConfig::from_toml(&text) {
                    Ok(cfg) => configs.push(cfg),
                    Err(e) => {
                        eprintln!("error: {}: {e}", path.display());
                        return ExitCode::from(2);
                    }
                }
            }
            match cli::compare(&configs, &args.out) {
                Ok((table, summaries)) => {
                    print!("{table}");
                    if summaries.iter().all(|s| s.all_converged) {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::FAILURE
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            }
        }
        Command::Gen(args) => {
            let spec = match args.problem.build() {
                Ok(Some(spec)) => spec,
                Ok(None) => {
                    eprintln!("error: --problem is required");
                    return ExitCode::from(2);
                }
                Err(msg) => {
                    eprintln!("error: {msg}");
                    return ExitCode::from(2);
                }
            };
            let result = spec.instance().and_then(|inst: Instance| inst.save(&args.out));
            match result {
                Ok(()) => {
                    println!("wrote {}", args.out.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            }
        }
    }
}

//! Benchmark front end: run configured experiments, compare solver variants,
//! and emit traces and summary tables.
//!
//! Each run writes one trace CSV per seed plus a `summary.json`. The trace
//! schema is versioned in the header comment line:
//!
//! ```text
//! # pdmm-trace-v1 variant=pdmm k=3 sampler=uniform seed=7
//! iter,time_s,objective,primal_residual,R,h
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diagnostics::Trace;
use crate::problems::{
    gen_group_lasso_synthetic, gen_rpca_synthetic, Instance, ToyQpSpec,
};
use crate::solver::{
    gsadmm_reference, solve, Problem, SamplerScheme, SolveOutcome, SolverConfig, StepRule,
    StopReason, StopRule, UpdateMode, UpdateRule,
};
use crate::stepsize::StepSizes;
use crate::{Error, Result};

pub const TRACE_SCHEMA: &str = "pdmm-trace-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Pdmm,
    Sadmm,
    Pjadmm,
    Rdbcd,
    GsadmmRef,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Pdmm => "pdmm",
            Variant::Sadmm => "sadmm",
            Variant::Pjadmm => "pjadmm",
            Variant::Rdbcd => "rdbcd",
            Variant::GsadmmRef => "gsadmm-ref",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pdmm" => Ok(Variant::Pdmm),
            "sadmm" => Ok(Variant::Sadmm),
            "pjadmm" => Ok(Variant::Pjadmm),
            "rdbcd" => Ok(Variant::Rdbcd),
            "gsadmm-ref" => Ok(Variant::GsadmmRef),
            other => Err(Error::Config(format!(
                "unknown variant {other:?}; expected pdmm|sadmm|pjadmm|rdbcd|gsadmm-ref"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    Uniform,
    Cyclic,
}

impl SamplerKind {
    fn scheme(self) -> SamplerScheme {
        match self {
            SamplerKind::Uniform => SamplerScheme::UniformSubsets,
            SamplerKind::Cyclic => SamplerScheme::CyclicPartition,
        }
    }
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(SamplerKind::Uniform),
            "cyclic" => Ok(SamplerKind::Cyclic),
            other => Err(Error::Config(format!(
                "unknown sampler {other:?}; expected uniform|cyclic"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopKind {
    XyChange,
    PrimalResidual,
}

/// The problem to solve: a generator recipe or a saved instance file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProblemSpec {
    ToyQp {
        #[serde(default = "default_toy_rows")]
        row_sizes: Vec<usize>,
        #[serde(default = "default_toy_cols")]
        col_sizes: Vec<usize>,
        #[serde(default = "default_density")]
        density: f64,
        #[serde(default)]
        data_seed: u64,
        #[serde(default)]
        zero_rhs: bool,
    },
    Rpca {
        #[serde(default = "default_rpca_m")]
        m: usize,
        #[serde(default = "default_rpca_n")]
        n: usize,
        #[serde(default = "default_rpca_rank")]
        rank: usize,
        #[serde(default)]
        data_seed: u64,
        gamma2: Option<f64>,
        gamma3: Option<f64>,
    },
    GroupLasso {
        #[serde(default = "default_lasso_m")]
        m: usize,
        #[serde(default = "default_lasso_groups")]
        groups: usize,
        #[serde(default = "default_lasso_group_size")]
        group_size: usize,
        #[serde(default = "default_lasso_overlap")]
        overlap: usize,
        #[serde(default)]
        data_seed: u64,
    },
    InstanceFile { path: PathBuf },
}

fn default_toy_rows() -> Vec<usize> {
    vec![3, 3]
}
fn default_toy_cols() -> Vec<usize> {
    vec![4; 5]
}
fn default_density() -> f64 {
    0.7
}
fn default_rpca_m() -> usize {
    100
}
fn default_rpca_n() -> usize {
    200
}
fn default_rpca_rank() -> usize {
    10
}
fn default_lasso_m() -> usize {
    200
}
fn default_lasso_groups() -> usize {
    10
}
fn default_lasso_group_size() -> usize {
    20
}
fn default_lasso_overlap() -> usize {
    2
}

impl ProblemSpec {
    pub fn instance(&self) -> Result<Instance> {
        match self {
            ProblemSpec::ToyQp { row_sizes, col_sizes, density, data_seed, zero_rhs } => {
                Ok(Instance::ToyQp(ToyQpSpec {
                    row_sizes: row_sizes.clone(),
                    col_sizes: col_sizes.clone(),
                    density: *density,
                    seed: *data_seed,
                    zero_rhs: *zero_rhs,
                }))
            }
            ProblemSpec::Rpca { m, n, rank, data_seed, gamma2, gamma3 } => {
                let mut inst = gen_rpca_synthetic(*m, *n, *rank, *data_seed)?;
                if let Some(g2) = gamma2 {
                    inst.gamma2 = *g2;
                }
                if let Some(g3) = gamma3 {
                    inst.gamma3 = *g3;
                }
                Ok(Instance::Rpca(inst))
            }
            ProblemSpec::GroupLasso { m, groups, group_size, overlap, data_seed } => {
                Ok(Instance::GroupLasso(gen_group_lasso_synthetic(
                    *m,
                    *groups,
                    *group_size,
                    *overlap,
                    *data_seed,
                )?))
            }
            ProblemSpec::InstanceFile { path } => Instance::load(path),
        }
    }
}

/// One benchmark run: a problem, a solver variant, and output options.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    pub variant: Variant,
    /// Primal blocks per iteration; defaults to all blocks.
    pub k: Option<usize>,
    /// Dual blocks per iteration (rdbcd only); defaults to all rows.
    pub k_dual: Option<usize>,
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Per-block proximal weight overrides.
    pub eta: Option<Vec<f64>>,
    /// Manual dual step sizes (pdmm only).
    pub tau: Option<Vec<f64>>,
    /// Manual backward steps (pdmm only; forbidden for pjadmm).
    pub nu: Option<Vec<f64>>,
    #[serde(default = "default_sampler")]
    pub sampler: SamplerKind,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_stop")]
    pub stop: StopKind,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub track_h: bool,
    #[serde(default = "default_true")]
    pub validate_steps: bool,
    /// Write `0` in the `time_s` column so traces from identical configs are
    /// byte-identical.
    #[serde(default)]
    pub zero_time: bool,
    pub threads: Option<usize>,
    pub out_dir: PathBuf,
}

fn default_rho() -> f64 {
    1.0
}
fn default_sampler() -> SamplerKind {
    SamplerKind::Uniform
}
fn default_tol() -> f64 {
    1e-4
}
fn default_stop() -> StopKind {
    StopKind::XyChange
}
fn default_max_iter() -> usize {
    10_000
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_true() -> bool {
    true
}

impl RunConfig {
    pub fn new(problem: ProblemSpec, variant: Variant, out_dir: PathBuf) -> Self {
        Self {
            problem,
            variant,
            k: None,
            k_dual: None,
            rho: default_rho(),
            eta: None,
            tau: None,
            nu: None,
            sampler: default_sampler(),
            tol: default_tol(),
            stop: default_stop(),
            max_iter: default_max_iter(),
            seeds: default_seeds(),
            track_h: false,
            validate_steps: true,
            zero_time: false,
            threads: None,
            out_dir,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))
    }

    fn validate(&self, problem: &Problem) -> Result<()> {
        let j = problem.num_primal_blocks();
        let i = problem.num_dual_blocks();
        if let Some(k) = self.k {
            if k == 0 || k > j {
                return Err(Error::Config(format!("K = {k} outside 1..={j}")));
            }
        }
        match self.variant {
            Variant::Pjadmm => {
                if self.nu.is_some() {
                    return Err(Error::Config(
                        "the pjadmm variant fixes nu = 0; remove the manual nu".into(),
                    ));
                }
                if self.tau.is_some() {
                    return Err(Error::Config(
                        "the pjadmm variant fixes tau = 1; remove the manual tau".into(),
                    ));
                }
            }
            Variant::Rdbcd => {
                if let Some(kd) = self.k_dual {
                    if kd == 0 || kd > i {
                        return Err(Error::Config(format!("K_I = {kd} outside 1..={i}")));
                    }
                }
            }
            Variant::GsadmmRef => {
                if j > 3 {
                    return Err(Error::Config(
                        "the Gauss–Seidel reference is a comparison baseline for two- and \
                         three-block problems only"
                            .into(),
                    ));
                }
            }
            Variant::Pdmm | Variant::Sadmm => {}
        }
        if self.k_dual.is_some() && self.variant != Variant::Rdbcd {
            return Err(Error::Config("K_I applies to the rdbcd variant only".into()));
        }
        if (self.tau.is_some() || self.nu.is_some()) && self.variant != Variant::Pdmm {
            return Err(Error::Config("manual step sizes apply to the pdmm variant only".into()));
        }
        if self.tau.is_some() != self.nu.is_some() {
            return Err(Error::Config("manual steps need both tau and nu".into()));
        }
        Ok(())
    }

    fn stop_rule(&self) -> StopRule {
        match self.stop {
            StopKind::XyChange => StopRule::XyChange { tol: self.tol },
            StopKind::PrimalResidual => StopRule::PrimalResidual { tol: self.tol },
        }
    }

    fn solver_config(&self, problem: &Problem, seed: u64) -> Result<SolverConfig> {
        let j = problem.num_primal_blocks();
        let i = problem.num_dual_blocks();
        let k = self.k.unwrap_or(j);
        let mut cfg = SolverConfig::pdmm(k);
        cfg.rho = self.rho;
        cfg.sampler = self.sampler.scheme();
        cfg.seed = seed;
        cfg.stop = self.stop_rule();
        cfg.max_iter = self.max_iter;
        cfg.track_h = self.track_h;
        cfg.validate_steps = self.validate_steps;
        cfg.threads = self.threads;
        cfg.update = UpdateRule { mode: UpdateMode::Exact, eta: self.eta.clone() };
        cfg.step_rule = match self.variant {
            Variant::Pdmm => match (&self.tau, &self.nu) {
                (Some(tau), Some(nu)) => {
                    let degrees = problem.matrix().degrees();
                    StepRule::Manual(StepSizes {
                        tau: tau.clone(),
                        nu: nu.clone(),
                        k_primal: k,
                        k_dual: i,
                        k_tilde: degrees.iter().map(|&d| d.min(k)).collect(),
                    })
                }
                _ => StepRule::Table1,
            },
            Variant::Sadmm => StepRule::Sadmm,
            Variant::Pjadmm => StepRule::Pjadmm,
            Variant::Rdbcd => StepRule::Rdbcd { k_dual: self.k_dual.unwrap_or(i) },
            Variant::GsadmmRef => StepRule::Table1, // not used; gsadmm has its own loop
        };
        Ok(cfg)
    }
}

/// Per-seed result recorded in the summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub iterations: usize,
    pub stop: StopReason,
    pub final_objective: f64,
    pub final_residual: f64,
    pub wall_time_s: f64,
    pub trace_file: String,
}

/// Aggregated outcome of one run, serialized as `summary.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub variant: Variant,
    pub problem: String,
    pub k: usize,
    pub k_dual: usize,
    pub rho: f64,
    pub sampler: SamplerKind,
    pub tol: f64,
    pub seeds: Vec<SeedResult>,
    pub mean_iterations: f64,
    pub std_iterations: f64,
    pub mean_final_objective: f64,
    pub mean_wall_time_s: f64,
    pub all_converged: bool,
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// Renders a trace as CSV under the versioned schema.
pub fn trace_to_csv(trace: &Trace, header_meta: &str, zero_time: bool) -> String {
    let mut out = String::new();
    out.push_str(&format!("# {TRACE_SCHEMA} {header_meta}\n"));
    out.push_str("iter,time_s,objective,primal_residual,R,h\n");
    for rec in &trace.records {
        let time = if zero_time { 0.0 } else { rec.wall_time };
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            rec.t,
            time,
            rec.objective,
            rec.primal_residual,
            fmt_opt(rec.r_value),
            fmt_opt(rec.h_value),
        ));
    }
    out
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
        / (values.len() - 1) as f64;
    (mean, var.sqrt())
}

/// Executes one solve per seed, writing per-seed trace CSVs and a summary
/// JSON into the output directory. A diverging solve still writes its trace
/// before the error is returned.
pub fn run(cfg: &RunConfig) -> Result<RunSummary> {
    let instance = cfg.problem.instance()?;
    let problem = instance.build()?;
    cfg.validate(&problem)?;
    std::fs::create_dir_all(&cfg.out_dir)?;

    let mut seed_results = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let trace_name = format!("trace_seed{seed}.csv");
        let trace_path = cfg.out_dir.join(&trace_name);
        let header = format!(
            "variant={} k={} sampler={} seed={}",
            cfg.variant.as_str(),
            cfg.k.unwrap_or(problem.num_primal_blocks()),
            match cfg.sampler {
                SamplerKind::Uniform => "uniform",
                SamplerKind::Cyclic => "cyclic",
            },
            seed
        );
        let outcome: SolveOutcome = if cfg.variant == Variant::GsadmmRef {
            gsadmm_reference(&problem, cfg.rho, cfg.stop_rule(), cfg.max_iter)?
        } else {
            let solver_cfg = cfg.solver_config(&problem, seed)?;
            match solve(&problem, solver_cfg) {
                Ok(out) => out,
                Err(Error::Divergence { iteration, message, trace }) => {
                    write_atomic(&trace_path, &trace_to_csv(&trace, &header, cfg.zero_time))?;
                    return Err(Error::Divergence { iteration, message, trace });
                }
                Err(e) => return Err(e),
            }
        };
        write_atomic(&trace_path, &trace_to_csv(&outcome.trace, &header, cfg.zero_time))?;
        let last = outcome.trace.last().expect("at least one iteration");
        seed_results.push(SeedResult {
            seed,
            iterations: outcome.iterations,
            stop: outcome.stop,
            final_objective: last.objective,
            final_residual: last.primal_residual,
            wall_time_s: if cfg.zero_time { 0.0 } else { last.wall_time },
            trace_file: trace_name,
        });
    }

    let iters: Vec<f64> = seed_results.iter().map(|s| s.iterations as f64).collect();
    let (mean_iterations, std_iterations) = mean_std(&iters);
    let objs: Vec<f64> = seed_results.iter().map(|s| s.final_objective).collect();
    let times: Vec<f64> = seed_results.iter().map(|s| s.wall_time_s).collect();
    let summary = RunSummary {
        variant: cfg.variant,
        problem: instance.fingerprint(),
        k: cfg.k.unwrap_or(problem.num_primal_blocks()),
        k_dual: cfg.k_dual.unwrap_or(problem.num_dual_blocks()),
        rho: cfg.rho,
        sampler: cfg.sampler,
        tol: cfg.tol,
        all_converged: seed_results.iter().all(|s| s.stop == StopReason::Tolerance),
        mean_iterations,
        std_iterations,
        mean_final_objective: mean_std(&objs).0,
        mean_wall_time_s: mean_std(&times).0,
        seeds: seed_results,
    };
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::Validation(format!("serialize summary: {e}")))?;
    write_atomic(&cfg.out_dir.join("summary.json"), &json)?;
    Ok(summary)
}

/// Runs every config against the shared problem instance and writes an
/// aligned variant × metrics table (CSV plus a human-readable rendering).
pub fn compare(configs: &[RunConfig], out_dir: &Path) -> Result<(String, Vec<RunSummary>)> {
    if configs.len() < 2 {
        return Err(Error::Config("compare needs at least two configurations".into()));
    }
    let fingerprints: Vec<String> = configs
        .iter()
        .map(|c| c.problem.instance().map(|i| i.fingerprint()))
        .collect::<Result<_>>()?;
    if fingerprints.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::Validation(format!(
            "compare requires a shared problem instance; got {fingerprints:?}"
        )));
    }
    std::fs::create_dir_all(out_dir)?;

    let mut summaries = Vec::with_capacity(configs.len());
    for (idx, base) in configs.iter().enumerate() {
        let mut cfg = base.clone();
        cfg.out_dir = out_dir.join(format!("{}_{idx}", cfg.variant.as_str()));
        summaries.push(run(&cfg)?);
    }

    let mut csv = String::from("variant,k,time_s,iterations,residual,objective\n");
    for s in &summaries {
        let resid = s.seeds.iter().map(|r| r.final_residual).sum::<f64>()
            / s.seeds.len() as f64;
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            s.variant.as_str(),
            s.k,
            s.mean_wall_time_s,
            s.mean_iterations,
            resid,
            s.mean_final_objective
        ));
    }
    write_atomic(&out_dir.join("compare.csv"), &csv)?;

    let mut table = format!(
        "{:<12} {:>4} {:>12} {:>12} {:>14} {:>16}\n",
        "variant", "K", "time (s)", "iterations", "residual", "objective"
    );
    for s in &summaries {
        let resid = s.seeds.iter().map(|r| r.final_residual).sum::<f64>()
            / s.seeds.len() as f64;
        table.push_str(&format!(
            "{:<12} {:>4} {:>12.4} {:>12.1} {:>14.3e} {:>16.8e}\n",
            s.variant.as_str(),
            s.k,
            s.mean_wall_time_s,
            s.mean_iterations,
            resid,
            s.mean_final_objective
        ));
    }
    Ok((table, summaries))
}

/// Parses `"1..10"` (inclusive), `"3"`, or `"1,4,9"` into a seed list.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let text = text.trim();
    if let Some((lo, hi)) = text.split_once("..") {
        let lo: u64 = lo
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad seed range start {lo:?}")))?;
        let hi: u64 = hi
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad seed range end {hi:?}")))?;
        if hi < lo {
            return Err(Error::Config(format!("empty seed range {text:?}")));
        }
        return Ok((lo..=hi).collect());
    }
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| Error::Config(format!("bad seed {s:?}")))
        })
        .collect()
}

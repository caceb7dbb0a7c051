use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use super::bias::{measure_bias_variance, BiasCampaign, BiasVarianceReport, CampaignMode, EstimatorKind};
use super::experiment::{run_experiment, Algorithm, RunOverrides};
use super::fit::{fit_loglog_slope, SlopeFit};
use super::output::{csv_sibling, csv_table, json_pretty, write_atomic};
use crate::error::{Error, Result};
use crate::estimators::sample_batch;
use crate::mdp::{LaneBlock, Phase, TabularMdp};
use crate::oracle::{exact_quantities, DEFAULT_ENUMERATION_BUDGET};
use crate::policy::PolicyParams;
use crate::scalarization::{FloorPolicy, Scalarization, ScalarizationConfig};

#[derive(Debug, Parser)]
#[command(name = "concave-npg", version, about = "Natural policy gradient for concave multi-objective MDPs")]
pub struct Cli {
    /// Master seed for every random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output file for the JSON report (a CSV view is written beside it where applicable).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample trajectories and their truncated returns.
    Simulate(SimulateArgs),
    /// Print exact quantities for an (MDP, θ, f) triple.
    Oracle(OracleArgs),
    /// Bias/variance campaign over batch sizes.
    EstimateBias(BiasArgs),
    /// Run empirical-batch NPG from a run config.
    RunNpg(RunArgs),
    /// Run MLMC-NPG from a run config.
    RunMlmcNpg(RunArgs),
    /// Fit a log-log slope to two columns of a CSV file.
    FitRates(FitArgs),
}

#[derive(Debug, Args)]
pub struct PolicyArgs {
    /// MDP JSON file.
    #[arg(long)]
    pub mdp: PathBuf,
    /// Comma-separated θ, state-major; zero when omitted.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub theta: Option<Vec<f64>>,
}

impl PolicyArgs {
    fn load(&self) -> Result<(TabularMdp, PolicyParams)> {
        if !self.mdp.exists() {
            return Err(Error::config(format!("mdp_path not found: {}", self.mdp.display())));
        }
        let mdp = TabularMdp::load(&self.mdp)?;
        let policy = match &self.theta {
            Some(t) => PolicyParams::from_theta(mdp.n_states, mdp.n_actions, t.clone())?,
            None => PolicyParams::zeros(mdp.n_states, mdp.n_actions),
        };
        Ok((mdp, policy))
    }
}

#[derive(Debug, Args)]
pub struct ScalarArgs {
    /// alpha_fair, weighted_sum or kinked_quadratic.
    #[arg(long, default_value = "alpha_fair")]
    pub family: String,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub kinks: Option<Vec<f64>>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long, value_enum)]
    pub floor: Option<FloorArg>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FloorArg {
    Clamp,
    Reject,
}

impl ScalarArgs {
    fn build(&self, mdp: &TabularMdp) -> Result<Scalarization> {
        ScalarizationConfig {
            family: self.family.clone(),
            alpha: self.alpha,
            delta: self.delta,
            weights: self.weights.clone(),
            kinks: self.kinks.clone(),
            kappa: self.kappa,
            floor: self.floor.map(|f| match f {
                FloorArg::Clamp => FloorPolicy::Clamp,
                FloorArg::Reject => FloorPolicy::Reject,
            }),
        }
        .build(mdp.n_objectives, mdp.discount)
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub policy: PolicyArgs,
    #[arg(long)]
    pub horizon: usize,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub policy: PolicyArgs,
    #[command(flatten)]
    pub scalar: ScalarArgs,
    /// Truncation horizon for `J_H` and its gradient.
    #[arg(long, default_value_t = 50)]
    pub horizon: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum EstimatorArg {
    Empirical,
    Mlmc,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Enumerate,
    Montecarlo,
}

#[derive(Debug, Args)]
pub struct BiasArgs {
    #[command(flatten)]
    pub policy: PolicyArgs,
    #[command(flatten)]
    pub scalar: ScalarArgs,
    #[arg(long)]
    pub horizon: usize,
    #[arg(long, value_enum, default_value = "empirical")]
    pub estimator: EstimatorArg,
    /// Use an extra trajectory for the MLMC base term.
    #[arg(long)]
    pub uncoupled_base: bool,
    /// Comma-separated batch sizes (or `B_max` values for MLMC).
    #[arg(long, value_delimiter = ',', required = true)]
    pub b_list: Vec<usize>,
    #[arg(long, value_enum, default_value = "enumerate")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 10_000)]
    pub replications: usize,
    /// Enumeration term budget.
    #[arg(long, default_value_t = DEFAULT_ENUMERATION_BUDGET)]
    pub budget: f64,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Run config JSON.
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub csv: PathBuf,
    #[arg(long, default_value = "b")]
    pub x: String,
    #[arg(long, default_value = "bias_norm")]
    pub y: String,
}

#[derive(Serialize)]
struct SimulationOutput {
    horizon: usize,
    count: usize,
    seed: u64,
    mean_return: Vec<f64>,
    returns: Vec<Vec<f64>>,
    trajectories: Vec<Vec<(usize, usize)>>,
}

#[derive(Serialize)]
struct FitOutput {
    x: String,
    y: String,
    fit: SlopeFit,
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    kind: &'a str,
    message: String,
    exit_code: i32,
}

/// Structured error line printed on failure.
pub fn error_record(err: &Error) -> String {
    serde_json::to_string(&serde_json::json!({
        "error": ErrorRecord { kind: err.kind(), message: err.to_string(), exit_code: err.exit_code() }
    }))
    .expect("error record serializes")
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_record(&e));
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.threads {
        Some(0) => Err(Error::config("--threads must be at least 1")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::config(format!("thread pool: {e}")))?;
            pool.install(|| dispatch(&cli))
        }
        None => dispatch(&cli),
    }
}

fn emit(out: Option<&Path>, json: String, csv: Option<String>) -> Result<()> {
    match out {
        Some(p) => {
            write_atomic(p, json.as_bytes())?;
            if let Some(c) = csv {
                write_atomic(&csv_sibling(p), c.as_bytes())?;
            }
        }
        None => print!("{json}"),
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Simulate(a) => {
            let (mdp, policy) = a.policy.load()?;
            let block = LaneBlock::new(seed, 0, Phase::Campaign(0));
            let trajs = sample_batch(&mdp, &policy, a.horizon, a.count, &block)?;
            let returns: Vec<Vec<f64>> = trajs.iter().map(|t| mdp.truncated_return(t).iter().copied().collect()).collect();
            let mean_return = crate::estimators::mean_return(&mdp, &trajs).iter().copied().collect();
            let output = SimulationOutput {
                horizon: a.horizon,
                count: a.count,
                seed,
                mean_return,
                returns,
                trajectories: trajs.into_iter().map(|t| t.steps).collect(),
            };
            emit(out, json_pretty(&output)?, None)
        }
        Command::Oracle(a) => {
            let (mdp, policy) = a.policy.load()?;
            let f = a.scalar.build(&mdp)?;
            emit(out, json_pretty(&exact_quantities(&mdp, &policy, &f, a.horizon)?)?, None)
        }
        Command::EstimateBias(a) => {
            let (mdp, policy) = a.policy.load()?;
            let f = a.scalar.build(&mdp)?;
            let campaign = BiasCampaign {
                horizon: a.horizon,
                estimator: match a.estimator {
                    EstimatorArg::Empirical => EstimatorKind::Empirical,
                    EstimatorArg::Mlmc => EstimatorKind::Mlmc { coupled_base: !a.uncoupled_base },
                },
                b_list: a.b_list.clone(),
                replications: a.replications,
                mode: match a.mode {
                    ModeArg::Enumerate => CampaignMode::Enumerate,
                    ModeArg::Montecarlo => CampaignMode::Montecarlo,
                },
                seed,
                budget: a.budget,
            };
            let report = measure_bias_variance(&mdp, &policy, &f, &campaign)?;
            let csv = csv_table(&BiasVarianceReport::CSV_HEADER, &report.csv_rows())?;
            emit(out, json_pretty(&report)?, Some(csv))
        }
        Command::RunNpg(a) | Command::RunMlmcNpg(a) => {
            let algorithm = match cli.command {
                Command::RunNpg(_) => Algorithm::Npg,
                _ => Algorithm::MlmcNpg,
            };
            let overrides =
                RunOverrides { seed: cli.seed, output_path: cli.out.clone(), expect_algorithm: Some(algorithm) };
            let outcome = run_experiment(&a.config, &overrides)?;
            println!(
                "{}",
                serde_json::json!({
                    "report": outcome.json_path,
                    "csv": outcome.csv_path,
                    "final_exact_f": outcome.report.run.final_exact_f(),
                    "final_gap": outcome.report.final_gap,
                    "total_trajectories": outcome.report.run.total_trajectories,
                })
            );
            Ok(())
        }
        Command::FitRates(a) => {
            let points = read_columns(&a.csv, &a.x, &a.y)?;
            let fit = fit_loglog_slope(&points)?;
            emit(out, json_pretty(&FitOutput { x: a.x.clone(), y: a.y.clone(), fit })?, None)
        }
    }
}

fn read_columns(path: &Path, x: &str, y: &str) -> Result<Vec<(f64, f64)>> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::config(format!("column `{name}` not in {}", path.display())))
    };
    let (ix, iy) = (col(x)?, col(y)?);
    let mut points = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let parse = |i: usize| {
            rec.get(i)
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::config(format!("non-numeric cell in column {i} of {}", path.display())))
        };
        points.push((parse(ix)?, parse(iy)?));
    }
    Ok(points)
}

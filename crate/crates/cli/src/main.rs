//! `regionplan`: solve, simulate and compare region-based approximations.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use regionplan::gridworld::{self, ActionOutcomeModel, GridWorld, SensorModel};
use regionplan::io::{self, FormatError};
use regionplan::region::{radius_k_system, transform, RegionSystem};
use regionplan::simulator::{self, Environment, GoalSpec, GreedyPolicy, SimError, TrialConfig};
use regionplan::solver::{
    mdp_value_iteration, restricted_value_iteration, AlphaVector, Lookahead, RegionValues, SolveLimits, SolveReport,
    SolverError, ValueFunction, DEFAULT_DISCOUNT, DEFAULT_EPSILON, PRUNE_TOL,
};
use regionplan::Pomdp;

const EXIT_PARSE: u8 = 3;
const EXIT_VALIDATION: u8 = 4;
const EXIT_RESOURCE: u8 = 5;
const EXIT_IO: u8 = 6;

#[derive(Parser)]
#[command(name = "regionplan", version, about = "Region-based approximation of POMDPs")]
struct Cli {
    /// Worker threads (defaults to REGIONPLAN_WORKERS, then the CPU count)
    #[arg(long, global = true, env = "REGIONPLAN_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compile a map into a model file
    Compile {
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the radius-k region system of a model
    Regions {
        #[command(flatten)]
        input: Input,
        #[arg(long, default_value_t = 0)]
        radius: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the radius-k region-observable model
    Solve {
        #[command(flatten)]
        input: Input,
        #[arg(long, default_value_t = 0)]
        radius: usize,
        /// Region file to use instead of a radius-k system
        #[arg(long, conflicts_with = "radius")]
        regions: Option<PathBuf>,
        #[command(flatten)]
        solve: SolveArgs,
        /// Value function output
        #[arg(long)]
        out: PathBuf,
        /// JSON report output (stdout if omitted)
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run seeded trials with a solved value function and write the g(n) curve
    Simulate {
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        values: PathBuf,
        /// Simulate with the oracle (the region-observable model)
        #[arg(long)]
        oracle: bool,
        #[command(flatten)]
        trials: TrialArgs,
        #[command(flatten)]
        goal: GoalArgs,
        /// CSV output (stdout if omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve and simulate several radii and tabulate the oracle gap
    Compare {
        #[command(flatten)]
        input: Input,
        #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
        radii: Vec<usize>,
        #[command(flatten)]
        solve: SolveArgs,
        #[command(flatten)]
        trials: TrialArgs,
        #[command(flatten)]
        goal: GoalArgs,
        /// Also write r<k>.csv and r<k>-oracle.csv for every radius here
        #[arg(long)]
        curves_dir: Option<PathBuf>,
        /// Print the table as JSON
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct Input {
    /// Model file
    #[arg(long, conflicts_with = "map", required_unless_present = "map")]
    model: Option<PathBuf>,
    /// Map file, compiled with the selected noise models
    #[arg(long)]
    map: Option<PathBuf>,
    /// Use the noisy action and sensor models (maps only)
    #[arg(long, conflicts_with = "standard")]
    noisy: bool,
    /// Use the standard action and sensor models (maps only; the default)
    #[arg(long)]
    standard: bool,
    /// Discount factor for compiled maps
    #[arg(long, default_value_t = DEFAULT_DISCOUNT)]
    gamma: f64,
}

#[derive(Args, Clone, Copy)]
struct SolveArgs {
    /// Bellman residual threshold
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iterations: usize,
    /// Cap on vectors per region, including intermediate cross sums
    #[arg(long, default_value_t = 20_000)]
    max_vectors: usize,
    /// Wall-clock cap per solve, in seconds
    #[arg(long)]
    time_limit: Option<f64>,
    /// Witness margin under which a vector is pruned
    #[arg(long, default_value_t = PRUNE_TOL)]
    prune_tol: f64,
}

impl SolveArgs {
    fn limits(&self) -> SolveLimits {
        SolveLimits {
            max_iterations: self.max_iterations,
            max_vectors: self.max_vectors,
            time_limit: self.time_limit.map(Duration::from_secs_f64),
            prune_tolerance: self.prune_tol,
        }
    }
}

#[derive(Args, Clone, Copy)]
struct TrialArgs {
    #[arg(long, default_value_t = simulator::DEFAULT_TRIALS)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = simulator::DEFAULT_MAX_STEPS)]
    max_steps: usize,
}

#[derive(Args)]
struct GoalArgs {
    /// Action that ends a trial (model files only)
    #[arg(long, default_value = "declare-goal")]
    declare: String,
    /// States where declaring succeeds (model files only; names or indices)
    #[arg(long, num_args = 1..)]
    goal: Vec<String>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Parse(String),
    Validation(String),
    Resource { message: String, report: Box<SolveReport> },
    Io(String),
    Internal(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Parse(m) | CliError::Validation(m) | CliError::Io(m) => f.write_str(m),
            CliError::Resource { message, .. } => f.write_str(message),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Parse(_) => EXIT_PARSE,
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Resource { .. } => EXIT_RESOURCE,
            CliError::Io(_) => EXIT_IO,
            CliError::Internal(_) => 1,
        }
    }

    fn format(path: &Path, e: FormatError) -> Self {
        match e {
            FormatError::Syntax { .. } => CliError::Parse(format!("{}: {e}", path.display())),
            other => CliError::Validation(format!("{}: {other}", path.display())),
        }
    }
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::ResourceLimit { reason, report } => {
                CliError::Resource { message: format!("resource limit reached: {reason}"), report: Box::new(report) }
            }
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(m) => CliError::Usage(m),
            SimError::Policy(p) => p.into(),
            other => CliError::Internal(other.to_string()),
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))
}

fn write(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// A loaded problem: the model plus what trials need.
struct Problem {
    model: Pomdp,
    world: Option<GridWorld>,
}

impl Problem {
    fn load(input: &Input) -> Result<Self, CliError> {
        if let Some(path) = &input.model {
            if input.noisy {
                return Err(CliError::Usage("--noisy applies to maps only".into()));
            }
            let model = io::parse_model(&read(path)?).map_err(|e| CliError::format(path, e))?;
            return Ok(Problem { model, world: None });
        }
        let path = input.map.as_ref().expect("clap requires --model or --map");
        let map = gridworld::parse_map(&read(path)?).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
        let (actions, sensors) = if input.noisy {
            (ActionOutcomeModel::noisy(), SensorModel::noisy())
        } else {
            (ActionOutcomeModel::standard(), SensorModel::standard())
        };
        let world = GridWorld::new(map, &actions, &sensors, input.gamma).map_err(|e| CliError::Validation(e.to_string()))?;
        world
            .model
            .validate()
            .map_err(|v| CliError::Validation(regionplan::ModelError::Invalid(v).to_string()))?;
        Ok(Problem { model: world.model.clone(), world: Some(world) })
    }

    fn goal(&self, args: &GoalArgs) -> Result<GoalSpec, CliError> {
        if let Some(w) = &self.world {
            return Ok(GoalSpec { declare_action: gridworld::DECLARE_GOAL, goal_states: vec![w.goal_state] });
        }
        let declare_action = resolve(self.model.action_names(), &args.declare)
            .ok_or_else(|| CliError::Usage(format!("unknown action `{}`", args.declare)))?;
        if args.goal.is_empty() {
            return Err(CliError::Usage("--goal is required with --model".into()));
        }
        let goal_states = args
            .goal
            .iter()
            .map(|g| resolve(self.model.state_names(), g).ok_or_else(|| CliError::Usage(format!("unknown state `{g}`"))))
            .collect::<Result<_, _>>()?;
        Ok(GoalSpec { declare_action, goal_states })
    }

    fn trial_config(&self, args: &TrialArgs) -> TrialConfig {
        let start_distribution = match &self.world {
            Some(w) => TrialConfig::uniform_over(self.model.num_states(), w.navigation_states(), 0.0).start_distribution,
            None => self.model.initial_belief().to_vec(),
        };
        TrialConfig {
            num_trials: args.trials,
            max_steps: args.max_steps,
            base_seed: args.seed,
            start_distribution,
            discount: self.model.discount(),
        }
    }
}

fn resolve(names: &[String], token: &str) -> Option<usize> {
    names.iter().position(|n| n == token).or_else(|| token.parse().ok().filter(|&i| i < names.len()))
}

/// Solves at radius `k` (or on a given system); radius 0 takes the MDP path.
fn solve(model: &Pomdp, system: RegionSystem, args: &SolveArgs) -> Result<(ValueFunction, SolveReport), CliError> {
    let limits = args.limits();
    if system.radius() == Some(0) && system.regions().iter().all(|r| r.len() == 1) {
        let sol = mdp_value_iteration(model, args.epsilon, &limits);
        if !sol.report.converged {
            return Err(SolverError::ResourceLimit {
                reason: format!("iteration cap {}", limits.max_iterations),
                report: sol.report,
            }
            .into());
        }
        let sets = system
            .regions()
            .iter()
            .map(|r| {
                let s = r.members()[0];
                vec![AlphaVector::new(vec![sol.values[s]], sol.policy[s])]
            })
            .collect();
        let values = RegionValues::new(system, sets)?;
        return Ok((ValueFunction::PerRegion(values), sol.report));
    }
    let mp = transform(model, &system);
    Ok(restricted_value_iteration(&mp, args.epsilon, &limits)?)
}

#[derive(Serialize)]
struct SolveSummary<'a> {
    radius: Option<usize>,
    states: usize,
    regions: usize,
    vectors: usize,
    report: &'a SolveReport,
}

#[derive(Serialize)]
struct CompareRow {
    radius: usize,
    status: &'static str,
    oracle_reward: Option<f64>,
    plain_reward: Option<f64>,
    gap: Option<f64>,
    solve_secs: Option<f64>,
    iterations: Option<usize>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    match cli.command {
        Command::Compile { input, out } => {
            let p = Problem::load(&input)?;
            write(out.as_deref(), &io::serialize_model(&p.model))
        }
        Command::Regions { input, radius, out } => {
            let p = Problem::load(&input)?;
            write(out.as_deref(), &io::serialize_regions(&radius_k_system(&p.model, radius)))
        }
        Command::Solve { input, radius, regions, solve: args, out, report } => {
            let p = Problem::load(&input)?;
            let system = match &regions {
                Some(path) => io::parse_regions(&read(path)?).map_err(|e| CliError::format(path, e))?,
                None => radius_k_system(&p.model, radius),
            };
            if system.num_states() != p.model.num_states() {
                return Err(CliError::Validation(format!(
                    "region system covers {} states, model has {}",
                    system.num_states(),
                    p.model.num_states()
                )));
            }
            let summary = |vf: Option<&ValueFunction>, r: &SolveReport| {
                serde_json::to_string_pretty(&SolveSummary {
                    radius: system.radius(),
                    states: system.num_states(),
                    regions: system.len(),
                    vectors: vf.map_or(0, ValueFunction::vector_count),
                    report: r,
                })
                .expect("report serializes")
                    + "\n"
            };
            match solve(&p.model, system.clone(), &args) {
                Ok((vf, r)) => {
                    write(Some(&out), &io::serialize_value_function(&vf))?;
                    write(report.as_deref(), &summary(Some(&vf), &r))
                }
                Err(CliError::Resource { message, report: partial }) => {
                    let text = summary(None, &partial);
                    match &report {
                        Some(path) => write(Some(path), &text)?,
                        None => eprint!("{text}"),
                    }
                    Err(CliError::Resource { message, report: partial })
                }
                Err(e) => Err(e),
            }
        }
        Command::Simulate { input, values, oracle, trials, goal, out } => {
            let p = Problem::load(&input)?;
            let vf = io::parse_value_function(&read(&values)?).map_err(|e| CliError::format(&values, e))?;
            if vf.num_states() != p.model.num_states() {
                return Err(CliError::Validation(format!(
                    "value function covers {} states, model has {}",
                    vf.num_states(),
                    p.model.num_states()
                )));
            }
            let goal = p.goal(&goal)?;
            let cfg = p.trial_config(&trials);
            let curve = match &vf {
                ValueFunction::PerRegion(rv) => {
                    let mp = transform(&p.model, rv.system());
                    if oracle {
                        let policy = GreedyPolicy { view: Lookahead::Oracle(&mp), values: &vf };
                        simulator::run_batch(Environment::Oracle(&mp), &policy, &goal, &cfg)?.1
                    } else {
                        let policy = GreedyPolicy { view: Lookahead::Approximate(&mp), values: &vf };
                        simulator::run_batch(Environment::Plain(&p.model), &policy, &goal, &cfg)?.1
                    }
                }
                ValueFunction::Global(_) => {
                    if oracle {
                        return Err(CliError::Usage("--oracle needs a per-region value function".into()));
                    }
                    let policy = GreedyPolicy { view: Lookahead::Plain(&p.model), values: &vf };
                    simulator::run_batch(Environment::Plain(&p.model), &policy, &goal, &cfg)?.1
                }
            };
            eprintln!("average reward {}", simulator::average_reward(&curve, cfg.discount));
            write(out.as_deref(), &io::serialize_curve_csv(&curve))
        }
        Command::Compare { input, radii, solve: args, trials, goal, curves_dir, json } => {
            if radii.is_empty() {
                return Err(CliError::Usage("--radii needs at least one radius".into()));
            }
            let p = Problem::load(&input)?;
            let goal = p.goal(&goal)?;
            let cfg = p.trial_config(&trials);
            if let Some(dir) = &curves_dir {
                fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
            }
            let mut rows = Vec::new();
            for &k in &radii {
                let system = radius_k_system(&p.model, k);
                let (vf, report) = match solve(&p.model, system.clone(), &args) {
                    Ok(x) => x,
                    Err(CliError::Resource { report, .. }) => {
                        rows.push(CompareRow {
                            radius: k,
                            status: "intractable",
                            oracle_reward: None,
                            plain_reward: None,
                            gap: None,
                            solve_secs: Some(report.elapsed_secs),
                            iterations: Some(report.iterations),
                        });
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let mp = transform(&p.model, &system);
                let g = simulator::gap_estimate(&mp, &vf, &goal, &cfg)?;
                if let Some(dir) = &curves_dir {
                    write(Some(&dir.join(format!("r{k}.csv"))), &io::serialize_curve_csv(&g.plain_curve))?;
                    write(Some(&dir.join(format!("r{k}-oracle.csv"))), &io::serialize_curve_csv(&g.oracle_curve))?;
                }
                rows.push(CompareRow {
                    radius: k,
                    status: "solved",
                    oracle_reward: Some(g.oracle_reward),
                    plain_reward: Some(g.plain_reward),
                    gap: Some(g.gap),
                    solve_secs: Some(report.elapsed_secs),
                    iterations: Some(report.iterations),
                });
            }
            if json {
                println!("{}", serde_json::to_string_pretty(&rows).expect("rows serialize"));
            } else {
                println!("{:>6}  {:>12}  {:>12}  {:>10}", "radius", "oracle", "plain", "gap");
                for r in &rows {
                    match (r.oracle_reward, r.plain_reward, r.gap) {
                        (Some(o), Some(pl), Some(g)) => println!("{:>6}  {o:>12.6}  {pl:>12.6}  {g:>10.6}", r.radius),
                        _ => println!("{:>6}  {:>12}", r.radius, r.status),
                    }
                }
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("regionplan: {e}");
            ExitCode::from(e.code())
        }
    }
}

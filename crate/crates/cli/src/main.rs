use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ktsplit::harness::{acceptance, generate, parse_config, run_traced, RunSettings, Trace};
use ktsplit::{Error, SolveReport, Status};
use rayon::prelude::*;

#[derive(Parser)]
#[command(name = "ktsplit", version, about = "Primal-dual projective splitting driver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one generated instance and write its trace.
    Solve {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long)]
        gamma: Option<String>,
        #[arg(long)]
        mu: Option<String>,
        #[arg(long)]
        lambda: Option<String>,
        /// Trace file to write.
        #[arg(long, default_value = "trace.csv")]
        out: PathBuf,
    },
    /// Run the acceptance suite.
    Accept,
    /// Solve one instance for every (gamma, mu, lambda) cell of a grid.
    Sweep {
        #[command(flatten)]
        problem: ProblemArgs,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',')]
        gamma: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        mu: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        lambda: Vec<String>,
        /// Directory receiving one trace file per cell.
        #[arg(long, default_value = "sweep")]
        out_dir: PathBuf,
    },
}

/// Settings shared by `solve` and `sweep`. Flags override the config file.
#[derive(Args)]
struct ProblemArgs {
    /// `key=value` file; keys are the long flag names with `_` for `-`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// affine_pd, lasso, consensus, sum_two or normfree_stress.
    #[arg(long)]
    kind: Option<String>,
    /// Comma-separated dimensions.
    #[arg(long)]
    dim: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    lambda_reg: Option<String>,
    #[arg(long)]
    norm_scale: Option<String>,
    #[arg(long)]
    condition: Option<String>,
    #[arg(long)]
    identical_blocks: Option<String>,
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long)]
    max_iters: Option<String>,
    #[arg(long)]
    residual_tol: Option<String>,
    #[arg(long)]
    sigma_tol: Option<String>,
    /// kt_residual, delta or cert_norm.
    #[arg(long)]
    stopping: Option<String>,
}

impl ProblemArgs {
    fn pairs(&self) -> Vec<(String, String)> {
        [
            ("kind", &self.kind),
            ("dim", &self.dim),
            ("seed", &self.seed),
            ("lambda_reg", &self.lambda_reg),
            ("norm_scale", &self.norm_scale),
            ("condition", &self.condition),
            ("identical_blocks", &self.identical_blocks),
            ("epsilon", &self.epsilon),
            ("max_iters", &self.max_iters),
            ("residual_tol", &self.residual_tol),
            ("sigma_tol", &self.sigma_tol),
            ("stopping", &self.stopping),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
        .collect()
    }

    /// Config file pairs followed by flag pairs, so flags win.
    fn settings(&self, extra: &[(&str, &str)]) -> Result<RunSettings, Failure> {
        let mut pairs = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
                parse_config(&text).map_err(Failure::from)?
            }
            None => Vec::new(),
        };
        pairs.extend(self.pairs());
        pairs.extend(extra.iter().map(|(k, v)| (k.to_string(), v.to_string())));
        let mut rs = RunSettings::default();
        rs.apply(&pairs)?;
        rs.spec.validate()?;
        rs.solver.validate()?;
        Ok(rs)
    }
}

#[derive(Debug)]
enum Failure {
    Suite,
    Usage(String),
    Numeric { iteration: usize, message: String },
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Suite => 1,
            Failure::Usage(_) => 2,
            Failure::Numeric { .. } => 3,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e.iteration() {
            Some(iteration) => Failure::Numeric { iteration, message: e.to_string() },
            None => Failure::Usage(e.to_string()),
        }
    }
}

fn report_text(settings: &RunSettings, report: &SolveReport, trace: &Trace, out: &Path) -> String {
    let status = match report.status {
        Status::Terminated => "terminated (exact Kuhn-Tucker point)",
        Status::Converged => "converged",
        Status::MaxIterations => "stopped at the iteration limit",
    };
    let mut text = format!(
        "kind: {}\ndims: {:?}\nseed: {}\nstatus: {status}\niterations: {}\nkt_residual: {:.6e}\n",
        settings.spec.kind, settings.spec.dims, settings.spec.seed, report.iterations, report.kt_residual
    );
    if let Some(d) = trace.records.last().and_then(|r| r.dist_to_oracle) {
        text += &format!("dist_to_oracle: {d:.6e}\n");
    }
    if let Some(obj) = report.objective.last() {
        text += &format!("objective: {obj:.12e}\n");
    }
    text += &format!("trace: {}\n", out.display());
    text
}

/// Generates, solves from the origin and writes the trace. Running out of
/// iterations counts as a numeric failure.
fn solve_one(settings: &RunSettings, out: &Path) -> Result<String, Failure> {
    let gen = generate(&settings.spec)?;
    let init = gen.instance.zero_point()?;
    let (report, trace) = run_traced(&gen, init, &settings.solver)?;
    trace
        .write_path(out)
        .map_err(|e| Failure::Usage(format!("cannot write {}: {e}", out.display())))?;
    let text = report_text(settings, &report, &trace, out);
    if report.status == Status::MaxIterations {
        return Err(Failure::Numeric {
            iteration: report.iterations,
            message: format!("no convergence within {} iterations\n{text}", report.iterations),
        });
    }
    Ok(text)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Solve { problem, gamma, mu, lambda, out } => {
            let extra: Vec<(&str, &str)> = [("gamma", &gamma), ("mu", &mu), ("lambda", &lambda)]
                .into_iter()
                .filter_map(|(k, v)| v.as_deref().map(|v| (k, v)))
                .collect();
            let settings = problem.settings(&extra)?;
            print!("{}", solve_one(&settings, &out)?);
            Ok(())
        }
        Command::Accept => {
            let outcomes = acceptance::run_all();
            for o in &outcomes {
                println!("{o}");
            }
            let passed = outcomes.iter().filter(|o| o.passed).count();
            println!("{passed}/{} criteria passed", outcomes.len());
            if passed == outcomes.len() {
                Ok(())
            } else {
                Err(Failure::Suite)
            }
        }
        Command::Sweep { problem, gamma, mu, lambda, out_dir } => {
            let axis = |v: Vec<String>| if v.is_empty() { vec![None] } else { v.into_iter().map(Some).collect() };
            let (gs, ms, ls) = (axis(gamma), axis(mu), axis(lambda));
            let mut cells = Vec::new();
            for g in &gs {
                for m in &ms {
                    for l in &ls {
                        cells.push((g.clone(), m.clone(), l.clone()));
                    }
                }
            }
            let settings: Vec<(String, RunSettings)> = cells
                .iter()
                .map(|(g, m, l)| {
                    let extra: Vec<(&str, &str)> = [("gamma", g), ("mu", m), ("lambda", l)]
                        .into_iter()
                        .filter_map(|(k, v)| v.as_deref().map(|v| (k, v)))
                        .collect();
                    let rs = problem.settings(&extra)?;
                    let name = format!(
                        "gamma{}_mu{}_lambda{}.csv",
                        rs.solver.gamma.at(0),
                        rs.solver.mu.at(0),
                        rs.solver.lambda.at(0)
                    );
                    Ok((name, rs))
                })
                .collect::<Result<_, Failure>>()?;
            fs::create_dir_all(&out_dir)
                .map_err(|e| Failure::Usage(format!("cannot create {}: {e}", out_dir.display())))?;
            let results: Vec<Result<String, Failure>> = settings
                .par_iter()
                .map(|(name, rs)| solve_one(rs, &out_dir.join(name)))
                .collect();
            let mut worst: Option<Failure> = None;
            for r in results {
                match r {
                    Ok(text) => println!("{text}"),
                    Err(f) => {
                        eprintln!("{}", describe(&f));
                        if worst.as_ref().is_none_or(|w| f.code() > w.code()) {
                            worst = Some(f);
                        }
                    }
                }
            }
            worst.map_or(Ok(()), Err)
        }
    }
}

fn describe(f: &Failure) -> String {
    match f {
        Failure::Suite => "acceptance suite failed".into(),
        Failure::Usage(m) => format!("error: {m}"),
        Failure::Numeric { iteration, message } => format!("numeric failure at iteration {iteration}: {message}"),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if !matches!(f, Failure::Suite) {
                eprintln!("{}", describe(&f));
            }
            ExitCode::from(f.code())
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use slos::app::{self, AppConfig, OutputOptions};

#[derive(Parser)]
#[command(
    name = "slos",
    version,
    about = "Smooth and locally sparse functional linear regression"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tune and fit a dataset; writes beta_hat, coefficients, active regions and metrics.
    Fit {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Run the (gamma, lambda) grid search and write the score table.
    Tune {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Permutation test of the fitted R².
    Permtest {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        permutations: Option<usize>,
        /// Reuse the observed (gamma, lambda) instead of retuning each permutation.
        #[arg(long)]
        fast: bool,
    },
    /// Monte Carlo study on one of the simulated cases.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// I, II or III.
        #[arg(long)]
        case: Option<String>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        replicates: Option<usize>,
        /// Comma-separated subset of oracle, ols, smooth, slos.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
    },
}

#[derive(Args)]
struct Common {
    /// Key-value settings file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Worker threads; all cores by default.
    #[arg(long)]
    threads: Option<usize>,
    /// Leave the timestamp comment out of output files.
    #[arg(long)]
    no_timestamp: bool,
}

#[derive(Args)]
struct DataArgs {
    /// Input CSV: numeric grid header, one response column, optional id column.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    response: Option<String>,
    #[arg(long)]
    id_column: Option<String>,
    /// Constrain beta(start) = beta(end).
    #[arg(long)]
    periodic: bool,
    /// Fit the natural log of the response.
    #[arg(long)]
    log_response: bool,
    /// Number of knot subintervals; the sample-size heuristic by default.
    #[arg(long)]
    num_subintervals: Option<usize>,
    /// bic, aic, gcv or cv<k>.
    #[arg(long)]
    criterion: Option<String>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
}

impl Common {
    fn load(&self) -> Result<AppConfig> {
        let mut c = match &self.config {
            Some(p) => AppConfig::from_file(p).with_context(|| format!("reading {}", p.display()))?,
            None => AppConfig::default(),
        };
        if let Some(s) = self.seed {
            c.seed = s;
        }
        Ok(c)
    }

    fn output(&self) -> OutputOptions {
        OutputOptions {
            out_dir: self.out_dir.clone(),
            timestamp: !self.no_timestamp,
        }
    }
}

impl DataArgs {
    fn apply(self, c: &mut AppConfig) {
        if self.data.is_some() {
            c.data = self.data;
        }
        if self.response.is_some() {
            c.response = self.response;
        }
        if self.id_column.is_some() {
            c.id_column = self.id_column;
        }
        c.periodic |= self.periodic;
        c.log_response |= self.log_response;
        if self.num_subintervals.is_some() {
            c.num_subintervals = self.num_subintervals;
        }
        if let Some(k) = self.criterion {
            c.criterion = k;
        }
        if self.gamma.is_some() {
            c.gamma = self.gamma;
        }
        if self.lambda.is_some() {
            c.lambda = self.lambda;
        }
    }
}

fn in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .context("building thread pool")?
            .install(f),
        None => f(),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit { common, data } => {
            let mut c = common.load()?;
            data.apply(&mut c);
            let o = in_pool(common.threads, || Ok(app::cmd_fit(&c, &common.output())?))?;
            println!(
                "gamma={:e} lambda={:e} r2={:.4} active_subintervals={}/{}",
                o.fit.config.gamma,
                o.fit.config.lambda(),
                o.r2,
                o.fit.active_mask.iter().filter(|a| **a).count(),
                o.fit.active_mask.len()
            );
        }
        Command::Tune { common, data } => {
            let mut c = common.load()?;
            data.apply(&mut c);
            let o = in_pool(common.threads, || Ok(app::cmd_tune(&c, &common.output())?))?;
            println!(
                "{} points; best gamma={:e} lambda={:e} {}={:.6}",
                o.table.rows.len(),
                o.fit.config.gamma,
                o.fit.config.lambda(),
                o.criterion,
                o.score
            );
        }
        Command::Permtest {
            common,
            data,
            permutations,
            fast,
        } => {
            let mut c = common.load()?;
            data.apply(&mut c);
            if let Some(p) = permutations {
                c.permutations = p;
            }
            c.fast |= fast;
            let r = in_pool(common.threads, || Ok(app::cmd_permtest(&c, &common.output())?))?;
            println!(
                "observed r2={:.4} p={:.4} ({} permutations, {} failed)",
                r.observed_r2,
                r.p_value(),
                r.num_permutations,
                r.failed
            );
        }
        Command::Simulate {
            common,
            case,
            n,
            replicates,
            methods,
        } => {
            let mut c = common.load()?;
            if let Some(v) = case {
                c.case = v;
            }
            if let Some(v) = n {
                c.n = v;
            }
            if let Some(v) = replicates {
                c.replicates = v;
            }
            if let Some(v) = methods {
                c.methods = v;
            }
            let report = in_pool(common.threads, || Ok(app::cmd_simulate(&c, &common.output())?))?;
            for r in report.summary() {
                println!(
                    "{:8} {:16} {:.4e} ({:.2e})",
                    r.method.to_string(),
                    r.metric.to_string(),
                    r.mean,
                    r.sd
                );
            }
            if !report.failed.is_empty() {
                println!("excluded replicates: {:?}", report.failed);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

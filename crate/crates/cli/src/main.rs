use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use twosize::{Method, RhoSpec, SizeParams, StoppingRule, Theta};
use twosize_cli::{load_config, run, CliError, Command, ExperimentConfig, Format, OutputSpec, Quantity};

#[derive(Parser)]
#[command(name = "twosize", version, about = "Two-size Wright-Fisher model: simulation, diffusion limit and analytics")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Small offspring cost, as a decimal or an exact fraction a/b.
    #[arg(long, global = true, default_value = "1/2")]
    theta: String,
    /// Resources per generation.
    #[arg(long = "R", global = true, default_value_t = 100.0)]
    resources: f64,
    #[arg(long, global = true, value_enum, default_value_t = RhoKind::Neutral)]
    rho: RhoKind,
    /// Selection strength (genic, genic-mutation, diploid, analytics).
    #[arg(long, global = true, default_value_t = 0.0)]
    s: f64,
    /// Dominance for diploid selection.
    #[arg(long, global = true, default_value_t = 0.5)]
    dominance: f64,
    /// Geometric ratio of the fittest-type-wins weights.
    #[arg(long, global = true, default_value_t = 0.5)]
    q: f64,
    #[arg(long, global = true, default_value_t = 0.0)]
    beta0: f64,
    #[arg(long, global = true, default_value_t = 0.0)]
    beta1: f64,
    /// Strict stopping rule (reject the individual that would exceed R).
    #[arg(long, global = true)]
    strict: bool,
    /// Root seed. Repeat it with `validate` to rerun the Monte Carlo criteria under each seed.
    /// Deterministic commands (renewal, analytics) default to 0.
    #[arg(long, global = true)]
    seed: Vec<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<FormatArg>,
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum RhoKind {
    Neutral,
    Genic,
    Mutation,
    GenicMutation,
    Diploid,
    Fittest,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum QuantityArg {
    Extinction,
    Absorption,
    Stationary,
    Scale,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Mc,
    ExactDp,
}

#[derive(Subcommand)]
enum Sub {
    /// Finite-model trajectories.
    Simulate {
        #[arg(long, default_value_t = 0.5)]
        x0: f64,
        #[arg(long, default_value_t = 1000)]
        gens: u64,
        #[arg(long, default_value_t = 1)]
        reps: u64,
    },
    /// Euler-Maruyama paths of the limit diffusion; hitting summary with --max-t.
    Sde {
        #[arg(long, default_value_t = 0.5)]
        x0: f64,
        #[arg(long, default_value_t = 1e-3)]
        h: f64,
        #[arg(long = "T", default_value_t = 1.0)]
        t_end: f64,
        #[arg(long, default_value_t = 1)]
        reps: u64,
        #[arg(long)]
        max_t: Option<f64>,
    },
    /// Scaled one-step moments over a uniform x grid.
    DriftScan {
        #[arg(long, default_value_t = 21)]
        grid: usize,
        #[arg(long, default_value_t = 100_000)]
        nsim: u64,
        #[arg(long, default_value_t = 1)]
        order: u32,
        #[arg(long, value_enum, default_value_t = MethodArg::Mc)]
        method: MethodArg,
    },
    /// Exact law of one generation at small-offspring probability p.
    Renewal {
        #[arg(long)]
        p: f64,
    },
    /// Closed-form and quadrature quantities of the limit diffusion.
    Analytics {
        #[arg(value_enum)]
        quantity: QuantityArg,
        #[arg(long, default_value_t = 101)]
        grid: usize,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
    /// Runs the acceptance suite; exits nonzero if any criterion fails.
    Validate {
        /// Criterion number or group (moments, wf, renewal, sde, analytics, io); repeatable.
        #[arg(long)]
        only: Vec<String>,
    },
    /// Runs a JSON config (or re-runs a manifest).
    Run { config: PathBuf },
}

fn rho_spec(c: &Common) -> RhoSpec {
    match c.rho {
        RhoKind::Neutral => RhoSpec::Neutral,
        RhoKind::Genic => RhoSpec::genic(c.s),
        RhoKind::Mutation => RhoSpec::mutation(c.beta0, c.beta1),
        RhoKind::GenicMutation => RhoSpec::GenicMutation { s: c.s, beta0: c.beta0, beta1: c.beta1 },
        RhoKind::Diploid => RhoSpec::Diploid { s: c.s, h: c.dominance },
        RhoKind::Fittest => RhoSpec::fittest_geometric(c.q, 64),
    }
}

fn build(cli: Cli) -> Result<ExperimentConfig, CliError> {
    let c = &cli.common;
    let format = c.format.map(|f| match f {
        FormatArg::Csv => Format::Csv,
        FormatArg::Json => Format::Json,
    });
    if let Sub::Run { config } = &cli.command {
        let mut cfg = load_config(config)?;
        if let Some(&seed) = c.seed.first() {
            cfg.seed = seed;
        }
        if c.out.is_some() {
            cfg.output.path = c.out.clone();
        }
        if let Some(f) = format {
            cfg.output.format = f;
        }
        cfg.threads = c.threads.or(cfg.threads);
        return Ok(cfg);
    }
    let deterministic = matches!(cli.command, Sub::Renewal { .. } | Sub::Analytics { .. });
    let seed = match (c.seed.as_slice(), &cli.command) {
        ([], _) if deterministic => 0,
        ([], _) => return Err(CliError::Config("--seed is required".into())),
        ([seed], _) | ([seed, ..], Sub::Validate { .. }) => *seed,
        (_, _) => return Err(CliError::Config("--seed may be repeated only with validate".into())),
    };
    let theta: Theta = c.theta.parse()?;
    let params = SizeParams::with_theta(theta, c.resources)?;
    let rule = if c.strict { StoppingRule::Strict } else { StoppingRule::NonStrict };
    let command = match cli.command {
        Sub::Simulate { x0, gens, reps } => Command::Simulate { x0, gens, reps, rule },
        Sub::Sde { x0, h, t_end, reps, max_t } => Command::Sde { x0, h, t_end, reps, rule, max_t },
        Sub::DriftScan { grid, nsim, order, method } => Command::DriftScan {
            grid,
            nsim,
            order,
            rule,
            method: match method {
                MethodArg::Mc => Method::Mc,
                MethodArg::ExactDp => Method::ExactDp,
            },
        },
        Sub::Renewal { p } => Command::Renewal { p, rule },
        Sub::Analytics { quantity, grid, tol } => Command::Analytics {
            quantity: match quantity {
                QuantityArg::Extinction => Quantity::Extinction,
                QuantityArg::Absorption => Quantity::Absorption,
                QuantityArg::Stationary => Quantity::Stationary,
                QuantityArg::Scale => Quantity::Scale,
            },
            grid,
            s: c.s,
            beta0: c.beta0,
            beta1: c.beta1,
            tol,
            rule,
        },
        Sub::Validate { only } => Command::Validate { only, extra_seeds: c.seed.iter().skip(1).copied().collect() },
        Sub::Run { .. } => unreachable!("handled above"),
    };
    let cfg = ExperimentConfig {
        command,
        params,
        rho: rho_spec(c),
        seed,
        output: OutputSpec { path: c.out.clone(), format: format.unwrap_or_default() },
        threads: c.threads,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = build(cli).and_then(|cfg| run(&cfg));
    match outcome {
        Ok(summary) => {
            for note in &summary.rendered.notes {
                eprintln!("note: {note}");
            }
            if summary.rendered.all_passed == Some(false) {
                ExitCode::FAILURE
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            let report = serde_json::to_string(&e.report()).unwrap_or_else(|_| e.to_string());
            eprintln!("{report}");
            ExitCode::from(2)
        }
    }
}

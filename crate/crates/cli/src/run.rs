//! Dispatch of a validated config to the owning module and rendering of its output.

use std::time::Instant;

use serde::Serialize;
use twosize::analytics::{
    extinction_prob, mean_absorption, mean_absorption_neutral, stationary_density, AnalyticsKind, AnalyticsResult,
    ScaleSpec,
};
use twosize::moments::{moment_scan, uniform_grid};
use twosize::renewal::exact_passage_law;
use twosize::sde::{euler_maruyama, hitting_time_mc_seeded, DiffusionSpec};
use twosize::wf::simulate_replicates;
use twosize::{streams, StoppingRule};

use crate::config::{Command, ExperimentConfig, Format, Quantity};
use crate::error::CliError;
use crate::output::{float, manifest_path, write_atomic, Csv, RunManifest, STREAM_RULE};
use crate::validate;

/// Data produced by one run, before it is written anywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub bytes: Vec<u8>,
    pub rows: u64,
    pub notes: Vec<String>,
    /// Validation runs only: every criterion passed.
    pub all_passed: Option<bool>,
}

fn json<T: Serialize>(value: &T, rows: u64, notes: Vec<String>) -> Result<Rendered, CliError> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(Rendered { bytes, rows, notes, all_passed: None })
}

fn csv(table: Csv, notes: Vec<String>) -> Rendered {
    let rows = table.rows();
    Rendered { bytes: table.into_bytes(), rows, notes, all_passed: None }
}

fn rule_label(rule: StoppingRule) -> &'static str {
    match rule {
        StoppingRule::NonStrict => "non_strict",
        StoppingRule::Strict => "strict",
    }
}

/// Renders the config's output in the calling thread pool.
pub fn render(cfg: &ExperimentConfig) -> Result<Rendered, CliError> {
    cfg.validate()?;
    let params = cfg.params;
    let theta = params.theta();
    let format = cfg.output.format;
    match &cfg.command {
        Command::Simulate { x0, gens, reps, rule } => {
            let runs = simulate_replicates(*x0, &cfg.rho, params, *rule, *gens, *reps, cfg.seed)?;
            let notes = runs
                .first()
                .filter(|t| t.initial.snapped)
                .map(|t| vec![format!("x0 = {} snapped to {}/{}", x0, t.initial.state.n_small, t.initial.state.m_size)])
                .unwrap_or_default();
            if format == Format::Json {
                let rows = runs.iter().map(|t| t.states.len() as u64).sum();
                return json(&runs, rows, notes);
            }
            let mut table = Csv::new(&["rep", "gen", "x_freq", "m_size"]);
            for (rep, t) in runs.iter().enumerate() {
                for (gen, s) in &t.states {
                    table.row(&[rep.to_string(), gen.to_string(), float(s.x_freq()), s.m_size.to_string()]);
                }
            }
            Ok(csv(table, notes))
        }
        Command::Sde { x0, h, t_end, reps, rule, max_t } => {
            let spec = DiffusionSpec::new(theta, cfg.rho.clone(), *rule)?;
            if let Some(max_t) = max_t {
                let report = hitting_time_mc_seeded(*x0, &spec, *h, *reps, *max_t, cfg.seed)?;
                let mut notes = Vec::new();
                if report.timeout_flag() {
                    notes.push(format!("{} paths did not absorb before {max_t}", report.timeouts));
                }
                if format == Format::Json {
                    return json(&report, 1, notes);
                }
                let mut table = Csv::new(&["quantity", "value", "std_err"]);
                table.row(&["p_hit0".into(), float(report.p_hit0.value), float(report.p_hit0.std_err)]);
                table.row(&[
                    "mean_absorption_time".into(),
                    float(report.mean_time.value),
                    float(report.mean_time.std_err),
                ]);
                table.row(&["timeout_fraction".into(), float(report.timeout_fraction()), float(0.0)]);
                return Ok(csv(table, notes));
            }
            let paths: Vec<_> =
                streams::replicates(cfg.seed, *reps, |_, rng| euler_maruyama(*x0, &spec, *h, *t_end, rng))
                    .into_iter()
                    .collect::<Result<_, _>>()?;
            if format == Format::Json {
                let rows = paths.iter().map(|p| p.values.len() as u64).sum();
                return json(&paths, rows, Vec::new());
            }
            let mut table = Csv::new(&["path", "t", "x"]);
            for (k, p) in paths.iter().enumerate() {
                for (t, x) in p.times().zip(&p.values) {
                    table.row(&[k.to_string(), float(t), float(*x)]);
                }
            }
            Ok(csv(table, Vec::new()))
        }
        Command::DriftScan { grid, nsim, order, rule, method } => {
            let report = moment_scan(&uniform_grid(*grid), *order, &cfg.rho, params, *rule, *method, *nsim, cfg.seed)?;
            if format == Format::Json {
                return json(&report, report.rows.len() as u64, Vec::new());
            }
            let mut table = Csv::new(&["x", "order", "estimate", "std_err", "theory", "method"]);
            for r in &report.rows {
                table.row(&[
                    float(r.x),
                    r.order.to_string(),
                    float(r.estimate),
                    float(r.std_err),
                    float(r.theory),
                    method.label().to_string(),
                ]);
            }
            Ok(csv(table, Vec::new()))
        }
        Command::Renewal { p, rule } => {
            let law = exact_passage_law(*p, params, *rule)?;
            if format == Format::Json {
                return json(&law, law.atoms.len() as u64, Vec::new());
            }
            let mut table = Csv::new(&["k_small", "k_large", "prob"]);
            for a in &law.atoms {
                table.row(&[a.k_small.to_string(), a.k_large.to_string(), float(a.prob)]);
            }
            Ok(csv(table, vec![format!("rule = {}", rule_label(*rule))]))
        }
        Command::Analytics { quantity, grid, s, beta0, beta1, tol, rule } => {
            let xs = uniform_grid(*grid);
            let mutation = *beta0 > 0.0 || *beta1 > 0.0;
            if mutation && *quantity != Quantity::Stationary {
                return Err(CliError::Config("extinction, absorption and scale need beta0 = beta1 = 0".into()));
            }
            let result = match quantity {
                Quantity::Stationary => stationary_density(&xs, theta, *beta0, *beta1, *s, *rule, *tol)?,
                Quantity::Extinction => AnalyticsResult {
                    kind: AnalyticsKind::Extinction,
                    values: xs.iter().map(|&x| extinction_prob(x, theta, *s, *rule)).collect::<Result<_, _>>()?,
                    grid: xs,
                    meta: [("theta".to_string(), theta), ("s".to_string(), *s)].into(),
                },
                Quantity::Absorption => {
                    let scale = ScaleSpec::genic(theta, *s, *rule)?;
                    let closed = *s == 0.0 && *rule == StoppingRule::NonStrict;
                    let mut worst = 0.0f64;
                    let mut values = Vec::with_capacity(xs.len());
                    for &x in &xs {
                        if closed {
                            values.push(mean_absorption_neutral(x, theta)?);
                        } else {
                            let q = mean_absorption(&scale, x, *tol)?;
                            worst = worst.max(q.error);
                            values.push(q.value);
                        }
                    }
                    AnalyticsResult {
                        kind: AnalyticsKind::AbsorptionTime,
                        grid: xs,
                        values,
                        meta: [("theta".to_string(), theta), ("s".to_string(), *s), ("quad_error".to_string(), worst)]
                            .into(),
                    }
                }
                Quantity::Scale => {
                    let scale = ScaleSpec::genic(theta, *s, *rule)?.with_tol(*tol);
                    AnalyticsResult {
                        kind: AnalyticsKind::Scale,
                        values: xs.iter().map(|&x| scale.eval(x)).collect::<Result<_, _>>()?,
                        grid: xs,
                        meta: [
                            ("theta".to_string(), theta),
                            ("s".to_string(), *s),
                            ("x0_ref".to_string(), scale.x0_ref),
                            ("eta".to_string(), scale.eta),
                        ]
                        .into(),
                    }
                }
            };
            if format == Format::Json {
                return json(&result, result.values.len() as u64, Vec::new());
            }
            let mut table = Csv::new(&["x", "value"]);
            for (x, v) in result.grid.iter().zip(&result.values) {
                table.row(&[float(*x), float(*v)]);
            }
            Ok(csv(table, Vec::new()))
        }
        Command::Validate { only, extra_seeds } => {
            let mut seeds = vec![cfg.seed];
            for &s in extra_seeds {
                if !seeds.contains(&s) {
                    seeds.push(s);
                }
            }
            let selected = validate::select(only)?;
            let outcomes = validate::run_suite(&selected, &seeds, |o| eprintln!("{}", o.line()));
            let all_passed = outcomes.iter().all(|o| o.passed);
            let passed = outcomes.iter().filter(|o| o.passed).count();
            eprintln!("{passed}/{} checks passed", outcomes.len());
            let mut rendered = if format == Format::Json {
                json(&outcomes, outcomes.len() as u64, Vec::new())?
            } else {
                let mut table = Csv::new(&["criterion", "seed", "passed", "detail"]);
                for o in &outcomes {
                    table.row(&[
                        o.id.to_string(),
                        o.seed.map(|s| s.to_string()).unwrap_or_default(),
                        o.passed.to_string(),
                        o.detail.replace([',', '\n'], ";"),
                    ]);
                }
                csv(table, Vec::new())
            };
            rendered.all_passed = Some(all_passed);
            Ok(rendered)
        }
    }
}

/// Renders in a pool of `threads` workers (machine default when `None`).
pub fn render_with_threads(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<Rendered, CliError> {
    match threads {
        None => render(cfg),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(format!("cannot build thread pool: {e}")))?
            .install(|| render(cfg)),
    }
}

/// What a finished run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub rendered: Rendered,
    pub manifest: Option<RunManifest>,
}

/// Renders and writes the data file plus its manifest; data goes to standard
/// output when the config names no path.
pub fn run(cfg: &ExperimentConfig) -> Result<RunSummary, CliError> {
    let start = Instant::now();
    let rendered = render_with_threads(cfg, cfg.threads)?;
    let Some(path) = &cfg.output.path else {
        use std::io::Write;
        match std::io::stdout().write_all(&rendered.bytes) {
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => return Err(e.into()),
            _ => {}
        }
        return Ok(RunSummary { rendered, manifest: None });
    };
    write_atomic(path, &rendered.bytes)?;
    let manifest = RunManifest {
        config: cfg.clone(),
        toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        root_seed: cfg.seed,
        stream_rule: STREAM_RULE.to_string(),
        wall_time_secs: start.elapsed().as_secs_f64(),
        rows: rendered.rows,
        outputs: vec![path.clone()],
        notes: rendered.notes.clone(),
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    write_atomic(&manifest_path(path), &bytes)?;
    Ok(RunSummary { rendered, manifest: Some(manifest) })
}

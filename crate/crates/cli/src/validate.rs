//! The acceptance suite: thirteen criteria combining exact-oracle identities
//! with Monte Carlo reproduction at desk scale.
//!
//! Monte Carlo criteria run once per requested seed; deterministic ones run once.

use serde::Serialize;
use twosize::analytics::{extinction_prob_genic, mean_absorption_neutral, mean_absorption_numeric, StationaryDensity};
use twosize::model::{mu, var_xi, Theta};
use twosize::moments::{moment_estimate_seeded, moment_limit, moment_scan, uniform_grid, Method, MomentRow};
use twosize::renewal::{exact_passage_law, stopping_summand_limit};
use twosize::sde::{euler_endpoints, hitting_time_mc_seeded, DiffusionSpec};
use twosize::stats::{ks_two_sample, total_variation};
use twosize::streams::{self, sub_seed};
use twosize::wf::{endpoint_frequencies, exact_one_step_law, initial_state, Stepper};
use twosize::{RhoSpec, SizeParams, StoppingRule};

use crate::config::{Command, ExperimentConfig, Format, OutputSpec};
use crate::error::CliError;
use crate::run::render_with_threads;

type Res<T> = Result<T, twosize::Error>;

/// Result of one criterion check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Check { passed, detail: detail.into() }
    }

    /// Conjunction, keeping every detail.
    fn and(self, other: Check) -> Check {
        Check { passed: self.passed && other.passed, detail: format!("{}; {}", self.detail, other.detail) }
    }
}

pub struct Criterion {
    pub id: u32,
    pub name: &'static str,
    pub group: &'static str,
    /// Depends on the seed (Monte Carlo).
    pub seeded: bool,
    pub check: fn(u64) -> Res<Check>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outcome {
    pub id: u32,
    pub name: &'static str,
    pub seed: Option<u64>,
    pub passed: bool,
    pub detail: String,
}

impl Outcome {
    /// One report line: `criterion 4 (variant neutrality) seed 42: PASS ...`.
    pub fn line(&self) -> String {
        let seed = self.seed.map(|s| format!(" seed {s}")).unwrap_or_default();
        let status = if self.passed { "PASS" } else { "FAIL" };
        format!("criterion {:>2} ({}){seed}: {status} {}", self.id, self.name, self.detail)
    }
}

pub const CRITERIA: [Criterion; 13] = [
    Criterion { id: 1, name: "neutral drift scan", group: "moments", seeded: true, check: c01_neutral_drift },
    Criterion { id: 2, name: "genic drift scan", group: "moments", seeded: true, check: c02_genic_drift },
    Criterion { id: 3, name: "second moment scan", group: "moments", seeded: true, check: c03_second_moment },
    Criterion { id: 4, name: "variant neutrality", group: "wf", seeded: true, check: c04_variant_neutrality },
    Criterion {
        id: 5,
        name: "variant second moment",
        group: "moments",
        seeded: true,
        check: c05_variant_second_moment,
    },
    Criterion {
        id: 6,
        name: "stopping summand convergence",
        group: "renewal",
        seeded: false,
        check: c06_stopping_summand,
    },
    Criterion { id: 7, name: "moment expansion", group: "renewal", seeded: false, check: c07_moment_expansion },
    Criterion { id: 8, name: "wald and reverse martingale", group: "renewal", seeded: false, check: c08_wald },
    Criterion { id: 9, name: "finite model vs diffusion", group: "sde", seeded: true, check: c09_finite_vs_sde },
    Criterion { id: 10, name: "extinction probability", group: "analytics", seeded: true, check: c10_extinction },
    Criterion { id: 11, name: "mean absorption time", group: "analytics", seeded: true, check: c11_absorption },
    Criterion { id: 12, name: "stationary density", group: "analytics", seeded: true, check: c12_stationary },
    Criterion { id: 13, name: "determinism", group: "io", seeded: true, check: c13_determinism },
];

pub const GROUPS: [&str; 6] = ["moments", "wf", "renewal", "sde", "analytics", "io"];

/// Criteria named by number or group; all of them for an empty selection.
pub fn select(only: &[String]) -> Result<Vec<&'static Criterion>, CliError> {
    if only.is_empty() {
        return Ok(CRITERIA.iter().collect());
    }
    let mut picked: Vec<&Criterion> = Vec::new();
    for key in only {
        let key = key.trim();
        let matched: Vec<&Criterion> = match key.parse::<u32>() {
            Ok(id) => CRITERIA.iter().filter(|c| c.id == id).collect(),
            Err(_) => CRITERIA.iter().filter(|c| c.group == key).collect(),
        };
        if matched.is_empty() {
            return Err(CliError::Config(format!(
                "unknown criterion or group '{key}' (groups: {})",
                GROUPS.join(", ")
            )));
        }
        for c in matched {
            if !picked.iter().any(|p| p.id == c.id) {
                picked.push(c);
            }
        }
    }
    picked.sort_by_key(|c| c.id);
    Ok(picked)
}

pub fn run_criterion(c: &Criterion, seed: u64) -> Outcome {
    let (passed, detail) = match (c.check)(seed) {
        Ok(check) => (check.passed, check.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    Outcome { id: c.id, name: c.name, seed: c.seeded.then_some(seed), passed, detail }
}

/// Runs the selection, calling `report` after each outcome.
pub fn run_suite<F: FnMut(&Outcome)>(selected: &[&Criterion], seeds: &[u64], mut report: F) -> Vec<Outcome> {
    let mut out = Vec::new();
    for c in selected {
        let seeds: &[u64] = if c.seeded { seeds } else { &seeds[..1] };
        for &seed in seeds {
            let o = run_criterion(c, seed);
            report(&o);
            out.push(o);
        }
    }
    out
}

fn params(theta: f64, r: f64) -> SizeParams {
    SizeParams::new(theta, r).expect("valid parameters")
}

/// Band check `|estimate - want(x)| <= 3 SE + slack`, reporting the row using
/// the largest share of its band.
fn band_check(rows: &[MomentRow], want: impl Fn(f64) -> f64, slack: f64) -> Check {
    let mut worst = (f64::NEG_INFINITY, 0.0, 0.0, 0.0);
    let mut failures = 0;
    for r in rows {
        let target = want(r.x);
        let used = (r.estimate - target).abs() / (3.0 * r.std_err + slack);
        if used > 1.0 {
            failures += 1;
        }
        if used > worst.0 {
            worst = (used, r.x, r.estimate, target);
        }
    }
    Check::new(
        failures == 0,
        format!(
            "{} points, {failures} outside 3 SE + {slack}; worst x = {:.2}: estimate {:.5} vs {:.5} ({:.0}% of band)",
            rows.len(),
            worst.1,
            worst.2,
            worst.3,
            100.0 * worst.0
        ),
    )
}

const SCAN_R: f64 = 1000.0;
const SCAN_NSIM: u64 = 100_000;
const SCAN_POINTS: usize = 21;

fn scan(spec: &RhoSpec, rule: StoppingRule, order: u32, seed: u64) -> Res<Vec<MomentRow>> {
    let grid = uniform_grid(SCAN_POINTS);
    Ok(moment_scan(&grid, order, spec, params(0.3, SCAN_R), rule, Method::Mc, SCAN_NSIM, seed)?.rows)
}

fn c01_neutral_drift(seed: u64) -> Res<Check> {
    let rows = scan(&RhoSpec::Neutral, StoppingRule::NonStrict, 1, seed)?;
    Ok(band_check(&rows, |x| -0.7 * x * (1.0 - x), 0.02))
}

fn c02_genic_drift(seed: u64) -> Res<Check> {
    let rows = scan(&RhoSpec::genic(1.0), StoppingRule::NonStrict, 1, seed)?;
    Ok(band_check(&rows, |x| 0.3 * x * (1.0 - x), 0.02))
}

fn c03_second_moment(seed: u64) -> Res<Check> {
    let rows = scan(&RhoSpec::Neutral, StoppingRule::NonStrict, 2, seed)?;
    let at_half = moment_limit(0.5, 2, 0.3, &RhoSpec::Neutral)?;
    let exact = Check::new((at_half - 0.1625).abs() < 1e-15, format!("limit at 0.5 = {at_half}"));
    Ok(band_check(&rows, |x| x * (1.0 - x) * (1.0 - 0.7 * x), 0.02).and(exact))
}

fn c04_variant_neutrality(seed: u64) -> Res<Check> {
    let mut fractions: Vec<(u64, u64)> = Vec::new();
    for m in 1..=20u64 {
        for k in 0..=m {
            if num_gcd(k, m) == 1 || k == 0 && m == 1 {
                fractions.push((k, m));
            }
        }
    }
    let mut worst = 0.0f64;
    let mut cases = 0;
    for theta in [0.3, 0.5] {
        for r in [1.0, 2.5, 5.0, 10.0] {
            for &(k, m) in &fractions {
                let x = k as f64 / m as f64;
                let law = exact_one_step_law(x, &RhoSpec::Neutral, params(theta, r), StoppingRule::Strict)?;
                worst = worst.max((law.expect(|a| a.freq()) - x).abs());
                cases += 1;
            }
        }
    }
    let exact = Check::new(worst <= 1e-12, format!("exact: max |E[X1] - x| = {worst:.2e} over {cases} cases"));
    let prm = params(0.3, SCAN_R);
    let mut mc_fail = Vec::new();
    let mut worst_z = 0.0f64;
    for (i, x) in [0.1, 0.3, 0.5, 0.7, 0.9].into_iter().enumerate() {
        let e = moment_estimate_seeded(x, 1, &RhoSpec::Neutral, prm, StoppingRule::Strict, SCAN_NSIM, seed, i as u32)?;
        let z = e.value.abs() / e.std_err;
        worst_z = worst_z.max(z);
        if !e.covers(0.0, 3.0, 0.0) {
            mc_fail.push(x);
        }
    }
    let mc = Check::new(
        mc_fail.is_empty(),
        format!("monte carlo at R = 1000: max |estimate| / SE = {worst_z:.2}, outside 3 SE at {mc_fail:?}"),
    );
    Ok(exact.and(mc))
}

fn num_gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        num_gcd(b, a % b)
    }
}

fn c05_variant_second_moment(seed: u64) -> Res<Check> {
    let rows = scan(&RhoSpec::Neutral, StoppingRule::Strict, 2, seed)?;
    Ok(band_check(&rows, |x| x * (1.0 - x) * (1.0 - 0.7 * x), 0.02))
}

fn c06_stopping_summand(_: u64) -> Res<Check> {
    let mut sups = Vec::new();
    for r in [50.0, 100.0, 200.0, 400.0] {
        let mut sup = 0.0f64;
        for i in 0..=20 {
            let p = i as f64 / 20.0;
            let law = exact_passage_law(p, params(0.5, r), StoppingRule::NonStrict)?;
            sup = sup.max((law.prob_last_small() - stopping_summand_limit(p, 0.5).q_theta).abs());
        }
        sups.push(sup);
    }
    let decreasing = sups.windows(2).all(|w| w[1] < w[0]);
    let last = sups[3];
    Ok(Check::new(
        decreasing && last <= 0.01,
        format!(
            "sup errors over R = 50, 100, 200, 400: {:?}",
            sups.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>()
        ),
    ))
}

fn c07_moment_expansion(_: u64) -> Res<Check> {
    let (p, theta) = (0.5, 0.5);
    let (m_mu, var) = (mu(p, theta), var_xi(p, theta));
    let mut passed = true;
    let mut parts = Vec::new();
    for m in 1..=4i32 {
        let mut residuals = Vec::new();
        for r in [100.0, 200.0, 400.0] {
            let law = exact_passage_law(p, params(theta, r), StoppingRule::NonStrict)?;
            let moment = law.expect(|a| (a.sum(theta) / a.tau() as f64).powi(m));
            let mf = m as f64;
            let lead = mf * (mf + 1.0) / 2.0 * m_mu.powi(m - 1) * var;
            residuals.push((r * (moment - m_mu.powi(m)) - lead).abs());
        }
        let ratios = [residuals[0] / residuals[1], residuals[1] / residuals[2]];
        passed &= ratios.iter().all(|q| (1.5..=3.0).contains(q));
        parts.push(format!("m = {m}: ratios {:.3}, {:.3}", ratios[0], ratios[1]));
    }
    Ok(Check::new(passed, parts.join("; ")))
}

fn c08_wald(_: u64) -> Res<Check> {
    let thetas = [Theta::rational(3, 10)?, Theta::rational(1, 2)?, Theta::real(std::f64::consts::FRAC_1_SQRT_2)?];
    let mut wald_ok = true;
    let mut worst_gap = f64::INFINITY;
    let mut cases = 0;
    for theta in thetas {
        for r in [1.0, 2.5, 5.0, 10.0, 50.0] {
            let prm = SizeParams::with_theta(theta, r)?;
            for i in 0..=20 {
                let p = i as f64 / 20.0;
                let law = exact_passage_law(p, prm, StoppingRule::NonStrict)?;
                let v = mu(p, theta.value()) * law.mean_tau();
                wald_ok &= v >= r - 1e-12 && v <= r + 1.0 + 1e-12;
                worst_gap = worst_gap.min((v - r).min(r + 1.0 - v));
                cases += 1;
            }
        }
    }
    let wald = Check::new(
        wald_ok,
        format!("mu E[tau] in [R, R+1] for {cases} cases (min distance to an end {worst_gap:.3e})"),
    );
    let mut worst = 0.0f64;
    for theta in thetas {
        for r in [1.0, 2.5, 5.0, 10.0] {
            let prm = SizeParams::with_theta(theta, r)?;
            for i in 0..=20 {
                let p = i as f64 / 20.0;
                let law = exact_passage_law(p, prm, StoppingRule::Strict)?;
                let th = theta.value();
                worst = worst.max((law.expect(|a| a.sum(th) / a.tau() as f64) - mu(p, th)).abs());
            }
        }
    }
    Ok(wald.and(Check::new(worst <= 1e-12, format!("max |E[S/tau] - mu| for the kept generation = {worst:.2e}"))))
}

pub const KS_R: f64 = 2000.0;
pub const KS_SAMPLES: u64 = 5000;

fn c09_finite_vs_sde(seed: u64) -> Res<Check> {
    let prm = params(0.6, KS_R);
    let gens = KS_R.floor() as u64;
    let finite = endpoint_frequencies(
        0.5,
        &RhoSpec::Neutral,
        prm,
        StoppingRule::NonStrict,
        gens,
        KS_SAMPLES,
        sub_seed(seed, 9),
    )?;
    let spec = DiffusionSpec::new(0.6, RhoSpec::Neutral, StoppingRule::NonStrict)?;
    let sde = euler_endpoints(0.5, &spec, 1.0 / KS_R, 1.0, KS_SAMPLES, sub_seed(seed, 90))?;
    let d = ks_two_sample(&finite, &sde);
    Ok(Check::new(
        d <= 0.05,
        format!("KS distance {d:.4} between {KS_SAMPLES} finite-model and {KS_SAMPLES} Euler endpoints"),
    ))
}

const HIT_H: f64 = 1e-4;
const HIT_PATHS: u64 = 10_000;
const HIT_MAX_T: f64 = 100.0;

fn c10_extinction(seed: u64) -> Res<Check> {
    let mut check = Check::new(true, String::from("hitting Monte Carlo with h = 1e-4"));
    for (i, (s, want)) in [(0.0, 2.0 / 3.0), (0.5, 0.5)].into_iter().enumerate() {
        let spec = DiffusionSpec::new(0.5, RhoSpec::genic(s), StoppingRule::NonStrict)?;
        let rep = hitting_time_mc_seeded(0.5, &spec, HIT_H, HIT_PATHS, HIT_MAX_T, sub_seed(seed, 100 + i as u64))?;
        let closed = extinction_prob_genic(0.5, 0.5, s)?;
        let ok = rep.p_hit0.covers(want, 3.0, 0.02) && (closed - want).abs() < 1e-12 && !rep.timeout_flag();
        check = check.and(Check::new(
            ok,
            format!("s = {s}: p_hit0 {:.4} (SE {:.4}) vs {want:.4}", rep.p_hit0.value, rep.p_hit0.std_err),
        ));
    }
    let mut worst = 0.0f64;
    for theta in [0.2, 0.5, 0.8] {
        let s0 = (1.0 - theta) / 2.0;
        for k in 1..20 {
            let x = k as f64 / 20.0;
            let log = extinction_prob_genic(x, theta, s0)?;
            for ds in [-1e-8, 1e-8] {
                worst = worst.max((extinction_prob_genic(x, theta, s0 + ds)? - log).abs());
            }
        }
    }
    Ok(check.and(Check::new(worst <= 1e-6, format!("branch gap {worst:.2e}"))))
}

fn c11_absorption(seed: u64) -> Res<Check> {
    let closed = mean_absorption_neutral(0.5, 0.5)?;
    let c1 = Check::new((closed - 1.848392).abs() <= 1e-6, format!("closed form {closed:.7}"));
    let numeric = mean_absorption_numeric(0.5, 0.5, 0.0, StoppingRule::NonStrict, 1e-9)?;
    let c2 = Check::new((numeric - closed).abs() <= 1e-6, format!("Green's integral {numeric:.7}"));
    let spec = DiffusionSpec::new(0.5, RhoSpec::Neutral, StoppingRule::NonStrict)?;
    let rep = hitting_time_mc_seeded(0.5, &spec, HIT_H, HIT_PATHS, HIT_MAX_T, sub_seed(seed, 110))?;
    let rel = (rep.mean_time.value / closed - 1.0).abs();
    let c3 = Check::new(
        rel <= 0.05 && !rep.timeout_flag(),
        format!("Monte Carlo {:.4} (SE {:.4}, off by {:.2}%)", rep.mean_time.value, rep.mean_time.std_err, 100.0 * rel),
    );
    let classical = mean_absorption_neutral(0.5, 0.999)?;
    let rel_c = (classical / 1.386294 - 1.0).abs();
    let c4 =
        Check::new(rel_c <= 0.01, format!("theta = 0.999 gives {classical:.6} ({:.3}% from 2 ln 2)", 100.0 * rel_c));
    Ok(c1.and(c2).and(c3).and(c4))
}

pub const HIST_R: f64 = 500.0;
pub const HIST_THETA: f64 = 0.5;
pub const HIST_BINS: usize = 20;
pub const HIST_CHAINS: u64 = 20;
pub const HIST_BURN_IN: u64 = 5_000;
pub const HIST_GENS: u64 = 1_000_000;

/// Long-run frequency histogram of the finite model with mutation `beta0 = beta1 = 1`.
pub fn finite_histogram(seed: u64) -> Res<Vec<f64>> {
    let spec = RhoSpec::mutation(1.0, 1.0);
    let prm = params(HIST_THETA, HIST_R);
    let stepper = Stepper::new(&spec, prm, StoppingRule::NonStrict)?;
    let start = initial_state(0.5, &spec, prm)?.state;
    let per_chain = HIST_GENS / HIST_CHAINS;
    let parts: Vec<Res<Vec<u64>>> = streams::replicates(seed, HIST_CHAINS, |_, rng| {
        let mut counts = vec![0u64; HIST_BINS];
        let mut state = start;
        for _ in 0..HIST_BURN_IN {
            state = stepper.step(state, rng)?;
        }
        for _ in 0..per_chain {
            state = stepper.step(state, rng)?;
            let bin = ((state.x_freq() * HIST_BINS as f64) as usize).min(HIST_BINS - 1);
            counts[bin] += 1;
        }
        Ok(counts)
    });
    let mut total = vec![0u64; HIST_BINS];
    for part in parts {
        for (t, c) in total.iter_mut().zip(part?) {
            *t += c;
        }
    }
    let n: u64 = total.iter().sum();
    Ok(total.into_iter().map(|c| c as f64 / n as f64).collect())
}

fn c12_stationary(seed: u64) -> Res<Check> {
    let d = StationaryDensity::new(HIST_THETA, 1.0, 1.0, 0.0, StoppingRule::NonStrict, 1e-10)?;
    let mass = d.total_mass_split(0.3, 1e-10)?;
    let c1 = Check::new((mass - 1.0).abs() <= 1e-6, format!("mass {mass:.10}"));
    let classical = StationaryDensity::new(0.999, 1.0, 1.0, 0.0, StoppingRule::NonStrict, 1e-10)?;
    let sup = (0..=1000)
        .map(|k| {
            let x = k as f64 / 1000.0;
            (classical.pdf(x) - 6.0 * x * (1.0 - x)).abs()
        })
        .fold(0.0, f64::max);
    let c2 = Check::new(sup <= 0.01, format!("theta = 0.999 sup distance to 6x(1-x) {sup:.2e}"));
    let hist = finite_histogram(sub_seed(seed, 12))?;
    let bins: Vec<f64> = (0..HIST_BINS)
        .map(|k| d.probability(k as f64 / HIST_BINS as f64, (k + 1) as f64 / HIST_BINS as f64, 1e-10))
        .collect::<Res<_>>()?;
    let tv = total_variation(&hist, &bins);
    let c3 = Check::new(tv <= 0.05, format!("R = 500 histogram TV {tv:.4}"));
    Ok(c1.and(c2).and(c3))
}

/// Small configs covering the Monte Carlo commands, for determinism checks.
pub fn determinism_configs(seed: u64) -> Vec<ExperimentConfig> {
    let base = |command, theta: f64, r: f64, rho| ExperimentConfig {
        command,
        params: params(theta, r),
        rho,
        seed,
        output: OutputSpec { path: None, format: Format::Csv },
        threads: None,
    };
    vec![
        base(
            Command::Simulate { x0: 0.5, gens: 300, reps: 24, rule: StoppingRule::NonStrict },
            0.3,
            50.0,
            RhoSpec::Neutral,
        ),
        base(
            Command::DriftScan { grid: 11, nsim: 20_000, order: 1, rule: StoppingRule::Strict, method: Method::Mc },
            0.3,
            200.0,
            RhoSpec::genic(1.0),
        ),
        base(
            Command::Sde { x0: 0.4, h: 1e-3, t_end: 0.5, reps: 12, rule: StoppingRule::NonStrict, max_t: None },
            0.6,
            1.0,
            RhoSpec::mutation(0.5, 0.5),
        ),
        base(
            Command::Sde { x0: 0.5, h: 1e-3, t_end: 1.0, reps: 9000, rule: StoppingRule::NonStrict, max_t: Some(50.0) },
            0.5,
            1.0,
            RhoSpec::Neutral,
        ),
    ]
}

fn c13_determinism(seed: u64) -> Res<Check> {
    let mut mismatches = Vec::new();
    let mut bytes = 0;
    for (i, cfg) in determinism_configs(seed).iter().enumerate() {
        let outputs: Vec<Vec<u8>> = [Some(1), Some(3), Some(8), Some(8)]
            .into_iter()
            .map(|t| render_with_threads(cfg, t).map(|r| r.bytes))
            .collect::<Result<_, _>>()
            .map_err(|e| twosize::Error::InvalidParams(e.to_string()))?;
        bytes += outputs[0].len();
        if outputs.iter().any(|o| o != &outputs[0]) {
            mismatches.push(i);
        }
    }
    Ok(Check::new(
        mismatches.is_empty(),
        format!("4 configs x worker counts 1, 3, 8, 8: {bytes} bytes compared, mismatching configs {mismatches:?}"),
    ))
}

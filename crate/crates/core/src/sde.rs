//! Limiting diffusion `dX = d(X) dt + sqrt(sigma^2(X)) dB` on `[0,1]`.
//!
//! `sigma^2(x) = x(1 - x)(1 - (1 - theta) x)`. The drift is
//! `-(1 - theta) x(1 - x) + rho(x)` for the non-strict model and `rho(x)` for
//! the strict variant, whose stopping bias vanishes.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{RhoSpec, Theta};
use crate::renewal::StoppingRule;
use crate::stats::{Estimate, MeanVar};
use crate::streams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSpec {
    pub theta: f64,
    pub rho: RhoSpec,
    pub variant: StoppingRule,
}

impl DiffusionSpec {
    pub fn new(theta: f64, rho: RhoSpec, variant: StoppingRule) -> Result<Self> {
        Theta::real(theta)?;
        rho.validate()?;
        let (r0, r1) = (rho.rho_limit(0.0), rho.rho_limit(1.0));
        if r0 < 0.0 || r1 > 0.0 {
            return Err(Error::BoundarySign { rho0: r0, rho1: r1 });
        }
        Ok(DiffusionSpec { theta, rho, variant })
    }

    pub fn drift(&self, x: f64) -> f64 {
        drift(x, self)
    }

    pub fn diffusion_sq(&self, x: f64) -> f64 {
        diffusion_sq(x, self)
    }

    /// Boundary `b` is absorbing when `rho(b) = 0`.
    pub fn sticky(&self, boundary: f64) -> bool {
        self.rho.rho_limit(boundary) == 0.0
    }
}

pub fn drift(x: f64, spec: &DiffusionSpec) -> f64 {
    let rho = spec.rho.rho_limit(x);
    match spec.variant {
        StoppingRule::NonStrict => -(1.0 - spec.theta) * x * (1.0 - x) + rho,
        StoppingRule::Strict => rho,
    }
}

pub fn diffusion_sq(x: f64, spec: &DiffusionSpec) -> f64 {
    (x * (1.0 - x) * (1.0 - (1.0 - spec.theta) * x)).max(0.0)
}

/// `d(x) f'(x) + sigma^2(x) f''(x) / 2` from `(f, f', f'')` at `x`.
pub fn generator_apply(f_val_d1_d2: (f64, f64, f64), x: f64, spec: &DiffusionSpec) -> f64 {
    let (_, d1, d2) = f_val_d1_d2;
    drift(x, spec) * d1 + 0.5 * diffusion_sq(x, spec) * d2
}

/// Boundary contact of a path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Absorption {
    pub time: f64,
    pub boundary: f64,
}

/// Values on the grid `0, h, 2h, ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdePath {
    pub h: f64,
    pub values: Vec<f64>,
    /// First exact contact with 0 or 1.
    pub absorbed_at: Option<Absorption>,
}

impl SdePath {
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.values.len()).map(|k| k as f64 * self.h)
    }

    pub fn last(&self) -> f64 {
        *self.values.last().expect("path has its start value")
    }
}

fn check_step(h: f64, t_end: f64) -> Result<u64> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidStep { h });
    }
    if !(t_end >= h) {
        return Err(Error::InvalidParams(format!("horizon T = {t_end} is shorter than h = {h}")));
    }
    Ok(steps_for(t_end, h))
}

/// `T / h` rounded to an integer when within 1e-9, otherwise rounded up.
fn steps_for(t_end: f64, h: f64) -> u64 {
    let n = t_end / h;
    let r = n.round();
    if (n - r).abs() <= 1e-9 * r.max(1.0) {
        r as u64
    } else {
        n.ceil() as u64
    }
}

fn check_x0(x0: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&x0) {
        return Err(Error::InvalidParams(format!("x0 = {x0} is outside [0,1]")));
    }
    Ok(())
}

/// Integrator state shared by recorded and unrecorded runs.
#[derive(Debug, Clone, Copy)]
struct Euler<'a> {
    spec: &'a DiffusionSpec,
    h: f64,
    sqrt_h: f64,
    sticky0: bool,
    sticky1: bool,
}

impl<'a> Euler<'a> {
    fn new(spec: &'a DiffusionSpec, h: f64) -> Self {
        Euler { spec, h, sqrt_h: h.sqrt(), sticky0: spec.sticky(0.0), sticky1: spec.sticky(1.0) }
    }

    fn stuck(&self, x: f64) -> bool {
        (x == 0.0 && self.sticky0) || (x == 1.0 && self.sticky1)
    }

    #[inline]
    fn step<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> f64 {
        if self.stuck(x) {
            return x;
        }
        let z: f64 = rng.sample(StandardNormal);
        let next = x + drift(x, self.spec) * self.h + diffusion_sq(x, self.spec).sqrt() * self.sqrt_h * z;
        next.clamp(0.0, 1.0)
    }
}

pub fn euler_maruyama<R: Rng + ?Sized>(
    x0: f64,
    spec: &DiffusionSpec,
    h: f64,
    t_end: f64,
    rng: &mut R,
) -> Result<SdePath> {
    let n = check_step(h, t_end)?;
    check_x0(x0)?;
    let e = Euler::new(spec, h);
    let mut values = Vec::with_capacity(n as usize + 1);
    let mut x = x0;
    let mut absorbed_at = (x == 0.0 || x == 1.0).then_some(Absorption { time: 0.0, boundary: x });
    values.push(x);
    for k in 1..=n {
        x = e.step(x, rng);
        if absorbed_at.is_none() && (x == 0.0 || x == 1.0) {
            absorbed_at = Some(Absorption { time: k as f64 * h, boundary: x });
        }
        values.push(x);
    }
    Ok(SdePath { h, values, absorbed_at })
}

/// Value at `t_end` without storing the path.
pub fn euler_endpoint<R: Rng + ?Sized>(x0: f64, spec: &DiffusionSpec, h: f64, t_end: f64, rng: &mut R) -> Result<f64> {
    let n = check_step(h, t_end)?;
    check_x0(x0)?;
    let e = Euler::new(spec, h);
    let mut x = x0;
    for _ in 0..n {
        x = e.step(x, rng);
    }
    Ok(x)
}

/// Endpoints of `n_paths` independent paths; path `k` uses stream `(seed, k)`.
pub fn euler_endpoints(x0: f64, spec: &DiffusionSpec, h: f64, t_end: f64, n_paths: u64, seed: u64) -> Result<Vec<f64>> {
    check_step(h, t_end)?;
    check_x0(x0)?;
    streams::replicates(seed, n_paths, |_, rng| euler_endpoint(x0, spec, h, t_end, rng)).into_iter().collect()
}

/// Hitting summary over many paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HittingReport {
    /// Fraction absorbed at 0 among all paths, estimating `P_x(T_0 < T_1)`.
    pub p_hit0: Estimate,
    /// Mean of `T_0 ^ T_1` over absorbed paths.
    pub mean_time: Estimate,
    pub timeouts: u64,
    pub n_sim: u64,
}

impl HittingReport {
    pub fn timeout_fraction(&self) -> f64 {
        self.timeouts as f64 / self.n_sim as f64
    }

    /// More than 1% of the paths did not absorb before `max_t`.
    pub fn timeout_flag(&self) -> bool {
        self.timeout_fraction() > 0.01
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct HitPartial {
    hit0: MeanVar,
    time: MeanVar,
    timeouts: u64,
}

fn check_absorbing(spec: &DiffusionSpec) -> Result<()> {
    let (rho0, rho1) = (spec.rho.rho_limit(0.0), spec.rho.rho_limit(1.0));
    if rho0 > 0.0 || rho1 < 0.0 {
        return Err(Error::NonAbsorbing { rho0, rho1 });
    }
    Ok(())
}

fn hit_one<R: Rng + ?Sized>(x0: f64, e: &Euler, max_steps: u64, acc: &mut HitPartial, rng: &mut R) {
    let mut x = x0;
    let mut k = 0u64;
    while x != 0.0 && x != 1.0 {
        if k == max_steps {
            acc.timeouts += 1;
            acc.hit0.push(0.0);
            return;
        }
        x = e.step(x, rng);
        k += 1;
    }
    acc.hit0.push(if x == 0.0 { 1.0 } else { 0.0 });
    acc.time.push(k as f64 * e.h);
}

fn check_hitting(x0: f64, spec: &DiffusionSpec, h: f64, n_sim: u64, max_t: f64) -> Result<u64> {
    check_absorbing(spec)?;
    check_x0(x0)?;
    if n_sim == 0 {
        return Err(Error::InvalidParams("n_sim must be at least 1".into()));
    }
    check_step(h, max_t)
}

fn report(p: HitPartial, n_sim: u64) -> HittingReport {
    HittingReport { p_hit0: p.hit0.estimate(), mean_time: p.time.estimate(), timeouts: p.timeouts, n_sim }
}

/// Sequential hitting-time Monte Carlo on one stream.
pub fn hitting_time_mc<R: Rng + ?Sized>(
    x0: f64,
    spec: &DiffusionSpec,
    h: f64,
    n_sim: u64,
    max_t: f64,
    rng: &mut R,
) -> Result<HittingReport> {
    let max_steps = check_hitting(x0, spec, h, n_sim, max_t)?;
    let e = Euler::new(spec, h);
    let mut acc = HitPartial::default();
    for _ in 0..n_sim {
        hit_one(x0, &e, max_steps, &mut acc, rng);
    }
    Ok(report(acc, n_sim))
}

/// Parallel hitting-time Monte Carlo; chunk `c` uses stream `(seed, c)`.
pub fn hitting_time_mc_seeded(
    x0: f64,
    spec: &DiffusionSpec,
    h: f64,
    n_sim: u64,
    max_t: f64,
    seed: u64,
) -> Result<HittingReport> {
    let max_steps = check_hitting(x0, spec, h, n_sim, max_t)?;
    let e = Euler::new(spec, h);
    let parts = streams::chunked(seed, 0, n_sim, |_, len, rng| {
        let mut acc = HitPartial::default();
        for _ in 0..len {
            hit_one(x0, &e, max_steps, &mut acc, rng);
        }
        acc
    });
    let mut total = HitPartial::default();
    for p in &parts {
        total.hit0.merge(&p.hit0);
        total.time.merge(&p.time);
        total.timeouts += p.timeouts;
    }
    Ok(report(total, n_sim))
}

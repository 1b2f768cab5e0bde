//! Scaled one-step moments `R E_x[(X_1 - x)^n]` and the discrete generator
//! `A^R f(x) = R E_x[f(X_1) - f(x)]`, by Monte Carlo or from the exact law.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{rho_finite, RhoSpec, SizeParams};
use crate::renewal::StoppingRule;
use crate::sde::{diffusion_sq, drift, generator_apply, DiffusionSpec};
use crate::stats::{merge_all, Estimate, MeanVar};
use crate::streams;
use crate::wf::{exact_one_step_law, Stepper};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Mc,
    ExactDp,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Mc => "mc",
            Method::ExactDp => "exact-dp",
        }
    }
}

fn check_order(n: u32) -> Result<()> {
    if (1..=4).contains(&n) {
        Ok(())
    } else {
        Err(Error::UnsupportedOrder(n))
    }
}

/// Limit of `R E_x[(X_1 - x)^n]` for the given diffusion: drift, `sigma^2`, then zero.
pub fn moment_limit_for(x: f64, n: u32, spec: &DiffusionSpec) -> Result<f64> {
    check_order(n)?;
    Ok(match n {
        1 => drift(x, spec),
        2 => diffusion_sq(x, spec),
        _ => 0.0,
    })
}

/// Limit of `R E_x[(X_1 - x)^n]` for the non-strict model.
pub fn moment_limit(x: f64, n: u32, theta: f64, rho: &RhoSpec) -> Result<f64> {
    check_order(n)?;
    Ok(match n {
        1 => -(1.0 - theta) * x * (1.0 - x) + rho.rho_limit(x),
        2 => x * (1.0 - x) * (1.0 - (1.0 - theta) * x),
        _ => 0.0,
    })
}

/// `R (X_1 - x)^n` accumulated over `n_sim` one-step simulations on one stream.
pub fn moment_estimate<R: Rng + ?Sized>(
    x: f64,
    n: u32,
    spec: &RhoSpec,
    params: SizeParams,
    rule: StoppingRule,
    n_sim: u64,
    rng: &mut R,
) -> Result<Estimate> {
    check_order(n)?;
    if n_sim < 2 {
        return Err(Error::InvalidParams("n_sim must be at least 2".into()));
    }
    let stepper = Stepper::new(spec, params, rule)?;
    let p = rho_finite(spec, params, x)?;
    let r = params.resources;
    let mut acc = MeanVar::new();
    for _ in 0..n_sim {
        let x1 = stepper.step_at(p, rng).x_freq();
        acc.push(r * (x1 - x).powi(n as i32));
    }
    Ok(acc.estimate())
}

/// Parallel version; chunk `c` of grid point `point` uses stream
/// `(seed, stream_index(point, c))`.
#[allow(clippy::too_many_arguments)]
pub fn moment_estimate_seeded(
    x: f64,
    n: u32,
    spec: &RhoSpec,
    params: SizeParams,
    rule: StoppingRule,
    n_sim: u64,
    seed: u64,
    point: u32,
) -> Result<Estimate> {
    let f = |x1: f64| (x1 - x).powi(n as i32);
    check_order(n)?;
    sampled_generator(&f, x, spec, params, rule, n_sim, seed, point)
}

/// `R (f(X_1) - f(x))` averaged over `n_sim` seeded simulations.
#[allow(clippy::too_many_arguments)]
fn sampled_generator<F: Fn(f64) -> f64 + Sync>(
    f: &F,
    x: f64,
    spec: &RhoSpec,
    params: SizeParams,
    rule: StoppingRule,
    n_sim: u64,
    seed: u64,
    point: u32,
) -> Result<Estimate> {
    if n_sim < 2 {
        return Err(Error::InvalidParams("n_sim must be at least 2".into()));
    }
    let stepper = Stepper::new(spec, params, rule)?;
    let p = rho_finite(spec, params, x)?;
    let r = params.resources;
    let base = f(x);
    let parts = streams::chunked(seed, point, n_sim, |_, len, rng| {
        let mut acc = MeanVar::new();
        for _ in 0..len {
            let x1 = stepper.step_at(p, rng).x_freq();
            acc.push(r * (f(x1) - base));
        }
        acc
    });
    Ok(merge_all(&parts).estimate())
}

/// Exact `R E_x[(X_1 - x)^n]`.
pub fn moment_exact(x: f64, n: u32, spec: &RhoSpec, params: SizeParams, rule: StoppingRule) -> Result<f64> {
    check_order(n)?;
    let law = exact_one_step_law(x, spec, params, rule)?;
    Ok(params.resources * law.expect(|a| (a.freq() - x).powi(n as i32)))
}

/// Exact `R E_x[(X_1 - rho_R(x))^n]`, centered at the sampling probability.
pub fn moment_exact_centered(x: f64, n: u32, spec: &RhoSpec, params: SizeParams, rule: StoppingRule) -> Result<f64> {
    check_order(n)?;
    let p = rho_finite(spec, params, x)?;
    let law = exact_one_step_law(x, spec, params, rule)?;
    Ok(params.resources * law.expect(|a| (a.freq() - p).powi(n as i32)))
}

/// One row of a moment sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub x: f64,
    pub order: u32,
    pub estimate: f64,
    pub std_err: f64,
    pub theory: f64,
}

impl MomentRow {
    /// `|estimate - theory| <= k SE + slack`.
    pub fn within(&self, k: f64, slack: f64) -> bool {
        (self.estimate - self.theory).abs() <= k * self.std_err + slack
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub rows: Vec<MomentRow>,
    pub method: Method,
    pub theta: f64,
    pub resources: f64,
    pub rule: StoppingRule,
    pub spec: RhoSpec,
}

/// `k / (points - 1)` for `k = 0..points`.
pub fn uniform_grid(points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.5],
        _ => (0..points).map(|k| k as f64 / (points - 1) as f64).collect(),
    }
}

/// Moment of order `n` on every grid point; theory from the matching diffusion.
#[allow(clippy::too_many_arguments)]
pub fn moment_scan(
    x_grid: &[f64],
    n: u32,
    spec: &RhoSpec,
    params: SizeParams,
    rule: StoppingRule,
    method: Method,
    n_sim: u64,
    seed: u64,
) -> Result<MomentReport> {
    check_order(n)?;
    let diffusion = DiffusionSpec::new(params.theta(), spec.clone(), rule)?;
    let rows: Result<Vec<MomentRow>> = x_grid
        .par_iter()
        .enumerate()
        .map(|(i, &x)| {
            let theory = moment_limit_for(x, n, &diffusion)?;
            let (estimate, std_err) = match method {
                Method::Mc => {
                    let e = moment_estimate_seeded(x, n, spec, params, rule, n_sim, seed, i as u32)?;
                    (e.value, e.std_err)
                }
                Method::ExactDp => (moment_exact(x, n, spec, params, rule)?, 0.0),
            };
            Ok(MomentRow { x, order: n, estimate, std_err, theory })
        })
        .collect();
    Ok(MomentReport {
        rows: rows?,
        method,
        theta: params.theta(),
        resources: params.resources,
        rule,
        spec: spec.clone(),
    })
}

/// Test function with analytic derivatives up to order four.
pub trait SmoothFn: Sync {
    fn value(&self, x: f64) -> f64;
    /// `k`-th derivative, `k <= 4`.
    fn deriv(&self, k: u32, x: f64) -> f64;
    /// `sup |f''''|` on `[0,1]`.
    fn max_abs_d4(&self) -> f64;
}

/// `sum_k coeffs[k] x^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial(pub Vec<f64>);

impl SmoothFn for Polynomial {
    fn value(&self, x: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    fn deriv(&self, k: u32, x: f64) -> f64 {
        self.derivative(k).value(x)
    }

    fn max_abs_d4(&self) -> f64 {
        let d4 = self.derivative(4);
        (0..=1000).map(|i| d4.value(i as f64 / 1000.0).abs()).fold(0.0, f64::max)
    }
}

impl Polynomial {
    pub fn derivative(&self, k: u32) -> Polynomial {
        let k = k as usize;
        Polynomial(
            self.0
                .iter()
                .enumerate()
                .skip(k)
                .map(|(j, c)| c * (j - k + 1..=j).map(|v| v as f64).product::<f64>())
                .collect(),
        )
    }
}

/// `exp(a x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exponential(pub f64);

impl SmoothFn for Exponential {
    fn value(&self, x: f64) -> f64 {
        (self.0 * x).exp()
    }

    fn deriv(&self, k: u32, x: f64) -> f64 {
        self.0.powi(k as i32) * (self.0 * x).exp()
    }

    fn max_abs_d4(&self) -> f64 {
        self.0.powi(4) * self.0.max(0.0).exp()
    }
}

/// `A^R f(x)`, exact (zero standard error) or by seeded Monte Carlo.
#[allow(clippy::too_many_arguments)]
pub fn discrete_generator<F: SmoothFn + ?Sized>(
    f: &F,
    x: f64,
    spec: &RhoSpec,
    params: SizeParams,
    rule: StoppingRule,
    method: Method,
    n_sim: u64,
    seed: u64,
) -> Result<Estimate> {
    match method {
        Method::ExactDp => {
            let law = exact_one_step_law(x, spec, params, rule)?;
            let base = f.value(x);
            let value = params.resources * law.expect(|a| f.value(a.freq()) - base);
            Ok(Estimate { value, std_err: 0.0, n: 0 })
        }
        Method::Mc => sampled_generator(&|y| f.value(y), x, spec, params, rule, n_sim, seed, 0),
    }
}

/// `A f(x) = d(x) f'(x) + sigma^2(x) f''(x) / 2` of the limiting diffusion.
pub fn generator_limit<F: SmoothFn + ?Sized>(f: &F, x: f64, spec: &DiffusionSpec) -> f64 {
    generator_apply((f.value(x), f.deriv(1, x), f.deriv(2, x)), x, spec)
}

/// Fourth-order Taylor reconstruction of `A^R f(x)` from the exact moments,
/// and the bound `(R / 12) E[(X_1 - x)^4] sup |f''''|` on its error.
pub fn taylor_generator<F: SmoothFn + ?Sized>(
    f: &F,
    x: f64,
    spec: &RhoSpec,
    params: SizeParams,
    rule: StoppingRule,
) -> Result<(f64, f64)> {
    let law = exact_one_step_law(x, spec, params, rule)?;
    let r = params.resources;
    let moments: Vec<f64> = (1..=4).map(|n| r * law.expect(|a| (a.freq() - x).powi(n))).collect();
    let mut fact = 1.0;
    let mut taylor = 0.0;
    for (k, m) in moments.iter().enumerate() {
        fact *= (k + 1) as f64;
        taylor += f.deriv(k as u32 + 1, x) / fact * m;
    }
    let bound = moments[3] / 12.0 * f.max_abs_d4();
    Ok((taylor, bound))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::mu;
    use crate::renewal::exact_passage_law;

    fn params(theta: f64, r: f64) -> SizeParams {
        SizeParams::new(theta, r).unwrap()
    }

    #[test]
    fn limits() {
        let n = RhoSpec::Neutral;
        assert!((moment_limit(0.5, 1, 0.3, &n).unwrap() + 0.175).abs() < 1e-15);
        assert!((moment_limit(0.5, 2, 0.3, &n).unwrap() - 0.1625).abs() < 1e-15);
        assert_eq!(moment_limit(0.2, 3, 0.3, &n).unwrap(), 0.0);
        assert_eq!(moment_limit(0.2, 5, 0.3, &n), Err(Error::UnsupportedOrder(5)));
        assert_eq!(moment_limit(0.2, 0, 0.3, &n), Err(Error::UnsupportedOrder(0)));
    }

    #[test]
    fn exact_examples() {
        let n = RhoSpec::Neutral;
        let v = moment_exact(0.5, 1, &n, params(0.5, 1.0), StoppingRule::NonStrict).unwrap();
        assert!((v + 0.125).abs() < 1e-15);
        for k in 0..=10 {
            let x = k as f64 / 10.0;
            let v = moment_exact(x, 1, &n, params(0.3, 7.5), StoppingRule::Strict).unwrap();
            assert!(v.abs() < 1e-11);
        }
        let fourth: Vec<f64> = [20.0, 40.0, 80.0]
            .iter()
            .map(|&r| moment_exact(0.5, 4, &n, params(0.5, r), StoppingRule::NonStrict).unwrap())
            .collect();
        assert!(fourth[0] > fourth[1] && fourth[1] > fourth[2]);
        let ratio = fourth[1] / fourth[2];
        assert!((1.5..=3.0).contains(&ratio), "{fourth:?}");
    }

    #[test]
    fn boundary_estimate_is_exactly_zero() {
        let mut rng = streams::stream(0, 0);
        let e = moment_estimate(0.0, 1, &RhoSpec::Neutral, params(0.3, 50.0), StoppingRule::NonStrict, 100, &mut rng)
            .unwrap();
        assert_eq!((e.value, e.std_err), (0.0, 0.0));
    }

    #[test]
    fn centered_moments_match_renewal_ratio() {
        let spec = RhoSpec::genic(1.0);
        for (theta, r) in [(0.3, 5.0), (0.5, 12.5), (0.7, 30.0)] {
            let prm = params(theta, r);
            for k in 0..=10 {
                let x = k as f64 / 10.0;
                let p = rho_finite(&spec, prm, x).unwrap();
                let law = exact_passage_law(p, prm, StoppingRule::NonStrict).unwrap();
                let m = mu(p, theta);
                for n in 1..=4 {
                    let renewal = law.expect(|a| (a.sum(theta) / a.tau() as f64 - m).powi(n as i32));
                    let want = r * (-1f64).powi(n as i32) * (1.0 - theta).powi(-(n as i32)) * renewal;
                    let got = moment_exact_centered(x, n, &spec, prm, StoppingRule::NonStrict).unwrap();
                    assert!((got - want).abs() < 1e-12 * (1.0 + want.abs()), "{theta} {r} {x} {n}");
                }
            }
        }
    }

    #[test]
    fn polynomial_derivatives() {
        let f = Polynomial(vec![1.0, -2.0, 0.5, 3.0, 2.0]);
        let x = 0.3;
        assert!((f.value(x) - (1.0 - 0.6 + 0.045 + 0.081 + 0.0162)).abs() < 1e-15);
        assert!((f.deriv(1, x) - (-2.0 + 0.3 + 9.0 * 0.09 + 8.0 * 0.027)).abs() < 1e-14);
        assert!((f.deriv(4, x) - 48.0).abs() < 1e-12);
        assert_eq!(f.max_abs_d4(), 48.0);
        assert_eq!(Polynomial(vec![0.0, 0.0, 1.0]).max_abs_d4(), 0.0);
    }

    #[test]
    fn generator_linearity() {
        let prm = params(0.3, 40.0);
        let spec = RhoSpec::genic(1.0);
        let c =
            discrete_generator(&Polynomial(vec![2.5]), 0.4, &spec, prm, StoppingRule::NonStrict, Method::ExactDp, 0, 0)
                .unwrap();
        assert_eq!(c.value, 0.0);
        let id = discrete_generator(
            &Polynomial(vec![0.0, 1.0]),
            0.4,
            &spec,
            prm,
            StoppingRule::NonStrict,
            Method::ExactDp,
            0,
            0,
        )
        .unwrap();
        let m1 = moment_exact(0.4, 1, &spec, prm, StoppingRule::NonStrict).unwrap();
        assert!((id.value - m1).abs() < 1e-12);
    }

    #[test]
    fn square_generator_mc() {
        let prm = params(0.3, 1000.0);
        let f = Polynomial(vec![0.0, 0.0, 1.0]);
        let e = discrete_generator(&f, 0.5, &RhoSpec::Neutral, prm, StoppingRule::NonStrict, Method::Mc, 1_000_000, 21)
            .unwrap();
        let d = DiffusionSpec::new(0.3, RhoSpec::Neutral, StoppingRule::NonStrict).unwrap();
        let limit = generator_limit(&f, 0.5, &d);
        assert!((limit + 0.0125).abs() < 1e-15);
        // O(1/R) slack on top of the sampling band
        assert!(e.covers(limit, 3.0, 0.002), "{e:?}");
    }

    #[test]
    fn uniform_generator_convergence() {
        let f = Polynomial(vec![0.0, 0.0, 1.0]);
        let d = DiffusionSpec::new(0.5, RhoSpec::Neutral, StoppingRule::NonStrict).unwrap();
        let grid = uniform_grid(21);
        let sup = |r: f64| {
            grid.iter()
                .map(|&x| {
                    let a = discrete_generator(
                        &f,
                        x,
                        &RhoSpec::Neutral,
                        params(0.5, r),
                        StoppingRule::NonStrict,
                        Method::ExactDp,
                        0,
                        0,
                    )
                    .unwrap();
                    (a.value - generator_limit(&f, x, &d)).abs()
                })
                .fold(0.0, f64::max)
        };
        let s: Vec<f64> = [20.0, 40.0, 80.0].iter().map(|&r| sup(r)).collect();
        assert!(s[0] > s[1] && s[1] > s[2], "{s:?}");
    }

    #[test]
    fn taylor_consistency() {
        let fns: Vec<Box<dyn SmoothFn>> = vec![
            Box::new(Exponential(2.0)),
            Box::new(Exponential(-3.0)),
            Box::new(Polynomial(vec![0.1, -1.0, 2.0, -4.0, 3.0, 1.0])),
        ];
        for f in &fns {
            for (theta, r) in [(0.5, 5.0), (0.3, 20.0)] {
                for rule in [StoppingRule::NonStrict, StoppingRule::Strict] {
                    for k in 0..=10 {
                        let x = k as f64 / 10.0;
                        let prm = params(theta, r);
                        let direct =
                            discrete_generator(f.as_ref(), x, &RhoSpec::Neutral, prm, rule, Method::ExactDp, 0, 0)
                                .unwrap()
                                .value;
                        let (taylor, bound) = taylor_generator(f.as_ref(), x, &RhoSpec::Neutral, prm, rule).unwrap();
                        assert!(
                            (direct - taylor).abs() <= bound + 1e-12,
                            "{x} {r} {rule:?}: {direct} {taylor} {bound}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn scan_shapes() {
        let grid = uniform_grid(5);
        let rep =
            moment_scan(&grid, 2, &RhoSpec::Neutral, params(0.5, 10.0), StoppingRule::Strict, Method::ExactDp, 0, 0)
                .unwrap();
        assert_eq!(rep.rows.len(), 5);
        assert!(rep.rows.iter().all(|r| r.std_err == 0.0 && r.order == 2));
        assert!((rep.rows[2].theory - 0.25 * 0.75).abs() < 1e-15);
    }
}

//! Long-term behavior of the limiting diffusion: scale function, extinction
//! probability, mean absorption time and stationary density.
//!
//! With `c = 1 - theta` and no mutation, `rho(x) = s(x) x(1 - x)` and
//! `2 d / sigma^2 = 2(s(z) - c) / (1 - cz)` (non-strict) or `2 s(z) / (1 - cz)`
//! (strict). The `c` part integrates to a power of `(1 - cz)`.

pub mod quad;

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{RhoSpec, Theta};
use crate::renewal::StoppingRule;
use quad::{integrate, Quadrature};

/// Default absolute tolerance for adaptive quadrature.
pub const DEFAULT_TOL: f64 = 1e-8;

/// Below this `|c e|` the scale integral takes its logarithmic form.
const LOG_BRANCH: f64 = 1e-10;

fn check_theta(theta: f64) -> Result<f64> {
    Theta::real(theta)?;
    Ok(1.0 - theta)
}

fn check_x(x: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::InvalidParams(format!("x = {x} is outside [0,1]")));
    }
    Ok(())
}

/// Exponent of `(1 - cy)` in `S'(y)` for constant selection `s`.
fn scale_exponent(c: f64, s: f64, variant: StoppingRule) -> f64 {
    let base = match variant {
        StoppingRule::NonStrict => -2.0,
        StoppingRule::Strict => 0.0,
    };
    base + 2.0 * s / c
}

/// `P_x(T_0 < T_1)` for constant selection `s` and no mutation.
pub fn extinction_prob(x: f64, theta: f64, s: f64, variant: StoppingRule) -> Result<f64> {
    check_x(x)?;
    let c = check_theta(theta)?;
    let e = scale_exponent(c, s, variant) + 1.0;
    let ln_theta = theta.ln();
    let ln_x = (-c * x).ln_1p();
    let p = if (c * e).abs() < LOG_BRANCH {
        (ln_theta - ln_x) / ln_theta
    } else if e > 0.0 {
        ((e * ln_theta).exp_m1() - (e * ln_x).exp_m1()) / (e * ln_theta).exp_m1()
    } else {
        // scaled by theta^{-e} so no power overflows
        (e * (ln_x - ln_theta)).exp_m1() / (-e * ln_theta).exp_m1()
    };
    Ok(p.clamp(0.0, 1.0))
}

/// Extinction probability under genic selection for the non-strict model.
pub fn extinction_prob_genic(x: f64, theta: f64, s: f64) -> Result<f64> {
    extinction_prob(x, theta, s, StoppingRule::NonStrict)
}

/// `E_x[T_0 ^ T_1]` for the neutral non-strict diffusion:
/// `-2 (x ln x + (1 - x) ln(1 - x)) / (1 - (1 - theta) x)`.
pub fn mean_absorption_neutral(x: f64, theta: f64) -> Result<f64> {
    check_x(x)?;
    let c = check_theta(theta)?;
    if x == 0.0 || x == 1.0 {
        return Ok(0.0);
    }
    let ent = x * x.ln() + (1.0 - x) * (-x).ln_1p();
    Ok(-2.0 * ent / (1.0 - c * x))
}

/// Selection coefficient in `rho(x) = s(x) x(1 - x)`.
#[derive(Clone)]
pub enum Selection {
    Constant(f64),
    /// Evaluated only on `(0,1)`.
    Function(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for Selection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Selection::Constant(s) => write!(f, "Constant({s})"),
            Selection::Function(_) => write!(f, "Function(..)"),
        }
    }
}

/// Scale function `S(x) = int_{x0_ref}^x exp(-int_eta^y 2 d / sigma^2) dy`.
#[derive(Debug, Clone)]
pub struct ScaleSpec {
    pub theta: f64,
    pub selection: Selection,
    pub variant: StoppingRule,
    pub x0_ref: f64,
    pub eta: f64,
    /// Tolerance for the numeric path.
    pub tol: f64,
}

impl ScaleSpec {
    pub fn genic(theta: f64, s: f64, variant: StoppingRule) -> Result<Self> {
        check_theta(theta)?;
        Ok(ScaleSpec { theta, selection: Selection::Constant(s), variant, x0_ref: 0.5, eta: 0.5, tol: DEFAULT_TOL })
    }

    pub fn with_selection<F>(theta: f64, s: F, variant: StoppingRule) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        check_theta(theta)?;
        Ok(ScaleSpec {
            theta,
            selection: Selection::Function(Arc::new(s)),
            variant,
            x0_ref: 0.5,
            eta: 0.5,
            tol: DEFAULT_TOL,
        })
    }

    /// Scale spec of a mutation-free `rho`; genic and neutral families keep closed forms.
    pub fn from_rho(theta: f64, rho: &RhoSpec, variant: StoppingRule) -> Result<Self> {
        rho.validate()?;
        let (rho0, rho1) = (rho.rho_limit(0.0), rho.rho_limit(1.0));
        if rho0 != 0.0 || rho1 != 0.0 {
            return Err(Error::NonAbsorbing { rho0, rho1 });
        }
        match rho {
            RhoSpec::Neutral => Self::genic(theta, 0.0, variant),
            RhoSpec::GenicSelection { s } => Self::genic(theta, *s, variant),
            other => {
                let owned = other.clone();
                Self::with_selection(theta, move |x| owned.rho_limit(x) / (x * (1.0 - x)), variant)
            }
        }
    }

    pub fn with_reference(mut self, x0_ref: f64, eta: f64) -> Result<Self> {
        if !(0.0 < eta && eta < 1.0) || !(0.0..=1.0).contains(&x0_ref) {
            return Err(Error::InvalidParams(format!("reference points x0 = {x0_ref}, eta = {eta} must lie in (0,1)")));
        }
        self.x0_ref = x0_ref;
        self.eta = eta;
        Ok(self)
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    fn c(&self) -> f64 {
        1.0 - self.theta
    }

    /// `-int_eta^y 2 s(z) / (1 - cz) dz` by quadrature.
    fn selection_log_factor(&self, s: &(dyn Fn(f64) -> f64 + Send + Sync), y: f64) -> Result<f64> {
        let c = self.c();
        let inner = integrate(|z| 2.0 * s(z) / (1.0 - c * z), self.eta, y, self.tol * 1e-2)?;
        Ok(-inner.value)
    }

    /// `S'(y)`.
    pub fn derivative(&self, y: f64) -> Result<f64> {
        check_x(y)?;
        let c = self.c();
        match &self.selection {
            Selection::Constant(s) => {
                let a = scale_exponent(c, *s, self.variant);
                Ok(((1.0 - c * y) / (1.0 - c * self.eta)).powf(a))
            }
            Selection::Function(s) => {
                let power = match self.variant {
                    StoppingRule::NonStrict => ((1.0 - c * y) / (1.0 - c * self.eta)).powi(-2),
                    StoppingRule::Strict => 1.0,
                };
                let v = power * self.selection_log_factor(s.as_ref(), y)?.exp();
                if !v.is_finite() {
                    return Err(Error::SingularEndpoint { x: y });
                }
                Ok(v)
            }
        }
    }

    /// `S(b) - S(a)`, closed form where available.
    pub fn increment(&self, a: f64, b: f64) -> Result<f64> {
        check_x(a)?;
        check_x(b)?;
        match self.selection {
            Selection::Constant(s) => Ok(self.closed_increment(s, a, b)),
            Selection::Function(_) => self.increment_numeric(a, b),
        }
    }

    /// `S(b) - S(a)` by quadrature of `S'`.
    pub fn increment_numeric(&self, a: f64, b: f64) -> Result<f64> {
        Ok(integrate_fallible(|y| self.derivative(y), a, b, self.tol)?.value)
    }

    fn closed_increment(&self, s: f64, a: f64, b: f64) -> f64 {
        let c = self.c();
        let big_a = scale_exponent(c, s, self.variant);
        let e = big_a + 1.0;
        let norm = -big_a * (-c * self.eta).ln_1p();
        let (la, lb) = ((-c * a).ln_1p(), (-c * b).ln_1p());
        if (c * e).abs() < LOG_BRANCH {
            norm.exp() * (la - lb) / c
        } else {
            // K (1 - ca)^e (1 - ((1 - cb)/(1 - ca))^e) / (c e)
            -(norm + e * la).exp() * (e * (lb - la)).exp_m1() / (c * e)
        }
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        self.increment(self.x0_ref, x)
    }

    /// `(S(1) - S(x)) / (S(1) - S(0))`.
    pub fn hitting_zero_first(&self, x: f64) -> Result<f64> {
        Ok(self.increment(x, 1.0)? / self.increment(0.0, 1.0)?)
    }

    fn sigma_sq(&self, y: f64) -> f64 {
        y * (1.0 - y) * (1.0 - self.c() * y)
    }
}

/// Scale function value `S(x)` with `S(x0_ref) = 0`.
pub fn scale_function(x: f64, spec: &ScaleSpec, tol: f64) -> Result<f64> {
    spec.clone().with_tol(tol).eval(x)
}

/// Runs a quadrature whose integrand can fail; the first failure wins.
fn integrate_fallible<F: Fn(f64) -> Result<f64>>(f: F, a: f64, b: f64, tol: f64) -> Result<Quadrature> {
    let failure = RefCell::new(None);
    let q = integrate(
        |y| match f(y) {
            Ok(v) => v,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                f64::NAN
            }
        },
        a,
        b,
        tol,
    );
    match failure.into_inner() {
        Some(e) => Err(e),
        None => q,
    }
}

/// `int_0^1 G(x, y) dy` with the Green's function of the scale `spec`:
/// `G = 2 (S(1) - S(x)) (S(y) - S(0)) / ((S(1) - S(0)) sigma^2(y) S'(y))` for `y <= x`,
/// symmetric for `y >= x`.
pub fn mean_absorption(spec: &ScaleSpec, x: f64, tol: f64) -> Result<Quadrature> {
    check_x(x)?;
    if x == 0.0 || x == 1.0 {
        return Ok(Quadrature { value: 0.0, error: 0.0, intervals: 0 });
    }
    let total = spec.increment(0.0, 1.0)?;
    let up = spec.increment(x, 1.0)?;
    let down = spec.increment(0.0, x)?;
    let speed = |y: f64| -> Result<f64> { Ok(spec.sigma_sq(y) * spec.derivative(y)?) };
    let below = integrate_fallible(|y| Ok(2.0 * up / total * spec.increment(0.0, y)? / speed(y)?), 0.0, x, tol / 2.0)?;
    let above =
        integrate_fallible(|y| Ok(2.0 * down / total * spec.increment(y, 1.0)? / speed(y)?), x, 1.0, tol / 2.0)?;
    Ok(Quadrature {
        value: below.value + above.value,
        error: below.error + above.error,
        intervals: below.intervals + above.intervals,
    })
}

/// Mean absorption time under constant selection `s` by Green's-function quadrature.
pub fn mean_absorption_numeric(x: f64, theta: f64, s: f64, variant: StoppingRule, tol: f64) -> Result<f64> {
    let spec = ScaleSpec::genic(theta, s, variant)?;
    Ok(mean_absorption(&spec, x, tol)?.value)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalyticsKind {
    Extinction,
    AbsorptionTime,
    StationaryDensity,
    Scale,
}

/// Values of one analytic quantity on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticsResult {
    pub kind: AnalyticsKind,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    /// Parameters and quadrature diagnostics.
    pub meta: BTreeMap<String, f64>,
}

/// Normalized stationary density of the diffusion with mutation:
/// `x^{2 beta0 - 1} (1 - x)^{2 beta1 / theta - 1} (1 - cx)^{g} / C`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationaryDensity {
    pub theta: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub s: f64,
    pub variant: StoppingRule,
    /// Normalizing constant `C`.
    pub norm: f64,
    pub quad_error: f64,
    pub intervals: usize,
}

impl StationaryDensity {
    pub fn new(theta: f64, beta0: f64, beta1: f64, s: f64, variant: StoppingRule, tol: f64) -> Result<Self> {
        check_theta(theta)?;
        if !(beta0 > 0.0 && beta1 > 0.0) {
            return Err(Error::NonIntegrable { beta0, beta1 });
        }
        let mut d = StationaryDensity { theta, beta0, beta1, s, variant, norm: 1.0, quad_error: 0.0, intervals: 0 };
        let q = d.mass_unnormalized(0.0, 1.0, 0.5, tol)?;
        d.norm = q.value;
        d.quad_error = q.error;
        d.intervals = q.intervals;
        Ok(d)
    }

    fn exponents(&self) -> (f64, f64, f64) {
        let c = 1.0 - self.theta;
        let a = 2.0 * self.beta0;
        let b = 2.0 * self.beta1 / self.theta;
        let g = match self.variant {
            StoppingRule::NonStrict => 1.0,
            StoppingRule::Strict => -1.0,
        } - a
            - b
            - 2.0 * self.s / c;
        (a, b, g)
    }

    fn tilt(&self, x: f64) -> f64 {
        let g = self.exponents().2;
        (1.0 - (1.0 - self.theta) * x).powf(g)
    }

    /// Unnormalized density `m(x)`.
    pub fn unnormalized(&self, x: f64) -> f64 {
        let (a, b, _) = self.exponents();
        let left = power_at(x, a - 1.0);
        let right = power_at(1.0 - x, b - 1.0);
        left * right * self.tilt(x)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.unnormalized(x) / self.norm
    }

    /// `int_lo^hi m`, splitting at `split`; the endpoint powers are removed by
    /// `u = x^{2 beta0}` on the left and `v = (1 - x)^{2 beta1 / theta}` on the right.
    fn mass_unnormalized(&self, lo: f64, hi: f64, split: f64, tol: f64) -> Result<Quadrature> {
        let (a, b, _) = self.exponents();
        let mid = split.clamp(lo, hi);
        // left: x^{a-1} dx = du / a, x = u^{1/a}
        let left = integrate(
            |u: f64| {
                let x = u.powf(1.0 / a);
                (1.0 - x).powf(b - 1.0) * self.tilt(x) / a
            },
            lo.powf(a),
            mid.powf(a),
            tol / 2.0,
        )?;
        // right: (1-x)^{b-1} dx = -dv / b, x = 1 - v^{1/b}
        let right = integrate(
            |v: f64| {
                let x = 1.0 - v.powf(1.0 / b);
                x.powf(a - 1.0) * self.tilt(x) / b
            },
            (1.0 - hi).powf(b),
            (1.0 - mid).powf(b),
            tol / 2.0,
        )?;
        Ok(Quadrature {
            value: left.value + right.value,
            error: left.error + right.error,
            intervals: left.intervals + right.intervals,
        })
    }

    /// Probability of `[lo, hi]`.
    pub fn probability(&self, lo: f64, hi: f64, tol: f64) -> Result<f64> {
        Ok(self.mass_unnormalized(lo, hi, 0.5, tol * self.norm)?.value / self.norm)
    }

    /// Total mass recomputed with a different split point.
    pub fn total_mass_split(&self, split: f64, tol: f64) -> Result<f64> {
        Ok(self.mass_unnormalized(0.0, 1.0, split, tol * self.norm)?.value / self.norm)
    }
}

/// `t^p` with the conventions `0^0 = 1` and `0^{p<0} = inf`.
fn power_at(t: f64, p: f64) -> f64 {
    if t == 0.0 {
        match p.partial_cmp(&0.0) {
            Some(std::cmp::Ordering::Less) => f64::INFINITY,
            Some(std::cmp::Ordering::Equal) => 1.0,
            _ => 0.0,
        }
    } else {
        t.powf(p)
    }
}

pub fn stationary_density(
    x_grid: &[f64],
    theta: f64,
    beta0: f64,
    beta1: f64,
    s: f64,
    variant: StoppingRule,
    tol: f64,
) -> Result<AnalyticsResult> {
    for &x in x_grid {
        check_x(x)?;
    }
    let d = StationaryDensity::new(theta, beta0, beta1, s, variant, tol)?;
    let meta = BTreeMap::from([
        ("theta".to_string(), theta),
        ("beta0".to_string(), beta0),
        ("beta1".to_string(), beta1),
        ("s".to_string(), s),
        ("norm".to_string(), d.norm),
        ("quad_error".to_string(), d.quad_error),
        ("intervals".to_string(), d.intervals as f64),
    ]);
    Ok(AnalyticsResult {
        kind: AnalyticsKind::StationaryDensity,
        grid: x_grid.to_vec(),
        values: x_grid.iter().map(|&x| d.pdf(x)).collect(),
        meta,
    })
}

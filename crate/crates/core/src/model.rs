//! Model parameters, the sampling-probability families `rho_R` / `rho`, their
//! selection/mutation decompositions, and the increment law of one offspring.
//!
//! A small offspring costs `theta` resource units, a large one costs 1. The
//! probability that a sampled parent places a small offspring in the next
//! generation, given the current small-type frequency `x`, is `rho_R(x)`.
//! `rho` is the limit of `R (rho_R(x) - x)` and enters the drift of the
//! diffusion approximation.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Slack allowed when a computed probability lands a hair outside [0,1].
const RANGE_SLACK: f64 = 1e-12;

/// Default truncation for fittest-type-wins weights.
pub const DEFAULT_MAX_TERMS: usize = 64;

/// Grid used to check the boundary sandwich of a black-box `rho_R`.
pub const SANDWICH_GRID: usize = 1001;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Size of a small offspring, in units of a large one.
///
/// Rational sizes put the renewal walk on an integer lattice, which makes
/// exact boundary hits (`S_n == R`) decidable without rounding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Theta {
    Rational { num: u64, den: u64 },
    Real(f64),
}

impl Theta {
    pub fn rational(num: u64, den: u64) -> Result<Self> {
        if num == 0 || num >= den {
            return Err(Error::InvalidParams(format!("theta = {num}/{den} must lie strictly between 0 and 1")));
        }
        let g = gcd(num, den);
        Ok(Theta::Rational { num: num / g, den: den / g })
    }

    /// Forces floating-point crossing comparisons.
    pub fn real(value: f64) -> Result<Self> {
        if !(value > 0.0 && value < 1.0) {
            return Err(Error::InvalidParams(format!("theta = {value} must lie strictly between 0 and 1")));
        }
        Ok(Theta::Real(value))
    }

    /// Interprets `value` through its shortest decimal representation: up to
    /// nine fractional digits it becomes an exact rational (0.3 -> 3/10),
    /// anything longer (1/sqrt 2, say) stays real.
    pub fn from_f64(value: f64) -> Result<Self> {
        Theta::real(value)?;
        let repr = format!("{value}");
        if let Some((int, frac)) = repr.split_once('.') {
            if int == "0" && frac.len() <= 9 && frac.bytes().all(|b| b.is_ascii_digit()) {
                let den = 10u64.pow(frac.len() as u32);
                let num: u64 = frac.parse().expect("digits");
                return Theta::rational(num, den);
            }
        }
        Ok(Theta::Real(value))
    }

    pub fn value(&self) -> f64 {
        match *self {
            Theta::Rational { num, den } => num as f64 / den as f64,
            Theta::Real(v) => v,
        }
    }
}

impl fmt::Display for Theta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Theta::Rational { num, den } => write!(f, "{num}/{den}"),
            Theta::Real(v) => write!(f, "{v}"),
        }
    }
}

impl std::str::FromStr for Theta {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some((a, b)) = s.split_once('/') {
            let parse = |t: &str| {
                t.trim().parse::<u64>().map_err(|_| Error::InvalidParams(format!("bad rational theta '{s}'")))
            };
            return Theta::rational(parse(a)?, parse(b)?);
        }
        let v: f64 = s.parse().map_err(|_| Error::InvalidParams(format!("bad theta '{s}'")))?;
        Theta::from_f64(v)
    }
}

impl Serialize for Theta {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Theta::Rational { .. } => serializer.serialize_str(&self.to_string()),
            Theta::Real(v) => serializer.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Theta {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        let parsed = match Raw::deserialize(deserializer)? {
            Raw::Num(v) => Theta::from_f64(v),
            Raw::Text(s) => s.parse(),
        };
        parsed.map_err(serde::de::Error::custom)
    }
}

/// Size parameter and resource level of one model instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeParams {
    pub theta: Theta,
    pub resources: f64,
}

impl SizeParams {
    pub fn new(theta: f64, resources: f64) -> Result<Self> {
        Self::with_theta(Theta::from_f64(theta)?, resources)
    }

    pub fn with_theta(theta: Theta, resources: f64) -> Result<Self> {
        if !(resources > 0.0 && resources.is_finite()) {
            return Err(Error::InvalidParams(format!("resource level R = {resources} must be positive and finite")));
        }
        Ok(SizeParams { theta, resources })
    }

    pub fn theta(&self) -> f64 {
        self.theta.value()
    }
}

/// Mean increment `mu(p) = 1 - (1 - theta) p`.
pub fn mu(p: f64, theta: f64) -> f64 {
    1.0 - (1.0 - theta) * p
}

/// Increment variance `(1 - theta)^2 p (1 - p)`.
pub fn var_xi(p: f64, theta: f64) -> f64 {
    let c = 1.0 - theta;
    c * c * p * (1.0 - p)
}

/// Two-point law `F_p = p delta_theta + (1 - p) delta_1` of one renewal increment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IncrementLaw {
    pub p: f64,
    pub theta: f64,
}

impl IncrementLaw {
    pub fn new(p: f64, theta: f64) -> Self {
        IncrementLaw { p, theta }
    }

    pub fn mean(&self) -> f64 {
        mu(self.p, self.theta)
    }

    pub fn variance(&self) -> f64 {
        var_xi(self.p, self.theta)
    }

    pub fn second_moment(&self) -> f64 {
        1.0 - self.p * (1.0 - self.theta) * (1.0 + self.theta)
    }

    /// Mean of the size-biased law, `E[xi^2] / mu(p)`.
    pub fn size_biased_mean(&self) -> f64 {
        self.second_moment() / self.mean()
    }
}

/// Piecewise-linear table on a sorted grid of `(x, y)` pairs.
fn interpolate(table: &[[f64; 2]], x: f64) -> f64 {
    debug_assert!(!table.is_empty());
    let idx = table.partition_point(|pt| pt[0] < x);
    if idx == 0 {
        return table[0][1];
    }
    if idx == table.len() {
        return table[table.len() - 1][1];
    }
    let [x0, y0] = table[idx - 1];
    let [x1, y1] = table[idx];
    if x1 == x0 {
        return y1;
    }
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Sampling-probability family: selection and mutation as they act on the
/// probability of placing a small offspring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RhoSpec {
    /// `rho_R(x) = x`, `rho = 0`.
    Neutral,
    /// Genic selection, favoring small individuals for `s > 0` and large ones for `s < 0`.
    GenicSelection {
        s: f64,
    },
    /// Fittest-type-wins selection with potential-parent weights `s_k`, `k >= 1`.
    FittestTypeWins {
        weights: Vec<f64>,
        #[serde(default = "default_max_terms")]
        max_terms: usize,
    },
    Diploid {
        s: f64,
        h: f64,
    },
    /// Parent-independent mutation with rates `beta_i / R`.
    ParentIndependentMutation {
        beta0: f64,
        beta1: f64,
    },
    /// Genic selection followed by parent-independent mutation.
    GenicMutation {
        s: f64,
        beta0: f64,
        beta1: f64,
    },
    /// User tables for `rho_R` and `rho`, linearly interpolated.
    CustomTable {
        finite: Vec<[f64; 2]>,
        limit: Vec<[f64; 2]>,
    },
}

fn default_max_terms() -> usize {
    DEFAULT_MAX_TERMS
}

/// Selection function and mutation probabilities generating a `rho_R` via
/// `rho_R(x) = s_R(x)(1 - beta1_R) + (1 - s_R(x)) beta0_R`.
#[derive(Debug, Clone, Copy)]
pub struct Mechanism<'a> {
    spec: &'a RhoSpec,
    params: SizeParams,
    pub beta0: f64,
    pub beta1: f64,
}

impl Mechanism<'_> {
    /// Probability that the sampled parent is small.
    pub fn selection(&self, x: f64) -> f64 {
        let r = self.params.resources;
        match self.spec {
            RhoSpec::Neutral | RhoSpec::ParentIndependentMutation { .. } => x,
            RhoSpec::GenicSelection { s } | RhoSpec::GenicMutation { s, .. } => genic_selection(*s, r, x),
            RhoSpec::FittestTypeWins { weights, max_terms } => fittest_selection(weights, *max_terms, r, x),
            RhoSpec::Diploid { s, h } => diploid_selection(*s, *h, r, x),
            RhoSpec::CustomTable { finite, .. } => {
                let lo = interpolate(finite, 0.0);
                let hi = interpolate(finite, 1.0);
                if lo == hi {
                    x
                } else {
                    (interpolate(finite, x) - lo) / (hi - lo)
                }
            }
        }
    }
}

fn genic_selection(s: f64, r: f64, x: f64) -> f64 {
    let a = s / r;
    (1.0 + a) * x / (1.0 + a * x)
}

fn diploid_selection(s: f64, h: f64, r: f64, x: f64) -> f64 {
    x + 2.0 * s / r * x * (1.0 - x) * ((1.0 - 2.0 * h) * x + h)
}

fn truncated_total(weights: &[f64], max_terms: usize) -> f64 {
    weights.iter().take(max_terms).sum()
}

/// `1 - E[(1 - x)^G]` with `P(G = 1) = 1 - 1/R`, `P(G = k) = s_{k-1} / R`.
fn fittest_selection(weights: &[f64], max_terms: usize, r: f64, x: f64) -> f64 {
    let total = truncated_total(weights, max_terms);
    let y = 1.0 - x;
    let mut pow = y; // (1-x)^k, k starts at 1
    let mut tail = 0.0;
    for w in weights.iter().take(max_terms) {
        pow *= y;
        tail += w / total * pow;
    }
    1.0 - ((1.0 - 1.0 / r) * y + tail / r)
}

impl RhoSpec {
    pub fn neutral() -> Self {
        RhoSpec::Neutral
    }

    pub fn genic(s: f64) -> Self {
        RhoSpec::GenicSelection { s }
    }

    pub fn mutation(beta0: f64, beta1: f64) -> Self {
        RhoSpec::ParentIndependentMutation { beta0, beta1 }
    }

    /// Geometric weights `s_k = (1 - q) q^{k-1}`.
    pub fn fittest_geometric(q: f64, max_terms: usize) -> Self {
        let weights = (0..max_terms).map(|k| (1.0 - q) * q.powi(k as i32)).collect();
        RhoSpec::FittestTypeWins { weights, max_terms }
    }

    /// Parameter checks that do not depend on `R`.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        match self {
            RhoSpec::Neutral | RhoSpec::GenicSelection { .. } => Ok(()),
            RhoSpec::FittestTypeWins { weights, max_terms } => {
                if *max_terms == 0 || weights.iter().any(|w| !(*w >= 0.0)) {
                    return bad("fittest-type-wins weights must be nonnegative".into());
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return bad(format!("fittest-type-wins weights sum to {total}, not 1"));
                }
                if truncated_total(weights, *max_terms) <= 0.0 {
                    return bad("truncated fittest-type-wins weights vanish".into());
                }
                Ok(())
            }
            RhoSpec::Diploid { s, h } => {
                if *s < 0.0 || *h < 0.0 {
                    return bad(format!("diploid selection needs s, h >= 0 (got {s}, {h})"));
                }
                Ok(())
            }
            RhoSpec::ParentIndependentMutation { beta0, beta1 } | RhoSpec::GenicMutation { beta0, beta1, .. } => {
                if *beta0 < 0.0 || *beta1 < 0.0 {
                    return bad(format!("mutation rates must be >= 0 (got {beta0}, {beta1})"));
                }
                Ok(())
            }
            RhoSpec::CustomTable { finite, limit } => {
                for (name, table) in [("finite", finite), ("limit", limit)] {
                    if table.len() < 2 {
                        return bad(format!("{name} table needs at least two points"));
                    }
                    if table.windows(2).any(|w| !(w[0][0] < w[1][0])) {
                        return bad(format!("{name} table grid must be strictly increasing"));
                    }
                    if table[0][0] > 0.0 || table[table.len() - 1][0] < 1.0 {
                        return bad(format!("{name} table must cover [0,1]"));
                    }
                }
                if finite.iter().any(|pt| !(0.0..=1.0).contains(&pt[1])) {
                    return bad("finite table values must lie in [0,1]".into());
                }
                Ok(())
            }
        }
    }

    /// Selection/mutation mechanism behind `rho_R` at resource level `params.resources`.
    pub fn mechanism(&self, params: SizeParams) -> Mechanism<'_> {
        let r = params.resources;
        let (beta0, beta1) = match self {
            RhoSpec::ParentIndependentMutation { beta0, beta1 } | RhoSpec::GenicMutation { beta0, beta1, .. } => {
                (beta0 / r, beta1 / r)
            }
            RhoSpec::CustomTable { finite, .. } => (interpolate(finite, 0.0), 1.0 - interpolate(finite, 1.0)),
            _ => (0.0, 0.0),
        };
        Mechanism { spec: self, params, beta0, beta1 }
    }

    /// Whether the finite model can leave the boundary point `x` (0 or 1).
    pub fn boundary_is_absorbing(&self, x: f64) -> bool {
        let v = self.rho_limit(x);
        v == 0.0
    }
}

/// `rho_R(x)` for the given family at resource level `params.resources`.
pub fn rho_finite(spec: &RhoSpec, params: SizeParams, x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::InvalidParams(format!("frequency x = {x} is outside [0,1]")));
    }
    let r = params.resources;
    let value = match spec {
        RhoSpec::Neutral => x,
        RhoSpec::GenicSelection { s } => {
            if s.abs() / r >= 1.0 {
                return Err(Error::OutOfRange { x, value: f64::NAN });
            }
            genic_selection(*s, r, x)
        }
        RhoSpec::FittestTypeWins { weights, max_terms } => {
            if r < 1.0 {
                return Err(Error::InvalidParams(format!("fittest-type-wins needs R >= 1 (got {r})")));
            }
            fittest_selection(weights, *max_terms, r, x)
        }
        RhoSpec::Diploid { s, h } => diploid_selection(*s, *h, r, x),
        RhoSpec::ParentIndependentMutation { beta0, beta1 } => x * (1.0 - beta1 / r) + (1.0 - x) * beta0 / r,
        RhoSpec::GenicMutation { s, beta0, beta1 } => {
            if s.abs() / r >= 1.0 {
                return Err(Error::OutOfRange { x, value: f64::NAN });
            }
            let sel = genic_selection(*s, r, x);
            sel * (1.0 - beta1 / r) + (1.0 - sel) * beta0 / r
        }
        RhoSpec::CustomTable { finite, .. } => interpolate(finite, x),
    };
    if !(-RANGE_SLACK..=1.0 + RANGE_SLACK).contains(&value) {
        return Err(Error::OutOfRange { x, value });
    }
    Ok(value.clamp(0.0, 1.0))
}

/// The limit `rho(x) = lim R (rho_R(x) - x)`.
pub fn rho_limit(spec: &RhoSpec, x: f64) -> f64 {
    let y = 1.0 - x;
    match spec {
        RhoSpec::Neutral => 0.0,
        RhoSpec::GenicSelection { s } => s * x * y,
        RhoSpec::FittestTypeWins { weights, max_terms } => {
            // R (s_R(x) - x) = (1 - x) sum_j s_j (1 - (1 - x)^j), exactly.
            let total = truncated_total(weights, *max_terms);
            let mut pow = 1.0;
            let mut acc = 0.0;
            for w in weights.iter().take(*max_terms) {
                pow *= y;
                acc += w / total * (1.0 - pow);
            }
            y * acc
        }
        RhoSpec::Diploid { s, h } => 2.0 * s * x * y * ((1.0 - 2.0 * h) * x + h),
        RhoSpec::ParentIndependentMutation { beta0, beta1 } => beta0 * y - beta1 * x,
        RhoSpec::GenicMutation { s, beta0, beta1 } => s * x * y + beta0 * y - beta1 * x,
        RhoSpec::CustomTable { limit, .. } => interpolate(limit, x),
    }
}

impl RhoSpec {
    pub fn rho_limit(&self, x: f64) -> f64 {
        rho_limit(self, x)
    }

    pub fn rho_finite(&self, params: SizeParams, x: f64) -> Result<f64> {
        rho_finite(self, params, x)
    }
}

/// Selection/mutation reading of a black-box `rho_R`.
#[derive(Debug, Clone)]
pub struct FiniteDecomposition<F> {
    rho_r: F,
    pub beta0: f64,
    pub beta1: f64,
    /// `rho_R(0) == rho_R(1)`: the selection function is arbitrary and
    /// reported as the identity.
    pub degenerate: bool,
}

impl<F: Fn(f64) -> f64> FiniteDecomposition<F> {
    pub fn selection(&self, x: f64) -> f64 {
        if self.degenerate {
            return x;
        }
        let lo = self.beta0;
        let hi = 1.0 - self.beta1;
        ((self.rho_r)(x) - lo) / (hi - lo)
    }

    /// `s_R(x)(1 - beta1) + (1 - s_R(x)) beta0`.
    pub fn recompose(&self, x: f64) -> f64 {
        let s = self.selection(x);
        s * (1.0 - self.beta1) + (1.0 - s) * self.beta0
    }
}

/// Writes `rho_R` as selection followed by mutation; requires `rho_R` to
/// attain its extremes at the boundary (checked on a 1001-point grid).
pub fn decompose_rho_finite<F: Fn(f64) -> f64>(rho_r: F) -> Result<FiniteDecomposition<F>> {
    let r0 = rho_r(0.0);
    let r1 = rho_r(1.0);
    let (lo, hi) = (r0.min(r1), r0.max(r1));
    for i in 0..SANDWICH_GRID {
        let x = i as f64 / (SANDWICH_GRID - 1) as f64;
        let v = rho_r(x);
        if v < lo - RANGE_SLACK || v > hi + RANGE_SLACK {
            return Err(Error::BoundaryViolation { x });
        }
    }
    Ok(FiniteDecomposition { rho_r, beta0: r0, beta1: 1.0 - r1, degenerate: r0 == r1 })
}

/// `rho = sigma + beta0 (1 - x) - beta1 x` with `sigma(0) = sigma(1) = 0`.
#[derive(Debug, Clone)]
pub struct LimitDecomposition<F> {
    rho: F,
    pub beta0: f64,
    pub beta1: f64,
    /// Largest difference quotient of `rho` on the check grid.
    pub lipschitz_estimate: f64,
}

impl<F: Fn(f64) -> f64> LimitDecomposition<F> {
    pub fn sigma(&self, x: f64) -> f64 {
        (self.rho)(x) - self.beta0 * (1.0 - x) + self.beta1 * x
    }
}

pub fn decompose_rho_limit<F: Fn(f64) -> f64>(rho: F, lipschitz_grid: usize) -> Result<LimitDecomposition<F>> {
    let rho0 = rho(0.0);
    let rho1 = rho(1.0);
    if rho0 < 0.0 || rho1 > 0.0 {
        return Err(Error::BoundarySign { rho0, rho1 });
    }
    let n = lipschitz_grid.max(2);
    let mut lip: f64 = 0.0;
    let mut prev = rho0;
    for i in 1..n {
        let x = i as f64 / (n - 1) as f64;
        let v = rho(x);
        lip = lip.max((v - prev).abs() * (n - 1) as f64);
        prev = v;
    }
    Ok(LimitDecomposition { rho, beta0: rho0, beta1: -rho1, lipschitz_estimate: lip })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(theta: f64, r: f64) -> SizeParams {
        SizeParams::new(theta, r).unwrap()
    }

    #[test]
    fn theta_parsing() {
        assert_eq!(Theta::from_f64(0.3).unwrap(), Theta::Rational { num: 3, den: 10 });
        assert_eq!(Theta::from_f64(0.5).unwrap(), Theta::Rational { num: 1, den: 2 });
        let irr = std::f64::consts::FRAC_1_SQRT_2;
        assert_eq!(Theta::from_f64(irr).unwrap(), Theta::Real(irr));
        assert_eq!("2/6".parse::<Theta>().unwrap(), Theta::Rational { num: 1, den: 3 });
        assert!("3/3".parse::<Theta>().is_err());
        assert!(Theta::from_f64(1.0).is_err());
        assert!(SizeParams::new(0.5, 0.0).is_err());
    }

    #[test]
    fn theta_serde() {
        let t: Theta = serde_json::from_str("\"1/3\"").unwrap();
        assert_eq!(t, Theta::Rational { num: 1, den: 3 });
        let t: Theta = serde_json::from_str("0.25").unwrap();
        assert_eq!(t, Theta::Rational { num: 1, den: 4 });
        assert_eq!(serde_json::to_string(&t).unwrap(), "\"1/4\"");
        let spec: RhoSpec = serde_json::from_str(r#"{"kind":"genic_selection","s":1.5}"#).unwrap();
        assert_eq!(spec, RhoSpec::genic(1.5));
    }

    #[test]
    fn rho_finite_examples() {
        let p = params(0.5, 10.0);
        assert_eq!(rho_finite(&RhoSpec::Neutral, p, 0.37).unwrap(), 0.37);
        let m = RhoSpec::mutation(1.0, 1.0);
        assert!((rho_finite(&m, p, 0.0).unwrap() - 0.1).abs() < 1e-15);
        let g = RhoSpec::genic(1.0);
        let v = rho_finite(&g, params(0.5, 100.0), 0.5).unwrap();
        assert!((v - 1.01 * 0.5 / 1.005).abs() < 1e-15);
        assert!((v - 0.502_487_56).abs() < 1e-8);
    }

    #[test]
    fn rho_finite_rejects_bad_parameters() {
        let p = params(0.5, 2.0);
        assert!(matches!(rho_finite(&RhoSpec::genic(3.0), p, 0.5), Err(Error::OutOfRange { .. })));
        // mutation rates larger than R push rho_R below zero
        let m = RhoSpec::mutation(0.0, 5.0);
        assert!(matches!(rho_finite(&m, p, 1.0), Err(Error::OutOfRange { .. })));
        assert!(rho_finite(&RhoSpec::Neutral, p, 1.5).is_err());
    }

    #[test]
    fn rho_limit_examples() {
        assert_eq!(rho_limit(&RhoSpec::Neutral, 0.5), 0.0);
        assert_eq!(rho_limit(&RhoSpec::genic(2.0), 0.5), 0.5);
        assert_eq!(rho_limit(&RhoSpec::mutation(1.0, 2.0), 0.25), 0.25);
        let d = RhoSpec::Diploid { s: 1.0, h: 0.5 };
        assert!((rho_limit(&d, 0.5) - 0.25).abs() < 1e-15);
    }

    fn builtin_specs() -> Vec<RhoSpec> {
        vec![
            RhoSpec::Neutral,
            RhoSpec::genic(1.5),
            RhoSpec::genic(-2.0),
            RhoSpec::fittest_geometric(0.5, 64),
            RhoSpec::Diploid { s: 1.0, h: 0.2 },
            RhoSpec::Diploid { s: 0.5, h: 1.5 },
            RhoSpec::mutation(1.0, 2.0),
            RhoSpec::GenicMutation { s: 1.0, beta0: 0.5, beta1: 0.25 },
        ]
    }

    fn sup_error(spec: &RhoSpec, r: f64) -> f64 {
        let p = params(0.5, r);
        (0..=100)
            .map(|i| {
                let x = i as f64 / 100.0;
                let fin = rho_finite(spec, p, x).unwrap();
                (r * (fin - x) - rho_limit(spec, x)).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn rescaled_rho_converges_at_rate_one_over_r() {
        for spec in builtin_specs() {
            let errs: Vec<f64> = [1e2, 1e3, 1e4].iter().map(|&r| sup_error(&spec, r)).collect();
            if errs[0] < 1e-9 {
                // families whose rescaled difference is exactly the limit
                assert!(errs.iter().all(|e| *e < 1e-8), "{spec:?}: {errs:?}");
                continue;
            }
            for w in errs.windows(2) {
                let ratio = w[1] / w[0];
                assert!((0.05..=0.2).contains(&ratio), "{spec:?}: ratio {ratio}");
            }
        }
    }

    #[test]
    fn limits_respect_boundary_signs() {
        for spec in builtin_specs() {
            assert!(rho_limit(&spec, 0.0) >= 0.0);
            assert!(rho_limit(&spec, 1.0) <= 0.0);
        }
    }

    #[test]
    fn fittest_weights_truncate_and_renormalize() {
        let spec = RhoSpec::fittest_geometric(0.5, 200);
        spec.validate().unwrap_or(()); // 200 geometric terms sum to 1 - 2^-200
        let short = RhoSpec::FittestTypeWins {
            weights: match &spec {
                RhoSpec::FittestTypeWins { weights, .. } => weights.clone(),
                _ => unreachable!(),
            },
            max_terms: 64,
        };
        let p = params(0.5, 50.0);
        let a = rho_finite(&spec, p, 0.3).unwrap();
        let b = rho_finite(&short, p, 0.3).unwrap();
        assert!((a - b).abs() < 1e-15);
        let bad = RhoSpec::FittestTypeWins { weights: vec![0.5, 0.4], max_terms: 64 };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn fittest_single_extra_parent_is_genic() {
        // s_1 = 1: G in {1, 2}, so s_R(x) = x + x(1-x)/R.
        let spec = RhoSpec::FittestTypeWins { weights: vec![1.0], max_terms: 64 };
        let p = params(0.5, 20.0);
        for x in [0.1, 0.5, 0.9] {
            let v = rho_finite(&spec, p, x).unwrap();
            assert!((v - (x + x * (1.0 - x) / 20.0)).abs() < 1e-15);
            assert!((rho_limit(&spec, x) - x * (1.0 - x)).abs() < 1e-15);
        }
    }

    #[test]
    fn decompose_finite_examples() {
        let d = decompose_rho_finite(|x| x).unwrap();
        assert_eq!((d.beta0, d.beta1, d.degenerate), (0.0, 0.0, false));
        assert_eq!(d.selection(0.3), 0.3);

        let r = 10.0;
        let d = decompose_rho_finite(|x| x * (1.0 - 2.0 / r) + (1.0 - x) / r).unwrap();
        assert!((d.beta0 - 0.1).abs() < 1e-15 && (d.beta1 - 0.2).abs() < 1e-15);
        for i in 0..=10 {
            let x = i as f64 / 10.0;
            assert!((d.selection(x) - x).abs() < 1e-12);
        }

        let d = decompose_rho_finite(|_| 0.5).unwrap();
        assert!(d.degenerate);
        assert_eq!(d.recompose(0.7), 0.5);

        assert!(matches!(decompose_rho_finite(|x: f64| 4.0 * x * (1.0 - x)), Err(Error::BoundaryViolation { .. })));
    }

    #[test]
    fn decompose_then_recompose_is_identity() {
        let p = params(0.3, 40.0);
        let specs = [
            RhoSpec::genic(3.0),
            RhoSpec::GenicMutation { s: 2.0, beta0: 1.0, beta1: 3.0 },
            RhoSpec::Diploid { s: 1.0, h: 0.3 },
        ];
        for spec in &specs {
            let d = decompose_rho_finite(|x| rho_finite(spec, p, x).unwrap()).unwrap();
            for i in 0..=100 {
                let x = i as f64 / 100.0;
                let v = rho_finite(spec, p, x).unwrap();
                assert!((d.recompose(x) - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mechanism_matches_rho_finite() {
        let p = params(0.3, 25.0);
        let table = RhoSpec::CustomTable {
            finite: vec![[0.0, 0.02], [0.5, 0.45], [1.0, 0.97]],
            limit: vec![[0.0, 0.5], [1.0, -0.75]],
        };
        let specs = [
            RhoSpec::Neutral,
            RhoSpec::genic(2.0),
            RhoSpec::fittest_geometric(0.3, 64),
            RhoSpec::Diploid { s: 1.0, h: 0.7 },
            RhoSpec::mutation(0.5, 1.5),
            RhoSpec::GenicMutation { s: -1.0, beta0: 2.0, beta1: 1.0 },
            table,
        ];
        for spec in &specs {
            let mech = spec.mechanism(p);
            for i in 0..=20 {
                let x = i as f64 / 20.0;
                let s = mech.selection(x);
                let v = s * (1.0 - mech.beta1) + (1.0 - s) * mech.beta0;
                assert!((v - rho_finite(spec, p, x).unwrap()).abs() < 1e-12, "{spec:?}");
            }
        }
    }

    #[test]
    fn decompose_limit_examples() {
        let d = decompose_rho_limit(|x| 1.0 * (1.0 - x) - 2.0 * x, 101).unwrap();
        assert_eq!((d.beta0, d.beta1), (1.0, 2.0));
        assert!(d.sigma(0.3).abs() < 1e-12);

        let d = decompose_rho_limit(|x| 3.0 * x * (1.0 - x), 101).unwrap();
        assert_eq!((d.beta0, d.beta1), (0.0, 0.0));
        assert!((d.sigma(0.4) - 0.72).abs() < 1e-12);

        let d = decompose_rho_limit(|x| x * (1.0 - x) + 0.5 * (1.0 - x) - 0.25 * x, 101).unwrap();
        assert_eq!((d.beta0, d.beta1), (0.5, 0.25));
        for i in 0..=10 {
            let x = i as f64 / 10.0;
            assert!((d.sigma(x) - x * (1.0 - x)).abs() < 1e-12);
        }
        assert!(d.sigma(0.0).abs() < 1e-12 && d.sigma(1.0).abs() < 1e-12);

        assert!(matches!(decompose_rho_limit(|x| x - 0.5, 11), Err(Error::BoundarySign { .. })));
    }

    #[test]
    fn increment_law_examples() {
        assert_eq!(mu(0.0, 0.3), 1.0);
        assert!((mu(1.0, 0.3) - 0.3).abs() < 1e-15);
        assert_eq!(mu(0.5, 0.5), 0.75);
        assert_eq!(var_xi(0.0, 0.5), 0.0);
        assert_eq!(var_xi(0.5, 0.5), 0.0625);
        assert!((var_xi(0.5, 0.3) - 0.1225).abs() < 1e-15);
    }

    #[test]
    fn increment_law_identities_on_grid() {
        for theta in [0.1, 0.3, 0.5, 0.9] {
            for i in 0..=100 {
                let p = i as f64 / 100.0;
                let law = IncrementLaw::new(p, theta);
                let m = law.mean();
                assert!(m >= theta - 1e-15 && m <= 1.0);
                assert!(law.variance() <= (1.0 - theta).powi(2) / 4.0 + 1e-15);
                assert!((law.second_moment() - m * m - law.variance()).abs() < 1e-12);
                // E[xi_inf] under Q_p = (theta p / mu) theta + ((1-p)/mu) 1
                let q = theta * p / m;
                let e_inf = q * theta + (1.0 - p) / m;
                assert!((e_inf - law.size_biased_mean()).abs() < 1e-12);
            }
        }
    }
}

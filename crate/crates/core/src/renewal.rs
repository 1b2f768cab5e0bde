//! Renewal walk with increments in `{theta, 1}` and its first passage above `R`.
//!
//! One generation of the two-size model is a renewal walk `S_n` whose
//! increments are the offspring sizes; the population size is the first
//! passage time `tau(R) = inf{n : S_n >= R}`. The strict variant uses
//! `inf{n : S_n > R}` and keeps the generation *before* the crossing.
//!
//! States are tracked as counts `(k_small, k_large)`, so `S = theta k_small + k_large`.
//! With a rational `theta = a/b` every comparison happens on the integer
//! lattice `a k_small + b k_large` against an integer target.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{mu, var_xi, SizeParams, Theta};
use crate::stats::binomial_std_err;

/// Upper bound on lattice states for the exact oracle.
pub const MAX_DP_STATES: u128 = 10_000_000;

/// How a generation is completed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoppingRule {
    /// Keep the individual whose cost first brings consumption to `>= R`.
    #[default]
    NonStrict,
    /// Reject the individual that would push consumption above `R`.
    Strict,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Boundary {
    /// Crossed iff `small k_small + large k_large >= target`.
    Lattice { small: u64, large: u64, target: u64 },
    /// Crossed iff `theta k_small + k_large >= level` (`> level` when strict).
    Continuous { theta: f64, level: f64, strict: bool },
}

/// Decides when the walk has passed the resource level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossing {
    boundary: Boundary,
    theta: f64,
    level: f64,
    rule: StoppingRule,
}

fn snap_integer(v: f64) -> Option<f64> {
    let r = v.round();
    ((v - r).abs() <= 1e-9 * r.abs().max(1.0)).then_some(r)
}

impl Crossing {
    pub fn new(params: SizeParams, rule: StoppingRule) -> Result<Self> {
        let level = params.resources;
        let theta = params.theta();
        if rule == StoppingRule::Strict && level < 1.0 {
            return Err(Error::InvalidParams(format!(
                "the strict rule needs R >= 1 so every generation keeps an individual (R = {level})"
            )));
        }
        let boundary = match params.theta {
            Theta::Rational { num, den } => {
                let scaled = level * den as f64;
                if scaled > 2f64.powi(52) {
                    return Err(Error::InvalidParams(format!(
                        "R * {den} = {scaled} is too large for the integer lattice"
                    )));
                }
                let target = match (snap_integer(scaled), rule) {
                    (Some(t), StoppingRule::NonStrict) => t,
                    (Some(t), StoppingRule::Strict) => t + 1.0,
                    (None, StoppingRule::NonStrict) => scaled.ceil(),
                    (None, StoppingRule::Strict) => scaled.floor() + 1.0,
                };
                Boundary::Lattice { small: num, large: den, target: target as u64 }
            }
            Theta::Real(theta) => Boundary::Continuous { theta, level, strict: rule == StoppingRule::Strict },
        };
        Ok(Crossing { boundary, theta, level, rule })
    }

    pub fn rule(&self) -> StoppingRule {
        self.rule
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    pub fn crossed(&self, k_small: u64, k_large: u64) -> bool {
        match self.boundary {
            Boundary::Lattice { small, large, target } => small * k_small + large * k_large >= target,
            Boundary::Continuous { theta, level, strict } => {
                let s = theta * k_small as f64 + k_large as f64;
                if strict {
                    s > level
                } else {
                    s >= level
                }
            }
        }
    }

    /// Number of further steps that cannot cross, whatever their sizes.
    pub fn safe_steps(&self, k_small: u64, k_large: u64) -> u64 {
        match self.boundary {
            Boundary::Lattice { small, large, target } => {
                let used = small * k_small + large * k_large;
                if used >= target {
                    0
                } else {
                    (target - 1 - used) / large
                }
            }
            Boundary::Continuous { theta, level, .. } => {
                // one step of margin absorbs rounding in the running sum
                let rem = level - (theta * k_small as f64 + k_large as f64);
                (rem.floor() - 1.0).max(0.0) as u64
            }
        }
    }

    /// Consumed resources `theta k_small + k_large`.
    pub fn consumed(&self, k_small: u64, k_large: u64) -> f64 {
        match self.boundary {
            Boundary::Lattice { small, large, .. } => (small * k_small + large * k_large) as f64 / large as f64,
            Boundary::Continuous { theta, .. } => theta * k_small as f64 + k_large as f64,
        }
    }

    /// Lattice size of the exact oracle, `(max smalls + 1)(max larges + 1)`.
    pub fn lattice_states(&self) -> u128 {
        let max_small = ((self.level + 1.0) / self.theta).ceil() as u128;
        let max_large = (self.level + 1.0).ceil() as u128;
        (max_small + 1) * (max_large + 1)
    }
}

fn draw_binomial<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    if p <= 0.0 {
        0
    } else if p >= 1.0 {
        n
    } else if n == 1 {
        u64::from(rng.random_bool(p))
    } else {
        Binomial::new(n, p).expect("valid binomial").sample(rng)
    }
}

/// Walks until the crossing step; returns `(k_small, k_large, last_was_small)`
/// counted including the crossing step.
///
/// Blocks of steps that provably cannot cross are drawn as one binomial.
pub fn walk<R: Rng + ?Sized>(p: f64, crossing: &Crossing, rng: &mut R) -> (u64, u64, bool) {
    let (mut ks, mut kl) = (0u64, 0u64);
    loop {
        let m = crossing.safe_steps(ks, kl);
        if m > 0 {
            let k = draw_binomial(m, p, rng);
            ks += k;
            kl += m - k;
            continue;
        }
        let small = p >= 1.0 || (p > 0.0 && rng.random_bool(p));
        if small {
            ks += 1;
        } else {
            kl += 1;
        }
        if crossing.crossed(ks, kl) {
            return (ks, kl, small);
        }
    }
}

/// First-passage data of one non-strict renewal run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassageOutcome {
    pub k_small: u64,
    pub k_large: u64,
    /// The crossing increment was `theta`.
    pub last_small: bool,
    pub theta: f64,
    pub level: f64,
}

impl PassageOutcome {
    pub fn tau(&self) -> u64 {
        self.k_small + self.k_large
    }

    pub fn s_tau(&self) -> f64 {
        self.theta * self.k_small as f64 + self.k_large as f64
    }

    pub fn xi_tau(&self) -> f64 {
        if self.last_small {
            self.theta
        } else {
            1.0
        }
    }

    pub fn overshoot(&self) -> f64 {
        self.s_tau() - self.level
    }
}

/// Strict first passage `tau_bar` and the kept pre-crossing generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrictPassage {
    pub kept_small: u64,
    pub kept_large: u64,
    /// The rejected individual was small.
    pub rejected_small: bool,
    pub theta: f64,
}

impl StrictPassage {
    pub fn tau_bar(&self) -> u64 {
        self.kept_small + self.kept_large + 1
    }

    /// `S_{tau_bar - 1}`.
    pub fn kept_sum(&self) -> f64 {
        self.theta * self.kept_small as f64 + self.kept_large as f64
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParams(format!("probability p = {p} is outside [0,1]")));
    }
    Ok(())
}

pub fn sample_passage<R: Rng + ?Sized>(p: f64, params: SizeParams, rng: &mut R) -> Result<PassageOutcome> {
    check_p(p)?;
    let crossing = Crossing::new(params, StoppingRule::NonStrict)?;
    Ok(passage_with(p, &crossing, rng))
}

pub fn passage_with<R: Rng + ?Sized>(p: f64, crossing: &Crossing, rng: &mut R) -> PassageOutcome {
    let (k_small, k_large, last_small) = walk(p, crossing, rng);
    PassageOutcome { k_small, k_large, last_small, theta: crossing.theta, level: crossing.level }
}

pub fn sample_passage_strict<R: Rng + ?Sized>(p: f64, params: SizeParams, rng: &mut R) -> Result<StrictPassage> {
    check_p(p)?;
    let crossing = Crossing::new(params, StoppingRule::Strict)?;
    Ok(strict_passage_with(p, &crossing, rng))
}

pub fn strict_passage_with<R: Rng + ?Sized>(p: f64, crossing: &Crossing, rng: &mut R) -> StrictPassage {
    let (ks, kl, small) = walk(p, crossing, rng);
    let (kept_small, kept_large) = if small { (ks - 1, kl) } else { (ks, kl - 1) };
    StrictPassage { kept_small, kept_large, rejected_small: small, theta: crossing.theta }
}

/// One atom of an exact law over kept generations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub k_small: u64,
    pub k_large: u64,
    pub prob: f64,
    /// Part of `prob` whose crossing individual was small (for the strict
    /// rule: whose rejected individual was small).
    pub prob_last_small: f64,
}

impl Atom {
    pub fn tau(&self) -> u64 {
        self.k_small + self.k_large
    }

    pub fn sum(&self, theta: f64) -> f64 {
        theta * self.k_small as f64 + self.k_large as f64
    }

    /// Small-type frequency of the generation, `k_small / (k_small + k_large)`.
    pub fn freq(&self) -> f64 {
        self.k_small as f64 / self.tau() as f64
    }
}

/// Exact law of the generation produced by one renewal run.
///
/// For the non-strict rule the atoms are the stopped states `(k_small, k_large)`
/// at `tau(R)`; for the strict rule they are the kept states at `tau_bar(R) - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteLaw {
    pub atoms: Vec<Atom>,
    pub p: f64,
    pub theta: f64,
    pub level: f64,
    pub rule: StoppingRule,
}

impl DiscreteLaw {
    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.prob).sum()
    }

    pub fn expect<F: Fn(&Atom) -> f64>(&self, f: F) -> f64 {
        self.atoms.iter().map(|a| a.prob * f(a)).sum()
    }

    /// `P(xi = theta)` for the crossing (or rejected) individual.
    pub fn prob_last_small(&self) -> f64 {
        self.atoms.iter().map(|a| a.prob_last_small).sum()
    }

    pub fn mean_tau(&self) -> f64 {
        self.expect(|a| a.tau() as f64)
    }

    /// Law of `tau` as `(tau, prob)` pairs in increasing order.
    pub fn tau_law(&self) -> Vec<(u64, f64)> {
        let mut by_tau: BTreeMap<u64, f64> = BTreeMap::new();
        for a in &self.atoms {
            *by_tau.entry(a.tau()).or_default() += a.prob;
        }
        by_tau.into_iter().collect()
    }

    pub fn prob_of(&self, k_small: u64, k_large: u64) -> f64 {
        self.atoms.iter().find(|a| a.k_small == k_small && a.k_large == k_large).map_or(0.0, |a| a.prob)
    }
}

/// Exact law by the lattice recursion
/// `f(i,j) = 1{not crossed} (p f(i-1,j) + (1-p) f(i,j-1))`, `f(0,0) = 1`,
/// swept by anti-diagonals `i + j = n`.
pub fn exact_passage_law(p: f64, params: SizeParams, rule: StoppingRule) -> Result<DiscreteLaw> {
    check_p(p)?;
    let crossing = Crossing::new(params, rule)?;
    exact_law_with(p, &crossing)
}

pub fn exact_law_with(p: f64, crossing: &Crossing) -> Result<DiscreteLaw> {
    let states = crossing.lattice_states();
    if states > MAX_DP_STATES {
        return Err(Error::StateSpaceTooLarge { states, limit: MAX_DP_STATES });
    }
    let q = 1.0 - p;
    let strict = crossing.rule == StoppingRule::Strict;
    let mut atoms: BTreeMap<(u64, u64), (f64, f64)> = BTreeMap::new();
    let mut record = |key: (u64, u64), mass: f64, small: bool| {
        let e = atoms.entry(key).or_insert((0.0, 0.0));
        e.0 += mass;
        if small {
            e.1 += mass;
        }
    };

    // cur[i] = mass at (i, n - i), all below the boundary
    let mut cur = vec![1.0f64];
    let mut n = 0u64;
    loop {
        let mut next = vec![0.0f64; cur.len() + 1];
        let mut alive = false;
        for (i, &mass) in cur.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            let (ks, kl) = (i as u64, n - i as u64);
            let to_small = mass * p;
            if to_small > 0.0 {
                if crossing.crossed(ks + 1, kl) {
                    record(if strict { (ks, kl) } else { (ks + 1, kl) }, to_small, true);
                } else {
                    next[i + 1] += to_small;
                    alive = true;
                }
            }
            let to_large = mass * q;
            if to_large > 0.0 {
                if crossing.crossed(ks, kl + 1) {
                    record(if strict { (ks, kl) } else { (ks, kl + 1) }, to_large, false);
                } else {
                    next[i] += to_large;
                    alive = true;
                }
            }
        }
        if !alive {
            break;
        }
        cur = next;
        n += 1;
    }

    let atoms = atoms
        .into_iter()
        .filter(|(_, (prob, _))| *prob > 0.0)
        .map(|((k_small, k_large), (prob, prob_last_small))| Atom { k_small, k_large, prob, prob_last_small })
        .collect();
    Ok(DiscreteLaw { atoms, p, theta: crossing.theta, level: crossing.level, rule: crossing.rule })
}

/// Limit law `Q_p` of the stopping summand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingSummandLaw {
    pub p: f64,
    pub q_theta: f64,
    pub q_one: f64,
}

/// `Q_p({theta}) = p theta / mu(p)`.
pub fn stopping_summand_limit(p: f64, theta: f64) -> StoppingSummandLaw {
    let q_theta = p * theta / mu(p, theta);
    StoppingSummandLaw { p, q_theta, q_one: 1.0 - q_theta }
}

/// Monte Carlo estimate of `P(xi_tau = theta)` with its binomial standard error.
pub fn estimate_stopping_summand<R: Rng + ?Sized>(
    p: f64,
    params: SizeParams,
    n_sim: u64,
    rng: &mut R,
) -> Result<(f64, f64)> {
    check_p(p)?;
    if n_sim == 0 {
        return Err(Error::InvalidParams("n_sim must be at least 1".into()));
    }
    let crossing = Crossing::new(params, StoppingRule::NonStrict)?;
    let hits = (0..n_sim).filter(|_| walk(p, &crossing, rng).2).count() as u64;
    let q = hits as f64 / n_sim as f64;
    Ok((q, binomial_std_err(q, n_sim)))
}

/// `mu^m + m(m+1)/2 mu^{m-1} Var_p[xi] / R`, the expansion of `E[(S_tau / tau)^m]`.
pub fn moment_ratio_theory(p: f64, theta: f64, level: f64, m: u32) -> f64 {
    let mean = mu(p, theta);
    let m_f = f64::from(m);
    mean.powi(m as i32) + m_f * (m_f + 1.0) / 2.0 * mean.powi(m as i32 - 1) * var_xi(p, theta) / level
}

/// `E[(S_tau / tau)^m]` summed over the exact law.
pub fn moment_ratio_exact(p: f64, params: SizeParams, m: u32) -> Result<f64> {
    let law = exact_passage_law(p, params, StoppingRule::NonStrict)?;
    let theta = law.theta;
    Ok(law.expect(|a| (a.sum(theta) / a.tau() as f64).powi(m as i32)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    /// `[R - theta, R)`
    Theta,
    /// `[R - 1, R)`
    One,
}

/// Renewal measure of the window below `R`, read off the stopping-summand law:
/// `U_p([R - theta, R)) = P(xi_tau = theta) / p`, `U_p([R - 1, R)) = P(xi_tau = 1) / (1 - p)`.
pub fn renewal_window_mass(p: f64, params: SizeParams, window: Window) -> Result<f64> {
    check_p(p)?;
    let denom = match window {
        Window::Theta => p,
        Window::One => 1.0 - p,
    };
    if denom == 0.0 {
        return Err(Error::DivisionAtBoundary { p });
    }
    let law = exact_passage_law(p, params, StoppingRule::NonStrict)?;
    let small = law.prob_last_small();
    Ok(match window {
        Window::Theta => small / denom,
        Window::One => (law.total_mass() - small) / denom,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::streams::stream;

    fn params(theta: f64, r: f64) -> SizeParams {
        SizeParams::new(theta, r).unwrap()
    }

    #[test]
    fn deterministic_passages() {
        let mut rng = stream(1, 0);
        let o = sample_passage(0.0, params(0.5, 5.0), &mut rng).unwrap();
        assert_eq!((o.tau(), o.s_tau(), o.xi_tau()), (5, 5.0, 1.0));
        let o = sample_passage(1.0, params(0.5, 5.0), &mut rng).unwrap();
        assert_eq!((o.tau(), o.s_tau(), o.xi_tau()), (10, 5.0, 0.5));
        assert_eq!(o.overshoot(), 0.0);

        let s = sample_passage_strict(0.0, params(0.5, 5.0), &mut rng).unwrap();
        assert_eq!((s.tau_bar() - 1, s.kept_sum()), (5, 5.0));
        let s = sample_passage_strict(1.0, params(0.5, 1.0), &mut rng).unwrap();
        assert_eq!((s.tau_bar() - 1, s.kept_sum()), (2, 1.0));
    }

    #[test]
    fn exact_law_by_enumeration_r1() {
        let law = exact_passage_law(0.5, params(0.5, 1.0), StoppingRule::NonStrict).unwrap();
        assert_eq!(law.atoms.len(), 3);
        assert_eq!(law.prob_of(0, 1), 0.5);
        assert_eq!(law.prob_of(2, 0), 0.25);
        assert_eq!(law.prob_of(1, 1), 0.25);
        assert_eq!(law.prob_last_small(), 0.25);

        let strict = exact_passage_law(0.5, params(0.5, 1.0), StoppingRule::Strict).unwrap();
        assert_eq!(strict.prob_of(0, 1), 0.5);
        assert_eq!(strict.prob_of(1, 0), 0.25);
        assert_eq!(strict.prob_of(2, 0), 0.25);
    }

    #[test]
    fn last_summand_small_only_via_two_smalls() {
        for p in [0.1, 0.37, 0.8] {
            let law = exact_passage_law(p, params(0.5, 1.0), StoppingRule::NonStrict).unwrap();
            assert!((law.prob_last_small() - p * p).abs() < 1e-15);
        }
    }

    #[test]
    fn exact_moment_ratio_r1() {
        let v = moment_ratio_exact(0.5, params(0.5, 1.0), 1).unwrap();
        assert!((v - 0.8125).abs() < 1e-15);
        for r in [1.0, 3.5, 20.0] {
            let v = moment_ratio_exact(1.0, params(0.3, r), 3).unwrap();
            assert!((v - 0.3f64.powi(3)).abs() < 1e-12);
        }
    }

    #[test]
    fn moment_ratio_theory_examples() {
        assert_eq!(moment_ratio_theory(0.0, 0.3, 10.0, 4), 1.0);
        assert!((moment_ratio_theory(0.5, 0.5, 100.0, 1) - 0.750625).abs() < 1e-15);
        assert!((moment_ratio_theory(0.5, 0.5, 100.0, 2) - 0.56390625).abs() < 1e-15);
    }

    #[test]
    fn stopping_summand_limit_examples() {
        assert_eq!(stopping_summand_limit(0.0, 0.4).q_theta, 0.0);
        assert!((stopping_summand_limit(1.0, 0.4).q_theta - 1.0).abs() < 1e-15);
        assert!((stopping_summand_limit(0.5, 0.5).q_theta - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn window_masses() {
        let p = params(0.5, 1.0);
        assert!((renewal_window_mass(0.5, p, Window::Theta).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(renewal_window_mass(0.0, p, Window::Theta), Err(Error::DivisionAtBoundary { .. })));
        assert!(renewal_window_mass(1.0, p, Window::One).is_err());
        for r in [1.0, 7.5, 33.0] {
            for pi in 1..10 {
                let pr = pi as f64 / 10.0;
                let prm = params(0.3, r);
                let a = renewal_window_mass(pr, prm, Window::Theta).unwrap();
                let b = renewal_window_mass(pr, prm, Window::One).unwrap();
                assert!((pr * a + (1.0 - pr) * b - 1.0).abs() < 1e-12);
            }
        }
        let u = renewal_window_mass(0.5, params(0.5, 200.0), Window::Theta).unwrap();
        assert!((u - 2.0 / 3.0).abs() < 0.01);
    }

    #[test]
    fn dp_guard() {
        let err = exact_passage_law(0.5, params(0.001, 1e5), StoppingRule::NonStrict).unwrap_err();
        assert!(matches!(err, Error::StateSpaceTooLarge { .. }));
    }

    #[test]
    fn strict_rule_needs_r_at_least_one() {
        assert!(Crossing::new(params(0.5, 0.7), StoppingRule::Strict).is_err());
        assert!(Crossing::new(params(0.5, 0.7), StoppingRule::NonStrict).is_ok());
    }

    #[test]
    fn lattice_targets() {
        // R = 2.5 with theta = 1/3: scaled level 7.5 is not on the lattice
        let c = Crossing::new(
            SizeParams::with_theta(Theta::rational(1, 3).unwrap(), 2.5).unwrap(),
            StoppingRule::NonStrict,
        )
        .unwrap();
        assert!(!c.crossed(1, 2)); // 7/3 < 2.5
        assert!(c.crossed(2, 2)); // 8/3
        let s = Crossing::new(params(0.5, 2.0), StoppingRule::Strict).unwrap();
        assert!(!s.crossed(2, 1)); // exactly 2 is kept
        assert!(s.crossed(1, 2));
        let n = Crossing::new(params(0.5, 2.0), StoppingRule::NonStrict).unwrap();
        assert!(n.crossed(2, 1));
    }

    #[test]
    fn safe_steps_never_cross() {
        for (theta, r) in [(0.3, 7.0), (0.5, 2.5), (std::f64::consts::FRAC_1_SQRT_2, 9.3)] {
            for rule in [StoppingRule::NonStrict, StoppingRule::Strict] {
                let c = Crossing::new(params(theta, r), rule).unwrap();
                for ks in 0..30 {
                    for kl in 0..12 {
                        if c.crossed(ks, kl) {
                            continue;
                        }
                        let m = c.safe_steps(ks, kl);
                        assert!(!c.crossed(ks, kl + m), "{theta} {r} {rule:?} {ks} {kl} {m}");
                    }
                }
            }
        }
    }

    #[test]
    fn dp_matches_monte_carlo_r5() {
        let prm = params(0.3, 5.0);
        let law = exact_passage_law(0.5, prm, StoppingRule::NonStrict).unwrap();
        assert!((law.total_mass() - 1.0).abs() < 1e-12);
        let n = 1_000_000u64;
        let crossing = Crossing::new(prm, StoppingRule::NonStrict).unwrap();
        let counts = crate::streams::chunked(5, 0, n, |_, len, rng| {
            let mut local: BTreeMap<(u64, u64), u64> = BTreeMap::new();
            for _ in 0..len {
                let (ks, kl, _) = walk(0.5, &crossing, rng);
                *local.entry((ks, kl)).or_default() += 1;
            }
            local
        });
        let mut total: BTreeMap<(u64, u64), u64> = BTreeMap::new();
        for part in counts {
            for (k, v) in part {
                *total.entry(k).or_default() += v;
            }
        }
        for a in &law.atoms {
            let hat = *total.get(&(a.k_small, a.k_large)).unwrap_or(&0) as f64 / n as f64;
            let band = 3.0 * (a.prob * (1.0 - a.prob) / n as f64).sqrt();
            assert!((hat - a.prob).abs() <= band.max(1e-6), "{a:?} hat {hat}");
        }
        let atoms_seen: u64 = total.values().sum();
        assert_eq!(atoms_seen, n);
        assert!(total.keys().all(|&(ks, kl)| law.prob_of(ks, kl) > 0.0));
    }

    #[test]
    fn stopping_summand_mc() {
        let mut rng = stream(9, 0);
        let (q, se) = estimate_stopping_summand(0.0, params(0.5, 10.0), 100, &mut rng).unwrap();
        assert_eq!((q, se), (0.0, 0.0));
        let prm = params(0.5, 200.0);
        let exact = exact_passage_law(0.5, prm, StoppingRule::NonStrict).unwrap().prob_last_small();
        let (q, se) = estimate_stopping_summand(0.5, prm, 100_000, &mut rng).unwrap();
        assert!((q - exact).abs() <= 3.0 * se);
        assert!((q - 1.0 / 3.0).abs() <= 0.01);
        let prm1 = params(0.5, 1.0);
        let (q, se) = estimate_stopping_summand(0.5, prm1, 200_000, &mut rng).unwrap();
        assert!((q - 0.25).abs() <= 3.0 * se);
    }

    #[test]
    fn sampled_passages_respect_bounds() {
        let mut rng = stream(3, 1);
        for (theta, r) in [(0.3, 5.0), (0.5, 12.5), (0.9, 40.0), (std::f64::consts::FRAC_1_SQRT_2, 17.0)] {
            let prm = params(theta, r);
            for i in 0..2000 {
                let p = (i % 11) as f64 / 10.0;
                let o = sample_passage(p, prm, &mut rng).unwrap();
                let tau = o.tau() as f64;
                assert!(tau >= r && tau <= (r + 1.0) / theta);
                assert!(o.s_tau() >= r && o.s_tau() < r + 1.0);
                assert!((0.0..1.0).contains(&o.overshoot()));
                let s = sample_passage_strict(p, prm, &mut rng).unwrap();
                assert!(s.kept_sum() <= r + 1e-12 && s.kept_sum() > r - 1.0);
            }
        }
    }

    #[test]
    fn wald_identity_exact() {
        for theta in [0.3, 0.5, 0.8] {
            for r in [1.0, 2.5, 10.0, 50.0] {
                for pi in 0..=10 {
                    let p = pi as f64 / 10.0;
                    let law = exact_passage_law(p, params(theta, r), StoppingRule::NonStrict).unwrap();
                    let v = mu(p, theta) * law.mean_tau();
                    assert!(v >= r - 1e-9 && v <= r + 1.0 + 1e-9, "{theta} {r} {p}: {v}");
                    let es = law.expect(|a| a.sum(theta));
                    assert!((v - es).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn reverse_martingale_identity() {
        let thetas = [
            Theta::rational(3, 10).unwrap(),
            Theta::rational(1, 2).unwrap(),
            Theta::real(std::f64::consts::FRAC_1_SQRT_2).unwrap(),
        ];
        for theta in thetas {
            for r in [1.0, 2.5, 5.0, 10.0] {
                let prm = SizeParams::with_theta(theta, r).unwrap();
                for pi in 0..=20 {
                    let p = pi as f64 / 20.0;
                    let law = exact_passage_law(p, prm, StoppingRule::Strict).unwrap();
                    let th = theta.value();
                    let v = law.expect(|a| a.sum(th) / a.tau() as f64);
                    assert!((v - mu(p, th)).abs() < 1e-12, "{theta} {r} {p}: {v}");
                }
            }
        }
    }

    fn sup_summand_error(r: f64) -> f64 {
        (0..=20)
            .map(|i| {
                let p = i as f64 / 20.0;
                let law = exact_passage_law(p, params(0.5, r), StoppingRule::NonStrict).unwrap();
                (law.prob_last_small() - stopping_summand_limit(p, 0.5).q_theta).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn stopping_summand_converges_uniformly() {
        let sups: Vec<f64> = [50.0, 100.0, 200.0, 400.0].iter().map(|&r| sup_summand_error(r)).collect();
        assert!(sups.windows(2).all(|w| w[1] < w[0]), "{sups:?}");
        assert!(sups[3] <= 0.01);
    }

    #[test]
    fn key_renewal_lm_convergence() {
        let sup = |r: f64, m: i32| {
            (0..=20)
                .map(|i| {
                    let p = i as f64 / 20.0;
                    let law = exact_passage_law(p, params(0.5, r), StoppingRule::NonStrict).unwrap();
                    let mean = mu(p, 0.5);
                    law.expect(|a| (r / (mean * a.tau() as f64) - 1.0).abs().powi(m))
                })
                .fold(0.0, f64::max)
        };
        for m in 1..=4 {
            assert!(sup(400.0, m) < sup(50.0, m));
        }
    }
}

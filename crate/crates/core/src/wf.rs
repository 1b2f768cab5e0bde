//! The finite two-size Wright–Fisher model.
//!
//! Each generation samples offspring one at a time: an offspring is small with
//! probability `rho_R(x)` where `x` is the small-type frequency of the parents,
//! and sampling stops once the consumed resources pass `R`. The whole
//! generation is therefore one renewal run at `p = rho_R(x)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{mu, rho_finite, RhoSpec, SizeParams};
use crate::renewal::{exact_law_with, walk, Crossing, DiscreteLaw, StoppingRule};
use crate::streams;

/// Most generations kept in a recorded trajectory.
pub const MAX_RECORDED: u64 = 100_000;

/// One generation: `n_small` small individuals out of `m_size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GenerationState {
    pub n_small: u64,
    pub m_size: u64,
}

impl GenerationState {
    pub fn new(n_small: u64, m_size: u64) -> Result<Self> {
        if m_size == 0 || n_small > m_size {
            return Err(Error::InvalidParams(format!("invalid generation: {n_small} small out of {m_size}")));
        }
        Ok(GenerationState { n_small, m_size })
    }

    pub fn x_freq(&self) -> f64 {
        self.n_small as f64 / self.m_size as f64
    }

    pub fn n_large(&self) -> u64 {
        self.m_size - self.n_small
    }

    pub fn consumed(&self, theta: f64) -> f64 {
        theta * self.n_small as f64 + self.n_large() as f64
    }
}

/// Initial generation built from a target frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialState {
    pub state: GenerationState,
    pub requested_x0: f64,
    /// `requested_x0 * m0` was not an integer and got rounded.
    pub snapped: bool,
}

/// `m0 = round(R / mu(rho_R(x0)))` (at least 1), `n_small = round(x0 m0)`.
pub fn initial_state(x0: f64, spec: &RhoSpec, params: SizeParams) -> Result<InitialState> {
    let p = rho_finite(spec, params, x0)?;
    let m0 = ((params.resources / mu(p, params.theta())).round() as u64).max(1);
    let exact = x0 * m0 as f64;
    let n_small = (exact.round() as u64).min(m0);
    let snapped = (exact - n_small as f64).abs() > 1e-9;
    Ok(InitialState { state: GenerationState { n_small, m_size: m0 }, requested_x0: x0, snapped })
}

/// Precomputed crossing rule for repeated generation steps.
#[derive(Debug, Clone)]
pub struct Stepper<'a> {
    spec: &'a RhoSpec,
    params: SizeParams,
    crossing: Crossing,
}

impl<'a> Stepper<'a> {
    pub fn new(spec: &'a RhoSpec, params: SizeParams, rule: StoppingRule) -> Result<Self> {
        spec.validate()?;
        Ok(Stepper { spec, params, crossing: Crossing::new(params, rule)? })
    }

    pub fn rule(&self) -> StoppingRule {
        self.crossing.rule()
    }

    pub fn params(&self) -> SizeParams {
        self.params
    }

    pub fn step<R: Rng + ?Sized>(&self, state: GenerationState, rng: &mut R) -> Result<GenerationState> {
        let p = rho_finite(self.spec, self.params, state.x_freq())?;
        Ok(self.step_at(p, rng))
    }

    /// One generation with small-offspring probability `p`.
    pub fn step_at<R: Rng + ?Sized>(&self, p: f64, rng: &mut R) -> GenerationState {
        let (ks, kl, last_small) = walk(p, &self.crossing, rng);
        let (n_small, m_size) = match self.crossing.rule() {
            StoppingRule::NonStrict => (ks, ks + kl),
            StoppingRule::Strict if last_small => (ks - 1, ks + kl - 1),
            StoppingRule::Strict => (ks, ks + kl - 1),
        };
        GenerationState { n_small, m_size }
    }

    /// Reference generation: parents are drawn one by one and each offspring
    /// is placed separately.
    pub fn step_reference<R: Rng + ?Sized>(&self, state: GenerationState, rng: &mut R) -> GenerationState {
        let x = state.x_freq();
        let mech = self.spec.mechanism(self.params);
        let uniform_parent = matches!(self.spec, RhoSpec::Neutral | RhoSpec::ParentIndependentMutation { .. });
        let theta = self.crossing.theta();
        let (mut ks, mut kl) = (0u64, 0u64);
        loop {
            let parent_small = if uniform_parent {
                rng.random_range(0..state.m_size) < state.n_small
            } else {
                rng.random_bool(mech.selection(x).clamp(0.0, 1.0))
            };
            let child_small = if parent_small {
                !(mech.beta1 > 0.0 && rng.random_bool(mech.beta1))
            } else {
                mech.beta0 > 0.0 && rng.random_bool(mech.beta0)
            };
            let (ns, nl) = if child_small { (ks + 1, kl) } else { (ks, kl + 1) };
            if self.crossing.crossed(ns, nl) {
                if self.crossing.rule() == StoppingRule::NonStrict {
                    (ks, kl) = (ns, nl);
                }
                debug_assert!(theta * ks as f64 + kl as f64 > 0.0);
                return GenerationState { n_small: ks, m_size: ks + kl };
            }
            (ks, kl) = (ns, nl);
        }
    }
}

pub fn step_generation<R: Rng + ?Sized>(
    state: GenerationState,
    spec: &RhoSpec,
    params: SizeParams,
    rule: StoppingRule,
    rng: &mut R,
) -> Result<GenerationState> {
    Stepper::new(spec, params, rule)?.step(state, rng)
}

/// Recorded generations of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// `(generation, state)`; generation 0 is the initial state.
    pub states: Vec<(u64, GenerationState)>,
    pub stride: u64,
    pub initial: InitialState,
    pub params: SizeParams,
    pub rule: StoppingRule,
}

impl Trajectory {
    pub fn last(&self) -> GenerationState {
        self.states.last().expect("trajectory holds the initial state").1
    }
}

pub fn recording_stride(n_gens: u64) -> u64 {
    n_gens.div_ceil(MAX_RECORDED).max(1)
}

pub fn simulate_trajectory<R: Rng + ?Sized>(
    x0: f64,
    spec: &RhoSpec,
    params: SizeParams,
    rule: StoppingRule,
    n_gens: u64,
    rng: &mut R,
) -> Result<Trajectory> {
    let stepper = Stepper::new(spec, params, rule)?;
    let initial = initial_state(x0, spec, params)?;
    let stride = recording_stride(n_gens);
    let mut states = Vec::with_capacity((n_gens / stride + 2) as usize);
    let mut state = initial.state;
    states.push((0, state));
    for gen in 1..=n_gens {
        state = stepper.step(state, rng)?;
        if gen % stride == 0 || gen == n_gens {
            states.push((gen, state));
        }
    }
    Ok(Trajectory { states, stride, initial, params, rule })
}

/// Independent trajectories; replicate `k` uses stream `(seed, k)`.
pub fn simulate_replicates(
    x0: f64,
    spec: &RhoSpec,
    params: SizeParams,
    rule: StoppingRule,
    n_gens: u64,
    reps: u64,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    streams::replicates(seed, reps, |_, rng| simulate_trajectory(x0, spec, params, rule, n_gens, rng))
        .into_iter()
        .collect()
}

/// Frequency after `n_gens` generations for each of `reps` replicates.
pub fn endpoint_frequencies(
    x0: f64,
    spec: &RhoSpec,
    params: SizeParams,
    rule: StoppingRule,
    n_gens: u64,
    reps: u64,
    seed: u64,
) -> Result<Vec<f64>> {
    let stepper = Stepper::new(spec, params, rule)?;
    let initial = initial_state(x0, spec, params)?.state;
    streams::replicates(seed, reps, |_, rng| {
        let mut state = initial;
        for _ in 0..n_gens {
            state = stepper.step(state, rng)?;
        }
        Ok(state.x_freq())
    })
    .into_iter()
    .collect()
}

/// Exact law of the next generation from a parent frequency `x`.
///
/// Atoms are `(k_small, k_large)` of the new generation, so `X_1 = atom.freq()`
/// and `M_1 = atom.tau()`.
pub fn exact_one_step_law(x: f64, spec: &RhoSpec, params: SizeParams, rule: StoppingRule) -> Result<DiscreteLaw> {
    let p = rho_finite(spec, params, x)?;
    exact_law_with(p, &Crossing::new(params, rule)?)
}

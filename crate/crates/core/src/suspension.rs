//! Suspension data, the cone `Theta_pi`, and the natural extension of the
//! induction acting on `(pi, lambda, tau)`.
//!
//! The natural extension's genuine past is approximated by running the
//! dynamics forward from a sampled state and declaring an interior index the
//! "present"; exponential contraction of the cocycle makes the present-time
//! frame insensitive to the fabricated deep past. Downstream checks are
//! required to be stable under doubling `past_depth`.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::combinatorics::{Arrow, PermutationPair};
use crate::induction::StandardIem;
use crate::scalar::Scalar;
use crate::{Error, Result};

/// Where a vector sits relative to `Theta_pi` and its two half-cones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConeClass {
    /// In `Theta_pi` with negative coordinate sum (`Theta_pi^t`).
    TopPart,
    /// In `Theta_pi` with positive coordinate sum (`Theta_pi^b`).
    BottomPart,
    /// In `Theta_pi` with coordinate sum exactly zero (measure zero; reported
    /// distinctly).
    SumZeroBoundary,
    Outside,
}

impl ConeClass {
    pub fn in_cone(self) -> bool {
        self != ConeClass::Outside
    }
}

/// Classifies `tau` against the open cone: every proper top prefix sum
/// positive, every proper bottom prefix sum negative.
pub fn classify_cone<S: Scalar>(pi: &PermutationPair, tau: &[S]) -> ConeClass {
    assert_eq!(tau.len(), pi.len());
    let d = pi.len();
    let mut acc = S::zero();
    for k in 0..d - 1 {
        acc = acc.add(&tau[pi.top()[k].index()]);
        if !acc.is_positive() {
            return ConeClass::Outside;
        }
    }
    let mut acc_b = S::zero();
    for k in 0..d - 1 {
        acc_b = acc_b.add(&tau[pi.bottom()[k].index()]);
        if !acc_b.is_negative() {
            return ConeClass::Outside;
        }
    }
    let mut total = S::zero();
    for t in tau {
        total = total.add(t);
    }
    if total.is_negative() {
        ConeClass::TopPart
    } else if total.is_positive() {
        ConeClass::BottomPart
    } else {
        ConeClass::SumZeroBoundary
    }
}

/// A point `(pi, lambda, tau)` of the natural extension.
#[derive(Debug, Clone)]
pub struct ExtendedState<S: Scalar> {
    iem: StandardIem<S>,
    tau: Vec<S>,
}

impl<S: Scalar> ExtendedState<S> {
    pub fn new(iem: StandardIem<S>, tau: Vec<S>) -> Result<Self> {
        if !classify_cone(iem.pi(), &tau).in_cone() {
            return Err(Error::Malformed("tau lies outside Theta_pi".into()));
        }
        Ok(ExtendedState { iem, tau })
    }

    pub fn iem(&self) -> &StandardIem<S> {
        &self.iem
    }

    pub fn tau(&self) -> &[S] {
        &self.tau
    }

    /// Rescales lengths to unit sum and `tau` to unit sup-norm, returning the
    /// logs of the two factors (float-backend plumbing; exact runs never
    /// rescale).
    pub fn renormalized(&self) -> (Self, f64, f64) {
        let (iem, log_lambda) = renorm_lambda(self.iem.clone());
        let (tau, log_tau) = renorm_tau(self.tau.clone());
        (ExtendedState { iem, tau }, log_lambda, log_tau)
    }

    /// One step of the natural extension: the arrow is dictated by `lambda`,
    /// and both `lambda` and `tau` transform by `(B_gamma^T)^{-1}` — a single
    /// subtraction at the winner's coordinate, never a matrix inversion.
    pub fn step(&self) -> Result<(Self, Arrow)> {
        let (next_iem, arrow) = self.iem.rv_step()?;
        let mut tau = self.tau.clone();
        let w = arrow.winner.index();
        tau[w] = tau[w].sub(&tau[arrow.loser.index()]);
        Ok((
            ExtendedState {
                iem: next_iem,
                tau,
            },
            arrow,
        ))
    }
}

/// Result of suspension sampling, with the rejection count for rate
/// diagnostics.
#[derive(Debug, Clone)]
pub struct SuspensionSample<S: Scalar> {
    pub tau: Vec<S>,
    pub tries: u64,
}

/// Rejection-samples `tau` uniformly from `[-1, 1]^A` until it lands in
/// `Theta_pi`; deterministic per seed.
pub fn sample_suspension<S: Scalar>(
    pi: &PermutationPair,
    seed: u64,
    max_tries: u64,
) -> Result<SuspensionSample<S>> {
    let d = pi.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7375_7370);
    for tries in 1..=max_tries {
        let tau: Vec<S> = (0..d)
            .map(|_| {
                let numer = rng.gen_range(-(1i64 << 53) + 1..1i64 << 53);
                S::from_dyadic(numer, 53)
            })
            .collect();
        if classify_cone(pi, &tau).in_cone() {
            return Ok(SuspensionSample { tau, tries });
        }
    }
    Err(Error::Sampling {
        tries: max_tries,
        rate: 1.0 / max_tries as f64,
    })
}

/// One recorded state of an extension orbit.
#[derive(Debug, Clone)]
pub struct ExtSnapshot<S: Scalar> {
    pub pi: PermutationPair,
    pub lambda: Vec<S>,
    pub tau: Vec<S>,
    /// Cumulative log of the length rescalings applied so far (float backend;
    /// zero for exact runs).
    pub log_lambda_scale: f64,
    /// Cumulative log of the tau sup-norm rescalings.
    pub log_tau_scale: f64,
}

/// A forward run of the natural extension with a designated "present" index.
///
/// Indices below `present` serve as the approximate backward orbit; genuine
/// backward orbits are approximated by forward runs read in reverse.
#[derive(Debug, Clone)]
pub struct ExtOrbit<S: Scalar> {
    states: Vec<ExtSnapshot<S>>,
    arrows: Vec<Arrow>,
    zorich: Vec<u32>,
    present: usize,
    /// Set when a connection shortened the requested run.
    pub truncated_by_connection: Option<Error>,
}

impl<S: Scalar> ExtOrbit<S> {
    pub fn len(&self) -> usize {
        self.arrows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrows.is_empty()
    }

    pub fn present(&self) -> usize {
        self.present
    }

    pub fn state(&self, i: usize) -> &ExtSnapshot<S> {
        &self.states[i]
    }

    pub fn states(&self) -> &[ExtSnapshot<S>] {
        &self.states
    }

    pub fn arrows(&self) -> &[Arrow] {
        &self.arrows
    }

    /// Arrow from state `i` to state `i+1`.
    pub fn arrow(&self, i: usize) -> &Arrow {
        &self.arrows[i]
    }

    pub fn zorich_time(&self, i: usize) -> u32 {
        self.zorich[i]
    }
}

/// Runs the extension forward `past_depth + future_depth` steps and declares
/// index `past_depth` the present.
pub fn synthesize_past<S: Scalar>(
    pi: &PermutationPair,
    lambda: Vec<S>,
    tau: Vec<S>,
    past_depth: usize,
    future_depth: usize,
) -> Result<ExtOrbit<S>> {
    let iem = StandardIem::new(pi.clone(), lambda)?;
    let mut state = ExtendedState::new(iem, tau)?;
    let total = past_depth + future_depth;
    let mut states = Vec::with_capacity(total + 1);
    let mut arrows = Vec::with_capacity(total);
    let mut zorich = vec![0u32];
    let mut log_lambda_scale = 0.0f64;
    let mut log_tau_scale = 0.0f64;
    let snapshot = |s: &ExtendedState<S>, ll: f64, lt: f64| ExtSnapshot {
        pi: s.iem().pi().clone(),
        lambda: s.iem().lambda().to_vec(),
        tau: s.tau().to_vec(),
        log_lambda_scale: ll,
        log_tau_scale: lt,
    };
    states.push(snapshot(&state, 0.0, 0.0));
    let mut truncated = None;
    for _ in 0..total {
        match state.step() {
            Ok((mut next, arrow)) => {
                if S::renormalizes() {
                    let (renormed, ll, lt) = next.renormalized();
                    next = renormed;
                    log_lambda_scale += ll;
                    log_tau_scale += lt;
                }
                let change = arrows
                    .last()
                    .map(|p: &Arrow| p.kind != arrow.kind)
                    .unwrap_or(false);
                zorich.push(zorich.last().unwrap() + u32::from(change));
                arrows.push(arrow);
                states.push(snapshot(&next, log_lambda_scale, log_tau_scale));
                state = next;
            }
            Err(e) => {
                truncated = Some(e);
                break;
            }
        }
    }
    if arrows.len() <= past_depth && truncated.is_some() {
        // not even the past survived; caller cannot use this orbit
        return Err(truncated.unwrap());
    }
    Ok(ExtOrbit {
        states,
        arrows,
        zorich,
        present: past_depth,
        truncated_by_connection: truncated,
    })
}

/// Like [`synthesize_past`] but with depths counted in Zorich steps, the
/// clock of every exponential-rate statement.
pub fn synthesize_past_zorich<S: Scalar>(
    pi: &PermutationPair,
    lambda: Vec<S>,
    tau: Vec<S>,
    past_zorich: usize,
    future_zorich: usize,
) -> Result<ExtOrbit<S>> {
    // generous elementary-step budget; extended adaptively
    let mut budget = 8 * (past_zorich + future_zorich) + 64;
    loop {
        let orbit = synthesize_past(pi, lambda.clone(), tau.clone(), 0, budget)?;
        let z_total = orbit.zorich_time(orbit.len());
        if (z_total as usize) < past_zorich + future_zorich + 1 {
            if orbit.truncated_by_connection.is_some() {
                return Err(orbit.truncated_by_connection.unwrap());
            }
            budget *= 2;
            continue;
        }
        let present = (0..=orbit.len())
            .find(|&i| orbit.zorich_time(i) as usize >= past_zorich)
            .expect("zorich time reaches past depth");
        let end = (0..=orbit.len())
            .find(|&i| orbit.zorich_time(i) as usize >= past_zorich + future_zorich)
            .expect("zorich time reaches full depth");
        let mut trimmed = orbit;
        trimmed.states.truncate(end + 1);
        trimmed.arrows.truncate(end);
        trimmed.zorich.truncate(end + 1);
        trimmed.present = present;
        return Ok(trimmed);
    }
}

fn renorm_lambda<S: Scalar>(iem: StandardIem<S>) -> (StandardIem<S>, f64) {
    let total = iem.total();
    let log = total.to_f64().ln();
    let lambda = iem.lambda().iter().map(|l| l.div(&total)).collect();
    (
        StandardIem::new(iem.pi().clone(), lambda).expect("rescaling preserves positivity"),
        log,
    )
}

fn renorm_tau<S: Scalar>(tau: Vec<S>) -> (Vec<S>, f64) {
    let mut sup = S::zero();
    for t in &tau {
        let a = t.abs();
        if a > sup {
            sup = a;
        }
    }
    let log = sup.to_f64().ln();
    (tau.iter().map(|t| t.div(&sup)).collect(), log)
}

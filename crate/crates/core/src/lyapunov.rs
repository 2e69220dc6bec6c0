//! The Zorich cocycle over the induction: Lyapunov spectrum estimation,
//! Oseledets frames `(q, v, w)` along a synthesized orbit, the scale
//! coefficients relating frames at different indices, and the membership
//! predicate used to certify interior maxima of limit shapes.
//!
//! All cocycle numerics run in the double-double backend; the orbit driving
//! them may live in either backend (the arrows are what matters).

use std::ops::Range;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::combinatorics::{Arrow, Letter, PermutationPair, RauzyDiagram};
use crate::induction::{sample_lengths, StandardIem};
use crate::scalar::{dd_div, Dd, Scalar};
use crate::suspension::{sample_suspension, ExtOrbit, ExtendedState};
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// small double-double vector helpers

pub(crate) fn dot(a: &[Dd], b: &[Dd]) -> Dd {
    let mut acc = Dd::from(0.0);
    for (x, y) in a.iter().zip(b) {
        acc += *x * *y;
    }
    acc
}

pub(crate) fn norm(a: &[Dd]) -> Dd {
    dot(a, a).sqrt()
}

fn scale_in_place(a: &mut [Dd], s: Dd) {
    for x in a {
        *x *= s;
    }
}

fn axpy(y: &mut [Dd], alpha: Dd, x: &[Dd]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

/// Forward cocycle action of one arrow on a function-like vector.
#[inline]
pub(crate) fn push_forward(v: &mut [Dd], arrow: &Arrow) {
    let w = v[arrow.winner.index()];
    v[arrow.loser.index()] += w;
}

/// Inverse-transpose action (how lengths and suspension data transform).
#[inline]
fn push_covector(v: &mut [Dd], arrow: &Arrow) {
    let l = v[arrow.loser.index()];
    v[arrow.winner.index()] -= l;
}

/// Modified Gram-Schmidt; accumulates `ln` of each diagonal normalization in
/// `logs`.
fn mgs(frame: &mut [Vec<Dd>], logs: &mut [f64]) {
    for i in 0..frame.len() {
        for j in 0..i {
            let p = dot(&frame[i], &frame[j]);
            let (head, tail) = frame.split_at_mut(i);
            axpy(&mut tail[0], -p, &head[j]);
        }
        let n = norm(&frame[i]);
        logs[i] += n.ln().hi();
        let inv = dd_div(Dd::from(1.0), n);
        scale_in_place(&mut frame[i], inv);
    }
}

/// Projects each frame vector onto the span of an orthonormal `basis`.
fn project_onto(frame: &mut [Vec<Dd>], basis: &[Vec<Dd>]) {
    let d = basis.first().map(|b| b.len()).unwrap_or(0);
    for v in frame.iter_mut() {
        let mut out = vec![Dd::from(0.0); d];
        for b in basis {
            let p = dot(v, b);
            axpy(&mut out, p, b);
        }
        *v = out;
    }
}

/// Orthonormal basis (double-double) spanning the given integer columns;
/// exactly `expected_rank` vectors are kept.
fn orthonormal_span(columns: Vec<Vec<Dd>>, expected_rank: usize) -> Vec<Vec<Dd>> {
    let mut basis: Vec<Vec<Dd>> = Vec::with_capacity(expected_rank);
    for mut c in columns {
        for b in &basis {
            let p = dot(&c, b);
            axpy(&mut c, -p, b);
        }
        let n = norm(&c);
        if n.hi() > 1e-9 {
            let inv = dd_div(Dd::from(1.0), n);
            scale_in_place(&mut c, inv);
            basis.push(c);
            if basis.len() == expected_rank {
                break;
            }
        }
    }
    assert_eq!(basis.len(), expected_rank, "rank deficit in span basis");
    basis
}

/// Orthonormal bases of `H(pi) = Im Omega(pi)` and of `ker Omega(pi)`.
pub fn invariant_bases(pi: &PermutationPair) -> Result<(Vec<Vec<Dd>>, Vec<Vec<Dd>>)> {
    let d = pi.len();
    let omega = pi.omega().to_imat();
    let two_g = 2 * pi.genus()?;
    let columns: Vec<Vec<Dd>> = (0..d)
        .map(|j| (0..d).map(|i| Dd::from_bigint(omega.get(i, j))).collect())
        .collect();
    let h_basis = orthonormal_span(columns, two_g);
    let kernel: Vec<Vec<Dd>> = omega
        .kernel_basis()
        .into_iter()
        .map(|v| v.iter().map(Dd::from_bigint).collect())
        .collect();
    let ker_basis = orthonormal_span(kernel, d - two_g);
    Ok((h_basis, ker_basis))
}

// ---------------------------------------------------------------------------
// spectrum estimation

/// Estimated Lyapunov spectrum of the Zorich-accelerated cocycle, in units of
/// inverse Zorich time.
#[derive(Debug, Clone)]
pub struct SpectrumEstimate {
    /// Full-space exponents, descending.
    pub thetas: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Exponents restricted to `H(pi)` (2g values, descending).
    pub h_thetas: Vec<f64>,
    pub h_stderr: Vec<f64>,
    /// Exponents on the quotient by `H(pi)` (d - 2g values; all should be 0).
    pub quotient: Vec<f64>,
    pub quotient_stderr: Vec<f64>,
    /// Deviation exponent: 0 for genus 2, `theta_3/theta_1` for genus >= 3.
    pub omega_exponent: f64,
    pub genus: usize,
    pub zorich_steps: usize,
    pub rv_steps: usize,
    /// Set when `theta_1 - theta_2` fails to clear 3 combined standard
    /// errors.
    pub gap_warning: bool,
}

impl SpectrumEstimate {
    /// Top-two ratio `theta_2 / theta_1`.
    pub fn ratio21(&self) -> f64 {
        self.h_thetas[1] / self.h_thetas[0]
    }

    /// Merge across independent seeds: means of exponents, per-seed scatter
    /// folded into the combined standard error.
    pub fn merge(runs: &[SpectrumEstimate]) -> SpectrumEstimate {
        assert!(!runs.is_empty());
        let k = runs.len() as f64;
        let avg = |f: fn(&SpectrumEstimate) -> &Vec<f64>| -> Vec<f64> {
            let n = f(&runs[0]).len();
            (0..n)
                .map(|i| runs.iter().map(|r| f(r)[i]).sum::<f64>() / k)
                .collect()
        };
        let err = |f: fn(&SpectrumEstimate) -> &Vec<f64>| -> Vec<f64> {
            let n = f(&runs[0]).len();
            (0..n)
                .map(|i| {
                    (runs.iter().map(|r| f(r)[i].powi(2)).sum::<f64>() / k).sqrt() / k.sqrt()
                })
                .collect()
        };
        let mut out = runs[0].clone();
        out.thetas = avg(|r| &r.thetas);
        out.stderr = err(|r| &r.stderr);
        out.h_thetas = avg(|r| &r.h_thetas);
        out.h_stderr = err(|r| &r.h_stderr);
        out.quotient = avg(|r| &r.quotient);
        out.quotient_stderr = err(|r| &r.quotient_stderr);
        out.zorich_steps = runs.iter().map(|r| r.zorich_steps).sum();
        out.rv_steps = runs.iter().map(|r| r.rv_steps).sum();
        out.omega_exponent = if out.genus <= 2 {
            0.0
        } else {
            out.h_thetas[2] / out.h_thetas[0]
        };
        out.gap_warning = (out.h_thetas[0] - out.h_thetas[1])
            <= 3.0 * out.h_stderr[0].hypot(out.h_stderr[1]);
        out
    }
}

/// Bootstrap block length, in Zorich steps: long enough to decorrelate the
/// renormalization increments.
const BOOTSTRAP_BLOCK: usize = 32;
const BOOTSTRAP_RESAMPLES: usize = 200;

/// Runs the Zorich-accelerated natural extension from seeded `(lambda, tau)`
/// and estimates the Lyapunov exponents of the extended cocycle by pushing
/// orthonormal frames: the full space, `H(pi)` (re-projected each step), and
/// the quotient via the dual action on `ker Omega`.
///
/// Frames re-orthonormalize once per Zorich step; an alignment warm-up of
/// `min(zorich_steps/10, 256)` steps is discarded. Standard errors come from
/// a block bootstrap over Zorich-step increments.
pub fn estimate_spectrum(
    pi: &PermutationPair,
    lambda_seed: u64,
    tau_seed: u64,
    zorich_steps: usize,
    n_exponents: usize,
) -> Result<SpectrumEstimate> {
    let d = pi.len();
    let genus = pi.genus()?;
    if genus < 1 {
        return Err(Error::Malformed("genus must be at least 1".into()));
    }
    let n_full = n_exponents.clamp(1, d);
    let two_g = 2 * genus;
    let diagram = RauzyDiagram::build(pi)?;
    let bases: Vec<(Vec<Vec<Dd>>, Vec<Vec<Dd>>)> = diagram
        .vertices()
        .iter()
        .map(invariant_bases)
        .collect::<Result<_>>()?;

    let lambda: Vec<Dd> = sample_lengths(d, lambda_seed, 64);
    let tau: Vec<Dd> = sample_suspension(pi, tau_seed, 1_000_000)?.tau;
    let mut state = ExtendedState::new(StandardIem::new(pi.clone(), lambda)?, tau)?;
    let mut vertex = diagram
        .vertex_id(pi)
        .ok_or_else(|| Error::Internal("start vertex missing from its own diagram".into()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(lambda_seed ^ tau_seed.rotate_left(17) ^ 0x5370);
    let mut full: Vec<Vec<Dd>> = (0..n_full)
        .map(|_| (0..d).map(|_| Dd::from(rng.gen_range(-1.0..1.0))).collect())
        .collect();
    let mut full_logs = vec![0.0f64; n_full];
    mgs(&mut full, &mut full_logs);
    full_logs.fill(0.0);
    let mut h_frame = bases[vertex].0.clone();
    let mut h_logs = vec![0.0f64; two_g];
    let mut ker_frame = bases[vertex].1.clone();
    let mut ker_logs = vec![0.0f64; d - two_g];

    let warmup = (zorich_steps / 10).min(256);
    let total_blocks = warmup + zorich_steps;
    let n_series = n_full + two_g + (d - two_g);
    let mut blocks: Vec<Vec<f64>> = vec![Vec::new(); n_series];
    let mut block_acc = vec![0.0f64; n_series];
    let mut in_block = 0usize;

    let mut z = 0usize;
    let mut rv_steps = 0usize;
    let mut prev_kind = None;
    let mut snapshot = (full_logs.clone(), h_logs.clone(), ker_logs.clone());
    while z < total_blocks {
        let (next, arrow) = state.step().map_err(|e| match e {
            Error::Connection { gap, .. } => Error::Connection {
                step: rv_steps,
                gap,
            },
            other => other,
        })?;
        if prev_kind.is_some() && prev_kind != Some(arrow.kind) {
            // block boundary: orthonormalize, re-project, record increments
            mgs(&mut full, &mut full_logs);
            project_onto(&mut h_frame, &bases[vertex].0);
            mgs(&mut h_frame, &mut h_logs);
            project_onto(&mut ker_frame, &bases[vertex].1);
            mgs(&mut ker_frame, &mut ker_logs);
            z += 1;
            if z > warmup {
                let now: Vec<f64> = full_logs
                    .iter()
                    .chain(h_logs.iter())
                    .chain(ker_logs.iter())
                    .copied()
                    .collect();
                let before: Vec<f64> = snapshot
                    .0
                    .iter()
                    .chain(snapshot.1.iter())
                    .chain(snapshot.2.iter())
                    .copied()
                    .collect();
                for (i, (a, b)) in now.iter().zip(&before).enumerate() {
                    block_acc[i] += a - b;
                }
                in_block += 1;
                if in_block == BOOTSTRAP_BLOCK {
                    for (i, acc) in block_acc.iter_mut().enumerate() {
                        blocks[i].push(*acc);
                        *acc = 0.0;
                    }
                    in_block = 0;
                }
            } else if z == warmup {
                full_logs.fill(0.0);
                h_logs.fill(0.0);
                ker_logs.fill(0.0);
            }
            snapshot = (full_logs.clone(), h_logs.clone(), ker_logs.clone());
        }
        for v in full.iter_mut() {
            push_forward(v, &arrow);
        }
        for v in h_frame.iter_mut() {
            push_forward(v, &arrow);
        }
        for v in ker_frame.iter_mut() {
            push_covector(v, &arrow);
        }
        prev_kind = Some(arrow.kind);
        rv_steps += 1;
        let renormed = next.renormalized().0;
        vertex = diagram
            .vertex_id(renormed.iem().pi())
            .ok_or_else(|| Error::Internal("left the Rauzy class".into()))?;
        state = renormed;
    }

    let per_z = |logs: &[f64]| -> Vec<f64> {
        logs.iter().map(|l| l / zorich_steps as f64).collect()
    };
    let thetas = per_z(&full_logs);
    let h_thetas = per_z(&h_logs);
    let quotient: Vec<f64> = ker_logs
        .iter()
        .map(|l| -(l / zorich_steps as f64))
        .collect();

    let boot_seed = lambda_seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ tau_seed;
    let stderr_of = |offset: usize, count: usize| -> Vec<f64> {
        (offset..offset + count)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(boot_seed.wrapping_add(i as u64));
                bootstrap_stderr(&blocks[i], &mut rng)
            })
            .collect()
    };
    let stderr = stderr_of(0, n_full);
    let h_stderr = stderr_of(n_full, two_g);
    let quotient_stderr = stderr_of(n_full + two_g, d - two_g);

    let omega_exponent = if genus <= 2 {
        0.0
    } else {
        h_thetas[2] / h_thetas[0]
    };
    let gap_warning =
        genus >= 2 && (h_thetas[0] - h_thetas[1]) <= 3.0 * h_stderr[0].hypot(h_stderr[1]);

    Ok(SpectrumEstimate {
        thetas,
        stderr,
        h_thetas,
        h_stderr,
        quotient,
        quotient_stderr,
        omega_exponent,
        genus,
        zorich_steps,
        rv_steps,
        gap_warning,
    })
}

fn bootstrap_stderr(block_sums: &[f64], rng: &mut ChaCha8Rng) -> f64 {
    if block_sums.len() < 4 {
        return f64::INFINITY;
    }
    let n = block_sums.len();
    let mut estimates = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    for _ in 0..BOOTSTRAP_RESAMPLES {
        let mut total = 0.0;
        for _ in 0..n {
            total += block_sums[rng.gen_range(0..n)];
        }
        estimates.push(total / (n * BOOTSTRAP_BLOCK) as f64);
    }
    let mean = estimates.iter().sum::<f64>() / estimates.len() as f64;
    let var =
        estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (estimates.len() - 1) as f64;
    var.sqrt()
}

// ---------------------------------------------------------------------------
// Oseledets frame along a synthesized orbit

/// Frame data at one orbit index.
#[derive(Debug, Clone)]
pub struct FrameIndex {
    /// Positive unit vector spanning the top Oseledets direction.
    pub q: Vec<Dd>,
    /// Unit vector orthogonal to `q` spanning (with `q`) the top 2-space;
    /// sign chosen coherently along the orbit.
    pub v: Vec<Dd>,
    /// `t = <lambda, v> / <lambda, q>`.
    pub t: Dd,
    /// `w = v - t q`: log-slope vector, orthogonal to `lambda`.
    pub w: Vec<Dd>,
    /// Cumulative `log Theta_1` from the window start to this index.
    pub log_theta1: f64,
    /// Cumulative `log Theta_2` from the window start to this index.
    pub log_theta2: f64,
}

/// One step of 2-frame transport: `B q[n] = c q[n+1]`,
/// `B v[n] = a q[n+1] + b v[n+1] (+ residual)`.
#[derive(Debug, Clone, Copy)]
pub struct FrameStep {
    pub log_c: f64,
    pub a: f64,
    pub log_b: f64,
    /// Norm of the part of `B v[n]` outside the emitted 2-frame; measures
    /// Oseledets convergence.
    pub residual: f64,
}

/// Oseledets frames over a window of orbit indices.
#[derive(Debug, Clone)]
pub struct OseledetsFrame {
    start: usize,
    entries: Vec<FrameIndex>,
    steps: Vec<FrameStep>,
}

/// Backward transport matrix `[[Theta1, Theta_cross], [0, Theta2]]` between
/// two window indices, in sign/log form (raw values underflow for long
/// windows).
#[derive(Debug, Clone, Copy)]
pub struct ScaleCoefficients {
    pub log_theta1: f64,
    pub log_theta2: f64,
    pub cross_sign: i8,
    pub cross_log: f64,
}

impl ScaleCoefficients {
    pub fn theta1(&self) -> f64 {
        self.log_theta1.exp()
    }
    pub fn theta2(&self) -> f64 {
        self.log_theta2.exp()
    }
    pub fn cross(&self) -> f64 {
        f64::from(self.cross_sign) * self.cross_log.exp()
    }
}

impl OseledetsFrame {
    pub fn start(&self) -> usize {
        self.start
    }

    /// One past the last covered orbit index.
    pub fn end(&self) -> usize {
        self.start + self.entries.len()
    }

    pub fn at(&self, orbit_index: usize) -> &FrameIndex {
        &self.entries[orbit_index - self.start]
    }

    /// Transport step from `orbit_index` to `orbit_index + 1`.
    pub fn step(&self, orbit_index: usize) -> &FrameStep {
        &self.steps[orbit_index - self.start]
    }

    pub fn indices(&self) -> Range<usize> {
        self.start..self.end()
    }

    /// Composes the per-step transport over window indices `m..n`.
    pub fn scale_coefficients(&self, m: usize, n: usize) -> ScaleCoefficients {
        assert!(self.start <= m && m <= n && n < self.end());
        // fold [[1/c, -a/(bc)], [0, 1/b]] left to right
        let mut log_t1 = 0.0f64;
        let mut log_t2 = 0.0f64;
        let mut cross_sign = 0i8;
        let mut cross_log = f64::NEG_INFINITY;
        for k in m..n {
            let s = &self.steps[k - self.start];
            // cross' = theta1 * (-a/(bc)) + cross / b
            let term1_sign = if s.a > 0.0 {
                -1i8
            } else if s.a < 0.0 {
                1
            } else {
                0
            };
            let term1_log = log_t1 + s.a.abs().ln() - s.log_b - s.log_c;
            let term2_log = cross_log - s.log_b;
            let (ns, nl) = signed_log_add(term1_sign, term1_log, cross_sign, term2_log);
            cross_sign = ns;
            cross_log = nl;
            log_t1 -= s.log_c;
            log_t2 -= s.log_b;
        }
        ScaleCoefficients {
            log_theta1: log_t1,
            log_theta2: log_t2,
            cross_sign,
            cross_log,
        }
    }
}

/// Signed log-domain addition: `s1*exp(l1) + s2*exp(l2)` as (sign, log).
fn signed_log_add(s1: i8, l1: f64, s2: i8, l2: f64) -> (i8, f64) {
    if s1 == 0 || l1 == f64::NEG_INFINITY {
        return (s2, l2);
    }
    if s2 == 0 || l2 == f64::NEG_INFINITY {
        return (s1, l1);
    }
    let (hi_s, hi_l, lo_s, lo_l) = if l1 >= l2 { (s1, l1, s2, l2) } else { (s2, l2, s1, l1) };
    let ratio = (lo_l - hi_l).exp() * f64::from(lo_s) * f64::from(hi_s);
    let combined = 1.0 + ratio;
    if combined == 0.0 {
        return (0, f64::NEG_INFINITY);
    }
    if combined < 0.0 {
        return (-hi_s, hi_l + (-combined).ln());
    }
    (hi_s, hi_l + combined.ln())
}

/// Pushes a 2-frame along the whole orbit and emits normalized Oseledets
/// data at every index of `window`.
///
/// `q` at an index is the normalized image of a positive vector under the
/// cocycle block from orbit start (the fabricated past); `v` is the second
/// orthonormalized vector, its sign chosen so every per-step `Theta_2`
/// coefficient is positive; at the first window index the sign makes the
/// largest-magnitude entry of `v` positive. Window indices need enough past
/// behind them; downstream checks must be stable under doubling it.
pub fn oseledets_frame<S: Scalar>(
    orbit: &ExtOrbit<S>,
    window: Range<usize>,
) -> Result<OseledetsFrame> {
    let n_states = orbit.len() + 1;
    if window.end > n_states || window.start >= window.end {
        return Err(Error::DepthExceeded {
            requested: window.end,
            available: n_states,
        });
    }
    let d = orbit.state(0).pi.len();
    let mut run_q: Vec<Dd> = vec![Dd::from(1.0); d];
    let mut run_v: Vec<Dd> = (0..d)
        .map(|i| Dd::from(if i % 2 == 0 { 1.0 } else { -1.0 } * (1.0 + 0.31 * i as f64)))
        .collect();
    normalize_pair(&mut run_q, &mut run_v);

    let mut entries: Vec<FrameIndex> = Vec::with_capacity(window.len());
    let mut steps: Vec<FrameStep> = Vec::new();
    let mut prev_emitted: Option<(Vec<Dd>, Vec<Dd>)> = None;
    let mut cum_t1 = 0.0f64;
    let mut cum_t2 = 0.0f64;

    for idx in 0..n_states {
        if window.contains(&idx) {
            // emit normalized copies without disturbing the running pair
            let mut q = run_q.clone();
            let mut v = run_v.clone();
            normalize_pair(&mut q, &mut v);
            if q.iter().any(|x| !(x.hi() > 0.0)) {
                return Err(Error::Convergence(format!(
                    "q not strictly positive at orbit index {idx}; deepen the past"
                )));
            }
            match &prev_emitted {
                None => {
                    let imax = (0..d)
                        .max_by(|&i, &j| v[i].abs().partial_cmp(&v[j].abs()).unwrap())
                        .unwrap();
                    if v[imax].hi() < 0.0 {
                        scale_in_place(&mut v, Dd::from(-1.0));
                    }
                }
                Some((pq, pv)) => {
                    // transport the previous emitted pair one arrow forward
                    // and expand it in the new emitted pair
                    let arrow = orbit.arrow(idx - 1);
                    let mut bq = pq.clone();
                    push_forward(&mut bq, arrow);
                    let mut bv = pv.clone();
                    push_forward(&mut bv, arrow);
                    let c = dot(&bq, &q).hi();
                    let a = dot(&bv, &q).hi();
                    let mut b = dot(&bv, &v).hi();
                    if b < 0.0 {
                        scale_in_place(&mut v, Dd::from(-1.0));
                        b = -b;
                    }
                    let mut resid = bv.clone();
                    axpy(&mut resid, Dd::from(-a), &q);
                    axpy(&mut resid, Dd::from(-b), &v);
                    let residual = norm(&resid).hi();
                    if !(c > 0.0) || b == 0.0 {
                        return Err(Error::Convergence(format!(
                            "degenerate frame transport at index {idx}"
                        )));
                    }
                    steps.push(FrameStep {
                        log_c: c.ln(),
                        a,
                        log_b: b.ln(),
                        residual,
                    });
                    cum_t1 -= c.ln();
                    cum_t2 -= b.ln();
                }
            }
            let lambda: Vec<Dd> = crate::scalar::normalized_f64s(&orbit.state(idx).lambda)
                .into_iter()
                .map(Dd::from)
                .collect();
            let t = dd_div(dot(&lambda, &v), dot(&lambda, &q));
            let mut w = v.clone();
            axpy(&mut w, -t, &q);
            prev_emitted = Some((q.clone(), v.clone()));
            entries.push(FrameIndex {
                q,
                v,
                t,
                w,
                log_theta1: cum_t1,
                log_theta2: cum_t2,
            });
        }
        if idx < orbit.len() {
            let arrow = orbit.arrow(idx);
            push_forward(&mut run_q, arrow);
            push_forward(&mut run_v, arrow);
            let at_boundary =
                idx + 1 < orbit.len() && orbit.arrow(idx).kind != orbit.arrow(idx + 1).kind;
            if at_boundary {
                normalize_pair(&mut run_q, &mut run_v);
            }
        }
    }
    Ok(OseledetsFrame {
        start: window.start,
        entries,
        steps,
    })
}

fn normalize_pair(q: &mut Vec<Dd>, v: &mut Vec<Dd>) {
    let nq = norm(q);
    scale_in_place(q, dd_div(Dd::from(1.0), nq));
    let p = dot(v, q);
    let q_copy = q.clone();
    axpy(v, -p, &q_copy);
    let nv = norm(v);
    scale_in_place(v, dd_div(Dd::from(1.0), nv));
}

// ---------------------------------------------------------------------------
// the membership predicate and the independence probe

/// Diagnostics of the interior-maximum membership test at one orbit index.
#[derive(Debug, Clone)]
pub struct UpsilonReport {
    pub member: bool,
    /// (i) the universal first top letter closes the bottom line.
    pub cond_position: bool,
    /// (ii) the next step loses that letter: `lambda_alpha > lambda_a`.
    pub cond_loser: bool,
    /// (iii) `w_a (w_a + w_alpha) < 0`.
    pub cond_sign: bool,
    /// Margins `|w_a|` and `|w_a + w_alpha|` for the delta-refinement.
    pub margin_a: f64,
    pub margin_sum: f64,
}

/// Membership in the positive-measure set that forces interior maxima:
/// letter `a` (the class-wide first top letter) closes the bottom line, loses
/// the next step, and `w_a (w_a + w_alpha) < 0`; the delta-refinement demands
/// both margins exceed `delta`.
pub fn upsilon_membership<S: Scalar>(
    class_first_top: Letter,
    pi: &PermutationPair,
    lambda: &[S],
    w: &[Dd],
    delta: f64,
) -> UpsilonReport {
    let a = class_first_top;
    let cond_position = pi.last_bottom() == a;
    let alpha = pi.last_top();
    let cond_loser = lambda[alpha.index()] > lambda[a.index()];
    let wa = w[a.index()];
    let wsum = wa + w[alpha.index()];
    let cond_sign = (wa * wsum).hi() < 0.0;
    let margin_a = wa.abs().hi();
    let margin_sum = wsum.abs().hi();
    let member =
        cond_position && cond_loser && cond_sign && margin_a > delta && margin_sum > delta;
    UpsilonReport {
        member,
        cond_position,
        cond_loser,
        cond_sign,
        margin_a,
        margin_sum,
    }
}

/// Scans all nonzero nonnegative integer vectors with coordinate sum at most
/// `n_bound` for `|<n, w>| < eps`; returns the first near-violation found.
pub fn rational_independence_probe(w: &[Dd], n_bound: u32, eps: f64) -> Option<Vec<u32>> {
    fn recurse(
        w: &[Dd],
        current: &mut Vec<u32>,
        pos: usize,
        remaining: u32,
        acc: Dd,
        eps: f64,
        started: bool,
    ) -> Option<Vec<u32>> {
        if pos == w.len() {
            if started && acc.abs().hi() < eps {
                return Some(current.clone());
            }
            return None;
        }
        for k in 0..=remaining {
            current[pos] = k;
            let acc2 = acc + Dd::from(k as f64) * w[pos];
            if let Some(hit) = recurse(
                w,
                current,
                pos + 1,
                remaining - k,
                acc2,
                eps,
                started || k > 0,
            ) {
                return Some(hit);
            }
        }
        current[pos] = 0;
        None
    }
    let mut current = vec![0u32; w.len()];
    recurse(w, &mut current, 0, n_bound, Dd::from(0.0), eps, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Rat;
    use crate::suspension::{synthesize_past, synthesize_past_zorich};

    fn pp(text: &str) -> PermutationPair {
        PermutationPair::parse(text).unwrap()
    }

    #[test]
    fn bases_are_orthonormal_and_complementary() {
        for text in ["A B C D / D C B A", "A B C D E / D E C B A"] {
            let pi = pp(text);
            let (h, k) = invariant_bases(&pi).unwrap();
            let d = pi.len();
            let two_g = 2 * pi.genus().unwrap();
            assert_eq!(h.len(), two_g);
            assert_eq!(k.len(), d - two_g);
            for (i, a) in h.iter().enumerate() {
                for (j, b) in h.iter().enumerate() {
                    let p = dot(a, b).hi();
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((p - expect).abs() < 1e-28);
                }
            }
            for a in &h {
                for b in &k {
                    assert!(dot(a, b).hi().abs() < 1e-28);
                }
            }
        }
    }

    #[test]
    fn spectrum_d2_symmetric_pair() {
        let pi = pp("A B / B A");
        let est = estimate_spectrum(&pi, 11, 12, 2_000, 2).unwrap();
        assert_eq!(est.genus, 1);
        assert!(est.h_thetas[0] > 0.0);
        assert!(
            (est.h_thetas[0] + est.h_thetas[1]).abs()
                < 4.0 * est.h_stderr[0].hypot(est.h_stderr[1]),
            "pair sum {} vs stderr {:?}",
            est.h_thetas[0] + est.h_thetas[1],
            est.h_stderr
        );
        assert!(est.quotient.is_empty());
    }

    #[test]
    fn spectrum_genus2_structure() {
        let pi = pp("A B C D / D C B A");
        let est = estimate_spectrum(&pi, 5, 6, 4_000, 4).unwrap();
        assert_eq!(est.genus, 2);
        assert!(est.h_thetas[0] > est.h_thetas[1]);
        assert!(est.h_thetas[1] > 0.0);
        assert!(!est.gap_warning);
        for i in 0..2 {
            let s = est.h_thetas[i] + est.h_thetas[3 - i];
            assert!(
                s.abs() < 5.0 * est.h_stderr[i].hypot(est.h_stderr[3 - i]),
                "pair sum {s}"
            );
        }
        assert_eq!(est.omega_exponent, 0.0);
    }

    #[test]
    fn quotient_exponents_vanish_d5() {
        let pi = pp("A B C D E / D E C B A");
        let est = estimate_spectrum(&pi, 3, 4, 4_000, 5).unwrap();
        assert_eq!(est.quotient.len(), 1);
        assert!(
            est.quotient[0].abs() < 4.0 * est.quotient_stderr[0],
            "quotient {} stderr {}",
            est.quotient[0],
            est.quotient_stderr[0]
        );
    }

    fn frame_setup(seed: u64, past: usize, future: usize) -> (ExtOrbit<Rat>, OseledetsFrame) {
        let pi = pp("A B C D / D C B A");
        let lambda = sample_lengths::<Rat>(4, seed, 2048);
        let tau = sample_suspension::<Rat>(&pi, seed, 100_000).unwrap().tau;
        let orbit = synthesize_past(&pi, lambda, tau, past, future).unwrap();
        let w = past..(past + future + 1);
        let frame = oseledets_frame(&orbit, w).unwrap();
        (orbit, frame)
    }

    #[test]
    fn frame_invariants() {
        let (orbit, frame) = frame_setup(2, 300, 40);
        for idx in frame.indices() {
            let f = frame.at(idx);
            assert!(f.q.iter().all(|x| x.hi() > 0.0), "q positive");
            assert!((dot(&f.q, &f.q).hi() - 1.0).abs() < 1e-24);
            assert!((dot(&f.v, &f.v).hi() - 1.0).abs() < 1e-24);
            assert!(dot(&f.q, &f.v).hi().abs() < 1e-24);
            let lambda: Vec<Dd> = crate::scalar::normalized_f64s(&orbit.state(idx).lambda)
                .into_iter()
                .map(Dd::from)
                .collect();
            assert!(
                dot(&lambda, &f.w).hi().abs() < 1e-10,
                "w orthogonal to lambda"
            );
        }
        for idx in frame.start()..frame.end() - 1 {
            assert!(
                frame.step(idx).residual < 1e-8,
                "residual {}",
                frame.step(idx).residual
            );
        }
    }

    #[test]
    fn scale_coefficients_identity_and_composition() {
        let (_, frame) = frame_setup(4, 300, 60);
        let s = frame.scale_coefficients(310, 310);
        assert_eq!(s.theta1(), 1.0);
        assert_eq!(s.theta2(), 1.0);
        assert_eq!(s.cross(), 0.0);
        let (m, mid, p) = (305, 330, 355);
        let full = frame.scale_coefficients(m, p);
        let left = frame.scale_coefficients(m, mid);
        let right = frame.scale_coefficients(mid, p);
        assert!((full.log_theta1 - (left.log_theta1 + right.log_theta1)).abs() < 1e-9);
        assert!((full.log_theta2 - (left.log_theta2 + right.log_theta2)).abs() < 1e-9);
        // cross composes affinely
        let expect = left.theta1() * right.cross() + left.cross() * right.theta2();
        assert!((full.cross() - expect).abs() < 1e-12 * expect.abs().max(1.0));
    }

    #[test]
    fn genus2_d5_vanishing_minor() {
        // {u_D = u_E} is the equation of H(pi) at this vertex, so at returns
        // of the orbit to it the limit frame satisfies q_D v_E - q_E v_D = 0
        let pi = pp("A B C D E / D E C B A");
        let lambda = sample_lengths::<Rat>(5, 13, 4096);
        let tau = sample_suspension::<Rat>(&pi, 13, 1_000_000).unwrap().tau;
        let orbit = synthesize_past_zorich(&pi, lambda, tau, 220, 200).unwrap();
        let p = orbit.present();
        let ret = (p..=orbit.len())
            .find(|&i| orbit.state(i).pi == pi)
            .expect("orbit revisits the start vertex");
        let frame = oseledets_frame(&orbit, ret..ret + 1).unwrap();
        let f = frame.at(ret);
        let minor = (f.q[3] * f.v[4] - f.q[4] * f.v[3]).abs().hi();
        assert!(minor < 1e-8, "minor {minor}");
    }

    #[test]
    fn upsilon_basics() {
        let pi = pp("A B C D / D C B A"); // bottom ends with A = first top letter
        let a = Letter(0);
        let lambda: Vec<Rat> = sample_lengths(4, 1, 64);
        let w_neg: Vec<Dd> = vec![Dd::from(-0.4), Dd::from(0.1), Dd::from(0.1), Dd::from(0.6)];
        let rep = upsilon_membership(a, &pi, &lambda, &w_neg, 0.0);
        assert!(rep.cond_position);
        // w_a = -0.4, w_a + w_D = 0.2: product negative
        assert!(rep.cond_sign);
        // the delta refinement only strengthens membership
        let rep_d = upsilon_membership(a, &pi, &lambda, &w_neg, 0.1);
        if rep_d.member {
            assert!(rep.member);
        }
        let w_pos: Vec<Dd> = vec![Dd::from(0.4), Dd::from(0.1), Dd::from(0.1), Dd::from(0.6)];
        assert!(!upsilon_membership(a, &pi, &lambda, &w_pos, 0.0).cond_sign);
    }

    #[test]
    fn independence_probe() {
        // constructed violation at n = e_A + e_B
        let w = vec![Dd::from(0.75), Dd::from(-0.75), Dd::from(0.31)];
        let hit = rational_independence_probe(&w, 4, 1e-12).unwrap();
        assert_eq!(hit, vec![1, 1, 0]);
        let w2 = vec![Dd::from(0.7312), Dd::from(-0.2817), Dd::from(0.1411)];
        assert!(rational_independence_probe(&w2, 6, 1e-9).is_none());
    }

    #[test]
    fn signed_log_add_cases() {
        let (s, l) = signed_log_add(1, 0.0, 1, 0.0);
        assert_eq!(s, 1);
        assert!((l - 2.0f64.ln()).abs() < 1e-12);
        let (s, l) = signed_log_add(1, 0.0, -1, 0.0);
        assert_eq!(s, 0);
        assert_eq!(l, f64::NEG_INFINITY);
        let (s, l) = signed_log_add(-1, 1.0, 1, 0.0);
        assert_eq!(s, -1);
        assert!((l - (1.0f64.exp() - 1.0).ln()).abs() < 1e-9);
    }
}

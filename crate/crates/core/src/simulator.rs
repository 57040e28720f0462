//! Method-of-steps solver for difference equations with constant or
//! time-varying delays.
//!
//! The solution is evaluated directly from the recurrence on a uniform grid
//! `t_i = i h`. Past values between grid points are interpolated linearly
//! inside a continuity piece; the jump times that delimit the pieces are
//! tracked explicitly so interpolation never straddles a discontinuity.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashSet};
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::fmt17;
use crate::systems::{DelaySystem, InitialFunction, Sinusoid};

pub const DEFAULT_LATTICE_CAP: usize = 1_000_000;

/// Jump times closer than this are merged.
const JUMP_MERGE: f64 = 1e-12;
/// Varying-delay jump times closer than this many steps are merged.
const VARYING_JUMP_MERGE_STEPS: f64 = 0.25;
/// Relative snapping tolerance (in units of the step) for grid lookups.
const GRID_SNAP: f64 = 1e-9;
const MAX_LOOKUP_DEPTH: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Ordered(f64);

impl Eq for Ordered {}

impl PartialOrd for Ordered {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ordered {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// All sums `sum_i m_i r_i <= horizon` with `m_i >= 0`, sorted and merged
/// within `1e-12`. Includes `0`.
pub fn discontinuity_times(delays: &[f64], horizon: f64) -> Result<Vec<f64>> {
    discontinuity_times_capped(delays, horizon, DEFAULT_LATTICE_CAP)
}

pub fn discontinuity_times_capped(delays: &[f64], horizon: f64, cap: usize) -> Result<Vec<f64>> {
    if delays.is_empty() || delays.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::InvalidInput("delays must be positive".into()));
    }
    if !(horizon > 0.0) {
        return Err(Error::InvalidInput("horizon must be positive".into()));
    }
    let sum_of = |m: &[u32]| m.iter().zip(delays).map(|(&c, &r)| c as f64 * r).sum::<f64>();

    let mut heap = BinaryHeap::new();
    let mut visited: HashSet<Vec<u32>> = HashSet::new();
    let origin = vec![0u32; delays.len()];
    visited.insert(origin.clone());
    heap.push(std::cmp::Reverse((Ordered(0.0), origin)));

    let mut times: Vec<f64> = Vec::new();
    while let Some(std::cmp::Reverse((Ordered(t), m))) = heap.pop() {
        if times.last().is_none_or(|&last| t - last > JUMP_MERGE) {
            times.push(t);
        }
        for i in 0..delays.len() {
            let mut next = m.clone();
            next[i] += 1;
            let s = sum_of(&next);
            if s <= horizon + JUMP_MERGE && !visited.contains(&next) {
                if visited.len() >= cap {
                    return Err(Error::LatticeExplosion { cap });
                }
                visited.insert(next.clone());
                heap.push(std::cmp::Reverse((Ordered(s), next)));
            }
        }
    }
    Ok(times)
}

/// Time-dependent part `delta_r(t)` of a varying delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DelayPerturbation {
    Zero,
    Constant { value: f64 },
    Sinusoid(Sinusoid),
    Table { times: Vec<f64>, values: Vec<f64> },
}

impl DelayPerturbation {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Constant { value } => *value,
            Self::Sinusoid(s) => s.eval(t),
            Self::Table { times, values } => {
                let last = times.len() - 1;
                if t <= times[0] {
                    values[0]
                } else if t >= times[last] {
                    values[last]
                } else {
                    let hi = times.partition_point(|&s| s <= t).min(last);
                    let lo = hi - 1;
                    let w = (t - times[lo]) / (times[hi] - times[lo]);
                    (1.0 - w) * values[lo] + w * values[hi]
                }
            }
        }
    }

    /// Upper bound on the derivative: `|a omega|` for sinusoids, the largest
    /// finite difference for tables.
    pub fn derivative_bound(&self) -> f64 {
        match self {
            Self::Zero | Self::Constant { .. } => 0.0,
            Self::Sinusoid(s) => (s.amplitude * s.omega).abs(),
            Self::Table { times, values } => times
                .windows(2)
                .zip(values.windows(2))
                .map(|(t, v)| (v[1] - v[0]) / (t[1] - t[0]))
                .fold(0.0, f64::max),
        }
    }

    fn is_constant(&self) -> Option<f64> {
        match self {
            Self::Zero => Some(0.0),
            Self::Constant { value } => Some(*value),
            _ => None,
        }
    }
}

/// `r_k(t) = r0_k + delta_k(t)` with `delta_k(t) <= delta` and
/// `d/dt delta_k(t) <= delta1 < 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct VaryingDelay {
    pub r0: f64,
    pub delta: f64,
    pub delta1: f64,
    pub perturbation: DelayPerturbation,
}

impl VaryingDelay {
    pub fn at(&self, t: f64) -> f64 {
        self.r0 + self.perturbation.eval(t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaryingDelayProfile {
    pub delays: Vec<VaryingDelay>,
}

impl VaryingDelayProfile {
    /// Longest delay the profile can reach, `max_k (r0_k + delta_k)`.
    pub fn history(&self) -> f64 {
        self.delays.iter().map(|d| d.r0 + d.delta).fold(0.0, f64::max)
    }

    /// Check the declared bounds against the perturbations on `[0, horizon]`.
    pub fn check(&self, horizon: f64) -> Result<()> {
        const SAMPLES: usize = 20_000;
        for (k, d) in self.delays.iter().enumerate() {
            let index = k + 1;
            let fail = |reason: String| Err(Error::ProfileBoundViolation { index, reason });
            if !(d.r0 > 0.0) {
                return fail(format!("nominal delay {} must be positive", d.r0));
            }
            if !(d.delta1 < 1.0) {
                return fail(format!("derivative bound {} must be below 1", d.delta1));
            }
            if let DelayPerturbation::Table { times, values } = &d.perturbation {
                if times.len() < 2 || times.len() != values.len() || times.windows(2).any(|w| w[1] <= w[0]) {
                    return fail("malformed perturbation table".into());
                }
            }
            let slope = d.perturbation.derivative_bound();
            if slope > d.delta1 + 1e-12 {
                return fail(format!("perturbation slope {slope} exceeds delta1 = {}", d.delta1));
            }
            for i in 0..=SAMPLES {
                let t = horizon * i as f64 / SAMPLES as f64;
                let p = d.perturbation.eval(t);
                if p > d.delta + 1e-12 {
                    return fail(format!("perturbation {p} exceeds delta = {} at t = {t}", d.delta));
                }
                if p <= -d.r0 {
                    return Err(Error::CausalityViolation { index, time: t });
                }
            }
        }
        Ok(())
    }
}

/// Uniformly sampled solution together with its initial function and the
/// jump times it was computed with.
#[derive(Debug, Clone)]
pub struct Trajectory {
    step: f64,
    dim: usize,
    window: f64,
    states: Vec<f64>,
    initial: InitialFunction,
    discontinuities: Vec<f64>,
}

impl Trajectory {
    /// Build a trajectory from externally produced samples `x(i h)`.
    pub fn from_samples(
        step: f64,
        window: f64,
        initial: InitialFunction,
        samples: &[Vec<f64>],
        discontinuities: Vec<f64>,
    ) -> Result<Self> {
        let dim = initial.dim();
        if samples.is_empty() || samples.iter().any(|s| s.len() != dim) {
            return Err(Error::DimensionMismatch("samples must match initial dimension".into()));
        }
        if !(step > 0.0) || !(window > 0.0) {
            return Err(Error::InvalidInput("step and window must be positive".into()));
        }
        let mut jumps = discontinuities;
        if jumps.first() != Some(&0.0) {
            jumps.insert(0, 0.0);
        }
        Ok(Self {
            step,
            dim,
            window,
            states: samples.concat(),
            initial,
            discontinuities: jumps,
        })
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.states.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.step
    }

    pub fn horizon(&self) -> f64 {
        self.time(self.len() - 1)
    }

    /// Length of the history segment used by the L2 window norm.
    pub fn window(&self) -> f64 {
        self.window
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn norm(&self, i: usize) -> f64 {
        self.state(i).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn initial(&self) -> &InitialFunction {
        &self.initial
    }

    pub fn discontinuities(&self) -> &[f64] {
        &self.discontinuities
    }

    /// Samples of the initial function at `-j h` inside `[-window, 0[`.
    pub fn prologue(&self) -> Vec<(f64, Vec<f64>)> {
        let count = (self.window / self.step * (1.0 + 1e-12)).floor() as usize;
        (1..=count)
            .rev()
            .map(|j| {
                let t = -(j as f64) * self.step;
                let mut v = vec![0.0; self.dim];
                self.initial.eval_into(t, &mut v);
                (t, v)
            })
            .collect()
    }

    fn piece_of(&self, u: f64) -> isize {
        let eps = GRID_SNAP * self.step;
        self.discontinuities.partition_point(|&tau| tau <= u + eps) as isize - 1
    }

    /// Value at a sample time `s` taken from continuity piece `piece`
    /// (extrapolating inside the piece when `s` sits on its boundary).
    fn value_in_piece(&self, s: f64, piece: isize, out: &mut [f64]) {
        if piece < 0 {
            self.initial.eval_into(s.min(0.0), out);
            return;
        }
        let last = self.len() - 1;
        let u = (s / self.step).clamp(0.0, last as f64);
        let j = u.round() as usize;
        let in_piece = |i: usize| piece_contains(&self.discontinuities, piece, self.time(i), GRID_SNAP * self.step);
        if (u - j as f64).abs() <= GRID_SNAP && in_piece(j) {
            out.copy_from_slice(self.state(j));
            return;
        }
        let i0 = (u.floor() as usize).min(last);
        let i1 = (i0 + 1).min(last);
        let (a, b) = match (in_piece(i0), in_piece(i1)) {
            (true, true) => (i0, i1),
            (false, true) if i1 < last && in_piece(i1 + 1) => (i1, i1 + 1),
            (false, true) => (i1, i1),
            (true, false) if i0 > 0 && in_piece(i0 - 1) => (i0 - 1, i0),
            (true, false) => (i0, i0),
            (false, false) => {
                // Piece shorter than one step: nearest sample.
                let near = if s - self.time(i0) <= self.time(i1) - s { i0 } else { i1 };
                (near, near)
            }
        };
        interpolate(self.state(a), self.state(b), self.time(a), self.time(b), s, out);
    }

    /// `x(s)` for `s` in `[-window, horizon]`, right-continuous at jumps.
    pub fn value_at(&self, s: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        let eps = GRID_SNAP * self.step;
        if s < -eps {
            self.initial.eval_into(s, &mut out);
        } else {
            self.value_in_piece(s.max(0.0), self.piece_of(s), &mut out);
        }
        out
    }
}

/// `piece_of(t) == piece` for the jump list `jumps`, without a search.
fn piece_contains(jumps: &[f64], piece: isize, t: f64, eps: f64) -> bool {
    if piece < 0 {
        return jumps.first().is_none_or(|&first| first > t + eps);
    }
    let k = piece as usize;
    jumps[k] <= t + eps && jumps.get(k + 1).is_none_or(|&next| next > t + eps)
}

fn interpolate(xa: &[f64], xb: &[f64], ta: f64, tb: f64, s: f64, out: &mut [f64]) {
    if tb == ta {
        out.copy_from_slice(xa);
        return;
    }
    let w = (s - ta) / (tb - ta);
    for ((o, &a), &b) in out.iter_mut().zip(xa).zip(xb) {
        *o = a + w * (b - a);
    }
}

/// Delay law used by the stepping engine.
trait DelayLaw {
    fn delay(&self, k: usize, t: f64) -> f64;
}

struct ConstantDelays<'a>(&'a [f64]);

impl DelayLaw for ConstantDelays<'_> {
    fn delay(&self, k: usize, _t: f64) -> f64 {
        self.0[k]
    }
}

impl DelayLaw for VaryingDelayProfile {
    fn delay(&self, k: usize, t: f64) -> f64 {
        self.delays[k].at(t)
    }
}

struct Engine<'a, L: DelayLaw> {
    system: &'a DelaySystem,
    law: &'a L,
    step: f64,
    dim: usize,
    states: Vec<f64>,
    initial: &'a InitialFunction,
    jumps: &'a [f64],
}

impl<L: DelayLaw> Engine<'_, L> {
    fn piece_of(&self, u: f64) -> isize {
        let eps = GRID_SNAP * self.step;
        self.jumps.partition_point(|&tau| tau <= u + eps) as isize - 1
    }

    fn time(&self, i: usize) -> f64 {
        i as f64 * self.step
    }

    fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    /// `x(s)` using samples `0..computed`.
    fn lookup(&self, s: f64, computed: usize, depth: usize, out: &mut [f64]) {
        let eps = GRID_SNAP * self.step;
        if s < -eps {
            self.initial.eval_into(s, out);
            return;
        }
        let s = s.max(0.0);
        let u = s / self.step;
        let j = u.round();
        if (u - j).abs() <= GRID_SNAP && (j as usize) < computed {
            out.copy_from_slice(self.state(j as usize));
            return;
        }
        let piece = self.piece_of(s);
        let i0 = u.floor() as usize;
        let i1 = i0 + 1;
        let in_piece = |i: usize| i < computed && piece_contains(self.jumps, piece, self.time(i), eps);
        if in_piece(i0) && in_piece(i1) {
            interpolate(self.state(i0), self.state(i1), self.time(i0), self.time(i1), s, out);
            return;
        }
        if depth < MAX_LOOKUP_DEPTH {
            // A jump separates `s` from a neighbouring sample: evaluate the
            // recurrence at `s` itself.
            self.evaluate(s, computed, depth + 1, out);
            return;
        }
        let (a, b) = if in_piece(i1) {
            if in_piece(i1 + 1) { (i1, i1 + 1) } else { (i1, i1) }
        } else if in_piece(i0) {
            if i0 > 0 && in_piece(i0 - 1) { (i0 - 1, i0) } else { (i0, i0) }
        } else {
            let near = i0.min(computed.saturating_sub(1));
            (near, near)
        };
        interpolate(self.state(a), self.state(b), self.time(a), self.time(b), s, out);
    }

    fn evaluate(&self, t: f64, computed: usize, depth: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut past = vec![0.0; self.dim];
        for (k, a) in self.system.matrices().iter().enumerate() {
            let s = t - self.law.delay(k, t);
            self.lookup(s, computed, depth, &mut past);
            for r in 0..self.dim {
                let mut acc = 0.0;
                for c in 0..self.dim {
                    acc += a[(r, c)] * past[c];
                }
                out[r] += acc;
            }
        }
    }

    fn run(mut self, steps: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        for i in 0..=steps {
            self.evaluate(self.time(i), i, 0, &mut x);
            self.states.extend_from_slice(&x);
        }
        self.states
    }
}

fn grid_steps(horizon: f64, step: f64) -> Result<usize> {
    if !(step > 0.0) || !(horizon > 0.0) || !step.is_finite() || !horizon.is_finite() {
        return Err(Error::InvalidInput("step and horizon must be positive".into()));
    }
    Ok((horizon / step - 1e-9).ceil().max(1.0) as usize)
}

/// Default step `min(r_1 / 200, 1e-2)`.
pub fn default_step(system: &DelaySystem) -> f64 {
    (system.min_delay() / 200.0).min(1e-2)
}

/// Default horizon `10 r_N`.
pub fn default_horizon(system: &DelaySystem) -> f64 {
    10.0 * system.max_delay()
}

/// Solve `x(t) = sum_k A_k x(t - r_k)` on `[0, horizon]`.
pub fn simulate(system: &DelaySystem, initial: &InitialFunction, horizon: f64, step: f64) -> Result<Trajectory> {
    let steps = grid_steps(horizon, step)?;
    let limit = system.min_delay() / 10.0;
    if step > limit * (1.0 + 1e-12) {
        return Err(Error::StepTooLarge { step, limit });
    }
    initial.validate(system.dim(), system.max_delay())?;
    let end = steps as f64 * step;
    let jumps = discontinuity_times(system.delays(), end)?;
    let engine = Engine {
        system,
        law: &ConstantDelays(system.delays()),
        step,
        dim: system.dim(),
        states: Vec::with_capacity((steps + 1) * system.dim()),
        initial,
        jumps: &jumps,
    };
    let states = engine.run(steps);
    Ok(Trajectory {
        step,
        dim: system.dim(),
        window: system.max_delay(),
        states,
        initial: initial.clone(),
        discontinuities: jumps,
    })
}

/// Solve `x(t) = sum_k A_k x(t - r_k(t))` with `r_k(t) = r0_k + delta_k(t)`.
///
/// The delays of `system` are ignored; the profile supplies them.
pub fn simulate_varying(
    system: &DelaySystem,
    profile: &VaryingDelayProfile,
    initial: &InitialFunction,
    horizon: f64,
    step: f64,
) -> Result<Trajectory> {
    if profile.delays.len() != system.num_delays() {
        return Err(Error::DimensionMismatch(format!(
            "{} varying delays for {} matrices",
            profile.delays.len(),
            system.num_delays()
        )));
    }
    let steps = grid_steps(horizon, step)?;
    let end = steps as f64 * step;
    profile.check(end)?;
    for i in 0..=steps {
        let t = i as f64 * step;
        for (k, d) in profile.delays.iter().enumerate() {
            let r = d.at(t);
            if r <= 0.0 {
                return Err(Error::CausalityViolation { index: k + 1, time: t });
            }
            if r <= step {
                return Err(Error::StepTooLarge { step, limit: r });
            }
        }
    }
    let history = profile.history();
    initial.validate(system.dim(), history)?;
    let merge = JUMP_MERGE.max(VARYING_JUMP_MERGE_STEPS * step);
    let jumps = propagate_jumps(profile, end, merge, DEFAULT_LATTICE_CAP)?;
    let engine = Engine {
        system,
        law: profile,
        step,
        dim: system.dim(),
        states: Vec::with_capacity((steps + 1) * system.dim()),
        initial,
        jumps: &jumps,
    };
    let states = engine.run(steps);
    Ok(Trajectory {
        step,
        dim: system.dim(),
        window: history,
        states,
        initial: initial.clone(),
        discontinuities: jumps,
    })
}

/// Jump times generated from `t = 0` through `t* - r_k(t*) = tau`, keeping
/// one representative per `merge`-neighbourhood.
fn propagate_jumps(profile: &VaryingDelayProfile, horizon: f64, merge: f64, cap: usize) -> Result<Vec<f64>> {
    let mut known: BTreeSet<Ordered> = BTreeSet::new();
    let mut queue = BinaryHeap::new();
    known.insert(Ordered(0.0));
    queue.push(std::cmp::Reverse(Ordered(0.0)));
    while let Some(std::cmp::Reverse(Ordered(tau))) = queue.pop() {
        for d in &profile.delays {
            let image = match d.perturbation.is_constant() {
                Some(c) => tau + d.r0 + c,
                None => solve_image(d, tau),
            };
            if image > horizon + JUMP_MERGE {
                continue;
            }
            let near = known
                .range(Ordered(image - merge)..=Ordered(image + merge))
                .next()
                .is_some();
            if !near {
                if known.len() >= cap {
                    return Err(Error::LatticeExplosion { cap });
                }
                known.insert(Ordered(image));
                queue.push(std::cmp::Reverse(Ordered(image)));
            }
        }
    }
    Ok(known.into_iter().map(|o| o.0).collect())
}

// t - r(t) is strictly increasing (slope >= 1 - delta1 > 0), so bisection on
// [tau, tau + r0 + delta] brackets the unique root.
fn solve_image(d: &VaryingDelay, tau: f64) -> f64 {
    let g = |t: f64| t - d.at(t) - tau;
    let mut lo = tau;
    let mut hi = tau + d.r0 + d.delta.max(0.0) + 1e-12;
    if g(hi) < 0.0 {
        return hi;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.abs().max(1.0) {
            break;
        }
    }
    hi
}

/// `sqrt(int_{t - w}^{t} ||x(s)||^2 ds)` with `w` the trajectory window,
/// by the trapezoidal rule split at the recorded jumps.
pub fn l2_window_norm(traj: &Trajectory, t: f64) -> Result<f64> {
    let horizon = traj.horizon();
    let eps = GRID_SNAP * traj.step;
    if !(t >= -eps && t <= horizon + eps) {
        return Err(Error::OutOfRange { time: t, start: 0.0, end: horizon });
    }
    let a = t - traj.window;
    let b = t;
    // Breakpoints: window ends plus jumps strictly inside.
    let jumps = &traj.discontinuities;
    let from = jumps.partition_point(|&tau| tau <= a + eps);
    let to = jumps.partition_point(|&tau| tau < b - eps);
    let mut cuts = vec![a];
    cuts.extend_from_slice(&jumps[from..to.max(from)]);
    cuts.push(b);

    let h = traj.step;
    let mut total = 0.0;
    let mut buf = vec![0.0; traj.dim];
    let sq = |s: f64, piece: isize, buf: &mut [f64]| {
        traj.value_in_piece(s, piece, buf);
        buf.iter().map(|v| v * v).sum::<f64>()
    };
    for w in cuts.windows(2) {
        let (u, v) = (w[0], w[1]);
        if v - u <= 0.0 {
            continue;
        }
        let mid = 0.5 * (u + v);
        let piece = if mid < 0.0 { -1 } else { traj.piece_of(mid) };
        // Nodes: u, interior grid points, v.
        let first = (u / h).floor() as i64 + 1;
        let last = (v / h).ceil() as i64 - 1;
        let mut prev_t = u;
        let mut prev_f = sq(u, piece, &mut buf);
        for g in first..=last {
            let s = g as f64 * h;
            if s <= u + eps || s >= v - eps {
                continue;
            }
            // Interior grid nodes belong to this piece.
            let f = if g >= 0 {
                traj.state(g as usize).iter().map(|v| v * v).sum::<f64>()
            } else {
                sq(s, piece, &mut buf)
            };
            total += 0.5 * (s - prev_t) * (prev_f + f);
            prev_t = s;
            prev_f = f;
        }
        let f = sq(v, piece, &mut buf);
        total += 0.5 * (v - prev_t) * (prev_f + f);
    }
    Ok(total.max(0.0).sqrt())
}

/// Decay fit `||x(t)|| ~ amplitude * exp(-rate t)` on `[t_start, T]`.
///
/// The fit uses record points of the norm. Right records (samples not
/// exceeded by any later sample) trace the peaks of a decaying oscillation;
/// left records (not exceeded by any earlier sample) trace the peaks of a
/// growing one. The larger of the two sets is fitted. A negative rate means
/// growth.
pub fn fit_decay(traj: &Trajectory, t_start: f64) -> Result<(f64, f64)> {
    let horizon = traj.horizon();
    if !(t_start < horizon) {
        return Err(Error::OutOfRange { time: t_start, start: 0.0, end: horizon });
    }
    let first = ((t_start.max(0.0) / traj.step) - GRID_SNAP).ceil() as usize;
    let records = |order: &mut dyn Iterator<Item = usize>| {
        let mut running = 0.0f64;
        let mut points: Vec<(f64, f64)> = Vec::new();
        for i in order {
            let v = traj.norm(i);
            if v >= running {
                running = v;
                if v > 0.0 {
                    points.push((traj.time(i), v.ln()));
                }
            }
        }
        points
    };
    let right = records(&mut (first..traj.len()).rev());
    let left = records(&mut (first..traj.len()));
    let points = if left.len() > right.len() { left } else { right };
    if points.len() < 3 {
        return Err(Error::DegenerateFit { found: points.len() });
    }
    let count = points.len() as f64;
    let mean_t = points.iter().map(|p| p.0).sum::<f64>() / count;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / count;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &(t, y) in &points {
        sxy += (t - mean_t) * (y - mean_y);
        sxx += (t - mean_t) * (t - mean_t);
    }
    if sxx <= 0.0 {
        return Err(Error::DegenerateFit { found: points.len() });
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_t;
    Ok((-slope, intercept.exp()))
}

/// CSV with header `t,x1,...,xn`; prologue rows first (negative `t`).
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, mut out: W) -> io::Result<()> {
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((1..=traj.dim).map(|i| format!("x{i}")))
        .collect();
    writeln!(out, "{}", header.join(","))?;
    let mut row = |t: f64, values: &[f64]| -> io::Result<()> {
        let mut line = fmt17(t);
        for v in values {
            line.push(',');
            line.push_str(&fmt17(*v));
        }
        writeln!(out, "{line}")
    };
    for (t, v) in traj.prologue() {
        row(t, &v)?;
    }
    for i in 0..traj.len() {
        row(traj.time(i), traj.state(i))?;
    }
    Ok(())
}

/// Sidecar CSV `k,t_k` listing jump times.
pub fn write_discontinuities_csv<W: Write>(traj: &Trajectory, mut out: W) -> io::Result<()> {
    writeln!(out, "k,t_k")?;
    for (k, t) in traj.discontinuities.iter().enumerate() {
        writeln!(out, "{k},{}", fmt17(*t))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn constant(value: f64) -> InitialFunction {
        InitialFunction::Constant { value: vec![value] }
    }

    #[test]
    fn lattice_for_integer_delays() {
        let t = discontinuity_times(&[1.0, 2.0], 5.0).unwrap();
        assert_eq!(t, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn lattice_empty_beyond_zero() {
        assert_eq!(discontinuity_times(&[2.0], 1.0).unwrap(), vec![0.0]);
    }

    #[test]
    fn lattice_for_root_two_matches_brute_force() {
        let r2 = 2f64.sqrt();
        let got = discontinuity_times(&[1.0, r2], 3.0).unwrap();
        let mut brute = Vec::new();
        for m1 in 0..=4 {
            for m2 in 0..=4 {
                let s = m1 as f64 + m2 as f64 * r2;
                if s <= 3.0 {
                    brute.push(s);
                }
            }
        }
        brute.sort_by(f64::total_cmp);
        assert_eq!(got.len(), brute.len());
        for (a, b) in got.iter().zip(&brute) {
            assert!((a - b).abs() < 1e-12);
        }
        let expected = [0.0, 1.0, r2, 2.0, 1.0 + r2, 2.0 * r2, 3.0];
        for (a, b) in got.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn lattice_cap_is_reported() {
        let err = discontinuity_times_capped(&[1.0, 2f64.sqrt(), 3f64.sqrt()], 60.0, 1000).unwrap_err();
        assert_eq!(err, Error::LatticeExplosion { cap: 1000 });
    }

    #[test]
    fn geometric_staircase() {
        let s = DelaySystem::scalar(&[0.5], &[1.0]).unwrap();
        let traj = simulate(&s, &constant(1.0), 3.0, 0.01).unwrap();
        for i in 0..traj.len() {
            let t = traj.time(i);
            let expected = 0.5f64.powi((t + 1e-9).floor() as i32 + 1);
            assert_relative_eq!(traj.state(i)[0], expected, epsilon = 1e-15);
        }
        assert_eq!(traj.discontinuities(), &[0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn rejects_coarse_step() {
        let s = DelaySystem::scalar(&[0.5], &[1.0]).unwrap();
        assert!(matches!(
            simulate(&s, &constant(1.0), 3.0, 0.2).unwrap_err(),
            Error::StepTooLarge { .. }
        ));
    }

    #[test]
    fn zero_perturbation_matches_constant_delay() {
        let s = DelaySystem::scalar(&[0.4, -0.3], &[1.0, 2f64.sqrt()]).unwrap();
        let phi = InitialFunction::Sinusoid {
            components: vec![Sinusoid { amplitude: 1.0, omega: 2.0, phase: 0.3, offset: 0.5 }],
        };
        let fixed = simulate(&s, &phi, 8.0, 0.01).unwrap();
        let profile = VaryingDelayProfile {
            delays: s
                .delays()
                .iter()
                .map(|&r| VaryingDelay { r0: r, delta: 0.0, delta1: 0.0, perturbation: DelayPerturbation::Zero })
                .collect(),
        };
        let varying = simulate_varying(&s, &profile, &phi, 8.0, 0.01).unwrap();
        assert_eq!(fixed.len(), varying.len());
        for i in 0..fixed.len() {
            assert!((fixed.state(i)[0] - varying.state(i)[0]).abs() <= 1e-12);
        }
    }

    #[test]
    fn causality_violation_detected() {
        let s = DelaySystem::scalar(&[0.4], &[1.0]).unwrap();
        let profile = VaryingDelayProfile {
            delays: vec![VaryingDelay {
                r0: 1.0,
                delta: 0.0,
                delta1: 0.0,
                perturbation: DelayPerturbation::Constant { value: -1.5 },
            }],
        };
        let err = simulate_varying(&s, &profile, &constant(1.0), 5.0, 0.01).unwrap_err();
        assert!(matches!(err, Error::CausalityViolation { index: 1, .. }));
    }

    #[test]
    fn declared_slope_must_cover_perturbation() {
        let s = DelaySystem::scalar(&[0.4], &[1.0]).unwrap();
        let profile = VaryingDelayProfile {
            delays: vec![VaryingDelay {
                r0: 1.0,
                delta: 0.5,
                delta1: 0.1,
                perturbation: DelayPerturbation::Sinusoid(Sinusoid {
                    amplitude: 0.5,
                    omega: 0.5,
                    phase: 0.0,
                    offset: 0.0,
                }),
            }],
        };
        assert!(matches!(
            simulate_varying(&s, &profile, &constant(1.0), 5.0, 0.01).unwrap_err(),
            Error::ProfileBoundViolation { .. }
        ));
    }

    #[test]
    fn l2_norm_of_constant_window() {
        let s = DelaySystem::scalar(&[1.0], &[2.0]).unwrap();
        let traj = simulate(&s, &constant(1.5), 6.0, 0.01).unwrap();
        for t in [0.0, 1.0, 3.3, 6.0] {
            assert_relative_eq!(l2_window_norm(&traj, t).unwrap(), 2f64.sqrt() * 1.5, epsilon = 1e-10);
        }
        assert!(matches!(l2_window_norm(&traj, 6.5).unwrap_err(), Error::OutOfRange { .. }));
    }

    #[test]
    fn l2_norm_of_exponential() {
        let h = 1e-3;
        let samples: Vec<Vec<f64>> = (0..=5000).map(|i| vec![(-(i as f64) * h).exp()]).collect();
        let traj = Trajectory::from_samples(h, 1.0, constant(1.0), &samples, vec![0.0]).unwrap();
        for t in [1.0f64, 2.5, 4.0] {
            let exact = (((-2.0 * (t - 1.0)).exp() - (-2.0 * t).exp()) / 2.0).sqrt();
            let got = l2_window_norm(&traj, t).unwrap();
            assert!(((got - exact) / exact).abs() <= 1e-6, "t={t}: {got} vs {exact}");
        }
    }

    #[test]
    fn l2_norm_at_zero_is_prologue_norm() {
        let pi = std::f64::consts::PI;
        let s = DelaySystem::scalar(&[0.2, -0.05, -0.5], &[1.0, 2f64.sqrt(), 2.0 * pi]).unwrap();
        let phi = InitialFunction::Sinusoid {
            components: vec![Sinusoid { amplitude: 2.0, omega: 1.0, phase: 0.0, offset: 1.0 }],
        };
        let traj = simulate(&s, &phi, 1.0, 1e-3).unwrap();
        let got = l2_window_norm(&traj, 0.0).unwrap();
        assert_relative_eq!(got, (6.0 * pi).sqrt(), max_relative = 1e-9);
    }

    #[test]
    fn fit_exact_exponential() {
        let h = 1e-2;
        let samples: Vec<Vec<f64>> = (0..=2000).map(|i| vec![(-0.5 * i as f64 * h).exp()]).collect();
        let traj = Trajectory::from_samples(h, 1.0, constant(1.0), &samples, vec![0.0]).unwrap();
        let (rate, amp) = fit_decay(&traj, 0.0).unwrap();
        assert!((rate - 0.5).abs() <= 1e-3);
        assert_relative_eq!(amp, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn fit_damped_oscillation() {
        let h = 1e-3;
        let samples: Vec<Vec<f64>> = (0..=40_000)
            .map(|i| {
                let t = i as f64 * h;
                vec![(-0.2 * t).exp() * (5.0 * t).sin().abs()]
            })
            .collect();
        let traj = Trajectory::from_samples(h, 1.0, constant(0.0), &samples, vec![0.0]).unwrap();
        let (rate, _) = fit_decay(&traj, 1.0).unwrap();
        assert!((rate - 0.2).abs() <= 5e-3, "rate {rate}");
    }

    #[test]
    fn fit_needs_three_points() {
        let samples = vec![vec![1.0], vec![3.0], vec![2.0]];
        let traj = Trajectory::from_samples(0.1, 1.0, constant(0.0), &samples, vec![0.0]).unwrap();
        assert!(matches!(fit_decay(&traj, 0.0).unwrap_err(), Error::DegenerateFit { found: 2 }));
    }

    #[test]
    fn fit_growing_oscillation() {
        let h = 1e-3;
        let samples: Vec<Vec<f64>> = (0..=40_000)
            .map(|i| {
                let t = i as f64 * h;
                vec![(0.1 * t).exp() * (5.0 * t).sin().abs()]
            })
            .collect();
        let traj = Trajectory::from_samples(h, 1.0, constant(0.0), &samples, vec![0.0]).unwrap();
        let (rate, _) = fit_decay(&traj, 1.0).unwrap();
        assert!((rate + 0.1).abs() <= 5e-3, "rate {rate}");
    }

    #[test]
    fn csv_layout() {
        let s = DelaySystem::scalar(&[0.5], &[0.1]).unwrap();
        let traj = simulate(&s, &constant(1.0), 0.02, 0.01).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&traj, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,x1");
        // 10 prologue rows, 3 grid rows.
        assert_eq!(lines.len(), 1 + 10 + 3);
        assert!(lines[1].starts_with("-1.0000000000000001e-1,"));
        let mut side = Vec::new();
        write_discontinuities_csv(&traj, &mut side).unwrap();
        assert_eq!(String::from_utf8(side).unwrap().lines().next(), Some("k,t_k"));
    }
}

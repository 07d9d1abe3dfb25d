//! Ground-truth point-process generators and likelihood oracles.
//!
//! Four processes cover the synthetic experiment families:
//! - exponential-kernel linear Hawkes (elementwise decays),
//!   λ^k_t = ν_k + Σ_i α_{k,k_i} exp(−β_{k,k_i}(t−t_i));
//! - self-correcting, λ_t = exp(a·t − b·N_t);
//! - square-wave inhomogeneous Poisson with a constant tail segment;
//! - a long-range dependency process: Poisson distractors (mark 0) and
//!   triggers (mark 1), each trigger spawning one target (mark 2) at
//!   trigger + N(delay_mean, delay_var), dropped if beyond the window.
//!
//! Every generator is a pure function of (params, window, seed) via
//! [`crate::rng::CounterRng`], uses Ogata thinning with an exact
//! dominating rate (recomputed after every proposal), and has a matching
//! oracle: a closed-form or quadrature-based log-likelihood plus a
//! left-limit intensity evaluator, so models trained on simulated data can
//! be scored against the truth (likelihood ratios, calibration).

use crate::events::EventSequence;
use crate::quad::{adaptive_simpson, normal_hazard};
use crate::rng::CounterRng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid parameters: {0}")]
    BadParams(String),
    #[error("sequence incompatible with oracle: {0}")]
    BadSequence(String),
}

// ---------------------------------------------------------------------------
// Exponential-kernel Hawkes
// ---------------------------------------------------------------------------

/// Parameters of the exponential-kernel linear Hawkes process with
/// per-pair decays. `alpha[k][j]` scales the influence of a type-j event
/// on the type-k intensity; `beta[k][j]` is its decay rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpHawkesParams {
    pub nu: Vec<f64>,
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
}

impl ExpHawkesParams {
    /// The univariate process of the classical-recovery suite:
    /// λ_t = 0.5 + Σ 0.5·exp(−(t−t_i)).
    pub fn classical_univariate() -> Self {
        ExpHawkesParams { nu: vec![0.5], alpha: vec![vec![0.5]], beta: vec![vec![1.0]] }
    }

    pub fn num_marks(&self) -> usize {
        self.nu.len()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let k = self.nu.len();
        if k == 0 {
            return Err(SimError::BadParams("nu is empty".into()));
        }
        if self.alpha.len() != k || self.beta.len() != k {
            return Err(SimError::BadParams("alpha/beta must be K×K".into()));
        }
        for row in 0..k {
            if self.alpha[row].len() != k || self.beta[row].len() != k {
                return Err(SimError::BadParams("alpha/beta must be K×K".into()));
            }
        }
        if self.nu.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(SimError::BadParams("nu must be nonnegative and finite".into()));
        }
        if self.alpha.iter().flatten().any(|&a| !(a >= 0.0) || !a.is_finite()) {
            return Err(SimError::BadParams("alpha must be nonnegative and finite".into()));
        }
        if self.beta.iter().flatten().any(|&b| !(b > 0.0) || !b.is_finite()) {
            return Err(SimError::BadParams("beta must be positive and finite".into()));
        }
        Ok(())
    }

    /// Spectral radius of the branching matrix (α_{kj}/β_{kj}); ≥ 1 means
    /// the process is non-stationary. Advisory only — callers may warn.
    pub fn branching_spectral_radius(&self) -> f64 {
        let k = self.nu.len();
        let m: Vec<f64> = (0..k * k)
            .map(|i| self.alpha[i / k][i % k] / self.beta[i / k][i % k])
            .collect();
        // Power iteration on a nonnegative matrix.
        let mut v = vec![1.0; k];
        let mut rho = 0.0;
        for _ in 0..200 {
            let mut w = vec![0.0; k];
            for r in 0..k {
                for c in 0..k {
                    w[r] += m[r * k + c] * v[c];
                }
            }
            let norm = w.iter().map(|x| x.abs()).fold(0.0, f64::max);
            if norm == 0.0 {
                return 0.0;
            }
            rho = norm;
            for x in &mut w {
                *x /= norm;
            }
            v = w;
        }
        rho
    }
}

/// Decayed excitation sums s[k][j] = Σ_{i : k_i = j} exp(−β_{kj}(t − t_i)),
/// maintained at a moving time point (always a right limit).
struct HawkesState<'p> {
    p: &'p ExpHawkesParams,
    s: Vec<f64>, // K×K row-major
    t: f64,
}

impl<'p> HawkesState<'p> {
    fn new(p: &'p ExpHawkesParams, t0: f64) -> Self {
        let k = p.num_marks();
        HawkesState { p, s: vec![0.0; k * k], t: t0 }
    }

    fn advance_to(&mut self, t: f64) {
        debug_assert!(t >= self.t);
        let k = self.p.num_marks();
        let dt = t - self.t;
        if dt > 0.0 {
            for r in 0..k {
                for c in 0..k {
                    self.s[r * k + c] *= (-self.p.beta[r][c] * dt).exp();
                }
            }
        }
        self.t = t;
    }

    /// Intensity vector at the current time point (left limit if no event
    /// has been added at this exact time yet).
    fn intensity(&self) -> Vec<f64> {
        let k = self.p.num_marks();
        (0..k)
            .map(|r| {
                self.p.nu[r]
                    + (0..k).map(|c| self.p.alpha[r][c] * self.s[r * k + c]).sum::<f64>()
            })
            .collect()
    }

    /// Intensity at `t ≥ self.t` without mutating the state.
    fn intensity_at(&self, t: f64) -> Vec<f64> {
        let k = self.p.num_marks();
        let dt = t - self.t;
        (0..k)
            .map(|r| {
                self.p.nu[r]
                    + (0..k)
                        .map(|c| {
                            self.p.alpha[r][c] * self.s[r * k + c] * (-self.p.beta[r][c] * dt).exp()
                        })
                        .sum::<f64>()
            })
            .collect()
    }

    fn add_event(&mut self, mark: usize) {
        let k = self.p.num_marks();
        for r in 0..k {
            self.s[r * k + mark] += 1.0;
        }
    }
}

/// Ogata thinning for the exponential-kernel Hawkes process on [0, T].
/// The total intensity is non-increasing between events, so the value at
/// the current position dominates; it is recomputed after every proposal
/// (accepted or not), which only tightens the bound.
pub fn simulate_hawkes(params: &ExpHawkesParams, t_end: f64, rng: &mut CounterRng) -> Result<EventSequence, SimError> {
    params.validate()?;
    if !(t_end >= 0.0) {
        return Err(SimError::BadParams(format!("t_end = {t_end} must be ≥ 0")));
    }
    let mut times = Vec::new();
    let mut marks = Vec::new();
    if t_end > 0.0 {
        let mut state = HawkesState::new(params, 0.0);
        let mut t = 0.0;
        loop {
            let lambda = state.intensity();
            let bar: f64 = lambda.iter().sum();
            if bar <= 0.0 {
                break;
            }
            let w = rng.exponential(bar);
            if w == 0.0 {
                continue; // measure-zero draw; redraw keeps times strictly increasing
            }
            t += w;
            if t > t_end {
                break;
            }
            let cand = state.intensity_at(t);
            let total: f64 = cand.iter().sum();
            state.advance_to(t);
            if rng.uniform() * bar <= total {
                let mark = pick_mark(&cand, total, rng);
                times.push(t);
                marks.push(mark as u32);
                state.add_event(mark);
            }
        }
    }
    EventSequence::new(times, marks, 0.0, t_end.max(f64::MIN_POSITIVE))
        .map_err(|e| SimError::BadParams(e.to_string()))
}

fn pick_mark(lambda: &[f64], total: f64, rng: &mut CounterRng) -> usize {
    let u = rng.uniform() * total;
    let mut acc = 0.0;
    for (k, &l) in lambda.iter().enumerate() {
        acc += l;
        if u < acc {
            return k;
        }
    }
    lambda.len() - 1
}

/// Closed-form log-likelihood of a sequence under the exponential-kernel
/// Hawkes process: Σ_i log λ^{k_i}(t_i−) minus the compensator, whose
/// integral has the analytic antiderivative
/// Σ_k ν_k(T−t₀) + Σ_i α_{k,k_i}/β_{k,k_i}·(1 − exp(−β_{k,k_i}(T−t_i))).
pub fn hawkes_loglik_oracle(params: &ExpHawkesParams, seq: &EventSequence) -> Result<f64, SimError> {
    params.validate()?;
    let k = params.num_marks();
    if seq.marks().iter().any(|&m| m as usize >= k) {
        return Err(SimError::BadSequence(format!("mark out of range for K = {k}")));
    }
    let mut state = HawkesState::new(params, seq.t_start());
    let mut sum_log = 0.0;
    for (&t, &m) in seq.times().iter().zip(seq.marks()) {
        let lambda = state.intensity_at(t);
        state.advance_to(t);
        sum_log += lambda[m as usize].ln();
        state.add_event(m as usize);
    }
    let t_end = seq.t_end();
    let mut compensator: f64 = params.nu.iter().sum::<f64>() * (t_end - seq.t_start());
    for (&t, &m) in seq.times().iter().zip(seq.marks()) {
        for r in 0..k {
            let a = params.alpha[r][m as usize];
            let b = params.beta[r][m as usize];
            compensator += a / b * (1.0 - (-b * (t_end - t)).exp());
        }
    }
    Ok(sum_log - compensator)
}

/// Compensator increments Λ(t_i) − Λ(t_{i−1}) (total across marks, first
/// increment from t_start), in closed form. Under the true model these
/// are i.i.d. Exp(1) — the time-change residuals used by the KS check
/// and by calibration baselines.
pub fn hawkes_compensator_increments(params: &ExpHawkesParams, seq: &EventSequence) -> Result<Vec<f64>, SimError> {
    params.validate()?;
    let k = params.num_marks();
    let mut state = HawkesState::new(params, seq.t_start());
    let mut out = Vec::with_capacity(seq.len());
    let mut prev = seq.t_start();
    for (&t, &m) in seq.times().iter().zip(seq.marks()) {
        let dt = t - prev;
        let mut inc = params.nu.iter().sum::<f64>() * dt;
        for r in 0..k {
            for c in 0..k {
                let b = params.beta[r][c];
                inc += params.alpha[r][c] / b * state.s[r * k + c] * (1.0 - (-b * dt).exp());
            }
        }
        out.push(inc);
        state.advance_to(t);
        state.add_event(m as usize);
        prev = t;
    }
    Ok(out)
}

/// Left-limit intensities (K rows) at sorted query times in a single
/// forward sweep; a query exactly at an event time sees the pre-event
/// value.
pub fn hawkes_intensity_on_grid(params: &ExpHawkesParams, seq: &EventSequence, ts: &[f64]) -> Result<Vec<Vec<f64>>, SimError> {
    params.validate()?;
    let k = params.num_marks();
    let mut out = vec![Vec::with_capacity(ts.len()); k];
    let mut state = HawkesState::new(params, seq.t_start());
    let mut ev = 0usize;
    for (i, &t) in ts.iter().enumerate() {
        if i > 0 {
            assert!(t >= ts[i - 1], "query grid must be sorted");
        }
        while ev < seq.len() && seq.times()[ev] < t {
            state.advance_to(seq.times()[ev]);
            state.add_event(seq.marks()[ev] as usize);
            ev += 1;
        }
        let lambda = state.intensity_at(t);
        for (r, row) in out.iter_mut().enumerate() {
            row.push(lambda[r]);
        }
    }
    Ok(out)
}

/// Random multivariate Hawkes parameters for the K=3 suite:
/// ν ~ U[0.1, 0.5], α ~ U[0.5, 0.8], β ~ U[0.4, 1.2]; draw order is
/// ν₀..ν₂, then α row-major, then β row-major.
pub fn random_hawkes_params(rng: &mut CounterRng) -> ExpHawkesParams {
    let k = 3usize;
    let nu: Vec<f64> = (0..k).map(|_| rng.uniform_in(0.1, 0.5)).collect();
    let alpha: Vec<Vec<f64>> =
        (0..k).map(|_| (0..k).map(|_| rng.uniform_in(0.5, 0.8)).collect()).collect();
    let beta: Vec<Vec<f64>> =
        (0..k).map(|_| (0..k).map(|_| rng.uniform_in(0.4, 1.2)).collect()).collect();
    ExpHawkesParams { nu, alpha, beta }
}

// ---------------------------------------------------------------------------
// Self-correcting process
// ---------------------------------------------------------------------------

/// λ_t = exp(a·t − b·N_t): intensity drifts up over time and drops by a
/// factor e^{−b} at each event. The classical suite defaults to the
/// (a, b) = (1, 0.5) variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelfCorrectingParams {
    pub a: f64,
    pub b: f64,
}

impl Default for SelfCorrectingParams {
    fn default() -> Self {
        SelfCorrectingParams { a: 1.0, b: 0.5 }
    }
}

impl SelfCorrectingParams {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.a > 0.0) || !(self.b > 0.0) || !self.a.is_finite() || !self.b.is_finite() {
            return Err(SimError::BadParams("self-correcting needs a > 0, b > 0".into()));
        }
        Ok(())
    }
}

/// Thinning with a windowed dominating rate: within a lookahead window of
/// length ln2/a the intensity grows by at most 2×, so twice the current
/// value dominates; windows without an accepted proposal advance time.
pub fn simulate_self_correcting(params: &SelfCorrectingParams, t_end: f64, rng: &mut CounterRng) -> Result<EventSequence, SimError> {
    params.validate()?;
    if !(t_end >= 0.0) {
        return Err(SimError::BadParams(format!("t_end = {t_end} must be ≥ 0")));
    }
    let mut times = Vec::new();
    let mut n = 0u64;
    let mut t = 0.0;
    let window = std::f64::consts::LN_2 / params.a;
    while t < t_end {
        let win_end = (t + window).min(t_end);
        let bar = (params.a * win_end - params.b * n as f64).exp();
        let w = rng.exponential(bar);
        if w == 0.0 {
            continue;
        }
        if t + w > win_end {
            t = win_end;
            continue;
        }
        t += w;
        let lambda = (params.a * t - params.b * n as f64).exp();
        if rng.uniform() * bar <= lambda {
            times.push(t);
            n += 1;
        }
    }
    let marks = vec![0u32; times.len()];
    EventSequence::new(times, marks, 0.0, t_end.max(f64::MIN_POSITIVE))
        .map_err(|e| SimError::BadParams(e.to_string()))
}

/// Exact log-likelihood: Σ (a·t_i − b·(i−1)) − ∫exp(a·s − b·N_s)ds, the
/// integral in closed form per inter-event segment (N_s is constant
/// there, so each piece is e^{−b·n}(e^{a·t₁} − e^{a·t₀})/a).
pub fn selfcorrecting_loglik_oracle(params: &SelfCorrectingParams, seq: &EventSequence) -> Result<f64, SimError> {
    params.validate()?;
    if seq.marks().iter().any(|&m| m != 0) {
        return Err(SimError::BadSequence("self-correcting is unmarked (K = 1)".into()));
    }
    let mut sum_log = 0.0;
    let mut integral = 0.0;
    let mut prev = seq.t_start();
    let mut n = 0u64;
    for &t in seq.times() {
        sum_log += params.a * t - params.b * n as f64;
        integral += (-params.b * n as f64).exp() * ((params.a * t).exp() - (params.a * prev).exp()) / params.a;
        prev = t;
        n += 1;
    }
    integral += (-params.b * n as f64).exp()
        * ((params.a * seq.t_end()).exp() - (params.a * prev).exp())
        / params.a;
    Ok(sum_log - integral)
}

/// Compensator increments Λ(t_i) − Λ(t_{i−1}) in closed form (the event
/// count is constant between events): e^{−b·n}(e^{a·t_i} − e^{a·t_{i−1}})/a,
/// first increment from the window start. Exp(1) under the true model.
pub fn selfcorrecting_compensator_increments(params: &SelfCorrectingParams, seq: &EventSequence) -> Result<Vec<f64>, SimError> {
    params.validate()?;
    if seq.marks().iter().any(|&m| m != 0) {
        return Err(SimError::BadSequence("self-correcting is unmarked (K = 1)".into()));
    }
    let mut out = Vec::with_capacity(seq.len());
    let mut prev = seq.t_start();
    for (n, &t) in seq.times().iter().enumerate() {
        out.push(
            (-params.b * n as f64).exp() * ((params.a * t).exp() - (params.a * prev).exp())
                / params.a,
        );
        prev = t;
    }
    Ok(out)
}

pub fn selfcorrecting_intensity_on_grid(params: &SelfCorrectingParams, seq: &EventSequence, ts: &[f64]) -> Result<Vec<Vec<f64>>, SimError> {
    params.validate()?;
    let mut row = Vec::with_capacity(ts.len());
    let mut ev = 0usize;
    for (i, &t) in ts.iter().enumerate() {
        if i > 0 {
            assert!(t >= ts[i - 1], "query grid must be sorted");
        }
        while ev < seq.len() && seq.times()[ev] < t {
            ev += 1;
        }
        row.push((params.a * t - params.b * ev as f64).exp());
    }
    Ok(vec![row])
}

// ---------------------------------------------------------------------------
// Square-wave inhomogeneous Poisson
// ---------------------------------------------------------------------------

/// Square-wave rate: within each period the first `duty` fraction runs at
/// `high`, the rest at `low`; from `t_tail` onward the rate is the
/// constant `tail_rate`. The defaults are read off the figure the
/// experiment reproduces (wave over [0, 7], flat 0.5 afterwards).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SquareWaveParams {
    pub low: f64,
    pub high: f64,
    pub period: f64,
    pub duty: f64,
    pub tail_rate: f64,
    pub t_tail: f64,
}

impl Default for SquareWaveParams {
    fn default() -> Self {
        SquareWaveParams { low: 0.0, high: 1.0, period: 2.0, duty: 0.5, tail_rate: 0.5, t_tail: 7.0 }
    }
}

impl SquareWaveParams {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.low >= 0.0 && self.high >= 0.0 && self.tail_rate >= 0.0) {
            return Err(SimError::BadParams("rates must be ≥ 0".into()));
        }
        if !(self.period > 0.0) || !(self.duty > 0.0 && self.duty < 1.0) {
            return Err(SimError::BadParams("need period > 0 and duty ∈ (0,1)".into()));
        }
        if !self.t_tail.is_finite() || self.t_tail < 0.0 {
            return Err(SimError::BadParams("t_tail must be finite and ≥ 0".into()));
        }
        Ok(())
    }

    pub fn rate_at(&self, t: f64) -> f64 {
        if t >= self.t_tail {
            return self.tail_rate;
        }
        let phase = t.rem_euclid(self.period);
        if phase < self.duty * self.period {
            self.high
        } else {
            self.low
        }
    }

    /// ∫₀ᵗ λ, exact: whole periods plus the partial period, switching to
    /// the linear tail beyond t_tail.
    fn cumulative(&self, t: f64) -> f64 {
        let t_wave = t.min(self.t_tail);
        let per_period = (self.duty * self.high + (1.0 - self.duty) * self.low) * self.period;
        let full = (t_wave / self.period).floor();
        let rem = t_wave - full * self.period;
        let high_len = rem.min(self.duty * self.period);
        let low_len = (rem - self.duty * self.period).max(0.0);
        let mut acc = full * per_period + high_len * self.high + low_len * self.low;
        if t > self.t_tail {
            acc += (t - self.t_tail) * self.tail_rate;
        }
        acc
    }

    pub fn integral(&self, t0: f64, t1: f64) -> f64 {
        self.cumulative(t1) - self.cumulative(t0)
    }
}

/// Thinning with the constant dominating rate max(high, low, tail_rate).
pub fn simulate_square_wave(params: &SquareWaveParams, t_end: f64, rng: &mut CounterRng) -> Result<EventSequence, SimError> {
    params.validate()?;
    if !(t_end >= 0.0) {
        return Err(SimError::BadParams(format!("t_end = {t_end} must be ≥ 0")));
    }
    let bar = params.high.max(params.low).max(params.tail_rate);
    let mut times = Vec::new();
    if bar > 0.0 {
        let mut t = 0.0;
        loop {
            let w = rng.exponential(bar);
            if w == 0.0 {
                continue;
            }
            t += w;
            if t > t_end {
                break;
            }
            if rng.uniform() * bar <= params.rate_at(t) {
                times.push(t);
            }
        }
    }
    let marks = vec![0u32; times.len()];
    EventSequence::new(times, marks, 0.0, t_end.max(f64::MIN_POSITIVE))
        .map_err(|e| SimError::BadParams(e.to_string()))
}

/// Poisson log-likelihood Σ log λ(t_i) − ∫λ with the exact piecewise
/// integral. An event inside a zero-rate segment yields −∞, the honest
/// density of impossible data.
pub fn squarewave_loglik_oracle(params: &SquareWaveParams, seq: &EventSequence) -> Result<f64, SimError> {
    params.validate()?;
    if seq.marks().iter().any(|&m| m != 0) {
        return Err(SimError::BadSequence("square-wave is unmarked (K = 1)".into()));
    }
    let sum_log: f64 = seq.times().iter().map(|&t| params.rate_at(t).ln()).sum();
    Ok(sum_log - params.integral(seq.t_start(), seq.t_end()))
}

/// Compensator increments of the inhomogeneous Poisson rate, exact via
/// the piecewise cumulative integral; first increment from the window
/// start.
pub fn squarewave_compensator_increments(params: &SquareWaveParams, seq: &EventSequence) -> Result<Vec<f64>, SimError> {
    params.validate()?;
    if seq.marks().iter().any(|&m| m != 0) {
        return Err(SimError::BadSequence("square-wave is unmarked (K = 1)".into()));
    }
    let mut out = Vec::with_capacity(seq.len());
    let mut prev = seq.t_start();
    for &t in seq.times() {
        out.push(params.integral(prev, t));
        prev = t;
    }
    Ok(out)
}

pub fn squarewave_intensity_on_grid(params: &SquareWaveParams, _seq: &EventSequence, ts: &[f64]) -> Result<Vec<Vec<f64>>, SimError> {
    params.validate()?;
    Ok(vec![ts.iter().map(|&t| params.rate_at(t)).collect()])
}

// ---------------------------------------------------------------------------
// Long-range trigger/target process
// ---------------------------------------------------------------------------

/// Mark 0: Poisson distractors. Mark 1: Poisson triggers. Mark 2: each
/// trigger spawns exactly one target at trigger + N(delay_mean,
/// delay_var); targets falling beyond the window are dropped (censored).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LongRangeParams {
    pub distractor_rate: f64,
    pub trigger_rate: f64,
    pub delay_mean: f64,
    pub delay_var: f64,
    pub t_end: f64,
}

impl Default for LongRangeParams {
    fn default() -> Self {
        LongRangeParams { distractor_rate: 1.0, trigger_rate: 0.1, delay_mean: 40.0, delay_var: 0.1, t_end: 100.0 }
    }
}

impl LongRangeParams {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.distractor_rate >= 0.0 && self.trigger_rate >= 0.0) {
            return Err(SimError::BadParams("rates must be ≥ 0".into()));
        }
        if !(self.delay_var > 0.0) || !(self.t_end > 0.0) {
            return Err(SimError::BadParams("need delay_var > 0 and t_end > 0".into()));
        }
        Ok(())
    }

    fn delay_sd(&self) -> f64 {
        self.delay_var.sqrt()
    }
}

fn poisson_times(rate: f64, t_end: f64, rng: &mut CounterRng) -> Vec<f64> {
    let mut ts = Vec::new();
    if rate > 0.0 {
        let mut t = 0.0;
        loop {
            let w = rng.exponential(rate);
            if w == 0.0 {
                continue;
            }
            t += w;
            if t > t_end {
                break;
            }
            ts.push(t);
        }
    }
    ts
}

/// Direct construction (no thinning needed): distractors and triggers are
/// homogeneous Poisson draws from independent substreams; one normal
/// delay per trigger (re-drawn if ≤ 0, i.e. the delay is truncated to be
/// positive — numerically irrelevant at the default μ/σ). In the
/// measure-zero case of an exact time collision, the whole sequence is
/// re-generated from the next attempt substream.
pub fn simulate_long_range(params: &LongRangeParams, rng: &mut CounterRng) -> Result<EventSequence, SimError> {
    params.validate()?;
    for attempt in 0..64 {
        let base = rng.substream(attempt);
        let mut distractor_rng = base.substream(0);
        let mut trigger_rng = base.substream(1);
        let mut delay_rng = base.substream(2);

        let distractors = poisson_times(params.distractor_rate, params.t_end, &mut distractor_rng);
        let triggers = poisson_times(params.trigger_rate, params.t_end, &mut trigger_rng);
        let mut targets = Vec::new();
        for &tr in &triggers {
            let mut delay = delay_rng.normal(params.delay_mean, params.delay_sd());
            while delay <= 0.0 {
                delay = delay_rng.normal(params.delay_mean, params.delay_sd());
            }
            let t = tr + delay;
            if t <= params.t_end {
                targets.push(t);
            }
        }

        let mut all: Vec<(f64, u32)> = distractors
            .iter()
            .map(|&t| (t, 0u32))
            .chain(triggers.iter().map(|&t| (t, 1u32)))
            .chain(targets.iter().map(|&t| (t, 2u32)))
            .collect();
        all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        if all.windows(2).any(|w| w[0].0 == w[1].0) {
            continue; // exact tie: re-draw the sequence
        }
        let (times, marks): (Vec<f64>, Vec<u32>) = all.into_iter().unzip();
        return EventSequence::new(times, marks, 0.0, params.t_end)
            .map_err(|e| SimError::BadParams(e.to_string()));
    }
    Err(SimError::BadParams("could not draw a tie-free sequence in 64 attempts".into()))
}

/// Trigger→target matching reconstructed from marks: targets in time
/// order each claim the unmatched earlier trigger whose implied delay is
/// closest to delay_mean (earliest trigger on a tie). Returns, per
/// trigger (in time order), the matched target time; plus the number of
/// orphan targets that no trigger could explain.
fn match_triggers(params: &LongRangeParams, seq: &EventSequence) -> (Vec<f64>, Vec<Option<f64>>, usize) {
    let mut trigger_times = Vec::new();
    let mut target_times = Vec::new();
    for (&t, &m) in seq.times().iter().zip(seq.marks()) {
        match m {
            1 => trigger_times.push(t),
            2 => target_times.push(t),
            _ => {}
        }
    }
    let mut matched: Vec<Option<f64>> = vec![None; trigger_times.len()];
    let mut orphans = 0usize;
    for &s in &target_times {
        let mut best: Option<(usize, f64)> = None;
        for (i, &tr) in trigger_times.iter().enumerate() {
            if tr >= s || matched[i].is_some() {
                continue;
            }
            let miss = (s - tr - params.delay_mean).abs();
            if best.map_or(true, |(_, m)| miss < m) {
                best = Some((i, miss));
            }
        }
        match best {
            Some((i, _)) => matched[i] = Some(s),
            None => orphans += 1,
        }
    }
    (trigger_times, matched, orphans)
}

/// ∫₀^Δ h of the delay hazard, by adaptive Simpson over segments chosen
/// around the mean so the quadrature cannot step over the hazard's rise
/// (the integrand is ≈ 0 until ~μ − 10σ, then climbs steeply).
fn hazard_integral(mu: f64, sd: f64, delta: f64, tol: f64) -> f64 {
    if delta <= 0.0 {
        return 0.0;
    }
    let mut cuts = vec![0.0f64];
    for z in [-10.0, -3.0, 0.0, 3.0] {
        let c = mu + z * sd;
        if c > 0.0 && c < delta {
            cuts.push(c);
        }
    }
    let mut c = mu + 8.0 * sd;
    while c < delta {
        cuts.push(c);
        c += 5.0 * sd;
    }
    cuts.push(delta);
    let per_seg = tol / cuts.len() as f64;
    let mut acc = 0.0;
    for w in cuts.windows(2) {
        acc += adaptive_simpson(|u| normal_hazard(u, mu, sd), w[0], w[1], per_seg);
    }
    acc
}

/// Ground-truth log-likelihood of the long-range process in its
/// intensity (hazard-superposition) form, so the value is directly
/// comparable with model likelihoods:
/// marks 0–1 contribute homogeneous-Poisson terms; mark 2's intensity at
/// t is Σ h(t − t_i) over triggers still awaiting their target, with
/// h the N(delay_mean, delay_var) hazard. Matched targets contribute
/// log h(delay); every trigger contributes −∫ h up to its target or the
/// horizon (adaptive quadrature, tolerance 1e-8). Data impossible under
/// the process (an orphan target) yields −∞.
pub fn longrange_loglik_oracle(params: &LongRangeParams, seq: &EventSequence) -> Result<f64, SimError> {
    params.validate()?;
    if let Some(&m) = seq.marks().iter().find(|&&m| m >= 3) {
        return Err(SimError::BadSequence(format!("mark {m} out of range for the long-range process (K = 3)")));
    }
    let t_end = seq.t_end();
    let n0 = seq.marks().iter().filter(|&&m| m == 0).count() as f64;
    let n1 = seq.marks().iter().filter(|&&m| m == 1).count() as f64;
    let window = t_end - seq.t_start();

    let poisson_term = |n: f64, rate: f64| -> f64 {
        let log_part = if n > 0.0 { n * rate.ln() } else { 0.0 };
        log_part - rate * window
    };
    let mut ll = poisson_term(n0, params.distractor_rate) + poisson_term(n1, params.trigger_rate);

    let (triggers, matched, orphans) = match_triggers(params, seq);
    if orphans > 0 {
        return Ok(f64::NEG_INFINITY);
    }
    let sd = params.delay_sd();
    for (i, &tr) in triggers.iter().enumerate() {
        match matched[i] {
            Some(s) => {
                ll += normal_hazard(s - tr, params.delay_mean, sd).ln();
                ll -= hazard_integral(params.delay_mean, sd, s - tr, 1e-8);
            }
            None => {
                ll -= hazard_integral(params.delay_mean, sd, t_end - tr, 1e-8);
            }
        }
    }
    Ok(ll)
}

/// Left-limit oracle intensities of the long-range process on a sorted
/// grid; a trigger's hazard is live from its time until its matched
/// target fires (or forever, if censored).
pub fn longrange_intensity_on_grid(params: &LongRangeParams, seq: &EventSequence, ts: &[f64]) -> Result<Vec<Vec<f64>>, SimError> {
    params.validate()?;
    if seq.marks().iter().any(|&m| m >= 3) {
        return Err(SimError::BadSequence("mark out of range for the long-range process".into()));
    }
    let (triggers, matched, _orphans) = match_triggers(params, seq);
    let sd = params.delay_sd();
    let mut rows = vec![Vec::with_capacity(ts.len()); 3];
    for (i, &t) in ts.iter().enumerate() {
        if i > 0 {
            assert!(t >= ts[i - 1], "query grid must be sorted");
        }
        rows[0].push(params.distractor_rate);
        rows[1].push(params.trigger_rate);
        let mut h = 0.0;
        for (j, &tr) in triggers.iter().enumerate() {
            if tr < t && matched[j].map_or(true, |s| s >= t) {
                h += normal_hazard(t - tr, params.delay_mean, sd);
            }
        }
        rows[2].push(h);
    }
    Ok(rows)
}

/// Compensator increments of the total long-range intensity: the two
/// Poisson components integrate linearly and each live trigger hazard
/// contributes H(t_i − tr) − H(t_{i−1} − tr) with H the same quadrature
/// the likelihood oracle uses. A trigger's hazard is live from the
/// trigger (exclusive) through its matched target (inclusive).
pub fn longrange_compensator_increments(params: &LongRangeParams, seq: &EventSequence) -> Result<Vec<f64>, SimError> {
    params.validate()?;
    if seq.marks().iter().any(|&m| m >= 3) {
        return Err(SimError::BadSequence("mark out of range for the long-range process".into()));
    }
    let (triggers, matched, _orphans) = match_triggers(params, seq);
    let sd = params.delay_sd();
    let base = params.distractor_rate + params.trigger_rate;
    // live[j]: the hazard of trigger j integrates over the current
    // interval. Triggers activate once passed; they die when their
    // matched target is passed.
    let mut live = vec![false; triggers.len()];
    let mut out = Vec::with_capacity(seq.len());
    let mut prev = seq.t_start();
    for (&t, &m) in seq.times().iter().zip(seq.marks()) {
        let mut inc = base * (t - prev);
        for (j, &tr) in triggers.iter().enumerate() {
            if live[j] {
                inc += hazard_integral(params.delay_mean, sd, t - tr, 1e-8)
                    - hazard_integral(params.delay_mean, sd, prev - tr, 1e-8);
            }
        }
        match m {
            1 => {
                let j = triggers.iter().position(|&tr| tr == t).expect("trigger listed");
                live[j] = true;
            }
            2 => {
                if let Some(j) = matched.iter().position(|&s| s == Some(t)) {
                    live[j] = false;
                }
            }
            _ => {}
        }
        out.push(inc);
        prev = t;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Uniform oracle interface
// ---------------------------------------------------------------------------

/// A simulator with a ground-truth likelihood/intensity, bundled so the
/// CLI and the evaluation suite can treat oracles uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "process", rename_all = "kebab-case")]
pub enum OracleProcess {
    Hawkes(ExpHawkesParams),
    SelfCorrecting(SelfCorrectingParams),
    SquareWave(SquareWaveParams),
    LongRange(LongRangeParams),
}

impl OracleProcess {
    pub fn num_marks(&self) -> u32 {
        match self {
            OracleProcess::Hawkes(p) => p.num_marks() as u32,
            OracleProcess::SelfCorrecting(_) | OracleProcess::SquareWave(_) => 1,
            OracleProcess::LongRange(_) => 3,
        }
    }

    pub fn loglik(&self, seq: &EventSequence) -> Result<f64, SimError> {
        match self {
            OracleProcess::Hawkes(p) => hawkes_loglik_oracle(p, seq),
            OracleProcess::SelfCorrecting(p) => selfcorrecting_loglik_oracle(p, seq),
            OracleProcess::SquareWave(p) => squarewave_loglik_oracle(p, seq),
            OracleProcess::LongRange(p) => longrange_loglik_oracle(p, seq),
        }
    }

    /// K×|ts| left-limit intensities on a sorted grid.
    pub fn intensity_on_grid(&self, seq: &EventSequence, ts: &[f64]) -> Result<Vec<Vec<f64>>, SimError> {
        match self {
            OracleProcess::Hawkes(p) => hawkes_intensity_on_grid(p, seq, ts),
            OracleProcess::SelfCorrecting(p) => selfcorrecting_intensity_on_grid(p, seq, ts),
            OracleProcess::SquareWave(p) => squarewave_intensity_on_grid(p, seq, ts),
            OracleProcess::LongRange(p) => longrange_intensity_on_grid(p, seq, ts),
        }
    }

    /// Per-event total-compensator increments Λ(t_i) − Λ(t_{i−1}) (first
    /// from the window start); i.i.d. Exp(1) under the generating
    /// process, the basis of the time-calibration baselines.
    pub fn compensator_increments(&self, seq: &EventSequence) -> Result<Vec<f64>, SimError> {
        match self {
            OracleProcess::Hawkes(p) => hawkes_compensator_increments(p, seq),
            OracleProcess::SelfCorrecting(p) => selfcorrecting_compensator_increments(p, seq),
            OracleProcess::SquareWave(p) => squarewave_compensator_increments(p, seq),
            OracleProcess::LongRange(p) => longrange_compensator_increments(p, seq),
        }
    }
}

//! Stacked latent linear-Hawkes intensity model.
//!
//! Layers are chained through a residual stream of width H. The first
//! layer's driving stream is identically zero; after layer l produces its
//! readout y the next stream is
//!
//! ```text
//!     u⁽ˡ⁺¹⁾ = LayerNorm(GELU(y) + u⁽ˡ⁾),
//! ```
//!
//! and the per-mark intensity head reads the stream after the final
//! normalization:
//!
//! ```text
//!     λ = s ⊙ softplus((W u + b) ⊘ s),       s = exp(log_s).
//! ```
//!
//! Conditioning on an event sequence materializes, per layer, the latent
//! right limits after every event (one parallel-scan pass) together with
//! the stream values at the window start and at both event limits.
//! Intensities at arbitrary times are left limits: each layer's most
//! recent right limit is evolved by the elapsed gap and the streams are
//! rebuilt bottom-up at the query time, so an evaluation at an event time
//! returns the pre-event value. All numerical paths — conditioning,
//! likelihood, traces, post-history prediction — run through the same
//! tape operations, differentiable when the tape records.

use std::collections::BTreeMap;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Tape, Value, Var};
use crate::events::EventSequence;
use crate::llh::{
    evolve_state, layer_forward, layer_output, LayerVars, LlhLayerParams, ZohMode,
};
use crate::rng::CounterRng;

/// Normalization epsilon of the residual stream.
pub const LN_EPS: f64 = 1e-5;

/// On-disk checkpoint format version; loading any other version fails.
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("query time {t} outside window [{t_start}, {t_end}]")]
    OutsideWindow { t: f64, t_start: f64, t_end: f64 },
    #[error("trace grid must be sorted (entry {index})")]
    UnsortedGrid { index: usize },
    #[error("mark {mark} out of range for {num_marks} marks")]
    MarkOutOfRange { mark: u32, num_marks: usize },
    #[error("interval index {index} exceeds event count {num_events}")]
    BadInterval { index: usize, num_events: usize },
    #[error("layer {layer} out of range for {num_layers} layers")]
    BadLayer { layer: usize, num_layers: usize },
    #[error("negative or non-finite gap {delta}")]
    BadGap { delta: f64 },
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint encoding: {0}")]
    Json(#[from] serde_json::Error),
    #[error("checkpoint version {found} unsupported (expected {CHECKPOINT_VERSION})")]
    Version { found: u32 },
    #[error("checkpoint tensor {name}: {problem}")]
    Tensor { name: String, problem: String },
}

/// Architecture description; everything else about a model is a tensor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct S2P2Config {
    /// Number of mark categories K.
    pub num_marks: usize,
    /// Stacked layer count L.
    pub num_layers: usize,
    /// Latent channels per layer P.
    pub state_dim: usize,
    /// Residual stream width H (impulse embeddings share it).
    pub stream_dim: usize,
    /// Rescale decay rates per interval from the stream value.
    pub input_dependent: bool,
    /// Which interval endpoint's stream value the hold uses.
    pub zoh_mode: ZohMode,
}

impl Default for S2P2Config {
    fn default() -> Self {
        S2P2Config {
            num_marks: 1,
            num_layers: 1,
            state_dim: 8,
            stream_dim: 8,
            input_dependent: false,
            zoh_mode: ZohMode::Backward,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNormParams {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

/// Full model: mark embeddings, L layers with their stream norms, and the
/// softplus intensity head.
#[derive(Debug, Clone)]
pub struct S2P2Model {
    pub config: S2P2Config,
    /// K×H, row k is the impulse embedding of mark k.
    pub mark_embed: Vec<f64>,
    pub layers: Vec<LlhLayerParams>,
    pub norms: Vec<LayerNormParams>,
    /// H×K head weights (stream-major for row products).
    pub head_w: Vec<f64>,
    /// K biases.
    pub head_b: Vec<f64>,
    /// K log-scales; the head computes s⊙softplus(z⊘s) with s = exp(log_s).
    pub head_log_s: Vec<f64>,
}

impl S2P2Model {
    /// Deterministic initialization from a seed. Embeddings and head
    /// weights draw from N(0, 1/H); layers follow their own scheme; norms
    /// start as the identity and the head at zero bias, unit scale.
    pub fn init(config: S2P2Config, seed: u64) -> S2P2Model {
        let (k, h) = (config.num_marks, config.stream_dim);
        let base = CounterRng::new(seed);
        let sd = (1.0 / h as f64).sqrt();
        let mut embed_rng = base.substream(0);
        let mark_embed = (0..k * h).map(|_| embed_rng.normal(0.0, sd)).collect();
        let mut head_rng = base.substream(1);
        let head_w = (0..h * k).map(|_| head_rng.normal(0.0, sd)).collect();
        let layers = (0..config.num_layers)
            .map(|l| {
                let mut r = base.substream(10 + l as u64);
                LlhLayerParams::init(
                    config.state_dim,
                    h,
                    config.input_dependent,
                    config.zoh_mode,
                    &mut r,
                )
            })
            .collect();
        let norms = (0..config.num_layers)
            .map(|_| LayerNormParams { scale: vec![1.0; h], shift: vec![0.0; h] })
            .collect();
        S2P2Model {
            config,
            mark_embed,
            layers,
            norms,
            head_w,
            head_b: vec![0.0; k],
            head_log_s: vec![0.0; k],
        }
    }

    /// Stable flat listing of every tensor: name, shape, data. The order
    /// is the parameter order used everywhere (gradients, checkpoints).
    pub fn tensors(&self) -> Vec<(String, [usize; 2], &[f64])> {
        let (k, h, p) = (self.config.num_marks, self.config.stream_dim, self.config.state_dim);
        let mut out: Vec<(String, [usize; 2], &[f64])> = Vec::new();
        out.push(("mark_embed".into(), [k, h], &self.mark_embed));
        for (l, lay) in self.layers.iter().enumerate() {
            let f = |s: &str| format!("layers.{l}.{s}");
            out.push((f("rho"), [1, p], &lay.rho));
            out.push((f("theta"), [1, p], &lay.theta));
            out.push((f("b_re"), [p, h], &lay.b_re));
            out.push((f("b_im"), [p, h], &lay.b_im));
            out.push((f("c_re"), [h, p], &lay.c_re));
            out.push((f("c_im"), [h, p], &lay.c_im));
            out.push((f("d"), [1, h], &lay.d));
            out.push((f("e_re"), [p, h], &lay.e_re));
            out.push((f("e_im"), [p, h], &lay.e_im));
            out.push((f("x0_re"), [1, p], &lay.x0_re));
            out.push((f("x0_im"), [1, p], &lay.x0_im));
            out.push((f("w_prime"), [h, p], &lay.w_prime));
            out.push((f("b_prime"), [1, p], &lay.b_prime));
        }
        for (l, n) in self.norms.iter().enumerate() {
            out.push((format!("norms.{l}.scale"), [1, h], &n.scale));
            out.push((format!("norms.{l}.shift"), [1, h], &n.shift));
        }
        out.push(("head.w".into(), [h, k], &self.head_w));
        out.push(("head.b".into(), [1, k], &self.head_b));
        out.push(("head.log_s".into(), [1, k], &self.head_log_s));
        out
    }

    /// Mutable view of every tensor in the same order as [`tensors`].
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Vec<f64>)> {
        let mut out: Vec<(String, &mut Vec<f64>)> = Vec::new();
        out.push(("mark_embed".into(), &mut self.mark_embed));
        for (l, lay) in self.layers.iter_mut().enumerate() {
            let f = |s: &str| format!("layers.{l}.{s}");
            out.push((f("rho"), &mut lay.rho));
            out.push((f("theta"), &mut lay.theta));
            out.push((f("b_re"), &mut lay.b_re));
            out.push((f("b_im"), &mut lay.b_im));
            out.push((f("c_re"), &mut lay.c_re));
            out.push((f("c_im"), &mut lay.c_im));
            out.push((f("d"), &mut lay.d));
            out.push((f("e_re"), &mut lay.e_re));
            out.push((f("e_im"), &mut lay.e_im));
            out.push((f("x0_re"), &mut lay.x0_re));
            out.push((f("x0_im"), &mut lay.x0_im));
            out.push((f("w_prime"), &mut lay.w_prime));
            out.push((f("b_prime"), &mut lay.b_prime));
        }
        for (l, n) in self.norms.iter_mut().enumerate() {
            out.push((format!("norms.{l}.scale"), &mut n.scale));
            out.push((format!("norms.{l}.shift"), &mut n.shift));
        }
        out.push(("head.w".into(), &mut self.head_w));
        out.push(("head.b".into(), &mut self.head_b));
        out.push(("head.log_s".into(), &mut self.head_log_s));
        out
    }

    /// Register every tensor on a tape.
    pub fn leaves(&self, tape: &Tape) -> ModelVars {
        let (k, h) = (self.config.num_marks, self.config.stream_dim);
        ModelVars {
            alpha: tape.leaf_real(k, h, self.mark_embed.clone()),
            layers: self.layers.iter().map(|l| l.leaves(tape)).collect(),
            norms: self
                .norms
                .iter()
                .map(|n| {
                    (
                        tape.leaf_real(1, h, n.scale.clone()),
                        tape.leaf_real(1, h, n.shift.clone()),
                    )
                })
                .collect(),
            head_w: tape.leaf_real(h, k, self.head_w.clone()),
            head_b: tape.leaf_real(1, k, self.head_b.clone()),
            head_log_s: tape.leaf_real(1, k, self.head_log_s.clone()),
        }
    }

    fn check_marks(&self, seq: &EventSequence) -> Result<(), ModelError> {
        let k = self.config.num_marks;
        for &m in seq.marks() {
            if m as usize >= k {
                return Err(ModelError::MarkOutOfRange { mark: m, num_marks: k });
            }
        }
        Ok(())
    }
}

/// Tape-registered model tensors plus the per-layer assembled views.
pub struct ModelVars {
    pub alpha: Var,
    pub layers: Vec<LayerVars>,
    pub norms: Vec<(Var, Var)>,
    pub head_w: Var,
    pub head_b: Var,
    pub head_log_s: Var,
}

impl ModelVars {
    /// Leaf variables in the same order as [`S2P2Model::tensors`].
    pub fn named(&self) -> Vec<(String, Var)> {
        let mut out: Vec<(String, Var)> = Vec::new();
        out.push(("mark_embed".into(), self.alpha.clone()));
        for (l, lv) in self.layers.iter().enumerate() {
            let f = |s: &str| format!("layers.{l}.{s}");
            out.push((f("rho"), lv.rho.clone()));
            out.push((f("theta"), lv.theta.clone()));
            out.push((f("b_re"), lv.b_re.clone()));
            out.push((f("b_im"), lv.b_im.clone()));
            out.push((f("c_re"), lv.c_re.clone()));
            out.push((f("c_im"), lv.c_im.clone()));
            out.push((f("d"), lv.d.clone()));
            out.push((f("e_re"), lv.e_re.clone()));
            out.push((f("e_im"), lv.e_im.clone()));
            out.push((f("x0_re"), lv.x0_re.clone()));
            out.push((f("x0_im"), lv.x0_im.clone()));
            out.push((f("w_prime"), lv.w_prime.clone()));
            out.push((f("b_prime"), lv.b_prime.clone()));
        }
        for (l, (scale, shift)) in self.norms.iter().enumerate() {
            out.push((format!("norms.{l}.scale"), scale.clone()));
            out.push((format!("norms.{l}.shift"), shift.clone()));
        }
        out.push(("head.w".into(), self.head_w.clone()));
        out.push(("head.b".into(), self.head_b.clone()));
        out.push(("head.log_s".into(), self.head_log_s.clone()));
        out
    }
}

/// Per-layer handles needed to answer left-limit queries: the extended
/// right-limit states (row 0 is the initial state, row i the right limit
/// after event i) and the stream rows indexed by interval — row j holds
/// the modulation input of interval j (the window start for j = 0, the
/// left limit at event j otherwise).
pub struct QuerySource {
    pub x_right_ext: Var,
    pub u_mod_rows: Var,
}

/// Everything conditioning materializes for one sequence on one tape.
pub struct SeqStreams {
    /// True event count (padding rows excluded).
    pub num_events: usize,
    pub sources: Vec<QuerySource>,
}

impl S2P2Model {
    /// Condition on a sequence: one scan per layer plus the stream
    /// plumbing. With `pad_to > N`, extra trailing intervals of zero
    /// length and zero impulse are appended to the scan; they leave every
    /// true row bit-identical and are excluded from all reductions.
    pub(crate) fn streams(
        &self,
        tape: &Tape,
        vars: &ModelVars,
        seq: &EventSequence,
        pad_to: usize,
    ) -> SeqStreams {
        let n = seq.len();
        let n_pad = pad_to.max(n);
        let h = self.config.stream_dim;

        let mut dt = seq.gaps();
        dt.resize(n_pad, 0.0);
        let mut marks: Vec<usize> = seq.marks().iter().map(|&m| m as usize).collect();
        marks.resize(n_pad, 0);
        let mut mask = vec![1.0; n];
        mask.resize(n_pad, 0.0);
        let mask_col = tape.constant_real(n_pad, 1, mask);

        let alpha_rows = vars.alpha.gather_rows(&marks);
        // Stream row layout per layer: row 0 = window start, rows 1..=n_pad
        // left limits, rows n_pad+1..=2n_pad right limits.
        let mod_idx: Vec<usize> = (0..n_pad).collect();
        let held_idx = |mode: ZohMode| -> Vec<usize> {
            match mode {
                ZohMode::Backward => (1..=n_pad).collect(),
                ZohMode::Forward if n_pad == 0 => Vec::new(),
                ZohMode::Forward => {
                    let mut v = vec![0];
                    v.extend(n_pad + 1..2 * n_pad);
                    v
                }
            }
        };

        let mut u = tape.constant_real(2 * n_pad + 1, h, vec![0.0; (2 * n_pad + 1) * h]);
        let mut sources = Vec::with_capacity(self.config.num_layers);
        for l in 0..self.config.num_layers {
            let lv = &vars.layers[l];
            let impulses = alpha_rows.rc_matmul_nt(&lv.e).mul_real(&mask_col);
            let held_u = u.gather_rows(&held_idx(lv.zoh_mode));
            let u_mod = u.gather_rows(&mod_idx);
            let flow = layer_forward(tape, lv, &dt, &held_u, &u_mod, &impulses);
            let x_right_ext = lv.x0.vcat(&flow.x_right);
            sources.push(QuerySource {
                x_right_ext: x_right_ext.clone(),
                u_mod_rows: u.clone(),
            });
            // The last layer's output stream is consumed only at query
            // rows, which rebuild it themselves.
            if l + 1 < self.config.num_layers {
                let x_comb = lv.x0.vcat(&flow.x_left).vcat(&flow.x_right);
                let y = layer_output(lv, &x_comb, &u);
                let (scale, shift) = &vars.norms[l];
                u = y.gelu().add(&u).layer_norm(scale, shift, LN_EPS);
            }
        }
        SeqStreams { num_events: n, sources }
    }

    /// Shared query walk: condition row q on the events of interval
    /// `idx[q]`, evolve each layer's right limit by `deltas[q]` with the
    /// stream rebuilt bottom-up at the query point. Returns every layer's
    /// evolved Q×P states alongside the final stream rows.
    pub(crate) fn query_walk(
        &self,
        tape: &Tape,
        vars: &ModelVars,
        sources: &[QuerySource],
        idx: &[usize],
        deltas: &[f64],
    ) -> (Vec<Var>, Var) {
        assert_eq!(idx.len(), deltas.len());
        let q = idx.len();
        let h = self.config.stream_dim;
        let mut u_q = tape.constant_real(q, h, vec![0.0; q * h]);
        let mut states = Vec::with_capacity(self.config.num_layers);
        for l in 0..self.config.num_layers {
            let lv = &vars.layers[l];
            let src = &sources[l];
            let x_base = src.x_right_ext.gather_rows(idx);
            let u_mod = src.u_mod_rows.gather_rows(idx);
            let evolved = evolve_state(tape, lv, &x_base, deltas, &u_q, &u_mod);
            let y = layer_output(lv, &evolved, &u_q);
            let (scale, shift) = &vars.norms[l];
            u_q = y.gelu().add(&u_q).layer_norm(scale, shift, LN_EPS);
            states.push(evolved);
        }
        (states, u_q)
    }

    /// Left-limit intensities at query rows: the query walk capped by the
    /// head. Returns the Q×K head output.
    pub(crate) fn query_intensities(
        &self,
        tape: &Tape,
        vars: &ModelVars,
        sources: &[QuerySource],
        idx: &[usize],
        deltas: &[f64],
    ) -> Var {
        let (_, u_q) = self.query_walk(tape, vars, sources, idx, deltas);
        self.head(vars, &u_q)
    }

    /// Latent trajectory probe: layer `layer`'s diagonal state at each of
    /// the sorted in-window times `ts`, row-major |ts|×P. Queries at an
    /// event time give the pre-event (left-limit) state, matching every
    /// other left-limit convention here.
    pub fn state_trace(
        &self,
        seq: &EventSequence,
        layer: usize,
        ts: &[f64],
    ) -> Result<Vec<Complex64>, ModelError> {
        self.check_marks(seq)?;
        if layer >= self.config.num_layers {
            return Err(ModelError::BadLayer { layer, num_layers: self.config.num_layers });
        }
        for (i, &t) in ts.iter().enumerate() {
            if i > 0 && t < ts[i - 1] {
                return Err(ModelError::UnsortedGrid { index: i });
            }
            if !(t >= seq.t_start() && t <= seq.t_end()) {
                return Err(ModelError::OutsideWindow {
                    t,
                    t_start: seq.t_start(),
                    t_end: seq.t_end(),
                });
            }
        }
        let times = seq.times();
        let (idx, deltas): (Vec<usize>, Vec<f64>) = ts
            .iter()
            .map(|&t| {
                let j = interval_of(times, t);
                let base = if j == 0 { seq.t_start() } else { times[j - 1] };
                (j, t - base)
            })
            .unzip();
        let tape = Tape::new_no_grad();
        let vars = self.leaves(&tape);
        let streams = self.streams(&tape, &vars, seq, 0);
        let (states, _) = self.query_walk(&tape, &vars, &streams.sources, &idx, &deltas);
        Ok(states[layer].value().complex_data().to_vec())
    }

    /// Per-mark intensity head on stream rows: s ⊙ softplus((uW + b) ⊘ s).
    pub(crate) fn head(&self, vars: &ModelVars, u: &Var) -> Var {
        let s = vars.head_log_s.exp();
        let s_inv = vars.head_log_s.neg().exp();
        u.matmul(&vars.head_w)
            .add_bias_row(&vars.head_b)
            .mul_bcast_row(&s_inv)
            .softplus()
            .mul_bcast_row(&s)
    }
}

/// Interval index of a query time under strict-history semantics: the
/// number of events strictly before t. An evaluation exactly at an event
/// time therefore lands in the preceding interval and yields the
/// pre-event (left-limit) value.
fn interval_of(times: &[f64], t: f64) -> usize {
    times.partition_point(|&ti| ti < t)
}

/// The pieces of a sequence likelihood, still on tape:
///
/// ```text
///     log L = Σᵢ log λ^{kᵢ}(tᵢ⁻) − ∫ λ_total
///           = [Σᵢ log λ_total(tᵢ⁻) − ∫ λ_total]  (time part)
///           + [Σᵢ log λ^{kᵢ}(tᵢ⁻) − Σᵢ log λ_total(tᵢ⁻)]  (mark part).
/// ```
pub struct NllParts {
    pub sum_log_mark: Var,
    pub sum_log_total: Var,
    pub integral: Var,
    pub num_events: usize,
}

/// Plain-value likelihood summary.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LogLik {
    pub total: f64,
    pub time: f64,
    pub mark: f64,
    /// Monte-Carlo estimate of ∫ λ_total over the window.
    pub integral: f64,
    pub num_events: usize,
}

impl S2P2Model {
    /// Build the likelihood pieces for one sequence on `tape`. The
    /// compensator integral is stratified Monte Carlo: each inter-event
    /// interval — including the terminal gap up to the window end —
    /// contributes its length times the mean of `mc_points` intensity
    /// draws at uniform points. Draws come from `rng` in interval order,
    /// `mc_points` per interval, so the estimate is reproducible from the
    /// generator state alone. With `pad_to > N` the conditioning scan is
    /// padded; padded rows never enter any reduction.
    pub fn nll_parts(
        &self,
        tape: &Tape,
        vars: &ModelVars,
        seq: &EventSequence,
        mc_points: usize,
        rng: &mut CounterRng,
        pad_to: usize,
    ) -> Result<NllParts, ModelError> {
        self.check_marks(seq)?;
        let n = seq.len();
        let times = seq.times();
        let streams = self.streams(tape, vars, seq, pad_to);

        let mut idx: Vec<usize> = Vec::with_capacity(n + (n + 1) * mc_points);
        let mut deltas: Vec<f64> = Vec::with_capacity(idx.capacity());
        let gaps = seq.gaps();
        for (i, &g) in gaps.iter().enumerate() {
            idx.push(i);
            deltas.push(g);
        }
        // One weight per Monte-Carlo row: interval length over draw count.
        let mut weights: Vec<f64> = Vec::with_capacity((n + 1) * mc_points);
        for j in 0..=n {
            let lo = if j == 0 { seq.t_start() } else { times[j - 1] };
            let hi = if j < n { times[j] } else { seq.t_end() };
            let len = hi - lo;
            for _ in 0..mc_points {
                let u = rng.uniform();
                idx.push(j);
                deltas.push((1.0 - u) * len);
                weights.push(len / mc_points as f64);
            }
        }

        let lam = self.query_intensities(tape, vars, &streams.sources, &idx, &deltas);
        let ev_rows: Vec<usize> = (0..n).collect();
        let mc_rows: Vec<usize> = (n..idx.len()).collect();
        let lam_ev = lam.gather_rows(&ev_rows);
        let marks_usize: Vec<usize> = seq.marks().iter().map(|&m| m as usize).collect();
        let sum_log_mark = lam_ev.take_per_row(&marks_usize).ln().sum();
        let sum_log_total = lam_ev.sum_rows().ln().sum();
        let mc_total = lam.gather_rows(&mc_rows).sum_rows();
        let w = tape.constant_real(weights.len(), 1, weights);
        let integral = mc_total.mul(&w).sum();
        Ok(NllParts { sum_log_mark, sum_log_total, integral, num_events: n })
    }

    /// Negative log-likelihood of one sequence as a scalar tape variable.
    pub fn nll(
        &self,
        tape: &Tape,
        vars: &ModelVars,
        seq: &EventSequence,
        mc_points: usize,
        rng: &mut CounterRng,
    ) -> Result<Var, ModelError> {
        let parts = self.nll_parts(tape, vars, seq, mc_points, rng, 0)?;
        Ok(parts.integral.sub(&parts.sum_log_mark))
    }

    /// Likelihood of one sequence with its decomposition into a time part
    /// and a mark part; `total = time + mark` holds by construction up to
    /// rounding of the two subtractions.
    pub fn log_likelihood(
        &self,
        seq: &EventSequence,
        mc_points: usize,
        mc_seed: u64,
    ) -> Result<LogLik, ModelError> {
        let tape = Tape::new_no_grad();
        let vars = self.leaves(&tape);
        let mut rng = CounterRng::new(mc_seed);
        let parts = self.nll_parts(&tape, &vars, seq, mc_points, &mut rng, 0)?;
        Ok(log_lik_from_parts(&parts))
    }

    /// Raw left-limit query surface: per-mark intensities at rows given by
    /// an interval index (events strictly before the point) and the gap
    /// since that interval's opening event. Row-major Q×K.
    pub fn intensity_rows(
        &self,
        seq: &EventSequence,
        idx: &[usize],
        deltas: &[f64],
    ) -> Result<Vec<f64>, ModelError> {
        self.check_marks(seq)?;
        let n = seq.len();
        for &j in idx {
            if j > n {
                return Err(ModelError::BadInterval { index: j, num_events: n });
            }
        }
        for &d in deltas {
            if !d.is_finite() || d < 0.0 {
                return Err(ModelError::BadGap { delta: d });
            }
        }
        let tape = Tape::new_no_grad();
        let vars = self.leaves(&tape);
        let streams = self.streams(&tape, &vars, seq, 0);
        let lam = self.query_intensities(&tape, &vars, &streams.sources, idx, deltas);
        Ok(lam.value().real_data().to_vec())
    }

    /// Left-limit intensities of every mark at a single time inside the
    /// sequence window.
    pub fn intensity_at(&self, seq: &EventSequence, t: f64) -> Result<Vec<f64>, ModelError> {
        if !(t >= seq.t_start() && t <= seq.t_end()) {
            return Err(ModelError::OutsideWindow {
                t,
                t_start: seq.t_start(),
                t_end: seq.t_end(),
            });
        }
        let j = interval_of(seq.times(), t);
        let base = if j == 0 { seq.t_start() } else { seq.times()[j - 1] };
        self.intensity_rows(seq, &[j], &[t - base])
    }

    /// Left-limit intensities on a sorted grid inside the window,
    /// row-major |grid|×K.
    pub fn intensity_trace(
        &self,
        seq: &EventSequence,
        grid: &[f64],
    ) -> Result<Vec<f64>, ModelError> {
        for (i, &t) in grid.iter().enumerate() {
            if i > 0 && t < grid[i - 1] {
                return Err(ModelError::UnsortedGrid { index: i });
            }
            if !(t >= seq.t_start() && t <= seq.t_end()) {
                return Err(ModelError::OutsideWindow {
                    t,
                    t_start: seq.t_start(),
                    t_end: seq.t_end(),
                });
            }
        }
        let times = seq.times();
        let (idx, deltas): (Vec<usize>, Vec<f64>) = grid
            .iter()
            .map(|&t| {
                let j = interval_of(times, t);
                let base = if j == 0 { seq.t_start() } else { times[j - 1] };
                (j, t - base)
            })
            .unzip();
        self.intensity_rows(seq, &idx, &deltas)
    }
}

/// Combine likelihood pieces into the reported decomposition.
pub fn log_lik_from_parts(parts: &NllParts) -> LogLik {
    let a = parts.sum_log_mark.value().scalar_value();
    let b = parts.sum_log_total.value().scalar_value();
    let i = parts.integral.value().scalar_value();
    LogLik {
        total: a - i,
        time: b - i,
        mark: a - b,
        integral: i,
        num_events: parts.num_events,
    }
}

/// Frozen conditioning snapshot: per-layer extended right limits after
/// each event and the per-interval stream modulation rows, enough to
/// answer any post-history left-limit query without re-scanning.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionedState {
    pub t_start: f64,
    /// Last event time, or `t_start` for an empty history.
    pub t_last: f64,
    pub num_events: usize,
    /// Per layer, (N+1)×P row-major real parts of the extended right limits.
    pub x_right_re: Vec<Vec<f64>>,
    /// Imaginary parts, same layout.
    pub x_right_im: Vec<Vec<f64>>,
    /// Per layer, (N+1)×H rows: window-start stream value then the left
    /// limit at each event — the modulation row of each interval.
    pub u_rows: Vec<Vec<f64>>,
}

impl S2P2Model {
    /// Materialize the conditioning snapshot for a sequence.
    pub fn condition(&self, seq: &EventSequence) -> Result<ConditionedState, ModelError> {
        self.check_marks(seq)?;
        let n = seq.len();
        let h = self.config.stream_dim;
        let tape = Tape::new_no_grad();
        let vars = self.leaves(&tape);
        let streams = self.streams(&tape, &vars, seq, 0);
        let mut x_right_re = Vec::new();
        let mut x_right_im = Vec::new();
        let mut u_rows = Vec::new();
        for src in &streams.sources {
            let xd = src.x_right_ext.value().complex_data();
            x_right_re.push(xd.iter().map(|z| z.re).collect());
            x_right_im.push(xd.iter().map(|z| z.im).collect());
            let ud = src.u_mod_rows.value().real_data();
            u_rows.push(ud[..(n + 1) * h].to_vec());
        }
        Ok(ConditionedState {
            t_start: seq.t_start(),
            t_last: seq.times().last().copied().unwrap_or(seq.t_start()),
            num_events: n,
            x_right_re,
            x_right_im,
            u_rows,
        })
    }

    /// Left-limit intensities at `t_last + deltas[q]` from a frozen
    /// snapshot; `deltas` must be non-negative (zero gives the right limit
    /// at the last event). Row-major Q×K.
    pub fn intensity_after(
        &self,
        cond: &ConditionedState,
        deltas: &[f64],
    ) -> Result<Vec<f64>, ModelError> {
        for &d in deltas {
            if !d.is_finite() || d < 0.0 {
                return Err(ModelError::BadGap { delta: d });
            }
        }
        let n = cond.num_events;
        let (p, h) = (self.config.state_dim, self.config.stream_dim);
        let tape = Tape::new_no_grad();
        let vars = self.leaves(&tape);
        let sources: Vec<QuerySource> = (0..self.config.num_layers)
            .map(|l| {
                let data: Vec<num_complex::Complex64> = cond.x_right_re[l]
                    .iter()
                    .zip(&cond.x_right_im[l])
                    .map(|(&r, &i)| num_complex::Complex64::new(r, i))
                    .collect();
                QuerySource {
                    x_right_ext: tape.constant(Value::complex(n + 1, p, data)),
                    u_mod_rows: tape.constant_real(n + 1, h, cond.u_rows[l].clone()),
                }
            })
            .collect();
        let idx = vec![n; deltas.len()];
        let lam = self.query_intensities(&tape, &vars, &sources, &idx, deltas);
        Ok(lam.value().real_data().to_vec())
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointTensor {
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    config: S2P2Config,
    params: BTreeMap<String, CheckpointTensor>,
}

impl S2P2Model {
    /// Write the model as a single self-describing JSON document. The
    /// write goes through a sibling temp file and a rename.
    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        let params = self
            .tensors()
            .into_iter()
            .map(|(name, shape, data)| {
                (name, CheckpointTensor { shape, data: data.to_vec() })
            })
            .collect();
        let file = CheckpointFile {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            params,
        };
        let text = serde_json::to_string_pretty(&file)?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, text)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Load a checkpoint, verifying the version, the tensor inventory and
    /// every shape against the stored config.
    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<S2P2Model, ModelError> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let file: CheckpointFile = serde_json::from_str(&text)?;
        if file.version != CHECKPOINT_VERSION {
            return Err(ModelError::Version { found: file.version });
        }
        let mut model = S2P2Model::init(file.config, 0);
        let expected: Vec<(String, [usize; 2])> = model
            .tensors()
            .into_iter()
            .map(|(name, shape, _)| (name, shape))
            .collect();
        for (name, shape) in &expected {
            let t = file.params.get(name).ok_or_else(|| ModelError::Tensor {
                name: name.clone(),
                problem: "missing".into(),
            })?;
            if t.shape != *shape || t.data.len() != shape[0] * shape[1] {
                return Err(ModelError::Tensor {
                    name: name.clone(),
                    problem: format!(
                        "shape {:?} with {} values, expected {:?}",
                        t.shape,
                        t.data.len(),
                        shape
                    ),
                });
            }
        }
        if file.params.len() != expected.len() {
            let known: Vec<&String> = file
                .params
                .keys()
                .filter(|k| !expected.iter().any(|(n, _)| n == *k))
                .collect();
            return Err(ModelError::Tensor {
                name: format!("{known:?}"),
                problem: "unknown tensors in checkpoint".into(),
            });
        }
        for (name, dst) in model.tensors_mut() {
            dst.copy_from_slice(&file.params[&name].data);
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(times: Vec<f64>, marks: Vec<u32>, t_start: f64, t_end: f64) -> EventSequence {
        EventSequence::new(times, marks, t_start, t_end).unwrap()
    }

    fn random_model(k: usize, l: usize, p: usize, h: usize, seed: u64) -> S2P2Model {
        let config = S2P2Config {
            num_marks: k,
            num_layers: l,
            state_dim: p,
            stream_dim: h,
            input_dependent: true,
            zoh_mode: ZohMode::Backward,
        };
        let mut model = S2P2Model::init(config, seed);
        // Kick the defaults so feedthrough, head and norms all matter.
        let mut rng = CounterRng::new(seed ^ 0xABCD);
        for (name, t) in model.tensors_mut() {
            if name.ends_with(".d") || name.ends_with("head.b") || name.ends_with(".shift") {
                for v in t.iter_mut() {
                    *v = rng.normal(0.0, 0.2);
                }
            }
            if name.ends_with("head.log_s") {
                for v in t.iter_mut() {
                    *v = rng.normal(0.0, 0.3);
                }
            }
            if name.ends_with("x0_re") || name.ends_with("x0_im") {
                for v in t.iter_mut() {
                    *v = rng.normal(0.0, 0.5);
                }
            }
        }
        model
    }

    fn random_seq(k: usize, n: usize, t_end: f64, seed: u64) -> EventSequence {
        let mut rng = CounterRng::new(seed);
        let mut times: Vec<f64> = (0..n).map(|_| rng.uniform_in(0.0, t_end)).collect();
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        times.dedup();
        let marks = (0..times.len()).map(|_| rng.below(k as u64) as u32).collect();
        EventSequence::new(times, marks, 0.0, t_end).unwrap()
    }

    #[test]
    fn constant_head_model_is_flat() {
        // Zero readout and feedthrough make the stream constant, so the
        // intensity is the head value everywhere and the likelihood is
        // the homogeneous closed form.
        let mut model = S2P2Model::init(
            S2P2Config { num_marks: 1, num_layers: 1, state_dim: 4, stream_dim: 4, ..Default::default() },
            7,
        );
        for (name, t) in model.tensors_mut() {
            if name.contains("c_re") || name.contains("c_im") || name.contains("head.w") {
                t.iter_mut().for_each(|v| *v = 0.0);
            }
            if name == "head.b" {
                t[0] = (std::f64::consts::E - 1.0).ln(); // softplus → exactly 1
            }
        }
        let s = seq(vec![1.0, 2.5, 6.0], vec![0, 0, 0], 0.0, 10.0);
        for t in [0.0, 0.3, 1.0, 2.5, 7.7, 10.0] {
            let lam = model.intensity_at(&s, t).unwrap();
            assert!((lam[0] - 1.0).abs() < 1e-12, "λ({t}) = {}", lam[0]);
        }
        let ll = model.log_likelihood(&s, 19, 5).unwrap();
        // log L = Σ log 1 − 10·1.
        assert!((ll.total + 10.0).abs() < 1e-9, "total {}", ll.total);
        assert!((ll.integral - 10.0).abs() < 1e-9);
        assert!(ll.mark.abs() < 1e-12);
        assert!((ll.time - ll.total).abs() < 1e-12);
    }

    #[test]
    fn decomposition_identity() {
        for trial in 0..6 {
            let model = random_model(3, 2, 6, 5, 40 + trial);
            let s = random_seq(3, 12, 8.0, 90 + trial);
            let ll = model.log_likelihood(&s, 10, trial).unwrap();
            for v in [ll.total, ll.time, ll.mark, ll.integral] {
                assert!(v.is_finite());
            }
            assert!(
                (ll.time + ll.mark - ll.total).abs() < 1e-12 * (1.0 + ll.total.abs()),
                "decomposition off: {} + {} vs {}",
                ll.time,
                ll.mark,
                ll.total
            );
        }
    }

    #[test]
    fn mc_integral_is_unbiased() {
        let model = random_model(2, 2, 5, 4, 77);
        let s = random_seq(2, 9, 6.0, 123);

        // Reference: per-interval trapezoid on a fine inner grid, entered
        // just past each left endpoint to stay on the correct limit.
        let times = s.times();
        let mut reference = 0.0;
        for j in 0..=s.len() {
            let lo = if j == 0 { s.t_start() } else { times[j - 1] };
            let hi = if j < s.len() { times[j] } else { s.t_end() };
            let len = hi - lo;
            if len == 0.0 {
                continue;
            }
            let m = 512;
            let grid: Vec<f64> = (0..=m)
                .map(|i| {
                    let frac = i as f64 / m as f64;
                    (lo + len * 1e-9).min(hi) * (1.0 - frac) + hi * frac
                })
                .collect();
            let rows = model
                .intensity_rows(&s, &vec![j; grid.len()], &grid.iter().map(|t| t - lo).collect::<Vec<_>>())
                .unwrap();
            let totals: Vec<f64> = rows.chunks(2).map(|r| r[0] + r[1]).collect();
            reference += crate::quad::trapezoid(&grid, &totals);
        }

        let draws = 200;
        let mut ests = Vec::with_capacity(draws);
        for d in 0..draws {
            let ll = model.log_likelihood(&s, 16, 1000 + d as u64).unwrap();
            ests.push(ll.integral);
        }
        let mean = ests.iter().sum::<f64>() / draws as f64;
        let var = ests.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (draws - 1) as f64;
        let se = (var / draws as f64).sqrt();
        assert!(
            (mean - reference).abs() < 3.0 * se + 1e-4 * reference.abs(),
            "MC mean {mean} vs reference {reference} (se {se})"
        );
        // A large draw count gets close on its own.
        let big = model.log_likelihood(&s, 4096, 9).unwrap();
        assert!((big.integral - reference).abs() < 0.01 * reference.abs());
    }

    #[test]
    fn truncating_unseen_future_leaves_intensity_bitwise_equal() {
        let model = random_model(3, 2, 6, 5, 51);
        let s = random_seq(3, 11, 9.0, 17);
        let t = (s.times()[4] + s.times()[5]) / 2.0;
        let kept = 5;
        let trunc = seq(
            s.times()[..kept].to_vec(),
            s.marks()[..kept].to_vec(),
            s.t_start(),
            s.t_end(),
        );
        let a = model.intensity_at(&s, t).unwrap();
        let b = model.intensity_at(&trunc, t).unwrap();
        assert_eq!(a, b, "future events leaked into a left-limit query");
    }

    #[test]
    fn mark_relabeling_symmetry() {
        let k = 3;
        let model = random_model(k, 2, 5, 4, 63);
        let s = random_seq(k, 10, 7.0, 29);
        // Cyclic relabeling σ(m) = m+1 mod K applied to data and params.
        let sigma = |m: usize| (m + 1) % k;
        let mut permuted = model.clone();
        let h = model.config.stream_dim;
        for m in 0..k {
            for c in 0..h {
                permuted.mark_embed[sigma(m) * h + c] = model.mark_embed[m * h + c];
                permuted.head_w[c * k + sigma(m)] = model.head_w[c * k + m];
            }
            permuted.head_b[sigma(m)] = model.head_b[m];
            permuted.head_log_s[sigma(m)] = model.head_log_s[m];
        }
        let s2 = seq(
            s.times().to_vec(),
            s.marks().iter().map(|&m| sigma(m as usize) as u32).collect(),
            s.t_start(),
            s.t_end(),
        );
        let ll1 = model.log_likelihood(&s, 14, 4).unwrap();
        let ll2 = permuted.log_likelihood(&s2, 14, 4).unwrap();
        assert!((ll1.total - ll2.total).abs() < 1e-10 * (1.0 + ll1.total.abs()));
        assert!((ll1.mark - ll2.mark).abs() < 1e-10 * (1.0 + ll1.mark.abs()));
        let t = 3.3;
        let lam1 = model.intensity_at(&s, t).unwrap();
        let lam2 = permuted.intensity_at(&s2, t).unwrap();
        for m in 0..k {
            assert!((lam1[m] - lam2[sigma(m)]).abs() < 1e-10 * (1.0 + lam1[m].abs()));
        }
    }

    #[test]
    fn empty_sequence_is_pure_integral() {
        let model = random_model(2, 2, 5, 4, 81);
        let s = seq(vec![], vec![], 0.0, 4.0);
        let ll = model.log_likelihood(&s, 64, 3).unwrap();
        assert_eq!(ll.num_events, 0);
        assert!(ll.mark == 0.0);
        assert!((ll.total + ll.integral).abs() < 1e-12);
        let lam = model.intensity_at(&s, 2.0).unwrap();
        assert!(lam.iter().all(|v| v.is_finite() && *v > 0.0));
        let cond = model.condition(&s).unwrap();
        assert_eq!(cond.num_events, 0);
        assert_eq!(cond.t_last, 0.0);
    }

    #[test]
    fn trace_matches_pointwise_queries_and_left_limits() {
        let model = random_model(2, 2, 6, 5, 99);
        let s = random_seq(2, 8, 6.0, 55);
        let mut grid: Vec<f64> = (0..40).map(|i| 6.0 * i as f64 / 39.0).collect();
        grid.extend_from_slice(s.times());
        grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let trace = model.intensity_trace(&s, &grid).unwrap();
        for (i, &t) in grid.iter().enumerate() {
            let single = model.intensity_at(&s, t).unwrap();
            assert_eq!(&trace[i * 2..i * 2 + 2], &single[..], "grid point {t}");
        }
        // At an event time the trace holds the pre-event value.
        let t1 = s.times()[2];
        let before = model.intensity_at(&s, t1 - 1e-7).unwrap();
        let at = model.intensity_at(&s, t1).unwrap();
        for m in 0..2 {
            assert!((at[m] - before[m]).abs() < 1e-4 * (1.0 + at[m].abs()));
        }
    }

    #[test]
    fn conditioned_snapshot_matches_window_queries() {
        let model = random_model(3, 2, 5, 6, 111);
        let s = random_seq(3, 9, 5.0, 77);
        let cond = model.condition(&s).unwrap();
        let t_last = cond.t_last;
        let room = s.t_end() - t_last;
        let deltas = [0.03 * room, 0.4 * room, 0.97 * room];
        let from_state = model.intensity_after(&cond, &deltas).unwrap();
        for (q, &d) in deltas.iter().enumerate() {
            let direct = model.intensity_at(&s, t_last + d).unwrap();
            for m in 0..3 {
                let a = from_state[q * 3 + m];
                let b = direct[m];
                assert!(
                    (a - b).abs() < 1e-12 * (1.0 + b.abs()),
                    "δ = {d}, mark {m}: {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn state_probe_decays_an_undriven_first_layer_in_closed_form() {
        // The first layer's driving stream is identically zero, so its
        // state is a pure impulse response: right limits accumulate
        // Ẽα kicks and decay as exp(Λδ) in between. Rebuild that with
        // plain complex arithmetic and compare against the probe.
        let config = S2P2Config {
            num_marks: 2,
            num_layers: 2,
            state_dim: 5,
            stream_dim: 4,
            input_dependent: false,
            zoh_mode: ZohMode::Backward,
        };
        let mut model = S2P2Model::init(config, 40);
        let mut rng = CounterRng::new(91);
        for (name, t) in model.tensors_mut() {
            if name.ends_with("x0_re") || name.ends_with("x0_im") {
                for v in t.iter_mut() {
                    *v = rng.normal(0.0, 0.5);
                }
            }
        }
        let s = seq(vec![0.7, 1.9, 3.1], vec![1, 0, 1], 0.0, 4.0);
        let (p, h) = (5usize, 4usize);
        let layer = &model.layers[0];
        let lambda: Vec<Complex64> = (0..p)
            .map(|i| Complex64::new(-layer.rho[i].exp(), layer.theta[i]))
            .collect();
        let kick = |mark: usize| -> Vec<Complex64> {
            (0..p)
                .map(|i| {
                    (0..h)
                        .map(|j| {
                            Complex64::new(layer.e_re[i * h + j], layer.e_im[i * h + j])
                                * model.mark_embed[mark * h + j]
                        })
                        .sum()
                })
                .collect()
        };
        let mut rights: Vec<Vec<Complex64>> = vec![(0..p)
            .map(|i| Complex64::new(layer.x0_re[i], layer.x0_im[i]))
            .collect()];
        for (i, &gap) in s.gaps().iter().enumerate() {
            let prev = rights.last().unwrap().clone();
            let k = kick(s.marks()[i] as usize);
            rights.push(
                (0..p).map(|j| (lambda[j] * gap).exp() * prev[j] + k[j]).collect(),
            );
        }
        // Queries inside each interval, at an exact event time (left
        // limit), and at the window edges.
        let ts = [0.0, 0.3, 0.7, 1.0, 1.9, 2.5, 3.1, 3.9, 4.0];
        let probed = model.state_trace(&s, 0, &ts).unwrap();
        let times = s.times();
        for (q, &t) in ts.iter().enumerate() {
            let j = times.partition_point(|&ti| ti < t);
            let anchor = if j == 0 { s.t_start() } else { times[j - 1] };
            for i in 0..p {
                let want = (lambda[i] * (t - anchor)).exp() * rights[j][i];
                let got = probed[q * p + i];
                assert!(
                    (want - got).norm() < 1e-12,
                    "t = {t}, channel {i}: {want} vs {got}"
                );
            }
        }
        assert!(matches!(
            model.state_trace(&s, 2, &ts),
            Err(ModelError::BadLayer { layer: 2, num_layers: 2 })
        ));
        assert!(model.state_trace(&s, 1, &[1.0, 0.5]).is_err());
        assert!(model.state_trace(&s, 0, &[5.0]).is_err());
    }

    #[test]
    fn single_layer_ignores_hold_mode() {
        let mut model = random_model(2, 1, 5, 4, 121);
        let s = random_seq(2, 10, 6.0, 33);
        model.config.zoh_mode = ZohMode::Backward;
        for l in &mut model.layers {
            l.zoh_mode = ZohMode::Backward;
        }
        let a = model.log_likelihood(&s, 12, 6).unwrap();
        model.config.zoh_mode = ZohMode::Forward;
        for l in &mut model.layers {
            l.zoh_mode = ZohMode::Forward;
        }
        let b = model.log_likelihood(&s, 12, 6).unwrap();
        assert_eq!(a.total, b.total, "layer one is driven by the zero stream");
    }

    #[test]
    fn deeper_stacks_respond_to_hold_mode() {
        let mut model = random_model(2, 2, 5, 4, 131);
        let s = random_seq(2, 10, 6.0, 44);
        model.config.zoh_mode = ZohMode::Backward;
        for l in &mut model.layers {
            l.zoh_mode = ZohMode::Backward;
        }
        let a = model.log_likelihood(&s, 12, 6).unwrap();
        model.config.zoh_mode = ZohMode::Forward;
        for l in &mut model.layers {
            l.zoh_mode = ZohMode::Forward;
        }
        let b = model.log_likelihood(&s, 12, 6).unwrap();
        assert!(
            (a.total - b.total).abs() > 1e-9,
            "hold endpoint choice should matter beyond one layer"
        );
    }

    #[test]
    fn padding_never_changes_the_loss() {
        let model = random_model(3, 2, 5, 4, 141);
        let s = random_seq(3, 7, 5.0, 66);
        let eval = |pad_to: usize| -> (f64, f64, f64) {
            let tape = Tape::new_no_grad();
            let vars = model.leaves(&tape);
            let mut rng = CounterRng::new(42);
            let parts = model.nll_parts(&tape, &vars, &s, 11, &mut rng, pad_to).unwrap();
            (
                parts.sum_log_mark.value().scalar_value(),
                parts.sum_log_total.value().scalar_value(),
                parts.integral.value().scalar_value(),
            )
        };
        let bare = eval(0);
        for pad in [s.len(), s.len() + 1, s.len() + 9] {
            assert_eq!(eval(pad), bare, "padding to {pad} moved the loss");
        }
    }

    #[test]
    fn window_and_input_validation() {
        let model = random_model(2, 1, 4, 3, 151);
        let s = random_seq(2, 4, 5.0, 88);
        assert!(matches!(
            model.intensity_at(&s, -0.1),
            Err(ModelError::OutsideWindow { .. })
        ));
        assert!(matches!(
            model.intensity_at(&s, 5.1),
            Err(ModelError::OutsideWindow { .. })
        ));
        assert!(matches!(
            model.intensity_trace(&s, &[1.0, 0.5]),
            Err(ModelError::UnsortedGrid { index: 1 })
        ));
        let bad = seq(vec![1.0], vec![5], 0.0, 5.0);
        assert!(matches!(
            model.log_likelihood(&bad, 4, 0),
            Err(ModelError::MarkOutOfRange { mark: 5, .. })
        ));
        assert!(matches!(
            model.intensity_rows(&s, &[9], &[0.1]),
            Err(ModelError::BadInterval { .. })
        ));
        assert!(matches!(
            model.intensity_rows(&s, &[0], &[-0.5]),
            Err(ModelError::BadGap { .. })
        ));
    }

    #[test]
    fn leaf_names_align_with_tensors() {
        let model = random_model(3, 2, 4, 5, 161);
        let tape = Tape::new();
        let vars = model.leaves(&tape);
        let named = vars.named();
        let tensors = model.tensors();
        assert_eq!(named.len(), tensors.len());
        for ((vn, var), (tn, shape, data)) in named.iter().zip(&tensors) {
            assert_eq!(vn, tn);
            assert_eq!(var.rows(), shape[0]);
            assert_eq!(var.cols(), shape[1]);
            assert_eq!(var.value().real_data(), *data);
        }
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let model = random_model(3, 2, 5, 4, 171);
        model.save_checkpoint(&path).unwrap();
        let loaded = S2P2Model::load_checkpoint(&path).unwrap();
        assert_eq!(loaded.config, model.config);
        for ((n1, s1, d1), (n2, s2, d2)) in model.tensors().iter().zip(&loaded.tensors()) {
            assert_eq!(n1, n2);
            assert_eq!(s1, s2);
            assert_eq!(d1, d2, "tensor {n1} changed across save/load");
        }
        let s = random_seq(3, 6, 4.0, 19);
        assert_eq!(
            model.intensity_at(&s, 2.2).unwrap(),
            loaded.intensity_at(&s, 2.2).unwrap()
        );

        // Version and shape tampering are rejected.
        let text = std::fs::read_to_string(&path).unwrap();
        let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        doc["version"] = serde_json::json!(99);
        std::fs::write(&path, serde_json::to_string(&doc).unwrap()).unwrap();
        assert!(matches!(
            S2P2Model::load_checkpoint(&path),
            Err(ModelError::Version { found: 99 })
        ));
        doc["version"] = serde_json::json!(CHECKPOINT_VERSION);
        doc["params"]["head.b"]["shape"] = serde_json::json!([2, 9]);
        std::fs::write(&path, serde_json::to_string(&doc).unwrap()).unwrap();
        assert!(matches!(
            S2P2Model::load_checkpoint(&path),
            Err(ModelError::Tensor { .. })
        ));
    }

    #[test]
    fn nll_gradients_match_finite_differences_smoke() {
        let model = random_model(2, 2, 4, 3, 181);
        let s = random_seq(2, 6, 4.0, 202);
        let loss_of = |m: &S2P2Model| -> f64 {
            let tape = Tape::new_no_grad();
            let vars = m.leaves(&tape);
            let mut rng = CounterRng::new(7);
            let parts = m.nll_parts(&tape, &vars, &s, 8, &mut rng, 0).unwrap();
            parts.integral.value().scalar_value() - parts.sum_log_mark.value().scalar_value()
        };
        let tape = Tape::new();
        let vars = model.leaves(&tape);
        let mut rng = CounterRng::new(7);
        let loss = model.nll(&tape, &vars, &s, 8, &mut rng).unwrap();
        let grads = tape.backward(&loss);
        let h = 2e-6;
        for (name, var) in vars.named() {
            if !["mark_embed", "layers.0.rho", "layers.1.c_im", "norms.0.scale", "head.log_s", "layers.0.x0_im", "layers.1.w_prime"]
                .contains(&name.as_str())
            {
                continue;
            }
            let g = grads.wrt(&var).unwrap();
            let gd = g.real_data();
            let probe = gd.len() / 2;
            let mut up = model.clone();
            let mut dn = model.clone();
            for (tname, t) in up.tensors_mut() {
                if tname == name {
                    t[probe] += h;
                }
            }
            for (tname, t) in dn.tensors_mut() {
                if tname == name {
                    t[probe] -= h;
                }
            }
            let fd = (loss_of(&up) - loss_of(&dn)) / (2.0 * h);
            let denom = fd.abs().max(gd[probe].abs()).max(1.0);
            assert!(
                (fd - gd[probe]).abs() / denom < 2e-5,
                "{name}[{probe}]: fd {fd} vs grad {}",
                gd[probe]
            );
        }
    }
}

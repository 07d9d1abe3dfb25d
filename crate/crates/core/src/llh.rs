//! Latent linear-Hawkes layers: banks of independent complex channels with
//! exact zero-order-hold transitions between events and additive impulses at
//! events.
//!
//! Each layer owns a diagonal complex system. Between events the latent
//! state obeys
//!
//! ```text
//!     d/dt x̃(t) = Λ_eff (x̃(t) + B̃ u),      Λ_eff = diag(λ_1, …, λ_P),
//! ```
//!
//! with the driving stream u held constant over the step, so the transition
//! over a gap of length δ is exact:
//!
//! ```text
//!     x̃(t+δ) = Λ̄ x̃(t) + (Λ̄ − I) B̃ u,      Λ̄ = exp(Λ_eff δ).
//! ```
//!
//! At an event with mark k the state jumps by an impulse Ẽ α_k, giving the
//! right limit from the left limit. Stability is built in: the spectrum is
//! parameterized as λ_p = −exp(ρ_p) + i·θ_p, so Re λ_p < 0 for every real
//! ρ_p. When `input_dependent` is set, the decay rates are rescaled per
//! step by softplus(W′u + b′) evaluated at the stream value of the most
//! recent event, a strictly positive relative time scale.
//!
//! The layer itself is agnostic about which endpoint of an interval the
//! held stream value comes from; the surrounding stack selects the held
//! rows according to [`ZohMode`] and passes them in.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::rng::CounterRng;

/// Which endpoint of an inter-event interval supplies the held stream
/// value for the zero-order hold: the previous event's right limit
/// (`Forward`) or the current event's left limit (`Backward`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZohMode {
    #[default]
    Backward,
    Forward,
}

/// Parameters of one latent linear-Hawkes layer.
///
/// Complex tensors are stored as separate real and imaginary parts so that
/// every trainable leaf is real. Shapes, with P = `state_dim` and
/// H = `stream_dim` (impulse embeddings share the stream width):
///
/// * `rho`, `theta`: P — spectrum λ_p = −exp(ρ_p) + i·θ_p;
/// * `b_re`/`b_im`: P×H — input matrix B̃;
/// * `c_re`/`c_im`: H×P — readout C̃ (the output is 2·Re(C̃ x̃) + D u);
/// * `d`: H — diagonal feedthrough;
/// * `e_re`/`e_im`: P×H — impulse map Ẽ;
/// * `x0_re`/`x0_im`: P — learned initial state at the window start;
/// * `w_prime`: H×P and `b_prime`: P — time-scale modulation net.
#[derive(Debug, Clone)]
pub struct LlhLayerParams {
    pub state_dim: usize,
    pub stream_dim: usize,
    pub rho: Vec<f64>,
    pub theta: Vec<f64>,
    pub b_re: Vec<f64>,
    pub b_im: Vec<f64>,
    pub c_re: Vec<f64>,
    pub c_im: Vec<f64>,
    pub d: Vec<f64>,
    pub e_re: Vec<f64>,
    pub e_im: Vec<f64>,
    pub x0_re: Vec<f64>,
    pub x0_im: Vec<f64>,
    pub w_prime: Vec<f64>,
    pub b_prime: Vec<f64>,
    pub input_dependent: bool,
    pub zoh_mode: ZohMode,
}

impl LlhLayerParams {
    /// Fresh layer with the standard spectral layout: every channel decays
    /// at rate 1/2 and the imaginary parts are linearly spaced, θ_p = πp.
    /// B̃, C̃ and Ẽ draw all parts from N(0, 1/P) (order: b_re, b_im, c_re,
    /// c_im, e_re, e_im, row-major within each). The feedthrough, the
    /// initial state and the modulation weights start at zero, and the
    /// modulation bias at ln(e−1) so that softplus gives exactly 1 and the
    /// input-dependent dynamics start as the plain dynamics.
    pub fn init(
        state_dim: usize,
        stream_dim: usize,
        input_dependent: bool,
        zoh_mode: ZohMode,
        rng: &mut CounterRng,
    ) -> Self {
        let (p, h) = (state_dim, stream_dim);
        let sd = (1.0 / p as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.normal(0.0, sd)).collect() };
        let b_re = draw(p * h);
        let b_im = draw(p * h);
        let c_re = draw(h * p);
        let c_im = draw(h * p);
        let e_re = draw(p * h);
        let e_im = draw(p * h);
        LlhLayerParams {
            state_dim,
            stream_dim,
            rho: vec![0.5f64.ln(); p],
            theta: (0..p).map(|i| std::f64::consts::PI * i as f64).collect(),
            b_re,
            b_im,
            c_re,
            c_im,
            d: vec![0.0; h],
            e_re,
            e_im,
            x0_re: vec![0.0; p],
            x0_im: vec![0.0; p],
            w_prime: vec![0.0; h * p],
            b_prime: vec![(std::f64::consts::E - 1.0).ln(); p],
            input_dependent,
            zoh_mode,
        }
    }

    /// Register every tensor as a tape leaf and assemble the complex views.
    pub fn leaves(&self, tape: &Tape) -> LayerVars {
        let (p, h) = (self.state_dim, self.stream_dim);
        let rho = tape.leaf_real(1, p, self.rho.clone());
        let theta = tape.leaf_real(1, p, self.theta.clone());
        let b_re = tape.leaf_real(p, h, self.b_re.clone());
        let b_im = tape.leaf_real(p, h, self.b_im.clone());
        let c_re = tape.leaf_real(h, p, self.c_re.clone());
        let c_im = tape.leaf_real(h, p, self.c_im.clone());
        let d = tape.leaf_real(1, h, self.d.clone());
        let e_re = tape.leaf_real(p, h, self.e_re.clone());
        let e_im = tape.leaf_real(p, h, self.e_im.clone());
        let x0_re = tape.leaf_real(1, p, self.x0_re.clone());
        let x0_im = tape.leaf_real(1, p, self.x0_im.clone());
        let w_prime = tape.leaf_real(h, p, self.w_prime.clone());
        let b_prime = tape.leaf_real(1, p, self.b_prime.clone());
        let lam = rho.exp().neg().complex_from_parts(&theta);
        let b = b_re.complex_from_parts(&b_im);
        let c = c_re.complex_from_parts(&c_im);
        let e = e_re.complex_from_parts(&e_im);
        let x0 = x0_re.complex_from_parts(&x0_im);
        LayerVars {
            rho,
            theta,
            b_re,
            b_im,
            c_re,
            c_im,
            d,
            e_re,
            e_im,
            x0_re,
            x0_im,
            w_prime,
            b_prime,
            lam,
            b,
            c,
            e,
            x0,
            input_dependent: self.input_dependent,
            zoh_mode: self.zoh_mode,
        }
    }
}

/// Tape-registered view of a layer: the raw real leaves (gradient
/// endpoints) plus the assembled complex tensors used by the recurrence.
pub struct LayerVars {
    pub rho: Var,
    pub theta: Var,
    pub b_re: Var,
    pub b_im: Var,
    pub c_re: Var,
    pub c_im: Var,
    pub d: Var,
    pub e_re: Var,
    pub e_im: Var,
    pub x0_re: Var,
    pub x0_im: Var,
    pub w_prime: Var,
    pub b_prime: Var,
    /// 1×P, λ_p = −exp(ρ_p) + i·θ_p.
    pub lam: Var,
    /// P×H complex input matrix.
    pub b: Var,
    /// H×P complex readout.
    pub c: Var,
    /// P×H complex impulse map.
    pub e: Var,
    /// 1×P complex initial state.
    pub x0: Var,
    pub input_dependent: bool,
    pub zoh_mode: ZohMode,
}

/// Per-step spectrum: softplus(u W′ + b′) ⊙ λ when the layer is
/// input-dependent, otherwise λ broadcast to each of the Q rows of
/// `u_mod`. `u_mod` carries the stream value of the most recent event for
/// each step (Q×H); the result is Q×P.
pub fn effective_lambda(tape: &Tape, vars: &LayerVars, u_mod: &Var) -> Var {
    let q = u_mod.rows();
    let p = vars.lam.cols();
    if vars.input_dependent {
        let gate = u_mod.matmul(&vars.w_prime).add_bias_row(&vars.b_prime).softplus();
        vars.lam.mul_real(&gate)
    } else {
        let ones = tape.constant_real(q, p, vec![1.0; q * p]);
        vars.lam.mul_real(&ones)
    }
}

/// Zero-order-hold step factors for per-row gaps: Λ̄ = exp(λ_eff·δ) and the
/// input factor Λ̄ − 1. A zero gap gives the exact identity pair (1, 0).
pub fn discretize(tape: &Tape, lam_eff: &Var, dt: &[f64]) -> (Var, Var) {
    let q = lam_eff.rows();
    assert_eq!(dt.len(), q, "one gap per step row");
    let dt_col = tape.constant_real(q, 1, dt.to_vec());
    let bar = lam_eff.mul_real(&dt_col).exp();
    let factor = bar.add_scalar(-1.0);
    (bar, factor)
}

/// States produced by conditioning a layer on an event sequence: right
/// limits just after each event and left limits just before. The left
/// limit is the right limit minus the event's impulse, exactly.
pub struct LayerFlow {
    pub x_right: Var,
    pub x_left: Var,
}

/// Run the layer across a sequence of N inter-event gaps. Row i of
/// `held_u` is the stream value held over gap i (the caller selects the
/// endpoint per [`ZohMode`]); row i of `u_mod` is the modulation input for
/// gap i (the most recent event's left-limit stream value); row i of
/// `impulses` is the jump Ẽ α_k added at the event closing gap i. The scan
/// starts from the layer's learned initial state.
pub fn layer_forward(
    tape: &Tape,
    vars: &LayerVars,
    dt: &[f64],
    held_u: &Var,
    u_mod: &Var,
    impulses: &Var,
) -> LayerFlow {
    let lam_eff = effective_lambda(tape, vars, u_mod);
    let (bar, factor) = discretize(tape, &lam_eff, dt);
    let held_b = held_u.rc_matmul_nt(&vars.b);
    let offsets = factor.mul(&held_b).add(impulses);
    let x_right = bar.scan(&offsets, &vars.x0);
    let x_left = x_right.sub(impulses);
    LayerFlow { x_right, x_left }
}

/// Evolve per-row states forward by per-row gaps with no event at the end:
/// x ↦ Λ̄ x + (Λ̄ − 1) B̃ u_held. Used for left-limit queries strictly
/// between (or after) events.
pub fn evolve_state(
    tape: &Tape,
    vars: &LayerVars,
    x: &Var,
    deltas: &[f64],
    held_u: &Var,
    u_mod: &Var,
) -> Var {
    let lam_eff = effective_lambda(tape, vars, u_mod);
    let (bar, factor) = discretize(tape, &lam_eff, deltas);
    let held_b = held_u.rc_matmul_nt(&vars.b);
    bar.mul(x).add(&factor.mul(&held_b))
}

/// Layer readout y = 2·Re(C̃ x̃) + D u for per-row states and stream values.
pub fn layer_output(vars: &LayerVars, x: &Var, u: &Var) -> Var {
    x.project_real2(&vars.c).add(&u.mul_bcast_row(&vars.d))
}

/// Complex spectrum as plain values, λ_p = −exp(ρ_p) + i·θ_p.
pub fn spectrum(params: &LlhLayerParams) -> Vec<Complex64> {
    params
        .rho
        .iter()
        .zip(&params.theta)
        .map(|(&r, &t)| Complex64::new(-r.exp(), t))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Value;

    fn test_rng(seed: u64) -> CounterRng {
        CounterRng::new(seed)
    }

    fn random_layer(p: usize, h: usize, input_dependent: bool, seed: u64) -> LlhLayerParams {
        let mut rng = test_rng(seed);
        let mut params = LlhLayerParams::init(p, h, input_dependent, ZohMode::Backward, &mut rng);
        // Perturb the defaults so nothing is accidentally zero.
        for v in params.rho.iter_mut() {
            *v += rng.uniform_in(-0.3, 0.3);
        }
        for v in params.theta.iter_mut() {
            *v += rng.uniform_in(-0.2, 0.2);
        }
        for v in params.d.iter_mut() {
            *v = rng.normal(0.0, 0.5);
        }
        for v in params.x0_re.iter_mut().chain(params.x0_im.iter_mut()) {
            *v = rng.normal(0.0, 0.7);
        }
        for v in params.w_prime.iter_mut() {
            *v = rng.normal(0.0, 0.3);
        }
        for v in params.b_prime.iter_mut() {
            *v += rng.uniform_in(-0.4, 0.4);
        }
        params
    }

    fn random_real(tape: &Tape, rows: usize, cols: usize, rng: &mut CounterRng) -> Var {
        tape.constant_real(rows, cols, (0..rows * cols).map(|_| rng.normal(0.0, 1.0)).collect())
    }

    fn random_complex(tape: &Tape, rows: usize, cols: usize, rng: &mut CounterRng) -> Var {
        let data: Vec<Complex64> =
            (0..rows * cols).map(|_| Complex64::new(rng.normal(0.0, 1.0), rng.normal(0.0, 1.0))).collect();
        tape.constant(Value::complex(rows, cols, data))
    }

    #[test]
    fn zero_gap_is_identity() {
        let tape = Tape::new_no_grad();
        let params = random_layer(4, 3, true, 11);
        let vars = params.leaves(&tape);
        let mut rng = test_rng(7);
        let u = random_real(&tape, 5, 3, &mut rng);
        let lam_eff = effective_lambda(&tape, &vars, &u);
        let (bar, factor) = discretize(&tape, &lam_eff, &[0.0; 5]);
        for z in bar.value().complex_data() {
            assert_eq!(*z, Complex64::new(1.0, 0.0));
        }
        for z in factor.value().complex_data() {
            assert_eq!(*z, Complex64::new(0.0, 0.0));
        }
    }

    #[test]
    fn unit_decay_halves_over_ln_two() {
        // λ = −1 (ρ = 0, θ = 0) over δ = ln 2 gives Λ̄ = 1/2.
        let tape = Tape::new_no_grad();
        let mut params = LlhLayerParams::init(1, 1, false, ZohMode::Backward, &mut test_rng(0));
        params.rho[0] = 0.0;
        params.theta[0] = 0.0;
        let vars = params.leaves(&tape);
        let u = tape.constant_real(1, 1, vec![0.0]);
        let lam_eff = effective_lambda(&tape, &vars, &u);
        let (bar, factor) = discretize(&tape, &lam_eff, &[std::f64::consts::LN_2]);
        let b = bar.value().complex_data()[0];
        assert!((b.re - 0.5).abs() < 1e-15 && b.im.abs() < 1e-15);
        let f = factor.value().complex_data()[0];
        assert!((f.re + 0.5).abs() < 1e-15);
    }

    #[test]
    fn effective_lambda_is_plain_lambda_at_init() {
        // softplus(ln(e−1)) = 1, so a fresh input-dependent layer evolves
        // exactly like the unmodulated one.
        let tape = Tape::new_no_grad();
        let params = LlhLayerParams::init(6, 4, true, ZohMode::Backward, &mut test_rng(3));
        let vars = params.leaves(&tape);
        let mut rng = test_rng(4);
        let u = random_real(&tape, 7, 4, &mut rng);
        let lam_eff = effective_lambda(&tape, &vars, &u);
        let base = spectrum(&params);
        for (i, z) in lam_eff.value().complex_data().iter().enumerate() {
            let want = base[i % 6];
            assert!((z - want).norm() < 1e-14 * (1.0 + want.norm()));
        }
    }

    #[test]
    fn effective_lambda_keeps_decay_negative() {
        let tape = Tape::new_no_grad();
        let mut rng = test_rng(21);
        for trial in 0..25 {
            let params = random_layer(5, 3, true, 100 + trial);
            let vars = params.leaves(&tape);
            let u = random_real(&tape, 9, 3, &mut rng);
            let lam_eff = effective_lambda(&tape, &vars, &u);
            for z in lam_eff.value().complex_data() {
                assert!(z.re < 0.0, "decay rate must stay negative, got {z}");
            }
        }
    }

    #[test]
    fn init_spectral_layout() {
        let params = LlhLayerParams::init(4, 2, false, ZohMode::Forward, &mut test_rng(9));
        for &r in &params.rho {
            assert!((r - 0.5f64.ln()).abs() < 1e-15);
        }
        for (i, &t) in params.theta.iter().enumerate() {
            assert_eq!(t, std::f64::consts::PI * i as f64);
        }
        assert!(params.d.iter().all(|&v| v == 0.0));
        assert!(params.x0_re.iter().all(|&v| v == 0.0));
        assert!(params.x0_im.iter().all(|&v| v == 0.0));
        assert!(params.w_prime.iter().all(|&v| v == 0.0));
        for &b in &params.b_prime {
            assert!((b - (std::f64::consts::E - 1.0).ln()).abs() < 1e-15);
        }
        assert_eq!(params.zoh_mode, ZohMode::Forward);
        // Spread of the random blocks roughly matches the 1/P variance.
        let var: f64 =
            params.b_re.iter().map(|v| v * v).sum::<f64>() / params.b_re.len() as f64;
        assert!(var > 0.05 && var < 1.2, "sample variance {var} far from 1/4");
    }

    #[test]
    fn evolution_semigroup_composes() {
        let tape = Tape::new_no_grad();
        let params = random_layer(5, 3, true, 31);
        let vars = params.leaves(&tape);
        let mut rng = test_rng(32);
        let x = random_complex(&tape, 4, 5, &mut rng);
        let held = random_real(&tape, 4, 3, &mut rng);
        let umod = random_real(&tape, 4, 3, &mut rng);
        for trial in 0..10 {
            let d1: Vec<f64> = (0..4).map(|_| rng.uniform_in(0.0, 1.5)).collect();
            let d2: Vec<f64> = (0..4).map(|_| rng.uniform_in(0.0, 1.5)).collect();
            let dsum: Vec<f64> = d1.iter().zip(&d2).map(|(a, b)| a + b).collect();
            let two_step = {
                let mid = evolve_state(&tape, &vars, &x, &d1, &held, &umod);
                evolve_state(&tape, &vars, &mid, &d2, &held, &umod)
            };
            let one_step = evolve_state(&tape, &vars, &x, &dsum, &held, &umod);
            let a = two_step.value().complex_data();
            let b = one_step.value().complex_data();
            for (u, v) in a.iter().zip(b) {
                assert!((u - v).norm() < 1e-12 * (1.0 + v.norm()), "trial {trial}: {u} vs {v}");
            }
        }
    }

    #[test]
    fn undriven_layer_matches_closed_form() {
        // With u ≡ 0 the state is a sum of decayed impulses plus the
        // decayed initial state, available in closed form at any time.
        let (p, h, n) = (6, 3, 7);
        let tape = Tape::new_no_grad();
        let params = random_layer(p, h, false, 55);
        let vars = params.leaves(&tape);
        let mut rng = test_rng(56);
        let t_start = -0.5;
        let mut times: Vec<f64> = (0..n).map(|_| rng.uniform_in(0.0, 5.0)).collect();
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut dt = Vec::with_capacity(n);
        let mut prev = t_start;
        for &t in &times {
            dt.push(t - prev);
            prev = t;
        }
        let imp = random_complex(&tape, n, p, &mut rng);
        let zeros_h = tape.constant_real(n, h, vec![0.0; n * h]);
        let flow = layer_forward(&tape, &vars, &dt, &zeros_h, &zeros_h, &imp);

        let lam = spectrum(&params);
        let x0: Vec<Complex64> =
            params.x0_re.iter().zip(&params.x0_im).map(|(&r, &i)| Complex64::new(r, i)).collect();
        let impulse_at = |i: usize, c: usize| imp.value().complex_data()[i * p + c];
        let closed_form = |t: f64| -> Vec<Complex64> {
            (0..p)
                .map(|c| {
                    let mut acc = (lam[c] * (t - t_start)).exp() * x0[c];
                    for (i, &ti) in times.iter().enumerate() {
                        if ti <= t {
                            acc += (lam[c] * (t - ti)).exp() * impulse_at(i, c);
                        }
                    }
                    acc
                })
                .collect()
        };

        let xr = flow.x_right.value().complex_data();
        for i in 0..n {
            let want = closed_form(times[i]);
            for c in 0..p {
                let got = xr[i * p + c];
                assert!(
                    (got - want[c]).norm() < 1e-12 * (1.0 + want[c].norm()),
                    "event {i} channel {c}: {got} vs {}",
                    want[c]
                );
            }
        }

        // 20 query times strictly between or after events: evolve the most
        // recent right limit with no input.
        let zeros_row = tape.constant_real(1, h, vec![0.0; h]);
        for q in 0..20 {
            let t = rng.uniform_in(t_start, times[n - 1] + 2.0);
            let idx = times.iter().filter(|&&ti| ti <= t).count();
            let (base, base_t) = if idx == 0 {
                (vars.x0.clone(), t_start)
            } else {
                (flow.x_right.gather_rows(&[idx - 1]), times[idx - 1])
            };
            let evolved = evolve_state(&tape, &vars, &base, &[t - base_t], &zeros_row, &zeros_row);
            let want = closed_form(t);
            for c in 0..p {
                let got = evolved.value().complex_data()[c];
                assert!(
                    (got - want[c]).norm() < 1e-12 * (1.0 + want[c].norm()),
                    "query {q} channel {c}: {got} vs {}",
                    want[c]
                );
            }
        }
    }

    #[test]
    fn left_limit_is_right_minus_impulse() {
        let tape = Tape::new_no_grad();
        let params = random_layer(4, 2, true, 77);
        let vars = params.leaves(&tape);
        let mut rng = test_rng(78);
        let n = 5;
        let dt: Vec<f64> = (0..n).map(|_| rng.uniform_in(0.1, 1.0)).collect();
        let held = random_real(&tape, n, 2, &mut rng);
        let umod = random_real(&tape, n, 2, &mut rng);
        let imp = random_complex(&tape, n, 4, &mut rng);
        let flow = layer_forward(&tape, &vars, &dt, &held, &umod, &imp);
        let xr = flow.x_right.value().complex_data();
        let xl = flow.x_left.value().complex_data();
        let iv = imp.value().complex_data();
        for i in 0..n * 4 {
            assert_eq!(xl[i], xr[i] - iv[i]);
        }
    }

    #[test]
    fn zero_stream_makes_input_matrix_irrelevant() {
        let tape = Tape::new_no_grad();
        let mut a = random_layer(4, 3, false, 91);
        let mut rng = test_rng(92);
        let mut b = a.clone();
        for v in b.b_re.iter_mut().chain(b.b_im.iter_mut()) {
            *v = rng.normal(0.0, 2.0);
        }
        a.b_re.iter_mut().for_each(|v| *v = rng.normal(0.0, 2.0));
        let n = 6;
        let dt: Vec<f64> = (0..n).map(|_| rng.uniform_in(0.1, 0.8)).collect();
        let zeros = tape.constant_real(n, 3, vec![0.0; n * 3]);
        let imp = random_complex(&tape, n, 4, &mut rng);
        let fa = layer_forward(&tape, &a.leaves(&tape), &dt, &zeros, &zeros, &imp);
        let fb = layer_forward(&tape, &b.leaves(&tape), &dt, &zeros, &zeros, &imp);
        assert_eq!(fa.x_right.value().complex_data(), fb.x_right.value().complex_data());
    }

    #[test]
    fn single_step_scan_equals_evolution_plus_impulse() {
        let tape = Tape::new_no_grad();
        let params = random_layer(5, 3, true, 13);
        let vars = params.leaves(&tape);
        let mut rng = test_rng(14);
        let dt = [0.7];
        let held = random_real(&tape, 1, 3, &mut rng);
        let umod = random_real(&tape, 1, 3, &mut rng);
        let imp = random_complex(&tape, 1, 5, &mut rng);
        let flow = layer_forward(&tape, &vars, &dt, &held, &umod, &imp);
        let evolved = evolve_state(&tape, &vars, &vars.x0, &dt, &held, &umod);
        let want = evolved.add(&imp);
        let got = flow.x_right.value().complex_data();
        for (g, w) in got.iter().zip(want.value().complex_data()) {
            assert!((g - w).norm() < 1e-14 * (1.0 + w.norm()));
        }
    }

    #[test]
    fn layer_gradients_match_finite_differences() {
        let (p, h, n) = (3, 2, 4);
        let base = random_layer(p, h, true, 101);
        let mut rng = test_rng(102);
        let dt: Vec<f64> = (0..n).map(|_| rng.uniform_in(0.2, 1.0)).collect();
        let held: Vec<f64> = (0..n * h).map(|_| rng.normal(0.0, 1.0)).collect();
        let umod: Vec<f64> = (0..n * h).map(|_| rng.normal(0.0, 1.0)).collect();
        let imp: Vec<Complex64> =
            (0..n * p).map(|_| Complex64::new(rng.normal(0.0, 1.0), rng.normal(0.0, 1.0))).collect();

        let eval = |params: &LlhLayerParams| -> (f64, Option<(Tape, LayerVars)>) {
            let tape = Tape::new();
            let vars = params.leaves(&tape);
            let held_v = tape.constant_real(n, h, held.clone());
            let umod_v = tape.constant_real(n, h, umod.clone());
            let imp_v = tape.constant(Value::complex(n, p, imp.clone()));
            let flow = layer_forward(&tape, &vars, &dt, &held_v, &umod_v, &imp_v);
            let y_left = layer_output(&vars, &flow.x_left, &held_v);
            let y_right = layer_output(&vars, &flow.x_right, &umod_v);
            let loss = y_left.gelu().sum().add(&y_right.softplus().sum());
            (loss.value().scalar_value(), Some((tape, vars)))
        };

        let (loss0, ctx) = eval(&base);
        let (tape, vars) = ctx.unwrap();
        let loss_var = {
            // Rebuild on the same tape to get the Var handle for backward.
            let held_v = tape.constant_real(n, h, held.clone());
            let umod_v = tape.constant_real(n, h, umod.clone());
            let imp_v = tape.constant(Value::complex(n, p, imp.clone()));
            let flow = layer_forward(&tape, &vars, &dt, &held_v, &umod_v, &imp_v);
            let y_left = layer_output(&vars, &flow.x_left, &held_v);
            let y_right = layer_output(&vars, &flow.x_right, &umod_v);
            y_left.gelu().sum().add(&y_right.softplus().sum())
        };
        assert_eq!(loss_var.value().scalar_value(), loss0);
        let grads = tape.backward(&loss_var);

        let h_step = 1e-6;
        let check = |name: &str, leaf: &Var, write: &mut dyn FnMut(&mut LlhLayerParams, usize, f64), len: usize| {
            let g = grads.wrt(leaf).expect("tracked leaf");
            let gd = g.real_data().to_vec();
            for probe in [0, len / 2, len - 1] {
                let mut up = base.clone();
                write(&mut up, probe, h_step);
                let mut dn = base.clone();
                write(&mut dn, probe, -h_step);
                let fd = (eval(&up).0 - eval(&dn).0) / (2.0 * h_step);
                let got = gd[probe];
                let denom = fd.abs().max(got.abs()).max(1.0);
                assert!(
                    (fd - got).abs() / denom < 5e-6,
                    "{name}[{probe}]: fd {fd} vs grad {got}"
                );
            }
        };

        check("rho", &vars.rho, &mut |m, i, d| m.rho[i] += d, p);
        check("theta", &vars.theta, &mut |m, i, d| m.theta[i] += d, p);
        check("b_re", &vars.b_re, &mut |m, i, d| m.b_re[i] += d, p * h);
        check("b_im", &vars.b_im, &mut |m, i, d| m.b_im[i] += d, p * h);
        check("c_re", &vars.c_re, &mut |m, i, d| m.c_re[i] += d, h * p);
        check("c_im", &vars.c_im, &mut |m, i, d| m.c_im[i] += d, h * p);
        check("d", &vars.d, &mut |m, i, d| m.d[i] += d, h);
        check("e_re", &vars.e_re, &mut |m, i, d| m.e_re[i] += d, p * h);
        check("e_im", &vars.e_im, &mut |m, i, d| m.e_im[i] += d, p * h);
        check("x0_re", &vars.x0_re, &mut |m, i, d| m.x0_re[i] += d, p);
        check("x0_im", &vars.x0_im, &mut |m, i, d| m.x0_im[i] += d, p);
        check("w_prime", &vars.w_prime, &mut |m, i, d| m.w_prime[i] += d, h * p);
        check("b_prime", &vars.b_prime, &mut |m, i, d| m.b_prime[i] += d, p);
    }
}

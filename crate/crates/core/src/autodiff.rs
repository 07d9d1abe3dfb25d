//! Reverse-mode automatic differentiation over real and complex tensors.
//!
//! A [`Tape`] records primitive operations as they execute; [`Tape::backward`]
//! replays them in reverse to accumulate gradients of a real scalar loss.
//! Values are dense row-major matrices, either real or complex
//! ([`Value`]). Leaves are always real — complex quantities enter the
//! graph by assembling real/imaginary parts — so every trainable
//! parameter has an ordinary real gradient.
//!
//! # Complex adjoint convention
//!
//! For a complex node z = x + iy the stored adjoint is
//!
//! ```text
//! g_z := ∂L/∂x − i·∂L/∂y
//! ```
//!
//! With this sign choice the chain rule through any holomorphic step
//! w = f(z) is simply g_z += f′(z)·g_w — no conjugations anywhere — and
//! complex-linear maps propagate adjoints through their plain transpose.
//! The non-holomorphic boundary ops translate in and out:
//!
//! - assemble z = x + iy from real leaves: g_x += Re(g_z), g_y += −Im(g_z);
//! - take r = Re(z): g_z += g_r (imaginary part zero);
//! - scale z = r⊙w by a real factor: g_r += Re(w⊙g_z), g_w += r⊙g_z.
//!
//! # Recording discipline
//!
//! A tape created with [`Tape::new`] records every operation whose result
//! depends on a leaf; operations over constants alone are evaluated
//! eagerly and not recorded. A tape created with [`Tape::new_no_grad`]
//! records nothing at all, so memory usage equals the live values only —
//! the mode used for evaluation-time intensity queries over very long
//! inputs. Backward on such a tape is a programming error.
//!
//! Gradients come back in a [`Gradients`] table indexed by the variable
//! whose gradient is wanted; variables the loss never touched yield
//! zeros. Backward may be called repeatedly and is deterministic: the
//! same graph gives bit-identical gradients.

use num_complex::Complex64;
use std::cell::RefCell;
use std::rc::Rc;

use crate::scan;

/// Dense row-major matrix, real or complex.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Real { rows: usize, cols: usize, data: Vec<f64> },
    Complex { rows: usize, cols: usize, data: Vec<Complex64> },
}

impl Value {
    pub fn real(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "real value: data length != rows·cols");
        Value::Real { rows, cols, data }
    }

    pub fn complex(rows: usize, cols: usize, data: Vec<Complex64>) -> Self {
        assert_eq!(data.len(), rows * cols, "complex value: data length != rows·cols");
        Value::Complex { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Value::Real { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn czeros(rows: usize, cols: usize) -> Self {
        Value::Complex { rows, cols, data: vec![Complex64::new(0.0, 0.0); rows * cols] }
    }

    pub fn scalar(x: f64) -> Self {
        Value::Real { rows: 1, cols: 1, data: vec![x] }
    }

    pub fn rows(&self) -> usize {
        match self {
            Value::Real { rows, .. } | Value::Complex { rows, .. } => *rows,
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            Value::Real { cols, .. } | Value::Complex { cols, .. } => *cols,
        }
    }

    pub fn is_complex(&self) -> bool {
        matches!(self, Value::Complex { .. })
    }

    /// Real payload; panics on complex values.
    pub fn real_data(&self) -> &[f64] {
        match self {
            Value::Real { data, .. } => data,
            Value::Complex { .. } => panic!("expected a real value"),
        }
    }

    /// Complex payload; panics on real values.
    pub fn complex_data(&self) -> &[Complex64] {
        match self {
            Value::Complex { data, .. } => data,
            Value::Real { .. } => panic!("expected a complex value"),
        }
    }

    /// The single element of a real 1×1 value.
    pub fn scalar_value(&self) -> f64 {
        let d = self.real_data();
        assert!(self.rows() == 1 && self.cols() == 1, "expected a 1×1 value");
        d[0]
    }

    fn zeros_like(&self) -> Value {
        match self {
            Value::Real { rows, cols, .. } => Value::zeros(*rows, *cols),
            Value::Complex { rows, cols, .. } => Value::czeros(*rows, *cols),
        }
    }

    fn add_assign(&mut self, other: &Value) {
        match (self, other) {
            (Value::Real { data: a, .. }, Value::Real { data: b, .. }) => {
                assert_eq!(a.len(), b.len());
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
            }
            (Value::Complex { data: a, .. }, Value::Complex { data: b, .. }) => {
                assert_eq!(a.len(), b.len());
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
            }
            _ => panic!("adjoint type mismatch"),
        }
    }
}

/// A recorded input: node id (None for constants) plus the value itself,
/// kept alive for the backward pass.
#[derive(Clone)]
struct In {
    id: Option<usize>,
    val: Rc<Value>,
}

enum Op {
    Leaf,
    Add(In, In),
    Sub(In, In),
    Mul(In, In),
    Neg(In),
    Scale(In, f64),
    AddScalar(In),
    Matmul(In, In),
    AddBiasRow(In, In),
    MulBcastRow(In, In),
    Softplus(In),
    Gelu(In),
    Exp(In),
    Ln(In),
    Sum(In),
    SumRows(In),
    LayerNorm { x: In, gamma: In, beta: In, eps: f64 },
    GatherRows(In, Rc<Vec<usize>>),
    TakePerRow(In, Rc<Vec<usize>>),
    Vcat(In, In),
    ComplexFromParts(In, In),
    RealPart(In),
    MulReal { r: In, z: In },
    RcMatmulNt(In, In),
    ProjectReal2(In, In),
    Scan { a: In, b: In, x0: In },
}

struct Node {
    op: Op,
    value: Rc<Value>,
}

struct TapeInner {
    nodes: Vec<Node>,
    grad_enabled: bool,
}

/// Operation recorder; clone handles share the same tape.
#[derive(Clone)]
pub struct Tape(Rc<RefCell<TapeInner>>);

/// A value bound to a tape, possibly tracked for differentiation.
#[derive(Clone)]
pub struct Var {
    value: Rc<Value>,
    node: Option<usize>,
    tape: Tape,
}

/// Result table of a backward pass.
pub struct Gradients {
    adj: Vec<Option<Value>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros if the loss never touched it.
    /// Untracked (constant) variables have no gradient.
    pub fn wrt(&self, v: &Var) -> Option<Value> {
        let id = v.node?;
        Some(match &self.adj[id] {
            Some(g) => g.clone(),
            None => v.value.zeros_like(),
        })
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape(Rc::new(RefCell::new(TapeInner { nodes: Vec::new(), grad_enabled: true })))
    }

    /// A tape that records nothing; use for pure evaluation so memory is
    /// bounded by the live values rather than the operation count.
    pub fn new_no_grad() -> Self {
        Tape(Rc::new(RefCell::new(TapeInner { nodes: Vec::new(), grad_enabled: false })))
    }

    pub fn is_grad_enabled(&self) -> bool {
        self.0.borrow().grad_enabled
    }

    /// Number of recorded operations.
    pub fn len(&self) -> usize {
        self.0.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn same_tape(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    /// A differentiable input. In no-grad mode this is just a constant.
    pub fn leaf(&self, value: Value) -> Var {
        let value = Rc::new(value);
        let mut inner = self.0.borrow_mut();
        if !inner.grad_enabled {
            return Var { value, node: None, tape: self.clone() };
        }
        let id = inner.nodes.len();
        inner.nodes.push(Node { op: Op::Leaf, value: Rc::clone(&value) });
        Var { value, node: Some(id), tape: self.clone() }
    }

    pub fn leaf_real(&self, rows: usize, cols: usize, data: Vec<f64>) -> Var {
        self.leaf(Value::real(rows, cols, data))
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Value) -> Var {
        Var { value: Rc::new(value), node: None, tape: self.clone() }
    }

    pub fn constant_real(&self, rows: usize, cols: usize, data: Vec<f64>) -> Var {
        self.constant(Value::real(rows, cols, data))
    }

    pub fn constant_scalar(&self, x: f64) -> Var {
        self.constant(Value::scalar(x))
    }

    fn record(&self, op: Op, value: Value, any_tracked: bool) -> Var {
        let value = Rc::new(value);
        let mut inner = self.0.borrow_mut();
        if !inner.grad_enabled || !any_tracked {
            return Var { value, node: None, tape: self.clone() };
        }
        let id = inner.nodes.len();
        inner.nodes.push(Node { op, value: Rc::clone(&value) });
        Var { value, node: Some(id), tape: self.clone() }
    }

    /// Accumulate gradients of a real scalar loss into every tracked
    /// ancestor. Panics on a no-grad tape or a non-scalar loss.
    pub fn backward(&self, loss: &Var) -> Gradients {
        assert!(self.same_tape(&loss.tape), "loss lives on a different tape");
        let inner = self.0.borrow();
        assert!(inner.grad_enabled, "backward on a no-grad tape");
        let seed_id = loss.node.expect("loss does not depend on any leaf");
        assert!(
            !loss.value.is_complex() && loss.value.rows() == 1 && loss.value.cols() == 1,
            "loss must be a real scalar"
        );
        let mut adj: Vec<Option<Value>> = (0..inner.nodes.len()).map(|_| None).collect();
        adj[seed_id] = Some(Value::scalar(1.0));
        for id in (0..=seed_id).rev() {
            let Some(g) = adj[id].take() else { continue };
            backward_step(&inner.nodes[id], &g, &mut adj);
            adj[id] = Some(g);
        }
        Gradients { adj }
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

fn bump(adj: &mut [Option<Value>], input: &In, delta: Value) {
    if let Some(id) = input.id {
        match &mut adj[id] {
            Some(slot) => slot.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }
}

impl Var {
    pub fn value(&self) -> &Value {
        &self.value
    }

    pub fn rows(&self) -> usize {
        self.value.rows()
    }

    pub fn cols(&self) -> usize {
        self.value.cols()
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    fn input(&self) -> In {
        In { id: self.node, val: Rc::clone(&self.value) }
    }

    fn pair_check(&self, other: &Var) {
        assert!(self.tape.same_tape(&other.tape), "operands live on different tapes");
    }

    fn tracked_any(&self, others: &[&Var]) -> bool {
        self.node.is_some() || others.iter().any(|v| v.node.is_some())
    }

    /// Elementwise sum; both operands real or both complex, same shape.
    pub fn add(&self, other: &Var) -> Var {
        self.pair_check(other);
        let v = elementwise2(&self.value, &other.value, |x, y| x + y, |x, y| x + y, "add");
        self.tape.record(Op::Add(self.input(), other.input()), v, self.tracked_any(&[other]))
    }

    /// Elementwise difference; both real or both complex, same shape.
    pub fn sub(&self, other: &Var) -> Var {
        self.pair_check(other);
        let v = elementwise2(&self.value, &other.value, |x, y| x - y, |x, y| x - y, "sub");
        self.tape.record(Op::Sub(self.input(), other.input()), v, self.tracked_any(&[other]))
    }

    /// Elementwise product; both real or both complex, same shape. For
    /// complex operands the adjoint is conjugation-free:
    /// g_u += v⊙g, g_v += u⊙g.
    pub fn mul(&self, other: &Var) -> Var {
        self.pair_check(other);
        let v = elementwise2(&self.value, &other.value, |x, y| x * y, |x, y| x * y, "mul");
        self.tape.record(Op::Mul(self.input(), other.input()), v, self.tracked_any(&[other]))
    }

    pub fn neg(&self) -> Var {
        let v = elementwise1(&self.value, |x| -x, |x| -x);
        self.tape.record(Op::Neg(self.input()), v, self.tracked_any(&[]))
    }

    /// Multiply by a real constant.
    pub fn scale(&self, c: f64) -> Var {
        let v = elementwise1(&self.value, |x| c * x, |x| c * x);
        self.tape.record(Op::Scale(self.input(), c), v, self.tracked_any(&[]))
    }

    /// Add a real constant to every element.
    pub fn add_scalar(&self, c: f64) -> Var {
        let v = elementwise1(&self.value, |x| x + c, |x| x + c);
        self.tape.record(Op::AddScalar(self.input()), v, self.tracked_any(&[]))
    }

    /// Real matrix product [n×k]·[k×m].
    pub fn matmul(&self, other: &Var) -> Var {
        self.pair_check(other);
        let (a, b) = (self.value.real_data(), other.value.real_data());
        let (n, k, k2, m) = (self.rows(), self.cols(), other.rows(), other.cols());
        assert_eq!(k, k2, "matmul inner dimensions differ: {k} vs {k2}");
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for l in 0..k {
                let ail = a[i * k + l];
                if ail != 0.0 {
                    for j in 0..m {
                        out[i * m + j] += ail * b[l * m + j];
                    }
                }
            }
        }
        let v = Value::real(n, m, out);
        self.tape.record(Op::Matmul(self.input(), other.input()), v, self.tracked_any(&[other]))
    }

    /// Add a 1×C bias row to every row of a real N×C matrix.
    pub fn add_bias_row(&self, bias: &Var) -> Var {
        self.pair_check(bias);
        let (x, b) = (self.value.real_data(), bias.value.real_data());
        let (n, c) = (self.rows(), self.cols());
        assert!(bias.rows() == 1 && bias.cols() == c, "bias must be 1×{c}");
        let mut out = vec![0.0; n * c];
        for i in 0..n {
            for j in 0..c {
                out[i * c + j] = x[i * c + j] + b[j];
            }
        }
        let v = Value::real(n, c, out);
        self.tape.record(Op::AddBiasRow(self.input(), bias.input()), v, self.tracked_any(&[bias]))
    }

    /// Multiply every row of a real N×C matrix elementwise by a 1×C row.
    pub fn mul_bcast_row(&self, row: &Var) -> Var {
        self.pair_check(row);
        let (x, r) = (self.value.real_data(), row.value.real_data());
        let (n, c) = (self.rows(), self.cols());
        assert!(row.rows() == 1 && row.cols() == c, "row factor must be 1×{c}");
        let mut out = vec![0.0; n * c];
        for i in 0..n {
            for j in 0..c {
                out[i * c + j] = x[i * c + j] * r[j];
            }
        }
        let v = Value::real(n, c, out);
        self.tape.record(Op::MulBcastRow(self.input(), row.input()), v, self.tracked_any(&[row]))
    }

    /// Numerically stable softplus ln(1+eˣ) = max(x,0) + ln(1+e^{−|x|}).
    pub fn softplus(&self) -> Var {
        let v = real_map(&self.value, softplus_f);
        self.tape.record(Op::Softplus(self.input()), v, self.tracked_any(&[]))
    }

    /// GELU in its tanh form 0.5x(1 + tanh(√(2/π)(x + 0.044715x³))).
    pub fn gelu(&self) -> Var {
        let v = real_map(&self.value, gelu_f);
        self.tape.record(Op::Gelu(self.input()), v, self.tracked_any(&[]))
    }

    /// Elementwise exponential; real or complex (holomorphic adjoint).
    pub fn exp(&self) -> Var {
        let v = elementwise1(&self.value, f64::exp, Complex64::exp);
        self.tape.record(Op::Exp(self.input()), v, self.tracked_any(&[]))
    }

    /// Elementwise natural logarithm of a real matrix.
    pub fn ln(&self) -> Var {
        let v = real_map(&self.value, f64::ln);
        self.tape.record(Op::Ln(self.input()), v, self.tracked_any(&[]))
    }

    /// Sum of all elements of a real matrix, as a 1×1 value.
    pub fn sum(&self) -> Var {
        let s: f64 = self.value.real_data().iter().sum();
        self.tape.record(Op::Sum(self.input()), Value::scalar(s), self.tracked_any(&[]))
    }

    /// Per-row sums of a real N×C matrix, as N×1.
    pub fn sum_rows(&self) -> Var {
        let x = self.value.real_data();
        let (n, c) = (self.rows(), self.cols());
        let out: Vec<f64> = (0..n).map(|i| x[i * c..(i + 1) * c].iter().sum()).collect();
        let v = Value::real(n, 1, out);
        self.tape.record(Op::SumRows(self.input()), v, self.tracked_any(&[]))
    }

    /// Row-wise layer normalization with affine parameters:
    /// y = γ⊙(x−μ)/√(σ²+ε) + β, statistics per row, biased variance.
    pub fn layer_norm(&self, gamma: &Var, beta: &Var, eps: f64) -> Var {
        self.pair_check(gamma);
        self.pair_check(beta);
        let (n, c) = (self.rows(), self.cols());
        assert!(gamma.rows() == 1 && gamma.cols() == c, "gamma must be 1×{c}");
        assert!(beta.rows() == 1 && beta.cols() == c, "beta must be 1×{c}");
        let x = self.value.real_data();
        let g = gamma.value.real_data();
        let b = beta.value.real_data();
        let mut out = vec![0.0; n * c];
        for i in 0..n {
            let row = &x[i * c..(i + 1) * c];
            let (mu, inv) = row_norm_stats(row, eps);
            for j in 0..c {
                out[i * c + j] = g[j] * (row[j] - mu) * inv + b[j];
            }
        }
        let v = Value::real(n, c, out);
        let op = Op::LayerNorm { x: self.input(), gamma: gamma.input(), beta: beta.input(), eps };
        self.tape.record(op, v, self.tracked_any(&[gamma, beta]))
    }

    /// Select rows by index (repeats allowed); adjoint scatter-adds.
    /// Works for real and complex matrices.
    pub fn gather_rows(&self, idx: &[usize]) -> Var {
        let (n, c) = (self.rows(), self.cols());
        for &i in idx {
            assert!(i < n, "row index {i} out of range for {n} rows");
        }
        let v = match &*self.value {
            Value::Real { data, .. } => {
                let mut out = vec![0.0; idx.len() * c];
                for (j, &i) in idx.iter().enumerate() {
                    out[j * c..(j + 1) * c].copy_from_slice(&data[i * c..(i + 1) * c]);
                }
                Value::real(idx.len(), c, out)
            }
            Value::Complex { data, .. } => {
                let mut out = vec![Complex64::new(0.0, 0.0); idx.len() * c];
                for (j, &i) in idx.iter().enumerate() {
                    out[j * c..(j + 1) * c].copy_from_slice(&data[i * c..(i + 1) * c]);
                }
                Value::complex(idx.len(), c, out)
            }
        };
        let op = Op::GatherRows(self.input(), Rc::new(idx.to_vec()));
        self.tape.record(op, v, self.tracked_any(&[]))
    }

    /// Pick one element per row of a real N×C matrix: out[i] = x[i, idx[i]].
    pub fn take_per_row(&self, idx: &[usize]) -> Var {
        let x = self.value.real_data();
        let (n, c) = (self.rows(), self.cols());
        assert_eq!(idx.len(), n, "need one column index per row");
        let mut out = vec![0.0; n];
        for (i, &j) in idx.iter().enumerate() {
            assert!(j < c, "column index {j} out of range for {c} columns");
            out[i] = x[i * c + j];
        }
        let v = Value::real(n, 1, out);
        let op = Op::TakePerRow(self.input(), Rc::new(idx.to_vec()));
        self.tape.record(op, v, self.tracked_any(&[]))
    }

    /// Stack `self` on top of `other` (same column count and type).
    pub fn vcat(&self, other: &Var) -> Var {
        self.pair_check(other);
        let c = self.cols();
        assert_eq!(c, other.cols(), "vcat column mismatch");
        let v = match (&*self.value, &*other.value) {
            (Value::Real { data: a, .. }, Value::Real { data: b, .. }) => {
                let mut out = Vec::with_capacity(a.len() + b.len());
                out.extend_from_slice(a);
                out.extend_from_slice(b);
                Value::real(self.rows() + other.rows(), c, out)
            }
            (Value::Complex { data: a, .. }, Value::Complex { data: b, .. }) => {
                let mut out = Vec::with_capacity(a.len() + b.len());
                out.extend_from_slice(a);
                out.extend_from_slice(b);
                Value::complex(self.rows() + other.rows(), c, out)
            }
            _ => panic!("vcat type mismatch"),
        };
        self.tape.record(Op::Vcat(self.input(), other.input()), v, self.tracked_any(&[other]))
    }

    /// Assemble a complex matrix from real and imaginary parts.
    pub fn complex_from_parts(&self, im: &Var) -> Var {
        self.pair_check(im);
        let re = self.value.real_data();
        let imd = im.value.real_data();
        assert!(self.rows() == im.rows() && self.cols() == im.cols(), "part shape mismatch");
        let data: Vec<Complex64> = re.iter().zip(imd).map(|(&x, &y)| Complex64::new(x, y)).collect();
        let v = Value::complex(self.rows(), self.cols(), data);
        let op = Op::ComplexFromParts(self.input(), im.input());
        self.tape.record(op, v, self.tracked_any(&[im]))
    }

    /// Real part of a complex matrix.
    pub fn real_part(&self) -> Var {
        let z = self.value.complex_data();
        let data: Vec<f64> = z.iter().map(|w| w.re).collect();
        let v = Value::real(self.rows(), self.cols(), data);
        self.tape.record(Op::RealPart(self.input()), v, self.tracked_any(&[]))
    }

    /// Multiply a complex matrix elementwise by a real factor, with the
    /// broadcasts the state-space layer needs. Shapes (r = real factor,
    /// z = self):
    ///
    /// - r N×C, z N×C: elementwise;
    /// - r N×1, z N×C: r broadcast across columns;
    /// - r N×C, z 1×C: z broadcast across rows (result N×C).
    pub fn mul_real(&self, r: &Var) -> Var {
        self.pair_check(r);
        let z = self.value.complex_data();
        let rd = r.value.real_data();
        let (zr, zc) = (self.rows(), self.cols());
        let (rr, rc) = (r.rows(), r.cols());
        let v = if rr == zr && rc == zc {
            let data: Vec<Complex64> = z.iter().zip(rd).map(|(&w, &s)| w * s).collect();
            Value::complex(zr, zc, data)
        } else if rr == zr && rc == 1 {
            let mut data = vec![Complex64::new(0.0, 0.0); zr * zc];
            for i in 0..zr {
                for j in 0..zc {
                    data[i * zc + j] = z[i * zc + j] * rd[i];
                }
            }
            Value::complex(zr, zc, data)
        } else if zr == 1 && rc == zc {
            let mut data = vec![Complex64::new(0.0, 0.0); rr * zc];
            for i in 0..rr {
                for j in 0..zc {
                    data[i * zc + j] = z[j] * rd[i * zc + j];
                }
            }
            Value::complex(rr, zc, data)
        } else {
            panic!("mul_real: unsupported shapes {rr}×{rc} (real) with {zr}×{zc} (complex)");
        };
        let op = Op::MulReal { r: r.input(), z: self.input() };
        self.tape.record(op, v, self.tracked_any(&[r]))
    }

    /// Mixed product C = U·Bᵀ with U real N×H and B complex P×H, giving a
    /// complex N×P result. Adjoints: g_U[i,h] += Re(Σ_p B[p,h]·g_C[i,p]),
    /// g_B[p,h] += Σ_i U[i,h]·g_C[i,p].
    pub fn rc_matmul_nt(&self, b: &Var) -> Var {
        self.pair_check(b);
        let u = self.value.real_data();
        let bd = b.value.complex_data();
        let (n, h) = (self.rows(), self.cols());
        let (p, h2) = (b.rows(), b.cols());
        assert_eq!(h, h2, "mixed matmul inner dimensions differ: {h} vs {h2}");
        let mut out = vec![Complex64::new(0.0, 0.0); n * p];
        for i in 0..n {
            for q in 0..p {
                let mut acc = Complex64::new(0.0, 0.0);
                for l in 0..h {
                    acc += bd[q * h + l] * u[i * h + l];
                }
                out[i * p + q] = acc;
            }
        }
        let v = Value::complex(n, p, out);
        self.tape.record(Op::RcMatmulNt(self.input(), b.input()), v, self.tracked_any(&[b]))
    }

    /// Real output projection y = 2·Re(X·Cᵀ) with X complex N×P and C
    /// complex H×P; the factor 2 accounts for the implicit conjugate
    /// half of the latent state.
    pub fn project_real2(&self, c: &Var) -> Var {
        self.pair_check(c);
        let x = self.value.complex_data();
        let cd = c.value.complex_data();
        let (n, p) = (self.rows(), self.cols());
        let (h, p2) = (c.rows(), c.cols());
        assert_eq!(p, p2, "projection inner dimensions differ: {p} vs {p2}");
        let mut out = vec![0.0; n * h];
        for i in 0..n {
            for q in 0..h {
                let mut acc = 0.0;
                for l in 0..p {
                    let prod = x[i * p + l] * cd[q * p + l];
                    acc += prod.re;
                }
                out[i * h + q] = 2.0 * acc;
            }
        }
        let v = Value::real(n, h, out);
        self.tape.record(Op::ProjectReal2(self.input(), c.input()), v, self.tracked_any(&[c]))
    }

    /// Fused linear recurrence x_i = a_i⊙x_{i−1} + b_i over the rows of
    /// complex N×P inputs, from a 1×P initial state. Forward and adjoint
    /// both run through the shared scan kernels.
    pub fn scan(&self, b: &Var, x0: &Var) -> Var {
        self.pair_check(b);
        self.pair_check(x0);
        let (n, p) = (self.rows(), self.cols());
        assert!(b.rows() == n && b.cols() == p, "scan offset shape mismatch");
        assert!(x0.rows() == 1 && x0.cols() == p, "initial state must be 1×{p}");
        let out = scan::scan_inclusive(
            self.value.complex_data(),
            b.value.complex_data(),
            x0.value.complex_data(),
        );
        let v = Value::complex(n, p, out);
        let op = Op::Scan { a: self.input(), b: b.input(), x0: x0.input() };
        self.tape.record(op, v, self.tracked_any(&[b, x0]))
    }
}

fn elementwise2(
    a: &Value,
    b: &Value,
    fr: impl Fn(f64, f64) -> f64,
    fc: impl Fn(Complex64, Complex64) -> Complex64,
    name: &str,
) -> Value {
    assert!(a.rows() == b.rows() && a.cols() == b.cols(), "{name}: shape mismatch {}×{} vs {}×{}", a.rows(), a.cols(), b.rows(), b.cols());
    match (a, b) {
        (Value::Real { rows, cols, data: x }, Value::Real { data: y, .. }) => {
            Value::real(*rows, *cols, x.iter().zip(y).map(|(&u, &v)| fr(u, v)).collect())
        }
        (Value::Complex { rows, cols, data: x }, Value::Complex { data: y, .. }) => {
            Value::complex(*rows, *cols, x.iter().zip(y).map(|(&u, &v)| fc(u, v)).collect())
        }
        _ => panic!("{name}: operand type mismatch"),
    }
}

fn elementwise1(a: &Value, fr: impl Fn(f64) -> f64, fc: impl Fn(Complex64) -> Complex64) -> Value {
    match a {
        Value::Real { rows, cols, data } => {
            Value::real(*rows, *cols, data.iter().map(|&x| fr(x)).collect())
        }
        Value::Complex { rows, cols, data } => {
            Value::complex(*rows, *cols, data.iter().map(|&x| fc(x)).collect())
        }
    }
}

fn real_map(a: &Value, f: impl Fn(f64) -> f64) -> Value {
    Value::real(a.rows(), a.cols(), a.real_data().iter().map(|&x| f(x)).collect())
}

pub(crate) fn softplus_f(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid_f(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // √(2/π)
const GELU_K: f64 = 0.044715;

pub(crate) fn gelu_f(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

fn gelu_df(x: f64) -> f64 {
    let inner = GELU_C * (x + GELU_K * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

fn row_norm_stats(row: &[f64], eps: f64) -> (f64, f64) {
    let c = row.len() as f64;
    let mu = row.iter().sum::<f64>() / c;
    let var = row.iter().map(|&x| (x - mu) * (x - mu)).sum::<f64>() / c;
    (mu, 1.0 / (var + eps).sqrt())
}

fn backward_step(node: &Node, g: &Value, adj: &mut [Option<Value>]) {
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            bump(adj, a, g.clone());
            bump(adj, b, g.clone());
        }
        Op::Sub(a, b) => {
            bump(adj, a, g.clone());
            bump(adj, b, elementwise1(g, |x| -x, |x| -x));
        }
        Op::Mul(a, b) => {
            bump(adj, a, elementwise2(g, &b.val, |x, y| x * y, |x, y| x * y, "mul-adj"));
            bump(adj, b, elementwise2(g, &a.val, |x, y| x * y, |x, y| x * y, "mul-adj"));
        }
        Op::Neg(a) => bump(adj, a, elementwise1(g, |x| -x, |x| -x)),
        Op::Scale(a, c) => {
            let c = *c;
            bump(adj, a, elementwise1(g, |x| c * x, |x| c * x));
        }
        Op::AddScalar(a) => bump(adj, a, g.clone()),
        Op::Matmul(a, b) => {
            let (n, k) = (a.val.rows(), a.val.cols());
            let m = b.val.cols();
            let gd = g.real_data();
            if a.id.is_some() {
                // g_A = g·Bᵀ
                let bd = b.val.real_data();
                let mut da = vec![0.0; n * k];
                for i in 0..n {
                    for j in 0..m {
                        let gij = gd[i * m + j];
                        if gij != 0.0 {
                            for l in 0..k {
                                da[i * k + l] += gij * bd[l * m + j];
                            }
                        }
                    }
                }
                bump(adj, a, Value::real(n, k, da));
            }
            if b.id.is_some() {
                // g_B = Aᵀ·g
                let ad = a.val.real_data();
                let mut db = vec![0.0; k * m];
                for i in 0..n {
                    for l in 0..k {
                        let ail = ad[i * k + l];
                        if ail != 0.0 {
                            for j in 0..m {
                                db[l * m + j] += ail * gd[i * m + j];
                            }
                        }
                    }
                }
                bump(adj, b, Value::real(k, m, db));
            }
        }
        Op::AddBiasRow(x, bias) => {
            let (n, c) = (x.val.rows(), x.val.cols());
            let gd = g.real_data();
            bump(adj, x, g.clone());
            if bias.id.is_some() {
                let mut db = vec![0.0; c];
                for i in 0..n {
                    for j in 0..c {
                        db[j] += gd[i * c + j];
                    }
                }
                bump(adj, bias, Value::real(1, c, db));
            }
        }
        Op::MulBcastRow(x, row) => {
            let (n, c) = (x.val.rows(), x.val.cols());
            let gd = g.real_data();
            if x.id.is_some() {
                let rd = row.val.real_data();
                let mut dx = vec![0.0; n * c];
                for i in 0..n {
                    for j in 0..c {
                        dx[i * c + j] = gd[i * c + j] * rd[j];
                    }
                }
                bump(adj, x, Value::real(n, c, dx));
            }
            if row.id.is_some() {
                let xd = x.val.real_data();
                let mut dr = vec![0.0; c];
                for i in 0..n {
                    for j in 0..c {
                        dr[j] += gd[i * c + j] * xd[i * c + j];
                    }
                }
                bump(adj, row, Value::real(1, c, dr));
            }
        }
        Op::Softplus(a) => {
            let xd = a.val.real_data();
            let gd = g.real_data();
            let d: Vec<f64> = xd.iter().zip(gd).map(|(&x, &gg)| sigmoid_f(x) * gg).collect();
            bump(adj, a, Value::real(a.val.rows(), a.val.cols(), d));
        }
        Op::Gelu(a) => {
            let xd = a.val.real_data();
            let gd = g.real_data();
            let d: Vec<f64> = xd.iter().zip(gd).map(|(&x, &gg)| gelu_df(x) * gg).collect();
            bump(adj, a, Value::real(a.val.rows(), a.val.cols(), d));
        }
        Op::Exp(a) => match &*node.value {
            Value::Real { rows, cols, data } => {
                let gd = g.real_data();
                let d: Vec<f64> = data.iter().zip(gd).map(|(&y, &gg)| y * gg).collect();
                bump(adj, a, Value::real(*rows, *cols, d));
            }
            Value::Complex { rows, cols, data } => {
                let gd = g.complex_data();
                let d: Vec<Complex64> = data.iter().zip(gd).map(|(&y, &gg)| y * gg).collect();
                bump(adj, a, Value::complex(*rows, *cols, d));
            }
        },
        Op::Ln(a) => {
            let xd = a.val.real_data();
            let gd = g.real_data();
            let d: Vec<f64> = xd.iter().zip(gd).map(|(&x, &gg)| gg / x).collect();
            bump(adj, a, Value::real(a.val.rows(), a.val.cols(), d));
        }
        Op::Sum(a) => {
            let gs = g.scalar_value();
            let (n, c) = (a.val.rows(), a.val.cols());
            bump(adj, a, Value::real(n, c, vec![gs; n * c]));
        }
        Op::SumRows(a) => {
            let gd = g.real_data();
            let (n, c) = (a.val.rows(), a.val.cols());
            let mut d = vec![0.0; n * c];
            for i in 0..n {
                for j in 0..c {
                    d[i * c + j] = gd[i];
                }
            }
            bump(adj, a, Value::real(n, c, d));
        }
        Op::LayerNorm { x, gamma, beta, eps } => {
            let (n, c) = (x.val.rows(), x.val.cols());
            let xd = x.val.real_data();
            let gmd = gamma.val.real_data();
            let gd = g.real_data();
            let cf = c as f64;
            let mut dx = vec![0.0; n * c];
            let mut dgamma = vec![0.0; c];
            let mut dbeta = vec![0.0; c];
            for i in 0..n {
                let row = &xd[i * c..(i + 1) * c];
                let (mu, inv) = row_norm_stats(row, *eps);
                let grow = &gd[i * c..(i + 1) * c];
                let mut mean_dxhat = 0.0;
                let mut mean_dxhat_xhat = 0.0;
                for j in 0..c {
                    let xhat = (row[j] - mu) * inv;
                    let dxhat = grow[j] * gmd[j];
                    dgamma[j] += grow[j] * xhat;
                    dbeta[j] += grow[j];
                    mean_dxhat += dxhat;
                    mean_dxhat_xhat += dxhat * xhat;
                }
                mean_dxhat /= cf;
                mean_dxhat_xhat /= cf;
                for j in 0..c {
                    let xhat = (row[j] - mu) * inv;
                    let dxhat = grow[j] * gmd[j];
                    dx[i * c + j] = inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
                }
            }
            bump(adj, x, Value::real(n, c, dx));
            bump(adj, gamma, Value::real(1, c, dgamma));
            bump(adj, beta, Value::real(1, c, dbeta));
        }
        Op::GatherRows(a, idx) => {
            let (n, c) = (a.val.rows(), a.val.cols());
            match g {
                Value::Real { data: gd, .. } => {
                    let mut d = vec![0.0; n * c];
                    for (j, &i) in idx.iter().enumerate() {
                        for l in 0..c {
                            d[i * c + l] += gd[j * c + l];
                        }
                    }
                    bump(adj, a, Value::real(n, c, d));
                }
                Value::Complex { data: gd, .. } => {
                    let mut d = vec![Complex64::new(0.0, 0.0); n * c];
                    for (j, &i) in idx.iter().enumerate() {
                        for l in 0..c {
                            d[i * c + l] += gd[j * c + l];
                        }
                    }
                    bump(adj, a, Value::complex(n, c, d));
                }
            }
        }
        Op::TakePerRow(a, idx) => {
            let (n, c) = (a.val.rows(), a.val.cols());
            let gd = g.real_data();
            let mut d = vec![0.0; n * c];
            for (i, &j) in idx.iter().enumerate() {
                d[i * c + j] += gd[i];
            }
            bump(adj, a, Value::real(n, c, d));
        }
        Op::Vcat(a, b) => {
            let (na, c) = (a.val.rows(), a.val.cols());
            let nb = b.val.rows();
            match g {
                Value::Real { data: gd, .. } => {
                    bump(adj, a, Value::real(na, c, gd[..na * c].to_vec()));
                    bump(adj, b, Value::real(nb, c, gd[na * c..].to_vec()));
                }
                Value::Complex { data: gd, .. } => {
                    bump(adj, a, Value::complex(na, c, gd[..na * c].to_vec()));
                    bump(adj, b, Value::complex(nb, c, gd[na * c..].to_vec()));
                }
            }
        }
        Op::ComplexFromParts(re, im) => {
            let gd = g.complex_data();
            let (n, c) = (re.val.rows(), re.val.cols());
            if re.id.is_some() {
                let d: Vec<f64> = gd.iter().map(|w| w.re).collect();
                bump(adj, re, Value::real(n, c, d));
            }
            if im.id.is_some() {
                let d: Vec<f64> = gd.iter().map(|w| -w.im).collect();
                bump(adj, im, Value::real(n, c, d));
            }
        }
        Op::RealPart(a) => {
            let gd = g.real_data();
            let (n, c) = (a.val.rows(), a.val.cols());
            let d: Vec<Complex64> = gd.iter().map(|&x| Complex64::new(x, 0.0)).collect();
            bump(adj, a, Value::complex(n, c, d));
        }
        Op::MulReal { r, z } => {
            let gd = g.complex_data();
            let zd = z.val.complex_data();
            let rd = r.val.real_data();
            let (zr, zc) = (z.val.rows(), z.val.cols());
            let (rr, rc) = (r.val.rows(), r.val.cols());
            if rr == zr && rc == zc {
                if r.id.is_some() {
                    let d: Vec<f64> = gd.iter().zip(zd).map(|(&gg, &w)| (gg * w).re).collect();
                    bump(adj, r, Value::real(rr, rc, d));
                }
                if z.id.is_some() {
                    let d: Vec<Complex64> = gd.iter().zip(rd).map(|(&gg, &s)| gg * s).collect();
                    bump(adj, z, Value::complex(zr, zc, d));
                }
            } else if rr == zr && rc == 1 {
                if r.id.is_some() {
                    let mut d = vec![0.0; rr];
                    for i in 0..zr {
                        for j in 0..zc {
                            d[i] += (gd[i * zc + j] * zd[i * zc + j]).re;
                        }
                    }
                    bump(adj, r, Value::real(rr, 1, d));
                }
                if z.id.is_some() {
                    let mut d = vec![Complex64::new(0.0, 0.0); zr * zc];
                    for i in 0..zr {
                        for j in 0..zc {
                            d[i * zc + j] = gd[i * zc + j] * rd[i];
                        }
                    }
                    bump(adj, z, Value::complex(zr, zc, d));
                }
            } else {
                // z is 1×C broadcast across the rows of r
                if r.id.is_some() {
                    let mut d = vec![0.0; rr * rc];
                    for i in 0..rr {
                        for j in 0..zc {
                            d[i * zc + j] = (gd[i * zc + j] * zd[j]).re;
                        }
                    }
                    bump(adj, r, Value::real(rr, rc, d));
                }
                if z.id.is_some() {
                    let mut d = vec![Complex64::new(0.0, 0.0); zc];
                    for i in 0..rr {
                        for j in 0..zc {
                            d[j] += gd[i * zc + j] * rd[i * zc + j];
                        }
                    }
                    bump(adj, z, Value::complex(1, zc, d));
                }
            }
        }
        Op::RcMatmulNt(u, b) => {
            let gd = g.complex_data();
            let (n, h) = (u.val.rows(), u.val.cols());
            let p = b.val.rows();
            if u.id.is_some() {
                let bd = b.val.complex_data();
                let mut d = vec![0.0; n * h];
                for i in 0..n {
                    for l in 0..h {
                        let mut acc = 0.0;
                        for q in 0..p {
                            acc += (bd[q * h + l] * gd[i * p + q]).re;
                        }
                        d[i * h + l] = acc;
                    }
                }
                bump(adj, u, Value::real(n, h, d));
            }
            if b.id.is_some() {
                let ud = u.val.real_data();
                let mut d = vec![Complex64::new(0.0, 0.0); p * h];
                for i in 0..n {
                    for q in 0..p {
                        let gq = gd[i * p + q];
                        for l in 0..h {
                            d[q * h + l] += gq * ud[i * h + l];
                        }
                    }
                }
                bump(adj, b, Value::complex(p, h, d));
            }
        }
        Op::ProjectReal2(x, c) => {
            let gd = g.real_data();
            let (n, p) = (x.val.rows(), x.val.cols());
            let h = c.val.rows();
            if x.id.is_some() {
                let cd = c.val.complex_data();
                let mut d = vec![Complex64::new(0.0, 0.0); n * p];
                for i in 0..n {
                    for q in 0..h {
                        let gq = 2.0 * gd[i * h + q];
                        if gq != 0.0 {
                            for l in 0..p {
                                d[i * p + l] += cd[q * p + l] * gq;
                            }
                        }
                    }
                }
                bump(adj, x, Value::complex(n, p, d));
            }
            if c.id.is_some() {
                let xd = x.val.complex_data();
                let mut d = vec![Complex64::new(0.0, 0.0); h * p];
                for i in 0..n {
                    for q in 0..h {
                        let gq = 2.0 * gd[i * h + q];
                        if gq != 0.0 {
                            for l in 0..p {
                                d[q * p + l] += xd[i * p + l] * gq;
                            }
                        }
                    }
                }
                bump(adj, c, Value::complex(h, p, d));
            }
        }
        Op::Scan { a, b, x0 } => {
            let (n, p) = (a.val.rows(), a.val.cols());
            let gd = g.complex_data();
            let ad = a.val.complex_data();
            let xs = node.value.complex_data();
            let x0d = x0.val.complex_data();
            let adjv = scan::scan_adjoint(ad, gd, p.max(1));
            if b.id.is_some() {
                bump(adj, b, Value::complex(n, p, adjv.clone()));
            }
            if a.id.is_some() {
                // g_a[i] = adj_i ⊙ x_{i−1}
                let mut d = vec![Complex64::new(0.0, 0.0); n * p];
                for i in 0..n {
                    for l in 0..p {
                        let xprev = if i == 0 { x0d[l] } else { xs[(i - 1) * p + l] };
                        d[i * p + l] = adjv[i * p + l] * xprev;
                    }
                }
                bump(adj, a, Value::complex(n, p, d));
            }
            if x0.id.is_some() {
                let mut d = vec![Complex64::new(0.0, 0.0); p];
                if n > 0 {
                    for l in 0..p {
                        d[l] = ad[l] * adjv[l];
                    }
                }
                bump(adj, x0, Value::complex(1, p, d));
            }
        }
    }
}

//! Linear-recurrence (scan) kernels over complex state channels.
//!
//! Evaluates x_i = a_i ⊙ x_{i−1} + b_i for rows i = 1..N of row-major
//! [N×P] coefficient/offset arrays, starting from a length-P initial
//! state. Two execution strategies produce the same result up to
//! floating-point reassociation:
//!
//! - sequential: one pass, N complex multiplies per channel;
//! - chunked-parallel: rows are split into fixed 4096-row chunks. A first
//!   parallel pass composes each chunk's affine map (2 multiplies per
//!   element), a short sequential pass propagates the carry state across
//!   chunk boundaries, and a second parallel pass replays each chunk from
//!   its incoming carry (1 multiply per element) — 3N multiplies per
//!   channel overall, independent of thread count, so results are
//!   bit-identical for a given length no matter how many workers run.
//!
//! The crossover length and chunk size are fixed constants rather than
//! thread-count heuristics to keep outputs deterministic. A global
//! multiply counter supports work-scaling measurements: both strategies
//! are Θ(N) per channel with small, known constants.
//!
//! The adjoint of the recurrence is itself a scan run backwards
//! (`scan_adjoint`), so reverse-mode gradients reuse the same kernels.

use num_complex::Complex64;
use rayon::prelude::*;
use std::cell::Cell;
use std::sync::atomic::{AtomicU64, Ordering};

/// Rows per parallel chunk; also the sequential/parallel crossover.
pub const CHUNK_ROWS: usize = 4096;

/// Execution strategy. `Auto` picks sequential below [`CHUNK_ROWS`] rows
/// and chunked-parallel above; the forced variants exist so equivalence
/// checks and benchmarks can drive the exact same call path — including
/// the adjoint — through either kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScanKernel {
    #[default]
    Auto,
    Sequential,
    Parallel,
}

thread_local! {
    static FORCED_KERNEL: Cell<ScanKernel> = const { Cell::new(ScanKernel::Auto) };
}

/// Strategy consulted by [`scan_inclusive`] on this thread.
pub fn scan_kernel() -> ScanKernel {
    FORCED_KERNEL.with(|k| k.get())
}

/// Restores the previous strategy when dropped.
pub struct KernelGuard {
    prev: ScanKernel,
}

impl Drop for KernelGuard {
    fn drop(&mut self) {
        FORCED_KERNEL.with(|k| k.set(self.prev));
    }
}

/// Force a strategy for every scan on this thread until the guard drops.
#[must_use = "the override lasts only while the guard lives"]
pub fn force_scan_kernel(kernel: ScanKernel) -> KernelGuard {
    let prev = FORCED_KERNEL.with(|k| k.replace(kernel));
    KernelGuard { prev }
}

static CMUL_COUNT: AtomicU64 = AtomicU64::new(0);

/// Complex multiplies performed by scan kernels since the last reset.
pub fn scan_op_count() -> u64 {
    CMUL_COUNT.load(Ordering::Relaxed)
}

pub fn reset_scan_op_count() {
    CMUL_COUNT.store(0, Ordering::Relaxed);
}

fn count_cmuls(n: u64) {
    CMUL_COUNT.fetch_add(n, Ordering::Relaxed);
}

/// Force the sequential strategy regardless of length (used by the
/// benchmark to time both strategies on equal input).
pub fn scan_sequential(a: &[Complex64], b: &[Complex64], x0: &[Complex64]) -> Vec<Complex64> {
    let p = x0.len();
    assert!(p > 0, "state dimension must be positive");
    assert_eq!(a.len(), b.len(), "coefficient/offset length mismatch");
    assert_eq!(a.len() % p, 0, "row length not a multiple of the state dimension");
    let n = a.len() / p;
    let mut out = vec![Complex64::new(0.0, 0.0); n * p];
    let mut x: Vec<Complex64> = x0.to_vec();
    for i in 0..n {
        let row = i * p;
        for c in 0..p {
            x[c] = a[row + c] * x[c] + b[row + c];
        }
        out[row..row + p].copy_from_slice(&x);
    }
    count_cmuls((n * p) as u64);
    out
}

/// Force the chunked-parallel strategy regardless of length.
pub fn scan_parallel(a: &[Complex64], b: &[Complex64], x0: &[Complex64]) -> Vec<Complex64> {
    let p = x0.len();
    assert!(p > 0, "state dimension must be positive");
    assert_eq!(a.len(), b.len(), "coefficient/offset length mismatch");
    assert_eq!(a.len() % p, 0, "row length not a multiple of the state dimension");
    let n = a.len() / p;
    if n == 0 {
        return Vec::new();
    }
    let chunk = CHUNK_ROWS * p;
    let num_chunks = a.len().div_ceil(chunk);

    // Pass 1: each chunk's rows compose into one affine map (A, B) such
    // that x_out = A ⊙ x_in + B.
    let maps: Vec<(Vec<Complex64>, Vec<Complex64>)> = a
        .par_chunks(chunk)
        .zip(b.par_chunks(chunk))
        .map(|(ac, bc)| {
            let rows = ac.len() / p;
            let mut ca = vec![Complex64::new(1.0, 0.0); p];
            let mut cb = vec![Complex64::new(0.0, 0.0); p];
            for i in 0..rows {
                let row = i * p;
                for c in 0..p {
                    ca[c] = ac[row + c] * ca[c];
                    cb[c] = ac[row + c] * cb[c] + bc[row + c];
                }
            }
            count_cmuls(2 * (rows * p) as u64);
            (ca, cb)
        })
        .collect();

    // Carry propagation across chunk boundaries (sequential, short).
    let mut carries = Vec::with_capacity(num_chunks);
    let mut s: Vec<Complex64> = x0.to_vec();
    for (ca, cb) in &maps {
        carries.push(s.clone());
        for c in 0..p {
            s[c] = ca[c] * s[c] + cb[c];
        }
    }
    count_cmuls((num_chunks * p) as u64);

    // Pass 2: replay each chunk from its incoming carry.
    let mut out = vec![Complex64::new(0.0, 0.0); n * p];
    out.par_chunks_mut(chunk)
        .zip(a.par_chunks(chunk))
        .zip(b.par_chunks(chunk))
        .zip(carries.into_par_iter())
        .for_each(|(((oc, ac), bc), mut x)| {
            let rows = ac.len() / p;
            for i in 0..rows {
                let row = i * p;
                for c in 0..p {
                    x[c] = ac[row + c] * x[c] + bc[row + c];
                }
                oc[row..row + p].copy_from_slice(&x);
            }
            count_cmuls((rows * p) as u64);
        });
    out
}

/// Inclusive scan with an explicit strategy.
pub fn scan_inclusive_with(
    kernel: ScanKernel,
    a: &[Complex64],
    b: &[Complex64],
    x0: &[Complex64],
) -> Vec<Complex64> {
    match kernel {
        ScanKernel::Sequential => scan_sequential(a, b, x0),
        ScanKernel::Parallel => scan_parallel(a, b, x0),
        ScanKernel::Auto => {
            let p = x0.len().max(1);
            if a.len() / p < CHUNK_ROWS {
                scan_sequential(a, b, x0)
            } else {
                scan_parallel(a, b, x0)
            }
        }
    }
}

/// Inclusive scan under the thread's current strategy (see
/// [`force_scan_kernel`]); `Auto` selects by length.
pub fn scan_inclusive(a: &[Complex64], b: &[Complex64], x0: &[Complex64]) -> Vec<Complex64> {
    scan_inclusive_with(scan_kernel(), a, b, x0)
}

/// Adjoint pass of the recurrence: given upstream gradients g_i for the
/// outputs x_i, returns adj_i satisfying
///
/// ```text
/// adj_N = g_N,    adj_i = g_i + a_{i+1} ⊙ adj_{i+1}.
/// ```
///
/// adj is the gradient with respect to b; the gradients for a and the
/// initial state follow as g_{a_i} = adj_i ⊙ x_{i−1} and
/// g_{x0} = a_1 ⊙ adj_1. The reversed recurrence is again a scan, so the
/// same kernels (and their work bounds) apply.
pub fn scan_adjoint(a: &[Complex64], g: &[Complex64], p: usize) -> Vec<Complex64> {
    assert!(p > 0, "state dimension must be positive");
    assert_eq!(a.len(), g.len(), "coefficient/gradient length mismatch");
    assert_eq!(a.len() % p, 0, "row length not a multiple of the state dimension");
    let n = a.len() / p;
    if n == 0 {
        return Vec::new();
    }
    // Reversed arrays: step j of the forward scan on (a', b') computes
    // y_j = adj_{N+1−j} when a'_j = a_{N+2−j} (a'_1 unused, zero) and
    // b'_j = g_{N+1−j}, from a zero initial state.
    let mut ar = vec![Complex64::new(0.0, 0.0); n * p];
    let mut br = vec![Complex64::new(0.0, 0.0); n * p];
    for j in 0..n {
        // forward row j corresponds to original row n−1−j
        let src = (n - 1 - j) * p;
        br[j * p..j * p + p].copy_from_slice(&g[src..src + p]);
        if j > 0 {
            let asrc = (n - j) * p;
            ar[j * p..j * p + p].copy_from_slice(&a[asrc..asrc + p]);
        }
    }
    let x0 = vec![Complex64::new(0.0, 0.0); p];
    let y = scan_inclusive(&ar, &br, &x0);
    let mut adj = vec![Complex64::new(0.0, 0.0); n * p];
    for j in 0..n {
        let dst = (n - 1 - j) * p;
        adj[dst..dst + p].copy_from_slice(&y[j * p..j * p + p]);
    }
    adj
}

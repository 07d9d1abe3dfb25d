//! Quadrature and special-function helpers shared by the simulators'
//! likelihood oracles and the evaluation suite.
//!
//! Contents: composite trapezoid on an explicit grid, adaptive Simpson
//! quadrature with Richardson error control, and a full-double-precision
//! complementary error function (the classical rational-approximation
//! scheme used by the FORTRAN special-function libraries), plus the normal
//! density/CDF/survival/hazard built on top of it.

/// Composite trapezoid rule over an explicit, sorted grid.
pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len(), "grid/value length mismatch");
    let mut acc = 0.0;
    for i in 1..xs.len() {
        acc += 0.5 * (ys[i] + ys[i - 1]) * (xs[i] - xs[i - 1]);
    }
    acc
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

fn adaptive_step(
    f: &mut impl FnMut(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    // Standard Simpson error estimate: the true error of the refined value
    // is ≈ delta/15, so accept when |delta| ≤ 15·tol.
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + adaptive_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson quadrature of `f` over `[a, b]` to absolute tolerance
/// `tol`. Splits recursively until the Richardson error estimate is below
/// the per-interval budget (depth-capped at 50, far beyond need for the
/// smooth integrands used here).
pub fn adaptive_simpson(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = simpson(a, b, fa, fm, fb);
    adaptive_step(&mut f, a, b, fa, fm, fb, whole, tol, 50)
}

// Rational-approximation constants for erf/erfc (Cody's classical scheme;
// max error a few ulp across all branches).
const ERF_A: [f64; 5] = [
    3.16112374387056560e0,
    1.13864154151050156e2,
    3.77485237685302021e2,
    3.20937758913846947e3,
    1.85777706184603153e-1,
];
const ERF_B: [f64; 4] = [
    2.36012909523441209e1,
    2.44024637934444173e2,
    1.28261652607737228e3,
    2.84423683343917062e3,
];
const ERF_C: [f64; 9] = [
    5.64188496988670089e-1,
    8.88314979438837594e0,
    6.61191906371416295e1,
    2.98635138197400131e2,
    8.81952221241769090e2,
    1.71204761263407058e3,
    2.05107837782607147e3,
    1.23033935479799725e3,
    2.15311535474403846e-8,
];
const ERF_D: [f64; 8] = [
    1.57449261107098347e1,
    1.17693950891312499e2,
    5.37181101862009858e2,
    1.62138957456669019e3,
    3.29079923573345963e3,
    4.36261909014324716e3,
    3.43936767414372164e3,
    1.23033935480374942e3,
];
const ERF_P: [f64; 6] = [
    3.05326634961232344e-1,
    3.60344899949804439e-1,
    1.25781726111229246e-1,
    1.60837851487422766e-2,
    6.58749161529837803e-4,
    1.63153871373020978e-2,
];
const ERF_Q: [f64; 5] = [
    2.56852019228982242e0,
    1.87295284992346047e0,
    5.27905102951428412e-1,
    6.05183413124413191e-2,
    2.33520497626869185e-3,
];
const ONE_OVER_SQRT_PI: f64 = 5.64189583547756287e-1;

/// exp(−y²)·r computed with the split y² = ysq² + del trick that keeps the
/// exponent accurate for large y.
fn exp_neg_sq_times(y: f64, r: f64) -> f64 {
    let ysq = (y * 16.0).trunc() / 16.0;
    let del = (y - ysq) * (y + ysq);
    (-ysq * ysq).exp() * (-del).exp() * r
}

/// Complementary error function, full double accuracy on all of ℝ
/// (underflows to 0 beyond x ≈ 26.6; 2 − erfc handles the negative side).
pub fn erfc(x: f64) -> f64 {
    let y = x.abs();
    if y <= 0.46875 {
        // erfc = 1 − erf on the central interval.
        let z = if y > 1.11e-16 { y * y } else { 0.0 };
        let mut num = ERF_A[4] * z;
        let mut den = z;
        for i in 0..3 {
            num = (num + ERF_A[i]) * z;
            den = (den + ERF_B[i]) * z;
        }
        let erf = x * (num + ERF_A[3]) / (den + ERF_B[3]);
        return 1.0 - erf;
    }
    let result = if y <= 4.0 {
        let mut num = ERF_C[8] * y;
        let mut den = y;
        for i in 0..7 {
            num = (num + ERF_C[i]) * y;
            den = (den + ERF_D[i]) * y;
        }
        exp_neg_sq_times(y, (num + ERF_C[7]) / (den + ERF_D[7]))
    } else {
        let z = 1.0 / (y * y);
        let mut num = ERF_P[5] * z;
        let mut den = z;
        for i in 0..4 {
            num = (num + ERF_P[i]) * z;
            den = (den + ERF_Q[i]) * z;
        }
        let r = z * (num + ERF_P[4]) / (den + ERF_Q[4]);
        exp_neg_sq_times(y, (ONE_OVER_SQRT_PI - r) / y)
    };
    if x < 0.0 {
        2.0 - result
    } else {
        result
    }
}

/// Error function. Odd in x; the central branch is the erfc rational with
/// the sign carried by erfc's own `x` factor, the tails go through erfc.
pub fn erf(x: f64) -> f64 {
    if x.abs() <= 0.46875 {
        1.0 - erfc(x) // central branch of erfc is exactly 1 − erf(x)
    } else if x > 0.0 {
        1.0 - erfc(x)
    } else {
        erfc(-x) - 1.0
    }
}

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const SQRT_TAU: f64 = 2.50662827463100050_f64; // √(2π)

/// Normal density.
pub fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    (-0.5 * z * z).exp() / (sd * SQRT_TAU)
}

/// Normal CDF Φ.
pub fn normal_cdf(x: f64, mean: f64, sd: f64) -> f64 {
    0.5 * erfc(-(x - mean) / (sd * SQRT_2))
}

/// Normal survival 1 − Φ, accurate deep into the upper tail.
pub fn normal_sf(x: f64, mean: f64, sd: f64) -> f64 {
    0.5 * erfc((x - mean) / (sd * SQRT_2))
}

/// Hazard φ/(1−Φ) of the normal, in original units. Beyond z ≈ 37 the
/// survival underflows, so the Mills-ratio asymptotic
/// h(z) ≈ z / (1 − z⁻² + 3z⁻⁴ − 15z⁻⁶ + 105z⁻⁸) takes over (relative
/// error < 1e-12 at the crossover).
pub fn normal_hazard(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    if z < 37.0 {
        let sf = normal_sf(x, mean, sd);
        if sf > 0.0 {
            return normal_pdf(x, mean, sd) / sf;
        }
    }
    let zi = 1.0 / (z * z);
    let series = 1.0 - zi * (1.0 - zi * (3.0 - zi * (15.0 - zi * 105.0)));
    z / series / sd
}

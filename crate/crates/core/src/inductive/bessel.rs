//! Bessel functions of the first kind and the radial coil kernel
//! `I(x1, x2) = ∫_{x1}^{x2} t J1(t) dt`.

use crate::error::{Error, Result};

/// J1 for finite `x`. Backed by the fdlibm port in `libm`.
pub fn bessel_j1(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("J1 of non-finite argument {x}")));
    }
    Ok(libm::j1(x))
}

pub fn bessel_j0(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("J0 of non-finite argument {x}")));
    }
    Ok(libm::j0(x))
}

#[inline]
pub(crate) fn j1(x: f64) -> f64 {
    libm::j1(x)
}

/// `∫_{x1}^{x2} t J1(t) dt` for `0 <= x1 <= x2`.
pub fn kernel_i(x1: f64, x2: f64) -> Result<f64> {
    if !(x1.is_finite() && x2.is_finite()) {
        return Err(Error::Domain("kernel bounds must be finite".into()));
    }
    if x1 < 0.0 || x1 > x2 {
        return Err(Error::Domain(format!(
            "kernel bounds must satisfy 0 <= x1 <= x2, got ({x1}, {x2})"
        )));
    }
    Ok(kernel_from_zero(x2) - kernel_from_zero(x1))
}

/// `∫_0^x t J1(t) dt`.
///
/// Integration by parts gives `-x J0(x) + ∫_0^x J0`, and the remaining
/// integral is `2 Σ_k J_{2k+1}(x)`, a sum that Miller's backward recurrence
/// produces together with J0 in one pass.
pub(crate) fn kernel_from_zero(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    if x < 1.0 {
        return kernel_series(x);
    }
    let (j0, odd_sum) = miller_j0_and_odd_sum(x);
    -x * j0 + 2.0 * odd_sum
}

/// Power series `Σ (-1)^k x^{2k+3} / (2^{2k+1} k! (k+1)! (2k+3))`, for small x.
fn kernel_series(x: f64) -> f64 {
    let q = -0.25 * x * x;
    // term_k without the 1/(2k+3) factor: x^3/2 * q^k / (k!(k+1)!)
    let mut coef = 0.5 * x * x * x;
    let mut sum = coef / 3.0;
    for k in 1..30 {
        let kf = k as f64;
        coef *= q / (kf * (kf + 1.0));
        let term = coef / (2.0 * kf + 3.0);
        sum += term;
        if term.abs() < 1e-18 * sum.abs() {
            break;
        }
    }
    sum
}

/// Returns `(J0(x), Σ_{k>=0} J_{2k+1}(x))` by downward recurrence normalized
/// with `J0 + 2 Σ J_{2k} = 1`.
fn miller_j0_and_odd_sum(x: f64) -> (f64, f64) {
    const RESCALE: f64 = 1e250;
    let start = x + 20.0 + 12.0 * x.cbrt();
    let mut n = start.ceil() as usize;
    if n % 2 == 1 {
        n += 1;
    }
    let two_over_x = 2.0 / x;
    let mut j_next = 0.0; // J_{n+1}
    let mut j_cur = 1e-300; // J_n
    let mut even_sum = 0.0; // Σ J_{2k}, k >= 1
    let mut odd_sum = 0.0;
    // n is even here.
    even_sum += j_cur;
    let mut m = n;
    while m > 0 {
        let j_prev = m as f64 * two_over_x * j_cur - j_next;
        j_next = j_cur;
        j_cur = j_prev;
        m -= 1;
        if m % 2 == 0 {
            if m > 0 {
                even_sum += j_cur;
            }
        } else {
            odd_sum += j_cur;
        }
        if j_cur.abs() > RESCALE {
            j_cur /= RESCALE;
            j_next /= RESCALE;
            even_sum /= RESCALE;
            odd_sum /= RESCALE;
        }
    }
    let norm = j_cur + 2.0 * even_sum;
    (j_cur / norm, odd_sum / norm)
}

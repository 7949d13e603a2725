//! Harmonic-oscillator eigenfunctions and Fock-basis Wigner kernels in the
//! `[x, p] = i` convention (vacuum `exp(-x^2 - p^2) / pi`).

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Largest supported Fock truncation.
pub const FOCK_CAP: usize = 30;

/// `psi_0(x) .. psi_{count-1}(x)` via the normalized three-term recurrence
/// `psi_{n+1} = sqrt(2/(n+1)) x psi_n - sqrt(n/(n+1)) psi_{n-1}`.
pub fn hermite_functions<T: Real>(x: T, count: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(count);
    if count == 0 {
        return out;
    }
    let two = T::two();
    let psi0 = T::PI().powf(-T::lit(0.25)) * (-(x * x) * T::half()).exp();
    out.push(psi0);
    if count == 1 {
        return out;
    }
    out.push(two.sqrt() * x * psi0);
    for n in 1..count - 1 {
        let nf = T::lit(n as f64);
        let np1 = nf + T::one();
        let next = (two / np1).sqrt() * x * out[n] - (nf / np1).sqrt() * out[n - 1];
        out.push(next);
    }
    out
}

/// `<n|x_theta> = e^{i n theta} psi_n(x)` for the rotated quadrature
/// `x_theta = x cos(theta) + p sin(theta)`.
pub fn fock_quadrature_amplitude<T: Real>(n: usize, theta: T, x: T) -> Result<Complex<T>> {
    if n >= FOCK_CAP {
        return Err(Error::invalid(
            "fock_number",
            format!("n = {n} exceeds the supported cap {FOCK_CAP}"),
        ));
    }
    let psi = hermite_functions(x, n + 1)[n];
    let phase = theta * T::lit(n as f64);
    Ok(Complex::new(phase.cos(), phase.sin()) * psi)
}

/// Wigner functions of all operators `|n><m|`, `n, m < dim`, at one
/// phase-space point; entry `n * dim + m`.
///
/// For `m = n + k`, `W_{|m><n|} = (-1)^n / pi sqrt(n!/m!) (sqrt2 (x - i p))^k
/// exp(-r^2) L_n^{(k)}(2 r^2)`, and `W_{|n><m|}` is its conjugate.
pub fn wigner_kernels<T: Real>(dim: usize, x: T, p: T) -> Vec<Complex<T>> {
    let mut out = vec![Complex::new(T::zero(), T::zero()); dim * dim];
    let r2 = x * x + p * p;
    let u = T::two() * r2;
    let envelope = (-r2).exp() / T::PI();
    let w = Complex::new(x, -p) * T::two().sqrt();
    let mut w_pow = Complex::new(T::one(), T::zero());
    // 1 / sqrt(k!)
    let mut inv_sqrt_kfact = T::one();
    for k in 0..dim {
        if k > 0 {
            inv_sqrt_kfact = inv_sqrt_kfact / T::lit(k as f64).sqrt();
            w_pow = w_pow * w;
        }
        let kf = T::lit(k as f64);
        let mut lag_prev = T::zero();
        let mut lag = T::one();
        // sqrt(n! / (n+k)!)
        let mut ratio = inv_sqrt_kfact;
        for n in 0..dim - k {
            let sign = if n % 2 == 0 { T::one() } else { -T::one() };
            let val = w_pow * (sign * ratio * envelope * lag);
            out[(n + k) * dim + n] = val;
            out[n * dim + n + k] = val.conj();
            let nf = T::lit(n as f64);
            let next = ((T::two() * nf + T::one() + kf - u) * lag - (nf + kf) * lag_prev)
                / (nf + T::one());
            lag_prev = lag;
            lag = next;
            ratio = ratio * ((nf + T::one()) / (nf + T::one() + kf)).sqrt();
        }
    }
    out
}

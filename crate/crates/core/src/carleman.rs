//! Coefficients of the Carleman-weighted layer equations.
//!
//! Over the layer `[s_n, s_{n-1}]` the function `q(x, s)` is frozen to
//! `q_n(x)` and `int_s^{s_hi} grad q = grad q_bar_{n-1} + (s_{n-1} - s) grad q_n`.
//! With `W = grad V - grad q_bar_{n-1}` and `sigma = s_{n-1} - s` the
//! q-equation reads
//!
//! ```text
//! Laplace q_n + (2 s^2 - 4 s sigma) grad q_n . W
//!     = (2 s^2 sigma - 2 s sigma^2) |grad q_n|^2 - 2 s |W|^2
//! ```
//!
//! and averaging against `exp(-Lambda sigma)` gives
//!
//! ```text
//! A1 = <2 s^2 - 4 s sigma>,  A2 = <2 s^2 sigma - 2 s sigma^2>,  A3 = <-2 s>.
//! ```
//!
//! Substituting `s = S - sigma` with `S = s_{n-1}` reduces all three to the
//! normalized moments `mu_m = <sigma^m>`:
//! `A1 = 2 S^2 - 8 S mu1 + 6 mu2`, `A2 = 2 S^2 mu1 - 6 S mu2 + 4 mu3`,
//! `A3 = -2 S + 2 mu1`.

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::laplace::PseudoFreqAxis;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarlemanCoeffs {
    pub n: usize,
    pub lambda: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
}

/// `rho_m(x) = int_0^1 t^m e^{-x t} dt / int_0^1 e^{-x t} dt` for `m <= 3`,
/// without forming `e^{-x}` against large terms.
pub fn weighted_moment_ratio(m: usize, x: f64) -> f64 {
    if x < 30.0 {
        series_ratio(m, x)
    } else {
        asymptotic_ratio(m, x)
    }
}

/// int_0^1 t^m e^{-xt} = e^{-x} sum_i x^i m! / (m + 1 + i)!, a positive series.
fn series_ratio(m: usize, x: f64) -> f64 {
    let series = |m: usize| {
        let fact_m: f64 = (1..=m).map(|k| k as f64).product();
        let mut term = fact_m / (1..=m + 1).map(|k| k as f64).product::<f64>();
        let mut acc = 0.0;
        let mut i = 0usize;
        loop {
            acc += term;
            i += 1;
            term *= x / (m + 1 + i) as f64;
            if term < 1e-18 * acc || i > 400 {
                break;
            }
        }
        acc
    };
    series(m) / series(0)
}

/// int_0^1 t^m e^{-xt} = m! / x^{m+1} (1 - T_m), T_m = e^{-x} sum_{j<=m} x^j / j!.
fn asymptotic_ratio(m: usize, x: f64) -> f64 {
    let tail = |m: usize| {
        let mut t = 0.0;
        let mut log_fact = 0.0;
        for j in 0..=m {
            if j > 0 {
                log_fact += (j as f64).ln();
            }
            t += (-x + j as f64 * x.ln() - log_fact).exp();
        }
        1.0 - t
    };
    let fact_m: f64 = (1..=m).map(|k| k as f64).product();
    fact_m / x.powi(m as i32) * tail(m) / tail(0)
}

pub fn carleman_coefficients(n: usize, axis: &PseudoFreqAxis, lambda: f64) -> Result<CarlemanCoeffs> {
    if n == 0 || n > axis.layers() {
        return Err(Error::Config(alloc::format!(
            "layer index {n} outside 1..={}",
            axis.layers()
        )));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Config(alloc::format!("Carleman parameter must be positive, got {lambda}")));
    }
    let h = axis.s(n - 1) - axis.s(n);
    let big_s = axis.s(n - 1);
    let x = lambda * h;
    let mu = |m: usize| h.powi(m as i32) * weighted_moment_ratio(m, x);
    let (mu1, mu2, mu3) = (mu(1), mu(2), mu(3));
    Ok(CarlemanCoeffs {
        n,
        lambda,
        a1: 2.0 * big_s * big_s - 8.0 * big_s * mu1 + 6.0 * mu2,
        a2: 2.0 * big_s * big_s * mu1 - 6.0 * big_s * mu2 + 4.0 * mu3,
        a3: -2.0 * big_s + 2.0 * mu1,
    })
}

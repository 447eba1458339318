//! Orthonormal Hermite polynomials.
//!
//! `H_l(u) = Ĥ_l(u) / sqrt(2^l l!)` where `Ĥ_l` are the physicists' polynomials.
//! The normalized family obeys
//!
//! ```text
//! H_0 = 1,  H_1 = sqrt(2) u,
//! H_{l+1} = (sqrt(2) u H_l - sqrt(l) H_{l-1}) / sqrt(l + 1)
//! ```
//!
//! and `dH_l/du = sqrt(2 l) H_{l-1}`.

use std::f64::consts::SQRT_2;

/// Fills `out[l] = H_l(u)` for `l = 0..out.len()`.
pub fn fill(u: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = 1.0;
    if out.len() == 1 {
        return;
    }
    out[1] = SQRT_2 * u;
    for l in 1..out.len() - 1 {
        let lf = l as f64;
        out[l + 1] = (SQRT_2 * u * out[l] - lf.sqrt() * out[l - 1]) / (lf + 1.0).sqrt();
    }
}

/// `H_l(u)` for a single order.
pub fn eval(order: usize, u: f64) -> f64 {
    let mut buf = vec![0.0; order + 1];
    fill(u, &mut buf);
    buf[order]
}

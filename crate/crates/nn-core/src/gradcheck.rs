//! Central finite-difference gradient checks.

/// Denominator floor of the relative error. Entries smaller than this are
/// compared on an absolute scale: with eps = 1e-6 a central difference of an
/// O(10) loss carries about 1e-9 of rounding noise, which would otherwise
/// dominate the relative error of gradient entries near 1e-5.
pub const REL_FLOOR: f64 = 1e-3;

/// `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Element-wise maximum relative error between `analytic` and the central
/// difference `(f(x + eps·e_i) - f(x - eps·e_i)) / 2eps` of the scalar
/// function `f` at `x`.
pub fn grad_check(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], analytic: &[f64], eps: f64) -> f64 {
    assert_eq!(x.len(), analytic.len(), "gradient length");
    let mut xp = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        xp[i] = x[i] + eps;
        let fp = f(&xp);
        xp[i] = x[i] - eps;
        let fm = f(&xp);
        xp[i] = x[i];
        worst = worst.max(rel_error(analytic[i], (fp - fm) / (2.0 * eps)));
    }
    worst
}

//! Central-finite-difference gradient checking utilities.
//!
//! These provide the independent oracle that the reverse-mode engine is
//! validated against: for a scalar function rebuilt from plain values,
//! `central_diff` approximates each partial derivative as
//! `(f(x + h e_i) - f(x - h e_i)) / (2h)`.

/// Central differences of `f` at `at`, one entry per coordinate.
pub fn central_diff(f: &impl Fn(&[f64]) -> f64, at: &[f64], h: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(at.len());
    let mut x = at.to_vec();
    for i in 0..at.len() {
        let orig = x[i];
        x[i] = orig + h;
        let fp = f(&x);
        x[i] = orig - h;
        let fm = f(&x);
        x[i] = orig;
        out.push((fp - fm) / (2.0 * h));
    }
    out
}

/// Largest relative error between two gradient vectors, with an absolute
/// floor so near-zero entries compare absolutely.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "gradient length mismatch");
    let mut worst = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let scale = x.abs().max(y.abs()).max(1e-7);
        worst = worst.max((x - y).abs() / scale);
    }
    worst
}

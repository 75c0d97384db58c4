//! Weight initialization: semi-orthogonal matrices from the QR
//! decomposition of standard-normal draws.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Draw a `rows x cols` semi-orthogonal matrix (row-major): `M M^T = I` when
/// `rows <= cols`, `M^T M = I` otherwise. A standard-normal matrix is QR
/// factored and the Q factor is kept, with Q's columns sign-flipped so the
/// R diagonal is positive, which makes the draw a deterministic function of
/// the normal sample.
pub fn semi_orthogonal_init<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Result<Vec<f64>> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument(format!(
            "semi_orthogonal_init dimensions must be positive, got {}x{}",
            rows, cols
        )));
    }
    let n = rows.max(cols);
    let m = rows.min(cols);
    let mut g = vec![0.0; n * m];
    for v in g.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    let q = thin_qr_q(&mut g, n, m);
    if rows <= cols {
        // Want orthonormal rows: M = Q^T with Q (cols x rows).
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                out[i * cols + j] = q[j * m + i];
            }
        }
        Ok(out)
    } else {
        Ok(q)
    }
}

/// Thin QR via Householder reflections on an `n x m` matrix (`n >= m`),
/// returning Q (`n x m`, orthonormal columns) with positive R diagonal.
fn thin_qr_q(a: &mut [f64], n: usize, m: usize) -> Vec<f64> {
    debug_assert!(n >= m);
    let mut vs: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut diag_sign = vec![1.0; m];
    for k in 0..m {
        // Householder vector for column k below the diagonal.
        let mut norm2 = 0.0;
        for i in k..n {
            let x = a[i * m + k];
            norm2 += x * x;
        }
        let norm = norm2.sqrt();
        let akk = a[k * m + k];
        let alpha = if akk >= 0.0 { -norm } else { norm };
        let mut v = vec![0.0; n];
        if norm > 0.0 {
            v[k] = akk - alpha;
            for i in (k + 1)..n {
                v[i] = a[i * m + k];
            }
            let vnorm2: f64 = v[k..].iter().map(|x| x * x).sum();
            if vnorm2 > 0.0 {
                // Apply H = I - 2 v v^T / (v^T v) to the remaining columns.
                for j in k..m {
                    let mut dot = 0.0;
                    for i in k..n {
                        dot += v[i] * a[i * m + j];
                    }
                    let scale = 2.0 * dot / vnorm2;
                    for i in k..n {
                        a[i * m + j] -= scale * v[i];
                    }
                }
            }
        }
        diag_sign[k] = if a[k * m + k] >= 0.0 { 1.0 } else { -1.0 };
        vs.push(v);
    }
    // Q = H_0 H_1 ... H_{m-1} applied to the first m columns of I.
    let mut q = vec![0.0; n * m];
    for j in 0..m {
        q[j * m + j] = 1.0;
    }
    for k in (0..m).rev() {
        let v = &vs[k];
        let vnorm2: f64 = v[k..].iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for j in 0..m {
            let mut dot = 0.0;
            for i in k..n {
                dot += v[i] * q[i * m + j];
            }
            let scale = 2.0 * dot / vnorm2;
            for i in k..n {
                q[i * m + j] -= scale * v[i];
            }
        }
    }
    // Flip columns so R's diagonal is positive.
    for j in 0..m {
        if diag_sign[j] < 0.0 {
            for i in 0..n {
                q[i * m + j] = -q[i * m + j];
            }
        }
    }
    q
}

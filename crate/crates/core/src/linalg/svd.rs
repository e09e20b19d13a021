//! Thin SVD by one-sided (Hestenes) Jacobi rotations.

use super::{Complex, Mat};
use crate::Real;

/// Thin singular value decomposition `A = U diag(s) V^T`.
///
/// `u` is `m × k`, `v` is `n × k` with `k = min(m, n)`; `s` is sorted descending.
/// Columns of `u` belonging to zero singular values are zero.
#[derive(Clone, Debug)]
pub struct Svd<T> {
    pub u: Mat<T>,
    pub s: Vec<T>,
    pub v: Mat<T>,
}

const MAX_SWEEPS: usize = 80;

/// Orthogonalizes the rows of `w` in place by plane rotations and returns the
/// accumulated rotation, stored transposed (`k × k`, row `i` is column `i` of V).
fn orthogonalize_rows<T: Real>(w: &mut Mat<T>) -> Mat<T> {
    let k = w.rows();
    let len = w.cols();
    let mut vt = Mat::<T>::identity(k);
    let eps = T::epsilon();
    let data = w.as_mut_slice();
    let vdata = vt.as_mut_slice();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..k {
            for j in (i + 1)..k {
                let (mut alpha, mut beta, mut gamma) = (T::zero(), T::zero(), T::zero());
                for l in 0..len {
                    let a = data[i * len + l];
                    let b = data[j * len + l];
                    alpha += a * a;
                    beta += b * b;
                    gamma += a * b;
                }
                if gamma == T::zero() || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (gamma + gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                for l in 0..len {
                    let a = data[i * len + l];
                    let b = data[j * len + l];
                    data[i * len + l] = c * a - s * b;
                    data[j * len + l] = s * a + c * b;
                }
                for l in 0..k {
                    let a = vdata[i * k + l];
                    let b = vdata[j * k + l];
                    vdata[i * k + l] = c * a - s * b;
                    vdata[j * k + l] = s * a + c * b;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    vt
}

pub fn svd<T: Real>(a: &Mat<T>) -> Svd<T> {
    let (m, n) = a.shape();
    let tall = m >= n;
    // Rows of `w` are the columns being orthogonalized.
    let mut w = if tall { a.transpose() } else { a.clone() };
    let vt = orthogonalize_rows(&mut w);
    let k = w.rows();
    let len = w.cols();

    let norms: Vec<T> = (0..k)
        .map(|i| w.row(i).iter().map(|&x| x * x).sum::<T>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap_or(std::cmp::Ordering::Equal));

    // left: normalized orthogonalized rows (len-dimensional); right: rotation columns (k-dimensional)
    let mut left = Mat::<T>::zeros(len, k);
    let mut right = Mat::<T>::zeros(k, k);
    let mut s = Vec::with_capacity(k);
    for (col, &idx) in order.iter().enumerate() {
        let sigma = norms[idx];
        s.push(sigma);
        if sigma > T::zero() {
            for l in 0..len {
                left[(l, col)] = w[(idx, l)] / sigma;
            }
        }
        for l in 0..k {
            right[(l, col)] = vt[(idx, l)];
        }
    }

    if tall {
        Svd { u: left, s, v: right }
    } else {
        Svd { u: right, s, v: left }
    }
}

/// Moore–Penrose pseudo-inverse, discarding singular values below `rcond * s_max`.
pub fn pinv<T: Real>(a: &Mat<T>, rcond: T) -> Mat<T> {
    let Svd { u, s, v } = svd(a);
    let cutoff = rcond * s.first().copied().unwrap_or(T::zero());
    let (m, n) = a.shape();
    let mut out = Mat::<T>::zeros(n, m);
    for (k, &sigma) in s.iter().enumerate() {
        if sigma <= cutoff || sigma == T::zero() {
            continue;
        }
        let inv = T::one() / sigma;
        for i in 0..n {
            let vik = v[(i, k)] * inv;
            if vik == T::zero() {
                continue;
            }
            for j in 0..m {
                out[(i, j)] += vik * u[(j, k)];
            }
        }
    }
    out
}

/// Real embedding `[[Re, -Im], [Im, Re]]` of a complex matrix.
fn embed<T: Real>(a: &Mat<Complex<T>>) -> Mat<T> {
    let (m, n) = a.shape();
    Mat::from_fn(2 * m, 2 * n, |i, j| {
        let z = a[(i % m, j % n)];
        match (i < m, j < n) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    })
}

/// Complex pseudo-inverse computed through the real embedding, which maps the
/// Moore–Penrose inverse of `A` onto the Moore–Penrose inverse of its embedding.
pub fn pinv_complex<T: Real>(a: &Mat<Complex<T>>, rcond: T) -> Mat<Complex<T>> {
    let (m, n) = a.shape();
    let p = pinv(&embed(a), rcond);
    Mat::from_fn(n, m, |i, j| Complex::new(p[(i, j)], p[(i + n, j)]))
}

/// 2-norm condition number of a complex matrix (`inf` when singular).
pub fn complex_condition<T: Real>(a: &Mat<Complex<T>>) -> T {
    let s = svd(&embed(a)).s;
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > T::zero() => hi / lo,
        _ => T::infinity(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(m: usize, n: usize, seed: u64) -> Mat<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mat::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0))
    }

    fn check_svd(a: &Mat<f64>) {
        let Svd { u, s, v } = svd(a);
        let k = a.rows().min(a.cols());
        assert_eq!(s.len(), k);
        assert!(s.windows(2).all(|w| w[0] >= w[1]));
        let us = Mat::from_fn(u.rows(), k, |i, j| u[(i, j)] * s[j]);
        let rec = us.matmul_t(&v);
        assert!(rec.sub(a).max_abs() < 1e-12, "reconstruction");
        let vtv = v.t_matmul(&v);
        assert!(vtv.sub(&Mat::identity(k)).max_abs() < 1e-12);
        let utu = u.t_matmul(&u);
        assert!(utu.sub(&Mat::identity(k)).max_abs() < 1e-12);
    }

    #[test]
    fn tall_wide_square() {
        check_svd(&random(7, 3, 1));
        check_svd(&random(3, 40, 2));
        check_svd(&random(5, 5, 3));
        check_svd(&random(1, 1, 4));
    }

    #[test]
    fn known_singular_values() {
        let a: Mat<f64> = Mat::from_rows(&[[3.0, 0.0], [0.0, -4.0], [0.0, 0.0]]);
        let s = svd(&a).s;
        assert!((s[0] - 4.0).abs() < 1e-15 && (s[1] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn rank_deficient_has_zero_sigma() {
        let a = Mat::from_rows(&[[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]]);
        let s = svd(&a).s;
        assert!(s[1] < 1e-14 * s[0]);
    }

    #[test]
    fn pinv_penrose_conditions() {
        let a = random(6, 4, 9);
        let p = pinv(&a, 1e-12);
        let apa = a.matmul(&p).matmul(&a);
        assert!(apa.sub(&a).max_abs() < 1e-12);
        let pap = p.matmul(&a).matmul(&p);
        assert!(pap.sub(&p).max_abs() < 1e-12);
    }

    #[test]
    fn complex_pinv_left_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = Mat::from_fn(6, 3, |_, _| {
            Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        let p = pinv_complex(&a, 1e-12);
        let pa = p.matmul(&a);
        let id = Mat::<Complex<f64>>::identity(3);
        for i in 0..3 {
            for j in 0..3 {
                assert!((pa[(i, j)] - id[(i, j)]).norm() < 1e-12);
            }
        }
        assert!(complex_condition(&a).is_finite());
    }
}

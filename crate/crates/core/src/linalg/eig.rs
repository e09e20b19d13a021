//! Eigen-decomposition of small real matrices through the complex Schur form.
//!
//! The matrix is reduced to upper Hessenberg form with Householder reflectors,
//! driven to upper triangular form by single-shift QR sweeps with Givens
//! rotations, and eigenvectors are recovered by back substitution on the
//! triangular factor.

use num_traits::Zero;

use super::{Complex, Mat};
use crate::{Error, Real, Result};

/// Eigenvalues with unit-norm eigenvectors stored as columns.
#[derive(Clone, Debug)]
pub struct Eigen<T> {
    pub values: Vec<Complex<T>>,
    pub vectors: Mat<Complex<T>>,
}

fn hessenberg<T: Real>(a: &mut Mat<Complex<T>>, q: &mut Mat<Complex<T>>) {
    let n = a.rows();
    for k in 0..n.saturating_sub(2) {
        let norm = (k + 1..n).map(|i| a[(i, k)].norm_sqr()).sum::<T>().sqrt();
        if norm == T::zero() {
            continue;
        }
        let x0 = a[(k + 1, k)];
        let phase = if x0.norm() == T::zero() {
            Complex::new(T::one(), T::zero())
        } else {
            x0 / x0.norm()
        };
        let alpha = -phase * norm;
        let mut v: Vec<Complex<T>> = (k + 1..n).map(|i| a[(i, k)]).collect();
        v[0] -= alpha;
        let vnorm = v.iter().map(|z| z.norm_sqr()).sum::<T>().sqrt();
        if vnorm == T::zero() {
            continue;
        }
        for z in &mut v {
            *z = *z / vnorm;
        }
        let two = T::lit(2.0);
        // A <- H A, rows k+1..n
        for j in 0..n {
            let mut dot = Complex::<T>::zero();
            for (idx, i) in (k + 1..n).enumerate() {
                dot += v[idx].conj() * a[(i, j)];
            }
            for (idx, i) in (k + 1..n).enumerate() {
                a[(i, j)] -= v[idx] * dot * two;
            }
        }
        // A <- A H and Q <- Q H, columns k+1..n
        for m in [&mut *a, &mut *q] {
            for i in 0..n {
                let mut dot = Complex::<T>::zero();
                for (idx, j) in (k + 1..n).enumerate() {
                    dot += m[(i, j)] * v[idx];
                }
                for (idx, j) in (k + 1..n).enumerate() {
                    m[(i, j)] -= dot * v[idx].conj() * two;
                }
            }
        }
        for i in k + 2..n {
            a[(i, k)] = Complex::zero();
        }
    }
}

fn wilkinson_shift<T: Real>(
    a: Complex<T>,
    b: Complex<T>,
    c: Complex<T>,
    d: Complex<T>,
) -> Complex<T> {
    let half = T::lit(0.5);
    let mean = (a + d) * half;
    let diff = (a - d) * half;
    let disc = (diff * diff + b * c).sqrt();
    let l1 = mean + disc;
    let l2 = mean - disc;
    if (l1 - d).norm() <= (l2 - d).norm() {
        l1
    } else {
        l2
    }
}

/// Complex Schur form `A = Z T Z^*`; returns `(T, Z)`.
fn schur<T: Real>(a: &Mat<T>) -> Result<(Mat<Complex<T>>, Mat<Complex<T>>)> {
    let n = a.rows();
    let mut h = a.to_complex();
    let mut z = Mat::<Complex<T>>::identity(n);
    hessenberg(&mut h, &mut z);

    let eps = T::epsilon();
    let mut hi = n.saturating_sub(1);
    let mut iter = 0usize;
    let mut total = 0usize;
    let budget = 100 * n.max(1);

    while hi > 0 {
        let mut lo = hi;
        while lo > 0 {
            let scale = h[(lo - 1, lo - 1)].norm() + h[(lo, lo)].norm();
            let scale = if scale == T::zero() { T::one() } else { scale };
            if h[(lo, lo - 1)].norm() <= eps * scale {
                h[(lo, lo - 1)] = Complex::zero();
                break;
            }
            lo -= 1;
        }
        if lo == hi {
            hi -= 1;
            iter = 0;
            continue;
        }

        iter += 1;
        total += 1;
        if total > budget {
            return Err(Error::Numeric(
                "QR iteration did not converge in eigen-decomposition".into(),
            ));
        }

        let mut mu = wilkinson_shift(
            h[(hi - 1, hi - 1)],
            h[(hi - 1, hi)],
            h[(hi, hi - 1)],
            h[(hi, hi)],
        );
        if iter % 11 == 10 {
            // exceptional shift to break cycles
            mu = h[(hi, hi)] + Complex::new(h[(hi, hi - 1)].norm() * T::lit(0.75), T::zero());
        }

        for k in lo..=hi {
            h[(k, k)] -= mu;
        }
        let mut rotations = Vec::with_capacity(hi - lo);
        for k in lo..hi {
            let x = h[(k, k)];
            let y = h[(k + 1, k)];
            let r = (x.norm_sqr() + y.norm_sqr()).sqrt();
            let (c, s) = if r == T::zero() {
                (Complex::new(T::one(), T::zero()), Complex::zero())
            } else {
                (x / r, y / r)
            };
            // rows k, k+1 <- [[c*, s*], [-s, c]] rows
            for j in k..n {
                let p = h[(k, j)];
                let q = h[(k + 1, j)];
                h[(k, j)] = c.conj() * p + s.conj() * q;
                h[(k + 1, j)] = -s * p + c * q;
            }
            rotations.push((c, s));
        }
        for (idx, &(c, s)) in rotations.iter().enumerate() {
            let k = lo + idx;
            // columns k, k+1 <- columns * G^*
            let top = (k + 2).min(hi) + 1;
            for i in 0..top {
                let p = h[(i, k)];
                let q = h[(i, k + 1)];
                h[(i, k)] = p * c + q * s;
                h[(i, k + 1)] = -p * s.conj() + q * c.conj();
            }
            for i in 0..n {
                let p = z[(i, k)];
                let q = z[(i, k + 1)];
                z[(i, k)] = p * c + q * s;
                z[(i, k + 1)] = -p * s.conj() + q * c.conj();
            }
        }
        for k in lo..=hi {
            h[(k, k)] += mu;
        }
    }
    for i in 0..n {
        for j in 0..i {
            h[(i, j)] = Complex::zero();
        }
    }
    Ok((h, z))
}

/// Eigenvalues and right eigenvectors of a real square matrix.
pub fn eig<T: Real>(a: &Mat<T>) -> Result<Eigen<T>> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::Shape(format!(
            "eigen-decomposition needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if !a.is_finite() {
        return Err(Error::Numeric("non-finite matrix entry".into()));
    }
    let (t, z) = schur(a)?;
    let values: Vec<Complex<T>> = (0..n).map(|i| t[(i, i)]).collect();
    let tnorm = t.as_slice().iter().fold(T::zero(), |m, v| m.max(v.norm()));
    let smin = (T::epsilon() * tnorm).max(T::min_positive_value());

    let mut vectors = Mat::<Complex<T>>::zeros(n, n);
    let mut y = vec![Complex::<T>::zero(); n];
    for k in 0..n {
        for v in y.iter_mut() {
            *v = Complex::zero();
        }
        y[k] = Complex::new(T::one(), T::zero());
        for i in (0..k).rev() {
            let mut s = Complex::<T>::zero();
            for j in i + 1..=k {
                s += t[(i, j)] * y[j];
            }
            let mut d = t[(i, i)] - t[(k, k)];
            if d.norm() < smin {
                d = Complex::new(smin, T::zero());
            }
            y[i] = -s / d;
        }
        let mut col: Vec<Complex<T>> = (0..n)
            .map(|i| (0..=k).fold(Complex::zero(), |acc, j| acc + z[(i, j)] * y[j]))
            .collect();
        let norm = col.iter().map(|c| c.norm_sqr()).sum::<T>().sqrt();
        if norm > T::zero() {
            for c in &mut col {
                *c = *c / norm;
            }
        }
        for i in 0..n {
            vectors[(i, k)] = col[i];
        }
    }
    Ok(Eigen { values, vectors })
}

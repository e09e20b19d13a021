//! Banded solves for the implicit time steppers.

use crate::{Error, Real, Result};

/// Solves a tridiagonal system with sub-diagonal `a` (`a[0]` unused),
/// diagonal `b`, and super-diagonal `c` (`c[n-1]` unused).
pub fn solve_tridiagonal<T: Real>(a: &[T], b: &[T], c: &[T], d: &[T]) -> Result<Vec<T>> {
    let n = b.len();
    if a.len() != n || c.len() != n || d.len() != n {
        return Err(Error::Shape("tridiagonal bands differ in length".into()));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut cp = vec![T::zero(); n];
    let mut dp = vec![T::zero(); n];
    let mut piv = b[0];
    for i in 0..n {
        if i > 0 {
            piv = b[i] - a[i] * cp[i - 1];
        }
        if piv == T::zero() || !piv.is_finite() {
            return Err(Error::Numeric(format!("zero pivot in tridiagonal solve at row {i}")));
        }
        cp[i] = if i + 1 < n { c[i] / piv } else { T::zero() };
        dp[i] = if i == 0 { d[0] / piv } else { (d[i] - a[i] * dp[i - 1]) / piv };
    }
    let mut x = dp;
    for i in (0..n.saturating_sub(1)).rev() {
        let next = x[i + 1];
        x[i] -= cp[i] * next;
    }
    Ok(x)
}

/// Solves a cyclic tridiagonal system. `a[0]` is the entry at (0, n-1) and
/// `c[n-1]` the entry at (n-1, 0). Uses the Sherman-Morrison correction.
pub fn solve_cyclic<T: Real>(a: &[T], b: &[T], c: &[T], d: &[T]) -> Result<Vec<T>> {
    let n = b.len();
    if a.len() != n || c.len() != n || d.len() != n {
        return Err(Error::Shape("tridiagonal bands differ in length".into()));
    }
    if n < 3 {
        return Err(Error::Shape(format!("cyclic solve needs n >= 3, got {n}")));
    }
    let alpha = c[n - 1];
    let beta = a[0];
    let gamma = -b[0];
    let mut bb = b.to_vec();
    bb[0] = b[0] - gamma;
    bb[n - 1] = b[n - 1] - alpha * beta / gamma;
    let x = solve_tridiagonal(a, &bb, c, d)?;
    let mut u = vec![T::zero(); n];
    u[0] = gamma;
    u[n - 1] = alpha;
    let z = solve_tridiagonal(a, &bb, c, &u)?;
    let fact = (x[0] + beta * x[n - 1] / gamma) / (T::one() + z[0] + beta * z[n - 1] / gamma);
    Ok(x.iter().zip(&z).map(|(&xi, &zi)| xi - fact * zi).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn dense(a: &[f64], b: &[f64], c: &[f64], cyclic: bool) -> Vec<Vec<f64>> {
        let n = b.len();
        let mut m = vec![vec![0.0; n]; n];
        for i in 0..n {
            m[i][i] = b[i];
            if i > 0 {
                m[i][i - 1] = a[i];
            }
            if i + 1 < n {
                m[i][i + 1] = c[i];
            }
        }
        if cyclic {
            m[0][n - 1] = a[0];
            m[n - 1][0] = c[n - 1];
        }
        m
    }

    fn residual(m: &[Vec<f64>], x: &[f64], d: &[f64]) -> f64 {
        m.iter()
            .zip(d)
            .map(|(row, di)| (row.iter().zip(x).map(|(r, v)| r * v).sum::<f64>() - di).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn random_diagonally_dominant_systems() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for n in 3..12 {
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let c: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(2.5..4.0)).collect();
            let d: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = solve_tridiagonal(&a, &b, &c, &d).unwrap();
            assert!(residual(&dense(&a, &b, &c, false), &x, &d) < 1e-13);
            let x = solve_cyclic(&a, &b, &c, &d).unwrap();
            assert!(residual(&dense(&a, &b, &c, true), &x, &d) < 1e-13);
        }
    }

    #[test]
    fn degenerate_inputs() {
        assert!(solve_tridiagonal::<f64>(&[0.0], &[0.0], &[0.0], &[1.0]).is_err());
        assert!(solve_cyclic::<f64>(&[0.0; 2], &[1.0; 2], &[0.0; 2], &[1.0; 2]).is_err());
        assert!(solve_tridiagonal::<f64>(&[0.0], &[1.0, 2.0], &[0.0], &[1.0]).is_err());
        assert_eq!(solve_tridiagonal::<f64>(&[], &[], &[], &[]).unwrap(), Vec::<f64>::new());
    }
}

//! Dynamic mode decomposition on observable space.
//!
//! Snapshot matrices are column-oriented: column `j` of `X` is `g(x_j)` and
//! column `j` of `Y` is `g(x_{j+1})`. A fitted [`DmdModel`] predicts
//! `g(x_k) ≈ Re(Φ Λ^k b)`.

use std::io::{BufRead, Write};

use num_traits::One;

use crate::linalg::{complex_condition, eig, pinv, pinv_complex, svd, Complex, Mat};
use crate::textio::LineReader;
use crate::{Error, Real, Result};

/// Singular values below this fraction of the largest count as zero.
pub const RANK_TOL: f64 = 1e-12;
/// Eigenvector condition number above which the spectrum is reported as near-defective.
pub const EIGVEC_COND_WARN: f64 = 1e8;
/// Relative imaginary residual above which a prediction is reported as inconsistent.
pub const IMAG_WARN: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotPair<T> {
    x: Mat<T>,
    y: Mat<T>,
}

impl<T: Real> SnapshotPair<T> {
    pub fn new(x: Mat<T>, y: Mat<T>) -> Result<Self> {
        if x.shape() != y.shape() {
            return Err(Error::Shape(format!(
                "snapshot matrices differ: {:?} vs {:?}",
                x.shape(),
                y.shape()
            )));
        }
        if x.rows() == 0 || x.cols() == 0 {
            return Err(Error::Shape("empty snapshot matrices".into()));
        }
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::Numeric("non-finite snapshot entry".into()));
        }
        Ok(Self { x, y })
    }

    /// Builds the pair from a trajectory stored one time step per row.
    pub fn from_rows(traj: &Mat<T>) -> Result<Self> {
        if traj.rows() < 2 {
            return Err(Error::Shape(format!(
                "a trajectory needs at least 2 snapshots, got {}",
                traj.rows()
            )));
        }
        let p = traj.rows() - 1;
        Self::new(traj.slice_rows(0, p).transpose(), traj.slice_rows(1, p + 1).transpose())
    }

    pub fn x(&self) -> &Mat<T> {
        &self.x
    }

    pub fn y(&self) -> &Mat<T> {
        &self.y
    }

    /// Observable dimension `n`.
    pub fn dim(&self) -> usize {
        self.x.rows()
    }

    /// Number of snapshot pairs `p`.
    pub fn len(&self) -> usize {
        self.x.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.x.cols() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DmdModel<T> {
    phi: Mat<Complex<T>>,
    phi_pinv: Mat<Complex<T>>,
    lambda: Vec<Complex<T>>,
    b: Vec<Complex<T>>,
    sigma: Vec<T>,
    eigvec_condition: T,
}

/// Orders eigenvalue indices by descending modulus, ties by ascending argument.
pub fn spectrum_order<T: Real>(values: &[Complex<T>]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].norm().partial_cmp(&values[a].norm()).unwrap_or(std::cmp::Ordering::Equal));
    // Moduli of a conjugate pair agree only up to rounding, so near-equal
    // moduli form one tie group ordered by argument.
    let tol = T::lit(1e-10);
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() {
            let (hi, lo) = (values[idx[end - 1]].norm(), values[idx[end]].norm());
            if hi - lo > tol * hi.max(T::one()) {
                break;
            }
            end += 1;
        }
        idx[start..end].sort_by(|&a, &b| {
            values[a]
                .arg()
                .partial_cmp(&values[b].arg())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        start = end;
    }
    idx
}

pub fn sort_spectrum<T: Real>(values: &[Complex<T>]) -> Vec<Complex<T>> {
    spectrum_order(values).into_iter().map(|i| values[i]).collect()
}

struct Reduced<T> {
    sigma: Vec<T>,
    u: Mat<T>,
    /// `Y V_r Σ_r⁻¹`
    yvs: Mat<T>,
    v: Mat<T>,
}

fn reduce<T: Real>(pair: &SnapshotPair<T>, r: usize) -> Result<Reduced<T>> {
    let (n, p) = (pair.dim(), pair.len());
    if r == 0 || r > n.min(p) {
        return Err(Error::InvalidConfig(format!("rank {r} outside 1..={}", n.min(p))));
    }
    let dec = svd(pair.x());
    let s1 = dec.s[0];
    let sr = dec.s[r - 1];
    let ratio = if s1 > T::zero() { sr / s1 } else { T::zero() };
    if !(ratio > T::lit(RANK_TOL)) {
        return Err(Error::RankDeficient {
            rank: r,
            ratio: ratio.as_f64(),
        });
    }
    let u = dec.u.slice_cols(0, r);
    let v = dec.v.slice_cols(0, r);
    let sigma = dec.s[..r].to_vec();
    let yv = pair.y().matmul(&v);
    let yvs = Mat::from_fn(n, r, |i, j| yv[(i, j)] / sigma[j]);
    Ok(Reduced { sigma, u, yvs, v })
}

/// Fits a rank-`r` DMD model to the snapshot pair.
pub fn fit_dmd<T: Real>(pair: &SnapshotPair<T>, r: usize) -> Result<DmdModel<T>> {
    let red = reduce(pair, r)?;
    let k_tilde = red.u.t_matmul(&red.yvs);
    let dec = eig(&k_tilde)?;
    let order = spectrum_order(&dec.values);
    let lambda: Vec<Complex<T>> = order.iter().map(|&i| dec.values[i]).collect();
    let w = Mat::from_fn(r, r, |i, j| dec.vectors[(i, order[j])]);
    let eigvec_condition = complex_condition(&w);
    if eigvec_condition.as_f64() > EIGVEC_COND_WARN {
        log::warn!(
            "DMD operator is near-defective: eigenvector condition {:.3e}",
            eigvec_condition.as_f64()
        );
    }
    let phi = red.yvs.to_complex().matmul(&w);
    let phi_pinv = pinv_complex(&phi, T::lit(RANK_TOL));
    let g0: Vec<Complex<T>> = pair.x().col(0).into_iter().map(|v| Complex::new(v, T::zero())).collect();
    let b = phi_pinv.matvec(&g0);
    let model = DmdModel {
        phi,
        phi_pinv,
        lambda,
        b,
        sigma: red.sigma,
        eigvec_condition,
    };
    if !model.is_finite() {
        return Err(Error::Numeric("DMD factors are not finite".into()));
    }
    Ok(model)
}

/// `‖Y − A_r X‖_F` for the rank-`r` operator `A_r = Y V_r Σ_r⁻¹ U_rᵀ`,
/// which equals `‖Y (I − V_r V_rᵀ)‖_F`.
pub fn fit_residual<T: Real>(pair: &SnapshotPair<T>, r: usize) -> Result<T> {
    let red = reduce(pair, r)?;
    let proj = pair.y().matmul(&red.v).matmul_t(&red.v);
    Ok(pair.y().sub(&proj).frobenius_norm())
}

/// Eigenvalues of the explicitly formed `Y X†`, sorted like [`fit_dmd`].
pub fn dense_dmd_oracle<T: Real>(pair: &SnapshotPair<T>) -> Result<Vec<Complex<T>>> {
    let n = pair.dim();
    let s = svd(pair.x()).s;
    let rank = s.iter().filter(|&&v| v > T::lit(RANK_TOL) * s[0]).count();
    if rank < n {
        let ratio = if s[0] > T::zero() { s[n.min(s.len()) - 1] / s[0] } else { T::zero() };
        return Err(Error::RankDeficient {
            rank: n,
            ratio: ratio.as_f64(),
        });
    }
    let k = pair.y().matmul(&pinv(pair.x(), T::lit(RANK_TOL)));
    Ok(sort_spectrum(&eig(&k)?.values))
}

impl<T: Real> DmdModel<T> {
    /// Assembles a model from its factors; `Φ†` is recomputed.
    pub fn from_parts(phi: Mat<Complex<T>>, lambda: Vec<Complex<T>>, b: Vec<Complex<T>>, sigma: Vec<T>) -> Result<Self> {
        let r = lambda.len();
        if phi.cols() != r || b.len() != r || sigma.len() != r {
            return Err(Error::Shape(format!(
                "inconsistent DMD factors: Φ {:?}, |Λ| {}, |b| {}, |σ| {}",
                phi.shape(),
                r,
                b.len(),
                sigma.len()
            )));
        }
        let phi_pinv = pinv_complex(&phi, T::lit(RANK_TOL));
        Ok(Self {
            phi,
            phi_pinv,
            lambda,
            b,
            sigma,
            eigvec_condition: T::nan(),
        })
    }

    pub fn rank(&self) -> usize {
        self.lambda.len()
    }

    pub fn dim(&self) -> usize {
        self.phi.rows()
    }

    pub fn modes(&self) -> &Mat<Complex<T>> {
        &self.phi
    }

    pub fn eigenvalues(&self) -> &[Complex<T>] {
        &self.lambda
    }

    pub fn amplitudes(&self) -> &[Complex<T>] {
        &self.b
    }

    pub fn singular_values(&self) -> &[T] {
        &self.sigma
    }

    /// 2-norm condition number of the eigenvector matrix of `K̃` (NaN for reloaded models).
    pub fn eigvec_condition(&self) -> T {
        self.eigvec_condition
    }

    fn is_finite(&self) -> bool {
        let ok = |z: &Complex<T>| z.re.is_finite() && z.im.is_finite();
        self.phi.as_slice().iter().all(ok)
            && self.phi_pinv.as_slice().iter().all(ok)
            && self.lambda.iter().all(ok)
            && self.b.iter().all(ok)
    }

    fn lambda_pow(&self, k: usize) -> Vec<Complex<T>> {
        self.lambda.iter().map(|l| l.powu(k as u32)).collect()
    }

    /// `Φ Λ^k c` without taking the real part.
    pub fn evolve_complex(&self, coeffs: &[Complex<T>], k: usize) -> Vec<Complex<T>> {
        let scaled: Vec<Complex<T>> = self.lambda_pow(k).iter().zip(coeffs).map(|(l, c)| l * c).collect();
        self.phi.matvec(&scaled)
    }

    /// `Re(Φ Λ^k b)`, warning when the discarded imaginary part is not negligible.
    pub fn predict(&self, k: usize) -> Vec<T> {
        real_part(self.evolve_complex(&self.b, k))
    }

    /// Predictions for `k = 0..=steps`, one per row.
    pub fn predict_range(&self, steps: usize) -> Mat<T> {
        let rows: Vec<Vec<T>> = (0..=steps).map(|k| self.predict(k)).collect();
        Mat::from_rows(&rows)
    }

    /// `Re(Φ Λ^k Φ† g0)`: propagates an arbitrary initial observable.
    pub fn propagate(&self, g0: &[T], k: usize) -> Result<Vec<T>> {
        if g0.len() != self.dim() {
            return Err(Error::Shape(format!(
                "initial observable has {} entries, expected {}",
                g0.len(),
                self.dim()
            )));
        }
        let g: Vec<Complex<T>> = g0.iter().map(|&v| Complex::new(v, T::zero())).collect();
        let c = self.phi_pinv.matvec(&g);
        Ok(real_part(self.evolve_complex(&c, k)))
    }

    /// Real `n × n` matrices `Re(Φ Λ^k Φ†)` for `k = 0..=steps`.
    pub fn propagators(&self, steps: usize) -> Vec<Mat<T>> {
        let (n, r) = (self.dim(), self.rank());
        let mut pow = vec![Complex::<T>::one(); r];
        let mut out = Vec::with_capacity(steps + 1);
        for _ in 0..=steps {
            let scaled = Mat::from_fn(n, r, |i, j| self.phi[(i, j)] * pow[j]);
            out.push(scaled.matmul(&self.phi_pinv).map(|z| z.re));
            for (p, l) in pow.iter_mut().zip(&self.lambda) {
                *p = *p * l;
            }
        }
        out
    }

    /// `f(Re(Φ Λ^k b))`: predicted state through an inverse observable map.
    pub fn reconstruct_state<F>(&self, inverse: F, k: usize) -> Result<Vec<T>>
    where
        F: Fn(&[T]) -> Result<Vec<T>>,
    {
        inverse(&self.predict(k))
    }

    pub fn write_text<W: Write>(&self, w: &mut W) -> Result<()> {
        let c = |z: &Complex<T>| format!("{:.16e} {:.16e}", z.re, z.im);
        writeln!(w, "{DMD_HEADER}")?;
        writeln!(w, "dim {}", self.dim())?;
        writeln!(w, "rank {}", self.rank())?;
        let sig: Vec<String> = self.sigma.iter().map(|s| format!("{s:.16e}")).collect();
        writeln!(w, "sigma {}", sig.join(" "))?;
        writeln!(w, "lambda")?;
        for l in &self.lambda {
            writeln!(w, "{}", c(l))?;
        }
        writeln!(w, "phi")?;
        for i in 0..self.dim() {
            let row: Vec<String> = self.phi.row(i).iter().map(c).collect();
            writeln!(w, "{}", row.join(" "))?;
        }
        writeln!(w, "b")?;
        for v in &self.b {
            writeln!(w, "{}", c(v))?;
        }
        writeln!(w, "end")?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_text(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("model text is ASCII")
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut r = LineReader::new(r);
        let header = r.line()?;
        if header != DMD_HEADER {
            return Err(r.err(format!("unsupported model header `{header}`")));
        }
        let n: usize = r.keyed_one("dim")?;
        let rank: usize = r.keyed_one("rank")?;
        let sigma: Vec<T> = r
            .keyed("sigma")?
            .iter()
            .map(|t| r.parse(t))
            .collect::<Result<_>>()?;
        let pairs = |v: Vec<T>| -> Vec<Complex<T>> { v.chunks(2).map(|c| Complex::new(c[0], c[1])).collect() };
        r.keyed("lambda")?;
        let mut lambda = Vec::with_capacity(rank);
        for _ in 0..rank {
            lambda.extend(pairs(r.values(2)?));
        }
        r.keyed("phi")?;
        let mut phi = Vec::with_capacity(n * rank);
        for _ in 0..n {
            phi.extend(pairs(r.values(2 * rank)?));
        }
        r.keyed("b")?;
        let mut b = Vec::with_capacity(rank);
        for _ in 0..rank {
            b.extend(pairs(r.values(2)?));
        }
        r.keyed("end")?;
        Self::from_parts(Mat::from_vec(n, rank, phi), lambda, b, sigma)
    }

    pub fn from_text(s: &str) -> Result<Self> {
        Self::read_text(s.as_bytes())
    }
}

const DMD_HEADER: &str = "koopman-flow-dmd 1";

fn real_part<T: Real>(v: Vec<Complex<T>>) -> Vec<T> {
    let re: T = v.iter().map(|z| z.re * z.re).sum::<T>().sqrt();
    let im: T = v.iter().map(|z| z.im * z.im).sum::<T>().sqrt();
    if im > T::lit(IMAG_WARN) * re && im > T::zero() {
        log::warn!(
            "DMD prediction has imaginary residual {:.3e} against real norm {:.3e}",
            im.as_f64(),
            re.as_f64()
        );
    }
    v.into_iter().map(|z| z.re).collect()
}

#[cfg(test)]
mod tests;

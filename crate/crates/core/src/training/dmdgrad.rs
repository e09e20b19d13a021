//! DMD prediction as a differentiable function of the observable trajectory.
//!
//! With `X = U S Vᵀ` truncated to rank `r`, `B = Y V_r S_r⁻¹` and
//! `Ã = U_rᵀ B`, the exact DMD modes are `Φ = B W` where `Ã W = W Λ`. Hence
//! `Φ Λ^t Φ† = B Ã^t B†` whenever `Ã` is diagonalizable and `B` has full
//! column rank, so the prediction `ĝ_t = B Ã^t B† g_0` is real and its
//! derivative only needs the SVD, which has a closed-form adjoint.

use crate::linalg::{pinv, svd, Mat};
use crate::{Error, Real, Result};

/// Forward intermediates kept for the adjoint.
pub(crate) struct DmdTrace<T> {
    n: usize,
    steps: usize,
    rank: usize,
    y: Mat<T>,
    u: Mat<T>,
    s: Vec<T>,
    v: Mat<T>,
    b: Mat<T>,
    a: Mat<T>,
    bp: Mat<T>,
    btb_inv: Mat<T>,
    g0: Vec<T>,
    /// `c_t = Ã^t B† g_0` for `t = 0..=steps`.
    c: Vec<Vec<T>>,
}

fn outer_add<T: Real>(m: &mut Mat<T>, a: &[T], b: &[T]) {
    for (i, &ai) in a.iter().enumerate() {
        if ai != T::zero() {
            for (o, &bj) in m.row_mut(i).iter_mut().zip(b) {
                *o += ai * bj;
            }
        }
    }
}

fn t_matvec<T: Real>(m: &Mat<T>, x: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); m.cols()];
    for (i, &xi) in x.iter().enumerate() {
        for (o, &w) in out.iter_mut().zip(m.row(i)) {
            *o += xi * w;
        }
    }
    out
}

/// `g` holds the observables with time along rows. Returns the predictions
/// for `t = 1..=steps` as rows.
pub(crate) fn dmd_predict<T: Real>(g: &Mat<T>, rank: usize) -> Result<(Mat<T>, DmdTrace<T>)> {
    let (rows, n) = g.shape();
    if rows < 2 {
        return Err(Error::Shape("need at least 2 snapshots".into()));
    }
    let steps = rows - 1;
    let x = g.slice_rows(0, steps).transpose();
    let y = g.slice_rows(1, rows).transpose();
    let k = n.min(steps);
    if rank == 0 || rank > k {
        return Err(Error::InvalidConfig(format!("rank {rank} outside 1..={k}")));
    }
    let sv = svd(&x);
    let s1 = sv.s[0];
    let sr = sv.s[rank - 1];
    let tol = T::lit(crate::dmd::RANK_TOL);
    if !(s1 > T::zero()) || !(sr > tol * s1) {
        return Err(Error::RankDeficient {
            rank,
            ratio: if s1 > T::zero() { (sr / s1).as_f64() } else { 0.0 },
        });
    }
    let ur = sv.u.slice_cols(0, rank);
    let vr = sv.v.slice_cols(0, rank);
    let mut b = y.matmul(&vr);
    for i in 0..n {
        for (j, o) in b.row_mut(i).iter_mut().enumerate() {
            *o = *o / sv.s[j];
        }
    }
    let a = ur.t_matmul(&b);
    let btb_inv = pinv(&b.t_matmul(&b), T::epsilon());
    let bp = btb_inv.matmul_t(&b);
    let g0 = g.row(0).to_vec();
    let mut c = Vec::with_capacity(rows);
    c.push(bp.matvec(&g0));
    for t in 1..rows {
        let next = a.matvec(&c[t - 1]);
        c.push(next);
    }
    let mut out = Mat::zeros(steps, n);
    for t in 1..rows {
        let row = b.matvec(&c[t]);
        out.row_mut(t - 1).copy_from_slice(&row);
    }
    Ok((
        out,
        DmdTrace {
            n,
            steps,
            rank,
            y,
            u: sv.u,
            s: sv.s,
            v: sv.v,
            b,
            a,
            bp,
            btb_inv,
            g0,
            c,
        },
    ))
}

impl<T: Real> DmdTrace<T> {
    /// Adjoint of [`dmd_predict`]: maps `∂L/∂ĝ` (steps × n) to `∂L/∂g`
    /// ((steps + 1) × n).
    pub(crate) fn backward(&self, grad: &Mat<T>) -> Mat<T> {
        let (n, steps, r) = (self.n, self.steps, self.rank);
        let mut bbar = Mat::zeros(n, r);
        let mut cbar = vec![vec![T::zero(); r]; steps + 1];
        for t in 1..=steps {
            let gt = grad.row(t - 1);
            outer_add(&mut bbar, gt, &self.c[t]);
            cbar[t] = t_matvec(&self.b, gt);
        }
        // c_t = Ã c_{t-1}
        let mut abar = Mat::zeros(r, r);
        let mut lam = vec![T::zero(); r];
        for t in (1..=steps).rev() {
            let carried = t_matvec(&self.a, &lam);
            lam = cbar[t].iter().zip(&carried).map(|(&p, &q)| p + q).collect();
            outer_add(&mut abar, &lam, &self.c[t - 1]);
        }
        let c0bar = t_matvec(&self.a, &lam);
        // c_0 = B† g_0
        let mut bpbar = Mat::zeros(r, n);
        outer_add(&mut bpbar, &c0bar, &self.g0);
        let g0bar = t_matvec(&self.bp, &c0bar);
        // B† = (BᵀB)⁻¹ Bᵀ for full column rank B.
        let bpt = self.bp.transpose();
        let proj = Mat::identity(n).sub(&self.b.matmul(&self.bp));
        bbar = bbar
            .sub(&bpt.matmul(&bpbar).matmul(&bpt))
            .add(&proj.matmul_t(&bpbar).matmul(&self.btb_inv));
        // Ã = U_rᵀ B
        let k = self.s.len();
        let mut ubar = Mat::zeros(n, k);
        let ub = self.b.matmul_t(&abar);
        for i in 0..n {
            ubar.row_mut(i)[..r].copy_from_slice(ub.row(i));
        }
        let ur = self.u.slice_cols(0, r);
        bbar = bbar.add(&ur.matmul(&abar));
        // B = Y V_r S_r⁻¹
        let vr = self.v.slice_cols(0, r);
        let mut bbar_s = bbar.clone();
        for i in 0..n {
            for (j, o) in bbar_s.row_mut(i).iter_mut().enumerate() {
                *o = *o / self.s[j];
            }
        }
        let ybar = bbar_s.matmul_t(&vr);
        let vb = self.y.t_matmul(&bbar_s);
        let mut vbar = Mat::zeros(self.v.rows(), k);
        for i in 0..vbar.rows() {
            vbar.row_mut(i)[..r].copy_from_slice(vb.row(i));
        }
        let yv = self.y.matmul(&vr);
        let mut sbar = vec![T::zero(); k];
        for (j, sb) in sbar.iter_mut().enumerate().take(r) {
            let dot: T = (0..n).map(|i| yv[(i, j)] * bbar[(i, j)]).sum();
            *sb = -dot / (self.s[j] * self.s[j]);
        }
        let xbar = svd_adjoint(&self.u, &self.s, &self.v, &ubar, &sbar, &vbar);

        let mut out = Mat::zeros(steps + 1, n);
        for t in 0..steps {
            for i in 0..n {
                out[(t, i)] += xbar[(i, t)];
                out[(t + 1, i)] += ybar[(i, t)];
            }
        }
        for (o, &v) in out.row_mut(0).iter_mut().zip(&g0bar) {
            *o += v;
        }
        out
    }
}

/// Adjoint of the thin SVD `X = U diag(s) Vᵀ` for distinct, nonzero singular
/// values. Pairs with a vanishing gap contribute nothing.
fn svd_adjoint<T: Real>(u: &Mat<T>, s: &[T], v: &Mat<T>, ubar: &Mat<T>, sbar: &[T], vbar: &Mat<T>) -> Mat<T> {
    let k = s.len();
    let s1 = s[0];
    let gap_tol = T::epsilon() * s1 * s1 * T::lit(16.0);
    let f = Mat::from_fn(k, k, |i, j| {
        let d = s[j] * s[j] - s[i] * s[i];
        if i == j || d.abs() <= gap_tol {
            T::zero()
        } else {
            T::one() / d
        }
    });
    let utu = u.t_matmul(ubar);
    let vtv = v.t_matmul(vbar);
    let mut inner = Mat::from_fn(k, k, |i, j| {
        let jm = f[(i, j)] * (utu[(i, j)] - utu[(j, i)]) * s[j];
        let km = s[i] * f[(i, j)] * (vtv[(i, j)] - vtv[(j, i)]);
        jm + km
    });
    for i in 0..k {
        inner[(i, i)] += sbar[i];
    }
    let mut x = u.matmul(&inner).matmul_t(v);
    let inv = |i: usize| if s[i] > T::zero() { T::one() / s[i] } else { T::zero() };
    // (I − U Uᵀ) Ū S⁻¹ Vᵀ, nonzero only when U is not square.
    if u.rows() > k {
        let mut us = ubar.sub(&u.matmul(&utu));
        for i in 0..us.rows() {
            for (j, o) in us.row_mut(i).iter_mut().enumerate() {
                *o = *o * inv(j);
            }
        }
        x = x.add(&us.matmul_t(v));
    }
    // U S⁻¹ V̄ᵀ (I − V Vᵀ), nonzero only when V is not square.
    if v.rows() > k {
        let mut vs = vbar.sub(&v.matmul(&vtv));
        for i in 0..vs.rows() {
            for (j, o) in vs.row_mut(i).iter_mut().enumerate() {
                *o = *o * inv(j);
            }
        }
        x = x.add(&u.matmul_t(&vs));
    }
    x
}

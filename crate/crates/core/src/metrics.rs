//! Reconstruction error metrics.
//!
//! Trajectories are stored one time step per row; row 0 is the initial state
//! and is excluded from every metric.

use std::io::Write;
use std::path::Path;

use crate::linalg::Mat;
use crate::{Error, Real, Result};

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("vectors have lengths {a} and {b}")));
    }
    Ok(())
}

fn sq_dist<T: Real>(xhat: &[T], x: &[T]) -> T {
    xhat.iter().zip(x).map(|(&a, &b)| (a - b) * (a - b)).sum()
}

fn sq_norm<T: Real>(x: &[T]) -> T {
    x.iter().map(|&v| v * v).sum()
}

/// Relative L2 error `‖x̂ − x‖ / ‖x‖`.
pub fn rl2e<T: Real>(xhat: &[T], x: &[T]) -> Result<T> {
    check_len(xhat.len(), x.len())?;
    let den = sq_norm(x);
    if den == T::zero() {
        return Err(Error::UndefinedReference);
    }
    Ok((sq_dist(xhat, x) / den).sqrt())
}

/// Mean squared error `‖x̂ − x‖² / m`.
pub fn mse<T: Real>(xhat: &[T], x: &[T]) -> Result<T> {
    check_len(xhat.len(), x.len())?;
    if x.is_empty() {
        return Err(Error::Shape("empty vectors".into()));
    }
    Ok(sq_dist(xhat, x) / T::from_usize(x.len()).unwrap())
}

fn check_traj<T: Real>(xhat: &Mat<T>, x: &Mat<T>) -> Result<()> {
    if xhat.shape() != x.shape() {
        return Err(Error::Shape(format!(
            "trajectories differ in shape: {:?} vs {:?}",
            xhat.shape(),
            x.shape()
        )));
    }
    if x.rows() < 2 {
        return Err(Error::Shape("a trajectory needs at least 2 snapshots".into()));
    }
    Ok(())
}

/// Total relative L2 error over rows `1..=T`.
pub fn trl2e<T: Real>(xhat: &Mat<T>, x: &Mat<T>) -> Result<T> {
    check_traj(xhat, x)?;
    let (mut num, mut den) = (T::zero(), T::zero());
    for t in 1..x.rows() {
        num += sq_dist(xhat.row(t), x.row(t));
        den += sq_norm(x.row(t));
    }
    if den == T::zero() {
        return Err(Error::UndefinedReference);
    }
    Ok((num / den).sqrt())
}

/// Per-step and total errors of one reconstructed trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorReport<T> {
    pub sample: usize,
    pub method: String,
    /// Entry `i` is the error at `t = i + 1`.
    pub rl2e: Vec<T>,
    pub mse: Vec<T>,
    pub trl2e: T,
}

impl<T: Real> ErrorReport<T> {
    pub fn new(sample: usize, method: &str, xhat: &Mat<T>, x: &Mat<T>) -> Result<Self> {
        check_traj(xhat, x)?;
        let mut r = Vec::with_capacity(x.rows() - 1);
        let mut m = Vec::with_capacity(x.rows() - 1);
        for t in 1..x.rows() {
            r.push(rl2e(xhat.row(t), x.row(t))?);
            m.push(mse(xhat.row(t), x.row(t))?);
        }
        Ok(Self {
            sample,
            method: method.to_string(),
            rl2e: r,
            mse: m,
            trl2e: trl2e(xhat, x)?,
        })
    }
}

/// Writes `sample_id,method,t,rl2e,mse` rows for every report.
pub fn write_report_csv<T: Real, W: Write>(reports: &[ErrorReport<T>], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["sample_id", "method", "t", "rl2e", "mse"])?;
    for rep in reports {
        for (i, (r, m)) in rep.rl2e.iter().zip(&rep.mse).enumerate() {
            out.write_record([
                rep.sample.to_string(),
                rep.method.clone(),
                (i + 1).to_string(),
                format!("{r:e}"),
                format!("{m:e}"),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Writes `sample_id,method,trl2e` rows.
pub fn write_summary_csv<T: Real, W: Write>(reports: &[ErrorReport<T>], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["sample_id", "method", "trl2e"])?;
    for rep in reports {
        out.write_record([rep.sample.to_string(), rep.method.clone(), format!("{:e}", rep.trl2e)])?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_reports<T: Real>(reports: &[ErrorReport<T>], report: &Path, summary: &Path) -> Result<()> {
    write_report_csv(reports, std::fs::File::create(report)?)?;
    write_summary_csv(reports, std::fs::File::create(summary)?)?;
    Ok(())
}

/// Mean TRL2E per method, in first-appearance order.
pub fn mean_trl2e<T: Real>(reports: &[ErrorReport<T>]) -> Vec<(String, T)> {
    let mut acc: Vec<(String, T, usize)> = Vec::new();
    for rep in reports {
        match acc.iter_mut().find(|(m, _, _)| *m == rep.method) {
            Some(e) => {
                e.1 += rep.trl2e;
                e.2 += 1;
            }
            None => acc.push((rep.method.clone(), rep.trl2e, 1)),
        }
    }
    acc.into_iter()
        .map(|(m, s, n)| (m, s / T::from_usize(n).unwrap()))
        .collect()
}

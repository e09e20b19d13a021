//! Linearity and reconstruction losses on one trajectory.
//!
//! With observables `G = g(X)` and a DMD model fit to `G`, the one-step-ahead
//! predictions are `ĝ_t = Re(Φ Λ^t Φ† g(x_0))`. Then
//! `L_linear = Σ_t ‖g(x_t) − ĝ_t‖²` and `L_rec = Σ_t ‖x_t − f(ĝ_t)‖²`, both
//! over `t = 1..=T`. Under [`DmdGradient::Frozen`] the DMD factors are held
//! constant when differentiating and gradients reach the parameters through
//! `g(x_t)`, `g(x_0)` and `f` only; [`DmdGradient::Through`] also
//! differentiates the fit itself.

use super::dmdgrad::dmd_predict;
use crate::dmd::{fit_dmd, DmdModel, SnapshotPair};
use crate::flows::{FlowNetwork, FlowVars};
use crate::linalg::Mat;
use crate::nn::{Tape, Var};
use crate::{Error, Real, Result};

/// How the DMD fit enters the parameter gradient.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DmdGradient {
    /// Φ, Λ and b are constants.
    Frozen,
    /// The prediction is differentiated through the SVD of the snapshots.
    #[default]
    Through,
}

impl DmdGradient {
    pub fn name(self) -> &'static str {
        match self {
            DmdGradient::Frozen => "frozen",
            DmdGradient::Through => "through",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "frozen" => Ok(DmdGradient::Frozen),
            "through" => Ok(DmdGradient::Through),
            other => Err(Error::InvalidConfig(format!(
                "unknown DMD gradient mode `{other}` (expected frozen or through)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts<T> {
    pub linear: T,
    pub rec: T,
    pub total: T,
}

struct Recorded<T> {
    linear: Var,
    rec: Var,
    total: Var,
    model: DmdModel<T>,
}

fn check_states<T: Real>(flow: &FlowNetwork<T>, states: &Mat<T>) -> Result<()> {
    if states.cols() != flow.dim() {
        return Err(Error::Shape(format!(
            "trajectory has dimension {}, flow expects {}",
            states.cols(),
            flow.dim()
        )));
    }
    if states.rows() < 2 {
        return Err(Error::Shape("a trajectory needs at least 2 snapshots".into()));
    }
    Ok(())
}

/// Fits a rank-`r` DMD model to the observables `g(states)`.
pub fn fit_observable_dmd<T: Real>(flow: &FlowNetwork<T>, states: &Mat<T>, rank: usize) -> Result<DmdModel<T>> {
    check_states(flow, states)?;
    let g = flow.forward_batch(states)?;
    fit_dmd(&SnapshotPair::from_rows(&g)?, rank)
}

/// Records both losses. When `model` is `None` a DMD model is fit to the
/// current observables; a given model is always treated as frozen.
#[allow(clippy::too_many_arguments)]
fn record<'p, T: Real>(
    tape: &mut Tape<'p, T>,
    flow: &FlowNetwork<T>,
    vars: &FlowVars,
    states: &Mat<T>,
    model: Option<&DmdModel<T>>,
    rank: usize,
    alpha: T,
    mode: DmdGradient,
) -> Result<Recorded<T>> {
    check_states(flow, states)?;
    let (steps, m) = (states.rows() - 1, states.cols());
    let x = tape.constant(states.clone());
    let g = flow.forward_on(tape, vars, x)?;
    let model_given = model;
    let model = match model {
        Some(md) => {
            if md.dim() != m {
                return Err(Error::Shape(format!("DMD model has dimension {}, expected {m}", md.dim())));
            }
            md.clone()
        }
        None => fit_dmd(&SnapshotPair::from_rows(tape.value(g))?, rank)?,
    };
    let through = mode == DmdGradient::Through && model_given.is_none();
    let ghat = if through {
        let (value, trace) = dmd_predict(tape.value(g), rank)?;
        tape.custom(g, value, Box::new(move |grad: &Mat<T>| trace.backward(grad)))
    } else {
        frozen_prediction(tape, g, &model, steps, m)
    };
    let gt = tape.slice_rows(g, 1, steps + 1);
    let lin_diff = tape.sub(gt, ghat);
    let linear = tape.sum_squares(lin_diff);
    let xhat = flow.inverse_on(tape, vars, ghat)?;
    let xt = tape.constant(states.slice_rows(1, steps + 1));
    let rec_diff = tape.sub(xt, xhat);
    let rec = tape.sum_squares(rec_diff);
    let weighted = tape.scale(rec, alpha);
    let total = tape.add(linear, weighted);
    Ok(Recorded {
        linear,
        rec,
        total,
        model,
    })
}

/// `ĝ_t = Re(Φ Λ^t Φ†) g_0` with the model's factors as constants.
fn frozen_prediction<'p, T: Real>(tape: &mut Tape<'p, T>, g: Var, model: &DmdModel<T>, steps: usize, m: usize) -> Var {
    let ops = model.propagators(steps);
    let g0 = tape.slice_rows(g, 0, 1);
    let g0v = tape.value(g0).as_slice().to_vec();
    let value = Mat::from_fn(steps, m, |t, j| {
        let op = &ops[t + 1];
        (0..m).map(|i| op[(j, i)] * g0v[i]).sum()
    });
    tape.custom(
        g0,
        value,
        Box::new(move |grad: &Mat<T>| {
            let mut out = vec![T::zero(); m];
            for t in 0..steps {
                let op = &ops[t + 1];
                for j in 0..m {
                    let gj = grad[(t, j)];
                    if gj != T::zero() {
                        for (o, &w) in out.iter_mut().zip(op.row(j)) {
                            *o += gj * w;
                        }
                    }
                }
            }
            Mat::from_vec(1, m, out)
        }),
    )
}

fn parts<T: Real>(tape: &Tape<'_, T>, r: &Recorded<T>) -> LossParts<T> {
    let s = |v: Var| tape.value(v)[(0, 0)];
    LossParts {
        linear: s(r.linear),
        rec: s(r.rec),
        total: s(r.total),
    }
}

/// Loss values with DMD fit to the current observables.
pub fn trajectory_losses<T: Real>(
    flow: &FlowNetwork<T>,
    states: &Mat<T>,
    rank: usize,
    alpha: T,
) -> Result<(LossParts<T>, DmdModel<T>)> {
    let mut tape = Tape::new();
    let vars = flow.register(&mut tape);
    let r = record(&mut tape, flow, &vars, states, None, rank, alpha, DmdGradient::Frozen)?;
    Ok((parts(&tape, &r), r.model))
}

/// Loss values under a fixed DMD model.
pub fn frozen_losses<T: Real>(flow: &FlowNetwork<T>, states: &Mat<T>, model: &DmdModel<T>, alpha: T) -> Result<LossParts<T>> {
    let mut tape = Tape::new();
    let vars = flow.register(&mut tape);
    let r = record(&mut tape, flow, &vars, states, Some(model), model.rank(), alpha, DmdGradient::Frozen)?;
    Ok(parts(&tape, &r))
}

/// Losses and parameter gradients (in [`FlowNetwork::params`] order). DMD is
/// fit to the current observables unless `model` is given, in which case its
/// factors are constants and `mode` is ignored.
pub fn losses_and_gradients<T: Real>(
    flow: &FlowNetwork<T>,
    states: &Mat<T>,
    model: Option<&DmdModel<T>>,
    rank: usize,
    alpha: T,
    mode: DmdGradient,
) -> Result<(LossParts<T>, Vec<Mat<T>>, DmdModel<T>)> {
    let mut tape = Tape::new();
    let vars = flow.register(&mut tape);
    let r = record(&mut tape, flow, &vars, states, model, rank, alpha, mode)?;
    let grads = tape.backward(r.total)?;
    let g = FlowNetwork::<T>::param_vars(&vars).iter().map(|&v| grads.get(v)).collect();
    Ok((parts(&tape, &r), g, r.model))
}

/// `Σ_t ‖g(x_t) − Re(Φ Λ^t Φ† g(x_0))‖²` with DMD fit on this trajectory.
pub fn linearity_loss<T: Real>(flow: &FlowNetwork<T>, states: &Mat<T>, rank: usize) -> Result<(T, DmdModel<T>)> {
    let (p, model) = trajectory_losses(flow, states, rank, T::zero())?;
    Ok((p.linear, model))
}

/// `Σ_t ‖x_t − f(Re(Φ Λ^t b))‖²` for a model fit to this trajectory.
pub fn reconstruction_loss<T: Real>(flow: &FlowNetwork<T>, states: &Mat<T>, model: &DmdModel<T>) -> Result<T> {
    check_states(flow, states)?;
    let steps = states.rows() - 1;
    let pred = model.predict_range(steps);
    let xhat = flow.inverse_batch(&pred.slice_rows(1, steps + 1))?;
    Ok(xhat.sub(&states.slice_rows(1, steps + 1)).as_slice().iter().map(|&v| v * v).sum())
}

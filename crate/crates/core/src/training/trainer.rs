//! Adam training of a flow against the linearity + reconstruction objective.

use std::io::Write;

use super::loss::{losses_and_gradients, trajectory_losses, DmdGradient, LossParts};
use crate::dmd::DmdModel;
use crate::flows::{CouplingKind, FlowNetwork, FlowSpec};
use crate::linalg::Mat;
use crate::metrics::ErrorReport;
use crate::nn::{Adam, AdamConfig, PlateauConfig, PlateauScheduler};
use crate::systems::{Dataset, Trajectory};
use crate::{Error, ErrorKind, Real, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct FlowDmdConfig<T> {
    pub network: FlowSpec,
    /// Weight of the reconstruction loss.
    pub alpha: T,
    /// DMD rank.
    pub rank: usize,
    pub gradient: DmdGradient,
    pub adam: AdamConfig<T>,
    pub scheduler: PlateauConfig<T>,
    /// Rescales each trajectory's gradient to at most this Euclidean norm.
    pub clip_norm: Option<T>,
    pub max_epochs: usize,
    /// Epochs without a new best validation loss before stopping.
    pub early_stop: usize,
    pub seed: u64,
}

impl<T: Real> FlowDmdConfig<T> {
    pub fn new(network: FlowSpec, rank: usize) -> Self {
        Self {
            network,
            alpha: T::one(),
            rank,
            gradient: DmdGradient::default(),
            adam: AdamConfig::default(),
            scheduler: PlateauConfig {
                patience: 50,
                ..PlateauConfig::default()
            },
            clip_norm: Some(T::one()),
            max_epochs: 3000,
            early_stop: 200,
            seed: 0,
        }
    }

    /// Affine flow of depth 3 with one hidden layer of 8, rank 2.
    pub fn fixed_point() -> Self {
        Self::new(FlowSpec::new(2, CouplingKind::Affine, 3, vec![8]), 2)
    }

    /// Residual flow of depth 3 with one hidden layer of 40, rank 3.
    pub fn burgers() -> Self {
        Self::new(FlowSpec::new(30, CouplingKind::Residual, 3, vec![40]), 3)
    }

    /// Residual flow of depth 3 with one hidden layer of 20, rank 3.
    pub fn allen_cahn() -> Self {
        Self::new(FlowSpec::new(20, CouplingKind::Residual, 3, vec![20]), 3)
    }

    pub fn for_system(name: &str) -> Result<Self> {
        match name {
            "fixed_point" => Ok(Self::fixed_point()),
            "burgers" => Ok(Self::burgers()),
            "allen_cahn" => Ok(Self::allen_cahn()),
            other => Err(Error::InvalidConfig(format!("no default configuration for system `{other}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.alpha >= T::zero()) || !self.alpha.is_finite() {
            return bad(format!("alpha must be finite and non-negative, got {}", self.alpha));
        }
        if self.rank == 0 {
            return bad("rank must be at least 1".into());
        }
        if self.network.depth == 0 {
            return bad("network depth must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if self.early_stop == 0 {
            return bad("early_stop must be at least 1".into());
        }
        if !(self.adam.lr > T::zero()) {
            return bad(format!("learning rate must be positive, got {}", self.adam.lr));
        }
        if let Some(c) = self.clip_norm {
            if !(c > T::zero()) || !c.is_finite() {
                return bad(format!("clip_norm must be finite and positive, got {c}"));
            }
        }
        self.network.flip_pattern()?;
        Ok(())
    }
}

/// Per-epoch means over trajectories.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistoryRow<T> {
    pub epoch: usize,
    pub linear: T,
    pub rec: T,
    pub total: T,
    pub val_total: T,
    pub lr: T,
}

pub fn write_history_csv<T: Real, W: Write>(history: &[HistoryRow<T>], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["epoch", "l_linear", "l_rec", "total", "val_total", "lr"])?;
    for h in history {
        out.write_record([
            h.epoch.to_string(),
            format!("{:e}", h.linear),
            format!("{:e}", h.rec),
            format!("{:e}", h.total),
            format!("{:e}", h.val_total),
            format!("{:e}", h.lr),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Everything needed to continue a run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T> {
    /// Epochs completed.
    pub epoch: usize,
    pub net: FlowNetwork<T>,
    pub best: FlowNetwork<T>,
    pub best_val: T,
    pub best_epoch: usize,
    pub since_best: usize,
    pub adam: Adam<T>,
    pub scheduler: PlateauScheduler<T>,
    pub history: Vec<HistoryRow<T>>,
}

impl<T: Real> TrainState<T> {
    pub fn init(config: &FlowDmdConfig<T>) -> Result<Self> {
        config.validate()?;
        let net = FlowNetwork::xavier(&config.network, config.seed)?;
        let adam = Adam::new(config.adam, &net.params());
        Ok(Self {
            epoch: 0,
            best: net.clone(),
            net,
            best_val: T::infinity(),
            best_epoch: 0,
            since_best: 0,
            adam,
            scheduler: PlateauScheduler::new(config.adam.lr, config.scheduler),
            history: Vec::new(),
        })
    }
}

fn diverged(epoch: usize, e: Error) -> Error {
    match e {
        Error::Divergence { .. } => e,
        e if e.kind() == ErrorKind::Numeric => Error::Divergence {
            epoch,
            reason: e.to_string(),
        },
        e => e,
    }
}

fn clip<T: Real>(grads: &mut [Mat<T>], max: T) {
    let norm = grads
        .iter()
        .flat_map(|g| g.as_slice())
        .map(|&v| v * v)
        .sum::<T>()
        .sqrt();
    if norm > max {
        let k = max / norm;
        for g in grads.iter_mut() {
            for v in g.as_mut_slice() {
                *v = *v * k;
            }
        }
    }
}

fn mean<T: Real>(sum: T, n: usize) -> T {
    sum / T::lit(n as f64)
}

pub struct Trainer<'d, T: Real> {
    config: FlowDmdConfig<T>,
    train: &'d [Trajectory<T>],
    validation: &'d [Trajectory<T>],
    state: TrainState<T>,
}

impl<'d, T: Real> Trainer<'d, T> {
    pub fn new(config: FlowDmdConfig<T>, dataset: &'d Dataset<T>) -> Result<Self> {
        let state = TrainState::init(&config)?;
        Self::resume(config, dataset, state)
    }

    pub fn resume(config: FlowDmdConfig<T>, dataset: &'d Dataset<T>, state: TrainState<T>) -> Result<Self> {
        config.validate()?;
        Self::from_slices(config, &dataset.train, &dataset.validation, state)
    }

    /// Trains on `train`; `validation` may be empty, in which case the
    /// training loss drives scheduling and early stopping.
    pub fn from_slices(
        config: FlowDmdConfig<T>,
        train: &'d [Trajectory<T>],
        validation: &'d [Trajectory<T>],
        state: TrainState<T>,
    ) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::InvalidConfig("no training trajectories".into()));
        }
        let m = config.network.dim;
        for t in train.iter().chain(validation) {
            if t.dim() != m {
                return Err(Error::Shape(format!(
                    "sample {} has dimension {}, network expects {m}",
                    t.sample,
                    t.dim()
                )));
            }
            if config.rank > m.min(t.steps()) {
                return Err(Error::InvalidConfig(format!(
                    "rank {} exceeds min(dim, steps) = {} for sample {}",
                    config.rank,
                    m.min(t.steps()),
                    t.sample
                )));
            }
        }
        if state.net.dim() != m {
            return Err(Error::Shape(format!("state network has dimension {}, expected {m}", state.net.dim())));
        }
        Ok(Self {
            config,
            train,
            validation,
            state,
        })
    }

    pub fn config(&self) -> &FlowDmdConfig<T> {
        &self.config
    }

    pub fn state(&self) -> &TrainState<T> {
        &self.state
    }

    pub fn into_state(self) -> TrainState<T> {
        self.state
    }

    pub fn finished(&self) -> bool {
        self.state.epoch >= self.config.max_epochs || self.state.since_best >= self.config.early_stop
    }

    fn mean_losses(&self, net: &FlowNetwork<T>, set: &[Trajectory<T>]) -> Result<LossParts<T>> {
        let mut acc = LossParts {
            linear: T::zero(),
            rec: T::zero(),
            total: T::zero(),
        };
        for t in set {
            let (p, _) = trajectory_losses(net, &t.states, self.config.rank, self.config.alpha)?;
            acc.linear += p.linear;
            acc.rec += p.rec;
            acc.total += p.total;
        }
        let n = set.len();
        Ok(LossParts {
            linear: mean(acc.linear, n),
            rec: mean(acc.rec, n),
            total: mean(acc.total, n),
        })
    }

    /// Runs one epoch: one Adam step per training trajectory, then validation.
    pub fn step_epoch(&mut self) -> Result<HistoryRow<T>> {
        let epoch = self.state.epoch + 1;
        self.run_epoch(epoch).map_err(|e| diverged(epoch, e))
    }

    fn run_epoch(&mut self, epoch: usize) -> Result<HistoryRow<T>> {
        let (rank, alpha, mode) = (self.config.rank, self.config.alpha, self.config.gradient);
        let mut sum = [T::zero(); 3];
        for t in self.train {
            let (p, mut grads, _) = losses_and_gradients(&self.state.net, &t.states, None, rank, alpha, mode)?;
            if !p.total.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    reason: format!("non-finite loss on sample {}", t.sample),
                });
            }
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    reason: format!("non-finite gradient on sample {}", t.sample),
                });
            }
            if let Some(c) = self.config.clip_norm {
                clip(&mut grads, c);
            }
            sum[0] += p.linear;
            sum[1] += p.rec;
            sum[2] += p.total;
            self.state.adam.step(&mut self.state.net.params_mut(), &grads)?;
        }
        let val = if self.validation.is_empty() {
            self.mean_losses(&self.state.net, self.train)?
        } else {
            self.mean_losses(&self.state.net, self.validation)?
        };
        if !val.total.is_finite() {
            return Err(Error::Divergence {
                epoch,
                reason: "non-finite validation loss".into(),
            });
        }
        let lr_used = self.state.adam.lr();
        let lr = self.state.scheduler.step(val.total);
        self.state.adam.set_lr(lr);
        let n = self.train.len();
        let row = HistoryRow {
            epoch,
            linear: mean(sum[0], n),
            rec: mean(sum[1], n),
            total: mean(sum[2], n),
            val_total: val.total,
            lr: lr_used,
        };
        self.state.history.push(row);
        self.state.epoch = epoch;
        if val.total < self.state.best_val {
            self.state.best_val = val.total;
            self.state.best_epoch = epoch;
            self.state.best = self.state.net.clone();
            self.state.since_best = 0;
        } else {
            self.state.since_best += 1;
        }
        Ok(row)
    }

    /// Trains until the epoch budget or patience runs out. `on_epoch` sees the
    /// state after every epoch and may abort by returning an error.
    pub fn run_with<F>(&mut self, mut on_epoch: F) -> Result<()>
    where
        F: FnMut(&TrainState<T>) -> Result<()>,
    {
        while !self.finished() {
            let row = self.step_epoch()?;
            log::debug!(
                "epoch {} total {:e} val {:e} lr {:e}",
                row.epoch,
                row.total,
                row.val_total,
                row.lr
            );
            on_epoch(&self.state)?;
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<()> {
        self.run_with(|_| Ok(()))
    }

    /// The best-validation network with DMD models for every training trajectory.
    pub fn into_model(self) -> Result<TrainedModel<T>> {
        let rank = self.config.rank;
        let dmd = self
            .train
            .iter()
            .map(|t| super::loss::fit_observable_dmd(&self.state.best, &t.states, rank))
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainedModel {
            flow: self.state.best,
            rank,
            dmd,
            history: self.state.history,
            best_epoch: self.state.best_epoch,
        })
    }
}

/// Trains a flow from the configured seed and returns the best-validation model.
pub fn train_flowdmd<T: Real>(config: &FlowDmdConfig<T>, dataset: &Dataset<T>) -> Result<TrainedModel<T>> {
    let mut trainer = Trainer::new(config.clone(), dataset)?;
    trainer.run()?;
    trainer.into_model()
}

#[derive(Clone, Debug)]
pub struct TrainedModel<T> {
    pub flow: FlowNetwork<T>,
    pub rank: usize,
    /// DMD fit on the observables of each training trajectory, in dataset order.
    pub dmd: Vec<DmdModel<T>>,
    pub history: Vec<HistoryRow<T>>,
    pub best_epoch: usize,
}

impl<T: Real> TrainedModel<T> {
    pub fn from_flow(flow: FlowNetwork<T>, rank: usize) -> Self {
        Self {
            flow,
            rank,
            dmd: Vec::new(),
            history: Vec::new(),
            best_epoch: 0,
        }
    }

    /// Fits DMD to `g(states)`, predicts from `g(x_0)` and maps back through
    /// the inverse flow. Row 0 of the result is `f(g(x_0))`.
    pub fn reconstruct(&self, states: &Mat<T>) -> Result<Mat<T>> {
        let model = super::loss::fit_observable_dmd(&self.flow, states, self.rank)?;
        let pred = model.predict_range(states.rows() - 1);
        self.flow.inverse_batch(&pred)
    }

    pub fn evaluate(&self, set: &[Trajectory<T>]) -> Result<Vec<ErrorReport<T>>> {
        set.iter()
            .map(|t| {
                let xhat = self.reconstruct(&t.states)?;
                ErrorReport::new(t.sample, "flowdmd", &xhat, &t.states)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_caps_global_norm() {
        let mut g = vec![Mat::from_rows(&[[3.0f64, 0.0]]), Mat::from_rows(&[[0.0], [4.0]])];
        clip(&mut g, 1.0);
        assert!((g[0][(0, 0)] - 0.6).abs() < 1e-15);
        assert!((g[1][(1, 0)] - 0.8).abs() < 1e-15);
        let before = g.clone();
        clip(&mut g, 2.0);
        assert_eq!(g, before);
    }
}

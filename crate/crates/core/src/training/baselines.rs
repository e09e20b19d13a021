//! Exact DMD on raw states, and a plain autoencoder for comparison.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dmd::{fit_dmd, SnapshotPair};
use crate::linalg::Mat;
use crate::metrics::ErrorReport;
use crate::nn::{Activation, Adam, AdamConfig, Fnn, Tape};
use crate::systems::{Dataset, Trajectory};
use crate::{Error, Real, Result};

/// Rank-`r` DMD on the states themselves; row `k` is `Re(Φ Λ^k b)`.
pub fn exact_dmd_reconstruction<T: Real>(states: &Mat<T>, rank: usize) -> Result<Mat<T>> {
    let model = fit_dmd(&SnapshotPair::from_rows(states)?, rank)?;
    Ok(model.predict_range(states.rows() - 1))
}

pub fn exact_dmd_baseline<T: Real>(set: &[Trajectory<T>], rank: usize) -> Result<Vec<ErrorReport<T>>> {
    set.iter()
        .map(|t| {
            let xhat = exact_dmd_reconstruction(&t.states, rank)?;
            ErrorReport::new(t.sample, "exact_dmd", &xhat, &t.states)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct AeConfig<T> {
    pub encoder: Vec<usize>,
    pub decoder: Vec<usize>,
    pub activation: Activation,
    pub adam: AdamConfig<T>,
    pub epochs: usize,
    pub batch_size: usize,
    /// Points in each out-of-distribution test set.
    pub probe_points: usize,
    pub seed: u64,
}

impl<T: Real> Default for AeConfig<T> {
    fn default() -> Self {
        Self {
            encoder: vec![2, 10, 10, 3],
            decoder: vec![3, 10, 10, 2],
            activation: Activation::Relu,
            adam: AdamConfig::default(),
            epochs: 400,
            batch_size: 64,
            probe_points: 500,
            seed: 0,
        }
    }
}

impl<T: Real> AeConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let (e, d) = (&self.encoder, &self.decoder);
        if e.len() < 2 || d.len() < 2 {
            return Err(Error::InvalidConfig("encoder and decoder need at least two widths".into()));
        }
        if e[e.len() - 1] != d[0] {
            return Err(Error::InvalidConfig(format!(
                "encoder output {} does not match decoder input {}",
                e[e.len() - 1],
                d[0]
            )));
        }
        if e[0] != d[d.len() - 1] {
            return Err(Error::InvalidConfig(format!(
                "encoder input {} does not match decoder output {}",
                e[0],
                d[d.len() - 1]
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Autoencoder<T> {
    pub encoder: Fnn<T>,
    pub decoder: Fnn<T>,
}

impl<T: Real> Autoencoder<T> {
    pub fn xavier(config: &AeConfig<T>) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            encoder: Fnn::xavier_with_rng(&config.encoder, config.activation, &mut rng)?,
            decoder: Fnn::xavier_with_rng(&config.decoder, config.activation, &mut rng)?,
        })
    }

    pub fn encode(&self, x: &Mat<T>) -> Result<Mat<T>> {
        self.encoder.forward_batch(x)
    }

    pub fn decode(&self, z: &Mat<T>) -> Result<Mat<T>> {
        self.decoder.forward_batch(z)
    }

    /// `D(E(x))` row by row.
    pub fn reconstruct(&self, x: &Mat<T>) -> Result<Mat<T>> {
        self.decode(&self.encode(x)?)
    }

    /// `mean_i |D(E(x_i)) - x_i|²` over a batch, and its parameter gradients
    /// (encoder first, then decoder).
    fn loss_and_gradients(&self, x: &Mat<T>) -> Result<(T, Vec<Mat<T>>)> {
        let mut tape = Tape::new();
        let ev = self.encoder.register(&mut tape);
        let dv = self.decoder.register(&mut tape);
        let xv = tape.constant(x.clone());
        let z = self.encoder.forward_on(&mut tape, &ev, xv);
        let y = self.decoder.forward_on(&mut tape, &dv, z);
        let diff = tape.sub(y, xv);
        let ss = tape.sum_squares(diff);
        let loss = tape.scale(ss, T::one() / T::lit(x.rows() as f64));
        let grads = tape.backward(loss)?;
        let g = ev
            .layers
            .iter()
            .chain(&dv.layers)
            .flat_map(|&(w, b)| [grads.get(w), grads.get(b)])
            .collect();
        Ok((tape.value(loss)[(0, 0)], g))
    }
}

/// Mean Euclidean distance between matching rows.
pub fn mean_row_error<T: Real>(a: &Mat<T>, b: &Mat<T>) -> T {
    let n = a.rows();
    let total: T = (0..n)
        .map(|i| {
            a.row(i)
                .iter()
                .zip(b.row(i))
                .map(|(&p, &q)| (p - q) * (p - q))
                .sum::<T>()
                .sqrt()
        })
        .sum();
    total / T::lit(n as f64)
}

/// The three out-of-distribution probes: `(t, sin t)`, an S-shaped curve and
/// standard normal scatter.
pub fn ood_probes<T: Real>(n: usize, seed: u64) -> (Mat<T>, Mat<T>, Mat<T>) {
    let pi = std::f64::consts::PI;
    let param = |i: usize| if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
    let sin = Mat::from_fn(n, 2, |i, j| {
        let t = -pi + 2.0 * pi * param(i);
        T::lit(if j == 0 { t } else { t.sin() })
    });
    // Two half circles of radius 1 joined at the origin.
    let s = Mat::from_fn(n, 2, |i, j| {
        let th = -1.5 * pi + 3.0 * pi * param(i);
        let v = if j == 0 { -th.sin() } else { th.signum() * (1.0 - th.cos()) };
        T::lit(v)
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Mat::from_fn(n, 2, |_, _| T::lit(StandardNormal.sample(&mut rng)));
    (sin, s, normal)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AeReport<T> {
    /// Mean `|D(E(x)) - x|` on training snapshots.
    pub train_error: T,
    /// Same on the held-out (validation and test) snapshots.
    pub in_distribution: T,
    /// Errors on the planar probes of [`ood_probes`]; only for 2-D states.
    pub sin_curve: Option<T>,
    pub s_curve: Option<T>,
    pub normal: Option<T>,
    /// Mean `|E(D(z)) - z|` at latents drawn from a normal fit to the encoded
    /// training snapshots.
    pub latent_roundtrip: T,
    pub loss_history: Vec<T>,
}

fn stack<T: Real>(set: &[Trajectory<T>]) -> Mat<T> {
    let m = set.first().map_or(0, |t| t.dim());
    let data: Vec<T> = set.iter().flat_map(|t| t.states.as_slice().iter().copied()).collect();
    Mat::from_vec(data.len() / m.max(1), m, data)
}

/// Trains `D ∘ E ≈ I` on pooled training snapshots with minibatch Adam and
/// evaluates both composition orders in and out of distribution.
pub fn train_ae_baseline<T: Real>(config: &AeConfig<T>, dataset: &Dataset<T>) -> Result<(Autoencoder<T>, AeReport<T>)> {
    let mut ae = Autoencoder::xavier(config)?;
    if dataset.train.is_empty() {
        return Err(Error::InvalidConfig("no training trajectories".into()));
    }
    let m = config.encoder[0];
    if dataset.train[0].dim() != m {
        return Err(Error::Shape(format!(
            "states have dimension {}, encoder expects {m}",
            dataset.train[0].dim()
        )));
    }
    let train = stack(&dataset.train);
    let mut adam = {
        let init: Vec<&Mat<T>> = ae.encoder.params().into_iter().chain(ae.decoder.params()).collect();
        Adam::new(config.adam, &init)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5bd1_e995);
    let mut order: Vec<usize> = (0..train.rows()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut sum = T::zero();
        for chunk in order.chunks(config.batch_size) {
            let batch = Mat::from_fn(chunk.len(), m, |i, j| train[(chunk[i], j)]);
            let (loss, grads) = ae.loss_and_gradients(&batch)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    reason: "non-finite autoencoder loss".into(),
                });
            }
            sum += loss * T::lit(chunk.len() as f64);
            let mut refs: Vec<&mut Mat<T>> = ae.encoder.params_mut().into_iter().chain(ae.decoder.params_mut()).collect();
            adam.step(&mut refs, &grads)?;
        }
        history.push(sum / T::lit(train.rows() as f64));
    }

    let held: Vec<Trajectory<T>> = dataset.validation.iter().chain(&dataset.test).cloned().collect();
    let held = if held.is_empty() { train.clone() } else { stack(&held) };
    let err = |x: &Mat<T>| -> Result<T> { Ok(mean_row_error(&ae.reconstruct(x)?, x)) };
    let (sin_curve, s_curve, normal) = if m == 2 {
        let (a, b, c) = ood_probes::<T>(config.probe_points, config.seed ^ 0x2545_f491);
        (Some(err(&a)?), Some(err(&b)?), Some(err(&c)?))
    } else {
        (None, None, None)
    };

    let latents = ae.encode(&train)?;
    let k = latents.cols();
    let n = latents.rows() as f64;
    let stats: Vec<(f64, f64)> = (0..k)
        .map(|j| {
            let col = latents.col(j);
            let mu = col.iter().map(|v| v.as_f64()).sum::<f64>() / n;
            let var = col.iter().map(|v| (v.as_f64() - mu).powi(2)).sum::<f64>() / n;
            (mu, var.sqrt())
        })
        .collect();
    let mut zr = ChaCha8Rng::seed_from_u64(config.seed ^ 0x68e3_1da4);
    let z = Mat::from_fn(config.probe_points, k, |_, j| {
        let e: f64 = StandardNormal.sample(&mut zr);
        T::lit(stats[j].0 + stats[j].1 * e)
    });
    let latent_roundtrip = mean_row_error(&ae.encode(&ae.decode(&z)?)?, &z);

    let report = AeReport {
        train_error: err(&train)?,
        in_distribution: err(&held)?,
        sin_curve,
        s_curve,
        normal,
        latent_roundtrip,
        loss_history: history,
    };
    Ok((ae, report))
}

/// Encodes the trajectory, runs rank-`r` DMD on the latents and decodes the
/// prediction.
pub fn ae_dmd_reconstruction<T: Real>(ae: &Autoencoder<T>, states: &Mat<T>, rank: usize) -> Result<Mat<T>> {
    let z = ae.encode(states)?;
    let model = fit_dmd(&SnapshotPair::from_rows(&z)?, rank)?;
    ae.decode(&model.predict_range(states.rows() - 1))
}

pub fn ae_dmd_baseline<T: Real>(ae: &Autoencoder<T>, set: &[Trajectory<T>], rank: usize) -> Result<Vec<ErrorReport<T>>> {
    set.iter()
        .map(|t| {
            let xhat = ae_dmd_reconstruction(ae, &t.states, rank)?;
            ErrorReport::new(t.sample, "ae_baseline", &xhat, &t.states)
        })
        .collect()
}

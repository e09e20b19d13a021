use crate::linalg::Mat;
use crate::{Error, Real, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Real> Default for AdamConfig<T> {
    fn default() -> Self {
        Self {
            lr: T::lit(1e-3),
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig<T>,
    m: Vec<Mat<T>>,
    v: Vec<Mat<T>>,
    step: u64,
}

impl<T: Real> Adam<T> {
    /// Fresh state with zero moments shaped like `params`.
    pub fn new(config: AdamConfig<T>, params: &[&Mat<T>]) -> Self {
        let zeros = |p: &&Mat<T>| Mat::zeros(p.rows(), p.cols());
        Self {
            config,
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
            step: 0,
        }
    }

    /// Restores a saved state.
    pub fn from_parts(config: AdamConfig<T>, m: Vec<Mat<T>>, v: Vec<Mat<T>>, step: u64) -> Result<Self> {
        if m.len() != v.len() || m.iter().zip(&v).any(|(a, b)| a.shape() != b.shape()) {
            return Err(Error::Shape("Adam moment buffers disagree".into()));
        }
        if v.iter().any(|x| x.as_slice().iter().any(|&e| e < T::zero())) {
            return Err(Error::Numeric("Adam second moment is negative".into()));
        }
        Ok(Self { config, m, v, step })
    }

    pub fn moments(&self) -> (&[Mat<T>], &[Mat<T>]) {
        (&self.m, &self.v)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn lr(&self) -> T {
        self.config.lr
    }

    pub fn set_lr(&mut self, lr: T) {
        self.config.lr = lr;
    }

    pub fn step(&mut self, params: &mut [&mut Mat<T>], grads: &[Mat<T>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "Adam tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != self.m[i].shape() || g.shape() != self.m[i].shape() {
                return Err(Error::Shape(format!("Adam tensor {i}: shape mismatch")));
            }
            if !g.is_finite() {
                return Err(Error::Numeric(format!("Adam tensor {i}: non-finite gradient")));
            }
        }

        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let k = self.step as i32;
        let bc1 = T::one() - beta1.powi(k);
        let bc2 = T::one() - beta2.powi(k);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let it = p
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice())
                .zip(m.as_mut_slice().iter_mut().zip(v.as_mut_slice().iter_mut()));
            for ((theta, &grad), (mi, vi)) in it {
                *mi = beta1 * *mi + (T::one() - beta1) * grad;
                *vi = beta2 * *vi + (T::one() - beta2) * grad * grad;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *theta -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlateauConfig<T> {
    pub factor: T,
    pub patience: usize,
    pub min_lr: T,
    /// Relative improvement required to reset the patience counter.
    pub threshold: T,
}

impl<T: Real> Default for PlateauConfig<T> {
    fn default() -> Self {
        Self {
            factor: T::lit(0.5),
            patience: 10,
            min_lr: T::lit(1e-6),
            threshold: T::lit(1e-4),
        }
    }
}

/// Reduces the learning rate when the validation loss stops improving.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauScheduler<T> {
    pub config: PlateauConfig<T>,
    lr: T,
    best: T,
    bad_epochs: usize,
}

impl<T: Real> PlateauScheduler<T> {
    pub fn new(lr: T, config: PlateauConfig<T>) -> Self {
        Self {
            config,
            lr: lr.max(config.min_lr),
            best: T::infinity(),
            bad_epochs: 0,
        }
    }

    pub fn from_parts(config: PlateauConfig<T>, lr: T, best: T, bad_epochs: usize) -> Self {
        Self { config, lr, best, bad_epochs }
    }

    pub fn lr(&self) -> T {
        self.lr
    }

    pub fn best(&self) -> T {
        self.best
    }

    pub fn bad_epochs(&self) -> usize {
        self.bad_epochs
    }

    /// Feeds one validation loss and returns the (possibly reduced) learning rate.
    pub fn step(&mut self, val_loss: T) -> T {
        if val_loss < self.best * (T::one() - self.config.threshold) {
            self.best = val_loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        if self.bad_epochs > self.config.patience {
            self.lr = (self.lr * self.config.factor).max(self.config.min_lr);
            self.bad_epochs = 0;
        }
        self.lr
    }
}

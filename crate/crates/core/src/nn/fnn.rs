use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::tape::{Tape, Var};
use crate::linalg::Mat;
use crate::{Error, Real, Result};

/// Elementwise nonlinearity applied after every hidden layer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::InvalidConfig(format!("unknown activation `{other}`"))),
        }
    }

    #[inline]
    fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }
}

/// Fully connected layer `y = W x + b`, with `W: out × in` and `b: 1 × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub weight: Mat<T>,
    pub bias: Mat<T>,
}

/// Feed-forward network; the activation is skipped after the last layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Fnn<T> {
    layers: Vec<Dense<T>>,
    activation: Activation,
}

/// Tape handles of an [`Fnn`]'s parameters, `(weight, bias)` per layer.
#[derive(Clone, Debug)]
pub struct FnnVars {
    pub layers: Vec<(Var, Var)>,
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "network needs at least an input and an output width, got {dims:?}"
        )));
    }
    if dims.contains(&0) {
        return Err(Error::InvalidConfig(format!("zero-width layer in {dims:?}")));
    }
    Ok(())
}

impl<T: Real> Fnn<T> {
    /// Xavier-normal weights (`std = sqrt(2 / (fan_in + fan_out))`) and zero biases.
    pub fn xavier(dims: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::xavier_with_rng(dims, activation, &mut rng)
    }

    pub fn xavier_with_rng(
        dims: &[usize],
        activation: Activation,
        rng: &mut impl rand::Rng,
    ) -> Result<Self> {
        check_dims(dims)?;
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("positive std");
                Dense {
                    weight: Mat::from_fn(fan_out, fan_in, |_, _| T::lit(normal.sample(rng))),
                    bias: Mat::zeros(1, fan_out),
                }
            })
            .collect();
        Ok(Self { layers, activation })
    }

    /// All parameters zero (the network is the zero map).
    pub fn zeros(dims: &[usize], activation: Activation) -> Result<Self> {
        check_dims(dims)?;
        let layers = dims
            .windows(2)
            .map(|w| Dense {
                weight: Mat::zeros(w[1], w[0]),
                bias: Mat::zeros(1, w[1]),
            })
            .collect();
        Ok(Self { layers, activation })
    }

    pub fn from_layers(layers: Vec<Dense<T>>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("network without layers".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.shape() != (1, l.weight.rows()) {
                return Err(Error::Shape(format!("layer {i}: bias does not match weight rows")));
            }
            if i > 0 && layers[i - 1].weight.rows() != l.weight.cols() {
                return Err(Error::Shape(format!("layer {i}: input width does not chain")));
            }
            if !l.weight.is_finite() || !l.bias.is_finite() {
                return Err(Error::Numeric(format!("layer {i}: non-finite parameter")));
            }
        }
        Ok(Self { layers, activation })
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    /// Layer widths `[in, hidden..., out]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(self.layers.iter().map(|l| l.weight.rows()));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.rows()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.as_slice().len())
            .sum()
    }

    pub fn params(&self) -> Vec<&Mat<T>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Mat<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "network input has {} entries, expected {}",
                x.len(),
                self.input_dim()
            )));
        }
        let last = self.layers.len() - 1;
        let mut h = x.to_vec();
        for (i, l) in self.layers.iter().enumerate() {
            let mut y = l.weight.matvec(&h);
            for (v, &b) in y.iter_mut().zip(l.bias.as_slice()) {
                *v += b;
                if i < last {
                    *v = self.activation.apply(*v);
                }
            }
            h = y;
        }
        Ok(h)
    }

    /// Row-wise evaluation of a `batch × in` matrix.
    pub fn forward_batch(&self, x: &Mat<T>) -> Result<Mat<T>> {
        if x.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "network input has {} columns, expected {}",
                x.cols(),
                self.input_dim()
            )));
        }
        let mut tape = Tape::new();
        let vars = self.register(&mut tape);
        let xv = tape.constant(x.clone());
        let y = self.forward_on(&mut tape, &vars, xv);
        Ok(tape.value(y).clone())
    }

    /// Records borrowed parameter leaves on `tape`.
    pub fn register<'p>(&'p self, tape: &mut Tape<'p, T>) -> FnnVars {
        FnnVars {
            layers: self
                .layers
                .iter()
                .map(|l| (tape.leaf(&l.weight), tape.leaf(&l.bias)))
                .collect(),
        }
    }

    /// Taped forward pass; `x` must have `input_dim` columns.
    pub fn forward_on(&self, tape: &mut Tape<'_, T>, vars: &FnnVars, x: Var) -> Var {
        let last = vars.layers.len() - 1;
        let mut h = x;
        for (i, &(w, b)) in vars.layers.iter().enumerate() {
            h = tape.linear(h, w, b);
            if i < last {
                h = match self.activation {
                    Activation::Relu => tape.relu(h),
                    Activation::Tanh => tape.tanh(h),
                    Activation::Identity => h,
                };
            }
        }
        h
    }
}

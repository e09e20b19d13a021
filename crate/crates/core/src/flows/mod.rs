//! Coupling-flow invertible networks.
//!
//! A [`CouplingLayer`] splits its input at index `q` into `z_up = z[..q]` and
//! `z_low = z[q..]`. An unflipped affine layer maps
//! `(z_up, z_low) -> (z_up, (z_low + t(z_up)) * s(z_up))`; the flipped variant
//! conditions on `z_low` and transforms `z_up`. A residual layer drops the
//! scale. Both `t` and the raw scale come from one network whose output is
//! split in half, and the scale is `exp(clamp(raw, -7, 7))`, so it is always
//! positive and bounded away from zero.
//!
//! A [`FlowNetwork`] composes layers; [`FlowNetwork::forward`] is the observable
//! map and [`FlowNetwork::inverse`] its exact inverse over the same parameters.

pub(crate) mod io;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::linalg::Mat;
use crate::nn::{Activation, Fnn, FnnVars, Tape, Var};
use crate::{Error, Real, Result};

pub use io::{read_network, write_network};

/// Bound applied to the raw scale before exponentiation.
pub const SCALE_CLAMP: f64 = 7.0;
/// Scales smaller than this are treated as singular by the inverse.
pub const MIN_SCALE: f64 = 1e-30;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CouplingKind {
    Affine,
    Residual,
}

impl CouplingKind {
    pub fn name(self) -> &'static str {
        match self {
            CouplingKind::Affine => "affine",
            CouplingKind::Residual => "residual",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "affine" | "acf" => Ok(CouplingKind::Affine),
            "residual" | "rcf" => Ok(CouplingKind::Residual),
            other => Err(Error::InvalidConfig(format!("unknown coupling kind `{other}`"))),
        }
    }
}

/// Default split index `ceil(m / 2)`.
pub fn default_split(m: usize) -> usize {
    m.div_ceil(2)
}

/// Splits `z` into `(z[..q], z[q..])`.
pub fn split<E>(z: &[E], q: usize) -> Result<(&[E], &[E])> {
    if q == 0 || q >= z.len() {
        return Err(Error::InvalidConfig(format!(
            "split index {q} outside 1..={} for dimension {}",
            z.len().saturating_sub(1),
            z.len()
        )));
    }
    Ok(z.split_at(q))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CouplingLayer<T> {
    kind: CouplingKind,
    flipped: bool,
    m: usize,
    q: usize,
    net: Fnn<T>,
}

impl<T: Real> CouplingLayer<T> {
    pub fn new(kind: CouplingKind, flipped: bool, m: usize, q: usize, net: Fnn<T>) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidConfig(format!("coupling needs dimension >= 2, got {m}")));
        }
        if q == 0 || q >= m {
            return Err(Error::InvalidConfig(format!("split index {q} outside 1..={}", m - 1)));
        }
        let (cond, active) = if flipped { (m - q, q) } else { (q, m - q) };
        let heads = match kind {
            CouplingKind::Affine => 2,
            CouplingKind::Residual => 1,
        };
        if net.input_dim() != cond || net.output_dim() != heads * active {
            return Err(Error::Shape(format!(
                "coupling network maps {} -> {}, expected {} -> {}",
                net.input_dim(),
                net.output_dim(),
                cond,
                heads * active
            )));
        }
        Ok(Self { kind, flipped, m, q, net })
    }

    /// Network widths `[cond, hidden..., heads * active]` for this layer shape.
    pub fn net_dims(kind: CouplingKind, flipped: bool, m: usize, q: usize, hidden: &[usize]) -> Vec<usize> {
        let (cond, active) = if flipped { (m - q, q) } else { (q, m - q) };
        let heads = if kind == CouplingKind::Affine { 2 } else { 1 };
        let mut dims = vec![cond];
        dims.extend_from_slice(hidden);
        dims.push(heads * active);
        dims
    }

    pub fn kind(&self) -> CouplingKind {
        self.kind
    }

    pub fn flipped(&self) -> bool {
        self.flipped
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn split_index(&self) -> usize {
        self.q
    }

    pub fn net(&self) -> &Fnn<T> {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Fnn<T> {
        &mut self.net
    }

    fn halves(&self) -> ((usize, usize), (usize, usize)) {
        // (conditioning range, active range)
        if self.flipped {
            ((self.q, self.m), (0, self.q))
        } else {
            ((0, self.q), (self.q, self.m))
        }
    }

    fn join(&self, tape: &mut Tape<'_, T>, cond: Var, active: Var) -> Var {
        if self.flipped {
            tape.concat_cols(active, cond)
        } else {
            tape.concat_cols(cond, active)
        }
    }

    /// Returns `(t, s)`; `s` is `None` for residual layers.
    fn shift_scale(&self, tape: &mut Tape<'_, T>, vars: &FnnVars, cond: Var) -> (Var, Option<Var>) {
        let h = self.net.forward_on(tape, vars, cond);
        match self.kind {
            CouplingKind::Residual => (h, None),
            CouplingKind::Affine => {
                let d = self.net.output_dim() / 2;
                let t = tape.slice_cols(h, 0, d);
                let raw = tape.slice_cols(h, d, 2 * d);
                let c = T::lit(SCALE_CLAMP);
                let clamped = tape.clamp(raw, -c, c);
                (t, Some(tape.exp(clamped)))
            }
        }
    }

    pub fn forward_on(&self, tape: &mut Tape<'_, T>, vars: &FnnVars, z: Var, index: usize) -> Result<Var> {
        let ((c0, c1), (a0, a1)) = self.halves();
        let cond = tape.slice_cols(z, c0, c1);
        let active = tape.slice_cols(z, a0, a1);
        let (t, s) = self.shift_scale(tape, vars, cond);
        let shifted = tape.add(active, t);
        let out = match s {
            Some(s) => tape.mul(shifted, s),
            None => shifted,
        };
        let y = self.join(tape, cond, out);
        if !tape.value(y).is_finite() {
            return Err(Error::NonFinite { layer: index });
        }
        Ok(y)
    }

    pub fn inverse_on(&self, tape: &mut Tape<'_, T>, vars: &FnnVars, y: Var, index: usize) -> Result<Var> {
        let ((c0, c1), (a0, a1)) = self.halves();
        let cond = tape.slice_cols(y, c0, c1);
        let active = tape.slice_cols(y, a0, a1);
        let (t, s) = self.shift_scale(tape, vars, cond);
        let unscaled = match s {
            Some(s) => {
                let smallest = tape
                    .value(s)
                    .as_slice()
                    .iter()
                    .fold(T::infinity(), |m, v| m.min(v.abs()));
                if smallest < T::lit(MIN_SCALE) {
                    return Err(Error::SingularScale {
                        layer: index,
                        magnitude: smallest.as_f64(),
                    });
                }
                tape.div(active, s)
            }
            None => active,
        };
        let out = tape.sub(unscaled, t);
        let z = self.join(tape, cond, out);
        if !tape.value(z).is_finite() {
            return Err(Error::NonFinite { layer: index });
        }
        Ok(z)
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.m {
            return Err(Error::Shape(format!("coupling input has {n} entries, expected {}", self.m)));
        }
        Ok(())
    }

    pub fn forward(&self, z: &[T]) -> Result<Vec<T>> {
        self.check_len(z.len())?;
        let mut tape = Tape::new();
        let vars = self.net.register(&mut tape);
        let zv = tape.constant(Mat::row_vector(z));
        let y = self.forward_on(&mut tape, &vars, zv, 0)?;
        Ok(tape.value(y).as_slice().to_vec())
    }

    pub fn inverse(&self, y: &[T]) -> Result<Vec<T>> {
        self.check_len(y.len())?;
        let mut tape = Tape::new();
        let vars = self.net.register(&mut tape);
        let yv = tape.constant(Mat::row_vector(y));
        let z = self.inverse_on(&mut tape, &vars, yv, 0)?;
        Ok(tape.value(z).as_slice().to_vec())
    }
}

/// Shape of a coupling-flow network.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowSpec {
    pub dim: usize,
    pub kind: CouplingKind,
    pub depth: usize,
    /// Hidden widths of each coupling network.
    pub hidden: Vec<usize>,
    /// Split index; defaults to `ceil(dim / 2)`.
    pub split: Option<usize>,
    /// Per-layer flip flags; defaults to alternating, starting unflipped.
    pub flips: Option<Vec<bool>>,
    pub activation: Activation,
}

impl FlowSpec {
    pub fn new(dim: usize, kind: CouplingKind, depth: usize, hidden: Vec<usize>) -> Self {
        Self {
            dim,
            kind,
            depth,
            hidden,
            split: None,
            flips: None,
            activation: Activation::Relu,
        }
    }

    pub fn split_index(&self) -> usize {
        self.split.unwrap_or_else(|| default_split(self.dim))
    }

    pub fn flip_pattern(&self) -> Result<Vec<bool>> {
        match &self.flips {
            Some(f) if f.len() != self.depth => Err(Error::InvalidConfig(format!(
                "{} flip flags for depth {}",
                f.len(),
                self.depth
            ))),
            Some(f) => Ok(f.clone()),
            None => Ok((0..self.depth).map(|i| i % 2 == 1).collect()),
        }
    }
}

/// Composition `g = layer_L ∘ ... ∘ layer_1` with exact inverse.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowNetwork<T> {
    dim: usize,
    layers: Vec<CouplingLayer<T>>,
}

/// Tape handles for every layer of a [`FlowNetwork`].
#[derive(Clone, Debug)]
pub struct FlowVars {
    pub layers: Vec<FnnVars>,
}

impl<T: Real> FlowNetwork<T> {
    pub fn new(dim: usize, layers: Vec<CouplingLayer<T>>) -> Result<Self> {
        if let Some((i, _)) = layers.iter().enumerate().find(|(_, l)| l.dim() != dim) {
            return Err(Error::Shape(format!("layer {i} does not have dimension {dim}")));
        }
        Ok(Self { dim, layers })
    }

    /// Depth-zero network (the identity map).
    pub fn identity(dim: usize) -> Self {
        Self { dim, layers: Vec::new() }
    }

    /// Xavier-initialized network; deterministic in `seed`.
    pub fn xavier(spec: &FlowSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(spec, |dims, act| Fnn::xavier_with_rng(dims, act, &mut rng))
    }

    /// Network whose coupling functions are all zero: the identity for residual
    /// layers, and for affine layers too since `exp(0) = 1`.
    pub fn zeros(spec: &FlowSpec) -> Result<Self> {
        Self::build(spec, |dims, act| Fnn::zeros(dims, act))
    }

    fn build(spec: &FlowSpec, mut make: impl FnMut(&[usize], Activation) -> Result<Fnn<T>>) -> Result<Self> {
        if spec.dim < 2 {
            return Err(Error::InvalidConfig(format!("flow dimension must be >= 2, got {}", spec.dim)));
        }
        let q = spec.split_index();
        let flips = spec.flip_pattern()?;
        let layers = flips
            .into_iter()
            .map(|flipped| {
                if q == 0 || q >= spec.dim {
                    return Err(Error::InvalidConfig(format!("split index {q} invalid for dimension {}", spec.dim)));
                }
                let dims = CouplingLayer::<T>::net_dims(spec.kind, flipped, spec.dim, q, &spec.hidden);
                CouplingLayer::new(spec.kind, flipped, spec.dim, q, make(&dims, spec.activation)?)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(spec.dim, layers)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[CouplingLayer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [CouplingLayer<T>] {
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.net.num_params()).sum()
    }

    pub fn params(&self) -> Vec<&Mat<T>> {
        self.layers.iter().flat_map(|l| l.net.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Mat<T>> {
        self.layers.iter_mut().flat_map(|l| l.net.params_mut()).collect()
    }

    pub fn register<'p>(&'p self, tape: &mut Tape<'p, T>) -> FlowVars {
        FlowVars {
            layers: self.layers.iter().map(|l| l.net.register(tape)).collect(),
        }
    }

    /// Flattened parameter handles in [`Self::params`] order.
    pub fn param_vars(vars: &FlowVars) -> Vec<Var> {
        vars.layers
            .iter()
            .flat_map(|l| l.layers.iter().flat_map(|&(w, b)| [w, b]))
            .collect()
    }

    /// Taped forward map over a `batch × dim` value.
    pub fn forward_on(&self, tape: &mut Tape<'_, T>, vars: &FlowVars, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, (layer, v)) in self.layers.iter().zip(&vars.layers).enumerate() {
            h = layer.forward_on(tape, v, h, i)?;
        }
        Ok(h)
    }

    /// Taped inverse map: layers in reverse order, each inverted exactly.
    pub fn inverse_on(&self, tape: &mut Tape<'_, T>, vars: &FlowVars, y: Var) -> Result<Var> {
        let mut h = y;
        for (i, (layer, v)) in self.layers.iter().zip(&vars.layers).enumerate().rev() {
            h = layer.inverse_on(tape, v, h, i)?;
        }
        Ok(h)
    }

    fn check_cols(&self, n: usize) -> Result<()> {
        if n != self.dim {
            return Err(Error::Shape(format!("flow input has {n} entries, expected {}", self.dim)));
        }
        Ok(())
    }

    fn eval(&self, x: &Mat<T>, inverse: bool) -> Result<Mat<T>> {
        self.check_cols(x.cols())?;
        let mut tape = Tape::new();
        let vars = self.register(&mut tape);
        let xv = tape.constant(x.clone());
        let y = if inverse {
            self.inverse_on(&mut tape, &vars, xv)?
        } else {
            self.forward_on(&mut tape, &vars, xv)?
        };
        Ok(tape.value(y).clone())
    }

    /// Row-wise forward map of a `batch × dim` matrix.
    pub fn forward_batch(&self, x: &Mat<T>) -> Result<Mat<T>> {
        self.eval(x, false)
    }

    /// Row-wise inverse map of a `batch × dim` matrix.
    pub fn inverse_batch(&self, y: &Mat<T>) -> Result<Mat<T>> {
        self.eval(y, true)
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        Ok(self.eval(&Mat::row_vector(x), false)?.into_vec())
    }

    pub fn inverse(&self, y: &[T]) -> Result<Vec<T>> {
        Ok(self.eval(&Mat::row_vector(y), true)?.into_vec())
    }
}

#[cfg(test)]
mod tests;

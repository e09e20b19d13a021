//! Benchmark dynamical systems and dataset assembly.

mod dataset;
mod pde;
pub mod tridiag;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::linalg::Mat;
use crate::{Error, Real, Result};

pub use dataset::{make_dataset, thread_limit, Dataset, Split, SplitFractions, THREADS_ENV};
pub use pde::{
    solve_allen_cahn, solve_allen_cahn_from, solve_burgers, solve_burgers_from, AllenCahnParams, BurgersParams,
    NEWTON_MAX_ITERS, NEWTON_TOL,
};

/// Iterates `x1 <- λ x1`, `x2 <- μ x2 + (λ² − μ) x1²` for `steps` steps.
pub fn simulate_fixed_point<T: Real>(x0: [T; 2], steps: usize, lambda: T, mu: T) -> Result<Mat<T>> {
    if steps == 0 {
        return Err(Error::InvalidConfig("trajectory needs at least one step".into()));
    }
    let mut data = Vec::with_capacity(2 * (steps + 1));
    let (mut a, mut b) = (x0[0], x0[1]);
    data.extend([a, b]);
    let c = lambda * lambda - mu;
    for _ in 0..steps {
        let na = lambda * a;
        b = mu * b + c * a * a;
        a = na;
        data.extend([a, b]);
    }
    Ok(Mat::from_vec(steps + 1, 2, data))
}

/// Benchmark system together with its sampling distribution.
#[derive(Clone, Debug, PartialEq)]
pub enum System {
    /// Discrete map with a slow manifold; `x0 ~ U(low, high)²`.
    FixedPoint {
        lambda: f64,
        mu: f64,
        steps: usize,
        x0_low: f64,
        x0_high: f64,
    },
    /// `u(x, 0) = -ξ sin(πx)` with `ξ ~ U(low, high)`.
    Burgers {
        params: BurgersParams,
        xi_low: f64,
        xi_high: f64,
    },
    /// `u(x, 0) = ξ x² cos(2πx)` with `ξ ~ N(mean, std²)`.
    AllenCahn {
        params: AllenCahnParams,
        xi_mean: f64,
        xi_std: f64,
    },
}

impl System {
    pub fn fixed_point() -> Self {
        System::FixedPoint {
            lambda: 0.9,
            mu: 0.5,
            steps: 60,
            x0_low: 0.2,
            x0_high: 4.2,
        }
    }

    pub fn burgers() -> Self {
        System::Burgers {
            params: BurgersParams::default(),
            xi_low: 0.2,
            xi_high: 1.2,
        }
    }

    pub fn allen_cahn() -> Self {
        System::AllenCahn {
            params: AllenCahnParams::default(),
            xi_mean: -0.1,
            xi_std: 0.2,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "fixed_point" => Ok(Self::fixed_point()),
            "burgers" => Ok(Self::burgers()),
            "allen_cahn" => Ok(Self::allen_cahn()),
            other => Err(Error::InvalidConfig(format!("unknown system `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            System::FixedPoint { .. } => "fixed_point",
            System::Burgers { .. } => "burgers",
            System::AllenCahn { .. } => "allen_cahn",
        }
    }

    /// State dimension `m`.
    pub fn dim(&self) -> usize {
        match self {
            System::FixedPoint { .. } => 2,
            System::Burgers { params, .. } => params.nx,
            System::AllenCahn { params, .. } => params.nx,
        }
    }

    /// Number of steps `T`; trajectories have `T + 1` rows.
    pub fn steps(&self) -> usize {
        match self {
            System::FixedPoint { steps, .. } => *steps,
            System::Burgers { params, .. } => params.steps,
            System::AllenCahn { params, .. } => params.steps,
        }
    }

    /// Time between snapshots (1 for the discrete map).
    pub fn dt(&self) -> f64 {
        match self {
            System::FixedPoint { .. } => 1.0,
            System::Burgers { params, .. } => params.dt,
            System::AllenCahn { params, .. } => params.dt,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        match self {
            System::FixedPoint {
                lambda,
                mu,
                steps,
                x0_low,
                x0_high,
            } => {
                if *steps == 0 || !lambda.is_finite() || !mu.is_finite() || !(x0_low < x0_high) {
                    return bad(format!("invalid fixed-point settings {self:?}"));
                }
            }
            System::Burgers { xi_low, xi_high, .. } => {
                if !(xi_low < xi_high) || !xi_low.is_finite() || !xi_high.is_finite() {
                    return bad(format!("invalid Burgers sampling range [{xi_low}, {xi_high})"));
                }
            }
            System::AllenCahn { xi_mean, xi_std, .. } => {
                if !xi_mean.is_finite() || !(*xi_std >= 0.0) || !xi_std.is_finite() {
                    return bad(format!("invalid Allen-Cahn sampling N({xi_mean}, {xi_std}²)"));
                }
            }
        }
        Ok(())
    }

    /// Draws the per-trajectory parameters.
    pub fn sample_params<R: Rng>(&self, rng: &mut R) -> Result<Vec<f64>> {
        self.validate()?;
        Ok(match self {
            System::FixedPoint { x0_low, x0_high, .. } => {
                let u = Uniform::new(*x0_low, *x0_high).map_err(|e| Error::InvalidConfig(e.to_string()))?;
                vec![u.sample(rng), u.sample(rng)]
            }
            System::Burgers { xi_low, xi_high, .. } => {
                let u = Uniform::new(*xi_low, *xi_high).map_err(|e| Error::InvalidConfig(e.to_string()))?;
                vec![u.sample(rng)]
            }
            System::AllenCahn { xi_mean, xi_std, .. } => {
                let n = Normal::new(*xi_mean, *xi_std).map_err(|e| Error::InvalidConfig(e.to_string()))?;
                vec![n.sample(rng)]
            }
        })
    }

    /// Simulates one trajectory from sampled parameters.
    pub fn simulate<T: Real>(&self, params: &[f64]) -> Result<Mat<T>> {
        self.validate()?;
        let arity = if matches!(self, System::FixedPoint { .. }) { 2 } else { 1 };
        if params.len() != arity {
            return Err(Error::Shape(format!(
                "{} takes {arity} parameters, got {}",
                self.name(),
                params.len()
            )));
        }
        match self {
            System::FixedPoint { lambda, mu, steps, .. } => simulate_fixed_point(
                [T::lit(params[0]), T::lit(params[1])],
                *steps,
                T::lit(*lambda),
                T::lit(*mu),
            ),
            System::Burgers { params: p, .. } => solve_burgers(params[0], p),
            System::AllenCahn { params: p, .. } => solve_allen_cahn(params[0], p),
        }
    }

    /// Settings as `key=value` tokens; inverse of [`System::from_tokens`].
    pub fn to_tokens(&self) -> Vec<String> {
        let mut out = vec![self.name().to_string()];
        let mut kv = |k: &str, v: String| out.push(format!("{k}={v}"));
        match self {
            System::FixedPoint {
                lambda,
                mu,
                steps,
                x0_low,
                x0_high,
            } => {
                kv("lambda", format!("{lambda:e}"));
                kv("mu", format!("{mu:e}"));
                kv("steps", steps.to_string());
                kv("x0_low", format!("{x0_low:e}"));
                kv("x0_high", format!("{x0_high:e}"));
            }
            System::Burgers { params, xi_low, xi_high } => {
                kv("nx", params.nx.to_string());
                kv("dt", format!("{:e}", params.dt));
                kv("steps", params.steps.to_string());
                kv("nu", format!("{:e}", params.nu));
                kv("xi_low", format!("{xi_low:e}"));
                kv("xi_high", format!("{xi_high:e}"));
            }
            System::AllenCahn { params, xi_mean, xi_std } => {
                kv("nx", params.nx.to_string());
                kv("dt", format!("{:e}", params.dt));
                kv("steps", params.steps.to_string());
                kv("gamma1", format!("{:e}", params.gamma1));
                kv("gamma2", format!("{:e}", params.gamma2));
                kv("xi_mean", format!("{xi_mean:e}"));
                kv("xi_std", format!("{xi_std:e}"));
            }
        }
        out
    }

    pub fn from_tokens(tokens: &[String]) -> Result<Self> {
        let (name, rest) = tokens
            .split_first()
            .ok_or_else(|| Error::Parse("missing system name".into()))?;
        let mut sys = Self::by_name(name).map_err(|e| Error::Parse(e.to_string()))?;
        for tok in rest {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("expected key=value, found `{tok}`")))?;
            sys.set(k, v).map_err(|e| Error::Parse(e.to_string()))?;
        }
        sys.validate().map_err(|e| Error::Parse(e.to_string()))?;
        Ok(sys)
    }

    /// Overrides one named setting from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let f = || -> Result<f64> {
            value
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("`{key}` expects a number, got `{value}`")))
        };
        let u = || -> Result<usize> {
            value
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("`{key}` expects an integer, got `{value}`")))
        };
        let name = self.name();
        let unknown = || Err(Error::InvalidConfig(format!("unknown setting `{key}` for {name}")));
        match self {
            System::FixedPoint {
                lambda,
                mu,
                steps,
                x0_low,
                x0_high,
            } => match key {
                "lambda" => *lambda = f()?,
                "mu" => *mu = f()?,
                "steps" => *steps = u()?,
                "x0_low" => *x0_low = f()?,
                "x0_high" => *x0_high = f()?,
                _ => return unknown(),
            },
            System::Burgers { params, xi_low, xi_high } => match key {
                "nx" => params.nx = u()?,
                "dt" => params.dt = f()?,
                "steps" => params.steps = u()?,
                "nu" => params.nu = f()?,
                "xi_low" => *xi_low = f()?,
                "xi_high" => *xi_high = f()?,
                _ => return unknown(),
            },
            System::AllenCahn { params, xi_mean, xi_std } => match key {
                "nx" => params.nx = u()?,
                "dt" => params.dt = f()?,
                "steps" => params.steps = u()?,
                "gamma1" => params.gamma1 = f()?,
                "gamma2" => params.gamma2 = f()?,
                "xi_mean" => *xi_mean = f()?,
                "xi_std" => *xi_std = f()?,
                _ => return unknown(),
            },
        }
        Ok(())
    }
}

/// One simulated trajectory; row `k` of `states` is `x_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T> {
    pub sample: usize,
    pub params: Vec<f64>,
    pub states: Mat<T>,
}

impl<T: Real> Trajectory<T> {
    pub fn steps(&self) -> usize {
        self.states.rows() - 1
    }

    pub fn dim(&self) -> usize {
        self.states.cols()
    }

    pub fn initial(&self) -> &[T] {
        self.states.row(0)
    }
}

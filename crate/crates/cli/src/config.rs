//! Experiment configuration files (TOML).
//!
//! Every section is optional; missing values fall back to the per-system
//! defaults. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use koopman_flow::flows::{CouplingKind, FlowSpec};
use koopman_flow::nn::Activation;
use koopman_flow::systems::{SplitFractions, System};
use koopman_flow::training::{AeConfig, DmdGradient, FlowDmdConfig};
use serde::Deserialize;

use crate::CliError;

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: String,
    pub n_samples: Option<usize>,
    pub seed: Option<u64>,
    /// Output directory.
    pub out: Option<PathBuf>,
    /// Overrides of system settings such as `steps` or `xi_std`.
    #[serde(default)]
    pub system_params: BTreeMap<String, toml::Value>,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub scheduler: SchedulerSection,
    #[serde(default)]
    pub ae: AeSection,
    #[serde(default)]
    pub evaluate: EvaluateSection,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub train: Option<f64>,
    pub validation: Option<f64>,
    pub test: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub kind: Option<String>,
    pub depth: Option<usize>,
    pub hidden: Option<Vec<usize>>,
    pub activation: Option<String>,
    pub split: Option<usize>,
    pub flips: Option<Vec<bool>>,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub alpha: Option<f64>,
    pub rank: Option<usize>,
    pub gradient: Option<String>,
    pub max_epochs: Option<usize>,
    pub early_stop: Option<usize>,
    /// Gradient norm cap per trajectory; 0 disables clipping.
    pub clip_norm: Option<f64>,
    /// Write the checkpoint every this many epochs (0 disables).
    pub checkpoint_every: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    pub lr: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub eps: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SchedulerSection {
    pub factor: Option<f64>,
    pub patience: Option<usize>,
    pub min_lr: Option<f64>,
    pub threshold: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AeSection {
    pub encoder: Option<Vec<usize>>,
    pub decoder: Option<Vec<usize>>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSection {
    pub methods: Option<Vec<String>>,
    /// Split to evaluate: train, validation or test.
    pub split: Option<String>,
    /// Position within the split of the sample whose per-step errors are written.
    pub sample: Option<usize>,
}

fn value_text(v: &toml::Value) -> Result<String, CliError> {
    match v {
        toml::Value::Integer(i) => Ok(i.to_string()),
        toml::Value::Float(f) => Ok(format!("{f:e}")),
        toml::Value::String(s) => Ok(s.clone()),
        other => Err(CliError::Config(format!("system setting must be a number, got {other}"))),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.system()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            e => e,
        })
    }

    /// A configuration with every default for the named system.
    pub fn for_system(name: &str) -> Result<Self, CliError> {
        let cfg = Self {
            system: name.to_string(),
            ..Self::default()
        };
        cfg.system()?;
        Ok(cfg)
    }

    pub fn system(&self) -> Result<System, CliError> {
        let mut sys = System::by_name(&self.system)?;
        for (k, v) in &self.system_params {
            sys.set(k, &value_text(v)?)?;
        }
        sys.validate()?;
        Ok(sys)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples.unwrap_or(match self.system.as_str() {
            "fixed_point" => 120,
            _ => 100,
        })
    }

    pub fn fractions(&self) -> Result<SplitFractions, CliError> {
        let d = SplitFractions::default();
        let f = SplitFractions {
            train: self.split.train.unwrap_or(d.train),
            validation: self.split.validation.unwrap_or(d.validation),
            test: self.split.test.unwrap_or(d.test),
        };
        f.validate()?;
        Ok(f)
    }

    pub fn flowdmd(&self) -> Result<FlowDmdConfig<f64>, CliError> {
        let sys = self.system()?;
        let mut c = FlowDmdConfig::<f64>::for_system(sys.name())?;
        let n = &self.network;
        let mut spec = FlowSpec {
            dim: sys.dim(),
            ..c.network.clone()
        };
        if let Some(k) = &n.kind {
            spec.kind = CouplingKind::parse(k)?;
        }
        if let Some(d) = n.depth {
            spec.depth = d;
        }
        if let Some(h) = &n.hidden {
            spec.hidden = h.clone();
        }
        if let Some(a) = &n.activation {
            spec.activation = Activation::parse(a)?;
        }
        spec.split = n.split.or(spec.split);
        if let Some(f) = &n.flips {
            spec.flips = Some(f.clone());
        }
        c.network = spec;
        let t = &self.training;
        c.alpha = t.alpha.unwrap_or(c.alpha);
        c.rank = t.rank.unwrap_or(c.rank);
        if let Some(g) = &t.gradient {
            c.gradient = DmdGradient::parse(g)?;
        }
        c.max_epochs = t.max_epochs.unwrap_or(c.max_epochs);
        c.early_stop = t.early_stop.unwrap_or(c.early_stop);
        if let Some(v) = t.clip_norm {
            c.clip_norm = (v != 0.0).then_some(v);
        }
        let o = &self.optimizer;
        c.adam.lr = o.lr.unwrap_or(c.adam.lr);
        c.adam.beta1 = o.beta1.unwrap_or(c.adam.beta1);
        c.adam.beta2 = o.beta2.unwrap_or(c.adam.beta2);
        c.adam.eps = o.eps.unwrap_or(c.adam.eps);
        let s = &self.scheduler;
        c.scheduler.factor = s.factor.unwrap_or(c.scheduler.factor);
        c.scheduler.patience = s.patience.unwrap_or(c.scheduler.patience);
        c.scheduler.min_lr = s.min_lr.unwrap_or(c.scheduler.min_lr);
        c.scheduler.threshold = s.threshold.unwrap_or(c.scheduler.threshold);
        c.seed = self.seed();
        c.validate()?;
        Ok(c)
    }

    pub fn checkpoint_every(&self) -> usize {
        self.training.checkpoint_every.unwrap_or(100)
    }

    /// Autoencoder settings for states of dimension `m`.
    pub fn ae(&self, m: usize) -> Result<AeConfig<f64>, CliError> {
        let mut c = AeConfig::<f64>::default();
        if m != 2 {
            // Same shape as the planar default, scaled to the state dimension.
            c.encoder = vec![m, m + m / 2, 2 * m, m + m / 2];
            c.decoder = vec![m + m / 2, 2 * m, m + m / 2, m];
        }
        let a = &self.ae;
        if let Some(e) = &a.encoder {
            c.encoder = e.clone();
        }
        if let Some(d) = &a.decoder {
            c.decoder = d.clone();
        }
        c.epochs = a.epochs.unwrap_or(c.epochs);
        c.batch_size = a.batch_size.unwrap_or(c.batch_size);
        c.adam.lr = a.lr.unwrap_or(c.adam.lr);
        c.seed = self.seed();
        c.validate()?;
        Ok(c)
    }

    pub fn methods(&self) -> Vec<String> {
        self.evaluate
            .methods
            .clone()
            .unwrap_or_else(|| vec!["flowdmd".into(), "exact_dmd".into()])
    }
}

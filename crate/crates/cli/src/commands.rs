//! The `generate`, `train` and `evaluate` commands.

use std::path::{Path, PathBuf};

use koopman_flow::flows::FlowNetwork;
use koopman_flow::linalg::Mat;
use koopman_flow::metrics::{write_report_csv, write_summary_csv, ErrorReport};
use koopman_flow::systems::{make_dataset, Dataset, Split, Trajectory};
use koopman_flow::training::{
    ae_dmd_reconstruction, exact_dmd_reconstruction, train_ae_baseline, write_history_csv, Autoencoder, Checkpoint,
    FlowDmdConfig, TrainState, TrainedModel, Trainer,
};
use log::info;

use crate::config::ExperimentConfig;
use crate::output::{ensure_dir, write_dat, write_with, Manifest};
use crate::{CliError, Result};

pub const DATASET_FILE: &str = "dataset.txt";
pub const DATASET_CSV: &str = "dataset.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const HISTORY_FILE: &str = "history.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const ERRORS_FILE: &str = "errors.csv";

/// Methods accepted by `evaluate`.
pub const METHODS: [&str; 3] = ["flowdmd", "exact_dmd", "ae_baseline"];

fn with_path<T>(path: &Path, r: koopman_flow::Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        koopman_flow::Error::Io(io) => CliError::io(path, io),
        e => CliError::Core(e),
    })
}

pub fn load_dataset(path: &Path) -> Result<Dataset<f64>> {
    with_path(path, Dataset::load(path))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint<f64>> {
    with_path(path, Checkpoint::load(path))
}

fn record_config(m: &mut Manifest, cfg: &ExperimentConfig) -> Result<()> {
    let sys = cfg.system()?;
    m.set("system", sys.name());
    m.set("system_settings", sys.to_tokens().join(" "));
    m.set_u("seed", cfg.seed());
    m.set("n_samples", cfg.n_samples() as i64);
    Ok(())
}

fn record_counts(m: &mut Manifest, ds: &Dataset<f64>) {
    m.set("train", ds.train.len() as i64);
    m.set("validation", ds.validation.len() as i64);
    m.set("test", ds.test.len() as i64);
}

fn save_dataset(ds: &Dataset<f64>, out: &Path) -> Result<PathBuf> {
    let path = out.join(DATASET_FILE);
    with_path(&path, ds.save(&path))?;
    let csv = out.join(DATASET_CSV);
    write_with(&csv, |w| with_path(&csv, ds.write_csv(w)))?;
    Ok(path)
}

/// Simulates the configured dataset and writes it with a manifest to `out`.
pub fn generate(cfg: &ExperimentConfig, out: &Path) -> Result<Dataset<f64>> {
    ensure_dir(out)?;
    let sys = cfg.system()?;
    let ds = make_dataset::<f64>(&sys, cfg.n_samples(), cfg.seed(), cfg.fractions()?)?;
    save_dataset(&ds, out)?;
    let mut m = Manifest::new("generate");
    record_config(&mut m, cfg)?;
    record_counts(&mut m, &ds);
    m.set("dataset", DATASET_FILE);
    m.save(out)?;
    info!(
        "generated {} samples ({}/{}/{}) in {}",
        ds.len(),
        ds.train.len(),
        ds.validation.len(),
        ds.test.len(),
        out.display()
    );
    Ok(ds)
}

fn check_resume(config: &FlowDmdConfig<f64>, ckpt: &Checkpoint<f64>) -> Result<()> {
    if ckpt.rank != config.rank {
        return Err(CliError::Config(format!(
            "checkpoint was trained with rank {}, configuration has {}",
            ckpt.rank, config.rank
        )));
    }
    let expected = FlowNetwork::<f64>::zeros(&config.network)?;
    let shapes = |n: &FlowNetwork<f64>| n.params().iter().map(|p| p.shape()).collect::<Vec<_>>();
    let kinds = |n: &FlowNetwork<f64>| n.layers().iter().map(|l| (l.kind(), l.flipped())).collect::<Vec<_>>();
    let net = &ckpt.state.net;
    if shapes(net) != shapes(&expected) || kinds(net) != kinds(&expected) {
        return Err(CliError::Config(
            "checkpoint network does not match the configured network".into(),
        ));
    }
    Ok(())
}

/// Writes `history.csv` and `history.dat`.
pub fn save_history(state: &TrainState<f64>, out: &Path) -> Result<()> {
    let csv = out.join(HISTORY_FILE);
    write_with(&csv, |w| with_path(&csv, write_history_csv(&state.history, w)))?;
    write_dat(
        &out.join("history.dat"),
        &["epoch", "l_linear", "l_rec", "total", "val_total", "lr"],
        state
            .history
            .iter()
            .map(|h| vec![h.epoch as f64, h.linear, h.rec, h.total, h.val_total, h.lr]),
    )
}

/// Trains FlowDMD on `dataset` (generated into `out` when not given),
/// optionally continuing from a checkpoint.
pub fn train(cfg: &ExperimentConfig, dataset: Option<&Path>, resume: Option<&Path>, out: &Path) -> Result<TrainedModel<f64>> {
    ensure_dir(out)?;
    let config = cfg.flowdmd()?;
    let (ds, ds_path) = match dataset {
        Some(p) => (load_dataset(p)?, p.to_path_buf()),
        None => {
            let ds = make_dataset::<f64>(&cfg.system()?, cfg.n_samples(), cfg.seed(), cfg.fractions()?)?;
            let p = save_dataset(&ds, out)?;
            (ds, p)
        }
    };
    let mut trainer = match resume {
        Some(p) => {
            let ckpt = load_checkpoint(p)?;
            check_resume(&config, &ckpt)?;
            info!("resuming from epoch {}", ckpt.state.epoch);
            Trainer::resume(config.clone(), &ds, ckpt.state)?
        }
        None => Trainer::new(config.clone(), &ds)?,
    };
    let ckpt_path = out.join(CHECKPOINT_FILE);
    let every = cfg.checkpoint_every();
    let rank = config.rank;
    let run = trainer.run_with(|s| {
        if let Some(h) = s.history.last() {
            if h.epoch % 50 == 0 {
                info!("epoch {} total {:.4e} val {:.4e} lr {:.1e}", h.epoch, h.total, h.val_total, h.lr);
            }
        }
        if every > 0 && s.epoch % every == 0 {
            Checkpoint::new(rank, s.clone()).save(&ckpt_path)?;
        }
        Ok(())
    });
    let state = trainer.state();
    // Whatever happened, leave the latest state and history behind.
    with_path(&ckpt_path, Checkpoint::new(rank, state.clone()).save(&ckpt_path))?;
    save_history(state, out)?;
    let mut m = Manifest::new("train");
    record_config(&mut m, cfg)?;
    record_counts(&mut m, &ds);
    m.set("dataset", ds_path.display().to_string());
    m.set("checkpoint", CHECKPOINT_FILE);
    m.set("network", config.network.kind.name());
    m.set("depth", config.network.depth as i64);
    m.set("rank", rank as i64);
    m.set("alpha", config.alpha);
    m.set("gradient", config.gradient.name());
    m.set("epochs", state.epoch as i64);
    m.set("best_epoch", state.best_epoch as i64);
    m.set("best_val", state.best_val);
    if let Some(p) = resume {
        m.set("resumed_from", p.display().to_string());
    }
    m.save(out)?;
    run?;
    Ok(trainer.into_model()?)
}

/// A reconstruction method under evaluation.
pub enum Method {
    FlowDmd(TrainedModel<f64>),
    ExactDmd(usize),
    AeBaseline(Autoencoder<f64>, usize),
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::FlowDmd(_) => "flowdmd",
            Method::ExactDmd(_) => "exact_dmd",
            Method::AeBaseline(..) => "ae_baseline",
        }
    }

    pub fn reconstruct(&self, states: &Mat<f64>) -> Result<Mat<f64>> {
        Ok(match self {
            Method::FlowDmd(m) => m.reconstruct(states)?,
            Method::ExactDmd(r) => exact_dmd_reconstruction(states, *r)?,
            Method::AeBaseline(ae, r) => ae_dmd_reconstruction(ae, states, *r)?,
        })
    }

    pub fn report(&self, t: &Trajectory<f64>) -> Result<(Mat<f64>, ErrorReport<f64>)> {
        let xhat = self
            .reconstruct(&t.states)
            .map_err(|e| tag_sample(e, t.sample))?;
        let rep = ErrorReport::new(t.sample, self.name(), &xhat, &t.states)?;
        Ok((xhat, rep))
    }
}

fn tag_sample(e: CliError, index: usize) -> CliError {
    match e {
        CliError::Core(source) => CliError::Core(koopman_flow::Error::Sample {
            index,
            source: Box::new(source),
        }),
        e => e,
    }
}

pub fn parse_methods(list: &[String]) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for m in list.iter().flat_map(|s| s.split(',')).map(str::trim).filter(|s| !s.is_empty()) {
        if !METHODS.contains(&m) {
            return Err(CliError::Usage(format!(
                "unknown method `{m}` (expected one of {})",
                METHODS.join(", ")
            )));
        }
        if !out.iter().any(|o| o == m) {
            out.push(m.to_string());
        }
    }
    if out.is_empty() {
        return Err(CliError::Usage("no methods given".into()));
    }
    Ok(out)
}

/// Result of `evaluate`: per-sample reports for every method in order.
pub struct Evaluation {
    pub reports: Vec<ErrorReport<f64>>,
    pub sample: usize,
}

impl Evaluation {
    pub fn for_method(&self, method: &str) -> Vec<&ErrorReport<f64>> {
        self.reports.iter().filter(|r| r.method == method).collect()
    }

    pub fn mean(&self, method: &str) -> Option<f64> {
        let r = self.for_method(method);
        (!r.is_empty()).then(|| r.iter().map(|r| r.trl2e).sum::<f64>() / r.len() as f64)
    }
}

/// Builds the requested methods. The DMD rank comes from the checkpoint when
/// there is one, else from the configuration.
pub fn build_methods(
    cfg: &ExperimentConfig,
    names: &[String],
    ckpt: Option<&Checkpoint<f64>>,
    ds: &Dataset<f64>,
) -> Result<Vec<Method>> {
    let rank = match ckpt {
        Some(c) => c.rank,
        None => cfg.flowdmd()?.rank,
    };
    names
        .iter()
        .map(|n| match n.as_str() {
            "flowdmd" => ckpt
                .map(|c| Method::FlowDmd(c.model()))
                .ok_or_else(|| CliError::Usage("method flowdmd needs --checkpoint".into())),
            "exact_dmd" => Ok(Method::ExactDmd(rank)),
            "ae_baseline" => {
                let (ae, rep) = train_ae_baseline(&cfg.ae(ds.system.dim())?, ds)?;
                info!(
                    "autoencoder: train error {:.3e}, held-out {:.3e}",
                    rep.train_error, rep.in_distribution
                );
                Ok(Method::AeBaseline(ae, rank))
            }
            other => Err(CliError::Usage(format!("unknown method `{other}`"))),
        })
        .collect()
}

/// Evaluates `methods` on one split of `ds` and writes the metric and plot files.
pub fn evaluate_methods(cfg: &ExperimentConfig, methods: &[Method], ds: &Dataset<f64>, out: &Path) -> Result<Evaluation> {
    ensure_dir(out)?;
    let split = Split::parse(cfg.evaluate.split.as_deref().unwrap_or("test"))?;
    let set = ds.split(split);
    let pos = cfg.evaluate.sample.unwrap_or(0);
    let designated = set.get(pos).ok_or_else(|| {
        CliError::Config(format!("{} split has {} samples, no position {pos}", split.name(), set.len()))
    })?;

    let mut reports = Vec::new();
    let mut detail = Vec::new();
    for method in methods {
        let mut mine = Vec::with_capacity(set.len());
        for t in set {
            let (xhat, rep) = method.report(t)?;
            if t.sample == designated.sample {
                write_trajectory(&out.join(format!("trajectory_{}.dat", method.name())), &xhat)?;
                detail.push(rep.clone());
            }
            mine.push(rep);
        }
        write_dat(
            &out.join(format!("summary_{}.dat", method.name())),
            &["sample_id", "trl2e"],
            mine.iter().map(|r| vec![r.sample as f64, r.trl2e]),
        )?;
        reports.extend(mine);
    }
    write_trajectory(&out.join("trajectory_truth.dat"), &designated.states)?;
    for rep in &detail {
        write_dat(
            &out.join(format!("errors_{}.dat", rep.method)),
            &["t", "rl2e", "mse"],
            rep.rl2e.iter().zip(&rep.mse).enumerate().map(|(i, (&r, &m))| vec![(i + 1) as f64, r, m]),
        )?;
    }
    let summary = out.join(SUMMARY_FILE);
    write_with(&summary, |w| with_path(&summary, write_summary_csv(&reports, w)))?;
    let errors = out.join(ERRORS_FILE);
    write_with(&errors, |w| with_path(&errors, write_report_csv(&detail, w)))?;

    let eval = Evaluation {
        reports,
        sample: designated.sample,
    };
    for m in methods {
        if let Some(v) = eval.mean(m.name()) {
            info!("{}: mean TRL2E {v:.4e}", m.name());
        }
    }
    Ok(eval)
}

/// One row per time step: `t x_1 .. x_m`.
fn write_trajectory(path: &Path, states: &Mat<f64>) -> Result<()> {
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=states.cols()).map(|i| format!("x_{i}")));
    let cols: Vec<&str> = cols.iter().map(String::as_str).collect();
    write_dat(
        path,
        &cols,
        (0..states.rows()).map(|k| {
            let mut row = vec![k as f64];
            row.extend_from_slice(states.row(k));
            row
        }),
    )
}

/// `evaluate` command.
pub fn evaluate(
    cfg: &ExperimentConfig,
    checkpoint: Option<&Path>,
    dataset: &Path,
    methods: &[String],
    out: &Path,
) -> Result<Evaluation> {
    let names = parse_methods(methods)?;
    let ckpt = checkpoint.map(load_checkpoint).transpose()?;
    let ds = load_dataset(dataset)?;
    let built = build_methods(cfg, &names, ckpt.as_ref(), &ds)?;
    let eval = evaluate_methods(cfg, &built, &ds, out)?;
    let mut m = Manifest::new("evaluate");
    m.set("system", ds.system.name());
    m.set_u("seed", cfg.seed());
    m.set("dataset", dataset.display().to_string());
    if let Some(p) = checkpoint {
        m.set("checkpoint", p.display().to_string());
    }
    m.set("methods", names.join(","));
    m.set("split", cfg.evaluate.split.clone().unwrap_or_else(|| "test".into()));
    m.set("designated_sample", eval.sample as i64);
    for n in &names {
        if let Some(v) = eval.mean(n) {
            m.set(&format!("mean_trl2e_{n}"), v);
        }
    }
    m.save(out)?;
    Ok(eval)
}

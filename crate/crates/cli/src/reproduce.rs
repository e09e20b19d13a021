//! Reference experiments: each target trains and evaluates with the default
//! settings for its system and compares the outcome with published values.

use std::fmt;
use std::path::Path;

use koopman_flow::systems::{make_dataset, Dataset};
use koopman_flow::training::{ood_probes, train_ae_baseline, Checkpoint, TrainedModel, Trainer};
use log::info;

use crate::commands::{evaluate_methods, save_history, Evaluation, Method, CHECKPOINT_FILE};
use crate::config::ExperimentConfig;
use crate::output::{ensure_dir, write_dat, write_with, Manifest};
use crate::{CliError, Result};

pub const TARGETS: [&str; 7] = ["fig1", "fig7", "fig10", "table_rank", "table_alpha", "fig2", "fig14"];

/// Epoch budgets per system. Early stopping usually ends fixed-point runs
/// well before the limit.
pub const FIXED_POINT_EPOCHS: usize = 3000;
pub const BURGERS_EPOCHS: usize = 300;
pub const ALLEN_CAHN_EPOCHS: usize = 600;
/// Budget for each run of the seed study.
pub const SEED_STUDY_EPOCHS: usize = 300;

pub const RANKS: [usize; 5] = [1, 3, 5, 7, 9];
pub const RANK_TABLE: [f64; 5] = [17.4e-2, 6.8e-2, 6.7e-2, 9e-3, 3e-3];
pub const ALPHAS: [f64; 5] = [0.01, 0.1, 1.0, 10.0, 100.0];
pub const ALPHA_TABLE: [f64; 5] = [6.2e-2, 6.8e-2, 8.2e-2, 3.2e-2, 6.9e-2];

#[derive(Clone, Debug)]
pub struct ReproduceOptions {
    /// Dataset and initialization seed.
    pub seed: u64,
    /// Replaces the per-system epoch budget.
    pub max_epochs: Option<usize>,
    /// Number of training seeds in `fig14`.
    pub seeds: usize,
}

impl Default for ReproduceOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            max_epochs: None,
            seeds: 15,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Check {
    AtMost(f64),
    AtLeast(f64),
    /// Reported for comparison only.
    Info,
}

impl Check {
    fn pass(&self, v: f64) -> Option<bool> {
        match *self {
            Check::AtMost(t) => Some(v <= t),
            Check::AtLeast(t) => Some(v >= t),
            Check::Info => None,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Check::AtMost(t) => write!(f, "<= {t}"),
            Check::AtLeast(t) => write!(f, ">= {t}"),
            Check::Info => write!(f, "-"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub target: String,
    pub quantity: String,
    pub reference: Option<f64>,
    pub obtained: f64,
    pub check: Check,
    pub pass: Option<bool>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub target: String,
    pub rows: Vec<ReportRow>,
}

impl Report {
    fn new(target: &str) -> Self {
        Self {
            target: target.to_string(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, quantity: &str, reference: Option<f64>, obtained: f64, check: Check) {
        let pass = check.pass(obtained);
        self.rows.push(ReportRow {
            target: self.target.clone(),
            quantity: quantity.to_string(),
            reference,
            obtained,
            check,
            pass,
        });
    }

    pub fn get(&self, quantity: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.quantity == quantity)
    }

    /// True when every checked row passes.
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass != Some(false))
    }

    pub fn failures(&self) -> Vec<&ReportRow> {
        self.rows.iter().filter(|r| r.pass == Some(false)).collect()
    }

    /// CSV with columns `target,quantity,reference,obtained,tolerance,pass`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["target", "quantity", "reference", "obtained", "tolerance", "pass"])?;
        for r in &self.rows {
            out.write_record([
                r.target.clone(),
                r.quantity.clone(),
                r.reference.map_or_else(String::new, |p| format!("{p:e}")),
                format!("{:e}", r.obtained),
                r.check.to_string(),
                match r.pass {
                    Some(true) => "pass".into(),
                    Some(false) => "fail".into(),
                    None => String::new(),
                },
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<28} {:>12} {:>12} {:>10} {:>6}", "quantity", "reference", "obtained", "tolerance", "pass")?;
        for r in &self.rows {
            let reference = r.reference.map_or_else(|| "-".to_string(), |p| format!("{p:.4e}"));
            let pass = match r.pass {
                Some(true) => "yes",
                Some(false) => "NO",
                None => "-",
            };
            writeln!(
                f,
                "{:<28} {:>12} {:>12.4e} {:>10} {:>6}",
                r.quantity,
                reference,
                r.obtained,
                r.check.to_string(),
                pass
            )?;
        }
        Ok(())
    }
}

fn base_config(system: &str, opts: &ReproduceOptions, default_epochs: usize) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::for_system(system)?;
    cfg.seed = Some(opts.seed);
    cfg.training.max_epochs = Some(opts.max_epochs.unwrap_or(default_epochs));
    Ok(cfg)
}

fn dataset(cfg: &ExperimentConfig) -> Result<Dataset<f64>> {
    Ok(make_dataset::<f64>(&cfg.system()?, cfg.n_samples(), cfg.seed(), cfg.fractions()?)?)
}

/// Trains FlowDMD and leaves the checkpoint and history in `dir`.
pub fn fit(cfg: &ExperimentConfig, ds: &Dataset<f64>, dir: &Path) -> Result<TrainedModel<f64>> {
    ensure_dir(dir)?;
    let config = cfg.flowdmd()?;
    let mut trainer = Trainer::new(config.clone(), ds)?;
    let t0 = std::time::Instant::now();
    trainer.run()?;
    let state = trainer.state();
    info!(
        "{} rank {} alpha {} seed {}: {} epochs (best {}) in {:.1}s",
        ds.system.name(),
        config.rank,
        config.alpha,
        config.seed,
        state.epoch,
        state.best_epoch,
        t0.elapsed().as_secs_f64()
    );
    let ckpt = dir.join(CHECKPOINT_FILE);
    Checkpoint::new(config.rank, state.clone())
        .save(&ckpt)
        .map_err(|e| CliError::io(&ckpt, e))?;
    save_history(state, dir)?;
    Ok(trainer.into_model()?)
}

/// Trains, then evaluates FlowDMD and Exact DMD on the test split.
pub fn fit_and_evaluate(cfg: &ExperimentConfig, ds: &Dataset<f64>, dir: &Path) -> Result<Evaluation> {
    let model = fit(cfg, ds, dir)?;
    let rank = model.rank;
    evaluate_methods(cfg, &[Method::FlowDmd(model), Method::ExactDmd(rank)], ds, dir)
}

/// Fraction of samples where FlowDMD has the lower TRL2E.
pub fn win_fraction(eval: &Evaluation) -> f64 {
    let flow = eval.for_method("flowdmd");
    let exact = eval.for_method("exact_dmd");
    let wins = flow
        .iter()
        .zip(&exact)
        .filter(|(f, e)| f.trl2e < e.trl2e)
        .count();
    wins as f64 / flow.len().max(1) as f64
}

fn sample_trl2e(eval: &Evaluation, method: &str) -> f64 {
    eval.for_method(method)
        .into_iter()
        .find(|r| r.sample == eval.sample)
        .map_or(f64::NAN, |r| r.trl2e)
}

fn fig1(opts: &ReproduceOptions, out: &Path) -> Result<Report> {
    let cfg = base_config("fixed_point", opts, FIXED_POINT_EPOCHS)?;
    let ds = dataset(&cfg)?;
    let eval = fit_and_evaluate(&cfg, &ds, out)?;
    let mut rep = Report::new("fig1");
    rep.push("mean_trl2e_flowdmd", Some(3e-3), eval.mean("flowdmd").unwrap_or(f64::NAN), Check::AtMost(0.02));
    rep.push("mean_trl2e_exact_dmd", None, eval.mean("exact_dmd").unwrap_or(f64::NAN), Check::AtLeast(0.05));
    rep.push("flowdmd_win_fraction", None, win_fraction(&eval), Check::AtLeast(0.8));
    let flow = sample_trl2e(&eval, "flowdmd");
    let exact = sample_trl2e(&eval, "exact_dmd");
    rep.push("showcase_trl2e_flowdmd", Some(0.0018), flow, Check::Info);
    rep.push("showcase_trl2e_exact_dmd", Some(0.2448), exact, Check::Info);
    rep.push("showcase_exact_over_flowdmd", Some(0.2448 / 0.0018), exact / flow, Check::AtLeast(1.0));
    Ok(rep)
}

fn fig7(opts: &ReproduceOptions, out: &Path) -> Result<Report> {
    let cfg = base_config("burgers", opts, BURGERS_EPOCHS)?;
    let ds = dataset(&cfg)?;
    let eval = fit_and_evaluate(&cfg, &ds, out)?;
    let mut rep = Report::new("fig7");
    rep.push("mean_trl2e_flowdmd", Some(0.015), eval.mean("flowdmd").unwrap_or(f64::NAN), Check::AtMost(0.08));
    rep.push("mean_trl2e_exact_dmd", None, eval.mean("exact_dmd").unwrap_or(f64::NAN), Check::Info);
    rep.push("flowdmd_win_fraction", None, win_fraction(&eval), Check::AtLeast(0.6));
    Ok(rep)
}

fn fig10(opts: &ReproduceOptions, out: &Path) -> Result<Report> {
    let cfg = base_config("allen_cahn", opts, ALLEN_CAHN_EPOCHS)?;
    let ds = dataset(&cfg)?;
    let eval = fit_and_evaluate(&cfg, &ds, out)?;
    let mut rep = Report::new("fig10");
    rep.push("mean_trl2e_flowdmd", Some(0.09), eval.mean("flowdmd").unwrap_or(f64::NAN), Check::AtMost(0.2));
    rep.push("mean_trl2e_exact_dmd", None, eval.mean("exact_dmd").unwrap_or(f64::NAN), Check::Info);
    rep.push("showcase_trl2e_flowdmd", Some(0.0725), sample_trl2e(&eval, "flowdmd"), Check::Info);
    rep.push("showcase_trl2e_exact_dmd", Some(0.6129), sample_trl2e(&eval, "exact_dmd"), Check::Info);
    Ok(rep)
}

/// Number of `i` with `v[i + 1] > v[i]`.
pub fn adjacent_inversions(v: &[f64]) -> usize {
    v.windows(2).filter(|w| w[1] > w[0]).count()
}

fn table_rank(opts: &ReproduceOptions, out: &Path) -> Result<Report> {
    let mut cfg = base_config("allen_cahn", opts, ALLEN_CAHN_EPOCHS)?;
    let ds = dataset(&cfg)?;
    let mut rep = Report::new("table_rank");
    let mut means = Vec::new();
    for (&r, &reference) in RANKS.iter().zip(&RANK_TABLE) {
        cfg.training.rank = Some(r);
        let eval = fit_and_evaluate(&cfg, &ds, &out.join(format!("r{r}")))?;
        let m = eval.mean("flowdmd").unwrap_or(f64::NAN);
        rep.push(&format!("trl2e_r{r}"), Some(reference), m, Check::Info);
        means.push(m);
    }
    write_dat(
        &out.join("rank.dat"),
        &["rank", "trl2e", "reference"],
        RANKS.iter().zip(&means).zip(&RANK_TABLE).map(|((&r, &m), &p)| vec![r as f64, m, p]),
    )?;
    let ratio = means[0] / means[RANKS.len() - 1];
    rep.push("r1_over_r9", Some(RANK_TABLE[0] / RANK_TABLE[4]), ratio, Check::AtLeast(5.0));
    rep.push("adjacent_inversions", Some(0.0), adjacent_inversions(&means) as f64, Check::AtMost(1.0));
    Ok(rep)
}

fn table_alpha(opts: &ReproduceOptions, out: &Path) -> Result<Report> {
    let mut cfg = base_config("allen_cahn", opts, ALLEN_CAHN_EPOCHS)?;
    let ds = dataset(&cfg)?;
    let mut rep = Report::new("table_alpha");
    let mut means = Vec::new();
    for (&a, &reference) in ALPHAS.iter().zip(&ALPHA_TABLE) {
        cfg.training.alpha = Some(a);
        let eval = fit_and_evaluate(&cfg, &ds, &out.join(format!("alpha{a}")))?;
        let m = eval.mean("flowdmd").unwrap_or(f64::NAN);
        rep.push(&format!("trl2e_alpha{a}"), Some(reference), m, Check::AtMost(0.2));
        means.push(m);
    }
    write_dat(
        &out.join("alpha.dat"),
        &["alpha", "trl2e", "reference"],
        ALPHAS.iter().zip(&means).zip(&ALPHA_TABLE).map(|((&a, &m), &p)| vec![a, m, p]),
    )?;
    Ok(rep)
}

fn fig2(opts: &ReproduceOptions, out: &Path) -> Result<Report> {
    ensure_dir(out)?;
    let mut cfg = base_config("fixed_point", opts, FIXED_POINT_EPOCHS)?;
    if let Some(e) = opts.max_epochs {
        cfg.ae.epochs = Some(e);
    }
    let ds = dataset(&cfg)?;
    let ae_cfg = cfg.ae(2)?;
    let (ae, r) = train_ae_baseline(&ae_cfg, &ds)?;
    let (sin, s, normal) = ood_probes::<f64>(ae_cfg.probe_points, ae_cfg.seed ^ 0x2545_f491);
    for (name, x) in [("sin_curve", &sin), ("s_curve", &s), ("normal", &normal)] {
        let xhat = ae.reconstruct(x)?;
        write_dat(
            &out.join(format!("probe_{name}.dat")),
            &["x1", "x2", "xhat1", "xhat2"],
            (0..x.rows()).map(|i| vec![x[(i, 0)], x[(i, 1)], xhat[(i, 0)], xhat[(i, 1)]]),
        )?;
    }
    write_dat(
        &out.join("ae_loss.dat"),
        &["epoch", "loss"],
        r.loss_history.iter().enumerate().map(|(i, &l)| vec![(i + 1) as f64, l]),
    )?;
    let nan = f64::NAN;
    let mut rep = Report::new("fig2");
    rep.push("train_error", None, r.train_error, Check::Info);
    rep.push("in_distribution_error", None, r.in_distribution, Check::Info);
    rep.push("sin_curve_error", None, r.sin_curve.unwrap_or(nan), Check::Info);
    rep.push("s_curve_error", None, r.s_curve.unwrap_or(nan), Check::Info);
    rep.push("normal_error", None, r.normal.unwrap_or(nan), Check::Info);
    rep.push(
        "normal_over_in_distribution",
        None,
        r.normal.unwrap_or(nan) / r.in_distribution,
        Check::AtLeast(5.0),
    );
    rep.push("latent_roundtrip_error", None, r.latent_roundtrip, Check::Info);
    rep.push(
        "latent_over_reconstruction",
        None,
        r.latent_roundtrip / r.train_error,
        Check::AtLeast(5.0),
    );
    Ok(rep)
}

/// Mean and population standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn fig14(opts: &ReproduceOptions, out: &Path) -> Result<Report> {
    if opts.seeds < 2 {
        return Err(CliError::Usage("the seed study needs at least 2 seeds".into()));
    }
    let mut cfg = base_config("allen_cahn", opts, SEED_STUDY_EPOCHS)?;
    let ds = dataset(&cfg)?;
    let mut means = Vec::new();
    for k in 0..opts.seeds as u64 {
        // The dataset stays fixed; only the initialization changes.
        let seed = opts.seed.wrapping_add(k);
        cfg.seed = Some(seed);
        let eval = fit_and_evaluate(&cfg, &ds, &out.join(format!("seed{seed}")))?;
        means.push(eval.mean("flowdmd").unwrap_or(f64::NAN));
    }
    write_dat(
        &out.join("seeds.dat"),
        &["seed", "trl2e"],
        means.iter().enumerate().map(|(k, &m)| vec![opts.seed.wrapping_add(k as u64) as f64, m]),
    )?;
    let (mean, std) = mean_std(&means);
    let mut rep = Report::new("fig14");
    rep.push("mean_trl2e", Some(6.5e-2), mean, Check::Info);
    rep.push("std_trl2e", Some(1.6e-2), std, Check::Info);
    rep.push("std_over_mean", Some(1.6e-2 / 6.5e-2), std / mean, Check::AtMost(1.0));
    Ok(rep)
}

/// Runs `target`, writing its artifacts, `report.csv` and a manifest to `out`.
pub fn run(target: &str, opts: &ReproduceOptions, out: &Path) -> Result<Report> {
    let f = match target {
        "fig1" => fig1,
        "fig7" => fig7,
        "fig10" => fig10,
        "table_rank" => table_rank,
        "table_alpha" => table_alpha,
        "fig2" => fig2,
        "fig14" => fig14,
        other => {
            return Err(CliError::Usage(format!(
                "unknown target `{other}`; valid targets: {}",
                TARGETS.join(", ")
            )))
        }
    };
    ensure_dir(out)?;
    let rep = f(opts, out)?;
    let path = out.join("report.csv");
    write_with(&path, |w| rep.write_csv(w).map_err(|e| CliError::io(&path, e)))?;
    let mut m = Manifest::new("reproduce");
    m.set("target", target);
    m.set_u("seed", opts.seed);
    if let Some(e) = opts.max_epochs {
        m.set("max_epochs", e as i64);
    }
    if target == "fig14" {
        m.set("seeds", opts.seeds as i64);
    }
    m.set("passed", rep.passed());
    m.save(out)?;
    Ok(rep)
}

//! Versioned text checkpoint holding the best network and the full resume state.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::trainer::{HistoryRow, TrainState, TrainedModel};
use crate::flows::io::read_network_from;
use crate::flows::write_network;
use crate::nn::{Adam, AdamConfig, PlateauConfig, PlateauScheduler};
use crate::textio::{read_mat, write_mat, LineReader};
use crate::{Real, Result};

const HEADER: &str = "koopman-flow-checkpoint 1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub rank: usize,
    pub state: TrainState<T>,
}

impl<T: Real> Checkpoint<T> {
    pub fn new(rank: usize, state: TrainState<T>) -> Self {
        Self { rank, state }
    }

    /// The best network, without training-set DMD models.
    pub fn model(&self) -> TrainedModel<T> {
        let mut m = TrainedModel::from_flow(self.state.best.clone(), self.rank);
        m.history = self.state.history.clone();
        m.best_epoch = self.state.best_epoch;
        m
    }

    pub fn write_text<W: Write>(&self, w: &mut W) -> Result<()> {
        let s = &self.state;
        writeln!(w, "{HEADER}")?;
        writeln!(w, "rank {}", self.rank)?;
        writeln!(w, "epoch {}", s.epoch)?;
        writeln!(w, "best_epoch {}", s.best_epoch)?;
        writeln!(w, "best_val {:e}", s.best_val)?;
        writeln!(w, "since_best {}", s.since_best)?;
        writeln!(w, "best")?;
        write_network(&s.best, w)?;
        writeln!(w, "current")?;
        write_network(&s.net, w)?;
        let c = s.adam.config;
        writeln!(
            w,
            "adam {} {:e} {:e} {:e} {:e}",
            s.adam.step_count(),
            s.adam.lr(),
            c.beta1,
            c.beta2,
            c.eps
        )?;
        let (m, v) = s.adam.moments();
        writeln!(w, "moments {}", m.len())?;
        for (a, b) in m.iter().zip(v) {
            write_mat(w, "m", a)?;
            write_mat(w, "v", b)?;
        }
        let sc = &s.scheduler;
        writeln!(
            w,
            "scheduler {:e} {:e} {} {:e} {} {:e} {:e}",
            sc.lr(),
            sc.best(),
            sc.bad_epochs(),
            sc.config.factor,
            sc.config.patience,
            sc.config.min_lr,
            sc.config.threshold
        )?;
        writeln!(w, "history {}", s.history.len())?;
        for h in &s.history {
            writeln!(
                w,
                "{} {:e} {:e} {:e} {:e} {:e}",
                h.epoch, h.linear, h.rec, h.total, h.val_total, h.lr
            )?;
        }
        writeln!(w, "end")?;
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut r = LineReader::new(r);
        let head = r.line()?;
        if head != HEADER {
            return Err(r.err(format!("expected `{HEADER}`, found `{head}`")));
        }
        let rank = r.keyed_one("rank")?;
        let epoch = r.keyed_one("epoch")?;
        let best_epoch = r.keyed_one("best_epoch")?;
        let best_val = r.keyed_one("best_val")?;
        let since_best = r.keyed_one("since_best")?;
        r.keyed("best")?;
        let best = read_network_from(&mut r)?;
        r.keyed("current")?;
        let net = read_network_from(&mut r)?;
        let a = r.keyed("adam")?;
        if a.len() != 5 {
            return Err(r.err("`adam` needs step, lr, beta1, beta2 and eps"));
        }
        let config = AdamConfig {
            lr: r.parse(&a[1])?,
            beta1: r.parse(&a[2])?,
            beta2: r.parse(&a[3])?,
            eps: r.parse(&a[4])?,
        };
        let step: u64 = r.parse(&a[0])?;
        let n: usize = r.keyed_one("moments")?;
        let (mut m, mut v) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for _ in 0..n {
            m.push(read_mat(&mut r, "m")?);
            v.push(read_mat(&mut r, "v")?);
        }
        let shapes_match = n == net.params().len() && net.params().iter().zip(&m).all(|(p, q)| p.shape() == q.shape());
        if !shapes_match {
            return Err(r.err("optimizer moments do not match the network parameters"));
        }
        let adam = Adam::from_parts(config, m, v, step)?;
        let sc = r.keyed("scheduler")?;
        if sc.len() != 7 {
            return Err(r.err("`scheduler` needs 7 values"));
        }
        let scheduler = PlateauScheduler::from_parts(
            PlateauConfig {
                factor: r.parse(&sc[3])?,
                patience: r.parse(&sc[4])?,
                min_lr: r.parse(&sc[5])?,
                threshold: r.parse(&sc[6])?,
            },
            r.parse(&sc[0])?,
            r.parse(&sc[1])?,
            r.parse(&sc[2])?,
        );
        let rows: usize = r.keyed_one("history")?;
        let mut history = Vec::with_capacity(rows);
        for _ in 0..rows {
            let line = r.line()?;
            let tok: Vec<&str> = line.split_whitespace().collect();
            if tok.len() != 6 {
                return Err(r.err("history rows need 6 values"));
            }
            history.push(HistoryRow {
                epoch: r.parse(tok[0])?,
                linear: r.parse(tok[1])?,
                rec: r.parse(tok[2])?,
                total: r.parse(tok[3])?,
                val_total: r.parse(tok[4])?,
                lr: r.parse(tok[5])?,
            });
        }
        let end = r.line()?;
        if end != "end" {
            return Err(r.err(format!("expected `end`, found `{end}`")));
        }
        if best.dim() != net.dim() {
            return Err(r.err("best and current networks differ in dimension"));
        }
        Ok(Self {
            rank,
            state: TrainState {
                epoch,
                net,
                best,
                best_val,
                best_epoch,
                since_best,
                adam,
                scheduler,
                history,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_text(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_text(BufReader::new(File::open(path)?))
    }
}

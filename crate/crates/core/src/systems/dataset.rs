//! Sampled trajectory collections with a train/validation/test split.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{System, Trajectory};
use crate::linalg::Mat;
use crate::textio::LineReader;
use crate::{Error, Real, Result};

/// Environment variable capping the number of generation threads.
pub const THREADS_ENV: &str = "KOOPMAN_FLOW_THREADS";

const HEADER: &str = "koopman-flow-dataset 1";
// Mixed into the seed for the split shuffle so it is independent of sample 0.
const SPLIT_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

/// Thread cap from [`THREADS_ENV`], if set to a positive integer.
pub fn thread_limit() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Parse(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.6,
            validation: 0.2,
            test: 0.2,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|f| !(*f >= 0.0)) || ((parts.iter().sum::<f64>() - 1.0).abs() > 1e-9) {
            return Err(Error::InvalidConfig(format!(
                "split fractions must be non-negative and sum to 1, got {parts:?}"
            )));
        }
        Ok(())
    }

    /// `(⌊train·n⌋, ⌊validation·n⌋, remainder)`.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        // The small offset keeps products like 0.6 * 120 from landing just
        // below an integer.
        let a = (self.train * n as f64 + 1e-9).floor() as usize;
        let b = (self.validation * n as f64 + 1e-9).floor() as usize;
        let a = a.min(n);
        let b = b.min(n - a);
        (a, b, n - a - b)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub system: System,
    pub seed: u64,
    pub fractions: SplitFractions,
    pub train: Vec<Trajectory<T>>,
    pub validation: Vec<Trajectory<T>>,
    pub test: Vec<Trajectory<T>>,
}

/// Samples and simulates `n` trajectories, then splits them by a shuffled index.
/// Sample `i` draws its parameters from a generator seeded with `seed ^ i`.
pub fn make_dataset<T: Real>(system: &System, n: usize, seed: u64, fractions: SplitFractions) -> Result<Dataset<T>> {
    system.validate()?;
    fractions.validate()?;
    if n < 5 {
        return Err(Error::InvalidConfig(format!("a dataset needs at least 5 samples, got {n}")));
    }
    let run = |i: usize| -> Result<Trajectory<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ i as u64);
        let params = system.sample_params(&mut rng)?;
        let states = system.simulate::<T>(&params)?;
        Ok(Trajectory {
            sample: i,
            params,
            states,
        })
    };
    let generate = || -> Vec<Result<Trajectory<T>>> { (0..n).into_par_iter().map(run).collect() };
    let results = match thread_limit() {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("cannot build thread pool: {e}")))?
            .install(generate),
        None => generate(),
    };
    let mut all = Vec::with_capacity(n);
    for (i, r) in results.into_iter().enumerate() {
        all.push(r.map_err(|e| Error::Sample {
            index: i,
            source: Box::new(e),
        })?);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ SPLIT_STREAM));
    let (a, b, _) = fractions.sizes(n);
    let mut slots: Vec<Option<Trajectory<T>>> = all.into_iter().map(Some).collect();
    let mut take = |idx: &[usize]| -> Vec<Trajectory<T>> { idx.iter().map(|&i| slots[i].take().unwrap()).collect() };
    let train = take(&order[..a]);
    let validation = take(&order[a..a + b]);
    let test = take(&order[a + b..]);
    Ok(Dataset {
        system: system.clone(),
        seed,
        fractions,
        train,
        validation,
        test,
    })
}

impl<T: Real> Dataset<T> {
    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn split(&self, s: Split) -> &[Trajectory<T>] {
        match s {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    /// All trajectories tagged with their split, in train/validation/test order.
    pub fn iter(&self) -> impl Iterator<Item = (Split, &Trajectory<T>)> {
        [Split::Train, Split::Validation, Split::Test]
            .into_iter()
            .flat_map(move |s| self.split(s).iter().map(move |t| (s, t)))
    }

    pub fn write_text<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "{HEADER}")?;
        writeln!(w, "system {}", self.system.to_tokens().join(" "))?;
        writeln!(w, "seed {}", self.seed)?;
        writeln!(w, "dt {:e}", self.system.dt())?;
        writeln!(w, "dim {}", self.system.dim())?;
        writeln!(w, "steps {}", self.system.steps())?;
        let f = self.fractions;
        writeln!(w, "split {:e} {:e} {:e}", f.train, f.validation, f.test)?;
        writeln!(w, "samples {}", self.len())?;
        for (s, t) in self.iter() {
            let params: Vec<String> = t.params.iter().map(|p| format!("{p:e}")).collect();
            writeln!(w, "trajectory {} {} {}", t.sample, s.name(), params.join(" "))?;
            for r in 0..t.states.rows() {
                let row: Vec<String> = t.states.row(r).iter().map(|v| format!("{v:e}")).collect();
                writeln!(w, "{}", row.join(" "))?;
            }
        }
        writeln!(w, "end")?;
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut r = LineReader::new(r);
        let header = r.line()?;
        if header != HEADER {
            return Err(r.err(format!("unsupported dataset header `{header}`")));
        }
        let system = System::from_tokens(&r.keyed("system")?)?;
        let seed: u64 = r.keyed_one("seed")?;
        let _dt: f64 = r.keyed_one("dt")?;
        let dim: usize = r.keyed_one("dim")?;
        let steps: usize = r.keyed_one("steps")?;
        if dim != system.dim() || steps != system.steps() {
            return Err(r.err("dimension or step count disagrees with the system settings"));
        }
        let f = r.keyed("split")?;
        if f.len() != 3 {
            return Err(r.err("`split` takes three fractions"));
        }
        let fractions = SplitFractions {
            train: r.parse(&f[0])?,
            validation: r.parse(&f[1])?,
            test: r.parse(&f[2])?,
        };
        let n: usize = r.keyed_one("samples")?;
        let mut ds = Dataset {
            system,
            seed,
            fractions,
            train: Vec::new(),
            validation: Vec::new(),
            test: Vec::new(),
        };
        for _ in 0..n {
            let head = r.keyed("trajectory")?;
            if head.len() < 2 {
                return Err(r.err("trajectory header needs an id and a split"));
            }
            let sample: usize = r.parse(&head[0])?;
            let split = Split::parse(&head[1])?;
            let params = head[2..].iter().map(|t| r.parse(t)).collect::<Result<Vec<f64>>>()?;
            let mut data = Vec::with_capacity((steps + 1) * dim);
            for _ in 0..=steps {
                data.extend(r.values::<T>(dim)?);
            }
            let t = Trajectory {
                sample,
                params,
                states: Mat::from_vec(steps + 1, dim, data),
            };
            match split {
                Split::Train => ds.train.push(t),
                Split::Validation => ds.validation.push(t),
                Split::Test => ds.test.push(t),
            }
        }
        let end = r.line()?;
        if end != "end" {
            return Err(r.err(format!("expected `end`, found `{end}`")));
        }
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_text(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_text(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    /// Long-format CSV: `sample_id,split,t,x_1..x_m`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["sample_id".to_string(), "split".into(), "t".into()];
        header.extend((1..=self.system.dim()).map(|i| format!("x_{i}")));
        out.write_record(&header)?;
        for (s, t) in self.iter() {
            for k in 0..t.states.rows() {
                let mut rec = vec![t.sample.to_string(), s.name().to_string(), k.to_string()];
                rec.extend(t.states.row(k).iter().map(|v| format!("{v:e}")));
                out.write_record(&rec)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes() {
        let f = SplitFractions::default();
        assert_eq!(f.sizes(100), (60, 20, 20));
        assert_eq!(f.sizes(120), (72, 24, 24));
        assert_eq!(f.sizes(5), (3, 1, 1));
        let bad = SplitFractions {
            train: 0.7,
            validation: 0.2,
            test: 0.2,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn fixed_point_dataset() {
        let ds = make_dataset::<f64>(&System::fixed_point(), 120, 7, SplitFractions::default()).unwrap();
        assert_eq!((ds.train.len(), ds.validation.len(), ds.test.len()), (72, 24, 24));
        let mut ids: Vec<usize> = ds.iter().map(|(_, t)| t.sample).collect();
        ids.sort();
        assert_eq!(ids, (0..120).collect::<Vec<_>>());
        assert_eq!(ds, make_dataset::<f64>(&System::fixed_point(), 120, 7, SplitFractions::default()).unwrap());
        assert_ne!(ds, make_dataset::<f64>(&System::fixed_point(), 120, 8, SplitFractions::default()).unwrap());
    }

    #[test]
    fn sample_seed_is_counter_based() {
        let a = make_dataset::<f64>(&System::fixed_point(), 10, 3, SplitFractions::default()).unwrap();
        let b = make_dataset::<f64>(&System::fixed_point(), 20, 3, SplitFractions::default()).unwrap();
        let find = |d: &Dataset<f64>, i: usize| d.iter().find(|(_, t)| t.sample == i).unwrap().1.clone();
        for i in 0..10 {
            assert_eq!(find(&a, i), find(&b, i));
        }
    }

    #[test]
    fn too_few_samples_rejected() {
        assert!(matches!(
            make_dataset::<f64>(&System::fixed_point(), 4, 0, SplitFractions::default()),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn solver_failure_names_sample() {
        let mut sys = System::allen_cahn();
        sys.set("xi_mean", "1e150").unwrap();
        sys.set("dt", "1e6").unwrap();
        match make_dataset::<f64>(&sys, 5, 0, SplitFractions::default()) {
            Err(Error::Sample { index: 0, .. }) => {}
            other => panic!("expected sample error, got {other:?}"),
        }
    }

    #[test]
    fn text_and_csv_roundtrip() {
        let mut sys = System::burgers();
        sys.set("steps", "5").unwrap();
        let ds = make_dataset::<f64>(&sys, 6, 11, SplitFractions::default()).unwrap();
        let mut buf = Vec::new();
        ds.write_text(&mut buf).unwrap();
        let back = Dataset::<f64>::read_text(buf.as_slice()).unwrap();
        assert_eq!(back, ds);
        let mut csv_buf = Vec::new();
        ds.write_csv(&mut csv_buf).unwrap();
        let text = String::from_utf8(csv_buf).unwrap();
        assert!(text.starts_with("sample_id,split,t,x_1,x_2,"));
        assert_eq!(text.lines().count(), 1 + 6 * 6);
        let bad = String::from_utf8(buf).unwrap().replace("dim 30", "dim 31");
        assert!(Dataset::<f64>::read_text(bad.as_bytes()).is_err());
    }
}

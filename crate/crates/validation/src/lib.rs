//! Verdict reporting for the acceptance suite in `tests/acceptance.rs`.

use std::io::Write;
use std::time::Duration;

/// Outcome of one acceptance criterion.
#[derive(Clone, Debug)]
pub struct Verdict {
    pub id: u32,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl Verdict {
    /// `criterion <id> <name>: PASS|FAIL (<secs>s) <detail>`.
    pub fn line(&self) -> String {
        format!(
            "criterion {:>2} {:<22} {} ({:.1}s) {}",
            self.id,
            self.name,
            if self.pass { "PASS" } else { "FAIL" },
            self.elapsed.as_secs_f64(),
            self.detail
        )
    }

    /// Writes the line straight to the process stderr so it shows up even
    /// when test output is captured.
    pub fn print(&self) {
        let mut err = std::io::stderr().lock();
        let _ = writeln!(err, "{}", self.line());
        let _ = err.flush();
    }
}

/// Runs `attempt` on each seed in turn until one passes. Returns whether any
/// passed and the details of every attempt made.
pub fn first_passing_seed<F>(seeds: &[u64], mut attempt: F) -> (bool, String)
where
    F: FnMut(u64) -> (bool, String),
{
    let mut notes = Vec::new();
    for &s in seeds {
        let (ok, detail) = attempt(s);
        notes.push(format!("seed {s}: {detail}"));
        if ok {
            return (true, notes.join("; "));
        }
    }
    (false, notes.join("; "))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stops_at_first_pass() {
        let mut tried = Vec::new();
        let (ok, detail) = first_passing_seed(&[0, 1, 2], |s| {
            tried.push(s);
            (s == 1, format!("{s}"))
        });
        assert!(ok);
        assert_eq!(tried, vec![0, 1]);
        assert_eq!(detail, "seed 0: 0; seed 1: 1");
    }

    #[test]
    fn line_format() {
        let v = Verdict {
            id: 3,
            name: "gradients",
            pass: false,
            detail: "x".into(),
            elapsed: Duration::from_millis(1500),
        };
        assert!(v.line().starts_with("criterion  3 gradients"));
        assert!(v.line().contains("FAIL (1.5s) x"));
    }
}

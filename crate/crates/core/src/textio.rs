//! Line-oriented reader shared by the text file formats.

use std::io::BufRead;
use std::str::FromStr;

use std::io::Write;

use crate::linalg::Mat;
use crate::{Error, Real, Result};

pub(crate) struct LineReader<R> {
    inner: R,
    line_no: usize,
    buf: String,
}

impl<R: BufRead> LineReader<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner,
            line_no: 0,
            buf: String::new(),
        }
    }

    pub fn err(&self, msg: impl std::fmt::Display) -> Error {
        Error::Parse(format!("line {}: {msg}", self.line_no))
    }

    /// Next non-empty line, or `None` at end of input.
    pub fn next_line(&mut self) -> Result<Option<&str>> {
        loop {
            self.buf.clear();
            let n = self.inner.read_line(&mut self.buf)?;
            if n == 0 {
                return Ok(None);
            }
            self.line_no += 1;
            if !self.buf.trim().is_empty() {
                return Ok(Some(self.buf.trim()));
            }
        }
    }

    pub fn line(&mut self) -> Result<String> {
        match self.next_line()? {
            Some(l) => Ok(l.to_string()),
            None => Err(self.err("unexpected end of input")),
        }
    }

    /// Reads a line `key v1 v2 ...` and returns the values.
    pub fn keyed(&mut self, key: &str) -> Result<Vec<String>> {
        let line = self.line()?;
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some(k) if k == key => Ok(toks.map(str::to_string).collect()),
            other => Err(self.err(format!("expected `{key}`, found `{}`", other.unwrap_or("")))),
        }
    }

    pub fn keyed_one<V: FromStr>(&mut self, key: &str) -> Result<V> {
        let vals = self.keyed(key)?;
        if vals.len() != 1 {
            return Err(self.err(format!("`{key}` takes one value")));
        }
        self.parse(&vals[0])
    }

    pub fn parse<V: FromStr>(&self, tok: &str) -> Result<V> {
        tok.parse()
            .map_err(|_| self.err(format!("cannot parse `{tok}`")))
    }

    /// Reads a line of exactly `n` whitespace-separated values.
    pub fn values<V: FromStr>(&mut self, n: usize) -> Result<Vec<V>> {
        let line = self.line()?;
        let vals: Vec<&str> = line.split_whitespace().collect();
        if vals.len() != n {
            return Err(self.err(format!("expected {n} values, found {}", vals.len())));
        }
        vals.iter().map(|t| self.parse(t)).collect()
    }
}

pub(crate) fn join<V: std::fmt::Display>(vals: &[V]) -> String {
    let mut s = String::new();
    for (i, v) in vals.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        s.push_str(&v.to_string());
    }
    s
}

/// Writes `tag rows cols` followed by one line per row.
pub(crate) fn write_mat<T: Real, W: Write>(w: &mut W, tag: &str, m: &Mat<T>) -> Result<()> {
    writeln!(w, "{tag} {} {}", m.rows(), m.cols())?;
    for r in 0..m.rows() {
        let row: Vec<String> = m.row(r).iter().map(|v| format!("{v:e}")).collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    Ok(())
}

pub(crate) fn read_mat<T: Real, R: BufRead>(r: &mut LineReader<R>, tag: &str) -> Result<Mat<T>> {
    let shape = r.keyed(tag)?;
    if shape.len() != 2 {
        return Err(r.err(format!("`{tag}` needs rows and cols")));
    }
    let rows: usize = r.parse(&shape[0])?;
    let cols: usize = r.parse(&shape[1])?;
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        data.extend(r.values::<T>(cols)?);
    }
    Ok(Mat::from_vec(rows, cols, data))
}

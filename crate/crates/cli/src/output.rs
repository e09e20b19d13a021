//! Output files: directories, manifests and gnuplot data.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::{CliError, Result};

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

/// Runs `f` on a buffered writer for `path` and flushes it.
pub fn write_with<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    let mut w = create(path)?;
    f(&mut w)?;
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Whitespace-delimited columns with a `#` header line.
pub fn write_dat(path: &Path, columns: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    write_with(path, |w| {
        let io = |e| CliError::io(path, e);
        writeln!(w, "# {}", columns.join(" ")).map_err(io)?;
        for row in rows {
            let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{}", line.join(" ")).map_err(io)?;
        }
        Ok(())
    })
}

/// Key/value record of how an output directory was produced, written as TOML.
#[derive(Debug, Default)]
pub struct Manifest {
    table: toml::Table,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        let mut m = Self::default();
        m.set("command", command);
        m.set("version", crate::VERSION);
        m
    }

    pub fn set(&mut self, key: &str, value: impl Into<toml::Value>) -> &mut Self {
        self.table.insert(key.to_string(), value.into());
        self
    }

    pub fn set_u(&mut self, key: &str, value: u64) -> &mut Self {
        // TOML integers are signed; seeds above i64::MAX go in as text.
        match i64::try_from(value) {
            Ok(v) => self.set(key, v),
            Err(_) => self.set(key, value.to_string()),
        }
    }

    pub fn get(&self, key: &str) -> Option<&toml::Value> {
        self.table.get(key)
    }

    pub fn path(dir: &Path) -> PathBuf {
        dir.join("manifest.toml")
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = Self::path(dir);
        let text = toml::to_string(&self.table).map_err(|e| CliError::io(&path, e))?;
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = Self::path(dir);
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let table = text.parse::<toml::Table>().map_err(|e| CliError::io(&path, e))?;
        Ok(Self { table })
    }
}

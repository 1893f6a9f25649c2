//! Output bundles: CSV tables with fixed 17-significant-digit formatting and a
//! JSON summary that embeds the resolved config.

use serde::Serialize;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::CliError;

/// `v` with 17 significant digits; `NaN`, `inf`, `-inf` spelled out.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:.16e}")
    }
}

fn io(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub struct Bundle {
    dir: PathBuf,
}

impl Bundle {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn csv(&self, name: &str, header: &[String]) -> Result<CsvWriter, CliError> {
        let path = self.path(name);
        let file = File::create(&path).map_err(|e| io(&path, e))?;
        let mut w = CsvWriter { out: BufWriter::new(file), path };
        w.row(header.iter().map(String::as_str))?;
        Ok(w)
    }

    pub fn json(&self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let path = self.path(name);
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| io(&path, e))
    }
}

pub struct CsvWriter {
    out: BufWriter<File>,
    path: PathBuf,
}

/// One CSV cell.
pub enum Cell<'a> {
    F(f64),
    U(usize),
    S(&'a str),
}

impl CsvWriter {
    fn row<'a>(&mut self, cells: impl IntoIterator<Item = &'a str>) -> Result<(), CliError> {
        let line = cells.into_iter().collect::<Vec<_>>().join(",");
        writeln!(self.out, "{line}").map_err(|e| io(&self.path, e))
    }

    pub fn record(&mut self, cells: &[Cell]) -> Result<(), CliError> {
        let text: Vec<String> = cells
            .iter()
            .map(|c| match c {
                Cell::F(v) => fmt_f64(*v),
                Cell::U(v) => v.to_string(),
                Cell::S(s) => s.to_string(),
            })
            .collect();
        self.row(text.iter().map(String::as_str))
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.out.flush().map_err(|e| io(&self.path, e))
    }
}

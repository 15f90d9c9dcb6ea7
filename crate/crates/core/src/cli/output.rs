//! Output artifacts: CSV series, manifest and summary.
//!
//! Every CSV has the header `time,<index>,mean,sem`, where `<index>` is
//! `site` or `cut`; scalar series drop the index column. Numbers use 12
//! significant digits.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::trajectory::ObservableSeries;

/// Format with 12 significant digits.
pub fn number(x: f64) -> String {
    // Avoid "-0.0" so identical values print identically.
    let x = if x == 0.0 { 0.0 } else { x };
    format!("{x:.11e}")
}

pub fn scalar_csv(times: &[f64], mean: &[f64], sem: &[f64]) -> String {
    let mut s = String::from("time,mean,sem\n");
    for ((t, m), e) in times.iter().zip(mean).zip(sem) {
        let _ = writeln!(s, "{},{},{}", number(*t), number(*m), number(*e));
    }
    s
}

pub fn series_csv(series: &ObservableSeries) -> String {
    scalar_csv(&series.times, &series.mean, &series.sem)
}

/// One row per `(time, index)`; `values[k][j]` belongs to time `k` and index
/// `j + 1`.
pub fn indexed_csv(column: &str, times: &[f64], values: &[Vec<f64>], sems: Option<&[Vec<f64>]>) -> String {
    let mut s = format!("time,{column},mean,sem\n");
    for (k, (t, row)) in times.iter().zip(values).enumerate() {
        for (j, v) in row.iter().enumerate() {
            let e = sems.map_or(0.0, |e| e[k][j]);
            let _ = writeln!(s, "{},{},{},{}", number(*t), j + 1, number(*v), number(e));
        }
    }
    s
}

/// Per-index ensemble series, `series[j]` for index `j + 1`.
pub fn indexed_series_csv(column: &str, series: &[ObservableSeries]) -> String {
    let Some(first) = series.first() else {
        return format!("time,{column},mean,sem\n");
    };
    let transpose = |f: fn(&ObservableSeries) -> &Vec<f64>| -> Vec<Vec<f64>> {
        (0..first.times.len())
            .map(|k| series.iter().map(|s| f(s)[k]).collect())
            .collect()
    };
    let (mean, sem) = (transpose(|s| &s.mean), transpose(|s| &s.sem));
    indexed_csv(column, &first.times, &mean, Some(&sem))
}

/// Files written to one output directory, in order.
#[derive(Debug)]
pub struct Artifacts {
    dir: PathBuf,
    files: Vec<String>,
}

impl Artifacts {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        std::fs::write(self.dir.join(name), contents)?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

/// `key = value` lines.
#[derive(Debug, Default)]
pub struct KeyValues {
    lines: Vec<(String, String)>,
}

impl KeyValues {
    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.lines.push((key.into(), value.to_string()));
    }

    pub fn render(&self) -> String {
        self.lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

//! Run records, mean ± std aggregation and report files.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::metrics::{overall, write_per_class_csv, ConfusionMatrix};
use crate::models::Method;

/// One fine-tune + test evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub method: Method,
    pub low_shot: String,
    pub repeat: usize,
    pub seed: u64,
    pub best_epoch: usize,
    pub confusion: ConfusionMatrix,
}

impl RunRecord {
    pub fn macro_f1(&self) -> f64 {
        overall(&self.confusion).macro_f1
    }

    pub fn accuracy(&self) -> f64 {
        overall(&self.confusion).accuracy
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub method: Method,
    pub low_shot: String,
    pub mean_f1: f64,
    pub std_f1: f64,
    pub repeats: usize,
}

/// Test-set results of every run, grouped by (method, low-shot set).
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub class_names: Vec<String>,
    pub methods: Vec<Method>,
    pub low_shot: Vec<String>,
    pub runs: Vec<RunRecord>,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// F1 fractions as percentages, e.g. `80.52 ± 0.29`.
pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{:.2} ± {:.2}", 100.0 * mean, 100.0 * std)
}

impl ResultTable {
    /// Groups `runs`; method and low-shot order follow first appearance.
    pub fn from_runs(runs: Vec<RunRecord>) -> Result<Self> {
        let first = runs
            .first()
            .ok_or_else(|| Error::MissingData("no runs to tabulate".into()))?;
        let class_names = first.confusion.class_names.clone();
        let mut methods = Vec::new();
        let mut low_shot = Vec::new();
        for r in &runs {
            if r.confusion.class_names != class_names {
                return Err(Error::Input(format!(
                    "run {} {} r{} has a different class list",
                    r.method, r.low_shot, r.repeat
                )));
            }
            if !methods.contains(&r.method) {
                methods.push(r.method);
            }
            if !low_shot.contains(&r.low_shot) {
                low_shot.push(r.low_shot.clone());
            }
        }
        Ok(ResultTable {
            class_names,
            methods,
            low_shot,
            runs,
        })
    }

    pub fn runs_for(&self, method: Method, low_shot: &str) -> Vec<&RunRecord> {
        self.runs
            .iter()
            .filter(|r| r.method == method && r.low_shot == low_shot)
            .collect()
    }

    pub fn summary(&self, method: Method, low_shot: &str) -> Option<CellSummary> {
        let runs = self.runs_for(method, low_shot);
        if runs.is_empty() {
            return None;
        }
        let f1: Vec<f64> = runs.iter().map(|r| r.macro_f1()).collect();
        let (mean_f1, std_f1) = mean_std(&f1);
        Some(CellSummary {
            method,
            low_shot: low_shot.to_string(),
            mean_f1,
            std_f1,
            repeats: runs.len(),
        })
    }

    /// Every non-empty cell, methods outer, low-shot sets inner.
    pub fn summaries(&self) -> Vec<CellSummary> {
        self.methods
            .iter()
            .flat_map(|&m| self.low_shot.iter().filter_map(move |s| self.summary(m, s)))
            .collect()
    }

    /// Highest test macro F1; the earliest repeat wins ties.
    pub fn best_run(&self, method: Method, low_shot: &str) -> Option<&RunRecord> {
        self.runs_for(method, low_shot)
            .into_iter()
            .fold(None, |best: Option<&RunRecord>, r| match best {
                Some(b) if b.macro_f1() >= r.macro_f1() => Some(b),
                _ => Some(r),
            })
    }

    /// `method,low_shot,repeat,seed,best_epoch,accuracy,macro_f1,classes,confusion`
    /// with classes `;`-separated and the matrix as `;`-separated rows of
    /// space-separated counts.
    pub fn write_runs_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "method,low_shot,repeat,seed,best_epoch,accuracy,macro_f1,classes,confusion")?;
        for r in &self.runs {
            let rows: Vec<String> = r
                .confusion
                .counts
                .iter()
                .map(|row| row.iter().map(u64::to_string).collect::<Vec<_>>().join(" "))
                .collect();
            writeln!(
                w,
                "{},{},{},{},{},{:.6},{:.6},{},{}",
                r.method,
                r.low_shot,
                r.repeat,
                r.seed,
                r.best_epoch,
                r.accuracy(),
                r.macro_f1(),
                r.confusion.class_names.join(";"),
                rows.join(";")
            )?;
        }
        Ok(())
    }

    /// Reads a runs file back; accuracy and F1 are recomputed from the counts.
    pub fn read_runs_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut runs = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            runs.push(parse_run(&line).map_err(|e| Error::Input(format!("runs line {}: {e}", i + 1)))?);
        }
        Self::from_runs(runs)
    }

    pub fn load_runs(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_runs_csv(BufReader::new(File::open(path)?))
    }
}

fn parse_run(line: &str) -> std::result::Result<RunRecord, String> {
    let f: Vec<&str> = line.split(',').collect();
    if f.len() != 9 {
        return Err(format!("expected 9 fields, got {}", f.len()));
    }
    let num = |s: &str| s.trim().parse::<u64>().map_err(|_| format!("bad number '{s}'"));
    let class_names: Vec<String> = f[7].split(';').map(str::to_string).collect();
    let counts: Vec<Vec<u64>> = f[8]
        .split(';')
        .map(|row| row.split_whitespace().map(num).collect())
        .collect::<std::result::Result<_, _>>()?;
    Ok(RunRecord {
        method: f[0].parse().map_err(|e: Error| e.to_string())?,
        low_shot: f[1].to_string(),
        repeat: num(f[2])? as usize,
        seed: num(f[3])?,
        best_epoch: num(f[4])? as usize,
        confusion: ConfusionMatrix::from_counts(counts, class_names).map_err(|e| e.to_string())?,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Writes into `dir`:
/// - `results.csv`: one row per (method, low-shot set) with mean/std F1
/// - `f1_table.csv`: methods x low-shot sets, cells `mean ± std` in percent
/// - `runs.csv`: every run with its confusion counts
/// - `per_class_<method>_<set>.csv`, `confusion_<method>_<set>.csv`: best run
///
/// Returns the written paths in order.
pub fn emit_report(table: &ResultTable, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    if table.runs.is_empty() {
        return Err(Error::MissingData("empty result table".into()));
    }
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let path = dir.join("results.csv");
    let mut w = create(&path)?;
    writeln!(w, "method,low_shot,repeats,mean_macro_f1,std_macro_f1")?;
    for c in table.summaries() {
        writeln!(
            w,
            "{},{},{},{:.6},{:.6}",
            c.method, c.low_shot, c.repeats, c.mean_f1, c.std_f1
        )?;
    }
    w.flush()?;
    written.push(path);

    let path = dir.join("f1_table.csv");
    let mut w = create(&path)?;
    writeln!(w, "method,{}", table.low_shot.join(","))?;
    for &m in &table.methods {
        let cells: Vec<String> = table
            .low_shot
            .iter()
            .map(|s| {
                table
                    .summary(m, s)
                    .map_or(String::new(), |c| format_mean_std(c.mean_f1, c.std_f1))
            })
            .collect();
        writeln!(w, "{m},{}", cells.join(","))?;
    }
    w.flush()?;
    written.push(path);

    let path = dir.join("runs.csv");
    let mut w = create(&path)?;
    table.write_runs_csv(&mut w)?;
    w.flush()?;
    written.push(path);

    // BTreeMap only to keep the file order independent of table order
    let mut best = BTreeMap::new();
    for &m in &table.methods {
        for s in &table.low_shot {
            if let Some(r) = table.best_run(m, s) {
                best.insert(format!("{m}_{s}"), r);
            }
        }
    }
    for (key, r) in best {
        let path = dir.join(format!("per_class_{key}.csv"));
        let mut w = create(&path)?;
        write_per_class_csv(&r.confusion, &mut w)?;
        w.flush()?;
        written.push(path);
        let path = dir.join(format!("confusion_{key}.csv"));
        let mut w = create(&path)?;
        r.confusion.write_csv(&mut w)?;
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(method: Method, spec: &str, repeat: usize, diag: u64) -> RunRecord {
        RunRecord {
            method,
            low_shot: spec.into(),
            repeat,
            seed: 7 + repeat as u64,
            best_epoch: 3,
            confusion: ConfusionMatrix::from_counts(
                vec![vec![diag, 10 - diag], vec![1, 9]],
                vec!["normal".into(), "outlier".into()],
            )
            .unwrap(),
        }
    }

    #[test]
    fn population_std() {
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
        assert_eq!(format_mean_std(0.8052, 0.0029), "80.52 ± 0.29");
    }

    #[test]
    fn grid_and_round_trip() {
        let runs = vec![
            record(Method::Sup, "D1", 0, 5),
            record(Method::Sup, "D1", 1, 7),
            record(Method::Ae, "D1", 0, 9),
            record(Method::Ae, "D1", 1, 9),
        ];
        let table = ResultTable::from_runs(runs).unwrap();
        assert_eq!(table.summaries().len(), 2);
        assert_eq!(table.best_run(Method::Sup, "D1").unwrap().repeat, 1);
        assert_eq!(table.best_run(Method::Ae, "D1").unwrap().repeat, 0);

        let mut buf = Vec::new();
        table.write_runs_csv(&mut buf).unwrap();
        let back = ResultTable::read_runs_csv(&buf[..]).unwrap();
        assert_eq!(back, table);

        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(&table, dir.path()).unwrap();
        assert_eq!(files.len(), 3 + 4);
        let grid = fs::read_to_string(dir.path().join("f1_table.csv")).unwrap();
        assert_eq!(grid.lines().count(), 3);
        assert!(grid.starts_with("method,D1\nsup,"));
        let first: Vec<Vec<u8>> = files.iter().map(|p| fs::read(p).unwrap()).collect();
        emit_report(&back, dir.path()).unwrap();
        let second: Vec<Vec<u8>> = files.iter().map(|p| fs::read(p).unwrap()).collect();
        assert_eq!(first, second);
    }

    #[test]
    fn empty_table_rejected() {
        assert!(ResultTable::from_runs(Vec::new()).is_err());
    }
}

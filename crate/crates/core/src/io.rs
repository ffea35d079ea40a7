//! CSV formats for fixtures, trajectories and regularization paths.
//!
//! Floats are written with 17 significant digits so every value round-trips
//! exactly. Files written by this module start with a `#` comment line
//! carrying the config hash and master seed; readers skip `#` lines.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::optimizer::PathRecord;

/// Config hash and master seed embedded in every artifact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub config_hash: String,
    pub master_seed: u64,
}

impl Provenance {
    pub fn new(config_hash: impl Into<String>, master_seed: u64) -> Self {
        Self {
            config_hash: config_hash.into(),
            master_seed,
        }
    }

    fn comment_line(&self) -> String {
        format!("# config_hash={} master_seed={}", self.config_hash, self.master_seed)
    }

    fn parse_comment(line: &str) -> Option<Self> {
        let rest = line.strip_prefix('#')?.trim();
        let mut hash = None;
        let mut seed = None;
        for kv in rest.split_whitespace() {
            match kv.split_once('=') {
                Some(("config_hash", v)) => hash = Some(v.to_string()),
                Some(("master_seed", v)) => seed = v.parse().ok(),
                _ => {}
            }
        }
        Some(Self::new(hash?, seed?))
    }
}

/// Scientific notation with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// `fixture_{gt}_{sigma}_{trial}.csv`
pub fn fixture_file_name(gt: &str, sigma: f64, trial: usize) -> String {
    format!("fixture_{gt}_{sigma}_{trial}.csv")
}

/// Per-level trajectory file of a path run.
pub fn level_file_name(level: usize) -> String {
    format!("level_{level:03}.csv")
}

/// Clean and noisy samples of one trial on a shared time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub times: Vec<f64>,
    pub clean: DMatrix<f64>,
    pub data: DMatrix<f64>,
    pub provenance: Option<Provenance>,
}

/// One row of a path CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRow {
    pub level: usize,
    pub alpha: f64,
    pub data_loss: f64,
    pub reg_value: f64,
    pub inner_iters: usize,
    pub m: Vec<f64>,
}

impl From<&PathRecord> for PathRow {
    fn from(r: &PathRecord) -> Self {
        Self {
            level: r.level,
            alpha: r.alpha,
            data_loss: r.data_loss,
            reg_value: r.reg_value,
            inner_iters: r.inner_iterations,
            m: r.m.flatten(),
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse(format!("{other:?}")),
    }
}

fn open_writer(path: &Path, prov: Option<&Provenance>) -> Result<csv::Writer<BufWriter<File>>> {
    let mut out = BufWriter::new(File::create(path)?);
    if let Some(p) = prov {
        writeln!(out, "{}", p.comment_line())?;
    }
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out))
}

fn finish(w: csv::Writer<BufWriter<File>>) -> Result<()> {
    let mut inner = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    inner.flush()?;
    Ok(())
}

/// Header, numeric rows and provenance of a CSV file.
type Table = (Vec<String>, Vec<Vec<f64>>, Option<Provenance>);

/// Header and numeric rows of a CSV, plus provenance from a leading comment.
fn read_table(path: &Path) -> Result<Table> {
    let prov = {
        let mut first = String::new();
        BufReader::new(File::open(path)?).read_line(&mut first)?;
        Provenance::parse_comment(first.trim_end())
    };
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(csv_err)?;
    let header: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let row = rec
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("{}: row {}: not a number: '{f}'", path.display(), i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((header, rows, prov))
}

fn columns_with_prefix(header: &[String], prefix: &str) -> Vec<usize> {
    header
        .iter()
        .enumerate()
        .filter(|(_, h)| h.strip_prefix(prefix).is_some_and(|r| r.parse::<usize>().is_ok()))
        .map(|(i, _)| i)
        .collect()
}

fn state_header(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (0..n).map(move |h| format!("{prefix}_{h}"))
}

pub fn write_trajectory_csv(path: &Path, times: &[f64], u: &DMatrix<f64>, prov: Option<&Provenance>) -> Result<()> {
    if times.len() != u.nrows() {
        return Err(Error::dim("trajectory csv", times.len(), u.nrows()));
    }
    let mut w = open_writer(path, prov)?;
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain(state_header("u", u.ncols()))
        .collect();
    w.write_record(&header).map_err(csv_err)?;
    for (k, t) in times.iter().enumerate() {
        let row: Vec<String> = std::iter::once(fmt_f64(*t))
            .chain(u.row(k).iter().map(|v| fmt_f64(*v)))
            .collect();
        w.write_record(&row).map_err(csv_err)?;
    }
    finish(w)
}

/// Times and the `u_*` columns of a trajectory file.
pub fn read_trajectory_csv(path: &Path) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let (header, rows, _) = read_table(path)?;
    let cols = columns_with_prefix(&header, "u_");
    extract(path, &header, &rows, &cols)
}

fn extract(path: &Path, header: &[String], rows: &[Vec<f64>], cols: &[usize]) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if header.first().map(String::as_str) != Some("t") || cols.is_empty() {
        return Err(Error::Parse(format!("{}: expected header 't,u_0,...'", path.display())));
    }
    let mut times = Vec::with_capacity(rows.len());
    let mut u = DMatrix::zeros(rows.len(), cols.len());
    for (k, row) in rows.iter().enumerate() {
        if row.len() != header.len() {
            return Err(Error::Parse(format!(
                "{}: row {} has {} fields",
                path.display(),
                k + 1,
                row.len()
            )));
        }
        times.push(row[0]);
        for (h, &c) in cols.iter().enumerate() {
            u[(k, h)] = row[c];
        }
    }
    Ok((times, u))
}

/// `t,u_0..,d_0..`: clean trajectory next to its noisy samples.
pub fn write_fixture_csv(path: &Path, fixture: &Fixture) -> Result<()> {
    let (c, d) = (&fixture.clean, &fixture.data);
    if c.shape() != d.shape() || c.nrows() != fixture.times.len() {
        return Err(Error::dim(
            "fixture csv",
            format!("{:?}", c.shape()),
            format!("{:?}", d.shape()),
        ));
    }
    let mut w = open_writer(path, fixture.provenance.as_ref())?;
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain(state_header("u", c.ncols()))
        .chain(state_header("d", d.ncols()))
        .collect();
    w.write_record(&header).map_err(csv_err)?;
    for (k, t) in fixture.times.iter().enumerate() {
        let row: Vec<String> = std::iter::once(fmt_f64(*t))
            .chain(c.row(k).iter().map(|v| fmt_f64(*v)))
            .chain(d.row(k).iter().map(|v| fmt_f64(*v)))
            .collect();
        w.write_record(&row).map_err(csv_err)?;
    }
    finish(w)
}

/// Read a fixture. A file with only `u_*` columns is accepted as noiseless
/// data; a file with only `d_*` columns leaves `clean` empty.
pub fn read_fixture_csv(path: &Path) -> Result<Fixture> {
    let (header, rows, provenance) = read_table(path)?;
    let ucols = columns_with_prefix(&header, "u_");
    let dcols = columns_with_prefix(&header, "d_");
    let (times, clean, data) = match (ucols.is_empty(), dcols.is_empty()) {
        (false, false) => {
            if ucols.len() != dcols.len() {
                return Err(Error::Parse(format!(
                    "{}: u_ and d_ column counts differ",
                    path.display()
                )));
            }
            let (t, c) = extract(path, &header, &rows, &ucols)?;
            let (_, d) = extract(path, &header, &rows, &dcols)?;
            (t, c, d)
        }
        (false, true) => {
            let (t, c) = extract(path, &header, &rows, &ucols)?;
            (t, c.clone(), c)
        }
        (true, false) => {
            let (t, d) = extract(path, &header, &rows, &dcols)?;
            (t, DMatrix::zeros(0, d.ncols()), d)
        }
        (true, true) => {
            return Err(Error::Parse(format!("{}: no u_ or d_ columns", path.display())));
        }
    };
    Ok(Fixture {
        times,
        clean,
        data,
        provenance,
    })
}

/// `l,alpha,data_loss,reg_value,inner_iters,m_0..`
pub fn write_path_csv(path: &Path, records: &[PathRecord], prov: Option<&Provenance>) -> Result<()> {
    let rows: Vec<PathRow> = records.iter().map(PathRow::from).collect();
    write_path_rows(path, &rows, prov)
}

pub fn write_path_rows(path: &Path, rows: &[PathRow], prov: Option<&Provenance>) -> Result<()> {
    let n_m = rows.first().map_or(0, |r| r.m.len());
    let mut w = open_writer(path, prov)?;
    let header: Vec<String> = ["l", "alpha", "data_loss", "reg_value", "inner_iters"]
        .iter()
        .map(|s| s.to_string())
        .chain((0..n_m).map(|i| format!("m_{i}")))
        .collect();
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let row: Vec<String> = [
            r.level.to_string(),
            fmt_f64(r.alpha),
            fmt_f64(r.data_loss),
            fmt_f64(r.reg_value),
            r.inner_iters.to_string(),
        ]
        .into_iter()
        .chain(r.m.iter().copied().map(fmt_f64))
        .collect();
        w.write_record(&row).map_err(csv_err)?;
    }
    finish(w)
}

pub fn read_path_csv(path: &Path) -> Result<(Vec<PathRow>, Option<Provenance>)> {
    let (header, rows, prov) = read_table(path)?;
    let expected = ["l", "alpha", "data_loss", "reg_value", "inner_iters"];
    if header.len() < expected.len() || header[..5] != expected {
        return Err(Error::Parse(format!(
            "{}: expected header 'l,alpha,data_loss,reg_value,inner_iters,m_0,...'",
            path.display()
        )));
    }
    let out = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            if r.len() != header.len() {
                return Err(Error::Parse(format!(
                    "{}: row {} has {} fields",
                    path.display(),
                    i + 1,
                    r.len()
                )));
            }
            Ok(PathRow {
                level: r[0] as usize,
                alpha: r[1],
                data_loss: r[2],
                reg_value: r[3],
                inner_iters: r[4] as usize,
                m: r[5..].to_vec(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((out, prov))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn format_round_trips() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, f64::MAX, std::f64::consts::TAU] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
    }

    #[test]
    fn fixture_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(fixture_file_name("m1", 0.1, 3));
        assert!(path.ends_with("fixture_m1_0.1_3.csv"));
        let fx = Fixture {
            times: vec![0.0, 0.5, 1.0],
            clean: DMatrix::from_column_slice(3, 1, &[0.2, 0.3, 1.0 / 7.0]),
            data: DMatrix::from_column_slice(3, 1, &[0.25, 0.28, -1e-9]),
            provenance: Some(Provenance::new("abc", 7)),
        };
        write_fixture_csv(&path, &fx).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# config_hash=abc master_seed=7\nt,u_0,d_0\n"));
        assert_eq!(read_fixture_csv(&path).unwrap(), fx);
    }

    #[test]
    fn trajectory_round_trip_two_components() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(level_file_name(4));
        assert!(path.ends_with("level_004.csv"));
        let u = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        write_trajectory_csv(&path, &[0.0, 1.0], &u, None).unwrap();
        let (t, back) = read_trajectory_csv(&path).unwrap();
        assert_eq!(t, vec![0.0, 1.0]);
        assert_eq!(back, u);
        let fx = read_fixture_csv(&path).unwrap();
        assert_eq!(fx.data, u);
        assert_eq!(fx.provenance, None);
    }

    #[test]
    fn malformed_input_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "t,u_0\n0.0,abc\n").unwrap();
        assert!(matches!(read_trajectory_csv(&path), Err(Error::Parse(_))));
        std::fs::write(&path, "x,y\n0.0,1.0\n").unwrap();
        assert!(matches!(read_fixture_csv(&path), Err(Error::Parse(_))));
        assert!(matches!(read_path_csv(&path), Err(Error::Parse(_))));
        assert!(matches!(
            read_fixture_csv(&dir.path().join("missing.csv")),
            Err(Error::Io(_))
        ));
    }
}

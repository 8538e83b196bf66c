//! File formats.
//!
//! * Matrices: sparse triplets, one `i j value` line per nonzero, 0-based,
//!   `#` comments. Writers add a `# n N` line so trailing zero rows survive.
//! * Vectors: single-column CSV.
//! * Trajectories: little-endian `f64` records plus a JSON header
//!   `{dims, dt, count}` next to the data (`run.bin` pairs with `run.json`).
//!   CSV trajectories, one sample per row, are accepted for small data.
//! * Fields: CSV with box-center coordinates followed by field components.
//!
//! Floats are written with 17 significant digits, enough to round-trip.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::reconstruct::DriftField;
use crate::ulam::Trajectory;
use crate::{Error, Result};

/// 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_triplets(path: &Path, a: &Array2<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_triplets_to(&mut w, a)?;
    w.flush()?;
    Ok(())
}

pub fn write_triplets_to<W: Write>(w: &mut W, a: &Array2<f64>) -> Result<()> {
    writeln!(w, "# n {}", a.nrows())?;
    for ((i, j), &x) in a.indexed_iter() {
        if x != 0.0 {
            writeln!(w, "{i} {j} {}", fmt_f64(x))?;
        }
    }
    Ok(())
}

/// Reads a square matrix. The size comes from a `# n N` comment when
/// present, else from the largest index.
pub fn read_triplets(path: &Path) -> Result<Array2<f64>> {
    read_triplets_from(BufReader::new(File::open(path)?))
}

pub fn read_triplets_from<R: BufRead>(r: R) -> Result<Array2<f64>> {
    let mut declared = None;
    let mut entries = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if let Some(comment) = line.strip_prefix('#') {
            let mut it = comment.split_whitespace();
            if let (Some("n"), Some(n), None) = (it.next(), it.next(), it.next()) {
                declared = Some(n.parse::<usize>().map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?);
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Parse(format!("line {}: {what} in `{line}`", lineno + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(bad("expected `i j value`"));
        }
        let i: usize = fields[0].parse().map_err(|_| bad("bad row index"))?;
        let j: usize = fields[1].parse().map_err(|_| bad("bad column index"))?;
        let x: f64 = fields[2].parse().map_err(|_| bad("bad value"))?;
        entries.push((i, j, x));
    }
    let n = match declared {
        Some(n) => n,
        None => entries.iter().map(|&(i, j, _)| i.max(j) + 1).max().unwrap_or(0),
    };
    let mut a = Array2::zeros((n, n));
    for (i, j, x) in entries {
        if i >= n || j >= n {
            return Err(Error::Parse(format!("entry ({i}, {j}) outside a {n}x{n} matrix")));
        }
        a[[i, j]] += x;
    }
    Ok(a)
}

pub fn write_vector_csv(path: &Path, v: &Array1<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for x in v {
        w.write_record([fmt_f64(*x)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_vector_csv(path: &Path) -> Result<Array1<f64>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).comment(Some(b'#')).from_path(path)?;
    let mut out = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = rec.get(0).unwrap_or("").trim();
        out.push(field.parse().map_err(|_| Error::Parse(format!("{}: row {}: `{field}` is not a number", path.display(), k + 1)))?);
    }
    Ok(Array1::from(out))
}

/// Columns of equal length under a header row.
pub fn write_table_csv(path: &Path, headers: &[String], columns: &[Array1<f64>]) -> Result<()> {
    let rows = columns.first().map_or(0, |c| c.len());
    if headers.len() != columns.len() || columns.iter().any(|c| c.len() != rows) {
        return Err(Error::ParameterError("table columns must match headers and share a length".into()));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(headers)?;
    for r in 0..rows {
        w.write_record(columns.iter().map(|c| fmt_f64(c[r])))?;
    }
    w.flush()?;
    Ok(())
}

/// Unsigned integer column (occupancies, index maps).
pub fn write_index_csv<T: ToString>(path: &Path, header: &[&str], rows: &[Vec<T>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.iter().map(ToString::to_string))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryHeader {
    pub dims: usize,
    pub dt: f64,
    pub count: usize,
}

/// `run.bin` → `run.json`.
pub fn header_path(data: &Path) -> PathBuf {
    data.with_extension("json")
}

pub fn write_trajectory(path: &Path, t: &Trajectory) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for x in t.as_flat() {
        w.write_all(&x.to_le_bytes())?;
    }
    w.flush()?;
    write_json(&header_path(path), &TrajectoryHeader { dims: t.dims, dt: t.dt, count: t.len() })
}

/// Binary with its JSON header, or CSV (extension `.csv`) with `csv_dt`.
pub fn read_trajectory(path: &Path, csv_dt: Option<f64>) -> Result<Trajectory> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        let dt = csv_dt.ok_or_else(|| Error::ParameterError("CSV trajectories need an explicit dt".into()))?;
        return read_trajectory_csv(path, dt);
    }
    let header: TrajectoryHeader = read_json(&header_path(path))?;
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() != header.count * header.dims * 8 {
        return Err(Error::Parse(format!(
            "{}: {} bytes, header promises {} samples of {} values",
            path.display(),
            bytes.len(),
            header.count,
            header.dims
        )));
    }
    let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Trajectory::new(header.dims, header.dt, data)
}

pub fn read_trajectory_csv(path: &Path, dt: f64) -> Result<Trajectory> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).comment(Some(b'#')).trim(csv::Trim::All).from_path(path)?;
    let mut dims = 0;
    let mut data = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        dims = rec.len();
        for f in rec.iter() {
            data.push(f.parse::<f64>().map_err(|_| Error::Parse(format!("{}: `{f}` is not a number", path.display())))?);
        }
    }
    if data.is_empty() {
        return Err(Error::Parse(format!("{}: no samples", path.display())));
    }
    Trajectory::new(dims, dt, data)
}

pub fn write_trajectory_csv(path: &Path, t: &Trajectory) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for k in 0..t.len() {
        w.write_record(t.point(k).iter().map(|x| fmt_f64(*x)))?;
    }
    w.flush()?;
    Ok(())
}

/// Header `x0,..,x{d-1},f0,..,f{d-1}` then one row per box.
pub fn write_field_csv(path: &Path, field: &DriftField) -> Result<()> {
    let d = field.centers.ncols();
    let mut w = csv::Writer::from_path(path)?;
    let header: Vec<String> = (0..d).map(|k| format!("x{k}")).chain((0..d).map(|k| format!("f{k}"))).collect();
    w.write_record(&header)?;
    for (c, f) in field.centers.outer_iter().zip(field.values.outer_iter()) {
        w.write_record(c.iter().chain(f.iter()).map(|x| fmt_f64(*x)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn triplet_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        let a = array![[0.1, 0.0, 1.0 / 3.0], [0.0, 0.0, 0.0], [0.9, 1e-300, 2.0f64.sqrt()]];
        write_triplets(&path, &a).unwrap();
        assert_eq!(read_triplets(&path).unwrap(), a);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("0 2 3.3333333333333331e-1"));
    }

    #[test]
    fn triplet_parsing() {
        let a = read_triplets_from("# comment\n0 0 0.5\n\n1 0 0.5\n1 1 1\n".as_bytes()).unwrap();
        assert_eq!(a, array![[0.5, 0.0], [0.5, 1.0]]);
        assert!(read_triplets_from("0 0".as_bytes()).is_err());
        assert!(read_triplets_from("# n 1\n1 1 1.0".as_bytes()).is_err());
        assert_eq!(read_triplets_from("".as_bytes()).unwrap().dim(), (0, 0));
    }

    #[test]
    fn vector_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.csv");
        let v = array![0.1, 0.2, 0.7, 1.0 / 7.0];
        write_vector_csv(&path, &v).unwrap();
        assert_eq!(read_vector_csv(&path).unwrap(), v);
    }

    #[test]
    fn trajectory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t = Trajectory::new(2, 0.01, vec![0.1, -0.2, 0.3, 1.0 / 3.0, -5.0, 7.0]).unwrap();
        let bin = dir.path().join("run.bin");
        write_trajectory(&bin, &t).unwrap();
        assert_eq!(read_trajectory(&bin, None).unwrap(), t);
        let header: TrajectoryHeader = read_json(&dir.path().join("run.json")).unwrap();
        assert_eq!(header, TrajectoryHeader { dims: 2, dt: 0.01, count: 3 });
        let csv = dir.path().join("run.csv");
        write_trajectory_csv(&csv, &t).unwrap();
        assert_eq!(read_trajectory(&csv, Some(0.01)).unwrap(), t);
        assert!(read_trajectory(&csv, None).is_err());
    }

    #[test]
    fn truncated_binary_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let bin = dir.path().join("run.bin");
        write_trajectory(&bin, &Trajectory::new(1, 1.0, vec![1.0, 2.0]).unwrap()).unwrap();
        std::fs::write(&bin, [0u8; 12]).unwrap();
        assert!(matches!(read_trajectory(&bin, None), Err(Error::Parse(_))));
    }
}

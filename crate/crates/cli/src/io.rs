//! Dataset and matrix CSV files.
//!
//! Datasets have the header `x1,...,xd,t,y` with 1-based treatments. Matrix
//! files are plain numeric CSV with an optional header row.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use balpol_core::{LoggedDataset, Matrix};

use crate::error::{CliError, CliResult};

fn open(path: &Path) -> CliResult<File> {
    File::open(path).map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(r)
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn parse_real(field: &str, what: &str, line: u64) -> CliResult<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| CliError::Data(format!("line {line}: cannot parse {what} '{field}' as a number")))?;
    if !v.is_finite() {
        return Err(CliError::Data(format!("line {line}: non-finite {what}")));
    }
    Ok(v)
}

/// Reads a dataset. `m` defaults to the largest treatment seen; `maximize`
/// negates the outcomes so that every routine minimizes.
pub fn read_dataset_from<R: Read>(r: R, m: Option<usize>, maximize: bool) -> CliResult<LoggedDataset> {
    let mut rdr = reader(r);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(h) => h.map_err(|e| CliError::Data(format!("line 1: {e}")))?,
        None => return Err(CliError::Data("empty dataset file".into())),
    };
    let cols = header.len();
    let ok = cols >= 3
        && &header[cols - 2] == "t"
        && &header[cols - 1] == "y"
        && (0..cols - 2).all(|j| header[j] == format!("x{}", j + 1));
    if !ok {
        return Err(CliError::Data("line 1: header must be x1,...,xd,t,y".into()));
    }
    let d = cols - 2;
    let mut xs = Vec::new();
    let mut ts = Vec::new();
    let mut ys = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            CliError::Data(format!("line {line}: {e}"))
        })?;
        let line = line_of(&rec);
        if rec.len() != cols {
            return Err(CliError::Data(format!("line {line}: expected {cols} fields, found {}", rec.len())));
        }
        for j in 0..d {
            xs.push(parse_real(&rec[j], &format!("x{}", j + 1), line)?);
        }
        let t: usize = rec[d]
            .parse()
            .ok()
            .filter(|&t| t >= 1)
            .ok_or_else(|| CliError::Data(format!("line {line}: treatment '{}' is not an integer >= 1", &rec[d])))?;
        if let Some(m) = m {
            if t > m {
                return Err(CliError::Data(format!("line {line}: treatment {t} exceeds arm count {m}")));
            }
        }
        ts.push(t - 1);
        let y = parse_real(&rec[d + 1], "outcome", line)?;
        ys.push(if maximize { -y } else { y });
    }
    if ts.is_empty() {
        return Err(CliError::Data("dataset has no rows".into()));
    }
    let m = m.unwrap_or_else(|| ts.iter().max().map_or(0, |t| t + 1));
    let x = Matrix::from_row_slice(ts.len(), d, &xs);
    Ok(LoggedDataset::try_new(x, ts, ys, m)?)
}

pub fn read_dataset(path: &Path, m: Option<usize>, maximize: bool) -> CliResult<LoggedDataset> {
    read_dataset_from(open(path)?, m, maximize).map_err(|e| e.prefixed(&path.display().to_string()))
}

pub fn write_dataset<W: Write>(w: W, ds: &LoggedDataset) -> CliResult<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header: Vec<String> = (1..=ds.d()).map(|j| format!("x{j}")).collect();
    header.push("t".into());
    header.push("y".into());
    wtr.write_record(&header).map_err(csv_err)?;
    for i in 0..ds.n() {
        let mut row: Vec<String> = (0..ds.d()).map(|j| ds.x[(i, j)].to_string()).collect();
        row.push((ds.t[i] + 1).to_string());
        row.push(ds.y[i].to_string());
        wtr.write_record(&row).map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> CliError {
    CliError::Data(e.to_string())
}

/// Reads a numeric matrix; a first row that does not parse is taken as a
/// header.
pub fn read_matrix_from<R: Read>(r: R) -> CliResult<Matrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, rec) in reader(r).records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = line_of(&rec);
        let parsed: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) => {
                if let Some(first) = rows.first() {
                    if first.len() != v.len() {
                        return Err(CliError::Data(format!(
                            "line {line}: expected {} fields, found {}",
                            first.len(),
                            v.len()
                        )));
                    }
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(CliError::Data(format!("line {line}: non-finite entry")));
                }
                rows.push(v);
            }
            Err(_) if k == 0 => continue,
            Err(_) => return Err(CliError::Data(format!("line {line}: non-numeric entry"))),
        }
    }
    if rows.is_empty() {
        return Err(CliError::Data("matrix file has no rows".into()));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(Matrix::from_row_slice(rows.len(), rows[0].len(), &flat))
}

pub fn read_matrix_csv(path: &Path) -> CliResult<Matrix> {
    read_matrix_from(open(path)?).map_err(|e| e.prefixed(&path.display().to_string()))
}

/// Writes `header` and the rows of `m`.
pub fn write_matrix<W: Write>(w: W, header: &[String], m: &Matrix) -> CliResult<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(header).map_err(csv_err)?;
    for i in 0..m.nrows() {
        wtr.write_record(m.row(i).iter().map(|v| v.to_string())).map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Writes `text` to `path`, or to stdout when no path is given.
pub fn emit(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Data(format!("cannot write {}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

pub fn create(path: &Path) -> CliResult<File> {
    File::create(path).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

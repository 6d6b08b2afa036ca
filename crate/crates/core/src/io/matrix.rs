use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{
    check_subject_id, clear_csv_files, csv_error, csv_reader, format_exact, format_value, list_csv_files,
    numbered_header, parse_field, parse_key_values, read_text, write_atomic,
};
use crate::series::{Dataset, DayRows, Grid, SeriesMatrix};

/// Side file of a dataset directory: grid metadata and the number of rows
/// of every subject, since trailing missing days leave no trace in the CSV.
pub const DATASET_META: &str = "dataset.txt";

/// Header `day,<prefix>1..<prefix>w`, one line per day, values with at
/// most six decimals.
fn table_csv<R: DayRows + ?Sized>(y: &R, prefix: &str) -> String {
    let mut out = String::from("day");
    for i in 1..=y.width() {
        write!(out, ",{prefix}{i}").expect("string write");
    }
    out.push('\n');
    for (k, &day) in y.days().iter().enumerate() {
        write!(out, "{day}").expect("string write");
        for &v in y.row(k) {
            out.push(',');
            out.push_str(&format_value(v));
        }
        out.push('\n');
    }
    out
}

fn matrix_csv(y: &SeriesMatrix) -> String {
    table_csv(y, "c")
}

/// Matrix CSV: header `day,c1..cℓ`, one line per observed day.
pub fn write_matrix(path: &Path, y: &SeriesMatrix) -> Result<()> {
    write_atomic(path, matrix_csv(y).as_bytes())
}

/// Any day-indexed table in the matrix layout, with columns named
/// `<prefix>1..`. Values are written as they are, without clamping.
pub fn write_table<R: DayRows + ?Sized>(path: &Path, prefix: &str, t: &R) -> Result<()> {
    write_atomic(path, table_csv(t, prefix).as_bytes())
}

/// Reads one subject. Without `num_rows` the last observed day is taken as
/// the number of rows.
pub fn read_matrix(path: &Path, subject_id: &str, num_rows: Option<usize>) -> Result<SeriesMatrix> {
    let text = read_text(path)?;
    let mut rdr = csv_reader(&text);
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let l = numbered_header(&header, Some("day"), "c", path)?;
    let mut days = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = i + 2;
        if rec.len() != l + 1 {
            return Err(Error::parse(path, format!("line {line}: expected {} fields", l + 1)));
        }
        days.push(parse_field::<usize>(&rec[0], path, line, "day")?);
        for f in rec.iter().skip(1) {
            values.push(parse_field::<f64>(f, path, line, "value")?);
        }
    }
    let num_rows = num_rows.unwrap_or_else(|| days.last().copied().unwrap_or(0));
    SeriesMatrix::new(subject_id, num_rows, l, days, values).map_err(|e| match e {
        Error::Io { .. } | Error::Parse { .. } => e,
        other => Error::parse(path, other.to_string()),
    })
}

/// One `<subject_id>.csv` per subject plus [`DATASET_META`]. CSV files left
/// in the directory by an earlier write are removed first.
pub fn write_dataset(dir: &Path, d: &Dataset) -> Result<()> {
    for y in d.series() {
        check_subject_id(y.subject_id())?;
    }
    clear_csv_files(dir)?;
    let mut meta = String::new();
    if let Some(g) = d.grid() {
        writeln!(meta, "period_minutes={}", format_exact(g.period_minutes)).expect("string write");
        writeln!(meta, "sample_minutes={}", format_exact(g.sample_minutes)).expect("string write");
    }
    for y in d.series() {
        write_matrix(&dir.join(format!("{}.csv", y.subject_id())), y)?;
        writeln!(meta, "rows.{}={}", y.subject_id(), y.num_rows()).expect("string write");
    }
    write_atomic(&dir.join(DATASET_META), meta.as_bytes())
}

/// Reads every `*.csv` in `dir`, in file-name order; the subject id is the
/// file stem.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let meta_path = dir.join(DATASET_META);
    let mut rows = std::collections::HashMap::new();
    let mut period = None;
    let mut sample = None;
    if meta_path.exists() {
        for (k, v) in parse_key_values(&read_text(&meta_path)?, &meta_path)? {
            match k.as_str() {
                "period_minutes" => period = Some(parse_field::<f64>(&v, &meta_path, 0, &k)?),
                "sample_minutes" => sample = Some(parse_field::<f64>(&v, &meta_path, 0, &k)?),
                _ => match k.strip_prefix("rows.") {
                    Some(id) => {
                        rows.insert(id.to_string(), parse_field::<usize>(&v, &meta_path, 0, &k)?);
                    }
                    None => return Err(Error::parse(&meta_path, format!("unknown key {k}"))),
                },
            }
        }
    }
    let mut series = Vec::new();
    for path in list_csv_files(dir)? {
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::parse(&path, "file name is not valid UTF-8"))?
            .to_string();
        let n = rows.get(&id).copied();
        series.push(read_matrix(&path, &id, n)?);
    }
    if series.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let d = Dataset::new(series)?;
    Ok(match (period, sample) {
        (Some(period_minutes), Some(sample_minutes)) => d.with_grid(Grid {
            period_minutes,
            sample_minutes,
        }),
        _ => d,
    })
}

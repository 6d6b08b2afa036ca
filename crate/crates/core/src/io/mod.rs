//! Plain-text file formats: event logs, per-subject matrix CSVs and model
//! directories. Every file is written through a temporary file and renamed
//! into place.

mod events;
mod matrix;
mod model;

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub use events::{read_events, write_events};
pub use matrix::{read_dataset, read_matrix, write_dataset, write_matrix, write_table, DATASET_META};
pub use model::{read_model, write_model, META_FILE};

/// Writes `contents` to `path` atomically: a temporary file in the same
/// directory is renamed over the target.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(contents).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Decimal with at most six fractional digits, trailing zeros removed.
pub fn format_value(v: f64) -> String {
    let s = format!("{v:.6}");
    let s = if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    };
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

/// Shortest decimal that parses back to the same `f64`.
pub fn format_exact(v: f64) -> String {
    format!("{v}")
}

/// `key=value` lines. Blank lines and lines starting with `#` are skipped;
/// whitespace around keys and values is trimmed. Duplicate keys are an
/// error.
pub fn parse_key_values(text: &str, path: &Path) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::parse(path, format!("line {}: expected key=value", i + 1)));
        };
        let k = k.trim().to_string();
        if k.is_empty() {
            return Err(Error::parse(path, format!("line {}: empty key", i + 1)));
        }
        if out.iter().any(|(seen, _)| *seen == k) {
            return Err(Error::parse(path, format!("line {}: duplicate key {k}", i + 1)));
        }
        out.push((k, v.trim().to_string()));
    }
    Ok(out)
}

/// Subject ids become file names, so they may not contain path syntax.
pub(crate) fn check_subject_id(id: &str) -> Result<()> {
    let bad = id.is_empty()
        || id == "."
        || id == ".."
        || id.starts_with('.')
        || id.chars().any(|c| c == '/' || c == '\\' || c.is_control());
    if bad {
        return Err(Error::InvalidArgument(format!(
            "subject id {id:?} cannot be used as a file name"
        )));
    }
    Ok(())
}

/// Removes the regular `*.csv` files directly inside `dir`, if it exists.
pub(crate) fn clear_csv_files(dir: &Path) -> Result<()> {
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(Error::io(dir, e)),
    };
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.extension().is_some_and(|x| x == "csv") && path.is_file() {
            fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}

/// Sorted paths of the `*.csv` files directly inside `dir`.
pub(crate) fn list_csv_files(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x == "csv") && path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

pub(crate) fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

/// Checks a header of the form `first,<prefix>1..<prefix>n` and returns `n`.
pub(crate) fn numbered_header(header: &csv::StringRecord, first: Option<&str>, prefix: &str, path: &Path) -> Result<usize> {
    let mut fields = header.iter();
    if let Some(first) = first {
        if fields.next() != Some(first) {
            return Err(Error::parse(path, format!("header must start with {first}")));
        }
    }
    let mut n = 0;
    for (i, f) in fields.enumerate() {
        if f != format!("{prefix}{}", i + 1) {
            return Err(Error::parse(path, format!("unexpected header column {f:?}")));
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::parse(path, "header has no value columns".to_string()));
    }
    Ok(n)
}

pub(crate) fn parse_field<T: std::str::FromStr>(field: &str, path: &Path, line: usize, what: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::parse(path, format!("line {line}: invalid {what} {field:?}")))
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::parse(path, e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_formatting() {
        assert_eq!(format_value(0.5), "0.5");
        assert_eq!(format_value(1.0), "1");
        assert_eq!(format_value(0.0), "0");
        assert_eq!(format_value(-1e-9), "0");
        assert_eq!(format_value(0.1234567), "0.123457");
        assert_eq!(format_exact(100000.0), "100000");
        let x = 0.1 + 0.2;
        assert_eq!(format_exact(x).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn key_values() {
        let p = Path::new("x");
        let kv = parse_key_values("# c\n rank = 5\n\nlambda=1e5\n", p).unwrap();
        assert_eq!(kv, vec![("rank".into(), "5".into()), ("lambda".into(), "1e5".into())]);
        assert!(parse_key_values("rank", p).is_err());
        assert!(parse_key_values("a=1\na=2", p).is_err());
    }

    #[test]
    fn subject_ids() {
        assert!(check_subject_id("s01").is_ok());
        for bad in ["", "..", "a/b", ".hidden"] {
            assert!(check_subject_id(bad).is_err());
        }
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/f.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(read_text(&p).unwrap(), "two");
        assert_eq!(fs::read_dir(dir.path().join("sub")).unwrap().count(), 1);
    }
}

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ingest::{Event, EventKind, EventLog};
use crate::io::{csv_error, csv_reader, parse_field, read_text, write_atomic};

const HEADER: [&str; 3] = ["subject_id", "timestamp_minutes", "kind"];

/// Reads `subject_id,timestamp_minutes,kind` rows. Logs come back sorted by
/// subject id; events keep their file order.
pub fn read_events(path: &Path) -> Result<Vec<EventLog>> {
    let text = read_text(path)?;
    let mut rdr = csv_reader(&text);
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().ne(HEADER) {
        return Err(Error::parse(path, format!("header must be {}", HEADER.join(","))));
    }
    let mut logs: BTreeMap<String, Vec<Event>> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = i + 2;
        if rec.len() != 3 {
            return Err(Error::parse(path, format!("line {line}: expected 3 fields")));
        }
        let timestamp: f64 = parse_field(&rec[1], path, line, "timestamp")?;
        if !timestamp.is_finite() {
            return Err(Error::parse(path, format!("line {line}: timestamp must be finite")));
        }
        let kind = match &rec[2] {
            "start" => EventKind::SleepStart,
            "end" => EventKind::SleepEnd,
            other => return Err(Error::parse(path, format!("line {line}: unknown kind {other:?}"))),
        };
        logs.entry(rec[0].to_string()).or_default().push(Event { timestamp, kind });
    }
    Ok(logs
        .into_iter()
        .map(|(subject_id, events)| EventLog { subject_id, events })
        .collect())
}

pub fn write_events(path: &Path, logs: &[EventLog]) -> Result<()> {
    let mut out = HEADER.join(",");
    out.push('\n');
    for log in logs {
        for e in &log.events {
            let kind = match e.kind {
                EventKind::SleepStart => "start",
                EventKind::SleepEnd => "end",
            };
            writeln!(out, "{},{},{kind}", log.subject_id, e.timestamp).expect("string write");
        }
    }
    write_atomic(path, out.as_bytes())
}

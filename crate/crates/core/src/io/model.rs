use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{
    check_subject_id, clear_csv_files, csv_error, csv_reader, format_exact, list_csv_files, numbered_header,
    parse_field, parse_key_values, read_text, write_atomic,
};
use crate::series::DayRows;
use crate::solver::{BasisSet, CoefficientSet, FactorModel};

pub const META_FILE: &str = "meta.txt";
const BASIS_FILE: &str = "basis.csv";
const TRACE_FILE: &str = "objective.csv";
const COEFF_DIR: &str = "coeffs";

/// Writes `basis.csv`, `coeffs/<subject_id>.csv`, `objective.csv` and
/// `meta.txt`. Numbers are written in shortest round-trip form, so reading
/// the directory back gives an identical model.
pub fn write_model(dir: &Path, m: &FactorModel) -> Result<()> {
    for c in &m.coeffs {
        check_subject_id(c.subject_id())?;
    }
    let r = m.rank();

    let mut basis = (1..=r).map(|j| format!("F{j}")).collect::<Vec<_>>().join(",");
    basis.push('\n');
    for i in 0..m.basis.len() {
        let row: Vec<String> = (0..r).map(|j| format_exact(m.basis.function(j)[i])).collect();
        basis.push_str(&row.join(","));
        basis.push('\n');
    }
    write_atomic(&dir.join(BASIS_FILE), basis.as_bytes())?;

    let coeff_dir = dir.join(COEFF_DIR);
    clear_csv_files(&coeff_dir)?;
    let header = std::iter::once("day".to_string())
        .chain((1..=r).map(|j| format!("C{j}")))
        .collect::<Vec<_>>()
        .join(",");
    for c in &m.coeffs {
        let mut out = header.clone();
        out.push('\n');
        for (k, &day) in c.days().iter().enumerate() {
            write!(out, "{day}").expect("string write");
            for &v in c.row(k) {
                write!(out, ",{}", format_exact(v)).expect("string write");
            }
            out.push('\n');
        }
        write_atomic(&coeff_dir.join(format!("{}.csv", c.subject_id())), out.as_bytes())?;
    }

    let mut trace = String::from("iteration,objective\n");
    for (i, v) in m.objective_trace.iter().enumerate() {
        writeln!(trace, "{i},{}", format_exact(*v)).expect("string write");
    }
    write_atomic(&dir.join(TRACE_FILE), trace.as_bytes())?;

    let final_objective = m.final_objective().unwrap_or(f64::NAN);
    let meta = format!(
        "rank={r}\nlambda={}\niterations={}\nfinal_objective={}\nconverged={}\n",
        format_exact(m.lambda),
        m.iterations(),
        format_exact(final_objective),
        m.converged
    );
    write_atomic(&dir.join(META_FILE), meta.as_bytes())
}

/// Reads a model directory. Subjects come back in file-name order.
pub fn read_model(dir: &Path) -> Result<FactorModel> {
    let meta_path = dir.join(META_FILE);
    let mut rank = None;
    let mut lambda = None;
    let mut converged = false;
    for (k, v) in parse_key_values(&read_text(&meta_path)?, &meta_path)? {
        match k.as_str() {
            "rank" => rank = Some(parse_field::<usize>(&v, &meta_path, 0, &k)?),
            "lambda" => lambda = Some(parse_field::<f64>(&v, &meta_path, 0, &k)?),
            "converged" => converged = parse_field::<bool>(&v, &meta_path, 0, &k)?,
            "iterations" | "final_objective" => {}
            _ => return Err(Error::parse(&meta_path, format!("unknown key {k}"))),
        }
    }
    let (Some(rank), Some(lambda)) = (rank, lambda) else {
        return Err(Error::parse(&meta_path, "rank and lambda are required"));
    };

    let basis_path = dir.join(BASIS_FILE);
    let text = read_text(&basis_path)?;
    let mut rdr = csv_reader(&text);
    let header = rdr.headers().map_err(|e| csv_error(&basis_path, e))?.clone();
    if numbered_header(&header, None, "F", &basis_path)? != rank {
        return Err(Error::parse(&basis_path, format!("expected {rank} columns")));
    }
    let mut functions = vec![Vec::new(); rank];
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(&basis_path, e))?;
        if rec.len() != rank {
            return Err(Error::parse(&basis_path, format!("line {}: expected {rank} fields", i + 2)));
        }
        for (f, field) in functions.iter_mut().zip(rec.iter()) {
            f.push(parse_field::<f64>(field, &basis_path, i + 2, "value")?);
        }
    }
    let basis = BasisSet::new(functions).map_err(|e| Error::parse(&basis_path, e.to_string()))?;

    let mut coeffs = Vec::new();
    for path in list_csv_files(&dir.join(COEFF_DIR))? {
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::parse(&path, "file name is not valid UTF-8"))?
            .to_string();
        let text = read_text(&path)?;
        let mut rdr = csv_reader(&text);
        let header = rdr.headers().map_err(|e| csv_error(&path, e))?.clone();
        if numbered_header(&header, Some("day"), "C", &path)? != rank {
            return Err(Error::parse(&path, format!("expected {rank} coefficient columns")));
        }
        let mut days = Vec::new();
        let mut values = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| csv_error(&path, e))?;
            if rec.len() != rank + 1 {
                return Err(Error::parse(&path, format!("line {}: expected {} fields", i + 2, rank + 1)));
            }
            days.push(parse_field::<usize>(&rec[0], &path, i + 2, "day")?);
            for f in rec.iter().skip(1) {
                values.push(parse_field::<f64>(f, &path, i + 2, "value")?);
            }
        }
        coeffs.push(CoefficientSet::new(id, days, rank, values).map_err(|e| Error::parse(&path, e.to_string()))?);
    }

    let trace_path = dir.join(TRACE_FILE);
    let mut objective_trace = Vec::new();
    if trace_path.exists() {
        let text = read_text(&trace_path)?;
        let mut rdr = csv_reader(&text);
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| csv_error(&trace_path, e))?;
            let v = rec
                .get(1)
                .ok_or_else(|| Error::parse(&trace_path, format!("line {}: missing objective", i + 2)))?;
            objective_trace.push(parse_field::<f64>(v, &trace_path, i + 2, "objective")?);
        }
    }

    Ok(FactorModel {
        basis,
        coeffs,
        lambda,
        objective_trace,
        converged,
    })
}

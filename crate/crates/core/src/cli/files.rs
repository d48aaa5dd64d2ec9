//! CSV and summary files read and written by the command-line tool.
//!
//! Every output is assembled in memory and written through a temporary file in the target
//! directory that is renamed into place.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::CliError;
use crate::dataset::{Group, GroupedDataset};
use crate::evaluation::{ComparisonReport, CvRow};
use crate::model::{CoefficientMatrix, FusionWeights};

/// A dataset with its covariate names, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct DataTable {
    pub data: GroupedDataset,
    pub covariates: Vec<String>,
}

fn csv_error(source: &str, e: csv::Error) -> CliError {
    let line = e.position().map(|p| format!(" line {}", p.line())).unwrap_or_default();
    match e.kind() {
        csv::ErrorKind::Io(_) => CliError::io(format!("{source}{line}: {e}")),
        _ => CliError::validation(format!("{source}{line}: {e}")),
    }
}

/// Writes `bytes` to `path` atomically.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let io_err = |e: std::io::Error| CliError::io(format!("cannot write {}: {e}", path.display()));
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    tmp.write_all(bytes).map_err(io_err)?;
    tmp.as_file().sync_all().map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_io = |e: csv::Error| CliError::io(e.to_string());
    w.write_record(header).map_err(to_io)?;
    for row in rows {
        w.write_record(&row).map_err(to_io)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::io(e.to_string()))?;
    atomic_write(path, &bytes)
}

fn open(path: &Path) -> Result<std::fs::File, CliError> {
    std::fs::File::open(path).map_err(|e| CliError::io(format!("cannot open {}: {e}", path.display())))
}

fn parse_f64(source: &str, line: u64, column: &str, text: &str) -> Result<f64, CliError> {
    text.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| CliError::validation(format!("{source} line {line}: column `{column}`: `{text}` is not a finite number")))
}

pub fn read_data(path: &Path) -> Result<DataTable, CliError> {
    parse_data(open(path)?, &path.display().to_string())
}

/// Data CSV: header `group,y,<covariates...>`; groups are ordered by first appearance.
pub fn parse_data<R: Read>(reader: R, source: &str) -> Result<DataTable, CliError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(|e| csv_error(source, e))?.clone();
    if header.len() < 3 || &header[0] != "group" || &header[1] != "y" {
        return Err(CliError::validation(format!(
            "{source} line 1: header must be `group,y,<covariate>...`"
        )));
    }
    let covariates: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
    let p = covariates.len();
    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, (Vec<f64>, Vec<f64>)> = HashMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(source, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let id = record[0].to_string();
        if id.is_empty() {
            return Err(CliError::validation(format!("{source} line {line}: empty group id")));
        }
        let y = parse_f64(source, line, "y", &record[1])?;
        let mut xs = Vec::with_capacity(p);
        for (j, name) in covariates.iter().enumerate() {
            xs.push(parse_f64(source, line, name, &record[j + 2])?);
        }
        let entry = rows.entry(id.clone()).or_insert_with(|| {
            order.push(id);
            (Vec::new(), Vec::new())
        });
        entry.0.extend(xs);
        entry.1.push(y);
    }
    if order.is_empty() {
        return Err(CliError::validation(format!("{source}: no data rows")));
    }
    let groups = order
        .into_iter()
        .map(|id| {
            let (x, y) = rows.remove(&id).expect("group recorded");
            let n = y.len();
            Group::new(id, Array2::from_shape_vec((n, p), x).expect("row length checked"), Array1::from(y))
        })
        .collect();
    let data = GroupedDataset::new(groups)?;
    Ok(DataTable { data, covariates })
}

pub fn write_data(path: &Path, table: &DataTable) -> Result<(), CliError> {
    let mut header = vec!["group", "y"];
    header.extend(table.covariates.iter().map(String::as_str));
    let rows = table.data.groups().iter().flat_map(|g| {
        (0..g.n_samples()).map(move |i| {
            let mut row = vec![g.id.clone(), g.y[i].to_string()];
            row.extend(g.x.row(i).iter().map(f64::to_string));
            row
        })
    });
    write_csv(path, &header, rows)
}

/// Long format `covariate,group,beta`, covariate-major.
pub fn write_coefficients(
    path: &Path,
    b: &Array2<f64>,
    covariates: &[String],
    group_ids: &[String],
) -> Result<(), CliError> {
    let rows = covariates.iter().enumerate().flat_map(|(j, c)| {
        group_ids
            .iter()
            .enumerate()
            .map(move |(k, g)| vec![c.clone(), g.clone(), b[[j, k]].to_string()])
    });
    write_csv(path, &["covariate", "group", "beta"], rows)
}

/// Reads a coefficients file written by [`write_coefficients`]; every (covariate, group)
/// pair must appear exactly once.
pub fn read_coefficients(path: &Path, covariates: &[String], group_ids: &[String]) -> Result<CoefficientMatrix, CliError> {
    let source = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?);
    let header = rdr.headers().map_err(|e| csv_error(&source, e))?.clone();
    if header.iter().collect::<Vec<_>>() != ["covariate", "group", "beta"] {
        return Err(CliError::validation(format!("{source} line 1: header must be `covariate,group,beta`")));
    }
    let (p, k) = (covariates.len(), group_ids.len());
    let mut b = Array2::from_elem((p, k), f64::NAN);
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(&source, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let j = covariates.iter().position(|c| c == &record[0]);
        let g = group_ids.iter().position(|c| c == &record[1]);
        let (Some(j), Some(g)) = (j, g) else {
            return Err(CliError::validation(format!("{source} line {line}: unknown covariate or group")));
        };
        if !b[[j, g]].is_nan() {
            return Err(CliError::validation(format!("{source} line {line}: duplicate entry")));
        }
        b[[j, g]] = parse_f64(&source, line, "beta", &record[2])?;
    }
    if b.iter().any(|v| v.is_nan()) {
        return Err(CliError::validation(format!("{source}: missing coefficient entries")));
    }
    Ok(CoefficientMatrix::new(b)?)
}

/// Square matrix with a leading `group` column.
pub fn write_tau(path: &Path, tau: &FusionWeights, group_ids: &[String]) -> Result<(), CliError> {
    let mut header = vec!["group"];
    header.extend(group_ids.iter().map(String::as_str));
    let rows = group_ids.iter().enumerate().map(|(a, id)| {
        let mut row = vec![id.clone()];
        row.extend((0..group_ids.len()).map(|b| tau.get(a, b).to_string()));
        row
    });
    write_csv(path, &header, rows)
}

/// Pair file `group_a,group_b,value` used for manual weights or distances.
pub fn read_pairs(path: &Path) -> Result<Vec<(String, String, f64)>, CliError> {
    let source = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?);
    let header = rdr.headers().map_err(|e| csv_error(&source, e))?.clone();
    if header.len() != 3 {
        return Err(CliError::validation(format!("{source} line 1: expected `group_a,group_b,value`")));
    }
    rdr.records()
        .map(|record| {
            let record = record.map_err(|e| csv_error(&source, e))?;
            let line = record.position().map_or(0, |p| p.line());
            Ok((record[0].to_string(), record[1].to_string(), parse_f64(&source, line, "value", &record[2])?))
        })
        .collect()
}

pub fn write_cv_table(path: &Path, rows: &[CvRow]) -> Result<(), CliError> {
    let rows = rows.iter().map(|r| {
        vec![
            r.lambda.to_string(),
            r.gamma.to_string(),
            r.fold.to_string(),
            r.weighted_rmse.to_string(),
        ]
    });
    write_csv(path, &["lambda", "gamma", "fold", "weighted_rmse"], rows)
}

/// Long format `sweep,replicate,method,metric,subgroup,value`.
pub fn write_report(path: &Path, sweeps: &[(String, ComparisonReport)]) -> Result<(), CliError> {
    let rows = sweeps.iter().flat_map(|(label, report)| {
        report.records.iter().map(move |r| {
            vec![
                label.clone(),
                r.replicate.to_string(),
                r.method.to_string(),
                r.metric.to_string(),
                r.subgroup.clone().unwrap_or_default(),
                r.value.to_string(),
            ]
        })
    });
    write_csv(path, &["sweep", "replicate", "method", "metric", "subgroup", "value"], rows)
}

pub fn write_summary_table(path: &Path, sweeps: &[(String, ComparisonReport)]) -> Result<(), CliError> {
    let rows = sweeps.iter().flat_map(|(label, report)| {
        report.summary().into_iter().map(move |s| {
            vec![
                label.clone(),
                s.method.to_string(),
                s.metric.to_string(),
                s.mean.to_string(),
                s.sd.to_string(),
                s.count.to_string(),
            ]
        })
    });
    write_csv(path, &["sweep", "method", "metric", "mean", "sd", "count"], rows)
}

pub fn write_timings(path: &Path, sweeps: &[(String, ComparisonReport)]) -> Result<(), CliError> {
    let rows = sweeps.iter().flat_map(|(label, report)| {
        report
            .timings
            .iter()
            .map(move |t| vec![label.clone(), t.replicate.to_string(), t.method.to_string(), t.seconds.to_string()])
    });
    write_csv(path, &["sweep", "replicate", "method", "seconds"], rows)
}

pub fn write_failures(path: &Path, sweeps: &[(String, ComparisonReport)]) -> Result<(), CliError> {
    let rows = sweeps.iter().flat_map(|(label, report)| {
        report.failures.iter().map(move |f| {
            vec![
                label.clone(),
                f.replicate.to_string(),
                f.method.map(|m| m.to_string()).unwrap_or_default(),
                f.message.clone(),
            ]
        })
    });
    write_csv(path, &["sweep", "replicate", "method", "message"], rows)
}

/// `key = value` lines, readable by the config parser.
pub fn write_key_values(path: &Path, pairs: &[(&str, String)]) -> Result<(), CliError> {
    let text: String = pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    atomic_write(path, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::ExitKind;

    const SAMPLE: &str = "group,y,a,b\ng2,1.5,1,2\ng1,0,3,4\ng2,-1,5,6\n";

    #[test]
    fn data_parsing_groups_by_first_appearance() {
        let table = parse_data(SAMPLE.as_bytes(), "mem").unwrap();
        assert_eq!(table.covariates, vec!["a", "b"]);
        assert_eq!(table.data.group_ids(), vec!["g2", "g1"]);
        assert_eq!(table.data.group(0).x, ndarray::array![[1.0, 2.0], [5.0, 6.0]]);
        assert_eq!(table.data.group(0).y, ndarray::array![1.5, -1.0]);
    }

    #[test]
    fn malformed_data_reports_line() {
        let bad = "group,y,a\ng1,1,2\ng1,x,3\n";
        let err = parse_data(bad.as_bytes(), "mem").unwrap_err();
        assert_eq!(err.kind, ExitKind::Validation);
        assert!(err.message.contains("line 3"), "{}", err.message);
        let ragged = "group,y,a\ng1,1,2\ng1,1\n";
        let err = parse_data(ragged.as_bytes(), "mem").unwrap_err();
        assert!(err.message.contains("line 3"), "{}", err.message);
        assert!(parse_data("grp,y,a\n".as_bytes(), "mem").is_err());
    }

    #[test]
    fn coefficients_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.csv");
        let b = ndarray::array![[0.1, -2.5e-17], [1.0 / 3.0, 7.0]];
        let cov = vec!["a".to_string(), "b".to_string()];
        let ids = vec!["g1".to_string(), "g2".to_string()];
        write_coefficients(&path, &b, &cov, &ids).unwrap();
        let back = read_coefficients(&path, &cov, &ids).unwrap();
        assert_eq!(*back, b);
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let err = atomic_write(Path::new("/nonexistent-dir/x/out.csv"), b"x").unwrap_err();
        assert_eq!(err.kind, ExitKind::Io);
    }
}

//! CSV schemas for benchmark results, profile curves and run records.
//! Every file opens with a versioned header comment line.

use super::FormatError;
use crate::eval::{ProfileCurve, ResultRow, ResultsTable, RunOutcome};
use crate::optim::RunRecord;
use std::path::Path;

pub const HEADER: &str =
    "# metatopo-results v1\ntask_id,method,iterations,stop_reason,c_cont,c_thresh\n";

pub(crate) fn row_line(row: &ResultRow) -> String {
    format!(
        "{},{},{},{},{},{}\n",
        row.task_id,
        row.method,
        row.iterations,
        row.outcome.as_str(),
        row.c_continuous,
        row.c_thresholded
    )
}

pub fn encode(table: &ResultsTable) -> String {
    let mut out = String::from(HEADER);
    for row in &table.rows {
        out.push_str(&row_line(row));
    }
    out
}

pub fn parse(text: &str) -> Result<ResultsTable, FormatError> {
    let mut lines = text.lines();
    match lines.next() {
        Some("# metatopo-results v1") => {}
        Some(other) if other.starts_with('#') => {
            return Err(FormatError::Invalid(format!("unknown schema: {other}")))
        }
        _ => return Err(FormatError::Invalid("missing schema header".into())),
    }
    match lines.next() {
        Some("task_id,method,iterations,stop_reason,c_cont,c_thresh") => {}
        _ => return Err(FormatError::Invalid("missing column header".into())),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(FormatError::Invalid(format!(
                "row {i}: expected 6 fields, got {}",
                fields.len()
            )));
        }
        let bad = |what: &str| FormatError::Invalid(format!("row {i}: bad {what}"));
        let method = fields[1].trim();
        if method.is_empty() {
            return Err(bad("method"));
        }
        rows.push(ResultRow {
            task_id: fields[0].parse().map_err(|_| bad("task_id"))?,
            method: method.to_string(),
            iterations: fields[2].parse().map_err(|_| bad("iterations"))?,
            outcome: RunOutcome::parse(fields[3]).ok_or_else(|| bad("stop_reason"))?,
            c_continuous: fields[4].parse().map_err(|_| bad("c_cont"))?,
            c_thresholded: fields[5].parse().map_err(|_| bad("c_thresh"))?,
        });
    }
    Ok(ResultsTable { rows })
}

pub fn write(path: &Path, table: &ResultsTable) -> Result<(), FormatError> {
    std::fs::write(path, encode(table))?;
    Ok(())
}

pub fn read(path: &Path) -> Result<ResultsTable, FormatError> {
    parse(&std::fs::read_to_string(path)?)
}

/// One line per iteration (`iter,<index>,<loss>`) plus a trailing summary
/// row with the run metrics.
pub fn run_record_csv(record: &RunRecord) -> String {
    let mut out = String::from("# metatopo-runrecord v1\nrow,iteration,loss\n");
    for (i, loss) in record.loss_trace.iter().enumerate() {
        out.push_str(&format!("iter,{},{}\n", i + 1, loss));
    }
    out.push_str(&format!(
        "summary,iterations={},stop_reason={},c_cont={},c_thresh={}\n",
        record.iterations,
        record.stop_reason.as_str(),
        record.c_continuous,
        record.c_thresholded
    ));
    out
}

pub fn profiles_csv(curves: &[ProfileCurve]) -> String {
    let mut out = String::from("# metatopo-profile v1\nmethod,tau,fraction\n");
    for curve in curves {
        for &(tau, fraction) in &curve.points {
            out.push_str(&format!("{},{},{}\n", curve.method, tau, fraction));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_table() -> ResultsTable {
        ResultsTable {
            rows: vec![
                ResultRow {
                    task_id: 7,
                    method: "neural-meta".into(),
                    iterations: 42,
                    outcome: RunOutcome::Criterion,
                    c_continuous: 1.5,
                    c_thresholded: 1.25,
                },
                ResultRow {
                    task_id: 7,
                    method: "mma".into(),
                    iterations: 0,
                    outcome: RunOutcome::Failed,
                    c_continuous: f64::NAN,
                    c_thresholded: f64::NAN,
                },
            ],
        }
    }

    #[test]
    fn results_round_trip_including_nan() {
        let table = sample_table();
        let text = encode(&table);
        let back = parse(&text).unwrap();
        assert_eq!(back.rows.len(), 2);
        assert_eq!(back.rows[0], table.rows[0]);
        assert_eq!(back.rows[1].outcome, RunOutcome::Failed);
        assert!(back.rows[1].c_continuous.is_nan());
        // re-encoding is identical text
        assert_eq!(encode(&back), text);
    }

    #[test]
    fn parse_rejects_malformed_text() {
        assert!(parse("").is_err());
        assert!(parse("# wrong v9\n").is_err());
        assert!(parse("# metatopo-results v1\nbad header\n").is_err());
        let text = "# metatopo-results v1\ntask_id,method,iterations,stop_reason,c_cont,c_thresh\n1,m,x,criterion,1.0,1.0\n";
        assert!(parse(text).is_err());
        let text = "# metatopo-results v1\ntask_id,method,iterations,stop_reason,c_cont,c_thresh\n1,m,3,what,1.0,1.0\n";
        assert!(parse(text).is_err());
    }
}

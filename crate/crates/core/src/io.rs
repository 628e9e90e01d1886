//! CSV tables, decay-curve input and plain-text reports.

use std::fmt::Write as _;
use std::io::Write;

use crate::error::{Error, FitDiagnostics, Result};
use crate::experiments::ExperimentResult;
use crate::qp::DecayCurve;

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// A header and rows of numbers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NumericTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl NumericTable {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self { header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(Error::InvalidState(format!("row has {} columns, header has {}", row.len(), self.header.len())));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let csv_err = |e: csv::Error| Error::InvalidState(format!("csv output: {e}"));
        out.write_record(&self.header).map_err(csv_err)?;
        for row in &self.rows {
            out.write_record(row.iter().map(|v| format_f64(*v))).map_err(csv_err)?;
        }
        out.flush().map_err(|e| Error::InvalidState(format!("csv output: {e}")))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is UTF-8")
    }
}

/// Reads a numeric CSV with a header row; `#` lines are comments.
pub fn parse_numeric_csv(text: &str) -> Result<NumericTable> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Parse { line: csv_line(&e), message: e.to_string() })?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(Error::Parse { line: 1, message: "missing header row".into() });
    }
    let mut table = NumericTable { header, rows: Vec::new() };
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse { line: csv_line(&e), message: e.to_string() })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.iter().all(str::is_empty) {
            continue;
        }
        if record.len() != table.header.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", table.header.len(), record.len()),
            });
        }
        let mut row = Vec::with_capacity(record.len());
        for field in record.iter() {
            let v: f64 = field.parse().map_err(|_| Error::Parse { line, message: format!("`{field}` is not a number") })?;
            if !v.is_finite() {
                return Err(Error::Parse { line, message: format!("`{field}` is not finite") });
            }
            row.push(v);
        }
        table.rows.push(row);
    }
    Ok(table)
}

fn csv_line(e: &csv::Error) -> usize {
    e.position().map_or(0, |p| p.line() as usize)
}

/// Two-column relaxation data with header `time_s,p1`.
pub fn parse_decay_csv(text: &str) -> Result<DecayCurve> {
    let table = parse_numeric_csv(text)?;
    if table.header != ["time_s", "p1"] {
        return Err(Error::Parse { line: 1, message: format!("expected header `time_s,p1`, found `{}`", table.header.join(",")) });
    }
    if table.rows.is_empty() {
        return Err(Error::Parse { line: 2, message: "no samples".into() });
    }
    DecayCurve::new(table.rows.iter().map(|r| r[0]).collect(), table.rows.iter().map(|r| r[1]).collect())
}

pub fn decay_csv(curve: &DecayCurve) -> NumericTable {
    NumericTable {
        header: vec!["time_s".into(), "p1".into()],
        rows: curve.times.iter().zip(&curve.p1).map(|(t, p)| vec![*t, *p]).collect(),
    }
}

/// Long format: one row per point, axis columns then `p0, p1, …`.
pub fn experiment_table(result: &ExperimentResult) -> NumericTable {
    let mut header: Vec<String> = result.axes.iter().map(|a| a.axis.clone()).collect();
    header.extend((0..result.dim).map(|k| format!("p{k}")));
    let rows = (0..result.point_count())
        .map(|i| {
            let mut row = result.coordinates(i);
            row.extend_from_slice(&result.populations[i]);
            row
        })
        .collect();
    NumericTable { header, rows }
}

/// Plain-text report: aligned `key: value` lines, parameter tables and matrices.
#[derive(Debug, Clone, Default)]
pub struct Report {
    text: String,
}

impl Report {
    pub fn new(title: &str) -> Self {
        let mut r = Self::default();
        let _ = writeln!(r.text, "{title}\n{}", "=".repeat(title.chars().count()));
        r
    }

    pub fn section(&mut self, name: &str) -> &mut Self {
        let _ = writeln!(self.text, "\n[{name}]");
        self
    }

    pub fn field(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        let _ = writeln!(self.text, "{key:<28} {value}");
        self
    }

    pub fn number(&mut self, key: &str, value: f64) -> &mut Self {
        self.field(key, format_f64(value))
    }

    /// Value with its one-sigma uncertainty.
    pub fn estimate(&mut self, key: &str, value: f64, err: f64) -> &mut Self {
        self.field(key, format!("{} ± {}", format_f64(value), format_f64(err)))
    }

    pub fn diagnostics(&mut self, d: &FitDiagnostics) -> &mut Self {
        self.field("iterations", d.iterations)
            .number("final cost", d.cost)
            .number("damping", d.damping)
            .number("gradient norm", d.gradient_norm)
    }

    pub fn matrix(&mut self, key: &str, labels: &[String], m: &[Vec<f64>]) -> &mut Self {
        let _ = writeln!(self.text, "{key}:");
        let _ = writeln!(self.text, "  {:<14}{}", "", labels.iter().map(|l| format!("{l:>24}")).collect::<String>());
        for (label, row) in labels.iter().zip(m) {
            let _ = writeln!(self.text, "  {label:<14}{}", row.iter().map(|v| format!("{:>24}", format!("{v:.6e}"))).collect::<String>());
        }
        self
    }

    pub fn line(&mut self, text: &str) -> &mut Self {
        let _ = writeln!(self.text, "{text}");
        self
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

impl std::fmt::Display for Report {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.2250738585072014e-308, 6.02214076e23, 0.0, 1e-9] {
            let s = format_f64(v);
            assert_eq!(s.parse::<f64>().unwrap(), v);
            assert_eq!(s.split('e').next().unwrap().trim_start_matches('-').len(), 18);
        }
    }

    #[test]
    fn table_round_trip() {
        let mut t = NumericTable::new(["t_s", "p0", "p1"]);
        t.push(vec![0.0, 1.0, 0.0]).unwrap();
        t.push(vec![1e-9, 0.75, 0.25]).unwrap();
        assert!(t.push(vec![1.0]).is_err());
        let s = t.to_csv_string();
        assert!(s.starts_with("t_s,p0,p1\n0.0000000000000000e0,"));
        assert_eq!(parse_numeric_csv(&s).unwrap(), t);
    }

    #[test]
    fn decay_csv_parsing() {
        let c = parse_decay_csv("# bundled\ntime_s, p1\n0, 1\n1e-6, 0.9\n\n2e-6,0.81\n").unwrap();
        assert_eq!(c.times, vec![0.0, 1e-6, 2e-6]);
        assert_eq!(c.p1, vec![1.0, 0.9, 0.81]);
        assert!(matches!(parse_decay_csv("t,p\n0,1\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_decay_csv("time_s,p1\n0,1\n1,x\n"), Err(Error::Parse { line: 3, .. })));
        assert!(matches!(parse_decay_csv("time_s,p1\n0,1,2\n"), Err(Error::Parse { line: 2, .. })));
        assert!(parse_decay_csv("time_s,p1\n-1,1\n").is_err());
        assert!(parse_decay_csv("time_s,p1\n0,NaN\n").is_err());
        assert!(parse_decay_csv("time_s,p1\n").is_err());
        assert!(parse_decay_csv("").is_err());
    }

    #[test]
    fn report_layout() {
        let mut r = Report::new("fit");
        r.section("parameters").estimate("p", 0.5, 0.25).field("weighted", true);
        let s = r.to_string();
        assert!(s.starts_with("fit\n===\n\n[parameters]\n"));
        assert!(s.contains("5.0000000000000000e-1 ± 2.5000000000000000e-1"));
    }
}

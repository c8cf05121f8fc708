//! Columnar numeric tables with an outcome and optional subject grouping.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use indexmap::IndexMap;
use log::info;

use crate::error::{Error, Result};

/// Numeric table: every column has the same length and no missing values.
///
/// Rows may be grouped by a subject identifier for repeated measures. Without
/// one every row is its own subject.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: IndexMap<String, Vec<f64>>,
    outcome: String,
    subject_id: Option<String>,
    subjects: Vec<String>,
    dropped_rows: usize,
}

impl Dataset {
    pub fn new(columns: IndexMap<String, Vec<f64>>, outcome: &str) -> Result<Self> {
        let n = columns
            .get(outcome)
            .ok_or_else(|| Error::MissingColumn(outcome.to_string()))?
            .len();
        if n == 0 {
            return Err(Error::InvalidData("dataset has no rows".into()));
        }
        for (name, col) in &columns {
            if col.len() != n {
                return Err(Error::InvalidData(format!(
                    "column `{name}` has {} rows, expected {n}",
                    col.len()
                )));
            }
        }
        if let Some(i) = columns[outcome].iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "outcome `{outcome}` is not finite at row {i}"
            )));
        }
        Ok(Self {
            columns,
            outcome: outcome.to_string(),
            subject_id: None,
            subjects: (0..n).map(|i| i.to_string()).collect(),
            dropped_rows: 0,
        })
    }

    /// Attach a subject label per row.
    pub fn with_subjects(mut self, name: &str, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.n_rows() {
            return Err(Error::InvalidData(format!(
                "subject column `{name}` has {} rows, expected {}",
                labels.len(),
                self.n_rows()
            )));
        }
        self.subject_id = Some(name.to_string());
        self.subjects = labels;
        Ok(self)
    }

    pub fn n_rows(&self) -> usize {
        self.subjects.len()
    }

    pub fn outcome_name(&self) -> &str {
        &self.outcome
    }

    pub fn outcome(&self) -> &[f64] {
        &self.columns[&self.outcome]
    }

    pub fn subject_id(&self) -> Option<&str> {
        self.subject_id.as_deref()
    }

    pub fn subject_labels(&self) -> &[String] {
        &self.subjects
    }

    /// Rows dropped for missing values when the table was loaded.
    pub fn dropped_rows(&self) -> usize {
        self.dropped_rows
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.columns.contains_key(name)
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.columns
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.keys().map(String::as_str)
    }

    /// Replace or add a column.
    pub fn set_column(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        if values.len() != self.n_rows() {
            return Err(Error::InvalidData(format!(
                "column `{name}` has {} rows, expected {}",
                values.len(),
                self.n_rows()
            )));
        }
        if name == self.outcome && values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("outcome `{name}` is not finite")));
        }
        self.columns.insert(name.to_string(), values);
        Ok(())
    }

    /// Row indices grouped by subject, in order of first appearance.
    pub fn subject_groups(&self) -> Vec<Vec<usize>> {
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for (row, label) in self.subjects.iter().enumerate() {
            let g = *index.entry(label.as_str()).or_insert_with(|| {
                groups.push(Vec::new());
                groups.len() - 1
            });
            groups[g].push(row);
        }
        groups
    }

    /// New dataset restricted to `rows`, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let columns = self
            .columns
            .iter()
            .map(|(k, v)| (k.clone(), rows.iter().map(|&r| v[r]).collect()))
            .collect();
        Dataset {
            columns,
            outcome: self.outcome.clone(),
            subject_id: self.subject_id.clone(),
            subjects: rows.iter().map(|&r| self.subjects[r].clone()).collect(),
            dropped_rows: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub outcome: String,
    pub subject_id: Option<String>,
    pub delimiter: u8,
    /// Columns that must be numeric and complete. `None` means every column
    /// other than the subject id.
    pub used_columns: Option<Vec<String>>,
}

impl LoadOptions {
    pub fn new(outcome: &str) -> Self {
        Self {
            outcome: outcome.to_string(),
            subject_id: None,
            delimiter: b',',
            used_columns: None,
        }
    }
}

/// Read a delimited table with a header row. Rows with an empty cell in any
/// used column are dropped and counted.
pub fn load_dataset(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_dataset(file, opts)
}

pub fn read_dataset<R: std::io::Read>(reader: R, opts: &LoadOptions) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .has_headers(true)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Table(e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let position = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };

    position(&opts.outcome)?;
    let subject_pos = opts.subject_id.as_deref().map(position).transpose()?;

    let mut used: Vec<(String, usize)> = match &opts.used_columns {
        Some(names) => names
            .iter()
            .map(|n| Ok((n.clone(), position(n)?)))
            .collect::<Result<_>>()?,
        None => headers
            .iter()
            .enumerate()
            .filter(|&(i, _)| Some(i) != subject_pos)
            .map(|(i, h)| (h.clone(), i))
            .collect(),
    };
    if !used.iter().any(|(n, _)| n == &opts.outcome) {
        used.insert(0, (opts.outcome.clone(), position(&opts.outcome)?));
    }
    let mut seen = HashSet::new();
    used.retain(|(n, _)| seen.insert(n.clone()));

    let mut columns: IndexMap<String, Vec<f64>> =
        used.iter().map(|(n, _)| (n.clone(), Vec::new())).collect();
    let mut subjects = Vec::new();
    let mut dropped = 0usize;

    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Table(e.to_string()))?;
        let cell = |i: usize| record.get(i).unwrap_or("").trim();
        let mut values = Vec::with_capacity(used.len());
        let mut missing = false;
        for (name, i) in &used {
            let raw = cell(*i);
            if raw.is_empty() {
                missing = true;
                continue;
            }
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => values.push(v),
                _ => {
                    return Err(Error::NonNumeric {
                        column: name.clone(),
                        row: row + 1,
                        value: raw.to_string(),
                    })
                }
            }
        }
        let subject = subject_pos.map(|i| cell(i).to_string());
        if missing || subject.as_deref() == Some("") {
            dropped += 1;
            continue;
        }
        for ((_, col), v) in columns.iter_mut().zip(values) {
            col.push(v);
        }
        subjects.push(subject.unwrap_or_else(|| subjects.len().to_string()));
    }
    if dropped > 0 {
        info!("dropped {dropped} row(s) with missing values");
    }

    let mut data = Dataset::new(columns, &opts.outcome)?;
    if let Some(name) = &opts.subject_id {
        data = data.with_subjects(name, subjects)?;
    }
    data.dropped_rows = dropped;
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str, outcome: &str) -> Result<Dataset> {
        read_dataset(text.as_bytes(), &LoadOptions::new(outcome))
    }

    #[test]
    fn three_complete_rows() {
        let d = load("y,g1,e1\n1,0,0.5\n2,1,1.5\n3,1,-2\n", "y").unwrap();
        assert_eq!(d.n_rows(), 3);
        assert_eq!(d.dropped_rows(), 0);
        assert_eq!(d.column("e1").unwrap(), &[0.5, 1.5, -2.0]);
    }

    #[test]
    fn missing_outcome_row_dropped() {
        let d = load("y,g1\n1,0\n,1\n3,1\n", "y").unwrap();
        assert_eq!(d.n_rows(), 2);
        assert_eq!(d.dropped_rows(), 1);
        assert_eq!(d.outcome(), &[1.0, 3.0]);
    }

    #[test]
    fn absent_outcome_column() {
        let err = load("x,g1\n1,0\n", "y").unwrap_err();
        assert!(matches!(err, Error::MissingColumn(ref c) if c == "y"));
        assert!(err.to_string().contains("missing column"));
    }

    #[test]
    fn non_numeric_cell() {
        let err = load("y,g1\n1,0\n2,abc\n", "y").unwrap_err();
        assert!(matches!(err, Error::NonNumeric { ref column, row: 2, .. } if column == "g1"));
    }

    #[test]
    fn unused_columns_are_not_parsed() {
        let mut opts = LoadOptions::new("y");
        opts.used_columns = Some(vec!["g1".into()]);
        let d = read_dataset("y,g1,note\n1,0,hello\n2,1,\n".as_bytes(), &opts).unwrap();
        assert_eq!(d.n_rows(), 2);
        assert!(!d.has_column("note"));
    }

    #[test]
    fn tab_delimited_with_subjects() {
        let mut opts = LoadOptions::new("y");
        opts.delimiter = b'\t';
        opts.subject_id = Some("id".into());
        let d = read_dataset("id\ty\nA\t1\nB\t2\nA\t3\n".as_bytes(), &opts).unwrap();
        assert_eq!(d.subject_groups(), vec![vec![0, 2], vec![1]]);
        assert_eq!(d.subject_id(), Some("id"));
    }

    #[test]
    fn subset_keeps_labels() {
        let mut opts = LoadOptions::new("y");
        opts.subject_id = Some("id".into());
        let d = read_dataset("id,y\na,1\nb,2\nc,3\n".as_bytes(), &opts).unwrap();
        let s = d.subset(&[2, 0]);
        assert_eq!(s.outcome(), &[3.0, 1.0]);
        assert_eq!(s.subject_labels(), &["c".to_string(), "a".to_string()]);
    }
}

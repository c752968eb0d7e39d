//! Capture-recapture tables.
//!
//! A table holds one row per observed individual: `K` binary list columns
//! (the capture history) followed by covariates. Columns whose every cell is a
//! finite decimal are numeric covariates; all other covariate columns are
//! categorical. Column positions in this module's public API are 1-based, as
//! they are printed to users.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// A parsed CSV with a header row and untyped cells.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file)
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.iter().map(str::to_owned).collect();
        let mut rows = Vec::new();
        for record in rdr.records() {
            rows.push(record?.iter().map(str::to_owned).collect());
        }
        Ok(RawTable { headers, rows })
    }

    pub fn n_cols(&self) -> usize {
        self.headers.len()
    }

    fn cells(&self, col: usize) -> impl Iterator<Item = &str> + '_ {
        self.rows.iter().map(move |r| r[col].as_str())
    }

    fn is_binary_column(&self, col: usize) -> bool {
        self.cells(col).all(|c| parse_binary(c).is_some())
    }
}

fn is_missing(cell: &str) -> bool {
    cell.is_empty() || cell == "NA"
}

fn parse_binary(cell: &str) -> Option<u8> {
    match cell.parse::<f64>() {
        Ok(v) if v == 0.0 => Some(0),
        Ok(v) if v == 1.0 => Some(1),
        _ => None,
    }
}

fn parse_finite(cell: &str) -> Option<f64> {
    cell.parse::<f64>().ok().filter(|v| v.is_finite())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Covariate {
    Numeric { name: String, values: Vec<f64> },
    Categorical { name: String, values: Vec<String> },
}

impl Covariate {
    pub fn name(&self) -> &str {
        match self {
            Covariate::Numeric { name, .. } | Covariate::Categorical { name, .. } => name,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Covariate::Numeric { values, .. } => values.len(),
            Covariate::Categorical { values, .. } => values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, Covariate::Numeric { .. })
    }

    fn select(&self, rows: &[usize]) -> Covariate {
        match self {
            Covariate::Numeric { name, values } => Covariate::Numeric {
                name: name.clone(),
                values: rows.iter().map(|&i| values[i]).collect(),
            },
            Covariate::Categorical { name, values } => Covariate::Categorical {
                name: name.clone(),
                values: rows.iter().map(|&i| values[i].clone()).collect(),
            },
        }
    }

    fn cell(&self, row: usize) -> String {
        match self {
            Covariate::Numeric { values, .. } => values[row].to_string(),
            Covariate::Categorical { values, .. } => values[row].clone(),
        }
    }
}

/// Observed capture histories plus covariates. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    list_names: Vec<String>,
    /// Row-major `n_obs × n_lists` 0/1 matrix.
    captures: Vec<u8>,
    covariates: Vec<Covariate>,
    n_obs: usize,
}

impl Dataset {
    /// Build a dataset from capture rows and covariate columns, checking every
    /// structural invariant.
    pub fn new(
        list_names: Vec<String>,
        captures: Vec<Vec<u8>>,
        covariates: Vec<Covariate>,
    ) -> Result<Self> {
        let k = list_names.len();
        if k < 2 {
            return Err(Error::data(format!("need at least 2 lists, got {k}")));
        }
        let n_obs = captures.len();
        if n_obs == 0 {
            return Err(Error::data("dataset has no rows"));
        }
        let mut flat = Vec::with_capacity(n_obs * k);
        for (i, row) in captures.iter().enumerate() {
            if row.len() != k {
                return Err(Error::data(format!(
                    "row {} has {} list entries, expected {k}",
                    i + 1,
                    row.len()
                )));
            }
            if let Some(&bad) = row.iter().find(|&&v| v > 1) {
                return Err(Error::data(format!(
                    "row {}: non-binary list value {bad}",
                    i + 1
                )));
            }
            if row.iter().all(|&v| v == 0) {
                return Err(Error::data(format!(
                    "row {}: all-zero capture history",
                    i + 1
                )));
            }
            flat.extend_from_slice(row);
        }
        for cov in &covariates {
            if cov.len() != n_obs {
                return Err(Error::data(format!(
                    "covariate {} has {} rows, expected {n_obs}",
                    cov.name(),
                    cov.len()
                )));
            }
            if let Covariate::Numeric { name, values } = cov {
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::data(format!(
                        "covariate {name} has a non-finite value"
                    )));
                }
            }
        }
        Ok(Dataset {
            list_names,
            captures: flat,
            covariates,
            n_obs,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_lists(&self) -> usize {
        self.list_names.len()
    }

    pub fn list_names(&self) -> &[String] {
        &self.list_names
    }

    pub fn covariates(&self) -> &[Covariate] {
        &self.covariates
    }

    pub fn covariate(&self, name: &str) -> Option<&Covariate> {
        self.covariates.iter().find(|c| c.name() == name)
    }

    pub fn n_numeric(&self) -> usize {
        self.covariates.iter().filter(|c| c.is_numeric()).count()
    }

    pub fn n_categorical(&self) -> usize {
        self.covariates.len() - self.n_numeric()
    }

    /// Capture indicator for row `row` (0-based) and list `list` (0-based).
    pub fn capture(&self, row: usize, list: usize) -> u8 {
        self.captures[row * self.n_lists() + list]
    }

    pub fn capture_row(&self, row: usize) -> &[u8] {
        let k = self.n_lists();
        &self.captures[row * k..(row + 1) * k]
    }

    /// All column names, lists first.
    pub fn column_names(&self) -> Vec<String> {
        self.list_names
            .iter()
            .cloned()
            .chain(self.covariates.iter().map(|c| c.name().to_owned()))
            .collect()
    }

    /// Rows `rows` (0-based, any order, repeats allowed) as a new dataset.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        let k = self.n_lists();
        let mut captures = Vec::with_capacity(rows.len() * k);
        for &i in rows {
            captures.extend_from_slice(self.capture_row(i));
        }
        Dataset {
            list_names: self.list_names.clone(),
            captures,
            covariates: self.covariates.iter().map(|c| c.select(rows)).collect(),
            n_obs: rows.len(),
        }
    }

    /// Same rows with covariate `name` removed.
    pub fn without_covariate(&self, name: &str) -> Dataset {
        Dataset {
            covariates: self
                .covariates
                .iter()
                .filter(|c| c.name() != name)
                .cloned()
                .collect(),
            ..self.clone()
        }
    }

    /// Same captures with the covariates replaced.
    pub fn with_covariates(&self, covariates: Vec<Covariate>) -> Result<Dataset> {
        let rows = (0..self.n_obs)
            .map(|i| self.capture_row(i).to_vec())
            .collect();
        Dataset::new(self.list_names.clone(), rows, covariates)
    }

    pub fn to_raw_table(&self) -> RawTable {
        let headers = self.column_names();
        let rows = (0..self.n_obs)
            .map(|i| {
                self.capture_row(i)
                    .iter()
                    .map(|v| v.to_string())
                    .chain(self.covariates.iter().map(|c| c.cell(i)))
                    .collect()
            })
            .collect();
        RawTable { headers, rows }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let table = self.to_raw_table();
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(&table.headers)?;
        for row in &table.rows {
            wtr.write_record(row)?;
        }
        wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Build a dataset from a table whose first `k` columns are the lists.
fn dataset_from_table(table: &RawTable, k: usize) -> Result<Dataset> {
    if k < 2 {
        return Err(Error::data(format!("need at least 2 lists, got {k}")));
    }
    if table.n_cols() < k {
        return Err(Error::data(format!(
            "table has {} columns, fewer than K={k}",
            table.n_cols()
        )));
    }
    for (i, row) in table.rows.iter().enumerate() {
        if let Some(c) = row.iter().position(|cell| is_missing(cell)) {
            return Err(Error::data(format!(
                "missing value in row {}, column {}",
                i + 1,
                table.headers[c]
            )));
        }
    }
    let mut captures = Vec::with_capacity(table.rows.len());
    for (i, row) in table.rows.iter().enumerate() {
        let mut hist = Vec::with_capacity(k);
        for (c, cell) in row.iter().take(k).enumerate() {
            let v = parse_binary(cell).ok_or_else(|| {
                Error::data(format!(
                    "row {}: non-binary value {cell:?} in list column {}",
                    i + 1,
                    table.headers[c]
                ))
            })?;
            hist.push(v);
        }
        captures.push(hist);
    }
    let covariates = (k..table.n_cols())
        .map(|c| {
            let name = table.headers[c].clone();
            let parsed: Option<Vec<f64>> = table.cells(c).map(parse_finite).collect();
            match parsed {
                Some(values) => Covariate::Numeric { name, values },
                None => Covariate::Categorical {
                    name,
                    values: table.cells(c).map(str::to_owned).collect(),
                },
            }
        })
        .collect();
    Dataset::new(table.headers[..k].to_vec(), captures, covariates)
}

/// Load a capture-recapture CSV. With `list_columns`, the named columns are
/// moved to the front (in the given order) and used as the lists; otherwise
/// the first `k` columns are the lists.
pub fn load_dataset(
    path: impl AsRef<Path>,
    k: usize,
    list_columns: Option<&[String]>,
) -> Result<Dataset> {
    let table = RawTable::read(path)?;
    dataset_from_raw(&table, k, list_columns)
}

pub fn dataset_from_raw(
    table: &RawTable,
    k: usize,
    list_columns: Option<&[String]>,
) -> Result<Dataset> {
    match list_columns {
        None => dataset_from_table(table, k),
        Some(names) => {
            if names.len() != k {
                return Err(Error::invalid(format!(
                    "{} list columns named but K={k}",
                    names.len()
                )));
            }
            let positions = names
                .iter()
                .map(|n| {
                    table
                        .headers
                        .iter()
                        .position(|h| h == n)
                        .map(|p| p + 1)
                        .ok_or_else(|| Error::data(format!("no column named {n}")))
                })
                .collect::<Result<Vec<_>>>()?;
            reformat(table, &positions)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Location {
    Row(usize),
    Column(usize),
    Cell { row: usize, column: usize },
    Table,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Row(r) => write!(f, "row {r}"),
            Location::Column(c) => write!(f, "column {c}"),
            Location::Cell { row, column } => write!(f, "row {row}, column {column}"),
            Location::Table => f.write_str("table"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub location: Location,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormatReport {
    pub is_valid: bool,
    /// 1-based positions of every binary column in the table.
    pub list_columns_found: Vec<usize>,
    pub violations: Vec<Violation>,
}

/// Diagnose whether the first `k` columns of `table` form valid capture
/// histories. Never fails; problems are reported as violations.
pub fn check_format(table: &RawTable, k: usize) -> FormatReport {
    let mut violations = Vec::new();
    let list_columns_found: Vec<usize> = (0..table.n_cols())
        .filter(|&c| !table.rows.is_empty() && table.is_binary_column(c))
        .map(|c| c + 1)
        .collect();

    if k < 2 {
        violations.push(Violation {
            location: Location::Table,
            reason: format!("need at least 2 lists, got {k}"),
        });
    }
    if table.n_cols() < k {
        violations.push(Violation {
            location: Location::Table,
            reason: format!("only {} columns for K={k}", table.n_cols()),
        });
    }
    if table.rows.is_empty() {
        violations.push(Violation {
            location: Location::Table,
            reason: "no data rows".into(),
        });
    }
    let k_eff = k.min(table.n_cols());
    for c in 0..k_eff {
        if !table.is_binary_column(c) {
            violations.push(Violation {
                location: Location::Column(c + 1),
                reason: format!("list column {} is not binary", table.headers[c]),
            });
        }
    }
    for (i, row) in table.rows.iter().enumerate() {
        for (c, cell) in row.iter().enumerate() {
            if is_missing(cell) {
                violations.push(Violation {
                    location: Location::Cell {
                        row: i + 1,
                        column: c + 1,
                    },
                    reason: "missing value".into(),
                });
            }
        }
        if k_eff >= 1
            && row[..k_eff]
                .iter()
                .all(|cell| parse_binary(cell) == Some(0))
        {
            violations.push(Violation {
                location: Location::Row(i + 1),
                reason: "all-zero capture history".into(),
            });
        }
    }
    FormatReport {
        is_valid: violations.is_empty(),
        list_columns_found,
        violations,
    }
}

/// Move the columns at 1-based positions `list_columns` to the front (in the
/// given order) and build a dataset with them as the lists. The remaining
/// columns keep their relative order as covariates.
pub fn reformat(table: &RawTable, list_columns: &[usize]) -> Result<Dataset> {
    let ncol = table.n_cols();
    for (i, &c) in list_columns.iter().enumerate() {
        if c == 0 || c > ncol {
            return Err(Error::invalid(format!(
                "column position {c} out of range 1..={ncol}"
            )));
        }
        if list_columns[..i].contains(&c) {
            return Err(Error::invalid(format!("column position {c} given twice")));
        }
        if !table.is_binary_column(c - 1) {
            return Err(Error::data(format!(
                "column {} is not binary",
                table.headers[c - 1]
            )));
        }
    }
    let order: Vec<usize> = list_columns
        .iter()
        .map(|&c| c - 1)
        .chain((0..ncol).filter(|c| !list_columns.contains(&(c + 1))))
        .collect();
    let permuted = RawTable {
        headers: order.iter().map(|&c| table.headers[c].clone()).collect(),
        rows: table
            .rows
            .iter()
            .map(|r| order.iter().map(|&c| r[c].clone()).collect())
            .collect(),
    };
    dataset_from_table(&permuted, list_columns.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(csv: &str) -> RawTable {
        RawTable::from_reader(csv.as_bytes()).unwrap()
    }

    fn load_str(csv: &str, k: usize) -> Result<Dataset> {
        dataset_from_raw(&table(csv), k, None)
    }

    #[test]
    fn loads_three_row_listing() {
        let d = load_str("y1,y2,x1\n1,1,2.1\n0,1,2.6\n1,1,5.3\n", 2).unwrap();
        assert_eq!(d.n_obs(), 3);
        assert_eq!(d.n_lists(), 2);
        assert_eq!(d.n_numeric(), 1);
        assert_eq!(d.capture_row(1), &[0, 1]);
    }

    #[test]
    fn rejects_zero_history() {
        let err = load_str("y1,y2,x1\n0,0,1.0\n1,0,2.0\n", 2).unwrap_err();
        assert!(err.to_string().contains("all-zero"), "{err}");
    }

    #[test]
    fn rejects_non_binary_list_value() {
        let err = load_str("y1,y2,x1\n2,1,1.0\n", 2).unwrap_err();
        assert!(err.to_string().contains("non-binary"), "{err}");
    }

    #[test]
    fn rejects_missing_cell_and_small_k() {
        assert!(load_str("y1,y2,x1\n1,1,\n", 2).is_err());
        assert!(load_str("y1,y2,x1\n1,1,NA\n", 2).is_err());
        assert!(load_str("y1,y2,x1\n1,1,1\n", 1).is_err());
    }

    #[test]
    fn types_columns() {
        let d = load_str("y1,y2,x1,g\n1,1,2.5,a\n0,1,3,b\n", 2).unwrap();
        assert!(d.covariates()[0].is_numeric());
        assert!(!d.covariates()[1].is_numeric());
        assert_eq!(d.n_categorical(), 1);
    }

    #[test]
    fn check_format_clean() {
        let r = check_format(&table("y1,y2,x1\n1,1,2.1\n0,1,2.6\n"), 2);
        assert!(r.is_valid);
        assert!(r.violations.is_empty());
        assert_eq!(r.list_columns_found, vec![1, 2]);
    }

    #[test]
    fn check_format_misplaced_lists() {
        let r = check_format(&table("x1,y1,y2\n2.1,1,1\n2.6,0,1\n"), 2);
        assert!(!r.is_valid);
        assert_eq!(r.list_columns_found, vec![2, 3]);
    }

    #[test]
    fn check_format_zero_row() {
        let r = check_format(&table("y1,y2,x1\n1,1,2.1\n0,0,2.6\n"), 2);
        assert!(!r.is_valid);
        assert_eq!(
            r.violations,
            vec![Violation {
                location: Location::Row(2),
                reason: "all-zero capture history".into()
            }]
        );
    }

    #[test]
    fn reformat_moves_lists_front() {
        let t = table("x1,y1,y2\n2.1,1,1\n2.6,0,1\n");
        let d = reformat(&t, &[2, 3]).unwrap();
        assert_eq!(d.column_names(), vec!["y1", "y2", "x1"]);
        assert!(check_format(&d.to_raw_table(), 2).is_valid);
    }

    #[test]
    fn reformat_identity_and_idempotence() {
        let t = table("y1,y2,x1\n1,1,2.1\n0,1,2.6\n");
        let once = reformat(&t, &[1, 2]).unwrap();
        assert_eq!(once, dataset_from_raw(&t, 2, None).unwrap());
        let twice = reformat(&once.to_raw_table(), &[1, 2]).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn reformat_rejects_real_column() {
        let t = table("x1,y1,y2\n2.1,1,1\n2.6,0,1\n");
        assert!(reformat(&t, &[1, 2]).is_err());
    }

    #[test]
    fn named_list_columns_are_reordered() {
        let t = table("x1,b,a\n2.1,1,0\n2.6,0,1\n");
        let d = dataset_from_raw(&t, 2, Some(&["a".to_string(), "b".to_string()])).unwrap();
        assert_eq!(d.column_names(), vec!["a", "b", "x1"]);
        assert_eq!(d.capture_row(0), &[0, 1]);
    }
}

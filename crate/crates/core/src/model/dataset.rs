use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Name of the weight column in every weighted CSV file.
pub const WEIGHT_COLUMN: &str = "w";

/// Named numeric columns with one non-negative weight per row.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDataset {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl WeightedDataset {
    /// Unit-weighted dataset from columns.
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::invalid("column name/count mismatch"));
        }
        for (i, n) in names.iter().enumerate() {
            if n == WEIGHT_COLUMN {
                return Err(Error::invalid("`w` is reserved for weights"));
            }
            if names[..i].contains(n) {
                return Err(Error::invalid(format!("duplicate column `{n}`")));
            }
        }
        let len = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != len) {
            return Err(Error::invalid("columns differ in length"));
        }
        Ok(WeightedDataset {
            names,
            columns,
            weights: vec![1.0; len],
        })
    }

    pub fn from_columns<S: AsRef<str>>(cols: &[(S, Vec<f64>)]) -> Result<Self> {
        Self::new(
            cols.iter().map(|(n, _)| n.as_ref().to_string()).collect(),
            cols.iter().map(|(_, c)| c.clone()).collect(),
        )
    }

    pub fn from_rows(names: &[&str], rows: &[Vec<f64>]) -> Result<Self> {
        let mut columns = vec![Vec::with_capacity(rows.len()); names.len()];
        for r in rows {
            if r.len() != names.len() {
                return Err(Error::invalid("row width differs from header"));
            }
            for (c, v) in columns.iter_mut().zip(r) {
                c.push(*v);
            }
        }
        Self::new(names.iter().map(|s| s.to_string()).collect(), columns)
    }

    pub fn empty(names: &[&str]) -> Self {
        WeightedDataset {
            names: names.iter().map(|s| s.to_string()).collect(),
            columns: vec![Vec::new(); names.len()],
            weights: Vec::new(),
        }
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        self.set_weights(weights)?;
        Ok(self)
    }

    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        if weights.len() != self.len() {
            return Err(Error::invalid(format!(
                "{} weights for {} rows",
                weights.len(),
                self.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("weights must be finite and non-negative"));
        }
        self.weights = weights;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.names.iter().any(|n| n == name)
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        Ok(&self.columns[self.column_index(name)?])
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn n_positive(&self) -> usize {
        self.weights.iter().filter(|w| **w > 0.0).count()
    }

    /// Kish effective sample size.
    pub fn effective_size(&self) -> f64 {
        let s: f64 = self.weights.iter().sum();
        let s2: f64 = self.weights.iter().map(|w| w * w).sum();
        if s2 > 0.0 {
            s * s / s2
        } else {
            0.0
        }
    }

    /// Rows at `idx`, in that order, weights carried along.
    pub fn subset(&self, idx: &[usize]) -> Self {
        WeightedDataset {
            names: self.names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| idx.iter().map(|&i| c[i]).collect())
                .collect(),
            weights: idx.iter().map(|&i| self.weights[i]).collect(),
        }
    }

    pub fn select(&self, names: &[&str]) -> Result<Self> {
        let mut columns = Vec::with_capacity(names.len());
        for n in names {
            columns.push(self.column(n)?.to_vec());
        }
        Ok(WeightedDataset {
            names: names.iter().map(|s| s.to_string()).collect(),
            columns,
            weights: self.weights.clone(),
        })
    }

    pub fn push_column(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        if self.has_column(name) || name == WEIGHT_COLUMN {
            return Err(Error::invalid(format!("duplicate column `{name}`")));
        }
        if values.len() != self.len() && !(self.names.is_empty() && self.weights.is_empty()) {
            return Err(Error::invalid(format!("column `{name}` has wrong length")));
        }
        if self.names.is_empty() {
            self.weights = vec![1.0; values.len()];
        }
        self.names.push(name.to_string());
        self.columns.push(values);
        Ok(())
    }

    /// Replace a column's values, or append it when absent.
    pub fn set_column(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        match self.names.iter().position(|n| n == name) {
            Some(i) => {
                if values.len() != self.len() {
                    return Err(Error::invalid(format!("column `{name}` has wrong length")));
                }
                self.columns[i] = values;
                Ok(())
            }
            None => self.push_column(name, values),
        }
    }

    pub fn push_row(&mut self, row: &[f64], weight: f64) -> Result<()> {
        if row.len() != self.names.len() {
            return Err(Error::invalid("row width differs from header"));
        }
        for (c, v) in self.columns.iter_mut().zip(row) {
            c.push(*v);
        }
        self.weights.push(weight);
        Ok(())
    }

    /// Concatenate rows of `other`, matching columns by name.
    pub fn append(&mut self, other: &WeightedDataset) -> Result<()> {
        let idx: Vec<usize> = self
            .names
            .iter()
            .map(|n| other.column_index(n))
            .collect::<Result<_>>()?;
        for (c, &j) in self.columns.iter_mut().zip(&idx) {
            c.extend_from_slice(&other.columns[j]);
        }
        self.weights.extend_from_slice(&other.weights);
        Ok(())
    }

    /// Scale weights so that their sum equals the number of positive weights.
    pub fn rescale_to_positive_count(&mut self) {
        let total = self.total_weight();
        let n = self.n_positive() as f64;
        if total > 0.0 {
            for w in &mut self.weights {
                *w *= n / total;
            }
        }
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(f, path)
    }

    pub fn from_reader<R: Read>(reader: R, path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| parse_err(path, 1, e.to_string()))?
            .clone();
        let w_idx = header.iter().position(|h| h == WEIGHT_COLUMN);
        let names: Vec<String> = header
            .iter()
            .filter(|h| *h != WEIGHT_COLUMN)
            .map(str::to_string)
            .collect();
        let mut columns = vec![Vec::new(); names.len()];
        let mut weights = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                parse_err(path, line, e.to_string())
            })?;
            let line = rec.position().map_or(0, |p| p.line());
            let mut ci = 0;
            let mut w = 1.0;
            for (j, cell) in rec.iter().enumerate() {
                let v: f64 = cell
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(path, line, format!("`{cell}` is not a number")))?;
                if Some(j) == w_idx {
                    w = v;
                } else {
                    columns[ci].push(v);
                    ci += 1;
                }
            }
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Validation {
                    line: Some(line),
                    msg: format!("weight {w} must be finite and non-negative"),
                });
            }
            weights.push(w);
        }
        let mut ds = WeightedDataset::new(names, columns)?;
        ds.weights = weights;
        Ok(ds)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut buf = std::io::BufWriter::new(f);
        self.to_writer(&mut buf).map_err(|e| Error::io(path, e))?;
        buf.flush().map_err(|e| Error::io(path, e))
    }

    /// Shortest round-trip formatting keeps every finite double bit-exact on reload.
    pub fn to_writer<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let mut header: Vec<&str> = self.names.iter().map(String::as_str).collect();
        header.push(WEIGHT_COLUMN);
        writeln!(out, "{}", header.join(","))?;
        let mut line = String::new();
        for i in 0..self.len() {
            line.clear();
            for c in &self.columns {
                line.push_str(&format!("{},", c[i]));
            }
            line.push_str(&format!("{}", self.weights[i]));
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

fn parse_err(path: &Path, line: u64, msg: String) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    }
}

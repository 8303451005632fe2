use super::schema::{vocab_index, ColumnKind, Schema, N_CLASSES};
use crate::error::{Error, Result};
use log::warn;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Schema-typed table: categorical cells as vocabulary indices, continuous
/// cells as optional reals (`None` marks a missing value), labels as class
/// indices.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularDataset {
    schema: Schema,
    n_rows: usize,
    categorical: Vec<usize>,
    continuous: Vec<Option<f64>>,
    labels: Vec<usize>,
}

/// What ingestion had to adjust.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows_read: usize,
    /// Rows whose label mapped to the excluded marker (SAE level 0).
    pub excluded_rows: usize,
    /// Non-blank categorical cells that were not in the vocabulary.
    pub unseen_values: usize,
    pub missing_continuous: usize,
}

impl TabularDataset {
    pub fn new(
        schema: Schema,
        categorical: Vec<usize>,
        continuous: Vec<Option<f64>>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let n_rows = labels.len();
        let (mc, nc) = (schema.n_categorical(), schema.n_continuous());
        if categorical.len() != n_rows * mc || continuous.len() != n_rows * nc {
            return Err(Error::dim("dataset parts disagree on row count"));
        }
        let sizes: Vec<usize> = schema.categorical().map(|c| c.vocab.len()).collect();
        for (k, &v) in categorical.iter().enumerate() {
            if v >= sizes[k % mc] {
                return Err(Error::contract(format!("categorical index {v} out of vocabulary")));
            }
        }
        if continuous.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::contract("continuous cells must be finite or missing"));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= N_CLASSES) {
            return Err(Error::contract(format!("label {bad} out of range")));
        }
        Ok(Self {
            schema,
            n_rows,
            categorical,
            continuous,
            labels,
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn categorical_row(&self, r: usize) -> &[usize] {
        let m = self.schema.n_categorical();
        &self.categorical[r * m..(r + 1) * m]
    }

    pub fn continuous_row(&self, r: usize) -> &[Option<f64>] {
        let m = self.schema.n_continuous();
        &self.continuous[r * m..(r + 1) * m]
    }

    /// Values of the `j`-th continuous column.
    pub fn continuous_column(&self, j: usize) -> impl Iterator<Item = Option<f64>> + '_ {
        let m = self.schema.n_continuous();
        (0..self.n_rows).map(move |r| self.continuous[r * m + j])
    }

    /// Values of the `j`-th categorical column.
    pub fn categorical_column(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        let m = self.schema.n_categorical();
        (0..self.n_rows).map(move |r| self.categorical[r * m + j])
    }

    pub fn class_counts(&self) -> [usize; N_CLASSES] {
        class_counts(&self.labels)
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let (mc, nc) = (self.schema.n_categorical(), self.schema.n_continuous());
        let mut categorical = Vec::with_capacity(indices.len() * mc);
        let mut continuous = Vec::with_capacity(indices.len() * nc);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            categorical.extend_from_slice(self.categorical_row(i));
            continuous.extend_from_slice(self.continuous_row(i));
            labels.push(self.labels[i]);
        }
        Self {
            schema: self.schema.clone(),
            n_rows: indices.len(),
            categorical,
            continuous,
            labels,
        }
    }

    /// Same rows under a schema that keeps a subset of the feature columns.
    pub fn project(&self, schema: &Schema) -> Result<Self> {
        let cat_pos: Vec<usize> = schema
            .categorical()
            .map(|c| self.schema.categorical().position(|o| o.name == c.name))
            .collect::<Option<_>>()
            .ok_or_else(|| Error::Schema("projection adds categorical columns".into()))?;
        let cont_pos: Vec<usize> = schema
            .continuous()
            .map(|c| self.schema.continuous().position(|o| o.name == c.name))
            .collect::<Option<_>>()
            .ok_or_else(|| Error::Schema("projection adds continuous columns".into()))?;
        let mut categorical = Vec::new();
        let mut continuous = Vec::new();
        for r in 0..self.n_rows {
            let (cr, nr) = (self.categorical_row(r), self.continuous_row(r));
            categorical.extend(cat_pos.iter().map(|&p| cr[p]));
            continuous.extend(cont_pos.iter().map(|&p| nr[p]));
        }
        Self::new(schema.clone(), categorical, continuous, self.labels.clone())
    }

    /// Writes the table back as CSV in schema column order.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.schema.columns().iter().map(|c| c.name.as_str()))?;
        for r in 0..self.n_rows {
            let (mut ci, mut ni) = (0, 0);
            let mut rec = Vec::with_capacity(self.schema.columns().len());
            for c in self.schema.columns() {
                match c.kind {
                    ColumnKind::Categorical => {
                        rec.push(c.vocab[self.categorical_row(r)[ci]].clone());
                        ci += 1;
                    }
                    ColumnKind::Continuous => {
                        rec.push(self.continuous_row(r)[ni].map(|v| v.to_string()).unwrap_or_default());
                        ni += 1;
                    }
                    ColumnKind::Label => rec.push(self.schema.class_token(self.labels[r])),
                }
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn class_counts(labels: &[usize]) -> [usize; N_CLASSES] {
    let mut c = [0; N_CLASSES];
    for &y in labels {
        c[y] += 1;
    }
    c
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim(), "" | "NA" | "NaN" | "nan" | "null")
}

/// Reads an RFC-4180 CSV (header row required) against `schema`.
///
/// Unseen or blank categorical cells map to `Unknown`; blank continuous cells
/// stay missing for the encoder to impute. Rows whose label maps to the
/// excluded marker are skipped and counted; every other row is kept in file
/// order.
pub fn ingest_csv(path: &Path, schema: &Schema) -> Result<(TabularDataset, IngestReport)> {
    let file = std::fs::File::open(path)?;
    ingest_reader(file, schema)
}

pub fn ingest_reader<R: std::io::Read>(
    reader: R,
    schema: &Schema,
) -> Result<(TabularDataset, IngestReport)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    let positions: Vec<usize> = schema
        .columns()
        .iter()
        .map(|c| {
            header
                .iter()
                .position(|h| h.trim() == c.name)
                .ok_or_else(|| Error::Schema(format!("missing column '{}'", c.name)))
        })
        .collect::<Result<_>>()?;

    let mut report = IngestReport::default();
    let mut categorical = Vec::new();
    let mut continuous = Vec::new();
    let mut labels = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        report.rows_read += 1;
        let cell = |p: usize| rec.get(p).unwrap_or("");
        let label_pos = schema
            .columns()
            .iter()
            .position(|c| c.kind == ColumnKind::Label)
            .expect("validated");
        let raw_label = cell(positions[label_pos]);
        let class = match schema.map_label(raw_label) {
            Some(Some(c)) => c,
            Some(None) => {
                report.excluded_rows += 1;
                continue;
            }
            None => {
                return Err(Error::Row {
                    row,
                    message: format!("label '{raw_label}' not in label_map"),
                })
            }
        };
        for (c, &p) in schema.columns().iter().zip(&positions) {
            match c.kind {
                ColumnKind::Categorical => {
                    let (idx, unseen) = vocab_index(&c.vocab, cell(p));
                    report.unseen_values += usize::from(unseen);
                    categorical.push(idx);
                }
                ColumnKind::Continuous => {
                    let raw = cell(p);
                    if is_missing(raw) {
                        report.missing_continuous += 1;
                        continuous.push(None);
                    } else {
                        let v: f64 = raw.trim().parse().map_err(|_| Error::Row {
                            row,
                            message: format!("column '{}': cannot parse '{raw}' as a number", c.name),
                        })?;
                        if !v.is_finite() {
                            return Err(Error::Row {
                                row,
                                message: format!("column '{}': non-finite value", c.name),
                            });
                        }
                        continuous.push(Some(v));
                    }
                }
                ColumnKind::Label => {}
            }
        }
        labels.push(class);
    }
    if report.excluded_rows > 0 {
        warn!("excluded {} rows labelled SAE level 0", report.excluded_rows);
    }
    let ds = TabularDataset::new(schema.clone(), categorical, continuous, labels)?;
    Ok((ds, report))
}

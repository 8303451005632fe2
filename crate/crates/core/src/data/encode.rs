use super::dataset::TabularDataset;
use super::schema::N_CLASSES;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Training-split statistics for one continuous column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuousStats {
    pub name: String,
    pub median: f64,
    pub mean: f64,
    /// Population standard deviation after median imputation.
    pub std: f64,
    /// Whether a missing-indicator column is emitted for this column.
    pub has_missing: bool,
}

/// Everything the encoder learns from the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub categorical: Vec<String>,
    pub continuous: Vec<ContinuousStats>,
    pub layout: FeatureLayout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Block {
    OneHot { column: String, vocab: Vec<String> },
    Continuous { column: String },
    Missing { column: String },
}

impl Block {
    pub fn width(&self) -> usize {
        match self {
            Block::OneHot { vocab, .. } => vocab.len(),
            _ => 1,
        }
    }

    pub fn column(&self) -> &str {
        match self {
            Block::OneHot { column, .. } | Block::Continuous { column } | Block::Missing { column } => {
                column
            }
        }
    }
}

/// Column layout of the dense encoded matrix, in schema order. A continuous
/// column is followed by its missing indicator when it has one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub blocks: Vec<Block>,
}

impl FeatureLayout {
    pub fn width(&self) -> usize {
        self.blocks.iter().map(Block::width).sum()
    }

    /// Header names: `col=value` for one-hot entries, `col` for z-scores and
    /// `col#missing` for indicators.
    pub fn column_names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.width());
        for b in &self.blocks {
            match b {
                Block::OneHot { column, vocab } => {
                    out.extend(vocab.iter().map(|v| format!("{column}={v}")));
                }
                Block::Continuous { column } => out.push(column.clone()),
                Block::Missing { column } => out.push(format!("{column}#missing")),
            }
        }
        out
    }

    pub fn vocab_sizes(&self) -> Vec<usize> {
        self.blocks
            .iter()
            .filter_map(|b| match b {
                Block::OneHot { vocab, .. } => Some(vocab.len()),
                _ => None,
            })
            .collect()
    }

    /// Names of the real-valued model inputs (z-scores and indicators).
    pub fn continuous_names(&self) -> Vec<String> {
        self.blocks
            .iter()
            .filter_map(|b| match b {
                Block::Continuous { column } => Some(column.clone()),
                Block::Missing { column } => Some(format!("{column}#missing")),
                _ => None,
            })
            .collect()
    }

    /// Where each feature token comes from in a [`ModelInput`], in layout
    /// (schema) order. Missing indicators are tokens of their own.
    pub fn token_order(&self) -> Vec<TokenSource> {
        let (mut cat, mut cont) = (0, 0);
        let mut out = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            match b {
                Block::OneHot { .. } => {
                    out.push(TokenSource::Categorical(cat));
                    cat += 1;
                }
                _ => {
                    out.push(TokenSource::Continuous(cont));
                    cont += 1;
                }
            }
        }
        out
    }

    pub fn categorical_names(&self) -> Vec<String> {
        self.blocks
            .iter()
            .filter_map(|b| match b {
                Block::OneHot { column, .. } => Some(column.clone()),
                _ => None,
            })
            .collect()
    }
}

/// Index into the categorical or continuous part of a [`ModelInput`] row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum TokenSource {
    Categorical(usize),
    Continuous(usize),
}

/// Dense encoded rows: one-hot categoricals, z-scored continuous columns
/// and missing indicators. This is the space the resampler works in.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedMatrix {
    pub layout: FeatureLayout,
    pub data: Vec<f64>,
    pub labels: Vec<usize>,
    /// True for rows created by oversampling.
    pub synthetic: Vec<bool>,
}

/// Index-form inputs for the embedding models.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput {
    pub n_rows: usize,
    /// `n_rows × vocab_sizes.len()` vocabulary indices.
    pub categorical: Vec<usize>,
    pub vocab_sizes: Vec<usize>,
    /// `n_rows × n_continuous` reals.
    pub continuous: Vec<f64>,
    pub n_continuous: usize,
    pub labels: Vec<usize>,
}

impl ModelInput {
    pub fn n_categorical(&self) -> usize {
        self.vocab_sizes.len()
    }

    pub fn categorical_row(&self, r: usize) -> &[usize] {
        let m = self.n_categorical();
        &self.categorical[r * m..(r + 1) * m]
    }

    pub fn continuous_row(&self, r: usize) -> &[f64] {
        &self.continuous[r * self.n_continuous..(r + 1) * self.n_continuous]
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut categorical = Vec::with_capacity(indices.len() * self.n_categorical());
        let mut continuous = Vec::with_capacity(indices.len() * self.n_continuous);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            categorical.extend_from_slice(self.categorical_row(i));
            continuous.extend_from_slice(self.continuous_row(i));
            labels.push(self.labels[i]);
        }
        Self {
            n_rows: indices.len(),
            categorical,
            vocab_sizes: self.vocab_sizes.clone(),
            continuous,
            n_continuous: self.n_continuous,
            labels,
        }
    }
}

impl EncodedMatrix {
    pub fn new(layout: FeatureLayout, data: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        let w = layout.width();
        if w == 0 || data.len() != labels.len() * w {
            return Err(Error::dim(format!(
                "{} values for {} rows of width {w}",
                data.len(),
                labels.len()
            )));
        }
        if labels.iter().any(|&y| y >= N_CLASSES) {
            return Err(Error::contract("label out of range"));
        }
        let synthetic = vec![false; labels.len()];
        Ok(Self {
            layout,
            data,
            labels,
            synthetic,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn width(&self) -> usize {
        self.layout.width()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.width());
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            layout: self.layout.clone(),
            data,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            synthetic: indices.iter().map(|&i| self.synthetic[i]).collect(),
        }
    }

    /// Decodes to index form: each one-hot block becomes the index of its
    /// largest entry (lowest index on ties), so interpolated rows snap to
    /// the nearer parent category.
    pub fn to_model_input(&self) -> ModelInput {
        let vocab_sizes = self.layout.vocab_sizes();
        let n_continuous = self.layout.continuous_names().len();
        let mut categorical = Vec::with_capacity(self.n_rows() * vocab_sizes.len());
        let mut continuous = Vec::with_capacity(self.n_rows() * n_continuous);
        for r in 0..self.n_rows() {
            let row = self.row(r);
            let mut off = 0;
            for b in &self.layout.blocks {
                let w = b.width();
                match b {
                    Block::OneHot { .. } => {
                        let seg = &row[off..off + w];
                        let mut best = 0;
                        for (k, &v) in seg.iter().enumerate() {
                            if v > seg[best] {
                                best = k;
                            }
                        }
                        categorical.push(best);
                    }
                    _ => continuous.push(row[off]),
                }
                off += w;
            }
        }
        ModelInput {
            n_rows: self.n_rows(),
            categorical,
            vocab_sizes,
            continuous,
            n_continuous,
            labels: self.labels.clone(),
        }
    }

    /// Writes the feature columns plus `label` and `synthetic` columns.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = self.layout.column_names();
        header.push("label".into());
        header.push("synthetic".into());
        w.write_record(&header)?;
        for r in 0..self.n_rows() {
            let mut rec: Vec<String> = self.row(r).iter().map(|v| v.to_string()).collect();
            rec.push(self.labels[r].to_string());
            rec.push(u8::from(self.synthetic[r]).to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a matrix written by [`EncodedMatrix::write_csv`]; the header
    /// must match `layout` exactly.
    pub fn read_csv(path: &Path, layout: &FeatureLayout) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut expect = layout.column_names();
        expect.push("label".into());
        let has_flag = header.last().map(String::as_str) == Some("synthetic");
        if has_flag {
            expect.push("synthetic".into());
        }
        if header != expect {
            return Err(Error::Schema("encoded CSV header does not match the layout".into()));
        }
        let w = layout.width();
        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut synthetic = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |k: usize| -> Result<f64> {
                rec[k].trim().parse::<f64>().map_err(|_| Error::Row {
                    row,
                    message: format!("cannot parse '{}' in column {}", &rec[k], header[k]),
                })
            };
            for k in 0..w {
                data.push(parse(k)?);
            }
            let y = parse(w)?;
            if y.fract() != 0.0 || !(0.0..N_CLASSES as f64).contains(&y) {
                return Err(Error::Row {
                    row,
                    message: format!("label {y} out of range"),
                });
            }
            labels.push(y as usize);
            synthetic.push(has_flag && parse(w + 1)? != 0.0);
        }
        let mut m = Self::new(layout.clone(), data, labels)?;
        m.synthetic = synthetic;
        Ok(m)
    }
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Fits encoder statistics on `ds` (which must be the training split).
pub fn fit_stats(ds: &TabularDataset) -> TrainStats {
    let schema = ds.schema();
    let mut continuous = Vec::new();
    for (j, col) in schema.continuous().enumerate() {
        let observed: Vec<f64> = ds.continuous_column(j).flatten().collect();
        let has_missing = observed.len() < ds.n_rows();
        let med = median(&mut observed.clone());
        let filled: Vec<f64> = ds.continuous_column(j).map(|v| v.unwrap_or(med)).collect();
        let n = filled.len().max(1) as f64;
        let mean = filled.iter().sum::<f64>() / n;
        let std = (filled.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        continuous.push(ContinuousStats {
            name: col.name.clone(),
            median: med,
            mean,
            std,
            has_missing,
        });
    }
    let mut blocks = Vec::new();
    let mut ci = 0;
    for col in schema.columns() {
        match col.kind {
            super::ColumnKind::Categorical => blocks.push(Block::OneHot {
                column: col.name.clone(),
                vocab: col.vocab.clone(),
            }),
            super::ColumnKind::Continuous => {
                blocks.push(Block::Continuous {
                    column: col.name.clone(),
                });
                if continuous[ci].has_missing {
                    blocks.push(Block::Missing {
                        column: col.name.clone(),
                    });
                }
                ci += 1;
            }
            super::ColumnKind::Label => {}
        }
    }
    TrainStats {
        categorical: schema.categorical().map(|c| c.name.clone()).collect(),
        continuous,
        layout: FeatureLayout { blocks },
    }
}

const ZERO_STD: f64 = 1e-12;

/// Encodes `ds` with `stats`, fitting them first when absent.
///
/// Continuous columns are median-imputed and z-scored with the training
/// statistics (a zero-variance column encodes as all zeros); categoricals are
/// one-hot encoded.
pub fn encode(ds: &TabularDataset, stats: Option<&TrainStats>) -> Result<(EncodedMatrix, TrainStats)> {
    let stats = match stats {
        Some(s) => {
            let cats: Vec<String> = ds.schema().categorical().map(|c| c.name.clone()).collect();
            let conts: Vec<&str> = ds.schema().continuous().map(|c| c.name.as_str()).collect();
            let stat_conts: Vec<&str> = s.continuous.iter().map(|c| c.name.as_str()).collect();
            if cats != s.categorical || conts != stat_conts {
                return Err(Error::contract("train stats were fitted on a different schema"));
            }
            s.clone()
        }
        None => fit_stats(ds),
    };
    let width = stats.layout.width();
    if width == 0 {
        return Err(Error::Schema("schema has no feature columns".into()));
    }
    let mut data = Vec::with_capacity(ds.n_rows() * width);
    for r in 0..ds.n_rows() {
        let (cats, conts) = (ds.categorical_row(r), ds.continuous_row(r));
        let (mut ci, mut ni) = (0, 0);
        for b in &stats.layout.blocks {
            match b {
                Block::OneHot { vocab, .. } => {
                    let start = data.len();
                    data.resize(start + vocab.len(), 0.0);
                    data[start + cats[ci]] = 1.0;
                    ci += 1;
                }
                Block::Continuous { .. } => {
                    let s = &stats.continuous[ni];
                    let v = conts[ni].unwrap_or(s.median);
                    data.push(if s.std < ZERO_STD { 0.0 } else { (v - s.mean) / s.std });
                    if !s.has_missing {
                        ni += 1;
                    }
                }
                Block::Missing { .. } => {
                    data.push(if conts[ni].is_none() { 1.0 } else { 0.0 });
                    ni += 1;
                }
            }
        }
    }
    let m = EncodedMatrix::new(stats.layout.clone(), data, ds.labels().to_vec())?;
    Ok((m, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::schema::{ColumnSpec, Schema};

    fn ds(cat: Vec<usize>, cont: Vec<Option<f64>>, labels: Vec<usize>) -> TabularDataset {
        let schema = Schema::new(vec![
            ColumnSpec::categorical("c", &["a", "b"]),
            ColumnSpec::continuous("x"),
            ColumnSpec::sae_label("y"),
        ])
        .unwrap();
        TabularDataset::new(schema, cat, cont, labels).unwrap()
    }

    #[test]
    fn z_scores_with_population_std() {
        let d = ds(vec![0, 1, 2], vec![Some(1.0), Some(2.0), Some(3.0)], vec![0, 1, 2]);
        let (m, stats) = encode(&d, None).unwrap();
        let z: Vec<f64> = (0..3).map(|r| m.row(r)[3]).collect();
        let expect = [-1.224744871391589, 0.0, 1.224744871391589];
        for (a, b) in z.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(stats.layout.width(), 4);
        assert_eq!(m.row(1)[..3], [0.0, 1.0, 0.0]);
    }

    #[test]
    fn constant_column_encodes_as_zero() {
        let d = ds(vec![0, 0], vec![Some(5.0), Some(5.0)], vec![0, 0]);
        let (m, _) = encode(&d, None).unwrap();
        assert_eq!(m.row(0)[3], 0.0);
        assert_eq!(m.row(1)[3], 0.0);
    }

    #[test]
    fn missing_values_use_median_and_indicator() {
        let d = ds(vec![0, 0, 0], vec![Some(1.0), None, Some(5.0)], vec![0, 1, 2]);
        let (m, stats) = encode(&d, None).unwrap();
        assert_eq!(stats.continuous[0].median, 3.0);
        assert_eq!(m.layout.column_names(), vec!["c=a", "c=b", "c=Unknown", "x", "x#missing"]);
        assert_eq!(m.row(1)[4], 1.0);
        assert_eq!(m.row(0)[4], 0.0);
        assert!(m.row(1)[3].abs() < 1e-12);
        let input = m.to_model_input();
        assert_eq!(input.n_continuous, 2);
        assert_eq!(input.continuous_row(1)[1], 1.0);
    }

    #[test]
    fn stats_are_reused_and_checked() {
        let train = ds(vec![0, 1], vec![Some(0.0), Some(2.0)], vec![0, 1]);
        let (_, stats) = encode(&train, None).unwrap();
        let test = ds(vec![1], vec![Some(4.0)], vec![2]);
        let (m, _) = encode(&test, Some(&stats)).unwrap();
        assert_eq!(m.row(0)[3], 3.0);

        let other = Schema::new(vec![ColumnSpec::continuous("z"), ColumnSpec::sae_label("y")]).unwrap();
        let o = TabularDataset::new(other, vec![], vec![Some(1.0)], vec![0]).unwrap();
        assert!(matches!(encode(&o, Some(&stats)), Err(Error::Contract(_))));
    }

    #[test]
    fn one_hot_decodes_back_to_indices() {
        let d = ds(vec![2, 0, 1], vec![Some(1.0); 3], vec![0, 1, 2]);
        let (m, _) = encode(&d, None).unwrap();
        assert_eq!(m.to_model_input().categorical, vec![2, 0, 1]);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let d = ds(vec![2, 0, 1], vec![Some(0.1), Some(1.0 / 3.0), None], vec![0, 1, 2]);
        let (mut m, stats) = encode(&d, None).unwrap();
        m.synthetic[2] = true;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("enc.csv");
        m.write_csv(&p).unwrap();
        assert_eq!(EncodedMatrix::read_csv(&p, &stats.layout).unwrap(), m);
    }
}

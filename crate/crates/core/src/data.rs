//! Tabular ingestion: schema, min-max scaling with schema-supplied ranges,
//! one-hot encoding, seeded splitting and dataset-level metrics.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Network;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeatureKind {
    Numerical { raw_min: f64, raw_max: f64 },
    Categorical { levels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    #[serde(flatten)]
    pub kind: FeatureKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSpec {
    pub name: String,
    pub positive: String,
}

/// Column position of a scaled numerical feature.
#[derive(Debug, Clone, PartialEq)]
pub struct NumericColumn {
    pub feature: usize,
    pub col: usize,
}

/// Contiguous one-hot block of a categorical feature.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalBlock {
    pub feature: usize,
    pub start: usize,
    pub levels: usize,
}

impl CategoricalBlock {
    pub fn cols(&self) -> Range<usize> {
        self.start..self.start + self.levels
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Layout {
    pub width: usize,
    pub numeric: Vec<NumericColumn>,
    pub categorical: Vec<CategoricalBlock>,
    /// Index into `categorical` of the sensitive feature.
    pub sensitive: usize,
}

impl Layout {
    pub fn sensitive_block(&self) -> &CategoricalBlock {
        &self.categorical[self.sensitive]
    }

    /// Non-sensitive categorical blocks in schema order.
    pub fn nonsensitive_blocks(&self) -> impl Iterator<Item = &CategoricalBlock> {
        let s = self.sensitive;
        self.categorical
            .iter()
            .enumerate()
            .filter(move |(i, _)| *i != s)
            .map(|(_, b)| b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SchemaFile", into = "SchemaFile")]
pub struct Schema {
    pub features: Vec<Feature>,
    pub sensitive_feature: String,
    pub label: LabelSpec,
    layout: Layout,
}

#[derive(Serialize, Deserialize)]
struct SchemaFile {
    features: Vec<Feature>,
    sensitive_feature: String,
    label: LabelSpec,
}

impl TryFrom<SchemaFile> for Schema {
    type Error = Error;
    fn try_from(f: SchemaFile) -> Result<Self> {
        Schema::new(f.features, f.sensitive_feature, f.label)
    }
}

impl From<Schema> for SchemaFile {
    fn from(s: Schema) -> Self {
        SchemaFile {
            features: s.features,
            sensitive_feature: s.sensitive_feature,
            label: s.label,
        }
    }
}

impl Schema {
    pub fn new(features: Vec<Feature>, sensitive_feature: String, label: LabelSpec) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        let mut layout = Layout::default();
        let mut sensitive = None;
        for (i, f) in features.iter().enumerate() {
            if !seen.insert(f.name.as_str()) {
                return Err(Error::config(format!("duplicate feature name {:?}", f.name)));
            }
            if f.name == label.name {
                return Err(Error::config(format!("feature {:?} is also the label", f.name)));
            }
            match &f.kind {
                FeatureKind::Numerical { raw_min, raw_max } => {
                    if !(raw_min.is_finite() && raw_max.is_finite()) || raw_min >= raw_max {
                        return Err(Error::config(format!(
                            "feature {:?}: raw_min must be finite and below raw_max",
                            f.name
                        )));
                    }
                    layout.numeric.push(NumericColumn {
                        feature: i,
                        col: layout.width,
                    });
                    layout.width += 1;
                }
                FeatureKind::Categorical { levels } => {
                    if levels.len() < 2 {
                        return Err(Error::config(format!(
                            "categorical feature {:?} needs at least two levels",
                            f.name
                        )));
                    }
                    let distinct: std::collections::HashSet<_> = levels.iter().collect();
                    if distinct.len() != levels.len() {
                        return Err(Error::config(format!("feature {:?} repeats a level", f.name)));
                    }
                    if f.name == sensitive_feature {
                        sensitive = Some(layout.categorical.len());
                    }
                    layout.categorical.push(CategoricalBlock {
                        feature: i,
                        start: layout.width,
                        levels: levels.len(),
                    });
                    layout.width += levels.len();
                }
            }
        }
        layout.sensitive = sensitive.ok_or_else(|| {
            Error::config(format!(
                "sensitive feature {sensitive_feature:?} is not a categorical feature of the schema"
            ))
        })?;
        Ok(Schema {
            features,
            sensitive_feature,
            label,
            layout,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn width(&self) -> usize {
        self.layout.width
    }

    pub fn numeric_count(&self) -> usize {
        self.layout.numeric.len()
    }

    pub fn feature_name(&self, idx: usize) -> &str {
        &self.features[idx].name
    }

    pub fn levels(&self, block: &CategoricalBlock) -> &[String] {
        match &self.features[block.feature].kind {
            FeatureKind::Categorical { levels } => levels,
            FeatureKind::Numerical { .. } => unreachable!("block refers to a numerical feature"),
        }
    }

    pub fn column_map(&self) -> BTreeMap<String, Range<usize>> {
        let mut map = BTreeMap::new();
        for n in &self.layout.numeric {
            map.insert(self.features[n.feature].name.clone(), n.col..n.col + 1);
        }
        for b in &self.layout.categorical {
            map.insert(self.features[b.feature].name.clone(), b.cols());
        }
        map
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serialization cannot fail")
    }

    /// Encodes raw cells (in schema feature order) into a scaled, one-hot
    /// feature vector.
    pub fn encode(&self, cells: &[&str]) -> Encoded {
        let mut x = vec![0.0; self.layout.width];
        let mut col = 0;
        for (f, cell) in self.features.iter().zip(cells) {
            let cell = cell.trim();
            if is_missing(cell) {
                return Encoded::Missing;
            }
            match &f.kind {
                FeatureKind::Numerical { raw_min, raw_max } => {
                    let Ok(v) = cell.parse::<f64>() else {
                        return Encoded::Missing;
                    };
                    if !v.is_finite() {
                        return Encoded::Missing;
                    }
                    x[col] = ((v - raw_min) / (raw_max - raw_min)).clamp(0.0, 1.0);
                    col += 1;
                }
                FeatureKind::Categorical { levels } => {
                    let Some(pos) = levels.iter().position(|l| l == cell) else {
                        return Encoded::UnknownLevel;
                    };
                    x[col + pos] = 1.0;
                    col += levels.len();
                }
            }
        }
        Encoded::Row(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Encoded {
    Row(Vec<f64>),
    Missing,
    UnknownLevel,
}

fn is_missing(cell: &str) -> bool {
    cell.is_empty() || cell == "?"
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    pub column_map: BTreeMap<String, Range<usize>>,
    /// Rows dropped for missing or unparseable cells.
    pub dropped_missing: usize,
    /// Rows dropped for categorical values outside the schema's levels.
    pub dropped_unknown_level: usize,
}

impl Dataset {
    pub fn new(rows: Vec<Vec<f64>>, labels: Vec<u8>, schema: &Schema) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::input("rows and labels differ in length"));
        }
        if rows.iter().any(|r| r.len() != schema.width()) {
            return Err(Error::input("row width does not match the schema"));
        }
        Ok(Dataset {
            rows,
            labels,
            column_map: schema.column_map(),
            dropped_missing: 0,
            dropped_unknown_level: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            column_map: self.column_map.clone(),
            dropped_missing: 0,
            dropped_unknown_level: 0,
        }
    }
}

/// Reads a headered CSV and preprocesses it against `schema`.
pub fn load_and_preprocess(path: &Path, schema: &Schema) -> Result<Dataset> {
    read_csv(path, schema, true)
}

/// Like [`load_and_preprocess`] but the label column is optional; absent
/// labels are reported as 0.
pub fn load_points(path: &Path, schema: &Schema) -> Result<Dataset> {
    read_csv(path, schema, false)
}

fn read_csv(path: &Path, schema: &Schema, require_label: bool) -> Result<Dataset> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(csv_err)?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let feature_cols = schema
        .features
        .iter()
        .map(|f| {
            find(&f.name).ok_or_else(|| Error::config(format!("column {:?} missing from {}", f.name, path.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    let label_col = match find(&schema.label.name) {
        Some(c) => Some(c),
        None if require_label => {
            return Err(Error::config(format!(
                "label column {:?} missing from {}",
                schema.label.name,
                path.display()
            )))
        }
        None => None,
    };

    let mut ds = Dataset::new(Vec::new(), Vec::new(), schema)?;
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let cells: Vec<&str> = feature_cols.iter().map(|&c| record.get(c).unwrap_or("")).collect();
        let label = match label_col {
            Some(c) => {
                let v = record.get(c).unwrap_or("").trim();
                if is_missing(v) {
                    ds.dropped_missing += 1;
                    continue;
                }
                u8::from(v == schema.label.positive)
            }
            None => 0,
        };
        match schema.encode(&cells) {
            Encoded::Row(x) => {
                ds.rows.push(x);
                ds.labels.push(label);
            }
            Encoded::Missing => ds.dropped_missing += 1,
            Encoded::UnknownLevel => ds.dropped_unknown_level += 1,
        }
    }
    Ok(ds)
}

pub const DEFAULT_TRAIN_FRACTION: f64 = 0.7;

/// Seeded shuffle followed by a prefix split.
pub fn split(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::config("train fraction must lie strictly between 0 and 1"));
    }
    if ds.len() < 2 {
        return Err(Error::input("need at least two rows to split"));
    }
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((ds.len() as f64 * train_fraction).round() as usize).clamp(1, ds.len() - 1);
    Ok((ds.subset(&idx[..n_train]), ds.subset(&idx[n_train..])))
}

fn non_empty(ds: &Dataset) -> Result<()> {
    if ds.is_empty() {
        Err(Error::input("empty dataset"))
    } else {
        Ok(())
    }
}

/// Percentage of rows the network classifies as 1.
pub fn positivity_rate(net: &Network, ds: &Dataset) -> Result<f64> {
    non_empty(ds)?;
    let mut pos = 0usize;
    for x in &ds.rows {
        pos += usize::from(net.predict(x)?);
    }
    Ok(100.0 * pos as f64 / ds.len() as f64)
}

/// Percentage of rows whose label is 1.
pub fn label_positivity(ds: &Dataset) -> Result<f64> {
    non_empty(ds)?;
    let pos = ds.labels.iter().filter(|&&y| y == 1).count();
    Ok(100.0 * pos as f64 / ds.len() as f64)
}

/// Percentage of rows classified correctly.
pub fn accuracy(net: &Network, ds: &Dataset) -> Result<f64> {
    non_empty(ds)?;
    let mut hits = 0usize;
    for (x, &y) in ds.rows.iter().zip(&ds.labels) {
        hits += usize::from(net.predict(x)? == y);
    }
    Ok(100.0 * hits as f64 / ds.len() as f64)
}

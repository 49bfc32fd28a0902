//! Datasets: tabular records with one class label and one demographic
//! attribute each, ingested from CSV or generated synthetically.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_rng, tags};

/// Ordered class names; a label is an index into this list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    class_names: Vec<String>,
}

impl LabelSpace {
    pub fn new(class_names: Vec<String>) -> Result<Self> {
        if class_names.len() < 2 {
            return Err(Error::Invalid(format!(
                "need at least 2 classes, got {}",
                class_names.len()
            )));
        }
        let unique: BTreeSet<&String> = class_names.iter().collect();
        if unique.len() != class_names.len() {
            return Err(Error::Invalid("class names must be unique".into()));
        }
        Ok(Self { class_names })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn name(&self, label: usize) -> &str {
        &self.class_names[label]
    }

    pub fn names(&self) -> &[String] {
        &self.class_names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|n| n == name)
    }
}

/// One demographic attribute (age bracket, skin tone group, ...) with its
/// ordered set of values; an attribute value is an index into `values`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSchema {
    attribute_name: String,
    values: Vec<String>,
}

impl AttributeSchema {
    pub fn new(attribute_name: impl Into<String>, values: Vec<String>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Invalid(format!(
                "attribute needs at least 2 values, got {}",
                values.len()
            )));
        }
        let unique: BTreeSet<&String> = values.iter().collect();
        if unique.len() != values.len() {
            return Err(Error::Invalid("attribute values must be unique".into()));
        }
        Ok(Self {
            attribute_name: attribute_name.into(),
            values,
        })
    }

    pub fn name(&self) -> &str {
        &self.attribute_name
    }

    pub fn num_values(&self) -> usize {
        self.values.len()
    }

    pub fn value(&self, idx: usize) -> &str {
        &self.values[idx]
    }

    pub fn values(&self) -> &[String] {
        &self.values
    }

    pub fn index_of(&self, value: &str) -> Option<usize> {
        self.values.iter().position(|v| v == value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub labels: LabelSpace,
    pub attributes: AttributeSchema,
    pub feature_dim: usize,
}

/// One example: a feature vector, a class label, and an attribute value.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub record_id: u64,
    pub features: Vec<f64>,
    pub label: usize,
    pub attribute: usize,
}

/// An immutable collection of records under one schema. Construction
/// validates every record, so holding a `Dataset` certifies the invariants:
/// consistent feature width, in-range label and attribute indices, unique
/// record ids, and finite features.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: DatasetSchema,
    records: Vec<Record>,
}

impl Dataset {
    pub fn new(schema: DatasetSchema, records: Vec<Record>) -> Result<Self> {
        let num_classes = schema.labels.num_classes();
        let num_attrs = schema.attributes.num_values();
        let mut seen_ids = BTreeSet::new();
        for record in &records {
            if record.features.len() != schema.feature_dim {
                return Err(Error::Invalid(format!(
                    "record {} has {} features, schema says {}",
                    record.record_id,
                    record.features.len(),
                    schema.feature_dim
                )));
            }
            if record.features.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "features of record {}",
                    record.record_id
                )));
            }
            if record.label >= num_classes {
                return Err(Error::Invalid(format!(
                    "record {} has label {}, schema has {} classes",
                    record.record_id, record.label, num_classes
                )));
            }
            if record.attribute >= num_attrs {
                return Err(Error::Invalid(format!(
                    "record {} has attribute {}, schema has {} values",
                    record.record_id, record.attribute, num_attrs
                )));
            }
            if !seen_ids.insert(record.record_id) {
                return Err(Error::Invalid(format!(
                    "duplicate record id {}",
                    record.record_id
                )));
            }
        }
        Ok(Self { schema, records })
    }

    pub fn schema(&self) -> &DatasetSchema {
        &self.schema
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.schema.labels.num_classes()
    }

    pub fn num_attribute_values(&self) -> usize {
        self.schema.attributes.num_values()
    }

    /// Records per class, indexed by label.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes()];
        for record in &self.records {
            counts[record.label] += 1;
        }
        counts
    }

    /// Records per attribute value.
    pub fn attribute_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_attribute_values()];
        for record in &self.records {
            counts[record.attribute] += 1;
        }
        counts
    }

    /// A new dataset with the same schema over a subset of records.
    pub fn with_records(&self, records: Vec<Record>) -> Result<Dataset> {
        Dataset::new(self.schema.clone(), records)
    }

    /// Feature rows stacked into an n-by-d matrix, in record order.
    pub fn features_matrix(&self) -> Array2<f64> {
        let n = self.records.len();
        let d = self.schema.feature_dim;
        let mut m = Array2::zeros((n, d));
        for (i, record) in self.records.iter().enumerate() {
            for (j, &x) in record.features.iter().enumerate() {
                m[[i, j]] = x;
            }
        }
        m
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.label).collect()
    }

    /// Canonical CSV column mapping for this schema, matching `write_csv`
    /// output: features as f0..f{d-1}, then the label and attribute columns.
    pub fn csv_schema(&self) -> CsvSchema {
        CsvSchema {
            feature_columns: (0..self.schema.feature_dim)
                .map(|i| format!("f{i}"))
                .collect(),
            label_column: "label".into(),
            label_values: self.schema.labels.names().to_vec(),
            attribute_column: self.schema.attributes.name().to_string(),
            attribute_values: self.schema.attributes.values().to_vec(),
        }
    }
}

/// Maps CSV columns onto dataset roles. Feature columns are read in the
/// order listed; label and attribute cells are mapped to indices by their
/// position in the corresponding value list. Columns not mentioned are
/// ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub feature_columns: Vec<String>,
    pub label_column: String,
    pub label_values: Vec<String>,
    pub attribute_column: String,
    pub attribute_values: Vec<String>,
}

impl CsvSchema {
    fn dataset_schema(&self) -> Result<DatasetSchema> {
        if self.feature_columns.is_empty() {
            return Err(Error::Invalid("no feature columns configured".into()));
        }
        Ok(DatasetSchema {
            labels: LabelSpace::new(self.label_values.clone())?,
            attributes: AttributeSchema::new(
                self.attribute_column.clone(),
                self.attribute_values.clone(),
            )?,
            feature_dim: self.feature_columns.len(),
        })
    }
}

/// Reads a CSV file into a dataset. Record ids are assigned by row order.
/// Fails on the first missing column, unparseable number, or categorical
/// value outside the configured mapping, naming the row and column.
pub fn ingest_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let dataset_schema = schema.dataset_schema()?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let column_index = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                column: name.to_string(),
            })
    };
    let feature_idx: Vec<usize> = schema
        .feature_columns
        .iter()
        .map(|c| column_index(c))
        .collect::<Result<_>>()?;
    let label_idx = column_index(&schema.label_column)?;
    let attr_idx = column_index(&schema.attribute_column)?;

    let mut records = Vec::new();
    for (row, result) in reader.records().enumerate() {
        let csv_row = result?;
        let mut features = Vec::with_capacity(feature_idx.len());
        for (&idx, column) in feature_idx.iter().zip(&schema.feature_columns) {
            let cell = csv_row.get(idx).unwrap_or("");
            let value: f64 = cell.parse().map_err(|_| Error::BadNumericCell {
                row,
                column: column.clone(),
                value: cell.to_string(),
            })?;
            features.push(value);
        }
        let label_cell = csv_row.get(label_idx).unwrap_or("");
        let label = schema
            .label_values
            .iter()
            .position(|v| v == label_cell)
            .ok_or_else(|| Error::UnknownCategory {
                row,
                column: schema.label_column.clone(),
                value: label_cell.to_string(),
            })?;
        let attr_cell = csv_row.get(attr_idx).unwrap_or("");
        let attribute = schema
            .attribute_values
            .iter()
            .position(|v| v == attr_cell)
            .ok_or_else(|| Error::UnknownCategory {
                row,
                column: schema.attribute_column.clone(),
                value: attr_cell.to_string(),
            })?;
        records.push(Record {
            record_id: row as u64,
            features,
            label,
            attribute,
        });
    }
    Dataset::new(dataset_schema, records)
}

/// Writes a dataset as CSV with the canonical header from `csv_schema`.
/// Reading the file back with that schema reproduces every record's
/// features, label, and attribute in order (ids are positional).
pub fn write_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().from_path(path)?;
    let schema = dataset.schema();
    let mut header: Vec<String> = (0..schema.feature_dim).map(|i| format!("f{i}")).collect();
    header.push("label".into());
    header.push(schema.attributes.name().to_string());
    writer.write_record(&header)?;
    for record in dataset.records() {
        let mut row: Vec<String> = record.features.iter().map(|x| x.to_string()).collect();
        row.push(schema.labels.name(record.label).to_string());
        row.push(schema.attributes.value(record.attribute).to_string());
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Recipe for a synthetic dataset: class and attribute priors, one Gaussian
/// mean per (class, attribute) pair, and a shared diagonal variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub labels: LabelSpace,
    pub attributes: AttributeSchema,
    pub feature_dim: usize,
    pub class_probs: Vec<f64>,
    pub attribute_probs: Vec<f64>,
    /// Indexed as means[label][attribute], each a feature_dim vector.
    pub means: Vec<Vec<Vec<f64>>>,
    pub variance: f64,
    pub num_records: usize,
    pub seed: u64,
}

fn check_probs(probs: &[f64], what: &str, expected_len: usize) -> Result<()> {
    if probs.len() != expected_len {
        return Err(Error::Invalid(format!(
            "{what}: expected {expected_len} entries, got {}",
            probs.len()
        )));
    }
    if probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::Invalid(format!("{what}: entries must lie in [0, 1]")));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Invalid(format!("{what}: sum {total} is not 1")));
    }
    Ok(())
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let num_classes = self.labels.num_classes();
        let num_attrs = self.attributes.num_values();
        check_probs(&self.class_probs, "class_probs", num_classes)?;
        check_probs(&self.attribute_probs, "attribute_probs", num_attrs)?;
        if self.feature_dim == 0 {
            return Err(Error::Invalid("feature_dim must be positive".into()));
        }
        if !(self.variance.is_finite() && self.variance > 0.0) {
            return Err(Error::Invalid(format!(
                "variance must be positive and finite, got {}",
                self.variance
            )));
        }
        if self.means.len() != num_classes {
            return Err(Error::Invalid(format!(
                "means: expected {num_classes} class rows, got {}",
                self.means.len()
            )));
        }
        for (label, row) in self.means.iter().enumerate() {
            if row.len() != num_attrs {
                return Err(Error::Invalid(format!(
                    "means[{label}]: expected {num_attrs} attribute entries, got {}",
                    row.len()
                )));
            }
            for (attr, mean) in row.iter().enumerate() {
                if mean.len() != self.feature_dim {
                    return Err(Error::Invalid(format!(
                        "means[{label}][{attr}]: expected {} dims, got {}",
                        self.feature_dim,
                        mean.len()
                    )));
                }
                if mean.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite(format!("means[{label}][{attr}]")));
                }
            }
        }
        Ok(())
    }
}

fn draw_categorical<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        cumulative += p;
        if u < cumulative {
            return i;
        }
    }
    probs.len() - 1
}

/// Draws `num_records` examples from the spec's Gaussian mixture. For each
/// record the class, then the attribute, then the feature noise are drawn
/// from one stream keyed by the spec seed, so output depends only on the
/// spec.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = derive_rng(spec.seed, &[tags::DATA_GEN]);
    let sd = spec.variance.sqrt();
    let mut records = Vec::with_capacity(spec.num_records);
    for id in 0..spec.num_records {
        let label = draw_categorical(&mut rng, &spec.class_probs);
        let attribute = draw_categorical(&mut rng, &spec.attribute_probs);
        let mean = &spec.means[label][attribute];
        let features = mean
            .iter()
            .map(|&m| {
                let z: f64 = StandardNormal.sample(&mut rng);
                m + sd * z
            })
            .collect();
        records.push(Record {
            record_id: id as u64,
            features,
            label,
            attribute,
        });
    }
    Dataset::new(
        DatasetSchema {
            labels: spec.labels.clone(),
            attributes: spec.attributes.clone(),
            feature_dim: spec.feature_dim,
        },
        records,
    )
}

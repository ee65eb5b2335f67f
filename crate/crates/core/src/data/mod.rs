//! Tabular datasets: CSV ingestion, vocabularies, scaling, folds and the
//! synthetic ordering benchmark.

mod folds;
mod scale;
mod synth;

use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use folds::{kfold_split, Fold, FoldPlan};
pub use scale::{normalize_target, scale_numeric, MinMaxScaler, TargetScaler};
pub use synth::{
    generate_synthetic_ordering_dataset, Interaction, SyntheticGroundTruth, CATEGORY_SCORES,
    SYNTHETIC_ROWS,
};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Regression,
    Binary,
    /// Distributional regression with a normal response.
    Lss,
}

impl Task {
    pub fn is_regression(self) -> bool {
        matches!(self, Task::Regression | Task::Lss)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    /// Position in the pseudo-sequence.
    pub position: usize,
}

/// On-disk schema: one `{name, kind}` entry per feature plus the target.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaFile {
    pub columns: Vec<SchemaColumn>,
    pub target: String,
    pub task: Task,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaColumn {
    pub name: String,
    pub kind: ColumnKind,
}

impl SchemaFile {
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| {
            Error::Schema(format!("cannot open schema {}: {e}", path.display()))
        })?;
        let schema: SchemaFile = serde_json::from_reader(file)
            .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashMap::new();
        for c in &self.columns {
            if seen.insert(c.name.as_str(), ()).is_some() {
                return Err(Error::Schema(format!("duplicate column `{}`", c.name)));
            }
        }
        if seen.contains_key(self.target.as_str()) {
            return Err(Error::Schema(format!(
                "target `{}` is also listed as a feature",
                self.target
            )));
        }
        if self.columns.is_empty() {
            return Err(Error::Schema("schema lists no feature columns".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum FeatureValues {
    Numeric(Vec<f64>),
    /// Raw category strings; integer ids come from a fitted [`Vocabulary`].
    Categorical(Vec<String>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Feature {
    pub name: String,
    pub values: FeatureValues,
}

impl Feature {
    pub fn kind(&self) -> ColumnKind {
        match self.values {
            FeatureValues::Numeric(_) => ColumnKind::Numeric,
            FeatureValues::Categorical(_) => ColumnKind::Categorical,
        }
    }

    fn len(&self) -> usize {
        match &self.values {
            FeatureValues::Numeric(v) => v.len(),
            FeatureValues::Categorical(v) => v.len(),
        }
    }

    fn select(&self, rows: &[usize]) -> Feature {
        let values = match &self.values {
            FeatureValues::Numeric(v) => FeatureValues::Numeric(rows.iter().map(|&r| v[r]).collect()),
            FeatureValues::Categorical(v) => {
                FeatureValues::Categorical(rows.iter().map(|&r| v[r].clone()).collect())
            }
        };
        Feature {
            name: self.name.clone(),
            values,
        }
    }
}

/// Column-major tabular data. The order of `features` is the sequence order.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularDataset {
    pub features: Vec<Feature>,
    pub target_name: String,
    pub target: Vec<f64>,
    pub task: Task,
}

impl TabularDataset {
    pub fn new(
        features: Vec<Feature>,
        target_name: impl Into<String>,
        target: Vec<f64>,
        task: Task,
    ) -> Result<Self> {
        let n = target.len();
        if let Some(f) = features.iter().find(|f| f.len() != n) {
            return Err(Error::Schema(format!(
                "column `{}` has {} rows, target has {n}",
                f.name,
                f.len()
            )));
        }
        if task == Task::Binary && target.iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::Schema("binary targets must be 0 or 1".into()));
        }
        Ok(Self {
            features,
            target_name: target_name.into(),
            target,
            task,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.target.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn schema(&self) -> Vec<ColumnSpec> {
        self.features
            .iter()
            .enumerate()
            .map(|(position, f)| ColumnSpec {
                name: f.name.clone(),
                kind: f.kind(),
                position,
            })
            .collect()
    }

    pub fn schema_file(&self) -> SchemaFile {
        SchemaFile {
            columns: self
                .features
                .iter()
                .map(|f| SchemaColumn {
                    name: f.name.clone(),
                    kind: f.kind(),
                })
                .collect(),
            target: self.target_name.clone(),
            task: self.task,
        }
    }

    pub fn feature(&self, name: &str) -> Option<&Feature> {
        self.features.iter().find(|f| f.name == name)
    }

    /// Rows `rows` (in that order) as a new dataset.
    pub fn subset(&self, rows: &[usize]) -> TabularDataset {
        TabularDataset {
            features: self.features.iter().map(|f| f.select(rows)).collect(),
            target_name: self.target_name.clone(),
            target: rows.iter().map(|&r| self.target[r]).collect(),
            task: self.task,
        }
    }

    /// Write as CSV with a header row, features in sequence order then target.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<&str> = self.features.iter().map(|f| f.name.as_str()).collect();
        header.push(&self.target_name);
        w.write_record(&header)?;
        for r in 0..self.n_rows() {
            let mut record: Vec<String> = self
                .features
                .iter()
                .map(|f| match &f.values {
                    FeatureValues::Numeric(v) => v[r].to_string(),
                    FeatureValues::Categorical(v) => v[r].clone(),
                })
                .collect();
            record.push(self.target[r].to_string());
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim(), "" | "?" | "NA" | "NaN" | "nan" | "null")
}

/// Read a comma-separated file with a header row.
///
/// Rows with any missing cell are dropped. Features are ordered numeric block
/// first, then categorical, each in schema order.
pub fn load_csv(path: &Path, schema: &SchemaFile) -> Result<TabularDataset> {
    schema.validate()?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header = reader.headers()?.clone();
    let locate = |name: &str| {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("column `{name}` missing from {}", path.display())))
    };
    let mut ordered: Vec<&SchemaColumn> = schema
        .columns
        .iter()
        .filter(|c| c.kind == ColumnKind::Numeric)
        .collect();
    ordered.extend(schema.columns.iter().filter(|c| c.kind == ColumnKind::Categorical));
    let positions = ordered
        .iter()
        .map(|c| locate(&c.name))
        .collect::<Result<Vec<_>>>()?;
    let target_pos = locate(&schema.target)?;

    let mut numeric: Vec<Vec<f64>> = vec![Vec::new(); ordered.len()];
    let mut categorical: Vec<Vec<String>> = vec![Vec::new(); ordered.len()];
    let mut target = Vec::new();
    let parse = |cell: &str, line: u64, column: &str| -> Result<f64> {
        cell.trim().parse::<f64>().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("cannot parse `{cell}` in column `{column}` as a number"),
        })
    };
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let missing = positions
            .iter()
            .chain(std::iter::once(&target_pos))
            .any(|&p| record.get(p).map_or(true, is_missing));
        if missing {
            continue;
        }
        for (slot, (col, &p)) in ordered.iter().zip(&positions).enumerate() {
            let cell = &record[p];
            match col.kind {
                ColumnKind::Numeric => numeric[slot].push(parse(cell, line, &col.name)?),
                ColumnKind::Categorical => categorical[slot].push(cell.trim().to_string()),
            }
        }
        target.push(parse(&record[target_pos], line, &schema.target)?);
    }
    let features = ordered
        .iter()
        .enumerate()
        .map(|(slot, c)| Feature {
            name: c.name.clone(),
            values: match c.kind {
                ColumnKind::Numeric => FeatureValues::Numeric(std::mem::take(&mut numeric[slot])),
                ColumnKind::Categorical => {
                    FeatureValues::Categorical(std::mem::take(&mut categorical[slot]))
                }
            },
        })
        .collect();
    TabularDataset::new(features, schema.target.clone(), target, schema.task)
}

pub const UNKNOWN_TOKEN: &str = "<unk>";

/// Category-to-id map for one column; id 0 is the unknown token.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let ids = tokens
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { tokens, ids }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    /// Categories in first-seen order get ids 1, 2, ...
    pub fn build<'a>(values: impl IntoIterator<Item = &'a str>) -> Self {
        let mut tokens = vec![UNKNOWN_TOKEN.to_string()];
        let mut ids = HashMap::new();
        for v in values {
            if !ids.contains_key(v) {
                ids.insert(v.to_string(), tokens.len());
                tokens.push(v.to_string());
            }
        }
        Self { tokens, ids }
    }

    pub fn id(&self, value: &str) -> usize {
        self.ids.get(value).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, values: &[String]) -> Vec<usize> {
        values.iter().map(|v| self.id(v)).collect()
    }
}

/// One vocabulary per categorical feature of `train`, in sequence order.
pub fn build_vocab(train: &TabularDataset) -> Vec<Vocabulary> {
    train
        .features
        .iter()
        .filter_map(|f| match &f.values {
            FeatureValues::Categorical(v) => Some(Vocabulary::build(v.iter().map(String::as_str))),
            FeatureValues::Numeric(_) => None,
        })
        .collect()
}

/// Apply a feature permutation: new position `i` holds old feature `perm[i]`.
pub fn reorder_features(dataset: &TabularDataset, perm: &[usize]) -> Result<TabularDataset> {
    validate_permutation(perm, dataset.n_features())?;
    let mut out = dataset.clone();
    out.features = perm.iter().map(|&p| dataset.features[p].clone()).collect();
    Ok(out)
}

pub fn validate_permutation(perm: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    let ok = perm.len() == n
        && perm
            .iter()
            .all(|&p| p < n && !std::mem::replace(&mut seen[p], true));
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{perm:?} is not a permutation of 0..{n}"
        )))
    }
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use super::*;

    fn schema() -> SchemaFile {
        SchemaFile {
            columns: vec![
                SchemaColumn {
                    name: "color".into(),
                    kind: ColumnKind::Categorical,
                },
                SchemaColumn {
                    name: "size".into(),
                    kind: ColumnKind::Numeric,
                },
            ],
            target: "y".into(),
            task: Task::Regression,
        }
    }

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_three_rows_numeric_first() {
        let f = write("color,size,y\nred,1.5,0\nblue,2,1\nred,3,2\n");
        let ds = load_csv(f.path(), &schema()).unwrap();
        assert_eq!(ds.n_rows(), 3);
        assert_eq!(ds.n_features(), 2);
        assert_eq!(ds.features[0].name, "size");
        assert_eq!(ds.features[1].kind(), ColumnKind::Categorical);
    }

    #[test]
    fn drops_rows_with_missing_cells() {
        let f = write("color,size,y\nred,1.5,0\n,2,1\nred,3,2\n");
        let ds = load_csv(f.path(), &schema()).unwrap();
        assert_eq!(ds.n_rows(), 2);
    }

    #[test]
    fn missing_column_is_a_schema_error() {
        let f = write("colour,size,y\nred,1.5,0\n");
        assert!(matches!(load_csv(f.path(), &schema()), Err(Error::Schema(_))));
    }

    #[test]
    fn bad_number_reports_line() {
        let f = write("color,size,y\nred,1.5,0\nred,abc,1\n");
        match load_csv(f.path(), &schema()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn vocabulary_reserves_unknown() {
        let v = Vocabulary::build(["a", "b", "a"]);
        assert_eq!(v.tokens(), &["<unk>", "a", "b"]);
        assert_eq!(v.id("a"), 1);
        assert_eq!(v.id("b"), 2);
        assert_eq!(v.id("c"), 0);
        let empty = Vocabulary::build(std::iter::empty());
        assert_eq!(empty.len(), 1);
    }

    #[test]
    fn vocabulary_serde_round_trip() {
        let v = Vocabulary::build(["x", "y"]);
        let s = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&s).unwrap();
        assert_eq!(back.id("y"), 2);
    }

    #[test]
    fn reorder_and_inverse() {
        let f = write("color,size,y\nred,1.5,0\nblue,2,1\n");
        let ds = load_csv(f.path(), &schema()).unwrap();
        assert_eq!(reorder_features(&ds, &[0, 1]).unwrap(), ds);
        let swapped = reorder_features(&ds, &[1, 0]).unwrap();
        assert_eq!(swapped.features[0].name, "color");
        assert_eq!(reorder_features(&swapped, &[1, 0]).unwrap(), ds);
        assert!(reorder_features(&ds, &[0, 0]).is_err());
    }

    #[test]
    fn rejects_non_binary_targets() {
        let r = TabularDataset::new(Vec::new(), "y", vec![0.0, 2.0], Task::Binary);
        assert!(r.is_err());
    }
}

//! Loading, cleaning and splitting ransomware telemetry tables.
//!
//! A [`Dataset`] is column-oriented. Numeric cells are `Option<f64>` and
//! categorical cells are `Option<String>`, with `None` as the missing marker.
//! The label column is pulled out of the column list by [`unify_labels`] and
//! materialised as `labels` (0 = Benign, 1 = Ransomware).

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats;
use crate::{BENIGN, CLASS_NAMES, RANSOMWARE};

/// Label column names tried in order.
pub const DEFAULT_LABEL_CANDIDATES: [&str; 2] = ["label", "prediction"];
/// Name of the per-row source tag column.
pub const SOURCE_COLUMN: &str = "source";
/// Smallest class size accepted by [`stratified_split`].
pub const MIN_ROWS_PER_CLASS: usize = 5;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row} has {found} fields, header has {expected}")]
    Ragged {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("schema: {0}")]
    Schema(String),
    #[error("label: {0}")]
    Label(String),
    #[error("cannot fit imputer: column `{0}` has no non-missing values")]
    AllMissing(String),
    #[error("imputer has no fill value for feature column `{0}`")]
    NotInModel(String),
    #[error("split: {0}")]
    Split(String),
}

pub type Result<T> = std::result::Result<T, IngestError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    Feature,
    Label,
    Source,
    Ignore,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    pub role: ColumnRole,
}

impl ColumnSpec {
    pub fn new(name: impl Into<String>, kind: ColumnKind, role: ColumnRole) -> Self {
        Self {
            name: name.into(),
            kind,
            role,
        }
    }

    pub fn numeric(name: impl Into<String>) -> Self {
        Self::new(name, ColumnKind::Numeric, ColumnRole::Feature)
    }

    pub fn categorical(name: impl Into<String>) -> Self {
        Self::new(name, ColumnKind::Categorical, ColumnRole::Feature)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ColumnValues {
    Numeric(Vec<Option<f64>>),
    Categorical(Vec<Option<String>>),
}

impl ColumnValues {
    pub fn len(&self) -> usize {
        match self {
            ColumnValues::Numeric(v) => v.len(),
            ColumnValues::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> ColumnKind {
        match self {
            ColumnValues::Numeric(_) => ColumnKind::Numeric,
            ColumnValues::Categorical(_) => ColumnKind::Categorical,
        }
    }

    pub fn missing_count(&self) -> usize {
        match self {
            ColumnValues::Numeric(v) => v.iter().filter(|x| x.is_none()).count(),
            ColumnValues::Categorical(v) => v.iter().filter(|x| x.is_none()).count(),
        }
    }

    fn missing(kind: ColumnKind, n: usize) -> Self {
        match kind {
            ColumnKind::Numeric => ColumnValues::Numeric(vec![None; n]),
            ColumnKind::Categorical => ColumnValues::Categorical(vec![None; n]),
        }
    }

    fn select(&self, rows: &[usize]) -> Self {
        match self {
            ColumnValues::Numeric(v) => ColumnValues::Numeric(rows.iter().map(|&i| v[i]).collect()),
            ColumnValues::Categorical(v) => {
                ColumnValues::Categorical(rows.iter().map(|&i| v[i].clone()).collect())
            }
        }
    }

    fn extend(&mut self, other: &ColumnValues) {
        match (self, other) {
            (ColumnValues::Numeric(a), ColumnValues::Numeric(b)) => a.extend_from_slice(b),
            (ColumnValues::Categorical(a), ColumnValues::Categorical(b)) => {
                a.extend(b.iter().cloned())
            }
            _ => unreachable!("kinds are checked before extending"),
        }
    }

    fn cell(&self, row: usize) -> String {
        match self {
            ColumnValues::Numeric(v) => v[row].map(|x| x.to_string()).unwrap_or_default(),
            ColumnValues::Categorical(v) => v[row].clone().unwrap_or_default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Column {
    pub spec: ColumnSpec,
    pub values: ColumnValues,
}

/// Labeled telemetry table.
///
/// Invariants: every column has `len()` values, `labels` and `source` have
/// `len()` entries, labels are 0 or 1. Before [`unify_labels`] has run
/// `labels` is empty and `label_column` is `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub columns: Vec<Column>,
    pub label_column: Option<String>,
    pub labels: Vec<u8>,
    pub source: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.spec.name == name)
    }

    pub fn numeric(&self, name: &str) -> Option<&[Option<f64>]> {
        match self.column(name).map(|c| &c.values) {
            Some(ColumnValues::Numeric(v)) => Some(v),
            _ => None,
        }
    }

    pub fn categorical(&self, name: &str) -> Option<&[Option<String>]> {
        match self.column(name).map(|c| &c.values) {
            Some(ColumnValues::Categorical(v)) => Some(v),
            _ => None,
        }
    }

    pub fn feature_columns(&self) -> impl Iterator<Item = &Column> {
        self.columns
            .iter()
            .filter(|c| c.spec.role == ColumnRole::Feature)
    }

    pub fn numeric_features(&self) -> impl Iterator<Item = (&str, &[Option<f64>])> {
        self.feature_columns().filter_map(|c| match &c.values {
            ColumnValues::Numeric(v) => Some((c.spec.name.as_str(), v.as_slice())),
            _ => None,
        })
    }

    /// Column specs including the materialised label column.
    pub fn specs(&self) -> Vec<ColumnSpec> {
        let mut out: Vec<ColumnSpec> = self.columns.iter().map(|c| c.spec.clone()).collect();
        if let Some(name) = &self.label_column {
            out.push(ColumnSpec::new(
                name.clone(),
                ColumnKind::Categorical,
                ColumnRole::Label,
            ));
        }
        out
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let ones = self.labels.iter().filter(|&&l| l == RANSOMWARE).count();
        [self.labels.len() - ones, ones]
    }

    /// Rows at `rows`, in that order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            columns: self
                .columns
                .iter()
                .map(|c| Column {
                    spec: c.spec.clone(),
                    values: c.values.select(rows),
                })
                .collect(),
            label_column: self.label_column.clone(),
            labels: if self.labels.is_empty() {
                Vec::new()
            } else {
                rows.iter().map(|&i| self.labels[i]).collect()
            },
            source: rows.iter().map(|&i| self.source[i].clone()).collect(),
        }
    }

    /// Replaces every row's source tag.
    pub fn with_source_tag(mut self, tag: &str) -> Dataset {
        self.source = vec![tag.to_string(); self.len()];
        self
    }

    /// Stacks datasets row-wise over the union of their columns (first-seen
    /// order). Cells of columns a part lacks are missing.
    pub fn concat(parts: &[Dataset]) -> Result<Dataset> {
        let mut specs: Vec<ColumnSpec> = Vec::new();
        for part in parts {
            if part.label_column.is_none() {
                return Err(IngestError::Label(
                    "cannot merge datasets before labels are unified".into(),
                ));
            }
            for c in &part.columns {
                match specs.iter().find(|s| s.name == c.spec.name) {
                    Some(s) if s.kind != c.spec.kind => {
                        return Err(IngestError::Schema(format!(
                            "column `{}` is {:?} in one input and {:?} in another",
                            s.name, s.kind, c.spec.kind
                        )))
                    }
                    Some(_) => {}
                    None => specs.push(c.spec.clone()),
                }
            }
        }
        let label_names: Vec<&String> = parts.iter().filter_map(|p| p.label_column.as_ref()).collect();
        let label_column = match label_names.first() {
            Some(first) if label_names.iter().all(|n| n == first) => (*first).clone(),
            _ => DEFAULT_LABEL_CANDIDATES[0].to_string(),
        };
        let mut columns: Vec<Column> = specs
            .into_iter()
            .map(|spec| Column {
                values: ColumnValues::missing(spec.kind, 0),
                spec,
            })
            .collect();
        let mut labels = Vec::new();
        let mut source = Vec::new();
        for part in parts {
            for col in &mut columns {
                match part.column(&col.spec.name) {
                    Some(c) => col.values.extend(&c.values),
                    None => col
                        .values
                        .extend(&ColumnValues::missing(col.spec.kind, part.len())),
                }
            }
            labels.extend_from_slice(&part.labels);
            source.extend(part.source.iter().cloned());
        }
        Ok(Dataset {
            columns,
            label_column: Some(label_column),
            labels,
            source,
        })
    }
}

/// `true` for the cells treated as missing: empty, `NaN`, `null`.
pub fn is_missing_marker(cell: &str) -> bool {
    let t = cell.trim();
    t.is_empty() || t.eq_ignore_ascii_case("nan") || t.eq_ignore_ascii_case("null")
}

fn parse_real(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok().filter(|x| x.is_finite())
}

/// Loads a CSV file, infers or applies column specs, and unifies labels
/// with [`DEFAULT_LABEL_CANDIDATES`].
///
/// Rows take their source tag from a `source` column when present,
/// otherwise from the file stem.
pub fn load_csv(path: impl AsRef<Path>, specs: Option<&[ColumnSpec]>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let default_tag = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_csv(file, specs, &default_tag)
}

/// [`load_csv`] over any reader.
pub fn read_csv<R: Read>(reader: R, specs: Option<&[ColumnSpec]>, default_tag: &str) -> Result<Dataset> {
    let raw = parse_table(reader, specs, default_tag)?;
    let candidates: Vec<String> = match specs
        .and_then(|s| s.iter().find(|c| c.role == ColumnRole::Label))
    {
        Some(label) => vec![label.name.clone()],
        None => DEFAULT_LABEL_CANDIDATES.iter().map(|s| s.to_string()).collect(),
    };
    let names: Vec<&str> = candidates.iter().map(String::as_str).collect();
    unify_labels(raw, &names)
}

/// Parses a table without touching labels.
pub fn parse_table<R: Read>(reader: R, specs: Option<&[ColumnSpec]>, default_tag: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(IngestError::Schema("missing header row".into()));
    }
    let mut seen = HashMap::new();
    for (i, h) in header.iter().enumerate() {
        if let Some(j) = seen.insert(h.as_str(), i) {
            return Err(IngestError::Schema(format!(
                "duplicate column name `{h}` (positions {j} and {i})"
            )));
        }
    }

    let mut cells: Vec<Vec<String>> = vec![Vec::new(); header.len()];
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(IngestError::Ragged {
                row: row + 1,
                expected: header.len(),
                found: rec.len(),
            });
        }
        for (col, cell) in rec.iter().enumerate() {
            cells[col].push(cell.to_string());
        }
    }
    let n_rows = cells.first().map_or(0, Vec::len);

    let mut columns = Vec::new();
    let mut source: Option<Vec<String>> = None;
    for (name, col_cells) in header.iter().zip(cells) {
        let given = specs.and_then(|s| s.iter().find(|c| &c.name == name));
        let role = match given {
            Some(s) => s.role,
            None if name == SOURCE_COLUMN => ColumnRole::Source,
            None => ColumnRole::Feature,
        };
        if role == ColumnRole::Source {
            source = Some(
                col_cells
                    .iter()
                    .map(|c| if is_missing_marker(c) { default_tag.to_string() } else { c.trim().to_string() })
                    .collect(),
            );
            continue;
        }
        let kind = match given {
            Some(s) => s.kind,
            None => {
                let numeric = col_cells
                    .iter()
                    .filter(|c| !is_missing_marker(c))
                    .all(|c| parse_real(c).is_some());
                if numeric {
                    ColumnKind::Numeric
                } else {
                    ColumnKind::Categorical
                }
            }
        };
        let values = match kind {
            ColumnKind::Numeric => {
                let mut v = Vec::with_capacity(n_rows);
                for (row, c) in col_cells.iter().enumerate() {
                    if is_missing_marker(c) {
                        v.push(None);
                    } else {
                        let x = parse_real(c).ok_or_else(|| {
                            IngestError::Schema(format!(
                                "column `{name}` row {}: `{c}` is not a finite number",
                                row + 1
                            ))
                        })?;
                        v.push(Some(x));
                    }
                }
                ColumnValues::Numeric(v)
            }
            ColumnKind::Categorical => ColumnValues::Categorical(
                col_cells
                    .into_iter()
                    .map(|c| if is_missing_marker(&c) { None } else { Some(c.trim().to_string()) })
                    .collect(),
            ),
        };
        columns.push(Column {
            spec: ColumnSpec::new(name.clone(), kind, role),
            values,
        });
    }
    if let Some(specs) = specs {
        for s in specs {
            if s.role != ColumnRole::Label && !header.contains(&s.name) {
                return Err(IngestError::Schema(format!("column `{}` not found in header", s.name)));
            }
        }
    }
    Ok(Dataset {
        columns,
        label_column: None,
        labels: Vec::new(),
        source: source.unwrap_or_else(|| vec![default_tag.to_string(); n_rows]),
    })
}

fn map_label(raw: &str) -> Option<u8> {
    let t = raw.trim();
    if t.eq_ignore_ascii_case("benign") || t == "0" {
        Some(BENIGN)
    } else if t.eq_ignore_ascii_case("ransomware") || t == "1" {
        Some(RANSOMWARE)
    } else {
        None
    }
}

/// Picks the first candidate column present, maps its values to {0, 1}
/// and removes it from the feature columns. Remaining candidate columns are
/// marked [`ColumnRole::Ignore`].
pub fn unify_labels(mut dataset: Dataset, candidates: &[&str]) -> Result<Dataset> {
    let pos = candidates
        .iter()
        .find_map(|name| dataset.columns.iter().position(|c| c.spec.name == *name))
        .ok_or_else(|| {
            IngestError::Schema(format!(
                "no label column; looked for {}",
                candidates.join(", ")
            ))
        })?;
    let col = dataset.columns.remove(pos);
    let raw: Vec<Option<String>> = match col.values {
        ColumnValues::Categorical(v) => v,
        ColumnValues::Numeric(v) => v.into_iter().map(|x| x.map(|x| x.to_string())).collect(),
    };
    let mut distinct: Vec<&str> = raw.iter().flatten().map(|s| s.as_str()).collect();
    distinct.sort_unstable_by_key(|s| s.to_ascii_lowercase());
    distinct.dedup_by_key(|s| s.to_ascii_lowercase());
    if distinct.len() > 2 {
        return Err(IngestError::Label(format!(
            "column `{}` has {} classes ({}), expected two",
            col.spec.name,
            distinct.len(),
            distinct.join(", ")
        )));
    }
    let mut labels = Vec::with_capacity(raw.len());
    for (row, v) in raw.iter().enumerate() {
        let v = v.as_deref().ok_or_else(|| {
            IngestError::Label(format!("column `{}` row {} is missing", col.spec.name, row + 1))
        })?;
        labels.push(map_label(v).ok_or_else(|| {
            IngestError::Label(format!(
                "column `{}` row {}: `{v}` is neither {} nor {}",
                col.spec.name,
                row + 1,
                CLASS_NAMES[0],
                CLASS_NAMES[1]
            ))
        })?);
    }
    for c in &mut dataset.columns {
        if candidates.contains(&c.spec.name.as_str()) {
            c.spec.role = ColumnRole::Ignore;
        }
    }
    dataset.label_column = Some(col.spec.name);
    dataset.labels = labels;
    Ok(dataset)
}

/// Writes the dataset as CSV: columns in order, then the label column
/// (as class names), then `source`.
pub fn write_csv<W: Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = dataset.columns.iter().map(|c| c.spec.name.as_str()).collect();
    if let Some(l) = &dataset.label_column {
        header.push(l);
    }
    header.push(SOURCE_COLUMN);
    w.write_record(&header)?;
    for row in 0..dataset.len() {
        let mut rec: Vec<String> = dataset.columns.iter().map(|c| c.values.cell(row)).collect();
        if dataset.label_column.is_some() {
            rec.push(CLASS_NAMES[dataset.labels[row] as usize].to_string());
        }
        rec.push(dataset.source[row].clone());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|source| IngestError::Io {
        path: "<writer>".into(),
        source,
    })?;
    Ok(())
}

/// Per-column fill values learned from a dataset.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ImputationModel {
    pub numeric_fill: BTreeMap<String, f64>,
    pub categorical_fill: BTreeMap<String, String>,
}

/// Most frequent string; ties go to the lexicographically smallest.
pub fn categorical_mode<'a>(values: impl IntoIterator<Item = &'a str>) -> Option<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for v in values {
        *counts.entry(v).or_default() += 1;
    }
    let mut best: Option<(&str, usize)> = None;
    for (v, c) in counts {
        if best.is_none_or(|(_, bc)| c > bc) {
            best = Some((v, c));
        }
    }
    best.map(|(v, _)| v.to_string())
}

/// Median for numeric feature columns, mode for categorical ones.
pub fn fit_imputer(dataset: &Dataset) -> Result<ImputationModel> {
    let mut model = ImputationModel::default();
    for col in dataset.feature_columns() {
        let name = col.spec.name.clone();
        match &col.values {
            ColumnValues::Numeric(v) => {
                let present: Vec<f64> = v.iter().flatten().copied().collect();
                let m = stats::median(&present).ok_or_else(|| IngestError::AllMissing(name.clone()))?;
                model.numeric_fill.insert(name, m);
            }
            ColumnValues::Categorical(v) => {
                let m = categorical_mode(v.iter().flatten().map(String::as_str))
                    .ok_or_else(|| IngestError::AllMissing(name.clone()))?;
                model.categorical_fill.insert(name, m);
            }
        }
    }
    Ok(model)
}

/// Replaces missing feature cells with the model's fill values.
pub fn apply_imputer(model: &ImputationModel, dataset: &Dataset) -> Result<Dataset> {
    let mut out = dataset.clone();
    for col in out.columns.iter_mut().filter(|c| c.spec.role == ColumnRole::Feature) {
        let name = &col.spec.name;
        match &mut col.values {
            ColumnValues::Numeric(v) => {
                let fill = *model
                    .numeric_fill
                    .get(name)
                    .ok_or_else(|| IngestError::NotInModel(name.clone()))?;
                v.iter_mut().filter(|x| x.is_none()).for_each(|x| *x = Some(fill));
            }
            ColumnValues::Categorical(v) => {
                let fill = model
                    .categorical_fill
                    .get(name)
                    .ok_or_else(|| IngestError::NotInModel(name.clone()))?;
                v.iter_mut()
                    .filter(|x| x.is_none())
                    .for_each(|x| *x = Some(fill.clone()));
            }
        }
    }
    Ok(out)
}

/// Row indices of a train/validation/test partition.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Split fractions in (train, validation, test) order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.8,
            validation: 0.1,
            test: 0.1,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(IngestError::Split(format!("fractions must be non-negative: {parts:?}")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(IngestError::Split(format!("fractions sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

pub fn stratified_split(dataset: &Dataset, fractions: SplitFractions, seed: u64) -> Result<SplitIndices> {
    stratified_split_labels(&dataset.labels, fractions, seed)
}

/// Stratified partition of binary labels.
///
/// Split sizes are `round(N * f)` for validation and test, the remainder goes
/// to train. Per-class counts are chosen so every split's class-1 count is
/// within one row of its proportional share.
pub fn stratified_split_labels(labels: &[u8], fractions: SplitFractions, seed: u64) -> Result<SplitIndices> {
    fractions.validate()?;
    let n = labels.len();
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &l) in labels.iter().enumerate() {
        match l {
            0 | 1 => by_class[l as usize].push(i),
            other => return Err(IngestError::Split(format!("row {i} has label {other}"))),
        }
    }
    for (class, rows) in by_class.iter().enumerate() {
        if rows.len() < MIN_ROWS_PER_CLASS {
            return Err(IngestError::Split(format!(
                "class {} has {} rows, need at least {MIN_ROWS_PER_CLASS}",
                CLASS_NAMES[class],
                rows.len()
            )));
        }
    }
    let n_val = (n as f64 * fractions.validation).round() as usize;
    let n_test = (n as f64 * fractions.test).round() as usize;
    if n_val + n_test > n {
        return Err(IngestError::Split("validation and test exceed the row count".into()));
    }
    let n_train = n - n_val - n_test;
    let (n0, n1) = (by_class[0].len(), by_class[1].len());
    let share = |size: usize| size as f64 * n1 as f64 / n as f64;
    let (q_val, q_test, q_train) = (share(n_val), share(n_test), share(n_train));

    let options = |q: f64, size: usize| -> Vec<usize> {
        let lo = q.floor() as usize;
        let mut v = vec![lo];
        if (lo as f64) < q {
            v.push(lo + 1);
        }
        v.into_iter()
            .filter(|&k| k <= size && k <= n1 && size - k <= n0)
            .collect()
    };
    let mut best: Option<((usize, usize), f64)> = None;
    for v1 in options(q_val, n_val) {
        for t1 in options(q_test, n_test) {
            let Some(tr1) = n1.checked_sub(v1 + t1) else { continue };
            if tr1 > n_train || n_train - tr1 > n0 {
                continue;
            }
            let dev = (v1 as f64 - q_val)
                .abs()
                .max((t1 as f64 - q_test).abs())
                .max((tr1 as f64 - q_train).abs());
            if best.is_none_or(|(_, d)| dev < d) {
                best = Some(((v1, t1), dev));
            }
        }
    }
    let ((v1, t1), _) =
        best.ok_or_else(|| IngestError::Split("no feasible stratified allocation".into()))?;
    let v0 = n_val - v1;
    let t0 = n_test - t1;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = SplitIndices {
        train: Vec::with_capacity(n_train),
        validation: Vec::with_capacity(n_val),
        test: Vec::with_capacity(n_test),
        seed,
    };
    for (rows, (nv, nt)) in by_class.iter_mut().zip([(v0, t0), (v1, t1)]) {
        rows.shuffle(&mut rng);
        split.validation.extend_from_slice(&rows[..nv]);
        split.test.extend_from_slice(&rows[nv..nv + nt]);
        split.train.extend_from_slice(&rows[nv + nt..]);
    }
    split.train.sort_unstable();
    split.validation.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

/// Seeded uniform sample of `n` rows without replacement, kept in original
/// row order. Returns the whole dataset when `n >= len`.
pub fn sample_rows(dataset: &Dataset, n: usize, seed: u64) -> Dataset {
    if n >= dataset.len() {
        return dataset.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = rand::seq::index::sample(&mut rng, dataset.len(), n).into_vec();
    rows.sort_unstable();
    dataset.subset(&rows)
}

/// Summary row for one numeric feature column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub column: String,
    pub count: usize,
    pub missing: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub p01: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub max: f64,
    pub mode: f64,
}

/// Count, mean, sample std, min, 1/25/50/75% quantiles, max and mode of each
/// numeric feature column over its non-missing values.
pub fn describe(dataset: &Dataset) -> Vec<ColumnStats> {
    dataset
        .numeric_features()
        .filter_map(|(name, values)| {
            let present: Vec<f64> = values.iter().flatten().copied().collect();
            let s = stats::sorted(&present);
            let q = |p| stats::quantile_sorted(&s, p);
            Some(ColumnStats {
                column: name.to_string(),
                count: present.len(),
                missing: values.len() - present.len(),
                mean: stats::mean(&present)?,
                std: stats::sample_std(&present).unwrap_or(f64::NAN),
                min: *s.first()?,
                p01: q(0.01)?,
                p25: q(0.25)?,
                p50: q(0.5)?,
                p75: q(0.75)?,
                max: *s.last()?,
                mode: stats::numeric_mode(&present)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(text: &str) -> Result<Dataset> {
        read_csv(text.as_bytes(), None, "test")
    }

    #[test]
    fn parses_missing_cells_and_labels() {
        let d = read("rw,label\n73,Benign\n,Ransomware\n").unwrap();
        assert_eq!(d.numeric("rw").unwrap(), &[Some(73.0), None]);
        assert_eq!(d.labels, vec![0, 1]);
        assert_eq!(d.label_column.as_deref(), Some("label"));
        assert_eq!(d.source, vec!["test", "test"]);
    }

    #[test]
    fn missing_markers_are_case_insensitive() {
        let d = read("x,label\nNaN,benign\nnull,benign\nNULL,ransomware\n nan ,ransomware\n5,benign\n").unwrap();
        assert_eq!(d.numeric("x").unwrap(), &[None, None, None, None, Some(5.0)]);
    }

    #[test]
    fn prediction_column_becomes_label() {
        let d = read("netflow_bytes,prediction\n10,Benign\n20,Ransomware\n").unwrap();
        assert_eq!(d.label_column.as_deref(), Some("prediction"));
        assert_eq!(d.labels, vec![0, 1]);
        assert!(d.column("prediction").is_none());
        let specs = d.specs();
        assert_eq!(specs.iter().filter(|s| s.role == ColumnRole::Label).count(), 1);
    }

    #[test]
    fn label_wins_over_prediction() {
        let d = read("a,prediction,label\n1,Ransomware,Benign\n2,Benign,Ransomware\n").unwrap();
        assert_eq!(d.labels, vec![0, 1]);
        assert_eq!(d.column("prediction").unwrap().spec.role, ColumnRole::Ignore);
        assert_eq!(d.feature_columns().count(), 1);
    }

    #[test]
    fn label_mapping_is_case_insensitive() {
        let d = read("a,label\n1,BENIGN\n2,ransomware\n").unwrap();
        assert_eq!(d.labels, vec![0, 1]);
    }

    #[test]
    fn label_errors() {
        assert!(matches!(read("a,b\n1,2\n"), Err(IngestError::Schema(_))));
        assert!(matches!(read("a,label\n1,x\n2,y\n3,z\n"), Err(IngestError::Label(_))));
        assert!(matches!(read("a,label\n1,benign\n2,spam\n"), Err(IngestError::Label(_))));
    }

    #[test]
    fn ragged_rows_are_rejected() {
        assert!(matches!(read("a,label\n1,benign,extra\n"), Err(IngestError::Ragged { row: 1, .. })));
    }

    #[test]
    fn non_numeric_cell_makes_column_categorical() {
        let d = read("proto,label\ntcp,benign\n6,ransomware\n").unwrap();
        assert_eq!(d.column("proto").unwrap().spec.kind, ColumnKind::Categorical);
    }

    #[test]
    fn explicit_spec_must_parse() {
        let specs = [ColumnSpec::numeric("proto")];
        let r = read_csv("proto,label\ntcp,benign\n".as_bytes(), Some(&specs), "t");
        assert!(matches!(r, Err(IngestError::Schema(_))));
    }

    #[test]
    fn source_column_is_used_for_tags() {
        let d = read("a,label,source\n1,benign,process_memory\n2,ransomware,network_traffic\n").unwrap();
        assert_eq!(d.source, vec!["process_memory", "network_traffic"]);
        assert!(d.column("source").is_none());
    }

    #[test]
    fn numeric_median_and_categorical_mode() {
        let d = read("x,proto,label\n1,tcp,benign\n2,tcp,benign\n,udp,ransomware\n4,,ransomware\n").unwrap();
        let m = fit_imputer(&d).unwrap();
        assert_eq!(m.numeric_fill["x"], 2.0);
        assert_eq!(m.categorical_fill["proto"], "tcp");
    }

    #[test]
    fn mode_ties_break_lexicographically() {
        assert_eq!(categorical_mode(["udp", "tcp", "udp", "tcp"]).as_deref(), Some("tcp"));
    }

    #[test]
    fn all_missing_column_names_itself() {
        let d = read("x,y,label\n,1,benign\n,2,ransomware\n").unwrap();
        // an all-empty column infers as numeric
        match fit_imputer(&d) {
            Err(IngestError::AllMissing(c)) => assert_eq!(c, "x"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn apply_fills_only_missing_cells() {
        let d = read("rw,usd,label\n,,benign\n5,1,ransomware\n").unwrap();
        let mut m = ImputationModel::default();
        m.numeric_fill.insert("rw".into(), 73.0);
        m.numeric_fill.insert("usd".into(), 3044.5);
        let out = apply_imputer(&m, &d).unwrap();
        assert_eq!(out.numeric("rw").unwrap(), &[Some(73.0), Some(5.0)]);
        assert_eq!(out.numeric("usd").unwrap(), &[Some(3044.5), Some(1.0)]);
        m.numeric_fill.remove("usd");
        assert!(matches!(apply_imputer(&m, &d), Err(IngestError::NotInModel(c)) if c == "usd"));
    }

    #[test]
    fn apply_without_missing_is_identity() {
        let d = read("rw,label\n1,benign\n2,ransomware\n").unwrap();
        let m = fit_imputer(&d).unwrap();
        assert_eq!(apply_imputer(&m, &d).unwrap(), d);
    }

    fn labels(n0: usize, n1: usize) -> Vec<u8> {
        let mut v = vec![0u8; n0];
        v.extend(std::iter::repeat_n(1u8, n1));
        v
    }

    #[test]
    fn split_sizes_for_2500_rows() {
        let s = stratified_split_labels(&labels(1200, 1300), SplitFractions::default(), 7).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (2000, 250, 250));
    }

    #[test]
    fn ten_rows_five_per_class() {
        let l = labels(5, 5);
        let s = stratified_split_labels(&l, SplitFractions::default(), 1).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (8, 1, 1));
        let ones = |idx: &[usize]| idx.iter().filter(|&&i| l[i] == 1).count();
        assert_eq!(ones(&s.test) + ones(&s.validation), 1);
        assert!((ones(&s.train) as f64 - 4.0).abs() <= 1.0);
    }

    #[test]
    fn split_is_deterministic_per_seed() {
        let l = labels(40, 60);
        let a = stratified_split_labels(&l, SplitFractions::default(), 3).unwrap();
        let b = stratified_split_labels(&l, SplitFractions::default(), 3).unwrap();
        let c = stratified_split_labels(&l, SplitFractions::default(), 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.test, c.test);
    }

    #[test]
    fn split_rejects_tiny_classes_and_bad_fractions() {
        assert!(stratified_split_labels(&labels(3, 50), SplitFractions::default(), 0).is_err());
        let f = SplitFractions { train: 0.8, validation: 0.1, test: 0.2 };
        assert!(stratified_split_labels(&labels(50, 50), f, 0).is_err());
    }

    #[test]
    fn concat_unions_columns() {
        let pm = read("r,rw,label\n71,73,benign\n80,90,ransomware\n").unwrap().with_source_tag("process_memory");
        let ug = read("btc,prediction\n13,benign\n20,ransomware\n").unwrap().with_source_tag("network_traffic");
        let all = Dataset::concat(&[pm, ug]).unwrap();
        assert_eq!(all.len(), 4);
        assert_eq!(all.numeric("r").unwrap(), &[Some(71.0), Some(80.0), None, None]);
        assert_eq!(all.numeric("btc").unwrap(), &[None, None, Some(13.0), Some(20.0)]);
        assert_eq!(all.labels, vec![0, 1, 0, 1]);
        assert_eq!(all.label_column.as_deref(), Some("label"));
        assert_eq!(all.source[3], "network_traffic");
    }

    #[test]
    fn describe_reports_quantiles_and_mode() {
        let d = read("x,label\n1,benign\n2,benign\n2,ransomware\n3,ransomware\n10,benign\n").unwrap();
        let s = &describe(&d)[0];
        assert_eq!(s.count, 5);
        assert_eq!(s.mean, 3.6);
        assert_eq!(s.p50, 2.0);
        assert_eq!(s.mode, 2.0);
        assert_eq!((s.min, s.max), (1.0, 10.0));
    }
}

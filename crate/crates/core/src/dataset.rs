//! Tabular data model: schema inference, CSV ingestion and the class-scenario
//! taxonomy for incoming batches.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index into [`Schema::class_values`]. Ids are stable: new labels are only
/// ever appended.
pub type ClassId = u32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum AttributeKind {
    Numeric,
    /// Observed categories in first-seen order.
    Categorical(Vec<String>),
}

impl AttributeKind {
    pub fn is_numeric(&self) -> bool {
        matches!(self, AttributeKind::Numeric)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub kind: AttributeKind,
}

impl Attribute {
    pub fn numeric(name: impl Into<String>) -> Self {
        Attribute {
            name: name.into(),
            kind: AttributeKind::Numeric,
        }
    }

    pub fn categorical<S: Into<String>>(name: impl Into<String>, categories: impl IntoIterator<Item = S>) -> Self {
        Attribute {
            name: name.into(),
            kind: AttributeKind::Categorical(categories.into_iter().map(Into::into).collect()),
        }
    }
}

/// Attribute layout shared by every batch of a stream.
///
/// The class column is part of `attributes` (so CSV column order survives a
/// round trip) but its labels live in `class_values`; its own kind is an
/// empty categorical placeholder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    attributes: Vec<Attribute>,
    class_index: usize,
    class_values: Vec<String>,
}

impl Schema {
    pub fn new(mut attributes: Vec<Attribute>, class_index: usize, class_values: Vec<String>) -> Result<Self> {
        if class_index >= attributes.len() {
            return Err(Error::Config(format!(
                "class index {class_index} out of range for {} attributes",
                attributes.len()
            )));
        }
        let mut names = BTreeSet::new();
        for a in &attributes {
            if !names.insert(a.name.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate attribute name `{}`", a.name)));
            }
        }
        for (i, a) in attributes.iter().enumerate() {
            if i == class_index {
                continue;
            }
            if let AttributeKind::Categorical(c) = &a.kind {
                if c.is_empty() {
                    return Err(Error::InvalidInput(format!(
                        "categorical attribute `{}` has no observed category",
                        a.name
                    )));
                }
            }
        }
        let mut seen = BTreeSet::new();
        for v in &class_values {
            if !seen.insert(v.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate class label `{v}`")));
            }
        }
        attributes[class_index].kind = AttributeKind::Categorical(Vec::new());
        Ok(Schema {
            attributes,
            class_index,
            class_values,
        })
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn attribute(&self, index: usize) -> &Attribute {
        &self.attributes[index]
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn class_index(&self) -> usize {
        self.class_index
    }

    pub fn class_values(&self) -> &[String] {
        &self.class_values
    }

    pub fn class_count(&self) -> usize {
        self.class_values.len()
    }

    pub fn class_label(&self, id: ClassId) -> &str {
        &self.class_values[id as usize]
    }

    pub fn class_id(&self, label: &str) -> Option<ClassId> {
        self.class_values.iter().position(|v| v == label).map(|p| p as ClassId)
    }

    /// Predictor attribute indices (everything except the class column).
    pub fn feature_indices(&self) -> Vec<usize> {
        (0..self.attributes.len()).filter(|&i| i != self.class_index).collect()
    }

    pub fn numeric_indices(&self) -> Vec<usize> {
        self.feature_indices()
            .into_iter()
            .filter(|&i| self.attributes[i].kind.is_numeric())
            .collect()
    }

    pub fn category_id(&self, attr: usize, text: &str) -> Option<u32> {
        match &self.attributes[attr].kind {
            AttributeKind::Categorical(c) => c.iter().position(|v| v == text).map(|p| p as u32),
            AttributeKind::Numeric => None,
        }
    }

    pub fn category_label(&self, attr: usize, id: u32) -> Option<&str> {
        match &self.attributes[attr].kind {
            AttributeKind::Categorical(c) => c.get(id as usize).map(String::as_str),
            AttributeKind::Numeric => None,
        }
    }

    /// Returns the id of `label`, appending it if unseen.
    pub fn intern_class(&mut self, label: &str) -> ClassId {
        match self.class_id(label) {
            Some(id) => id,
            None => {
                self.class_values.push(label.to_owned());
                (self.class_values.len() - 1) as ClassId
            }
        }
    }

    fn intern_category(&mut self, attr: usize, text: &str) -> Option<u32> {
        match &mut self.attributes[attr].kind {
            AttributeKind::Categorical(c) => Some(match c.iter().position(|v| v == text) {
                Some(p) => p as u32,
                None => {
                    c.push(text.to_owned());
                    (c.len() - 1) as u32
                }
            }),
            AttributeKind::Numeric => None,
        }
    }

    /// Merges two schemas of the same stream, keeping the longer category and
    /// class lists. Fails unless one list is a prefix of the other everywhere.
    pub fn merge(&self, other: &Schema) -> Result<Schema> {
        if self.class_index != other.class_index || self.attributes.len() != other.attributes.len() {
            return Err(Error::Stream("schemas differ in attribute layout".into()));
        }
        let mut merged = self.clone();
        for (i, (a, b)) in self.attributes.iter().zip(&other.attributes).enumerate() {
            if a.name != b.name {
                return Err(Error::Stream(format!("attribute {i} is `{}` vs `{}`", a.name, b.name)));
            }
            match (&a.kind, &b.kind) {
                (AttributeKind::Numeric, AttributeKind::Numeric) => {}
                (AttributeKind::Categorical(x), AttributeKind::Categorical(y)) => {
                    merged.attributes[i].kind = AttributeKind::Categorical(merge_prefix(x, y).ok_or_else(|| {
                        Error::Stream(format!("categories of `{}` are not prefix-compatible", a.name))
                    })?);
                }
                _ => return Err(Error::Stream(format!("attribute `{}` changed kind", a.name))),
            }
        }
        merged.class_values = merge_prefix(&self.class_values, &other.class_values)
            .ok_or_else(|| Error::Stream("class labels are not prefix-compatible".into()))?;
        Ok(merged)
    }

    /// Stable short digest of the schema, used to tie serialized models to data.
    pub fn digest(&self) -> String {
        let text = serde_json::to_string(self).expect("schema serializes");
        format!("{:016x}", crate::rng::derive_seed(0, &text, 0))
    }
}

fn merge_prefix(a: &[String], b: &[String]) -> Option<Vec<String>> {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    (long[..short.len()] == *short).then(|| long.to_vec())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Num(f64),
    /// Category id, see [`Schema::category_id`].
    Cat(u32),
    Missing,
}

impl Value {
    pub fn as_num(&self) -> Option<f64> {
        match *self {
            Value::Num(x) => Some(x),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    /// One entry per schema attribute; the class column holds `Missing`.
    pub values: Vec<Value>,
    pub label: Option<ClassId>,
}

impl Record {
    pub fn new(values: Vec<Value>, label: Option<ClassId>) -> Self {
        Record { values, label }
    }

    pub fn value(&self, attr: usize) -> Value {
        self.values[attr]
    }

    pub fn unlabeled(&self) -> Record {
        Record {
            values: self.values.clone(),
            label: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub schema: Arc<Schema>,
    pub records: Vec<Record>,
    pub batch_id: u64,
    pub timestamp_ordinal: u64,
}

impl Batch {
    pub fn new(schema: Arc<Schema>, records: Vec<Record>, batch_id: u64) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            if r.values.len() != schema.len() {
                return Err(Error::InvalidInput(format!(
                    "record {i} has {} values, schema has {} attributes",
                    r.values.len(),
                    schema.len()
                )));
            }
            if let Some(l) = r.label {
                if l as usize >= schema.class_count() {
                    return Err(Error::InvalidInput(format!("record {i} has unknown class id {l}")));
                }
            }
        }
        Ok(Batch {
            schema,
            records,
            batch_id,
            timestamp_ordinal: batch_id,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.records.iter().all(|r| r.label.is_some())
    }

    pub fn class_set(&self) -> BTreeSet<ClassId> {
        self.records.iter().filter_map(|r| r.label).collect()
    }

    pub fn class_labels(&self) -> BTreeSet<String> {
        self.class_set()
            .into_iter()
            .map(|c| self.schema.class_label(c).to_owned())
            .collect()
    }

    pub fn subset(&self, rows: &[usize], batch_id: u64) -> Batch {
        Batch {
            schema: Arc::clone(&self.schema),
            records: rows.iter().map(|&r| self.records[r].clone()).collect(),
            batch_id,
            timestamp_ordinal: batch_id,
        }
    }

    /// Concatenates batches of one stream; the result carries the merged schema.
    pub fn concat<'a>(batches: impl IntoIterator<Item = &'a Batch>, batch_id: u64) -> Result<Batch> {
        let mut iter = batches.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::InvalidInput("cannot concatenate zero batches".into()))?;
        let mut schema = (*first.schema).clone();
        let mut records = first.records.clone();
        for b in iter {
            schema = schema.merge(&b.schema)?;
            records.extend(b.records.iter().cloned());
        }
        Ok(Batch {
            schema: Arc::new(schema),
            records,
            batch_id,
            timestamp_ordinal: batch_id,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnSelector {
    Name(String),
    Index(usize),
    Last,
}

impl ColumnSelector {
    pub fn resolve(&self, header: &[String]) -> Result<usize> {
        match self {
            ColumnSelector::Name(n) => header
                .iter()
                .position(|h| h == n)
                .ok_or_else(|| Error::Config(format!("class column `{n}` not found in header"))),
            ColumnSelector::Index(i) if *i < header.len() => Ok(*i),
            ColumnSelector::Index(i) => Err(Error::Config(format!(
                "class column index {i} out of range for {} columns",
                header.len()
            ))),
            ColumnSelector::Last if !header.is_empty() => Ok(header.len() - 1),
            ColumnSelector::Last => Err(Error::Config("empty header".into())),
        }
    }
}

impl std::str::FromStr for ColumnSelector {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "last" => ColumnSelector::Last,
            _ => match s.parse::<usize>() {
                Ok(i) => ColumnSelector::Index(i),
                Err(_) => ColumnSelector::Name(s.to_owned()),
            },
        })
    }
}

fn parse_num(token: &str) -> Option<f64> {
    token.trim().parse::<f64>().ok().filter(|x| x.is_finite())
}

/// Infers attribute kinds from sample rows: a column is numeric iff every
/// non-missing sampled token parses as a finite real.
pub fn infer_schema(
    header: &[String],
    sample_rows: &[Vec<String>],
    class_column: &ColumnSelector,
    missing_token: &str,
) -> Result<Schema> {
    if sample_rows.is_empty() {
        return Err(Error::SchemaInference("no sample rows".into()));
    }
    let class_index = class_column.resolve(header)?;
    let mut attributes = Vec::with_capacity(header.len());
    for (c, name) in header.iter().enumerate() {
        let tokens = sample_rows
            .iter()
            .filter_map(|row| row.get(c))
            .map(|t| t.trim())
            .filter(|t| *t != missing_token);
        if c == class_index {
            attributes.push(Attribute::categorical(name.clone(), Vec::<String>::new()));
            continue;
        }
        let tokens: Vec<&str> = tokens.collect();
        if tokens.iter().all(|t| parse_num(t).is_some()) {
            attributes.push(Attribute::numeric(name.clone()));
        } else {
            let mut cats: Vec<String> = Vec::new();
            for t in tokens {
                if !cats.iter().any(|c| c == t) {
                    cats.push(t.to_owned());
                }
            }
            attributes.push(Attribute::categorical(name.clone(), cats));
        }
    }
    let mut class_values: Vec<String> = Vec::new();
    for row in sample_rows {
        if let Some(t) = row.get(class_index).map(|t| t.trim()) {
            if t != missing_token && !class_values.iter().any(|v| v == t) {
                class_values.push(t.to_owned());
            }
        }
    }
    Schema::new(attributes, class_index, class_values)
}

#[derive(Clone, Debug)]
pub struct CsvOptions {
    pub delimiter: u8,
    pub missing_token: String,
    pub class_column: ColumnSelector,
    pub has_header: bool,
    /// Schema to parse against instead of inferring one. Unseen categories and
    /// class labels extend it.
    pub schema: Option<Schema>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            delimiter: b',',
            missing_token: "?".into(),
            class_column: ColumnSelector::Last,
            has_header: true,
            schema: None,
        }
    }
}

fn read_rows(path: &Path, options: &CsvOptions) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(options.delimiter)
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => csv_error(path, e),
            _ => Error::Parse {
                row: i + 1,
                message: e.to_string(),
            },
        })?;
        rows.push(rec.iter().map(|s| s.trim().to_owned()).collect::<Vec<_>>());
    }
    let header = if options.has_header {
        if rows.is_empty() {
            return Err(Error::Parse {
                row: 1,
                message: "missing header row".into(),
            });
        }
        rows.remove(0)
    } else {
        let width = rows.first().map_or(0, Vec::len);
        (0..width).map(|i| format!("a{i}")).collect()
    };
    let offset = usize::from(options.has_header) + 1;
    for (i, row) in rows.iter().enumerate() {
        if row.len() != header.len() {
            return Err(Error::Parse {
                row: i + offset,
                message: format!("expected {} columns, found {}", header.len(), row.len()),
            });
        }
    }
    Ok((header, rows))
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            row: 0,
            message: format!("{other:?}"),
        },
    }
}

/// Parses raw rows against `schema`, growing it with unseen categories/labels.
pub fn parse_rows(schema: &mut Schema, rows: &[Vec<String>], missing_token: &str, first_row: usize) -> Result<Vec<Record>> {
    let class_index = schema.class_index();
    let mut records = Vec::with_capacity(rows.len());
    for (r, row) in rows.iter().enumerate() {
        if row.len() != schema.len() {
            return Err(Error::Parse {
                row: r + first_row,
                message: format!("expected {} columns, found {}", schema.len(), row.len()),
            });
        }
        let mut values = Vec::with_capacity(row.len());
        let mut label = None;
        for (c, token) in row.iter().enumerate() {
            let token = token.trim();
            if c == class_index {
                values.push(Value::Missing);
                if token != missing_token {
                    label = Some(schema.intern_class(token));
                }
                continue;
            }
            if token == missing_token {
                values.push(Value::Missing);
                continue;
            }
            let v = match schema.attribute(c).kind {
                AttributeKind::Numeric => Value::Num(parse_num(token).ok_or_else(|| Error::Parse {
                    row: r + first_row,
                    message: format!("`{token}` is not numeric (column `{}`)", schema.attribute(c).name),
                })?),
                AttributeKind::Categorical(_) => Value::Cat(schema.intern_category(c, token).expect("categorical")),
            };
            values.push(v);
        }
        records.push(Record { values, label });
    }
    Ok(records)
}

/// Loads one CSV file as a batch; row order is preserved.
pub fn load_csv(path: impl AsRef<Path>, options: &CsvOptions) -> Result<Batch> {
    let path = path.as_ref();
    let (header, rows) = read_rows(path, options)?;
    let mut schema = match &options.schema {
        Some(s) => {
            let names: Vec<&str> = s.attributes().iter().map(|a| a.name.as_str()).collect();
            if options.has_header && names != header.iter().map(String::as_str).collect::<Vec<_>>() {
                return Err(Error::Stream(format!("header of {} does not match the schema", path.display())));
            }
            s.clone()
        }
        None => infer_schema(&header, &rows, &options.class_column, &options.missing_token)?,
    };
    let records = parse_rows(&mut schema, &rows, &options.missing_token, usize::from(options.has_header) + 1)?;
    Batch::new(Arc::new(schema), records, 0)
}

fn format_value(schema: &Schema, attr: usize, v: Value, missing: &str) -> String {
    match v {
        Value::Num(x) => format!("{x}"),
        Value::Cat(c) => schema.category_label(attr, c).unwrap_or(missing).to_owned(),
        Value::Missing => missing.to_owned(),
    }
}

/// Text cells of `record` in schema column order, as `write_csv` emits them.
pub fn record_fields(schema: &Schema, record: &Record, missing: &str) -> Vec<String> {
    (0..schema.len())
        .map(|c| {
            if c == schema.class_index() {
                record.label.map_or_else(|| missing.to_owned(), |l| schema.class_label(l).to_owned())
            } else {
                format_value(schema, c, record.values[c], missing)
            }
        })
        .collect()
}

pub fn write_csv(batch: &Batch, path: impl AsRef<Path>, options: &CsvOptions) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::WriterBuilder::new()
        .delimiter(options.delimiter)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let schema = &batch.schema;
    let wr = |w: &mut csv::Writer<std::fs::File>, row: Vec<String>| w.write_record(&row).map_err(|e| csv_error(path, e));
    if options.has_header {
        wr(&mut w, schema.attributes().iter().map(|a| a.name.clone()).collect())?;
    }
    for r in &batch.records {
        let row = record_fields(schema, r, &options.missing_token);
        wr(&mut w, row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scenario {
    /// Single known class.
    Skc,
    /// Multiple known classes.
    Mkc,
    /// Single unknown class.
    Suc,
    /// Multiple unknown classes.
    Muc,
    /// Mixture of known and unknown classes.
    Mkuc,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Skc => "SKC",
            Scenario::Mkc => "MKC",
            Scenario::Suc => "SUC",
            Scenario::Muc => "MUC",
            Scenario::Mkuc => "MKUC",
        })
    }
}

/// Categorizes the class values of a new batch relative to the known ones.
pub fn class_scenario<T: Ord>(new_classes: &BTreeSet<T>, known_classes: &BTreeSet<T>) -> Result<Scenario> {
    if new_classes.is_empty() {
        return Err(Error::InvalidInput("batch has no class values".into()));
    }
    let known = new_classes.iter().filter(|c| known_classes.contains(c)).count();
    let single = new_classes.len() == 1;
    Ok(match (known == new_classes.len(), known == 0) {
        (true, _) if single => Scenario::Skc,
        (true, _) => Scenario::Mkc,
        (_, true) if single => Scenario::Suc,
        (_, true) => Scenario::Muc,
        _ => Scenario::Mkuc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn infer_mixed_kinds() {
        let schema = infer_schema(
            &s(&["a", "b", "cls"]),
            &[s(&["1.0", "x", "yes"]), s(&["2.5", "y", "no"])],
            &ColumnSelector::Name("cls".into()),
            "?",
        )
        .unwrap();
        assert!(schema.attribute(0).kind.is_numeric());
        assert_eq!(schema.attribute(1).kind, AttributeKind::Categorical(s(&["x", "y"])));
        assert_eq!(schema.class_index(), 2);
        assert_eq!(schema.class_values(), &s(&["yes", "no"])[..]);
    }

    #[test]
    fn infer_ignores_missing_and_non_numeric_forces_categorical() {
        let schema = infer_schema(&s(&["a", "c"]), &[s(&["1", "y"]), s(&["?", "n"])], &ColumnSelector::Last, "?").unwrap();
        assert!(schema.attribute(0).kind.is_numeric());
        let schema = infer_schema(
            &s(&["a", "cls"]),
            &[s(&["1", "yes"]), s(&["oops", "no"])],
            &ColumnSelector::Name("cls".into()),
            "?",
        )
        .unwrap();
        assert!(!schema.attribute(0).kind.is_numeric());
    }

    #[test]
    fn infer_errors() {
        assert!(matches!(
            infer_schema(&s(&["a", "b"]), &[], &ColumnSelector::Last, "?"),
            Err(Error::SchemaInference(_))
        ));
        assert!(matches!(
            infer_schema(&s(&["a", "b"]), &[s(&["1", "2"])], &ColumnSelector::Name("zz".into()), "?"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn scenario_examples() {
        let set = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<BTreeSet<_>>();
        assert_eq!(class_scenario(&set(&["c1"]), &set(&["c1", "c2"])).unwrap(), Scenario::Skc);
        assert_eq!(class_scenario(&set(&["c3", "c4"]), &set(&["c1", "c2"])).unwrap(), Scenario::Muc);
        assert_eq!(class_scenario(&set(&["c1", "c3"]), &set(&["c1", "c2"])).unwrap(), Scenario::Mkuc);
        assert_eq!(class_scenario(&set(&["c1", "c2"]), &set(&["c1", "c2"])).unwrap(), Scenario::Mkc);
        assert_eq!(class_scenario(&set(&["c9"]), &set(&["c1"])).unwrap(), Scenario::Suc);
        assert!(class_scenario(&set(&[]), &set(&["c1"])).is_err());
    }

    proptest! {
        #[test]
        fn scenario_partition(new in proptest::collection::btree_set(0u8..8, 1..6),
                              known in proptest::collection::btree_set(0u8..8, 0..6)) {
            let sc = class_scenario(&new, &known).unwrap();
            let all_known = new.is_subset(&known);
            let none_known = new.is_disjoint(&known);
            let hits = [
                new.len() == 1 && all_known,
                new.len() > 1 && all_known,
                new.len() == 1 && none_known,
                new.len() > 1 && none_known,
                new.len() > 1 && !all_known && !none_known,
            ];
            prop_assert_eq!(hits.iter().filter(|h| **h).count(), 1);
            let idx = hits.iter().position(|h| *h).unwrap();
            prop_assert_eq!(sc, [Scenario::Skc, Scenario::Mkc, Scenario::Suc, Scenario::Muc, Scenario::Mkuc][idx]);
        }
    }

    #[test]
    fn merge_keeps_prefix_order() {
        let mut a = Schema::new(vec![Attribute::numeric("x"), Attribute::categorical("y", ["l"])], 1, s(&["p"])).unwrap();
        let b = a.clone();
        a.intern_class("q");
        let m = b.merge(&a).unwrap();
        assert_eq!(m.class_values(), &s(&["p", "q"])[..]);
        let mut c = b.clone();
        c.intern_class("z");
        assert!(a.merge(&c).is_err());
    }
}

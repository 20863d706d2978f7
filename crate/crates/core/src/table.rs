//! Mixed-type tables with explicit missingness.
//!
//! A [`Table`] is an immutable column-major grid of [`Cell`]s typed by a
//! [`Schema`]. Categorical cells hold an index into their column's level list,
//! so two tables only agree on a categorical value when they agree on the
//! schema; [`Table::align_to_schema`] remaps indices by level name.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Categorical { levels: Vec<String> },
}

impl FeatureKind {
    pub fn categorical<S: Into<String>>(levels: impl IntoIterator<Item = S>) -> Self {
        FeatureKind::Categorical {
            levels: levels.into_iter().map(Into::into).collect(),
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, FeatureKind::Numeric)
    }

    pub fn levels(&self) -> Option<&[String]> {
        match self {
            FeatureKind::Numeric => None,
            FeatureKind::Categorical { levels } => Some(levels),
        }
    }

    pub fn n_levels(&self) -> usize {
        self.levels().map_or(0, <[String]>::len)
    }

    pub fn level_index(&self, level: &str) -> Option<u32> {
        self.levels()?
            .iter()
            .position(|l| l == level)
            .map(|i| i as u32)
    }

    fn same_family(&self, other: &FeatureKind) -> bool {
        self.is_numeric() == other.is_numeric()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    #[serde(flatten)]
    pub kind: FeatureKind,
}

impl Feature {
    pub fn numeric(name: impl Into<String>) -> Self {
        Feature {
            name: name.into(),
            kind: FeatureKind::Numeric,
        }
    }

    pub fn categorical<S: Into<String>>(
        name: impl Into<String>,
        levels: impl IntoIterator<Item = S>,
    ) -> Self {
        Feature {
            name: name.into(),
            kind: FeatureKind::categorical(levels),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchema {
    features: Vec<Feature>,
    #[serde(default)]
    target: Option<String>,
    #[serde(default)]
    source_feature: Option<String>,
}

impl TryFrom<RawSchema> for Schema {
    type Error = Error;

    fn try_from(raw: RawSchema) -> Result<Self> {
        Schema::new(raw.features, raw.target, raw.source_feature)
    }
}

/// Ordered feature list plus the optional target and dataset-origin columns.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSchema")]
pub struct Schema {
    features: Vec<Feature>,
    target: Option<String>,
    source_feature: Option<String>,
}

impl Schema {
    pub fn new(
        features: Vec<Feature>,
        target: Option<String>,
        source_feature: Option<String>,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        for f in &features {
            if !seen.insert(f.name.as_str()) {
                return Err(Error::Schema(format!(
                    "duplicate feature name '{}'",
                    f.name
                )));
            }
            if let FeatureKind::Categorical { levels } = &f.kind {
                if levels.is_empty() {
                    return Err(Error::Schema(format!(
                        "categorical feature '{}' has no levels",
                        f.name
                    )));
                }
                let distinct: HashSet<_> = levels.iter().collect();
                if distinct.len() != levels.len() {
                    return Err(Error::Schema(format!(
                        "categorical feature '{}' has duplicate levels",
                        f.name
                    )));
                }
            }
        }
        let schema = Schema {
            features,
            target: None,
            source_feature: None,
        };
        schema
            .with_target(target)?
            .with_source_feature(source_feature)
    }

    pub fn from_features(features: Vec<Feature>) -> Result<Self> {
        Schema::new(features, None, None)
    }

    pub fn with_target(mut self, target: Option<String>) -> Result<Self> {
        if let Some(t) = &target {
            let idx = self.index_of(t)?;
            if self.features[idx].kind.is_numeric() {
                return Err(Error::Schema(format!("target '{t}' must be categorical")));
            }
        }
        self.target = target;
        Ok(self)
    }

    pub fn with_source_feature(mut self, source: Option<String>) -> Result<Self> {
        if let Some(s) = &source {
            self.index_of(s)?;
        }
        self.source_feature = source;
        Ok(self)
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn feature(&self, index: usize) -> &Feature {
        &self.features[index]
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.features.iter().map(|f| f.name.as_str())
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.position(name)
            .ok_or_else(|| Error::UnknownFeature(name.to_string()))
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn target(&self) -> Option<&str> {
        self.target.as_deref()
    }

    pub fn target_index(&self) -> Option<usize> {
        self.target.as_deref().and_then(|t| self.position(t))
    }

    pub fn source_feature(&self) -> Option<&str> {
        self.source_feature.as_deref()
    }

    /// The named features in the given order; roles are kept when their
    /// feature is selected.
    pub fn select(&self, names: &[&str]) -> Result<Schema> {
        let features = names
            .iter()
            .map(|n| self.index_of(n).map(|j| self.features[j].clone()))
            .collect::<Result<Vec<_>>>()?;
        let keep = |role: Option<&str>| role.filter(|r| names.contains(r)).map(str::to_string);
        Schema::new(features, keep(self.target()), keep(self.source_feature()))
    }

    /// Number of features that are neither the target nor the source indicator.
    pub fn n_predictors(&self) -> usize {
        self.names()
            .filter(|n| Some(*n) != self.target() && Some(*n) != self.source_feature())
            .count()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Union of schemas in first-appearance order; categorical levels are unioned.
pub fn union_schema(schemas: &[&Schema]) -> Result<Schema> {
    let mut features: Vec<Feature> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut target = None;
    let mut source = None;
    for schema in schemas {
        for f in &schema.features {
            match index.get(&f.name) {
                None => {
                    index.insert(f.name.clone(), features.len());
                    features.push(f.clone());
                }
                Some(&i) => {
                    let existing = &mut features[i];
                    if !existing.kind.same_family(&f.kind) {
                        return Err(Error::KindConflict(f.name.clone()));
                    }
                    if let (
                        FeatureKind::Categorical { levels: into },
                        FeatureKind::Categorical { levels: from },
                    ) = (&mut existing.kind, &f.kind)
                    {
                        for l in from {
                            if !into.contains(l) {
                                into.push(l.clone());
                            }
                        }
                    }
                }
            }
        }
        if target.is_none() {
            target = schema.target.clone();
        }
        if source.is_none() {
            source = schema.source_feature.clone();
        }
    }
    Schema::new(features, target, source)
}

/// A single table cell. Categorical values are indices into the column's levels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Cell {
    Missing,
    Number(f64),
    Category(u32),
}

impl Cell {
    pub fn is_missing(&self) -> bool {
        matches!(self, Cell::Missing)
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Cell::Number(x) => Some(*x),
            _ => None,
        }
    }

    pub fn as_category(&self) -> Option<u32> {
        match self {
            Cell::Category(c) => Some(*c),
            _ => None,
        }
    }

    /// Numeric view used by the tree code: numbers as-is, categories as their index.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Missing => None,
            Cell::Number(x) => Some(*x),
            Cell::Category(c) => Some(*c as f64),
        }
    }

    fn check(&self, kind: &FeatureKind) -> bool {
        match (self, kind) {
            (Cell::Missing, _) => true,
            (Cell::Number(x), FeatureKind::Numeric) => x.is_finite(),
            (Cell::Category(c), FeatureKind::Categorical { levels }) => {
                (*c as usize) < levels.len()
            }
            _ => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    schema: Schema,
    columns: Vec<Vec<Cell>>,
    n_rows: usize,
}

impl Table {
    pub fn new(schema: Schema, columns: Vec<Vec<Cell>>) -> Result<Self> {
        if columns.len() != schema.len() {
            return Err(Error::Structure(format!(
                "{} columns for a schema of {} features",
                columns.len(),
                schema.len()
            )));
        }
        let n_rows = columns.first().map_or(0, Vec::len);
        for (j, col) in columns.iter().enumerate() {
            let feature = schema.feature(j);
            if col.len() != n_rows {
                return Err(Error::Structure(format!(
                    "column '{}' has {} rows, expected {}",
                    feature.name,
                    col.len(),
                    n_rows
                )));
            }
            if let Some(row) = col.iter().position(|c| !c.check(&feature.kind)) {
                return Err(Error::Schema(format!(
                    "cell at row {row} does not type-check against feature '{}'",
                    feature.name
                )));
            }
        }
        Ok(Table {
            schema,
            columns,
            n_rows,
        })
    }

    pub fn from_rows(schema: Schema, rows: &[Vec<Cell>]) -> Result<Self> {
        let p = schema.len();
        let mut columns = vec![Vec::with_capacity(rows.len()); p];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != p {
                return Err(Error::Structure(format!(
                    "row {i} has {} cells, expected {p}",
                    row.len()
                )));
            }
            for (col, cell) in columns.iter_mut().zip(row) {
                col.push(*cell);
            }
        }
        let mut table = Table::new(schema, columns)?;
        table.n_rows = rows.len();
        Ok(table)
    }

    pub fn empty(schema: Schema) -> Self {
        let p = schema.len();
        Table {
            schema,
            columns: vec![Vec::new(); p],
            n_rows: 0,
        }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn cell(&self, row: usize, col: usize) -> Cell {
        self.columns[col][row]
    }

    pub fn column(&self, col: usize) -> &[Cell] {
        &self.columns[col]
    }

    pub fn column_by_name(&self, name: &str) -> Result<&[Cell]> {
        Ok(&self.columns[self.schema.index_of(name)?])
    }

    pub fn row(&self, row: usize) -> Vec<Cell> {
        self.columns.iter().map(|c| c[row]).collect()
    }

    pub fn into_columns(self) -> (Schema, Vec<Vec<Cell>>) {
        (self.schema, self.columns)
    }

    pub fn n_missing(&self) -> usize {
        self.columns
            .iter()
            .map(|c| c.iter().filter(|x| x.is_missing()).count())
            .sum()
    }

    pub fn is_complete(&self) -> bool {
        self.first_missing().is_none()
    }

    /// (row, column) of the first missing cell in row-major order.
    pub fn first_missing(&self) -> Option<(usize, usize)> {
        (0..self.n_rows).find_map(|i| {
            self.columns
                .iter()
                .position(|c| c[i].is_missing())
                .map(|j| (i, j))
        })
    }

    pub fn require_complete(&self) -> Result<()> {
        match self.first_missing() {
            None => Ok(()),
            Some((row, j)) => Err(Error::MissingCells {
                row,
                feature: self.schema.feature(j).name.clone(),
            }),
        }
    }

    /// Text rendering of a cell; missing renders as the empty string.
    pub fn cell_text(&self, row: usize, col: usize) -> String {
        match self.cell(row, col) {
            Cell::Missing => String::new(),
            Cell::Number(x) => format_number(x),
            Cell::Category(c) => {
                self.schema.feature(col).kind.levels().expect("categorical")[c as usize].clone()
            }
        }
    }

    /// Level name of a categorical cell.
    pub fn level_name(&self, row: usize, col: usize) -> Option<&str> {
        let c = self.cell(row, col).as_category()?;
        Some(self.schema.feature(col).kind.levels()?[c as usize].as_str())
    }

    pub fn column_stats(&self, name: &str) -> Result<ColumnSummary> {
        let j = self.schema.index_of(name)?;
        Ok(ColumnSummary::of(
            &self.schema.feature(j).clone(),
            &self.columns[j],
        ))
    }

    /// Reorder and extend columns to `combined`. Columns not present in `self`
    /// become all-missing; categorical indices are remapped by level name.
    pub fn align_to_schema(&self, combined: &Schema) -> Result<Table> {
        if let Some(extra) = self.schema.names().find(|n| combined.position(n).is_none()) {
            return Err(Error::Schema(format!(
                "feature '{extra}' is absent from the target schema"
            )));
        }
        let mut columns = Vec::with_capacity(combined.len());
        for target in combined.features() {
            match self.schema.position(&target.name) {
                None => columns.push(vec![Cell::Missing; self.n_rows]),
                Some(j) => {
                    let source = &self.schema.feature(j).kind;
                    if !source.same_family(&target.kind) {
                        return Err(Error::KindConflict(target.name.clone()));
                    }
                    match (source, &target.kind) {
                        (FeatureKind::Numeric, _) => columns.push(self.columns[j].clone()),
                        (
                            FeatureKind::Categorical { levels: from },
                            FeatureKind::Categorical { levels: to },
                        ) => {
                            let map = from
                                .iter()
                                .map(|l| {
                                    to.iter().position(|t| t == l).map(|p| p as u32).ok_or_else(
                                        || {
                                            Error::Schema(format!(
                                                "level '{l}' of '{}' missing from target schema",
                                                target.name
                                            ))
                                        },
                                    )
                                })
                                .collect::<Result<Vec<_>>>()?;
                            columns.push(
                                self.columns[j]
                                    .iter()
                                    .map(|c| match c {
                                        Cell::Category(k) => Cell::Category(map[*k as usize]),
                                        other => *other,
                                    })
                                    .collect(),
                            );
                        }
                        _ => unreachable!(),
                    }
                }
            }
        }
        let mut out = Table::new(combined.clone(), columns)?;
        out.n_rows = self.n_rows;
        Ok(out)
    }

    pub fn drop_columns(&self, names: &[&str]) -> Result<Table> {
        let drop: HashSet<usize> = names
            .iter()
            .map(|n| self.schema.index_of(n))
            .collect::<Result<_>>()?;
        let keep: Vec<usize> = (0..self.n_cols()).filter(|j| !drop.contains(j)).collect();
        self.project(&keep)
    }

    pub fn select_columns(&self, names: &[&str]) -> Result<Table> {
        let keep: Vec<usize> = names
            .iter()
            .map(|n| self.schema.index_of(n))
            .collect::<Result<_>>()?;
        self.project(&keep)
    }

    fn project(&self, keep: &[usize]) -> Result<Table> {
        let features = keep
            .iter()
            .map(|&j| self.schema.feature(j).clone())
            .collect::<Vec<_>>();
        let retained = |name: Option<&str>| {
            name.filter(|n| features.iter().any(|f| f.name == *n))
                .map(str::to_string)
        };
        let schema = Schema::new(
            features.clone(),
            retained(self.schema.target()),
            retained(self.schema.source_feature()),
        )?;
        let columns = keep.iter().map(|&j| self.columns[j].clone()).collect();
        Ok(Table {
            schema,
            columns,
            n_rows: self.n_rows,
        })
    }

    pub fn select_rows(&self, indices: &[usize]) -> Result<Table> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n_rows) {
            return Err(Error::RowOutOfRange {
                index: bad,
                n_rows: self.n_rows,
            });
        }
        let columns = self
            .columns
            .iter()
            .map(|col| indices.iter().map(|&i| col[i]).collect())
            .collect();
        Ok(Table {
            schema: self.schema.clone(),
            columns,
            n_rows: indices.len(),
        })
    }

    /// Row indices whose categorical `feature` equals `level`.
    pub fn rows_where(&self, feature: &str, level: &str) -> Result<Vec<usize>> {
        let j = self.schema.index_of(feature)?;
        let Some(k) = self.schema.feature(j).kind.level_index(level) else {
            return Ok(Vec::new());
        };
        Ok(self.columns[j]
            .iter()
            .enumerate()
            .filter(|(_, c)| **c == Cell::Category(k))
            .map(|(i, _)| i)
            .collect())
    }

    /// Append a column at the end of the schema.
    pub fn with_column(&self, feature: Feature, cells: Vec<Cell>) -> Result<Table> {
        if cells.len() != self.n_rows {
            return Err(Error::Structure(format!(
                "new column '{}' has {} rows, expected {}",
                feature.name,
                cells.len(),
                self.n_rows
            )));
        }
        let mut features = self.schema.features().to_vec();
        features.push(feature);
        let schema = Schema::new(
            features,
            self.schema.target.clone(),
            self.schema.source_feature.clone(),
        )?;
        let mut columns = self.columns.clone();
        columns.push(cells);
        let mut out = Table::new(schema, columns)?;
        out.n_rows = self.n_rows;
        Ok(out)
    }

    /// Same cells under a schema with the same kinds but different metadata
    /// (target / source designations).
    pub fn with_schema_roles(
        &self,
        target: Option<String>,
        source: Option<String>,
    ) -> Result<Table> {
        let schema = self
            .schema
            .clone()
            .with_target(target)?
            .with_source_feature(source)?;
        Ok(Table {
            schema,
            columns: self.columns.clone(),
            n_rows: self.n_rows,
        })
    }

    /// Replace a column's cells, keeping its kind.
    pub fn replace_column(&self, col: usize, cells: Vec<Cell>) -> Result<Table> {
        let kind = &self.schema.feature(col).kind;
        if cells.len() != self.n_rows || cells.iter().any(|c| !c.check(kind)) {
            return Err(Error::Structure(format!(
                "replacement for column '{}' does not fit",
                self.schema.feature(col).name
            )));
        }
        let mut columns = self.columns.clone();
        columns[col] = cells;
        Ok(Table {
            schema: self.schema.clone(),
            columns,
            n_rows: self.n_rows,
        })
    }
}

/// Stack tables with identical schemas, preserving row order.
pub fn stack(tables: &[&Table]) -> Result<Table> {
    let first = tables
        .first()
        .ok_or_else(|| Error::InvalidArgument("stack of zero tables".into()))?;
    let mut columns: Vec<Vec<Cell>> = vec![Vec::new(); first.n_cols()];
    let mut n_rows = 0;
    for t in tables {
        if t.schema.features != first.schema.features {
            return Err(Error::Schema("stack requires identical schemas".into()));
        }
        for (into, from) in columns.iter_mut().zip(&t.columns) {
            into.extend_from_slice(from);
        }
        n_rows += t.n_rows;
    }
    Ok(Table {
        schema: first.schema.clone(),
        columns,
        n_rows,
    })
}

/// Shortest representation that parses back to the same f64.
pub fn format_number(x: f64) -> String {
    let s = format!("{x}");
    debug_assert_eq!(s.parse::<f64>().ok(), Some(x));
    s
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnStats {
    Numeric {
        mean: Option<f64>,
        sd: Option<f64>,
        min: Option<f64>,
        max: Option<f64>,
    },
    Categorical {
        frequencies: Vec<(String, usize)>,
        mode: Option<String>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ColumnSummary {
    pub feature: String,
    pub n_observed: usize,
    pub n_missing: usize,
    pub stats: ColumnStats,
}

impl ColumnSummary {
    fn of(feature: &Feature, cells: &[Cell]) -> Self {
        let n_missing = cells.iter().filter(|c| c.is_missing()).count();
        let n_observed = cells.len() - n_missing;
        let stats = match &feature.kind {
            FeatureKind::Numeric => {
                let xs: Vec<f64> = cells.iter().filter_map(Cell::as_number).collect();
                let (mean, sd) = mean_sd(&xs);
                ColumnStats::Numeric {
                    mean,
                    sd,
                    min: xs.iter().copied().reduce(f64::min),
                    max: xs.iter().copied().reduce(f64::max),
                }
            }
            FeatureKind::Categorical { levels } => {
                let counts = level_counts(cells, levels.len());
                ColumnStats::Categorical {
                    frequencies: levels.iter().cloned().zip(counts.iter().copied()).collect(),
                    mode: mode_index(&counts).map(|k| levels[k].clone()),
                }
            }
        };
        ColumnSummary {
            feature: feature.name.clone(),
            n_observed,
            n_missing,
            stats,
        }
    }

    pub fn mean(&self) -> Option<f64> {
        match self.stats {
            ColumnStats::Numeric { mean, .. } => mean,
            _ => None,
        }
    }

    pub fn mode(&self) -> Option<&str> {
        match &self.stats {
            ColumnStats::Categorical { mode, .. } => mode.as_deref(),
            _ => None,
        }
    }
}

/// Mean and sample standard deviation (sd is 0 for a single observation).
pub fn mean_sd(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (Some(mean), Some(0.0));
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some(var.sqrt()))
}

pub fn level_counts(cells: &[Cell], n_levels: usize) -> Vec<usize> {
    let mut counts = vec![0usize; n_levels];
    for c in cells.iter().filter_map(Cell::as_category) {
        counts[c as usize] += 1;
    }
    counts
}

/// Most frequent level; ties go to the earliest level.
pub fn mode_index(counts: &[usize]) -> Option<usize> {
    let best = *counts.iter().max()?;
    if best == 0 {
        return None;
    }
    counts.iter().position(|&c| c == best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ab_schema() -> Schema {
        Schema::from_features(vec![
            Feature::numeric("A"),
            Feature::categorical("B", ["x", "y"]),
        ])
        .unwrap()
    }

    #[test]
    fn schema_rejects_bad_definitions() {
        assert!(Schema::from_features(vec![Feature::numeric("a"), Feature::numeric("a")]).is_err());
        assert!(
            Schema::from_features(vec![Feature::categorical("a", Vec::<String>::new())]).is_err()
        );
        assert!(Schema::from_features(vec![Feature::categorical("a", ["x", "x"])]).is_err());
        assert!(Schema::new(vec![Feature::numeric("a")], Some("a".into()), None).is_err());
        assert!(Schema::new(vec![Feature::numeric("a")], Some("b".into()), None).is_err());
    }

    #[test]
    fn numeric_stats_skip_missing() {
        let schema = Schema::from_features(vec![Feature::numeric("a")]).unwrap();
        let col = [1.0, 2.0, f64::NAN, 3.0]
            .iter()
            .map(|&x| {
                if x.is_nan() {
                    Cell::Missing
                } else {
                    Cell::Number(x)
                }
            })
            .collect();
        let t = Table::new(schema, vec![col]).unwrap();
        let s = t.column_stats("a").unwrap();
        assert_eq!(s.mean(), Some(2.0));
        assert_eq!(s.n_missing, 1);
        assert_eq!(s.n_observed, 3);
        assert!(t.column_stats("zzz").is_err());
    }

    #[test]
    fn categorical_mode_and_tie_break() {
        let schema = Schema::from_features(vec![Feature::categorical("c", ["a", "b"])]).unwrap();
        let t = Table::new(
            schema.clone(),
            vec![vec![
                Cell::Category(0),
                Cell::Category(0),
                Cell::Category(1),
            ]],
        )
        .unwrap();
        assert_eq!(t.column_stats("c").unwrap().mode(), Some("a"));
        let tie = Table::new(schema, vec![vec![Cell::Category(1), Cell::Category(0)]]).unwrap();
        assert_eq!(tie.column_stats("c").unwrap().mode(), Some("a"));
    }

    #[test]
    fn cells_must_type_check() {
        let schema = ab_schema();
        assert!(Table::new(
            schema.clone(),
            vec![vec![Cell::Category(0)], vec![Cell::Category(0)]]
        )
        .is_err());
        assert!(Table::new(
            schema.clone(),
            vec![vec![Cell::Number(1.0)], vec![Cell::Category(2)]]
        )
        .is_err());
        assert!(Table::new(
            schema.clone(),
            vec![vec![Cell::Number(f64::INFINITY)], vec![Cell::Missing]]
        )
        .is_err());
        assert!(Table::new(schema, vec![vec![Cell::Number(1.0)], vec![]]).is_err());
    }

    #[test]
    fn align_reorders_and_pads() {
        let t = Table::new(
            Schema::from_features(vec![Feature::numeric("B"), Feature::numeric("A")]).unwrap(),
            vec![vec![Cell::Number(2.0)], vec![Cell::Number(1.0)]],
        )
        .unwrap();
        let target = Schema::from_features(vec![
            Feature::numeric("A"),
            Feature::numeric("B"),
            Feature::numeric("C"),
        ])
        .unwrap();
        let a = t.align_to_schema(&target).unwrap();
        assert_eq!(
            a.row(0),
            vec![Cell::Number(1.0), Cell::Number(2.0), Cell::Missing]
        );
        assert_eq!(a.align_to_schema(&target).unwrap(), a);

        let conflict = Schema::from_features(vec![
            Feature::categorical("A", ["u"]),
            Feature::numeric("B"),
        ])
        .unwrap();
        assert!(matches!(
            t.align_to_schema(&conflict),
            Err(Error::KindConflict(_))
        ));
        let narrower = Schema::from_features(vec![Feature::numeric("A")]).unwrap();
        assert!(matches!(
            t.align_to_schema(&narrower),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn align_remaps_widened_levels() {
        let t = Table::new(
            Schema::from_features(vec![Feature::categorical("c", ["y"])]).unwrap(),
            vec![vec![Cell::Category(0)]],
        )
        .unwrap();
        let wide = Schema::from_features(vec![Feature::categorical("c", ["x", "y"])]).unwrap();
        let a = t.align_to_schema(&wide).unwrap();
        assert_eq!(a.level_name(0, 0), Some("y"));
    }

    #[test]
    fn union_is_ordered_and_idempotent() {
        let ab = Schema::from_features(vec![Feature::numeric("A"), Feature::numeric("B")]).unwrap();
        let bc = Schema::from_features(vec![Feature::numeric("B"), Feature::numeric("C")]).unwrap();
        let u = union_schema(&[&ab, &bc]).unwrap();
        assert_eq!(u.names().collect::<Vec<_>>(), ["A", "B", "C"]);
        assert_eq!(union_schema(&[&ab, &ab]).unwrap(), ab);
        let bad = Schema::from_features(vec![Feature::categorical("A", ["q"])]).unwrap();
        assert!(union_schema(&[&ab, &bad]).is_err());
    }

    #[test]
    fn stack_and_select() {
        let s = ab_schema();
        let t1 =
            Table::from_rows(s.clone(), &[vec![Cell::Number(1.0), Cell::Category(0)]]).unwrap();
        let t2 = Table::from_rows(
            s.clone(),
            &[
                vec![Cell::Number(2.0), Cell::Category(1)],
                vec![Cell::Missing, Cell::Missing],
            ],
        )
        .unwrap();
        let st = stack(&[&t1, &t2]).unwrap();
        assert_eq!(st.n_rows(), 3);
        assert_eq!(st.cell(1, 0), Cell::Number(2.0));
        assert_eq!(stack(&[&t1]).unwrap(), t1);
        assert_eq!(st.select_rows(&[0, 1, 2]).unwrap(), st);
        assert!(st.select_rows(&[3]).is_err());
        let other = Schema::from_features(vec![Feature::numeric("A")]).unwrap();
        let t3 = Table::from_rows(other, &[vec![Cell::Number(0.0)]]).unwrap();
        assert!(stack(&[&t1, &t3]).is_err());
        assert_eq!(st.rows_where("B", "y").unwrap(), vec![1]);
    }

    #[test]
    fn drop_columns_updates_roles() {
        let s = Schema::new(
            vec![
                Feature::numeric("A"),
                Feature::categorical("y", ["0", "1"]),
                Feature::categorical("src", ["p", "q"]),
            ],
            Some("y".into()),
            Some("src".into()),
        )
        .unwrap();
        let t = Table::from_rows(
            s,
            &[vec![
                Cell::Number(1.0),
                Cell::Category(0),
                Cell::Category(1),
            ]],
        )
        .unwrap();
        let d = t.drop_columns(&["src"]).unwrap();
        assert_eq!(d.n_cols(), 2);
        assert_eq!(d.schema().target(), Some("y"));
        assert_eq!(d.schema().source_feature(), None);
        assert!(t.drop_columns(&["nope"]).is_err());
    }

    #[test]
    fn schema_json_shape() {
        let text = r#"{"features":[{"name":"a","kind":"numeric"},{"name":"y","kind":"categorical","levels":["p","q"]}],"target":"y","source_feature":null}"#;
        let s = Schema::from_json(text).unwrap();
        assert_eq!(s.target(), Some("y"));
        assert_eq!(Schema::from_json(&s.to_json().unwrap()).unwrap(), s);
        assert!(Schema::from_json(r#"{"features":[],"extra":1}"#).is_err());
        assert!(Schema::from_json(
            r#"{"features":[{"name":"a","kind":"numeric"},{"name":"a","kind":"numeric"}]}"#
        )
        .is_err());
    }
}

//! Mean/mode and ARF-based imputation, and dataset fusion (ComImp).
//!
//! Imputers are fitted once and then applied to any table whose columns are
//! a subset of the fitted schema. Observed cells are never modified.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arf::{bootstrap_fill, decode, fit_arf, ArfModel, ArfParams, Fallback};
use crate::error::{Error, Result};
use crate::forest::{encode_table, Encoded};
use crate::seed;
use crate::table::{
    level_counts, mean_sd, mode_index, stack, union_schema, Cell, Feature, FeatureKind, Schema,
    Table,
};

pub const IMPUTER_FORMAT: &str = "arfaug-imputer/1";

/// Which imputer to fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ImputerSpec {
    #[serde(rename = "meanmode")]
    MeanMode,
    #[serde(rename = "missarf")]
    MissArf {
        #[serde(default)]
        params: MissArfParams,
    },
}

impl ImputerSpec {
    pub fn missarf() -> Self {
        ImputerSpec::MissArf {
            params: MissArfParams::default(),
        }
    }

    pub fn fit(&self, table: &Table, seed: u64) -> Result<ImputerModel> {
        match self {
            ImputerSpec::MeanMode => fit_meanmode(table),
            ImputerSpec::MissArf { params } => fit_missarf(table, params, seed),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissArfParams {
    #[serde(default)]
    pub arf: ArfParams,
    /// Draws per missing cell. Only single imputation (1) is applied; larger
    /// values are accepted for multiple-imputation callers via
    /// [`ImputerModel::apply_repeated`].
    #[serde(default = "one")]
    pub repeats: usize,
    /// Rounds of re-imputing the training table with the current model and
    /// refitting, after the initial marginal fill.
    #[serde(default = "default_refinements")]
    pub refinements: usize,
}

fn default_refinements() -> usize {
    5
}

fn one() -> usize {
    1
}

impl Default for MissArfParams {
    fn default() -> Self {
        MissArfParams {
            arf: ArfParams::default(),
            repeats: 1,
            refinements: default_refinements(),
        }
    }
}

/// Per-column fill value of the mean/mode imputer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FillValue {
    Mean(f64),
    Mode(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ImputerKind {
    #[serde(rename = "meanmode")]
    MeanMode { fills: Vec<FillValue> },
    #[serde(rename = "missarf")]
    MissArf {
        model: Box<ArfModel>,
        repeats: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImputerModel {
    pub format: String,
    pub schema: Schema,
    pub kind: ImputerKind,
    /// Rows in the fitting table.
    pub n_fit: usize,
    /// Missing cells per fitted column in the fitting table.
    pub missing_counts: Vec<usize>,
    pub seed: u64,
}

/// A completed table plus the number of rows whose conditional draw needed a
/// relaxed leaf filter.
#[derive(Clone, Debug, PartialEq)]
pub struct Imputation {
    pub table: Table,
    pub fallbacks: usize,
}

fn missing_counts(table: &Table) -> Vec<usize> {
    (0..table.n_cols())
        .map(|j| table.column(j).iter().filter(|c| c.is_missing()).count())
        .collect()
}

fn check_observed(table: &Table) -> Result<()> {
    for (j, f) in table.schema().features().iter().enumerate() {
        if table.column(j).iter().all(Cell::is_missing) {
            return Err(Error::AllMissing(f.name.clone()));
        }
    }
    Ok(())
}

/// Mean of each numeric column and mode of each categorical column over
/// observed cells.
pub fn fit_meanmode(table: &Table) -> Result<ImputerModel> {
    check_observed(table)?;
    let fills = table
        .schema()
        .features()
        .iter()
        .enumerate()
        .map(|(j, f)| match &f.kind {
            FeatureKind::Numeric => {
                let xs: Vec<f64> = table.column(j).iter().filter_map(Cell::as_number).collect();
                FillValue::Mean(mean_sd(&xs).0.expect("observed"))
            }
            FeatureKind::Categorical { levels } => {
                let counts = level_counts(table.column(j), levels.len());
                FillValue::Mode(levels[mode_index(&counts).expect("observed")].clone())
            }
        })
        .collect();
    Ok(ImputerModel {
        format: IMPUTER_FORMAT.into(),
        schema: table.schema().clone(),
        kind: ImputerKind::MeanMode { fills },
        n_fit: table.n_rows(),
        missing_counts: missing_counts(table),
        seed: 0,
    })
}

/// Fit an ARF on the table after filling its missing cells with column-wise
/// draws from the observed values, then alternate conditional re-imputation of
/// the training gaps and refitting for `refinements` rounds. Filled tables are
/// discarded.
pub fn fit_missarf(table: &Table, params: &MissArfParams, seed: u64) -> Result<ImputerModel> {
    check_observed(table)?;
    if params.repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be positive".into()));
    }
    let filled = if table.is_complete() {
        table.clone()
    } else {
        bootstrap_fill(table, seed::derive(seed, &[0]))?
    };
    // tiny tables: duplicate rows and shrink the node size so a forest can be grown
    let filled = if filled.n_rows() < 2 {
        stack(&[&filled, &filled])?
    } else {
        filled
    };
    let mut arf = params.arf.clone();
    arf.forest.min_node_size = arf.forest.min_node_size.min(filled.n_rows() / 2).max(1);
    let mut model = fit_arf(&filled, &arf, seed::derive(seed, &[1]))?;
    if filled.n_rows() == table.n_rows() && !table.is_complete() {
        for round in 0..params.refinements as u64 {
            let current = ImputerModel::from_arf(model, 1);
            let refilled = current.apply_with_stream(table, u64::MAX - round)?.table;
            model = fit_arf(&refilled, &arf, seed::derive(seed, &[2 + round]))?;
        }
    }
    let mut imputer = ImputerModel::from_arf(model, params.repeats);
    imputer.n_fit = table.n_rows();
    imputer.missing_counts = missing_counts(table);
    imputer.seed = seed;
    Ok(imputer)
}

impl ImputerModel {
    /// Wrap an already fitted ARF as an imputer.
    pub fn from_arf(model: ArfModel, repeats: usize) -> Self {
        ImputerModel {
            format: IMPUTER_FORMAT.into(),
            schema: model.schema.clone(),
            n_fit: model.n_train(),
            missing_counts: vec![0; model.schema.len()],
            seed: model.seed,
            kind: ImputerKind::MissArf {
                model: Box::new(model),
                repeats: repeats.max(1),
            },
        }
    }

    pub fn is_meanmode(&self) -> bool {
        matches!(self.kind, ImputerKind::MeanMode { .. })
    }

    /// Schema of the output for an input with `schema`: the input's columns
    /// with their fitted kinds and the input's roles.
    fn output_schema(&self, schema: &Schema) -> Result<Schema> {
        let features = schema
            .features()
            .iter()
            .map(|f| {
                let fitted = self
                    .schema
                    .position(&f.name)
                    .map(|j| self.schema.feature(j))
                    .ok_or_else(|| Error::Schema(format!("feature '{}' was not fitted", f.name)))?;
                if fitted.kind.is_numeric() != f.kind.is_numeric() {
                    return Err(Error::KindConflict(f.name.clone()));
                }
                Ok(fitted.clone())
            })
            .collect::<Result<Vec<Feature>>>()?;
        Schema::new(
            features,
            schema.target().map(str::to_string),
            schema.source_feature().map(str::to_string),
        )
    }

    pub fn apply(&self, table: &Table) -> Result<Table> {
        Ok(self.apply_with_stream(table, 0)?.table)
    }

    /// Impute `table` using draw stream `stream`; distinct streams give
    /// independent draws for different tables.
    pub fn apply_with_stream(&self, table: &Table, stream: u64) -> Result<Imputation> {
        self.apply_draw(table, stream, 0)
    }

    /// `repeats` independent completions of the same table.
    pub fn apply_repeated(&self, table: &Table, stream: u64) -> Result<Vec<Imputation>> {
        let repeats = match &self.kind {
            ImputerKind::MeanMode { .. } => 1,
            ImputerKind::MissArf { repeats, .. } => *repeats,
        };
        (0..repeats as u64)
            .map(|r| self.apply_draw(table, stream, r))
            .collect()
    }

    fn apply_draw(&self, table: &Table, stream: u64, draw: u64) -> Result<Imputation> {
        let out_schema = self.output_schema(table.schema())?;
        let input = table.align_to_schema(&out_schema)?;
        if input.is_complete() {
            return Ok(Imputation {
                table: input,
                fallbacks: 0,
            });
        }
        match &self.kind {
            ImputerKind::MeanMode { fills } => {
                let (schema, mut columns) = input.into_columns();
                for (col, f) in columns.iter_mut().zip(schema.features()) {
                    let j = self.schema.index_of(&f.name)?;
                    let fill = match &fills[j] {
                        FillValue::Mean(m) => Cell::Number(*m),
                        FillValue::Mode(l) => {
                            Cell::Category(f.kind.level_index(l).expect("fitted level"))
                        }
                    };
                    for c in col.iter_mut().filter(|c| c.is_missing()) {
                        *c = fill;
                    }
                }
                Ok(Imputation {
                    table: Table::new(schema, columns)?,
                    fallbacks: 0,
                })
            }
            ImputerKind::MissArf { model, .. } => {
                let full = input.align_to_schema(&self.schema)?;
                let encoded = encode_table(&full, self.schema.features())?;
                let p = self.schema.len();
                let results: Vec<(Vec<f64>, Fallback)> = (0..encoded.n_rows)
                    .into_par_iter()
                    .map(|i| {
                        let mut row: Vec<f64> = (0..p).map(|j| encoded.get(i, j)).collect();
                        let mut rng = seed::rng_for(model.seed, &[stream, draw, i as u64]);
                        let fb = model.impute_encoded_row(&mut row, &mut rng);
                        (row, fb)
                    })
                    .collect();
                let fallbacks = results.iter().filter(|(_, fb)| fb.triggered()).count();
                let columns = (0..p)
                    .map(|j| results.iter().map(|(r, _)| r[j]).collect())
                    .collect();
                let completed = decode(
                    &Encoded {
                        n_rows: encoded.n_rows,
                        columns,
                        n_levels: encoded.n_levels,
                    },
                    &self.schema,
                )?;
                // back to the input's columns; observed cells are taken from the input
                let names: Vec<&str> = out_schema.names().collect();
                let imputed = completed.select_columns(&names)?;
                let columns = (0..input.n_cols())
                    .map(|j| {
                        input
                            .column(j)
                            .iter()
                            .zip(imputed.column(j))
                            .map(|(orig, new)| if orig.is_missing() { *new } else { *orig })
                            .collect()
                    })
                    .collect();
                Ok(Imputation {
                    table: Table::new(out_schema, columns)?,
                    fallbacks,
                })
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<ImputerModel> {
        let model: ImputerModel = serde_json::from_str(text)?;
        if model.format != IMPUTER_FORMAT {
            return Err(Error::Format(format!(
                "unsupported imputer format '{}'",
                model.format
            )));
        }
        Ok(model)
    }
}

pub fn apply_imputer(model: &ImputerModel, table: &Table) -> Result<Table> {
    model.apply(table)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComImpMode {
    /// Treat all tables as one dataset.
    Joint,
    /// Fit on the reference table and reuse the imputer for the others.
    Transfer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComImpPlan {
    pub mode: ComImpMode,
    pub imputer: ImputerSpec,
    /// Name of the appended dataset-origin column.
    #[serde(default = "default_source")]
    pub source_feature: String,
    /// Index of the reference table in Transfer mode.
    #[serde(default)]
    pub reference: usize,
}

fn default_source() -> String {
    "source".into()
}

impl ComImpPlan {
    pub fn new(mode: ComImpMode, imputer: ImputerSpec) -> Self {
        ComImpPlan {
            mode,
            imputer,
            source_feature: default_source(),
            reference: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComImpResult {
    /// Completed, stacked table with the source column last.
    pub table: Table,
    pub imputer: ImputerModel,
    /// Feature schema shared by the stacked tables, without the source column.
    pub combined_schema: Schema,
    pub fallbacks: usize,
}

fn source_column(tables: &[(Table, String)]) -> Result<(Feature, Vec<Cell>)> {
    let mut labels: Vec<String> = Vec::new();
    let mut cells = Vec::new();
    for (t, label) in tables {
        let k = match labels.iter().position(|l| l == label) {
            Some(k) => k,
            None => {
                labels.push(label.clone());
                labels.len() - 1
            }
        };
        cells.extend(std::iter::repeat_n(Cell::Category(k as u32), t.n_rows()));
    }
    Ok((Feature::categorical("", labels), cells))
}

/// Combine tables that share some features into one complete table.
pub fn comimp_combine(
    tables: &[(Table, String)],
    plan: &ComImpPlan,
    seed: u64,
) -> Result<ComImpResult> {
    if tables.is_empty() {
        return Err(Error::InvalidArgument("no tables to combine".into()));
    }
    if tables
        .iter()
        .any(|(t, _)| t.schema().position(&plan.source_feature).is_some())
    {
        return Err(Error::Schema(format!(
            "input already has a column named '{}'",
            plan.source_feature
        )));
    }
    let schemas: Vec<&Schema> = tables.iter().map(|(t, _)| t.schema()).collect();
    let union = union_schema(&schemas)?;
    let (mut source, source_cells) = source_column(tables)?;
    source.name = plan.source_feature.clone();
    let target = union.target().map(str::to_string);

    match plan.mode {
        ComImpMode::Joint => {
            let aligned = tables
                .iter()
                .map(|(t, _)| t.align_to_schema(&union))
                .collect::<Result<Vec<_>>>()?;
            let stacked = stack(&aligned.iter().collect::<Vec<_>>())?
                .with_column(source, source_cells)?
                .with_schema_roles(target, Some(plan.source_feature.clone()))?;
            let imputer = plan.imputer.fit(&stacked, seed)?;
            let done = imputer.apply_with_stream(&stacked, 0)?;
            Ok(ComImpResult {
                table: done.table,
                imputer,
                combined_schema: union,
                fallbacks: done.fallbacks,
            })
        }
        ComImpMode::Transfer => {
            let reference = tables.get(plan.reference).ok_or_else(|| {
                Error::InvalidArgument(format!("reference index {} out of range", plan.reference))
            })?;
            // reference features, with levels widened to everything observed
            let features = reference
                .0
                .schema()
                .names()
                .map(|n| union.feature(union.index_of(n).expect("in union")).clone())
                .collect();
            let restricted = Schema::new(features, target.clone(), None)?;
            let names: Vec<&str> = restricted.names().collect();
            let aligned = tables
                .iter()
                .map(|(t, _)| {
                    let keep: Vec<&str> = names
                        .iter()
                        .copied()
                        .filter(|n| t.schema().position(n).is_some())
                        .collect();
                    t.select_columns(&keep)?.align_to_schema(&restricted)
                })
                .collect::<Result<Vec<_>>>()?;
            let imputer = plan.imputer.fit(&aligned[plan.reference], seed)?;
            let mut fallbacks = 0;
            let mut done = Vec::with_capacity(aligned.len());
            for (i, t) in aligned.iter().enumerate() {
                let imp = imputer.apply_with_stream(t, i as u64)?;
                fallbacks += imp.fallbacks;
                done.push(imp.table);
            }
            let table = stack(&done.iter().collect::<Vec<_>>())?
                .with_column(source, source_cells)?
                .with_schema_roles(target, Some(plan.source_feature.clone()))?;
            Ok(ComImpResult {
                table,
                imputer,
                combined_schema: restricted,
                fallbacks,
            })
        }
    }
}

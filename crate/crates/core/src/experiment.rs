//! Config-driven cross-validation of augmentation methods.
//!
//! Test folds are drawn from the primary dataset only. Every imputer, ARF
//! model and learner is fitted on the training side of its fold; auxiliary
//! rows join every training side. The source column takes part in
//! imputation and synthesis and is dropped before learning.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::arf::{fit_arf, ArfModel, ArfParams};
use crate::csv_io::{parse_csv, read_csv_file, read_schema_file, to_csv_string, CsvOptions};
use crate::error::{Error, Result};
use crate::evaluation::{
    aggregate, auc_ovr_per_class, make_folds, pfi, summarize, AggregateRow, Aggregation,
    ErrorMetric, FoldResult, Metrics, ResamplingPlan, Summary,
};
use crate::impute::{
    comimp_combine, ComImpMode, ComImpPlan, ImputerModel, ImputerSpec, MissArfParams,
};
use crate::learners::{FittedLearner, LearnerSpec};
use crate::seed;
use crate::table::{format_number, stack, Cell, Feature, Schema, Table};

pub const SUMMARY_FORMAT: &str = "arfaug-summary/1";
pub const WORKERS_ENV: &str = "ARFAUG_WORKERS";

/// Which rows the augmentation draws on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    /// Primary dataset only.
    Primary,
    /// Primary and auxiliary pooled into one imputation problem.
    Joint,
    /// Imputer fitted on the primary rows and reused for the auxiliary rows.
    Transfer,
}

impl Scope {
    pub const ALL: [Scope; 3] = [Scope::Primary, Scope::Joint, Scope::Transfer];

    pub fn name(self) -> &'static str {
        match self {
            Scope::Primary => "primary",
            Scope::Joint => "joint",
            Scope::Transfer => "transfer",
        }
    }

    fn id(self) -> u64 {
        self as u64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputeMethod {
    None,
    MeanMode,
    MissArf,
}

impl ImputeMethod {
    fn id(self) -> u64 {
        self as u64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AugmentationMethod {
    Impute {
        imputer: ImputeMethod,
        scope: Scope,
    },
    /// MissARF-completed base plus `n_synth` ARF-generated rows.
    Synth {
        n_synth: usize,
        base: Scope,
    },
}

impl AugmentationMethod {
    pub fn validate(&self) -> Result<()> {
        match self {
            AugmentationMethod::Synth {
                base: Scope::Transfer,
                ..
            } => Err(Error::Config("Synth cannot use the transfer scope".into())),
            _ => Ok(()),
        }
    }

    pub fn scope(&self) -> Scope {
        match self {
            AugmentationMethod::Impute { scope, .. } => *scope,
            AugmentationMethod::Synth { base, .. } => *base,
        }
    }

    /// Row label of the summary grid.
    pub fn family(&self) -> String {
        match self {
            AugmentationMethod::Impute { imputer, .. } => match imputer {
                ImputeMethod::None => "None".into(),
                ImputeMethod::MeanMode => "MeanMode".into(),
                ImputeMethod::MissArf => "MissARF".into(),
            },
            AugmentationMethod::Synth { n_synth, .. } => format!("Synth_{n_synth}"),
        }
    }

    pub fn label(&self) -> String {
        format!("{}:{}", self.family(), self.scope().name())
    }

    pub fn uses_auxiliary(&self) -> bool {
        self.scope() != Scope::Primary
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    #[serde(default)]
    pub schema: Option<PathBuf>,
    /// Level of the source column for this dataset's rows.
    #[serde(default)]
    pub label: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResamplingConfig {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default = "yes")]
    pub stratified: bool,
}

fn default_k() -> usize {
    5
}

fn default_repetitions() -> usize {
    100
}

fn yes() -> bool {
    true
}

impl Default for ResamplingConfig {
    fn default() -> Self {
        ResamplingConfig {
            k: default_k(),
            repetitions: default_repetitions(),
            stratified: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub start: usize,
    pub end: usize,
    pub step: usize,
    #[serde(default = "default_sweep_bases")]
    pub bases: Vec<Scope>,
}

fn default_sweep_bases() -> Vec<Scope> {
    vec![Scope::Primary, Scope::Joint]
}

impl SweepConfig {
    /// start, start + step, ... up to and including `end`.
    pub fn values(&self) -> Result<Vec<usize>> {
        if self.step == 0 || self.start > self.end {
            return Err(Error::Config(
                "sweep needs start <= end and a positive step".into(),
            ));
        }
        Ok((self.start..=self.end).step_by(self.step).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PfiConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default = "default_permutations")]
    pub permutations: usize,
    #[serde(default)]
    pub metric: ErrorMetric,
}

fn default_permutations() -> usize {
    10
}

impl Default for PfiConfig {
    fn default() -> Self {
        PfiConfig {
            enabled: true,
            permutations: default_permutations(),
            metric: ErrorMetric::LogLoss,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub primary: DatasetConfig,
    #[serde(default)]
    pub auxiliary: Option<DatasetConfig>,
    /// Overrides the target named in the primary schema.
    #[serde(default)]
    pub target: Option<String>,
    pub methods: Vec<AugmentationMethod>,
    #[serde(default = "default_learners")]
    pub learners: Vec<LearnerSpec>,
    #[serde(default)]
    pub resampling: ResamplingConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub pfi: PfiConfig,
    #[serde(default)]
    pub missarf: MissArfParams,
    #[serde(default)]
    pub synth_arf: ArfParams,
    #[serde(default)]
    pub aggregation: Aggregation,
    /// Fit augmentation once on all rows, test rows included. Leaks; for
    /// comparison studies only.
    #[serde(default)]
    pub global_unsafe: bool,
    #[serde(default = "yes")]
    pub leakage_audit: bool,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    /// Repetition count per learner label, capped at the resampling count.
    #[serde(default)]
    pub repetitions_override: BTreeMap<String, usize>,
    #[serde(default = "default_source")]
    pub source_feature: String,
}

fn default_learners() -> Vec<LearnerSpec> {
    vec![LearnerSpec::lr(), LearnerSpec::rf()]
}

fn default_source() -> String {
    "source".into()
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("experiment config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// Read a config file; relative paths are resolved against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut config = Self::from_json(&fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut self.primary.path);
        if let Some(s) = &mut self.primary.schema {
            resolve(s);
        }
        if let Some(aux) = &mut self.auxiliary {
            resolve(&mut aux.path);
            if let Some(s) = &mut aux.schema {
                resolve(s);
            }
        }
        resolve(&mut self.output_dir);
        if let Some(c) = &mut self.cache_dir {
            resolve(c);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() && self.sweep.is_none() {
            return Err(Error::Config("no methods configured".into()));
        }
        if self.learners.is_empty() {
            return Err(Error::Config("no learners configured".into()));
        }
        for m in &self.methods {
            m.validate()?;
            if m.uses_auxiliary() && self.auxiliary.is_none() {
                return Err(Error::Config(format!(
                    "method {} needs an auxiliary dataset",
                    m.label()
                )));
            }
        }
        if let Some(sweep) = &self.sweep {
            sweep.values()?;
            for base in &sweep.bases {
                AugmentationMethod::Synth {
                    n_synth: 0,
                    base: *base,
                }
                .validate()?;
                if *base != Scope::Primary && self.auxiliary.is_none() {
                    return Err(Error::Config(
                        "sweep base needs an auxiliary dataset".into(),
                    ));
                }
            }
        }
        if self.resampling.k < 2 || self.resampling.repetitions == 0 {
            return Err(Error::Config(
                "resampling needs k >= 2 and at least one repetition".into(),
            ));
        }
        let labels = learner_labels(&self.learners);
        if let Some(unknown) = self
            .repetitions_override
            .keys()
            .find(|k| !labels.contains(k))
        {
            return Err(Error::Config(format!(
                "repetitions_override names unknown learner '{unknown}'"
            )));
        }
        if self.pfi.enabled && self.pfi.permutations == 0 {
            return Err(Error::Config("pfi.permutations must be at least 1".into()));
        }
        Ok(())
    }

    fn learner_repetitions(&self, label: &str) -> usize {
        self.repetitions_override
            .get(label)
            .copied()
            .unwrap_or(self.resampling.repetitions)
            .min(self.resampling.repetitions)
    }

    fn primary_label(&self) -> String {
        self.primary
            .label
            .clone()
            .unwrap_or_else(|| "primary".into())
    }

    fn auxiliary_label(&self) -> String {
        self.auxiliary
            .as_ref()
            .and_then(|a| a.label.clone())
            .unwrap_or_else(|| "auxiliary".into())
    }
}

/// "LR", "RF", with "#2", "#3", ... appended to repeated kinds.
pub fn learner_labels(learners: &[LearnerSpec]) -> Vec<String> {
    let mut seen: HashMap<&str, usize> = HashMap::new();
    learners
        .iter()
        .map(|l| {
            let n = seen.entry(l.label()).or_insert(0);
            *n += 1;
            if *n == 1 {
                l.label().to_string()
            } else {
                format!("{}#{}", l.label(), n)
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub path: PathBuf,
    pub sha256: String,
    pub rows: usize,
    pub features: usize,
    pub dropped_missing_target: usize,
}

struct Datasets {
    primary: Table,
    auxiliary: Option<Table>,
    target: String,
    classes: Vec<String>,
    info: BTreeMap<String, DatasetInfo>,
}

fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

fn load_dataset(cfg: &DatasetConfig, target: Option<&str>) -> Result<(Table, DatasetInfo)> {
    for path in std::iter::once(&cfg.path).chain(&cfg.schema) {
        if !path.is_file() {
            return Err(Error::Config(format!("{}: file not found", path.display())));
        }
    }
    let schema = cfg.schema.as_ref().map(read_schema_file).transpose()?;
    let table = read_csv_file(&cfg.path, schema.as_ref(), &CsvOptions::default())?;
    let table = match target {
        Some(t) => table.with_schema_roles(Some(t.to_string()), None)?,
        None => table,
    };
    let t = table
        .schema()
        .target_index()
        .ok_or_else(|| Error::Config(format!("{}: no target feature", cfg.path.display())))?;
    let keep: Vec<usize> = (0..table.n_rows())
        .filter(|&i| !table.cell(i, t).is_missing())
        .collect();
    let dropped = table.n_rows() - keep.len();
    let table = table.select_rows(&keep)?;
    let info = DatasetInfo {
        path: cfg.path.clone(),
        sha256: sha256_file(&cfg.path)?,
        rows: table.n_rows(),
        features: table.n_cols(),
        dropped_missing_target: dropped,
    };
    Ok((table, info))
}

fn load_datasets(config: &ExperimentConfig) -> Result<Datasets> {
    let (primary, p_info) = load_dataset(&config.primary, config.target.as_deref())?;
    let target = primary
        .schema()
        .target()
        .expect("checked on load")
        .to_string();
    let mut info = BTreeMap::from([("primary".to_string(), p_info)]);
    let needs_aux = config
        .methods
        .iter()
        .any(AugmentationMethod::uses_auxiliary)
        || config.sweep.is_some() && config.auxiliary.is_some();
    let mut auxiliary = None;
    if let (true, Some(cfg)) = (needs_aux, &config.auxiliary) {
        let (aux, a_info) = load_dataset(cfg, Some(&target))?;
        info.insert("auxiliary".into(), a_info);
        auxiliary = Some(aux);
    }
    // one class list for every table: the union of the target levels
    let mut schemas = vec![primary.schema()];
    if let Some(a) = &auxiliary {
        schemas.push(a.schema());
    }
    let union = crate::table::union_schema(&schemas)?;
    let target_feature = union.feature(union.index_of(&target)?).clone();
    let classes = target_feature
        .kind
        .levels()
        .ok_or_else(|| Error::Schema(format!("target '{target}' must be categorical")))?
        .to_vec();
    let widen = |t: &Table| -> Result<Table> {
        let features = t
            .schema()
            .features()
            .iter()
            .map(|f| {
                if f.name == target {
                    target_feature.clone()
                } else {
                    f.clone()
                }
            })
            .collect();
        t.align_to_schema(&Schema::new(features, Some(target.clone()), None)?)
    };
    let primary = widen(&primary)?;
    let auxiliary = auxiliary.as_ref().map(widen).transpose()?;
    if primary.schema().position(&config.source_feature).is_some() {
        return Err(Error::Config(format!(
            "source feature name '{}' clashes with a dataset column",
            config.source_feature
        )));
    }
    Ok(Datasets {
        primary,
        auxiliary,
        target,
        classes,
        info,
    })
}

fn labels_of(table: &Table, target: &str) -> Result<Vec<u32>> {
    table
        .column_by_name(target)?
        .iter()
        .map(|c| {
            c.as_category()
                .ok_or_else(|| Error::Structure(format!("target '{target}' has a missing cell")))
        })
        .collect()
}

/// Where a row of a fitted structure came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Origin {
    Primary(usize),
    Auxiliary(usize),
    Synthetic(usize),
}

/// Training and test tables of one method on one fold.
#[derive(Clone, Debug, PartialEq)]
struct Augmented {
    /// Complete training rows; may still carry the source column.
    train: Table,
    train_origin: Vec<Origin>,
    /// Rows each fitted augmentation structure (imputer, ARF) saw.
    fitted: Vec<(String, Vec<Origin>)>,
    /// Complete test rows with the true labels, without a source column.
    test: Table,
    /// Source labels of the test rows before the column was dropped.
    test_sources: Vec<String>,
    fallbacks: usize,
}

#[derive(Serialize, Deserialize)]
struct CachedTable {
    schema: Schema,
    csv: String,
}

impl CachedTable {
    fn new(t: &Table) -> Result<Self> {
        Ok(CachedTable {
            schema: t.schema().clone(),
            csv: to_csv_string(t)?,
        })
    }

    fn table(&self) -> Result<Table> {
        parse_csv(
            self.csv.as_bytes(),
            Some(&self.schema),
            &CsvOptions::default(),
        )?
        .with_schema_roles(
            self.schema.target().map(str::to_string),
            self.schema.source_feature().map(str::to_string),
        )
    }
}

#[derive(Serialize, Deserialize)]
struct CachedAugmented {
    train: CachedTable,
    train_origin: Vec<Origin>,
    fitted: Vec<(String, Vec<Origin>)>,
    test: CachedTable,
    test_sources: Vec<String>,
    fallbacks: usize,
}

impl CachedAugmented {
    fn new(a: &Augmented) -> Result<Self> {
        Ok(CachedAugmented {
            train: CachedTable::new(&a.train)?,
            train_origin: a.train_origin.clone(),
            fitted: a.fitted.clone(),
            test: CachedTable::new(&a.test)?,
            test_sources: a.test_sources.clone(),
            fallbacks: a.fallbacks,
        })
    }

    fn restore(&self) -> Result<Augmented> {
        Ok(Augmented {
            train: self.train.table()?,
            train_origin: self.train_origin.clone(),
            fitted: self.fitted.clone(),
            test: self.test.table()?,
            test_sources: self.test_sources.clone(),
            fallbacks: self.fallbacks,
        })
    }
}

/// Everything shared by the fold jobs.
struct Context<'a> {
    config: &'a ExperimentConfig,
    data: &'a Datasets,
    methods: &'a [AugmentationMethod],
    labels: Vec<String>,
    plan: ResamplingPlan,
    cache_prefix: String,
}

/// Set every cell of `target` to missing.
fn mask_target(table: &Table, target: &str) -> Result<Table> {
    let j = table.schema().index_of(target)?;
    table.replace_column(j, vec![Cell::Missing; table.n_rows()])
}

fn restore_target(table: &Table, truth: &Table, target: &str) -> Result<Table> {
    let j = table.schema().index_of(target)?;
    table.replace_column(j, truth.column_by_name(target)?.to_vec())
}

struct FoldJob<'a, 'c> {
    ctx: &'c Context<'a>,
    repetition: usize,
    fold: usize,
    train_rows: Vec<usize>,
    test_rows: Vec<usize>,
    bases: HashMap<(ImputeMethod, Scope), Augmented>,
    synth_models: HashMap<Scope, ArfModel>,
}

impl FoldJob<'_, '_> {
    fn seed(&self, path: &[u64]) -> u64 {
        let mut full = vec![self.repetition as u64, self.fold as u64];
        full.extend_from_slice(path);
        seed::derive(self.ctx.config.seed, &full)
    }

    /// Primary rows the augmentation is fitted on.
    fn fit_rows(&self) -> Vec<usize> {
        if self.ctx.config.global_unsafe {
            (0..self.ctx.data.primary.n_rows()).collect()
        } else {
            self.train_rows.clone()
        }
    }

    fn imputer_spec(&self, method: ImputeMethod) -> Option<ImputerSpec> {
        match method {
            ImputeMethod::None => None,
            ImputeMethod::MeanMode => Some(ImputerSpec::MeanMode),
            ImputeMethod::MissArf => Some(ImputerSpec::MissArf {
                params: self.ctx.config.missarf.clone(),
            }),
        }
    }

    fn base(&mut self, method: ImputeMethod, scope: Scope) -> Result<Augmented> {
        if let Some(a) = self.bases.get(&(method, scope)) {
            return Ok(a.clone());
        }
        let a = self.compute_base(method, scope)?;
        self.bases.insert((method, scope), a.clone());
        Ok(a)
    }

    fn compute_base(&self, method: ImputeMethod, scope: Scope) -> Result<Augmented> {
        let ctx = self.ctx;
        let data = ctx.data;
        let target = &data.target;
        let source = &ctx.config.source_feature;
        let fit_rows = self.fit_rows();
        let primary_fit = data.primary.select_rows(&fit_rows)?;
        let test_truth = data.primary.select_rows(&self.test_rows)?;
        let imputer_seed = self.seed(&[1, scope.id(), method.id()]);
        let p_label = ctx.config.primary_label();
        let mut fit_origin: Vec<Origin> = fit_rows.iter().map(|&i| Origin::Primary(i)).collect();

        // (completed fit table, fitted imputer, whether the imputer expects a source column)
        let (completed, imputer, fallbacks): (Table, Option<(ImputerModel, bool)>, usize) =
            match scope {
                Scope::Primary => match self.imputer_spec(method) {
                    None => (primary_fit.clone(), None, 0),
                    Some(spec) => {
                        let model = spec.fit(&primary_fit, imputer_seed)?;
                        let done = model.apply_with_stream(&primary_fit, 0)?;
                        (done.table, Some((model, false)), done.fallbacks)
                    }
                },
                Scope::Joint | Scope::Transfer => {
                    let aux = data
                        .auxiliary
                        .as_ref()
                        .ok_or_else(|| Error::Config("no auxiliary dataset".into()))?;
                    fit_origin.extend((0..aux.n_rows()).map(Origin::Auxiliary));
                    let tables = [
                        (primary_fit.clone(), p_label.clone()),
                        (aux.clone(), ctx.config.auxiliary_label()),
                    ];
                    let mode = if scope == Scope::Joint {
                        ComImpMode::Joint
                    } else {
                        ComImpMode::Transfer
                    };
                    match self.imputer_spec(method) {
                        Some(spec) => {
                            let mut plan = ComImpPlan::new(mode, spec);
                            plan.source_feature = source.clone();
                            let r = comimp_combine(&tables, &plan, imputer_seed)?;
                            if mode == ComImpMode::Transfer {
                                // the transfer imputer only saw the primary rows
                                fit_origin.truncate(fit_rows.len());
                            }
                            (
                                r.table,
                                Some((r.imputer, mode == ComImpMode::Joint)),
                                r.fallbacks,
                            )
                        }
                        None => {
                            let schemas = [primary_fit.schema(), aux.schema()];
                            let union = crate::table::union_schema(&schemas)?;
                            let names: Vec<&str> = if mode == ComImpMode::Joint {
                                union.names().collect()
                            } else {
                                primary_fit.schema().names().collect()
                            };
                            let restricted = union.select(&names)?;
                            let aligned_p = primary_fit.align_to_schema(&restricted)?;
                            let keep: Vec<&str> = names
                                .iter()
                                .copied()
                                .filter(|n| aux.schema().position(n).is_some())
                                .collect();
                            let aligned_a =
                                aux.select_columns(&keep)?.align_to_schema(&restricted)?;
                            let stacked = stack(&[&aligned_p, &aligned_a])?;
                            let mut cells = vec![Cell::Category(0); aligned_p.n_rows()];
                            cells.extend(vec![Cell::Category(1); aligned_a.n_rows()]);
                            let t = stacked.with_column(
                                Feature::categorical(
                                    source.as_str(),
                                    [p_label.clone(), ctx.config.auxiliary_label()],
                                ),
                                cells,
                            )?;
                            (t, None, 0)
                        }
                    }
                }
            };
        let source_role = completed.schema().position(source).map(|_| source.clone());
        let completed = completed.with_schema_roles(Some(target.clone()), source_role)?;

        let mut fitted = Vec::new();
        if imputer.is_some() {
            fitted.push(("imputer".to_string(), fit_origin.clone()));
        }
        let n_fit = fit_rows.len();
        let mut train_origin: Vec<Origin> = fit_rows.iter().map(|&i| Origin::Primary(i)).collect();
        train_origin.extend((0..completed.n_rows() - n_fit).map(Origin::Auxiliary));

        let mut test_fallbacks = 0;
        let (train, train_origin, test, test_sources) = if ctx.config.global_unsafe {
            // split the globally completed primary rows into the fold's sides
            let position: HashMap<usize, usize> =
                fit_rows.iter().enumerate().map(|(k, &i)| (i, k)).collect();
            let mut train_idx: Vec<usize> = self.train_rows.iter().map(|i| position[i]).collect();
            train_idx.extend(n_fit..completed.n_rows());
            let test_idx: Vec<usize> = self.test_rows.iter().map(|i| position[i]).collect();
            let origin = train_idx.iter().map(|&k| train_origin[k]).collect();
            let test = completed.select_rows(&test_idx)?;
            let sources = source_labels(&test, source);
            let test = drop_if_present(&test, source)?;
            (completed.select_rows(&train_idx)?, origin, test, sources)
        } else {
            let masked = mask_target(&test_truth, target)?;
            let (test, fb) = match &imputer {
                None => (test_truth.clone(), 0),
                Some((model, with_source)) => {
                    let input = if *with_source {
                        let j = completed.schema().index_of(source)?;
                        let feature = completed.schema().feature(j).clone();
                        let level = feature
                            .kind
                            .level_index(&p_label)
                            .expect("primary label level");
                        masked.with_column(feature, vec![Cell::Category(level); masked.n_rows()])?
                    } else {
                        masked
                    };
                    let input = input.align_to_schema(&model.schema)?;
                    let done = model.apply_with_stream(&input, 1 << 32)?;
                    (done.table, done.fallbacks)
                }
            };
            let test = restore_target(&test, &test_truth, target)?;
            let sources = match source_labels(&test, source) {
                s if s.is_empty() => vec![p_label.clone(); test.n_rows()],
                s => s,
            };
            let test = drop_if_present(&test, source)?;
            let test = align_test(&test, &completed, source)?;
            test_fallbacks = fb;
            (completed, train_origin, test, sources)
        };
        Ok(Augmented {
            train,
            train_origin,
            fitted,
            test,
            test_sources,
            fallbacks: fallbacks + test_fallbacks,
        })
    }

    fn synth(&mut self, n_synth: usize, base: Scope) -> Result<Augmented> {
        let mut a = self.base(ImputeMethod::MissArf, base)?;
        if n_synth == 0 {
            return Ok(a);
        }
        if !self.synth_models.contains_key(&base) {
            let model = fit_arf(
                &a.train,
                &self.ctx.config.synth_arf,
                self.seed(&[2, base.id()]),
            )?;
            self.synth_models.insert(base, model);
        }
        let model = &self.synth_models[&base];
        let generated = model.generate(n_synth, self.seed(&[4, base.id()]))?;
        let generated = generated.align_to_schema(a.train.schema())?;
        a.fitted
            .push(("synthesizer".into(), a.train_origin.clone()));
        a.train = stack(&[&a.train, &generated])?;
        a.train_origin.extend((0..n_synth).map(Origin::Synthetic));
        Ok(a)
    }

    fn augment(&mut self, method: &AugmentationMethod) -> Result<Augmented> {
        let compute = |job: &mut Self| match *method {
            AugmentationMethod::Impute { imputer, scope } => job.base(imputer, scope),
            AugmentationMethod::Synth { n_synth, base } => job.synth(n_synth, base),
        };
        let Some(dir) = &self.ctx.config.cache_dir else {
            return compute(self);
        };
        let key = {
            let mut h = Sha256::new();
            h.update(self.ctx.cache_prefix.as_bytes());
            h.update(serde_json::to_vec(&(method, self.repetition, self.fold))?);
            hex::encode(h.finalize())
        };
        let path = dir.join(format!("{key}.json"));
        if let Ok(text) = fs::read_to_string(&path) {
            if let Ok(cached) = serde_json::from_str::<CachedAugmented>(&text) {
                return cached.restore();
            }
        }
        let a = compute(self)?;
        fs::create_dir_all(dir)?;
        fs::write(&path, serde_json::to_string(&CachedAugmented::new(&a)?)?)?;
        Ok(a)
    }

    fn run(mut self) -> Result<JobOutput> {
        let ctx = self.ctx;
        let target = ctx.data.target.clone();
        let source = ctx.config.source_feature.clone();
        let mut out = JobOutput::default();
        let test_truth = labels_of(&ctx.data.primary.select_rows(&self.test_rows)?, &target)?;
        for (m_idx, method) in ctx.methods.iter().enumerate() {
            let aug = self.augment(method)?;
            out.fallbacks += aug.fallbacks;
            let train = drop_if_present(&aug.train, &source)?;
            let test = &aug.test;
            if ctx.config.leakage_audit {
                out.audit.push(self.audit(method, &aug, &train));
            }
            let features: Vec<&str> = test.schema().names().filter(|n| *n != target).collect();
            for (l_idx, learner) in ctx.config.learners.iter().enumerate() {
                let label = &ctx.labels[l_idx];
                if self.repetition >= ctx.config.learner_repetitions(label) {
                    continue;
                }
                let model = learner.fit(&train, &target, self.seed(&[3, l_idx as u64]))?;
                if ctx.config.leakage_audit && model_uses_feature(&model, &source) {
                    out.audit_violations.push(format!(
                        "{} / {label}: learner was fitted with the source column",
                        method.label()
                    ));
                }
                let (pred, unseen) = model.predict_detailed(test)?;
                let metrics = Metrics::compute(&pred, &test_truth)?;
                let mut warnings: Vec<String> = model.warnings().to_vec();
                if unseen > 0 {
                    warnings.push(format!(
                        "{unseen} unseen categorical values mapped to the reference level"
                    ));
                }
                for (c, auc) in auc_ovr_per_class(&pred, &test_truth)?.iter().enumerate() {
                    if auc.is_none() && metrics.class_support[c] > 0 {
                        warnings.push(format!(
                            "AUC skips class '{}' (no negatives)",
                            ctx.data.classes[c]
                        ));
                    }
                }
                if metrics.auc.is_none() {
                    warnings.push("AUC undefined".into());
                }
                if ctx.config.pfi.enabled {
                    let r = pfi(
                        &model,
                        test,
                        &test_truth,
                        &features,
                        ctx.config.pfi.metric,
                        ctx.config.pfi.permutations,
                        self.seed(&[5, m_idx as u64, l_idx as u64]),
                    )?;
                    for f in r.features {
                        out.pfi.push(PfiRow {
                            repetition: self.repetition,
                            fold: self.fold,
                            method: method.label(),
                            learner: label.clone(),
                            feature: f.feature,
                            importance: f.importance,
                        });
                    }
                }
                if let Some(lr) = model.as_lr() {
                    out.odds.push((method.label(), lr.odds_ratios()));
                }
                out.results.push(FoldResult {
                    repetition: self.repetition,
                    fold: self.fold,
                    method: method.label(),
                    learner: label.clone(),
                    metrics,
                    warnings,
                });
            }
        }
        Ok(out)
    }

    /// Provenance checks for one method on this fold.
    fn audit(&self, method: &AugmentationMethod, aug: &Augmented, train: &Table) -> AuditRecord {
        let test: std::collections::HashSet<usize> = self.test_rows.iter().copied().collect();
        let leaked = |origins: &[Origin]| {
            origins
                .iter()
                .filter(|o| matches!(o, Origin::Primary(i) if test.contains(i)))
                .count()
        };
        let mut violations = Vec::new();
        for (what, origins) in &aug.fitted {
            let n = leaked(origins);
            if n > 0 {
                violations.push(format!("{what} saw {n} test rows"));
            }
        }
        let n = leaked(&aug.train_origin);
        if n > 0 {
            violations.push(format!("learner training side holds {n} test rows"));
        }
        let p_label = self.ctx.config.primary_label();
        if aug.test_sources.len() != self.test_rows.len()
            || aug.test_sources.iter().any(|s| *s != p_label)
        {
            violations.push("test fold holds rows from outside the primary dataset".into());
        }
        if train
            .schema()
            .position(&self.ctx.config.source_feature)
            .is_some()
        {
            violations.push("source column reached the learner".into());
        }
        AuditRecord {
            repetition: self.repetition,
            fold: self.fold,
            method: method.label(),
            violations,
        }
    }
}

fn model_uses_feature(model: &FittedLearner, name: &str) -> bool {
    match model {
        FittedLearner::Lr(m) => m.encoding.iter().any(|e| e.name() == name),
        FittedLearner::Rf(f) => f.features.iter().any(|x| x.name == name),
    }
}

fn source_labels(table: &Table, source: &str) -> Vec<String> {
    match table.schema().position(source) {
        None => Vec::new(),
        Some(j) => (0..table.n_rows())
            .map(|i| table.level_name(i, j).unwrap_or("").to_string())
            .collect(),
    }
}

fn drop_if_present(table: &Table, name: &str) -> Result<Table> {
    if table.schema().position(name).is_some() {
        table.drop_columns(&[name])
    } else {
        Ok(table.clone())
    }
}

/// Give the test table the training table's columns (minus the source).
fn align_test(test: &Table, train: &Table, source: &str) -> Result<Table> {
    let names: Vec<&str> = train.schema().names().filter(|n| *n != source).collect();
    let schema = train.schema().select(&names)?;
    test.align_to_schema(&schema)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub repetition: usize,
    pub fold: usize,
    pub method: String,
    pub violations: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PfiRow {
    pub repetition: usize,
    pub fold: usize,
    pub method: String,
    pub learner: String,
    pub feature: String,
    pub importance: f64,
}

#[derive(Default)]
struct JobOutput {
    results: Vec<FoldResult>,
    pfi: Vec<PfiRow>,
    odds: Vec<(String, Vec<crate::learners::OddsRatio>)>,
    audit: Vec<AuditRecord>,
    audit_violations: Vec<String>,
    fallbacks: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeakageAudit {
    pub enabled: bool,
    pub checks: usize,
    pub violations: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PfiSummary {
    pub method: String,
    pub learner: String,
    pub feature: String,
    /// Over repetitions of the per-repetition mean over folds.
    pub summary: Summary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub format: String,
    pub software_version: String,
    pub config: ExperimentConfig,
    pub seeds: BTreeMap<String, u64>,
    pub datasets: BTreeMap<String, DatasetInfo>,
    pub target: String,
    pub classes: Vec<String>,
    pub methods: Vec<String>,
    pub learners: Vec<String>,
    pub fold_results: usize,
    pub warning_counts: BTreeMap<String, usize>,
    pub imputation_fallbacks: usize,
    pub undefined_metrics: BTreeMap<String, usize>,
    pub leakage_audit: LeakageAudit,
    pub aggregates: Vec<AggregateRow>,
    pub pfi: Vec<PfiSummary>,
}

impl RunSummary {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: RunSummary = serde_json::from_str(text)?;
        if s.format != SUMMARY_FORMAT {
            return Err(Error::Format(format!(
                "expected {SUMMARY_FORMAT}, found {}",
                s.format
            )));
        }
        Ok(s)
    }
}

/// Results of a run, also written to `config.output_dir`.
#[derive(Clone, Debug, PartialEq)]
pub struct RunArtifact {
    pub output_dir: PathBuf,
    pub summary: RunSummary,
    pub results: Vec<FoldResult>,
    pub pfi: Vec<PfiRow>,
    pub audit: Vec<AuditRecord>,
}

pub const RESULTS_FILE: &str = "results.csv";
pub const PER_CLASS_FILE: &str = "per_class.csv";
pub const PFI_FILE: &str = "pfi.csv";
pub const ODDS_FILE: &str = "odds_ratios.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TABLES_FILE: &str = "tables.txt";
pub const SWEEP_FILE: &str = "sweep.csv";

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v.parse().map_err(|_| {
            Error::Config(format!(
                "{WORKERS_ENV} must be a positive integer, got '{v}'"
            ))
        })?;
        builder = builder.num_threads(n.max(1));
    }
    builder
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// MeanMode and MissARF in every scope plus ARF synthesis of 82 and 338
/// rows on the primary and joint bases.
pub fn full_grid() -> Vec<AugmentationMethod> {
    let mut methods = Vec::new();
    for imputer in [ImputeMethod::MeanMode, ImputeMethod::MissArf] {
        for scope in [Scope::Primary, Scope::Joint, Scope::Transfer] {
            methods.push(AugmentationMethod::Impute { imputer, scope });
        }
    }
    for n_synth in [82, 338] {
        for base in [Scope::Primary, Scope::Joint] {
            methods.push(AugmentationMethod::Synth { n_synth, base });
        }
    }
    methods
}

/// Full-grid configuration over the files written by
/// [`crate::cohort::write_cohort`], with paths relative to that directory.
pub fn example_config() -> ExperimentConfig {
    use crate::cohort::*;
    let dataset = |csv: &str, schema: &str| DatasetConfig {
        path: csv.into(),
        schema: Some(schema.into()),
        label: None,
    };
    ExperimentConfig::from_json(
        &serde_json::json!({
            "primary": dataset(PRIMARY_CSV, PRIMARY_SCHEMA),
            "auxiliary": dataset(AUXILIARY_CSV, AUXILIARY_SCHEMA),
            "methods": full_grid(),
            "output_dir": "results",
        })
        .to_string(),
    )
    .expect("valid example configuration")
}

/// Run the configured grid and write every artifact to the output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunArtifact> {
    config.validate()?;
    run_methods(config, &config.methods)
}

struct Prepared {
    data: Datasets,
    plan: ResamplingPlan,
    plan_seed: u64,
    cache_prefix: String,
}

fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    let data = load_datasets(config)?;
    let labels = labels_of(&data.primary, &data.target)?;
    let plan_seed = seed::derive(config.seed, &[0]);
    let plan = make_folds(
        &labels,
        config.resampling.k,
        config.resampling.repetitions,
        config.resampling.stratified,
        plan_seed,
    )?;
    let cache_prefix = serde_json::to_string(&(
        env!("CARGO_PKG_VERSION"),
        &data.info.values().map(|d| &d.sha256).collect::<Vec<_>>(),
        &config.missarf,
        &config.synth_arf,
        config.seed,
        config.global_unsafe,
        &config.source_feature,
        &plan.assignments,
    ))?;
    Ok(Prepared {
        data,
        plan,
        plan_seed,
        cache_prefix,
    })
}

/// Learner-side tables of one method on one fold.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldTables {
    /// Training rows as the learner sees them, without the source column.
    pub train: Table,
    pub train_origin: Vec<Origin>,
    /// Completed test rows of the primary dataset.
    pub test: Table,
    pub test_rows: Vec<usize>,
}

/// Build the tables `run_experiment` would use for `method` on one fold.
pub fn fold_tables(
    config: &ExperimentConfig,
    method: &AugmentationMethod,
    repetition: usize,
    fold: usize,
) -> Result<FoldTables> {
    let config = &ExperimentConfig {
        methods: vec![*method],
        ..config.clone()
    };
    config.validate()?;
    let prepared = prepare(config)?;
    if repetition >= prepared.plan.repetitions || fold >= prepared.plan.k {
        return Err(Error::InvalidArgument(format!(
            "no fold {fold} in repetition {repetition}"
        )));
    }
    let methods = [*method];
    let ctx = Context {
        config,
        data: &prepared.data,
        methods: &methods,
        labels: learner_labels(&config.learners),
        plan: prepared.plan,
        cache_prefix: prepared.cache_prefix,
    };
    let mut job = FoldJob {
        ctx: &ctx,
        repetition,
        fold,
        train_rows: ctx.plan.train_rows(repetition, fold),
        test_rows: ctx.plan.test_rows(repetition, fold),
        bases: HashMap::new(),
        synth_models: HashMap::new(),
    };
    let aug = job.augment(method)?;
    Ok(FoldTables {
        train: drop_if_present(&aug.train, &config.source_feature)?,
        train_origin: aug.train_origin,
        test: aug.test,
        test_rows: job.test_rows,
    })
}

fn run_methods(config: &ExperimentConfig, methods: &[AugmentationMethod]) -> Result<RunArtifact> {
    let Prepared {
        data,
        plan,
        plan_seed,
        cache_prefix,
    } = prepare(config)?;
    let ctx = Context {
        config,
        data: &data,
        methods,
        labels: learner_labels(&config.learners),
        plan,
        cache_prefix,
    };
    let jobs: Vec<(usize, usize)> = (0..ctx.plan.repetitions)
        .flat_map(|r| (0..ctx.plan.k).map(move |f| (r, f)))
        .collect();
    let outputs: Vec<JobOutput> = thread_pool()?.install(|| {
        jobs.par_iter()
            .map(|&(r, f)| {
                FoldJob {
                    ctx: &ctx,
                    repetition: r,
                    fold: f,
                    train_rows: ctx.plan.train_rows(r, f),
                    test_rows: ctx.plan.test_rows(r, f),
                    bases: HashMap::new(),
                    synth_models: HashMap::new(),
                }
                .run()
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut results = Vec::new();
    let mut pfi_rows = Vec::new();
    let mut odds: BTreeMap<(String, String, String, String), Vec<f64>> = BTreeMap::new();
    let mut audit = Vec::new();
    let mut violations = Vec::new();
    let mut fallbacks = 0;
    for o in outputs {
        results.extend(o.results);
        pfi_rows.extend(o.pfi);
        for (method, rows) in o.odds {
            for r in rows {
                odds.entry((
                    method.clone(),
                    r.class,
                    r.feature,
                    r.level.unwrap_or_default(),
                ))
                .or_default()
                .push(r.coefficient);
            }
        }
        for a in &o.audit {
            violations.extend(
                a.violations
                    .iter()
                    .map(|v| format!("rep {} fold {} {}: {v}", a.repetition, a.fold, a.method)),
            );
        }
        audit.extend(o.audit);
        violations.extend(o.audit_violations);
        fallbacks += o.fallbacks;
    }

    let mut warning_counts: BTreeMap<String, usize> = BTreeMap::new();
    for r in &results {
        for w in &r.warnings {
            *warning_counts
                .entry(warning_kind(w).to_string())
                .or_default() += 1;
        }
    }
    let mut undefined_metrics: BTreeMap<String, usize> = BTreeMap::new();
    let aggregates = aggregate(&results, &data.classes, config.aggregation);
    for a in &aggregates {
        if a.summary.n_undefined > 0 {
            *undefined_metrics.entry(a.metric.clone()).or_default() += a.summary.n_undefined;
        }
    }
    let pfi_summary = summarize_pfi(&pfi_rows);

    let mut seeds = BTreeMap::from([
        ("master".to_string(), config.seed),
        ("plan".to_string(), plan_seed),
    ]);
    seeds.insert("folds".into(), ctx.plan.k as u64);
    let summary = RunSummary {
        format: SUMMARY_FORMAT.into(),
        software_version: env!("CARGO_PKG_VERSION").into(),
        config: ExperimentConfig {
            methods: methods.to_vec(),
            ..config.clone()
        },
        seeds,
        datasets: data.info.clone(),
        target: data.target.clone(),
        classes: data.classes.clone(),
        methods: methods.iter().map(AugmentationMethod::label).collect(),
        learners: ctx.labels.clone(),
        fold_results: results.len(),
        warning_counts,
        imputation_fallbacks: fallbacks,
        undefined_metrics,
        leakage_audit: LeakageAudit {
            enabled: config.leakage_audit,
            checks: audit.len(),
            violations,
        },
        aggregates,
        pfi: pfi_summary,
    };

    let dir = &config.output_dir;
    fs::create_dir_all(dir)?;
    fs::write(dir.join(RESULTS_FILE), results_csv(&results)?)?;
    fs::write(
        dir.join(PER_CLASS_FILE),
        per_class_csv(&results, &data.classes)?,
    )?;
    fs::write(dir.join(PFI_FILE), pfi_csv(&pfi_rows)?)?;
    fs::write(dir.join(ODDS_FILE), odds_csv(&odds)?)?;
    fs::write(dir.join(SUMMARY_FILE), summary.to_json()?)?;
    fs::write(dir.join(TABLES_FILE), emit_summary_tables(&summary))?;
    Ok(RunArtifact {
        output_dir: dir.clone(),
        summary,
        results,
        pfi: pfi_rows,
        audit,
    })
}

/// Re-run the experiment recorded in a summary file. Fails if an input
/// dataset changed since.
pub fn rerun_from_summary(
    path: impl AsRef<Path>,
    output_dir: Option<PathBuf>,
) -> Result<RunArtifact> {
    let summary = RunSummary::from_json(&fs::read_to_string(path)?)?;
    for (name, info) in &summary.datasets {
        let now = sha256_file(&info.path)?;
        if now != info.sha256 {
            return Err(Error::Config(format!(
                "dataset '{name}' ({}) changed since the run",
                info.path.display()
            )));
        }
    }
    let mut config = summary.config;
    if let Some(dir) = output_dir {
        config.output_dir = dir;
    }
    run_experiment(&config)
}

fn warning_kind(w: &str) -> &str {
    if w.starts_with("not converged") {
        "lr_not_converged"
    } else if w.contains("absent from training data") {
        "class_absent_from_training"
    } else if w.contains("unseen categorical") {
        "unseen_level"
    } else if w.starts_with("AUC skips") {
        "auc_class_skipped"
    } else if w.starts_with("AUC undefined") {
        "auc_undefined"
    } else {
        w
    }
}

fn summarize_pfi(rows: &[PfiRow]) -> Vec<PfiSummary> {
    let mut per_rep: BTreeMap<(String, String, String), BTreeMap<usize, Vec<f64>>> =
        BTreeMap::new();
    for r in rows {
        per_rep
            .entry((r.method.clone(), r.learner.clone(), r.feature.clone()))
            .or_default()
            .entry(r.repetition)
            .or_default()
            .push(r.importance);
    }
    per_rep
        .into_iter()
        .map(|((method, learner, feature), reps)| {
            let means: Vec<Option<f64>> =
                reps.values().map(|v| crate::table::mean_sd(v).0).collect();
            PfiSummary {
                method,
                learner,
                feature,
                summary: summarize(&means),
            }
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(format_number).unwrap_or_default()
}

fn results_csv(results: &[FoldResult]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "repetition",
        "fold",
        "method",
        "learner",
        "metric",
        "value",
        "warnings",
    ])?;
    for r in results {
        for (name, v) in r.metrics.scalars() {
            w.write_record([
                &r.repetition.to_string(),
                &r.fold.to_string(),
                &r.method,
                &r.learner,
                name,
                &opt(v),
                &r.warnings.join("; "),
            ])?;
        }
    }
    finish(w)
}

fn per_class_csv(results: &[FoldResult], classes: &[String]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "repetition",
        "fold",
        "method",
        "learner",
        "class",
        "support",
        "accuracy",
    ])?;
    for r in results {
        for (c, class) in classes.iter().enumerate() {
            w.write_record([
                &r.repetition.to_string(),
                &r.fold.to_string(),
                &r.method,
                &r.learner,
                class,
                &r.metrics.class_support[c].to_string(),
                &opt(r.metrics.class_accuracy[c]),
            ])?;
        }
    }
    finish(w)
}

/// Per-repetition mean over folds.
fn pfi_csv(rows: &[PfiRow]) -> Result<String> {
    let mut grouped: BTreeMap<(usize, String, String, String), Vec<f64>> = BTreeMap::new();
    for r in rows {
        grouped
            .entry((
                r.repetition,
                r.method.clone(),
                r.learner.clone(),
                r.feature.clone(),
            ))
            .or_default()
            .push(r.importance);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["repetition", "method", "learner", "feature", "importance"])?;
    for ((rep, method, learner, feature), v) in grouped {
        let mean = crate::table::mean_sd(&v).0.expect("non-empty group");
        w.write_record([
            &rep.to_string(),
            &method,
            &learner,
            &feature,
            &format_number(mean),
        ])?;
    }
    finish(w)
}

fn odds_csv(odds: &BTreeMap<(String, String, String, String), Vec<f64>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "method",
        "class",
        "feature",
        "level",
        "coefficient",
        "OR",
        "n_models",
    ])?;
    for ((method, class, feature, level), coefs) in odds {
        let mean = crate::table::mean_sd(coefs).0.expect("non-empty group");
        w.write_record([
            method,
            class,
            feature,
            level,
            &format_number(mean),
            &format_number(mean.exp()),
            &coefs.len().to_string(),
        ])?;
    }
    finish(w)
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Structure(format!("csv buffer: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Structure(format!("csv buffer: {e}")))
}

/// "0.81 (0.06)", with "-" for an undefined part.
pub fn format_cell(summary: &Summary) -> String {
    match (summary.mean, summary.sd) {
        (Some(m), Some(s)) => format!("{m:.2} ({s:.2})"),
        (Some(m), None) => format!("{m:.2} (-)"),
        _ => "-".into(),
    }
}

/// One methods-by-scope grid per learner and metric.
pub fn emit_summary_tables(summary: &RunSummary) -> String {
    let methods = &summary.config.methods;
    let mut families: Vec<String> = Vec::new();
    for m in methods {
        if !families.contains(&m.family()) {
            families.push(m.family());
        }
    }
    let scopes: Vec<Scope> = Scope::ALL
        .into_iter()
        .filter(|s| methods.iter().any(|m| m.scope() == *s))
        .collect();
    let mut metrics: Vec<String> = Vec::new();
    for a in &summary.aggregates {
        if !metrics.contains(&a.metric) {
            metrics.push(a.metric.clone());
        }
    }
    let lookup: HashMap<(&str, &str, &str), &Summary> = summary
        .aggregates
        .iter()
        .map(|a| {
            (
                (a.method.as_str(), a.learner.as_str(), a.metric.as_str()),
                &a.summary,
            )
        })
        .collect();
    let mut out = String::new();
    for learner in &summary.learners {
        for metric in &metrics {
            let _ = writeln!(out, "{learner} - {metric}");
            let mut rows = vec![std::iter::once("method".to_string())
                .chain(scopes.iter().map(|s| s.name().to_string()))
                .collect::<Vec<_>>()];
            for family in &families {
                let mut row = vec![family.clone()];
                for scope in &scopes {
                    let label = format!("{family}:{}", scope.name());
                    row.push(
                        lookup
                            .get(&(label.as_str(), learner.as_str(), metric.as_str()))
                            .map_or_else(|| "-".to_string(), |s| format_cell(s)),
                    );
                }
                rows.push(row);
            }
            let widths: Vec<usize> = (0..rows[0].len())
                .map(|j| rows.iter().map(|r| r[j].len()).max().unwrap_or(0))
                .collect();
            for row in rows {
                let cells: Vec<String> = row
                    .iter()
                    .zip(&widths)
                    .map(|(c, w)| format!("{c:<w$}"))
                    .collect();
                let _ = writeln!(out, "{}", cells.join("  ").trim_end());
            }
            out.push('\n');
        }
    }
    out
}

/// One experiment over Synth(n, base) for every sweep value and base;
/// also writes `sweep.csv` with (n_synth, base, learner, metric, mean, sd).
pub fn sweep_synth(config: &ExperimentConfig) -> Result<RunArtifact> {
    config.validate()?;
    let sweep = config
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("no sweep configured".into()))?;
    let values = sweep.values()?;
    let methods: Vec<AugmentationMethod> = sweep
        .bases
        .iter()
        .flat_map(|&base| {
            values
                .iter()
                .map(move |&n| AugmentationMethod::Synth { n_synth: n, base })
        })
        .collect();
    let artifact = run_methods(config, &methods)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["n_synth", "base", "learner", "metric", "mean", "sd"])?;
    for m in &methods {
        let AugmentationMethod::Synth { n_synth, base } = m else {
            unreachable!("sweep methods are Synth")
        };
        for a in artifact
            .summary
            .aggregates
            .iter()
            .filter(|a| a.method == m.label())
        {
            w.write_record([
                &n_synth.to_string(),
                base.name(),
                &a.learner,
                &a.metric,
                &opt(a.summary.mean),
                &opt(a.summary.sd),
            ])?;
        }
    }
    fs::write(config.output_dir.join(SWEEP_FILE), finish(w)?)?;
    Ok(artifact)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_json_and_validation() {
        let m: AugmentationMethod =
            serde_json::from_str(r#"{"kind": "synth", "n_synth": 82, "base": "joint"}"#).unwrap();
        assert_eq!(m.label(), "Synth_82:joint");
        let bad: AugmentationMethod =
            serde_json::from_str(r#"{"kind": "synth", "n_synth": 5, "base": "transfer"}"#).unwrap();
        assert!(bad.validate().is_err());
        assert!(serde_json::from_str::<AugmentationMethod>(
            r#"{"kind": "impute", "imputer": "mean_mode", "scope": "joint", "x": 1}"#
        )
        .is_err());
    }

    #[test]
    fn config_rejects_unknown_keys_and_missing_auxiliary() {
        let base = r#"{"primary": {"path": "p.csv"}, "methods": [{"kind": "impute", "imputer": "miss_arf", "scope": "joint"}], "output_dir": "out"}"#;
        assert!(matches!(
            ExperimentConfig::from_json(base),
            Err(Error::Config(_))
        ));
        let unknown = r#"{"primary": {"path": "p.csv"}, "methods": [], "output_dir": "out", "sweep": {"start": 1, "end": 2, "step": 1}, "colour": 1}"#;
        assert!(matches!(
            ExperimentConfig::from_json(unknown),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn sweep_grid() {
        let s = SweepConfig {
            start: 50,
            end: 500,
            step: 50,
            bases: default_sweep_bases(),
        };
        assert_eq!(s.values().unwrap().len(), 10);
        assert!(SweepConfig { step: 0, ..s }.values().is_err());
    }

    #[test]
    fn learner_label_suffixes() {
        let l = learner_labels(&[LearnerSpec::lr(), LearnerSpec::rf(), LearnerSpec::lr()]);
        assert_eq!(l, vec!["LR", "RF", "LR#2"]);
    }

    #[test]
    fn cell_format() {
        let s = Summary {
            mean: Some(0.8123),
            sd: Some(0.0571),
            n: 5,
            n_undefined: 0,
        };
        assert_eq!(format_cell(&s), "0.81 (0.06)");
    }
}

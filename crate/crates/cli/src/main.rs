use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use arfaug::arf::{fit_arf, ArfModel, ArfParams};
use arfaug::cohort::{discharge_cohort, write_cohort};
use arfaug::csv_io::{read_csv_file, read_schema_file, write_csv_file, CsvOptions};
use arfaug::experiment::{
    emit_summary_tables, example_config, format_cell, rerun_from_summary, run_experiment,
    sweep_synth, ExperimentConfig, RunArtifact, RunSummary, SUMMARY_FILE,
};
use arfaug::impute::{
    comimp_combine, ComImpMode, ComImpPlan, ImputerModel, ImputerSpec, MissArfParams,
};
use arfaug::Table;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "arfaug",
    version,
    about = "Tabular augmentation with adversarial random forests"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Combine tables with partly shared features into one complete CSV.
    Combine(CombineArgs),
    /// Fit or apply an imputer.
    #[command(subcommand)]
    Impute(ImputeCommand),
    /// Fit an ARF on a complete table and generate synthetic rows.
    Synth(SynthArgs),
    /// Run an augmentation grid with repeated cross-validation.
    Experiment(ExperimentArgs),
    /// Run a synthetic-size sweep.
    Sweep(RunArgs),
    /// Rank permutation feature importance from a run summary.
    Pfi(PfiArgs),
    /// Print mean (SD) tables from a run summary.
    Report(ReportArgs),
    /// Write the simulated example cohort and a full-grid configuration.
    ExampleData(ExampleArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Imputer {
    Meanmode,
    Missarf,
}

impl Imputer {
    fn spec(self) -> ImputerSpec {
        match self {
            Imputer::Meanmode => ImputerSpec::MeanMode,
            Imputer::Missarf => ImputerSpec::MissArf {
                params: MissArfParams::default(),
            },
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Joint,
    Transfer,
}

#[derive(Args)]
struct InputArgs {
    /// CSV file.
    #[arg(long)]
    input: PathBuf,
    /// Schema JSON; inferred from the CSV when absent.
    #[arg(long)]
    schema: Option<PathBuf>,
}

impl InputArgs {
    fn read(&self) -> Result<Table> {
        read_table(&self.input, self.schema.as_deref())
    }
}

fn read_table(path: &Path, schema: Option<&Path>) -> Result<Table> {
    let schema = schema.map(read_schema_file).transpose()?;
    read_csv_file(path, schema.as_ref(), &CsvOptions::default())
        .with_context(|| format!("reading {}", path.display()))
}

#[derive(Args)]
struct CombineArgs {
    /// Input CSVs; the first is the reference in transfer mode.
    #[arg(long = "table", required = true)]
    tables: Vec<PathBuf>,
    /// Source label per table; defaults to the file stem.
    #[arg(long = "label")]
    labels: Vec<String>,
    /// Schema JSON per table, in table order.
    #[arg(long = "schema")]
    schemas: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "joint")]
    mode: Mode,
    #[arg(long, value_enum, default_value = "missarf")]
    imputer: Imputer,
    #[arg(long, default_value = "source")]
    source_feature: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
    /// Also write the fitted imputer.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ImputeCommand {
    /// Fit an imputer and write it as JSON.
    Fit {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, value_enum, default_value = "missarf")]
        imputer: Imputer,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        model: PathBuf,
    },
    /// Complete a table with a fitted imputer.
    Apply {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        model: PathBuf,
        /// Draw stream; use distinct values for distinct tables.
        #[arg(long, default_value_t = 0)]
        stream: u64,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Args)]
struct SynthArgs {
    /// Training table; required unless --from-model is given.
    #[arg(long, required_unless_present = "from_model")]
    input: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Reuse a fitted ARF instead of training one.
    #[arg(long, conflicts_with = "input")]
    from_model: Option<PathBuf>,
    /// Rows to generate.
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
    /// Also write the fitted ARF.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration JSON.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl RunArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut config = ExperimentConfig::load(&self.config)
            .with_context(|| format!("loading {}", self.config.display()))?;
        if let Some(s) = self.seed {
            config.seed = s;
        }
        if let Some(d) = &self.output_dir {
            config.output_dir = d.clone();
        }
        Ok(config)
    }
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(
        long,
        required_unless_present = "from_summary",
        conflicts_with = "from_summary"
    )]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Re-run the experiment recorded in a summary JSON.
    #[arg(long)]
    from_summary: Option<PathBuf>,
}

#[derive(Args)]
struct PfiArgs {
    /// Summary JSON or the run's output directory.
    summary: PathBuf,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    learner: Option<String>,
    /// Features shown per method and learner.
    #[arg(long, default_value_t = 10)]
    top: usize,
}

#[derive(Args)]
struct ReportArgs {
    /// Summary JSON or the run's output directory.
    summary: PathBuf,
}

#[derive(Args)]
struct ExampleArgs {
    #[arg(long)]
    dir: PathBuf,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
}

fn load_summary(path: &Path) -> Result<RunSummary> {
    let file = if path.is_dir() {
        path.join(SUMMARY_FILE)
    } else {
        path.to_path_buf()
    };
    let text = fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
    Ok(RunSummary::from_json(&text)?)
}

fn report_run(a: &RunArtifact) {
    let s = &a.summary;
    println!(
        "{} fold results for {} methods x {} learners written to {}",
        s.fold_results,
        s.methods.len(),
        s.learners.len(),
        a.output_dir.display()
    );
    for (kind, n) in &s.warning_counts {
        println!("warning {kind}: {n}");
    }
    if s.leakage_audit.enabled {
        println!(
            "leakage audit: {} checks, {} violations",
            s.leakage_audit.checks,
            s.leakage_audit.violations.len()
        );
    }
}

fn combine(args: &CombineArgs) -> Result<()> {
    if !args.labels.is_empty() && args.labels.len() != args.tables.len() {
        bail!("give one --label per --table");
    }
    if !args.schemas.is_empty() && args.schemas.len() != args.tables.len() {
        bail!("give one --schema per --table");
    }
    let mut tables = Vec::new();
    for (i, path) in args.tables.iter().enumerate() {
        let table = read_table(path, args.schemas.get(i).map(PathBuf::as_path))?;
        let label = match args.labels.get(i) {
            Some(l) => l.clone(),
            None => path
                .file_stem()
                .map_or_else(|| format!("table{i}"), |s| s.to_string_lossy().into_owned()),
        };
        tables.push((table, label));
    }
    let mode = match args.mode {
        Mode::Joint => ComImpMode::Joint,
        Mode::Transfer => ComImpMode::Transfer,
    };
    let plan = ComImpPlan {
        source_feature: args.source_feature.clone(),
        ..ComImpPlan::new(mode, args.imputer.spec())
    };
    let result = comimp_combine(&tables, &plan, args.seed)?;
    write_csv_file(&result.table, &args.output)?;
    if let Some(m) = &args.model {
        fs::write(m, result.imputer.to_json()?)?;
    }
    println!(
        "{} rows x {} columns; {} rows used a relaxed leaf filter",
        result.table.n_rows(),
        result.table.n_cols(),
        result.fallbacks
    );
    Ok(())
}

fn impute(cmd: &ImputeCommand) -> Result<()> {
    match cmd {
        ImputeCommand::Fit {
            input,
            imputer,
            seed,
            model,
        } => {
            let fitted = imputer.spec().fit(&input.read()?, *seed)?;
            fs::write(model, fitted.to_json()?)?;
        }
        ImputeCommand::Apply {
            input,
            model,
            stream,
            output,
        } => {
            let text = fs::read_to_string(model)
                .with_context(|| format!("reading {}", model.display()))?;
            let imputer = ImputerModel::from_json(&text)?;
            let done = imputer.apply_with_stream(&input.read()?, *stream)?;
            write_csv_file(&done.table, output)?;
            if done.fallbacks > 0 {
                println!("{} rows used a relaxed leaf filter", done.fallbacks);
            }
        }
    }
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<()> {
    let model = match (&args.from_model, &args.input) {
        (Some(path), _) => ArfModel::from_json(&fs::read_to_string(path)?)?,
        (None, Some(input)) => {
            let table = read_table(input, args.schema.as_deref())?;
            let params = ArfParams {
                delta: args.delta,
                ..ArfParams::default()
            };
            let m = fit_arf(&table, &params, args.seed)?;
            println!(
                "ARF: {} iterations, final OOB accuracy {}",
                m.iterations(),
                m.final_accuracy().map_or("-".into(), |a| format!("{a:.3}"))
            );
            m
        }
        (None, None) => bail!("give --input or --from-model"),
    };
    if let Some(path) = &args.model {
        fs::write(path, model.to_json()?)?;
    }
    write_csv_file(&model.generate(args.n, args.seed)?, &args.output)?;
    Ok(())
}

fn experiment(args: &ExperimentArgs) -> Result<()> {
    let artifact = match (&args.from_summary, &args.config) {
        (Some(summary), _) => {
            if args.seed.is_some() {
                bail!("--seed cannot change a recorded run");
            }
            rerun_from_summary(summary, args.output_dir.clone())?
        }
        (None, Some(config)) => {
            let run = RunArgs {
                config: config.clone(),
                seed: args.seed,
                output_dir: args.output_dir.clone(),
            };
            run_experiment(&run.load()?)?
        }
        (None, None) => bail!("give --config or --from-summary"),
    };
    report_run(&artifact);
    Ok(())
}

fn pfi(args: &PfiArgs) -> Result<()> {
    let summary = load_summary(&args.summary)?;
    let mut groups: Vec<(&str, &str)> = summary
        .pfi
        .iter()
        .map(|p| (p.method.as_str(), p.learner.as_str()))
        .filter(|(m, l)| {
            args.method.as_deref().is_none_or(|x| x == *m)
                && args.learner.as_deref().is_none_or(|x| x == *l)
        })
        .collect();
    groups.dedup();
    if groups.is_empty() {
        bail!("no permutation importances match");
    }
    for (method, learner) in groups {
        let mut rows: Vec<_> = summary
            .pfi
            .iter()
            .filter(|p| p.method == method && p.learner == learner)
            .collect();
        rows.sort_by(|a, b| {
            b.summary
                .mean
                .unwrap_or(f64::NEG_INFINITY)
                .total_cmp(&a.summary.mean.unwrap_or(f64::NEG_INFINITY))
        });
        println!("{learner} - {method}");
        for p in rows.iter().take(args.top) {
            println!("  {:<28} {}", p.feature, format_cell(&p.summary));
        }
    }
    Ok(())
}

fn example_data(args: &ExampleArgs) -> Result<()> {
    write_cohort(&discharge_cohort(args.seed)?, &args.dir)?;
    let config = example_config();
    fs::write(
        args.dir.join("experiment.json"),
        serde_json::to_string_pretty(&config)?,
    )?;
    println!(
        "wrote example cohort and experiment.json to {}",
        args.dir.display()
    );
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Combine(a) => combine(&a),
        Command::Impute(c) => impute(&c),
        Command::Synth(a) => synth(&a),
        Command::Experiment(a) => experiment(&a),
        Command::Sweep(a) => {
            let artifact = sweep_synth(&a.load()?)?;
            report_run(&artifact);
            Ok(())
        }
        Command::Pfi(a) => pfi(&a),
        Command::Report(a) => {
            print!("{}", emit_summary_tables(&load_summary(&a.summary)?));
            Ok(())
        }
        Command::ExampleData(a) => example_data(&a),
    }
}

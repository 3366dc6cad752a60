//! Command-line front end behind the `adf` binary.
//!
//! Settings resolve as flags, then the `--config` TOML file, then `ADF_*`
//! environment variables, then built-in defaults. Each command writes the
//! resolved settings to `run-config.toml` in its output directory, and that
//! file is itself a valid `--config`.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::adf::{AdfParams, AdfState, BatchReport, ForestRole};
use crate::dataset::{csv_error, load_csv, record_fields, write_csv, Batch, ColumnSelector, CsvOptions, Schema};
use crate::error::{Error, Result};
use crate::evalstat::{
    accuracy, run_experiment, significance_report, z_ref, ExperimentConfig, Method, ResultsTable, StreamStep,
};
use crate::repair::SplitStrategy;
use crate::streamgen::{
    generate_house_dataset, materialize, rearrange_scenarios, simulate_manifest, SimulationConfig, StreamManifest,
};
use crate::tree::{ForestMode, InductionParams};

pub const RUN_CONFIG_FILE: &str = "run-config.toml";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SCHEMA_FILE: &str = "schema.json";
pub const DATASET_FILE: &str = "dataset.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const LEARN_LOG_FILE: &str = "learn-log.csv";
pub const ENV_PREFIX: &str = "ADF_";

#[derive(Parser, Debug)]
#[command(name = "adf", version, about = "Incremental decision forests over batch streams")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Split a dataset into a scenario-labelled stream of train/test batches.
    Simulate(SimulateArgs),
    /// Feed a stream through the three-forest learner, batch by batch.
    Learn(LearnArgs),
    /// Compare methods over a stream and test the differences.
    Evaluate(EvaluateArgs),
    /// Summarise the forests stored in a checkpoint.
    Inspect(InspectArgs),
}

#[derive(Args, Debug, Default, Clone)]
pub struct SimulateArgs {
    /// Output directory for the manifest, dataset copy and batch files.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Source CSV. Without it a synthetic House dataset is generated.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Class column of the input CSV: a name, a 0-based index or `last`.
    #[arg(long)]
    pub class_column: Option<String>,
    /// Size of the generated House dataset.
    #[arg(long)]
    pub records: Option<usize>,
    /// Records per batch before the train/test split (default: a fiftieth of the dataset).
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Use the 28-batch rearranged schedule.
    #[arg(long)]
    pub rearranged: bool,
    /// `per-batch` CSV files or one `indexed` file.
    #[arg(long)]
    pub layout: Option<Layout>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// TOML settings file.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Model settings shared by `learn` and `evaluate`.
#[derive(Args, Debug, Default, Clone)]
pub struct ModelArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Repairable threshold on the perturbed-leaf ratio.
    #[arg(long)]
    pub theta: Option<f64>,
    /// Confidence drop tolerated before a leaf counts as perturbed.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Drift counter limit before the temporary forest is promoted.
    #[arg(long)]
    pub lambda: Option<u32>,
    /// Window size in batches.
    #[arg(long)]
    pub gamma: Option<usize>,
    /// Trees per forest.
    #[arg(long)]
    pub trees: Option<usize>,
    /// `rf` or `sysfor`.
    #[arg(long)]
    pub forest_mode: Option<ForestMode>,
    /// `isat`, `sat-only` or `entropy-only`.
    #[arg(long)]
    pub split_strategy: Option<SplitStrategy>,
    #[arg(long)]
    pub min_leaf_size: Option<usize>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub attrs_per_split: Option<usize>,
    /// Switch off the window and temporary forest.
    #[arg(long)]
    pub no_temporary_forest: bool,
    /// TOML settings file.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Clone)]
pub struct LearnArgs {
    /// Directory written by `simulate`.
    #[arg(short, long)]
    pub stream: Option<PathBuf>,
    /// Output directory for the log and checkpoint.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stop once this many batches have been consumed in total.
    #[arg(long)]
    pub stop_after: Option<usize>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Args, Debug, Default, Clone)]
pub struct EvaluateArgs {
    /// Directory written by `simulate`. Without it every seed gets its own House stream.
    #[arg(short, long)]
    pub stream: Option<PathBuf>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Comma-separated methods.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<Method>>,
    /// `a..b` (inclusive) or a comma-separated list.
    #[arg(long)]
    pub seeds: Option<SeedList>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Method the others are tested against.
    #[arg(long)]
    pub reference: Option<Method>,
    /// Size of generated House datasets.
    #[arg(long)]
    pub records: Option<usize>,
    /// Use the 28-batch rearranged schedule for generated streams.
    #[arg(long)]
    pub rearranged: bool,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Args, Debug, Clone)]
pub struct InspectArgs {
    /// Checkpoint file written by `learn`.
    pub checkpoint: PathBuf,
    /// Print the summary as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    PerBatch,
    Indexed,
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-batch" => Ok(Layout::PerBatch),
            "indexed" => Ok(Layout::Indexed),
            other => Err(Error::Config(format!("unknown layout `{other}` (expected per-batch or indexed)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SeedList(pub Vec<u64>);

impl FromStr for SeedList {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("cannot read seeds from `{s}`"));
        if let Some((a, b)) = s.split_once("..") {
            let a: u64 = a.trim().parse().map_err(|_| bad())?;
            let b: u64 = b.trim_start_matches('=').trim().parse().map_err(|_| bad())?;
            if a > b {
                return Err(bad());
            }
            return Ok(SeedList((a..=b).collect()));
        }
        let seeds = s
            .split(',')
            .map(|t| t.trim().parse().map_err(|_| bad()))
            .collect::<Result<Vec<u64>>>()?;
        Ok(SeedList(seeds))
    }
}

/// Every setting a command can take, all optional until resolved.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trees: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub forest_mode: Option<ForestMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split_strategy: Option<SplitStrategy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_leaf_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_depth: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attrs_per_split: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temporary_forest: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class_column: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub records: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rearranged: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layout: Option<Layout>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stream: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resume: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop_after: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub methods: Option<Vec<Method>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<Method>,
}

fn env_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("cannot read {ENV_PREFIX}{} from `{value}`", key.to_uppercase())))
}

fn env_flag(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("cannot read {ENV_PREFIX}{} from `{value}`", key.to_uppercase()))),
    }
}

impl RunConfig {
    /// Settings from `ADF_*` variables. Unrecognised `ADF_` names are ignored.
    pub fn from_env<I: IntoIterator<Item = (String, String)>>(vars: I) -> Result<RunConfig> {
        let mut c = RunConfig::default();
        for (name, v) in vars {
            let Some(key) = name.strip_prefix(ENV_PREFIX) else { continue };
            let key = key.to_ascii_lowercase();
            let k = key.as_str();
            match k {
                "seed" => c.seed = Some(env_value(k, &v)?),
                "theta" => c.theta = Some(env_value(k, &v)?),
                "epsilon" => c.epsilon = Some(env_value(k, &v)?),
                "lambda" => c.lambda = Some(env_value(k, &v)?),
                "gamma" => c.gamma = Some(env_value(k, &v)?),
                "trees" => c.trees = Some(env_value(k, &v)?),
                "forest_mode" => c.forest_mode = Some(env_value(k, &v)?),
                "split_strategy" => c.split_strategy = Some(env_value(k, &v)?),
                "min_leaf_size" => c.min_leaf_size = Some(env_value(k, &v)?),
                "max_depth" => c.max_depth = Some(env_value(k, &v)?),
                "attrs_per_split" => c.attrs_per_split = Some(env_value(k, &v)?),
                "temporary_forest" => c.temporary_forest = Some(env_flag(k, &v)?),
                "input" => c.input = Some(PathBuf::from(v)),
                "class_column" => c.class_column = Some(v),
                "records" => c.records = Some(env_value(k, &v)?),
                "batch_size" => c.batch_size = Some(env_value(k, &v)?),
                "rearranged" => c.rearranged = Some(env_flag(k, &v)?),
                "layout" => c.layout = Some(env_value(k, &v)?),
                "stream" => c.stream = Some(PathBuf::from(v)),
                "output" => c.output = Some(PathBuf::from(v)),
                "stop_after" => c.stop_after = Some(env_value(k, &v)?),
                "methods" => c.methods = Some(v.split(',').map(|m| env_value(k, m)).collect::<Result<_>>()?),
                "seeds" => c.seeds = Some(env_value::<SeedList>(k, &v)?.0),
                "alpha" => c.alpha = Some(env_value(k, &v)?),
                "reference" => c.reference = Some(env_value(k, &v)?),
                _ => {}
            }
        }
        Ok(c)
    }

    pub fn from_toml(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| Error::Config(format!("bad config file: {e}")))
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialise settings: {e}")))
    }

    /// Field-wise `self` where set, else `lower`.
    pub fn or(self, lower: RunConfig) -> RunConfig {
        RunConfig {
            command: self.command.or(lower.command),
            seed: self.seed.or(lower.seed),
            theta: self.theta.or(lower.theta),
            epsilon: self.epsilon.or(lower.epsilon),
            lambda: self.lambda.or(lower.lambda),
            gamma: self.gamma.or(lower.gamma),
            trees: self.trees.or(lower.trees),
            forest_mode: self.forest_mode.or(lower.forest_mode),
            split_strategy: self.split_strategy.or(lower.split_strategy),
            min_leaf_size: self.min_leaf_size.or(lower.min_leaf_size),
            max_depth: self.max_depth.or(lower.max_depth),
            attrs_per_split: self.attrs_per_split.or(lower.attrs_per_split),
            temporary_forest: self.temporary_forest.or(lower.temporary_forest),
            input: self.input.or(lower.input),
            class_column: self.class_column.or(lower.class_column),
            records: self.records.or(lower.records),
            batch_size: self.batch_size.or(lower.batch_size),
            rearranged: self.rearranged.or(lower.rearranged),
            layout: self.layout.or(lower.layout),
            stream: self.stream.or(lower.stream),
            output: self.output.or(lower.output),
            resume: self.resume.or(lower.resume),
            stop_after: self.stop_after.or(lower.stop_after),
            methods: self.methods.or(lower.methods),
            seeds: self.seeds.or(lower.seeds),
            alpha: self.alpha.or(lower.alpha),
            reference: self.reference.or(lower.reference),
        }
    }

    /// Model parameters with defaults for anything unset.
    pub fn adf_params(&self) -> Result<AdfParams> {
        let d = AdfParams::default();
        let mut induction = d.induction;
        induction.min_leaf_size = self.min_leaf_size.unwrap_or(induction.min_leaf_size);
        induction.max_depth = self.max_depth.unwrap_or(induction.max_depth);
        induction.attrs_per_split = self.attrs_per_split.or(induction.attrs_per_split);
        let params = AdfParams {
            lambda: self.lambda.unwrap_or(d.lambda),
            theta: self.theta.unwrap_or(d.theta),
            epsilon: self.epsilon.unwrap_or(d.epsilon),
            gamma: self.gamma.unwrap_or(d.gamma),
            ensemble_size: self.trees.unwrap_or(d.ensemble_size),
            mode: self.forest_mode.unwrap_or(d.mode),
            split_strategy: self.split_strategy.unwrap_or(d.split_strategy),
            induction,
            temporary_forest: self.temporary_forest.unwrap_or(d.temporary_forest),
            seed: self.seed.unwrap_or(d.seed),
        };
        params.validate()?;
        Ok(params)
    }

    /// Writes the model parameters back as explicit settings.
    fn with_model(mut self, p: &AdfParams) -> RunConfig {
        self.seed = Some(p.seed);
        self.theta = Some(p.theta);
        self.epsilon = Some(p.epsilon);
        self.lambda = Some(p.lambda);
        self.gamma = Some(p.gamma);
        self.trees = Some(p.ensemble_size);
        self.forest_mode = Some(p.mode);
        self.split_strategy = Some(p.split_strategy);
        self.min_leaf_size = Some(p.induction.min_leaf_size);
        self.max_depth = Some(p.induction.max_depth);
        self.attrs_per_split = p.induction.attrs_per_split;
        self.temporary_forest = Some(p.temporary_forest);
        self
    }

    fn required<'a, T>(value: &'a Option<T>, name: &str) -> Result<&'a T> {
        value
            .as_ref()
            .ok_or_else(|| Error::Config(format!("`{name}` must be given as a flag, in the config file or as {ENV_PREFIX}{}", name.to_uppercase())))
    }
}

impl ModelArgs {
    fn to_config(&self) -> RunConfig {
        RunConfig {
            seed: self.seed,
            theta: self.theta,
            epsilon: self.epsilon,
            lambda: self.lambda,
            gamma: self.gamma,
            trees: self.trees,
            forest_mode: self.forest_mode,
            split_strategy: self.split_strategy,
            min_leaf_size: self.min_leaf_size,
            max_depth: self.max_depth,
            attrs_per_split: self.attrs_per_split,
            temporary_forest: self.no_temporary_forest.then_some(false),
            ..RunConfig::default()
        }
    }
}

/// Merges flags over the config file over the environment.
/// Dataset size behind the run, for the size-dependent leaf default. A stream
/// that cannot be read here is reported properly when it is loaded.
fn stream_rows(c: &RunConfig) -> Option<usize> {
    match &c.stream {
        Some(dir) => {
            let text = fs::read_to_string(dir.join(MANIFEST_FILE)).ok()?;
            let v: serde_json::Value = serde_json::from_str(&text).ok()?;
            v.get("dataset_rows")?.as_u64().map(|n| n as usize)
        }
        None => Some(c.records.unwrap_or(20_000)),
    }
}

fn default_leaf_size(c: &mut RunConfig) {
    if c.min_leaf_size.is_none() {
        c.min_leaf_size = stream_rows(c).map(|n| InductionParams::for_stream_size(n).min_leaf_size);
    }
}

fn layered(flags: RunConfig, config: Option<&Path>, env: RunConfig) -> Result<RunConfig> {
    let file = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    Ok(flags.or(file).or(env))
}

pub fn resolve_simulate(args: &SimulateArgs, env: RunConfig) -> Result<RunConfig> {
    let flags = RunConfig {
        command: Some("simulate".into()),
        seed: args.seed,
        input: args.input.clone(),
        class_column: args.class_column.clone(),
        records: args.records,
        batch_size: args.batch_size,
        rearranged: args.rearranged.then_some(true),
        layout: args.layout,
        output: args.output.clone(),
        ..RunConfig::default()
    };
    let mut c = layered(flags, args.config.as_deref(), env)?;
    c.command = Some("simulate".into());
    c.seed.get_or_insert(0);
    c.rearranged.get_or_insert(false);
    c.layout.get_or_insert(Layout::PerBatch);
    if c.input.is_some() {
        c.class_column.get_or_insert_with(|| "last".into());
        c.records = None;
    } else {
        c.records.get_or_insert(20_000);
    }
    Ok(c)
}

pub fn resolve_learn(args: &LearnArgs, env: RunConfig) -> Result<RunConfig> {
    let flags = RunConfig {
        command: Some("learn".into()),
        stream: args.stream.clone(),
        output: args.output.clone(),
        resume: args.resume.clone(),
        stop_after: args.stop_after,
        ..args.model.to_config()
    };
    let mut c = layered(flags, args.model.config.as_deref(), env)?;
    c.command = Some("learn".into());
    if c.stream.is_some() {
        default_leaf_size(&mut c);
    }
    let params = c.adf_params()?;
    Ok(c.with_model(&params))
}

pub fn resolve_evaluate(args: &EvaluateArgs, env: RunConfig) -> Result<RunConfig> {
    let flags = RunConfig {
        command: Some("evaluate".into()),
        stream: args.stream.clone(),
        output: args.output.clone(),
        methods: args.methods.clone(),
        seeds: args.seeds.clone().map(|s| s.0),
        alpha: args.alpha,
        reference: args.reference,
        records: args.records,
        rearranged: args.rearranged.then_some(true),
        ..args.model.to_config()
    };
    let mut c = layered(flags, args.model.config.as_deref(), env)?;
    c.command = Some("evaluate".into());
    default_leaf_size(&mut c);
    let params = c.adf_params()?;
    let mut c = c.with_model(&params);
    c.methods
        .get_or_insert_with(|| vec![Method::AdfIsat, Method::AdfSatOnly, Method::AdfEntropyOnly, Method::FullRetrain]);
    c.seeds.get_or_insert_with(|| vec![params.seed]);
    c.alpha.get_or_insert(0.025);
    c.reference.get_or_insert(Method::AdfIsat);
    if c.stream.is_some() {
        c.records = None;
        c.rearranged = None;
    } else {
        c.records.get_or_insert(20_000);
        c.rearranged.get_or_insert(false);
    }
    Ok(c)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Write-then-rename so an interrupted run never leaves a torn file behind.
fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    write_text(&tmp, text)?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn prepare_output(config: &RunConfig) -> Result<PathBuf> {
    let out = RunConfig::required(&config.output, "output")?.clone();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    write_text(&out.join(RUN_CONFIG_FILE), &config.to_toml()?)?;
    Ok(out)
}

fn parse_class_column(text: &str) -> ColumnSelector {
    match text {
        "last" => ColumnSelector::Last,
        t => t.parse().map_or_else(|_| ColumnSelector::Name(t.to_owned()), ColumnSelector::Index),
    }
}

/// A simulated stream as stored on disk.
pub struct StoredStream {
    pub manifest: StreamManifest,
    pub dataset: Batch,
    pub batches: Vec<(Batch, Batch)>,
}

impl StoredStream {
    pub fn steps(&self) -> Vec<StreamStep<'_>> {
        self.batches
            .iter()
            .zip(&self.manifest.batches)
            .map(|((train, test), spec)| StreamStep {
                label: format!("b{:02}", spec.batch_id),
                scenario: spec.scenario.to_string(),
                train,
                test,
            })
            .collect()
    }
}

/// Reads the dataset copy, schema and manifest from a `simulate` directory
/// and rebuilds the batches from the manifest's row indices.
pub fn load_stream(dir: &Path) -> Result<StoredStream> {
    let schema: Schema = serde_json::from_str(&read_text(&dir.join(SCHEMA_FILE))?)?;
    let manifest: StreamManifest = serde_json::from_str(&read_text(&dir.join(MANIFEST_FILE))?)?;
    let options = CsvOptions {
        schema: Some(schema),
        ..CsvOptions::default()
    };
    let dataset = load_csv(dir.join(DATASET_FILE), &options)?;
    let batches = materialize(&dataset, &manifest)?;
    Ok(StoredStream {
        manifest,
        dataset,
        batches,
    })
}

/// Writes a dataset and its manifest in the layout `load_stream` reads.
pub fn write_stream(dir: &Path, dataset: &Batch, manifest: &StreamManifest, layout: Layout) -> Result<Vec<(Batch, Batch)>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let options = CsvOptions::default();
    write_csv(dataset, dir.join(DATASET_FILE), &options)?;
    write_text(&dir.join(SCHEMA_FILE), &serde_json::to_string_pretty(&*dataset.schema)?)?;
    write_text(&dir.join(MANIFEST_FILE), &serde_json::to_string_pretty(manifest)?)?;
    let batches = materialize(dataset, manifest)?;
    match layout {
        Layout::PerBatch => {
            let sub = dir.join("batches");
            fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
            for (train, test) in &batches {
                write_csv(train, sub.join(format!("batch-{:02}-train.csv", train.batch_id)), &options)?;
                write_csv(test, sub.join(format!("batch-{:02}-test.csv", test.batch_id)), &options)?;
            }
        }
        Layout::Indexed => {
            let path = dir.join("stream.csv");
            let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
            let schema = &dataset.schema;
            let mut header = vec!["batch".to_owned(), "split".to_owned()];
            header.extend(schema.attributes().iter().map(|a| a.name.clone()));
            w.write_record(&header).map_err(|e| csv_error(&path, e))?;
            for (train, test) in &batches {
                for (split, part) in [("train", train), ("test", test)] {
                    for r in &part.records {
                        let mut row = vec![part.batch_id.to_string(), split.to_owned()];
                        row.extend(record_fields(schema, r, &options.missing_token));
                        w.write_record(&row).map_err(|e| csv_error(&path, e))?;
                    }
                }
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(batches)
}

fn print_schedule(manifest: &StreamManifest) {
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for (i, b) in manifest.batches.iter().enumerate() {
        match runs.last_mut() {
            Some(run) if manifest.batches[run.0].block == b.block => run.1 = i,
            _ => runs.push((i, i)),
        }
    }
    for (first, last) in runs {
        let a = &manifest.batches[first];
        let b = &manifest.batches[last];
        let span = if first == last {
            format!("{}", a.batch_id)
        } else {
            format!("{}-{}", a.batch_id, b.batch_id)
        };
        println!(
            "batches {span:<7} {:<7} {:<5} train {:>4}  test {:>4}",
            a.block.label(),
            a.scenario.to_string(),
            a.train_rows.len(),
            a.test_rows.len()
        );
    }
    let topped = manifest.batches.iter().filter(|b| b.topped_up).count();
    if topped > 0 {
        println!("{topped} batches needed sampling with replacement (see the manifest)");
    }
}

pub fn cmd_simulate(args: &SimulateArgs, env: RunConfig) -> Result<()> {
    let mut config = resolve_simulate(args, env)?;
    let seed = config.seed.unwrap_or(0);
    let dataset = match &config.input {
        Some(path) => {
            let options = CsvOptions {
                class_column: parse_class_column(config.class_column.as_deref().unwrap_or("last")),
                ..CsvOptions::default()
            };
            load_csv(path, &options)?
        }
        None => generate_house_dataset(config.records.unwrap_or(20_000), seed)?,
    };
    let sim = SimulationConfig {
        seed,
        batch_size: config.batch_size,
    };
    let mut manifest = simulate_manifest(&dataset, &sim)?;
    if config.rearranged == Some(true) {
        manifest = rearrange_scenarios(&manifest, &dataset, seed)?;
    }
    config.batch_size = Some(manifest.batch_size);
    let out = prepare_output(&config)?;
    let batches = write_stream(&out, &dataset, &manifest, config.layout.unwrap_or(Layout::PerBatch))?;
    print_schedule(&manifest);
    println!("{} batch pairs written to {}", batches.len(), out.display());
    Ok(())
}

fn fmt_ratio(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_owned(), |x| format!("{x:.4}"))
}

/// Kebab-case name a unit enum serialises to.
fn tag<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

fn test_accuracy(state: &AdfState, test: &Batch) -> Result<f64> {
    let labeled: Vec<_> = test.records.iter().filter(|r| r.label.is_some()).collect();
    let truths: Vec<_> = labeled.iter().filter_map(|r| r.label).collect();
    let preds = labeled
        .iter()
        .map(|r| state.predict(&r.unlabeled()))
        .collect::<Result<Vec<_>>>()?;
    accuracy(&preds, &truths)
}

const LOG_HEADER: &str = "batch,block,scenario,theta_p,theta_a,theta_t,af,tf,cdf,window,recommendation,accuracy";

fn log_row(spec: &crate::streamgen::BatchSpec, r: &BatchReport, acc: f64) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{acc:.6}",
        spec.batch_id,
        spec.block.label(),
        spec.scenario,
        fmt_ratio(r.theta_p),
        fmt_ratio(r.theta_a),
        fmt_ratio(r.theta_t),
        tag(&r.af),
        tag(&r.tf),
        r.cdf,
        r.window_len,
        r.recommendation
    )
}

pub fn cmd_learn(args: &LearnArgs, env: RunConfig) -> Result<()> {
    let config = resolve_learn(args, env)?;
    let params = config.adf_params()?;
    let stream = load_stream(RunConfig::required(&config.stream, "stream")?)?;
    let out = prepare_output(&config)?;
    let mut state = match &config.resume {
        Some(path) => {
            let state = AdfState::from_checkpoint(&read_text(path)?)?;
            if state.params != params {
                return Err(Error::Config(format!(
                    "{} was trained with different model settings",
                    path.display()
                )));
            }
            state
        }
        None => AdfState::new(params.clone())?,
    };
    let total = stream.batches.len();
    let start = state.batches_seen as usize;
    if start > total {
        return Err(Error::Config(format!(
            "checkpoint has seen {start} batches but the stream only has {total}"
        )));
    }
    let end = config.stop_after.map_or(total, |n| n.min(total)).max(start);
    println!(
        "theta={} epsilon={} lambda={} gamma={} trees={} split-strategy={} forest-mode={} temporary-forest={} seed={}",
        params.theta,
        params.epsilon,
        params.lambda,
        params.gamma,
        params.ensemble_size,
        params.split_strategy,
        params.mode,
        params.temporary_forest,
        params.seed
    );
    let log_path = out.join(LEARN_LOG_FILE);
    let fresh_log = start == 0 || !log_path.exists();
    let mut log = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(!fresh_log)
        .truncate(fresh_log)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    if fresh_log {
        writeln!(log, "{LOG_HEADER}").map_err(|e| Error::io(&log_path, e))?;
    }
    let ckpt = out.join(CHECKPOINT_FILE);
    println!("{:>5} {:<7} {:<5} {:>7} {:>7} {:>7} {:<9} {:<10} {:>3} {:>3} {:>8}", "batch", "block", "scen", "theta_p", "theta_a", "theta_t", "af", "tf", "cdf", "rec", "accuracy");
    for i in start..end {
        let (train, test) = &stream.batches[i];
        let spec = &stream.manifest.batches[i];
        let report = state.learn(train)?;
        let acc = test_accuracy(&state, test)?;
        println!(
            "{:>5} {:<7} {:<5} {:>7} {:>7} {:>7} {:<9} {:<10} {:>3} {:>3} {:>8.4}",
            spec.batch_id,
            spec.block.label(),
            spec.scenario.to_string(),
            fmt_ratio(report.theta_p),
            fmt_ratio(report.theta_a),
            fmt_ratio(report.theta_t),
            tag(&report.af),
            tag(&report.tf),
            report.cdf,
            report.recommendation.to_string(),
            acc
        );
        writeln!(log, "{}", log_row(spec, &report, acc)).map_err(|e| Error::io(&log_path, e))?;
        write_atomic(&ckpt, &state.to_checkpoint()?)?;
    }
    write_atomic(&ckpt, &state.to_checkpoint()?)?;
    println!("consumed {} of {total} batches; checkpoint at {}", state.batches_seen, ckpt.display());
    Ok(())
}

fn generated_stream(records: usize, seed: u64, rearranged: bool) -> Result<StoredStream> {
    let dataset = generate_house_dataset(records, seed)?;
    let mut manifest = simulate_manifest(&dataset, &SimulationConfig { seed, batch_size: None })?;
    if rearranged {
        manifest = rearrange_scenarios(&manifest, &dataset, seed)?;
    }
    let batches = materialize(&dataset, &manifest)?;
    Ok(StoredStream {
        manifest,
        dataset,
        batches,
    })
}

pub fn cmd_evaluate(args: &EvaluateArgs, env: RunConfig) -> Result<()> {
    let config = resolve_evaluate(args, env)?;
    let base = config.adf_params()?;
    let methods = config.methods.clone().unwrap_or_default();
    if methods.is_empty() {
        return Err(Error::Config("no methods to evaluate".into()));
    }
    let reference = config.reference.unwrap_or(Method::AdfIsat);
    if !methods.contains(&reference) {
        return Err(Error::Config(format!("reference method `{reference}` is not among the evaluated methods")));
    }
    let alpha = config.alpha.unwrap_or(0.025);
    z_ref(alpha)?;
    let seeds = config.seeds.clone().unwrap_or_else(|| vec![base.seed]);
    if seeds.is_empty() {
        return Err(Error::Config("no seeds to evaluate".into()));
    }
    let out = prepare_output(&config)?;
    let fixed = config.stream.as_deref().map(load_stream).transpose()?;
    let mut tables = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        let generated;
        let stream = match &fixed {
            Some(s) => s,
            None => {
                generated = generated_stream(config.records.unwrap_or(20_000), seed, config.rearranged == Some(true))?;
                &generated
            }
        };
        let params = AdfParams { seed, ..base.clone() };
        let table = run_experiment(&stream.steps(), &ExperimentConfig { methods: methods.clone(), params })?;
        let dir = out.join(format!("seed-{seed}"));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_text(&dir.join("matrix.csv"), &table.to_matrix_csv()?)?;
        write_text(&dir.join("long.csv"), &table.to_long_csv()?)?;
        tables.push(table);
    }
    let pooled = ResultsTable::pool(&tables)?;
    write_text(&out.join("matrix.csv"), &pooled.to_matrix_csv()?)?;
    write_text(&out.join("long.csv"), &pooled.to_long_csv()?)?;
    print_summary(&tables, &pooled);
    let report = significance_report(&pooled, reference.name(), alpha)?;
    write_text(&out.join("report.txt"), &report.to_string())?;
    write_text(&out.join("report.json"), &serde_json::to_string_pretty(&report)?)?;
    println!();
    print!("{report}");
    Ok(())
}

fn print_summary(tables: &[ResultsTable], pooled: &ResultsTable) {
    print!("{:<18}", "method");
    for t in tables {
        print!(" {:>8}", format!("seed {}", t.seed));
    }
    println!(" {:>8} {:>10}", "mean", "train ms");
    for m in &pooled.methods {
        print!("{m:<18}");
        for t in tables {
            print!(" {:>8}", t.mean_accuracy(m).map_or("-".into(), |a| format!("{a:.4}")));
        }
        println!(
            " {:>8} {:>10}",
            pooled.mean_accuracy(m).map_or("-".into(), |a| format!("{a:.4}")),
            pooled.mean_train_ms(m).map_or("-".into(), |a| format!("{a:.1}"))
        );
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeSummary {
    pub leaves: usize,
    pub nodes: usize,
    pub depth: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestSummary {
    pub role: ForestRole,
    pub leaves: usize,
    pub trees: Vec<TreeSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSummary {
    pub batches_seen: u64,
    pub cdf: u32,
    pub window: usize,
    pub recommendation: ForestRole,
    pub classes: Vec<String>,
    pub params: AdfParams,
    pub forests: Vec<ForestSummary>,
}

pub fn summarize(state: &AdfState) -> CheckpointSummary {
    let forests = [ForestRole::Pf, ForestRole::Af, ForestRole::Tf]
        .into_iter()
        .filter_map(|role| {
            state.forest(role).map(|f| ForestSummary {
                role,
                leaves: f.leaf_count(),
                trees: f
                    .trees
                    .iter()
                    .map(|t| TreeSummary {
                        leaves: t.leaf_count(),
                        nodes: t.node_count(),
                        depth: t.depth(),
                    })
                    .collect(),
            })
        })
        .collect();
    CheckpointSummary {
        batches_seen: state.batches_seen,
        cdf: state.cdf,
        window: state.window.len(),
        recommendation: state.last_recommendation,
        classes: state
            .schema
            .as_ref()
            .map(|s: &Arc<Schema>| s.class_values().to_vec())
            .unwrap_or_default(),
        params: state.params.clone(),
        forests,
    }
}

pub fn cmd_inspect(args: &InspectArgs) -> Result<()> {
    let state = AdfState::from_checkpoint(&read_text(&args.checkpoint)?)?;
    let s = summarize(&state);
    if args.json {
        println!("{}", serde_json::to_string_pretty(&s)?);
        return Ok(());
    }
    let p = &s.params;
    println!("batches seen     {}", s.batches_seen);
    println!("drift counter    {}", s.cdf);
    println!("window           {} of {}", s.window, p.gamma);
    println!("recommendation   {}", s.recommendation);
    println!("classes          {}", s.classes.join(" "));
    println!(
        "settings         theta={} epsilon={} lambda={} gamma={} split-strategy={} forest-mode={}",
        p.theta, p.epsilon, p.lambda, p.gamma, p.split_strategy, p.mode
    );
    for f in &s.forests {
        let mean_depth = f.trees.iter().map(|t| t.depth as f64).sum::<f64>() / f.trees.len().max(1) as f64;
        let max_depth = f.trees.iter().map(|t| t.depth).max().unwrap_or(0);
        println!(
            "{}  trees {:>3}  leaves {:>5}  depth mean {mean_depth:.1} max {max_depth}",
            f.role,
            f.trees.len(),
            f.leaves
        );
        for (k, t) in f.trees.iter().enumerate() {
            println!("    tree {k:>2}  leaves {:>4}  nodes {:>4}  depth {:>2}", t.leaves, t.nodes, t.depth);
        }
    }
    Ok(())
}

pub fn run(cli: &Cli, env: RunConfig) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a, env),
        Command::Learn(a) => cmd_learn(a, env),
        Command::Evaluate(a) => cmd_evaluate(a, env),
        Command::Inspect(a) => cmd_inspect(a),
    }
}

/// Parses `args`, runs the command and returns the process exit code:
/// 0 success, 1 usage or configuration error, 2 data error, 3 internal error.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let outcome = std::panic::catch_unwind(|| RunConfig::from_env(std::env::vars()).and_then(|env| run(&cli, env)));
    match outcome {
        Ok(Ok(())) => 0,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
        Err(_) => 3,
    }
}

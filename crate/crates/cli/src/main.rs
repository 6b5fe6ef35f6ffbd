use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use nevncd_core::config::{parse_ablation, preset, RunConfig, ABLATION_ROWS, RUN_CONFIG_FILE};
use nevncd_core::eval::{evaluate, export_embeddings, EvalReport};
use nevncd_core::model::{Architecture, Checkpoint};
use nevncd_core::synthdata::{self, Dataset};
use nevncd_core::trainer::{self, TrainState, FINAL_CHECKPOINT};
use nevncd_core::{Error, Example, Hyperparams, ModelParams};

const LOG_FILE: &str = "train_log.jsonl";

macro_rules! out {
    ($($arg:tt)*) => {
        writeln!(std::io::stdout().lock(), $($arg)*)?
    };
}
const REPORT_FILE: &str = "eval_report.json";

#[derive(Parser)]
#[command(
    name = "nevncd",
    version,
    about = "Novel category discovery on synthetic multi-view data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Source {
    /// Run config file (TOML).
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Named preset instead of a config file.
    #[arg(long)]
    preset: Option<String>,
    /// Override the run seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl Source {
    fn load(&self) -> Result<RunConfig> {
        let mut config = match (&self.config, &self.preset) {
            (Some(path), _) => RunConfig::load(path)?,
            (None, Some(name)) => preset(name)?,
            (None, None) => bail!("either --config or --preset is required"),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
            config.train.seed = seed;
            config.hyper.seed = seed;
        }
        Ok(config.materialize()?)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Test,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset from a run config.
    GenData {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model and evaluate it on the test split.
    Train {
        #[command(flatten)]
        source: Source,
        /// Dataset directory; generated from the config when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Loss subset: `sup`, `full`, or a comma list of nl, var, H.
        #[arg(long)]
        ablate: Option<String>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Evaluate a checkpoint on a dataset's test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Run config of the training run; defaults to the one beside the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory to write the report into.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write test-split embeddings to this CSV.
        #[arg(long)]
        export_embeddings: Option<PathBuf>,
    },
    /// Train every ablation row and summarize.
    Ablate {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seeds to sweep; defaults to the config seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Write embeddings of a dataset split to CSV.
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
    },
}

#[derive(Serialize)]
struct ReportFile<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    run_config_hash: Option<&'a str>,
    checkpoint_config_hash: &'a str,
    #[serde(flatten)]
    report: &'a EvalReport,
}

fn out_dir(out: &Option<PathBuf>, config: &RunConfig) -> Result<PathBuf> {
    out.clone()
        .or_else(|| config.output_dir.clone())
        .context("an output directory is required (--out or output_dir in the config)")
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn generate(config: &RunConfig) -> Result<Dataset> {
    let mut data = synthdata::generate(&config.data, config.seed)?;
    data.provenance.run_config_hash = Some(config.content_hash());
    Ok(data)
}

fn load_data(path: &Path, config: Option<&RunConfig>) -> Result<Dataset> {
    let data =
        synthdata::load(path).with_context(|| format!("loading dataset {}", path.display()))?;
    if let Some(c) = config {
        if data.spec != c.data.spec {
            return Err(Error::ShapeMismatch {
                what: "dataset layout".into(),
                expected: format!("{:?}", c.data.spec),
                actual: format!("{:?}", data.spec),
            }
            .into());
        }
    }
    Ok(data)
}

/// Loads a checkpoint whose architecture fits the dataset layout.
fn load_model(checkpoint: &Path, data: &Dataset) -> Result<(Checkpoint, ModelParams)> {
    let ck = Checkpoint::load(checkpoint)?;
    let expected = Architecture {
        spec: data.spec,
        ..ck.architecture.clone()
    };
    let params = ck.to_params_checked(&expected.config_hash())?;
    Ok((ck, params))
}

fn print_report(report: &EvalReport) -> Result<()> {
    out!(
        "acr {:.4}  acc {:.4}  silhouette {:.4}  (labeled {}, unlabeled {})",
        report.acr,
        report.acc,
        report.silhouette,
        report.n_labeled,
        report.n_unlabeled
    );
    Ok(())
}

fn cmd_gen_data(source: &Source, out: &Option<PathBuf>) -> Result<()> {
    let config = source.load()?;
    let dir = out_dir(out, &config)?;
    let data = generate(&config)?;
    synthdata::save(&data, &dir)?;
    config.write_into(&dir)?;
    out!(
        "wrote {} train / {} test examples to {} (oracle accuracy {:.4})",
        data.train.len(),
        data.test.len(),
        dir.display(),
        data.provenance.oracle_accuracy.unwrap_or(f64::NAN)
    );
    Ok(())
}

/// Trains one configured run into `dir` and returns its final report.
fn train_run(
    config: &RunConfig,
    data: &Dataset,
    dir: &Path,
    resume: Option<&Path>,
) -> Result<EvalReport> {
    config.write_into(dir)?;
    let (params, log) = match resume {
        Some(ck) => trainer::resume(ck, data, &config.train, &config.hyper, Some(dir))?,
        None => {
            let params = ModelParams::init(&config.architecture(), config.seed)?;
            let state = TrainState::new(params, &config.train)?;
            let state = trainer::run(state, data, &config.train, &config.hyper, Some(dir))?;
            (state.params, state.log)
        }
    };
    let ck_path = dir.join(FINAL_CHECKPOINT);
    let mut ck = Checkpoint::load(&ck_path)?;
    ck.meta
        .insert("run_config_hash".into(), config.content_hash());
    ck.save(&ck_path)?;
    std::fs::write(dir.join(LOG_FILE), log.to_jsonl()).context("writing train log")?;

    let report = evaluate(&params, &data.test, &config.hyper)?;
    let hash = config.content_hash();
    write_json(
        &dir.join(REPORT_FILE),
        &ReportFile {
            run_config_hash: Some(&hash),
            checkpoint_config_hash: &ck.config_hash,
            report: &report,
        },
    )?;
    Ok(report)
}

fn cmd_train(
    source: &Source,
    data: &Option<PathBuf>,
    out: &Option<PathBuf>,
    ablate: &Option<String>,
    resume: &Option<PathBuf>,
    epochs: Option<usize>,
) -> Result<()> {
    let mut config = source.load()?;
    if let Some(spec) = ablate {
        config.train.toggles = parse_ablation(spec)?;
    }
    if let Some(e) = epochs {
        config.train.epochs = e;
    }
    let config = config.materialize()?;
    let dir = out_dir(out, &config)?;
    let dataset = match data {
        Some(path) => load_data(path, Some(&config))?,
        None => {
            let d = generate(&config)?;
            synthdata::save(&d, dir.join("data"))?;
            d
        }
    };
    let report = train_run(&config, &dataset, &dir, resume.as_deref())?;
    print_report(&report)?;
    Ok(())
}

/// Hyperparameters of the run that wrote `checkpoint`: from `config` when
/// given, else from a run config beside the checkpoint, else defaults.
fn run_hyper(checkpoint: &Path, config: &Option<PathBuf>) -> Result<Hyperparams> {
    let beside = checkpoint.parent().map(|d| d.join(RUN_CONFIG_FILE));
    let path = config.clone().or(beside.filter(|p| p.is_file()));
    Ok(match path {
        Some(p) => RunConfig::load(p)?.hyper,
        None => Hyperparams::default(),
    })
}

fn cmd_eval(
    checkpoint: &Path,
    data: &Path,
    config: &Option<PathBuf>,
    out: &Option<PathBuf>,
    embeddings: &Option<PathBuf>,
) -> Result<()> {
    let dataset = load_data(data, None)?;
    let (ck, params) = load_model(checkpoint, &dataset)?;
    let hyper = run_hyper(checkpoint, config)?;
    let report = evaluate(&params, &dataset.test, &hyper)?;
    print_report(&report)?;
    let file = ReportFile {
        run_config_hash: ck.meta.get("run_config_hash").map(String::as_str),
        checkpoint_config_hash: &ck.config_hash,
        report: &report,
    };
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join(REPORT_FILE), &file)?;
    } else {
        out!("{}", serde_json::to_string_pretty(&file)?);
    }
    if let Some(path) = embeddings {
        export_embeddings(&params, &dataset.test, &hyper, path)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct AblationRow {
    row: String,
    seed: u64,
    acr: f64,
    acc: f64,
}

fn cmd_ablate(
    source: &Source,
    data: &Option<PathBuf>,
    out: &Option<PathBuf>,
    seeds: &[u64],
    epochs: Option<usize>,
) -> Result<()> {
    let base = source.load()?;
    let dir = out_dir(out, &base)?;
    let seeds = if seeds.is_empty() {
        vec![base.seed]
    } else {
        seeds.to_vec()
    };
    let mut rows = Vec::new();
    for &seed in &seeds {
        let mut seeded = base.clone();
        seeded.seed = seed;
        seeded.train.seed = seed;
        seeded.hyper.seed = seed;
        let dataset = match data {
            Some(path) => load_data(path, Some(&seeded))?,
            None => generate(&seeded.clone().materialize()?)?,
        };
        for (name, spec) in ABLATION_ROWS {
            let mut config = seeded.clone();
            config.train.toggles = parse_ablation(spec)?;
            if let Some(e) = epochs {
                config.train.epochs = e;
            }
            let config = config.materialize()?;
            let run_dir = dir.join(format!("{name}-seed{seed}"));
            let report = train_run(&config, &dataset, &run_dir, None)?;
            out!(
                "{name:>8} seed {seed}: acr {:.4} acc {:.4}",
                report.acr,
                report.acc
            );
            rows.push(AblationRow {
                row: name.to_string(),
                seed,
                acr: report.acr,
                acc: report.acc,
            });
        }
    }
    base.write_into(&dir)?;
    write_json(&dir.join("ablation.json"), &rows)
}

fn cmd_export(
    checkpoint: &Path,
    data: &Path,
    config: &Option<PathBuf>,
    out: &Path,
    split: Split,
) -> Result<()> {
    let dataset = load_data(data, None)?;
    let (_, params) = load_model(checkpoint, &dataset)?;
    let examples: Vec<Example> = match split {
        Split::Train => dataset.train.clone(),
        Split::Test => dataset.test.clone(),
        Split::All => dataset.train.iter().chain(&dataset.test).cloned().collect(),
    };
    export_embeddings(&params, &examples, &run_hyper(checkpoint, config)?, out)?;
    out!("wrote {} embeddings to {}", examples.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::GenData { source, out } => cmd_gen_data(source, out),
        Command::Train {
            source,
            data,
            out,
            ablate,
            resume,
            epochs,
        } => cmd_train(source, data, out, ablate, resume, *epochs),
        Command::Eval {
            checkpoint,
            data,
            config,
            out,
            export_embeddings,
        } => cmd_eval(checkpoint, data, config, out, export_embeddings),
        Command::Ablate {
            source,
            data,
            out,
            seeds,
            epochs,
        } => cmd_ablate(source, data, out, seeds, *epochs),
        Command::ExportEmbeddings {
            checkpoint,
            data,
            config,
            out,
            split,
        } => cmd_export(checkpoint, data, config, out, *split),
    }
}

/// 2 for numeric failures, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    let numeric = err.chain().any(|e| {
        matches!(
            e.downcast_ref::<Error>(),
            Some(Error::NonFiniteLoss { .. } | Error::NonFinite(_))
        )
    });
    if numeric {
        2
    } else {
        1
    }
}

fn broken_pipe(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.downcast_ref::<std::io::Error>()
            .is_some_and(|e| e.kind() == std::io::ErrorKind::BrokenPipe)
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

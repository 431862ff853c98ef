//! The `fiat` command line.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime errors. Runtime
//! errors print one line `error:<Kind>: <message>` to stderr.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::evalkit::{load_jsonl, table_csv, Example, Split};
use crate::pipeline::rundir::slug;
use crate::pipeline::{
    augment, icl_instruction_set, infer, load_artifact, Augmentation, Experiment, Oracles, PipelineError, RunConfig,
    RunDir, TaskData,
};
use crate::prompting::{render_reasoning_prompt, render_tuning_input, InstructionSet, Role};

pub const CACHE_ENV: &str = "FIAT_CACHE_DIR";
pub const DEFAULT_CACHE_DIR: &str = ".fiat-cache";

#[derive(Debug, Parser)]
#[command(name = "fiat", version, about = "Tune a small model on oracle rationales and evaluate it.")]
pub struct Cli {
    /// Seed for every random choice; overrides the config file's seed
    /// (17 unless set).
    #[arg(long, global = true, help_heading = "Global options")]
    pub seed: Option<u64>,
    /// Config override `dot.path=value`; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true, help_heading = "Global options")]
    pub overrides: Vec<String>,
    /// Cache directory for base checkpoints and oracle responses
    /// [env: FIAT_CACHE_DIR, default: .fiat-cache].
    #[arg(long, value_name = "DIR", global = true, help_heading = "Global options")]
    pub cache_dir: Option<PathBuf>,
    /// More log output; repeat for more.
    #[arg(short, long, action = clap::ArgAction::Count, global = true, help_heading = "Global options")]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Instruction-set utilities.
    #[command(subcommand)]
    Prompt(PromptCommand),
    /// Generate rationales for every split.
    Augment(RunArgs),
    /// Build a tuned model and evaluate it.
    Train(RunArgs),
    /// Answer the examples of a JSONL file with a trained artifact.
    Infer {
        /// Run directory written by `train`.
        #[arg(long, value_name = "DIR")]
        artifact: PathBuf,
        /// Examples in the task's JSONL schema.
        #[arg(long, value_name = "JSONL")]
        input: PathBuf,
    },
    /// Evaluate a trained artifact on one split.
    Eval {
        /// Run directory written by `train`.
        #[arg(long, value_name = "DIR")]
        artifact: PathBuf,
        /// train, validation or test.
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// Run the five cumulative ablation variants.
    Ablate(RunArgs),
    /// Evaluate the in-context baseline.
    Icl(RunArgs),
}

#[derive(Debug, Subcommand)]
pub enum PromptCommand {
    /// Print the prompt an instruction set renders for one example.
    Preview {
        /// Instruction set JSON file.
        #[arg(long, value_name = "FILE")]
        iset: PathBuf,
        /// Example id from the run's data.
        #[arg(long, value_name = "ID")]
        example: String,
        /// Run config naming the data; defaults to the built-in task.
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        /// Rationale line for tuning-role sets.
        #[arg(long)]
        rationale: Option<String>,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// RunConfig JSON file.
    #[arg(long, value_name = "FILE")]
    pub config: PathBuf,
    /// Run directory [default: runs/<name>].
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

/// Everything a command needs besides its own arguments.
#[derive(Debug, Clone)]
pub struct CliConfig {
    pub config_path: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub seed: Option<u64>,
    pub cache_dir: PathBuf,
    pub verbosity: u8,
}

impl CliConfig {
    fn load_run(&self, path: Option<&Path>) -> Result<RunConfig, PipelineError> {
        let mut run = match path {
            Some(p) => RunConfig::load(p, &self.overrides)?,
            None => RunConfig::from_json("{}", &self.overrides)?,
        };
        if let Some(s) = self.seed {
            run.seed = s;
        }
        Ok(run)
    }
}

fn init_logging(verbosity: u8) {
    let level = match verbosity {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_target(false)
        .try_init();
}

/// Parses `argv` (including the program name) and runs the command.
pub fn dispatch<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                1
            } else {
                let _ = write!(out, "{text}");
                0
            };
        }
    };
    init_logging(cli.verbose);
    let cfg = CliConfig {
        config_path: None,
        overrides: cli.overrides.clone(),
        seed: cli.seed,
        cache_dir: cli
            .cache_dir
            .clone()
            .or_else(|| std::env::var_os(CACHE_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_CACHE_DIR)),
        verbosity: cli.verbose,
    };
    match run_command(cli.command, cfg, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error:{}: {}", e.kind(), e.to_string().replace('\n', " "));
            2
        }
    }
}

fn run_dir(run: &RunConfig, out: Option<PathBuf>) -> Result<RunDir, PipelineError> {
    RunDir::create(&out.unwrap_or_else(|| PathBuf::from("runs").join(&run.name)))
}

fn start(mut cfg: CliConfig, args: RunArgs) -> Result<(Experiment, RunDir), PipelineError> {
    cfg.config_path = Some(args.config.clone());
    let run = cfg.load_run(cfg.config_path.as_deref())?;
    let dir = run_dir(&run, args.out)?;
    // The effective config goes to disk before any work starts.
    dir.write_config(&run)?;
    let exp = Experiment::new(run, &cfg.cache_dir)?;
    Ok((exp, dir))
}

fn run_command(cmd: Command, cfg: CliConfig, out: &mut dyn Write) -> Result<(), PipelineError> {
    match cmd {
        Command::Prompt(PromptCommand::Preview {
            iset,
            example,
            config,
            rationale,
        }) => {
            let run = cfg.load_run(config.as_deref())?;
            let iset = InstructionSet::load(&iset)?;
            let data = TaskData::load(&run)?;
            let ex = data
                .all_examples()
                .into_iter()
                .find(|e| e.id == example)
                .ok_or_else(|| PipelineError::InvalidConfig(format!("no example with id {example}")))?;
            let text = match iset.role {
                Role::Reasoning => render_reasoning_prompt(&iset, &ex.input_text())?.text,
                Role::Tuning => render_tuning_input(&iset, &ex.input_text(), rationale.as_deref())?.text,
            };
            writeln!(out, "{text}")?;
        }
        Command::Augment(args) => {
            let (exp, dir) = start(cfg, args)?;
            let aug = exp.augment_all()?;
            dir.write_augmentation(&aug)?;
            writeln!(
                out,
                "{} rationales ({} cached) in {}",
                aug.len(),
                aug.cache_hits(),
                dir.path.display()
            )?;
        }
        Command::Train(args) => {
            let (exp, dir) = start(cfg, args)?;
            let aug = exp.augment_all()?;
            dir.write_augmentation(&aug)?;
            let bases = exp.bases()?;
            let artifact = exp.build(exp.run.variant, &bases, &aug)?;
            dir.write_artifact(&artifact)?;
            let name = exp.run.variant.label();
            let mut reports = vec![exp.evaluate(&name, &artifact, Split::Validation, &aug)?];
            if exp.data.test.is_some() {
                let mut r = exp.evaluate(&name, &artifact, Split::Test, &aug)?;
                r.metadata.insert("split".into(), "test".into());
                reports.push(r);
            }
            reports[0].metadata.insert("split".into(), "validation".into());
            dir.write_reports(&reports)?;
            write!(out, "{}", table_csv(&reports))?;
        }
        Command::Infer { artifact, input } => {
            let art = load_artifact(&artifact)?;
            let ds = load_jsonl(&input, art.task(), Split::Test)?;
            let oracles = if art.mode.needs_oracle() {
                let mut known: Vec<Example> = TaskData::load(&art.run)?.all_examples();
                known.extend(ds.examples.iter().cloned());
                Some(Oracles::from_config(&art.run, &known, Some(&cfg.cache_dir))?)
            } else {
                None
            };
            for ex in &ds.examples {
                let answer = infer(&art, &art.run.reasoning, oracles.as_ref().map(|o| &o.reasoning), ex)?;
                writeln!(out, "{}", serde_json::json!({ "id": ex.id, "prediction": answer }))?;
            }
        }
        Command::Eval { artifact, split } => {
            let art = load_artifact(&artifact)?;
            let exp = Experiment::new(art.run.clone(), &cfg.cache_dir)?;
            let ds = exp.data.split(split)?;
            let aug = if art.mode.needs_oracle() {
                augment(ds, &art.run.reasoning, &exp.oracles.reasoning)?
            } else {
                Augmentation::default()
            };
            let mut report = exp.evaluate(&art.run.variant.label(), &art, split, &aug)?;
            report.metadata.insert("split".into(), split.to_string());
            let reports = [report];
            std::fs::write(
                artifact.join(format!("report-{split}.json")),
                serde_json::to_string_pretty(&reports)? + "\n",
            )?;
            write!(out, "{}", table_csv(&reports))?;
        }
        Command::Ablate(args) => {
            let (exp, dir) = start(cfg, args)?;
            let aug = exp.augment_all()?;
            dir.write_augmentation(&aug)?;
            let bases = exp.bases()?;
            let rows = exp.ablation(&bases, &aug, Split::Validation)?;
            let variants = dir.subdir("variants")?;
            for row in &rows {
                variants.subdir(&slug(&row.name))?.write_artifact(&row.artifact)?;
            }
            let reports: Vec<_> = rows.into_iter().map(|r| r.report).collect();
            dir.write_reports(&reports)?;
            write!(out, "{}", table_csv(&reports))?;
        }
        Command::Icl(args) => {
            let (exp, dir) = start(cfg, args)?;
            let aug = exp.augment_all()?;
            dir.write_augmentation(&aug)?;
            let iset = icl_instruction_set(&exp.run.icl, &exp.data.train, Some(&aug));
            std::fs::write(dir.path.join("icl_iset.json"), iset.to_json() + "\n")?;
            let reports = vec![exp.icl(Split::Validation, &aug)?];
            dir.write_reports(&reports)?;
            write!(out, "{}", table_csv(&reports))?;
        }
    }
    Ok(())
}

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use clarify_core::clarification::{EventSink, NullSink};
use clarify_core::datagen::{
    dataset_schema, export_finetune_format, read_dataset, validate_dataset, Campaign, CategoryMix, ClarificationExample,
    ClassifierExample, CLARIFICATION_SCHEMA, CLASSIFIER_SCHEMA,
};
use clarify_core::evalkit::{
    build_packets, compare_perplexity, corpus_perplexity, export_study_doc, read_ratings, summarize,
    unblind_and_orient, AnswerKey, StudyItem, StudyKind,
};
use clarify_core::pipeline::{FileSink, SessionStore};
use clarify_core::template::{defaults, PromptTemplate};
use clarify_service::batch::{read_prompts, run_batch, study_items, write_jsonl};
use clarify_service::chat::chat;
use clarify_service::config::{wire, ServiceConfig};
use clarify_service::http::{router, AppState};
use serde::Deserialize;
use tracing::info;

/// Like `println!`, but a closed stdout (e.g. piping into `head`) is not an error.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

#[derive(Parser)]
#[command(name = "clarify", version, about = "Clarification-first coding assistant pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP API.
    Serve(ConfigArg),
    /// Interactive session on stdin/stdout.
    Chat {
        #[command(flatten)]
        config: ConfigArg,
        /// Also write the session's event log here.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Run every prompt in a JSON-lines file with the simulated user answering.
    Batch {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthetic training data.
    #[command(subcommand)]
    Datagen(DatagenCommand),
    /// Study packets, statistics and perplexity.
    #[command(subcommand)]
    Eval(EvalCommand),
}

#[derive(Args)]
struct ConfigArg {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct TeacherArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Name of the backend in the config to use as teacher.
    #[arg(long, default_value = "teacher")]
    teacher: String,
    #[arg(long)]
    n: u64,
    #[arg(long)]
    out: PathBuf,
    /// Concurrent teacher requests.
    #[arg(long, default_value_t = 4)]
    width: usize,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
}

#[derive(Subcommand)]
enum DatagenCommand {
    Classifier {
        #[command(flatten)]
        teacher: TeacherArgs,
        #[arg(long)]
        template: Option<PathBuf>,
    },
    Clarification {
        #[command(flatten)]
        teacher: TeacherArgs,
        /// Code-only / natural-language split, e.g. `50/50` or `0.3`.
        #[arg(long, default_value = "50/50")]
        mix: CategoryMix,
        #[arg(long)]
        code_template: Option<PathBuf>,
        #[arg(long)]
        prose_template: Option<PathBuf>,
    },
    Validate {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Chat-format records for fine-tuning.
    Export {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum EvalCommand {
    Packets {
        /// JSON lines of {item_id, prompt, ours, baseline}.
        #[arg(long)]
        items: PathBuf,
        #[arg(long)]
        participants: usize,
        #[arg(long, default_value_t = 10)]
        per_participant: usize,
        #[arg(long, value_enum, default_value = "clarification-questions")]
        study: StudyArg,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        instructions: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    Stats {
        #[arg(long)]
        ratings: PathBuf,
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Perplexity per system from JSON lines of {system, logprobs}.
    Ppl {
        #[arg(long = "in")]
        input: PathBuf,
        /// Report every other system's reduction relative to this one.
        #[arg(long)]
        baseline: Option<String>,
    },
    /// Clarified vs. baseline answers for prompts with hidden intents.
    Simulate {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        sessions: PathBuf,
        /// Study items, ready for `eval packets`.
        #[arg(long)]
        out: PathBuf,
        /// Full per-prompt transcripts.
        #[arg(long)]
        transcripts: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum StudyArg {
    ClarificationQuestions,
    FinalAnswers,
}

impl From<StudyArg> for StudyKind {
    fn from(s: StudyArg) -> Self {
        match s {
            StudyArg::ClarificationQuestions => StudyKind::ClarificationQuestions,
            StudyArg::FinalAnswers => StudyKind::FinalAnswers,
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn,clarify=info".into()),
        )
        .with_writer(io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Serve(c) => serve(&ServiceConfig::load(&c.config)?),
        Command::Chat { config, log } => {
            let config = ServiceConfig::load(&config.config)?;
            let wiring = wire(&config)?;
            let mut sink: Box<dyn EventSink> = match &log {
                Some(path) => Box::new(FileSink::create(path).with_context(|| format!("creating {}", path.display()))?),
                None => Box::new(NullSink),
            };
            let id = log
                .as_deref()
                .and_then(Path::file_stem)
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "chat".into());
            let outcome = chat(&wiring.engine, &id, &mut io::stdin().lock(), &mut io::stdout().lock(), sink.as_mut())?;
            Ok(outcome.exit_code() as u8)
        }
        Command::Batch { config, input, out } => {
            let config = ServiceConfig::load(&config.config)?;
            let wiring = wire(&config)?;
            let prompts = read_prompts(&input)?;
            let records = run_batch(&wiring.engine, wiring.simulated_user.as_ref(), &prompts);
            write_jsonl(&out, &records)?;
            info!(records = records.len(), out = %out.display(), "batch finished");
            Ok(0)
        }
        Command::Datagen(cmd) => datagen(cmd),
        Command::Eval(cmd) => eval(cmd),
    }
}

fn serve(config: &ServiceConfig) -> Result<u8> {
    let wiring = wire(config)?;
    let store = Arc::new(SessionStore::open(&config.data_dir)?);
    for (id, result) in store.resume_interrupted(&wiring.engine) {
        match result {
            Ok(status) => info!(session = %id, %status, "resumed interrupted session"),
            Err(e) => tracing::warn!(session = %id, "could not resume: {e}"),
        }
    }
    let app = router(AppState {
        store,
        engine: Arc::new(wiring.engine),
    });
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&config.listen)
            .await
            .with_context(|| format!("binding {}", config.listen))?;
        info!(listen = %config.listen, data_dir = %config.data_dir.display(), "serving");
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok::<_, anyhow::Error>(())
    })?;
    Ok(0)
}

fn optional_template(path: &Option<PathBuf>, fallback: &str) -> Result<PromptTemplate> {
    match path {
        Some(p) => Ok(PromptTemplate::load(p)?),
        None => Ok(PromptTemplate::new(fallback)),
    }
}

fn datagen(cmd: DatagenCommand) -> Result<u8> {
    let campaign_report = |report: clarify_core::datagen::GenerationCampaignReport| {
        say!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
        Ok(0)
    };
    match cmd {
        DatagenCommand::Classifier { teacher, template } => {
            let wiring = wire(&ServiceConfig::load(&teacher.config.config)?)?;
            let backend = wiring.backends.get(&teacher.teacher)?;
            let mut campaign = Campaign::new(backend.as_ref()).with_width(teacher.width);
            campaign.temperature = teacher.temperature;
            let template = optional_template(&template, defaults::DATAGEN_CLASSIFIER)?;
            let (_, report) = campaign.generate_classifier_dataset(&template, teacher.n, Some(&teacher.out))?;
            campaign_report(report)
        }
        DatagenCommand::Clarification {
            teacher,
            mix,
            code_template,
            prose_template,
        } => {
            let wiring = wire(&ServiceConfig::load(&teacher.config.config)?)?;
            let backend = wiring.backends.get(&teacher.teacher)?;
            let mut campaign = Campaign::new(backend.as_ref()).with_width(teacher.width);
            campaign.temperature = teacher.temperature;
            let code = optional_template(&code_template, defaults::DATAGEN_CODE_ONLY)?;
            let prose = optional_template(&prose_template, defaults::DATAGEN_NATURAL_LANGUAGE)?;
            let (_, report) =
                campaign.generate_clarification_dataset(&code, &prose, teacher.n, mix, Some(&teacher.out))?;
            campaign_report(report)
        }
        DatagenCommand::Validate { input } => {
            let report = validate_dataset(&input)?;
            say!("{}", serde_json::to_string_pretty(&report)?);
            Ok(if report.is_clean() { 0 } else { 1 })
        }
        DatagenCommand::Export { input, out } => {
            let n = match dataset_schema(&input)?.as_str() {
                CLASSIFIER_SCHEMA => {
                    export_finetune_format(&read_dataset::<ClassifierExample>(&input, CLASSIFIER_SCHEMA)?, &out)?
                }
                CLARIFICATION_SCHEMA => {
                    export_finetune_format(&read_dataset::<ClarificationExample>(&input, CLARIFICATION_SCHEMA)?, &out)?
                }
                other => bail!("unknown dataset schema {other:?}"),
            };
            say!("exported {n} records to {}", out.display());
            Ok(0)
        }
    }
}

#[derive(Deserialize)]
struct LogprobLine {
    system: String,
    logprobs: Vec<f64>,
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let raw = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1)))
        .collect()
}

fn eval(cmd: EvalCommand) -> Result<u8> {
    match cmd {
        EvalCommand::Packets {
            items,
            participants,
            per_participant,
            study,
            seed,
            instructions,
            out,
        } => {
            let items: Vec<StudyItem> = read_jsonl(&items)?;
            let packets = build_packets(&items, participants, per_participant, study.into(), seed)?;
            let instructions = instructions.map(|p| PromptTemplate::load(&p)).transpose()?;
            let export = export_study_doc(&packets, instructions.as_ref(), &out)?;
            say!(
                "wrote {} documents, {} and {}",
                export.documents.len(),
                export.key.display(),
                export.ratings_template.display()
            );
            Ok(0)
        }
        EvalCommand::Stats { ratings, key, out } => {
            let key: AnswerKey = serde_json::from_str(&fs::read_to_string(&key)?)?;
            let oriented = unblind_and_orient(&read_ratings(&ratings)?, &key)?;
            let summary = serde_json::to_string_pretty(&summarize(&oriented))?;
            match out {
                Some(path) => fs::write(path, summary + "\n")?,
                None => say!("{summary}"),
            }
            Ok(0)
        }
        EvalCommand::Ppl { input, baseline } => {
            let mut systems: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
            for line in read_jsonl::<LogprobLine>(&input)? {
                systems.entry(line.system).or_default().push(line.logprobs);
            }
            let mut report = serde_json::Map::new();
            for (name, seqs) in &systems {
                let mut entry = serde_json::json!({
                    "sequences": seqs.len(),
                    "corpus_perplexity": corpus_perplexity(seqs)?,
                });
                if let Some(base) = &baseline {
                    let reference = systems.get(base).ok_or_else(|| anyhow!("no system named {base:?}"))?;
                    entry["reduction_vs_baseline"] = compare_perplexity(reference, seqs)?.into();
                }
                report.insert(name.clone(), entry);
            }
            say!("{}", serde_json::to_string_pretty(&report)?);
            Ok(0)
        }
        EvalCommand::Simulate {
            config,
            sessions,
            out,
            transcripts,
        } => {
            let wiring = wire(&ServiceConfig::load(&config.config)?)?;
            if wiring.simulated_user.is_none() {
                bail!("config has no [simulated_user] binding");
            }
            let records = run_batch(&wiring.engine, wiring.simulated_user.as_ref(), &read_prompts(&sessions)?);
            if let Some(path) = transcripts {
                write_jsonl(&path, &records)?;
            }
            let items = study_items(&wiring.engine, &records)?;
            write_jsonl(&out, &items)?;
            say!("{} study items from {} prompts", items.len(), records.len());
            Ok(0)
        }
    }
}

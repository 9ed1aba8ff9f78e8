use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use promptforge::dataset::{self, DatasetError};
use promptforge::engine::{self, load_manual_templates, ManualError, ManualTemplate, RunStatus};
use promptforge::gateway::API_KEY_ENV;
use promptforge::rouge::rouge_l;
use promptforge::{report, ChatClient, Combo, HttpClient, HttpConfig, RunConfig, ScriptedClient, TaskKind};

#[derive(Parser)]
#[command(name = "promptforge", version, about = "Iterative prompt-template optimisation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one optimisation into a fresh directory.
    Run(RunArgs),
    /// Compare finished runs as CSV tables, SVG charts and a summary.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a dataset or manual-template file.
    Validate {
        #[arg(long, requires = "task", conflicts_with = "manual")]
        dataset: Option<PathBuf>,
        #[arg(long)]
        task: Option<TaskKind>,
        #[arg(long, required_unless_present = "dataset")]
        manual: Option<PathBuf>,
    },
    /// ROUGE-L between a candidate and a reference text file.
    Score { candidate: PathBuf, reference: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    task: TaskKind,
    #[arg(long)]
    combo: Combo,
    /// JSONL manual templates: {"id", "text", "mean_score"?}
    #[arg(long)]
    manual: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    batch_size: usize,
    #[arg(long, default_value_t = 10)]
    iterations: u32,
    #[arg(long, default_value_t = 10)]
    sample_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, default_value = "gpt-3.5-turbo")]
    model: String,
    /// Base URL of an OpenAI-compatible API; the key is read from PROMPTFORGE_API_KEY.
    #[arg(long, required_unless_present = "mock_script", conflicts_with = "mock_script")]
    endpoint: Option<String>,
    /// JSONL file of {"response": ...} lines replayed in call order.
    #[arg(long)]
    mock_script: Option<PathBuf>,
    /// Meta-prompt size limit in estimated tokens.
    #[arg(long)]
    token_budget: Option<usize>,
    /// Concurrent requests against the endpoint.
    #[arg(long)]
    in_flight: Option<usize>,
    /// Run directory; must not exist or be empty.
    #[arg(long)]
    out: PathBuf,
}

/// Exit 1: bad invocation or bad input. Exit 2: the work itself failed.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Report { runs, out } => report::report(&runs, &out)
            .map(|files| {
                for f in files {
                    println!("{}", f.display());
                }
            })
            .map_err(runtime),
        Command::Validate { dataset, task, manual } => validate(dataset, task, manual),
        Command::Score { candidate, reference } => score(&candidate, &reference),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Usage(e) | Failure::Runtime(e)) = &f;
            eprintln!("error: {}", describe(e));
            ExitCode::from(f.code())
        }
    }
}

/// Error chain joined by ": ", skipping causes already spelled out by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut out = e.to_string();
    for cause in e.chain().skip(1) {
        let text = cause.to_string();
        if !out.contains(&text) {
            out = format!("{out}: {text}");
        }
    }
    out
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let mut config = RunConfig::new(args.task, args.combo, args.n);
    config.batch_size = args.batch_size;
    config.iterations = args.iterations;
    config.sample_size = args.sample_size;
    config.seed = args.seed;
    config.temperature = args.temperature;
    config.model_name = args.model;
    if let Some(budget) = args.token_budget {
        config.meta_prompt_token_budget = budget;
    }
    let manual = load_manual_templates(&args.manual).map_err(manual_failure)?;
    config
        .validate_with_pool(manual.len())
        .map_err(|e| Failure::Usage(e.into()))?;

    let client: Box<dyn ChatClient> = match (&args.mock_script, &args.endpoint) {
        (Some(script), _) => Box::new(
            ScriptedClient::from_file(script)
                .with_context(|| format!("loading mock script {}", script.display()))
                .map_err(Failure::Usage)?,
        ),
        (None, Some(url)) => {
            let mut http = HttpConfig::from_env(url.as_str())
                .with_context(|| format!("set {API_KEY_ENV} to use --endpoint"))
                .map_err(Failure::Usage)?;
            if let Some(n) = args.in_flight {
                http.max_in_flight = n.max(1);
            }
            Box::new(HttpClient::new(http))
        }
        (None, None) => {
            return Err(Failure::Usage(anyhow!(
                "one of --endpoint or --mock-script is required"
            )))
        }
    };

    let state = run_with(config, &manual, &args.dataset, client.as_ref(), &args.out)?;
    match state {
        RunStatus::Completed => {
            println!("{}", args.out.display());
            Ok(())
        }
        RunStatus::Failed(reason) => Err(runtime(anyhow!(
            "run failed: {reason} (partial results in {})",
            args.out.display()
        ))),
        RunStatus::Running => unreachable!("engine returns finished runs"),
    }
}

fn run_with(
    config: RunConfig,
    manual: &[ManualTemplate],
    dataset: &Path,
    client: &dyn ChatClient,
    out: &Path,
) -> Result<RunStatus, Failure> {
    match engine::run(config, manual, dataset, client, out) {
        Ok(state) => Ok(state.status),
        Err(e) if e.is_usage() => Err(Failure::Usage(e.into())),
        Err(e) => Err(runtime(e)),
    }
}

fn manual_failure(e: ManualError) -> Failure {
    match e {
        ManualError::Io { .. } => runtime(e),
        e => Failure::Usage(e.into()),
    }
}

fn validate(dataset: Option<PathBuf>, task: Option<TaskKind>, manual: Option<PathBuf>) -> Result<(), Failure> {
    if let (Some(path), Some(task)) = (&dataset, task) {
        let records = dataset::load(path, task).map_err(|e| match e {
            DatasetError::Io { .. } => runtime(e),
            e => Failure::Usage(e.into()),
        })?;
        println!("{}: {} valid {} records", path.display(), records.len(), task);
    }
    if let Some(path) = &manual {
        let templates = load_manual_templates(path).map_err(manual_failure)?;
        println!("{}: {} valid manual templates", path.display(), templates.len());
    }
    Ok(())
}

fn score(candidate: &Path, reference: &Path) -> Result<(), Failure> {
    let read = |p: &Path| fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()));
    let cand = read(candidate).map_err(Failure::Runtime)?;
    let reference = read(reference).map_err(Failure::Runtime)?;
    let s = rouge_l(&cand, &reference);
    println!("P {:.3}", s.precision);
    println!("R {:.3}", s.recall);
    println!("F1 {:.3}", s.f1);
    Ok(())
}

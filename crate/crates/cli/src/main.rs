use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use hisql_cli::app::{App, CONFIG_ENV};
use hisql_cli::commands::{self, AskArgs, BenchArgs, Failure};
use hisql_cli::server::{self, ServerState};
use hisql_core::eval::Mode;

#[derive(Parser)]
#[command(name = "hisql", version, about = "Text-to-SQL with curated hints and execution-guided repair")]
struct Cli {
    /// Config file (TOML or .json).
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Curate hints for a database from a JSON array of historical queries.
    Curate {
        db_id: String,
        history: PathBuf,
        /// Defaults to the configured hint path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Answer one question.
    Ask {
        db_id: String,
        question: String,
        #[arg(long)]
        evidence: Option<String>,
        #[arg(long)]
        no_hints: bool,
        /// Print the generation prompt and exit without calling the model.
        #[arg(long)]
        dump_prompt: bool,
    },
    /// Run a dataset and write report.json and report.md.
    Bench {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "hisql")]
        mode: Mode,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long, default_value = "report")]
        report_dir: PathBuf,
    },
    /// Serve the HTTP API (and the console assets, if configured).
    Serve {
        #[arg(long)]
        bind: Option<String>,
    },
    /// Re-execute stored hints against their database.
    VerifyHints {
        db_id: String,
        #[arg(long)]
        file: Option<PathBuf>,
    },
}

fn run_serve(app: App, bind: Option<String>) -> Result<(), Failure> {
    let bind = bind.unwrap_or_else(|| app.config.bind.clone());
    let app = Arc::new(app);
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Failure::Failed(format!("cannot start runtime: {e}")))?;
    let res = rt.block_on(server::serve(ServerState::new(Arc::clone(&app)), &bind));
    rt.shutdown_background();
    // The blocking HTTP client must be dropped outside the runtime.
    drop(app);
    res.map_err(Failure::from)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let config = cli
        .config
        .ok_or_else(|| Failure::Usage(format!("no config given; pass --config or set {CONFIG_ENV}")))?;
    let app = App::from_file(&config).map_err(|e| Failure::Usage(format!("{e:#}")))?;
    let mut out = std::io::stdout().lock();
    match cli.command {
        Command::Curate { db_id, history, out: file } => commands::curate(&app, &db_id, &history, file.as_deref(), &mut out),
        Command::Ask { db_id, question, evidence, no_hints, dump_prompt } => commands::ask(
            &app,
            &AskArgs { db_id: &db_id, question: &question, evidence: evidence.as_deref(), no_hints, dump_prompt },
            &mut out,
        ),
        Command::Bench { dataset, mode, seed, workers, report_dir } => commands::bench(
            &app,
            &BenchArgs { dataset: &dataset, mode, seed, workers, report_dir: &report_dir },
            &mut out,
        )
        .map(|_| ()),
        Command::Serve { bind } => {
            drop(out);
            run_serve(app, bind)
        }
        Command::VerifyHints { db_id, file } => commands::verify_hints(&app, &db_id, file, &mut out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

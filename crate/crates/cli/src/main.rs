//! `deepstrat`: validate, compile, run and record research strategies, or
//! serve them over HTTP.

mod backends;
mod config;

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Parser, Subcommand};

use deepstrat_core::compiler::{
    compile_strategy, CompileError, CompileOptions, PromptTemplates, StrategyText,
};
use deepstrat_core::lang::{parse_script, validate_script, ScriptAst, ValidatorLimits};
use deepstrat_core::runtime::{execute, CancellationSignal, NotificationEvent, Terminal};
use deepstrat_core::tools::{
    record_session, LmBackend, LmFn, LmRequest, Recorder, ScriptedLm, ToolError,
};
use deepstrat_service::{Backends, Engine, ServiceConfig};

use backends::{read, ToolFlags};
use config::{BackendFlags, FileConfig, Settings};

#[derive(Debug, Parser)]
#[command(
    name = "deepstrat",
    version,
    about = "Run user-defined research strategies"
)]
struct Cli {
    /// TOML configuration file. Flags and environment variables win over it.
    #[arg(long, env = "DEEPSTRAT_CONFIG", global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    backend: BackendFlags,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a script against the language rules.
    Validate { script: PathBuf },
    /// Turn a natural-language strategy into a checked script.
    Compile {
        strategy: PathBuf,
        /// Answer code-generation requests from scripted rules instead of --lm-endpoint.
        #[arg(long, value_name = "RULES")]
        mock: Option<PathBuf>,
        #[arg(long)]
        max_attempts: Option<u32>,
        /// Where to write the script; stdout when omitted.
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Append one JSON line per attempt here (the file is replaced first).
        #[arg(long)]
        transcript: Option<PathBuf>,
        /// Directory holding codegen.txt and repair.txt.
        #[arg(long)]
        templates: Option<PathBuf>,
    },
    /// Execute a script, printing one JSON event per line.
    Run {
        script: PathBuf,
        #[command(flatten)]
        prompt: PromptArgs,
        #[command(flatten)]
        tools: ToolFlags,
        /// Write the final report's markdown here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Keep real timestamps in replay mode. By default they are printed
        /// as 0 so replayed output is byte-for-byte reproducible.
        #[arg(long)]
        wall_clock: bool,
    },
    /// Execute a script and save every tool call as a replayable transcript.
    Record {
        script: PathBuf,
        #[command(flatten)]
        prompt: PromptArgs,
        #[command(flatten)]
        tools: ToolFlags,
        #[arg(long)]
        out: PathBuf,
        /// Overwrite an existing transcript.
        #[arg(long)]
        force: bool,
    },
    /// Start the HTTP service.
    Serve {
        #[arg(long, env = "DEEPSTRAT_ADDR")]
        addr: Option<String>,
        #[arg(long, env = "DEEPSTRAT_STORE")]
        store: Option<PathBuf>,
        #[command(flatten)]
        tools: ToolFlags,
        /// Answer code-generation requests from scripted rules.
        #[arg(long, value_name = "RULES")]
        mock_codegen: Option<PathBuf>,
        /// Directory holding codegen.txt and repair.txt.
        #[arg(long)]
        templates: Option<PathBuf>,
    },
}

#[derive(Debug, clap::Args)]
#[group(required = true, multiple = false)]
struct PromptArgs {
    #[arg(long)]
    prompt: Option<String>,
    /// Read the prompt from a file; trailing whitespace is dropped.
    #[arg(long, value_name = "PATH")]
    prompt_file: Option<PathBuf>,
}

impl PromptArgs {
    fn text(&self) -> Result<String, CliError> {
        match (&self.prompt, &self.prompt_file) {
            (Some(p), _) => Ok(p.clone()),
            (None, Some(path)) => Ok(read(path)?.trim_end().to_string()),
            (None, None) => Err(CliError::usage("a prompt is required")),
        }
    }
}

/// A failure together with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    /// Bad arguments, missing files and other I/O problems.
    pub fn usage(message: impl fmt::Display) -> Self {
        Self {
            code: 2,
            message: message.to_string(),
        }
    }

    /// The input was read but the work failed.
    pub fn domain(message: impl fmt::Display) -> Self {
        Self {
            code: 1,
            message: message.to_string(),
        }
    }
}

const EXIT_INTERRUPTED: u8 = 130;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = FileConfig::load(cli.config.as_deref())
        .map_err(|e| CliError::usage(format!("{e:#}")))
        .and_then(|file| {
            let settings = Settings::resolve(&cli.backend, file);
            settings.budget.check().map_err(|b| {
                CliError::usage(format!("budget `{}` must be positive", b.as_str()))
            })?;
            dispatch(cli.command, settings)
        });
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn dispatch(command: Command, settings: Settings) -> Result<u8, CliError> {
    match command {
        Command::Validate { script } => validate(&script),
        Command::Compile {
            strategy,
            mock,
            max_attempts,
            out,
            transcript,
            templates,
        } => {
            let lm: Arc<dyn LmBackend> = match &mock {
                Some(rules) => Arc::new(ScriptedLm::from_file(rules).map_err(CliError::usage)?),
                None => backends::live_lm(&settings)?,
            };
            let options = CompileOptions {
                max_attempts: max_attempts.unwrap_or(settings.max_attempts),
                templates: load_templates(templates.as_ref().or(settings.templates_dir.as_ref()))?,
                transcript_path: transcript.clone(),
                ..CompileOptions::default()
            };
            compile(&strategy, lm.as_ref(), &options, out.as_deref())
        }
        Command::Run {
            script,
            prompt,
            tools,
            report,
            wall_clock,
        } => {
            let ast = load_script(&script)?;
            let prompt = prompt.text()?;
            let registry = tools.factory(&settings)?();
            let keep_clock = wall_clock || tools.replay.is_none();
            run(
                &ast,
                &prompt,
                registry,
                &settings,
                keep_clock,
                report.as_deref(),
            )
        }
        Command::Record {
            script,
            prompt,
            tools,
            out,
            force,
        } => {
            if out.exists() && !force {
                return Err(CliError::usage(format!(
                    "{} exists; pass --force to overwrite",
                    out.display()
                )));
            }
            let ast = load_script(&script)?;
            let prompt = prompt.text()?;
            let recorder = Recorder::new();
            let registry = record_session(&tools.factory(&settings)?(), recorder.clone());
            let code = run(&ast, &prompt, registry, &settings, true, None)?;
            let transcript = recorder.transcript();
            transcript
                .save(&out, force)
                .map_err(|e| CliError::domain(format!("{}: {e}", out.display())))?;
            eprintln!(
                "recorded {} tool calls to {}",
                transcript.entries.len(),
                out.display()
            );
            Ok(code)
        }
        Command::Serve {
            addr,
            store,
            tools,
            mock_codegen,
            templates,
        } => {
            let codegen: Arc<dyn LmBackend> = match (&mock_codegen, &settings.lm) {
                (Some(rules), _) => {
                    Arc::new(ScriptedLm::from_file(rules).map_err(CliError::usage)?)
                }
                (None, Some(_)) => backends::live_lm(&settings)?,
                (None, None) => Arc::new(LmFn(|_: &LmRequest| {
                    Err(ToolError::lm("no code-generation model configured"))
                })),
            };
            let mut config = ServiceConfig::new(store.unwrap_or(settings.store_dir.clone()));
            config.budget = settings.budget;
            config.max_attempts = settings.max_attempts;
            config.templates =
                load_templates(templates.as_ref().or(settings.templates_dir.as_ref()))?;
            let backends = Backends {
                tools: tools.factory(&settings)?,
                codegen,
            };
            serve(addr.unwrap_or(settings.addr.clone()), config, backends)
        }
    }
}

fn load_templates(dir: Option<&PathBuf>) -> Result<PromptTemplates, CliError> {
    match dir {
        Some(dir) => PromptTemplates::load_dir(dir)
            .map_err(|e| CliError::usage(format!("{}: {e}", dir.display()))),
        None => Ok(PromptTemplates::default()),
    }
}

fn parse(path: &Path) -> Result<Result<ScriptAst, String>, CliError> {
    let source = read(path)?;
    Ok(parse_script(&source).map_err(|e| format!("{}: PARSE_ERROR: {e}", path.display())))
}

fn validate(path: &Path) -> Result<u8, CliError> {
    let ast = match parse(path)? {
        Ok(ast) => ast,
        Err(e) => {
            println!("{e}");
            return Ok(1);
        }
    };
    let report = validate_script(&ast, &ValidatorLimits::default());
    for v in &report.violations {
        println!("{}: {v}", path.display());
    }
    if report.is_accept() {
        println!("{}: ok ({} steps)", path.display(), ast.steps.len());
        Ok(0)
    } else {
        Ok(1)
    }
}

/// Parses and validates a script that is about to run.
fn load_script(path: &Path) -> Result<ScriptAst, CliError> {
    let ast = parse(path)?.map_err(CliError::domain)?;
    let report = validate_script(&ast, &ValidatorLimits::default());
    if !report.is_accept() {
        let lines: Vec<String> = report.violations.iter().map(|v| v.to_string()).collect();
        return Err(CliError::domain(format!(
            "{} is not a valid script:\n{}",
            path.display(),
            lines.join("\n")
        )));
    }
    Ok(ast)
}

fn compile(
    path: &Path,
    lm: &dyn LmBackend,
    options: &CompileOptions,
    out: Option<&Path>,
) -> Result<u8, CliError> {
    let body = read(path)?;
    if let Some(t) = &options.transcript_path {
        if t.exists() {
            std::fs::remove_file(t)
                .map_err(|e| CliError::usage(format!("{}: {e}", t.display())))?;
        }
    }
    let strategy = StrategyText {
        id: path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        title: String::new(),
        body,
        revision: 1,
    };
    match compile_strategy(&strategy, lm, options) {
        Ok(artifact) => {
            eprintln!("compiled in {} attempt(s)", artifact.attempts);
            match out {
                Some(out) => std::fs::write(out, &artifact.source_text)
                    .map_err(|e| CliError::usage(format!("{}: {e}", out.display())))?,
                None => print!("{}", artifact.source_text),
            }
            Ok(0)
        }
        Err(CompileError::Rejected { transcript }) => {
            eprintln!("compilation rejected after {} attempt(s)", transcript.len());
            if options.transcript_path.is_none() {
                for attempt in &transcript {
                    eprintln!(
                        "{}",
                        serde_json::to_string(attempt).expect("attempt serializes")
                    );
                }
            }
            Ok(1)
        }
        Err(
            e @ (CompileError::Steps(_)
            | CompileError::NoAttempts
            | CompileError::Transcript { .. }),
        ) => Err(CliError::usage(e)),
        Err(e) => Err(CliError::domain(e)),
    }
}

fn run(
    ast: &ScriptAst,
    prompt: &str,
    tools: deepstrat_core::tools::ToolRegistry,
    settings: &Settings,
    keep_clock: bool,
    report_path: Option<&Path>,
) -> Result<u8, CliError> {
    let cancel = CancellationSignal::new();
    let interrupted = Arc::new(AtomicBool::new(false));
    {
        let cancel = cancel.clone();
        let interrupted = interrupted.clone();
        ctrlc::set_handler(move || {
            interrupted.store(true, Ordering::SeqCst);
            cancel.cancel();
        })
        .map_err(|e| CliError::usage(format!("cannot install signal handler: {e}")))?;
    }
    let stdout = std::io::stdout();
    let mut sink = |event: &NotificationEvent| {
        let mut event = event.clone();
        if !keep_clock {
            event.wall_clock_ms = 0;
        }
        let mut out = stdout.lock();
        let _ = writeln!(
            out,
            "{}",
            serde_json::to_string(&event).expect("event serializes")
        );
        let _ = out.flush();
    };
    let outcome = execute(ast, prompt, &tools, &settings.budget, &cancel, &mut sink);
    match outcome.terminal {
        Terminal::Completed { report } => {
            if let Some(path) = report_path {
                std::fs::write(path, report)
                    .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
            }
            Ok(0)
        }
        Terminal::Cancelled if interrupted.load(Ordering::SeqCst) => Ok(EXIT_INTERRUPTED),
        Terminal::Cancelled => Ok(1),
        Terminal::Failed(f) => {
            eprintln!("run failed: {}", f.message());
            Ok(1)
        }
    }
}

fn serve(addr: String, config: ServiceConfig, backends: Backends) -> Result<u8, CliError> {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .init();
    let runtime = tokio::runtime::Runtime::new().map_err(CliError::usage)?;
    runtime.block_on(async move {
        let engine = Engine::open(config, backends).map_err(|e| CliError::usage(e.to_string()))?;
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| CliError::usage(format!("{addr}: {e}")))?;
        eprintln!(
            "listening on http://{}",
            listener.local_addr().map_err(CliError::usage)?
        );
        deepstrat_service::serve(listener, engine)
            .await
            .map_err(CliError::domain)?;
        Ok(0)
    })
}

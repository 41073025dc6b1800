use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mentigo::evalkit::engagement::histogram;
use mentigo::evalkit::{
    code_session, compute_engagement, export_csv, run_episode, Coder, CodingRules,
    EngagementReport, EpisodeBackends, EpisodeSummary, PersonaScript, ScriptBundle,
};
use mentigo::gateway::{Gateway, LiveConfig, LlmBackend};
use mentigo::kb::{KbError, KnowledgeBase, StrategyId};
use mentigo::prompts::PromptSet;
use mentigo::server::{self, DEFAULT_PORT, ENV_KB_PATH, ENV_PORT};
use mentigo::session::store::{read_log, write_log};
use mentigo::session::{replay, FileStore, SessionError, SessionService};
use mentigo::StateId;

const DEMO_SCRIPT: &str = include_str!("../../../../../scripts/demo.json");

#[derive(Parser)]
#[command(
    name = "mentigo",
    version,
    about = "Stage-aware mentoring engine for creative problem solving"
)]
struct Cli {
    /// Knowledge base JSON; defaults to the bundled one.
    #[arg(long, global = true, env = ENV_KB_PATH)]
    kb: Option<PathBuf>,
    /// Directory of prompt templates; defaults to the bundled set.
    #[arg(long, global = true)]
    prompts: Option<PathBuf>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve the HTTP/WebSocket API.
    Serve {
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(long, env = ENV_PORT, default_value_t = DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Persist and restore session logs in this directory.
        #[arg(long)]
        log_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Chat with the mentor in the terminal, one message per line.
    Chat {
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(long, default_value = "Low-Carbon Campus")]
        topic: String,
        /// Print the controller decision before each reply.
        #[arg(long)]
        trace: bool,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the session event log here on exit.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a knowledge base and report its shape.
    ValidateKb,
    /// Run persona episodes and write a results CSV.
    Simulate {
        /// Persona files or directories of them.
        #[arg(required = true)]
        personas: Vec<PathBuf>,
        /// Script bundle used instead of each persona's embedded script.
        #[arg(long)]
        script: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Results CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write each episode's event log into this directory.
        #[arg(long)]
        log_dir: Option<PathBuf>,
    },
    /// Engagement metrics and frequency histograms for event logs.
    Analyze {
        /// Log files or directories of them.
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        /// Engagement CSV; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Rule-code every student turn into this CSV.
        #[arg(long)]
        turns_out: Option<PathBuf>,
    },
    /// Rebuild a session from its log and print it.
    Replay {
        log: PathBuf,
        /// Print the session as JSON.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    Live,
    Scripted,
}

#[derive(Args)]
struct BackendArgs {
    #[arg(long, value_enum, default_value_t = BackendKind::Scripted)]
    backend: BackendKind,
    /// Script bundle `{"controller": …, "mentor": …}`; the bundled demo
    /// script when omitted.
    #[arg(long)]
    script: Option<PathBuf>,
}

enum CliError {
    Validation(String),
    Input(String),
    Environment(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Input(_) => 2,
            CliError::Environment(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Input(m) | CliError::Environment(m) => m,
        }
    }
}

impl From<SessionError> for CliError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::CorruptLog { .. } => CliError::Validation(e.to_string()),
            SessionError::Io(_) => CliError::Environment(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

type CliResult = Result<(), CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let filter = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(filter)),
        )
        .with_writer(io::stderr)
        .init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::ValidateKb => validate_kb(cli.kb.as_deref()),
        Command::Serve {
            ref backend,
            port,
            ref host,
            ref log_dir,
            seed,
        } => {
            let svc = service(&cli, backend, seed)?;
            serve(svc, host, port, log_dir.clone())
        }
        Command::Chat {
            ref backend,
            ref topic,
            trace,
            seed,
            ref out,
        } => {
            let svc = service(&cli, backend, seed)?;
            chat(&svc, topic, trace, out.as_deref())
        }
        Command::Simulate {
            ref personas,
            ref script,
            seed,
            ref out,
            ref log_dir,
        } => {
            let kb = Arc::new(load_kb(cli.kb.as_deref())?);
            let prompts = Arc::new(load_prompts(cli.prompts.as_deref())?);
            simulate(
                kb,
                prompts,
                personas,
                script.as_deref(),
                seed,
                out.as_deref(),
                log_dir.as_deref(),
            )
        }
        Command::Analyze {
            ref logs,
            ref out,
            ref turns_out,
        } => {
            let kb = load_kb(cli.kb.as_deref())?;
            analyze(&kb, logs, out.as_deref(), turns_out.as_deref())
        }
        Command::Replay { ref log, json } => replay_log(log, json),
    }
}

fn load_kb(path: Option<&Path>) -> Result<KnowledgeBase, CliError> {
    match path {
        None => Ok(KnowledgeBase::fixture()),
        Some(p) => KnowledgeBase::from_path(p).map_err(|e| match e {
            KbError::Validation(v) => CliError::Validation(format!(
                "{}: {} violation(s):\n  {}",
                p.display(),
                v.len(),
                v.join("\n  ")
            )),
            other => CliError::Input(format!("{}: {other}", p.display())),
        }),
    }
}

fn load_prompts(dir: Option<&Path>) -> Result<PromptSet, CliError> {
    match dir {
        None => Ok(PromptSet::bundled()),
        Some(d) => {
            PromptSet::from_dir(d).map_err(|e| CliError::Input(format!("{}: {e}", d.display())))
        }
    }
}

type BackendPair = (Arc<dyn LlmBackend>, Arc<dyn LlmBackend>);

fn backends(args: &BackendArgs) -> Result<BackendPair, CliError> {
    match args.backend {
        BackendKind::Live => {
            let cfg = LiveConfig::from_env().map_err(|e| CliError::Environment(e.to_string()))?;
            let build = || {
                Gateway::new(mentigo::gateway::BackendConfig::Live(cfg.clone()))
                    .map(|g| Arc::new(g) as Arc<dyn LlmBackend>)
                    .map_err(|e| CliError::Environment(e.to_string()))
            };
            Ok((build()?, build()?))
        }
        BackendKind::Scripted => {
            let bundle: ScriptBundle = match &args.script {
                Some(p) => {
                    ScriptBundle::from_path(p).map_err(|e| CliError::Input(e.to_string()))?
                }
                None => serde_json::from_str(DEMO_SCRIPT).expect("bundled demo script is valid"),
            };
            let build = |cfg| {
                Gateway::scripted(cfg)
                    .map(|g| Arc::new(g) as Arc<dyn LlmBackend>)
                    .map_err(|e| CliError::Input(e.to_string()))
            };
            Ok((build(bundle.controller)?, build(bundle.mentor)?))
        }
    }
}

fn service(cli: &Cli, args: &BackendArgs, seed: Option<u64>) -> Result<SessionService, CliError> {
    let kb = Arc::new(load_kb(cli.kb.as_deref())?);
    let prompts = Arc::new(load_prompts(cli.prompts.as_deref())?);
    let (controller, mentor) = backends(args)?;
    let svc = SessionService::new(kb, prompts, controller, mentor);
    Ok(match seed {
        Some(s) => svc.with_seed(s),
        None => svc,
    })
}

fn validate_kb(path: Option<&Path>) -> CliResult {
    let kb = load_kb(path)?;
    let unresolved = kb.validate_alias_table();
    if !unresolved.is_empty() {
        return Err(CliError::Validation(format!(
            "unresolved strategy names: {}",
            unresolved.join(", ")
        )));
    }
    println!(
        "OK: {} stages, {} states, {} strategies",
        kb.stages().len(),
        kb.states().len(),
        kb.strategies().len()
    );
    println!(
        "{} state categories, {} strategy categories, {} aliases resolved",
        kb.state_categories().len(),
        kb.strategy_categories().len(),
        kb.aliases().len()
    );
    Ok(())
}

fn serve(svc: SessionService, host: &str, port: u16, log_dir: Option<PathBuf>) -> CliResult {
    let mut svc = svc;
    if let Some(dir) = log_dir {
        let store = Arc::new(
            FileStore::open(&dir)
                .map_err(|e| CliError::Environment(format!("{}: {e}", dir.display())))?,
        );
        let restored = svc.restore_all(&store)?;
        if restored > 0 {
            eprintln!("restored {restored} session(s) from {}", dir.display());
        }
        svc = svc.with_sink(store);
    }
    let svc = Arc::new(svc);
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Environment(e.to_string()))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((host, port))
            .await
            .map_err(|e| CliError::Environment(format!("cannot bind {host}:{port}: {e}")))?;
        let addr = listener
            .local_addr()
            .map_err(|e| CliError::Environment(e.to_string()))?;
        eprintln!("listening on http://{addr}");
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
            eprintln!("shutting down");
        };
        server::serve(listener, svc, shutdown)
            .await
            .map_err(|e| CliError::Environment(e.to_string()))
    })
}

fn state_list(states: &[StateId]) -> String {
    states
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn chat(svc: &SessionService, topic: &str, trace: bool, out: Option<&Path>) -> CliResult {
    let session = svc.create_session(topic)?;
    let stdout = io::stdout();
    let mut o = stdout.lock();
    let w = |e: io::Error| CliError::Environment(e.to_string());
    writeln!(o, "mentor> {}", session.transcript[0].text).map_err(w)?;

    let stdin = io::stdin();
    for line in stdin.lock().lines() {
        let line = line.map_err(w)?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        match svc.post_student_message(&session.id, text) {
            Ok((reply, d)) => {
                if trace {
                    writeln!(
                        o,
                        "stage={} states=[{}] strategy={}",
                        d.stage_after,
                        state_list(&d.active_states),
                        d.chosen_strategy
                    )
                    .map_err(w)?;
                }
                let flag = if reply.degraded { " (offline)" } else { "" };
                writeln!(o, "mentor{flag}> {}", reply.text).map_err(w)?;
            }
            Err(SessionError::NotActive { .. }) => {
                writeln!(o, "(session is no longer active)").map_err(w)?;
                break;
            }
            Err(e) => writeln!(o, "error: {e}").map_err(w)?,
        }
        o.flush().map_err(w)?;
    }

    let s = svc.get(&session.id)?;
    if let Some(path) = out {
        write_log(path, &svc.events(&s.id, 0)?)
            .map_err(|e| CliError::Environment(format!("{}: {e}", path.display())))?;
    }
    writeln!(
        o,
        "session {}: {} round(s), stage {} ({}), status {}",
        s.id,
        s.decisions.len(),
        s.stage,
        svc.kb().stage(s.stage).name,
        s.status.as_str()
    )
    .map_err(w)?;
    Ok(())
}

/// Expand directories to their `*.<ext>` files, sorted; files pass through.
fn expand(paths: &[PathBuf], ext: &str) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == ext))
                .collect();
            found.sort();
            out.extend(found);
        } else if p.is_file() {
            out.push(p.clone());
        } else {
            return Err(CliError::Input(format!(
                "{}: no such file or directory",
                p.display()
            )));
        }
    }
    Ok(out)
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    match path {
        Some(p) => std::fs::File::create(p)
            .map(|f| Box::new(io::BufWriter::new(f)) as Box<dyn Write>)
            .map_err(|e| CliError::Environment(format!("{}: {e}", p.display()))),
        None => Ok(Box::new(io::stdout())),
    }
}

fn simulate(
    kb: Arc<KnowledgeBase>,
    prompts: Arc<PromptSet>,
    personas: &[PathBuf],
    script: Option<&Path>,
    seed: u64,
    out: Option<&Path>,
    log_dir: Option<&Path>,
) -> CliResult {
    let files = expand(personas, "json")?;
    if files.is_empty() {
        return Err(CliError::Input("no persona files found".into()));
    }
    let personas = files
        .iter()
        .map(|f| PersonaScript::from_path(f).map_err(|e| CliError::Input(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    let shared = script
        .map(|p| ScriptBundle::from_path(p).map_err(|e| CliError::Input(e.to_string())))
        .transpose()?;
    if let Some(dir) = log_dir {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Environment(format!("{}: {e}", dir.display())))?;
    }

    let mut rows: Vec<EpisodeSummary> = Vec::new();
    let mut failures = 0;
    for (i, persona) in personas.iter().enumerate() {
        let mut persona = persona.clone();
        if let Some(bundle) = &shared {
            persona.script = Some(bundle.clone());
        }
        let result = EpisodeBackends::from_persona(&persona).and_then(|b| {
            run_episode(
                &persona,
                kb.clone(),
                prompts.clone(),
                b,
                seed.wrapping_add(i as u64),
            )
        });
        match result {
            Ok(r) => {
                if let Some(dir) = log_dir {
                    let path = dir.join(format!("{}.jsonl", r.session.id));
                    write_log(&path, &r.events)
                        .map_err(|e| CliError::Environment(format!("{}: {e}", path.display())))?;
                }
                rows.push(r.summary());
            }
            Err(e) => {
                failures += 1;
                eprintln!("episode {} ({}) failed: {e}", i + 1, persona.name);
            }
        }
    }
    export_csv(&rows, open_out(out)?).map_err(|e| CliError::Environment(e.to_string()))?;

    let n = rows.len().max(1) as f64;
    eprintln!(
        "episodes: {} ok, {} failed; mean state_accuracy {:.3}; mean mapping_compliance {:.3}",
        rows.len(),
        failures,
        rows.iter().map(|r| r.state_accuracy).sum::<f64>() / n,
        rows.iter().map(|r| r.mapping_compliance).sum::<f64>() / n,
    );
    if failures > 0 {
        return Err(CliError::Validation(format!(
            "{failures} episode(s) failed"
        )));
    }
    Ok(())
}

fn analyze(
    kb: &KnowledgeBase,
    logs: &[PathBuf],
    out: Option<&Path>,
    turns_out: Option<&Path>,
) -> CliResult {
    let files = expand(logs, "jsonl")?;
    if files.is_empty() {
        return Err(CliError::Input("no event logs found".into()));
    }
    let rules = CodingRules::bundled();
    let mut reports: Vec<EngagementReport> = Vec::new();
    let mut coded = Vec::new();
    for f in &files {
        let events = read_log(f).map_err(|e| with_path(f, e))?;
        let session = replay(&events).map_err(|e| with_path(f, e))?;
        reports.push(compute_engagement(&session));
        if turns_out.is_some() {
            coded.extend(
                code_session(&events, &Coder::Rules(&rules))
                    .map_err(|e| CliError::Validation(e.to_string()))?,
            );
        }
    }

    let mut states = std::collections::BTreeMap::new();
    let mut strategies = std::collections::BTreeMap::new();
    for r in &reports {
        for (k, v) in &r.state_freq {
            *states.entry(*k).or_insert(0) += v;
        }
        for (k, v) in &r.strategy_freq {
            *strategies.entry(*k).or_insert(0) += v;
        }
    }
    let decisions: u32 = reports.iter().map(|r| r.decisions_counted()).sum();
    let stage_starts = decisions - states.values().sum::<u32>();

    let mut o = io::stdout().lock();
    let w = |e: io::Error| CliError::Environment(e.to_string());
    if let Some(path) = out {
        export_csv(&reports, open_out(Some(path))?)
            .map_err(|e| CliError::Environment(e.to_string()))?;
    } else {
        export_csv(&reports, &mut o).map_err(|e| CliError::Environment(e.to_string()))?;
        writeln!(o).map_err(w)?;
    }
    if let Some(path) = turns_out {
        export_csv(&coded, open_out(Some(path))?)
            .map_err(|e| CliError::Environment(e.to_string()))?;
    }
    let state_name = |k: u8| {
        StateId::listed(k)
            .and_then(|s| kb.state(s))
            .map(|s| s.name.clone())
            .unwrap_or_default()
    };
    let strategy_name = |k: u8| {
        StrategyId::new(k)
            .map(|s| kb.strategy(s).name.clone())
            .unwrap_or_default()
    };
    write!(
        o,
        "{}",
        histogram("Student states (focus)", &states, state_name)
    )
    .map_err(w)?;
    writeln!(o, "stage-start rounds {stage_starts}").map_err(w)?;
    writeln!(o).map_err(w)?;
    write!(
        o,
        "{}",
        histogram("Guidance strategies", &strategies, strategy_name)
    )
    .map_err(w)?;
    writeln!(o, "decisions {decisions} in {} session(s)", reports.len()).map_err(w)?;
    Ok(())
}

fn with_path(path: &Path, e: SessionError) -> CliError {
    let err = CliError::from(e);
    let msg = format!("{}: {}", path.display(), err.message());
    match err {
        CliError::Validation(_) => CliError::Validation(msg),
        CliError::Input(_) => CliError::Input(msg),
        CliError::Environment(_) => CliError::Input(msg),
    }
}

fn replay_log(path: &Path, json: bool) -> CliResult {
    if !path.is_file() {
        return Err(CliError::Input(format!("{}: no such file", path.display())));
    }
    let events = read_log(path).map_err(|e| with_path(path, e))?;
    let session = replay(&events).map_err(|e| with_path(path, e))?;
    let mut o = io::stdout().lock();
    let w = |e: io::Error| CliError::Environment(e.to_string());
    if json {
        serde_json::to_writer_pretty(&mut o, &session)
            .map_err(|e| CliError::Environment(e.to_string()))?;
        writeln!(o).map_err(w)?;
        return Ok(());
    }
    writeln!(o, "session {} ({})", session.id, session.task_topic).map_err(w)?;
    writeln!(
        o,
        "status {}, stage {}, {} event(s) verified",
        session.status.as_str(),
        session.stage,
        events.len()
    )
    .map_err(w)?;
    let stages: Vec<String> = session
        .decisions
        .iter()
        .map(|d| d.stage_after.to_string())
        .collect();
    writeln!(o, "stages {}", stages.join(" ")).map_err(w)?;
    for t in &session.transcript {
        let who = match t.author {
            mentigo::controller::Author::Student => "student",
            mentigo::controller::Author::Mentor => "mentor",
            mentigo::controller::Author::SystemNudge => "nudge",
        };
        writeln!(o, "[{}] {who}: {}", t.timestamp.format("%H:%M:%S"), t.text).map_err(w)?;
    }
    if session.report.is_some() {
        writeln!(o, "report submitted").map_err(w)?;
    }
    Ok(())
}

//! Command-line front end. Exit codes: 0 success, 1 configuration error,
//! 2 input error, 3 backend error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;
use thiserror::Error;
use tracing::info;

use crate::config::{BackendChoice, ConfigError, RunConfig};
use crate::corpus::{self, CorpusError, KindSelection, PoolSource, ReasoningKind};
use crate::eval::{self, EvalContext, EvalError, ReportSet, Strategy};
use crate::extract::{embed_facts, ExtractError};
use crate::gateway::{FixtureMode, Gateway, GatewayError};
use crate::model::{history_stats, read_history, ConversationHistory, Fact, ModelError};
use crate::retrieve::{answer, brute_force_retrieve, retrieve, Granularity, RetrieveError};
use crate::tree::{build_tree_for_history, BuildError, MemoryTree, TreeError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("backend error: {0}")]
    Backend(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Input(_) => 2,
            CliError::Backend(_) => 3,
        }
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::InvalidProfile(_) | GatewayError::UnboundRole(_) | GatewayError::WrongKind { .. } => {
                CliError::Config(e.to_string())
            }
            GatewayError::EmptyInput | GatewayError::TemplateVarMissing(_) => CliError::Input(e.to_string()),
            _ => CliError::Backend(e.to_string()),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Gateway(g) => g.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<TreeError> for CliError {
    fn from(e: TreeError) -> Self {
        match e {
            TreeError::Gateway(g) => g.into(),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<ExtractError> for CliError {
    fn from(e: ExtractError) -> Self {
        match e {
            ExtractError::Gateway(g) => g.into(),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<BuildError> for CliError {
    fn from(e: BuildError) -> Self {
        match e {
            BuildError::Extract(e) => e.into(),
            BuildError::Tree(e) => e.into(),
        }
    }
}

impl From<RetrieveError> for CliError {
    fn from(e: RetrieveError) -> Self {
        match e {
            RetrieveError::Gateway(g) => g.into(),
            RetrieveError::InvalidConfig(m) => CliError::Config(m),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Gateway(g) => g.into(),
            CorpusError::InvalidConfig(m) => CliError::Config(m),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Gateway(g) => g.into(),
            EvalError::Retrieve(r) => r.into(),
            EvalError::UnknownStrategy(_) => CliError::Config(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BackendArg {
    Mock,
    Http,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GranularityArg {
    Summaries,
    Facts,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KindArg {
    Opposed,
    Supportive,
}

#[derive(Debug, Parser)]
#[command(name = "tacitree", version, about = "Hierarchical conversational memory: build, query, generate, evaluate")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured backend.
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendArg>,
    /// Fixture file: replayed when it exists, otherwise recorded.
    #[arg(long, global = true)]
    fixtures: Option<PathBuf>,
    /// Record into the fixture file even when it exists (new responses are added).
    #[arg(long, global = true)]
    record_fixtures: bool,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Repeat for more log output on stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Extract facts from a history and build its memory tree.
    Build {
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Retrieve context for a query from a saved tree.
    Retrieve {
        #[arg(long)]
        tree: Option<PathBuf>,
        #[arg(long)]
        query: String,
        #[arg(long, value_enum)]
        granularity: Option<GranularityArg>,
        /// Also run the exhaustive per-fact judge and report set agreement.
        #[arg(long)]
        oracle: bool,
    },
    /// Retrieve, then answer with the framework model.
    Answer {
        #[arg(long)]
        tree: Option<PathBuf>,
        #[arg(long)]
        query: String,
        #[arg(long, value_enum)]
        granularity: Option<GranularityArg>,
    },
    /// Generate evaluation examples from persona descriptions.
    Gen {
        /// One persona per line (plain text, a JSON string or {"persona": ...}).
        #[arg(long)]
        personas: PathBuf,
        /// Directory of *.jsonl pool sources; a synthetic pool when omitted.
        #[arg(long)]
        pool: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        examples: usize,
        #[arg(long)]
        kind: Option<KindSelection>,
        #[arg(long)]
        traits_per_example: Option<usize>,
        /// Also write every example's review items into one file.
        #[arg(long)]
        review_queue: Option<PathBuf>,
    },
    /// Score strategies on generated tasks.
    Eval {
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long)]
        tasks: Option<PathBuf>,
        /// Saved tree; built in memory when omitted.
        #[arg(long)]
        tree: Option<PathBuf>,
        #[arg(long, default_value = "tacitree_summary,tacitree_facts,flat_topk,brute_force,full_context")]
        strategies: String,
        /// Output prefix: writes PREFIX.json and PREFIX.csv.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        fact_level_f1: bool,
        #[arg(long, value_enum)]
        kind: Option<KindArg>,
    },
    /// Implicitness of every task question.
    ScoreImplicitness {
        #[arg(long)]
        tasks: Option<PathBuf>,
        #[arg(long)]
        history: Option<PathBuf>,
    },
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    // A second init (tests calling in-process) is harmless.
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    init_logging(cli.verbose);
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    match cli.backend {
        Some(BackendArg::Mock) => cfg.backend = BackendChoice::Mock,
        Some(BackendArg::Http) => cfg.backend = BackendChoice::Http,
        None => {}
    }
    if cli.fixtures.is_some() {
        cfg.fixtures = cli.fixtures.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn open_gateway(cfg: &RunConfig, force_record: bool) -> Result<Gateway, CliError> {
    let gw = cfg.gateway()?;
    Ok(match &cfg.fixtures {
        Some(path) => {
            let mode = if path.exists() && !force_record { FixtureMode::Replay } else { FixtureMode::Record };
            info!(path = %path.display(), ?mode, "fixtures attached");
            gw.with_fixtures(path, mode)?
        }
        None => gw,
    })
}

fn need(arg: Option<PathBuf>, fallback: &Option<PathBuf>, what: &str) -> Result<PathBuf, CliError> {
    arg.or_else(|| fallback.clone()).ok_or_else(|| CliError::Input(format!("missing {what} path")))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json value serializes"));
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = load_config(&cli)?;
    let gw = open_gateway(&cfg, cli.record_fixtures)?;
    let result = dispatch(cli.command, &cfg, &gw);
    // Keep whatever was recorded, even when the command failed part way.
    gw.save_fixtures()?;
    result
}

fn dispatch(command: Command, cfg: &RunConfig, gw: &Gateway) -> Result<(), CliError> {
    match command {
        Command::Build { history, out } => {
            let history = read_history(&need(history, &cfg.paths.history, "history")?)?;
            let out = need(out, &cfg.paths.tree, "tree output")?;
            let tree = build_tree_for_history(gw, &history, &cfg.build)?;
            tree.save(&out)?;
            let stats = history_stats(&history, gw.tokenizer());
            print_json(&json!({
                "tree_id": tree.tree_id,
                "facts": tree.fact_store.len(),
                "level_sizes": tree.level_sizes(),
                "nodes": tree.node_count(),
                "history_sessions": stats.session_count,
                "history_tokens": stats.total_tokens,
                "fact_tokens": tree.total_fact_tokens(),
            }));
            Ok(())
        }
        Command::Retrieve { tree, query, granularity, oracle } => {
            let tree = MemoryTree::read(&need(tree, &cfg.paths.tree, "tree")?)?;
            let rcfg = retrieval_config(cfg, granularity);
            let r = retrieve(gw, &tree, &query, &rcfg)?;
            let mut out = json!({
                "query": query,
                "selected_per_level": r.selected_per_level,
                "used_fallback": r.used_fallback,
                "fact_ids": r.fact_ids(),
                "session_ids": r.session_ids(),
                "retrieved_tokens": r.retrieved_tokens,
                "judge_calls": r.judge_calls,
                "context": r.context(),
            });
            if oracle {
                let facts = embedded_facts(gw, &tree)?;
                let bf = brute_force_retrieve(gw, &facts, &query, &rcfg)?;
                let bf_ids = bf.fact_ids();
                let tree_ids = r.fact_ids();
                out["oracle"] = json!({
                    "fact_ids": bf_ids,
                    "judge_calls": bf.judge_calls,
                    "equal": bf_ids == tree_ids,
                    "superset": bf_ids.is_subset(&tree_ids),
                });
            }
            print_json(&out);
            Ok(())
        }
        Command::Answer { tree, query, granularity } => {
            let tree = MemoryTree::read(&need(tree, &cfg.paths.tree, "tree")?)?;
            let r = retrieve(gw, &tree, &query, &retrieval_config(cfg, granularity))?;
            let reply = answer(gw, &query, &r.context())?;
            print_json(&json!({
                "query": query,
                "answer": reply,
                "session_ids": r.session_ids(),
                "retrieved_tokens": r.retrieved_tokens,
            }));
            Ok(())
        }
        Command::Gen { personas, pool, out_dir, examples, kind, traits_per_example, review_queue } => {
            let personas = read_personas(&personas)?;
            let pool_dir = pool.or_else(|| cfg.paths.pool.clone());
            let pool = match &pool_dir {
                Some(dir) => corpus::load_pool(dir)?,
                None => corpus::synthetic_pool(3, 120, cfg.seed),
            };
            let mut ecfg = cfg.corpus.clone();
            if let Some(k) = kind {
                ecfg.kind = k;
            }
            if let Some(t) = traits_per_example {
                ecfg.traits_per_example = t;
            }
            ecfg.validate()?;
            let mut snapshot = cfg.snapshot();
            snapshot["corpus"] = serde_json::to_value(&ecfg).expect("config serializes");
            gen_examples(gw, &personas, &pool, &ecfg, examples, &out_dir, review_queue.as_deref(), snapshot)
        }
        Command::Eval { history, tasks, tree, strategies, out, fact_level_f1, kind } => {
            let history = read_history(&need(history, &cfg.paths.history, "history")?)?;
            let tasks = corpus::parse_tasks(&read_text(&need(tasks, &cfg.paths.tasks, "tasks")?)?)?;
            let strategies = Strategy::parse_list(&strategies)?;
            let out = need(out, &cfg.paths.report, "report output")?;
            let tree = match tree.or_else(|| cfg.paths.tree.clone()) {
                Some(p) => MemoryTree::read(&p)?,
                None => build_tree_for_history(gw, &history, &cfg.build)?,
            };
            let facts = embedded_facts(gw, &tree)?;
            let mut ecfg = cfg.eval.clone();
            ecfg.fact_level_f1 |= fact_level_f1;
            if let Some(k) = kind {
                ecfg.only_kind = Some(match k {
                    KindArg::Opposed => ReasoningKind::Opposed,
                    KindArg::Supportive => ReasoningKind::Supportive,
                });
            }
            ecfg.retrieval = cfg.retrieval.clone();
            let run_id = format!("{}-seed{}", history.history_id, cfg.seed);
            let ctx = EvalContext { history: &history, facts: &facts, tree: Some(&tree) };
            let mut reports = Vec::new();
            for s in strategies {
                let mut report = eval::run_eval(gw, &ctx, &tasks, s, &ecfg, &run_id)?;
                report.config = json!({ "run": cfg.snapshot(), "eval": ecfg });
                info!(strategy = %s, accuracy = report.aggregates.accuracy, "strategy scored");
                reports.push(report);
            }
            let set = ReportSet::new(run_id, reports);
            write_file(&out.with_extension("json"), set.to_json())?;
            write_file(&out.with_extension("csv"), set.to_csv())?;
            let summary: Vec<_> = set
                .reports
                .iter()
                .map(|r| json!({"strategy": r.strategy.name(), "aggregates": r.aggregates}))
                .collect();
            print_json(&json!(summary));
            Ok(())
        }
        Command::ScoreImplicitness { tasks, history } => {
            let tasks = corpus::parse_tasks(&read_text(&need(tasks, &cfg.paths.tasks, "tasks")?)?)?;
            let history = match history.or_else(|| cfg.paths.history.clone()) {
                Some(p) => Some(read_history(&p)?),
                None => None,
            };
            let mut rows = Vec::new();
            let mut scores = Vec::new();
            for t in &tasks {
                let score = match eval::implicitness_target(t, history.as_ref()) {
                    Some(target) => Some(eval::implicitness_score(gw, &t.question, &target)?),
                    None => None,
                };
                scores.extend(score);
                rows.push(json!({"task_id": t.task_id, "kind": t.kind, "score": score}));
            }
            print_json(&json!({"tasks": rows, "stats": eval::ImplicitnessStats::from_scores(&scores)}));
            Ok(())
        }
    }
}

fn retrieval_config(cfg: &RunConfig, g: Option<GranularityArg>) -> crate::retrieve::RetrievalConfig {
    let mut r = cfg.retrieval.clone();
    match g {
        Some(GranularityArg::Summaries) => r.answer_granularity = Granularity::Summaries,
        Some(GranularityArg::Facts) => r.answer_granularity = Granularity::Facts,
        None => {}
    }
    r
}

/// The tree keeps facts unembedded; re-embed them for the flat baselines.
pub fn embedded_facts(gw: &Gateway, tree: &MemoryTree) -> Result<Vec<Fact>, CliError> {
    let mut facts: Vec<Fact> = tree.fact_store.values().cloned().collect();
    embed_facts(gw, &mut facts)?;
    Ok(facts)
}

/// One persona per non-empty line.
pub fn parse_personas(raw: &str) -> Result<Vec<String>, CliError> {
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = || CliError::Input(format!("persona line {} is malformed", i + 1));
        let text = if line.starts_with('{') {
            let v: serde_json::Value = serde_json::from_str(line).map_err(|_| bad())?;
            ["persona", "text", "description"]
                .iter()
                .find_map(|k| v.get(*k).and_then(|s| s.as_str()).map(str::to_string))
                .ok_or_else(bad)?
        } else if line.starts_with('"') {
            serde_json::from_str::<String>(line).map_err(|_| bad())?
        } else {
            line.to_string()
        };
        out.push(text);
    }
    if out.is_empty() {
        return Err(CliError::Input("persona file is empty".into()));
    }
    Ok(out)
}

fn read_personas(path: &Path) -> Result<Vec<String>, CliError> {
    parse_personas(&read_text(path)?)
}

#[allow(clippy::too_many_arguments)]
fn gen_examples(
    gw: &Gateway,
    personas: &[String],
    pool: &[PoolSource],
    ecfg: &corpus::ExampleConfig,
    count: usize,
    out_dir: &Path,
    review_queue: Option<&Path>,
    snapshot: serde_json::Value,
) -> Result<(), CliError> {
    let mut all_review = Vec::new();
    let mut written = Vec::new();
    for idx in 0..count {
        let ex = corpus::generate_example(gw, personas, pool, ecfg, idx)?;
        let dir = out_dir.join(&ex.history.history_id);
        corpus::write_example(&dir, &ex, Some(snapshot.clone()))?;
        info!(dir = %dir.display(), sessions = ex.history.sessions.len(), tasks = ex.tasks.len(), "example written");
        written.push(json!({
            "history_id": ex.history.history_id,
            "dir": dir.display().to_string(),
            "sessions": ex.history.sessions.len(),
            "tasks": ex.tasks.len(),
            "review_items": ex.review.len(),
        }));
        all_review.extend(ex.review.into_iter().map(|r| json!({"history_id": ex.history.history_id, "item": r})));
    }
    if let Some(path) = review_queue {
        let body = serde_json::to_string_pretty(&json!({"config": snapshot, "items": all_review})).expect("serializes");
        write_file(path, body + "\n")?;
    }
    print_json(&json!(written));
    Ok(())
}

/// Loads a history file or directory (convenience for bindings).
pub fn load_history(path: &Path) -> Result<ConversationHistory, CliError> {
    Ok(read_history(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn persona_line_formats() {
        let raw = "plain text persona\n\n\"quoted one\"\n{\"persona\": \"object one\"}\n";
        assert_eq!(parse_personas(raw).unwrap(), ["plain text persona", "quoted one", "object one"]);
        assert_eq!(parse_personas("\n").unwrap_err().exit_code(), 2);
        assert_eq!(parse_personas("{\"x\":1}").unwrap_err().exit_code(), 2);
    }

    #[test]
    fn usage_errors_are_config_errors() {
        assert_eq!(main_with_args(["tacitree", "--bogus"]), 1);
        assert_eq!(main_with_args(["tacitree", "--help"]), 0);
    }

    #[test]
    fn missing_inputs_exit_2() {
        assert_eq!(main_with_args(["tacitree", "build"]), 2);
        assert_eq!(main_with_args(["tacitree", "build", "--history", "/nonexistent/h.jsonl", "--out", "/tmp/x"]), 2);
    }
}

//! `hyperrag` command-line surface.
//!
//! Exit status: 0 on success, 1 on a fatal error, 2 on a usage error.

pub mod server;

use std::ffi::OsString;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use hyperrag_core::engine::{Engine, EngineConfig};
use hyperrag_core::eval::{load_queries, run_eval, write_report, EvalOptions, ScoreTarget};
use hyperrag_core::instance::FieldSchema;
use hyperrag_core::pipeline::PipelineMode;
use hyperrag_core::store::{load_index, manifest_digest, save_index, IndexBundle};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FATAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "hyperrag", version, about = "Two-layer hypergraph retrieval for misconception feedback")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build both hypergraph layers and save an index.
    Build(BuildArgs),
    /// Answer one query against a saved index.
    Query(QueryArgs),
    /// Evaluate a query set across modes.
    Eval(EvalArgs),
    /// Serve queries over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Directory of reference texts (.txt, .md).
    #[arg(long)]
    pub concepts: PathBuf,
    /// JSON Lines file of case records.
    #[arg(long)]
    pub cases: PathBuf,
    /// Field schema JSON; overrides `schema_path` from the config.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Also write the build report as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long, default_value = "full")]
    pub mode: PipelineMode,
    #[arg(short = 'q', long = "query")]
    pub query: String,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: Option<u64>,
    /// Print retrieved ids and stage prompts to stderr.
    #[arg(long)]
    pub show_provenance: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    /// Comma-separated modes.
    #[arg(long, value_delimiter = ',', default_value = "full")]
    pub modes: Vec<PipelineMode>,
    #[arg(long)]
    pub out: PathBuf,
    /// Score the final answer or the retrieved context.
    #[arg(long, value_enum, default_value = "final")]
    pub score_target: TargetArg,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum TargetArg {
    Final,
    Context,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn load_config(path: Option<&Path>) -> anyhow::Result<EngineConfig> {
    match path {
        Some(p) => Ok(EngineConfig::load(p)?),
        None => {
            let cfg = EngineConfig::default();
            cfg.validate()?;
            Ok(cfg)
        }
    }
}

fn load_bundle(engine: &Engine, dir: &Path) -> anyhow::Result<IndexBundle> {
    let bundle = load_index(dir).with_context(|| format!("loading index {}", dir.display()))?;
    if let Some(w) = bundle.manifest.compatibility_warning(&engine.config.index_hash()) {
        log::warn!("{w}");
    }
    Ok(bundle)
}

fn build(args: &BuildArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let config = load_config(args.config.as_deref())?;
    let schema = match &args.schema {
        Some(p) => FieldSchema::load(p)?,
        None => config.schema()?,
    };
    let engine = Engine::new(config)?;
    let (bundle, summary) = engine.build(&args.concepts, &args.cases, &schema)?;
    for w in &summary.warnings {
        log::warn!("{w}");
    }
    for s in &summary.concept.skipped_chunks {
        log::warn!("skipped chunk {}: {}", s.chunk_id, s.reason);
    }
    let digest = save_index(&bundle, &args.out)?;
    let c = &summary.concept;
    writeln!(
        out,
        "concept layer: {} entities, {} low-order edges, {} high-order edges ({}/{} chunks, {} skipped)",
        c.entities,
        c.low_edges,
        c.high_edges,
        c.chunks_processed,
        c.chunks_total,
        c.skipped_chunks.len()
    )?;
    writeln!(
        out,
        "instance layer: {} entities, {} cases ({} lines rejected)",
        summary.instance_entities,
        summary.instance_edges,
        summary.cases.errors.len()
    )?;
    writeln!(out, "flat chunks: {}", summary.flat_chunks)?;
    writeln!(out, "index: {} (manifest sha256 {digest})", args.out.display())?;
    if let Some(p) = &args.report {
        std::fs::write(p, serde_json::to_string_pretty(&summary)? + "\n")
            .with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn query(args: &QueryArgs, out: &mut dyn Write, side: &mut dyn Write) -> anyhow::Result<()> {
    let config = load_config(args.config.as_deref())?;
    let engine = Engine::new(config)?;
    let bundle = load_bundle(&engine, &args.index)?;
    let result = engine
        .pipeline()
        .run(&args.query, args.mode, bundle.graphs(), args.k.map(|k| k as usize))?;
    writeln!(out, "{}", result.final_answer.trim_end())?;
    if args.show_provenance {
        writeln!(side, "provenance ({}):", result.mode)?;
        for id in &result.provenance {
            writeln!(side, "  {id}")?;
        }
        for p in &result.prompts {
            writeln!(side, "--- {} prompt ---\n{}", p.stage, p.prompt.trim_end())?;
        }
    }
    Ok(())
}

fn eval(args: &EvalArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let config = load_config(args.config.as_deref())?;
    let engine = Engine::new(config)?;
    let bundle = load_bundle(&engine, &args.index)?;
    let golds = load_queries(&args.queries)?;
    let judge_provider = engine.judge_provider()?;
    let judge = engine.judge(&*judge_provider);
    let options = EvalOptions {
        score_target: match args.score_target {
            TargetArg::Final => ScoreTarget::FinalAnswer,
            TargetArg::Context => ScoreTarget::RetrievedContext,
        },
        concurrency: engine.config.eval_concurrency,
        k: args.k.map(|k| k as usize),
        config: serde_json::to_value(&engine.config)?,
    };
    let report = run_eval(
        &golds,
        &args.modes,
        &engine.pipeline(),
        bundle.graphs(),
        &judge,
        &*engine.embedder,
        &options,
    );
    for row in report.rows.iter().filter(|r| r.failed()) {
        log::warn!("{} [{}] failed: {}", row.query_id, row.mode, row.error.as_deref().unwrap_or(""));
    }
    let (json_path, csv_path) = write_report(&report, &args.out)?;
    let f = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
    writeln!(out, "{:<14} {:>5} {:>6} {:>8} {:>8} {:>8}", "mode", "rows", "failed", "cosine", "f1", "overall")?;
    for a in &report.aggregates {
        writeln!(
            out,
            "{:<14} {:>5} {:>6} {:>8} {:>8} {:>8}",
            a.mode.as_str(),
            a.rows,
            a.failed_count,
            f(a.cosine),
            f(a.f1),
            f(a.overall)
        )?;
    }
    writeln!(out, "wrote {} and {}", json_path.display(), csv_path.display())?;
    Ok(())
}

fn serve(args: &ServeArgs) -> anyhow::Result<()> {
    let config = load_config(args.config.as_deref())?;
    let engine = Engine::new(config)?;
    let bundle = load_bundle(&engine, &args.index)?;
    let digest = manifest_digest(&args.index)?;
    let state = Arc::new(server::ServerState {
        engine,
        bundle,
        manifest_digest: digest,
    });
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(server::serve(state, SocketAddr::new(args.host, args.port)))?;
    Ok(())
}

/// Parses `argv` and runs the command, returning the exit status.
pub fn run<I, T>(argv: I, out: &mut dyn Write, side: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            let _ = if code == EXIT_OK {
                write!(out, "{rendered}")
            } else {
                write!(side, "{rendered}")
            };
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();

    let result = match &cli.command {
        Command::Build(a) => build(a, out),
        Command::Query(a) => query(a, out, side),
        Command::Eval(a) => eval(a, out),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(side, "error: {e:#}");
            EXIT_FATAL
        }
    }
}

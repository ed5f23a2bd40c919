use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nbrag_core::config::{CompetitionConfig, EngineConfig};
use nbrag_core::generation::{FinishReason, Turn};
use nbrag_core::pipeline::{ingest_competition, read_metadata, IngestReport};
use nbrag_core::retrieval::RankingMode;
use nbrag_core::{Real, Source};
use nbrag_server::engine::{index_competition, ConditionMode, Engine};
use nbrag_server::{router, AppState, SessionStore};

#[derive(Parser, Debug)]
#[command(name = "nbrag", version, about = "Chat with a competition's community notebooks")]
struct Cli {
    /// Engine configuration file.
    #[arg(long, global = true, default_value = "nbrag.toml")]
    config: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse notebooks and metadata and print admission counts.
    Ingest {
        #[arg(long)]
        competition: Option<String>,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Ingest, embed and write the vector index.
    Index {
        #[arg(long)]
        competition: Option<String>,
    },
    /// Start the HTTP service.
    Serve {
        /// Overrides `server.bind`.
        #[arg(long)]
        bind: Option<String>,
    },
    /// One-shot retrieve + generate against a persisted index.
    Query(QueryArgs),
}

#[derive(Args, Debug)]
struct QueryArgs {
    question: String,
    #[arg(long)]
    competition: Option<String>,
    /// Ranking mode (relevance|votes|views) or condition (community|rag_hidden|plain).
    #[arg(long)]
    mode: Option<String>,
    #[arg(long, value_parser = parse_rank)]
    rank: Option<RankingMode>,
    #[arg(long, value_parser = parse_condition)]
    condition: Option<ConditionMode>,
    /// Number of sources (1..=10).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    fetch_k: Option<usize>,
}

fn parse_rank(s: &str) -> Result<RankingMode, String> {
    s.parse()
}

fn parse_condition(s: &str) -> Result<ConditionMode, String> {
    s.parse()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("nbrag: {}", diagnostic(&e));
            ExitCode::FAILURE
        }
    }
}

/// The error chain on one line. Library errors often repeat their source in
/// their own message; such repeats are dropped.
fn diagnostic(e: &anyhow::Error) -> String {
    let mut line = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        let msg = msg.split_whitespace().collect::<Vec<_>>().join(" ");
        if line.contains(&msg) {
            continue;
        }
        if !line.is_empty() {
            line.push_str(": ");
        }
        line.push_str(&msg);
    }
    line
}

fn run(cli: Cli) -> Result<()> {
    let cfg = EngineConfig::load(&cli.config).context("config")?;
    match cli.command {
        Command::Ingest { competition, json } => ingest(&cfg, competition.as_deref(), json),
        Command::Index { competition } => index(&cfg, competition.as_deref()),
        Command::Serve { bind } => serve(&cfg, bind),
        Command::Query(args) => query(&cfg, args),
    }
}

fn selected<'a>(cfg: &'a EngineConfig, id: Option<&str>) -> Result<Vec<&'a CompetitionConfig>> {
    match id {
        Some(id) => Ok(vec![cfg
            .competition(id)
            .ok_or_else(|| anyhow!("config: unknown competition `{id}`"))?]),
        None if cfg.competitions.is_empty() => bail!("config: no competitions configured"),
        None => Ok(cfg.competitions.iter().collect()),
    }
}

fn print_report(r: &IngestReport) {
    let failures: Vec<String> = r.parse_failures.iter().map(|(k, v)| format!("{k}={v}")).collect();
    println!("competition: {}", r.competition_id);
    println!("notebook files: {}", r.notebook_files);
    println!("parsed: {}", r.parsed);
    println!("parse failures: {} [{}]", r.parse_failed(), failures.join(", "));
    println!(
        "metadata rows: {} (skipped {}, duplicate ids {})",
        r.metadata_rows, r.metadata_rows_skipped, r.metadata_duplicate_ids
    );
    println!("admitted: {}", r.corpus.admitted);
    println!("rejected (missing metadata): {}", r.corpus.rejected_missing_metadata);
    println!("rejected (other competition): {}", r.corpus.rejected_other_competition);
    println!("rejected (duplicate): {}", r.corpus.rejected_duplicate);
    println!("markdown cells: {}", r.corpus.markdown_cells);
    println!("code cells: {}", r.corpus.code_cells);
    println!("chunks: {}", r.chunks);
}

fn ingest(cfg: &EngineConfig, competition: Option<&str>, json: bool) -> Result<()> {
    let comps = selected(cfg, competition)?;
    let metadata = read_metadata(&cfg.metadata).context("ingest")?;
    let mut reports = Vec::new();
    for comp in comps {
        let ingested = ingest_competition(comp, &metadata).with_context(|| format!("ingest `{}`", comp.id))?;
        reports.push(ingested.report);
    }
    if json {
        println!("{}", serde_json::to_string_pretty(&reports)?);
    } else {
        for (i, r) in reports.iter().enumerate() {
            if i > 0 {
                println!();
            }
            print_report(r);
        }
    }
    Ok(())
}

fn index(cfg: &EngineConfig, competition: Option<&str>) -> Result<()> {
    let comps = selected(cfg, competition)?;
    let metadata = read_metadata(&cfg.metadata).context("index")?;
    let embedder = cfg.embedder.build::<Real>().context("index: embedder")?;
    for comp in comps {
        let (_, manifest, _) = index_competition(cfg, comp, &metadata, embedder.as_ref())
            .with_context(|| format!("index `{}`", comp.id))?;
        println!(
            "{}: {} chunks from {} notebooks (dim {}) -> {}",
            manifest.competition_id,
            manifest.chunk_count,
            manifest.notebook_count,
            manifest.dim,
            comp.index_dir.display()
        );
    }
    Ok(())
}

fn serve(cfg: &EngineConfig, bind: Option<String>) -> Result<()> {
    let engine = Engine::from_config(cfg).context("serve")?;
    let sessions = match &cfg.server.session_store {
        Some(path) => SessionStore::with_file(path, cfg.server.max_session_turns)
            .with_context(|| format!("serve: session store {}", path.display()))?,
        None => SessionStore::in_memory(cfg.server.max_session_turns),
    };
    let mut state = AppState::new(engine, sessions);
    state.sources_first = cfg.server.sources_first;
    let app = router(state, cfg.server.static_dir.clone());
    let bind = bind.unwrap_or_else(|| cfg.server.bind.clone());

    let rt = tokio::runtime::Runtime::new().context("serve: runtime")?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&bind)
            .await
            .with_context(|| format!("serve: bind {bind}"))?;
        log::info!("listening on {}", listener.local_addr()?);
        println!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .context("serve")
    })
}

fn query(cfg: &EngineConfig, args: QueryArgs) -> Result<()> {
    let mut settings = cfg.search.clone();
    let mut condition = ConditionMode::Community;
    if let Some(mode) = &args.mode {
        if let Ok(rank) = mode.parse::<RankingMode>() {
            settings.ranking_mode = rank;
        } else if let Ok(c) = mode.parse::<ConditionMode>() {
            condition = c;
        } else {
            bail!("query: unknown mode `{mode}` (expected relevance|votes|views|community|rag_hidden|plain)");
        }
    }
    if let Some(r) = args.rank {
        settings.ranking_mode = r;
    }
    if let Some(c) = args.condition {
        condition = c;
    }
    if let Some(n) = args.n {
        settings.n_sources = n;
    }
    if let Some(l) = args.lambda {
        settings.mmr_lambda = l;
    }
    if let Some(k) = args.fetch_k {
        settings.fetch_k = k;
    }
    settings.validate().context("query")?;

    let comp = match args.competition.as_deref() {
        Some(id) => id.to_string(),
        None => match cfg.competitions.as_slice() {
            [only] => only.id.clone(),
            _ => bail!("query: --competition is required when several competitions are configured"),
        },
    };
    let engine = Engine::from_config(cfg).context("query")?;
    if !engine.has_competition(&comp) {
        bail!("query: no index for competition `{comp}`; run `nbrag index` first");
    }
    let history: &[Turn] = &[];
    let prepared = engine
        .prepare(&comp, history, &args.question, &settings, condition)
        .context("query")?;

    let stdout = std::io::stdout();
    let result = engine.generate(&prepared, &mut |fragment| {
        let mut out = stdout.lock();
        let _ = out.write_all(fragment.as_bytes());
        let _ = out.flush();
    });
    if !result.text.ends_with('\n') {
        println!();
    }
    if let Some(sources) = prepared.visible_sources() {
        println!();
        print!("{}", source_table(sources));
    }
    if result.finish_reason == FinishReason::Error {
        let e = result.error.map(|e| e.to_string()).unwrap_or_default();
        bail!("query: generation failed: {e}");
    }
    Ok(())
}

fn source_table(sources: &[Source]) -> String {
    let rows: Vec<[String; 5]> = sources
        .iter()
        .map(|s| {
            [
                s.rank_position.to_string(),
                s.meta.title.clone(),
                s.meta.vote_count.to_string(),
                s.meta.view_count.to_string(),
                s.meta.url.clone(),
            ]
        })
        .collect();
    let header = ["rank", "title", "votes", "views", "url"];
    let mut widths = header.map(|h| h.chars().count());
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: [&str; 5]| {
        let mut s = String::new();
        for (i, (cell, w)) in cells.iter().zip(widths).enumerate() {
            let pad = w - cell.chars().count();
            // Right-align numbers, left-align text; no trailing padding.
            match i {
                0 | 2 | 3 => s.push_str(&format!("{}{cell}", " ".repeat(pad))),
                4 => s.push_str(cell),
                _ => s.push_str(&format!("{cell}{}", " ".repeat(pad))),
            }
            if i < 4 {
                s.push_str("  ");
            }
        }
        s.push('\n');
        s
    };
    let mut out = line(header);
    for row in &rows {
        out.push_str(&line([&row[0], &row[1], &row[2], &row[3], &row[4]]));
    }
    out
}

//! `mbd`: run pipeline stages against a store directory.
//!
//! Data goes to stdout (or `--out`), logs to stderr. Exit status is 0 on
//! success, 1 on an operational failure and 2 on a usage error.

use std::collections::BTreeSet;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use chrono::{DateTime, NaiveDate, Utc};
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use mbd_core::aggregation::{export_csv, Granularity};
use mbd_core::annotation::http::{HttpProvider, HttpProviderConfig};
use mbd_core::annotation::mock::{Lexicon, MockProvider};
use mbd_core::annotation::prompt::PromptSet;
use mbd_core::annotation::provider::{ChatProvider, RateLimitPolicy};
use mbd_core::annotation::{run_annotation_batch, Annotator};
use mbd_core::events::{events_in_range, EventParams};
use mbd_core::ingestion::{
    load_adapter_dir, AdapterConfig, Clock, CycleOptions, FixtureSource, HttpSource, IntervalId, PageSource,
};
use mbd_core::pipeline::{ensure_taxonomy, ingest_intervals, recompute_range};
use mbd_core::review::{
    agreement_report, apply_proposal, audit_log_jsonl, create_review_tasks, propose, record_verdict, reject_proposal,
    Overrides, ProposalChange, ReviewWeek, Verdict,
};
use mbd_core::synth::{builtin_lexicon, generate, Preset, SynthConfig};
use mbd_core::{ArticleType, LeanLabel, NodeId, OrdinalScale, Store, ToneLabel};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "mbd", version, about = "News coverage pipeline and dashboard service")]
struct Cli {
    /// Store directory.
    #[arg(long, global = true, env = "MBD_STORE", default_value = "mbd-store")]
    store: PathBuf,

    /// Reference date for default ranges (YYYYMMDD or YYYY-MM-DD).
    #[arg(long, global = true, value_parser = parse_date)]
    as_of: Option<NaiveDate>,

    /// Fixed timestamp for records written by this run (RFC 3339).
    #[arg(long, global = true)]
    now: Option<DateTime<Utc>>,

    /// More log output on stderr; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run ingestion cycles.
    Ingest(IngestArgs),
    /// Label articles that have no current annotation.
    Annotate(AnnotateArgs),
    /// Cluster a day's articles into events, or list stored events
    #[command(subcommand)]
    Events(EventsCmd),
    /// Weekly label review: sampling, verdicts and reports
    #[command(subcommand)]
    Review(ReviewCmd),
    /// Inspect and change the category taxonomy
    #[command(subcommand)]
    Taxonomy(TaxonomyCmd),
    /// Write coverage as CSV.
    Export(ExportArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
    /// Generate synthetic fixture corpora
    #[command(subcommand)]
    Fixture(FixtureCmd),
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["live", "fixtures"]))]
struct IngestArgs {
    /// Interval id such as 2024-08-20T06; repeatable.
    #[arg(long, required_unless_present = "all")]
    interval: Vec<String>,
    /// Every interval found in the fixtures directory.
    #[arg(long, requires = "fixtures", conflicts_with = "interval")]
    all: bool,
    /// Fetch from the publishers' sites.
    #[arg(long)]
    live: bool,
    /// Read recorded pages from this directory.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    /// Adapter TOML directory. Defaults to `<fixtures>/adapters` when it
    /// exists, else the built-in generic adapters.
    #[arg(long)]
    adapters: Option<PathBuf>,
    /// Publishers allowed to fail before the run counts as failed.
    #[arg(long, default_value_t = 0)]
    max_failures: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderKind {
    Mock,
    Http,
}

#[derive(Args)]
struct ProviderArgs {
    #[arg(long, value_enum, default_value = "mock")]
    provider: ProviderKind,
    /// Keyword lexicon for the mock provider.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// TOML endpoint settings for the HTTP provider.
    #[arg(long, required_if_eq("provider", "http"))]
    provider_config: Option<PathBuf>,
    /// Prompt template directory overriding the built-ins.
    #[arg(long)]
    prompts: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    max_rpm: u32,
    #[arg(long, default_value_t = 32)]
    max_in_flight: u32,
}

#[derive(Args)]
struct AnnotateArgs {
    #[command(flatten)]
    provider: ProviderArgs,
    /// Stop after this many articles.
    #[arg(long)]
    limit: Option<usize>,
    /// Relabel articles whose annotation predates the latest taxonomy.
    #[arg(long)]
    backfill: bool,
}

#[derive(Subcommand)]
enum EventsCmd {
    /// Rebuild event windows.
    Recompute {
        #[arg(long, value_parser = parse_date, conflicts_with_all = ["from", "to"], required_unless_present_any = ["from", "to"])]
        date: Option<NaiveDate>,
        #[arg(long, value_parser = parse_date, requires = "to")]
        from: Option<NaiveDate>,
        #[arg(long, value_parser = parse_date, requires = "from")]
        to: Option<NaiveDate>,
        /// Article similarity threshold.
        #[arg(long)]
        tau: Option<f64>,
        #[command(flatten)]
        provider: ProviderArgs,
    },
    /// Print stored events.
    List {
        #[arg(long, value_parser = parse_date)]
        from: Option<NaiveDate>,
        #[arg(long, value_parser = parse_date)]
        to: Option<NaiveDate>,
    },
}

#[derive(Subcommand)]
enum ReviewCmd {
    /// Draw and store review tasks for a week.
    Sample {
        /// ISO week such as 2024-W34.
        #[arg(long)]
        week: ReviewWeek,
        #[arg(long, default_value_t = 50)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// List tasks.
    Tasks {
        #[arg(long)]
        week: Option<ReviewWeek>,
    },
    /// Record a verdict.
    #[command(group = clap::ArgGroup::new("verdict").required(true).multiple(true)
        .args(["approve", "subtopic", "article_type", "tone", "lean"]))]
    Apply {
        #[arg(long)]
        task: String,
        #[arg(long)]
        reviewer: String,
        #[arg(long, conflicts_with_all = ["subtopic", "article_type", "tone", "lean"])]
        approve: bool,
        #[arg(long)]
        subtopic: Option<String>,
        #[arg(long)]
        article_type: Option<ArticleType>,
        #[arg(long, value_parser = parse_scale::<ToneLabel>)]
        tone: Option<ToneLabel>,
        #[arg(long, value_parser = parse_scale::<LeanLabel>)]
        lean: Option<LeanLabel>,
    },
    /// Override rates per label dimension.
    Report {
        #[arg(long, value_parser = parse_date)]
        from: NaiveDate,
        #[arg(long, value_parser = parse_date)]
        to: NaiveDate,
    },
    /// Audit log as JSON lines.
    Audit {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum TaxonomyCmd {
    /// Print the latest taxonomy, or a given version, as JSON
    Show {
        #[arg(long)]
        version: Option<u32>,
    },
    /// Store a change proposal given as JSON, e.g.
    /// {"kind":"add_subtopic","topic_id":"..","id":"..","name":".."}
    Propose {
        #[arg(long)]
        change: String,
        #[arg(long, default_value = "operator")]
        proposer: String,
    },
    /// Apply a pending proposal, creating a new taxonomy version
    Apply {
        #[arg(long)]
        id: String,
    },
    /// Reject a pending proposal
    Reject {
        #[arg(long)]
        id: String,
    },
    /// List proposals and their status
    Proposals,
}

#[derive(Args)]
struct ExportArgs {
    /// Output file; `-` for stdout.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "article")]
    granularity: GranularityArg,
    #[arg(long)]
    node: Option<String>,
    /// Comma-separated publisher ids.
    #[arg(long)]
    publishers: Option<String>,
    #[arg(long)]
    from: Option<String>,
    #[arg(long)]
    to: Option<String>,
    /// Comma-separated article types.
    #[arg(long)]
    article_types: Option<String>,
    #[arg(long)]
    color_by: Option<String>,
    #[arg(long)]
    normalized: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum GranularityArg {
    Article,
    Aggregate,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Built dashboard to serve next to the API.
    #[arg(long)]
    static_dir: Option<PathBuf>,
    /// Bearer token for the review endpoints; they are disabled without one.
    #[arg(long, env = "MBD_REVIEW_TOKEN", hide_env_values = true)]
    review_token: Option<String>,
}

#[derive(Subcommand)]
enum FixtureCmd {
    /// Write a synthetic corpus with planted labels and events.
    Generate {
        #[arg(long, default_value_t = 1000)]
        articles: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "general")]
        preset: PresetArg,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    General,
    ConventionDay,
}

fn parse_date(s: &str) -> Result<NaiveDate, String> {
    NaiveDate::parse_from_str(s, "%Y%m%d")
        .or_else(|_| NaiveDate::parse_from_str(s, "%Y-%m-%d"))
        .map_err(|_| format!("`{s}` is not a date like 20240820"))
}

fn parse_scale<S: OrdinalScale>(s: &str) -> Result<S, String> {
    S::parse_label(s).ok_or_else(|| {
        let labels: Vec<&str> = S::ALL.iter().map(|l| l.label()).collect();
        format!("`{s}` is not one of: {}", labels.join(", "))
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let usage = Cli::command().render_usage();
            let _ = e.print();
            if !e.to_string().contains("Usage:") {
                eprintln!("\n{usage}");
            }
            return ExitCode::from(2);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| level.into()),
        )
        .init();

    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .expect("tokio runtime");
    match rt.block_on(run(cli)) {
        Ok(code) => code,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.downcast_ref::<std::io::Error>()
            .is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
            || c.downcast_ref::<serde_json::Error>()
                .is_some_and(|j| j.io_error_kind() == Some(std::io::ErrorKind::BrokenPipe))
    })
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) if p != Path::new("-") => {
            std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))
        }
        _ => Ok(std::io::stdout().lock().write_all(text.as_bytes())?),
    }
}

fn open_store(path: &Path) -> Result<Store> {
    Store::open(path).with_context(|| format!("opening store {}", path.display()))
}

fn annotator(args: &ProviderArgs) -> Result<Annotator> {
    let provider: Arc<dyn ChatProvider> = match args.provider {
        ProviderKind::Mock => {
            let lexicon = match &args.lexicon {
                Some(p) => Lexicon::load(p).with_context(|| format!("loading lexicon {}", p.display()))?,
                None => builtin_lexicon(),
            };
            Arc::new(MockProvider::new(lexicon))
        }
        ProviderKind::Http => {
            let path = args.provider_config.as_ref().expect("required by clap");
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let config: HttpProviderConfig = toml::from_str(&text).context("parsing provider config")?;
            Arc::new(HttpProvider::new(config)?)
        }
    };
    let prompts = match &args.prompts {
        Some(dir) => PromptSet::load_dir(dir)?,
        None => PromptSet::builtin(),
    };
    let policy = RateLimitPolicy {
        max_requests_per_minute: args.max_rpm,
        max_in_flight: args.max_in_flight,
        ..RateLimitPolicy::default()
    };
    Ok(Annotator::new(provider, policy, prompts)?)
}

/// Interval directory names under `<fixtures>/<publisher>/`.
fn fixture_intervals(root: &Path) -> Result<Vec<IntervalId>> {
    let mut found = BTreeSet::new();
    for publisher in std::fs::read_dir(root).with_context(|| format!("reading {}", root.display()))? {
        let publisher = publisher?.path();
        if !publisher.is_dir() {
            continue;
        }
        for iv in std::fs::read_dir(&publisher)? {
            let name = iv?.file_name();
            if let Ok(id) = IntervalId::parse(&name.to_string_lossy()) {
                found.insert(id);
            }
        }
    }
    Ok(found.into_iter().collect())
}

async fn run(cli: Cli) -> Result<ExitCode> {
    let now = cli.now.unwrap_or_else(Utc::now);
    match cli.command {
        Command::Ingest(args) => ingest(&cli.store, args, cli.now).await,
        Command::Annotate(args) => {
            let store = open_store(&cli.store)?;
            let annotator = annotator(&args.provider)?;
            let taxonomy = ensure_taxonomy(&store)?;
            let snap = store.snapshot();
            let mut pending: Vec<_> = if args.backfill {
                snap.articles()
                    .filter(|a| snap.annotation(&a.id).is_none_or(|x| x.taxonomy_version < taxonomy.version()))
                    .cloned()
                    .collect()
            } else {
                snap.unannotated().cloned().collect()
            };
            if let Some(n) = args.limit {
                pending.truncate(n);
            }
            let report = run_annotation_batch(&store, pending, &annotator, &taxonomy, now).await;
            print_json(&report)?;
            Ok(if report.failed.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Events(EventsCmd::Recompute {
            date,
            from,
            to,
            tau,
            provider,
        }) => {
            let store = open_store(&cli.store)?;
            let annotator = annotator(&provider)?;
            let (from, to) = match date {
                Some(d) => (d, d),
                None => (from.expect("clap"), to.expect("clap")),
            };
            if from > to {
                bail!("--from {from} is after --to {to}");
            }
            let mut params = EventParams::default();
            if let Some(t) = tau {
                params.tau = t;
            }
            print_json(&recompute_range(&store, from, to, &annotator, &params).await?)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Events(EventsCmd::List { from, to }) => {
            let store = open_store(&cli.store)?;
            let to = to.or(cli.as_of).unwrap_or_else(|| Utc::now().date_naive());
            let from = from.unwrap_or(to - chrono::Duration::days(mbd_api::DEFAULT_EVENT_DAYS - 1));
            print_json(&events_in_range(&store.snapshot(), from, to))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Review(cmd) => review(&cli.store, cmd, now),
        Command::Taxonomy(cmd) => taxonomy(&cli.store, cmd),
        Command::Export(args) => {
            let store = open_store(&cli.store)?;
            let filter = export_filter(&args)?;
            let granularity = match args.granularity {
                GranularityArg::Article => Granularity::Article,
                GranularityArg::Aggregate => Granularity::Aggregate,
            };
            let text = export_csv(&store.snapshot(), &filter, granularity)?;
            write_out(Some(&args.out), &text)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Serve(args) => {
            let store = Arc::new(open_store(&cli.store)?);
            ensure_taxonomy(&store)?;
            let config = mbd_api::ApiConfig {
                review_token: args.review_token,
                as_of: cli.as_of,
                fixed_now: cli.now,
                static_dir: args.static_dir,
            };
            mbd_api::serve(args.addr, mbd_api::AppState::new(store, config)).await?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Fixture(FixtureCmd::Generate {
            articles,
            seed,
            preset,
            out,
        }) => {
            let preset = match preset {
                PresetArg::General => Preset::General,
                PresetArg::ConventionDay => Preset::ConventionDay,
            };
            let corpus = generate(&SynthConfig::new(seed, articles), preset);
            corpus.write(&out).with_context(|| format!("writing {}", out.display()))?;
            let truth = corpus.ground_truth();
            print_json(&serde_json::json!({
                "out": out,
                "articles": truth.articles.len(),
                "events": truth.events.len(),
                "intervals": truth.intervals.len(),
            }))?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

async fn ingest(store_path: &Path, args: IngestArgs, now: Option<DateTime<Utc>>) -> Result<ExitCode> {
    let (source, default_adapters): (Box<dyn PageSource>, Option<PathBuf>) = match &args.fixtures {
        Some(dir) => {
            if !dir.is_dir() {
                bail!("fixtures directory {} does not exist", dir.display());
            }
            (Box::new(FixtureSource::new(dir)), Some(dir.join("adapters")))
        }
        None => (Box::new(HttpSource::new()?), None),
    };
    let adapter_dir = args.adapters.clone().or(default_adapters.filter(|d| d.is_dir()));
    let configs = match &adapter_dir {
        Some(d) => load_adapter_dir(d)?,
        None => AdapterConfig::defaults(),
    };
    let intervals = if args.all {
        fixture_intervals(args.fixtures.as_deref().expect("clap"))?
    } else {
        args.interval.iter().map(|s| IntervalId::parse(s)).collect::<Result<_, _>>()?
    };
    let options = CycleOptions {
        // Replays always date collection at the interval start.
        clock: match (args.live, now) {
            (false, _) => Clock::IntervalStart,
            (true, Some(t)) => Clock::Fixed(t),
            (true, None) => Clock::System,
        },
        ..CycleOptions::default()
    };
    let store = open_store(store_path)?;
    ensure_taxonomy(&store)?;
    let reports = ingest_intervals(&configs, source.as_ref(), &intervals, &store, &options).await?;
    print_json(&reports)?;
    let failed = reports.iter().map(|r| r.failed_publishers()).max().unwrap_or(0);
    if failed > args.max_failures {
        eprintln!("ingest: {failed} publisher(s) failed in one interval, tolerance {}", args.max_failures);
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn export_filter(args: &ExportArgs) -> Result<mbd_core::aggregation::CoverageFilter> {
    use mbd_api::params::{coverage_filter, Params, COVERAGE_KEYS};
    let mut q = Vec::new();
    let pairs = [
        ("node", &args.node),
        ("publishers", &args.publishers),
        ("from", &args.from),
        ("to", &args.to),
        ("article_types", &args.article_types),
        ("color_by", &args.color_by),
    ];
    for (k, v) in pairs {
        if let Some(v) = v {
            q.push((k, v.as_str()));
        }
    }
    if args.normalized {
        q.push(("normalized", "true"));
    }
    let raw = q
        .iter()
        .map(|(k, v)| format!("{k}={}", v.replace('&', "%26")))
        .collect::<Vec<_>>()
        .join("&");
    let parsed = Params::parse(Some(&raw), COVERAGE_KEYS).and_then(|p| coverage_filter(&p));
    parsed.map_err(|e| anyhow::anyhow!("{}", e.message))
}

fn review(store_path: &Path, cmd: ReviewCmd, now: DateTime<Utc>) -> Result<ExitCode> {
    let store = open_store(store_path)?;
    match cmd {
        ReviewCmd::Sample { week, size, seed } => print_json(&create_review_tasks(&store, week, size, seed)?)?,
        ReviewCmd::Tasks { week } => {
            let snap = store.snapshot();
            let week = week.map(|w| w.to_string());
            let tasks: Vec<_> = snap
                .review_tasks()
                .filter(|t| week.as_ref().is_none_or(|w| &t.assigned_week == w))
                .map(|t| t.as_ref())
                .collect();
            print_json(&tasks)?;
        }
        ReviewCmd::Apply {
            task,
            reviewer,
            approve,
            subtopic,
            article_type,
            tone,
            lean,
        } => {
            let verdict = if approve {
                Verdict::Approve
            } else {
                Verdict::Override(Overrides {
                    subtopic_id: subtopic.map(NodeId::new),
                    article_type,
                    tone,
                    lean,
                })
            };
            print_json(&record_verdict(&store, &task, &verdict, &reviewer, now)?)?;
        }
        ReviewCmd::Report { from, to } => print_json(&agreement_report(&store.snapshot(), from, to)?)?,
        ReviewCmd::Audit { out } => write_out(out.as_deref(), &audit_log_jsonl(&store.snapshot()))?,
    }
    Ok(ExitCode::SUCCESS)
}

fn taxonomy(store_path: &Path, cmd: TaxonomyCmd) -> Result<ExitCode> {
    let store = open_store(store_path)?;
    match cmd {
        TaxonomyCmd::Show { version } => {
            let latest = ensure_taxonomy(&store)?;
            let snap = store.snapshot();
            let tax = match version {
                None => latest,
                Some(v) => snap.taxonomy(v).cloned().with_context(|| format!("no taxonomy version {v}"))?,
            };
            print_json(&mbd_api::docs::TaxonomyDoc::from(tax.as_ref()))?;
        }
        TaxonomyCmd::Propose { change, proposer } => {
            ensure_taxonomy(&store)?;
            let change: ProposalChange = serde_json::from_str(&change).context("parsing --change")?;
            print_json(&propose(&store, change, &proposer)?)?;
        }
        TaxonomyCmd::Apply { id } => {
            let t = apply_proposal(&store, &id)?;
            print_json(&mbd_api::docs::TaxonomyDoc::from(&t))?;
        }
        TaxonomyCmd::Reject { id } => {
            reject_proposal(&store, &id)?;
            print_json(&serde_json::json!({ "rejected": id }))?;
        }
        TaxonomyCmd::Proposals => {
            let snap = store.snapshot();
            print_json(&snap.proposals().map(|p| p.as_ref()).collect::<Vec<_>>())?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

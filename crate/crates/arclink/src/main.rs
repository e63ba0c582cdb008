//! Command-line front end for the temporal web graph toolkit.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use arclink::analytics::{
    self, build_window_graph, coverage_report, inlink_anchor_timeline, kendall_tau_topk, pagerank,
    top_k_overlap, CostModel, PageRankOptions, Window,
};
use arclink::pipeline::{self, PipelineConfig, PipelineError, StageOutcome};
use arclink::service;
use arclink::store::GraphStore;

#[derive(Parser)]
#[command(
    name = "arclink",
    about = "Build and query a temporal web graph from crawl archives",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArg {
    /// Pipeline configuration file (TOML)
    #[arg(short, long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Filter the crawl indexes into an extraction list and observation log
    Filter(ConfigArg),
    /// Extract time-stamped links from the configured capture source
    Extract(ConfigArg),
    /// Load identities, observations, and links into the graph store
    Load(ConfigArg),
    /// Run filter, extract, and load in sequence
    RunAll(ConfigArg),
    /// Serve the link structure API (/linkQuery)
    Serve {
        #[command(flatten)]
        config: ConfigArg,
        /// Override the configured listen address
        #[arg(long)]
        listen: Option<String>,
    },
    /// Rank URIs by PageRank over a time window
    Rank {
        #[command(flatten)]
        config: ConfigArg,
        /// Calendar month window, YYYYMM; whole graph when omitted
        #[arg(long)]
        window: Option<String>,
        /// Number of rows to print
        #[arg(long, default_value_t = 20)]
        top: usize,
    },
    /// Compare rankings of two time windows: top-k overlap and Kendall's tau
    Compare {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        window_a: String,
        #[arg(long)]
        window_b: String,
        #[arg(short, default_value_t = 10)]
        k: usize,
    },
    /// Print the dated inlink anchor-text timeline of a URI
    Timeline {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        uri: String,
    },
    /// Report how much of the discovered graph was actually captured
    Coverage(ConfigArg),
    /// Estimate filtering / extraction / storage costs for a corpus
    Estimate {
        /// Number of crawl-index records
        #[arg(long)]
        records: f64,
        /// Machines working in parallel
        #[arg(long, default_value_t = 1.0)]
        machines: f64,
        /// Raw corpus size (any unit; storage is reported in the same unit)
        #[arg(long, default_value_t = 0.0)]
        corpus_size: f64,
    },
}

fn open_store(config: &PipelineConfig) -> Result<GraphStore, PipelineError> {
    Ok(GraphStore::open(&config.store_dir())?)
}

fn stage_line(name: &str, outcome: StageOutcome) {
    match outcome {
        StageOutcome::Ran => println!("{name}: done"),
        StageOutcome::Skipped => println!("{name}: up to date, skipped"),
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Filter(args) => {
            let config = PipelineConfig::load(&args.config)?;
            stage_line("filter", pipeline::run_filter(&config)?);
            let report = std::fs::read_to_string(config.run_dir.join("filter_report.txt"))?;
            print!("{report}");
        }
        Command::Extract(args) => {
            let config = PipelineConfig::load(&args.config)?;
            stage_line("extract", pipeline::run_extract(&config)?);
        }
        Command::Load(args) => {
            let config = PipelineConfig::load(&args.config)?;
            stage_line("load", pipeline::run_load(&config)?);
        }
        Command::RunAll(args) => {
            let config = PipelineConfig::load(&args.config)?;
            let [filter, extract, load] = pipeline::run_all(&config)?;
            stage_line("filter", filter);
            stage_line("extract", extract);
            stage_line("load", load);
        }
        Command::Serve { config, listen } => {
            let config = PipelineConfig::load(&config.config)?;
            let addr = listen
                .unwrap_or(config.listen.clone())
                .parse()
                .map_err(|e| PipelineError::Config(format!("bad listen address: {e}")))?;
            let store = Arc::new(open_store(&config)?);
            service::serve_blocking(store, addr)
                .map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        Command::Rank {
            config,
            window,
            top,
        } => {
            let config = PipelineConfig::load(&config.config)?;
            let store = open_store(&config)?;
            let window = Window::parse(window.as_deref()).map_err(to_config)?;
            let graph = build_window_graph(&store, &window).map_err(to_config)?;
            let table = pagerank(&graph, PageRankOptions::default()).map_err(to_config)?;
            println!(
                "{} nodes, {} edges, converged in {} iterations",
                graph.node_count(),
                graph.edge_count(),
                table.iterations
            );
            for (rank, (key, score)) in table.top_k(top).iter().enumerate() {
                println!("{:>4}  {score:.8}  {key}", rank + 1);
            }
        }
        Command::Compare {
            config,
            window_a,
            window_b,
            k,
        } => {
            let config = PipelineConfig::load(&config.config)?;
            let store = open_store(&config)?;
            let rank_of = |w: &str| -> Result<_, PipelineError> {
                let window = Window::parse(Some(w)).map_err(to_config)?;
                let graph = build_window_graph(&store, &window).map_err(to_config)?;
                pagerank(&graph, PageRankOptions::default()).map_err(to_config)
            };
            let a = rank_of(&window_a)?;
            let b = rank_of(&window_b)?;
            println!("top-{k} overlap: {:.3}", top_k_overlap(&a, &b, k));
            match kendall_tau_topk(&a, &b, k) {
                Some(tau) => println!("kendall tau over shared top-{k}: {tau:.4}"),
                None => println!("kendall tau over shared top-{k}: undefined (fewer than 2 shared)"),
            }
        }
        Command::Timeline { config, uri } => {
            let config = PipelineConfig::load(&config.config)?;
            let store = open_store(&config)?;
            for entry in inlink_anchor_timeline(&store, &uri).map_err(to_config)? {
                println!("{}  {:40}  {:?}", entry.date, entry.source_uri, entry.text);
            }
        }
        Command::Coverage(args) => {
            let config = PipelineConfig::load(&args.config)?;
            let store = open_store(&config)?;
            let report = coverage_report(&store).map_err(to_config)?;
            println!("nodes total:    {}", report.total_nodes);
            println!("nodes crawled:  {}", report.crawled_nodes);
            println!("nodes uncrawled: {}", report.uncrawled_nodes);
            println!("edges:          {}", report.edge_count);
            println!("crawled fraction: {:.4}", report.crawled_fraction);
        }
        Command::Estimate {
            records,
            machines,
            corpus_size,
        } => {
            let est = CostModel::default().estimate(records, machines, corpus_size);
            println!(
                "filtering:  {:.0} s ({:.2} h) on {machines} machine(s)",
                est.filtering_secs, est.filtering_hours
            );
            println!("surviving captures: {:.3e}", est.surviving_records);
            println!(
                "extraction: {:.0} h ({:.1} days)",
                est.extraction_hours, est.extraction_days
            );
            if corpus_size > 0.0 {
                println!("graph storage: {:.3} (same unit as --corpus-size)", est.storage_size);
            }
        }
    }
    Ok(())
}

fn to_config(e: analytics::AnalyticsError) -> PipelineError {
    PipelineError::Config(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(PipelineError::Config(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}

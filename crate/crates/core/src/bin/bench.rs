use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rtstream::bench::{
    generate_logs, load_report, report_compare, run_experiment, write_reports, ExperimentConfig, GenerateConfig, DEFAULT_SEED,
};
use rtstream::cardinality::DEFAULT_PRECISION;
use rtstream::daily::Method;
use rtstream::sentiment::{Classifier, RemoteClassifier, RemoteConfig, SentimentConfig};
use rtstream::serve::{load_review_fixture, review_record, ServeConfig, Server};

#[derive(Parser)]
#[command(name = "bench", about = "Daily distinct-IP benchmark and review service")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write synthetic NDJSON log records.
    Generate {
        #[arg(long, default_value_t = 3000)]
        batch_size: u64,
        #[arg(long, default_value_t = 12)]
        batches: u64,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long, default_value_t = 0.5)]
        duplicate_fraction: f64,
        #[arg(long, default_value_t = 1296)]
        record_size: u32,
        #[arg(long, default_value_t = rtstream::bench::DEFAULT_INTERVAL_MS)]
        interval_ms: u64,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the exact vs. estimate experiment grid and write reports.
    Run(RunArgs),
    /// Summarise a report.csv or report.json.
    Compare {
        /// Report file, or a directory containing report.json.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Ingest, stream processing, sentiment workflow and review API.
    Serve(ServeArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Repeatable; defaults to 3000, 5000 and 10000.
    #[arg(long = "batch-size")]
    batch_size: Vec<usize>,
    #[arg(long, default_value_t = 12)]
    batches: u64,
    #[arg(long, default_value_t = rtstream::bench::DEFAULT_INTERVAL_MS)]
    interval_ms: u64,
    /// Repeatable; defaults to both methods.
    #[arg(long)]
    method: Vec<Method>,
    #[arg(long, default_value_t = DEFAULT_PRECISION)]
    precision: u8,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Spread batches over several simulated days.
    #[arg(long)]
    batches_per_day: Option<u64>,
    #[arg(long, default_value = "bench-out")]
    out: PathBuf,
    /// Format of the summary printed to stdout.
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "serve-data")]
    data_dir: PathBuf,
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    interval_ms: u64,
    #[arg(long, default_value_t = DEFAULT_PRECISION)]
    precision: u8,
    #[arg(long, default_value = "127.0.0.1:8080")]
    http: String,
    /// Line-delimited TCP ingest; "off" disables it.
    #[arg(long, default_value = "127.0.0.1:9090")]
    tcp: String,
    #[arg(long, default_value_t = 1.0)]
    sample_rate: f64,
    #[arg(long)]
    sentiment_config: Option<PathBuf>,
    /// Use the chat-completions classifier configured by RTSTREAM_LLM_* variables.
    #[arg(long)]
    remote: bool,
    /// Publish each review of this NDJSON fixture as a comment event at startup.
    #[arg(long)]
    load_fixture: Option<PathBuf>,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(io::stderr)
        .init();
    match dispatch(Cli::parse().cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

type AnyResult<T> = Result<T, Box<dyn std::error::Error>>;

fn dispatch(cmd: Cmd) -> AnyResult<ExitCode> {
    match cmd {
        Cmd::Generate {
            batch_size,
            batches,
            seed,
            duplicate_fraction,
            record_size,
            interval_ms,
            out,
        } => {
            let mut cfg = GenerateConfig::new(batch_size * batches, seed).batch_size(batch_size);
            cfg.duplicate_fraction = duplicate_fraction;
            cfg.record_size = record_size;
            cfg.interval_ms = interval_ms;
            let lines = generate_logs(&cfg)?;
            let mut w: Box<dyn Write> = match out {
                Some(p) => Box::new(BufWriter::new(File::create(p)?)),
                None => Box::new(BufWriter::new(io::stdout().lock())),
            };
            for l in &lines {
                writeln!(w, "{l}")?;
            }
            w.flush()?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Run(a) => run(a),
        Cmd::Compare { out, format } => {
            let path = if out.is_dir() { out.join("report.json") } else { out };
            let rows = load_report(&path)?;
            match report_compare(&rows) {
                Ok(cmp) => {
                    print_comparison(&cmp, format)?;
                    Ok(ExitCode::SUCCESS)
                }
                Err(e) => {
                    eprintln!("{e}");
                    Ok(ExitCode::FAILURE)
                }
            }
        }
        Cmd::Serve(a) => serve(a),
    }
}

fn run(a: RunArgs) -> AnyResult<ExitCode> {
    let mut cfg = ExperimentConfig::default_grid(&a.out);
    if !a.batch_size.is_empty() {
        cfg.batch_sizes = a.batch_size;
    }
    if !a.method.is_empty() {
        cfg.methods = a.method;
    }
    cfg.batches = a.batches;
    cfg.interval_ms = a.interval_ms;
    cfg.precision = a.precision;
    cfg.seed = a.seed;
    cfg.checkpoint_dir = a.checkpoint_dir;
    cfg.data_dir = a.data_dir;
    cfg.batches_per_day = a.batches_per_day;

    let report = run_experiment(&cfg)?;
    let checks = write_reports(&report, &a.out)?;
    for c in &checks {
        eprintln!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if let Ok(cmp) = report_compare(&report.rows) {
        print_comparison(&cmp, a.format)?;
    }
    eprintln!("reports written to {}", a.out.display());
    Ok(if checks.iter().all(|c| c.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn print_comparison(cmp: &rtstream::bench::Comparison, format: Format) -> AnyResult<()> {
    let stdout = io::stdout();
    match format {
        Format::Json => {
            serde_json::to_writer_pretty(stdout.lock(), cmp)?;
            println!();
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(stdout.lock());
            w.write_record([
                "batch_size",
                "mean_exact_ms",
                "mean_hllpp_ms",
                "time_ratio",
                "max_error_pct",
                "exact_checkpoint_bytes",
                "hllpp_checkpoint_bytes",
            ])?;
            let join = |v: &[u64]| v.iter().map(u64::to_string).collect::<Vec<_>>().join(" ");
            for r in &cmp.rows {
                w.write_record([
                    r.batch_size.to_string(),
                    format!("{:.3}", r.mean_exact_ms),
                    format!("{:.3}", r.mean_hllpp_ms),
                    format!("{:.3}", r.time_ratio),
                    format!("{:.4}", r.max_error_pct),
                    join(&r.exact_checkpoint_bytes),
                    join(&r.hllpp_checkpoint_bytes),
                ])?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn serve(a: ServeArgs) -> AnyResult<ExitCode> {
    let mut cfg = ServeConfig::new(&a.data_dir);
    cfg.checkpoint_dir = a.checkpoint_dir;
    cfg.interval_ms = a.interval_ms;
    cfg.precision = a.precision;
    cfg.http_addr = a.http;
    cfg.tcp_addr = (a.tcp != "off").then_some(a.tcp);
    cfg.sample_rate = a.sample_rate;
    if let Some(p) = &a.sentiment_config {
        cfg.sentiment = SentimentConfig::from_file(p)?;
    }
    if a.remote {
        let remote: std::sync::Arc<dyn Classifier> = std::sync::Arc::new(RemoteClassifier::new(RemoteConfig::from_env().ok_or("RTSTREAM_LLM_BASE_URL and RTSTREAM_LLM_MODEL must be set")?));
        cfg.classifier = Some(remote);
    }

    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let server = Server::start(cfg).await?;
        if let Some(path) = &a.load_fixture {
            let reviews = load_review_fixture(path)?;
            let now = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH)?.as_millis() as u64;
            let mut body = String::new();
            for (i, r) in reviews.iter().enumerate() {
                let ip = format!("10.0.{}.{}", i / 250, i % 250 + 1);
                body.push_str(&review_record(&r.text, &ip, now).to_json_line());
                body.push('\n');
            }
            let receipt = server.ingestor().handle_http_post(body.as_bytes(), "127.0.0.1", "fixture-loader")?;
            tracing::info!(accepted = receipt.accepted, "fixture published");
        }
        eprintln!("listening on http://{} (ctrl-c to stop)", server.http_addr);
        tokio::signal::ctrl_c().await?;
        server.shutdown().await?;
        Ok::<_, Box<dyn std::error::Error>>(())
    })?;
    Ok(ExitCode::SUCCESS)
}

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use iotrule::api::router;
use iotrule::dsb::DsbConfig;
use iotrule::executor::{ExecutorConfig, LogAction};
use iotrule::harness::{
    run_memory_benchmark, run_test_subscribers, simulate_devices, Expectations, LoadProfile,
    MembenchOptions, Scenario, SimulateOptions,
};
use iotrule::ingest::{Accepter, AccepterConfig, Ingestor, TcpAccepter};
use iotrule::mqtt::MiniBroker;
use iotrule::scheduler::{Engine, EngineConfig, FileStore, RuleStore};

#[derive(Parser)]
#[command(
    name = "iotrule",
    version,
    about = "IoT rule engine and its test tools"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the engine: REST + WebSocket, and TCP ingestion.
    Serve(ServeArgs),
    /// Stream a device scenario to an ingestion socket.
    Simulate(SimulateArgs),
    /// Subscribe over MQTT and WebSocket and check what arrives.
    Subscribe(SubscribeArgs),
    /// Create many rules through REST and report memory per rule.
    Membench(MembenchArgs),
    /// Run a minimal MQTT broker.
    Broker {
        #[arg(long, default_value = "127.0.0.1:1883")]
        bind: String,
    },
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    http: String,
    #[arg(long, default_value = "127.0.0.1:9000")]
    ingest: String,
    /// Rule database file; rules are kept in memory when omitted.
    #[arg(long)]
    store: Option<PathBuf>,
    /// Action worker threads.
    #[arg(long, default_value_t = ExecutorConfig::default().workers)]
    workers: usize,
    #[arg(long, default_value_t = EngineConfig::default().matcher_workers)]
    matcher_workers: usize,
    /// Enables the `Log` action, appending to this file.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, default_value_t = DsbConfig::default().filter_bits)]
    filter_bits: usize,
    #[arg(long, default_value_t = DsbConfig::default().filter_hashes)]
    filter_hashes: u32,
    #[arg(long, default_value_t = AccepterConfig::default().max_connections)]
    max_connections: usize,
    /// Also run an MQTT broker on this address.
    #[arg(long)]
    broker: Option<String>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Ingestion address.
    #[arg(long, default_value = "127.0.0.1:9000")]
    target: String,
    /// Load profile (`desk`, `small`, `smoke` or a JSON file); sets the send rate.
    #[arg(long)]
    profile: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the sent lines here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `test1`, `ramp:FROM:TO:STEPS`, `walk:START:STEP:COUNT` or `v1,v2,...`
    #[arg(long, default_value = "test1")]
    scenario: String,
    #[arg(long, default_value = "1")]
    device_id: String,
    #[arg(long, default_value = "Portable")]
    device_type: String,
    #[arg(long, default_value = "temperature")]
    attribute: String,
    /// Milliseconds between messages; overrides the profile rate.
    #[arg(long)]
    interval_ms: Option<u64>,
}

#[derive(Args)]
struct SubscribeArgs {
    /// Engine base URL for the WebSocket endpoint.
    #[arg(long, default_value = "ws://127.0.0.1:8080")]
    target: String,
    /// `test1` or a JSON expectations file.
    #[arg(long, default_value = "test1")]
    profile: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Broker for the `test1` expectations.
    #[arg(long, default_value = "127.0.0.1:1883")]
    mqtt: String,
}

#[derive(Args)]
struct MembenchArgs {
    /// Engine base URL.
    #[arg(long, default_value = "http://127.0.0.1:8080")]
    target: String,
    #[arg(long, default_value = "desk")]
    profile: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Ingestion address, to stream device positions during the run.
    #[arg(long)]
    ingest: Option<String>,
    /// Engine pid, for an outside RSS reading.
    #[arg(long)]
    pid: Option<u32>,
    #[arg(long, default_value_t = 5)]
    sample_seconds: u64,
}

fn serve(args: ServeArgs) -> Result<(), Box<dyn std::error::Error>> {
    let _broker = args.broker.as_deref().map(MiniBroker::bind).transpose()?;
    let config = EngineConfig {
        matcher_workers: args.matcher_workers,
        executor: ExecutorConfig {
            workers: args.workers,
            ..ExecutorConfig::default()
        },
        dsb: DsbConfig {
            filter_bits: args.filter_bits,
            filter_hashes: args.filter_hashes,
        },
        ..EngineConfig::default()
    };
    let mut builder = Engine::builder(config);
    if let Some(path) = &args.store {
        builder = builder.store(Arc::new(FileStore::open(path)?) as Arc<dyn RuleStore>);
    }
    let log = args.log.as_ref().map(LogAction::to_file).transpose()?;
    let engine = builder.builtin_actions(log)?.build()?;

    let ingestor = Arc::new(Ingestor::new(Arc::clone(engine.dsb())));
    let mut accepter = TcpAccepter::bind(
        &args.ingest,
        ingestor,
        AccepterConfig {
            max_connections: args.max_connections,
        },
    )?;

    let runtime = tokio::runtime::Runtime::new()?;
    let result = runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&args.http).await?;
        println!(
            "http={} ingest={}",
            listener.local_addr()?,
            accepter.local_addr()
        );
        std::io::stdout().flush()?;
        axum::serve(listener, router(engine.clone()))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
    });
    accepter.shutdown();
    engine.shutdown();
    Ok(result?)
}

fn simulate(args: SimulateArgs) -> Result<(), Box<dyn std::error::Error>> {
    let profile = args.profile.as_deref().map(LoadProfile::load).transpose()?;
    let interval = match (args.interval_ms, profile) {
        (Some(ms), _) => Duration::from_millis(ms),
        (None, Some(p)) => Duration::from_secs_f64(1.0 / p.message_rate as f64),
        (None, None) => Duration::from_secs(2),
    };
    let options = SimulateOptions {
        target: args.target,
        device_id: args.device_id,
        device_type: args.device_type,
        attribute: args.attribute,
        scenario: args.scenario.parse::<Scenario>()?,
        interval,
        seed: args.seed,
    };
    if let Some(path) = &args.out {
        std::fs::write(path, options.stream().join("\n") + "\n")?;
    }
    let report = simulate_devices(&options)?;
    println!("sent {} message(s) to {}", report.sent, options.target);
    Ok(())
}

fn subscribe(args: SubscribeArgs) -> Result<bool, Box<dyn std::error::Error>> {
    let expectations = match args.profile.as_str() {
        "test1" => Expectations::test1(&args.mqtt, &args.target),
        path => Expectations::load(path)?,
    };
    log::debug!("subscriber seed {}", args.seed);
    let report = run_test_subscribers(&expectations)?;
    print!("{report}");
    if let Some(path) = &args.out {
        std::fs::write(path, serde_json::to_string_pretty(&report)?)?;
    }
    Ok(report.passed())
}

fn membench(args: MembenchArgs) -> Result<(), Box<dyn std::error::Error>> {
    let mut options = MembenchOptions::new(args.target, LoadProfile::load(&args.profile)?);
    options.seed = args.seed;
    options.ingest = args.ingest;
    options.engine_pid = args.pid;
    options.sample_interval = Duration::from_secs(args.sample_seconds.max(1));
    options.out = args.out;
    let report = run_memory_benchmark(&options)?;
    if options.out.is_none() {
        print!("{}", report.to_csv());
    }
    println!(
        "rules={} baseline={} peak={} bytes_per_rule={:.0} creation_s={:.1} messages={}",
        report.rule_count,
        report.baseline_bytes,
        report.peak_bytes,
        report.bytes_per_rule,
        report.creation_seconds,
        report.messages_sent
    );
    Ok(())
}

fn broker(bind: String) -> Result<(), Box<dyn std::error::Error>> {
    let broker = MiniBroker::bind(bind)?;
    println!("mqtt={}", broker.local_addr());
    std::io::stdout().flush()?;
    tokio::runtime::Runtime::new()?.block_on(tokio::signal::ctrl_c())?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Serve(args) => serve(args),
        Command::Simulate(args) => simulate(args),
        Command::Subscribe(args) => match subscribe(args) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::FAILURE,
            Err(e) => Err(e),
        },
        Command::Membench(args) => membench(args),
        Command::Broker { bind } => broker(bind),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

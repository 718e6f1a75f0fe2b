//! Batch entry points over the conversion pipeline and the HTTP service.
//!
//! Exit codes: 0 success, 1 error (diagnostic on stderr), 2 conversion
//! finished with open conflicts (outputs are still written).

use std::ffi::OsString;
use std::fmt;
use std::future::Future;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use bemtrace_core::bimlite::write_bimlite;
use bemtrace_core::ingest::IngestReport;
use bemtrace_core::model::ModelSnapshot;
use bemtrace_core::network::export_bem;
use bemtrace_core::pipeline::{analyze, convert, load_model, Conversion, ConversionConfig, InputFormat};
use bemtrace_core::validate::validate_snapshot_with;
use bemtrace_service::Registry;
use clap::{Parser, Subcommand};

pub const EXIT_OK: u8 = 0;
pub const EXIT_ERROR: u8 = 1;
pub const EXIT_BLOCKED: u8 = 2;

/// Environment variable holding the log filter, e.g. `info` or
/// `bemtrace_core=debug`.
pub const LOG_ENV: &str = "BEMTRACE_LOG";

#[derive(Debug)]
pub struct CliError(pub String);

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CliError {}

fn err(context: impl fmt::Display, e: impl fmt::Display) -> CliError {
    CliError(format!("{context}: {e}"))
}

#[derive(Debug, Parser)]
#[command(name = "bemtrace", version, about = "BIM to BEM conversion with traceable results")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert an .ifc or .bimlite.json model into a bem/1 document.
    Convert {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the conversion report (conflicts, edits, coverage) here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Check a model for parse errors, integrity violations and conflicts.
    Validate {
        input: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print the conversion report without writing a bem/1 document.
    Report {
        input: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Preload every .ifc and .json model in this directory.
        #[arg(long)]
        models: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write the bimlite/1 form of a model.
    ToBimlite {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
}

/// Installs the logger once; the filter comes from `BEMTRACE_LOG` and
/// defaults to `warn`.
pub fn init_logging() {
    let env = env_logger::Env::new().filter_or(LOG_ENV, "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    match cli.command {
        Command::Convert { input, output, config, report } => {
            cmd_convert(&input, &output, config.as_deref(), report.as_deref())
        }
        Command::Validate { input, config } => cmd_validate(&input, config.as_deref()),
        Command::Report { input, config } => cmd_report(&input, config.as_deref()),
        Command::Serve { port, host, models, config } => cmd_serve(&host, port, models.as_deref(), config.as_deref()),
        Command::ToBimlite { input, output } => cmd_to_bimlite(&input, &output),
    }
}

fn exit_code(r: Result<u8, CliError>) -> u8 {
    r.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        EXIT_ERROR
    })
}

pub fn read_config(path: Option<&Path>) -> Result<ConversionConfig, CliError> {
    match path {
        None => Ok(ConversionConfig::default()),
        Some(p) => {
            let bytes = std::fs::read(p).map_err(|e| err(p.display(), e))?;
            ConversionConfig::from_json(&bytes).map_err(|e| err(p.display(), e))
        }
    }
}

pub fn read_model(path: &Path, config: &ConversionConfig) -> Result<(ModelSnapshot, Option<IngestReport>), CliError> {
    let format =
        InputFormat::from_path(path).ok_or_else(|| err(path.display(), "expected an .ifc or .bimlite.json file"))?;
    let bytes = std::fs::read(path).map_err(|e| err(path.display(), e))?;
    load_model(&bytes, format, &config.tolerances).map_err(|e| err(path.display(), e))
}

/// Loads and converts; shared by `convert` and `report`.
pub fn run_conversion(input: &Path, config: Option<&Path>) -> Result<Conversion, CliError> {
    let config = read_config(config)?;
    let (snapshot, ingest) = read_model(input, &config)?;
    convert(&snapshot, ingest, &config).map_err(|e| err(input.display(), e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| err(path.display(), e))
}

fn blocked_code(conv: &Conversion) -> u8 {
    if conv.report.blocked {
        eprintln!("blocked: {} open conflict(s)", conv.report.open_conflicts);
        EXIT_BLOCKED
    } else {
        EXIT_OK
    }
}

pub fn cmd_convert(input: &Path, output: &Path, config: Option<&Path>, report: Option<&Path>) -> u8 {
    exit_code((|| {
        let conv = run_conversion(input, config)?;
        write(output, &export_bem(&conv.network))?;
        if let Some(r) = report {
            write(r, &conv.report.to_json())?;
        }
        println!(
            "{} rooms, {} connections, {} open conflicts",
            conv.network.rooms.len(),
            conv.network.connections.len(),
            conv.report.open_conflicts
        );
        Ok(blocked_code(&conv))
    })())
}

pub fn cmd_report(input: &Path, config: Option<&Path>) -> u8 {
    exit_code((|| {
        let conv = run_conversion(input, config)?;
        print!("{}", String::from_utf8_lossy(&conv.report.to_json()));
        Ok(blocked_code(&conv))
    })())
}

/// Prints ingest accounting, integrity violations and conflicts as JSON.
/// Exit 1 on integrity violations, 2 on open conflicts.
pub fn cmd_validate(input: &Path, config: Option<&Path>) -> u8 {
    exit_code((|| {
        let config = read_config(config)?;
        let (snapshot, ingest) = read_model(input, &config)?;
        let validation = validate_snapshot_with(&snapshot, &config.tolerances);
        let (_, conflicts) = analyze(&snapshot, &config).map_err(|e| err(input.display(), e))?;
        let open = conflicts.iter().filter(|c| c.is_open()).count();
        let doc = serde_json::json!({
            "version": snapshot.version(),
            "ingest": ingest,
            "validation": validation,
            "open_conflicts": open,
            "conflicts": conflicts,
        });
        println!("{}", serde_json::to_string_pretty(&doc).map_err(|e| err("output", e))?);
        Ok(if !validation.is_empty() {
            eprintln!("{} integrity violation(s)", validation.violations.len());
            EXIT_ERROR
        } else if open > 0 {
            eprintln!("{open} open conflict(s)");
            EXIT_BLOCKED
        } else {
            EXIT_OK
        })
    })())
}

pub fn cmd_to_bimlite(input: &Path, output: &Path) -> u8 {
    exit_code((|| {
        let (snapshot, _) = read_model(input, &ConversionConfig::default())?;
        write(output, &write_bimlite(&snapshot))?;
        Ok(EXIT_OK)
    })())
}

pub fn prepare_registry(models: Option<&Path>, config: Option<&Path>) -> Result<Arc<Registry>, CliError> {
    let registry = Arc::new(Registry::new(read_config(config)?));
    if let Some(dir) = models {
        let loaded = registry.load_dir(dir).map_err(|e| err(dir.display(), e))?;
        log::info!("preloaded {} model(s) from {}", loaded.len(), dir.display());
    }
    Ok(registry)
}

/// Binds and serves until `shutdown` resolves.
pub async fn serve_until(
    addr: SocketAddr,
    registry: Arc<Registry>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), CliError> {
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| err(format!("bind {addr}"), e))?;
    let local = listener.local_addr().map_err(|e| err("listener", e))?;
    println!("listening on http://{local}");
    bemtrace_service::serve(listener, registry, shutdown).await.map_err(|e| err("serve", e))
}

pub fn cmd_serve(host: &str, port: u16, models: Option<&Path>, config: Option<&Path>) -> u8 {
    exit_code((|| {
        let addr: SocketAddr =
            format!("{host}:{port}").parse().map_err(|e| err(format!("address {host}:{port}"), e))?;
        let registry = prepare_registry(models, config)?;
        let rt = tokio::runtime::Runtime::new().map_err(|e| err("runtime", e))?;
        rt.block_on(serve_until(addr, registry, async {
            let _ = tokio::signal::ctrl_c().await;
            log::info!("shutting down");
        }))?;
        Ok(EXIT_OK)
    })())
}

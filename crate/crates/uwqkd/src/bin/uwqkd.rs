use std::fs;
use std::io::Write;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use uwqkd::calibration::{residuals_csv, run_calibration};
use uwqkd::config::{ConfigError, ConfigFile, ExperimentConfig, Seeds};
use uwqkd::net::{self, NetError};
use uwqkd::report::TableRow;
use uwqkd::run::{run_experiment, RunOptions, RunOutput};
use uwqkd::sweep::{curve_csv, curve_file_name, run_sweep};
use uwqkd::tomography::{run_tomography, tomography_csv};
use uwqkd::transcript::write_jsonl;

const EXIT_ABORT: u8 = 2;
const EXIT_INVALID: u8 = 3;

#[derive(Parser)]
#[command(name = "uwqkd", version, about = "Underwater decoy-state BB84 simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Replaces the config's seeds with (n, n+1, n+2) for Alice, Bob and the channel.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for output files; results go to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment in this process.
    Run(Common),
    /// Analytic key rate against distance for each water type.
    Sweep(Common),
    /// Act as Alice: wait for Bob on LISTEN and run the protocol.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "127.0.0.1:7700")]
        listen: String,
    },
    /// Act as Bob: connect to Alice at PEER and run the protocol.
    Connect {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "127.0.0.1:7700")]
        peer: String,
    },
    /// Fit the background yield and misalignment error to anchors.
    Calibrate(Common),
    /// Reconstruct the four prepared states under misalignment.
    Tomography(Common),
}

/// Failures that map to a specific exit code.
enum Failure {
    Invalid(String),
    Other(anyhow::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Invalid(e.to_string())
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Other(e.into())
    }
}

fn load(common: &Common) -> Result<ConfigFile, Failure> {
    let mut file = ConfigFile::load(&common.config)?;
    if let Some(n) = common.seed {
        file.seeds = Some(Seeds::from_master(n));
        if let Some(t) = file.tomography.as_mut() {
            t.seed = n;
        }
    }
    Ok(file)
}

fn emit(common: &Common, file_name: &str, text: &str) -> Result<(), Failure> {
    match &common.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let path = dir.join(file_name);
            fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        }
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn json<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports serialize");
    s.push('\n');
    s
}

fn write_run(common: &Common, cfg: &ExperimentConfig, out: &RunOutput, default_name: &str) -> Result<u8, Failure> {
    let text = match common.format.unwrap_or(Format::Json) {
        Format::Json => json(&out.report),
        Format::Csv => match &out.report.table {
            Some(row) => format!("{}\n{}\n", TableRow::CSV_HEADER, row.csv_row()),
            None => format!("{}\n", TableRow::CSV_HEADER),
        },
    };
    let name = cfg.output.report.clone().unwrap_or_else(|| default_name.to_string());
    emit(common, &name, &text)?;
    if let Some(t) = &cfg.output.transcript {
        let path = common.out.as_deref().unwrap_or(Path::new(".")).join(t);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let f = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        write_jsonl(std::io::BufWriter::new(f), &out.transcript)?;
    }
    if out.aborted() {
        let reason = out
            .report
            .parties
            .iter()
            .find_map(|p| p.abort.as_ref())
            .map(|a| format!("{:?}: {}", a.code, a.reason))
            .unwrap_or_default();
        eprintln!("protocol aborted {reason}");
        return Ok(EXIT_ABORT);
    }
    Ok(0)
}

fn net_failure(e: NetError) -> Failure {
    match e {
        NetError::Config(c) => c.into(),
        other => Failure::Other(other.into()),
    }
}

fn execute(cli: Cli) -> Result<u8, Failure> {
    match cli.command {
        Command::Run(common) => {
            let cfg = load(&common)?.experiment()?;
            let opts = RunOptions { record_transcript: cfg.output.transcript.is_some() };
            let out = run_experiment(&cfg, opts)?;
            write_run(&common, &cfg, &out, "run_report.json")
        }
        Command::Serve { common, listen } => {
            let cfg = load(&common)?.experiment()?;
            let opts = RunOptions { record_transcript: cfg.output.transcript.is_some() };
            let listener = TcpListener::bind(&listen).with_context(|| format!("binding {listen}"))?;
            eprintln!("alice listening on {}", listener.local_addr()?);
            let out = net::serve(&cfg, &listener, opts).map_err(net_failure)?;
            write_run(&common, &cfg, &out, "alice_report.json")
        }
        Command::Connect { common, peer } => {
            let cfg = load(&common)?.experiment()?;
            let opts = RunOptions { record_transcript: cfg.output.transcript.is_some() };
            let out = net::connect(&cfg, peer.as_str(), opts).map_err(net_failure)?;
            write_run(&common, &cfg, &out, "bob_report.json")
        }
        Command::Sweep(common) => {
            let cfg = load(&common)?.sweep()?;
            let report = run_sweep(&cfg).map_err(|e| Failure::Invalid(e.to_string()))?;
            match common.format.unwrap_or(Format::Csv) {
                Format::Json => emit(&common, "sweep.json", &json(&report))?,
                Format::Csv if common.out.is_some() => {
                    for c in &report.curves {
                        emit(&common, &curve_file_name(c.water), &curve_csv(c))?;
                    }
                }
                Format::Csv => {
                    let text: Vec<String> =
                        report.curves.iter().map(|c| format!("# water={:?}\n{}", c.water, curve_csv(c))).collect();
                    emit(&common, "", &text.join("\n"))?;
                }
            }
            Ok(0)
        }
        Command::Calibrate(common) => {
            let cfg = load(&common)?.calibration()?;
            let report = run_calibration(&cfg);
            match common.format.unwrap_or(Format::Json) {
                Format::Json => emit(&common, "calibration.json", &json(&report))?,
                Format::Csv => emit(&common, "calibration.csv", &residuals_csv(&report))?,
            }
            if let Some(e) = &report.error {
                eprintln!("calibration failed: {e}");
                return Ok(1);
            }
            Ok(0)
        }
        Command::Tomography(common) => {
            let cfg = load(&common)?.tomography()?;
            let report = run_tomography(&cfg).map_err(|e| Failure::Invalid(e.to_string()))?;
            match common.format.unwrap_or(Format::Json) {
                Format::Json => emit(&common, "tomography.json", &json(&report))?,
                Format::Csv => emit(&common, "tomography.csv", &tomography_csv(&report))?,
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Invalid(msg)) => {
            eprintln!("invalid configuration: {msg}");
            ExitCode::from(EXIT_INVALID)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

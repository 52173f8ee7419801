use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use lora_pcsma::config::load_config;
use lora_pcsma::mac::MacMode;
use lora_pcsma::metrics::{compute_prr, join_list, write_csv, ResultRow, RowKind};
use lora_pcsma::scenario::{run_scenario, write_trace};
use lora_pcsma::sweep::{aloha_base, aloha_validation, parse_grid, run_sweep, write_aloha_csv};
use lora_pcsma::{Error, RunConfig};

#[derive(Parser)]
#[command(
    name = "lora-pcsma",
    version,
    about = "Single-gateway LoRa network simulator with p-CSMA and ALOHA MACs"
)]
struct Cli {
    /// Override the MAC selected in the config file.
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Pcsma,
    Aloha,
}

impl From<Mode> for MacMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Pcsma => MacMode::Pcsma,
            Mode::Aloha => MacMode::Aloha,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and print its counters.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Write a one-row results CSV.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the per-packet transmission log (tab-separated).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run a parameter grid and write per-run and per-cell summary rows.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (defaults to all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Measure pure-ALOHA throughput against G*exp(-2G) under Poisson load.
    ValidateAloha {
        /// Offered loads in packets per packet-time.
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.25,0.5,1.0")]
        g: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Optional base scenario (must select the ALOHA MAC).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Simulated duration in packet-times.
        #[arg(long, default_value_t = 200_000.0)]
        packet_times: f64,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn finish(path: &Path, w: io::Result<()>) -> Result<(), Error> {
    w.map_err(|e| Error::io(path, e))
}

fn load(path: &Path, mode: Option<Mode>) -> Result<RunConfig, Error> {
    let mut cfg = load_config(path)?;
    if let Some(m) = mode {
        cfg.mac = m.into();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            trace,
        } => {
            let mut cfg = load(&config, cli.mode)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let result = run_scenario(&cfg)?;
            result.verify()?;
            let prr = compute_prr(&result.counters)?;
            let c = result.counters;
            let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "-".into());
            println!(
                "{} seed={} mac={} devices={}",
                cfg.name,
                cfg.seed,
                cfg.mac.as_str(),
                result.topology.devices.len()
            );
            println!(
                "generated={} sent={} suppressed={} pending={} received={} collided={} under_sensitivity={} no_path={}",
                c.generated, c.sent, c.suppressed, c.pending_at_end, c.received, c.collided,
                c.under_sensitivity, c.no_path
            );
            println!(
                "prr_generated={} prr_sent={}",
                fmt(prr.generated),
                fmt(prr.sent)
            );
            if let Some(path) = trace {
                let mut w = create(&path)?;
                finish(
                    &path,
                    write_trace(&result.log, &mut w).and_then(|_| w.flush()),
                )?;
            }
            if let Some(path) = out {
                let row = ResultRow {
                    scenario: cfg.name.clone(),
                    kind: RowKind::Run(cfg.seed),
                    mac: cfg.mac.as_str().into(),
                    n_devices: result.topology.devices.len(),
                    sf_set: join_list(&cfg.sf_set),
                    p: cfg.global_p(),
                    n_areas: cfg.geometry.n_areas,
                    period_set: join_list(&cfg.period_set_s),
                    counters: Some(c),
                    prr_generated: prr.generated,
                    prr_sent: prr.sent,
                };
                let mut w = create(&path)?;
                finish(&path, write_csv(&[row], &mut w).and_then(|_| w.flush()))?;
            }
        }
        Command::Sweep {
            config,
            grid,
            out,
            threads,
        } => {
            let cfg = load(&config, cli.mode)?;
            let text = std::fs::read_to_string(&grid).map_err(|e| Error::io(&grid, e))?;
            let grid = parse_grid(&text)?;
            let rows = match threads {
                Some(n) => rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| Error::Usage(e.to_string()))?
                    .install(|| run_sweep(&cfg, &grid))?,
                None => run_sweep(&cfg, &grid)?,
            };
            let mut w = create(&out)?;
            finish(&out, write_csv(&rows, &mut w).and_then(|_| w.flush()))?;
            eprintln!(
                "{} runs over {} cells written to {}",
                grid.runs(),
                grid.cells(),
                out.display()
            );
        }
        Command::ValidateAloha {
            g,
            out,
            config,
            packet_times,
            seed,
        } => {
            let mut cfg = match &config {
                Some(path) => load(path, cli.mode)?,
                None => aloha_base(),
            };
            if config.is_none() {
                if let Some(m) = cli.mode {
                    cfg.mac = m.into();
                }
            }
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let points = aloha_validation(&cfg, &g, packet_times)?;
            println!("{:>8} {:>10} {:>10}", "G", "S", "G*e^-2G");
            for p in &points {
                println!(
                    "{:>8.3} {:>10.6} {:>10.6}",
                    p.load_g, p.throughput, p.theory
                );
            }
            if let Some(path) = out {
                let mut w = create(&path)?;
                finish(
                    &path,
                    write_aloha_csv(&points, &mut w).and_then(|_| w.flush()),
                )?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

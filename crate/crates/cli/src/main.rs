use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use cotalk_core::chain::SessionState;
use cotalk_core::metrics::QualityWeights;
use cotalk_core::sim::{
    delta_t, pareto_sweep, simulate_trial, simulate_trials, strategy_time, speed_sweep, words_per_unit_grid,
    OutputChannel, OverlapModel, SimScenario, StrategySet, Strategy, DEFAULT_TRIALS,
};
use cotalk_core::store::{export_records, metrics_row, verify_dir, write_export_jsonl, write_metrics_csv};
use cotalk_service::{build_engine, system_clock, ApiConfig, AppState};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "cotalk", version, about = "Caption annotation chains: simulate, serve and export")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte-Carlo trials of one or more strategies.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// `single`, `parallel:M` or `cotalk:N`; repeatable.
        #[arg(long = "strategy", default_values = ["single", "parallel:3", "cotalk:2"])]
        strategies: Vec<Strategy>,
        #[arg(long, default_value_t = DEFAULT_TRIALS)]
        trials: usize,
        /// Per-trial rows as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Closed-form time gap between parallel and sequential annotation.
    DeltaT {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Sequential rounds.
        #[arg(long, default_value_t = 2)]
        n: usize,
        /// Parallel rounds.
        #[arg(long, default_value_t = 3)]
        m: usize,
    },
    /// Strategy comparison over a words-per-unit grid.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, value_enum, default_value_t = SweepKind::Speed)]
        kind: SweepKind,
        /// Comma-separated words per unit; defaults to 2..=8.
        #[arg(long, value_delimiter = ',')]
        words: Vec<f64>,
        #[arg(long, default_value_t = 2)]
        cotalk_rounds: usize,
        #[arg(long, default_value_t = 3)]
        parallel_rounds: usize,
        #[arg(long, default_value_t = DEFAULT_TRIALS)]
        trials: usize,
        /// Rows as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Runs the HTTP API.
    Serve {
        /// TOML config; `COTALK_*` variables override it.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Writes the dataset export of finalized sessions.
    Export {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long, value_enum, default_value_t = ExportFormat::Jsonl)]
        format: ExportFormat,
        /// Only sessions of this mode.
        #[arg(long, value_parser = ["single", "parallel", "cotalk"])]
        mode: Option<String>,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replays a data directory with and without snapshots and prints its hash.
    ReplayVerify {
        #[arg(long)]
        data_dir: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepKind {
    /// Speed and duplication, sequential against parallel.
    Speed,
    /// Mean J, T and E per strategy.
    Pareto,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportFormat {
    Jsonl,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Channel {
    Speech,
    Typing,
}

/// Scenario overrides on top of the defaults or `--scenario`.
#[derive(Args)]
struct ScenarioArgs {
    /// TOML or JSON scenario file; flags override its fields.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    n_units: Option<usize>,
    /// Per-round capacities, e.g. `30,15`.
    #[arg(long, value_delimiter = ',')]
    capacity: Option<Vec<usize>>,
    #[arg(long)]
    diminish_factor: Option<f64>,
    #[arg(long)]
    words_per_unit: Option<f64>,
    /// Speaking rate, words per minute.
    #[arg(long)]
    v_talk: Option<f64>,
    /// Typing rate, words per minute.
    #[arg(long)]
    v_type: Option<f64>,
    /// Reading rate, words per minute.
    #[arg(long)]
    v_read: Option<f64>,
    /// Seconds spent observing the image each round.
    #[arg(long)]
    t_observe: Option<f64>,
    /// `uniform` or `bernoulli:P`.
    #[arg(long, value_parser = parse_overlap)]
    overlap: Option<OverlapModel>,
    #[arg(long, value_enum)]
    channel: Option<Channel>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Required when the `CI` environment variable is set.
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_overlap(s: &str) -> Result<OverlapModel, String> {
    match s.split_once(':') {
        None if s == "uniform" => Ok(OverlapModel::Uniform),
        Some(("bernoulli", p)) => p.parse().map(|p| OverlapModel::Bernoulli { p }).map_err(|e| format!("bad probability: {e}")),
        _ => Err(format!("expected uniform or bernoulli:P, got {s:?}")),
    }
}

impl ScenarioArgs {
    fn build(&self) -> Result<SimScenario> {
        if self.seed.is_none() && std::env::var_os("CI").is_some() {
            bail!("--seed is required when CI is set");
        }
        let mut s = match &self.scenario {
            Some(path) => read_scenario(path)?,
            None => SimScenario::default(),
        };
        if let Some(v) = self.n_units {
            s.n_units = v;
        }
        if let Some(v) = &self.capacity {
            s.annotator_capacity = v.clone();
        }
        if let Some(v) = self.diminish_factor {
            s.diminish_factor = v;
        }
        if let Some(v) = self.words_per_unit {
            s.words_per_unit = v;
        }
        if let Some(v) = self.v_talk {
            s.v_talk = v;
        }
        if let Some(v) = self.v_type {
            s.v_type = v;
        }
        if let Some(v) = self.v_read {
            s.v_read = v;
        }
        if let Some(v) = self.t_observe {
            s.t_observe_image = v;
        }
        if let Some(v) = self.overlap {
            s.parallel_overlap_model = v;
        }
        if let Some(c) = self.channel {
            s.output_channel = match c {
                Channel::Speech => OutputChannel::Speech,
                Channel::Typing => OutputChannel::Typing,
            };
        }
        if self.beta.is_some() || self.gamma.is_some() {
            s.quality = QualityWeights::new(self.beta.unwrap_or(s.quality.beta), self.gamma.unwrap_or(s.quality.gamma))?;
        }
        if let Some(v) = self.seed {
            s.rng_seed = v;
        }
        s.validate()?;
        Ok(s)
    }
}

fn read_scenario(path: &Path) -> Result<SimScenario> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let scenario = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text)?
    } else {
        toml::from_str(&text)?
    };
    Ok(scenario)
}

#[derive(Serialize)]
struct TrialRow {
    trial: u64,
    strategy: String,
    covered_units: usize,
    total_time_s: f64,
    duplication_pct: f64,
    #[serde(rename = "J")]
    j: f64,
    #[serde(rename = "E")]
    efficiency: f64,
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

fn print_json(value: &impl Serialize) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn simulate(scenario: SimScenario, strategies: &[Strategy], trials: usize, csv: Option<&Path>) -> Result<()> {
    #[derive(Serialize)]
    struct Summary {
        scenario: SimScenario,
        closed_form_time_s: Vec<(String, f64)>,
        summaries: Vec<cotalk_core::sim::TrialSummary>,
    }
    let summaries = strategies.iter().map(|&s| simulate_trials(&scenario, s, trials)).collect::<Result<Vec<_>, _>>()?;
    if let Some(path) = csv {
        let mut rows = Vec::with_capacity(trials * strategies.len());
        for &strategy in strategies {
            for trial in 0..trials as u64 {
                let o = simulate_trial(&scenario, strategy, trial)?;
                rows.push(TrialRow {
                    trial,
                    strategy: strategy.to_string(),
                    covered_units: o.covered_units,
                    total_time_s: o.total_time_s,
                    duplication_pct: o.duplication_pct,
                    j: o.j(),
                    efficiency: o.efficiency,
                });
            }
        }
        write_csv(path, rows)?;
    }
    let closed_form_time_s = strategies.iter().map(|&s| (s.to_string(), strategy_time(&scenario, s))).collect();
    print_json(&Summary { scenario, closed_form_time_s, summaries })
}

fn sweep(
    base: SimScenario,
    kind: SweepKind,
    words: Vec<f64>,
    set: StrategySet,
    trials: usize,
    csv: Option<&Path>,
) -> Result<()> {
    let words = if words.is_empty() { words_per_unit_grid() } else { words };
    match kind {
        SweepKind::Speed => {
            let cells = speed_sweep(&base, &words, set, trials)?;
            if let Some(path) = csv {
                write_csv(path, &cells)?;
            }
            print_json(&cells)
        }
        SweepKind::Pareto => {
            let grid: Vec<SimScenario> = words.iter().map(|&w| SimScenario { words_per_unit: w, ..base.clone() }).collect();
            let report = pareto_sweep(&grid, set, trials)?;
            if let Some(path) = csv {
                write_csv(path, &report.rows)?;
            }
            print_json(&report)
        }
    }
}

fn serve(config: Option<&Path>) -> Result<()> {
    let config = ApiConfig::from_env(config)?;
    // Blocking HTTP clients must be built outside the runtime.
    let engine = build_engine(&config)?;
    let state = AppState::open(&config, engine, system_clock())?;
    if config.auth_token().is_none() {
        tracing::warn!(var = %config.auth_token_env, "no API token set; requests are not authenticated");
    }
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(cotalk_service::serve(state, config.socket_addr()))?;
    Ok(())
}

/// Reads sessions without touching the directory.
fn load_states(data_dir: &Path) -> Result<Vec<SessionState>> {
    if !data_dir.is_dir() {
        bail!("data directory {} does not exist", data_dir.display());
    }
    let (sessions, _) = verify_dir(data_dir).with_context(|| format!("reading {}", data_dir.display()))?;
    Ok(sessions.into_values().map(|t| t.state).collect())
}

fn export(data_dir: &Path, format: ExportFormat, mode: Option<&str>, out: Option<&Path>) -> Result<()> {
    let states = load_states(data_dir)?;
    let mut sink: Box<dyn Write> = match out {
        Some(path) => Box::new(File::create(path).with_context(|| format!("creating {}", path.display()))?),
        None => Box::new(io::stdout().lock()),
    };
    match format {
        ExportFormat::Jsonl => {
            let records = export_records(states.iter(), mode)?;
            let n = write_export_jsonl(&records, &mut sink)?;
            tracing::info!(records = n, "exported");
        }
        ExportFormat::Csv => {
            let mut finalized: Vec<&SessionState> =
                states.iter().filter(|s| s.is_finalized() && mode.is_none_or(|m| m == s.mode.label())).collect();
            finalized.sort_by(|a, b| a.session_id.cmp(&b.session_id));
            let rows = finalized.into_iter().map(|s| metrics_row(s, None)).collect::<Result<Vec<_>, _>>()?;
            write_metrics_csv(&rows, &mut sink)?;
        }
    }
    sink.flush()?;
    Ok(())
}

fn replay_verify(data_dir: &Path) -> Result<()> {
    let (sessions, hash) = verify_dir(data_dir).with_context(|| format!("verifying {}", data_dir.display()))?;
    let finalized = sessions.values().filter(|t| t.state.is_finalized()).count();
    println!("sessions {} finalized {} hash {hash}", sessions.len(), finalized);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { scenario, strategies, trials, csv } => simulate(scenario.build()?, &strategies, trials, csv.as_deref()),
        Command::DeltaT { scenario, n, m } => print_json(&delta_t(&scenario.build()?, n, m)?),
        Command::Sweep { scenario, kind, words, cotalk_rounds, parallel_rounds, trials, csv } => {
            let set = StrategySet { cotalk_rounds, parallel_rounds };
            sweep(scenario.build()?, kind, words, set, trials, csv.as_deref())
        }
        Command::Serve { config } => serve(config.as_deref()),
        Command::Export { data_dir, format, mode, out } => export(&data_dir, format, mode.as_deref(), out.as_deref()),
        Command::ReplayVerify { data_dir } => replay_verify(&data_dir),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

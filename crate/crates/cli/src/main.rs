use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bitsync_cli::api::{run_api, ApiCommand};
use bitsync_cli::inspect::stability_table;
use bitsync_cli::runner::{execute, format_number, relative_error};
use bitsync_cli::scenario::{bundled, Scenario, ScenarioKind};
use bitsync_core::canister::CanisterState;
use bitsync_core::{DepthKind, NetworkKind};
use bitsync_netsim::{analytic_downtime, analytic_eclipse, downtime_bound, run_downtime_attack, run_eclipse_trial, SimParams};
use clap::{Parser, Subcommand, ValueEnum};

const EXIT_ASSERT: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(name = "bitsync", version, about = "Scenario runner and tooling for the Bitcoin chain-tracking canister")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or a bundled scenario by name.
    Run {
        scenario: String,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the trial count of fork_attack and montecarlo scenarios.
        #[arg(long)]
        trials: Option<u64>,
        /// Directory for report.csv, observations.csv and snapshots.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        delta: Option<u64>,
        #[arg(long)]
        tau: Option<u32>,
        #[arg(long)]
        page_size: Option<usize>,
    },
    /// Estimate an attack probability and compare it with its closed form.
    Montecarlo {
        experiment: McExperiment,
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 13)]
        n: usize,
        #[arg(long, default_value_t = 4)]
        f: usize,
        #[arg(long, default_value_t = 5)]
        ell: usize,
        #[arg(long, default_value_t = 0.3)]
        phi: f64,
        #[arg(long, default_value_t = 10_000)]
        population: usize,
        #[arg(long, default_value_t = 3)]
        c_star: u64,
        /// CSV file to append the result row to.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print depth and stability of every block in a tree dump.
    Inspect {
        dump: PathBuf,
        #[arg(long, default_value_t = 6)]
        delta: u64,
        #[arg(long, default_value = "confirmation")]
        kind: DepthKind,
    },
    /// One API call against a canister snapshot.
    Api {
        snapshot: PathBuf,
        /// Defaults to the snapshot's network.
        #[arg(long, global = true)]
        network: Option<NetworkKind>,
        /// Write the resulting state (for example a queued transaction)
        /// back to this file.
        #[arg(long, global = true)]
        out: Option<PathBuf>,
        #[command(subcommand)]
        call: ApiSub,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum McExperiment {
    Eclipse,
    Downtime,
}

#[derive(Subcommand)]
enum ApiSub {
    GetUtxos {
        address: String,
        #[arg(long)]
        min_confirmations: Option<u64>,
        #[arg(long)]
        page: Option<String>,
    },
    GetBalance {
        address: String,
        #[arg(long)]
        min_confirmations: Option<u64>,
    },
    SendTransaction {
        hex: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { scenario, seed, trials, out, delta, tau, page_size } => {
            cmd_run(&scenario, seed, trials, out.as_deref(), delta, tau, page_size)
        }
        Command::Montecarlo { experiment, trials, seed, n, f, ell, phi, population, c_star, out } => {
            let params = SimParams { n, f, ell, phi, population, c_star, ..SimParams::default() };
            cmd_montecarlo(experiment, params, trials, seed, out.as_deref())
        }
        Command::Inspect { dump, delta, kind } => cmd_inspect(&dump, delta, kind),
        Command::Api { snapshot, network, out, call } => cmd_api(&snapshot, network, out.as_deref(), call),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

fn cmd_run(
    source: &str,
    seed: Option<u64>,
    trials: Option<u64>,
    out: Option<&Path>,
    delta: Option<u64>,
    tau: Option<u32>,
    page_size: Option<usize>,
) -> Result<u8, String> {
    let text = match fs::read_to_string(source) {
        Ok(t) => t,
        Err(e) => match bundled(source) {
            Some(t) => t.to_string(),
            None => return Err(format!("{source}: {e} (and no bundled scenario has that name)")),
        },
    };
    let mut scenario = Scenario::parse(&text).map_err(|e| format!("{source}: {e}"))?;
    if let Some(t) = trials {
        if scenario.kind == ScenarioKind::World {
            return Err("--trials only applies to fork_attack and montecarlo scenarios".into());
        }
        if t == 0 {
            return Err("--trials must be at least 1".into());
        }
        scenario.trials = t;
    }
    scenario.params.delta = delta.unwrap_or(scenario.params.delta);
    scenario.params.tau = tau.unwrap_or(scenario.params.tau);
    scenario.params.page_size = page_size.unwrap_or(scenario.params.page_size);
    scenario.params.validate().map_err(|e| e.to_string())?;

    let output = execute(&scenario, seed.unwrap_or(scenario.seed)).map_err(|e| e.to_string())?;
    print!("{}", output.report.to_csv());
    if let Some(dir) = out {
        output.write_to(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    }
    for failure in &output.failures {
        eprintln!("assertion failed: {failure}");
    }
    Ok(if output.passed() { 0 } else { EXIT_ASSERT })
}

fn cmd_montecarlo(experiment: McExperiment, params: SimParams, trials: u64, seed: u64, out: Option<&Path>) -> Result<u8, String> {
    if trials == 0 {
        return Err("--trials must be at least 1".into());
    }
    params.validate().map_err(|e| e.to_string())?;
    let (name, estimate, analytic, bound) = match experiment {
        McExperiment::Eclipse => {
            let e = run_eclipse_trial(&params, trials, seed).map_err(|e| e.to_string())?;
            let (one, any) = analytic_eclipse(params.phi, params.ell, params.n);
            println!("per_adapter {} analytic {} relative_error {}", e.per_adapter, one, relative_error(e.per_adapter, one));
            ("eclipse", e.any_adapter, any, None)
        }
        McExperiment::Downtime => {
            let d = run_downtime_attack(&params, trials, seed).map_err(|e| e.to_string())?;
            ("downtime", d.probability, analytic_downtime(params.f, params.n, params.c_star), Some(downtime_bound(params.c_star)))
        }
    };
    let rel = relative_error(estimate, analytic);
    println!("estimate {estimate} analytic {analytic} relative_error {rel} trials {trials} seed {seed}");
    if let Some(b) = bound {
        println!("bound {b} below_bound {}", estimate < b);
    }
    if let Some(path) = out {
        append_row(path, name, &params, trials, seed, estimate, analytic, rel).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn append_row(path: &Path, name: &str, p: &SimParams, trials: u64, seed: u64, estimate: f64, analytic: f64, rel: f64) -> io::Result<()> {
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if fresh {
        w.write_record(["experiment", "trials", "seed", "n", "f", "ell", "phi", "c_star", "estimate", "analytic", "relative_error"])?;
    }
    w.write_record([
        name.to_string(),
        trials.to_string(),
        seed.to_string(),
        p.n.to_string(),
        p.f.to_string(),
        p.ell.to_string(),
        format_number(p.phi),
        p.c_star.to_string(),
        estimate.to_string(),
        analytic.to_string(),
        rel.to_string(),
    ])?;
    w.flush()
}

fn cmd_inspect(dump: &Path, delta: u64, kind: DepthKind) -> Result<u8, String> {
    let text = fs::read_to_string(dump).map_err(|e| format!("{}: {e}", dump.display()))?;
    let table = stability_table(&text, delta, kind).map_err(|e| format!("{}: {e}", dump.display()))?;
    print!("{table}");
    Ok(0)
}

fn cmd_api(snapshot: &Path, network: Option<NetworkKind>, out: Option<&Path>, call: ApiSub) -> Result<u8, String> {
    let text = fs::read_to_string(snapshot).map_err(|e| format!("{}: {e}", snapshot.display()))?;
    let mut canister = CanisterState::load_snapshot(&text).map_err(|e| format!("{}: {e}", snapshot.display()))?;
    let network = network.unwrap_or(canister.config().network);
    let cmd = match call {
        ApiSub::GetUtxos { address, min_confirmations, page } => ApiCommand::GetUtxos { address, min_confirmations, page },
        ApiSub::GetBalance { address, min_confirmations } => ApiCommand::GetBalance { address, min_confirmations },
        ApiSub::SendTransaction { hex } => ApiCommand::SendTransaction { hex },
    };
    match run_api(&mut canister, network, &cmd) {
        Ok(text) => {
            let mut stdout = io::stdout().lock();
            let _ = stdout.write_all(text.as_bytes());
            if let Some(path) = out {
                fs::write(path, canister.dump_snapshot()).map_err(|e| format!("{}: {e}", path.display()))?;
            }
            Ok(0)
        }
        Err(e) => {
            eprintln!("api error: {e}");
            Ok(EXIT_ASSERT)
        }
    }
}

//! Scenario execution and output files.

use std::cmp::Reverse;
use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use bitsync_core::canister::{CanisterState, UtxosFilter};
use bitsync_core::{Address, Encodable, Hash256, OutPoint, Transaction, TxIn, TxOut};
use bitsync_netsim::world::NETWORK;
use bitsync_netsim::{analytic_downtime, analytic_eclipse, downtime_bound, run_downtime_attack, run_eclipse_trial, run_fork_attack, SimWorld};
use thiserror::Error;

use crate::scenario::{Action, ApiCall, Experiment, Operand, Scenario, ScenarioKind};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{0}")]
    Params(#[from] bitsync_netsim::ParamError),
    #[error("line {line}: {msg}")]
    Action { line: usize, msg: String },
}

/// Ordered `metric,value` rows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    rows: Vec<(String, String)>,
    values: BTreeMap<String, f64>,
}

pub fn format_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

impl Report {
    pub fn text(&mut self, name: &str, value: impl Into<String>) {
        self.rows.push((name.to_string(), value.into()));
    }

    pub fn set(&mut self, name: &str, value: f64) {
        self.rows.retain(|(n, _)| n != name);
        self.rows.push((name.to_string(), format_number(value)));
        self.values.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }

    pub fn rows(&self) -> &[(String, String)] {
        &self.rows
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["metric", "value"]).expect("in-memory write");
        for (k, v) in &self.rows {
            w.write_record([k, v]).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush to memory")).expect("utf-8")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub report: Report,
    /// Observation log CSV, for world scenarios.
    pub observations: Option<String>,
    /// Extra files (name, contents), such as canister snapshots.
    pub files: Vec<(String, String)>,
    /// One message per failed assertion.
    pub failures: Vec<String>,
}

impl RunOutput {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn write_to(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.csv"), self.report.to_csv())?;
        if let Some(obs) = &self.observations {
            fs::write(dir.join("observations.csv"), obs)?;
        }
        for (name, text) in &self.files {
            fs::write(dir.join(name), text)?;
        }
        Ok(())
    }
}

pub fn relative_error(estimate: f64, analytic: f64) -> f64 {
    if analytic == 0.0 {
        if estimate == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (estimate - analytic).abs() / analytic
    }
}

pub fn execute(scenario: &Scenario, seed: u64) -> Result<RunOutput, RunError> {
    let mut report = Report::default();
    report.text("scenario", scenario.name.as_str());
    report.set("seed", seed as f64);
    let mut out = RunOutput { report, observations: None, files: Vec::new(), failures: Vec::new() };
    match scenario.kind {
        ScenarioKind::World => run_world(scenario, seed, &mut out)?,
        ScenarioKind::ForkAttack => {
            let s = run_fork_attack(&scenario.params, scenario.trials, seed)?;
            let r = &mut out.report;
            r.set("runs", scenario.trials as f64);
            r.set("c_star", scenario.params.c_star as f64);
            r.set("max_reported_confirmations", s.max as f64);
            r.set("runs_reaching_c_star", s.runs_reaching_c_star as f64);
        }
        ScenarioKind::Montecarlo => {
            let p = &scenario.params;
            let r = &mut out.report;
            r.set("trials", scenario.trials as f64);
            match scenario.experiment.expect("checked at parse time") {
                Experiment::Eclipse => {
                    let e = run_eclipse_trial(p, scenario.trials, seed)?;
                    let (one, any) = analytic_eclipse(p.phi, p.ell, p.n);
                    r.set("per_adapter", e.per_adapter);
                    r.set("analytic_per_adapter", one);
                    r.set("relative_error_per_adapter", relative_error(e.per_adapter, one));
                    r.set("any_adapter", e.any_adapter);
                    r.set("analytic_any_adapter", any);
                    r.set("relative_error_any_adapter", relative_error(e.any_adapter, any));
                    r.set("estimate", e.any_adapter);
                    r.set("analytic", any);
                    r.set("relative_error", relative_error(e.any_adapter, any));
                }
                Experiment::Downtime => {
                    let d = run_downtime_attack(p, scenario.trials, seed)?;
                    let analytic = analytic_downtime(p.f, p.n, p.c_star);
                    r.set("successes", d.successes as f64);
                    r.set("estimate", d.probability);
                    r.set("analytic", analytic);
                    r.set("relative_error", relative_error(d.probability, analytic));
                    r.set("bound", downtime_bound(p.c_star));
                }
            }
        }
    }
    check_assertions(scenario, &mut out);
    Ok(out)
}

fn check_assertions(scenario: &Scenario, out: &mut RunOutput) {
    for a in &scenario.assertions {
        let lhs = out.report.get(&a.metric);
        let (rhs, rhs_text) = match &a.rhs {
            Operand::Value(v) => (Some(*v), format_number(*v)),
            Operand::Metric { name, offset } => {
                let v = out.report.get(name).map(|x| x + offset);
                let text = if *offset == 0.0 { name.clone() } else { format!("{name} {offset:+}") };
                (v, text)
            }
        };
        let ok = matches!((lhs, rhs), (Some(l), Some(r)) if a.op.holds(l, r));
        if !ok {
            let show = |v: Option<f64>| v.map_or("undefined".to_string(), format_number);
            out.failures.push(format!(
                "line {}: {} {} {} failed ({} vs {})",
                a.line,
                a.metric,
                a.op.symbol(),
                rhs_text,
                show(lhs),
                show(rhs)
            ));
        }
    }
}

fn run_world(scenario: &Scenario, seed: u64, out: &mut RunOutput) -> Result<(), RunError> {
    let mut world = SimWorld::new(scenario.params.clone(), seed)?;
    let mut api_errors = 0u64;
    for step in &scenario.actions {
        world.run_until(step.at_ms);
        let fail = |msg: String| RunError::Action { line: step.line, msg };
        match &step.action {
            Action::Advance => {}
            Action::InjectFork { depth, len } => {
                world.inject_honest_fork(*depth, *len).map_err(fail)?;
            }
            Action::Downtime { until_ms } => world.schedule_downtime(step.at_ms, *until_ms),
            Action::Api { call, address, min_confirmations, label } => {
                let addr = world.address(*address).expect("index checked at parse time");
                match api_call(world.canister_mut(), *call, &addr, *min_confirmations, label) {
                    Some((value, pages)) => {
                        out.report.set(label, value);
                        if let Some(p) = pages {
                            out.report.set(&format!("{label}_pages"), p as f64);
                        }
                    }
                    None => {
                        api_errors += 1;
                        out.report.set(label, -1.0);
                        if *call == ApiCall::GetUtxos {
                            out.report.set(&format!("{label}_pages"), 0.0);
                        }
                    }
                }
            }
            Action::CheckPagination => {
                let addresses: Vec<String> = (0..world.address_count()).filter_map(|i| world.address(i)).collect();
                let (mismatches, max_pages) = check_pagination(world.canister(), &addresses);
                out.report.set("pagination_mismatches", mismatches as f64);
                out.report.set("pagination_addresses", addresses.len() as f64);
                out.report.set("pagination_max_pages", max_pages as f64);
            }
            Action::Snapshot { file } => out.files.push((file.clone(), world.canister().dump_snapshot())),
        }
    }
    world.run_until(scenario.params.duration_ms);
    for name in SimWorld::METRIC_NAMES {
        out.report.set(name, world.metric(name).expect("listed metric"));
    }
    out.report.set("api_errors", api_errors as f64);
    out.observations = Some(world.log().to_csv_string());
    out.files.push(("canister.snapshot".into(), world.canister().dump_snapshot()));
    Ok(())
}

/// Performs one API call. Returns the numeric result (balance, UTXO count
/// or 1 for an accepted transaction) and the page count for `get_utxos`,
/// or `None` on an API error.
fn api_call(canister: &mut CanisterState, call: ApiCall, address: &str, min_conf: Option<u64>, label: &str) -> Option<(f64, Option<usize>)> {
    match call {
        ApiCall::GetBalance => canister.get_balance(address, NETWORK, min_conf).ok().map(|b| (b as f64, None)),
        ApiCall::GetUtxos => {
            let pages = collect_pages(canister, address, min_conf.map(UtxosFilter::MinConfirmations)).ok()?;
            let count: usize = pages.iter().map(Vec::len).sum();
            Some((count as f64, Some(pages.len())))
        }
        ApiCall::SendTransaction => {
            let script = Address::parse(address, NETWORK).ok()?.script_pubkey()?;
            let tx = Transaction {
                version: 2,
                inputs: vec![TxIn {
                    previous_output: OutPoint::new(bitsync_core::sha256d(label.as_bytes()), 0),
                    script_sig: Vec::new(),
                    sequence: u32::MAX,
                }],
                outputs: vec![TxOut { value: 1000, script_pubkey: script }],
                lock_time: 0,
            };
            canister.send_transaction(&tx.serialize(), NETWORK).ok().map(|_| (1.0, None))
        }
    }
}

type Row = (OutPoint, u64, u32);

/// Every page of `get_utxos` for `address`, following page tokens.
pub fn collect_pages(canister: &CanisterState, address: &str, first: Option<UtxosFilter>) -> Result<Vec<Vec<Row>>, bitsync_core::canister::ApiError> {
    let mut pages = Vec::new();
    let mut filter = first;
    loop {
        let page = canister.get_utxos(address, NETWORK, filter)?;
        pages.push(page.utxos.iter().map(|u| (u.outpoint, u.value, u.height)).collect());
        match page.next_page {
            Some(token) => filter = Some(UtxosFilter::Page(token)),
            None => return Ok(pages),
        }
    }
}

/// Outputs of `address` after replaying the canister's considered chain
/// over its anchored UTXO set.
fn unpaginated_reference(canister: &CanisterState, address: &Address) -> Vec<Row> {
    let mut set: BTreeMap<OutPoint, (u64, u32)> =
        canister.utxos().address_utxos(address).iter().map(|u| (u.outpoint, (u.value, u.height))).collect();
    let chain = canister.considered_chain(None);
    for hash in chain.iter().skip(1) {
        let block = canister.tree().block(hash).expect("considered blocks have bodies");
        let height = canister.tree().height(hash).expect("in tree");
        for tx in &block.transactions {
            if !tx.is_coinbase() {
                for input in &tx.inputs {
                    set.remove(&input.previous_output);
                }
            }
            let txid = tx.txid();
            for (vout, o) in tx.outputs.iter().enumerate() {
                if Address::from_script(&o.script_pubkey) == *address {
                    set.insert(OutPoint::new(txid, vout as u32), (o.value, height));
                }
            }
        }
    }
    let mut rows: Vec<Row> = set.into_iter().map(|(op, (v, h))| (op, v, h)).collect();
    rows.sort_by_key(|(op, _, h)| (Reverse(*h), op.txid, op.vout));
    rows
}

/// Counts addresses whose paginated listing differs from the reference
/// (content, order or balance), and the largest page count seen.
pub fn check_pagination(canister: &CanisterState, addresses: &[String]) -> (usize, usize) {
    let mut mismatches = 0;
    let mut max_pages = 0;
    for addr in addresses {
        let Ok(parsed) = Address::parse(addr, NETWORK) else {
            mismatches += 1;
            continue;
        };
        let Ok(pages) = collect_pages(canister, addr, None) else {
            mismatches += 1;
            continue;
        };
        max_pages = max_pages.max(pages.len());
        let union: Vec<Row> = pages.into_iter().flatten().collect();
        let balance = canister.get_balance(addr, NETWORK, None).ok();
        let sum: u64 = union.iter().map(|r| r.1).sum();
        if union != unpaginated_reference(canister, &parsed) || balance != Some(sum) {
            mismatches += 1;
        }
    }
    (mismatches, max_pages)
}

/// Hash of the anchor, for display.
pub fn short_hash(h: &Hash256) -> String {
    h.to_string()[..16].to_string()
}

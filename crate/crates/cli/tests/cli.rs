use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

use bitsync_cli::scenario::{bundled, Scenario};
use bitsync_netsim::SimWorld;

fn bitsync(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bitsync")).args(args).output().expect("spawn bitsync")
}

fn fixture(name: &str) -> String {
    format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("bitsync-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    dir
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn report_value(csv: &str, metric: &str) -> String {
    csv.lines().find_map(|l| l.strip_prefix(&format!("{metric},"))).unwrap_or_else(|| panic!("no {metric}")).to_string()
}

#[test]
fn bundled_scenarios_pass() {
    for name in ["sync-linear", "fork-above-anchor", "fork-attack", "downtime-attack", "pagination-stress", "eclipse-mc", "downtime-mc"] {
        let o = bitsync(&["run", name]);
        assert_eq!(o.status.code(), Some(0), "{name}: {}", stderr(&o));
    }
}

#[test]
fn sync_linear_anchor_sits_delta_below_chain_height() {
    let o = bitsync(&["run", "sync-linear"]);
    let out = stdout(&o);
    let anchor: u64 = report_value(&out, "anchor_height").parse().unwrap();
    let tip: u64 = report_value(&out, "canister_tip_height").parse().unwrap();
    // heights count from genesis at 0, so the chain holds tip + 1 blocks
    assert_eq!(anchor, tip + 1 - 6);
}

#[test]
fn overrides_apply() {
    let o = bitsync(&["run", "sync-linear", "--delta", "3", "--seed", "4"]);
    // the scenario's own assertion assumes delta = 6
    assert_eq!(o.status.code(), Some(1));
    let out = stdout(&o);
    assert_eq!(report_value(&out, "delta"), "3");
    assert_eq!(report_value(&out, "seed"), "4");
    let anchor: u64 = report_value(&out, "anchor_height").parse().unwrap();
    let tip: u64 = report_value(&out, "canister_tip_height").parse().unwrap();
    assert_eq!(anchor, tip + 1 - 3);
}

#[test]
fn malformed_scenario_exits_2_without_outputs() {
    let dir = scratch("malformed");
    fs::create_dir_all(&dir).unwrap();
    let file = dir.join("bad.toml");
    fs::write(&file, "name = \"bad\"\n[params]\nn = \"thirteen\"\n").unwrap();
    let out = dir.join("out");
    let o = bitsync(&["run", file.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
    assert!(stdout(&o).is_empty());
    assert!(!out.exists());
}

#[test]
fn missing_scenario_is_a_usage_error() {
    assert_eq!(bitsync(&["run", "no-such-scenario"]).status.code(), Some(2));
    assert_eq!(bitsync(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn assertion_failures_listed_individually() {
    let dir = scratch("failing");
    fs::create_dir_all(&dir).unwrap();
    let file = dir.join("failing.toml");
    fs::write(
        &file,
        "name = \"failing\"\n[params]\nduration_ms = 3600000\n\
         [[assert]]\nmetric = \"reorgs\"\nop = \">\"\nvalue = 100\n\
         [[assert]]\nmetric = \"synced\"\nop = \"==\"\nvalue = 1\n\
         [[assert]]\nmetric = \"deep_forks\"\nop = \"==\"\nvalue = 7\n",
    )
    .unwrap();
    let out = dir.join("out");
    let o = bitsync(&["run", file.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    let failures: Vec<&str> = err.lines().filter(|l| l.starts_with("assertion failed")).collect();
    assert_eq!(failures.len(), 2, "{err}");
    assert!(failures[0].contains("line 4") && failures[0].contains("reorgs"));
    assert!(failures[1].contains("line 12") && failures[1].contains("deep_forks"));
    assert!(out.join("report.csv").exists());
}

#[test]
fn run_writes_outputs_deterministically() {
    let (a, b) = (scratch("det-a"), scratch("det-b"));
    for dir in [&a, &b] {
        let o = bitsync(&["run", "fork-above-anchor", "--out", dir.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0));
    }
    for file in ["report.csv", "observations.csv", "canister.snapshot"] {
        let x = fs::read(a.join(file)).unwrap();
        assert!(!x.is_empty(), "{file}");
        assert_eq!(x, fs::read(b.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn montecarlo_prints_and_appends_rows() {
    let dir = scratch("mc");
    fs::create_dir_all(&dir).unwrap();
    let csv = dir.join("mc.csv");
    let csv_arg = csv.to_str().unwrap();
    let o = bitsync(&["montecarlo", "eclipse", "--trials", "20000", "--seed", "2", "--out", csv_arg]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("analytic 0.0311"), "{}", stdout(&o));
    let o = bitsync(&["montecarlo", "downtime", "--trials", "20000", "--out", csv_arg]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("below_bound"));
    let rows = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = rows.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("experiment,trials,seed"));
    assert!(lines[1].starts_with("eclipse,20000,2,"));
    assert!(lines[2].starts_with("downtime,20000,0,"));
}

#[test]
fn montecarlo_rejects_bad_input() {
    assert_eq!(bitsync(&["montecarlo", "eclipse", "--trials", "0"]).status.code(), Some(2));
    assert_eq!(bitsync(&["montecarlo", "downtime", "--f", "5", "--n", "13"]).status.code(), Some(2));
    assert_eq!(bitsync(&["montecarlo", "sideways"]).status.code(), Some(2));
}

#[test]
fn inspect_two_forks() {
    let o = bitsync(&["inspect", &fixture("two-forks.dump"), "--delta", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    let row = |c: char| out.lines().find(|l| l.starts_with(&c.to_string().repeat(64))).unwrap().to_string();
    assert_eq!(out.lines().next().unwrap(), "hash,height,depth,stability,stable,current");
    assert!(row('a').ends_with(",1,3,2,1,*"), "{}", row('a'));
    assert!(row('d').ends_with(",1,1,-2,0,"), "{}", row('d'));
    assert!(row('c').ends_with(",3,1,1,0,*"), "{}", row('c'));
}

#[test]
fn inspect_single_block_and_errors() {
    let o = bitsync(&["inspect", &fixture("single.dump")]);
    assert!(stdout(&o).lines().nth(1).unwrap().ends_with(",0,1,1,0,*"), "{}", stdout(&o));
    let dir = scratch("inspect");
    fs::create_dir_all(&dir).unwrap();
    let empty = dir.join("empty.dump");
    fs::write(&empty, "").unwrap();
    assert_eq!(bitsync(&["inspect", empty.to_str().unwrap()]).status.code(), Some(2));
    let orphan = dir.join("orphan.dump");
    fs::write(&orphan, format!("{} - 0 207fffff 1\n{} {} 4 207fffff 1\n", "0".repeat(64), "a".repeat(64), "e".repeat(64))).unwrap();
    assert_eq!(bitsync(&["inspect", orphan.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn api_against_snapshot() {
    let dir = scratch("api");
    let o = bitsync(&["run", "pagination-stress", "--out", dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let snapshot = dir.join("canister.snapshot");
    let snap = snapshot.to_str().unwrap();
    let scenario = Scenario::parse(bundled("pagination-stress").unwrap()).unwrap();
    let world = SimWorld::new(scenario.params.clone(), scenario.seed).unwrap();
    let address = world.address(0).unwrap();
    let o = bitsync(&["api", snap, "get-balance", &address]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let balance: u64 = stdout(&o).trim().parse().unwrap();

    let mut sum = 0u64;
    let mut page: Option<String> = None;
    loop {
        let mut args = vec!["api", snap, "get-utxos", address.as_str()];
        if let Some(p) = &page {
            args.extend(["--page", p.as_str()]);
        }
        let o = bitsync(&args);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let out = stdout(&o);
        let mut lines = out.lines();
        assert_eq!(lines.next(), Some("txid,vout,value,height"));
        for l in lines.clone().filter(|l| l.contains(',')) {
            sum += l.split(',').nth(2).unwrap().parse::<u64>().unwrap();
        }
        let next = lines.find_map(|l| l.strip_prefix("next_page ")).unwrap();
        if next == "-" {
            break;
        }
        page = Some(next.to_string());
    }
    assert_eq!(sum, balance);
    assert!(balance > 0);

    let o = bitsync(&["api", snap, "get-balance", &address, "--min-confirmations", "7"]);
    assert_eq!(o.status.code(), Some(1));
    let o = bitsync(&["api", snap, "send-transaction", "00ff"]);
    assert_eq!(o.status.code(), Some(1));
    let o = bitsync(&["api", snap, "get-balance", &address, "--network", "mainnet"]);
    assert_eq!(o.status.code(), Some(1));
}

//! Scenario files: TOML with a top-level header, `[params]`, `[canister]`,
//! and ordered `[[action]]` and `[[assert]]` tables.

use std::collections::BTreeSet;
use std::ops::Range;

use bitsync_netsim::{SimParams, SimWorld, Strategy};
use serde::Deserialize;
use thiserror::Error;
use toml::Spanned;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// One simulated world driven by the action script.
    #[default]
    World,
    /// Many independent worlds; reports the confirmations the canister
    /// gave the corrupting transaction.
    ForkAttack,
    Montecarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Eclipse,
    Downtime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApiCall {
    GetUtxos,
    GetBalance,
    SendTransaction,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    /// Only advances the clock.
    Advance,
    InjectFork { depth: u32, len: u32 },
    Downtime { until_ms: u64 },
    Api { call: ApiCall, address: usize, min_confirmations: Option<u64>, label: String },
    CheckPagination,
    Snapshot { file: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "==" => CmpOp::Eq,
            "!=" => CmpOp::Ne,
            "<" => CmpOp::Lt,
            "<=" => CmpOp::Le,
            ">" => CmpOp::Gt,
            ">=" => CmpOp::Ge,
            _ => return None,
        })
    }

    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            CmpOp::Eq => lhs == rhs,
            CmpOp::Ne => lhs != rhs,
            CmpOp::Lt => lhs < rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Gt => lhs > rhs,
            CmpOp::Ge => lhs >= rhs,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

/// Right-hand side of an assertion: a constant or another metric plus an
/// offset.
#[derive(Debug, Clone, PartialEq)]
pub enum Operand {
    Value(f64),
    Metric { name: String, offset: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assertion {
    pub line: usize,
    pub metric: String,
    pub op: CmpOp,
    pub rhs: Operand,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledAction {
    pub line: usize,
    pub at_ms: u64,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub kind: ScenarioKind,
    pub seed: u64,
    pub trials: u64,
    pub experiment: Option<Experiment>,
    pub params: SimParams,
    pub actions: Vec<ScheduledAction>,
    pub assertions: Vec<Assertion>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: String,
    #[serde(default)]
    kind: ScenarioKind,
    #[serde(default)]
    seed: u64,
    trials: Option<u64>,
    experiment: Option<Experiment>,
    #[serde(default)]
    params: RawParams,
    #[serde(default)]
    canister: RawCanister,
    #[serde(default, rename = "action")]
    actions: Vec<Spanned<RawAction>>,
    #[serde(default, rename = "assert")]
    asserts: Vec<Spanned<RawAssert>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    n: Option<usize>,
    f: Option<usize>,
    ell: Option<usize>,
    phi: Option<f64>,
    population: Option<usize>,
    honest_block_interval_ms: Option<u64>,
    adversary_hash_fraction: Option<f64>,
    c_star: Option<u64>,
    latency_min_ms: Option<u64>,
    latency_max_ms: Option<u64>,
    propagation_delay_ms: Option<u64>,
    round_interval_ms: Option<u64>,
    adapter_tick_ms: Option<u64>,
    strategy: Option<Spanned<String>>,
    budget_enforced: Option<bool>,
    give_up_lead: Option<u64>,
    downtime_ms: Option<[u64; 2]>,
    duration_ms: Option<u64>,
    txs_per_block: Option<usize>,
    addresses: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCanister {
    delta: Option<u64>,
    tau: Option<u32>,
    page_size: Option<usize>,
    checkpoint_height: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ActionKind {
    Advance,
    InjectFork,
    Downtime,
    Api,
    CheckPagination,
    Snapshot,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAction {
    at_ms: u64,
    kind: ActionKind,
    depth: Option<u32>,
    len: Option<u32>,
    until_ms: Option<u64>,
    call: Option<ApiCall>,
    address: Option<usize>,
    min_confirmations: Option<u64>,
    label: Option<String>,
    file: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAssert {
    metric: String,
    op: String,
    value: Option<f64>,
    rhs: Option<String>,
    offset: Option<f64>,
}

/// 1-based line of a byte offset.
fn line_of(text: &str, span: &Range<usize>) -> usize {
    text[..span.start.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// Metrics defined for every world scenario.
pub fn world_metric_names() -> Vec<&'static str> {
    let mut names = SimWorld::METRIC_NAMES.to_vec();
    names.push("api_errors");
    names
}

pub const FORK_ATTACK_METRICS: &[&str] = &["runs", "max_reported_confirmations", "runs_reaching_c_star", "c_star"];
pub const ECLIPSE_METRICS: &[&str] = &[
    "trials",
    "estimate",
    "analytic",
    "relative_error",
    "per_adapter",
    "analytic_per_adapter",
    "relative_error_per_adapter",
    "any_adapter",
    "analytic_any_adapter",
    "relative_error_any_adapter",
];
pub const DOWNTIME_METRICS: &[&str] = &["trials", "estimate", "analytic", "relative_error", "bound", "successes"];
pub const PAGINATION_METRICS: &[&str] = &["pagination_mismatches", "pagination_addresses", "pagination_max_pages"];

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        let raw: RawScenario = toml::from_str(text).map_err(|e| match e.span() {
            Some(span) => ScenarioError::Line { line: line_of(text, &span), msg: e.message().to_string() },
            None => ScenarioError::Invalid(e.message().to_string()),
        })?;
        let at = |span: Range<usize>, msg: String| ScenarioError::Line { line: line_of(text, &span), msg };

        let p = raw.params;
        let d = SimParams::default();
        let strategy = match p.strategy {
            Some(s) => {
                let span = s.span();
                s.into_inner().parse::<Strategy>().map_err(|m| at(span, m))?
            }
            None => d.strategy,
        };
        let params = SimParams {
            n: p.n.unwrap_or(d.n),
            f: p.f.unwrap_or(d.f),
            ell: p.ell.unwrap_or(d.ell),
            phi: p.phi.unwrap_or(d.phi),
            population: p.population.unwrap_or(d.population),
            honest_block_interval_ms: p.honest_block_interval_ms.unwrap_or(d.honest_block_interval_ms),
            adversary_hash_fraction: p.adversary_hash_fraction.unwrap_or(d.adversary_hash_fraction),
            c_star: p.c_star.unwrap_or(d.c_star),
            latency_min_ms: p.latency_min_ms.unwrap_or(d.latency_min_ms),
            latency_max_ms: p.latency_max_ms.unwrap_or(d.latency_max_ms),
            propagation_delay_ms: p.propagation_delay_ms.unwrap_or(d.propagation_delay_ms),
            round_interval_ms: p.round_interval_ms.unwrap_or(d.round_interval_ms),
            adapter_tick_ms: p.adapter_tick_ms.unwrap_or(d.adapter_tick_ms),
            strategy,
            budget_enforced: p.budget_enforced.unwrap_or(d.budget_enforced),
            give_up_lead: p.give_up_lead.unwrap_or(d.give_up_lead),
            downtime: p.downtime_ms.map(|[a, b]| (a, b)).or(d.downtime),
            duration_ms: p.duration_ms.unwrap_or(d.duration_ms),
            txs_per_block: p.txs_per_block.unwrap_or(d.txs_per_block),
            addresses: p.addresses.unwrap_or(d.addresses),
            delta: raw.canister.delta.unwrap_or(d.delta),
            tau: raw.canister.tau.unwrap_or(d.tau),
            checkpoint_height: raw.canister.checkpoint_height.unwrap_or(d.checkpoint_height),
            page_size: raw.canister.page_size.unwrap_or(d.page_size),
        };
        params.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;

        let trials = match (raw.kind, raw.trials) {
            (ScenarioKind::World, None) => 1,
            (ScenarioKind::World, Some(_)) => return Err(ScenarioError::Invalid("`trials` only applies to fork_attack and montecarlo scenarios".into())),
            (_, Some(0)) => return Err(ScenarioError::Invalid("trials must be at least 1".into())),
            (_, Some(t)) => t,
            (_, None) => return Err(ScenarioError::Invalid("`trials` is required for this scenario kind".into())),
        };
        match (raw.kind, raw.experiment) {
            (ScenarioKind::Montecarlo, None) => return Err(ScenarioError::Invalid("montecarlo scenarios need an `experiment`".into())),
            (ScenarioKind::Montecarlo, Some(_)) | (_, None) => {}
            (_, Some(_)) => return Err(ScenarioError::Invalid("`experiment` only applies to montecarlo scenarios".into())),
        }
        if raw.kind == ScenarioKind::ForkAttack && params.strategy == Strategy::None {
            return Err(ScenarioError::Invalid("fork_attack scenarios need an adversary strategy".into()));
        }

        let mut actions = Vec::new();
        let mut last = 0;
        let mut labels: BTreeSet<String> = BTreeSet::new();
        let mut paginates = false;
        for spanned in raw.actions {
            let span = spanned.span();
            let line = line_of(text, &span);
            let a = spanned.into_inner();
            if raw.kind != ScenarioKind::World {
                return Err(at(span, "actions only apply to world scenarios".into()));
            }
            if a.at_ms < last {
                return Err(at(span, format!("action at {} ms comes before the previous one at {last} ms", a.at_ms)));
            }
            if a.at_ms > params.duration_ms {
                return Err(at(span, format!("action at {} ms is after the end of the run", a.at_ms)));
            }
            last = a.at_ms;
            let missing = |field: &str| at(span.clone(), format!("`{field}` is required for this action"));
            let action = match a.kind {
                ActionKind::Advance => Action::Advance,
                ActionKind::InjectFork => Action::InjectFork {
                    depth: a.depth.ok_or_else(|| missing("depth"))?,
                    len: a.len.ok_or_else(|| missing("len"))?,
                },
                ActionKind::Downtime => {
                    let until_ms = a.until_ms.ok_or_else(|| missing("until_ms"))?;
                    if until_ms < a.at_ms {
                        return Err(at(span, "downtime ends before it starts".into()));
                    }
                    Action::Downtime { until_ms }
                }
                ActionKind::Api => {
                    let address = a.address.ok_or_else(|| missing("address"))?;
                    if address >= params.addresses {
                        return Err(at(span, format!("address index {address} is out of range (0..{})", params.addresses)));
                    }
                    let label = a.label.ok_or_else(|| missing("label"))?;
                    let call = a.call.ok_or_else(|| missing("call"))?;
                    labels.insert(label.clone());
                    if call == ApiCall::GetUtxos {
                        labels.insert(format!("{label}_pages"));
                    }
                    Action::Api { call, address, min_confirmations: a.min_confirmations, label }
                }
                ActionKind::CheckPagination => {
                    paginates = true;
                    Action::CheckPagination
                }
                ActionKind::Snapshot => Action::Snapshot { file: a.file.ok_or_else(|| missing("file"))? },
            };
            actions.push(ScheduledAction { line, at_ms: a.at_ms, action });
        }

        let mut known: BTreeSet<String> = match (raw.kind, raw.experiment) {
            (ScenarioKind::World, _) => world_metric_names().iter().map(|s| s.to_string()).collect(),
            (ScenarioKind::ForkAttack, _) => FORK_ATTACK_METRICS.iter().map(|s| s.to_string()).collect(),
            (ScenarioKind::Montecarlo, Some(Experiment::Eclipse)) => ECLIPSE_METRICS.iter().map(|s| s.to_string()).collect(),
            (ScenarioKind::Montecarlo, _) => DOWNTIME_METRICS.iter().map(|s| s.to_string()).collect(),
        };
        known.extend(labels);
        if paginates {
            known.extend(PAGINATION_METRICS.iter().map(|s| s.to_string()));
        }
        let mut assertions = Vec::new();
        for spanned in raw.asserts {
            let span = spanned.span();
            let a = spanned.into_inner();
            let op = CmpOp::parse(&a.op).ok_or_else(|| at(span.clone(), format!("unknown comparison `{}`", a.op)))?;
            let unknown = |m: &str| at(span.clone(), format!("unknown metric `{m}`"));
            if !known.contains(&a.metric) {
                return Err(unknown(&a.metric));
            }
            let rhs = match (a.value, a.rhs) {
                (Some(v), None) if a.offset.is_none() => Operand::Value(v),
                (None, Some(name)) => {
                    if !known.contains(&name) {
                        return Err(unknown(&name));
                    }
                    Operand::Metric { name, offset: a.offset.unwrap_or(0.0) }
                }
                _ => return Err(at(span, "give either `value`, or `rhs` with an optional `offset`".into())),
            };
            assertions.push(Assertion { line: line_of(text, &span), metric: a.metric, op, rhs });
        }

        Ok(Scenario {
            name: raw.name,
            kind: raw.kind,
            seed: raw.seed,
            trials,
            experiment: raw.experiment,
            params,
            actions,
            assertions,
        })
    }
}

/// Scenario files shipped with the tool, by name.
pub const BUNDLED: &[(&str, &str)] = &[
    ("sync-linear", include_str!("../scenarios/sync-linear.toml")),
    ("fork-above-anchor", include_str!("../scenarios/fork-above-anchor.toml")),
    ("fork-attack", include_str!("../scenarios/fork-attack.toml")),
    ("downtime-attack", include_str!("../scenarios/downtime-attack.toml")),
    ("pagination-stress", include_str!("../scenarios/pagination-stress.toml")),
    ("eclipse-mc", include_str!("../scenarios/eclipse-mc.toml")),
    ("downtime-mc", include_str!("../scenarios/downtime-mc.toml")),
];

pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

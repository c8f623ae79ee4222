use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strategy {
    /// Mine a private fork carrying the corrupting transaction and publish
    /// it once it is longer than the honest chain.
    WithholdAndRelease,
    /// Mine a fork from the canister's tip while it is down and have
    /// malicious block makers feed it afterwards.
    FeedDuringDowntime,
    #[default]
    None,
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "withhold_and_release" => Ok(Strategy::WithholdAndRelease),
            "feed_during_downtime" => Ok(Strategy::FeedDuringDowntime),
            "none" => Ok(Strategy::None),
            _ => Err(format!("unknown strategy `{s}`")),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::WithholdAndRelease => "withhold_and_release",
            Strategy::FeedDuringDowntime => "feed_during_downtime",
            Strategy::None => "none",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimParams {
    /// Subnet size; one adapter per node.
    pub n: usize,
    /// Malicious subnet nodes.
    pub f: usize,
    /// Peer connections per adapter.
    pub ell: usize,
    /// Fraction of corrupted Bitcoin nodes.
    pub phi: f64,
    /// Number of Bitcoin nodes adapters can connect to.
    pub population: usize,
    pub honest_block_interval_ms: u64,
    pub adversary_hash_fraction: f64,
    pub c_star: u64,
    pub latency_min_ms: u64,
    pub latency_max_ms: u64,
    /// Honest miners build on the tip they knew this long ago, which
    /// produces natural forks.
    pub propagation_delay_ms: u64,
    /// Time between subnet rounds.
    pub round_interval_ms: u64,
    pub adapter_tick_ms: u64,
    pub strategy: Strategy,
    /// Whether the adversary's mining obeys the hash-rate bound.
    pub budget_enforced: bool,
    /// The adversary abandons a fork once the honest chain leads by this
    /// many blocks and restarts from the honest tip.
    pub give_up_lead: u64,
    pub downtime: Option<(u64, u64)>,
    pub duration_ms: u64,
    /// Extra transactions per honest block, spending earlier outputs.
    pub txs_per_block: usize,
    /// Size of the address set that receives outputs.
    pub addresses: usize,
    pub delta: u64,
    pub tau: u32,
    pub checkpoint_height: u32,
    pub page_size: usize,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            n: 13,
            f: 4,
            ell: 5,
            phi: 0.0,
            population: 10_000,
            honest_block_interval_ms: 600_000,
            adversary_hash_fraction: 0.0,
            c_star: 6,
            latency_min_ms: 50,
            latency_max_ms: 2000,
            propagation_delay_ms: 0,
            round_interval_ms: 10_000,
            adapter_tick_ms: 60_000,
            strategy: Strategy::None,
            budget_enforced: true,
            give_up_lead: 6,
            downtime: None,
            duration_ms: 6 * 3600 * 1000,
            txs_per_block: 2,
            addresses: 16,
            delta: 6,
            tau: 2,
            checkpoint_height: u32::MAX,
            page_size: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid simulation parameters: {0}")]
pub struct ParamError(pub String);

impl SimParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        let err = |m: String| Err(ParamError(m));
        if self.n == 0 {
            return err("n must be positive".into());
        }
        if 3 * self.f >= self.n {
            return err(format!("f = {} must be below n/3 for n = {}", self.f, self.n));
        }
        if self.ell == 0 {
            return err("ell must be positive".into());
        }
        if !(0.0..1.0).contains(&self.phi) {
            return err(format!("phi = {} must lie in [0, 1)", self.phi));
        }
        if !(0.0..1.0).contains(&self.adversary_hash_fraction) {
            return err(format!("adversary_hash_fraction = {} must lie in [0, 1)", self.adversary_hash_fraction));
        }
        if self.ell > self.population {
            return err(format!("ell = {} exceeds the population of {}", self.ell, self.population));
        }
        if self.latency_min_ms > self.latency_max_ms {
            return err("latency_min_ms exceeds latency_max_ms".into());
        }
        if self.c_star == 0 {
            return err("c_star must be positive".into());
        }
        if self.honest_block_interval_ms == 0 || self.round_interval_ms == 0 || self.adapter_tick_ms == 0 {
            return err("intervals must be positive".into());
        }
        if let Some((start, end)) = self.downtime {
            if start > end {
                return err("downtime ends before it starts".into());
            }
        }
        if self.delta == 0 || self.page_size == 0 || self.addresses == 0 {
            return err("delta, page_size and addresses must be positive".into());
        }
        Ok(())
    }

    /// Number of corrupted Bitcoin nodes: the first `round(phi * population)`
    /// ids.
    pub fn corrupted_count(&self) -> usize {
        (self.phi * self.population as f64).round() as usize
    }
}

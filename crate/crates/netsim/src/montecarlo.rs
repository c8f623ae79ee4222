//! Monte Carlo experiments for peer eclipsing and post-downtime attacks.
//!
//! Trials run in fixed-size chunks; chunk `i` draws from ChaCha stream `i`
//! of the experiment seed, so results do not depend on thread scheduling.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::params::{ParamError, SimParams};

const CHUNK: u64 = 10_000;

fn chunk_rng(seed: u64, chunk: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk);
    rng
}

/// Splits `trials` into chunks and sums `run(rng, count)` over them.
fn run_chunked<T, F>(trials: u64, seed: u64, run: F) -> T
where
    T: Send + Default + std::ops::Add<Output = T>,
    F: Fn(&mut ChaCha8Rng, u64) -> T + Sync,
{
    let chunks = trials.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|i| {
            let count = CHUNK.min(trials - i * CHUNK);
            run(&mut chunk_rng(seed, i), count)
        })
        .reduce(T::default, |a, b| a + b)
}

/// `ell` distinct peers drawn uniformly from `0..population`.
pub fn sample_peers<R: Rng + ?Sized>(rng: &mut R, population: usize, ell: usize) -> Vec<usize> {
    index::sample(rng, population, ell).into_vec()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct EclipseCounts {
    adapter_hits: u64,
    any_hits: u64,
}

impl std::ops::Add for EclipseCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        EclipseCounts { adapter_hits: self.adapter_hits + o.adapter_hits, any_hits: self.any_hits + o.any_hits }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EclipseEstimate {
    pub trials: u64,
    pub seed: u64,
    /// Eclipsed adapters over all adapter samples (`trials * n`).
    pub per_adapter: f64,
    /// Trials in which at least one adapter was eclipsed.
    pub any_adapter: f64,
    pub adapter_hits: u64,
    pub any_hits: u64,
}

/// Closed forms `phi^ell` and `1 - (1 - phi^ell)^n`.
pub fn analytic_eclipse(phi: f64, ell: usize, n: usize) -> (f64, f64) {
    let one = phi.powi(ell as i32);
    (one, 1.0 - (1.0 - one).powi(n as i32))
}

/// Each trial gives every one of the `n` adapters `ell` uniformly sampled
/// peers from a population whose first `round(phi * population)` nodes are
/// corrupted. An adapter is eclipsed when all its peers are corrupted.
pub fn run_eclipse_trial(params: &SimParams, trials: u64, seed: u64) -> Result<EclipseEstimate, ParamError> {
    if trials == 0 {
        return Err(ParamError("trials must be at least 1".into()));
    }
    params.validate()?;
    let corrupted = params.corrupted_count();
    let (n, ell, population) = (params.n, params.ell, params.population);
    let counts = run_chunked(trials, seed, |rng, count| {
        let mut c = EclipseCounts::default();
        for _ in 0..count {
            let mut any = false;
            for _ in 0..n {
                if sample_peers(rng, population, ell).iter().all(|&p| p < corrupted) {
                    c.adapter_hits += 1;
                    any = true;
                }
            }
            c.any_hits += u64::from(any);
        }
        c
    });
    Ok(EclipseEstimate {
        trials,
        seed,
        per_adapter: counts.adapter_hits as f64 / (trials * n as u64) as f64,
        any_adapter: counts.any_hits as f64 / trials as f64,
        adapter_hits: counts.adapter_hits,
        any_hits: counts.any_hits,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DowntimeEstimate {
    pub trials: u64,
    pub seed: u64,
    pub successes: u64,
    pub probability: f64,
}

/// `(f/n)^c`.
pub fn analytic_downtime(f: usize, n: usize, c_star: u64) -> f64 {
    (f as f64 / n as f64).powi(c_star as i32)
}

/// The bound `3^-c` that holds whenever `f < n/3`.
pub fn downtime_bound(c_star: u64) -> f64 {
    3f64.powi(-(c_star as i32))
}

/// After a downtime the canister accepts one block per round from a
/// uniformly drawn block maker; the first honest maker supplies the true
/// headers and ends the attack. The attack succeeds when the first
/// `c_star` makers are all malicious.
pub fn run_downtime_attack(params: &SimParams, trials: u64, seed: u64) -> Result<DowntimeEstimate, ParamError> {
    if trials == 0 {
        return Err(ParamError("trials must be at least 1".into()));
    }
    params.validate()?;
    let (n, f, c_star) = (params.n, params.f, params.c_star);
    let successes = run_chunked(trials, seed, |rng, count| {
        (0..count)
            .filter(|_| (0..c_star).all(|_| rng.gen_range(0..n) < f))
            .count() as u64
    });
    Ok(DowntimeEstimate { trials, seed, successes, probability: successes as f64 / trials as f64 })
}

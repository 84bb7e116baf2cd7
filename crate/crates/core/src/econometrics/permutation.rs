use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixed::nearest_rank_index;

/// Identifier stored with every null distribution. Replication `r` draws from
/// ChaCha8 seeded with `seed` via `seed_from_u64` on stream `r`, so results
/// do not depend on thread count or scheduling.
pub const RNG_ALGORITHM: &str = "chacha8/seed_from_u64/stream=replication";

pub const DEFAULT_REPLICATIONS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PermutationConfig {
    pub replications: usize,
    pub seed: u64,
}

impl Default for PermutationConfig {
    fn default() -> Self {
        PermutationConfig {
            replications: DEFAULT_REPLICATIONS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationNull {
    pub statistic_name: String,
    pub observed: f64,
    pub null_draws: Vec<f64>,
    pub p95: f64,
    /// `(#{draws >= observed} + 1) / (replications + 1)`.
    pub p_value: f64,
    pub seed: u64,
    pub rng: String,
}

/// Uniform hour assignment for `n` records in replication `replication`.
pub fn draw_hours(seed: u64, replication: u64, n: usize, buf: &mut Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replication);
    buf.clear();
    buf.extend((0..n).map(|_| rng.random_range(0..24u8)));
}

/// Builds the null distribution of `statistic` by reassigning every record an
/// independent uniform hour, `cfg.replications` times.
pub fn permutation_null<F>(name: &str, observed_hours: &[u8], statistic: F, cfg: &PermutationConfig) -> Result<PermutationNull>
where
    F: Fn(&[u8]) -> f64 + Sync,
{
    if cfg.replications < 1 {
        return Err(Error::config("permutation replications must be at least 1"));
    }
    let observed = statistic(observed_hours);
    let n = observed_hours.len();
    let null_draws: Vec<f64> = (0..cfg.replications as u64)
        .into_par_iter()
        .map_init(Vec::new, |buf, r| {
            draw_hours(cfg.seed, r, n, buf);
            statistic(buf)
        })
        .collect();
    let mut sorted = null_draws.clone();
    sorted.sort_by(f64::total_cmp);
    let p95 = sorted[nearest_rank_index(sorted.len(), 0.95)];
    let exceed = null_draws.iter().filter(|&&d| d >= observed).count();
    Ok(PermutationNull {
        statistic_name: name.to_string(),
        observed,
        p_value: (exceed + 1) as f64 / (cfg.replications + 1) as f64,
        null_draws,
        p95,
        seed: cfg.seed,
        rng: RNG_ALGORITHM.to_string(),
    })
}

//! Per-cell seeds and the worker pool.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use resil_core::{Error, Result};

/// Worker count comes from this variable; unset means all cores.
pub const WORKERS_ENV: &str = "RESIL_WORKERS";

/// Seed for cell `cell` of a sweep: stream `cell` of the master generator.
///
/// Depends only on (master, cell), so results do not depend on scheduling.
pub fn cell_seed(master: u64, cell: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(cell);
    rng.next_u64()
}

pub fn worker_count() -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::InvalidConfig(format!("{WORKERS_ENV} must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

pub fn pool() -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count()?)
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cells_get_distinct_stable_seeds() {
        assert_eq!(cell_seed(7, 3), cell_seed(7, 3));
        assert_ne!(cell_seed(7, 3), cell_seed(7, 4));
        assert_ne!(cell_seed(7, 3), cell_seed(8, 3));
    }
}

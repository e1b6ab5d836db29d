//! File formats and the Monte Carlo experiment runners.

mod density;
mod efficiency;
pub mod io;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use density::{
    histogram, ks_distance_normal, run_density_study, DensityConfig, DensityReport, HistogramBin, ParameterSummary,
};
pub use efficiency::{
    relative_efficiency_statistic, run_relative_efficiency, Dgp, ExperimentConfig, RelativeEfficiencyRow,
    MAX_QMLE_FAILURE_RATE,
};
pub use io::{
    bundled_weights, load_returns_csv, load_weights_csv, parse_returns_csv, parse_weights_csv, read_rows_csv,
    write_json, write_panel_csv, write_rows_csv, WeightTable,
};

/// Seed of replication `rep` in experiment cell `cell`, drawn from its own
/// ChaCha stream so results do not depend on scheduling.
pub fn replication_seed(master: u64, cell: u64, rep: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(cell);
    rng.set_word_pos(u128::from(rep) * 2);
    rng.next_u64()
}

/// Runs `f` on a dedicated pool; `workers == 0` uses every available core.
pub(crate) fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(f))
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn median(x: &[f64]) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

//! Parallel replicate runner, λ tuning and truth-based evaluation.

use mrfmfm_core::gibbs::{run_chain_with_diagnostics, Dataset, FitConfig, PosteriorArchive};
use mrfmfm_core::inference::{amse, rand_index, summarize, FitSummary};
use mrfmfm_core::{derive_seed, Error, Result};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "MRFMFM_THREADS";

/// Thread pool sized by `MRFMFM_THREADS` (all cores when unset or invalid).
pub fn thread_pool() -> rayon::ThreadPool {
    let threads = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&t| t > 0)
        .unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool")
}

/// Runs `f(index, seed)` for every replicate with seeds derived from
/// `master_seed`. Results come back in replicate order whatever the
/// scheduling.
pub fn run_replicates<T, E, F>(count: usize, master_seed: u64, f: F) -> std::result::Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize, u64) -> std::result::Result<T, E> + Sync,
{
    thread_pool().install(|| {
        (0..count)
            .into_par_iter()
            .map(|r| f(r, derive_seed(master_seed, r as u64)))
            .collect()
    })
}

/// One chain with its Dahl summary.
#[derive(Debug, Clone)]
pub struct FitOutput {
    pub archive: PosteriorArchive,
    pub summary: FitSummary,
    pub floored_marginals: usize,
}

pub fn fit(data: &Dataset, cfg: &FitConfig) -> Result<FitOutput> {
    let (archive, diag) = run_chain_with_diagnostics(data, cfg)?;
    let summary = summarize(&archive, None)?;
    Ok(FitOutput {
        archive,
        summary,
        floored_marginals: diag.floored_marginals,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuneRow {
    pub lambda: f64,
    pub lpml: f64,
    pub k_dahl: usize,
}

#[derive(Debug, Clone)]
pub struct TuneOutcome {
    pub rows: Vec<TuneRow>,
    /// Index into `rows` / `fits` of the selected λ.
    pub selected: usize,
    pub fits: Vec<FitOutput>,
}

impl TuneOutcome {
    pub fn best(&self) -> &FitOutput {
        &self.fits[self.selected]
    }
}

/// The reference grid `{0.1, ..., 1.0}` with the unconstrained baseline 0
/// prepended.
pub fn default_grid() -> Vec<f64> {
    (0..=10).map(|k| k as f64 / 10.0).collect()
}

pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let grid: Vec<f64> = s
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::Usage(format!("cannot parse lambda {t:?}")))
        })
        .collect::<Result<_>>()?;
    validate_grid(&grid)?;
    Ok(grid)
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Usage("lambda grid is empty".into()));
    }
    if let Some(bad) = grid.iter().find(|l| **l < 0.0 || !l.is_finite()) {
        return Err(Error::Usage(format!("lambda must be finite and nonnegative, got {bad}")));
    }
    Ok(())
}

/// Index of the largest LPML; ties go to the smallest λ.
pub fn select_lambda(rows: &[TuneRow]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in rows.iter().enumerate() {
        if r.lpml.is_nan() {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) => {
                let cur = &rows[b];
                if r.lpml > cur.lpml || (r.lpml == cur.lpml && r.lambda < cur.lambda) {
                    Some(i)
                } else {
                    Some(b)
                }
            }
        };
    }
    best
}

/// One chain per λ (same seed for each, so λ = 0 is exactly the
/// unconstrained fit), selected by LPML.
pub fn tune(data: &Dataset, base: &FitConfig, grid: &[f64]) -> Result<TuneOutcome> {
    validate_grid(grid)?;
    let fits: Vec<FitOutput> = grid
        .par_iter()
        .map(|&lambda| {
            let mut cfg = base.clone();
            cfg.lambda = lambda;
            fit(data, &cfg).map_err(|e| Error::Usage(format!("chain for lambda = {lambda} failed: {e}")))
        })
        .collect::<Result<_>>()?;
    let rows: Vec<TuneRow> = grid
        .iter()
        .zip(&fits)
        .map(|(&lambda, f)| TuneRow {
            lambda,
            lpml: f.summary.lpml,
            k_dahl: f.summary.n_clusters,
        })
        .collect();
    let selected = select_lambda(&rows).ok_or_else(|| Error::Numerical("every LPML is NaN".into()))?;
    Ok(TuneOutcome { rows, selected, fits })
}

/// Truth-based metrics for one point estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub k: f64,
    pub rand_index: f64,
    pub amse: Vec<f64>,
}

pub fn evaluate(z: &[usize], coefficients: &DMatrix<f64>, z_true: &[usize], beta_true: &DMatrix<f64>) -> Result<Metrics> {
    let k = z.iter().collect::<std::collections::BTreeSet<_>>().len();
    Ok(Metrics {
        k: k as f64,
        rand_index: rand_index(z, z_true)?,
        amse: amse(coefficients, beta_true)?,
    })
}

/// Arithmetic mean of each metric.
pub fn mean_metrics(rows: &[Metrics]) -> Result<Metrics> {
    let first = rows.first().ok_or_else(|| Error::Usage("no metric rows".into()))?;
    let m = rows.len() as f64;
    let p = first.amse.len();
    if rows.iter().any(|r| r.amse.len() != p) {
        return Err(Error::Usage("metric rows disagree on coefficient count".into()));
    }
    Ok(Metrics {
        k: rows.iter().map(|r| r.k).sum::<f64>() / m,
        rand_index: rows.iter().map(|r| r.rand_index).sum::<f64>() / m,
        amse: (0..p).map(|j| rows.iter().map(|r| r.amse[j]).sum::<f64>() / m).collect(),
    })
}

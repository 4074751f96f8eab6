//! Mixture-of-finite-mixtures partition prior and its spatially tilted urn.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::gibbs::{ChainState, UNASSIGNED};
use crate::graph::SpatialGraph;
use crate::math::{exp, ln_gamma, log, normalize_log_weights, LogSumExp};

/// Prior on the number of mixture components `k >= 1`.
pub trait ClusterCountPrior {
    /// `log p(k)`; `k >= 1`.
    fn log_pmf(&self, k: usize) -> f64;
}

/// `k - 1 ~ Poisson(rate)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftedPoisson {
    pub rate: f64,
}

impl Default for ShiftedPoisson {
    fn default() -> Self {
        Self { rate: 1.0 }
    }
}

impl ClusterCountPrior for ShiftedPoisson {
    fn log_pmf(&self, k: usize) -> f64 {
        if k == 0 {
            return f64::NEG_INFINITY;
        }
        let j = (k - 1) as f64;
        j * log(self.rate) - self.rate - ln_gamma(j + 1.0)
    }
}

const SERIES_RTOL: f64 = 1e-12;
const SERIES_PATIENCE: usize = 5;
const SERIES_MAX_TERMS: usize = 1_000_000;

/// `log V_n(t)` where `V_n(t) = sum_{k >= 1} k_(t) / (gamma k)^(n) p(k)`.
///
/// Terms with `k < t` vanish, so the sum starts at `k = t`. It stops once
/// five consecutive terms each fall below `1e-12` of the running total.
pub fn log_vn(n: usize, t: usize, gamma: f64, pmf: &dyn ClusterCountPrior) -> Result<f64> {
    if n == 0 {
        return Err(Error::RejectedInput("sample size must be positive".into()));
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::RejectedInput(format!("gamma must be positive, got {gamma}")));
    }
    if t == 0 || t > n + 1 {
        return Err(Error::Domain(format!("V_n(t) queried at t = {t} with n = {n}")));
    }
    let nf = n as f64;
    let threshold = log(SERIES_RTOL);
    let mut acc = LogSumExp::default();
    let mut quiet = 0;
    for k in t..t + SERIES_MAX_TERMS {
        let kf = k as f64;
        let falling = ln_gamma(kf + 1.0) - ln_gamma(kf - t as f64 + 1.0);
        let rising = ln_gamma(gamma * kf + nf) - ln_gamma(gamma * kf);
        let term = falling - rising + pmf.log_pmf(k);
        let running = acc.value();
        if running.is_finite() && !(term >= running + threshold) {
            quiet += 1;
        } else {
            quiet = 0;
        }
        acc.push(term);
        if quiet >= SERIES_PATIENCE {
            break;
        }
    }
    Ok(acc.value())
}

/// Partition prior with a precomputed `log V_n(t)` table for `t = 1..=n+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct MfmPrior {
    gamma: f64,
    n: usize,
    log_vn: Vec<f64>,
}

impl MfmPrior {
    pub fn new(n: usize, gamma: f64, pmf: &dyn ClusterCountPrior) -> Result<Self> {
        let log_vn = (1..=n + 1)
            .map(|t| log_vn(n, t, gamma, pmf))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { gamma, n, log_vn })
    }

    /// Default prior: `gamma = 1`, `k - 1 ~ Poisson(1)`.
    pub fn with_defaults(n: usize) -> Result<Self> {
        Self::new(n, 1.0, &ShiftedPoisson::default())
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn log_vn(&self, t: usize) -> Result<f64> {
        if t == 0 || t > self.n + 1 {
            return Err(Error::Domain(format!("V_n(t) table queried at t = {t} with n = {}", self.n)));
        }
        Ok(self.log_vn[t - 1])
    }

    /// `log V_n(t + 1) - log V_n(t)`.
    pub fn log_vn_ratio(&self, t: usize) -> Result<f64> {
        Ok(self.log_vn(t + 1)? - self.log_vn(t)?)
    }

    /// Log prior mass of a partition given by its block sizes:
    /// `log V_n(t) + sum_c log (gamma)^(|c|)`.
    pub fn log_partition_mass(&self, sizes: &[usize]) -> Result<f64> {
        let t = sizes.len();
        let blocks: f64 = sizes
            .iter()
            .map(|&s| ln_gamma(self.gamma + s as f64) - ln_gamma(self.gamma))
            .sum();
        Ok(self.log_vn(t)? + blocks)
    }
}

/// Markov random field tilt: `lambda * #{neighbours sharing the cluster}`.
#[derive(Debug, Clone, Copy)]
pub struct MrfSpec<'g> {
    lambda: f64,
    graph: &'g SpatialGraph,
}

impl<'g> MrfSpec<'g> {
    pub fn new(lambda: f64, graph: &'g SpatialGraph) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::RejectedInput(format!("smoothness must be finite and >= 0, got {lambda}")));
        }
        Ok(Self { lambda, graph })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn graph(&self) -> &'g SpatialGraph {
        self.graph
    }

    /// `u_c(i)` for every current cluster `c`.
    pub fn neighbor_counts(&self, i: usize, z: &[usize], n_clusters: usize) -> Result<Vec<u32>> {
        let mut counts = vec![0u32; n_clusters];
        for &j in self.graph.neighbors(i)? {
            let c = z[j];
            if c != UNASSIGNED && j != i {
                counts[c] += 1;
            }
        }
        Ok(counts)
    }
}

/// Unnormalized log-weights of the tilted urn. The last entry is the new
/// cluster.
pub fn urn_log_weights(
    sizes: &[usize],
    neighbor_counts: &[u32],
    lambda: f64,
    gamma: f64,
    log_vn_ratio: f64,
    marginal_log_lik: f64,
    per_cluster_log_lik: &[f64],
) -> Vec<f64> {
    let mut out = Vec::with_capacity(sizes.len() + 1);
    for ((&size, &u), &ll) in sizes.iter().zip(neighbor_counts).zip(per_cluster_log_lik) {
        out.push(log(size as f64 + gamma) + lambda * u as f64 + ll);
    }
    out.push(log(gamma) + log_vn_ratio + marginal_log_lik);
    out
}

/// Full conditional of `z_i` over the `t` existing clusters plus a new one.
///
/// `state` must already have site `i` removed (`z[i] == UNASSIGNED`, sizes
/// decremented, emptied clusters dropped).
pub fn urn_weights(
    i: usize,
    state: &ChainState,
    mrf: &MrfSpec<'_>,
    prior: &MfmPrior,
    marginal_log_lik: f64,
    per_cluster_log_lik: &[f64],
) -> Result<Vec<f64>> {
    let t = state.n_clusters();
    if per_cluster_log_lik.len() != t {
        return Err(Error::Usage(format!(
            "expected {t} per-cluster log-likelihoods, got {}",
            per_cluster_log_lik.len()
        )));
    }
    if state.z()[i] != UNASSIGNED {
        return Err(Error::Usage(format!("site {i} must be removed before computing its urn weights")));
    }
    if t == 0 {
        return Ok(vec![1.0]);
    }
    let counts = mrf.neighbor_counts(i, state.z(), t)?;
    let log_w = urn_log_weights(
        state.sizes(),
        &counts,
        mrf.lambda(),
        prior.gamma(),
        prior.log_vn_ratio(t)?,
        marginal_log_lik,
        per_cluster_log_lik,
    );
    let probs = normalize_log_weights(&log_w);
    if probs.iter().all(|&p| p == 0.0) {
        return Err(Error::Numerical(format!("all urn weights vanished for site {i}")));
    }
    Ok(probs)
}

/// Probability of the new-cluster option relative to joining a cluster of
/// size `size` with no likelihood or spatial terms; exposed for diagnostics.
pub fn new_cluster_odds(prior: &MfmPrior, t: usize, size: usize) -> Result<f64> {
    Ok(exp(log(prior.gamma()) + prior.log_vn_ratio(t)? - log(size as f64 + prior.gamma())))
}

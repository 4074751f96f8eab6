//! Collapsed Gibbs sampler: conjugate cMLG coefficient updates alternating
//! with single-site reassignment through the spatially tilted urn.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::SpatialGraph;
use crate::math::{exp, ln_factorial, log, sample_categorical, LogSumExp};
use crate::mlg::{mlg_log_density, mlg_sample, CmlgParams, CmlgSampler, MlgParams};
use crate::prior::{urn_weights, MfmPrior, MrfSpec, ShiftedPoisson};

/// Label of a site temporarily removed from the partition.
pub const UNASSIGNED: usize = usize::MAX;

/// Lower bound applied to a Monte-Carlo marginal likelihood, `log(1e-300)`.
pub const MARGINAL_FLOOR: f64 = -690.775_527_898_213_7;

/// Counts, design and spatial graph for one fit.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<u64>,
    // row-major n x p
    x: Vec<f64>,
    p: usize,
    graph: SpatialGraph,
    scale: f64,
    ln_y_fact: Vec<f64>,
}

impl Dataset {
    pub fn new(y: Vec<u64>, x: DMatrix<f64>, graph: SpatialGraph, scale: f64) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::RejectedInput("dataset has no sites".into()));
        }
        if x.nrows() != n || x.ncols() == 0 {
            return Err(Error::RejectedInput(format!(
                "design is {} x {}, expected {n} rows and at least one column",
                x.nrows(),
                x.ncols()
            )));
        }
        if graph.n_sites() != n {
            return Err(Error::RejectedInput(format!(
                "graph has {} sites but dataset has {n}",
                graph.n_sites()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::RejectedInput("design contains non-finite values".into()));
        }
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::RejectedInput(format!("scale must be positive, got {scale}")));
        }
        let p = x.ncols();
        let mut rows = Vec::with_capacity(n * p);
        for i in 0..n {
            for j in 0..p {
                rows.push(x[(i, j)]);
            }
        }
        let ln_y_fact = y.iter().map(|&v| ln_factorial(v)).collect();
        Ok(Self {
            y,
            x: rows,
            p,
            graph,
            scale,
            ln_y_fact,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }
    pub fn p(&self) -> usize {
        self.p
    }
    pub fn y(&self) -> &[u64] {
        &self.y
    }
    pub fn x_row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }
    pub fn design(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n(), self.p, &self.x)
    }
    pub fn graph(&self) -> &SpatialGraph {
        &self.graph
    }
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Poisson log-likelihood of site `i` under coefficients `beta`.
    pub fn site_log_lik(&self, i: usize, beta: &[f64]) -> f64 {
        let eta: f64 = self.x_row(i).iter().zip(beta).map(|(a, b)| a * b).sum();
        self.y[i] as f64 * eta - exp(eta) - self.ln_y_fact[i]
    }
}

/// `y log_rate - exp(log_rate) - log(y!)`.
pub fn poisson_log_lik(y: u64, log_rate: f64) -> f64 {
    y as f64 * log_rate - exp(log_rate) - ln_factorial(y)
}

/// Partition plus one coefficient vector per non-empty cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    z: Vec<usize>,
    betas: Vec<Vec<f64>>,
    sizes: Vec<usize>,
}

impl ChainState {
    pub fn new(z: Vec<usize>, betas: Vec<Vec<f64>>) -> Result<Self> {
        let t = betas.len();
        let mut sizes = vec![0usize; t];
        for (i, &c) in z.iter().enumerate() {
            if c >= t {
                return Err(Error::RejectedInput(format!("site {i} has label {c} but only {t} clusters exist")));
            }
            sizes[c] += 1;
        }
        if sizes.contains(&0) {
            return Err(Error::RejectedInput("every cluster must be occupied".into()));
        }
        let p = betas.first().map_or(0, Vec::len);
        if betas.iter().any(|b| b.len() != p) {
            return Err(Error::RejectedInput("cluster coefficient vectors differ in length".into()));
        }
        Ok(Self { z, betas, sizes })
    }

    /// All `n` sites in one cluster with coefficients `beta`.
    pub fn single_cluster(n: usize, beta: Vec<f64>) -> Self {
        Self {
            z: vec![0; n],
            betas: vec![beta],
            sizes: vec![n],
        }
    }

    pub fn z(&self) -> &[usize] {
        &self.z
    }
    pub fn betas(&self) -> &[Vec<f64>] {
        &self.betas
    }
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }
    pub fn n_clusters(&self) -> usize {
        self.betas.len()
    }

    pub fn set_beta(&mut self, c: usize, beta: Vec<f64>) {
        self.betas[c] = beta;
    }

    /// Takes site `i` out of its cluster, dropping the cluster if it empties
    /// (labels above it shift down by one).
    pub fn remove(&mut self, i: usize) {
        let c = self.z[i];
        if c == UNASSIGNED {
            return;
        }
        self.z[i] = UNASSIGNED;
        self.sizes[c] -= 1;
        if self.sizes[c] == 0 {
            self.sizes.remove(c);
            self.betas.remove(c);
            for label in self.z.iter_mut() {
                if *label != UNASSIGNED && *label > c {
                    *label -= 1;
                }
            }
        }
    }

    pub fn assign(&mut self, i: usize, c: usize) {
        debug_assert_eq!(self.z[i], UNASSIGNED);
        self.z[i] = c;
        self.sizes[c] += 1;
    }

    pub fn open_cluster(&mut self, i: usize, beta: Vec<f64>) {
        debug_assert_eq!(self.z[i], UNASSIGNED);
        self.z[i] = self.betas.len();
        self.betas.push(beta);
        self.sizes.push(1);
    }

    /// Relabels clusters in order of first appearance in `z`.
    pub fn canonicalize(&mut self) {
        let t = self.betas.len();
        let mut map = vec![UNASSIGNED; t];
        let mut next = 0;
        for &c in &self.z {
            if c != UNASSIGNED && map[c] == UNASSIGNED {
                map[c] = next;
                next += 1;
            }
        }
        if map.iter().enumerate().all(|(a, &b)| a == b) {
            return;
        }
        let mut betas = vec![Vec::new(); t];
        let mut sizes = vec![0; t];
        for c in 0..t {
            betas[map[c]] = core::mem::take(&mut self.betas[c]);
            sizes[map[c]] = self.sizes[c];
        }
        for label in self.z.iter_mut() {
            if *label != UNASSIGNED {
                *label = map[*label];
            }
        }
        self.betas = betas;
        self.sizes = sizes;
    }

    /// Members of every cluster, in site order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.betas.len()];
        for (i, &c) in self.z.iter().enumerate() {
            if c != UNASSIGNED {
                out[c].push(i);
            }
        }
        out
    }

    /// Checks occupancy bookkeeping and canonical labelling.
    pub fn check_invariants(&self) -> Result<()> {
        let mut counts = vec![0usize; self.betas.len()];
        let mut seen = 0;
        for &c in &self.z {
            if c == UNASSIGNED || c >= counts.len() {
                return Err(Error::Numerical("unassigned or out-of-range label".into()));
            }
            if c > seen {
                return Err(Error::Numerical("labels are not in first-appearance order".into()));
            }
            if c == seen {
                seen += 1;
            }
            counts[c] += 1;
        }
        if counts != self.sizes || counts.contains(&0) {
            return Err(Error::Numerical("cluster sizes out of sync".into()));
        }
        Ok(())
    }
}

/// Sampler settings. Defaults follow the reference setup: `gamma = 1`,
/// `mu = 0`, `V = 100 I`, `alpha = kappa = 10^4 1` (each coefficient roughly
/// standard normal a priori), 5000 iterations with 1000 burn-in.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub iters: usize,
    pub burnin: usize,
    pub lambda: f64,
    pub seed: u64,
    pub gamma: f64,
    pub prior_mu: Vec<f64>,
    pub prior_v: DMatrix<f64>,
    pub prior_alpha: Vec<f64>,
    pub prior_kappa: Vec<f64>,
    pub marginal_draws: usize,
    pub random_scan: bool,
}

impl FitConfig {
    pub fn new(p: usize) -> Self {
        Self {
            iters: 5000,
            burnin: 1000,
            lambda: 0.0,
            seed: 0,
            gamma: 1.0,
            prior_mu: vec![0.0; p],
            prior_v: DMatrix::identity(p, p) * 100.0,
            prior_alpha: vec![1e4; p],
            prior_kappa: vec![1e4; p],
            marginal_draws: 1024,
            random_scan: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.prior_mu.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.iters == 0 {
            return Err(Error::RejectedInput("iters must be positive".into()));
        }
        if self.burnin >= self.iters {
            return Err(Error::RejectedInput(format!(
                "burn-in ({}) must be smaller than iters ({})",
                self.burnin, self.iters
            )));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::RejectedInput(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::RejectedInput(format!("gamma must be positive, got {}", self.gamma)));
        }
        if self.marginal_draws == 0 {
            return Err(Error::RejectedInput("marginal_draws must be positive".into()));
        }
        self.prior_params().map(|_| ())
    }

    pub fn prior_params(&self) -> Result<MlgParams> {
        MlgParams::new(
            self.prior_mu.clone(),
            self.prior_v.clone(),
            self.prior_alpha.clone(),
            self.prior_kappa.clone(),
        )
    }
}

/// One retained iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveRecord {
    pub z: Vec<usize>,
    pub betas: Vec<Vec<f64>>,
    pub log_lik: Vec<f64>,
}

impl ArchiveRecord {
    pub fn n_clusters(&self) -> usize {
        self.betas.len()
    }

    /// Coefficients of the cluster holding site `i`.
    pub fn site_beta(&self, i: usize) -> &[f64] {
        &self.betas[self.z[i]]
    }
}

/// Post-burn-in draws of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorArchive {
    pub n: usize,
    pub p: usize,
    pub config: FitConfig,
    pub records: Vec<ArchiveRecord>,
}

impl PosteriorArchive {
    pub fn len(&self) -> usize {
        self.records.len()
    }
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Per-cluster likelihood, prior predictive and conjugate posterior draw:
/// everything the sampler needs from the observation model.
pub trait ClusterModel {
    fn n_sites(&self) -> usize;
    /// `log f(y_i | beta)`.
    fn log_lik(&self, i: usize, beta: &[f64]) -> f64;
    /// `log m(y_i)`: prior predictive of a site opening a new cluster.
    fn log_marginal(&self, i: usize) -> f64;
    /// Draw from the coefficient posterior given the listed members.
    /// `warm` is the current value, if any, and may be used as a starting
    /// point by iterative samplers.
    fn draw_posterior<R: Rng + ?Sized>(&self, members: &[usize], warm: Option<&[f64]>, rng: &mut R) -> Result<Vec<f64>>;
}

/// Monte-Carlo prior predictive `log (1/M) sum_m f(y | x' beta_m)` over
/// shared prior draws. Returns the value and whether the floor was applied.
pub fn marginal_log_lik(y: u64, x: &[f64], shared_draws: &[Vec<f64>]) -> (f64, bool) {
    let ln_fact = ln_factorial(y);
    let mut acc = LogSumExp::default();
    for beta in shared_draws {
        let eta: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum();
        acc.push(y as f64 * eta - exp(eta) - ln_fact);
    }
    let value = acc.value() - log(shared_draws.len() as f64);
    if value.is_nan() || value < MARGINAL_FLOOR {
        (MARGINAL_FLOOR, true)
    } else {
        (value, false)
    }
}

/// Poisson log-linear observations with an MLG prior on each cluster's
/// coefficients.
#[derive(Debug, Clone)]
pub struct MlgPoissonModel<'d> {
    data: &'d Dataset,
    prior_rows: DMatrix<f64>,
    prior_alpha: Vec<f64>,
    prior_kappa: Vec<f64>,
    log_marginal: Vec<f64>,
    floored_sites: usize,
}

impl<'d> MlgPoissonModel<'d> {
    /// `shared_draws` are prior draws reused for every site's marginal.
    pub fn new(data: &'d Dataset, prior: &MlgParams, shared_draws: &[Vec<f64>]) -> Result<Self> {
        if prior.dim() != data.p() {
            return Err(Error::RejectedInput(format!(
                "prior has dimension {} but the design has {} columns",
                prior.dim(),
                data.p()
            )));
        }
        let prior_rows = prior.v_inv().clone();
        // MLG(mu, V) on beta is cMLG on the rows V^{-1} with rates
        // kappa * exp(-V^{-1} mu).
        let offset = prior.v_inv() * prior.mu();
        let prior_kappa = prior
            .kappa()
            .iter()
            .zip(offset.iter())
            .map(|(&k, &o)| k * exp(-o))
            .collect();
        let mut floored_sites = 0;
        let log_marginal = (0..data.n())
            .map(|i| {
                let (v, floored) = marginal_log_lik(data.y()[i], data.x_row(i), shared_draws);
                floored_sites += floored as usize;
                v
            })
            .collect();
        Ok(Self {
            data,
            prior_rows,
            prior_alpha: prior.alpha().to_vec(),
            prior_kappa,
            log_marginal,
            floored_sites,
        })
    }

    /// Number of sites whose marginal hit [`MARGINAL_FLOOR`].
    pub fn floored_sites(&self) -> usize {
        self.floored_sites
    }

    /// Stacked cMLG system for a cluster: the prior block followed by one row
    /// per member (`x_i`, shape `y_i`, rate 1).
    pub fn posterior_params(&self, members: &[usize]) -> Result<CmlgParams> {
        let p = self.data.p();
        let m = p + members.len();
        let mut h = DMatrix::zeros(m, p);
        h.view_mut((0, 0), (p, p)).copy_from(&self.prior_rows);
        let mut alpha = self.prior_alpha.clone();
        let mut kappa = self.prior_kappa.clone();
        for (r, &i) in members.iter().enumerate() {
            for (j, &v) in self.data.x_row(i).iter().enumerate() {
                h[(p + r, j)] = v;
            }
            alpha.push(self.data.y()[i] as f64);
            kappa.push(1.0);
        }
        CmlgParams::new(h, alpha, kappa)
    }
}

impl ClusterModel for MlgPoissonModel<'_> {
    fn n_sites(&self) -> usize {
        self.data.n()
    }

    fn log_lik(&self, i: usize, beta: &[f64]) -> f64 {
        self.data.site_log_lik(i, beta)
    }

    fn log_marginal(&self, i: usize) -> f64 {
        self.log_marginal[i]
    }

    fn draw_posterior<R: Rng + ?Sized>(&self, members: &[usize], warm: Option<&[f64]>, rng: &mut R) -> Result<Vec<f64>> {
        let params = self.posterior_params(members)?;
        let mut sampler = CmlgSampler::new(&params, warm)?;
        Ok(sampler.sample(rng))
    }
}

/// Redraws every cluster's coefficients from its conditional posterior.
pub fn update_betas<M: ClusterModel, R: Rng + ?Sized>(state: &mut ChainState, model: &M, rng: &mut R) -> Result<()> {
    let members = state.members();
    for (c, list) in members.iter().enumerate() {
        let beta = model.draw_posterior(list, Some(&state.betas[c]), rng)?;
        state.betas[c] = beta;
    }
    Ok(())
}

/// Full conditional of `z_i` for a state with `i` already removed. The
/// last entry is the probability of opening a new cluster.
pub fn assignment_probabilities<M: ClusterModel>(
    i: usize,
    state: &ChainState,
    model: &M,
    prior: &MfmPrior,
    mrf: &MrfSpec<'_>,
) -> Result<Vec<f64>> {
    let per_cluster: Vec<f64> = state.betas.iter().map(|b| model.log_lik(i, b)).collect();
    urn_weights(i, state, mrf, prior, model.log_marginal(i), &per_cluster)
}

/// Resamples the cluster of site `i`. A newly opened cluster gets
/// coefficients drawn from the single-site posterior.
pub fn update_assignment<M: ClusterModel, R: Rng + ?Sized>(
    i: usize,
    state: &mut ChainState,
    model: &M,
    prior: &MfmPrior,
    mrf: &MrfSpec<'_>,
    rng: &mut R,
) -> Result<()> {
    state.remove(i);
    let probs = assignment_probabilities(i, state, model, prior, mrf)?;
    let choice = sample_categorical(&probs, rng);
    if choice < state.n_clusters() {
        state.assign(i, choice);
    } else {
        let beta = model.draw_posterior(&[i], None, rng)?;
        state.open_cluster(i, beta);
    }
    Ok(())
}

/// One full iteration: coefficient update, then a sweep over all sites
/// (ascending order, or a fresh random permutation when `random_scan`),
/// then canonical relabelling.
pub fn gibbs_iteration<M: ClusterModel, R: Rng + ?Sized>(
    state: &mut ChainState,
    model: &M,
    prior: &MfmPrior,
    mrf: &MrfSpec<'_>,
    random_scan: bool,
    order: &mut Vec<usize>,
    rng: &mut R,
) -> Result<()> {
    update_betas(state, model, rng)?;
    order.clear();
    order.extend(0..model.n_sites());
    if random_scan {
        order.shuffle(rng);
    }
    for &i in order.iter() {
        update_assignment(i, state, model, prior, mrf, rng)?;
    }
    state.canonicalize();
    Ok(())
}

/// Counters collected while running a chain.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChainDiagnostics {
    /// Sites whose prior predictive hit [`MARGINAL_FLOOR`].
    pub floored_marginals: usize,
}

/// Runs one chain; deterministic given `cfg.seed`.
pub fn run_chain(data: &Dataset, cfg: &FitConfig) -> Result<PosteriorArchive> {
    run_chain_with_diagnostics(data, cfg).map(|(a, _)| a)
}

pub fn run_chain_with_diagnostics(data: &Dataset, cfg: &FitConfig) -> Result<(PosteriorArchive, ChainDiagnostics)> {
    cfg.validate()?;
    let prior_mlg = cfg.prior_params()?;
    if prior_mlg.dim() != data.p() {
        return Err(Error::RejectedInput(format!(
            "config prior has dimension {} but the design has {} columns",
            prior_mlg.dim(),
            data.p()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let shared: Vec<Vec<f64>> = (0..cfg.marginal_draws).map(|_| mlg_sample(&prior_mlg, &mut rng)).collect();
    let model = MlgPoissonModel::new(data, &prior_mlg, &shared)?;
    let prior = MfmPrior::new(data.n(), cfg.gamma, &ShiftedPoisson::default())?;
    let mrf = MrfSpec::new(cfg.lambda, data.graph())?;

    let mut state = ChainState::single_cluster(data.n(), mlg_sample(&prior_mlg, &mut rng));
    let mut order = Vec::with_capacity(data.n());
    let mut records = Vec::with_capacity(cfg.iters - cfg.burnin);
    for it in 0..cfg.iters {
        gibbs_iteration(&mut state, &model, &prior, &mrf, cfg.random_scan, &mut order, &mut rng)?;
        if it >= cfg.burnin {
            let log_lik = (0..data.n())
                .map(|i| model.log_lik(i, &state.betas[state.z[i]]))
                .collect();
            records.push(ArchiveRecord {
                z: state.z.clone(),
                betas: state.betas.clone(),
                log_lik,
            });
        }
    }
    let diagnostics = ChainDiagnostics {
        floored_marginals: model.floored_sites(),
    };
    Ok((
        PosteriorArchive {
            n: data.n(),
            p: data.p(),
            config: cfg.clone(),
            records,
        },
        diagnostics,
    ))
}

/// Unnormalized log joint density of a state: partition prior with the
/// spatial tilt, MLG prior on each cluster's coefficients, and the Poisson
/// likelihood.
pub fn log_joint_density(
    state: &ChainState,
    data: &Dataset,
    prior_mlg: &MlgParams,
    prior: &MfmPrior,
    mrf: &MrfSpec<'_>,
) -> Result<f64> {
    let mut total = prior.log_partition_mass(state.sizes())?;
    let z = state.z();
    let agree = data.graph().edges().iter().filter(|&&(a, b)| z[a] == z[b]).count();
    total += mrf.lambda() * agree as f64;
    for beta in state.betas() {
        total += mlg_log_density(beta, prior_mlg);
    }
    for (i, &c) in z.iter().enumerate() {
        total += data.site_log_lik(i, &state.betas()[c]);
    }
    Ok(total)
}

/// Per-site coefficient matrix (`n x p`) implied by a record.
pub fn site_coefficients(record: &ArchiveRecord, p: usize) -> DMatrix<f64> {
    let n = record.z.len();
    DMatrix::from_fn(n, p, |i, j| record.betas[record.z[i]][j])
}

/// Convenience: draw `count` coefficient vectors from a cluster posterior
/// with a single prepared sampler.
pub fn posterior_draws<R: Rng + ?Sized>(
    model: &MlgPoissonModel<'_>,
    members: &[usize],
    count: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let params = model.posterior_params(members)?;
    let mut sampler = CmlgSampler::new(&params, None)?;
    Ok((0..count).map(|_| sampler.sample(rng)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::ln_gamma;

    fn toy_dataset(y: Vec<u64>, rows: usize, cols: usize) -> Dataset {
        let n = y.len();
        let x = DMatrix::from_fn(n, 2, |i, j| 1.0 + ((i * 7 + j * 3) % 10) as f64 / 10.0);
        Dataset::new(y, x, SpatialGraph::lattice(rows, cols).unwrap(), 1.0).unwrap()
    }

    fn default_prior(p: usize) -> MlgParams {
        FitConfig::new(p).prior_params().unwrap()
    }

    #[test]
    fn poisson_log_lik_examples() {
        assert!((poisson_log_lik(0, 0.0) + 1.0).abs() < 1e-15);
        assert!((poisson_log_lik(1, 0.0) + 1.0).abs() < 1e-15);
        let expect = 3.0 * 2f64.ln() - 2.0 - 6f64.ln();
        assert!((poisson_log_lik(3, 2f64.ln()) - expect).abs() < 1e-13);
    }

    #[test]
    fn single_site_is_forced_into_one_cluster() {
        let x = DMatrix::from_element(1, 1, 1.0);
        let g = SpatialGraph::new(vec![(0.0, 0.0)], []).unwrap();
        let data = Dataset::new(vec![3], x, g, 1.0).unwrap();
        let prior_mlg = default_prior(1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let shared: Vec<Vec<f64>> = (0..64).map(|_| mlg_sample(&prior_mlg, &mut rng)).collect();
        let model = MlgPoissonModel::new(&data, &prior_mlg, &shared).unwrap();
        let prior = MfmPrior::with_defaults(1).unwrap();
        let mrf = MrfSpec::new(0.5, data.graph()).unwrap();
        let mut state = ChainState::single_cluster(1, vec![0.2]);
        state.remove(0);
        let probs = assignment_probabilities(0, &state, &model, &prior, &mrf).unwrap();
        assert_eq!(probs, vec![1.0]);
        update_assignment(0, &mut ChainState::single_cluster(1, vec![0.2]), &model, &prior, &mrf, &mut rng).unwrap();
    }

    #[test]
    fn strong_field_pulls_site_to_neighbors() {
        let data = toy_dataset(vec![5; 9], 3, 3);
        let prior_mlg = default_prior(2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let shared: Vec<Vec<f64>> = (0..256).map(|_| mlg_sample(&prior_mlg, &mut rng)).collect();
        let model = MlgPoissonModel::new(&data, &prior_mlg, &shared).unwrap();
        let prior = MfmPrior::with_defaults(9).unwrap();
        let mrf = MrfSpec::new(50.0, data.graph()).unwrap();
        let beta = vec![0.8, 0.7];
        let mut z = vec![0; 9];
        z[0] = 1;
        let mut state = ChainState::new(z, vec![beta.clone(), beta]).unwrap();
        state.remove(4);
        let probs = assignment_probabilities(4, &state, &model, &prior, &mrf).unwrap();
        assert!(probs[0] > 0.999, "{probs:?}");
    }

    #[test]
    fn zero_field_matches_plain_mfm_urn() {
        let data = toy_dataset(vec![2, 7, 4, 9, 1, 3], 2, 3);
        let prior_mlg = default_prior(2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let shared: Vec<Vec<f64>> = (0..256).map(|_| mlg_sample(&prior_mlg, &mut rng)).collect();
        let model = MlgPoissonModel::new(&data, &prior_mlg, &shared).unwrap();
        let prior = MfmPrior::with_defaults(6).unwrap();
        let mrf = MrfSpec::new(0.0, data.graph()).unwrap();
        let betas = vec![vec![0.5, 0.6], vec![1.0, 0.2]];
        let mut state = ChainState::new(vec![0, 0, 1, 1, 0, 1], betas.clone()).unwrap();
        let i = 3;
        state.remove(i);
        let probs = assignment_probabilities(i, &state, &model, &prior, &mrf).unwrap();

        // (n_c + gamma) f(y | beta_c) and gamma V(t+1)/V(t) m(y), normalized by hand
        let like = |b: &[f64]| {
            let eta: f64 = data.x_row(i).iter().zip(b).map(|(a, c)| a * c).sum();
            (9.0 * eta - eta.exp() - ln_gamma(10.0)).exp()
        };
        let sizes = [3.0, 2.0];
        let mut w: Vec<f64> = (0..2).map(|c| (sizes[c] + 1.0) * like(&betas[c])).collect();
        let ratio = (prior.log_vn(3).unwrap() - prior.log_vn(2).unwrap()).exp();
        w.push(ratio * model.log_marginal(i).exp());
        let total: f64 = w.iter().sum();
        for (a, b) in probs.iter().zip(&w) {
            assert!((a - b / total).abs() < 1e-12, "{probs:?} vs {w:?}");
        }
    }

    #[test]
    fn sweeps_keep_state_valid_and_joint_finite() {
        let data = toy_dataset(vec![0, 3, 12, 40, 2, 5, 9, 25, 1, 60, 4, 7], 3, 4);
        let mut cfg = FitConfig::new(2);
        cfg.iters = 40;
        cfg.burnin = 0;
        cfg.lambda = 0.5;
        cfg.marginal_draws = 128;
        let prior_mlg = cfg.prior_params().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let shared: Vec<Vec<f64>> = (0..128).map(|_| mlg_sample(&prior_mlg, &mut rng)).collect();
        let model = MlgPoissonModel::new(&data, &prior_mlg, &shared).unwrap();
        let prior = MfmPrior::with_defaults(12).unwrap();
        let mrf = MrfSpec::new(0.5, data.graph()).unwrap();
        let mut state = ChainState::new(
            vec![0, 1, 2, 0, 1, 2, 0, 1, 2, 0, 1, 2],
            vec![vec![0.0, 0.0], vec![1.0, 0.5], vec![0.3, 1.2]],
        )
        .unwrap();
        let mut order = Vec::new();
        for _ in 0..30 {
            gibbs_iteration(&mut state, &model, &prior, &mrf, false, &mut order, &mut rng).unwrap();
            state.check_invariants().unwrap();
            assert_eq!(state.sizes().iter().sum::<usize>(), 12);
            assert_eq!(state.z()[0], 0);
            assert!(log_joint_density(&state, &data, &prior_mlg, &prior, &mrf).unwrap().is_finite());
        }
        for _ in 0..5 {
            gibbs_iteration(&mut state, &model, &prior, &mrf, true, &mut order, &mut rng).unwrap();
            state.check_invariants().unwrap();
        }
    }

    #[test]
    fn chains_are_deterministic() {
        let data = toy_dataset(vec![1, 4, 9, 2, 30, 6], 2, 3);
        let mut cfg = FitConfig::new(2);
        cfg.iters = 25;
        cfg.burnin = 5;
        cfg.lambda = 0.3;
        cfg.seed = 77;
        cfg.marginal_draws = 64;
        let a = run_chain(&data, &cfg).unwrap();
        let b = run_chain(&data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 20);
        cfg.seed = 78;
        assert_ne!(a, run_chain(&data, &cfg).unwrap());
    }

    #[test]
    fn one_iteration_one_record() {
        let data = toy_dataset(vec![1, 4, 9, 2], 2, 2);
        let mut cfg = FitConfig::new(2);
        cfg.iters = 1;
        cfg.burnin = 0;
        cfg.marginal_draws = 16;
        let archive = run_chain(&data, &cfg).unwrap();
        assert_eq!(archive.len(), 1);
        assert_eq!(archive.records[0].log_lik.len(), 4);
    }

    #[test]
    fn empty_cluster_posterior_is_the_prior() {
        let data = toy_dataset(vec![1, 4], 1, 2);
        let v = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]);
        let prior_mlg = MlgParams::new(vec![0.3, -0.2], v, vec![2.0, 3.0], vec![1.0, 2.0]).unwrap();
        let model = MlgPoissonModel::new(&data, &prior_mlg, &[vec![0.0, 0.0]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws = posterior_draws(&model, &[], 40_000, &mut rng).unwrap();
        // E q_j = mu_j + V_jj (digamma(alpha_j) - ln kappa_j); Var q_j = V_jj^2 trigamma(alpha_j)
        let mean = [0.3 + 2.0 * 0.422_784_335_098_467_1, -0.2 + 0.5 * (0.922_784_335_098_467_1 - 2f64.ln())];
        let var = [4.0 * 0.644_934_066_848_226_4, 0.25 * 0.394_934_066_848_226_4];
        for j in 0..2 {
            let m: f64 = draws.iter().map(|d| d[j]).sum::<f64>() / draws.len() as f64;
            let se = (var[j] / draws.len() as f64).sqrt();
            assert!((m - mean[j]).abs() < 3.0 * se, "coordinate {j}: {m} vs {}", mean[j]);
        }
    }

    #[test]
    fn single_count_matches_gamma_conjugacy() {
        // exp(beta) ~ Gamma(a, a) a priori; with y = 4 the posterior is Gamma(a + 4, a + 1)
        let g = SpatialGraph::new(vec![(0.0, 0.0)], []).unwrap();
        let data = Dataset::new(vec![4], DMatrix::from_element(1, 1, 1.0), g, 1.0).unwrap();
        let a = 0.01;
        let prior_mlg = MlgParams::new(vec![0.0], DMatrix::identity(1, 1), vec![a], vec![a]).unwrap();
        let model = MlgPoissonModel::new(&data, &prior_mlg, &[vec![0.0]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let draws = posterior_draws(&model, &[0], 20_000, &mut rng).unwrap();
        let mean: f64 = draws.iter().map(|d| d[0].exp()).sum::<f64>() / draws.len() as f64;
        let expect = (a + 4.0) / (a + 1.0);
        let se = (a + 4.0).sqrt() / (a + 1.0) / (draws.len() as f64).sqrt();
        assert!((mean - expect).abs() < 3.0 * se, "{mean} vs {expect}");
    }

    #[test]
    fn cluster_systems_only_see_their_members() {
        let data = toy_dataset(vec![1, 4, 9, 2], 2, 2);
        let prior_mlg = default_prior(2);
        let model = MlgPoissonModel::new(&data, &prior_mlg, &[vec![0.0, 0.0]]).unwrap();
        let params = model.posterior_params(&[1, 3]).unwrap();
        assert_eq!(params.h().nrows(), 4);
        assert_eq!(&params.alpha()[2..], &[4.0, 2.0]);
        assert_eq!(params.h().row(2).iter().copied().collect::<Vec<_>>(), data.x_row(1));

        let mut state = ChainState::new(vec![0, 1, 0, 1], vec![vec![0.1, 0.1], vec![0.9, 0.9]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let redraw = model.draw_posterior(&[0, 2], Some(&state.betas()[0]), &mut rng).unwrap();
        state.set_beta(0, redraw);
        assert_eq!(state.betas()[1], vec![0.9, 0.9]);
    }

    fn quadrature_marginal(y: u64, prior: &MlgParams) -> f64 {
        // trapezoid over a wide grid for p = 1, x = 1
        let (lo, hi, steps) = (-12.0, 12.0, 48_000);
        let h = (hi - lo) / steps as f64;
        let mut total = 0.0;
        for k in 0..=steps {
            let b = lo + k as f64 * h;
            let w = if k == 0 || k == steps { 0.5 } else { 1.0 };
            total += w * (poisson_log_lik(y, b) + mlg_log_density(&[b], prior)).exp();
        }
        total * h
    }

    #[test]
    fn monte_carlo_marginal_agrees_with_quadrature() {
        let prior = default_prior(1);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let shared: Vec<Vec<f64>> = (0..1024).map(|_| mlg_sample(&prior, &mut rng)).collect();
        let (mc, floored) = marginal_log_lik(2, &[1.0], &shared);
        assert!(!floored);
        let terms: Vec<f64> = shared.iter().map(|b| poisson_log_lik(2, b[0]).exp()).collect();
        let mean = terms.iter().sum::<f64>() / terms.len() as f64;
        let var = terms.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (terms.len() - 1) as f64;
        let se = (var / terms.len() as f64).sqrt();
        let exact = quadrature_marginal(2, &prior);
        assert!((mc.exp() - exact).abs() < 3.0 * se, "{} vs {exact}", mc.exp());

        let m5 = quadrature_marginal(5, &prior);
        let m50 = quadrature_marginal(50, &prior);
        assert!(m50 < m5);
        let (mc5, _) = marginal_log_lik(5, &[1.0], &shared);
        let (mc50, _) = marginal_log_lik(50, &[1.0], &shared);
        assert!(mc50 < mc5);
    }

    #[test]
    fn zero_design_marginal_is_poisson_one() {
        let prior = default_prior(2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let shared: Vec<Vec<f64>> = (0..100).map(|_| mlg_sample(&prior, &mut rng)).collect();
        let (v, _) = marginal_log_lik(0, &[0.0, 0.0], &shared);
        assert!((v + 1.0).abs() < 1e-12);
    }

    #[test]
    fn hopeless_marginal_is_floored() {
        let (v, floored) = marginal_log_lik(100_000, &[1.0], &[vec![-5.0]]);
        assert!(floored);
        assert_eq!(v, MARGINAL_FLOOR);
    }
}

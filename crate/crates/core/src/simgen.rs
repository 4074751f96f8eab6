//! Synthetic spatial Poisson data with clustered coefficients.
//!
//! Four scenarios: a three-cluster contiguous design and a two-cluster design
//! whose first cluster is split into a northern and a southern band, each
//! with or without exponential-covariogram Gaussian random effects. Cluster
//! membership is assigned by latitude terciles.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::gibbs::Dataset;
use crate::graph::SpatialGraph;
use crate::math::exp;

/// Largest linear predictor accepted under the log link.
pub const MAX_LOG_RATE: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Design {
    /// North, middle and south bands are three clusters.
    ThreeCluster,
    /// North and south bands share cluster 0; the middle band is cluster 1.
    TwoClusterDisjoint,
}

impl Design {
    pub fn n_clusters(self) -> usize {
        match self {
            Design::ThreeCluster => 3,
            Design::TwoClusterDisjoint => 2,
        }
    }
}

/// Mean function linking the linear predictor to the Poisson rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Link {
    #[default]
    Log,
    /// Rate equals the linear predictor; kept for sensitivity runs.
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub design: Design,
    pub random_effects: bool,
    /// `k x p` true coefficients, one row per cluster.
    pub betas: Vec<Vec<f64>>,
    pub sigma2_w: f64,
    pub phi: f64,
    pub seed: u64,
    pub link: Link,
}

impl ScenarioSpec {
    /// Reference scenarios 1-4: (three clusters | two clusters) x (without |
    /// with) random effects.
    pub fn scenario(id: u8, seed: u64) -> Result<Self> {
        let three = vec![vec![0.5, 0.5], vec![1.0, 1.0], vec![1.5, 1.5]];
        let two = vec![vec![1.0, 1.0], vec![1.5, 1.5]];
        let (design, random_effects, betas) = match id {
            1 => (Design::ThreeCluster, false, three),
            2 => (Design::ThreeCluster, true, three),
            3 => (Design::TwoClusterDisjoint, false, two),
            4 => (Design::TwoClusterDisjoint, true, two),
            _ => return Err(Error::RejectedInput(format!("scenario must be 1..=4, got {id}"))),
        };
        Ok(Self {
            design,
            random_effects,
            betas,
            sigma2_w: 0.3,
            phi: 0.05,
            seed,
            link: Link::Log,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.betas.len() != self.design.n_clusters() {
            return Err(Error::RejectedInput(format!(
                "design needs {} coefficient rows, got {}",
                self.design.n_clusters(),
                self.betas.len()
            )));
        }
        let p = self.betas[0].len();
        if p == 0 || self.betas.iter().any(|b| b.len() != p || b.iter().any(|v| !v.is_finite())) {
            return Err(Error::RejectedInput("coefficient rows must be finite and of equal length".into()));
        }
        if self.random_effects && (!(self.sigma2_w > 0.0) || !(self.phi > 0.0)) {
            return Err(Error::RejectedInput("random effects need sigma2_w > 0 and phi > 0".into()));
        }
        Ok(())
    }
}

/// Generated data together with the truth used to produce it.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedData {
    pub dataset: Dataset,
    pub z_true: Vec<usize>,
    /// `n x p` per-site true coefficients.
    pub beta_true: DMatrix<f64>,
    pub w_true: Vec<f64>,
}

/// Band labels by latitude tercile (rank of the `y` coordinate, north
/// first, ties broken by site index).
pub fn partition_labels(g: &SpatialGraph, design: Design) -> Result<Vec<usize>> {
    let n = g.n_sites();
    if n < 3 {
        return Err(Error::Usage(format!("banding needs at least 3 sites, got {n}")));
    }
    let coords = g.coords();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| coords[b].1.total_cmp(&coords[a].1).then(a.cmp(&b)));
    let mut labels = vec![0; n];
    for (rank, &site) in order.iter().enumerate() {
        let band = rank * 3 / n;
        labels[site] = match design {
            Design::ThreeCluster => band,
            Design::TwoClusterDisjoint => usize::from(band == 1),
        };
    }
    Ok(labels)
}

/// Zero-mean Gaussian field with covariance `sigma2 * exp(-phi * d_ij)`.
pub fn gp_effects<R: Rng + ?Sized>(g: &SpatialGraph, sigma2: f64, phi: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(sigma2 > 0.0) || !(phi > 0.0) {
        return Err(Error::RejectedInput("sigma2 and phi must be positive".into()));
    }
    let n = g.n_sites();
    let cov = g.pairwise_distances().map(|d| sigma2 * exp(-phi * d));
    let mut jitter = 0.0;
    let factor = loop {
        let mut c = cov.clone();
        for i in 0..n {
            c[(i, i)] += jitter;
        }
        if let Some(ch) = c.cholesky() {
            break ch.l();
        }
        jitter = if jitter == 0.0 { 1e-10 } else { jitter * 10.0 };
        if jitter > 1e-6 * (1.0 + 1e-9) {
            return Err(Error::Numerical("covariance factorization failed at maximum jitter".into()));
        }
    };
    let xi = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)));
    Ok((factor * xi).iter().copied().collect())
}

/// Draws one dataset: covariates i.i.d. `Uniform(1, 2)`, optional spatial
/// random effects, then Poisson counts.
pub fn generate(spec: &ScenarioSpec, g: &SpatialGraph) -> Result<SimulatedData> {
    spec.validate()?;
    let n = g.n_sites();
    let p = spec.betas[0].len();
    let z_true = partition_labels(g, spec.design)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            x[(i, j)] = rng.random_range(1.0..2.0);
        }
    }
    let w_true = if spec.random_effects {
        gp_effects(g, spec.sigma2_w, spec.phi, &mut rng)?
    } else {
        vec![0.0; n]
    };
    let beta_true = DMatrix::from_fn(n, p, |i, j| spec.betas[z_true[i]][j]);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let eta: f64 = (0..p).map(|j| x[(i, j)] * beta_true[(i, j)]).sum::<f64>() + w_true[i];
        let rate = match spec.link {
            Link::Log => {
                if eta > MAX_LOG_RATE {
                    return Err(Error::Generation(format!(
                        "log-rate {eta:.3} at site {i} exceeds {MAX_LOG_RATE} for {spec:?}"
                    )));
                }
                exp(eta)
            }
            Link::Identity => eta,
        };
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(Error::Generation(format!("non-positive rate {rate} at site {i} for {spec:?}")));
        }
        let draw: f64 = Poisson::new(rate)
            .map_err(|e| Error::Generation(format!("Poisson({rate}): {e:?}")))?
            .sample(&mut rng);
        y.push(draw as u64);
    }
    let dataset = Dataset::new(y, x, g.clone(), 1.0)?;
    Ok(SimulatedData {
        dataset,
        z_true,
        beta_true,
        w_true,
    })
}

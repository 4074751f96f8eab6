//! Multivariate log-gamma (MLG) family and its conditional form (cMLG).
//!
//! `q = mu + V * phi` with independent `phi_i = log(g_i)`,
//! `g_i ~ Gamma(shape = alpha_i, rate = kappa_i)`. The conditional family has
//! unnormalized log-density `alpha' H q - kappa' exp(H q)`, which is the
//! posterior of Poisson log-linear coefficients under an MLG prior.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::math::{exp, ln_gamma, log};

/// Exponent cap applied to `V^{-1}(q - mu)` before exponentiation.
pub const EXPONENT_CLAMP: f64 = 700.0;

const SINGULAR_RTOL: f64 = 1e-12;

fn check_rank(m: &DMatrix<f64>, what: &str) -> Result<()> {
    let sv = m.clone().singular_values();
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || !max.is_finite() || min <= SINGULAR_RTOL * max {
        return Err(Error::Parameter(format!(
            "{what} is numerically singular (singular values {min:e} / {max:e})"
        )));
    }
    Ok(())
}

/// Parameters `(mu, V, alpha, kappa)` of an MLG distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct MlgParams {
    mu: DVector<f64>,
    v: DMatrix<f64>,
    v_inv: DMatrix<f64>,
    log_abs_det_v: f64,
    alpha: Vec<f64>,
    kappa: Vec<f64>,
}

impl MlgParams {
    pub fn new(mu: Vec<f64>, v: DMatrix<f64>, alpha: Vec<f64>, kappa: Vec<f64>) -> Result<Self> {
        let p = mu.len();
        if p == 0 {
            return Err(Error::Parameter("MLG dimension must be positive".into()));
        }
        if v.nrows() != p || v.ncols() != p || alpha.len() != p || kappa.len() != p {
            return Err(Error::Parameter(format!("MLG dimension mismatch (p = {p})")));
        }
        if mu.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Parameter("MLG location and scale must be finite".into()));
        }
        if alpha.iter().chain(kappa.iter()).any(|&a| !(a > 0.0) || !a.is_finite()) {
            return Err(Error::Parameter("MLG shapes and rates must be positive".into()));
        }
        check_rank(&v, "V")?;
        let lu = v.clone().lu();
        let v_inv = lu
            .try_inverse()
            .ok_or_else(|| Error::Parameter("V is not invertible".into()))?;
        let det = v.determinant();
        Ok(Self {
            mu: DVector::from_vec(mu),
            log_abs_det_v: log(det.abs()),
            v,
            v_inv,
            alpha,
            kappa,
        })
    }

    /// `MLG(0, I, alpha, kappa)`: independent log-gamma coordinates.
    pub fn standard(alpha: Vec<f64>, kappa: Vec<f64>) -> Result<Self> {
        let p = alpha.len();
        Self::new(vec![0.0; p], DMatrix::identity(p, p), alpha, kappa)
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }
    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }
    pub fn v_inv(&self) -> &DMatrix<f64> {
        &self.v_inv
    }
    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }
    pub fn kappa(&self) -> &[f64] {
        &self.kappa
    }

    /// Log normalizing constant `-log|det V| + sum(alpha log kappa - log Gamma(alpha))`.
    pub fn log_normalizer(&self) -> f64 {
        -self.log_abs_det_v
            + self
                .alpha
                .iter()
                .zip(&self.kappa)
                .map(|(&a, &k)| a * log(k) - ln_gamma(a))
                .sum::<f64>()
    }
}

/// Log-density of `q` under `MLG(mu, V, alpha, kappa)`.
pub fn mlg_log_density(q: &[f64], params: &MlgParams) -> f64 {
    assert_eq!(q.len(), params.dim(), "q has the wrong dimension");
    let centered = DVector::from_column_slice(q) - &params.mu;
    let w = &params.v_inv * centered;
    let mut kernel = 0.0;
    for ((&wi, &a), &k) in w.iter().zip(&params.alpha).zip(&params.kappa) {
        if wi > EXPONENT_CLAMP {
            return f64::NEG_INFINITY;
        }
        kernel += a * wi - k * exp(wi);
    }
    params.log_normalizer() + kernel
}

/// `log(g)` for `g ~ Gamma(shape, rate)`. Small shapes use the
/// `Gamma(a + 1) * U^(1/a)` identity so the log stays finite.
pub fn sample_log_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    if shape >= 1.0 {
        let g: f64 = Gamma::new(shape, 1.0).expect("positive shape").sample(rng);
        log(g) - log(rate)
    } else {
        let g: f64 = Gamma::new(shape + 1.0, 1.0).expect("positive shape").sample(rng);
        let u: f64 = rng.random::<f64>();
        log(g) + log(1.0 - u) / shape - log(rate)
    }
}

/// Exact draw `mu + V phi`.
pub fn mlg_sample<R: Rng + ?Sized>(params: &MlgParams, rng: &mut R) -> Vec<f64> {
    let phi = DVector::from_iterator(
        params.dim(),
        params
            .alpha
            .iter()
            .zip(&params.kappa)
            .map(|(&a, &k)| sample_log_gamma(a, k, rng)),
    );
    let q = &params.mu + &params.v * phi;
    q.iter().copied().collect()
}

/// Covariance `V0 V0'` of the normal limit for the family
/// `MLG(mu, a^{1/2} V0, a 1, a 1)`, given the stored `V = a^{1/2} V0`.
pub fn normal_approx_cov(params: &MlgParams) -> Result<DMatrix<f64>> {
    let a = params.alpha[0];
    let same = |x: f64| (x - a).abs() <= 1e-12 * a;
    if !params.alpha.iter().all(|&x| same(x)) || !params.kappa.iter().all(|&x| same(x)) {
        return Err(Error::UnsupportedFamily(
            "normal limit requires alpha = kappa = a * 1".into(),
        ));
    }
    Ok(&params.v * params.v.transpose() / a)
}

/// Parameters of `cMLG(H, alpha, kappa)`.
///
/// Rows with `alpha_i = 0` are allowed (a Poisson observation with a zero
/// count contributes such a row); the rows with positive shape must span
/// the coefficient space so the density is proper.
#[derive(Debug, Clone, PartialEq)]
pub struct CmlgParams {
    h: DMatrix<f64>,
    alpha: Vec<f64>,
    kappa: Vec<f64>,
}

impl CmlgParams {
    pub fn new(h: DMatrix<f64>, alpha: Vec<f64>, kappa: Vec<f64>) -> Result<Self> {
        let (m, p) = h.shape();
        if p == 0 || m < p {
            return Err(Error::Parameter(format!("H must be m x p with m >= p >= 1, got {m} x {p}")));
        }
        if alpha.len() != m || kappa.len() != m {
            return Err(Error::Parameter("alpha and kappa must have one entry per row of H".into()));
        }
        if h.iter().any(|x| !x.is_finite()) {
            return Err(Error::Parameter("H must be finite".into()));
        }
        if alpha.iter().any(|&a| !(a >= 0.0) || !a.is_finite()) {
            return Err(Error::Parameter("cMLG shapes must be non-negative".into()));
        }
        if kappa.iter().any(|&k| !(k > 0.0) || !k.is_finite()) {
            return Err(Error::Parameter("cMLG rates must be positive".into()));
        }
        let active: Vec<usize> = (0..m).filter(|&i| alpha[i] > 0.0).collect();
        if active.len() < p {
            return Err(Error::Parameter("H is rank deficient on its positive-shape rows".into()));
        }
        let h_active = h.select_rows(active.iter());
        check_rank(&h_active, "H")?;
        Ok(Self { h, alpha, kappa })
    }

    pub fn dim(&self) -> usize {
        self.h.ncols()
    }
    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }
    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }
    pub fn kappa(&self) -> &[f64] {
        &self.kappa
    }

    /// Unnormalized log-density `alpha' H q - kappa' exp(H q)`.
    pub fn log_kernel(&self, q: &[f64]) -> f64 {
        let eta = &self.h * DVector::from_column_slice(q);
        eta.iter()
            .zip(&self.alpha)
            .zip(&self.kappa)
            .map(|((&e, &a), &k)| a * e - k * exp(e))
            .sum()
    }
}

/// One exact draw from `cMLG(H, alpha, kappa)`.
pub fn cmlg_sample<R: Rng + ?Sized>(params: &CmlgParams, rng: &mut R) -> Result<Vec<f64>> {
    Ok(CmlgSampler::new(params, None)?.sample(rng))
}

// Envelope ring spacing and count, in whitened units.
const RING_STEP: f64 = 0.5;
const RING_COUNT: usize = 8;
const BOUND_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy)]
enum Segment {
    /// `[0, r1)`: the cube around the mode, constant envelope.
    Core,
    /// `[lo, hi)` with log-envelope `min(cap, rho * slope)`.
    Shell { lo: f64, hi: f64, slope: f64 },
}

/// Rejection sampler for a fixed cMLG target.
///
/// The target is log-concave. In coordinates `u` whitened by the Hessian at
/// the mode, a nested family of cubes `||u||_inf = r_k` is laid out and the
/// maximum of the (centred) log-density on each cube surface is bounded from
/// above. Concavity along rays from the mode turns each bound into a linear
/// upper envelope in `||u||_inf` that holds for every point beyond that cube.
/// The resulting radially piecewise-exponential envelope is sampled exactly
/// and thinned, so draws are independent and exact.
#[derive(Debug, Clone)]
pub struct CmlgSampler {
    p: usize,
    m: usize,
    mode: DVector<f64>,
    // q = mode + back * u
    back: DMatrix<f64>,
    // whitened design, row-major m x p
    g: Vec<f64>,
    alpha: Vec<f64>,
    // kappa_i * exp((H mode)_i)
    k_mode: Vec<f64>,
    cap: f64,
    core_radius: f64,
    segments: Vec<Segment>,
    cumulative_mass: Vec<f64>,
    accepted: u64,
    proposed: u64,
}

impl CmlgSampler {
    /// Prepares the envelope. `start` seeds the mode search (a previous draw
    /// works well inside a Gibbs sweep).
    pub fn new(params: &CmlgParams, start: Option<&[f64]>) -> Result<Self> {
        let p = params.dim();
        let m = params.h.nrows();
        let mode = find_mode(params, start)?;
        let eta = &params.h * &mode;
        let k_mode: Vec<f64> = eta.iter().zip(&params.kappa).map(|(&e, &k)| k * exp(e)).collect();
        let mut info = DMatrix::zeros(p, p);
        for i in 0..m {
            let row = params.h.row(i);
            info += k_mode[i] * row.transpose() * row;
        }
        let chol = info
            .cholesky()
            .ok_or_else(|| Error::Numerical("information matrix at the cMLG mode is not positive definite".into()))?;
        let l = chol.l();
        // back = (L')^{-1}
        let back = l
            .transpose()
            .solve_upper_triangular(&DMatrix::identity(p, p))
            .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
        let gm = &params.h * &back;
        let mut g = Vec::with_capacity(m * p);
        for i in 0..m {
            for j in 0..p {
                g.push(gm[(i, j)]);
            }
        }
        let mut sampler = Self {
            p,
            m,
            mode,
            back,
            g,
            alpha: params.alpha.clone(),
            k_mode,
            cap: 0.0,
            core_radius: RING_STEP,
            segments: Vec::new(),
            cumulative_mass: Vec::new(),
            accepted: 0,
            proposed: 0,
        };
        sampler.build_envelope()?;
        Ok(sampler)
    }

    pub fn mode(&self) -> &[f64] {
        self.mode.as_slice()
    }

    /// Accepted / proposed so far.
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    fn whitened_eta(&self, u: &[f64], s: &mut [f64]) {
        for i in 0..self.m {
            let row = &self.g[i * self.p..(i + 1) * self.p];
            s[i] = row.iter().zip(u).map(|(a, b)| a * b).sum();
        }
    }

    fn centred_log_density_from_eta(&self, s: &[f64]) -> f64 {
        let mut total = 0.0;
        for i in 0..self.m {
            total += self.alpha[i] * s[i] - self.k_mode[i] * libm::expm1(s[i]);
        }
        if total.is_nan() {
            f64::NEG_INFINITY
        } else {
            total
        }
    }

    /// Centred log-density at whitened point `u` (zero at the mode).
    pub fn centred_log_density(&self, u: &[f64]) -> f64 {
        let mut s = vec![0.0; self.m];
        self.whitened_eta(u, &mut s);
        self.centred_log_density_from_eta(&s)
    }

    fn gradient_from_eta(&self, s: &[f64], grad: &mut [f64]) {
        grad.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..self.m {
            let r = self.alpha[i] - self.k_mode[i] * exp(s[i]);
            let row = &self.g[i * self.p..(i + 1) * self.p];
            for (gj, &hij) in grad.iter_mut().zip(row) {
                *gj += r * hij;
            }
        }
    }

    /// Certified upper bound of the centred log-density over the surface of
    /// the cube `||u||_inf = r`.
    fn cube_surface_bound(&self, r: f64) -> f64 {
        let p = self.p;
        let mut best = f64::NEG_INFINITY;
        let mut u = vec![0.0; p];
        let mut s = vec![0.0; self.m];
        let mut grad = vec![0.0; p];
        for fixed in 0..p {
            for &sign in &[-1.0, 1.0] {
                u.iter_mut().for_each(|x| *x = 0.0);
                u[fixed] = sign * r;
                self.whitened_eta(&u, &mut s);
                if p > 1 {
                    self.maximize_on_facet(fixed, r, &mut u, &mut s);
                }
                let value = self.centred_log_density_from_eta(&s);
                self.gradient_from_eta(&s, &mut grad);
                // Concavity: f(v) <= f(u) + grad'(v - u) over the facet.
                let mut bound = value;
                for l in 0..p {
                    if l == fixed {
                        continue;
                    }
                    let gl = grad[l];
                    bound += (gl * (r - u[l])).max(gl * (-r - u[l]));
                }
                if bound > best {
                    best = bound;
                }
            }
        }
        best + BOUND_SLACK * (1.0 + best.abs())
    }

    // Cyclic coordinate ascent over the free coordinates of one facet.
    fn maximize_on_facet(&self, fixed: usize, r: f64, u: &mut [f64], s: &mut [f64]) {
        let p = self.p;
        for _sweep in 0..100 {
            let mut max_move: f64 = 0.0;
            for l in 0..p {
                if l == fixed {
                    continue;
                }
                let old = u[l];
                let new = self.line_maximize(l, r, u[l], s);
                if new != old {
                    let delta = new - old;
                    for i in 0..self.m {
                        s[i] += self.g[i * p + l] * delta;
                    }
                    u[l] = new;
                    max_move = max_move.max(delta.abs());
                }
            }
            if p == 2 || max_move < 1e-12 * r {
                break;
            }
        }
    }

    // Maximizes the concave 1-D section along coordinate `l` on [-r, r].
    fn line_maximize(&self, l: usize, r: f64, current: f64, s: &[f64]) -> f64 {
        let p = self.p;
        let deriv = |t: f64| -> (f64, f64) {
            let shift = t - current;
            let mut d1 = 0.0;
            let mut d2 = 0.0;
            for i in 0..self.m {
                let gil = self.g[i * p + l];
                let w = self.k_mode[i] * exp(s[i] + gil * shift);
                d1 += gil * (self.alpha[i] - w);
                d2 -= gil * gil * w;
            }
            (d1, d2)
        };
        let (lo_d, _) = deriv(-r);
        if !(lo_d > 0.0) {
            return -r;
        }
        let (hi_d, _) = deriv(r);
        if !(hi_d < 0.0) {
            return r;
        }
        let (mut lo, mut hi) = (-r, r);
        let mut t = current.clamp(-r, r);
        for _ in 0..60 {
            let (d1, d2) = deriv(t);
            if d1 > 0.0 {
                lo = t;
            } else {
                hi = t;
            }
            let newton = if d2 < 0.0 { t - d1 / d2 } else { f64::NAN };
            let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            if (next - t).abs() <= 1e-13 * r || hi - lo <= 1e-13 * r {
                t = next;
                break;
            }
            t = next;
        }
        t
    }

    fn build_envelope(&mut self) -> Result<()> {
        let p = self.p;
        // Gradient at the mode bounds the core via concavity.
        let zero = vec![0.0; p];
        let mut s = vec![0.0; self.m];
        self.whitened_eta(&zero, &mut s);
        let mut grad = vec![0.0; p];
        self.gradient_from_eta(&s, &mut grad);
        let g1: f64 = grad.iter().map(|g| g.abs()).sum();
        self.cap = g1 * self.core_radius + BOUND_SLACK;

        let mut radii: Vec<f64> = (1..=RING_COUNT).map(|k| k as f64 * RING_STEP).collect();
        let mut slopes = Vec::with_capacity(radii.len());
        let mut running = f64::INFINITY;
        for &r in &radii {
            let bound = self.cube_surface_bound(r);
            running = running.min(bound / r);
            slopes.push(running);
        }
        let mut guard = 0;
        while !(running < 0.0) {
            guard += 1;
            if guard > 60 {
                return Err(Error::Numerical("cMLG envelope failed to decay".into()));
            }
            let r = radii.last().copied().unwrap_or(RING_STEP) * 2.0;
            let bound = self.cube_surface_bound(r);
            running = running.min(bound / r);
            radii.push(r);
            slopes.push(running);
        }

        let pf = p as f64;
        let mut segments = Vec::with_capacity(radii.len());
        let mut masses = Vec::with_capacity(radii.len());
        segments.push(Segment::Core);
        masses.push(libm::pow(self.core_radius, pf) / pf * exp(self.cap));
        for k in 0..radii.len() {
            let lo = radii[k];
            let hi = radii.get(k + 1).copied().unwrap_or(f64::INFINITY);
            let slope = slopes[k];
            segments.push(Segment::Shell { lo, hi, slope });
            masses.push(self.shell_mass(lo, hi, slope));
        }
        let mut cumulative = Vec::with_capacity(masses.len());
        let mut acc = 0.0;
        for m in masses {
            acc += m;
            cumulative.push(acc);
        }
        self.segments = segments;
        self.cumulative_mass = cumulative;
        Ok(())
    }

    // Integral of rho^(p-1) * exp(min(cap, slope * rho)) over [lo, hi).
    fn shell_mass(&self, lo: f64, hi: f64, slope: f64) -> f64 {
        let pf = self.p as f64;
        if slope >= 0.0 {
            return (libm::pow(hi, pf) - libm::pow(lo, pf)) / pf * exp(self.cap);
        }
        let b = -slope;
        let tail = |x: f64| -> f64 {
            if x.is_infinite() {
                return 0.0;
            }
            // e^{-bx} sum_{j<p} (bx)^j / j!
            let mut term = 1.0;
            let mut sum = 1.0;
            for j in 1..self.p {
                term *= b * x / j as f64;
                sum += term;
            }
            exp(-b * x) * sum
        };
        let fact: f64 = (1..self.p).map(|j| j as f64).product();
        fact / libm::pow(b, pf) * (tail(lo) - tail(hi))
    }

    fn log_envelope(&self, rho: f64) -> f64 {
        if rho < self.core_radius {
            return self.cap;
        }
        for seg in self.segments.iter().skip(1) {
            if let Segment::Shell { lo, hi, slope } = *seg {
                if rho >= lo && rho < hi {
                    return self.cap.min(rho * slope);
                }
            }
        }
        self.cap
    }

    fn propose<R: Rng + ?Sized>(&self, rng: &mut R, u: &mut [f64]) {
        let p = self.p;
        let total = *self.cumulative_mass.last().expect("envelope built");
        let pick = rng.random::<f64>() * total;
        let idx = self
            .cumulative_mass
            .iter()
            .position(|&c| pick < c)
            .unwrap_or(self.segments.len() - 1);
        match self.segments[idx] {
            Segment::Core => {
                for x in u.iter_mut() {
                    *x = (2.0 * rng.random::<f64>() - 1.0) * self.core_radius;
                }
            }
            Segment::Shell { lo, hi, slope } => {
                let rho = self.sample_radius(lo, hi, slope, rng);
                let face = rng.random_range(0..p);
                for (j, x) in u.iter_mut().enumerate() {
                    *x = if j == face {
                        if rng.random::<bool>() {
                            rho
                        } else {
                            -rho
                        }
                    } else {
                        (2.0 * rng.random::<f64>() - 1.0) * rho
                    };
                }
            }
        }
    }

    fn sample_radius<R: Rng + ?Sized>(&self, lo: f64, hi: f64, slope: f64, rng: &mut R) -> f64 {
        let pm1 = (self.p - 1) as f64;
        if hi.is_infinite() {
            // rho = lo + t with density (lo + t)^(p-1) e^{-b t}: binomial
            // expansion into a mixture of Gamma(j + 1, b).
            let b = -slope;
            let weights: Vec<f64> = (0..self.p)
                .map(|j| {
                    let binom = binomial(self.p - 1, j);
                    let fact: f64 = (1..=j).map(|x| x as f64).product();
                    binom * libm::pow(lo, pm1 - j as f64) * fact / libm::pow(b, j as f64 + 1.0)
                })
                .collect();
            let total: f64 = weights.iter().sum();
            let mut pick = rng.random::<f64>() * total;
            let mut order = 0;
            for (j, w) in weights.iter().enumerate() {
                order = j;
                if pick < *w {
                    break;
                }
                pick -= w;
            }
            let mut t = 0.0;
            for _ in 0..=order {
                t -= log(1.0 - rng.random::<f64>());
            }
            return lo + t / b;
        }
        let weight = |rho: f64| -> f64 { libm::pow(rho, pm1) * exp(self.cap.min(rho * slope) - self.cap) };
        let peak = if slope < 0.0 { (pm1 / -slope).clamp(lo, hi) } else { hi };
        let w_max = weight(peak).max(weight(lo)).max(weight(hi));
        loop {
            let rho = lo + (hi - lo) * rng.random::<f64>();
            if rng.random::<f64>() * w_max <= weight(rho) {
                return rho;
            }
        }
    }

    /// Draws one exact sample.
    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        let mut u = vec![0.0; self.p];
        loop {
            self.proposed += 1;
            self.propose(rng, &mut u);
            let rho = u.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            let log_ratio = self.centred_log_density(&u) - self.log_envelope(rho);
            if log(1.0 - rng.random::<f64>()) < log_ratio {
                self.accepted += 1;
                let q = &self.mode + &self.back * DVector::from_column_slice(&u);
                return q.iter().copied().collect();
            }
        }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Damped Newton ascent on the concave cMLG log-kernel.
fn find_mode(params: &CmlgParams, start: Option<&[f64]>) -> Result<DVector<f64>> {
    let p = params.dim();
    let h = &params.h;
    let mut q = match start {
        Some(s) if s.len() == p && s.iter().all(|x| x.is_finite()) => DVector::from_column_slice(s),
        _ => DVector::zeros(p),
    };
    let objective = |q: &DVector<f64>| -> f64 {
        let v = params.log_kernel(q.as_slice());
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };
    let mut current = objective(&q);
    if !current.is_finite() {
        q = DVector::zeros(p);
        current = objective(&q);
    }
    for _ in 0..500 {
        let eta = h * &q;
        let w: Vec<f64> = eta.iter().zip(&params.kappa).map(|(&e, &k)| k * exp(e)).collect();
        let resid = DVector::from_iterator(eta.len(), params.alpha.iter().zip(&w).map(|(&a, &wi)| a - wi));
        let grad = h.transpose() * resid;
        let mut info = DMatrix::zeros(p, p);
        for (i, &wi) in w.iter().enumerate() {
            let row = h.row(i);
            info += wi * row.transpose() * row;
        }
        let step = match info.clone().cholesky() {
            Some(c) => c.solve(&grad),
            None => grad.clone(),
        };
        let decrement = grad.dot(&step);
        if !(decrement > 1e-22) {
            return Ok(q);
        }
        // Inside the quadratic region a full step is accurate to rounding;
        // the line search would only chase noise in the objective.
        if decrement < 1e-10 {
            q += step;
            return Ok(q);
        }
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..80 {
            let cand = &q + t * &step;
            let val = objective(&cand);
            if val >= current + 0.25 * t * decrement {
                q = cand;
                current = val;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            return Ok(q);
        }
    }
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn standard_log_density_at_zero() {
        let params = MlgParams::standard(vec![1.0], vec![1.0]).unwrap();
        assert!((mlg_log_density(&[0.0], &params) + 1.0).abs() < 1e-15);
        let shifted = MlgParams::new(vec![5.0], DMatrix::identity(1, 1), vec![1.0], vec![1.0]).unwrap();
        assert!((mlg_log_density(&[5.0], &shifted) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn log_density_clamps_large_exponents() {
        let params = MlgParams::standard(vec![1.0], vec![1.0]).unwrap();
        assert_eq!(mlg_log_density(&[701.0], &params), f64::NEG_INFINITY);
        assert!(mlg_log_density(&[-1e6], &params).is_finite());
    }

    #[test]
    fn rejects_bad_parameters() {
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(
            MlgParams::new(vec![0.0; 2], singular, vec![1.0; 2], vec![1.0; 2]),
            Err(Error::Parameter(_))
        ));
        assert!(MlgParams::standard(vec![0.0], vec![1.0]).is_err());
        assert!(MlgParams::standard(vec![1.0], vec![-1.0]).is_err());
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        assert!(matches!(CmlgParams::new(h, vec![1.0; 2], vec![1.0; 2]), Err(Error::Parameter(_))));
        // zero-shape rows do not count toward rank
        let h = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        assert!(CmlgParams::new(h.clone(), vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(CmlgParams::new(h, vec![0.0, 2.0], vec![1.0, 1.0]).is_ok());
    }

    #[test]
    fn normal_limit_covariance() {
        let a = 1e4;
        let prior = MlgParams::new(vec![0.0; 3], DMatrix::identity(3, 3) * 100.0, vec![a; 3], vec![a; 3]).unwrap();
        let cov = normal_approx_cov(&prior).unwrap();
        assert!((cov - DMatrix::<f64>::identity(3, 3)).abs().max() < 1e-12);

        let unit = MlgParams::standard(vec![1.0; 2], vec![1.0; 2]).unwrap();
        assert_eq!(normal_approx_cov(&unit).unwrap(), DMatrix::identity(2, 2));

        let v = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0])) * 100.0;
        let diag = MlgParams::new(vec![0.0; 2], v, vec![a; 2], vec![a; 2]).unwrap();
        let cov = normal_approx_cov(&diag).unwrap();
        assert!((cov[(0, 0)] - 4.0).abs() < 1e-12 && (cov[(1, 1)] - 9.0).abs() < 1e-12);
        assert_eq!(cov[(0, 1)], 0.0);

        let mixed = MlgParams::standard(vec![1.0, 2.0], vec![1.0, 2.0]).unwrap();
        assert!(matches!(normal_approx_cov(&mixed), Err(Error::UnsupportedFamily(_))));
    }

    #[test]
    fn identity_v_passes_phi_through() {
        let params = MlgParams::new(vec![3.0, -2.0], DMatrix::identity(2, 2), vec![2.0, 0.5], vec![1.0, 3.0]).unwrap();
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        let q = mlg_sample(&params, &mut a);
        let phi0 = sample_log_gamma(2.0, 1.0, &mut b);
        let phi1 = sample_log_gamma(0.5, 3.0, &mut b);
        assert!((q[0] - 3.0 - phi0).abs() < 1e-14);
        assert!((q[1] + 2.0 - phi1).abs() < 1e-14);
    }

    #[test]
    fn mode_is_found_for_gamma_kernel() {
        // alpha q - kappa e^q peaks at log(alpha / kappa)
        let h = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let params = CmlgParams::new(h, vec![10_000.0, 3.0], vec![10_000.0, 1.0]).unwrap();
        let sampler = CmlgSampler::new(&params, None).unwrap();
        assert!((sampler.mode()[0] - (10_003.0f64 / 10_001.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn envelope_dominates_target() {
        let h = DMatrix::from_row_slice(4, 2, &[0.01, 0.0, 0.0, 0.01, 1.3, 1.7, 1.9, 1.1]);
        let params = CmlgParams::new(h, vec![1e4, 1e4, 12.0, 0.0], vec![1e4, 1e4, 1.0, 1.0]).unwrap();
        let sampler = CmlgSampler::new(&params, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20_000 {
            let u: Vec<f64> = (0..2).map(|_| rng.random_range(-8.0..8.0)).collect();
            let rho = u.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            assert!(sampler.centred_log_density(&u) <= sampler.log_envelope(rho) + 1e-12);
        }
    }

    #[test]
    fn square_h_reproduces_log_gamma_moments() {
        // H = I: coordinates are independent log-gamma(alpha_i, kappa_i)
        let params = CmlgParams::new(DMatrix::identity(2, 2), vec![2.0, 0.7], vec![1.0, 2.0]).unwrap();
        let mut sampler = CmlgSampler::new(&params, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 40_000;
        let mut mean = [0.0; 2];
        for _ in 0..n {
            let q = sampler.sample(&mut rng);
            mean[0] += q[0] / n as f64;
            mean[1] += q[1] / n as f64;
        }
        // digamma(2) = 1 - gamma_e; digamma(0.7) - log 2
        let want0 = 1.0 - 0.577_215_664_901_532_9;
        let want1 = -1.220_023_553_697_935 - 2f64.ln();
        assert!((mean[0] - want0).abs() < 3.0 * (0.644_934_066_848_226_4f64 / n as f64).sqrt());
        assert!((mean[1] - want1).abs() < 3.0 * (2.834_049_156_694_6f64 / n as f64).sqrt());
        assert!(sampler.acceptance_rate() > 0.3);
    }
}

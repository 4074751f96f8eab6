use mrfmfm_core::prior::{log_vn, ClusterCountPrior, MfmPrior, ShiftedPoisson};
use num_bigint::BigUint;
use num_traits::{One, ToPrimitive};

const K_MAX: usize = 500;

fn product(lo_exclusive: usize, hi: usize) -> BigUint {
    (lo_exclusive + 1..=hi).fold(BigUint::one(), |acc, v| acc * BigUint::from(v))
}

fn ln_big(x: &BigUint) -> f64 {
    let bits = x.bits();
    if bits <= 64 {
        return x.to_u64().unwrap() as f64;
    }
    let shift = bits - 64;
    let top = (x >> shift).to_u64().unwrap() as f64;
    top.ln() + shift as f64 * std::f64::consts::LN_2
}

/// Exact rational series for an integer gamma and shifted Poisson(1):
/// V_n(t) = e^{-1} sum_k k (gk - 1)! / ((k - t)! (gk + n - 1)!).
fn oracle_log_vn(n: usize, t: usize, g: usize) -> f64 {
    let top = g * K_MAX + n - 1;
    let mut sum = BigUint::from(0u32);
    for k in t.max(1)..=K_MAX {
        // term * (K - t)! * (gK + n - 1)!
        let mut term = BigUint::from(k) * product(k - t, K_MAX - t) * product(g * k + n - 1, top);
        term *= product(0, g * k - 1);
        sum += term;
    }
    let denom = product(0, K_MAX - t) * product(0, top);
    -1.0 + ln_big(&sum) - ln_big(&denom)
}

#[test]
fn matches_exact_series() {
    let pmf = ShiftedPoisson::default();
    for &(n, g) in &[(1, 1), (2, 1), (5, 2), (10, 1), (37, 3), (159, 1), (159, 2)] {
        for t in 1..=n.min(12) {
            let got = log_vn(n, t, g as f64, &pmf).unwrap();
            let want = oracle_log_vn(n, t, g);
            assert!((got - want).abs() < 1e-10, "n={n} t={t} gamma={g}: {got} vs {want}");
        }
    }
}

#[test]
fn table_agrees_with_direct_evaluation() {
    let pmf = ShiftedPoisson::default();
    let table = MfmPrior::new(40, 1.0, &pmf).unwrap();
    for t in 1..=41 {
        assert_eq!(table.log_vn(t).unwrap(), log_vn(40, t, 1.0, &pmf).unwrap());
    }
}

struct Geometric(f64);

impl ClusterCountPrior for Geometric {
    fn log_pmf(&self, k: usize) -> f64 {
        if k == 0 {
            f64::NEG_INFINITY
        } else {
            (k - 1) as f64 * (1.0 - self.0).ln() + self.0.ln()
        }
    }
}

#[test]
fn recursion_holds_for_other_count_priors() {
    // V_n(t) = (n + gamma t) V_{n+1}(t) + gamma V_{n+1}(t + 1)
    let pmf = Geometric(0.3);
    for n in [3usize, 8, 20] {
        for t in 1..=n {
            for gamma in [0.5, 1.0, 2.0] {
                let lhs = log_vn(n, t, gamma, &pmf).unwrap();
                let a = (n as f64 + gamma * t as f64).ln() + log_vn(n + 1, t, gamma, &pmf).unwrap();
                let b = gamma.ln() + log_vn(n + 1, t + 1, gamma, &pmf).unwrap();
                let rhs = a.max(b) + (-(a - b).abs()).exp().ln_1p();
                assert!((lhs - rhs).abs() < 1e-10, "n={n} t={t} gamma={gamma}");
            }
        }
    }
}

//! Posterior summaries: least-squares (Dahl) partition selection, Rand index,
//! conditional predictive ordinates / LPML, and coefficient AMSE.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::gibbs::{site_coefficients, PosteriorArchive};
use crate::math::{exp, log, LogSumExp};

/// Squared Frobenius distance of each record's membership matrix to the
/// posterior mean membership matrix.
///
/// Co-clustering counts are accumulated over the strict upper triangle in
/// one pass and distances computed in a second pass, so memory is `O(n^2)`
/// regardless of the number of records.
pub fn membership_distances(archive: &PosteriorArchive) -> Result<Vec<f64>> {
    let b = archive.records.len() as f64;
    Ok(scaled_distances(archive)?
        .into_iter()
        .map(|d| 2.0 * d as f64 / (b * b))
        .collect())
}

/// Upper-triangle distances multiplied by `B^2`, which makes them integers:
/// `sum_{i<j} (B [z_i = z_j] - count_ij)^2`. Ties are therefore exact.
fn scaled_distances(archive: &PosteriorArchive) -> Result<Vec<u128>> {
    let b = archive.records.len();
    if b == 0 {
        return Err(Error::Usage("archive has no records".into()));
    }
    let n = archive.n;
    let mut counts = vec![0i64; n * n.saturating_sub(1) / 2];
    for rec in &archive.records {
        let mut k = 0;
        for i in 0..n {
            for j in (i + 1)..n {
                if rec.z[i] == rec.z[j] {
                    counts[k] += 1;
                }
                k += 1;
            }
        }
    }
    let b = b as i64;
    let distances = archive
        .records
        .iter()
        .map(|rec| {
            let mut k = 0;
            let mut d: u128 = 0;
            for i in 0..n {
                for j in (i + 1)..n {
                    let same = if rec.z[i] == rec.z[j] { b } else { 0 };
                    let diff = (same - counts[k]).unsigned_abs() as u128;
                    d += diff * diff;
                    k += 1;
                }
            }
            d
        })
        .collect();
    Ok(distances)
}

/// Index of the record closest to the mean membership matrix; the earliest
/// record wins ties.
pub fn dahl_select(archive: &PosteriorArchive) -> Result<usize> {
    let d = scaled_distances(archive)?;
    let mut best = 0;
    for (idx, &v) in d.iter().enumerate() {
        if v < d[best] {
            best = idx;
        }
    }
    Ok(best)
}

/// Fraction of site pairs on which two labelings agree.
pub fn rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Usage(format!("label vectors differ in length ({} vs {})", a.len(), b.len())));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Usage("rand index needs at least two sites".into()));
    }
    let mut agree: u64 = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            if (a[i] == a[j]) == (b[i] == b[j]) {
                agree += 1;
            }
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    Ok(agree as f64 / pairs)
}

/// Per-site conditional predictive ordinates and their log-sum.
#[derive(Debug, Clone, PartialEq)]
pub struct CpoSummary {
    pub lpml: f64,
    pub log_cpo: Vec<f64>,
    /// Sites where one record carries more than half of the harmonic-mean mass.
    pub dominated_sites: usize,
    /// Sites with a `-inf` log-likelihood in some record (CPO = 0).
    pub degenerate_sites: usize,
}

/// Harmonic-mean CPO estimate, computed in log space:
/// `log CPO_i = log B - logsumexp_t(-l_{i,t})`.
pub fn lpml(archive: &PosteriorArchive) -> Result<CpoSummary> {
    let b = archive.records.len();
    if b == 0 {
        return Err(Error::Usage("archive has no records".into()));
    }
    let n = archive.n;
    let log_b = log(b as f64);
    let mut log_cpo = Vec::with_capacity(n);
    let mut dominated_sites = 0;
    let mut degenerate_sites = 0;
    for i in 0..n {
        let mut acc = LogSumExp::default();
        let mut max_term = f64::NEG_INFINITY;
        let mut degenerate = false;
        for rec in &archive.records {
            let l = rec.log_lik[i];
            if l == f64::NEG_INFINITY || l.is_nan() {
                degenerate = true;
                break;
            }
            acc.push(-l);
            max_term = max_term.max(-l);
        }
        if degenerate {
            degenerate_sites += 1;
            log_cpo.push(f64::NEG_INFINITY);
            continue;
        }
        let lse = acc.value();
        if exp(max_term - lse) > 0.5 && b > 1 {
            dominated_sites += 1;
        }
        log_cpo.push(log_b - lse);
    }
    Ok(CpoSummary {
        lpml: log_cpo.iter().sum(),
        log_cpo,
        dominated_sites,
        degenerate_sites,
    })
}

/// Per-coefficient mean squared error over sites.
pub fn amse(estimates: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<Vec<f64>> {
    if estimates.shape() != truth.shape() {
        return Err(Error::Usage(format!(
            "estimate shape {:?} differs from truth shape {:?}",
            estimates.shape(),
            truth.shape()
        )));
    }
    let n = estimates.nrows();
    if n == 0 {
        return Err(Error::Usage("no sites".into()));
    }
    Ok((0..estimates.ncols())
        .map(|j| {
            (0..n)
                .map(|i| {
                    let d = estimates[(i, j)] - truth[(i, j)];
                    d * d
                })
                .sum::<f64>()
                / n as f64
        })
        .collect())
}

/// Point estimate from one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct FitSummary {
    pub selected_iteration: usize,
    pub z: Vec<usize>,
    pub betas: Vec<Vec<f64>>,
    pub n_clusters: usize,
    pub lpml: f64,
    pub dominated_sites: usize,
    pub rand_index: Option<f64>,
    pub amse: Option<Vec<f64>>,
}

impl FitSummary {
    /// `n x p` per-site coefficients of the selected partition.
    pub fn site_coefficients(&self) -> DMatrix<f64> {
        let p = self.betas.first().map_or(0, Vec::len);
        DMatrix::from_fn(self.z.len(), p, |i, j| self.betas[self.z[i]][j])
    }
}

/// Dahl point estimate plus LPML, and truth metrics when supplied.
pub fn summarize(archive: &PosteriorArchive, truth: Option<(&[usize], &DMatrix<f64>)>) -> Result<FitSummary> {
    let idx = dahl_select(archive)?;
    let cpo = lpml(archive)?;
    let rec = &archive.records[idx];
    let (rand_index, amse) = match truth {
        Some((z_true, beta_true)) => (
            Some(rand_index(&rec.z, z_true)?),
            Some(amse(&site_coefficients(rec, archive.p), beta_true)?),
        ),
        None => (None, None),
    };
    Ok(FitSummary {
        selected_iteration: idx,
        z: rec.z.clone(),
        betas: rec.betas.clone(),
        n_clusters: rec.n_clusters(),
        lpml: cpo.lpml,
        dominated_sites: cpo.dominated_sites,
        rand_index,
        amse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gibbs::{ArchiveRecord, FitConfig};
    use proptest::prelude::*;

    fn archive(zs: Vec<Vec<usize>>, lls: Vec<Vec<f64>>) -> PosteriorArchive {
        let n = zs[0].len();
        let records = zs
            .into_iter()
            .zip(lls)
            .map(|(z, log_lik)| {
                let k = z.iter().max().map_or(0, |m| m + 1);
                ArchiveRecord {
                    betas: (0..k).map(|c| vec![c as f64, 0.5]).collect(),
                    z,
                    log_lik,
                }
            })
            .collect();
        PosteriorArchive {
            n,
            p: 2,
            config: FitConfig::new(2),
            records,
        }
    }

    fn flat(zs: Vec<Vec<usize>>) -> PosteriorArchive {
        let n = zs[0].len();
        let b = zs.len();
        archive(zs, vec![vec![-1.0; n]; b])
    }

    #[test]
    fn dahl_examples() {
        assert_eq!(dahl_select(&flat(vec![vec![0, 1, 1]])).unwrap(), 0);
        let a = flat(vec![vec![0, 0, 1], vec![0, 0, 1], vec![0, 1, 1]]);
        assert_eq!(dahl_select(&a).unwrap(), 0);
        let empty = PosteriorArchive {
            n: 3,
            p: 2,
            config: FitConfig::new(2),
            records: Vec::new(),
        };
        assert!(matches!(dahl_select(&empty), Err(Error::Usage(_))));
        assert!(matches!(lpml(&empty), Err(Error::Usage(_))));
    }

    #[test]
    fn rand_index_examples() {
        assert_eq!(rand_index(&[0, 1, 1, 2], &[0, 1, 1, 2]).unwrap(), 1.0);
        assert!((rand_index(&[0, 0, 1], &[0, 1, 1]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(rand_index(&[0, 1, 2], &[0, 0, 0]).unwrap(), 0.0);
        assert!(rand_index(&[0, 1], &[0, 1, 1]).is_err());
        assert!(rand_index(&[0], &[0]).is_err());
    }

    #[test]
    fn lpml_examples() {
        let one = archive(vec![vec![0, 0, 1]], vec![vec![-1.0, -2.5, -0.25]]);
        assert!((lpml(&one).unwrap().lpml + 3.75).abs() < 1e-12);
        let constant = archive(vec![vec![0, 0, 1]; 4], vec![vec![-1.0, -2.5, -0.25]; 4]);
        assert!((lpml(&constant).unwrap().lpml + 3.75).abs() < 1e-12);
        let dead = archive(vec![vec![0, 0], vec![0, 0]], vec![vec![-1.0, f64::NEG_INFINITY], vec![-1.0, -2.0]]);
        let s = lpml(&dead).unwrap();
        assert_eq!(s.degenerate_sites, 1);
        assert_eq!(s.lpml, f64::NEG_INFINITY);
        let spiky = archive(vec![vec![0]; 3], vec![vec![-50.0], vec![-1.0], vec![-1.0]]);
        assert_eq!(lpml(&spiky).unwrap().dominated_sites, 1);
    }

    #[test]
    fn amse_examples() {
        let t = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 0.5, 0.5]);
        assert_eq!(amse(&t, &t).unwrap(), vec![0.0, 0.0]);
        let shifted = t.map(|v| v + 0.3);
        for v in amse(&shifted, &t).unwrap() {
            assert!((v - 0.09).abs() < 1e-12);
        }
        let est = DMatrix::from_row_slice(3, 2, &[1.5, 2.0, 1.0, 1.0, 0.5, 0.5]);
        let got = amse(&est, &t).unwrap();
        assert!((got[0] - 0.25 / 3.0).abs() < 1e-15 && (got[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!(amse(&t, &DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn summary_uses_selected_record() {
        let a = archive(
            vec![vec![0, 0, 1], vec![0, 0, 1], vec![0, 1, 1]],
            vec![vec![-1.0, -1.0, -1.0]; 3],
        );
        let truth = DMatrix::from_row_slice(3, 2, &[0.0, 0.5, 0.0, 0.5, 1.0, 0.5]);
        let s = summarize(&a, Some((&[0, 0, 1], &truth))).unwrap();
        assert_eq!(s.selected_iteration, 0);
        assert_eq!(s.n_clusters, 2);
        assert_eq!(s.rand_index, Some(1.0));
        assert_eq!(s.amse, Some(vec![0.0, 0.0]));
        assert_eq!(s.site_coefficients(), truth);
    }

    fn labels(n: usize) -> impl Strategy<Value = Vec<usize>> {
        proptest::collection::vec(0usize..4, n)
    }

    proptest! {
        #[test]
        fn rand_index_symmetric_and_label_free(a in labels(7), b in labels(7), shift in 1usize..4) {
            let ab = rand_index(&a, &b).unwrap();
            prop_assert_eq!(ab, rand_index(&b, &a).unwrap());
            let relabelled: Vec<usize> = a.iter().map(|&l| (l + shift) % 4).collect();
            prop_assert_eq!(ab, rand_index(&relabelled, &b).unwrap());
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn dahl_ignores_relabelling(zs in proptest::collection::vec(labels(6), 1..6), shift in 1usize..4) {
            let base = dahl_select(&flat(zs.clone())).unwrap();
            let relabelled: Vec<Vec<usize>> = zs
                .iter()
                .map(|z| z.iter().map(|&l| (l + shift) % 4).collect())
                .collect();
            prop_assert_eq!(base, dahl_select(&flat(relabelled)).unwrap());
        }

        #[test]
        fn lpml_monotone_in_each_likelihood(
            lls in proptest::collection::vec(proptest::collection::vec(-20.0f64..0.0, 4), 1..6),
            rec in 0usize..6,
            site in 0usize..4,
            drop in 0.0f64..10.0,
        ) {
            let b = lls.len();
            let rec = rec % b;
            let base = lpml(&archive(vec![vec![0; 4]; b], lls.clone())).unwrap().lpml;
            let mut lower = lls;
            lower[rec][site] -= drop;
            let after = lpml(&archive(vec![vec![0; 4]; b], lower)).unwrap().lpml;
            prop_assert!(after <= base + 1e-12);
        }
    }
}

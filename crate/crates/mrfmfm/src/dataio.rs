//! Plain-text formats: dataset CSV, adjacency edge list, simulation truth,
//! posterior archives and fit summaries.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use mrfmfm_core::gibbs::{ArchiveRecord, Dataset, FitConfig, PosteriorArchive};
use mrfmfm_core::inference::FitSummary;
use mrfmfm_core::SpatialGraph;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub const ARCHIVE_VERSION: &str = "mrfmfm-arch-1";

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}, row {row}: {msg}")]
    Ingest { path: PathBuf, row: usize, msg: String },
    #[error("{path}: unsupported archive version {found:?} (expected {ARCHIVE_VERSION})")]
    Version { path: PathBuf, found: String },
    #[error("{path}: header promises {expected} records, found {found}")]
    RecordCount { path: PathBuf, expected: usize, found: usize },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] mrfmfm_core::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn ingest(path: &Path, row: usize, msg: impl Into<String>) -> DataError {
    DataError::Ingest {
        path: path.to_path_buf(),
        row,
        msg: msg.into(),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

/// Rows of a dataset CSV before the graph is attached.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteTable {
    pub ids: Vec<String>,
    pub y: Vec<u64>,
    pub x: DMatrix<f64>,
    pub coords: Vec<(f64, f64)>,
}

/// A dataset with the site keys it was read with.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDataset {
    pub ids: Vec<String>,
    pub dataset: Dataset,
}

/// Reads `site_id, y, x1..xp, lon, lat`. Counts are divided by `scale` and
/// rounded; `intercept` prepends a constant column.
pub fn read_sites(path: &Path, scale: f64, intercept: bool) -> Result<SiteTable> {
    if scale <= 0.0 || !scale.is_finite() {
        return Err(DataError::Usage(format!("scale must be positive, got {scale}")));
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => DataError::Io {
                path: path.to_path_buf(),
                source,
            },
            other => ingest(path, 0, format!("{other:?}")),
        })?;
    let header = reader.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let id_col = col("site_id").ok_or_else(|| ingest(path, 0, "missing column site_id"))?;
    let y_col = col("y").ok_or_else(|| ingest(path, 0, "missing column y"))?;
    let lon_col = col("lon").ok_or_else(|| ingest(path, 0, "missing column lon"))?;
    let lat_col = col("lat").ok_or_else(|| ingest(path, 0, "missing column lat"))?;
    let mut x_cols = Vec::new();
    for j in 1.. {
        match col(&format!("x{j}")) {
            Some(c) => x_cols.push(c),
            None => break,
        }
    }
    if x_cols.is_empty() {
        return Err(ingest(path, 0, "no covariate columns x1..xp"));
    }

    let mut ids = Vec::new();
    let mut seen = HashSet::new();
    let mut y = Vec::new();
    let mut xs = Vec::new();
    let mut coords = Vec::new();
    for (r, rec) in reader.records().enumerate() {
        let row = r + 1;
        let rec = rec.map_err(|e| ingest(path, row, e.to_string()))?;
        let field = |c: usize| rec.get(c).ok_or_else(|| ingest(path, row, "short row"));
        let num = |c: usize, what: &str| -> Result<f64> {
            let s = field(c)?;
            let v: f64 = s.parse().map_err(|_| ingest(path, row, format!("{what}: cannot parse {s:?}")))?;
            if !v.is_finite() {
                return Err(ingest(path, row, format!("{what} is not finite")));
            }
            Ok(v)
        };
        let id = field(id_col)?.to_string();
        if !seen.insert(id.clone()) {
            return Err(ingest(path, row, format!("duplicate site_id {id:?}")));
        }
        let raw = num(y_col, "y")?;
        if raw < 0.0 {
            return Err(ingest(path, row, format!("negative count {raw}")));
        }
        y.push((raw / scale).round() as u64);
        if intercept {
            xs.push(1.0);
        }
        for (j, &c) in x_cols.iter().enumerate() {
            xs.push(num(c, &format!("x{}", j + 1))?);
        }
        coords.push((num(lon_col, "lon")?, num(lat_col, "lat")?));
        ids.push(id);
    }
    if ids.is_empty() {
        return Err(ingest(path, 0, "no data rows"));
    }
    let p = x_cols.len() + usize::from(intercept);
    Ok(SiteTable {
        x: DMatrix::from_row_slice(ids.len(), p, &xs),
        ids,
        y,
        coords,
    })
}

/// Reads `id_a id_b` pairs. Unknown ids and self-pairs are errors;
/// duplicates collapse.
pub fn read_adjacency(path: &Path, ids: &[String]) -> Result<Vec<(usize, usize)>> {
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let file = File::open(path).map_err(io_err(path))?;
    let mut edges = Vec::new();
    let mut seen = HashSet::new();
    for (r, line) in BufReader::new(file).lines().enumerate() {
        let row = r + 1;
        let line = line.map_err(io_err(path))?;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 2 {
            return Err(ingest(path, row, format!("expected two site ids, got {line:?}")));
        }
        let lookup = |s: &str| {
            index
                .get(s)
                .copied()
                .ok_or_else(|| ingest(path, row, format!("unknown site_id {s:?}")))
        };
        let (a, b) = (lookup(parts[0])?, lookup(parts[1])?);
        if a == b {
            return Err(ingest(path, row, format!("self-pair {:?}", parts[0])));
        }
        let key = (a.min(b), a.max(b));
        if seen.insert(key) {
            edges.push(key);
        }
    }
    Ok(edges)
}

/// Dataset CSV plus optional adjacency file; without one the graph has no
/// edges and the spatial term is inert.
pub fn load_dataset(data: &Path, adjacency: Option<&Path>, scale: f64, intercept: bool) -> Result<LoadedDataset> {
    let table = read_sites(data, scale, intercept)?;
    let edges = match adjacency {
        Some(a) => read_adjacency(a, &table.ids)?,
        None => Vec::new(),
    };
    let graph = SpatialGraph::new(table.coords, edges)?;
    Ok(LoadedDataset {
        ids: table.ids,
        dataset: Dataset::new(table.y, table.x, graph, scale)?,
    })
}

/// Writes the dataset's counts, design and coordinates in the CSV schema.
pub fn write_dataset(path: &Path, ids: &[String], data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = vec!["site_id".to_string(), "y".to_string()];
    header.extend((1..=data.p()).map(|j| format!("x{j}")));
    header.extend(["lon".to_string(), "lat".to_string()]);
    w.write_record(&header)?;
    for (i, id) in ids.iter().enumerate() {
        let mut row = vec![id.clone(), data.y()[i].to_string()];
        row.extend(data.x_row(i).iter().map(|v| v.to_string()));
        let (lon, lat) = data.graph().coords()[i];
        row.extend([lon.to_string(), lat.to_string()]);
        w.write_record(&row)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn write_adjacency(path: &Path, ids: &[String], graph: &SpatialGraph) -> Result<()> {
    let mut w = create(path)?;
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "# id_a id_b")?;
        for &(a, b) in graph.edges() {
            writeln!(w, "{} {}", ids[a], ids[b])?;
        }
        w.flush()
    };
    write().map_err(io_err(path))
}

/// True labels and per-site coefficients of a simulated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub ids: Vec<String>,
    pub z: Vec<usize>,
    pub beta: DMatrix<f64>,
    pub w: Vec<f64>,
}

pub fn write_truth(path: &Path, truth: &Truth) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let p = truth.beta.ncols();
    let mut header = vec!["site_id".to_string(), "z".to_string()];
    header.extend((1..=p).map(|j| format!("beta{j}")));
    header.push("w".to_string());
    w.write_record(&header)?;
    for (i, id) in truth.ids.iter().enumerate() {
        let mut row = vec![id.clone(), truth.z[i].to_string()];
        row.extend((0..p).map(|j| truth.beta[(i, j)].to_string()));
        row.push(truth.w[i].to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn read_truth(path: &Path) -> Result<Truth> {
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    let p = header.iter().filter(|h| h.starts_with("beta")).count();
    if header.get(0) != Some("site_id") || header.get(1) != Some("z") || p == 0 {
        return Err(ingest(path, 0, "expected columns site_id, z, beta1..betap, w"));
    }
    let mut ids = Vec::new();
    let mut z = Vec::new();
    let mut betas = Vec::new();
    let mut w = Vec::new();
    for (r, rec) in reader.records().enumerate() {
        let row = r + 1;
        let rec = rec?;
        let parse = |c: usize| -> Result<f64> {
            rec.get(c)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| ingest(path, row, format!("bad value in column {c}")))
        };
        ids.push(rec.get(0).unwrap_or_default().to_string());
        z.push(
            rec.get(1)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| ingest(path, row, "bad label"))?,
        );
        for j in 0..p {
            betas.push(parse(2 + j)?);
        }
        w.push(parse(2 + p)?);
    }
    Ok(Truth {
        beta: DMatrix::from_row_slice(ids.len(), p, &betas),
        ids,
        z,
        w,
    })
}

/// Serializable mirror of [`FitConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub iters: usize,
    pub burnin: usize,
    pub lambda: f64,
    pub seed: u64,
    pub gamma: f64,
    pub prior_mu: Vec<f64>,
    /// Row-major `p x p`.
    pub prior_v: Vec<f64>,
    pub prior_alpha: Vec<f64>,
    pub prior_kappa: Vec<f64>,
    pub marginal_draws: usize,
    pub random_scan: bool,
}

impl From<&FitConfig> for ConfigEcho {
    fn from(c: &FitConfig) -> Self {
        let p = c.prior_v.nrows();
        Self {
            iters: c.iters,
            burnin: c.burnin,
            lambda: c.lambda,
            seed: c.seed,
            gamma: c.gamma,
            prior_mu: c.prior_mu.clone(),
            prior_v: (0..p * p).map(|k| c.prior_v[(k / p, k % p)]).collect(),
            prior_alpha: c.prior_alpha.clone(),
            prior_kappa: c.prior_kappa.clone(),
            marginal_draws: c.marginal_draws,
            random_scan: c.random_scan,
        }
    }
}

impl ConfigEcho {
    pub fn to_config(&self) -> Result<FitConfig> {
        let p = self.prior_mu.len();
        if self.prior_v.len() != p * p {
            return Err(DataError::Usage("config echo: prior_v is not p x p".into()));
        }
        Ok(FitConfig {
            iters: self.iters,
            burnin: self.burnin,
            lambda: self.lambda,
            seed: self.seed,
            gamma: self.gamma,
            prior_mu: self.prior_mu.clone(),
            prior_v: DMatrix::from_row_slice(p, p, &self.prior_v),
            prior_alpha: self.prior_alpha.clone(),
            prior_kappa: self.prior_kappa.clone(),
            marginal_draws: self.marginal_draws,
            random_scan: self.random_scan,
        })
    }
}

/// Writes the archive: a version/size line, a config line, then one
/// whitespace-separated record per line (`z`, `k`, `k*p` coefficients,
/// `n` log-likelihoods). Reals use shortest round-trip formatting.
pub fn save_archive(path: &Path, archive: &PosteriorArchive) -> Result<()> {
    if archive.records.is_empty() {
        return Err(DataError::Usage("refusing to save an empty archive".into()));
    }
    let mut w = create(path)?;
    let echo = serde_json::to_string(&ConfigEcho::from(&archive.config))?;
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "{ARCHIVE_VERSION} {} {} {}", archive.n, archive.p, archive.records.len())?;
        writeln!(w, "{echo}")?;
        let mut line = String::new();
        for rec in &archive.records {
            line.clear();
            for z in &rec.z {
                line.push_str(&z.to_string());
                line.push(' ');
            }
            line.push_str(&rec.betas.len().to_string());
            for v in rec.betas.iter().flatten().chain(&rec.log_lik) {
                line.push(' ');
                line.push_str(&v.to_string());
            }
            writeln!(w, "{line}")?;
        }
        w.flush()
    };
    write().map_err(io_err(path))
}

pub fn load_archive(path: &Path) -> Result<PosteriorArchive> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut lines = BufReader::new(file).lines();
    let mut next = || -> Result<Option<String>> { lines.next().transpose().map_err(io_err(path)) };
    let header = next()?.ok_or_else(|| ingest(path, 1, "empty file"))?;
    let head: Vec<&str> = header.split_whitespace().collect();
    if head.first() != Some(&ARCHIVE_VERSION) {
        return Err(DataError::Version {
            path: path.to_path_buf(),
            found: head.first().unwrap_or(&"").to_string(),
        });
    }
    let size = |k: usize| -> Result<usize> {
        head.get(k)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ingest(path, 1, "malformed header"))
    };
    let (n, p, expected) = (size(1)?, size(2)?, size(3)?);
    let config_line = next()?.ok_or_else(|| ingest(path, 2, "missing config line"))?;
    let config = serde_json::from_str::<ConfigEcho>(&config_line)?.to_config()?;

    let mut records = Vec::with_capacity(expected);
    let mut row = 2;
    while let Some(line) = next()? {
        row += 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < n + 1 {
            return Err(ingest(path, row, "record too short"));
        }
        let z: Vec<usize> = fields[..n]
            .iter()
            .map(|s| s.parse().map_err(|_| ingest(path, row, format!("bad label {s:?}"))))
            .collect::<Result<_>>()?;
        let k: usize = fields[n].parse().map_err(|_| ingest(path, row, "bad cluster count"))?;
        if fields.len() != n + 1 + k * p + n {
            return Err(ingest(
                path,
                row,
                format!("expected {} fields, found {}", 2 * n + 1 + k * p, fields.len()),
            ));
        }
        let reals: Vec<f64> = fields[n + 1..]
            .iter()
            .map(|s| s.parse().map_err(|_| ingest(path, row, format!("bad number {s:?}"))))
            .collect::<Result<_>>()?;
        let betas = reals[..k * p].chunks(p).map(<[f64]>::to_vec).collect();
        records.push(ArchiveRecord {
            z,
            betas,
            log_lik: reals[k * p..].to_vec(),
        });
    }
    if records.len() != expected {
        return Err(DataError::RecordCount {
            path: path.to_path_buf(),
            expected,
            found: records.len(),
        });
    }
    Ok(PosteriorArchive { n, p, config, records })
}

/// Fit summary as written to `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryFile {
    pub site_ids: Vec<String>,
    pub lambda: f64,
    pub selected_iteration: usize,
    pub n_clusters: usize,
    pub z: Vec<usize>,
    pub betas: Vec<Vec<f64>>,
    pub lpml: f64,
    pub dominated_sites: usize,
    pub floored_marginals: usize,
}

impl SummaryFile {
    pub fn new(ids: &[String], lambda: f64, s: &FitSummary, floored_marginals: usize) -> Self {
        Self {
            site_ids: ids.to_vec(),
            lambda,
            selected_iteration: s.selected_iteration,
            n_clusters: s.n_clusters,
            z: s.z.clone(),
            betas: s.betas.clone(),
            lpml: s.lpml,
            dominated_sites: s.dominated_sites,
            floored_marginals,
        }
    }

    pub fn site_coefficients(&self) -> DMatrix<f64> {
        let p = self.betas.first().map_or(0, Vec::len);
        DMatrix::from_fn(self.z.len(), p, |i, j| self.betas[self.z[i]][j])
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).and_then(|_| w.flush()).map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(io_err(path))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn scaling_rounds_and_intercept_prepends() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "d.csv",
            "site_id,y,x1,x2,lon,lat\na,12345,0.5,1.5,-84.1,33.2\nb,12350,0.25,2,-84.5,32.9\n",
        );
        let t = read_sites(&p, 100.0, true).unwrap();
        assert_eq!(t.y, vec![123, 124]);
        assert_eq!(t.x.ncols(), 3);
        assert_eq!(t.x.column(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 1.0]);
        assert_eq!(t.x[(1, 2)], 2.0);
        assert_eq!(t.coords[0], (-84.1, 33.2));
        assert_eq!(read_sites(&p, 1.0, false).unwrap().x.ncols(), 2);
    }

    #[test]
    fn schema_violations_name_the_row() {
        let dir = tempfile::tempdir().unwrap();
        let no_lon = write(dir.path(), "a.csv", "site_id,y,x1,lat\na,1,0.5,3\n");
        assert!(matches!(read_sites(&no_lon, 1.0, false), Err(DataError::Ingest { row: 0, .. })));
        let dup = write(dir.path(), "b.csv", "site_id,y,x1,lon,lat\na,1,0.5,0,0\na,2,0.5,1,0\n");
        assert!(matches!(read_sites(&dup, 1.0, false), Err(DataError::Ingest { row: 2, .. })));
        let neg = write(dir.path(), "c.csv", "site_id,y,x1,lon,lat\na,1,0.5,0,0\nb,-2,0.5,1,0\n");
        assert!(matches!(read_sites(&neg, 1.0, false), Err(DataError::Ingest { row: 2, .. })));
        let junk = write(dir.path(), "d.csv", "site_id,y,x1,lon,lat\na,one,0.5,0,0\n");
        assert!(matches!(read_sites(&junk, 1.0, false), Err(DataError::Ingest { row: 1, .. })));
        assert!(matches!(read_sites(&dir.path().join("none.csv"), 1.0, false), Err(DataError::Io { .. })));
    }

    #[test]
    fn adjacency_rules() {
        let dir = tempfile::tempdir().unwrap();
        let ids: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let ok = write(dir.path(), "ok.txt", "# header\na b\nb a   # again\n\nc  b\n");
        assert_eq!(read_adjacency(&ok, &ids).unwrap(), vec![(0, 1), (1, 2)]);
        let unknown = write(dir.path(), "u.txt", "a b\na z\n");
        assert!(matches!(read_adjacency(&unknown, &ids), Err(DataError::Ingest { row: 2, .. })));
        let selfp = write(dir.path(), "s.txt", "c c\n");
        assert!(matches!(read_adjacency(&selfp, &ids), Err(DataError::Ingest { row: 1, .. })));
        let three = write(dir.path(), "t.txt", "a b c\n");
        assert!(read_adjacency(&three, &ids).is_err());
    }

    fn small_archive() -> PosteriorArchive {
        let mut config = FitConfig::new(2);
        config.iters = 3;
        config.burnin = 1;
        config.lambda = 0.3;
        PosteriorArchive {
            n: 3,
            p: 2,
            config,
            records: vec![
                ArchiveRecord {
                    z: vec![0, 0, 1],
                    betas: vec![vec![0.1, 1.0 / 3.0], vec![-2.5e-8, 7.0]],
                    log_lik: vec![-1.0, -2.2250738585072014e-308, f64::NEG_INFINITY],
                },
                ArchiveRecord {
                    z: vec![0, 0, 0],
                    betas: vec![vec![std::f64::consts::PI, 0.0]],
                    log_lik: vec![-3.0, -4.0, -5.5],
                },
            ],
        }
    }

    #[test]
    fn archive_round_trip_and_integrity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.txt");
        let a = small_archive();
        save_archive(&path, &a).unwrap();
        assert_eq!(load_archive(&path).unwrap(), a);

        let text = std::fs::read_to_string(&path).unwrap();
        let truncated: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
        let t = write(dir.path(), "t.txt", &truncated);
        assert!(matches!(load_archive(&t), Err(DataError::RecordCount { expected: 2, found: 1, .. })));
        let v = write(dir.path(), "v.txt", &text.replacen(ARCHIVE_VERSION, "mrfmfm-arch-0", 1));
        assert!(matches!(load_archive(&v), Err(DataError::Version { .. })));

        let mut empty = a.clone();
        empty.records.clear();
        assert!(matches!(save_archive(&dir.path().join("e.txt"), &empty), Err(DataError::Usage(_))));
    }

    #[test]
    fn dataset_and_truth_files_reload() {
        let dir = tempfile::tempdir().unwrap();
        let g = SpatialGraph::lattice(2, 3).unwrap();
        let x = DMatrix::from_fn(6, 2, |i, j| 1.0 + (i as f64) / 7.0 + j as f64 / 3.0);
        let data = Dataset::new(vec![0, 5, 17, 2, 9, 40], x, g.clone(), 1.0).unwrap();
        let ids: Vec<String> = (0..6).map(|i| format!("site{i}")).collect();
        write_dataset(&dir.path().join("d.csv"), &ids, &data).unwrap();
        write_adjacency(&dir.path().join("a.txt"), &ids, &g).unwrap();
        let back = load_dataset(&dir.path().join("d.csv"), Some(&dir.path().join("a.txt")), 1.0, false).unwrap();
        assert_eq!(back.ids, ids);
        assert_eq!(back.dataset, data);

        let truth = Truth {
            ids: ids.clone(),
            z: vec![0, 0, 1, 1, 0, 1],
            beta: DMatrix::from_fn(6, 2, |i, j| (i + j) as f64 / 4.0),
            w: vec![0.1, -0.2, 0.0, 0.3, 1e-9, -1.5],
        };
        write_truth(&dir.path().join("t.csv"), &truth).unwrap();
        assert_eq!(read_truth(&dir.path().join("t.csv")).unwrap(), truth);
    }
}

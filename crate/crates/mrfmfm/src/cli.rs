//! Command-line surface: argument definitions and the command
//! implementations behind them.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use mrfmfm_core::gibbs::{Dataset, FitConfig};
use mrfmfm_core::simgen::{generate, Link, ScenarioSpec};
use mrfmfm_core::{derive_seed, SpatialGraph};
use serde::{Deserialize, Serialize};

use crate::dataio::{
    self, load_dataset, read_json, read_truth, save_archive, write_adjacency, write_dataset, write_json, write_truth,
    ConfigEcho, DataError, SummaryFile, Truth,
};
use crate::harness::{self, default_grid, evaluate, mean_metrics, parse_grid, run_replicates, Metrics, TuneRow};

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, Parser)]
#[command(name = "mrfmfm", version, about = "Spatially clustered Poisson regression coefficients")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic scenario data with truth files.
    Simulate(SimulateArgs),
    /// Run one chain per dataset at a fixed lambda.
    Fit(FitArgs),
    /// Run a chain per lambda and keep the one with the largest LPML.
    Tune(TuneArgs),
    /// Score fit summaries against simulation truth.
    Evaluate(EvaluateArgs),
    /// Per-site labels and coefficients plus an LPML comparison table.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct LatticeArgs {
    /// Lattice rows used for simulated data.
    #[arg(long, default_value_t = 12)]
    pub rows: usize,
    /// Lattice columns used for simulated data.
    #[arg(long, default_value_t = 14)]
    pub cols: usize,
    /// Generate counts with an identity link instead of the log link.
    #[arg(long)]
    pub identity_link: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    pub scenario: u8,
    #[arg(long, default_value_t = 1)]
    pub replicates: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub lattice: LatticeArgs,
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Dataset CSV (site_id, y, x1..xp, lon, lat).
    #[arg(long, conflicts_with = "scenario", required_unless_present = "scenario")]
    pub data: Option<PathBuf>,
    /// Whitespace-separated site_id pairs.
    #[arg(long, requires = "data")]
    pub adjacency: Option<PathBuf>,
    /// Simulate this scenario instead of reading data.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    pub scenario: Option<u8>,
    #[arg(long, default_value_t = 1)]
    pub replicates: usize,
    /// Counts are divided by this and rounded at ingestion.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    /// Prepend a constant design column.
    #[arg(long)]
    pub intercept: bool,
    #[command(flatten)]
    pub lattice: LatticeArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ChainArgs {
    #[arg(long, default_value_t = 5000)]
    pub iters: usize,
    #[arg(long, default_value_t = 1000)]
    pub burnin: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1024)]
    pub marginal_draws: usize,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub chain: ChainArgs,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub chain: ChainArgs,
    /// Comma-separated lambdas; defaults to 0, 0.1, ..., 1.
    #[arg(long)]
    pub lambda_grid: Option<String>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// Directory holding `summary.json`, or `rep-*` subdirectories with one each.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Truth file for a single-fit directory (replicate directories carry their own).
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Directory holding `summary.json` (and `tune.csv` from a tuning run).
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Written next to every command's outputs as `manifest-<command>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<ConfigEcho>,
    pub seed: u64,
    pub scenario: Option<u8>,
    pub replicates: usize,
    pub lambda_grid: Option<Vec<f64>>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub versions: BTreeMap<String, String>,
    /// Kept apart from everything else so outputs can be compared byte for byte.
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    fn new(command: &str, seed: u64) -> Self {
        let mut versions = BTreeMap::new();
        versions.insert("mrfmfm".into(), env!("CARGO_PKG_VERSION").into());
        versions.insert("archive".into(), dataio::ARCHIVE_VERSION.into());
        Self {
            command: command.into(),
            config: None,
            seed,
            scenario: None,
            replicates: 1,
            lambda_grid: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            versions,
            wall_clock_seconds: 0.0,
        }
    }

    fn finish(mut self, out_dir: &Path, started: Instant) -> Result<()> {
        self.wall_clock_seconds = started.elapsed().as_secs_f64();
        let name = format!("manifest-{}.json", self.command);
        write_json(&out_dir.join(name), &self)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Tune(a) => cmd_tune(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Report(a) => cmd_report(&a),
    }
}

fn make_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn replicate_dir(out: &Path, r: usize) -> PathBuf {
    out.join(format!("rep-{r:03}"))
}

fn site_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("s{i:03}")).collect()
}

/// Simulated dataset and truth for one replicate.
pub struct Simulated {
    pub ids: Vec<String>,
    pub dataset: Dataset,
    pub truth: Truth,
}

pub fn simulate_one(scenario: u8, seed: u64, lattice: &LatticeArgs) -> Result<Simulated> {
    let graph = SpatialGraph::lattice(lattice.rows, lattice.cols)?;
    let mut spec = ScenarioSpec::scenario(scenario, seed)?;
    if lattice.identity_link {
        spec.link = Link::Identity;
    }
    let sim = generate(&spec, &graph)?;
    let ids = site_ids(graph.n_sites());
    Ok(Simulated {
        truth: Truth {
            ids: ids.clone(),
            z: sim.z_true,
            beta: sim.beta_true,
            w: sim.w_true,
        },
        ids,
        dataset: sim.dataset,
    })
}

fn write_simulated(dir: &Path, sim: &Simulated) -> Result<()> {
    make_dir(dir)?;
    write_dataset(&dir.join("data.csv"), &sim.ids, &sim.dataset)?;
    write_adjacency(&dir.join("adjacency.txt"), &sim.ids, sim.dataset.graph())?;
    write_truth(&dir.join("truth.csv"), &sim.truth)
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let started = Instant::now();
    make_dir(&a.out_dir)?;
    let dirs = run_replicates(a.replicates, a.seed, |r, seed| -> Result<String> {
        let sim = simulate_one(a.scenario, seed, &a.lattice)?;
        let dir = replicate_dir(&a.out_dir, r);
        write_simulated(&dir, &sim)?;
        Ok(format!("rep-{r:03}"))
    })?;
    let mut m = RunManifest::new("simulate", a.seed);
    m.scenario = Some(a.scenario);
    m.replicates = a.replicates;
    m.outputs = dirs;
    m.finish(&a.out_dir, started)
}

fn chain_config(p: usize, chain: &ChainArgs, seed: u64, lambda: f64) -> FitConfig {
    let mut cfg = FitConfig::new(p);
    cfg.iters = chain.iters;
    cfg.burnin = chain.burnin;
    cfg.seed = seed;
    cfg.lambda = lambda;
    cfg.marginal_draws = chain.marginal_draws;
    cfg
}

/// One unit of work: where to write, the data, and the chain seed.
struct Job {
    dir: PathBuf,
    label: String,
    ids: Vec<String>,
    dataset: Dataset,
    chain_seed: u64,
}

fn collect_jobs(input: &InputArgs, chain: &ChainArgs, out_dir: &Path) -> Result<Vec<Job>> {
    match (input.scenario, &input.data) {
        (Some(scenario), _) => run_replicates(input.replicates, chain.seed, |r, seed| -> Result<Job> {
            let sim = simulate_one(scenario, seed, &input.lattice)?;
            let dir = replicate_dir(out_dir, r);
            write_simulated(&dir, &sim)?;
            Ok(Job {
                dir,
                label: format!("rep-{r:03}"),
                ids: sim.ids,
                dataset: sim.dataset,
                chain_seed: derive_seed(seed, 1),
            })
        }),
        (None, Some(data)) => {
            let loaded = load_dataset(data, input.adjacency.as_deref(), input.scale, input.intercept)?;
            Ok(vec![Job {
                dir: out_dir.to_path_buf(),
                label: ".".into(),
                ids: loaded.ids,
                dataset: loaded.dataset,
                chain_seed: chain.seed,
            }])
        }
        (None, None) => Err(DataError::Usage("either --data or --scenario is required".into())),
    }
}

fn input_paths(input: &InputArgs) -> Vec<String> {
    [&input.data, &input.adjacency]
        .into_iter()
        .flatten()
        .map(|p| p.display().to_string())
        .collect()
}

pub fn cmd_fit(a: &FitArgs) -> Result<()> {
    let started = Instant::now();
    if a.lambda.is_nan() || a.lambda < 0.0 {
        return Err(DataError::Usage(format!("lambda must be nonnegative, got {}", a.lambda)));
    }
    make_dir(&a.out_dir)?;
    let jobs = collect_jobs(&a.input, &a.chain, &a.out_dir)?;
    let mut echo = None;
    let outputs = harness::thread_pool().install(|| {
        use rayon::prelude::*;
        jobs.par_iter()
            .map(|job| -> Result<(String, ConfigEcho)> {
                let cfg = chain_config(job.dataset.p(), &a.chain, job.chain_seed, a.lambda);
                let out = harness::fit(&job.dataset, &cfg)?;
                save_archive(&job.dir.join("archive.txt"), &out.archive)?;
                let summary = SummaryFile::new(&job.ids, a.lambda, &out.summary, out.floored_marginals);
                write_json(&job.dir.join("summary.json"), &summary)?;
                Ok((job.label.clone(), ConfigEcho::from(&cfg)))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut m = RunManifest::new("fit", a.chain.seed);
    for (label, cfg) in outputs {
        echo.get_or_insert(cfg);
        m.outputs.push(label);
    }
    m.config = echo;
    m.scenario = a.input.scenario;
    m.replicates = m.outputs.len();
    m.inputs = input_paths(&a.input);
    m.finish(&a.out_dir, started)
}

fn write_tune_table(path: &Path, rows: &[TuneRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["lambda", "lpml", "k_dahl"])?;
    for r in rows {
        w.write_record([r.lambda.to_string(), r.lpml.to_string(), r.k_dahl.to_string()])?;
    }
    w.flush().map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

pub fn read_tune_table(path: &Path) -> Result<Vec<TuneRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn cmd_tune(a: &TuneArgs) -> Result<()> {
    let started = Instant::now();
    let grid = match &a.lambda_grid {
        Some(s) => parse_grid(s)?,
        None => default_grid(),
    };
    make_dir(&a.out_dir)?;
    let jobs = collect_jobs(&a.input, &a.chain, &a.out_dir)?;
    let outputs = harness::thread_pool().install(|| {
        use rayon::prelude::*;
        jobs.par_iter()
            .map(|job| -> Result<(String, ConfigEcho)> {
                let cfg = chain_config(job.dataset.p(), &a.chain, job.chain_seed, 0.0);
                let outcome = harness::tune(&job.dataset, &cfg, &grid)?;
                write_tune_table(&job.dir.join("tune.csv"), &outcome.rows)?;
                let best = outcome.best();
                let lambda = outcome.rows[outcome.selected].lambda;
                save_archive(&job.dir.join("archive.txt"), &best.archive)?;
                let summary = SummaryFile::new(&job.ids, lambda, &best.summary, best.floored_marginals);
                write_json(&job.dir.join("summary.json"), &summary)?;
                Ok((job.label.clone(), ConfigEcho::from(&cfg)))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut m = RunManifest::new("tune", a.chain.seed);
    m.config = outputs.first().map(|o| o.1.clone());
    m.outputs = outputs.into_iter().map(|o| o.0).collect();
    m.scenario = a.input.scenario;
    m.replicates = m.outputs.len();
    m.lambda_grid = Some(grid);
    m.inputs = input_paths(&a.input);
    m.finish(&a.out_dir, started)
}

fn fit_dirs(out: &Path) -> Result<Vec<PathBuf>> {
    let mut reps: Vec<PathBuf> = fs::read_dir(out)
        .map_err(|source| DataError::Io {
            path: out.to_path_buf(),
            source,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("rep-")))
        .filter(|p| p.join("summary.json").exists())
        .collect();
    reps.sort();
    if reps.is_empty() && out.join("summary.json").exists() {
        reps.push(out.to_path_buf());
    }
    if reps.is_empty() {
        return Err(DataError::Usage(format!("no summary.json under {}", out.display())));
    }
    Ok(reps)
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let started = Instant::now();
    let dirs = fit_dirs(&a.out_dir)?;
    let mut rows = Vec::with_capacity(dirs.len());
    let mut labels = Vec::with_capacity(dirs.len());
    for dir in &dirs {
        let truth_path = match &a.truth {
            Some(t) if dirs.len() == 1 => t.clone(),
            _ => dir.join("truth.csv"),
        };
        if !truth_path.exists() {
            return Err(DataError::Usage(format!("missing truth file {}", truth_path.display())));
        }
        let truth = read_truth(&truth_path)?;
        let summary: SummaryFile = read_json(&dir.join("summary.json"))?;
        if truth.ids != summary.site_ids {
            return Err(DataError::Usage(format!("{}: truth and fit list different sites", dir.display())));
        }
        rows.push(evaluate(&summary.z, &summary.site_coefficients(), &truth.z, &truth.beta)?);
        labels.push(
            dir.strip_prefix(&a.out_dir)
                .ok()
                .map(|p| p.display().to_string())
                .filter(|s| !s.is_empty())
                .unwrap_or_else(|| ".".into()),
        );
    }
    let mean = mean_metrics(&rows)?;
    write_evaluation(&a.out_dir.join("evaluation.csv"), &labels, &rows, &mean)?;
    let mut m = RunManifest::new("evaluate", 0);
    m.replicates = rows.len();
    m.inputs = labels;
    m.outputs = vec!["evaluation.csv".into()];
    m.finish(&a.out_dir, started)
}

fn write_evaluation(path: &Path, labels: &[String], rows: &[Metrics], mean: &Metrics) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let p = mean.amse.len();
    let mut header = vec!["replicate".to_string(), "k".to_string(), "rand_index".to_string()];
    header.extend((1..=p).map(|j| format!("amse{j}")));
    w.write_record(&header)?;
    let mut emit = |label: &str, m: &Metrics| -> csv::Result<()> {
        let mut rec = vec![label.to_string(), m.k.to_string(), m.rand_index.to_string()];
        rec.extend(m.amse.iter().map(|v| v.to_string()));
        w.write_record(&rec)
    };
    for (l, r) in labels.iter().zip(rows) {
        emit(l, r)?;
    }
    emit("mean", mean)?;
    w.flush().map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

pub fn cmd_report(a: &ReportArgs) -> Result<()> {
    let started = Instant::now();
    let summary: SummaryFile = read_json(&a.out_dir.join("summary.json"))?;
    let coef = summary.site_coefficients();
    let sites = a.out_dir.join("sites.csv");
    let mut w = csv::Writer::from_path(&sites)?;
    let mut header = vec!["site_id".to_string(), "cluster".to_string()];
    header.extend((1..=coef.ncols()).map(|j| format!("beta{j}")));
    w.write_record(&header)?;
    for (i, id) in summary.site_ids.iter().enumerate() {
        let mut rec = vec![id.clone(), summary.z[i].to_string()];
        rec.extend((0..coef.ncols()).map(|j| coef[(i, j)].to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|source| DataError::Io { path: sites, source })?;

    let mut outputs = vec!["sites.csv".to_string()];
    let tune_path = a.out_dir.join("tune.csv");
    if tune_path.exists() {
        let rows = read_tune_table(&tune_path)?;
        let table = a.out_dir.join("lpml_comparison.csv");
        let mut w = csv::Writer::from_path(&table)?;
        w.write_record(["model", "lambda", "lpml", "k_dahl"])?;
        if let Some(mfm) = rows.iter().find(|r| r.lambda == 0.0) {
            w.write_record(["MFM".into(), mfm.lambda.to_string(), mfm.lpml.to_string(), mfm.k_dahl.to_string()])?;
        }
        let constrained: Vec<TuneRow> = rows.iter().copied().filter(|r| r.lambda > 0.0).collect();
        if let Some(i) = harness::select_lambda(&constrained) {
            let r = constrained[i];
            w.write_record(["MRF-MFM".into(), r.lambda.to_string(), r.lpml.to_string(), r.k_dahl.to_string()])?;
        }
        w.flush().map_err(|source| DataError::Io { path: table, source })?;
        outputs.push("lpml_comparison.csv".into());
    }
    let mut m = RunManifest::new("report", 0);
    m.inputs = vec!["summary.json".into()];
    m.outputs = outputs;
    m.finish(&a.out_dir, started)
}

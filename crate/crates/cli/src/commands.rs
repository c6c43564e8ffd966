//! The four subcommands, as library functions so tests can drive them directly.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use pgkit::diagnostics::{acf, kalman_filter_smoother, state_rmse, summarize, KalmanOutput, LinearGaussianModel, PosteriorSummary};
use pgkit::io::{read_data_csv, write_acf_csv, write_data_csv, write_json, write_trace_csv, Dataset};
use pgkit::pg::initial_path;
use pgkit::smc::{bootstrap_sweep, ParticleSystem, ResamplingScheme};
use pgkit::{
    blocked_pg_run, collapsed_pg_run, ipmcmc_run, pg_run, pgas_run, simulate, BlockedPgConfig, CollapsedPgConfig,
    GaussianVarianceConjugate, IpmcmcConfig, NoiseParams, ObservationSeries, PgConfig, RngStream, ThetaMode, Trace,
    TraceMeta, Trajectory,
};
use serde::Serialize;

use crate::config::{ModelSpec, RawConfig, RunConfig, Sampler};
use crate::error::{input_err, output_err, CliError};

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| output_err(path)(e.into()))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> pgkit::Result<()>) -> Result<(), CliError> {
    let mut w = create(path)?;
    f(&mut w).and_then(|_| w.flush().map_err(Into::into)).map_err(output_err(path))
}

fn run_err(cfg: &RunConfig) -> impl FnOnce(pgkit::Error) -> CliError + '_ {
    move |source| CliError::Run {
        context: cfg.sampler.name().to_string(),
        source,
    }
}

pub fn load_data(path: &Path) -> Result<Dataset, CliError> {
    let file = File::open(path).map_err(|e| input_err(path)(e.into()))?;
    read_data_csv(std::io::BufReader::new(file)).map_err(input_err(path))
}

/// Simulate `(x, y)` from the configured model at `truth`.
pub fn simulate_data(cfg: &RunConfig) -> Result<(Trajectory, ObservationSeries), CliError> {
    let mut rng = RngStream::from_seed(cfg.seed);
    simulate(&cfg.model, cfg.truth, cfg.horizon, &mut rng).map_err(|source| CliError::Run {
        context: "simulate".into(),
        source,
    })
}

pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    let (x, y) = simulate_data(cfg)?;
    write_file(out, |w| write_data_csv(w, Some(&x), &y))?;
    Ok(format!(
        "simulated T={} Q={} R={} seed={} -> {}",
        cfg.horizon,
        cfg.truth.q,
        cfg.truth.r,
        cfg.seed,
        out.display()
    ))
}

/// What a sampler produced.
#[derive(Clone, Debug)]
pub enum RunOutput {
    Filter {
        filtered_means: Vec<f64>,
        log_marginal_likelihood: f64,
        path: Vec<f64>,
    },
    Chain(Trace),
}

/// Run the configured sampler on `obs`. `threads` sizes the worker pool for
/// ipmcmc and blocked_pg (0 = all cores); the result does not depend on it.
pub fn execute(cfg: &RunConfig, obs: &[f64], threads: usize) -> Result<RunOutput, CliError> {
    if obs.len() != cfg.horizon {
        return Err(CliError::Config(format!(
            "config has T = {} but the data has {} rows",
            cfg.horizon,
            obs.len()
        )));
    }
    let wrap = run_err(cfg);
    let model = &cfg.model;
    let mut rng = RngStream::from_seed(cfg.seed);
    let n = cfg.num_particles;
    let scheme = if cfg.systematic {
        ResamplingScheme::Systematic
    } else {
        ResamplingScheme::Multinomial
    };
    let init_theta = cfg.theta.initial();
    let result = (|| -> pgkit::Result<RunOutput> {
        Ok(match cfg.sampler {
            Sampler::Smc => {
                let mut ps = ParticleSystem::new();
                let res = bootstrap_sweep(model, init_theta, obs, n, scheme, &mut ps, &mut rng)?;
                RunOutput::Filter {
                    filtered_means: ps.filtered_means()?,
                    log_marginal_likelihood: res.log_marginal_likelihood,
                    path: res.sampled_path.into_inner(),
                }
            }
            Sampler::Pg | Sampler::Pgas => {
                let pg = PgConfig {
                    scheme,
                    ancestor_sampling: cfg.ancestor_sampling,
                    ..PgConfig::new(n, cfg.iterations, cfg.theta)
                }
                .with_state_thin(cfg.state_thin);
                let init = initial_path(model, obs, init_theta, n, &mut rng)?;
                let trace = if cfg.sampler == Sampler::Pg {
                    pg_run(model, obs, &pg, &init, &mut rng)?
                } else {
                    pgas_run(model, obs, &pg, &init, &mut rng)?
                };
                RunOutput::Chain(trace)
            }
            Sampler::Ipmcmc => {
                let ip = IpmcmcConfig {
                    state_thin: cfg.state_thin,
                    threads,
                    ..IpmcmcConfig::new(n, cfg.iterations, cfg.nodes, cfg.conditional, cfg.theta)
                };
                let inits = (0..cfg.conditional)
                    .map(|_| initial_path(model, obs, init_theta, n, &mut rng))
                    .collect::<pgkit::Result<Vec<_>>>()?;
                RunOutput::Chain(ipmcmc_run(model, obs, &ip, &inits, &mut rng)?)
            }
            Sampler::BlockedPg => {
                let bp = BlockedPgConfig {
                    state_thin: cfg.state_thin,
                    threads,
                    ..BlockedPgConfig::new(n, cfg.iterations, cfg.block_len, cfg.overlap, cfg.theta)
                };
                RunOutput::Chain(blocked_pg_run(model, obs, &bp, &mut rng)?)
            }
            Sampler::CollapsedPg => {
                let conj = GaussianVarianceConjugate::new(cfg.prior);
                let cp = CollapsedPgConfig {
                    state_thin: cfg.state_thin,
                    ..CollapsedPgConfig::new(n, cfg.iterations)
                };
                let init = initial_path(model, obs, init_theta, n, &mut rng)?;
                RunOutput::Chain(collapsed_pg_run(model, &conj, obs, &cp, &init, &mut rng)?)
            }
        })
    })();
    result.map_err(wrap)
}

#[derive(Clone, Debug, Serialize)]
struct ConfigEcho {
    sampler: Sampler,
    #[serde(rename = "N")]
    num_particles: usize,
    #[serde(rename = "M")]
    iterations: usize,
    #[serde(rename = "T")]
    horizon: usize,
    seed: u64,
    model: ModelSpec,
    prior: pgkit::InvGammaPrior,
    theta_mode: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    nodes: Option<(usize, usize)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    blocks: Option<(usize, usize)>,
    state_thin: usize,
    scheme: &'static str,
}

impl ConfigEcho {
    fn new(cfg: &RunConfig) -> Self {
        Self {
            sampler: cfg.sampler,
            num_particles: cfg.num_particles,
            iterations: cfg.iterations,
            horizon: cfg.horizon,
            seed: cfg.seed,
            model: cfg.model,
            prior: cfg.prior,
            theta_mode: match cfg.theta {
                ThetaMode::Fixed(NoiseParams { q, r }) => format!("fixed({q}, {r})"),
                ThetaMode::Infer { init, .. } => format!("infer from ({}, {})", init.q, init.r),
            },
            nodes: (cfg.sampler == Sampler::Ipmcmc).then_some((cfg.nodes, cfg.conditional)),
            blocks: (cfg.sampler == Sampler::BlockedPg).then_some((cfg.block_len, cfg.overlap)),
            state_thin: cfg.state_thin,
            scheme: if cfg.systematic { "systematic" } else { "multinomial" },
        }
    }
}

#[derive(Clone, Debug, Serialize)]
struct RunMeta<'a> {
    config: ConfigEcho,
    #[serde(skip_serializing_if = "Option::is_none")]
    trace: Option<&'a TraceMeta>,
    threads: usize,
    data: String,
}

/// Posterior and accuracy summaries written to `summary.json`.
#[derive(Clone, Debug, Default, Serialize)]
pub struct RunSummary {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burn_in_iterations: Option<usize>,
    #[serde(rename = "Q", skip_serializing_if = "Option::is_none")]
    pub q: Option<PosteriorSummary>,
    #[serde(rename = "R", skip_serializing_if = "Option::is_none")]
    pub r: Option<PosteriorSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state_rmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_marginal_likelihood: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub summary: RunSummary,
    pub files: Vec<PathBuf>,
}

fn write_states(path: &Path, estimate: &[f64], truth: Option<&[f64]>, label: &str) -> Result<(), CliError> {
    write_file(path, |w| {
        let mut csv = csv::Writer::from_writer(w);
        let mut header = vec!["t", label];
        if truth.is_some() {
            header.push("x");
        }
        csv.write_record(&header)?;
        for (k, v) in estimate.iter().enumerate() {
            let mut rec = vec![(k + 1).to_string(), v.to_string()];
            if let Some(x) = truth {
                rec.push(x[k].to_string());
            }
            csv.write_record(&rec)?;
        }
        csv.flush()?;
        Ok(())
    })
}

/// Summaries of a finished chain: burn-in of one third, then posterior
/// summaries and ACFs for inferred parameters and the posterior-mean path.
fn chain_diagnostics(
    cfg: &RunConfig,
    trace: &Trace,
    truth: Option<&[f64]>,
    out_dir: &Path,
    files: &mut Vec<PathBuf>,
) -> Result<RunSummary, CliError> {
    let wrap = run_err(cfg);
    let kept = if trace.len() >= 3 {
        trace.discard_burn_in().map_err(wrap)?
    } else {
        trace.clone()
    };
    let mut summary = RunSummary {
        burn_in_iterations: Some(kept.first_iter),
        ..RunSummary::default()
    };
    if matches!(cfg.theta, ThetaMode::Infer { .. }) && kept.len() >= 2 {
        for (name, series) in [("Q", kept.q_samples()), ("R", kept.r_samples())] {
            let s = summarize(&series).map_err(run_err(cfg))?;
            if name == "Q" {
                summary.q = Some(s);
            } else {
                summary.r = Some(s);
            }
            // A chain that never moved has no autocorrelation to report.
            if let Ok(a) = acf(&series, cfg.max_lag.min(series.len() - 1)) {
                let path = out_dir.join(format!("acf_{name}.csv"));
                write_file(&path, |w| write_acf_csv(w, &a))?;
                files.push(path);
            }
        }
    }
    if let Some(mean) = kept.state_mean() {
        if let Some(x) = truth {
            summary.state_rmse = Some(state_rmse(&mean, x).map_err(run_err(cfg))?);
        }
        let path = out_dir.join("states.csv");
        write_states(&path, &mean, truth, "posterior_mean")?;
        files.push(path);
    }
    Ok(summary)
}

pub fn cmd_run(cfg: &RunConfig, data_path: &Path, out_dir: &Path, threads: usize) -> Result<RunReport, CliError> {
    let data = load_data(data_path)?;
    let output = execute(cfg, &data.y, threads)?;
    fs::create_dir_all(out_dir).map_err(|e| output_err(out_dir)(e.into()))?;
    let truth = data.x.as_deref();
    let mut files = Vec::new();
    let (summary, trace_meta) = match &output {
        RunOutput::Filter {
            filtered_means,
            log_marginal_likelihood,
            ..
        } => {
            let path = out_dir.join("filtered.csv");
            write_states(&path, filtered_means, truth, "filtered_mean")?;
            files.push(path);
            let rmse = match truth {
                Some(x) => Some(state_rmse(filtered_means, x).map_err(run_err(cfg))?),
                None => None,
            };
            let s = RunSummary {
                state_rmse: rmse,
                log_marginal_likelihood: Some(*log_marginal_likelihood),
                ..RunSummary::default()
            };
            (s, None)
        }
        RunOutput::Chain(trace) => {
            let path = out_dir.join("trace.csv");
            write_file(&path, |w| write_trace_csv(w, trace))?;
            files.push(path);
            (chain_diagnostics(cfg, trace, truth, out_dir, &mut files)?, Some(&trace.meta))
        }
    };
    let path = out_dir.join("summary.json");
    write_file(&path, |w| write_json(w, &summary))?;
    files.push(path);
    let meta = RunMeta {
        config: ConfigEcho::new(cfg),
        trace: trace_meta,
        threads,
        data: data_path.display().to_string(),
    };
    let path = out_dir.join("meta.json");
    write_file(&path, |w| write_json(w, &meta))?;
    files.push(path);
    Ok(RunReport { summary, files })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub sampler: Sampler,
    #[serde(rename = "M")]
    pub iterations: usize,
    #[serde(rename = "N")]
    pub num_particles: usize,
    /// `None` when the cell failed.
    pub wall_seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchEnvironment {
    pub cpu: String,
    pub available_cores: usize,
    /// Requested worker threads (0 = one per core).
    pub threads: usize,
    pub os: &'static str,
    pub arch: &'static str,
}

impl BenchEnvironment {
    pub fn detect(threads: usize) -> Self {
        let cpu = fs::read_to_string("/proc/cpuinfo")
            .ok()
            .and_then(|s| {
                s.lines()
                    .find(|l| l.starts_with("model name"))
                    .and_then(|l| l.split_once(':'))
                    .map(|(_, v)| v.trim().to_string())
            })
            .unwrap_or_else(|| "unknown".into());
        Self {
            cpu,
            available_cores: std::thread::available_parallelism().map_or(1, |n| n.get()),
            threads,
            os: std::env::consts::OS,
            arch: std::env::consts::ARCH,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub environment: BenchEnvironment,
}

/// Expand `sampler`, `N` and `M` lists into one validated config per cell.
/// Everything is checked before any cell runs.
pub fn bench_matrix(raw: &RawConfig) -> Result<Vec<RunConfig>, CliError> {
    let samplers = raw.list("sampler");
    let ns = raw.list("N");
    let ms = raw.list("M");
    if samplers.is_empty() || ns.is_empty() {
        return Err(CliError::Config(
            "bench matrix is empty: `sampler` and `N` must each list at least one value".into(),
        ));
    }
    let samplers = samplers
        .iter()
        .map(|s| s.parse::<Sampler>().map_err(CliError::Config))
        .collect::<Result<Vec<_>, _>>()?;
    if ms.is_empty() && samplers.iter().any(|s| *s != Sampler::Smc) {
        return Err(CliError::Config("bench matrix is empty: `M` must list at least one value".into()));
    }
    let mut cells = Vec::new();
    for &sampler in &samplers {
        let m_values: Vec<Option<&String>> = if sampler == Sampler::Smc {
            vec![None]
        } else {
            ms.iter().map(Some).collect()
        };
        for m in m_values {
            for n in &ns {
                let mut cell = raw.clone();
                cell.set("sampler", sampler.name());
                cell.set("N", n.clone());
                match m {
                    Some(m) => cell.set("M", m.clone()),
                    None => cell.remove("M"),
                }
                for key in ["R", "P", "block_len", "overlap", "ancestor_sampling"] {
                    let owner = match key {
                        "R" | "P" => Sampler::Ipmcmc,
                        "ancestor_sampling" => Sampler::Pgas,
                        _ => Sampler::BlockedPg,
                    };
                    if sampler != owner && samplers.contains(&owner) {
                        cell.remove(key);
                    }
                }
                cells.push(cell.resolve(Some(sampler))?);
            }
        }
    }
    Ok(cells)
}

/// Time every cell on the same data. A failing cell is recorded as `NA` and
/// the remaining cells still run.
pub fn run_bench(cells: &[RunConfig], obs: &[f64], threads: usize, mut progress: impl FnMut(&BenchRow)) -> BenchReport {
    let rows = cells
        .iter()
        .map(|cfg| {
            let start = Instant::now();
            let res = execute(cfg, obs, threads);
            let secs = start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE);
            let row = BenchRow {
                sampler: cfg.sampler,
                iterations: cfg.iterations,
                num_particles: cfg.num_particles,
                wall_seconds: res.as_ref().ok().map(|_| secs),
                error: res.err().map(|e| e.to_string()),
            };
            progress(&row);
            row
        })
        .collect();
    BenchReport {
        rows,
        environment: BenchEnvironment::detect(threads),
    }
}

pub fn write_bench_csv<W: Write>(out: W, report: &BenchReport) -> pgkit::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sampler", "M", "N", "wall_seconds"])?;
    for r in &report.rows {
        w.write_record([
            r.sampler.name().to_string(),
            r.iterations.to_string(),
            r.num_particles.to_string(),
            r.wall_seconds.map_or_else(|| "NA".to_string(), |s| s.to_string()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Sidecar path next to a CSV: `bench.csv` -> `bench.json`.
pub fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn cmd_bench(
    raw: &RawConfig,
    data_path: Option<&Path>,
    out: &Path,
    threads: usize,
    progress: impl FnMut(&BenchRow),
) -> Result<BenchReport, CliError> {
    let cells = bench_matrix(raw)?;
    let obs = match data_path {
        Some(p) => load_data(p)?.y.into_inner(),
        None => simulate_data(&cells[0])?.1.into_inner(),
    };
    // Validate output paths before spending time on the runs.
    create(out)?;
    let report = run_bench(&cells, &obs, threads, progress);
    write_file(out, |w| write_bench_csv(w, &report))?;
    let side = sidecar(out);
    write_file(&side, |w| write_json(w, &report))?;
    Ok(report)
}

#[derive(Clone, Debug, Serialize)]
struct OracleMeta<'a> {
    model: &'a LinearGaussianModel,
    log_likelihood: f64,
}

pub fn oracle_model(cfg: &RunConfig) -> Result<LinearGaussianModel, CliError> {
    let ModelSpec::LinearGaussian { a, c, m0, p0 } = cfg.model else {
        return Err(CliError::Config(
            "oracle needs `model = linear_gaussian` (the exact smoother exists for that model only)".into(),
        ));
    };
    let ThetaMode::Fixed(NoiseParams { q, r }) = cfg.theta else {
        return Err(CliError::Config("oracle needs `theta_mode = fixed(Q, R)`".into()));
    };
    Ok(LinearGaussianModel { a, c, q, r, m0, p0 })
}

/// Exact Kalman filter / RTS smoother on a data file.
pub fn cmd_oracle(cfg: &RunConfig, data_path: &Path, out: &Path) -> Result<KalmanOutput, CliError> {
    let model = oracle_model(cfg)?;
    let data = load_data(data_path)?;
    let k = kalman_filter_smoother(&model, &data.y).map_err(|source| CliError::Run {
        context: "oracle".into(),
        source,
    })?;
    write_file(out, |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["t", "filtered_mean", "filtered_var", "smoothed_mean", "smoothed_var"])?;
        for i in 0..k.filtered_means.len() {
            csv.write_record([
                (i + 1).to_string(),
                k.filtered_means[i].to_string(),
                k.filtered_vars[i].to_string(),
                k.smoothed_means[i].to_string(),
                k.smoothed_vars[i].to_string(),
            ])?;
        }
        csv.flush()?;
        Ok(())
    })?;
    let meta = OracleMeta {
        model: &model,
        log_likelihood: k.log_likelihood,
    };
    write_file(&sidecar(out), |w| write_json(w, &meta))?;
    Ok(k)
}

//! Flat `key = value` run configuration.
//!
//! ```text
//! # comments start with '#', anywhere on a line
//! sampler    = pgas
//! N          = 10
//! M          = 10000
//! T          = 500
//! seed       = 7
//! model      = benchmark
//! theta_mode = infer          # or fixed(0.1, 1)
//! ```
//!
//! Keys are case-sensitive and may appear once. Unknown keys, and keys that
//! belong to a different sampler, are rejected.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use pgkit::{
    BenchmarkModel, InitialState, InvGammaPrior, LinearGaussianSsm, NoiseParams, SsmModel, ThetaMode,
};
use serde::Serialize;

use crate::error::CliError;

const KNOWN_KEYS: &[&str] = &[
    "sampler",
    "N",
    "M",
    "T",
    "seed",
    "model",
    "a",
    "c",
    "m0",
    "p0",
    "alpha_q",
    "beta_q",
    "alpha_r",
    "beta_r",
    "R",
    "P",
    "block_len",
    "overlap",
    "theta_mode",
    "init_Q",
    "init_R",
    "truth",
    "state_thin",
    "scheme",
    "ancestor_sampling",
    "max_lag",
];

/// Keys that only make sense for one sampler.
const SAMPLER_KEYS: &[(&str, Sampler)] = &[
    ("R", Sampler::Ipmcmc),
    ("P", Sampler::Ipmcmc),
    ("block_len", Sampler::BlockedPg),
    ("overlap", Sampler::BlockedPg),
    ("ancestor_sampling", Sampler::Pgas),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    Smc,
    Pg,
    Pgas,
    Ipmcmc,
    BlockedPg,
    CollapsedPg,
}

impl Sampler {
    pub const ALL: [Sampler; 6] = [
        Sampler::Smc,
        Sampler::Pg,
        Sampler::Pgas,
        Sampler::Ipmcmc,
        Sampler::BlockedPg,
        Sampler::CollapsedPg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Sampler::Smc => "smc",
            Sampler::Pg => "pg",
            Sampler::Pgas => "pgas",
            Sampler::Ipmcmc => "ipmcmc",
            Sampler::BlockedPg => "blocked_pg",
            Sampler::CollapsedPg => "collapsed_pg",
        }
    }
}

impl fmt::Display for Sampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Sampler {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Sampler::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown sampler {s:?} (expected one of smc, pg, pgas, ipmcmc, blocked_pg, collapsed_pg)"))
    }
}

/// The model a config refers to. Implements [`SsmModel`] by dispatch so the
/// samplers stay monomorphic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Benchmark,
    LinearGaussian { a: f64, c: f64, m0: f64, p0: f64 },
}

impl ModelSpec {
    fn linear(&self) -> Option<LinearGaussianSsm> {
        match *self {
            ModelSpec::Benchmark => None,
            ModelSpec::LinearGaussian { a, c, m0, p0 } => Some(LinearGaussianSsm { a, c, m0, p0 }),
        }
    }
}

impl SsmModel for ModelSpec {
    fn initial(&self) -> InitialState {
        match self.linear() {
            None => BenchmarkModel.initial(),
            Some(m) => m.initial(),
        }
    }

    #[inline]
    fn transition_mean(&self, x_prev: f64, t_prev: usize) -> f64 {
        match *self {
            ModelSpec::Benchmark => BenchmarkModel.transition_mean(x_prev, t_prev),
            ModelSpec::LinearGaussian { a, .. } => a * x_prev,
        }
    }

    #[inline]
    fn observation_mean(&self, x: f64) -> f64 {
        match *self {
            ModelSpec::Benchmark => BenchmarkModel.observation_mean(x),
            ModelSpec::LinearGaussian { c, .. } => c * x,
        }
    }
}

/// A validated configuration for one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub sampler: Sampler,
    pub num_particles: usize,
    pub iterations: usize,
    pub horizon: usize,
    pub seed: u64,
    pub model: ModelSpec,
    pub prior: InvGammaPrior,
    pub theta: ThetaMode,
    /// Parameters used by `simulate` (and by `bench` when it generates data).
    pub truth: NoiseParams,
    pub nodes: usize,
    pub conditional: usize,
    pub block_len: usize,
    pub overlap: usize,
    /// Store every `state_thin`-th path; 0 stores none.
    pub state_thin: usize,
    pub systematic: bool,
    pub ancestor_sampling: bool,
    pub max_lag: usize,
}

/// Raw parsed file: key -> (value, line number).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<String, (String, usize)>,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body
                .split_once('=')
                .ok_or_else(|| config_err(format!("line {lineno}: expected `key = value`, found {body:?}")))?;
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() {
                return Err(config_err(format!("line {lineno}: empty key")));
            }
            if !KNOWN_KEYS.contains(&key) {
                return Err(config_err(format!("line {lineno}: unknown key `{key}`")));
            }
            if value.is_empty() {
                return Err(config_err(format!("line {lineno}: key `{key}` has no value")));
            }
            if let Some((_, first)) = entries.get(key) {
                return Err(config_err(format!("line {lineno}: key `{key}` already set on line {first}")));
            }
            entries.insert(key.to_string(), (value.to_string(), lineno));
        }
        Ok(Self { entries })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), (value.into(), 0));
    }

    pub fn remove(&mut self, key: &str) {
        self.entries.remove(key);
    }

    fn origin(&self, key: &str) -> String {
        match self.entries.get(key) {
            Some((_, 0)) | None => format!("`{key}`"),
            Some((_, line)) => format!("`{key}` (line {line})"),
        }
    }

    fn parsed<T: FromStr>(&self, key: &str, what: &str) -> Result<Option<T>, CliError> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| config_err(format!("{}: expected {what}, found {v:?}", self.origin(key)))),
        }
    }

    fn count(&self, key: &str) -> Result<Option<usize>, CliError> {
        match self.parsed::<usize>(key, "a positive integer")? {
            Some(0) => Err(config_err(format!("{}: must be a positive integer", self.origin(key)))),
            v => Ok(v),
        }
    }

    fn required_count(&self, key: &str, why: &str) -> Result<usize, CliError> {
        self.count(key)?
            .ok_or_else(|| config_err(format!("missing required key `{key}` ({why})")))
    }

    fn real(&self, key: &str) -> Result<Option<f64>, CliError> {
        match self.parsed::<f64>(key, "a number")? {
            Some(v) if !v.is_finite() => Err(config_err(format!("{}: must be finite", self.origin(key)))),
            v => Ok(v),
        }
    }

    fn positive(&self, key: &str, default: f64) -> Result<f64, CliError> {
        let v = self.real(key)?.unwrap_or(default);
        if v > 0.0 {
            Ok(v)
        } else {
            Err(config_err(format!("{}: must be > 0, found {v}", self.origin(key))))
        }
    }

    fn pair(&self, key: &str, text: &str) -> Result<(f64, f64), CliError> {
        let bad = || config_err(format!("{}: expected two positive numbers `Q, R`, found {text:?}", self.origin(key)));
        let (a, b) = text.split_once(',').ok_or_else(bad)?;
        let q: f64 = a.trim().parse().map_err(|_| bad())?;
        let r: f64 = b.trim().parse().map_err(|_| bad())?;
        if q > 0.0 && r > 0.0 && q.is_finite() && r.is_finite() {
            Ok((q, r))
        } else {
            Err(bad())
        }
    }

    /// Comma-separated values of a key, for bench matrices.
    pub fn list(&self, key: &str) -> Vec<String> {
        self.get(key)
            .map(|v| v.split(',').map(|s| s.trim().to_string()).collect())
            .unwrap_or_default()
    }

    fn model(&self) -> Result<ModelSpec, CliError> {
        let linear_keys = ["a", "c", "m0", "p0"];
        match self.get("model").unwrap_or("benchmark") {
            "benchmark" => {
                if let Some(k) = linear_keys.iter().find(|k| self.get(k).is_some()) {
                    return Err(config_err(format!(
                        "{} is only used with model = linear_gaussian",
                        self.origin(k)
                    )));
                }
                Ok(ModelSpec::Benchmark)
            }
            "linear_gaussian" => {
                let mut v = [0.0; 4];
                for (slot, key) in v.iter_mut().zip(linear_keys) {
                    *slot = self
                        .real(key)?
                        .ok_or_else(|| config_err(format!("missing required key `{key}` (model = linear_gaussian)")))?;
                }
                if v[3] <= 0.0 {
                    return Err(config_err(format!("{}: must be > 0", self.origin("p0"))));
                }
                Ok(ModelSpec::LinearGaussian {
                    a: v[0],
                    c: v[1],
                    m0: v[2],
                    p0: v[3],
                })
            }
            other => Err(config_err(format!(
                "{}: unknown model {other:?} (expected benchmark or linear_gaussian)",
                self.origin("model")
            ))),
        }
    }

    fn theta(&self, sampler: Option<Sampler>, prior: InvGammaPrior) -> Result<ThetaMode, CliError> {
        let init = NoiseParams::new(self.positive("init_Q", 1.0)?, self.positive("init_R", 1.0)?)
            .map_err(|e| config_err(e.to_string()))?;
        let text = self.get("theta_mode");
        let mode = match text {
            None => None,
            Some("infer") => Some(ThetaMode::Infer { prior, init }),
            Some(t) => {
                let inner = t
                    .strip_prefix("fixed(")
                    .and_then(|s| s.strip_suffix(')'))
                    .ok_or_else(|| {
                        config_err(format!(
                            "{}: expected `infer` or `fixed(Q, R)`, found {t:?}",
                            self.origin("theta_mode")
                        ))
                    })?;
                let (q, r) = self.pair("theta_mode", inner)?;
                Some(ThetaMode::Fixed(NoiseParams { q, r }))
            }
        };
        if matches!(mode, Some(ThetaMode::Fixed(_))) {
            for k in ["init_Q", "init_R"] {
                if self.get(k).is_some() {
                    return Err(config_err(format!("{} is only used with theta_mode = infer", self.origin(k))));
                }
            }
        }
        match (sampler, mode) {
            (Some(Sampler::Smc), Some(m @ ThetaMode::Fixed(_))) => Ok(m),
            (Some(Sampler::Smc), _) => Err(config_err(
                "sampler smc needs `theta_mode = fixed(Q, R)` (a filter does not infer parameters)",
            )),
            (Some(s @ (Sampler::Ipmcmc | Sampler::BlockedPg)), None) => Err(config_err(format!(
                "missing required key `theta_mode` (sampler {s}: use fixed(Q, R), or infer to enable the shared parameter update)"
            ))),
            (Some(Sampler::CollapsedPg), Some(ThetaMode::Fixed(_))) => Err(config_err(
                "sampler collapsed_pg integrates the parameters out; theta_mode must be infer",
            )),
            (_, Some(m)) => Ok(m),
            (_, None) => Ok(ThetaMode::Infer { prior, init }),
        }
    }

    /// Validate into a [`RunConfig`]. `sampler` is `None` for commands that do
    /// not run a sampler (`simulate`, `oracle`).
    pub fn resolve(&self, sampler: Option<Sampler>) -> Result<RunConfig, CliError> {
        for (key, owner) in SAMPLER_KEYS {
            if self.get(key).is_some() && sampler != Some(*owner) {
                let used = match sampler {
                    Some(s) => format!("sampler {s}"),
                    None => "this command".into(),
                };
                return Err(config_err(format!(
                    "{} applies to sampler {owner} only, not {used}",
                    self.origin(key)
                )));
            }
        }
        let model = self.model()?;
        let prior = InvGammaPrior {
            alpha_q: self.positive("alpha_q", 0.01)?,
            beta_q: self.positive("beta_q", 0.01)?,
            alpha_r: self.positive("alpha_r", 0.01)?,
            beta_r: self.positive("beta_r", 0.01)?,
        };
        let theta = self.theta(sampler, prior)?;
        let truth = match self.get("truth") {
            None => BenchmarkModel::TRUE_PARAMS,
            Some(t) => {
                let (q, r) = self.pair("truth", t)?;
                NoiseParams { q, r }
            }
        };
        let seed = self.parsed::<u64>("seed", "an unsigned 64-bit integer")?.unwrap_or(1);
        let horizon = self.count("T")?.unwrap_or(BenchmarkModel::HORIZON);
        let systematic = match self.get("scheme").unwrap_or("multinomial") {
            "multinomial" => false,
            "systematic" => true,
            other => {
                return Err(config_err(format!(
                    "{}: expected multinomial or systematic, found {other:?}",
                    self.origin("scheme")
                )))
            }
        };
        if systematic && !matches!(sampler, Some(Sampler::Smc | Sampler::Pg | Sampler::Pgas)) {
            return Err(config_err("scheme = systematic is supported by smc, pg and pgas only"));
        }
        let ancestor_sampling = self.parsed::<bool>("ancestor_sampling", "true or false")?.unwrap_or(true);

        let mut cfg = RunConfig {
            sampler: sampler.unwrap_or(Sampler::Smc),
            num_particles: 0,
            iterations: 1,
            horizon,
            seed,
            model,
            prior,
            theta,
            truth,
            nodes: 0,
            conditional: 0,
            block_len: 0,
            overlap: 0,
            state_thin: self.parsed::<usize>("state_thin", "a non-negative integer")?.unwrap_or(1),
            systematic,
            ancestor_sampling,
            max_lag: self.parsed::<usize>("max_lag", "a non-negative integer")?.unwrap_or(50),
        };
        let Some(sampler) = sampler else {
            return Ok(cfg);
        };
        let why = format!("sampler {sampler}");
        cfg.num_particles = self.required_count("N", &why)?;
        if cfg.num_particles < 2 {
            return Err(config_err(format!("{}: need at least 2 particles", self.origin("N"))));
        }
        cfg.iterations = match sampler {
            Sampler::Smc => {
                if self.get("M").is_some() {
                    return Err(config_err(format!("{} is not used by sampler smc", self.origin("M"))));
                }
                1
            }
            _ => self.required_count("M", &why)?,
        };
        match sampler {
            Sampler::Ipmcmc => {
                cfg.nodes = self.required_count("R", &why)?;
                cfg.conditional = self.required_count("P", &why)?;
                if cfg.conditional > cfg.nodes {
                    return Err(config_err(format!(
                        "P = {} conditional nodes exceeds R = {} nodes",
                        cfg.conditional, cfg.nodes
                    )));
                }
            }
            Sampler::BlockedPg => {
                cfg.block_len = self.required_count("block_len", &why)?;
                cfg.overlap = self
                    .parsed::<usize>("overlap", "a non-negative integer")?
                    .ok_or_else(|| config_err(format!("missing required key `overlap` ({why})")))?;
                pgkit::make_blocks(cfg.horizon, cfg.block_len, cfg.overlap)
                    .map_err(|e| config_err(format!("block_len/overlap: {e}")))?;
            }
            _ => {}
        }
        Ok(cfg)
    }
}

impl RawConfig {
    /// Resolve using the file's own `sampler` key.
    pub fn to_run_config(&self, sampler_required: bool) -> Result<RunConfig, CliError> {
        let sampler = match self.get("sampler") {
            Some(s) => Some(s.parse::<Sampler>().map_err(CliError::Config)?),
            None if sampler_required => return Err(config_err("missing required key `sampler`")),
            None => None,
        };
        self.resolve(sampler)
    }
}

impl RunConfig {
    pub fn parse(text: &str, sampler_required: bool) -> Result<Self, CliError> {
        RawConfig::parse(text)?.to_run_config(sampler_required)
    }
}

/// Replace the configured seed with `PGKIT_SEED` when that variable is set.
pub fn seed_override(value: Option<&str>) -> Result<Option<u64>, CliError> {
    match value {
        None => Ok(None),
        Some(v) => v
            .trim()
            .parse::<u64>()
            .map(Some)
            .map_err(|_| config_err(format!("PGKIT_SEED: expected an unsigned 64-bit integer, found {v:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn err(text: &str) -> String {
        match RunConfig::parse(text, true) {
            Err(CliError::Config(m)) => m,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_pg_config_takes_defaults() {
        let cfg = RunConfig::parse("sampler = pg\nN = 100\nM = 50\n", true).unwrap();
        assert_eq!(cfg.horizon, 500);
        assert_eq!(cfg.seed, 1);
        assert_eq!(cfg.model, ModelSpec::Benchmark);
        assert_eq!(cfg.prior, InvGammaPrior::default());
        assert_eq!(
            cfg.theta,
            ThetaMode::Infer {
                prior: InvGammaPrior::default(),
                init: NoiseParams { q: 1.0, r: 1.0 }
            }
        );
        assert!(!cfg.systematic);
    }

    #[test]
    fn comments_and_whitespace() {
        let text = "# header\n  sampler=pgas # trailing\n\nN =10\nM= 5\ntheta_mode = fixed( 0.1 , 1 )\n";
        let cfg = RunConfig::parse(text, true).unwrap();
        assert_eq!(cfg.sampler, Sampler::Pgas);
        assert_eq!(cfg.theta, ThetaMode::Fixed(NoiseParams { q: 0.1, r: 1.0 }));
    }

    #[test]
    fn blocked_pg_without_block_len_names_the_key() {
        let m = err("sampler = blocked_pg\nN = 10\nM = 10\noverlap = 1\ntheta_mode = infer\n");
        assert!(m.contains("`block_len`"), "{m}");
    }

    #[test]
    fn sampler_specific_keys_are_exclusive() {
        assert!(err("sampler = pg\nN = 10\nM = 10\nR = 4\n").contains("ipmcmc"));
        assert!(err("sampler = pg\nN = 10\nM = 10\nblock_len = 4\n").contains("blocked_pg"));
        let m = err("sampler = ipmcmc\nN = 10\nM = 10\nR = 4\ntheta_mode = fixed(1, 1)\n");
        assert!(m.contains("`P`"), "{m}");
        assert!(err("sampler = ipmcmc\nN = 10\nM = 10\nR = 2\nP = 3\ntheta_mode = infer\n").contains("exceeds"));
    }

    #[test]
    fn state_only_samplers_need_an_explicit_theta_mode() {
        assert!(err("sampler = ipmcmc\nN = 10\nM = 10\nR = 4\nP = 2\n").contains("theta_mode"));
        assert!(err("sampler = blocked_pg\nN = 10\nM = 10\nblock_len = 5\n").contains("theta_mode"));
    }

    #[test]
    fn malformed_lines() {
        assert!(err("sampler pg\n").contains("line 1"));
        assert!(err("sampler = pg\nsampler = pgas\n").contains("already set"));
        assert!(err("sampler = pg\nfoo = 1\n").contains("unknown key `foo`"));
        assert!(err("sampler = pg\nN = -3\nM = 1\n").contains("`N` (line 2)"));
        assert!(err("sampler = pg\nN = 0\nM = 1\n").contains("positive"));
        assert!(err("sampler = magic\n").contains("unknown sampler"));
        assert!(err("N = 3\n").contains("`sampler`"));
        assert!(err("sampler = pg\nN = 3\nM = 1\ntheta_mode = fixed(1)\n").contains("theta_mode"));
        assert!(err("sampler = pg\nN = 3\nM = 1\nalpha_q = 0\n").contains("alpha_q"));
    }

    #[test]
    fn sampler_theta_rules() {
        assert!(err("sampler = smc\nN = 10\n").contains("fixed"));
        assert!(err("sampler = collapsed_pg\nN = 10\nM = 2\ntheta_mode = fixed(1, 1)\n").contains("infer"));
        assert!(err("sampler = smc\nN = 10\nM = 3\ntheta_mode = fixed(1, 1)\n").contains("`M`"));
        let cfg = RunConfig::parse("sampler = smc\nN = 10\ntheta_mode = fixed(2, 3)\n", true).unwrap();
        assert_eq!(cfg.iterations, 1);
    }

    #[test]
    fn linear_gaussian_model() {
        let text = "sampler = pg\nN = 4\nM = 2\nmodel = linear_gaussian\na = 0.8\nc = 1\nm0 = 0\np0 = 1\n";
        let cfg = RunConfig::parse(text, true).unwrap();
        assert_eq!(cfg.model, ModelSpec::LinearGaussian { a: 0.8, c: 1.0, m0: 0.0, p0: 1.0 });
        assert!(err("sampler = pg\nN = 4\nM = 2\nmodel = linear_gaussian\na = 0.8\n").contains("`c`"));
        assert!(err("sampler = pg\nN = 4\nM = 2\na = 0.8\n").contains("linear_gaussian"));
    }

    #[test]
    fn block_partition_is_checked_up_front() {
        let m = err("sampler = blocked_pg\nN = 4\nM = 2\nT = 10\nblock_len = 4\noverlap = 3\ntheta_mode = infer\n");
        assert!(m.contains("block_len/overlap"), "{m}");
    }

    #[test]
    fn model_spec_dispatch_matches_concrete_models() {
        let lg = ModelSpec::LinearGaussian { a: 0.75, c: 2.0, m0: 0.0, p0: 1.0 };
        assert_eq!(lg.transition_mean(1.5, 3), 1.125);
        assert_eq!(lg.observation_mean(1.5), 3.0);
        assert_eq!(ModelSpec::Benchmark.transition_mean(1.5, 3), pgkit::benchmark_f(1.5, 3));
        assert_eq!(ModelSpec::Benchmark.observation_mean(3.0), pgkit::benchmark_g(3.0));
    }

    #[test]
    fn seed_env_override() {
        assert_eq!(seed_override(None).unwrap(), None);
        assert_eq!(seed_override(Some("42")).unwrap(), Some(42));
        assert!(seed_override(Some("x")).is_err());
    }
}

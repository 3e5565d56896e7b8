//! Seeded replicate experiments, parameter sweeps and result files.
//!
//! Replicate `i` of a run draws from `RngStream::new(base_seed, i)`, so a
//! config fully determines its output. Replicates run in parallel; their
//! statistics are merged from integer counts in replicate order.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Density, Domain, RngStream};
use crate::growth::{run_growth_with_checkpoints, Attractiveness, GraphState, GrowthOptions, Model, SamplerKind};
use crate::spatial_index::Backend;
use crate::stats::{
    degree_tail, fit_exponential_rate_window, fit_power_law_slope, fit_stretched_exponential_window, max_degree_record,
    Column, DegreeTail, FitWindow, MaxDegreeRecord, RateFit, TailAccumulator, TailEstimate,
};

/// Published degree proportions for ONG on the torus, `k = 1..=10`.
pub const TABLE1_REFERENCE: [(usize, [f64; 10]); 3] = [
    (1, [0.4728, 0.2675, 0.1394, 0.0670, 0.0304, 0.0132, 0.0056, 0.0024, 0.0001, 0.0000]),
    (2, [0.4777, 0.2636, 0.1369, 0.0668, 0.0308, 0.0137, 0.0060, 0.0026, 0.0001, 0.0000]),
    (100, [0.4999, 0.2501, 0.1250, 0.0625, 0.0312, 0.0156, 0.0078, 0.0039, 0.0002, 0.0001]),
];

pub fn table1_reference(dim: usize) -> Option<&'static [f64; 10]> {
    TABLE1_REFERENCE.iter().find(|(d, _)| *d == dim).map(|(_, row)| row)
}

/// Fit settings applied to the final checkpoint of a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    /// Minimum average count of vertices with degree `>= k` for `k` to enter a fit.
    pub min_count: f64,
    /// Smallest `k` of the log-log tail slope fit.
    pub power_k_min: usize,
    /// Exponent `ν` of the `log(max deg) / (log n)^ν` ratio.
    pub nu: f64,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings { min_count: FitWindow::DEFAULT_MIN_COUNT, power_k_min: 5, nu: 0.7 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: Model,
    pub domain: Domain,
    pub density: Density,
    pub n: usize,
    pub replicates: u64,
    pub base_seed: u64,
    /// Intermediate arrival counts at which statistics are also recorded.
    #[serde(default)]
    pub checkpoints: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub growth: GrowthOptions,
    #[serde(default)]
    pub fit: FitSettings,
}

impl ExperimentConfig {
    /// ONG on the uniform torus with no checkpoints or output.
    pub fn ong_torus(dim: usize, n: usize, replicates: u64, base_seed: u64) -> Self {
        ExperimentConfig {
            model: Model::Ong,
            domain: Domain::torus(dim),
            density: Density::Uniform,
            n,
            replicates,
            base_seed,
            checkpoints: Vec::new(),
            output: None,
            growth: GrowthOptions::default(),
            fit: FitSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        Domain::new(self.domain.kind, self.domain.dim)?;
        self.density.validate(self.domain.dim)?;
        if self.n < 2 {
            return Err(Error::Config(format!("n must be at least 2, got {}", self.n)));
        }
        if self.replicates < 1 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if self.checkpoints.iter().any(|&c| c < 1 || c > self.n) {
            return Err(Error::Config(format!("checkpoints must lie in 1..={}", self.n)));
        }
        if self.checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("checkpoints must be strictly increasing".into()));
        }
        // written positively so NaN fails
        let fit_ok = self.fit.min_count > 0.0 && self.fit.nu > 0.0 && self.fit.nu < 1.0 && self.fit.power_k_min >= 1;
        if !fit_ok {
            return Err(Error::Config("fit settings need min_count > 0, 0 < nu < 1, power_k_min >= 1".into()));
        }
        let sampler = self.growth.sampler.unwrap_or_else(|| SamplerKind::auto(self.domain.dim));
        if !self.model.is_ong() && sampler == SamplerKind::Tree && self.domain.dim > 3 {
            return Err(Error::Config("the tree sampler supports d <= 3".into()));
        }
        Ok(())
    }

    /// The same config with automatic backend and sampler choices made explicit.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.growth.backend.get_or_insert(Backend::auto(c.domain.dim));
        if !c.model.is_ong() {
            c.growth.sampler.get_or_insert(SamplerKind::auto(c.domain.dim));
        }
        c
    }

    /// Checkpoints followed by `n` itself.
    pub fn recorded_sizes(&self) -> Vec<usize> {
        let mut sizes = self.checkpoints.clone();
        if sizes.last() != Some(&self.n) {
            sizes.push(self.n);
        }
        sizes
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let c: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// Reduced or full replicate protocol for the reference table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// 500 replicates at `n = 10^5`.
    Full,
    /// 100 replicates at `n = 2·10^4`, or `n = 10^4` for `d > 3`.
    Desk,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Profile::Full),
            "desk" => Ok(Profile::Desk),
            other => Err(Error::Config(format!("unknown profile `{other}` (full, desk)"))),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Full => "full",
            Profile::Desk => "desk",
        })
    }
}

pub const TABLE1_SEED: u64 = 20_100_101;

pub fn table1_config(dim: usize, profile: Profile) -> ExperimentConfig {
    let (n, replicates) = match profile {
        Profile::Full => (100_000, 500),
        Profile::Desk if dim > 3 => (10_000, 100),
        Profile::Desk => (20_000, 100),
    };
    let mut c = ExperimentConfig::ong_torus(dim, n, replicates, TABLE1_SEED);
    c.growth.backend = Some(Backend::auto(dim));
    c.resolved()
}

/// What one replicate contributes at one recorded size.
#[derive(Clone, Debug)]
struct Snapshot {
    tail: DegreeTail,
    mismatches: u64,
    max_degree: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub seed: u64,
    pub stream: u64,
    pub class: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MismatchSummary {
    pub mean: f64,
    pub stderr: f64,
    pub trivially_zero: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaxDegreeSummary {
    /// Largest maximum degree over replicates, with its ratios.
    pub max: MaxDegreeRecord,
    pub mean: f64,
    pub per_replicate: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointResult {
    pub n: usize,
    pub tail: TailEstimate,
    pub mismatch: MismatchSummary,
    pub max_degree: MaxDegreeSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitName {
    /// Exponential decay rate `μ̂` of the tail.
    Mu,
    /// Stretched-exponential exponent `γ̂`.
    Gamma,
    /// Log-log slope of the tail.
    PowerSlope,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOutcome {
    pub name: FitName,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<RateFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl FitOutcome {
    fn from_result(name: FitName, r: Result<RateFit>) -> Self {
        match r {
            Ok(fit) => FitOutcome { name, fit: Some(fit), error: None },
            Err(e) => FitOutcome { name, fit: None, error: Some(e.to_string()) },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateSeed {
    pub seed: u64,
    pub stream: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    /// The resolved config; rerunning it reproduces this document exactly.
    pub config: ExperimentConfig,
    pub checkpoints: Vec<CheckpointResult>,
    pub fits: Vec<FitOutcome>,
    pub seeds: Vec<ReplicateSeed>,
    pub failures: Vec<ReplicateFailure>,
}

impl RunResult {
    pub fn final_checkpoint(&self) -> &CheckpointResult {
        self.checkpoints.last().expect("a run records at least its final size")
    }

    pub fn at(&self, n: usize) -> Option<&CheckpointResult> {
        self.checkpoints.iter().find(|c| c.n == n)
    }

    pub fn fit(&self, name: FitName) -> Option<&RateFit> {
        self.fits.iter().find(|f| f.name == name).and_then(|f| f.fit.as_ref())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Writes the JSON document to `path`, plus `<stem>.n<N>.tail.csv`,
    /// `<stem>.n<N>.pmf.csv` per recorded size and `<stem>.fits.csv`.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut json = self.to_json()?;
        json.push('\n');
        std::fs::write(path, json).map_err(|e| Error::io(path, e))?;
        let stem = path.with_extension("");
        let sibling = |suffix: String| PathBuf::from(format!("{}.{suffix}", stem.display()));
        for cp in &self.checkpoints {
            for (column, name) in [(Column::Tail, "tail"), (Column::Pmf, "pmf")] {
                let p = sibling(format!("n{}.{name}.csv", cp.n));
                let mut buf = Vec::new();
                cp.tail.write_csv(&mut buf, column).map_err(|e| Error::io(&p, e))?;
                std::fs::write(&p, buf).map_err(|e| Error::io(&p, e))?;
            }
        }
        let p = sibling("fits.csv".into());
        let mut buf = Vec::new();
        writeln!(buf, "name,kind,rate,intercept,k_min,k_max,r_squared,points").map_err(|e| Error::io(&p, e))?;
        for f in &self.fits {
            if let Some(fit) = &f.fit {
                let mut row = Vec::new();
                fit.write_csv(&mut row).map_err(|e| Error::io(&p, e))?;
                let row = String::from_utf8_lossy(&row);
                let name = serde_json::to_string(&f.name).unwrap_or_default();
                writeln!(buf, "{},{}", name.trim_matches('"'), row.lines().nth(1).unwrap_or("")).map_err(|e| Error::io(&p, e))?;
            }
        }
        std::fs::write(&p, buf).map_err(|e| Error::io(&p, e))
    }
}

fn run_replicate(config: &ExperimentConfig, sizes: &[usize], stream: u64) -> Result<Vec<Snapshot>> {
    let mut rng = RngStream::new(config.base_seed, stream);
    let mut snaps = Vec::with_capacity(sizes.len());
    let mut failure = None;
    let mut record = |state: &GraphState| {
        if failure.is_some() {
            return;
        }
        let tail = degree_tail(state);
        if let Err(e) = state.check_invariants().and_then(|_| tail.check_invariants()) {
            failure = Some(e);
            return;
        }
        let mismatches = state.mismatches().iter().filter(|&&m| m).count() as u64;
        snaps.push(Snapshot { tail, mismatches, max_degree: state.max_degree() });
    };
    let last = run_growth_with_checkpoints(
        config.model,
        config.n,
        &config.density,
        config.domain,
        &mut rng,
        config.growth,
        &sizes[..sizes.len() - 1],
        &mut record,
    )
    .map_err(|e| match e {
        Error::CoincidentPoints => Error::ReplicateAborted { seed: config.base_seed, stream },
        e => e,
    })?;
    record(&last);
    match failure {
        Some(e) => Err(e),
        None => Ok(snaps),
    }
}

fn summarize(config: &ExperimentConfig, n: usize, snaps: &[&Snapshot]) -> Result<CheckpointResult> {
    let mut acc = TailAccumulator::new();
    for s in snaps {
        acc.add(&s.tail)?;
    }
    let tail = acc.estimate()?;

    let r = snaps.len() as f64;
    let sum: u64 = snaps.iter().map(|s| s.mismatches).sum();
    let sq: u128 = snaps.iter().map(|s| (s.mismatches as u128).pow(2)).sum();
    let mean = sum as f64 / r / n as f64;
    let stderr = if snaps.len() < 2 {
        0.0
    } else {
        let var = (sq as f64 - (sum as f64).powi(2) / r).max(0.0) / (r - 1.0);
        (var / r).sqrt() / n as f64
    };
    let mismatch = MismatchSummary { mean, stderr, trivially_zero: config.model.is_ong() };

    let per_replicate: Vec<u32> = snaps.iter().map(|s| s.max_degree).collect();
    let top = per_replicate.iter().copied().max().unwrap_or(0);
    let max_degree = MaxDegreeSummary {
        max: max_degree_record(n, top, config.fit.nu),
        mean: per_replicate.iter().map(|&m| m as u64).sum::<u64>() as f64 / r,
        per_replicate,
    };
    Ok(CheckpointResult { n, tail, mismatch, max_degree })
}

fn final_fits(config: &ExperimentConfig, est: &TailEstimate) -> Vec<FitOutcome> {
    let window = FitWindow::from_min_count(config.fit.min_count);
    let power = FitWindow { k_min: config.fit.power_k_min, ..window };
    vec![
        FitOutcome::from_result(FitName::Mu, fit_exponential_rate_window(est, window)),
        FitOutcome::from_result(FitName::Gamma, fit_stretched_exponential_window(est, window)),
        FitOutcome::from_result(FitName::PowerSlope, fit_power_law_slope(est, power)),
    ]
}

/// Runs all replicates of `config`, writing the result file when `output` is set.
///
/// A replicate that hits coincident points is recorded under `failures` and
/// left out of the statistics; the run fails only if no replicate survives.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunResult> {
    config.validate()?;
    let config = config.resolved();
    let sizes = config.recorded_sizes();
    let started = Instant::now();

    let outcomes: Vec<Result<Vec<Snapshot>>> =
        (0..config.replicates).into_par_iter().map(|i| run_replicate(&config, &sizes, i)).collect();

    let mut failures = Vec::new();
    let mut good = Vec::new();
    for (i, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(s) => good.push(s),
            Err(e @ Error::ReplicateAborted { .. }) => {
                log::warn!("replicate {i} aborted: {e}");
                failures.push(ReplicateFailure {
                    seed: config.base_seed,
                    stream: i as u64,
                    class: e.class().into(),
                    message: e.to_string(),
                });
            }
            Err(e) => return Err(e),
        }
    }
    if good.is_empty() {
        return Err(Error::ReplicateAborted { seed: config.base_seed, stream: 0 });
    }

    let checkpoints = sizes
        .iter()
        .enumerate()
        .map(|(j, &n)| summarize(&config, n, &good.iter().map(|s| &s[j]).collect::<Vec<_>>()))
        .collect::<Result<Vec<_>>>()?;
    let fits = final_fits(&config, &checkpoints.last().unwrap().tail);
    let seeds = (0..config.replicates).map(|stream| ReplicateSeed { seed: config.base_seed, stream }).collect();
    let result = RunResult { config, checkpoints, fits, seeds, failures };

    log::info!(
        "{} d={} n={} x{}: {:.2?}",
        result.config.model,
        result.config.domain.dim,
        result.config.n,
        result.config.replicates,
        started.elapsed()
    );
    if let Some(path) = &result.config.output {
        result.save(path)?;
    }
    Ok(result)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// Power-law exponent; sets the model to GPA with `F(r) = r^{-s}`.
    S,
    /// Sets the model to GPA with the `F_γ` weight.
    Gamma,
    /// Dimension; requires the uniform density.
    D,
    /// Number of arrivals; checkpoints at or above it are dropped.
    N,
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "s" => Ok(SweepParam::S),
            "gamma" => Ok(SweepParam::Gamma),
            "d" => Ok(SweepParam::D),
            "n" => Ok(SweepParam::N),
            other => Err(Error::Config(format!("unknown sweep parameter `{other}` (s, gamma, d, n)"))),
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParam::S => "s",
            SweepParam::Gamma => "gamma",
            SweepParam::D => "d",
            SweepParam::N => "n",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub base: ExperimentConfig,
    pub param: SweepParam,
    pub values: Vec<f64>,
}

fn as_count(param: SweepParam, v: f64) -> Result<usize> {
    if v.fract() != 0.0 || v < 1.0 || v > u32::MAX as f64 {
        return Err(Error::Config(format!("{param} must be a positive integer, got {v}")));
    }
    Ok(v as usize)
}

impl SweepSpec {
    /// The config for one swept value; its output file gets a `_<param><value>` suffix.
    pub fn config_for(&self, value: f64) -> Result<ExperimentConfig> {
        let mut c = self.base.clone();
        match self.param {
            SweepParam::S => c.model = Model::Gpa { f: Attractiveness::PowerLaw { s: value } },
            SweepParam::Gamma => c.model = Model::Gpa { f: Attractiveness::Gamma { gamma: value } },
            SweepParam::D => {
                if c.density != Density::Uniform {
                    return Err(Error::Config("sweeping d needs the uniform density".into()));
                }
                c.domain = Domain::new(c.domain.kind, as_count(self.param, value)?)?;
            }
            SweepParam::N => {
                c.n = as_count(self.param, value)?;
                c.checkpoints.retain(|&k| k < c.n);
            }
        }
        if let Some(out) = &self.base.output {
            let stem = out.with_extension("");
            c.output = Some(PathBuf::from(format!("{}_{}{}.json", stem.display(), self.param, value)));
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.values.iter().try_for_each(|&v| self.config_for(v).map(|_| ()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub class: String,
    pub message: String,
}

impl From<&Error> for ErrorReport {
    fn from(e: &Error) -> Self {
        ErrorReport { class: e.class().into(), message: e.to_string() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<RunResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorReport>,
}

/// One run per value, in order; a failing value is reported without stopping the rest.
pub fn run_sweep(sweep: &SweepSpec) -> Vec<SweepEntry> {
    sweep
        .values
        .iter()
        .map(|&value| match sweep.config_for(value).and_then(|c| run_experiment(&c)) {
            Ok(r) => SweepEntry { value, result: Some(r), error: None },
            Err(e) => {
                log::warn!("sweep {}={value} failed: {e}", sweep.param);
                SweepEntry { value, result: None, error: Some(ErrorReport::from(&e)) }
            }
        })
        .collect()
}

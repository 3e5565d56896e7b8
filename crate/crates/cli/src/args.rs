use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ongpa::experiments::{ExperimentConfig, Profile, SweepParam};
use ongpa::geometry::{Density, Domain, DomainKind};
use ongpa::growth::{Attractiveness, GrowthOptions, Model, SamplerKind};
use ongpa::spatial_index::Backend;
use ongpa::{Error, Result};

/// Simulate on-line nearest-neighbour (ONG) and geometric preferential
/// attachment (GPA) graphs and estimate their degree sequences.
#[derive(Debug, Parser)]
#[command(name = "ongpa", version)]
pub struct Cli {
    /// Worker threads for the replicate pool (default: all cores). [config: none, runtime only]
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Directory that relative output paths are resolved against. [config: prefix of output]
    #[arg(long, global = true, env = "ONGPA_OUTPUT_DIR", default_value = ".")]
    pub output_dir: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Grow one graph and write it as CSV (one row per vertex).
    Grow(GrowArgs),
    /// Run replicates and print the estimated degree tail and pmf.
    Rho(RunArgs),
    /// Reproduce the reference ONG degree table on the torus.
    Table1(Table1Args),
    /// Run one experiment per value of a swept parameter.
    Sweep(SweepArgs),
    /// Fit a tail model to a saved result file.
    Fit(FitArgs),
    /// Check structural invariants and backend agreement on small runs.
    Selftest,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Ong,
    Gpa,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DomainArg {
    Torus,
    Cube,
}

impl From<DomainArg> for DomainKind {
    fn from(d: DomainArg) -> Self {
        match d {
            DomainArg::Torus => DomainKind::Torus,
            DomainArg::Cube => DomainKind::UnitCube,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Grid,
    LinearScan,
}

impl From<BackendArg> for Backend {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Grid => Backend::Grid,
            BackendArg::LinearScan => Backend::LinearScan,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SamplerArg {
    Scan,
    Tree,
}

impl From<SamplerArg> for SamplerKind {
    fn from(s: SamplerArg) -> Self {
        match s {
            SamplerArg::Scan => SamplerKind::Scan,
            SamplerArg::Tree => SamplerKind::Tree,
        }
    }
}

/// `uniform`, or `grid:<r1>x<r2>...:<w1>,<w2>,...` with weights in row-major
/// order (last axis fastest).
pub fn parse_density(s: &str) -> std::result::Result<Density, String> {
    if s == "uniform" {
        return Ok(Density::Uniform);
    }
    let rest = s.strip_prefix("grid:").ok_or("expected `uniform` or `grid:<res>:<weights>`")?;
    let (res, weights) = rest.split_once(':').ok_or("grid density needs `grid:<res>:<weights>`")?;
    let resolution = res
        .split('x')
        .map(|r| r.trim().parse::<usize>().map_err(|e| format!("bad resolution `{r}`: {e}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let weights = weights
        .split(',')
        .map(|w| w.trim().parse::<f64>().map_err(|e| format!("bad weight `{w}`: {e}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(Density::Grid { resolution, weights })
}

fn parse_attractiveness(s: &str) -> std::result::Result<Attractiveness, String> {
    s.parse::<Attractiveness>().map_err(|e| e.to_string())
}

/// Model and geometry flags shared by `grow` and the replicate commands.
#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Attachment rule. [config: model.kind]
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,

    /// Distance weight for GPA: `constant`, `power:<s>` or `gamma:<γ>`. [config: model.f]
    #[arg(long, value_parser = parse_attractiveness)]
    pub f: Option<Attractiveness>,

    /// Dimension. [config: domain.dim]
    #[arg(long)]
    pub d: Option<usize>,

    /// Unit torus or unit cube. [config: domain.kind]
    #[arg(long, value_enum)]
    pub domain: Option<DomainArg>,

    /// Arrival density: `uniform` or `grid:<res>:<weights>`, e.g. `grid:2x2:1,2,3,4`. [config: density]
    #[arg(long, value_parser = parse_density)]
    pub density: Option<Density>,

    /// Nearest-neighbour backend (default: grid for d <= 3). [config: growth.backend]
    #[arg(long, value_enum)]
    pub backend: Option<BackendArg>,

    /// GPA sampler (default: tree for d <= 3). [config: growth.sampler]
    #[arg(long, value_enum)]
    pub sampler: Option<SamplerArg>,
}

impl ModelArgs {
    pub fn model(&self, base: Option<Model>) -> Result<Model> {
        match (self.model, self.f) {
            (Some(ModelKind::Ong), Some(_)) => Err(Error::Config("--f applies to --model gpa only".into())),
            (Some(ModelKind::Ong), None) => Ok(Model::Ong),
            (Some(ModelKind::Gpa), Some(f)) => Ok(Model::Gpa { f }),
            (Some(ModelKind::Gpa), None) => match base {
                Some(m @ Model::Gpa { .. }) => Ok(m),
                _ => Err(Error::Config("--model gpa needs --f".into())),
            },
            (None, Some(f)) => match base {
                Some(Model::Gpa { .. }) => Ok(Model::Gpa { f }),
                _ => Err(Error::Config("--f needs --model gpa".into())),
            },
            (None, None) => base.ok_or_else(|| Error::Config("--model is required".into())),
        }
    }

    pub fn domain(&self, base: Option<Domain>) -> Result<Domain> {
        let kind = self.domain.map(DomainKind::from).or(base.map(|b| b.kind)).unwrap_or(DomainKind::Torus);
        let dim = self.d.or(base.map(|b| b.dim)).ok_or_else(|| Error::Config("--d is required".into()))?;
        Domain::new(kind, dim)
    }

    pub fn growth(&self, base: GrowthOptions) -> GrowthOptions {
        GrowthOptions {
            backend: self.backend.map(Backend::from).or(base.backend),
            sampler: self.sampler.map(SamplerKind::from).or(base.sampler),
        }
    }
}

#[derive(Debug, Args)]
pub struct GrowArgs {
    #[command(flatten)]
    pub model: ModelArgs,

    /// Number of arrivals after the initial vertex; the graph has n + 1 vertices. [config: n]
    #[arg(long)]
    pub n: usize,

    /// Seed of the random stream. [config: base_seed]
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Stream index under the seed. [config: replicate index; replicate i uses stream i]
    #[arg(long, default_value_t = 0)]
    pub stream: u64,

    /// Output CSV, relative to the output directory. [config: output]
    #[arg(long, default_value = "graph.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Experiment config (TOML); flags given alongside override its fields. [config: the whole file]
    #[arg(long)]
    pub config: Option<PathBuf>,

    #[command(flatten)]
    pub model: ModelArgs,

    /// Number of arrivals. [config: n]
    #[arg(long)]
    pub n: Option<usize>,

    /// Independent replicates. [config: replicates]
    #[arg(long)]
    pub replicates: Option<u64>,

    /// Base seed; replicate i uses stream i. [config: base_seed]
    #[arg(long)]
    pub seed: Option<u64>,

    /// Intermediate sizes to record, comma separated. [config: checkpoints]
    #[arg(long, value_delimiter = ',')]
    pub checkpoints: Option<Vec<usize>>,

    /// Minimum average count for k to enter a fit. [config: fit.min_count]
    #[arg(long)]
    pub min_count: Option<f64>,

    /// Result JSON, relative to the output directory. [config: output]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl RunArgs {
    /// Config file (if any) with flag overrides applied, validated.
    pub fn config(&self, output_dir: &std::path::Path) -> Result<ExperimentConfig> {
        let base = match &self.config {
            Some(path) => Some(ExperimentConfig::load(path)?),
            None => None,
        };
        let model = self.model.model(base.as_ref().map(|b| b.model))?;
        let domain = self.model.domain(base.as_ref().map(|b| b.domain))?;
        let n = self.n.or(base.as_ref().map(|b| b.n)).ok_or_else(|| Error::Config("--n is required".into()))?;
        let replicates = self.replicates.or(base.as_ref().map(|b| b.replicates)).unwrap_or(1);
        let base_seed = self.seed.or(base.as_ref().map(|b| b.base_seed)).unwrap_or(0);
        let density = self.model.density.clone().or(base.as_ref().map(|b| b.density.clone())).unwrap_or(Density::Uniform);
        let checkpoints = self.checkpoints.clone().or(base.as_ref().map(|b| b.checkpoints.clone())).unwrap_or_default();
        let mut fit = base.as_ref().map(|b| b.fit).unwrap_or_default();
        if let Some(m) = self.min_count {
            fit.min_count = m;
        }
        let growth = self.model.growth(base.as_ref().map(|b| b.growth).unwrap_or_default());
        let output = self.out.clone().or(base.as_ref().and_then(|b| b.output.clone())).map(|p| output_dir.join(p));
        let config = ExperimentConfig {
            model,
            domain,
            density,
            n,
            replicates,
            base_seed,
            checkpoints,
            output,
            growth,
            fit,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Args)]
pub struct Table1Args {
    /// Dimensions, comma separated. [config: domain.dim]
    #[arg(long, value_delimiter = ',', required = true)]
    pub d: Vec<usize>,

    /// `desk` (100 replicates, n = 2e4, or 1e4 for d > 3) or `full` (500 replicates, n = 1e5). [config: n, replicates]
    #[arg(long, default_value = "desk", value_parser = |s: &str| s.parse::<Profile>().map_err(|e| e.to_string()))]
    pub profile: Profile,

    /// Override the replicate count of the profile. [config: replicates]
    #[arg(long)]
    pub replicates: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,

    /// Swept parameter: s, gamma, d or n. [config: model.f.s, model.f.gamma, domain.dim or n]
    #[arg(long, value_parser = |s: &str| s.parse::<SweepParam>().map_err(|e| e.to_string()))]
    pub param: SweepParam,

    /// Values, comma separated; each run writes `<output stem>_<param><value>.json`. [config: one value per run]
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FitKindArg {
    /// Exponential rate of the tail, slope of -log ρ_k on k.
    Mu,
    /// Stretched-exponential exponent, slope of log(-log q_k) on log k.
    Gamma,
    /// Log-log slope of the tail.
    Power,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Which tail model to fit. [config: none]
    #[arg(long, value_enum)]
    pub kind: FitKindArg,

    /// Result JSON written by `rho`, `table1` or `sweep`. [config: output of that run]
    #[arg(long)]
    pub input: PathBuf,

    /// Recorded size to fit (default: the final n). [config: n or one of checkpoints]
    #[arg(long)]
    pub at: Option<usize>,

    /// Minimum average count for k to enter the fit. [config: fit.min_count]
    #[arg(long)]
    pub min_count: Option<f64>,

    /// Smallest k of the window (default 1, or fit.power_k_min for `power`). [config: fit.power_k_min]
    #[arg(long)]
    pub k_min: Option<usize>,

    /// Largest k of the window (default: where the count rule stops). [config: none]
    #[arg(long)]
    pub k_max: Option<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    fn parse(args: &[&str]) -> std::result::Result<Cli, clap::Error> {
        Cli::try_parse_from(std::iter::once("ongpa").chain(args.iter().copied()))
    }

    fn run_args(args: &[&str]) -> RunArgs {
        match parse(&[&["rho"], args].concat()).unwrap().command {
            Command::Rho(a) => a,
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn clap_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn density_strings() {
        assert_eq!(parse_density("uniform").unwrap(), Density::Uniform);
        assert_eq!(
            parse_density("grid:2x3:1,2,3,4,5,6").unwrap(),
            Density::Grid { resolution: vec![2, 3], weights: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0] }
        );
        for bad in ["", "grid", "grid:2x2", "grid:2xa:1", "grid:2:1,b", "normal"] {
            assert!(parse_density(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn model_needs_f_only_for_gpa() {
        let a = run_args(&["--model", "gpa", "--f", "power:1.5", "--d", "2", "--n", "10"]);
        assert_eq!(a.model.model(None).unwrap(), Model::Gpa { f: Attractiveness::PowerLaw { s: 1.5 } });
        let a = run_args(&["--model", "ong", "--f", "constant", "--d", "2", "--n", "10"]);
        assert!(a.model.model(None).is_err());
        let a = run_args(&["--model", "gpa", "--d", "2", "--n", "10"]);
        assert!(a.model.model(None).is_err());
        let base = Model::Gpa { f: Attractiveness::Gamma { gamma: 2.0 } };
        let a = run_args(&["--f", "gamma:3", "--n", "10"]);
        assert_eq!(a.model.model(Some(base)).unwrap(), Model::Gpa { f: Attractiveness::Gamma { gamma: 3.0 } });
        assert!(a.model.model(Some(Model::Ong)).is_err());
    }

    #[test]
    fn flags_build_a_validated_config() {
        let dir = std::path::Path::new("/tmp/out");
        let a = run_args(&[
            "--model", "ong", "--d", "3", "--domain", "cube", "--n", "500", "--replicates", "4", "--seed", "9",
            "--checkpoints", "10,100", "--backend", "linear-scan", "--out", "r.json",
        ]);
        let c = a.config(dir).unwrap();
        assert_eq!(c.domain, Domain::cube(3));
        assert_eq!((c.n, c.replicates, c.base_seed), (500, 4, 9));
        assert_eq!(c.checkpoints, vec![10, 100]);
        assert_eq!(c.growth.backend, Some(Backend::LinearScan));
        assert_eq!(c.output, Some(dir.join("r.json")));
        assert_eq!(c.density, Density::Uniform);

        let missing_n = run_args(&["--model", "ong", "--d", "3"]);
        assert!(matches!(missing_n.config(dir), Err(Error::Config(_))));
        let late_checkpoint = run_args(&["--model", "ong", "--d", "1", "--n", "50", "--checkpoints", "60"]);
        assert!(matches!(late_checkpoint.config(dir), Err(Error::Config(_))));
    }

    #[test]
    fn sweep_and_table1_lists() {
        let cli = parse(&["sweep", "--model", "ong", "--d", "2", "--n", "10", "--param", "d", "--values", "1,2,5"]).unwrap();
        let Command::Sweep(a) = cli.command else { panic!() };
        assert_eq!(a.param, SweepParam::D);
        assert_eq!(a.values, vec![1.0, 2.0, 5.0]);
        let cli = parse(&["table1", "--d", "1,100", "--profile", "full"]).unwrap();
        let Command::Table1(a) = cli.command else { panic!() };
        assert_eq!(a.d, vec![1, 100]);
        assert_eq!(a.profile, Profile::Full);
        assert!(parse(&["table1", "--d", "1", "--profile", "huge"]).is_err());
    }
}

mod args;

use std::path::Path;
use std::process::ExitCode;

use clap::Parser;
use ongpa::experiments::{run_experiment, run_sweep, table1_config, table1_reference, RunResult, SweepSpec};
use ongpa::geometry::{Density, Domain, DomainKind, RngStream};
use ongpa::growth::{
    attachment_log_weights, run_growth, run_growth_with_checkpoints, sample_attachment, Attractiveness, DegreeTree,
    GraphState, GrowthOptions, Model,
};
use ongpa::spatial_index::Backend;
use ongpa::stats::{
    degree_tail, fit_exponential_rate_window, fit_power_law_slope, fit_stretched_exponential_window, FitWindow,
};
use ongpa::{Error, Result};

use args::{Cli, Command, FitArgs, FitKindArg, GrowArgs, RunArgs, SweepArgs, Table1Args};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let out = cli.output_dir.as_path();
    let result = match &cli.command {
        Command::Grow(a) => cmd_grow(a, out),
        Command::Rho(a) => cmd_rho(a, out),
        Command::Table1(a) => cmd_table1(a, out),
        Command::Sweep(a) => cmd_sweep(a, out),
        Command::Fit(a) => cmd_fit(a),
        Command::Selftest => cmd_selftest(),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("ongpa: {e}");
            eprintln!("{}", serde_json::json!({ "error": e.class(), "message": e.to_string() }));
            if matches!(e, Error::Config(_)) {
                eprintln!("\nFor more information, try '--help'.");
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn cmd_grow(a: &GrowArgs, out_dir: &Path) -> Result<ExitCode> {
    let model = a.model.model(None)?;
    let domain = a.model.domain(None)?;
    let density = a.model.density.clone().unwrap_or(Density::Uniform);
    if a.n < 1 {
        return Err(Error::Config("--n must be at least 1".into()));
    }
    density.validate(domain.dim)?;
    let opts = a.model.growth(GrowthOptions::default());
    let mut rng = RngStream::new(a.seed, a.stream);
    let state = run_growth(model, a.n, &density, domain, &mut rng, opts)?;
    let path = out_dir.join(&a.out);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.display().to_string(), source: e })?;
    }
    state.save_csv(&path)?;
    println!("{} vertices, max degree {}, written to {}", state.vertex_count(), state.max_degree(), path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_rho(a: &RunArgs, out_dir: &Path) -> Result<ExitCode> {
    let config = a.config(out_dir)?;
    let r = run_experiment(&config)?;
    let cp = r.final_checkpoint();
    println!("k,rho,rho_stderr,pmf,pmf_stderr");
    for k in 1..=cp.tail.tail_mean.len() {
        println!("{k},{},{},{},{}", cp.tail.tail(k), cp.tail.tail_stderr[k - 1], cp.tail.pmf(k), cp.tail.pmf_stderr(k));
    }
    print_fits(&r);
    if !r.failures.is_empty() {
        eprintln!("{} replicate(s) aborted on coincident points", r.failures.len());
    }
    Ok(ExitCode::SUCCESS)
}

fn print_fits(r: &RunResult) {
    for f in &r.fits {
        match (&f.fit, &f.error) {
            (Some(fit), _) => eprintln!(
                "{:?}: {:.4} on k = {}..{} ({} points, R² {:.4})",
                f.name, fit.rate, fit.k_min, fit.k_max, fit.points, fit.r_squared
            ),
            (None, Some(e)) => eprintln!("{:?}: {e}", f.name),
            (None, None) => {}
        }
    }
}

fn cmd_table1(a: &Table1Args, out_dir: &Path) -> Result<ExitCode> {
    let mut configs = Vec::new();
    for &d in &a.d {
        let mut c = table1_config(d, a.profile);
        if let Some(r) = a.replicates {
            c.replicates = r;
        }
        c.output = Some(out_dir.join(format!("table1_d{d}_{}.json", a.profile)));
        c.validate()?;
        configs.push(c);
    }
    let cols = 10;
    let header: Vec<String> = (1..=cols).map(|k| format!("{k:>8}")).collect();
    println!("{:<10}{}", "d", header.join(""));
    for c in &configs {
        let r = run_experiment(c)?;
        let t = &r.final_checkpoint().tail;
        let row = |f: &dyn Fn(usize) -> String| (1..=cols).map(f).collect::<Vec<_>>().join("");
        println!("{:<10}{}", c.domain.dim, row(&|k| format!("{:>8.4}", t.pmf(k))));
        println!("{:<10}{}", "  stderr", row(&|k| format!("{:>8.4}", t.pmf_stderr(k))));
        if let Some(reference) = table1_reference(c.domain.dim) {
            println!("{:<10}{}", "  ref", row(&|k| format!("{:>8.4}", reference[k - 1])));
        }
        eprintln!("d={}: {} replicates, n = {}", c.domain.dim, r.config.replicates, r.config.n);
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(a: &SweepArgs, out_dir: &Path) -> Result<ExitCode> {
    let mut base = a.run.config(out_dir)?;
    base.output.get_or_insert_with(|| out_dir.join("sweep.json"));
    let sweep = SweepSpec { base, param: a.param, values: a.values.clone() };
    sweep.validate()?;
    let entries = run_sweep(&sweep);
    println!("{},n,mismatch,mismatch_stderr,mu,gamma,output", a.param);
    let mut failed = false;
    for e in &entries {
        match (&e.result, &e.error) {
            (Some(r), _) => {
                let cp = r.final_checkpoint();
                let rate = |name| r.fit(name).map(|f| f.rate.to_string()).unwrap_or_default();
                println!(
                    "{},{},{},{},{},{},{}",
                    e.value,
                    cp.n,
                    cp.mismatch.mean,
                    cp.mismatch.stderr,
                    rate(ongpa::experiments::FitName::Mu),
                    rate(ongpa::experiments::FitName::Gamma),
                    r.config.output.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
                );
            }
            (None, Some(err)) => {
                failed = true;
                eprintln!("{}={}: {} ({})", a.param, e.value, err.message, err.class);
            }
            (None, None) => {}
        }
    }
    Ok(if failed { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}

fn cmd_fit(a: &FitArgs) -> Result<ExitCode> {
    let r = RunResult::load(&a.input)?;
    let cp = match a.at {
        Some(n) => r.at(n).ok_or_else(|| Error::Config(format!("no recorded size n = {n} in {}", a.input.display())))?,
        None => r.final_checkpoint(),
    };
    let default_k_min = if a.kind == FitKindArg::Power { r.config.fit.power_k_min } else { 1 };
    let window = FitWindow {
        k_min: a.k_min.unwrap_or(default_k_min),
        k_max: a.k_max,
        min_count: a.min_count.unwrap_or(r.config.fit.min_count),
    };
    let (label, fit) = match a.kind {
        FitKindArg::Mu => ("mu", fit_exponential_rate_window(&cp.tail, window)?),
        FitKindArg::Gamma => ("gamma", fit_stretched_exponential_window(&cp.tail, window)?),
        FitKindArg::Power => ("power slope", fit_power_law_slope(&cp.tail, window)?),
    };
    println!(
        "{label}-hat = {:.6} on k = {}..{} ({} points, R² {:.6}; min count {}, n = {}, {} replicates)",
        fit.rate, fit.k_min, fit.k_max, fit.points, fit.r_squared, window.min_count, cp.n, cp.tail.replicates
    );
    fit.write_csv(std::io::stdout().lock()).map_err(|e| Error::Io { path: "<stdout>".into(), source: e })?;
    Ok(ExitCode::SUCCESS)
}

fn check(name: &str, failures: &mut usize, r: Result<()>) {
    match r {
        Ok(()) => println!("ok    {name}"),
        Err(e) => {
            *failures += 1;
            println!("FAIL  {name}: {e}");
        }
    }
}

fn invariants_on_small_runs() -> Result<()> {
    let models = [
        Model::Ong,
        Model::Gpa { f: Attractiveness::PowerLaw { s: 2.0 } },
        Model::Gpa { f: Attractiveness::Gamma { gamma: 2.0 } },
        Model::Gpa { f: Attractiveness::Constant },
    ];
    for (i, model) in models.iter().enumerate() {
        for dim in 1..=3 {
            for kind in [DomainKind::Torus, DomainKind::UnitCube] {
                let mut rng = RngStream::new(i as u64, dim as u64);
                let domain = Domain::new(kind, dim)?;
                let mut err = None;
                let checkpoints = [10, 100, 1_000];
                let last = run_growth_with_checkpoints(
                    *model,
                    2_000,
                    &Density::Uniform,
                    domain,
                    &mut rng,
                    GrowthOptions::default(),
                    &checkpoints,
                    |s| {
                        if let Err(e) = s.check_invariants().and_then(|_| degree_tail(s).check_invariants()) {
                            err.get_or_insert(e);
                        }
                    },
                )?;
                if let Some(e) = err {
                    return Err(e);
                }
                last.check_invariants()?;
                degree_tail(&last).check_invariants()?;
            }
        }
    }
    Ok(())
}

fn backends_agree() -> Result<()> {
    for dim in 1..=3 {
        for seed in 0..3 {
            let grow = |backend| {
                let mut rng = RngStream::new(seed, 0);
                let opts = GrowthOptions { backend: Some(backend), sampler: None };
                run_growth(Model::Ong, 3_000, &Density::Uniform, Domain::torus(dim), &mut rng, opts)
            };
            let (a, b) = (grow(Backend::Grid)?, grow(Backend::LinearScan)?);
            if !a.parents().eq(b.parents()) {
                return Err(Error::Mismatch(format!("grid and scan parents differ (d={dim}, seed {seed})")));
            }
        }
    }
    Ok(())
}

fn samplers_match_weights() -> Result<()> {
    let domain = Domain::cube(2);
    let state = GraphState::frozen(domain, vec![0.1, 0.1, 0.5, 0.6, 0.9, 0.2, 0.45, 0.5], vec![3, 1, 2, 1]);
    let x = [0.4, 0.4];
    let f = Attractiveness::PowerLaw { s: 3.0 };
    let w = attachment_log_weights(&state, &f, &x, &domain)?;
    let max = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = w.iter().map(|v| (v - max).exp()).sum();
    let p: Vec<f64> = w.iter().map(|v| (v - max).exp() / z).collect();
    let draws = 40_000;
    let nearest = 3;
    let mut tree = DegreeTree::from_state(domain, &state);
    let mut scan_counts = [0u64; 4];
    let mut tree_counts = [0u64; 4];
    let mut rng = RngStream::new(9, 0);
    for _ in 0..draws {
        scan_counts[sample_attachment(&w, &mut rng)?] += 1;
        tree_counts[tree.sample(&f, &x, nearest, &mut rng)?] += 1;
    }
    for (name, counts) in [("scan", scan_counts), ("tree", tree_counts)] {
        for (v, (&c, &pv)) in counts.iter().zip(&p).enumerate() {
            let se = (pv * (1.0 - pv) / draws as f64).sqrt();
            let freq = c as f64 / draws as f64;
            if (freq - pv).abs() > 5.0 * se + 1e-12 {
                return Err(Error::Mismatch(format!("{name} sampler: vertex {v} frequency {freq:.4}, weight {pv:.4}")));
            }
        }
    }
    Ok(())
}

fn reruns_identical() -> Result<()> {
    let mut c = ongpa::experiments::ExperimentConfig::ong_torus(2, 1_000, 3, 4);
    c.model = Model::Gpa { f: Attractiveness::Gamma { gamma: 2.0 } };
    c.checkpoints = vec![100];
    let a = run_experiment(&c)?.to_json()?;
    let b = run_experiment(&c)?.to_json()?;
    if a != b {
        return Err(Error::Mismatch("two runs of one config differ".into()));
    }
    Ok(())
}

fn cmd_selftest() -> Result<ExitCode> {
    let mut failures = 0;
    check("structural invariants (ONG and GPA, d = 1..3, torus and cube)", &mut failures, invariants_on_small_runs());
    check("grid and linear-scan backends give identical ONG parents", &mut failures, backends_agree());
    check("scan and tree samplers follow the attachment weights", &mut failures, samplers_match_weights());
    check("reruns are identical", &mut failures, reruns_identical());
    Ok(if failures == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

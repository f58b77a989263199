//! Subcommand implementations. Each returns the process exit code.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use sscl_core::experiments::{
    contraction_suite, energy_identity_suite, kinetic_mass_suite, kinetic_residual_suite,
    lp_bound_suite, model_conditions, vanishing_viscosity_suite, ExperimentError, SuiteReport,
};
use sscl_core::solver::{PathResult, Problem};

use crate::config::{ConfigError, RunConfig, CERTIFICATE_SAMPLES, MAX_SEED};
use crate::io::{read_ledger, write_ledger, FieldSnapshot, Manifest, MANIFEST_FILE};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_ABORT: i32 = 2;
pub const EXIT_SUITE_FAILED: i32 = 3;

pub const SUITES: [&str; 7] = [
    "contraction",
    "lp_bounds",
    "kinetic_mass",
    "vanishing_viscosity",
    "energy_identity",
    "conditions",
    "kinetic_residual",
];

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error("cli: i/o on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("cli: no {MANIFEST_FILE} in {0}")]
    MissingManifest(PathBuf),
    #[error("cli: unknown suite `{0}` (expected one of {list})", list = SUITES.join(", "))]
    UnknownSuite(String),
    #[error("config: [experiment].{key} is required by the {suite} suite")]
    MissingParameter { suite: &'static str, key: &'static str },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Experiment(ExperimentError::Path(_)) => EXIT_ABORT,
            CliError::Experiment(ExperimentError::Solver(e)) if is_abort(e) => EXIT_ABORT,
            _ => EXIT_CONFIG,
        }
    }
}

fn is_abort(e: &sscl_core::solver::SolverError) -> bool {
    matches!(e, sscl_core::solver::SolverError::BlowUp { .. })
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

/// Command-line overrides of config values.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub out: Option<PathBuf>,
}

pub fn load_config(path: &Path, ov: &Overrides) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = ov.seed {
        if s > MAX_SEED {
            return Err(ConfigError::Invalid { key: "--seed", msg: format!("must be at most {MAX_SEED}") }.into());
        }
        cfg.seed = s;
    }
    if let Some(m) = ov.paths {
        cfg.solver.paths = m;
    }
    if let Some(o) = &ov.out {
        cfg.output = o.clone();
    }
    Ok(cfg)
}

fn mkdir(p: &Path) -> Result<(), CliError> {
    fs::create_dir_all(p).map_err(io_err(p))
}

fn path_dir(id: u64) -> String {
    format!("path{id:04}")
}

fn ledger_names(p: &Problem) -> Vec<String> {
    let mut v = vec!["spatial_mean".to_string(), "dissipation".into(), "energy_residual".into()];
    v.extend(p.config.lp.iter().map(|q| format!("lp{q}")));
    v
}

fn write_path(out: &Path, p: &Problem, r: &PathResult) -> Result<(), CliError> {
    let dt = r.dt;
    let ldir = out.join("ledgers").join(path_dir(r.path_id));
    mkdir(&ldir)?;
    let t = |n: usize| n as f64 * dt;
    let write = |name: &str, rows: Vec<(usize, f64, f64)>| {
        let f = ldir.join(format!("{name}.csv"));
        write_ledger(&f, rows).map_err(io_err(&f))
    };
    write("spatial_mean", r.mean.iter().enumerate().map(|(n, v)| (n, t(n), *v)).collect())?;
    write("dissipation", r.dissipation.iter().enumerate().map(|(n, v)| (n, t(n), *v)).collect())?;
    write("energy_residual", r.energy.iter().enumerate().map(|(n, e)| (n, t(n), e.residual())).collect())?;
    for s in &r.lp {
        write(&format!("lp{}", s.p), s.norms.iter().enumerate().map(|(n, v)| (n, t(n), *v)).collect())?;
    }
    if p.config.snapshot_every > 0 {
        let sdir = out.join("snapshots").join(path_dir(r.path_id));
        mkdir(&sdir)?;
        let sizes: Vec<u32> = p.manifold.grid.sizes().iter().map(|&n| n as u32).collect();
        for s in &r.snapshots {
            let step = (s.t / dt).round() as usize;
            let f = sdir.join(format!("step{step:06}.sscl"));
            FieldSnapshot { sizes: sizes.clone(), time: s.t, data: s.u.clone() }.write(&f).map_err(io_err(&f))?;
        }
    }
    if let Some(k) = &r.kinetic {
        let kdir = out.join("kinetic");
        mkdir(&kdir)?;
        let f = kdir.join(format!("{}.csv", path_dir(r.path_id)));
        let file = fs::File::create(&f).map_err(io_err(&f))?;
        k.write_csv(io::BufWriter::new(file)).map_err(io_err(&f))?;
    }
    Ok(())
}

/// Runs the configured ensemble and writes ledgers, snapshots, the measure
/// and the manifest.
pub fn simulate(config: &Path, ov: &Overrides) -> Result<i32, CliError> {
    let cfg = load_config(config, ov)?;
    let problem = cfg.problem(true)?;
    let plan = problem.step_plan().map_err(ConfigError::from)?;
    let out = cfg.output.clone();
    mkdir(&out)?;
    let cfg_file = out.join("config.toml");
    fs::write(&cfg_file, cfg.to_toml()).map_err(io_err(&cfg_file))?;

    let ens = problem.run_ensemble();
    for r in &ens.paths {
        write_path(&out, &problem, r)?;
    }
    let stats = ens.stats();
    let mut summary = format!(
        "completed={}\naborted={}\nmean_drift={:e}\nmean_drift_stderr={:e}\nenergy_residual={:e}\nenergy_residual_stderr={:e}\ndissipation={:e}\ndissipation_stderr={:e}\n",
        stats.completed,
        stats.aborted,
        stats.mean_drift.mean,
        stats.mean_drift.stderr,
        stats.energy_residual.mean,
        stats.energy_residual.stderr,
        stats.dissipation.mean,
        stats.dissipation.stderr
    );
    for (p, m) in &stats.lp_max {
        summary.push_str(&format!("lp{p}_max={:e}\nlp{p}_max_stderr={:e}\n", m.mean, m.stderr));
    }
    for e in &ens.aborted {
        summary.push_str(&format!("abort={e}\n"));
    }
    let sfile = out.join("summary.txt");
    fs::write(&sfile, &summary).map_err(io_err(&sfile))?;

    let manifest = Manifest {
        format_version: crate::io::SNAPSHOT_VERSION,
        sscl_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: cfg.hash(),
        config_file: "config.toml".into(),
        seed: cfg.seed,
        paths: cfg.solver.paths,
        completed: ens.paths.iter().map(|r| r.path_id).collect(),
        aborted: ens.aborted.iter().map(|e| e.path_id).collect(),
        steps: plan.steps,
        dt: plan.dt,
        ledgers: ledger_names(&problem),
        snapshots: problem.config.snapshot_every > 0,
        kinetic: problem.config.kinetic.is_some(),
    };
    manifest.write(&out).map_err(io_err(&out))?;
    print!("{summary}");
    if ens.is_partial() {
        for e in &ens.aborted {
            eprintln!("error: {e}");
        }
        return Ok(EXIT_ABORT);
    }
    Ok(EXIT_OK)
}

fn need<T: Clone>(v: &Option<T>, suite: &'static str, key: &'static str) -> Result<T, CliError> {
    v.clone().ok_or(CliError::MissingParameter { suite, key })
}

pub fn run_suite(suite: &str, cfg: &RunConfig) -> Result<SuiteReport, CliError> {
    let ex = cfg.experiment();
    let report = match suite {
        "conditions" => {
            let m = cfg.manifold()?;
            let flux = cfg.flux(&m)?;
            let noise = cfg.noise(&m)?;
            model_conditions(&m, &flux, &noise, cfg.certificate_range(), CERTIFICATE_SAMPLES)
        }
        "contraction" => {
            let p = cfg.problem(true)?;
            let u2 = need(&ex.paired_initial, "contraction", "paired_initial")?;
            contraction_suite(&p, &u2, ex.paired_seed.unwrap_or(cfg.seed))?
        }
        "lp_bounds" => {
            let p = cfg.problem(true)?;
            lp_bound_suite(
                &p,
                &need(&ex.eps_list, "lp_bounds", "eps_list")?,
                &need(&ex.p_list, "lp_bounds", "p_list")?,
                need(&ex.ceiling, "lp_bounds", "ceiling")?,
                need(&ex.negative_amplitude, "lp_bounds", "negative_amplitude")?,
                ex.negative_initial.as_ref(),
            )?
        }
        "kinetic_mass" => {
            let p = cfg.problem(true)?;
            kinetic_mass_suite(
                &p,
                &need(&ex.eps_list, "kinetic_mass", "eps_list")?,
                need(&ex.kinetic_p, "kinetic_mass", "kinetic_p")?,
                need(&ex.xi_width, "kinetic_mass", "xi_width")?,
            )?
        }
        "vanishing_viscosity" => {
            let p = cfg.problem(true)?;
            vanishing_viscosity_suite(
                &p,
                need(&ex.eps0, "vanishing_viscosity", "eps0")?,
                need(&ex.levels, "vanishing_viscosity", "levels")?,
            )?
        }
        "energy_identity" => {
            let p = cfg.problem(true)?;
            energy_identity_suite(&p, need(&ex.energy_c, "energy_identity", "energy_c")?)?
        }
        "kinetic_residual" => {
            let p = cfg.problem(true)?;
            kinetic_residual_suite(&p, &need(&ex.test_function, "kinetic_residual", "test_function")?)?
        }
        other => return Err(CliError::UnknownSuite(other.to_string())),
    };
    Ok(report)
}

/// Runs one suite and writes its report; exit 3 when any check fails.
pub fn verify(suite: &str, config: &Path, ov: &Overrides) -> Result<i32, CliError> {
    if !SUITES.contains(&suite) {
        return Err(CliError::UnknownSuite(suite.to_string()));
    }
    let cfg = load_config(config, ov)?;
    let report = run_suite(suite, &cfg)?;
    let dir = cfg.output.join("reports");
    report.write(&dir).map_err(io_err(&dir))?;
    print!("{}", report.to_text());
    Ok(if report.passed() { EXIT_OK } else { EXIT_SUITE_FAILED })
}

/// Collects the per-path outputs of a run into tidy CSVs under `plot/`.
pub fn export_plotdata(run_dir: &Path) -> Result<i32, CliError> {
    if !run_dir.join(MANIFEST_FILE).is_file() {
        return Err(CliError::MissingManifest(run_dir.to_path_buf()));
    }
    let manifest = Manifest::read(run_dir).map_err(io_err(run_dir))?;
    let plot = run_dir.join("plot");
    mkdir(&plot)?;
    for name in &manifest.ledgers {
        let mut s = String::from("path,step,t,value\n");
        for &id in &manifest.completed {
            let f = run_dir.join("ledgers").join(path_dir(id)).join(format!("{name}.csv"));
            for (n, t, v) in read_ledger(&f).map_err(io_err(&f))? {
                s.push_str(&format!("{id},{n},{t:e},{v:e}\n"));
            }
        }
        let f = plot.join(format!("{name}.csv"));
        fs::write(&f, s).map_err(io_err(&f))?;
    }
    if manifest.snapshots {
        let cfg = RunConfig::load(&run_dir.join(&manifest.config_file))?;
        let m = cfg.manifold()?;
        let mut s = String::from("path,step,t,node,x1,x2,u\n");
        for &id in &manifest.completed {
            let dir = run_dir.join("snapshots").join(path_dir(id));
            let mut files: Vec<PathBuf> =
                fs::read_dir(&dir).map_err(io_err(&dir))?.filter_map(|e| e.ok().map(|e| e.path())).collect();
            files.sort();
            for f in files {
                let snap = FieldSnapshot::read(&f).map_err(io_err(&f))?;
                let step = (snap.time / manifest.dt).round() as usize;
                for (i, u) in snap.data.iter().enumerate() {
                    let x = m.grid.coords(i);
                    s.push_str(&format!("{id},{step},{:e},{i},{:e},{:e},{u:e}\n", snap.time, x[0], x[1]));
                }
            }
        }
        let f = plot.join("snapshots.csv");
        fs::write(&f, s).map_err(io_err(&f))?;
    }
    if manifest.kinetic {
        let mut s = String::from("path,t_bin,x_index,xi_bin,mass\n");
        for &id in &manifest.completed {
            let f = run_dir.join("kinetic").join(format!("{}.csv", path_dir(id)));
            let text = fs::read_to_string(&f).map_err(io_err(&f))?;
            for l in text.lines().skip(1) {
                s.push_str(&format!("{id},{l}\n"));
            }
        }
        let f = plot.join("kinetic.csv");
        fs::write(&f, s).map_err(io_err(&f))?;
    }
    Ok(EXIT_OK)
}

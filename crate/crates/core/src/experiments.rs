//! Verification suites. Each suite runs ensembles through the public solver
//! and kinetic operations, turns the results into checks with Monte Carlo
//! error bars, and runs one deliberately broken variant that has to fail.

use std::fmt::Write as _;
use std::io;
use std::path::Path;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::catalog::{self, FluxChoice, FluxKind, NoiseChoice, NoiseKind};
use crate::flux::{check_growth, compatibility_defect, FluxError, FluxModel, COMPATIBILITY_TOL};
use crate::geometry::{build_manifold, GeometryError, Manifold, ManifoldSpec};
use crate::kinetic::{
    contraction_functional, weak_residual, KineticError, KineticSpec, TestFunction, XiGrid,
};
use crate::noise::{verify_conditions, NoiseError, NoiseModel};
use crate::solver::{
    guard_for, par_paths, Ensemble, FluxScheme, InitialData, PathError, PathResult, Problem,
    SolverError, TimeStep,
};
use crate::stats::MeanStderr;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("experiment: precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Kinetic(#[from] KineticError),
    #[error(transparent)]
    Flux(#[from] FluxError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("experiment: i/o: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    AtMost,
    AtLeast,
    /// Negative control of an `AtMost` check: passes when the bound is broken.
    Exceeds,
    /// Negative control of an `AtLeast` check.
    Below,
}

impl Relation {
    fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Relation::AtMost => value <= threshold,
            Relation::AtLeast => value >= threshold,
            Relation::Exceeds => !(value <= threshold),
            Relation::Below => !(value >= threshold),
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            Relation::AtMost => "<=",
            Relation::AtLeast => ">=",
            Relation::Exceeds => ">",
            Relation::Below => "<",
        }
    }

    fn negated(self) -> Self {
        match self {
            Relation::AtMost => Relation::Exceeds,
            Relation::AtLeast => Relation::Below,
            Relation::Exceeds => Relation::AtMost,
            Relation::Below => Relation::AtLeast,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub relation: Relation,
    pub threshold: f64,
    pub stderr: Option<f64>,
    pub passed: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, value: f64, relation: Relation, threshold: f64) -> Self {
        Self { name: name.into(), value, relation, threshold, stderr: None, passed: relation.holds(value, threshold) }
    }

    pub fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self::new(name, value, Relation::AtMost, threshold)
    }

    pub fn at_least(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self::new(name, value, Relation::AtLeast, threshold)
    }

    pub fn with_stderr(mut self, se: f64) -> Self {
        self.stderr = Some(se);
        self
    }

    /// The same comparison, expected to fail.
    pub fn negative(self) -> Self {
        let relation = self.relation.negated();
        Self {
            name: format!("negative/{}", self.name),
            passed: relation.holds(self.value, self.threshold),
            relation,
            ..self
        }
    }
}

/// A tabular series for plotting.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Series {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|v| format!("{v:e}")).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub suite: String,
    pub seed: u64,
    pub paths: usize,
    pub checks: Vec<Check>,
    pub series: Vec<Series>,
    pub notes: Vec<String>,
    pub runtime: Duration,
}

impl SuiteReport {
    fn new(suite: &str, seed: u64, paths: usize) -> Self {
        Self {
            suite: suite.into(),
            seed,
            paths,
            checks: Vec::new(),
            series: Vec::new(),
            notes: Vec::new(),
            runtime: Duration::ZERO,
        }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// `key=value` blocks. Runtime is left out so reports are reproducible.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "suite={}", self.suite);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "paths={}", self.paths);
        let _ = writeln!(s, "passed={}", self.passed());
        for n in &self.notes {
            let _ = writeln!(s, "note={n}");
        }
        for c in &self.checks {
            let _ = writeln!(s, "\n[check {}]", c.name);
            let _ = writeln!(s, "value={:e}", c.value);
            let _ = writeln!(s, "relation={}", c.relation.symbol());
            let _ = writeln!(s, "threshold={:e}", c.threshold);
            if let Some(se) = c.stderr {
                let _ = writeln!(s, "stderr={se:e}");
            }
            let _ = writeln!(s, "passed={}", c.passed);
        }
        s
    }

    /// Writes `<suite>.report.txt` and one CSV per series into `dir`.
    pub fn write(&self, dir: &Path) -> io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{}.report.txt", self.suite)), self.to_text())?;
        for s in &self.series {
            std::fs::write(dir.join(format!("{}.{}.csv", self.suite, s.name)), s.to_csv())?;
        }
        Ok(())
    }
}

/// Per-path scalar functionals used across suites.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Functional {
    /// `∫|u(T) − u₀| dV`.
    L1Distance,
    /// `max_n ‖u^n‖_p^p`.
    LpNorm(f64),
    /// `∫u(T) dV − ∫u₀ dV`.
    SpatialMean,
    EnergyResidual,
    KineticMass,
    /// `(∫|ξ|^{2p} dm)²`.
    KineticMass2pMoment(f64),
}

impl Functional {
    pub fn evaluate(&self, m: &Manifold, path: &PathResult) -> f64 {
        match *self {
            Functional::L1Distance => {
                let d: Vec<f64> =
                    path.final_state().u.iter().zip(&path.initial).map(|(a, b)| (a - b).abs()).collect();
                m.integrate(&d)
            }
            Functional::LpNorm(p) => path.lp_series(p).map_or(f64::NAN, |s| s.max()),
            Functional::SpatialMean => path.mean[path.steps] - path.mean[0],
            Functional::EnergyResidual => path.energy_residual(),
            Functional::KineticMass => path.kinetic.as_ref().map_or(f64::NAN, |k| k.total_mass()),
            Functional::KineticMass2pMoment(p) => {
                path.kinetic.as_ref().map_or(f64::NAN, |k| k.moment(2.0 * p).powi(2))
            }
        }
    }
}

fn ensemble_or_err(e: Ensemble) -> Result<Ensemble, ExperimentError> {
    match e.aborted.first() {
        Some(err) => Err(err.clone().into()),
        None => Ok(e),
    }
}

fn with_noise(base: &Problem, noise: NoiseModel) -> Problem {
    Problem { noise, ..base.clone() }
}

fn snapshot_steps(total: usize, every: usize) -> Vec<usize> {
    let every = if every == 0 { (total / 10).max(1) } else { every };
    let mut v: Vec<usize> = (0..=total).step_by(every).collect();
    if *v.last().unwrap() != total {
        v.push(total);
    }
    v
}

// ---------------------------------------------------------------- contraction

/// Minimum length of the centered-flux control run.
const CONTROL_MIN_STEPS: usize = 200;
/// Absolute slack on conservation checks: the ensemble mean of exactly
/// conserved quantities is pure rounding, with a rounding-sized stderr.
const ROUNDOFF_FLOOR: f64 = 1e-12;

/// Result of a lockstep pair run.
struct PairRun {
    l1: Vec<f64>,
    max_increase: f64,
    mass_drift: f64,
    final_kinetic_gap: f64,
}

fn run_pair(
    p: &Problem,
    u1: &[f64],
    u2: &[f64],
    path_id: u64,
    record_at: &[usize],
    xi: &XiGrid,
) -> Result<PairRun, SolverError> {
    let m = &p.manifold;
    let mut a = p.stepper(u1.to_vec(), path_id)?;
    let mut b = p.stepper(u2.to_vec(), path_id)?;
    let mut prev = contraction_functional(m, a.state(), b.state(), xi).direct;
    let mass0 = m.integrate(a.state());
    let mut l1 = Vec::with_capacity(record_at.len());
    let mut next = 0;
    if record_at.first() == Some(&0) {
        l1.push(prev);
        next = 1;
    }
    let mut max_increase = f64::NEG_INFINITY;
    while !a.is_done() {
        a.step()?;
        b.step()?;
        let d = contraction_functional(m, a.state(), b.state(), xi).direct;
        max_increase = max_increase.max(d - prev);
        prev = d;
        if next < record_at.len() && record_at[next] == a.step_index() {
            l1.push(d);
            next += 1;
        }
    }
    let fin = contraction_functional(m, a.state(), b.state(), xi);
    Ok(PairRun {
        l1,
        max_increase,
        mass_drift: m.integrate(a.state()) - mass0,
        final_kinetic_gap: (fin.direct - fin.kinetic).abs(),
    })
}

/// Pathwise L¹ contraction without noise, the ensemble-mean contraction with
/// common noise, and the spatial-mean martingale property.
pub fn contraction_suite(
    base: &Problem,
    u2: &InitialData,
    paired_seed: u64,
) -> Result<SuiteReport, ExperimentError> {
    let start = Instant::now();
    if paired_seed != base.noise.seed {
        return Err(ExperimentError::Precondition(format!(
            "paired runs must share the noise seed ({} vs {paired_seed})",
            base.noise.seed
        )));
    }
    let paths = base.config.paths;
    let mut rep = SuiteReport::new("contraction", base.noise.seed, paths);
    let u1 = base.initial_state()?;
    let u2 = u2.sample(&base.manifold)?;
    let plan = base.step_plan()?;
    let xi = XiGrid::symmetric(guard_for(&u1).max(guard_for(&u2)), 1e-3 * (1.0 + u1.iter().fold(0.0f64, |a, v| a.max(v.abs()))))
        .map_err(ExperimentError::from)?;
    let every_step: Vec<usize> = (0..=plan.steps).collect();

    // B = 0: the monotone scheme contracts every step
    let det = with_noise(base, NoiseModel::none(base.noise.seed));
    let d = run_pair(&det, &u1, &u2, 0, &every_step, &xi)?;
    rep.checks.push(Check::at_most("deterministic_l1_increase", d.max_increase, 1e-12));
    rep.checks.push(Check::at_most("deterministic_mass_drift", d.mass_drift.abs(), 1e-12));
    rep.checks.push(Check::at_most("kinetic_route_gap", d.final_kinetic_gap, xi.width()));
    let mut s = Series::new("deterministic_l1", &["step", "t", "l1"]);
    for (n, v) in d.l1.iter().enumerate() {
        s.rows.push(vec![n as f64, n as f64 * plan.dt, *v]);
    }
    rep.series.push(s);

    // negative control: centered flux, inviscid, no numerical dissipation
    let mut central = det.clone();
    central.config.scheme = FluxScheme::Central;
    central.config.eps = 0.0;
    // long enough for the missing dissipation to show
    central.config.t_final = central.config.t_final.max(CONTROL_MIN_STEPS as f64 * plan.dt);
    let c = run_pair(&central, &u1, &u2, 0, &[], &xi);
    let inc = match c {
        Ok(r) => r.max_increase,
        Err(_) => f64::INFINITY,
    };
    rep.checks.push(Check::at_most("central_flux_l1_increase", inc, 1e-12).negative());

    if !base.noise.is_empty() {
        let at = snapshot_steps(plan.steps, base.config.snapshot_every);
        let runs = par_paths(paths, |id| run_pair(base, &u1, &u2, id, &at, &xi));
        let runs: Vec<PairRun> = runs.into_iter().collect::<Result<_, _>>()?;
        let col = |k: usize| -> Vec<f64> { runs.iter().map(|r| r.l1[k]).collect() };
        let mean0 = MeanStderr::from_samples(&col(0)).mean;
        let mut worst_bound = f64::NEG_INFINITY;
        let mut worst_trend = f64::NEG_INFINITY;
        let mut series = Series::new("stochastic_l1", &["step", "t", "mean", "stderr"]);
        for (k, &n) in at.iter().enumerate() {
            let ms = MeanStderr::from_samples(&col(k));
            series.rows.push(vec![n as f64, n as f64 * plan.dt, ms.mean, ms.stderr]);
            worst_bound = worst_bound.max(ms.mean - mean0 - 3.0 * ms.stderr);
            if k > 0 {
                let diff: Vec<f64> = runs.iter().map(|r| r.l1[k] - r.l1[k - 1]).collect();
                let dm = MeanStderr::from_samples(&diff);
                worst_trend = worst_trend.max(dm.mean - 3.0 * dm.stderr);
            }
        }
        rep.series.push(series);
        rep.checks.push(Check::at_most("stochastic_l1_above_initial_minus_3se", worst_bound, 0.0));
        rep.checks.push(Check::at_most("stochastic_l1_step_increase_minus_3se", worst_trend, 0.0));
        let drift: Vec<f64> = runs.iter().map(|r| r.mass_drift).collect();
        let ms = MeanStderr::from_samples(&drift);
        rep.checks.push(
            Check::at_most("spatial_mean_drift", ms.mean.abs(), 3.0 * ms.stderr + ROUNDOFF_FLOOR).with_stderr(ms.stderr),
        );
    }
    rep.runtime = start.elapsed();
    Ok(rep)
}

// ------------------------------------------------------------ ε sweeps (Lᵖ, m)

/// One ensemble per viscosity on a common time step, with kinetic measures
/// recorded.
pub struct ViscositySweep {
    pub eps: Vec<f64>,
    pub ensembles: Vec<Ensemble>,
    pub initial: Vec<f64>,
    pub manifold: Manifold,
    pub xi: XiGrid,
}

pub fn viscosity_sweep(
    base: &Problem,
    eps_list: &[f64],
    p_list: &[f64],
    xi_width: f64,
) -> Result<ViscositySweep, ExperimentError> {
    if eps_list.is_empty() {
        return Err(ExperimentError::Precondition("empty viscosity list".into()));
    }
    let u0 = base.initial_state()?;
    let xi = XiGrid::symmetric(guard_for(&u0), xi_width)?;
    // one time step for every level so all levels see the same increments
    let mut dt = f64::INFINITY;
    for &eps in eps_list {
        let mut p = base.clone();
        p.config.eps = eps;
        dt = dt.min(p.step_plan()?.dt);
    }
    let mut ensembles = Vec::new();
    for &eps in eps_list {
        let mut p = base.clone();
        p.config.eps = eps;
        p.config.time_step = TimeStep::Fixed { dt };
        p.config.lp = p_list.to_vec();
        p.config.kinetic = Some(KineticSpec { xi, time_bins: 1 });
        ensembles.push(ensemble_or_err(p.run_ensemble())?);
    }
    Ok(ViscositySweep { eps: eps_list.to_vec(), ensembles, initial: u0, manifold: base.manifold.clone(), xi })
}

fn relative_spread(v: &[f64]) -> f64 {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (hi - lo) / lo
}

/// `K̂_p(ε) = (𝔼 max_n ‖u^n‖_p^p + ε 𝔼 Σ∫|u|^{p−2}|∇u|²Δt) / (1 + 𝔼‖u₀‖_p^p)`.
pub fn lp_constants(sweep: &ViscositySweep, p: f64) -> Vec<(f64, MeanStderr)> {
    let m = &sweep.manifold;
    let u0p: f64 = sweep.initial.iter().enumerate().map(|(i, v)| v.abs().powf(p) * m.weight(i)).sum();
    sweep
        .eps
        .iter()
        .zip(&sweep.ensembles)
        .map(|(&eps, e)| {
            let k = e.functional(|r| {
                let s = r.lp_series(p).expect("tracked exponent");
                (s.max() + s.weighted_dissipation) / (1.0 + u0p)
            });
            (eps, k)
        })
        .collect()
}

/// ε-uniform Lᵖ bounds from a finished sweep.
pub fn lp_bound_report(sweep: &ViscositySweep, p_list: &[f64], ceiling: f64, seed: u64) -> SuiteReport {
    let paths = sweep.ensembles[0].paths.len();
    let mut rep = SuiteReport::new("lp_bounds", seed, paths);
    rep.notes.push("sup over time is taken over every step".into());
    for &p in p_list {
        let ks = lp_constants(sweep, p);
        let mut s = Series::new(&format!("k_hat_p{p}"), &["eps", "k_hat", "stderr"]);
        for (eps, k) in &ks {
            s.rows.push(vec![*eps, k.mean, k.stderr]);
        }
        rep.series.push(s);
        let means: Vec<f64> = ks.iter().map(|(_, k)| k.mean).collect();
        rep.checks.push(Check::at_most(format!("p{p}_relative_spread"), relative_spread(&means), 0.25));
        let worst = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        rep.checks.push(Check::at_most(format!("p{p}_max_k_hat"), worst, ceiling));
    }
    rep
}

/// Kinetic-measure bounds from a finished sweep.
pub fn kinetic_mass_report(sweep: &ViscositySweep, p: f64, seed: u64) -> SuiteReport {
    let paths = sweep.ensembles[0].paths.len();
    let mut rep = SuiteReport::new("kinetic_mass", seed, paths);
    let mut s = Series::new("moments", &["eps", "mass", "mass_stderr", "moment_sq", "moment_sq_stderr"]);
    let mut moments = Vec::new();
    let mut overflow = 0u64;
    let mut worst_gap = 0.0f64;
    for (eps, e) in sweep.eps.iter().zip(&sweep.ensembles) {
        let mass = e.functional(|r| Functional::KineticMass.evaluate(&sweep.manifold, r));
        let mom = e.functional(|r| Functional::KineticMass2pMoment(p).evaluate(&sweep.manifold, r));
        s.rows.push(vec![*eps, mass.mean, mass.stderr, mom.mean, mom.stderr]);
        moments.push(mom.mean);
        for r in &e.paths {
            let k = r.kinetic.as_ref().expect("kinetic measure recorded");
            overflow += k.overflow_count;
            let ledger = r.total_dissipation();
            let gap = (k.total_mass() - ledger).abs() / ledger.abs().max(f64::MIN_POSITIVE);
            worst_gap = worst_gap.max(gap);
        }
    }
    rep.series.push(s);
    let ratio = moments.iter().copied().fold(f64::NEG_INFINITY, f64::max) / moments[0];
    rep.checks.push(Check::at_most(format!("moment_{}p_sq_max_over_largest_eps", 2.0 * p), ratio, 4.0));
    rep.checks.push(Check::at_most("overflow_deposits", overflow as f64, 0.0));
    rep.checks.push(Check::at_most("mass_vs_dissipation_ledger", worst_gap, 1e-12));
    rep
}

/// Negative control of the Lᵖ bound: a compressive, non-divergence-free
/// field. Passes when a path blows up or `K̂_p` exceeds the ceiling.
pub fn lp_negative_control(
    base: &Problem,
    eps: f64,
    p: f64,
    amplitude: f64,
    ceiling: f64,
) -> Result<Check, ExperimentError> {
    let l = base.flux.certificate.l;
    let mut prob = base.clone();
    prob.flux = catalog::non_divfree_flux(&base.manifold, l, amplitude)?;
    prob.config.eps = eps;
    prob.config.lp = vec![p];
    prob.config.kinetic = None;
    let e = prob.run_ensemble();
    let k = if e.is_partial() {
        f64::INFINITY
    } else {
        let m = &prob.manifold;
        let u0 = prob.initial_state()?;
        let u0p: f64 = u0.iter().enumerate().map(|(i, v)| v.abs().powf(p) * m.weight(i)).sum();
        e.functional(|r| {
            let s = r.lp_series(p).expect("tracked");
            (s.max() + s.weighted_dissipation) / (1.0 + u0p)
        })
        .mean
    };
    Ok(Check::at_most(format!("non_divfree_p{p}_max_k_hat"), k, ceiling).negative())
}

/// Negative control of the kinetic-measure bookkeeping: a ξ-grid that does
/// not cover the solution must register overflow.
pub fn kinetic_negative_control(base: &Problem, eps: f64, bound: f64) -> Result<Check, ExperimentError> {
    let mut prob = base.clone();
    prob.config.eps = eps;
    prob.config.paths = prob.config.paths.min(4);
    prob.config.kinetic = Some(KineticSpec { xi: XiGrid::new(-bound, bound, 16)?, time_bins: 1 });
    let e = ensemble_or_err(prob.run_ensemble())?;
    let overflow: u64 = e.paths.iter().map(|r| r.kinetic.as_ref().map_or(0, |k| k.overflow_count)).sum();
    Ok(Check::at_most("narrow_grid_overflow_deposits", overflow as f64, 0.0).negative())
}

pub fn lp_bound_suite(
    base: &Problem,
    eps_list: &[f64],
    p_list: &[f64],
    ceiling: f64,
    negative_amplitude: f64,
    negative_initial: Option<&InitialData>,
) -> Result<SuiteReport, ExperimentError> {
    let start = Instant::now();
    let sweep = viscosity_sweep(base, eps_list, p_list, 0.05)?;
    let mut rep = lp_bound_report(&sweep, p_list, ceiling, base.noise.seed);
    let pmax = p_list.iter().copied().fold(2.0, f64::max);
    let mut neg = base.clone();
    if let Some(init) = negative_initial {
        neg.config.initial = init.clone();
    }
    let eps_min = eps_list.iter().copied().fold(f64::INFINITY, f64::min);
    rep.checks.push(lp_negative_control(&neg, eps_min, pmax, negative_amplitude, ceiling)?);
    rep.runtime = start.elapsed();
    Ok(rep)
}

pub fn kinetic_mass_suite(
    base: &Problem,
    eps_list: &[f64],
    p: f64,
    xi_width: f64,
) -> Result<SuiteReport, ExperimentError> {
    let start = Instant::now();
    let sweep = viscosity_sweep(base, eps_list, &[2.0], xi_width)?;
    let mut rep = kinetic_mass_report(&sweep, p, base.noise.seed);
    let sup = sweep.initial.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    rep.checks.push(kinetic_negative_control(base, eps_list[0], 0.25 * sup)?);
    rep.runtime = start.elapsed();
    Ok(rep)
}

// --------------------------------------------------------- vanishing viscosity

/// Viscosity below which Rusanov's numerical diffusion dominates:
/// `max_f α_f Δ_a / (2 · c_f)`, with `α_f` the face wave speed on the range of
/// `u₀` and `c_f` the Laplacian face conductance.
pub fn diffusion_floor(p: &Problem) -> Result<f64, ExperimentError> {
    let u0 = p.initial_state()?;
    let bound = u0.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let m = &p.manifold;
    let g = &m.grid;
    let mut floor = 0.0f64;
    for a in 0..g.dim() {
        for f in 0..g.len() {
            let alpha: f64 = p
                .flux
                .modes
                .iter()
                .map(|md| md.field.axes[a][f].abs() * md.profile.max_speed(bound))
                .sum();
            floor = floor.max(alpha * g.spacing(a) / (2.0 * m.faces[a].conductance[f]));
        }
    }
    Ok(floor)
}

/// Cauchy trend of `u^{ε_j}(T)` for `ε_j = ε₀ 2^{−j}`, `j = 0..=levels`,
/// with common noise and a common time step. With `independent_noise`
/// each level draws its own noise (negative control).
pub fn viscosity_differences(
    base: &Problem,
    eps0: f64,
    levels: usize,
    independent_noise: bool,
) -> Result<(Vec<f64>, Vec<MeanStderr>, f64), ExperimentError> {
    let eps: Vec<f64> = (0..=levels).map(|j| eps0 * 0.5f64.powi(j as i32)).collect();
    let mut top = base.clone();
    top.config.eps = eps0;
    let theta = match base.config.time_step {
        TimeStep::Cfl { theta } => theta,
        TimeStep::Fixed { .. } => 1.0,
    };
    let dt = match base.config.time_step {
        TimeStep::Fixed { dt } => dt,
        TimeStep::Cfl { .. } => theta * top.stability_limit()?,
    };
    let problems: Vec<Problem> = eps
        .iter()
        .enumerate()
        .map(|(j, &e)| {
            let mut p = base.clone();
            p.config.eps = e;
            p.config.time_step = TimeStep::Fixed { dt };
            p.config.kinetic = None;
            p.config.record_trajectory = false;
            if independent_noise {
                p.noise = p.noise.reseeded(base.noise.seed.wrapping_add(1 + j as u64));
            }
            Problem::new(p.manifold, p.flux, p.noise, p.config)
        })
        .collect::<Result<_, _>>()?;
    let m = &base.manifold;
    let per_path = par_paths(base.config.paths, |id| -> Result<Vec<f64>, PathError> {
        let finals: Vec<Vec<f64>> = problems
            .iter()
            .map(|p| p.run_path(id).map(|r| r.final_state().u.clone()))
            .collect::<Result<_, _>>()?;
        Ok(finals
            .windows(2)
            .map(|w| {
                let d: Vec<f64> = w[0].iter().zip(&w[1]).map(|(a, b)| (a - b).abs()).collect();
                m.integrate(&d)
            })
            .collect())
    });
    let per_path: Vec<Vec<f64>> = per_path.into_iter().collect::<Result<_, _>>()?;
    let diffs = (0..levels)
        .map(|j| MeanStderr::from_samples(&per_path.iter().map(|r| r[j]).collect::<Vec<_>>()))
        .collect();
    Ok((eps, diffs, diffusion_floor(base)?))
}

fn cauchy_checks(prefix: &str, eps: &[f64], diffs: &[MeanStderr], floor: f64) -> (Vec<Check>, usize) {
    let mut checks = Vec::new();
    let mut resolved = 0;
    for j in 1..diffs.len() {
        // pair j compares ε_j and ε_{j+1}; both must sit above the floor
        if eps[j + 1] < floor {
            continue;
        }
        resolved += 1;
        let ratio = diffs[j].mean / diffs[j - 1].mean;
        checks.push(Check::at_most(format!("{prefix}ratio_level_{j}"), ratio, 0.9));
    }
    (checks, resolved)
}

pub fn vanishing_viscosity_suite(base: &Problem, eps0: f64, levels: usize) -> Result<SuiteReport, ExperimentError> {
    let start = Instant::now();
    let mut rep = SuiteReport::new("vanishing_viscosity", base.noise.seed, base.config.paths);
    let (eps, diffs, floor) = viscosity_differences(base, eps0, levels, false)?;
    rep.notes.push(format!("numerical diffusion floor eps={floor:e}"));
    let mut s = Series::new("cauchy", &["eps_j", "eps_j1", "mean_l1", "stderr", "resolved"]);
    for (j, d) in diffs.iter().enumerate() {
        s.rows.push(vec![eps[j], eps[j + 1], d.mean, d.stderr, f64::from(u8::from(eps[j + 1] >= floor))]);
    }
    rep.series.push(s);
    let (checks, resolved) = cauchy_checks("", &eps, &diffs, floor);
    rep.checks.extend(checks);
    rep.checks.push(Check::at_least("resolved_ratios", resolved as f64, 1.0));

    let (_, ind, _) = viscosity_differences(base, eps0, levels, true)?;
    let worst = (1..ind.len()).map(|j| ind[j].mean / ind[j - 1].mean).fold(f64::NEG_INFINITY, f64::max);
    rep.checks.push(Check::at_most("independent_noise_max_ratio", worst, 0.9).negative());
    rep.runtime = start.elapsed();
    Ok(rep)
}

// ------------------------------------------------------------ energy identity

pub struct EnergyRun {
    pub dt: f64,
    pub residual: MeanStderr,
    pub residual_without_ito: MeanStderr,
}

pub fn energy_run(p: &Problem) -> Result<EnergyRun, ExperimentError> {
    let e = ensemble_or_err(p.run_ensemble())?;
    Ok(EnergyRun {
        dt: p.step_plan()?.dt,
        residual: e.functional(PathResult::energy_residual),
        residual_without_ito: e.functional(PathResult::energy_residual_without_ito),
    })
}

/// Itô energy balance at `Δt` and `Δt/2`, and the ablation without the Itô
/// correction. `c` is the constant of the `C·Δt` bias allowance.
pub fn energy_identity_suite(base: &Problem, c: f64) -> Result<SuiteReport, ExperimentError> {
    let start = Instant::now();
    let mut rep = SuiteReport::new("energy_identity", base.noise.seed, base.config.paths);
    if base.config.paths < 2 {
        return Err(ExperimentError::Precondition("energy identity needs at least 2 paths".into()));
    }
    let coarse = energy_run(base)?;
    let mut fine_p = base.clone();
    fine_p.config.time_step = TimeStep::Fixed { dt: 0.5 * coarse.dt };
    let fine = energy_run(&fine_p)?;
    let r = coarse.residual;
    rep.checks.push(Check::at_most("mean_residual", r.mean.abs(), 3.0 * r.stderr + c * coarse.dt).with_stderr(r.stderr));
    let rf = fine.residual;
    rep.checks.push(Check::at_most("mean_residual_half_dt", rf.mean.abs(), 3.0 * rf.stderr + c * fine.dt).with_stderr(rf.stderr));
    rep.checks.push(Check::at_least("halving_reduction", r.mean.abs() / rf.mean.abs(), 1.5));
    let w = coarse.residual_without_ito;
    rep.checks.push(
        Check::at_most("without_ito_mean_residual", w.mean.abs(), 3.0 * w.stderr + c * coarse.dt)
            .with_stderr(w.stderr)
            .negative(),
    );
    let mut s = Series::new("residual", &["dt", "mean", "stderr", "mean_without_ito", "stderr_without_ito"]);
    for run in [&coarse, &fine] {
        s.rows.push(vec![
            run.dt,
            run.residual.mean,
            run.residual.stderr,
            run.residual_without_ito.mean,
            run.residual_without_ito.stderr,
        ]);
    }
    rep.series.push(s);
    rep.runtime = start.elapsed();
    Ok(rep)
}

// ------------------------------------------------------------ weak residual

/// Ensemble-mean `|residual|` of the weak kinetic identity, with and
/// without the Itô correction term.
pub fn weak_residual_run(p: &Problem, psi: &TestFunction) -> Result<(MeanStderr, MeanStderr), ExperimentError> {
    let res = par_paths(p.config.paths, |id| -> Result<(f64, f64), ExperimentError> {
        let r = p.run_path(id)?;
        let w = weak_residual(p, &r, psi)?;
        Ok((w.total().abs(), w.total_without_ito().abs()))
    });
    let res: Vec<(f64, f64)> = res.into_iter().collect::<Result<_, _>>()?;
    let a: Vec<f64> = res.iter().map(|r| r.0).collect();
    let b: Vec<f64> = res.iter().map(|r| r.1).collect();
    Ok((MeanStderr::from_samples(&a), MeanStderr::from_samples(&b)))
}

/// `base` with the grid, the time step and the ξ-bin width all halved.
pub fn refined(base: &Problem) -> Result<Problem, ExperimentError> {
    let m = &base.manifold;
    let mut cells = [1usize; 2];
    for (a, c) in cells.iter_mut().enumerate().take(m.dim()) {
        *c = 2 * m.grid.sizes()[a];
    }
    let fine_m = build_manifold(&ManifoldSpec { kind: m.kind, cells, beta: m.beta })?;
    let mut cfg = base.config.clone();
    let dt = base.step_plan()?.dt;
    cfg.time_step = TimeStep::Fixed { dt: 0.5 * dt };
    if let Some(k) = cfg.kinetic.as_mut() {
        k.xi = XiGrid::new(k.xi.min, k.xi.max, 2 * k.xi.bins)?;
        if k.time_bins != 0 {
            k.time_bins *= 2;
        }
    }
    if let InitialData::Nodal { .. } = cfg.initial {
        return Err(ExperimentError::Precondition("refinement needs analytic initial data".into()));
    }
    // rebuild the same named fields and noise on the finer grid
    let flux = rebuild_flux(base, &fine_m)?;
    let noise = NoiseModel::new(&fine_m, base.noise.modes.clone(), base.noise.d1, base.noise.d2, base.noise.seed)?;
    Ok(Problem::new(fine_m, flux, noise, cfg)?)
}

fn rebuild_flux(base: &Problem, fine: &Manifold) -> Result<FluxModel, ExperimentError> {
    // face fields are resampled through node values: refine by matching the
    // catalog entry with the same certificate
    let amp = infer_amplitude(base)?;
    for kind in [FluxKind::Linear, FluxKind::Burgers, FluxKind::Cubic, FluxKind::Mixed] {
        let c = FluxChoice { model: kind, l: base.flux.certificate.l, amplitude: amp };
        let coarse = catalog::build_flux(&base.manifold, &c)?;
        if same_flux(&coarse, &base.flux) {
            return Ok(catalog::build_flux(fine, &c)?);
        }
    }
    Err(ExperimentError::Precondition("refinement needs a catalog flux".into()))
}

fn infer_amplitude(base: &Problem) -> Result<f64, ExperimentError> {
    let unit = catalog::build_flux(
        &base.manifold,
        &FluxChoice { model: FluxKind::Linear, l: 1.0, amplitude: 1.0 },
    )?;
    let a = base.flux.modes[0].field.max_abs();
    let b = unit.modes[0].field.max_abs();
    Ok(if b > 0.0 { a / b } else { 0.0 })
}

fn same_flux(a: &FluxModel, b: &FluxModel) -> bool {
    a.modes.len() == b.modes.len()
        && a.modes.iter().zip(&b.modes).all(|(x, y)| {
            format!("{:?}", x.profile) == format!("{:?}", y.profile) && x.field == y.field
        })
}

/// Weak kinetic residual under joint refinement of `(Δx, Δt, Δξ)`.
pub fn kinetic_residual_suite(base: &Problem, psi: &TestFunction) -> Result<SuiteReport, ExperimentError> {
    let start = Instant::now();
    let mut rep = SuiteReport::new("kinetic_residual", base.noise.seed, base.config.paths);
    let mut coarse = base.clone();
    coarse.config.record_trajectory = true;
    if coarse.config.kinetic.is_none() {
        return Err(ExperimentError::Precondition("kinetic residual needs a [kinetic] grid".into()));
    }
    let fine = refined(&coarse)?;
    let (c, c_no) = weak_residual_run(&coarse, psi)?;
    let (f, f_no) = weak_residual_run(&fine, psi)?;
    rep.checks.push(Check::at_least("mean_abs_residual_reduction", c.mean / f.mean, 1.5));
    rep.checks.push(Check::at_least("without_ito_reduction", c_no.mean / f_no.mean, 1.5).negative());
    let mut s = Series::new("residual", &["level", "mean_abs", "stderr", "mean_abs_without_ito", "stderr_without_ito"]);
    s.rows.push(vec![0.0, c.mean, c.stderr, c_no.mean, c_no.stderr]);
    s.rows.push(vec![1.0, f.mean, f.stderr, f_no.mean, f_no.stderr]);
    rep.series.push(s);
    rep.runtime = start.elapsed();
    Ok(rep)
}

// ------------------------------------------------------------- conditions

/// Settings of the certificate checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionSettings {
    pub l: f64,
    pub flux_amplitude: f64,
    pub noise_amplitude: f64,
    pub modes: usize,
    pub clip: f64,
    pub xi_samples: usize,
}

impl Default for ConditionSettings {
    fn default() -> Self {
        Self { l: 4.0, flux_amplitude: 1.0, noise_amplitude: 0.5, modes: 4, clip: 4.0, xi_samples: 161 }
    }
}

pub fn condition_manifolds(n1: usize, n2: usize) -> Result<Vec<(&'static str, Manifold)>, GeometryError> {
    Ok(vec![
        ("circle", build_manifold(&ManifoldSpec::circle(n1, 0.0))?),
        ("warped_circle", build_manifold(&ManifoldSpec::circle(n1, 0.5))?),
        ("flat_torus", build_manifold(&ManifoldSpec::flat_torus(n2, n2))?),
        ("warped_torus", build_manifold(&ManifoldSpec::warped_torus(n2, n2, 0.5))?),
    ])
}

/// Half-width of the ξ-window on which certificates are sampled: well past
/// the flux threshold `l` and the noise clip.
pub fn certificate_range(l: f64, clip: f64) -> f64 {
    4.0 * l.max(clip) + 10.0
}

fn compatibility_xis(range: f64) -> Vec<f64> {
    (0..32).map(|k| -range + 2.0 * range * k as f64 / 31.0).collect()
}

/// Growth, compatibility and noise certificates of one configured model.
pub fn model_conditions(
    m: &Manifold,
    flux: &FluxModel,
    noise: &NoiseModel,
    range: f64,
    xi_samples: usize,
) -> SuiteReport {
    let start = Instant::now();
    let mut rep = SuiteReport::new("conditions", noise.seed, 0);
    let g = check_growth(flux, m, (-range, range), xi_samples);
    rep.notes.extend(g.failures.iter().map(|f| format!("flux {f}")));
    rep.checks.push(Check::at_most("flux/growth_failures", g.failures.len() as f64, 0.0));
    let d = compatibility_defect(flux, m, &compatibility_xis(range));
    rep.checks.push(Check::at_most("flux/compatibility", d, COMPATIBILITY_TOL));
    if !noise.is_empty() {
        let r = verify_conditions(noise, m, (-range, range), xi_samples);
        rep.notes.extend(r.failures.iter().map(|f| format!("noise {f}")));
        rep.checks.push(Check::at_most("noise/failures", r.failures.len() as f64, 0.0));
    }
    rep.runtime = start.elapsed();
    rep
}

/// Growth, compatibility and noise certificates of every built-in model, and
/// the negative controls that must fail them.
pub fn conditions_suite(settings: &ConditionSettings, seed: u64) -> Result<SuiteReport, ExperimentError> {
    let start = Instant::now();
    let mut rep = SuiteReport::new("conditions", seed, 0);
    let s = settings;
    let range = certificate_range(s.l, s.clip);
    let xis = compatibility_xis(range);
    for (mname, m) in condition_manifolds(64, 32)? {
        for kind in FluxKind::BUILTIN {
            let fm = catalog::build_flux(&m, &FluxChoice { model: kind, l: s.l, amplitude: s.flux_amplitude })?;
            let g = check_growth(&fm, &m, (-range, range), s.xi_samples);
            rep.checks.push(Check::at_most(format!("flux/{mname}/{}/growth_failures", kind.name()), g.failures.len() as f64, 0.0));
            let d = compatibility_defect(&fm, &m, &xis);
            rep.checks.push(Check::at_most(format!("flux/{mname}/{}/compatibility", kind.name()), d, COMPATIBILITY_TOL));
        }
        for kind in NoiseKind::BUILTIN {
            let choice = NoiseChoice {
                model: kind,
                modes: s.modes,
                amplitude: s.noise_amplitude,
                clip: s.clip,
                additive: 0.5 * s.noise_amplitude,
            };
            let nm = NoiseModel::with_derived_constants(&m, catalog::noise_modes(&m, &choice)?, seed)?
                .ok_or_else(|| ExperimentError::Precondition(format!("built-in noise {} has no finite constants", kind.name())))?;
            let r = verify_conditions(&nm, &m, (-range, range), s.xi_samples);
            rep.checks.push(Check::at_most(format!("noise/{mname}/{}/failures", kind.name()), r.failures.len() as f64, 0.0));

            // under-declared constants
            if nm.d1 > 0.0 {
                let under = NoiseModel::new(&m, nm.modes.clone(), 0.5 * nm.d1, 0.5 * nm.d2, seed)?;
                let r = verify_conditions(&under, &m, (-range, range), s.xi_samples);
                rep.checks.push(
                    Check::at_most(format!("noise/{mname}/{}/half_declared_failures", kind.name()), r.failures.len() as f64, 0.0)
                        .negative(),
                );
            }
        }
        // growth negative control
        let bad = catalog::build_flux(
            &m,
            &FluxChoice { model: FluxKind::BurgersUnlinearized, l: s.l, amplitude: s.flux_amplitude },
        )?;
        let g = check_growth(&bad, &m, (-range, range), s.xi_samples);
        rep.checks.push(Check::at_most(format!("flux/{mname}/burgers_unlinearized/growth_failures"), g.failures.len() as f64, 0.0).negative());
        // compatibility negative control
        let nd = catalog::non_divfree_flux(&m, s.l, s.flux_amplitude)?;
        let d = compatibility_defect(&nd, &m, &xis);
        rep.checks.push(Check::at_most(format!("flux/{mname}/non_divfree/compatibility"), d, COMPATIBILITY_TOL).negative());
        // quadratic noise
        let q = NoiseChoice { model: NoiseKind::Quadratic, modes: 1, amplitude: s.noise_amplitude, clip: s.clip, additive: 0.0 };
        let qm = NoiseModel::new(&m, catalog::noise_modes(&m, &q)?, s.noise_amplitude.powi(2), s.noise_amplitude.powi(2), seed)?;
        let r = verify_conditions(&qm, &m, (-range, range), s.xi_samples);
        rep.checks.push(Check::at_most(format!("noise/{mname}/quadratic/failures"), r.failures.len() as f64, 0.0).negative());
    }
    rep.runtime = start.elapsed();
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::SimConfig;

    fn base(noise: NoiseKind, amp: f64) -> Problem {
        let m = build_manifold(&ManifoldSpec::circle(32, 0.0)).unwrap();
        let flux = catalog::build_flux(&m, &FluxChoice { model: FluxKind::Burgers, l: 4.0, amplitude: 1.0 }).unwrap();
        let modes = catalog::noise_modes(
            &m,
            &NoiseChoice { model: noise, modes: 2, amplitude: amp, clip: 4.0, additive: amp },
        )
        .unwrap();
        let nm = NoiseModel::with_derived_constants(&m, modes, 3).unwrap().unwrap();
        let mut cfg = SimConfig::new(
            0.01,
            0.1,
            TimeStep::Cfl { theta: 0.5 },
            InitialData::Harmonic { offset: 0.0, amplitude: 1.0, k: [1, 0], phase: 0.0 },
        );
        cfg.paths = 8;
        Problem::new(m, flux, nm, cfg).unwrap()
    }

    #[test]
    fn checks_record_consistent_flags() {
        let c = Check::at_most("x", 1.0, 2.0);
        assert!(c.passed);
        let n = c.clone().negative();
        assert!(!n.passed);
        assert_eq!(n.relation, Relation::Exceeds);
        assert_eq!(n.name, "negative/x");
        assert!(Check::at_least("y", f64::NAN, 1.0).negative().passed);
    }

    #[test]
    fn report_text_is_deterministic_and_excludes_runtime() {
        let mut r = SuiteReport::new("demo", 7, 3);
        r.checks.push(Check::at_most("a", 0.5, 1.0).with_stderr(0.1));
        let t1 = r.to_text();
        r.runtime = Duration::from_secs(5);
        assert_eq!(t1, r.to_text());
        assert!(t1.contains("suite=demo\nseed=7\npaths=3\npassed=true\n"));
        assert!(t1.contains("stderr=1e-1"));
        let dir = tempfile::tempdir().unwrap();
        r.series.push(Series { name: "s".into(), columns: vec!["a".into()], rows: vec![vec![1.0]] });
        r.write(dir.path()).unwrap();
        assert_eq!(std::fs::read_to_string(dir.path().join("demo.s.csv")).unwrap(), "a\n1e0\n");
    }

    #[test]
    fn identical_initial_data_stay_identical() {
        let p = base(NoiseKind::Multiplicative, 0.3);
        let u = p.initial_state().unwrap();
        let xi = XiGrid::symmetric(2000.0, 0.01).unwrap();
        let at: Vec<usize> = (0..=p.step_plan().unwrap().steps).collect();
        let r = run_pair(&p, &u, &u, 2, &at, &xi).unwrap();
        assert!(r.l1.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn mismatched_seeds_are_a_precondition_error() {
        let p = base(NoiseKind::Multiplicative, 0.3);
        let u2 = InitialData::Harmonic { offset: 0.0, amplitude: 1.0, k: [1, 0], phase: 0.5 };
        assert!(matches!(contraction_suite(&p, &u2, 4), Err(ExperimentError::Precondition(_))));
    }

    #[test]
    fn small_contraction_suite_passes() {
        let p = base(NoiseKind::Multiplicative, 0.3);
        let u2 = InitialData::Harmonic { offset: 0.0, amplitude: 1.0, k: [1, 0], phase: 0.5 };
        let r = contraction_suite(&p, &u2, 3).unwrap();
        assert!(r.passed(), "{}", r.to_text());
    }

    #[test]
    fn heat_flow_sweep_has_k_hat_at_most_one() {
        let m = build_manifold(&ManifoldSpec::circle(32, 0.0)).unwrap();
        let mut cfg = SimConfig::new(
            0.01,
            0.1,
            TimeStep::Cfl { theta: 0.5 },
            InitialData::Harmonic { offset: 0.0, amplitude: 1.0, k: [1, 0], phase: 0.0 },
        );
        cfg.paths = 2;
        let p = Problem::new(m.clone(), FluxModel::zero(&m), NoiseModel::none(0), cfg).unwrap();
        let sweep = viscosity_sweep(&p, &[1e-2, 1e-3], &[2.0, 4.0], 0.05).unwrap();
        for pp in [2.0, 4.0] {
            for (_, k) in lp_constants(&sweep, pp) {
                assert!(k.mean <= 1.0 + 1e-12);
                assert_eq!(k.stderr, 0.0);
            }
        }
    }

    #[test]
    fn identical_levels_have_zero_difference() {
        let p = base(NoiseKind::Additive, 0.1);
        let (_, d, _) = viscosity_differences(&p, 0.0, 1, false).unwrap();
        assert_eq!(d[0].mean, 0.0);
    }

    #[test]
    fn heat_flow_differences_shrink_with_eps() {
        let m = build_manifold(&ManifoldSpec::circle(64, 0.0)).unwrap();
        let mut cfg = SimConfig::new(
            0.0,
            0.2,
            TimeStep::Cfl { theta: 0.5 },
            InitialData::Harmonic { offset: 0.0, amplitude: 1.0, k: [2, 0], phase: 0.0 },
        );
        cfg.paths = 2;
        let p = Problem::new(m.clone(), FluxModel::zero(&m), NoiseModel::none(0), cfg).unwrap();
        let (eps, d, _) = viscosity_differences(&p, 4e-3, 3, false).unwrap();
        // analytic heat solution: |e^{-λ ε_j T} − e^{-λ ε_{j+1} T}| · ∫|sin 2x|
        let lam = 4.0 * m.metric.inv[0][0];
        for j in 0..3 {
            let exact = ((-lam * eps[j] * 0.2).exp() - (-lam * eps[j + 1] * 0.2).exp()).abs() * 2.0 / std::f64::consts::PI;
            assert!((d[j].mean / exact - 1.0).abs() < 0.05, "level {j}: {} vs {exact}", d[j].mean);
        }
        assert!(d.windows(2).all(|w| w[1].mean < w[0].mean));
    }

    #[test]
    fn conditions_on_builtins_pass_and_controls_fail() {
        let r = conditions_suite(&ConditionSettings { xi_samples: 41, ..Default::default() }, 1).unwrap();
        for c in &r.checks {
            assert!(c.passed, "{c:?}");
        }
        assert!(r.checks.iter().filter(|c| c.name.starts_with("negative/")).count() >= 4 * 4);
    }

    #[test]
    fn functionals_evaluate_on_a_path() {
        let p = base(NoiseKind::Additive, 0.1);
        let r = p.run_path(0).unwrap();
        assert!(Functional::L1Distance.evaluate(&p.manifold, &r) > 0.0);
        assert_eq!(Functional::LpNorm(2.0).evaluate(&p.manifold, &r), r.lp[0].max());
        assert!(Functional::KineticMass.evaluate(&p.manifold, &r).is_nan());
        assert_eq!(Functional::EnergyResidual.evaluate(&p.manifold, &r), r.energy_residual());
    }
}

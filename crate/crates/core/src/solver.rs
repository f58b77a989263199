//! Euler–Maruyama integration of
//! `du + div_h f_x(u) dt = ε Δ_h u dt + Σ_k g_k(x, u) dβ_k`
//! with first-order Rusanov fluxes, plus ensembles of independent paths.

use rayon::prelude::*;
use thiserror::Error;

use crate::flux::FluxModel;
use crate::geometry::Manifold;
use crate::kinetic::{KineticMeasure, KineticSpec};
use crate::noise::{NoiseError, NoiseIncrementBlock, NoiseModel};
use crate::stats::{csum, MeanStderr, NeumaierSum};

/// Blow-up guard factor: a path aborts once `|u| > GUARD_FACTOR (1 + sup|u₀|)`.
pub const GUARD_FACTOR: f64 = 1e3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("solver: {0}")]
    InvalidConfig(String),
    #[error("solver: time step {dt:.6e} exceeds the stability limit {limit:.6e}")]
    CflViolation { dt: f64, limit: f64 },
    #[error("solver: initial data has {got} values, grid has {expected} nodes")]
    InitialLength { expected: usize, got: usize },
    #[error("solver: blow-up guard exceeded at step {step}, node {node}: u = {value:e} (guard {guard:e})")]
    BlowUp { step: usize, node: usize, value: f64, guard: f64 },
    #[error(transparent)]
    Noise(#[from] NoiseError),
}

/// A path that stopped before `T`.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("path {path_id} aborted: {source}")]
pub struct PathError {
    pub path_id: u64,
    pub source: SolverError,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluxScheme {
    /// Local Lax–Friedrichs; monotone under the CFL condition.
    Rusanov,
    /// Centered flux without numerical dissipation. Not monotone.
    Central,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TimeStep {
    Cfl { theta: f64 },
    Fixed { dt: f64 },
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    Constant { value: f64 },
    /// `offset + amplitude · sin(k₁x¹ + k₂x² + phase)`.
    Harmonic { offset: f64, amplitude: f64, k: [i32; 2], phase: f64 },
    Nodal { values: Vec<f64> },
}

impl InitialData {
    pub fn sample(&self, m: &Manifold) -> Result<Vec<f64>, SolverError> {
        let u = match self {
            InitialData::Constant { value } => vec![*value; m.len()],
            InitialData::Harmonic { offset, amplitude, k, phase } => m.sample(|x| {
                offset + amplitude * (k[0] as f64 * x[0] + k[1] as f64 * x[1] + phase).sin()
            }),
            InitialData::Nodal { values } => {
                if values.len() != m.len() {
                    return Err(SolverError::InitialLength { expected: m.len(), got: values.len() });
                }
                values.clone()
            }
        };
        if let Some(v) = u.iter().find(|v| !v.is_finite()) {
            return Err(SolverError::InvalidConfig(format!("initial data is not finite ({v})")));
        }
        Ok(u)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub eps: f64,
    pub t_final: f64,
    pub time_step: TimeStep,
    pub initial: InitialData,
    pub paths: usize,
    /// Snapshot every this many steps; 0 keeps only the initial and final state.
    pub snapshot_every: usize,
    /// Exponents `p ≥ 2` of the tracked `‖u‖_p^p` series.
    pub lp: Vec<f64>,
    pub scheme: FluxScheme,
    /// Keep every state and increment block (needed by the weak residual).
    pub record_trajectory: bool,
    pub kinetic: Option<KineticSpec>,
}

impl SimConfig {
    /// Defaults for everything except the physical constants.
    pub fn new(eps: f64, t_final: f64, time_step: TimeStep, initial: InitialData) -> Self {
        Self {
            eps,
            t_final,
            time_step,
            initial,
            paths: 1,
            snapshot_every: 0,
            lp: vec![2.0],
            scheme: FluxScheme::Rusanov,
            record_trajectory: false,
            kinetic: None,
        }
    }

    fn validate(&self) -> Result<(), SolverError> {
        let bad = |s: String| Err(SolverError::InvalidConfig(s));
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return bad(format!("[solver].t_final must be positive, got {}", self.t_final));
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return bad(format!("[solver].eps must be nonnegative, got {}", self.eps));
        }
        match self.time_step {
            TimeStep::Cfl { theta } if !(theta > 0.0 && theta <= 1.0) => {
                return bad(format!("[solver].theta must lie in (0, 1], got {theta}"));
            }
            TimeStep::Fixed { dt } if !(dt > 0.0 && dt.is_finite()) => {
                return bad(format!("[solver].dt must be positive, got {dt}"));
            }
            _ => {}
        }
        if self.paths == 0 {
            return bad("[solver].paths must be at least 1".into());
        }
        if let Some(p) = self.lp.iter().find(|p| !(**p >= 2.0)) {
            return bad(format!("[solver].lp exponents must be >= 2, got {p}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateField {
    pub t: f64,
    pub u: Vec<f64>,
}

/// Terms of the discrete energy balance of one step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergyTerms {
    /// `‖u^{n+1}‖² − ‖u^n‖²`.
    pub delta: f64,
    /// `2⟨u^n, rhs⟩ Δt`.
    pub drift: f64,
    /// `Σ_k ‖g_k(·, u^n)‖² Δt`.
    pub ito: f64,
    /// `2 Σ_k ⟨u^n, g_k(·, u^n)⟩ ΔB_k`.
    pub martingale: f64,
}

impl EnergyTerms {
    pub fn residual(&self) -> f64 {
        self.delta - (self.drift + self.ito + self.martingale)
    }

    /// Residual with the Itô correction left out.
    pub fn residual_without_ito(&self) -> f64 {
        self.delta - (self.drift + self.martingale)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSeries {
    pub p: f64,
    /// `‖u^n‖_p^p` for `n = 0..=steps`.
    pub norms: Vec<f64>,
    /// `ε Σ_n ∫ |u^n|^{p−2} |∇u^n|²_h dV Δt`.
    pub weighted_dissipation: f64,
}

impl LpSeries {
    pub fn max(&self) -> f64 {
        self.norms.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Every state `u^0..u^N` and the increments of every step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub increments: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathResult {
    pub path_id: u64,
    pub dt: f64,
    pub steps: usize,
    pub initial: Vec<f64>,
    pub snapshots: Vec<StateField>,
    /// `∫ u^n dV` for `n = 0..=steps`.
    pub mean: Vec<f64>,
    pub lp: Vec<LpSeries>,
    /// `ε ∫ |∇u^n|²_h dV Δt` per step.
    pub dissipation: Vec<f64>,
    pub energy: Vec<EnergyTerms>,
    pub trajectory: Option<Trajectory>,
    pub kinetic: Option<KineticMeasure>,
}

impl PathResult {
    pub fn final_state(&self) -> &StateField {
        self.snapshots.last().expect("final snapshot")
    }

    pub fn energy_residual(&self) -> f64 {
        csum(self.energy.iter().map(EnergyTerms::residual))
    }

    pub fn energy_residual_without_ito(&self) -> f64 {
        csum(self.energy.iter().map(EnergyTerms::residual_without_ito))
    }

    pub fn total_dissipation(&self) -> f64 {
        csum(self.dissipation.iter().copied())
    }

    pub fn lp_series(&self, p: f64) -> Option<&LpSeries> {
        self.lp.iter().find(|s| s.p == p)
    }
}

/// Number of steps and the uniform step that lands exactly on `T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepPlan {
    pub steps: usize,
    pub dt: f64,
}

/// A fully specified model: manifold, flux, noise and run settings.
#[derive(Debug, Clone)]
pub struct Problem {
    pub manifold: Manifold,
    pub flux: FluxModel,
    pub noise: NoiseModel,
    pub config: SimConfig,
}

pub fn guard_for(u0: &[f64]) -> f64 {
    GUARD_FACTOR * (1.0 + u0.iter().fold(0.0f64, |m, v| m.max(v.abs())))
}

impl Problem {
    pub fn new(
        manifold: Manifold,
        flux: FluxModel,
        noise: NoiseModel,
        config: SimConfig,
    ) -> Result<Self, SolverError> {
        config.validate()?;
        let p = Self { manifold, flux, noise, config };
        p.initial_state()?;
        p.step_plan()?;
        Ok(p)
    }

    pub fn initial_state(&self) -> Result<Vec<f64>, SolverError> {
        self.config.initial.sample(&self.manifold)
    }

    /// Largest per-node update rates `(hyperbolic, viscous)` of the explicit
    /// scheme for states bounded by `bound`. The hyperbolic rate of node `i`
    /// is `Σ_a (α_{i} + α_{i−e_a}) / (2 |h|^{1/2}_i Δ_a)` with face speeds
    /// `α_f = Σ_j |F_{j,f}| sup_{|ξ|≤bound} |a_j'|`; the viscous one is
    /// `ε Σ_a (c_i + c_{i−e_a}) / (|h|^{1/2}_i Δ_a²)`.
    pub fn stability_rates(&self, bound: f64) -> (f64, f64) {
        let m = &self.manifold;
        let g = &m.grid;
        let speeds: Vec<f64> = self.flux.modes.iter().map(|md| md.profile.max_speed(bound)).collect();
        let mut hyp = 0.0f64;
        let mut visc = 0.0f64;
        for i in 0..g.len() {
            let s = m.metric.sqrt_det[i];
            let mut h = 0.0;
            let mut v = 0.0;
            for a in 0..g.dim() {
                let im = g.minus(i, a);
                let d = g.spacing(a);
                let alpha = |f: usize| -> f64 {
                    self.flux
                        .modes
                        .iter()
                        .zip(&speeds)
                        .map(|(md, sp)| md.field.axes[a][f].abs() * sp)
                        .sum()
                };
                h += (alpha(i) + alpha(im)) / (2.0 * s * d);
                let c = &m.faces[a].conductance;
                v += self.config.eps * (c[i] + c[im]) / (s * d * d);
            }
            hyp = hyp.max(h);
            visc = visc.max(v);
        }
        (hyp, visc)
    }

    /// `Δt = θ · min(1/hyperbolic rate, 1/viscous rate)`, rates taken over
    /// the guarded range. With no transport and no viscosity this is `T`.
    pub fn cfl_dt(&self) -> Result<f64, SolverError> {
        let theta = match self.config.time_step {
            TimeStep::Cfl { theta } => theta,
            TimeStep::Fixed { .. } => 1.0,
        };
        Ok(theta * self.stability_limit()?)
    }

    /// `min(1/hyperbolic rate, 1/viscous rate)`, or `T` if both vanish.
    pub fn stability_limit(&self) -> Result<f64, SolverError> {
        let guard = guard_for(&self.initial_state()?);
        let (h, v) = self.stability_rates(guard);
        let r = h.max(v);
        Ok(if r > 0.0 { 1.0 / r } else { self.config.t_final })
    }

    pub fn step_plan(&self) -> Result<StepPlan, SolverError> {
        let raw = match self.config.time_step {
            TimeStep::Cfl { .. } => self.cfl_dt()?,
            TimeStep::Fixed { dt } => {
                let limit = self.stability_limit()?;
                if dt > limit * (1.0 + 1e-12) {
                    return Err(SolverError::CflViolation { dt, limit });
                }
                dt
            }
        };
        let t = self.config.t_final;
        let steps = ((t / raw) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        Ok(StepPlan { steps, dt: t / steps as f64 })
    }

    /// `out = −div_h F̂(u)` with the configured numerical flux.
    pub fn hyperbolic_rhs_into(&self, u: &[f64], out: &mut [f64]) {
        let m = &self.manifold;
        let g = &m.grid;
        out.fill(0.0);
        let rusanov = self.config.scheme == FluxScheme::Rusanov;
        for axis in 0..g.dim() {
            let inv_d = 1.0 / g.spacing(axis);
            for f in 0..g.len() {
                let r = g.plus(f, axis);
                let (ul, ur) = (u[f], u[r]);
                let mut flux = 0.0;
                for md in &self.flux.modes {
                    let fm = md.field.axes[axis][f];
                    if fm == 0.0 {
                        continue;
                    }
                    flux += 0.5 * fm * (md.profile.value(ul) + md.profile.value(ur));
                    if rusanov {
                        flux -= 0.5 * fm.abs() * md.profile.local_speed(ul, ur) * (ur - ul);
                    }
                }
                out[f] -= flux * inv_d;
                out[r] += flux * inv_d;
            }
        }
        for (o, s) in out.iter_mut().zip(&m.metric.sqrt_det) {
            *o /= s;
        }
    }

    pub fn hyperbolic_rhs(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        self.hyperbolic_rhs_into(u, &mut out);
        out
    }

    /// `ε Δ_h u`.
    pub fn viscous_rhs(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        if self.config.eps > 0.0 {
            self.manifold.laplace_beltrami_into(u, self.config.eps, &mut out);
        }
        out
    }

    /// One Euler–Maruyama step with the given increments; noise coefficients
    /// are evaluated at the pre-step state.
    pub fn em_step(
        &self,
        state: &StateField,
        dt: f64,
        block: &NoiseIncrementBlock,
    ) -> Result<StateField, SolverError> {
        let mut rhs = self.hyperbolic_rhs(&state.u);
        if self.config.eps > 0.0 {
            self.manifold.laplace_beltrami_into(&state.u, self.config.eps, &mut rhs);
        }
        let guard = guard_for(&state.u);
        let mut u = vec![0.0; state.u.len()];
        for (i, out) in u.iter_mut().enumerate() {
            let v = state.u[i];
            let mut noise = 0.0;
            for (k, db) in block.draws.iter().enumerate() {
                noise += self.noise.g(k, i, v) * db;
            }
            *out = v + dt * rhs[i] + noise;
            if !(out.abs() <= guard) {
                return Err(SolverError::BlowUp {
                    step: block.step as usize,
                    node: i,
                    value: *out,
                    guard,
                });
            }
        }
        Ok(StateField { t: state.t + dt, u })
    }

    /// A stepper for one path starting from `u0`.
    pub fn stepper(&self, u0: Vec<f64>, path_id: u64) -> Result<Stepper<'_>, SolverError> {
        if u0.len() != self.manifold.len() {
            return Err(SolverError::InitialLength { expected: self.manifold.len(), got: u0.len() });
        }
        let plan = self.step_plan()?;
        let n = u0.len();
        Ok(Stepper {
            problem: self,
            path_id,
            plan,
            n: 0,
            guard: guard_for(&u0),
            u: u0,
            next: vec![0.0; n],
            rhs: vec![0.0; n],
        })
    }

    pub fn run_path(&self, path_id: u64) -> Result<PathResult, PathError> {
        let u0 = self.initial_state().map_err(|source| PathError { path_id, source })?;
        self.run_path_from(u0, path_id)
    }

    /// Integrates one path from `u0` to `T`, filling every ledger.
    pub fn run_path_from(&self, u0: Vec<f64>, path_id: u64) -> Result<PathResult, PathError> {
        let wrap = |source| PathError { path_id, source };
        let m = &self.manifold;
        let cfg = &self.config;
        let mut st = self.stepper(u0.clone(), path_id).map_err(wrap)?;
        let StepPlan { steps, dt } = st.plan;

        let mut lp: Vec<LpSeries> = cfg
            .lp
            .iter()
            .map(|&p| LpSeries { p, norms: Vec::with_capacity(steps + 1), weighted_dissipation: 0.0 })
            .collect();
        let mut lp_diss: Vec<NeumaierSum> = vec![NeumaierSum::new(); lp.len()];
        let mut mean = Vec::with_capacity(steps + 1);
        let mut dissipation = Vec::with_capacity(steps);
        let mut energy = Vec::with_capacity(steps);
        let mut snapshots = vec![StateField { t: 0.0, u: u0.clone() }];
        let mut trajectory = cfg.record_trajectory.then(|| Trajectory {
            states: vec![u0.clone()],
            increments: Vec::with_capacity(steps),
        });
        let mut kinetic = cfg.kinetic.as_ref().map(|spec| KineticMeasure::new(*spec, m.len()));

        let record = |u: &[f64], lp: &mut Vec<LpSeries>, mean: &mut Vec<f64>| {
            mean.push(m.integrate(u));
            for s in lp.iter_mut() {
                s.norms.push(csum(u.iter().enumerate().map(|(i, v)| v.abs().powf(s.p) * m.weight(i))));
            }
        };
        record(&u0, &mut lp, &mut mean);

        for n in 0..steps {
            if cfg.eps > 0.0 {
                let e = m.grad_energy_density(st.state());
                let mut d = NeumaierSum::new();
                let tb = kinetic.as_ref().map(|k| k.spec.time_bin(n, steps));
                for (i, ei) in e.iter().enumerate() {
                    let mass = cfg.eps * ei * m.weight(i) * dt;
                    d.add(mass);
                    let ui = st.state()[i];
                    for (s, acc) in lp.iter().zip(lp_diss.iter_mut()) {
                        acc.add(ui.abs().powf(s.p - 2.0) * mass);
                    }
                    if let (Some(k), Some(tb)) = (kinetic.as_mut(), tb) {
                        k.deposit(tb, i, ui, mass);
                    }
                }
                dissipation.push(d.value());
            } else {
                dissipation.push(0.0);
            }

            let out = st.step().map_err(wrap)?;
            energy.push(out.energy);
            if let Some(tr) = trajectory.as_mut() {
                tr.states.push(st.state().to_vec());
                tr.increments.push(out.increments);
            }
            record(st.state(), &mut lp, &mut mean);
            let k = n + 1;
            if (cfg.snapshot_every > 0 && k % cfg.snapshot_every == 0) || k == steps {
                snapshots.push(StateField { t: st.time(), u: st.state().to_vec() });
            }
        }
        for (s, acc) in lp.iter_mut().zip(&lp_diss) {
            s.weighted_dissipation = acc.value();
        }

        Ok(PathResult {
            path_id,
            dt,
            steps,
            initial: u0,
            snapshots,
            mean,
            lp,
            dissipation,
            energy,
            trajectory,
            kinetic,
        })
    }

    /// Runs paths `0..paths` in parallel; results are kept in path order.
    pub fn run_ensemble(&self) -> Ensemble {
        let results = par_paths(self.config.paths, |id| self.run_path(id));
        Ensemble::from_results(results)
    }
}

/// Maps `f` over path ids `0..paths` in parallel, preserving order.
pub fn par_paths<T: Send>(paths: usize, f: impl Fn(u64) -> T + Sync + Send) -> Vec<T> {
    (0..paths as u64).into_par_iter().map(f).collect()
}

/// What one step produced besides the new state.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub energy: EnergyTerms,
    pub increments: Vec<f64>,
}

/// Sequential integrator of one path; two steppers with the same path id
/// consume identical noise.
#[derive(Debug)]
pub struct Stepper<'a> {
    problem: &'a Problem,
    path_id: u64,
    pub plan: StepPlan,
    n: usize,
    guard: f64,
    u: Vec<f64>,
    next: Vec<f64>,
    rhs: Vec<f64>,
}

impl Stepper<'_> {
    pub fn state(&self) -> &[f64] {
        &self.u
    }

    pub fn step_index(&self) -> usize {
        self.n
    }

    pub fn time(&self) -> f64 {
        self.n as f64 * self.plan.dt
    }

    pub fn is_done(&self) -> bool {
        self.n >= self.plan.steps
    }

    pub fn step(&mut self) -> Result<StepOutput, SolverError> {
        let p = self.problem;
        let m = &p.manifold;
        let dt = self.plan.dt;
        p.hyperbolic_rhs_into(&self.u, &mut self.rhs);
        if p.config.eps > 0.0 {
            m.laplace_beltrami_into(&self.u, p.config.eps, &mut self.rhs);
        }
        let draws = if p.noise.is_empty() {
            Vec::new()
        } else {
            p.noise.sample_increments(self.path_id, self.n as u64, dt)?.draws
        };

        let mut drift = NeumaierSum::new();
        let mut ito = NeumaierSum::new();
        let mut mart = NeumaierSum::new();
        for i in 0..self.u.len() {
            let v = self.u[i];
            let w = m.weight(i);
            let mut noise = 0.0;
            for (k, db) in draws.iter().enumerate() {
                let gk = p.noise.g(k, i, v);
                noise += gk * db;
                ito.add(gk * gk * w * dt);
                mart.add(2.0 * v * gk * db * w);
            }
            drift.add(2.0 * v * self.rhs[i] * w * dt);
            let nv = v + dt * self.rhs[i] + noise;
            if !(nv.abs() <= self.guard) {
                return Err(SolverError::BlowUp { step: self.n, node: i, value: nv, guard: self.guard });
            }
            self.next[i] = nv;
        }
        let delta = m.inner(&self.next, &self.next) - m.inner(&self.u, &self.u);
        std::mem::swap(&mut self.u, &mut self.next);
        self.n += 1;
        Ok(StepOutput {
            energy: EnergyTerms { delta, drift: drift.value(), ito: ito.value(), martingale: mart.value() },
            increments: draws,
        })
    }
}

/// Completed paths in path-id order plus the aborted ones.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub paths: Vec<PathResult>,
    pub aborted: Vec<PathError>,
}

/// Ensemble means and standard errors of the standard functionals.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub completed: usize,
    pub aborted: usize,
    pub partial: bool,
    /// `∫u(T)dV − ∫u₀dV`.
    pub mean_drift: MeanStderr,
    pub energy_residual: MeanStderr,
    pub dissipation: MeanStderr,
    /// `max_n ‖u^n‖_p^p` per tracked `p`.
    pub lp_max: Vec<(f64, MeanStderr)>,
}

impl Ensemble {
    pub fn from_results(results: Vec<Result<PathResult, PathError>>) -> Self {
        let mut paths = Vec::new();
        let mut aborted = Vec::new();
        for r in results {
            match r {
                Ok(p) => paths.push(p),
                Err(e) => aborted.push(e),
            }
        }
        Self { paths, aborted }
    }

    pub fn is_partial(&self) -> bool {
        !self.aborted.is_empty()
    }

    /// Mean and standard error of a per-path functional.
    pub fn functional(&self, f: impl Fn(&PathResult) -> f64) -> MeanStderr {
        let xs: Vec<f64> = self.paths.iter().map(f).collect();
        MeanStderr::from_samples(&xs)
    }

    pub fn stats(&self) -> EnsembleStats {
        let lp_max = self
            .paths
            .first()
            .map(|p| p.lp.iter().map(|s| s.p).collect::<Vec<_>>())
            .unwrap_or_default()
            .into_iter()
            .map(|p| (p, self.functional(|r| r.lp_series(p).map_or(f64::NAN, LpSeries::max))))
            .collect();
        EnsembleStats {
            completed: self.paths.len(),
            aborted: self.aborted.len(),
            partial: self.is_partial(),
            mean_drift: self.functional(|r| r.mean[r.steps] - r.mean[0]),
            energy_residual: self.functional(PathResult::energy_residual),
            dissipation: self.functional(PathResult::total_dissipation),
            lp_max,
        }
    }
}

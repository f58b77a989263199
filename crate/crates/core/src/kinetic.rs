//! Kinetic diagnostics: `ρ = 𝕀_{u>ξ}`, the binned dissipation measure
//! `m = ε|∇u|²_h δ_{u=ξ}`, Young-measure moments, the contraction functional
//! and the weak-form residual of the kinetic equation along a stored path.

use std::collections::BTreeMap;
use std::io::{self, Write};

use thiserror::Error;

use crate::geometry::Manifold;
use crate::solver::{PathResult, Problem};
use crate::stats::{csum, NeumaierSum};

pub const MIN_XI_BINS: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KineticError {
    #[error("kinetic: ξ-grid needs ξ_min < ξ_max and at least {MIN_XI_BINS} bins, got [{min}, {max}] with {bins}")]
    BadGrid { min: f64, max: f64, bins: usize },
    #[error("kinetic: path {0} was run without recording its trajectory and kinetic measure")]
    NotRecorded(u64),
    #[error("kinetic: test function support {what} = [{lo}, {hi}] exceeds [{min}, {max}]")]
    Support { what: &'static str, lo: f64, hi: f64, min: f64, max: f64 },
    #[error("kinetic: test function has {got} spatial factors, manifold dimension is {expected}")]
    SpaceFactors { expected: usize, got: usize },
    #[error("kinetic: cannot merge measures on different grids")]
    Mismatch,
}

/// Uniform bins `[ξ_min + bΔξ, ξ_min + (b+1)Δξ)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XiGrid {
    pub min: f64,
    pub max: f64,
    pub bins: usize,
}

impl XiGrid {
    pub fn new(min: f64, max: f64, bins: usize) -> Result<Self, KineticError> {
        if !(min < max && min.is_finite() && max.is_finite()) || bins < MIN_XI_BINS || bins > u32::MAX as usize {
            return Err(KineticError::BadGrid { min, max, bins });
        }
        Ok(Self { min, max, bins })
    }

    /// Symmetric grid `[−bound, bound]` with bin width at most `width`.
    pub fn symmetric(bound: f64, width: f64) -> Result<Self, KineticError> {
        let bins = ((2.0 * bound / width) * (1.0 - 1e-12)).ceil().max(MIN_XI_BINS as f64) as usize;
        Self::new(-bound, bound, bins)
    }

    pub fn width(&self) -> f64 {
        (self.max - self.min) / self.bins as f64
    }

    pub fn center(&self, b: usize) -> f64 {
        self.min + (b as f64 + 0.5) * self.width()
    }

    pub fn edge(&self, b: usize) -> f64 {
        self.min + b as f64 * self.width()
    }

    /// Bin containing `xi`, or `None` outside `[ξ_min, ξ_max)`.
    pub fn bin_of(&self, xi: f64) -> Option<usize> {
        if !(xi >= self.min && xi < self.max) {
            return None;
        }
        Some((((xi - self.min) / self.width()) as usize).min(self.bins - 1))
    }

    /// Number of bin centers strictly below `v`.
    pub fn centers_below(&self, v: f64) -> usize {
        let k = ((v - self.min) / self.width() - 0.5).ceil();
        k.clamp(0.0, self.bins as f64) as usize
    }
}

/// Binning of the kinetic measure.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KineticSpec {
    pub xi: XiGrid,
    /// Number of time bins; 0 means one bin per step.
    pub time_bins: usize,
}

impl KineticSpec {
    pub fn time_bin(&self, n: usize, steps: usize) -> usize {
        if self.time_bins == 0 {
            n
        } else {
            n * self.time_bins / steps.max(1)
        }
    }

    pub fn time_bin_count(&self, steps: usize) -> usize {
        if self.time_bins == 0 {
            steps
        } else {
            self.time_bins
        }
    }
}

/// `ρ(x_i, ξ_b)` at bin centers, stored node-major.
#[derive(Debug, Clone, PartialEq)]
pub struct KineticData {
    pub xi: XiGrid,
    pub nodes: usize,
    rho: Vec<u8>,
}

impl KineticData {
    pub fn get(&self, node: usize, b: usize) -> u8 {
        self.rho[node * self.xi.bins + b]
    }

    pub fn row(&self, node: usize) -> &[u8] {
        &self.rho[node * self.xi.bins..(node + 1) * self.xi.bins]
    }
}

/// Exact indicator `𝕀_{u(x)>ξ}` at the bin centers.
pub fn kinetic_function(u: &[f64], xi: &XiGrid) -> KineticData {
    let mut rho = vec![0u8; u.len() * xi.bins];
    for (i, &v) in u.iter().enumerate() {
        let row = &mut rho[i * xi.bins..(i + 1) * xi.bins];
        for (b, r) in row.iter_mut().enumerate() {
            *r = u8::from(v > xi.center(b));
        }
    }
    KineticData { xi: *xi, nodes: u.len(), rho }
}

/// Sparse histogram of deposited dissipation mass over
/// `(time bin, node, ξ bin)`, with an overflow bin for values off the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct KineticMeasure {
    pub spec: KineticSpec,
    pub nodes: usize,
    cells: BTreeMap<(u32, u32, u32), f64>,
    pub overflow_mass: f64,
    pub overflow_count: u64,
}

impl KineticMeasure {
    pub fn new(spec: KineticSpec, nodes: usize) -> Self {
        Self { spec, nodes, cells: BTreeMap::new(), overflow_mass: 0.0, overflow_count: 0 }
    }

    pub fn deposit(&mut self, t_bin: usize, node: usize, xi: f64, mass: f64) {
        debug_assert!(mass >= 0.0);
        match self.spec.xi.bin_of(xi) {
            Some(b) => {
                if mass > 0.0 {
                    *self.cells.entry((t_bin as u32, node as u32, b as u32)).or_insert(0.0) += mass;
                }
            }
            None => {
                self.overflow_mass += mass;
                self.overflow_count += 1;
            }
        }
    }

    /// Sum of all in-grid entries plus the overflow mass.
    pub fn total_mass(&self) -> f64 {
        csum(self.cells.values().copied()) + self.overflow_mass
    }

    /// `∫ |ξ|^q dm` with `ξ` at bin centers (overflow excluded).
    pub fn moment(&self, q: f64) -> f64 {
        let xi = &self.spec.xi;
        csum(self.cells.iter().map(|(&(_, _, b), m)| m * xi.center(b as usize).abs().powf(q)))
    }

    /// Mass in bins whose center satisfies `|ξ| > bound`.
    pub fn mass_beyond(&self, bound: f64) -> f64 {
        let xi = &self.spec.xi;
        csum(
            self.cells
                .iter()
                .filter(|(&(_, _, b), _)| xi.center(b as usize).abs() > bound)
                .map(|(_, m)| *m),
        ) + self.overflow_mass
    }

    /// `Σ mass · ψ(time bin, node, ξ center)`.
    pub fn integrate(&self, psi: impl Fn(usize, usize, f64) -> f64) -> f64 {
        let xi = &self.spec.xi;
        csum(
            self.cells
                .iter()
                .map(|(&(t, x, b), m)| m * psi(t as usize, x as usize, xi.center(b as usize))),
        )
    }

    pub fn entries(&self) -> impl Iterator<Item = ((usize, usize, usize), f64)> + '_ {
        self.cells.iter().map(|(&(t, x, b), &m)| ((t as usize, x as usize, b as usize), m))
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty() && self.overflow_count == 0
    }

    /// Entrywise addition.
    pub fn merge(&mut self, other: &KineticMeasure) -> Result<(), KineticError> {
        if self.spec != other.spec || self.nodes != other.nodes {
            return Err(KineticError::Mismatch);
        }
        for (k, v) in &other.cells {
            *self.cells.entry(*k).or_insert(0.0) += v;
        }
        self.overflow_mass += other.overflow_mass;
        self.overflow_count += other.overflow_count;
        Ok(())
    }

    /// CSV with columns `t_bin,x_index,xi_bin,mass`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t_bin,x_index,xi_bin,mass")?;
        for ((t, x, b), m) in self.entries() {
            writeln!(w, "{t},{x},{b},{m:e}")?;
        }
        Ok(())
    }
}

/// The measure of a recorded path.
pub fn accumulate_kinetic_measure(path: &PathResult) -> Result<&KineticMeasure, KineticError> {
    path.kinetic.as_ref().ok_or(KineticError::NotRecorded(path.path_id))
}

/// `∫ |u|^p dV` (Dirac Young measure).
pub fn young_moment(m: &Manifold, u: &[f64], p: f64) -> f64 {
    csum(u.iter().enumerate().map(|(i, v)| v.abs().powf(p) * m.weight(i)))
}

/// The same moment with `δ_u` replaced by the unit mass at the switching
/// edge of the binned `ρ`, i.e. `ξ_min + Δξ · #{b : ρ_b = 1}`.
pub fn young_moment_binned(m: &Manifold, u: &[f64], xi: &XiGrid, p: f64) -> f64 {
    csum(u.iter().enumerate().map(|(i, &v)| {
        let edge = xi.edge(xi.centers_below(v));
        edge.abs().powf(p) * m.weight(i)
    }))
}

/// `∫|u₁ − u₂| dV` directly and through `4 ∫∫ (ρ̄ − ρ̄²) dξ dV` with
/// `ρ̄ = ½(ρ₁ + ρ₂)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionValue {
    pub direct: f64,
    pub kinetic: f64,
}

pub fn contraction_functional(m: &Manifold, u1: &[f64], u2: &[f64], xi: &XiGrid) -> ContractionValue {
    let direct = csum(u1.iter().zip(u2).enumerate().map(|(i, (a, b))| (a - b).abs() * m.weight(i)));
    let dxi = xi.width();
    let mut kin = NeumaierSum::new();
    for (i, (&a, &b)) in u1.iter().zip(u2).enumerate() {
        // outside this window ρ₁ = ρ₂ and ρ̄ − ρ̄² vanishes
        let lo = xi.centers_below(a.min(b)).saturating_sub(1);
        let hi = (xi.centers_below(a.max(b)) + 1).min(xi.bins);
        let mut s = 0.0;
        for bin in lo..hi {
            let c = xi.center(bin);
            let r = 0.5 * (f64::from(u8::from(a > c)) + f64::from(u8::from(b > c)));
            s += r - r * r;
        }
        kin.add(4.0 * s * dxi * m.weight(i));
    }
    ContractionValue { direct, kinetic: kin.value() }
}

/// `exp(−1/(1 − r²))` with `r = (s − center)/radius`, zero for `|r| ≥ 1`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bump {
    pub center: f64,
    pub radius: f64,
}

impl Bump {
    pub fn value(&self, s: f64) -> f64 {
        let r = (s - self.center) / self.radius;
        if r.abs() >= 1.0 {
            0.0
        } else {
            (-1.0 / (1.0 - r * r)).exp()
        }
    }

    pub fn derivative(&self, s: f64) -> f64 {
        let r = (s - self.center) / self.radius;
        if r.abs() >= 1.0 {
            return 0.0;
        }
        let q = 1.0 - r * r;
        (-1.0 / q).exp() * (-2.0 * r / (q * q)) / self.radius
    }

    pub fn support(&self) -> (f64, f64) {
        (self.center - self.radius, self.center + self.radius)
    }

    /// Value of the periodic extension on `[0, 2π)`.
    fn periodic(&self, x: f64) -> f64 {
        let p = crate::geometry::PERIOD;
        let d = (x - self.center).rem_euclid(p);
        let d = if d > 0.5 * p { d - p } else { d };
        self.value(self.center + d)
    }
}

/// Spatial factor along one chart axis.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpaceFactor {
    One,
    Bump { center: f64, radius: f64 },
}

/// Separable test function `ψ = A φ_t(t) Π_a θ_a(x^a) φ_ξ(ξ)`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestFunction {
    pub amplitude: f64,
    pub time: Bump,
    pub space: Vec<SpaceFactor>,
    pub xi: Bump,
}

impl TestFunction {
    fn theta(&self, m: &Manifold) -> Vec<f64> {
        m.sample(|x| {
            self.space
                .iter()
                .enumerate()
                .map(|(a, f)| match f {
                    SpaceFactor::One => 1.0,
                    SpaceFactor::Bump { center, radius } => {
                        Bump { center: *center, radius: *radius }.periodic(x[a])
                    }
                })
                .product::<f64>()
        })
    }
}

/// `v ↦ ∫_0^v w(ξ) dξ` from a midpoint rule on the ξ-grid bins, linear
/// between bin edges, constant outside the support of `w`.
struct CumTable {
    first_edge: usize,
    values: Vec<f64>,
    width: f64,
    origin: f64,
    zero: f64,
}

impl CumTable {
    fn new(xi: &XiGrid, lo: f64, hi: f64, w: impl Fn(f64) -> f64) -> Self {
        let first = xi.bin_of(lo).unwrap_or(0);
        let last = xi.bin_of(hi).unwrap_or(xi.bins - 1);
        let mut values = Vec::with_capacity(last - first + 2);
        let mut acc = NeumaierSum::new();
        values.push(0.0);
        for b in first..=last {
            acc.add(w(xi.center(b)) * xi.width());
            values.push(acc.value());
        }
        let mut t = Self { first_edge: first, values, width: xi.width(), origin: xi.min, zero: 0.0 };
        t.zero = t.raw(0.0);
        t
    }

    fn raw(&self, v: f64) -> f64 {
        let s = (v - self.origin) / self.width - self.first_edge as f64;
        let n = self.values.len() - 1;
        if s <= 0.0 {
            return self.values[0];
        }
        if s >= n as f64 {
            return self.values[n];
        }
        let k = s.floor() as usize;
        let f = s - k as f64;
        self.values[k] + f * (self.values[k + 1] - self.values[k])
    }

    fn eval(&self, v: f64) -> f64 {
        self.raw(v) - self.zero
    }
}

/// Terms of the weak kinetic identity for one path. With `P(v) = ∫_0^v φ_ξ`
/// and `Q_j(v) = ∫_0^v φ_ξ a_j'`:
///
/// * `time = ∫ φ_t' ∫ θ P(u) dV dt`
/// * `initial = φ_t(0) ∫ θ P(u₀) dV`
/// * `flux = ∫ φ_t Σ_j ∫ Q_j(u) V_j·∇θ dV dt`
/// * `viscous = ε ∫ φ_t ∫ P(u) Δ_h θ dV dt`
/// * `measure = ∫ φ_t θ φ_ξ' dm`
/// * `ito = ½ ∫ φ_t ∫ θ φ_ξ'(u) G²(x, u) dV dt`
/// * `stochastic = Σ_k ∫ φ_t ∫ θ φ_ξ(u) g_k(x, u) dV dβ_k`
///
/// and the residual is `time + initial + flux + viscous − measure + ito + stochastic`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WeakResidual {
    pub time: f64,
    pub initial: f64,
    pub flux: f64,
    pub viscous: f64,
    pub measure: f64,
    pub ito: f64,
    pub stochastic: f64,
}

impl WeakResidual {
    pub fn total(&self) -> f64 {
        self.time + self.initial + self.flux + self.viscous - self.measure + self.ito + self.stochastic
    }

    pub fn total_without_ito(&self) -> f64 {
        self.total() - self.ito
    }
}

/// Evaluates the weak kinetic identity along a recorded path. Deterministic
/// time integrals use the trapezoidal rule on the step grid, the measure term
/// uses bin midpoints, and the stochastic integral uses left endpoints.
pub fn weak_residual(
    problem: &Problem,
    path: &PathResult,
    psi: &TestFunction,
) -> Result<WeakResidual, KineticError> {
    let m = &problem.manifold;
    let g = &m.grid;
    let (Some(traj), Some(measure)) = (path.trajectory.as_ref(), path.kinetic.as_ref()) else {
        return Err(KineticError::NotRecorded(path.path_id));
    };
    if psi.space.len() != m.dim() {
        return Err(KineticError::SpaceFactors { expected: m.dim(), got: psi.space.len() });
    }
    let xi = &measure.spec.xi;
    let (lo, hi) = psi.xi.support();
    if lo < xi.min || hi > xi.max {
        return Err(KineticError::Support { what: "xi", lo, hi, min: xi.min, max: xi.max });
    }
    let t_final = path.dt * path.steps as f64;
    let (tlo, thi) = psi.time.support();
    if thi > t_final * (1.0 + 1e-12) {
        return Err(KineticError::Support { what: "t", lo: tlo, hi: thi, min: 0.0, max: t_final });
    }
    if psi.amplitude == 0.0 {
        return Ok(WeakResidual::default());
    }

    let a = psi.amplitude;
    let theta = psi.theta(m);
    let lap_theta = m.laplace_beltrami(&theta);
    let ptab = CumTable::new(xi, lo, hi, |s| psi.xi.value(s));
    let qtabs: Vec<CumTable> = problem
        .flux
        .modes
        .iter()
        .map(|md| CumTable::new(xi, lo, hi, |s| psi.xi.value(s) * md.profile.derivative(s)))
        .collect();
    let eps = problem.config.eps;
    let noise = &problem.noise;

    // spatial integrands at each time node
    let det = |u: &[f64]| -> (f64, f64, f64, f64) {
        let mut p_theta = NeumaierSum::new();
        let mut visc = NeumaierSum::new();
        let mut ito = NeumaierSum::new();
        for (i, &v) in u.iter().enumerate() {
            let w = m.weight(i);
            let p = ptab.eval(v);
            p_theta.add(theta[i] * p * w);
            visc.add(eps * p * lap_theta[i] * w);
            if !noise.is_empty() && theta[i] != 0.0 {
                ito.add(0.5 * theta[i] * psi.xi.derivative(v) * noise.g2_eval(i, v) * w);
            }
        }
        let mut flux = NeumaierSum::new();
        for (j, md) in problem.flux.modes.iter().enumerate() {
            for (axis, f) in md.field.axes.iter().enumerate() {
                let inv_d = 1.0 / g.spacing(axis);
                for face in 0..g.len() {
                    let r = g.plus(face, axis);
                    let dth = theta[r] - theta[face];
                    if f[face] == 0.0 || dth == 0.0 {
                        continue;
                    }
                    let q = 0.5 * (qtabs[j].eval(u[face]) + qtabs[j].eval(u[r]));
                    flux.add(f[face] * q * dth * inv_d * g.cell_volume());
                }
            }
        }
        (p_theta.value(), flux.value(), visc.value(), ito.value())
    };

    let dt = path.dt;
    let phi = |n: usize| psi.time.value(n as f64 * dt);
    let mut out = WeakResidual::default();
    let mut time = NeumaierSum::new();
    let mut flux = NeumaierSum::new();
    let mut visc = NeumaierSum::new();
    let mut ito = NeumaierSum::new();
    let mut stoch = NeumaierSum::new();
    let mut prev = det(&traj.states[0]);
    out.initial = a * phi(0) * prev.0;
    for n in 0..path.steps {
        let cur = det(&traj.states[n + 1]);
        let (p0, p1) = (phi(n), phi(n + 1));
        time.add((p1 - p0) * 0.5 * (prev.0 + cur.0));
        flux.add(0.5 * dt * (p0 * prev.1 + p1 * cur.1));
        visc.add(0.5 * dt * (p0 * prev.2 + p1 * cur.2));
        ito.add(0.5 * dt * (p0 * prev.3 + p1 * cur.3));
        if p0 != 0.0 {
            let u = &traj.states[n];
            for (k, db) in traj.increments[n].iter().enumerate() {
                let mut s = NeumaierSum::new();
                for (i, &v) in u.iter().enumerate() {
                    if theta[i] != 0.0 {
                        s.add(theta[i] * psi.xi.value(v) * noise.g(k, i, v) * m.weight(i));
                    }
                }
                stoch.add(p0 * s.value() * db);
            }
        }
        prev = cur;
    }
    let nb = measure.spec.time_bin_count(path.steps);
    let bin_dt = t_final / nb as f64;
    out.measure = a * measure.integrate(|t, x, c| {
        psi.time.value((t as f64 + 0.5) * bin_dt) * theta[x] * psi.xi.derivative(c)
    });
    out.time = a * time.value();
    out.flux = a * flux.value();
    out.viscous = a * visc.value();
    out.ito = a * ito.value();
    out.stochastic = a * stoch.value();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flux::{FluxModel, FluxProfile, StreamFunction};
    use crate::geometry::{build_manifold, ManifoldSpec};
    use crate::noise::NoiseModel;
    use crate::solver::{InitialData, SimConfig, TimeStep};

    fn circle(n: usize) -> Manifold {
        build_manifold(&ManifoldSpec::circle(n, 0.0)).unwrap()
    }

    fn wavy(n: usize) -> Vec<f64> {
        (0..n).map(|i| 1.7 * (0.37 * i as f64).sin() + 0.3 * (1.9 * i as f64).cos()).collect()
    }

    #[test]
    fn grid_rejects_degenerate_ranges() {
        assert!(XiGrid::new(1.0, 1.0, 32).is_err());
        assert!(XiGrid::new(-1.0, 1.0, 8).is_err());
        let g = XiGrid::symmetric(3.0, 0.1).unwrap();
        assert_eq!(g.bins, 60);
        assert!((g.width() - 0.1).abs() < 1e-15);
        assert_eq!(g.bin_of(3.0), None);
        assert_eq!(g.bin_of(-3.0), Some(0));
    }

    #[test]
    fn kinetic_function_of_zero_is_negative_half_line() {
        let xi = XiGrid::new(-1.0, 1.0, 20).unwrap();
        let k = kinetic_function(&[0.0; 4], &xi);
        for b in 0..20 {
            assert_eq!(k.get(2, b), u8::from(0.0 > xi.center(b)));
        }
    }

    #[test]
    fn indicator_is_idempotent_monotone_and_rigid() {
        let xi = XiGrid::new(-3.0, 3.0, 120).unwrap();
        let k = kinetic_function(&wavy(50), &xi);
        for i in 0..50 {
            let row = k.row(i);
            assert!(row.iter().all(|&r| r * r == r));
            assert!(row.windows(2).all(|w| w[1] <= w[0]));
            assert_eq!(row[0], 1);
            assert_eq!(row[119], 0);
            // ∫(ρ − ρ²)dξ vanishes for an indicator
            assert_eq!(row.iter().map(|&r| r - r * r).sum::<u8>(), 0);
        }
    }

    #[test]
    fn chi_integral_recovers_u() {
        let xi = XiGrid::new(-3.0, 3.0, 600).unwrap();
        let u = wavy(64);
        let k = kinetic_function(&u, &xi);
        for (i, &v) in u.iter().enumerate() {
            let chi: f64 = (0..xi.bins)
                .map(|b| (f64::from(k.get(i, b)) - f64::from(u8::from(0.0 > xi.center(b)))) * xi.width())
                .sum();
            assert!((chi - v).abs() <= xi.width());
        }
    }

    #[test]
    fn young_moments() {
        let m = circle(32);
        assert!((young_moment(&m, &vec![-1.5; 32], 3.0) - 1.5f64.powi(3)).abs() < 1e-14);
        let u = wavy(32);
        assert!((young_moment(&m, &u, 2.0) - m.inner(&u, &u)).abs() < 1e-14);
        let xi = XiGrid::new(-4.0, 4.0, 800).unwrap();
        for p in [1.0, 2.0, 3.0] {
            let umax = 2.0f64;
            let bound = p * umax.powf(p - 1.0) * xi.width();
            let err = (young_moment_binned(&m, &u, &xi, p) - young_moment(&m, &u, p)).abs();
            assert!(err <= bound, "p = {p}: {err} > {bound}");
        }
    }

    #[test]
    fn contraction_routes_agree() {
        let m = circle(64);
        let xi = XiGrid::new(-4.0, 4.0, 400).unwrap();
        let u = wavy(64);
        let same = contraction_functional(&m, &u, &u, &xi);
        assert_eq!(same.direct, 0.0);
        assert_eq!(same.kinetic, 0.0);
        let c = contraction_functional(&m, &vec![1.0; 64], &vec![0.0; 64], &xi);
        assert!((c.direct - 1.0).abs() < 1e-14);
        assert!((c.kinetic - 1.0).abs() <= xi.width());
        let v: Vec<f64> = u.iter().map(|x| 0.5 * x - 0.3).collect();
        let c = contraction_functional(&m, &u, &v, &xi);
        assert!((c.direct - c.kinetic).abs() <= xi.width());
    }

    #[test]
    fn measure_accounting_and_overflow() {
        let spec = KineticSpec { xi: XiGrid::new(-1.0, 1.0, 16).unwrap(), time_bins: 0 };
        let mut a = KineticMeasure::new(spec, 4);
        a.deposit(0, 1, 0.3, 0.25);
        a.deposit(0, 1, 0.31, 0.5);
        a.deposit(2, 3, -0.9, 1.0);
        assert_eq!(a.overflow_count, 0);
        assert!((a.total_mass() - 1.75).abs() < 1e-15);
        assert_eq!(a.entries().count(), 2);
        let mut b = KineticMeasure::new(spec, 4);
        b.deposit(0, 1, 5.0, 0.125);
        assert_eq!(b.overflow_count, 1);
        a.merge(&b).unwrap();
        assert!((a.total_mass() - 1.875).abs() < 1e-15);
        assert!((a.mass_beyond(0.95) - 0.125).abs() < 1e-15);
        let mut csv = Vec::new();
        a.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("t_bin,x_index,xi_bin,mass\n0,1,"));
        let other = KineticMeasure::new(KineticSpec { time_bins: 3, ..spec }, 4);
        assert_eq!(a.merge(&other), Err(KineticError::Mismatch));
    }

    fn heat_problem(eps: f64, record: bool) -> Problem {
        let m = circle(64);
        let mut cfg = SimConfig::new(
            eps,
            0.2,
            TimeStep::Cfl { theta: 0.5 },
            InitialData::Harmonic { offset: 0.0, amplitude: 1.0, k: [1, 0], phase: 0.0 },
        );
        cfg.kinetic = Some(KineticSpec { xi: XiGrid::symmetric(2002.0, 0.05).unwrap(), time_bins: 0 });
        cfg.record_trajectory = record;
        Problem::new(m.clone(), FluxModel::zero(&m), NoiseModel::none(0), cfg).unwrap()
    }

    #[test]
    fn heat_flow_mass_is_energy_drop() {
        let p = heat_problem(0.01, false);
        let r = p.run_path(0).unwrap();
        let km = accumulate_kinetic_measure(&r).unwrap();
        let mass = km.total_mass();
        assert!((mass - r.total_dissipation()).abs() <= 1e-12 * mass.max(1e-300));
        assert_eq!(km.overflow_count, 0);
        let l2 = &r.lp[0].norms;
        let drop = 0.5 * (l2[0] - l2[r.steps]);
        let bound: f64 = r.energy.iter().map(|e| e.residual().abs()).sum();
        assert!((mass - drop).abs() <= bound + 1e-15, "{mass} vs {drop}");
        // bins beyond |ξ| > N carry less mass as N grows
        let tail: Vec<f64> = [0.0, 0.5, 0.9, 1.1].iter().map(|&b| km.mass_beyond(b)).collect();
        assert!(tail.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(tail[3], 0.0);
    }

    #[test]
    fn inviscid_runs_deposit_nothing() {
        let r = heat_problem(0.0, false).run_path(0).unwrap();
        assert!(r.kinetic.unwrap().is_empty());
    }

    fn psi(xi: Bump) -> TestFunction {
        TestFunction {
            amplitude: 1.0,
            time: Bump { center: 0.05, radius: 0.12 },
            space: vec![SpaceFactor::Bump { center: 1.0, radius: 1.5 }],
            xi,
        }
    }

    #[test]
    fn zero_test_function_gives_zero() {
        let p = heat_problem(0.01, true);
        let r = p.run_path(0).unwrap();
        let z = TestFunction { amplitude: 0.0, ..psi(Bump { center: 0.0, radius: 0.5 }) };
        assert_eq!(weak_residual(&p, &r, &z).unwrap(), WeakResidual::default());
    }

    #[test]
    fn xi_support_away_from_u_and_zero_gives_zero_terms() {
        let p = heat_problem(0.01, true);
        let r = p.run_path(0).unwrap();
        for b in [Bump { center: 3.0, radius: 1.0 }, Bump { center: -3.0, radius: 1.0 }] {
            let w = weak_residual(&p, &r, &psi(b)).unwrap();
            assert_eq!(w, WeakResidual::default(), "{b:?}");
        }
    }

    #[test]
    fn residual_requires_recording_and_valid_support() {
        let p = heat_problem(0.01, false);
        let r = p.run_path(0).unwrap();
        let f = psi(Bump { center: 0.0, radius: 0.5 });
        assert_eq!(weak_residual(&p, &r, &f), Err(KineticError::NotRecorded(0)));
        let p = heat_problem(0.01, true);
        let r = p.run_path(0).unwrap();
        let late = TestFunction { time: Bump { center: 0.2, radius: 0.1 }, ..f.clone() };
        assert!(matches!(weak_residual(&p, &r, &late), Err(KineticError::Support { what: "t", .. })));
        let wide = psi(Bump { center: 0.0, radius: 5000.0 });
        assert!(matches!(weak_residual(&p, &r, &wide), Err(KineticError::Support { what: "xi", .. })));
    }

    #[test]
    fn deterministic_weak_residual_is_small_for_smooth_heat_flow() {
        let p = heat_problem(0.01, true);
        let r = p.run_path(0).unwrap();
        let w = weak_residual(&p, &r, &psi(Bump { center: 0.2, radius: 0.6 })).unwrap();
        let scale = w.time.abs() + w.initial.abs() + w.viscous.abs() + w.measure.abs();
        assert!(scale > 1e-3);
        assert!(w.total().abs() <= 1e-2 * scale, "{w:?}");
        assert_eq!(w.stochastic, 0.0);
        assert_eq!(w.ito, 0.0);
    }

    #[test]
    fn transport_weak_residual_balances() {
        let m = circle(128);
        let s = m.metric.sqrt_det[0];
        let f = FluxModel::from_streams(
            &m,
            vec![(FluxProfile::BurgersLinearized { l: 4.0 }, StreamFunction::Constant(s))],
        )
        .unwrap();
        let mut cfg = SimConfig::new(
            0.005,
            0.2,
            TimeStep::Cfl { theta: 0.5 },
            InitialData::Harmonic { offset: 0.0, amplitude: 1.0, k: [1, 0], phase: 0.0 },
        );
        cfg.kinetic = Some(KineticSpec { xi: XiGrid::symmetric(2002.0, 0.05).unwrap(), time_bins: 0 });
        cfg.record_trajectory = true;
        let p = Problem::new(m, f, NoiseModel::none(0), cfg).unwrap();
        let r = p.run_path(0).unwrap();
        let w = weak_residual(&p, &r, &psi(Bump { center: 0.3, radius: 0.6 })).unwrap();
        let scale = w.time.abs() + w.initial.abs() + w.flux.abs() + w.viscous.abs() + w.measure.abs();
        assert!(w.flux.abs() > 1e-2 * scale);
        assert!(w.total().abs() <= 1e-2 * scale, "{w:?}");
    }
}

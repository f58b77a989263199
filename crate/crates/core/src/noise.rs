//! Truncated cylindrical Wiener noise with coefficients
//! `g_k(x, ξ) = c_k σ_k(x) φ_k(ξ)`.
//!
//! Brownian increments are drawn from a counter-based generator: the draw for
//! mode `k` at step `n` of path `p` depends only on `(seed, p, n, k)`. Two runs
//! with the same seed and path id therefore see identical noise regardless of
//! scheduling, which is what the common-noise experiments rely on.

use std::f64::consts::PI;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::geometry::Manifold;
use crate::stats::NeumaierSum;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoiseError {
    #[error("noise: mode index {k} out of range (model has {modes} modes)")]
    ModeOutOfRange { k: usize, modes: usize },
    #[error("noise: time step must be positive, got {0}")]
    BadTimeStep(f64),
    #[error("noise: clip level must be positive, got {0}")]
    BadClip(f64),
    #[error("noise: spatial profile uses axis {axis} on a {dim}-dimensional chart")]
    BadAxis { axis: usize, dim: usize },
}

/// ξ-dependence `φ(ξ)` of a mode.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum XiProfile {
    /// `φ ≡ 1` (additive noise).
    Constant,
    /// `φ(ξ) = ξ`.
    Linear,
    /// `φ(ξ) = clamp(ξ, −clip, clip)`: linear on the working range and bounded,
    /// so x-dependent modes keep a finite Lipschitz constant.
    LinearClipped { clip: f64 },
    /// `φ(ξ) = ξ²`; violates the linear growth bound (negative control).
    Quadratic,
}

impl XiProfile {
    #[inline]
    pub fn value(&self, xi: f64) -> f64 {
        match self {
            XiProfile::Constant => 1.0,
            XiProfile::Linear => xi,
            XiProfile::LinearClipped { clip } => xi.clamp(-clip, *clip),
            XiProfile::Quadratic => xi * xi,
        }
    }

    /// `(A, Lip, sup)` with `φ² ≤ A(1+ξ²)`, Lipschitz constant and `sup|φ|`.
    /// `None` entries mean unbounded.
    fn constants(&self) -> (Option<f64>, Option<f64>, Option<f64>) {
        match self {
            XiProfile::Constant => (Some(1.0), Some(0.0), Some(1.0)),
            XiProfile::Linear => (Some(1.0), Some(1.0), None),
            XiProfile::LinearClipped { clip } => (Some(1.0), Some(1.0), Some(*clip)),
            XiProfile::Quadratic => (None, None, None),
        }
    }
}

/// x-dependence `σ(x)` of a mode.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpatialProfile {
    Constant,
    Cos { axis: usize, k: i32 },
    Sin { axis: usize, k: i32 },
}

impl SpatialProfile {
    fn value(&self, x: [f64; 2]) -> f64 {
        match self {
            SpatialProfile::Constant => 1.0,
            SpatialProfile::Cos { axis, k } => (*k as f64 * x[*axis]).cos(),
            SpatialProfile::Sin { axis, k } => (*k as f64 * x[*axis]).sin(),
        }
    }

    /// `(sup|σ|, coordinate Lipschitz constant)`.
    fn constants(&self) -> (f64, f64) {
        match self {
            SpatialProfile::Constant => (1.0, 0.0),
            SpatialProfile::Cos { k, .. } | SpatialProfile::Sin { k, .. } => (1.0, k.abs() as f64),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseMode {
    pub coeff: f64,
    pub spatial: SpatialProfile,
    pub xi: XiProfile,
}

/// `K` noise modes on a fixed grid, with declared `D₁`, `D₂`.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    pub modes: Vec<NoiseMode>,
    pub d1: f64,
    pub d2: f64,
    pub seed: u64,
    sigma: Vec<Vec<f64>>,
}

/// Brownian increments of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseIncrementBlock {
    pub path_id: u64,
    pub step: u64,
    pub dt: f64,
    pub draws: Vec<f64>,
}

impl NoiseModel {
    pub fn new(
        manifold: &Manifold,
        modes: Vec<NoiseMode>,
        d1: f64,
        d2: f64,
        seed: u64,
    ) -> Result<Self, NoiseError> {
        for m in &modes {
            if let XiProfile::LinearClipped { clip } = m.xi {
                if !(clip > 0.0) {
                    return Err(NoiseError::BadClip(clip));
                }
            }
            if let SpatialProfile::Cos { axis, .. } | SpatialProfile::Sin { axis, .. } = m.spatial {
                if axis >= manifold.dim() {
                    return Err(NoiseError::BadAxis { axis, dim: manifold.dim() });
                }
            }
        }
        let sigma = modes
            .iter()
            .map(|m| manifold.sample(|x| m.spatial.value(x)))
            .collect();
        Ok(Self { modes, d1, d2, seed, sigma })
    }

    /// Builds the model with `D₁`, `D₂` from the analytic mode constants.
    /// `D₂` uses `(a+b)² ≤ 2a² + 2b²` on the x and ξ parts and the smallest
    /// metric length scale of the chart. Returns `None` for the unbounded
    /// profiles (quadratic growth, or unclipped linear with x-dependence).
    pub fn with_derived_constants(
        manifold: &Manifold,
        modes: Vec<NoiseMode>,
        seed: u64,
    ) -> Result<Option<Self>, NoiseError> {
        let base = Self::new(manifold, modes, 0.0, 0.0, seed)?;
        let Some((d1, d2)) = base.derived_constants(manifold) else {
            return Ok(None);
        };
        Ok(Some(Self { d1, d2, ..base }))
    }

    fn derived_constants(&self, manifold: &Manifold) -> Option<(f64, f64)> {
        // coordinate Lipschitz → metric Lipschitz via min sqrt(h_aa)
        let min_len = (0..manifold.dim())
            .flat_map(|a| manifold.faces[a].h_diag.iter().map(|h| h.sqrt()))
            .fold(f64::INFINITY, f64::min);
        let mut d1 = 0.0;
        let mut dx = 0.0;
        let mut dxi = 0.0;
        for m in &self.modes {
            let (s_sup, s_lip) = m.spatial.constants();
            let (a, lip, sup) = m.xi.constants();
            let c2 = m.coeff * m.coeff;
            d1 += c2 * s_sup * s_sup * a?;
            dxi += c2 * s_sup * s_sup * lip? * lip?;
            if s_lip > 0.0 {
                let sup = sup?;
                dx += c2 * (s_lip / min_len).powi(2) * sup * sup;
            }
        }
        let d2 = if dx > 0.0 { 2.0 * (dx + dxi) } else { dxi };
        Some((d1, d2))
    }

    /// The zero-mode model (`B ≡ 0`).
    pub fn none(seed: u64) -> Self {
        Self { modes: Vec::new(), d1: 0.0, d2: 0.0, seed, sigma: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Same coefficients with another master seed.
    pub fn reseeded(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    /// `g_k(x_node, ξ)` with zero-based `k`.
    pub fn g_eval(&self, k: usize, node: usize, xi: f64) -> Result<f64, NoiseError> {
        if k >= self.modes.len() {
            return Err(NoiseError::ModeOutOfRange { k, modes: self.modes.len() });
        }
        Ok(self.g(k, node, xi))
    }

    #[inline]
    pub(crate) fn g(&self, k: usize, node: usize, xi: f64) -> f64 {
        let m = &self.modes[k];
        m.coeff * self.sigma[k][node] * m.xi.value(xi)
    }

    /// `G²(x, ξ) = Σ_{k<K} g_k²`.
    pub fn g2_eval(&self, node: usize, xi: f64) -> f64 {
        let mut s = 0.0;
        for k in 0..self.modes.len() {
            let g = self.g(k, node, xi);
            s += g * g;
        }
        s
    }

    /// Increments `ΔB_k ~ N(0, Δt)` of step `n` on path `path_id`.
    pub fn sample_increments(
        &self,
        path_id: u64,
        n: u64,
        dt: f64,
    ) -> Result<NoiseIncrementBlock, NoiseError> {
        if !(dt > 0.0) {
            return Err(NoiseError::BadTimeStep(dt));
        }
        let sd = dt.sqrt();
        let draws = (0..self.modes.len())
            .map(|k| sd * standard_normal(self.seed, path_id, n, k as u64))
            .collect();
        Ok(NoiseIncrementBlock { path_id, step: n, dt, draws })
    }
}

/// `N(0,1)` draw keyed by `(seed, path, step, mode)`.
///
/// ChaCha12 keyed by the seed, stream = path id, and word position derived
/// from `(step, mode)`; Box–Muller on the two 64-bit words at that position.
pub fn standard_normal(seed: u64, path_id: u64, step: u64, mode: u64) -> f64 {
    debug_assert!(mode < (1 << 20) && step < (1 << 40));
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(path_id);
    rng.set_word_pos((((step as u128) << 20) | mode as u128) * 4);
    let a = rng.next_u64();
    let b = rng.next_u64();
    // u1 ∈ (0, 1], u2 ∈ [0, 1)
    let u1 = ((a >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
    let u2 = (b >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Sampled check of the growth and Lipschitz conditions on the coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseReport {
    pub d1: f64,
    pub d2: f64,
    /// `max G²/(1+ξ²)`.
    pub d1_hat: f64,
    /// `max Σ_k |g_k(x,ξ) − g_k(y,ζ)|² / (d_h(x,y)² + |ξ−ζ|²)`.
    pub d2_hat: f64,
    /// Largest ratio of `|G²(x₁,ξ₁) − G²(x₂,ξ₂)|` to the local-Lipschitz bound
    /// built from the declared `D₁`, `D₂`.
    pub g2_lipschitz_ratio: f64,
    pub passed: bool,
    pub failures: Vec<String>,
}

const CERT_SLACK: f64 = 1e-9;

/// Checks `D₁`, `D₂` and the derived local Lipschitz bound of `G²` on
/// `xi_samples` points of `xi_range`, using axis-aligned node pairs at
/// power-of-two offsets. Distances are coordinate-path lengths along grid
/// lines.
pub fn verify_conditions(
    nm: &NoiseModel,
    manifold: &Manifold,
    xi_range: (f64, f64),
    xi_samples: usize,
) -> NoiseReport {
    let (lo, hi) = xi_range;
    let ns = xi_samples.max(2);
    let xs: Vec<f64> = (0..ns).map(|k| lo + (hi - lo) * k as f64 / (ns - 1) as f64).collect();
    let g = &manifold.grid;
    let kk = nm.modes.len();

    // node subsample keeps the pair scan cheap on fine grids
    let stride = (g.len() / 512).max(1);
    let nodes: Vec<usize> = (0..g.len()).step_by(stride).collect();

    let mut d1_hat = 0.0f64;
    let mut d2_hat = 0.0f64;
    let mut g2_ratio = 0.0f64;
    let mut gx = vec![0.0; kk];
    let mut gy = vec![0.0; kk];

    let mut pair = |x: usize, y: usize, d: f64, a: f64, b: f64| {
        for k in 0..kk {
            gx[k] = nm.g(k, x, a);
            gy[k] = nm.g(k, y, b);
        }
        let denom = d * d + (a - b) * (a - b);
        if denom == 0.0 {
            return;
        }
        let diff: f64 = gx.iter().zip(&gy).map(|(p, q)| (p - q) * (p - q)).sum();
        d2_hat = d2_hat.max(diff / denom);
        let g2x: f64 = gx.iter().map(|v| v * v).sum();
        let g2y: f64 = gy.iter().map(|v| v * v).sum();
        let bound = (nm.d1 * nm.d2).sqrt()
            * ((1.0 + a * a).sqrt() + (1.0 + b * b).sqrt())
            * denom.sqrt();
        let lhs = (g2x - g2y).abs();
        if lhs > 0.0 {
            g2_ratio = g2_ratio.max(if bound > 0.0 { lhs / bound } else { f64::INFINITY });
        }
    };

    for &x in &nodes {
        for &a in &xs {
            d1_hat = d1_hat.max(nm.g2_eval(x, a) / (1.0 + a * a));
        }
        // same node, every ξ pair at unit and long separations
        for (i, &a) in xs.iter().enumerate() {
            for off in [1usize, 2, 7, ns / 3, ns - 1] {
                if i + off < ns && off > 0 {
                    pair(x, x, 0.0, a, xs[i + off]);
                }
            }
        }
        for axis in 0..g.dim() {
            let n = g.sizes()[axis];
            let mut off = 1usize;
            while off <= n / 2 {
                let mut y = x;
                for _ in 0..off {
                    y = g.plus(y, axis);
                }
                let d = manifold.axis_distance(x, axis, off);
                for (i, &a) in xs.iter().enumerate() {
                    pair(x, y, d, a, a);
                    if i + 1 < ns {
                        pair(x, y, d, a, xs[i + 1]);
                    }
                }
                off *= 2;
            }
        }
    }

    let limit = |c: f64| c * (1.0 + CERT_SLACK) + f64::MIN_POSITIVE;
    let mut failures = Vec::new();
    if d1_hat > limit(nm.d1) {
        failures.push(format!("growth: D1_hat = {d1_hat:.6e} > D1 = {:.6e}", nm.d1));
    }
    if d2_hat > limit(nm.d2) {
        failures.push(format!("Lipschitz: D2_hat = {d2_hat:.6e} > D2 = {:.6e}", nm.d2));
    }
    if g2_ratio > 1.0 + CERT_SLACK {
        failures.push(format!("G^2 local Lipschitz bound exceeded: ratio {g2_ratio:.6e}"));
    }
    NoiseReport {
        d1: nm.d1,
        d2: nm.d2,
        d1_hat,
        d2_hat,
        g2_lipschitz_ratio: g2_ratio,
        passed: failures.is_empty(),
        failures,
    }
}

/// `Σ_k ‖g_k(·, u)‖²_{L²}` and, with increments, `Σ_k ⟨u, g_k(·,u)⟩ ΔB_k`.
pub fn quadratic_variation(nm: &NoiseModel, manifold: &Manifold, u: &[f64]) -> f64 {
    let mut s = NeumaierSum::new();
    for (i, &v) in u.iter().enumerate() {
        s.add(nm.g2_eval(i, v) * manifold.weight(i));
    }
    s.value()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_manifold, ManifoldSpec};

    fn circle() -> Manifold {
        build_manifold(&ManifoldSpec::circle(32, 0.0)).unwrap()
    }

    fn additive(sigma: f64) -> NoiseMode {
        NoiseMode { coeff: sigma, spatial: SpatialProfile::Constant, xi: XiProfile::Constant }
    }

    #[test]
    fn single_additive_mode_constants() {
        let m = circle();
        let nm = NoiseModel::with_derived_constants(&m, vec![additive(0.3)], 1).unwrap().unwrap();
        assert!((nm.g2_eval(5, 17.0) - 0.09).abs() < 1e-15);
        assert!((nm.d1 - 0.09).abs() < 1e-15);
        assert_eq!(nm.d2, 0.0);
        let rep = verify_conditions(&nm, &m, (-10.0, 10.0), 41);
        assert!(rep.passed, "{:?}", rep.failures);
        assert_eq!(rep.d2_hat, 0.0);
    }

    #[test]
    fn linear_mode_has_unit_d1() {
        let m = circle();
        let mode = NoiseMode { coeff: 1.0, spatial: SpatialProfile::Constant, xi: XiProfile::Linear };
        let nm = NoiseModel::with_derived_constants(&m, vec![mode], 1).unwrap().unwrap();
        assert_eq!(nm.d1, 1.0);
        for xi in [-3.0, 0.0, 2.5] {
            assert!(nm.g2_eval(0, xi) <= 1.0 + xi * xi);
        }
        assert!(verify_conditions(&nm, &m, (-20.0, 20.0), 81).passed);
    }

    #[test]
    fn geometric_decay_partial_sums() {
        let m = build_manifold(&ManifoldSpec::flat_torus(16, 16)).unwrap();
        let modes: Vec<NoiseMode> = (1..=12)
            .map(|k| NoiseMode {
                coeff: 0.5f64.powi(k),
                spatial: SpatialProfile::Constant,
                xi: XiProfile::LinearClipped { clip: 1.0 },
            })
            .collect();
        let nm = NoiseModel::new(&m, modes, 1.0, 1.0, 0).unwrap();
        // φ ≡ 1 at ξ = 1: G² = Σ_{k≤K} 4^{-k} = (1 − 4^{-K})/3
        let closed = (1.0 - 4f64.powi(-12)) / 3.0;
        assert!((nm.g2_eval(3, 1.0) - closed).abs() < 1e-12);
        assert!(nm.g2_eval(3, 5.0) <= 1.0 / 3.0);
    }

    #[test]
    fn out_of_range_mode_is_an_error() {
        let m = circle();
        let nm = NoiseModel::new(&m, vec![additive(1.0)], 1.0, 0.0, 0).unwrap();
        assert_eq!(nm.g_eval(1, 0, 0.0), Err(NoiseError::ModeOutOfRange { k: 1, modes: 1 }));
        assert!(nm.g_eval(0, 0, 0.0).is_ok());
    }

    #[test]
    fn x_independent_d2_is_weighted_lipschitz_square() {
        let m = circle();
        let modes = vec![
            NoiseMode { coeff: 0.5, spatial: SpatialProfile::Constant, xi: XiProfile::Linear },
            NoiseMode { coeff: 0.25, spatial: SpatialProfile::Constant, xi: XiProfile::LinearClipped { clip: 3.0 } },
        ];
        let nm = NoiseModel::with_derived_constants(&m, modes, 0).unwrap().unwrap();
        let rep = verify_conditions(&nm, &m, (-2.0, 2.0), 81);
        // both φ have Lipschitz constant 1 on the sampled range
        let expected = 0.25 + 0.0625;
        assert!((rep.d2_hat - expected).abs() < 1e-12, "{}", rep.d2_hat);
        assert!(rep.passed);
    }

    #[test]
    fn g2_lipschitz_bound_holds_for_identity_coefficient() {
        // |ξ₁² − ξ₂²| ≤ (√(1+ξ₁²) + √(1+ξ₂²)) |ξ₁ − ξ₂|
        let xs: Vec<f64> = (0..201).map(|k| -10.0 + 0.1 * k as f64).collect();
        for &a in &xs {
            for &b in &xs {
                let lhs = (a * a - b * b).abs();
                let rhs = ((1.0 + a * a).sqrt() + (1.0 + b * b).sqrt()) * (a - b).abs();
                assert!(lhs <= rhs + 1e-12);
            }
        }
        let m = circle();
        let mode = NoiseMode { coeff: 1.0, spatial: SpatialProfile::Constant, xi: XiProfile::Linear };
        let nm = NoiseModel::new(&m, vec![mode], 1.0, 1.0, 0).unwrap();
        let rep = verify_conditions(&nm, &m, (-10.0, 10.0), 201);
        assert!(rep.g2_lipschitz_ratio <= 1.0 + 1e-12 && rep.g2_lipschitz_ratio > 0.5);
    }

    #[test]
    fn constant_noise_has_zero_difference_ratios() {
        let m = circle();
        let nm = NoiseModel::new(&m, vec![additive(0.2)], 0.04, 0.0, 0).unwrap();
        let rep = verify_conditions(&nm, &m, (-5.0, 5.0), 21);
        assert_eq!(rep.d2_hat, 0.0);
        assert_eq!(rep.g2_lipschitz_ratio, 0.0);
    }

    #[test]
    fn quadratic_growth_fails_d1() {
        let m = circle();
        let mode = NoiseMode { coeff: 0.1, spatial: SpatialProfile::Constant, xi: XiProfile::Quadratic };
        assert!(NoiseModel::with_derived_constants(&m, vec![mode], 0).unwrap().is_none());
        let nm = NoiseModel::new(&m, vec![mode], 0.01, 0.01, 0).unwrap();
        let rep = verify_conditions(&nm, &m, (-50.0, 50.0), 101);
        assert!(!rep.passed);
        assert!(rep.failures.iter().any(|f| f.starts_with("growth")));
    }

    #[test]
    fn increments_are_keyed_and_reproducible() {
        let m = circle();
        let nm = NoiseModel::new(&m, vec![additive(1.0), additive(0.5)], 1.25, 0.0, 99).unwrap();
        let a = nm.sample_increments(3, 17, 0.01).unwrap();
        let b = nm.sample_increments(3, 17, 0.01).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.draws, nm.sample_increments(4, 17, 0.01).unwrap().draws);
        assert_ne!(a.draws, nm.sample_increments(3, 18, 0.01).unwrap().draws);
        assert!(nm.sample_increments(3, 17, 0.0).is_err());
        // a mode's draw does not depend on how many modes the model has
        let one = NoiseModel::new(&m, vec![additive(1.0)], 1.0, 0.0, 99).unwrap();
        assert_eq!(one.sample_increments(3, 17, 0.01).unwrap().draws[0], a.draws[0]);
    }

    #[test]
    fn increments_have_gaussian_moments() {
        let dt: f64 = 0.01;
        let n = 100_000u64;
        let draws: Vec<[f64; 2]> = (0..n)
            .map(|s| {
                [dt.sqrt() * standard_normal(7, 0, s, 0), dt.sqrt() * standard_normal(7, 0, s, 1)]
            })
            .collect();
        let mean = draws.iter().map(|d| d[0]).sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d[0] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() <= 4.0 * (dt / n as f64).sqrt());
        assert!((var - dt).abs() <= 0.05 * dt);
        let m1 = mean;
        let m2 = draws.iter().map(|d| d[1]).sum::<f64>() / n as f64;
        let cov = draws.iter().map(|d| (d[0] - m1) * (d[1] - m2)).sum::<f64>() / n as f64;
        let v2 = draws.iter().map(|d| (d[1] - m2).powi(2)).sum::<f64>() / n as f64;
        let corr = cov / (var * v2).sqrt();
        assert!(corr.abs() <= 0.02, "correlation {corr}");
    }
}

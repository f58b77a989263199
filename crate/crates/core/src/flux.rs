//! Geometry-compatible fluxes `f_x(ξ) = Σ_j a_j(ξ) V_j(x)`.
//!
//! Every `V_j` is stored as a face flux that is discretely divergence-free,
//! which makes the assembled flux divergence-free for every `ξ` at once.
//! In two dimensions the fields come from a stream function sampled at cell
//! corners; in one dimension the only divergence-free fields are
//! `c |h|^{-1/2}`.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::geometry::{FaceFlux, Manifold, NodeVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FluxError {
    #[error("flux: stream function `{0}` needs a two-dimensional chart")]
    StreamNeeds2D(&'static str),
    #[error("flux: nodal stream function has {got} values, grid has {expected}")]
    StreamLength { expected: usize, got: usize },
    #[error("flux: linearization threshold must be positive, got {0}")]
    BadThreshold(f64),
    #[error("flux: a flux model needs at least one mode")]
    NoModes,
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Scalar profile `a(ξ)` of one flux mode.
#[derive(Clone)]
pub enum FluxProfile {
    /// `a(ξ) = c` (pure transport of nothing; zero characteristic speed).
    Constant(f64),
    /// `a(ξ) = slope · ξ`.
    Linear { slope: f64 },
    /// `a(ξ) = ξ²/2` on all of ℝ. Violates the linear tail bound; kept as a
    /// negative control for the growth checker.
    Burgers,
    /// `ξ²/2` for `|ξ| ≤ l`, continued linearly (C¹) beyond.
    BurgersLinearized { l: f64 },
    /// `ξ³/3` for `|ξ| ≤ l`, continued linearly (C¹) beyond.
    CubicLinearized { l: f64 },
    /// User-supplied profile and derivative.
    Custom { name: String, a: ScalarFn, da: ScalarFn },
}

impl fmt::Debug for FluxProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FluxProfile::Constant(c) => write!(f, "Constant({c})"),
            FluxProfile::Linear { slope } => write!(f, "Linear {{ slope: {slope} }}"),
            FluxProfile::Burgers => write!(f, "Burgers"),
            FluxProfile::BurgersLinearized { l } => write!(f, "BurgersLinearized {{ l: {l} }}"),
            FluxProfile::CubicLinearized { l } => write!(f, "CubicLinearized {{ l: {l} }}"),
            FluxProfile::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

impl FluxProfile {
    #[inline]
    pub fn value(&self, xi: f64) -> f64 {
        match self {
            FluxProfile::Constant(c) => *c,
            FluxProfile::Linear { slope } => slope * xi,
            FluxProfile::Burgers => 0.5 * xi * xi,
            FluxProfile::BurgersLinearized { l } => {
                if xi.abs() <= *l {
                    0.5 * xi * xi
                } else {
                    l * xi.abs() - 0.5 * l * l
                }
            }
            FluxProfile::CubicLinearized { l } => {
                if xi.abs() <= *l {
                    xi * xi * xi / 3.0
                } else {
                    xi.signum() * (l * l * xi.abs() - 2.0 * l * l * l / 3.0)
                }
            }
            FluxProfile::Custom { a, .. } => a(xi),
        }
    }

    #[inline]
    pub fn derivative(&self, xi: f64) -> f64 {
        match self {
            FluxProfile::Constant(_) => 0.0,
            FluxProfile::Linear { slope } => *slope,
            FluxProfile::Burgers => xi,
            FluxProfile::BurgersLinearized { l } => xi.clamp(-*l, *l),
            FluxProfile::CubicLinearized { l } => {
                let x = xi.clamp(-*l, *l);
                x * x
            }
            FluxProfile::Custom { da, .. } => da(xi),
        }
    }

    /// Upper bound of `|a'|` on the interval spanned by `lo` and `hi`. For
    /// the built-in profiles `|a'|` is nondecreasing in `|ξ|`, so the bound is
    /// attained at an endpoint.
    #[inline]
    pub fn local_speed(&self, lo: f64, hi: f64) -> f64 {
        match self {
            FluxProfile::Custom { da, .. } => {
                let mut m = da(lo).abs().max(da(hi).abs());
                for k in 1..8 {
                    let t = k as f64 / 8.0;
                    m = m.max(da(lo + t * (hi - lo)).abs());
                }
                m
            }
            _ => self.derivative(lo).abs().max(self.derivative(hi).abs()),
        }
    }

    /// `sup_{|ξ| ≤ bound} |a'(ξ)|`.
    pub fn max_speed(&self, bound: f64) -> f64 {
        match self {
            FluxProfile::Constant(_) => 0.0,
            FluxProfile::Linear { slope } => slope.abs(),
            FluxProfile::Burgers => bound,
            FluxProfile::BurgersLinearized { l } => bound.min(*l),
            FluxProfile::CubicLinearized { l } => bound.min(*l).powi(2),
            FluxProfile::Custom { da, .. } => (0..=4096)
                .map(|k| da(-bound + 2.0 * bound * k as f64 / 4096.0).abs())
                .fold(0.0, f64::max),
        }
    }

    /// Linearization threshold, if the profile has one.
    pub fn threshold(&self) -> Option<f64> {
        match self {
            FluxProfile::BurgersLinearized { l } | FluxProfile::CubicLinearized { l } => Some(*l),
            _ => None,
        }
    }

    /// Analytic `(C₀, r, C₁)` for a unit-norm field; `None` when no finite
    /// linear tail bound exists.
    fn unit_constants(&self) -> Option<(f64, f64, f64)> {
        match self {
            FluxProfile::Constant(c) => Some((c.abs(), 1.0, 0.0)),
            FluxProfile::Linear { slope } => Some((slope.abs(), 1.0, slope.abs())),
            FluxProfile::Burgers => None,
            FluxProfile::BurgersLinearized { l } => Some((l.max(1.0), 2.0, *l)),
            FluxProfile::CubicLinearized { l } => Some(((l * l).max(1.0), 3.0, l * l)),
            FluxProfile::Custom { .. } => None,
        }
    }
}

/// Generator of a divergence-free field.
#[derive(Debug, Clone, PartialEq)]
pub enum StreamFunction {
    /// 1D: `V = c |h|^{-1/2}`. 2D: `ψ ≡ c`, i.e. the zero field.
    Constant(f64),
    /// `ψ = A sin(k₁x¹ + k₂x²)`.
    SingleHarmonic { amplitude: f64, k: [i32; 2] },
    /// `ψ = A cos(k₁x¹) cos(k₂x²)`.
    ProductHarmonic { amplitude: f64, k: [i32; 2] },
    /// Corner values `ψ_{i+½, j+½}` stored at index `(i, j)`.
    Nodal(Vec<f64>),
}

impl StreamFunction {
    pub fn name(&self) -> &'static str {
        match self {
            StreamFunction::Constant(_) => "constant",
            StreamFunction::SingleHarmonic { .. } => "single_harmonic",
            StreamFunction::ProductHarmonic { .. } => "product_harmonic",
            StreamFunction::Nodal(_) => "nodal",
        }
    }

    fn eval(&self, x: [f64; 2]) -> f64 {
        match self {
            StreamFunction::Constant(c) => *c,
            StreamFunction::SingleHarmonic { amplitude, k } => {
                amplitude * (k[0] as f64 * x[0] + k[1] as f64 * x[1]).sin()
            }
            StreamFunction::ProductHarmonic { amplitude, k } => {
                amplitude * (k[0] as f64 * x[0]).cos() * (k[1] as f64 * x[1]).cos()
            }
            StreamFunction::Nodal(_) => unreachable!("nodal stream functions are not analytic"),
        }
    }
}

/// Builds the face flux of a divergence-free field from a stream function.
///
/// 2D: with `ψ` at cell corners, `F¹_{i+½,j} = (ψ_{i+½,j+½} − ψ_{i+½,j−½})/Δ₂`
/// and `F²_{i,j+½} = −(ψ_{i+½,j+½} − ψ_{i−½,j+½})/Δ₁`; each node's divergence
/// is the same four corner values with opposite signs.
pub fn build_divfree_field(
    manifold: &Manifold,
    stream: &StreamFunction,
) -> Result<FaceFlux, FluxError> {
    let g = &manifold.grid;
    if g.dim() == 1 {
        return match stream {
            StreamFunction::Constant(c) => Ok(FaceFlux { axes: vec![vec![*c; g.len()]] }),
            other => Err(FluxError::StreamNeeds2D(other.name())),
        };
    }
    let corners: Vec<f64> = match stream {
        StreamFunction::Nodal(v) => {
            if v.len() != g.len() {
                return Err(FluxError::StreamLength { expected: g.len(), got: v.len() });
            }
            v.clone()
        }
        s => (0..g.len())
            .map(|idx| {
                let x = g.coords(idx);
                s.eval([x[0] + 0.5 * g.spacing(0), x[1] + 0.5 * g.spacing(1)])
            })
            .collect(),
    };
    let (d1, d2) = (g.spacing(0), g.spacing(1));
    let mut f1 = vec![0.0; g.len()];
    let mut f2 = vec![0.0; g.len()];
    for idx in 0..g.len() {
        // corner (i+½, j+½) is `idx`; (i+½, j−½) is minus along axis 1
        f1[idx] = (corners[idx] - corners[g.minus(idx, 1)]) / d2;
        f2[idx] = -(corners[idx] - corners[g.minus(idx, 0)]) / d1;
    }
    Ok(FaceFlux { axes: vec![f1, f2] })
}

/// Declared growth constants of a flux.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowthCertificate {
    pub c0: f64,
    pub r: f64,
    pub l: f64,
    pub c1: f64,
}

#[derive(Debug, Clone)]
pub struct FluxMode {
    pub profile: FluxProfile,
    pub field: FaceFlux,
    nodes: NodeVector,
}

/// Separable flux with its growth certificate.
#[derive(Debug, Clone)]
pub struct FluxModel {
    pub modes: Vec<FluxMode>,
    pub certificate: GrowthCertificate,
}

impl FluxModel {
    /// Assembles a model from `(profile, face field)` pairs. The face fields
    /// are taken as given; use [`build_divfree_field`] for compatible ones.
    pub fn new(
        manifold: &Manifold,
        modes: Vec<(FluxProfile, FaceFlux)>,
        certificate: GrowthCertificate,
    ) -> Result<Self, FluxError> {
        if modes.is_empty() {
            return Err(FluxError::NoModes);
        }
        for (p, _) in &modes {
            if let Some(l) = p.threshold() {
                if !(l > 0.0) {
                    return Err(FluxError::BadThreshold(l));
                }
            }
        }
        let modes = modes
            .into_iter()
            .map(|(profile, field)| {
                let nodes = manifold.to_nodes(&field);
                FluxMode { profile, field, nodes }
            })
            .collect();
        Ok(Self { modes, certificate })
    }

    /// Builds a model from stream functions and derives its certificate
    /// analytically from the profiles and `max |V_j|_h`.
    pub fn from_streams(
        manifold: &Manifold,
        modes: Vec<(FluxProfile, StreamFunction)>,
    ) -> Result<Self, FluxError> {
        let built = modes
            .into_iter()
            .map(|(p, s)| build_divfree_field(manifold, &s).map(|f| (p, f)))
            .collect::<Result<Vec<_>, _>>()?;
        let placeholder = GrowthCertificate { c0: 0.0, r: 1.0, l: 1.0, c1: 0.0 };
        let mut model = Self::new(manifold, built, placeholder)?;
        model.certificate = model.derived_certificate(manifold);
        Ok(model)
    }

    /// The zero flux (`f ≡ 0`).
    pub fn zero(manifold: &Manifold) -> Self {
        let field = FaceFlux::zeros(&manifold.grid);
        Self::new(
            manifold,
            vec![(FluxProfile::Constant(0.0), field)],
            GrowthCertificate { c0: 0.0, r: 1.0, l: 1.0, c1: 0.0 },
        )
        .expect("one mode")
    }

    /// Analytic certificate. Profiles without a linear tail bound get the
    /// constants of their linearized counterpart at the model's threshold, so
    /// the sampling checker can flag the tail.
    pub fn derived_certificate(&self, manifold: &Manifold) -> GrowthCertificate {
        let l = self
            .modes
            .iter()
            .filter_map(|m| m.profile.threshold())
            .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.max(t))))
            .unwrap_or(1.0);
        let mut c0 = 0.0;
        let mut c1 = 0.0;
        let mut r: f64 = 1.0;
        let mut rs = Vec::new();
        for m in &self.modes {
            let vmax = self.mode_max_norm(manifold, m);
            let (uc0, ur, uc1) = m
                .profile
                .unit_constants()
                .unwrap_or_else(|| (l.max(1.0), 2.0, l));
            c0 += uc0 * vmax;
            c1 += uc1 * vmax;
            r = r.max(ur);
            rs.push(ur);
        }
        if rs.iter().any(|&x| x != r) {
            // (1 + |ξ|^{r_j}) ≤ 2 (1 + |ξ|^r) for r ≥ r_j
            c0 *= 2.0;
        }
        GrowthCertificate { c0, r, l, c1 }
    }

    fn mode_max_norm(&self, manifold: &Manifold, mode: &FluxMode) -> f64 {
        mode.nodes
            .iter()
            .enumerate()
            .map(|(i, v)| manifold.metric.norm2(i, *v).sqrt())
            .fold(0.0, f64::max)
    }

    /// Contravariant `f_x(ξ)` at a node.
    pub fn eval_flux(&self, node: usize, xi: f64) -> [f64; 2] {
        let mut out = [0.0; 2];
        for m in &self.modes {
            let a = m.profile.value(xi);
            out[0] += a * m.nodes[node][0];
            out[1] += a * m.nodes[node][1];
        }
        out
    }

    /// Contravariant `∂_ξ f_x(ξ)` at a node.
    pub fn eval_flux_prime(&self, node: usize, xi: f64) -> [f64; 2] {
        let mut out = [0.0; 2];
        for m in &self.modes {
            let a = m.profile.derivative(xi);
            out[0] += a * m.nodes[node][0];
            out[1] += a * m.nodes[node][1];
        }
        out
    }

    /// Node values of mode `j`'s field.
    pub fn mode_nodes(&self, j: usize) -> &NodeVector {
        &self.modes[j].nodes
    }

    /// Face flux `Σ_j a_j(ξ) F_j` for a fixed `ξ`.
    pub fn assembled(&self, xi: f64) -> FaceFlux {
        let mut out = self.modes[0].field.scaled(0.0);
        for m in &self.modes {
            let a = m.profile.value(xi);
            for (o, f) in out.axes.iter_mut().zip(&m.field.axes) {
                for (ov, fv) in o.iter_mut().zip(f) {
                    *ov += a * fv;
                }
            }
        }
        out
    }

    /// Concatenates the modes of two models; the certificate is re-derived.
    pub fn concat(&self, other: &FluxModel, manifold: &Manifold) -> FluxModel {
        let mut modes = self.modes.clone();
        modes.extend(other.modes.iter().cloned());
        let mut m = FluxModel { modes, certificate: self.certificate };
        m.certificate = m.derived_certificate(manifold);
        m
    }
}

/// Outcome of the sampled growth check.
#[derive(Debug, Clone, PartialEq)]
pub struct GrowthReport {
    pub declared: GrowthCertificate,
    /// Smallest `C₀` consistent with the samples for the declared `r`.
    pub c0_hat: f64,
    /// Smallest exponent (on a 0.05 grid, `1 ≤ r̂ ≤ r`) for which the declared
    /// `C₀` bounds the samples; equals `r` when none does.
    pub r_hat: f64,
    pub c1_hat: f64,
    /// `max_{|ξ|>L} |f_x(ξ)|_h / |ξ|`.
    pub tail_ratio: f64,
    pub passed: bool,
    pub failures: Vec<String>,
}

const CERT_SLACK: f64 = 1e-9;

/// Samples `|f|_h`, `|f'|_h` and difference quotients on `samples` points of
/// `xi_range` and compares with the declared certificate.
pub fn check_growth(
    fm: &FluxModel,
    manifold: &Manifold,
    xi_range: (f64, f64),
    samples: usize,
) -> GrowthReport {
    let cert = fm.certificate;
    let (lo, hi) = xi_range;
    let samples = samples.max(2);
    let xs: Vec<f64> =
        (0..samples).map(|k| lo + (hi - lo) * k as f64 / (samples - 1) as f64).collect();
    let n = manifold.len();

    let norm_at = |xi: f64, prime: bool| -> (f64, Vec<[f64; 2]>) {
        let mut vals = Vec::with_capacity(n);
        let mut mx = 0.0f64;
        for i in 0..n {
            let v = if prime { fm.eval_flux_prime(i, xi) } else { fm.eval_flux(i, xi) };
            mx = mx.max(manifold.metric.norm2(i, v).sqrt());
            vals.push(v);
        }
        (mx, vals)
    };

    let mut f_max = Vec::with_capacity(samples);
    let mut fp_max = Vec::with_capacity(samples);
    let mut lip = 0.0f64;
    let mut prev: Option<(f64, Vec<[f64; 2]>)> = None;
    for &xi in &xs {
        let (fm_, vals) = norm_at(xi, false);
        let (fp, _) = norm_at(xi, true);
        if let Some((pxi, pvals)) = &prev {
            let dxi = xi - pxi;
            for i in 0..n {
                let d = [vals[i][0] - pvals[i][0], vals[i][1] - pvals[i][1]];
                lip = lip.max(manifold.metric.norm2(i, d).sqrt() / dxi);
            }
        }
        f_max.push(fm_);
        fp_max.push(fp);
        prev = Some((xi, vals));
    }

    let ratio_for = |r: f64| {
        let mut c = 0.0f64;
        for ((&xi, &f), &fp) in xs.iter().zip(&f_max).zip(&fp_max) {
            if xi.abs() <= cert.l {
                c = c.max(f / (1.0 + xi.abs().powf(r)));
            }
            c = c.max(fp / (1.0 + xi.abs().powf(r - 1.0)));
        }
        c
    };
    let c0_hat = ratio_for(cert.r);
    let tail_ratio = xs
        .iter()
        .zip(&f_max)
        .filter(|(xi, _)| xi.abs() > cert.l)
        .map(|(xi, f)| f / xi.abs())
        .fold(0.0, f64::max);
    let c1_hat = lip.max(fp_max.iter().copied().fold(0.0, f64::max));

    let limit = |c: f64| c * (1.0 + CERT_SLACK) + f64::MIN_POSITIVE;
    let mut r_hat = cert.r;
    let mut r = 1.0;
    while r < cert.r {
        if ratio_for(r) <= limit(cert.c0) {
            r_hat = r;
            break;
        }
        r += 0.05;
    }

    let mut failures = Vec::new();
    if c0_hat > limit(cert.c0) {
        failures.push(format!("polynomial growth: C0_hat = {c0_hat:.6e} > C0 = {:.6e}", cert.c0));
    }
    if tail_ratio > limit(cert.c0) {
        failures.push(format!(
            "linear tail |xi| > L = {}: ratio {tail_ratio:.6e} > C0 = {:.6e}",
            cert.l, cert.c0
        ));
    }
    if c1_hat > limit(cert.c1) {
        failures.push(format!("Lipschitz: C1_hat = {c1_hat:.6e} > C1 = {:.6e}", cert.c1));
    }
    GrowthReport {
        declared: cert,
        c0_hat,
        r_hat,
        c1_hat,
        tail_ratio,
        passed: failures.is_empty(),
        failures,
    }
}

/// Largest relative face-flux divergence of `Σ_j a_j(ξ) F_j` over `xis`.
pub fn compatibility_defect(fm: &FluxModel, manifold: &Manifold, xis: &[f64]) -> f64 {
    xis.iter()
        .map(|&xi| manifold.relative_divergence(&fm.assembled(xi)))
        .fold(0.0, f64::max)
}

/// Threshold for discrete geometry compatibility.
pub const COMPATIBILITY_TOL: f64 = 1e-12;

//! Periodic structured charts with a per-node Riemannian metric.
//!
//! A manifold is one chart of a circle or 2-torus, discretized by a uniform
//! periodic grid of `N` nodes per axis at `x_i = i·Δ`, `Δ = 2π/N`. The metric
//! is rescaled so that the discrete volume `Σ |h|^{1/2} ΠΔ` is exactly one.
//!
//! All differential operators use the conservative (divergence) form
//! `|h|^{-1/2} ∂_a(|h|^{1/2} X^a)`. Vector fields that enter a divergence are
//! carried at faces as densitized normal fluxes `|h|^{1/2} X^a`, so the
//! discrete divergence is a telescoping sum and closed-manifold identities
//! (divergence theorem, integration by parts, self-adjointness of the
//! Laplace–Beltrami operator) hold to round-off. The supported charts are
//! orthogonal, so face coefficients only involve the diagonal of `h^{ij}`.

use std::f64::consts::PI;

use thiserror::Error;

use crate::stats::{csum, NeumaierSum};

/// Coordinate period of every axis.
pub const PERIOD: f64 = 2.0 * PI;

/// Smallest admissible number of cells per axis.
pub const MIN_CELLS: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("geometry: unknown manifold kind `{0}` (expected circle, flat_torus or warped_torus)")]
    InvalidKind(String),
    #[error("geometry: warp parameter |beta| = {0} must be < 1 ([manifold].beta)")]
    DegenerateWarp(f64),
    #[error("geometry: {0} cells per axis is below the minimum of {MIN_CELLS}")]
    GridTooSmall(usize),
    #[error("geometry: {kind} needs {expected} grid sizes, got {got}")]
    DimensionMismatch { kind: &'static str, expected: usize, got: usize },
    #[error("geometry: metric is not positive definite at node {0}")]
    NotPositiveDefinite(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifoldKind {
    /// S¹ with metric `(1 + β cos x)² dx²` (flat for β = 0).
    Circle,
    /// T² with the Euclidean metric.
    FlatTorus,
    /// T² with `h = diag(1, (1 + β cos x¹)²)`.
    WarpedTorus,
}

impl ManifoldKind {
    pub fn dim(self) -> usize {
        match self {
            ManifoldKind::Circle => 1,
            ManifoldKind::FlatTorus | ManifoldKind::WarpedTorus => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ManifoldKind::Circle => "circle",
            ManifoldKind::FlatTorus => "flat_torus",
            ManifoldKind::WarpedTorus => "warped_torus",
        }
    }
}

impl std::str::FromStr for ManifoldKind {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "circle" => Ok(ManifoldKind::Circle),
            "flat_torus" => Ok(ManifoldKind::FlatTorus),
            "warped_torus" => Ok(ManifoldKind::WarpedTorus),
            other => Err(GeometryError::InvalidKind(other.to_string())),
        }
    }
}

/// Uniform periodic grid. For one-dimensional charts the second axis is a
/// dummy of size one.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartGrid {
    dim: usize,
    sizes: [usize; 2],
    spacing: [f64; 2],
    plus: [Vec<u32>; 2],
    minus: [Vec<u32>; 2],
}

impl ChartGrid {
    pub fn new(sizes: &[usize]) -> Result<Self, GeometryError> {
        if sizes.is_empty() || sizes.len() > 2 {
            return Err(GeometryError::DimensionMismatch {
                kind: "chart grid",
                expected: 2,
                got: sizes.len(),
            });
        }
        if let Some(&n) = sizes.iter().find(|&&n| n < MIN_CELLS) {
            return Err(GeometryError::GridTooSmall(n));
        }
        let dim = sizes.len();
        let n = [sizes[0], if dim == 2 { sizes[1] } else { 1 }];
        let spacing = [PERIOD / n[0] as f64, if dim == 2 { PERIOD / n[1] as f64 } else { 1.0 }];
        let len = n[0] * n[1];
        let mut plus = [vec![0u32; len], vec![0u32; len]];
        let mut minus = [vec![0u32; len], vec![0u32; len]];
        for i in 0..n[0] {
            for j in 0..n[1] {
                let idx = i * n[1] + j;
                plus[0][idx] = (((i + 1) % n[0]) * n[1] + j) as u32;
                minus[0][idx] = (((i + n[0] - 1) % n[0]) * n[1] + j) as u32;
                plus[1][idx] = (i * n[1] + (j + 1) % n[1]) as u32;
                minus[1][idx] = (i * n[1] + (j + n[1] - 1) % n[1]) as u32;
            }
        }
        Ok(Self { dim, sizes: n, spacing, plus, minus })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Cells per axis (only the first `dim` entries are meaningful).
    pub fn sizes(&self) -> &[usize] {
        &self.sizes[..self.dim]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.spacing[axis]
    }

    pub fn len(&self) -> usize {
        self.sizes[0] * self.sizes[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Coordinate cell volume `ΠΔ_i`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing[..self.dim].iter().product()
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        (i % self.sizes[0]) * self.sizes[1] + j % self.sizes[1]
    }

    pub fn multi_index(&self, idx: usize) -> [usize; 2] {
        [idx / self.sizes[1], idx % self.sizes[1]]
    }

    pub fn coords(&self, idx: usize) -> [f64; 2] {
        let [i, j] = self.multi_index(idx);
        let y = if self.dim == 2 { j as f64 * self.spacing[1] } else { 0.0 };
        [i as f64 * self.spacing[0], y]
    }

    /// Coordinates of the face between `idx` and its `+axis` neighbour.
    pub fn face_coords(&self, idx: usize, axis: usize) -> [f64; 2] {
        let mut x = self.coords(idx);
        x[axis] += 0.5 * self.spacing[axis];
        x
    }

    #[inline]
    pub fn plus(&self, idx: usize, axis: usize) -> usize {
        self.plus[axis][idx] as usize
    }

    #[inline]
    pub fn minus(&self, idx: usize, axis: usize) -> usize {
        self.minus[axis][idx] as usize
    }
}

/// Per-node metric data. Matrices are stored packed as `[m11, m12, m22]`;
/// one-dimensional charts use `m12 = 0`, `m22 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricField {
    pub h: Vec<[f64; 3]>,
    pub inv: Vec<[f64; 3]>,
    pub sqrt_det: Vec<f64>,
    pub total_volume: f64,
}

impl MetricField {
    /// `h_ij X^i X^j` at a node.
    pub fn norm2(&self, idx: usize, x: [f64; 2]) -> f64 {
        let [a, b, c] = self.h[idx];
        a * x[0] * x[0] + 2.0 * b * x[0] * x[1] + c * x[1] * x[1]
    }
}

/// Face-averaged metric coefficients for one axis; entry `i` belongs to the
/// face between node `i` and its `+axis` neighbour.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceMetric {
    pub sqrt_det: Vec<f64>,
    /// Arithmetic average of `|h|^{1/2} h^{aa}` over the two adjacent nodes.
    pub conductance: Vec<f64>,
    /// Arithmetic average of `h_aa`, used for face lengths.
    pub h_diag: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManifoldSpec {
    pub kind: ManifoldKind,
    pub cells: [usize; 2],
    pub beta: f64,
}

impl ManifoldSpec {
    pub fn circle(n: usize, beta: f64) -> Self {
        Self { kind: ManifoldKind::Circle, cells: [n, 1], beta }
    }

    pub fn flat_torus(n1: usize, n2: usize) -> Self {
        Self { kind: ManifoldKind::FlatTorus, cells: [n1, n2], beta: 0.0 }
    }

    pub fn warped_torus(n1: usize, n2: usize, beta: f64) -> Self {
        Self { kind: ManifoldKind::WarpedTorus, cells: [n1, n2], beta }
    }
}

/// A discretized compact manifold: grid, normalized metric and face data.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifold {
    pub kind: ManifoldKind,
    pub beta: f64,
    pub grid: ChartGrid,
    pub metric: MetricField,
    pub faces: Vec<FaceMetric>,
    /// `min |h|^{1/2} / max |h|^{1/2}` of the metric before normalization.
    pub raw_sqrt_det_ratio: f64,
}

/// Node-located vector field (contravariant components).
pub type NodeVector = Vec<[f64; 2]>;

/// Face-located densitized normal fluxes `|h|^{1/2} X^a`, one array per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceFlux {
    pub axes: Vec<Vec<f64>>,
}

impl FaceFlux {
    pub fn zeros(grid: &ChartGrid) -> Self {
        Self { axes: vec![vec![0.0; grid.len()]; grid.dim()] }
    }

    pub fn max_abs(&self) -> f64 {
        self.axes.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { axes: self.axes.iter().map(|a| a.iter().map(|v| v * s).collect()).collect() }
    }
}

/// Instantiates one of the supported manifolds with a volume-normalized metric.
pub fn build_manifold(spec: &ManifoldSpec) -> Result<Manifold, GeometryError> {
    let dim = spec.kind.dim();
    let sizes = &spec.cells[..dim];
    if spec.kind == ManifoldKind::FlatTorus && spec.beta != 0.0 {
        // flat torus ignores beta; a nonzero value is almost certainly a config slip
        return Err(GeometryError::InvalidKind(format!(
            "flat_torus with beta = {}",
            spec.beta
        )));
    }
    if !(spec.beta.abs() < 1.0) {
        return Err(GeometryError::DegenerateWarp(spec.beta));
    }
    let grid = ChartGrid::new(sizes)?;
    let beta = spec.beta;
    let raw: Vec<[f64; 3]> = (0..grid.len())
        .map(|idx| {
            let x = grid.coords(idx);
            let w = 1.0 + beta * x[0].cos();
            match spec.kind {
                ManifoldKind::Circle => [w * w, 0.0, 1.0],
                ManifoldKind::FlatTorus => [1.0, 0.0, 1.0],
                ManifoldKind::WarpedTorus => [1.0, 0.0, w * w],
            }
        })
        .collect();
    let raw_sqrt: Vec<f64> = raw.iter().map(|m| (m[0] * m[2] - m[1] * m[1]).sqrt()).collect();
    for (idx, m) in raw.iter().enumerate() {
        if !(m[0] > 0.0 && m[0] * m[2] - m[1] * m[1] > 0.0) {
            return Err(GeometryError::NotPositiveDefinite(idx));
        }
    }
    let raw_volume = csum(raw_sqrt.iter().map(|s| s * grid.cell_volume()));
    let (mn, mx) = raw_sqrt
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), &s| (a.min(s), b.max(s)));

    // h -> λ² h with λ^dim = 1/vol, so |h|^{1/2} -> |h|^{1/2}/vol
    let lambda2 = raw_volume.powf(-2.0 / dim as f64);
    let h: Vec<[f64; 3]> = raw
        .iter()
        .map(|m| {
            if dim == 1 {
                [m[0] * lambda2, 0.0, 1.0]
            } else {
                [m[0] * lambda2, m[1] * lambda2, m[2] * lambda2]
            }
        })
        .collect();
    let inv: Vec<[f64; 3]> = h
        .iter()
        .map(|m| {
            let det = m[0] * m[2] - m[1] * m[1];
            [m[2] / det, -m[1] / det, m[0] / det]
        })
        .collect();
    let sqrt_det: Vec<f64> = raw_sqrt.iter().map(|s| s / raw_volume).collect();
    let total_volume = csum(sqrt_det.iter().map(|s| s * grid.cell_volume()));
    let metric = MetricField { h, inv, sqrt_det, total_volume };

    let faces = (0..dim)
        .map(|axis| {
            let n = grid.len();
            let mut f = FaceMetric {
                sqrt_det: vec![0.0; n],
                conductance: vec![0.0; n],
                h_diag: vec![0.0; n],
            };
            let diag = |m: &[f64; 3]| if axis == 0 { m[0] } else { m[2] };
            for idx in 0..n {
                let j = grid.plus(idx, axis);
                let (si, sj) = (metric.sqrt_det[idx], metric.sqrt_det[j]);
                f.sqrt_det[idx] = 0.5 * (si + sj);
                f.conductance[idx] =
                    0.5 * (si * diag(&metric.inv[idx]) + sj * diag(&metric.inv[j]));
                f.h_diag[idx] = 0.5 * (diag(&metric.h[idx]) + diag(&metric.h[j]));
            }
            f
        })
        .collect();

    Ok(Manifold { kind: spec.kind, beta, grid, metric, faces, raw_sqrt_det_ratio: mn / mx })
}

impl Manifold {
    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Quadrature weight `|h|^{1/2} ΠΔ` of a node.
    #[inline]
    pub fn weight(&self, idx: usize) -> f64 {
        self.metric.sqrt_det[idx] * self.grid.cell_volume()
    }

    /// Samples a function of the node coordinates.
    pub fn sample(&self, f: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
        (0..self.len()).map(|i| f(self.grid.coords(i))).collect()
    }

    /// Midpoint rule with respect to `dV_h`.
    pub fn integrate(&self, u: &[f64]) -> f64 {
        debug_assert_eq!(u.len(), self.len());
        csum(u.iter().enumerate().map(|(i, v)| v * self.weight(i)))
    }

    /// `⟨u, v⟩` in `L²(M, h)`.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        csum(u.iter().zip(v).enumerate().map(|(i, (a, b))| a * b * self.weight(i)))
    }

    /// Node gradient `h^{ij} ∂_j u` from centered differences.
    pub fn grad_h(&self, u: &[f64]) -> NodeVector {
        let g = &self.grid;
        (0..g.len())
            .map(|idx| {
                let mut d = [0.0; 2];
                for (axis, da) in d.iter_mut().enumerate().take(g.dim()) {
                    *da = (u[g.plus(idx, axis)] - u[g.minus(idx, axis)]) / (2.0 * g.spacing(axis));
                }
                let [a, b, c] = self.metric.inv[idx];
                if g.dim() == 1 {
                    [a * d[0], 0.0]
                } else {
                    [a * d[0] + b * d[1], b * d[0] + c * d[1]]
                }
            })
            .collect()
    }

    /// Telescoping conservative divergence of a face flux field.
    pub fn div_h(&self, flux: &FaceFlux) -> Vec<f64> {
        let g = &self.grid;
        let mut out = vec![0.0; g.len()];
        for (axis, f) in flux.axes.iter().enumerate() {
            let inv_d = 1.0 / g.spacing(axis);
            for (idx, o) in out.iter_mut().enumerate() {
                *o += (f[idx] - f[g.minus(idx, axis)]) * inv_d;
            }
        }
        for (o, s) in out.iter_mut().zip(&self.metric.sqrt_det) {
            *o /= s;
        }
        out
    }

    /// Divergence of a node field, via arithmetic face averaging.
    pub fn div_h_nodes(&self, x: &NodeVector) -> Vec<f64> {
        self.div_h(&self.to_faces(x))
    }

    /// Face fluxes `|h|^{1/2}_f · ½(X^a_i + X^a_{i+e_a})`.
    pub fn to_faces(&self, x: &NodeVector) -> FaceFlux {
        let g = &self.grid;
        let axes = (0..g.dim())
            .map(|axis| {
                (0..g.len())
                    .map(|idx| {
                        let j = g.plus(idx, axis);
                        self.faces[axis].sqrt_det[idx] * 0.5 * (x[idx][axis] + x[j][axis])
                    })
                    .collect()
            })
            .collect();
        FaceFlux { axes }
    }

    /// Node contravariant field recovered from face fluxes by averaging the
    /// two faces of each axis.
    pub fn to_nodes(&self, flux: &FaceFlux) -> NodeVector {
        let g = &self.grid;
        (0..g.len())
            .map(|idx| {
                let mut v = [0.0; 2];
                for (axis, f) in flux.axes.iter().enumerate() {
                    let m = g.minus(idx, axis);
                    v[axis] = 0.5
                        * (f[idx] / self.faces[axis].sqrt_det[idx]
                            + f[m] / self.faces[axis].sqrt_det[m]);
                }
                v
            })
            .collect()
    }

    /// Conservative Laplace–Beltrami operator with face-averaged coefficients.
    pub fn laplace_beltrami(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.laplace_beltrami_into(u, 1.0, &mut out);
        out
    }

    /// `out += scale · Δ_h u`.
    pub fn laplace_beltrami_into(&self, u: &[f64], scale: f64, out: &mut [f64]) {
        let g = &self.grid;
        for idx in 0..g.len() {
            let mut acc = 0.0;
            for axis in 0..g.dim() {
                let c = &self.faces[axis].conductance;
                let (p, m) = (g.plus(idx, axis), g.minus(idx, axis));
                let d2 = g.spacing(axis) * g.spacing(axis);
                acc += (c[idx] * (u[p] - u[idx]) - c[m] * (u[idx] - u[m])) / d2;
            }
            out[idx] += scale * acc / self.metric.sqrt_det[idx];
        }
    }

    /// Per-node Dirichlet energy density `|∇u|²_h`, split evenly between the
    /// two nodes of every face so that `∫ density dV_h = -⟨u, Δ_h u⟩` exactly.
    pub fn grad_energy_density(&self, u: &[f64]) -> Vec<f64> {
        let g = &self.grid;
        let mut out = vec![0.0; g.len()];
        for axis in 0..g.dim() {
            let c = &self.faces[axis].conductance;
            let d2 = g.spacing(axis) * g.spacing(axis);
            for idx in 0..g.len() {
                let du = u[g.plus(idx, axis)] - u[idx];
                let e = 0.5 * c[idx] * du * du / d2;
                out[idx] += e;
                out[g.plus(idx, axis)] += e;
            }
        }
        for (o, s) in out.iter_mut().zip(&self.metric.sqrt_det) {
            *o /= s;
        }
        out
    }

    /// Face pairing `Σ_f F_f (v_{i+e_a} − v_i)/Δ_a · ΠΔ`, the discrete
    /// `∫ (X, ∇v)_h dV_h`.
    pub fn face_pairing(&self, flux: &FaceFlux, v: &[f64]) -> f64 {
        let g = &self.grid;
        let mut s = NeumaierSum::new();
        for (axis, f) in flux.axes.iter().enumerate() {
            for idx in 0..g.len() {
                s.add(f[idx] * (v[g.plus(idx, axis)] - v[idx]) / g.spacing(axis));
            }
        }
        s.value() * g.cell_volume()
    }

    /// Relative size of the discrete divergence of a face flux:
    /// `max_i |Σ_a (F_a,i − F_a,i−1)/Δ_a| / (max|F| · Σ_a 2/Δ_a)`.
    pub fn relative_divergence(&self, flux: &FaceFlux) -> f64 {
        let g = &self.grid;
        let scale = flux.max_abs() * (0..g.dim()).map(|a| 2.0 / g.spacing(a)).sum::<f64>();
        if scale == 0.0 {
            return 0.0;
        }
        let div = self.div_h(flux);
        div.iter()
            .zip(&self.metric.sqrt_det)
            .fold(0.0f64, |m, (d, s)| m.max((d * s).abs()))
            / scale
    }

    /// Length of the coordinate path along `axis` from `idx` through `steps`
    /// grid segments (shorter way around), measured with face metric lengths.
    pub fn axis_distance(&self, idx: usize, axis: usize, steps: usize) -> f64 {
        let g = &self.grid;
        let n = g.sizes[axis];
        let steps = steps % n;
        let seg = |k: usize| self.faces[axis].h_diag[k].sqrt() * g.spacing(axis);
        let mut fwd = 0.0;
        let mut k = idx;
        for _ in 0..steps {
            fwd += seg(k);
            k = g.plus(k, axis);
        }
        let mut bwd = 0.0;
        let mut k = idx;
        for _ in 0..(n - steps) % n {
            k = g.minus(k, axis);
            bwd += seg(k);
        }
        if steps == 0 {
            0.0
        } else {
            fwd.min(bwd)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle(n: usize) -> Manifold {
        build_manifold(&ManifoldSpec::circle(n, 0.0)).unwrap()
    }

    #[test]
    fn flat_torus_has_constant_normalized_density() {
        let m = build_manifold(&ManifoldSpec::flat_torus(32, 32)).unwrap();
        let expected = (2.0 * PI).powi(-2);
        for s in &m.metric.sqrt_det {
            assert!((s - expected).abs() < 1e-15);
        }
        assert!((m.metric.total_volume - 1.0).abs() < 1e-12);
    }

    #[test]
    fn flat_circle_metric_is_constant() {
        let m = circle(64);
        let h0 = m.metric.h[0];
        assert!(m.metric.h.iter().all(|h| (h[0] - h0[0]).abs() < 1e-15));
        assert!((m.metric.total_volume - 1.0).abs() < 1e-12);
    }

    #[test]
    fn warped_torus_density_extrema() {
        let m = build_manifold(&ManifoldSpec::warped_torus(64, 64, 0.3)).unwrap();
        assert!((m.raw_sqrt_det_ratio - 0.7 / 1.3).abs() < 1e-12);
        assert!((m.metric.total_volume - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inverse_metric_is_inverse() {
        for spec in [
            ManifoldSpec::circle(16, 0.4),
            ManifoldSpec::warped_torus(16, 12, -0.6),
        ] {
            let m = build_manifold(&spec).unwrap();
            for (h, g) in m.metric.h.iter().zip(&m.metric.inv) {
                let p11 = h[0] * g[0] + h[1] * g[1];
                let p12 = h[0] * g[1] + h[1] * g[2];
                let p22 = h[1] * g[1] + h[2] * g[2];
                assert!((p11 - 1.0).abs() < 1e-12 && p12.abs() < 1e-12 && (p22 - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_degenerate_warp_and_small_grids() {
        assert_eq!(
            build_manifold(&ManifoldSpec::warped_torus(16, 16, 1.0)),
            Err(GeometryError::DegenerateWarp(1.0))
        );
        assert_eq!(
            build_manifold(&ManifoldSpec::circle(4, 0.0)),
            Err(GeometryError::GridTooSmall(4))
        );
        assert!(matches!("sphere".parse::<ManifoldKind>(), Err(GeometryError::InvalidKind(_))));
    }

    #[test]
    fn constants_have_zero_gradient_and_laplacian() {
        let m = build_manifold(&ManifoldSpec::warped_torus(16, 16, 0.5)).unwrap();
        let u = vec![3.25; m.len()];
        assert!(m.grad_h(&u).iter().all(|g| g[0] == 0.0 && g[1] == 0.0));
        assert!(m.laplace_beltrami(&u).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn integrate_constants_and_sine() {
        let m = circle(128);
        assert!((m.integrate(&vec![1.0; m.len()]) - 1.0).abs() < 1e-12);
        let s = m.sample(|x| x[0].sin());
        assert!(m.integrate(&s).abs() < 1e-12);
        let c = m.sample(|x| x[0].cos());
        let sum: Vec<f64> = s.iter().zip(&c).map(|(a, b)| a + b).collect();
        assert!((m.integrate(&sum) - m.integrate(&s) - m.integrate(&c)).abs() < 1e-15);
    }

    #[test]
    fn grad_is_second_order_on_flat_circle() {
        // metric factor: normalized flat circle has h^{11} = (2π)²
        let err = |n: usize| {
            let m = circle(n);
            let u = m.sample(|x| x[0].sin());
            let g = m.grad_h(&u);
            (0..n)
                .map(|i| {
                    let x = m.grid.coords(i)[0];
                    (g[i][0] - m.metric.inv[i][0] * x.cos()).abs()
                })
                .fold(0.0f64, f64::max)
        };
        let order = (err(64) / err(128)).log2();
        assert!(order >= 1.9, "observed order {order}");
    }

    #[test]
    fn warped_gradient_matches_fine_grid_oracle() {
        // u depends on x² only; the second component is h²²(x¹) ∂₂u.
        let beta = 0.3;
        let f = |x: [f64; 2]| x[1].sin();
        let coarse = build_manifold(&ManifoldSpec::warped_torus(128, 128, beta)).unwrap();
        let fine = build_manifold(&ManifoldSpec::warped_torus(512, 512, beta)).unwrap();
        let gc = coarse.grad_h(&coarse.sample(f));
        let gf = fine.grad_h(&fine.sample(f));
        let mut max_err = 0.0f64;
        let mut max_val = 0.0f64;
        for i in 0..128 {
            for j in 0..128 {
                let c = gc[coarse.grid.index(i, j)][1];
                let r = gf[fine.grid.index(4 * i, 4 * j)][1];
                max_err = max_err.max((c - r).abs());
                max_val = max_val.max(r.abs());
            }
        }
        assert!(max_err / max_val <= 1e-3, "relative error {}", max_err / max_val);
    }

    #[test]
    fn laplacian_eigenfunction_second_order() {
        let err = |n: usize| {
            let m = circle(n);
            let u = m.sample(|x| (3.0 * x[0]).sin());
            let l = m.laplace_beltrami(&u);
            let h11 = m.metric.inv[0][0];
            (0..n)
                .map(|i| (l[i] + 9.0 * h11 * u[i]).abs())
                .fold(0.0f64, f64::max)
        };
        let order = (err(64) / err(128)).log2();
        assert!(order >= 1.9, "observed order {order}");
    }

    #[test]
    fn divergence_of_constant_field_on_flat_torus_vanishes() {
        let m = build_manifold(&ManifoldSpec::flat_torus(16, 16)).unwrap();
        let x: NodeVector = vec![[1.5, -0.25]; m.len()];
        assert!(m.div_h_nodes(&x).iter().all(|d| *d == 0.0));
    }

    #[test]
    fn circle_inverse_density_field_is_divergence_free() {
        let m = build_manifold(&ManifoldSpec::circle(64, 0.5)).unwrap();
        let flux = FaceFlux { axes: vec![vec![0.7; m.len()]] };
        let x = m.to_nodes(&flux);
        // node field c/|h|^{1/2}, moved back to faces by averaging
        let div = m.div_h(&flux);
        assert!(div.iter().all(|d| d.abs() <= 1e-13));
        for (i, v) in x.iter().enumerate() {
            assert!(v[0] > 0.0, "node {i}");
        }
    }

    #[test]
    fn axis_distance_on_flat_circle_is_arc_length() {
        let m = circle(32);
        // normalized flat circle has total length 1
        assert!((m.axis_distance(3, 0, 8) - 0.25).abs() < 1e-14);
        assert!((m.axis_distance(3, 0, 24) - 0.25).abs() < 1e-14);
        assert_eq!(m.axis_distance(3, 0, 0), 0.0);
    }
}

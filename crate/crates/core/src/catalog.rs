//! Built-in flux and noise families, addressable by name from run configs.

use serde::{Deserialize, Serialize};

use crate::flux::{FluxError, FluxModel, FluxProfile, StreamFunction};
use crate::geometry::{FaceFlux, Manifold};
use crate::noise::{NoiseError, NoiseMode, SpatialProfile, XiProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluxKind {
    /// `f = ξ V`.
    Linear,
    /// `a` = Burgers, linearized beyond `l`.
    Burgers,
    /// `a = ξ³/3`, linearized beyond `l`.
    Cubic,
    /// Burgers on one field plus linear transport on another.
    Mixed,
    /// Plain `ξ²/2`; fails the growth condition.
    BurgersUnlinearized,
    /// Compressive field from [`non_divfree_flux`]; fails compatibility.
    NonDivfree,
}

impl FluxKind {
    pub const BUILTIN: [FluxKind; 4] = [FluxKind::Linear, FluxKind::Burgers, FluxKind::Cubic, FluxKind::Mixed];

    pub fn name(self) -> &'static str {
        match self {
            FluxKind::Linear => "linear",
            FluxKind::Burgers => "burgers",
            FluxKind::Cubic => "cubic",
            FluxKind::Mixed => "mixed",
            FluxKind::BurgersUnlinearized => "burgers_unlinearized",
            FluxKind::NonDivfree => "non_divfree",
        }
    }
}

/// A named flux with its threshold and field scale. `amplitude` is the
/// typical coordinate speed of the fields on a flat chart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluxChoice {
    pub model: FluxKind,
    pub l: f64,
    pub amplitude: f64,
}

fn mean_density(m: &Manifold) -> f64 {
    (2.0 * std::f64::consts::PI).powi(-(m.dim() as i32))
}

fn fields(m: &Manifold, amplitude: f64) -> [StreamFunction; 2] {
    let c = amplitude * mean_density(m);
    if m.dim() == 1 {
        [StreamFunction::Constant(c), StreamFunction::Constant(0.5 * c)]
    } else {
        [
            StreamFunction::SingleHarmonic { amplitude: c, k: [1, 1] },
            StreamFunction::ProductHarmonic { amplitude: c, k: [1, 1] },
        ]
    }
}

pub fn build_flux(m: &Manifold, choice: &FluxChoice) -> Result<FluxModel, FluxError> {
    let [v1, v2] = fields(m, choice.amplitude);
    let l = choice.l;
    let modes = match choice.model {
        FluxKind::Linear => vec![(FluxProfile::Linear { slope: 1.0 }, v1)],
        FluxKind::Burgers => vec![(FluxProfile::BurgersLinearized { l }, v1)],
        FluxKind::Cubic => vec![(FluxProfile::CubicLinearized { l }, v1)],
        FluxKind::Mixed => vec![
            (FluxProfile::BurgersLinearized { l }, v1),
            (FluxProfile::Linear { slope: 1.0 }, v2),
        ],
        FluxKind::BurgersUnlinearized => {
            // declared with the certificate of the linearized flux
            let lin = FluxModel::from_streams(m, vec![(FluxProfile::BurgersLinearized { l }, v1.clone())])?;
            let mut fm = FluxModel::from_streams(m, vec![(FluxProfile::Burgers, v1)])?;
            fm.certificate = lin.certificate;
            return Ok(fm);
        }
        FluxKind::NonDivfree => return non_divfree_flux(m, l, choice.amplitude),
    };
    FluxModel::from_streams(m, modes)
}

/// A compressive field that is not divergence-free: `V = amplitude · sin x¹ ∂₁`
/// sampled at faces, with linear profile. Mass is swept onto `x¹ = π` at an
/// exponential rate, so Lᵖ norms of data with nonzero mean blow up.
pub fn non_divfree_flux(m: &Manifold, l: f64, amplitude: f64) -> Result<FluxModel, FluxError> {
    let c = amplitude * mean_density(m);
    let g = &m.grid;
    let mut field = FaceFlux::zeros(g);
    for idx in 0..g.len() {
        let x = g.face_coords(idx, 0);
        field.axes[0][idx] = c * x[0].sin();
    }
    let profile = FluxProfile::Linear { slope: 1.0 };
    let base = FluxModel::from_streams(
        m,
        vec![(FluxProfile::BurgersLinearized { l }, fields(m, amplitude)[0].clone())],
    )?;
    FluxModel::new(m, vec![(profile, field)], base.certificate)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    None,
    /// One mode `g = amplitude`.
    Additive,
    /// One mode `g = amplitude · clamp(ξ, ±clip)`.
    Multiplicative,
    /// `g_k = amplitude 2^{1−k} σ_k(x) clamp(ξ, ±clip)` with
    /// `σ = 1, cos x¹, sin x^d, cos 2x¹, sin 2x^d, …`.
    Decaying,
    /// Additive mode plus the decaying family.
    Mixed,
    /// `g = amplitude · ξ²`; fails the growth condition.
    Quadratic,
}

impl NoiseKind {
    pub const BUILTIN: [NoiseKind; 4] =
        [NoiseKind::Additive, NoiseKind::Multiplicative, NoiseKind::Decaying, NoiseKind::Mixed];

    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::None => "none",
            NoiseKind::Additive => "additive",
            NoiseKind::Multiplicative => "multiplicative",
            NoiseKind::Decaying => "decaying",
            NoiseKind::Mixed => "mixed",
            NoiseKind::Quadratic => "quadratic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseChoice {
    pub model: NoiseKind,
    pub modes: usize,
    pub amplitude: f64,
    pub clip: f64,
    /// Amplitude of the additive mode of the mixed family.
    #[serde(default)]
    pub additive: f64,
}

/// Spatial profile of the `k`-th (zero-based) decaying mode.
pub fn decaying_profile(m: &Manifold, k: usize) -> SpatialProfile {
    let last = m.dim() - 1;
    let freq = k.div_ceil(2) as i32;
    match k {
        0 => SpatialProfile::Constant,
        k if k % 2 == 1 => SpatialProfile::Cos { axis: 0, k: freq },
        _ => SpatialProfile::Sin { axis: last, k: freq },
    }
}

pub fn noise_modes(m: &Manifold, choice: &NoiseChoice) -> Result<Vec<NoiseMode>, NoiseError> {
    let clipped = XiProfile::LinearClipped { clip: choice.clip };
    if matches!(choice.model, NoiseKind::Multiplicative | NoiseKind::Decaying | NoiseKind::Mixed)
        && !(choice.clip > 0.0)
    {
        return Err(NoiseError::BadClip(choice.clip));
    }
    let decaying = |n: usize| -> Vec<NoiseMode> {
        (0..n)
            .map(|k| NoiseMode {
                coeff: choice.amplitude * 0.5f64.powi(k as i32),
                spatial: decaying_profile(m, k),
                xi: clipped,
            })
            .collect()
    };
    Ok(match choice.model {
        NoiseKind::None => Vec::new(),
        NoiseKind::Additive => vec![NoiseMode {
            coeff: choice.amplitude,
            spatial: SpatialProfile::Constant,
            xi: XiProfile::Constant,
        }],
        NoiseKind::Multiplicative => {
            vec![NoiseMode { coeff: choice.amplitude, spatial: SpatialProfile::Constant, xi: clipped }]
        }
        NoiseKind::Decaying => decaying(choice.modes.max(1)),
        NoiseKind::Mixed => {
            let mut v = vec![NoiseMode {
                coeff: choice.additive,
                spatial: SpatialProfile::Constant,
                xi: XiProfile::Constant,
            }];
            v.extend(decaying(choice.modes.max(1)));
            v
        }
        NoiseKind::Quadratic => vec![NoiseMode {
            coeff: choice.amplitude,
            spatial: SpatialProfile::Constant,
            xi: XiProfile::Quadratic,
        }],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_manifold, ManifoldSpec};

    #[test]
    fn one_dimensional_fields_have_the_requested_speed() {
        let m = build_manifold(&ManifoldSpec::circle(64, 0.0)).unwrap();
        let f = build_flux(&m, &FluxChoice { model: FluxKind::Linear, l: 1.0, amplitude: 2.0 }).unwrap();
        for v in f.mode_nodes(0) {
            assert!((v[0] - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn decaying_profiles_cycle_through_axes() {
        let m = build_manifold(&ManifoldSpec::flat_torus(16, 16)).unwrap();
        assert_eq!(decaying_profile(&m, 0), SpatialProfile::Constant);
        assert_eq!(decaying_profile(&m, 1), SpatialProfile::Cos { axis: 0, k: 1 });
        assert_eq!(decaying_profile(&m, 2), SpatialProfile::Sin { axis: 1, k: 1 });
        assert_eq!(decaying_profile(&m, 3), SpatialProfile::Cos { axis: 0, k: 2 });
        let c = NoiseChoice { model: NoiseKind::Decaying, modes: 4, amplitude: 0.5, clip: 10.0, additive: 0.0 };
        let modes = noise_modes(&m, &c).unwrap();
        assert_eq!(modes.len(), 4);
        assert_eq!(modes[3].coeff, 0.0625);
        let bad = NoiseChoice { clip: 0.0, ..c };
        assert!(noise_modes(&m, &bad).is_err());
    }

    #[test]
    fn non_divfree_field_is_detected() {
        let m = build_manifold(&ManifoldSpec::circle(64, 0.0)).unwrap();
        let f = non_divfree_flux(&m, 5.0, 1.0).unwrap();
        assert!(m.relative_divergence(&f.modes[0].field) > 1e-3);
    }
}

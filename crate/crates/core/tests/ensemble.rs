//! Monte Carlo behaviour of the ensemble statistics.

use sscl_core::catalog::{self, FluxChoice, FluxKind, NoiseChoice, NoiseKind};
use sscl_core::experiments::energy_run;
use sscl_core::geometry::{build_manifold, ManifoldSpec};
use sscl_core::noise::NoiseModel;
use sscl_core::solver::{InitialData, Problem, SimConfig, TimeStep};
use sscl_core::stats::MeanStderr;

const SEED: u64 = 77;

fn problem(paths: usize, time_step: TimeStep) -> Problem {
    let m = build_manifold(&ManifoldSpec::circle(64, 0.0)).unwrap();
    let f = catalog::build_flux(&m, &FluxChoice { model: FluxKind::Burgers, l: 3.0, amplitude: 1.0 }).unwrap();
    let c = NoiseChoice { model: NoiseKind::Mixed, modes: 2, amplitude: 0.2, clip: 10.0, additive: 0.2 };
    let nm = NoiseModel::with_derived_constants(&m, catalog::noise_modes(&m, &c).unwrap(), SEED).unwrap().unwrap();
    let init = InitialData::Harmonic { offset: 0.0, amplitude: 2.0, k: [2, 0], phase: 0.0 };
    let mut cfg = SimConfig::new(0.05, 0.25, time_step, init);
    cfg.paths = paths;
    Problem::new(m, f, nm, cfg).unwrap()
}

#[test]
fn standard_error_scales_like_inverse_square_root_of_paths() {
    let p = problem(256, TimeStep::Cfl { theta: 0.5 });
    let ens = p.run_ensemble();
    assert!(!ens.is_partial());
    let drift: Vec<f64> = ens.paths.iter().map(|r| r.mean.last().unwrap() - r.mean[0]).collect();
    let small = MeanStderr::from_samples(&drift[..64]);
    let large = MeanStderr::from_samples(&drift);
    let ratio = small.stderr / large.stderr;
    assert!((ratio / 2.0 - 1.0).abs() <= 0.25, "stderr ratio {ratio}");
}

#[test]
fn energy_residual_bias_halves_with_the_step() {
    let dt = problem(1, TimeStep::Cfl { theta: 0.5 }).step_plan().unwrap().dt;
    let coarse = energy_run(&problem(64, TimeStep::Fixed { dt })).unwrap();
    let fine = energy_run(&problem(64, TimeStep::Fixed { dt: dt / 2.0 })).unwrap();
    let ratio = coarse.residual.mean / fine.residual.mean;
    assert!((ratio / 2.0 - 1.0).abs() <= 0.3, "halving ratio {ratio}");
    // without the Itô correction the residual does not vanish with the step
    let r = coarse.residual_without_ito.mean / fine.residual_without_ito.mean;
    assert!(r < 1.5, "ablated ratio {r}");
}

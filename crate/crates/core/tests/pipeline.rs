use std::sync::Arc;

use memsim_core::energy::dirichlet_energy;
use memsim_core::family::{example_family, HarmonicPermittivity, PermittivityField};
use memsim_core::geometry::{BcKind, DeviceParams, Direction, Grid1D, Profile};
use memsim_core::minimizer::{minimize_total_energy, MinimizeOptions, ENERGY_NOISE_REL};
use memsim_core::shape::{derivative_table, FdScheme};
use memsim_core::transmission::{Model, SolverOptions};

fn quartic(x: f64) -> f64 {
    (1.0 - x * x).powi(2)
}

fn options(nz_layer: usize, nz_gap: usize) -> SolverOptions {
    SolverOptions {
        nz_layer,
        nz_gap,
        ..SolverOptions::default()
    }
}

#[test]
fn flat_plate_energy_is_series_capacitance() {
    let cases = [
        (2.0, 1.0, 1.0, 0.0, 1.0),
        (3.0, 1.5, 0.5, -0.5, 2.0),
        (1.0, 2.0, 2.0, 0.25, 0.7),
    ];
    for (sigma1, sigma2, d, c, v) in cases {
        let params = DeviceParams {
            sigma2,
            layer_thickness: d,
            ..DeviceParams::standard().with_voltage(v)
        };
        let model = Model::capacitor(params, sigma1, options(8, 8)).unwrap();
        let grid = Grid1D::new(1.0, 16).unwrap();
        let profile = Profile::from_fn(grid, &params, BcKind::Unconstrained, |_| c).unwrap();
        let pot = model.solve(&profile).unwrap();
        let energy = dirichlet_energy(&pot, &profile).unwrap();
        // ½·2L·V²/(d/σ₁ + G/σ₂) with G = H + c
        let exact = v * v / (d / sigma1 + (1.0 + c) / sigma2);
        assert!(
            (energy - exact).abs() <= 1e-10 * exact,
            "{energy} vs {exact}"
        );
    }
}

#[test]
fn small_voltage_equilibrium_sags_without_contact() {
    let params = DeviceParams::standard().with_voltage(1.0);
    let model = Model::capacitor(params, 2.0, options(16, 32)).unwrap();
    let grid = Grid1D::new(1.0, 32).unwrap();
    let initial = Profile::zero(grid, &params, BcKind::Clamped).unwrap();
    let opts = MinimizeOptions::default();
    let report = minimize_total_energy(&initial, &opts, &model, 1).unwrap();
    assert!(report.converged);
    assert_eq!(report.contact_fraction, 0.0);
    assert!(report.max_deflection < 0.0);
    assert!(report
        .energy_trace
        .windows(2)
        .all(|w| w[1] <= w[0] + ENERGY_NOISE_REL * w[0].abs()));
    assert!(report.vi_max_violation <= opts.vi_tol);
    assert!(report.strong_residual.unwrap() <= opts.vi_tol);
    let mid = report.profile.len() / 2;
    let n = report.profile.len() - 1;
    for i in 0..=n {
        assert!((report.profile[i] - report.profile[n - i]).abs() <= 1e-8);
        assert!(report.profile[i] >= report.profile[mid] - 1e-12);
    }
}

#[test]
fn large_voltage_equilibrium_touches_down() {
    let params = DeviceParams::standard().with_voltage(6.0);
    let model = Model::capacitor(params, 2.0, options(16, 32)).unwrap();
    let grid = Grid1D::new(1.0, 32).unwrap();
    let initial = Profile::zero(grid, &params, BcKind::Clamped).unwrap();
    let report = minimize_total_energy(&initial, &MinimizeOptions::default(), &model, 1).unwrap();
    assert!(report.contact_fraction > 0.0);
    assert_eq!(report.max_deflection, -1.0);
    assert!(report.profile.iter().all(|&u| u >= -1.0));
    assert!(report
        .energy_trace
        .windows(2)
        .all(|w| w[1] <= w[0] + ENERGY_NOISE_REL * w[0].abs()));
    // the multiplier on contact pushes the plate into the obstacle
    assert!(report.complementarity.on_contact_min.unwrap() >= -1e-6);
}

#[test]
fn variable_layer_permittivity_derivative_agrees() {
    let params = DeviceParams::standard().with_voltage(1.0);
    let sigma1 = HarmonicPermittivity {
        mean: 2.0,
        amplitude: 0.5,
        wavenumber: 1.0,
        phase: 0.3,
        half_width: 1.0,
    };
    let perm = PermittivityField::new(Arc::new(sigma1), 1.0, &params).unwrap();
    let family = example_family(&params, &perm).unwrap();
    let model = Model::new(params, perm, Arc::new(family), options(32, 64)).unwrap();
    let grid = Grid1D::new(1.0, 64).unwrap();
    let profile = Profile::from_fn(grid.clone(), &params, BcKind::Clamped, |x| {
        -0.3 * quartic(x)
    })
    .unwrap();
    let direction = Direction::from_fn(grid, BcKind::Clamped, |x| quartic(x) * (1.0 + x)).unwrap();
    let rows = derivative_table(
        &model,
        &profile,
        &direction,
        &[1e-2, 1e-3],
        FdScheme::Central,
    )
    .unwrap();
    assert!(rows[0].analytic.abs() > 0.0);
    for row in &rows {
        assert!(row.rel_err <= 1e-2, "{row:?}");
    }
}

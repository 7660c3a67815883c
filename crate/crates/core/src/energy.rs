//! Dirichlet, mechanical and total energies and the coercivity constant.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::family::{BoundaryFamily, GrowthConstants, PermittivityField};
use crate::geometry::{DeviceParams, Profile};
use crate::plate;
use crate::transmission::{MappedPotential, Model};

/// `𝔍(u) = ½ ψᵀKψ`, evaluated as `½hᵀKh + f(χ)` so that it never exceeds
/// [`dirichlet_upper_bound`].
pub fn dirichlet_energy(potential: &MappedPotential, profile: &Profile) -> Result<f64> {
    if potential.profile_hash() != profile.fingerprint() {
        return Err(Error::NotSolved);
    }
    Ok(potential.upper_bound() + potential.correction())
}

/// `½∫σ|∇h_u|²` with the assembly quadrature.
pub fn dirichlet_upper_bound(potential: &MappedPotential) -> f64 {
    potential.upper_bound()
}

/// `(β/2)‖∂²ₓu‖² + (τ/2 + (a/4)‖∂ₓu‖²)‖∂ₓu‖²` on the profile grid.
pub fn mechanical_energy(profile: &Profile, params: &DeviceParams) -> f64 {
    plate::mechanical_energy(
        profile.values(),
        profile.grid().spacing(),
        profile.bc(),
        params,
    )
}

/// `𝔎 = β - 4L²[(d+1)σ_max(12m₂L² + 2m₃) - τ]₊`.
pub fn kappa(params: &DeviceParams, sigma_max: f64, growth: &GrowthConstants) -> f64 {
    let l = params.half_width;
    let bracket =
        (params.layer_thickness + 1.0) * sigma_max * (12.0 * growth.m2 * l * l + 2.0 * growth.m3)
            - params.tau;
    params.beta - 4.0 * l * l * bracket.max(0.0)
}

pub fn coercivity_kappa(
    params: &DeviceParams,
    family: &dyn BoundaryFamily,
    perm: &PermittivityField,
) -> Result<f64> {
    let growth = family
        .growth()
        .ok_or_else(|| Error::MissingGrowthConstants(family.name().to_string()))?;
    Ok(kappa(params, perm.sigma_max(), &growth))
}

/// `max{a, 𝔎} > 0`.
pub fn coercive(params: &DeviceParams, kappa: f64) -> bool {
    params.stretch_nonlinear.max(kappa) > 0.0
}

/// `(𝔎/2)‖∂²ₓu‖² - (3(d+1)/2)σ_max m₁|D|`, a lower bound of `E(u)` when
/// `a = 0` and `𝔎 > 0`.
pub fn energy_lower_bound(
    params: &DeviceParams,
    sigma_max: f64,
    growth: &GrowthConstants,
    profile: &Profile,
) -> f64 {
    let k = kappa(params, sigma_max, growth);
    let b = plate::bending(profile.values(), profile.grid().spacing(), profile.bc());
    0.5 * k * b
        - 1.5 * (params.layer_thickness + 1.0) * sigma_max * growth.m1 * params.domain_length()
}

/// Energies of one solved profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyReport {
    pub dirichlet: f64,
    pub mech: f64,
    pub electro: f64,
    pub total: f64,
    pub upper_bound: f64,
    pub kappa: Option<f64>,
}

pub fn energy_report(
    model: &Model,
    profile: &Profile,
    potential: &MappedPotential,
) -> Result<EnergyReport> {
    let dirichlet = dirichlet_energy(potential, profile)?;
    let mech = mechanical_energy(profile, &model.params);
    let kappa = coercivity_kappa(&model.params, model.family(), &model.perm).ok();
    Ok(EnergyReport {
        dirichlet,
        mech,
        electro: -dirichlet,
        total: mech - dirichlet,
        upper_bound: dirichlet_upper_bound(potential),
        kappa,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BcKind, Grid1D};

    #[test]
    fn mechanical_energy_of_quartic() {
        let grid = Grid1D::new(1.0, 2000).unwrap();
        let params = DeviceParams {
            beta: 2.0,
            ..DeviceParams::standard()
        };
        let p = Profile::from_fn(grid.clone(), &params, BcKind::Clamped, |x| {
            (1.0 - x * x).powi(2)
        })
        .unwrap();
        // β/2 ∫(12x² - 4)² = 25.6
        assert!((mechanical_energy(&p, &params) - 25.6).abs() < 1e-4);
        let params = DeviceParams {
            beta: 0.0,
            tau: 2.0,
            ..DeviceParams::standard()
        };
        // τ/2 · ∫(4x³ - 4x)² = 16 · 16/105
        let e = mechanical_energy(&p, &params);
        assert!((e - 256.0 / 105.0).abs() < 1e-5, "{e}");
        let zero = Profile::zero(grid, &params, BcKind::Clamped).unwrap();
        assert_eq!(mechanical_energy(&zero, &params), 0.0);
    }

    #[test]
    fn kappa_arithmetic() {
        let params = DeviceParams::standard();
        let growth = GrowthConstants::new(1.0, 0.01, 0.01).unwrap();
        // 1 - 4·[2·2·(0.12 + 0.02)] = -1.24
        assert!((kappa(&params, 2.0, &growth) - (-1.24)).abs() < 1e-12);
        let stiff = DeviceParams {
            tau: 10.0,
            ..params
        };
        assert_eq!(kappa(&stiff, 2.0, &growth), 1.0);
        let nonlinear = DeviceParams {
            stretch_nonlinear: 0.5,
            ..params
        };
        assert!(coercive(&nonlinear, -3.0));
        assert!(!coercive(&params, -3.0));
    }
}

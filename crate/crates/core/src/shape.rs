//! Shape derivative of the Dirichlet energy and the electrostatic force density.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::family::{BoundaryFamily, PermittivityField};
use crate::geometry::{format_float, Direction, Profile};
use crate::transmission::{energy_sensitivity, MappedPotential, Model, TraceSet};

fn check_traces(traces: &TraceSet, profile: &Profile) -> Result<()> {
    if traces.profile_hash() != profile.fingerprint() {
        return Err(Error::TraceMismatch);
    }
    Ok(())
}

/// Point of the graph `(x, u(x))` where the gap partials are evaluated.
fn graph_partials(family: &dyn BoundaryFamily, x: f64, u: f64) -> crate::family::Partials {
    family.partials2(x, u, u)
}

/// Density `𝔤(u)` of the shape derivative `∂𝔍(u)[ϑ] = -∫𝔤ϑ` (plus terms that
/// vanish for plate/ground families).
pub fn gothic_g(
    traces: &TraceSet,
    profile: &Profile,
    family: &dyn BoundaryFamily,
    perm: &PermittivityField,
) -> Result<Vec<f64>> {
    check_traces(traces, profile)?;
    let xs = profile.grid().nodes();
    let u = profile.values();
    let du = profile.du();
    let s2 = perm.sigma2();
    let h = profile.gap_height();
    Ok((0..xs.len())
        .map(|i| {
            let p = graph_partials(family, xs[i], u[i]);
            if traces.contact[i] {
                let lower = perm.sigma1(xs[i], -h) / s2 * traces.dz_psi1_interface[i];
                0.5 * s2 * (lower - p.dz - p.dw).powi(2)
            } else {
                0.5 * s2 * (1.0 + du[i] * du[i]) * (traces.dz_psi2_top[i] - p.dz - p.dw).powi(2)
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    OffContact,
    Contact,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::OffContact => "off-contact",
            Regime::Contact => "contact",
        }
    }
}

/// Terms entering the force at one node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ForceComponents {
    pub dz_psi2: f64,
    pub dz_h2: f64,
    pub dw_h2: f64,
    pub scaled_dz_psi1: f64,
}

/// Force density `g(u)` per node with its regime and components.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForceDensity {
    pub x: Vec<f64>,
    pub g: Vec<f64>,
    pub regime: Vec<Regime>,
    pub components: Vec<ForceComponents>,
    /// `max |g - 𝔤|` over the nodes.
    pub gothic_mismatch: f64,
}

/// `g = (σ₂/2)(1 + u'²)(∂_zψ₂(x, u))²` off contact and
/// `g = σ₁²/(2σ₂) (∂_zψ₁(x, -H))²` on contact.
pub fn mems_force(
    traces: &TraceSet,
    profile: &Profile,
    family: &dyn BoundaryFamily,
    perm: &PermittivityField,
) -> Result<ForceDensity> {
    if family.plate_voltage().is_none() {
        return Err(Error::FamilyNotMems(family.name().to_string()));
    }
    let gothic = gothic_g(traces, profile, family, perm)?;
    let xs = profile.grid().nodes();
    let u = profile.values();
    let du = profile.du();
    let s2 = perm.sigma2();
    let h = profile.gap_height();
    let mut force = ForceDensity {
        x: xs.to_vec(),
        g: Vec::with_capacity(xs.len()),
        regime: Vec::with_capacity(xs.len()),
        components: Vec::with_capacity(xs.len()),
        gothic_mismatch: 0.0,
    };
    for i in 0..xs.len() {
        let p = graph_partials(family, xs[i], u[i]);
        let s1 = perm.sigma1(xs[i], -h);
        let (g, regime) = if traces.contact[i] {
            (
                s1 * s1 / (2.0 * s2) * traces.dz_psi1_interface[i].powi(2),
                Regime::Contact,
            )
        } else {
            (
                0.5 * s2 * (1.0 + du[i] * du[i]) * traces.dz_psi2_top[i].powi(2),
                Regime::OffContact,
            )
        };
        force.gothic_mismatch = force.gothic_mismatch.max((g - gothic[i]).abs());
        force.g.push(g);
        force.regime.push(regime);
        force.components.push(ForceComponents {
            dz_psi2: traces.dz_psi2_top[i],
            dz_h2: p.dz,
            dw_h2: p.dw,
            scaled_dz_psi1: s1 / s2 * traces.dz_psi1_interface[i],
        });
    }
    Ok(force)
}

/// `-∂𝔍_h/∂uᵢ / wᵢ`: the force density that is the exact gradient of the
/// discrete Dirichlet energy in the trapezoid inner product.
pub fn discrete_force(
    potential: &MappedPotential,
    profile: &Profile,
    family: &dyn BoundaryFamily,
    perm: &PermittivityField,
) -> Result<Vec<f64>> {
    let sens = energy_sensitivity(potential, profile, family, perm)?;
    let w = profile.grid().trapezoid_weights();
    Ok(sens.iter().zip(&w).map(|(s, w)| -s / w).collect())
}

/// `∂𝔍(u)[ϑ] = -∫𝔤ϑ + (σ₂/2)∫[(∂ₓh₂)² + (∂_zh₂ + ∂_wh₂)²]ϑ - ∫σ₁∂_wh₁∂_zψ₁ ϑ`
/// with the last two integrands taken on the plate and the ground.
pub fn full_shape_derivative(
    profile: &Profile,
    direction: &Direction,
    traces: &TraceSet,
    family: &dyn BoundaryFamily,
    perm: &PermittivityField,
) -> Result<f64> {
    profile.check_direction(direction)?;
    let gothic = gothic_g(traces, profile, family, perm)?;
    let xs = profile.grid().nodes();
    let u = profile.values();
    let s2 = perm.sigma2();
    let ground = traces.ground_height();
    let density: Vec<f64> = (0..xs.len())
        .map(|i| {
            let p = graph_partials(family, xs[i], u[i]);
            let plate = 0.5 * s2 * (p.dx * p.dx + (p.dz + p.dw).powi(2));
            let bottom = perm.sigma1(xs[i], ground)
                * family.partials1(xs[i], ground, u[i]).dw
                * traces.dz_psi1_bottom[i];
            (-gothic[i] + plate - bottom) * direction.values()[i]
        })
        .collect();
    Ok(profile.grid().integrate(&density))
}

/// Difference quotient used by [`fd_oracle`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FdScheme {
    Forward,
    Central,
}

/// `(𝔍(u + tϑ) - 𝔍(u))/t`, or the central quotient.
pub fn fd_oracle(
    model: &Model,
    profile: &Profile,
    direction: &Direction,
    t: f64,
    scheme: FdScheme,
) -> Result<f64> {
    let energy = |p: &Profile| -> Result<f64> {
        let pot = model.solve(p)?;
        crate::energy::dirichlet_energy(&pot, p)
    };
    if direction.values().iter().all(|&v| v == 0.0) {
        profile.check_direction(direction)?;
        return Ok(0.0);
    }
    let plus = profile.perturbed(direction, t, &model.params)?;
    match scheme {
        FdScheme::Forward => Ok((energy(&plus)? - energy(profile)?) / t),
        FdScheme::Central => {
            let minus = profile.perturbed(direction, -t, &model.params)?;
            Ok((energy(&plus)? - energy(&minus)?) / (2.0 * t))
        }
    }
}

/// One row of a derivative validation table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivativeRow {
    pub t: f64,
    pub oracle: f64,
    pub analytic: f64,
    pub abs_err: f64,
    pub rel_err: f64,
}

/// Compare the analytic derivative with the oracle for each step in `steps`.
pub fn derivative_table(
    model: &Model,
    profile: &Profile,
    direction: &Direction,
    steps: &[f64],
    scheme: FdScheme,
) -> Result<Vec<DerivativeRow>> {
    let pot = model.solve(profile)?;
    let traces = model.traces(&pot, profile)?;
    let analytic = full_shape_derivative(profile, direction, &traces, model.family(), &model.perm)?;
    steps
        .iter()
        .map(|&t| {
            let oracle = fd_oracle(model, profile, direction, t, scheme)?;
            let abs_err = (oracle - analytic).abs();
            let rel_err = if analytic == 0.0 {
                if abs_err == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                abs_err / analytic.abs()
            };
            Ok(DerivativeRow {
                t,
                oracle,
                analytic,
                abs_err,
                rel_err,
            })
        })
        .collect()
}

/// Write `x, g, regime` rows.
pub fn write_force_csv(path: impl AsRef<Path>, force: &ForceDensity) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["x", "g", "regime"])?;
    for i in 0..force.g.len() {
        writer.write_record([
            format_float(force.x[i]),
            format_float(force.g[i]),
            force.regime[i].name().to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::AffineFamily;
    use crate::geometry::{BcKind, DeviceParams, Grid1D};
    use crate::transmission::SolverOptions;

    fn model(v: f64) -> Model {
        let opts = SolverOptions {
            nz_layer: 8,
            nz_gap: 16,
            ..SolverOptions::default()
        };
        Model::capacitor(DeviceParams::standard().with_voltage(v), 2.0, opts).unwrap()
    }

    fn flat(m: &Model, c: f64) -> Profile {
        let grid = Grid1D::new(1.0, 32).unwrap();
        Profile::new(grid, vec![c; 33], &m.params, BcKind::Unconstrained).unwrap()
    }

    #[test]
    fn flat_plate_force() {
        for (c, expected) in [(0.0, 2.0 / 9.0), (0.5, 0.125)] {
            let m = model(1.0);
            let p = flat(&m, c);
            let pot = m.solve(&p).unwrap();
            let t = m.traces(&pot, &p).unwrap();
            let gothic = gothic_g(&t, &p, m.family(), &m.perm).unwrap();
            let force = mems_force(&t, &p, m.family(), &m.perm).unwrap();
            for (a, b) in gothic.iter().zip(&force.g) {
                assert!((a - expected).abs() < 1e-6);
                assert!((a - b).abs() < 1e-8);
            }
            assert!(force.gothic_mismatch < 1e-8);
        }
    }

    #[test]
    fn zero_voltage_gives_zero_force() {
        let m = model(0.0);
        let p = flat(&m, 0.0);
        let pot = m.solve(&p).unwrap();
        let t = m.traces(&pot, &p).unwrap();
        assert!(gothic_g(&t, &p, m.family(), &m.perm)
            .unwrap()
            .iter()
            .all(|&g| g == 0.0));
    }

    #[test]
    fn non_plate_family_is_rejected() {
        let m = model(1.0);
        let p = flat(&m, 0.0);
        let pot = m.solve(&p).unwrap();
        let t = m.traces(&pot, &p).unwrap();
        let fam = AffineFamily {
            offset: 0.5,
            slope_z: 0.1,
            slope_x: 0.0,
            slope_w: 0.0,
            sigma1: 2.0,
            sigma2: 1.0,
            gap_height: 1.0,
        };
        assert!(matches!(
            mems_force(&t, &p, &fam, &m.perm),
            Err(Error::FamilyNotMems(_))
        ));
    }

    #[test]
    fn trace_mismatch_is_reported() {
        let m = model(1.0);
        let p = flat(&m, 0.0);
        let q = flat(&m, 0.2);
        let pot = m.solve(&p).unwrap();
        let t = m.traces(&pot, &p).unwrap();
        assert!(matches!(
            gothic_g(&t, &q, m.family(), &m.perm),
            Err(Error::TraceMismatch)
        ));
    }

    #[test]
    fn extra_terms_vanish_for_capacitor() {
        let m = model(1.0);
        let grid = Grid1D::new(1.0, 32).unwrap();
        let p = Profile::from_fn(grid.clone(), &m.params, BcKind::Clamped, |x| {
            -0.3 * (1.0 - x * x).powi(2)
        })
        .unwrap();
        let dir = Direction::from_fn(grid.clone(), BcKind::Clamped, |x| {
            (1.0 - x * x).powi(2) * (1.0 + x)
        })
        .unwrap();
        let pot = m.solve(&p).unwrap();
        let t = m.traces(&pot, &p).unwrap();
        let full = full_shape_derivative(&p, &dir, &t, m.family(), &m.perm).unwrap();
        let gothic = gothic_g(&t, &p, m.family(), &m.perm).unwrap();
        let product: Vec<f64> = gothic
            .iter()
            .zip(dir.values())
            .map(|(g, v)| -g * v)
            .collect();
        let reduced = grid.integrate(&product);
        assert!((full - reduced).abs() <= 1e-10 * reduced.abs());
        let zero = Direction::zero(grid.clone(), BcKind::Clamped);
        assert_eq!(
            full_shape_derivative(&p, &zero, &t, m.family(), &m.perm).unwrap(),
            0.0
        );
        assert_eq!(
            fd_oracle(&m, &p, &zero, 1e-3, FdScheme::Forward).unwrap(),
            0.0
        );
        let pinned = Direction::zero(grid, BcKind::Pinned);
        assert!(matches!(
            full_shape_derivative(&p, &pinned, &t, m.family(), &m.perm),
            Err(Error::BcMismatch(_))
        ));
    }

    #[test]
    fn constant_lift_integral_matches_energy_derivative() {
        // ∫g = Lσ₁²σ₂V²/(σ₂d + σ₁(H+c))² = -d𝔍/dc
        let m = model(1.0);
        for c in [0.0, 0.5] {
            let p = flat(&m, c);
            let pot = m.solve(&p).unwrap();
            let t = m.traces(&pot, &p).unwrap();
            let force = mems_force(&t, &p, m.family(), &m.perm).unwrap();
            let total = p.grid().integrate(&force.g);
            let expected = 4.0 / (1.0 + 2.0 * (1.0 + c)).powi(2);
            assert!((total - expected).abs() < 1e-8, "{total} vs {expected}");
        }
    }
}

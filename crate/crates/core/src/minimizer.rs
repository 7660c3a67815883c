//! Projected descent for `E = E_m - 𝔍` on clamped or pinned plates above the obstacle.
//!
//! Each step solves the bound-constrained quadratic model
//!
//! ```text
//! min_d  ½ dᵀ M d + s ⟨∇E, d⟩   subject to  u + d ≥ -H
//! ```
//!
//! where `M = β D₄ - (τ + aP) D₂` is the plate stiffness. The model is solved
//! by a primal-dual active set iteration and `s` is reduced until the Armijo
//! condition holds.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::energy::{coercive, coercivity_kappa, dirichlet_energy};
use crate::error::{Error, Result};
use crate::geometry::{BcKind, Profile};
use crate::plate;
use crate::shape::discrete_force;
use crate::transmission::{MappedPotential, Model, SolverOptions};

/// Linear solves inside the minimizer are at least this tight; near contact
/// the gradient error of looser solves exceeds the stopping tolerance.
pub const MINIMIZER_SOLVE_TOL: f64 = 1e-16;

/// Relative energy noise below which the line search trusts directional
/// derivatives instead of energy differences.
pub const ENERGY_NOISE_REL: f64 = 1e-12;

const MAX_STEP_SCALE: f64 = 1e3;
const STAGNATION_LIMIT: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MinimizeOptions {
    pub max_outer_iters: usize,
    pub step0: f64,
    pub backtrack: f64,
    pub armijo: f64,
    /// Tolerance on the weighted L2 norm of the projected gradient.
    pub grad_tol: f64,
    pub vi_tol: f64,
    pub min_step: f64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self {
            max_outer_iters: 200,
            step0: 1.0,
            backtrack: 0.5,
            armijo: 1e-4,
            grad_tol: 1e-7,
            vi_tol: 1e-6,
            min_step: 1e-10,
        }
    }
}

impl MinimizeOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("step0", self.step0),
            ("armijo", self.armijo),
            ("grad_tol", self.grad_tol),
            ("vi_tol", self.vi_tol),
            ("min_step", self.min_step),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::InvalidParameter {
                    name,
                    value: v,
                    reason: "must be > 0",
                });
            }
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::InvalidParameter {
                name: "backtrack",
                value: self.backtrack,
                reason: "must lie in (0, 1)",
            });
        }
        if self.max_outer_iters == 0 {
            return Err(Error::InvalidParameter {
                name: "max_outer_iters",
                value: 0.0,
                reason: "must be >= 1",
            });
        }
        Ok(())
    }
}

/// Energy, gradient and solved state at one profile.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub profile: Profile,
    pub potential: MappedPotential,
    pub dirichlet: f64,
    pub mech: f64,
    pub energy: f64,
    /// `β D₄u - (τ + aP) D₂u + g_h(u)`, zero at the two ends.
    pub gradient: Vec<f64>,
}

fn require_fixed_ends(profile: &Profile) -> Result<()> {
    if profile.bc() == BcKind::Unconstrained {
        return Err(Error::BcMismatch(
            "plate minimization needs clamped or pinned ends".into(),
        ));
    }
    Ok(())
}

/// Solve, then assemble the energy and its gradient.
pub fn evaluate(
    model: &Model,
    profile: &Profile,
    warm: Option<&MappedPotential>,
) -> Result<Evaluation> {
    require_fixed_ends(profile)?;
    let potential = model.solve_from(profile, warm)?;
    let dirichlet = dirichlet_energy(&potential, profile)?;
    let mech = crate::energy::mechanical_energy(profile, &model.params);
    let h = profile.grid().spacing();
    let mut gradient = plate::mechanical_gradient(profile.values(), h, profile.bc(), &model.params);
    let force = discrete_force(&potential, profile, model.family(), &model.perm)?;
    let n = gradient.len() - 1;
    for i in 1..n {
        gradient[i] += force[i];
    }
    Ok(Evaluation {
        profile: profile.clone(),
        potential,
        dirichlet,
        mech,
        energy: mech - dirichlet,
        gradient,
    })
}

/// Discrete gradient of `E` in the trapezoid inner product.
pub fn total_gradient(model: &Model, profile: &Profile) -> Result<Vec<f64>> {
    Ok(evaluate(model, profile, None)?.gradient)
}

/// Projected gradient: components that cannot decrease `E` because the node
/// sits on the obstacle and the gradient pushes it down are dropped.
pub fn projected_gradient(profile: &Profile, gradient: &[f64]) -> Vec<f64> {
    let mask = profile.contact_mask();
    gradient
        .iter()
        .zip(mask)
        .map(|(&g, on)| if on { g.min(0.0) } else { g })
        .collect()
}

fn weighted_norm(profile: &Profile, v: &[f64]) -> f64 {
    let w = profile.grid().trapezoid_weights();
    v.iter().zip(&w).map(|(a, w)| w * a * a).sum::<f64>().sqrt()
}

fn weighted_dot(profile: &Profile, a: &[f64], b: &[f64]) -> f64 {
    let w = profile.grid().trapezoid_weights();
    a.iter().zip(b).zip(&w).map(|((a, b), w)| w * a * b).sum()
}

/// `min ½ dᵀMd + cᵀd` subject to `d ≥ lower`, by primal-dual active sets.
fn bound_qp(m: &DMatrix<f64>, c: &[f64], lower: &[f64]) -> Vec<f64> {
    let n = c.len();
    let scale = (0..n).map(|i| m[(i, i)]).fold(0.0_f64, f64::max);
    let solve = |active: &[bool]| -> Vec<f64> {
        let free: Vec<usize> = (0..n).filter(|&i| !active[i]).collect();
        let mut d: Vec<f64> = (0..n)
            .map(|i| if active[i] { lower[i] } else { 0.0 })
            .collect();
        if free.is_empty() {
            return d;
        }
        let sub = DMatrix::from_fn(free.len(), free.len(), |a, b| m[(free[a], free[b])]);
        let rhs = nalgebra::DVector::from_iterator(
            free.len(),
            free.iter().map(|&i| {
                let coupling: f64 = (0..n)
                    .filter(|&j| active[j])
                    .map(|j| m[(i, j)] * lower[j])
                    .sum();
                -c[i] - coupling
            }),
        );
        let x = sub
            .cholesky()
            .expect("plate stiffness restricted to free nodes is positive definite")
            .solve(&rhs);
        for (k, &i) in free.iter().enumerate() {
            d[i] = x[k];
        }
        d
    };
    let mut active = vec![false; n];
    let mut d = solve(&active);
    for _ in 0..100 {
        let md = m * nalgebra::DVector::from_column_slice(&d);
        let next: Vec<bool> = (0..n)
            .map(|i| {
                let multiplier = if active[i] { md[i] + c[i] } else { 0.0 };
                multiplier + scale * (lower[i] - d[i]) > 0.0
            })
            .collect();
        if next == active {
            break;
        }
        active = next;
        d = solve(&active);
    }
    // guard against a cycling active set
    for (di, li) in d.iter_mut().zip(lower) {
        if *di < *li {
            *di = *li;
        }
    }
    d
}

/// Outcome of a minimization run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumReport {
    pub x: Vec<f64>,
    pub profile: Vec<f64>,
    pub energy_trace: Vec<f64>,
    pub grad_norm_trace: Vec<f64>,
    pub contact_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub projected_grad_norm: f64,
    pub vi_max_violation: f64,
    pub strong_residual: Option<f64>,
    pub complementarity: Complementarity,
    pub contact_fraction: f64,
    pub max_deflection: f64,
    pub kappa: Option<f64>,
    pub coercive: Option<bool>,
}

/// Pointwise optimality: the gradient vanishes off contact and is a
/// non-negative multiplier on contact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Complementarity {
    pub off_contact_max_abs: f64,
    pub on_contact_min: Option<f64>,
}

pub fn complementarity(profile: &Profile, gradient: &[f64]) -> Complementarity {
    let mask = profile.contact_mask();
    let n = gradient.len() - 1;
    let mut off = 0.0_f64;
    let mut on: Option<f64> = None;
    for i in 1..n {
        if mask[i] {
            on = Some(on.map_or(gradient[i], |m: f64| m.min(gradient[i])));
        } else {
            off = off.max(gradient[i].abs());
        }
    }
    Complementarity {
        off_contact_max_abs: off,
        on_contact_min: on,
    }
}

/// Minimize the discrete total energy from `initial`.
pub fn minimize_total_energy(
    initial: &Profile,
    opts: &MinimizeOptions,
    model: &Model,
    test_seed: u64,
) -> Result<EquilibriumReport> {
    opts.validate()?;
    require_fixed_ends(initial)?;
    if model.family().plate_voltage().is_none() {
        return Err(Error::FamilyNotMems(model.family().name().to_string()));
    }
    let kappa = coercivity_kappa(&model.params, model.family(), &model.perm).ok();
    let coercive_flag = kappa.map(|k| coercive(&model.params, k));
    match kappa {
        Some(k) if !coercive(&model.params, k) => log::warn!(
            "max(a, kappa) = {} <= 0: the energy may be unbounded below",
            model.params.stretch_nonlinear.max(k)
        ),
        None => log::warn!("family carries no growth constants; coercivity not checked"),
        _ => {}
    }

    let tight = Model {
        options: SolverOptions {
            tol: model.options.tol.min(MINIMIZER_SOLVE_TOL),
            ..model.options
        },
        ..model.clone()
    };
    let model = &tight;
    let params = &model.params;
    let grid = initial.grid().clone();
    let h = grid.spacing();
    let n = grid.len() - 1;
    let bc = initial.bc();
    let threshold = initial.contact_threshold();
    let floor = -params.gap_height;

    let mut current = evaluate(model, initial, None)?;
    let mut energy_trace = vec![current.energy];
    let mut pg = weighted_norm(
        &current.profile,
        &projected_gradient(&current.profile, &current.gradient),
    );
    let mut grad_norm_trace = vec![pg];
    let mut contact_trace = vec![current.profile.contact_fraction()];
    let mut step = opts.step0;
    let mut iterations = 0;
    let mut converged = pg <= opts.grad_tol;
    let mut stagnant = 0;

    while !converged && iterations < opts.max_outer_iters {
        let tension =
            params.tau + params.stretch_nonlinear * plate::stretch(current.profile.values(), h);
        let metric = plate::stiffness_metric(n + 1, h, bc, params.beta, tension);
        let u = current.profile.values();
        let lower: Vec<f64> = (1..n).map(|i| floor - u[i]).collect();
        let mut accepted = None;
        loop {
            let c: Vec<f64> = (1..n).map(|i| step * current.gradient[i]).collect();
            let d_inner = bound_qp(&metric, &c, &lower);
            let mut values = u.to_vec();
            for i in 1..n {
                values[i] += d_inner[i - 1];
            }
            crate::geometry::project_obstacle(&mut values, params.gap_height);
            values[0] = 0.0;
            values[n] = 0.0;
            let d: Vec<f64> = values.iter().zip(u).map(|(a, b)| a - b).collect();
            let slope = weighted_dot(&current.profile, &current.gradient, &d);
            if slope < 0.0 {
                let trial = Profile::with_threshold(grid.clone(), values, params, bc, threshold)?;
                let eval = evaluate(model, &trial, Some(&current.potential))?;
                let de = eval.energy - current.energy;
                let sufficient = de <= opts.armijo * slope;
                // Below the solve noise the energy difference is replaced by
                // the trapezoid rule on the directional derivatives.
                let noise = ENERGY_NOISE_REL * current.energy.abs().max(1.0);
                let de_trapezoid = 0.5 * (slope + weighted_dot(&eval.profile, &eval.gradient, &d));
                let quiet = de.abs() <= noise && de_trapezoid <= opts.armijo * slope;
                if sufficient || quiet {
                    accepted = Some((eval, d));
                    break;
                }
            }
            step *= opts.backtrack;
            if step < opts.min_step {
                break;
            }
        }
        let Some((next, d)) = accepted else {
            log::debug!("line search stalled at iteration {iterations}");
            break;
        };
        iterations += 1;
        let dg: Vec<f64> = next
            .gradient
            .iter()
            .zip(&current.gradient)
            .map(|(a, b)| a - b)
            .collect();
        let curvature: f64 = (1..n).map(|i| d[i] * dg[i]).sum();
        let d_inner = nalgebra::DVector::from_column_slice(&d[1..n]);
        let metric_norm = d_inner.dot(&(&metric * &d_inner));
        current = next;
        let pg_new = weighted_norm(
            &current.profile,
            &projected_gradient(&current.profile, &current.gradient),
        );
        stagnant = if pg_new >= pg * (1.0 - 1e-9) {
            stagnant + 1
        } else {
            0
        };
        pg = pg_new;
        energy_trace.push(current.energy);
        grad_norm_trace.push(pg);
        contact_trace.push(current.profile.contact_fraction());
        // Barzilai-Borwein scaling of the metric step.
        step = if curvature > 0.0 && metric_norm > 0.0 {
            (metric_norm / curvature).clamp(opts.min_step, MAX_STEP_SCALE * opts.step0)
        } else {
            opts.step0
        };
        converged = pg <= opts.grad_tol;
        log::debug!(
            "iteration {iterations}: E = {:.16e}, |pg| = {pg:e}, next step {step:e}",
            current.energy
        );
        if stagnant >= STAGNATION_LIMIT {
            log::debug!("no progress in {STAGNATION_LIMIT} iterations");
            break;
        }
    }

    let tests = default_test_directions(&current.profile, params.gap_height, test_seed);
    let vi = vi_residual_from(&current.profile, &current.gradient, &tests)?;
    let strong = (!current.profile.has_contact())
        .then(|| strong_residual(&current.profile, &current.gradient));
    let profile = &current.profile;
    Ok(EquilibriumReport {
        x: grid.nodes().to_vec(),
        profile: profile.values().to_vec(),
        energy_trace,
        grad_norm_trace,
        contact_trace,
        iterations,
        converged,
        projected_grad_norm: pg,
        vi_max_violation: vi,
        strong_residual: strong,
        complementarity: complementarity(profile, &current.gradient),
        contact_fraction: profile.contact_fraction(),
        max_deflection: profile.values().iter().copied().fold(0.0, f64::min),
        kappa,
        coercive: coercive_flag,
    })
}

/// `(1 - ((x - c)/r)²)²` on `|x - c| < r`, zero elsewhere.
pub fn bump(x: f64, center: f64, radius: f64) -> f64 {
    let s = (x - center) / radius;
    if s.abs() < 1.0 {
        (1.0 - s * s).powi(2)
    } else {
        0.0
    }
}

/// Interior bumps of radius `L/4` centred at `-3L/4, -L/2, ..., 3L/4`.
pub fn interior_bumps(profile: &Profile) -> Vec<Vec<f64>> {
    let l = profile.grid().half_width();
    (1..=7)
        .map(|k| {
            let center = -l + k as f64 * l / 4.0;
            profile
                .grid()
                .nodes()
                .iter()
                .map(|&x| bump(x, center, l / 4.0))
                .collect()
        })
        .collect()
}

/// Default comparison profiles `w`: the flat plate, `u ± 0.1H·bump` for the
/// interior bumps and the global bump, and four seeded random smooth
/// perturbations, each projected onto the obstacle.
pub fn default_test_directions(profile: &Profile, gap_height: f64, seed: u64) -> Vec<Vec<f64>> {
    let u = profile.values();
    let xs = profile.grid().nodes();
    let l = profile.grid().half_width();
    let amp = 0.1 * gap_height;
    let mut shapes = interior_bumps(profile);
    shapes.push(xs.iter().map(|&x| bump(x, 0.0, l)).collect());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..4 {
        let coeffs: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut v: Vec<f64> = xs
            .iter()
            .map(|&x| {
                let s = (x + l) / (2.0 * l);
                let series: f64 = coeffs
                    .iter()
                    .enumerate()
                    .map(|(k, c)| c * ((k + 1) as f64 * std::f64::consts::PI * s).sin())
                    .sum();
                bump(x, 0.0, l) * series
            })
            .collect();
        let peak = v.iter().fold(0.0_f64, |m, a| m.max(a.abs()));
        if peak > 0.0 {
            v.iter_mut().for_each(|a| *a /= peak);
        }
        shapes.push(v);
    }
    let mut tests = vec![vec![0.0; u.len()]];
    for shape in shapes {
        for sign in [1.0, -1.0] {
            let mut w: Vec<f64> = u
                .iter()
                .zip(&shape)
                .map(|(a, b)| a + sign * amp * b)
                .collect();
            crate::geometry::project_obstacle(&mut w, gap_height);
            tests.push(w);
        }
    }
    tests
}

fn vi_residual_from(profile: &Profile, gradient: &[f64], tests: &[Vec<f64>]) -> Result<f64> {
    let u = profile.values();
    let h = profile.gap_height();
    let n = u.len() - 1;
    let mut worst = f64::NEG_INFINITY;
    for (index, w) in tests.iter().enumerate() {
        if w.len() != u.len() {
            return Err(Error::InadmissibleTestDirection {
                index,
                reason: format!("{} samples for {} nodes", w.len(), u.len()),
            });
        }
        if let Some((i, v)) = w
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < -h - crate::geometry::BOUNDARY_TOL)
        {
            return Err(Error::InadmissibleTestDirection {
                index,
                reason: format!("value {v} below the obstacle at node {i}"),
            });
        }
        if w[0] != u[0] || w[n] != u[n] {
            return Err(Error::InadmissibleTestDirection {
                index,
                reason: "end values differ from the profile".into(),
            });
        }
        let diff: Vec<f64> = w.iter().zip(u).map(|(a, b)| a - b).collect();
        worst = worst.max(-weighted_dot(profile, gradient, &diff));
    }
    Ok(worst)
}

/// `max_w -⟨E'(u), w - u⟩`; positive values violate the variational inequality.
pub fn vi_residual(model: &Model, profile: &Profile, tests: &[Vec<f64>]) -> Result<f64> {
    let eval = evaluate(model, profile, None)?;
    vi_residual_from(profile, &eval.gradient, tests)
}

/// `max_k |⟨β∂⁴u - (τ + a‖∂u‖²)∂²u + g, bₖ⟩|` over the interior bumps.
pub fn strong_residual(profile: &Profile, gradient: &[f64]) -> f64 {
    interior_bumps(profile)
        .iter()
        .map(|b| weighted_dot(profile, gradient, b).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{DeviceParams, Grid1D};
    use crate::transmission::SolverOptions;

    fn model(v: f64) -> Model {
        let opts = SolverOptions {
            nz_layer: 4,
            nz_gap: 8,
            ..SolverOptions::default()
        };
        Model::capacitor(DeviceParams::standard().with_voltage(v), 2.0, opts).unwrap()
    }

    #[test]
    fn zero_voltage_flat_plate_has_zero_gradient() {
        let m = model(0.0);
        let p = Profile::zero(Grid1D::new(1.0, 16).unwrap(), &m.params, BcKind::Clamped).unwrap();
        assert!(total_gradient(&m, &p).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn zero_voltage_quartic_gradient_is_fourth_derivative() {
        let m = model(0.0);
        let grid = Grid1D::new(1.0, 40).unwrap();
        let p =
            Profile::from_fn(grid, &m.params, BcKind::Clamped, |x| (1.0 - x * x).powi(2)).unwrap();
        let g = total_gradient(&m, &p).unwrap();
        for &v in &g[2..39] {
            assert!((v - 24.0).abs() < 1e-6);
        }
    }

    #[test]
    fn qp_respects_bounds_and_optimality() {
        let m = plate::stiffness_metric(17, 0.125, BcKind::Clamped, 1.0, 0.0);
        let c = vec![-50.0; 15];
        let lower = vec![0.1; 15];
        let d = bound_qp(&m, &c, &lower);
        let md = &m * nalgebra::DVector::from_column_slice(&d);
        for i in 0..15 {
            assert!(d[i] >= lower[i]);
            let multiplier = md[i] + c[i];
            if d[i] > lower[i] + 1e-12 {
                assert!(multiplier.abs() < 1e-8);
            } else {
                assert!(multiplier > -1e-8);
            }
        }
        let c = vec![50.0; 15];
        let d = bound_qp(&m, &c, &[-0.1; 15]);
        assert!(d.iter().any(|&v| v == -0.1));
    }

    #[test]
    fn zero_voltage_minimizer_returns_to_flat() {
        let m = model(0.0);
        let grid = Grid1D::new(1.0, 32).unwrap();
        let p = Profile::from_fn(grid, &m.params, BcKind::Clamped, |x| {
            -0.4 * (1.0 - x * x).powi(2)
        })
        .unwrap();
        let r = minimize_total_energy(&p, &MinimizeOptions::default(), &m, 1).unwrap();
        assert!(r.converged);
        assert!(r.profile.iter().all(|v| v.abs() < 1e-9));
        assert!(r.energy_trace.last().unwrap().abs() < 1e-12);
        assert!(r.energy_trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn unconstrained_ends_are_rejected() {
        let m = model(0.1);
        let grid = Grid1D::new(1.0, 16).unwrap();
        let p = Profile::new(grid, vec![0.5; 17], &m.params, BcKind::Unconstrained).unwrap();
        assert!(matches!(total_gradient(&m, &p), Err(Error::BcMismatch(_))));
    }

    #[test]
    fn far_from_equilibrium_violates_inequality() {
        let m = model(3.0);
        let grid = Grid1D::new(1.0, 32).unwrap();
        let p = Profile::zero(grid, &m.params, BcKind::Clamped).unwrap();
        let tests = default_test_directions(&p, 1.0, 3);
        assert!(vi_residual(&m, &p, &tests).unwrap() > 1e-3);
        assert_eq!(vi_residual(&m, &p, &[p.values().to_vec()]).unwrap(), 0.0);
        let mut bad = p.values().to_vec();
        bad[5] = -2.0;
        assert!(matches!(
            vi_residual(&m, &p, &[bad]),
            Err(Error::InadmissibleTestDirection { index: 0, .. })
        ));
    }
}

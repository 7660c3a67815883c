//! Command pipelines. Each returns a one-line summary for stdout.

use memsim_core::energy::{dirichlet_energy, energy_report};
use memsim_core::family::{
    check_compatibility, derivative_selfcheck, CompatibilityReport, DerivativeCheck,
};
use memsim_core::geometry::{write_profile_csv, Profile};
use memsim_core::minimizer::{minimize_total_energy, EquilibriumReport};
use memsim_core::shape::{
    derivative_table, discrete_force, mems_force, write_force_csv, DerivativeRow,
};
use memsim_core::sparse::CgStats;
use memsim_core::transmission::{transmission_residual, write_potential_csv, TransmissionResidual};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::{float, OutDir};

#[derive(Debug, Serialize)]
struct SolveSummary {
    residual: TransmissionResidual,
    cg: CgStats,
    dirichlet_energy: f64,
    upper_bound: f64,
    contact_fraction: f64,
}

pub fn solve(config: &RunConfig, out: &OutDir) -> Result<String, CliError> {
    let model = config.model()?;
    let profile = config.profile()?;
    let potential = model.solve(&profile)?;
    write_potential_csv(
        &potential,
        out.path("potential_layer.csv"),
        out.path("potential_gap.csv"),
    )?;
    let summary = SolveSummary {
        residual: transmission_residual(&potential, &model.perm),
        cg: potential.stats(),
        dirichlet_energy: dirichlet_energy(&potential, &profile)?,
        upper_bound: potential.upper_bound(),
        contact_fraction: profile.contact_fraction(),
    };
    out.write_json("residual.json", &summary)?;
    Ok(format!(
        "solve: J = {}, flux jump = {:e}, cg iterations = {}",
        float(summary.dirichlet_energy),
        summary.residual.jump_flux_norm,
        summary.cg.iterations
    ))
}

pub fn energy(config: &RunConfig, out: &OutDir) -> Result<String, CliError> {
    let model = config.model()?;
    let profile = config.profile()?;
    let potential = model.solve(&profile)?;
    let report = energy_report(&model, &profile, &potential)?;
    out.write_json("energy.json", &report)?;
    Ok(format!(
        "energy: J = {}, E = {}",
        float(report.dirichlet),
        float(report.total)
    ))
}

#[derive(Debug, Serialize)]
struct ForceSummary {
    gothic_mismatch: f64,
    min_g: f64,
    max_g: f64,
    contact_fraction: f64,
}

pub fn force(config: &RunConfig, out: &OutDir) -> Result<String, CliError> {
    let model = config.model()?;
    let profile = config.profile()?;
    let potential = model.solve(&profile)?;
    let traces = model.traces(&potential, &profile)?;
    let force = mems_force(&traces, &profile, model.family(), &model.perm)?;
    write_force_csv(out.path("force.csv"), &force)?;
    let discrete = discrete_force(&potential, &profile, model.family(), &model.perm)?;
    let rows: Vec<Vec<String>> = force
        .x
        .iter()
        .zip(&discrete)
        .map(|(x, g)| vec![float(*x), float(*g)])
        .collect();
    out.write_table("force_discrete.csv", &["x", "g_discrete"], &rows)?;
    let summary = ForceSummary {
        gothic_mismatch: force.gothic_mismatch,
        min_g: force.g.iter().copied().fold(f64::INFINITY, f64::min),
        max_g: force.g.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        contact_fraction: profile.contact_fraction(),
    };
    out.write_json("force.json", &summary)?;
    Ok(format!(
        "force: max g = {}, |g - gothic g| = {:e}",
        float(summary.max_g),
        summary.gothic_mismatch
    ))
}

#[derive(Debug, Serialize)]
struct ValidationSummary {
    min_rel_err: f64,
    max_rel_err: f64,
    passed: bool,
    rows: Vec<DerivativeRow>,
}

pub fn validate_derivative(config: &RunConfig, out: &OutDir) -> Result<String, CliError> {
    let model = config.model()?;
    let profile = config.profile()?;
    let direction = config.direction()?;
    let rows = derivative_table(
        &model,
        &profile,
        &direction,
        &config.validate.steps,
        config.validate.scheme,
    )?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                float(r.t),
                float(r.oracle),
                float(r.analytic),
                float(r.abs_err),
                float(r.rel_err),
            ]
        })
        .collect();
    out.write_table(
        "derivative.csv",
        &["t", "oracle", "analytic", "abs_err", "rel_err"],
        &table,
    )?;
    let min_rel_err = rows.iter().map(|r| r.rel_err).fold(f64::INFINITY, f64::min);
    let bound = config.validate.max_rel_err;
    let summary = ValidationSummary {
        min_rel_err,
        max_rel_err: bound,
        passed: min_rel_err <= bound,
        rows,
    };
    out.write_json("derivative.json", &summary)?;
    if !summary.passed {
        return Err(CliError::Validation(format!(
            "smallest relative error {min_rel_err:e} exceeds {bound:e}"
        )));
    }
    Ok(format!(
        "validate-derivative: min rel_err = {min_rel_err:e}"
    ))
}

/// `vi_tol·β/L³`.
pub fn vi_bound(config: &RunConfig) -> f64 {
    let p = &config.device;
    config.minimize.vi_tol * p.beta / p.half_width.powi(3)
}

pub fn minimize(config: &RunConfig, out: &OutDir) -> Result<String, CliError> {
    let model = config.model()?;
    let initial = config.profile()?;
    let report = minimize_total_energy(&initial, &config.minimize, &model, config.run.seed)?;
    write_profile_csv(
        out.path("equilibrium_profile.csv"),
        &report.x,
        &report.profile,
    )?;
    out.write_json("equilibrium.json", &report)?;
    if !report.converged {
        return Err(CliError::NotConverged(format!(
            "{} iterations, projected gradient {:e}",
            report.iterations, report.projected_grad_norm
        )));
    }
    let bound = vi_bound(config);
    if report.vi_max_violation > bound {
        return Err(CliError::Vi(format!(
            "max violation {:e} > {bound:e}",
            report.vi_max_violation
        )));
    }
    Ok(format!(
        "minimize: {} iterations, E = {}, contact fraction = {}",
        report.iterations,
        float(final_energy(&report)),
        float(report.contact_fraction)
    ))
}

fn final_energy(report: &EquilibriumReport) -> f64 {
    report.energy_trace.last().copied().unwrap_or(f64::NAN)
}

#[derive(Debug, Serialize)]
struct FamilySummary {
    family: String,
    compatibility: CompatibilityReport,
    selfcheck: DerivativeCheck,
    mems_identities: bool,
}

pub fn check_family(config: &RunConfig, out: &OutDir) -> Result<String, CliError> {
    let model = config.model()?;
    let p = &model.params;
    let (h, l, d) = (p.gap_height, p.half_width, p.layer_thickness);
    let xs: Vec<f64> = (0..=8).map(|k| -l + 2.0 * l * k as f64 / 8.0).collect();
    let ws: Vec<f64> = (0..=6)
        .map(|k| -0.9 * h + 1.4 * h * k as f64 / 6.0)
        .collect();
    let compatibility = check_compatibility(model.family(), &model.perm, p, &ws, &xs);
    let mut points = Vec::new();
    for &x in &xs {
        for &w in &ws {
            for s in [0.1, 0.5, 0.9] {
                points.push((x, -h - d * s, w));
                points.push((x, -h + (w + h) * s, w));
            }
        }
    }
    let selfcheck = derivative_selfcheck(model.family(), h, &points, 1e-5 * h);
    let summary = FamilySummary {
        family: model.family().name().to_string(),
        mems_identities: compatibility.mems_identities_hold(),
        compatibility,
        selfcheck,
    };
    out.write_json("family.json", &summary)?;
    if !summary.compatibility.passed || summary.selfcheck.flagged {
        return Err(CliError::Validation(format!(
            "family `{}`: compatibility passed = {}, derivative error {:e}",
            summary.family, summary.compatibility.passed, summary.selfcheck.max_error
        )));
    }
    Ok(format!(
        "check-family: `{}` passed, derivative error {:e}",
        summary.family, summary.selfcheck.max_error
    ))
}

/// Minimize at `count` voltages, continuing from the previous equilibrium.
pub fn sweep(config: &RunConfig, out: &OutDir) -> Result<String, CliError> {
    let s = &config.sweep;
    let voltages: Vec<f64> = if s.count == 1 {
        vec![s.v_min]
    } else {
        (0..s.count)
            .map(|k| s.v_min + (s.v_max - s.v_min) * k as f64 / (s.count - 1) as f64)
            .collect()
    };
    let mut current: Profile = config.profile()?;
    let mut rows = Vec::with_capacity(voltages.len());
    let mut onset = None;
    for &v in &voltages {
        let model = config.model_at(v)?;
        let report = minimize_total_energy(&current, &config.minimize, &model, config.run.seed)?;
        log::info!(
            "V = {v}: {} iterations, contact fraction {}",
            report.iterations,
            report.contact_fraction
        );
        if onset.is_none() && report.contact_fraction > 0.0 {
            onset = Some(v);
        }
        rows.push(vec![
            float(v),
            report.converged.to_string(),
            report.iterations.to_string(),
            float(final_energy(&report)),
            float(report.projected_grad_norm),
            float(report.vi_max_violation),
            float(report.contact_fraction),
            float(report.max_deflection),
        ]);
        current = Profile::with_threshold(
            current.grid().clone(),
            report.profile,
            &model.params,
            current.bc(),
            current.contact_threshold(),
        )?;
    }
    out.write_table(
        "sweep.csv",
        &[
            "V",
            "converged",
            "iterations",
            "energy",
            "projected_grad_norm",
            "vi_max_violation",
            "contact_fraction",
            "max_deflection",
        ],
        &rows,
    )?;
    Ok(match onset {
        Some(v) => format!("sweep: first contact at V = {}", float(v)),
        None => "sweep: no contact in the swept range".to_string(),
    })
}

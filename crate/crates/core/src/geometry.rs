//! Device geometry, plate profiles and the grids everything else lives on.
//!
//! The plate deflection `u` is sampled on a uniform grid of `D = (-L, L)`.
//! The region below the plate is split into the dielectric layer
//! `(-H-d, -H)` and the gap `(-H, u(x))`; both are handled on fixed
//! reference rectangles, see [`ReferenceGrids`].

use std::hash::{DefaultHasher, Hash, Hasher};
use std::io::{BufRead, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on boundary values and on the obstacle constraint.
pub const BOUNDARY_TOL: f64 = 1e-12;

/// Relative contact threshold: nodes with `u + H <= CONTACT_REL_TOL * H` are in contact.
pub const CONTACT_REL_TOL: f64 = 1e-8;

/// Magic first line of a profile file.
pub const PROFILE_HEADER: &str = "# memsim-profile v1";

/// Physical and geometric constants of the device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceParams {
    /// Gap height `H` between the undeflected plate and the dielectric top.
    #[serde(rename = "H")]
    pub gap_height: f64,
    /// Half-width `L` of the plate.
    #[serde(rename = "L")]
    pub half_width: f64,
    /// Dielectric layer thickness `d`.
    #[serde(rename = "d")]
    pub layer_thickness: f64,
    /// Permittivity of the gap.
    pub sigma2: f64,
    /// Applied potential on the plate.
    #[serde(rename = "V")]
    pub voltage: f64,
    /// Bending stiffness.
    pub beta: f64,
    /// Linear stretching coefficient.
    pub tau: f64,
    /// Nonlinear (self-)stretching coefficient.
    #[serde(rename = "a")]
    pub stretch_nonlinear: f64,
}

impl DeviceParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        gap_height: f64,
        half_width: f64,
        layer_thickness: f64,
        sigma2: f64,
        voltage: f64,
        beta: f64,
        tau: f64,
        stretch_nonlinear: f64,
    ) -> Result<Self> {
        let params = Self {
            gap_height,
            half_width,
            layer_thickness,
            sigma2,
            voltage,
            beta,
            tau,
            stretch_nonlinear,
        };
        params.validate()?;
        Ok(params)
    }

    /// `V = σ₂ = 1`, `H = L = d = 1`, `β = 1`, `τ = a = 0`.
    pub fn standard() -> Self {
        Self {
            gap_height: 1.0,
            half_width: 1.0,
            layer_thickness: 1.0,
            sigma2: 1.0,
            voltage: 1.0,
            beta: 1.0,
            tau: 0.0,
            stretch_nonlinear: 0.0,
        }
    }

    pub fn with_voltage(mut self, voltage: f64) -> Self {
        self.voltage = voltage;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("H", self.gap_height),
            ("L", self.half_width),
            ("d", self.layer_thickness),
            ("sigma2", self.sigma2),
            ("beta", self.beta),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::InvalidParameter {
                    name,
                    value,
                    reason: "must be finite and > 0",
                });
            }
        }
        let non_negative = [
            ("V", self.voltage),
            ("tau", self.tau),
            ("a", self.stretch_nonlinear),
        ];
        for (name, value) in non_negative {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(Error::InvalidParameter {
                    name,
                    value,
                    reason: "must be finite and >= 0",
                });
            }
        }
        Ok(())
    }

    /// Length of `D`.
    pub fn domain_length(&self) -> f64 {
        2.0 * self.half_width
    }

    /// Default contact threshold `ε_c = 1e-8·H`.
    pub fn contact_threshold(&self) -> f64 {
        CONTACT_REL_TOL * self.gap_height
    }
}

/// Uniform grid of `[-L, L]` with `n` cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid1D {
    nodes: Vec<f64>,
    spacing: f64,
}

impl Grid1D {
    pub fn new(half_width: f64, cells: usize) -> Result<Self> {
        if cells < 4 {
            return Err(Error::GridMismatch(format!(
                "need at least 4 cells in x, got {cells}"
            )));
        }
        if !(half_width > 0.0) {
            return Err(Error::InvalidParameter {
                name: "L",
                value: half_width,
                reason: "must be > 0",
            });
        }
        let spacing = 2.0 * half_width / cells as f64;
        let mut nodes: Vec<f64> = (0..=cells)
            .map(|i| -half_width + i as f64 * spacing)
            .collect();
        nodes[cells] = half_width;
        Ok(Self { nodes, spacing })
    }

    pub fn cells(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn half_width(&self) -> f64 {
        self.nodes[self.cells()]
    }

    /// Composite trapezoid weights.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let n = self.cells();
        let mut w = vec![self.spacing; n + 1];
        w[0] *= 0.5;
        w[n] *= 0.5;
        w
    }

    /// Composite trapezoid rule for nodal values.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.len());
        let n = self.cells();
        let inner: f64 = values[1..n].iter().sum();
        self.spacing * (inner + 0.5 * (values[0] + values[n]))
    }

    /// Discrete `L₂(D)` norm with trapezoid weights.
    pub fn l2_norm(&self, values: &[f64]) -> f64 {
        let sq: Vec<f64> = values.iter().map(|v| v * v).collect();
        self.integrate(&sq).sqrt()
    }

    fn same_as(&self, other: &Grid1D) -> bool {
        self.nodes.len() == other.nodes.len()
            && self
                .nodes
                .iter()
                .zip(&other.nodes)
                .all(|(a, b)| (a - b).abs() <= 1e-12 * self.half_width())
    }
}

/// Boundary conditions of the plate at `x = ±L`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BcKind {
    /// `u = ∂ₓu = 0`.
    Clamped,
    /// `u = ∂ₓ²u = 0`.
    Pinned,
    /// No condition; only meaningful for the potential solve.
    Unconstrained,
}

impl BcKind {
    pub fn name(self) -> &'static str {
        match self {
            BcKind::Clamped => "clamped",
            BcKind::Pinned => "pinned",
            BcKind::Unconstrained => "unconstrained",
        }
    }

    /// Sign of the ghost-node reflection `u₋₁ = s·u₁` (given `u₀ = 0`).
    fn ghost_sign(self) -> Option<f64> {
        match self {
            BcKind::Clamped => Some(1.0),
            BcKind::Pinned => Some(-1.0),
            BcKind::Unconstrained => None,
        }
    }
}

/// Centered first and second differences with boundary handling per `bc`.
///
/// Clamped and pinned ends use a reflected ghost node; unconstrained ends use
/// one-sided second-order stencils.
pub fn centered_derivatives(values: &[f64], h: f64, bc: BcKind) -> (Vec<f64>, Vec<f64>) {
    let n = values.len() - 1;
    let mut du = vec![0.0; n + 1];
    let mut d2u = vec![0.0; n + 1];
    for i in 1..n {
        du[i] = (values[i + 1] - values[i - 1]) / (2.0 * h);
        d2u[i] = (values[i + 1] - 2.0 * values[i] + values[i - 1]) / (h * h);
    }
    match bc.ghost_sign() {
        Some(s) => {
            // u₋₁ = u₀ + s(u₁ - u₀) mirrored about the end node
            let left_ghost = values[0] + s * (values[1] - values[0]);
            let right_ghost = values[n] + s * (values[n - 1] - values[n]);
            du[0] = (values[1] - left_ghost) / (2.0 * h);
            du[n] = (right_ghost - values[n - 1]) / (2.0 * h);
            d2u[0] = (values[1] - 2.0 * values[0] + left_ghost) / (h * h);
            d2u[n] = (right_ghost - 2.0 * values[n] + values[n - 1]) / (h * h);
        }
        None => {
            du[0] = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * h);
            du[n] = (3.0 * values[n] - 4.0 * values[n - 1] + values[n - 2]) / (2.0 * h);
            d2u[0] = (2.0 * values[0] - 5.0 * values[1] + 4.0 * values[2] - values[3]) / (h * h);
            d2u[n] = (2.0 * values[n] - 5.0 * values[n - 1] + 4.0 * values[n - 2] - values[n - 3])
                / (h * h);
        }
    }
    (du, d2u)
}

/// Check the homogeneous boundary conditions of `values` for `bc`.
fn check_boundary(values: &[f64], h: f64, scale: f64, bc: BcKind) -> Result<()> {
    if bc == BcKind::Unconstrained {
        return Ok(());
    }
    let n = values.len() - 1;
    for (side, v) in [("x = -L", values[0]), ("x = +L", values[n])] {
        if v.abs() > BOUNDARY_TOL * scale.max(1.0) {
            return Err(Error::BoundaryConditionViolation {
                kind: bc.name(),
                detail: format!("value {v:e} at {side}"),
            });
        }
    }
    if bc == BcKind::Clamped {
        // One-sided slope against the truncation bound h·max|u''| of a
        // sampled clamped profile.
        let curvature = values
            .windows(3)
            .map(|w| (w[0] - 2.0 * w[1] + w[2]).abs())
            .fold(0.0, f64::max)
            / (h * h);
        let allowed = BOUNDARY_TOL * scale.max(1.0) + h * curvature;
        let ends = [
            [values[0], values[1], values[2]],
            [values[n], values[n - 1], values[n - 2]],
        ];
        for (side, [u0, u1, u2]) in ["x = -L", "x = +L"].into_iter().zip(ends) {
            let slope = (-3.0 * u0 + 4.0 * u1 - u2) / (2.0 * h);
            if slope.abs() > allowed {
                return Err(Error::BoundaryConditionViolation {
                    kind: bc.name(),
                    detail: format!("slope {slope:e} at {side} exceeds {allowed:e}"),
                });
            }
        }
    }
    Ok(())
}

/// Discretized plate deflection with its derivatives and coincidence set.
#[derive(Debug, Clone)]
pub struct Profile {
    grid: Grid1D,
    values: Vec<f64>,
    bc: BcKind,
    du: Vec<f64>,
    d2u: Vec<f64>,
    gap_height: f64,
    contact_threshold: f64,
    coincidence: Vec<Range<usize>>,
}

impl Profile {
    /// Build a profile with the default contact threshold `1e-8·H`.
    pub fn new(grid: Grid1D, samples: Vec<f64>, params: &DeviceParams, bc: BcKind) -> Result<Self> {
        Self::with_threshold(grid, samples, params, bc, params.contact_threshold())
    }

    pub fn with_threshold(
        grid: Grid1D,
        samples: Vec<f64>,
        params: &DeviceParams,
        bc: BcKind,
        contact_threshold: f64,
    ) -> Result<Self> {
        if samples.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} samples for a grid with {} nodes",
                samples.len(),
                grid.len()
            )));
        }
        if !(contact_threshold >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "eps_c",
                value: contact_threshold,
                reason: "must be >= 0",
            });
        }
        let floor = -params.gap_height;
        for (index, &value) in samples.iter().enumerate() {
            if !value.is_finite() || value < floor - BOUNDARY_TOL {
                return Err(Error::AdmissibilityViolation {
                    index,
                    value,
                    floor,
                });
            }
        }
        check_boundary(&samples, grid.spacing(), params.gap_height, bc)?;
        let (du, d2u) = centered_derivatives(&samples, grid.spacing(), bc);
        let coincidence = coincidence_ranges(&samples, params.gap_height, contact_threshold);
        Ok(Self {
            grid,
            values: samples,
            bc,
            du,
            d2u,
            gap_height: params.gap_height,
            contact_threshold,
            coincidence,
        })
    }

    /// Sample `f` on `grid`.
    pub fn from_fn(
        grid: Grid1D,
        params: &DeviceParams,
        bc: BcKind,
        f: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        let samples = grid.nodes().iter().map(|&x| f(x)).collect();
        Self::new(grid, samples, params, bc)
    }

    /// Flat plate `u ≡ 0`.
    pub fn zero(grid: Grid1D, params: &DeviceParams, bc: BcKind) -> Result<Self> {
        let n = grid.len();
        Self::new(grid, vec![0.0; n], params, bc)
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn bc(&self) -> BcKind {
        self.bc
    }

    pub fn du(&self) -> &[f64] {
        &self.du
    }

    pub fn d2u(&self) -> &[f64] {
        &self.d2u
    }

    pub fn gap_height(&self) -> f64 {
        self.gap_height
    }

    pub fn contact_threshold(&self) -> f64 {
        self.contact_threshold
    }

    /// Maximal index ranges (half-open) of the coincidence set.
    pub fn coincidence(&self) -> &[Range<usize>] {
        &self.coincidence
    }

    pub fn has_contact(&self) -> bool {
        !self.coincidence.is_empty()
    }

    /// Per-node contact flags.
    pub fn contact_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.values.len()];
        for r in &self.coincidence {
            mask[r.clone()].iter_mut().for_each(|m| *m = true);
        }
        mask
    }

    /// Fraction of `D` covered by contact nodes (trapezoid measure).
    pub fn contact_fraction(&self) -> f64 {
        let w = self.grid.trapezoid_weights();
        let covered: f64 = self
            .coincidence
            .iter()
            .flat_map(|r| r.clone())
            .map(|i| w[i])
            .fold(0.0, |acc, v| acc + v);
        covered / (2.0 * self.grid.half_width())
    }

    /// Identifier of the sampled values, bc and contact threshold.
    pub fn fingerprint(&self) -> u64 {
        let mut hasher = DefaultHasher::new();
        self.bc.hash(&mut hasher);
        self.contact_threshold.to_bits().hash(&mut hasher);
        for v in self.grid.nodes().iter().chain(&self.values) {
            v.to_bits().hash(&mut hasher);
        }
        hasher.finish()
    }

    /// `self + t·direction` as a new profile.
    pub fn perturbed(&self, direction: &Direction, t: f64, params: &DeviceParams) -> Result<Self> {
        self.check_direction(direction)?;
        let samples = self
            .values
            .iter()
            .zip(direction.values())
            .map(|(u, v)| u + t * v)
            .collect();
        Self::with_threshold(
            self.grid.clone(),
            samples,
            params,
            self.bc,
            self.contact_threshold,
        )
    }

    pub(crate) fn check_direction(&self, direction: &Direction) -> Result<()> {
        if direction.bc() != self.bc {
            return Err(Error::BcMismatch(format!(
                "direction is {} but profile is {}",
                direction.bc().name(),
                self.bc.name()
            )));
        }
        if !direction.grid().same_as(&self.grid) {
            return Err(Error::BcMismatch(
                "direction lives on a different grid".into(),
            ));
        }
        Ok(())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_profile_csv(path, self.grid.nodes(), &self.values)
    }
}

/// Perturbation direction `ϑ` obeying the homogeneous boundary conditions.
#[derive(Debug, Clone)]
pub struct Direction {
    grid: Grid1D,
    values: Vec<f64>,
    bc: BcKind,
}

impl Direction {
    pub fn new(grid: Grid1D, values: Vec<f64>, bc: BcKind) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} direction samples for a grid with {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::BcMismatch("direction has non-finite entries".into()));
        }
        let scale = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        check_boundary(&values, grid.spacing(), scale, bc)
            .map_err(|e| Error::BcMismatch(e.to_string()))?;
        Ok(Self { grid, values, bc })
    }

    pub fn from_fn(grid: Grid1D, bc: BcKind, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.nodes().iter().map(|&x| f(x)).collect();
        Self::new(grid, values, bc)
    }

    pub fn zero(grid: Grid1D, bc: BcKind) -> Self {
        let n = grid.len();
        Self {
            grid,
            values: vec![0.0; n],
            bc,
        }
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn bc(&self) -> BcKind {
        self.bc
    }
}

/// Maximal contiguous index ranges where `u + H <= eps_c`.
pub fn coincidence_ranges(values: &[f64], gap_height: f64, eps_c: f64) -> Vec<Range<usize>> {
    let mut ranges = Vec::new();
    let mut start = None;
    for (i, &u) in values.iter().enumerate() {
        let touching = u + gap_height <= eps_c;
        match (touching, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                ranges.push(s..i);
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        ranges.push(s..values.len());
    }
    ranges
}

/// Coincidence set of `profile` for an explicit threshold.
pub fn coincidence_set(profile: &Profile, eps_c: f64) -> Vec<Range<usize>> {
    coincidence_ranges(profile.values(), profile.gap_height(), eps_c.max(0.0))
}

/// Pointwise projection onto the obstacle set `u >= -H`.
pub fn project_obstacle(values: &mut [f64], gap_height: f64) {
    for u in values.iter_mut() {
        if *u < -gap_height {
            *u = -gap_height;
        }
    }
}

/// Reference rectangles `R₁ = D × (-d, 0)` and `R₂ = D × (0, 1)`.
///
/// Both share the x-nodes of the profile grid. Rows are numbered bottom to
/// top over the combined rectangle `D × (-d, 1)`; the interface `η = 0` is row
/// [`ReferenceGrids::interface_row`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceGrids {
    x: Grid1D,
    eta: Vec<f64>,
    rows_layer: usize,
    rows_gap: usize,
    layer_thickness: f64,
}

impl ReferenceGrids {
    pub fn new(
        x: Grid1D,
        layer_thickness: f64,
        cells_layer: usize,
        cells_gap: usize,
    ) -> Result<Self> {
        if cells_layer < 2 || cells_gap < 2 {
            return Err(Error::GridMismatch(format!(
                "need at least 2 vertical cells per rectangle, got {cells_layer} and {cells_gap}"
            )));
        }
        let h1 = layer_thickness / cells_layer as f64;
        let h2 = 1.0 / cells_gap as f64;
        let mut eta: Vec<f64> = (0..cells_layer)
            .map(|j| -layer_thickness + j as f64 * h1)
            .collect();
        eta.extend((0..=cells_gap).map(|j| j as f64 * h2));
        Ok(Self {
            x,
            eta,
            rows_layer: cells_layer,
            rows_gap: cells_gap,
            layer_thickness,
        })
    }

    pub fn x(&self) -> &Grid1D {
        &self.x
    }

    /// Vertical reference coordinates of all rows.
    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    pub fn cells_layer(&self) -> usize {
        self.rows_layer
    }

    pub fn cells_gap(&self) -> usize {
        self.rows_gap
    }

    pub fn interface_row(&self) -> usize {
        self.rows_layer
    }

    pub fn top_row(&self) -> usize {
        self.rows_layer + self.rows_gap
    }

    pub fn rows(&self) -> usize {
        self.eta.len()
    }

    pub fn columns(&self) -> usize {
        self.x.len()
    }

    pub fn node_count(&self) -> usize {
        self.rows() * self.columns()
    }

    pub fn node(&self, column: usize, row: usize) -> usize {
        row * self.columns() + column
    }

    pub fn spacing_layer(&self) -> f64 {
        self.layer_thickness / self.rows_layer as f64
    }

    pub fn spacing_gap(&self) -> f64 {
        1.0 / self.rows_gap as f64
    }

    pub fn layer_thickness(&self) -> f64 {
        self.layer_thickness
    }

    pub fn matches(&self, grid: &Grid1D) -> bool {
        self.x.same_as(grid)
    }
}

/// Write `(x, value)` pairs with the profile header.
pub fn write_profile_csv(path: impl AsRef<Path>, xs: &[f64], values: &[f64]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(file, "{PROFILE_HEADER}")?;
    let mut writer = csv::Writer::from_writer(file);
    writer.write_record(["x", "u"])?;
    for (x, u) in xs.iter().zip(values) {
        writer.write_record([format_float(*x), format_float(*u)])?;
    }
    writer.flush()?;
    Ok(())
}

/// Read a profile file, returning the abscissae and values.
pub fn read_profile_csv(path: impl AsRef<Path>) -> Result<(Vec<f64>, Vec<f64>)> {
    let file = std::fs::File::open(path)?;
    let mut reader = std::io::BufReader::new(file);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    if first.trim_end() != PROFILE_HEADER {
        return Err(Error::ProfileFormat(format!(
            "expected first line `{PROFILE_HEADER}`, found `{}`",
            first.trim_end()
        )));
    }
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut xs = Vec::new();
    let mut us = Vec::new();
    for (line, record) in csv_reader.records().enumerate() {
        let record = record?;
        if record.len() != 2 {
            return Err(Error::ProfileFormat(format!(
                "row {}: expected 2 columns, found {}",
                line + 1,
                record.len()
            )));
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| Error::ProfileFormat(format!("row {}: `{s}`: {e}", line + 1)))
        };
        xs.push(parse(&record[0])?);
        us.push(parse(&record[1])?);
    }
    if xs.len() < 5 {
        return Err(Error::ProfileFormat(format!("only {} rows", xs.len())));
    }
    Ok((xs, us))
}

/// Load a profile file onto a uniform grid of `[-L, L]`.
pub fn load_profile(path: impl AsRef<Path>, params: &DeviceParams, bc: BcKind) -> Result<Profile> {
    let (xs, us) = read_profile_csv(path)?;
    let grid = Grid1D::new(params.half_width, xs.len() - 1)?;
    let tol = 1e-9 * params.half_width;
    if let Some((i, (x, expected))) = xs
        .iter()
        .zip(grid.nodes())
        .enumerate()
        .find(|(_, (x, g))| (*x - *g).abs() > tol)
    {
        return Err(Error::ProfileFormat(format!(
            "row {}: x = {x} but the uniform grid of [-L, L] has {expected}",
            i + 1
        )));
    }
    Profile::new(grid, us, params, bc)
}

/// Floats are printed with 17 significant digits.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn params() -> DeviceParams {
        DeviceParams::standard()
    }

    fn touching(x: f64) -> f64 {
        let c = 1.0 - (PI * x).cos();
        -1.0 + 0.25 * c * c
    }

    #[test]
    fn rejects_bad_params() {
        let mut p = params();
        p.gap_height = 0.0;
        assert!(matches!(
            p.validate(),
            Err(Error::InvalidParameter { name: "H", .. })
        ));
        let mut p = params();
        p.tau = -1.0;
        assert!(matches!(
            p.validate(),
            Err(Error::InvalidParameter { name: "tau", .. })
        ));
        assert!(DeviceParams::new(1.0, 1.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0).is_ok());
    }

    #[test]
    fn grid_spans_domain() {
        let g = Grid1D::new(1.5, 10).unwrap();
        assert_eq!(g.nodes()[0], -1.5);
        assert_eq!(g.nodes()[10], 1.5);
        assert!(g.nodes().windows(2).all(|w| w[1] > w[0]));
        assert!((g.integrate(&[1.0; 11]) - 3.0).abs() < 1e-14);
    }

    #[test]
    fn zero_profile_has_no_contact() {
        let p = Profile::zero(Grid1D::new(1.0, 64).unwrap(), &params(), BcKind::Clamped).unwrap();
        assert!(p.coincidence().is_empty());
        assert!(p.du().iter().all(|&d| d == 0.0));
        assert!(coincidence_set(&p, 1e-9).is_empty());
    }

    #[test]
    fn touching_profile_contacts_at_center() {
        let grid = Grid1D::new(1.0, 64).unwrap();
        let p = Profile::from_fn(grid, &params(), BcKind::Clamped, touching).unwrap();
        assert_eq!(p.coincidence().to_vec(), vec![32..33]);
        assert_eq!(coincidence_set(&p, 1e-9), vec![32..33]);
        assert!(p.values()[0].abs() < 1e-15 && p.values()[64].abs() < 1e-15);
        assert_eq!(p.du()[0], 0.0);
        assert_eq!(p.du()[64], 0.0);
    }

    #[test]
    fn obstacle_violation_is_rejected() {
        let grid = Grid1D::new(1.0, 16).unwrap();
        let mut s = vec![0.0; 17];
        s[8] = -1.0 - 1e-3;
        let err = Profile::new(grid, s, &params(), BcKind::Pinned).unwrap_err();
        assert!(matches!(
            err,
            Error::AdmissibilityViolation { index: 8, .. }
        ));
    }

    #[test]
    fn boundary_violations_are_rejected() {
        let grid = Grid1D::new(1.0, 32).unwrap();
        let err = Profile::from_fn(grid.clone(), &params(), BcKind::Pinned, |x| 0.1 + 0.0 * x)
            .unwrap_err();
        assert!(matches!(err, Error::BoundaryConditionViolation { .. }));
        // pinned-but-not-clamped shape
        let err = Profile::from_fn(grid.clone(), &params(), BcKind::Clamped, |x| {
            0.1 * (1.0 - x * x)
        })
        .unwrap_err();
        assert!(matches!(
            err,
            Error::BoundaryConditionViolation {
                kind: "clamped",
                ..
            }
        ));
        assert!(
            Profile::from_fn(grid.clone(), &params(), BcKind::Pinned, |x| 0.1
                * (1.0 - x * x))
            .is_ok()
        );
        assert!(Profile::from_fn(grid, &params(), BcKind::Unconstrained, |_| 0.5).is_ok());
    }

    #[test]
    fn two_touch_profile_gives_one_range_per_plateau() {
        // u = -H + H·min(1, (4|x|/L - 2)²) touches at |x| = L/2 and is flat (u = 0) near ±L.
        let grid = Grid1D::new(1.0, 200).unwrap();
        let p = Profile::from_fn(grid, &params(), BcKind::Clamped, |x| {
            -1.0 + (4.0 * x.abs() - 2.0).powi(2).min(1.0)
        })
        .unwrap();
        // (4|x| - 2)² <= 1e-2  <=>  0.475 <= |x| <= 0.525, i.e. nodes -0.52..=-0.48 and 0.48..=0.52
        assert_eq!(coincidence_set(&p, 1e-2), vec![48..53, 148..153]);
        assert_eq!(coincidence_set(&p, 1e-9), vec![50..51, 150..151]);
    }

    #[test]
    fn derivatives_are_second_order() {
        let f = |x: f64| (PI * x).sin() * (1.0 - x * x);
        let df = |x: f64| PI * (PI * x).cos() * (1.0 - x * x) - 2.0 * x * (PI * x).sin();
        let err = |n: usize| {
            let grid = Grid1D::new(1.0, n).unwrap();
            let vals: Vec<f64> = grid.nodes().iter().map(|&x| f(x)).collect();
            let (du, _) = centered_derivatives(&vals, grid.spacing(), BcKind::Unconstrained);
            grid.nodes()
                .iter()
                .zip(&du)
                .map(|(&x, d)| (d - df(x)).abs())
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(64), err(128));
        let rate = (e1 / e2).log2();
        assert!(rate > 1.8, "rate {rate}");
    }

    #[test]
    fn profile_csv_roundtrip() {
        let dir = std::env::temp_dir().join(format!("memsim-geom-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("p.csv");
        let grid = Grid1D::new(1.0, 32).unwrap();
        let p = Profile::from_fn(grid, &params(), BcKind::Clamped, touching).unwrap();
        p.write_csv(&path).unwrap();
        let q = load_profile(&path, &params(), BcKind::Clamped).unwrap();
        assert_eq!(p.values(), q.values());
        std::fs::write(&path, "x,u\n0,0\n").unwrap();
        assert!(matches!(
            load_profile(&path, &params(), BcKind::Clamped),
            Err(Error::ProfileFormat(_))
        ));
    }

    #[test]
    fn reference_grids_share_interface() {
        let g = ReferenceGrids::new(Grid1D::new(1.0, 8).unwrap(), 0.5, 4, 6).unwrap();
        assert_eq!(g.rows(), 11);
        assert_eq!(g.eta()[g.interface_row()], 0.0);
        assert_eq!(g.eta()[0], -0.5);
        assert_eq!(g.eta()[g.top_row()], 1.0);
    }
}

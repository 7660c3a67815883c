//! Boundary data `h₁`, `h₂` for the potential and the layer permittivity `σ₁`.
//!
//! A family supplies `h₁(x, z, w)` on the dielectric layer and `h₂(x, z, w)`
//! above it, where `w` stands for the plate deflection `u(x)`. The potential is
//! pinned to `h_u(x, z) = h(x, z, u(x))` on the boundary of the device region.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::geometry::DeviceParams;

/// Gradient `(∂ₓh, ∂_zh, ∂_wh)` of a boundary function.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Partials {
    pub dx: f64,
    pub dz: f64,
    pub dw: f64,
}

/// Permittivity of the dielectric layer.
pub trait Permittivity: Send + Sync + fmt::Debug {
    fn value(&self, x: f64, z: f64) -> f64;
    /// `(∂ₓσ₁, ∂_zσ₁)`.
    fn gradient(&self, x: f64, z: f64) -> (f64, f64);
    fn depends_on_z(&self) -> bool {
        true
    }
}

/// `σ₁ ≡ value`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantPermittivity(pub f64);

impl Permittivity for ConstantPermittivity {
    fn value(&self, _x: f64, _z: f64) -> f64 {
        self.0
    }
    fn gradient(&self, _x: f64, _z: f64) -> (f64, f64) {
        (0.0, 0.0)
    }
    fn depends_on_z(&self) -> bool {
        false
    }
}

/// `σ₁(x) = mean + amplitude·sin(k·π·x/L + phase)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarmonicPermittivity {
    pub mean: f64,
    pub amplitude: f64,
    pub wavenumber: f64,
    pub phase: f64,
    pub half_width: f64,
}

impl HarmonicPermittivity {
    fn arg(&self, x: f64) -> f64 {
        self.wavenumber * PI * x / self.half_width + self.phase
    }
}

impl Permittivity for HarmonicPermittivity {
    fn value(&self, x: f64, _z: f64) -> f64 {
        self.mean + self.amplitude * self.arg(x).sin()
    }
    fn gradient(&self, x: f64, _z: f64) -> (f64, f64) {
        let k = self.wavenumber * PI / self.half_width;
        (self.amplitude * k * self.arg(x).cos(), 0.0)
    }
    fn depends_on_z(&self) -> bool {
        false
    }
}

/// `σ₁` on the layer together with the constant `σ₂` and sampled bounds.
#[derive(Debug, Clone)]
pub struct PermittivityField {
    sigma1: Arc<dyn Permittivity>,
    sigma2: f64,
    sigma1_min: f64,
    sigma1_max: f64,
    sigma1_slope_max: f64,
    sigma_min: f64,
    sigma_max: f64,
}

const BOUND_SAMPLES_X: usize = 2048;
const BOUND_SAMPLES_Z: usize = 32;

impl PermittivityField {
    /// Sample `σ₁` densely over the closed layer to obtain its bounds.
    pub fn new(sigma1: Arc<dyn Permittivity>, sigma2: f64, params: &DeviceParams) -> Result<Self> {
        if !(sigma2 > 0.0) {
            return Err(Error::InvalidParameter {
                name: "sigma2",
                value: sigma2,
                reason: "must be > 0",
            });
        }
        let (l, h, d) = (params.half_width, params.gap_height, params.layer_thickness);
        let z_samples = if sigma1.depends_on_z() {
            BOUND_SAMPLES_Z
        } else {
            0
        };
        let mut min = f64::INFINITY;
        let mut max = 0.0_f64;
        let (mut sup_dx, mut sup_dz) = (0.0_f64, 0.0_f64);
        for i in 0..=BOUND_SAMPLES_X {
            let x = -l + 2.0 * l * i as f64 / BOUND_SAMPLES_X as f64;
            for k in 0..=z_samples {
                let z = if z_samples == 0 {
                    -h
                } else {
                    -h - d + d * k as f64 / z_samples as f64
                };
                let s = sigma1.value(x, z);
                let (gx, gz) = sigma1.gradient(x, z);
                min = min.min(s);
                max = max.max(s.abs());
                sup_dx = sup_dx.max(gx.abs());
                sup_dz = sup_dz.max(gz.abs());
            }
        }
        if !(min > 0.0) {
            return Err(Error::InvalidParameter {
                name: "sigma1",
                value: min,
                reason: "must be > 0 on the dielectric layer",
            });
        }
        Ok(Self {
            sigma1,
            sigma2,
            sigma1_min: min,
            sigma1_max: max,
            sigma1_slope_max: sup_dx,
            sigma_min: min.min(sigma2),
            sigma_max: sigma2.max(max + sup_dx + sup_dz),
        })
    }

    pub fn constant(sigma1: f64, sigma2: f64, params: &DeviceParams) -> Result<Self> {
        Self::new(Arc::new(ConstantPermittivity(sigma1)), sigma2, params)
    }

    pub fn sigma1(&self, x: f64, z: f64) -> f64 {
        self.sigma1.value(x, z)
    }

    pub fn sigma1_gradient(&self, x: f64, z: f64) -> (f64, f64) {
        self.sigma1.gradient(x, z)
    }

    pub fn sigma1_fn(&self) -> &Arc<dyn Permittivity> {
        &self.sigma1
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigma_min
    }

    /// `max{σ₂, ‖σ₁‖}` with the sup-norm of `σ₁` and its first partials.
    pub fn sigma_max(&self) -> f64 {
        self.sigma_max
    }

    pub fn sigma1_min(&self) -> f64 {
        self.sigma1_min
    }

    pub fn sigma1_max(&self) -> f64 {
        self.sigma1_max
    }

    /// `sup |∂ₓσ₁|` on the layer.
    pub fn sigma1_slope_max(&self) -> f64 {
        self.sigma1_slope_max
    }
}

/// Constants `m₁, m₂, m₃` of the growth bounds on the partials of `h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthConstants {
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
}

impl GrowthConstants {
    pub fn new(m1: f64, m2: f64, m3: f64) -> Result<Self> {
        for (name, v) in [("m1", m1), ("m3", m3)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter {
                    name,
                    value: v,
                    reason: "growth constant must be > 0",
                });
            }
        }
        if !(m2 >= 0.0 && m2.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "m2",
                value: m2,
                reason: "growth constant must be >= 0",
            });
        }
        Ok(Self { m1, m2, m3 })
    }
}

/// Boundary data of the transmission problem.
pub trait BoundaryFamily: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    /// `h₁` on `D × [-H-d, -H]`.
    fn h1(&self, x: f64, z: f64, w: f64) -> f64;
    /// `h₂` on `D × [-H, ∞)`.
    fn h2(&self, x: f64, z: f64, w: f64) -> f64;
    fn partials1(&self, x: f64, z: f64, w: f64) -> Partials;
    fn partials2(&self, x: f64, z: f64, w: f64) -> Partials;
    fn growth(&self) -> Option<GrowthConstants> {
        None
    }
    /// `Some(V)` if the family holds the ground at 0 and the plate at `V`.
    fn plate_voltage(&self) -> Option<f64> {
        None
    }
}

/// Closed-form two-layer capacitor data for `σ₁ = σ₁(x)`:
///
/// `h₁ = Vσ₂(H+z+d) / (σ₂d + σ₁(x)(H+w))`,
/// `h₂ = V(σ₂d + σ₁(x)(H+z)) / (σ₂d + σ₁(x)(H+w))`.
///
/// For constant `u` and `σ₁` this is the exact potential.
#[derive(Debug, Clone)]
pub struct CapacitorFamily {
    voltage: f64,
    sigma2: f64,
    gap_height: f64,
    layer_thickness: f64,
    sigma1: Arc<dyn Permittivity>,
    growth: GrowthConstants,
}

/// Build the closed-form capacitor family for `params` and the layer permittivity.
pub fn example_family(params: &DeviceParams, perm: &PermittivityField) -> Result<CapacitorFamily> {
    if perm.sigma1_fn().depends_on_z() {
        return Err(Error::InvalidParameter {
            name: "sigma1",
            value: f64::NAN,
            reason: "the capacitor family needs a permittivity independent of z",
        });
    }
    if (perm.sigma2() - params.sigma2).abs() > 1e-15 * params.sigma2 {
        return Err(Error::InvalidParameter {
            name: "sigma2",
            value: perm.sigma2(),
            reason: "permittivity field and device disagree on sigma2",
        });
    }
    let v = params.voltage;
    let s2d = params.sigma2 * params.layer_thickness;
    let d = params.layer_thickness;
    let (s_min, s_max, slope) = (
        perm.sigma1_min(),
        perm.sigma1_max(),
        perm.sigma1_slope_max(),
    );
    // Layer: |∂ₓh₁| ≤ V|σ₁'|/(4σ₁), |∂_zh₁| ≤ V/d, |∂_wh₁| ≤ Vσ₁/(σ₂d).
    let layer_sum = v * (1.0 / d + slope / (4.0 * s_min));
    let layer_dw = v * s_max / s2d;
    // Gap (-H ≤ z ≤ w): (|∂ₓh₂| + |∂_zh₂|)²(H+w) ≤ C²/(4σ₁_min σ₂d) with
    // C = V(σ₁_max + |σ₁'|σ₂d/σ₁_min); (∂_wh₂)²(H+w) ≤ V²σ₁_max/(4σ₂d).
    let c_gap = v * (s_max + slope * s2d / s_min);
    let gap_sum_sq = c_gap * c_gap / (4.0 * s_min * s2d);
    let gap_dw_sq = v * v * s_max / (4.0 * s2d);
    let floor = f64::MIN_POSITIVE;
    let growth = GrowthConstants {
        m1: (layer_sum * layer_sum).max(gap_sum_sq).max(floor),
        m2: 0.0,
        m3: (layer_dw * layer_dw).max(gap_dw_sq).max(floor),
    };
    Ok(CapacitorFamily {
        voltage: v,
        sigma2: params.sigma2,
        gap_height: params.gap_height,
        layer_thickness: params.layer_thickness,
        sigma1: perm.sigma1_fn().clone(),
        growth,
    })
}

impl CapacitorFamily {
    fn denominator(&self, s1: f64, w: f64) -> f64 {
        self.sigma2 * self.layer_thickness + s1 * (self.gap_height + w)
    }

    fn sigma1_at(&self, x: f64) -> (f64, f64) {
        let z = -self.gap_height;
        (self.sigma1.value(x, z), self.sigma1.gradient(x, z).0)
    }
}

impl BoundaryFamily for CapacitorFamily {
    fn name(&self) -> &str {
        "capacitor"
    }

    fn h1(&self, x: f64, z: f64, w: f64) -> f64 {
        let (s1, _) = self.sigma1_at(x);
        self.voltage * self.sigma2 * (self.gap_height + z + self.layer_thickness)
            / self.denominator(s1, w)
    }

    fn h2(&self, x: f64, z: f64, w: f64) -> f64 {
        let (s1, _) = self.sigma1_at(x);
        self.voltage * (self.sigma2 * self.layer_thickness + s1 * (self.gap_height + z))
            / self.denominator(s1, w)
    }

    fn partials1(&self, x: f64, z: f64, w: f64) -> Partials {
        let (s1, ds1) = self.sigma1_at(x);
        let den = self.denominator(s1, w);
        let depth = self.gap_height + z + self.layer_thickness;
        let vs2 = self.voltage * self.sigma2;
        Partials {
            dx: -vs2 * depth * ds1 * (self.gap_height + w) / (den * den),
            dz: vs2 / den,
            dw: -vs2 * depth * s1 / (den * den),
        }
    }

    fn partials2(&self, x: f64, z: f64, w: f64) -> Partials {
        let (s1, ds1) = self.sigma1_at(x);
        let den = self.denominator(s1, w);
        let s2d = self.sigma2 * self.layer_thickness;
        let num = s2d + s1 * (self.gap_height + z);
        Partials {
            dx: self.voltage * ds1 * s2d * (z - w) / (den * den),
            dz: self.voltage * s1 / den,
            dw: -self.voltage * num * s1 / (den * den),
        }
    }

    fn growth(&self) -> Option<GrowthConstants> {
        Some(self.growth)
    }

    fn plate_voltage(&self) -> Option<f64> {
        Some(self.voltage)
    }
}

/// Affine data `h₂ = c + s(z+H) + pₓx + p_w w`, `h₁` continued with slope
/// `σ₂s/σ₁` below the interface. Requires a constant `σ₁`.
///
/// Mainly a verification family: it satisfies the interface conditions but is
/// not a plate/ground family unless it is constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineFamily {
    pub offset: f64,
    pub slope_z: f64,
    pub slope_x: f64,
    pub slope_w: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub gap_height: f64,
}

impl AffineFamily {
    /// `h ≡ value`.
    pub fn constant(value: f64, params: &DeviceParams, sigma1: f64) -> Self {
        Self {
            offset: value,
            slope_z: 0.0,
            slope_x: 0.0,
            slope_w: 0.0,
            sigma1,
            sigma2: params.sigma2,
            gap_height: params.gap_height,
        }
    }

    fn is_constant(&self) -> bool {
        self.slope_z == 0.0 && self.slope_x == 0.0 && self.slope_w == 0.0
    }
}

impl BoundaryFamily for AffineFamily {
    fn name(&self) -> &str {
        "affine"
    }

    fn h1(&self, x: f64, z: f64, w: f64) -> f64 {
        self.offset
            + self.sigma2 * self.slope_z / self.sigma1 * (z + self.gap_height)
            + self.slope_x * x
            + self.slope_w * w
    }

    fn h2(&self, x: f64, z: f64, w: f64) -> f64 {
        self.offset + self.slope_z * (z + self.gap_height) + self.slope_x * x + self.slope_w * w
    }

    fn partials1(&self, _x: f64, _z: f64, _w: f64) -> Partials {
        Partials {
            dx: self.slope_x,
            dz: self.sigma2 * self.slope_z / self.sigma1,
            dw: self.slope_w,
        }
    }

    fn partials2(&self, _x: f64, _z: f64, _w: f64) -> Partials {
        Partials {
            dx: self.slope_x,
            dz: self.slope_z,
            dw: self.slope_w,
        }
    }

    fn plate_voltage(&self) -> Option<f64> {
        // h ≡ 0 is the only affine family grounded at the bottom plate
        (self.is_constant() && self.offset == 0.0).then_some(0.0)
    }
}

/// Residual of one compatibility identity, or a marker that it was skipped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Check {
    Residual(f64),
    NotChecked,
}

impl Check {
    pub fn residual(self) -> Option<f64> {
        match self {
            Check::Residual(r) => Some(r),
            Check::NotChecked => None,
        }
    }
}

impl Serialize for Check {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Check::Residual(r) => serializer.serialize_f64(*r),
            Check::NotChecked => serializer.serialize_str("not-checked"),
        }
    }
}

/// Maximum residuals of the interface and plate/ground identities.
#[derive(Debug, Clone, PartialEq)]
pub struct CompatibilityReport {
    /// `|h₁ - h₂|` at `z = -H`.
    pub value_continuity: f64,
    /// `|σ₁∂_zh₁ - σ₂∂_zh₂|` at `z = -H`.
    pub flux_continuity: f64,
    /// `|h₁(x, -H-d, w)|`.
    pub ground_value: Check,
    /// `|h₂(x, w, w) - V|`.
    pub plate_value: Check,
    /// `|∂_wh₁(x, -H-d, w)|`.
    pub ground_dw: Check,
    /// `|∂ₓh₂(x, w, w)|`.
    pub plate_dx: Check,
    /// `|∂_zh₂(x, w, w) + ∂_wh₂(x, w, w)|`.
    pub plate_dz_plus_dw: Check,
    pub tolerance: f64,
    pub passed: bool,
}

impl CompatibilityReport {
    /// Whether the plate/ground derivative identities were checked and hold.
    pub fn mems_identities_hold(&self) -> bool {
        [self.ground_dw, self.plate_dx, self.plate_dz_plus_dw]
            .iter()
            .all(|c| matches!(c.residual(), Some(r) if r <= self.tolerance))
    }
}

impl Serialize for CompatibilityReport {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut s = serializer.serialize_struct("CompatibilityReport", 9)?;
        s.serialize_field("value_continuity", &self.value_continuity)?;
        s.serialize_field("flux_continuity", &self.flux_continuity)?;
        s.serialize_field("ground_value", &self.ground_value)?;
        s.serialize_field("plate_value", &self.plate_value)?;
        s.serialize_field("ground_dw", &self.ground_dw)?;
        s.serialize_field("plate_dx", &self.plate_dx)?;
        s.serialize_field("plate_dz_plus_dw", &self.plate_dz_plus_dw)?;
        s.serialize_field("tolerance", &self.tolerance)?;
        s.serialize_field("passed", &self.passed)?;
        s.end()
    }
}

/// Pass threshold of the compatibility residuals, relative to `V`.
pub const COMPATIBILITY_TOL: f64 = 1e-10;

/// Evaluate the interface identities (and the plate/ground identities for
/// families that claim them) on all sample pairs `(x, w)`.
pub fn check_compatibility(
    family: &dyn BoundaryFamily,
    perm: &PermittivityField,
    params: &DeviceParams,
    w_samples: &[f64],
    x_samples: &[f64],
) -> CompatibilityReport {
    assert!(
        !w_samples.is_empty() && !x_samples.is_empty(),
        "compatibility check needs samples"
    );
    let h = params.gap_height;
    let d = params.layer_thickness;
    let plate = family.plate_voltage();
    let scale = match plate {
        Some(v) if v > 0.0 => v,
        _ if params.voltage > 0.0 => params.voltage,
        _ => 1.0,
    };
    let mut value = 0.0_f64;
    let mut flux = 0.0_f64;
    let mut ground = 0.0_f64;
    let mut top = 0.0_f64;
    let mut g_dw = 0.0_f64;
    let mut p_dx = 0.0_f64;
    let mut p_sum = 0.0_f64;
    for &x in x_samples {
        for &w in w_samples {
            value = value.max((family.h1(x, -h, w) - family.h2(x, -h, w)).abs());
            let f1 = perm.sigma1(x, -h) * family.partials1(x, -h, w).dz;
            let f2 = perm.sigma2() * family.partials2(x, -h, w).dz;
            flux = flux.max((f1 - f2).abs());
            if let Some(v) = plate {
                ground = ground.max(family.h1(x, -h - d, w).abs());
                top = top.max((family.h2(x, w, w) - v).abs());
                g_dw = g_dw.max(family.partials1(x, -h - d, w).dw.abs());
                let p = family.partials2(x, w, w);
                p_dx = p_dx.max(p.dx.abs());
                p_sum = p_sum.max((p.dz + p.dw).abs());
            }
        }
    }
    let rel = |r: f64| r / scale;
    let wrap = |r: f64| {
        if plate.is_some() {
            Check::Residual(rel(r))
        } else {
            Check::NotChecked
        }
    };
    let mut report = CompatibilityReport {
        value_continuity: rel(value),
        flux_continuity: rel(flux),
        ground_value: wrap(ground),
        plate_value: wrap(top),
        ground_dw: wrap(g_dw),
        plate_dx: wrap(p_dx),
        plate_dz_plus_dw: wrap(p_sum),
        tolerance: COMPATIBILITY_TOL,
        passed: false,
    };
    let checked = [
        Check::Residual(report.value_continuity),
        Check::Residual(report.flux_continuity),
        report.ground_value,
        report.plate_value,
        report.ground_dw,
        report.plate_dx,
        report.plate_dz_plus_dw,
    ];
    report.passed = checked
        .iter()
        .filter_map(|c| c.residual())
        .all(|r| r <= COMPATIBILITY_TOL);
    report
}

/// Outcome of comparing coded partials with central differences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivativeCheck {
    pub max_error: f64,
    pub flagged: bool,
}

/// Error above which a coded partial is reported as wrong.
pub const SELFCHECK_FLAG: f64 = 1e-6;

/// Compare coded partials against central differences of `h₁` (points with
/// `z <= -H`) and `h₂` (points with `z >= -H`).
///
/// The error is `|fd - coded| / max(1, |coded|)`.
pub fn derivative_selfcheck(
    family: &dyn BoundaryFamily,
    gap_height: f64,
    points: &[(f64, f64, f64)],
    step: f64,
) -> DerivativeCheck {
    assert!(step > 0.0, "finite-difference step must be positive");
    type Eval<'a> = Box<dyn Fn(f64, f64, f64) -> f64 + 'a>;
    type Grad<'a> = Box<dyn Fn(f64, f64, f64) -> Partials + 'a>;
    let mut worst = 0.0_f64;
    for &(x, z, w) in points {
        let mut pairs: Vec<(Eval, Grad)> = Vec::new();
        if z <= -gap_height {
            pairs.push((
                Box::new(|x, z, w| family.h1(x, z, w)),
                Box::new(|x, z, w| family.partials1(x, z, w)),
            ));
        }
        if z >= -gap_height {
            pairs.push((
                Box::new(|x, z, w| family.h2(x, z, w)),
                Box::new(|x, z, w| family.partials2(x, z, w)),
            ));
        }
        for (f, grad) in pairs {
            let coded = grad(x, z, w);
            let fd = [
                (f(x + step, z, w) - f(x - step, z, w)) / (2.0 * step),
                (f(x, z + step, w) - f(x, z - step, w)) / (2.0 * step),
                (f(x, z, w + step) - f(x, z, w - step)) / (2.0 * step),
            ];
            for (approx, exact) in fd.into_iter().zip([coded.dx, coded.dz, coded.dw]) {
                worst = worst.max((approx - exact).abs() / exact.abs().max(1.0));
            }
        }
    }
    DerivativeCheck {
        max_error: worst,
        flagged: worst > SELFCHECK_FLAG,
    }
}

//! Bilinear finite elements for the transmission problem on the mapped rectangles.
//!
//! The layer `D × (-H-d, -H)` is shifted onto `R₁ = D × (-d, 0)` by `η = H + z`
//! and the gap `{-H < z < u(x)}` is stretched onto `R₂ = D × (0, 1)` by
//! `η = (H + z)/(H + u(x))`. In the stretched variables the gap integrand
//! becomes `σ₂ ∇Φᵀ C ∇Φ` with
//!
//! ```text
//! C = [ g        -η g'             ]
//!     [ -η g'    (1 + η² g'²) / g  ]
//! ```
//!
//! where `g = max(H + u, ε_gap)` is interpolated linearly in each cell.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::family::{BoundaryFamily, PermittivityField};
use crate::geometry::{format_float, DeviceParams, Grid1D, Profile, ReferenceGrids};
use crate::sparse::{pcg, CgStats, CsrMatrix};

/// Relative floor of the gap thickness used by the stretched map.
pub const GAP_FLOOR_REL: f64 = 1e-6;

const GAUSS_POINTS: [f64; 3] = [
    0.5 - 0.387_298_334_620_741_7,
    0.5,
    0.5 + 0.387_298_334_620_741_7,
];
const GAUSS_WEIGHTS: [f64; 3] = [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0];

/// Stencil slot of the neighbour `(dc, dr)`, both in `-1..=1`.
fn slot(dc: isize, dr: isize) -> usize {
    ((dr + 1) * 3 + (dc + 1)) as usize
}

/// Bilinear shape functions and their reference derivatives on the unit square.
/// Local order: `(c, r)`, `(c+1, r)`, `(c, r+1)`, `(c+1, r+1)`.
fn shape(xi: f64, zeta: f64) -> ([f64; 4], [f64; 4], [f64; 4]) {
    let n = [
        (1.0 - xi) * (1.0 - zeta),
        xi * (1.0 - zeta),
        (1.0 - xi) * zeta,
        xi * zeta,
    ];
    let dxi = [-(1.0 - zeta), 1.0 - zeta, -zeta, zeta];
    let dzeta = [-(1.0 - xi), -xi, 1.0 - xi, xi];
    (n, dxi, dzeta)
}

const LOCAL_OFFSETS: [(usize, usize); 4] = [(0, 0), (1, 0), (0, 1), (1, 1)];

/// Evaluates the coefficient tensor of a cell at reference points.
struct Coefficients<'a> {
    grids: &'a ReferenceGrids,
    gap: &'a [f64],
    perm: &'a PermittivityField,
    gap_height: f64,
}

impl Coefficients<'_> {
    /// `(c11, c12, c22)` at local `(ξ, ζ)` of cell `(c, r)`.
    fn at(&self, c: usize, r: usize, xi: f64, zeta: f64) -> (f64, f64, f64) {
        let hx = self.grids.x().spacing();
        let x = self.grids.x().nodes()[c] + xi * hx;
        let eta = &self.grids.eta()[r..r + 2];
        let e = eta[0] + zeta * (eta[1] - eta[0]);
        if r < self.grids.interface_row() {
            let s = self.perm.sigma1(x, e - self.gap_height);
            (s, 0.0, s)
        } else {
            let g = self.gap[c] + xi * (self.gap[c + 1] - self.gap[c]);
            let dg = (self.gap[c + 1] - self.gap[c]) / hx;
            let s = self.perm.sigma2();
            (s * g, -s * e * dg, s * (1.0 + e * e * dg * dg) / g)
        }
    }

    fn element_matrix(&self, c: usize, r: usize) -> [[f64; 4]; 4] {
        let hx = self.grids.x().spacing();
        let he = self.grids.eta()[r + 1] - self.grids.eta()[r];
        let mut ke = [[0.0; 4]; 4];
        for (qa, wa) in GAUSS_POINTS.iter().zip(GAUSS_WEIGHTS) {
            for (qb, wb) in GAUSS_POINTS.iter().zip(GAUSS_WEIGHTS) {
                let (c11, c12, c22) = self.at(c, r, *qa, *qb);
                let (_, dxi, dzeta) = shape(*qa, *qb);
                let w = wa * wb * hx * he;
                for a in 0..4 {
                    let (ax, ae) = (dxi[a] / hx, dzeta[a] / he);
                    for b in 0..4 {
                        let (bx, be) = (dxi[b] / hx, dzeta[b] / he);
                        ke[a][b] += w * (c11 * ax * bx + c12 * (ax * be + ae * bx) + c22 * ae * be);
                    }
                }
            }
        }
        ke
    }
}

/// Floored gap thickness per column.
fn floored_gap(values: &[f64], gap_height: f64, floor: f64) -> Vec<f64> {
    values.iter().map(|u| (gap_height + u).max(floor)).collect()
}

/// Physical height of reference row `r` in column `c`.
fn physical_z(grids: &ReferenceGrids, gap_height: f64, u: f64, r: usize) -> f64 {
    let eta = grids.eta()[r];
    if r < grids.interface_row() {
        eta - gap_height
    } else {
        -gap_height + eta * (gap_height + u).max(0.0)
    }
}

/// Discretized transmission problem for one profile.
///
/// Holds the full stiffness matrix `K` over all nodes, its restriction `A` to
/// the free nodes and the right-hand side `b = -(K h)_free` for `χ = ψ - h_u`.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    grids: ReferenceGrids,
    stiffness: CsrMatrix,
    matrix: CsrMatrix,
    rhs: Vec<f64>,
    rhs_scale: f64,
    free: Vec<usize>,
    slots: Vec<usize>,
    boundary_values: Vec<f64>,
    profile_values: Vec<f64>,
    contact: Vec<bool>,
    gap: Vec<f64>,
    gap_floor: f64,
    gap_height: f64,
    profile_hash: u64,
}

impl LinearSystem {
    pub fn grids(&self) -> &ReferenceGrids {
        &self.grids
    }

    /// Stiffness over all nodes, Dirichlet nodes included.
    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    /// Stiffness restricted to the free nodes.
    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    /// Node index of each free unknown.
    pub fn free_nodes(&self) -> &[usize] {
        &self.free
    }

    /// Unknown index of `node`, or `None` for a Dirichlet node.
    pub fn unknown_of(&self, node: usize) -> Option<usize> {
        (self.slots[node] != usize::MAX).then_some(self.slots[node])
    }

    pub fn is_dirichlet(&self, node: usize) -> bool {
        self.slots[node] == usize::MAX
    }

    /// Nodal values of `h_u` on every node.
    pub fn boundary_values(&self) -> &[f64] {
        &self.boundary_values
    }

    /// Floored gap thickness per column.
    pub fn gap(&self) -> &[f64] {
        &self.gap
    }

    pub fn gap_floor(&self) -> f64 {
        self.gap_floor
    }

    pub fn profile_hash(&self) -> u64 {
        self.profile_hash
    }

    /// `½ hᵀ K h`.
    pub fn upper_bound(&self) -> f64 {
        0.5 * self.stiffness.zero_row_sum_form(&self.boundary_values)
    }
}

/// Assemble the mapped bilinear form of the transmission problem.
///
/// Interface nodes in the coincidence set are pinned to `h₂(x, -H, u)`; all
/// outer boundary nodes are pinned to `h_u`.
pub fn assemble(
    profile: &Profile,
    family: &dyn BoundaryFamily,
    perm: &PermittivityField,
    grids: &ReferenceGrids,
    gap_floor: f64,
) -> Result<LinearSystem> {
    if !(gap_floor > 0.0) {
        return Err(Error::DegenerateGap(gap_floor));
    }
    if !grids.matches(profile.grid()) {
        return Err(Error::GridMismatch(
            "reference grids and profile use different x-nodes".into(),
        ));
    }
    let h = profile.gap_height();
    let u = profile.values();
    let nx = grids.columns() - 1;
    let rows = grids.rows();
    let interface = grids.interface_row();
    let gap = floored_gap(u, h, gap_floor);
    let coefficients = Coefficients {
        grids,
        gap: &gap,
        perm,
        gap_height: h,
    };

    let mut stencil = vec![[0.0_f64; 9]; grids.node_count()];
    for r in 0..rows - 1 {
        for c in 0..nx {
            let ke = coefficients.element_matrix(c, r);
            for (a, &(ac, ar)) in LOCAL_OFFSETS.iter().enumerate() {
                let node = grids.node(c + ac, r + ar);
                for (b, &(bc, br)) in LOCAL_OFFSETS.iter().enumerate() {
                    let k = slot(bc as isize - ac as isize, br as isize - ar as isize);
                    stencil[node][k] += ke[a][b];
                }
            }
        }
    }

    let contact = profile.contact_mask();
    let xs = grids.x().nodes();
    let mut boundary_values = vec![0.0; grids.node_count()];
    let mut slots = vec![usize::MAX; grids.node_count()];
    let mut free = Vec::new();
    for r in 0..rows {
        for c in 0..=nx {
            let node = grids.node(c, r);
            let z = physical_z(grids, h, u[c], r);
            boundary_values[node] = if r < interface {
                family.h1(xs[c], z, u[c])
            } else {
                family.h2(xs[c], z, u[c])
            };
            let pinned =
                r == 0 || r == rows - 1 || c == 0 || c == nx || (r == interface && contact[c]);
            if !pinned {
                slots[node] = free.len();
                free.push(node);
            }
        }
    }

    let csr_rows = (0..grids.node_count())
        .map(|node| {
            let (c, r) = ((node % (nx + 1)) as isize, (node / (nx + 1)) as isize);
            let mut row = Vec::with_capacity(9);
            for dr in -1..=1_isize {
                for dc in -1..=1_isize {
                    let (cc, rr) = (c + dc, r + dr);
                    if cc < 0 || rr < 0 || cc > nx as isize || rr >= rows as isize {
                        continue;
                    }
                    row.push((
                        grids.node(cc as usize, rr as usize),
                        stencil[node][slot(dc, dr)],
                    ));
                }
            }
            row
        })
        .collect();
    let stiffness = CsrMatrix::from_rows(csr_rows);
    let matrix = stiffness.submatrix(&free, &slots);
    let kh = stiffness.mul_zero_row_sum(&boundary_values);
    let rhs: Vec<f64> = free.iter().map(|&n| -kh[n]).collect();
    let h_free: Vec<f64> = free.iter().map(|&n| boundary_values[n]).collect();
    let inv_diag: Vec<f64> = matrix.diagonal().iter().map(|d| 1.0 / d).collect();
    let rhs_scale = crate::sparse::jacobi_norm(&matrix.mul(&h_free), &inv_diag);

    Ok(LinearSystem {
        grids: grids.clone(),
        stiffness,
        matrix,
        rhs,
        rhs_scale,
        free,
        slots,
        boundary_values,
        profile_values: u.to_vec(),
        contact,
        gap,
        gap_floor,
        gap_height: h,
        profile_hash: profile.fingerprint(),
    })
}

/// Solved potential `ψ` stored nodewise on the reference rectangles.
#[derive(Debug, Clone)]
pub struct MappedPotential {
    system: LinearSystem,
    psi: Vec<f64>,
    stats: CgStats,
    upper_bound: f64,
    correction: f64,
}

impl MappedPotential {
    pub fn system(&self) -> &LinearSystem {
        &self.system
    }

    pub fn grids(&self) -> &ReferenceGrids {
        &self.system.grids
    }

    /// `ψ` on every node, rows bottom to top.
    pub fn psi(&self) -> &[f64] {
        &self.psi
    }

    pub fn at(&self, column: usize, row: usize) -> f64 {
        self.psi[self.system.grids.node(column, row)]
    }

    pub fn stats(&self) -> CgStats {
        self.stats
    }

    pub fn profile_hash(&self) -> u64 {
        self.system.profile_hash
    }

    pub fn gap_floor(&self) -> f64 {
        self.system.gap_floor
    }

    /// `½ hᵀ K h` for the nodal interpolant of `h_u`.
    pub fn upper_bound(&self) -> f64 {
        self.upper_bound
    }

    /// `½ χᵀAχ - bᵀχ`, never positive.
    pub fn correction(&self) -> f64 {
        self.correction
    }

    /// Physical height of node `(column, row)`.
    pub fn physical_z(&self, column: usize, row: usize) -> f64 {
        physical_z(
            &self.system.grids,
            self.system.gap_height,
            self.system.profile_values[column],
            row,
        )
    }
}

/// Solve for `χ = ψ - h_u` from `χ = 0`.
pub fn solve_potential(system: LinearSystem, tol: f64, max_iter: usize) -> Result<MappedPotential> {
    solve_potential_from(system, tol, max_iter, None)
}

/// Solve for `χ = ψ - h_u`, starting from the free values of `guess` if given.
///
/// The reported energy is `½ψᵀKψ`, split as `½hᵀKh + correction`. CG never
/// raises the energy above `½hᵀKh`; a solution that does so through rounding
/// is discarded.
pub fn solve_potential_from(
    system: LinearSystem,
    tol: f64,
    max_iter: usize,
    guess: Option<&[f64]>,
) -> Result<MappedPotential> {
    let mut chi: Vec<f64> = match guess {
        Some(psi) if psi.len() == system.grids.node_count() => system
            .free
            .iter()
            .map(|&n| psi[n] - system.boundary_values[n])
            .collect(),
        _ => vec![0.0; system.free.len()],
    };
    let mut stats = pcg(
        &system.matrix,
        &system.rhs,
        &mut chi,
        tol,
        system.rhs_scale,
        max_iter,
    )?;
    let mut psi = system.boundary_values.clone();
    for (k, &n) in system.free.iter().enumerate() {
        psi[n] += chi[k];
    }
    let upper_bound = system.upper_bound();
    let mut correction = 0.5 * system.stiffness.zero_row_sum_form(&psi) - upper_bound;
    if correction > 0.0 {
        log::debug!("discarding energy-raising correction {correction:e}");
        psi.clone_from(&system.boundary_values);
        correction = 0.0;
        let inv_diag: Vec<f64> = system.matrix.diagonal().iter().map(|d| 1.0 / d).collect();
        let b = crate::sparse::jacobi_norm(&system.rhs, &inv_diag);
        stats.residual = b / b.max(system.rhs_scale).max(f64::MIN_POSITIVE);
    }
    Ok(MappedPotential {
        system,
        psi,
        stats,
        upper_bound,
        correction,
    })
}

/// Boundary and interface traces of `∂_zψ`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceSet {
    #[serde(skip)]
    profile_hash: u64,
    #[serde(skip)]
    ground_height: f64,
    /// `∂_zψ₂(x, u(x))`; only meaningful off the coincidence set.
    pub dz_psi2_top: Vec<f64>,
    /// `∂_zψ₂(x, -H)` from the gap side.
    pub dz_psi2_interface: Vec<f64>,
    /// `∂_zψ₁(x, -H)` from the layer side.
    pub dz_psi1_interface: Vec<f64>,
    /// `∂_zψ₁(x, -H-d)`.
    pub dz_psi1_bottom: Vec<f64>,
    /// `ℓ(u)`: the top trace off contact, `(σ₁/σ₂)∂_zψ₁(x, -H)` on contact.
    pub ell: Vec<f64>,
    pub contact: Vec<bool>,
}

impl TraceSet {
    pub fn profile_hash(&self) -> u64 {
        self.profile_hash
    }

    /// `z = -H - d`.
    pub fn ground_height(&self) -> f64 {
        self.ground_height
    }
}

/// One-sided second-order derivative `(3f₀ - 4f₁ + f₂)/(2h)` looking back.
fn backward(f0: f64, f1: f64, f2: f64, h: f64) -> f64 {
    (3.0 * f0 - 4.0 * f1 + f2) / (2.0 * h)
}

fn forward(f0: f64, f1: f64, f2: f64, h: f64) -> f64 {
    (-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * h)
}

/// Differentiate the solved potential at the plate, the interface and the ground.
pub fn extract_traces(
    potential: &MappedPotential,
    profile: &Profile,
    perm: &PermittivityField,
) -> Result<TraceSet> {
    if potential.profile_hash() != profile.fingerprint() {
        return Err(Error::NotSolved);
    }
    let sys = &potential.system;
    let g = &sys.grids;
    let (top, iface) = (g.top_row(), g.interface_row());
    let (h1, h2) = (g.spacing_layer(), g.spacing_gap());
    let xs = g.x().nodes();
    let hgt = sys.gap_height;
    let n = g.columns();
    let mut t = TraceSet {
        profile_hash: sys.profile_hash,
        ground_height: -hgt - g.layer_thickness(),
        dz_psi2_top: Vec::with_capacity(n),
        dz_psi2_interface: Vec::with_capacity(n),
        dz_psi1_interface: Vec::with_capacity(n),
        dz_psi1_bottom: Vec::with_capacity(n),
        ell: Vec::with_capacity(n),
        contact: sys.contact.clone(),
    };
    for c in 0..n {
        let p = |r: usize| potential.at(c, r);
        let gap = sys.gap[c];
        let top_trace = backward(p(top), p(top - 1), p(top - 2), h2) / gap;
        let lower = backward(p(iface), p(iface - 1), p(iface - 2), h1);
        t.dz_psi2_top.push(top_trace);
        t.dz_psi2_interface
            .push(forward(p(iface), p(iface + 1), p(iface + 2), h2) / gap);
        t.dz_psi1_interface.push(lower);
        t.dz_psi1_bottom.push(forward(p(0), p(1), p(2), h1));
        t.ell.push(if sys.contact[c] {
            perm.sigma1(xs[c], -hgt) / perm.sigma2() * lower
        } else {
            top_trace
        });
    }
    Ok(t)
}

/// Discrete residual norms of the transmission conditions and the field equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransmissionResidual {
    /// `‖⟦ψ⟧‖` on the free interface; zero by construction.
    pub jump_value_norm: f64,
    /// `‖σ₁∂_zψ₁ - σ₂∂_zψ₂‖` at `z = -H` off contact.
    pub jump_flux_norm: f64,
    /// L2 norm of the nodal residual density `(Kψ)_i / area_i` on free nodes.
    pub interior_residual_norm: f64,
}

pub fn transmission_residual(
    potential: &MappedPotential,
    perm: &PermittivityField,
) -> TransmissionResidual {
    let sys = &potential.system;
    let g = &sys.grids;
    let iface = g.interface_row();
    let (h1, h2) = (g.spacing_layer(), g.spacing_gap());
    let xs = g.x().nodes();
    let weights = g.x().trapezoid_weights();
    // both sides read the same interface node, so the value jump is exactly zero
    let mut jump_value = 0.0;
    let mut jump_flux = 0.0;
    for c in 0..g.columns() {
        if sys.contact[c] {
            continue;
        }
        let p = |r: usize| potential.at(c, r);
        jump_value += weights[c] * (p(iface) - potential.psi[g.node(c, iface)]).powi(2);
        let lower = perm.sigma1(xs[c], -sys.gap_height)
            * backward(p(iface), p(iface - 1), p(iface - 2), h1);
        let upper = perm.sigma2() * forward(p(iface), p(iface + 1), p(iface + 2), h2) / sys.gap[c];
        jump_flux += weights[c] * (lower - upper).powi(2);
    }
    let kpsi = sys.stiffness.mul_zero_row_sum(&potential.psi);
    let hx = g.x().spacing();
    let eta = g.eta();
    let mut interior = 0.0;
    for &n in &sys.free {
        let r = n / g.columns();
        let area = hx * 0.5 * (eta[r + 1] - eta[r - 1]);
        interior += kpsi[n] * kpsi[n] / area;
    }
    TransmissionResidual {
        jump_value_norm: jump_value.sqrt(),
        jump_flux_norm: jump_flux.sqrt(),
        interior_residual_norm: interior.sqrt(),
    }
}

/// Exact derivative `∂𝔍_h/∂u_i` of the discrete Dirichlet energy at each node.
///
/// The coincidence set and the gap floor are held fixed. Both the stiffness
/// (through the gap thickness) and the pinned values `h_u` depend on `u`.
pub fn energy_sensitivity(
    potential: &MappedPotential,
    profile: &Profile,
    family: &dyn BoundaryFamily,
    perm: &PermittivityField,
) -> Result<Vec<f64>> {
    if potential.profile_hash() != profile.fingerprint() {
        return Err(Error::NotSolved);
    }
    let sys = &potential.system;
    let g = &sys.grids;
    let nx = g.columns() - 1;
    let rows = g.rows();
    let iface = g.interface_row();
    let hgt = sys.gap_height;
    let u = &sys.profile_values;
    let xs = g.x().nodes();
    let hx = g.x().spacing();
    let eta = g.eta();
    let s2 = perm.sigma2();
    let mut sens = vec![0.0; nx + 1];

    // pinned values move with u
    let reaction = sys.stiffness.mul_zero_row_sum(&potential.psi);
    for c in 0..=nx {
        for r in 0..rows {
            let node = g.node(c, r);
            if !sys.is_dirichlet(node) {
                continue;
            }
            let z = physical_z(g, hgt, u[c], r);
            let dh = if r < iface {
                family.partials1(xs[c], z, u[c]).dw
            } else {
                let p = family.partials2(xs[c], z, u[c]);
                let moves = if hgt + u[c] > 0.0 { eta[r] } else { 0.0 };
                moves * p.dz + p.dw
            };
            sens[c] += reaction[node] * dh;
        }
    }

    // stiffness moves with the unfloored gap thickness
    let active: Vec<f64> = u
        .iter()
        .map(|v| if hgt + v > sys.gap_floor { 1.0 } else { 0.0 })
        .collect();
    let gap = &sys.gap;
    for r in iface..rows - 1 {
        let he = eta[r + 1] - eta[r];
        for c in 0..nx {
            if active[c] == 0.0 && active[c + 1] == 0.0 {
                continue;
            }
            let phi = [
                potential.at(c, r),
                potential.at(c + 1, r),
                potential.at(c, r + 1),
                potential.at(c + 1, r + 1),
            ];
            let dg = (gap[c + 1] - gap[c]) / hx;
            let (mut left, mut right) = (0.0, 0.0);
            for (qa, wa) in GAUSS_POINTS.iter().zip(GAUSS_WEIGHTS) {
                for (qb, wb) in GAUSS_POINTS.iter().zip(GAUSS_WEIGHTS) {
                    let (_, dxi, dzeta) = shape(*qa, *qb);
                    let fx: f64 = (0..4).map(|a| phi[a] * dxi[a]).sum::<f64>() / hx;
                    let fe: f64 = (0..4).map(|a| phi[a] * dzeta[a]).sum::<f64>() / he;
                    let e = eta[r] + qb * he;
                    let gq = gap[c] + qa * (gap[c + 1] - gap[c]);
                    let w = 0.5 * wa * wb * hx * he * s2;
                    let density = |dgv: f64, ddg: f64| {
                        let d11 = dgv;
                        let d12 = -e * ddg;
                        let d22 =
                            2.0 * e * e * dg * ddg / gq - (1.0 + e * e * dg * dg) * dgv / (gq * gq);
                        d11 * fx * fx + 2.0 * d12 * fx * fe + d22 * fe * fe
                    };
                    left += w * density(1.0 - qa, -1.0 / hx);
                    right += w * density(*qa, 1.0 / hx);
                }
            }
            sens[c] += active[c] * left;
            sens[c + 1] += active[c + 1] * right;
        }
    }
    Ok(sens)
}

/// Write `(x, z, psi)` rows of the layer and the gap to two CSV files.
pub fn write_potential_csv(
    potential: &MappedPotential,
    layer_path: impl AsRef<Path>,
    gap_path: impl AsRef<Path>,
) -> Result<()> {
    let g = potential.grids();
    let iface = g.interface_row();
    let xs = g.x().nodes();
    for (path, rows) in [
        (layer_path.as_ref(), 0..iface + 1),
        (gap_path.as_ref(), iface..g.rows()),
    ] {
        let mut writer =
            csv::Writer::from_writer(std::io::BufWriter::new(std::fs::File::create(path)?));
        writer.write_record(["x", "z", "psi"])?;
        for r in rows {
            for c in 0..g.columns() {
                writer.write_record([
                    format_float(xs[c]),
                    format_float(potential.physical_z(c, r)),
                    format_float(potential.at(c, r)),
                ])?;
            }
        }
        writer.flush()?;
        writer.into_inner().map_err(|e| e.into_error())?.flush()?;
    }
    Ok(())
}

/// Resolution and tolerances of the transmission solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    pub nz_layer: usize,
    pub nz_gap: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            nz_layer: 64,
            nz_gap: 128,
            tol: 1e-10,
            max_iter: 20_000,
        }
    }
}

/// Device, permittivity, boundary data and solver settings bundled together.
#[derive(Debug, Clone)]
pub struct Model {
    pub params: DeviceParams,
    pub perm: PermittivityField,
    pub family: Arc<dyn BoundaryFamily>,
    pub options: SolverOptions,
}

impl Model {
    pub fn new(
        params: DeviceParams,
        perm: PermittivityField,
        family: Arc<dyn BoundaryFamily>,
        options: SolverOptions,
    ) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            perm,
            family,
            options,
        })
    }

    /// Capacitor family with constant `σ₁`.
    pub fn capacitor(params: DeviceParams, sigma1: f64, options: SolverOptions) -> Result<Self> {
        let perm = PermittivityField::constant(sigma1, params.sigma2, &params)?;
        let family = crate::family::example_family(&params, &perm)?;
        Self::new(params, perm, Arc::new(family), options)
    }

    pub fn family(&self) -> &dyn BoundaryFamily {
        self.family.as_ref()
    }

    pub fn reference_grids(&self, grid: &Grid1D) -> Result<ReferenceGrids> {
        ReferenceGrids::new(
            grid.clone(),
            self.params.layer_thickness,
            self.options.nz_layer,
            self.options.nz_gap,
        )
    }

    /// `ε_gap = max(ε_c, 1e-6·H)`.
    pub fn gap_floor(&self, profile: &Profile) -> f64 {
        profile
            .contact_threshold()
            .max(GAP_FLOOR_REL * self.params.gap_height)
    }

    pub fn assemble(&self, profile: &Profile) -> Result<LinearSystem> {
        let grids = self.reference_grids(profile.grid())?;
        assemble(
            profile,
            self.family(),
            &self.perm,
            &grids,
            self.gap_floor(profile),
        )
    }

    pub fn solve(&self, profile: &Profile) -> Result<MappedPotential> {
        self.solve_from(profile, None)
    }

    /// Solve with the nodal values of an earlier potential as the initial guess.
    pub fn solve_from(
        &self,
        profile: &Profile,
        previous: Option<&MappedPotential>,
    ) -> Result<MappedPotential> {
        let system = self.assemble(profile)?;
        solve_potential_from(
            system,
            self.options.tol,
            self.options.max_iter,
            previous.map(|p| p.psi()),
        )
    }

    pub fn traces(&self, potential: &MappedPotential, profile: &Profile) -> Result<TraceSet> {
        extract_traces(potential, profile, &self.perm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::{HarmonicPermittivity, Permittivity};
    use crate::geometry::BcKind;

    fn model(nz1: usize, nz2: usize) -> Model {
        let opts = SolverOptions {
            nz_layer: nz1,
            nz_gap: nz2,
            ..SolverOptions::default()
        };
        Model::capacitor(DeviceParams::standard(), 2.0, opts).unwrap()
    }

    fn flat(m: &Model, nx: usize, c: f64) -> Profile {
        let grid = Grid1D::new(1.0, nx).unwrap();
        let n = grid.len();
        Profile::new(grid, vec![c; n], &m.params, BcKind::Unconstrained).unwrap()
    }

    #[test]
    fn assembled_matrix_is_symmetric_with_zero_row_sums() {
        let m = model(4, 8);
        let p = flat(&m, 16, 0.0);
        let sys = m.assemble(&p).unwrap();
        let k = sys.stiffness();
        assert!(k.max_asymmetry() <= 1e-14 * k.max_abs());
        let g = sys.grids();
        let node = g.node(8, g.interface_row() + 3);
        let sum: f64 = k.row(node).map(|(_, v)| v).sum();
        assert!(sum.abs() <= 1e-13 * k.max_abs());
        assert!(sys.matrix().diagonal().iter().all(|&d| d > 0.0));
    }

    #[test]
    fn flat_plate_reproduces_closed_form() {
        let m = model(8, 16);
        for c in [0.0, 0.5] {
            let p = flat(&m, 32, c);
            let pot = m.solve(&p).unwrap();
            let h = pot.system().boundary_values();
            for (a, b) in pot.psi().iter().zip(h) {
                assert!((a - b).abs() <= 1e-9);
            }
            let g = pot.grids();
            let iface = pot.at(5, g.interface_row());
            // Vσ₂d / (σ₂d + σ₁(H + c))
            assert!((iface - 1.0 / (1.0 + 2.0 * (1.0 + c))).abs() < 1e-12);
        }
    }

    #[test]
    fn flat_plate_traces() {
        let m = model(8, 16);
        let p = flat(&m, 32, 0.0);
        let pot = m.solve(&p).unwrap();
        let t = m.traces(&pot, &p).unwrap();
        for i in 0..p.grid().len() {
            assert!((t.dz_psi2_top[i] - 2.0 / 3.0).abs() < 1e-8);
            assert!((t.dz_psi1_bottom[i] - 1.0 / 3.0).abs() < 1e-8);
            assert_eq!(t.ell[i], t.dz_psi2_top[i]);
        }
        let r = transmission_residual(&pot, &m.perm);
        assert_eq!(r.jump_value_norm, 0.0);
        assert!(
            r.jump_flux_norm < 1e-8 && r.interior_residual_norm < 1e-8,
            "{r:?}"
        );
    }

    #[test]
    fn traces_require_matching_profile() {
        let m = model(4, 8);
        let p = flat(&m, 16, 0.0);
        let q = flat(&m, 16, 0.1);
        let pot = m.solve(&p).unwrap();
        assert!(matches!(m.traces(&pot, &q), Err(Error::NotSolved)));
    }

    #[test]
    fn contact_nodes_are_pinned_to_family_value() {
        let m = model(4, 8);
        let grid = Grid1D::new(1.0, 32).unwrap();
        let p = Profile::from_fn(grid, &m.params, BcKind::Clamped, |x| {
            let s = 1.0 - (std::f64::consts::PI * x).cos();
            -1.0 + 0.25 * s * s
        })
        .unwrap();
        let sys = m.assemble(&p).unwrap();
        let g = sys.grids();
        let node = g.node(16, g.interface_row());
        assert!(sys.is_dirichlet(node));
        let expected = m.family().h2(0.0, -1.0, p.values()[16]);
        assert_eq!(sys.boundary_values()[node], expected);
        assert!(!sys.is_dirichlet(g.node(15, g.interface_row())));
    }

    #[test]
    fn degenerate_floor_is_rejected() {
        let m = model(4, 8);
        let p = flat(&m, 16, 0.0);
        let grids = m.reference_grids(p.grid()).unwrap();
        let err = assemble(&p, m.family(), &m.perm, &grids, 0.0).unwrap_err();
        assert!(matches!(err, Error::DegenerateGap(_)));
        let other = ReferenceGrids::new(Grid1D::new(1.0, 8).unwrap(), 1.0, 4, 8).unwrap();
        let err = assemble(&p, m.family(), &m.perm, &other, 1e-6).unwrap_err();
        assert!(matches!(err, Error::GridMismatch(_)));
    }

    #[test]
    fn sensitivity_matches_energy_differences() {
        let m = model(6, 12);
        let grid = Grid1D::new(1.0, 24).unwrap();
        let shape = |x: f64| (1.0 - x * x).powi(2);
        let p = Profile::from_fn(grid.clone(), &m.params, BcKind::Clamped, |x| {
            -0.3 * shape(x)
        })
        .unwrap();
        let pot = m.solve(&p).unwrap();
        let sens = energy_sensitivity(&pot, &p, m.family(), &m.perm).unwrap();
        let energy = |v: &Profile| {
            let q = m.solve(v).unwrap();
            q.upper_bound() + q.correction()
        };
        let i = 9;
        let t = 1e-5;
        let mut plus = p.values().to_vec();
        plus[i] += t;
        let mut minus = p.values().to_vec();
        minus[i] -= t;
        let mk =
            |v: Vec<f64>| Profile::new(grid.clone(), v, &m.params, BcKind::Unconstrained).unwrap();
        let fd = (energy(&mk(plus)) - energy(&mk(minus))) / (2.0 * t);
        assert!(
            (fd - sens[i]).abs() <= 1e-6 * fd.abs(),
            "{fd} vs {}",
            sens[i]
        );
    }

    #[test]
    fn harmonic_permittivity_flux_jump_shrinks() {
        let params = DeviceParams::standard();
        let s = HarmonicPermittivity {
            mean: 2.0,
            amplitude: 0.5,
            wavenumber: 1.0,
            phase: 0.0,
            half_width: 1.0,
        };
        assert!(!s.depends_on_z());
        let perm = PermittivityField::new(Arc::new(s), 1.0, &params).unwrap();
        let fam = crate::family::example_family(&params, &perm).unwrap();
        let mut prev = f64::INFINITY;
        for k in [1usize, 2, 4] {
            let opts = SolverOptions {
                nz_layer: 4 * k,
                nz_gap: 4 * k,
                ..SolverOptions::default()
            };
            let m = Model::new(params, perm.clone(), Arc::new(fam.clone()), opts).unwrap();
            let p = flat(&m, 16 * k, 0.0);
            let pot = m.solve(&p).unwrap();
            let r = transmission_residual(&pot, &m.perm);
            assert!(r.jump_flux_norm < prev, "{k}: {r:?}");
            prev = r.jump_flux_norm;
        }
    }
}

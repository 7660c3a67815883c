//! Finite-difference plate operators on the profile grid.
//!
//! The discrete mechanical energy is
//!
//! ```text
//! E_m = β/2 Σ wᵢ (D₂u)ᵢ² + τ/2 P + a/4 P²,   P = Σ (u_{i+1} - uᵢ)² / h
//! ```
//!
//! with trapezoid weights `wᵢ` and `D₂` the ghost-node second difference of
//! [`centered_derivatives`]. Its gradient divided by `wᵢ` is
//! `β D₄u - (τ + aP) D₂u` at interior nodes.

use nalgebra::DMatrix;

use crate::geometry::{centered_derivatives, BcKind, DeviceParams};

pub fn second_difference(values: &[f64], h: f64, bc: BcKind) -> Vec<f64> {
    centered_derivatives(values, h, bc).1
}

/// Apply the transpose of the ghost-node `D₂` to `r`.
fn second_difference_transpose(r: &[f64], h: f64, bc: BcKind) -> Vec<f64> {
    let n = r.len() - 1;
    let h2 = h * h;
    let mut out = vec![0.0; n + 1];
    for i in 1..n {
        out[i - 1] += r[i] / h2;
        out[i] -= 2.0 * r[i] / h2;
        out[i + 1] += r[i] / h2;
    }
    match bc {
        BcKind::Clamped => {
            out[0] -= 2.0 * r[0] / h2;
            out[1] += 2.0 * r[0] / h2;
            out[n] -= 2.0 * r[n] / h2;
            out[n - 1] += 2.0 * r[n] / h2;
        }
        BcKind::Pinned => {}
        BcKind::Unconstrained => {
            let w = [2.0, -5.0, 4.0, -1.0];
            for k in 0..4 {
                out[k] += w[k] * r[0] / h2;
                out[n - k] += w[k] * r[n] / h2;
            }
        }
    }
    out
}

/// `D₄u = W⁻¹ D₂ᵀ W D₂ u`, the fourth difference with reflected ghost nodes.
pub fn fourth_difference(values: &[f64], h: f64, bc: BcKind) -> Vec<f64> {
    let n = values.len() - 1;
    let weights = trapezoid(n, h);
    let d2 = second_difference(values, h, bc);
    let weighted: Vec<f64> = d2.iter().zip(&weights).map(|(d, w)| d * w).collect();
    second_difference_transpose(&weighted, h, bc)
        .into_iter()
        .zip(&weights)
        .map(|(v, w)| v / w)
        .collect()
}

fn trapezoid(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![h; n + 1];
    w[0] = 0.5 * h;
    w[n] = 0.5 * h;
    w
}

/// `Σ wᵢ (D₂u)ᵢ²`, the discrete `‖∂²ₓu‖²`.
pub fn bending(values: &[f64], h: f64, bc: BcKind) -> f64 {
    let weights = trapezoid(values.len() - 1, h);
    second_difference(values, h, bc)
        .iter()
        .zip(&weights)
        .map(|(d, w)| w * d * d)
        .sum()
}

/// `P = Σ (u_{i+1} - uᵢ)²/h`, the exact `‖∂ₓu‖²` of the piecewise linear interpolant.
pub fn stretch(values: &[f64], h: f64) -> f64 {
    values
        .windows(2)
        .map(|w| (w[1] - w[0]).powi(2))
        .sum::<f64>()
        / h
}

pub fn mechanical_energy(values: &[f64], h: f64, bc: BcKind, params: &DeviceParams) -> f64 {
    let p = stretch(values, h);
    0.5 * params.beta * bending(values, h, bc)
        + (0.5 * params.tau + 0.25 * params.stretch_nonlinear * p) * p
}

/// `β D₄u - (τ + aP) D₂u` at interior nodes, zero at the two ends.
pub fn mechanical_gradient(values: &[f64], h: f64, bc: BcKind, params: &DeviceParams) -> Vec<f64> {
    let n = values.len() - 1;
    let d4 = fourth_difference(values, h, bc);
    let p = stretch(values, h);
    let tension = params.tau + params.stretch_nonlinear * p;
    let mut g = vec![0.0; n + 1];
    for i in 1..n {
        let d2 = (values[i + 1] - 2.0 * values[i] + values[i - 1]) / (h * h);
        g[i] = params.beta * d4[i] - tension * d2;
    }
    g
}

/// Matrix of `v ↦ β D₄v - tension · D₂v` on the interior nodes, for
/// profiles fixed to zero at both ends.
pub fn stiffness_metric(nodes: usize, h: f64, bc: BcKind, beta: f64, tension: f64) -> DMatrix<f64> {
    let n = nodes - 1;
    let mut m = DMatrix::zeros(n - 1, n - 1);
    let mut e = vec![0.0; n + 1];
    for j in 1..n {
        e[j] = 1.0;
        let d4 = fourth_difference(&e, h, bc);
        for i in 1..n {
            let d2 = (e[i + 1] - 2.0 * e[i] + e[i - 1]) / (h * h);
            m[(i - 1, j - 1)] = beta * d4[i] - tension * d2;
        }
        e[j] = 0.0;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quartic(n: usize) -> (Vec<f64>, f64) {
        let h = 2.0 / n as f64;
        let v = (0..=n)
            .map(|i| {
                let x = -1.0 + i as f64 * h;
                (1.0 - x * x).powi(2)
            })
            .collect();
        (v, h)
    }

    #[test]
    fn fourth_difference_of_quartic_is_24() {
        let (u, h) = quartic(40);
        let d4 = fourth_difference(&u, h, BcKind::Clamped);
        for &v in &d4[2..39] {
            assert!((v - 24.0).abs() < 1e-6, "{v}");
        }
    }

    #[test]
    fn gradient_matches_energy_differences() {
        let params = DeviceParams {
            beta: 1.3,
            tau: 0.7,
            stretch_nonlinear: 2.0,
            ..DeviceParams::standard()
        };
        for bc in [BcKind::Clamped, BcKind::Pinned] {
            let n = 20;
            let h = 2.0 / n as f64;
            let mut u: Vec<f64> = (0..=n)
                .map(|i| {
                    let x = -1.0 + i as f64 * h;
                    (1.0 - x * x).powi(2) * (0.3 + x)
                })
                .collect();
            u[0] = 0.0;
            u[n] = 0.0;
            let g = mechanical_gradient(&u, h, bc, &params);
            for j in [1, 2, 7, 19] {
                let t = 1e-6;
                let mut p = u.clone();
                p[j] += t;
                let mut m = u.clone();
                m[j] -= t;
                let fd = (mechanical_energy(&p, h, bc, &params)
                    - mechanical_energy(&m, h, bc, &params))
                    / (2.0 * t);
                assert!(
                    (fd / h - g[j]).abs() < 1e-6 * g[j].abs().max(1.0),
                    "{bc:?} {j}"
                );
            }
        }
    }

    #[test]
    fn metric_is_symmetric_positive_definite() {
        for bc in [BcKind::Clamped, BcKind::Pinned] {
            let m = stiffness_metric(17, 0.125, bc, 1.0, 0.5);
            assert!((&m - m.transpose()).amax() < 1e-9 * m.amax());
            assert!(m.cholesky().is_some());
        }
    }
}

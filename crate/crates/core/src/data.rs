//! Built-in initial data: flat space, small transverse-traceless
//! perturbations of it, and a time-symmetric conformally flat slice, each
//! with boundary families matching it at `t = 0`.

use std::f64::consts::PI;
use std::path::Path;

use crate::boundary::{ConformalBoundaryFamily, ConformalData};
use crate::error::{Error, Result};
use crate::grid::{Grid, SymTensorField};
use crate::output::{read_snapshot, tensor_from_snapshot};
use crate::tensor::{Mat3, IDENTITY3, ZERO3};

/// Profile of the time-symmetric slice, see [`conformal_factor`].
pub const TIME_SYMMETRIC: u32 = 2;

/// Amplitudes `(a, b, c, d)` of the perturbation modes of profiles 0 and 1.
pub fn profile_coefficients(profile: u32) -> Result<[f64; 4]> {
    match profile {
        0 => Ok([1.0, 1.0, 1.0, 1.0]),
        1 => Ok([0.5, -1.0, 0.75, 2.0]),
        TIME_SYMMETRIC => Ok([0.0; 4]),
        p => Err(Error::config("initial_data.profile", format!("unknown profile {p} (0, 1 or 2)"))),
    }
}

/// `ψ = 1 + ε(1 + x³/L)`. Harmonic, so `g = ψ⁴δ` with `k = 0` satisfies both
/// constraints exactly. The data depend on `x³` only and stay isotropic in
/// the tangential directions, so `k̂ = 0` on both faces for all time.
pub fn conformal_factor(x3: f64, l: f64, epsilon: f64) -> f64 {
    1.0 + epsilon * (1.0 + x3 / l)
}

/// Flat `g` with `k = ε·K(x)`,
///
/// `k₁₁ = −k₂₂ = εd cos(πx³/2L)`, `k₁₂ = εc sin(πx³/L)`, `k₁₃ = εa sin x²`,
/// `k₂₃ = εb sin x¹`, `k₃₃ = 0`, with `L = |x³_min|`.
///
/// `k` is traceless and divergence free, so the momentum constraint holds
/// exactly and the Hamiltonian constraint is violated at `O(ε²)`. Every
/// boundary condition holds on both faces for the families of
/// [`perturbed_boundary`].
pub fn perturbed_k(x: [f64; 3], l: f64, epsilon: f64, coef: [f64; 4]) -> Mat3 {
    let [a, b, c, d] = coef.map(|v| epsilon * v);
    let k11 = d * (PI * x[2] / (2.0 * l)).cos();
    let k12 = c * (PI * x[2] / l).sin();
    let k13 = a * x[1].sin();
    let k23 = b * x[0].sin();
    [[k11, k12, k13], [k12, -k11, k23], [k13, k23, 0.0]]
}

/// Boundary families consistent with [`perturbed_k`]: `k̂ = 0` on the inner
/// face and `k̂ = diag(εd, −εd)` on the outer face.
pub fn perturbed_boundary(epsilon: f64, profile: u32) -> Result<ConformalData> {
    let d = profile_coefficients(profile)?[3];
    let outer = if epsilon == 0.0 || profile == TIME_SYMMETRIC {
        ConformalBoundaryFamily::Constant
    } else {
        ConformalBoundaryFamily::DiagExp { lambda: -epsilon * d }
    };
    Ok(ConformalData { inner: ConformalBoundaryFamily::Constant, outer })
}

pub fn flat(grid: &Grid) -> (SymTensorField, SymTensorField) {
    (grid.tensor_from_fn(|_| IDENTITY3, false), grid.tensor_from_fn(|_| ZERO3, false))
}

pub fn perturbed(grid: &Grid, epsilon: f64, profile: u32) -> Result<(SymTensorField, SymTensorField)> {
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::config("initial_data.epsilon", format!("must be finite and non-negative, got {epsilon}")));
    }
    let coef = profile_coefficients(profile)?;
    if epsilon == 0.0 {
        return Ok(flat(grid));
    }
    let l = -grid.x3[0];
    if profile == TIME_SYMMETRIC {
        let g = grid.tensor_from_fn(|x| IDENTITY3.map(|r| r.map(|v| v * conformal_factor(x[2], l, epsilon).powi(4))), false);
        return Ok((g, grid.tensor_from_fn(|_| ZERO3, false)));
    }
    let g = grid.tensor_from_fn(|_| IDENTITY3, false);
    let k = grid.tensor_from_fn(|x| perturbed_k(x, l, epsilon, coef), false);
    Ok((g, k))
}

/// `g` and `k` from a snapshot file holding the components `gij`, `kij`.
pub fn from_file(grid: &Grid, path: &Path) -> Result<(SymTensorField, SymTensorField)> {
    let fields = read_snapshot(path)?;
    Ok((tensor_from_snapshot(grid, &fields, "g")?, tensor_from_snapshot(grid, &fields, "k")?))
}

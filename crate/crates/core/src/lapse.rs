//! Elliptic lapse equation `Δ_gΦ − |k|²Φ = s` with `Φ = 1` on both faces.
//!
//! The discrete operator is the trace of the stencil Hessian, so it is not
//! symmetric on a curved metric. It is solved with BiCGSTAB, preconditioned by
//! the exact inverse of a layer-averaged constant-coefficient operator
//! (FFT in the two periodic directions, a tridiagonal solve in `x³`).

use crate::error::{Error, Result};
use crate::geometry::{for_each_geometry, norm2_point};
use crate::grid::{Grid, ScalarField, SymTensorField};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitialGuess {
    Previous,
    Unity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EllipticConfig {
    pub rel_tol: f64,
    pub max_iter: usize,
    pub initial_guess: InitialGuess,
}

impl Default for EllipticConfig {
    fn default() -> Self {
        EllipticConfig { rel_tol: 1e-10, max_iter: 500, initial_guess: InitialGuess::Previous }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub rel_residual: f64,
}

/// Per-node coefficients of `L u = g^{ab}∂_a∂_b u − g^{ab}Γ^c_ab ∂_c u − c u`.
#[derive(Clone, Copy, Debug, Default)]
struct NodeCoeffs {
    ginv: [f64; 6],
    b: [f64; 3],
    c: f64,
}

pub struct LapseOperator<'a> {
    grid: &'a Grid,
    coeffs: Vec<NodeCoeffs>,
    precond: Preconditioner,
}

impl<'a> LapseOperator<'a> {
    /// Builds the operator with zeroth-order coefficient `c` (usually `|k|²`).
    pub fn new(grid: &'a Grid, g: &SymTensorField, c: &ScalarField) -> Result<Self> {
        let mut coeffs = vec![NodeCoeffs::default(); grid.num_real()];
        let mut n = 0;
        for_each_geometry(grid, g, |i1, i2, i3, _, geo| {
            let cv = c.get(grid, i1, i2, i3);
            if !(cv >= 0.0) {
                return Err(Error::Numeric(format!(
                    "lapse potential must be non-negative, got {cv} at ({i1},{i2},{i3})"
                )));
            }
            let gi = &geo.ginv;
            coeffs[n] = NodeCoeffs {
                ginv: [gi[0][0], gi[0][1], gi[0][2], gi[1][1], gi[1][2], gi[2][2]],
                b: geo.contracted_gamma(),
                c: cv,
            };
            n += 1;
            Ok(())
        })?;
        let precond = Preconditioner::new(grid, &coeffs);
        Ok(LapseOperator { grid, coeffs, precond })
    }

    /// `out = L u` on interior nodes, zero elsewhere. `u` must vanish on the
    /// face layers.
    pub fn apply(&self, u: &[f64], out: &mut [f64]) {
        let grid = self.grid;
        let h = grid.h;
        out.iter_mut().for_each(|x| *x = 0.0);
        let mut n = 0;
        for i1 in 0..grid.n1 {
            for i2 in 0..grid.n2 {
                let cols = grid.neighbourhood(i1, i2);
                let base = grid.column(i1, i2);
                n += 1;
                for i3 in 1..grid.n3 as isize - 1 {
                    let co = &self.coeffs[n];
                    n += 1;
                    let p = cols.second(u, i3, &h);
                    let gi = &co.ginv;
                    let v = gi[0] * p.dd[0][0]
                        + gi[3] * p.dd[1][1]
                        + gi[5] * p.dd[2][2]
                        + 2.0 * (gi[1] * p.dd[0][1] + gi[2] * p.dd[0][2] + gi[4] * p.dd[1][2])
                        - co.b[0] * p.d[0]
                        - co.b[1] * p.d[1]
                        - co.b[2] * p.d[2]
                        - co.c * p.v;
                    out[(base as isize + i3) as usize] = v;
                }
                n += 1;
            }
        }
    }

    /// Solves `L u = b` with `u = 0` on both faces, starting from `x0`.
    pub fn solve(&self, b: &[f64], x0: &[f64], cfg: &EllipticConfig) -> Result<(Vec<f64>, SolveStats)> {
        let grid = self.grid;
        let mask = interior_mask(grid);
        let masked = |v: &[f64]| -> Vec<f64> { v.iter().zip(&mask).map(|(x, &m)| if m { *x } else { 0.0 }).collect() };
        let b = masked(b);
        let mut x = masked(x0);
        let bnorm = norm(&b);
        if bnorm == 0.0 {
            return Ok((vec![0.0; b.len()], SolveStats::default()));
        }
        let len = b.len();
        let mut r = vec![0.0; len];
        self.apply(&x, &mut r);
        for i in 0..len {
            r[i] = b[i] - r[i];
        }
        let mut rel = norm(&r) / bnorm;
        if rel <= cfg.rel_tol {
            return Ok((x, SolveStats { iterations: 0, rel_residual: rel }));
        }
        let r_hat = r.clone();
        let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
        let mut v = vec![0.0; len];
        let mut p = vec![0.0; len];
        let mut y = vec![0.0; len];
        let mut s = vec![0.0; len];
        let mut z = vec![0.0; len];
        let mut t = vec![0.0; len];
        for it in 1..=cfg.max_iter {
            let rho_new = dot(&r_hat, &r);
            if rho_new == 0.0 || omega == 0.0 {
                break;
            }
            let beta = (rho_new / rho) * (alpha / omega);
            rho = rho_new;
            for i in 0..len {
                p[i] = r[i] + beta * (p[i] - omega * v[i]);
            }
            self.precond.apply(grid, &p, &mut y);
            self.apply(&y, &mut v);
            alpha = rho / dot(&r_hat, &v);
            for i in 0..len {
                s[i] = r[i] - alpha * v[i];
            }
            if norm(&s) / bnorm <= cfg.rel_tol {
                for i in 0..len {
                    x[i] += alpha * y[i];
                }
                self.apply(&x, &mut r);
                rel = norm(&b.iter().zip(&r).map(|(a, c)| a - c).collect::<Vec<_>>()) / bnorm;
                if rel <= cfg.rel_tol {
                    return Ok((x, SolveStats { iterations: it, rel_residual: rel }));
                }
                for i in 0..len {
                    r[i] = b[i] - r[i];
                }
                continue;
            }
            self.precond.apply(grid, &s, &mut z);
            self.apply(&z, &mut t);
            let tt = dot(&t, &t);
            omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
            for i in 0..len {
                x[i] += alpha * y[i] + omega * z[i];
                r[i] = s[i] - omega * t[i];
            }
            rel = norm(&r) / bnorm;
            if rel <= cfg.rel_tol {
                // Confirm with the true residual to guard against drift.
                self.apply(&x, &mut t);
                rel = norm(&b.iter().zip(&t).map(|(a, c)| a - c).collect::<Vec<_>>()) / bnorm;
                if rel <= cfg.rel_tol {
                    return Ok((x, SolveStats { iterations: it, rel_residual: rel }));
                }
                for i in 0..len {
                    r[i] = b[i] - t[i];
                }
            }
        }
        Err(Error::LapseNotConverged { iterations: cfg.max_iter, residual: rel })
    }
}

fn interior_mask(grid: &Grid) -> Vec<bool> {
    let mut m = vec![false; grid.n1 * grid.n2 * grid.n3_total()];
    for (i1, i2, i3) in grid.real_nodes() {
        if i3 > 0 && i3 < grid.n3 as isize - 1 {
            m[grid.index(i1, i2, i3)] = true;
        }
    }
    m
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Exact inverse of the operator with coefficients averaged over each
/// `x³ = const` layer.
struct Preconditioner {
    fft1: Arc<dyn Fft<f64>>,
    fft2: Arc<dyn Fft<f64>>,
    ifft1: Arc<dyn Fft<f64>>,
    ifft2: Arc<dyn Fft<f64>>,
    /// Thomas factors per mode: `lower`, modified `upper` and inverse pivot,
    /// indexed `[mode][row]` over the interior rows.
    lower: Vec<Complex64>,
    upper: Vec<Complex64>,
    inv_pivot: Vec<Complex64>,
    rows: usize,
}

impl Preconditioner {
    fn new(grid: &Grid, coeffs: &[NodeCoeffs]) -> Self {
        let (n1, n2, n3) = (grid.n1, grid.n2, grid.n3);
        let rows = n3 - 2;
        // Layer averages, indexed by i3.
        let mut avg = vec![NodeCoeffs::default(); n3];
        for c in 0..n1 * n2 {
            for i3 in 0..n3 {
                let co = &coeffs[c * n3 + i3];
                let a = &mut avg[i3];
                for m in 0..6 {
                    a.ginv[m] += co.ginv[m];
                }
                for m in 0..3 {
                    a.b[m] += co.b[m];
                }
                a.c += co.c;
            }
        }
        let inv = 1.0 / (n1 * n2) as f64;
        for a in &mut avg {
            a.ginv.iter_mut().for_each(|x| *x *= inv);
            a.b.iter_mut().for_each(|x| *x *= inv);
            a.c *= inv;
        }
        let [h1, h2, h3] = grid.h;
        let i = Complex64::new(0.0, 1.0);
        let modes = n1 * n2;
        let mut lower = vec![Complex64::default(); modes * rows];
        let mut upper = vec![Complex64::default(); modes * rows];
        let mut inv_pivot = vec![Complex64::default(); modes * rows];
        for m1 in 0..n1 {
            let th1 = 2.0 * std::f64::consts::PI * m1 as f64 / n1 as f64;
            let (s1, l1) = (th1.sin() / h1, (2.0 - 2.0 * th1.cos()) / (h1 * h1));
            for m2 in 0..n2 {
                let th2 = 2.0 * std::f64::consts::PI * m2 as f64 / n2 as f64;
                let (s2, l2) = (th2.sin() / h2, (2.0 - 2.0 * th2.cos()) / (h2 * h2));
                let mode = m1 * n2 + m2;
                let mut prev_upper = Complex64::default();
                for r in 0..rows {
                    let a = &avg[r + 1];
                    let [g11, g12, g13, g22, g23, g33] = a.ginv;
                    let diag = Complex64::new(-g11 * l1 - g22 * l2 - 2.0 * g12 * s1 * s2 - 2.0 * g33 / (h3 * h3) - a.c, 0.0)
                        - i * (a.b[0] * s1 + a.b[1] * s2);
                    let cross = i * (g13 * s1 + g23 * s2) / h3;
                    let up = Complex64::new(g33 / (h3 * h3) - a.b[2] / (2.0 * h3), 0.0) + cross;
                    let lo = Complex64::new(g33 / (h3 * h3) + a.b[2] / (2.0 * h3), 0.0) - cross;
                    let k = mode * rows + r;
                    let lo = if r == 0 { Complex64::default() } else { lo };
                    let pivot = diag - lo * prev_upper;
                    let ip = 1.0 / pivot;
                    lower[k] = lo;
                    inv_pivot[k] = ip;
                    upper[k] = up * ip;
                    prev_upper = upper[k];
                }
            }
        }
        let mut planner = FftPlanner::new();
        Preconditioner {
            fft1: planner.plan_fft_forward(n1),
            fft2: planner.plan_fft_forward(n2),
            ifft1: planner.plan_fft_inverse(n1),
            ifft2: planner.plan_fft_inverse(n2),
            lower,
            upper,
            inv_pivot,
            rows,
        }
    }

    fn transform(&self, grid: &Grid, layer: &mut [Complex64], forward: bool) {
        let (n1, n2) = (grid.n1, grid.n2);
        let (f1, f2) = if forward { (&self.fft1, &self.fft2) } else { (&self.ifft1, &self.ifft2) };
        for row in layer.chunks_mut(n2) {
            f2.process(row);
        }
        let mut col = vec![Complex64::default(); n1];
        for j in 0..n2 {
            for a in 0..n1 {
                col[a] = layer[a * n2 + j];
            }
            f1.process(&mut col);
            for a in 0..n1 {
                layer[a * n2 + j] = col[a];
            }
        }
    }

    fn apply(&self, grid: &Grid, r: &[f64], out: &mut [f64]) {
        let (n1, n2) = (grid.n1, grid.n2);
        let rows = self.rows;
        let modes = n1 * n2;
        // spec[row][mode]
        let mut spec = vec![Complex64::default(); rows * modes];
        for row in 0..rows {
            let layer = &mut spec[row * modes..(row + 1) * modes];
            for i1 in 0..n1 {
                for i2 in 0..n2 {
                    layer[i1 * n2 + i2] = Complex64::new(r[grid.index(i1, i2, row as isize + 1)], 0.0);
                }
            }
            self.transform(grid, layer, true);
        }
        for mode in 0..modes {
            let base = mode * rows;
            let mut prev = Complex64::default();
            for row in 0..rows {
                let k = base + row;
                let y = (spec[row * modes + mode] - self.lower[k] * prev) * self.inv_pivot[k];
                spec[row * modes + mode] = y;
                prev = y;
            }
            for row in (0..rows.saturating_sub(1)).rev() {
                let next = spec[(row + 1) * modes + mode];
                spec[row * modes + mode] -= self.upper[base + row] * next;
            }
        }
        out.iter_mut().for_each(|x| *x = 0.0);
        let scale = 1.0 / modes as f64;
        for row in 0..rows {
            let layer = &mut spec[row * modes..(row + 1) * modes];
            self.transform(grid, layer, false);
            for i1 in 0..n1 {
                for i2 in 0..n2 {
                    out[grid.index(i1, i2, row as isize + 1)] = layer[i1 * n2 + i2].re * scale;
                }
            }
        }
    }
}

/// `|k|²_g` on real nodes.
pub fn k_norm2(grid: &Grid, g: &SymTensorField, k: &SymTensorField) -> Result<ScalarField> {
    crate::geometry::norm2(grid, g, k)
}

/// Solves the lapse equation `Δ_gΦ − |k|²Φ = s` with `Φ = 1` on both faces.
/// Ghost layers of the result are filled by cubic extrapolation.
pub fn solve_lapse(
    grid: &Grid,
    g: &SymTensorField,
    k: &SymTensorField,
    source: Option<&ScalarField>,
    previous: Option<&ScalarField>,
    cfg: &EllipticConfig,
) -> Result<(ScalarField, SolveStats)> {
    let c = k_norm2(grid, g, k)?;
    let op = LapseOperator::new(grid, g, &c)?;
    solve_lapse_with(&op, &c, source, previous, cfg)
}

/// [`solve_lapse`] with a prebuilt operator whose potential is `c = |k|²`.
pub fn solve_lapse_with(
    op: &LapseOperator,
    c: &ScalarField,
    source: Option<&ScalarField>,
    previous: Option<&ScalarField>,
    cfg: &EllipticConfig,
) -> Result<(ScalarField, SolveStats)> {
    let grid = op.grid;
    // Φ = 1 + u: L u = s + |k|².
    let mut b = c.data.clone();
    if let Some(s) = source {
        for (x, y) in b.iter_mut().zip(&s.data) {
            *x += y;
        }
    }
    for x in b.iter_mut() {
        if !x.is_finite() {
            *x = 0.0;
        }
    }
    let x0: Vec<f64> = match (cfg.initial_guess, previous) {
        (InitialGuess::Previous, Some(p)) => p.data.iter().map(|v| if v.is_finite() { v - 1.0 } else { 0.0 }).collect(),
        _ => vec![0.0; b.len()],
    };
    let (u, stats) = op.solve(&b, &x0, cfg)?;
    let mut phi = grid.scalar();
    for (i1, i2, i3) in grid.real_nodes() {
        let i = grid.index(i1, i2, i3);
        phi.data[i] = 1.0 + u[i];
    }
    phi.extrapolate_ghosts(grid);
    phi.check_finite(grid, "lapse")?;
    if source.is_none() {
        check_max_principle(grid, &phi, cfg.rel_tol)?;
    }
    Ok((phi, stats))
}

/// `0 < Φ ≤ 1 + 10·rel_tol` on every real node.
pub fn check_max_principle(grid: &Grid, phi: &ScalarField, rel_tol: f64) -> Result<()> {
    for (i1, i2, i3) in grid.real_nodes() {
        let v = phi.get(grid, i1, i2, i3);
        if !(v > 0.0 && v <= 1.0 + 10.0 * rel_tol) {
            return Err(Error::Numeric(format!(
                "lapse violates the maximum principle: Φ = {v} at ({i1},{i2},{i3})"
            )));
        }
    }
    Ok(())
}

/// `Δ_gΦ − |k|²Φ` at interior nodes; face nodes carry the Dirichlet rows and
/// report 0.
pub fn lapse_residual(
    grid: &Grid,
    g: &SymTensorField,
    k: &SymTensorField,
    phi: &ScalarField,
) -> Result<ScalarField> {
    let mut out = grid.scalar();
    for_each_geometry(grid, g, |i1, i2, i3, cols, geo| {
        if i3 == 0 || i3 == grid.n3 as isize - 1 {
            return Ok(());
        }
        let p = cols.second(&phi.data, i3, &grid.h);
        let kk = k.get_mat(grid, i1, i2, i3);
        out.set(grid, i1, i2, i3, geo.laplace_scalar(&p) - norm2_point(&geo.ginv, &kk) * p.v);
        Ok(())
    })?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_grid, GridSpec};
    use crate::tensor::{IDENTITY3, ZERO3};

    fn grid(n: usize, n3: usize, x3_min: f64) -> Grid {
        make_grid(GridSpec { n1: n, n2: n, n3, x3_min, ..GridSpec::default() }).unwrap()
    }

    /// Flat metric and a `k` with `|k|² = c` everywhere.
    fn uniform_k(g: &Grid, c: f64) -> (SymTensorField, SymTensorField) {
        let flat = g.tensor_from_fn(|_| IDENTITY3, true);
        let a = (c / 2.0).sqrt();
        let k = g.tensor_from_fn(|_| [[a, 0.0, 0.0], [0.0, -a, 0.0], [0.0, 0.0, 0.0]], true);
        (flat, k)
    }

    #[test]
    fn zero_k_gives_unit_lapse() {
        let g = grid(8, 8, -1.0);
        let flat = g.tensor_from_fn(|_| IDENTITY3, true);
        let k = g.tensor_from_fn(|_| ZERO3, true);
        let (phi, _) = solve_lapse(&g, &flat, &k, None, None, &EllipticConfig::default()).unwrap();
        for (a, b, c) in g.real_nodes() {
            assert_eq!(phi.get(&g, a, b, c), 1.0);
        }
        assert_eq!(lapse_residual(&g, &flat, &k, &phi).unwrap().max_abs(&g), 0.0);
    }

    #[test]
    fn unit_lapse_residual_is_minus_c() {
        let g = grid(6, 8, -1.0);
        let (flat, k) = uniform_k(&g, 0.7);
        let one = g.scalar_from_fn_with_ghosts(|_| 1.0);
        let r = lapse_residual(&g, &flat, &k, &one).unwrap();
        for (a, b, c) in g.real_nodes() {
            if c > 0 && c < 7 {
                assert!((r.get(&g, a, b, c) + 0.7).abs() < 1e-14);
            }
        }
    }

    fn cosh_error(n3: usize, c: f64) -> (f64, f64) {
        let g = grid(4, n3, -1.0);
        let (flat, k) = uniform_k(&g, c);
        let cfg = EllipticConfig { rel_tol: 1e-13, ..EllipticConfig::default() };
        let (phi, stats) = solve_lapse(&g, &flat, &k, None, None, &cfg).unwrap();
        assert!(stats.rel_residual <= 1e-13);
        let l = 1.0;
        let sc = c.sqrt();
        let mut err = 0.0f64;
        let mut min = f64::INFINITY;
        for (a, b, i3) in g.real_nodes() {
            let x3 = g.coords(a, b, i3)[2];
            let exact = (sc * (x3 + l / 2.0)).cosh() / (sc * l / 2.0).cosh();
            let v = phi.get(&g, a, b, i3);
            err = err.max((v - exact).abs());
            min = min.min(v);
        }
        (err, min)
    }

    #[test]
    fn cosh_oracle_second_order() {
        let c = 2.0;
        let (e1, _) = cosh_error(9, c);
        let (e2, _) = cosh_error(17, c);
        let (e3, min) = cosh_error(33, c);
        let r1 = (e1 / e2).log2();
        let r2 = (e2 / e3).log2();
        assert!((r1 - 2.0).abs() < 0.2 && (r2 - 2.0).abs() < 0.2, "{r1} {r2}");
        // Minimum at the midplane node.
        assert!((min - 1.0 / (c.sqrt() / 2.0).cosh()).abs() < 1e-3);
    }

    #[test]
    fn curved_metric_converges_and_obeys_max_principle() {
        let g = grid(12, 13, -1.0);
        let m = g.tensor_from_fn(|x| {
            [
                [1.0 + 0.2 * x[1].sin(), 0.1 * x[2], 0.1 * x[0].cos()],
                [0.1 * x[2], 1.3, 0.05 * (x[0] + x[1]).sin()],
                [0.1 * x[0].cos(), 0.05 * (x[0] + x[1]).sin(), 0.8 + 0.1 * x[2]],
            ]
        }, true);
        let k = g.tensor_from_fn(|x| {
            [[0.5 * x[0].sin(), 0.2, 0.3 * x[2]], [0.2, -0.4, 0.0], [0.3 * x[2], 0.0, 0.1 * x[1].cos()]]
        }, true);
        let cfg = EllipticConfig::default();
        let (phi, stats) = solve_lapse(&g, &m, &k, None, None, &cfg).unwrap();
        assert!(stats.iterations < 60, "{}", stats.iterations);
        let r = lapse_residual(&g, &m, &k, &phi).unwrap();
        let c = k_norm2(&g, &m, &k).unwrap();
        let rn: f64 = r.data.iter().filter(|x| x.is_finite()).map(|x| x * x).sum::<f64>().sqrt();
        let cn: f64 = c.data.iter().filter(|x| x.is_finite()).map(|x| x * x).sum::<f64>().sqrt();
        assert!(rn <= 2.0 * cfg.rel_tol * cn, "{rn} {cn}");
        check_max_principle(&g, &phi, cfg.rel_tol).unwrap();
        // Warm start from the solution converges immediately.
        let (_, s2) = solve_lapse(&g, &m, &k, None, Some(&phi), &cfg).unwrap();
        assert!(s2.iterations <= 1);
    }

    #[test]
    fn larger_potential_gives_smaller_lapse() {
        let g = grid(8, 11, -1.0);
        let flat = g.tensor_from_fn(|_| IDENTITY3, true);
        let mk = |amp: f64| {
            g.tensor_from_fn(|x| {
                let a = amp * (1.0 + 0.5 * x[0].sin()) * (1.0 + x[2] * x[2]);
                [[a, 0.0, 0.0], [0.0, -a, 0.0], [0.0, 0.0, 0.0]]
            }, true)
        };
        let cfg = EllipticConfig { rel_tol: 1e-12, ..EllipticConfig::default() };
        let (p1, _) = solve_lapse(&g, &flat, &mk(0.5), None, None, &cfg).unwrap();
        let (p2, _) = solve_lapse(&g, &flat, &mk(0.8), None, None, &cfg).unwrap();
        for (a, b, c) in g.real_nodes() {
            assert!(p2.get(&g, a, b, c) <= p1.get(&g, a, b, c) + 1e-12);
        }
    }

    #[test]
    fn non_convergence_is_reported() {
        let g = grid(8, 9, -1.0);
        let (_, k) = uniform_k(&g, 1.0);
        let cfg = EllipticConfig { rel_tol: 1e-14, max_iter: 1, ..EllipticConfig::default() };
        let m = g.tensor_from_fn(|x| {
            let s = 1.0 + 0.3 * x[0].sin();
            [[s, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0 + 0.3 * x[1].cos()]]
        }, true);
        assert!(matches!(
            solve_lapse(&g, &m, &k, None, None, &cfg),
            Err(Error::LapseNotConverged { .. })
        ));
    }
}

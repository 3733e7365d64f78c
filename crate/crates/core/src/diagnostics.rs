//! Monitored quantities: constraints, the spacetime Ricci tensor
//! reconstructed from the 3+1 fields, the Einstein tensor, energies, the
//! trace and propagation identities, boundary residuals and convergence
//! rates.

use crate::boundary::{bc_residuals, hat, BcResiduals, BoundarySource};
use crate::error::{Error, Result};
use crate::evolution::{e0v_point, second_variation, State};
use crate::geometry::{
    for_each_geometry, frame_project_point, metric_inverse, normal_frame, norm2_point, raise_both, trace_point,
    NormalFrame, PointGeometry, TensorDerivs,
};
use crate::grid::{integrate_volume, Face, Grid, PointDerivs, ScalarField, SymTensorField};
use crate::tensor::{dot3, matmul2, matmul3, Mat2, Mat3, ZERO3};

/// Spacetime Ricci components against `{e₀, ∂ᵢ}` with `e₀ = Φ⁻¹∂ₜ`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PointRicci {
    pub rij: Mat3,
    pub r00: f64,
    /// `𝒢_i = R(e₀, ∂ᵢ)`.
    pub r0i: [f64; 3],
}

/// `∂ᵢ tr k` and `∇^a k_ai` from the covariant derivative of `k`.
fn trace_and_divergence(ginv: &Mat3, nk: &[Mat3; 3]) -> ([f64; 3], [f64; 3]) {
    let grad = std::array::from_fn(|i| dot3(ginv, &nk[i]));
    let div = std::array::from_fn(|i| (0..3).map(|a| (0..3).map(|b| ginv[a][b] * nk[a][b][i]).sum::<f64>()).sum());
    (grad, div)
}

pub fn spacetime_ricci_point(geo: &PointGeometry, k: &TensorDerivs, v: &Mat3, phi: &PointDerivs) -> PointRicci {
    let sv = second_variation(geo, &k.v, phi);
    let mut rij = ZERO3;
    for i in 0..3 {
        for j in 0..3 {
            rij[i][j] = sv[i][j] - v[i][j];
        }
    }
    let k2 = norm2_point(&geo.ginv, &k.v);
    let r00 = trace_point(&geo.ginv, v) + k2 + geo.laplace_scalar(phi) / phi.v;
    let (grad, div) = trace_and_divergence(&geo.ginv, &geo.cov_d(k));
    PointRicci { rij, r00, r0i: std::array::from_fn(|i| grad[i] - div[i]) }
}

/// Spatial Einstein components `G_ij = R_ij − ½g_ij R`, the spacetime scalar
/// curvature `R` and `𝒢̃_i = 𝒢_i − ½∂ᵢ tr k`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PointEinstein {
    pub gij: Mat3,
    pub scalar: f64,
    pub gtilde: [f64; 3],
}

pub fn einstein_point(geo: &PointGeometry, ric: &PointRicci, grad_trk: &[f64; 3]) -> PointEinstein {
    let scalar = -ric.r00 + dot3(&geo.ginv, &ric.rij);
    let mut gij = ZERO3;
    for i in 0..3 {
        for j in 0..3 {
            gij[i][j] = ric.rij[i][j] - 0.5 * geo.g[i][j] * scalar;
        }
    }
    PointEinstein { gij, scalar, gtilde: std::array::from_fn(|i| ric.r0i[i] - 0.5 * grad_trk[i]) }
}

/// All curvature diagnostics of a completed state on the real nodes.
#[derive(Clone, Debug)]
pub struct Curvature {
    pub ricci: SymTensorField,
    pub r00: ScalarField,
    pub r0i: [ScalarField; 3],
    pub einstein: SymTensorField,
    pub scalar: ScalarField,
    pub gtilde: [ScalarField; 3],
}

pub fn curvature(grid: &Grid, s: &State) -> Result<Curvature> {
    let mut c = Curvature {
        ricci: grid.tensor(),
        r00: grid.scalar(),
        r0i: std::array::from_fn(|_| grid.scalar()),
        einstein: grid.tensor(),
        scalar: grid.scalar(),
        gtilde: std::array::from_fn(|_| grid.scalar()),
    };
    for_each_geometry(grid, &s.g, |i1, i2, i3, cols, geo| {
        let kd = TensorDerivs::gather(&s.k, cols, i3, &grid.h);
        let p = cols.second(&s.phi.data, i3, &grid.h);
        let ric = spacetime_ricci_point(geo, &kd, &s.v.get_mat(grid, i1, i2, i3), &p);
        let (grad, _) = trace_and_divergence(&geo.ginv, &geo.cov_d(&kd));
        let e = einstein_point(geo, &ric, &grad);
        c.ricci.set_mat(grid, i1, i2, i3, &ric.rij);
        c.r00.set(grid, i1, i2, i3, ric.r00);
        c.einstein.set_mat(grid, i1, i2, i3, &e.gij);
        c.scalar.set(grid, i1, i2, i3, e.scalar);
        for i in 0..3 {
            c.r0i[i].set(grid, i1, i2, i3, ric.r0i[i]);
            c.gtilde[i].set(grid, i1, i2, i3, e.gtilde[i]);
        }
        Ok(())
    })?;
    Ok(c)
}

/// `R − |k|² + (tr k)²`.
pub fn hamiltonian(grid: &Grid, g: &SymTensorField, k: &SymTensorField) -> Result<ScalarField> {
    let mut out = grid.scalar();
    for_each_geometry(grid, g, |i1, i2, i3, _, geo| {
        let kv = k.get_mat(grid, i1, i2, i3);
        let trk = trace_point(&geo.ginv, &kv);
        out.set(grid, i1, i2, i3, geo.scalar - norm2_point(&geo.ginv, &kv) + trk * trk);
        Ok(())
    })?;
    Ok(out)
}

/// `∂ⱼ tr k − ∇^a k_aj`; needs the first ghost layer of `k`.
pub fn momentum(grid: &Grid, g: &SymTensorField, k: &SymTensorField) -> Result<[ScalarField; 3]> {
    let mut out: [ScalarField; 3] = std::array::from_fn(|_| grid.scalar());
    for_each_geometry(grid, g, |i1, i2, i3, cols, geo| {
        let kd = TensorDerivs::gather(k, cols, i3, &grid.h);
        let (grad, div) = trace_and_divergence(&geo.ginv, &geo.cov_d(&kd));
        for j in 0..3 {
            out[j].set(grid, i1, i2, i3, grad[j] - div[j]);
        }
        Ok(())
    })?;
    for (j, f) in out.iter().enumerate() {
        f.check_finite(grid, &format!("momentum constraint {}", j + 1))?;
    }
    Ok(out)
}

/// `tr_g k` on real nodes and on every ghost node where `g` and `k` are
/// filled, evaluated pointwise.
fn trace_with_ghosts(grid: &Grid, g: &SymTensorField, k: &SymTensorField) -> ScalarField {
    let mut out = grid.scalar();
    for i in 0..out.data.len() {
        let gm = g.get_mat_at(i);
        if let Some(gi) = metric_inverse(&gm) {
            out.data[i] = trace_point(&gi, &k.get_mat_at(i));
        }
    }
    out
}

/// Pointwise defect of the trace identity
/// `e₀²tr k − Δ_g tr k = e₀[(tr k)²] + 4Φ⁻¹∇^aΦ 𝒢_a`,
/// with `e₀²tr k` assembled from the evolution right-hand side.
pub fn trace_identity_residual(grid: &Grid, s: &State) -> Result<ScalarField> {
    let trk_f = trace_with_ghosts(grid, &s.g, &s.k);
    let mut out = grid.scalar();
    for_each_geometry(grid, &s.g, |i1, i2, i3, cols, geo| {
        let gi = &geo.ginv;
        let kd = TensorDerivs::gather(&s.k, cols, i3, &grid.h);
        let p = cols.second(&s.phi.data, i3, &grid.h);
        let pd = cols.second(&s.phi_dot.data, i3, &grid.h);
        let v = s.v.get_mat(grid, i1, i2, i3);
        let e0v = e0v_point(geo, &kd, &v, &p, &pd);
        let kup = raise_both(gi, &kd.v);
        let kk = matmul3(&matmul3(&kd.v, gi), &kd.v);
        let k2 = dot3(&kup, &kd.v);
        let kv = dot3(&kup, &v);
        let e0k2 = 4.0 * dot3(&kup, &kk) + 2.0 * kv;
        let lhs = dot3(gi, &e0v) + 2.0 * kv + 2.0 * e0k2;
        let trk = trace_point(gi, &kd.v);
        let e0trk = trace_point(gi, &v) + 2.0 * k2;
        let (grad, div) = trace_and_divergence(gi, &geo.cov_d(&kd));
        let lap_trk = geo.laplace_scalar(&cols.second(&trk_f.data, i3, &grid.h));
        let mut coupling = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                coupling += gi[a][b] * p.d[b] * (grad[a] - div[a]);
            }
        }
        let rhs = lap_trk + 2.0 * trk * e0trk + 4.0 * coupling / p.v;
        out.set(grid, i1, i2, i3, lhs - rhs);
        Ok(())
    })?;
    out.check_finite(grid, "trace identity residual")?;
    Ok(out)
}

/// `L²` norm of the trace-identity defect.
pub fn trace_identity_check(grid: &Grid, s: &State) -> Result<f64> {
    let r = trace_identity_residual(grid, s)?;
    l2_scalar(grid, &s.g, &r)
}

/// Defect of the Einstein-tensor propagation identity at the middle of three
/// consecutive slices, with `e₀G_ij` by centred differences in time.
pub fn propagation_residual(grid: &Grid, slices: &[State]) -> Result<SymTensorField> {
    if slices.len() < 3 {
        return Err(Error::Numeric(format!("propagation check needs 3 slices, got {}", slices.len())));
    }
    let (a, s, b) = (&slices[0], &slices[1], &slices[2]);
    let dt = b.t - a.t;
    if !(dt > 0.0) {
        return Err(Error::Numeric("propagation check slices are not increasing in time".into()));
    }
    let ga = curvature(grid, a)?.einstein;
    let gb = curvature(grid, b)?.einstein;
    let c = curvature(grid, s)?;
    let mut gt = c.gtilde.clone();
    for f in gt.iter_mut() {
        f.extrapolate_ghosts(grid);
    }
    // Ghosts of tr k by extrapolation rather than from the boundary ghosts of
    // k: the face Laplacian then becomes the one-sided second-order stencil.
    let mut trk_f = trace_with_ghosts(grid, &s.g, &s.k);
    trk_f.extrapolate_ghosts(grid);
    let mut out = grid.tensor();
    for_each_geometry(grid, &s.g, |i1, i2, i3, cols, geo| {
        let gi = &geo.ginv;
        let g = &geo.g;
        let idx = grid.index(i1, i2, i3);
        let kv = s.k.get_mat_at(idx);
        let v = s.v.get_mat_at(idx);
        let p = cols.second(&s.phi.data, i3, &grid.h);
        let tk = cols.second(&trk_f.data, i3, &grid.h);
        let gtv: [f64; 3] = std::array::from_fn(|i| gt[i].data[idx]);
        let dgt: [[f64; 3]; 3] = std::array::from_fn(|i| cols.first(&gt[i].data, i3, &grid.h));
        // ∇_i 𝒢̃_j
        let mut ngt = ZERO3;
        for i in 0..3 {
            for j in 0..3 {
                ngt[i][j] = dgt[j][i] - (0..3).map(|c| geo.gamma[c][i][j] * gtv[c]).sum::<f64>();
            }
        }
        let div_gt = dot3(gi, &ngt);
        let up_phi: [f64; 3] = std::array::from_fn(|a| (0..3).map(|b| gi[a][b] * p.d[b]).sum());
        let phi_gt: f64 = (0..3).map(|a| up_phi[a] * gtv[a]).sum();
        let phi_trk: f64 = (0..3).map(|a| up_phi[a] * tk.d[a]).sum();
        let lap_trk = geo.laplace_scalar(&tk);
        let trk = tk.v;
        let e0trk2 = 2.0 * trk * (trace_point(gi, &v) + 2.0 * norm2_point(gi, &kv));
        let rr = c.scalar.data[idx];
        let k_ric = dot3(&raise_both(gi, &kv), &c.ricci.get_mat_at(idx));
        let ea = ga.get_mat_at(idx);
        let eb = gb.get_mat_at(idx);
        let mut r = ZERO3;
        for i in 0..3 {
            for j in 0..3 {
                let lhs = (eb[i][j] - ea[i][j]) / (dt * p.v);
                let rhs = ngt[i][j] + ngt[j][i] - g[i][j] * div_gt
                    + 0.5 * g[i][j] * lap_trk
                    + kv[i][j] * rr
                    - g[i][j] * k_ric
                    + 0.5 * g[i][j] * e0trk2
                    + 2.0 * g[i][j] * phi_gt / p.v
                    + g[i][j] * phi_trk / p.v;
                r[i][j] = lhs - rhs;
            }
        }
        out.set_mat(grid, i1, i2, i3, &r);
        Ok(())
    })?;
    out.check_finite(grid, "propagation residual")?;
    Ok(out)
}

pub fn propagation_check(grid: &Grid, slices: &[State]) -> Result<f64> {
    let r = propagation_residual(grid, slices)?;
    l2_tensor(grid, &slices[1].g, &r)
}

/// `(∫ f dvol)^{1/2}` for a pointwise nonnegative density `f`.
fn sqrt_integral(grid: &Grid, g: &SymTensorField, f: &ScalarField) -> Result<f64> {
    Ok(integrate_volume(grid, f, g)?.max(0.0).sqrt())
}

pub fn l2_scalar(grid: &Grid, g: &SymTensorField, f: &ScalarField) -> Result<f64> {
    let mut sq = grid.scalar();
    for (i1, i2, i3) in grid.real_nodes() {
        let i = grid.index(i1, i2, i3);
        sq.data[i] = f.data[i] * f.data[i];
    }
    sqrt_integral(grid, g, &sq)
}

/// `L²` norm of `|T|_g`.
pub fn l2_tensor(grid: &Grid, g: &SymTensorField, t: &SymTensorField) -> Result<f64> {
    let mut sq = grid.scalar();
    for (i1, i2, i3) in grid.real_nodes() {
        let i = grid.index(i1, i2, i3);
        let gi = metric_inverse(&g.get_mat_at(i)).ok_or(Error::DegenerateMetric(i1, i2, i3))?;
        sq.data[i] = norm2_point(&gi, &t.get_mat_at(i));
    }
    sqrt_integral(grid, g, &sq)
}

/// `L²` norm of `|w|_g` for a covector field.
pub fn l2_covector(grid: &Grid, g: &SymTensorField, w: &[ScalarField; 3]) -> Result<f64> {
    let mut sq = grid.scalar();
    for (i1, i2, i3) in grid.real_nodes() {
        let i = grid.index(i1, i2, i3);
        let gi = metric_inverse(&g.get_mat_at(i)).ok_or(Error::DegenerateMetric(i1, i2, i3))?;
        let mut s = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                s += gi[a][b] * w[a].data[i] * w[b].data[i];
            }
        }
        sq.data[i] = s;
    }
    sqrt_integral(grid, g, &sq)
}

// ---------------------------------------------------------------------------
// Energies

/// Coordinate derivative `∂_a f` on real nodes; ghosts of the result are
/// extrapolated so it can be differentiated again.
fn partial(grid: &Grid, f: &ScalarField, a: usize) -> ScalarField {
    let mut out = grid.scalar();
    for i1 in 0..grid.n1 {
        for i2 in 0..grid.n2 {
            let cols = grid.neighbourhood(i1, i2);
            for i3 in 0..grid.n3 as isize {
                out.set(grid, i1, i2, i3, cols.first(&f.data, i3, &grid.h)[a]);
            }
        }
    }
    out.extrapolate_ghosts(grid);
    out
}

/// `N^i∂ᵢf`.
fn normal_derivative(grid: &Grid, frames: &[NormalFrame], f: &ScalarField) -> ScalarField {
    let d: [ScalarField; 3] = std::array::from_fn(|a| partial(grid, f, a));
    let mut out = grid.scalar();
    for (n, (i1, i2, i3)) in grid.real_nodes().enumerate() {
        let i = grid.index(i1, i2, i3);
        out.data[i] = (0..3).map(|a| frames[n].n_up[a] * d[a].data[i]).sum();
    }
    out.extrapolate_ghosts(grid);
    out
}

/// `Σ_{r₁+r₂≤r} ∫ (N^{r₂}∂^{r₁}u)² dvol` with `∂` running over `∂₁, ∂₂`.
pub fn sobolev_norm2(grid: &Grid, g: &SymTensorField, u: &ScalarField, r: usize) -> Result<f64> {
    let frames = normal_frame(grid, g)?;
    let mut u = u.clone();
    u.extrapolate_ghosts(grid);
    let mut total = 0.0;
    let mut tangential = vec![u];
    for r1 in 0..=r {
        for f in &tangential {
            let mut cur = f.clone();
            for r2 in 0..=(r - r1) {
                if r2 > 0 {
                    cur = normal_derivative(grid, &frames, &cur);
                }
                total += l2_scalar(grid, g, &cur)?.powi(2);
            }
        }
        if r1 < r {
            tangential = tangential.iter().flat_map(|f| [partial(grid, f, 0), partial(grid, f, 1)]).collect();
        }
    }
    Ok(total)
}

/// Frame components entering `E_k` and their `e₀` derivatives:
/// `k̃_A^B` (four entries), `k_C^C`, `k_NA` (two), `k_NN`.
struct KComponents {
    u: Vec<ScalarField>,
    w: Vec<ScalarField>,
}

const NCOMP: usize = 8;

fn k_components(grid: &Grid, s: &State, bd: &dyn BoundarySource, frames: &[NormalFrame]) -> Result<KComponents> {
    let inner = bd.targets(grid, Face::Inner, s.t)?;
    let outer = bd.targets(grid, Face::Outer, s.t)?;
    let mut u: Vec<ScalarField> = (0..NCOMP).map(|_| grid.scalar()).collect();
    let mut w: Vec<ScalarField> = (0..NCOMP).map(|_| grid.scalar()).collect();
    let x3_min = grid.x3[0];
    for (n, (i1, i2, i3)) in grid.real_nodes().enumerate() {
        let i = grid.index(i1, i2, i3);
        let fr = &frames[n];
        let frac = (grid.x3[i3 as usize] - x3_min) / (-x3_min);
        let (ti, to) = (inner.get(i1, i2), outer.get(i1, i2));
        let blend = |a: &Mat2, b: &Mat2| -> Mat2 {
            std::array::from_fn(|p| std::array::from_fn(|q| (1.0 - frac) * a[p][q] + frac * b[p][q]))
        };
        let ext = blend(&ti.hat, &to.hat);
        let ext_dot = blend(&ti.hat_dot, &to.hat_dot);
        let phi = s.phi.data[i];
        let ck = frame_project_point(&s.k.get_mat_at(i), fr);
        let cv = frame_project_point(&s.v.get_mat_at(i), fr);
        let hk = hat(&matmul2(&ck.tan, &fr.h_inv));
        let hv = hat(&matmul2(&cv.tan, &fr.h_inv));
        for a in 0..2 {
            for b in 0..2 {
                u[2 * a + b].data[i] = hk[a][b] - ext[a][b];
                w[2 * a + b].data[i] = hv[a][b] - ext_dot[a][b] / phi;
            }
            u[5 + a].data[i] = ck.na[a];
            w[5 + a].data[i] = cv.na[a];
        }
        u[4].data[i] = ck.tan_trace(fr);
        w[4].data[i] = cv.tan_trace(fr);
        u[7].data[i] = ck.nn;
        w[7].data[i] = cv.nn;
    }
    for f in u.iter_mut().chain(w.iter_mut()) {
        f.extrapolate_ghosts(grid);
    }
    Ok(KComponents { u, w })
}

fn energy_density_integral(grid: &Grid, g: &SymTensorField, frames: &[NormalFrame], c: &KComponents) -> Result<f64> {
    let du: Vec<[ScalarField; 3]> = c.u.iter().map(|f| std::array::from_fn(|a| partial(grid, f, a))).collect();
    let mut dens = grid.scalar();
    for (n, (i1, i2, i3)) in grid.real_nodes().enumerate() {
        let i = grid.index(i1, i2, i3);
        let gi = metric_inverse(&g.get_mat_at(i)).ok_or(Error::DegenerateMetric(i1, i2, i3))?;
        let grad_dot = |p: usize, q: usize| -> f64 {
            let mut s = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    s += gi[a][b] * du[p][a].data[i] * du[q][b].data[i];
                }
            }
            s
        };
        let w = |m: usize| c.w[m].data[i];
        let mut e = 0.0;
        for m in [0, 1, 2, 3, 4, 7] {
            e += w(m) * w(m) + grad_dot(m, m);
        }
        let h = &frames[n].h_inv;
        for a in 0..2 {
            for b in 0..2 {
                e += 4.0 * h[a][b] * (w(5 + a) * w(5 + b) + grad_dot(5 + a, 5 + b));
            }
        }
        dens.data[i] = e;
    }
    integrate_volume(grid, &dens, g)
}

fn difference_quotient(a: &ScalarField, b: &ScalarField, dt: f64) -> ScalarField {
    ScalarField { data: a.data.iter().zip(&b.data).map(|(x, y)| (x - y) / dt).collect() }
}

fn check_order<'a>(r: usize, other: Option<&'a State>, s: &State) -> Result<Option<(&'a State, f64)>> {
    match (r, other) {
        (0, _) => Ok(None),
        (1, Some(o)) if o.t != s.t => Ok(Some((o, s.t - o.t))),
        (1, _) => Err(Error::Numeric("first-order energies need a second trajectory slice".into())),
        _ => Err(Error::config("evolve.energy_order", format!("{r} is not supported (0 or 1)"))),
    }
}

/// `E_k` with `r` ∈ {0, 1}. Time-commuted terms of `r = 1` difference `s`
/// against the slice `other`.
pub fn energy_k(grid: &Grid, s: &State, other: Option<&State>, r: usize, bd: &dyn BoundarySource) -> Result<f64> {
    let pair = check_order(r, other, s)?;
    let frames = normal_frame(grid, &s.g)?;
    let c = k_components(grid, s, bd, &frames)?;
    let mut e = energy_density_integral(grid, &s.g, &frames, &c)?;
    if r == 1 {
        for a in 0..2 {
            let ca = KComponents {
                u: c.u.iter().map(|f| partial(grid, f, a)).collect(),
                w: c.w.iter().map(|f| partial(grid, f, a)).collect(),
            };
            e += energy_density_integral(grid, &s.g, &frames, &ca)?;
        }
        if let Some((o, dt)) = pair {
            let co = k_components(grid, o, bd, &normal_frame(grid, &o.g)?)?;
            let ct = KComponents {
                u: c.u.iter().zip(&co.u).map(|(x, y)| difference_quotient(x, y, dt)).collect(),
                w: c.w.iter().zip(&co.w).map(|(x, y)| difference_quotient(x, y, dt)).collect(),
            };
            e += energy_density_integral(grid, &s.g, &frames, &ct)?;
        }
    }
    Ok(e)
}

/// `E_total = E_k + Σ‖g_ij‖²_{H^{r+1}} + ‖Φ‖²_{H^{r+2}} + Σᵢ‖∂ₜ^{i+1}Φ‖²_{H^{r+1−i}}`.
pub fn energy_total(grid: &Grid, s: &State, other: Option<&State>, r: usize, bd: &dyn BoundarySource) -> Result<f64> {
    let pair = check_order(r, other, s)?;
    let mut e = energy_k(grid, s, other, r, bd)?;
    for (m, &(i, j)) in crate::tensor::SYM_PAIRS.iter().enumerate() {
        let w = if i == j { 1.0 } else { 2.0 };
        e += w * sobolev_norm2(grid, &s.g, &s.g.c[m], r + 1)?;
    }
    e += sobolev_norm2(grid, &s.g, &s.phi, r + 2)?;
    e += sobolev_norm2(grid, &s.g, &s.phi_dot, r + 1)?;
    if let Some((o, dt)) = pair {
        e += sobolev_norm2(grid, &s.g, &difference_quotient(&s.phi_dot, &o.phi_dot, dt), 1)?;
    }
    Ok(e)
}

// ---------------------------------------------------------------------------
// Records

pub const CSV_COLUMNS: [&str; 19] = [
    "t",
    "ham_norm",
    "mom_norm_1",
    "mom_norm_2",
    "mom_norm_3",
    "trk_l2",
    "trk_max",
    "ricci_ij_l2",
    "ricci_00_l2",
    "ricci_0i_l2",
    "einstein_norm",
    "gtilde_norm",
    "energy_k",
    "energy_total",
    "c_bd",
    "bc_hat_max",
    "bc_knn_max",
    "bc_kna_max",
    "bc_kcc_max",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub ham_norm: f64,
    pub mom_norm: [f64; 3],
    pub trk_l2: f64,
    pub trk_max: f64,
    pub ricci_ij_l2: f64,
    pub ricci_00_l2: f64,
    pub ricci_0i_l2: f64,
    pub einstein_norm: f64,
    pub gtilde_norm: f64,
    pub energy_k: f64,
    pub energy_total: f64,
    pub c_bd: f64,
    pub bc: BcResiduals,
}

impl DiagnosticsRecord {
    /// Values in [`CSV_COLUMNS`] order.
    pub fn values(&self) -> [f64; 19] {
        [
            self.t,
            self.ham_norm,
            self.mom_norm[0],
            self.mom_norm[1],
            self.mom_norm[2],
            self.trk_l2,
            self.trk_max,
            self.ricci_ij_l2,
            self.ricci_00_l2,
            self.ricci_0i_l2,
            self.einstein_norm,
            self.gtilde_norm,
            self.energy_k,
            self.energy_total,
            self.c_bd,
            self.bc.hat,
            self.bc.trace,
            self.bc.na,
            self.bc.cc,
        ]
    }

    /// Largest of the columns that vanish on an exact vacuum solution with
    /// vanishing `k`: everything except `t`, `E_total` and `c_bd`.
    pub fn max_vacuum_columns(&self) -> f64 {
        let v = self.values();
        v.iter()
            .enumerate()
            .filter(|(i, _)| ![0, 13, 14].contains(i))
            .map(|(_, x)| x.abs())
            .fold(0.0, f64::max)
    }
}

/// Evaluates every diagnostic on a completed state. `other` is a second
/// trajectory slice, needed for `energy_order = 1`.
pub fn record(
    grid: &Grid,
    s: &State,
    other: Option<&State>,
    energy_order: usize,
    c_bd: f64,
    bd: &dyn BoundarySource,
) -> Result<DiagnosticsRecord> {
    let ham = hamiltonian(grid, &s.g, &s.k)?;
    let mom = momentum(grid, &s.g, &s.k)?;
    let trk = crate::geometry::trace(grid, &s.g, &s.k)?;
    let c = curvature(grid, s)?;
    let mom_norm = [l2_scalar(grid, &s.g, &mom[0])?, l2_scalar(grid, &s.g, &mom[1])?, l2_scalar(grid, &s.g, &mom[2])?];
    let rec = DiagnosticsRecord {
        t: s.t,
        ham_norm: l2_scalar(grid, &s.g, &ham)?,
        mom_norm,
        trk_l2: l2_scalar(grid, &s.g, &trk)?,
        trk_max: trk.max_abs(grid),
        ricci_ij_l2: l2_tensor(grid, &s.g, &c.ricci)?,
        ricci_00_l2: l2_scalar(grid, &s.g, &c.r00)?,
        ricci_0i_l2: l2_covector(grid, &s.g, &c.r0i)?,
        einstein_norm: l2_tensor(grid, &s.g, &c.einstein)?,
        gtilde_norm: l2_covector(grid, &s.g, &c.gtilde)?,
        energy_k: energy_k(grid, s, other, energy_order, bd)?,
        energy_total: energy_total(grid, s, other, energy_order, bd)?,
        c_bd,
        bc: bc_residuals(grid, &s.g, &s.k, s.t, bd)?,
    };
    if rec.values().iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric(format!("non-finite diagnostics at t = {}", s.t)));
    }
    Ok(rec)
}

/// Observed orders between successive errors at refinement ratio 2.
#[derive(Clone, Debug, PartialEq)]
pub struct RateReport {
    pub rates: Vec<f64>,
    /// Whether the errors strictly decrease.
    pub monotone: bool,
}

pub fn convergence_rate(errors: &[f64]) -> RateReport {
    let rates = errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let monotone = errors.windows(2).all(|w| w[1] < w[0]);
    RateReport { rates, monotone }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::AnalyticState;
    use crate::boundary::{ConformalBoundaryFamily, ConformalData, ExactBoundary};
    use crate::evolution::Solver;
    use crate::geometry::{point_from_jet, point_geometry};
    use crate::grid::{make_grid, GridSpec};
    use crate::jet::Jet;
    use crate::lapse::EllipticConfig;
    use crate::tensor::IDENTITY3;

    fn grid(n: usize, n3: usize) -> Grid {
        make_grid(GridSpec { n1: n, n2: n, n3, x3_min: -1.0, ..GridSpec::default() }).unwrap()
    }

    fn constant_data() -> ConformalData {
        ConformalData { inner: ConformalBoundaryFamily::Constant, outer: ConformalBoundaryFamily::Constant }
    }

    fn flat_state(gr: &Grid) -> State {
        let g = gr.tensor_from_fn(|_| IDENTITY3, true);
        let k = gr.tensor_from_fn(|_| ZERO3, true);
        let mut s = State::new(gr, 0.0, g, k.clone(), k);
        s.phi = gr.scalar_from_fn_with_ghosts(|_| 1.0);
        s.phi_dot = gr.scalar_from_fn_with_ghosts(|_| 0.0);
        s
    }

    #[test]
    fn flat_state_has_vanishing_diagnostics() {
        let gr = grid(8, 9);
        let s = flat_state(&gr);
        let rec = record(&gr, &s, None, 0, 0.0, &constant_data()).unwrap();
        assert_eq!(rec.max_vacuum_columns(), 0.0);
        assert!(rec.energy_total > 0.0);
        assert_eq!(trace_identity_check(&gr, &s).unwrap(), 0.0);
        let mut b = s.clone();
        b.t = 0.1;
        let mut a = s.clone();
        a.t = -0.1;
        assert_eq!(propagation_check(&gr, &[a, s, b]).unwrap(), 0.0);
    }

    #[test]
    fn pure_trace_k_constraints() {
        // k = c·g on flat space: R − |k|² + (tr k)² = −3c² + 9c² = 6c².
        let gr = grid(6, 7);
        let c = 0.3;
        let g = gr.tensor_from_fn(|_| IDENTITY3, true);
        let k = gr.tensor_from_fn(|_| [[c, 0.0, 0.0], [0.0, c, 0.0], [0.0, 0.0, c]], true);
        let ham = hamiltonian(&gr, &g, &k).unwrap();
        let mom = momentum(&gr, &g, &k).unwrap();
        for (i1, i2, i3) in gr.real_nodes() {
            assert!((ham.get(&gr, i1, i2, i3) - 6.0 * c * c).abs() < 1e-15);
            assert!(mom.iter().all(|m| m.get(&gr, i1, i2, i3).abs() < 1e-15));
        }
    }

    /// Independent oracle: the Ricci tensor of `−Φ²dt² + g_ij dxⁱdxʲ`
    /// computed from Christoffel symbols of the 4-metric.
    fn ricci4(m: &[[Jet; 4]; 4]) -> [[f64; 4]; 4] {
        let gv: [[f64; 4]; 4] = std::array::from_fn(|a| std::array::from_fn(|b| m[a][b].v));
        // Block inverse: the metric has no time-space cross terms.
        let mut inv = [[0.0; 4]; 4];
        inv[0][0] = 1.0 / gv[0][0];
        let g3: Mat3 = std::array::from_fn(|i| std::array::from_fn(|j| gv[i + 1][j + 1]));
        let g3i = metric_inverse(&g3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                inv[i + 1][j + 1] = g3i[i][j];
            }
        }
        let d = |a: usize, b: usize, c: usize| m[a][b].d[c];
        let dd = |a: usize, b: usize, c: usize, e: usize| m[a][b].dd[c][e];
        let mut dinv = [[[0.0; 4]; 4]; 4];
        for e in 0..4 {
            for c in 0..4 {
                for l in 0..4 {
                    let mut s = 0.0;
                    for p in 0..4 {
                        for q in 0..4 {
                            s -= inv[c][p] * d(p, q, e) * inv[q][l];
                        }
                    }
                    dinv[e][c][l] = s;
                }
            }
        }
        let mut gam = [[[0.0; 4]; 4]; 4];
        let mut dgam = [[[[0.0; 4]; 4]; 4]; 4];
        for c in 0..4 {
            for a in 0..4 {
                for b in 0..4 {
                    let mut s = 0.0;
                    for l in 0..4 {
                        s += 0.5 * inv[c][l] * (d(l, b, a) + d(l, a, b) - d(a, b, l));
                    }
                    gam[c][a][b] = s;
                    for e in 0..4 {
                        let mut s = 0.0;
                        for l in 0..4 {
                            s += 0.5 * dinv[e][c][l] * (d(l, b, a) + d(l, a, b) - d(a, b, l));
                            s += 0.5 * inv[c][l] * (dd(l, b, a, e) + dd(l, a, b, e) - dd(a, b, l, e));
                        }
                        dgam[e][c][a][b] = s;
                    }
                }
            }
        }
        let mut ric = [[0.0; 4]; 4];
        for a in 0..4 {
            for b in 0..4 {
                let mut s = 0.0;
                for c in 0..4 {
                    s += dgam[c][c][a][b] - dgam[b][c][a][c];
                    for e in 0..4 {
                        s += gam[c][c][e] * gam[e][a][b] - gam[c][b][e] * gam[e][a][c];
                    }
                }
                ric[a][b] = s;
            }
        }
        ric
    }

    #[test]
    fn reconstructed_ricci_matches_spacetime_oracle() {
        for seed in 0..3 {
            let an = AnalyticState::new(seed);
            let x = [0.4, -1.1, -0.3];
            let t0 = 0.2;
            let (g, _) = an.fields(t0, x);
            let [t, x1, _, x3] = Jet::point(t0, x);
            let phi = (x1 * 0.7 + x3 * 0.5 + t * 0.9).sin() * 0.2 + 1.0;
            let mut m4 = [[Jet::constant(0.0); 4]; 4];
            m4[0][0] = -(phi * phi);
            for i in 0..3 {
                for j in 0..3 {
                    m4[i + 1][j + 1] = g[i][j];
                }
            }
            let ric = ricci4(&m4);
            // k = −∂ₜg/(2Φ), v = Φ⁻¹∂ₜk.
            let mut kd = TensorDerivs::default();
            let mut v = ZERO3;
            for i in 0..3 {
                for j in 0..3 {
                    let gt = g[i][j].d[0];
                    kd.v[i][j] = -gt / (2.0 * phi.v);
                    for a in 0..3 {
                        kd.d[a][i][j] = -g[i][j].dd[0][a + 1] / (2.0 * phi.v) + gt * phi.d[a + 1] / (2.0 * phi.v * phi.v);
                    }
                    let kt = -g[i][j].dd[0][0] / (2.0 * phi.v) + gt * phi.d[0] / (2.0 * phi.v * phi.v);
                    v[i][j] = kt / phi.v;
                }
            }
            let geo = point_geometry(&TensorDerivs::from_jets(&g)).unwrap();
            let r = spacetime_ricci_point(&geo, &kd, &v, &point_from_jet(&phi));
            for i in 0..3 {
                for j in 0..3 {
                    assert!((r.rij[i][j] - ric[i + 1][j + 1]).abs() < 1e-12, "R_{i}{j}: {} vs {}", r.rij[i][j], ric[i + 1][j + 1]);
                }
                let r0i = ric[0][i + 1] / phi.v;
                assert!((r.r0i[i] - r0i).abs() < 1e-12, "R_0{i}: {} vs {r0i}", r.r0i[i]);
            }
            let r00 = ric[0][0] / (phi.v * phi.v);
            assert!((r.r00 - r00).abs() < 1e-12, "R_00: {} vs {r00}", r.r00);
        }
    }

    #[test]
    fn pure_trace_ricci_gives_einstein_by_hand() {
        // R_ij = λg_ij, R_00 = R_0i = 0: R = 3λ, G_ij = −½λg_ij.
        let g = [[1.3, 0.2, 0.0], [0.2, 0.9, 0.1], [0.0, 0.1, 1.1]];
        let geo = point_geometry(&TensorDerivs { v: g, ..TensorDerivs::default() }).unwrap();
        let lam = 0.7;
        let ric = PointRicci { rij: g.map(|r| r.map(|x| lam * x)), ..PointRicci::default() };
        let e = einstein_point(&geo, &ric, &[0.0; 3]);
        assert!((e.scalar - 3.0 * lam).abs() < 1e-14);
        for i in 0..3 {
            for j in 0..3 {
                assert!((e.gij[i][j] + 0.5 * lam * g[i][j]).abs() < 1e-14);
            }
        }
        // tr k gradient zero: 𝒢̃ = 𝒢.
        let ric = PointRicci { r0i: [0.1, -0.2, 0.3], ..PointRicci::default() };
        assert_eq!(einstein_point(&geo, &ric, &[0.0; 3]).gtilde, [0.1, -0.2, 0.3]);
    }

    fn solved_analytic_state(gr: &Grid, an: &AnalyticState) -> State {
        let (g, k, v) = an.sample(gr, true);
        let bd = ExactBoundary { fields: |t, x| an.exact(t, x) };
        let solver = Solver::new(gr, &bd, EllipticConfig { rel_tol: 1e-13, max_iter: 2000, ..EllipticConfig::default() });
        let mut s = State::new(gr, 0.0, g, k, v);
        solver.solve_lapse_pair(&mut s, None).unwrap();
        s
    }

    #[test]
    fn trace_identity_converges_on_analytic_state() {
        let an = AnalyticState::new(3);
        let errs: Vec<f64> = [16usize, 32]
            .iter()
            .map(|&n| {
                let gr = grid(n, n + 1);
                trace_identity_check(&gr, &solved_analytic_state(&gr, &an)).unwrap()
            })
            .collect();
        let rate = convergence_rate(&errs).rates[0];
        assert!((rate - 2.0).abs() < 0.3, "{errs:?} rate {rate}");
    }

    #[test]
    fn trace_identity_detects_unsolved_lapse() {
        let gr = grid(24, 25);
        let an = AnalyticState::new(4);
        let mut s = solved_analytic_state(&gr, &an);
        let good = trace_identity_check(&gr, &s).unwrap();
        s.phi = gr.scalar_from_fn_with_ghosts(|x| 1.0 + 0.3 * x[2] * (x[2] + 1.0));
        let bad = trace_identity_check(&gr, &s).unwrap();
        assert!(bad > 0.5 && bad > 10.0 * good, "{good} {bad}");
    }

    #[test]
    fn energy_of_constant_normal_velocity() {
        // Flat g, Φ = 1, k = 0, v_NN = w: E_k = w²·Vol.
        let gr = grid(6, 7);
        let w = 0.3;
        let mut s = flat_state(&gr);
        s.v = gr.tensor_from_fn(|_| [[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, w]], true);
        let vol = (2.0 * std::f64::consts::PI).powi(2);
        let e = energy_k(&gr, &s, None, 0, &constant_data()).unwrap();
        assert!((e - w * w * vol).abs() < 1e-12 * vol, "{e}");
        // Tangentially constant data: first-order terms add nothing.
        let mut o = s.clone();
        o.t = -0.1;
        let e1 = energy_k(&gr, &s, Some(&o), 1, &constant_data()).unwrap();
        assert!((e1 - e).abs() < 1e-12, "{e1}");
        assert!(energy_k(&gr, &s, None, 1, &constant_data()).is_err());
        assert_eq!(energy_k(&gr, &flat_state(&gr), None, 0, &constant_data()).unwrap(), 0.0);
    }

    #[test]
    fn energy_is_quadratic_and_counts_na_block_four_times() {
        let gr = grid(6, 7);
        let mut s = flat_state(&gr);
        s.v = gr.tensor_from_fn(|_| [[0.0, 0.0, 0.2], [0.0, 0.0, 0.0], [0.2, 0.0, 0.0]], true);
        let vol = (2.0 * std::f64::consts::PI).powi(2);
        let e = energy_k(&gr, &s, None, 0, &constant_data()).unwrap();
        assert!((e - 4.0 * 0.04 * vol).abs() < 1e-12, "{e}");
        let mut s2 = s.clone();
        s2.v = s.v.scaled(3.0);
        s2.k = gr.tensor_from_fn(|x| [[0.0, 0.1 * x[0].sin(), 0.0], [0.1 * x[0].sin(), 0.0, 0.0], [0.0, 0.0, 0.0]], true);
        s.k = s2.k.scaled(1.0 / 3.0);
        let (a, b) = (
            energy_k(&gr, &s, None, 0, &constant_data()).unwrap(),
            energy_k(&gr, &s2, None, 0, &constant_data()).unwrap(),
        );
        assert!((b - 9.0 * a).abs() < 1e-12 * b, "{a} {b}");
    }

    #[test]
    fn sobolev_norm_of_a_tangential_mode() {
        // u = sin x¹ on flat space: ‖u‖²_{H¹} = ∫u² + (∂₁u)² = Vol, up to the
        // O(h²) difference quotient.
        let gr = grid(32, 5);
        let g = gr.tensor_from_fn(|_| IDENTITY3, true);
        let u = gr.scalar_from_fn(|x| x[0].sin());
        let vol = (2.0 * std::f64::consts::PI).powi(2);
        let h1 = sobolev_norm2(&gr, &g, &u, 1).unwrap();
        let dq = (gr.h[0].sin() / gr.h[0]).powi(2);
        assert!((h1 - 0.5 * vol * (1.0 + dq)).abs() < 1e-10, "{h1}");
        let h0 = sobolev_norm2(&gr, &g, &u, 0).unwrap();
        assert!((h0 - 0.5 * vol).abs() < 1e-10);
    }

    #[test]
    fn rates() {
        let r = convergence_rate(&[4.0, 1.0, 0.25]);
        assert_eq!(r.rates, vec![2.0, 2.0]);
        assert!(r.monotone);
        assert!(!convergence_rate(&[1.0, 2.0, 0.5]).monotone);
    }

    #[test]
    fn header_matches_values() {
        assert_eq!(CSV_COLUMNS.len(), DiagnosticsRecord::default().values().len());
    }
}


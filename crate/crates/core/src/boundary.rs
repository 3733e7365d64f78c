//! Boundary data and boundary conditions on the two collar faces.
//!
//! The outer face carries a family of conformal classes `[q_t]`; the
//! Dirichlet data for `k` is the trace-free mixed tensor `k̂` it induces.
//! Conditions are imposed through the face values of `k`, `v` and the first
//! ghost layer of `k`:
//!
//! * (a) `k̂_A^B` equals the target,
//! * (b) `tr_g k` equals the target (zero for geometric data),
//! * (c) `(∇_N k)(N, ∂_A) + h^{BC}(∇_B k)(∂_C, ∂_A)` equals the target,
//! * (d) `½[(∇_N k)(N,N) − h^{AB}(∇_N k)_AB] + h^{AB}(∇_A k)(N, ∂_B)` equals the
//!   target, closed by the normal derivative of (b):
//!   `(∇_N k)(N,N) + h^{AB}(∇_N k)_AB` equals its target.
//!
//! The frame is `{∂₁, ∂₂, N}` with `N` the unit normal to the level sets of
//! `x³`, pointing to increasing `x³` on both faces. All conditions are
//! invariant under `N → −N`.

use crate::error::{Error, Result};
use crate::geometry::{
    frame_project_point, frame_reconstruct_point, metric_inverse, norm2_point, normal_frame_point,
    point_geometry, trace_point, FrameComponents, NormalFrame, TensorDerivs,
};
use crate::grid::{Columns, Face, FaceField, Grid, ScalarField, SymTensorField};
use crate::tensor::{inv2, matmul2, matmul3, trace2, Mat2, Mat3, ZERO3};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

/// Largest accepted `|N|²_coord / (N³)²` when solving for the ghost layer.
pub const MAX_NORMAL_CONDITION: f64 = 1e8;

/// A representative `q_t` of the boundary conformal class at one node, with
/// its first two time derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConformalSample {
    pub q: Mat2,
    pub dq: Mat2,
    pub ddq: Mat2,
}

pub type ConformalFn = Arc<dyn Fn(f64, [f64; 2]) -> ConformalSample + Send + Sync>;
/// `(Ω, ∂ₜΩ, ∂ₜ²Ω)` at `(t, x¹, x²)`.
pub type ScaleFn = Arc<dyn Fn(f64, [f64; 2]) -> [f64; 3] + Send + Sync>;

#[derive(Clone)]
pub enum ConformalBoundaryFamily {
    /// Time-independent class; `k̂ = 0`.
    Constant,
    /// `q_t = diag(e^{2λt}, e^{−2λt})`, so `k̂ = diag(−λ, λ)`.
    DiagExp { lambda: f64 },
    Tabulated(Arc<ConformalTable>),
    Custom(ConformalFn),
    /// `Ω² q_t` for a base family `q_t`. Same conformal class as the base.
    Rescaled { base: Box<ConformalBoundaryFamily>, omega: ScaleFn },
}

impl fmt::Debug for ConformalBoundaryFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConformalBoundaryFamily::Constant => write!(f, "Constant"),
            ConformalBoundaryFamily::DiagExp { lambda } => write!(f, "DiagExp {{ lambda: {lambda} }}"),
            ConformalBoundaryFamily::Tabulated(t) => write!(f, "Tabulated({} nodes)", t.series.len()),
            ConformalBoundaryFamily::Custom(_) => write!(f, "Custom"),
            ConformalBoundaryFamily::Rescaled { base, .. } => write!(f, "Rescaled({base:?})"),
        }
    }
}

const ID2: Mat2 = [[1.0, 0.0], [0.0, 1.0]];
const ZERO2: Mat2 = [[0.0; 2]; 2];

fn add2(a: &Mat2, b: &Mat2) -> Mat2 {
    [[a[0][0] + b[0][0], a[0][1] + b[0][1]], [a[1][0] + b[1][0], a[1][1] + b[1][1]]]
}

fn scale2(s: f64, a: &Mat2) -> Mat2 {
    [[s * a[0][0], s * a[0][1]], [s * a[1][0], s * a[1][1]]]
}

/// Trace-free part `M − ½ tr(M) δ`.
pub fn hat(m: &Mat2) -> Mat2 {
    let h = 0.5 * trace2(m);
    [[m[0][0] - h, m[0][1]], [m[1][0], m[1][1] - h]]
}

fn sym2(m: &Mat2) -> Mat2 {
    let o = 0.5 * (m[0][1] + m[1][0]);
    [[m[0][0], o], [o, m[1][1]]]
}

fn max_entry2(m: &Mat2) -> f64 {
    m.iter().flatten().fold(0.0_f64, |a, x| a.max(x.abs()))
}

/// `k̂_A^B = −½ [q]^{BC} ∂ₜ[q]_AC + ¼ δ_A^B [q]^{CD} ∂ₜ[q]_CD`, as `[A][B]`.
pub fn hat_from_sample(s: &ConformalSample) -> Mat2 {
    let qi = inv2(&s.q).unwrap_or([[f64::NAN; 2]; 2]);
    scale2(-0.5, &hat(&matmul2(&s.dq, &qi)))
}

/// Time derivative of [`hat_from_sample`].
pub fn hat_dot_from_sample(s: &ConformalSample) -> Mat2 {
    let qi = inv2(&s.q).unwrap_or([[f64::NAN; 2]; 2]);
    let m = matmul2(&s.dq, &qi);
    let dm = add2(&matmul2(&s.ddq, &qi), &scale2(-1.0, &matmul2(&m, &m)));
    scale2(-0.5, &hat(&dm))
}

impl ConformalBoundaryFamily {
    pub fn rescaled(self, omega: ScaleFn) -> Self {
        ConformalBoundaryFamily::Rescaled { base: Box::new(self), omega }
    }

    /// The representative `q_t` (including any conformal factor).
    pub fn sample(&self, t: f64, i1: usize, i2: usize, x: [f64; 2]) -> Result<ConformalSample> {
        match self {
            ConformalBoundaryFamily::Constant => Ok(ConformalSample { q: ID2, dq: ZERO2, ddq: ZERO2 }),
            ConformalBoundaryFamily::DiagExp { lambda } => {
                let (e, f) = ((2.0 * lambda * t).exp(), (-2.0 * lambda * t).exp());
                let l2 = 2.0 * lambda;
                Ok(ConformalSample {
                    q: [[e, 0.0], [0.0, f]],
                    dq: [[l2 * e, 0.0], [0.0, -l2 * f]],
                    ddq: [[l2 * l2 * e, 0.0], [0.0, l2 * l2 * f]],
                })
            }
            ConformalBoundaryFamily::Tabulated(table) => table.sample(t, i1, i2),
            ConformalBoundaryFamily::Custom(f) => Ok(f(t, x)),
            ConformalBoundaryFamily::Rescaled { base, omega } => {
                let s = base.sample(t, i1, i2, x)?;
                let [o, od, odd] = omega(t, x);
                let w = o * o;
                let wd = 2.0 * o * od;
                let wdd = 2.0 * od * od + 2.0 * o * odd;
                Ok(ConformalSample {
                    q: scale2(w, &s.q),
                    dq: add2(&scale2(wd, &s.q), &scale2(w, &s.dq)),
                    ddq: add2(
                        &add2(&scale2(wdd, &s.q), &scale2(2.0 * wd, &s.dq)),
                        &scale2(w, &s.ddq),
                    ),
                })
            }
        }
    }

    /// A representative of the class with every conformal factor removed.
    /// `k̂` depends only on the class, so it is computed from this one.
    fn class_sample(&self, t: f64, i1: usize, i2: usize, x: [f64; 2]) -> Result<ConformalSample> {
        match self {
            ConformalBoundaryFamily::Rescaled { base, .. } => base.class_sample(t, i1, i2, x),
            other => other.sample(t, i1, i2, x),
        }
    }

    pub fn hat_k(&self, t: f64, i1: usize, i2: usize, x: [f64; 2]) -> Result<Mat2> {
        match self {
            ConformalBoundaryFamily::Constant => Ok(ZERO2),
            ConformalBoundaryFamily::DiagExp { lambda } => Ok([[-lambda, 0.0], [0.0, *lambda]]),
            _ => Ok(hat_from_sample(&self.class_sample(t, i1, i2, x)?)),
        }
    }

    pub fn hat_k_dot(&self, t: f64, i1: usize, i2: usize, x: [f64; 2]) -> Result<Mat2> {
        match self {
            ConformalBoundaryFamily::Constant | ConformalBoundaryFamily::DiagExp { .. } => Ok(ZERO2),
            _ => Ok(hat_dot_from_sample(&self.class_sample(t, i1, i2, x)?)),
        }
    }
}

/// `k̂_A^B` of a conformal family on every face node at time `t`.
pub fn hatk_from_conformal(family: &ConformalBoundaryFamily, grid: &Grid, t: f64) -> Result<FaceField<Mat2>> {
    let mut err = None;
    let f = FaceField::from_fn(grid, |i1, i2| {
        match family.hat_k(t, i1, i2, [grid.x1[i1], grid.x2[i2]]) {
            Ok(m) => m,
            Err(e) => {
                err.get_or_insert(e);
                ZERO2
            }
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(f),
    }
}

/// Samples of `q_t` per face node, read from rows `t i1 i2 q11 q12 q22`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConformalTable {
    /// `(i1, i2) → [(t, q11, q12, q22)]` sorted by `t`.
    series: BTreeMap<(usize, usize), Vec<(f64, [f64; 3])>>,
}

impl ConformalTable {
    pub fn parse(text: &str) -> Result<Self> {
        let mut series: BTreeMap<(usize, usize), Vec<(f64, [f64; 3])>> = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || Error::config("boundary.path", format!("line {}: expected `t i1 i2 q11 q12 q22`", n + 1));
            let w: Vec<&str> = line.split_whitespace().collect();
            if w.len() != 6 {
                return Err(bad());
            }
            let t: f64 = w[0].parse().map_err(|_| bad())?;
            let i1: usize = w[1].parse().map_err(|_| bad())?;
            let i2: usize = w[2].parse().map_err(|_| bad())?;
            let mut q = [0.0; 3];
            for (a, s) in w[3..].iter().enumerate() {
                q[a] = s.parse().map_err(|_| bad())?;
            }
            if !(q[0] > 0.0 && q[0] * q[2] - q[1] * q[1] > 0.0) {
                return Err(Error::config("boundary.path", format!("line {}: q is not positive definite", n + 1)));
            }
            series.entry((i1, i2)).or_default().push((t, q));
        }
        for s in series.values_mut() {
            s.sort_by(|a, b| a.0.total_cmp(&b.0));
            if s.len() < 4 {
                return Err(Error::config("boundary.path", "every node needs at least four time samples"));
            }
        }
        Ok(ConformalTable { series })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Checks that every face node of `grid` has a series.
    pub fn covers(&self, grid: &Grid) -> Result<()> {
        for i1 in 0..grid.n1 {
            for i2 in 0..grid.n2 {
                if !self.series.contains_key(&(i1, i2)) {
                    return Err(Error::config("boundary.path", format!("no samples for face node ({i1},{i2})")));
                }
            }
        }
        Ok(())
    }

    /// Cubic Lagrange interpolation through the four samples nearest `t`.
    fn sample(&self, t: f64, i1: usize, i2: usize) -> Result<ConformalSample> {
        let s = self
            .series
            .get(&(i1, i2))
            .ok_or_else(|| Error::Numeric(format!("no boundary samples for face node ({i1},{i2})")))?;
        let (t0, t1) = (s[0].0, s[s.len() - 1].0);
        let slack = 1e-12 * (1.0 + t1.abs());
        if t < t0 - slack || t > t1 + slack {
            return Err(Error::Numeric(format!("time {t} outside tabulated boundary data [{t0}, {t1}]")));
        }
        let upper = s.partition_point(|p| p.0 < t);
        let start = upper.saturating_sub(2).min(s.len() - 4);
        let pts = &s[start..start + 4];
        let mut out = [[0.0; 3]; 3];
        for (j, pj) in pts.iter().enumerate() {
            let (w, wd, wdd) = lagrange_weights(pts, j, t);
            for c in 0..3 {
                out[0][c] += w * pj.1[c];
                out[1][c] += wd * pj.1[c];
                out[2][c] += wdd * pj.1[c];
            }
        }
        let m = |c: [f64; 3]| [[c[0], c[1]], [c[1], c[2]]];
        Ok(ConformalSample { q: m(out[0]), dq: m(out[1]), ddq: m(out[2]) })
    }
}

/// Value, first and second derivative of the `j`-th Lagrange basis
/// polynomial on the nodes `pts` at `t`.
fn lagrange_weights(pts: &[(f64, [f64; 3])], j: usize, t: f64) -> (f64, f64, f64) {
    let tj = pts[j].0;
    let others: Vec<f64> = pts.iter().enumerate().filter(|(m, _)| *m != j).map(|(_, p)| p.0).collect();
    let denom: f64 = others.iter().map(|&tm| tj - tm).product();
    let f: Vec<f64> = others.iter().map(|&tm| t - tm).collect();
    let v = f.iter().product::<f64>();
    let mut d = 0.0;
    let mut dd = 0.0;
    for a in 0..f.len() {
        d += f.iter().enumerate().filter(|(b, _)| *b != a).map(|(_, x)| x).product::<f64>();
        for b in 0..f.len() {
            if b != a {
                dd += f.iter().enumerate().filter(|(c, _)| *c != a && *c != b).map(|(_, x)| x).product::<f64>();
            }
        }
    }
    (v / denom, d / denom, dd / denom)
}

/// Targets of the boundary conditions at one face node.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NodeTargets {
    /// `k̂_A^B`.
    pub hat: Mat2,
    /// `∂ₜ k̂_A^B`.
    pub hat_dot: Mat2,
    /// `tr_g k`.
    pub trace: f64,
    /// `∂ₜ tr_g k`.
    pub trace_dot: f64,
    /// Right-hand sides of (c), (d) and the normal derivative of (b).
    pub off_c: [f64; 2],
    pub off_d: f64,
    pub off_b: f64,
}

/// Anything that can supply boundary targets on a face at a given time.
pub trait BoundarySource {
    fn targets(&self, grid: &Grid, face: Face, t: f64) -> Result<FaceField<NodeTargets>>;
}

/// Geometric boundary data: one conformal family per face, homogeneous
/// trace and Neumann conditions.
#[derive(Clone, Debug)]
pub struct ConformalData {
    pub inner: ConformalBoundaryFamily,
    pub outer: ConformalBoundaryFamily,
}

impl ConformalData {
    pub fn family(&self, face: Face) -> &ConformalBoundaryFamily {
        match face {
            Face::Inner => &self.inner,
            Face::Outer => &self.outer,
        }
    }
}

impl BoundarySource for ConformalData {
    fn targets(&self, grid: &Grid, face: Face, t: f64) -> Result<FaceField<NodeTargets>> {
        let fam = self.family(face);
        let mut data = Vec::with_capacity(grid.n1 * grid.n2);
        for i1 in 0..grid.n1 {
            for i2 in 0..grid.n2 {
                let x = [grid.x1[i1], grid.x2[i2]];
                data.push(NodeTargets {
                    hat: fam.hat_k(t, i1, i2, x)?,
                    hat_dot: fam.hat_k_dot(t, i1, i2, x)?,
                    ..NodeTargets::default()
                });
            }
        }
        Ok(FaceField { n1: grid.n1, n2: grid.n2, data })
    }
}

/// Exact fields at a point: metric and `k` with spatial derivatives, and
/// their time derivatives.
#[derive(Clone, Copy, Debug, Default)]
pub struct ExactPoint {
    pub g: TensorDerivs,
    pub k: TensorDerivs,
    pub g_dot: Mat3,
    pub k_dot: Mat3,
}

/// Boundary data read off a known solution: every condition is evaluated on
/// the exact fields and becomes the target.
pub struct ExactBoundary<F: Fn(f64, [f64; 3]) -> ExactPoint> {
    pub fields: F,
}

impl<F: Fn(f64, [f64; 3]) -> ExactPoint> BoundarySource for ExactBoundary<F> {
    fn targets(&self, grid: &Grid, face: Face, t: f64) -> Result<FaceField<NodeTargets>> {
        let i3 = grid.face_index(face);
        let mut data = Vec::with_capacity(grid.n1 * grid.n2);
        for i1 in 0..grid.n1 {
            for i2 in 0..grid.n2 {
                let p = (self.fields)(t, grid.coords(i1, i2, i3));
                data.push(exact_targets(&p).ok_or(Error::DegenerateMetric(i1, i2, i3))?);
            }
        }
        Ok(FaceField { n1: grid.n1, n2: grid.n2, data })
    }
}

pub fn exact_targets(p: &ExactPoint) -> Option<NodeTargets> {
    let geo = point_geometry(&p.g)?;
    let frame = normal_frame_point(&geo.g, &geo.ginv)?;
    let (hat_k, trace) = dirichlet_parts(&p.k.v, &geo.ginv, &frame);
    // ∂ₜ(K H) with Ḣ = −H Ġ H on the tangential block.
    let kt = tan_block(&p.k.v);
    let kdt = tan_block(&p.k_dot);
    let gdt = tan_block(&p.g_dot);
    let h = frame.h_inv;
    let hd = scale2(-1.0, &matmul2(&matmul2(&h, &gdt), &h));
    let hat_dot = hat(&add2(&matmul2(&kdt, &h), &matmul2(&kt, &hd)));
    let ginv_dot = {
        let t = matmul3(&matmul3(&geo.ginv, &p.g_dot), &geo.ginv);
        t.map(|r| r.map(|x| -x))
    };
    let trace_dot = trace_point(&geo.ginv, &p.k_dot) + trace_point(&ginv_dot, &p.k.v);
    let n = neumann_parts(&geo.gamma, &frame, &p.k.v, &p.k.d);
    Some(NodeTargets {
        hat: hat_k,
        hat_dot,
        trace,
        trace_dot,
        off_c: n.c,
        off_d: n.d,
        off_b: n.b,
    })
}

fn tan_block(m: &Mat3) -> Mat2 {
    [[m[0][0], m[0][1]], [m[1][0], m[1][1]]]
}

/// `(k̂_A^B, tr_g k)` at a node.
pub fn dirichlet_parts(k: &Mat3, ginv: &Mat3, frame: &NormalFrame) -> (Mat2, f64) {
    (hat(&matmul2(&tan_block(k), &frame.h_inv)), trace_point(ginv, k))
}

/// Left-hand sides of the Neumann conditions.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NeumannParts {
    pub c: [f64; 2],
    pub d: f64,
    pub b: f64,
}

/// `∇_a k_ij` from the value and partial derivatives.
fn cov_d_first(gamma: &[Mat3; 3], k: &Mat3, dk: &[Mat3; 3]) -> [Mat3; 3] {
    let mut out = [ZERO3; 3];
    for a in 0..3 {
        for i in 0..3 {
            for j in 0..3 {
                let mut s = dk[a][i][j];
                for m in 0..3 {
                    s -= gamma[m][a][i] * k[m][j] + gamma[m][a][j] * k[i][m];
                }
                out[a][i][j] = s;
            }
        }
    }
    out
}

/// `T(u, w)` for a rank-2 tensor and two coordinate vectors.
fn contract(t: &Mat3, u: &[f64; 3], w: &[f64; 3]) -> f64 {
    let mut s = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            s += t[i][j] * u[i] * w[j];
        }
    }
    s
}

const E1: [f64; 3] = [1.0, 0.0, 0.0];
const E2: [f64; 3] = [0.0, 1.0, 0.0];
const TAN: [[f64; 3]; 2] = [E1, E2];

fn along(nk: &[Mat3; 3], u: &[f64; 3]) -> Mat3 {
    let mut out = ZERO3;
    for a in 0..3 {
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] += u[a] * nk[a][i][j];
            }
        }
    }
    out
}

pub fn neumann_parts(gamma: &[Mat3; 3], frame: &NormalFrame, k: &Mat3, dk: &[Mat3; 3]) -> NeumannParts {
    let nk = cov_d_first(gamma, k, dk);
    let n = frame.n_up;
    let h = frame.h_inv;
    let dn = along(&nk, &n);
    let mut c = [0.0; 2];
    for (a, ea) in TAN.iter().enumerate() {
        c[a] = contract(&dn, &n, ea);
        for b in 0..2 {
            for cc in 0..2 {
                c[a] += h[b][cc] * contract(&nk[b], &TAN[cc], ea);
            }
        }
    }
    let mut tan_n = 0.0;
    let mut j = 0.0;
    for a in 0..2 {
        for b in 0..2 {
            tan_n += h[a][b] * dn[a][b];
            j += h[a][b] * contract(&nk[a], &n, &TAN[b]);
        }
    }
    let nn = contract(&dn, &n, &n);
    NeumannParts { c, d: 0.5 * (nn - tan_n) + j, b: nn + tan_n }
}

/// Metric value, partial derivatives and Christoffel symbols from centred
/// first differences (face nodes read the first ghost layer).
fn first_order_geometry(g: &SymTensorField, cols: &Columns, i3: isize, h: &[f64; 3]) -> (Mat3, [Mat3; 3]) {
    let mut v = ZERO3;
    let mut d = [ZERO3; 3];
    for (n, &(i, j)) in crate::tensor::SYM_PAIRS.iter().enumerate() {
        let x = cols.value(&g.c[n].data, i3);
        let dx = cols.first(&g.c[n].data, i3, h);
        v[i][j] = x;
        v[j][i] = x;
        for a in 0..3 {
            d[a][i][j] = dx[a];
            d[a][j][i] = dx[a];
        }
    }
    (v, d)
}

fn christoffel(ginv: &Mat3, dg: &[Mat3; 3]) -> [Mat3; 3] {
    let mut gamma = [ZERO3; 3];
    for a in 0..3 {
        for b in 0..3 {
            for c in b..3 {
                let mut s = 0.0;
                for l in 0..3 {
                    s += ginv[a][l] * (dg[b][c][l] + dg[c][b][l] - dg[l][b][c]);
                }
                gamma[a][b][c] = 0.5 * s;
                gamma[a][c][b] = 0.5 * s;
            }
        }
    }
    gamma
}

/// Geometry at a face node needed by the boundary kernels.
struct FaceGeometry {
    g: Mat3,
    ginv: Mat3,
    gamma: [Mat3; 3],
    frame: NormalFrame,
}

fn face_geometry(grid: &Grid, g: &SymTensorField, i1: usize, i2: usize, i3: isize) -> Result<FaceGeometry> {
    let cols = grid.neighbourhood(i1, i2);
    let (gv, dg) = first_order_geometry(g, &cols, i3, &grid.h);
    if !dg.iter().flatten().flatten().all(|x| x.is_finite()) {
        return Err(Error::UnfilledGhost("metric".into()));
    }
    let ginv = metric_inverse(&gv).ok_or(Error::DegenerateMetric(i1, i2, i3))?;
    let frame = normal_frame_point(&gv, &ginv).ok_or(Error::DegenerateMetric(i1, i2, i3))?;
    Ok(FaceGeometry { g: gv, ginv, gamma: christoffel(&ginv, &dg), frame })
}

/// Tangential partial derivatives of `k` at a face node; the normal slot is
/// left at zero.
fn tangential_partials(k: &SymTensorField, cols: &Columns, i3: isize, h: &[f64; 3]) -> [Mat3; 3] {
    let mut d = [ZERO3; 3];
    for (n, &(i, j)) in crate::tensor::SYM_PAIRS.iter().enumerate() {
        let f = &k.c[n].data;
        let at = |c: usize| f[(c as isize + i3) as usize];
        let c = &cols.cols;
        let d1 = (at(c[2][1]) - at(c[0][1])) / (2.0 * h[0]);
        let d2 = (at(c[1][2]) - at(c[1][0])) / (2.0 * h[1]);
        d[0][i][j] = d1;
        d[0][j][i] = d1;
        d[1][i][j] = d2;
        d[1][j][i] = d2;
    }
    d
}

/// Replaces the Dirichlet-controlled parts of a symmetric tensor on a face
/// node: the trace-free tangential part becomes `hat`, and the pair
/// `(T_NN, T_C^C)` keeps its difference while its sum becomes `trace`.
fn project_dirichlet(t: &Mat3, frame: &NormalFrame, g_tan: &Mat2, hat_target: &Mat2, trace: f64) -> Mat3 {
    let fc = frame_project_point(t, frame);
    let cc = fc.tan_trace(frame);
    let delta = cc - fc.nn;
    let cc_new = 0.5 * (trace + delta);
    let nn_new = 0.5 * (trace - delta);
    let mixed = add2(hat_target, &scale2(0.5 * cc_new, &ID2));
    let tan = sym2(&matmul2(&mixed, g_tan));
    frame_reconstruct_point(&FrameComponents { tan, na: fc.na, nn: nn_new }, frame)
}

/// Imposes all boundary conditions at time `t`.
///
/// Order: `g` ghosts (cubic extrapolation), face values of `k`, face values
/// of `v`, the first ghost layer of `k` from the Neumann conditions, then the
/// remaining ghost layers of `k` and all ghost layers of `v` by extrapolation.
pub fn apply_bc(
    grid: &Grid,
    g: &mut SymTensorField,
    k: &mut SymTensorField,
    v: &mut SymTensorField,
    t: f64,
    source: &dyn BoundarySource,
) -> Result<()> {
    g.extrapolate_ghosts(grid);
    for face in Face::BOTH {
        let targets = source.targets(grid, face, t)?;
        let i3 = grid.face_index(face);
        let mut geos = Vec::with_capacity(grid.n1 * grid.n2);
        for i1 in 0..grid.n1 {
            for i2 in 0..grid.n2 {
                let geo = face_geometry(grid, g, i1, i2, i3)?;
                let tg = targets.get(i1, i2);
                let g_tan = tan_block(&geo.g);
                let kn = project_dirichlet(&k.get_mat(grid, i1, i2, i3), &geo.frame, &g_tan, &tg.hat, tg.trace);
                k.set_mat(grid, i1, i2, i3, &kn);
                // ∂ₜ(KH) = VH + 2(KH)², ∂ₜ tr k = tr v + 2|k|² where Φ = 1.
                let kh = matmul2(&tan_block(&kn), &geo.frame.h_inv);
                let v_hat = add2(&tg.hat_dot, &scale2(-2.0, &hat(&matmul2(&kh, &kh))));
                let v_trace = tg.trace_dot - 2.0 * norm2_point(&geo.ginv, &kn);
                let vn = project_dirichlet(&v.get_mat(grid, i1, i2, i3), &geo.frame, &g_tan, &v_hat, v_trace);
                v.set_mat(grid, i1, i2, i3, &vn);
                geos.push(geo);
            }
        }
        for i1 in 0..grid.n1 {
            for i2 in 0..grid.n2 {
                fill_k_ghost(grid, k, face, i1, i2, &geos[i1 * grid.n2 + i2], &targets.get(i1, i2))?;
            }
        }
    }
    for c in k.c.iter_mut() {
        for l in 2..=grid.ghost {
            c.extrapolate_ghost_layer(grid, l);
        }
    }
    v.extrapolate_ghosts(grid);
    Ok(())
}

fn fill_k_ghost(
    grid: &Grid,
    k: &mut SymTensorField,
    face: Face,
    i1: usize,
    i2: usize,
    geo: &FaceGeometry,
    tg: &NodeTargets,
) -> Result<()> {
    let i3 = grid.face_index(face);
    let s = face.sign();
    let s_i = s as isize;
    let h3 = grid.h[2];
    let cols = grid.neighbourhood(i1, i2);
    let kv = k.get_mat(grid, i1, i2, i3);
    let dk = tangential_partials(k, &cols, i3, &grid.h);
    let n = geo.frame.n_up;
    let hinv = geo.frame.h_inv;
    let cond = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]) / (n[2] * n[2]);
    if !(cond <= MAX_NORMAL_CONDITION) {
        return Err(Error::BoundarySolve { face: face.name(), i1, i2, cond });
    }
    // With the normal partial set to zero, every Neumann expression reduces
    // to its known part; the unknown enters as N³·D with D = ∂₃k.
    let known = {
        let nk = cov_d_first(&geo.gamma, &kv, &dk);
        let e = along(&nk, &n);
        (nk, e)
    };
    let (nk0, e) = known;
    let mut rhs_c = [0.0; 2];
    let mut e_na = [0.0; 2];
    for (a, ea) in TAN.iter().enumerate() {
        e_na[a] = contract(&e, &n, ea);
        rhs_c[a] = tg.off_c[a];
        for b in 0..2 {
            for c in 0..2 {
                rhs_c[a] -= hinv[b][c] * contract(&nk0[b], &TAN[c], ea);
            }
        }
    }
    let mut j = 0.0;
    let mut e_tan_tr = 0.0;
    for a in 0..2 {
        for b in 0..2 {
            j += hinv[a][b] * contract(&nk0[a], &n, &TAN[b]);
            e_tan_tr += hinv[a][b] * e[a][b];
        }
    }
    let e_nn = contract(&e, &n, &n);
    let p = 0.5 * tg.off_b + tg.off_d - j;
    let q = 0.5 * tg.off_b - tg.off_d + j;
    let n3 = n[2];
    let d_na = [(rhs_c[0] - e_na[0]) / n3, (rhs_c[1] - e_na[1]) / n3];
    let d_nn = (p - e_nn) / n3;
    let d_tr = (q - e_tan_tr) / n3;

    // h-trace-free tangential part of D from extrapolation.
    let nbr = i3 - s_i;
    let mut d_ex = ZERO3;
    for (m, &(a, b)) in crate::tensor::SYM_PAIRS.iter().enumerate() {
        let f = &k.c[m];
        let fv = |o: isize| f.get(grid, i1, i2, i3 - s_i * o);
        let ghost = 4.0 * fv(0) - 6.0 * fv(1) + 4.0 * fv(2) - fv(3);
        let d = s * (ghost - fv(1)) / (2.0 * h3);
        d_ex[a][b] = d;
        d_ex[b][a] = d;
    }
    let g_tan = tan_block(&geo.g);
    let ex_tan = tan_block(&d_ex);
    let ex_tr = trace2(&matmul2(&ex_tan, &hinv));
    let d_tan = add2(&ex_tan, &scale2(0.5 * (d_tr - ex_tr), &g_tan));

    let mut d = ZERO3;
    for a in 0..2 {
        for b in 0..2 {
            d[a][b] = d_tan[a][b];
        }
    }
    for a in 0..2 {
        let d3a = (d_na[a] - n[0] * d_tan[0][a] - n[1] * d_tan[1][a]) / n3;
        d[2][a] = d3a;
        d[a][2] = d3a;
    }
    let mut tt = 0.0;
    for a in 0..2 {
        for b in 0..2 {
            tt += n[a] * n[b] * d_tan[a][b];
        }
    }
    d[2][2] = (d_nn - tt - 2.0 * n3 * (n[0] * d[2][0] + n[1] * d[2][1])) / (n3 * n3);

    for (m, &(a, b)) in crate::tensor::SYM_PAIRS.iter().enumerate() {
        let base = k.c[m].get(grid, i1, i2, nbr);
        k.c[m].set(grid, i1, i2, i3 + s_i, base + s * 2.0 * h3 * d[a][b]);
    }
    Ok(())
}

/// Largest violation of each boundary condition over both faces.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BcResiduals {
    /// Condition (a), largest entry of `k̂ − target`.
    pub hat: f64,
    /// Condition (b).
    pub trace: f64,
    /// Condition (c).
    pub na: f64,
    /// Condition (d) and the normal derivative of (b).
    pub cc: f64,
}

impl BcResiduals {
    pub fn max(&self) -> f64 {
        self.hat.max(self.trace).max(self.na).max(self.cc)
    }
}

/// Evaluates the boundary conditions on the current fields, reading the
/// first ghost layer of `g` and `k`.
pub fn bc_residuals(
    grid: &Grid,
    g: &SymTensorField,
    k: &SymTensorField,
    t: f64,
    source: &dyn BoundarySource,
) -> Result<BcResiduals> {
    let mut r = BcResiduals::default();
    for face in Face::BOTH {
        let targets = source.targets(grid, face, t)?;
        let i3 = grid.face_index(face);
        for i1 in 0..grid.n1 {
            for i2 in 0..grid.n2 {
                let geo = face_geometry(grid, g, i1, i2, i3)?;
                let tg = targets.get(i1, i2);
                let cols = grid.neighbourhood(i1, i2);
                let kv = k.get_mat(grid, i1, i2, i3);
                let mut dk = tangential_partials(k, &cols, i3, &grid.h);
                for (m, &(a, b)) in crate::tensor::SYM_PAIRS.iter().enumerate() {
                    let f = &k.c[m];
                    let d = (f.get(grid, i1, i2, i3 + 1) - f.get(grid, i1, i2, i3 - 1)) / (2.0 * grid.h[2]);
                    dk[2][a][b] = d;
                    dk[2][b][a] = d;
                }
                if !dk[2].iter().flatten().all(|x| x.is_finite()) {
                    return Err(Error::UnfilledGhost("k".into()));
                }
                let (hk, tr) = dirichlet_parts(&kv, &geo.ginv, &geo.frame);
                let np = neumann_parts(&geo.gamma, &geo.frame, &kv, &dk);
                r.hat = r.hat.max(max_entry2(&add2(&hk, &scale2(-1.0, &tg.hat))));
                r.trace = r.trace.max((tr - tg.trace).abs());
                r.na = r.na.max((np.c[0] - tg.off_c[0]).abs()).max((np.c[1] - tg.off_c[1]).abs());
                r.cc = r.cc.max((np.d - tg.off_d).abs()).max((np.b - tg.off_b).abs());
            }
        }
    }
    Ok(r)
}

/// Normal derivative at a face node by the one-sided second-order stencil.
fn one_sided_normal(grid: &Grid, f: &ScalarField, face: Face, i1: usize, i2: usize) -> f64 {
    let i3 = grid.face_index(face);
    let s = face.sign();
    let s_i = s as isize;
    let f0 = f.get(grid, i1, i2, i3);
    let f1 = f.get(grid, i1, i2, i3 - s_i);
    let f2 = f.get(grid, i1, i2, i3 - 2 * s_i);
    s * (3.0 * f0 - 4.0 * f1 + f2) / (2.0 * grid.h[2])
}

/// Second fundamental form `χ_AB = g(∇_{∂_A}∂_B, N) = Γ³_AB/√g^{33}` of the
/// face, with one-sided normal differences of `g`. Needs no ghost values.
pub fn boundary_chi(grid: &Grid, g: &SymTensorField, face: Face) -> Result<FaceField<Mat2>> {
    let i3 = grid.face_index(face);
    let mut data = Vec::with_capacity(grid.n1 * grid.n2);
    for i1 in 0..grid.n1 {
        for i2 in 0..grid.n2 {
            let cols = grid.neighbourhood(i1, i2);
            let gv = g.get_mat(grid, i1, i2, i3);
            let ginv = metric_inverse(&gv).ok_or(Error::DegenerateMetric(i1, i2, i3))?;
            let mut dg = [ZERO3; 3];
            for (m, &(a, b)) in crate::tensor::SYM_PAIRS.iter().enumerate() {
                let f = &g.c[m].data;
                let at = |c: usize| f[(c as isize + i3) as usize];
                let c = &cols.cols;
                let d1 = (at(c[2][1]) - at(c[0][1])) / (2.0 * grid.h[0]);
                let d2 = (at(c[1][2]) - at(c[1][0])) / (2.0 * grid.h[1]);
                let d3 = one_sided_normal(grid, &g.c[m], face, i1, i2);
                for (dir, val) in [d1, d2, d3].into_iter().enumerate() {
                    dg[dir][a][b] = val;
                    dg[dir][b][a] = val;
                }
            }
            let gamma = christoffel(&ginv, &dg);
            let norm = ginv[2][2].sqrt();
            let mut chi = ZERO2;
            for a in 0..2 {
                for b in 0..2 {
                    chi[a][b] = gamma[2][a][b] / norm;
                }
            }
            data.push(chi);
        }
    }
    Ok(FaceField { n1: grid.n1, n2: grid.n2, data })
}

/// Residuals of the corner compatibility conditions at `t = 0`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CompatReport {
    /// Distance between the unimodular representatives of `[g_AB]` and `[q_0]`.
    pub conformal: f64,
    /// `k̂(k_0)` against `k̂(q_0)`.
    pub hat: f64,
    /// `∂ₜk̂` implied by the equations against `∂ₜk̂(q)`.
    pub hat_dot: f64,
}

impl CompatReport {
    pub fn max(&self) -> f64 {
        self.conformal.max(self.hat).max(self.hat_dot)
    }

    pub fn check(&self, tol: f64) -> Result<()> {
        if self.max() <= tol {
            return Ok(());
        }
        Err(Error::Compat(format!(
            "conformal class {:.3e}, k̂ {:.3e}, ∂ₜk̂ {:.3e} (tolerance {tol:.1e})",
            self.conformal, self.hat, self.hat_dot
        )))
    }
}

fn unimodular(m: &Mat2) -> Mat2 {
    scale2(1.0 / crate::tensor::det2(m).sqrt(), m)
}

/// Checks the initial data `(g, k, Φ)` against the conformal boundary data on
/// both faces. `g` needs filled ghost layers.
///
/// The time derivative of `k̂` implied by the evolution at the face is
/// `hat([R_AB + χ_AB NΦ + k_AB tr k − 2k_AN k_NB] h^{BC})`, using
/// `∇_A∇_BΦ = −χ_AB NΦ` where `Φ = 1`.
pub fn compatibility_check(
    grid: &Grid,
    g: &SymTensorField,
    k: &SymTensorField,
    phi: &ScalarField,
    data: &ConformalData,
) -> Result<CompatReport> {
    let mut r = CompatReport::default();
    for face in Face::BOTH {
        let fam = data.family(face);
        let i3 = grid.face_index(face);
        let chi = boundary_chi(grid, g, face)?;
        for i1 in 0..grid.n1 {
            for i2 in 0..grid.n2 {
                let x = [grid.x1[i1], grid.x2[i2]];
                let cols = grid.neighbourhood(i1, i2);
                let gd = TensorDerivs::gather(g, &cols, i3, &grid.h);
                let geo = point_geometry(&gd).ok_or(Error::DegenerateMetric(i1, i2, i3))?;
                let frame = normal_frame_point(&geo.g, &geo.ginv).ok_or(Error::DegenerateMetric(i1, i2, i3))?;
                let g_tan = tan_block(&geo.g);
                let q = fam.sample(0.0, i1, i2, x)?.q;
                let diff = add2(&unimodular(&g_tan), &scale2(-1.0, &unimodular(&q)));
                r.conformal = r.conformal.max(max_entry2(&diff));

                let kv = k.get_mat(grid, i1, i2, i3);
                let (hk, trk) = dirichlet_parts(&kv, &geo.ginv, &frame);
                let target = fam.hat_k(0.0, i1, i2, x)?;
                r.hat = r.hat.max(max_entry2(&add2(&hk, &scale2(-1.0, &target))));

                let dphi = cols.first(&phi.data, i3, &grid.h);
                let n_phi = frame.n_up[0] * dphi[0]
                    + frame.n_up[1] * dphi[1]
                    + frame.n_up[2] * one_sided_normal(grid, phi, face, i1, i2);
                let fc = frame_project_point(&kv, &frame);
                let c = chi.get(i1, i2);
                let mut m = ZERO2;
                for a in 0..2 {
                    for b in 0..2 {
                        m[a][b] = geo.ricci[a][b] + c[a][b] * n_phi + kv[a][b] * trk - 2.0 * fc.na[a] * fc.na[b];
                    }
                }
                let implied = hat(&matmul2(&m, &frame.h_inv));
                let dt_target = fam.hat_k_dot(0.0, i1, i2, x)?;
                r.hat_dot = r.hat_dot.max(max_entry2(&add2(&implied, &scale2(-1.0, &dt_target))));
            }
        }
    }
    Ok(r)
}

/// `Σ_{i ≤ r+2} Σ_{|α| ≤ r+2−i} ∫ |∂^α ∂ₜ^i k̂|² dA` over one face at time
/// `t`, with coordinate area, centred differences tangentially and central
/// differences of step `dt` in time.
fn cbd_density(grid: &Grid, family: &ConformalBoundaryFamily, r: usize, t: f64, dt: f64) -> Result<f64> {
    let order = r + 2;
    let mut total = 0.0;
    for i in 0..=order {
        // ∂ₜ^i k̂ by the centred i-th difference.
        let mut field = FaceField::from_fn(grid, |_, _| ZERO2);
        for kk in 0..=i {
            let w = binomial(i, kk) * if kk % 2 == 0 { 1.0 } else { -1.0 } / dt.powi(i as i32);
            let ts = t + (0.5 * i as f64 - kk as f64) * dt;
            let f = hatk_from_conformal(family, grid, ts)?;
            for (acc, x) in field.data.iter_mut().zip(&f.data) {
                *acc = add2(acc, &scale2(w, x));
            }
        }
        for a1 in 0..=order - i {
            for a2 in 0..=order - i - a1 {
                let mut d = field.clone();
                for _ in 0..a1 {
                    d = face_diff(grid, &d, 1);
                }
                for _ in 0..a2 {
                    d = face_diff(grid, &d, 2);
                }
                total += d.data.iter().map(|m| m.iter().flatten().map(|x| x * x).sum::<f64>()).sum::<f64>();
            }
        }
    }
    Ok(total * grid.face_area_element())
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

fn face_diff(grid: &Grid, f: &FaceField<Mat2>, dir: usize) -> FaceField<Mat2> {
    FaceField::from_fn(grid, |i1, i2| {
        let (p, m, h) = if dir == 1 {
            (f.get((i1 + 1) % grid.n1, i2), f.get((i1 + grid.n1 - 1) % grid.n1, i2), grid.h[0])
        } else {
            (f.get(i1, (i2 + 1) % grid.n2), f.get(i1, (i2 + grid.n2 - 1) % grid.n2), grid.h[1])
        };
        scale2(0.5 / h, &add2(&p, &scale2(-1.0, &m)))
    })
}

/// Boundary-data norm `c_bd`: the largest over `samples + 1` equally spaced
/// times in `[0, t_final]` of the face density, summed over both faces.
pub fn cbd_norm(grid: &Grid, data: &ConformalData, r: usize, t_final: f64, samples: usize) -> Result<f64> {
    let samples = samples.max(1);
    let dt = 1e-2;
    let mut best: f64 = 0.0;
    for n in 0..=samples {
        let t = t_final * n as f64 / samples as f64;
        let mut s = 0.0;
        for face in Face::BOTH {
            s += cbd_density(grid, data.family(face), r, t, dt)?;
        }
        best = best.max(s);
    }
    Ok(best)
}

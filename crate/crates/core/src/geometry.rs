//! Pointwise Riemannian calculus of the spatial metric.
//!
//! Every kernel takes the local derivative data of its inputs at a single node
//! ([`TensorDerivs`], [`PointDerivs`]) so the same code is fed either from grid
//! stencils or from exact jets.

use crate::error::{Error, Result};
use crate::grid::{Grid, PointDerivs, ScalarField, SymTensorField};
use crate::jet::Jet;
use crate::tensor::{inv3, sym_eigenvalues3, Mat2, Mat3, ZERO3};

pub const MIN_DET: f64 = 1e-10;
pub const MIN_EIGENVALUE: f64 = 1e-8;

/// Symmetric tensor with its first and second partial derivatives at a node:
/// `d[a][i][j] = ∂_a T_ij`, `dd[a][b][i][j] = ∂_a∂_b T_ij`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TensorDerivs {
    pub v: Mat3,
    pub d: [Mat3; 3],
    pub dd: [[Mat3; 3]; 3],
}

impl TensorDerivs {
    /// Gathers all six components through grid stencils.
    #[inline]
    pub fn gather(t: &SymTensorField, cols: &crate::grid::Columns, i3: isize, h: &[f64; 3]) -> Self {
        let mut r = TensorDerivs::default();
        for (n, &(i, j)) in crate::tensor::SYM_PAIRS.iter().enumerate() {
            let p = cols.second(&t.c[n].data, i3, h);
            r.v[i][j] = p.v;
            r.v[j][i] = p.v;
            for a in 0..3 {
                r.d[a][i][j] = p.d[a];
                r.d[a][j][i] = p.d[a];
                for b in 0..3 {
                    r.dd[a][b][i][j] = p.dd[a][b];
                    r.dd[a][b][j][i] = p.dd[a][b];
                }
            }
        }
        r
    }

    /// Spatial derivative data of a jet-valued tensor.
    pub fn from_jets(m: &[[Jet; 3]; 3]) -> Self {
        let mut r = TensorDerivs::default();
        for i in 0..3 {
            for j in 0..3 {
                let p = point_from_jet(&m[i][j]);
                r.v[i][j] = p.v;
                for a in 0..3 {
                    r.d[a][i][j] = p.d[a];
                    for b in 0..3 {
                        r.dd[a][b][i][j] = p.dd[a][b];
                    }
                }
            }
        }
        r
    }
}

pub fn point_from_jet(j: &Jet) -> PointDerivs {
    PointDerivs { v: j.v, d: j.grad(), dd: j.hess() }
}

/// Metric-derived quantities at one node.
#[derive(Clone, Copy, Debug)]
pub struct PointGeometry {
    pub g: Mat3,
    pub ginv: Mat3,
    /// `gamma[a][b][c] = Γ^a_bc`.
    pub gamma: [Mat3; 3],
    /// `dgamma[d][a][b][c] = ∂_d Γ^a_bc`.
    pub dgamma: [[Mat3; 3]; 3],
    pub ricci: Mat3,
    pub scalar: f64,
}

/// Inverse metric with the degenerate-slice guard.
pub fn metric_inverse(g: &Mat3) -> Option<Mat3> {
    let inv = inv3(g, MIN_DET)?;
    if sym_eigenvalues3(g)[0] < MIN_EIGENVALUE {
        return None;
    }
    Some(inv)
}

/// Christoffel symbols, their derivatives and the Ricci tensor from the
/// metric jet. Ricci is assembled from the partial-derivative form
/// `∂_aΓ^a_ji − ∂_jΓ^a_ia + Γ^a_abΓ^b_ji − Γ^a_jbΓ^b_ai` and symmetrized.
pub fn point_geometry(gd: &TensorDerivs) -> Option<PointGeometry> {
    let ginv = metric_inverse(&gd.v)?;
    // lower[l][b][c] = ½(∂_b g_cl + ∂_c g_bl − ∂_l g_bc)
    let mut lower = [ZERO3; 3];
    let mut dlower = [[ZERO3; 3]; 3];
    for l in 0..3 {
        for b in 0..3 {
            for c in 0..3 {
                lower[l][b][c] = 0.5 * (gd.d[b][c][l] + gd.d[c][b][l] - gd.d[l][b][c]);
                for d in 0..3 {
                    dlower[d][l][b][c] =
                        0.5 * (gd.dd[d][b][c][l] + gd.dd[d][c][b][l] - gd.dd[d][l][b][c]);
                }
            }
        }
    }
    let mut gamma = [ZERO3; 3];
    for a in 0..3 {
        for b in 0..3 {
            for c in 0..3 {
                gamma[a][b][c] =
                    ginv[a][0] * lower[0][b][c] + ginv[a][1] * lower[1][b][c] + ginv[a][2] * lower[2][b][c];
            }
        }
    }
    // ∂_d g^{al} = −g^{am} ∂_d g_mn g^{nl}
    let mut dginv = [ZERO3; 3];
    for d in 0..3 {
        let t = crate::tensor::matmul3(&crate::tensor::matmul3(&ginv, &gd.d[d]), &ginv);
        for a in 0..3 {
            for l in 0..3 {
                dginv[d][a][l] = -t[a][l];
            }
        }
    }
    let mut dgamma = [[ZERO3; 3]; 3];
    for d in 0..3 {
        for a in 0..3 {
            for b in 0..3 {
                for c in b..3 {
                    let mut s = 0.0;
                    for l in 0..3 {
                        s += dginv[d][a][l] * lower[l][b][c] + ginv[a][l] * dlower[d][l][b][c];
                    }
                    dgamma[d][a][b][c] = s;
                    dgamma[d][a][c][b] = s;
                }
            }
        }
    }
    let mut ricci = ZERO3;
    let contracted: [f64; 3] = std::array::from_fn(|b| gamma[0][0][b] + gamma[1][1][b] + gamma[2][2][b]);
    for i in 0..3 {
        for j in 0..3 {
            let mut s = 0.0;
            for a in 0..3 {
                s += dgamma[a][a][j][i] - dgamma[j][a][i][a];
                s += contracted[a] * gamma[a][j][i];
                for b in 0..3 {
                    s -= gamma[a][j][b] * gamma[b][a][i];
                }
            }
            ricci[i][j] = s;
        }
    }
    let mut sym = ZERO3;
    for i in 0..3 {
        for j in 0..3 {
            sym[i][j] = 0.5 * (ricci[i][j] + ricci[j][i]);
        }
    }
    let scalar = crate::tensor::dot3(&ginv, &sym);
    Some(PointGeometry { g: gd.v, ginv, gamma, dgamma, ricci: sym, scalar })
}

impl PointGeometry {
    /// `∇_a T_ij` as `out[a][i][j]`.
    pub fn cov_d(&self, t: &TensorDerivs) -> [Mat3; 3] {
        let mut out = [ZERO3; 3];
        for a in 0..3 {
            for i in 0..3 {
                for j in i..3 {
                    let mut s = t.d[a][i][j];
                    for m in 0..3 {
                        s -= self.gamma[m][a][i] * t.v[m][j] + self.gamma[m][a][j] * t.v[i][m];
                    }
                    out[a][i][j] = s;
                    out[a][j][i] = s;
                }
            }
        }
        out
    }

    /// `∇_a∇_b T_ij` as `out[a][b][i][j]`.
    pub fn cov_dd(&self, t: &TensorDerivs) -> [[Mat3; 3]; 3] {
        let nt = self.cov_d(t);
        let mut out = [[ZERO3; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                for i in 0..3 {
                    for j in i..3 {
                        // ∂_a(∇_b T_ij)
                        let mut s = t.dd[a][b][i][j];
                        for m in 0..3 {
                            s -= self.dgamma[a][m][b][i] * t.v[m][j]
                                + self.gamma[m][b][i] * t.d[a][m][j]
                                + self.dgamma[a][m][b][j] * t.v[i][m]
                                + self.gamma[m][b][j] * t.d[a][i][m];
                        }
                        for m in 0..3 {
                            s -= self.gamma[m][a][b] * nt[m][i][j]
                                + self.gamma[m][a][i] * nt[b][m][j]
                                + self.gamma[m][a][j] * nt[b][i][m];
                        }
                        out[a][b][i][j] = s;
                        out[a][b][j][i] = s;
                    }
                }
            }
        }
        out
    }

    /// Rough tensor Laplacian `g^{ab}∇_a∇_b T_ij`.
    pub fn laplace_tensor(&self, t: &TensorDerivs) -> Mat3 {
        let dd = self.cov_dd(t);
        let mut out = ZERO3;
        for a in 0..3 {
            for b in 0..3 {
                let w = self.ginv[a][b];
                for i in 0..3 {
                    for j in 0..3 {
                        out[i][j] += w * dd[a][b][i][j];
                    }
                }
            }
        }
        out
    }

    /// `∇_i∇_j φ = ∂_i∂_j φ − Γ^a_ij ∂_a φ`.
    pub fn hessian(&self, p: &PointDerivs) -> Mat3 {
        let mut h = ZERO3;
        for i in 0..3 {
            for j in 0..3 {
                h[i][j] = p.dd[i][j]
                    - self.gamma[0][i][j] * p.d[0]
                    - self.gamma[1][i][j] * p.d[1]
                    - self.gamma[2][i][j] * p.d[2];
            }
        }
        h
    }

    pub fn laplace_scalar(&self, p: &PointDerivs) -> f64 {
        crate::tensor::dot3(&self.ginv, &self.hessian(p))
    }

    /// `g^{ab} Γ^c_ab`, the first-order coefficient of the scalar Laplacian.
    pub fn contracted_gamma(&self) -> [f64; 3] {
        std::array::from_fn(|c| crate::tensor::dot3(&self.ginv, &self.gamma[c]))
    }

    /// `∂_tΓ^b_ac = g^{bl}[∇_l(Φk_ac) − ∇_a(Φk_cl) − ∇_c(Φk_al)]`, returned as
    /// `out[b][a][c]`.
    pub fn dt_christoffel(&self, k: &Mat3, nabla_k: &[Mat3; 3], phi: &PointDerivs) -> [Mat3; 3] {
        // w[l][a][c] = ∇_l(Φk_ac)
        let mut w = [ZERO3; 3];
        for l in 0..3 {
            for a in 0..3 {
                for c in 0..3 {
                    w[l][a][c] = phi.d[l] * k[a][c] + phi.v * nabla_k[l][a][c];
                }
            }
        }
        let mut out = [ZERO3; 3];
        for b in 0..3 {
            for a in 0..3 {
                for c in a..3 {
                    let mut s = 0.0;
                    for l in 0..3 {
                        s += self.ginv[b][l] * (w[l][a][c] - w[a][c][l] - w[c][a][l]);
                    }
                    out[b][a][c] = s;
                    out[b][c][a] = s;
                }
            }
        }
        out
    }
}

/// `T^i_j = g^{ia}T_aj` as a plain matrix `[i][j]`.
pub fn raise_first(ginv: &Mat3, t: &Mat3) -> Mat3 {
    crate::tensor::matmul3(ginv, t)
}

/// `T^{ij} = g^{ia}g^{jb}T_ab`.
pub fn raise_both(ginv: &Mat3, t: &Mat3) -> Mat3 {
    crate::tensor::matmul3(&crate::tensor::matmul3(ginv, t), ginv)
}

pub fn trace_point(ginv: &Mat3, t: &Mat3) -> f64 {
    crate::tensor::dot3(ginv, t)
}

/// `|T|² = T_ij T^ij`.
pub fn norm2_point(ginv: &Mat3, t: &Mat3) -> f64 {
    crate::tensor::dot3(t, &raise_both(ginv, t))
}

/// Unit normal to the level sets of `x³` at one node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalFrame {
    /// Contravariant components `N^i = g^{3i}/√g^{33}`.
    pub n_up: [f64; 3],
    /// `√g^{33}`.
    pub norm: f64,
    /// Inverse of the induced 2-metric `g_AB`.
    pub h_inv: Mat2,
}

/// Components of a symmetric tensor against the frame `{∂₁, ∂₂, N}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameComponents {
    pub tan: Mat2,
    pub na: [f64; 2],
    pub nn: f64,
}

impl FrameComponents {
    /// Mixed tangential components `T_A^B = T_AC h^{CB}`.
    pub fn mixed(&self, frame: &NormalFrame) -> Mat2 {
        crate::tensor::matmul2(&self.tan, &frame.h_inv)
    }

    /// `T_C^C`.
    pub fn tan_trace(&self, frame: &NormalFrame) -> f64 {
        crate::tensor::trace2(&self.mixed(frame))
    }
}

pub fn normal_frame_point(g: &Mat3, ginv: &Mat3) -> Option<NormalFrame> {
    let g33 = ginv[2][2];
    if !(g33 > 0.0) {
        return None;
    }
    let norm = g33.sqrt();
    let n_up = [ginv[2][0] / norm, ginv[2][1] / norm, ginv[2][2] / norm];
    let h_inv = crate::tensor::inv2(&[[g[0][0], g[0][1]], [g[1][0], g[1][1]]])?;
    Some(NormalFrame { n_up, norm, h_inv })
}

/// Frame basis as the columns of a matrix: `e_1 = ∂₁`, `e_2 = ∂₂`, `e_3 = N`.
fn frame_matrix(frame: &NormalFrame) -> Mat3 {
    let n = frame.n_up;
    [[1.0, 0.0, n[0]], [0.0, 1.0, n[1]], [0.0, 0.0, n[2]]]
}

pub fn frame_project_point(t: &Mat3, frame: &NormalFrame) -> FrameComponents {
    let e = frame_matrix(frame);
    let mut et = ZERO3;
    for i in 0..3 {
        for j in 0..3 {
            et[i][j] = e[j][i];
        }
    }
    let f = crate::tensor::matmul3(&crate::tensor::matmul3(&et, t), &e);
    FrameComponents {
        tan: [[f[0][0], 0.5 * (f[0][1] + f[1][0])], [0.5 * (f[0][1] + f[1][0]), f[1][1]]],
        na: [0.5 * (f[2][0] + f[0][2]), 0.5 * (f[2][1] + f[1][2])],
        nn: f[2][2],
    }
}

pub fn frame_reconstruct_point(c: &FrameComponents, frame: &NormalFrame) -> Mat3 {
    let n = frame.n_up;
    // Inverse of the frame matrix, written out (upper triangular).
    let einv = [[1.0, 0.0, -n[0] / n[2]], [0.0, 1.0, -n[1] / n[2]], [0.0, 0.0, 1.0 / n[2]]];
    let f = [
        [c.tan[0][0], c.tan[0][1], c.na[0]],
        [c.tan[1][0], c.tan[1][1], c.na[1]],
        [c.na[0], c.na[1], c.nn],
    ];
    let mut einv_t = ZERO3;
    for i in 0..3 {
        for j in 0..3 {
            einv_t[i][j] = einv[j][i];
        }
    }
    let m = crate::tensor::matmul3(&crate::tensor::matmul3(&einv_t, &f), &einv);
    let mut out = ZERO3;
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = 0.5 * (m[i][j] + m[j][i]);
        }
    }
    out
}

/// Per-node Christoffel symbols on the real nodes, row-major.
pub struct ChristoffelField {
    pub data: Vec<[Mat3; 3]>,
}

/// Runs `f` on every real node with the node's metric geometry. Face nodes
/// read the first ghost layer of `g`.
pub fn for_each_geometry(
    grid: &Grid,
    g: &SymTensorField,
    mut f: impl FnMut(usize, usize, isize, &crate::grid::Columns, &PointGeometry) -> Result<()>,
) -> Result<()> {
    for i1 in 0..grid.n1 {
        for i2 in 0..grid.n2 {
            let cols = grid.neighbourhood(i1, i2);
            for i3 in 0..grid.n3 as isize {
                let gd = TensorDerivs::gather(g, &cols, i3, &grid.h);
                if !gd.dd.iter().flatten().flatten().flatten().all(|x| x.is_finite()) {
                    return Err(Error::UnfilledGhost("metric".into()));
                }
                let geo = point_geometry(&gd).ok_or(Error::DegenerateMetric(i1, i2, i3))?;
                f(i1, i2, i3, &cols, &geo)?;
            }
        }
    }
    Ok(())
}

pub fn christoffels(grid: &Grid, g: &SymTensorField) -> Result<ChristoffelField> {
    let mut data = Vec::with_capacity(grid.num_real());
    for_each_geometry(grid, g, |_, _, _, _, geo| {
        data.push(geo.gamma);
        Ok(())
    })?;
    Ok(ChristoffelField { data })
}

pub fn ricci(grid: &Grid, g: &SymTensorField) -> Result<SymTensorField> {
    let mut out = grid.tensor();
    for_each_geometry(grid, g, |i1, i2, i3, _, geo| {
        out.set_mat(grid, i1, i2, i3, &geo.ricci);
        Ok(())
    })?;
    Ok(out)
}

pub fn scalar_curvature(grid: &Grid, g: &SymTensorField) -> Result<ScalarField> {
    let mut out = grid.scalar();
    for_each_geometry(grid, g, |i1, i2, i3, _, geo| {
        out.set(grid, i1, i2, i3, geo.scalar);
        Ok(())
    })?;
    Ok(out)
}

fn checked_scalar(grid: &Grid, s: &ScalarField, name: &str) -> Result<()> {
    s.check_finite(grid, name).map_err(|_| Error::UnfilledGhost(name.into()))
}

pub fn hessian(grid: &Grid, g: &SymTensorField, phi: &ScalarField) -> Result<SymTensorField> {
    let mut out = grid.tensor();
    for_each_geometry(grid, g, |i1, i2, i3, cols, geo| {
        let p = cols.second(&phi.data, i3, &grid.h);
        out.set_mat(grid, i1, i2, i3, &geo.hessian(&p));
        Ok(())
    })?;
    out.check_finite(grid, "hessian").map_err(|_| Error::UnfilledGhost("hessian input".into()))?;
    Ok(out)
}

pub fn laplace_scalar(grid: &Grid, g: &SymTensorField, phi: &ScalarField) -> Result<ScalarField> {
    let mut out = grid.scalar();
    for_each_geometry(grid, g, |i1, i2, i3, cols, geo| {
        let p = cols.second(&phi.data, i3, &grid.h);
        out.set(grid, i1, i2, i3, geo.laplace_scalar(&p));
        Ok(())
    })?;
    checked_scalar(grid, &out, "laplace_scalar input")?;
    Ok(out)
}

pub fn laplace_tensor(grid: &Grid, g: &SymTensorField, t: &SymTensorField) -> Result<SymTensorField> {
    let mut out = grid.tensor();
    for_each_geometry(grid, g, |i1, i2, i3, cols, geo| {
        let td = TensorDerivs::gather(t, cols, i3, &grid.h);
        out.set_mat(grid, i1, i2, i3, &geo.laplace_tensor(&td));
        Ok(())
    })?;
    out.check_finite(grid, "laplace_tensor")
        .map_err(|_| Error::UnfilledGhost("laplace_tensor input".into()))?;
    Ok(out)
}

/// `∂_tΓ` on real nodes, row-major, `[b][a][c]` per node.
pub fn dt_christoffel(
    grid: &Grid,
    g: &SymTensorField,
    k: &SymTensorField,
    phi: &ScalarField,
) -> Result<ChristoffelField> {
    let mut data = Vec::with_capacity(grid.num_real());
    for_each_geometry(grid, g, |_, _, i3, cols, geo| {
        let kd = TensorDerivs::gather(k, cols, i3, &grid.h);
        let p = cols.second(&phi.data, i3, &grid.h);
        let nk = geo.cov_d(&kd);
        data.push(geo.dt_christoffel(&kd.v, &nk, &p));
        Ok(())
    })?;
    Ok(ChristoffelField { data })
}

/// Normal frame on every real node (no derivatives of `g` needed).
pub fn normal_frame(grid: &Grid, g: &SymTensorField) -> Result<Vec<NormalFrame>> {
    grid.real_nodes()
        .map(|(i1, i2, i3)| {
            let gm = g.get_mat(grid, i1, i2, i3);
            let ginv = metric_inverse(&gm).ok_or(Error::DegenerateMetric(i1, i2, i3))?;
            normal_frame_point(&gm, &ginv).ok_or(Error::DegenerateMetric(i1, i2, i3))
        })
        .collect()
}

pub fn trace(grid: &Grid, g: &SymTensorField, t: &SymTensorField) -> Result<ScalarField> {
    let mut out = grid.scalar();
    for (i1, i2, i3) in grid.real_nodes() {
        let ginv = metric_inverse(&g.get_mat(grid, i1, i2, i3)).ok_or(Error::DegenerateMetric(i1, i2, i3))?;
        out.set(grid, i1, i2, i3, trace_point(&ginv, &t.get_mat(grid, i1, i2, i3)));
    }
    Ok(out)
}

pub fn norm2(grid: &Grid, g: &SymTensorField, t: &SymTensorField) -> Result<ScalarField> {
    let mut out = grid.scalar();
    for (i1, i2, i3) in grid.real_nodes() {
        let ginv = metric_inverse(&g.get_mat(grid, i1, i2, i3)).ok_or(Error::DegenerateMetric(i1, i2, i3))?;
        out.set(grid, i1, i2, i3, norm2_point(&ginv, &t.get_mat(grid, i1, i2, i3)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_grid, GridSpec};
    use crate::tensor::IDENTITY3;
    use proptest::prelude::*;

    fn grid(n: usize, x3_min: f64) -> Grid {
        make_grid(GridSpec { n1: n, n2: n, n3: n, x3_min, ..GridSpec::default() }).unwrap()
    }

    fn diag(a: f64, b: f64, c: f64) -> Mat3 {
        [[a, 0.0, 0.0], [0.0, b, 0.0], [0.0, 0.0, c]]
    }

    fn max_gamma(cf: &ChristoffelField) -> f64 {
        cf.data.iter().flatten().flatten().flatten().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    #[test]
    fn constant_metrics_have_no_connection() {
        let g = grid(6, -1.0);
        for a in [1.0, 2.5] {
            let m = g.tensor_from_fn(|_| diag(a * a, a * a, a * a), true);
            assert_eq!(max_gamma(&christoffels(&g, &m).unwrap()), 0.0);
            assert_eq!(ricci(&g, &m).unwrap().max_abs(&g), 0.0);
            assert_eq!(scalar_curvature(&g, &m).unwrap().max_abs(&g), 0.0);
        }
    }

    #[test]
    fn stretched_normal_metric() {
        // g = diag(1, 1, (1+x³)²): only Γ³₃₃ = 1/(1+x³), and flat.
        let err = |n: usize| {
            let g = grid(n, -0.5);
            let m = g.tensor_from_fn(|x| diag(1.0, 1.0, (1.0 + x[2]).powi(2)), true);
            let cf = christoffels(&g, &m).unwrap();
            let mut e = 0.0f64;
            for (node, (i1, i2, i3)) in g.real_nodes().enumerate() {
                let x3 = g.coords(i1, i2, i3)[2];
                for a in 0..3 {
                    for b in 0..3 {
                        for c in 0..3 {
                            let exact = if a == 2 && b == 2 && c == 2 { 1.0 / (1.0 + x3) } else { 0.0 };
                            e = e.max((cf.data[node][a][b][c] - exact).abs());
                        }
                    }
                }
            }
            let r = ricci(&g, &m).unwrap().max_abs(&g);
            (e, r)
        };
        // Quadratic g₃₃ is differentiated exactly by the stencils.
        let (e, r) = err(8);
        assert!(e < 1e-12 && r < 1e-10, "{e} {r}");
    }

    #[test]
    fn conformally_flat_ricci() {
        // g = e^{2λx³}δ: R_11 = R_22 = −λ², R_33 = 0, R = −2λ² e^{−2λx³}.
        let lambda = 0.7;
        let err = |n: usize| {
            let g = grid(n, -1.0);
            let m = g.tensor_from_fn(|x| {
                let s = (2.0 * lambda * x[2]).exp();
                diag(s, s, s)
            }, true);
            let r = ricci(&g, &m).unwrap();
            let sc = scalar_curvature(&g, &m).unwrap();
            let mut e = 0.0f64;
            for (i1, i2, i3) in g.real_nodes() {
                let x3 = g.coords(i1, i2, i3)[2];
                let rm = r.get_mat(&g, i1, i2, i3);
                let exact = diag(-lambda * lambda, -lambda * lambda, 0.0);
                for i in 0..3 {
                    for j in 0..3 {
                        e = e.max((rm[i][j] - exact[i][j]).abs());
                    }
                }
                let rs = -2.0 * lambda * lambda * (-2.0 * lambda * x3).exp();
                e = e.max((sc.get(&g, i1, i2, i3) - rs).abs());
            }
            e
        };
        let (a, b) = (err(16), err(32));
        assert!(a / b > 3.6 && a / b < 4.4, "{a} {b}");
    }

    #[test]
    fn hessian_with_normal_stretch() {
        // φ = (x³)², g = diag(1,1,(1+x³)²): ∇₃∇₃φ = 2 − 2x³/(1+x³).
        let g = grid(16, -0.5);
        let m = g.tensor_from_fn(|x| diag(1.0, 1.0, (1.0 + x[2]).powi(2)), true);
        let phi = g.scalar_from_fn_with_ghosts(|x| x[2] * x[2]);
        let h = hessian(&g, &m, &phi).unwrap();
        let mut e = 0.0f64;
        for (i1, i2, i3) in g.real_nodes() {
            let x3 = g.coords(i1, i2, i3)[2];
            let hm = h.get_mat(&g, i1, i2, i3);
            e = e.max((hm[2][2] - (2.0 - 2.0 * x3 / (1.0 + x3))).abs());
            e = e.max(hm[0][0].abs()).max(hm[0][2].abs()).max(hm[1][1].abs());
        }
        assert!(e < 5e-3, "{e}");
        let lin = g.scalar_from_fn_with_ghosts(|x| x[2]);
        let flat = g.tensor_from_fn(|_| IDENTITY3, true);
        assert!(hessian(&g, &flat, &lin).unwrap().max_abs(&g) < 1e-12);
    }

    #[test]
    fn scalar_laplacian_discrete_symbol() {
        let g = grid(10, -1.0);
        let flat = g.tensor_from_fn(|_| IDENTITY3, true);
        let f = g.scalar_from_fn_with_ghosts(|x| x[0].sin());
        let l = laplace_scalar(&g, &flat, &f).unwrap();
        let h = g.h[0];
        for (i1, i2, i3) in g.real_nodes() {
            let expect = -g.x1[i1].sin() * (2.0 - 2.0 * h.cos()) / (h * h);
            assert!((l.get(&g, i1, i2, i3) - expect).abs() < 1e-13);
        }
        let c = g.scalar_from_fn_with_ghosts(|_| 3.0);
        assert_eq!(laplace_scalar(&g, &flat, &c).unwrap().max_abs(&g), 0.0);
    }

    #[test]
    fn metric_is_parallel() {
        let g = grid(8, -1.0);
        let m = g.tensor_from_fn(|x| {
            [
                [1.2 + 0.1 * x[0].sin(), 0.1 * x[2], 0.05 * x[1].cos()],
                [0.1 * x[2], 1.0 + 0.2 * x[2] * x[2], 0.0],
                [0.05 * x[1].cos(), 0.0, 0.9 + 0.1 * (x[0] + x[2]).cos()],
            ]
        }, true);
        assert!(laplace_tensor(&g, &m, &m).unwrap().max_abs(&g) < 1e-11);
    }

    #[test]
    fn dt_christoffel_examples() {
        let g = grid(6, -1.0);
        let flat = g.tensor_from_fn(|_| IDENTITY3, true);
        let one = g.scalar_from_fn_with_ghosts(|_| 1.0);
        let zero = g.tensor_from_fn(|_| ZERO3, true);
        assert_eq!(max_gamma(&dt_christoffel(&g, &flat, &zero, &one).unwrap()), 0.0);
        assert!(max_gamma(&dt_christoffel(&g, &flat, &flat, &one).unwrap()) < 1e-14);
        let k = g.tensor_from_fn(|x| diag(0.0, 0.0, x[2]), true);
        let cf = dt_christoffel(&g, &flat, &k, &one).unwrap();
        for node in &cf.data {
            for b in 0..3 {
                for a in 0..3 {
                    for c in 0..3 {
                        let exact = if (a, b, c) == (2, 2, 2) { -1.0 } else { 0.0 };
                        assert!((node[b][a][c] - exact).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn frame_examples() {
        let g = diag(1.0, 1.0, 1.0);
        let fr = normal_frame_point(&g, &g).unwrap();
        assert_eq!(fr.n_up, [0.0, 0.0, 1.0]);
        let k = [[1.0, 2.0, 3.0], [2.0, 4.0, 5.0], [3.0, 5.0, 6.0]];
        assert_eq!(frame_project_point(&k, &fr).nn, 6.0);
        let gd = diag(2.0, 3.0, 4.0);
        let fr = normal_frame_point(&gd, &metric_inverse(&gd).unwrap()).unwrap();
        assert!((fr.n_up[2] - 0.5).abs() < 1e-15 && fr.n_up[0] == 0.0);
        // g₁₃ ≠ 0: N^i = g^{3i}/√g^{33} with the inverse from Gauss-Jordan.
        let gm = [[1.0, 0.0, 0.3], [0.0, 1.0, 0.0], [0.3, 0.0, 1.0]];
        let inv = gauss_jordan(&gm);
        let fr = normal_frame_point(&gm, &metric_inverse(&gm).unwrap()).unwrap();
        for i in 0..3 {
            assert!((fr.n_up[i] - inv[2][i] / inv[2][2].sqrt()).abs() < 1e-14);
        }
        assert!((norm_of(&gm, &fr.n_up) - 1.0).abs() < 1e-14);
    }

    fn norm_of(g: &Mat3, v: &[f64; 3]) -> f64 {
        (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| g[i][j] * v[i] * v[j]).sum()
    }

    fn gauss_jordan(m: &Mat3) -> Mat3 {
        let mut a = [[0.0; 6]; 3];
        for i in 0..3 {
            for j in 0..3 {
                a[i][j] = m[i][j];
            }
            a[i][3 + i] = 1.0;
        }
        for c in 0..3 {
            let p = (c..3).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap();
            a.swap(c, p);
            let d = a[c][c];
            for v in a[c].iter_mut() {
                *v /= d;
            }
            for r in 0..3 {
                if r != c {
                    let f = a[r][c];
                    for j in 0..6 {
                        a[r][j] -= f * a[c][j];
                    }
                }
            }
        }
        std::array::from_fn(|i| std::array::from_fn(|j| a[i][3 + j]))
    }

    #[test]
    fn trace_and_norm_examples() {
        let id = IDENTITY3;
        let two = diag(2.0, 2.0, 2.0);
        assert_eq!(trace_point(&metric_inverse(&two).unwrap(), &two), 3.0);
        assert_eq!(norm2_point(&id, &id), 3.0);
        assert!((norm2_point(&metric_inverse(&two).unwrap(), &id) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn three_dimensional_weyl_vanishes() {
        let x = [0.3, -0.4, -0.2];
        let j = Jet::point(0.0, x);
        let m: [[Jet; 3]; 3] = std::array::from_fn(|a| {
            std::array::from_fn(|b| {
                let (p, q) = (a.min(b) as f64, a.max(b) as f64);
                let wave = (j[1] * (p + 0.5) + j[2] * q + j[3]).cos().scale(0.1);
                if a == b {
                    wave + (j[3] * (q + 1.0)).exp().scale(0.2) + 1.0
                } else {
                    wave
                }
            })
        });
        let geo = point_geometry(&TensorDerivs::from_jets(&m)).unwrap();
        // R^a_bcd = ∂_cΓ^a_db − ∂_dΓ^a_cb + Γ^a_ceΓ^e_db − Γ^a_deΓ^e_cb, lowered.
        let mut riem = [[[[0.0; 3]; 3]; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    for d in 0..3 {
                        let mut s = geo.dgamma[c][a][d][b] - geo.dgamma[d][a][c][b];
                        for e in 0..3 {
                            s += geo.gamma[a][c][e] * geo.gamma[e][d][b] - geo.gamma[a][d][e] * geo.gamma[e][c][b];
                        }
                        riem[a][b][c][d] = s;
                    }
                }
            }
        }
        let g = geo.g;
        let (r, rs) = (geo.ricci, geo.scalar);
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    for d in 0..3 {
                        let low: f64 = (0..3).map(|e| g[a][e] * riem[e][b][c][d]).sum();
                        let rhs = g[a][c] * r[b][d] - g[a][d] * r[b][c] - g[b][c] * r[a][d] + g[b][d] * r[a][c]
                            - 0.5 * rs * (g[a][c] * g[b][d] - g[a][d] * g[b][c]);
                        assert!((low - rhs).abs() < 1e-12, "{a}{b}{c}{d}: {low} vs {rhs}");
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn frame_round_trip(
            l in proptest::array::uniform6(-0.4f64..0.4),
            t in proptest::array::uniform6(-3.0f64..3.0),
        ) {
            let a = [[1.0 + l[0], 0.0, 0.0], [l[1], 1.0 + l[2], 0.0], [l[3], l[4], 1.0 + l[5]]];
            let mut g = ZERO3;
            for i in 0..3 {
                for j in 0..3 {
                    g[i][j] = (0..3).map(|m| a[i][m] * a[j][m]).sum();
                }
            }
            let ginv = metric_inverse(&g).unwrap();
            let fr = normal_frame_point(&g, &ginv).unwrap();
            prop_assert!((norm_of(&g, &fr.n_up) - 1.0).abs() < 1e-12);
            let k = crate::tensor::sym_to_mat(&t);
            let back = frame_reconstruct_point(&frame_project_point(&k, &fr), &fr);
            for i in 0..3 {
                for j in 0..3 {
                    prop_assert!((back[i][j] - k[i][j]).abs() < 1e-12);
                }
            }
        }
    }
}

//! Manufactured solution for the forced system.
//!
//! `g* = G₀ + tG₁ + ½t²G₂` and `Φ* = 1 + P(x) cos t` with `P = 0` on both
//! faces. `k*` and `v*` follow from `∂ₜg = −2Φk` and `v = Φ⁻¹∂ₜk`; the
//! sources absorb whatever the wave and lapse equations leave over.

use std::f64::consts::PI;

use crate::analytic::{dt_mat, values, JetMat};
use crate::boundary::{ExactBoundary, ExactPoint};
use crate::diagnostics::{l2_scalar, l2_tensor};
use crate::error::{Error, Result};
use crate::evolution::{e0v_point, phidot_rhs_point, Forcing, Sources, State};
use crate::geometry::{norm2_point, point_from_jet, point_geometry, PointGeometry, TensorDerivs};
use crate::grid::{Grid, GridSpec, ScalarField};
use crate::jet::Jet;
use crate::tensor::{Mat3, SYM_PAIRS, ZERO3};

/// Wavevector `(c₁, c₂, c₃)` and phase of each metric component, in the
/// order of `SYM_PAIRS`.
const MODES: [([f64; 3], f64); 6] = [
    ([1.0, 0.0, 1.0], 0.0),
    ([1.0, 1.0, 0.5], 2.0),
    ([0.0, 1.0, 1.3], 0.3),
    ([0.0, 1.0, -1.0], 1.0),
    ([2.0, 0.0, -1.0], 1.7),
    ([1.0, -1.0, 0.7], 0.5),
];

/// The manufactured solution on a collar of depth `l`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mms {
    pub l: f64,
}

/// Exact fields at a point as `(t, x)` jets.
pub struct MmsPoint {
    pub g: JetMat,
    pub k: JetMat,
    pub phi: Jet,
    pub phi_dot: Jet,
}

impl MmsPoint {
    pub fn v(&self) -> Mat3 {
        let kd = dt_mat(&self.k);
        kd.map(|r| r.map(|x| x / self.phi.v))
    }

    /// `∂ₜv = Φ⁻¹∂ₜ²k − Φ⁻²∂ₜΦ ∂ₜk`.
    pub fn v_dot(&self) -> Mat3 {
        let p = self.phi.v;
        std::array::from_fn(|i| {
            std::array::from_fn(|j| self.k[i][j].dtt() / p - self.k[i][j].dt() * self.phi.dt() / (p * p))
        })
    }
}

fn mode(x: &[Jet; 4], c: [f64; 3], phase: f64) -> Jet {
    (x[1] * c[0] + x[2] * c[1] + x[3] * c[2] + phase).sin()
}

impl Mms {
    pub fn new(x3_min: f64) -> Self {
        Mms { l: -x3_min }
    }

    pub fn point(&self, t: f64, x: [f64; 3]) -> MmsPoint {
        let xs = Jet::point(t, x);
        let tj = xs[0];
        let mut g = [[Jet::constant(0.0); 3]; 3];
        let mut gd = [[Jet::constant(0.0); 3]; 3];
        for (m, &(i, j)) in SYM_PAIRS.iter().enumerate() {
            let (c, ph) = MODES[m];
            let g0 = mode(&xs, c, ph) * 0.1;
            let g1 = mode(&xs, [c[1], c[0], -c[2]], ph + 0.9) * 0.05;
            let g2 = mode(&xs, [c[0], -c[1], c[2]], ph + 1.8) * 0.03;
            let diag = if i == j { 1.0 } else { 0.0 };
            g[i][j] = g0 + tj * g1 + tj * tj * g2 * 0.5 + diag;
            gd[i][j] = g1 + tj * g2;
            g[j][i] = g[i][j];
            gd[j][i] = gd[i][j];
        }
        let p = (xs[3] * (PI / self.l)).sin() * (xs[1].sin() * xs[2].cos() * 0.5 + 1.0) * 0.3;
        let phi = p * tj.cos() + 1.0;
        let phi_dot = p * tj.sin() * -1.0;
        let k = gd.map(|r| r.map(|x| x * -0.5 / phi));
        MmsPoint { g, k, phi, phi_dot }
    }

    pub fn exact(&self, t: f64, x: [f64; 3]) -> ExactPoint {
        let p = self.point(t, x);
        ExactPoint {
            g: TensorDerivs::from_jets(&p.g),
            k: TensorDerivs::from_jets(&p.k),
            g_dot: dt_mat(&p.g),
            k_dot: dt_mat(&p.k),
        }
    }

    pub fn boundary(&self) -> ExactBoundary<impl Fn(f64, [f64; 3]) -> ExactPoint> {
        let m = *self;
        ExactBoundary { fields: move |t, x| m.exact(t, x) }
    }

    /// The exact state at `t` on real nodes, lapse included.
    pub fn state(&self, grid: &Grid, t: f64) -> State {
        let g = grid.tensor_from_fn(|x| values(&self.point(t, x).g), false);
        let k = grid.tensor_from_fn(|x| values(&self.point(t, x).k), false);
        let v = grid.tensor_from_fn(|x| self.point(t, x).v(), false);
        let mut s = State::new(grid, t, g, k, v);
        s.phi = grid.scalar_from_fn(|x| self.point(t, x).phi.v);
        s.phi_dot = grid.scalar_from_fn(|x| self.point(t, x).phi_dot.v);
        s
    }

    /// `(s_v, s_Φ, s_Φ̇)` at one point.
    pub fn point_sources(&self, t: f64, x: [f64; 3]) -> Option<(Mat3, f64, f64)> {
        let p = self.point(t, x);
        let geo: PointGeometry = point_geometry(&TensorDerivs::from_jets(&p.g))?;
        let kd = TensorDerivs::from_jets(&p.k);
        let v = p.v();
        let phi = point_from_jet(&p.phi);
        let phid = point_from_jet(&p.phi_dot);
        let e = e0v_point(&geo, &kd, &v, &phi, &phid);
        let vd = p.v_dot();
        let mut sv = ZERO3;
        for i in 0..3 {
            for j in 0..3 {
                sv[i][j] = vd[i][j] - phi.v * e[i][j];
            }
        }
        let c = norm2_point(&geo.ginv, &kd.v);
        let s_phi = geo.laplace_scalar(&phi) - c * phi.v;
        let s_phid = geo.laplace_scalar(&phid) - c * phid.v - phidot_rhs_point(&geo, &kd, &v, &phi);
        Some((sv, s_phi, s_phid))
    }
}

impl Forcing for Mms {
    fn sources(&self, grid: &Grid, t: f64) -> Result<Sources> {
        let mut out = Sources { v: grid.tensor(), phi: grid.scalar(), phi_dot: grid.scalar() };
        for (i1, i2, i3) in grid.real_nodes() {
            let (sv, sp, spd) =
                self.point_sources(t, grid.coords(i1, i2, i3)).ok_or(Error::DegenerateMetric(i1, i2, i3))?;
            out.v.set_mat(grid, i1, i2, i3, &sv);
            out.phi.set(grid, i1, i2, i3, sp);
            out.phi_dot.set(grid, i1, i2, i3, spd);
        }
        Ok(out)
    }
}

/// Grids of the convergence study: `n×n×(n/2+1)` on a collar of depth π.
pub fn mms_grid_spec(n: usize) -> GridSpec {
    GridSpec { n1: n, n2: n, n3: n / 2 + 1, x3_min: -PI, ..GridSpec::default() }
}

/// L² errors of `(g, k, Φ)` against the exact solution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MmsErrors {
    pub g: f64,
    pub k: f64,
    pub phi: f64,
}

pub fn mms_errors(grid: &Grid, s: &State, mms: &Mms) -> Result<MmsErrors> {
    let exact = mms.state(grid, s.t);
    let mut dg = s.g.clone();
    dg.axpy(-1.0, &exact.g);
    let mut dk = s.k.clone();
    dk.axpy(-1.0, &exact.k);
    let mut dp: ScalarField = s.phi.clone();
    dp.axpy(-1.0, &exact.phi);
    Ok(MmsErrors {
        g: l2_tensor(grid, &exact.g, &dg)?,
        k: l2_tensor(grid, &exact.g, &dk)?,
        phi: l2_scalar(grid, &exact.g, &dp)?,
    })
}

//! Seeded smooth closed-form states `(g, k)` on the collar. They do not solve
//! anything; they exercise identities and boundary operators on generic,
//! non-symmetric data with exact derivatives.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::boundary::ExactPoint;
use crate::geometry::TensorDerivs;
use crate::grid::{Grid, SymTensorField};
use crate::jet::Jet;
use crate::tensor::Mat3;

#[derive(Clone, Debug, PartialEq)]
pub struct AnalyticState {
    a: [f64; 12],
}

pub type JetMat = [[Jet; 3]; 3];

impl AnalyticState {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AnalyticState { a: std::array::from_fn(|_| rng.gen_range(-1.0..1.0)) }
    }

    /// Metric and `k` as jets in `(t, x)`. Both are 2π-periodic in `x¹, x²`;
    /// the random coefficients enter as phases and normal wavenumbers.
    pub fn fields(&self, t: f64, x: [f64; 3]) -> (JetMat, JetMat) {
        let [t, x1, x2, x3] = Jet::point(t, x);
        let a = &self.a;
        let s = |c: f64, u: Jet| (u + 3.0 * c).sin() * 0.1;
        let one = Jet::constant(1.0);
        let mut g = [[Jet::constant(0.0); 3]; 3];
        g[0][0] = one + s(a[0], x1 + x3 * 0.7 + t * 0.3);
        g[1][1] = one + s(a[1], x2 - x3 + t * 0.2);
        g[2][2] = one + s(a[2], x1 + x2 + x3 - t * 0.4);
        g[0][1] = s(a[3], x1 - x2 + x3 + t);
        g[0][2] = s(a[4], x2 + x3 * 1.3 + t * 0.8);
        g[1][2] = s(a[5], x1 * 2.0 - x3 - t);
        let mut k = [[Jet::constant(0.0); 3]; 3];
        k[0][0] = (x1 + x3 * a[6] + t).cos() * 0.3;
        k[1][1] = (x2 * 2.0 - x3 * a[7]).sin() * 0.3;
        k[2][2] = (x1 + x2 + x3 * a[8] - t).cos() * 0.2;
        k[0][1] = (x1 - x3 * a[9]).sin() * 0.2;
        k[0][2] = (x2 + x3 * a[10] + t * 0.5).cos() * 0.2;
        k[1][2] = (x1 * 2.0 + x2 + x3 * a[11]).sin() * 0.2;
        for i in 0..3 {
            for j in 0..i {
                g[i][j] = g[j][i];
                k[i][j] = k[j][i];
            }
        }
        (g, k)
    }

    pub fn exact(&self, t: f64, x: [f64; 3]) -> ExactPoint {
        let (g, k) = self.fields(t, x);
        ExactPoint { g: TensorDerivs::from_jets(&g), k: TensorDerivs::from_jets(&k), g_dot: dt_mat(&g), k_dot: dt_mat(&k) }
    }

    /// The metric of [`Self::fields`] with `k = −½∂ₜg`, so that `∂ₜg = −2k`
    /// as for a unit lapse.
    pub fn consistent(&self, t: f64, x: [f64; 3]) -> ExactPoint {
        let (g, _) = self.fields(t, x);
        let mut p = ExactPoint { g: TensorDerivs::from_jets(&g), ..ExactPoint::default() };
        for i in 0..3 {
            for j in 0..3 {
                p.g_dot[i][j] = g[i][j].dt();
                p.k.v[i][j] = -0.5 * g[i][j].dt();
                p.k_dot[i][j] = -0.5 * g[i][j].dtt();
                for a in 0..3 {
                    p.k.d[a][i][j] = -0.5 * g[i][j].dt_grad()[a];
                }
            }
        }
        p
    }

    /// `(g, k, v)` at `t = 0` with `v = ∂ₜk`. With `with_ghosts` every ghost
    /// layer holds exact values too.
    pub fn sample(&self, grid: &Grid, with_ghosts: bool) -> (SymTensorField, SymTensorField, SymTensorField) {
        let g = grid.tensor_from_fn(|x| values(&self.fields(0.0, x).0), with_ghosts);
        let k = grid.tensor_from_fn(|x| values(&self.fields(0.0, x).1), with_ghosts);
        let v = grid.tensor_from_fn(|x| dt_mat(&self.fields(0.0, x).1), with_ghosts);
        (g, k, v)
    }
}

pub fn values(m: &JetMat) -> Mat3 {
    std::array::from_fn(|i| std::array::from_fn(|j| m[i][j].v))
}

pub fn dt_mat(m: &JetMat) -> Mat3 {
    std::array::from_fn(|i| std::array::from_fn(|j| m[i][j].dt()))
}

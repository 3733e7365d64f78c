//! Second-order forward-mode jets in the four spacetime coordinates
//! `(t, x¹, x², x³)`.
//!
//! Closed-form fields (manufactured solutions, analytic test states, the
//! curvature oracle) are written once against [`Jet`] and yield exact values,
//! gradients and Hessians at a point.

use std::ops::{Add, Div, Mul, Neg, Sub};

pub const NVAR: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet {
    pub v: f64,
    pub d: [f64; NVAR],
    pub dd: [[f64; NVAR]; NVAR],
}

impl Jet {
    pub const fn constant(v: f64) -> Self {
        Jet { v, d: [0.0; NVAR], dd: [[0.0; NVAR]; NVAR] }
    }

    /// The independent variable with index `i` evaluated at `v`.
    pub fn variable(i: usize, v: f64) -> Self {
        let mut j = Jet::constant(v);
        j.d[i] = 1.0;
        j
    }

    /// Seeds `(t, x¹, x², x³)` at a point.
    pub fn point(t: f64, x: [f64; 3]) -> [Jet; NVAR] {
        [
            Jet::variable(0, t),
            Jet::variable(1, x[0]),
            Jet::variable(2, x[1]),
            Jet::variable(3, x[2]),
        ]
    }

    /// Applies a scalar function given its value and first two derivatives
    /// at `self.v`.
    #[inline]
    fn chain(self, f: f64, f1: f64, f2: f64) -> Self {
        let mut r = Jet::constant(f);
        for a in 0..NVAR {
            r.d[a] = f1 * self.d[a];
            for b in 0..NVAR {
                r.dd[a][b] = f1 * self.dd[a][b] + f2 * self.d[a] * self.d[b];
            }
        }
        r
    }

    pub fn sin(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(s, c, -s)
    }

    pub fn cos(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(c, -s, -c)
    }

    pub fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e, e)
    }

    pub fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, 0.5 / s, -0.25 / (s * self.v))
    }

    pub fn recip(self) -> Self {
        let r = 1.0 / self.v;
        self.chain(r, -r * r, 2.0 * r * r * r)
    }

    pub fn powi(self, n: i32) -> Self {
        let nf = n as f64;
        self.chain(
            self.v.powi(n),
            nf * self.v.powi(n - 1),
            nf * (nf - 1.0) * self.v.powi(n - 2),
        )
    }

    pub fn scale(self, s: f64) -> Self {
        let mut r = self;
        r.v *= s;
        for a in 0..NVAR {
            r.d[a] *= s;
            for b in 0..NVAR {
                r.dd[a][b] *= s;
            }
        }
        r
    }

    /// Spatial gradient `(∂₁, ∂₂, ∂₃)`.
    pub fn grad(&self) -> [f64; 3] {
        [self.d[1], self.d[2], self.d[3]]
    }

    /// Spatial Hessian.
    pub fn hess(&self) -> [[f64; 3]; 3] {
        let mut h = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                h[a][b] = self.dd[a + 1][b + 1];
            }
        }
        h
    }

    pub fn dt(&self) -> f64 {
        self.d[0]
    }

    pub fn dtt(&self) -> f64 {
        self.dd[0][0]
    }

    /// `∂ₜ∂ᵢ` for the spatial directions.
    pub fn dt_grad(&self) -> [f64; 3] {
        [self.dd[0][1], self.dd[0][2], self.dd[0][3]]
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(mut self, o: Jet) -> Jet {
        self.v += o.v;
        for a in 0..NVAR {
            self.d[a] += o.d[a];
            for b in 0..NVAR {
                self.dd[a][b] += o.dd[a][b];
            }
        }
        self
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, o: Jet) -> Jet {
        self + (-o)
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, o: Jet) -> Jet {
        let mut r = Jet::constant(self.v * o.v);
        for a in 0..NVAR {
            r.d[a] = self.d[a] * o.v + self.v * o.d[a];
            for b in 0..NVAR {
                r.dd[a][b] = self.dd[a][b] * o.v
                    + self.d[a] * o.d[b]
                    + self.d[b] * o.d[a]
                    + self.v * o.dd[a][b];
            }
        }
        r
    }
}

impl Div for Jet {
    type Output = Jet;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, o: Jet) -> Jet {
        self * o.recip()
    }
}

impl Add<f64> for Jet {
    type Output = Jet;
    fn add(mut self, c: f64) -> Jet {
        self.v += c;
        self
    }
}

impl Sub<f64> for Jet {
    type Output = Jet;
    fn sub(mut self, c: f64) -> Jet {
        self.v -= c;
        self
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(self, c: f64) -> Jet {
        self.scale(c)
    }
}

impl Mul<Jet> for f64 {
    type Output = Jet;
    fn mul(self, j: Jet) -> Jet {
        j.scale(self)
    }
}

impl Add<Jet> for f64 {
    type Output = Jet;
    fn add(self, j: Jet) -> Jet {
        j + self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(f: impl Fn([Jet; 4]) -> Jet, p: [f64; 4]) {
        let j = f(Jet::point(p[0], [p[1], p[2], p[3]]));
        let eval = |q: [f64; 4]| f(Jet::point(q[0], [q[1], q[2], q[3]])).v;
        let h = 1e-4;
        for a in 0..4 {
            let mut pp = p;
            let mut pm = p;
            pp[a] += h;
            pm[a] -= h;
            let d = (eval(pp) - eval(pm)) / (2.0 * h);
            assert!((d - j.d[a]).abs() < 1e-7, "d{a}: {d} vs {}", j.d[a]);
            for b in 0..4 {
                let mut pp = p;
                let mut pm = p;
                pp[b] += h;
                pm[b] -= h;
                let fp = f(Jet::point(pp[0], [pp[1], pp[2], pp[3]])).d[a];
                let fm = f(Jet::point(pm[0], [pm[1], pm[2], pm[3]])).d[a];
                let dd = (fp - fm) / (2.0 * h);
                assert!((dd - j.dd[a][b]).abs() < 1e-6, "dd{a}{b}");
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        fd_check(
            |x| (x[1] * x[0]).sin() * (x[3].exp() + x[2].cos()) / (x[2] * x[2] + 2.0),
            [0.3, 0.7, -0.4, -0.2],
        );
        fd_check(|x| (x[1] * x[1] + x[3] + 3.0).sqrt().powi(3), [0.1, 0.2, 0.3, -0.5]);
    }
}

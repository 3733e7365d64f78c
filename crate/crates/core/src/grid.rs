//! Node-centred collar grid `T² × [x³_min, 0]` and its finite-difference
//! calculus.
//!
//! Tangential directions are periodic without a duplicated seam point. The
//! normal direction has nodes on both faces plus `ghost` extra layers beyond
//! each face. Ghost entries start out as NaN so that reading an unfilled ghost
//! poisons the result instead of silently using stale data.

use crate::error::{Error, Result};
use crate::tensor::{Mat2, Mat3, SYM_PAIRS};
use std::f64::consts::PI;

/// Ghost width required by the derivative-of-derived-field diagnostics.
pub const MIN_GHOST: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub n1: usize,
    pub n2: usize,
    pub n3: usize,
    pub x3_min: f64,
    pub ghost: usize,
    pub period1: f64,
    pub period2: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { n1: 16, n2: 16, n3: 16, x3_min: -1.0, ghost: 2, period1: 2.0 * PI, period2: 2.0 * PI }
    }
}

/// One of the two collar faces.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Face {
    /// `x³ = x³_min`, the artificial inner boundary.
    Inner,
    /// `x³ = 0`, the physical timelike boundary.
    Outer,
}

impl Face {
    pub const BOTH: [Face; 2] = [Face::Inner, Face::Outer];

    /// Sign of the outward normal relative to `+∂₃`.
    pub fn sign(self) -> f64 {
        match self {
            Face::Inner => -1.0,
            Face::Outer => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Face::Inner => "inner",
            Face::Outer => "outer",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub spec: GridSpec,
    pub n1: usize,
    pub n2: usize,
    pub n3: usize,
    pub ghost: usize,
    pub h: [f64; 3],
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub x3: Vec<f64>,
}

pub fn make_grid(spec: GridSpec) -> Result<Grid> {
    if spec.n1 < 4 || spec.n2 < 4 || spec.n3 < 4 {
        return Err(Error::Grid(format!(
            "point counts must be at least 4, got ({}, {}, {})",
            spec.n1, spec.n2, spec.n3
        )));
    }
    if !(spec.x3_min < 0.0) || !spec.x3_min.is_finite() {
        return Err(Error::Grid(format!("x3_min must be negative, got {}", spec.x3_min)));
    }
    if !(spec.period1 > 0.0 && spec.period2 > 0.0) {
        return Err(Error::Grid("tangential periods must be positive".into()));
    }
    if spec.ghost < MIN_GHOST {
        return Err(Error::Grid(format!(
            "ghost width {} is below the stencil half-width {}",
            spec.ghost, MIN_GHOST
        )));
    }
    let h1 = spec.period1 / spec.n1 as f64;
    let h2 = spec.period2 / spec.n2 as f64;
    let h3 = -spec.x3_min / (spec.n3 - 1) as f64;
    let x1 = (0..spec.n1).map(|i| i as f64 * h1).collect();
    let x2 = (0..spec.n2).map(|i| i as f64 * h2).collect();
    let x3 = (0..spec.n3)
        .map(|i| if i + 1 == spec.n3 { 0.0 } else { spec.x3_min + i as f64 * h3 })
        .collect();
    Ok(Grid {
        n1: spec.n1,
        n2: spec.n2,
        n3: spec.n3,
        ghost: spec.ghost,
        h: [h1, h2, h3],
        x1,
        x2,
        x3,
        spec,
    })
}

impl Grid {
    pub fn h_min(&self) -> f64 {
        self.h[0].min(self.h[1]).min(self.h[2])
    }

    /// Coordinates of node `(i1, i2, i3)`; `i3` may address a ghost layer.
    #[inline]
    pub fn coords(&self, i1: usize, i2: usize, i3: isize) -> [f64; 3] {
        let x3 = if i3 == self.n3 as isize - 1 {
            0.0
        } else {
            self.spec.x3_min + i3 as f64 * self.h[2]
        };
        [self.x1[i1], self.x2[i2], x3]
    }

    pub fn face_index(&self, face: Face) -> isize {
        match face {
            Face::Inner => 0,
            Face::Outer => self.n3 as isize - 1,
        }
    }

    /// Total stored layers in the normal direction.
    #[inline]
    pub fn n3_total(&self) -> usize {
        self.n3 + 2 * self.ghost
    }

    pub fn num_real(&self) -> usize {
        self.n1 * self.n2 * self.n3
    }

    /// Storage index of the `i3 = 0` entry of column `(i1, i2)`.
    #[inline]
    pub fn column(&self, i1: usize, i2: usize) -> usize {
        (i1 * self.n2 + i2) * self.n3_total() + self.ghost
    }

    #[inline]
    pub fn index(&self, i1: usize, i2: usize, i3: isize) -> usize {
        (self.column(i1, i2) as isize + i3) as usize
    }

    /// Column bases of the 3×3 tangential neighbourhood of `(i1, i2)` with
    /// periodic wrap; `cols[a][b]` is column `(i1 + a − 1, i2 + b − 1)`.
    #[inline]
    pub fn neighbourhood(&self, i1: usize, i2: usize) -> Columns {
        let im = (i1 + self.n1 - 1) % self.n1;
        let ip = (i1 + 1) % self.n1;
        let jm = (i2 + self.n2 - 1) % self.n2;
        let jp = (i2 + 1) % self.n2;
        let r = [im, i1, ip];
        let c = [jm, i2, jp];
        let mut cols = [[0usize; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                cols[a][b] = self.column(r[a], c[b]);
            }
        }
        Columns { cols }
    }

    pub fn scalar(&self) -> ScalarField {
        ScalarField::new(self)
    }

    pub fn scalar_from_fn(&self, f: impl Fn([f64; 3]) -> f64) -> ScalarField {
        let mut s = self.scalar();
        for (i1, i2, i3) in self.real_nodes() {
            s.set(self, i1, i2, i3, f(self.coords(i1, i2, i3)));
        }
        s
    }

    /// Like [`Grid::scalar_from_fn`] but also evaluates on every ghost layer.
    pub fn scalar_from_fn_with_ghosts(&self, f: impl Fn([f64; 3]) -> f64) -> ScalarField {
        let mut s = self.scalar();
        let g = self.ghost as isize;
        for i1 in 0..self.n1 {
            for i2 in 0..self.n2 {
                for i3 in -g..self.n3 as isize + g {
                    s.set(self, i1, i2, i3, f(self.coords(i1, i2, i3)));
                }
            }
        }
        s
    }

    pub fn tensor(&self) -> SymTensorField {
        SymTensorField { c: std::array::from_fn(|_| self.scalar()) }
    }

    pub fn tensor_from_fn(&self, f: impl Fn([f64; 3]) -> Mat3, with_ghosts: bool) -> SymTensorField {
        let mut t = self.tensor();
        let g = if with_ghosts { self.ghost as isize } else { 0 };
        for i1 in 0..self.n1 {
            for i2 in 0..self.n2 {
                for i3 in -g..self.n3 as isize + g {
                    let m = f(self.coords(i1, i2, i3));
                    t.set_mat(self, i1, i2, i3, &m);
                }
            }
        }
        t
    }

    /// Iterator over real (non-ghost) nodes in storage order.
    pub fn real_nodes(&self) -> impl Iterator<Item = (usize, usize, isize)> + '_ {
        (0..self.n1).flat_map(move |i1| {
            (0..self.n2).flat_map(move |i2| (0..self.n3 as isize).map(move |i3| (i1, i2, i3)))
        })
    }

    /// Trapezoid weight of normal layer `i3`.
    #[inline]
    pub fn weight3(&self, i3: isize) -> f64 {
        if i3 == 0 || i3 == self.n3 as isize - 1 {
            0.5
        } else {
            1.0
        }
    }

    pub fn cell_volume(&self) -> f64 {
        self.h[0] * self.h[1] * self.h[2]
    }

    pub fn face_area_element(&self) -> f64 {
        self.h[0] * self.h[1]
    }
}

/// Tangential neighbourhood column bases; see [`Grid::neighbourhood`].
#[derive(Clone, Copy, Debug)]
pub struct Columns {
    pub cols: [[usize; 3]; 3],
}

/// Value, gradient and Hessian of a scalar at one node.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PointDerivs {
    pub v: f64,
    pub d: [f64; 3],
    pub dd: Mat3,
}

impl Columns {
    #[inline]
    pub fn value(&self, f: &[f64], i3: isize) -> f64 {
        f[(self.cols[1][1] as isize + i3) as usize]
    }

    /// Gradient by centred differences.
    #[inline]
    pub fn first(&self, f: &[f64], i3: isize, h: &[f64; 3]) -> [f64; 3] {
        let at = |c: usize, o: isize| f[(c as isize + i3 + o) as usize];
        let c = &self.cols;
        [
            (at(c[2][1], 0) - at(c[0][1], 0)) / (2.0 * h[0]),
            (at(c[1][2], 0) - at(c[1][0], 0)) / (2.0 * h[1]),
            (at(c[1][1], 1) - at(c[1][1], -1)) / (2.0 * h[2]),
        ]
    }

    /// Value, gradient and Hessian: compact three-point second differences on
    /// the diagonal, products of centred differences off the diagonal.
    #[inline]
    pub fn second(&self, f: &[f64], i3: isize, h: &[f64; 3]) -> PointDerivs {
        let at = |c: usize, o: isize| f[(c as isize + i3 + o) as usize];
        let c = &self.cols;
        let f0 = at(c[1][1], 0);
        let d = self.first(f, i3, h);
        let d11 = (at(c[2][1], 0) - 2.0 * f0 + at(c[0][1], 0)) / (h[0] * h[0]);
        let d22 = (at(c[1][2], 0) - 2.0 * f0 + at(c[1][0], 0)) / (h[1] * h[1]);
        let d33 = (at(c[1][1], 1) - 2.0 * f0 + at(c[1][1], -1)) / (h[2] * h[2]);
        let d12 = (at(c[2][2], 0) - at(c[2][0], 0) - at(c[0][2], 0) + at(c[0][0], 0)) / (4.0 * h[0] * h[1]);
        let d13 = (at(c[2][1], 1) - at(c[2][1], -1) - at(c[0][1], 1) + at(c[0][1], -1)) / (4.0 * h[0] * h[2]);
        let d23 = (at(c[1][2], 1) - at(c[1][2], -1) - at(c[1][0], 1) + at(c[1][0], -1)) / (4.0 * h[1] * h[2]);
        PointDerivs { v: f0, d, dd: [[d11, d12, d13], [d12, d22, d23], [d13, d23, d33]] }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    pub data: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: &Grid) -> Self {
        let mut data = vec![f64::NAN; grid.n1 * grid.n2 * grid.n3_total()];
        for (i1, i2, i3) in grid.real_nodes() {
            data[grid.index(i1, i2, i3)] = 0.0;
        }
        ScalarField { data }
    }

    #[inline]
    pub fn get(&self, grid: &Grid, i1: usize, i2: usize, i3: isize) -> f64 {
        self.data[grid.index(i1, i2, i3)]
    }

    #[inline]
    pub fn set(&mut self, grid: &Grid, i1: usize, i2: usize, i3: isize, v: f64) {
        let i = grid.index(i1, i2, i3);
        self.data[i] = v;
    }

    /// Marks every ghost entry as unfilled.
    pub fn invalidate_ghosts(&mut self, grid: &Grid) {
        let g = grid.ghost as isize;
        for i1 in 0..grid.n1 {
            for i2 in 0..grid.n2 {
                for l in 1..=g {
                    let a = grid.index(i1, i2, -l);
                    let b = grid.index(i1, i2, grid.n3 as isize - 1 + l);
                    self.data[a] = f64::NAN;
                    self.data[b] = f64::NAN;
                }
            }
        }
    }

    /// True when the first `layers` ghost layers on both sides are finite.
    pub fn ghosts_filled(&self, grid: &Grid, layers: usize) -> bool {
        let l = layers as isize;
        (0..grid.n1).all(|i1| {
            (0..grid.n2).all(|i2| {
                (1..=l).all(|m| {
                    self.get(grid, i1, i2, -m).is_finite()
                        && self.get(grid, i1, i2, grid.n3 as isize - 1 + m).is_finite()
                })
            })
        })
    }

    /// Fills ghost layers by cubic extrapolation from the four nodes nearest
    /// each face.
    pub fn extrapolate_ghosts(&mut self, grid: &Grid) {
        for l in 1..=grid.ghost {
            self.extrapolate_ghost_layer(grid, l);
        }
    }

    /// Cubic extrapolation of ghost layer `l` from layers `l−1 … l−4` inward.
    pub fn extrapolate_ghost_layer(&mut self, grid: &Grid, l: usize) {
        let n3 = grid.n3 as isize;
        let l = l as isize;
        for i1 in 0..grid.n1 {
            for i2 in 0..grid.n2 {
                let c = grid.column(i1, i2) as isize;
                let at = |d: &Vec<f64>, i: isize| d[(c + i) as usize];
                let lo = 4.0 * at(&self.data, 1 - l) - 6.0 * at(&self.data, 2 - l) + 4.0 * at(&self.data, 3 - l)
                    - at(&self.data, 4 - l);
                let top = n3 - 1 + l;
                let hi = 4.0 * at(&self.data, top - 1) - 6.0 * at(&self.data, top - 2)
                    + 4.0 * at(&self.data, top - 3)
                    - at(&self.data, top - 4);
                self.data[(c - l) as usize] = lo;
                self.data[(c + top) as usize] = hi;
            }
        }
    }

    /// Largest absolute value over real nodes.
    pub fn max_abs(&self, grid: &Grid) -> f64 {
        grid.real_nodes().map(|(a, b, c)| self.get(grid, a, b, c).abs()).fold(0.0, f64::max)
    }

    /// First non-finite real node, if any.
    pub fn find_non_finite(&self, grid: &Grid) -> Option<(usize, usize, isize)> {
        grid.real_nodes().find(|&(a, b, c)| !self.get(grid, a, b, c).is_finite())
    }

    pub fn check_finite(&self, grid: &Grid, name: &str) -> Result<()> {
        match self.find_non_finite(grid) {
            None => Ok(()),
            Some((i1, i2, i3)) => Err(Error::NonFinite { field: name.to_string(), i1, i2, i3 }),
        }
    }

    /// `self += a·other` on every stored entry.
    pub fn axpy(&mut self, a: f64, other: &ScalarField) {
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += a * y;
        }
    }

    pub fn scaled(&self, a: f64) -> ScalarField {
        ScalarField { data: self.data.iter().map(|x| a * x).collect() }
    }

    /// Extracts the real-node values in row-major `(i1, i2, i3)` order.
    pub fn real_values(&self, grid: &Grid) -> Vec<f64> {
        grid.real_nodes().map(|(a, b, c)| self.get(grid, a, b, c)).collect()
    }
}

/// Symmetric 3×3 tensor field; components stored in [`SYM_PAIRS`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct SymTensorField {
    pub c: [ScalarField; 6],
}

impl SymTensorField {
    #[inline]
    pub fn comp(&self, i: usize, j: usize) -> &ScalarField {
        &self.c[crate::tensor::sym_index(i, j)]
    }

    #[inline]
    pub fn comp_mut(&mut self, i: usize, j: usize) -> &mut ScalarField {
        &mut self.c[crate::tensor::sym_index(i, j)]
    }

    #[inline]
    pub fn get_mat_at(&self, idx: usize) -> Mat3 {
        let c = |n: usize| self.c[n].data[idx];
        [[c(0), c(1), c(2)], [c(1), c(3), c(4)], [c(2), c(4), c(5)]]
    }

    #[inline]
    pub fn get_mat(&self, grid: &Grid, i1: usize, i2: usize, i3: isize) -> Mat3 {
        self.get_mat_at(grid.index(i1, i2, i3))
    }

    /// Stores the symmetric part of `m`.
    #[inline]
    pub fn set_mat_at(&mut self, idx: usize, m: &Mat3) {
        for (n, &(i, j)) in SYM_PAIRS.iter().enumerate() {
            self.c[n].data[idx] = 0.5 * (m[i][j] + m[j][i]);
        }
    }

    #[inline]
    pub fn set_mat(&mut self, grid: &Grid, i1: usize, i2: usize, i3: isize, m: &Mat3) {
        self.set_mat_at(grid.index(i1, i2, i3), m);
    }

    pub fn invalidate_ghosts(&mut self, grid: &Grid) {
        for c in &mut self.c {
            c.invalidate_ghosts(grid);
        }
    }

    pub fn extrapolate_ghosts(&mut self, grid: &Grid) {
        for c in &mut self.c {
            c.extrapolate_ghosts(grid);
        }
    }

    pub fn ghosts_filled(&self, grid: &Grid, layers: usize) -> bool {
        self.c.iter().all(|c| c.ghosts_filled(grid, layers))
    }

    pub fn axpy(&mut self, a: f64, other: &SymTensorField) {
        for (x, y) in self.c.iter_mut().zip(&other.c) {
            x.axpy(a, y);
        }
    }

    pub fn scaled(&self, a: f64) -> SymTensorField {
        SymTensorField { c: std::array::from_fn(|n| self.c[n].scaled(a)) }
    }

    /// Max over real nodes of the largest component magnitude.
    pub fn max_abs(&self, grid: &Grid) -> f64 {
        self.c.iter().map(|c| c.max_abs(grid)).fold(0.0, f64::max)
    }

    pub fn check_finite(&self, grid: &Grid, name: &str) -> Result<()> {
        for (n, c) in self.c.iter().enumerate() {
            let (i, j) = SYM_PAIRS[n];
            c.check_finite(grid, &format!("{name}_{}{}", i + 1, j + 1))?;
        }
        Ok(())
    }
}

/// Per-node data on one face, row-major in `(i1, i2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceField<T> {
    pub n1: usize,
    pub n2: usize,
    pub data: Vec<T>,
}

impl<T: Copy> FaceField<T> {
    pub fn from_fn(grid: &Grid, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(grid.n1 * grid.n2);
        for i1 in 0..grid.n1 {
            for i2 in 0..grid.n2 {
                data.push(f(i1, i2));
            }
        }
        FaceField { n1: grid.n1, n2: grid.n2, data }
    }

    #[inline]
    pub fn get(&self, i1: usize, i2: usize) -> T {
        self.data[i1 * self.n2 + i2]
    }
}

/// Centred difference along periodic direction `dir` ∈ {1, 2}; evaluated on
/// every stored layer (ghost layers stay NaN if unfilled).
pub fn d_tan(grid: &Grid, f: &ScalarField, dir: usize) -> Result<ScalarField> {
    if dir != 1 && dir != 2 {
        return Err(Error::Grid(format!("tangential direction must be 1 or 2, got {dir}")));
    }
    let mut out = f.clone();
    let nt = grid.n3_total() as isize;
    let h = grid.h[dir - 1];
    for i1 in 0..grid.n1 {
        for i2 in 0..grid.n2 {
            let nb = grid.neighbourhood(i1, i2);
            let (p, m) = if dir == 1 { (nb.cols[2][1], nb.cols[0][1]) } else { (nb.cols[1][2], nb.cols[1][0]) };
            let c = nb.cols[1][1];
            for o in -(grid.ghost as isize)..nt - grid.ghost as isize {
                let at = |b: usize| f.data[(b as isize + o) as usize];
                out.data[(c as isize + o) as usize] = (at(p) - at(m)) / (2.0 * h);
            }
        }
    }
    Ok(out)
}

/// Centred difference in `x³` on real nodes; face nodes read the first ghost
/// layer. Ghost entries of the result are unfilled.
pub fn d_norm(grid: &Grid, f: &ScalarField) -> Result<ScalarField> {
    let mut out = grid.scalar();
    let h = grid.h[2];
    for (i1, i2, i3) in grid.real_nodes() {
        let i = grid.index(i1, i2, i3);
        let v = (f.data[i + 1] - f.data[i - 1]) / (2.0 * h);
        if !v.is_finite() {
            return Err(Error::UnfilledGhost(format!("d_norm input at ({i1},{i2},{i3})")));
        }
        out.data[i] = v;
    }
    Ok(out)
}

/// `∫ f dvol_g`: trapezoid in `x³`, periodic rectangle rule tangentially.
pub fn integrate_volume(grid: &Grid, f: &ScalarField, g: &SymTensorField) -> Result<f64> {
    let mut sum = 0.0;
    for (i1, i2, i3) in grid.real_nodes() {
        let idx = grid.index(i1, i2, i3);
        let det = crate::tensor::det3(&g.get_mat_at(idx));
        if !(det > 0.0) {
            return Err(Error::DegenerateMetric(i1, i2, i3));
        }
        sum += grid.weight3(i3) * f.data[idx] * det.sqrt();
    }
    Ok(sum * grid.cell_volume())
}

/// `∫ f dA_q` over one face.
pub fn integrate_boundary(grid: &Grid, f: &FaceField<f64>, q: &FaceField<Mat2>) -> Result<f64> {
    let mut sum = 0.0;
    for (n, (&fv, qm)) in f.data.iter().zip(&q.data).enumerate() {
        let det = crate::tensor::det2(qm);
        if !(det > 0.0) {
            return Err(Error::Numeric(format!(
                "non-positive boundary metric determinant at face node ({}, {})",
                n / f.n2,
                n % f.n2
            )));
        }
        sum += fv * det.sqrt();
    }
    Ok(sum * grid.face_area_element())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(n1: usize, n2: usize, n3: usize) -> Grid {
        make_grid(GridSpec { n1, n2, n3, ..GridSpec::default() }).unwrap()
    }

    fn flat(g: &Grid, scale: f64) -> SymTensorField {
        g.tensor_from_fn(|_| [[scale, 0.0, 0.0], [0.0, scale, 0.0], [0.0, 0.0, scale]], true)
    }

    #[test]
    fn spacings_and_coordinates() {
        let g = grid(8, 8, 8);
        assert!((g.h[2] - 1.0 / 7.0).abs() < 1e-15);
        let g = grid(4, 4, 4);
        assert!((g.h[0] - PI / 2.0).abs() < 1e-15);
        for (i, x) in g.x1.iter().enumerate() {
            assert!((x - i as f64 * PI / 2.0).abs() < 1e-15);
        }
        assert_eq!(g.x3[0], -1.0);
        assert_eq!(g.x3[3], 0.0);
    }

    #[test]
    fn rejects_bad_specs() {
        let bad = |s: GridSpec| make_grid(s).is_err();
        assert!(bad(GridSpec { ghost: 1, ..GridSpec::default() }));
        assert!(bad(GridSpec { n1: 3, ..GridSpec::default() }));
        assert!(bad(GridSpec { x3_min: 0.0, ..GridSpec::default() }));
        assert!(bad(GridSpec { period2: -1.0, ..GridSpec::default() }));
    }

    #[test]
    fn d_tan_of_sine_is_discrete_symbol() {
        let g = grid(12, 6, 5);
        let f = g.scalar_from_fn_with_ghosts(|x| x[0].sin());
        let d = d_tan(&g, &f, 1).unwrap();
        let h = g.h[0];
        for (i1, i2, i3) in g.real_nodes() {
            let expect = g.x1[i1].cos() * h.sin() / h;
            assert!((d.get(&g, i1, i2, i3) - expect).abs() < 1e-14);
        }
        let d2 = d_tan(&g, &f, 2).unwrap();
        assert!(d2.max_abs(&g) < 1e-14);
        assert!(d_tan(&g, &f, 3).is_err());
    }

    #[test]
    fn d_norm_cubic_truncation() {
        let g = grid(4, 4, 9);
        let f = g.scalar_from_fn_with_ghosts(|x| x[2].powi(3));
        let d = d_norm(&g, &f).unwrap();
        let h = g.h[2];
        for (i1, i2, i3) in g.real_nodes() {
            let x = g.coords(i1, i2, i3)[2];
            let expect = 3.0 * x * x + h * h;
            assert!((d.get(&g, i1, i2, i3) - expect).abs() < 1e-13, "{} {}", d.get(&g, i1, i2, i3), expect);
        }
        let lin = g.scalar_from_fn_with_ghosts(|x| x[2]);
        let d = d_norm(&g, &lin).unwrap();
        for (a, b, c) in g.real_nodes() {
            assert!((d.get(&g, a, b, c) - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn d_norm_detects_unfilled_ghosts() {
        let g = grid(4, 4, 5);
        let f = g.scalar_from_fn(|x| x[2]);
        assert!(matches!(d_norm(&g, &f), Err(Error::UnfilledGhost(_))));
    }

    #[test]
    fn d_norm_richardson_ratio() {
        let err = |n3: usize| {
            let g = grid(4, 4, n3);
            let f = g.scalar_from_fn_with_ghosts(|x| (2.0 * x[2]).sin() + x[2].exp());
            let d = d_norm(&g, &f).unwrap();
            g.real_nodes()
                .map(|(a, b, c)| {
                    let x = g.coords(a, b, c)[2];
                    (d.get(&g, a, b, c) - 2.0 * (2.0 * x).cos() - x.exp()).abs()
                })
                .fold(0.0, f64::max)
        };
        let ratio = err(17) / err(33);
        assert!((ratio - 4.0).abs() < 0.4, "ratio {ratio}");
    }

    #[test]
    fn volume_integrals() {
        let g = grid(16, 16, 9);
        let one = g.scalar_from_fn(|_| 1.0);
        let area = (2.0 * PI).powi(2);
        let v = integrate_volume(&g, &one, &flat(&g, 1.0)).unwrap();
        assert!((v - area).abs() < 1e-12);
        let v = integrate_volume(&g, &one, &flat(&g, 4.0)).unwrap();
        assert!((v - 8.0 * area).abs() < 1e-11);
        let s2 = g.scalar_from_fn(|x| x[0].sin().powi(2));
        let v = integrate_volume(&g, &s2, &flat(&g, 1.0)).unwrap();
        assert!((v - area / 2.0).abs() < 1e-12);
        assert!(integrate_volume(&g, &one, &flat(&g, -1.0)).is_err());
    }

    #[test]
    fn boundary_integrals() {
        let g = grid(16, 12, 5);
        let area = (2.0 * PI).powi(2);
        let one = FaceField::from_fn(&g, |_, _| 1.0);
        let id = FaceField::from_fn(&g, |_, _| [[1.0, 0.0], [0.0, 1.0]]);
        assert!((integrate_boundary(&g, &one, &id).unwrap() - area).abs() < 1e-12);
        let two = FaceField::from_fn(&g, |_, _| [[2.0, 0.0], [0.0, 2.0]]);
        assert!((integrate_boundary(&g, &one, &two).unwrap() - 2.0 * area).abs() < 1e-12);
        let s = FaceField::from_fn(&g, |i1, _| g.x1[i1].sin());
        assert!(integrate_boundary(&g, &s, &id).unwrap().abs() < 1e-13);
    }

    #[test]
    fn extrapolation_is_exact_on_cubics() {
        let g = grid(4, 4, 8);
        let p = |x: [f64; 3]| 1.0 + x[2] - 2.0 * x[2].powi(2) + 0.5 * x[2].powi(3);
        let mut f = g.scalar_from_fn(p);
        f.extrapolate_ghosts(&g);
        assert!(f.ghosts_filled(&g, 2));
        let exact = g.scalar_from_fn_with_ghosts(p);
        for (a, b) in f.data.iter().zip(&exact.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn hessian_stencil_exact_on_quadratics() {
        let g = grid(8, 8, 8);
        let f = g.scalar_from_fn_with_ghosts(|x| x[2] * x[2] + 3.0 * x[2]);
        let nb = g.neighbourhood(3, 4);
        let p = nb.second(&f.data, 0, &g.h);
        assert!((p.dd[2][2] - 2.0).abs() < 1e-10);
        assert!((p.d[2] - (2.0 * -1.0 + 3.0)).abs() < 1e-12);
        assert!(p.dd[0][2].abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn d_tan_translation_equivariant(shift in 0usize..8, c in -2.0f64..2.0) {
            let g = grid(8, 6, 5);
            let f = g.scalar_from_fn_with_ghosts(|x| (x[0] + c).sin() * (2.0 * x[0]).cos() + x[1]);
            let mut shifted = f.clone();
            for i1 in 0..g.n1 {
                for i2 in 0..g.n2 {
                    for i3 in 0..g.n3 as isize {
                        let v = f.get(&g, (i1 + shift) % g.n1, i2, i3);
                        shifted.set(&g, i1, i2, i3, v);
                    }
                }
            }
            let a = d_tan(&g, &f, 1).unwrap();
            let b = d_tan(&g, &shifted, 1).unwrap();
            for i1 in 0..g.n1 {
                for i2 in 0..g.n2 {
                    for i3 in 0..g.n3 as isize {
                        let x = a.get(&g, (i1 + shift) % g.n1, i2, i3);
                        prop_assert_eq!(x, b.get(&g, i1, i2, i3));
                    }
                }
            }
        }

        #[test]
        fn discrete_divergence_theorem(a in -1.0f64..1.0, b in -1.0f64..1.0, k in 1i32..3) {
            let g = grid(10, 8, 6);
            let f = g.scalar_from_fn_with_ghosts(|x| a * (k as f64 * x[0]).sin() * x[2] + b * (x[0] + x[1]).cos());
            let d = d_tan(&g, &f, 1).unwrap();
            let v = integrate_volume(&g, &d, &flat(&g, 1.0)).unwrap();
            prop_assert!(v.abs() < 1e-12);
        }

        #[test]
        fn constants_annihilated(c in -5.0f64..5.0) {
            let g = grid(5, 4, 6);
            let f = g.scalar_from_fn_with_ghosts(|_| c);
            prop_assert!(d_tan(&g, &f, 1).unwrap().max_abs(&g) == 0.0);
            prop_assert!(d_tan(&g, &f, 2).unwrap().max_abs(&g) == 0.0);
            prop_assert!(d_norm(&g, &f).unwrap().max_abs(&g) == 0.0);
        }
    }
}

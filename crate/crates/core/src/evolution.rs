//! Reduced evolution system in first-order form:
//! `∂ₜg = −2Φk`, `∂ₜk = Φv`, `∂ₜv = Φ(Δ_g k + 𝒩)` with `v = e₀k`,
//! the lapse re-solved at every Runge–Kutta stage and `∂ₜΦ` from the
//! time-differentiated lapse equation.

use std::cell::RefCell;
use std::rc::Rc;

use crate::boundary::{apply_bc, BoundarySource};
use crate::error::{Error, Result};
use crate::geometry::{for_each_geometry, raise_both, PointGeometry, TensorDerivs};
use crate::grid::{Grid, PointDerivs, ScalarField, SymTensorField};
use crate::lapse::{k_norm2, solve_lapse_with, EllipticConfig, LapseOperator, SolveStats};
use crate::tensor::{dot3, matmul3, sym_eigenvalues3, Mat3, ZERO3};

#[derive(Clone, Debug)]
pub struct State {
    pub t: f64,
    pub g: SymTensorField,
    pub k: SymTensorField,
    /// `v = e₀k = Φ⁻¹∂ₜk`.
    pub v: SymTensorField,
    pub phi: ScalarField,
    pub phi_dot: ScalarField,
}

impl State {
    /// State with `Φ`, `∂ₜΦ` still to be solved for.
    pub fn new(grid: &Grid, t: f64, g: SymTensorField, k: SymTensorField, v: SymTensorField) -> Self {
        let phi = grid.scalar_from_fn(|_| 1.0);
        let phi_dot = grid.scalar_from_fn(|_| 0.0);
        State { t, g, k, v, phi, phi_dot }
    }

    pub fn check_finite(&self, grid: &Grid) -> Result<()> {
        self.g.check_finite(grid, "g")?;
        self.k.check_finite(grid, "k")?;
        self.v.check_finite(grid, "v")?;
        self.phi.check_finite(grid, "lapse")?;
        self.phi_dot.check_finite(grid, "lapse time derivative")
    }
}

/// Manufactured forcing terms added to the `v`, lapse and differentiated
/// lapse equations.
pub struct Sources {
    pub v: SymTensorField,
    pub phi: ScalarField,
    pub phi_dot: ScalarField,
}

pub trait Forcing {
    fn sources(&self, grid: &Grid, t: f64) -> Result<Sources>;
}

/// `e₀v = Δ_g k + 𝒩(g, k, v, Φ, ∂ₜΦ)` at one node: the wave equation for `k`
/// solved for `e₀²k`, with every term kept (no `tr k = 0` simplification).
pub fn e0v_point(geo: &PointGeometry, k: &TensorDerivs, v: &Mat3, phi: &PointDerivs, phid: &PointDerivs) -> Mat3 {
    let gi = &geo.ginv;
    let g = &geo.g;
    let kv = &k.v;
    let nk = geo.cov_d(k);
    let lap_k = geo.laplace_tensor(k);
    let hphi = geo.hessian(phi);
    let lphi = dot3(gi, &hphi);
    let hphid = geo.hessian(phid);
    let dgam = geo.dt_christoffel(kv, &nk, phi);
    let trk = dot3(gi, kv);
    let km = matmul3(gi, kv);
    let kup = raise_both(gi, kv);
    let k2 = dot3(kv, &kup);
    let trv = dot3(gi, v);
    let up_phi: [f64; 3] = std::array::from_fn(|a| (0..3).map(|b| gi[a][b] * phi.d[b]).sum());
    let grad_trk: [f64; 3] =
        std::array::from_fn(|i| (0..3).map(|a| (0..3).map(|b| gi[a][b] * nk[i][a][b]).sum::<f64>()).sum());
    let div_k: [f64; 3] =
        std::array::from_fn(|i| (0..3).map(|a| (0..3).map(|b| gi[a][b] * nk[a][b][i]).sum::<f64>()).sum());
    let ric = &geo.ricci;
    let rm = matmul3(gi, ric);
    let rk = dot3(&raise_both(gi, ric), kv);
    let r = geo.scalar;
    let kkk = matmul3(&matmul3(kv, &kup), kv);
    let vk = matmul3(&matmul3(v, gi), kv);
    let ip = 1.0 / phi.v;
    let ip2 = ip * ip;

    let mut out = ZERO3;
    for i in 0..3 {
        for j in i..3 {
            let e0_ktr = v[i][j] * trk + kv[i][j] * (trv + 2.0 * k2);
            let e0_kk = 2.0 * kkk[i][j] + vk[i][j] + vk[j][i];
            let mut s = lap_k[i][j];
            s += ip2 * ip * phid.v * hphi[i][j] - ip2 * hphid[i][j];
            s += ip2 * (0..3).map(|l| dgam[l][i][j] * phi.d[l]).sum::<f64>();
            s += e0_ktr - 2.0 * e0_kk;
            s += ip * kv[i][j] * lphi;
            for a in 0..3 {
                s -= ip * (km[a][i] * hphi[a][j] + km[a][j] * hphi[a][i]);
                s -= ip * up_phi[a] * (nk[j][i][a] + nk[i][j][a] - 2.0 * nk[a][i][j]);
            }
            s += ip * trk * hphi[j][i];
            s += ip * (phi.d[j] * (grad_trk[i] - div_k[i]) + phi.d[i] * (grad_trk[j] - div_k[j]));
            for c in 0..3 {
                s -= 3.0 * (kv[c][i] * rm[c][j] + kv[c][j] * rm[c][i]);
            }
            s += 2.0 * trk * ric[i][j] + 2.0 * g[i][j] * rk + (kv[i][j] - g[i][j] * trk) * r;
            out[i][j] = s;
            out[j][i] = s;
        }
    }
    out
}

/// Right-hand side of the differentiated lapse equation
/// `Δ_g∂ₜΦ − |k|²∂ₜΦ = −2Φk^{ab}∇_a∇_bΦ + g^{ab}∂ₜΓ^c_ab∂_cΦ + Φ∂ₜ|k|²`,
/// with `∂ₜ|k|² = 4Φk^{ac}k_a{}^dk_cd + 2Φk^{ab}v_ab`.
pub fn phidot_rhs_point(geo: &PointGeometry, k: &TensorDerivs, v: &Mat3, phi: &PointDerivs) -> f64 {
    let gi = &geo.ginv;
    let kv = &k.v;
    let nk = geo.cov_d(k);
    let hphi = geo.hessian(phi);
    let dgam = geo.dt_christoffel(kv, &nk, phi);
    let kup = raise_both(gi, kv);
    let kk = matmul3(&matmul3(kv, gi), kv);
    let mut s = -2.0 * phi.v * dot3(&kup, &hphi);
    for c in 0..3 {
        s += dot3(gi, &dgam[c]) * phi.d[c];
    }
    let dt_k2 = 4.0 * phi.v * dot3(&kup, &kk) + 2.0 * phi.v * dot3(&kup, v);
    s + dt_k2 * phi.v
}

/// `v` on the initial slice from the second variation equation with
/// vanishing spacetime Ricci: `Φv = −∇∇Φ + Φ(R_ij + k_ij tr k − 2k_i{}^lk_jl)`.
/// Needs filled ghost layers of `g` and `Φ`.
pub fn initial_kdot(grid: &Grid, g: &SymTensorField, k: &SymTensorField, phi: &ScalarField) -> Result<SymTensorField> {
    let mut v = grid.tensor();
    for_each_geometry(grid, g, |i1, i2, i3, cols, geo| {
        let p = cols.second(&phi.data, i3, &grid.h);
        let kv = k.get_mat(grid, i1, i2, i3);
        v.set_mat(grid, i1, i2, i3, &second_variation(geo, &kv, &p));
        Ok(())
    })?;
    v.check_finite(grid, "initial v")?;
    Ok(v)
}

pub fn second_variation(geo: &PointGeometry, kv: &Mat3, phi: &PointDerivs) -> Mat3 {
    let h = geo.hessian(phi);
    let trk = dot3(&geo.ginv, kv);
    let kk = matmul3(&matmul3(kv, &geo.ginv), kv);
    let mut out = ZERO3;
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (-h[i][j] + phi.v * (geo.ricci[i][j] + kv[i][j] * trk - 2.0 * kk[i][j])) / phi.v;
        }
    }
    out
}

/// Time derivatives of `(g, k, v)` on real nodes.
#[derive(Clone, Debug)]
pub struct Derivatives {
    pub g: SymTensorField,
    pub k: SymTensorField,
    pub v: SymTensorField,
}

/// Lapse solver statistics of one completed stage.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageStats {
    pub lapse: SolveStats,
    pub lapse_dot: SolveStats,
}

pub struct Solver<'a> {
    pub grid: &'a Grid,
    pub boundary: &'a dyn BoundarySource,
    pub forcing: Option<&'a dyn Forcing>,
    pub elliptic: EllipticConfig,
    /// Sources of the two most recent stage times.
    cache: RefCell<Vec<(u64, Rc<Sources>)>>,
}

impl<'a> Solver<'a> {
    pub fn new(grid: &'a Grid, boundary: &'a dyn BoundarySource, elliptic: EllipticConfig) -> Self {
        Solver { grid, boundary, forcing: None, elliptic, cache: RefCell::new(Vec::new()) }
    }

    pub fn with_forcing(mut self, forcing: &'a dyn Forcing) -> Self {
        self.forcing = Some(forcing);
        self
    }

    fn sources(&self, t: f64) -> Result<Option<Rc<Sources>>> {
        let Some(f) = self.forcing else { return Ok(None) };
        let mut cache = self.cache.borrow_mut();
        if let Some((_, s)) = cache.iter().find(|(k, _)| *k == t.to_bits()) {
            return Ok(Some(s.clone()));
        }
        let s = Rc::new(f.sources(self.grid, t)?);
        if cache.len() == 2 {
            cache.remove(0);
        }
        cache.push((t.to_bits(), s.clone()));
        Ok(Some(s))
    }

    /// Solves for `Φ` and `∂ₜΦ` given `(g, k, v)` with filled ghosts;
    /// previous values in `s` are the initial guesses.
    pub fn solve_lapse_pair(&self, s: &mut State, sources: Option<&Sources>) -> Result<StageStats> {
        let grid = self.grid;
        let c = k_norm2(grid, &s.g, &s.k)?;
        let op = LapseOperator::new(grid, &s.g, &c)?;
        let (phi, lapse) = solve_lapse_with(&op, &c, sources.map(|x| &x.phi), Some(&s.phi), &self.elliptic)?;
        s.phi = phi;
        let mut b = grid.scalar();
        let (k, v, phi) = (&s.k, &s.v, &s.phi);
        for_each_geometry(grid, &s.g, |i1, i2, i3, cols, geo| {
            if i3 == 0 || i3 == grid.n3 as isize - 1 {
                return Ok(());
            }
            let kd = TensorDerivs::gather(k, cols, i3, &grid.h);
            let p = cols.second(&phi.data, i3, &grid.h);
            let mut r = phidot_rhs_point(geo, &kd, &v.get_mat(grid, i1, i2, i3), &p);
            if let Some(src) = sources {
                r += src.phi_dot.get(grid, i1, i2, i3);
            }
            b.set(grid, i1, i2, i3, r);
            Ok(())
        })?;
        for x in b.data.iter_mut() {
            if !x.is_finite() {
                *x = 0.0;
            }
        }
        let x0: Vec<f64> = s.phi_dot.data.iter().map(|x| if x.is_finite() { *x } else { 0.0 }).collect();
        let (u, lapse_dot) = op.solve(&b.data, &x0, &self.elliptic)?;
        let mut pd = grid.scalar();
        for (i1, i2, i3) in grid.real_nodes() {
            let i = grid.index(i1, i2, i3);
            pd.data[i] = u[i];
        }
        pd.extrapolate_ghosts(grid);
        s.phi_dot = pd;
        Ok(StageStats { lapse, lapse_dot })
    }

    /// Completed initial slice from `(g, k)`: lapse solved, `v` from
    /// [`initial_kdot`] so that the spatial Ricci equations hold at `t`.
    pub fn initial_state(&self, t: f64, g: SymTensorField, k: SymTensorField) -> Result<State> {
        let mut s = State::new(self.grid, t, g, k, self.grid.tensor_from_fn(|_| ZERO3, false));
        self.complete(&mut s)?;
        s.v = initial_kdot(self.grid, &s.g, &s.k, &s.phi)?;
        self.complete(&mut s)?;
        Ok(s)
    }

    /// Imposes the boundary conditions at `s.t` and solves for the lapse.
    pub fn complete(&self, s: &mut State) -> Result<StageStats> {
        let sources = self.sources(s.t)?;
        self.complete_with(s, sources.as_deref())
    }

    fn complete_with(&self, s: &mut State, sources: Option<&Sources>) -> Result<StageStats> {
        apply_bc(self.grid, &mut s.g, &mut s.k, &mut s.v, s.t, self.boundary)?;
        s.g.check_finite(self.grid, "g")?;
        s.k.check_finite(self.grid, "k")?;
        s.v.check_finite(self.grid, "v")?;
        self.solve_lapse_pair(s, sources)
    }

    /// Time derivatives of a completed state.
    pub fn derivatives(&self, s: &State) -> Result<Derivatives> {
        let sources = self.sources(s.t)?;
        self.derivatives_with(s, sources.as_deref())
    }

    fn derivatives_with(&self, s: &State, sources: Option<&Sources>) -> Result<Derivatives> {
        let grid = self.grid;
        let mut d = Derivatives { g: grid.tensor(), k: grid.tensor(), v: grid.tensor() };
        for_each_geometry(grid, &s.g, |i1, i2, i3, cols, geo| {
            let kd = TensorDerivs::gather(&s.k, cols, i3, &grid.h);
            let p = cols.second(&s.phi.data, i3, &grid.h);
            let pd = cols.second(&s.phi_dot.data, i3, &grid.h);
            let vv = s.v.get_mat(grid, i1, i2, i3);
            let mut e = e0v_point(geo, &kd, &vv, &p, &pd);
            let src = sources.map(|x| x.v.get_mat(grid, i1, i2, i3)).unwrap_or(ZERO3);
            let mut dg = ZERO3;
            let mut dk = ZERO3;
            for i in 0..3 {
                for j in 0..3 {
                    e[i][j] = p.v * e[i][j] + src[i][j];
                    dg[i][j] = -2.0 * p.v * kd.v[i][j];
                    dk[i][j] = p.v * vv[i][j];
                }
            }
            d.g.set_mat(grid, i1, i2, i3, &dg);
            d.k.set_mat(grid, i1, i2, i3, &dk);
            d.v.set_mat(grid, i1, i2, i3, &e);
            Ok(())
        })?;
        d.v.check_finite(grid, "∂ₜv")?;
        Ok(d)
    }

    /// `dt = cfl·h_min / max √λ_max(Φ²g^{ij})`.
    pub fn cfl_dt(&self, s: &State, cfl: f64) -> Result<f64> {
        cfl_dt(self.grid, s, cfl)
    }

    /// One classical Runge–Kutta step of a completed state; the result is
    /// completed as well.
    pub fn step(&self, s: &State, dt: f64) -> Result<(State, StageStats)> {
        let k1 = self.derivatives(s)?;
        let mut y = advance(s, &[(&k1, 0.5 * dt)], 0.5 * dt);
        self.complete(&mut y)?;
        let k2 = self.derivatives(&y)?;
        let mut y = advance_from(s, y, &[(&k2, 0.5 * dt)], 0.5 * dt);
        self.complete(&mut y)?;
        let k3 = self.derivatives(&y)?;
        let mut y = advance_from(s, y, &[(&k3, dt)], dt);
        self.complete(&mut y)?;
        let k4 = self.derivatives(&y)?;
        let w = dt / 6.0;
        let mut out = advance_from(s, y, &[(&k1, w), (&k2, 2.0 * w), (&k3, 2.0 * w), (&k4, w)], dt);
        let stats = self.complete(&mut out)?;
        Ok((out, stats))
    }

    /// Evolves a state to `t_final` with a fixed step derived from the CFL
    /// bound of the completed initial state. `observer` sees the completed
    /// state after step 0 and every `cadence` steps, and the final state.
    pub fn evolve(
        &self,
        initial: State,
        t_final: f64,
        cfl: f64,
        cadence: usize,
        observer: &mut dyn FnMut(&State, usize) -> Result<()>,
    ) -> Result<State> {
        let mut s = initial;
        self.complete(&mut s)?;
        let (n, dt) = step_count(self.cfl_dt(&s, cfl)?, t_final - s.t);
        observer(&s, 0)?;
        let t0 = s.t;
        for m in 1..=n {
            let (mut next, _) = self.step(&s, dt)?;
            next.t = t0 + m as f64 * dt;
            s = next;
            s.check_finite(self.grid)?;
            if m % cadence.max(1) == 0 || m == n {
                observer(&s, m)?;
            }
        }
        Ok(s)
    }
}

/// Number of steps and the uniform step that lands exactly on the interval
/// end.
pub fn step_count(dt_max: f64, interval: f64) -> (usize, f64) {
    if interval <= 0.0 {
        return (0, 0.0);
    }
    let n = (interval / dt_max * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    (n, interval / n as f64)
}

pub fn cfl_dt(grid: &Grid, s: &State, cfl: f64) -> Result<f64> {
    let mut speed: f64 = 0.0;
    for (i1, i2, i3) in grid.real_nodes() {
        let g = s.g.get_mat(grid, i1, i2, i3);
        let lmin = sym_eigenvalues3(&g)[0];
        if !(lmin > 0.0) {
            return Err(Error::DegenerateMetric(i1, i2, i3));
        }
        let phi = s.phi.get(grid, i1, i2, i3);
        speed = speed.max(phi.abs() / lmin.sqrt());
    }
    if !(speed > 0.0) {
        return Err(Error::Numeric("wave speed bound is zero".into()));
    }
    Ok(cfl * grid.h_min() / speed)
}

fn advance(s: &State, terms: &[(&Derivatives, f64)], dt: f64) -> State {
    advance_from(s, s.clone(), terms, dt)
}

/// `base + Σ w·d` into the buffers of `out` (whose lapse fields are kept as
/// initial guesses).
fn advance_from(base: &State, mut out: State, terms: &[(&Derivatives, f64)], dt: f64) -> State {
    out.t = base.t + dt;
    for c in 0..6 {
        out.g.c[c].data.copy_from_slice(&base.g.c[c].data);
        out.k.c[c].data.copy_from_slice(&base.k.c[c].data);
        out.v.c[c].data.copy_from_slice(&base.v.c[c].data);
    }
    for (d, w) in terms {
        out.g.axpy(*w, &d.g);
        out.k.axpy(*w, &d.k);
        out.v.axpy(*w, &d.v);
    }
    out
}

/// Outcome of the Picard iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct PicardReport {
    pub iterations: usize,
    /// Difference norm between consecutive iterates, one entry per iterate.
    pub diffs: Vec<f64>,
    pub converged: bool,
}

/// Frozen coefficients of one Runge–Kutta stage.
type StageStates = Vec<[State; 4]>;

impl<'a> Solver<'a> {
    /// Picard iteration for the reduced system on a fixed time grid.
    ///
    /// Iterate `n + 1` integrates `∂ₜg = −2Φⁿkⁿ`, the linear wave system
    /// `∂ₜk = Φⁿv`, `∂ₜv = Φⁿ(Δ_{gⁿ}k + 𝒩ⁿ)` with the boundary conditions
    /// taken in `gⁿ`, and solves the lapse of `(gⁿ, kⁿ)`. Coefficients are
    /// stored per Runge–Kutta stage, so the fixed point is the direct
    /// solution on the same time grid. Iterate 0 is the initial data frozen
    /// in time.
    pub fn picard(
        &self,
        initial: State,
        t_final: f64,
        cfl: f64,
        tol: f64,
        max_iter: usize,
    ) -> Result<(State, PicardReport)> {
        let mut s0 = initial;
        self.complete(&mut s0)?;
        let (n, dt) = step_count(self.cfl_dt(&s0, cfl)?, t_final - s0.t);
        let offsets = [0.0, 0.5 * dt, 0.5 * dt, dt];
        let mut coef: StageStates = (0..n)
            .map(|m| {
                std::array::from_fn(|st| {
                    let mut c = s0.clone();
                    c.t = s0.t + m as f64 * dt + offsets[st];
                    c
                })
            })
            .collect();
        let mut final_coef = s0.clone();
        final_coef.t = s0.t + n as f64 * dt;
        let mut report = PicardReport { iterations: 0, diffs: Vec::new(), converged: false };
        let mut increasing = 0;
        for it in 1..=max_iter.max(1) {
            let (next, next_final) = self.picard_iterate(&s0, &coef, &final_coef, dt)?;
            let mut diff: f64 = 0.0;
            for (a, b) in next.iter().zip(&coef) {
                diff = diff.max(state_distance(self.grid, &a[0], &b[0]));
            }
            diff = diff.max(state_distance(self.grid, &next_final, &final_coef));
            log::info!("picard iterate {it}: difference {diff:.3e}");
            if let Some(&prev) = report.diffs.last() {
                increasing = if diff > prev { increasing + 1 } else { 0 };
            }
            report.diffs.push(diff);
            report.iterations = it;
            coef = next;
            final_coef = next_final;
            if diff < tol {
                report.converged = true;
                break;
            }
            if increasing >= 3 {
                return Err(Error::PicardDiverged(report.diffs));
            }
        }
        Ok((final_coef, report))
    }

    fn picard_iterate(&self, s0: &State, coef: &StageStates, final_coef: &State, dt: f64) -> Result<(StageStates, State)> {
        let mut out = Vec::with_capacity(coef.len());
        let mut s = s0.clone();
        for c in coef {
            let mut stages: Vec<State> = Vec::with_capacity(4);
            let mut ks: Vec<Derivatives> = Vec::with_capacity(4);
            for st in 0..4 {
                let mut y = match st {
                    0 => s.clone(),
                    1 | 2 => advance(&s, &[(&ks[st - 1], 0.5 * dt)], 0.5 * dt),
                    _ => advance(&s, &[(&ks[2], dt)], dt),
                };
                let d = self.frozen_stage(&mut y, &c[st])?;
                ks.push(d);
                stages.push(y);
            }
            let w = dt / 6.0;
            s = advance(&s, &[(&ks[0], w), (&ks[1], 2.0 * w), (&ks[2], 2.0 * w), (&ks[3], w)], dt);
            out.push(stages.try_into().map_err(|_| Error::Numeric("stage count".into()))?);
        }
        let mut y = s;
        y.t = final_coef.t;
        self.frozen_boundary(&mut y, final_coef)?;
        Ok((out, y))
    }

    /// Boundary conditions on `y` with the connection of `c`, and the lapse
    /// of `c` as the next iterate's lapse.
    fn frozen_boundary(&self, y: &mut State, c: &State) -> Result<()> {
        let mut gc = c.g.clone();
        apply_bc(self.grid, &mut gc, &mut y.k, &mut y.v, y.t, self.boundary)?;
        y.g.extrapolate_ghosts(self.grid);
        y.k.check_finite(self.grid, "k")?;
        let mut lapse = c.clone();
        let sources = self.sources(c.t)?;
        self.solve_lapse_pair(&mut lapse, sources.as_deref())?;
        y.phi = lapse.phi;
        y.phi_dot = lapse.phi_dot;
        Ok(())
    }

    fn frozen_stage(&self, y: &mut State, c: &State) -> Result<Derivatives> {
        let grid = self.grid;
        y.t = c.t;
        self.frozen_boundary(y, c)?;
        let sources = self.sources(c.t)?;
        let mut d = self.derivatives_with(c, sources.as_deref())?;
        // Replace the frozen k and v by the new iterate in the principal part.
        let mut dk = y.k.clone();
        dk.axpy(-1.0, &c.k);
        for_each_geometry(grid, &c.g, |i1, i2, i3, cols, geo| {
            let kd = TensorDerivs::gather(&dk, cols, i3, &grid.h);
            let lap = geo.laplace_tensor(&kd);
            let phi = c.phi.get(grid, i1, i2, i3);
            let ck = c.k.get_mat(grid, i1, i2, i3);
            let yv = y.v.get_mat(grid, i1, i2, i3);
            let mut dv = d.v.get_mat(grid, i1, i2, i3);
            let mut dkk = ZERO3;
            let mut dg = ZERO3;
            for i in 0..3 {
                for j in 0..3 {
                    dv[i][j] += phi * lap[i][j];
                    dkk[i][j] = phi * yv[i][j];
                    dg[i][j] = -2.0 * phi * ck[i][j];
                }
            }
            d.v.set_mat(grid, i1, i2, i3, &dv);
            d.k.set_mat(grid, i1, i2, i3, &dkk);
            d.g.set_mat(grid, i1, i2, i3, &dg);
            Ok(())
        })?;
        Ok(d)
    }
}

/// `max(‖δg‖, ‖δk‖, ‖δv‖, ‖δΦ‖)`-type distance: square root of the
/// coordinate `L²` norm of all component differences.
pub fn state_distance(grid: &Grid, a: &State, b: &State) -> f64 {
    let mut sum = 0.0;
    for (i1, i2, i3) in grid.real_nodes() {
        let i = grid.index(i1, i2, i3);
        let mut s = 0.0;
        for c in 0..6 {
            let w = if matches!(c, 1 | 2 | 4) { 2.0 } else { 1.0 };
            s += w * (a.g.c[c].data[i] - b.g.c[c].data[i]).powi(2);
            s += w * (a.k.c[c].data[i] - b.k.c[c].data[i]).powi(2);
            s += w * (a.v.c[c].data[i] - b.v.c[c].data[i]).powi(2);
        }
        s += (a.phi.data[i] - b.phi.data[i]).powi(2);
        sum += grid.weight3(i3) * s;
    }
    (sum * grid.cell_volume()).sqrt()
}

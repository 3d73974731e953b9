//! Explicit monotone finite-difference engine shared by the lattice and PDE
//! solvers.
//!
//! One backward step from row `n + 1` to row `n` reads
//!
//! ```text
//! ũ_k = u'_k + Δt·g(t_{n+1}, x_k, u'_k)
//! u_k = opt_v { ũ_k + Σ_μ [w⁺_μ(v)(ũ_{k+e_μ} − ũ_k) + w⁻_μ(v)(ũ_{k−e_μ} − ũ_k)]
//!               + Δt Σ_j v_j f_j(t_{n+1}, x_k, u'_k) }
//! ```
//!
//! The transition weights `w±` are affine in the control `v` and
//! nonnegative under the stability limit, so every step is a monotone map.
//! Second differences are centered; first differences are centered when the
//! cell Péclet number allows it at every vertex and upwinded otherwise.
//! On boundary nodes the normal diffusion is dropped and only drift pointing
//! into the domain is kept.
//!
//! The lattice solvers use the transition-weight form above; the PDE solvers
//! evaluate the same discretization in operator form
//! `u_k = ũ_k + Δt·(opt_v H(v) + drift part)`, built from difference
//! quotients. The two agree to rounding.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::expr::{FieldExpr, Point, Var};
use crate::lattice::GridSpec;
use crate::model::ModelSpec;
use crate::uncertainty::{optimize_vertices, Mode, UncertaintyBox, Vertex};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Position {
    Interior,
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy)]
struct DimStencil {
    pos: Position,
    b: f64,
    central: bool,
}

/// Local coefficients at every node for one time level, in grid coordinates.
#[derive(Debug, Clone)]
struct Stencils {
    dims: usize,
    d: usize,
    dim: Vec<DimStencil>,
    /// Diffusion rate per unit control, `A(v) = ½ Σ_j s_j v_j`.
    s: Vec<f64>,
    /// Control drift coming from `h`.
    hh: Vec<f64>,
    /// Itô correction of log grids, `−½ s_j` (zero on linear grids).
    ito: Vec<f64>,
}

impl Stencils {
    #[inline]
    fn at(&self, k: usize, mu: usize) -> (&DimStencil, usize) {
        let idx = k * self.dims + mu;
        (&self.dim[idx], idx * self.d)
    }
}

/// How the centered-difference decision treats the control sets.
#[derive(Debug, Clone, Copy)]
enum CentralRule<'a> {
    /// Péclet bound at every vertex of one box.
    Joint(&'a UncertaintyBox),
    /// Largest drift over `drift` against smallest diffusion over `diffusion`.
    Split {
        drift: &'a UncertaintyBox,
        diffusion: &'a UncertaintyBox,
    },
}

/// Running-term data for one step.
#[derive(Debug, Clone, Copy)]
pub enum Running<'a> {
    /// Evaluate the model drivers on this row (the row at `t_{n+1}`).
    Evaluate(&'a [f64]),
    /// Precomputed `g` at every node and `f` at `[k·d + j]`.
    Given {
        g: Option<&'a [f64]>,
        f: Option<&'a [f64]>,
    },
}

/// Result of one backward step.
#[derive(Debug, Clone)]
pub struct StepRow {
    pub values: Vec<f64>,
    pub vertices: Vec<Vertex>,
}

/// A model bound to a grid, with the stability limit verified.
#[derive(Debug, Clone)]
pub struct Discretization {
    model: ModelSpec,
    grid: GridSpec,
    cached: Option<Stencils>,
    max_dt: f64,
}

impl Discretization {
    pub fn new(model: &ModelSpec, grid: &GridSpec) -> Result<Discretization> {
        let disc = Discretization::analyze(model, grid)?;
        let dt = grid.dt();
        if dt > disc.max_dt * (1.0 + 1e-12) {
            return Err(Error::Cfl { dt, max_dt: disc.max_dt });
        }
        Ok(disc)
    }

    /// Builds the stencils and measures the stability limit without
    /// enforcing it.
    fn analyze(model: &ModelSpec, grid: &GridSpec) -> Result<Discretization> {
        model.validate()?;
        grid.validate()?;
        if grid.dims() != model.state_dim() {
            return Err(Error::Dimension(format!(
                "grid has {} axes, model state has dimension {}",
                grid.dims(),
                model.state_dim()
            )));
        }
        if model.multi_band.is_some() && grid.log_space {
            return Err(Error::Invalid("three-band models require a linear grid".into()));
        }
        let time_dependent = model
            .drift
            .iter()
            .chain(model.h.iter().flatten())
            .chain(model.sigma.iter().flatten())
            .any(|e| e.uses(Var::T));
        let mut disc = Discretization {
            model: model.clone(),
            grid: grid.clone(),
            cached: None,
            max_dt: f64::INFINITY,
        };
        let times: Vec<usize> = if time_dependent { (0..grid.nt).collect() } else { vec![0] };
        let mut rate: f64 = 0.0;
        for n in times {
            let st = disc.build(grid.time(n))?;
            rate = rate.max(disc.max_rate(&st));
            if !time_dependent {
                disc.cached = Some(st);
            }
        }
        disc.max_dt = if rate > 0.0 { 1.0 / rate } else { f64::INFINITY };
        Ok(disc)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn max_dt(&self) -> f64 {
        self.max_dt
    }

    fn stencils(&self, n: usize) -> Result<std::borrow::Cow<'_, Stencils>> {
        match &self.cached {
            Some(s) => Ok(std::borrow::Cow::Borrowed(s)),
            None => Ok(std::borrow::Cow::Owned(self.build(self.grid.time(n))?)),
        }
    }

    fn build(&self, t: f64) -> Result<Stencils> {
        let grid = &self.grid;
        let m = &self.model;
        let dims = grid.dims();
        let d = m.box_dim();
        let rule = match &m.multi_band {
            Some(mb) => CentralRule::Split {
                drift: &mb.gamma1,
                diffusion: &mb.gamma2,
            },
            None => CentralRule::Joint(&m.uncertainty),
        };
        let per_node: Vec<Result<(Vec<DimStencil>, Vec<f64>, Vec<f64>, Vec<f64>)>> = (0..grid.nodes())
            .into_par_iter()
            .map(|k| {
                let p = grid.point(k);
                let x = &p[..dims];
                let pt = Point { t: Some(t), x, y: None };
                let mut dim = Vec::with_capacity(dims);
                let mut s = Vec::with_capacity(dims * d);
                let mut hh = Vec::with_capacity(dims * d);
                let mut ito = Vec::with_capacity(dims * d);
                for mu in 0..dims {
                    let i = grid.index_of(k, mu);
                    let pos = if i == 0 {
                        Position::Lower
                    } else if i + 1 == grid.axes[mu].n {
                        Position::Upper
                    } else {
                        Position::Interior
                    };
                    let scale = if grid.log_space { x[mu] } else { 1.0 };
                    let b = m.drift[mu].eval(&pt)? / scale;
                    for j in 0..d {
                        let sig = m.sigma[mu][j].eval(&pt)? / scale;
                        let sj = sig * sig;
                        s.push(sj);
                        hh.push(m.h[mu][j].eval(&pt)? / scale);
                        ito.push(if grid.log_space { -0.5 * sj } else { 0.0 });
                    }
                    let base = mu * d;
                    let dx = grid.spacing(mu);
                    let central = pos == Position::Interior
                        && peclet_ok(rule, b, &s[base..base + d], &hh[base..base + d], &ito[base..base + d], dx);
                    dim.push(DimStencil { pos, b, central });
                }
                Ok((dim, s, hh, ito))
            })
            .collect();
        let mut st = Stencils {
            dims,
            d,
            dim: Vec::with_capacity(grid.nodes() * dims),
            s: Vec::with_capacity(grid.nodes() * dims * d),
            hh: Vec::with_capacity(grid.nodes() * dims * d),
            ito: Vec::with_capacity(grid.nodes() * dims * d),
        };
        for r in per_node {
            let (dim, s, hh, ito) = r?;
            st.dim.extend(dim);
            st.s.extend(s);
            st.hh.extend(hh);
            st.ito.extend(ito);
        }
        Ok(st)
    }

    /// Largest total rate `Σ w± / Δt` plus the driver Lipschitz allowance,
    /// with every control at its largest admissible variance.
    fn max_rate(&self, st: &Stencils) -> f64 {
        let m = &self.model;
        let d = st.d;
        let vmax: Vec<f64> = (0..d).map(|j| m.max_variance(j)).collect();
        let mut k_term = if m.g_uses_y() { m.lipschitz } else { 0.0 };
        for (j, v) in vmax.iter().enumerate() {
            if m.f_uses_y(j) {
                k_term += m.lipschitz * v;
            }
        }
        let mut worst: f64 = 0.0;
        for k in 0..self.grid.nodes() {
            let mut rate = k_term;
            for mu in 0..st.dims {
                let dx = self.grid.spacing(mu);
                let (ds, base) = st.at(k, mu);
                let mut drift = ds.b.abs();
                let mut diff = 0.0;
                for j in 0..d {
                    match ds.pos {
                        Position::Interior => {
                            diff += st.s[base + j] * vmax[j];
                            drift += (st.hh[base + j] + st.ito[base + j]).abs() * vmax[j];
                        }
                        _ => drift += st.hh[base + j].abs() * vmax[j],
                    }
                }
                rate += diff / (dx * dx) + drift / dx;
            }
            worst = worst.max(rate);
        }
        worst
    }

    fn tilde(&self, n: usize, next: &[f64], running: Running<'_>) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
        let dt = self.grid.dt();
        let t1 = self.grid.time(n + 1);
        let m = &self.model;
        let dims = self.grid.dims();
        let d = m.box_dim();
        match running {
            Running::Evaluate(y) => {
                let g_zero = m.driver_g.is_zero();
                let ut: Result<Vec<f64>> = if g_zero {
                    Ok(next.to_vec())
                } else {
                    (0..next.len())
                        .into_par_iter()
                        .map(|k| {
                            let p = self.grid.point(k);
                            let g = m.driver_g.eval(&Point::txy(t1, &p[..dims], y[k]))?;
                            Ok(next[k] + dt * g)
                        })
                        .collect()
                };
                let f = if m.has_f() {
                    let rows: Result<Vec<Vec<f64>>> = (0..next.len())
                        .into_par_iter()
                        .map(|k| {
                            let p = self.grid.point(k);
                            let pt = Point::txy(t1, &p[..dims], y[k]);
                            m.driver_f.iter().map(|f| f.eval(&pt)).collect()
                        })
                        .collect();
                    Some(rows?.concat())
                } else {
                    None
                };
                Ok((ut?, f))
            }
            Running::Given { g, f } => {
                let ut = match g {
                    Some(g) => next.iter().zip(g).map(|(u, g)| u + dt * g).collect(),
                    None => next.to_vec(),
                };
                if let Some(f) = f {
                    if f.len() != next.len() * d {
                        return Err(Error::Dimension("running f array has the wrong length".into()));
                    }
                }
                Ok((ut, f.map(<[f64]>::to_vec)))
            }
        }
    }

    /// Backward step in transition-weight form (the lattice route).
    pub fn weight_step(&self, n: usize, next: &[f64], mode: Mode, running: Running<'_>) -> Result<StepRow> {
        let st = self.stencils(n)?;
        let (ut, f) = self.tilde(n, next, running)?;
        let dt = self.grid.dt();
        let bx = &self.model.uncertainty;
        let d = st.d;
        let strides: Vec<usize> = (0..st.dims).map(|mu| self.grid.stride(mu)).collect();
        let spacing: Vec<f64> = (0..st.dims).map(|mu| self.grid.spacing(mu)).collect();
        let out: Vec<(f64, Vertex)> = (0..next.len())
            .into_par_iter()
            .map(|k| {
                let uk = ut[k];
                let best = optimize_vertices(bx, mode, |v| {
                    let mut val = uk;
                    for mu in 0..st.dims {
                        let (ds, base) = st.at(k, mu);
                        let (w_up, w_dn) = weights(ds, &st, base, bx, v, dt, spacing[mu]);
                        if w_up != 0.0 {
                            val += w_up * (ut[k + strides[mu]] - uk);
                        }
                        if w_dn != 0.0 {
                            val += w_dn * (ut[k - strides[mu]] - uk);
                        }
                    }
                    if let Some(f) = &f {
                        for j in 0..d {
                            val += dt * bx.value(v, j) * f[k * d + j];
                        }
                    }
                    val
                });
                (best.value, best.vertex)
            })
            .collect();
        finish(n, out)
    }

    /// Backward step in operator form (the PDE route). With a three-band
    /// model the drift, diffusion and driver terms are optimized separately
    /// over their own boxes and the recorded vertex is the diffusion one.
    pub fn operator_step(&self, n: usize, next: &[f64], mode: Mode, running: Running<'_>) -> Result<StepRow> {
        let st = self.stencils(n)?;
        let (ut, f) = self.tilde(n, next, running)?;
        let dt = self.grid.dt();
        let d = st.d;
        let strides: Vec<usize> = (0..st.dims).map(|mu| self.grid.stride(mu)).collect();
        let spacing: Vec<f64> = (0..st.dims).map(|mu| self.grid.spacing(mu)).collect();
        let model = &self.model;
        let out: Vec<(f64, Vertex)> = (0..next.len())
            .into_par_iter()
            .map(|k| {
                // Per-(dim, j) coefficients of v_j in the drift and diffusion parts.
                let mut ch = vec![0.0; st.dims * d];
                let mut d2 = vec![0.0; st.dims];
                let mut has_diff = vec![false; st.dims];
                let mut bpart = 0.0;
                for mu in 0..st.dims {
                    let (ds, base) = st.at(k, mu);
                    let h = spacing[mu];
                    let u0 = ut[k];
                    match ds.pos {
                        Position::Interior => {
                            let up = ut[k + strides[mu]];
                            let dn = ut[k - strides[mu]];
                            d2[mu] = (up - 2.0 * u0 + dn) / (h * h);
                            has_diff[mu] = true;
                            if ds.central {
                                let dc = (up - dn) / (2.0 * h);
                                bpart += ds.b * dc;
                                for j in 0..d {
                                    ch[mu * d + j] = (st.hh[base + j] + st.ito[base + j]) * dc;
                                }
                            } else {
                                let dp = (up - u0) / h;
                                let dm = (u0 - dn) / h;
                                bpart += pos(ds.b) * dp - neg(ds.b) * dm;
                                for j in 0..d {
                                    let hj = st.hh[base + j] + st.ito[base + j];
                                    ch[mu * d + j] = pos(hj) * dp - neg(hj) * dm;
                                }
                            }
                        }
                        Position::Lower => {
                            let dp = (ut[k + strides[mu]] - u0) / h;
                            bpart += pos(ds.b) * dp;
                            for j in 0..d {
                                ch[mu * d + j] = pos(st.hh[base + j]) * dp;
                            }
                        }
                        Position::Upper => {
                            let dm = (u0 - ut[k - strides[mu]]) / h;
                            bpart += -(neg(ds.b) * dm);
                            for j in 0..d {
                                ch[mu * d + j] = -(neg(st.hh[base + j]) * dm);
                            }
                        }
                    }
                }
                let hpart = |bx: &UncertaintyBox, v: Vertex| {
                    let mut acc = 0.0;
                    for mu in 0..st.dims {
                        for j in 0..d {
                            acc += bx.value(v, j) * ch[mu * d + j];
                        }
                    }
                    acc
                };
                let diff = |bx: &UncertaintyBox, v: Vertex| {
                    let mut acc = 0.0;
                    for mu in 0..st.dims {
                        if has_diff[mu] {
                            let (_, base) = st.at(k, mu);
                            for j in 0..d {
                                acc += 0.5 * (bx.value(v, j) * (st.s[base + j] * d2[mu]));
                            }
                        }
                    }
                    acc
                };
                let fpart = |bx: &UncertaintyBox, v: Vertex| {
                    let mut acc = 0.0;
                    if let Some(f) = &f {
                        for j in 0..d {
                            acc += bx.value(v, j) * f[k * d + j];
                        }
                    }
                    acc
                };
                match &model.multi_band {
                    None => {
                        let bx = &model.uncertainty;
                        let best = optimize_vertices(bx, mode, |v| hpart(bx, v) + diff(bx, v) + fpart(bx, v));
                        (ut[k] + dt * (best.value + bpart), best.vertex)
                    }
                    Some(mb) => {
                        let h1 = optimize_vertices(&mb.gamma1, mode, |v| hpart(&mb.gamma1, v));
                        let h2 = optimize_vertices(&mb.gamma2, mode, |v| diff(&mb.gamma2, v));
                        let h3 = optimize_vertices(&mb.gamma3, mode, |v| fpart(&mb.gamma3, v));
                        (ut[k] + dt * (h1.value + h2.value + h3.value + bpart), h2.vertex)
                    }
                }
            })
            .collect();
        finish(n, out)
    }
}

/// Which evaluation form a sweep uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    Weight,
    Operator,
}

/// Where a sweep takes the value fed to the drivers at each step.
#[derive(Debug, Clone, Copy)]
pub enum DriverSource<'a> {
    /// The row being stepped (the nonlinear recursion).
    Own,
    /// Row `n + 1` of a fixed surface (a frozen Picard iterate).
    Frozen(&'a [f64]),
}

/// Rows `0..=n0` and the policy rows `0..n0` of a backward sweep started
/// from `start` at row `n0`.
#[derive(Debug, Clone)]
pub struct Sweep {
    pub rows: Vec<Vec<f64>>,
    pub policy: Vec<Vec<Vertex>>,
}

impl Discretization {
    pub fn sweep(
        &self,
        route: Route,
        mode: Mode,
        n0: usize,
        start: Vec<f64>,
        drivers: DriverSource<'_>,
    ) -> Result<Sweep> {
        if n0 > self.grid.nt {
            return Err(Error::Invalid(format!("start row {n0} beyond the last row {}", self.grid.nt)));
        }
        if start.len() != self.grid.nodes() {
            return Err(Error::Dimension("start row does not match the grid".into()));
        }
        let nodes = self.grid.nodes();
        let mut rows = vec![Vec::new(); n0 + 1];
        let mut policy = vec![Vec::new(); n0];
        rows[n0] = start;
        for n in (0..n0).rev() {
            let next = &rows[n + 1];
            let y = match drivers {
                DriverSource::Own => &next[..],
                DriverSource::Frozen(s) => &s[(n + 1) * nodes..(n + 2) * nodes],
            };
            let step = match route {
                Route::Weight => self.weight_step(n, next, mode, Running::Evaluate(y))?,
                Route::Operator => self.operator_step(n, next, mode, Running::Evaluate(y))?,
            };
            rows[n] = step.values;
            policy[n] = step.vertices;
        }
        Ok(Sweep { rows, policy })
    }
}

#[inline]
fn pos(x: f64) -> f64 {
    x.max(0.0)
}

#[inline]
fn neg(x: f64) -> f64 {
    (-x).max(0.0)
}

fn finish(n: usize, out: Vec<(f64, Vertex)>) -> Result<StepRow> {
    let (values, vertices): (Vec<f64>, Vec<Vertex>) = out.into_iter().unzip();
    if let Some(k) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { step: n, node: k });
    }
    Ok(StepRow { values, vertices })
}

/// Transition weights toward the upper and lower neighbour in one dimension.
#[inline]
fn weights(
    ds: &DimStencil,
    st: &Stencils,
    base: usize,
    bx: &UncertaintyBox,
    v: Vertex,
    dt: f64,
    dx: f64,
) -> (f64, f64) {
    let d = st.d;
    match ds.pos {
        Position::Interior => {
            let mut a = 0.0;
            for j in 0..d {
                a += st.s[base + j] * bx.value(v, j);
            }
            let a = 0.5 * a / (dx * dx);
            if ds.central {
                let mut drift = ds.b;
                for j in 0..d {
                    drift += (st.hh[base + j] + st.ito[base + j]) * bx.value(v, j);
                }
                let c = drift / (2.0 * dx);
                (dt * (a + c), dt * (a - c))
            } else {
                let mut up = pos(ds.b);
                let mut dn = neg(ds.b);
                for j in 0..d {
                    let hj = st.hh[base + j] + st.ito[base + j];
                    up += pos(hj) * bx.value(v, j);
                    dn += neg(hj) * bx.value(v, j);
                }
                (dt * (a + up / dx), dt * (a + dn / dx))
            }
        }
        Position::Lower => {
            let mut up = pos(ds.b);
            for j in 0..d {
                up += pos(st.hh[base + j]) * bx.value(v, j);
            }
            (dt * up / dx, 0.0)
        }
        Position::Upper => {
            let mut dn = neg(ds.b);
            for j in 0..d {
                dn += neg(st.hh[base + j]) * bx.value(v, j);
            }
            (0.0, dt * dn / dx)
        }
    }
}

fn peclet_ok(rule: CentralRule<'_>, b: f64, s: &[f64], hh: &[f64], ito: &[f64], dx: f64) -> bool {
    let drift_at = |bx: &UncertaintyBox, v: Vertex| {
        let mut acc = b.abs();
        for j in 0..s.len() {
            acc += (hh[j] + ito[j]).abs() * bx.value(v, j);
        }
        acc
    };
    let diff_at = |bx: &UncertaintyBox, v: Vertex| {
        let mut acc = 0.0;
        for j in 0..s.len() {
            acc += s[j] * bx.value(v, j);
        }
        acc / dx
    };
    match rule {
        CentralRule::Joint(bx) => bx.vertices().all(|v| drift_at(bx, v) <= diff_at(bx, v)),
        CentralRule::Split { drift, diffusion } => {
            let worst_drift = drift.vertices().map(|v| drift_at(drift, v)).fold(0.0, f64::max);
            let least_diff = diffusion
                .vertices()
                .map(|v| diff_at(diffusion, v))
                .fold(f64::INFINITY, f64::min);
            worst_drift <= least_diff
        }
    }
}

/// Largest stable time step of `model` on the spatial part of `grid`.
/// Time-dependent coefficients are probed at 100 equally spaced times.
pub fn max_stable_dt(model: &ModelSpec, grid: &GridSpec) -> Result<f64> {
    let mut probe = grid.clone();
    probe.nt = 100;
    Ok(Discretization::analyze(model, &probe)?.max_dt())
}

/// Number of steps so that `Δt ≤ fraction · max_dt` on `grid`'s horizon.
pub fn cfl_steps(model: &ModelSpec, grid: &GridSpec, fraction: f64) -> Result<usize> {
    let max_dt = max_stable_dt(model, grid)?;
    if !max_dt.is_finite() {
        return Ok(1);
    }
    let mut nt = (grid.horizon / (fraction * max_dt)).ceil().max(1.0) as usize;
    loop {
        let mut g = grid.clone();
        g.nt = nt;
        match Discretization::new(model, &g) {
            Ok(_) => return Ok(nt),
            Err(Error::Cfl { .. }) => nt = nt + nt / 10 + 1,
            Err(e) => return Err(e),
        }
    }
}

/// Terminal row `Φ(x_k)` on the grid.
pub fn terminal_row(terminal: &FieldExpr, grid: &GridSpec) -> Result<Vec<f64>> {
    grid.sample(|x| terminal.eval(&Point::x(x)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::uncertainty::UncertaintyBox;

    fn heat(lo: f64, hi: f64, phi: &str) -> ModelSpec {
        ModelSpec::heat(
            UncertaintyBox::single(lo, hi).unwrap(),
            FieldExpr::parse(phi).unwrap(),
            Mode::Inf,
        )
    }

    #[test]
    fn three_node_stencil_by_hand() {
        let h = 0.5;
        let dt = 0.05;
        let grid = GridSpec::uniform(-h, h, 3, dt, 1).unwrap();
        let next = vec![h * h, 0.0, h * h];
        for (lo, hi, mode, want) in [
            (1.0, 1.0, Mode::Inf, dt),
            (1.0, 4.0, Mode::Inf, dt),
            (1.0, 4.0, Mode::Sup, 4.0 * dt),
        ] {
            let disc = Discretization::new(&heat(lo, hi, "x*x"), &grid).unwrap();
            for row in [
                disc.weight_step(0, &next, mode, Running::Evaluate(&next)).unwrap(),
                disc.operator_step(0, &next, mode, Running::Evaluate(&next)).unwrap(),
            ] {
                assert!((row.values[1] - want).abs() < 1e-15, "{} vs {want}", row.values[1]);
                assert_eq!(row.values[0], h * h);
                assert_eq!(row.values[2], h * h);
            }
        }
    }

    #[test]
    fn cfl_violation_reports_limit() {
        let grid = GridSpec::uniform(-1.0, 1.0, 21, 1.0, 10).unwrap();
        match Discretization::new(&heat(1.0, 4.0, "x"), &grid) {
            Err(Error::Cfl { dt, max_dt }) => {
                assert_eq!(dt, 0.1);
                assert!((max_dt - 0.01 / 4.0).abs() < 1e-15);
            }
            other => panic!("expected CFL error, got {other:?}"),
        }
        let nt = cfl_steps(&heat(1.0, 4.0, "x"), &grid, 0.9).unwrap();
        let mut g = grid.clone();
        g.nt = nt;
        assert!(g.dt() <= 0.9 * 0.0025 * (1.0 + 1e-12));
        Discretization::new(&heat(1.0, 4.0, "x"), &g).unwrap();
    }

    #[test]
    fn routes_agree_on_general_model() {
        let mut m = heat(0.2, 0.6, "max(x-0.3,0)-max(x-1,0)");
        m.drift[0] = FieldExpr::parse("0.3*sin(x)").unwrap();
        m.h[0][0] = FieldExpr::parse("-0.5+0.2*x").unwrap();
        m.sigma[0][0] = FieldExpr::parse("1+0.1*cos(x)").unwrap();
        m.driver_g = FieldExpr::parse("0.1*cos(y)-0.05*y").unwrap();
        m.driver_f[0] = FieldExpr::parse("0.2*x-0.1*y").unwrap();
        m.lipschitz = 0.15;
        let mut grid = GridSpec::uniform(-3.0, 3.0, 61, 0.5, 1).unwrap();
        grid.nt = cfl_steps(&m, &grid, 0.9).unwrap();
        let disc = Discretization::new(&m, &grid).unwrap();
        let next = terminal_row(&m.terminal, &grid).unwrap();
        for mode in [Mode::Inf, Mode::Sup] {
            let a = disc.weight_step(0, &next, mode, Running::Evaluate(&next)).unwrap();
            let b = disc.operator_step(0, &next, mode, Running::Evaluate(&next)).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                assert!((x - y).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn step_is_monotone() {
        let mut m = heat(0.2, 0.6, "0");
        m.drift[0] = FieldExpr::parse("2*x").unwrap();
        m.h[0][0] = FieldExpr::parse("-3").unwrap();
        let mut grid = GridSpec::uniform(-2.0, 2.0, 41, 0.2, 1).unwrap();
        grid.nt = cfl_steps(&m, &grid, 1.0).unwrap();
        let disc = Discretization::new(&m, &grid).unwrap();
        let base: Vec<f64> = (0..41).map(|i| ((i * 37) % 11) as f64 * 0.1).collect();
        let r0 = disc.weight_step(0, &base, Mode::Inf, Running::Evaluate(&base)).unwrap();
        for bump in 0..41 {
            let mut up = base.clone();
            up[bump] += 0.5;
            let r1 = disc.weight_step(0, &up, Mode::Inf, Running::Evaluate(&up)).unwrap();
            for (a, b) in r0.values.iter().zip(&r1.values) {
                assert!(b >= a);
            }
        }
    }
}

//! Backward SDEs driven by G-Brownian motion, solved on the grid.
//!
//! [`picard_solve`] freezes the `y` argument of the drivers at the previous
//! iterate, so every sweep is a y-free problem; its fixed point is the same
//! discrete surface the direct solver produces. [`linear_bsde_solve`] treats
//! linear drivers without iteration, and [`comparison_check`] orders the
//! solutions of two problems.

use serde::{Deserialize, Serialize};

use crate::csv::{fmt17, CsvTable};
use crate::error::{Error, Result};
use crate::expr::{FieldExpr, Point, Var};
use crate::lattice::{GridSpec, TreeSpec, ValueSurface};
use crate::model::ModelSpec;
use crate::scheme::{terminal_row, Discretization, DriverSource, Route, Running};
use crate::uncertainty::{Band, Mode, UncertaintyBox};

/// Starting surface of the Picard iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialGuess {
    /// The same constant at every node.
    Constant(f64),
    /// The terminal payoff at every time.
    Terminal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PicardOptions {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Weight of the time-weighted norm; `None` picks `K(1 + max variance)`.
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default = "default_initial")]
    pub initial: InitialGuess,
}

fn default_tol() -> f64 {
    1e-8
}

fn default_max_iter() -> usize {
    200
}

fn default_initial() -> InitialGuess {
    InitialGuess::Constant(0.0)
}

impl Default for PicardOptions {
    fn default() -> Self {
        PicardOptions {
            tol: default_tol(),
            max_iter: default_max_iter(),
            beta: None,
            initial: default_initial(),
        }
    }
}

/// One row per iteration: the weighted-norm size of the update and its
/// ratio to the previous one.
#[derive(Debug, Clone, PartialEq)]
pub struct PicardDiagnostics {
    pub beta: f64,
    pub deltas: Vec<f64>,
    pub sup_deltas: Vec<f64>,
    pub converged: bool,
}

impl PicardDiagnostics {
    pub fn iterations(&self) -> usize {
        self.deltas.len()
    }

    /// `delta_i / delta_{i-1}`; undefined for the first iteration or after an
    /// exact zero.
    pub fn ratio(&self, i: usize) -> Option<f64> {
        if i == 0 || self.deltas[i - 1] == 0.0 {
            None
        } else {
            Some(self.deltas[i] / self.deltas[i - 1])
        }
    }

    /// `iter,delta,ratio` with iterations numbered from 1.
    pub fn to_csv(&self) -> String {
        let mut t = CsvTable::new(["iter", "delta", "ratio"]);
        for (i, d) in self.deltas.iter().enumerate() {
            t.push(vec![
                (i + 1).to_string(),
                fmt17(*d),
                self.ratio(i).map(fmt17).unwrap_or_default(),
            ]);
        }
        t.render()
    }
}

/// Default weight `β = K(1 + max_j v̄_j)`.
pub fn default_beta(model: &ModelSpec) -> f64 {
    let vmax = (0..model.box_dim()).map(|j| model.max_variance(j)).fold(0.0, f64::max);
    model.lipschitz * (1.0 + vmax)
}

/// `(∫₀ᵀ e^{2βt} max_x |d(t,x)|² dt)^{1/2}` by the trapezoid rule on the grid times.
pub fn weighted_norm(diff_rows: &[f64], grid: &GridSpec, beta: f64) -> f64 {
    let nodes = grid.nodes();
    let dt = grid.dt();
    let mut acc = 0.0;
    for n in 0..=grid.nt {
        let m = diff_rows[n * nodes..(n + 1) * nodes]
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()));
        let w = if n == 0 || n == grid.nt { 0.5 } else { 1.0 };
        acc += w * dt * (2.0 * beta * grid.time(n)).exp() * m * m;
    }
    acc.sqrt()
}

/// Picard iteration `Y^{i+1} = Φ(Y^i)` where `Φ` sweeps backward with the
/// drivers evaluated at the frozen iterate. Stops once both the weighted
/// norm and the maximum of the update are at most `tol`.
pub fn picard_solve(model: &ModelSpec, grid: &GridSpec, opts: &PicardOptions) -> Result<(ValueSurface, PicardDiagnostics)> {
    if model.multi_band.is_some() {
        return Err(Error::Invalid("Picard iteration needs a single-box model".into()));
    }
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(Error::Invalid("Picard needs tol > 0 and at least one iteration".into()));
    }
    let beta = opts.beta.unwrap_or_else(|| default_beta(model));
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::Invalid(format!("beta must be nonnegative, got {beta}")));
    }
    let disc = Discretization::new(model, grid)?;
    let terminal = terminal_row(&model.terminal, grid)?;
    let nodes = grid.nodes();
    let mut current: Vec<f64> = match opts.initial {
        InitialGuess::Constant(c) => vec![c; nodes * (grid.nt + 1)],
        InitialGuess::Terminal => terminal.repeat(grid.nt + 1),
    };
    let mut diag = PicardDiagnostics {
        beta,
        deltas: Vec::new(),
        sup_deltas: Vec::new(),
        converged: false,
    };
    for _ in 0..opts.max_iter {
        let sweep = disc.sweep(
            Route::Operator,
            model.mode,
            grid.nt,
            terminal.clone(),
            DriverSource::Frozen(&current),
        )?;
        let next = sweep.rows.concat();
        let diff: Vec<f64> = next.iter().zip(&current).map(|(a, b)| a - b).collect();
        let delta = weighted_norm(&diff, grid, beta);
        let sup = diff.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        diag.deltas.push(delta);
        diag.sup_deltas.push(sup);
        current = next;
        if delta <= opts.tol && sup <= opts.tol {
            diag.converged = true;
            break;
        }
    }
    if !diag.converged {
        return Err(Error::NoConvergence {
            iterations: diag.iterations(),
            last_delta: diag.deltas.last().copied().unwrap_or(f64::NAN),
        });
    }
    Ok((ValueSurface { grid: grid.clone(), values: current }, diag))
}

/// Linear problem in one dimension with driver `g = a(t)·y + A(t, x)`,
/// `f = b·y + C(t, x)` and unit volatility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearBsde {
    pub band: Band,
    /// Function of `t` only.
    pub a: FieldExpr,
    #[serde(default)]
    pub b: f64,
    #[serde(rename = "A")]
    pub big_a: FieldExpr,
    #[serde(rename = "C")]
    pub big_c: FieldExpr,
    pub terminal: FieldExpr,
    pub mode: Mode,
}

impl LinearBsde {
    fn validate(&self) -> Result<()> {
        if self.a.uses(Var::Y) || self.a.state_arity() > 0 {
            return Err(Error::Invalid(format!("a(t) = `{}` may only depend on t", self.a)));
        }
        for e in [&self.big_a, &self.big_c, &self.terminal] {
            if e.uses(Var::Y) {
                return Err(Error::Invalid(format!("`{e}` may not depend on y")));
            }
            if e.state_arity() > 1 {
                return Err(Error::Dimension(format!("`{e}` must be one-dimensional")));
            }
        }
        if !self.b.is_finite() {
            return Err(Error::Invalid("b must be finite".into()));
        }
        Ok(())
    }

    fn a_at(&self, t: f64) -> Result<f64> {
        self.a.eval(&Point {
            t: Some(t),
            x: &[],
            y: None,
        })
    }

    /// Equivalent general model; the Lipschitz constant is `max(sup|a|, |b|)`
    /// with `sup|a|` sampled on the step times of `horizon / steps`.
    pub fn model(&self, horizon: f64, steps: usize) -> Result<ModelSpec> {
        self.validate()?;
        let mut sup_a: f64 = 0.0;
        for n in 0..=steps.max(1) {
            sup_a = sup_a.max(self.a_at(horizon * n as f64 / steps.max(1) as f64)?.abs());
        }
        let y = || Box::new(FieldExpr::y());
        let g = FieldExpr::Add(Box::new(FieldExpr::Mul(Box::new(self.a.clone()), y())), Box::new(self.big_a.clone()));
        let f = FieldExpr::Add(
            Box::new(FieldExpr::Mul(Box::new(FieldExpr::num(self.b)), y())),
            Box::new(self.big_c.clone()),
        );
        let mut m = ModelSpec::heat(UncertaintyBox::new(vec![self.band])?, self.terminal.clone(), self.mode);
        m.driver_g = g;
        m.driver_f[0] = f;
        m.lipschitz = sup_a.max(self.b.abs());
        Ok(m)
    }
}

/// Where a linear problem is solved.
#[derive(Debug, Clone, PartialEq)]
pub enum LinearDomain {
    /// Full surface on a grid; requires `b = 0`.
    Grid(GridSpec),
    /// Root value on a small tree, by enumerating adapted policies.
    Tree(TreeSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub enum LinearSolution {
    Surface(ValueSurface),
    Root(f64),
}

pub fn linear_bsde_solve(problem: &LinearBsde, domain: &LinearDomain) -> Result<LinearSolution> {
    problem.validate()?;
    match domain {
        LinearDomain::Grid(grid) => {
            if problem.b != 0.0 {
                return Err(Error::Invalid(
                    "a y-dependent f needs the tree domain; the grid form requires b = 0".into(),
                ));
            }
            Ok(LinearSolution::Surface(linear_on_grid(problem, grid)?))
        }
        LinearDomain::Tree(tree) => Ok(LinearSolution::Root(linear_on_tree(problem, tree)?)),
    }
}

/// With `b = 0` the factor `Q_{n+1} = Q_n(1 + a(t_{n+1})Δt)` removes the
/// `y` term: `W_n = Q_n Y_n` solves a y-free recursion with running terms
/// `Q_n·A` and `Q_n·C`.
fn linear_on_grid(problem: &LinearBsde, grid: &GridSpec) -> Result<ValueSurface> {
    let full = problem.model(grid.horizon, grid.nt)?;
    // Stability is judged on the original problem.
    Discretization::new(&full, grid)?;
    let mut free = full.clone();
    free.driver_g = FieldExpr::zero();
    free.driver_f[0] = FieldExpr::zero();
    free.lipschitz = 0.0;
    let disc = Discretization::new(&free, grid)?;
    let dt = grid.dt();
    let nt = grid.nt;
    let mut q = vec![1.0; nt + 1];
    for n in 0..nt {
        let factor = 1.0 + problem.a_at(grid.time(n + 1))? * dt;
        if factor <= 0.0 {
            return Err(Error::Invalid(format!("1 + a·dt = {factor} is not positive")));
        }
        q[n + 1] = q[n] * factor;
    }
    let nodes = grid.nodes();
    let xs: Vec<f64> = (0..nodes).map(|k| grid.point(k)[0]).collect();
    let mut rows = vec![Vec::new(); nt + 1];
    let mut w: Vec<f64> = terminal_row(&problem.terminal, grid)?.iter().map(|v| v * q[nt]).collect();
    rows[nt] = w.iter().map(|v| v / q[nt]).collect();
    for n in (0..nt).rev() {
        let t1 = grid.time(n + 1);
        let mut ga = Vec::with_capacity(nodes);
        let mut fc = Vec::with_capacity(nodes);
        for x in &xs {
            let p = Point {
                t: Some(t1),
                x: std::slice::from_ref(x),
                y: None,
            };
            ga.push(q[n] * problem.big_a.eval(&p)?);
            fc.push(q[n] * problem.big_c.eval(&p)?);
        }
        let step = disc.operator_step(
            n,
            &w,
            problem.mode,
            Running::Given {
                g: Some(&ga),
                f: Some(&fc),
            },
        )?;
        w = step.values;
        rows[n] = w.iter().map(|v| v / q[n]).collect();
    }
    ValueSurface::from_rows(grid.clone(), rows)
}

/// Optimum over adapted policies (one control per node of the
/// non-recombining tree) of the forward weighted sum
///
/// ```text
/// Y₀ = Σ_paths Γ_path·ξ + Σ_n Σ_prefixes Γ_prefix·ρ_n,
/// ```
///
/// where each step multiplies `Γ` by `p_w(1 + aΔt)` (plus `Δt·α·b` on the
/// middle branch) and `ρ_n = Δt·Σ_w p_w A(t_{n+1}, x + w) + Δt·α·C(t_{n+1}, x)`.
fn linear_on_tree(problem: &LinearBsde, tree: &TreeSpec) -> Result<f64> {
    tree.validate()?;
    let m = tree.steps;
    let na = tree.controls.len();
    let decision_nodes: usize = (0..m).map(|n| 3usize.pow(n as u32)).sum();
    let count = (na as f64).powi(decision_nodes as i32);
    if count > crate::lattice::POLICY_BUDGET {
        return Err(Error::Budget {
            count,
            budget: crate::lattice::POLICY_BUDGET,
        });
    }
    let eval = |e: &FieldExpr, t: f64, off: i64| -> Result<f64> {
        e.eval(&Point {
            t: Some(t),
            x: &[tree.x(off)],
            y: None,
        })
    };
    let a: Vec<f64> = (0..m).map(|n| problem.a_at(tree.time(n + 1))).collect::<Result<_>>()?;
    let mut choice = vec![0usize; decision_nodes];
    let mut best: Option<f64> = None;
    for policy in 0..count as usize {
        let mut rest = policy;
        for c in choice.iter_mut() {
            *c = rest % na;
            rest /= na;
        }
        let mut ctx = TreeWalk {
            tree,
            problem,
            a: &a,
            choice: &choice,
            eval: &eval,
        };
        let v = ctx.walk(0, 0, 0, 1.0)?;
        best = Some(match best {
            Some(b) if !problem.mode.better(v, b) => b,
            _ => v,
        });
    }
    Ok(best.unwrap_or(0.0))
}

struct TreeWalk<'a, E> {
    tree: &'a TreeSpec,
    problem: &'a LinearBsde,
    a: &'a [f64],
    choice: &'a [usize],
    eval: &'a E,
}

impl<E: Fn(&FieldExpr, f64, i64) -> Result<f64>> TreeWalk<'_, E> {
    /// Contribution of the subtree at step `n`, offset `off` and history
    /// index `idx` (base-3 digits of the moves so far), weighted by `gamma`.
    fn walk(&mut self, n: usize, off: i64, idx: usize, gamma: f64) -> Result<f64> {
        let tree = self.tree;
        if n == tree.steps {
            return Ok(gamma * (self.eval)(&self.problem.terminal, 0.0, off)?);
        }
        let node = (3usize.pow(n as u32) - 1) / 2 + idx;
        let alpha = tree.controls[self.choice[node]];
        let p = tree.prob(alpha);
        let dt = tree.dt;
        let t1 = tree.time(n + 1);
        let growth = 1.0 + self.a[n] * dt;
        let mut total = gamma * dt * alpha * (self.eval)(&self.problem.big_c, t1, off)?;
        for (w, mv) in [-1i64, 0, 1].into_iter().enumerate() {
            let pw = if mv == 0 { 1.0 - 2.0 * p } else { p };
            total += gamma * dt * pw * (self.eval)(&self.problem.big_a, t1, off + mv)?;
            let mut c = pw * growth;
            if mv == 0 {
                c += dt * alpha * self.problem.b;
            }
            if c != 0.0 {
                total += self.walk(n + 1, off + mv, idx * 3 + w, gamma * c)?;
            }
        }
        Ok(total)
    }
}

/// Outcome of comparing `Y` (first problem) against `Ȳ` (second).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    /// `min (Y − Ȳ)` over every node and time.
    pub min_difference: f64,
    /// Sampled points where the data failed to dominate.
    pub hypothesis_violations: usize,
    pub hypothesis_samples: usize,
}

impl ComparisonReport {
    pub fn ordered(&self, tol: f64) -> bool {
        self.min_difference >= -tol
    }
}

/// Solves both problems on `grid` and reports the smallest difference,
/// together with a sampled check of the data ordering
/// `ξ ≥ ξ̄`, `g ≥ ḡ`, `f_j ≥ f̄_j` on 50 states × 50 values of `y` at the
/// first, middle and last time. The check is reported, not enforced.
pub fn comparison_check(model: &ModelSpec, bar: &ModelSpec, grid: &GridSpec, y_range: (f64, f64)) -> Result<ComparisonReport> {
    if model.mode != bar.mode {
        return Err(Error::Invalid("compared problems must share the same mode".into()));
    }
    let (y, _) = crate::pde::solve_hjb(model, grid)?;
    let (ybar, _) = crate::pde::solve_hjb(bar, grid)?;
    let min_difference = y
        .values
        .iter()
        .zip(&ybar.values)
        .map(|(a, b)| a - b)
        .fold(f64::INFINITY, f64::min);

    const SAMPLES: usize = 50;
    let mut violations = 0;
    let mut samples = 0;
    let slack = 1e-12;
    for i in 0..SAMPLES {
        let pt = grid.point(i * (grid.nodes() - 1) / (SAMPLES - 1));
        let x = &pt[..grid.dims()];
        samples += 1;
        if model.terminal.eval(&Point::x(x))? < bar.terminal.eval(&Point::x(x))? - slack {
            violations += 1;
        }
        for t in [0.0, 0.5 * grid.horizon, grid.horizon] {
            for l in 0..SAMPLES {
                let yv = y_range.0 + (y_range.1 - y_range.0) * l as f64 / (SAMPLES - 1) as f64;
                let p = Point::txy(t, x, yv);
                samples += 1;
                let mut ok = model.driver_g.eval(&p)? >= bar.driver_g.eval(&p)? - slack;
                for (f, fb) in model.driver_f.iter().zip(&bar.driver_f) {
                    ok &= f.eval(&p)? >= fb.eval(&p)? - slack;
                }
                if !ok {
                    violations += 1;
                }
            }
        }
    }
    Ok(ComparisonReport {
        min_difference,
        hypothesis_violations: violations,
        hypothesis_samples: samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pde::solve_hjb;

    fn heat_model() -> (ModelSpec, GridSpec) {
        let bx = UncertaintyBox::single(0.25, 1.0).unwrap();
        let m = ModelSpec::heat(bx, FieldExpr::parse("max(x,0)").unwrap(), Mode::Inf)
            .with_driver_g(FieldExpr::parse("-0.05*y+0.1*cos(y)").unwrap(), 0.15);
        let mut g = GridSpec::uniform(-4.0, 4.0, 81, 1.0, 1).unwrap();
        g.nt = crate::scheme::cfl_steps(&m, &g, 0.9).unwrap();
        (m, g)
    }

    #[test]
    fn picard_reaches_direct_solution() {
        let (m, g) = heat_model();
        let (direct, _) = solve_hjb(&m, &g).unwrap();
        let (pic, diag) = picard_solve(&m, &g, &PicardOptions::default()).unwrap();
        assert!(diag.converged);
        assert!(pic.max_abs_diff(&direct, |_, _| true) <= 1e-7);
        let csv = diag.to_csv();
        assert!(csv.starts_with("iter,delta,ratio\n1,"));
        assert_eq!(csv.lines().nth(1).unwrap().split(',').nth(2), Some(""));
    }

    #[test]
    fn picard_reports_non_convergence() {
        let (m, g) = heat_model();
        let opts = PicardOptions {
            max_iter: 2,
            ..PicardOptions::default()
        };
        assert!(matches!(picard_solve(&m, &g, &opts), Err(Error::NoConvergence { iterations: 2, .. })));
    }

    #[test]
    fn weighted_norm_of_constant() {
        let g = GridSpec::uniform(0.0, 1.0, 3, 1.0, 4).unwrap();
        let d = vec![2.0; 15];
        assert!((weighted_norm(&d, &g, 0.0) - 2.0).abs() < 1e-15);
    }

    fn linear(b: f64) -> LinearBsde {
        LinearBsde {
            band: Band::new(0.5, 1.5).unwrap(),
            a: FieldExpr::parse("-0.05+0.02*t").unwrap(),
            b,
            big_a: FieldExpr::parse("0.1*sin(x)").unwrap(),
            big_c: FieldExpr::parse("0.2*x").unwrap(),
            terminal: FieldExpr::parse("max(x-0.1,0)-0.5*max(x-0.5,0)").unwrap(),
            mode: Mode::Sup,
        }
    }

    #[test]
    fn grid_regime_matches_direct_solver() {
        let p = linear(0.0);
        let mut g = GridSpec::uniform(-3.0, 3.0, 61, 0.5, 1).unwrap();
        let m = p.model(0.5, 1).unwrap();
        g.nt = crate::scheme::cfl_steps(&m, &g, 0.9).unwrap();
        let m = p.model(g.horizon, g.nt).unwrap();
        let (direct, _) = solve_hjb(&m, &g).unwrap();
        let LinearSolution::Surface(s) = linear_bsde_solve(&p, &LinearDomain::Grid(g)).unwrap() else {
            panic!("expected a surface");
        };
        assert!(s.max_abs_diff(&direct, |_, _| true) <= 1e-12);
    }

    #[test]
    fn tree_regime_matches_lattice() {
        let tree = TreeSpec::new(3, 0.5, 0.1, 0.05, vec![0.5, 1.5]).unwrap();
        for b in [0.0, 0.5] {
            let p = linear(b);
            let model = p.model(tree.horizon(), tree.steps).unwrap();
            let (_, grid, root) = tree
                .lattice_setup(&p.terminal, &Default::default())
                .unwrap();
            let mut full = model.clone();
            full.mode = p.mode;
            let (s, _) = solve_hjb(&full, &grid).unwrap();
            let LinearSolution::Root(v) = linear_bsde_solve(&p, &LinearDomain::Tree(tree.clone())).unwrap() else {
                panic!("expected a root value");
            };
            assert!((v - s.at(0, root)).abs() < 1e-12, "b={b}: {v} vs {}", s.at(0, root));
        }
    }

    #[test]
    fn grid_regime_rejects_y_dependent_f() {
        let g = GridSpec::uniform(-3.0, 3.0, 31, 0.5, 100).unwrap();
        assert!(linear_bsde_solve(&linear(0.5), &LinearDomain::Grid(g)).is_err());
    }

    #[test]
    fn comparison_of_shifted_problems() {
        let (m, g) = heat_model();
        let mut up = m.clone();
        up.terminal = FieldExpr::parse("max(x,0)+0.1*exp(-x*x)").unwrap();
        up.driver_g = FieldExpr::parse("-0.05*y+0.1*cos(y)+0.02").unwrap();
        let r = comparison_check(&up, &m, &g, (-5.0, 5.0)).unwrap();
        assert!(r.ordered(1e-12));
        assert_eq!(r.hypothesis_violations, 0);
        let r = comparison_check(&m, &up, &g, (-5.0, 5.0)).unwrap();
        assert!(!r.ordered(1e-6));
        assert!(r.hypothesis_violations > 0);
    }
}

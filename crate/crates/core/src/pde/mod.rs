//! Monotone explicit finite-difference solvers for the HJB, G-heat and
//! Black–Scholes–Barenblatt equations.

mod bsb;

pub use bsb::{bsb_price, default_bsb_grid, bsb_model, BsbResult, BsbSpec, Side};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::expr::{FieldExpr, Point};
use crate::lattice::{ControlPolicy, GridSpec, ValueSurface};
use crate::model::ModelSpec;
use crate::scheme::{terminal_row, Discretization, DriverSource, Route};
use crate::uncertainty::{g_function, optimize_vertices, Mode, UncertaintyBox};

/// Backward recursion `u^n = ũ^{n+1} + Δt·opt_v{ℒ(x, v)ũ^{n+1} + f·v}` in
/// operator form, with the direction taken from `model.mode`.
pub fn solve_hjb(model: &ModelSpec, grid: &GridSpec) -> Result<(ValueSurface, ControlPolicy)> {
    if model.multi_band.is_some() {
        return Err(Error::Invalid("use multi_band_hjb for three-band models".into()));
    }
    let disc = Discretization::new(model, grid)?;
    hjb_with(&disc, model.mode, terminal_row(&model.terminal, grid)?)
}

pub(crate) fn hjb_with(disc: &Discretization, mode: Mode, terminal: Vec<f64>) -> Result<(ValueSurface, ControlPolicy)> {
    let grid = disc.grid().clone();
    let sweep = disc.sweep(Route::Operator, mode, grid.nt, terminal, DriverSource::Own)?;
    let policy = ControlPolicy {
        uncertainty: disc.model().uncertainty.clone(),
        vertices: sweep.policy.concat(),
        grid: grid.clone(),
    };
    Ok((ValueSurface::from_rows(grid, sweep.rows)?, policy))
}

/// Three-band variant: the `h` drift, diffusion and `f` terms are optimized
/// independently over `gamma1`, `gamma2` and `gamma3`.
pub fn multi_band_hjb(model: &ModelSpec, grid: &GridSpec) -> Result<ValueSurface> {
    if model.multi_band.is_none() {
        return Err(Error::Invalid("model has no three-band boxes".into()));
    }
    if model.state_dim() != 1 {
        return Err(Error::Dimension("three-band solver is one-dimensional".into()));
    }
    let disc = Discretization::new(model, grid)?;
    let sweep = disc.sweep(
        Route::Operator,
        model.mode,
        grid.nt,
        terminal_row(&model.terminal, grid)?,
        DriverSource::Own,
    )?;
    ValueSurface::from_rows(grid.clone(), sweep.rows)
}

/// Nonlinear heat equation `∂_t u + G(D²u) = 0`, `u(T) = φ`, with diagonal
/// `G(A) = Σ_μ ½ opt_{v_μ} v_μ A_μμ`: each dimension picks the endpoint of
/// its own band from the sign of its second difference.
pub fn solve_gheat(phi: &FieldExpr, bx: &UncertaintyBox, grid: &GridSpec, mode: Mode) -> Result<ValueSurface> {
    if grid.log_space {
        return Err(Error::InvalidGrid("the G-heat solver works on linear grids".into()));
    }
    if bx.dim() != grid.dims() {
        return Err(Error::Dimension(format!(
            "box dimension {} differs from grid dimension {}",
            bx.dim(),
            grid.dims()
        )));
    }
    // The stability limit is that of the equivalent heat model.
    Discretization::new(&ModelSpec::heat(bx.clone(), phi.clone(), mode), grid)?;
    let start = terminal_row(phi, grid)?;
    let rows = gheat_rows(bx, grid, mode, grid.nt, start)?;
    ValueSurface::from_rows(grid.clone(), rows)
}

/// Rows `0..=n0` of the G-heat recursion started from `start` at row `n0`.
pub fn gheat_rows(bx: &UncertaintyBox, grid: &GridSpec, mode: Mode, n0: usize, start: Vec<f64>) -> Result<Vec<Vec<f64>>> {
    let dt = grid.dt();
    let dims = grid.dims();
    let strides: Vec<usize> = (0..dims).map(|mu| grid.stride(mu)).collect();
    let spacing: Vec<f64> = (0..dims).map(|mu| grid.spacing(mu)).collect();
    let mut rows = vec![Vec::new(); n0 + 1];
    rows[n0] = start;
    for n in (0..n0).rev() {
        let next = &rows[n + 1];
        let row: Vec<f64> = (0..next.len())
            .into_par_iter()
            .map(|k| {
                let mut acc = 0.0;
                for mu in 0..dims {
                    let i = grid.index_of(k, mu);
                    if i == 0 || i + 1 == grid.axes[mu].n {
                        continue;
                    }
                    let h = spacing[mu];
                    let d2 = (next[k + strides[mu]] - 2.0 * next[k] + next[k - strides[mu]]) / (h * h);
                    acc += g_function(d2, bx.band(mu), mode).value;
                }
                next[k] + dt * acc
            })
            .collect();
        if let Some(k) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: n, node: k });
        }
        rows[n] = row;
    }
    Ok(rows)
}

/// Largest `|∂_t u + opt_v{ℒ(x, v)u + g(x, u) + f(x, u)·v}|` over the nodes
/// of `grid` at rows `0..nt`, for a claimed smooth solution `u(t, x)`.
///
/// Time and first space derivatives use centered differences with step
/// 1e-5; second derivatives use the fourth-order five-point stencil with
/// step 1e-3, which keeps rounding well below 1e-8 for moderate `u`.
pub fn residual_check(u: &FieldExpr, model: &ModelSpec, grid: &GridSpec) -> Result<f64> {
    model.validate()?;
    grid.validate()?;
    if grid.dims() != model.state_dim() {
        return Err(Error::Dimension("grid and model dimensions differ".into()));
    }
    const H1: f64 = 1e-5;
    const H2: f64 = 1e-3;
    let dims = grid.dims();
    let d = model.box_dim();
    let points: Vec<(f64, [f64; 2])> = (0..grid.nt)
        .flat_map(|n| (0..grid.nodes()).map(move |k| (n, k)))
        .map(|(n, k)| (grid.time(n), grid.point(k)))
        .collect();
    let residuals: Vec<Result<f64>> = points
        .par_iter()
        .map(|&(t, p)| {
            let x = &p[..dims];
            let at = |t: f64, x: &[f64]| u.eval(&Point { t: Some(t), x, y: None });
            let shifted = |mu: usize, delta: f64| {
                let mut q = p;
                q[mu] += delta;
                at(t, &q[..dims])
            };
            let u0 = at(t, x)?;
            let ut = (at(t + H1, x)? - at(t - H1, x)?) / (2.0 * H1);
            let mut du = [0.0; 2];
            let mut d2u = [0.0; 2];
            for mu in 0..dims {
                du[mu] = (shifted(mu, H1)? - shifted(mu, -H1)?) / (2.0 * H1);
                d2u[mu] = (-shifted(mu, 2.0 * H2)? + 16.0 * shifted(mu, H2)? - 30.0 * u0 + 16.0 * shifted(mu, -H2)?
                    - shifted(mu, -2.0 * H2)?)
                    / (12.0 * H2 * H2);
            }
            let pt = Point::txy(t, x, u0);
            let mut base = model.driver_g.eval(&pt)?;
            for mu in 0..dims {
                base += model.drift[mu].eval(&pt)? * du[mu];
            }
            let mut c = vec![0.0; d];
            for (j, cj) in c.iter_mut().enumerate() {
                *cj = model.driver_f[j].eval(&pt)?;
                for mu in 0..dims {
                    let s = model.sigma[mu][j].eval(&pt)?;
                    *cj += model.h[mu][j].eval(&pt)? * du[mu] + 0.5 * s * s * d2u[mu];
                }
            }
            let bx = &model.uncertainty;
            let best = optimize_vertices(bx, model.mode, |v| {
                (0..d).map(|j| bx.value(v, j) * c[j]).sum::<f64>()
            });
            Ok((ut + base + best.value).abs())
        })
        .collect();
    let mut worst: f64 = 0.0;
    for r in residuals {
        worst = worst.max(r?);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::conditional_expectation;
    use crate::model::MultiBand;
    use crate::scheme::cfl_steps;

    fn grid_for(m: &ModelSpec, lo: f64, hi: f64, nx: usize) -> GridSpec {
        let mut g = GridSpec::uniform(lo, hi, nx, 1.0, 1).unwrap();
        g.nt = cfl_steps(m, &g, 0.9).unwrap();
        g
    }

    fn heat(phi: &str, lo: f64, hi: f64) -> ModelSpec {
        ModelSpec::heat(
            UncertaintyBox::single(lo, hi).unwrap(),
            FieldExpr::parse(phi).unwrap(),
            Mode::Inf,
        )
    }

    #[test]
    fn hjb_equals_gheat_bitwise() {
        for mode in [Mode::Inf, Mode::Sup] {
            let m = heat("max(x-0.5,0)-2*max(x,0)+max(x+0.5,0)", 0.25, 1.0).with_mode(mode);
            let g = grid_for(&m, -5.0, 5.0, 101);
            let (a, _) = solve_hjb(&m, &g).unwrap();
            let b = solve_gheat(&m.terminal, &m.uncertainty, &g, mode).unwrap();
            assert_eq!(a.values, b.values);
        }
    }

    #[test]
    fn hjb_equals_gheat_bitwise_in_two_dimensions() {
        let bx = UncertaintyBox::new(vec![
            crate::uncertainty::Band::new(0.25, 1.0).unwrap(),
            crate::uncertainty::Band::new(0.5, 0.75).unwrap(),
        ])
        .unwrap();
        let phi = FieldExpr::parse("max(x1+x2,0)-max(x1-x2-1,0)").unwrap();
        let m = ModelSpec::heat(bx.clone(), phi.clone(), Mode::Sup);
        let mut g = GridSpec {
            axes: vec![
                crate::lattice::Axis { min: -3.0, max: 3.0, n: 31 },
                crate::lattice::Axis { min: -3.0, max: 3.0, n: 25 },
            ],
            horizon: 0.5,
            nt: 1,
            log_space: false,
        };
        g.nt = cfl_steps(&m, &g, 0.9).unwrap();
        let (a, _) = solve_hjb(&m, &g).unwrap();
        let b = solve_gheat(&phi, &bx, &g, Mode::Sup).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn manufactured_quadratic() {
        let m = heat("x*x", 0.25, 1.0);
        let g = grid_for(&m, -8.0, 8.0, 161);
        let (s, _) = solve_hjb(&m, &g).unwrap();
        for n in 0..g.rows() {
            for k in 0..g.nodes() {
                if g.is_interior(k, 0.3) {
                    let x = g.coord(0, k);
                    let want = x * x + 0.25 * (1.0 - g.time(n));
                    assert!((s.at(n, k) - want).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn lattice_and_operator_routes_agree() {
        let mut m = heat("max(x,0)", 0.25, 1.0);
        m.driver_g = FieldExpr::parse("-0.05*y+0.1*cos(y)").unwrap();
        m.lipschitz = 0.15;
        m.drift[0] = FieldExpr::parse("0.2-0.1*x").unwrap();
        let g = grid_for(&m, -6.0, 6.0, 121);
        let (a, pa) = solve_hjb(&m, &g).unwrap();
        let (b, _) = conditional_expectation(&m, &g, Mode::Inf).unwrap();
        assert!(a.max_abs_diff(&b, |_, _| true) < 1e-11);
        assert_eq!(pa.vertices.len(), g.nt * g.nodes());
    }

    #[test]
    fn degenerate_three_band_matches_single_band_bitwise() {
        let mut m = heat("max(x-0.2,0)", 0.5, 0.5);
        m.h[0][0] = FieldExpr::parse("0.3-0.2*x").unwrap();
        m.driver_f[0] = FieldExpr::parse("0.1*x").unwrap();
        m.drift[0] = FieldExpr::parse("0.1").unwrap();
        let g = grid_for(&m, -4.0, 4.0, 81);
        let (single, _) = solve_hjb(&m, &g).unwrap();
        let mut mb = m.clone();
        mb.multi_band = Some(MultiBand {
            gamma1: m.uncertainty.clone(),
            gamma2: m.uncertainty.clone(),
            gamma3: m.uncertainty.clone(),
        });
        let multi = multi_band_hjb(&mb, &g).unwrap();
        assert_eq!(single.values, multi.values);
    }

    #[test]
    fn separate_infima_lie_below_joint_infimum() {
        let mut m = heat("max(x-0.2,0)-max(x-1,0)", 0.25, 1.0);
        m.h[0][0] = FieldExpr::parse("0.3-0.2*x").unwrap();
        m.driver_f[0] = FieldExpr::parse("0.1*sin(x)").unwrap();
        let g = grid_for(&m, -4.0, 4.0, 81);
        let (single, _) = solve_hjb(&m, &g).unwrap();
        let mut mb = m.clone();
        mb.multi_band = Some(MultiBand {
            gamma1: m.uncertainty.clone(),
            gamma2: m.uncertainty.clone(),
            gamma3: m.uncertainty.clone(),
        });
        let multi = multi_band_hjb(&mb, &g).unwrap();
        for (a, b) in multi.values.iter().zip(&single.values) {
            assert!(a <= &(b + 1e-12));
        }
        assert!(multi.values[40] < single.values[40] - 1e-6);
    }

    #[test]
    fn residuals_of_manufactured_and_wrong_solutions() {
        let m = heat("x*x", 0.25, 1.0);
        let g = GridSpec::uniform(-3.0, 3.0, 13, 1.0, 4).unwrap();
        let exact = FieldExpr::parse("x*x+0.25*(1-t)").unwrap();
        assert!(residual_check(&exact, &m, &g).unwrap() <= 1e-8);
        let wrong = FieldExpr::parse("x*x").unwrap();
        let r = residual_check(&wrong, &m, &g).unwrap();
        assert!((r - 0.25).abs() < 1e-6);
        let lin = FieldExpr::parse("x").unwrap();
        assert!(residual_check(&lin, &m, &g).unwrap() <= 1e-8);
    }

    #[test]
    fn gheat_rejects_log_grid_and_bad_dt() {
        let bx = UncertaintyBox::single(0.25, 1.0).unwrap();
        let g = GridSpec::log(0.5, 2.0, 11, 1.0, 10).unwrap();
        assert!(solve_gheat(&FieldExpr::x(), &bx, &g, Mode::Inf).is_err());
        let g = GridSpec::uniform(-1.0, 1.0, 101, 1.0, 10).unwrap();
        assert!(matches!(
            solve_gheat(&FieldExpr::x(), &bx, &g, Mode::Inf),
            Err(Error::Cfl { .. })
        ));
    }
}

//! Conditional nonlinear expectations as exact dynamic programming on a
//! controlled Markov lattice.

mod grid;
mod quadvar;
mod tree;

pub use grid::{default_cfl_fraction, Axis, ControlPolicy, GridDoc, GridSpec, ValueSurface};
pub use quadvar::{quadvar_functional, quadvar_scan};
pub use tree::{brute_force_expectation, TreeRunning, TreeSpec, POLICY_BUDGET};

use crate::error::Result;
use crate::model::ModelSpec;
use crate::scheme::{terminal_row, Discretization, DriverSource, Route, Running};
use crate::uncertainty::{Mode, Vertex};

/// One backward step from row `n + 1` (`next`) to row `n`, drivers
/// evaluated on `next`. Returns the new row and the attaining vertices.
pub fn step_expectation(
    next: &[f64],
    model: &ModelSpec,
    grid: &GridSpec,
    mode: Mode,
    n: usize,
) -> Result<(Vec<f64>, Vec<Vertex>)> {
    let disc = Discretization::new(model, grid)?;
    let row = disc.weight_step(n, next, mode, Running::Evaluate(next))?;
    Ok((row.values, row.vertices))
}

/// Full backward recursion from `u(T, ·) = Φ` with the given direction.
pub fn conditional_expectation(
    model: &ModelSpec,
    grid: &GridSpec,
    mode: Mode,
) -> Result<(ValueSurface, ControlPolicy)> {
    Lattice::new(model, grid)?.expectation(mode)
}

/// A model bound to a grid for repeated lattice evaluations.
#[derive(Debug, Clone)]
pub struct Lattice {
    disc: Discretization,
}

impl Lattice {
    pub fn new(model: &ModelSpec, grid: &GridSpec) -> Result<Lattice> {
        Ok(Lattice {
            disc: Discretization::new(model, grid)?,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        self.disc.grid()
    }

    pub fn model(&self) -> &ModelSpec {
        self.disc.model()
    }

    pub fn discretization(&self) -> &Discretization {
        &self.disc
    }

    pub fn terminal_row(&self) -> Result<Vec<f64>> {
        terminal_row(&self.model().terminal, self.grid())
    }

    pub fn expectation(&self, mode: Mode) -> Result<(ValueSurface, ControlPolicy)> {
        let row = self.terminal_row()?;
        self.expectation_of(mode, row)
    }

    /// Expectation of arbitrary terminal node values.
    pub fn expectation_of(&self, mode: Mode, terminal: Vec<f64>) -> Result<(ValueSurface, ControlPolicy)> {
        let grid = self.grid().clone();
        let sweep = self.disc.sweep(Route::Weight, mode, grid.nt, terminal, DriverSource::Own)?;
        let policy = ControlPolicy {
            uncertainty: self.model().uncertainty.clone(),
            vertices: sweep.policy.concat(),
            grid: grid.clone(),
        };
        Ok((ValueSurface::from_rows(grid, sweep.rows)?, policy))
    }

    /// Restarts the recursion at row `n0` with the given node values and
    /// returns rows `0..=n0`.
    pub fn rows_from(&self, mode: Mode, n0: usize, start: Vec<f64>) -> Result<Vec<Vec<f64>>> {
        Ok(self.disc.sweep(Route::Weight, mode, n0, start, DriverSource::Own)?.rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::FieldExpr;
    use crate::scheme::cfl_steps;
    use crate::uncertainty::UncertaintyBox;

    fn heat_setup(phi: &str, lo: f64, hi: f64, nx: usize) -> (ModelSpec, GridSpec) {
        let m = ModelSpec::heat(
            UncertaintyBox::single(lo, hi).unwrap(),
            FieldExpr::parse(phi).unwrap(),
            Mode::Inf,
        );
        let mut g = GridSpec::uniform(-8.0, 8.0, nx, 1.0, 1).unwrap();
        g.nt = cfl_steps(&m, &g, 0.9).unwrap();
        (m, g)
    }

    #[test]
    fn linear_payoff_is_fixed() {
        let (m, g) = heat_setup("x", 0.5, 2.0, 81);
        for mode in [Mode::Inf, Mode::Sup] {
            let (s, _) = conditional_expectation(&m, &g, mode).unwrap();
            for n in 0..g.rows() {
                for k in 0..g.nodes() {
                    assert!((s.at(n, k) - g.coord(0, k)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn quadratic_payoff_hits_extremal_variance() {
        let (m, g) = heat_setup("x*x", 0.25, 1.0, 161);
        let centre = g.nodes() / 2;
        let (lo, pol) = conditional_expectation(&m, &g, Mode::Inf).unwrap();
        let (hi, _) = conditional_expectation(&m, &g, Mode::Sup).unwrap();
        assert!((lo.at(0, centre) - 0.25).abs() < 1e-8);
        assert!((hi.at(0, centre) - 1.0).abs() < 1e-8);
        assert_eq!(pol.vertex(0, centre), Vertex(0));
    }

    #[test]
    fn step_matches_full_recursion() {
        let (m, g) = heat_setup("max(x,0)", 0.25, 1.0, 81);
        let (s, p) = conditional_expectation(&m, &g, Mode::Sup).unwrap();
        let n = g.nt - 1;
        let (row, verts) = step_expectation(s.row(n + 1), &m, &g, Mode::Sup, n).unwrap();
        assert_eq!(row, s.row(n));
        assert_eq!(verts, p.row(n));
    }

    #[test]
    fn restart_reproduces_rows_bitwise() {
        let (m, g) = heat_setup("max(x-0.5,0)-2*max(x,0)+max(x+0.5,0)", 0.25, 1.0, 61);
        let lat = Lattice::new(&m, &g).unwrap();
        let (s, _) = lat.expectation(Mode::Inf).unwrap();
        let n0 = g.nt / 3;
        let rows = lat.rows_from(Mode::Inf, n0, s.row(n0).to_vec()).unwrap();
        for (n, r) in rows.iter().enumerate() {
            assert_eq!(r.as_slice(), s.row(n));
        }
    }
}

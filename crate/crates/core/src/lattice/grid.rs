use serde::{Deserialize, Serialize};

use crate::csv::{fmt17, CsvTable};
use crate::error::{Error, Result};
use crate::uncertainty::{UncertaintyBox, Vertex};

/// One spatial axis. Bounds are in original units even on log grids.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

/// Tensor space-time grid with `n` = 1 or 2 spatial axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub axes: Vec<Axis>,
    pub horizon: f64,
    pub nt: usize,
    #[serde(default)]
    pub log_space: bool,
}

impl GridSpec {
    pub fn uniform(x_min: f64, x_max: f64, nx: usize, horizon: f64, nt: usize) -> Result<GridSpec> {
        let g = GridSpec {
            axes: vec![Axis {
                min: x_min,
                max: x_max,
                n: nx,
            }],
            horizon,
            nt,
            log_space: false,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn log(x_min: f64, x_max: f64, nx: usize, horizon: f64, nt: usize) -> Result<GridSpec> {
        let mut g = GridSpec::uniform(x_min, x_max, nx, horizon, nt)?;
        g.log_space = true;
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.axes.len()) {
            return Err(Error::InvalidGrid(format!(
                "{} spatial axes; full grids support 1 or 2",
                self.axes.len()
            )));
        }
        for (mu, a) in self.axes.iter().enumerate() {
            if !(a.min.is_finite() && a.max.is_finite() && a.min < a.max) {
                return Err(Error::InvalidGrid(format!(
                    "axis {}: need x_min < x_max, got [{}, {}]",
                    mu + 1,
                    a.min,
                    a.max
                )));
            }
            if a.n < 3 {
                return Err(Error::InvalidGrid(format!("axis {}: need at least 3 points", mu + 1)));
            }
            if self.log_space && a.min <= 0.0 {
                return Err(Error::InvalidGrid(format!(
                    "axis {}: log-spaced grids need x_min > 0",
                    mu + 1
                )));
            }
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::InvalidGrid(format!("horizon must be positive, got {}", self.horizon)));
        }
        if self.nt < 1 {
            return Err(Error::InvalidGrid("need at least one time step".into()));
        }
        Ok(())
    }

    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    pub fn nodes(&self) -> usize {
        self.axes.iter().map(|a| a.n).product()
    }

    pub fn rows(&self) -> usize {
        self.nt + 1
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.nt as f64
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt()
    }

    /// Spacing in grid coordinates (log units on log grids).
    pub fn spacing(&self, mu: usize) -> f64 {
        let a = &self.axes[mu];
        let (lo, hi) = self.grid_bounds(a);
        (hi - lo) / (a.n - 1) as f64
    }

    fn grid_bounds(&self, a: &Axis) -> (f64, f64) {
        if self.log_space {
            (a.min.ln(), a.max.ln())
        } else {
            (a.min, a.max)
        }
    }

    /// Grid coordinate of index `i` on axis `mu`.
    pub fn grid_coord(&self, mu: usize, i: usize) -> f64 {
        let a = &self.axes[mu];
        let (lo, _) = self.grid_bounds(a);
        if i + 1 == a.n {
            self.grid_bounds(a).1
        } else {
            lo + i as f64 * self.spacing(mu)
        }
    }

    /// Coordinate of index `i` on axis `mu` in original units.
    pub fn coord(&self, mu: usize, i: usize) -> f64 {
        let z = self.grid_coord(mu, i);
        if self.log_space {
            if i == 0 {
                self.axes[mu].min
            } else if i + 1 == self.axes[mu].n {
                self.axes[mu].max
            } else {
                z.exp()
            }
        } else {
            z
        }
    }

    /// Flat-index stride of axis `mu` (the last axis varies fastest).
    pub fn stride(&self, mu: usize) -> usize {
        self.axes[mu + 1..].iter().map(|a| a.n).product()
    }

    pub fn index_of(&self, k: usize, mu: usize) -> usize {
        (k / self.stride(mu)) % self.axes[mu].n
    }

    /// State of flat node `k`; entries beyond `dims()` are zero.
    pub fn point(&self, k: usize) -> [f64; 2] {
        let mut p = [0.0; 2];
        for (mu, slot) in p.iter_mut().enumerate().take(self.dims()) {
            *slot = self.coord(mu, self.index_of(k, mu));
        }
        p
    }

    /// Node values of a function of the state.
    pub fn sample<F>(&self, mut f: F) -> Result<Vec<f64>>
    where
        F: FnMut(&[f64]) -> Result<f64>,
    {
        (0..self.nodes())
            .map(|k| {
                let p = self.point(k);
                f(&p[..self.dims()])
            })
            .collect()
    }

    /// Whether node `k` lies in the central `fraction` of every axis.
    pub fn is_interior(&self, k: usize, fraction: f64) -> bool {
        (0..self.dims()).all(|mu| {
            let n = self.axes[mu].n;
            let i = self.index_of(k, mu) as f64;
            let c = (n - 1) as f64 / 2.0;
            (i - c).abs() <= fraction * c + 1e-9
        })
    }

    /// Same spatial layout with `Nx` doubled minus one per axis, so that
    /// every coarse node is also a fine node.
    pub fn refined(&self) -> GridSpec {
        let mut g = self.clone();
        for a in &mut g.axes {
            a.n = 2 * a.n - 1;
        }
        g
    }
}

/// `u(t_n, x_k)` for every row `n = 0..=nt` and node `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueSurface {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl ValueSurface {
    pub fn from_rows(grid: GridSpec, rows: Vec<Vec<f64>>) -> Result<ValueSurface> {
        if rows.len() != grid.rows() || rows.iter().any(|r| r.len() != grid.nodes()) {
            return Err(Error::Dimension("surface rows do not match the grid".into()));
        }
        for (n, r) in rows.iter().enumerate() {
            if let Some(k) = r.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { step: n, node: k });
            }
        }
        Ok(ValueSurface {
            values: rows.concat(),
            grid,
        })
    }

    pub fn row(&self, n: usize) -> &[f64] {
        let m = self.grid.nodes();
        &self.values[n * m..(n + 1) * m]
    }

    pub fn at(&self, n: usize, k: usize) -> f64 {
        self.values[n * self.grid.nodes() + k]
    }

    pub fn terminal(&self) -> &[f64] {
        self.row(self.grid.nt)
    }

    pub fn initial(&self) -> &[f64] {
        self.row(0)
    }

    /// Largest absolute nodewise difference over rows and nodes passing `keep`.
    pub fn max_abs_diff<F>(&self, other: &ValueSurface, mut keep: F) -> f64
    where
        F: FnMut(usize, usize) -> bool,
    {
        let m = self.grid.nodes();
        let mut worst: f64 = 0.0;
        for (idx, (a, b)) in self.values.iter().zip(&other.values).enumerate() {
            if keep(idx / m, idx % m) {
                worst = worst.max((a - b).abs());
            }
        }
        worst
    }

    /// Cubic Lagrange interpolation of row `n` at original coordinate `x`
    /// (one-dimensional grids; log grids interpolate in log coordinate).
    pub fn interpolate(&self, n: usize, x: f64) -> Result<f64> {
        if self.grid.dims() != 1 {
            return Err(Error::Dimension("interpolation is one-dimensional".into()));
        }
        let a = self.grid.axes[0];
        if !(a.min <= x && x <= a.max) {
            return Err(Error::Domain(format!("{x} outside the grid [{}, {}]", a.min, a.max)));
        }
        let z = if self.grid.log_space { x.ln() } else { x };
        let z0 = self.grid.grid_coord(0, 0);
        let h = self.grid.spacing(0);
        let pos = ((z - z0) / h).floor().max(0.0) as usize;
        let start = pos.saturating_sub(1).min(a.n - 4);
        let row = self.row(n);
        let mut total = 0.0;
        for i in start..start + 4 {
            let zi = self.grid.grid_coord(0, i);
            let mut w = 1.0;
            for j in start..start + 4 {
                if j != i {
                    let zj = self.grid.grid_coord(0, j);
                    w *= (z - zj) / (zi - zj);
                }
            }
            total += w * row[i];
        }
        Ok(total)
    }

    /// CSV with header `t,x,value[,vertex_j...]`, one line per node, rows in
    /// time order. Vertex columns hold the selected variance rate; the
    /// terminal row carries no control and leaves them empty.
    pub fn to_csv(&self, policy: Option<&ControlPolicy>) -> String {
        let dims = self.grid.dims();
        let mut header = vec!["t".to_string()];
        if dims == 1 {
            header.push("x".into());
        } else {
            header.extend((1..=dims).map(|mu| format!("x{mu}")));
        }
        header.push("value".into());
        if let Some(p) = policy {
            header.extend((1..=p.uncertainty.dim()).map(|j| format!("vertex_{j}")));
        }
        let mut table = CsvTable::new(header);
        for n in 0..self.grid.rows() {
            let t = fmt17(self.grid.time(n));
            for k in 0..self.grid.nodes() {
                let mut line = vec![t.clone()];
                let p = self.grid.point(k);
                line.extend(p[..dims].iter().map(|&x| fmt17(x)));
                line.push(fmt17(self.at(n, k)));
                if let Some(pol) = policy {
                    for j in 0..pol.uncertainty.dim() {
                        line.push(if n < self.grid.nt {
                            fmt17(pol.uncertainty.value(pol.vertex(n, k), j))
                        } else {
                            String::new()
                        });
                    }
                }
                table.push(line);
            }
        }
        table.render()
    }
}

/// Attaining vertex per `(row, node)` for rows `0..nt`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPolicy {
    pub grid: GridSpec,
    pub uncertainty: UncertaintyBox,
    pub vertices: Vec<Vertex>,
}

impl ControlPolicy {
    pub fn vertex(&self, n: usize, k: usize) -> Vertex {
        self.vertices[n * self.grid.nodes() + k]
    }

    pub fn row(&self, n: usize) -> &[Vertex] {
        let m = self.grid.nodes();
        &self.vertices[n * m..(n + 1) * m]
    }

    /// Variance rate of dimension `j` selected at `(n, k)`.
    pub fn variance(&self, n: usize, k: usize, j: usize) -> f64 {
        self.uncertainty.value(self.vertex(n, k), j)
    }
}

/// Grid description as it appears in configuration files. `nt` may be
/// omitted, in which case it is derived from the stability limit.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridDoc {
    #[serde(with = "one_or_many")]
    pub x_min: Vec<f64>,
    #[serde(with = "one_or_many")]
    pub x_max: Vec<f64>,
    #[serde(with = "one_or_many_usize")]
    pub nx: Vec<usize>,
    #[serde(alias = "T")]
    pub horizon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nt: Option<usize>,
    #[serde(default)]
    pub log_space: bool,
    #[serde(default = "default_cfl_fraction")]
    pub cfl_fraction: f64,
}

pub fn default_cfl_fraction() -> f64 {
    0.9
}

impl GridDoc {
    /// Grid with the given step count, or with a provisional single step
    /// when `nt` is left to the stability limit.
    pub fn skeleton(&self) -> Result<GridSpec> {
        if self.x_min.len() != self.x_max.len() || self.x_min.len() != self.nx.len() {
            return Err(Error::InvalidGrid("x_min, x_max and nx must have equal lengths".into()));
        }
        if !(self.cfl_fraction > 0.0 && self.cfl_fraction <= 1.0) {
            return Err(Error::InvalidGrid(format!(
                "cfl_fraction must lie in (0, 1], got {}",
                self.cfl_fraction
            )));
        }
        let g = GridSpec {
            axes: self
                .x_min
                .iter()
                .zip(&self.x_max)
                .zip(&self.nx)
                .map(|((&min, &max), &n)| Axis { min, max, n })
                .collect(),
            horizon: self.horizon,
            nt: self.nt.unwrap_or(1),
            log_space: self.log_space,
        };
        g.validate()?;
        Ok(g)
    }
}

mod one_or_many {
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(f64),
        Many(Vec<f64>),
    }

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        if v.len() == 1 {
            s.serialize_f64(v[0])
        } else {
            s.collect_seq(v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Ok(match OneOrMany::deserialize(d)? {
            OneOrMany::One(x) => vec![x],
            OneOrMany::Many(v) => v,
        })
    }
}

mod one_or_many_usize {
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(usize),
        Many(Vec<usize>),
    }

    pub fn serialize<S: Serializer>(v: &[usize], s: S) -> Result<S::Ok, S::Error> {
        if v.len() == 1 {
            s.serialize_u64(v[0] as u64)
        } else {
            s.collect_seq(v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<usize>, D::Error> {
        Ok(match OneOrMany::deserialize(d)? {
            OneOrMany::One(x) => vec![x],
            OneOrMany::Many(v) => v,
        })
    }
}

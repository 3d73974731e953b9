//! Path simulation under explicit priors and linear-expectation estimates.
//!
//! Each path draws from its own ChaCha8 stream (master seed, stream = path
//! index), so a batch is identical under any thread schedule.

mod diagnostics;

pub use diagnostics::{
    counterexample_limit, quad_var_report, representation_scan, CounterexampleRow, PathQv, QvReport, ScanSource,
    ScanTable,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::expr::{FieldExpr, Point};
use crate::lattice::{ControlPolicy, GridSpec, ValueSurface};
use crate::model::ModelSpec;
use crate::pde::BsbSpec;
use crate::uncertainty::{Band, Mode};

/// How the variance rate `α²` is chosen along a path.
#[derive(Debug, Clone)]
pub enum PolicySpec {
    Constant(f64),
    /// Nearest-node lookup in `(t, x)` of a solver policy, clamped to its grid.
    Lookup(ControlPolicy),
    /// Band endpoint picked by the sign of the second derivative of a value
    /// surface: upper endpoint where it helps `mode`, lower otherwise.
    BangBangGamma { surface: ValueSurface, mode: Mode },
    /// Independent uniform draw from the band at every step.
    Random { seed: u64 },
}

/// What a batch keeps per path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Storage {
    Full,
    TerminalOnly,
}

/// Dynamics to simulate.
#[derive(Debug, Clone, Copy)]
pub enum PathSource<'a> {
    /// Euler–Maruyama for a one-dimensional model with a one-dimensional box.
    Model { model: &'a ModelSpec, x0: f64, horizon: f64 },
    /// Exact lognormal steps `S ← S·exp((r − α²/2)Δ + α√Δ·Z)`.
    Bsb(&'a BsbSpec),
}

/// Simulated paths. With [`Storage::Full`] the arrays are path-major:
/// `x` and `qv` hold `steps + 1` entries per path, `increments` and
/// `controls` hold `steps`. With [`Storage::TerminalOnly`] `x` and `qv`
/// hold one terminal entry per path and the other arrays are empty.
#[derive(Debug, Clone)]
pub struct PathBatch {
    pub n_paths: usize,
    pub steps: usize,
    pub dt: f64,
    pub x0: f64,
    pub band: Band,
    pub storage: Storage,
    pub x: Vec<f64>,
    /// Increments of the driving process, `α√Δ·Z`.
    pub increments: Vec<f64>,
    /// Accumulated `Σ α²Δ`.
    pub qv: Vec<f64>,
    /// Applied `α²` per step.
    pub controls: Vec<f64>,
}

impl PathBatch {
    pub fn horizon(&self) -> f64 {
        self.dt * self.steps as f64
    }

    pub fn terminal(&self, p: usize) -> f64 {
        match self.storage {
            Storage::Full => self.x[p * (self.steps + 1) + self.steps],
            Storage::TerminalOnly => self.x[p],
        }
    }

    pub fn path(&self, p: usize) -> Option<&[f64]> {
        let w = self.steps + 1;
        (self.storage == Storage::Full).then(|| &self.x[p * w..(p + 1) * w])
    }
}

struct PathRecord {
    x: Vec<f64>,
    inc: Vec<f64>,
    qv: Vec<f64>,
    ctrl: Vec<f64>,
}

enum Stepper<'a> {
    Euler {
        model: &'a ModelSpec,
    },
    Lognormal {
        rate: f64,
    },
}

impl PolicySpec {
    fn check(&self, band: Band) -> Result<()> {
        match self {
            PolicySpec::Constant(v) if !band.contains(*v) => Err(Error::Invalid(format!(
                "constant control {v} outside the band [{}, {}]",
                band.lo, band.hi
            ))),
            PolicySpec::Lookup(p) if p.grid.dims() != 1 || p.uncertainty.dim() != 1 => {
                Err(Error::Dimension("policy lookup needs a one-dimensional policy".into()))
            }
            PolicySpec::Lookup(p) if p.uncertainty.band(0) != band => {
                Err(Error::Invalid("policy band differs from the simulated band".into()))
            }
            PolicySpec::BangBangGamma { surface, .. } if surface.grid.dims() != 1 || surface.grid.axes[0].n < 3 => {
                Err(Error::Dimension("bang-bang policy needs a one-dimensional surface with 3+ nodes".into()))
            }
            _ => Ok(()),
        }
    }

    fn choose(&self, band: Band, t: f64, x: f64, rng: &mut Option<ChaCha8Rng>) -> f64 {
        match self {
            PolicySpec::Constant(v) => *v,
            PolicySpec::Lookup(p) => {
                let (n, k) = nearest(&p.grid, t, x, true);
                p.variance(n, k, 0)
            }
            PolicySpec::BangBangGamma { surface, mode } => {
                let g = &surface.grid;
                let (n, k) = nearest(g, t, x, false);
                let k = k.clamp(1, g.axes[0].n - 2);
                let row = surface.row(n);
                let h = g.spacing(0);
                let mut gamma = (row[k + 1] - 2.0 * row[k] + row[k - 1]) / (h * h);
                if g.log_space {
                    gamma -= (row[k + 1] - row[k - 1]) / (2.0 * h);
                }
                let up = match mode {
                    Mode::Sup => gamma > 0.0,
                    Mode::Inf => gamma < 0.0,
                };
                band.endpoint(up)
            }
            PolicySpec::Random { .. } => {
                let u: f64 = rng.as_mut().map(|r| r.random()).unwrap_or(0.0);
                band.lo + band.width() * u
            }
        }
    }
}

/// Nearest grid row and node for `(t, x)`; `policy_rows` excludes the terminal row.
fn nearest(grid: &GridSpec, t: f64, x: f64, policy_rows: bool) -> (usize, usize) {
    let last = if policy_rows { grid.nt - 1 } else { grid.nt };
    let n = ((t / grid.dt()).round().max(0.0) as usize).min(last);
    let a = grid.axes[0];
    let z = if grid.log_space { x.max(f64::MIN_POSITIVE).ln() } else { x };
    let i = ((z - grid.grid_coord(0, 0)) / grid.spacing(0)).round();
    let k = (i.max(0.0) as usize).min(a.n - 1);
    (n, k)
}

/// Simulates `n_paths` paths of `steps` equal steps.
pub fn sample_paths(
    source: PathSource<'_>,
    policy: &PolicySpec,
    n_paths: usize,
    steps: usize,
    seed: u64,
    storage: Storage,
) -> Result<PathBatch> {
    if n_paths == 0 || steps == 0 {
        return Err(Error::Invalid("need at least one path and one step".into()));
    }
    let (stepper, band, x0, horizon) = match source {
        PathSource::Model { model, x0, horizon } => {
            model.validate()?;
            if model.state_dim() != 1 || model.box_dim() != 1 {
                return Err(Error::Dimension("path simulation is one-dimensional".into()));
            }
            if !(horizon > 0.0) {
                return Err(Error::Invalid("horizon must be positive".into()));
            }
            (Stepper::Euler { model }, model.uncertainty.band(0), x0, horizon)
        }
        PathSource::Bsb(spec) => {
            spec.validate()?;
            (Stepper::Lognormal { rate: spec.rate }, spec.band()?, spec.spot, spec.maturity)
        }
    };
    policy.check(band)?;
    let dt = horizon / steps as f64;
    let sqdt = dt.sqrt();
    let full = storage == Storage::Full;

    let records: Vec<Result<PathRecord>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(p as u64);
            let mut policy_rng = match policy {
                PolicySpec::Random { seed } => {
                    let mut r = ChaCha8Rng::seed_from_u64(*seed);
                    r.set_stream(p as u64);
                    Some(r)
                }
                _ => None,
            };
            let cap = if full { steps + 1 } else { 1 };
            let mut rec = PathRecord {
                x: Vec::with_capacity(cap),
                inc: Vec::with_capacity(if full { steps } else { 0 }),
                qv: Vec::with_capacity(cap),
                ctrl: Vec::with_capacity(if full { steps } else { 0 }),
            };
            let mut x = x0;
            let mut qv = 0.0;
            if full {
                rec.x.push(x);
                rec.qv.push(qv);
            }
            for n in 0..steps {
                let t = n as f64 * dt;
                let v = policy.choose(band, t, x, &mut policy_rng);
                let z: f64 = rng.sample(StandardNormal);
                let db = v.sqrt() * sqdt * z;
                x = match &stepper {
                    Stepper::Lognormal { rate } => x * ((rate - 0.5 * v) * dt + db).exp(),
                    Stepper::Euler { model } => {
                        let pt = Point {
                            t: Some(t),
                            x: &[x],
                            y: None,
                        };
                        let b = model.drift[0].eval(&pt)?;
                        let h = model.h[0][0].eval(&pt)?;
                        let s = model.sigma[0][0].eval(&pt)?;
                        x + (b + h * v) * dt + s * db
                    }
                };
                if !x.is_finite() {
                    return Err(Error::NonFinite { step: n, node: p });
                }
                qv += v * dt;
                if full {
                    rec.x.push(x);
                    rec.qv.push(qv);
                    rec.inc.push(db);
                    rec.ctrl.push(v);
                }
            }
            if !full {
                rec.x.push(x);
                rec.qv.push(qv);
            }
            Ok(rec)
        })
        .collect();

    let mut batch = PathBatch {
        n_paths,
        steps,
        dt,
        x0,
        band,
        storage,
        x: Vec::new(),
        increments: Vec::new(),
        qv: Vec::new(),
        controls: Vec::new(),
    };
    for r in records {
        let r = r?;
        batch.x.extend(r.x);
        batch.qv.extend(r.qv);
        batch.increments.extend(r.inc);
        batch.controls.extend(r.ctrl);
    }
    Ok(batch)
}

/// Running rewards `g(t, x)` and `f(t, x)·α²`, free of `y`.
#[derive(Debug, Clone, Default)]
pub struct Drivers {
    pub g: Option<FieldExpr>,
    pub f: Option<FieldExpr>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

/// Sum by recursive halving, so the result depends only on the order of
/// the inputs.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 32 {
        v.iter().sum()
    } else {
        let (a, b) = v.split_at(v.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

/// Sample mean and standard error of
/// `e^{−rT}Φ(X_T) + Σ_n e^{−r t_n}(g + f·α²)(t_n, X_n)·Δ`.
pub fn policy_value_estimate(batch: &PathBatch, payoff: &FieldExpr, drivers: &Drivers, rate: f64) -> Result<Estimate> {
    let running = drivers.g.is_some() || drivers.f.is_some();
    for e in [Some(payoff), drivers.g.as_ref(), drivers.f.as_ref()].into_iter().flatten() {
        if e.uses(crate::expr::Var::Y) {
            return Err(Error::Invalid(format!("`{e}` depends on y; estimates need y-free rewards")));
        }
    }
    if running && batch.storage != Storage::Full {
        return Err(Error::Invalid("running rewards need a batch with full path storage".into()));
    }
    let disc_t = (-rate * batch.horizon()).exp();
    let values: Vec<Result<f64>> = (0..batch.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut v = disc_t * payoff.eval_x(batch.terminal(p))?;
            if running {
                let xs = batch.path(p).expect("full storage");
                let ctrl = &batch.controls[p * batch.steps..(p + 1) * batch.steps];
                for n in 0..batch.steps {
                    let t = n as f64 * batch.dt;
                    let pt = Point {
                        t: Some(t),
                        x: &xs[n..n + 1],
                        y: None,
                    };
                    let mut r = 0.0;
                    if let Some(g) = &drivers.g {
                        r += g.eval(&pt)?;
                    }
                    if let Some(f) = &drivers.f {
                        r += f.eval(&pt)? * ctrl[n];
                    }
                    v += (-rate * t).exp() * r * batch.dt;
                }
            }
            Ok(v)
        })
        .collect();
    let values: Vec<f64> = values.into_iter().collect::<Result<_>>()?;
    let n = values.len() as f64;
    let mean = pairwise_sum(&values) / n;
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = if values.len() > 1 { pairwise_sum(&sq) / (n - 1.0) } else { 0.0 };
    Ok(Estimate {
        mean,
        stderr: (var / n).sqrt(),
    })
}

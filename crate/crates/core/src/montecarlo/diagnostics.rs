use serde::Serialize;

use crate::analytic::{gaussian_expectation, QuadratureSpec};
use crate::csv::{fmt17, CsvTable};
use crate::error::{Error, Result};
use crate::expr::FieldExpr;
use crate::pde::BsbSpec;
use crate::uncertainty::Band;

use super::{PathBatch, Storage};

/// Ratios `Δ⟨B⟩/Δt` over the dyadic windows of one path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathQv {
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QvReport {
    pub paths: Vec<PathQv>,
    pub violations: usize,
    pub min_ratio: f64,
    pub max_ratio: f64,
}

impl QvReport {
    /// `path,min_ratio,max_ratio,violations`.
    pub fn to_csv(&self) -> String {
        let mut t = CsvTable::new(["path", "min_ratio", "max_ratio", "violations"]);
        for (i, p) in self.paths.iter().enumerate() {
            t.push(vec![i.to_string(), fmt17(p.min_ratio), fmt17(p.max_ratio), p.violations.to_string()]);
        }
        t.render()
    }
}

/// Checks `lo·(t−s) ≤ ⟨B⟩_t − ⟨B⟩_s ≤ hi·(t−s)` on every window of `2^k`
/// steps aligned to multiples of `2^k`. With `eta_sq` (one weight per
/// step) the weighted form `lo·Σ η²Δ ≤ Σ η²Δ⟨B⟩ ≤ hi·Σ η²Δ` is checked
/// instead and the ratio is taken against `Σ η²Δ`.
pub fn quad_var_report(batch: &PathBatch, eta_sq: Option<&[f64]>) -> Result<QvReport> {
    if batch.storage != Storage::Full {
        return Err(Error::Invalid("quadratic-variation report needs full path storage".into()));
    }
    if let Some(e) = eta_sq {
        if e.len() != batch.steps || e.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Invalid("eta_sq needs one nonnegative weight per step".into()));
        }
    }
    let band = batch.band;
    let slack = 1e-12;
    let w = batch.steps + 1;
    let mut report = QvReport {
        paths: Vec::with_capacity(batch.n_paths),
        violations: 0,
        min_ratio: f64::INFINITY,
        max_ratio: f64::NEG_INFINITY,
    };
    for p in 0..batch.n_paths {
        let qv = &batch.qv[p * w..(p + 1) * w];
        let mut row = PathQv {
            min_ratio: f64::INFINITY,
            max_ratio: f64::NEG_INFINITY,
            violations: 0,
        };
        let mut len = 1;
        while len <= batch.steps {
            let mut s = 0;
            while s + len <= batch.steps {
                let (inc, base) = match eta_sq {
                    None => (qv[s + len] - qv[s], len as f64 * batch.dt),
                    Some(e) => {
                        let mut inc = 0.0;
                        let mut base = 0.0;
                        for n in s..s + len {
                            inc += e[n] * (qv[n + 1] - qv[n]);
                            base += e[n] * batch.dt;
                        }
                        (inc, base)
                    }
                };
                if base > 0.0 {
                    let r = inc / base;
                    row.min_ratio = row.min_ratio.min(r);
                    row.max_ratio = row.max_ratio.max(r);
                    if inc < band.lo * base * (1.0 - slack) - slack * base || inc > band.hi * base * (1.0 + slack) + slack * base
                    {
                        row.violations += 1;
                    }
                }
                s += len;
            }
            len *= 2;
        }
        report.violations += row.violations;
        report.min_ratio = report.min_ratio.min(row.min_ratio);
        report.max_ratio = report.max_ratio.max(row.max_ratio);
        report.paths.push(row);
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CounterexampleRow {
    pub delta: f64,
    /// Upper expectation of the difference of forward and backward
    /// quadratic-variation rates over windows of length `delta`.
    pub value: f64,
    /// Value of the quasi-sure limit as `delta → 0`.
    pub limit: f64,
}

/// For each `δ`, the upper expectation of
/// `X_δ = (⟨B⟩_{t+δ} − ⟨B⟩_t)/δ − (⟨B⟩_t − ⟨B⟩_{t−δ})/δ`.
///
/// A control held on a window of length `δ` adds exactly `α²δ` to `⟨B⟩`,
/// so each window contributes its rate `α²` and the two windows are
/// optimized in turn: the backward window's rate is chosen first, then the
/// forward one, over the band endpoints and 31 interior rates.
pub fn counterexample_limit(band: Band, deltas: &[f64]) -> Result<Vec<CounterexampleRow>> {
    const GRID: usize = 33;
    let rates: Vec<f64> = (0..GRID)
        .map(|i| match i {
            0 => band.lo,
            i if i == GRID - 1 => band.hi,
            i => band.lo + band.width() * i as f64 / (GRID - 1) as f64,
        })
        .collect();
    deltas
        .iter()
        .map(|&delta| {
            if !(delta > 0.0 && delta.is_finite()) {
                return Err(Error::Invalid(format!("window length must be positive, got {delta}")));
            }
            let mut outer = f64::NEG_INFINITY;
            for &backward in &rates {
                let inner = rates.iter().map(|&forward| forward - backward).fold(f64::NEG_INFINITY, f64::max);
                outer = outer.max(inner);
            }
            Ok(CounterexampleRow {
                delta,
                value: outer,
                limit: 0.0,
            })
        })
        .collect()
}

/// Problem scanned by [`representation_scan`].
#[derive(Debug, Clone)]
pub enum ScanSource<'a> {
    /// Discounted `E[Φ(S_T)]` under constant variance `α²`.
    Bsb(&'a BsbSpec),
    /// `E[φ(x0 + α√T·Z)]`.
    Heat {
        phi: &'a FieldExpr,
        band: Band,
        x0: f64,
        horizon: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanTable {
    pub alpha_sq: Vec<f64>,
    pub values: Vec<f64>,
    pub inf: f64,
    pub sup: f64,
    pub argmin: f64,
    pub argmax: f64,
}

impl ScanTable {
    /// `alpha_sq,value`.
    pub fn to_csv(&self) -> String {
        let mut t = CsvTable::new(["alpha_sq", "value"]);
        for (a, v) in self.alpha_sq.iter().zip(&self.values) {
            t.push(vec![fmt17(*a), fmt17(*v)]);
        }
        t.render()
    }
}

/// Linear expectations under `na` equally spaced constant variances of the
/// band, by Gaussian quadrature.
pub fn representation_scan(source: &ScanSource<'_>, na: usize, quad: &QuadratureSpec) -> Result<ScanTable> {
    if na < 2 {
        return Err(Error::Invalid(format!("scan needs at least 2 controls, got {na}")));
    }
    let band = match source {
        ScanSource::Bsb(spec) => {
            spec.validate()?;
            spec.band()?
        }
        ScanSource::Heat { band, horizon, .. } => {
            if !(*horizon >= 0.0) {
                return Err(Error::Invalid("horizon must be nonnegative".into()));
            }
            *band
        }
    };
    let mut table = ScanTable {
        alpha_sq: Vec::with_capacity(na),
        values: Vec::with_capacity(na),
        inf: f64::INFINITY,
        sup: f64::NEG_INFINITY,
        argmin: band.lo,
        argmax: band.lo,
    };
    for i in 0..na {
        let v = if i + 1 == na {
            band.hi
        } else {
            band.lo + band.width() * i as f64 / (na - 1) as f64
        };
        let value = match source {
            ScanSource::Bsb(spec) => {
                let t = spec.maturity;
                let drift = (spec.rate - 0.5 * v) * t;
                let shift = FieldExpr::parse(&format!("{}*exp({}+x)", spec.spot, drift))?;
                (-spec.rate * t).exp() * gaussian_expectation(&spec.payoff.substitute_x(&shift), (v * t).sqrt(), quad)?
            }
            ScanSource::Heat { phi, x0, horizon, .. } => {
                let shift = FieldExpr::parse(&format!("{x0}+x"))?;
                gaussian_expectation(&phi.substitute_x(&shift), (v * horizon).sqrt(), quad)?
            }
        };
        if value < table.inf {
            table.inf = value;
            table.argmin = v;
        }
        if value > table.sup {
            table.sup = value;
            table.argmax = v;
        }
        table.alpha_sq.push(v);
        table.values.push(value);
    }
    Ok(table)
}

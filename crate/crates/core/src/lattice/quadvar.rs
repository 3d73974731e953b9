use crate::error::{Error, Result};
use crate::expr::FieldExpr;
use crate::uncertainty::{Band, Mode};

/// Optimum of `φ(∫₀ᵗ α_s² ds)` over variance controls that are piecewise
/// constant on `na` equal time steps and take values on an `na`-point grid
/// of the band.
///
/// The accumulated variance is tracked as an integer count of grid
/// increments, so the backward recursion over the accumulator is exact.
/// `φ` is written in the variable `x`.
pub fn quadvar_functional(phi: &FieldExpr, t: f64, band: Band, mode: Mode, na: usize) -> Result<f64> {
    if na < 2 {
        return Err(Error::Invalid(format!("control grid needs at least 2 points, got {na}")));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Invalid(format!("horizon must be nonnegative, got {t}")));
    }
    let steps = na;
    let per_step = na - 1;
    let top = steps * per_step;
    let unit = if top == 0 { 0.0 } else { band.width() * t / top as f64 };
    let mut value: Vec<f64> = (0..=top)
        .map(|k| phi.eval_x(band.lo * t + unit * k as f64))
        .collect::<Result<_>>()?;
    for r in (0..steps).rev() {
        let reachable = r * per_step;
        let mut prev = Vec::with_capacity(reachable + 1);
        for k in 0..=reachable {
            let mut best = value[k];
            for c in 1..=per_step {
                let v = value[k + c];
                if mode.better(v, best) {
                    best = v;
                }
            }
            prev.push(best);
        }
        value = prev;
    }
    Ok(value[0])
}

/// Optimum of `φ(v·t)` over `points` equally spaced `v` in the band.
pub fn quadvar_scan(phi: &FieldExpr, t: f64, band: Band, mode: Mode, points: usize) -> Result<f64> {
    let points = points.max(2);
    let mut best: Option<f64> = None;
    for k in 0..points {
        let v = band.lo + band.width() * k as f64 / (points - 1) as f64;
        let val = phi.eval_x(v * t)?;
        best = Some(match best {
            Some(b) if !mode.better(val, b) => b,
            _ => val,
        });
    }
    Ok(best.unwrap_or(0.0))
}

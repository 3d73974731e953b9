use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::FieldExpr;
use crate::lattice::{default_cfl_fraction, ControlPolicy, GridSpec, ValueSurface};
use crate::model::ModelSpec;
use crate::scheme::cfl_steps;
use crate::uncertainty::{Band, Mode, UncertaintyBox};

/// Offer (superhedging, supremum over volatilities) or bid (infimum).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Offer,
    Bid,
}

impl Side {
    pub fn mode(self) -> Mode {
        match self {
            Side::Offer => Mode::Sup,
            Side::Bid => Mode::Inf,
        }
    }
}

/// Uncertain-volatility pricing problem for `dS = rS dt + S dB` with
/// volatility in `[vol_lo, vol_hi]` (volatility units, not variance).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BsbSpec {
    pub payoff: FieldExpr,
    #[serde(default)]
    pub rate: f64,
    pub vol_lo: f64,
    pub vol_hi: f64,
    pub side: Side,
    pub spot: f64,
    pub maturity: f64,
    /// Explicit grid; when absent a log grid over five standard deviations
    /// with `nx` points and the largest step within `cfl_fraction` is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default = "default_nx")]
    pub nx: usize,
    #[serde(default = "default_cfl_fraction")]
    pub cfl_fraction: f64,
}

fn default_nx() -> usize {
    400
}

impl BsbSpec {
    pub fn new(payoff: FieldExpr, rate: f64, vol_lo: f64, vol_hi: f64, side: Side, spot: f64, maturity: f64) -> BsbSpec {
        BsbSpec {
            payoff,
            rate,
            vol_lo,
            vol_hi,
            side,
            spot,
            maturity,
            grid: None,
            nx: default_nx(),
            cfl_fraction: default_cfl_fraction(),
        }
    }

    pub fn with_side(&self, side: Side) -> BsbSpec {
        BsbSpec { side, ..self.clone() }
    }

    pub fn band(&self) -> Result<Band> {
        Band::from_vols(self.vol_lo, self.vol_hi)
    }

    pub fn validate(&self) -> Result<Vec<String>> {
        self.band()?;
        if !(self.spot > 0.0 && self.spot.is_finite()) {
            return Err(Error::Invalid(format!("spot must be positive, got {}", self.spot)));
        }
        if !(self.maturity > 0.0 && self.maturity.is_finite()) {
            return Err(Error::Invalid(format!("maturity must be positive, got {}", self.maturity)));
        }
        if !self.rate.is_finite() {
            return Err(Error::Invalid("rate must be finite".into()));
        }
        let mut warnings = Vec::new();
        if self.rate < 0.0 {
            warnings.push(format!("negative rate {} admitted", self.rate));
        }
        Ok(warnings)
    }
}

/// Model with `σ(S) = S`, drift `rS`, discounting driver `−r·y`.
pub fn bsb_model(spec: &BsbSpec) -> Result<ModelSpec> {
    let band = spec.band()?;
    let mut m = ModelSpec::heat(UncertaintyBox::new(vec![band])?, spec.payoff.clone(), spec.side.mode());
    m.sigma[0][0] = FieldExpr::x();
    if spec.rate != 0.0 {
        m.drift[0] = FieldExpr::parse(&format!("{}*x", spec.rate))?;
        m.driver_g = FieldExpr::parse(&format!("{}*y", -spec.rate))?;
        m.lipschitz = spec.rate.abs();
    }
    Ok(m)
}

/// Log grid `[S₀e^{−5σ̄√T}, S₀e^{5σ̄√T}]` with `nx` points and the step
/// count chosen at `cfl_fraction` of the stability limit.
pub fn default_bsb_grid(spec: &BsbSpec) -> Result<GridSpec> {
    let width = 5.0 * spec.vol_hi.max(1e-3) * spec.maturity.sqrt();
    let mut g = GridSpec::log(spec.spot * (-width).exp(), spec.spot * width.exp(), spec.nx, spec.maturity, 1)?;
    g.nt = cfl_steps(&bsb_model(spec)?, &g, spec.cfl_fraction)?;
    Ok(g)
}

#[derive(Debug, Clone)]
pub struct BsbResult {
    /// Value at `(0, spot)` by cubic interpolation in log price.
    pub price: f64,
    pub surface: ValueSurface,
    pub policy: ControlPolicy,
    pub warnings: Vec<String>,
}

pub fn bsb_price(spec: &BsbSpec) -> Result<BsbResult> {
    let warnings = spec.validate()?;
    let model = bsb_model(spec)?;
    let grid = match &spec.grid {
        Some(g) => g.clone(),
        None => default_bsb_grid(spec)?,
    };
    if (grid.horizon - spec.maturity).abs() > 1e-12 * spec.maturity {
        return Err(Error::InvalidGrid("grid horizon must equal the maturity".into()));
    }
    let (surface, policy) = super::solve_hjb(&model, &grid)?;
    let price = surface.interpolate(0, spec.spot)?;
    Ok(BsbResult {
        price,
        surface,
        policy,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_payoff_prices_to_spot() {
        for side in [Side::Offer, Side::Bid] {
            let mut spec = BsbSpec::new(FieldExpr::x(), 0.0, 0.1, 0.3, side, 100.0, 1.0);
            spec.nx = 200;
            let r = bsb_price(&spec).unwrap();
            assert!((r.price - 100.0).abs() < 1e-2, "{}", r.price);
        }
    }

    #[test]
    fn offer_dominates_bid_nodewise() {
        let payoff = FieldExpr::parse("max(x-90,0)-2*max(x-100,0)+max(x-110,0)").unwrap();
        let mut spec = BsbSpec::new(payoff, 0.02, 0.1, 0.3, Side::Offer, 100.0, 0.5);
        spec.nx = 160;
        let offer = bsb_price(&spec).unwrap();
        let bid = bsb_price(&spec.with_side(Side::Bid)).unwrap();
        for (o, b) in offer.surface.values.iter().zip(&bid.surface.values) {
            assert!(o >= b);
        }
        assert!(offer.price > bid.price);
    }

    #[test]
    fn negative_rate_warns() {
        let mut spec = BsbSpec::new(FieldExpr::x(), -0.01, 0.1, 0.2, Side::Bid, 100.0, 1.0);
        spec.nx = 60;
        assert_eq!(bsb_price(&spec).unwrap().warnings.len(), 1);
        spec.vol_lo = 0.3;
        assert!(matches!(bsb_price(&spec), Err(Error::InvalidBand { .. })));
    }
}

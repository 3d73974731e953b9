//! Forward-backward model specification: state dynamics under a controlled
//! variance, drivers, terminal payoff and the uncertainty set.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{FieldExpr, Point, Var};
use crate::uncertainty::{Mode, UncertaintyBox};

/// Three independent uncertainty sets: `gamma1` drives the `h` drift,
/// `gamma2` the diffusion and `gamma3` the `f` drivers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiBand {
    pub gamma1: UncertaintyBox,
    pub gamma2: UncertaintyBox,
    pub gamma3: UncertaintyBox,
}

/// State dynamics `dX = b dt + h_j d⟨B^j⟩ + σ_j dB^j` with value
/// `Y_t = E[Φ(X_T) + ∫ g(X, Y) dr + ∫ f_j(X, Y) d⟨B^j⟩ | F_t]`.
///
/// Coefficients may reference `x`/`x1`/`x2` and `t`; drivers may also
/// reference `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelDoc", into = "ModelDoc")]
pub struct ModelSpec {
    pub uncertainty: UncertaintyBox,
    pub drift: Vec<FieldExpr>,
    pub h: Vec<Vec<FieldExpr>>,
    pub sigma: Vec<Vec<FieldExpr>>,
    pub driver_g: FieldExpr,
    pub driver_f: Vec<FieldExpr>,
    pub terminal: FieldExpr,
    pub lipschitz: f64,
    pub mode: Mode,
    pub multi_band: Option<MultiBand>,
}

impl ModelSpec {
    /// Driftless, driver-free model with unit volatility in every dimension
    /// (`n = d`), i.e. the G-heat setup.
    pub fn heat(uncertainty: UncertaintyBox, terminal: FieldExpr, mode: Mode) -> ModelSpec {
        let d = uncertainty.dim();
        let sigma = (0..d)
            .map(|mu| {
                (0..d)
                    .map(|j| FieldExpr::num(if mu == j { 1.0 } else { 0.0 }))
                    .collect()
            })
            .collect();
        ModelSpec {
            drift: vec![FieldExpr::zero(); d],
            h: vec![vec![FieldExpr::zero(); d]; d],
            sigma,
            driver_g: FieldExpr::zero(),
            driver_f: vec![FieldExpr::zero(); d],
            terminal,
            lipschitz: 0.0,
            mode,
            multi_band: None,
            uncertainty,
        }
    }

    pub fn with_driver_g(mut self, g: FieldExpr, lipschitz: f64) -> ModelSpec {
        self.driver_g = g;
        self.lipschitz = lipschitz;
        self
    }

    pub fn with_mode(mut self, mode: Mode) -> ModelSpec {
        self.mode = mode;
        self
    }

    pub fn state_dim(&self) -> usize {
        self.drift.len()
    }

    pub fn box_dim(&self) -> usize {
        self.uncertainty.dim()
    }

    pub fn g_uses_y(&self) -> bool {
        self.driver_g.uses(Var::Y)
    }

    pub fn f_uses_y(&self, j: usize) -> bool {
        self.driver_f[j].uses(Var::Y)
    }

    pub fn depends_on_y(&self) -> bool {
        self.g_uses_y() || (0..self.box_dim()).any(|j| self.f_uses_y(j))
    }

    pub fn has_f(&self) -> bool {
        self.driver_f.iter().any(|f| !f.is_zero())
    }

    /// Checks dimensions, variable usage and the diffusion structure.
    pub fn validate(&self) -> Result<()> {
        let n = self.state_dim();
        let d = self.box_dim();
        if !(1..=2).contains(&n) {
            return Err(Error::Dimension(format!("state dimension {n} not in 1..=2")));
        }
        let rows = |m: &Vec<Vec<FieldExpr>>, name: &str| -> Result<()> {
            if m.len() != n || m.iter().any(|r| r.len() != d) {
                return Err(Error::Dimension(format!("{name} must be {n} x {d}")));
            }
            Ok(())
        };
        rows(&self.h, "h")?;
        rows(&self.sigma, "sigma")?;
        if self.driver_f.len() != d {
            return Err(Error::Dimension(format!("driver_f needs {d} entries")));
        }
        if !(self.lipschitz.is_finite() && self.lipschitz >= 0.0) {
            return Err(Error::Invalid(format!(
                "lipschitz constant must be finite and nonnegative, got {}",
                self.lipschitz
            )));
        }
        let coefficient_exprs = self
            .drift
            .iter()
            .chain(self.h.iter().flatten())
            .chain(self.sigma.iter().flatten());
        for e in coefficient_exprs {
            if e.uses(Var::Y) {
                return Err(Error::Invalid(format!("coefficient `{e}` may not depend on y")));
            }
        }
        if self.terminal.uses(Var::Y) || self.terminal.uses(Var::T) {
            return Err(Error::Invalid("terminal payoff may only depend on x".into()));
        }
        let all = self
            .drift
            .iter()
            .chain(self.h.iter().flatten())
            .chain(self.sigma.iter().flatten())
            .chain(self.driver_f.iter())
            .chain([&self.driver_g, &self.terminal]);
        for e in all {
            if e.state_arity() > n {
                return Err(Error::Dimension(format!(
                    "`{e}` references a state component beyond dimension {n}"
                )));
            }
        }
        for j in 0..d {
            let active = (0..n).filter(|&mu| !self.sigma[mu][j].is_zero()).count();
            if active > 1 {
                return Err(Error::Invalid(format!(
                    "volatility column {} drives more than one state component; \
                     cross-diffusion is not supported",
                    j + 1
                )));
            }
        }
        if let Some(mb) = &self.multi_band {
            if n != 1 {
                return Err(Error::Dimension("three-band models require a 1-dimensional state".into()));
            }
            for b in [&mb.gamma1, &mb.gamma2, &mb.gamma3] {
                if b.dim() != d {
                    return Err(Error::Dimension(format!("three-band boxes must have dimension {d}")));
                }
            }
        }
        Ok(())
    }

    /// Largest variance rate any band admits for dimension `j`, across the
    /// main box and the optional three-band boxes.
    pub fn max_variance(&self, j: usize) -> f64 {
        let mut m = self.uncertainty.band(j).hi;
        if let Some(mb) = &self.multi_band {
            for b in [&mb.gamma1, &mb.gamma2, &mb.gamma3] {
                m = m.max(b.band(j).hi);
            }
        }
        m
    }

    /// Samples difference quotients of `g` and every `f_j` in `y` and fails if
    /// any exceeds the declared constant. Returns the largest quotient seen.
    pub fn validate_lipschitz(
        &self,
        domain: &[(f64, f64)],
        horizon: f64,
        y_range: (f64, f64),
        samples: usize,
        seed: u64,
    ) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut observed: f64 = 0.0;
        let drivers: Vec<&FieldExpr> = std::iter::once(&self.driver_g)
            .chain(self.driver_f.iter())
            .filter(|e| e.uses(Var::Y))
            .collect();
        if drivers.is_empty() {
            return Ok(0.0);
        }
        let mut x = vec![0.0; domain.len()];
        for _ in 0..samples {
            let t = rng.random_range(0.0..=horizon.max(0.0));
            for (xi, &(lo, hi)) in x.iter_mut().zip(domain) {
                *xi = if lo < hi { rng.random_range(lo..=hi) } else { lo };
            }
            let y1 = rng.random_range(y_range.0..=y_range.1);
            let y2 = rng.random_range(y_range.0..=y_range.1);
            if y1 == y2 {
                continue;
            }
            for e in &drivers {
                let v1 = e.eval(&Point::txy(t, &x, y1))?;
                let v2 = e.eval(&Point::txy(t, &x, y2))?;
                observed = observed.max((v1 - v2).abs() / (y1 - y2).abs());
            }
        }
        if observed > self.lipschitz * (1.0 + 1e-9) + 1e-12 {
            return Err(Error::Lipschitz {
                declared: self.lipschitz,
                observed,
            });
        }
        Ok(observed)
    }
}

/// Serialized form of [`ModelSpec`]; most fields are optional with
/// zero/identity defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDoc {
    #[serde(rename = "box")]
    pub uncertainty: UncertaintyBox,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<Vec<FieldExpr>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<Vec<Vec<FieldExpr>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<Vec<FieldExpr>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub driver_g: Option<FieldExpr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub driver_f: Option<Vec<FieldExpr>>,
    pub terminal: FieldExpr,
    #[serde(default)]
    pub lipschitz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bands: Option<MultiBand>,
}

fn default_mode() -> Mode {
    Mode::Inf
}

impl TryFrom<ModelDoc> for ModelSpec {
    type Error = Error;

    fn try_from(doc: ModelDoc) -> Result<ModelSpec> {
        let d = doc.uncertainty.dim();
        let n = doc
            .drift
            .as_ref()
            .map(Vec::len)
            .or(doc.sigma.as_ref().map(Vec::len))
            .or(doc.h.as_ref().map(Vec::len))
            .unwrap_or(d.min(2));
        let sigma = match doc.sigma {
            Some(s) => s,
            None if n == d => ModelSpec::heat(doc.uncertainty.clone(), FieldExpr::zero(), doc.mode).sigma,
            None => {
                return Err(Error::Dimension(
                    "sigma must be given when state and box dimensions differ".into(),
                ))
            }
        };
        let spec = ModelSpec {
            drift: doc.drift.unwrap_or_else(|| vec![FieldExpr::zero(); n]),
            h: doc.h.unwrap_or_else(|| vec![vec![FieldExpr::zero(); d]; n]),
            sigma,
            driver_g: doc.driver_g.unwrap_or_else(FieldExpr::zero),
            driver_f: doc.driver_f.unwrap_or_else(|| vec![FieldExpr::zero(); d]),
            terminal: doc.terminal,
            lipschitz: doc.lipschitz,
            mode: doc.mode,
            multi_band: doc.bands,
            uncertainty: doc.uncertainty,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<ModelSpec> for ModelDoc {
    fn from(m: ModelSpec) -> ModelDoc {
        ModelDoc {
            uncertainty: m.uncertainty,
            mode: m.mode,
            drift: Some(m.drift),
            h: Some(m.h),
            sigma: Some(m.sigma),
            driver_g: Some(m.driver_g),
            driver_f: Some(m.driver_f),
            terminal: m.terminal,
            lipschitz: m.lipschitz,
            bands: m.multi_band,
        }
    }
}

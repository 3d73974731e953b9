//! Closed-form and quadrature oracles: Gaussian expectations, Black–Scholes
//! prices at fixed volatility, and numerical convexity classification.

use std::f64::consts::{PI, SQRT_2};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::expr::FieldExpr;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureSpec {
    /// Gauss–Hermite node count for smooth integrands.
    pub nodes: usize,
    /// Absolute tolerance of the adaptive fallback.
    pub tolerance: f64,
    /// Half-width of the integration domain in standard deviations.
    pub domain: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            nodes: 201,
            tolerance: 1e-10,
            domain: 12.0,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.nodes < 3 {
            return Err(Error::Invalid(format!("need at least 3 nodes, got {}", self.nodes)));
        }
        if !(self.tolerance > 0.0 && self.domain > 0.0) {
            return Err(Error::Invalid("tolerance and domain must be positive".into()));
        }
        Ok(())
    }
}

/// Nodes and weights of the `n`-point Gauss–Hermite rule for weight `e^{−x²}`.
///
/// Roots are bracketed by sign changes of the normalized Hermite function
/// `ψ_n(x) = p_n(x)e^{−x²/2}` (which stays bounded for large `n`) and refined
/// by bisection; weights are `e^{−x²}/(n ψ_{n−1}(x)²)`.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let nf = n as f64;
    let edge = (2.0 * nf + 1.0).sqrt() + 1.0;
    let step = 0.25 * PI / (2.0 * nf + 1.0).sqrt() / 4.0;
    let mut positive = Vec::with_capacity(n / 2 + 1);
    let mut a = if n % 2 == 1 { step * 0.5 } else { 0.0 };
    let mut fa = hermite_fn(n, a).0;
    while a < edge && positive.len() < n / 2 {
        let b = a + step;
        let fb = hermite_fn(n, b).0;
        if fa == 0.0 {
            positive.push(a);
        } else if fa * fb < 0.0 {
            let (mut lo, mut hi, mut flo) = (a, b, fa);
            while hi - lo > 4.0 * f64::EPSILON * hi {
                let mid = 0.5 * (lo + hi);
                let fm = hermite_fn(n, mid).0;
                if (fm < 0.0) == (flo < 0.0) {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
            }
            positive.push(0.5 * (lo + hi));
        }
        a = b;
        fa = fb;
    }
    assert_eq!(positive.len(), n / 2, "Hermite root bracketing missed a root");
    let mut x: Vec<f64> = positive.iter().rev().map(|z| -z).collect();
    if n % 2 == 1 {
        x.push(0.0);
    }
    x.extend(positive.iter().copied());
    let w = x
        .iter()
        .map(|&z| {
            let prev = hermite_fn(n, z).1;
            (-z * z).exp() / (nf * prev * prev)
        })
        .collect();
    (x, w)
}

/// `(ψ_n(x), ψ_{n−1}(x))` by the orthonormal three-term recurrence.
fn hermite_fn(n: usize, x: f64) -> (f64, f64) {
    const PIM4: f64 = 0.751_125_544_464_942_5;
    let mut p1 = PIM4 * (-0.5 * x * x).exp();
    let mut p2 = 0.0;
    for j in 1..=n {
        let p3 = p2;
        p2 = p1;
        let jf = j as f64;
        p1 = x * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
    }
    (p1, p2)
}

fn cached_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    static DEFAULT: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    if n == 201 {
        DEFAULT.get_or_init(|| gauss_hermite(201)).clone()
    } else {
        gauss_hermite(n)
    }
}

/// Standard normal density.
pub fn normal_pdf(y: f64) -> f64 {
    (-0.5 * y * y).exp() / (2.0 * PI).sqrt()
}

/// Standard normal distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// `E[φ(σY)]` for standard normal `Y`.
///
/// Smooth integrands use Gauss–Hermite; integrands with `max`, `min` or
/// `abs` are split at their kinks on `[−domain, domain]` and integrated by
/// adaptive Gauss–Kronrod.
pub fn gaussian_expectation(phi: &FieldExpr, sigma: f64, spec: &QuadratureSpec) -> Result<f64> {
    spec.validate()?;
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Invalid(format!("sigma must be nonnegative, got {sigma}")));
    }
    if sigma == 0.0 {
        return phi.eval_x(0.0);
    }
    let f = |y: f64| phi.eval_x(sigma * y);
    if phi.switch_functions().is_empty() {
        let (x, w) = cached_rule(spec.nodes);
        let mut acc = 0.0;
        for (xi, wi) in x.iter().zip(&w) {
            if *wi > 0.0 {
                acc += wi * f(SQRT_2 * xi)?;
            }
        }
        return Ok(acc / PI.sqrt());
    }
    let mut cuts = vec![-spec.domain, spec.domain];
    for s in phi.switch_functions() {
        cuts.extend(roots(|y| s.eval_x(sigma * y), -spec.domain, spec.domain)?);
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
    let pieces = cuts.len() - 1;
    let tol = spec.tolerance / pieces.max(1) as f64;
    let mut total = 0.0;
    for win in cuts.windows(2) {
        if win[1] > win[0] {
            total += adaptive_gk(&|y| Ok(f(y)? * normal_pdf(y)), win[0], win[1], tol, 0)?;
        }
    }
    Ok(total)
}

/// Sign changes of `s` on `[a, b]` located by a 4000-cell scan and bisection.
fn roots<F: Fn(f64) -> Result<f64>>(s: F, a: f64, b: f64) -> Result<Vec<f64>> {
    const CELLS: usize = 4000;
    let mut out = Vec::new();
    let mut x0 = a;
    let mut s0 = s(a)?;
    for i in 1..=CELLS {
        let x1 = a + (b - a) * i as f64 / CELLS as f64;
        let s1 = s(x1)?;
        if s0 == 0.0 {
            out.push(x0);
        } else if s0 * s1 < 0.0 {
            let (mut lo, mut hi, mut slo) = (x0, x1, s0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                let sm = s(mid)?;
                if sm == 0.0 {
                    lo = mid;
                    hi = mid;
                    break;
                }
                if (sm < 0.0) == (slo < 0.0) {
                    lo = mid;
                    slo = sm;
                } else {
                    hi = mid;
                }
            }
            out.push(0.5 * (lo + hi));
        }
        x0 = x1;
        s0 = s1;
    }
    Ok(out)
}

const GK_X: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const GK_WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> Result<f64>>(f: &F, a: f64, b: f64) -> Result<(f64, f64)> {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c)?;
    let mut kronrod = GK_WK[7] * fc;
    let mut gauss = GK_WG[3] * fc;
    for i in 0..7 {
        let v = f(c - h * GK_X[i])? + f(c + h * GK_X[i])?;
        kronrod += GK_WK[i] * v;
        if i % 2 == 1 {
            gauss += GK_WG[i / 2] * v;
        }
    }
    Ok((kronrod * h, (kronrod - gauss).abs() * h))
}

fn adaptive_gk<F: Fn(f64) -> Result<f64>>(f: &F, a: f64, b: f64, tol: f64, depth: usize) -> Result<f64> {
    let (val, err) = gk15(f, a, b)?;
    if err <= tol || err <= 1e-15 * val.abs() {
        return Ok(val);
    }
    if depth >= 60 || b - a < 1e-13 {
        return Err(Error::Quadrature(format!(
            "no convergence on [{a}, {b}] (estimated error {err:.3e})"
        )));
    }
    let m = 0.5 * (a + b);
    Ok(adaptive_gk(f, a, m, 0.5 * tol, depth + 1)? + adaptive_gk(f, m, b, 0.5 * tol, depth + 1)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptionKind {
    Call,
    Put,
}

/// Black–Scholes value of a European call or put at constant volatility.
/// At zero volatility the discounted intrinsic value on the forward.
pub fn extremal_bs_price(kind: OptionKind, s: f64, k: f64, r: f64, t: f64, sigma: f64) -> Result<f64> {
    if !(s > 0.0 && k > 0.0 && t > 0.0 && sigma >= 0.0) {
        return Err(Error::Invalid("need S, K, T > 0 and sigma >= 0".into()));
    }
    let df = (-r * t).exp();
    if sigma == 0.0 {
        let fwd = s / df;
        return Ok(df
            * match kind {
                OptionKind::Call => (fwd - k).max(0.0),
                OptionKind::Put => (k - fwd).max(0.0),
            });
    }
    let vol = sigma * t.sqrt();
    let d1 = ((s / k).ln() + (r + 0.5 * sigma * sigma) * t) / vol;
    let d2 = d1 - vol;
    Ok(match kind {
        OptionKind::Call => s * normal_cdf(d1) - k * df * normal_cdf(d2),
        OptionKind::Put => k * df * normal_cdf(-d2) - s * normal_cdf(-d1),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Convexity {
    Convex,
    Concave,
    /// Both convex and concave within tolerance.
    Affine,
    Neither,
}

/// Classifies `φ` on `[a, b]` by the signs of second differences on a
/// uniform `samples`-point grid, tolerance `1e-9` relative to the scale of φ.
pub fn convexity_detect(phi: &FieldExpr, domain: (f64, f64), samples: usize) -> Result<Convexity> {
    if samples < 3 {
        return Err(Error::Invalid("convexity detection needs at least 3 samples".into()));
    }
    let (a, b) = domain;
    let vals: Vec<f64> = (0..samples)
        .map(|i| phi.eval_x(a + (b - a) * i as f64 / (samples - 1) as f64))
        .collect::<Result<_>>()?;
    let scale = vals.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-9 * scale;
    let (mut pos, mut neg) = (false, false);
    for w in vals.windows(3) {
        let d2 = w[2] - 2.0 * w[1] + w[0];
        pos |= d2 > tol;
        neg |= d2 < -tol;
    }
    Ok(match (pos, neg) {
        (false, false) => Convexity::Affine,
        (true, false) => Convexity::Convex,
        (false, true) => Convexity::Concave,
        (true, true) => Convexity::Neither,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ge(s: &str, sigma: f64) -> f64 {
        gaussian_expectation(&FieldExpr::parse(s).unwrap(), sigma, &QuadratureSpec::default()).unwrap()
    }

    #[test]
    fn hermite_rule_integrates_moments() {
        let (x, w) = gauss_hermite(201);
        let total: f64 = w.iter().sum();
        assert!((total - PI.sqrt()).abs() < 1e-13);
        let second: f64 = x.iter().zip(&w).map(|(x, w)| w * x * x).sum();
        assert!((second - PI.sqrt() / 2.0).abs() < 1e-13);
        let (x5, _) = gauss_hermite(5);
        assert!((x5[4] - 2.020_182_870_456_086).abs() < 1e-13);
    }

    #[test]
    fn expectation_examples() {
        assert!((ge("1", 0.7) - 1.0).abs() < 1e-13);
        assert!((ge("x*x", 2.0) - 4.0).abs() < 1e-12);
        assert!((ge("max(x,0)", 1.0) - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-10);
        assert!((ge("abs(x)", 2.0) - 2.0 * (2.0 / PI).sqrt()).abs() < 1e-10);
        assert!((ge("exp(x)", 0.5) - (0.125f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn node_count_stability() {
        for s in ["x*x", "exp(0.3*x)", "cos(x)", "pow(x,4)-x"] {
            let phi = FieldExpr::parse(s).unwrap();
            let a = gaussian_expectation(&phi, 1.3, &QuadratureSpec::default()).unwrap();
            let spec = QuadratureSpec {
                nodes: 401,
                ..QuadratureSpec::default()
            };
            let b = gaussian_expectation(&phi, 1.3, &spec).unwrap();
            assert!((a - b).abs() <= 1e-10, "{s}: {a} vs {b}");
        }
    }

    #[test]
    fn black_scholes_examples() {
        let c = extremal_bs_price(OptionKind::Call, 100.0, 100.0, 0.0, 1.0, 0.2).unwrap();
        assert!((c - 7.965_567).abs() < 1e-6);
        let c = extremal_bs_price(OptionKind::Call, 110.0, 100.0, 0.0, 1.0, 0.0).unwrap();
        assert_eq!(c, 10.0);
        for (s, k, r, t, v) in [(100.0, 90.0, 0.03, 0.7, 0.25), (80.0, 100.0, -0.01, 2.0, 0.4)] {
            let c = extremal_bs_price(OptionKind::Call, s, k, r, t, v).unwrap();
            let p = extremal_bs_price(OptionKind::Put, s, k, r, t, v).unwrap();
            let parity: f64 = c - s + k * (-r * t).exp();
            assert!((p - parity).abs() <= 1e-12);
        }
    }

    #[test]
    fn lognormal_quadrature_matches_closed_form() {
        let (s, k, r, t, v): (f64, f64, f64, f64, f64) = (100.0, 100.0, 0.02, 1.0, 0.2);
        let drift = (r - 0.5 * v * v) * t;
        let phi = FieldExpr::parse(&format!("max({s}*exp({drift}+{}*x)-{k},0)", v * t.sqrt())).unwrap();
        let q = (-r * t).exp() * gaussian_expectation(&phi, 1.0, &QuadratureSpec::default()).unwrap();
        let c = extremal_bs_price(OptionKind::Call, s, k, r, t, v).unwrap();
        assert!((q - c).abs() < 1e-9);
    }

    #[test]
    fn convexity_examples() {
        let dom = (50.0, 150.0);
        let c = |s: &str| convexity_detect(&FieldExpr::parse(s).unwrap(), dom, 201).unwrap();
        assert_eq!(c("max(x-100,0)"), Convexity::Convex);
        assert_eq!(c("-max(x-100,0)"), Convexity::Concave);
        assert_eq!(c("max(x-90,0)-2*max(x-100,0)+max(x-110,0)"), Convexity::Neither);
        assert_eq!(c("3*x+1"), Convexity::Affine);
    }
}

//! Solver output against closed forms and quadrature.

use gexpect_core::analytic::{
    convexity_detect, extremal_bs_price, gauss_hermite, gaussian_expectation, normal_cdf, Convexity, OptionKind,
    QuadratureSpec,
};
use gexpect_core::pde::{bsb_price, solve_gheat, solve_hjb, BsbSpec, Side};
use gexpect_core::scheme::cfl_steps;
use gexpect_core::{FieldExpr, GridSpec, Mode, ModelSpec, UncertaintyBox};

#[test]
fn gauss_hermite_integrates_polynomials_exactly() {
    let (x, w) = gauss_hermite(10);
    let pi_sqrt = std::f64::consts::PI.sqrt();
    // ∫ x^{2k} e^{-x²} dx = Γ(k + 1/2).
    let moments = [pi_sqrt, pi_sqrt / 2.0, 3.0 * pi_sqrt / 4.0, 15.0 * pi_sqrt / 8.0];
    for (k, m) in moments.iter().enumerate() {
        let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(2 * k as i32)).sum();
        assert!((q - m).abs() < 1e-13 * m.max(1.0), "k = {k}: {q} vs {m}");
    }
}

#[test]
fn gaussian_expectations_of_kinked_payoffs() {
    let spec = QuadratureSpec::default();
    // E|σZ| = σ√(2/π)
    let v = gaussian_expectation(&FieldExpr::parse("abs(x)").unwrap(), 0.7, &spec).unwrap();
    assert!((v - 0.7 * (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-10);
    // E[(σZ − k)⁺] = σφ(k/σ) − k(1 − Φ(k/σ))
    let (s, k): (f64, f64) = (1.3, 0.4);
    let d = k / s;
    let exact = s * (-0.5 * d * d).exp() / (2.0 * std::f64::consts::PI).sqrt() - k * (1.0 - normal_cdf(d));
    let v = gaussian_expectation(&FieldExpr::parse("max(x - 0.4, 0)").unwrap(), s, &spec).unwrap();
    assert!((v - exact).abs() < 1e-10, "{v} vs {exact}");
}

#[test]
fn put_call_parity_of_extremal_prices() {
    for sigma in [0.0, 0.1, 0.35] {
        let c = extremal_bs_price(OptionKind::Call, 100.0, 95.0, 0.03, 0.8, sigma).unwrap();
        let p = extremal_bs_price(OptionKind::Put, 100.0, 95.0, 0.03, 0.8, sigma).unwrap();
        assert!((c - p - (100.0 - 95.0 * (-0.03f64 * 0.8).exp())).abs() < 1e-10);
    }
}

#[test]
fn convex_payoffs_price_at_the_band_endpoints() {
    let payoff = FieldExpr::parse("max(x - 105, 0)").unwrap();
    assert_eq!(convexity_detect(&payoff, (50.0, 200.0), 301).unwrap(), Convexity::Convex);
    let spec = BsbSpec::new(payoff, 0.02, 0.15, 0.35, Side::Offer, 100.0, 0.5);
    let offer = bsb_price(&spec).unwrap().price;
    let bid = bsb_price(&spec.with_side(Side::Bid)).unwrap().price;
    let hi = extremal_bs_price(OptionKind::Call, 100.0, 105.0, 0.02, 0.5, 0.35).unwrap();
    let lo = extremal_bs_price(OptionKind::Call, 100.0, 105.0, 0.02, 0.5, 0.15).unwrap();
    assert!((offer - hi).abs() < 2e-3 * hi, "offer {offer} vs {hi}");
    assert!((bid - lo).abs() < 2e-3 * lo, "bid {bid} vs {lo}");
}

#[test]
fn convex_gheat_matches_upper_variance_gaussian() {
    let phi = FieldExpr::parse("abs(x - 0.3)").unwrap();
    let bx = UncertaintyBox::single(0.25, 1.0).unwrap();
    let mut grid = GridSpec::uniform(-8.0, 8.0, 321, 1.0, 1).unwrap();
    grid.nt = cfl_steps(&ModelSpec::heat(bx.clone(), phi.clone(), Mode::Sup), &grid, 0.9).unwrap();
    let sup = solve_gheat(&phi, &bx, &grid, Mode::Sup).unwrap();
    let inf = solve_gheat(&phi, &bx, &grid, Mode::Inf).unwrap();
    let q = QuadratureSpec::default();
    let hi = gaussian_expectation(&phi, 1.0, &q).unwrap();
    let lo = gaussian_expectation(&phi, 0.5, &q).unwrap();
    assert!((sup.interpolate(0, 0.0).unwrap() - hi).abs() < 2e-3);
    assert!((inf.interpolate(0, 0.0).unwrap() - lo).abs() < 2e-3);
}

#[test]
fn affine_terminal_is_transported_exactly() {
    // Second differences of an affine payoff vanish, so nothing diffuses.
    let bx = UncertaintyBox::single(0.2, 0.8).unwrap();
    let model = ModelSpec::heat(bx, FieldExpr::parse("2 * x - 1").unwrap(), Mode::Sup);
    let mut grid = GridSpec::uniform(-3.0, 3.0, 61, 0.5, 1).unwrap();
    grid.nt = cfl_steps(&model, &grid, 0.9).unwrap();
    let (surface, _) = solve_hjb(&model, &grid).unwrap();
    for k in 0..grid.nodes() {
        let x = grid.point(k)[0];
        assert!((surface.at(0, k) - (2.0 * x - 1.0)).abs() < 1e-12);
    }
}

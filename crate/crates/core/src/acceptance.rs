//! The acceptance suite: twelve numerical checks with pinned tolerances,
//! shared by the `acceptance` test target and `gexpect verify`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::analytic::{extremal_bs_price, OptionKind};
use crate::error::{Error, Result};
use crate::expr::FieldExpr;
use crate::gbsde::{
    comparison_check, linear_bsde_solve, picard_solve, InitialGuess, LinearBsde, LinearDomain, LinearSolution,
    PicardOptions,
};
use crate::lattice::{
    brute_force_expectation, conditional_expectation, quadvar_functional, quadvar_scan, GridSpec, Lattice,
    TreeRunning, TreeSpec,
};
use crate::model::ModelSpec;
use crate::montecarlo::{
    counterexample_limit, policy_value_estimate, quad_var_report, sample_paths, Drivers, PathSource, PolicySpec,
    Storage,
};
use crate::pde::{bsb_price, gheat_rows, solve_gheat, solve_hjb, BsbSpec, Side};
use crate::scheme::cfl_steps;
use crate::uncertainty::{Band, Mode, UncertaintyBox};

#[derive(Debug, Clone, Serialize)]
pub struct CriterionOutcome {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CriterionOutcome {
    pub fn line(&self) -> String {
        format!(
            "criterion {:>2} {:<28} {} ({:.2} s) {}",
            self.id,
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.seconds,
            self.detail
        )
    }
}

pub const CRITERIA: [(u8, &str); 12] = [
    (1, "bsb-convex-collapse"),
    (2, "feynman-kac"),
    (3, "tree-brute-force"),
    (4, "picard-contraction"),
    (5, "linear-bsde"),
    (6, "comparison"),
    (7, "counterexample"),
    (8, "quadratic-variation-bounds"),
    (9, "expectation-axioms"),
    (10, "quadvar-functional"),
    (11, "policy-attainment"),
    (12, "gheat-semigroup"),
];

/// Runs one criterion; computation errors count as failures.
pub fn run_criterion(id: u8) -> CriterionOutcome {
    let name = CRITERIA
        .iter()
        .find(|(i, _)| *i == id)
        .map(|(_, n)| *n)
        .unwrap_or("unknown");
    let start = Instant::now();
    let result = match id {
        1 => bsb_convex_collapse(),
        2 => feynman_kac(),
        3 => tree_brute_force(),
        4 => picard_contraction(),
        5 => linear_bsde(),
        6 => comparison(),
        7 => counterexample(),
        8 => quadratic_variation_bounds(),
        9 => expectation_axioms(),
        10 => quadvar(),
        11 => policy_attainment(),
        12 => gheat_semigroup(),
        _ => Err(Error::Invalid(format!("no criterion {id}"))),
    };
    let seconds = start.elapsed().as_secs_f64();
    let (passed, detail) = match result {
        Ok(Check { passed, detail, limit }) => match limit {
            Some(l) if seconds > l => (false, format!("{detail}; over the {l} s limit")),
            _ => (passed, detail),
        },
        Err(e) => (false, format!("error: {e}")),
    };
    CriterionOutcome {
        id,
        name,
        passed,
        detail,
        seconds,
    }
}

pub fn run_all() -> Vec<CriterionOutcome> {
    CRITERIA.iter().map(|(id, _)| run_criterion(*id)).collect()
}

struct Check {
    passed: bool,
    detail: String,
    limit: Option<f64>,
}

fn check(passed: bool, detail: String) -> Result<Check> {
    Ok(Check {
        passed,
        detail,
        limit: None,
    })
}

fn timed(passed: bool, detail: String, limit: f64) -> Result<Check> {
    Ok(Check {
        passed,
        detail,
        limit: Some(limit),
    })
}

fn expr(s: &str) -> FieldExpr {
    FieldExpr::parse(s).expect("built-in expression")
}

fn bsb_convex_collapse() -> Result<Check> {
    let spec = BsbSpec::new(expr("max(x-100,0)"), 0.0, 0.1, 0.3, Side::Offer, 100.0, 1.0);
    let offer = bsb_price(&spec)?.price;
    let bid = bsb_price(&spec.with_side(Side::Bid))?.price;
    let hi = extremal_bs_price(OptionKind::Call, 100.0, 100.0, 0.0, 1.0, 0.3)?;
    let lo = extremal_bs_price(OptionKind::Call, 100.0, 100.0, 0.0, 1.0, 0.1)?;
    let eo = (offer - hi).abs() / hi;
    let eb = (bid - lo).abs() / lo;
    timed(
        eo <= 5e-3 && eb <= 5e-3,
        format!("offer {offer:.6} vs {hi:.6} (rel {eo:.2e}), bid {bid:.6} vs {lo:.6} (rel {eb:.2e})"),
        10.0,
    )
}

/// Heat-type model with driver `−0.05y + 0.1cos(y)` and call payoff, on
/// `[−6, 6]` with 241 nodes and the step at 0.9 of the stability limit.
pub fn feynman_kac_model() -> Result<(ModelSpec, GridSpec)> {
    let m = ModelSpec::heat(UncertaintyBox::single(0.25, 1.0)?, expr("max(x,0)"), Mode::Inf)
        .with_driver_g(expr("-0.05*y+0.1*cos(y)"), 0.15);
    let mut g = GridSpec::uniform(-6.0, 6.0, 241, 1.0, 1)?;
    g.nt = cfl_steps(&m, &g, 0.9)?;
    Ok((m, g))
}

const PICARD_TOL: f64 = 1e-8;

fn feynman_kac() -> Result<Check> {
    let (m, g) = feynman_kac_model()?;
    let (direct, _) = solve_hjb(&m, &g)?;
    let opts = PicardOptions {
        tol: PICARD_TOL,
        ..PicardOptions::default()
    };
    let (pic, diag) = picard_solve(&m, &g, &opts)?;
    let gap = pic.max_abs_diff(&direct, |_, k| g.is_interior(k, 0.6));
    timed(
        gap <= 10.0 * PICARD_TOL,
        format!("interior gap {gap:.3e} after {} iterations", diag.iterations()),
        30.0,
    )
}

/// Twenty reproducible 3-step trees with two controls and a payoff each.
pub fn tree_catalog() -> Vec<(TreeSpec, FieldExpr)> {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    (0..20)
        .map(|_| {
            let h = rng.random_range(0.3..0.8);
            let x0 = rng.random_range(-0.5..0.5);
            let lo = rng.random_range(0.1..0.5);
            let hi = rng.random_range(0.6..1.5);
            // Room for a y-dependent driver with Lipschitz constant up to 0.5.
            let dt = rng.random_range(0.3..0.8) / (hi / (h * h) + 0.5 * (1.0 + hi));
            let tree = TreeSpec::new(3, h, x0, dt, vec![lo, hi]).expect("catalog tree is valid");
            (tree, random_payoff(&mut rng))
        })
        .collect()
}

/// Sum of three random terms: calls, puts, straddles, sines and lines.
pub fn random_payoff(rng: &mut ChaCha8Rng) -> FieldExpr {
    let mut parts = Vec::new();
    for _ in 0..3 {
        let a: f64 = rng.random_range(-2.0..2.0);
        let k: f64 = rng.random_range(-1.5..1.5);
        let w: f64 = rng.random_range(0.5..3.0);
        parts.push(match rng.random_range(0..5) {
            0 => format!("{a}*max(x-{k},0)"),
            1 => format!("{a}*max({k}-x,0)"),
            2 => format!("{a}*abs(x-{k})"),
            3 => format!("{a}*sin({w}*x)"),
            _ => format!("{a}*x"),
        });
    }
    FieldExpr::parse(&parts.join("+").replace("+-", "-").replace("--", "+")).expect("generated payoff parses")
}

fn tree_brute_force() -> Result<Check> {
    let mut worst: f64 = 0.0;
    for (tree, payoff) in tree_catalog() {
        let (model, grid, root) = tree.lattice_setup(&payoff, &TreeRunning::default())?;
        for mode in [Mode::Inf, Mode::Sup] {
            let bf = brute_force_expectation(&tree, &payoff, &TreeRunning::default(), mode)?;
            let (s, _) = conditional_expectation(&model, &grid, mode)?;
            worst = worst.max((bf - s.at(0, root)).abs());
        }
    }
    timed(worst <= 1e-12, format!("largest gap {worst:.3e} over 20 trees, both modes"), 5.0)
}

fn picard_contraction() -> Result<Check> {
    let (m, g) = feynman_kac_model()?;
    let hi = m.uncertainty.band(0).hi;
    let beta = m.lipschitz * (1.0 + hi);
    let run = |y0: f64| {
        picard_solve(
            &m,
            &g,
            &PicardOptions {
                tol: PICARD_TOL,
                beta: Some(beta),
                initial: InitialGuess::Constant(y0),
                ..PicardOptions::default()
            },
        )
    };
    let (a, diag) = run(0.0)?;
    let (b, _) = run(10.0)?;
    let worst_ratio = (1..diag.iterations())
        .filter_map(|i| diag.ratio(i))
        .fold(0.0f64, f64::max);
    let gap = a.max_abs_diff(&b, |_, _| true);
    check(
        worst_ratio <= 0.6 && gap <= 2.0 * PICARD_TOL,
        format!("largest ratio {worst_ratio:.3e}, Y0=0 vs Y0=10 gap {gap:.3e}"),
    )
}

fn linear_bsde() -> Result<Check> {
    let (heat, g) = feynman_kac_model()?;
    let problem = LinearBsde {
        band: heat.uncertainty.band(0),
        a: FieldExpr::num(-0.05),
        b: 0.0,
        big_a: FieldExpr::zero(),
        big_c: FieldExpr::zero(),
        terminal: heat.terminal.clone(),
        mode: Mode::Inf,
    };
    let LinearSolution::Surface(formula) = linear_bsde_solve(&problem, &LinearDomain::Grid(g.clone()))? else {
        return Err(Error::Invalid("grid domain returned a root value".into()));
    };
    let model = problem.model(g.horizon, g.nt)?;
    let opts = PicardOptions {
        tol: 1e-12,
        ..PicardOptions::default()
    };
    let (pic, _) = picard_solve(&model, &g, &opts)?;
    let gap_a = formula.max_abs_diff(&pic, |_, _| true);

    let mut gap_b: f64 = 0.0;
    for (tree, payoff) in tree_catalog() {
        for mode in [Mode::Inf, Mode::Sup] {
            let p = LinearBsde {
                band: Band::new(tree.lo(), tree.hi())?,
                a: FieldExpr::num(-0.05),
                b: 0.5,
                big_a: FieldExpr::zero(),
                big_c: FieldExpr::zero(),
                terminal: payoff.clone(),
                mode,
            };
            let LinearSolution::Root(v) = linear_bsde_solve(&p, &LinearDomain::Tree(tree.clone()))? else {
                return Err(Error::Invalid("tree domain returned a surface".into()));
            };
            let (_, grid, root) = tree.lattice_setup(&payoff, &TreeRunning::default())?;
            let (s, _) = picard_solve(&p.model(tree.horizon(), tree.steps)?, &grid, &opts)?;
            gap_b = gap_b.max((v - s.at(0, root)).abs());
        }
    }
    check(
        gap_a <= 1e-8 && gap_b <= 1e-10,
        format!("regime a gap {gap_a:.3e}; regime b gap {gap_b:.3e} over 20 trees, both modes"),
    )
}

fn comparison() -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut grid = GridSpec::uniform(-6.0, 6.0, 121, 1.0, 1)?;
    let mut worst = f64::INFINITY;
    let mut data_violations = 0;
    for i in 0..50 {
        let c1: f64 = rng.random_range(-0.1..0.1);
        let c2: f64 = rng.random_range(-0.2..0.2);
        let k = c1.abs() + c2.abs();
        let g_bar = format!("{c1}*y+{c2}*cos(y)").replace("+-", "-");
        let xi_bar = random_payoff(&mut rng);
        let bump: f64 = rng.random_range(0.01..1.0);
        let centre: f64 = rng.random_range(-2.0..2.0);
        let shift: f64 = rng.random_range(0.001..0.2);
        let mode = if i % 2 == 0 { Mode::Inf } else { Mode::Sup };
        let bar = ModelSpec::heat(UncertaintyBox::single(0.25, 1.0)?, xi_bar.clone(), mode)
            .with_driver_g(FieldExpr::parse(&g_bar)?, k);
        let mut model = bar.clone();
        model.terminal = FieldExpr::parse(&format!("{xi_bar}+{bump}*exp(-pow(x-{centre},2))"))?;
        model.driver_g = FieldExpr::parse(&format!("{g_bar}+{shift}"))?;
        if i == 0 {
            grid.nt = cfl_steps(&model, &grid, 0.9)?;
        }
        let r = comparison_check(&model, &bar, &grid, (-20.0, 20.0))?;
        worst = worst.min(r.min_difference);
        data_violations += r.hypothesis_violations;
    }
    check(
        worst >= -1e-7,
        format!("smallest Y - Ybar {worst:.3e} over 50 pairs ({data_violations} sampled data violations)"),
    )
}

fn counterexample() -> Result<Check> {
    let rows = counterexample_limit(Band::new(1.0, 4.0)?, &[0.1, 0.01, 0.001])?;
    let ok = rows.iter().all(|r| r.value == 3.0 && r.limit == 0.0);
    let values: Vec<String> = rows.iter().map(|r| format!("{}", r.value)).collect();
    timed(ok, format!("values [{}], quasi-sure limit 0", values.join(", ")), 1.0)
}

fn butterfly_bid() -> BsbSpec {
    BsbSpec::new(
        expr("max(x-90,0)-2*max(x-100,0)+max(x-110,0)"),
        0.0,
        0.1,
        0.3,
        Side::Bid,
        100.0,
        1.0,
    )
}

fn quadratic_variation_bounds() -> Result<Check> {
    let spec = butterfly_bid();
    let pde = bsb_price(&spec)?;
    let band = spec.band()?;
    let policies = [
        ("constant-lo", PolicySpec::Constant(band.lo)),
        ("constant-mid", PolicySpec::Constant(0.5 * (band.lo + band.hi))),
        (
            "bang-bang",
            PolicySpec::BangBangGamma {
                surface: pde.surface.clone(),
                mode: Mode::Inf,
            },
        ),
        ("pde", PolicySpec::Lookup(pde.policy.clone())),
        ("random", PolicySpec::Random { seed: 99 }),
    ];
    let mut total = 0;
    let mut parts = Vec::new();
    for (i, (name, pol)) in policies.iter().enumerate() {
        let batch = sample_paths(PathSource::Bsb(&spec), pol, 10_000, 64, 1000 + i as u64, Storage::Full)?;
        let rep = quad_var_report(&batch, None)?;
        total += rep.violations;
        parts.push(format!("{name} [{:.4}, {:.4}]", rep.min_ratio, rep.max_ratio));
    }
    check(total == 0, format!("{total} violations; ratios {}", parts.join(", ")))
}

fn expectation_axioms() -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut model = ModelSpec::heat(UncertaintyBox::single(0.25, 1.0)?, FieldExpr::zero(), Mode::Inf);
    model.drift[0] = expr("0.2-0.1*x");
    let mut grid = GridSpec::uniform(-4.0, 4.0, 41, 0.5, 1)?;
    grid.nt = cfl_steps(&model, &grid, 0.9)?;
    let lat = Lattice::new(&model, &grid)?;
    let mid = grid.nt / 2;
    let row = |v: &FieldExpr| crate::scheme::terminal_row(v, &grid);
    let sup = |t: Vec<f64>| lat.expectation_of(Mode::Sup, t).map(|s| s.0.values);
    let inf = |t: Vec<f64>| lat.expectation_of(Mode::Inf, t).map(|s| s.0.values);
    let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<f64>>();
    let mut worst = [0.0f64; 9];
    let names = [
        "duality",
        "subadditivity",
        "superadditivity",
        "homogeneity",
        "monotonicity",
        "constants",
        "translation",
        "scaling",
        "contraction",
    ];
    for _ in 0..100 {
        let p1 = row(&random_payoff(&mut rng))?;
        let p2 = row(&random_payoff(&mut rng))?;
        let i1 = inf(p1.clone())?;
        let s1 = sup(p1.clone())?;
        let i2 = inf(p2.clone())?;
        let s2 = sup(p2.clone())?;
        let sneg = sup(neg(&p1))?;
        for (a, b) in i1.iter().zip(&sneg) {
            worst[0] = worst[0].max((a + b).abs());
        }
        let sum: Vec<f64> = p1.iter().zip(&p2).map(|(a, b)| a + b).collect();
        let ssum = sup(sum.clone())?;
        let isum = inf(sum)?;
        for k in 0..ssum.len() {
            worst[1] = worst[1].max(ssum[k] - (s1[k] + s2[k]));
            worst[2] = worst[2].max((i1[k] + i2[k]) - isum[k]);
        }
        let lambda: f64 = rng.random_range(0.1..5.0);
        let scaled = inf(p1.iter().map(|v| lambda * v).collect())?;
        for (a, b) in scaled.iter().zip(&i1) {
            worst[3] = worst[3].max((a - lambda * b).abs());
        }
        let bigger: Vec<f64> = p1.iter().zip(&p2).map(|(a, b)| a + b.abs()).collect();
        let ib = inf(bigger)?;
        for (a, b) in ib.iter().zip(&i1) {
            worst[4] = worst[4].max(b - a);
        }
        let c: f64 = rng.random_range(-3.0..3.0);
        for v in inf(vec![c; p1.len()])? {
            worst[5] = worst[5].max((v - c).abs());
        }
        // Node-measurable multipliers at the middle row, on a few nodes.
        for k in [8usize, 17, 20, 26, 33] {
            let x = grid.point(k)[0];
            let eta = (1.5 * x).sin() + 0.3 * x;
            let shifted = inf(p1.iter().map(|v| v + eta).collect())?;
            let nodes = grid.nodes();
            worst[6] = worst[6].max((shifted[mid * nodes + k] - (i1[mid * nodes + k] + eta)).abs());
            let product = inf(p1.iter().map(|v| eta * v).collect())?;
            let expect = eta.max(0.0) * i1[mid * nodes + k] + (-eta).max(0.0) * inf(neg(&p1))?[mid * nodes + k];
            worst[7] = worst[7].max((product[mid * nodes + k] - expect).abs());
        }
        let absdiff: Vec<f64> = p1.iter().zip(&p2).map(|(a, b)| (a - b).abs()).collect();
        let bound = sup(absdiff)?;
        for k in 0..i1.len() {
            worst[8] = worst[8].max((i1[k] - i2[k]).abs() - bound[k]);
        }
    }
    let ok = worst.iter().all(|w| *w <= 1e-12);
    let detail = names
        .iter()
        .zip(&worst)
        .map(|(n, w)| format!("{n} {w:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    check(ok, format!("worst excess: {detail}"))
}

/// Ten test functions of the accumulated variance.
pub fn quadvar_catalog() -> Vec<FieldExpr> {
    [
        "x",
        "-x",
        "x*x",
        "-pow(x-0.6,2)",
        "sin(6*x)",
        "max(x-0.5,0)",
        "abs(x-0.7)",
        "exp(-x)",
        "cos(3*x)+0.5*x",
        "min(x,0.4)-max(x-0.8,0)",
    ]
    .iter()
    .map(|s| expr(s))
    .collect()
}

fn quadvar() -> Result<Check> {
    let band = Band::new(0.25, 1.0)?;
    let t = 1.0;
    let mut worst: f64 = 0.0;
    for phi in quadvar_catalog() {
        for mode in [Mode::Inf, Mode::Sup] {
            let dp = quadvar_functional(&phi, t, band, mode, 64)?;
            let dense = quadvar_scan(&phi, t, band, mode, 10_000)?;
            worst = worst.max((dp - dense).abs());
        }
    }
    check(worst <= 1e-3, format!("largest gap {worst:.3e} over 10 functions, both modes"))
}

fn policy_attainment() -> Result<Check> {
    let spec = butterfly_bid();
    let pde = bsb_price(&spec)?;
    let bid = pde.price;
    let allowance = 0.01 * bid.abs();
    let batch = sample_paths(
        PathSource::Bsb(&spec),
        &PolicySpec::Lookup(pde.policy.clone()),
        100_000,
        250,
        7,
        Storage::TerminalOnly,
    )?;
    let est = policy_value_estimate(&batch, &spec.payoff, &Drivers::default(), spec.rate)?;
    let attained = (est.mean - bid).abs() <= 3.0 * est.stderr + allowance;
    let mut lowest_margin = f64::INFINITY;
    for seed in 1..=20u64 {
        let b = sample_paths(
            PathSource::Bsb(&spec),
            &PolicySpec::Random { seed },
            20_000,
            250,
            500 + seed,
            Storage::TerminalOnly,
        )?;
        let e = policy_value_estimate(&b, &spec.payoff, &Drivers::default(), spec.rate)?;
        lowest_margin = lowest_margin.min(e.mean - (bid - 3.0 * e.stderr - allowance));
    }
    check(
        attained && lowest_margin >= 0.0,
        format!(
            "bid {bid:.5}, extracted policy {:.5} ± {:.5} (allowed gap {:.5}), smallest random-policy margin \
             {lowest_margin:.4e}",
            est.mean,
            est.stderr,
            3.0 * est.stderr + allowance
        ),
    )
}

fn gheat_semigroup() -> Result<Check> {
    let bx = UncertaintyBox::single(0.25, 1.0)?;
    let phi = expr("sin(2*x)*exp(-x*x/8)+0.2*max(x-0.5,0)");
    let psi = phi.substitute_x(&expr(&format!("{}*x", 2f64.sqrt())));
    let heat = ModelSpec::heat(bx.clone(), phi.clone(), Mode::Sup);

    let setup = |nx: usize, horizon: f64| -> Result<GridSpec> {
        let mut g = GridSpec::uniform(-8.0, 8.0, nx, horizon, 1)?;
        g.nt = cfl_steps(&heat, &g, 0.9)?;
        if g.nt % 2 == 1 {
            g.nt += 1;
        }
        Ok(g)
    };
    // Tower: restarting at the middle row reproduces the earlier rows.
    let g2 = setup(161, 2.0)?;
    let full = solve_gheat(&phi, &bx, &g2, Mode::Sup)?;
    let mid = g2.nt / 2;
    let restarted = gheat_rows(&bx, &g2, Mode::Sup, mid, full.row(mid).to_vec())?;
    let tower = (0..=mid).all(|n| restarted[n] == full.row(n));

    // Scaling: u(2, 0; φ) against u(1, 0; φ(√2·)), measured against the
    // Richardson estimate of each run's error.
    let centre = |s: &crate::lattice::ValueSurface| s.at(0, s.grid.nodes() / 2);
    let run = |payoff: &FieldExpr, nx: usize, horizon: f64| -> Result<f64> {
        let g = setup(nx, horizon)?;
        Ok(centre(&solve_gheat(payoff, &bx, &g, Mode::Sup)?))
    };
    let two = centre(&full);
    let two_fine = run(&phi, 321, 2.0)?;
    let one = run(&psi, 161, 1.0)?;
    let one_fine = run(&psi, 321, 1.0)?;
    let err = (two - two_fine).abs().max((one - one_fine).abs());
    let gap = (two - one).abs();
    check(
        tower && gap <= 2.0 * err,
        format!("tower bitwise {tower}; scaled gap {gap:.3e} vs discretization error {err:.3e}"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalogs_are_stable() {
        let a = tree_catalog();
        let b = tree_catalog();
        assert_eq!(a.len(), 20);
        assert_eq!(a, b);
        assert_eq!(quadvar_catalog().len(), 10);
    }

    #[test]
    fn fast_criteria_pass() {
        for id in [3, 7, 10] {
            let o = run_criterion(id);
            assert!(o.passed, "{}", o.line());
        }
    }

    #[test]
    fn unknown_criterion_fails_cleanly() {
        let o = run_criterion(42);
        assert!(!o.passed);
    }
}

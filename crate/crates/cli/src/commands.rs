use std::collections::BTreeMap;
use std::path::Path;

use gexpect_core::acceptance::run_criterion;
use gexpect_core::gbsde::picard_solve;
use gexpect_core::montecarlo::{
    counterexample_limit, policy_value_estimate, quad_var_report, representation_scan, sample_paths, Drivers,
    PathSource, PolicySpec, ScanSource, Storage,
};
use gexpect_core::pde::{bsb_price, multi_band_hjb, solve_gheat, solve_hjb, Side};
use gexpect_core::{GridSpec, ValueSurface};

use crate::config::{prepare, Assertion, Op, PolicyDoc, Scenario};
use crate::report::{CliError, Outcome};
use crate::{write_run, RunSettings};

fn side_name(s: Side) -> &'static str {
    match s {
        Side::Offer => "offer",
        Side::Bid => "bid",
    }
}

fn grid_scalars(out: &mut Outcome, grid: &GridSpec) {
    out.scalar("nt", grid.nt as f64);
    out.scalar("dt", grid.dt());
    out.scalar("nodes", grid.nodes() as f64);
}

fn value_at(out: &mut Outcome, surface: &ValueSurface, x0: Option<f64>) -> Result<(), CliError> {
    if let Some(x) = x0 {
        out.scalar("value", surface.interpolate(0, x)?);
    }
    Ok(())
}

/// Runs a prepared scenario. Nested suite runs are written below `out_dir`.
pub fn execute(scenario: Scenario, settings: &RunSettings, out_dir: &Path) -> Result<Outcome, CliError> {
    let mut out = Outcome::default();
    match scenario {
        Scenario::Gheat {
            phi,
            uncertainty,
            mode,
            grid,
            x0,
        } => {
            let surface = solve_gheat(&phi, &uncertainty, &grid, mode)?;
            grid_scalars(&mut out, &grid);
            value_at(&mut out, &surface, x0)?;
            out.file("surface.csv", surface.to_csv(None));
        }
        Scenario::Hjb { model, grid, x0 } => {
            grid_scalars(&mut out, &grid);
            if model.multi_band.is_some() {
                let surface = multi_band_hjb(&model, &grid)?;
                value_at(&mut out, &surface, x0)?;
                if settings.emit_policy {
                    out.warnings.push("three-band models have no single policy; none emitted".into());
                }
                out.file("surface.csv", surface.to_csv(None));
            } else {
                let (surface, policy) = solve_hjb(&model, &grid)?;
                value_at(&mut out, &surface, x0)?;
                out.file("surface.csv", surface.to_csv(settings.emit_policy.then_some(&policy)));
            }
        }
        Scenario::Bsde { model, grid, picard, x0 } => {
            let (surface, diag) = picard_solve(&model, &grid, &picard)?;
            grid_scalars(&mut out, &grid);
            value_at(&mut out, &surface, x0)?;
            out.scalar("iterations", diag.iterations() as f64);
            out.scalar("beta", diag.beta);
            if let Some(d) = diag.deltas.last() {
                out.scalar("final_delta", *d);
            }
            if let Some(d) = diag.sup_deltas.last() {
                out.scalar("final_sup_delta", *d);
            }
            out.file("surface.csv", surface.to_csv(None));
            out.file("picard.csv", diag.to_csv());
        }
        Scenario::Bsb { spec, sides } => {
            for side in sides {
                let s = spec.with_side(side);
                let r = bsb_price(&s)?;
                let name = side_name(side);
                out.scalar(&format!("{name}_price"), r.price);
                if let Some(g) = &s.grid {
                    grid_scalars(&mut out, g);
                }
                out.warnings.extend(r.warnings);
                out.file(
                    &format!("{name}_surface.csv"),
                    r.surface.to_csv(settings.emit_policy.then_some(&r.policy)),
                );
            }
            out.warnings.dedup();
        }
        Scenario::Scan {
            bsb,
            heat,
            na,
            quadrature,
        } => {
            let table = match (&bsb, &heat) {
                (Some(spec), _) => representation_scan(&ScanSource::Bsb(spec), na, &quadrature)?,
                (None, Some(h)) => representation_scan(
                    &ScanSource::Heat {
                        phi: &h.phi,
                        band: h.band,
                        x0: h.x0,
                        horizon: h.horizon,
                    },
                    na,
                    &quadrature,
                )?,
                (None, None) => unreachable!("prepare requires a source"),
            };
            out.scalar("inf", table.inf);
            out.scalar("sup", table.sup);
            out.scalar("argmin", table.argmin);
            out.scalar("argmax", table.argmax);
            out.file("scan.csv", table.to_csv());
        }
        Scenario::Mc {
            spec,
            policy,
            paths,
            steps,
            seed,
            qv_report,
        } => {
            let policy = match policy {
                PolicyDoc::Constant { alpha_sq } => PolicySpec::Constant(alpha_sq),
                PolicyDoc::Random { seed } => PolicySpec::Random { seed },
                PolicyDoc::Pde | PolicyDoc::BangBang => {
                    let r = bsb_price(&spec)?;
                    out.scalar("pde_price", r.price);
                    if matches!(policy, PolicyDoc::Pde) {
                        PolicySpec::Lookup(r.policy)
                    } else {
                        PolicySpec::BangBangGamma {
                            surface: r.surface,
                            mode: spec.side.mode(),
                        }
                    }
                }
            };
            let storage = if qv_report { Storage::Full } else { Storage::TerminalOnly };
            let batch = sample_paths(PathSource::Bsb(&spec), &policy, paths, steps, seed, storage)?;
            let est = policy_value_estimate(&batch, &spec.payoff, &Drivers::default(), spec.rate)?;
            out.scalar("mean", est.mean);
            out.scalar("stderr", est.stderr);
            out.scalar("paths", paths as f64);
            out.scalar("steps", steps as f64);
            if qv_report {
                let q = quad_var_report(&batch, None)?;
                out.scalar("qv_violations", q.violations as f64);
                out.scalar("qv_min_ratio", q.min_ratio);
                out.scalar("qv_max_ratio", q.max_ratio);
                out.check(
                    "quadratic-variation-bounds",
                    q.violations == 0,
                    format!("{} window violations", q.violations),
                );
                out.file("qv.csv", q.to_csv());
            }
        }
        Scenario::Counterexample { band, deltas } => {
            let rows = counterexample_limit(band, &deltas)?;
            let mut t = gexpect_core::csv::CsvTable::new(["delta", "value", "limit"]);
            for r in &rows {
                t.push(vec![
                    gexpect_core::csv::fmt17(r.delta),
                    gexpect_core::csv::fmt17(r.value),
                    gexpect_core::csv::fmt17(r.limit),
                ]);
            }
            let worst = rows.iter().map(|r| r.value).fold(f64::NEG_INFINITY, f64::max);
            out.scalar("max_value", worst);
            out.scalar("limit", 0.0);
            out.file("counterexample.csv", t.render());
        }
        Scenario::Verify { suite, base } => {
            for id in &suite.criteria {
                let o = run_criterion(*id);
                out.scalar(&format!("criterion_{id}"), if o.passed { 1.0 } else { 0.0 });
                out.check(format!("criterion {id} {}", o.name), o.passed, o.detail);
            }
            // Resolve every scenario before running any, so a broken entry
            // fails the suite as a configuration error.
            let mut prepared = Vec::with_capacity(suite.scenarios.len());
            for (i, s) in suite.scenarios.iter().enumerate() {
                let path = base.join(&s.config);
                let bytes = std::fs::read(&path).map_err(|e| CliError::Config {
                    message: format!("cannot read {}: {e}", path.display()),
                    field: Some(format!("scenarios[{i}].config")),
                    max_dt: None,
                })?;
                let scenario = prepare(&s.command, &bytes, &path).map_err(|e| match e {
                    CliError::Config { message, field, max_dt } => CliError::Config {
                        message: format!("{}: {message}", path.display()),
                        field: Some(match field {
                            Some(f) => format!("scenarios[{i}].config:{f}"),
                            None => format!("scenarios[{i}].config"),
                        }),
                        max_dt,
                    },
                    other => other,
                })?;
                prepared.push((s, bytes, scenario));
            }
            let mut results: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
            for (s, bytes, scenario) in prepared {
                let dir = out_dir.join(&s.name);
                match write_run(&s.command, &bytes, scenario, settings, &dir) {
                    Ok(doc) => {
                        out.check(
                            format!("{} ran", s.name),
                            doc.passed,
                            format!("{} checks", doc.checks.len()),
                        );
                        for a in &s.assertions {
                            let (ok, detail) = evaluate(a, &doc.scalars, &results);
                            out.check(format!("{}: {} {}", s.name, a.key, format!("{:?}", a.op).to_lowercase()), ok, detail);
                        }
                        results.insert(s.name.clone(), doc.scalars);
                    }
                    Err(e) => out.check(format!("{} ran", s.name), false, e.to_string()),
                }
            }
        }
    }
    Ok(out)
}

/// Looks up `key` in the scenario's own scalars, or `name.key` in an
/// earlier scenario's.
fn lookup(key: &str, own: &BTreeMap<String, f64>, earlier: &BTreeMap<String, BTreeMap<String, f64>>) -> Option<f64> {
    own.get(key).copied().or_else(|| {
        let (name, k) = key.split_once('.')?;
        earlier.get(name)?.get(k).copied()
    })
}

fn evaluate(
    a: &Assertion,
    own: &BTreeMap<String, f64>,
    earlier: &BTreeMap<String, BTreeMap<String, f64>>,
) -> (bool, String) {
    let Some(lhs) = lookup(&a.key, own, earlier) else {
        return (false, format!("no result `{}`", a.key));
    };
    let rhs = match (&a.value, &a.rhs_key) {
        (Some(v), _) => *v,
        (None, Some(k)) => match lookup(k, own, earlier) {
            Some(v) => v,
            None => return (false, format!("no result `{k}`")),
        },
        (None, None) => return (false, "assertion has no right-hand side".into()),
    };
    let ok = match a.op {
        Op::Eq => lhs == rhs,
        Op::Le => lhs <= rhs + a.tol,
        Op::Ge => lhs >= rhs - a.tol,
        Op::Close => (lhs - rhs).abs() <= a.tol,
        Op::RelClose => (lhs - rhs).abs() <= a.tol * rhs.abs(),
    };
    (ok, format!("lhs {lhs:.12e}, rhs {rhs:.12e}, tol {:.3e}", a.tol))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assertion(op: Op, value: Option<f64>, rhs_key: Option<&str>, tol: f64) -> Assertion {
        Assertion {
            key: "price".into(),
            op,
            value,
            rhs_key: rhs_key.map(str::to_string),
            tol,
        }
    }

    #[test]
    fn assertions_compare_against_values_and_keys() {
        let own = BTreeMap::from([("price".to_string(), 1.0)]);
        let earlier = BTreeMap::from([("ref".to_string(), BTreeMap::from([("price".to_string(), 1.05)]))]);
        assert!(evaluate(&assertion(Op::Le, Some(1.0), None, 0.0), &own, &earlier).0);
        assert!(!evaluate(&assertion(Op::Ge, Some(1.1), None, 0.05), &own, &earlier).0);
        assert!(evaluate(&assertion(Op::Close, None, Some("ref.price"), 0.06), &own, &earlier).0);
        assert!(!evaluate(&assertion(Op::RelClose, None, Some("ref.price"), 0.01), &own, &earlier).0);
        let (ok, detail) = evaluate(&assertion(Op::Eq, None, Some("ref.missing"), 0.0), &own, &earlier);
        assert!(!ok && detail.contains("ref.missing"));
    }
}

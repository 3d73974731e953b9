//! Scenario configuration documents and their resolution into solver inputs.
//!
//! Every document may carry a `command` field; `validate` requires it to
//! pick the schema, the run commands only check that it matches.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Deserialize;

use gexpect_core::analytic::QuadratureSpec;
use gexpect_core::error::Error as CoreError;
use gexpect_core::gbsde::PicardOptions;
use gexpect_core::lattice::GridDoc;
use gexpect_core::model::ModelDoc;
use gexpect_core::pde::{bsb_model, default_bsb_grid, BsbSpec, Side};
use gexpect_core::scheme::{cfl_steps, Discretization};
use gexpect_core::{Band, FieldExpr, GridSpec, Mode, ModelSpec, UncertaintyBox};

use crate::report::CliError;

pub const COMMANDS: [&str; 8] = ["gheat", "hjb", "bsde", "bsb", "scan", "mc", "counterexample", "verify"];

fn config_err(e: impl ToString, field: &str) -> CliError {
    CliError::Config {
        message: e.to_string(),
        field: (!field.is_empty()).then(|| field.to_string()),
        max_dt: None,
    }
}

/// Deserializes with the JSON path of the first error attached.
pub fn parse_doc<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, CliError> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        config_err(e.into_inner(), if path == "." { "" } else { &path })
    })
}

#[derive(Deserialize)]
struct CommandOnly {
    command: Option<String>,
}

/// The `command` field of a document, if any.
pub fn declared_command(bytes: &[u8]) -> Result<Option<String>, CliError> {
    let probe: CommandOnly = serde_json::from_slice(bytes).map_err(|e| config_err(e, ""))?;
    Ok(probe.command)
}

fn check_command(declared: &Option<String>, expected: &str) -> Result<(), CliError> {
    match declared {
        Some(c) if c != expected => Err(config_err(
            format!("config is for `{c}`, not `{expected}`"),
            "command",
        )),
        _ => Ok(()),
    }
}

fn default_sup() -> Mode {
    Mode::Sup
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GheatDoc {
    #[serde(rename = "command")]
    _command: Option<String>,
    pub phi: FieldExpr,
    #[serde(rename = "box")]
    pub uncertainty: UncertaintyBox,
    #[serde(default = "default_sup")]
    pub mode: Mode,
    pub grid: GridDoc,
    #[serde(default)]
    pub x0: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HjbDoc {
    #[serde(rename = "command")]
    _command: Option<String>,
    pub model: ModelDoc,
    pub grid: GridDoc,
    #[serde(default)]
    pub x0: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BsdeDoc {
    #[serde(rename = "command")]
    _command: Option<String>,
    pub model: ModelDoc,
    pub grid: GridDoc,
    #[serde(default)]
    pub picard: PicardOptions,
    #[serde(default)]
    pub x0: Option<f64>,
}

fn default_nx() -> usize {
    400
}

fn default_cfl() -> f64 {
    0.9
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BsbDoc {
    pub command: Option<String>,
    pub payoff: FieldExpr,
    #[serde(default)]
    pub rate: f64,
    pub vol_lo: f64,
    pub vol_hi: f64,
    pub spot: f64,
    pub maturity: f64,
    /// Both sides are priced when absent.
    #[serde(default)]
    pub side: Option<Side>,
    #[serde(default = "default_nx")]
    pub nx: usize,
    #[serde(default = "default_cfl")]
    pub cfl_fraction: f64,
    #[serde(default)]
    pub grid: Option<GridDoc>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatScanDoc {
    pub phi: FieldExpr,
    pub band: Band,
    #[serde(default)]
    pub x0: f64,
    pub horizon: f64,
}

fn default_na() -> usize {
    11
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanDoc {
    #[serde(rename = "command")]
    _command: Option<String>,
    #[serde(default)]
    pub bsb: Option<BsbDoc>,
    #[serde(default)]
    pub heat: Option<HeatScanDoc>,
    #[serde(default = "default_na")]
    pub na: usize,
    #[serde(default)]
    pub quadrature: Option<QuadratureSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicyDoc {
    Constant { alpha_sq: f64 },
    Pde,
    BangBang,
    Random { seed: u64 },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McDoc {
    #[serde(rename = "command")]
    _command: Option<String>,
    pub bsb: BsbDoc,
    pub policy: PolicyDoc,
    pub paths: usize,
    pub steps: usize,
    pub seed: u64,
    #[serde(default)]
    pub qv_report: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CounterexampleDoc {
    #[serde(rename = "command")]
    _command: Option<String>,
    pub band: Band,
    pub deltas: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Eq,
    Le,
    Ge,
    /// `|lhs − rhs| ≤ tol`.
    Close,
    /// `|lhs − rhs| ≤ tol·|rhs|`.
    RelClose,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Assertion {
    pub key: String,
    pub op: Op,
    #[serde(default)]
    pub value: Option<f64>,
    #[serde(default)]
    pub rhs_key: Option<String>,
    #[serde(default)]
    pub tol: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteScenario {
    pub name: String,
    pub command: String,
    /// Path relative to the suite file.
    pub config: String,
    #[serde(default)]
    pub assertions: Vec<Assertion>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteDoc {
    pub command: Option<String>,
    /// Acceptance criteria to run by number.
    #[serde(default)]
    pub criteria: Vec<u8>,
    #[serde(default)]
    pub scenarios: Vec<SuiteScenario>,
}

/// A configuration resolved into solver inputs, with grids completed and
/// the stability limit checked.
#[derive(Debug, Clone)]
pub enum Scenario {
    Gheat {
        phi: FieldExpr,
        uncertainty: UncertaintyBox,
        mode: Mode,
        grid: GridSpec,
        x0: Option<f64>,
    },
    Hjb {
        model: ModelSpec,
        grid: GridSpec,
        x0: Option<f64>,
    },
    Bsde {
        model: ModelSpec,
        grid: GridSpec,
        picard: PicardOptions,
        x0: Option<f64>,
    },
    Bsb {
        spec: BsbSpec,
        sides: Vec<Side>,
    },
    Scan {
        bsb: Option<BsbSpec>,
        heat: Option<HeatScanDoc>,
        na: usize,
        quadrature: QuadratureSpec,
    },
    Mc {
        spec: BsbSpec,
        policy: PolicyDoc,
        paths: usize,
        steps: usize,
        seed: u64,
        qv_report: bool,
    },
    Counterexample {
        band: Band,
        deltas: Vec<f64>,
    },
    Verify {
        suite: SuiteDoc,
        base: std::path::PathBuf,
    },
}

/// Completes a grid: the step count comes from the stability limit when
/// absent, and is checked against it when given.
fn resolve_grid(doc: &GridDoc, model: &ModelSpec, field: &str) -> Result<GridSpec, CliError> {
    let mut g = doc.skeleton().map_err(|e| config_err(e, field))?;
    match doc.nt {
        None => g.nt = cfl_steps(model, &g, doc.cfl_fraction).map_err(|e| config_err(e, field))?,
        Some(_) => {
            Discretization::new(model, &g).map_err(|e| match e {
                CoreError::Cfl { max_dt, .. } => CliError::Config {
                    message: e.to_string(),
                    field: Some(format!("{field}.nt")),
                    max_dt: Some(max_dt),
                },
                other => config_err(other, field),
            })?;
        }
    }
    Ok(g)
}

/// Samples the drivers over the grid box and `y ∈ [−10, 10]`.
fn check_lipschitz(model: &ModelSpec, grid: &GridSpec) -> Result<(), CliError> {
    let domain: Vec<(f64, f64)> = grid.axes.iter().map(|a| (a.min, a.max)).collect();
    model
        .validate_lipschitz(&domain, grid.horizon, (-10.0, 10.0), 10_000, 0)
        .map(|_| ())
        .map_err(|e| config_err(e, "model.lipschitz"))
}

fn model_from(doc: ModelDoc) -> Result<ModelSpec, CliError> {
    ModelSpec::try_from(doc).map_err(|e| config_err(e, "model"))
}

fn resolve_bsb(doc: &BsbDoc, field: &str) -> Result<(BsbSpec, Vec<Side>), CliError> {
    let prefix = |f: &str| if field.is_empty() { f.to_string() } else { format!("{field}.{f}") };
    if doc.command.is_some() && !field.is_empty() {
        return Err(config_err("nested documents take no command", &prefix("command")));
    }
    let mut spec = BsbSpec::new(
        doc.payoff.clone(),
        doc.rate,
        doc.vol_lo,
        doc.vol_hi,
        doc.side.unwrap_or(Side::Bid),
        doc.spot,
        doc.maturity,
    );
    spec.nx = doc.nx;
    spec.cfl_fraction = doc.cfl_fraction;
    spec.band().map_err(|e| config_err(e, &prefix("vol_lo")))?;
    spec.validate().map_err(|e| config_err(e, &prefix("spot")))?;
    if doc.payoff.state_arity() > 1 {
        return Err(config_err("payoff must be one-dimensional", &prefix("payoff")));
    }
    let model = bsb_model(&spec).map_err(|e| config_err(e, field))?;
    spec.grid = Some(match &doc.grid {
        Some(g) => {
            if !g.log_space {
                return Err(config_err("price grids must set log_space", &prefix("grid.log_space")));
            }
            if (g.horizon - spec.maturity).abs() > 1e-12 * spec.maturity {
                return Err(config_err("grid horizon must equal the maturity", &prefix("grid.horizon")));
            }
            resolve_grid(g, &model, &prefix("grid"))?
        }
        None => default_bsb_grid(&spec).map_err(|e| config_err(e, &prefix("nx")))?,
    });
    let sides = match doc.side {
        Some(s) => vec![s],
        None => vec![Side::Offer, Side::Bid],
    };
    Ok((spec, sides))
}

fn check_x0(x0: Option<f64>, grid: &GridSpec) -> Result<(), CliError> {
    match x0 {
        Some(x) if grid.dims() != 1 => Err(config_err(format!("x0 = {x} needs a one-dimensional grid"), "x0")),
        Some(x) if !(grid.axes[0].min <= x && x <= grid.axes[0].max) => Err(config_err(
            format!("x0 = {x} outside the grid [{}, {}]", grid.axes[0].min, grid.axes[0].max),
            "x0",
        )),
        _ => Ok(()),
    }
}

/// Parses and resolves a configuration for `command`.
pub fn prepare(command: &str, bytes: &[u8], path: &Path) -> Result<Scenario, CliError> {
    let declared = declared_command(bytes)?;
    check_command(&declared, command)?;
    match command {
        "gheat" => {
            let d: GheatDoc = parse_doc(bytes)?;
            if d.grid.log_space {
                return Err(config_err("the G-heat solver works on linear grids", "grid.log_space"));
            }
            let model = ModelSpec::heat(d.uncertainty.clone(), d.phi.clone(), d.mode);
            model.validate().map_err(|e| config_err(e, "phi"))?;
            let grid = resolve_grid(&d.grid, &model, "grid")?;
            check_x0(d.x0, &grid)?;
            Ok(Scenario::Gheat {
                phi: d.phi,
                uncertainty: d.uncertainty,
                mode: d.mode,
                grid,
                x0: d.x0,
            })
        }
        "hjb" => {
            let d: HjbDoc = parse_doc(bytes)?;
            let model = model_from(d.model)?;
            let grid = resolve_grid(&d.grid, &model, "grid")?;
            check_lipschitz(&model, &grid)?;
            check_x0(d.x0, &grid)?;
            Ok(Scenario::Hjb { model, grid, x0: d.x0 })
        }
        "bsde" => {
            let d: BsdeDoc = parse_doc(bytes)?;
            let model = model_from(d.model)?;
            if model.multi_band.is_some() {
                return Err(config_err("Picard iteration needs a single-box model", "model.bands"));
            }
            let grid = resolve_grid(&d.grid, &model, "grid")?;
            check_lipschitz(&model, &grid)?;
            check_x0(d.x0, &grid)?;
            Ok(Scenario::Bsde {
                model,
                grid,
                picard: d.picard,
                x0: d.x0,
            })
        }
        "bsb" => {
            let d: BsbDoc = parse_doc(bytes)?;
            let (spec, sides) = resolve_bsb(&d, "")?;
            Ok(Scenario::Bsb { spec, sides })
        }
        "scan" => {
            let d: ScanDoc = parse_doc(bytes)?;
            if d.bsb.is_some() == d.heat.is_some() {
                return Err(config_err("give exactly one of `bsb` and `heat`", "bsb"));
            }
            if d.na < 2 {
                return Err(config_err("scan needs at least 2 controls", "na"));
            }
            let bsb = match &d.bsb {
                Some(b) => Some(resolve_bsb(b, "bsb")?.0),
                None => None,
            };
            let quadrature = d.quadrature.unwrap_or_default();
            quadrature.validate().map_err(|e| config_err(e, "quadrature"))?;
            Ok(Scenario::Scan {
                bsb,
                heat: d.heat,
                na: d.na,
                quadrature,
            })
        }
        "mc" => {
            let d: McDoc = parse_doc(bytes)?;
            let (spec, _) = resolve_bsb(&d.bsb, "bsb")?;
            if d.paths == 0 {
                return Err(config_err("need at least one path", "paths"));
            }
            if d.steps == 0 {
                return Err(config_err("need at least one step", "steps"));
            }
            if let PolicyDoc::Constant { alpha_sq } = d.policy {
                let band = spec.band().map_err(|e| config_err(e, "bsb.vol_lo"))?;
                if !band.contains(alpha_sq) {
                    return Err(config_err(
                        format!("alpha_sq {alpha_sq} outside the band [{}, {}]", band.lo, band.hi),
                        "policy.alpha_sq",
                    ));
                }
            }
            Ok(Scenario::Mc {
                spec,
                policy: d.policy,
                paths: d.paths,
                steps: d.steps,
                seed: d.seed,
                qv_report: d.qv_report,
            })
        }
        "counterexample" => {
            let d: CounterexampleDoc = parse_doc(bytes)?;
            if let Some(i) = d.deltas.iter().position(|x| !(*x > 0.0 && x.is_finite())) {
                return Err(config_err("window lengths must be positive", &format!("deltas[{i}]")));
            }
            Ok(Scenario::Counterexample {
                band: d.band,
                deltas: d.deltas,
            })
        }
        "verify" => {
            let suite: SuiteDoc = parse_doc(bytes)?;
            for (i, c) in suite.criteria.iter().enumerate() {
                if !(1..=12).contains(c) {
                    return Err(config_err(format!("no criterion {c}"), &format!("criteria[{i}]")));
                }
            }
            for (i, s) in suite.scenarios.iter().enumerate() {
                if !COMMANDS.contains(&s.command.as_str()) || s.command == "verify" {
                    return Err(config_err(
                        format!("unknown scenario command `{}`", s.command),
                        &format!("scenarios[{i}].command"),
                    ));
                }
                for (j, a) in s.assertions.iter().enumerate() {
                    if a.value.is_some() == a.rhs_key.is_some() {
                        return Err(config_err(
                            "give exactly one of `value` and `rhs_key`",
                            &format!("scenarios[{i}].assertions[{j}]"),
                        ));
                    }
                }
            }
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            Ok(Scenario::Verify { suite, base })
        }
        other => Err(config_err(format!("unknown command `{other}`"), "command")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEAT: &str = r#"{"phi": "abs(x)", "box": [[0.5, 2.0]], "grid": {"x_min": -2, "x_max": 2, "nx": 41, "horizon": 0.5}}"#;

    fn field_of(e: CliError) -> Option<String> {
        match e {
            CliError::Config { field, .. } => field,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn step_count_follows_the_stability_limit() {
        let Scenario::Gheat { grid, mode, .. } = prepare("gheat", HEAT.as_bytes(), Path::new("h.json")).unwrap() else {
            panic!("wrong scenario");
        };
        assert_eq!(mode, Mode::Sup);
        // h = 0.1, hi = 2: dt ≤ 0.9 · 0.005.
        assert!(grid.dt() <= 0.9 * 0.005 + 1e-15);
        assert!(grid.nt > 1);
    }

    #[test]
    fn nested_errors_carry_their_path() {
        let bad = HEAT.replace("\"nx\": 41", "\"nx\": \"many\"");
        assert_eq!(field_of(prepare("gheat", bad.as_bytes(), Path::new("h.json")).unwrap_err()).as_deref(), Some("grid.nx"));
        let bad = HEAT.replace("abs(x)", "abs(x");
        assert_eq!(field_of(prepare("gheat", bad.as_bytes(), Path::new("h.json")).unwrap_err()).as_deref(), Some("phi"));
        let bad = HEAT.replace("\"horizon\": 0.5", "\"horizon\": 0.5, \"nt\": 2");
        let e = prepare("gheat", bad.as_bytes(), Path::new("h.json")).unwrap_err();
        assert!(matches!(&e, CliError::Config { max_dt: Some(d), .. } if (*d - 0.005).abs() < 1e-12), "{e:?}");
        assert_eq!(field_of(e).as_deref(), Some("grid.nt"));
    }

    #[test]
    fn scan_needs_exactly_one_source() {
        let e = prepare("scan", br#"{"na": 5}"#, Path::new("s.json")).unwrap_err();
        assert_eq!(field_of(e).as_deref(), Some("bsb"));
    }

    #[test]
    fn suites_reject_unknown_criteria_and_one_sided_assertions() {
        let e = prepare("verify", br#"{"criteria": [1, 13]}"#, Path::new("s.json")).unwrap_err();
        assert_eq!(field_of(e).as_deref(), Some("criteria[1]"));
        let doc = br#"{"scenarios": [{"name": "a", "command": "bsb", "config": "a.json",
            "assertions": [{"key": "bid_price", "op": "le"}]}]}"#;
        let e = prepare("verify", doc, Path::new("s.json")).unwrap_err();
        assert_eq!(field_of(e).as_deref(), Some("scenarios[0].assertions[0]"));
    }
}

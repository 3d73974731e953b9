use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;
use serde_json::json;

/// Failure of a run, classified by exit code.
#[derive(Debug, Clone)]
pub enum CliError {
    /// Unreadable, malformed or inconsistent configuration (exit 2).
    Config {
        message: String,
        field: Option<String>,
        /// Largest admissible time step when the stability limit is violated.
        max_dt: Option<f64>,
    },
    /// Numerical failure or an output that could not be written (exit 1).
    Computation(String),
    /// Checks ran but some failed (exit 3).
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Computation(_) => 1,
            CliError::Config { .. } => 2,
            CliError::Verification(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Computation(_) => "computation",
            CliError::Config { .. } => "config",
            CliError::Verification(_) => "verification",
        }
    }

    /// Single-line JSON written to stderr.
    pub fn to_json(&self) -> String {
        let (message, field, max_dt) = match self {
            CliError::Config { message, field, max_dt } => (message.as_str(), field.clone(), *max_dt),
            CliError::Computation(m) | CliError::Verification(m) => (m.as_str(), None, None),
        };
        let mut body = json!({
            "kind": self.kind(),
            "exit_code": self.exit_code(),
            "message": message,
            "field": field,
        });
        if let Some(dt) = max_dt {
            body["max_admissible_dt"] = json!(dt);
        }
        json!({ "error": body }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config {
                message,
                field: Some(field),
                ..
            } => write!(f, "{field}: {message}"),
            CliError::Config { message, .. } | CliError::Computation(message) | CliError::Verification(message) => {
                f.write_str(message)
            }
        }
    }
}

impl From<gexpect_core::Error> for CliError {
    fn from(e: gexpect_core::Error) -> Self {
        CliError::Computation(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Computation(format!("i/o: {e}"))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// What a command produced before it is written out.
#[derive(Debug, Default)]
pub struct Outcome {
    pub scalars: BTreeMap<String, f64>,
    /// File name and contents, written in this order.
    pub files: Vec<(String, String)>,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
}

impl Outcome {
    pub fn scalar(&mut self, key: &str, v: f64) {
        self.scalars.insert(key.to_string(), v);
    }

    pub fn file(&mut self, name: &str, contents: String) {
        self.files.push((name.to_string(), contents));
    }

    pub fn check(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// `result.json`.
#[derive(Debug, Serialize)]
pub struct ResultDocument {
    pub command: String,
    pub version: &'static str,
    /// Name of the stored configuration copy, relative to the output directory.
    pub config_file: String,
    pub config_sha256: String,
    pub threads: usize,
    pub wall_time_s: f64,
    pub passed: bool,
    pub scalars: BTreeMap<String, f64>,
    pub files: Vec<String>,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_json_shape() {
        let e = CliError::Config {
            message: "bad".into(),
            field: Some("grid.nt".into()),
            max_dt: Some(0.01),
        };
        let v: serde_json::Value = serde_json::from_str(&e.to_json()).unwrap();
        assert_eq!(v["error"]["exit_code"], 2);
        assert_eq!(v["error"]["field"], "grid.nt");
        assert_eq!(v["error"]["max_admissible_dt"], 0.01);
        let v: serde_json::Value = serde_json::from_str(&CliError::Computation("x".into()).to_json()).unwrap();
        assert_eq!(v["error"]["kind"], "computation");
        assert!(v["error"]["field"].is_null());
    }
}

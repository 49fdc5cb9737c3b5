//! Machine-readable run reports and CSV output.
//!
//! The report serializes to TOML and round-trips losslessly. CSV floats are
//! printed with 17 significant digits so regression comparisons are exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use perov_dp::mdp::{Policy, SolveReport, ValueFunction};
use perov_dp::spectral::{RowSumReport, SpectralCertificate};

use crate::CliError;

pub const REPORT_SCHEMA: &str = "perov-dp.report/v1";

/// Formats a float with 17 significant digits (lossless for f64).
pub fn float17(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RunReport {
    pub schema: String,
    pub command: String,
    pub config_path: String,
    pub seed: u64,
    /// Wall-clock time; excluded from determinism guarantees.
    pub wall_ms: f64,
    /// Raw text of the config that produced this run.
    pub config_echo: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectral: Option<SpectralSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row_sum: Option<RowSumSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solve: Option<SolveSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classification: Option<ClassificationSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conditions: Option<ConditionsSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralSection {
    pub certificate: SpectralCertificate,
    pub verdict: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowSumSection {
    pub holds: bool,
    pub row_sums: Vec<f64>,
    pub max_row_sum: f64,
}

impl From<RowSumReport> for RowSumSection {
    fn from(r: RowSumReport) -> Self {
        Self {
            holds: r.holds,
            row_sums: r.row_sums,
            max_row_sum: r.max_row_sum,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveSection {
    pub converged: bool,
    pub iterations: usize,
    pub tol: f64,
    pub aposteriori_sup: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fitted_rate: Option<f64>,
    pub clamped_below: u64,
    pub clamped_above: u64,
    pub weight: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utility_offset: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utility_slope: Option<f64>,
}

impl SolveSection {
    pub fn from_report(report: &SolveReport, weight: String) -> Self {
        Self {
            converged: report.converged,
            iterations: report.iterations,
            tol: report.requested_tol,
            aposteriori_sup: report.aposteriori_sup(),
            fitted_rate: report.fitted_rate,
            clamped_below: report.clamped_below,
            clamped_above: report.clamped_above,
            weight,
            utility_offset: None,
            utility_slope: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifySection {
    pub samples: usize,
    pub worst_monotonicity_violation: f64,
    pub worst_discounting_violation: f64,
    pub worst_contraction_excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSection {
    pub coefficients: Vec<f64>,
    pub max_relative_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationSection {
    pub verdict: String,
    pub radius: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth_exponents: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth_horizon: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionsSection {
    pub row_sums: Vec<f64>,
    pub max_row_sum: f64,
    pub radius: f64,
    pub uniform_passes: bool,
    pub spectral_verdict: String,
    /// Four-way verdict: "both pass", "only spectral passes", "both fail",
    /// or "inconclusive".
    pub comparison: String,
}

impl RunReport {
    pub fn new(command: &str, config_path: &str, config_echo: &str, seed: u64) -> Self {
        Self {
            schema: REPORT_SCHEMA.to_string(),
            command: command.to_string(),
            config_path: config_path.to_string(),
            seed,
            wall_ms: 0.0,
            config_echo: config_echo.to_string(),
            ..Self::default()
        }
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Other(format!("report serialization: {e}")))
    }

    pub fn write(&self, out_dir: &Path) -> Result<(), CliError> {
        fs::create_dir_all(out_dir)?;
        let path = out_dir.join("report.toml");
        fs::write(&path, self.to_toml()?)?;
        Ok(())
    }
}

/// Writes the per-(w, z) value/policy table. The policy column carries the
/// consumption share for savings models and the raw action otherwise.
pub fn write_values_csv(
    out_dir: &Path,
    value: &ValueFunction,
    scaled: &ValueFunction,
    policy: &Policy,
    as_share: bool,
) -> Result<(), CliError> {
    fs::create_dir_all(out_dir)?;
    let mut file = fs::File::create(out_dir.join("values.csv"))?;
    writeln!(file, "w,z,v,v_tilde,policy_share")?;
    for (i, &w) in value.x_grid().iter().enumerate() {
        for z in 0..value.z_count() {
            let action = policy.action(i, z);
            let share = if as_share {
                if w > 0.0 {
                    action / w
                } else {
                    0.0
                }
            } else {
                action
            };
            writeln!(
                file,
                "{},{},{},{},{}",
                float17(w),
                z + 1,
                float17(value.get(i, z)),
                float17(scaled.get(i, z)),
                float17(share),
            )?;
        }
    }
    Ok(())
}

/// Writes the iteration distance trace: per-z components of the distance
/// between successive iterates and its sup collapse.
pub fn write_trace_csv(out_dir: &Path, report: &SolveReport) -> Result<(), CliError> {
    fs::create_dir_all(out_dir)?;
    let mut file = fs::File::create(out_dir.join("trace.csv"))?;
    let z_count = report.aposteriori_bound.len();
    let mut header = String::from("iteration");
    for z in 1..=z_count {
        header.push_str(&format!(",dist_z{z}"));
    }
    header.push_str(",sup_collapse");
    writeln!(file, "{header}")?;
    for (k, d) in report.distance_trace.iter().enumerate() {
        let mut line = format!("{}", k + 1);
        for z in 0..z_count {
            line.push(',');
            line.push_str(&float17(d.components()[z]));
        }
        line.push(',');
        line.push_str(&float17(d.sup()));
        writeln!(file, "{line}")?;
    }
    Ok(())
}

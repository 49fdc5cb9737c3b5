//! The four batch commands. Each loads a config, computes, writes
//! machine-readable outputs under the output directory, and returns the
//! report; human-readable lines go to the writer so tests can capture them.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use perov_dp::error::Error;
use perov_dp::mdp::{
    extract_policy, perov_solve, verify_blackwell, verify_perov_inequality, SolveReport,
};
use perov_dp::savings::{
    choose_weight_offset, classify_problem, crra_zero_income_oracle_with_shares, savings_b_crra,
    savings_b_general, Classification, SavingsParams,
};
use perov_dp::spectral::{
    check_uniform_condition, spectral_radius, NonnegativeMatrix, SpectralVerdict, CONTRACTION_BAND,
    DEFAULT_SPECTRAL_TOL,
};
use perov_dp::vmetric::WeightFunction;
use perov_dp::{build_b, compute_tilde_beta};

use crate::config::{ModelConfig, ModelKind, WeightKind};
use crate::report::{
    float17, write_trace_csv, write_values_csv, ClassificationSection, ConditionsSection,
    OracleSection, RowSumSection, RunReport, SolveSection, SpectralSection, VerifySection,
};
use crate::CliError;

/// Per-run inputs shared by every command.
pub struct RunContext<'a> {
    pub config_path: &'a str,
    pub config_text: &'a str,
    pub out_dir: &'a Path,
    pub seed: u64,
    pub tol_override: Option<f64>,
    pub max_iter_override: Option<usize>,
}

impl RunContext<'_> {
    fn config(&self) -> Result<ModelConfig, CliError> {
        ModelConfig::parse(self.config_text)
    }

    fn tol(&self, config: &ModelConfig) -> f64 {
        self.tol_override.unwrap_or(config.solver.tol)
    }

    fn max_iter(&self, config: &ModelConfig) -> usize {
        self.max_iter_override.unwrap_or(config.solver.max_iter)
    }
}

fn verdict_name(v: SpectralVerdict) -> &'static str {
    match v {
        SpectralVerdict::Contractive => "Contractive",
        SpectralVerdict::Expansive => "Expansive",
        SpectralVerdict::Inconclusive => "Inconclusive",
    }
}

/// The coefficient matrix a savings config is judged by: the CRRA formula
/// when the utility is CRRA, the general max{1, R} formula otherwise.
fn savings_coefficient_matrix(
    config: &ModelConfig,
    params: &SavingsParams,
) -> Result<NonnegativeMatrix, CliError> {
    match config.crra_gamma() {
        Some(gamma) => Ok(savings_b_crra(params, gamma)?),
        None => Ok(savings_b_general(params)?),
    }
}

fn coefficient_matrix_for(config: &ModelConfig) -> Result<NonnegativeMatrix, CliError> {
    match config.model.kind {
        ModelKind::Savings => {
            let params = config.savings_params()?;
            savings_coefficient_matrix(config, &params)
        }
        ModelKind::Abstract => {
            let mdp = config.abstract_mdp()?;
            let weight = config.explicit_weight()?.unwrap_or(WeightFunction::Unit);
            let tilde = compute_tilde_beta(&mdp, &weight)?;
            Ok(build_b(mdp.chain(), &tilde)?)
        }
    }
}

// ---------------------------------------------------------------------------
// spectral
// ---------------------------------------------------------------------------

pub fn cmd_spectral(ctx: &RunContext<'_>, out: &mut dyn Write) -> Result<RunReport, CliError> {
    let start = Instant::now();
    let config = ctx.config()?;
    let spectral_tol = ctx.tol_override.unwrap_or(DEFAULT_SPECTRAL_TOL);

    let b = coefficient_matrix_for(&config)?;
    let certificate = spectral_radius(&b, spectral_tol)?;
    let rows = check_uniform_condition(&b);
    let verdict = certificate.verdict(CONTRACTION_BAND);

    writeln!(out, "radius {}", float17(certificate.radius))?;
    writeln!(
        out,
        "bounds [{}, {}]",
        float17(certificate.lower_bound),
        float17(certificate.upper_bound)
    )?;
    for point in &certificate.gelfand_trace {
        writeln!(out, "trace k={} value {}", point.k, float17(point.value))?;
    }
    writeln!(
        out,
        "row-sum condition: {} (max row sum {})",
        if rows.holds { "passes" } else { "fails" },
        float17(rows.max_row_sum)
    )?;
    writeln!(out, "spectral verdict: {}", verdict_name(verdict))?;
    writeln!(
        out,
        "verdict pair: (uniform {}, spectral {})",
        if rows.holds { "passes" } else { "fails" },
        verdict_name(verdict)
    )?;

    let mut report = RunReport::new("spectral", ctx.config_path, ctx.config_text, ctx.seed);
    report.spectral = Some(SpectralSection {
        certificate,
        verdict: verdict_name(verdict).to_string(),
    });
    report.row_sum = Some(RowSumSection::from(rows));
    report.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    report.write(ctx.out_dir)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// solve
// ---------------------------------------------------------------------------

struct PreparedModel {
    mdp: perov_dp::AdditiveMdp,
    weight: WeightFunction,
    weight_label: String,
    normalization: Option<(f64, f64)>,
    savings: Option<SavingsParams>,
}

fn prepare_model(config: &ModelConfig) -> Result<PreparedModel, CliError> {
    match config.model.kind {
        ModelKind::Savings => {
            let params = config.savings_params()?;
            let built = perov_dp::build_savings_mdp(&params)?;
            let (weight, weight_label) = match config.weight.kind {
                WeightKind::Auto => {
                    let chosen = choose_weight_offset(&params, config.weight.target_margin)?;
                    let label = format!("affine (auto offset {})", chosen.offset);
                    (chosen.weight, label)
                }
                _ => {
                    let weight = config
                        .explicit_weight()?
                        .expect("non-auto weight is explicit");
                    let label = match &weight {
                        WeightFunction::Unit => "unit".to_string(),
                        WeightFunction::Affine { offset } => format!("affine (offset {offset})"),
                        WeightFunction::Power { exponent } => {
                            format!("power (exponent {exponent})")
                        }
                        WeightFunction::Custom(_) => "custom".to_string(),
                    };
                    (weight, label)
                }
            };
            Ok(PreparedModel {
                mdp: built.mdp,
                weight,
                weight_label,
                normalization: Some((built.normalization.offset, built.normalization.slope)),
                savings: Some(params),
            })
        }
        ModelKind::Abstract => {
            let mdp = config.abstract_mdp()?;
            let weight = match config.weight.kind {
                WeightKind::Auto => WeightFunction::Unit,
                _ => config
                    .explicit_weight()?
                    .expect("non-auto weight is explicit"),
            };
            let weight_label = match &weight {
                WeightFunction::Unit => "unit".to_string(),
                WeightFunction::Affine { offset } => format!("affine (offset {offset})"),
                WeightFunction::Power { exponent } => format!("power (exponent {exponent})"),
                WeightFunction::Custom(_) => "custom".to_string(),
            };
            Ok(PreparedModel {
                mdp,
                weight,
                weight_label,
                normalization: None,
                savings: None,
            })
        }
    }
}

pub fn cmd_solve(ctx: &RunContext<'_>, out: &mut dyn Write) -> Result<RunReport, CliError> {
    let start = Instant::now();
    let config = ctx.config()?;
    let tol = ctx.tol(&config);
    let max_iter = ctx.max_iter(&config);

    let prepared = prepare_model(&config)?;
    let mut report = RunReport::new("solve", ctx.config_path, ctx.config_text, ctx.seed);

    let v0 = prepared.mdp.zero_value();
    let solve_result = perov_solve(&prepared.mdp, &prepared.weight, &v0, tol, max_iter);

    let attach_solve_sections = |report: &mut RunReport,
                                 solve_report: &SolveReport,
                                 weight_label: &str| {
        let mut section = SolveSection::from_report(solve_report, weight_label.to_string());
        if let Some((offset, slope)) = prepared.normalization {
            section.utility_offset = Some(offset);
            section.utility_slope = Some(slope);
        }
        report.solve = Some(section);
        report.spectral = Some(SpectralSection {
            certificate: solve_report.certificate.clone(),
            verdict: verdict_name(solve_report.certificate.verdict(CONTRACTION_BAND)).to_string(),
        });
        report.row_sum = Some(RowSumSection::from(check_uniform_condition(
            &solve_report.coefficient_matrix,
        )));
    };

    let solution = match solve_result {
        Ok(solution) => solution,
        Err(Error::NotConverged {
            report: solve_report,
        }) => {
            // Non-convergent runs keep their trace but emit no value table.
            attach_solve_sections(&mut report, &solve_report, &prepared.weight_label);
            write_trace_csv(ctx.out_dir, &solve_report)?;
            report.wall_ms = start.elapsed().as_secs_f64() * 1e3;
            report.write(ctx.out_dir)?;
            writeln!(
                out,
                "did not converge after {} iterations (a-posteriori bound {})",
                solve_report.iterations,
                float17(solve_report.aposteriori_sup())
            )?;
            return Err(CliError::NonConvergence(format!(
                "{} iterations, a-posteriori bound {:.3e} > tol {:.3e}",
                solve_report.iterations,
                solve_report.aposteriori_sup(),
                solve_report.requested_tol
            )));
        }
        Err(e) => return Err(e.into()),
    };

    attach_solve_sections(&mut report, &solution.report, &prepared.weight_label);

    if config.solver.check_samples > 0 {
        let samples = config.solver.check_samples;
        let blackwell = verify_blackwell(&prepared.mdp, &prepared.weight, samples, ctx.seed)?;
        let perov = verify_perov_inequality(
            &prepared.mdp,
            &prepared.weight,
            &solution.report.coefficient_matrix,
            samples,
            ctx.seed.wrapping_add(1),
        )?;
        report.verify = Some(VerifySection {
            samples,
            worst_monotonicity_violation: blackwell.worst_monotonicity_violation,
            worst_discounting_violation: blackwell.worst_discounting_violation,
            worst_contraction_excess: perov.worst_excess,
        });
    }

    if config.solver.oracle_comparison {
        let section = oracle_comparison(&config, &prepared, &solution.value, tol)?;
        report.oracle = Some(section);
    }

    let policy = extract_policy(&prepared.mdp, &solution.value)?;
    write_values_csv(
        ctx.out_dir,
        &solution.value,
        &solution.scaled,
        &policy,
        prepared.savings.is_some(),
    )?;
    write_trace_csv(ctx.out_dir, &solution.report)?;
    report.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    report.write(ctx.out_dir)?;

    writeln!(
        out,
        "converged in {} iterations (a-posteriori bound {})",
        solution.report.iterations,
        float17(solution.report.aposteriori_sup())
    )?;
    if let Some(oracle) = &report.oracle {
        writeln!(
            out,
            "oracle comparison: max relative deviation {}",
            float17(oracle.max_relative_deviation)
        )?;
    }
    Ok(report)
}

fn oracle_comparison(
    config: &ModelConfig,
    prepared: &PreparedModel,
    value: &perov_dp::ValueFunction,
    tol: f64,
) -> Result<OracleSection, CliError> {
    let params = prepared
        .savings
        .as_ref()
        .ok_or_else(|| CliError::Config("oracle comparison requires a savings model".into()))?;
    let gamma = config
        .crra_gamma()
        .ok_or_else(|| CliError::Config("oracle comparison requires CRRA utility".into()))?;
    if !params.income_is_zero() {
        return Err(CliError::Config(
            "oracle comparison requires zero non-financial income".into(),
        ));
    }
    let oracle_tol = (tol * 1e-2).max(1e-14);
    let h = crra_zero_income_oracle_with_shares(params, gamma, oracle_tol, &params.c_shares)?;
    let mut worst: f64 = 0.0;
    for (i, &w) in value.x_grid().iter().enumerate() {
        for (z, &hz) in h.iter().enumerate() {
            let implied = value.get(i, z) * (1.0 - gamma) / w.powf(1.0 - gamma);
            worst = worst.max((implied - hz).abs() / hz);
        }
    }
    Ok(OracleSection {
        coefficients: h,
        max_relative_deviation: worst,
    })
}

// ---------------------------------------------------------------------------
// classify
// ---------------------------------------------------------------------------

pub fn cmd_classify(ctx: &RunContext<'_>, out: &mut dyn Write) -> Result<RunReport, CliError> {
    let start = Instant::now();
    let config = ctx.config()?;
    if config.model.kind != ModelKind::Savings {
        return Err(CliError::Config(
            "classify requires a savings-kind config".into(),
        ));
    }
    let params = config.savings_params()?;
    let classification = classify_problem(&params, config.crra_gamma())?;

    let section = match &classification {
        Classification::Convergent { certificate } => ClassificationSection {
            verdict: "Convergent".to_string(),
            radius: certificate.radius,
            lower_bound: certificate.lower_bound,
            upper_bound: certificate.upper_bound,
            growth_exponents: None,
            growth_horizon: None,
        },
        Classification::Divergent {
            certificate,
            growth_exponents,
            horizon,
        } => ClassificationSection {
            verdict: "Divergent".to_string(),
            radius: certificate.radius,
            lower_bound: certificate.lower_bound,
            upper_bound: certificate.upper_bound,
            growth_exponents: Some(growth_exponents.clone()),
            growth_horizon: Some(*horizon),
        },
        Classification::Inconclusive { certificate } => ClassificationSection {
            verdict: "Inconclusive".to_string(),
            radius: certificate.radius,
            lower_bound: certificate.lower_bound,
            upper_bound: certificate.upper_bound,
            growth_exponents: None,
            growth_horizon: None,
        },
    };

    writeln!(out, "verdict: {}", section.verdict)?;
    writeln!(out, "radius {}", float17(section.radius))?;
    if let (Some(exps), Some(h)) = (&section.growth_exponents, section.growth_horizon) {
        for (z, e) in exps.iter().enumerate() {
            writeln!(out, "growth exponent z={} at T={h}: {}", z + 1, float17(*e))?;
        }
    }

    let mut report = RunReport::new("classify", ctx.config_path, ctx.config_text, ctx.seed);
    report.classification = Some(section);
    report.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    report.write(ctx.out_dir)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// compare-conditions
// ---------------------------------------------------------------------------

pub fn cmd_compare_conditions(
    ctx: &RunContext<'_>,
    out: &mut dyn Write,
) -> Result<RunReport, CliError> {
    let start = Instant::now();
    let config = ctx.config()?;
    if config.model.kind != ModelKind::Savings {
        return Err(CliError::Config(
            "compare-conditions requires a savings-kind config".into(),
        ));
    }
    let params = config.savings_params()?;
    let b = savings_coefficient_matrix(&config, &params)?;
    let spectral_tol = ctx.tol_override.unwrap_or(DEFAULT_SPECTRAL_TOL);
    let certificate = spectral_radius(&b, spectral_tol)?;
    let rows = check_uniform_condition(&b);
    let verdict = certificate.verdict(CONTRACTION_BAND);

    // A radius above 1 forces a row sum above 1, so "both fail" is the only
    // expansive outcome.
    let comparison = match (rows.holds, verdict) {
        (true, SpectralVerdict::Contractive) => "both pass",
        (false, SpectralVerdict::Contractive) => "only spectral passes",
        (_, SpectralVerdict::Expansive) => "both fail",
        (_, SpectralVerdict::Inconclusive) => "inconclusive",
    };

    writeln!(out, "condition        | verdict")?;
    writeln!(
        out,
        "uniform (rows<1) | {}",
        if rows.holds { "passes" } else { "fails" }
    )?;
    writeln!(out, "spectral (rho<1) | {}", verdict_name(verdict))?;
    for (z, s) in rows.row_sums.iter().enumerate() {
        writeln!(out, "row sum z={}: {}", z + 1, float17(*s))?;
    }
    writeln!(out, "max row sum: {}", float17(rows.max_row_sum))?;
    writeln!(out, "radius: {}", float17(certificate.radius))?;
    writeln!(out, "comparison: {comparison}")?;

    let mut report = RunReport::new(
        "compare-conditions",
        ctx.config_path,
        ctx.config_text,
        ctx.seed,
    );
    report.conditions = Some(ConditionsSection {
        row_sums: rows.row_sums.clone(),
        max_row_sum: rows.max_row_sum,
        radius: certificate.radius,
        uniform_passes: rows.holds,
        spectral_verdict: verdict_name(verdict).to_string(),
        comparison: comparison.to_string(),
    });
    report.spectral = Some(SpectralSection {
        certificate,
        verdict: verdict_name(verdict).to_string(),
    });
    report.row_sum = Some(RowSumSection::from(rows));
    report.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    report.write(ctx.out_dir)?;
    Ok(report)
}

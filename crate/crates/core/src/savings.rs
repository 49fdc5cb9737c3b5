//! Optimal savings with possibly unbounded utility: model construction,
//! the two coefficient-matrix formulas, the affine weight-offset search,
//! the zero-income homogeneity oracle, finite-horizon plan values, and the
//! convergent/divergent classification.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::AdditiveMdp;
use crate::spectral::{
    spectral_radius, MarkovChain, NonnegativeMatrix, SpectralCertificate, SpectralVerdict,
    CONTRACTION_BAND, DEFAULT_SPECTRAL_TOL,
};
use crate::vmetric::WeightFunction;

// ---------------------------------------------------------------------------
// Utility
// ---------------------------------------------------------------------------

/// Flow utility from consumption: constant relative risk aversion with
/// exponent in (0, 1), or a tabulated increasing concave function that is
/// finite at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Utility {
    Crra { gamma: f64 },
    Tabulated { points: Vec<(f64, f64)> },
}

impl Utility {
    pub fn validate(&self) -> Result<()> {
        match self {
            Utility::Crra { gamma } => {
                if !(*gamma > 0.0 && *gamma < 1.0) {
                    return Err(Error::InvalidInput(format!(
                        "CRRA exponent must lie in (0, 1), got {gamma}"
                    )));
                }
                Ok(())
            }
            Utility::Tabulated { points } => {
                if points.len() < 2 {
                    return Err(Error::InvalidInput(
                        "tabulated utility needs at least two points".into(),
                    ));
                }
                if points[0].0 != 0.0 {
                    return Err(Error::InvalidInput(
                        "tabulated utility must start at c = 0".into(),
                    ));
                }
                let mut prev_slope = f64::INFINITY;
                for pair in points.windows(2) {
                    let ((c0, u0), (c1, u1)) = (pair[0], pair[1]);
                    if !c0.is_finite() || !u0.is_finite() || !c1.is_finite() || !u1.is_finite() {
                        return Err(Error::InvalidInput(
                            "tabulated utility points must be finite".into(),
                        ));
                    }
                    if c1 <= c0 {
                        return Err(Error::InvalidInput(
                            "tabulated utility abscissae must be strictly increasing".into(),
                        ));
                    }
                    let slope = (u1 - u0) / (c1 - c0);
                    if slope < 0.0 {
                        return Err(Error::InvalidInput(
                            "tabulated utility must be increasing".into(),
                        ));
                    }
                    if slope > prev_slope + 1e-12 * slope.abs().max(1.0) {
                        return Err(Error::InvalidInput(
                            "tabulated utility must be concave (non-increasing slopes)".into(),
                        ));
                    }
                    prev_slope = slope;
                }
                Ok(())
            }
        }
    }

    pub fn evaluate(&self, c: f64) -> f64 {
        match self {
            Utility::Crra { gamma } => c.powf(1.0 - gamma) / (1.0 - gamma),
            Utility::Tabulated { points } => {
                let n = points.len();
                if c <= points[0].0 {
                    return points[0].1;
                }
                // Beyond the table, continue with the last slope.
                if c >= points[n - 1].0 {
                    let (c0, u0) = points[n - 2];
                    let (c1, u1) = points[n - 1];
                    return u1 + (c - c1) * (u1 - u0) / (c1 - c0);
                }
                let hi = points.partition_point(|&(ci, _)| ci <= c);
                let (c0, u0) = points[hi - 1];
                let (c1, u1) = points[hi];
                let t = (c - c0) / (c1 - c0);
                (1.0 - t) * u0 + t * u1
            }
        }
    }

    pub fn crra_gamma(&self) -> Option<f64> {
        match self {
            Utility::Crra { gamma } => Some(*gamma),
            Utility::Tabulated { .. } => None,
        }
    }
}

/// Monotone rescaling applied to the reward inside [`build_savings_mdp`]:
/// the value at zero is subtracted and the initial slope divided out, so
/// the normalized utility satisfies `0 ≤ u(c) ≤ c + b` for large enough `b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityNormalization {
    pub offset: f64,
    pub slope: f64,
}

fn normalization_of(utility: &Utility) -> UtilityNormalization {
    match utility {
        Utility::Crra { .. } => UtilityNormalization {
            offset: 0.0,
            slope: 1.0,
        },
        Utility::Tabulated { points } => {
            let offset = points[0].1;
            let raw_slope = (points[1].1 - points[0].1) / (points[1].0 - points[0].0);
            let slope = if raw_slope > 0.0 { raw_slope } else { 1.0 };
            UtilityNormalization { offset, slope }
        }
    }
}

// ---------------------------------------------------------------------------
// SavingsParams
// ---------------------------------------------------------------------------

/// The savings problem: exogenous chain, state-conditional gross returns
/// and discount factors, non-financial income, flow utility, and the two
/// discretization grids (wealth levels and consumption shares).
#[derive(Debug, Clone)]
pub struct SavingsParams {
    pub chain: MarkovChain,
    pub returns: Vec<Vec<f64>>,
    pub income: Vec<f64>,
    pub discount: Vec<Vec<f64>>,
    pub utility: Utility,
    pub w_grid: Vec<f64>,
    pub c_shares: Vec<f64>,
}

impl SavingsParams {
    pub fn z_count(&self) -> usize {
        self.chain.z_count()
    }

    pub fn income_is_zero(&self) -> bool {
        self.income.iter().all(|&y| y == 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let z = self.z_count();
        let check_table = |name: &str, table: &Vec<Vec<f64>>| -> Result<()> {
            if table.len() != z || table.iter().any(|row| row.len() != z) {
                return Err(Error::InvalidInput(format!("{name} table must be {z}x{z}")));
            }
            for row in table {
                for &v in row {
                    if !v.is_finite() || v < 0.0 {
                        return Err(Error::InvalidInput(format!(
                            "{name} entries must be finite and nonnegative, got {v}"
                        )));
                    }
                }
            }
            Ok(())
        };
        check_table("returns", &self.returns)?;
        check_table("discount", &self.discount)?;
        if self.income.len() != z {
            return Err(Error::InvalidInput(format!(
                "income vector must have length {z}"
            )));
        }
        for &y in &self.income {
            if !y.is_finite() || y < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "income entries must be finite and nonnegative, got {y}"
                )));
            }
        }
        self.utility.validate()?;
        if self.w_grid.len() < 2 {
            return Err(Error::InvalidInput(
                "wealth grid needs at least two points".into(),
            ));
        }
        if !(self.w_grid[0] > 0.0) {
            return Err(Error::InvalidInput(
                "wealth grid must be strictly positive".into(),
            ));
        }
        if self
            .w_grid
            .windows(2)
            .any(|w| !(w[0] < w[1]) || !w[1].is_finite())
        {
            return Err(Error::InvalidInput(
                "wealth grid must be finite and strictly increasing".into(),
            ));
        }
        if self.c_shares.is_empty() {
            return Err(Error::InvalidInput("share grid must be nonempty".into()));
        }
        for &s in &self.c_shares {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::InvalidInput(format!(
                    "consumption shares must lie in [0, 1], got {s}"
                )));
            }
        }
        if let Utility::Tabulated { points } = &self.utility {
            let max_share = self.c_shares.iter().cloned().fold(0.0, f64::max);
            let max_c = max_share * self.w_grid[self.w_grid.len() - 1];
            let last_c = points[points.len() - 1].0;
            if last_c < max_c {
                return Err(Error::InvalidInput(format!(
                    "tabulated utility covers consumption up to {last_c}, but the grids reach {max_c}"
                )));
            }
        }
        Ok(())
    }
}

/// Geometric wealth grid on [min, max]; curvature concentrates near zero
/// and growth near the top, which suits unbounded-reward problems.
pub fn geometric_grid(min: f64, max: f64, count: usize) -> Result<Vec<f64>> {
    if !(min > 0.0) || !(max > min) || count < 2 {
        return Err(Error::InvalidInput(format!(
            "geometric grid needs 0 < min < max and count >= 2, got ({min}, {max}, {count})"
        )));
    }
    let ratio = (max / min).ln() / (count - 1) as f64;
    let mut grid: Vec<f64> = (0..count).map(|i| min * (ratio * i as f64).exp()).collect();
    grid[0] = min;
    grid[count - 1] = max;
    Ok(grid)
}

pub fn uniform_grid(min: f64, max: f64, count: usize) -> Result<Vec<f64>> {
    if !(max > min) || count < 2 {
        return Err(Error::InvalidInput(format!(
            "uniform grid needs min < max and count >= 2, got ({min}, {max}, {count})"
        )));
    }
    let step = (max - min) / (count - 1) as f64;
    let mut grid: Vec<f64> = (0..count).map(|i| min + step * i as f64).collect();
    grid[count - 1] = max;
    Ok(grid)
}

/// Evenly spaced consumption shares on [0, 1], both endpoints included.
pub fn share_grid(count: usize) -> Result<Vec<f64>> {
    if count < 2 {
        return Err(Error::InvalidInput(
            "share grid needs at least two points".into(),
        ));
    }
    let mut shares: Vec<f64> = (0..count).map(|i| i as f64 / (count - 1) as f64).collect();
    shares[count - 1] = 1.0;
    Ok(shares)
}

pub fn default_wealth_grid() -> Vec<f64> {
    geometric_grid(1e-3, 1e3, 300).expect("default grid parameters are valid")
}

pub fn default_share_grid() -> Vec<f64> {
    share_grid(101).expect("default share count is valid")
}

// ---------------------------------------------------------------------------
// Model construction
// ---------------------------------------------------------------------------

/// A built savings model together with the utility rescaling that was
/// applied to the reward.
#[derive(Debug, Clone)]
pub struct SavingsMdp {
    pub mdp: AdditiveMdp,
    pub normalization: UtilityNormalization,
}

/// Assembles the dynamic program: actions are consumption shares scaled by
/// wealth (so the budget constraint holds exactly at every wealth level),
/// the reward is the normalized utility, and the transition is the budget
/// identity `w' = R(z,z')(w - c) + y(z')`.
pub fn build_savings_mdp(params: &SavingsParams) -> Result<SavingsMdp> {
    params.validate()?;
    let normalization = normalization_of(&params.utility);
    let z = params.z_count();

    let shares = Arc::new(params.c_shares.clone());
    let utility = params.utility.clone();
    let offset = normalization.offset;
    let slope = normalization.slope;
    let returns: Arc<Vec<f64>> = Arc::new(params.returns.iter().flatten().cloned().collect());
    let income = Arc::new(params.income.clone());
    let z_count = z;

    AdditiveMdp::builder()
        .x_grid(params.w_grid.clone())
        .chain(params.chain.clone())
        .discount(params.discount.clone())
        .feasible(move |w, _z| shares.iter().map(|&s| s * w).collect())
        .reward(move |_w, _z, c| (utility.evaluate(c) - offset) / slope)
        .transition(move |w, z, z_next, c| returns[z * z_count + z_next] * (w - c) + income[z_next])
        .build()
        .map(|mdp| SavingsMdp { mdp, normalization })
}

// ---------------------------------------------------------------------------
// Coefficient matrices
// ---------------------------------------------------------------------------

/// General coefficient matrix `B(z,z') = P(z,z') β(z,z') max{1, R(z,z')}`,
/// tied to the affine weight `κ(w) = w + b`.
pub fn savings_b_general(params: &SavingsParams) -> Result<NonnegativeMatrix> {
    let z = params.z_count();
    NonnegativeMatrix::from_fn(z, |i, j| {
        params.chain.prob(i, j) * params.discount[i][j] * params.returns[i][j].max(1.0)
    })
}

/// CRRA coefficient matrix, tied to the power weight: with zero income
/// `B(z,z') = P β R^{1-γ}`; with positive income the weight picks up an
/// offset and the factor becomes `max{1, R^{1-γ}}`. Weaker than the general
/// matrix since `R^{1-γ} < R` whenever `R > 1`.
pub fn savings_b_crra(params: &SavingsParams, gamma: f64) -> Result<NonnegativeMatrix> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidInput(format!(
            "CRRA exponent must lie in (0, 1), got {gamma}"
        )));
    }
    let z = params.z_count();
    let zero_income = params.income_is_zero();
    NonnegativeMatrix::from_fn(z, |i, j| {
        let growth = params.returns[i][j].powf(1.0 - gamma);
        let factor = if zero_income { growth } else { growth.max(1.0) };
        params.chain.prob(i, j) * params.discount[i][j] * factor
    })
}

// ---------------------------------------------------------------------------
// Weight offset selection
// ---------------------------------------------------------------------------

/// Result of the affine-weight offset search.
#[derive(Debug, Clone)]
pub struct WeightOffset {
    pub offset: f64,
    pub weight: WeightFunction,
    /// Effective discounts `β(z,z') (max{1, R(z,z')} + y(z')/b)` at the
    /// chosen offset; dominates the grid-computed effective discounts.
    pub tilde_beta: Vec<Vec<f64>>,
    pub certificate: SpectralCertificate,
}

/// Doubles the affine weight offset `b` from 1 until the income correction
/// `y(z')/b` shrinks enough for the corrected coefficient matrix to have
/// spectral radius below `1 - target_margin/2`. Requires the uncorrected
/// radius to clear `1 - target_margin`.
pub fn choose_weight_offset(params: &SavingsParams, target_margin: f64) -> Result<WeightOffset> {
    if !(target_margin > 0.0 && target_margin < 1.0) {
        return Err(Error::InvalidInput(format!(
            "target margin must lie in (0, 1), got {target_margin}"
        )));
    }
    let base = savings_b_general(params)?;
    let base_cert = spectral_radius(&base, DEFAULT_SPECTRAL_TOL)?;
    if !(base_cert.radius < 1.0 - target_margin) {
        return Err(Error::CannotCertify {
            radius: base_cert.radius,
            required: 1.0 - target_margin,
        });
    }

    let z = params.z_count();
    let mut offset = 1.0_f64;
    for _ in 0..64 {
        let tilde_beta: Vec<Vec<f64>> = (0..z)
            .map(|i| {
                (0..z)
                    .map(|j| {
                        params.discount[i][j]
                            * (params.returns[i][j].max(1.0) + params.income[j] / offset)
                    })
                    .collect()
            })
            .collect();
        let b = NonnegativeMatrix::from_fn(z, |i, j| params.chain.prob(i, j) * tilde_beta[i][j])?;
        let certificate = spectral_radius(&b, DEFAULT_SPECTRAL_TOL)?;
        if certificate.radius < 1.0 - target_margin / 2.0 {
            return Ok(WeightOffset {
                offset,
                weight: WeightFunction::Affine { offset },
                tilde_beta,
                certificate,
            });
        }
        offset *= 2.0;
    }
    Err(Error::Internal(
        "weight offset search did not terminate within 64 doublings".into(),
    ))
}

// ---------------------------------------------------------------------------
// Zero-income CRRA oracle
// ---------------------------------------------------------------------------

/// How the one-dimensional share maximization inside the oracle runs.
enum ShareSearch<'a> {
    /// Fine grid refined to continuum accuracy.
    Continuum,
    /// Exact max over a fixed share set (to mirror a discretized solver).
    Grid(&'a [f64]),
}

fn best_share_value(s: f64, q: f64, search: &ShareSearch<'_>) -> f64 {
    let f = |theta: f64| theta.powf(s) + (1.0 - theta).powf(s) * q;
    match search {
        ShareSearch::Grid(shares) => shares
            .iter()
            .map(|&t| f(t))
            .fold(f64::NEG_INFINITY, f64::max),
        ShareSearch::Continuum => {
            // Coarse scan, then ternary search on the concave objective.
            const COARSE: usize = 1024;
            let mut best_k = 0;
            let mut best = f64::NEG_INFINITY;
            for k in 0..=COARSE {
                let v = f(k as f64 / COARSE as f64);
                if v > best {
                    best = v;
                    best_k = k;
                }
            }
            let mut lo = (best_k.saturating_sub(1)) as f64 / COARSE as f64;
            let mut hi = ((best_k + 1).min(COARSE)) as f64 / COARSE as f64;
            for _ in 0..200 {
                let m1 = lo + (hi - lo) / 3.0;
                let m2 = hi - (hi - lo) / 3.0;
                if f(m1) < f(m2) {
                    lo = m1;
                } else {
                    hi = m2;
                }
            }
            best.max(f(0.5 * (lo + hi)))
        }
    }
}

fn oracle_impl(
    params: &SavingsParams,
    gamma: f64,
    tol: f64,
    search: ShareSearch<'_>,
) -> Result<Vec<f64>> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidInput(format!(
            "CRRA exponent must lie in (0, 1), got {gamma}"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!(
            "tol must be positive, got {tol}"
        )));
    }
    if !params.income_is_zero() {
        return Err(Error::Precondition(
            "the homogeneity oracle requires zero non-financial income".into(),
        ));
    }
    let b = savings_b_crra(params, gamma)?;
    let certificate = spectral_radius(&b, DEFAULT_SPECTRAL_TOL)?;
    if !certificate.is_contraction() {
        return Err(Error::SpectralRefusal {
            certificate: Box::new(certificate),
        });
    }

    let s = 1.0 - gamma;
    let z = params.z_count();
    let mut h = vec![1.0; z];
    for _ in 0..1_000_000 {
        let q = b.matvec(&h);
        let next: Vec<f64> = q
            .iter()
            .map(|&qz| best_share_value(s, qz, &search))
            .collect();
        let diff = h
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if diff <= tol {
            // The residual of the map at `h` is exactly `diff`.
            debug_assert!(h.iter().all(|&x| x >= 1.0 - 1e-12));
            return Ok(h);
        }
        h = next;
    }
    Err(Error::Internal(
        "homogeneity oracle did not converge".into(),
    ))
}

/// Independent oracle for the zero-income CRRA problem: the value function
/// is homogeneous of degree `1-γ`, `v(w,z) = h(z) w^{1-γ} / (1-γ)`, where
/// `h` solves a Z-dimensional fixed point over consumption shares. The
/// share maximization runs at continuum accuracy.
pub fn crra_zero_income_oracle(params: &SavingsParams, gamma: f64, tol: f64) -> Result<Vec<f64>> {
    oracle_impl(params, gamma, tol, ShareSearch::Continuum)
}

/// Same oracle with the share maximization restricted to a fixed share
/// grid, for comparisons against a solver discretized on the same shares.
pub fn crra_zero_income_oracle_with_shares(
    params: &SavingsParams,
    gamma: f64,
    tol: f64,
    shares: &[f64],
) -> Result<Vec<f64>> {
    if shares.is_empty() {
        return Err(Error::InvalidInput("share set must be nonempty".into()));
    }
    oracle_impl(params, gamma, tol, ShareSearch::Grid(shares))
}

// ---------------------------------------------------------------------------
// Finite-horizon plan values
// ---------------------------------------------------------------------------

/// Coefficients `a_T = B^T 1` of the save-everything-then-consume plan,
/// computed by `t` matrix-vector products (log-scaled to avoid overflow).
/// Returns `(a_t, log_scale)` with the true coefficients `a_t · exp(log_scale)`.
fn plan_coefficients(params: &SavingsParams, gamma: f64, t: u32) -> Result<(Vec<f64>, f64)> {
    if !params.income_is_zero() {
        return Err(Error::Precondition(
            "plan values are defined for zero non-financial income".into(),
        ));
    }
    let b = savings_b_crra(params, gamma)?;
    let mut a = vec![1.0; params.z_count()];
    let mut log_scale = 0.0_f64;
    for _ in 0..t {
        a = b.matvec(&a);
        let m = a.iter().cloned().fold(0.0, f64::max);
        if m > 1e100 {
            for x in &mut a {
                *x /= m;
            }
            log_scale += m.ln();
        }
    }
    Ok((a, log_scale))
}

/// Lifetime utility of the plan that saves everything for `t` periods and
/// then consumes all wealth: `v_t(w, z) = (e_z' B^t 1) w^{1-γ} / (1-γ)`.
pub fn plan_value_vt(params: &SavingsParams, gamma: f64, t: u32, w: f64, z: usize) -> Result<f64> {
    if !(w > 0.0) {
        return Err(Error::InvalidInput(format!(
            "wealth must be positive, got {w}"
        )));
    }
    if z >= params.z_count() {
        return Err(Error::InvalidInput(format!(
            "state index {z} out of range (Z = {})",
            params.z_count()
        )));
    }
    let (a, log_scale) = plan_coefficients(params, gamma, t)?;
    Ok(a[z] * log_scale.exp() * w.powf(1.0 - gamma) / (1.0 - gamma))
}

/// Per-state growth exponents `(v_t(1, z))^{1/t}`, which approach the
/// spectral radius of the coefficient matrix as `t` grows.
pub fn plan_growth_exponents(params: &SavingsParams, gamma: f64, t: u32) -> Result<Vec<f64>> {
    if t == 0 {
        return Err(Error::InvalidInput("growth exponents need t >= 1".into()));
    }
    let (a, log_scale) = plan_coefficients(params, gamma, t)?;
    Ok(a.iter()
        .map(|&az| {
            if az == 0.0 {
                0.0
            } else {
                // v_t(1, z) = a_z exp(log_scale) / (1-γ).
                ((az.ln() + log_scale - (1.0 - gamma).ln()) / t as f64).exp()
            }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Classification
// ---------------------------------------------------------------------------

/// Verdict on a savings problem from the spectral radius of its
/// coefficient matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Classification {
    /// Certified radius below 1: a unique value function exists in the
    /// weighted-bounded class.
    Convergent { certificate: SpectralCertificate },
    /// Certified radius above 1 in the zero-income CRRA regime: the optimal
    /// value is infinite. Growth exponents of the finite-horizon plan
    /// values at the reporting horizon accompany the certificate.
    Divergent {
        certificate: SpectralCertificate,
        growth_exponents: Vec<f64>,
        horizon: u32,
    },
    /// The radius is too close to 1 to call, or the radius exceeds 1 in a
    /// regime where divergence is not established.
    Inconclusive { certificate: SpectralCertificate },
}

/// Horizon at which divergence classification evaluates plan values.
pub const DIVERGENCE_HORIZON: u32 = 200;

/// Builds the coefficient matrix appropriate to the utility (CRRA or
/// general), certifies its radius, and classifies. Radii within `1e-6` of 1
/// stay inconclusive; divergence is only declared in the zero-income CRRA
/// regime where the infinite-value construction applies.
pub fn classify_problem(params: &SavingsParams, gamma: Option<f64>) -> Result<Classification> {
    params.validate()?;
    let b = match gamma {
        Some(g) => savings_b_crra(params, g)?,
        None => savings_b_general(params)?,
    };
    let certificate = spectral_radius(&b, DEFAULT_SPECTRAL_TOL)?;
    match certificate.verdict(CONTRACTION_BAND) {
        SpectralVerdict::Contractive => Ok(Classification::Convergent { certificate }),
        SpectralVerdict::Expansive => match gamma {
            Some(g) if params.income_is_zero() => {
                let growth_exponents = plan_growth_exponents(params, g, DIVERGENCE_HORIZON)?;
                Ok(Classification::Divergent {
                    certificate,
                    growth_exponents,
                    horizon: DIVERGENCE_HORIZON,
                })
            }
            _ => Ok(Classification::Inconclusive { certificate }),
        },
        SpectralVerdict::Inconclusive => Ok(Classification::Inconclusive { certificate }),
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

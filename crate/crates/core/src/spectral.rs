//! Nonnegative-matrix arithmetic, sup-induced operator norms, certified
//! spectral radius computation, and discounting-condition checks.
//!
//! The spectral radius of a nonnegative matrix `B` is approximated through
//! the norm sequence `‖B^k‖^{1/k}` along `k = 1, 2, 4, …`, produced by
//! repeated squaring with per-step renormalization so no overflow can occur.
//! Each trace value is a certified upper bound (the sequence is
//! non-increasing along squarings by submultiplicativity), Collatz–Wielandt
//! quotients at a strictly positive iterate give certified two-sided bounds,
//! and the point estimate comes from the ratio of consecutive norms, which
//! cancels the slowly-decaying prefactor of the raw norm sequence.
//!
//! Everything here is deterministic and correct for reducible matrices;
//! irreducibility is never assumed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default accuracy target for [`spectral_radius`].
pub const DEFAULT_SPECTRAL_TOL: f64 = 1e-8;

/// Power cap: squaring stops at `B^(2^MAX_SQUARINGS)`.
pub const MAX_SQUARINGS: u32 = 20;

/// Radii within this band of 1 are classified neither as contractive nor
/// as expansive.
pub const CONTRACTION_BAND: f64 = 1e-6;

/// Row-stochasticity slack for [`MarkovChain`] rows.
const ROW_SUM_TOL: f64 = 1e-12;

// ---------------------------------------------------------------------------
// NonnegativeMatrix
// ---------------------------------------------------------------------------

/// Dense square matrix with nonnegative entries, stored row-major.
///
/// Holds discount/growth coefficient matrices and their powers. Dimensions
/// stay small (Z up to a few hundred), so dense storage is deliberate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonnegativeMatrix {
    dim: usize,
    entries: Vec<f64>,
}

impl NonnegativeMatrix {
    /// Build from rows, validating shape, finiteness and nonnegativity.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 {
            return Err(Error::InvalidInput("matrix must have dim >= 1".into()));
        }
        let mut entries = Vec::with_capacity(dim * dim);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::InvalidInput(format!(
                    "row {i} has {} entries, expected {dim}",
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "entry ({i},{j}) is not finite: {v}"
                    )));
                }
                if v < 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "entry ({i},{j}) is negative: {v}"
                    )));
                }
                entries.push(v);
            }
        }
        Ok(Self { dim, entries })
    }

    /// Build entry-by-entry from a function of (row, column).
    pub fn from_fn(dim: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let rows: Vec<Vec<f64>> = (0..dim)
            .map(|i| (0..dim).map(|j| f(i, j)).collect())
            .collect();
        Self::from_rows(&rows)
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            entries: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.entries[i * dim + i] = 1.0;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.entries
            .chunks(self.dim)
            .map(|r| r.iter().sum())
            .collect()
    }

    /// Sup-norm-induced operator norm: max row sum (entries are nonnegative).
    pub fn sup_norm(&self) -> f64 {
        self.row_sums().into_iter().fold(0.0, f64::max)
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim, "matmul dimension mismatch");
        let n = self.dim;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.entries[i * n + k];
                if a == 0.0 {
                    continue;
                }
                let row = &other.entries[k * n..(k + 1) * n];
                let dst = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    dst[j] += a * row[j];
                }
            }
        }
        Self {
            dim: n,
            entries: out,
        }
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.dim, "matvec dimension mismatch");
        let n = self.dim;
        (0..n)
            .map(|i| {
                let row = &self.entries[i * n..(i + 1) * n];
                row.iter().zip(v).map(|(a, x)| a * x).sum()
            })
            .collect()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            dim: self.dim,
            entries: self.entries.iter().map(|&v| v * s).collect(),
        }
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.dim).map(|r| r.to_vec()).collect()
    }
}

// ---------------------------------------------------------------------------
// MarkovChain
// ---------------------------------------------------------------------------

/// Finite exogenous state set `{1, …, Z}` with a row-stochastic transition
/// matrix. Rows must sum to 1 within `1e-12`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovChain {
    z_count: usize,
    transition: Vec<f64>,
}

impl MarkovChain {
    pub fn new(rows: &[Vec<f64>]) -> Result<Self> {
        let z = rows.len();
        if z == 0 {
            return Err(Error::InvalidInput(
                "Markov chain needs at least one state".into(),
            ));
        }
        let mut transition = Vec::with_capacity(z * z);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != z {
                return Err(Error::InvalidInput(format!(
                    "transition row {i} has {} entries, expected {z}",
                    row.len()
                )));
            }
            let mut sum = 0.0;
            for (j, &p) in row.iter().enumerate() {
                if !p.is_finite() || p < 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "transition probability ({i},{j}) invalid: {p}"
                    )));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidInput(format!(
                    "transition row {i} sums to {sum}, expected 1 within {ROW_SUM_TOL:e}"
                )));
            }
            transition.extend_from_slice(row);
        }
        Ok(Self {
            z_count: z,
            transition,
        })
    }

    pub fn z_count(&self) -> usize {
        self.z_count
    }

    #[inline]
    pub fn prob(&self, z: usize, z_next: usize) -> f64 {
        self.transition[z * self.z_count + z_next]
    }
}

// ---------------------------------------------------------------------------
// Spectral radius certificate
// ---------------------------------------------------------------------------

/// One point of the norm trace: `value = ‖B^k‖^{1/k}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GelfandPoint {
    pub k: u64,
    pub value: f64,
}

/// Three-way verdict derived from certified bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpectralVerdict {
    /// Certified radius below 1.
    Contractive,
    /// Certified radius above 1.
    Expansive,
    /// The radius sits inside the undecided band around 1.
    Inconclusive,
}

/// Output of [`spectral_radius`]: a point estimate together with certified
/// two-sided bounds and the norm trace that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralCertificate {
    /// Point estimate of the spectral radius.
    pub radius: f64,
    /// `(k, ‖B^k‖^{1/k})` along `k = 1, 2, 4, …`.
    pub gelfand_trace: Vec<GelfandPoint>,
    /// Certified lower bound (best Collatz–Wielandt min quotient seen).
    pub lower_bound: f64,
    /// Certified upper bound (best of norm-trace values and Collatz–Wielandt
    /// max quotients).
    pub upper_bound: f64,
    /// True iff every row sum of `B` is strictly below 1.
    pub row_sum_condition_holds: bool,
}

impl SpectralCertificate {
    /// Classify against 1 using the certified bounds. Radii whose distance
    /// to 1 cannot be resolved beyond `band` are inconclusive.
    pub fn verdict(&self, band: f64) -> SpectralVerdict {
        if self.upper_bound < 1.0 - band {
            SpectralVerdict::Contractive
        } else if self.lower_bound > 1.0 + band {
            SpectralVerdict::Expansive
        } else {
            SpectralVerdict::Inconclusive
        }
    }

    /// Convenience: conclusively contractive at the default band.
    pub fn is_contraction(&self) -> bool {
        self.verdict(CONTRACTION_BAND) == SpectralVerdict::Contractive
    }
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Operator norm induced by the supremum norm: max over rows of the sum of
/// absolute entries. Accepts any square matrix, signed entries included.
pub fn operator_sup_norm(rows: &[Vec<f64>]) -> Result<f64> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::InvalidInput("matrix must have dim >= 1".into()));
    }
    let mut norm: f64 = 0.0;
    for (i, row) in rows.iter().enumerate() {
        if row.len() != n {
            return Err(Error::InvalidInput(format!(
                "row {i} has {} entries, expected {n}",
                row.len()
            )));
        }
        let mut sum = 0.0;
        for &v in row {
            if !v.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "non-finite entry in row {i}: {v}"
                )));
            }
            sum += v.abs();
        }
        norm = norm.max(sum);
    }
    Ok(norm)
}

/// Collatz–Wielandt quotients of `b` at a strictly positive vector:
/// `(min_z (Bv)_z / v_z, max_z (Bv)_z / v_z)`, a certified sandwich of the
/// spectral radius for any nonnegative `b`.
fn collatz_wielandt(b: &NonnegativeMatrix, v: &[f64]) -> (f64, f64) {
    let bv = b.matvec(v);
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for (num, den) in bv.iter().zip(v) {
        let q = num / den;
        lo = lo.min(q);
        hi = hi.max(q);
    }
    (lo, hi)
}

/// Certified spectral radius of a nonnegative matrix.
///
/// `tol` is the accuracy target for the point estimate; squaring stops once
/// consecutive estimates agree within `tol / 4` (the trace always reaches at
/// least `k = 64`) or at the `2^20` power cap.
pub fn spectral_radius(b: &NonnegativeMatrix, tol: f64) -> Result<SpectralCertificate> {
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!(
            "tol must be positive, got {tol}"
        )));
    }

    let row_sums = b.row_sums();
    let row_sum_condition_holds = row_sums.iter().all(|&s| s < 1.0);

    let norm1 = b.sup_norm();
    if norm1 == 0.0 {
        // Zero matrix: radius exactly 0.
        return Ok(SpectralCertificate {
            radius: 0.0,
            gelfand_trace: vec![GelfandPoint { k: 1, value: 0.0 }],
            lower_bound: 0.0,
            upper_bound: 0.0,
            row_sum_condition_holds,
        });
    }

    // m ≈ B^(2^j) / exp(log_scale); renormalization keeps entries in [0, 1].
    let mut m = b.scale(1.0 / norm1);
    let mut log_scale = norm1.ln();
    let mut exponent: u64 = 1;

    let mut trace = vec![GelfandPoint { k: 1, value: norm1 }];
    let (mut cw_lower, mut cw_upper) = cw_bounds_at_iterate(b, &m);
    let mut upper = norm1.min(cw_upper);
    let mut lower = cw_lower.max(0.0);

    let mut estimate = norm1;
    let mut prev_log_norm = log_scale;

    for _ in 0..MAX_SQUARINGS {
        let squared = m.matmul(&m);
        let norm = squared.sup_norm();
        if !norm.is_finite() {
            return Err(Error::Internal(
                "overflow during matrix squaring despite renormalization".into(),
            ));
        }
        if norm == 0.0 {
            // B^(2^(j+1)) = 0 exactly: B is nilpotent, radius 0.
            trace.push(GelfandPoint {
                k: exponent * 2,
                value: 0.0,
            });
            return Ok(SpectralCertificate {
                radius: 0.0,
                gelfand_trace: trace,
                lower_bound: 0.0,
                upper_bound: 0.0,
                row_sum_condition_holds,
            });
        }

        m = squared.scale(1.0 / norm);
        log_scale = 2.0 * log_scale + norm.ln();
        exponent *= 2;

        // log ‖B^k‖ = log_scale at k = exponent.
        let gelfand_value = (log_scale / exponent as f64).exp();
        trace.push(GelfandPoint {
            k: exponent,
            value: gelfand_value,
        });
        upper = upper.min(gelfand_value);

        (cw_lower, cw_upper) = cw_bounds_at_iterate(b, &m);
        lower = lower.max(cw_lower);
        upper = upper.min(cw_upper);

        // Ratio of consecutive norms: (log‖B^{2k}‖ - log‖B^k‖) / k. The
        // norm prefactor cancels, so this converges far faster than the
        // raw trace values.
        let next_estimate = ((log_scale - prev_log_norm) / (exponent as f64 / 2.0)).exp();
        prev_log_norm = log_scale;
        let settled = (next_estimate - estimate).abs() <= tol / 4.0;
        estimate = next_estimate;
        if settled && exponent >= 64 {
            break;
        }
    }

    // Rounding can push the best lower bound past the best upper bound by
    // an ulp when both sit exactly at the radius; reconcile before clamping.
    if lower > upper {
        let mid = 0.5 * (lower + upper);
        lower = mid;
        upper = mid;
    }
    let radius = estimate.clamp(lower, upper);
    Ok(SpectralCertificate {
        radius,
        gelfand_trace: trace,
        lower_bound: lower,
        upper_bound: upper,
        row_sum_condition_holds,
    })
}

/// Collatz–Wielandt bounds for `b` evaluated at the row sums of the
/// renormalized iterate, floored away from zero so the vector is strictly
/// positive (required for validity on reducible matrices).
fn cw_bounds_at_iterate(b: &NonnegativeMatrix, iterate: &NonnegativeMatrix) -> (f64, f64) {
    let mut v = iterate.row_sums();
    let vmax = v.iter().cloned().fold(0.0, f64::max);
    let floor = vmax * 1e-15 + f64::MIN_POSITIVE;
    for x in &mut v {
        if *x < floor {
            *x = floor;
        }
    }
    collatz_wielandt(b, &v)
}

/// Row-sum (uniform discounting) condition report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowSumReport {
    pub holds: bool,
    pub row_sums: Vec<f64>,
    pub max_row_sum: f64,
}

/// Checks the classical uniform condition: every row sum of `B` strictly
/// below 1. Stronger than the spectral condition; the per-row sums are
/// returned so callers can display the gap against the certified radius.
pub fn check_uniform_condition(b: &NonnegativeMatrix) -> RowSumReport {
    let row_sums = b.row_sums();
    let max_row_sum = row_sums.iter().cloned().fold(0.0, f64::max);
    RowSumReport {
        holds: max_row_sum < 1.0,
        row_sums,
        max_row_sum,
    }
}

// ---------------------------------------------------------------------------
// Neumann series application
// ---------------------------------------------------------------------------

/// Reusable machinery for summing `Σ_{k≥0} B^k c` with a certified
/// truncation bound.
///
/// Construction finds a strictly positive vector `w` with `B w ≤ θ w` for
/// some `θ < 1` (possible exactly when the radius is certified below 1).
/// Any partial sum `p_n` of the series then satisfies
/// `p_n ≤ Σ B^k c ≤ p_n + α w` with `α = max_z d_z / ((1-θ) w_z)` computed
/// from the latest increment `d`, which turns the geometric series into a
/// stopping rule with a guaranteed error envelope.
#[derive(Debug, Clone)]
pub struct NeumannOperator {
    b: NonnegativeMatrix,
    w: Vec<f64>,
    theta: f64,
}

impl NeumannOperator {
    /// Build from a matrix whose certificate is conclusively contractive.
    pub fn new(b: &NonnegativeMatrix, certificate: &SpectralCertificate) -> Result<Self> {
        if !certificate.is_contraction() {
            return Err(Error::SpectralRefusal {
                certificate: Box::new(certificate.clone()),
            });
        }
        // w = (I - B/θ₀)^{-1} 1 ≥ 1, solved directly; θ₀ strictly between
        // the certified upper bound and 1 keeps the system nonsingular.
        let theta0 = (1.0 + certificate.upper_bound) / 2.0;
        let n = b.dim();
        let scaled = b.scale(1.0 / theta0);
        let mut system: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let id = if i == j { 1.0 } else { 0.0 };
                        id - scaled.get(i, j)
                    })
                    .collect()
            })
            .collect();
        let mut w = vec![1.0; n];
        solve_linear_system(&mut system, &mut w)?;

        // The solve is exact only up to roundoff; re-certify via the
        // Collatz–Wielandt quotient at w.
        if w.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::Internal(
                "Neumann weight vector failed positivity check".into(),
            ));
        }
        let (_, theta) = collatz_wielandt(b, &w);
        if !(theta < 1.0) {
            return Err(Error::Internal(format!(
                "Neumann weight vector certifies only θ = {theta}, expected < 1"
            )));
        }
        Ok(Self {
            b: b.clone(),
            w,
            theta,
        })
    }

    /// Partial sums of `Σ B^k c` until the certified tail is at most `tol`
    /// in sup norm. Returns `(sum, upper_envelope)` with
    /// `sum ≤ Σ B^k c ≤ upper_envelope` entrywise. The envelope is a valid
    /// upper bound at every truncation point, so when `abandon_above` is
    /// set the summation may stop early once the partial sum alone exceeds
    /// that threshold (callers that only test "is the sum below t?" get a
    /// conclusive answer either way).
    fn apply_with_abandon(
        &self,
        c: &[f64],
        tol: f64,
        abandon_above: Option<f64>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.b.dim();
        if c.len() != n {
            return Err(Error::InvalidInput(format!(
                "vector length {} does not match matrix dim {n}",
                c.len()
            )));
        }
        for &x in c {
            if !x.is_finite() || x < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "Neumann series requires nonnegative finite input, got {x}"
                )));
            }
        }
        let mut partial = c.to_vec();
        let mut increment = c.to_vec();
        let one_minus_theta = 1.0 - self.theta;
        let w_sup = self.w.iter().cloned().fold(0.0, f64::max);
        // Tail after the partial sum with latest increment d:
        // Σ_{k≥1} B^k d ≤ α θ w entrywise with α = max d_z / ((1-θ) w_z).
        for _ in 0..50_000_000u64 {
            let alpha = increment
                .iter()
                .zip(&self.w)
                .map(|(d, w)| d / (one_minus_theta * w))
                .fold(0.0, f64::max);
            let converged = alpha * w_sup <= tol;
            let abandoned =
                abandon_above.is_some_and(|t| partial.iter().cloned().fold(0.0, f64::max) > t);
            if converged || abandoned {
                let envelope: Vec<f64> = partial
                    .iter()
                    .zip(&self.w)
                    .map(|(p, w)| p + alpha * w)
                    .collect();
                return Ok((partial, envelope));
            }
            increment = self.b.matvec(&increment);
            for (p, d) in partial.iter_mut().zip(&increment) {
                *p += d;
            }
        }
        Err(Error::Internal(
            "Neumann series failed to meet its tail bound".into(),
        ))
    }

    /// Partial sums of `Σ B^k c` until the certified tail is at most `tol`
    /// in sup norm. Returns `(sum, upper_envelope)` with
    /// `sum ≤ Σ B^k c ≤ upper_envelope` entrywise.
    pub fn apply_bounded(&self, c: &[f64], tol: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        self.apply_with_abandon(c, tol, None)
    }

    /// Certified upper bound on `Σ B^k c`, allowed to stop early (and stay
    /// loose) once the bound provably exceeds `threshold`.
    pub fn bound_or_exceeds(&self, c: &[f64], tol: f64, threshold: f64) -> Result<Vec<f64>> {
        self.apply_with_abandon(c, tol, Some(threshold))
            .map(|(_, envelope)| envelope)
    }

    pub fn matrix(&self) -> &NonnegativeMatrix {
        &self.b
    }
}

/// Gaussian elimination with partial pivoting; `rhs` is overwritten with the
/// solution.
#[allow(clippy::needless_range_loop)]
fn solve_linear_system(a: &mut [Vec<f64>], rhs: &mut [f64]) -> Result<()> {
    let n = rhs.len();
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot_row][col].abs() < 1e-300 {
            return Err(Error::Internal(
                "singular system in Neumann weight solve".into(),
            ));
        }
        a.swap(col, pivot_row);
        rhs.swap(col, pivot_row);
        for row in (col + 1)..n {
            let factor = a[row][col] / a[col][col];
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    for col in (0..n).rev() {
        let mut acc = rhs[col];
        for k in (col + 1)..n {
            acc -= a[col][k] * rhs[k];
        }
        rhs[col] = acc / a[col][col];
    }
    Ok(())
}

/// Sums the Neumann series `Σ_{k≥0} B^k c` to within `tol` in sup norm.
/// Requires a certified radius below 1; refuses otherwise.
pub fn neumann_apply(b: &NonnegativeMatrix, c: &[f64], tol: f64) -> Result<Vec<f64>> {
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!(
            "tol must be positive, got {tol}"
        )));
    }
    let certificate = spectral_radius(b, DEFAULT_SPECTRAL_TOL)?;
    let op = NeumannOperator::new(b, &certificate)?;
    let (sum, _) = op.apply_bounded(c, tol)?;
    Ok(sum)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

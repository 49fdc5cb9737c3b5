//! Additive Markov dynamic programs on a grid: Bellman and scaled Bellman
//! operators, coefficient-matrix construction, verification of the
//! monotonicity/discounting conditions, and the fixed-point solver with a
//! certified a-posteriori stopping rule.
//!
//! Discretization contract: value functions live on a fixed strictly
//! increasing grid in the endogenous state, are interpolated linearly
//! between nodes and extrapolated as constants beyond the ends (with clamp
//! counters exposed in the solve report). The scaled operator evaluates the
//! weight at the raw transition point and interpolates only the scaled
//! function; linear interpolation commutes with adding constants, so the
//! discretized operator satisfies monotonicity and the discounting
//! inequality exactly, not merely approximately.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::spectral::{
    spectral_radius, MarkovChain, NeumannOperator, NonnegativeMatrix, SpectralCertificate,
    DEFAULT_SPECTRAL_TOL,
};
use crate::vmetric::{sup_collapse, vector_distance, VectorDistance, WeightFunction};

// ---------------------------------------------------------------------------
// ValueFunction
// ---------------------------------------------------------------------------

/// Counts evaluations beyond the grid ends (where constant extrapolation
/// kicks in). Exposed so truncation of an unbounded state space stays
/// observable.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ClampCounter {
    pub below: u64,
    pub above: u64,
}

/// Real values on the (x-grid × Z) product, finite everywhere, evaluated
/// off-grid by linear interpolation and beyond the ends by constant
/// extrapolation.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction {
    x_grid: Arc<Vec<f64>>,
    z_count: usize,
    values: Vec<f64>,
}

impl ValueFunction {
    pub fn new(x_grid: Arc<Vec<f64>>, z_count: usize, values: Vec<f64>) -> Result<Self> {
        validate_grid(&x_grid)?;
        if z_count == 0 {
            return Err(Error::InvalidInput("z_count must be at least 1".into()));
        }
        if values.len() != x_grid.len() * z_count {
            return Err(Error::InvalidInput(format!(
                "value table has {} entries, expected {}",
                values.len(),
                x_grid.len() * z_count
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "value functions must be finite everywhere, got {bad}"
            )));
        }
        Ok(Self {
            x_grid,
            z_count,
            values,
        })
    }

    pub fn constant(x_grid: Arc<Vec<f64>>, z_count: usize, value: f64) -> Result<Self> {
        let n = x_grid.len() * z_count;
        Self::new(x_grid, z_count, vec![value; n])
    }

    pub fn from_fn(
        x_grid: Arc<Vec<f64>>,
        z_count: usize,
        f: impl Fn(f64, usize) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(x_grid.len() * z_count);
        for &x in x_grid.iter() {
            for z in 0..z_count {
                values.push(f(x, z));
            }
        }
        Self::new(x_grid, z_count, values)
    }

    pub fn x_grid(&self) -> &[f64] {
        &self.x_grid
    }

    pub fn x_grid_arc(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.x_grid)
    }

    pub fn z_count(&self) -> usize {
        self.z_count
    }

    #[inline]
    pub fn get(&self, i: usize, z: usize) -> f64 {
        self.values[i * self.z_count + z]
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        self.z_count == other.z_count
            && (Arc::ptr_eq(&self.x_grid, &other.x_grid) || *self.x_grid == *other.x_grid)
    }

    /// Linear interpolation in x with constant extrapolation beyond the
    /// grid ends; extrapolations are tallied in `counter`.
    #[inline]
    pub fn evaluate_counted(&self, x: f64, z: usize, counter: &mut ClampCounter) -> f64 {
        let g = &self.x_grid;
        let last = g.len() - 1;
        if x <= g[0] {
            if x < g[0] {
                counter.below += 1;
            }
            return self.get(0, z);
        }
        if x >= g[last] {
            if x > g[last] {
                counter.above += 1;
            }
            return self.get(last, z);
        }
        let hi = g.partition_point(|&p| p <= x);
        let lo = hi - 1;
        let t = (x - g[lo]) / (g[hi] - g[lo]);
        (1.0 - t) * self.get(lo, z) + t * self.get(hi, z)
    }

    pub fn evaluate(&self, x: f64, z: usize) -> f64 {
        let mut counter = ClampCounter::default();
        self.evaluate_counted(x, z, &mut counter)
    }

    /// Pointwise product with a weight: `(κ·v)(x_i, z) = κ(x_i, z) v(x_i, z)`.
    pub fn scale_by_weight(&self, weight: &WeightFunction) -> Result<Self> {
        let mut values = Vec::with_capacity(self.values.len());
        for (i, &x) in self.x_grid.iter().enumerate() {
            for z in 0..self.z_count {
                values.push(weight.evaluate(x, z) * self.get(i, z));
            }
        }
        Self::new(Arc::clone(&self.x_grid), self.z_count, values)
    }

    /// Pointwise map over grid values.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(
            Arc::clone(&self.x_grid),
            self.z_count,
            self.values.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Adds a per-z constant vector.
    pub fn add_per_state(&self, c: &[f64]) -> Result<Self> {
        if c.len() != self.z_count {
            return Err(Error::InvalidInput(format!(
                "constant vector length {} does not match z_count {}",
                c.len(),
                self.z_count
            )));
        }
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(idx, &v)| v + c[idx % self.z_count])
            .collect();
        Self::new(Arc::clone(&self.x_grid), self.z_count, values)
    }
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("x grid must be nonempty".into()));
    }
    if grid.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("x grid entries must be finite".into()));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput(
            "x grid must be strictly increasing".into(),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// AdditiveMdp
// ---------------------------------------------------------------------------

/// The tuple {x-grid, Z, P, feasible sets, reward, transition, discount}.
///
/// Action sets and rewards are tabulated over the grid at construction so
/// invariants (nonempty feasible sets, finite rewards, finite transitions)
/// fail fast; the transition map stays a closure since it is consulted at
/// continuum points.
#[derive(Clone)]
pub struct AdditiveMdp {
    x_grid: Arc<Vec<f64>>,
    chain: MarkovChain,
    discount: Vec<Vec<f64>>,
    transition: Arc<dyn Fn(f64, usize, usize, f64) -> f64 + Send + Sync>,
    actions: Vec<Vec<Arc<Vec<f64>>>>,
    rewards: Vec<Vec<Vec<f64>>>,
}

impl fmt::Debug for AdditiveMdp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AdditiveMdp")
            .field("grid_len", &self.x_grid.len())
            .field("z_count", &self.chain.z_count())
            .finish_non_exhaustive()
    }
}

impl AdditiveMdp {
    pub fn builder() -> AdditiveMdpBuilder {
        AdditiveMdpBuilder::default()
    }

    pub fn x_grid(&self) -> &[f64] {
        &self.x_grid
    }

    pub fn x_grid_arc(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.x_grid)
    }

    pub fn chain(&self) -> &MarkovChain {
        &self.chain
    }

    pub fn z_count(&self) -> usize {
        self.chain.z_count()
    }

    pub fn discount(&self, z: usize, z_next: usize) -> f64 {
        self.discount[z][z_next]
    }

    pub fn feasible_actions(&self, i: usize, z: usize) -> &[f64] {
        &self.actions[i][z]
    }

    pub fn reward_at(&self, i: usize, z: usize, action_index: usize) -> f64 {
        self.rewards[i][z][action_index]
    }

    pub fn transition_value(&self, x: f64, z: usize, z_next: usize, action: f64) -> f64 {
        (self.transition)(x, z, z_next, action)
    }

    /// Zero value function on this model's grid.
    pub fn zero_value(&self) -> ValueFunction {
        ValueFunction::constant(self.x_grid_arc(), self.z_count(), 0.0)
            .expect("validated grid always yields a valid zero function")
    }
}

type FeasibleFn = dyn Fn(f64, usize) -> Vec<f64> + Send + Sync;
type RewardFn = dyn Fn(f64, usize, f64) -> f64 + Send + Sync;
type TransitionFn = dyn Fn(f64, usize, usize, f64) -> f64 + Send + Sync;

#[derive(Default)]
pub struct AdditiveMdpBuilder {
    x_grid: Option<Vec<f64>>,
    chain: Option<MarkovChain>,
    discount: Option<Vec<Vec<f64>>>,
    feasible: Option<Box<FeasibleFn>>,
    reward: Option<Box<RewardFn>>,
    transition: Option<Arc<TransitionFn>>,
}

impl AdditiveMdpBuilder {
    pub fn x_grid(mut self, grid: Vec<f64>) -> Self {
        self.x_grid = Some(grid);
        self
    }

    pub fn chain(mut self, chain: MarkovChain) -> Self {
        self.chain = Some(chain);
        self
    }

    /// Conditional discount factors β(z, z') as a Z×Z table.
    pub fn discount(mut self, rows: Vec<Vec<f64>>) -> Self {
        self.discount = Some(rows);
        self
    }

    /// Constant discount factor shorthand.
    pub fn constant_discount(mut self, beta: f64, z_count: usize) -> Self {
        self.discount = Some(vec![vec![beta; z_count]; z_count]);
        self
    }

    pub fn feasible(mut self, f: impl Fn(f64, usize) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.feasible = Some(Box::new(f));
        self
    }

    pub fn reward(mut self, f: impl Fn(f64, usize, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.reward = Some(Box::new(f));
        self
    }

    pub fn transition(
        mut self,
        f: impl Fn(f64, usize, usize, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.transition = Some(Arc::new(f));
        self
    }

    pub fn build(self) -> Result<AdditiveMdp> {
        let x_grid = self
            .x_grid
            .ok_or_else(|| Error::Model("x grid not set".into()))?;
        validate_grid(&x_grid)?;
        let chain = self
            .chain
            .ok_or_else(|| Error::Model("Markov chain not set".into()))?;
        let z_count = chain.z_count();
        let discount = self
            .discount
            .ok_or_else(|| Error::Model("discount table not set".into()))?;
        if discount.len() != z_count || discount.iter().any(|row| row.len() != z_count) {
            return Err(Error::Model(format!(
                "discount table must be {z_count}x{z_count}"
            )));
        }
        for (z, row) in discount.iter().enumerate() {
            for (z_next, &b) in row.iter().enumerate() {
                if !b.is_finite() || b < 0.0 {
                    return Err(Error::Model(format!(
                        "discount β({z},{z_next}) invalid: {b}"
                    )));
                }
            }
        }
        let feasible = self
            .feasible
            .ok_or_else(|| Error::Model("feasible map not set".into()))?;
        let reward = self
            .reward
            .ok_or_else(|| Error::Model("reward map not set".into()))?;
        let transition = self
            .transition
            .ok_or_else(|| Error::Model("transition map not set".into()))?;

        let mut actions = Vec::with_capacity(x_grid.len());
        let mut rewards = Vec::with_capacity(x_grid.len());
        for &x in &x_grid {
            let mut per_z_actions = Vec::with_capacity(z_count);
            let mut per_z_rewards = Vec::with_capacity(z_count);
            for z in 0..z_count {
                let acts = feasible(x, z);
                if acts.is_empty() {
                    return Err(Error::Model(format!(
                        "feasible action set is empty at x = {x}, z = {z}"
                    )));
                }
                let mut rs = Vec::with_capacity(acts.len());
                for &a in &acts {
                    if !a.is_finite() {
                        return Err(Error::Model(format!(
                            "non-finite action {a} at x = {x}, z = {z}"
                        )));
                    }
                    let r = reward(x, z, a);
                    if !r.is_finite() {
                        return Err(Error::Model(format!(
                            "reward at feasible action is not finite: r({x}, {z}, {a}) = {r}"
                        )));
                    }
                    rs.push(r);
                    for z_next in 0..z_count {
                        let x_next = transition(x, z, z_next, a);
                        if !x_next.is_finite() {
                            return Err(Error::Model(format!(
                                "transition is not finite: g({x}, {z}, {z_next}, {a}) = {x_next}"
                            )));
                        }
                    }
                }
                per_z_actions.push(Arc::new(acts));
                per_z_rewards.push(rs);
            }
            actions.push(per_z_actions);
            rewards.push(per_z_rewards);
        }

        Ok(AdditiveMdp {
            x_grid: Arc::new(x_grid),
            chain,
            discount,
            transition,
            actions,
            rewards,
        })
    }
}

// ---------------------------------------------------------------------------
// Bellman sweeps
// ---------------------------------------------------------------------------

enum Mode<'a> {
    Unscaled,
    Scaled(&'a WeightFunction),
}

/// One full sweep of the (scaled) Bellman operator over the grid. Ties in
/// the action max go to the smallest action index. Returns the new value
/// table and the attaining action index per grid point.
fn bellman_sweep(
    mdp: &AdditiveMdp,
    v: &ValueFunction,
    mode: &Mode<'_>,
    counter: &mut ClampCounter,
) -> Result<(ValueFunction, Vec<usize>)> {
    if !std::ptr::eq(v.x_grid().as_ptr(), mdp.x_grid().as_ptr()) && v.x_grid() != mdp.x_grid() {
        return Err(Error::InvalidInput(
            "value function grid does not match the model grid".into(),
        ));
    }
    if v.z_count() != mdp.z_count() {
        return Err(Error::InvalidInput(
            "value function z count does not match the model".into(),
        ));
    }

    let z_count = mdp.z_count();
    let grid = mdp.x_grid();
    let mut out = Vec::with_capacity(grid.len() * z_count);
    let mut argmax = Vec::with_capacity(grid.len() * z_count);

    for (i, &x) in grid.iter().enumerate() {
        for z in 0..z_count {
            let acts = mdp.feasible_actions(i, z);
            let mut best = f64::NEG_INFINITY;
            let mut best_idx = 0usize;
            for (a_idx, &a) in acts.iter().enumerate() {
                let mut total = mdp.reward_at(i, z, a_idx);
                for z_next in 0..z_count {
                    let pb = mdp.chain().prob(z, z_next) * mdp.discount(z, z_next);
                    if pb == 0.0 {
                        continue;
                    }
                    let x_next = mdp.transition_value(x, z, z_next, a);
                    let continuation = match mode {
                        Mode::Unscaled => v.evaluate_counted(x_next, z_next, counter),
                        Mode::Scaled(weight) => {
                            weight.evaluate(x_next, z_next)
                                * v.evaluate_counted(x_next, z_next, counter)
                        }
                    };
                    total += pb * continuation;
                }
                let candidate = match mode {
                    Mode::Unscaled => total,
                    Mode::Scaled(weight) => total / weight.evaluate(x, z),
                };
                if !candidate.is_finite() {
                    return Err(Error::Model(format!(
                        "Bellman value is not finite at x = {x}, z = {z}, action = {a}"
                    )));
                }
                if candidate > best {
                    best = candidate;
                    best_idx = a_idx;
                }
            }
            out.push(best);
            argmax.push(best_idx);
        }
    }
    let vf = ValueFunction::new(mdp.x_grid_arc(), z_count, out)?;
    Ok((vf, argmax))
}

/// Bellman operator: at each grid point the max over feasible actions of
/// reward plus expected discounted continuation value.
pub fn bellman_apply(mdp: &AdditiveMdp, v: &ValueFunction) -> Result<ValueFunction> {
    let mut counter = ClampCounter::default();
    bellman_sweep(mdp, v, &Mode::Unscaled, &mut counter).map(|(vf, _)| vf)
}

/// Scaled Bellman operator: the Bellman operator conjugated by a positive
/// weight, acting on scaled functions. The weight is evaluated exactly at
/// the raw transition point, so beyond the grid the continuation value
/// extrapolates proportionally to the weight rather than as a constant.
pub fn scaled_bellman_apply(
    mdp: &AdditiveMdp,
    weight: &WeightFunction,
    v_scaled: &ValueFunction,
) -> Result<ValueFunction> {
    weight.validate_on_grid(mdp.x_grid(), mdp.z_count())?;
    let mut counter = ClampCounter::default();
    bellman_sweep(mdp, v_scaled, &Mode::Scaled(weight), &mut counter).map(|(vf, _)| vf)
}

// ---------------------------------------------------------------------------
// Coefficient matrix
// ---------------------------------------------------------------------------

/// Effective discount factors: `β̃(z,z') = β(z,z') · max over grid points x
/// and feasible actions a of κ(g(x,z,z',a), z') / κ(x, z)`.
///
/// The max runs over the grid; for weight families whose ratio is monotone
/// in x (all shipped families along affine transitions) this equals the
/// continuum sup when the endpoints are in the grid.
pub fn compute_tilde_beta(mdp: &AdditiveMdp, weight: &WeightFunction) -> Result<Vec<Vec<f64>>> {
    weight.validate_on_grid(mdp.x_grid(), mdp.z_count())?;
    let z_count = mdp.z_count();
    let grid = mdp.x_grid();
    let mut tilde = vec![vec![0.0; z_count]; z_count];
    for (z, row) in tilde.iter_mut().enumerate() {
        for (z_next, entry) in row.iter_mut().enumerate() {
            let beta = mdp.discount(z, z_next);
            if beta == 0.0 {
                continue;
            }
            let mut ratio_max: f64 = 0.0;
            for (i, &x) in grid.iter().enumerate() {
                let k_here = weight.evaluate(x, z);
                for &a in mdp.feasible_actions(i, z) {
                    let x_next = mdp.transition_value(x, z, z_next, a);
                    let ratio = weight.evaluate(x_next, z_next) / k_here;
                    if !ratio.is_finite() || ratio < 0.0 {
                        return Err(Error::Model(format!(
                            "weight ratio invalid at x = {x}, z = {z}, z' = {z_next}, a = {a}: {ratio}"
                        )));
                    }
                    ratio_max = ratio_max.max(ratio);
                }
            }
            *entry = beta * ratio_max;
        }
    }
    Ok(tilde)
}

/// Coefficient matrix `B(z,z') = P(z,z') · β̃(z,z')`.
pub fn build_b(chain: &MarkovChain, tilde_beta: &[Vec<f64>]) -> Result<NonnegativeMatrix> {
    let z = chain.z_count();
    if tilde_beta.len() != z || tilde_beta.iter().any(|row| row.len() != z) {
        return Err(Error::InvalidInput(format!(
            "effective discount table must be {z}x{z}"
        )));
    }
    NonnegativeMatrix::from_fn(z, |i, j| chain.prob(i, j) * tilde_beta[i][j])
}

// ---------------------------------------------------------------------------
// Condition verification
// ---------------------------------------------------------------------------

/// Worst violations found when spot-checking monotonicity and discounting
/// of the scaled operator against the coefficient matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlackwellReport {
    pub samples: usize,
    pub worst_monotonicity_violation: f64,
    pub worst_discounting_violation: f64,
}

/// Worst entrywise excess of `d(T̃ṽ1, T̃ṽ2)` over `B·d(ṽ1, ṽ2)` across
/// random pairs (unit weight: the scaled operator contracts in plain sup
/// components).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerovReport {
    pub samples: usize,
    pub worst_excess: f64,
}

fn random_value_function(mdp: &AdditiveMdp, rng: &mut impl Rng, lo: f64, hi: f64) -> ValueFunction {
    let n = mdp.x_grid().len() * mdp.z_count();
    let values: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    ValueFunction::new(mdp.x_grid_arc(), mdp.z_count(), values)
        .expect("finite samples always build")
}

fn monotonicity_violation(
    mdp: &AdditiveMdp,
    weight: &WeightFunction,
    lower: &ValueFunction,
    upper: &ValueFunction,
) -> Result<f64> {
    let t_lower = scaled_bellman_apply(mdp, weight, lower)?;
    let t_upper = scaled_bellman_apply(mdp, weight, upper)?;
    let mut worst: f64 = 0.0;
    for i in 0..mdp.x_grid().len() {
        for z in 0..mdp.z_count() {
            worst = worst.max(t_lower.get(i, z) - t_upper.get(i, z));
        }
    }
    Ok(worst)
}

fn discounting_violation(
    mdp: &AdditiveMdp,
    weight: &WeightFunction,
    b: &NonnegativeMatrix,
    v: &ValueFunction,
    c: &[f64],
) -> Result<f64> {
    let t_v = scaled_bellman_apply(mdp, weight, v)?;
    let t_shifted = scaled_bellman_apply(mdp, weight, &v.add_per_state(c)?)?;
    let bc = b.matvec(c);
    let mut worst: f64 = 0.0;
    for i in 0..mdp.x_grid().len() {
        for (z, &bcz) in bc.iter().enumerate() {
            worst = worst.max(t_shifted.get(i, z) - t_v.get(i, z) - bcz);
        }
    }
    Ok(worst)
}

/// Spot-checks the two conditions that make the scaled operator a
/// matrix-coefficient contraction: monotonicity (`u ≤ v ⇒ T̃u ≤ T̃v`) and
/// discounting (`T̃(ṽ+c) ≤ T̃ṽ + Bc`), on random samples. The discretized
/// operator satisfies both exactly, so worst violations should sit at
/// floating-point roundoff.
pub fn verify_blackwell(
    mdp: &AdditiveMdp,
    weight: &WeightFunction,
    sample_count: usize,
    rng_seed: u64,
) -> Result<BlackwellReport> {
    let tilde = compute_tilde_beta(mdp, weight)?;
    let b = build_b(mdp.chain(), &tilde)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut worst_mono: f64 = 0.0;
    let mut worst_disc: f64 = 0.0;
    for _ in 0..sample_count {
        let v = random_value_function(mdp, &mut rng, -1.0, 1.0);
        let gap = random_value_function(mdp, &mut rng, 0.0, 1.0);
        let u = ValueFunction::new(
            mdp.x_grid_arc(),
            mdp.z_count(),
            (0..mdp.x_grid().len() * mdp.z_count())
                .map(|idx| {
                    let (i, z) = (idx / mdp.z_count(), idx % mdp.z_count());
                    v.get(i, z) - gap.get(i, z)
                })
                .collect(),
        )?;
        worst_mono = worst_mono.max(monotonicity_violation(mdp, weight, &u, &v)?);

        let c: Vec<f64> = (0..mdp.z_count())
            .map(|_| rng.random_range(0.0..1.0))
            .collect();
        worst_disc = worst_disc.max(discounting_violation(mdp, weight, &b, &v, &c)?);
    }
    Ok(BlackwellReport {
        samples: sample_count,
        worst_monotonicity_violation: worst_mono,
        worst_discounting_violation: worst_disc,
    })
}

/// Spot-checks `d(T̃ṽ1, T̃ṽ2) ≤ B · d(ṽ1, ṽ2)` entrywise on random pairs.
pub fn verify_perov_inequality(
    mdp: &AdditiveMdp,
    weight: &WeightFunction,
    b: &NonnegativeMatrix,
    sample_count: usize,
    rng_seed: u64,
) -> Result<PerovReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let unit = WeightFunction::Unit;
    let mut worst: f64 = 0.0;
    for _ in 0..sample_count {
        let v1 = random_value_function(mdp, &mut rng, -1.0, 1.0);
        let v2 = random_value_function(mdp, &mut rng, -1.0, 1.0);
        let lhs = vector_distance(
            &scaled_bellman_apply(mdp, weight, &v1)?,
            &scaled_bellman_apply(mdp, weight, &v2)?,
            &unit,
        )?;
        let rhs = b.matvec(vector_distance(&v1, &v2, &unit)?.components());
        for (l, r) in lhs.components().iter().zip(&rhs) {
            worst = worst.max(l - r);
        }
    }
    Ok(PerovReport {
        samples: sample_count,
        worst_excess: worst,
    })
}

// ---------------------------------------------------------------------------
// Solver
// ---------------------------------------------------------------------------

/// Iteration record of a solve: per-iteration distances between successive
/// iterates, the fitted decay rate, the certified a-posteriori error bound,
/// the coefficient matrix with its certificate, and extrapolation counters.
#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub converged: bool,
    pub distance_trace: Vec<VectorDistance>,
    /// Least-squares slope of log sup-distance against iteration index over
    /// the last half of the trace; `None` when the trace is too short or
    /// hits exact zero.
    pub fitted_rate: Option<f64>,
    /// Certified entrywise upper bound on the distance to the fixed point.
    pub aposteriori_bound: Vec<f64>,
    pub coefficient_matrix: NonnegativeMatrix,
    pub certificate: SpectralCertificate,
    pub clamped_below: u64,
    pub clamped_above: u64,
    pub requested_tol: f64,
}

impl SolveReport {
    pub fn aposteriori_sup(&self) -> f64 {
        self.aposteriori_bound.iter().cloned().fold(0.0, f64::max)
    }
}

/// A solved model: the fixed point of the scaled operator, the unscaled
/// value function `v = κ·ṽ`, and the iteration report.
#[derive(Debug, Clone)]
pub struct PerovSolution {
    pub scaled: ValueFunction,
    pub value: ValueFunction,
    pub report: SolveReport,
}

fn fit_decay_rate(sups: &[f64]) -> Option<f64> {
    let n = sups.len();
    if n < 2 {
        return None;
    }
    let start = (n / 2).min(n - 2);
    let window = &sups[start..];
    if window.iter().any(|&s| s <= 0.0) {
        return None;
    }
    let m = window.len() as f64;
    let mean_k = (0..window.len()).map(|k| k as f64).sum::<f64>() / m;
    let mean_y = window.iter().map(|s| s.ln()).sum::<f64>() / m;
    let mut cov = 0.0;
    let mut var = 0.0;
    for (k, s) in window.iter().enumerate() {
        let dk = k as f64 - mean_k;
        cov += dk * (s.ln() - mean_y);
        var += dk * dk;
    }
    (var > 0.0).then(|| cov / var)
}

/// Iterates the scaled Bellman operator to its fixed point.
///
/// Refuses (certificate attached) unless the coefficient matrix built from
/// the weight is a certified contraction. Stops when the certified
/// a-posteriori bound `(I-B)^{-1} B · d(ṽ_k, ṽ_{k+1})` drops below `tol` in
/// sup norm, which bounds the true distance to the fixed point. If
/// `max_iter` is exhausted first, no fixed point is claimed and the report
/// travels inside the error.
///
/// ```
/// use perov_dp::mdp::{perov_solve, AdditiveMdp};
/// use perov_dp::spectral::MarkovChain;
/// use perov_dp::vmetric::WeightFunction;
///
/// // Stay-put model with a single action: v*(x) = x² / (1 - β).
/// let mdp = AdditiveMdp::builder()
///     .x_grid(vec![1.0, 2.0, 3.0])
///     .chain(MarkovChain::new(&[vec![1.0]])?)
///     .discount(vec![vec![0.5]])
///     .feasible(|_x, _z| vec![0.0])
///     .reward(|x, _z, _a| x * x)
///     .transition(|x, _z, _z_next, _a| x)
///     .build()?;
/// let sol = perov_solve(&mdp, &WeightFunction::Unit, &mdp.zero_value(), 1e-10, 100)?;
/// assert!((sol.value.get(0, 0) - 2.0).abs() < 1e-8);
/// # Ok::<(), perov_dp::Error>(())
/// ```
pub fn perov_solve(
    mdp: &AdditiveMdp,
    weight: &WeightFunction,
    v0: &ValueFunction,
    tol: f64,
    max_iter: usize,
) -> Result<PerovSolution> {
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!(
            "tol must be positive, got {tol}"
        )));
    }
    weight.validate_on_grid(mdp.x_grid(), mdp.z_count())?;

    let tilde = compute_tilde_beta(mdp, weight)?;
    let b = build_b(mdp.chain(), &tilde)?;
    let certificate = spectral_radius(&b, DEFAULT_SPECTRAL_TOL)?;
    if !certificate.is_contraction() {
        return Err(Error::SpectralRefusal {
            certificate: Box::new(certificate),
        });
    }

    // Boundedness hypothesis of the scaled problem: sup |r|/κ on the grid.
    let mut scaled_reward_sup: f64 = 0.0;
    for (i, &x) in mdp.x_grid().iter().enumerate() {
        for z in 0..mdp.z_count() {
            let k = weight.evaluate(x, z);
            for a_idx in 0..mdp.feasible_actions(i, z).len() {
                scaled_reward_sup = scaled_reward_sup.max(mdp.reward_at(i, z, a_idx).abs() / k);
            }
        }
    }
    if !scaled_reward_sup.is_finite() {
        return Err(Error::Model(
            "scaled reward sup |r|/κ is not finite on the grid".into(),
        ));
    }

    let neumann = NeumannOperator::new(&b, &certificate)?;
    let unit = WeightFunction::Unit;
    let inner_tol = (tol * 1e-2).max(f64::MIN_POSITIVE);

    let mut counter = ClampCounter::default();
    let mut current = v0.clone();
    let mut trace: Vec<VectorDistance> = Vec::new();
    let mut sups: Vec<f64> = Vec::new();
    let mut aposteriori = vec![f64::INFINITY; mdp.z_count()];
    let mut converged = false;
    let mut iterations = 0usize;

    for _ in 0..max_iter {
        let (next, _) = bellman_sweep(mdp, &current, &Mode::Scaled(weight), &mut counter)?;
        iterations += 1;
        let delta = vector_distance(&current, &next, &unit)?;
        sups.push(sup_collapse(&delta));
        let b_delta = b.matvec(delta.components());
        let envelope = neumann.bound_or_exceeds(&b_delta, inner_tol, tol)?;
        trace.push(delta);
        current = next;
        aposteriori = envelope;
        if aposteriori.iter().cloned().fold(0.0, f64::max) <= tol {
            converged = true;
            break;
        }
    }

    let report = SolveReport {
        iterations,
        converged,
        distance_trace: trace,
        fitted_rate: fit_decay_rate(&sups),
        aposteriori_bound: aposteriori,
        coefficient_matrix: b,
        certificate,
        clamped_below: counter.below,
        clamped_above: counter.above,
        requested_tol: tol,
    };

    if !converged {
        return Err(Error::NotConverged {
            report: Box::new(report),
        });
    }

    let value = current.scale_by_weight(weight)?;
    Ok(PerovSolution {
        scaled: current,
        value,
        report,
    })
}

// ---------------------------------------------------------------------------
// Policy extraction
// ---------------------------------------------------------------------------

/// Greedy policy at a value function: per grid point, the action attaining
/// the Bellman max, ties to the smallest action index.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    z_count: usize,
    action_index: Vec<usize>,
    action: Vec<f64>,
}

impl Policy {
    pub fn action_index(&self, i: usize, z: usize) -> usize {
        self.action_index[i * self.z_count + z]
    }

    pub fn action(&self, i: usize, z: usize) -> f64 {
        self.action[i * self.z_count + z]
    }
}

pub fn extract_policy(mdp: &AdditiveMdp, v: &ValueFunction) -> Result<Policy> {
    let mut counter = ClampCounter::default();
    let (_, argmax) = bellman_sweep(mdp, v, &Mode::Unscaled, &mut counter)?;
    let z_count = mdp.z_count();
    let action = argmax
        .iter()
        .enumerate()
        .map(|(idx, &a_idx)| {
            let (i, z) = (idx / z_count, idx % z_count);
            mdp.feasible_actions(i, z)[a_idx]
        })
        .collect();
    Ok(Policy {
        z_count,
        action_index: argmax,
        action,
    })
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

//! Vector-valued metrics on grids of value functions: componentwise
//! weighted sup distances and their scalar collapse.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::ValueFunction;

// ---------------------------------------------------------------------------
// WeightFunction
// ---------------------------------------------------------------------------

/// Positive weight `κ(x, z)` used to scale value functions.
///
/// The shipped families are monotone in the ratio
/// `κ(x', z') / κ(x, z)` along affine transitions, which is what makes grid
/// suprema of that ratio exact when the grid endpoints are included. Custom
/// weights must satisfy the same ratio-monotonicity for the coefficient
/// matrix built from a grid to dominate its continuum counterpart.
#[derive(Clone)]
pub enum WeightFunction {
    /// `κ ≡ 1`: plain (unweighted) sup norm.
    Unit,
    /// `κ(x, z) = x + offset` with `offset > 0`.
    Affine { offset: f64 },
    /// `κ(x, z) = x^exponent` with `exponent ∈ (0, 1]`; requires `x > 0`
    /// on the grid.
    Power { exponent: f64 },
    /// Arbitrary positive weight.
    Custom(Arc<dyn Fn(f64, usize) -> f64 + Send + Sync>),
}

impl WeightFunction {
    #[inline]
    pub fn evaluate(&self, x: f64, z: usize) -> f64 {
        match self {
            WeightFunction::Unit => 1.0,
            WeightFunction::Affine { offset } => x + offset,
            WeightFunction::Power { exponent } => x.powf(*exponent),
            WeightFunction::Custom(f) => f(x, z),
        }
    }

    /// Checks strict positivity (and finiteness) at every grid point.
    pub fn validate_on_grid(&self, x_grid: &[f64], z_count: usize) -> Result<()> {
        for (i, &x) in x_grid.iter().enumerate() {
            for z in 0..z_count {
                let k = self.evaluate(x, z);
                if !(k > 0.0) || !k.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "weight must be strictly positive and finite; got {k} at grid point {i} (x = {x}), z = {z}"
                    )));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Debug for WeightFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightFunction::Unit => write!(f, "Unit"),
            WeightFunction::Affine { offset } => write!(f, "Affine {{ offset: {offset} }}"),
            WeightFunction::Power { exponent } => write!(f, "Power {{ exponent: {exponent} }}"),
            WeightFunction::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

// ---------------------------------------------------------------------------
// VectorDistance
// ---------------------------------------------------------------------------

/// One nonnegative distance component per exogenous state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorDistance(pub Vec<f64>);

impl VectorDistance {
    pub fn components(&self) -> &[f64] {
        &self.0
    }

    pub fn sup(&self) -> f64 {
        self.0.iter().cloned().fold(0.0, f64::max)
    }

    /// Entrywise `self ≤ other + slack`.
    pub fn dominated_by(&self, other: &[f64], slack: f64) -> bool {
        self.0.iter().zip(other).all(|(a, b)| *a <= b + slack)
    }
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Componentwise weighted sup distance:
/// `d_z(v1, v2) = max over grid x of |v1(x,z) - v2(x,z)| / κ(x,z)`.
///
/// The sup over continuous x is realized as a max over the grid; both
/// functions are piecewise linear in x with the same nodes, so the sup of
/// their difference is attained at a node and the grid max is exact.
pub fn vector_distance(
    v1: &ValueFunction,
    v2: &ValueFunction,
    weight: &WeightFunction,
) -> Result<VectorDistance> {
    if !v1.same_grid(v2) {
        return Err(Error::InvalidInput(
            "value functions are defined on different grids".into(),
        ));
    }
    let x_grid = v1.x_grid();
    let z_count = v1.z_count();
    let mut components = vec![0.0; z_count];
    for (i, &x) in x_grid.iter().enumerate() {
        for (z, comp) in components.iter_mut().enumerate() {
            let k = weight.evaluate(x, z);
            if !(k > 0.0) || !k.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "weight must be strictly positive and finite; got {k} at x = {x}, z = {z}"
                )));
            }
            let diff = (v1.get(i, z) - v2.get(i, z)).abs() / k;
            if !diff.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "non-finite distance component at x = {x}, z = {z}"
                )));
            }
            if diff > *comp {
                *comp = diff;
            }
        }
    }
    Ok(VectorDistance(components))
}

/// Collapses a vector distance to a scalar: the max component.
pub fn sup_collapse(d: &VectorDistance) -> f64 {
    d.sup()
}

/// Weighted sup norm `‖v‖_κ = sup_z sup_x |v(x,z)| / κ(x,z)`.
pub fn weighted_norm(v: &ValueFunction, weight: &WeightFunction) -> Result<f64> {
    let zero = ValueFunction::constant(v.x_grid_arc(), v.z_count(), 0.0)?;
    Ok(sup_collapse(&vector_distance(v, &zero, weight)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn grid(points: &[f64]) -> Arc<Vec<f64>> {
        Arc::new(points.to_vec())
    }

    #[test]
    fn identical_functions_have_zero_distance() {
        let g = grid(&[1.0, 2.0, 3.0]);
        let v = ValueFunction::from_fn(g, 2, |x, z| x * (z as f64 + 1.0)).unwrap();
        let d = vector_distance(&v, &v, &WeightFunction::Unit).unwrap();
        assert_eq!(d.components(), &[0.0, 0.0]);
    }

    #[test]
    fn shifting_by_weight_times_constant_recovers_the_constant() {
        let g = grid(&[0.5, 1.0, 2.0, 4.0]);
        let kappa = WeightFunction::Affine { offset: 0.25 };
        let c = [0.0, 1.5, 0.75];
        let v1 = ValueFunction::from_fn(g.clone(), 3, |x, z| x + 0.1 * z as f64).unwrap();
        let v2 = ValueFunction::from_fn(g.clone(), 3, |x, z| {
            v1.get(g.iter().position(|&p| p == x).unwrap(), z) + kappa.evaluate(x, z) * c[z]
        })
        .unwrap();
        let d = vector_distance(&v1, &v2, &kappa).unwrap();
        for (got, want) in d.components().iter().zip(&c) {
            // (v + κc - v) / κ cancels κ exactly up to rounding.
            assert!((got - want).abs() <= 1e-14, "{got} vs {want}");
        }
    }

    #[test]
    fn distance_matches_per_point_enumeration() {
        let g = grid(&[0.1, 0.7, 1.3, 2.9, 4.2]);
        let v1 = ValueFunction::from_fn(g.clone(), 2, |x, z| (x * 1.7 + z as f64).sin()).unwrap();
        let v2 = ValueFunction::from_fn(g.clone(), 2, |x, z| (x - 0.3 * z as f64).cos()).unwrap();
        let kappa = WeightFunction::Affine { offset: 1.0 };
        let d = vector_distance(&v1, &v2, &kappa).unwrap();

        for z in 0..2 {
            let brute = g
                .iter()
                .enumerate()
                .map(|(i, &x)| (v1.get(i, z) - v2.get(i, z)).abs() / (x + 1.0))
                .fold(0.0, f64::max);
            assert_eq!(d.components()[z], brute);
        }
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let v1 = ValueFunction::from_fn(grid(&[1.0, 2.0]), 1, |x, _| x).unwrap();
        let v2 = ValueFunction::from_fn(grid(&[1.0, 3.0]), 1, |x, _| x).unwrap();
        assert!(vector_distance(&v1, &v2, &WeightFunction::Unit).is_err());
    }

    #[test]
    fn sup_collapse_examples() {
        assert_eq!(sup_collapse(&VectorDistance(vec![0.0, 0.0])), 0.0);
        assert_eq!(sup_collapse(&VectorDistance(vec![1.0, 3.0, 2.0])), 3.0);
    }

    #[test]
    fn collapse_equals_direct_double_sup() {
        let g = grid(&[0.2, 1.1, 3.4]);
        let v1 = ValueFunction::from_fn(g.clone(), 3, |x, z| x + z as f64 * 0.5).unwrap();
        let v2 = ValueFunction::from_fn(g.clone(), 3, |x, z| x * x - z as f64).unwrap();
        let kappa = WeightFunction::Affine { offset: 0.5 };

        let collapsed = sup_collapse(&vector_distance(&v1, &v2, &kappa).unwrap());
        let mut direct: f64 = 0.0;
        for (i, &x) in g.iter().enumerate() {
            for z in 0..3 {
                direct = direct.max((v1.get(i, z) - v2.get(i, z)).abs() / (x + 0.5));
            }
        }
        assert_eq!(collapsed, direct);
    }

    #[test]
    fn weighted_norm_examples() {
        let g = grid(&[1.0, 2.0, 4.0]);
        let zero = ValueFunction::constant(g.clone(), 2, 0.0).unwrap();
        assert_eq!(weighted_norm(&zero, &WeightFunction::Unit).unwrap(), 0.0);

        // v = κ normalizes to 1.
        let kappa = WeightFunction::Affine { offset: 2.0 };
        let v = ValueFunction::from_fn(g.clone(), 2, |x, _| x + 2.0).unwrap();
        assert!((weighted_norm(&v, &kappa).unwrap() - 1.0).abs() < 1e-15);

        // v(w, z) = w with κ = w + 1 on {1, 2, 4}: ratios 1/2, 2/3, 4/5.
        let v = ValueFunction::from_fn(g, 1, |x, _| x).unwrap();
        let kappa = WeightFunction::Affine { offset: 1.0 };
        assert_eq!(weighted_norm(&v, &kappa).unwrap(), 0.8);
    }

    #[test]
    fn non_finite_values_are_rejected_at_construction() {
        let g = grid(&[1.0, 2.0]);
        assert!(ValueFunction::from_fn(g.clone(), 1, |x, _| (x - 1.0).ln()).is_err());
        assert!(ValueFunction::from_fn(g, 1, |_, _| f64::NAN).is_err());
    }
}

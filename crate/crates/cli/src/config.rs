//! Config file schema and conversion into library models.
//!
//! Configs are TOML. The full schema with defaults is documented in the
//! repository README; the three shipped files under `configs/` are complete
//! working examples.

use serde::{Deserialize, Serialize};

use perov_dp::mdp::AdditiveMdp;
use perov_dp::savings::{geometric_grid, share_grid, uniform_grid, SavingsParams, Utility};
use perov_dp::spectral::MarkovChain;
use perov_dp::vmetric::WeightFunction;

use crate::CliError;

pub const CONFIG_SCHEMA: &str = "perov-dp.config/v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub schema: String,
    pub model: ModelSection,
    #[serde(default)]
    pub savings: Option<SavingsSection>,
    #[serde(default, rename = "abstract")]
    pub abstract_mdp: Option<AbstractSection>,
    #[serde(default)]
    pub weight: WeightSection,
    #[serde(default)]
    pub solver: SolverSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Savings,
    Abstract,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SavingsSection {
    /// Row-stochastic transition matrix of the exogenous chain.
    pub transition: Vec<Vec<f64>>,
    /// Gross returns R(z, z').
    pub returns: Vec<Vec<f64>>,
    /// Non-financial income y(z).
    pub income: Vec<f64>,
    /// Discount factor: scalar or full Z×Z table β(z, z').
    pub discount: ScalarOrMatrix,
    pub utility: UtilitySection,
    #[serde(default)]
    pub wealth_grid: GridSection,
    #[serde(default)]
    pub shares: SharesSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarOrMatrix {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

impl ScalarOrMatrix {
    pub fn to_table(&self, z: usize) -> Vec<Vec<f64>> {
        match self {
            ScalarOrMatrix::Scalar(b) => vec![vec![*b; z]; z],
            ScalarOrMatrix::Matrix(rows) => rows.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct UtilitySection {
    pub kind: UtilityKind,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub points: Option<Vec<(f64, f64)>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UtilityKind {
    Crra,
    Tabulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default = "default_w_min")]
    pub min: f64,
    #[serde(default = "default_w_max")]
    pub max: f64,
    #[serde(default = "default_w_count")]
    pub count: usize,
    #[serde(default)]
    pub spacing: GridSpacing,
    /// Explicit grid; overrides the generated one.
    #[serde(default)]
    pub points: Option<Vec<f64>>,
}

fn default_w_min() -> f64 {
    1e-3
}
fn default_w_max() -> f64 {
    1e3
}
fn default_w_count() -> usize {
    300
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            min: default_w_min(),
            max: default_w_max(),
            count: default_w_count(),
            spacing: GridSpacing::Geometric,
            points: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GridSpacing {
    #[default]
    Geometric,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SharesSection {
    #[serde(default = "default_share_count")]
    pub count: usize,
    #[serde(default)]
    pub points: Option<Vec<f64>>,
}

fn default_share_count() -> usize {
    101
}

impl Default for SharesSection {
    fn default() -> Self {
        Self {
            count: default_share_count(),
            points: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbstractSection {
    pub x_grid: Vec<f64>,
    /// Row-stochastic transition matrix of the exogenous chain.
    pub transition_matrix: Vec<Vec<f64>>,
    /// Discount table β(z, z').
    pub discount: Vec<Vec<f64>>,
    /// Global action list; feasible sets index into it.
    pub actions: Vec<f64>,
    /// Optional feasible action indices per (x, z); defaults to all actions.
    #[serde(default)]
    pub feasible: Option<Vec<Vec<Vec<usize>>>>,
    /// Reward table `r[x][z][a]`.
    pub reward: Vec<Vec<Vec<f64>>>,
    /// Law of motion `g[x][z][z'][a]`.
    pub law_of_motion: Vec<Vec<Vec<Vec<f64>>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct WeightSection {
    #[serde(default)]
    pub kind: WeightKind,
    /// Offset b for the affine weight.
    #[serde(default)]
    pub offset: Option<f64>,
    /// Exponent for the power weight; defaults to 1 - gamma under CRRA.
    #[serde(default)]
    pub exponent: Option<f64>,
    /// Margin for the automatic offset search.
    #[serde(default = "default_target_margin")]
    pub target_margin: f64,
}

fn default_target_margin() -> f64 {
    0.02
}

impl Default for WeightSection {
    fn default() -> Self {
        Self {
            kind: WeightKind::Auto,
            offset: None,
            exponent: None,
            target_margin: default_target_margin(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WeightKind {
    #[default]
    Auto,
    Affine,
    Power,
    Unit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct SolverSection {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Sample count for the monotonicity/discounting and contraction
    /// inequality spot checks included in the solve report (0 disables).
    #[serde(default)]
    pub check_samples: usize,
    /// Include the zero-income CRRA homogeneity comparison in the report.
    #[serde(default)]
    pub oracle_comparison: bool,
}

fn default_tol() -> f64 {
    1e-8
}
fn default_max_iter() -> usize {
    20_000
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            tol: default_tol(),
            max_iter: default_max_iter(),
            check_samples: 0,
            oracle_comparison: false,
        }
    }
}

// ---------------------------------------------------------------------------
// Loading and conversion
// ---------------------------------------------------------------------------

impl ModelConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let config: ModelConfig =
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if config.schema != CONFIG_SCHEMA {
            return Err(CliError::Config(format!(
                "unsupported config schema {:?}, expected {CONFIG_SCHEMA:?}",
                config.schema
            )));
        }
        match config.model.kind {
            ModelKind::Savings if config.savings.is_none() => {
                return Err(CliError::Config(
                    "model.kind = \"savings\" requires a [savings] section".into(),
                ))
            }
            ModelKind::Abstract if config.abstract_mdp.is_none() => {
                return Err(CliError::Config(
                    "model.kind = \"abstract\" requires an [abstract] section".into(),
                ))
            }
            _ => {}
        }
        Ok(config)
    }

    pub fn savings_params(&self) -> Result<SavingsParams, CliError> {
        let section = self
            .savings
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [savings] section".into()))?;
        let chain = MarkovChain::new(&section.transition)
            .map_err(|e| CliError::Config(format!("savings.transition: {e}")))?;
        let z = chain.z_count();

        let utility = match section.utility.kind {
            UtilityKind::Crra => {
                let gamma = section.utility.gamma.ok_or_else(|| {
                    CliError::Config("savings.utility: CRRA requires `gamma`".into())
                })?;
                Utility::Crra { gamma }
            }
            UtilityKind::Tabulated => {
                let points = section.utility.points.clone().ok_or_else(|| {
                    CliError::Config("savings.utility: tabulated requires `points`".into())
                })?;
                Utility::Tabulated { points }
            }
        };

        let w_grid = match &section.wealth_grid.points {
            Some(points) => points.clone(),
            None => {
                let g = &section.wealth_grid;
                match g.spacing {
                    GridSpacing::Geometric => geometric_grid(g.min, g.max, g.count)
                        .map_err(|e| CliError::Config(format!("savings.wealth_grid: {e}")))?,
                    GridSpacing::Uniform => uniform_grid(g.min, g.max, g.count)
                        .map_err(|e| CliError::Config(format!("savings.wealth_grid: {e}")))?,
                }
            }
        };
        let c_shares = match &section.shares.points {
            Some(points) => points.clone(),
            None => share_grid(section.shares.count)
                .map_err(|e| CliError::Config(format!("savings.shares: {e}")))?,
        };

        let params = SavingsParams {
            chain,
            returns: section.returns.clone(),
            income: section.income.clone(),
            discount: section.discount.to_table(z),
            utility,
            w_grid,
            c_shares,
        };
        params
            .validate()
            .map_err(|e| CliError::Config(format!("savings: {e}")))?;
        Ok(params)
    }

    pub fn abstract_mdp(&self) -> Result<AdditiveMdp, CliError> {
        let section = self
            .abstract_mdp
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [abstract] section".into()))?;
        let chain = MarkovChain::new(&section.transition_matrix)
            .map_err(|e| CliError::Config(format!("abstract.transition_matrix: {e}")))?;
        let z = chain.z_count();
        let nx = section.x_grid.len();
        let na = section.actions.len();
        if na == 0 {
            return Err(CliError::Config("abstract.actions must be nonempty".into()));
        }

        let check_shape = |name: &str, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(CliError::Config(format!(
                    "abstract.{name}: expected shape [{nx}][{z}]... matching x_grid, states, and actions"
                )))
            }
        };
        check_shape(
            "reward",
            section.reward.len() == nx
                && section
                    .reward
                    .iter()
                    .all(|per_z| per_z.len() == z && per_z.iter().all(|r| r.len() == na)),
        )?;
        check_shape(
            "law_of_motion",
            section.law_of_motion.len() == nx
                && section.law_of_motion.iter().all(|per_z| {
                    per_z.len() == z
                        && per_z
                            .iter()
                            .all(|per_zn| per_zn.len() == z && per_zn.iter().all(|g| g.len() == na))
                }),
        )?;
        if let Some(feasible) = &section.feasible {
            check_shape(
                "feasible",
                feasible.len() == nx && feasible.iter().all(|per_z| per_z.len() == z),
            )?;
            for per_z in feasible {
                for idxs in per_z {
                    if idxs.iter().any(|&a| a >= na) {
                        return Err(CliError::Config(format!(
                            "abstract.feasible: action index out of range (have {na} actions)"
                        )));
                    }
                }
            }
        }

        let x_grid = section.x_grid.clone();
        let actions = section.actions.clone();
        let feasible_table = section.feasible.clone();
        let reward_table = section.reward.clone();
        let motion_table = section.law_of_motion.clone();

        let grid_for_feasible = x_grid.clone();
        let actions_for_feasible = actions.clone();
        let grid_for_reward = x_grid.clone();
        let actions_for_reward = actions.clone();
        let grid_for_motion = x_grid.clone();
        let actions_for_motion = actions.clone();

        // Tables are indexed by position; closures recover indices by exact
        // equality, which is sound because callers only pass grid points and
        // feasible actions back in. A failed lookup surfaces as NaN and is
        // rejected by model validation.
        let index_of = |haystack: &[f64], needle: f64| -> Option<usize> {
            haystack.iter().position(|&v| v == needle)
        };

        AdditiveMdp::builder()
            .x_grid(x_grid)
            .chain(chain)
            .discount(section.discount.clone())
            .feasible(move |x, z_state| {
                let Some(i) = index_of(&grid_for_feasible, x) else {
                    return vec![];
                };
                match &feasible_table {
                    Some(table) => table[i][z_state]
                        .iter()
                        .map(|&a| actions_for_feasible[a])
                        .collect(),
                    None => actions_for_feasible.clone(),
                }
            })
            .reward(move |x, z_state, a| {
                match (
                    index_of(&grid_for_reward, x),
                    index_of(&actions_for_reward, a),
                ) {
                    (Some(i), Some(ai)) => reward_table[i][z_state][ai],
                    _ => f64::NAN,
                }
            })
            .transition(move |x, z_state, z_next, a| {
                match (
                    index_of(&grid_for_motion, x),
                    index_of(&actions_for_motion, a),
                ) {
                    (Some(i), Some(ai)) => motion_table[i][z_state][z_next][ai],
                    _ => f64::NAN,
                }
            })
            .build()
            .map_err(|e| CliError::Config(format!("abstract model: {e}")))
    }

    /// Resolve the weight function for solving. For the automatic kind the
    /// caller must run the offset search (savings only); this returns the
    /// explicitly configured weights.
    pub fn explicit_weight(&self) -> Result<Option<WeightFunction>, CliError> {
        match self.weight.kind {
            WeightKind::Auto => Ok(None),
            WeightKind::Unit => Ok(Some(WeightFunction::Unit)),
            WeightKind::Affine => {
                let offset = self.weight.offset.ok_or_else(|| {
                    CliError::Config("weight.kind = \"affine\" requires `offset`".into())
                })?;
                if !(offset > 0.0) {
                    return Err(CliError::Config(format!(
                        "weight.offset must be positive, got {offset}"
                    )));
                }
                Ok(Some(WeightFunction::Affine { offset }))
            }
            WeightKind::Power => {
                let exponent = match self.weight.exponent {
                    Some(e) => e,
                    None => {
                        let gamma = self
                            .savings
                            .as_ref()
                            .and_then(|s| s.utility.gamma)
                            .ok_or_else(|| {
                                CliError::Config(
                                    "weight.kind = \"power\" requires `exponent` (or CRRA gamma to default to 1 - gamma)"
                                        .into(),
                                )
                            })?;
                        1.0 - gamma
                    }
                };
                if !(exponent > 0.0 && exponent <= 1.0) {
                    return Err(CliError::Config(format!(
                        "weight.exponent must lie in (0, 1], got {exponent}"
                    )));
                }
                Ok(Some(WeightFunction::Power { exponent }))
            }
        }
    }

    pub fn crra_gamma(&self) -> Option<f64> {
        self.savings.as_ref().and_then(|s| match s.utility.kind {
            UtilityKind::Crra => s.utility.gamma,
            UtilityKind::Tabulated => None,
        })
    }
}

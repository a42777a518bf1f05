//! Design, estimation and optimization for multi-factor randomized experiments.
//!
//! A [`FactorSpace`] enumerates every policy variant. A [`Design`] selects the
//! arms to test. Units are randomized with [`randomize`], main and
//! heterogeneous effects are fitted by least squares, and the fitted model is
//! used to pick the best variant overall or per unit. Holdout and ERUPT
//! evaluations check that the chosen policies actually perform.

pub mod case_study;
pub mod dataset;
pub mod design;
pub mod error;
pub mod estimate;
pub mod evaluate;
pub mod factor_space;
pub mod hte_knn;
pub mod policy;
pub mod power;
pub mod rng;
pub mod sim;
pub mod special;

pub use dataset::{randomize, Dataset, Unit, UnitRecord};
pub use design::{check_design, BalanceReport, Design, Run, RunRole};
pub use error::{Error, Result};
pub use estimate::{fit_hte, fit_hte_with, fit_main_effects, CoefKey, EffectsFit, FitOptions};
pub use factor_space::{Factor, FactorSpace, Variant};
pub use evaluate::{erupt, eval_optimal_prediction, segment_validation, validate_holdout};
pub use hte_knn::{knn_cate, transformed_outcome, tune_k};
pub use policy::{optimal_global, optimal_personalized, predict_all, segment_policy_table};
pub use power::{per_level_sample_size, velocity, PowerSpec, VelocityReport};
pub use sim::{generate, oracle_effect, SimConfig};

//! Gradient-boosted cohort classifier with Shapley and LIME explanations, plus
//! metrics that cross-check the two explanation methods against each other.

pub mod data;
pub mod math;
pub mod gbt;
pub mod attribution;
pub mod shap;
pub mod lime;
pub mod crossval;
pub mod report;
pub mod config;

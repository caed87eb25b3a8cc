//! Explicit Gaussian test channel attaining the optimal sum rate.

pub mod construction;
pub mod enhance;
pub mod montecarlo;

pub use construction::{
    achievable_sum_rate, build_lambda_gamma, build_lambda_gamma_lenient, build_q_tree, distortion_check,
    q_tree_residuals, AchievableRate, DistortionRow, NodeStructure, QTreeResiduals, SchemeConstruction,
};
pub use enhance::{enhance, sum_rate_enhanced, verify_enhancement, EnhancedSigmas, EnhancementResiduals, Identity};
pub use montecarlo::{monte_carlo_check, McReport, MomentCheck};

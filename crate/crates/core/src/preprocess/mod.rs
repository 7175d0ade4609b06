//! Preprocessing: two-step imputation, robust scaling, rolling/lag feature
//! engineering, and supervised window assembly.

mod features;
mod impute;
mod scaler;
mod window;

pub use features::{
    engineer_features, supervised_frame, supervised_frame_subset, FeatureFrame, FeatureSpec,
};
pub(crate) use features::base_row_features;
pub use impute::impute;
pub use scaler::RobustScaler;
pub use window::{extract_window, window_origins, windowize, WindowSample};

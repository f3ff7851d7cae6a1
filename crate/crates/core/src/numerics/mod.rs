//! Dense arithmetic, the feature network and gradient checking.

pub mod gradcheck;
pub mod linalg;
pub mod matrix;
pub mod network;

pub use gradcheck::{check_flat, gradient_check, GradCheckReport};
pub use matrix::{dot, mean, ordered_sum, pearson, Matrix};
pub use network::{Activation, FeatureNetwork, GradientBundle, Layer, LayerGrad, Tape};

//! Dense linear algebra, clustering, differentiation and optimization shared by both branches.

mod adam;
mod eigen;
pub mod gradcheck;
mod kmeans;
mod matrix;
pub(crate) mod ops;
mod params;
pub mod tape;

pub use adam::{adam_step, AdamState};
pub use eigen::{sym_eig, EigenDecomposition, MAX_EIG_SIZE};
pub use gradcheck::{grad_check, Differentiable, FnDifferentiable, GradCheckReport};
pub use kmeans::{kmeans_assign, kmeans_fit, KMeansModel};
pub use matrix::Matrix;
pub use ops::{argmax, cross_entropy, softmax, PROB_FLOOR};
pub use params::ParamSet;
pub use tape::{Gradients, Tape, Var};

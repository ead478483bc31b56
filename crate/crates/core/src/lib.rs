//! Information-theoretic diagnostics for finite-alphabet learning problems.
//!
//! The crate measures how far an empirical label distribution can sit from
//! the population (task complexity, generalization tail bounds) and how far a
//! softmax model sits from the empirical distribution (the exact F/G split of
//! the fitting residual, eNTK spectra, Hessian checks). A small MLP with exact
//! reverse-mode Jacobians and a synthetic training harness tie the pieces
//! together.
//!
//! Runnable walkthroughs live in `examples/`:
//!
//! * `prob_basics`: PMFs, KL divergence, softmax, Pinsker gaps, sampling
//! * `task_complexity`: closed-form and Monte-Carlo task complexity
//! * `gen_bound_monte_carlo`: the generalization tail against its bound
//! * `model_entk`: Jacobians, KL gradients and eNTK eigenvalues
//! * `fit_decomposition`: the F/G decomposition and fitting-error bound
//! * `hessian_flatness`: finite-difference Hessian versus its assembly
//! * `risk_bound`: assembling the expected-risk bound and checking coverage
//! * `training_correlation`: SGD training with per-epoch diagnostics

pub mod cli;
pub mod complexity;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod fitdiag;
pub mod linalg;
pub mod model;
pub mod prob;
pub mod risk;
pub mod verify;

pub use complexity::{complexity_closed_form, estimate_complexity, PosteriorSpec};
pub use dataset::{Dataset, DatasetEntry, JointDistribution};
pub use error::{Error, Result};
pub use model::{Activation, ModelSpec, ParamVector};
pub use prob::{Logits, Pmf, RngSeed};
pub use risk::LossSpec;

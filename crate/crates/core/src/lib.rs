//! Membership-inference auditing for autoregressive sequence models.
//!
//! The toolkit reads per-token score tensors `[models, canaries, tokens]`
//! collected from shadow-model training runs, fits Gaussian models of each
//! canary's IN and OUT score vectors, and scores every model in turn with a
//! log-likelihood ratio. Evaluation focuses on TPR at very low FPR.

pub mod attack;
pub mod cli;
pub mod data;
pub mod error;
pub mod estimators;
pub mod evaluation;
pub mod linalg;
pub mod plot;
pub mod report;
pub mod synthetic;
pub mod transform;

pub use error::{Error, Result};

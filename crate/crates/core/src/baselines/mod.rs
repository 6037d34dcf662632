//! Feature vectors and two reference classifiers: logistic regression and a
//! small MLP.

mod featurize;
mod models;

pub use featurize::{labels, Featurizer};
pub use models::{logreg_objective, train_logreg, train_mlp, LinearModel, LogregConfig, MlpConfig, MlpModel};

#[derive(Debug, thiserror::Error)]
pub enum BaselineError {
    #[error("featurizer used before fit")]
    NotFitted,
    #[error("invalid input: {0}")]
    Input(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("non-finite {0}")]
    NonFinite(String),
}

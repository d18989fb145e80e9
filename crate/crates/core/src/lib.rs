//! Short-term traffic flux prediction with a traffic reaction model (TRM)
//! embedded as the last stage of a recurrent network.
//!
//! - [`trm`]: the finite-volume road model.
//! - [`autodiff`]: reverse-mode tape used for training.
//! - [`neural`]: perceptrons, MLPs, LSTM and simple recurrent cells.
//! - [`pipeline`]: the full estimator/predictor/TRM network, loss and training.
//! - [`dataio`]: measurement CSV ingestion, normalization, windowing, synthetic data.
//! - [`metrics`]: RMSE, MAPE and evaluation breakdowns.

pub mod autodiff;
pub mod dataio;
pub mod error;
pub mod metrics;
pub mod neural;
pub mod pipeline;
pub mod seed;
pub mod trm;

pub use error::{Error, Result};

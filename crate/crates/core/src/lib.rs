//! Interaction-aware Kalman neural networks for multi-agent trajectory
//! forecasting.
//!
//! The pipeline has three stages. [`interaction`] turns a scene's past
//! observations into acceleration forecasts, [`motion`] integrates them
//! into trajectories, and [`filter`] fuses those trajectories with a
//! kinematic prediction under learned noise. [`train`] and [`eval`] wrap
//! the model for optimization and scoring.

pub mod data;
pub mod eval;
pub mod filter;
pub mod interaction;
pub mod model;
pub mod motion;
pub mod nn;
pub mod tensor;
pub mod train;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] data::DataError),
    #[error(transparent)]
    Nn(#[from] nn::NnError),
    #[error(transparent)]
    Filter(#[from] filter::FilterError),
    #[error(transparent)]
    Train(#[from] train::TrainError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
}

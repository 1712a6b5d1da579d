//! Error type shared by every module.

use thiserror::Error;

use crate::model::Regime;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("{coefficient} coefficient is not finite at x={x:?}, k={regime}")]
    Coefficient {
        coefficient: &'static str,
        x: Vec<f64>,
        regime: Regime,
    },

    #[error("rate q[{from}][{to}] = {value} is negative or not finite at x={x:?}")]
    InvalidRate {
        from: Regime,
        to: Regime,
        value: f64,
        x: Vec<f64>,
    },

    #[error("exit rate {total} from regime {regime} exceeds the bound {bound} at x={x:?}")]
    RateBound {
        regime: Regime,
        total: f64,
        bound: f64,
        x: Vec<f64>,
    },

    #[error("state norm {norm:e} exceeded the explosion guard at t={time}")]
    Explosion { time: f64, norm: f64 },

    #[error("rate q[{from}][{to}] = {rate} exceeds its dominating rate {dominating} at x={x:?}")]
    Domination {
        from: Regime,
        to: Regime,
        rate: f64,
        dominating: f64,
        x: Vec<f64>,
    },

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("bin layout has no cells: {0}")]
    EmptyBinSpec(String),

    #[error("distance {distance:e} at t={time} is within one standard error {stderr:e} of the noise floor {noise_floor:e}")]
    DegenerateFit {
        time: f64,
        distance: f64,
        stderr: f64,
        noise_floor: f64,
    },

    #[error("{} of {total} paths failed; first failure at path {}: {}", failures.len(), failures[0].0, failures[0].1)]
    Ensemble {
        total: usize,
        failures: Vec<(usize, Error)>,
    },
}

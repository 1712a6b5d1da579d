//! Built-in model catalog with parameter overrides.

use switchjump::change_of_measure::QHat;
use switchjump::ergodicity::default_grid;
use switchjump::models_builtin::{fleet_model, Oscillator, OscillatorParams, FLEET};
use switchjump::ModelSpec;

use crate::config::{invalid, ModelConfig};
use crate::CliError;

pub const OSCILLATOR: &str = "damped-oscillator";

/// A resolved catalog entry.
pub struct Entry {
    pub model: ModelSpec,
    /// Present for models with a known Lyapunov function and dominating rates.
    pub oscillator: Option<Oscillator>,
}

impl Entry {
    /// Declared dominating rates, or the empirical supremum over the default
    /// probe grid for models without one.
    pub fn qhat(&self) -> Result<QHat, CliError> {
        if let Some(o) = &self.oscillator {
            return Ok(o.qhat.clone());
        }
        let probes: Vec<Vec<f64>> = default_grid(&self.model).into_iter().map(|(x, _)| x).collect();
        QHat::from_probes(&self.model, &probes, 0.0).map_err(|e| invalid("model", e))
    }
}

pub fn resolve(c: &ModelConfig) -> Result<Entry, CliError> {
    if c.name == OSCILLATOR {
        let d = OscillatorParams::default();
        let p = OscillatorParams::with(
            c.m_bound.unwrap_or(d.m_bound),
            c.regimes.unwrap_or(d.regimes),
            c.upward_rate.unwrap_or(d.upward_rate),
        );
        let o = Oscillator::new(p).map_err(|e| invalid("model", e))?;
        return Ok(Entry {
            model: o.model.clone(),
            oscillator: Some(o),
        });
    }
    if !FLEET.contains(&c.name.as_str()) {
        return Err(invalid("model.name", format!("unknown model `{}`", c.name)));
    }
    for (key, set) in [
        ("m_bound", c.m_bound.is_some()),
        ("regimes", c.regimes.is_some()),
        ("upward_rate", c.upward_rate.is_some()),
    ] {
        if set {
            return Err(invalid(
                &format!("model.{key}"),
                format!("not a parameter of `{}`", c.name),
            ));
        }
    }
    let model = fleet_model(&c.name).map_err(|e| invalid("model.name", e))?;
    Ok(Entry {
        model,
        oscillator: None,
    })
}

/// One line per catalog model in catalog order.
pub fn listing() -> Vec<String> {
    let d = OscillatorParams::default();
    FLEET
        .iter()
        .map(|name| {
            let m = fleet_model(name).expect("fleet models are valid");
            let params = if *name == OSCILLATOR {
                format!(
                    "m_bound: float = {}, regimes: integer = {}, upward_rate: float = {}",
                    d.m_bound, d.regimes, d.upward_rate
                )
            } else {
                "none".to_string()
            };
            format!(
                "{name}\tdim={} regimes={}\tparameters: {params}",
                m.dim(),
                m.regime_count()
            )
        })
        .collect()
}

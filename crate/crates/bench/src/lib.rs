//! Fixtures shared by the criterion benchmarks in `benches/`.

use switchjump::engine::{simulate_ensemble, SimConfig, StateSample};
use switchjump::models_builtin::{Oscillator, OscillatorParams};

pub fn oscillator() -> Oscillator {
    Oscillator::new(OscillatorParams::default()).expect("default parameters are valid")
}

/// Final states of `n` paths of the default oscillator from `(x0, k0)` at
/// time 1.
pub fn final_states(x0: &[f64], k0: usize, n: usize, seed: u64) -> Vec<StateSample> {
    let s = oscillator();
    simulate_ensemble(&s.model, &SimConfig::new(0.01, 1.0, seed), x0, k0, n)
        .expect("default oscillator paths do not fail")
        .finals
}

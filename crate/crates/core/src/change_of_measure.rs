//! Change of measure between the state-dependent switching process and an
//! auxiliary process whose regime is a Markov chain with constant dominating
//! rates `qhat`.
//!
//! Along an auxiliary path with regime switches at `v_1 < ... < v_n` the
//! density of the original law is
//!
//! ```text
//! M_T = prod_i q_{k_{i-1} k_i}(V(v_i-)) / qhat_{k_{i-1} k_i}
//!       * exp(-int_0^T [q_{Psi(s)}(V(s)) - qhat_{Psi(s)}] ds)
//! ```
//!
//! The simulated process freezes its rates at the start of each step, so
//! both the integral and the rate ratios use left endpoints on the
//! simulation grid, which contains every `v_i`: the ratio at `v_i` is taken
//! at the grid point preceding it. This makes `M_T` the exact density of the
//! discretized process, so `E[M_T] = 1` holds without step-size bias.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::Serialize;

use crate::engine::{collect_indexed, drive, sample_poisson_epochs, PathSample, RecordMode,
    RegimeSource, SimConfig, StateSample};
use crate::error::{Error, Result};
use crate::model::{ModelSpec, Regime, TestFunction};
use crate::rng::{derive_seed, seeded};
use crate::stats::mean_stderr;
use crate::switching::Mechanism;

/// Largest ratio `q / qhat` tolerated before the domination is declared
/// broken.
pub const DOMINATION_RTOL: f64 = 1e-9;

/// Constant dominating rates `qhat_kl >= sup_x q_kl(x)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QHat {
    rates: Vec<Vec<f64>>,
    /// False when the rates came from a grid search rather than a bound
    /// known to hold everywhere.
    pub rigorous: bool,
}

impl QHat {
    /// Declared bounds; the diagonal is ignored.
    pub fn new(mut rates: Vec<Vec<f64>>) -> Result<Self> {
        let n = rates.len();
        if n == 0 || rates.iter().any(|r| r.len() != n) {
            return Err(Error::Param("qhat must be a non-empty square matrix".into()));
        }
        for (k, row) in rates.iter_mut().enumerate() {
            row[k] = 0.0;
            if row.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::Param("qhat entries must be finite and non-negative".into()));
            }
        }
        Ok(QHat {
            rates,
            rigorous: true,
        })
    }

    /// Empirical supremum over `probes`, inflated by `1 + margin`. Not a
    /// proof of domination.
    pub fn from_probes(m: &ModelSpec, probes: &[Vec<f64>], margin: f64) -> Result<Self> {
        let n = m.regime_count();
        let mut rates = vec![vec![0.0f64; n]; n];
        for x in probes {
            for (k, row) in rates.iter_mut().enumerate() {
                for (l, r) in row.iter_mut().enumerate() {
                    *r = r.max(m.rate(x, k, l)? * (1.0 + margin));
                }
            }
        }
        let mut q = QHat::new(rates)?;
        q.rigorous = false;
        Ok(q)
    }

    pub fn rate(&self, k: Regime, l: Regime) -> f64 {
        self.rates[k][l]
    }

    pub fn exit_rate(&self, k: Regime) -> f64 {
        self.rates[k].iter().sum()
    }

    pub fn regime_count(&self) -> usize {
        self.rates.len()
    }

    /// Checks `q_kl(x) <= qhat_kl` at every probe.
    pub fn check_domination(&self, m: &ModelSpec, probes: &[Vec<f64>]) -> Result<()> {
        if self.regime_count() != m.regime_count() {
            return Err(Error::Param("qhat size does not match the model".into()));
        }
        for x in probes {
            for k in 0..m.regime_count() {
                for l in 0..m.regime_count() {
                    self.ratio(m, x, k, l)?;
                }
            }
        }
        Ok(())
    }

    fn ratio(&self, m: &ModelSpec, x: &[f64], k: Regime, l: Regime) -> Result<f64> {
        let q = m.rate(x, k, l)?;
        let qh = self.rates[k][l];
        if q == 0.0 {
            return Ok(0.0);
        }
        if qh == 0.0 || q > qh * (1.0 + DOMINATION_RTOL) {
            return Err(Error::Domination {
                from: k,
                to: l,
                rate: q,
                dominating: qh,
                x: x.to_vec(),
            });
        }
        Ok(q / qh)
    }
}

/// Auxiliary path with its density weight.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightedPath {
    pub path: PathSample,
    pub switch_times: Vec<f64>,
    pub weight: f64,
}

/// Pre-sampled auxiliary regime path replayed during simulation.
struct Schedule {
    switches: Vec<(f64, Regime)>,
    pos: usize,
}

impl RegimeSource for Schedule {
    fn propose<R: Rng>(
        &mut self,
        _m: &ModelSpec,
        _x: &[f64],
        _k: Regime,
        _t: f64,
        t_end: f64,
        _rng: &mut R,
    ) -> Result<Option<(f64, Regime)>> {
        match self.switches.get(self.pos) {
            Some(&(s, l)) if s < t_end => {
                self.pos += 1;
                Ok(Some((s, l)))
            }
            _ => Ok(None),
        }
    }

    fn mechanism(&self) -> Mechanism {
        Mechanism::Clock
    }
}

/// Regime path of the Markov chain with rates `qhat` on `[0, horizon]`.
pub fn sample_aux_regimes<R: Rng>(
    qhat: &QHat,
    k0: Regime,
    horizon: f64,
    rng: &mut R,
) -> Vec<(f64, Regime)> {
    let mut out = Vec::new();
    let (mut t, mut k) = (0.0, k0);
    loop {
        let q = qhat.exit_rate(k);
        if q <= 0.0 {
            return out;
        }
        let e: f64 = Exp1.sample(rng);
        t += e / q;
        if t >= horizon {
            return out;
        }
        let u = rng.random::<f64>() * q;
        let mut acc = 0.0;
        let mut next = k;
        for (l, &r) in qhat.rates[k].iter().enumerate() {
            if r > 0.0 {
                next = l;
                acc += r;
                if u < acc {
                    break;
                }
            }
        }
        k = next;
        out.push((t, k));
    }
}

/// Density weight of a full-path auxiliary sample.
pub fn rn_weight(m: &ModelSpec, qhat: &QHat, path: &PathSample) -> Result<f64> {
    if path.times.is_empty() {
        return Err(Error::InvalidArgument("weight needs a full-path sample".into()));
    }
    let mut log_w = 0.0;
    for j in 0..path.times.len() - 1 {
        let (x, k) = (path.state(j), path.regimes[j]);
        let dt = path.times[j + 1] - path.times[j];
        log_w -= (m.exit_rate(x, k)? - qhat.exit_rate(k)) * dt;
    }
    let mut prod = 1.0;
    for e in &path.events {
        if let crate::engine::EventKind::Switch(s) = &e.kind {
            prod *= qhat.ratio(m, path.state(e.step - 1), s.from, s.to)?;
        }
    }
    Ok(prod * log_w.exp())
}

/// Simulates the auxiliary process (regime chain with rates `qhat`, same
/// coefficients) from the stream seeded by `cfg.seed` and weights it.
pub fn simulate_aux(
    m: &ModelSpec,
    qhat: &QHat,
    cfg: &SimConfig,
    x0: &[f64],
    k0: Regime,
) -> Result<WeightedPath> {
    cfg.validate()?;
    m.check_state(x0, k0)?;
    if qhat.regime_count() != m.regime_count() {
        return Err(Error::Param("qhat size does not match the model".into()));
    }
    let mut rng = seeded(cfg.seed);
    let switches = sample_aux_regimes(qhat, k0, cfg.horizon, &mut rng);
    let switch_times = switches.iter().map(|s| s.0).collect();
    let epochs = sample_poisson_epochs(m, cfg.horizon, &mut rng);
    let mut schedule = Schedule { switches, pos: 0 };
    let full = cfg.clone().with_record(RecordMode::FullPath);
    let path = drive(m, &full, x0, k0, &mut schedule, &epochs, &mut rng)?;
    let weight = rn_weight(m, qhat, &path)?;
    Ok(WeightedPath {
        path,
        switch_times,
        weight,
    })
}

/// Final states and weights of independent auxiliary paths.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightedEnsemble {
    pub finals: Vec<StateSample>,
    pub weights: Vec<f64>,
    pub switch_counts: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IsEstimate {
    pub value: f64,
    pub stderr: f64,
    pub mean_weight: f64,
    pub mean_weight_stderr: f64,
    pub effective_sample_size: f64,
}

impl WeightedEnsemble {
    /// Importance-sampling estimate of `E f(X(T), K(T))`.
    pub fn estimate(&self, f: &TestFunction) -> IsEstimate {
        let terms = self
            .finals
            .iter()
            .zip(&self.weights)
            .map(|(s, w)| w * f.value(&s.x, s.regime));
        let e = mean_stderr(terms);
        let w = mean_stderr(self.weights.iter().copied());
        let (s1, s2) = self
            .weights
            .iter()
            .fold((0.0, 0.0), |(a, b), w| (a + w, b + w * w));
        IsEstimate {
            value: e.value,
            stderr: e.stderr,
            mean_weight: w.value,
            mean_weight_stderr: w.stderr,
            effective_sample_size: if s2 > 0.0 { s1 * s1 / s2 } else { 0.0 },
        }
    }
}

/// Path `i` uses seed `derive_seed(cfg.seed, "aux", i)`.
pub fn simulate_weighted_ensemble(
    m: &ModelSpec,
    qhat: &QHat,
    cfg: &SimConfig,
    x0: &[f64],
    k0: Regime,
    n_paths: usize,
) -> Result<WeightedEnsemble> {
    let parts = collect_indexed(n_paths, |i| {
        let c = cfg.clone().with_seed(derive_seed(cfg.seed, "aux", i as u64));
        let wp = simulate_aux(m, qhat, &c, x0, k0)?;
        Ok((wp.path.final_state, wp.weight, wp.switch_times.len()))
    })?;
    let mut out = WeightedEnsemble {
        finals: Vec::with_capacity(n_paths),
        weights: Vec::with_capacity(n_paths),
        switch_counts: Vec::with_capacity(n_paths),
    };
    for (s, w, n) in parts {
        out.finals.push(s);
        out.weights.push(w);
        out.switch_counts.push(n);
    }
    Ok(out)
}

pub fn is_estimate(
    m: &ModelSpec,
    qhat: &QHat,
    cfg: &SimConfig,
    x0: &[f64],
    k0: Regime,
    f: &TestFunction,
    n_paths: usize,
) -> Result<IsEstimate> {
    Ok(simulate_weighted_ensemble(m, qhat, cfg, x0, k0, n_paths)?.estimate(f))
}

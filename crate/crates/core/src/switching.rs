//! Regime switching: the Skorokhod interval representation and the
//! exponential-clock construction.
//!
//! For a fixed state, the off-diagonal rates of row `k` are stacked as
//! consecutive half-open intervals `[lo, hi)` starting at zero, in increasing
//! target order. A Poisson stream of rate `H` carries uniform marks on
//! `[0, H)`; a mark landing in the interval of target `l` moves the regime
//! from `k` to `l`.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ModelSpec, Regime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    Skorokhod,
    Clock,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SwitchEvent {
    pub time: f64,
    pub from: Regime,
    pub to: Regime,
    pub mechanism: Mechanism,
}

impl SwitchEvent {
    pub fn increment(&self) -> i64 {
        self.to as i64 - self.from as i64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub to: Regime,
    pub lo: f64,
    pub hi: f64,
}

/// Stacked rate intervals of one row at a fixed state.
#[derive(Debug, Clone, PartialEq)]
pub struct RowPartition {
    pub from: Regime,
    pub intervals: Vec<Interval>,
}

impl RowPartition {
    pub fn total(&self) -> f64 {
        self.intervals.last().map_or(0.0, |iv| iv.hi)
    }
}

/// Stacked intervals for row `k` at `x`. Zero rates get no interval.
pub fn partition_row(m: &ModelSpec, x: &[f64], k: Regime) -> Result<RowPartition> {
    m.check_state(x, k)?;
    m.exit_rate(x, k)?;
    let mut intervals = Vec::new();
    let mut lo = 0.0;
    for l in 0..m.regime_count() {
        let q = m.rate(x, k, l)?;
        if l != k && q > 0.0 {
            intervals.push(Interval { to: l, lo, hi: lo + q });
            lo += q;
        }
    }
    Ok(RowPartition { from: k, intervals })
}

/// Regime increment `l - k` for the interval containing `u`, zero outside
/// every interval.
pub fn h_eval(p: &RowPartition, k: Regime, u: f64) -> i64 {
    debug_assert_eq!(p.from, k);
    let idx = p.intervals.partition_point(|iv| iv.hi <= u);
    match p.intervals.get(idx) {
        Some(iv) if iv.lo <= u => iv.to as i64 - k as i64,
        _ => 0,
    }
}

fn exp1<R: Rng>(rng: &mut R) -> f64 {
    Exp1.sample(rng)
}

/// First accepted switch of the thinned rate-`H` stream after `t0`, with the
/// state frozen along `path`. `None` if nothing is accepted before `horizon`.
pub fn next_switch_skorokhod<R: Rng>(
    m: &ModelSpec,
    path: impl Fn(f64, &mut [f64]),
    k: Regime,
    t0: f64,
    horizon: f64,
    rng: &mut R,
) -> Result<Option<SwitchEvent>> {
    let h = m.rate_bound();
    let mut x = vec![0.0; m.state_len()];
    let mut t = t0;
    loop {
        t += exp1(rng) / h;
        if t >= horizon {
            return Ok(None);
        }
        path(t, &mut x);
        let u = rng.random::<f64>() * h;
        if let Some(l) = m.select_target(&x, k, u)? {
            return Ok(Some(SwitchEvent {
                time: t,
                from: k,
                to: l,
                mechanism: Mechanism::Skorokhod,
            }));
        }
    }
}

/// First switch of the exponential clock after `t0`: the exit rate along
/// `path` is integrated with the left-endpoint rule on a grid of spacing
/// `grid_step` until it crosses an `Exp(1)` level; the crossing time is
/// interpolated linearly and the target drawn with probabilities
/// `q_kl / q_k` at the crossing state.
pub fn next_switch_clock<R: Rng>(
    m: &ModelSpec,
    path: impl Fn(f64, &mut [f64]),
    k: Regime,
    t0: f64,
    horizon: f64,
    grid_step: f64,
    rng: &mut R,
) -> Result<Option<SwitchEvent>> {
    if !(grid_step.is_finite() && grid_step > 0.0) {
        return Err(Error::InvalidArgument(format!("grid step {grid_step} must be positive")));
    }
    let xi = exp1(rng);
    let mut x = vec![0.0; m.state_len()];
    let mut acc = 0.0;
    let mut i = 0u64;
    loop {
        let t = t0 + i as f64 * grid_step;
        if t >= horizon {
            return Ok(None);
        }
        let t_next = (t0 + (i + 1) as f64 * grid_step).min(horizon);
        path(t, &mut x);
        let q = m.exit_rate(&x, k)?;
        if q > 0.0 && acc + q * (t_next - t) > xi {
            let tau = (t + (xi - acc) / q).min(t_next);
            path(tau, &mut x);
            let l = draw_target(m, &x, k, rng)?;
            return Ok(l.map(|to| SwitchEvent {
                time: tau,
                from: k,
                to,
                mechanism: Mechanism::Clock,
            }));
        }
        acc += q * (t_next - t);
        i += 1;
    }
}

/// Probability `exp(-int_t0^t q_k(x(s)) ds)` that no switch leaves `k` by
/// time `t` along a frozen path, by composite Simpson quadrature on
/// `intervals` (rounded up to even) panels.
pub fn survival(
    m: &ModelSpec,
    path: impl Fn(f64, &mut [f64]),
    k: Regime,
    t0: f64,
    t: f64,
    intervals: usize,
) -> Result<f64> {
    if !(t >= t0) || intervals == 0 {
        return Err(Error::InvalidArgument(format!("survival needs t >= t0 and panels, got [{t0}, {t}]")));
    }
    let n = intervals + intervals % 2;
    let h = (t - t0) / n as f64;
    let mut x = vec![0.0; m.state_len()];
    let mut q = |s: f64| {
        path(s, &mut x);
        m.exit_rate(&x, k)
    };
    let mut sum = q(t0)? + q(t)?;
    for i in 1..n {
        sum += if i % 2 == 1 { 4.0 } else { 2.0 } * q(t0 + i as f64 * h)?;
    }
    Ok((-sum * h / 3.0).exp())
}

/// Target with probability `q_kl(x) / q_k(x)`; `None` if row `k` vanishes at
/// `x`.
pub(crate) fn draw_target<R: Rng>(
    m: &ModelSpec,
    x: &[f64],
    k: Regime,
    rng: &mut R,
) -> Result<Option<Regime>> {
    let q = m.exit_rate(x, k)?;
    if q <= 0.0 {
        return Ok(None);
    }
    let u = rng.random::<f64>() * q;
    match m.select_target(x, k, u)? {
        Some(l) => Ok(Some(l)),
        // rounding can push u past the last interval
        None => Ok((0..m.regime_count())
            .rev()
            .find(|&l| l != k && m.rate(x, k, l).is_ok_and(|r| r > 0.0))),
    }
}

/// Switching state carried across simulation steps. Rates are frozen at the
/// pre-step state within each step.
#[derive(Debug, Clone)]
pub(crate) enum SwitchClock {
    Skorokhod { next_candidate: f64 },
    Clock { xi: f64, acc: f64 },
}

impl SwitchClock {
    pub(crate) fn new<R: Rng>(mechanism: Mechanism, t0: f64, bound: f64, rng: &mut R) -> Self {
        match mechanism {
            Mechanism::Skorokhod => SwitchClock::Skorokhod {
                next_candidate: t0 + exp1(rng) / bound,
            },
            Mechanism::Clock => SwitchClock::Clock {
                xi: exp1(rng),
                acc: 0.0,
            },
        }
    }

    pub(crate) fn mechanism(&self) -> Mechanism {
        match self {
            SwitchClock::Skorokhod { .. } => Mechanism::Skorokhod,
            SwitchClock::Clock { .. } => Mechanism::Clock,
        }
    }

    /// Switch in `[t, t_end)` given the state `x` at `t`. When none occurs
    /// the clock is advanced to `t_end`.
    pub(crate) fn propose<R: Rng>(
        &mut self,
        m: &ModelSpec,
        x: &[f64],
        k: Regime,
        t: f64,
        t_end: f64,
        rng: &mut R,
    ) -> Result<Option<(f64, Regime)>> {
        match self {
            SwitchClock::Skorokhod { next_candidate } => {
                let h = m.rate_bound();
                while *next_candidate < t_end {
                    let c = *next_candidate;
                    *next_candidate = c + exp1(rng) / h;
                    let u = rng.random::<f64>() * h;
                    if let Some(l) = m.select_target(x, k, u)? {
                        return Ok(Some((c.max(t), l)));
                    }
                }
                Ok(None)
            }
            SwitchClock::Clock { xi, acc } => {
                let q = m.exit_rate(x, k)?;
                let gain = q * (t_end - t);
                if q > 0.0 && *acc + gain > *xi {
                    let tau = t + (*xi - *acc) / q;
                    if tau < t_end {
                        if let Some(l) = draw_target(m, x, k, rng)? {
                            *xi = exp1(rng);
                            *acc = 0.0;
                            return Ok(Some((tau, l)));
                        }
                    }
                    // crossing rounded onto the step end: fire at the start
                    // of the next step
                    *acc = *xi;
                    return Ok(None);
                }
                *acc += gain;
                Ok(None)
            }
        }
    }
}

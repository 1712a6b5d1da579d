//! Basic coupling of two copies of the process.
//!
//! Both copies share the Brownian increments and the Poisson epochs and
//! marks. Regime moves come from one thinned stream at rate `2H`: for every
//! target `i` the copies jump together at rate `min(a_i, b_i)` and alone at
//! the positive parts of `a_i - b_i` and `b_i - a_i`, where `a_i = q_ki(x)`
//! and `b_i = q_li(y)` (zero on the diagonal). Each marginal therefore
//! switches with its own rates. `zeta` is the first time the regimes differ.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::Serialize;

use crate::engine::{apply_jump, check_guard, collect_indexed, euler_into, normal_increments,
    sample_poisson_epochs, step_end, PoissonEpochs, Scratch, SimConfig};
use crate::error::{Error, Result};
use crate::model::{Estimate, ModelSpec, Regime};
use crate::rng::{derive_seed, seeded};
use crate::stats::mean_stderr;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoupledState {
    pub x: Vec<f64>,
    pub k: Regime,
    pub y: Vec<f64>,
    pub l: Regime,
}

impl CoupledState {
    pub fn new(x: &[f64], k: Regime, y: &[f64], l: Regime) -> Self {
        CoupledState {
            x: x.to_vec(),
            k,
            y: y.to_vec(),
            l,
        }
    }

    pub fn distance(&self) -> f64 {
        self.x
            .iter()
            .zip(&self.y)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoupledMove {
    First(Regime),
    Second(Regime),
    Together(Regime),
}

/// Basic-coupling rates per target regime at a fixed pair of states.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledRates {
    pub move_first: Vec<f64>,
    pub move_second: Vec<f64>,
    pub move_together: Vec<f64>,
}

impl CoupledRates {
    pub fn compute(m: &ModelSpec, x: &[f64], k: Regime, y: &[f64], l: Regime) -> Result<Self> {
        m.exit_rate(x, k)?;
        m.exit_rate(y, l)?;
        let n = m.regime_count();
        let mut r = CoupledRates {
            move_first: vec![0.0; n],
            move_second: vec![0.0; n],
            move_together: vec![0.0; n],
        };
        for i in 0..n {
            let a = m.rate(x, k, i)?;
            let b = m.rate(y, l, i)?;
            r.move_first[i] = (a - b).max(0.0);
            r.move_second[i] = (b - a).max(0.0);
            r.move_together[i] = a.min(b);
        }
        Ok(r)
    }

    pub fn total(&self) -> f64 {
        self.move_first
            .iter()
            .chain(&self.move_second)
            .chain(&self.move_together)
            .sum()
    }

    /// Move whose stacked interval contains `u`; intervals are laid out per
    /// target as first, second, together.
    pub fn select(&self, u: f64) -> Option<CoupledMove> {
        let mut acc = 0.0;
        for i in 0..self.move_first.len() {
            for (rate, mv) in [
                (self.move_first[i], CoupledMove::First(i)),
                (self.move_second[i], CoupledMove::Second(i)),
                (self.move_together[i], CoupledMove::Together(i)),
            ] {
                if rate > 0.0 && u >= acc && u < acc + rate {
                    return Some(mv);
                }
                acc += rate;
            }
        }
        None
    }
}

/// Full record of one coupled run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingRun {
    pub times: Vec<f64>,
    /// Row-major `times.len() x 2d` for each copy.
    pub x_path: Vec<f64>,
    pub y_path: Vec<f64>,
    pub regimes: Vec<(Regime, Regime)>,
    pub zeta: Option<f64>,
    pub distance_series: Vec<f64>,
    pub final_state: CoupledState,
}

/// What a coupled run needs to report when paths are not kept.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingSummary {
    pub zeta: Option<f64>,
    /// `|X(T ^ zeta) - Y(T ^ zeta)|`.
    pub stopped_distance: f64,
    pub final_state: CoupledState,
}

struct Driver<'a> {
    m: &'a ModelSpec,
    step: f64,
    horizon: f64,
    guard: f64,
    record: bool,
}

impl Driver<'_> {
    fn run<R: Rng>(
        &self,
        start: CoupledState,
        epochs: &PoissonEpochs,
        rng: &mut R,
    ) -> Result<(CouplingRun, f64)> {
        let m = self.m;
        let d = m.dim();
        let dominating = 2.0 * m.rate_bound();
        let mut s = start;
        let mut next = vec![0.0; 2 * d];
        let mut dw = vec![0.0; d];
        let mut scratch = Scratch::new(d);
        let mut t = 0.0;
        let mut ep = 0usize;
        let mut candidate: f64 = Exp1.sample(rng);
        candidate /= dominating;
        let mut zeta = (s.k != s.l).then_some(0.0);
        let mut stopped = s.distance();
        let mut run = CouplingRun {
            times: Vec::new(),
            x_path: Vec::new(),
            y_path: Vec::new(),
            regimes: Vec::new(),
            zeta: None,
            distance_series: Vec::new(),
            final_state: s.clone(),
        };
        let push = |run: &mut CouplingRun, t: f64, s: &CoupledState| {
            if self.record {
                run.times.push(t);
                run.x_path.extend_from_slice(&s.x);
                run.y_path.extend_from_slice(&s.y);
                run.regimes.push((s.k, s.l));
                run.distance_series.push(s.distance());
            }
        };
        push(&mut run, t, &s);

        while t < self.horizon {
            let mut t_end = step_end(t, self.step, self.horizon);
            if let Some(&te) = epochs.times.get(ep) {
                t_end = t_end.min(te);
            }
            let mut mv = None;
            let mut rates: Option<CoupledRates> = None;
            while candidate < t_end {
                let c = candidate;
                let gap: f64 = Exp1.sample(rng);
                candidate = c + gap / dominating;
                let r = match &rates {
                    Some(r) => r,
                    None => rates.insert(CoupledRates::compute(m, &s.x, s.k, &s.y, s.l)?),
                };
                let u = rng.random::<f64>() * dominating;
                if let Some(found) = r.select(u) {
                    mv = Some((c.max(t), found));
                    break;
                }
            }
            let t_next = mv.map_or(t_end, |(c, _)| c);
            let dt = t_next - t;
            normal_increments(dt, rng, &mut dw);
            euler_into(m, &s.x, s.k, dt, &dw, &mut scratch, &mut next)?;
            std::mem::swap(&mut s.x, &mut next);
            euler_into(m, &s.y, s.l, dt, &dw, &mut scratch, &mut next)?;
            std::mem::swap(&mut s.y, &mut next);
            t = t_next;

            if let Some((_, found)) = mv {
                match found {
                    CoupledMove::First(i) => s.k = i,
                    CoupledMove::Second(i) => s.l = i,
                    CoupledMove::Together(i) => {
                        s.k = i;
                        s.l = i;
                    }
                }
            } else if epochs.times.get(ep) == Some(&t) {
                let mark = &epochs.marks[ep];
                apply_jump(m, &mut s.x, s.k, mark, &mut scratch)?;
                apply_jump(m, &mut s.y, s.l, mark, &mut scratch)?;
                ep += 1;
            }
            if zeta.is_none() {
                stopped = s.distance();
                if s.k != s.l {
                    zeta = Some(t);
                }
            }
            push(&mut run, t, &s);
            check_guard(&s.x, t, self.guard)?;
            check_guard(&s.y, t, self.guard)?;
        }
        run.zeta = zeta;
        run.final_state = s;
        Ok((run, stopped))
    }
}

fn check_pair(m: &ModelSpec, s: &CoupledState) -> Result<()> {
    m.check_state(&s.x, s.k)?;
    m.check_state(&s.y, s.l)
}

fn run_seeded(
    m: &ModelSpec,
    cfg: &SimConfig,
    start: CoupledState,
    seed: u64,
    record: bool,
) -> Result<(CouplingRun, f64)> {
    let mut rng = seeded(seed);
    let epochs = sample_poisson_epochs(m, cfg.horizon, &mut rng);
    Driver {
        m,
        step: cfg.step,
        horizon: cfg.horizon,
        guard: cfg.explosion_guard,
        record,
    }
    .run(start, &epochs, &mut rng)
}

/// Advances the pair by exactly `dt`, resolving any events inside the step.
pub fn coupled_step<R: Rng>(
    m: &ModelSpec,
    state: &CoupledState,
    dt: f64,
    rng: &mut R,
) -> Result<CoupledState> {
    check_pair(m, state)?;
    if !(dt.is_finite() && dt >= 0.0) {
        return Err(Error::InvalidArgument(format!("step {dt} must be non-negative")));
    }
    let epochs = sample_poisson_epochs(m, dt, rng);
    let driver = Driver {
        m,
        step: dt.max(f64::MIN_POSITIVE),
        horizon: dt,
        guard: f64::INFINITY,
        record: false,
    };
    Ok(driver.run(state.clone(), &epochs, rng)?.0.final_state)
}

/// One coupled run on `[0, cfg.horizon]` with the stream seeded by
/// `cfg.seed`, keeping the full path.
pub fn run_coupling(
    m: &ModelSpec,
    cfg: &SimConfig,
    x0: &[f64],
    k0: Regime,
    y0: &[f64],
    l0: Regime,
) -> Result<CouplingRun> {
    cfg.validate()?;
    let start = CoupledState::new(x0, k0, y0, l0);
    check_pair(m, &start)?;
    Ok(run_seeded(m, cfg, start, cfg.seed, true)?.0)
}

/// `n_runs` independent coupled runs without path storage. Run `i` uses the
/// stream derived from `(cfg.seed, "coupling", i)`.
pub fn couple_many(
    m: &ModelSpec,
    cfg: &SimConfig,
    start: &CoupledState,
    n_runs: usize,
) -> Result<Vec<CouplingSummary>> {
    cfg.validate()?;
    check_pair(m, start)?;
    collect_indexed(n_runs, |i| {
        let seed = derive_seed(cfg.seed, "coupling", i as u64);
        let (run, stopped_distance) = run_seeded(m, cfg, start.clone(), seed, false)?;
        Ok(CouplingSummary {
            zeta: run.zeta,
            stopped_distance,
            final_state: run.final_state,
        })
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContractionEstimate {
    pub initial_distance: f64,
    /// `E|X(t ^ zeta) - Y(t ^ zeta)|` at `t = cfg.horizon`.
    pub mean_distance: Estimate,
    /// `P{zeta <= t}`.
    pub separation_prob: Estimate,
}

/// Coupled runs from `(x0, k0)` and `(y0, k0)` up to `cfg.horizon`.
pub fn estimate_contraction(
    m: &ModelSpec,
    cfg: &SimConfig,
    x0: &[f64],
    y0: &[f64],
    k0: Regime,
    n_runs: usize,
) -> Result<ContractionEstimate> {
    let start = CoupledState::new(x0, k0, y0, k0);
    let runs = couple_many(m, cfg, &start, n_runs)?;
    Ok(ContractionEstimate {
        initial_distance: start.distance(),
        mean_distance: mean_stderr(runs.iter().map(|r| r.stopped_distance)),
        separation_prob: mean_stderr(
            runs.iter().map(|r| if r.zeta.is_some() { 1.0 } else { 0.0 }),
        ),
    })
}

//! Event-driven Euler simulation of single paths and parallel ensembles.
//!
//! Each step runs from `t` to the earliest of the grid step end, the next
//! Poisson epoch, the next observation time and the next switch. Switches are
//! decided from the pre-step state. A switch always lands strictly before the
//! step end, so when a switch and a Poisson epoch would coincide the jump is
//! applied first. Recorded paths are right-continuous: each grid point holds
//! the state after the event at that time.

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Estimate, ModelSpec, Regime};
use crate::rng::{derive_seed, seeded};
use crate::switching::{Mechanism, SwitchClock, SwitchEvent};

pub const DEFAULT_EXPLOSION_GUARD: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordMode {
    /// Every grid point, every event and every Brownian increment.
    FullPath,
    /// Observation times and the final state only.
    EndpointsOnly,
    /// Events, observations and the final state.
    EventLog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub step: f64,
    pub horizon: f64,
    pub seed: u64,
    pub mechanism: Mechanism,
    pub record: RecordMode,
    /// Extra times at which the state is recorded; merged into the grid.
    pub observe: Vec<f64>,
    pub explosion_guard: f64,
}

impl SimConfig {
    pub fn new(step: f64, horizon: f64, seed: u64) -> Self {
        SimConfig {
            step,
            horizon,
            seed,
            mechanism: Mechanism::Skorokhod,
            record: RecordMode::EndpointsOnly,
            observe: Vec::new(),
            explosion_guard: DEFAULT_EXPLOSION_GUARD,
        }
    }

    pub fn with_mechanism(mut self, mechanism: Mechanism) -> Self {
        self.mechanism = mechanism;
        self
    }

    pub fn with_record(mut self, record: RecordMode) -> Self {
        self.record = record;
        self
    }

    pub fn with_observe(mut self, observe: Vec<f64>) -> Self {
        self.observe = observe;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(Error::InvalidArgument(format!("step {} must be positive", self.step)));
        }
        if !(self.horizon.is_finite() && self.horizon >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "horizon {} must be non-negative",
                self.horizon
            )));
        }
        if !(self.explosion_guard > 0.0) {
            return Err(Error::InvalidArgument("explosion guard must be positive".into()));
        }
        if self.observe.iter().any(|t| !(t.is_finite() && *t >= 0.0 && *t <= self.horizon)) {
            return Err(Error::InvalidArgument(format!(
                "observation times must lie in [0, {}]",
                self.horizon
            )));
        }
        if self.observe.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidArgument("observation times must be sorted".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateSample {
    pub time: f64,
    pub x: Vec<f64>,
    pub regime: Regime,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum EventKind {
    Jump { mark: Vec<f64>, delta_x2: Vec<f64> },
    Switch(SwitchEvent),
}

/// One jump or switch. `pre_state` is the state just before the event and
/// `step` the number of completed simulation steps when it fired.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Event {
    pub time: f64,
    pub step: usize,
    pub pre_state: Vec<f64>,
    pub pre_regime: Regime,
    pub kind: EventKind,
}

impl Event {
    pub fn label(&self) -> &'static str {
        match self.kind {
            EventKind::Jump { .. } => "jump",
            EventKind::Switch(_) => "switch",
        }
    }
}

/// Output of one simulated path. Which fields are populated depends on the
/// [`RecordMode`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathSample {
    pub dim: usize,
    pub times: Vec<f64>,
    /// Row-major `times.len() x 2d`.
    pub states: Vec<f64>,
    pub regimes: Vec<Regime>,
    pub events: Vec<Event>,
    /// Row-major `steps x d` Brownian increments.
    pub increments: Vec<f64>,
    pub observations: Vec<StateSample>,
    pub final_state: StateSample,
    pub steps: usize,
}

impl PathSample {
    pub fn state(&self, i: usize) -> &[f64] {
        let n = 2 * self.dim;
        &self.states[i * n..(i + 1) * n]
    }

    pub fn switch_events(&self) -> impl Iterator<Item = &SwitchEvent> {
        self.events.iter().filter_map(|e| match &e.kind {
            EventKind::Switch(s) => Some(s),
            EventKind::Jump { .. } => None,
        })
    }
}

/// Poisson epochs on `[0, horizon]` with their marks.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonEpochs {
    pub times: Vec<f64>,
    pub marks: Vec<Vec<f64>>,
}

pub fn sample_poisson_epochs<R: Rng>(m: &ModelSpec, horizon: f64, rng: &mut R) -> PoissonEpochs {
    let measure = m.jump_measure();
    let rate = measure.total_mass();
    let mut out = PoissonEpochs {
        times: Vec::new(),
        marks: Vec::new(),
    };
    if rate <= 0.0 {
        return out;
    }
    let gap = Exp::new(rate).expect("positive rate");
    let mut t = 0.0;
    loop {
        t += gap.sample(rng);
        if t > horizon {
            return out;
        }
        let mut u = vec![0.0; measure.mark_dim()];
        measure.sample_mark(rng, &mut u);
        out.times.push(t);
        out.marks.push(u);
    }
}

/// Reusable buffers for coefficient evaluation.
#[derive(Debug, Clone)]
pub(crate) struct Scratch {
    b: Vec<f64>,
    sigma: Vec<f64>,
    pub(crate) c: Vec<f64>,
}

impl Scratch {
    pub(crate) fn new(d: usize) -> Self {
        Scratch {
            b: vec![0.0; d],
            sigma: vec![0.0; d * d],
            c: vec![0.0; d],
        }
    }
}

pub(crate) fn euler_into(
    m: &ModelSpec,
    x: &[f64],
    k: Regime,
    dt: f64,
    dw: &[f64],
    s: &mut Scratch,
    out: &mut [f64],
) -> Result<()> {
    let d = m.dim();
    m.eval_drift(x, k, &mut s.b)?;
    m.eval_diffusion(x, k, &mut s.sigma)?;
    for i in 0..d {
        out[i] = x[i] + x[d + i] * dt;
        let noise: f64 = (0..d).map(|j| s.sigma[i * d + j] * dw[j]).sum();
        out[d + i] = x[d + i] + s.b[i] * dt + noise;
    }
    Ok(())
}

/// One Euler step with Brownian increment `dw`; the position update uses the
/// pre-step velocity.
pub fn euler_step(m: &ModelSpec, x: &[f64], k: Regime, dt: f64, dw: &[f64]) -> Result<Vec<f64>> {
    m.check_state(x, k)?;
    if dw.len() != m.dim() {
        return Err(Error::InvalidArgument(format!(
            "increment has length {}, expected {}",
            dw.len(),
            m.dim()
        )));
    }
    let mut out = vec![0.0; m.state_len()];
    euler_into(m, x, k, dt, dw, &mut Scratch::new(m.dim()), &mut out)?;
    Ok(out)
}

/// Adds the jump `c(x, k, mark)` to the velocity block in place and returns
/// the increment.
pub(crate) fn apply_jump(
    m: &ModelSpec,
    x: &mut [f64],
    k: Regime,
    mark: &[f64],
    s: &mut Scratch,
) -> Result<()> {
    let d = m.dim();
    m.eval_jump(x, k, mark, &mut s.c)?;
    for i in 0..d {
        x[d + i] += s.c[i];
    }
    Ok(())
}

pub(crate) fn check_guard(x: &[f64], time: f64, guard: f64) -> Result<()> {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= guard {
        Ok(())
    } else {
        Err(Error::Explosion { time, norm })
    }
}

pub(crate) fn normal_increments<R: Rng>(dt: f64, rng: &mut R, dw: &mut [f64]) {
    let sd = dt.sqrt();
    for w in dw.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *w = sd * z;
    }
}

/// Source of regime switches within a step.
pub(crate) trait RegimeSource {
    fn propose<R: Rng>(
        &mut self,
        m: &ModelSpec,
        x: &[f64],
        k: Regime,
        t: f64,
        t_end: f64,
        rng: &mut R,
    ) -> Result<Option<(f64, Regime)>>;

    fn mechanism(&self) -> Mechanism;
}

impl RegimeSource for SwitchClock {
    fn propose<R: Rng>(
        &mut self,
        m: &ModelSpec,
        x: &[f64],
        k: Regime,
        t: f64,
        t_end: f64,
        rng: &mut R,
    ) -> Result<Option<(f64, Regime)>> {
        SwitchClock::propose(self, m, x, k, t, t_end, rng)
    }

    fn mechanism(&self) -> Mechanism {
        SwitchClock::mechanism(self)
    }
}

struct Recorder {
    mode: RecordMode,
    sample: PathSample,
}

impl Recorder {
    fn new(mode: RecordMode, dim: usize, x0: &[f64], k0: Regime) -> Self {
        Recorder {
            mode,
            sample: PathSample {
                dim,
                times: Vec::new(),
                states: Vec::new(),
                regimes: Vec::new(),
                events: Vec::new(),
                increments: Vec::new(),
                observations: Vec::new(),
                final_state: StateSample {
                    time: 0.0,
                    x: x0.to_vec(),
                    regime: k0,
                },
                steps: 0,
            },
        }
    }

    fn point(&mut self, t: f64, x: &[f64], k: Regime) {
        if self.mode == RecordMode::FullPath {
            self.sample.times.push(t);
            self.sample.states.extend_from_slice(x);
            self.sample.regimes.push(k);
        }
    }

    fn increment(&mut self, dw: &[f64]) {
        if self.mode == RecordMode::FullPath {
            self.sample.increments.extend_from_slice(dw);
        }
    }

    fn event(&mut self, e: impl FnOnce() -> Event) {
        if self.mode != RecordMode::EndpointsOnly {
            self.sample.events.push(e());
        }
    }

    fn observe(&mut self, t: f64, x: &[f64], k: Regime) {
        self.sample.observations.push(StateSample {
            time: t,
            x: x.to_vec(),
            regime: k,
        });
    }
}

/// Core simulation loop shared by direct and auxiliary-regime simulation.
/// End of the step starting at `t`, snapped onto `stop` when the grid would
/// otherwise leave a rounding-sized sliver before it.
pub(crate) fn step_end(t: f64, step: f64, stop: f64) -> f64 {
    let end = t + step;
    if end >= stop - 1e-9 * step {
        stop
    } else {
        end
    }
}

pub(crate) fn drive<R: Rng, S: RegimeSource>(
    m: &ModelSpec,
    cfg: &SimConfig,
    x0: &[f64],
    k0: Regime,
    source: &mut S,
    epochs: &PoissonEpochs,
    rng: &mut R,
) -> Result<PathSample> {
    let d = m.dim();
    let mut rec = Recorder::new(cfg.record, d, x0, k0);
    let mut x = x0.to_vec();
    let mut next = vec![0.0; 2 * d];
    let mut dw = vec![0.0; d];
    let mut scratch = Scratch::new(d);
    let (mut k, mut t) = (k0, 0.0);
    let (mut ep, mut oi) = (0usize, 0usize);
    let obs = &cfg.observe;

    while oi < obs.len() && obs[oi] <= 0.0 {
        rec.observe(obs[oi], &x, k);
        oi += 1;
    }
    rec.point(t, &x, k);

    while t < cfg.horizon {
        let stop = obs.get(oi).map_or(cfg.horizon, |&to| to.min(cfg.horizon));
        let mut t_end = step_end(t, cfg.step, stop);
        if let Some(&te) = epochs.times.get(ep) {
            t_end = t_end.min(te);
        }
        let switch = source.propose(m, &x, k, t, t_end, rng)?;
        let t_next = switch.map_or(t_end, |(s, _)| s);
        let dt = t_next - t;
        normal_increments(dt, rng, &mut dw);
        euler_into(m, &x, k, dt, &dw, &mut scratch, &mut next)?;
        std::mem::swap(&mut x, &mut next);
        t = t_next;
        rec.sample.steps += 1;
        rec.increment(&dw);
        let step = rec.sample.steps;

        if let Some((_, l)) = switch {
            let ev = SwitchEvent {
                time: t,
                from: k,
                to: l,
                mechanism: source.mechanism(),
            };
            rec.event(|| Event {
                time: t,
                step,
                pre_state: x.clone(),
                pre_regime: k,
                kind: EventKind::Switch(ev),
            });
            k = l;
        } else if epochs.times.get(ep) == Some(&t) {
            let mark = &epochs.marks[ep];
            let pre = (rec.mode != RecordMode::EndpointsOnly).then(|| x.clone());
            apply_jump(m, &mut x, k, mark, &mut scratch)?;
            if let Some(pre_state) = pre {
                let delta_x2 = scratch.c.clone();
                rec.event(|| Event {
                    time: t,
                    step,
                    pre_state,
                    pre_regime: k,
                    kind: EventKind::Jump {
                        mark: mark.clone(),
                        delta_x2,
                    },
                });
            }
            ep += 1;
        }
        rec.point(t, &x, k);
        check_guard(&x, t, cfg.explosion_guard)?;
        while oi < obs.len() && obs[oi] <= t {
            rec.observe(obs[oi], &x, k);
            oi += 1;
        }
    }
    rec.sample.final_state = StateSample { time: t, x, regime: k };
    Ok(rec.sample)
}

/// One path driven by the random stream seeded with `cfg.seed`.
pub fn simulate_path(m: &ModelSpec, cfg: &SimConfig, x0: &[f64], k0: Regime) -> Result<PathSample> {
    cfg.validate()?;
    m.check_state(x0, k0)?;
    let mut rng = seeded(cfg.seed);
    let epochs = sample_poisson_epochs(m, cfg.horizon, &mut rng);
    let mut clock = SwitchClock::new(cfg.mechanism, 0.0, m.rate_bound(), &mut rng);
    drive(m, cfg, x0, k0, &mut clock, &epochs, &mut rng)
}

/// Re-runs the Euler recursion of a full-path sample from its stored
/// increments and events and returns the reconstructed grid states.
pub fn replay(m: &ModelSpec, sample: &PathSample) -> Result<Vec<f64>> {
    if sample.times.is_empty() {
        return Err(Error::InvalidArgument("replay needs a full-path sample".into()));
    }
    let d = m.dim();
    let mut x = sample.state(0).to_vec();
    let mut k = sample.regimes[0];
    let mut states = x.clone();
    let mut next = vec![0.0; 2 * d];
    let mut scratch = Scratch::new(d);
    let mut events = sample.events.iter().peekable();
    for i in 0..sample.times.len() - 1 {
        let dt = sample.times[i + 1] - sample.times[i];
        euler_into(m, &x, k, dt, &sample.increments[i * d..(i + 1) * d], &mut scratch, &mut next)?;
        std::mem::swap(&mut x, &mut next);
        if let Some(e) = events.next_if(|e| e.step == i + 1) {
            match &e.kind {
                EventKind::Switch(s) => k = s.to,
                EventKind::Jump { mark, .. } => apply_jump(m, &mut x, k, mark, &mut scratch)?,
            }
        }
        states.extend_from_slice(&x);
    }
    Ok(states)
}

/// Runs `f(i)` for `i in 0..n` on the rayon pool and returns results in index
/// order, or every failure with its index.
pub(crate) fn collect_indexed<T: Send>(
    n: usize,
    f: impl Fn(usize) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    let results: Vec<Result<T>> = (0..n).into_par_iter().map(f).collect();
    let mut failures = Vec::new();
    let mut ok = Vec::with_capacity(n);
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => failures.push((i, e)),
        }
    }
    if failures.is_empty() {
        Ok(ok)
    } else {
        Err(Error::Ensemble { total: n, failures })
    }
}

/// Endpoint and observation samples of independent paths.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ensemble {
    pub finals: Vec<StateSample>,
    /// `observations[i][j]` is path `i` at `cfg.observe[j]`.
    pub observations: Vec<Vec<StateSample>>,
}

impl Ensemble {
    /// Sample mean and standard error of `f` over the final states.
    pub fn mean(&self, f: impl Fn(&StateSample) -> f64) -> Estimate {
        crate::stats::mean_stderr(self.finals.iter().map(f))
    }

    /// Samples at the `j`-th observation time.
    pub fn at(&self, j: usize) -> Vec<&StateSample> {
        self.observations.iter().map(|o| &o[j]).collect()
    }
}

/// Seed used for path `index` of an ensemble rooted at `seed`.
pub fn path_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, "path", index as u64)
}

/// `n_paths` independent paths from `(x0, k0)`; path `i` is exactly
/// [`simulate_path`] run with seed [`path_seed`]`(cfg.seed, i)`. Results do
/// not depend on the number of worker threads.
pub fn simulate_ensemble(
    m: &ModelSpec,
    cfg: &SimConfig,
    x0: &[f64],
    k0: Regime,
    n_paths: usize,
) -> Result<Ensemble> {
    cfg.validate()?;
    m.check_state(x0, k0)?;
    let base = cfg.clone().with_record(RecordMode::EndpointsOnly);
    let paths = collect_indexed(n_paths, |i| {
        simulate_path(m, &base.clone().with_seed(path_seed(cfg.seed, i)), x0, k0)
    })?;
    let mut finals = Vec::with_capacity(n_paths);
    let mut observations = Vec::with_capacity(n_paths);
    for p in paths {
        finals.push(p.final_state);
        observations.push(p.observations);
    }
    Ok(Ensemble {
        finals,
        observations,
    })
}

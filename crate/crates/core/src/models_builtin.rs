//! Built-in models: a one-dimensional damped oscillator with cube-root
//! velocity jumps and position-dependent switching, its Lyapunov function,
//! and a small fleet of degenerate models for testing.
//!
//! Damped oscillator (`d = 1`):
//!
//! ```text
//! b(x, k)    = alpha(k) x2            alpha(k) < -2 M^2
//! sigma(x, k) in (0, M]
//! c(x, k, u) = -cbrt(x2) gamma(k) u   gamma(k) u > 0 on the mark support
//! q_kl(x)    = exp(-2 (alpha(k) - alpha(l)) |x1|)       when alpha(l) < alpha(k)
//! q_kl(x)    = rho 2^-(k - l - 1)     for the nearest regimes below k otherwise
//! ```
//!
//! Lyapunov function `V(x, k) = exp(x2^2 + G(x1) x2 + U(x1, k))` with `G` a
//! smooth odd bridge equal to `sign(x1)` for `|x1| >= 1` and
//! `U(x1, k) = -alpha(k) phi(x1)`, `phi(s) = |s|` for `|s| >= 1`.

use std::sync::Arc;

use serde::Serialize;

use crate::change_of_measure::QHat;
use crate::error::{Error, Result};
use crate::model::{JumpMeasure, MarkSet, ModelSpec, Regime, TestFunction};

pub type RegimeFn = Arc<dyn Fn(Regime) -> f64 + Send + Sync>;
pub type SigmaFn = Arc<dyn Fn(&[f64], Regime) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct OscillatorParams {
    /// Bound `M` on the diffusion coefficient.
    pub m_bound: f64,
    pub regimes: usize,
    pub alpha: RegimeFn,
    pub gamma: RegimeFn,
    pub sigma: SigmaFn,
    /// Marks (scalar) with their masses.
    pub marks: Vec<(f64, f64)>,
    /// Rate `rho` of the closest upward move.
    pub upward_rate: f64,
    /// Number of regimes reachable upward from each regime.
    pub upward_neighbors: usize,
}

impl std::fmt::Debug for OscillatorParams {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OscillatorParams")
            .field("m_bound", &self.m_bound)
            .field("regimes", &self.regimes)
            .field("marks", &self.marks)
            .field("upward_rate", &self.upward_rate)
            .field("upward_neighbors", &self.upward_neighbors)
            .finish_non_exhaustive()
    }
}

impl Default for OscillatorParams {
    fn default() -> Self {
        OscillatorParams::with(0.5, 5, 0.5)
    }
}

impl OscillatorParams {
    /// `alpha(k) = -2M^2 - (k + 1)`, `gamma(k) = 1 / (k + 1)`,
    /// `sigma_k = M (k + 1) / (k + 2)`, marks `{0.5, 1.0}` with mass `0.25`
    /// each and `ceil(N / 2)` upward neighbours.
    pub fn with(m_bound: f64, regimes: usize, upward_rate: f64) -> Self {
        let m2 = m_bound * m_bound;
        OscillatorParams {
            m_bound,
            regimes,
            alpha: Arc::new(move |k| -2.0 * m2 - (k as f64 + 1.0)),
            gamma: Arc::new(|k| 1.0 / (k as f64 + 1.0)),
            sigma: Arc::new(move |_, k| m_bound * (k as f64 + 1.0) / (k as f64 + 2.0)),
            marks: vec![(0.5, 0.25), (1.0, 0.25)],
            upward_rate,
            upward_neighbors: regimes.div_ceil(2),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m2 = self.m_bound * self.m_bound;
        if !(self.m_bound.is_finite() && self.m_bound > 0.0) {
            return Err(Error::Param(format!("M = {} must be positive", self.m_bound)));
        }
        if self.regimes == 0 {
            return Err(Error::Param("at least one regime is required".into()));
        }
        if !(self.upward_rate.is_finite() && self.upward_rate >= 0.0) {
            return Err(Error::Param("upward rate must be non-negative".into()));
        }
        for k in 0..self.regimes {
            let a = (self.alpha)(k);
            if !(a < -2.0 * m2) {
                return Err(Error::Param(format!(
                    "alpha({k}) = {a} must be below -2 M^2 = {}",
                    -2.0 * m2
                )));
            }
            let g = (self.gamma)(k);
            if !(g.is_finite() && g != 0.0) {
                return Err(Error::Param(format!("gamma({k}) = {g} must be finite and non-zero")));
            }
            for &(u, w) in &self.marks {
                if !(g * u > 0.0 && w > 0.0 && w.is_finite()) {
                    return Err(Error::Param(format!(
                        "mark {u} with mass {w} violates gamma(k) u > 0 or positive mass"
                    )));
                }
            }
            for x1 in [-10.0, -1.0, 0.0, 1.0, 10.0] {
                let s = (self.sigma)(&[x1, 0.0], k);
                if !(s > 0.0 && s <= self.m_bound) {
                    return Err(Error::Param(format!(
                        "sigma = {s} at regime {k} must lie in (0, M]"
                    )));
                }
            }
        }
        if self.marks.is_empty() {
            return Err(Error::Param("the mark measure needs at least one atom".into()));
        }
        Ok(())
    }

    /// Upward rate from `k` to `l`, zero outside the neighbourhood.
    fn upward(&self, k: Regime, l: Regime) -> f64 {
        if l < k && k - l <= self.upward_neighbors {
            self.upward_rate * 0.5f64.powi((k - l - 1) as i32)
        } else {
            0.0
        }
    }

    /// `q_kl(x)` for `k != l`.
    pub fn rate(&self, x1: f64, k: Regime, l: Regime) -> f64 {
        let (ak, al) = ((self.alpha)(k), (self.alpha)(l));
        if al < ak {
            (-2.0 * (ak - al) * x1.abs()).exp()
        } else {
            self.upward(k, l)
        }
    }

    /// `sup_x q_kl(x)`: 1 for downward moves (attained at `x1 = 0`), the
    /// constant upward rate otherwise.
    pub fn rate_sup(&self, k: Regime, l: Regime) -> f64 {
        if k == l {
            0.0
        } else if (self.alpha)(l) < (self.alpha)(k) {
            1.0
        } else {
            self.upward(k, l)
        }
    }

    pub fn qhat(&self) -> QHat {
        let n = self.regimes;
        QHat::new(
            (0..n)
                .map(|k| (0..n).map(|l| self.rate_sup(k, l)).collect())
                .collect(),
        )
        .expect("square non-negative matrix")
    }

    /// Uniform bound on every exit rate.
    pub fn rate_bound(&self) -> f64 {
        let n = self.regimes;
        (0..n)
            .map(|k| (0..n).map(|l| self.rate_sup(k, l)).sum::<f64>())
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE)
    }

    pub fn jump_measure(&self) -> JumpMeasure {
        JumpMeasure::atoms(
            self.marks.iter().map(|&(u, _)| vec![u]).collect(),
            self.marks.iter().map(|&(_, w)| w).collect(),
        )
        .expect("validated marks")
    }
}

/// `-cbrt(x2) gamma u`.
pub fn oscillator_jump(x2: f64, gamma: f64, u: f64) -> f64 {
    -x2.cbrt() * gamma * u
}

pub fn build_oscillator(p: &OscillatorParams) -> Result<ModelSpec> {
    p.validate()?;
    let (pa, ps, pg, pq) = (p.clone(), p.clone(), p.clone(), p.clone());
    ModelSpec::builder("damped-oscillator", 1, p.regimes)
        .drift(move |x, k, out| out[0] = (pa.alpha)(k) * x[1])
        .diffusion(move |x, k, out| out[0] = (ps.sigma)(x, k))
        .jumps(p.jump_measure(), move |x, k, u, out| {
            out[0] = oscillator_jump(x[1], (pg.gamma)(k), u[0])
        })
        .rates(p.rate_bound(), move |x, k, l| pq.rate(x[0], k, l))
        .build()
}

/// Odd quintic bridge with `G(+-1) = +-1` and vanishing first and second
/// derivatives there; `sign(x1)` outside `[-1, 1]`.
pub fn bridge_g(s: f64) -> (f64, f64) {
    if s.abs() >= 1.0 {
        return (s.signum(), 0.0);
    }
    let s2 = s * s;
    (
        s * (15.0 - 10.0 * s2 + 3.0 * s2 * s2) / 8.0,
        15.0 * (1.0 - s2) * (1.0 - s2) / 8.0,
    )
}

/// Even convex bridge `phi` equal to `|s|` outside `[-1, 1]`, with its first
/// and second derivatives.
pub fn bridge_phi(s: f64) -> (f64, f64, f64) {
    if s.abs() >= 1.0 {
        return (s.abs(), s.signum(), 0.0);
    }
    let s2 = s * s;
    (
        0.375 + 0.75 * s2 - 0.125 * s2 * s2,
        1.5 * s - 0.5 * s2 * s,
        1.5 - 1.5 * s2,
    )
}

/// Lyapunov function of the damped oscillator.
#[derive(Clone)]
pub struct OscillatorLyapunov {
    params: OscillatorParams,
}

impl OscillatorLyapunov {
    pub fn new(params: &OscillatorParams) -> Self {
        OscillatorLyapunov {
            params: params.clone(),
        }
    }

    pub fn u(&self, x1: f64, k: Regime) -> f64 {
        -(self.params.alpha)(k) * bridge_phi(x1).0
    }

    pub fn exponent(&self, x: &[f64], k: Regime) -> f64 {
        x[1] * x[1] + bridge_g(x[0]).0 * x[1] + self.u(x[0], k)
    }

    pub fn value(&self, x: &[f64], k: Regime) -> f64 {
        self.exponent(x, k).exp()
    }

    /// `V` with analytic derivatives.
    pub fn test_function(&self) -> TestFunction {
        let (v, g1, g2, h2) = (self.clone(), self.clone(), self.clone(), self.clone());
        TestFunction::new(move |x, k| v.value(x, k))
            .with_grad_x1(move |x, k, out| {
                let (_, gp) = bridge_g(x[0]);
                let up = -(g1.params.alpha)(k) * bridge_phi(x[0]).1;
                out[0] = g1.value(x, k) * (gp * x[1] + up);
            })
            .with_grad_x2(move |x, k, out| {
                out[0] = g2.value(x, k) * (2.0 * x[1] + bridge_g(x[0]).0);
            })
            .with_hess_x2(move |x, k, out| {
                let a = 2.0 * x[1] + bridge_g(x[0]).0;
                out[0] = h2.value(x, k) * (a * a + 2.0);
            })
    }
}

/// `A V = -V W` split into its diffusion, drift, jump and switching parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WParts {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
}

impl WParts {
    pub fn total(&self) -> f64 {
        self.w1 + self.w2 + self.w3 + self.w4
    }
}

/// Closed-form `W_k(x)` with `A V(x, k) = -V(x, k) W_k(x)`.
pub fn oscillator_w(p: &OscillatorParams, lyap: &OscillatorLyapunov, x: &[f64], k: Regime) -> WParts {
    let (x1, x2) = (x[0], x[1]);
    let (g, gp) = bridge_g(x1);
    let alpha = (p.alpha)(k);
    let up = -alpha * bridge_phi(x1).1;
    let sigma = (p.sigma)(x, k);
    let s2 = sigma * sigma;
    let a = 2.0 * x2 + g;
    let w1 = -0.5 * s2 * a * a - s2;
    let w2 = -gp * x2 * x2 - x2 * up - alpha * x2 * g - 2.0 * alpha * x2 * x2;
    let r = x2.cbrt();
    let gamma = (p.gamma)(k);
    let w3 = -p
        .marks
        .iter()
        .map(|&(u, mass)| mass * ((r * r * gamma * gamma * u * u - a * r * gamma * u).exp() - 1.0))
        .sum::<f64>();
    let uk = lyap.u(x1, k);
    let w4 = -(0..p.regimes)
        .filter(|&l| l != k)
        .map(|l| p.rate(x1, k, l) * ((lyap.u(x1, l) - uk).exp() - 1.0))
        .sum::<f64>();
    WParts { w1, w2, w3, w4 }
}

/// Bundle of the damped oscillator with everything needed to analyse it.
#[derive(Clone)]
pub struct Oscillator {
    pub params: OscillatorParams,
    pub model: ModelSpec,
    pub lyapunov: OscillatorLyapunov,
    pub qhat: QHat,
}

impl Oscillator {
    pub fn new(params: OscillatorParams) -> Result<Self> {
        let model = build_oscillator(&params)?;
        Ok(Oscillator {
            lyapunov: OscillatorLyapunov::new(&params),
            qhat: params.qhat(),
            model,
            params,
        })
    }

    pub fn marks(&self) -> MarkSet {
        MarkSet::for_measure(self.model.jump_measure(), 0, &mut crate::rng::seeded(0))
            .expect("atoms need no samples")
    }
}

/// Names accepted by [`fleet_model`].
pub const FLEET: [&str; 6] = [
    "zero-everything",
    "pure-jump",
    "pure-switch",
    "state-independent-rates",
    "ou-no-switch",
    "damped-oscillator",
];

/// One model of the test fleet by name.
pub fn fleet_model(name: &str) -> Result<ModelSpec> {
    let m = match name {
        "zero-everything" => ModelSpec::builder(name, 1, 2).build()?,
        "pure-jump" => ModelSpec::builder(name, 1, 1)
            .jumps(
                JumpMeasure::atoms(vec![vec![1.0], vec![-0.5]], vec![0.5, 0.5])?,
                |_, _, u, out| out[0] = u[0],
            )
            .build()?,
        "pure-switch" => ModelSpec::builder(name, 1, 2)
            .rates(2.0, |_, k, _| if k == 0 { 1.0 } else { 2.0 })
            .build()?,
        "state-independent-rates" => ModelSpec::builder(name, 1, 3)
            .drift(|x, k, out| out[0] = -(k as f64 + 1.0) * x[1])
            .diffusion(|_, _, out| out[0] = 0.5)
            .jumps(JumpMeasure::atoms(vec![vec![0.3]], vec![1.0])?, |_, _, u, out| {
                out[0] = u[0]
            })
            .rates(1.0, |_, k, l| if l == (k + 1) % 3 { 0.7 } else { 0.3 })
            .build()?,
        "ou-no-switch" => ModelSpec::builder(name, 1, 1)
            .drift(|x, _, out| out[0] = -x[1])
            .diffusion(|_, _, out| out[0] = 1.0)
            .build()?,
        "damped-oscillator" => build_oscillator(&OscillatorParams::default())?,
        other => return Err(Error::Param(format!("unknown model `{other}`"))),
    };
    Ok(m)
}

/// The six fleet models in catalogue order.
pub fn test_fleet() -> Vec<ModelSpec> {
    FLEET
        .iter()
        .map(|n| fleet_model(n).expect("fleet models are valid"))
        .collect()
}

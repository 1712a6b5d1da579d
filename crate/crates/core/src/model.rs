//! System description and the generator of the switching jump diffusion
//!
//! ```text
//! dX1 = X2 dt
//! dX2 = b(X, K) dt + sigma(X, K) dB + int c(X-, K-, u) N(dt, du)
//! P{K(t + h) = l | K(t) = k, X(t) = x} = q_kl(x) h + o(h)
//! ```
//!
//! Coefficients are callbacks writing into caller-provided buffers so the
//! simulation loop never allocates.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, RngCore};

use crate::error::{Error, Result};

/// 0-based regime index.
pub type Regime = usize;

/// `(x, k, out)`; writes a vector of length `d` (drift) or a row-major
/// `d x d` matrix (diffusion).
pub type VectorField = Arc<dyn Fn(&[f64], Regime, &mut [f64]) + Send + Sync>;
/// `(x, k, mark, out)`; writes the velocity jump of length `d`.
pub type JumpField = Arc<dyn Fn(&[f64], Regime, &[f64], &mut [f64]) + Send + Sync>;
/// `(x, k, l) -> q_kl(x)`; never called with `k == l`.
pub type RateField = Arc<dyn Fn(&[f64], Regime, Regime) -> f64 + Send + Sync>;
pub type ScalarField = Arc<dyn Fn(&[f64], Regime) -> f64 + Send + Sync>;
pub type MarkSampler = Arc<dyn Fn(&mut dyn RngCore, &mut [f64]) + Send + Sync>;

/// Relative slack allowed when comparing an exit rate with its bound.
pub const RATE_BOUND_RTOL: f64 = 1e-12;

/// Finite Levy measure of the jump marks.
#[derive(Clone)]
pub enum JumpMeasure {
    Zero,
    /// Finitely many marks; jump integrals are evaluated exactly.
    Atoms {
        marks: Vec<Vec<f64>>,
        masses: Vec<f64>,
        total: f64,
    },
    /// Total mass plus a sampler of the normalized mark law.
    Sampled {
        total_mass: f64,
        mark_dim: usize,
        sampler: MarkSampler,
    },
}

impl fmt::Debug for JumpMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            JumpMeasure::Zero => write!(f, "Zero"),
            JumpMeasure::Atoms { marks, masses, .. } => f
                .debug_struct("Atoms")
                .field("marks", marks)
                .field("masses", masses)
                .finish(),
            JumpMeasure::Sampled {
                total_mass,
                mark_dim,
                ..
            } => f
                .debug_struct("Sampled")
                .field("total_mass", total_mass)
                .field("mark_dim", mark_dim)
                .finish(),
        }
    }
}

impl JumpMeasure {
    pub fn atoms(marks: Vec<Vec<f64>>, masses: Vec<f64>) -> Result<Self> {
        if marks.is_empty() || marks.len() != masses.len() {
            return Err(Error::Param(
                "jump atoms need one mass per mark and at least one mark".into(),
            ));
        }
        let dim = marks[0].len();
        if dim == 0 || marks.iter().any(|m| m.len() != dim) {
            return Err(Error::Param("jump marks must share a positive dimension".into()));
        }
        if masses.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Param("jump masses must be positive and finite".into()));
        }
        let total = masses.iter().sum();
        Ok(JumpMeasure::Atoms {
            marks,
            masses,
            total,
        })
    }

    pub fn sampled(total_mass: f64, mark_dim: usize, sampler: MarkSampler) -> Result<Self> {
        if !(total_mass.is_finite() && total_mass >= 0.0) || mark_dim == 0 {
            return Err(Error::Param(
                "sampled jump measure needs finite non-negative mass and a mark dimension".into(),
            ));
        }
        Ok(JumpMeasure::Sampled {
            total_mass,
            mark_dim,
            sampler,
        })
    }

    pub fn total_mass(&self) -> f64 {
        match self {
            JumpMeasure::Zero => 0.0,
            JumpMeasure::Atoms { total, .. } => *total,
            JumpMeasure::Sampled { total_mass, .. } => *total_mass,
        }
    }

    pub fn mark_dim(&self) -> usize {
        match self {
            JumpMeasure::Zero => 1,
            JumpMeasure::Atoms { marks, .. } => marks[0].len(),
            JumpMeasure::Sampled { mark_dim, .. } => *mark_dim,
        }
    }

    /// Draws a mark from the normalized measure into `out`.
    pub fn sample_mark<R: Rng>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            JumpMeasure::Zero => out.fill(0.0),
            JumpMeasure::Atoms {
                marks,
                masses,
                total,
            } => {
                let u = rng.random::<f64>() * total;
                let mut acc = 0.0;
                let mut pick = marks.len() - 1;
                for (i, w) in masses.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                out.copy_from_slice(&marks[pick]);
            }
            JumpMeasure::Sampled { sampler, .. } => sampler(rng, out),
        }
    }
}

/// Optional Lipschitz constants used only for reporting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzHint {
    pub coefficients: f64,
    pub rates: f64,
}

/// Complete description of one switching jump diffusion.
#[derive(Clone)]
pub struct ModelSpec {
    name: String,
    dim: usize,
    regime_count: usize,
    drift: VectorField,
    diffusion: VectorField,
    jump_coeff: JumpField,
    jump_measure: JumpMeasure,
    rates: RateField,
    rate_bound: f64,
    lipschitz: Option<LipschitzHint>,
    truncation_eps: f64,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("regime_count", &self.regime_count)
            .field("jump_measure", &self.jump_measure)
            .field("rate_bound", &self.rate_bound)
            .field("lipschitz", &self.lipschitz)
            .field("truncation_eps", &self.truncation_eps)
            .finish_non_exhaustive()
    }
}

/// Builder for [`ModelSpec`]; every coefficient defaults to zero.
pub struct ModelBuilder {
    spec: ModelSpec,
}

impl ModelBuilder {
    pub fn drift(mut self, f: impl Fn(&[f64], Regime, &mut [f64]) + Send + Sync + 'static) -> Self {
        self.spec.drift = Arc::new(f);
        self
    }

    pub fn diffusion(
        mut self,
        f: impl Fn(&[f64], Regime, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.spec.diffusion = Arc::new(f);
        self
    }

    pub fn jumps(
        mut self,
        measure: JumpMeasure,
        coeff: impl Fn(&[f64], Regime, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.spec.jump_measure = measure;
        self.spec.jump_coeff = Arc::new(coeff);
        self
    }

    /// Off-diagonal rates and the uniform bound `H` on every exit rate.
    pub fn rates(
        mut self,
        bound: f64,
        q: impl Fn(&[f64], Regime, Regime) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.spec.rate_bound = bound;
        self.spec.rates = Arc::new(q);
        self
    }

    pub fn lipschitz(mut self, hint: LipschitzHint) -> Self {
        self.spec.lipschitz = Some(hint);
        self
    }

    pub fn truncation_eps(mut self, eps: f64) -> Self {
        self.spec.truncation_eps = eps;
        self
    }

    pub fn build(self) -> Result<ModelSpec> {
        let s = self.spec;
        if s.dim == 0 {
            return Err(Error::Param("dimension must be positive".into()));
        }
        if s.regime_count == 0 {
            return Err(Error::Param("at least one regime is required".into()));
        }
        if !(s.rate_bound.is_finite() && s.rate_bound > 0.0) {
            return Err(Error::Param(format!(
                "rate bound must be positive and finite, got {}",
                s.rate_bound
            )));
        }
        if !(s.truncation_eps.is_finite() && s.truncation_eps >= 0.0) {
            return Err(Error::Param("truncation epsilon must be non-negative".into()));
        }
        Ok(s)
    }
}

impl ModelSpec {
    pub fn builder(name: impl Into<String>, dim: usize, regime_count: usize) -> ModelBuilder {
        ModelBuilder {
            spec: ModelSpec {
                name: name.into(),
                dim,
                regime_count,
                drift: Arc::new(|_, _, out| out.fill(0.0)),
                diffusion: Arc::new(|_, _, out| out.fill(0.0)),
                jump_coeff: Arc::new(|_, _, _, out| out.fill(0.0)),
                jump_measure: JumpMeasure::Zero,
                rates: Arc::new(|_, _, _| 0.0),
                rate_bound: 1.0,
                lipschitz: None,
                truncation_eps: 0.0,
            },
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Length of the state vector, `2d`.
    pub fn state_len(&self) -> usize {
        2 * self.dim
    }

    pub fn regime_count(&self) -> usize {
        self.regime_count
    }

    pub fn rate_bound(&self) -> f64 {
        self.rate_bound
    }

    pub fn jump_measure(&self) -> &JumpMeasure {
        &self.jump_measure
    }

    pub fn lipschitz(&self) -> Option<LipschitzHint> {
        self.lipschitz
    }

    pub fn truncation_eps(&self) -> f64 {
        self.truncation_eps
    }

    pub fn check_state(&self, x: &[f64], k: Regime) -> Result<()> {
        if x.len() != self.state_len() {
            return Err(Error::InvalidArgument(format!(
                "state has length {}, expected {}",
                x.len(),
                self.state_len()
            )));
        }
        if k >= self.regime_count {
            return Err(Error::InvalidArgument(format!(
                "regime {k} out of range 0..{}",
                self.regime_count
            )));
        }
        Ok(())
    }

    fn finite_or(&self, name: &'static str, v: &[f64], x: &[f64], k: Regime) -> Result<()> {
        if v.iter().all(|c| c.is_finite()) {
            Ok(())
        } else {
            Err(Error::Coefficient {
                coefficient: name,
                x: x.to_vec(),
                regime: k,
            })
        }
    }

    pub fn eval_drift(&self, x: &[f64], k: Regime, out: &mut [f64]) -> Result<()> {
        (self.drift)(x, k, out);
        self.finite_or("drift", out, x, k)
    }

    pub fn eval_diffusion(&self, x: &[f64], k: Regime, out: &mut [f64]) -> Result<()> {
        (self.diffusion)(x, k, out);
        self.finite_or("diffusion", out, x, k)
    }

    pub fn eval_jump(&self, x: &[f64], k: Regime, mark: &[f64], out: &mut [f64]) -> Result<()> {
        (self.jump_coeff)(x, k, mark, out);
        self.finite_or("jump", out, x, k)
    }

    /// `q_kl(x)`, zero on the diagonal.
    pub fn rate(&self, x: &[f64], k: Regime, l: Regime) -> Result<f64> {
        if k == l {
            return Ok(0.0);
        }
        let v = (self.rates)(x, k, l);
        if v.is_finite() && v >= 0.0 {
            Ok(v)
        } else {
            Err(Error::InvalidRate {
                from: k,
                to: l,
                value: v,
                x: x.to_vec(),
            })
        }
    }

    fn check_bound(&self, x: &[f64], k: Regime, total: f64) -> Result<f64> {
        if total > self.rate_bound * (1.0 + RATE_BOUND_RTOL) {
            Err(Error::RateBound {
                regime: k,
                total,
                bound: self.rate_bound,
                x: x.to_vec(),
            })
        } else {
            Ok(total)
        }
    }

    /// `q_k(x) = sum_{l != k} q_kl(x)`, checked against the rate bound.
    pub fn exit_rate(&self, x: &[f64], k: Regime) -> Result<f64> {
        let mut total = 0.0;
        for l in 0..self.regime_count {
            total += self.rate(x, k, l)?;
        }
        self.check_bound(x, k, total)
    }

    /// Regime whose stacked rate interval contains `u`, scanning targets in
    /// increasing order and skipping `k`. `None` when `u` lies beyond the row
    /// total. The whole row is evaluated so the bound check always runs.
    pub fn select_target(&self, x: &[f64], k: Regime, u: f64) -> Result<Option<Regime>> {
        let mut total = 0.0;
        let mut hit = None;
        for l in 0..self.regime_count {
            let q = self.rate(x, k, l)?;
            if hit.is_none() && q > 0.0 && u >= total && u < total + q {
                hit = Some(l);
            }
            total += q;
        }
        self.check_bound(x, k, total)?;
        Ok(hit)
    }
}

/// Scalar function of the state with optional analytic derivatives.
/// Missing derivatives fall back to central finite differences.
#[derive(Clone)]
pub struct TestFunction {
    value: ScalarField,
    grad_x1: Option<VectorField>,
    grad_x2: Option<VectorField>,
    hess_x2: Option<VectorField>,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction")
            .field("grad_x1", &self.grad_x1.is_some())
            .field("grad_x2", &self.grad_x2.is_some())
            .field("hess_x2", &self.hess_x2.is_some())
            .finish()
    }
}

/// Finite-difference step for coordinate value `xi`.
pub fn fd_step(xi: f64) -> f64 {
    1e-5 * (1.0 + xi.abs())
}

impl TestFunction {
    pub fn new(f: impl Fn(&[f64], Regime) -> f64 + Send + Sync + 'static) -> Self {
        TestFunction {
            value: Arc::new(f),
            grad_x1: None,
            grad_x2: None,
            hess_x2: None,
        }
    }

    pub fn constant(c: f64) -> Self {
        TestFunction::new(move |_, _| c)
            .with_grad_x1(|_, _, out| out.fill(0.0))
            .with_grad_x2(|_, _, out| out.fill(0.0))
            .with_hess_x2(|_, _, out| out.fill(0.0))
    }

    pub fn with_grad_x1(
        mut self,
        g: impl Fn(&[f64], Regime, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.grad_x1 = Some(Arc::new(g));
        self
    }

    pub fn with_grad_x2(
        mut self,
        g: impl Fn(&[f64], Regime, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.grad_x2 = Some(Arc::new(g));
        self
    }

    /// Row-major `d x d` Hessian in the velocity block.
    pub fn with_hess_x2(
        mut self,
        h: impl Fn(&[f64], Regime, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.hess_x2 = Some(Arc::new(h));
        self
    }

    pub fn value(&self, x: &[f64], k: Regime) -> f64 {
        (self.value)(x, k)
    }

    pub fn has_analytic_derivatives(&self) -> bool {
        self.grad_x1.is_some() && self.grad_x2.is_some() && self.hess_x2.is_some()
    }

    pub fn grad_x1(&self, x: &[f64], k: Regime, out: &mut [f64]) {
        match &self.grad_x1 {
            Some(g) => g(x, k, out),
            None => self.fd_grad(x, k, 0, out),
        }
    }

    pub fn grad_x2(&self, x: &[f64], k: Regime, out: &mut [f64]) {
        let d = x.len() / 2;
        match &self.grad_x2 {
            Some(g) => g(x, k, out),
            None => self.fd_grad(x, k, d, out),
        }
    }

    pub fn hess_x2(&self, x: &[f64], k: Regime, out: &mut [f64]) {
        match &self.hess_x2 {
            Some(h) => h(x, k, out),
            None => self.fd_hess_x2(x, k, out),
        }
    }

    /// Central differences of the block of `d` coordinates starting at
    /// `offset`.
    pub fn fd_grad(&self, x: &[f64], k: Regime, offset: usize, out: &mut [f64]) {
        let mut p = x.to_vec();
        for (i, o) in out.iter_mut().enumerate() {
            let j = offset + i;
            let h = fd_step(x[j]);
            p[j] = x[j] + h;
            let fp = self.value(&p, k);
            p[j] = x[j] - h;
            let fm = self.value(&p, k);
            p[j] = x[j];
            *o = (fp - fm) / (2.0 * h);
        }
    }

    /// Nested central differences in the velocity block.
    pub fn fd_hess_x2(&self, x: &[f64], k: Regime, out: &mut [f64]) {
        let d = x.len() / 2;
        let mut p = x.to_vec();
        for i in 0..d {
            for j in 0..d {
                let (a, b) = (d + i, d + j);
                let (ha, hb) = (fd_step(x[a]), fd_step(x[b]));
                let mut corner = |sa: f64, sb: f64| {
                    p[a] += sa * ha;
                    p[b] += sb * hb;
                    let v = self.value(&p, k);
                    p[a] = x[a];
                    p[b] = x[b];
                    v
                };
                let v = corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0)
                    + corner(-1.0, -1.0);
                out[i * d + j] = v / (4.0 * ha * hb);
            }
        }
    }

    /// Largest disagreement between analytic and finite-difference
    /// derivatives over `probes`, relative to `max(|analytic|, 1)`.
    pub fn derivative_mismatch(&self, probes: &[(Vec<f64>, Regime)]) -> f64 {
        let mut worst: f64 = 0.0;
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(1.0);
        for (x, k) in probes {
            let d = x.len() / 2;
            let (mut an, mut fd) = (vec![0.0; d * d], vec![0.0; d * d]);
            if let Some(g) = &self.grad_x1 {
                g(x, *k, &mut an[..d]);
                self.fd_grad(x, *k, 0, &mut fd[..d]);
                for i in 0..d {
                    worst = worst.max(rel(an[i], fd[i]));
                }
            }
            if let Some(g) = &self.grad_x2 {
                g(x, *k, &mut an[..d]);
                self.fd_grad(x, *k, d, &mut fd[..d]);
                for i in 0..d {
                    worst = worst.max(rel(an[i], fd[i]));
                }
            }
            if let Some(h) = &self.hess_x2 {
                h(x, *k, &mut an);
                self.fd_hess_x2(x, *k, &mut fd);
                for i in 0..d * d {
                    worst = worst.max(rel(an[i], fd[i]));
                }
            }
        }
        worst
    }
}

/// A Monte Carlo or exact estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate { value, stderr: 0.0 }
    }
}

/// Quadrature nodes for integrals against the jump measure: the atoms
/// themselves, or equally weighted Monte Carlo draws.
#[derive(Debug, Clone)]
pub struct MarkSet {
    marks: Vec<Vec<f64>>,
    weights: Vec<f64>,
    exact: bool,
}

impl MarkSet {
    pub fn for_measure<R: Rng>(measure: &JumpMeasure, n_mc: usize, rng: &mut R) -> Result<Self> {
        match measure {
            JumpMeasure::Zero => Ok(MarkSet {
                marks: Vec::new(),
                weights: Vec::new(),
                exact: true,
            }),
            JumpMeasure::Atoms { marks, masses, .. } => Ok(MarkSet {
                marks: marks.clone(),
                weights: masses.clone(),
                exact: true,
            }),
            JumpMeasure::Sampled {
                total_mass,
                mark_dim,
                ..
            } => {
                if *total_mass == 0.0 {
                    return Ok(MarkSet {
                        marks: Vec::new(),
                        weights: Vec::new(),
                        exact: true,
                    });
                }
                if n_mc == 0 {
                    return Err(Error::InvalidArgument(
                        "Monte Carlo jump integral needs at least one mark sample".into(),
                    ));
                }
                let mut marks = Vec::with_capacity(n_mc);
                for _ in 0..n_mc {
                    let mut u = vec![0.0; *mark_dim];
                    measure.sample_mark(rng, &mut u);
                    marks.push(u);
                }
                Ok(MarkSet {
                    marks,
                    weights: vec![total_mass / n_mc as f64; n_mc],
                    exact: false,
                })
            }
        }
    }

    pub fn is_exact(&self) -> bool {
        self.exact
    }

    pub fn len(&self) -> usize {
        self.marks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.marks.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.marks
            .iter()
            .map(Vec::as_slice)
            .zip(self.weights.iter().copied())
    }

    /// Integral of `g` against the nodes, with a standard error for Monte
    /// Carlo nodes and zero for exact ones.
    pub fn integrate(&self, mut g: impl FnMut(&[f64]) -> Result<f64>) -> Result<Estimate> {
        if self.marks.is_empty() {
            return Ok(Estimate::exact(0.0));
        }
        let mut vals = Vec::with_capacity(self.marks.len());
        let mut sum = 0.0;
        for (u, w) in self.iter() {
            let v = g(u)?;
            sum += w * v;
            vals.push(v);
        }
        if self.exact {
            return Ok(Estimate::exact(sum));
        }
        let n = vals.len() as f64;
        let total: f64 = self.weights.iter().sum();
        let mean = vals.iter().sum::<f64>() / n;
        let var = if vals.len() > 1 {
            vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Ok(Estimate {
            value: sum,
            stderr: total * (var / n).sqrt(),
        })
    }
}

/// Pieces of the generator applied to a test function.
pub mod generator {
    use super::*;

    /// `<grad_x1 f, x2> + <b, grad_x2 f> + tr(sigma sigma' hess_x2 f) / 2`.
    pub fn diffusion_part(m: &ModelSpec, f: &TestFunction, x: &[f64], k: Regime) -> Result<f64> {
        m.check_state(x, k)?;
        let d = m.dim();
        let (x2, mut b, mut s) = (&x[d..], vec![0.0; d], vec![0.0; d * d]);
        m.eval_drift(x, k, &mut b)?;
        m.eval_diffusion(x, k, &mut s)?;
        let (mut g1, mut g2, mut hess) = (vec![0.0; d], vec![0.0; d], vec![0.0; d * d]);
        f.grad_x1(x, k, &mut g1);
        f.grad_x2(x, k, &mut g2);
        f.hess_x2(x, k, &mut hess);
        let mut v = 0.0;
        for i in 0..d {
            v += g1[i] * x2[i] + b[i] * g2[i];
        }
        for i in 0..d {
            for j in 0..d {
                let a_ij: f64 = (0..d).map(|r| s[i * d + r] * s[j * d + r]).sum();
                v += 0.5 * a_ij * hess[j * d + i];
            }
        }
        Ok(v)
    }

    /// `int [f(x1, x2 + c(x, k, u), k) - f(x, k)] Pi(du)` over `marks`.
    pub fn jump_part(
        m: &ModelSpec,
        f: &TestFunction,
        x: &[f64],
        k: Regime,
        marks: &MarkSet,
    ) -> Result<Estimate> {
        m.check_state(x, k)?;
        let d = m.dim();
        let base = f.value(x, k);
        let mut shifted = x.to_vec();
        let mut c = vec![0.0; d];
        marks.integrate(|u| {
            m.eval_jump(x, k, u, &mut c)?;
            for i in 0..d {
                shifted[d + i] = x[d + i] + c[i];
            }
            Ok(f.value(&shifted, k) - base)
        })
    }

    /// [`jump_part`] with fresh marks: exact for atoms, `n_mc` draws
    /// otherwise.
    pub fn jump_part_mc<R: Rng>(
        m: &ModelSpec,
        f: &TestFunction,
        x: &[f64],
        k: Regime,
        n_mc: usize,
        rng: &mut R,
    ) -> Result<Estimate> {
        let marks = MarkSet::for_measure(m.jump_measure(), n_mc, rng)?;
        jump_part(m, f, x, k, &marks)
    }

    /// `sum_{l != k} q_kl(x) (f(x, l) - f(x, k))`.
    pub fn switch_part(m: &ModelSpec, f: &TestFunction, x: &[f64], k: Regime) -> Result<f64> {
        m.check_state(x, k)?;
        m.exit_rate(x, k)?;
        let base = f.value(x, k);
        let mut v = 0.0;
        for l in 0..m.regime_count() {
            if l != k {
                let q = m.rate(x, k, l)?;
                if q > 0.0 {
                    v += q * (f.value(x, l) - base);
                }
            }
        }
        Ok(v)
    }

    pub fn apply(
        m: &ModelSpec,
        f: &TestFunction,
        x: &[f64],
        k: Regime,
        marks: &MarkSet,
    ) -> Result<Estimate> {
        let jump = jump_part(m, f, x, k, marks)?;
        Ok(Estimate {
            value: diffusion_part(m, f, x, k)? + jump.value + switch_part(m, f, x, k)?,
            stderr: jump.stderr,
        })
    }

    pub fn apply_mc<R: Rng>(
        m: &ModelSpec,
        f: &TestFunction,
        x: &[f64],
        k: Regime,
        n_mc: usize,
        rng: &mut R,
    ) -> Result<Estimate> {
        let marks = MarkSet::for_measure(m.jump_measure(), n_mc, rng)?;
        apply(m, f, x, k, &marks)
    }
}

#[cfg(test)]
mod tests {
    use super::generator::*;
    use super::*;
    use crate::rng::seeded;

    fn ou(b_scale: f64) -> ModelSpec {
        ModelSpec::builder("ou", 1, 1)
            .drift(move |x, _, out| out[0] = -b_scale * x[1])
            .diffusion(|_, _, out| out[0] = 1.0)
            .build()
            .unwrap()
    }

    fn x2_squared() -> TestFunction {
        TestFunction::new(|x, _| x[1] * x[1])
    }

    #[test]
    fn diffusion_part_of_ou_on_square() {
        // -x2 * 2 x2 + 1 = -1 at x2 = 1
        let v = diffusion_part(&ou(1.0), &x2_squared(), &[0.0, 1.0], 0).unwrap();
        assert!((v + 1.0).abs() < 1e-6, "{v}");
    }

    #[test]
    fn diffusion_part_uses_position_gradient() {
        let m = ModelSpec::builder("free", 1, 1).build().unwrap();
        let f = TestFunction::new(|x, _| x[0] * x[0]);
        // 2 x1 x2
        let v = diffusion_part(&m, &f, &[1.5, -2.0], 0).unwrap();
        assert!((v + 6.0).abs() < 1e-6, "{v}");
    }

    #[test]
    fn jump_part_with_unit_atom_is_mark() {
        let u0 = 0.7;
        let m = ModelSpec::builder("j", 1, 1)
            .jumps(JumpMeasure::atoms(vec![vec![u0]], vec![1.0]).unwrap(), |_, _, u, out| {
                out[0] = u[0]
            })
            .build()
            .unwrap();
        let f = TestFunction::new(|x, _| x[1]);
        let e = jump_part_mc(&m, &f, &[0.0, 0.3], 0, 0, &mut seeded(1)).unwrap();
        assert!((e.value - u0).abs() < 1e-15);
        assert_eq!(e.stderr, 0.0);
    }

    #[test]
    fn jump_part_monte_carlo_uniform_marks() {
        let measure = JumpMeasure::sampled(
            2.0,
            1,
            Arc::new(|rng: &mut dyn RngCore, out: &mut [f64]| out[0] = rng.random::<f64>()),
        )
        .unwrap();
        let m = ModelSpec::builder("j", 1, 1)
            .jumps(measure, |_, _, u, out| out[0] = u[0])
            .build()
            .unwrap();
        let f = TestFunction::new(|x, _| x[1]);
        let e = jump_part_mc(&m, &f, &[0.0, 0.0], 0, 100_000, &mut seeded(2)).unwrap();
        assert!(e.stderr > 0.0);
        assert!((e.value - 1.0).abs() < 4.0 * e.stderr, "{e:?}");
    }

    #[test]
    fn jump_part_requires_samples_for_sampled_measure() {
        let measure =
            JumpMeasure::sampled(1.0, 1, Arc::new(|_: &mut dyn RngCore, out: &mut [f64]| out[0] = 1.0))
                .unwrap();
        let m = ModelSpec::builder("j", 1, 1)
            .jumps(measure, |_, _, u, out| out[0] = u[0])
            .build()
            .unwrap();
        let f = TestFunction::new(|x, _| x[1]);
        assert!(matches!(
            jump_part_mc(&m, &f, &[0.0, 0.0], 0, 0, &mut seeded(3)),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn switch_part_two_regimes() {
        let m = ModelSpec::builder("s", 1, 2)
            .rates(2.0, |_, k, _| if k == 0 { 2.0 } else { 0.0 })
            .build()
            .unwrap();
        let f = TestFunction::new(|_, k| if k == 0 { 0.0 } else { 5.0 });
        assert_eq!(switch_part(&m, &f, &[0.0, 0.0], 0).unwrap(), 10.0);
    }

    #[test]
    fn rate_bound_violation_is_reported() {
        let m = ModelSpec::builder("s", 1, 3)
            .rates(1.0, |_, _, _| 0.6)
            .build()
            .unwrap();
        let err = m.exit_rate(&[0.0, 0.0], 0).unwrap_err();
        assert!(matches!(err, Error::RateBound { regime: 0, .. }), "{err}");
        let f = TestFunction::constant(0.0);
        assert!(switch_part(&m, &f, &[0.0, 0.0], 1).is_err());
    }

    #[test]
    fn rate_at_bound_is_accepted() {
        let m = ModelSpec::builder("s", 1, 3)
            .rates(1.0, |_, _, _| 0.5)
            .build()
            .unwrap();
        assert_eq!(m.exit_rate(&[0.0, 0.0], 2).unwrap(), 1.0);
    }

    #[test]
    fn non_finite_drift_is_a_coefficient_error() {
        let m = ModelSpec::builder("bad", 1, 1)
            .drift(|x, _, out| out[0] = 1.0 / x[1])
            .build()
            .unwrap();
        let f = TestFunction::new(|x, _| x[1]);
        let err = diffusion_part(&m, &f, &[0.0, 0.0], 0).unwrap_err();
        assert!(matches!(err, Error::Coefficient { coefficient: "drift", .. }));
    }

    #[test]
    fn negative_rate_is_rejected() {
        let m = ModelSpec::builder("neg", 1, 2)
            .rates(1.0, |_, _, _| -0.1)
            .build()
            .unwrap();
        assert!(matches!(m.exit_rate(&[0.0, 0.0], 0), Err(Error::InvalidRate { .. })));
    }

    #[test]
    fn builder_rejects_bad_shapes() {
        assert!(ModelSpec::builder("a", 0, 1).build().is_err());
        assert!(ModelSpec::builder("a", 1, 0).build().is_err());
        assert!(ModelSpec::builder("a", 1, 1).rates(0.0, |_, _, _| 0.0).build().is_err());
        assert!(ModelSpec::builder("a", 1, 1).truncation_eps(-1.0).build().is_err());
    }

    #[test]
    fn select_target_walks_stacked_intervals() {
        let m = ModelSpec::builder("s", 1, 3)
            .rates(1.0, |_, _, l| if l == 1 { 0.3 } else { 0.7 })
            .build()
            .unwrap();
        let x = [0.0, 0.0];
        assert_eq!(m.select_target(&x, 0, 0.1).unwrap(), Some(1));
        assert_eq!(m.select_target(&x, 0, 0.3).unwrap(), Some(2));
        assert_eq!(m.select_target(&x, 0, 0.999).unwrap(), Some(2));
        assert_eq!(m.select_target(&x, 0, 1.0).unwrap(), None);
    }

    #[test]
    fn finite_differences_match_analytic_derivatives() {
        let f = TestFunction::new(|x, k| (x[2] * x[3]).sin() + x[0] * x[3] * x[3] + k as f64 * x[1])
            .with_grad_x1(|x, k, out| {
                out[0] = x[3] * x[3];
                out[1] = k as f64;
            })
            .with_grad_x2(|x, _, out| {
                out[0] = x[3] * (x[2] * x[3]).cos();
                out[1] = x[2] * (x[2] * x[3]).cos() + 2.0 * x[0] * x[3];
            })
            .with_hess_x2(|x, _, out| {
                let (s, c) = (x[2] * x[3]).sin_cos();
                out[0] = -x[3] * x[3] * s;
                out[1] = c - x[2] * x[3] * s;
                out[2] = out[1];
                out[3] = -x[2] * x[2] * s + 2.0 * x[0];
            });
        let probes = vec![
            (vec![0.3, -1.0, 0.7, 1.2], 0),
            (vec![2.0, 0.5, -1.5, 0.4], 1),
            (vec![-4.0, 3.0, 2.5, -2.0], 2),
        ];
        let err = f.derivative_mismatch(&probes);
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn generator_apply_sums_parts() {
        let m = ModelSpec::builder("all", 1, 2)
            .drift(|x, _, out| out[0] = -x[1])
            .diffusion(|_, _, out| out[0] = 1.0)
            .jumps(JumpMeasure::atoms(vec![vec![0.5]], vec![2.0]).unwrap(), |_, _, u, out| {
                out[0] = u[0]
            })
            .rates(1.0, |_, _, _| 1.0)
            .build()
            .unwrap();
        let f = TestFunction::new(|x, k| x[1] * x[1] + k as f64);
        let x = [0.0, 1.0];
        // diffusion -2 + 1, jump 2 * (2.25 - 1), switch 1 * 1
        let e = apply_mc(&m, &f, &x, 0, 0, &mut seeded(0)).unwrap();
        assert!((e.value - (-1.0 + 2.5 + 1.0)).abs() < 1e-5, "{e:?}");
    }
}

//! Ergodicity diagnostics: Foster-Lyapunov drift checks, plug-in f-norm
//! distances between empirical laws, exponential decay fits and the
//! irreducibility structure of the switching component.

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::Serialize;

use crate::engine::{simulate_ensemble, SimConfig, StateSample};
use crate::error::{Error, Result};
use crate::model::{generator, Estimate, MarkSet, ModelSpec, Regime, TestFunction};
use crate::rng::{derive_seed, seeded};
use crate::stats::{linear_fit, LinearFit};

/// Probe grid: every coordinate on `points` equally spaced values in
/// `[-half_width, half_width]`, regimes `0..min(N, 8)`.
pub fn probe_grid(m: &ModelSpec, half_width: f64, points: usize) -> Vec<(Vec<f64>, Regime)> {
    let n = m.state_len();
    let axis: Vec<f64> = (0..points)
        .map(|i| -half_width + 2.0 * half_width * i as f64 / (points - 1).max(1) as f64)
        .collect();
    let regimes = m.regime_count().min(8);
    let mut out = Vec::new();
    let mut idx = vec![0usize; n];
    loop {
        let x: Vec<f64> = idx.iter().map(|&i| axis[i]).collect();
        for k in 0..regimes {
            out.push((x.clone(), k));
        }
        let mut c = 0;
        loop {
            if c == n {
                return out;
            }
            idx[c] += 1;
            if idx[c] < points {
                break;
            }
            idx[c] = 0;
            c += 1;
        }
    }
}

/// Grid with `|x_i| <= 10` and 21 points per axis.
pub fn default_grid(m: &ModelSpec) -> Vec<(Vec<f64>, Regime)> {
    probe_grid(m, 10.0, 21)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftProbe {
    pub x: Vec<f64>,
    pub regime: Regime,
    pub v: f64,
    pub generator: Estimate,
    /// `-alpha V + beta - (AV + 3 stderr)`; negative means a violation.
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftReport {
    pub alpha: f64,
    pub beta: f64,
    pub probes: Vec<DriftProbe>,
    pub violations: Vec<usize>,
    /// Smallest `beta` making every probe satisfy the bound at `alpha`.
    pub beta_min: f64,
    /// Largest `alpha` making every probe satisfy the bound at `beta`.
    pub alpha_max: f64,
}

/// Checks `AV <= -alpha V + beta` at each probe, using the generator value
/// plus three standard errors.
pub fn check_drift(
    m: &ModelSpec,
    v: &TestFunction,
    probes: &[(Vec<f64>, Regime)],
    alpha: f64,
    beta: f64,
    marks: &MarkSet,
) -> Result<DriftReport> {
    let mut report = DriftReport {
        alpha,
        beta,
        probes: Vec::with_capacity(probes.len()),
        violations: Vec::new(),
        beta_min: 0.0,
        alpha_max: f64::INFINITY,
    };
    for (i, (x, k)) in probes.iter().enumerate() {
        let g = generator::apply(m, v, x, *k, marks)?;
        let vx = v.value(x, *k);
        let upper = g.value + 3.0 * g.stderr;
        let slack = -alpha * vx + beta - upper;
        if slack < 0.0 {
            report.violations.push(i);
        }
        report.beta_min = report.beta_min.max(upper + alpha * vx);
        if vx > 0.0 {
            report.alpha_max = report.alpha_max.min((beta - upper) / vx);
        }
        report.probes.push(DriftProbe {
            x: x.clone(),
            regime: *k,
            v: vx,
            generator: g,
            slack,
        });
    }
    Ok(report)
}

/// Histogram cells over `R^{2d} x regimes`: a box per coordinate edge list,
/// plus one overflow cell per regime for samples outside the boxes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinSpec {
    pub edges: Vec<Vec<f64>>,
    pub regimes: usize,
}

impl BinSpec {
    pub fn new(edges: Vec<Vec<f64>>, regimes: usize) -> Result<Self> {
        if edges.is_empty() || regimes == 0 {
            return Err(Error::EmptyBinSpec("no coordinates or no regimes".into()));
        }
        for (i, e) in edges.iter().enumerate() {
            if e.len() < 2 {
                return Err(Error::EmptyBinSpec(format!("coordinate {i} has fewer than two edges")));
            }
            if e.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::EmptyBinSpec(format!(
                    "edges of coordinate {i} are not strictly increasing"
                )));
            }
        }
        Ok(BinSpec { edges, regimes })
    }

    /// `per_axis` equal-width bins per coordinate spanning the pooled
    /// `[tail, 1 - tail]` sample quantiles.
    pub fn from_quantiles(
        samples: &[&StateSample],
        per_axis: usize,
        tail: f64,
        regimes: usize,
    ) -> Result<Self> {
        if samples.is_empty() || per_axis == 0 {
            return Err(Error::EmptyBinSpec("no samples or no bins per axis".into()));
        }
        let n = samples[0].x.len();
        let mut edges = Vec::with_capacity(n);
        for c in 0..n {
            let mut col: Vec<f64> = samples.iter().map(|s| s.x[c]).collect();
            col.sort_by(f64::total_cmp);
            let q = |p: f64| col[((col.len() - 1) as f64 * p).round() as usize];
            let (lo, mut hi) = (q(tail), q(1.0 - tail));
            if hi <= lo {
                hi = lo + 1.0;
            }
            edges.push(
                (0..=per_axis)
                    .map(|i| lo + (hi - lo) * i as f64 / per_axis as f64)
                    .collect(),
            );
        }
        BinSpec::new(edges, regimes)
    }

    fn boxes(&self) -> usize {
        self.edges.iter().map(|e| e.len() - 1).product()
    }

    pub fn cell_count(&self) -> usize {
        (self.boxes() + 1) * self.regimes
    }

    /// Cell index of a sample, or `None` for a regime beyond the layout.
    pub fn cell_of(&self, x: &[f64], k: Regime) -> Option<usize> {
        if k >= self.regimes {
            return None;
        }
        let mut idx = 0usize;
        for (c, e) in self.edges.iter().enumerate() {
            let v = x[c];
            if !(v >= e[0] && v < e[e.len() - 1]) {
                return Some(k * (self.boxes() + 1) + self.boxes());
            }
            let b = e.partition_point(|edge| *edge <= v) - 1;
            idx = idx * (e.len() - 1) + b;
        }
        Some(k * (self.boxes() + 1) + idx)
    }

    /// Corners of a bounded cell, or `None` for an overflow cell.
    fn corners(&self, cell: usize) -> Option<(Vec<Vec<f64>>, Regime)> {
        let per = self.boxes() + 1;
        let (k, mut b) = (cell / per, cell % per);
        if b == self.boxes() {
            return None;
        }
        let n = self.edges.len();
        let mut lohi = vec![(0.0, 0.0); n];
        for c in (0..n).rev() {
            let nb = self.edges[c].len() - 1;
            let i = b % nb;
            b /= nb;
            lohi[c] = (self.edges[c][i], self.edges[c][i + 1]);
        }
        let corners = (0..1usize << n)
            .map(|mask| {
                (0..n)
                    .map(|c| if mask >> c & 1 == 1 { lohi[c].1 } else { lohi[c].0 })
                    .collect()
            })
            .collect();
        Some((corners, k))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FNormEstimate {
    pub value: f64,
    /// Bootstrap standard error.
    pub stderr: f64,
    /// Mean plug-in distance between two samples of the same sizes drawn
    /// from the pooled histogram: the value expected when both laws agree.
    pub noise_floor: f64,
}

impl FNormEstimate {
    /// Whether the distance is indistinguishable from the noise floor.
    pub fn is_degenerate(&self) -> bool {
        self.value - self.noise_floor <= self.stderr
    }
}

pub const BOOTSTRAP_RESAMPLES: usize = 200;

/// Plug-in estimate of `||mu_a - mu_b||_f` over histogram cells: each cell
/// contributes `fbar * |mu_a(cell) - mu_b(cell)|` with `fbar` the largest
/// value of `|f|` on the cell corners (on the samples for overflow cells).
/// With `f = 1` this is the total variation distance `sum |p - q|`.
pub fn fnorm_distance(
    a: &[&StateSample],
    b: &[&StateSample],
    f: &TestFunction,
    bins: &BinSpec,
    bootstrap_seed: u64,
) -> Result<FNormEstimate> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("f-norm needs two non-empty samples".into()));
    }
    let cells = bins.cell_count();
    let mut fbar = vec![0.0f64; cells];
    let mut overflow_seen = vec![false; cells];
    for c in 0..cells {
        if let Some((corners, k)) = bins.corners(c) {
            fbar[c] = corners.iter().map(|x| f.value(x, k).abs()).fold(0.0, f64::max);
        }
    }
    let mut count = |samples: &[&StateSample]| -> Result<Vec<u64>> {
        let mut counts = vec![0u64; cells];
        for s in samples {
            let c = bins.cell_of(&s.x, s.regime).ok_or_else(|| {
                Error::EmptyBinSpec(format!("regime {} has no cells", s.regime))
            })?;
            counts[c] += 1;
            if bins.corners(c).is_none() {
                let v = f.value(&s.x, s.regime).abs();
                fbar[c] = if overflow_seen[c] { fbar[c].max(v) } else { v };
                overflow_seen[c] = true;
            }
        }
        Ok(counts)
    };
    let ca = count(a)?;
    let cb = count(b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let distance = |ca: &[u64], cb: &[u64]| -> f64 {
        (0..cells)
            .map(|c| fbar[c] * (ca[c] as f64 / na - cb[c] as f64 / nb).abs())
            .sum()
    };
    let value = distance(&ca, &cb);
    let mut rng = seeded(bootstrap_seed);
    let pooled: Vec<u64> = ca.iter().zip(&cb).map(|(x, y)| x + y).collect();
    let mut reps = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    let mut null = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    for _ in 0..BOOTSTRAP_RESAMPLES {
        let ra = multinomial(a.len() as u64, &ca, &mut rng);
        let rb = multinomial(b.len() as u64, &cb, &mut rng);
        reps.push(distance(&ra, &rb));
        let na_ = multinomial(a.len() as u64, &pooled, &mut rng);
        let nb_ = multinomial(b.len() as u64, &pooled, &mut rng);
        null.push(distance(&na_, &nb_));
    }
    let sd = crate::stats::mean_stderr(reps.iter().copied()).stderr
        * (BOOTSTRAP_RESAMPLES as f64).sqrt();
    Ok(FNormEstimate {
        value,
        stderr: sd,
        noise_floor: null.iter().sum::<f64>() / null.len() as f64,
    })
}

/// `n` draws over cells with probabilities proportional to `counts`,
/// sampled cell by cell through conditional binomials.
fn multinomial<R: Rng>(n: u64, counts: &[u64], rng: &mut R) -> Vec<u64> {
    let mut remaining_n = n;
    let mut remaining_w: u64 = counts.iter().sum();
    let mut out = vec![0u64; counts.len()];
    for (o, &c) in out.iter_mut().zip(counts) {
        if remaining_n == 0 {
            break;
        }
        if c == 0 {
            continue;
        }
        let p = (c as f64 / remaining_w as f64).min(1.0);
        let draw = Binomial::new(remaining_n, p).expect("valid binomial").sample(rng);
        *o = draw;
        remaining_n -= draw;
        remaining_w -= c;
    }
    out
}

/// How decay_fit builds histogram cells at each time.
#[derive(Debug, Clone, PartialEq)]
pub enum Bins {
    Fixed(BinSpec),
    /// Quantile grid of the pooled samples at each time.
    Quantile { per_axis: usize, tail: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayFit {
    pub times: Vec<f64>,
    pub distances: Vec<FNormEstimate>,
    pub fit: LinearFit,
    /// `exp(slope)` of `log distance` against time.
    pub theta: f64,
    pub r2: f64,
}

/// Log-linear fit of `||P_t(a, .) - P_t(b, .)||_f` over `times`, each
/// distance estimated from `n_paths` paths per initial condition. Fails with
/// [`Error::DegenerateFit`] when a distance is within one standard error of
/// its noise floor.
#[allow(clippy::too_many_arguments)]
pub fn decay_fit(
    m: &ModelSpec,
    cfg: &SimConfig,
    a: (&[f64], Regime),
    b: (&[f64], Regime),
    f: &TestFunction,
    times: &[f64],
    n_paths: usize,
    bins: &Bins,
) -> Result<DecayFit> {
    if times.len() < 2 {
        return Err(Error::InvalidArgument("decay fit needs at least two times".into()));
    }
    let horizon = times.iter().copied().fold(0.0, f64::max);
    let mut c = cfg.clone().with_observe(times.to_vec());
    c.horizon = horizon;
    let ea = simulate_ensemble(m, &c.clone().with_seed(derive_seed(cfg.seed, "decay", 0)), a.0, a.1, n_paths)?;
    let eb = simulate_ensemble(m, &c.clone().with_seed(derive_seed(cfg.seed, "decay", 1)), b.0, b.1, n_paths)?;
    let mut distances = Vec::with_capacity(times.len());
    for (j, &t) in times.iter().enumerate() {
        let (sa, sb) = (ea.at(j), eb.at(j));
        let spec = match bins {
            Bins::Fixed(s) => s.clone(),
            Bins::Quantile { per_axis, tail } => {
                let pooled: Vec<&StateSample> = sa.iter().chain(&sb).copied().collect();
                BinSpec::from_quantiles(&pooled, *per_axis, *tail, m.regime_count())?
            }
        };
        let d = fnorm_distance(&sa, &sb, f, &spec, derive_seed(cfg.seed, "bootstrap", j as u64))?;
        if d.is_degenerate() {
            return Err(Error::DegenerateFit {
                time: t,
                distance: d.value,
                stderr: d.stderr,
                noise_floor: d.noise_floor,
            });
        }
        distances.push(d);
    }
    let logs: Vec<f64> = distances.iter().map(|d| d.value.ln()).collect();
    let fit = linear_fit(times, &logs);
    Ok(DecayFit {
        times: times.to_vec(),
        distances,
        theta: fit.slope.exp(),
        r2: fit.r2,
        fit,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IrreducibilityReport {
    /// `adjacency[k][l]` when `q_kl > 0` at some probe.
    pub adjacency: Vec<Vec<bool>>,
    pub strongly_connected: bool,
    /// Pairs `(k, l)` with no directed path from `k` to `l`.
    pub unreachable: Vec<(Regime, Regime)>,
}

pub fn check_irreducibility_structure(
    m: &ModelSpec,
    probes: &[Vec<f64>],
) -> Result<IrreducibilityReport> {
    let n = m.regime_count();
    let mut adjacency = vec![vec![false; n]; n];
    for x in probes {
        for (k, row) in adjacency.iter_mut().enumerate() {
            for (l, edge) in row.iter_mut().enumerate() {
                if !*edge && m.rate(x, k, l)? > 0.0 {
                    *edge = true;
                }
            }
        }
    }
    let mut unreachable = Vec::new();
    for k in 0..n {
        let mut seen = vec![false; n];
        seen[k] = true;
        let mut queue = VecDeque::from([k]);
        while let Some(i) = queue.pop_front() {
            for j in 0..n {
                if adjacency[i][j] && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        unreachable.extend((0..n).filter(|&l| !seen[l]).map(|l| (k, l)));
    }
    Ok(IrreducibilityReport {
        adjacency,
        strongly_connected: unreachable.is_empty(),
        unreachable,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::normal_cdf;

    fn sample(x: f64, k: Regime) -> StateSample {
        StateSample {
            time: 0.0,
            x: vec![0.0, x],
            regime: k,
        }
    }

    fn ou() -> ModelSpec {
        ModelSpec::builder("ou", 1, 1)
            .drift(|x, _, out| out[0] = -x[1])
            .diffusion(|_, _, out| out[0] = 1.0)
            .build()
            .unwrap()
    }

    #[test]
    fn ou_lyapunov_drift_holds_with_known_constants() {
        // A(1 + x2^2) = -2 x2^2 + 1 <= -(1 + x2^2) + 2.5
        let v = TestFunction::new(|x, _| 1.0 + x[1] * x[1]);
        let m = ou();
        let probes: Vec<_> = (-20..=20).map(|i| (vec![0.0, i as f64 * 0.5], 0)).collect();
        let r = check_drift(&m, &v, &probes, 1.0, 2.5, &MarkSet::for_measure(m.jump_measure(), 0, &mut seeded(0)).unwrap()).unwrap();
        assert!(r.violations.is_empty());
        for p in &r.probes {
            assert!((p.generator.value - (1.0 - 2.0 * p.x[1] * p.x[1])).abs() < 1e-4);
        }
        // beta_min is attained at x2 = 0: AV + V = 2
        assert!((r.beta_min - 2.0).abs() < 1e-4, "{}", r.beta_min);
    }

    #[test]
    fn bin_spec_rejects_empty() {
        assert!(matches!(BinSpec::new(vec![vec![0.0]], 1), Err(Error::EmptyBinSpec(_))));
        assert!(matches!(BinSpec::new(vec![], 1), Err(Error::EmptyBinSpec(_))));
        assert!(matches!(BinSpec::new(vec![vec![0.0, 1.0]], 0), Err(Error::EmptyBinSpec(_))));
        assert!(matches!(BinSpec::new(vec![vec![1.0, 0.0]], 1), Err(Error::EmptyBinSpec(_))));
    }

    #[test]
    fn cells_and_overflow() {
        let b = BinSpec::new(vec![vec![0.0, 1.0], vec![0.0, 1.0, 2.0]], 2).unwrap();
        assert_eq!(b.cell_count(), 6);
        assert_eq!(b.cell_of(&[0.5, 1.5], 0), Some(1));
        assert_eq!(b.cell_of(&[0.5, 2.0], 0), Some(2));
        assert_eq!(b.cell_of(&[0.5, 0.5], 1), Some(3));
        assert_eq!(b.cell_of(&[0.5, 0.5], 2), None);
    }

    #[test]
    fn total_variation_of_disjoint_samples_is_two() {
        let a: Vec<_> = (0..100).map(|_| sample(0.5, 0)).collect();
        let b: Vec<_> = (0..100).map(|_| sample(-0.5, 0)).collect();
        let bins = BinSpec::new(vec![vec![-1.0, 1.0], vec![-1.0, 0.0, 1.0]], 1).unwrap();
        let d = fnorm_distance(&a.iter().collect::<Vec<_>>(), &b.iter().collect::<Vec<_>>(), &TestFunction::constant(1.0), &bins, 0).unwrap();
        assert!((d.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_shift_total_variation() {
        // sum |p - q| for N(-delta/2, 1) vs N(delta/2, 1) is 2 (2 Phi(delta/2) - 1)
        use rand_distr::StandardNormal;
        let delta = 1.0;
        let mut rng = seeded(12);
        let n = 200_000;
        let draw = |shift: f64, rng: &mut crate::rng::SimRng| -> Vec<StateSample> {
            (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    sample(z + shift, 0)
                })
                .collect()
        };
        let a = draw(-delta / 2.0, &mut rng);
        let b = draw(delta / 2.0, &mut rng);
        let edges: Vec<f64> = (0..=60).map(|i| -6.0 + 0.2 * i as f64).collect();
        let bins = BinSpec::new(vec![vec![-1.0, 1.0], edges], 1).unwrap();
        let d = fnorm_distance(&a.iter().collect::<Vec<_>>(), &b.iter().collect::<Vec<_>>(), &TestFunction::constant(1.0), &bins, 1).unwrap();
        let exact = 2.0 * (2.0 * normal_cdf(delta / 2.0) - 1.0);
        assert!((d.value - exact).abs() < 0.03, "{} vs {exact}", d.value);
        assert!(d.stderr > 0.0 && d.stderr < 0.01);
    }

    #[test]
    fn two_state_chain_decay_rate() {
        // TV between the two starting states is 2 exp(-g t), g = a + b
        let (ra, rb) = (0.5, 0.3);
        let g: f64 = ra + rb;
        let m = ModelSpec::builder("two-state", 1, 2)
            .rates(0.5, move |_, k, _| if k == 0 { ra } else { rb })
            .build()
            .unwrap();
        let bins = BinSpec::new(vec![vec![-1.0, 1.0], vec![-1.0, 1.0]], 2).unwrap();
        let cfg = SimConfig::new(0.05, 5.0, 21);
        let fit = decay_fit(
            &m,
            &cfg,
            (&[0.0, 0.0], 0),
            (&[0.0, 0.0], 1),
            &TestFunction::constant(1.0),
            &[1.0, 2.0, 3.0, 4.0, 5.0],
            20_000,
            &Bins::Fixed(bins),
        )
        .unwrap();
        assert!(fit.theta >= (-1.2 * g).exp() && fit.theta <= (-0.8 * g).exp(), "{fit:?}");
        for (t, d) in fit.times.iter().zip(&fit.distances) {
            let exact = 2.0 * (-g * t).exp();
            assert!((d.value - exact).abs() < 4.0 * d.stderr + 0.01, "t={t} {d:?} vs {exact}");
        }
    }

    #[test]
    fn identical_starts_are_degenerate() {
        let m = ou();
        let r = decay_fit(
            &m,
            &SimConfig::new(0.05, 2.0, 4),
            (&[0.0, 0.0], 0),
            (&[0.0, 0.0], 0),
            &TestFunction::constant(1.0),
            &[1.0, 2.0],
            2_000,
            &Bins::Quantile { per_axis: 4, tail: 0.01 },
        );
        assert!(matches!(r, Err(Error::DegenerateFit { .. })), "{r:?}");
    }

    #[test]
    fn irreducibility_of_cycle_and_absorbing_chain() {
        let cycle = ModelSpec::builder("cycle", 1, 3)
            .rates(1.0, |_, k, l| if l == (k + 1) % 3 { 1.0 } else { 0.0 })
            .build()
            .unwrap();
        let r = check_irreducibility_structure(&cycle, &[vec![0.0, 0.0]]).unwrap();
        assert!(r.strongly_connected);
        let absorbing = ModelSpec::builder("abs", 1, 2)
            .rates(1.0, |_, k, _| if k == 0 { 1.0 } else { 0.0 })
            .build()
            .unwrap();
        let r = check_irreducibility_structure(&absorbing, &[vec![0.0, 0.0]]).unwrap();
        assert!(!r.strongly_connected);
        assert_eq!(r.unreachable, vec![(1, 0)]);
    }

    #[test]
    fn default_grid_shape() {
        let g = default_grid(&ou());
        assert_eq!(g.len(), 21 * 21);
        assert!(g.iter().all(|(x, _)| x.iter().all(|v| v.abs() <= 10.0)));
    }
}

//! The six experiment kinds. Each validates its section before computing
//! anything and returns data tables, summary values and acceptance checks.

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use switchjump::change_of_measure::simulate_weighted_ensemble;
use switchjump::coupling::{couple_many, CoupledState};
use switchjump::engine::{path_seed, simulate_ensemble, simulate_path, EventKind, PathSample,
    RecordMode, SimConfig};
use switchjump::ergodicity::{check_drift, decay_fit, probe_grid, Bins};
use switchjump::models_builtin::oscillator_w;
use switchjump::rng::{derive_seed, stream};
use switchjump::stats::{chi_square_homogeneity, ks_two_sample, mean_stderr};
use switchjump::switching::{next_switch_clock, next_switch_skorokhod, survival};
use switchjump::{ModelSpec, TestFunction};

use crate::catalog::Entry;
use crate::config::{invalid, ExperimentConfig, ExperimentKind, NormFunction};
use crate::output::{Cell, Table};
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, pass: bool, detail: String) -> Self {
        Check {
            name: name.into(),
            pass,
            detail,
        }
    }
}

pub struct Outcome {
    pub tables: Vec<Table>,
    pub results: Value,
    pub checks: Vec<Check>,
}

pub fn run(cfg: &ExperimentConfig, entry: &Entry) -> Result<Outcome, CliError> {
    match cfg.experiment()? {
        ExperimentKind::Simulate => simulate(cfg, entry),
        ExperimentKind::ConstructionEquivalence => construction_equivalence(cfg, entry),
        ExperimentKind::CouplingContraction => coupling_contraction(cfg, entry),
        ExperimentKind::IsIdentity => is_identity(cfg, entry),
        ExperimentKind::DriftCheck => drift_check(cfg, entry),
        ExperimentKind::DecayFit => decay(cfg, entry),
    }
}

fn check_state(path: &str, x: &[f64], m: &ModelSpec) -> Result<(), CliError> {
    if x.len() != m.state_len() {
        return Err(invalid(path, format!("has {} entries, the model needs {}", x.len(), m.state_len())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(invalid(path, "entries must be finite"));
    }
    Ok(())
}

fn check_regime(path: &str, k: usize, m: &ModelSpec) -> Result<(), CliError> {
    if k >= m.regime_count() {
        return Err(invalid(path, format!("regime {k} out of range 0..{}", m.regime_count())));
    }
    Ok(())
}

fn check_positive(path: &str, n: usize) -> Result<(), CliError> {
    if n == 0 {
        return Err(invalid(path, "must be positive"));
    }
    Ok(())
}

fn runtime(key: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{key}: {e}"))
}

/// Rows of one path: every grid point for full paths, otherwise the start,
/// the post-event states, the observations and the final state.
fn path_rows(t: &mut Table, p: &PathSample, x0: &[f64], k0: usize) {
    if !p.times.is_empty() {
        let mut events = p.events.iter().peekable();
        for j in 0..p.times.len() {
            let label = match events.next_if(|e| e.step == j) {
                Some(e) => e.label(),
                None if j == 0 => "start",
                None => "grid",
            };
            t.push_state(p.times[j], p.state(j), p.regimes[j], label);
        }
        return;
    }
    let d = p.dim;
    let mut rows: Vec<(f64, Vec<f64>, usize, &str)> = vec![(0.0, x0.to_vec(), k0, "start")];
    for e in &p.events {
        let mut x = e.pre_state.clone();
        let k = match &e.kind {
            EventKind::Switch(s) => s.to,
            EventKind::Jump { delta_x2, .. } => {
                for i in 0..d {
                    x[d + i] += delta_x2[i];
                }
                e.pre_regime
            }
        };
        rows.push((e.time, x, k, e.label()));
    }
    for o in &p.observations {
        rows.push((o.time, o.x.clone(), o.regime, "observe"));
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let f = &p.final_state;
    rows.push((f.time, f.x.clone(), f.regime, "final"));
    for (time, x, k, label) in rows {
        t.push_state(time, &x, k, label);
    }
}

fn simulate(cfg: &ExperimentConfig, entry: &Entry) -> Result<Outcome, CliError> {
    let m = &entry.model;
    let p = cfg.section(&cfg.simulate)?;
    check_state("simulate.x0", &p.x0, m)?;
    check_regime("simulate.k0", p.k0, m)?;
    check_positive("simulate.paths", p.paths)?;
    let sim = cfg.sim_config()?;

    let paths: Vec<PathSample> = (0..p.paths)
        .into_par_iter()
        .map(|i| {
            simulate_path(m, &sim.clone().with_seed(path_seed(sim.seed, i)), &p.x0, p.k0)
                .map_err(|e| runtime("simulate", format!("path {i}: {e}")))
        })
        .collect::<Result<_, _>>()?;

    let mut tables = Vec::with_capacity(p.paths + 1);
    let mut finals = Table::states("finals", m.dim());
    let (mut jumps, mut switches) = (0usize, 0usize);
    for (i, path) in paths.iter().enumerate() {
        if sim.record != RecordMode::EndpointsOnly {
            let mut t = Table::states(format!("path_{i:04}"), m.dim());
            path_rows(&mut t, path, &p.x0, p.k0);
            tables.push(t);
        }
        let f = &path.final_state;
        finals.push_state(f.time, &f.x, f.regime, "final");
        switches += path.switch_events().count();
        jumps += path.events.len() - path.switch_events().count();
    }
    tables.push(finals);
    let mean_final: Vec<f64> = (0..m.state_len())
        .map(|c| mean_stderr(paths.iter().map(|q| q.final_state.x[c])).value)
        .collect();
    Ok(Outcome {
        tables,
        results: json!({
            "paths": p.paths,
            "mean_final_state": mean_final,
            "recorded_jumps": jumps,
            "recorded_switches": switches,
        }),
        checks: Vec::new(),
    })
}

fn construction_equivalence(cfg: &ExperimentConfig, entry: &Entry) -> Result<Outcome, CliError> {
    let m = &entry.model;
    let key = "construction_equivalence";
    let p = cfg.section(&cfg.construction_equivalence)?;
    check_state(&format!("{key}.x0"), &p.x0, m)?;
    check_regime(&format!("{key}.k0"), p.k0, m)?;
    check_positive(&format!("{key}.samples"), p.samples)?;
    let sim = cfg.sim_config()?;
    let check_times: Vec<f64> = p.check_times.iter().copied().filter(|&t| t <= sim.horizon).collect();
    if check_times.is_empty() || p.check_times.iter().any(|t| !(*t > 0.0)) {
        return Err(invalid(
            &format!("{key}.check_times"),
            "needs positive times not beyond sim.horizon",
        ));
    }

    let d = m.dim();
    let x0 = p.x0.clone();
    let path = move |t: f64, x: &mut [f64]| {
        for i in 0..d {
            x[i] = x0[i] + t * x0[d + i];
            x[d + i] = x0[d + i];
        }
    };
    let mut first = Table::states("first_switch", d);
    let mut x = vec![0.0; 2 * d];
    let (mut ts, mut tc) = (Vec::with_capacity(p.samples), Vec::with_capacity(p.samples));
    let (mut targets_s, mut targets_c) = (vec![0u64; m.regime_count()], vec![0u64; m.regime_count()]);
    for clock in [false, true] {
        let mut rng = stream(sim.seed, "construction", u64::from(clock));
        let (name, times, targets) = if clock {
            ("clock", &mut tc, &mut targets_c)
        } else {
            ("skorokhod", &mut ts, &mut targets_s)
        };
        for _ in 0..p.samples {
            let e = if clock {
                next_switch_clock(m, &path, p.k0, 0.0, sim.horizon, sim.step, &mut rng)
            } else {
                next_switch_skorokhod(m, &path, p.k0, 0.0, sim.horizon, &mut rng)
            }
            .map_err(|e| runtime(key, e))?;
            match e {
                Some(e) => {
                    times.push(e.time);
                    targets[e.to] += 1;
                    path(e.time, &mut x);
                    first.push_state(e.time, &x, e.to, name);
                }
                None => {
                    times.push(sim.horizon);
                    path(sim.horizon, &mut x);
                    first.push_state(sim.horizon, &x, p.k0, &format!("{name}_censored"));
                }
            }
        }
    }

    let ks = ks_two_sample(&ts, &tc);
    let (chi2, dof, chi2_p) = chi_square_homogeneity(&targets_s, &targets_c);
    let n = p.samples as f64;
    let mut surv = Table::new("survival", &["time", "quadrature", "skorokhod", "clock"]);
    let mut worst: f64 = 0.0;
    for &t in &check_times {
        let exact = survival(m, &path, p.k0, 0.0, t, 20_000).map_err(|e| runtime(key, e))?;
        let es = ts.iter().filter(|&&v| v > t).count() as f64 / n;
        let ec = tc.iter().filter(|&&v| v > t).count() as f64 / n;
        worst = worst.max((es - exact).abs()).max((ec - exact).abs());
        surv.push(vec![t.into(), exact.into(), es.into(), ec.into()]);
    }
    let checks = vec![
        Check::new("ks_first_switch_time", ks < p.ks_max, format!("ks={ks} < {}", p.ks_max)),
        Check::new(
            "chi2_target_regime",
            chi2_p > p.chi2_p_min,
            format!("p={chi2_p} > {}", p.chi2_p_min),
        ),
        Check::new(
            "survival_curve",
            worst <= p.survival_tol,
            format!("max error {worst} <= {}", p.survival_tol),
        ),
    ];
    Ok(Outcome {
        tables: vec![first, surv],
        results: json!({
            "samples": p.samples,
            "ks": ks,
            "chi2": chi2,
            "chi2_dof": dof,
            "chi2_p": chi2_p,
            "max_survival_error": worst,
        }),
        checks,
    })
}

fn coupling_contraction(cfg: &ExperimentConfig, entry: &Entry) -> Result<Outcome, CliError> {
    let m = &entry.model;
    let key = "coupling_contraction";
    let p = cfg.section(&cfg.coupling_contraction)?;
    check_state(&format!("{key}.x0"), &p.x0, m)?;
    check_state(&format!("{key}.y0"), &p.y0, m)?;
    check_regime(&format!("{key}.k0"), p.k0, m)?;
    check_positive(&format!("{key}.runs"), p.runs)?;
    if p.scales.is_empty() || p.scales.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(invalid(&format!("{key}.scales"), "needs finite non-negative scales"));
    }
    let sim = cfg.sim_config()?;

    let mut tables = Vec::new();
    let mut levels = Table::new(
        "contraction",
        &[
            "scale",
            "initial_distance",
            "mean_distance",
            "mean_distance_stderr",
            "separation_prob",
            "separation_prob_stderr",
        ],
    );
    let mut summary = Vec::new();
    for (j, &s) in p.scales.iter().enumerate() {
        let y: Vec<f64> = p.x0.iter().zip(&p.y0).map(|(a, b)| a + s * (b - a)).collect();
        let start = CoupledState::new(&p.x0, p.k0, &y, p.k0);
        let c = sim.clone().with_seed(derive_seed(sim.seed, "level", j as u64));
        let runs = couple_many(m, &c, &start, p.runs).map_err(|e| runtime(key, e))?;
        let mut t = Table::states(format!("coupled_{j:02}"), m.dim());
        for r in &runs {
            let f = &r.final_state;
            t.push_state(sim.horizon, &f.x, f.k, "first");
            t.push_state(sim.horizon, &f.y, f.l, "second");
        }
        tables.push(t);
        let dist = mean_stderr(runs.iter().map(|r| r.stopped_distance));
        let sep = mean_stderr(runs.iter().map(|r| f64::from(u8::from(r.zeta.is_some()))));
        levels.push(vec![
            s.into(),
            start.distance().into(),
            dist.value.into(),
            dist.stderr.into(),
            sep.value.into(),
            sep.stderr.into(),
        ]);
        summary.push((start.distance(), dist.value, sep.value));
    }
    tables.push(levels);
    let mut checks = Vec::new();
    if summary.len() > 1 {
        let mut sorted = summary.clone();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let monotone = sorted.windows(2).all(|w| w[0].1 <= w[1].1);
        checks.push(Check::new(
            "distance_monotone_in_initial_distance",
            monotone,
            format!("{:?}", sorted.iter().map(|l| l.1).collect::<Vec<_>>()),
        ));
    }
    Ok(Outcome {
        tables,
        results: json!({
            "runs": p.runs,
            "levels": summary.iter().map(|(d0, d, s)| json!({
                "initial_distance": d0, "mean_distance": d, "separation_prob": s,
            })).collect::<Vec<_>>(),
        }),
        checks,
    })
}

fn is_identity(cfg: &ExperimentConfig, entry: &Entry) -> Result<Outcome, CliError> {
    let m = &entry.model;
    let key = "is_identity";
    let p = cfg.section(&cfg.is_identity)?;
    check_state(&format!("{key}.x0"), &p.x0, m)?;
    check_regime(&format!("{key}.k0"), p.k0, m)?;
    check_positive(&format!("{key}.paths"), p.paths)?;
    let sim = cfg.sim_config()?;
    let qhat = entry.qhat()?;

    let d = m.dim();
    let k0 = p.k0;
    let functions: Vec<(&str, TestFunction)> = vec![
        ("tanh_x2", TestFunction::new(move |x, _| x[d].tanh())),
        ("cos_x1", TestFunction::new(|x, _| x[0].cos())),
        ("start_regime", TestFunction::new(move |_, k| f64::from(u8::from(k == k0)))),
    ];
    let aux = simulate_weighted_ensemble(m, &qhat, &sim, &p.x0, p.k0, p.paths)
        .map_err(|e| runtime(key, e))?;
    let direct_cfg = sim.clone().with_seed(derive_seed(sim.seed, "direct", 0));
    let direct = simulate_ensemble(m, &direct_cfg, &p.x0, p.k0, p.paths).map_err(|e| runtime(key, e))?;

    let mut finals = Table::states("aux_finals", d);
    let mut weights = Table::new("weights", &["path", "weight", "switches"]);
    for (i, ((s, w), n)) in aux.finals.iter().zip(&aux.weights).zip(&aux.switch_counts).enumerate() {
        finals.push_state(s.time, &s.x, s.regime, "aux");
        weights.push(vec![i.into(), (*w).into(), (*n).into()]);
    }
    let mut estimates = Table::new(
        "estimates",
        &["function", "is_value", "is_stderr", "direct_value", "direct_stderr"],
    );
    let mean_weight = mean_stderr(aux.weights.iter().copied());
    let mut checks = vec![Check::new(
        "mean_weight_is_one",
        (mean_weight.value - 1.0).abs() <= 3.0 * mean_weight.stderr,
        format!("{} +- {}", mean_weight.value, mean_weight.stderr),
    )];
    let mut ess = 0.0;
    for (name, f) in &functions {
        let is = aux.estimate(f);
        ess = is.effective_sample_size;
        let dr = direct.mean(|s| f.value(&s.x, s.regime));
        let combined = (is.stderr.powi(2) + dr.stderr.powi(2)).sqrt();
        checks.push(Check::new(
            &format!("is_matches_direct_{name}"),
            (is.value - dr.value).abs() <= 3.0 * combined,
            format!("{} vs {} (3 sigma = {})", is.value, dr.value, 3.0 * combined),
        ));
        estimates.push(vec![
            Cell::from(*name),
            is.value.into(),
            is.stderr.into(),
            dr.value.into(),
            dr.stderr.into(),
        ]);
    }
    Ok(Outcome {
        tables: vec![finals, weights, estimates],
        results: json!({
            "paths": p.paths,
            "mean_weight": mean_weight.value,
            "mean_weight_stderr": mean_weight.stderr,
            "effective_sample_size": ess,
            "qhat_rigorous": qhat.rigorous,
        }),
        checks,
    })
}

fn drift_check(cfg: &ExperimentConfig, entry: &Entry) -> Result<Outcome, CliError> {
    let key = "drift_check";
    let p = cfg.section(&cfg.drift_check)?;
    let o = entry
        .oscillator
        .as_ref()
        .ok_or_else(|| invalid("model.name", "drift_check needs a model with a Lyapunov function"))?;
    if !(p.alpha.is_finite() && p.alpha > 0.0) {
        return Err(invalid(&format!("{key}.alpha"), "must be positive"));
    }
    if p.beta.is_some_and(|b| !b.is_finite()) {
        return Err(invalid(&format!("{key}.beta"), "must be finite"));
    }
    if !(p.half_width.is_finite() && p.half_width > 0.0) {
        return Err(invalid(&format!("{key}.half_width"), "must be positive"));
    }
    if p.points < 2 {
        return Err(invalid(&format!("{key}.points"), "needs at least two points"));
    }

    let m = &o.model;
    let v = o.lyapunov.test_function();
    let marks = o.marks();
    let grid = probe_grid(m, p.half_width, p.points);
    let w: Vec<f64> = grid
        .iter()
        .map(|(x, k)| oscillator_w(&o.params, &o.lyapunov, x, *k).total())
        .collect();
    let inside: Vec<bool> = w.iter().map(|&wk| wk < 1.0).collect();
    let beta = match p.beta {
        Some(b) => b,
        None => {
            let pre = check_drift(m, &v, &grid, p.alpha, 0.0, &marks).map_err(|e| runtime(key, e))?;
            pre.probes
                .iter()
                .zip(&inside)
                .filter(|(_, &c)| c)
                .map(|(q, _)| q.generator.value + 3.0 * q.generator.stderr + p.alpha * q.v)
                .fold(0.0, f64::max)
        }
    };
    let report = check_drift(m, &v, &grid, p.alpha, beta, &marks).map_err(|e| runtime(key, e))?;
    let outside = report.violations.iter().filter(|&&i| !inside[i]).count();

    let mut probes = Table::new(
        "probes",
        &["x1", "x2", "regime", "v", "generator", "stderr", "w", "in_compact", "slack"],
    );
    for (q, (wk, c)) in report.probes.iter().zip(w.iter().zip(&inside)) {
        probes.push(vec![
            q.x[0].into(),
            q.x[1].into(),
            q.regime.into(),
            q.v.into(),
            q.generator.value.into(),
            q.generator.stderr.into(),
            (*wk).into(),
            (*c).into(),
            q.slack.into(),
        ]);
    }
    let compact_reach = grid
        .iter()
        .zip(&inside)
        .filter(|(_, &c)| c)
        .map(|((x, _), _)| x[0].abs())
        .fold(0.0, f64::max);
    Ok(Outcome {
        tables: vec![probes],
        results: json!({
            "alpha": p.alpha,
            "beta": beta,
            "beta_fitted": p.beta.is_none(),
            "beta_min": report.beta_min,
            "alpha_max": report.alpha_max,
            "probes": grid.len(),
            "compact_size": inside.iter().filter(|&&c| c).count(),
            "compact_max_abs_x1": compact_reach,
            "violations_total": report.violations.len(),
            "violations_outside_compact": outside,
        }),
        checks: vec![Check::new(
            "no_violations_outside_compact",
            outside == 0,
            format!("{outside} of {} probes", grid.len()),
        )],
    })
}

fn decay(cfg: &ExperimentConfig, entry: &Entry) -> Result<Outcome, CliError> {
    let m = &entry.model;
    let key = "decay_fit";
    let p = cfg.section(&cfg.decay_fit)?;
    check_state(&format!("{key}.x0"), &p.x0, m)?;
    check_regime(&format!("{key}.k0"), p.k0, m)?;
    check_state(&format!("{key}.y0"), &p.y0, m)?;
    check_regime(&format!("{key}.l0"), p.l0, m)?;
    check_positive(&format!("{key}.paths"), p.paths)?;
    check_positive(&format!("{key}.bins_per_axis"), p.bins_per_axis)?;
    if p.times.len() < 2 || p.times.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(invalid(&format!("{key}.times"), "needs at least two positive times"));
    }
    if !(0.0..0.5).contains(&p.tail) {
        return Err(invalid(&format!("{key}.tail"), "must lie in [0, 0.5)"));
    }
    let f = match p.f {
        NormFunction::One => TestFunction::constant(1.0),
        NormFunction::LyapunovPlusOne => {
            let o = entry.oscillator.as_ref().ok_or_else(|| {
                invalid(&format!("{key}.f"), "lyapunov_plus_one needs a model with a Lyapunov function")
            })?;
            let lyap = o.lyapunov.clone();
            TestFunction::new(move |x, k| lyap.value(x, k) + 1.0)
        }
    };
    let sim: SimConfig = cfg.sim_config()?;

    let bins = Bins::Quantile {
        per_axis: p.bins_per_axis,
        tail: p.tail,
    };
    let fit = decay_fit(m, &sim, (&p.x0, p.k0), (&p.y0, p.l0), &f, &p.times, p.paths, &bins)
        .map_err(|e| runtime(key, e))?;
    let mut t = Table::new("distances", &["time", "distance", "stderr", "noise_floor"]);
    for (time, d) in fit.times.iter().zip(&fit.distances) {
        t.push(vec![(*time).into(), d.value.into(), d.stderr.into(), d.noise_floor.into()]);
    }
    Ok(Outcome {
        tables: vec![t],
        results: json!({
            "paths": p.paths,
            "theta_fit": fit.theta,
            "r2": fit.r2,
            "slope": fit.fit.slope,
            "intercept": fit.fit.intercept,
        }),
        checks: vec![
            Check::new("theta_below_one", fit.theta < 1.0, format!("theta_fit={}", fit.theta)),
            Check::new("log_linear_fit", fit.r2 > 0.8, format!("r2={}", fit.r2)),
        ],
    })
}

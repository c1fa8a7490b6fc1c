//! Time stepping by repeated resolvents.
//!
//! One implicit Euler step of size `h` is `rho <- J_h(rho)`, and
//! `S(t) rho0 = lim_n (I + t/n A)^(-n) rho0`. Steps longer than the
//! configured `lambda` are split into equal resolvent substeps.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::coefficients::CoefficientSet;
use crate::grid::{norms, Field};
use crate::resolvent::{resolvent, ResolventConfig, ResolventError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SemigroupError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("step {index}: {source}")]
    Step {
        index: usize,
        #[source]
        source: ResolventError,
    },
}

fn substeps(h: f64, lambda0: f64) -> (usize, f64) {
    if h <= lambda0 {
        (1, h)
    } else {
        let m = (h / lambda0).ceil() as usize;
        (m, h / m as f64)
    }
}

fn step_inner(rho: &Field, c: &CoefficientSet, h: f64, cfg: &ResolventConfig) -> Result<(Field, usize), ResolventError> {
    let (m, sub) = substeps(h, cfg.lambda);
    let cfg = cfg.clone().with_lambda(sub);
    let mut cur = rho.clone();
    let mut iters = 0;
    for _ in 0..m {
        let sol = resolvent(&cur, c, &cfg)?;
        iters += sol.newton_iterations;
        cur = sol.y;
    }
    Ok((cur, iters))
}

/// `J_h(rho)`. Here `cfg.lambda` is the largest resolvent parameter used
/// in one go; a longer step is split into `ceil(h / cfg.lambda)` equal
/// resolvents.
pub fn step(rho: &Field, c: &CoefficientSet, h: f64, cfg: &ResolventConfig) -> Result<Field, SemigroupError> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(SemigroupError::InvalidArgument(format!("step size must be positive, got {h}")));
    }
    step_inner(rho, c, h, cfg).map(|r| r.0).map_err(|source| SemigroupError::Step { index: 0, source })
}

/// Summary numbers of one stored state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StateMonitor {
    pub t: f64,
    pub mass: f64,
    pub min: f64,
    pub max: f64,
    pub l1: f64,
    pub l2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Field>,
    pub h: f64,
    /// Every `stride`-th step is stored.
    pub stride: usize,
    pub model: String,
    pub newton_iterations: usize,
}

impl Trajectory {
    pub fn final_state(&self) -> &Field {
        self.states.last().expect("a trajectory holds at least the initial state")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("a trajectory holds at least the initial time")
    }

    /// State at time `t`, linear in time between stored states and clamped
    /// to the stored range.
    pub fn at(&self, t: f64) -> Field {
        let (j, w) = self.bracket(t);
        if w == 0.0 {
            self.states[j].clone()
        } else {
            self.states[j].lincomb(1.0 - w, &self.states[j + 1], w)
        }
    }

    /// Index `j` and weight `w` with `t = (1 - w) times[j] + w times[j + 1]`.
    pub fn bracket(&self, t: f64) -> (usize, f64) {
        let last = self.times.len() - 1;
        if t <= self.times[0] || last == 0 {
            return (0, 0.0);
        }
        if t >= self.times[last] {
            return (last, 0.0);
        }
        let j = self.times.partition_point(|s| *s <= t) - 1;
        let w = (t - self.times[j]) / (self.times[j + 1] - self.times[j]);
        (j, w)
    }

    pub fn monitors(&self) -> Vec<StateMonitor> {
        self.times
            .iter()
            .zip(&self.states)
            .map(|(&t, s)| {
                let nm = norms(s);
                StateMonitor { t, mass: s.mass(), min: s.min(), max: s.max(), l1: nm.l1, l2: nm.l2 }
            })
            .collect()
    }
}

/// Implicit Euler trajectory up to `ceil(T / h) * h`, storing every state.
pub fn mild_solution(
    rho0: &Field,
    c: &CoefficientSet,
    t_end: f64,
    h: f64,
    cfg: &ResolventConfig,
) -> Result<Trajectory, SemigroupError> {
    mild_solution_strided(rho0, c, t_end, h, 1, cfg)
}

/// As [`mild_solution`], keeping every `stride`-th state and the last one.
pub fn mild_solution_strided(
    rho0: &Field,
    c: &CoefficientSet,
    t_end: f64,
    h: f64,
    stride: usize,
    cfg: &ResolventConfig,
) -> Result<Trajectory, SemigroupError> {
    if !(t_end > 0.0 && h > 0.0 && h <= t_end * (1.0 + 1e-12)) {
        return Err(SemigroupError::InvalidArgument(format!("need T > 0 and 0 < h <= T (T = {t_end}, h = {h})")));
    }
    if stride == 0 {
        return Err(SemigroupError::InvalidArgument("stride must be at least 1".into()));
    }
    let steps = (t_end / h - 1e-9).ceil().max(1.0) as usize;
    let mut times = vec![0.0];
    let mut states = vec![rho0.clone()];
    let mut cur = rho0.clone();
    let mut iters = 0;
    for j in 1..=steps {
        let (next, it) = step_inner(&cur, c, h, cfg).map_err(|source| SemigroupError::Step { index: j, source })?;
        iters += it;
        cur = next;
        if j % stride == 0 || j == steps {
            times.push(j as f64 * h);
            states.push(cur.clone());
        }
    }
    Ok(Trajectory { times, states, h, stride, model: c.name.clone(), newton_iterations: iters })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub t: f64,
    pub n_list: Vec<usize>,
    /// `gaps[k]` is the L1 distance between the results for `n_list[k]` and
    /// `n_list[k + 1]`.
    pub gaps: Vec<f64>,
    /// Least-squares slope of `-log gap` against `log n` over the last three
    /// gaps; `None` when a gap vanishes or fewer than two gaps exist.
    pub order: Option<f64>,
    #[serde(skip)]
    pub finals: Vec<Field>,
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() < 2 || y.iter().any(|v| !(*v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let k = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    Some(sxy / sxx)
}

/// `(I + t/n A)^(-n) rho0` for each `n`, with the successive L1 gaps and
/// the fitted order. Refinement levels run in parallel.
pub fn exponential_formula_study(
    rho0: &Field,
    c: &CoefficientSet,
    t: f64,
    n_list: &[usize],
    cfg: &ResolventConfig,
) -> Result<ConvergenceReport, SemigroupError> {
    if n_list.is_empty() || n_list[0] == 0 || n_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SemigroupError::InvalidArgument("n_list must be increasing with entries >= 1".into()));
    }
    if !(t > 0.0) {
        return Err(SemigroupError::InvalidArgument(format!("t must be positive, got {t}")));
    }
    let finals = n_list
        .par_iter()
        .map(|&n| {
            let h = t / n as f64;
            let mut cur = rho0.clone();
            for j in 1..=n {
                cur = step_inner(&cur, c, h, cfg).map_err(|source| SemigroupError::Step { index: j, source })?.0;
            }
            Ok(cur)
        })
        .collect::<Result<Vec<Field>, SemigroupError>>()?;
    let gaps: Vec<f64> = finals.windows(2).map(|w| w[0].l1_distance(&w[1])).collect();
    let tail = gaps.len().saturating_sub(3);
    let xs: Vec<f64> = n_list[tail..gaps.len()].iter().map(|&n| n as f64).collect();
    let order = log_log_slope(&xs, &gaps[tail..]).map(|s| -s);
    Ok(ConvergenceReport { t, n_list: n_list.to_vec(), gaps, order, finals })
}

/// L1 distance between the `t + s` run and the `s` run continued for `t`.
pub fn semigroup_law_check(
    rho0: &Field,
    c: &CoefficientSet,
    t: f64,
    s: f64,
    h: f64,
    cfg: &ResolventConfig,
) -> Result<f64, SemigroupError> {
    let count = |v: f64| -> Result<usize, SemigroupError> {
        let k = (v / h).round();
        if v < 0.0 || (v / h - k).abs() > 1e-9 {
            return Err(SemigroupError::InvalidArgument(format!("{v} is not a nonnegative multiple of h = {h}")));
        }
        Ok(k as usize)
    };
    if !(h > 0.0) {
        return Err(SemigroupError::InvalidArgument(format!("h must be positive, got {h}")));
    }
    let (nt, ns) = (count(t)?, count(s)?);
    let run = |start: &Field, n: usize| -> Result<Field, SemigroupError> {
        let mut cur = start.clone();
        for j in 1..=n {
            cur = step_inner(&cur, c, h, cfg).map_err(|source| SemigroupError::Step { index: j, source })?.0;
        }
        Ok(cur)
    };
    let whole = run(rho0, nt + ns)?;
    let composed = run(&run(rho0, ns)?, nt)?;
    Ok(whole.l1_distance(&composed))
}

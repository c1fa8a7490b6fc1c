//! Uniqueness functional, reference solutions and run comparison.
//!
//! For two solutions `y1, y2` the functional
//! `h_eps = (Phi_eps z_eps, z_eps)` with `z_eps = mollify(y1 - y2, eps)` and
//! `Phi_eps = (eps I - Lap)^(-1)` is a weighted `H^-1` distance. It satisfies
//! `h_eps = eps |Phi z|^2 + |grad Phi z|^2` and obeys a Gronwall bound
//! `h_eps(t) <= h_eps(0) exp(K t)` with `K = max(1, a3^2 |D|^2 / a4)`.

use serde::Serialize;
use statrs::function::erf::erf;
use statrs::function::gamma::gamma;
use thiserror::Error;

use crate::coefficients::{validate_hypotheses, CoefficientError, CoefficientSet, Sampler};
use crate::grid::{bump, gradient_norm_sq, helmholtz_inverse, mollify_field, Field, GridError, GridSpec};
use crate::semigroup::Trajectory;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Coefficients(#[from] CoefficientError),
    #[error("trajectories differ: {0}")]
    Mismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Value of `h_eps` and the relative defect of the energy identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HValue {
    pub h: f64,
    pub identity_defect: f64,
}

/// `(Phi_eps z, z) dx^d` for an already mollified `z`, plus the relative
/// defect of `eps |Phi z|^2 + |grad Phi z|^2 = h`.
pub fn h_functional(z: &Field, eps: f64) -> Result<HValue, GridError> {
    if z.values().iter().all(|v| *v == 0.0) {
        return Ok(HValue { h: 0.0, identity_defect: 0.0 });
    }
    let phi = helmholtz_inverse(z, eps)?;
    let vol = z.grid().cell_volume();
    let h = phi.dot(z);
    let energy = eps * phi.values().iter().map(|v| v * v).sum::<f64>() * vol + gradient_norm_sq(&phi);
    let identity_defect = if h == 0.0 { energy.abs() } else { (energy - h).abs() / h.abs() };
    Ok(HValue { h, identity_defect })
}

/// `h_eps(y1, y2)`; `eps` is both the mollification radius and the
/// Helmholtz shift.
pub fn h_eps_functional(y1: &Field, y2: &Field, eps: f64) -> Result<HValue, GridError> {
    y1.check_same_grid(y2)?;
    if !(eps > 0.0) {
        return Err(GridError::NonPositiveEps(eps));
    }
    h_functional(&mollify_field(&y1.sub(y2), eps), eps)
}

/// Five smooth bumps of radius `L / 4` centred along the first axis.
pub fn trace_test_functions(grid: &GridSpec) -> Vec<Field> {
    let l = grid.half_width();
    (0..5)
        .map(|i| {
            let c = -0.5 * l + 0.25 * l * i as f64;
            Field::from_fn(*grid, |x| {
                let r2 = (x[0] - c).powi(2) + x.get(1).map_or(0.0, |y| y * y);
                bump(r2.sqrt() / (0.25 * l))
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniquenessReport {
    pub eps: f64,
    pub times: Vec<f64>,
    pub h_eps: Vec<f64>,
    pub gronwall_bound: Vec<f64>,
    pub violated: bool,
    /// Largest relative defect of the energy identity over time.
    pub identity_defect: f64,
    /// Largest `|(y1 - y2, phi)|` over the test bank, per time.
    pub initial_trace: Vec<f64>,
    pub alpha3: f64,
    pub alpha4: f64,
    pub gronwall_rate: f64,
    /// Range `[-N, N]` on which the constants were fitted.
    pub truncation: f64,
}

/// Knobs of [`uniqueness_gap`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniquenessOptions {
    pub eps: f64,
    /// Absolute slack added to the envelope, for solver noise.
    pub floor: f64,
    /// Relative slack before a violation is flagged.
    pub slack: f64,
}

impl UniquenessOptions {
    pub fn new(eps: f64) -> Self {
        Self { eps, floor: 1e-15, slack: 0.1 }
    }
}

/// Tracks `h_eps` between two trajectories against the envelope
/// `h_eps(0) exp(K t) (1 + slack) + floor`.
///
/// `a3` is the flux constant and `a4 = 1 / sup beta'`, both fitted on
/// `[-N, N]` with `N` the largest value either run attains.
pub fn uniqueness_gap(
    traj1: &Trajectory,
    traj2: &Trajectory,
    c: &CoefficientSet,
    opts: UniquenessOptions,
) -> Result<UniquenessReport, DiagnosticsError> {
    if traj1.times.len() != traj2.times.len()
        || traj1.times.iter().zip(&traj2.times).any(|(a, b)| (a - b).abs() > 1e-12 * (1.0 + a.abs()))
    {
        return Err(DiagnosticsError::Mismatch("time stamps differ".into()));
    }
    let grid = *traj1.states[0].grid();
    traj1.states[0].check_same_grid(&traj2.states[0])?;
    if !(opts.eps > 0.0) {
        return Err(DiagnosticsError::InvalidArgument(format!("eps must be positive, got {}", opts.eps)));
    }
    let n_trunc = traj1
        .states
        .iter()
        .chain(&traj2.states)
        .map(|s| s.values().iter().fold(0.0f64, |m, v| m.max(v.abs())))
        .fold(0.0f64, f64::max);
    let n_trunc = if n_trunc > 0.0 { n_trunc } else { 1.0 };
    let rep = validate_hypotheses(c, &Sampler::new(-n_trunc, n_trunc, 400).with_drift_grid(grid))?;
    let alpha3 = rep.alpha2;
    let alpha4 = if rep.beta_prime_sup > 0.0 { 1.0 / rep.beta_prime_sup } else { f64::INFINITY };
    let k = (alpha3 * alpha3 * rep.drift_sup * rep.drift_sup / alpha4).max(1.0);

    let bank = trace_test_functions(&grid);
    let mut h_eps = Vec::with_capacity(traj1.times.len());
    let mut trace = Vec::with_capacity(traj1.times.len());
    let mut defect = 0.0f64;
    for (a, b) in traj1.states.iter().zip(&traj2.states) {
        let hv = h_eps_functional(a, b, opts.eps)?;
        h_eps.push(hv.h);
        defect = defect.max(hv.identity_defect);
        let z = a.sub(b);
        trace.push(bank.iter().map(|phi| z.dot(phi).abs()).fold(0.0, f64::max));
    }
    let t0 = traj1.times[0];
    let bound: Vec<f64> = traj1
        .times
        .iter()
        .map(|t| h_eps[0] * (k * (t - t0)).exp() * (1.0 + opts.slack) + opts.floor)
        .collect();
    let violated = h_eps.iter().zip(&bound).any(|(h, b)| h > b);
    Ok(UniquenessReport {
        eps: opts.eps,
        times: traj1.times.clone(),
        h_eps,
        gronwall_bound: bound,
        violated,
        identity_defect: defect,
        initial_trace: trace,
        alpha3,
        alpha4,
        gronwall_rate: k,
        truncation: n_trunc,
    })
}

/// Running value of `|rho_J|_2^2 + h sum_{j <= J} |grad beta(rho_j)|_2^2`
/// and its dissipation part.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyProfile {
    pub times: Vec<f64>,
    pub l2_sq: Vec<f64>,
    pub dissipation: Vec<f64>,
}

pub fn energy_profile(traj: &Trajectory, c: &CoefficientSet) -> EnergyProfile {
    let vol = traj.states[0].grid().cell_volume();
    let mut acc = 0.0;
    let mut l2_sq = Vec::new();
    let mut dissipation = Vec::new();
    for (j, s) in traj.states.iter().enumerate() {
        if j > 0 {
            acc += (traj.times[j] - traj.times[j - 1]) * gradient_norm_sq(&s.map(|r| c.beta(r)));
        }
        l2_sq.push(s.values().iter().map(|v| v * v).sum::<f64>() * vol);
        dissipation.push(acc);
    }
    EnergyProfile { times: traj.times.clone(), l2_sq, dissipation }
}

/// Centre and initial width of a Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeatParams {
    pub mean: [f64; 2],
    pub sigma0: f64,
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// Cell averages of the Gaussian of variance `sigma0^2 + 2t` per axis,
/// the free-space heat flow of a Gaussian.
pub fn heat_oracle(params: HeatParams, t: f64, grid: &GridSpec) -> Field {
    let s = (params.sigma0 * params.sigma0 + 2.0 * t).sqrt();
    let n = grid.cells();
    let dx = grid.dx();
    let axis = |mu: f64| -> Vec<f64> {
        (0..n)
            .map(|i| (normal_cdf((grid.face(i + 1) - mu) / s) - normal_cdf((grid.face(i) - mu) / s)) / dx)
            .collect()
    };
    let ax = axis(params.mean[0]);
    match grid.dim() {
        1 => Field::from_raw(*grid, ax),
        _ => {
            let ay = axis(params.mean[1]);
            Field::from_raw(*grid, (0..grid.len()).map(|k| ax[k % n] * ay[k / n]).collect())
        }
    }
}

/// Source-type solution of `rho_t = Lap(rho^m)` with unit mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Barenblatt {
    pub m: f64,
    pub dim: usize,
    alpha: f64,
    k: f64,
    c: f64,
}

impl Barenblatt {
    pub fn new(m: f64, dim: usize) -> Result<Self, DiagnosticsError> {
        if !(m > 1.0) || !(1..=2).contains(&dim) {
            return Err(DiagnosticsError::InvalidArgument(format!("need m > 1 and d in 1..=2 (m = {m}, d = {dim})")));
        }
        let d = dim as f64;
        let alpha = d / (d * (m - 1.0) + 2.0);
        let k = alpha * (m - 1.0) / (2.0 * m * d);
        let p = 1.0 / (m - 1.0);
        let unit = k.powf(-d / 2.0) * std::f64::consts::PI.powf(d / 2.0) * gamma(p + 1.0) / gamma(p + 1.0 + d / 2.0);
        let c = unit.recip().powf(1.0 / (p + d / 2.0));
        Ok(Self { m, dim, alpha, k, c })
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let base = self.c - self.k * r2 * t.powf(-2.0 * self.alpha / self.dim as f64);
        if base <= 0.0 {
            0.0
        } else {
            t.powf(-self.alpha) * base.powf(1.0 / (self.m - 1.0))
        }
    }

    pub fn support_radius(&self, t: f64) -> f64 {
        (self.c / self.k).sqrt() * t.powf(self.alpha / self.dim as f64)
    }
}

/// Cell averages of the unit-mass Barenblatt profile at time `t + t0`,
/// by an 8-point midpoint rule per axis and cell, renormalized to unit mass
/// on the grid.
pub fn barenblatt_oracle(m: f64, t: f64, t0: f64, grid: &GridSpec) -> Result<Field, DiagnosticsError> {
    if !(t + t0 > 0.0) {
        return Err(DiagnosticsError::InvalidArgument(format!("t + t0 must be positive, got {}", t + t0)));
    }
    let b = Barenblatt::new(m, grid.dim())?;
    let tt = t + t0;
    const Q: usize = 8;
    let dx = grid.dx();
    let sub = |i: usize, q: usize| grid.face(i) + (q as f64 + 0.5) * dx / Q as f64;
    let n = grid.cells();
    let vals: Vec<f64> = (0..grid.len())
        .map(|k| match grid.dim() {
            1 => (0..Q).map(|q| b.eval(tt, &[sub(k, q)])).sum::<f64>() / Q as f64,
            _ => {
                let (i, j) = (k % n, k / n);
                let mut acc = 0.0;
                for qj in 0..Q {
                    for qi in 0..Q {
                        acc += b.eval(tt, &[sub(i, qi), sub(j, qj)]);
                    }
                }
                acc / (Q * Q) as f64
            }
        })
        .collect();
    let f = Field::from_raw(*grid, vals);
    let mass = f.mass();
    Ok(f.scale(1.0 / mass))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorCurve {
    pub times: Vec<f64>,
    pub errors: Vec<f64>,
    pub max: f64,
}

/// L1 distance of each stored state to `oracle(t)`.
pub fn compare_l1(traj: &Trajectory, oracle: impl Fn(f64) -> Field) -> Result<ErrorCurve, DiagnosticsError> {
    let mut errors = Vec::with_capacity(traj.times.len());
    for (&t, s) in traj.times.iter().zip(&traj.states) {
        let o = oracle(t);
        s.check_same_grid(&o)?;
        errors.push(s.l1_distance(&o));
    }
    let max = errors.iter().copied().fold(0.0, f64::max);
    Ok(ErrorCurve { times: traj.times.clone(), errors, max })
}

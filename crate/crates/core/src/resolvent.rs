//! The nonlinear resolvent `J_lambda = (I + lambda A)^(-1)`.
//!
//! `y = J_lambda(f)` solves `y - lambda Lap beta(y) + lambda div(D b*(y)) = f`
//! on the grid. It is reached through the regularized problems
//!
//! ```text
//! y + lambda (eps I - Lap)(beta(y) + eps y) + lambda div(D_eps b*_eps(y)) = f
//! ```
//!
//! solved along a decreasing `eps` schedule with warm starts, followed by one
//! solve of the unregularized discrete problem (`eps = 0`). Each solve is a
//! damped Newton iteration on the whole grid, with the step halved whenever
//! the L1 residual would increase.
//!
//! The discrete operator uses the centered Laplacian and donor-cell upwind
//! fluxes, so for nondecreasing `b*` it is accretive in L1: the computed
//! resolvent contracts, keeps densities nonnegative and, with no-flux walls,
//! conserves mass up to the Newton residual.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coefficients::{regularize, CoefficientSet, RegularizedCoefficients};
use crate::grid::{
    boundary_faces, divergence_upwind, laplacian, neg_laplacian_diag, FaceVelocity, Field, GridError, GridSpec,
};
use crate::linalg::Banded;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResolventError {
    #[error("invalid resolvent configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("Newton iteration at eps = {eps} did not converge; best L1 residual {best_residual:.3e}")]
    MaxItersExceeded { eps: f64, best_residual: f64 },
    #[error("non-finite iterate at eps = {eps} in cell {cell}")]
    NonFiniteIterate { eps: f64, cell: usize },
    #[error("continuation stalled at eps = {eps}: Cauchy gaps {gaps:?}")]
    ContinuationStalled { eps: f64, gaps: Vec<f64> },
}

/// `eps_k = 0.1 * 2^(-k)` for `k = 0..=k_max`.
pub fn default_eps_schedule(k_max: usize) -> Vec<f64> {
    (0..=k_max).map(|k| 0.1 * 0.5f64.powi(k as i32)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResolventConfig {
    pub lambda: f64,
    pub eps_schedule: Vec<f64>,
    /// Bound on the L1 norm of the discrete residual.
    pub inner_tol: f64,
    /// Continuation stops once consecutive levels differ by this much in L1.
    pub cauchy_tol: f64,
    pub max_inner_iters: usize,
    /// Initial Newton step length in `(0, 1]`.
    pub damping: f64,
    /// Mollifier half-width for `b`; `None` ties it to `eps`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mollifier_width: Option<f64>,
    /// Finish with a solve of the unregularized discrete problem.
    pub limit_solve: bool,
}

impl Default for ResolventConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            eps_schedule: default_eps_schedule(12),
            inner_tol: 1e-10,
            cauchy_tol: 1e-8,
            max_inner_iters: 100,
            damping: 1.0,
            mollifier_width: None,
            limit_solve: true,
        }
    }
}

impl ResolventConfig {
    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn validate(&self) -> Result<(), ResolventError> {
        let bad = |m: String| Err(ResolventError::InvalidConfig(m));
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if self.eps_schedule.is_empty() && !self.limit_solve {
            return bad("empty eps schedule without a limit solve".into());
        }
        if self.eps_schedule.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return bad("eps schedule entries must be positive".into());
        }
        if self.eps_schedule.windows(2).any(|w| !(w[1] < w[0])) {
            return bad("eps schedule must be strictly decreasing".into());
        }
        if !(self.inner_tol > 0.0) || !(self.cauchy_tol > 0.0) {
            return bad("tolerances must be positive".into());
        }
        if self.max_inner_iters == 0 {
            return bad("max_inner_iters must be at least 1".into());
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return bad(format!("damping must lie in (0, 1], got {}", self.damping));
        }
        if let Some(w) = self.mollifier_width {
            if !(w >= 0.0 && w.is_finite()) {
                return bad(format!("mollifier width must be nonnegative, got {w}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolventSolution {
    pub y: Field,
    pub beta_y: Field,
    pub residual_l1: f64,
    /// `(eps, gap)` per level; the gap of the first level is measured from
    /// the input `f`, and the limit solve is recorded with `eps = 0`.
    pub eps_history: Vec<(f64, f64)>,
    pub newton_iterations: usize,
}

/// Outcome of a single Newton solve.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizedSolve {
    pub y: Field,
    pub residual_l1: f64,
    pub iterations: usize,
}

struct Discrete<'a> {
    grid: GridSpec,
    lambda: f64,
    eps: f64,
    reg: RegularizedCoefficients<'a>,
    vel: Option<FaceVelocity>,
    f: &'a [f64],
}

impl<'a> Discrete<'a> {
    fn new(f: &'a Field, c: &'a CoefficientSet, lambda: f64, eps: f64, width: f64) -> Self {
        let grid = *f.grid();
        let reg = regularize(c, eps, width);
        let vel = c.has_transport().then(|| FaceVelocity::from_fn(grid, |x| reg.drift_eps(x)));
        Self { grid, lambda, eps, reg, vel, f: f.values() }
    }

    fn beta_reg(&self, r: f64) -> f64 {
        self.reg.base.beta(r) + self.eps * r
    }

    /// Residual and, with transport, the flux derivative `b*_eps'(y)`.
    fn residual(&self, y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let g = self.grid;
        let b = Field::from_raw(g, y.iter().map(|&r| self.beta_reg(r)).collect());
        let lap = laplacian(&b);
        let mut qp = Vec::new();
        let div = self.vel.as_ref().map(|v| {
            let (q, dq): (Vec<f64>, Vec<f64>) = y.iter().map(|&r| self.reg.b_star_eps_with_derivative(r)).unzip();
            qp = dq;
            divergence_upwind(&Field::from_raw(g, q), v)
        });
        let mut out = Vec::with_capacity(y.len());
        for k in 0..y.len() {
            let mut op = self.eps * b.values()[k] - lap.values()[k];
            if let Some(d) = &div {
                op += d.values()[k];
            }
            out.push(y[k] + self.lambda * op - self.f[k]);
        }
        (out, qp)
    }

    fn l1(&self, r: &[f64]) -> f64 {
        r.iter().map(|v| v.abs()).sum::<f64>() * self.grid.cell_volume()
    }

    /// Solves `J(y) x = rhs` for the Newton matrix at `y`.
    fn newton_solve(&self, y: &[f64], qp: &[f64], rhs: &[f64]) -> Vec<f64> {
        let g = self.grid;
        let n = g.cells();
        let d = g.dim();
        let lam = self.lambda;
        let inv2 = 1.0 / (g.dx() * g.dx());
        let invdx = 1.0 / g.dx();
        let bp: Vec<f64> = y.iter().map(|&r| self.reg.base.beta_prime(r) + self.eps).collect();
        let bw = if d == 1 { 1 } else { n };
        let mut m = Banded::zeros(g.len(), bw);
        for k in 0..g.len() {
            let diag = neg_laplacian_diag(d, g.boundary(), boundary_faces(&g, k)) * inv2;
            m.add(k, k, 1.0 + lam * (self.eps + diag) * bp[k]);
            let (i, j) = (k % n, k / n);
            let mut nb = |o: usize| m.add(k, o, -lam * inv2 * bp[o]);
            if i > 0 {
                nb(k - 1);
            }
            if i + 1 < n {
                nb(k + 1);
            }
            if d == 2 {
                if j > 0 {
                    nb(k - n);
                }
                if j + 1 < n {
                    nb(k + n);
                }
            }
        }
        if let Some(vel) = &self.vel {
            let mut face = |v: f64, l: usize, r: usize| {
                let a = lam * invdx * v.max(0.0) * qp[l];
                let b = lam * invdx * (-v).max(0.0) * qp[r];
                m.add(l, l, a);
                m.add(l, r, -b);
                m.add(r, l, -a);
                m.add(r, r, b);
            };
            let vx = vel.component(0);
            if d == 1 {
                for f in 1..n {
                    face(vx[f], f - 1, f);
                }
            } else {
                let vy = vel.component(1);
                for j in 0..n {
                    for f in 1..n {
                        face(vx[j * (n + 1) + f], j * n + f - 1, j * n + f);
                    }
                }
                for f in 1..n {
                    for i in 0..n {
                        face(vy[f * n + i], (f - 1) * n + i, f * n + i);
                    }
                }
            }
        }
        m.solve(rhs)
    }

    fn solve(&self, start: Vec<f64>, cfg: &ResolventConfig) -> Result<RegularizedSolve, ResolventError> {
        let mut y = start;
        let (mut r, mut qp) = self.residual(&y);
        let mut rn = self.l1(&r);
        if let Some(cell) = r.iter().position(|v| !v.is_finite()) {
            return Err(ResolventError::NonFiniteIterate { eps: self.eps, cell });
        }
        let mut step = cfg.damping;
        for it in 0..cfg.max_inner_iters {
            if rn <= cfg.inner_tol {
                return Ok(RegularizedSolve { y: Field::from_raw(self.grid, y), residual_l1: rn, iterations: it });
            }
            let neg: Vec<f64> = r.iter().map(|v| -v).collect();
            let delta = self.newton_solve(&y, &qp, &neg);
            if let Some(cell) = delta.iter().position(|v| !v.is_finite()) {
                return Err(ResolventError::NonFiniteIterate { eps: self.eps, cell });
            }
            let mut t = step;
            let mut accepted = false;
            while t >= 1e-12 {
                let trial: Vec<f64> = y.iter().zip(&delta).map(|(a, b)| a + t * b).collect();
                let (rt, qt) = self.residual(&trial);
                let rtn = self.l1(&rt);
                if rtn.is_finite() && rtn < rn {
                    y = trial;
                    r = rt;
                    qp = qt;
                    rn = rtn;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
            step = (2.0 * t).min(1.0).max(cfg.damping);
        }
        if rn <= cfg.inner_tol {
            return Ok(RegularizedSolve {
                y: Field::from_raw(self.grid, y),
                residual_l1: rn,
                iterations: cfg.max_inner_iters,
            });
        }
        Err(ResolventError::MaxItersExceeded { eps: self.eps, best_residual: rn })
    }
}

fn width_for(cfg: &ResolventConfig, eps: f64) -> f64 {
    cfg.mollifier_width.unwrap_or(eps)
}

/// One Newton solve of the regularized problem at level `eps`; also reports
/// the residual and iteration count. `eps = 0` gives the unregularized
/// discrete problem.
pub fn solve_regularized_detailed(
    f: &Field,
    c: &CoefficientSet,
    lambda: f64,
    eps: f64,
    cfg: &ResolventConfig,
    warm_start: Option<&Field>,
) -> Result<RegularizedSolve, ResolventError> {
    cfg.validate()?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(ResolventError::InvalidConfig(format!("lambda must be positive, got {lambda}")));
    }
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(ResolventError::InvalidConfig(format!("eps must be nonnegative, got {eps}")));
    }
    let start = match warm_start {
        Some(w) => {
            f.check_same_grid(w)?;
            w.values().to_vec()
        }
        None => f.values().to_vec(),
    };
    let width = if eps == 0.0 { 0.0 } else { width_for(cfg, eps) };
    Discrete::new(f, c, lambda, eps, width).solve(start, cfg)
}

/// Solves the regularized problem at level `eps > 0` to `cfg.inner_tol`.
pub fn solve_regularized(
    f: &Field,
    c: &CoefficientSet,
    lambda: f64,
    eps: f64,
    cfg: &ResolventConfig,
    warm_start: Option<&Field>,
) -> Result<Field, ResolventError> {
    if !(eps > 0.0) {
        return Err(ResolventError::InvalidConfig(format!("eps must be positive, got {eps}")));
    }
    solve_regularized_detailed(f, c, lambda, eps, cfg, warm_start).map(|s| s.y)
}

/// `J_lambda(f)` with `lambda = cfg.lambda`.
pub fn resolvent(f: &Field, c: &CoefficientSet, cfg: &ResolventConfig) -> Result<ResolventSolution, ResolventError> {
    resolvent_from(f, c, cfg, None)
}

/// As [`resolvent`], with an initial guess for the first level.
pub fn resolvent_from(
    f: &Field,
    c: &CoefficientSet,
    cfg: &ResolventConfig,
    guess: Option<&Field>,
) -> Result<ResolventSolution, ResolventError> {
    cfg.validate()?;
    let lambda = cfg.lambda;
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut current: Option<RegularizedSolve> = None;
    let mut stalls = 0;
    let mut last_gap = f64::INFINITY;
    for &eps in &cfg.eps_schedule {
        let warm = current.as_ref().map(|s| &s.y).or(guess);
        let sol = solve_regularized_detailed(f, c, lambda, eps, cfg, warm)?;
        iterations += sol.iterations;
        let gap = sol.y.l1_distance(current.as_ref().map(|s| &s.y).unwrap_or(f));
        history.push((eps, gap));
        let first = current.is_none();
        current = Some(sol);
        if !first && gap <= cfg.cauchy_tol {
            break;
        }
        if !first {
            if gap >= last_gap {
                stalls += 1;
                if stalls >= 3 {
                    return Err(ResolventError::ContinuationStalled {
                        eps,
                        gaps: history.iter().map(|h| h.1).collect(),
                    });
                }
            } else {
                stalls = 0;
            }
        }
        last_gap = gap;
    }
    if cfg.limit_solve {
        let warm = current.as_ref().map(|s| &s.y).or(guess);
        let sol = solve_regularized_detailed(f, c, lambda, 0.0, cfg, warm)?;
        iterations += sol.iterations;
        let gap = sol.y.l1_distance(current.as_ref().map(|s| &s.y).unwrap_or(f));
        history.push((0.0, gap));
        current = Some(sol);
    }
    let sol = current.expect("at least one level is solved");
    let beta_y = sol.y.map(|r| c.beta(r));
    Ok(ResolventSolution { y: sol.y, beta_y, residual_l1: sol.residual_l1, eps_history: history, newton_iterations: iterations })
}

/// L1 defect of the resolvent identity
/// `J_l2(f) = J_l1((l1/l2) f + (1 - l1/l2) J_l2(f))`.
pub fn resolvent_identity_check(
    f: &Field,
    c: &CoefficientSet,
    lambda1: f64,
    lambda2: f64,
    cfg: &ResolventConfig,
) -> Result<f64, ResolventError> {
    if !(lambda1 > 0.0 && lambda2 > 0.0) {
        return Err(ResolventError::InvalidConfig(format!("lambdas must be positive, got {lambda1}, {lambda2}")));
    }
    let j2 = resolvent(f, c, &cfg.clone().with_lambda(lambda2))?.y;
    let ratio = lambda1 / lambda2;
    let g = f.lincomb(ratio, &j2, 1.0 - ratio);
    let j1 = resolvent(&g, c, &cfg.clone().with_lambda(lambda1))?.y;
    Ok(j2.l1_distance(&j1))
}

/// The unregularized discrete operator `-Lap beta(y) + div(D b*(y))`.
pub fn apply_operator(c: &CoefficientSet, y: &Field) -> Field {
    let g = *y.grid();
    let lap = laplacian(&y.map(|r| c.beta(r)));
    let mut out: Vec<f64> = lap.values().iter().map(|v| -v).collect();
    if c.has_transport() {
        let vel = FaceVelocity::from_fn(g, |x| c.drift(x));
        let div = divergence_upwind(&y.map(|r| c.b_star(r)), &vel);
        for (o, d) in out.iter_mut().zip(div.values()) {
            *o += d;
        }
    }
    Field::from_raw(g, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{DriftField, Mobility};
    use crate::grid::Boundary;

    fn gaussian(g: GridSpec, s: f64) -> Field {
        let f = Field::from_fn(g, |x| (-x.iter().map(|v| v * v).sum::<f64>() / (2.0 * s * s)).exp());
        let m = f.mass();
        f.scale(1.0 / m)
    }

    /// Dense Gaussian elimination with partial pivoting.
    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for k in 0..n {
            let p = (k..n).max_by(|&i, &j| a[i][k].abs().partial_cmp(&a[j][k].abs()).unwrap()).unwrap();
            a.swap(k, p);
            b.swap(k, p);
            for i in k + 1..n {
                let f = a[i][k] / a[k][k];
                for j in k..n {
                    a[i][j] -= f * a[k][j];
                }
                b[i] -= f * b[k];
            }
        }
        let mut x = vec![0.0; n];
        for k in (0..n).rev() {
            let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
            x[k] = (b[k] - s) / a[k][k];
        }
        x
    }

    #[test]
    fn zero_data_gives_zero() {
        let g = GridSpec::new(1, 4.0, 32, Boundary::NoFlux).unwrap();
        let c = CoefficientSet::porous_medium(2.0).unwrap();
        let sol = resolvent(&Field::zeros(g), &c, &ResolventConfig::default()).unwrap();
        assert_eq!(sol.y.max(), 0.0);
        assert_eq!(sol.y.min(), 0.0);
    }

    #[test]
    fn heat_matches_dense_linear_solve() {
        let g = GridSpec::new(1, 4.0, 48, Boundary::NoFlux).unwrap();
        let n = g.cells();
        let f = gaussian(g, 0.7);
        let (lam, eps) = (0.3, 0.1);
        let h2 = g.dx() * g.dx();
        // (I + lam (eps - Lap)(1 + eps)) y = f with reflecting ghost cells
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            let mut nbrs = 0.0;
            for j in [i.wrapping_sub(1), i + 1] {
                if j < n {
                    a[i][j] -= lam * (1.0 + eps) / h2;
                    nbrs += 1.0;
                }
            }
            a[i][i] = 1.0 + lam * (1.0 + eps) * (eps + nbrs / h2);
        }
        let exact = dense_solve(a, f.values().to_vec());
        let cfg = ResolventConfig { inner_tol: 1e-12, ..Default::default() };
        let y = solve_regularized(&f, &CoefficientSet::heat(), lam, eps, &cfg, None).unwrap();
        let err: f64 = y.values().iter().zip(&exact).map(|(a, b)| (a - b).abs()).sum::<f64>() * g.dx();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn porous_medium_residual_by_independent_stencil() {
        let g = GridSpec::new(1, 4.0, 64, Boundary::NoFlux).unwrap();
        let f = gaussian(g, 0.5);
        let c = CoefficientSet::porous_medium(2.0).unwrap();
        let (lam, eps) = (0.2, 0.05);
        let cfg = ResolventConfig::default();
        let y = solve_regularized(&f, &c, lam, eps, &cfg, None).unwrap();
        let v = y.values();
        let n = v.len();
        let h2 = g.dx() * g.dx();
        let big_b = |r: f64| r * r.abs() + eps * r;
        let mut res = 0.0;
        for i in 0..n {
            let l = if i == 0 { v[0] } else { v[i - 1] };
            let r = if i == n - 1 { v[n - 1] } else { v[i + 1] };
            let lap = (big_b(l) - 2.0 * big_b(v[i]) + big_b(r)) / h2;
            res += (v[i] + lam * (eps * big_b(v[i]) - lap) - f.values()[i]).abs() * g.dx();
        }
        assert!(res <= cfg.inner_tol * 1.01, "{res}");
        assert!(y.min() >= 0.0);
    }

    #[test]
    fn continuation_records_levels_and_limit() {
        let g = GridSpec::new(1, 4.0, 64, Boundary::NoFlux).unwrap();
        let f = gaussian(g, 0.5);
        let c = CoefficientSet::porous_medium(2.0)
            .unwrap()
            .with_mobility(Mobility::SelfConsistent)
            .with_drift(DriftField::TanhWell { strength: 1.0 });
        let sol = resolvent(&f, &c, &ResolventConfig::default()).unwrap();
        assert_eq!(sol.eps_history.last().unwrap().0, 0.0);
        assert!(sol.residual_l1 <= 1e-10);
        assert!((sol.y.mass() - 1.0).abs() < 1e-8);
        for (b, y) in sol.beta_y.values().iter().zip(sol.y.values()) {
            assert_eq!(*b, c.beta(*y));
        }
        let gaps: Vec<f64> = sol.eps_history[1..sol.eps_history.len() - 1].iter().map(|h| h.1).collect();
        let tail = &gaps[gaps.len() - 4..];
        assert!(tail.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
    }

    #[test]
    fn two_dimensional_solve_conserves_mass() {
        let g = GridSpec::new(2, 4.0, 24, Boundary::NoFlux).unwrap();
        let f = gaussian(g, 0.8);
        let c = CoefficientSet::bose_einstein(1.0)
            .unwrap()
            .with_mobility(Mobility::SelfConsistent)
            .with_drift(DriftField::TanhWell { strength: 1.0 });
        let cfg = ResolventConfig { eps_schedule: default_eps_schedule(4), ..Default::default() };
        let sol = resolvent(&f, &c, &cfg).unwrap();
        assert!((sol.y.mass() - 1.0).abs() < 1e-8);
        assert!(sol.y.min() >= -1e-10);
    }

    #[test]
    fn identity_defect() {
        let g = GridSpec::new(1, 4.0, 64, Boundary::NoFlux).unwrap();
        let f = gaussian(g, 0.5);
        let cfg = ResolventConfig::default();
        let heat = CoefficientSet::heat();
        assert!(resolvent_identity_check(&f, &heat, 0.3, 0.3, &cfg).unwrap() < 1e-9);
        assert!(resolvent_identity_check(&f, &heat, 0.01, 0.02, &cfg).unwrap() < 1e-8);
        let pm = CoefficientSet::porous_medium(2.0).unwrap();
        assert!(resolvent_identity_check(&f, &pm, 0.005, 0.01, &cfg).unwrap() <= 10.0 * cfg.cauchy_tol);
    }

    #[test]
    fn config_validation() {
        let mut cfg = ResolventConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.eps_schedule = vec![0.1, 0.2];
        assert!(cfg.validate().is_err());
        let cfg = ResolventConfig { lambda: 0.0, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = ResolventConfig { damping: 1.5, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}

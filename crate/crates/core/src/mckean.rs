//! Particle side of the equation: the McKean-Vlasov SDE
//!
//! ```text
//! dX = D(X) b(rho(t, X)) dt + sqrt(2 beta(rho(t, X)) / rho(t, X)) dW
//! ```
//!
//! In linearized mode `rho` is frozen from a solved PDE trajectory, so the
//! one-time marginals of `X` should reproduce it. Paths are advanced with
//! Euler-Maruyama; the noise of particle `p` at step `s` comes from a
//! ChaCha8 stream keyed by `(seed, p, s)`, so results do not depend on how
//! the particles are spread over threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;
use thiserror::Error;

use crate::coefficients::{CoefficientSet, RHO_FLOOR};
use crate::grid::{Field, GridError, GridSpec};
use crate::semigroup::Trajectory;

/// Random words reserved for each (particle, step) pair.
const WORDS_PER_STEP: u128 = 64;
/// Particles per block of the KDE reduction.
const KDE_BLOCK: usize = 4096;
/// Kernel support used by the KDE, in bandwidths.
const KDE_CUTOFF: f64 = 8.0;
/// Projections used by the sliced distance in 2D.
pub const SLICED_DIRECTIONS: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum McKeanError {
    #[error("invalid SDE configuration: {0}")]
    InvalidConfig(String),
    #[error("particle {particle} left the domain at step {step}")]
    ParticleEscaped { particle: usize, step: usize },
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    Silverman,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdeConfig {
    pub n_particles: usize,
    pub dt: f64,
    pub seed: u64,
    pub bandwidth_rule: BandwidthRule,
    pub reflect_at_boundary: bool,
    /// Keep every `snapshot_stride`-th stored PDE time as a snapshot.
    pub snapshot_stride: usize,
}

impl Default for SdeConfig {
    fn default() -> Self {
        Self {
            n_particles: 10_000,
            dt: 1e-3,
            seed: 0,
            bandwidth_rule: BandwidthRule::Silverman,
            reflect_at_boundary: true,
            snapshot_stride: 10,
        }
    }
}

impl SdeConfig {
    pub fn validate(&self) -> Result<(), McKeanError> {
        if self.n_particles == 0 {
            return Err(McKeanError::InvalidConfig("n_particles must be at least 1".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(McKeanError::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if let BandwidthRule::Fixed(h) = self.bandwidth_rule {
            if !(h > 0.0) {
                return Err(McKeanError::InvalidConfig(format!("fixed bandwidth must be positive, got {h}")));
            }
        }
        if self.snapshot_stride == 0 {
            return Err(McKeanError::InvalidConfig("snapshot_stride must be at least 1".into()));
        }
        Ok(())
    }
}

/// `sqrt(2 beta(rho) / rho)`, with the ratio replaced by `beta'(0)` below
/// [`RHO_FLOOR`]. Negative inputs are treated as 0.
pub fn diffusion_coefficient(c: &CoefficientSet, rho_val: f64) -> f64 {
    (2.0 * c.beta_over_r(rho_val.max(0.0))).max(0.0).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    /// Row-major `n_particles x dim`.
    pub positions: Vec<f64>,
    pub dim: usize,
    pub t: f64,
    pub seed: u64,
    pub n_particles: usize,
}

impl ParticleEnsemble {
    pub fn new(positions: Vec<f64>, dim: usize, t: f64, seed: u64) -> Result<Self, McKeanError> {
        if !(1..=2).contains(&dim) || positions.is_empty() || !positions.len().is_multiple_of(dim) {
            return Err(McKeanError::InvalidConfig(format!(
                "{} coordinates do not form a nonempty {dim}-dimensional ensemble",
                positions.len()
            )));
        }
        if positions.iter().any(|v| !v.is_finite()) {
            return Err(McKeanError::InvalidConfig("non-finite particle position".into()));
        }
        let n_particles = positions.len() / dim;
        Ok(Self { positions, dim, t, seed, n_particles })
    }

    pub fn particle(&self, p: usize) -> &[f64] {
        &self.positions[p * self.dim..(p + 1) * self.dim]
    }

    /// Coordinate `axis` of every particle.
    pub fn axis(&self, axis: usize) -> Vec<f64> {
        self.positions.iter().skip(axis).step_by(self.dim).copied().collect()
    }

    pub fn mean(&self) -> [f64; 2] {
        let mut m = [0.0; 2];
        for a in 0..self.dim {
            m[a] = self.axis(a).iter().sum::<f64>() / self.n_particles as f64;
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleTrajectory {
    pub times: Vec<f64>,
    pub snapshots: Vec<ParticleEnsemble>,
    /// Set for the interacting (self-consistent) mode.
    pub experimental: bool,
}

impl EnsembleTrajectory {
    pub fn last(&self) -> &ParticleEnsemble {
        self.snapshots.last().expect("at least the initial snapshot is stored")
    }
}

/// Law of the initial positions.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialLaw {
    /// Piecewise-constant density on its grid; negative values count as 0.
    Density(Field),
    /// Given positions, row-major.
    Points { dim: usize, positions: Vec<f64> },
}

fn rng_for(seed: u64, particle: usize, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(particle as u64);
    rng.set_word_pos(step as u128 * WORDS_PER_STEP);
    rng
}

/// `n` draws from the piecewise-constant density `rho`; particle `p` uses
/// stream `p`, step 0 of `seed`.
pub fn sample_from_field(rho: &Field, n: usize, seed: u64) -> Result<ParticleEnsemble, McKeanError> {
    let g = *rho.grid();
    let mut cdf = Vec::with_capacity(g.len());
    let mut acc = 0.0;
    for v in rho.values() {
        acc += v.max(0.0);
        cdf.push(acc);
    }
    if !(acc > 0.0) {
        return Err(McKeanError::InvalidConfig("cannot sample from a density without positive mass".into()));
    }
    let d = g.dim();
    let dx = g.dx();
    let nc = g.cells();
    let positions: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|p| {
            let mut rng = rng_for(seed, p, 0);
            let u: f64 = rng.random::<f64>() * acc;
            let k = cdf.partition_point(|c| *c <= u).min(g.len() - 1);
            let (i, j) = (k % nc, k / nc);
            let mut out = [g.face(i) + dx * rng.random::<f64>(), 0.0];
            if d == 2 {
                out[1] = g.face(j) + dx * rng.random::<f64>();
            }
            out.into_iter().take(d)
        })
        .collect();
    ParticleEnsemble::new(positions, d, 0.0, seed)
}

/// Multilinear interpolation between cell centres, constant in the
/// half-cells along the walls.
pub fn interpolate(field: &Field, x: &[f64]) -> f64 {
    let g = field.grid();
    let n = g.cells();
    let dx = g.dx();
    let locate = |v: f64| -> (usize, f64) {
        let s = ((v + g.half_width()) / dx - 0.5).clamp(0.0, (n - 1) as f64);
        let i = (s.floor() as usize).min(n - 2);
        (i, s - i as f64)
    };
    let v = field.values();
    match g.dim() {
        1 => {
            let (i, w) = locate(x[0]);
            (1.0 - w) * v[i] + w * v[i + 1]
        }
        _ => {
            let (i, wx) = locate(x[0]);
            let (j, wy) = locate(x[1]);
            let k = j * n + i;
            (1.0 - wy) * ((1.0 - wx) * v[k] + wx * v[k + 1]) + wy * ((1.0 - wx) * v[k + n] + wx * v[k + n + 1])
        }
    }
}

fn reflect(v: f64, l: f64) -> f64 {
    let mut x = v;
    // a few reflections settle any finite jump of less than the box width
    for _ in 0..64 {
        if x > l {
            x = 2.0 * l - x;
        } else if x < -l {
            x = -2.0 * l - x;
        } else {
            return x;
        }
    }
    x.clamp(-l, l)
}

/// Advances all particles over `steps` global step indices, with `fields[s]`
/// the coefficient field at the start of step `first_step + s`.
fn advance(
    positions: &mut [f64],
    dim: usize,
    c: &CoefficientSet,
    sde: &SdeConfig,
    fields: &[Field],
    first_step: usize,
) -> Result<(), McKeanError> {
    let grid = *fields[0].grid();
    let l = grid.half_width();
    let sq = sde.dt.sqrt();
    let drift_on = c.has_transport();
    positions.par_chunks_mut(dim).enumerate().try_for_each(|(p, x)| {
        for (s, field) in fields.iter().enumerate() {
            let step = first_step + s;
            let mut rng = rng_for(sde.seed, p, step + 1);
            let rho = interpolate(field, x).max(0.0);
            let sigma = diffusion_coefficient(c, rho);
            let bd = if drift_on {
                let d = c.drift(x);
                let b = c.b(rho);
                [d[0] * b, d[1] * b]
            } else {
                [0.0, 0.0]
            };
            for a in 0..dim {
                let xi: f64 = rng.sample(StandardNormal);
                x[a] += bd[a] * sde.dt + sigma * sq * xi;
                if x[a].abs() > l {
                    if !sde.reflect_at_boundary {
                        return Err(McKeanError::ParticleEscaped { particle: p, step });
                    }
                    x[a] = reflect(x[a], l);
                }
            }
        }
        Ok(())
    })
}

fn initial_ensemble(x0: &InitialLaw, sde: &SdeConfig) -> Result<ParticleEnsemble, McKeanError> {
    match x0 {
        InitialLaw::Density(f) => sample_from_field(f, sde.n_particles, sde.seed),
        InitialLaw::Points { dim, positions } => ParticleEnsemble::new(positions.clone(), *dim, 0.0, sde.seed),
    }
}

fn steps_between(a: f64, b: f64, dt: f64) -> Result<usize, McKeanError> {
    let k = ((b - a) / dt).round();
    if ((b - a) / dt - k).abs() > 1e-6 {
        return Err(McKeanError::InvalidConfig(format!("dt = {dt} does not divide the interval [{a}, {b}]")));
    }
    Ok(k as usize)
}

/// Euler-Maruyama with `rho` frozen from `traj` (linear in time between
/// stored states). Snapshots are taken at every `snapshot_stride`-th stored
/// time and at the last one.
pub fn simulate_linearized(
    traj: &Trajectory,
    c: &CoefficientSet,
    sde: &SdeConfig,
    x0: &InitialLaw,
) -> Result<EnsembleTrajectory, McKeanError> {
    sde.validate()?;
    let grid = *traj.states[0].grid();
    let mut ens = initial_ensemble(x0, sde)?;
    if ens.dim != grid.dim() {
        return Err(McKeanError::InvalidConfig(format!(
            "ensemble dimension {} does not match the trajectory grid dimension {}",
            ens.dim,
            grid.dim()
        )));
    }
    let last = traj.times.len() - 1;
    let marks: Vec<usize> = (0..=last).filter(|j| j % sde.snapshot_stride == 0 || *j == last).collect();
    let t0 = traj.times[0];
    let mut times = vec![t0];
    let mut snapshots = vec![ens.clone()];
    let mut step = 0;
    for w in marks.windows(2) {
        let (ta, tb) = (traj.times[w[0]], traj.times[w[1]]);
        let n = steps_between(ta, tb, sde.dt)?;
        let fields: Vec<Field> = (0..n).map(|s| traj.at(t0 + (step + s) as f64 * sde.dt)).collect();
        if n > 0 {
            advance(&mut ens.positions, ens.dim, c, sde, &fields, step)?;
        }
        step += n;
        ens.t = tb;
        times.push(tb);
        snapshots.push(ens.clone());
    }
    Ok(EnsembleTrajectory { times, snapshots, experimental: false })
}

/// Interacting mode: over each of `n_rounds` equal windows the coefficient
/// field is the KDE of the ensemble at the window start, held fixed.
pub fn self_consistent_simulate(
    c: &CoefficientSet,
    sde: &SdeConfig,
    rho0: &Field,
    t_end: f64,
    n_rounds: usize,
) -> Result<EnsembleTrajectory, McKeanError> {
    sde.validate()?;
    if n_rounds == 0 {
        return Err(McKeanError::InvalidConfig("n_rounds must be at least 1".into()));
    }
    let grid = *rho0.grid();
    let total = steps_between(0.0, t_end, sde.dt)?;
    if total % n_rounds != 0 {
        return Err(McKeanError::InvalidConfig(format!("{n_rounds} rounds do not split {total} steps evenly")));
    }
    let per = total / n_rounds;
    let mut ens = sample_from_field(rho0, sde.n_particles, sde.seed)?;
    let mut times = vec![0.0];
    let mut snapshots = vec![ens.clone()];
    for r in 0..n_rounds {
        let frozen = empirical_density(&ens, &grid, sde);
        let fields = vec![frozen; per];
        if per > 0 {
            advance(&mut ens.positions, ens.dim, c, sde, &fields, r * per)?;
        }
        ens.t = ((r + 1) * per) as f64 * sde.dt;
        times.push(ens.t);
        snapshots.push(ens.clone());
    }
    Ok(EnsembleTrajectory { times, snapshots, experimental: true })
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let w = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - w) + sorted[i + 1] * w
    } else {
        sorted[i]
    }
}

fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt()
}

/// Per-axis bandwidths: `0.9 min(sd, IQR / 1.34) N^(-1/5)` in 1D and
/// `sd_k N^(-1/6)` in 2D.
pub fn bandwidth(ens: &ParticleEnsemble, rule: BandwidthRule) -> [f64; 2] {
    if let BandwidthRule::Fixed(h) = rule {
        return [h, h];
    }
    let n = ens.n_particles as f64;
    let mut out = [0.0; 2];
    for a in 0..ens.dim {
        let mut xs = ens.axis(a);
        let sd = std_dev(&xs);
        out[a] = if ens.dim == 1 {
            xs.sort_by(|p, q| p.partial_cmp(q).unwrap());
            let iqr = quantile(&xs, 0.75) - quantile(&xs, 0.25);
            let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
            0.9 * spread * n.powf(-0.2)
        } else {
            sd * n.powf(-1.0 / 6.0)
        };
        if !(out[a] > 0.0) {
            // a degenerate cloud still needs a positive width
            out[a] = 1e-3;
        }
    }
    out
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// Mass of a unit Gaussian at `x` with width `h` in each cell along one
/// axis, with its mirror images in the walls. Returns the first cell index
/// and the masses.
fn axis_weights(grid: &GridSpec, x: f64, h: f64) -> (usize, Vec<f64>) {
    let n = grid.cells();
    let l = grid.half_width();
    let dx = grid.dx();
    let reach = KDE_CUTOFF * h;
    let lo = (((x - reach + l) / dx).floor().max(0.0) as usize).min(n - 1);
    let hi = (((x + reach + l) / dx).ceil().max(1.0) as usize).min(n);
    let centres = [x, 2.0 * l - x, -2.0 * l - x];
    let mut w = vec![0.0; hi - lo];
    for (k, wk) in w.iter_mut().enumerate() {
        let (a, b) = (grid.face(lo + k), grid.face(lo + k + 1));
        for (ci, &cx) in centres.iter().enumerate() {
            if ci > 0 && (cx - x).abs() > 2.0 * reach {
                continue;
            }
            *wk += normal_cdf((b - cx) / h) - normal_cdf((a - cx) / h);
        }
    }
    (lo, w)
}

/// Gaussian kernel density estimate as exact cell averages of the kernel,
/// with the kernels mirrored at the walls so no mass is lost. The sum over
/// particles runs in fixed blocks, so the result does not depend on the
/// thread count.
pub fn empirical_density(ens: &ParticleEnsemble, grid: &GridSpec, sde: &SdeConfig) -> Field {
    let h = bandwidth(ens, sde.bandwidth_rule);
    let n = grid.cells();
    let vol = grid.cell_volume();
    let scale = 1.0 / (ens.n_particles as f64 * vol);
    let dim = ens.dim;
    let partials: Vec<Vec<f64>> = ens
        .positions
        .par_chunks(KDE_BLOCK * dim)
        .map(|block| {
            let mut acc = vec![0.0; grid.len()];
            for x in block.chunks(dim) {
                let (i0, wx) = axis_weights(grid, x[0], h[0]);
                if dim == 1 {
                    for (k, w) in wx.iter().enumerate() {
                        acc[i0 + k] += w;
                    }
                } else {
                    let (j0, wy) = axis_weights(grid, x[1], h[1]);
                    for (b, wyb) in wy.iter().enumerate() {
                        let row = (j0 + b) * n + i0;
                        for (a, wxa) in wx.iter().enumerate() {
                            acc[row + a] += wxa * wyb;
                        }
                    }
                }
            }
            acc
        })
        .collect();
    let mut out = vec![0.0; grid.len()];
    for p in &partials {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    Field::from_raw(*grid, out.into_iter().map(|v| v * scale).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Discrepancy {
    pub l1: f64,
    pub w1: f64,
}

/// `integral |F_a - F_b|` for two step/linear CDFs given at sorted
/// breakpoints. `fa` and `fb` return the CDFs; both are linear between
/// consecutive breakpoints.
fn integrate_abs_diff(points: &[f64], fa: impl Fn(f64) -> f64, fb: impl Fn(f64) -> f64) -> f64 {
    let mut total = 0.0;
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        // evaluate just inside the interval so jumps at the ends are excluded
        let da = fa(a + 1e-15 * (b - a).max(1e-300)) - fb(a + 1e-15 * (b - a).max(1e-300));
        let db = fa(b - 1e-15 * (b - a)) - fb(b - 1e-15 * (b - a));
        let len = b - a;
        total += if da * db >= 0.0 {
            0.5 * (da.abs() + db.abs()) * len
        } else {
            0.5 * len * (da * da + db * db) / (da.abs() + db.abs())
        };
    }
    total
}

/// W1 between 1D samples and a piecewise-constant density, exactly:
/// `integral |F_N - F|` over the domain.
pub fn w1_samples_vs_density_1d(samples: &[f64], rho: &Field) -> f64 {
    let g = rho.grid();
    let n = g.cells();
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let dens: Vec<f64> = rho.values().iter().map(|v| v.max(0.0)).collect();
    let mass: f64 = dens.iter().sum::<f64>() * g.dx();
    let mut cum = vec![0.0; n + 1];
    for i in 0..n {
        cum[i + 1] = cum[i] + dens[i] * g.dx() / mass;
    }
    let l = g.half_width();
    let dx = g.dx();
    let f = |x: f64| -> f64 {
        if x <= -l {
            return 0.0;
        }
        if x >= l {
            return 1.0;
        }
        let i = (((x + l) / dx).floor() as usize).min(n - 1);
        cum[i] + (x - g.face(i)) / dx * (cum[i + 1] - cum[i])
    };
    let count = s.len() as f64;
    let fe = |x: f64| s.partition_point(|v| *v <= x) as f64 / count;
    let lo = s[0].min(-l);
    let hi = s[s.len() - 1].max(l);
    let mut pts: Vec<f64> = (0..=n).map(|i| g.face(i)).chain(s.iter().copied()).chain([lo, hi]).collect();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    integrate_abs_diff(&pts, fe, f)
}

/// W1 between two weighted point sets on the line.
fn w1_weighted(a: &mut [(f64, f64)], b: &mut [(f64, f64)]) -> f64 {
    a.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());
    b.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());
    let (mut i, mut j) = (0, 0);
    let (mut fa, mut fb) = (0.0_f64, 0.0_f64);
    let mut x = a[0].0.min(b[0].0);
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(p), Some(q)) => p.0.min(q.0),
            (Some(p), None) => p.0,
            (None, Some(q)) => q.0,
            (None, None) => break,
        };
        total += (fa - fb).abs() * (next - x);
        x = next;
        while i < a.len() && a[i].0 <= x {
            fa += a[i].1;
            i += 1;
        }
        while j < b.len() && b[j].0 <= x {
            fb += b[j].1;
            j += 1;
        }
    }
    total
}

/// Sliced W1 in 2D: average over [`SLICED_DIRECTIONS`] seeded random
/// directions of the 1D distance between projections. The density is
/// represented by 4 x 4 sub-cell points per cell.
pub fn sliced_w1(ens: &ParticleEnsemble, rho: &Field, seed: u64) -> f64 {
    let g = rho.grid();
    let n = g.cells();
    let dx = g.dx();
    let mass: f64 = rho.values().iter().map(|v| v.max(0.0)).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let dirs: Vec<[f64; 2]> = (0..SLICED_DIRECTIONS)
        .map(|_| {
            let th: f64 = rng.random::<f64>() * std::f64::consts::PI;
            [th.cos(), th.sin()]
        })
        .collect();
    const SUB: usize = 4;
    let wp = 1.0 / ens.n_particles as f64;
    dirs.par_iter()
        .map(|d| {
            let mut a: Vec<(f64, f64)> =
                (0..ens.n_particles).map(|p| (d[0] * ens.particle(p)[0] + d[1] * ens.particle(p)[1], wp)).collect();
            let mut b = Vec::with_capacity(g.len() * SUB * SUB);
            for k in 0..g.len() {
                let v = rho.values()[k].max(0.0);
                if v == 0.0 {
                    continue;
                }
                let (x0, y0) = (g.face(k % n), g.face(k / n));
                for sj in 0..SUB {
                    for si in 0..SUB {
                        let x = x0 + (si as f64 + 0.5) * dx / SUB as f64;
                        let y = y0 + (sj as f64 + 0.5) * dx / SUB as f64;
                        b.push((d[0] * x + d[1] * y, v / mass / (SUB * SUB) as f64));
                    }
                }
            }
            w1_weighted(&mut a, &mut b)
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum::<f64>()
        / SLICED_DIRECTIONS as f64
}

/// L1 distance between the KDE of `ens` and `rho`, and the W1 distance
/// between the particles and `rho` (sliced in 2D).
pub fn marginal_discrepancy(ens: &ParticleEnsemble, rho: &Field, sde: &SdeConfig) -> Discrepancy {
    let kde = empirical_density(ens, rho.grid(), sde);
    let l1 = kde.l1_distance(rho);
    let w1 = if ens.dim == 1 { w1_samples_vs_density_1d(&ens.positions, rho) } else { sliced_w1(ens, rho, sde.seed) };
    Discrepancy { l1, w1 }
}

/// Mean of `D(X) b(rho(X))` over the particles, with `rho` frozen.
pub fn mean_drift(ens: &ParticleEnsemble, c: &CoefficientSet, rho: &Field) -> [f64; 2] {
    let mut m = [0.0; 2];
    for p in 0..ens.n_particles {
        let x = ens.particle(p);
        let d = c.drift(x);
        let b = c.b(interpolate(rho, x).max(0.0));
        m[0] += d[0] * b;
        m[1] += d[1] * b;
    }
    [m[0] / ens.n_particles as f64, m[1] / ens.n_particles as f64]
}

/// `rho_floor` re-exported for callers that check degenerate regions.
pub const DENSITY_FLOOR: f64 = RHO_FLOOR;

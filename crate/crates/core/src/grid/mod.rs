//! Truncated uniform grids on `[-L, L]^d` (d = 1 or 2) and the discrete
//! operators built on them: the centered Laplacian, the first-order upwind
//! divergence, the Helmholtz inverse `(eps I - Laplacian)^{-1}`, the bump
//! mollifier and the discrete norms (including the `H^{-1}`-type norm).
//!
//! Values are cell averages. In 2D the storage is row-major with the first
//! axis fastest: `values[j * n + i]` is the cell at `(x_i, y_j)`.

pub mod io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;

/// Relative residual target for the Helmholtz solves.
pub const HELMHOLTZ_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("invalid grid: {0}")]
    InvalidSpec(String),
    #[error("field length {got} does not match grid size {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("field contains a non-finite value at cell {0}")]
    NonFinite(usize),
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("helmholtz solve did not converge (relative residual {residual:.3e})")]
    SolverNonConvergence { residual: f64 },
    #[error("eps must be positive, got {0}")]
    NonPositiveEps(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Mirror ghost cells; the discrete analogue of mass conservation.
    #[default]
    NoFlux,
    /// Antisymmetric ghost cells, so the field vanishes on the boundary faces.
    ZeroDirichlet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    dim: usize,
    half_width: f64,
    cells: usize,
    boundary: Boundary,
}

impl GridSpec {
    pub fn new(
        dim: usize,
        half_width: f64,
        cells: usize,
        boundary: Boundary,
    ) -> Result<Self, GridError> {
        if dim != 1 && dim != 2 {
            return Err(GridError::InvalidSpec(format!("dimension must be 1 or 2, got {dim}")));
        }
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(GridError::InvalidSpec(format!(
                "half width must be positive, got {half_width}"
            )));
        }
        if cells < 8 {
            return Err(GridError::InvalidSpec(format!("need at least 8 cells per axis, got {cells}")));
        }
        Ok(Self { dim, half_width, cells, boundary })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    /// Cells per axis.
    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn with_boundary(mut self, boundary: Boundary) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.half_width / self.cells as f64
    }

    /// `dx^d`.
    pub fn cell_volume(&self) -> f64 {
        self.dx().powi(self.dim as i32)
    }

    /// Total number of cells, `n^d`.
    pub fn len(&self) -> usize {
        self.cells.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Coordinate of the `i`-th cell center along one axis.
    pub fn center(&self, i: usize) -> f64 {
        -self.half_width + (i as f64 + 0.5) * self.dx()
    }

    /// Coordinate of the `i`-th face along one axis, `i` in `0..=n`.
    pub fn face(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.dx()
    }

    /// Center of the cell with flat index `k`; the second entry is 0 in 1D.
    pub fn cell_center(&self, k: usize) -> [f64; 2] {
        let n = self.cells;
        match self.dim {
            1 => [self.center(k), 0.0],
            _ => [self.center(k % n), self.center(k / n)],
        }
    }

    pub fn same_as(&self, other: &GridSpec) -> bool {
        self.dim == other.dim
            && self.cells == other.cells
            && self.boundary == other.boundary
            && (self.half_width - other.half_width).abs() <= 1e-12 * self.half_width
    }
}

/// Cell-averaged scalar function on a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: GridSpec,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: GridSpec) -> Self {
        Self { values: vec![0.0; grid.len()], grid }
    }

    pub fn constant(grid: GridSpec, c: f64) -> Self {
        Self { values: vec![c; grid.len()], grid }
    }

    pub fn from_values(grid: GridSpec, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.len() {
            return Err(GridError::LengthMismatch { expected: grid.len(), got: values.len() });
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite(k));
        }
        Ok(Self { grid, values })
    }

    /// Samples `f` at the cell centers.
    /// Wraps values without the finiteness check.
    pub(crate) fn from_raw(grid: GridSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(&[f64]) -> f64) -> Self {
        let d = grid.dim();
        let values = (0..grid.len())
            .map(|k| {
                let c = grid.cell_center(k);
                f(&c[..d])
            })
            .collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    /// `sum(values) * dx^d`.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Discrete `L^2` inner product, `sum(u v) dx^d`.
    pub fn dot(&self, other: &Field) -> f64 {
        debug_assert!(self.grid.same_as(&other.grid));
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>()
            * self.grid.cell_volume()
    }

    /// `self - other`.
    pub fn sub(&self, other: &Field) -> Field {
        debug_assert!(self.grid.same_as(&other.grid));
        Field {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        }
    }

    /// `a * self + b * other`.
    pub fn lincomb(&self, a: f64, other: &Field, b: f64) -> Field {
        debug_assert!(self.grid.same_as(&other.grid));
        Field {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect(),
        }
    }

    pub fn scale(&self, a: f64) -> Field {
        self.map(|v| a * v)
    }

    /// `|self - other|_1`.
    pub fn l1_distance(&self, other: &Field) -> f64 {
        debug_assert!(self.grid.same_as(&other.grid));
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).sum::<f64>()
            * self.grid.cell_volume()
    }

    pub fn check_same_grid(&self, other: &Field) -> Result<(), GridError> {
        if self.grid.same_as(&other.grid) {
            Ok(())
        } else {
            Err(GridError::GridMismatch)
        }
    }
}

/// Samples of one vector field on the cell faces of each axis.
///
/// `axis[0]` holds the x-component on x-faces (`(n + 1) * n_y` entries,
/// index `j * (n + 1) + i`), `axis[1]` the y-component on y-faces (index
/// `j * n + i`, `j` in `0..=n`).
#[derive(Debug, Clone, PartialEq)]
pub struct FaceVelocity {
    grid: GridSpec,
    axis: [Vec<f64>; 2],
}

impl FaceVelocity {
    pub fn zeros(grid: GridSpec) -> Self {
        Self::from_fn(grid, |_| [0.0, 0.0])
    }

    /// Evaluates the vector field at every face midpoint.
    pub fn from_fn(grid: GridSpec, v: impl Fn(&[f64]) -> [f64; 2]) -> Self {
        let n = grid.cells();
        match grid.dim() {
            1 => {
                let x: Vec<f64> = (0..=n).map(|i| v(&[grid.face(i)])[0]).collect();
                Self { grid, axis: [x, Vec::new()] }
            }
            _ => {
                let mut x = Vec::with_capacity((n + 1) * n);
                for j in 0..n {
                    for i in 0..=n {
                        x.push(v(&[grid.face(i), grid.center(j)])[0]);
                    }
                }
                let mut y = Vec::with_capacity((n + 1) * n);
                for j in 0..=n {
                    for i in 0..n {
                        y.push(v(&[grid.center(i), grid.face(j)])[1]);
                    }
                }
                Self { grid, axis: [x, y] }
            }
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Component `a` on the faces normal to axis `a`.
    pub fn component(&self, a: usize) -> &[f64] {
        &self.axis[a]
    }

    pub fn scaled_by(&self, cutoff: impl Fn(&[f64]) -> f64) -> Self {
        let n = self.grid.cells();
        let mut out = self.clone();
        match self.grid.dim() {
            1 => {
                for i in 0..=n {
                    out.axis[0][i] *= cutoff(&[self.grid.face(i)]);
                }
            }
            _ => {
                for j in 0..n {
                    for i in 0..=n {
                        out.axis[0][j * (n + 1) + i] *= cutoff(&[self.grid.face(i), self.grid.center(j)]);
                    }
                }
                for j in 0..=n {
                    for i in 0..n {
                        out.axis[1][j * n + i] *= cutoff(&[self.grid.center(i), self.grid.face(j)]);
                    }
                }
            }
        }
        out
    }

    /// Largest face magnitude of any component.
    pub fn max_abs(&self) -> f64 {
        self.axis.iter().flatten().fold(0.0, |m: f64, v| m.max(v.abs()))
    }

    /// Discrete divergence of the velocity itself at each cell (interior
    /// face differences, boundary faces included as sampled).
    pub fn divergence(&self) -> Field {
        let g = self.grid;
        let n = g.cells();
        let dx = g.dx();
        let mut out = vec![0.0; g.len()];
        match g.dim() {
            1 => {
                for i in 0..n {
                    out[i] = (self.axis[0][i + 1] - self.axis[0][i]) / dx;
                }
            }
            _ => {
                for j in 0..n {
                    for i in 0..n {
                        out[j * n + i] = (self.axis[0][j * (n + 1) + i + 1]
                            - self.axis[0][j * (n + 1) + i]
                            + self.axis[1][(j + 1) * n + i]
                            - self.axis[1][j * n + i])
                            / dx;
                    }
                }
            }
        }
        Field { grid: g, values: out }
    }
}

/// Ghost value across a boundary face for the cell value `u`.
#[inline]
fn ghost(boundary: Boundary, u: f64) -> f64 {
    match boundary {
        Boundary::NoFlux => u,
        Boundary::ZeroDirichlet => -u,
    }
}

/// Second-order centered Laplacian with ghost cells set by the boundary.
pub fn laplacian(u: &Field) -> Field {
    let g = *u.grid();
    let n = g.cells();
    let inv = 1.0 / (g.dx() * g.dx());
    let v = u.values();
    let b = g.boundary();
    let mut out = vec![0.0; g.len()];
    match g.dim() {
        1 => {
            for i in 0..n {
                let left = if i == 0 { ghost(b, v[0]) } else { v[i - 1] };
                let right = if i + 1 == n { ghost(b, v[i]) } else { v[i + 1] };
                out[i] = (left - 2.0 * v[i] + right) * inv;
            }
        }
        _ => {
            for j in 0..n {
                for i in 0..n {
                    let k = j * n + i;
                    let c = v[k];
                    let w = if i == 0 { ghost(b, c) } else { v[k - 1] };
                    let e = if i + 1 == n { ghost(b, c) } else { v[k + 1] };
                    let s = if j == 0 { ghost(b, c) } else { v[k - n] };
                    let no = if j + 1 == n { ghost(b, c) } else { v[k + n] };
                    out[k] = (w + e + s + no - 4.0 * c) * inv;
                }
            }
        }
    }
    Field { grid: g, values: out }
}

/// Upwind flux through one face with velocity `v`, left/lower cell value
/// `ql` and right/upper cell value `qr`.
#[inline]
pub(crate) fn upwind_flux(v: f64, ql: f64, qr: f64) -> f64 {
    v.max(0.0) * ql - (-v).max(0.0) * qr
}

/// First-order upwind approximation of `div(velocity * q)`.
///
/// The donor cell at each face is picked by the sign of the face velocity;
/// boundary faces carry no flux, so the cell sum of the output telescopes to
/// zero.
pub fn divergence_upwind(q: &Field, velocity: &FaceVelocity) -> Field {
    let g = *q.grid();
    debug_assert!(g.same_as(velocity.grid()));
    let n = g.cells();
    let inv = 1.0 / g.dx();
    let v = q.values();
    let mut out = vec![0.0; g.len()];
    match g.dim() {
        1 => {
            let vx = velocity.component(0);
            for f in 1..n {
                let flux = upwind_flux(vx[f], v[f - 1], v[f]) * inv;
                out[f - 1] += flux;
                out[f] -= flux;
            }
        }
        _ => {
            let vx = velocity.component(0);
            let vy = velocity.component(1);
            for j in 0..n {
                for f in 1..n {
                    let k = j * n + f;
                    let flux = upwind_flux(vx[j * (n + 1) + f], v[k - 1], v[k]) * inv;
                    out[k - 1] += flux;
                    out[k] -= flux;
                }
            }
            for f in 1..n {
                for i in 0..n {
                    let k = f * n + i;
                    let flux = upwind_flux(vy[f * n + i], v[k - n], v[k]) * inv;
                    out[k - n] += flux;
                    out[k] -= flux;
                }
            }
        }
    }
    Field { grid: g, values: out }
}

/// Diagonal of `-Laplacian` (times `dx^2`) for a cell with `boundary_faces`
/// faces on the domain boundary.
pub(crate) fn neg_laplacian_diag(dim: usize, boundary: Boundary, boundary_faces: usize) -> f64 {
    let interior = (2 * dim - boundary_faces) as f64;
    match boundary {
        Boundary::NoFlux => interior,
        // the antisymmetric ghost adds twice the center value per boundary face
        Boundary::ZeroDirichlet => interior + 2.0 * boundary_faces as f64,
    }
}

pub(crate) fn boundary_faces(g: &GridSpec, k: usize) -> usize {
    let n = g.cells();
    let edge = |i: usize| usize::from(i == 0) + usize::from(i + 1 == n);
    match g.dim() {
        1 => edge(k),
        _ => edge(k % n) + edge(k / n),
    }
}

/// Solves `(eps I - Laplacian) u = f`; returns the solution and the final
/// relative residual.
fn helmholtz_solve(f: &Field, eps: f64, tol: f64) -> (Field, f64, bool) {
    let g = *f.grid();
    let n = g.cells();
    let inv = 1.0 / (g.dx() * g.dx());
    match g.dim() {
        1 => {
            let diag: Vec<f64> = (0..n)
                .map(|i| eps + neg_laplacian_diag(1, g.boundary(), boundary_faces(&g, i)) * inv)
                .collect();
            let off = vec![-inv; n];
            let u = linalg::solve_tridiagonal(&off, &diag, &off, f.values());
            let uf = Field { grid: g, values: u };
            let res = relative_residual(&uf, f, eps);
            (uf, res, true)
        }
        _ => {
            let diag: Vec<f64> = (0..g.len())
                .map(|k| eps + neg_laplacian_diag(2, g.boundary(), boundary_faces(&g, k)) * inv)
                .collect();
            let op = linalg::FivePoint { n, diag, off: -inv };
            let (u, res, ok) = linalg::pcg_ic0(&op, f.values(), tol, 20 * g.len() + 100);
            (Field { grid: g, values: u }, res, ok)
        }
    }
}

fn relative_residual(u: &Field, f: &Field, eps: f64) -> f64 {
    let lap = laplacian(u);
    let mut num = 0.0;
    let mut den = 0.0;
    for ((ui, li), fi) in u.values().iter().zip(lap.values()).zip(f.values()) {
        let r = eps * ui - li - fi;
        num += r * r;
        den += fi * fi;
    }
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

/// `(eps I - Laplacian)^{-1} f`.
///
/// Direct tridiagonal elimination in 1D; conjugate gradients with an
/// incomplete-Cholesky preconditioner in 2D, to a relative residual of
/// [`HELMHOLTZ_TOL`].
pub fn helmholtz_inverse(f: &Field, eps: f64) -> Result<Field, GridError> {
    if !(eps > 0.0) {
        return Err(GridError::NonPositiveEps(eps));
    }
    let (u, res, ok) = helmholtz_solve(f, eps, HELMHOLTZ_TOL);
    if !ok || !(res <= 1e-10) {
        return Err(GridError::SolverNonConvergence { residual: res });
    }
    Ok(u)
}

/// Smooth compactly supported bump on `(-1, 1)`, unnormalized.
#[inline]
pub fn bump(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - s * s)).exp()
    }
}

/// Discrete convolution with the normalized radial bump of radius `eps`.
///
/// For `eps < dx` the field is returned unchanged. Kernel weight that falls
/// outside the domain is dropped, so mass is exact whenever `u` vanishes
/// within `eps` of the boundary.
pub fn mollify_field(u: &Field, eps: f64) -> Field {
    let g = *u.grid();
    let dx = g.dx();
    if !(eps >= dx) {
        return u.clone();
    }
    let r = (eps / dx).floor() as isize;
    let n = g.cells() as isize;
    let v = u.values();
    match g.dim() {
        1 => {
            let mut w: Vec<f64> = (-r..=r).map(|k| bump(k as f64 * dx / eps)).collect();
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x /= s);
            let mut out = vec![0.0; v.len()];
            for i in 0..n {
                let mut acc = 0.0;
                for k in -r..=r {
                    let src = i - k;
                    if (0..n).contains(&src) {
                        acc += w[(k + r) as usize] * v[src as usize];
                    }
                }
                out[i as usize] = acc;
            }
            Field { grid: g, values: out }
        }
        _ => {
            let side = (2 * r + 1) as usize;
            let mut w = vec![0.0; side * side];
            for a in -r..=r {
                for b in -r..=r {
                    let rho = ((a * a + b * b) as f64).sqrt() * dx / eps;
                    w[(b + r) as usize * side + (a + r) as usize] = bump(rho);
                }
            }
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x /= s);
            let mut out = vec![0.0; v.len()];
            for j in 0..n {
                for i in 0..n {
                    let mut acc = 0.0;
                    for b in -r..=r {
                        let sj = j - b;
                        if !(0..n).contains(&sj) {
                            continue;
                        }
                        for a in -r..=r {
                            let si = i - a;
                            if (0..n).contains(&si) {
                                acc += w[(b + r) as usize * side + (a + r) as usize]
                                    * v[(sj * n + si) as usize];
                            }
                        }
                    }
                    out[(j * n + i) as usize] = acc;
                }
            }
            Field { grid: g, values: out }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Norms {
    pub l1: f64,
    pub l2: f64,
    pub linf: f64,
    /// `sqrt((u, (I - Laplacian)^{-1} u))`.
    pub h_minus_1: f64,
}

pub fn norms(u: &Field) -> Norms {
    let vol = u.grid().cell_volume();
    let v = u.values();
    let l1 = v.iter().map(|x| x.abs()).sum::<f64>() * vol;
    let l2 = (v.iter().map(|x| x * x).sum::<f64>() * vol).sqrt();
    let linf = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let (phi, _, _) = helmholtz_solve(u, 1.0, HELMHOLTZ_TOL);
    let h_minus_1 = u.dot(&phi).max(0.0).sqrt();
    Norms { l1, l2, linf, h_minus_1 }
}

/// `|grad u|_2^2` from face differences. Dirichlet boundary faces sit half a
/// cell from the center and carry half weight; no-flux boundary faces carry
/// nothing. With this convention `(-Laplacian u, u) = |grad u|_2^2` exactly.
pub fn gradient_norm_sq(u: &Field) -> f64 {
    let g = *u.grid();
    let n = g.cells();
    let dx = g.dx();
    let v = u.values();
    let dirichlet = g.boundary() == Boundary::ZeroDirichlet;
    let mut acc = 0.0;
    let mut axis_line = |line: &mut dyn Iterator<Item = f64>| {
        let vals: Vec<f64> = line.collect();
        for w in vals.windows(2) {
            let d = (w[1] - w[0]) / dx;
            acc += d * d;
        }
        if dirichlet {
            for end in [vals[0], vals[vals.len() - 1]] {
                let d = 2.0 * end / dx;
                acc += 0.5 * d * d;
            }
        }
    };
    match g.dim() {
        1 => axis_line(&mut v.iter().copied()),
        _ => {
            for j in 0..n {
                axis_line(&mut (0..n).map(|i| v[j * n + i]));
            }
            for i in 0..n {
                axis_line(&mut (0..n).map(|j| v[j * n + i]));
            }
        }
    }
    acc * g.cell_volume()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid1(n: usize, b: Boundary) -> GridSpec {
        GridSpec::new(1, 8.0, n, b).unwrap()
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(GridSpec::new(3, 1.0, 16, Boundary::NoFlux).is_err());
        assert!(GridSpec::new(1, 0.0, 16, Boundary::NoFlux).is_err());
        assert!(GridSpec::new(1, 1.0, 7, Boundary::NoFlux).is_err());
    }

    #[test]
    fn laplacian_of_constant_vanishes_no_flux() {
        for d in [1, 2] {
            let g = GridSpec::new(d, 2.0, 16, Boundary::NoFlux).unwrap();
            let lap = laplacian(&Field::constant(g, 3.5));
            assert!(lap.values().iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn laplacian_of_quadratic_is_two_in_interior() {
        // 20 cells of width 0.1
        let g = GridSpec::new(1, 1.0, 20, Boundary::NoFlux).unwrap();
        let u = Field::from_fn(g, |x| x[0] * x[0]);
        let lap = laplacian(&u);
        for i in 1..19 {
            // (x-dx)^2 - 2x^2 + (x+dx)^2 = 2 dx^2
            assert!((lap.values()[i] - 2.0).abs() < 1e-9, "{}", lap.values()[i]);
        }
    }

    #[test]
    fn sine_is_discrete_dirichlet_eigenfunction() {
        let mut errs = Vec::new();
        for n in [32, 64, 128] {
            let g = GridSpec::new(1, 2.0, n, Boundary::ZeroDirichlet).unwrap();
            let k = std::f64::consts::PI / 2.0;
            let u = Field::from_fn(g, |x| (k * x[0]).sin());
            let lap = laplacian(&u);
            let err = lap
                .values()
                .iter()
                .zip(u.values())
                .map(|(l, v)| (l + k * k * v).abs())
                .fold(0.0, f64::max);
            errs.push(err);
        }
        // second order
        assert!(errs[0] / errs[1] > 3.8 && errs[1] / errs[2] > 3.8, "{errs:?}");
    }

    #[test]
    fn upwind_picks_left_donor_for_positive_velocity() {
        let g = grid1(16, Boundary::NoFlux);
        let q = Field::from_fn(g, |x| if x[0] < 0.0 { 1.0 } else { 0.0 });
        let vel = FaceVelocity::from_fn(g, |_| [1.0, 0.0]);
        let div = divergence_upwind(&q, &vel);
        let dx = g.dx();
        // the step translates: its inside is in balance, the first empty cell gains
        assert!(div.values()[7].abs() < 1e-12);
        assert!((div.values()[8] + 1.0 / dx).abs() < 1e-12);
        // nothing enters through the left wall
        assert!((div.values()[0] - 1.0 / dx).abs() < 1e-12);
        assert!(div.values()[3].abs() < 1e-12);
        assert_eq!(divergence_upwind(&Field::zeros(g), &vel).max(), 0.0);
    }

    #[test]
    fn upwind_divergence_is_conservative() {
        let g = grid1(256, Boundary::NoFlux);
        let q = Field::from_fn(g, |x| (-x[0] * x[0] / 0.5).exp());
        let vel = FaceVelocity::from_fn(g, |x| [x[0].sin() + 0.3, 0.0]);
        assert!(divergence_upwind(&q, &vel).mass().abs() < 1e-12);
        let g2 = GridSpec::new(2, 4.0, 32, Boundary::NoFlux).unwrap();
        let q2 = Field::from_fn(g2, |x| (-(x[0] * x[0] + x[1] * x[1])).exp());
        let v2 = FaceVelocity::from_fn(g2, |x| [-x[1], x[0] + 0.5]);
        assert!(divergence_upwind(&q2, &v2).mass().abs() < 1e-12);
    }

    #[test]
    fn helmholtz_of_constant_no_flux() {
        for d in [1, 2] {
            let g = GridSpec::new(d, 2.0, 16, Boundary::NoFlux).unwrap();
            let u = helmholtz_inverse(&Field::constant(g, 2.0), 0.5).unwrap();
            assert!(u.values().iter().all(|v| (v - 4.0).abs() < 1e-9));
            let z = helmholtz_inverse(&Field::zeros(g), 0.5).unwrap();
            assert!(z.values().iter().all(|v| *v == 0.0));
        }
        assert!(helmholtz_inverse(&Field::zeros(grid1(16, Boundary::NoFlux)), 0.0).is_err());
    }

    #[test]
    fn helmholtz_sine_dirichlet() {
        let g = GridSpec::new(1, 2.0, 256, Boundary::ZeroDirichlet).unwrap();
        let k = std::f64::consts::PI / 2.0;
        let f = Field::from_fn(g, |x| (k * x[0]).sin());
        let eps = 0.3;
        let u = helmholtz_inverse(&f, eps).unwrap();
        let expected = f.scale(1.0 / (eps + k * k));
        assert!(u.l1_distance(&expected) < 1e-4);
    }

    #[test]
    fn helmholtz_two_dimensional_residual() {
        for b in [Boundary::NoFlux, Boundary::ZeroDirichlet] {
            let g = GridSpec::new(2, 3.0, 40, b).unwrap();
            let f = Field::from_fn(g, |x| (-(x[0] - 0.3).powi(2) - 2.0 * x[1] * x[1]).exp() - 0.1 * x[0]);
            let u = helmholtz_inverse(&f, 0.2).unwrap();
            assert!(relative_residual(&u, &f, 0.2) < 1e-10);
        }
    }

    #[test]
    fn mollifier_keeps_constants_and_mass() {
        let g = grid1(128, Boundary::NoFlux);
        let c = mollify_field(&Field::constant(g, 2.0), 0.5);
        for i in 10..118 {
            assert!((c.values()[i] - 2.0).abs() < 1e-12);
        }
        let u = Field::from_fn(g, |x| (-(x[0] * x[0])).exp());
        let m = mollify_field(&u, 0.5);
        assert!((m.mass() - u.mass()).abs() < 1e-12);
        // below one cell the mollifier is the identity
        assert_eq!(mollify_field(&u, 0.5 * g.dx()), u);
    }

    #[test]
    fn mollified_spike_is_the_kernel() {
        let g = grid1(64, Boundary::NoFlux);
        let dx = g.dx();
        let mut spike = Field::zeros(g);
        spike.values_mut()[32] = 1.0 / dx;
        let eps = 4.0 * dx;
        let m = mollify_field(&spike, eps);
        let w: Vec<f64> = (-4..=4).map(|k| bump(k as f64 / 4.0)).collect();
        let s: f64 = w.iter().sum();
        for (k, wk) in (-4i32..=4).zip(&w) {
            let idx = (32 + k) as usize;
            assert!((m.values()[idx] - wk / s / dx).abs() < 1e-12);
        }
        assert!(m.max() < spike.max());
        assert!((m.mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mollifier_commutes_with_translation() {
        let g = grid1(128, Boundary::NoFlux);
        let u = Field::from_fn(g, |x| (-(x[0] * x[0]) * 2.0).exp() * (3.0 * x[0]).cos());
        let mut shifted = Field::zeros(g);
        for i in 5..128 {
            shifted.values_mut()[i] = u.values()[i - 5];
        }
        let a = mollify_field(&u, 0.4);
        let b = mollify_field(&shifted, 0.4);
        for i in 20..100 {
            assert!((b.values()[i + 5] - a.values()[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn norms_of_simple_fields() {
        let g = grid1(64, Boundary::NoFlux);
        let z = norms(&Field::zeros(g));
        assert_eq!((z.l1, z.l2, z.linf, z.h_minus_1), (0.0, 0.0, 0.0, 0.0));
        let mut ind = Field::zeros(g);
        ind.values_mut()[10] = 1.0 / g.dx();
        assert!((norms(&ind).l1 - 1.0).abs() < 1e-14);
    }

    #[test]
    fn gradient_identity_matches_laplacian() {
        for b in [Boundary::NoFlux, Boundary::ZeroDirichlet] {
            for d in [1, 2] {
                let g = GridSpec::new(d, 1.5, 12, b).unwrap();
                let u = Field::from_fn(g, |x| x.iter().map(|v| (2.0 * v).sin() + v * v).sum());
                let lhs = -laplacian(&u).dot(&u);
                let rhs = gradient_norm_sq(&u);
                assert!((lhs - rhs).abs() < 1e-10 * rhs, "{lhs} {rhs}");
            }
        }
    }
}

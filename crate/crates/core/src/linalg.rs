//! Small structured linear solvers used by the grid and resolvent modules.

/// Thomas elimination for a tridiagonal system. `lower[i]` multiplies
/// `x[i - 1]` in row `i`, `upper[i]` multiplies `x[i + 1]`; `lower[0]` and
/// `upper[n - 1]` are ignored.
///
/// No pivoting: callers only pass column diagonally dominant matrices.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut x = vec![0.0; n];
    let mut m = diag[0];
    c[0] = if n > 1 { upper[0] / m } else { 0.0 };
    x[0] = rhs[0] / m;
    for i in 1..n {
        m = diag[i] - lower[i] * c[i - 1];
        if i + 1 < n {
            c[i] = upper[i] / m;
        }
        x[i] = (rhs[i] - lower[i] * x[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    x
}

/// Symmetric five-point operator on an `n x n` grid with a constant
/// off-diagonal coupling (row-major, first index fastest).
pub struct FivePoint {
    pub n: usize,
    pub diag: Vec<f64>,
    pub off: f64,
}

impl FivePoint {
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.n;
        for j in 0..n {
            for i in 0..n {
                let k = j * n + i;
                let mut acc = self.diag[k] * x[k];
                if i > 0 {
                    acc += self.off * x[k - 1];
                }
                if i + 1 < n {
                    acc += self.off * x[k + 1];
                }
                if j > 0 {
                    acc += self.off * x[k - n];
                }
                if j + 1 < n {
                    acc += self.off * x[k + n];
                }
                y[k] = acc;
            }
        }
    }

    /// Diagonal of the zero-fill incomplete Cholesky factor.
    fn ic0(&self) -> Vec<f64> {
        let n = self.n;
        let mut d = vec![0.0; self.diag.len()];
        for j in 0..n {
            for i in 0..n {
                let k = j * n + i;
                let mut a = self.diag[k];
                if i > 0 {
                    let l = self.off / d[k - 1];
                    a -= l * l;
                }
                if j > 0 {
                    let l = self.off / d[k - n];
                    a -= l * l;
                }
                d[k] = a.max(1e-300).sqrt();
            }
        }
        d
    }

    fn precondition(&self, d: &[f64], r: &[f64], z: &mut [f64]) {
        let n = self.n;
        // L y = r
        for j in 0..n {
            for i in 0..n {
                let k = j * n + i;
                let mut acc = r[k];
                if i > 0 {
                    acc -= self.off / d[k - 1] * z[k - 1];
                }
                if j > 0 {
                    acc -= self.off / d[k - n] * z[k - n];
                }
                z[k] = acc / d[k];
            }
        }
        // L^T x = y
        for j in (0..n).rev() {
            for i in (0..n).rev() {
                let k = j * n + i;
                let mut acc = z[k];
                if i + 1 < n {
                    acc -= self.off / d[k] * z[k + 1];
                }
                if j + 1 < n {
                    acc -= self.off / d[k] * z[k + n];
                }
                z[k] = acc / d[k];
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Preconditioned conjugate gradients. Returns the iterate, the relative
/// residual `|r|_2 / |b|_2` and whether `tol` was reached.
pub fn pcg_ic0(op: &FivePoint, b: &[f64], tol: f64, max_iter: usize) -> (Vec<f64>, f64, bool) {
    let len = b.len();
    let bnorm = dot(b, b).sqrt();
    let mut x = vec![0.0; len];
    if bnorm == 0.0 {
        return (x, 0.0, true);
    }
    let d = op.ic0();
    let mut r = b.to_vec();
    let mut z = vec![0.0; len];
    op.precondition(&d, &r, &mut z);
    let mut p = z.clone();
    let mut q = vec![0.0; len];
    let mut rz = dot(&r, &z);
    let mut res = 1.0;
    for _ in 0..max_iter {
        op.apply(&p, &mut q);
        let alpha = rz / dot(&p, &q);
        for k in 0..len {
            x[k] += alpha * p[k];
            r[k] -= alpha * q[k];
        }
        res = dot(&r, &r).sqrt() / bnorm;
        if res <= tol {
            // recompute the true residual to guard against drift
            op.apply(&x, &mut q);
            let true_res = b.iter().zip(&q).map(|(bi, qi)| (bi - qi).powi(2)).sum::<f64>().sqrt() / bnorm;
            if true_res <= tol * 10.0 {
                return (x, true_res, true);
            }
            for k in 0..len {
                r[k] = b[k] - q[k];
            }
        }
        op.precondition(&d, &r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..len {
            p[k] = z[k] + beta * p[k];
        }
    }
    (x, res, false)
}

/// Square banded matrix with `bw` sub- and super-diagonals, factored in place
/// by Gaussian elimination without pivoting.
pub struct Banded {
    n: usize,
    bw: usize,
    // row-major, row i holds columns i - bw ..= i + bw
    data: Vec<f64>,
}

impl Banded {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self { n, bw, data: vec![0.0; n * (2 * bw + 1)] }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * (2 * self.bw + 1) + (j + self.bw - i)
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i.abs_diff(j) <= self.bw);
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    /// Solves `A x = rhs`, consuming the matrix. Only valid for matrices
    /// whose elimination needs no pivoting (diagonally dominant by columns).
    pub fn solve(mut self, rhs: &[f64]) -> Vec<f64> {
        let n = self.n;
        let bw = self.bw;
        let mut x = rhs.to_vec();
        for k in 0..n {
            let pivot = self.data[self.idx(k, k)];
            let last = (k + bw).min(n - 1);
            for i in k + 1..=last {
                let f = self.data[self.idx(i, k)] / pivot;
                if f == 0.0 {
                    continue;
                }
                for j in k + 1..=last {
                    let akj = self.data[self.idx(k, j)];
                    if akj != 0.0 {
                        let t = self.idx(i, j);
                        self.data[t] -= f * akj;
                    }
                }
                x[i] -= f * x[k];
            }
        }
        for k in (0..n).rev() {
            let last = (k + bw).min(n - 1);
            let mut acc = x[k];
            for j in k + 1..=last {
                acc -= self.data[self.idx(k, j)] * x[j];
            }
            x[k] = acc / self.data[self.idx(k, k)];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tridiagonal_matches_dense() {
        let lower = [0.0, -1.0, -0.5, -1.0];
        let diag = [3.0, 4.0, 3.5, 2.0];
        let upper = [-1.0, -2.0, -1.0, 0.0];
        let x_true = [1.0, -2.0, 0.5, 3.0];
        let rhs: Vec<f64> = (0..4)
            .map(|i| {
                let mut s = diag[i] * x_true[i];
                if i > 0 {
                    s += lower[i] * x_true[i - 1];
                }
                if i < 3 {
                    s += upper[i] * x_true[i + 1];
                }
                s
            })
            .collect();
        let x = solve_tridiagonal(&lower, &diag, &upper, &rhs);
        for (a, b) in x.iter().zip(x_true) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn banded_matches_tridiagonal() {
        let n = 20;
        let mut m = Banded::zeros(n, 2);
        let mut lower = vec![0.0; n];
        let mut upper = vec![0.0; n];
        let mut diag = vec![0.0; n];
        for i in 0..n {
            diag[i] = 4.0 + i as f64 * 0.1;
            m.add(i, i, diag[i]);
            if i > 0 {
                lower[i] = -1.0 - 0.01 * i as f64;
                m.add(i, i - 1, lower[i]);
            }
            if i + 1 < n {
                upper[i] = -1.5;
                m.add(i, i + 1, upper[i]);
            }
        }
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let a = m.solve(&rhs);
        let b = solve_tridiagonal(&lower, &diag, &upper, &rhs);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

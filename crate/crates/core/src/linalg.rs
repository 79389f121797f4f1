//! Small dense symmetric linear algebra on `ndarray` matrices.

use ndarray::{Array1, Array2};

/// Cholesky factor `A = L Lᵀ` computed column by column. A column whose
/// remaining pivot falls below `tol` times its original diagonal is marked
/// aliased and left out of the factor, so earlier columns win over later
/// collinear ones.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Array2<f64>,
    aliased: Vec<bool>,
}

impl Cholesky {
    pub fn new(a: &Array2<f64>, tol: f64) -> Self {
        let n = a.nrows();
        debug_assert_eq!(n, a.ncols());
        let mut l = Array2::<f64>::zeros((n, n));
        let mut aliased = vec![false; n];
        for j in 0..n {
            let diag = a[[j, j]];
            let mut pivot = diag;
            for k in 0..j {
                pivot -= l[[j, k]] * l[[j, k]];
            }
            if !(diag > 0.0) || !(pivot > tol * diag) {
                aliased[j] = true;
                continue;
            }
            let root = pivot.sqrt();
            l[[j, j]] = root;
            for i in (j + 1)..n {
                let mut s = a[[i, j]];
                for k in 0..j {
                    s -= l[[i, k]] * l[[j, k]];
                }
                l[[i, j]] = s / root;
            }
        }
        Self { l, aliased }
    }

    pub fn aliased(&self) -> &[bool] {
        &self.aliased
    }

    pub fn is_full_rank(&self) -> bool {
        !self.aliased.iter().any(|&a| a)
    }

    /// Solves `A x = b` on the non-aliased subspace; aliased entries of `x`
    /// are zero.
    pub fn solve(&self, b: &Array1<f64>) -> Array1<f64> {
        let n = b.len();
        let mut y = Array1::<f64>::zeros(n);
        for i in 0..n {
            if self.aliased[i] {
                continue;
            }
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[[i, k]] * y[k];
            }
            y[i] = s / self.l[[i, i]];
        }
        let mut x = Array1::<f64>::zeros(n);
        for i in (0..n).rev() {
            if self.aliased[i] {
                continue;
            }
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.l[[k, i]] * x[k];
            }
            x[i] = s / self.l[[i, i]];
        }
        x
    }

    /// Generalized inverse: the inverse on the non-aliased block, zeros
    /// elsewhere. The result is exactly symmetric.
    pub fn inverse(&self) -> Array2<f64> {
        let n = self.l.nrows();
        let mut inv = Array2::<f64>::zeros((n, n));
        for j in 0..n {
            if self.aliased[j] {
                continue;
            }
            let mut e = Array1::<f64>::zeros(n);
            e[j] = 1.0;
            let col = self.solve(&e);
            inv.column_mut(j).assign(&col);
        }
        symmetrize(&mut inv);
        inv
    }
}

pub fn symmetrize(a: &mut Array2<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[[i, j]] + a[[j, i]]);
            a[[i, j]] = v;
            a[[j, i]] = v;
        }
    }
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotation, ascending.
pub fn symmetric_eigenvalues(a: &Array2<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut m = a.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[[i, j]] * m[[i, j]])
            .sum();
        let scale: f64 = (0..n).map(|i| m[[i, i]] * m[[i, i]]).sum::<f64>().max(f64::MIN_POSITIVE);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if m[[p, q]] == 0.0 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * m[[p, q]]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m[[i, i]]).collect();
    eig.sort_by(f64::total_cmp);
    eig
}

/// Ratio of largest to smallest absolute eigenvalue; infinite when singular.
pub fn condition_number(a: &Array2<f64>) -> f64 {
    let eig = symmetric_eigenvalues(a);
    let max = eig.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |acc, v| acc.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

//! Small dense Hermitian solves (M is the microphone count, typically <= 8).

use ndarray::{Array1, Array2, ArrayView2};
use num_complex::Complex64;

/// Lower Cholesky factor `L` with `A = L L^H`, or `None` if `A` is not numerically
/// positive definite. Only the lower triangle of `a` is read.
pub fn cholesky(a: ArrayView2<'_, Complex64>) -> Option<Array2<Complex64>> {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    let scale = (0..n).map(|i| a[[i, i]].re.abs()).fold(0.0, f64::max);
    let tiny = scale * 1e-14;
    let mut l = Array2::<Complex64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]].re;
        for k in 0..j {
            d -= l[[j, k]].norm_sqr();
        }
        if !(d > tiny) || !d.is_finite() {
            return None;
        }
        let djj = d.sqrt();
        l[[j, j]] = Complex64::new(djj, 0.0);
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]].conj();
            }
            l[[i, j]] = s / djj;
        }
    }
    Some(l)
}

/// Solves `L L^H x = b` for one right-hand side.
pub fn cholesky_solve_vec(l: &Array2<Complex64>, b: &[Complex64]) -> Array1<Complex64> {
    let n = l.nrows();
    let mut y = Array1::<Complex64>::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    let mut x = Array1::<Complex64>::zeros(n);
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[[k, i]].conj() * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// Solves `A X = B` column by column given the Cholesky factor of `A`.
pub fn cholesky_solve(l: &Array2<Complex64>, b: ArrayView2<'_, Complex64>) -> Array2<Complex64> {
    let mut x = Array2::<Complex64>::zeros(b.raw_dim());
    for (j, col) in b.columns().into_iter().enumerate() {
        let rhs: Vec<Complex64> = col.to_vec();
        x.column_mut(j).assign(&cholesky_solve_vec(l, &rhs));
    }
    x
}

pub fn trace(a: ArrayView2<'_, Complex64>) -> Complex64 {
    a.diag().sum()
}

/// `max |A - A^H|`.
pub fn hermitian_defect(a: ArrayView2<'_, Complex64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            worst = worst.max((a[[i, j]] - a[[j, i]].conj()).norm());
        }
    }
    worst
}

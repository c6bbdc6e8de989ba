//! Small dense linear solves for the normal-equation systems used by the
//! smoothing filter and the polynomial fitter. Systems here are tiny (order
//! of the polynomial degree), so partial-pivot Gaussian elimination is plenty.

use crate::float::Float;

/// Solves `a * x = b` in place. Returns `None` when the matrix is singular to
/// working precision.
pub(crate) fn solve<F: Float>(mut a: Vec<Vec<F>>, mut b: Vec<F>) -> Option<Vec<F>> {
    let n = b.len();
    debug_assert!(a.len() == n && a.iter().all(|row| row.len() == n));
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if a[row][col].abs() > a[pivot][col].abs() {
                pivot = row;
            }
        }
        if a[pivot][col] == F::zero() {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            if factor == F::zero() {
                continue;
            }
            for k in col..n {
                let v = a[col][k];
                a[row][k] = a[row][k] - factor * v;
            }
            let bv = b[col];
            b[row] = b[row] - factor * bv;
        }
    }
    let mut x = vec![F::zero(); n];
    for col in (0..n).rev() {
        let mut acc = b[col];
        for k in col + 1..n {
            acc = acc - a[col][k] * x[k];
        }
        x[col] = acc / a[col][col];
    }
    Some(x)
}

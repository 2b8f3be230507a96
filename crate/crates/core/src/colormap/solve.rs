use nalgebra::DMatrix;

/// Solve `m x = rhs` for a symmetric positive semi-definite `m`: Cholesky
/// first, SVD pseudo-inverse if the factorization breaks down.
pub(crate) fn solve_spd<const N: usize>(m: &[[f64; N]; N], rhs: &[f64; N]) -> [f64; N] {
    cholesky_solve(m, rhs)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .unwrap_or_else(|| pinv_solve(m, rhs))
}

fn cholesky_solve<const N: usize>(m: &[[f64; N]; N], rhs: &[f64; N]) -> Option<[f64; N]> {
    let mut l = [[0.0f64; N]; N];
    let scale = (0..N).map(|i| m[i][i].abs()).fold(0.0, f64::max);
    for i in 0..N {
        for j in 0..=i {
            let s = m[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            if i == j {
                if s <= 1e-14 * scale || s <= 0.0 {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    let mut y = [0.0f64; N];
    for i in 0..N {
        y[i] = (rhs[i] - (0..i).map(|k| l[i][k] * y[k]).sum::<f64>()) / l[i][i];
    }
    let mut x = [0.0f64; N];
    for i in (0..N).rev() {
        x[i] = (y[i] - (i + 1..N).map(|k| l[k][i] * x[k]).sum::<f64>()) / l[i][i];
    }
    Some(x)
}

fn pinv_solve<const N: usize>(m: &[[f64; N]; N], rhs: &[f64; N]) -> [f64; N] {
    let a = DMatrix::from_fn(N, N, |i, j| m[i][j]);
    let svd = a.svd(true, true);
    let tol = svd.singular_values.max() * N as f64 * f64::EPSILON;
    let b = DMatrix::from_fn(N, 1, |i, _| rhs[i]);
    let x = svd.solve(&b, tol.max(f64::MIN_POSITIVE)).unwrap_or_else(|_| DMatrix::zeros(N, 1));
    std::array::from_fn(|i| x[(i, 0)])
}

//! Small dense matrices stored row-major in flat slices.
//!
//! Configuration dimensions are tiny (at most nine), so everything here is
//! written for clarity over asymptotic speed.

/// Determinant by cofactor expansion along the first row.
pub fn determinant(m: &[f64], n: usize) -> f64 {
    debug_assert_eq!(m.len(), n * n);
    match n {
        0 => 1.0,
        1 => m[0],
        2 => m[0] * m[3] - m[1] * m[2],
        3 => {
            m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
                + m[2] * (m[3] * m[7] - m[4] * m[6])
        }
        _ => {
            let mut det = 0.0;
            let mut minor = vec![0.0; (n - 1) * (n - 1)];
            for col in 0..n {
                fill_minor(m, n, 0, col, &mut minor);
                let sign = if col % 2 == 0 { 1.0 } else { -1.0 };
                det += sign * m[col] * determinant(&minor, n - 1);
            }
            det
        }
    }
}

fn fill_minor(m: &[f64], n: usize, row: usize, col: usize, out: &mut [f64]) {
    let mut k = 0;
    for i in (0..n).filter(|&i| i != row) {
        for j in (0..n).filter(|&j| j != col) {
            out[k] = m[i * n + j];
            k += 1;
        }
    }
}

/// Adjugate (transpose of the cofactor matrix), so that `m * adj = det(m) * I`.
pub fn adjugate(m: &[f64], n: usize, out: &mut [f64]) {
    debug_assert_eq!(out.len(), n * n);
    match n {
        1 => out[0] = 1.0,
        2 => {
            out[0] = m[3];
            out[1] = -m[1];
            out[2] = -m[2];
            out[3] = m[0];
        }
        3 => {
            out[0] = m[4] * m[8] - m[5] * m[7];
            out[1] = m[2] * m[7] - m[1] * m[8];
            out[2] = m[1] * m[5] - m[2] * m[4];
            out[3] = m[5] * m[6] - m[3] * m[8];
            out[4] = m[0] * m[8] - m[2] * m[6];
            out[5] = m[2] * m[3] - m[0] * m[5];
            out[6] = m[3] * m[7] - m[4] * m[6];
            out[7] = m[1] * m[6] - m[0] * m[7];
            out[8] = m[0] * m[4] - m[1] * m[3];
        }
        _ => {
            let mut minor = vec![0.0; (n - 1) * (n - 1)];
            for i in 0..n {
                for j in 0..n {
                    fill_minor(m, n, i, j, &mut minor);
                    let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                    // cofactor C_ij lands at adj_ji
                    out[j * n + i] = sign * determinant(&minor, n - 1);
                }
            }
        }
    }
}

/// Inverse via the adjugate. Returns `None` for a singular matrix.
pub fn inverse(m: &[f64], n: usize) -> Option<Vec<f64>> {
    let det = determinant(m, n);
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    let mut adj = vec![0.0; n * n];
    adjugate(m, n, &mut adj);
    Some(adj.into_iter().map(|x| x / det).collect())
}

/// Lower Cholesky factor; `None` if the matrix is not positive definite.
pub fn cholesky(m: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = m[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

pub fn is_symmetric(m: &[f64], n: usize, tol: f64) -> bool {
    (0..n).all(|i| (0..i).all(|j| (m[i * n + j] - m[j * n + i]).abs() <= tol))
}

pub fn mat_vec(m: &[f64], n: usize, x: &[f64], out: &mut [f64]) {
    for i in 0..n {
        out[i] = (0..n).map(|j| m[i * n + j] * x[j]).sum();
    }
}

/// Solve `m x = b` by Gaussian elimination with partial pivoting.
pub fn solve(m: &[f64], n: usize, b: &[f64]) -> Option<Vec<f64>> {
    let mut a = m.to_vec();
    let mut x = b.to_vec();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))?;
        if a[pivot * n + col] == 0.0 {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            x.swap(col, pivot);
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            x[row] -= f * x[col];
        }
    }
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row * n + k] * x[k]).sum();
        x[row] = (x[row] - s) / a[row * n + row];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat_mul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
        let mut c = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                c[i * n + j] = (0..n).map(|k| a[i * n + k] * b[k * n + j]).sum();
            }
        }
        c
    }

    #[test]
    fn adjugate_of_shear() {
        let m = [2.0, 1.0, 0.0, 1.0];
        let mut adj = [0.0; 4];
        adjugate(&m, 2, &mut adj);
        assert_eq!(adj, [1.0, -1.0, 0.0, 2.0]);
        assert_eq!(determinant(&m, 2), 2.0);
    }

    #[test]
    fn general_adjugate_matches_explicit_formula() {
        // 4x4 goes through the generic Laplace path; check m * adj = det * I
        let m = [
            2.0, 0.3, -0.1, 0.5, 0.2, 1.5, 0.4, -0.2, 0.0, 0.1, 3.0, 0.7, 0.6, -0.3, 0.2, 1.1,
        ];
        let mut adj = [0.0; 16];
        adjugate(&m, 4, &mut adj);
        let det = determinant(&m, 4);
        let p = mat_mul(&m, &adj, 4);
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { det } else { 0.0 };
                assert!((p[i * 4 + j] - want).abs() < 1e-12 * det.abs());
            }
        }
        // 3x3 explicit vs generic expansion of the same block
        let m3 = [2.0, 0.3, -0.1, 0.2, 1.5, 0.4, 0.0, 0.1, 3.0];
        let mut a3 = [0.0; 9];
        adjugate(&m3, 3, &mut a3);
        let p3 = mat_mul(&m3, &a3, 3);
        let d3 = determinant(&m3, 3);
        for i in 0..3 {
            assert!((p3[i * 4] - d3).abs() < 1e-13);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        assert!(cholesky(&[1.0, 0.0, 0.0, -1.0], 2).is_none());
        assert!(cholesky(&[1.0, 0.5, 0.5, 1.0], 2).is_some());
        assert!(cholesky(&[1.0, 2.0, 2.0, 1.0], 2).is_none());
    }

    #[test]
    fn solve_small_system() {
        let x = solve(&[0.0, 2.0, 1.0, 1.0], 2, &[4.0, 3.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 2.0).abs() < 1e-15);
    }
}

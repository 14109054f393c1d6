//! Brute-force vertex enumeration for small polyhedra.
//!
//! Every vertex is the unique solution of the equality rows plus a choice of active
//! inequality rows. With one variable per action profile the number of candidate
//! active sets is small for the games this crate targets; larger problems are refused.

use crate::solution::Polyhedron;

/// Candidate active sets tried before giving up.
pub const MAX_ACTIVE_SETS: u64 = 200_000;

const VERTEX_TOL: f64 = 1e-9;

fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u64) / (i as u64 + 1);
    }
    acc
}

/// Solves the square system in place by Gaussian elimination with partial pivoting.
fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-11 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Vertices of a bounded polyhedron over `n` variables, or `None` when the search
/// would exceed [`MAX_ACTIVE_SETS`] or the equality rows exceed `n`.
pub fn enumerate_vertices(poly: &Polyhedron, n: usize) -> Option<Vec<Vec<f64>>> {
    let eq = &poly.eq;
    if eq.len() > n {
        return None;
    }
    let k = n - eq.len();
    let m = poly.le.len();
    if binomial(m, k) > MAX_ACTIVE_SETS {
        return None;
    }
    let mut vertices: Vec<Vec<f64>> = Vec::new();
    let mut chosen: Vec<usize> = (0..k).collect();
    if k > m {
        return Some(vertices);
    }
    loop {
        let mut a: Vec<Vec<f64>> = eq.iter().map(|(r, _)| r.clone()).collect();
        let mut b: Vec<f64> = eq.iter().map(|(_, rhs)| *rhs).collect();
        for &i in &chosen {
            a.push(poly.le[i].0.clone());
            b.push(poly.le[i].1);
        }
        if let Some(x) = solve_square(a, b) {
            if poly.contains(&x, VERTEX_TOL)
                && !vertices
                    .iter()
                    .any(|v| v.iter().zip(&x).all(|(p, q)| (p - q).abs() <= VERTEX_TOL))
            {
                vertices.push(x);
            }
        }
        // Next k-combination in lexicographic order.
        let mut i = k;
        loop {
            if i == 0 {
                return Some(vertices);
            }
            i -= 1;
            if chosen[i] < m - k + i {
                chosen[i] += 1;
                for j in i + 1..k {
                    chosen[j] = chosen[j - 1] + 1;
                }
                break;
            }
        }
    }
}

//! Oracles shared by the integration suites.

#![allow(dead_code)]

use drsentinel::matcore::SymMatrix;
use drsentinel::sdp::{LmiBlock, SdpProblem};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// `minimize cᵀx` subject to `g0_j + g_jᵀx ≥ 0`, kept as raw rows.
#[derive(Debug, Clone)]
pub struct Lp {
    pub c: Vec<f64>,
    pub rows: Vec<(f64, Vec<f64>)>,
}

/// Random bounded LP with a strictly feasible point, encoded as an SDP whose
/// constraint rows are spread over diagonal blocks of random sizes.
pub fn random_diagonal_problem(seed: u64) -> (Lp, SdpProblem) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.random_range(1..=6usize);
    let extra = rng.random_range(0..=6usize);
    let x0: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut rows = Vec::new();
    for _ in 0..extra {
        let g: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
        let slack = rng.random_range(0.1..2.0);
        let g0 = slack - g.iter().zip(&x0).map(|(a, b)| a * b).sum::<f64>();
        rows.push((g0, g));
    }
    let bound = 3.0;
    for i in 0..k {
        let mut up = vec![0.0; k];
        up[i] = -1.0;
        rows.push((bound, up));
        let mut lo = vec![0.0; k];
        lo[i] = 1.0;
        rows.push((bound, lo));
    }
    let c: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();

    let mut blocks = Vec::new();
    let mut start = 0;
    while start < rows.len() {
        let size = rng.random_range(1..=4usize).min(rows.len() - start);
        let chunk = &rows[start..start + size];
        let f0 = SymMatrix::from_diag(&chunk.iter().map(|r| r.0).collect::<Vec<_>>());
        let coeffs = (0..k)
            .map(|i| SymMatrix::from_diag(&chunk.iter().map(|r| r.1[i]).collect::<Vec<_>>()))
            .collect();
        blocks.push(LmiBlock { f0, coeffs });
        start += size;
    }
    let lp = Lp { c: c.clone(), rows };
    (lp, SdpProblem::new(c, blocks).unwrap())
}

/// Solves `M x = b` by Gaussian elimination with partial pivoting.
fn solve_dense(mut m: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() < 1e-10 {
            return None;
        }
        m.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = m[r][col] / m[col][col];
            for c in col..n {
                m[r][c] -= f * m[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| m[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / m[r][r];
    }
    Some(x)
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            go(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Optimal value by enumerating every vertex of the (bounded) polytope.
pub fn brute_force_lp(lp: &Lp) -> f64 {
    let k = lp.c.len();
    let mut best = f64::INFINITY;
    for active in combinations(lp.rows.len(), k) {
        let m: Vec<Vec<f64>> = active.iter().map(|&j| lp.rows[j].1.clone()).collect();
        let b: Vec<f64> = active.iter().map(|&j| -lp.rows[j].0).collect();
        let Some(x) = solve_dense(m, b) else { continue };
        let feasible = lp
            .rows
            .iter()
            .all(|(g0, g)| g0 + g.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() >= -1e-9);
        if feasible {
            best = best.min(lp.c.iter().zip(&x).map(|(a, b)| a * b).sum());
        }
    }
    best
}

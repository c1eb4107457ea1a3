//! Dense log-barrier solver for small linear SDPs in inequality form:
//!
//! ```text
//! minimize    cᵀx
//! subject to  F_b(x) = F_b0 + Σ_i x_i F_bi ⪰ 0   for every block b
//! ```
//!
//! Scalar affine constraints are 1×1 blocks. A Phase-I problem
//! (maximize `s` subject to `F_b(x) − sI ⪰ 0`) supplies a strictly feasible
//! start; Phase II then follows the central path of
//! `t·cᵀx − Σ_b log det F_b(x)` with damped Newton steps, growing `t`
//! geometrically until the barrier gap `m/t` is below tolerance.

use crate::error::{invalid, Result};
use crate::matcore::{cholesky, cholesky_inverse, cholesky_solve, sym_eig, Matrix, SymMatrix};

/// One LMI block `F0 + Σ x_i F_i ⪰ 0`.
#[derive(Debug, Clone)]
pub struct LmiBlock {
    pub f0: SymMatrix,
    /// One coefficient per decision variable.
    pub coeffs: Vec<SymMatrix>,
}

impl LmiBlock {
    pub fn dim(&self) -> usize {
        self.f0.dim()
    }

    /// Scalar constraint `g0 + Σ g_i x_i ≥ 0`.
    pub fn scalar(g0: f64, g: &[f64]) -> Self {
        Self {
            f0: SymMatrix::from_diag(&[g0]),
            coeffs: g.iter().map(|&v| SymMatrix::from_diag(&[v])).collect(),
        }
    }

    pub fn value(&self, x: &[f64]) -> SymMatrix {
        let mut m = self.f0.as_matrix().clone();
        for (xi, fi) in x.iter().zip(&self.coeffs) {
            if *xi != 0.0 {
                m = &m + &fi.scale(*xi);
            }
        }
        SymMatrix::symmetrize(&m)
    }
}

#[derive(Debug, Clone)]
pub struct SdpProblem {
    nvars: usize,
    c: Vec<f64>,
    blocks: Vec<LmiBlock>,
}

impl SdpProblem {
    pub fn new(c: Vec<f64>, blocks: Vec<LmiBlock>) -> Result<Self> {
        let nvars = c.len();
        if nvars == 0 {
            return invalid("SDP needs at least one decision variable");
        }
        if blocks.is_empty() {
            return invalid("SDP needs at least one constraint block");
        }
        if c.iter().any(|v| !v.is_finite()) {
            return invalid("objective has non-finite entries");
        }
        for (b, block) in blocks.iter().enumerate() {
            if block.coeffs.len() != nvars {
                return invalid(format!(
                    "block {b} has {} coefficient matrices, expected {nvars}",
                    block.coeffs.len()
                ));
            }
            if let Some(i) = block.coeffs.iter().position(|f| f.dim() != block.dim()) {
                return invalid(format!("block {b}, variable {i}: coefficient dimension mismatch"));
            }
        }
        Ok(Self { nvars, c, blocks })
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    pub fn blocks(&self) -> &[LmiBlock] {
        &self.blocks
    }

    /// Total block dimension `m`, the barrier's self-concordance parameter.
    pub fn total_dim(&self) -> usize {
        self.blocks.iter().map(LmiBlock::dim).sum()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.c.iter().zip(x).map(|(c, x)| c * x).sum()
    }

    /// Smallest eigenvalue of each block at `x`, computed with the Jacobi
    /// eigensolver rather than the solver's Cholesky tests.
    pub fn block_min_eigenvalues(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.blocks
            .iter()
            .map(|b| Ok(sym_eig(&b.value(x))?.min()))
            .collect()
    }

    /// Largest spectral norm over blocks at `x`.
    pub fn max_block_norm(&self, x: &[f64]) -> Result<f64> {
        let mut worst = 0.0_f64;
        for b in &self.blocks {
            worst = worst.max(sym_eig(&b.value(x))?.norm());
        }
        Ok(worst)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdpOptions {
    /// Relative barrier-gap target: stop when `m/t ≤ tol · max(1, |cᵀx|)`.
    pub tol: f64,
    pub max_outer: usize,
    pub barrier_growth: f64,
    pub max_newton: usize,
    /// Phase-I bound on `|x_i|`.
    pub phase1_box: f64,
    /// Phase-I bound on the margin `s`.
    pub phase1_margin_cap: f64,
}

impl Default for SdpOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_outer: 80,
            barrier_growth: 10.0,
            max_newton: 200,
            phase1_box: 1e6,
            phase1_margin_cap: 1e6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    MaxIter,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub status: SdpStatus,
    /// Smallest block eigenvalue at `x`.
    pub min_eig_slack: f64,
    /// `m/t` at termination.
    pub duality_gap_estimate: f64,
    pub outer_iterations: usize,
    pub newton_iterations: usize,
    /// Objective after each centering step.
    pub objective_path: Vec<f64>,
    pub phase1_margin: f64,
}

#[derive(Debug, Clone)]
pub struct Phase1Result {
    pub x: Vec<f64>,
    /// `min_b λ_min(F_b(x))` at the returned point.
    pub margin: f64,
    /// Upper bound on how far `margin` is from the optimum, in scaled units.
    pub gap: f64,
    pub status: SdpStatus,
}

/// Block with its coefficients pre-scaled so `‖F0‖₂ ≤ 1`.
struct ScaledBlock {
    f0: Matrix,
    coeffs: Vec<Option<Matrix>>,
    dim: usize,
}

impl ScaledBlock {
    fn from_block(block: &LmiBlock) -> Result<Self> {
        let norm = sym_eig(&block.f0)?.norm();
        let s = 1.0 / norm.max(1.0);
        Ok(Self {
            f0: block.f0.scale(s).into_matrix(),
            coeffs: block
                .coeffs
                .iter()
                .map(|f| (f.max_abs() > 0.0).then(|| f.scale(s).into_matrix()))
                .collect(),
            dim: block.dim(),
        })
    }

    fn value(&self, x: &[f64]) -> Matrix {
        let mut m = self.f0.clone();
        for (xi, fi) in x.iter().zip(&self.coeffs) {
            if let Some(fi) = fi {
                if *xi != 0.0 {
                    for (a, b) in m.as_mut_slice().iter_mut().zip(fi.as_slice()) {
                        *a += xi * b;
                    }
                }
            }
        }
        m
    }
}

struct BarrierState {
    x: Vec<f64>,
    /// `Σ_b log det F_b(x)`.
    log_det: f64,
    factors: Vec<Matrix>,
}

enum CenterOutcome {
    Centered(usize),
    Failure,
}

struct Barrier<'a> {
    c: &'a [f64],
    blocks: &'a [ScaledBlock],
    opts: SdpOptions,
}

impl Barrier<'_> {
    fn m_total(&self) -> usize {
        self.blocks.iter().map(|b| b.dim).sum()
    }

    fn evaluate(&self, x: &[f64]) -> Option<(f64, Vec<Matrix>)> {
        let mut log_det = 0.0;
        let mut factors = Vec::with_capacity(self.blocks.len());
        for b in self.blocks {
            let l = cholesky(&b.value(x)).ok()?;
            log_det += (0..b.dim).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
            factors.push(l);
        }
        log_det.is_finite().then_some((log_det, factors))
    }

    fn state(&self, x: Vec<f64>) -> Option<BarrierState> {
        let (log_det, factors) = self.evaluate(&x)?;
        Some(BarrierState { x, log_det, factors })
    }

    /// Gradient and Hessian of `t·cᵀx − Σ log det F_b(x)`.
    fn derivatives(&self, st: &BarrierState, t: f64) -> (Vec<f64>, Matrix) {
        let n = self.c.len();
        let mut grad: Vec<f64> = self.c.iter().map(|c| t * c).collect();
        let mut hess = Matrix::zeros(n, n);
        for (b, l) in self.blocks.iter().zip(&st.factors) {
            let inv = cholesky_inverse(l);
            let g: Vec<Option<Matrix>> = b
                .coeffs
                .iter()
                .map(|f| f.as_ref().map(|f| inv.as_matrix() * f))
                .collect();
            for i in 0..n {
                let Some(gi) = &g[i] else { continue };
                grad[i] -= gi.trace();
                for j in i..n {
                    let Some(gj) = &g[j] else { continue };
                    // tr(G_i G_j)
                    let d = b.dim;
                    let mut acc = 0.0;
                    for r in 0..d {
                        for s in 0..d {
                            acc += gi[(r, s)] * gj[(s, r)];
                        }
                    }
                    hess[(i, j)] += acc;
                    if i != j {
                        hess[(j, i)] += acc;
                    }
                }
            }
        }
        (grad, hess)
    }

    /// Solves `H dx = −g` with a diagonal shift proportional to each
    /// variable's own curvature, so badly scaled variables keep their
    /// Newton steps.
    fn newton_direction(grad: &[f64], hess: &Matrix) -> Option<Vec<f64>> {
        let n = grad.len();
        let max_diag = (0..n).fold(0.0_f64, |m, i| m.max(hess[(i, i)].abs()));
        let floor = 1e-300_f64.max(max_diag * 1e-300);
        let mut rel = 1e-12;
        for _ in 0..8 {
            let mut h = hess.clone();
            for i in 0..n {
                h[(i, i)] += rel * hess[(i, i)].abs().max(floor);
            }
            if let Ok(l) = cholesky(&h) {
                let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
                let dx = cholesky_solve(&l, &neg);
                if dx.iter().all(|v| v.is_finite()) {
                    return Some(dx);
                }
            }
            rel *= 100.0;
        }
        None
    }

    /// Damped Newton centering at barrier weight `t`.
    fn center(&self, st: &mut BarrierState, t: f64) -> CenterOutcome {
        for it in 0..self.opts.max_newton {
            let (grad, hess) = self.derivatives(st, t);
            let Some(dx) = Self::newton_direction(&grad, &hess) else {
                return CenterOutcome::Failure;
            };
            let slope: f64 = grad.iter().zip(&dx).map(|(g, d)| g * d).sum();
            let decrement_sq = -slope;
            if !(decrement_sq > 1e-9) {
                return CenterOutcome::Centered(it);
            }
            let c_dx: f64 = self.c.iter().zip(&dx).map(|(c, d)| c * d).sum();
            let mut step = 1.0;
            let mut accepted = None;
            let mut strict = false;
            let noise = 1e-13 * (1.0 + st.log_det.abs());
            while step > 1e-16 {
                let trial: Vec<f64> = st.x.iter().zip(&dx).map(|(x, d)| x + step * d).collect();
                if let Some(next) = self.state(trial) {
                    // change in the barrier objective without forming t·cᵀx
                    let change = t * step * c_dx - (next.log_det - st.log_det);
                    if change <= 0.25 * step * slope + noise {
                        strict = change <= 0.25 * step * slope;
                        accepted = Some(next);
                        break;
                    }
                }
                step *= 0.5;
            }
            match accepted {
                Some(next) => *st = next,
                None => return CenterOutcome::Centered(it),
            }
            if !strict {
                // decrease is below round-off: as centered as we can get
                return CenterOutcome::Centered(it + 1);
            }
        }
        CenterOutcome::Centered(self.opts.max_newton)
    }
}

struct PathResult {
    state: BarrierState,
    gap: f64,
    outer: usize,
    newton: usize,
    path: Vec<f64>,
    status: SdpStatus,
}

/// Follows the central path; `stop(x, gap)` returns a status to finish with.
fn follow_path(
    barrier: &Barrier<'_>,
    mut st: BarrierState,
    t0: f64,
    mut stop: impl FnMut(&[f64], f64) -> Option<SdpStatus>,
) -> PathResult {
    let m = barrier.m_total() as f64;
    let mut t = t0;
    let mut newton = 0;
    let mut path = Vec::new();
    for outer in 1..=barrier.opts.max_outer {
        match barrier.center(&mut st, t) {
            CenterOutcome::Centered(k) => newton += k,
            CenterOutcome::Failure => {
                return PathResult {
                    state: st,
                    gap: m / t,
                    outer,
                    newton,
                    path,
                    status: SdpStatus::NumericalFailure,
                }
            }
        }
        let obj: f64 = barrier.c.iter().zip(&st.x).map(|(c, x)| c * x).sum();
        path.push(obj);
        let gap = m / t;
        if let Some(status) = stop(&st.x, gap) {
            return PathResult {
                state: st,
                gap,
                outer,
                newton,
                path,
                status,
            };
        }
        t *= barrier.opts.barrier_growth;
    }
    PathResult {
        state: st,
        gap: m / t * barrier.opts.barrier_growth,
        outer: barrier.opts.max_outer,
        newton,
        path,
        status: SdpStatus::MaxIter,
    }
}

fn validate_opts(opts: &SdpOptions) -> Result<()> {
    if !(opts.tol > 0.0) || !(opts.barrier_growth > 1.0) || opts.max_outer == 0 || opts.max_newton == 0 {
        return invalid("SDP options need tol > 0, barrier_growth > 1 and positive iteration limits");
    }
    Ok(())
}

fn scaled_blocks(prob: &SdpProblem) -> Result<Vec<ScaledBlock>> {
    prob.blocks.iter().map(ScaledBlock::from_block).collect()
}

/// Maximizes the common eigenvalue margin `s` with `F_b(x) − sI ⪰ 0`, with
/// `|x_i|` and `s` bounded by the option caps. With `early_exit`, returns as
/// soon as a centered iterate has a positive margin at least as large as the
/// remaining gap.
fn phase1_inner(prob: &SdpProblem, opts: &SdpOptions, early_exit: bool) -> Result<Phase1Result> {
    validate_opts(opts)?;
    let n = prob.nvars;
    let scaled = scaled_blocks(prob)?;
    let mut blocks = Vec::with_capacity(scaled.len() + 2);
    for b in &scaled {
        let mut coeffs = b.coeffs.clone();
        coeffs.push(Some(Matrix::identity(b.dim).scale(-1.0)));
        blocks.push(ScaledBlock {
            f0: b.f0.clone(),
            coeffs,
            dim: b.dim,
        });
    }
    // box |x_i| ≤ R as one diagonal block, then s ≤ cap
    let r = opts.phase1_box;
    let mut box_f0 = Matrix::zeros(2 * n, 2 * n);
    let mut box_coeffs = Vec::with_capacity(n + 1);
    for i in 0..n {
        box_f0[(2 * i, 2 * i)] = r;
        box_f0[(2 * i + 1, 2 * i + 1)] = r;
        let mut f = Matrix::zeros(2 * n, 2 * n);
        f[(2 * i, 2 * i)] = -1.0;
        f[(2 * i + 1, 2 * i + 1)] = 1.0;
        box_coeffs.push(Some(f));
    }
    box_coeffs.push(None);
    let box_scale = 1.0 / r.max(1.0);
    blocks.push(ScaledBlock {
        f0: box_f0.scale(box_scale),
        coeffs: box_coeffs.into_iter().map(|f| f.map(|f| f.scale(box_scale))).collect(),
        dim: 2 * n,
    });
    let cap = opts.phase1_margin_cap;
    let mut cap_coeffs = vec![None; n];
    cap_coeffs.push(Some(Matrix::identity(1).scale(-1.0 / cap.max(1.0))));
    blocks.push(ScaledBlock {
        f0: Matrix::identity(1).scale(cap / cap.max(1.0)),
        coeffs: cap_coeffs,
        dim: 1,
    });

    let mut c = vec![0.0; n + 1];
    c[n] = -1.0;
    let barrier = Barrier {
        c: &c,
        blocks: &blocks,
        opts: *opts,
    };

    let x0 = vec![0.0; n];
    let mut lam_min = f64::INFINITY;
    for b in &scaled {
        lam_min = lam_min.min(sym_eig(&SymMatrix::symmetrize(&b.value(&x0)))?.min());
    }
    let s0 = (lam_min - 1.0).min(cap - 1.0);
    let mut start = x0;
    start.push(s0);
    let Some(st) = barrier.state(start) else {
        return Ok(Phase1Result {
            x: vec![0.0; n],
            margin: f64::NAN,
            gap: f64::INFINITY,
            status: SdpStatus::NumericalFailure,
        });
    };

    let tol = opts.tol;
    let result = follow_path(&barrier, st, 1.0, |x, gap| {
        let s = x[n];
        if early_exit && s > 0.0 && s >= gap {
            return Some(SdpStatus::Optimal);
        }
        if s + gap < -tol {
            return Some(SdpStatus::Infeasible);
        }
        (gap <= tol * s.abs().max(1.0)).then_some(if s > 0.0 {
            SdpStatus::Optimal
        } else {
            SdpStatus::Infeasible
        })
    });
    let mut x = result.state.x;
    x.truncate(n);
    let margin = prob
        .block_min_eigenvalues(&x)?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let status = match result.status {
        SdpStatus::MaxIter if margin > 0.0 => SdpStatus::Optimal,
        SdpStatus::MaxIter => SdpStatus::Infeasible,
        other => other,
    };
    Ok(Phase1Result {
        x,
        margin,
        gap: result.gap,
        status,
    })
}

/// Phase I run to convergence: the point maximizing the smallest block
/// eigenvalue (subject to the box and margin caps in `opts`).
pub fn phase1(prob: &SdpProblem, opts: &SdpOptions) -> Result<Phase1Result> {
    phase1_inner(prob, opts, false)
}

pub fn solve(prob: &SdpProblem, opts: &SdpOptions) -> Result<SdpSolution> {
    let p1 = phase1_inner(prob, opts, true)?;
    let failed = |status: SdpStatus, x: Vec<f64>, margin: f64| SdpSolution {
        objective: prob.objective(&x),
        x,
        status,
        min_eig_slack: margin,
        duality_gap_estimate: f64::INFINITY,
        outer_iterations: 0,
        newton_iterations: 0,
        objective_path: Vec::new(),
        phase1_margin: margin,
    };
    match p1.status {
        SdpStatus::Optimal if p1.margin > 0.0 => {}
        SdpStatus::NumericalFailure => return Ok(failed(SdpStatus::NumericalFailure, p1.x, p1.margin)),
        _ => return Ok(failed(SdpStatus::Infeasible, p1.x, p1.margin)),
    }

    let blocks = scaled_blocks(prob)?;
    let barrier = Barrier {
        c: &prob.c,
        blocks: &blocks,
        opts: *opts,
    };
    let Some(st) = barrier.state(p1.x.clone()) else {
        return Ok(failed(SdpStatus::NumericalFailure, p1.x, p1.margin));
    };
    let m = barrier.m_total() as f64;
    let t0 = m / (1.0 + prob.objective(&st.x).abs());
    let tol = opts.tol;
    let result = follow_path(&barrier, st, t0, |x, gap| {
        let obj = prob.objective(x);
        (gap <= tol * obj.abs().max(1.0)).then_some(SdpStatus::Optimal)
    });
    let x = result.state.x;
    let min_eig_slack = prob
        .block_min_eigenvalues(&x)?
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    Ok(SdpSolution {
        objective: prob.objective(&x),
        x,
        status: result.status,
        min_eig_slack,
        duality_gap_estimate: result.gap,
        outer_iterations: result.outer,
        newton_iterations: result.newton,
        objective_path: result.path,
        phase1_margin: p1.margin,
    })
}

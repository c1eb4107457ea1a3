//! Outer ellipsoidal bounds on the states reachable by a zero-alarm attacker.
//!
//! With the invariant-ellipsoid argument on `V_t = ξ_tᵀ P̃ ξ_t` for the joint
//! dynamics `ξ_{t+1} = Â ξ_t + B̂ (w_t, δ̄_t)`, inputs bounded by
//! `wᵀΣ_w⁻¹w ≤ w̄` and `δ̄ᵀδ̄ ≤ α`, and a decay rate `a`, the condition
//!
//! ```text
//! V_{t+1} − a V_t − (1−a₁)/w̄ · wᵀΣ_w⁻¹w − (1−a₂)/α · δ̄ᵀδ̄ ≤ 0,   a₁ + a₂ ≥ a
//! ```
//!
//! bounds `V_t ≤ (2−a)/(1−a)` along every trajectory started at the origin.
//! Folding that level into `Ŵ = (1−a)/(2−a) · diag((1−a₁)/w̄ Σ_w⁻¹, (1−a₂)/α I)`
//! and applying the congruence `diag(Q, Q, I)` to the Schur complement gives
//! an LMI that is affine in `(Q_ξ, a₁, a₂)` for fixed `a`:
//!
//! ```text
//! ⎡ a Q_ξ    Q_ξ Âᵀ   0  ⎤
//! ⎢ Â Q_ξ    Q_ξ      B̂  ⎥ ⪰ 0
//! ⎣ 0        B̂ᵀ       Ŵ  ⎦
//! ```
//!
//! whose solutions satisfy `{ξ : ξᵀQ_ξ⁻¹ξ ≤ 1} ⊇ reachable set`. The trace
//! of the state block `Q_x` is minimized by SDP at every point of a grid over
//! `a`, keeping the best.

use rayon::prelude::*;
use serde::Serialize;

use crate::ambiguity::{stream_rng, MomentAmbiguitySet, NoiseFamily, NoiseSampler};
use crate::attack::{AttackPolicy, DirectionStrategy};
use crate::detector::tune_dr;
use crate::error::{invalid, Error, Result};
use crate::matcore::{inverse_spd, sqrt_psd, Matrix, SymMatrix};
use crate::sdp::{self, LmiBlock, SdpOptions, SdpProblem, SdpStatus};
use crate::system::{joint_system, simulate, LtiSystem, ResidualModel, SimulationSpec, Trace};

/// Containment slack accepted by [`Ellipsoid::contains`].
pub const CONTAINMENT_TOL: f64 = 1e-6;

/// `{x : xᵀ Q⁻¹ x ≤ 1}` for a positive definite shape matrix `Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    shape: SymMatrix,
    inverse: SymMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Containment {
    pub inside: bool,
    /// `xᵀ Q⁻¹ x`.
    pub margin: f64,
}

impl Ellipsoid {
    pub fn new(shape: SymMatrix) -> Result<Self> {
        let inverse = inverse_spd(&shape)?;
        Ok(Self { shape, inverse })
    }

    pub fn shape(&self) -> &SymMatrix {
        &self.shape
    }

    pub fn inverse_shape(&self) -> &SymMatrix {
        &self.inverse
    }

    pub fn dim(&self) -> usize {
        self.shape.dim()
    }

    /// Sum of squared semi-axis lengths.
    pub fn trace(&self) -> f64 {
        self.shape.trace()
    }

    pub fn contains(&self, x: &[f64]) -> Result<Containment> {
        if x.len() != self.dim() {
            return invalid(format!("point has dimension {}, ellipsoid {}", x.len(), self.dim()));
        }
        let margin = self.inverse.quad_form(x);
        Ok(Containment {
            inside: margin <= 1.0 + CONTAINMENT_TOL,
            margin,
        })
    }

    /// `Q^{1/2} (cos θ_k, sin θ_k)` at `count` evenly spaced angles; planar
    /// ellipsoids only.
    pub fn boundary_2d(&self, count: usize) -> Result<Vec<[f64; 2]>> {
        if self.dim() != 2 {
            return invalid("boundary polyline is only defined for planar ellipsoids");
        }
        let root = sqrt_psd(&self.shape)?;
        Ok((0..count)
            .map(|k| {
                let theta = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
                let p = root.matvec(&[theta.cos(), theta.sin()]);
                [p[0], p[1]]
            })
            .collect())
    }
}

/// Distribution-free truncation level `w̄ = n / 𝒜` for `n`-dimensional noise:
/// `sup P(wᵀΣ_w⁻¹w ≤ w̄) ≥ 1 − 𝒜` over the moment ambiguity set.
pub fn noise_truncation(n: usize, target_rate: f64) -> Result<f64> {
    if n == 0 {
        return invalid("noise dimension must be at least 1");
    }
    if !(target_rate > 0.0 && target_rate <= 1.0) {
        return invalid(format!("target rate must be in (0, 1], got {target_rate}"));
    }
    Ok(n as f64 / target_rate)
}

/// Margins and safety bounds of the assembled LMI.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmiOptions {
    /// `Q_ξ ⪰ eps_q I`.
    pub eps_q: f64,
    /// `a₁, a₂ ≤ 1 − eps_a`.
    pub eps_a: f64,
    /// `tr(Q_ξ) ≤ trace_cap`; keeps the barrier bounded when some block of
    /// `Q_ξ` does not influence the objective.
    pub trace_cap: f64,
}

impl Default for LmiOptions {
    fn default() -> Self {
        Self {
            eps_q: 1e-9,
            eps_a: 1e-6,
            trace_cap: 1e6,
        }
    }
}

/// Decision-variable layout: upper triangle of `Q_ξ` row by row, then `a₁`, `a₂`.
#[derive(Debug, Clone, Copy)]
struct Layout {
    d: usize,
}

impl Layout {
    fn n_q(&self) -> usize {
        self.d * (self.d + 1) / 2
    }

    fn nvars(&self) -> usize {
        self.n_q() + 2
    }

    fn a1(&self) -> usize {
        self.n_q()
    }

    fn a2(&self) -> usize {
        self.n_q() + 1
    }

    fn entries(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.d).flat_map(move |i| (i..self.d).map(move |j| (i, j)))
    }

    fn unit(&self, i: usize, j: usize) -> Matrix {
        let mut e = Matrix::zeros(self.d, self.d);
        e[(i, j)] = 1.0;
        e[(j, i)] = 1.0;
        e
    }

    fn q_from(&self, x: &[f64]) -> SymMatrix {
        let mut q = Matrix::zeros(self.d, self.d);
        for (k, (i, j)) in self.entries().enumerate() {
            q[(i, j)] = x[k];
            q[(j, i)] = x[k];
        }
        SymMatrix::symmetrize(&q)
    }
}

fn check_params(alpha: f64, w_bar: f64, a: f64) -> Result<()> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return invalid(format!("attack threshold alpha must be positive, got {alpha}"));
    }
    if !(w_bar > 0.0) || !w_bar.is_finite() {
        return invalid(format!("noise threshold w_bar must be positive, got {w_bar}"));
    }
    if !(a > 0.0 && a < 1.0) {
        return invalid(format!("decay rate a must be in (0, 1), got {a}"));
    }
    Ok(())
}

/// Builds the SDP for one decay rate `a`.
pub fn assemble_lmi(
    joint: &crate::system::JointSystem,
    sigma_w: &SymMatrix,
    alpha: f64,
    w_bar: f64,
    a: f64,
    opts: &LmiOptions,
) -> Result<SdpProblem> {
    check_params(alpha, w_bar, a)?;
    let (n, p) = (joint.n(), joint.p());
    if sigma_w.dim() != n {
        return invalid("Sigma_w dimension does not match the joint system");
    }
    let d = joint.state_dim();
    let m = joint.input_dim();
    let layout = Layout { d };
    let level = (1.0 - a) / (2.0 - a);
    let sigma_w_inv = inverse_spd(sigma_w)?;
    let big = 2 * d + m;

    // constant part of ℱ: B̂ couplings and the a-independent part of Ŵ
    let mut f0 = Matrix::zeros(big, big);
    f0.set_block(d, 2 * d, &joint.b_hat);
    f0.set_block(2 * d, d, &joint.b_hat.transpose());
    let w_noise = sigma_w_inv.scale(level / w_bar);
    let w_attack = Matrix::identity(p).scale(level / alpha);
    f0.set_block(2 * d, 2 * d, &w_noise);
    f0.set_block(2 * d + n, 2 * d + n, &w_attack);

    let a_hat_t = joint.a_hat.transpose();
    let mut f_coeffs = Vec::with_capacity(layout.nvars());
    let mut q_coeffs = Vec::with_capacity(layout.nvars());
    for (i, j) in layout.entries() {
        let e = layout.unit(i, j);
        let mut f = Matrix::zeros(big, big);
        f.set_block(0, 0, &e.scale(a));
        f.set_block(0, d, &(&e * &a_hat_t));
        f.set_block(d, 0, &(&joint.a_hat * &e));
        f.set_block(d, d, &e);
        f_coeffs.push(SymMatrix::symmetrize(&f));
        q_coeffs.push(SymMatrix::symmetrize(&e));
    }
    let mut fa1 = Matrix::zeros(big, big);
    fa1.set_block(2 * d, 2 * d, &w_noise.scale(-1.0));
    let mut fa2 = Matrix::zeros(big, big);
    fa2.set_block(2 * d + n, 2 * d + n, &w_attack.scale(-1.0));
    f_coeffs.push(SymMatrix::symmetrize(&fa1));
    f_coeffs.push(SymMatrix::symmetrize(&fa2));
    q_coeffs.push(SymMatrix::zeros(d));
    q_coeffs.push(SymMatrix::zeros(d));

    let lmi = LmiBlock {
        f0: SymMatrix::symmetrize(&f0),
        coeffs: f_coeffs,
    };
    let q_block = LmiBlock {
        f0: SymMatrix::identity(d).scale(-opts.eps_q),
        coeffs: q_coeffs,
    };

    let nv = layout.nvars();
    let scalar = |g0: f64, terms: &[(usize, f64)]| {
        let mut g = vec![0.0; nv];
        for &(k, v) in terms {
            g[k] = v;
        }
        LmiBlock::scalar(g0, &g)
    };
    let (ia1, ia2) = (layout.a1(), layout.a2());
    let mut blocks = vec![
        lmi,
        q_block,
        scalar(0.0, &[(ia1, 1.0)]),
        scalar(0.0, &[(ia2, 1.0)]),
        scalar(1.0 - opts.eps_a, &[(ia1, -1.0)]),
        scalar(1.0 - opts.eps_a, &[(ia2, -1.0)]),
        scalar(-a, &[(ia1, 1.0), (ia2, 1.0)]),
    ];
    let trace_terms: Vec<(usize, f64)> = layout
        .entries()
        .enumerate()
        .filter(|(_, (i, j))| i == j)
        .map(|(k, _)| (k, -1.0))
        .collect();
    blocks.push(scalar(opts.trace_cap, &trace_terms));

    let mut c = vec![0.0; nv];
    for (k, (i, j)) in layout.entries().enumerate() {
        if i == j && i < n {
            c[k] = 1.0;
        }
    }
    SdpProblem::new(c, blocks)
}

/// Diagnostics for one decay-rate grid point.
#[derive(Debug, Clone, Serialize)]
pub struct GridPoint {
    pub a: f64,
    pub status: SdpStatus,
    pub trace_qx: Option<f64>,
    pub a1: f64,
    pub a2: f64,
    pub phase1_margin: f64,
    pub min_eig_slack: f64,
    pub duality_gap_estimate: f64,
    pub outer_iterations: usize,
    pub newton_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct ReachSetResult {
    pub q_xi: SymMatrix,
    pub q_x: Ellipsoid,
    pub a: f64,
    pub a1: f64,
    pub a2: f64,
    pub trace_qx: f64,
    pub alpha: f64,
    pub w_bar: f64,
    pub grid: Vec<GridPoint>,
}

impl ReachSetResult {
    /// Ellipsoid over the joint state `ξ = (x, e)`.
    pub fn joint_ellipsoid(&self) -> Result<Ellipsoid> {
        Ellipsoid::new(self.q_xi.clone())
    }
}

/// `a ∈ {0.02, 0.04, …, 0.98}`.
pub fn default_grid() -> Vec<f64> {
    (1..=49).map(|k| k as f64 / 50.0).collect()
}

struct Solved {
    point: GridPoint,
    q_xi: Option<SymMatrix>,
}

fn solve_grid_point(
    joint: &crate::system::JointSystem,
    sigma_w: &SymMatrix,
    alpha: f64,
    w_bar: f64,
    a: f64,
    sdp_opts: &SdpOptions,
    lmi_opts: &LmiOptions,
) -> Result<Solved> {
    let prob = assemble_lmi(joint, sigma_w, alpha, w_bar, a, lmi_opts)?;
    let sol = sdp::solve(&prob, sdp_opts)?;
    let layout = Layout {
        d: joint.state_dim(),
    };
    let optimal = sol.status == SdpStatus::Optimal;
    let q_xi = optimal.then(|| layout.q_from(&sol.x));
    Ok(Solved {
        point: GridPoint {
            a,
            status: sol.status,
            trace_qx: optimal.then_some(sol.objective),
            a1: sol.x[layout.a1()],
            a2: sol.x[layout.a2()],
            phase1_margin: sol.phase1_margin,
            min_eig_slack: sol.min_eig_slack,
            duality_gap_estimate: sol.duality_gap_estimate,
            outer_iterations: sol.outer_iterations,
            newton_iterations: sol.newton_iterations,
        },
        q_xi,
    })
}

/// Solves the LMI at every grid point (in parallel) and returns the feasible
/// point with the smallest `tr(Q_x)`; ties keep the earliest grid point.
pub fn min_trace_ellipsoid(
    joint: &crate::system::JointSystem,
    sigma_w: &SymMatrix,
    alpha: f64,
    w_bar: f64,
    grid: &[f64],
    sdp_opts: &SdpOptions,
    lmi_opts: &LmiOptions,
) -> Result<ReachSetResult> {
    if grid.is_empty() {
        return invalid("decay-rate grid is empty");
    }
    for &a in grid {
        check_params(alpha, w_bar, a)?;
    }
    let solved: Vec<Solved> = grid
        .par_iter()
        .map(|&a| solve_grid_point(joint, sigma_w, alpha, w_bar, a, sdp_opts, lmi_opts))
        .collect::<Result<_>>()?;

    let best = solved
        .iter()
        .enumerate()
        .filter_map(|(k, s)| s.point.trace_qx.map(|t| (k, t)))
        .fold(None, |acc: Option<(usize, f64)>, (k, t)| match acc {
            Some((_, bt)) if bt <= t => acc,
            _ => Some((k, t)),
        });
    let Some((k, trace_qx)) = best else {
        return Err(Error::AllInfeasible);
    };
    let n = joint.n();
    let q_xi = solved[k].q_xi.clone().expect("optimal point carries Q");
    let q_x = Ellipsoid::new(SymMatrix::symmetrize(&q_xi.block(0, 0, n, n)))?;
    let point = &solved[k].point;
    Ok(ReachSetResult {
        a: point.a,
        a1: point.a1,
        a2: point.a2,
        trace_qx,
        q_x,
        q_xi,
        alpha,
        w_bar,
        grid: solved.into_iter().map(|s| s.point).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TradeoffRow {
    pub target_rate: f64,
    pub alpha_dr: f64,
    pub w_bar: f64,
    pub trace_qx: f64,
    pub a: f64,
}

/// Minimum-trace bound under DR tuning for each target false-alarm rate.
pub fn trace_tradeoff_sweep(
    sys: &LtiSystem,
    rm: &ResidualModel,
    rates: &[f64],
    grid: &[f64],
    sdp_opts: &SdpOptions,
    lmi_opts: &LmiOptions,
) -> Result<Vec<TradeoffRow>> {
    let joint = joint_system(sys, rm)?;
    rates
        .iter()
        .map(|&rate| {
            let alpha_dr = tune_dr(sys.p(), rate)?;
            let w_bar = noise_truncation(sys.n(), rate)?;
            let res = min_trace_ellipsoid(&joint, &sys.sigma_w, alpha_dr, w_bar, grid, sdp_opts, lmi_opts)?;
            Ok(TradeoffRow {
                target_rate: rate,
                alpha_dr,
                w_bar,
                trace_qx: res.trace_qx,
                a: res.a,
            })
        })
        .collect()
}

/// Largest normalized value of
/// `V(Âξ + B̂ζ) − a V(ξ) − (1−a₁)/w̄ · wᵀΣ_w⁻¹w − (1−a₂)/α · δ̄ᵀδ̄`
/// with `V(ξ) = (2−a)/(1−a) · ξᵀQ_ξ⁻¹ξ`, over `samples` random `(ξ, w, δ̄)`.
/// Each value is divided by the sum of the magnitudes of its terms; a
/// certified bound gives a result no larger than round-off.
pub fn certificate_violation(
    result: &ReachSetResult,
    joint: &crate::system::JointSystem,
    sigma_w: &SymMatrix,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    use rand::Rng;
    use rand_distr::StandardNormal;

    let p_xi = inverse_spd(&result.q_xi)?;
    let sigma_w_inv = inverse_spd(sigma_w)?;
    let a = result.a;
    let level = (2.0 - a) / (1.0 - a);
    let (n, p, d) = (joint.n(), joint.p(), joint.state_dim());
    let mut rng = stream_rng(seed, 0);
    let mut worst = f64::NEG_INFINITY;
    let mut xi = vec![0.0; d];
    let mut w = vec![0.0; n];
    let mut db = vec![0.0; p];
    for _ in 0..samples {
        // mix scales so both state- and input-dominated regimes get probed
        let s_xi = 10f64.powf(rng.random_range(-2.0..2.0));
        let s_in = 10f64.powf(rng.random_range(-2.0..2.0));
        xi.iter_mut().for_each(|v| *v = s_xi * rng.sample::<f64, _>(StandardNormal));
        w.iter_mut().for_each(|v| *v = s_in * rng.sample::<f64, _>(StandardNormal));
        db.iter_mut().for_each(|v| *v = s_in * rng.sample::<f64, _>(StandardNormal));
        let next = joint.step(&xi, &w, &db);
        let v_next = level * p_xi.quad_form(&next);
        let v_now = a * level * p_xi.quad_form(&xi);
        let in_w = (1.0 - result.a1) / result.w_bar * sigma_w_inv.quad_form(&w);
        let in_d = (1.0 - result.a2) / result.alpha * db.iter().map(|v| v * v).sum::<f64>();
        let value = v_next - v_now - in_w - in_d;
        let scale = v_next.abs() + v_now.abs() + in_w.abs() + in_d.abs();
        if scale > 0.0 {
            worst = worst.max(value / scale);
        }
    }
    Ok(worst)
}

/// Input model for empirical reachable-set clouds.
#[derive(Debug, Clone)]
pub struct CloudSpec {
    pub alpha: f64,
    pub w_bar: f64,
    pub trajectories: usize,
    pub horizon: usize,
    pub seed: u64,
    pub direction: DirectionStrategy,
}

/// Simulates zero-alarm attacks with extremal inputs (`δ̄` on the sphere of
/// radius `√α`, `w` on the shell `wᵀΣ_w⁻¹w = w̄`) from the origin and hands
/// every trajectory to `visit`. Results come back in trajectory order.
pub fn reachable_cloud<R, F>(sys: &LtiSystem, rm: &ResidualModel, spec: &CloudSpec, visit: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(&Trace) -> R + Sync,
{
    let noise_w = NoiseSampler::new(
        NoiseFamily::UniformEllipsoidBoundary {
            radius: spec.w_bar.sqrt(),
        },
        MomentAmbiguitySet::new(sys.sigma_w.clone())?,
    )?;
    let noise_v = NoiseSampler::gaussian(sys.sigma_v.clone())?;
    let attack = AttackPolicy::zero_alarm(spec.alpha, spec.direction.clone())?;
    (0..spec.trajectories as u64)
        .into_par_iter()
        .map(|k| {
            let trace = simulate(
                sys,
                rm,
                &SimulationSpec {
                    noise_w: &noise_w,
                    noise_v: &noise_v,
                    attack: &attack,
                    threshold: spec.alpha,
                    horizon: spec.horizon + 1,
                    seed: spec.seed,
                    stream: k,
                },
            )?;
            Ok(visit(&trace))
        })
        .collect()
}

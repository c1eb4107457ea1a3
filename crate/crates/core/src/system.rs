//! Plant/observer model, steady-state Kalman design, residual statistics and
//! the closed-loop simulator.
//!
//! The loop runs a steady-state Kalman predictor with the control law
//! `u_t = K x̂_t`:
//!
//! ```text
//! x_{t+1} = A x_t + B u_t + w_t
//! ȳ_t     = C x_t + v_t + δ_t
//! r_t     = ȳ_t − C x̂_t
//! x̂_{t+1} = A x̂_t + B u_t + L r_t
//! ```
//!
//! so the estimation error `e_t = x_t − x̂_t` evolves as
//! `e_{t+1} = (A − LC) e_t + w_t − L v_t − L δ_t`.

use crate::ambiguity::{stream_rng, NoiseSampler};
use crate::attack::{AttackContext, AttackPolicy};
use crate::error::{invalid, Error, Result};
use crate::matcore::{inverse_spd, spectral_radius, sqrt_psd, Matrix, SymMatrix};

pub const DARE_TOL: f64 = 1e-14;
pub const DARE_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    /// State-feedback gain applied to the estimate.
    pub k: Matrix,
    /// Observer gain.
    pub l: Matrix,
    pub sigma_w: SymMatrix,
    pub sigma_v: SymMatrix,
}

impl LtiSystem {
    pub fn new(
        a: Matrix,
        b: Matrix,
        c: Matrix,
        k: Matrix,
        l: Matrix,
        sigma_w: SymMatrix,
        sigma_v: SymMatrix,
    ) -> Result<Self> {
        let n = a.rows();
        let check = |name: &str, m: &Matrix, rows: usize, cols: usize| -> Result<()> {
            if (m.rows(), m.cols()) != (rows, cols) {
                return invalid(format!(
                    "{name} must be {rows}x{cols}, got {}x{}",
                    m.rows(),
                    m.cols()
                ));
            }
            Ok(())
        };
        check("A", &a, n, n)?;
        let m = b.cols();
        let p = c.rows();
        check("B", &b, n, m)?;
        check("C", &c, p, n)?;
        check("K", &k, m, n)?;
        check("L", &l, n, p)?;
        check("Sigma_w", &sigma_w, n, n)?;
        check("Sigma_v", &sigma_v, p, p)?;
        for (name, cov) in [("Sigma_w", &sigma_w), ("Sigma_v", &sigma_v)] {
            inverse_spd(cov)
                .map_err(|e| Error::InvalidInput(format!("{name} must be positive definite ({e})")))?;
        }
        Ok(Self {
            a,
            b,
            c,
            k,
            l,
            sigma_w,
            sigma_v,
        })
    }

    /// Same as [`LtiSystem::new`] with `L` taken from the steady-state Kalman
    /// predictor.
    pub fn with_kalman_gain(
        a: Matrix,
        b: Matrix,
        c: Matrix,
        k: Matrix,
        sigma_w: SymMatrix,
        sigma_v: SymMatrix,
    ) -> Result<Self> {
        if c.cols() != a.rows() || sigma_v.dim() != c.rows() || sigma_w.dim() != a.rows() {
            return invalid("dimension mismatch between A, C and the noise covariances");
        }
        let dare = solve_dare(&a, &c, &sigma_w, &sigma_v)?;
        Self::new(a, b, c, k, dare.l, sigma_w, sigma_v)
    }

    /// The two-state, two-input, two-output benchmark plant used by the
    /// bundled configs and the acceptance suite.
    pub fn benchmark() -> Self {
        let m = |rows: &[[f64; 2]; 2]| Matrix::from_rows(rows).expect("static matrix");
        Self::new(
            m(&[[0.84, 0.23], [-0.47, 0.12]]),
            m(&[[0.07, -0.32], [0.23, 0.58]]),
            m(&[[1.0, 0.0], [2.0, 1.0]]),
            m(&[[1.404, -1.402], [1.842, 1.008]]),
            m(&[[0.0276, 0.0448], [-0.01998, -0.0290]]),
            SymMatrix::from_rows(&[[0.045, -0.011], [-0.011, 0.02]]).expect("static matrix"),
            SymMatrix::identity(2).scale(2.0),
        )
        .expect("benchmark system is consistent")
    }

    pub fn n(&self) -> usize {
        self.a.rows()
    }

    pub fn m(&self) -> usize {
        self.b.cols()
    }

    pub fn p(&self) -> usize {
        self.c.rows()
    }

    pub fn closed_loop_radius(&self) -> f64 {
        spectral_radius(&(&self.a + &(&self.b * &self.k)))
    }

    pub fn observer_radius(&self) -> f64 {
        spectral_radius(&(&self.a - &(&self.l * &self.c)))
    }

    /// A-posteriori stabilizability/detectability check: both the controller
    /// loop `A + BK` and the observer loop `A − LC` must be Schur stable.
    pub fn check_stability(&self) -> Result<()> {
        let rc = self.closed_loop_radius();
        if !(rc < 1.0) {
            return invalid(format!("A + BK is not Schur stable (spectral radius {rc})"));
        }
        let ro = self.observer_radius();
        if !(ro < 1.0) {
            return invalid(format!("A - LC is not Schur stable (spectral radius {ro})"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DareSolution {
    /// Steady-state one-step prediction error covariance.
    pub p: SymMatrix,
    /// Kalman predictor gain `A P C^T (C P C^T + Sigma_v)^{-1}`.
    pub l: Matrix,
    pub iterations: usize,
}

fn riccati_step(a: &Matrix, c: &Matrix, sigma_w: &SymMatrix, sigma_v: &SymMatrix, p: &SymMatrix) -> Result<(SymMatrix, Matrix)> {
    let at = a.transpose();
    let ct = c.transpose();
    let s = SymMatrix::symmetrize(&(&(&(c * p) * &ct) + sigma_v));
    let s_inv = inverse_spd(&s)?;
    let apct = &(a * p) * &ct;
    let gain = &apct * &s_inv;
    let next = &(&(&(a * p) * &at) - &(&gain * &apct.transpose())) + sigma_w;
    Ok((SymMatrix::symmetrize(&next), gain))
}

/// Steady-state solution of the filtering Riccati equation
/// `P = A P A^T − A P C^T (C P C^T + Σ_v)^{-1} C P A^T + Σ_w`
/// by fixed-point iteration from `P_0 = Σ_w`.
pub fn solve_dare(a: &Matrix, c: &Matrix, sigma_w: &SymMatrix, sigma_v: &SymMatrix) -> Result<DareSolution> {
    let n = a.rows();
    if !a.is_square() || c.cols() != n || sigma_w.dim() != n || sigma_v.dim() != c.rows() {
        return invalid("solve_dare: dimension mismatch");
    }
    inverse_spd(sigma_v)?;
    let mut p = sigma_w.clone();
    for it in 1..=DARE_MAX_ITER {
        let (next, _) = riccati_step(a, c, sigma_w, sigma_v, &p)?;
        let change = (&*next - &*p).frobenius_norm();
        if !change.is_finite() {
            return Err(Error::NoSteadyState { iterations: it });
        }
        let settled = change <= DARE_TOL * (1.0 + p.frobenius_norm());
        p = next;
        if settled {
            let ct = c.transpose();
            let s = SymMatrix::symmetrize(&(&(&(c * &p) * &ct) + sigma_v));
            let l = &(&(a * &p) * &ct) * &inverse_spd(&s)?;
            if !(spectral_radius(&(a - &(&l * c))) < 1.0) {
                return Err(Error::NoSteadyState { iterations: it });
            }
            return Ok(DareSolution { p, l, iterations: it });
        }
    }
    Err(Error::NoSteadyState {
        iterations: DARE_MAX_ITER,
    })
}

/// Relative residual of the Riccati equation at `p`.
pub fn dare_residual(a: &Matrix, c: &Matrix, sigma_w: &SymMatrix, sigma_v: &SymMatrix, p: &SymMatrix) -> Result<f64> {
    let (next, _) = riccati_step(a, c, sigma_w, sigma_v, p)?;
    Ok((&*next - &**p).frobenius_norm() / (1.0 + p.frobenius_norm()))
}

/// Steady-state residual statistics.
#[derive(Debug, Clone)]
pub struct ResidualModel {
    pub p: SymMatrix,
    pub sigma_r: SymMatrix,
    pub sigma_r_inv: SymMatrix,
    pub sigma_r_sqrt: SymMatrix,
}

impl ResidualModel {
    pub fn from_error_covariance(c: &Matrix, p: SymMatrix, sigma_v: &SymMatrix) -> Result<Self> {
        let sigma_r = SymMatrix::symmetrize(&(&p.congruence(c).into_matrix() + sigma_v));
        let sigma_r_inv = inverse_spd(&sigma_r)?;
        let sigma_r_sqrt = sqrt_psd(&sigma_r)?;
        Ok(Self {
            p,
            sigma_r,
            sigma_r_inv,
            sigma_r_sqrt,
        })
    }

    pub fn p_dim(&self) -> usize {
        self.sigma_r.dim()
    }
}

/// `Σ_r = C P C^T + Σ_v` with `P` from the Riccati equation.
pub fn residual_model(sys: &LtiSystem) -> Result<ResidualModel> {
    let dare = solve_dare(&sys.a, &sys.c, &sys.sigma_w, &sys.sigma_v)?;
    ResidualModel::from_error_covariance(&sys.c, dare.p, &sys.sigma_v)
}

/// Joint `ξ = (x, e)` dynamics under the zero-alarm attack, driven by
/// `ζ = (w, δ̄)`: `ξ_{t+1} = Â ξ_t + B̂ ζ_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSystem {
    pub a_hat: Matrix,
    pub b_hat: Matrix,
    n: usize,
    p: usize,
}

impl JointSystem {
    /// Hand-assembled joint system: `a_hat` is `2n x 2n`, `b_hat` is
    /// `2n x (n + p)` with the process-noise columns first.
    pub fn from_parts(a_hat: Matrix, b_hat: Matrix, n: usize, p: usize) -> Result<Self> {
        if (a_hat.rows(), a_hat.cols()) != (2 * n, 2 * n) {
            return invalid(format!("A_hat must be {0}x{0}", 2 * n));
        }
        if (b_hat.rows(), b_hat.cols()) != (2 * n, n + p) {
            return invalid(format!("B_hat must be {}x{}", 2 * n, n + p));
        }
        Ok(Self { a_hat, b_hat, n, p })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn state_dim(&self) -> usize {
        2 * self.n
    }

    pub fn input_dim(&self) -> usize {
        self.n + self.p
    }

    /// Columns of `B̂` multiplying `w`.
    pub fn noise_gain(&self) -> Matrix {
        self.b_hat.block(0, 0, 2 * self.n, self.n)
    }

    /// Columns of `B̂` multiplying `δ̄`.
    pub fn attack_gain(&self) -> Matrix {
        self.b_hat.block(0, self.n, 2 * self.n, self.p)
    }

    pub fn spectral_radius(&self) -> f64 {
        spectral_radius(&self.a_hat)
    }

    pub fn step(&self, xi: &[f64], w: &[f64], delta_bar: &[f64]) -> Vec<f64> {
        let mut zeta = Vec::with_capacity(self.input_dim());
        zeta.extend_from_slice(w);
        zeta.extend_from_slice(delta_bar);
        let mut out = self.a_hat.matvec(xi);
        for (o, b) in out.iter_mut().zip(self.b_hat.matvec(&zeta)) {
            *o += b;
        }
        out
    }
}

/// `Â = [[A+BK, −BK], [0, A]]`, `B̂ = [[I, 0], [I, −L Σ_r^{1/2}]]`.
pub fn joint_system(sys: &LtiSystem, rm: &ResidualModel) -> Result<JointSystem> {
    let (n, p) = (sys.n(), sys.p());
    if rm.sigma_r_sqrt.dim() != p || rm.p.dim() != n {
        return invalid("joint_system: residual model does not match the plant dimensions");
    }
    let bk = &sys.b * &sys.k;
    let top_left = &sys.a + &bk;
    let top_right = -&bk;
    let eye = Matrix::identity(n);
    let l_sqrt = -&(&sys.l * &*rm.sigma_r_sqrt);
    let a_hat = Matrix::from_blocks(&[
        vec![Some(&top_left), Some(&top_right)],
        vec![None, Some(&sys.a)],
    ])?;
    let b_hat = Matrix::from_blocks(&[vec![Some(&eye), None], vec![Some(&eye), Some(&l_sqrt)]])?;
    JointSystem::from_parts(a_hat, b_hat, n, p)
}

/// Per-step record of a closed-loop simulation.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub x: Vec<Vec<f64>>,
    pub e: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub z: Vec<f64>,
    /// Normalized attack vector `δ̄_t`; empty when no attack is active.
    pub delta_bar: Vec<Vec<f64>>,
    /// Time indices with `z_t > threshold`.
    pub alarms: Vec<usize>,
}

/// Everything besides the plant needed to run one trajectory.
#[derive(Debug, Clone)]
pub struct SimulationSpec<'a> {
    pub noise_w: &'a NoiseSampler,
    pub noise_v: &'a NoiseSampler,
    pub attack: &'a AttackPolicy,
    /// Detector threshold used to flag alarms.
    pub threshold: f64,
    pub horizon: usize,
    pub seed: u64,
    /// Trajectory index; each index gets independent noise and attack streams.
    pub stream: u64,
}

/// Output of one [`ClosedLoop::step`], describing time `t` before the update.
#[derive(Debug, Clone, Copy)]
pub struct StepOutcome {
    pub z: f64,
    pub attacked: bool,
}

/// Mutable closed-loop state with preallocated scratch space.
pub struct ClosedLoop<'a> {
    sys: &'a LtiSystem,
    rm: &'a ResidualModel,
    pub x: Vec<f64>,
    pub x_hat: Vec<f64>,
    pub e: Vec<f64>,
    pub r: Vec<f64>,
    pub delta_bar: Vec<f64>,
    u: Vec<f64>,
    tmp_n: Vec<f64>,
}

impl<'a> ClosedLoop<'a> {
    /// Starts from `x_0 = x̂_0 = 0`.
    pub fn new(sys: &'a LtiSystem, rm: &'a ResidualModel) -> Self {
        let (n, m, p) = (sys.n(), sys.m(), sys.p());
        Self {
            sys,
            rm,
            x: vec![0.0; n],
            x_hat: vec![0.0; n],
            e: vec![0.0; n],
            r: vec![0.0; p],
            delta_bar: vec![0.0; p],
            u: vec![0.0; m],
            tmp_n: vec![0.0; n],
        }
    }

    pub fn step(&mut self, w: &[f64], v: &[f64], attack: &AttackPolicy, rng: &mut impl rand::Rng) -> StepOutcome {
        let sys = self.sys;
        for i in 0..self.e.len() {
            self.e[i] = self.x[i] - self.x_hat[i];
        }
        // r = C e + v + δ
        sys.c.matvec_into(&self.e, &mut self.r);
        for (ri, vi) in self.r.iter_mut().zip(v) {
            *ri += vi;
        }
        let attacked = match attack.attack_input(
            &AttackContext {
                x: &self.x,
                e: &self.e,
                v,
            },
            sys,
            self.rm,
            rng,
        ) {
            Some(out) => {
                for (ri, di) in self.r.iter_mut().zip(&out.delta) {
                    *ri += di;
                }
                self.delta_bar.copy_from_slice(&out.delta_bar);
                true
            }
            None => false,
        };
        let z = self.rm.sigma_r_inv.quad_form(&self.r);

        sys.k.matvec_into(&self.x_hat, &mut self.u);
        // x' = A x + B u + w
        sys.a.matvec_into(&self.x, &mut self.tmp_n);
        let bu = sys.b.matvec(&self.u);
        for i in 0..self.x.len() {
            self.x[i] = self.tmp_n[i] + bu[i] + w[i];
        }
        // x̂' = A x̂ + B u + L r
        sys.a.matvec_into(&self.x_hat, &mut self.tmp_n);
        let lr = sys.l.matvec(&self.r);
        for i in 0..self.x_hat.len() {
            self.x_hat[i] = self.tmp_n[i] + bu[i] + lr[i];
        }
        StepOutcome { z, attacked }
    }
}

/// Runs one trajectory from `x_0 = x̂_0 = 0` and records every step.
pub fn simulate(sys: &LtiSystem, rm: &ResidualModel, spec: &SimulationSpec<'_>) -> Result<Trace> {
    if spec.horizon == 0 {
        return invalid("horizon must be at least 1");
    }
    if spec.noise_w.dim() != sys.n() || spec.noise_v.dim() != sys.p() {
        return invalid("noise sampler dimensions do not match the plant");
    }
    let mut w_stream = spec.noise_w.stream(spec.seed, 3 * spec.stream);
    let mut v_stream = spec.noise_v.stream(spec.seed, 3 * spec.stream + 1);
    let mut attack_rng = stream_rng(spec.seed, 3 * spec.stream + 2);
    let mut w = vec![0.0; sys.n()];
    let mut v = vec![0.0; sys.p()];

    let mut cl = ClosedLoop::new(sys, rm);
    let mut trace = Trace::default();
    for t in 0..spec.horizon {
        w_stream.next_into(&mut w);
        v_stream.next_into(&mut v);
        let x_t = cl.x.clone();
        let out = cl.step(&w, &v, spec.attack, &mut attack_rng);
        trace.x.push(x_t);
        trace.e.push(cl.e.clone());
        trace.w.push(w.clone());
        trace.r.push(cl.r.clone());
        trace.z.push(out.z);
        if out.attacked {
            trace.delta_bar.push(cl.delta_bar.clone());
        }
        if out.z > spec.threshold {
            trace.alarms.push(t);
        }
    }
    Ok(trace)
}

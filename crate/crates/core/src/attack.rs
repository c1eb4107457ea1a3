//! Zero-alarm sensor attacks.
//!
//! The attacker sees the true estimation error and sensor noise and injects
//! `δ_t = −C e_t − v_t + Σ_r^{1/2} δ̄_t`, which turns the residual into
//! `r_t = Σ_r^{1/2} δ̄_t` and the distance measure into `z_t = δ̄_tᵀ δ̄_t`.
//! Keeping `‖δ̄_t‖² ≤ α` therefore never trips the detector.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};
use crate::matcore::{dot, norm2, sym_eig, SymMatrix};
#[cfg(test)]
use crate::matcore::Matrix;
use crate::reachset::Ellipsoid;
use crate::system::{JointSystem, LtiSystem, ResidualModel};

/// Relative shrink applied to `‖δ̄‖`.
pub const BUDGET_BACKOFF: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum DirectionStrategy {
    /// Always the same unit direction.
    FixedUnit(Vec<f64>),
    /// Fresh uniform direction on the unit sphere each step.
    UniformSphere,
    /// One-step greedy growth of the joint state, optionally measured in the
    /// metric of a hint ellipsoid over `ξ = (x, e)`.
    GreedyAligned {
        joint: JointSystem,
        hint: Option<Ellipsoid>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    None,
    ZeroAlarm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackPolicy {
    pub kind: AttackKind,
    pub alpha: f64,
    pub direction: DirectionStrategy,
    /// `‖δ̄‖ = radius_fraction · √α`, up to [`BUDGET_BACKOFF`]; 1 rides the
    /// detector boundary.
    pub radius_fraction: f64,
}

/// What the attacker observes at time `t`.
#[derive(Debug, Clone, Copy)]
pub struct AttackContext<'a> {
    pub x: &'a [f64],
    pub e: &'a [f64],
    pub v: &'a [f64],
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutput {
    pub delta: Vec<f64>,
    pub delta_bar: Vec<f64>,
}

impl AttackPolicy {
    pub fn none() -> Self {
        Self {
            kind: AttackKind::None,
            alpha: 1.0,
            direction: DirectionStrategy::UniformSphere,
            radius_fraction: 0.0,
        }
    }

    pub fn zero_alarm(alpha: f64, direction: DirectionStrategy) -> Result<Self> {
        Self::zero_alarm_scaled(alpha, direction, 1.0)
    }

    pub fn zero_alarm_scaled(alpha: f64, direction: DirectionStrategy, radius_fraction: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return invalid(format!("attack budget alpha must be positive, got {alpha}"));
        }
        if !(0.0..=1.0).contains(&radius_fraction) {
            return invalid(format!("radius fraction must be in [0, 1], got {radius_fraction}"));
        }
        if let DirectionStrategy::FixedUnit(u) = &direction {
            let nrm = norm2(u);
            if (nrm - 1.0).abs() > 1e-9 {
                return invalid(format!("fixed attack direction must be a unit vector (norm {nrm})"));
            }
        }
        Ok(Self {
            kind: AttackKind::ZeroAlarm,
            alpha,
            direction,
            radius_fraction,
        })
    }

    /// Sensor injection for this step, or `None` when the policy is inactive.
    pub fn attack_input(
        &self,
        ctx: &AttackContext<'_>,
        sys: &LtiSystem,
        rm: &ResidualModel,
        rng: &mut impl Rng,
    ) -> Option<AttackOutput> {
        if self.kind == AttackKind::None {
            return None;
        }
        let p = sys.p();
        let mut u = match &self.direction {
            DirectionStrategy::FixedUnit(u) => u.clone(),
            DirectionStrategy::UniformSphere => uniform_unit(p, rng),
            DirectionStrategy::GreedyAligned { joint, hint } => {
                let mut xi = ctx.x.to_vec();
                xi.extend_from_slice(ctx.e);
                greedy_direction(joint, hint.as_ref(), &xi, self.alpha)
            }
        };
        // guard the budget against round-off in the direction's norm
        let nrm = norm2(&u);
        if nrm > 1.0 {
            u.iter_mut().for_each(|v| *v /= nrm);
        }
        // back off by a relative 1e-9 so round-off in r never lifts z above α
        let radius = self.radius_fraction * self.alpha.sqrt() * (1.0 - BUDGET_BACKOFF);
        let delta_bar: Vec<f64> = u.iter().map(|v| v * radius).collect();
        let shaped = rm.sigma_r_sqrt.matvec(&delta_bar);
        let ce = sys.c.matvec(ctx.e);
        let delta = (0..p).map(|i| -ce[i] - ctx.v[i] + shaped[i]).collect();
        Some(AttackOutput { delta, delta_bar })
    }
}

fn uniform_unit(p: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        let nrm = norm2(&g);
        if nrm > 1e-300 {
            return g.into_iter().map(|v| v / nrm).collect();
        }
    }
}

/// Unit direction `u` maximizing `‖Â ξ + √α B̂_δ u‖²_W` over a candidate set:
/// `±` the linear-term direction and `±` each principal direction of the
/// quadratic term. `W` is the inverse shape matrix of `hint`, or the identity.
pub fn greedy_direction(joint: &JointSystem, hint: Option<&Ellipsoid>, xi: &[f64], alpha: f64) -> Vec<f64> {
    let p = joint.p();
    let gain = joint.attack_gain();
    let drift = joint.a_hat.matvec(xi);
    let weight: SymMatrix = match hint {
        Some(e) => e.inverse_shape().clone(),
        None => SymMatrix::identity(joint.state_dim()),
    };
    let scale = alpha.max(0.0).sqrt();

    let wg = weight.as_matrix() * &gain;
    let quad = SymMatrix::symmetrize(&(&gain.transpose() * &wg));
    let lin = wg.transpose().matvec(&drift);

    let objective = |u: &[f64]| -> f64 {
        let step: Vec<f64> = gain.matvec(u).iter().zip(&drift).map(|(g, d)| d + scale * g).collect();
        weight.quad_form(&step)
    };

    let mut candidates: Vec<Vec<f64>> = Vec::new();
    let lin_norm = norm2(&lin);
    if lin_norm > 0.0 {
        candidates.push(lin.iter().map(|v| v / lin_norm).collect());
    }
    if let Ok(eig) = sym_eig(&quad) {
        for k in 0..p {
            if eig.values[k] > 0.0 {
                let mut v = eig.vectors.col(k);
                if dot(&v, &lin) < 0.0 {
                    v.iter_mut().for_each(|c| *c = -*c);
                }
                candidates.push(v);
            }
        }
    }
    if candidates.is_empty() {
        let mut e1 = vec![0.0; p];
        e1[0] = 1.0;
        return e1;
    }
    let mut best = candidates[0].clone();
    let mut best_val = f64::NEG_INFINITY;
    for cand in candidates {
        for sign in [1.0, -1.0] {
            let u: Vec<f64> = cand.iter().map(|c| sign * c).collect();
            let val = objective(&u);
            if val > best_val {
                best_val = val;
                best = u;
            }
        }
    }
    best
}

//! Quadratic distance measure, alarm rule, and threshold tuning.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ambiguity::{stream_rng, NoiseSampler};
use crate::attack::AttackPolicy;
use crate::error::{invalid, Result};
use crate::matcore::SymMatrix;
use crate::special::gamma_p_inv;
use crate::system::{ClosedLoop, LtiSystem, ResidualModel};

/// Steps discarded at the start of every Monte-Carlo trajectory.
pub const DEFAULT_BURN_IN: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tuning {
    ChiSquared,
    #[serde(alias = "dr")]
    DistributionallyRobust,
}

impl Tuning {
    pub fn threshold(self, p: usize, target_rate: f64) -> Result<f64> {
        match self {
            Tuning::ChiSquared => tune_chi_squared(p, target_rate),
            Tuning::DistributionallyRobust => tune_dr(p, target_rate),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Tuning::ChiSquared => "chi-squared",
            Tuning::DistributionallyRobust => "distributionally-robust",
        }
    }
}

#[derive(Debug, Clone)]
pub struct DetectorConfig {
    pub sigma_r_inv: SymMatrix,
    pub alpha: f64,
    pub tuning: Tuning,
    pub target_rate: f64,
}

impl DetectorConfig {
    pub fn tuned(rm: &ResidualModel, tuning: Tuning, target_rate: f64) -> Result<Self> {
        let alpha = tuning.threshold(rm.p_dim(), target_rate)?;
        Ok(Self {
            sigma_r_inv: rm.sigma_r_inv.clone(),
            alpha,
            tuning,
            target_rate,
        })
    }

    /// `z > α` raises an alarm; `z ≤ α` does not.
    pub fn is_alarm(&self, z: f64) -> bool {
        z > self.alpha
    }
}

/// `z = rᵀ Σ_r⁻¹ r`.
pub fn distance_measure(r: &[f64], sigma_r_inv: &SymMatrix) -> Result<f64> {
    if r.len() != sigma_r_inv.dim() {
        return invalid(format!(
            "residual has length {}, expected {}",
            r.len(),
            sigma_r_inv.dim()
        ));
    }
    Ok(sigma_r_inv.quad_form(r).max(0.0))
}

fn check_outputs(p: usize) -> Result<()> {
    if p == 0 {
        return invalid("number of outputs must be at least 1");
    }
    Ok(())
}

/// Threshold with `P(χ²_p > α) = target_rate`, i.e. `α = 2 P⁻¹(1 − 𝒜, p/2)`.
pub fn tune_chi_squared(p: usize, target_rate: f64) -> Result<f64> {
    check_outputs(p)?;
    if !(target_rate > 0.0 && target_rate < 1.0) {
        return invalid(format!("target false-alarm rate must be in (0, 1), got {target_rate}"));
    }
    Ok(2.0 * gamma_p_inv(p as f64 / 2.0, 1.0 - target_rate)?)
}

/// Distribution-free threshold `α = p / 𝒜` from the generalized Chebyshev
/// bound `sup P(rᵀΣ_r⁻¹r ≥ α) ≤ p / α` over zero-mean, covariance-`Σ_r`
/// residual distributions.
pub fn tune_dr(p: usize, target_rate: f64) -> Result<f64> {
    check_outputs(p)?;
    if !(target_rate > 0.0 && target_rate <= 1.0) {
        return invalid(format!("target false-alarm rate must be in (0, 1], got {target_rate}"));
    }
    Ok(p as f64 / target_rate)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FalseAlarmEstimate {
    pub rate: f64,
    /// Number of counted (post burn-in) time steps.
    pub trials: usize,
    pub alarms: usize,
    pub ci95_halfwidth: f64,
}

impl FalseAlarmEstimate {
    pub fn from_counts(alarms: usize, trials: usize) -> Self {
        let rate = if trials == 0 { 0.0 } else { alarms as f64 / trials as f64 };
        Self {
            rate,
            trials,
            alarms,
            ci95_halfwidth: 1.96 * Self::standard_error_at(rate, trials),
        }
    }

    pub fn from_samples(z: &[f64], alpha: f64) -> Self {
        Self::from_counts(z.iter().filter(|&&v| v > alpha).count(), z.len())
    }

    /// Binomial standard error of a rate `q` measured over `trials` samples.
    pub fn standard_error_at(q: f64, trials: usize) -> f64 {
        if trials == 0 {
            return 0.0;
        }
        (q * (1.0 - q) / trials as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloPlan {
    /// Independent trajectories.
    pub trials: usize,
    /// Counted steps per trajectory, after burn-in.
    pub horizon: usize,
    pub burn_in: usize,
    pub seed: u64,
}

impl MonteCarloPlan {
    pub fn new(trials: usize, horizon: usize, seed: u64) -> Self {
        Self {
            trials,
            horizon,
            burn_in: DEFAULT_BURN_IN,
            seed,
        }
    }

    pub fn samples(&self) -> usize {
        self.trials * self.horizon
    }
}

/// Attack-free steady-state distance measures, trajectory by trajectory in
/// trial order. Each trial owns its streams, so the result does not depend on
/// how the trials are scheduled across threads.
pub fn steady_state_distances(
    sys: &LtiSystem,
    rm: &ResidualModel,
    sampler_v: &NoiseSampler,
    sampler_w: &NoiseSampler,
    plan: &MonteCarloPlan,
) -> Result<Vec<f64>> {
    if plan.trials == 0 || plan.horizon == 0 {
        return invalid("Monte-Carlo plan needs at least one trial and one step");
    }
    if sampler_w.dim() != sys.n() || sampler_v.dim() != sys.p() {
        return invalid("noise sampler dimensions do not match the plant");
    }
    let none = AttackPolicy::none();
    let per_trial: Vec<Vec<f64>> = (0..plan.trials as u64)
        .into_par_iter()
        .map(|trial| {
            let mut w_stream = sampler_w.stream(plan.seed, 3 * trial);
            let mut v_stream = sampler_v.stream(plan.seed, 3 * trial + 1);
            let mut rng = stream_rng(plan.seed, 3 * trial + 2);
            let mut w = vec![0.0; sys.n()];
            let mut v = vec![0.0; sys.p()];
            let mut cl = ClosedLoop::new(sys, rm);
            let mut out = Vec::with_capacity(plan.horizon);
            for t in 0..plan.burn_in + plan.horizon {
                w_stream.next_into(&mut w);
                v_stream.next_into(&mut v);
                let step = cl.step(&w, &v, &none, &mut rng);
                if t >= plan.burn_in {
                    out.push(step.z);
                }
            }
            out
        })
        .collect();
    Ok(per_trial.into_iter().flatten().collect())
}

/// Fraction of attack-free steady-state steps with `z_t > α`.
pub fn estimate_false_alarm_rate(
    sys: &LtiSystem,
    rm: &ResidualModel,
    config: &DetectorConfig,
    sampler_v: &NoiseSampler,
    sampler_w: &NoiseSampler,
    plan: &MonteCarloPlan,
) -> Result<FalseAlarmEstimate> {
    if plan.samples() < 10_000 {
        return invalid(format!(
            "trials * horizon must be at least 10^4, got {}",
            plan.samples()
        ));
    }
    let z = steady_state_distances(sys, rm, sampler_v, sampler_w, plan)?;
    Ok(FalseAlarmEstimate::from_samples(&z, config.alpha))
}

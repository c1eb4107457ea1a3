//! Moment-based ambiguity sets (zero mean, fixed covariance) and concrete
//! member distributions used to stress detectors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::error::{invalid, Result};
use crate::matcore::{inverse_spd, norm2, sqrt_psd, Matrix, SymMatrix};

/// Independent random stream for a `(seed, stream)` pair.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// All zero-mean distributions with a given covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentAmbiguitySet {
    covariance: SymMatrix,
}

impl MomentAmbiguitySet {
    pub fn new(covariance: SymMatrix) -> Result<Self> {
        // positive definiteness check
        inverse_spd(&covariance)?;
        Ok(Self { covariance })
    }

    pub fn dim(&self) -> usize {
        self.covariance.dim()
    }

    pub fn covariance(&self) -> &SymMatrix {
        &self.covariance
    }

    /// Worst case of `P(x^T Sigma^{-1} x >= threshold)` over the set.
    pub fn chebyshev_tail_bound(&self, threshold: f64) -> Result<f64> {
        chebyshev_tail_bound(self.dim(), threshold)
    }
}

/// Generalized Chebyshev bound `min(1, dim / threshold)`.
pub fn chebyshev_tail_bound(dim: usize, threshold: f64) -> Result<f64> {
    if !(threshold > 0.0) || !threshold.is_finite() {
        return invalid(format!("threshold must be positive and finite, got {threshold}"));
    }
    Ok((dim as f64 / threshold).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseFamily {
    /// Degenerate all-zero noise. Not a member of any ambiguity set.
    Zero,
    Gaussian,
    /// Multivariate Student's t rescaled so its covariance equals the target.
    StudentT { nu: f64 },
    /// Uniform on `{x : x^T Sigma^{-1} x = radius^2}`. A set member only when
    /// `radius^2 == dim`.
    UniformEllipsoidBoundary { radius: f64 },
    /// Two-component Gaussian scale mixture: with probability `heavy_weight`
    /// the covariance is `heavy_scale * Sigma`, otherwise the light scale that
    /// restores the total covariance.
    GaussianScaleMixture { heavy_weight: f64, heavy_scale: f64 },
    /// Mass `dim / level` spread uniformly on `x^T Sigma^{-1} x = level`, the
    /// rest at the origin. Attains the Chebyshev bound at `level`.
    ChebyshevExtremal { level: f64 },
}

impl NoiseFamily {
    fn validate(&self, dim: usize) -> Result<()> {
        match *self {
            NoiseFamily::Zero | NoiseFamily::Gaussian => Ok(()),
            NoiseFamily::StudentT { nu } if !(nu > 2.0) || !nu.is_finite() => invalid(format!(
                "Student's t needs nu > 2 for a finite covariance, got {nu}"
            )),
            NoiseFamily::StudentT { .. } => Ok(()),
            NoiseFamily::UniformEllipsoidBoundary { radius } if !(radius >= 0.0) || !radius.is_finite() => {
                invalid(format!("ellipsoid radius must be non-negative, got {radius}"))
            }
            NoiseFamily::UniformEllipsoidBoundary { .. } => Ok(()),
            NoiseFamily::GaussianScaleMixture {
                heavy_weight,
                heavy_scale,
            } => {
                if !(heavy_weight > 0.0 && heavy_weight < 1.0) {
                    return invalid(format!("mixture weight must be in (0, 1), got {heavy_weight}"));
                }
                if !(heavy_scale > 0.0) || heavy_weight * heavy_scale >= 1.0 {
                    return invalid(format!(
                        "mixture needs 0 < heavy_weight * heavy_scale < 1, got {}",
                        heavy_weight * heavy_scale
                    ));
                }
                Ok(())
            }
            NoiseFamily::ChebyshevExtremal { level } => {
                if !(level >= dim as f64) || !level.is_finite() {
                    return invalid(format!("extremal level must be >= dim ({dim}), got {level}"));
                }
                Ok(())
            }
        }
    }
}

/// A concrete noise distribution targeting a moment ambiguity set.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    family: NoiseFamily,
    target: MomentAmbiguitySet,
    sqrt_cov: SymMatrix,
}

impl NoiseSampler {
    pub fn new(family: NoiseFamily, target: MomentAmbiguitySet) -> Result<Self> {
        family.validate(target.dim())?;
        let sqrt_cov = sqrt_psd(target.covariance())?;
        Ok(Self {
            family,
            target,
            sqrt_cov,
        })
    }

    pub fn gaussian(covariance: SymMatrix) -> Result<Self> {
        Self::new(NoiseFamily::Gaussian, MomentAmbiguitySet::new(covariance)?)
    }

    pub fn student_t(covariance: SymMatrix, nu: f64) -> Result<Self> {
        Self::new(NoiseFamily::StudentT { nu }, MomentAmbiguitySet::new(covariance)?)
    }

    pub fn family(&self) -> NoiseFamily {
        self.family
    }

    pub fn target(&self) -> &MomentAmbiguitySet {
        &self.target
    }

    pub fn dim(&self) -> usize {
        self.target.dim()
    }

    /// Whether samples have exactly the target's zero mean and covariance.
    pub fn is_ambiguity_member(&self) -> bool {
        match self.family {
            NoiseFamily::Zero => false,
            NoiseFamily::UniformEllipsoidBoundary { radius } => {
                (radius * radius - self.dim() as f64).abs() <= 1e-12 * self.dim() as f64
            }
            _ => true,
        }
    }

    pub fn stream(&self, seed: u64, stream: u64) -> NoiseStream<'_> {
        NoiseStream {
            sampler: self,
            rng: stream_rng(seed, stream),
            white: vec![0.0; self.dim()],
        }
    }

    /// `count x dim` matrix of draws from stream `(seed, stream)`.
    pub fn sample(&self, seed: u64, stream: u64, count: usize) -> Result<Matrix> {
        if count == 0 {
            return invalid("sample count must be at least 1");
        }
        let dim = self.dim();
        let mut gen = self.stream(seed, stream);
        let mut data = vec![0.0; count * dim];
        for row in data.chunks_mut(dim) {
            gen.next_into(row);
        }
        Matrix::new(count, dim, data)
    }
}

/// Seeded draw sequence from a [`NoiseSampler`].
pub struct NoiseStream<'a> {
    sampler: &'a NoiseSampler,
    rng: ChaCha8Rng,
    white: Vec<f64>,
}

impl NoiseStream<'_> {
    pub fn next_into(&mut self, out: &mut [f64]) {
        let dim = self.sampler.dim();
        assert_eq!(out.len(), dim);
        let scale = match self.sampler.family {
            NoiseFamily::Zero => {
                out.iter_mut().for_each(|v| *v = 0.0);
                return;
            }
            NoiseFamily::Gaussian => {
                self.fill_normal();
                1.0
            }
            NoiseFamily::StudentT { nu } => {
                self.fill_normal();
                let chi2: f64 = ChiSquared::new(nu).expect("validated nu").sample(&mut self.rng);
                ((nu - 2.0) / chi2).sqrt()
            }
            NoiseFamily::UniformEllipsoidBoundary { radius } => radius * self.fill_unit_direction(),
            NoiseFamily::GaussianScaleMixture {
                heavy_weight,
                heavy_scale,
            } => {
                let heavy = self.rng.random::<f64>() < heavy_weight;
                self.fill_normal();
                if heavy {
                    heavy_scale.sqrt()
                } else {
                    ((1.0 - heavy_weight * heavy_scale) / (1.0 - heavy_weight)).sqrt()
                }
            }
            NoiseFamily::ChebyshevExtremal { level } => {
                let on_shell = self.rng.random::<f64>() < dim as f64 / level;
                let r = self.fill_unit_direction();
                if on_shell {
                    level.sqrt() * r
                } else {
                    0.0
                }
            }
        };
        self.sampler.sqrt_cov.matvec_into(&self.white, out);
        if scale != 1.0 {
            out.iter_mut().for_each(|v| *v *= scale);
        }
    }

    pub fn next_vec(&mut self) -> Vec<f64> {
        let mut out = vec![0.0; self.sampler.dim()];
        self.next_into(&mut out);
        out
    }

    fn fill_normal(&mut self) {
        for v in self.white.iter_mut() {
            *v = self.rng.sample(StandardNormal);
        }
    }

    /// Fills `white` with a uniform unit direction; returns the multiplier to
    /// apply after the covariance transform (1 unless the draw degenerated).
    fn fill_unit_direction(&mut self) -> f64 {
        loop {
            self.fill_normal();
            let nrm = norm2(&self.white);
            if nrm > 1e-300 {
                self.white.iter_mut().for_each(|v| *v /= nrm);
                return 1.0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cov2() -> SymMatrix {
        SymMatrix::from_rows(&[[2.0, 0.3], [0.3, 1.0]]).unwrap()
    }

    #[test]
    fn tail_bound_examples() {
        assert_eq!(chebyshev_tail_bound(2, 40.0).unwrap(), 0.05);
        assert_eq!(chebyshev_tail_bound(2, 2.0).unwrap(), 1.0);
        assert!((chebyshev_tail_bound(3, 60.0).unwrap() - 0.05).abs() < 1e-17);
        assert!(chebyshev_tail_bound(2, 0.0).is_err());
        assert!(chebyshev_tail_bound(2, -1.0).is_err());
        let set = MomentAmbiguitySet::new(SymMatrix::identity(2)).unwrap();
        assert_eq!(set.chebyshev_tail_bound(40.0).unwrap(), 0.05);
    }

    #[test]
    fn student_t_requires_finite_covariance() {
        assert!(NoiseSampler::student_t(SymMatrix::identity(2), 2.0).is_err());
        assert!(NoiseSampler::student_t(SymMatrix::identity(2), 1.5).is_err());
        assert!(NoiseSampler::student_t(SymMatrix::identity(2), 2.5).is_ok());
    }

    #[test]
    fn rejects_non_pd_target() {
        let singular = SymMatrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        assert!(MomentAmbiguitySet::new(singular).is_err());
    }

    #[test]
    fn single_draw_is_finite() {
        let families = [
            NoiseFamily::Gaussian,
            NoiseFamily::StudentT { nu: 5.0 },
            NoiseFamily::UniformEllipsoidBoundary { radius: 2f64.sqrt() },
            NoiseFamily::GaussianScaleMixture {
                heavy_weight: 0.1,
                heavy_scale: 5.0,
            },
            NoiseFamily::ChebyshevExtremal { level: 10.0 },
        ];
        for fam in families {
            let s = NoiseSampler::new(fam, MomentAmbiguitySet::new(cov2()).unwrap()).unwrap();
            let m = s.sample(3, 0, 1).unwrap();
            assert_eq!((m.rows(), m.cols()), (1, 2));
            assert!(m.as_slice().iter().all(|v| v.is_finite()));
        }
        let s = NoiseSampler::gaussian(cov2()).unwrap();
        assert!(s.sample(1, 0, 0).is_err());
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let s = NoiseSampler::student_t(cov2(), 5.0).unwrap();
        let a = s.sample(11, 4, 500).unwrap();
        let b = s.sample(11, 4, 500).unwrap();
        let c = s.sample(11, 5, 500).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
        assert_ne!(a.as_slice(), c.as_slice());
    }

    #[test]
    fn boundary_samples_lie_on_shell() {
        let set = MomentAmbiguitySet::new(cov2()).unwrap();
        let inv = inverse_spd(set.covariance()).unwrap();
        let s = NoiseSampler::new(NoiseFamily::UniformEllipsoidBoundary { radius: 3.0 }, set).unwrap();
        assert!(!s.is_ambiguity_member());
        let m = s.sample(2, 0, 200).unwrap();
        for i in 0..m.rows() {
            assert!((inv.quad_form(m.row(i)) - 9.0).abs() < 1e-10);
        }
    }

    #[test]
    fn mixture_rejects_overweight_heavy_component() {
        let set = MomentAmbiguitySet::new(cov2()).unwrap();
        let fam = NoiseFamily::GaussianScaleMixture {
            heavy_weight: 0.5,
            heavy_scale: 2.0,
        };
        assert!(NoiseSampler::new(fam, set).is_err());
    }
}

//! Diagonal-Gaussian posteriors: reparameterized sampling, closed-form KL
//! to the standard normal, Gaussian log-density, and product-of-experts
//! fusion with a standard-normal prior expert.

use alloc::vec::Vec;

use crate::tensor::Tensor;
use crate::{Error, Result};

/// Log-variance clamp applied at construction; keeps precisions finite
/// through product-of-experts fusion.
pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

/// ln(2π)
pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Per-sample diagonal Gaussian given by mean and log-variance (N × d).
#[derive(Debug, Clone)]
pub struct DiagGaussian {
    mean: Tensor,
    logvar: Tensor,
}

impl DiagGaussian {
    /// Build a posterior; shapes must match. Log-variances are clamped
    /// into [-10, 10].
    pub fn new(mean: Tensor, logvar: Tensor) -> Result<Self> {
        if mean.shape() != logvar.shape() {
            return Err(Error::ShapeMismatch {
                op: "diag_gaussian",
                left: mean.shape(),
                right: logvar.shape(),
            });
        }
        let logvar = logvar.clamp(LOGVAR_MIN, LOGVAR_MAX);
        Ok(DiagGaussian { mean, logvar })
    }

    /// The standard normal N(0, I) as a constant (off-tape) posterior.
    pub fn standard(rows: usize, cols: usize) -> Self {
        DiagGaussian {
            mean: Tensor::zeros(rows, cols),
            logvar: Tensor::zeros(rows, cols),
        }
    }

    pub fn mean(&self) -> &Tensor {
        &self.mean
    }

    pub fn logvar(&self) -> &Tensor {
        &self.logvar
    }

    pub fn shape(&self) -> (usize, usize) {
        self.mean.shape()
    }

    /// Reparameterized draw: mean + exp(logvar/2) ⊙ noise.
    ///
    /// `noise` is expected to be standard-normal and off-tape; the result
    /// is differentiable w.r.t. mean and logvar.
    pub fn sample(&self, noise: &Tensor) -> Result<Tensor> {
        if noise.shape() != self.mean.shape() {
            return Err(Error::ShapeMismatch {
                op: "sample_reparam",
                left: self.mean.shape(),
                right: noise.shape(),
            });
        }
        let std = self.logvar.scale(0.5).exp();
        self.mean.add(&std.mul(noise)?)
    }

    /// Per-sample KL(q ‖ N(0, I)) as N × 1: ½ Σ_d (μ² + σ² − 1 − log σ²).
    pub fn kl_to_standard(&self) -> Result<Tensor> {
        let mu2 = self.mean.mul(&self.mean)?;
        let var = self.logvar.exp();
        let inner = mu2.add(&var)?.add_scalar(-1.0).sub(&self.logvar)?;
        Ok(inner.sum_rows().scale(0.5))
    }
}

/// Per-sample Gaussian log-density, summed over features, as N × 1.
///
/// `logvar` is either shaped like `x` or a 1 × D row shared across rows
/// (the per-feature likelihood variance of a decoder).
pub fn gaussian_log_prob(x: &Tensor, mean: &Tensor, logvar: &Tensor) -> Result<Tensor> {
    if x.shape() != mean.shape() {
        return Err(Error::ShapeMismatch {
            op: "gaussian_log_prob",
            left: x.shape(),
            right: mean.shape(),
        });
    }
    if logvar.cols() != x.cols() || (logvar.rows() != x.rows() && logvar.rows() != 1) {
        return Err(Error::ShapeMismatch {
            op: "gaussian_log_prob",
            left: x.shape(),
            right: logvar.shape(),
        });
    }
    let d = x.cols() as f64;
    let diff = x.sub(mean)?;
    let quad = diff.mul(&diff)?.mul(&logvar.neg().exp())?.sum_rows().scale(-0.5);
    // −½ Σ_d logvar_d, broadcast to every sample when logvar is a row
    let logdet = if logvar.rows() == 1 {
        let s = logvar.sum_all().scale(-0.5);
        quad.add(&s)?
    } else {
        quad.add(&logvar.sum_rows().scale(-0.5))?
    };
    Ok(logdet.add_scalar(-0.5 * d * LN_2PI))
}

/// Precision-weighted product-of-experts fusion.
///
/// With the prior expert included the fused precision is 1 + Σᵢ 1/σᵢ²
/// and the prior contributes mean 0. An empty expert list is only valid
/// with the prior included (the result is then the standard normal of
/// the given shape).
pub fn poe_combine(
    experts: &[DiagGaussian],
    include_prior: bool,
    shape: (usize, usize),
) -> Result<DiagGaussian> {
    for e in experts {
        if e.shape() != shape {
            return Err(Error::ShapeMismatch {
                op: "poe_combine",
                left: shape,
                right: e.shape(),
            });
        }
    }
    let Some((first, rest)) = experts.split_first() else {
        if include_prior {
            return Ok(DiagGaussian::standard(shape.0, shape.1));
        }
        return Err(Error::EmptyExpertList);
    };

    let precisions: Vec<Tensor> = experts.iter().map(|e| e.logvar.neg().exp()).collect();
    let mut prec_sum = precisions[0].clone();
    for p in &precisions[1..] {
        prec_sum = prec_sum.add(p)?;
    }
    let total = if include_prior {
        prec_sum.add_scalar(1.0)
    } else {
        prec_sum
    };
    let fused_logvar = total.log().neg();

    let mut weighted = first.mean.mul(&precisions[0])?;
    for (e, p) in rest.iter().zip(&precisions[1..]) {
        weighted = weighted.add(&e.mean.mul(p)?)?;
    }
    let fused_mean = weighted.mul(&fused_logvar.exp())?;
    DiagGaussian::new(fused_mean, fused_logvar)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, v: &[f64]) -> Tensor {
        Tensor::constant(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn sample_with_unit_variance_is_mean_plus_noise() {
        let q = DiagGaussian::new(Tensor::zeros(2, 3), Tensor::zeros(2, 3)).unwrap();
        let noise = t(2, 3, &[0.4, -1.1, 0.0, 2.2, -0.3, 0.9]);
        let z = q.sample(&noise).unwrap();
        assert_eq!(z.values(), noise.values());
    }

    #[test]
    fn sample_with_min_logvar_collapses_to_mean() {
        let mu = t(1, 2, &[3.0, -4.0]);
        let q = DiagGaussian::new(mu.clone(), Tensor::full(1, 2, -30.0)).unwrap();
        // construction clamps to -10, so std = e^{-5}
        let noise = t(1, 2, &[1.0, -1.0]);
        let z = q.sample(&noise).unwrap();
        for (zv, mv) in z.values().iter().zip(mu.values()) {
            assert!((zv - mv).abs() <= libm::exp(-5.0) * 1.0 + 1e-15);
        }
    }

    #[test]
    fn kl_zero_for_standard_half_for_unit_mean() {
        let q = DiagGaussian::standard(1, 1);
        assert_eq!(q.kl_to_standard().unwrap().item().unwrap(), 0.0);
        let q = DiagGaussian::new(t(1, 1, &[1.0]), t(1, 1, &[0.0])).unwrap();
        assert!((q.kl_to_standard().unwrap().item().unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn log_prob_at_mean_and_unit_offset() {
        let half_ln_2pi = 0.5 * LN_2PI;
        let lp = gaussian_log_prob(&t(1, 1, &[0.3]), &t(1, 1, &[0.3]), &t(1, 1, &[0.0]))
            .unwrap()
            .item()
            .unwrap();
        assert!((lp + half_ln_2pi).abs() < 1e-12);
        let lp = gaussian_log_prob(&t(1, 1, &[1.3]), &t(1, 1, &[0.3]), &t(1, 1, &[0.0]))
            .unwrap()
            .item()
            .unwrap();
        assert!((lp + half_ln_2pi + 0.5).abs() < 1e-12);
    }

    #[test]
    fn log_prob_batch_matches_scalar_cases() {
        let x = t(3, 1, &[0.1, -0.4, 2.0]);
        let mu = t(3, 1, &[0.0, 0.2, 1.5]);
        let lv = t(1, 1, &[0.3]);
        let batch = gaussian_log_prob(&x, &mu, &lv).unwrap();
        for r in 0..3 {
            let xi = t(1, 1, &[x.get(r, 0)]);
            let mi = t(1, 1, &[mu.get(r, 0)]);
            let single = gaussian_log_prob(&xi, &mi, &lv).unwrap().item().unwrap();
            assert!((batch.get(r, 0) - single).abs() < 1e-15);
        }
    }

    #[test]
    fn poe_single_expert_with_prior_halves_mean_and_variance() {
        let q = DiagGaussian::new(t(1, 1, &[1.0]), t(1, 1, &[0.0])).unwrap();
        let fused = poe_combine(&[q], true, (1, 1)).unwrap();
        assert!((fused.mean().item().unwrap() - 0.5).abs() < 1e-15);
        assert!((fused.logvar().item().unwrap() - libm::log(0.5)).abs() < 1e-15);
    }

    #[test]
    fn poe_prior_only_is_standard_normal() {
        let fused = poe_combine(&[], true, (2, 3)).unwrap();
        assert_eq!(fused.mean().values(), &[0.0; 6]);
        assert_eq!(fused.logvar().values(), &[0.0; 6]);
    }

    #[test]
    fn poe_empty_without_prior_is_error() {
        assert!(matches!(
            poe_combine(&[], false, (1, 1)),
            Err(Error::EmptyExpertList)
        ));
    }

    #[test]
    fn poe_two_experts_is_order_invariant() {
        let a = DiagGaussian::new(t(1, 2, &[0.7, -0.3]), t(1, 2, &[0.4, -1.0])).unwrap();
        let b = DiagGaussian::new(t(1, 2, &[-1.2, 0.9]), t(1, 2, &[-0.2, 0.8])).unwrap();
        let ab = poe_combine(&[a.clone(), b.clone()], true, (1, 2)).unwrap();
        let ba = poe_combine(&[b, a], true, (1, 2)).unwrap();
        assert_eq!(ab.mean().values(), ba.mean().values());
        assert_eq!(ab.logvar().values(), ba.logvar().values());
    }

    #[test]
    fn poe_precision_adds_and_variance_shrinks() {
        let a = DiagGaussian::new(t(1, 1, &[0.5]), t(1, 1, &[0.6])).unwrap();
        let b = DiagGaussian::new(t(1, 1, &[-0.5]), t(1, 1, &[-0.4])).unwrap();
        let fused = poe_combine(&[a.clone(), b.clone()], true, (1, 1)).unwrap();
        let prec = |q: &DiagGaussian| libm::exp(-q.logvar().item().unwrap());
        let expected = 1.0 + prec(&a) + prec(&b);
        assert!((prec(&fused) - expected).abs() < 1e-12);
        let var = |q: &DiagGaussian| libm::exp(q.logvar().item().unwrap());
        assert!(var(&fused) <= var(&a).min(var(&b)));
    }

    #[test]
    fn construction_requires_matching_shapes() {
        assert!(matches!(
            DiagGaussian::new(Tensor::zeros(2, 3), Tensor::zeros(2, 4)),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}

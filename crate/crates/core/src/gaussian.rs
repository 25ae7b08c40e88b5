//! Diagonal Gaussian algebra.
//!
//! [`DiagGaussian`] is the plain-value form used for analysis and tests;
//! [`GaussianVar`] is the batched form living on a [`Graph`], whose rows are
//! independent samples.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};

/// `0.5 * ln(2π)`.
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// A diagonal Gaussian parameterized by mean and log-variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, log_var: Vec<f64>) -> Result<Self> {
        if mean.len() != log_var.len() {
            return Err(Error::shape("diag_gaussian", &[mean.len()], &[log_var.len()]));
        }
        if log_var.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("log-variance must be finite".into()));
        }
        Ok(Self { mean, log_var })
    }

    /// `N(0, I)` in `dim` dimensions.
    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            log_var: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, op: &'static str, other: usize) -> Result<()> {
        if self.dim() != other {
            return Err(Error::shape(op, &[self.dim()], &[other]));
        }
        Ok(())
    }
}

/// Closed-form `KL(q ‖ p)`.
pub fn kl_divergence(q: &DiagGaussian, p: &DiagGaussian) -> Result<f64> {
    q.check("kl_divergence", p.dim())?;
    let mut kl = 0.0;
    for d in 0..q.dim() {
        let (mq, lq, mp, lp) = (q.mean[d], q.log_var[d], p.mean[d], p.log_var[d]);
        let diff = mp - mq;
        kl += 0.5 * ((lq - lp).exp() + diff * diff * (-lp).exp() - 1.0 + lp - lq);
    }
    Ok(kl.max(0.0))
}

/// `KL(q ‖ N(0, I))`.
pub fn kl_to_standard(q: &DiagGaussian) -> f64 {
    q.mean
        .iter()
        .zip(&q.log_var)
        .map(|(m, lv)| 0.5 * (lv.exp() + m * m - 1.0 - lv))
        .sum::<f64>()
        .max(0.0)
}

/// Reparameterized draw `mean + exp(log_var / 2) ⊙ eps`.
pub fn sample_reparam(q: &DiagGaussian, eps: &[f64]) -> Result<Vec<f64>> {
    q.check("sample_reparam", eps.len())?;
    Ok(q.mean
        .iter()
        .zip(&q.log_var)
        .zip(eps)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect())
}

/// Full log-density of `x` under `q`, normalizing constant included.
pub fn log_prob(x: &[f64], q: &DiagGaussian) -> Result<f64> {
    q.check("log_prob", x.len())?;
    Ok(x.iter()
        .zip(&q.mean)
        .zip(&q.log_var)
        .map(|((x, m), lv)| -HALF_LN_2PI - 0.5 * lv - 0.5 * (x - m) * (x - m) * (-lv).exp())
        .sum())
}

/// `exp(-‖mu − mu'‖² / 2)`.
pub fn rbf_kernel(mu: &[f64], mu_prime: &[f64]) -> Result<f64> {
    if mu.len() != mu_prime.len() {
        return Err(Error::shape("rbf_kernel", &[mu.len()], &[mu_prime.len()]));
    }
    let sq: f64 = mu.iter().zip(mu_prime).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((-0.5 * sq).exp())
}

/// A batch of diagonal Gaussians on a graph: `mean`, `log_var` are `[B, D]`.
#[derive(Clone, Copy, Debug)]
pub struct GaussianVar {
    pub mean: Var,
    pub log_var: Var,
}

impl GaussianVar {
    pub fn dim(&self, g: &Graph) -> usize {
        g.shape(self.mean)[1]
    }

    pub fn batch(&self, g: &Graph) -> usize {
        g.shape(self.mean)[0]
    }

    /// Row `row` as a plain [`DiagGaussian`].
    pub fn row(&self, g: &Graph, row: usize) -> DiagGaussian {
        let d = self.dim(g);
        DiagGaussian {
            mean: g.value(self.mean).data()[row * d..(row + 1) * d].to_vec(),
            log_var: g.value(self.log_var).data()[row * d..(row + 1) * d].to_vec(),
        }
    }
}

/// Per-row `KL(q ‖ N(0, I))` as a `[B, 1]` tensor.
pub fn kl_to_standard_var(g: &mut Graph, q: GaussianVar) -> Result<Var> {
    let var = g.exp(q.log_var)?;
    let m2 = g.mul(q.mean, q.mean)?;
    let a = g.add(var, m2)?;
    let b = g.sub(a, q.log_var)?;
    let c = g.add_scalar(b, -1.0)?;
    let s = g.sum_last(c)?;
    g.scale(s, 0.5)
}

/// Per-row `KL(q ‖ p)` as a `[B, 1]` tensor.
pub fn kl_divergence_var(g: &mut Graph, q: GaussianVar, p: GaussianVar) -> Result<Var> {
    if g.shape(q.mean) != g.shape(p.mean) {
        return Err(Error::shape("kl_divergence", g.shape(q.mean), g.shape(p.mean)));
    }
    let lv_diff = g.sub(q.log_var, p.log_var)?;
    let ratio = g.exp(lv_diff)?;
    let dm = g.sub(p.mean, q.mean)?;
    let dm2 = g.mul(dm, dm)?;
    let neg_lp = g.scale(p.log_var, -1.0)?;
    let inv_p = g.exp(neg_lp)?;
    let maha = g.mul(dm2, inv_p)?;
    let a = g.add(ratio, maha)?;
    let b = g.sub(a, lv_diff)?;
    let c = g.add_scalar(b, -1.0)?;
    let s = g.sum_last(c)?;
    g.scale(s, 0.5)
}

/// Reparameterized batch draw with constant noise `eps: [B, D]`.
pub fn sample_reparam_var(g: &mut Graph, q: GaussianVar, eps: Var) -> Result<Var> {
    if g.shape(eps) != g.shape(q.mean) {
        return Err(Error::shape("sample_reparam", g.shape(q.mean), g.shape(eps)));
    }
    let half = g.scale(q.log_var, 0.5)?;
    let std = g.exp(half)?;
    let noise = g.mul(std, eps)?;
    g.add(q.mean, noise)
}

/// Per-row RBF kernel between two `[B, D]` tensors, as `[B, 1]`.
pub fn rbf_kernel_var(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let d2 = g.mul(d, d)?;
    let s = g.sum_last(d2)?;
    let e = g.scale(s, -0.5)?;
    g.exp(e)
}

/// Log-density of `N(0, I)` at `x`.
pub fn standard_log_prob(x: &[f64]) -> f64 {
    x.iter().map(|v| -HALF_LN_2PI - 0.5 * v * v).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn g1(m: f64, lv: f64) -> DiagGaussian {
        DiagGaussian::new(vec![m], vec![lv]).unwrap()
    }

    #[test]
    fn constant_is_half_ln_2pi() {
        assert!((HALF_LN_2PI - 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
    }

    #[test]
    fn kl_spot_values() {
        let std = DiagGaussian::standard(4);
        assert_eq!(kl_divergence(&std, &std).unwrap(), 0.0);
        assert!((kl_divergence(&g1(1.0, 0.0), &g1(0.0, 0.0)).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(kl_to_standard(&std), 0.0);
        let q = g1(0.0, 1.0);
        let expect = 0.5 * (std::f64::consts::E - 2.0);
        assert!((kl_to_standard(&q) - expect).abs() < 1e-12);
        assert!((expect - 0.3591).abs() < 1e-4);
        assert_eq!(kl_to_standard(&q), kl_divergence(&q, &g1(0.0, 0.0)).unwrap());
        assert!(kl_divergence(&std, &DiagGaussian::standard(3)).is_err());
    }

    #[test]
    fn reparam_and_log_prob_spot_values() {
        let q = DiagGaussian::new(vec![1.0, -2.0], vec![0.3, -0.7]).unwrap();
        assert_eq!(sample_reparam(&q, &[0.0, 0.0]).unwrap(), q.mean);
        let unit = DiagGaussian::new(vec![1.0, -2.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(sample_reparam(&unit, &[0.5, 0.25]).unwrap(), vec![1.5, -1.75]);

        let lp = log_prob(&[3.0], &g1(3.0, 0.0)).unwrap();
        assert!((lp + 0.918_938_533_204_672_8).abs() < 1e-12);
        let lp_off = log_prob(&[4.0], &g1(3.0, 0.0)).unwrap();
        assert!((lp_off - (lp - 0.5)).abs() < 1e-12);
        assert!(log_prob(&[1.0, 2.0], &g1(0.0, 0.0)).is_err());
    }

    #[test]
    fn rbf_spot_values() {
        assert_eq!(rbf_kernel(&[0.3, -1.0], &[0.3, -1.0]).unwrap(), 1.0);
        let v = rbf_kernel(&[1.0, 1.0], &[0.0, 0.0]).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
        assert!(rbf_kernel(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn graph_forms_match_value_forms() {
        let q = DiagGaussian::new(vec![0.4, -1.2, 2.0], vec![0.1, -0.5, 0.9]).unwrap();
        let p = DiagGaussian::new(vec![-0.3, 0.2, 1.0], vec![0.6, 0.0, -0.4]).unwrap();
        let mut g = Graph::new();
        let mk = |g: &mut Graph, d: &DiagGaussian| GaussianVar {
            mean: g.variable(Tensor::matrix(1, 3, d.mean.clone()).unwrap()),
            log_var: g.variable(Tensor::matrix(1, 3, d.log_var.clone()).unwrap()),
        };
        let qv = mk(&mut g, &q);
        let pv = mk(&mut g, &p);
        let kl = kl_divergence_var(&mut g, qv, pv).unwrap();
        assert!((g.scalar_value(kl) - kl_divergence(&q, &p).unwrap()).abs() < 1e-12);
        let kls = kl_to_standard_var(&mut g, qv).unwrap();
        assert!((g.scalar_value(kls) - kl_to_standard(&q)).abs() < 1e-12);
        let eps = g.constant(Tensor::matrix(1, 3, vec![0.5, -1.0, 0.1]).unwrap());
        let z = sample_reparam_var(&mut g, qv, eps).unwrap();
        let expect = sample_reparam(&q, &[0.5, -1.0, 0.1]).unwrap();
        for (a, b) in g.value(z).data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-14);
        }
        let k = rbf_kernel_var(&mut g, qv.mean, pv.mean).unwrap();
        assert!((g.scalar_value(k) - rbf_kernel(&q.mean, &p.mean).unwrap()).abs() < 1e-15);
    }
}

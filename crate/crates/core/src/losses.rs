//! Adversarial, domain classification, reconstruction and identity losses,
//! and the two training objectives assembled from them.
//!
//! Every probability is derived from raw scores inside this module:
//! `log sigmoid(x) = -softplus(-x)` and cross-entropies go through
//! log-sum-exp, so large logits never overflow.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::log_softmax;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_dom: f64,
    pub lambda_rec: f64,
    pub lambda_sem: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_dom: 1.0,
            lambda_rec: 10.0,
            lambda_sem: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("weights.lambda_dom", self.lambda_dom),
            ("weights.lambda_rec", self.lambda_rec),
            ("weights.lambda_sem", self.lambda_sem),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config {
                    key: key.into(),
                    message: format!("must be a finite non-negative number, got {v}"),
                });
            }
        }
        Ok(())
    }
}

/// How the generator's adversarial term is formed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialForm {
    /// `mean log(1 - sigmoid(d_fake))`, minimized by the generator.
    #[default]
    Saturating,
    /// `-mean log sigmoid(d_fake)`, the usual stabilized substitute.
    NonSaturating,
}

/// `max(x, 0) + log(1 + exp(-|x|))`
pub fn softplus(x: &Tensor) -> Result<Tensor> {
    let tail = (x.abs()?.neg()?.exp()? + 1.0)?.log()?;
    Ok((x.relu()? + tail)?)
}

pub fn log_sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(softplus(&x.neg()?)?.neg()?)
}

/// `log(1 - sigmoid(x))`
pub fn log_one_minus_sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(softplus(x)?.neg()?)
}

/// Mean over real scores of `log sigmoid` plus mean over fake scores of
/// `log(1 - sigmoid)`. Never positive.
pub fn adversarial_loss(d_real: &Tensor, d_fake: &Tensor) -> Result<Tensor> {
    Ok((log_sigmoid(d_real)?.mean_all()? + log_one_minus_sigmoid(d_fake)?.mean_all()?)?)
}

/// The part of the adversarial loss that depends on the generator.
pub fn generator_adversarial_term(d_fake: &Tensor, form: AdversarialForm) -> Result<Tensor> {
    match form {
        AdversarialForm::Saturating => Ok(log_one_minus_sigmoid(d_fake)?.mean_all()?),
        AdversarialForm::NonSaturating => Ok(log_sigmoid(d_fake)?.mean_all()?.neg()?),
    }
}

fn labels_tensor(labels: &[usize], num_classes: usize) -> Result<Tensor> {
    let mut v = Vec::with_capacity(labels.len());
    for &l in labels {
        if l >= num_classes {
            return Err(Error::LabelOutOfRange { label: l as i64, num_classes });
        }
        v.push(l as u32);
    }
    Ok(Tensor::from_vec(v, (labels.len(), 1), &candle_core::Device::Cpu)?)
}

/// Per-row `-log softmax(logits)[label]`, shape `(B,)`.
pub fn cross_entropy_per_sample(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (b, k) = logits.dims2()?;
    if labels.len() != b {
        return Err(Error::shape(format!("{b} labels"), labels.len()));
    }
    let idx = labels_tensor(labels, k)?;
    Ok(log_softmax(logits)?.gather(&idx, 1)?.squeeze(1)?.neg()?)
}

/// Mean cross-entropy of domain logits `(B, L+1)` against domain indices.
pub fn domain_classification_loss(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    Ok(cross_entropy_per_sample(logits, labels)?.mean_all()?)
}

/// Mean absolute difference.
pub fn reconstruction_loss(x: &Tensor, x_rec: &Tensor) -> Result<Tensor> {
    if x.dims() != x_rec.dims() {
        return Err(Error::shape(format!("{:?}", x.dims()), format!("{:?}", x_rec.dims())));
    }
    Ok((x - x_rec)?.abs()?.mean_all()?)
}

/// Cross-entropy of identity logits against class indices, averaged over the
/// samples selected by `mask` (all samples when `None`). A mask selecting
/// nothing yields zero.
pub fn identity_semantic_loss(logits: &Tensor, labels: &[usize], mask: Option<&[bool]>) -> Result<Tensor> {
    let per = cross_entropy_per_sample(logits, labels)?;
    match mask {
        None => Ok(per.mean_all()?),
        Some(m) => {
            if m.len() != labels.len() {
                return Err(Error::shape(format!("{} mask entries", labels.len()), m.len()));
            }
            let count = m.iter().filter(|&&b| b).count();
            let w: Vec<f64> = m.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
            let w = Tensor::from_vec(w, m.len(), &candle_core::Device::Cpu)?.to_dtype(per.dtype())?;
            let total = (per * w)?.sum_all()?;
            Ok((total / count.max(1) as f64)?)
        }
    }
}

/// Arithmetic needed to assemble objectives, so the same code combines
/// plain numbers and differentiable tensors.
pub trait LossValue: Sized {
    fn scaled(&self, w: f64) -> Result<Self>;
    fn plus(&self, other: &Self) -> Result<Self>;
}

impl LossValue for f64 {
    fn scaled(&self, w: f64) -> Result<Self> {
        Ok(self * w)
    }
    fn plus(&self, other: &Self) -> Result<Self> {
        Ok(self + other)
    }
}

impl LossValue for Tensor {
    fn scaled(&self, w: f64) -> Result<Self> {
        Ok((self * w)?)
    }
    fn plus(&self, other: &Self) -> Result<Self> {
        Ok((self + other)?)
    }
}

#[derive(Clone, Debug)]
pub struct DiscriminatorParts<T> {
    pub adversarial: T,
    /// Domain classification loss on real images with their own domains.
    pub domain_real: T,
}

#[derive(Clone, Debug)]
pub struct GeneratorParts<T> {
    pub adversarial: T,
    /// Domain classification loss on fakes with their requested domains.
    pub domain_fake: T,
    pub reconstruction: T,
    pub semantic: Option<T>,
}

/// `-L_adv + lambda_dom * L_dom_real`. Adding the identity constraint leaves
/// the discriminator side unchanged, so both GAN variants share this.
pub fn discriminator_objective<T: LossValue>(parts: &DiscriminatorParts<T>, w: &LossWeights) -> Result<T> {
    parts.adversarial.scaled(-1.0)?.plus(&parts.domain_real.scaled(w.lambda_dom)?)
}

/// `L_adv + lambda_dom * L_dom_fake + lambda_rec * L_rec`, plus
/// `lambda_sem * L_sem` when `with_semantic`.
pub fn generator_objective<T: LossValue>(parts: &GeneratorParts<T>, w: &LossWeights, with_semantic: bool) -> Result<T> {
    let base = parts
        .adversarial
        .plus(&parts.domain_fake.scaled(w.lambda_dom)?)?
        .plus(&parts.reconstruction.scaled(w.lambda_rec)?)?;
    if !with_semantic {
        return Ok(base);
    }
    let sem = parts
        .semantic
        .as_ref()
        .ok_or_else(|| Error::Precondition("identity semantic loss required but not provided".into()))?;
    base.plus(&sem.scaled(w.lambda_sem)?)
}

/// Reads a scalar tensor as `f64`.
pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn t(v: &[f64]) -> Tensor {
        Tensor::new(v, &Device::Cpu).unwrap()
    }

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    #[test]
    fn log_sigmoid_is_finite_far_out() {
        let v = log_sigmoid(&t(&[-800.0, 800.0])).unwrap().to_vec1::<f64>().unwrap();
        assert!((v[0] + 800.0).abs() < 1e-9);
        assert!(v[1].abs() < 1e-12);
    }

    #[test]
    fn adversarial_limits() {
        let l = scalar(&adversarial_loss(&t(&[60.0, 80.0]), &t(&[-60.0])).unwrap()).unwrap();
        assert!(l <= 0.0 && l > -1e-20);
        let l = scalar(&adversarial_loss(&t(&[logit(0.8)]), &t(&[logit(0.3)])).unwrap()).unwrap();
        assert!((l - (0.8f64.ln() + 0.7f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn non_saturating_term() {
        let v = scalar(&generator_adversarial_term(&t(&[0.0]), AdversarialForm::NonSaturating).unwrap()).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn label_out_of_range() {
        let logits = Tensor::zeros((1, 3), DType::F64, &Device::Cpu).unwrap();
        assert!(matches!(
            domain_classification_loss(&logits, &[3]),
            Err(Error::LabelOutOfRange { label: 3, num_classes: 3 })
        ));
    }

    #[test]
    fn masked_semantic_loss_ignores_unselected_rows() {
        let logits = Tensor::new(&[[0.0f64, 0.0], [50.0, -50.0]], &Device::Cpu).unwrap();
        let all = scalar(&identity_semantic_loss(&logits, &[0, 1], None).unwrap()).unwrap();
        let first = scalar(&identity_semantic_loss(&logits, &[0, 1], Some(&[true, false])).unwrap()).unwrap();
        let none = scalar(&identity_semantic_loss(&logits, &[0, 1], Some(&[false, false])).unwrap()).unwrap();
        assert!((first - 2f64.ln()).abs() < 1e-12);
        assert!(all > 40.0);
        assert_eq!(none, 0.0);
    }

    #[test]
    fn reconstruction_shape_mismatch() {
        assert!(reconstruction_loss(&t(&[1.0, 2.0]), &t(&[1.0])).is_err());
    }

    #[test]
    fn semantic_required() {
        let parts = GeneratorParts {
            adversarial: 0.0,
            domain_fake: 0.0,
            reconstruction: 0.0,
            semantic: None,
        };
        assert!(generator_objective(&parts, &LossWeights::default(), true).is_err());
        assert_eq!(generator_objective(&parts, &LossWeights::default(), false).unwrap(), 0.0);
    }

    #[test]
    fn negative_weight_rejected() {
        let w = LossWeights { lambda_sem: -1.0, ..Default::default() };
        assert!(w.validate().unwrap_err().to_string().contains("weights.lambda_sem"));
    }
}

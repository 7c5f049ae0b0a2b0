//! Identity classifiers: a residual backbone with a two-layer head, and the
//! variant with instance normalization in its shallow stages. The same
//! network, trained on the source identities and then frozen, is the
//! semantic discriminator of GAN training.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{batch_norm_eval, batch_norm_train, conv2d, global_avg_pool, instance_norm, linear};
use crate::nn::params::ParamSpec;
use crate::nn::{Architecture, Mode, ModelParams};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const IN_EPS: f64 = 1e-5;

/// Which layer serves as the retrieval feature.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    #[default]
    Embedding,
    BackbonePool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReIdConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub stem_channels: usize,
    pub stage_channels: Vec<usize>,
    pub blocks_per_stage: Vec<usize>,
    pub embedding_dim: usize,
    pub num_classes: usize,
    pub use_ibn: bool,
    #[serde(default)]
    pub feature_source: FeatureSource,
}

impl ReIdConfig {
    /// Small four-stage backbone for 32x16 inputs.
    pub fn desk(height: usize, width: usize, channels: usize, num_classes: usize) -> Self {
        Self {
            height,
            width,
            channels,
            stem_channels: 16,
            stage_channels: vec![16, 32, 64, 128],
            blocks_per_stage: vec![1, 1, 1, 1],
            embedding_dim: 1024,
            num_classes,
            use_ibn: false,
            feature_source: FeatureSource::Embedding,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config { key: "reid".into(), message: m });
        if self.stage_channels.len() != self.blocks_per_stage.len() || self.stage_channels.is_empty() {
            return bad("stage_channels and blocks_per_stage must be non-empty and equally long".into());
        }
        if self.use_ibn && self.stage_channels.len() < 2 {
            return bad("the IBN variant needs at least two stages".into());
        }
        if self.blocks_per_stage.iter().any(|&b| b == 0) || self.embedding_dim == 0 || self.stem_channels == 0 {
            return bad("every stage needs at least one block".into());
        }
        if self.num_classes == 0 {
            return bad("num_classes must be positive".into());
        }
        let down = 1usize << (self.stage_channels.len() - 1);
        if self.height < down || self.width < down {
            return bad(format!("{}x{} input too small for {} stages", self.height, self.width, self.stage_channels.len()));
        }
        Ok(())
    }

    /// Names of the stages followed by instance normalization in the IBN variant.
    pub fn ibn_sites() -> [&'static str; 3] {
        ["stem", "stage1", "stage2"]
    }
}

pub(crate) fn param_specs(c: &ReIdConfig) -> Result<(Vec<ParamSpec>, Vec<ParamSpec>)> {
    c.validate()?;
    let mut w = Vec::new();
    let mut b = Vec::new();
    let bn = |w: &mut Vec<ParamSpec>, b: &mut Vec<ParamSpec>, name: &str, ch: usize| {
        w.push(ParamSpec::constant(format!("{name}.gain"), &[ch], 1.0));
        w.push(ParamSpec::constant(format!("{name}.bias"), &[ch], 0.0));
        b.push(ParamSpec::constant(format!("{name}.mean"), &[ch], 0.0));
        b.push(ParamSpec::constant(format!("{name}.var"), &[ch], 1.0));
    };
    let inorm = |w: &mut Vec<ParamSpec>, site: &str, ch: usize| {
        w.push(ParamSpec::constant(format!("{site}.in.gain"), &[ch], 1.0));
        w.push(ParamSpec::constant(format!("{site}.in.bias"), &[ch], 0.0));
    };
    w.push(ParamSpec::uniform("stem.conv", &[c.stem_channels, c.channels, 3, 3], c.channels * 9));
    bn(&mut w, &mut b, "stem.bn", c.stem_channels);
    if c.use_ibn {
        inorm(&mut w, "stem", c.stem_channels);
    }
    let mut cin = c.stem_channels;
    for (s, (&cout, &blocks)) in c.stage_channels.iter().zip(&c.blocks_per_stage).enumerate() {
        for k in 0..blocks {
            let name = format!("stage{}.block{k}", s + 1);
            let stride = if s > 0 && k == 0 { 2 } else { 1 };
            w.push(ParamSpec::uniform(format!("{name}.conv1"), &[cout, cin, 3, 3], cin * 9));
            bn(&mut w, &mut b, &format!("{name}.bn1"), cout);
            w.push(ParamSpec::uniform(format!("{name}.conv2"), &[cout, cout, 3, 3], cout * 9));
            bn(&mut w, &mut b, &format!("{name}.bn2"), cout);
            if stride != 1 || cin != cout {
                w.push(ParamSpec::uniform(format!("{name}.proj.conv"), &[cout, cin, 1, 1], cin));
                bn(&mut w, &mut b, &format!("{name}.proj.bn"), cout);
            }
            cin = cout;
        }
        if c.use_ibn && s < 2 {
            inorm(&mut w, &format!("stage{}", s + 1), cout);
        }
    }
    w.push(ParamSpec::uniform("fc1.weight", &[c.embedding_dim, cin], cin));
    w.push(ParamSpec::uniform("fc1.bias", &[c.embedding_dim], cin));
    w.push(ParamSpec::uniform("fc2.weight", &[c.num_classes, c.embedding_dim], c.embedding_dim));
    w.push(ParamSpec::uniform("fc2.bias", &[c.num_classes], c.embedding_dim));
    Ok((w, b))
}

pub fn reid_config(params: &ModelParams) -> Result<&ReIdConfig> {
    match params.arch() {
        Architecture::ReId(c) => Ok(c),
        other => Err(Error::Checkpoint(format!("expected re-ID parameters, got {}", other.name()))),
    }
}

#[derive(Clone, Debug)]
pub struct ReIdOutput {
    /// First fully connected layer, `(B, embedding_dim)`.
    pub embedding: Tensor,
    /// `(B, N)`.
    pub logits: Tensor,
    /// Global average pool of the backbone, `(B, C_last)`.
    pub pooled: Tensor,
}

impl ReIdOutput {
    pub fn feature(&self, source: FeatureSource) -> &Tensor {
        match source {
            FeatureSource::Embedding => &self.embedding,
            FeatureSource::BackbonePool => &self.pooled,
        }
    }
}

/// Per-channel instance normalization with affine `(gain, bias)`.
pub fn instance_normalize(x: &Tensor, eps: f64, gain: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if eps <= 0.0 {
        return Err(Error::Precondition("instance normalization eps must be positive".into()));
    }
    let (_, c, h, w) = x.dims4()?;
    if h * w == 0 || gain.elem_count() != c || bias.elem_count() != c {
        return Err(Error::shape(format!("{c} channels with non-empty spatial size"), format!("{:?}", x.dims())));
    }
    instance_norm(x, gain, bias, eps)
}

struct Forward<'a> {
    params: &'a ModelParams,
    mode: Mode,
}

impl Forward<'_> {
    fn bn(&self, x: &Tensor, name: &str) -> Result<Tensor> {
        let gain = self.params.weight(&format!("{name}.gain"))?;
        let bias = self.params.weight(&format!("{name}.bias"))?;
        let mean_name = format!("{name}.mean");
        let var_name = format!("{name}.var");
        match self.mode {
            Mode::Eval => batch_norm_eval(
                x,
                &gain,
                &bias,
                &self.params.buffer(&mean_name)?,
                &self.params.buffer(&var_name)?,
                BN_EPS,
            ),
            Mode::Train => {
                let (y, mean, var) = batch_norm_train(x, &gain, &bias, BN_EPS)?;
                let blend = |old: Tensor, new: Tensor| -> Result<Tensor> {
                    Ok(((old * (1.0 - BN_MOMENTUM))? + (new * BN_MOMENTUM)?)?)
                };
                let m = blend(self.params.buffer(&mean_name)?, mean)?;
                let v = blend(self.params.buffer(&var_name)?, var)?;
                self.params.set_buffer(&mean_name, &m)?;
                self.params.set_buffer(&var_name, &v)?;
                Ok(y)
            }
        }
    }

    fn inorm(&self, x: &Tensor, site: &str) -> Result<Tensor> {
        instance_norm(
            x,
            &self.params.weight(&format!("{site}.in.gain"))?,
            &self.params.weight(&format!("{site}.in.bias"))?,
            IN_EPS,
        )
    }

    fn block(&self, x: &Tensor, name: &str, stride: usize) -> Result<Tensor> {
        let w = |n: &str| self.params.weight(&format!("{name}.{n}"));
        let y = self.bn(&conv2d(x, &w("conv1")?, None, stride, 1)?, &format!("{name}.bn1"))?.relu()?;
        let y = self.bn(&conv2d(&y, &w("conv2")?, None, 1, 1)?, &format!("{name}.bn2"))?;
        let shortcut = if self.params.has_weight(&format!("{name}.proj.conv")) {
            self.bn(&conv2d(x, &w("proj.conv")?, None, stride, 0)?, &format!("{name}.proj.bn"))?
        } else {
            x.clone()
        };
        Ok((y + shortcut)?.relu()?)
    }
}

/// Runs the classifier on an NCHW batch. Train mode normalizes with batch
/// statistics and folds them into the running averages; eval mode uses the
/// running averages only, so each sample's output is independent of the
/// rest of the batch.
pub fn reid_forward(params: &ModelParams, x: &Tensor, mode: Mode) -> Result<ReIdOutput> {
    let c = reid_config(params)?;
    let dims = x.dims();
    if dims.len() != 4 || dims[1] != c.channels || dims[2] != c.height || dims[3] != c.width {
        return Err(Error::shape(format!("(B, {}, {}, {})", c.channels, c.height, c.width), format!("{dims:?}")));
    }
    if mode == Mode::Train && dims[0] < 2 {
        return Err(Error::Precondition("train mode needs a batch of at least 2 images".into()));
    }
    let f = Forward { params, mode };
    let mut h = f.bn(&conv2d(x, &params.weight("stem.conv")?, None, 1, 1)?, "stem.bn")?.relu()?;
    if c.use_ibn {
        h = f.inorm(&h, "stem")?;
    }
    for (s, &blocks) in c.blocks_per_stage.iter().enumerate() {
        for k in 0..blocks {
            let stride = if s > 0 && k == 0 { 2 } else { 1 };
            h = f.block(&h, &format!("stage{}.block{k}", s + 1), stride)?;
        }
        if c.use_ibn && s < 2 {
            h = f.inorm(&h, &format!("stage{}", s + 1))?;
        }
    }
    let pooled = global_avg_pool(&h)?;
    let embedding = linear(&pooled, &params.weight("fc1.weight")?, Some(&params.weight("fc1.bias")?))?;
    let logits = linear(&embedding.relu()?, &params.weight("fc2.weight")?, Some(&params.weight("fc2.bias")?))?;
    Ok(ReIdOutput { embedding, logits, pooled })
}

/// Identity logits of the frozen semantic discriminator. Gradients flow to
/// the input but never into `params`.
pub fn semantic_discriminator_forward(params: &ModelParams, x: &Tensor) -> Result<Tensor> {
    let frozen = params.frozen();
    Ok(reid_forward(&frozen, x, Mode::Eval)?.logits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::softmax;
    use crate::rng::rng_for;
    use candle_core::{DType, Device};
    use rand::Rng;
    use std::collections::BTreeSet;

    fn model(use_ibn: bool, n: usize) -> ModelParams {
        let mut c = ReIdConfig::desk(32, 16, 3, n);
        c.embedding_dim = 64;
        c.use_ibn = use_ibn;
        ModelParams::initialize(Architecture::ReId(c), 11, DType::F32).unwrap()
    }

    fn batch(b: usize, seed: u64) -> Tensor {
        let mut rng = rng_for(seed, 1);
        let v: Vec<f32> = (0..b * 3 * 32 * 16).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_vec(v, (b, 3, 32, 16), &Device::Cpu).unwrap()
    }

    #[test]
    fn logits_have_one_entry_per_class() {
        let m = model(false, 20);
        let out = reid_forward(&m, &batch(2, 0), Mode::Eval).unwrap();
        assert_eq!(out.logits.dims(), &[2, 20]);
        assert_eq!(out.embedding.dims(), &[2, 64]);
    }

    #[test]
    fn eval_is_batch_independent() {
        let m = model(true, 5);
        // move the running statistics away from their initial values
        reid_forward(&m, &batch(4, 9), Mode::Train).unwrap();
        let xs = batch(4, 2);
        let all = reid_forward(&m, &xs, Mode::Eval).unwrap().embedding.to_vec2::<f32>().unwrap();
        let one = reid_forward(&m, &xs.narrow(0, 2, 1).unwrap(), Mode::Eval)
            .unwrap()
            .embedding
            .to_vec2::<f32>()
            .unwrap();
        for (a, b) in all[2].iter().zip(&one[0]) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn train_mode_rejects_single_image() {
        let m = model(false, 5);
        assert!(reid_forward(&m, &batch(1, 0), Mode::Train).is_err());
    }

    #[test]
    fn ibn_adds_exactly_three_affine_instance_norms() {
        let plain = model(false, 5);
        let ibn = model(true, 5);
        let a: BTreeSet<&str> = plain.weight_names().collect();
        let b: BTreeSet<&str> = ibn.weight_names().collect();
        assert!(a.is_subset(&b));
        let extra: Vec<&str> = b.difference(&a).copied().collect();
        let expected: BTreeSet<String> = ReIdConfig::ibn_sites()
            .iter()
            .flat_map(|s| [format!("{s}.in.gain"), format!("{s}.in.bias")])
            .collect();
        assert_eq!(extra.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>(), expected);
        for n in &a {
            assert_eq!(plain.weight_values(n).unwrap(), ibn.weight_values(n).unwrap(), "{n}");
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let m = model(false, 7);
        let logits = semantic_discriminator_forward(&m, &batch(3, 5)).unwrap();
        for row in softmax(&logits).unwrap().to_vec2::<f32>().unwrap() {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn instance_norm_examples() {
        let dev = Device::Cpu;
        let one = Tensor::ones(1, DType::F64, &dev).unwrap();
        let zero = Tensor::zeros(1, DType::F64, &dev).unwrap();
        let constant = Tensor::full(3.0f64, (1, 1, 2, 2), &dev).unwrap();
        let y = instance_normalize(&constant, 1e-5, &one, &zero).unwrap();
        assert!(y.flatten_all().unwrap().to_vec1::<f64>().unwrap().iter().all(|v| *v == 0.0));
        let pair = Tensor::new(&[-1.0f64, 1.0], &dev).unwrap().reshape((1, 1, 1, 2)).unwrap();
        let y = instance_normalize(&pair, 1e-12, &one, &zero).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert!((y[0] + 1.0).abs() < 1e-9 && (y[1] - 1.0).abs() < 1e-9);
        assert!(instance_normalize(&pair, 0.0, &one, &zero).is_err());
    }

    #[test]
    fn frozen_semantic_discriminator_has_no_parameter_gradients() {
        let m = model(false, 4);
        let x = candle_core::Var::from_tensor(&batch(2, 3)).unwrap();
        let loss = semantic_discriminator_forward(&m, x.as_tensor()).unwrap().sum_all().unwrap();
        let grads = loss.backward().unwrap();
        assert!(grads.get(x.as_tensor()).is_some());
        for (_, v) in m.vars() {
            assert!(grads.get(v.as_tensor()).is_none());
        }
    }
}

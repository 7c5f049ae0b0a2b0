//! Conditional generator and the two-headed domain discriminator.
//!
//! Domains are numbered `0..=L`: 0 is the labeled source set, `k >= 1` is
//! target camera `k`. The generator sees its requested domain as `L+1`
//! constant one-hot planes appended to the image channels.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{batch_to_tensor, tensor_to_batch, ImageTensor};
use crate::nn::layers::{conv2d, conv_transpose2d, instance_norm, leaky_relu};
use crate::nn::params::ParamSpec;
use crate::nn::{Architecture, ModelParams};

pub const IN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DomainLabel {
    index: usize,
    num_domains: usize,
}

impl DomainLabel {
    pub fn new(index: usize, num_domains: usize) -> Result<Self> {
        if num_domains < 2 || index >= num_domains {
            return Err(Error::DomainOutOfRange { index, num_domains });
        }
        Ok(Self { index, num_domains })
    }

    pub fn source(num_domains: usize) -> Result<Self> {
        Self::new(0, num_domains)
    }

    /// Domain of target camera `camera` (1-based).
    pub fn camera(camera: u32, num_domains: usize) -> Result<Self> {
        if camera == 0 {
            return Err(Error::DomainOutOfRange { index: 0, num_domains });
        }
        Self::new(camera as usize, num_domains)
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn num_domains(&self) -> usize {
        self.num_domains
    }

    pub fn is_source(&self) -> bool {
        self.index == 0
    }

    pub fn one_hot(&self) -> Vec<f32> {
        let mut v = vec![0.0; self.num_domains];
        v[self.index] = 1.0;
        v
    }
}

fn default_edge_kernel() -> usize {
    7
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub base_width: usize,
    pub residual_blocks: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// `L + 1`.
    pub num_domains: usize,
    /// Kernel size of the first and last convolutions.
    #[serde(default = "default_edge_kernel")]
    pub edge_kernel: usize,
}

impl GeneratorConfig {
    pub fn new(height: usize, width: usize, channels: usize, num_domains: usize) -> Self {
        Self {
            base_width: 32,
            residual_blocks: 6,
            height,
            width,
            channels,
            num_domains,
            edge_kernel: 7,
        }
    }

    pub fn input_channels(&self) -> usize {
        self.channels + self.num_domains
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config { key: "generator".into(), message: m.into() });
        if self.height % 4 != 0 || self.width % 4 != 0 || self.height == 0 || self.width == 0 {
            return bad("image height and width must be positive multiples of 4");
        }
        if self.base_width == 0 || self.channels == 0 {
            return bad("widths must be positive");
        }
        if self.num_domains < 2 {
            return bad("need at least two domains");
        }
        if self.edge_kernel % 2 == 0 {
            return bad("edge_kernel must be odd");
        }
        Ok(())
    }
}

pub(crate) fn generator_param_specs(c: &GeneratorConfig) -> Result<Vec<ParamSpec>> {
    c.validate()?;
    let w = c.base_width;
    let k = c.edge_kernel;
    let mut specs = Vec::new();
    let norm = |specs: &mut Vec<ParamSpec>, name: &str, ch: usize| {
        specs.push(ParamSpec::constant(format!("{name}.gain"), &[ch], 1.0));
        specs.push(ParamSpec::constant(format!("{name}.bias"), &[ch], 0.0));
    };
    let cin = c.input_channels();
    specs.push(ParamSpec::uniform("stem.conv", &[w, cin, k, k], cin * k * k));
    norm(&mut specs, "stem.norm", w);
    specs.push(ParamSpec::uniform("down1.conv", &[2 * w, w, 4, 4], w * 16));
    norm(&mut specs, "down1.norm", 2 * w);
    specs.push(ParamSpec::uniform("down2.conv", &[4 * w, 2 * w, 4, 4], 2 * w * 16));
    norm(&mut specs, "down2.norm", 4 * w);
    for r in 0..c.residual_blocks {
        for j in 1..=2 {
            specs.push(ParamSpec::uniform(format!("res{r}.conv{j}"), &[4 * w, 4 * w, 3, 3], 4 * w * 9));
            norm(&mut specs, &format!("res{r}.norm{j}"), 4 * w);
        }
    }
    specs.push(ParamSpec::uniform("up1.conv", &[4 * w, 2 * w, 4, 4], 4 * w * 16));
    norm(&mut specs, "up1.norm", 2 * w);
    specs.push(ParamSpec::uniform("up2.conv", &[2 * w, w, 4, 4], 2 * w * 16));
    norm(&mut specs, "up2.norm", w);
    specs.push(ParamSpec::uniform("out.conv", &[c.channels, w, k, k], w * k * k));
    specs.push(ParamSpec::uniform("out.bias", &[c.channels], w * k * k));
    Ok(specs)
}

pub fn generator_config(params: &ModelParams) -> Result<&GeneratorConfig> {
    match params.arch() {
        Architecture::Generator(c) => Ok(c),
        other => Err(Error::Checkpoint(format!("expected generator parameters, got {}", other.name()))),
    }
}

fn check_input(x: &Tensor, channels: usize, height: usize, width: usize) -> Result<usize> {
    let dims = x.dims();
    if dims.len() != 4 || dims[1] != channels || dims[2] != height || dims[3] != width {
        return Err(Error::shape(format!("(B, {channels}, {height}, {width})"), format!("{dims:?}")));
    }
    Ok(dims[0])
}

/// One-hot planes `(B, L+1, H, W)` for the requested domains.
pub fn domain_planes(labels: &[DomainLabel], num_domains: usize, height: usize, width: usize, dtype: DType) -> Result<Tensor> {
    let mut flat = Vec::with_capacity(labels.len() * num_domains);
    for l in labels {
        if l.num_domains != num_domains {
            return Err(Error::DomainOutOfRange { index: l.index, num_domains });
        }
        flat.extend(l.one_hot());
    }
    let t = Tensor::from_vec(flat, (labels.len(), num_domains, 1, 1), &candle_core::Device::Cpu)?.to_dtype(dtype)?;
    Ok(t.broadcast_as((labels.len(), num_domains, height, width))?.contiguous()?)
}

/// `G(x, c)` over an NCHW batch, one domain label per sample.
pub fn generator_forward(params: &ModelParams, x: &Tensor, labels: &[DomainLabel]) -> Result<Tensor> {
    let c = generator_config(params)?;
    let b = check_input(x, c.channels, c.height, c.width)?;
    if labels.len() != b {
        return Err(Error::shape(format!("{b} domain labels"), labels.len()));
    }
    let planes = domain_planes(labels, c.num_domains, c.height, c.width, x.dtype())?;
    let h = Tensor::cat(&[x, &planes], 1)?;
    let p = |n: &str| params.weight(n);
    let block = |h: &Tensor, name: &str| -> Result<Tensor> {
        instance_norm(h, &p(&format!("{name}.gain"))?, &p(&format!("{name}.bias"))?, IN_EPS)
    };
    let pad = c.edge_kernel / 2;
    let mut h = block(&conv2d(&h, &p("stem.conv")?, None, 1, pad)?, "stem.norm")?.relu()?;
    h = block(&conv2d(&h, &p("down1.conv")?, None, 2, 1)?, "down1.norm")?.relu()?;
    h = block(&conv2d(&h, &p("down2.conv")?, None, 2, 1)?, "down2.norm")?.relu()?;
    for r in 0..c.residual_blocks {
        let y = block(&conv2d(&h, &p(&format!("res{r}.conv1"))?, None, 1, 1)?, &format!("res{r}.norm1"))?.relu()?;
        let y = block(&conv2d(&y, &p(&format!("res{r}.conv2"))?, None, 1, 1)?, &format!("res{r}.norm2"))?;
        h = (h + y)?;
    }
    h = block(&conv_transpose2d(&h, &p("up1.conv")?, None, 2, 1)?, "up1.norm")?.relu()?;
    h = block(&conv_transpose2d(&h, &p("up2.conv")?, None, 2, 1)?, "up2.norm")?.relu()?;
    Ok(conv2d(&h, &p("out.conv")?, Some(&p("out.bias")?), 1, pad)?.tanh()?)
}

/// Single-image convenience wrapper around [`generator_forward`].
pub fn translate_image(params: &ModelParams, x: &ImageTensor, label: DomainLabel) -> Result<ImageTensor> {
    let frozen = params.frozen();
    let t = batch_to_tensor(&[x], params.dtype(), &candle_core::Device::Cpu)?;
    let y = generator_forward(&frozen, &t, &[label])?;
    Ok(tensor_to_batch(&y)?.remove(0))
}

fn default_slope() -> f64 {
    0.01
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainDiscriminatorConfig {
    pub base_width: usize,
    /// Number of stride-2 convolutions.
    pub layers: usize,
    #[serde(default = "default_slope")]
    pub leaky_slope: f64,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub num_domains: usize,
}

impl DomainDiscriminatorConfig {
    pub fn new(height: usize, width: usize, channels: usize, num_domains: usize) -> Self {
        Self {
            base_width: 32,
            layers: 3,
            leaky_slope: 0.01,
            height,
            width,
            channels,
            num_domains,
        }
    }

    /// Spatial size of the real/fake map.
    pub fn patch_grid(&self) -> (usize, usize) {
        (self.height >> self.layers, self.width >> self.layers)
    }

    fn validate(&self) -> Result<()> {
        let unit = 1usize << self.layers;
        if self.layers == 0 || self.height % unit != 0 || self.width % unit != 0 || self.height < unit || self.width < unit {
            return Err(Error::Config {
                key: "discriminator.layers".into(),
                message: format!("{}x{} is not divisible by 2^{}", self.height, self.width, self.layers),
            });
        }
        if self.num_domains < 2 || self.base_width == 0 {
            return Err(Error::Config { key: "discriminator".into(), message: "need two domains and positive width".into() });
        }
        Ok(())
    }
}

pub(crate) fn discriminator_param_specs(c: &DomainDiscriminatorConfig) -> Result<Vec<ParamSpec>> {
    c.validate()?;
    let mut specs = Vec::new();
    let mut cin = c.channels;
    for i in 0..c.layers {
        let cout = c.base_width << i;
        specs.push(ParamSpec::uniform(format!("down{i}.conv"), &[cout, cin, 4, 4], cin * 16));
        specs.push(ParamSpec::uniform(format!("down{i}.bias"), &[cout], cin * 16));
        cin = cout;
    }
    let (gh, gw) = c.patch_grid();
    specs.push(ParamSpec::uniform("adv.conv", &[1, cin, 3, 3], cin * 9));
    specs.push(ParamSpec::uniform("domain.conv", &[c.num_domains, cin, gh, gw], cin * gh * gw));
    Ok(specs)
}

pub fn discriminator_config(params: &ModelParams) -> Result<&DomainDiscriminatorConfig> {
    match params.arch() {
        Architecture::DomainDiscriminator(c) => Ok(c),
        other => Err(Error::Checkpoint(format!("expected discriminator parameters, got {}", other.name()))),
    }
}

/// Returns the raw real/fake patch map `(B, 1, h, w)` and the domain logits
/// `(B, L+1)`.
pub fn domain_discriminator_forward(params: &ModelParams, x: &Tensor) -> Result<(Tensor, Tensor)> {
    let c = discriminator_config(params)?;
    let b = check_input(x, c.channels, c.height, c.width)?;
    let mut h = x.clone();
    for i in 0..c.layers {
        let y = conv2d(&h, &params.weight(&format!("down{i}.conv"))?, Some(&params.weight(&format!("down{i}.bias"))?), 2, 1)?;
        h = leaky_relu(&y, c.leaky_slope)?;
    }
    let adv = conv2d(&h, &params.weight("adv.conv")?, None, 1, 1)?;
    let logits = conv2d(&h, &params.weight("domain.conv")?, None, 1, 0)?.reshape((b, c.num_domains))?;
    Ok((adv, logits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use rand::Rng;

    fn tiny_gen(num_domains: usize) -> ModelParams {
        let mut cfg = GeneratorConfig::new(32, 16, 3, num_domains);
        cfg.base_width = 4;
        cfg.residual_blocks = 1;
        cfg.edge_kernel = 3;
        ModelParams::initialize(Architecture::Generator(cfg), 3, DType::F32).unwrap()
    }

    fn random_image(seed: u64) -> ImageTensor {
        let mut rng = rng_for(seed, 0);
        let data = (0..32 * 16 * 3).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        ImageTensor::new(32, 16, 3, data).unwrap()
    }

    #[test]
    fn one_hot_has_single_entry() {
        let l = DomainLabel::camera(3, 5).unwrap();
        assert_eq!(l.one_hot(), vec![0.0, 0.0, 0.0, 1.0, 0.0]);
        assert!(DomainLabel::new(5, 5).is_err());
        assert!(DomainLabel::camera(0, 5).is_err());
    }

    #[test]
    fn generator_shape_range_and_determinism() {
        let g = tiny_gen(5);
        let x = random_image(1);
        let c = DomainLabel::new(2, 5).unwrap();
        let a = translate_image(&g, &x, c).unwrap();
        let b = translate_image(&g, &x, c).unwrap();
        assert_eq!(a.shape(), (32, 16, 3));
        assert!(a.max_abs() <= 1.0);
        assert_eq!(a, b);
    }

    #[test]
    fn generator_input_channels_include_domains() {
        let g = tiny_gen(5);
        let w = g.weight("stem.conv").unwrap();
        assert_eq!(w.dims()[1], 3 + 5);
    }

    #[test]
    fn generator_rejects_bad_inputs() {
        let g = tiny_gen(5);
        let x = ImageTensor::filled(16, 16, 3, 0.0);
        assert!(translate_image(&g, &x, DomainLabel::new(0, 5).unwrap()).is_err());
        let x = random_image(2);
        assert!(matches!(
            translate_image(&g, &x, DomainLabel::new(0, 4).unwrap()),
            Err(Error::DomainOutOfRange { .. })
        ));
    }

    #[test]
    fn instance_norm_everywhere_but_output() {
        let g = tiny_gen(3);
        let norms = g.weight_names().filter(|n| n.contains(".norm")).count();
        // stem, 2 down, 2 per residual block, 2 up; gain and bias each
        assert_eq!(norms, 2 * (1 + 2 + 2 + 2));
        assert!(!g.weight_names().any(|n| n.starts_with("out.norm")));
    }

    #[test]
    fn discriminator_heads() {
        let cfg = DomainDiscriminatorConfig {
            base_width: 8,
            ..DomainDiscriminatorConfig::new(32, 16, 3, 5)
        };
        let d = ModelParams::initialize(Architecture::DomainDiscriminator(cfg), 1, DType::F32).unwrap();
        let x = batch_to_tensor(&[&random_image(4), &random_image(5)], DType::F32, &candle_core::Device::Cpu).unwrap();
        let (adv, logits) = domain_discriminator_forward(&d, &x).unwrap();
        assert_eq!(adv.dims(), &[2, 1, 4, 2]);
        assert_eq!(logits.dims(), &[2, 5]);
        let (adv2, logits2) = domain_discriminator_forward(&d, &x).unwrap();
        assert_eq!(adv.flatten_all().unwrap().to_vec1::<f32>().unwrap(), adv2.flatten_all().unwrap().to_vec1::<f32>().unwrap());
        assert_eq!(logits.to_vec2::<f32>().unwrap(), logits2.to_vec2::<f32>().unwrap());
    }

    #[test]
    fn same_seed_same_parameters() {
        assert!(tiny_gen(4).same_values(&tiny_gen(4)).unwrap());
    }
}

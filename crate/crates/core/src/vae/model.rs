//! Residual encoder/decoder with hand-written backward passes.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::LatentCode;
use crate::nn::layers::{
    he_normal, relu, relu_backward, sigmoid, upsample2x, upsample2x_backward, Conv2d, Linear,
};
use crate::nn::{Feat, Scalar};
use crate::tensorio::Image2D;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input shape ({actual_h},{actual_w}) does not match configured ({expected_h},{expected_w})")]
    Shape {
        expected_h: usize,
        expected_w: usize,
        actual_h: usize,
        actual_w: usize,
    },
    #[error("latent vector has length {actual}, expected {expected}")]
    LatentLen { expected: usize, actual: usize },
    #[error("block index {s} out of range 1..={n_blocks}")]
    BlockIndex { s: usize, n_blocks: usize },
    #[error("invalid model config: {0}")]
    Config(String),
}

/// Architecture hyperparameters.
///
/// `width_scale` multiplies the reference channel widths 64/128/256/512;
/// the desk-scale default of 1/8 gives blocks of 8/16/32/64 channels on
/// 64x64 inputs so the full pipeline runs in minutes on a CPU. The
/// paper-scale profile uses `width_scale = 1.0` on 224x224 inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub input_h: usize,
    pub input_w: usize,
    pub n_blocks: usize,
    pub width_scale: f64,
}

impl ModelConfig {
    pub fn desk() -> Self {
        ModelConfig {
            latent_dim: 32,
            input_h: 64,
            input_w: 64,
            n_blocks: 4,
            width_scale: 0.125,
        }
    }

    pub fn paper() -> Self {
        ModelConfig {
            latent_dim: 32,
            input_h: 224,
            input_w: 224,
            n_blocks: 4,
            width_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_blocks < 2 {
            return Err(ModelError::Config("n_blocks must be >= 2".into()));
        }
        if self.latent_dim == 0 {
            return Err(ModelError::Config("latent_dim must be positive".into()));
        }
        if !(self.width_scale > 0.0) {
            return Err(ModelError::Config("width_scale must be positive".into()));
        }
        let div = 1usize << self.n_blocks;
        if self.input_h % div != 0 || self.input_w % div != 0 {
            return Err(ModelError::Config(format!(
                "input {}x{} not divisible by 2^{}",
                self.input_h, self.input_w, self.n_blocks
            )));
        }
        Ok(())
    }

    /// Channel count per encoder block.
    pub fn channels(&self) -> Vec<usize> {
        (0..self.n_blocks)
            .map(|k| {
                let base = (64usize << k.min(3)) as f64;
                ((base * self.width_scale).round() as usize).max(1)
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
struct ResBlock {
    conv1: Conv2d,
    conv2: Conv2d,
    skip: Conv2d,
}

#[derive(Debug, Clone)]
pub(crate) struct Architecture {
    enc_blocks: Vec<ResBlock>,
    head_mu: Linear,
    head_logvar: Linear,
    dec_lin: Linear,
    dec_blocks: Vec<ResBlock>,
    pub(crate) n_params: usize,
    feat_c: usize,
    feat_h: usize,
    feat_w: usize,
}

struct Allocator(usize);

impl Allocator {
    fn take(&mut self, n: usize) -> Range<usize> {
        let r = self.0..self.0 + n;
        self.0 += n;
        r
    }
}

fn conv_layer(alloc: &mut Allocator, ci: usize, co: usize, k: usize, stride: usize, pad: usize) -> Conv2d {
    let w = alloc.take(Conv2d::n_weights(ci, co, k));
    let b = alloc.take(co);
    Conv2d {
        ci,
        co,
        k,
        stride,
        pad,
        w,
        b,
    }
}

fn linear_layer(alloc: &mut Allocator, n_in: usize, n_out: usize) -> Linear {
    let w = alloc.take(n_in * n_out);
    let b = alloc.take(n_out);
    Linear { n_in, n_out, w, b }
}

impl Architecture {
    fn build(config: &ModelConfig) -> Architecture {
        let ch = config.channels();
        let n = config.n_blocks;
        let mut alloc = Allocator(0);

        let mut enc_blocks = Vec::with_capacity(n);
        let mut prev = 1usize;
        for &c in &ch {
            enc_blocks.push(ResBlock {
                conv1: conv_layer(&mut alloc, prev, c, 3, 2, 1),
                conv2: conv_layer(&mut alloc, c, c, 3, 1, 1),
                skip: conv_layer(&mut alloc, prev, c, 1, 2, 0),
            });
            prev = c;
        }

        let feat_c = ch[n - 1];
        let feat_h = config.input_h >> n;
        let feat_w = config.input_w >> n;
        let n_flat = feat_c * feat_h * feat_w;
        let head_mu = linear_layer(&mut alloc, n_flat, config.latent_dim);
        let head_logvar = linear_layer(&mut alloc, n_flat, config.latent_dim);
        let dec_lin = linear_layer(&mut alloc, config.latent_dim, n_flat);

        // Mirror of the encoder: the deepest block comes first and the last
        // block lands on a single output channel.
        let mut dec_blocks = Vec::with_capacity(n);
        for j in 0..n {
            let cin = ch[n - 1 - j];
            let cout = if j == n - 1 { 1 } else { ch[n - 2 - j] };
            dec_blocks.push(ResBlock {
                conv1: conv_layer(&mut alloc, cin, cout, 3, 1, 1),
                conv2: conv_layer(&mut alloc, cout, cout, 3, 1, 1),
                skip: conv_layer(&mut alloc, cin, cout, 1, 1, 0),
            });
        }

        Architecture {
            enc_blocks,
            head_mu,
            head_logvar,
            dec_lin,
            dec_blocks,
            n_params: alloc.0,
            feat_c,
            feat_h,
            feat_w,
        }
    }

    /// Layer parameter chunks in allocation order, as `(name, range, rows, cols)`.
    pub(crate) fn param_chunks(&self) -> Vec<(String, Range<usize>, usize, usize)> {
        let mut chunks = Vec::new();
        let push_conv = |chunks: &mut Vec<_>, name: String, c: &Conv2d| {
            chunks.push((format!("{name}_w"), c.w.clone(), c.co, c.ci * c.k * c.k));
            chunks.push((format!("{name}_b"), c.b.clone(), 1, c.co));
        };
        let push_lin = |chunks: &mut Vec<_>, name: String, l: &Linear| {
            chunks.push((format!("{name}_w"), l.w.clone(), l.n_out, l.n_in));
            chunks.push((format!("{name}_b"), l.b.clone(), 1, l.n_out));
        };
        for (i, b) in self.enc_blocks.iter().enumerate() {
            push_conv(&mut chunks, format!("enc_b{}_conv1", i + 1), &b.conv1);
            push_conv(&mut chunks, format!("enc_b{}_conv2", i + 1), &b.conv2);
            push_conv(&mut chunks, format!("enc_b{}_skip", i + 1), &b.skip);
        }
        push_lin(&mut chunks, "head_mu".into(), &self.head_mu);
        push_lin(&mut chunks, "head_logvar".into(), &self.head_logvar);
        push_lin(&mut chunks, "dec_lin".into(), &self.dec_lin);
        for (i, b) in self.dec_blocks.iter().enumerate() {
            push_conv(&mut chunks, format!("dec_b{}_conv1", i + 1), &b.conv1);
            push_conv(&mut chunks, format!("dec_b{}_conv2", i + 1), &b.conv2);
            push_conv(&mut chunks, format!("dec_b{}_skip", i + 1), &b.skip);
        }
        chunks
    }
}

/// Intermediates kept from an encoder pass: block activations (retained for
/// attention extraction) and the latent heads.
#[derive(Debug, Clone)]
pub struct EncoderCache<T> {
    pub input: Feat<T>,
    h1: Vec<Feat<T>>,
    outs: Vec<Feat<T>>,
    flat: Vec<T>,
    pub mu: Vec<T>,
    pub logvar: Vec<T>,
}

impl<T: Scalar> EncoderCache<T> {
    /// Activation stack of encoder block `s` (1-based).
    pub fn block_out(&self, s: usize) -> &Feat<T> {
        &self.outs[s - 1]
    }

    pub fn n_blocks(&self) -> usize {
        self.outs.len()
    }

    pub fn code(&self) -> LatentCode {
        LatentCode {
            mu: self.mu.iter().map(|v| v.as_f64()).collect(),
            logvar: self.logvar.iter().map(|v| v.as_f64()).collect(),
        }
    }
}

/// Intermediates kept from a decoder pass.
#[derive(Debug, Clone)]
pub struct DecoderCache<T> {
    z: Vec<T>,
    lin_out: Vec<T>,
    ups: Vec<Feat<T>>,
    h1: Vec<Feat<T>>,
    outs: Vec<Feat<T>>,
}

impl<T: Scalar> DecoderCache<T> {
    pub fn reconstruction(&self) -> &Feat<T> {
        self.outs.last().expect("decoder has blocks")
    }
}

/// The VAE: architecture descriptors plus one flat parameter buffer.
#[derive(Debug, Clone)]
pub struct VaeModel<T> {
    pub config: ModelConfig,
    arch: Architecture,
    pub params: Vec<T>,
}

impl<T: Scalar> VaeModel<T> {
    /// Builds a model with He-normal weights and zero biases, drawn from a
    /// ChaCha stream so initialization is identical across scalar types.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let arch = Architecture::build(&config);
        let mut params = vec![T::zero(); arch.n_params];
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let blocks: Vec<&ResBlock> = arch.enc_blocks.iter().chain(arch.dec_blocks.iter()).collect();
        for b in blocks {
            for conv in [&b.conv1, &b.conv2, &b.skip] {
                let fan_in = conv.ci * conv.k * conv.k;
                he_normal(&mut params[conv.w.clone()], fan_in, &mut rng);
            }
        }
        for lin in [&arch.head_mu, &arch.head_logvar, &arch.dec_lin] {
            he_normal(&mut params[lin.w.clone()], lin.n_in, &mut rng);
        }
        Ok(VaeModel {
            config,
            arch,
            params,
        })
    }

    pub fn from_params(config: ModelConfig, params: Vec<T>) -> Result<Self, ModelError> {
        config.validate()?;
        let arch = Architecture::build(&config);
        if params.len() != arch.n_params {
            return Err(ModelError::Config(format!(
                "parameter buffer has {} values, architecture needs {}",
                params.len(),
                arch.n_params
            )));
        }
        Ok(VaeModel {
            config,
            arch,
            params,
        })
    }

    pub fn n_params(&self) -> usize {
        self.arch.n_params
    }

    pub(crate) fn param_chunks(&self) -> Vec<(String, Range<usize>, usize, usize)> {
        self.arch.param_chunks()
    }

    pub fn image_to_feat(&self, img: &Image2D) -> Result<Feat<T>, ModelError> {
        if img.height() != self.config.input_h || img.width() != self.config.input_w {
            return Err(ModelError::Shape {
                expected_h: self.config.input_h,
                expected_w: self.config.input_w,
                actual_h: img.height(),
                actual_w: img.width(),
            });
        }
        Ok(Feat::from_vec(
            1,
            img.height(),
            img.width(),
            img.values().iter().map(|&v| T::from_f64(v as f64)).collect(),
        ))
    }

    fn enc_block_forward(&self, block: &ResBlock, x: &Feat<T>) -> (Feat<T>, Feat<T>) {
        let h1 = relu(&block.conv1.forward(&self.params, x));
        let mut h2 = block.conv2.forward(&self.params, &h1);
        let s = block.skip.forward(&self.params, x);
        for (a, b) in h2.data.iter_mut().zip(&s.data) {
            *a += *b;
        }
        (h1, relu(&h2))
    }

    /// Full encoder pass keeping everything the backward pass and the
    /// attention extractors need.
    pub fn encoder_forward(&self, x: Feat<T>) -> EncoderCache<T> {
        let mut h1s = Vec::with_capacity(self.arch.enc_blocks.len());
        let mut outs = Vec::with_capacity(self.arch.enc_blocks.len());
        let mut cur = x.clone();
        for block in &self.arch.enc_blocks {
            let (h1, out) = self.enc_block_forward(block, &cur);
            h1s.push(h1);
            cur = out.clone();
            outs.push(out);
        }
        let flat = cur.data.clone();
        let mu = self.arch.head_mu.forward(&self.params, &flat);
        let logvar = self.arch.head_logvar.forward(&self.params, &flat);
        EncoderCache {
            input: x,
            h1: h1s,
            outs,
            flat,
            mu,
            logvar,
        }
    }

    /// Encodes a batch of images into latent codes; block activations stay
    /// available through the caches. Deterministic given the parameters.
    pub fn encode(&self, batch: &[Image2D]) -> Result<Vec<EncoderCache<T>>, ModelError> {
        batch
            .iter()
            .map(|img| Ok(self.encoder_forward(self.image_to_feat(img)?)))
            .collect()
    }

    /// Backward through the encoder from latent-head gradients.
    ///
    /// `inject` adds an extra gradient at the output of the given block
    /// (1-based), which is how attention regularizers reach the encoder.
    /// Returns the gradient with respect to the input image.
    pub fn encoder_backward(
        &self,
        cache: &EncoderCache<T>,
        gmu: &[T],
        glogvar: &[T],
        inject: Option<(usize, &Feat<T>)>,
        gparams: &mut [T],
    ) -> Feat<T> {
        let gflat_mu = self
            .arch
            .head_mu
            .backward(&self.params, &cache.flat, gmu, gparams);
        let gflat_lv = self
            .arch
            .head_logvar
            .backward(&self.params, &cache.flat, glogvar, gparams);
        let deepest = cache.outs.last().expect("encoder has blocks");
        let mut g = Feat::from_vec(
            deepest.c,
            deepest.h,
            deepest.w,
            gflat_mu
                .iter()
                .zip(&gflat_lv)
                .map(|(&a, &b)| a + b)
                .collect(),
        );
        for k in (0..self.arch.enc_blocks.len()).rev() {
            if let Some((s, extra)) = inject {
                if s == k + 1 {
                    for (a, b) in g.data.iter_mut().zip(&extra.data) {
                        *a += *b;
                    }
                }
            }
            let block = &self.arch.enc_blocks[k];
            let x_in = if k == 0 { &cache.input } else { &cache.outs[k - 1] };
            let gpre = relu_backward(&g, &cache.outs[k]);
            let gh1 = block.conv2.backward(&self.params, &cache.h1[k], &gpre, gparams);
            let gh1 = relu_backward(&gh1, &cache.h1[k]);
            let mut gx = block.conv1.backward(&self.params, x_in, &gh1, gparams);
            let gskip = block.skip.backward(&self.params, x_in, &gpre, gparams);
            for (a, b) in gx.data.iter_mut().zip(&gskip.data) {
                *a += *b;
            }
            g = gx;
        }
        g
    }

    /// Gradient of `sum_j mu_j` with respect to the activations of block `s`
    /// (1-based). Parameter gradients produced along the way are discarded;
    /// this is the saliency pass behind gradient-weighted attention.
    pub fn grad_mu_sum_at_block(
        &self,
        cache: &EncoderCache<T>,
        s: usize,
    ) -> Result<Feat<T>, ModelError> {
        let n = self.arch.enc_blocks.len();
        if s == 0 || s > n {
            return Err(ModelError::BlockIndex { s, n_blocks: n });
        }
        let mut scratch = vec![T::zero(); self.arch.n_params];
        let gmu = vec![T::one(); self.config.latent_dim];
        let gflat = self
            .arch
            .head_mu
            .backward(&self.params, &cache.flat, &gmu, &mut scratch);
        let deepest = cache.outs.last().unwrap();
        let mut g = Feat::from_vec(deepest.c, deepest.h, deepest.w, gflat);
        for k in ((s)..n).rev() {
            // Walk down to (but not through) block s: we want the gradient
            // with respect to that block's output.
            let block = &self.arch.enc_blocks[k];
            let x_in = &cache.outs[k - 1];
            let gpre = relu_backward(&g, &cache.outs[k]);
            let gh1 = block
                .conv2
                .backward(&self.params, &cache.h1[k], &gpre, &mut scratch);
            let gh1 = relu_backward(&gh1, &cache.h1[k]);
            let mut gx = block.conv1.backward(&self.params, x_in, &gh1, &mut scratch);
            let gskip = block.skip.backward(&self.params, x_in, &gpre, &mut scratch);
            for (a, b) in gx.data.iter_mut().zip(&gskip.data) {
                *a += *b;
            }
            g = gx;
        }
        Ok(g)
    }

    /// Decoder pass from a latent sample.
    pub fn decoder_forward(&self, z: &[T]) -> Result<DecoderCache<T>, ModelError> {
        if z.len() != self.config.latent_dim {
            return Err(ModelError::LatentLen {
                expected: self.config.latent_dim,
                actual: z.len(),
            });
        }
        let lin_raw = self.arch.dec_lin.forward(&self.params, z);
        let lin_out: Vec<T> = lin_raw.iter().map(|&v| v.max(T::zero())).collect();
        let mut cur = Feat::from_vec(
            self.arch.feat_c,
            self.arch.feat_h,
            self.arch.feat_w,
            lin_out.clone(),
        );
        let n = self.arch.dec_blocks.len();
        let mut ups = Vec::with_capacity(n);
        let mut h1s = Vec::with_capacity(n);
        let mut outs = Vec::with_capacity(n);
        for (j, block) in self.arch.dec_blocks.iter().enumerate() {
            let u = upsample2x(&cur);
            let h1 = relu(&block.conv1.forward(&self.params, &u));
            let mut h2 = block.conv2.forward(&self.params, &h1);
            let s = block.skip.forward(&self.params, &u);
            for (a, b) in h2.data.iter_mut().zip(&s.data) {
                *a += *b;
            }
            let out = if j == n - 1 {
                Feat {
                    c: h2.c,
                    h: h2.h,
                    w: h2.w,
                    data: h2.data.iter().map(|&v| sigmoid(v)).collect(),
                }
            } else {
                relu(&h2)
            };
            ups.push(u);
            h1s.push(h1);
            cur = out.clone();
            outs.push(out);
        }
        Ok(DecoderCache {
            z: z.to_vec(),
            lin_out,
            ups,
            h1: h1s,
            outs,
        })
    }

    /// Backward through the decoder from a reconstruction gradient; returns
    /// the gradient with respect to the latent sample.
    pub fn decoder_backward(
        &self,
        cache: &DecoderCache<T>,
        gxhat: &Feat<T>,
        gparams: &mut [T],
    ) -> Vec<T> {
        let n = self.arch.dec_blocks.len();
        let mut g = gxhat.clone();
        for j in (0..n).rev() {
            let block = &self.arch.dec_blocks[j];
            let out = &cache.outs[j];
            let gpre = if j == n - 1 {
                // Sigmoid output: sigma' = out * (1 - out).
                Feat {
                    c: g.c,
                    h: g.h,
                    w: g.w,
                    data: g
                        .data
                        .iter()
                        .zip(&out.data)
                        .map(|(&gv, &o)| gv * o * (T::one() - o))
                        .collect(),
                }
            } else {
                relu_backward(&g, out)
            };
            let gh1 = block
                .conv2
                .backward(&self.params, &cache.h1[j], &gpre, gparams);
            let gh1 = relu_backward(&gh1, &cache.h1[j]);
            let mut gu = block.conv1.backward(&self.params, &cache.ups[j], &gh1, gparams);
            let gskip = block.skip.backward(&self.params, &cache.ups[j], &gpre, gparams);
            for (a, b) in gu.data.iter_mut().zip(&gskip.data) {
                *a += *b;
            }
            g = upsample2x_backward(&gu);
        }
        // ReLU after the dense expansion, then the dense layer itself.
        let gated: Vec<T> = g
            .data
            .iter()
            .zip(&cache.lin_out)
            .map(|(&gv, &o)| if o > T::zero() { gv } else { T::zero() })
            .collect();
        self.arch
            .dec_lin
            .backward(&self.params, &cache.z, &gated, gparams)
    }

    /// Decodes a latent vector into a reconstruction in `[0,1]`.
    pub fn decode(&self, z: &[f64]) -> Result<Image2D, ModelError> {
        let zt: Vec<T> = z.iter().map(|&v| T::from_f64(v)).collect();
        let cache = self.decoder_forward(&zt)?;
        let rec = cache.reconstruction();
        Ok(Image2D::from_vec(
            rec.h,
            rec.w,
            rec.data.iter().map(|&v| v.as_f64() as f32).collect(),
        ))
    }

    /// Converts the parameter buffer to `f32` for serialization.
    pub fn params_f32(&self) -> Vec<f32> {
        self.params.iter().map(|&v| v.as_f64() as f32).collect()
    }
}

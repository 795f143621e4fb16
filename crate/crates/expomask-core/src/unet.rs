//! The segmentation U-Net: five encoder blocks, four decoder blocks with
//! skip concatenation, and a 1x1 sigmoid head.
//!
//! Encoder blocks 1-4 run conv-relu, conv-relu, dropout, maxpool; block 5
//! is the bottleneck and skips the pool, which is why spatial extents must
//! be divisible by 16. Decoder blocks run upconv, concat with the matching
//! encoder pre-pool activation, conv-relu, dropout, conv-relu. Default
//! channel widths follow the 16,32,64,128,256 progression; the channel
//! scale knob divides every width for desk-scale tests.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::Tensor;

/// Base channel widths of the five encoder levels.
pub const BASE_WIDTHS: [usize; 5] = [16, 32, 64, 128, 256];

/// Spatial downsampling factor of the full encoder (four 2x2 pools).
pub const SPATIAL_DIVISOR: usize = 16;

/// Architecture knobs. Width and input-channel choices are fixed at
/// construction; dropout is a property of the forward mode instead.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UNetConfig {
    /// 1 for luminance input, 3 for RGB.
    pub input_channels: usize,
    /// Divisor applied to every channel width (1 = full size).
    pub channel_scale: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            input_channels: 3,
            channel_scale: 1,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_channels != 1 && self.input_channels != 3 {
            return Err(Error::InvalidParams(format!(
                "input_channels must be 1 or 3, got {}",
                self.input_channels
            )));
        }
        if self.channel_scale == 0 || BASE_WIDTHS.iter().any(|w| w % self.channel_scale != 0) {
            return Err(Error::InvalidParams(format!(
                "channel_scale {} must evenly divide the widths {:?}",
                self.channel_scale, BASE_WIDTHS
            )));
        }
        Ok(())
    }

    /// Channel widths after scaling.
    pub fn widths(&self) -> [usize; 5] {
        let mut w = BASE_WIDTHS;
        for x in &mut w {
            *x /= self.channel_scale;
        }
        w
    }
}

/// Forward-pass mode. Training applies seeded dropout; evaluation is a
/// pure deterministic function.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NetMode {
    Train { dropout_rate: f64, seed: u64 },
    Eval,
}

/// One convolution's weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    pub kernel: Tensor,
    pub bias: Tensor,
}

impl ConvParams {
    fn zeros(kh: usize, kw: usize, cin: usize, cout: usize) -> Self {
        ConvParams {
            kernel: Tensor::zeros(&[kh, kw, cin, cout]),
            bias: Tensor::zeros(&[cout]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderBlock {
    pub conv1: ConvParams,
    pub conv2: ConvParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderBlock {
    pub up: ConvParams,
    pub conv1: ConvParams,
    pub conv2: ConvParams,
}

/// All trainable parameters. The same structure doubles as the gradient
/// container returned by the backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct UNetParams {
    pub config: UNetConfig,
    pub encoder: Vec<EncoderBlock>,
    pub decoder: Vec<DecoderBlock>,
    pub head: ConvParams,
}

impl UNetParams {
    /// Zero-valued parameters with the correct shapes for `config`.
    pub fn zeros(config: &UNetConfig) -> Result<Self> {
        config.validate()?;
        let w = config.widths();
        let mut encoder = Vec::with_capacity(5);
        let mut cin = config.input_channels;
        for &width in &w {
            encoder.push(EncoderBlock {
                conv1: ConvParams::zeros(3, 3, cin, width),
                conv2: ConvParams::zeros(3, 3, width, width),
            });
            cin = width;
        }
        let mut decoder = Vec::with_capacity(4);
        for level in (0..4).rev() {
            // level 3 first: 256 -> 128, down to 32 -> 16.
            decoder.push(DecoderBlock {
                up: ConvParams::zeros(3, 3, w[level + 1], w[level]),
                conv1: ConvParams::zeros(3, 3, 2 * w[level], w[level]),
                conv2: ConvParams::zeros(3, 3, w[level], w[level]),
            });
        }
        let head = ConvParams::zeros(1, 1, w[0], 1);
        let params = UNetParams {
            config: *config,
            encoder,
            decoder,
            head,
        };
        params.assert_channel_profile();
        Ok(params)
    }

    /// He-normal fan-in initialization for kernels, zero biases.
    /// Deterministic per seed.
    pub fn init(config: &UNetConfig, seed: u64) -> Result<Self> {
        let mut params = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (_, tensor) in params.tensors_mut() {
            let shape = tensor.shape().to_vec();
            if shape.len() == 4 {
                let fan_in = shape[0] * shape[1] * shape[2];
                let std = (2.0 / fan_in as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("std is positive and finite");
                for v in tensor.data_mut() {
                    *v = normal.sample(&mut rng);
                }
            }
            // Biases stay zero.
        }
        Ok(params)
    }

    /// Gradient container shaped like these parameters.
    pub fn grads_like(&self) -> Self {
        let mut g = self.clone();
        for (_, tensor) in g.tensors_mut() {
            for v in tensor.data_mut() {
                *v = 0.0;
            }
        }
        g
    }

    /// Every parameter tensor with a stable name, in a fixed order shared
    /// by the optimizer state and the model file.
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (b, block) in self.encoder.iter().enumerate() {
            out.push((format!("enc{}.conv1.kernel", b + 1), &block.conv1.kernel));
            out.push((format!("enc{}.conv1.bias", b + 1), &block.conv1.bias));
            out.push((format!("enc{}.conv2.kernel", b + 1), &block.conv2.kernel));
            out.push((format!("enc{}.conv2.bias", b + 1), &block.conv2.bias));
        }
        for (b, block) in self.decoder.iter().enumerate() {
            out.push((format!("dec{}.up.kernel", b + 1), &block.up.kernel));
            out.push((format!("dec{}.up.bias", b + 1), &block.up.bias));
            out.push((format!("dec{}.conv1.kernel", b + 1), &block.conv1.kernel));
            out.push((format!("dec{}.conv1.bias", b + 1), &block.conv1.bias));
            out.push((format!("dec{}.conv2.kernel", b + 1), &block.conv2.kernel));
            out.push((format!("dec{}.conv2.bias", b + 1), &block.conv2.bias));
        }
        out.push(("head.kernel".to_string(), &self.head.kernel));
        out.push(("head.bias".to_string(), &self.head.bias));
        out
    }

    /// Mutable variant of [`tensors`](Self::tensors), same order.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = Vec::new();
        for (b, block) in self.encoder.iter_mut().enumerate() {
            out.push((format!("enc{}.conv1.kernel", b + 1), &mut block.conv1.kernel));
            out.push((format!("enc{}.conv1.bias", b + 1), &mut block.conv1.bias));
            out.push((format!("enc{}.conv2.kernel", b + 1), &mut block.conv2.kernel));
            out.push((format!("enc{}.conv2.bias", b + 1), &mut block.conv2.bias));
        }
        for (b, block) in self.decoder.iter_mut().enumerate() {
            out.push((format!("dec{}.up.kernel", b + 1), &mut block.up.kernel));
            out.push((format!("dec{}.up.bias", b + 1), &mut block.up.bias));
            out.push((format!("dec{}.conv1.kernel", b + 1), &mut block.conv1.kernel));
            out.push((format!("dec{}.conv1.bias", b + 1), &mut block.conv1.bias));
            out.push((format!("dec{}.conv2.kernel", b + 1), &mut block.conv2.kernel));
            out.push((format!("dec{}.conv2.bias", b + 1), &mut block.conv2.bias));
        }
        out.push(("head.kernel".to_string(), &mut self.head.kernel));
        out.push(("head.bias".to_string(), &mut self.head.bias));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn assert_channel_profile(&self) {
        let w = self.config.widths();
        for (b, block) in self.encoder.iter().enumerate() {
            assert_eq!(block.conv1.kernel.shape()[3], w[b]);
            assert_eq!(block.conv2.kernel.shape()[3], w[b]);
        }
        for (i, block) in self.decoder.iter().enumerate() {
            let level = 3 - i;
            assert_eq!(block.up.kernel.shape()[2], w[level + 1]);
            assert_eq!(block.up.kernel.shape()[3], w[level]);
            assert_eq!(block.conv1.kernel.shape()[2], 2 * w[level]);
            assert_eq!(block.conv2.kernel.shape()[3], w[level]);
        }
        assert_eq!(self.head.kernel.shape(), &[1, 1, w[0], 1]);
    }
}

struct ConvTrace {
    input: Tensor,
    pre_act: Tensor,
}

struct EncTrace {
    conv1: ConvTrace,
    conv2: ConvTrace,
    drop_mask: Tensor,
    /// Post-dropout activation: the skip tensor and pool input.
    dropped: Tensor,
    pool: Option<ops::PoolTrace>,
}

struct DecTrace {
    up_input: Tensor,
    skip_channels: usize,
    conv1: ConvTrace,
    drop_mask: Tensor,
    conv2: ConvTrace,
}

/// Intermediate state captured by [`unet_forward_traced`], consumed by
/// [`unet_backward_traced`].
pub struct ForwardTrace {
    enc: Vec<EncTrace>,
    dec: Vec<DecTrace>,
    head: ConvTrace,
    output: Tensor,
}

impl ForwardTrace {
    pub fn output(&self) -> &Tensor {
        &self.output
    }
}

fn check_input(params: &UNetParams, x: &Tensor) -> Result<()> {
    if x.ndim() != 4 {
        return Err(Error::ShapeMismatch(format!(
            "network input must be rank 4 (NHWC), got {:?}",
            x.shape()
        )));
    }
    let (h, w, c) = (x.shape()[1], x.shape()[2], x.shape()[3]);
    if c != params.config.input_channels {
        return Err(Error::ShapeMismatch(format!(
            "network expects {} input channels, got {}",
            params.config.input_channels, c
        )));
    }
    if h % SPATIAL_DIVISOR != 0 {
        return Err(Error::IndivisibleExtent {
            axis: "height",
            extent: h,
            divisor: SPATIAL_DIVISOR,
        });
    }
    if w % SPATIAL_DIVISOR != 0 {
        return Err(Error::IndivisibleExtent {
            axis: "width",
            extent: w,
            divisor: SPATIAL_DIVISOR,
        });
    }
    Ok(())
}

/// Run the network and return only the sigmoid output in (0,1).
pub fn unet_forward(params: &UNetParams, x: &Tensor, mode: NetMode) -> Result<Tensor> {
    Ok(unet_forward_traced(params, x, mode)?.output)
}

/// Run the network keeping every intermediate needed for backprop.
pub fn unet_forward_traced(
    params: &UNetParams,
    x: &Tensor,
    mode: NetMode,
) -> Result<ForwardTrace> {
    check_input(params, x)?;
    let (rate, mut rng) = match mode {
        NetMode::Train { dropout_rate, seed } => {
            if !(0.0..1.0).contains(&dropout_rate) {
                return Err(Error::InvalidParams(format!(
                    "dropout_rate must be in [0,1), got {dropout_rate}"
                )));
            }
            (dropout_rate, ChaCha8Rng::seed_from_u64(seed))
        }
        NetMode::Eval => (0.0, ChaCha8Rng::seed_from_u64(0)),
    };

    let mut enc_traces = Vec::with_capacity(5);
    let mut cur = x.clone();
    for (b, block) in params.encoder.iter().enumerate() {
        let z1 = ops::conv2d(&cur, &block.conv1.kernel, &block.conv1.bias)?;
        let a1 = ops::relu(&z1);
        let z2 = ops::conv2d(&a1, &block.conv2.kernel, &block.conv2.bias)?;
        let a2 = ops::relu(&z2);
        let (dropped, drop_mask) = ops::dropout(&a2, rate, &mut rng);
        let (next, pool) = if b < 4 {
            let (pooled, trace) = ops::maxpool2(&dropped)?;
            (pooled, Some(trace))
        } else {
            (dropped.clone(), None)
        };
        enc_traces.push(EncTrace {
            conv1: ConvTrace {
                input: cur,
                pre_act: z1,
            },
            conv2: ConvTrace {
                input: a1,
                pre_act: z2,
            },
            drop_mask,
            dropped,
            pool,
        });
        cur = next;
    }

    let mut dec_traces = Vec::with_capacity(4);
    for (i, block) in params.decoder.iter().enumerate() {
        let skip = &enc_traces[3 - i].dropped;
        let up = ops::upconv2(&cur, &block.up.kernel, &block.up.bias)?;
        let cat = ops::concat_channels(&up, skip)?;
        let z1 = ops::conv2d(&cat, &block.conv1.kernel, &block.conv1.bias)?;
        let a1 = ops::relu(&z1);
        let (dropped, drop_mask) = ops::dropout(&a1, rate, &mut rng);
        let z2 = ops::conv2d(&dropped, &block.conv2.kernel, &block.conv2.bias)?;
        let a2 = ops::relu(&z2);
        dec_traces.push(DecTrace {
            up_input: cur,
            skip_channels: skip.shape()[3],
            conv1: ConvTrace {
                input: cat,
                pre_act: z1,
            },
            drop_mask,
            conv2: ConvTrace {
                input: dropped,
                pre_act: z2,
            },
        });
        cur = a2;
    }

    let z = ops::conv2d(&cur, &params.head.kernel, &params.head.bias)?;
    let output = ops::sigmoid(&z);
    Ok(ForwardTrace {
        enc: enc_traces,
        dec: dec_traces,
        head: ConvTrace {
            input: cur,
            pre_act: z,
        },
        output,
    })
}

/// Exact reverse-mode gradients from a recorded forward pass.
pub fn unet_backward_traced(
    params: &UNetParams,
    trace: &ForwardTrace,
    upstream: &Tensor,
) -> Result<UNetParams> {
    if upstream.shape() != trace.output.shape() {
        return Err(Error::ShapeMismatch(format!(
            "upstream gradient shape {:?} does not match output {:?}",
            upstream.shape(),
            trace.output.shape()
        )));
    }
    let mut grads = params.grads_like();

    // Head: sigmoid then 1x1 conv.
    let dz = ops::sigmoid_backward(&trace.output, upstream)?;
    let (mut dcur, dk, db) = ops::conv2d_backward(&trace.head.input, &params.head.kernel, &dz)?;
    grads.head.kernel = dk;
    grads.head.bias = db;

    // Skip gradients accumulate here, indexed by encoder level 0..3.
    let mut skip_grads: Vec<Option<Tensor>> = vec![None, None, None, None];

    for (i, block) in params.decoder.iter().enumerate().rev() {
        let tr = &trace.dec[i];
        let dz2 = ops::relu_backward(&tr.conv2.pre_act, &dcur)?;
        let (ddrop, dk2, db2) =
            ops::conv2d_backward(&tr.conv2.input, &block.conv2.kernel, &dz2)?;
        let da1 = ops::dropout_backward(&tr.drop_mask, &ddrop)?;
        let dz1 = ops::relu_backward(&tr.conv1.pre_act, &da1)?;
        let (dcat, dk1, db1) =
            ops::conv2d_backward(&tr.conv1.input, &block.conv1.kernel, &dz1)?;
        let up_channels = block.up.kernel.shape()[3];
        let (dup, dskip) = ops::split_channels(&dcat, up_channels, tr.skip_channels)?;
        let (dprev, dku, dbu) = ops::upconv2_backward(&tr.up_input, &block.up.kernel, &dup)?;

        let g = &mut grads.decoder[i];
        g.conv2.kernel = dk2;
        g.conv2.bias = db2;
        g.conv1.kernel = dk1;
        g.conv1.bias = db1;
        g.up.kernel = dku;
        g.up.bias = dbu;

        skip_grads[3 - i] = Some(dskip);
        dcur = dprev;
    }

    for (b, block) in params.encoder.iter().enumerate().rev() {
        let tr = &trace.enc[b];
        // Gradient reaching this block's post-dropout activation: the pool
        // path from the block below plus the decoder skip path.
        let mut ddropped = match &tr.pool {
            Some(pool) => ops::maxpool2_backward(pool, &dcur)?,
            None => dcur,
        };
        if b < 4 {
            if let Some(skip) = skip_grads[b].take() {
                ddropped.add_assign(&skip)?;
            }
        }
        let da2 = ops::dropout_backward(&tr.drop_mask, &ddropped)?;
        let dz2 = ops::relu_backward(&tr.conv2.pre_act, &da2)?;
        let (da1, dk2, db2) =
            ops::conv2d_backward(&tr.conv2.input, &block.conv2.kernel, &dz2)?;
        let dz1 = ops::relu_backward(&tr.conv1.pre_act, &da1)?;
        let (dprev, dk1, db1) =
            ops::conv2d_backward(&tr.conv1.input, &block.conv1.kernel, &dz1)?;

        let g = &mut grads.encoder[b];
        g.conv2.kernel = dk2;
        g.conv2.bias = db2;
        g.conv1.kernel = dk1;
        g.conv1.bias = db1;
        dcur = dprev;
    }

    Ok(grads)
}

/// Convenience wrapper recomputing the forward pass; with a seeded
/// train-mode rng the dropout masks reproduce exactly.
pub fn unet_backward(
    params: &UNetParams,
    x: &Tensor,
    mode: NetMode,
    upstream: &Tensor,
) -> Result<UNetParams> {
    let trace = unet_forward_traced(params, x, mode)?;
    unet_backward_traced(params, &trace, upstream)
}

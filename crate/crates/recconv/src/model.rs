//! Macro architecture around the recursive mixer: MetaNeXt-style blocks
//! (`Y = X + ChannelMixer(Norm(TokenMixer(X)))`), stride-2 downsampling
//! blocks whose shortcut bypasses the channel mixer, a two-conv stem, and
//! whole-model assembly with deterministic seeded initialisation.

use num_traits::Float;

use crate::error::{Error, Result};
use crate::ops::{
    channel_affine, channel_affine_vjp, conv2d, conv2d_vjp, gelu, gelu_vjp, ConvKernel,
};
use crate::rec::{
    recconv_forward, recconv_vjp, Aggregation, RecConvConfig, RecConvGrads, RecConvTrace,
    RecConvWeights, UpsampleMode,
};
use crate::rng::SplitMix64;
use crate::tensor::Tensor4;

/// Per-channel scale and shift; inference-mode batch norm fused to an affine.
#[derive(Debug, Clone)]
pub struct ChannelAffine<T = f64> {
    pub scale: Vec<T>,
    pub shift: Vec<T>,
}

impl<T: Float> ChannelAffine<T> {
    /// scale = 1, shift = 0.
    pub fn identity(channels: usize) -> Self {
        Self {
            scale: vec![T::one(); channels],
            shift: vec![T::zero(); channels],
        }
    }

    pub fn len(&self) -> usize {
        self.scale.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scale.is_empty()
    }
}

/// `Y = X + mixer_down(gelu(mixer_up(norm(recconv(X)))))`, shape preserving.
#[derive(Debug, Clone)]
pub struct MetaNeXtBlock<T = f64> {
    pub mixer_cfg: RecConvConfig,
    pub mixer: RecConvWeights<T>,
    pub norm: ChannelAffine<T>,
    pub mixer_up: ConvKernel<T>,
    pub mixer_down: ConvKernel<T>,
}

impl<T: Float> MetaNeXtBlock<T> {
    /// Seeded construction. Stream order: token-mixer kernels (shared
    /// downsampler, scale kernels ascending, upsample kernels if any), norm
    /// (consumes nothing: identity), mixer_up, mixer_down.
    pub fn seeded(
        channels: usize,
        kernel: usize,
        level: usize,
        expansion: usize,
        aggregation: Aggregation,
        upsample: UpsampleMode,
        rng: &mut SplitMix64,
    ) -> Result<Self> {
        let mixer_cfg = RecConvConfig {
            channels,
            kernel,
            level,
            aggregation,
            upsample,
        };
        let mixer = RecConvWeights::seeded(&mixer_cfg, rng)?;
        let hidden = channels * expansion;
        let mixer_up = ConvKernel::seeded(hidden, channels, 1, 1, 1, true, rng)?;
        let mixer_down = ConvKernel::seeded(channels, hidden, 1, 1, 1, true, rng)?;
        Ok(Self {
            mixer_cfg,
            mixer,
            norm: ChannelAffine::identity(channels),
            mixer_up,
            mixer_down,
        })
    }

    pub fn channels(&self) -> usize {
        self.mixer_cfg.channels
    }
}

#[derive(Debug, Clone)]
pub struct MetaNeXtTrace<T = f64> {
    pub x: Tensor4<T>,
    pub rec: RecConvTrace<T>,
    pub rec_out: Tensor4<T>,
    pub norm_out: Tensor4<T>,
    pub up_out: Tensor4<T>,
    pub act_out: Tensor4<T>,
}

/// Parameter gradients of a [`MetaNeXtBlock`].
#[derive(Debug, Clone)]
pub struct MetaNeXtGrads<T = f64> {
    pub mixer: RecConvGrads<T>,
    pub norm_scale: Vec<T>,
    pub norm_shift: Vec<T>,
    pub mixer_up_w: Vec<T>,
    pub mixer_up_b: Vec<T>,
    pub mixer_down_w: Vec<T>,
    pub mixer_down_b: Vec<T>,
}

pub fn metanext_forward<T: Float>(x: &Tensor4<T>, block: &MetaNeXtBlock<T>) -> Result<Tensor4<T>> {
    metanext_forward_traced(x, block).map(|(y, _)| y)
}

pub fn metanext_forward_traced<T: Float>(
    x: &Tensor4<T>,
    block: &MetaNeXtBlock<T>,
) -> Result<(Tensor4<T>, MetaNeXtTrace<T>)> {
    if x.c() != block.channels() {
        return Err(Error::ShapeMismatch(format!(
            "block expects {} channels, input has {}",
            block.channels(),
            x.c()
        )));
    }
    let (rec_out, rec) = recconv_forward(x, &block.mixer_cfg, &block.mixer)?;
    let norm_out = channel_affine(&rec_out, &block.norm.scale, &block.norm.shift)?;
    let up_out = conv2d(&norm_out, &block.mixer_up)?;
    let act_out = gelu(&up_out);
    let mixed = conv2d(&act_out, &block.mixer_down)?;
    let y = x.add(&mixed)?;
    Ok((
        y,
        MetaNeXtTrace {
            x: x.clone(),
            rec,
            rec_out,
            norm_out,
            up_out,
            act_out,
        },
    ))
}

pub fn metanext_vjp<T: Float>(
    block: &MetaNeXtBlock<T>,
    trace: &MetaNeXtTrace<T>,
    g_out: &Tensor4<T>,
) -> Result<(Tensor4<T>, MetaNeXtGrads<T>)> {
    let vj_down = conv2d_vjp(&trace.act_out, &block.mixer_down, g_out)?;
    let g_act = gelu_vjp(&trace.up_out, &vj_down.input)?;
    let vj_up = conv2d_vjp(&trace.norm_out, &block.mixer_up, &g_act)?;
    let vj_norm = channel_affine_vjp(&trace.rec_out, &block.norm.scale, &vj_up.input)?;
    let mixer = recconv_vjp(&trace.rec, &block.mixer_cfg, &block.mixer, &vj_norm.input)?;
    let g_x = g_out.add(&mixer.input)?;
    Ok((
        g_x,
        MetaNeXtGrads {
            mixer,
            norm_scale: vj_norm.scale,
            norm_shift: vj_norm.shift,
            mixer_up_w: vj_up.weights,
            mixer_up_b: vj_up.bias.expect("mixer_up carries a bias"),
            mixer_down_w: vj_down.weights,
            mixer_down_b: vj_down.bias.expect("mixer_down carries a bias"),
        },
    ))
}

/// Stride-2 transition: `X_hat = norm(expand(spatial(X)))`, then
/// `Y = X_hat + ChannelMixer(X_hat)`. Halves each spatial side (ceil) and
/// doubles the channel count via the pointwise expansion.
#[derive(Debug, Clone)]
pub struct DownsampleBlock<T = f64> {
    pub spatial: ConvKernel<T>,
    pub expand: ConvKernel<T>,
    pub norm: ChannelAffine<T>,
    pub mixer_up: ConvKernel<T>,
    pub mixer_down: ConvKernel<T>,
}

impl<T: Float> DownsampleBlock<T> {
    /// Stream order: spatial (7x7 depthwise, stride 2), expand (1x1, C to
    /// 2C), norm (identity), mixer_up, mixer_down.
    pub fn seeded(in_channels: usize, expansion: usize, rng: &mut SplitMix64) -> Result<Self> {
        let out_channels = 2 * in_channels;
        let spatial = ConvKernel::seeded(in_channels, in_channels, in_channels, 7, 2, false, rng)?;
        let expand = ConvKernel::seeded(out_channels, in_channels, 1, 1, 1, false, rng)?;
        let hidden = out_channels * expansion;
        let mixer_up = ConvKernel::seeded(hidden, out_channels, 1, 1, 1, true, rng)?;
        let mixer_down = ConvKernel::seeded(out_channels, hidden, 1, 1, 1, true, rng)?;
        Ok(Self {
            spatial,
            expand,
            norm: ChannelAffine::identity(out_channels),
            mixer_up,
            mixer_down,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.spatial.in_channels()
    }
}

#[derive(Debug, Clone)]
pub struct DownsampleTrace<T = f64> {
    pub x: Tensor4<T>,
    pub spatial_out: Tensor4<T>,
    pub expand_out: Tensor4<T>,
    pub xhat: Tensor4<T>,
    pub up_out: Tensor4<T>,
    pub act_out: Tensor4<T>,
}

#[derive(Debug, Clone)]
pub struct DownsampleGrads<T = f64> {
    pub spatial_w: Vec<T>,
    pub expand_w: Vec<T>,
    pub norm_scale: Vec<T>,
    pub norm_shift: Vec<T>,
    pub mixer_up_w: Vec<T>,
    pub mixer_up_b: Vec<T>,
    pub mixer_down_w: Vec<T>,
    pub mixer_down_b: Vec<T>,
}

pub fn downsample_forward<T: Float>(
    x: &Tensor4<T>,
    block: &DownsampleBlock<T>,
) -> Result<Tensor4<T>> {
    downsample_forward_traced(x, block).map(|(y, _)| y)
}

pub fn downsample_forward_traced<T: Float>(
    x: &Tensor4<T>,
    block: &DownsampleBlock<T>,
) -> Result<(Tensor4<T>, DownsampleTrace<T>)> {
    if x.c() != block.in_channels() {
        return Err(Error::ShapeMismatch(format!(
            "downsample block expects {} channels, input has {}",
            block.in_channels(),
            x.c()
        )));
    }
    let spatial_out = conv2d(x, &block.spatial)?;
    let expand_out = conv2d(&spatial_out, &block.expand)?;
    let xhat = channel_affine(&expand_out, &block.norm.scale, &block.norm.shift)?;
    let up_out = conv2d(&xhat, &block.mixer_up)?;
    let act_out = gelu(&up_out);
    let mixed = conv2d(&act_out, &block.mixer_down)?;
    let y = xhat.add(&mixed)?;
    Ok((
        y,
        DownsampleTrace {
            x: x.clone(),
            spatial_out,
            expand_out,
            xhat,
            up_out,
            act_out,
        },
    ))
}

pub fn downsample_vjp<T: Float>(
    block: &DownsampleBlock<T>,
    trace: &DownsampleTrace<T>,
    g_out: &Tensor4<T>,
) -> Result<(Tensor4<T>, DownsampleGrads<T>)> {
    let vj_down = conv2d_vjp(&trace.act_out, &block.mixer_down, g_out)?;
    let g_act = gelu_vjp(&trace.up_out, &vj_down.input)?;
    let vj_up = conv2d_vjp(&trace.xhat, &block.mixer_up, &g_act)?;
    // the shortcut feeds X_hat directly, the mixer path adds its adjoint
    let g_xhat = g_out.add(&vj_up.input)?;
    let vj_norm = channel_affine_vjp(&trace.expand_out, &block.norm.scale, &g_xhat)?;
    let vj_expand = conv2d_vjp(&trace.spatial_out, &block.expand, &vj_norm.input)?;
    let vj_spatial = conv2d_vjp(&trace.x, &block.spatial, &vj_expand.input)?;
    Ok((
        vj_spatial.input,
        DownsampleGrads {
            spatial_w: vj_spatial.weights,
            expand_w: vj_expand.weights,
            norm_scale: vj_norm.scale,
            norm_shift: vj_norm.shift,
            mixer_up_w: vj_up.weights,
            mixer_up_b: vj_up.bias.expect("mixer_up carries a bias"),
            mixer_down_w: vj_down.weights,
            mixer_down_b: vj_down.bias.expect("mixer_down carries a bias"),
        },
    ))
}

/// Two 3x3 stride-2 standard convolutions (3 -> C0/2 -> C0) with a GELU in
/// between; quarters the spatial extent.
#[derive(Debug, Clone)]
pub struct Stem<T = f64> {
    pub conv1: ConvKernel<T>,
    pub conv2: ConvKernel<T>,
}

#[derive(Debug, Clone)]
pub struct StemTrace<T = f64> {
    x: Tensor4<T>,
    conv1_out: Tensor4<T>,
    act_out: Tensor4<T>,
}

impl<T: Float> Stem<T> {
    pub fn seeded(out_channels: usize, rng: &mut SplitMix64) -> Result<Self> {
        let mid = out_channels / 2;
        let conv1 = ConvKernel::seeded(mid, 3, 1, 3, 2, true, rng)?;
        let conv2 = ConvKernel::seeded(out_channels, mid, 1, 3, 2, true, rng)?;
        Ok(Self { conv1, conv2 })
    }

    pub fn forward_traced(&self, x: &Tensor4<T>) -> Result<(Tensor4<T>, StemTrace<T>)> {
        let conv1_out = conv2d(x, &self.conv1)?;
        let act_out = gelu(&conv1_out);
        let y = conv2d(&act_out, &self.conv2)?;
        Ok((
            y,
            StemTrace {
                x: x.clone(),
                conv1_out,
                act_out,
            },
        ))
    }

    fn backward_input(&self, trace: &StemTrace<T>, g_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let vj2 = conv2d_vjp(&trace.act_out, &self.conv2, g_out)?;
        let g_act = gelu_vjp(&trace.conv1_out, &vj2.input)?;
        let vj1 = conv2d_vjp(&trace.x, &self.conv1, &g_act)?;
        Ok(vj1.input)
    }
}

/// One stage: width, block count, mixer kernel and decomposition depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageConfig {
    pub channels: usize,
    pub depth: usize,
    pub kernel: usize,
    pub level: usize,
}

/// Whole-backbone description. The stem width is derived from the first
/// stage; widths must double between consecutive stages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub stages: Vec<StageConfig>,
    pub expansion: usize,
    pub aggregation: Aggregation,
    pub upsample: UpsampleMode,
    pub seed: u64,
}

impl ModelConfig {
    /// Four-stage reference configuration at workstation scale:
    /// widths [16, 32, 64, 128], depths [1, 1, 2, 1], 5x5 kernels,
    /// levels [4, 3, 2, 1], expansion 2.
    pub fn reference(seed: u64) -> Self {
        let levels = [4usize, 3, 2, 1];
        let depths = [1usize, 1, 2, 1];
        let stages = (0..4)
            .map(|s| StageConfig {
                channels: 16 << s,
                depth: depths[s],
                kernel: 5,
                level: levels[s],
            })
            .collect();
        Self {
            stages,
            expansion: 2,
            aggregation: Aggregation::Parallel,
            upsample: UpsampleMode::Bilinear,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::InvalidConfig("model needs at least one stage".into()));
        }
        let c0 = self.stages[0].channels;
        if c0 < 2 || c0 % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "first stage width {c0} must be even (the stem expands 3 -> {c0}/2 -> {c0})"
            )));
        }
        for (i, stage) in self.stages.iter().enumerate() {
            if stage.kernel == 0 || stage.kernel % 2 == 0 {
                return Err(Error::InvalidConfig(format!(
                    "stage {}: kernel {} must be odd",
                    i + 1,
                    stage.kernel
                )));
            }
            if self.aggregation == Aggregation::Recurrent && stage.level == 0 {
                return Err(Error::InvalidConfig(format!(
                    "stage {}: recurrent aggregation requires level >= 1",
                    i + 1
                )));
            }
            if i > 0 && stage.channels != 2 * self.stages[i - 1].channels {
                return Err(Error::InvalidConfig(format!(
                    "stage {}: width {} must double the previous stage's {}",
                    i + 1,
                    stage.channels,
                    self.stages[i - 1].channels
                )));
            }
        }
        if self.expansion == 0 {
            return Err(Error::InvalidConfig("expansion ratio must be at least 1".into()));
        }
        Ok(())
    }

    /// Smallest square input side every stage's decomposition depth admits.
    pub fn min_input_side(&self) -> usize {
        self.stages
            .iter()
            .enumerate()
            .map(|(i, stage)| {
                // stage i (0-based) sees the input divided by 2^(i+2), ceil
                let divisor = 1usize << (i + 2);
                let need = 1usize << stage.level;
                divisor * (need - 1) + 1
            })
            .max()
            .unwrap_or(1)
    }
}

#[derive(Debug, Clone)]
pub struct Stage<T = f64> {
    pub config: StageConfig,
    pub downsample: Option<DownsampleBlock<T>>,
    pub blocks: Vec<MetaNeXtBlock<T>>,
}

#[derive(Debug, Clone)]
pub struct Model<T = f64> {
    pub config: ModelConfig,
    pub stem: Stem<T>,
    pub stages: Vec<Stage<T>>,
}

/// One line of the shape ledger a forward pass reports.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerEntry {
    pub label: String,
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

#[derive(Debug)]
pub struct ModelTrace<T = f64> {
    stem: StemTrace<T>,
    stages: Vec<StageTrace<T>>,
}

#[derive(Debug)]
struct StageTrace<T> {
    downsample: Option<DownsampleTrace<T>>,
    blocks: Vec<MetaNeXtTrace<T>>,
}

/// Deterministic assembly: a single SplitMix64 stream seeded from the config
/// consumes values in a fixed documented order (stem, then stages in order;
/// inside a stage the downsample block precedes its MetaNeXt blocks).
pub fn build_model<T: Float>(config: &ModelConfig) -> Result<Model<T>> {
    config.validate()?;
    let mut rng = SplitMix64::new(config.seed);
    let stem = Stem::seeded(config.stages[0].channels, &mut rng)?;
    let mut stages = Vec::with_capacity(config.stages.len());
    for (i, stage_cfg) in config.stages.iter().enumerate() {
        let downsample = if i > 0 {
            Some(DownsampleBlock::seeded(
                config.stages[i - 1].channels,
                config.expansion,
                &mut rng,
            )?)
        } else {
            None
        };
        let mut blocks = Vec::with_capacity(stage_cfg.depth);
        for _ in 0..stage_cfg.depth {
            blocks.push(MetaNeXtBlock::seeded(
                stage_cfg.channels,
                stage_cfg.kernel,
                stage_cfg.level,
                config.expansion,
                config.aggregation,
                config.upsample,
                &mut rng,
            )?);
        }
        stages.push(Stage {
            config: *stage_cfg,
            downsample,
            blocks,
        });
    }
    Ok(Model {
        config: config.clone(),
        stem,
        stages,
    })
}

pub fn model_forward<T: Float>(
    model: &Model<T>,
    x: &Tensor4<T>,
) -> Result<(Tensor4<T>, Vec<LedgerEntry>)> {
    model_forward_traced(model, x).map(|(y, _, ledger)| (y, ledger))
}

pub fn model_forward_traced<T: Float>(
    model: &Model<T>,
    x: &Tensor4<T>,
) -> Result<(Tensor4<T>, ModelTrace<T>, Vec<LedgerEntry>)> {
    if x.c() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "model input must have 3 channels, got {}",
            x.c()
        )));
    }
    let mut ledger = Vec::with_capacity(model.stages.len() + 1);
    let entry = |label: String, t: &Tensor4<T>| {
        let (n, c, h, w) = t.dims();
        LedgerEntry { label, n, c, h, w }
    };

    let (mut current, stem_trace) = model.stem.forward_traced(x)?;
    ledger.push(entry("stem".into(), &current));

    let mut stage_traces = Vec::with_capacity(model.stages.len());
    for (i, stage) in model.stages.iter().enumerate() {
        let stage_no = i + 1;
        let mut down_trace = None;
        if let Some(block) = &stage.downsample {
            let (next, trace) = downsample_forward_traced(&current, block)?;
            current = next;
            down_trace = Some(trace);
        }
        let need = 1usize << stage.config.level;
        if current.spatial().min_side() < need {
            return Err(Error::InvalidGeometry(format!(
                "stage {stage_no}: feature map {} too small for decomposition level {} \
                 (needs side >= {need}); minimum model input side is {}",
                current.spatial(),
                stage.config.level,
                model.config.min_input_side()
            )));
        }
        let mut block_traces = Vec::with_capacity(stage.blocks.len());
        for block in &stage.blocks {
            let (next, trace) = metanext_forward_traced(&current, block)?;
            current = next;
            block_traces.push(trace);
        }
        ledger.push(entry(format!("stage{stage_no}"), &current));
        stage_traces.push(StageTrace {
            downsample: down_trace,
            blocks: block_traces,
        });
    }
    Ok((
        current,
        ModelTrace {
            stem: stem_trace,
            stages: stage_traces,
        },
        ledger,
    ))
}

/// Input gradient of the whole model; parameter gradients are computed along
/// the way and dropped. This is what gradient-based receptive-field maps use.
pub fn model_backward_input<T: Float>(
    model: &Model<T>,
    trace: &ModelTrace<T>,
    g_out: &Tensor4<T>,
) -> Result<Tensor4<T>> {
    let mut g = g_out.clone();
    for (stage, stage_trace) in model.stages.iter().zip(trace.stages.iter()).rev() {
        for (block, block_trace) in stage.blocks.iter().zip(stage_trace.blocks.iter()).rev() {
            let (g_x, _) = metanext_vjp(block, block_trace, &g)?;
            g = g_x;
        }
        if let (Some(block), Some(down_trace)) = (&stage.downsample, &stage_trace.downsample) {
            let (g_x, _) = downsample_vjp(block, down_trace, &g)?;
            g = g_x;
        }
    }
    model.stem.backward_input(&trace.stem, &g)
}

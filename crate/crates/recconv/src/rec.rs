//! The recursive multi-scale convolution operator.
//!
//! A feature map is decomposed into `level` progressively halved scales by a
//! single shared stride-2 depthwise kernel. Each scale is mixed by a
//! depthwise convolution and folded back upward through an upsample plus
//! element-wise addition, replicating a large receptive field (nominally
//! `k * 2^level`) at small-kernel cost.
//!
//! Two aggregation schemes are supported:
//! - `Parallel`: one distinct mixing kernel per scale plus one at full
//!   resolution, additive carry from the deepest scale upward;
//! - `Recurrent`: a fixed set of four kernels driving
//!   `h = up(hidden * h + input * x_scale)` over the scale sequence, with
//!   `output * h + skip * x` at the end.

use num_traits::Float;

use crate::error::{Error, Result};
use crate::ops::{
    conv2d, conv2d_vjp, resize, resize_vjp, transposed_dwconv, transposed_dwconv_vjp, ConvKernel,
    ResizeMode, ResizeSpec,
};
use crate::rng::SplitMix64;
use crate::tensor::{Shape2, Tensor4};

/// How per-scale features are folded back together.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    Parallel,
    Recurrent,
}

/// How a coarse scale is lifted back to the finer one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpsampleMode {
    Bilinear,
    Nearest,
    TransposedDwConv,
}

impl UpsampleMode {
    fn resize_mode(self) -> Option<ResizeMode> {
        match self {
            UpsampleMode::Bilinear => Some(ResizeMode::Bilinear),
            UpsampleMode::Nearest => Some(ResizeMode::Nearest),
            UpsampleMode::TransposedDwConv => None,
        }
    }
}

/// Static description of one recursive mixer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecConvConfig {
    pub channels: usize,
    pub kernel: usize,
    pub level: usize,
    pub aggregation: Aggregation,
    pub upsample: UpsampleMode,
}

impl RecConvConfig {
    /// Parallel aggregation with bilinear upsampling, the default variant.
    pub fn new(channels: usize, kernel: usize, level: usize) -> Self {
        Self {
            channels,
            kernel,
            level,
            aggregation: Aggregation::Parallel,
            upsample: UpsampleMode::Bilinear,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::InvalidConfig("channel count must be at least 1".into()));
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "kernel side {} must be odd and positive",
                self.kernel
            )));
        }
        if self.aggregation == Aggregation::Recurrent && self.level == 0 {
            return Err(Error::InvalidConfig(
                "recurrent aggregation requires at least one decomposition level".into(),
            ));
        }
        Ok(())
    }

    /// Nominal effective receptive field, `kernel * 2^level`.
    pub fn nominal_erf(&self) -> usize {
        self.kernel << self.level
    }

    /// Smallest input side the decomposition depth admits.
    pub fn min_input_side(&self) -> usize {
        1 << self.level
    }

    fn check_input<T: Float>(&self, x: &Tensor4<T>) -> Result<()> {
        if x.c() != self.channels {
            return Err(Error::ShapeMismatch(format!(
                "input has {} channels, config expects {}",
                x.c(),
                self.channels
            )));
        }
        let need = self.min_input_side();
        if x.spatial().min_side() < need {
            return Err(Error::InvalidGeometry(format!(
                "input {} too small for {} decomposition levels: a scale would collapse below 1x1 \
                 (minimum side {need})",
                x.spatial(),
                self.level
            )));
        }
        Ok(())
    }
}

/// Scale-mixing kernels, one flavour per aggregation scheme.
#[derive(Debug, Clone)]
pub enum AggregationKernels<T = f64> {
    /// `level + 1` distinct depthwise kernels; index 0 mixes the deepest
    /// scale, index `level` the full-resolution pass.
    Parallel(Vec<ConvKernel<T>>),
    /// Fixed recurrence kernels: `hidden` on the carried state, `input` on
    /// the current scale, `output` and `skip` forming the final combination.
    Recurrent {
        hidden: ConvKernel<T>,
        input: ConvKernel<T>,
        output: ConvKernel<T>,
        skip: ConvKernel<T>,
    },
}

/// Trainable state of one recursive mixer: the shared downsampler, the
/// aggregation kernels, and (for the transposed-convolution variant) one
/// upsample kernel per level.
#[derive(Debug, Clone)]
pub struct RecConvWeights<T = f64> {
    pub down: ConvKernel<T>,
    pub aggregation: AggregationKernels<T>,
    pub upsample: Vec<ConvKernel<T>>,
}

impl<T: Float> RecConvWeights<T> {
    /// Fresh weights drawn from a SplitMix64 stream. Consumption order is
    /// fixed and documented: shared downsampler first, then the aggregation
    /// kernels (parallel: deepest to full resolution; recurrent: hidden,
    /// input, output, skip), then upsample kernels from the deepest level up.
    pub fn seeded(cfg: &RecConvConfig, rng: &mut SplitMix64) -> Result<Self> {
        cfg.validate()?;
        let dw = |stride: usize, rng: &mut SplitMix64| {
            ConvKernel::seeded(cfg.channels, cfg.channels, cfg.channels, cfg.kernel, stride, false, rng)
        };
        let down = dw(2, rng)?;
        let aggregation = match cfg.aggregation {
            Aggregation::Parallel => {
                let mut kernels = Vec::with_capacity(cfg.level + 1);
                for _ in 0..=cfg.level {
                    kernels.push(dw(1, rng)?);
                }
                AggregationKernels::Parallel(kernels)
            }
            Aggregation::Recurrent => AggregationKernels::Recurrent {
                hidden: dw(1, rng)?,
                input: dw(1, rng)?,
                output: dw(1, rng)?,
                skip: dw(1, rng)?,
            },
        };
        let upsample = match cfg.upsample {
            UpsampleMode::TransposedDwConv => {
                let mut kernels = Vec::with_capacity(cfg.level);
                for _ in 0..cfg.level {
                    kernels.push(dw(2, rng)?);
                }
                kernels
            }
            _ => Vec::new(),
        };
        let w = Self {
            down,
            aggregation,
            upsample,
        };
        w.validate(cfg)?;
        Ok(w)
    }

    /// Every weight set to the same value. With a positive value this gives
    /// the cancellation-free operator the receptive-field oracle relies on.
    pub fn constant(cfg: &RecConvConfig, value: T) -> Result<Self> {
        cfg.validate()?;
        let dw = |stride: usize| {
            ConvKernel::constant(cfg.channels, cfg.channels, cfg.channels, cfg.kernel, stride, value)
        };
        let down = dw(2)?;
        let aggregation = match cfg.aggregation {
            Aggregation::Parallel => {
                AggregationKernels::Parallel((0..=cfg.level).map(|_| dw(1)).collect::<Result<_>>()?)
            }
            Aggregation::Recurrent => AggregationKernels::Recurrent {
                hidden: dw(1)?,
                input: dw(1)?,
                output: dw(1)?,
                skip: dw(1)?,
            },
        };
        let upsample = match cfg.upsample {
            UpsampleMode::TransposedDwConv => (0..cfg.level).map(|_| dw(2)).collect::<Result<_>>()?,
            _ => Vec::new(),
        };
        Ok(Self {
            down,
            aggregation,
            upsample,
        })
    }

    pub fn validate(&self, cfg: &RecConvConfig) -> Result<()> {
        cfg.validate()?;
        let check = |kern: &ConvKernel<T>, stride: usize, what: &str| -> Result<()> {
            if !kern.is_depthwise() || kern.in_channels() != cfg.channels {
                return Err(Error::InvalidConfig(format!(
                    "{what} kernel must be depthwise over {} channels",
                    cfg.channels
                )));
            }
            if kern.k() != cfg.kernel {
                return Err(Error::InvalidConfig(format!(
                    "{what} kernel side {} does not match config kernel {}",
                    kern.k(),
                    cfg.kernel
                )));
            }
            if kern.stride() != stride {
                return Err(Error::InvalidConfig(format!(
                    "{what} kernel must have stride {stride}"
                )));
            }
            if kern.bias().is_some() {
                return Err(Error::InvalidConfig(format!(
                    "{what} kernel must not carry a bias"
                )));
            }
            Ok(())
        };
        check(&self.down, 2, "shared downsample")?;
        match (&self.aggregation, cfg.aggregation) {
            (AggregationKernels::Parallel(kernels), Aggregation::Parallel) => {
                if kernels.len() != cfg.level + 1 {
                    return Err(Error::InvalidConfig(format!(
                        "parallel aggregation needs {} scale kernels, got {}",
                        cfg.level + 1,
                        kernels.len()
                    )));
                }
                for (i, kern) in kernels.iter().enumerate() {
                    check(kern, 1, &format!("scale-{i}"))?;
                }
            }
            (
                AggregationKernels::Recurrent {
                    hidden,
                    input,
                    output,
                    skip,
                },
                Aggregation::Recurrent,
            ) => {
                check(hidden, 1, "hidden")?;
                check(input, 1, "input")?;
                check(output, 1, "output")?;
                check(skip, 1, "skip")?;
            }
            _ => {
                return Err(Error::InvalidConfig(
                    "aggregation kernels do not match the configured aggregation mode".into(),
                ))
            }
        }
        match cfg.upsample {
            UpsampleMode::TransposedDwConv => {
                if self.upsample.len() != cfg.level {
                    return Err(Error::InvalidConfig(format!(
                        "transposed upsampling needs {} kernels, got {}",
                        cfg.level,
                        self.upsample.len()
                    )));
                }
                for (i, kern) in self.upsample.iter().enumerate() {
                    check(kern, 2, &format!("upsample-{i}"))?;
                }
            }
            _ => {
                if !self.upsample.is_empty() {
                    return Err(Error::InvalidConfig(
                        "upsample kernels supplied but the upsample mode is interpolation".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    fn up_kernel(&self, step: usize) -> Option<&ConvKernel<T>> {
        self.upsample.get(step)
    }

    fn parallel_kernels(&self) -> Result<&[ConvKernel<T>]> {
        match &self.aggregation {
            AggregationKernels::Parallel(kernels) => Ok(kernels),
            _ => Err(Error::Contract(
                "parallel aggregation kernels requested from recurrent weights".into(),
            )),
        }
    }
}

/// Closed-form weight count, biases and upsample kernels excluded: the shared
/// downsampler is always allocated, so parallel mode holds `level + 2`
/// kernels of `k^2 * channels` weights each and recurrent mode holds five
/// regardless of depth.
pub fn recconv_param_count(cfg: &RecConvConfig) -> usize {
    let per_kernel = cfg.kernel * cfg.kernel * cfg.channels;
    match cfg.aggregation {
        Aggregation::Parallel => (cfg.level + 2) * per_kernel,
        Aggregation::Recurrent => 5 * per_kernel,
    }
}

fn apply_upsample<T: Float>(
    x: &Tensor4<T>,
    target: Shape2,
    mode: UpsampleMode,
    kern: Option<&ConvKernel<T>>,
) -> Result<Tensor4<T>> {
    match mode.resize_mode() {
        Some(rm) => resize(x, &ResizeSpec { mode: rm, target }),
        None => {
            let kern = kern.ok_or_else(|| {
                Error::Contract("transposed upsampling requested without a kernel".into())
            })?;
            transposed_dwconv(x, kern, target)
        }
    }
}

/// Returns the gradient flowing into the upsample input plus, in transposed
/// mode, the gradient of the upsample kernel.
fn upsample_vjp<T: Float>(
    up_input: &Tensor4<T>,
    target: Shape2,
    mode: UpsampleMode,
    kern: Option<&ConvKernel<T>>,
    g_out: &Tensor4<T>,
) -> Result<(Tensor4<T>, Option<Vec<T>>)> {
    match mode.resize_mode() {
        Some(rm) => {
            let spec = ResizeSpec { mode: rm, target };
            Ok((resize_vjp(up_input.spatial(), &spec, g_out)?, None))
        }
        None => {
            let kern = kern.ok_or_else(|| {
                Error::Contract("transposed upsampling requested without a kernel".into())
            })?;
            let vj = transposed_dwconv_vjp(up_input, kern, target, g_out)?;
            Ok((vj.input, Some(vj.weights)))
        }
    }
}

/// Everything the backward pass needs to replay one forward evaluation.
#[derive(Debug, Clone)]
pub struct RecConvTrace<T = f64> {
    cfg: RecConvConfig,
    /// Scale pyramid: `features[0]` is the input, `features[d]` the result of
    /// `d` shared downsamples.
    features: Vec<Tensor4<T>>,
    detail: TraceDetail<T>,
}

#[derive(Debug, Clone)]
enum TraceDetail<T> {
    Parallel {
        /// Input to the scale kernel at each upward step (feature + carry).
        sums: Vec<Tensor4<T>>,
        /// Output of the scale kernel, i.e. the upsample input, per step.
        up_inputs: Vec<Tensor4<T>>,
        /// Input to the full-resolution kernel.
        final_sum: Tensor4<T>,
    },
    Recurrent {
        /// Carried state after the upsample of each step.
        h_states: Vec<Tensor4<T>>,
        /// Pre-upsample combination at each step.
        up_inputs: Vec<Tensor4<T>>,
    },
}

impl<T: Float> RecConvTrace<T> {
    pub fn input_dims(&self) -> (usize, usize, usize, usize) {
        self.features[0].dims()
    }
}

/// Gradients of one recursive mixer, mirroring [`RecConvWeights`].
#[derive(Debug, Clone)]
pub struct RecConvGrads<T = f64> {
    pub input: Tensor4<T>,
    pub down: Vec<T>,
    pub aggregation: AggregationGrads<T>,
    pub upsample: Vec<Vec<T>>,
}

#[derive(Debug, Clone)]
pub enum AggregationGrads<T = f64> {
    Parallel(Vec<Vec<T>>),
    Recurrent {
        hidden: Vec<T>,
        input: Vec<T>,
        output: Vec<T>,
        skip: Vec<T>,
    },
}

impl<T: Float> AggregationGrads<T> {
    /// Per-scale gradients of parallel weights; panics on recurrent grads.
    pub fn unwrap_parallel(self) -> Vec<Vec<T>> {
        match self {
            AggregationGrads::Parallel(g) => g,
            _ => panic!("expected parallel aggregation gradients"),
        }
    }
}

fn acc_vec<T: Float>(acc: &mut [T], add: &[T]) {
    for (a, &b) in acc.iter_mut().zip(add.iter()) {
        *a = *a + b;
    }
}

fn acc_feature<T: Float>(slot: &mut Option<Tensor4<T>>, add: &Tensor4<T>) -> Result<()> {
    match slot {
        Some(existing) => existing.add_assign(add)?,
        None => *slot = Some(add.clone()),
    }
    Ok(())
}

/// Forward evaluation. Returns the output (same shape as the input) and the
/// activation record consumed by [`recconv_vjp`].
pub fn recconv_forward<T: Float>(
    x: &Tensor4<T>,
    cfg: &RecConvConfig,
    w: &RecConvWeights<T>,
) -> Result<(Tensor4<T>, RecConvTrace<T>)> {
    w.validate(cfg)?;
    cfg.check_input(x)?;

    let mut features = Vec::with_capacity(cfg.level + 1);
    features.push(x.clone());
    for _ in 0..cfg.level {
        let next = conv2d(features.last().unwrap(), &w.down)?;
        features.push(next);
    }

    match cfg.aggregation {
        Aggregation::Parallel => {
            let kernels = w.parallel_kernels()?;
            let mut sums = Vec::with_capacity(cfg.level);
            let mut up_inputs = Vec::with_capacity(cfg.level);
            let mut carry: Option<Tensor4<T>> = None;
            for step in 0..cfg.level {
                let depth = cfg.level - step;
                let sum = match &carry {
                    None => features[depth].clone(),
                    Some(c) => features[depth].add(c)?,
                };
                let mixed = conv2d(&sum, &kernels[step])?;
                let target = features[depth - 1].spatial();
                let lifted = apply_upsample(&mixed, target, cfg.upsample, w.up_kernel(step))?;
                sums.push(sum);
                up_inputs.push(mixed);
                carry = Some(lifted);
            }
            let final_sum = match carry {
                None => x.clone(),
                Some(c) => x.add(&c)?,
            };
            let y = conv2d(&final_sum, &kernels[cfg.level])?;
            Ok((
                y,
                RecConvTrace {
                    cfg: *cfg,
                    features,
                    detail: TraceDetail::Parallel {
                        sums,
                        up_inputs,
                        final_sum,
                    },
                },
            ))
        }
        Aggregation::Recurrent => {
            let AggregationKernels::Recurrent {
                hidden,
                input,
                output,
                skip,
            } = &w.aggregation
            else {
                unreachable!("validated above");
            };
            let mut h: Option<Tensor4<T>> = None;
            let mut h_states = Vec::with_capacity(cfg.level);
            let mut up_inputs = Vec::with_capacity(cfg.level);
            for step in 0..cfg.level {
                let depth = cfg.level - step;
                let pre = match &h {
                    None => conv2d(&features[depth], input)?,
                    Some(prev) => conv2d(prev, hidden)?.add(&conv2d(&features[depth], input)?)?,
                };
                let target = features[depth - 1].spatial();
                let lifted = apply_upsample(&pre, target, cfg.upsample, w.up_kernel(step))?;
                up_inputs.push(pre);
                h_states.push(lifted.clone());
                h = Some(lifted);
            }
            let h_final = h.expect("recurrent aggregation validated level >= 1");
            let y = conv2d(&h_final, output)?.add(&conv2d(x, skip)?)?;
            Ok((
                y,
                RecConvTrace {
                    cfg: *cfg,
                    features,
                    detail: TraceDetail::Recurrent {
                        h_states,
                        up_inputs,
                    },
                },
            ))
        }
    }
}

/// Exact adjoint of the composite map recorded in `trace`. The gradient of
/// the shared downsampler accumulates contributions from every application.
pub fn recconv_vjp<T: Float>(
    trace: &RecConvTrace<T>,
    cfg: &RecConvConfig,
    w: &RecConvWeights<T>,
    g_out: &Tensor4<T>,
) -> Result<RecConvGrads<T>> {
    if trace.cfg != *cfg {
        return Err(Error::Contract(
            "trace was recorded under a different configuration".into(),
        ));
    }
    w.validate(cfg)?;
    if g_out.dims() != trace.input_dims() {
        return Err(Error::ShapeMismatch(format!(
            "cotangent shape {:?} does not match traced input shape {:?}",
            g_out.dims(),
            trace.input_dims()
        )));
    }

    let features = &trace.features;
    let mut g_features: Vec<Option<Tensor4<T>>> = vec![None; cfg.level + 1];
    let mut g_up: Vec<Vec<T>> = w.upsample.iter().map(|k| vec![T::zero(); k.weights().len()]).collect();

    let aggregation = match (&trace.detail, &w.aggregation) {
        (
            TraceDetail::Parallel {
                sums,
                up_inputs,
                final_sum,
            },
            AggregationKernels::Parallel(kernels),
        ) => {
            let mut g_levels: Vec<Vec<T>> = kernels
                .iter()
                .map(|k| vec![T::zero(); k.weights().len()])
                .collect();
            let vj_final = conv2d_vjp(final_sum, &kernels[cfg.level], g_out)?;
            g_levels[cfg.level] = vj_final.weights;
            acc_feature(&mut g_features[0], &vj_final.input)?;
            let mut g_carry = vj_final.input;
            for step in (0..cfg.level).rev() {
                let depth = cfg.level - step;
                let target = features[depth - 1].spatial();
                let (g_mixed, g_upk) = upsample_vjp(
                    &up_inputs[step],
                    target,
                    cfg.upsample,
                    w.up_kernel(step),
                    &g_carry,
                )?;
                if let Some(gu) = g_upk {
                    acc_vec(&mut g_up[step], &gu);
                }
                let vj = conv2d_vjp(&sums[step], &kernels[step], &g_mixed)?;
                g_levels[step] = vj.weights;
                acc_feature(&mut g_features[depth], &vj.input)?;
                g_carry = vj.input;
            }
            AggregationGrads::Parallel(g_levels)
        }
        (
            TraceDetail::Recurrent {
                h_states,
                up_inputs,
            },
            AggregationKernels::Recurrent {
                hidden,
                input,
                output,
                skip,
            },
        ) => {
            let vj_out = conv2d_vjp(&h_states[cfg.level - 1], output, g_out)?;
            let vj_skip = conv2d_vjp(&features[0], skip, g_out)?;
            acc_feature(&mut g_features[0], &vj_skip.input)?;
            let mut g_hidden = vec![T::zero(); hidden.weights().len()];
            let mut g_input = vec![T::zero(); input.weights().len()];
            let mut g_h = vj_out.input;
            for step in (0..cfg.level).rev() {
                let depth = cfg.level - step;
                let target = features[depth - 1].spatial();
                let (g_pre, g_upk) = upsample_vjp(
                    &up_inputs[step],
                    target,
                    cfg.upsample,
                    w.up_kernel(step),
                    &g_h,
                )?;
                if let Some(gu) = g_upk {
                    acc_vec(&mut g_up[step], &gu);
                }
                let vj_b = conv2d_vjp(&features[depth], input, &g_pre)?;
                acc_vec(&mut g_input, &vj_b.weights);
                acc_feature(&mut g_features[depth], &vj_b.input)?;
                if step > 0 {
                    let vj_a = conv2d_vjp(&h_states[step - 1], hidden, &g_pre)?;
                    acc_vec(&mut g_hidden, &vj_a.weights);
                    g_h = vj_a.input;
                }
            }
            AggregationGrads::Recurrent {
                hidden: g_hidden,
                input: g_input,
                output: vj_out.weights,
                skip: vj_skip.weights,
            }
        }
        _ => {
            return Err(Error::Contract(
                "trace aggregation does not match the supplied weights".into(),
            ))
        }
    };

    // Downsample chain: every scale feeds both its upward step (already
    // accumulated) and the next deeper feature.
    let mut g_down = vec![T::zero(); w.down.weights().len()];
    for depth in (1..=cfg.level).rev() {
        let gf = g_features[depth]
            .take()
            .ok_or_else(|| Error::Contract(format!("scale {depth} received no gradient")))?;
        let vj = conv2d_vjp(&features[depth - 1], &w.down, &gf)?;
        acc_vec(&mut g_down, &vj.weights);
        acc_feature(&mut g_features[depth - 1], &vj.input)?;
    }
    let g_input = g_features[0]
        .take()
        .ok_or_else(|| Error::Contract("input received no gradient".into()))?;

    Ok(RecConvGrads {
        input: g_input,
        down: g_down,
        aggregation,
        upsample: g_up,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(channels: usize, kernel: usize, level: usize) -> RecConvConfig {
        RecConvConfig::new(channels, kernel, level)
    }

    #[test]
    fn level_zero_is_a_plain_depthwise_conv() {
        let cfg = cfg(3, 5, 0);
        let mut rng = SplitMix64::new(23);
        let w = RecConvWeights::seeded(&cfg, &mut rng).unwrap();
        let x: Tensor4 = Tensor4::random(2, 3, 9, 9, -1.0, 1.0, &mut rng).unwrap();
        let (y, _) = recconv_forward(&x, &cfg, &w).unwrap();
        let kernels = w.parallel_kernels().unwrap();
        let plain = conv2d(&x, &kernels[0]).unwrap();
        // bit-identical: the recursion never runs
        assert!(y
            .data()
            .iter()
            .zip(plain.data())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn level_zero_vjp_equals_conv_vjp() {
        let cfg = cfg(2, 3, 0);
        let mut rng = SplitMix64::new(29);
        let w = RecConvWeights::seeded(&cfg, &mut rng).unwrap();
        let x: Tensor4 = Tensor4::random(1, 2, 6, 6, -1.0, 1.0, &mut rng).unwrap();
        let g: Tensor4 = Tensor4::random(1, 2, 6, 6, -1.0, 1.0, &mut rng).unwrap();
        let (_, trace) = recconv_forward(&x, &cfg, &w).unwrap();
        let grads = recconv_vjp(&trace, &cfg, &w, &g).unwrap();
        let kernels = w.parallel_kernels().unwrap();
        let plain = conv2d_vjp(&x, &kernels[0], &g).unwrap();
        assert_eq!(grads.input, plain.input);
        assert_eq!(grads.aggregation.unwrap_parallel()[0], plain.weights);
        assert!(grads.down.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn nominal_erf_schedule() {
        assert_eq!(cfg(8, 3, 4).nominal_erf(), 48);
        assert_eq!(cfg(8, 3, 3).nominal_erf(), 24);
        assert_eq!(cfg(8, 3, 2).nominal_erf(), 12);
        assert_eq!(cfg(8, 3, 1).nominal_erf(), 6);
    }

    #[test]
    fn param_count_examples() {
        assert_eq!(recconv_param_count(&cfg(8, 5, 1)), 600);
        assert_eq!(recconv_param_count(&cfg(16, 3, 4)), 864);
        for level in 1..=3 {
            let mut c = cfg(4, 7, level);
            c.aggregation = Aggregation::Recurrent;
            assert_eq!(recconv_param_count(&c), 5 * 49 * 4);
        }
    }

    #[test]
    fn measured_storage_matches_param_count() {
        let mut rng = SplitMix64::new(31);
        for &k in &[3usize, 5, 7] {
            for level in 0..=4 {
                for &c in &[8usize, 16] {
                    let cfg = cfg(c, k, level);
                    let w: RecConvWeights = RecConvWeights::seeded(&cfg, &mut rng).unwrap();
                    let mut measured = w.down.weights().len();
                    if let AggregationKernels::Parallel(ks) = &w.aggregation {
                        measured += ks.iter().map(|k| k.weights().len()).sum::<usize>();
                    }
                    assert_eq!(measured, recconv_param_count(&cfg), "k={k} l={level} c={c}");
                }
            }
        }
    }

    #[test]
    fn shape_preserved_on_odd_sizes() {
        let mut rng = SplitMix64::new(37);
        for &(h, w_) in &[(37usize, 53usize), (16, 16), (9, 24)] {
            for level in 0..=3 {
                let cfg = cfg(2, 3, level);
                let w = RecConvWeights::seeded(&cfg, &mut rng).unwrap();
                let x: Tensor4 = Tensor4::random(1, 2, h, w_, -1.0, 1.0, &mut rng).unwrap();
                let (y, _) = recconv_forward(&x, &cfg, &w).unwrap();
                assert_eq!(y.dims(), x.dims(), "h={h} w={w_} level={level}");
            }
        }
    }

    #[test]
    fn input_smaller_than_depth_is_rejected() {
        let cfg = cfg(1, 3, 4);
        let mut rng = SplitMix64::new(41);
        let w = RecConvWeights::seeded(&cfg, &mut rng).unwrap();
        let x: Tensor4 = Tensor4::zeros(1, 1, 8, 8).unwrap();
        assert!(matches!(
            recconv_forward(&x, &cfg, &w),
            Err(Error::InvalidGeometry(_))
        ));
        let x: Tensor4 = Tensor4::zeros(1, 1, 16, 16).unwrap();
        assert!(recconv_forward(&x, &cfg, &w).is_ok());
    }

    #[test]
    fn recurrent_requires_a_level() {
        let mut c = cfg(2, 3, 0);
        c.aggregation = Aggregation::Recurrent;
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn recurrent_forward_shape_and_distinctness() {
        let mut rng = SplitMix64::new(43);
        let mut rc = cfg(2, 3, 2);
        rc.aggregation = Aggregation::Recurrent;
        let wr = RecConvWeights::seeded(&rc, &mut rng).unwrap();
        let x: Tensor4 = Tensor4::random(1, 2, 12, 12, -1.0, 1.0, &mut rng).unwrap();
        let (yr, _) = recconv_forward(&x, &rc, &wr).unwrap();
        assert_eq!(yr.dims(), x.dims());

        let pc = cfg(2, 3, 2);
        let wp = RecConvWeights::seeded(&pc, &mut rng).unwrap();
        let (yp, _) = recconv_forward(&x, &pc, &wp).unwrap();
        assert!(yr.max_abs_diff(&yp).unwrap() > 0.0);
    }

    #[test]
    fn upsample_modes_agree_on_constant_fields() {
        // 1x1 kernels have no padding halo, so a constant input stays
        // spatially constant at every intermediate, and both interpolations
        // preserve constants exactly
        let bilinear_cfg = cfg(2, 1, 2);
        let mut nearest_cfg = bilinear_cfg;
        nearest_cfg.upsample = UpsampleMode::Nearest;
        let w = RecConvWeights::constant(&bilinear_cfg, 0.25).unwrap();
        let x: Tensor4 = Tensor4::full(1, 2, 13, 17, 0.5).unwrap();
        let (yb, _) = recconv_forward(&x, &bilinear_cfg, &w).unwrap();
        let (yn, _) = recconv_forward(&x, &nearest_cfg, &w).unwrap();
        assert_eq!(yb.max_abs_diff(&yn).unwrap(), 0.0);
    }

    #[test]
    fn vjp_zero_cotangent_gives_zero_gradients() {
        let cfg = cfg(2, 3, 2);
        let mut rng = SplitMix64::new(47);
        let w = RecConvWeights::seeded(&cfg, &mut rng).unwrap();
        let x: Tensor4 = Tensor4::random(1, 2, 8, 8, -1.0, 1.0, &mut rng).unwrap();
        let (_, trace) = recconv_forward(&x, &cfg, &w).unwrap();
        let zero = Tensor4::zeros(1, 2, 8, 8).unwrap();
        let grads = recconv_vjp(&trace, &cfg, &w, &zero).unwrap();
        assert!(grads.input.data().iter().all(|&v| v == 0.0));
        assert!(grads.down.iter().all(|&v| v == 0.0));
        for g in grads.aggregation.unwrap_parallel() {
            assert!(g.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn vjp_rejects_mismatched_config() {
        let cfg_a = cfg(2, 3, 1);
        let mut rng = SplitMix64::new(53);
        let w = RecConvWeights::seeded(&cfg_a, &mut rng).unwrap();
        let x: Tensor4 = Tensor4::random(1, 2, 8, 8, -1.0, 1.0, &mut rng).unwrap();
        let (_, trace) = recconv_forward(&x, &cfg_a, &w).unwrap();
        let mut other = cfg_a;
        other.upsample = UpsampleMode::Nearest;
        let g = Tensor4::zeros(1, 2, 8, 8).unwrap();
        assert!(matches!(
            recconv_vjp(&trace, &other, &w, &g),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn transposed_upsample_round_trips_shapes() {
        let mut c = cfg(2, 3, 2);
        c.upsample = UpsampleMode::TransposedDwConv;
        let mut rng = SplitMix64::new(59);
        let w = RecConvWeights::seeded(&c, &mut rng).unwrap();
        assert_eq!(w.upsample.len(), 2);
        let x: Tensor4 = Tensor4::random(1, 2, 11, 14, -1.0, 1.0, &mut rng).unwrap();
        let (y, trace) = recconv_forward(&x, &c, &w).unwrap();
        assert_eq!(y.dims(), x.dims());
        let g: Tensor4 = Tensor4::random(1, 2, 11, 14, -1.0, 1.0, &mut rng).unwrap();
        let grads = recconv_vjp(&trace, &c, &w, &g).unwrap();
        assert_eq!(grads.upsample.len(), 2);
        assert!(grads.upsample.iter().all(|g| g.iter().any(|&v| v != 0.0)));
    }
}
